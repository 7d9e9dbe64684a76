//! Dynamic time warping, DTW barycenter averaging, and the selection of
//! confidently classified epochs to average.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpResult {
    pub cost: f64,
    /// From (0, 0) to (n−1, m−1).
    pub path: Vec<(usize, usize)>,
}

/// Full DTW between channel-major sequences `a` (C×n) and `b` (C×m) with
/// squared-Euclidean local cost. Backtracking prefers the diagonal step,
/// then (1, 0), then (0, 1).
pub fn dtw<T: Copy + Into<f64>>(a: &[T], b: &[T], channels: usize) -> Result<WarpResult> {
    if channels == 0 || a.len() % channels != 0 || b.len() % channels != 0 {
        return Err(Error::Shape(format!(
            "sequences of {} and {} values do not split into {channels} channels",
            a.len(),
            b.len()
        )));
    }
    let (n, m) = (a.len() / channels, b.len() / channels);
    if n == 0 || m == 0 {
        return Err(Error::Shape("dtw needs non-empty sequences".into()));
    }
    let d = cost_matrix(a, b, channels, n, m);
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        (i, j) = if i == 0 {
            (0, j - 1)
        } else if j == 0 {
            (i - 1, 0)
        } else {
            let (dg, up, left) = (d[(i - 1) * m + j - 1], d[(i - 1) * m + j], d[i * m + j - 1]);
            if dg <= up && dg <= left {
                (i - 1, j - 1)
            } else if up <= left {
                (i - 1, j)
            } else {
                (i, j - 1)
            }
        };
        path.push((i, j));
    }
    path.reverse();
    Ok(WarpResult { cost: d[n * m - 1], path })
}

/// DTW cost only; same recursion as [`dtw`].
pub fn dtw_cost<T: Copy + Into<f64>>(a: &[T], b: &[T], channels: usize) -> Result<f64> {
    dtw(a, b, channels).map(|w| w.cost)
}

fn cost_matrix<T: Copy + Into<f64>>(a: &[T], b: &[T], channels: usize, n: usize, m: usize) -> Vec<f64> {
    let local = |i: usize, j: usize| -> f64 {
        (0..channels)
            .map(|c| {
                let d = a[c * n + i].into() - b[c * m + j].into();
                d * d
            })
            .sum()
    };
    let mut d = vec![0.0f64; n * m];
    for i in 0..n {
        for j in 0..m {
            let best = match (i, j) {
                (0, 0) => 0.0,
                (0, _) => d[j - 1],
                (_, 0) => d[(i - 1) * m],
                _ => d[(i - 1) * m + j - 1].min(d[(i - 1) * m + j]).min(d[i * m + j - 1]),
            };
            d[i * m + j] = best + local(i, j);
        }
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbaOptions {
    pub iterations: usize,
    /// When set and the set is larger, the medoid is searched among this many
    /// seeded candidates, each scored against this many seeded references.
    pub medoid_sample: Option<usize>,
    pub seed: u64,
}

impl Default for DbaOptions {
    fn default() -> Self {
        DbaOptions { iterations: 10, medoid_sample: None, seed: 0 }
    }
}

/// Relative inertia improvement below which iteration stops.
pub const DBA_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DbaResult {
    /// Channel-major, same shape as the inputs.
    pub average: Vec<f32>,
    /// Index of the medoid used as the starting point.
    pub medoid: usize,
    /// Σ DTW cost to the average: the medoid first, then one entry per update.
    pub inertia: Vec<f64>,
}

/// DTW barycenter averaging of equally shaped channel-major sequences,
/// started from the medoid.
pub fn dba_average(seqs: &[&[f32]], channels: usize, opts: &DbaOptions) -> Result<DbaResult> {
    let Some(first) = seqs.first() else {
        return Err(Error::Spec("dba needs at least one sequence".into()));
    };
    if seqs.iter().any(|s| s.len() != first.len()) || first.is_empty() || first.len() % channels != 0 {
        return Err(Error::Shape("dba sequences must share one C×n shape".into()));
    }
    let n = first.len() / channels;
    let medoid = medoid_index(seqs, channels, opts)?;
    let mut avg: Vec<f32> = seqs[medoid].to_vec();
    let mut inertia = vec![total_cost(&avg, seqs, channels)?];
    let mut best = (inertia[0], avg.clone());
    for _ in 0..opts.iterations {
        let mut sum = vec![0.0f64; channels * n];
        let mut count = vec![0u32; n];
        for s in seqs {
            for (i, j) in dtw(&avg, s, channels)?.path {
                count[i] += 1;
                for c in 0..channels {
                    sum[c * n + i] += s[c * n + j] as f64;
                }
            }
        }
        for c in 0..channels {
            for i in 0..n {
                avg[c * n + i] = (sum[c * n + i] / count[i] as f64) as f32;
            }
        }
        let cur = total_cost(&avg, seqs, channels)?;
        let prev = *inertia.last().unwrap();
        inertia.push(cur);
        if cur < best.0 {
            best = (cur, avg.clone());
        }
        if prev <= 0.0 || (prev - cur) / prev < DBA_TOLERANCE {
            break;
        }
    }
    Ok(DbaResult { average: best.1, medoid, inertia })
}

fn total_cost(avg: &[f32], seqs: &[&[f32]], channels: usize) -> Result<f64> {
    let mut t = 0.0;
    for s in seqs {
        t += dtw_cost(avg, s, channels)?;
    }
    Ok(t)
}

/// Sequence with the least total DTW cost to the others (first on ties).
fn medoid_index(seqs: &[&[f32]], channels: usize, opts: &DbaOptions) -> Result<usize> {
    let k = seqs.len();
    let (candidates, refs): (Vec<usize>, Vec<usize>) = match opts.medoid_sample {
        Some(s) if s < k => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(opts.seed, &[0x6d65646f]));
            let mut c = rand::seq::index::sample(&mut rng, k, s).into_vec();
            let mut r = rand::seq::index::sample(&mut rng, k, s).into_vec();
            c.sort_unstable();
            r.sort_unstable();
            (c, r)
        }
        _ => ((0..k).collect(), (0..k).collect()),
    };
    let mut best = (f64::INFINITY, candidates[0]);
    for &i in &candidates {
        let mut t = 0.0;
        for &j in &refs {
            if i != j {
                t += dtw_cost(seqs[i], seqs[j], channels)?;
            }
        }
        if t < best.0 {
            best = (t, i);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeSelection {
    pub min_posterior: f64,
    pub max_epochs_per_test: usize,
    pub target_count: usize,
    pub seed: u64,
}

impl Default for RepresentativeSelection {
    fn default() -> Self {
        RepresentativeSelection { min_posterior: 0.85, max_epochs_per_test: 40, target_count: 2000, seed: 0 }
    }
}

/// Posterior row of one epoch with the provenance needed for selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochPosterior {
    pub record: usize,
    pub test_id: String,
    pub true_label: usize,
    pub posteriors: Vec<f64>,
}

/// Records of correctly classified `class` epochs with posterior above the
/// threshold, at most `max_epochs_per_test` per test, then `target_count`
/// drawn without replacement. Returned sorted by record.
pub fn select_representative_epochs(
    preds: &[EpochPosterior],
    class: usize,
    sel: &RepresentativeSelection,
) -> Result<Vec<usize>> {
    if !(sel.min_posterior > 0.0 && sel.min_posterior < 1.0) || sel.max_epochs_per_test == 0 || sel.target_count == 0 {
        return Err(Error::Spec("selection needs 0 < min_posterior < 1 and positive counts".into()));
    }
    let mut by_test: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for p in preds {
        let Some(&pc) = p.posteriors.get(class) else { continue };
        let correct = p.true_label == class && crate::nn::argmax(&p.posteriors) == class;
        if correct && pc > sel.min_posterior {
            by_test.entry(&p.test_id).or_default().push(p.record);
        }
    }
    let mut pool = Vec::new();
    for (test, mut recs) in by_test {
        recs.sort_unstable();
        if recs.len() > sel.max_epochs_per_test {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(sel.seed, &[1, seed::tag(test)]));
            recs.shuffle(&mut rng);
            recs.truncate(sel.max_epochs_per_test);
        }
        pool.extend(recs);
    }
    if pool.is_empty() {
        return Err(Error::SelectionEmpty);
    }
    pool.sort_unstable();
    if pool.len() > sel.target_count {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(sel.seed, &[2]));
        let idx = rand::seq::index::sample(&mut rng, pool.len(), sel.target_count);
        pool = idx.into_iter().map(|i| pool[i]).collect();
        pool.sort_unstable();
    }
    Ok(pool)
}
