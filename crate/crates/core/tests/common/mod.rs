#![allow(dead_code)]

use std::collections::BTreeMap;

use ambulate::lrp::RelevanceMap;
use ambulate::nn::{LayerSpec, ModelSpec};
use ambulate::signal::{Epoch, TARGET_RATE_HZ};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Half-width of the window around a burst centre, seconds.
pub const BURST_HALF_WINDOW_S: f64 = 0.2;

/// κ straight from the two label vectors.
pub fn brute_kappa(t: &[usize], p: &[usize], k: usize) -> f64 {
    let n = t.len() as f64;
    let agree = t.iter().zip(p).filter(|(a, b)| a == b).count() as f64;
    let p_o = agree / n;
    let mut p_e = 0.0;
    for c in 0..k {
        let nt = t.iter().filter(|&&x| x == c).count() as f64;
        let np = p.iter().filter(|&&x| x == c).count() as f64;
        p_e += (nt / n) * (np / n);
    }
    if p_e >= 1.0 {
        return if p_o >= 1.0 { 1.0 } else { 0.0 };
    }
    (p_o - p_e) / (1.0 - p_e)
}

/// Mean F1 over classes occurring in either vector, from TP/FP/FN counts.
pub fn brute_mf1(t: &[usize], p: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    let mut seen = 0usize;
    for c in 0..k {
        let tp = t.iter().zip(p).filter(|&(&a, &b)| a == c && b == c).count() as f64;
        let fp = t.iter().zip(p).filter(|&(&a, &b)| a != c && b == c).count() as f64;
        let fneg = t.iter().zip(p).filter(|&(&a, &b)| a == c && b != c).count() as f64;
        if tp + fp + fneg == 0.0 {
            continue;
        }
        seen += 1;
        total += 2.0 * tp / (2.0 * tp + fp + fneg);
    }
    total / seen.max(1) as f64
}

/// Minimum warping cost over every monotone path, enumerated one by one.
pub fn exhaustive_dtw(a: &[f64], b: &[f64], channels: usize) -> f64 {
    let (n, m) = (a.len() / channels, b.len() / channels);
    let local = |i: usize, j: usize| -> f64 {
        (0..channels)
            .map(|c| {
                let d = a[c * n + i] - b[c * m + j];
                d * d
            })
            .sum()
    };
    fn walk(i: usize, j: usize, acc: f64, n: usize, m: usize, local: &dyn Fn(usize, usize) -> f64, best: &mut f64) {
        if i == n - 1 && j == m - 1 {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        for (di, dj) in [(1, 1), (1, 0), (0, 1)] {
            let (ni, nj) = (i + di, j + dj);
            if ni < n && nj < m {
                walk(ni, nj, acc + local(ni, nj), n, m, local, best);
            }
        }
    }
    let mut best = f64::INFINITY;
    walk(0, 0, 0.0 + local(0, 0), n, m, &local, &mut best);
    best
}

/// Positive relevance mass and time fraction inside ±0.2 s of burst centres
/// for one epoch, or `None` when no burst window touches it.
pub fn burst_fractions(map: &RelevanceMap, epoch: &Epoch, bursts: &BTreeMap<String, Vec<f64>>) -> Option<(f64, f64)> {
    let centres = bursts.get(&epoch.test_id)?;
    let t0 = epoch.start_time_s();
    let inside: Vec<bool> = (0..map.len)
        .map(|i| {
            let t = t0 + i as f64 / TARGET_RATE_HZ;
            centres.iter().any(|c| (t - c).abs() <= BURST_HALF_WINDOW_S)
        })
        .collect();
    let covered = inside.iter().filter(|&&b| b).count();
    if covered == 0 {
        return None;
    }
    let mut pos = 0.0;
    let mut pos_in = 0.0;
    for c in 0..map.channels {
        for (i, &r) in map.channel(c).iter().enumerate() {
            if r > 0.0 {
                pos += r;
                if inside[i] {
                    pos_in += r;
                }
            }
        }
    }
    if pos == 0.0 {
        return None;
    }
    Some((pos_in / pos, covered as f64 / map.len as f64))
}

pub const SMALL_COHORT: &str = r#"{"classes":[
 {"name":"HC","subjects":6,"step_frequency_hz":[1.8,2.2],"harmonic_amplitudes":[0.3,0.12,0.05],"perturbation_rate":0.0,"perturbation_band_hz":[5,12],"noise_std":0.03},
 {"name":"PwMSmild","subjects":6,"step_frequency_hz":[1.6,2.0],"harmonic_amplitudes":[0.3,0.12,0.05],"perturbation_rate":0.2,"perturbation_band_hz":[5,12],"noise_std":0.03},
 {"name":"PwMSmod","subjects":6,"step_frequency_hz":[1.2,1.6],"harmonic_amplitudes":[0.25,0.12,0.06],"perturbation_rate":0.7,"perturbation_band_hz":[5,12],"noise_std":0.03}],
 "test_duration_s": 15, "tests_per_subject": 2}"#;

pub const SMALL_CV: &str = r#"{"k":3,"tests_per_subject":3,"train":{"epochs":3,"batch_size":32}}"#;

pub fn ambulate(bin: &str, args: &[&str], dir: &std::path::Path) -> std::process::Output {
    std::process::Command::new(bin)
        .args(args)
        .current_dir(dir)
        .env_remove("AMBULATE_SEED")
        .output()
        .expect("binary runs")
}

/// Names and bytes of every CSV in `dir`, sorted by name.
pub fn csv_files(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Small random conv net: one or two conv blocks, optional pooling, one or
/// two dense layers, softmax or raw output.
pub fn random_spec(rng: &mut ChaCha8Rng) -> ModelSpec {
    let cin = rng.random_range(1..=4);
    let len = rng.random_range(16..=40);
    let mut layers = Vec::new();
    let (mut ch, mut l) = (cin, len);
    for _ in 0..rng.random_range(1..=2) {
        let k = rng.random_range(1..=5);
        let cout = rng.random_range(2..=6);
        layers.push(LayerSpec::Conv1d { in_channels: ch, out_channels: cout, kernel_size: k });
        layers.push(LayerSpec::Relu);
        ch = cout;
        l = l + 1 - k;
        if rng.random_bool(0.6) {
            layers.push(LayerSpec::MaxPool1d { pool: 2, stride: 2 });
            l = (l - 2) / 2 + 1;
        }
    }
    layers.push(LayerSpec::Flatten);
    let mut d = ch * l;
    if rng.random_bool(0.5) {
        let h = rng.random_range(3..=8);
        layers.push(LayerSpec::Dense { in_dim: d, out_dim: h });
        layers.push(LayerSpec::Relu);
        layers.push(LayerSpec::Dropout { rate: 0.5 });
        d = h;
    }
    layers.push(LayerSpec::Dense { in_dim: d, out_dim: rng.random_range(2..=4) });
    if rng.random_bool(0.7) {
        layers.push(LayerSpec::Softmax);
    }
    ModelSpec::new(cin, len, layers).unwrap()
}

