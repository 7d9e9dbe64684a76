//! UCI HAR loader (total-acceleration inertial signals).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{Dataset, Role};
use crate::error::{Error, Result};
use crate::signal::{Epoch, EPOCH_CHANNELS, EPOCH_LEN};

pub const LABELS: [&str; 5] = ["walking", "stairs", "sitting", "standing", "laying"];

/// Maps the six raw activity ids to the five-class space; both stair
/// directions fold into "stairs".
pub fn map_activity(raw: u32) -> Option<usize> {
    match raw {
        1 => Some(0),
        2 | 3 => Some(1),
        4 => Some(2),
        5 => Some(3),
        6 => Some(4),
        _ => None,
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::DatasetFormat(format!("{}: {e}", path.display())))
}

fn read_matrix(path: &Path) -> Result<Vec<Vec<f64>>> {
    read(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::DatasetFormat(format!("{} line {}: {e}", path.display(), i + 1)))?;
            if row.len() != EPOCH_LEN {
                return Err(Error::DatasetFormat(format!(
                    "{} line {}: {} values, expected {EPOCH_LEN}",
                    path.display(),
                    i + 1,
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::DatasetFormat(format!("{} line {}: non-finite value", path.display(), i + 1)));
            }
            Ok(row)
        })
        .collect()
}

fn read_ints(path: &Path) -> Result<Vec<u32>> {
    read(path)?
        .split_whitespace()
        .map(|t| t.parse::<u32>().map_err(|e| Error::DatasetFormat(format!("{}: {e}", path.display()))))
        .collect()
}

/// Accepts either the distribution root or its parent.
fn resolve_root(dir: &Path) -> PathBuf {
    let nested = dir.join("UCI HAR Dataset");
    if !dir.join("train").is_dir() && nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

struct Raw {
    subject: String,
    partition: &'static str,
    label: usize,
    channels: [Vec<f64>; 3],
}

/// Subjects of the distributed test partition (test ids `test-…`).
pub fn test_partition_subjects(d: &Dataset) -> Vec<String> {
    let set: std::collections::BTreeSet<&str> =
        d.epochs.iter().filter(|e| e.test_id.starts_with("test-")).map(|e| e.subject_id.as_str()).collect();
    set.into_iter().map(String::from).collect()
}

/// Loads both partitions as 4-channel epochs (total acceleration x/y/z plus
/// magnitude). Each subject's channels are standardized with the mean and
/// population standard deviation over all of that subject's windows.
pub fn load_ucihar(dir: &Path) -> Result<Dataset> {
    let root = resolve_root(dir);
    let mut raws = Vec::new();
    for partition in ["train", "test"] {
        let base = root.join(partition);
        let sig = base.join("Inertial Signals");
        let axes: Vec<Vec<Vec<f64>>> = ["x", "y", "z"]
            .iter()
            .map(|a| read_matrix(&sig.join(format!("total_acc_{a}_{partition}.txt"))))
            .collect::<Result<_>>()?;
        let labels = read_ints(&base.join(format!("y_{partition}.txt")))?;
        let subjects = read_ints(&base.join(format!("subject_{partition}.txt")))?;
        let n = labels.len();
        if subjects.len() != n || axes.iter().any(|m| m.len() != n) {
            return Err(Error::DatasetFormat(format!(
                "{partition}: {} labels, {} subjects, signal rows {:?}",
                n,
                subjects.len(),
                axes.iter().map(Vec::len).collect::<Vec<_>>()
            )));
        }
        let [ax, ay, az]: [Vec<Vec<f64>>; 3] = axes.try_into().expect("three axes");
        for (((l, s), (x, y)), z) in labels.iter().zip(&subjects).zip(ax.into_iter().zip(ay)).zip(az) {
            let label = map_activity(*l).ok_or_else(|| Error::DatasetFormat(format!("unknown activity id {l}")))?;
            raws.push(Raw { subject: s.to_string(), partition, label, channels: [x, y, z] });
        }
    }
    if raws.is_empty() {
        return Err(Error::DatasetFormat(format!("{}: no windows found", root.display())));
    }
    build(raws)
}

fn build(raws: Vec<Raw>) -> Result<Dataset> {
    // per-subject statistics over all windows
    let mut stats: BTreeMap<&str, [(f64, f64, usize); EPOCH_CHANNELS]> = BTreeMap::new();
    let windows: Vec<[Vec<f64>; EPOCH_CHANNELS]> = raws
        .iter()
        .map(|r| {
            let [x, y, z] = &r.channels;
            let m = crate::signal::magnitude(x, y, z);
            [x.clone(), y.clone(), z.clone(), m]
        })
        .collect();
    for (r, w) in raws.iter().zip(&windows) {
        let s = stats.entry(&r.subject).or_insert([(0.0, 0.0, 0); EPOCH_CHANNELS]);
        for c in 0..EPOCH_CHANNELS {
            for &v in &w[c] {
                s[c].0 += v;
                s[c].1 += v * v;
                s[c].2 += 1;
            }
        }
    }
    let norm: BTreeMap<&str, [(f64, f64); EPOCH_CHANNELS]> = stats
        .into_iter()
        .map(|(k, s)| {
            let mut out = [(0.0, 1.0); EPOCH_CHANNELS];
            for c in 0..EPOCH_CHANNELS {
                let n = s[c].2 as f64;
                let mean = s[c].0 / n;
                let var = (s[c].1 / n - mean * mean).max(0.0);
                out[c] = (mean, if var > 1e-18 { var.sqrt() } else { 1.0 });
            }
            (k, out)
        })
        .collect();
    let mut counters: BTreeMap<String, usize> = BTreeMap::new();
    let mut epochs = Vec::with_capacity(raws.len());
    for (r, w) in raws.iter().zip(&windows) {
        let nm = norm[r.subject.as_str()];
        let data: Vec<f32> = (0..EPOCH_CHANNELS)
            .flat_map(|c| w[c].iter().map(move |&v| ((v - nm[c].0) / nm[c].1) as f32))
            .collect();
        let test_id = format!("{}-{}", r.partition, r.subject);
        let idx = counters.entry(test_id.clone()).or_insert(0);
        epochs.push(Epoch::new(data, r.subject.clone(), test_id, *idx, r.label)?);
        *idx += 1;
    }
    Dataset::new("ucihar", Role::Source, LABELS.iter().map(|s| s.to_string()).collect(), epochs)
}
