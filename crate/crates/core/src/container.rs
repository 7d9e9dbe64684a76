//! Epoch container: a directory with `epochs.bin` (little-endian f32,
//! 4×128 per record), `index.csv` (`record,subject_id,test_id,epoch_index,label`),
//! and optionally `meta.json` (name, role, label space, subjects) and
//! `bursts.csv` (`test_id,center_s`) for synthetic cohorts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::{Dataset, Role, SubjectMeta};
use crate::error::{Error, Result};
use crate::signal::{Epoch, EPOCH_CHANNELS, EPOCH_LEN};

pub const EPOCHS_FILE: &str = "epochs.bin";
pub const INDEX_FILE: &str = "index.csv";
pub const META_FILE: &str = "meta.json";
pub const BURSTS_FILE: &str = "bursts.csv";
const INDEX_HEADER: &str = "record,subject_id,test_id,epoch_index,label";
const RECORD_VALUES: usize = EPOCH_CHANNELS * EPOCH_LEN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Meta {
    name: String,
    role: Role,
    label_space: Vec<String>,
    subjects: Vec<SubjectMeta>,
}

pub type Bursts = BTreeMap<String, Vec<f64>>;

fn check_field(s: &str) -> Result<()> {
    if s.is_empty() || s.contains([',', '\n', '\r', '"']) {
        return Err(Error::DatasetFormat(format!("identifier {s:?} cannot be stored in CSV")));
    }
    Ok(())
}

pub fn save_container(dir: &Path, d: &Dataset, bursts: Option<&Bursts>) -> Result<()> {
    d.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut bin = Vec::with_capacity(d.epochs.len() * RECORD_VALUES * 4);
    let mut index = String::from(INDEX_HEADER);
    index.push('\n');
    for (r, e) in d.epochs.iter().enumerate() {
        check_field(&e.subject_id)?;
        check_field(&e.test_id)?;
        for v in &e.data {
            bin.extend_from_slice(&v.to_le_bytes());
        }
        let _ = writeln!(index, "{r},{},{},{},{}", e.subject_id, e.test_id, e.epoch_index, d.label_space[e.label]);
    }
    for l in &d.label_space {
        check_field(l)?;
    }
    let meta = Meta {
        name: d.name.clone(),
        role: d.role,
        label_space: d.label_space.clone(),
        subjects: d.subjects.values().cloned().collect(),
    };
    write(dir, EPOCHS_FILE, &bin)?;
    write(dir, INDEX_FILE, index.as_bytes())?;
    write(dir, META_FILE, (serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n").as_bytes())?;
    if let Some(b) = bursts {
        let mut s = String::from("test_id,center_s\n");
        for (t, cs) in b {
            check_field(t)?;
            for c in cs {
                let _ = writeln!(s, "{t},{c}");
            }
        }
        write(dir, BURSTS_FILE, s.as_bytes())?;
    }
    Ok(())
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::DatasetFormat(format!("{}: {e}", path.display())))
}

/// Loads a container. Without `meta.json` the label space is the sorted set
/// of labels in the index and the dataset is named after the directory.
pub fn load_container(dir: &Path) -> Result<(Dataset, Option<Bursts>)> {
    let bin_path = dir.join(EPOCHS_FILE);
    let bin = fs::read(&bin_path).map_err(|e| Error::DatasetFormat(format!("{}: {e}", bin_path.display())))?;
    let index = read_text(&dir.join(INDEX_FILE))?;
    let mut lines = index.lines();
    if lines.next().map(str::trim) != Some(INDEX_HEADER) {
        return Err(Error::DatasetFormat(format!("{INDEX_FILE}: header must be {INDEX_HEADER}")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::DatasetFormat(format!("{INDEX_FILE} line {}: {line:?}", n + 2));
        if f.len() != 5 {
            return Err(bad());
        }
        let record: usize = f[0].parse().map_err(|_| bad())?;
        let epoch_index: usize = f[3].parse().map_err(|_| bad())?;
        if record != rows.len() {
            return Err(Error::DatasetFormat(format!("{INDEX_FILE}: records must be numbered 0..n in order")));
        }
        rows.push((f[1].to_string(), f[2].to_string(), epoch_index, f[4].to_string()));
    }
    if bin.len() != rows.len() * RECORD_VALUES * 4 {
        return Err(Error::DatasetFormat(format!(
            "{EPOCHS_FILE} has {} bytes, index lists {} records of {RECORD_VALUES} floats",
            bin.len(),
            rows.len()
        )));
    }
    let meta_path = dir.join(META_FILE);
    let meta: Option<Meta> = if meta_path.exists() {
        Some(serde_json::from_str(&read_text(&meta_path)?).map_err(|e| Error::DatasetFormat(format!("{META_FILE}: {e}")))?)
    } else {
        None
    };
    let label_space = match &meta {
        Some(m) => m.label_space.clone(),
        None => rows.iter().map(|r| r.3.clone()).collect::<BTreeSet<_>>().into_iter().collect(),
    };
    let mut epochs = Vec::with_capacity(rows.len());
    for (r, (subject, test, idx, label)) in rows.into_iter().enumerate() {
        let label = label_space
            .iter()
            .position(|l| *l == label)
            .ok_or_else(|| Error::DatasetFormat(format!("record {r}: label {label:?} not in label space")))?;
        let data = bin[r * RECORD_VALUES * 4..(r + 1) * RECORD_VALUES * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        epochs.push(Epoch::new(data, subject, test, idx, label).map_err(|e| Error::DatasetFormat(format!("record {r}: {e}")))?);
    }
    let name = match &meta {
        Some(m) => m.name.clone(),
        None => dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
    };
    let role = meta.as_ref().map_or(Role::Target, |m| m.role);
    let mut d = Dataset::new(name, role, label_space, epochs)?;
    if let Some(m) = meta {
        for s in m.subjects {
            if let Some(slot) = d.subjects.get_mut(&s.subject_id) {
                *slot = s;
            }
        }
    }
    let bursts_path = dir.join(BURSTS_FILE);
    let bursts = if bursts_path.exists() {
        let mut b = Bursts::new();
        for (n, line) in read_text(&bursts_path)?.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
            let (t, c) = line
                .split_once(',')
                .ok_or_else(|| Error::DatasetFormat(format!("{BURSTS_FILE} line {}", n + 1)))?;
            let c: f64 = c.parse().map_err(|_| Error::DatasetFormat(format!("{BURSTS_FILE} line {}", n + 1)))?;
            b.entry(t.to_string()).or_default().push(c);
        }
        Some(b)
    } else {
        None
    };
    Ok((d, bursts))
}
