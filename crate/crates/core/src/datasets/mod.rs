//! Source and target datasets, per-subject test sampling and class balancing.

pub mod synth;
pub mod ucihar;
pub mod wisdm;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::signal::Epoch;

pub use synth::{generate_synthetic_cohort, generate_traces, SynthClassSpec, SynthCohort, SynthCohortSpec};
pub use ucihar::load_ucihar;
pub use wisdm::{load_wisdm, parse_wisdm, WisdmParse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectMeta {
    pub subject_id: String,
    /// Cohort group for target datasets.
    #[serde(default)]
    pub group: Option<String>,
}

/// Windowed epochs with their label space and subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub role: Role,
    pub label_space: Vec<String>,
    pub epochs: Vec<Epoch>,
    pub subjects: BTreeMap<String, SubjectMeta>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, role: Role, label_space: Vec<String>, epochs: Vec<Epoch>) -> Result<Self> {
        let subjects = epochs
            .iter()
            .map(|e| (e.subject_id.clone(), SubjectMeta { subject_id: e.subject_id.clone(), group: None }))
            .collect();
        let d = Dataset { name: name.into(), role, label_space, epochs, subjects };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let unique: BTreeSet<&String> = self.label_space.iter().collect();
        if unique.len() != self.label_space.len() {
            return Err(Error::DatasetFormat("duplicate label names".into()));
        }
        for e in &self.epochs {
            if e.label >= self.label_space.len() {
                return Err(Error::DatasetFormat(format!("label {} outside label space", e.label)));
            }
            if !self.subjects.contains_key(&e.subject_id) {
                return Err(Error::DatasetFormat(format!("unknown subject {}", e.subject_id)));
            }
        }
        Ok(())
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.label_space.iter().position(|l| l == name)
    }

    /// Epoch indices per test, tests in order of first appearance within
    /// each subject, subjects sorted.
    pub fn tests_by_subject(&self) -> BTreeMap<&str, BTreeMap<&str, Vec<usize>>> {
        let mut m: BTreeMap<&str, BTreeMap<&str, Vec<usize>>> = BTreeMap::new();
        for (i, e) in self.epochs.iter().enumerate() {
            m.entry(&e.subject_id).or_default().entry(&e.test_id).or_default().push(i);
        }
        m
    }

    /// Majority epoch label per subject (lowest index on ties).
    pub fn subject_labels(&self) -> BTreeMap<String, usize> {
        let mut counts: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for e in &self.epochs {
            let c = counts.entry(&e.subject_id).or_insert_with(|| vec![0; self.label_space.len()]);
            c[e.label] += 1;
        }
        counts
            .into_iter()
            .map(|(s, c)| (s.to_string(), crate::nn::argmax(&c)))
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.label_space.len()];
        for e in &self.epochs {
            c[e.label] += 1;
        }
        c
    }

    /// Copy holding only `records`, in the given order.
    pub fn subset(&self, records: &[usize]) -> Dataset {
        let epochs: Vec<Epoch> = records.iter().map(|&i| self.epochs[i].clone()).collect();
        let ids: BTreeSet<&str> = epochs.iter().map(|e| e.subject_id.as_str()).collect();
        Dataset {
            name: self.name.clone(),
            role: self.role,
            label_space: self.label_space.clone(),
            subjects: self.subjects.iter().filter(|(k, _)| ids.contains(k.as_str())).map(|(k, v)| (k.clone(), v.clone())).collect(),
            epochs,
        }
    }
}

/// One draw of a test: source records and the renamed test id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestDraw {
    pub subject_id: String,
    pub test_id: String,
    pub records: Vec<usize>,
}

/// For every subject among `records`, `m` tests drawn uniformly with
/// replacement. The k-th draw of test `t` is named `t~k`.
pub fn sample_test_draws(d: &Dataset, records: &[usize], m: usize, seed_value: u64) -> Result<Vec<TestDraw>> {
    if m == 0 {
        return Err(Error::Spec("tests per subject must be at least 1".into()));
    }
    if records.is_empty() {
        return Err(Error::Spec("cannot sample tests from an empty dataset".into()));
    }
    let mut by_subject: BTreeMap<&str, BTreeMap<&str, Vec<usize>>> = BTreeMap::new();
    for &i in records {
        let e = &d.epochs[i];
        by_subject.entry(&e.subject_id).or_default().entry(&e.test_id).or_default().push(i);
    }
    let mut out = Vec::new();
    for (subject, tests) in by_subject {
        let tests: Vec<(&str, Vec<usize>)> = tests.into_iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_value, &[seed::tag(subject)]));
        for k in 0..m {
            let (t, recs) = &tests[rng.random_range(0..tests.len())];
            out.push(TestDraw { subject_id: subject.to_string(), test_id: format!("{t}~{k}"), records: recs.clone() });
        }
    }
    Ok(out)
}

/// Dataset with `m` tests per subject drawn with replacement.
pub fn sample_tests_per_subject(d: &Dataset, m: usize, seed_value: u64) -> Result<Dataset> {
    let all: Vec<usize> = (0..d.epochs.len()).collect();
    let draws = sample_test_draws(d, &all, m, seed_value)?;
    let mut epochs = Vec::new();
    for draw in draws {
        for &r in &draw.records {
            let mut e = d.epochs[r].clone();
            e.test_id = draw.test_id.clone();
            epochs.push(e);
        }
    }
    Ok(Dataset { epochs, ..d.clone() })
}

/// Oversamples minority classes with replacement up to the majority count
/// and shuffles. Works on labels, returning indices into `labels`.
pub fn balance_indices(labels: &[usize], n_classes: usize, seed_value: u64) -> Result<Vec<usize>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        if l >= n_classes {
            return Err(Error::Spec(format!("label {l} outside {n_classes} classes")));
        }
        by_class[l].push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::Spec(format!("class {c} has no epochs to balance")));
    }
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_value, &[0xba1]));
    let mut out = Vec::with_capacity(target * n_classes);
    for members in &by_class {
        out.extend_from_slice(members);
        for _ in members.len()..target {
            out.push(members[rng.random_range(0..members.len())]);
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// Class-balanced copy of `train` (see [`balance_indices`]). The number of
/// classes is taken from the largest label present.
pub fn balance_classes(train: &[Epoch], seed_value: u64) -> Result<Vec<Epoch>> {
    let labels: Vec<usize> = train.iter().map(|e| e.label).collect();
    let n = labels.iter().max().map_or(0, |m| m + 1);
    Ok(balance_indices(&labels, n, seed_value)?.into_iter().map(|i| train[i].clone()).collect())
}
