//! Subject-wise cross-validation, epoch→test→subject vote aggregation, and
//! classification metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{balance_indices, sample_test_draws, Dataset};
use crate::error::{Error, Result};
use crate::model::{build_default_dcnn, ModelBundle};
use crate::nn::{argmax, History, LabeledSet, TrainConfig};
use crate::seed;
use crate::transfer::{apply_transfer, fine_tune, TransferMode, TransferPlan};

// ---------------------------------------------------------------- metrics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean per-class recall over classes present in the truth.
    pub acc: f64,
    /// Fraction correct.
    pub plain_acc: f64,
    pub kappa: f64,
    /// Mean per-class F1 over classes present in truth or prediction.
    pub mf1: f64,
    /// `confusion[true][pred]`.
    pub confusion: Vec<Vec<u64>>,
}

pub fn compute_metrics(y_true: &[usize], y_pred: &[usize], n_classes: usize) -> Result<Metrics> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Spec(format!("{} truths vs {} predictions", y_true.len(), y_pred.len())));
    }
    if y_true.is_empty() {
        return Err(Error::Spec("cannot score empty label vectors".into()));
    }
    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::Spec(format!("label outside {n_classes} classes")));
        }
        confusion[t][p] += 1;
    }
    Ok(metrics_from_confusion(confusion))
}

pub fn metrics_from_confusion(confusion: Vec<Vec<u64>>) -> Metrics {
    let k = confusion.len();
    let row: Vec<f64> = confusion.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let col: Vec<f64> = (0..k).map(|j| confusion.iter().map(|r| r[j]).sum::<u64>() as f64).collect();
    let n: f64 = row.iter().sum();
    let diag: Vec<f64> = (0..k).map(|i| confusion[i][i] as f64).collect();
    let present: Vec<usize> = (0..k).filter(|&i| row[i] > 0.0).collect();
    let acc = present.iter().map(|&i| diag[i] / row[i]).sum::<f64>() / present.len().max(1) as f64;
    let p_o = diag.iter().sum::<f64>() / n;
    let p_e = (0..k).map(|i| (row[i] / n) * (col[i] / n)).sum::<f64>();
    let kappa = if p_e >= 1.0 {
        if p_o >= 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (p_o - p_e) / (1.0 - p_e)
    };
    let seen: Vec<usize> = (0..k).filter(|&i| row[i] > 0.0 || col[i] > 0.0).collect();
    let f1 = |i: usize| {
        let den = row[i] + col[i];
        if den == 0.0 {
            0.0
        } else {
            2.0 * diag[i] / den
        }
    };
    let mf1 = seen.iter().map(|&i| f1(i)).sum::<f64>() / seen.len().max(1) as f64;
    Metrics { acc, plain_acc: p_o, kappa, mf1, confusion }
}

// ---------------------------------------------------------------- folds

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub strata: BTreeMap<String, usize>,
    pub folds: Vec<Fold>,
}

/// Share of each fold's training subjects held out for validation.
pub const VAL_FRACTION: f64 = 0.1;

/// Assigns subjects (keyed by stratum) to `k` folds: each stratum is
/// shuffled and dealt round-robin, continuing where the previous stratum
/// stopped so fold sizes stay within one. About 10 % of each stratum's
/// training subjects become validation subjects.
pub fn make_folds(strata: &BTreeMap<String, usize>, k: usize, seed_value: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Spec("need at least 2 folds".into()));
    }
    if strata.len() < k {
        return Err(Error::Spec(format!("{} subjects cannot fill {k} folds", strata.len())));
    }
    let mut by_stratum: BTreeMap<usize, Vec<&String>> = BTreeMap::new();
    for (s, &c) in strata {
        by_stratum.entry(c).or_default().push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_value, &[0xf01d]));
    let mut assign: BTreeMap<&String, usize> = BTreeMap::new();
    let mut next = 0;
    for (c, members) in by_stratum.iter_mut() {
        if members.len() < k {
            log::warn!("stratum {c} has {} subjects for {k} folds; stratification is best effort", members.len());
        }
        members.shuffle(&mut rng);
        for s in members.iter() {
            assign.insert(s, next % k);
            next += 1;
        }
    }
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let test: Vec<String> = assign.iter().filter(|(_, &v)| v == f).map(|(s, _)| (*s).clone()).collect();
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for members in by_stratum.values() {
            // shuffled order from above; validation takes the first few
            let pool: Vec<&String> = members.iter().filter(|s| assign[*s] != f).copied().collect();
            let n_val = if pool.len() >= 2 { ((pool.len() as f64 * VAL_FRACTION).round() as usize).max(1) } else { 0 };
            let start = (f * n_val) % pool.len().max(1);
            for (i, s) in pool.iter().enumerate() {
                let slot = (i + pool.len() - start) % pool.len();
                if slot < n_val {
                    val.push((*s).clone());
                } else {
                    train.push((*s).clone());
                }
            }
        }
        train.sort();
        val.sort();
        folds.push(Fold { index: f, train, val, test });
    }
    Ok(FoldPlan { k, seed: seed_value, strata: strata.clone(), folds })
}

// ---------------------------------------------------------------- votes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochPred {
    pub record: usize,
    pub subject_id: String,
    pub test_id: String,
    pub epoch_index: usize,
    pub true_label: usize,
    pub posteriors: Vec<f64>,
}

impl EpochPred {
    pub fn pred(&self) -> usize {
        argmax(&self.posteriors)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VotePred {
    pub id: String,
    pub subject_id: String,
    pub true_label: usize,
    pub pred: usize,
    pub votes: Vec<usize>,
    pub mean_posteriors: Vec<f64>,
}

/// Most votes; ties go to the higher mean posterior, then the lower label.
fn vote(votes: &[usize], mean_post: &[f64]) -> usize {
    let top = *votes.iter().max().unwrap_or(&0);
    let mut best: Option<usize> = None;
    for c in (0..votes.len()).filter(|&c| votes[c] == top) {
        match best {
            Some(b) if mean_post[c] <= mean_post[b] => {}
            _ => best = Some(c),
        }
    }
    best.unwrap_or(0)
}

fn majority(labels: impl Iterator<Item = usize>, n: usize) -> usize {
    let mut c = vec![0usize; n];
    labels.for_each(|l| c[l] += 1);
    argmax(&c)
}

/// Test label = modal epoch argmax; subject label = modal test label.
/// Inputs are sorted canonically first, so the result does not depend on
/// their order.
pub fn aggregate_votes(epochs: &[EpochPred], n_classes: usize) -> (Vec<VotePred>, Vec<VotePred>) {
    let mut by_test: BTreeMap<(&str, &str), Vec<&EpochPred>> = BTreeMap::new();
    for e in epochs {
        by_test.entry((&e.subject_id, &e.test_id)).or_default().push(e);
    }
    let mut tests = Vec::with_capacity(by_test.len());
    for ((subject, test), mut es) in by_test {
        es.sort_by_key(|e| (e.epoch_index, e.record));
        let mut votes = vec![0; n_classes];
        let mut mean = vec![0.0; n_classes];
        for e in &es {
            votes[e.pred()] += 1;
            for (m, p) in mean.iter_mut().zip(&e.posteriors) {
                *m += p;
            }
        }
        mean.iter_mut().for_each(|m| *m /= es.len() as f64);
        tests.push(VotePred {
            id: test.to_string(),
            subject_id: subject.to_string(),
            true_label: majority(es.iter().map(|e| e.true_label), n_classes),
            pred: vote(&votes, &mean),
            votes,
            mean_posteriors: mean,
        });
    }
    let mut by_subject: BTreeMap<&str, Vec<&VotePred>> = BTreeMap::new();
    for t in &tests {
        by_subject.entry(&t.subject_id).or_default().push(t);
    }
    let subjects = by_subject
        .into_iter()
        .map(|(s, ts)| {
            let mut votes = vec![0; n_classes];
            let mut mean = vec![0.0; n_classes];
            for t in &ts {
                votes[t.pred] += 1;
                for (m, p) in mean.iter_mut().zip(&t.mean_posteriors) {
                    *m += p;
                }
            }
            mean.iter_mut().for_each(|m| *m /= ts.len() as f64);
            VotePred {
                id: s.to_string(),
                subject_id: s.to_string(),
                true_label: majority(ts.iter().map(|t| t.true_label), n_classes),
                pred: vote(&votes, &mean),
                votes,
                mean_posteriors: mean,
            }
        })
        .collect();
    (tests, subjects)
}

// ---------------------------------------------------------------- tasks

/// Classes of a task, each the union of one or more dataset labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    pub classes: Vec<(String, Vec<String>)>,
}

impl Task {
    pub fn all(d: &Dataset) -> Task {
        Task { name: "all".into(), classes: d.label_space.iter().map(|l| (l.clone(), vec![l.clone()])).collect() }
    }

    pub fn subset(name: &str, labels: &[&str]) -> Task {
        Task { name: name.into(), classes: labels.iter().map(|l| (l.to_string(), vec![l.to_string()])).collect() }
    }

    /// `all`, the cohort pairs `hc-mild`, `mild-mod`, `hc-mod`, or a
    /// comma-separated list of labels.
    pub fn parse(s: &str, d: &Dataset) -> Result<Task> {
        let t = match s {
            "all" => Task::all(d),
            "hc-mild" => Task::subset(s, &["HC", "PwMSmild"]),
            "mild-mod" => Task::subset(s, &["PwMSmild", "PwMSmod"]),
            "hc-mod" => Task::subset(s, &["HC", "PwMSmod"]),
            list => Task::subset(list, &list.split(',').map(str::trim).collect::<Vec<_>>()),
        };
        t.mapping(d)?;
        Ok(t)
    }

    pub fn labels(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.0.clone()).collect()
    }

    /// Task class per dataset label (None when the label is not used).
    pub fn mapping(&self, d: &Dataset) -> Result<Vec<Option<usize>>> {
        if self.classes.len() < 2 {
            return Err(Error::Spec(format!("task {} needs at least two classes", self.name)));
        }
        let mut map = vec![None; d.label_space.len()];
        for (ci, (_, members)) in self.classes.iter().enumerate() {
            for m in members {
                let i = d
                    .label_index(m)
                    .ok_or_else(|| Error::Spec(format!("label {m:?} not in dataset {}", d.name)))?;
                if map[i].is_some() {
                    return Err(Error::Spec(format!("label {m:?} used twice in task {}", self.name)));
                }
                map[i] = Some(ci);
            }
        }
        Ok(map)
    }
}

// ---------------------------------------------------------------- cv

#[derive(Debug, Clone)]
pub enum Recipe {
    EndToEnd,
    Transfer { mode: TransferMode, source: Box<ModelBundle> },
}

impl Recipe {
    pub fn name(&self) -> String {
        match self {
            Recipe::EndToEnd => "end_to_end".into(),
            Recipe::Transfer { mode, .. } => mode.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub k: usize,
    /// Tests drawn per subject with replacement; `None` keeps tests as-is.
    pub tests_per_subject: Option<usize>,
    pub seed: u64,
    /// Oversample training and validation classes.
    pub balance: bool,
    /// Stratify folds by each subject's majority label.
    pub stratify: bool,
    /// Folds run concurrently.
    pub jobs: usize,
    pub train: TrainConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { k: 5, tests_per_subject: Some(10), seed: 0, balance: true, stratify: true, jobs: 1, train: TrainConfig::default() }
    }
}

impl CvConfig {
    pub const KEYS: &'static [&'static str] = &["k", "tests_per_subject", "seed", "balance", "stratify", "jobs", "train"];

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Spec("k must be at least 2".into()));
        }
        if self.tests_per_subject == Some(0) {
            return Err(Error::Spec("tests_per_subject must be positive".into()));
        }
        if self.jobs == 0 {
            return Err(Error::Spec("jobs must be positive".into()));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub epoch: Metrics,
    pub test: Metrics,
    pub subject: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_subjects: Vec<String>,
    pub val_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    pub train_epochs: usize,
    pub val_epochs: usize,
    pub test_epochs: usize,
    pub passes_run: usize,
    pub best_pass: Option<usize>,
    pub final_train_acc: Option<f64>,
    pub final_val_acc: Option<f64>,
    /// Absent when the split has no test subjects.
    pub metrics: Option<LevelMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedianIqr {
    pub median: f64,
    pub iqr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpreadSummary {
    pub acc: MedianIqr,
    pub kappa: MedianIqr,
    pub mf1: MedianIqr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub task: Task,
    pub recipe: String,
    pub config: CvConfig,
    pub plan: FoldPlan,
    pub folds: Vec<FoldReport>,
    /// Metrics over all folds' predictions together.
    pub pooled: LevelMetrics,
    /// Fold means of epoch-level metrics.
    pub mean_epoch_acc: f64,
    pub mean_epoch_kappa: f64,
    pub mean_epoch_mf1: f64,
    /// Median and IQR of test-level metrics across folds.
    pub test_spread: SpreadSummary,
    #[serde(skip)]
    pub epoch_preds: Vec<(usize, EpochPred)>,
    #[serde(skip)]
    pub test_preds: Vec<(usize, VotePred)>,
    #[serde(skip)]
    pub subject_preds: Vec<(usize, VotePred)>,
}

/// Linear-interpolation quantile of sorted-able values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

fn spread(values: &[f64]) -> MedianIqr {
    MedianIqr { median: quantile(values, 0.5), iqr: quantile(values, 0.75) - quantile(values, 0.25) }
}

struct FoldOutput {
    bundle: ModelBundle,
    history: History,
    report: FoldReport,
    epochs: Vec<EpochPred>,
    tests: Vec<VotePred>,
    subjects: Vec<VotePred>,
}

/// A data view: source record and the test id it is counted under.
type View = Vec<(usize, String)>;

fn views(d: &Dataset, records: &[usize], m: Option<usize>, seed_value: u64) -> Result<View> {
    match m {
        None => Ok(records.iter().map(|&r| (r, d.epochs[r].test_id.clone())).collect()),
        Some(_) if records.is_empty() => Ok(Vec::new()),
        Some(m) => Ok(sample_test_draws(d, records, m, seed_value)?
            .into_iter()
            .flat_map(|t| t.records.into_iter().map(move |r| (r, t.test_id.clone())))
            .collect()),
    }
}

/// Builds the fold's model per recipe and trains it.
pub fn fit_recipe(
    recipe: &Recipe,
    labels: &[String],
    train: &LabeledSet<'_>,
    val: &LabeledSet<'_>,
    config: &TrainConfig,
    model_seed: u64,
    target_name: &str,
) -> Result<(ModelBundle, History)> {
    let bundle = match recipe {
        Recipe::EndToEnd => {
            let mut b = build_default_dcnn(labels, model_seed)?;
            b.provenance.source_dataset = target_name.to_string();
            b.provenance.transfer_mode = Some(TransferMode::EndToEnd);
            b
        }
        Recipe::Transfer { mode, source } => apply_transfer(
            source,
            &TransferPlan { mode: *mode, source_labels: source.label_space.clone(), target_labels: labels.to_vec() },
            model_seed,
        )?,
    };
    fine_tune(&bundle, train, val, config, target_name)
}

/// Per-split data handling shared by cross-validation and single fits.
struct SplitSettings<'a> {
    tests_per_subject: Option<usize>,
    balance: bool,
    seed: u64,
    train: &'a TrainConfig,
}

impl CvConfig {
    fn split_settings(&self) -> SplitSettings<'_> {
        SplitSettings { tests_per_subject: self.tests_per_subject, balance: self.balance, seed: self.seed, train: &self.train }
    }
}

fn run_fold(d: &Dataset, map: &[Option<usize>], labels: &[String], fold: &Fold, recipe: &Recipe, cfg: &SplitSettings<'_>) -> Result<FoldOutput> {
    let f = fold.index as u64;
    let role = |subjects: &[String]| -> Vec<usize> {
        let set: BTreeSet<&str> = subjects.iter().map(String::as_str).collect();
        (0..d.epochs.len()).filter(|&i| map[d.epochs[i].label].is_some() && set.contains(d.epochs[i].subject_id.as_str())).collect()
    };
    let (tr, va, te) = (role(&fold.train), role(&fold.val), role(&fold.test));
    let subjects_of = |v: &[usize]| -> BTreeSet<&str> { v.iter().map(|&i| d.epochs[i].subject_id.as_str()).collect() };
    let test_set = subjects_of(&te);
    if !subjects_of(&tr).is_disjoint(&test_set) || !subjects_of(&va).is_disjoint(&test_set) {
        return Err(Error::Spec(format!("fold {f}: a subject appears in both training and test data")));
    }
    if tr.is_empty() {
        return Err(Error::Spec(format!("fold {f}: empty training split")));
    }
    let m = cfg.tests_per_subject;
    let tr_v = views(d, &tr, m, seed::derive(cfg.seed, &[f, 1]))?;
    let va_v = views(d, &va, m, seed::derive(cfg.seed, &[f, 2]))?;
    let te_v = views(d, &te, m, seed::derive(cfg.seed, &[f, 3]))?;
    let label_of = |r: usize| map[d.epochs[r].label].expect("filtered to task labels");
    let balanced = |v: &View, tag: u64| -> Result<Vec<usize>> {
        let ls: Vec<usize> = v.iter().map(|(r, _)| label_of(*r)).collect();
        if cfg.balance && !v.is_empty() {
            let present = ls.iter().collect::<BTreeSet<_>>().len();
            if present == labels.len() {
                return Ok(balance_indices(&ls, labels.len(), seed::derive(cfg.seed, &[f, tag]))?.into_iter().map(|i| v[i].0).collect());
            }
            log::warn!("fold {f}: split lacks some classes; left unbalanced");
        }
        Ok(v.iter().map(|(r, _)| *r).collect())
    };
    let tr_r = balanced(&tr_v, 4)?;
    let va_r = balanced(&va_v, 5)?;
    let set = |rs: &[usize]| LabeledSet { inputs: rs.iter().map(|&r| d.epochs[r].data.as_slice()).collect(), labels: rs.iter().map(|&r| label_of(r)).collect() };
    let train_cfg = TrainConfig { seed: seed::derive(cfg.train.seed, &[cfg.seed, f]), ..cfg.train.clone() };
    let (bundle, history) = fit_recipe(recipe, labels, &set(&tr_r), &set(&va_r), &train_cfg, seed::derive(cfg.seed, &[f, 6]), &d.name)
        .map_err(|e| match e {
            Error::Numerical(m) => Error::Numerical(format!("fold {f}: {m}")),
            other => other,
        })?;

    let unique: BTreeSet<usize> = te_v.iter().map(|(r, _)| *r).collect();
    let unique: Vec<usize> = unique.into_iter().collect();
    let posts = bundle.predict(&unique.iter().map(|&r| d.epochs[r].data.as_slice()).collect::<Vec<_>>())?;
    let post_of: BTreeMap<usize, Vec<f64>> = unique.iter().zip(posts).map(|(&r, p)| (r, p.into_iter().map(f64::from).collect())).collect();
    let epochs: Vec<EpochPred> = te_v
        .iter()
        .map(|(r, t)| EpochPred {
            record: *r,
            subject_id: d.epochs[*r].subject_id.clone(),
            test_id: t.clone(),
            epoch_index: d.epochs[*r].epoch_index,
            true_label: label_of(*r),
            posteriors: post_of[r].clone(),
        })
        .collect();
    let (tests, subjects) = aggregate_votes(&epochs, labels.len());
    let metrics = if epochs.is_empty() { None } else { Some(level_metrics(&epochs, &tests, &subjects, labels.len())?) };
    let last = history.passes.last();
    Ok(FoldOutput {
        bundle,
        history: history.clone(),
        report: FoldReport {
            fold: fold.index,
            train_subjects: fold.train.clone(),
            val_subjects: fold.val.clone(),
            test_subjects: fold.test.clone(),
            train_epochs: tr_r.len(),
            val_epochs: va_r.len(),
            test_epochs: epochs.len(),
            passes_run: history.passes.len(),
            best_pass: history.best_pass,
            final_train_acc: last.map(|p| p.train_acc),
            final_val_acc: last.and_then(|p| p.val_acc),
            metrics,
        },
        epochs,
        tests,
        subjects,
    })
}

fn level_metrics(epochs: &[EpochPred], tests: &[VotePred], subjects: &[VotePred], n: usize) -> Result<LevelMetrics> {
    let votes = |v: &[VotePred]| compute_metrics(&v.iter().map(|t| t.true_label).collect::<Vec<_>>(), &v.iter().map(|t| t.pred).collect::<Vec<_>>(), n);
    Ok(LevelMetrics {
        epoch: compute_metrics(&epochs.iter().map(|e| e.true_label).collect::<Vec<_>>(), &epochs.iter().map(EpochPred::pred).collect::<Vec<_>>(), n)?,
        test: votes(tests)?,
        subject: votes(subjects)?,
    })
}

/// Stratified subject-wise k-fold evaluation of a model recipe.
pub fn run_cv(d: &Dataset, task: &Task, recipe: &Recipe, cfg: &CvConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let map = task.mapping(d)?;
    let labels = task.labels();
    let strata = task_strata(d, &map, cfg.stratify, labels.len());
    let plan = make_folds(&strata, cfg.k, cfg.seed)?;
    let settings = cfg.split_settings();
    let outputs: Vec<Result<FoldOutput>> = if cfg.jobs <= 1 {
        plan.folds.iter().map(|fold| run_fold(d, &map, &labels, fold, recipe, &settings)).collect()
    } else {
        let mut out: Vec<Option<Result<FoldOutput>>> = (0..plan.folds.len()).map(|_| None).collect();
        for chunk in plan.folds.chunks(cfg.jobs) {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|fold| (fold.index, s.spawn(|| run_fold(d, &map, &labels, fold, recipe, &settings))))
                    .collect();
                for (i, h) in handles {
                    out[i] = Some(h.join().unwrap_or_else(|_| Err(Error::Numerical(format!("fold {i} panicked")))));
                }
            });
        }
        out.into_iter().map(|o| o.expect("every fold ran")).collect()
    };
    let mut folds = Vec::new();
    let (mut epoch_preds, mut test_preds, mut subject_preds) = (Vec::new(), Vec::new(), Vec::new());
    for (i, o) in outputs.into_iter().enumerate() {
        let o = o.map_err(|e| match e {
            Error::Spec(m) if !m.starts_with("fold") => Error::Spec(format!("fold {i}: {m}")),
            other => other,
        })?;
        if o.epochs.is_empty() {
            return Err(Error::Spec(format!("fold {i}: no test epochs")));
        }
        epoch_preds.extend(o.epochs.into_iter().map(|e| (i, e)));
        test_preds.extend(o.tests.into_iter().map(|t| (i, t)));
        subject_preds.extend(o.subjects.into_iter().map(|t| (i, t)));
        folds.push(o.report);
    }
    let strip = |v: &[(usize, VotePred)]| v.iter().map(|(_, t)| t.clone()).collect::<Vec<_>>();
    let pooled = level_metrics(
        &epoch_preds.iter().map(|(_, e)| e.clone()).collect::<Vec<_>>(),
        &strip(&test_preds),
        &strip(&subject_preds),
        labels.len(),
    )?;
    let fm: Vec<&LevelMetrics> = folds.iter().map(|r| r.metrics.as_ref().expect("checked non-empty")).collect();
    let mean = |f: fn(&LevelMetrics) -> f64| fm.iter().map(|m| f(m)).sum::<f64>() / fm.len() as f64;
    let per = |f: fn(&Metrics) -> f64| fm.iter().map(|m| f(&m.test)).collect::<Vec<_>>();
    Ok(EvalReport {
        dataset: d.name.clone(),
        task: task.clone(),
        recipe: recipe.name(),
        config: cfg.clone(),
        plan,
        mean_epoch_acc: mean(|m| m.epoch.acc),
        mean_epoch_kappa: mean(|m| m.epoch.kappa),
        mean_epoch_mf1: mean(|m| m.epoch.mf1),
        test_spread: SpreadSummary { acc: spread(&per(|m| m.acc)), kappa: spread(&per(|m| m.kappa)), mf1: spread(&per(|m| m.mf1)) },
        folds,
        pooled,
        epoch_preds,
        test_preds,
        subject_preds,
    })
}

// ---------------------------------------------------------------- single fit

/// Training of one model on a dataset, optionally scoring held-out subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Tests drawn per subject with replacement; `None` keeps tests as-is.
    pub tests_per_subject: Option<usize>,
    pub seed: u64,
    pub balance: bool,
    /// Share of training subjects (per majority label) used for validation.
    pub val_fraction: f64,
    pub train: TrainConfig,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig { tests_per_subject: None, seed: 0, balance: true, val_fraction: VAL_FRACTION, train: TrainConfig::default() }
    }
}

impl FitConfig {
    pub const KEYS: &'static [&'static str] = &["tests_per_subject", "seed", "balance", "val_fraction", "train"];

    pub fn validate(&self) -> Result<()> {
        if self.tests_per_subject == Some(0) {
            return Err(Error::Spec("tests_per_subject must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Spec("val_fraction must lie in [0, 1)".into()));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub bundle: ModelBundle,
    pub history: History,
    pub split: Fold,
    pub holdout: Option<LevelMetrics>,
    pub epoch_preds: Vec<EpochPred>,
}

/// Splits subjects into training and validation, about `fraction` of each
/// stratum going to validation (at least one once a stratum has two).
pub fn split_validation(strata: &BTreeMap<String, usize>, fraction: f64, seed_value: u64) -> (Vec<String>, Vec<String>) {
    let mut by: BTreeMap<usize, Vec<&String>> = BTreeMap::new();
    for (s, &c) in strata {
        by.entry(c).or_default().push(s);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_value, &[0x5a1]));
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for members in by.values_mut() {
        members.shuffle(&mut rng);
        let n = members.len();
        let n_val = if fraction > 0.0 && n >= 2 { ((n as f64 * fraction).round() as usize).max(1) } else { 0 };
        for (i, s) in members.iter().enumerate() {
            if i < n_val { val.push((*s).clone()) } else { train.push((*s).clone()) }
        }
    }
    train.sort();
    val.sort();
    (train, val)
}

/// Majority task class of every subject with task epochs (0 for all when
/// not stratifying).
fn task_strata(d: &Dataset, map: &[Option<usize>], stratify: bool, n: usize) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for e in &d.epochs {
        if let Some(c) = map[e.label] {
            counts.entry(&e.subject_id).or_insert_with(|| vec![0; n])[c] += 1;
        }
    }
    counts.into_iter().map(|(s, c)| (s.to_string(), if stratify { argmax(&c) } else { 0 })).collect()
}

/// Trains one model on every task subject outside `test_subjects` and, when
/// that list is non-empty, scores the held-out subjects.
pub fn fit_holdout(d: &Dataset, task: &Task, recipe: &Recipe, cfg: &FitConfig, test_subjects: &[String]) -> Result<FitOutput> {
    cfg.validate()?;
    let map = task.mapping(d)?;
    let labels = task.labels();
    let mut strata = task_strata(d, &map, true, labels.len());
    let test: Vec<String> = test_subjects.iter().filter(|s| strata.contains_key(*s)).cloned().collect();
    if test.len() != test_subjects.len() {
        return Err(Error::Spec("held-out subjects must belong to the task".into()));
    }
    strata.retain(|s, _| !test.contains(s));
    let (train, val) = split_validation(&strata, cfg.val_fraction, cfg.seed);
    let fold = Fold { index: 0, train, val, test };
    let settings = SplitSettings { tests_per_subject: cfg.tests_per_subject, balance: cfg.balance, seed: cfg.seed, train: &cfg.train };
    let o = run_fold(d, &map, &labels, &fold, recipe, &settings)?;
    Ok(FitOutput { bundle: o.bundle, history: o.history, split: fold, holdout: o.report.metrics, epoch_preds: o.epochs })
}

// ---------------------------------------------------------------- output

pub const REPORT_FILE: &str = "report.json";
pub const EPOCH_PREDS_FILE: &str = "epoch_preds.csv";
pub const TEST_PREDS_FILE: &str = "test_preds.csv";
pub const SUBJECT_PREDS_FILE: &str = "subject_preds.csv";
pub const METRICS_FILE: &str = "metrics.csv";

fn post_header(labels: &[String]) -> String {
    labels.iter().map(|l| format!(",p_{l}")).collect()
}

fn post_cols(p: &[f64]) -> String {
    p.iter().map(|v| format!(",{v}")).collect()
}

pub fn epoch_preds_csv(r: &EvalReport) -> String {
    let labels = r.task.labels();
    let mut s = format!("fold,record,subject_id,test_id,epoch_index,true_label,pred_label{}\n", post_header(&labels));
    for (f, e) in &r.epoch_preds {
        let _ = writeln!(
            s,
            "{f},{},{},{},{},{},{}{}",
            e.record,
            e.subject_id,
            e.test_id,
            e.epoch_index,
            labels[e.true_label],
            labels[e.pred()],
            post_cols(&e.posteriors)
        );
    }
    s
}

fn votes_csv(rows: &[(usize, VotePred)], labels: &[String], id_col: &str) -> String {
    let mut s = format!("fold,subject_id,{id_col}true_label,pred_label,n_votes{}\n", post_header(labels));
    for (f, v) in rows {
        let id = if id_col.is_empty() { String::new() } else { format!("{},", v.id) };
        let _ = writeln!(
            s,
            "{f},{},{id}{},{},{}{}",
            v.subject_id,
            labels[v.true_label],
            labels[v.pred],
            v.votes.iter().sum::<usize>(),
            post_cols(&v.mean_posteriors)
        );
    }
    s
}

pub fn metrics_csv(r: &EvalReport) -> String {
    let mut s = String::from("scope,level,acc,plain_acc,kappa,mf1\n");
    let mut row = |scope: &str, level: &str, m: &Metrics| {
        let _ = writeln!(s, "{scope},{level},{},{},{},{}", m.acc, m.plain_acc, m.kappa, m.mf1);
    };
    for f in &r.folds {
        let scope = format!("fold{}", f.fold);
        if let Some(m) = &f.metrics {
            row(&scope, "epoch", &m.epoch);
            row(&scope, "test", &m.test);
            row(&scope, "subject", &m.subject);
        }
    }
    row("pooled", "epoch", &r.pooled.epoch);
    row("pooled", "test", &r.pooled.test);
    row("pooled", "subject", &r.pooled.subject);
    let t = &r.test_spread;
    let _ = writeln!(s, "median,test,{},,{},{}", t.acc.median, t.kappa.median, t.mf1.median);
    let _ = writeln!(s, "iqr,test,{},,{},{}", t.acc.iqr, t.kappa.iqr, t.mf1.iqr);
    s
}

/// Writes `report.json` and the four CSV tables into `dir`.
pub fn write_report(r: &EvalReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let labels = r.task.labels();
    let files = [
        (REPORT_FILE, serde_json::to_string_pretty(r).expect("report serializes") + "\n"),
        (EPOCH_PREDS_FILE, epoch_preds_csv(r)),
        (TEST_PREDS_FILE, votes_csv(&r.test_preds, &labels, "test_id,")),
        (SUBJECT_PREDS_FILE, votes_csv(&r.subject_preds, &labels, "")),
        (METRICS_FILE, metrics_csv(r)),
    ];
    for (name, body) in files {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}
