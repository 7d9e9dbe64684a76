//! Command-line front end. `dispatch` parses arguments, runs one subcommand
//! and maps the outcome to an exit code: 0 success, 1 invalid input, 2
//! runtime failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{load_config, RunManifest};
use crate::container::{load_container, save_container};
use crate::datasets::{generate_synthetic_cohort, load_ucihar, load_wisdm, ucihar, Dataset, Role, SynthCohortSpec};
use crate::dba::{dba_average, select_representative_epochs, DbaOptions, EpochPosterior, RepresentativeSelection};
use crate::error::Error;
use crate::eval::{fit_holdout, run_cv, write_report, CvConfig, FitConfig, Recipe, Task};
use crate::lrp::{conservation_csv, conservation_report, export_heatmap, Explainer, LrpRules, CHANNEL_NAMES};
use crate::model::ModelBundle;
use crate::nn::argmax;
use crate::signal::{epochs_to_csv, parse_epoch_csv, parse_trace_csv, preprocess_pipeline, preprocess_trace, Epoch, TARGET_RATE_HZ};
use crate::timefreq::{cwt_morlet, default_grid, log_grid};
use crate::transfer::TransferMode;

#[derive(Debug, Parser)]
#[command(name = "ambulate", version, about = "Smartphone gait classification: training, transfer, evaluation and explanations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a public HAR corpus into an epoch container.
    Load(LoadArgs),
    /// Generate the synthetic gait cohort as an epoch container.
    Synth(SynthArgs),
    /// Turn a raw `t,ax,ay,az` trace into epochs.
    Preprocess(PreprocessArgs),
    /// Train a source model end to end.
    TrainHar(TrainHarArgs),
    /// Transfer a source model to a target dataset and fine-tune it.
    Transfer(TransferArgs),
    /// Subject-wise cross-validation of a model recipe.
    Evaluate(EvaluateArgs),
    /// Relevance heatmaps for epochs.
    Explain(ExplainArgs),
    /// Morlet scalogram of one channel of a trace.
    Cwt(CwtArgs),
    /// DTW barycenter of confidently classified epochs of one class.
    Dba(DbaArgs),
    /// Print a model's architecture and parameter counts.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DatasetKind {
    Ucihar,
    Wisdm,
}

#[derive(Debug, Args)]
pub struct LoadArgs {
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetKind>,
    /// Dataset directory (UCI HAR) or raw file (WISDM).
    #[arg(long)]
    pub path: Option<PathBuf>,
    /// Output container directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Overrides the seed in the config.
    #[arg(long, env = "AMBULATE_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Cohort JSON; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// A `.csv` path writes epoch CSV, anything else a container.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "subject")]
    pub subject: String,
    #[arg(long, default_value = "test")]
    pub test: String,
    #[arg(long, default_value = "unlabeled")]
    pub label: String,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Holdout {
    /// Hold out the distributed UCI HAR test partition when present.
    Auto,
    None,
}

#[derive(Debug, Args)]
pub struct TrainHarArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "all")]
    pub task: String,
    #[arg(long, value_enum, default_value = "auto")]
    pub holdout: Holdout,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// direct, fixed, end_to_end or full.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "all")]
    pub task: String,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// hc-mild, mild-mod, hc-mod, all, or a comma-separated label list.
    #[arg(long, default_value = "all")]
    pub task: String,
    /// end2end, direct, fixed or full.
    #[arg(long, default_value = "end2end")]
    pub recipe: String,
    /// Source model directory for transfer recipes.
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Folds trained concurrently.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Container directory or epoch CSV.
    #[arg(long)]
    pub epochs: Option<PathBuf>,
    /// Class name, or `argmax` for each epoch's predicted class.
    #[arg(long, default_value = "argmax")]
    pub class: String,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also render an SVG per epoch.
    #[arg(long)]
    pub svg: bool,
    /// Only these container records (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub records: Option<Vec<usize>>,
    /// At most this many epochs, taken in record order.
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct CwtArgs {
    /// `t,ax,ay,az` trace; it is preprocessed to 50 Hz first.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "mag")]
    pub channel: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub fmin: Option<f64>,
    #[arg(long)]
    pub fmax: Option<f64>,
    #[arg(long, default_value_t = 12)]
    pub voices: usize,
}

#[derive(Debug, Args)]
pub struct DbaArgs {
    /// `epoch_preds.csv` from `evaluate`.
    #[arg(long)]
    pub preds: Option<PathBuf>,
    #[arg(long)]
    pub class: Option<String>,
    /// The container the predictions refer to.
    #[arg(long)]
    pub epochs: Option<PathBuf>,
    /// Output epoch CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.85)]
    pub min_posterior: f64,
    #[arg(long, default_value_t = 40)]
    pub max_per_test: usize,
    #[arg(long, default_value_t = 2000)]
    pub count: usize,
    #[arg(long, default_value_t = 10)]
    pub iterations: usize,
    /// Search the medoid among this many sampled candidates.
    #[arg(long)]
    pub medoid_sample: Option<usize>,
    #[command(flatten)]
    pub seed: SeedArg,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
}

type CliResult<T> = std::result::Result<T, CliError>;

fn need<'a, T>(v: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    v.as_ref().ok_or_else(|| CliError::Usage(format!("missing {flag}")))
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn dispatch<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let line: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli.command, line) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(CliError::Run(e)) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

fn run(cmd: Command, line: Vec<String>) -> CliResult<()> {
    match cmd {
        Command::Load(a) => load(a, line),
        Command::Synth(a) => synth(a, line),
        Command::Preprocess(a) => preprocess(a, line),
        Command::TrainHar(a) => train_har(a, line),
        Command::Transfer(a) => transfer(a, line),
        Command::Evaluate(a) => evaluate(a, line),
        Command::Explain(a) => explain(a, line),
        Command::Cwt(a) => cwt(a, line),
        Command::Dba(a) => dba(a, line),
        Command::Inspect(a) => inspect(a),
    }
}

fn parent_dir(file: &Path) -> PathBuf {
    match file.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn write_file(path: &Path, body: &str) -> CliResult<()> {
    let dir = parent_dir(path);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    fs::write(path, body).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn load(a: LoadArgs, line: Vec<String>) -> CliResult<()> {
    let kind = *need(&a.dataset, "--dataset")?;
    let path = need(&a.path, "--path")?;
    let out = need(&a.out, "--out")?;
    let mut m = RunManifest::start("load", line);
    m.add_input(path)?;
    let d = match kind {
        DatasetKind::Ucihar => load_ucihar(path)?,
        DatasetKind::Wisdm => load_wisdm(path)?,
    };
    save_container(out, &d, None)?;
    println!("{}: {} epochs from {} subjects", d.name, d.epochs.len(), d.subjects.len());
    m.finish(out)?;
    Ok(())
}

fn synth(a: SynthArgs, line: Vec<String>) -> CliResult<()> {
    let out = need(&a.out, "--out")?;
    let mut spec: SynthCohortSpec = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed.seed {
        spec.seed = s;
    }
    let mut m = RunManifest::start("synth", line);
    if let Some(p) = &a.config {
        m.add_input(p)?;
    }
    m.with_config(&spec);
    m.seed = Some(spec.seed);
    let cohort = generate_synthetic_cohort(&spec)?;
    save_container(out, &cohort.dataset, Some(&cohort.bursts))?;
    println!("synthetic cohort: {} epochs from {} subjects", cohort.dataset.epochs.len(), cohort.dataset.subjects.len());
    m.finish(out)?;
    Ok(())
}

fn preprocess(a: PreprocessArgs, line: Vec<String>) -> CliResult<()> {
    let input = need(&a.input, "--in")?;
    let out = need(&a.out, "--out")?;
    let mut m = RunManifest::start("preprocess", line);
    m.add_input(input)?;
    let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let trace = parse_trace_csv(&text, &a.subject, &a.test, 0)?;
    let epochs = preprocess_pipeline(&trace)?;
    if out.extension().is_some_and(|e| e == "csv") {
        write_file(out, &epochs_to_csv(&epochs))?;
        m.finish(&parent_dir(out))?;
    } else {
        let d = Dataset::new("trace", Role::Target, vec![a.label.clone()], epochs)?;
        save_container(out, &d, None)?;
        m.finish(out)?;
    }
    Ok(())
}

fn load_data(path: &Path, m: &mut RunManifest) -> CliResult<Dataset> {
    m.add_input(path)?;
    Ok(load_container(path)?.0)
}

fn fit_config(path: Option<&Path>, seed: Option<u64>, m: &mut RunManifest) -> CliResult<FitConfig> {
    let mut cfg: FitConfig = load_config(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(p) = path {
        m.add_input(p)?;
    }
    m.with_config(&cfg);
    m.seed = Some(cfg.seed);
    Ok(cfg)
}

fn write_fit_outputs(out: &Path, fit: &crate::eval::FitOutput) -> CliResult<()> {
    fit.bundle.save(out)?;
    write_file(&out.join("history.csv"), &fit.history.to_csv())?;
    let split = serde_json::to_string_pretty(&fit.split).expect("split serializes") + "\n";
    write_file(&out.join("split.json"), &split)?;
    if let Some(h) = &fit.holdout {
        let body = serde_json::to_string_pretty(h).expect("metrics serialize") + "\n";
        write_file(&out.join("holdout_metrics.json"), &body)?;
        println!(
            "held-out epochs: acc {:.4} (plain {:.4}), kappa {:.4}, mf1 {:.4}",
            h.epoch.acc, h.epoch.plain_acc, h.epoch.kappa, h.epoch.mf1
        );
    }
    Ok(())
}

fn train_har(a: TrainHarArgs, line: Vec<String>) -> CliResult<()> {
    let data = need(&a.data, "--data")?;
    let out = need(&a.out, "--out")?;
    let mut m = RunManifest::start("train-har", line);
    let cfg = fit_config(a.config.as_deref(), a.seed.seed, &mut m)?;
    let d = load_data(data, &mut m)?;
    let task = Task::parse(&a.task, &d)?;
    let held = match a.holdout {
        Holdout::Auto => ucihar::test_partition_subjects(&d),
        Holdout::None => Vec::new(),
    };
    let fit = fit_holdout(&d, &task, &Recipe::EndToEnd, &cfg, &held)?;
    write_fit_outputs(out, &fit)?;
    m.finish(out)?;
    Ok(())
}

fn transfer(a: TransferArgs, line: Vec<String>) -> CliResult<()> {
    let source = need(&a.source, "--source")?;
    let mode: TransferMode = need(&a.mode, "--mode")?.parse()?;
    let target = need(&a.target, "--target")?;
    let out = need(&a.out, "--out")?;
    let mut m = RunManifest::start("transfer", line);
    let cfg = fit_config(a.config.as_deref(), a.seed.seed, &mut m)?;
    m.add_input(source)?;
    let bundle = ModelBundle::load(source)?;
    let d = load_data(target, &mut m)?;
    let task = Task::parse(&a.task, &d)?;
    let fit = fit_holdout(&d, &task, &Recipe::Transfer { mode, source: Box::new(bundle) }, &cfg, &[])?;
    write_fit_outputs(out, &fit)?;
    m.finish(out)?;
    Ok(())
}

fn evaluate(a: EvaluateArgs, line: Vec<String>) -> CliResult<()> {
    let data = need(&a.data, "--data")?;
    let out = need(&a.out, "--out")?;
    let mut m = RunManifest::start("evaluate", line);
    let mut cfg: CvConfig = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed.seed {
        cfg.seed = s;
    }
    if let Some(j) = a.jobs {
        cfg.jobs = j.max(1);
    }
    if let Some(p) = &a.config {
        m.add_input(p)?;
    }
    m.with_config(&cfg);
    m.seed = Some(cfg.seed);
    let mode: TransferMode = a.recipe.parse()?;
    let recipe = if mode == TransferMode::EndToEnd {
        Recipe::EndToEnd
    } else {
        let src = need(&a.source, "--source")?;
        m.add_input(src)?;
        Recipe::Transfer { mode, source: Box::new(ModelBundle::load(src)?) }
    };
    let d = load_data(data, &mut m)?;
    let task = Task::parse(&a.task, &d)?;
    let report = run_cv(&d, &task, &recipe, &cfg)?;
    write_report(&report, out)?;
    let p = &report.pooled;
    println!(
        "{} {} on {}: mean epoch acc {:.4}, pooled test acc {:.4} kappa {:.4}, pooled subject acc {:.4} kappa {:.4} mf1 {:.4}",
        report.recipe, task.name, d.name, report.mean_epoch_acc, p.test.acc, p.test.kappa, p.subject.acc, p.subject.kappa, p.subject.mf1
    );
    m.finish(out)?;
    Ok(())
}

fn explain(a: ExplainArgs, line: Vec<String>) -> CliResult<()> {
    let model = need(&a.model, "--model")?;
    let src = need(&a.epochs, "--epochs")?;
    let out = need(&a.out, "--out")?;
    let rules = LrpRules { alpha: a.alpha, beta: a.beta, epsilon: a.epsilon };
    rules.validate()?;
    let mut m = RunManifest::start("explain", line);
    m.with_config(&rules);
    m.add_input(model)?;
    m.add_input(src)?;
    let bundle = ModelBundle::load(model)?;
    let fixed_class = match a.class.as_str() {
        "argmax" => None,
        name => Some(bundle.class_index(name).ok_or_else(|| Error::Spec(format!("model has no class {name:?}")))?),
    };
    let epochs: Vec<Epoch> = if src.is_dir() {
        load_container(src)?.0.epochs
    } else {
        let text = fs::read_to_string(src).map_err(|e| Error::io(src, e))?;
        parse_epoch_csv(&text, "input", "input", 0)?
    };
    let mut chosen: Vec<usize> = match &a.records {
        Some(r) => {
            if let Some(bad) = r.iter().find(|&&i| i >= epochs.len()) {
                return Err(Error::Spec(format!("record {bad} out of range ({} epochs)", epochs.len())).into());
            }
            r.clone()
        }
        None => (0..epochs.len()).collect(),
    };
    if let Some(l) = a.limit {
        chosen.truncate(l);
    }
    if chosen.is_empty() {
        return Err(Error::Spec("no epochs to explain".into()).into());
    }
    let explainer = Explainer::new(&bundle)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let one = |rec: usize| -> crate::Result<(usize, crate::lrp::RelevanceMap)> {
        let e = &epochs[rec];
        let class = match fixed_class {
            Some(c) => c,
            None => argmax(&bundle.predict(&[&e.data])?[0]),
        };
        let map = explainer.explain(&e.data, class, &rules)?;
        let svg = a.svg.then(|| out.join(format!("epoch_{rec:06}.svg")));
        export_heatmap(&map, e, &out.join(format!("epoch_{rec:06}.csv")), svg.as_deref())?;
        Ok((rec, map))
    };
    let jobs = a.jobs.max(1);
    let mut results = Vec::with_capacity(chosen.len());
    for chunk in chosen.chunks(jobs) {
        let part: Vec<crate::Result<_>> = std::thread::scope(|s| {
            let hs: Vec<_> = chunk.iter().map(|&r| s.spawn(move || one(r))).collect();
            hs.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(Error::Numerical("explanation thread panicked".into())))).collect()
        });
        for r in part {
            results.push(r?);
        }
    }
    let mut summary = String::from("record,subject_id,test_id,epoch_index,class,logit,total_relevance");
    for c in CHANNEL_NAMES {
        let _ = write!(summary, ",relevance_{c}");
    }
    summary.push('\n');
    let mut reports = Vec::new();
    for (rec, map) in &results {
        let e = &epochs[*rec];
        let _ = write!(
            summary,
            "{rec},{},{},{},{},{},{}",
            e.subject_id, e.test_id, e.epoch_index, bundle.label_space[map.explained_class], map.explained_logit, map.total()
        );
        for t in &map.per_channel_totals {
            let _ = write!(summary, ",{t}");
        }
        summary.push('\n');
        reports.push((rec.to_string(), conservation_report(map)));
    }
    write_file(&out.join("summary.csv"), &summary)?;
    write_file(&out.join("conservation.csv"), &conservation_csv(&reports))?;
    println!("explained {} epochs into {}", results.len(), out.display());
    m.finish(out)?;
    Ok(())
}

fn cwt(a: CwtArgs, line: Vec<String>) -> CliResult<()> {
    let input = need(&a.input, "--in")?;
    let out = need(&a.out, "--out")?;
    let c = CHANNEL_NAMES
        .iter()
        .position(|n| *n == a.channel)
        .ok_or_else(|| CliError::Usage(format!("--channel must be one of {}", CHANNEL_NAMES.join(", "))))?;
    let mut m = RunManifest::start("cwt", line);
    m.add_input(input)?;
    let text = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let trace = preprocess_trace(&parse_trace_csv(&text, "input", "input", 0)?)?;
    let freqs = match (a.fmin, a.fmax) {
        (None, None) if a.voices == 12 => default_grid(),
        (lo, hi) => log_grid(lo.unwrap_or(0.3), hi.unwrap_or(17.0), a.voices),
    };
    if freqs.is_empty() {
        return Err(Error::Spec("empty frequency grid".into()).into());
    }
    let s = cwt_morlet(&trace.channels[c], TARGET_RATE_HZ, &freqs)?;
    write_file(out, &s.to_csv())?;
    m.finish(&parent_dir(out))?;
    Ok(())
}

/// Parses `epoch_preds.csv`, keeping the first row of every record.
fn read_preds(text: &str) -> crate::Result<(Vec<String>, Vec<EpochPosterior>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| Error::DatasetFormat("empty predictions file".into()))?.split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or_else(|| Error::DatasetFormat(format!("predictions lack column {name}")));
    let (rec_c, test_c, true_c) = (col("record")?, col("test_id")?, col("true_label")?);
    let post_cols: Vec<(usize, String)> =
        header.iter().enumerate().filter_map(|(i, h)| h.strip_prefix("p_").map(|l| (i, l.to_string()))).collect();
    if post_cols.is_empty() {
        return Err(Error::DatasetFormat("predictions lack posterior columns".into()));
    }
    let labels: Vec<String> = post_cols.iter().map(|(_, l)| l.clone()).collect();
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::DatasetFormat(format!("predictions row {}", i + 2));
        if f.len() != header.len() {
            return Err(bad());
        }
        let record: usize = f[rec_c].parse().map_err(|_| bad())?;
        if !seen.insert(record) {
            continue;
        }
        let true_label = labels.iter().position(|l| l == f[true_c]).ok_or_else(bad)?;
        let posteriors = post_cols.iter().map(|(c, _)| f[*c].parse::<f64>().map_err(|_| bad())).collect::<crate::Result<_>>()?;
        out.push(EpochPosterior { record, test_id: f[test_c].to_string(), true_label, posteriors });
    }
    Ok((labels, out))
}

fn dba(a: DbaArgs, line: Vec<String>) -> CliResult<()> {
    let preds_path = need(&a.preds, "--preds")?;
    let class = need(&a.class, "--class")?;
    let container = need(&a.epochs, "--epochs")?;
    let out = need(&a.out, "--out")?;
    let seed = a.seed.seed.unwrap_or(0);
    let sel = RepresentativeSelection { min_posterior: a.min_posterior, max_epochs_per_test: a.max_per_test, target_count: a.count, seed };
    let opts = DbaOptions { iterations: a.iterations, medoid_sample: a.medoid_sample, seed };
    let mut m = RunManifest::start("dba", line);
    m.with_config(&(sel, opts));
    m.seed = Some(seed);
    m.add_input(preds_path)?;
    let text = fs::read_to_string(preds_path).map_err(|e| Error::io(preds_path, e))?;
    let (labels, preds) = read_preds(&text)?;
    let ci = labels.iter().position(|l| l == class).ok_or_else(|| Error::Spec(format!("class {class:?} not in predictions")))?;
    let d = load_data(container, &mut m)?;
    if let Some(p) = preds.iter().find(|p| p.record >= d.epochs.len()) {
        return Err(Error::Spec(format!("record {} is not in the container", p.record)).into());
    }
    let records = select_representative_epochs(&preds, ci, &sel)?;
    let seqs: Vec<&[f32]> = records.iter().map(|&r| d.epochs[r].data.as_slice()).collect();
    let res = dba_average(&seqs, crate::signal::EPOCH_CHANNELS, &opts)?;
    let avg = Epoch::new(res.average.clone(), format!("dba-{class}"), format!("dba-{class}"), 0, 0)?;
    write_file(out, &epochs_to_csv(&[avg]))?;
    println!(
        "averaged {} {class} epochs; medoid record {}; inertia {:.6} -> {:.6}",
        records.len(),
        records[res.medoid],
        res.inertia[0],
        res.inertia.iter().copied().fold(f64::INFINITY, f64::min)
    );
    m.finish(&parent_dir(out))?;
    Ok(())
}

fn inspect(a: InspectArgs) -> CliResult<()> {
    let dir = need(&a.model, "--model")?;
    let b = ModelBundle::load(dir)?;
    let shapes = b.spec.shapes()?;
    println!("input: {}×{}", b.spec.input_channels, b.spec.input_len);
    println!("labels: {}", b.label_space.join(", "));
    println!("{:>3}  {:<10} {:>10} {:>10} {:>7}", "#", "layer", "output", "params", "frozen");
    for (i, l) in b.spec.layers.iter().enumerate() {
        let shape = &shapes[i + 1];
        let params = b.params.layers[i].weight.len() + b.params.layers[i].bias.len();
        println!("{i:>3}  {:<10} {:>10} {params:>10} {:>7}", l.name(), match shape {
            crate::nn::Shape::Seq { channels, len } => format!("{channels}×{len}"),
            crate::nn::Shape::Flat(n) => n.to_string(),
        }, b.frozen_mask[i]);
    }
    println!("total parameters: {}", b.spec.param_count());
    println!("trainable parameters: {}", (0..b.spec.layers.len()).filter(|&i| !b.frozen_mask[i]).map(|i| b.params.layers[i].weight.len() + b.params.layers[i].bias.len()).sum::<usize>());
    println!("provenance: {}", serde_json::to_string(&b.provenance).expect("provenance serializes"));
    Ok(())
}
