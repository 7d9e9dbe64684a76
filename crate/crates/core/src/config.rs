//! Strict JSON configuration loading and per-run reproducibility manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checksum::{config_hash, fnv1a64_hex};
use crate::datasets::SynthCohortSpec;
use crate::error::{Error, Result};
use crate::eval::{CvConfig, FitConfig};
use crate::nn::TrainConfig;

pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

/// A JSON configuration with a closed key set.
pub trait Config: Serialize + DeserializeOwned + Default {
    const KEYS: &'static [&'static str];
    /// Keys whose value is itself a closed object.
    const NESTED: &'static [(&'static str, &'static [&'static str])] = &[];
    fn check(&self) -> Result<()>;
}

impl Config for TrainConfig {
    const KEYS: &'static [&'static str] = TrainConfig::KEYS;
    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl Config for CvConfig {
    const KEYS: &'static [&'static str] = CvConfig::KEYS;
    const NESTED: &'static [(&'static str, &'static [&'static str])] = &[("train", TrainConfig::KEYS)];
    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl Config for FitConfig {
    const KEYS: &'static [&'static str] = FitConfig::KEYS;
    const NESTED: &'static [(&'static str, &'static [&'static str])] = &[("train", TrainConfig::KEYS)];
    fn check(&self) -> Result<()> {
        self.validate()
    }
}

impl Config for SynthCohortSpec {
    const KEYS: &'static [&'static str] = SynthCohortSpec::KEYS;
    fn check(&self) -> Result<()> {
        self.validate()
    }
}

fn unknown_keys(v: &Value, keys: &[&str], prefix: &str, out: &mut Vec<String>) {
    if let Value::Object(m) = v {
        out.extend(m.keys().filter(|k| !keys.contains(&k.as_str())).map(|k| format!("{prefix}{k}")));
    }
}

/// Parses `text` into `C`, rejecting every unknown key (all of them are
/// listed), filling defaults and validating the result.
pub fn parse_config<C: Config>(text: &str) -> Result<C> {
    let v: Value = serde_json::from_str(text).map_err(|e| Error::Spec(format!("config is not valid JSON: {e}")))?;
    if !v.is_object() {
        return Err(Error::Spec("config must be a JSON object".into()));
    }
    let mut bad = Vec::new();
    unknown_keys(&v, C::KEYS, "", &mut bad);
    for (key, inner) in C::NESTED {
        if let Some(sub) = v.get(*key) {
            unknown_keys(sub, inner, &format!("{key}."), &mut bad);
        }
    }
    if !bad.is_empty() {
        return Err(Error::Spec(format!("unknown config keys: {}", bad.join(", "))));
    }
    let c: C = serde_json::from_value(v).map_err(|e| Error::Spec(format!("config: {e}")))?;
    c.check()?;
    Ok(c)
}

/// Reads a config file; `None` yields the defaults.
pub fn load_config<C: Config>(path: Option<&Path>) -> Result<C> {
    match path {
        None => {
            let c = C::default();
            c.check()?;
            Ok(c)
        }
        Some(p) => parse_config(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub command_line: Vec<String>,
    pub tool_version: String,
    pub seed: Option<u64>,
    /// Effective configuration after defaults.
    pub config: Option<Value>,
    pub config_hash: Option<String>,
    /// FNV-1a 64 of every input file; directories hash their files in name order.
    pub input_checksums: BTreeMap<String, String>,
    pub started_at: String,
    pub finished_at: String,
}

/// Current UTC time, RFC 3339 with milliseconds.
pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

impl RunManifest {
    pub fn start(command: &str, command_line: Vec<String>) -> Self {
        RunManifest {
            command: command.into(),
            command_line,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            seed: None,
            config: None,
            config_hash: None,
            input_checksums: BTreeMap::new(),
            started_at: timestamp(),
            finished_at: String::new(),
        }
    }

    pub fn with_config<C: Serialize>(&mut self, c: &C) {
        self.config = Some(serde_json::to_value(c).expect("config serializes"));
        self.config_hash = Some(config_hash(c));
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.input_checksums.insert(path.display().to_string(), path_checksum(path)?);
        Ok(())
    }

    /// Stamps the end time and writes `run_manifest.json` into `dir` via a
    /// temporary file and rename.
    pub fn finish(mut self, dir: &Path) -> Result<()> {
        self.finished_at = timestamp();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let body = serde_json::to_string_pretty(&self).expect("manifest serializes") + "\n";
        let tmp = dir.join(format!(".{RUN_MANIFEST_FILE}.tmp"));
        fs::write(&tmp, body).map_err(|e| Error::io(&tmp, e))?;
        let dst = dir.join(RUN_MANIFEST_FILE);
        fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))
    }
}

fn files_under(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            files_under(&p, out)?;
        } else if p.file_name().is_some_and(|n| n != RUN_MANIFEST_FILE) {
            out.push(p);
        }
    }
    Ok(())
}

/// Content hash of a file, or of a directory's files (relative name and
/// bytes, in sorted order; run manifests excluded).
pub fn path_checksum(path: &Path) -> Result<String> {
    if path.is_dir() {
        let mut files = Vec::new();
        files_under(path, &mut files)?;
        let mut buf = Vec::new();
        for f in files {
            let rel = f.strip_prefix(path).unwrap_or(&f);
            buf.extend_from_slice(rel.to_string_lossy().as_bytes());
            buf.push(0);
            buf.extend(fs::read(&f).map_err(|e| Error::io(&f, e))?);
            buf.push(0);
        }
        Ok(fnv1a64_hex(&buf))
    } else {
        Ok(fnv1a64_hex(&fs::read(path).map_err(|e| Error::io(path, e))?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(parse_config::<TrainConfig>("{}").unwrap(), TrainConfig::default());
        assert_eq!(parse_config::<CvConfig>("{}").unwrap(), CvConfig::default());
        assert_eq!(parse_config::<SynthCohortSpec>("{}").unwrap(), SynthCohortSpec::default());
    }

    #[test]
    fn rejects_bad_values_and_lists_unknown_keys() {
        assert!(parse_config::<TrainConfig>(r#"{"learning_rate": -1}"#).is_err());
        let e = parse_config::<CvConfig>(r#"{"kk": 1, "train": {"lr": 1, "epochs": 2}, "zz": 0}"#).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("kk") && msg.contains("zz") && msg.contains("train.lr"), "{msg}");
        assert!(e.is_validation());
        let c: CvConfig = parse_config(r#"{"k": 3, "train": {"epochs": 2}}"#).unwrap();
        assert_eq!((c.k, c.train.epochs, c.train.batch_size), (3, 2, 64));
    }

    #[test]
    fn manifest_is_written_once() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.txt"), "x").unwrap();
        let before = path_checksum(dir.path()).unwrap();
        let mut m = RunManifest::start("test", vec!["ambulate".into()]);
        m.with_config(&TrainConfig::default());
        m.add_input(&dir.path().join("a.txt")).unwrap();
        m.finish(dir.path()).unwrap();
        assert_eq!(path_checksum(dir.path()).unwrap(), before);
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 2);
        let back: RunManifest = serde_json::from_str(&fs::read_to_string(dir.path().join(RUN_MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(back.config.unwrap()["epochs"], 100);
    }
}
