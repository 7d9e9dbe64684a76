//! WISDM v1.1 raw accelerometer file parser.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Dataset, Role};
use crate::error::{Error, Result};
use crate::signal::{preprocess_pipeline, SensorTrace};

pub const LABELS: [&str; 5] = ["walking", "stairs", "sitting", "standing", "jogging"];
/// Nominal rate of the phone recordings.
pub const NATIVE_RATE_HZ: f64 = 20.0;
/// Segments break on gaps longer than this.
pub const MAX_GAP_NS: i64 = 1_000_000_000;
/// Largest tolerated share of malformed records.
pub const MAX_MALFORMED_FRACTION: f64 = 0.05;

pub fn map_activity(name: &str) -> Option<usize> {
    match name.trim().to_ascii_lowercase().as_str() {
        "walking" => Some(0),
        "upstairs" | "downstairs" => Some(1),
        "sitting" => Some(2),
        "standing" => Some(3),
        "jogging" => Some(4),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WisdmRecord {
    pub user: String,
    pub label: usize,
    pub timestamp_ns: i64,
    pub xyz: [f64; 3],
}

pub fn parse_record(rec: &str) -> Option<WisdmRecord> {
    let rec = rec.trim().trim_end_matches(',');
    let f: Vec<&str> = rec.split(',').map(str::trim).collect();
    if f.len() != 6 || f[0].is_empty() {
        return None;
    }
    let label = map_activity(f[1])?;
    let timestamp_ns = f[2].parse::<i64>().ok()?;
    let mut xyz = [0.0; 3];
    for (v, s) in xyz.iter_mut().zip(&f[3..]) {
        *v = s.parse::<f64>().ok().filter(|v| v.is_finite())?;
    }
    Some(WisdmRecord { user: f[0].to_string(), label, timestamp_ns, xyz })
}

#[derive(Debug, Clone, PartialEq)]
pub struct WisdmParse {
    pub traces: Vec<SensorTrace>,
    pub records: usize,
    pub malformed: usize,
}

/// Splits the text into records on ';' and newlines and groups contiguous
/// records into traces. A trace ends when the user or activity changes or
/// the timestamp jumps backwards or by more than one second.
pub fn parse_wisdm(text: &str) -> Result<WisdmParse> {
    let mut records = 0;
    let mut malformed = 0;
    let mut segments: Vec<Vec<WisdmRecord>> = Vec::new();
    for raw in text.split([';', '\n']) {
        if raw.trim().is_empty() {
            continue;
        }
        records += 1;
        let Some(r) = parse_record(raw) else {
            malformed += 1;
            continue;
        };
        let split = match segments.last().and_then(|s| s.last()) {
            Some(p) => {
                let dt = r.timestamp_ns - p.timestamp_ns;
                p.user != r.user || p.label != r.label || !(0..=MAX_GAP_NS).contains(&dt)
            }
            None => true,
        };
        if split {
            segments.push(Vec::new());
        }
        segments.last_mut().unwrap().push(r);
    }
    if records == 0 {
        return Err(Error::DatasetFormat("no records found".into()));
    }
    if malformed as f64 > MAX_MALFORMED_FRACTION * records as f64 {
        return Err(Error::DatasetFormat(format!("{malformed} of {records} records are malformed")));
    }
    let mut per_user: BTreeMap<String, usize> = BTreeMap::new();
    let mut traces = Vec::with_capacity(segments.len());
    for seg in segments {
        let user = seg[0].user.clone();
        let k = per_user.entry(user.clone()).or_insert(0);
        let channels = (0..3).map(|c| seg.iter().map(|r| r.xyz[c]).collect()).collect();
        traces.push(SensorTrace {
            subject_id: user.clone(),
            test_id: format!("{user}-{k}"),
            label: seg[0].label,
            sample_rate_hz: NATIVE_RATE_HZ,
            channels,
        });
        *k += 1;
    }
    Ok(WisdmParse { traces, records, malformed })
}

/// Parses the file and preprocesses every segment. Segments the pipeline
/// rejects (too short, degenerate) are dropped with a warning.
pub fn load_wisdm(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::DatasetFormat(format!("{}: {e}", path.display())))?;
    let text = String::from_utf8_lossy(&bytes);
    let parsed = parse_wisdm(&text)?;
    if parsed.malformed > 0 {
        log::warn!("{}: skipped {} malformed records of {}", path.display(), parsed.malformed, parsed.records);
    }
    let mut epochs = Vec::new();
    for t in &parsed.traces {
        match preprocess_pipeline(t) {
            Ok(e) => epochs.extend(e),
            Err(e) => log::warn!("dropping segment {} ({} samples): {e}", t.test_id, t.len()),
        }
    }
    if epochs.is_empty() {
        return Err(Error::DatasetFormat(format!("{}: no segment long enough to window", path.display())));
    }
    Dataset::new("wisdm", Role::Source, LABELS.iter().map(|s| s.to_string()).collect(), epochs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_line() {
        let p = parse_wisdm("33,Jogging,49105962326000,-0.69,12.68,0.50;\n").unwrap();
        assert_eq!(p.traces.len(), 1);
        let t = &p.traces[0];
        assert_eq!((t.subject_id.as_str(), t.label, t.len()), ("33", 4, 1));
        assert_eq!(t.channels[1][0], 12.68);
    }

    #[test]
    fn segmentation_and_malformed() {
        let mut text = String::new();
        for i in 0..40 {
            text += &format!("1,Walking,{},0.1,9.8,0.2;\n", i * 50_000_000i64);
        }
        text += "1,Walking,99000000000,0.1,9.8,0.2;\n"; // gap
        text += "1,Upstairs,99050000000,0.1,9.8,0.2;2,Upstairs,99100000000,0.1,9.8,0.2;\n";
        text += "1,Walking,5,0.3\n"; // malformed
        let p = parse_wisdm(&text).unwrap();
        assert_eq!(p.malformed, 1);
        assert_eq!(p.records, 44);
        let shape: Vec<(String, usize, usize)> = p.traces.iter().map(|t| (t.test_id.clone(), t.label, t.len())).collect();
        assert_eq!(
            shape,
            vec![("1-0".into(), 0, 40), ("1-1".into(), 0, 1), ("1-2".into(), 1, 1), ("2-0".into(), 1, 1)]
        );
    }

    #[test]
    fn too_many_malformed() {
        let text = "1,Walking,0,0,0,0;\nbad;\n";
        assert!(matches!(parse_wisdm(text), Err(Error::DatasetFormat(_))));
        assert!(matches!(load_wisdm(Path::new("/nonexistent/wisdm.txt")), Err(Error::DatasetFormat(_))));
    }

    #[test]
    fn short_segments_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::new();
        // 20 s walking at 20 Hz, then a 1 s standing fragment
        for i in 0..400 {
            let t = i as f64 / 20.0;
            let y = 9.8 + 3.0 * (2.0 * std::f64::consts::PI * 2.0 * t).sin();
            text += &format!("7,Walking,{},{:.3},{:.3},{:.3};\n", i * 50_000_000i64, 0.5 * (3.0 * t).sin(), y, 0.3 * (5.0 * t).cos());
        }
        for i in 0..20 {
            text += &format!("7,Standing,{},0.1,9.8,0.2;\n", 30_000_000_000i64 + i * 50_000_000);
        }
        let f = dir.path().join("w.txt");
        fs::write(&f, text).unwrap();
        let d = load_wisdm(&f).unwrap();
        // 20 s → 1000 samples at 50 Hz → 14 windows
        assert_eq!(d.epochs.len(), 14);
        assert!(d.epochs.iter().all(|e| e.label == 0));
    }
}
