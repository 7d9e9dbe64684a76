//! Plain-text trace input (`t,ax,ay,az`) and epoch CSV
//! (`epoch_index,channel,sample_index,value`).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::trace::{Epoch, SensorTrace, EPOCH_CHANNELS, EPOCH_LEN};
use crate::error::{Error, Result};

pub const TRACE_HEADER: &str = "t,ax,ay,az";
pub const EPOCH_CSV_HEADER: &str = "epoch_index,channel,sample_index,value";
pub const CHANNEL_LABELS: [&str; EPOCH_CHANNELS] = ["ax", "ay", "az", "mag"];

/// Largest tolerated deviation of a sampling interval from the mean, relative.
pub const MAX_JITTER: f64 = 0.1;

/// Parses a `t,ax,ay,az` trace (seconds). The sampling rate is taken from the
/// mean interval; timestamps must increase and stay within 10 % of it.
pub fn parse_trace_csv(text: &str, subject_id: &str, test_id: &str, label: usize) -> Result<SensorTrace> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::DatasetFormat("empty trace file".into()))?;
    if header.trim() != TRACE_HEADER {
        return Err(Error::DatasetFormat(format!("trace header must be {TRACE_HEADER:?}, got {:?}", header.trim())));
    }
    let mut t = Vec::new();
    let mut ch = vec![Vec::new(), Vec::new(), Vec::new()];
    for (i, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::DatasetFormat(format!("trace row {}: {e}", i + 2)))?;
        if vals.len() != 4 {
            return Err(Error::DatasetFormat(format!("trace row {}: expected 4 fields, got {}", i + 2, vals.len())));
        }
        t.push(vals[0]);
        for c in 0..3 {
            ch[c].push(vals[c + 1]);
        }
    }
    if t.len() < 2 {
        return Err(Error::TraceTooShort { needed: 2, got: t.len() });
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidSample("timestamps must increase".into()));
    }
    if let Some(w) = t.windows(2).position(|w| ((w[1] - w[0]) - dt).abs() > MAX_JITTER * dt) {
        return Err(Error::InvalidSample(format!("irregular sampling interval at row {}", w + 3)));
    }
    SensorTrace::new(subject_id, test_id, label, 1.0 / dt, ch)
}

pub fn epochs_to_csv(epochs: &[Epoch]) -> String {
    let mut s = String::from(EPOCH_CSV_HEADER);
    s.push('\n');
    for e in epochs {
        for (c, name) in CHANNEL_LABELS.iter().enumerate() {
            for (i, v) in e.channel(c).iter().enumerate() {
                let _ = writeln!(s, "{},{name},{i},{v}", e.epoch_index);
            }
        }
    }
    s
}

/// Reads epochs back; channels may be given by name or index. Subject and
/// test ids are set to the given strings, labels to `label`.
pub fn parse_epoch_csv(text: &str, subject_id: &str, test_id: &str, label: usize) -> Result<Vec<Epoch>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == EPOCH_CSV_HEADER => {}
        other => return Err(Error::DatasetFormat(format!("epoch CSV header must be {EPOCH_CSV_HEADER:?}, got {other:?}"))),
    }
    let mut data: BTreeMap<usize, (Vec<f32>, Vec<bool>)> = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let bad = |m: String| Error::DatasetFormat(format!("epoch CSV row {}: {m}", i + 2));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(bad(format!("expected 4 fields, got {}", f.len())));
        }
        let e: usize = f[0].parse().map_err(|_| bad(format!("bad epoch index {:?}", f[0])))?;
        let c = CHANNEL_LABELS
            .iter()
            .position(|n| *n == f[1])
            .or_else(|| f[1].parse().ok().filter(|&c: &usize| c < EPOCH_CHANNELS))
            .ok_or_else(|| bad(format!("bad channel {:?}", f[1])))?;
        let k: usize = f[2].parse().ok().filter(|&k| k < EPOCH_LEN).ok_or_else(|| bad(format!("bad sample index {:?}", f[2])))?;
        let v: f32 = f[3].parse().map_err(|_| bad(format!("bad value {:?}", f[3])))?;
        let slot = data.entry(e).or_insert_with(|| (vec![0.0; EPOCH_CHANNELS * EPOCH_LEN], vec![false; EPOCH_CHANNELS * EPOCH_LEN]));
        slot.0[c * EPOCH_LEN + k] = v;
        slot.1[c * EPOCH_LEN + k] = true;
    }
    data.into_iter()
        .map(|(e, (values, seen))| {
            if seen.iter().any(|s| !s) {
                return Err(Error::DatasetFormat(format!("epoch {e} is incomplete")));
            }
            Epoch::new(values, subject_id, test_id, e, label)
        })
        .collect()
}
