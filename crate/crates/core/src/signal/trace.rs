use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of channels in a network input window: a_x, a_y, a_z and the magnitude.
pub const EPOCH_CHANNELS: usize = 4;
/// Samples per window (2.56 s at 50 Hz).
pub const EPOCH_LEN: usize = 128;
/// Hop between consecutive windows (50 % overlap).
pub const EPOCH_HOP: usize = 64;
/// Rate every trace is brought to before filtering.
pub const TARGET_RATE_HZ: f64 = 50.0;

/// One recording session. `channels` holds a_x, a_y, a_z and, once
/// [`append_magnitude`](super::append_magnitude) has run, the magnitude as a fourth row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorTrace {
    pub subject_id: String,
    pub test_id: String,
    pub label: usize,
    pub sample_rate_hz: f64,
    pub channels: Vec<Vec<f64>>,
}

impl SensorTrace {
    pub fn new(
        subject_id: impl Into<String>,
        test_id: impl Into<String>,
        label: usize,
        sample_rate_hz: f64,
        channels: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let trace = SensorTrace {
            subject_id: subject_id.into(),
            test_id: test_id.into(),
            label,
            sample_rate_hz,
            channels,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }

    /// Checks the structural invariants: 3 or 4 equal-length channels, T ≥ 2,
    /// finite samples and a positive rate.
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return Err(Error::InvalidSample(format!(
                "sample rate must be positive, got {}",
                self.sample_rate_hz
            )));
        }
        if !(3..=4).contains(&self.channels.len()) {
            return Err(Error::Shape(format!(
                "trace must have 3 or 4 channels, got {}",
                self.channels.len()
            )));
        }
        let n = self.len();
        if self.channels.iter().any(|c| c.len() != n) {
            return Err(Error::Shape("trace channels differ in length".into()));
        }
        if n < 2 {
            return Err(Error::TraceTooShort { needed: 2, got: n });
        }
        check_finite(&self.channels)
    }

    pub(crate) fn with_channels(&self, sample_rate_hz: f64, channels: Vec<Vec<f64>>) -> Self {
        SensorTrace {
            subject_id: self.subject_id.clone(),
            test_id: self.test_id.clone(),
            label: self.label,
            sample_rate_hz,
            channels,
        }
    }
}

pub(crate) fn check_finite(channels: &[Vec<f64>]) -> Result<()> {
    for (c, ch) in channels.iter().enumerate() {
        if let Some(i) = ch.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSample(format!(
                "non-finite value {} at channel {c}, sample {i}",
                ch[i]
            )));
        }
    }
    Ok(())
}

/// A 4×128 network input window with its provenance. `data` is channel-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Epoch {
    pub data: Vec<f32>,
    pub subject_id: String,
    pub test_id: String,
    pub epoch_index: usize,
    pub label: usize,
}

impl Epoch {
    pub fn new(
        data: Vec<f32>,
        subject_id: impl Into<String>,
        test_id: impl Into<String>,
        epoch_index: usize,
        label: usize,
    ) -> Result<Self> {
        if data.len() != EPOCH_CHANNELS * EPOCH_LEN {
            return Err(Error::Shape(format!(
                "epoch must hold {}×{} values, got {}",
                EPOCH_CHANNELS,
                EPOCH_LEN,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSample("non-finite epoch value".into()));
        }
        Ok(Epoch {
            data,
            subject_id: subject_id.into(),
            test_id: test_id.into(),
            epoch_index,
            label,
        })
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * EPOCH_LEN..(c + 1) * EPOCH_LEN]
    }

    /// Start time of this window within its trace, assuming the 50 Hz grid.
    pub fn start_time_s(&self) -> f64 {
        (self.epoch_index * EPOCH_HOP) as f64 / TARGET_RATE_HZ
    }
}
