//! Raw accelerometer traces to normalised 4×128 network epochs.
//!
//! Stage order is fixed: resample to 50 Hz, zero-phase low-pass, align the
//! mean acceleration with +y, append the magnitude channel, detrend and
//! standardise all four channels over the whole trace, then cut 50 %
//! overlapping windows.

mod align;
mod csvio;
mod filter;
mod normalize;
mod resample;
mod trace;

pub use align::{align_axes, rotation_onto_y, Mat3};
pub use csvio::{epochs_to_csv, parse_epoch_csv, parse_trace_csv, CHANNEL_LABELS, EPOCH_CSV_HEADER, TRACE_HEADER};
pub use filter::{lowpass_filter, Biquad, ButterworthLowpass};
pub use normalize::{detrend_normalize, detrend_normalize_channel};
pub use resample::{resample_to_50hz, Pchip};
pub use trace::{Epoch, SensorTrace, EPOCH_CHANNELS, EPOCH_HOP, EPOCH_LEN, TARGET_RATE_HZ};

use crate::error::{Error, Result};

/// Appends √(a_x²+a_y²+a_z²) as a fourth channel.
pub fn append_magnitude(trace: &SensorTrace) -> Result<SensorTrace> {
    if trace.channels.len() != 3 {
        return Err(Error::Shape(format!(
            "magnitude needs exactly 3 channels, got {}",
            trace.channels.len()
        )));
    }
    let mag = magnitude(&trace.channels[0], &trace.channels[1], &trace.channels[2]);
    let mut channels = trace.channels.clone();
    channels.push(mag);
    Ok(trace.with_channels(trace.sample_rate_hz, channels))
}

pub fn magnitude(x: &[f64], y: &[f64], z: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(y)
        .zip(z)
        .map(|((a, b), c)| (a * a + b * b + c * c).sqrt())
        .collect()
}

/// Number of full windows in a trace of `len` samples.
pub fn epoch_count(len: usize, window: usize, hop: usize) -> usize {
    if len < window {
        0
    } else {
        (len - window) / hop + 1
    }
}

/// Cuts a 4-channel trace into 128-sample windows every 64 samples,
/// dropping the incomplete tail.
pub fn epoch_split(trace: &SensorTrace) -> Result<Vec<Epoch>> {
    if trace.channels.len() != EPOCH_CHANNELS {
        return Err(Error::Shape(format!(
            "epoching needs {EPOCH_CHANNELS} channels, got {}",
            trace.channels.len()
        )));
    }
    let n = trace.len();
    if n < EPOCH_LEN {
        return Err(Error::TraceTooShort {
            needed: EPOCH_LEN,
            got: n,
        });
    }
    (0..epoch_count(n, EPOCH_LEN, EPOCH_HOP))
        .map(|e| {
            let start = e * EPOCH_HOP;
            let data = trace
                .channels
                .iter()
                .flat_map(|c| c[start..start + EPOCH_LEN].iter().map(|&v| v as f32))
                .collect();
            Epoch::new(data, &trace.subject_id, &trace.test_id, e, trace.label)
        })
        .collect()
}

/// Full preprocessing of a raw 3-axis trace into network epochs.
pub fn preprocess_pipeline(raw: &SensorTrace) -> Result<Vec<Epoch>> {
    let normalized = preprocess_trace(raw)?;
    epoch_split(&normalized)
}

/// All stages except windowing; returns the normalised 4-channel trace.
pub fn preprocess_trace(raw: &SensorTrace) -> Result<SensorTrace> {
    raw.validate()?;
    let resampled = resample_to_50hz(raw)?;
    let filtered = lowpass_filter(&resampled)?;
    let aligned = align_axes(&filtered)?;
    let with_mag = append_magnitude(&aligned)?;
    detrend_normalize(&with_mag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn four_channel(n: usize) -> SensorTrace {
        let ch = (0..4)
            .map(|c| (0..n).map(|i| (i * (c + 1)) as f64).collect())
            .collect();
        SensorTrace {
            subject_id: "s".into(),
            test_id: "t".into(),
            label: 1,
            sample_rate_hz: 50.0,
            channels: ch,
        }
    }

    fn mixed(seconds: f64, rate: f64) -> SensorTrace {
        let n = (seconds * rate).round() as usize;
        let ch = (0..3)
            .map(|c| {
                (0..n)
                    .map(|i| {
                        let t = i as f64 / rate;
                        let g = if c == 1 { 9.8 } else { 0.3 };
                        g + (2.0 * PI * 1.9 * t + c as f64).sin()
                            + 0.4 * (2.0 * PI * 5.3 * t * (c + 1) as f64).cos()
                    })
                    .collect()
            })
            .collect();
        SensorTrace::new("s", "t", 0, rate, ch).unwrap()
    }

    #[test]
    fn magnitude_examples() {
        assert_eq!(magnitude(&[3.0], &[4.0], &[0.0]), vec![5.0]);
        assert_eq!(magnitude(&[0.0], &[0.0], &[0.0]), vec![0.0]);
        assert!((magnitude(&[1.0], &[1.0], &[1.0])[0] - 1.732_050_8).abs() < 1e-7);
    }

    #[test]
    fn epoch_counts() {
        assert_eq!(epoch_split(&four_channel(128)).unwrap().len(), 1);
        let e = epoch_split(&four_channel(384)).unwrap();
        assert_eq!(e.len(), 5);
        let starts: Vec<f32> = e.iter().map(|e| e.data[0]).collect();
        assert_eq!(starts, vec![0.0, 64.0, 128.0, 192.0, 256.0]);
        let e = epoch_split(&four_channel(383)).unwrap();
        assert_eq!(e.len(), 4);
        assert_eq!(e.last().unwrap().data[0], 192.0);
        assert!(matches!(
            epoch_split(&four_channel(127)),
            Err(Error::TraceTooShort { .. })
        ));
        assert_eq!(
            e.iter().map(|e| e.epoch_index).collect::<Vec<_>>(),
            vec![0, 1, 2, 3]
        );
    }

    #[test]
    fn even_epochs_tile_the_prefix() {
        let tr = four_channel(700);
        let e = epoch_split(&tr).unwrap();
        let joined: Vec<f32> = e
            .iter()
            .step_by(2)
            .flat_map(|ep| ep.channel(2).to_vec())
            .collect();
        let expect: Vec<f32> = tr.channels[2][..joined.len()].iter().map(|&v| v as f32).collect();
        assert_eq!(joined, expect);
    }

    #[test]
    fn constant_trace_is_degenerate() {
        let tr = SensorTrace::new("s", "t", 0, 20.0, vec![vec![1.0; 60]; 3]).unwrap();
        assert!(matches!(
            preprocess_pipeline(&tr),
            Err(Error::DegenerateChannel { .. })
        ));
    }

    #[test]
    fn single_window_trace() {
        let e = preprocess_pipeline(&mixed(2.56, 50.0)).unwrap();
        assert_eq!(e.len(), 1);
        for c in 0..4 {
            let x: Vec<f64> = e[0].channel(c).iter().map(|&v| v as f64).collect();
            let m = x.iter().sum::<f64>() / 128.0;
            let v = x.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 128.0;
            assert!(m.abs() < 1e-5 && (v - 1.0).abs() < 1e-4, "channel {c}: {m} {v}");
        }
    }

    #[test]
    fn ten_second_trace_gives_six_epochs() {
        assert_eq!(preprocess_pipeline(&mixed(10.0, 50.0)).unwrap().len(), 6);
    }

    #[test]
    fn pipeline_is_deterministic() {
        let tr = mixed(7.3, 20.0);
        let a = preprocess_pipeline(&tr).unwrap();
        let b = preprocess_pipeline(&tr).unwrap();
        let bits = |e: &[Epoch]| -> Vec<u32> {
            e.iter().flat_map(|e| e.data.iter().map(|v| v.to_bits())).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }
}
