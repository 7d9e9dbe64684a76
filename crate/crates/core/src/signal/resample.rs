//! Shape-preserving piecewise cubic (PCHIP) resampling onto the 50 Hz grid.

use super::trace::{check_finite, SensorTrace, TARGET_RATE_HZ};
use crate::error::{Error, Result};

/// Resamples every channel onto a uniform 50 Hz grid starting at the first
/// sample. The output keeps the trace duration (`round(T·50/fs)` samples);
/// grid points past the last knot use the final interval's cubic.
pub fn resample_to_50hz(trace: &SensorTrace) -> Result<SensorTrace> {
    let n = trace.len();
    if n < 4 {
        return Err(Error::TraceTooShort { needed: 4, got: n });
    }
    if !(trace.sample_rate_hz.is_finite() && trace.sample_rate_hz > 0.0) {
        return Err(Error::InvalidSample(format!(
            "sample rate must be positive, got {}",
            trace.sample_rate_hz
        )));
    }
    check_finite(&trace.channels)?;
    if trace.sample_rate_hz == TARGET_RATE_HZ {
        return Ok(trace.clone());
    }

    let step = 1.0 / trace.sample_rate_hz;
    let n_out = ((n as f64) * TARGET_RATE_HZ / trace.sample_rate_hz).round() as usize;
    let grid: Vec<f64> = (0..n_out).map(|k| k as f64 / TARGET_RATE_HZ).collect();
    let channels = trace
        .channels
        .iter()
        .map(|ch| Pchip::uniform(ch, step).eval_many(&grid))
        .collect();
    Ok(trace.with_channels(TARGET_RATE_HZ, channels))
}

/// Monotone cubic Hermite interpolant on uniformly spaced knots `0, h, 2h, …`.
#[derive(Debug, Clone)]
pub struct Pchip<'a> {
    values: &'a [f64],
    step: f64,
    slopes: Vec<f64>,
}

impl<'a> Pchip<'a> {
    /// `values` needs at least two knots.
    pub fn uniform(values: &'a [f64], step: f64) -> Self {
        let slopes = pchip_slopes(values, step);
        Pchip {
            values,
            step,
            slopes,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.values.len();
        let seg = ((t / self.step).floor().max(0.0) as usize).min(n - 2);
        let h = self.step;
        let s = (t - seg as f64 * h) / h;
        let (y0, y1) = (self.values[seg], self.values[seg + 1]);
        let (d0, d1) = (self.slopes[seg], self.slopes[seg + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1
    }

    pub fn eval_many(&self, ts: &[f64]) -> Vec<f64> {
        ts.iter().map(|&t| self.eval(t)).collect()
    }
}

/// Fritsch–Carlson derivative estimates with the non-centred three-point
/// end conditions.
fn pchip_slopes(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    let delta: Vec<f64> = y.windows(2).map(|w| (w[1] - w[0]) / h).collect();
    let mut d = vec![0.0; n];
    if n == 2 {
        d[0] = delta[0];
        d[1] = delta[0];
        return d;
    }
    for k in 1..n - 1 {
        let (a, b) = (delta[k - 1], delta[k]);
        if a * b > 0.0 {
            // equal spacing reduces the weighted harmonic mean to w1 = w2 = 3h
            d[k] = 2.0 / (1.0 / a + 1.0 / b);
        }
    }
    d[0] = end_slope(delta[0], delta[1]);
    d[n - 1] = end_slope(delta[n - 2], delta[n - 3]);
    d
}

fn end_slope(d_near: f64, d_far: f64) -> f64 {
    // (2h + h)·δ0 − h·δ1 over 2h on a uniform grid
    let d = (3.0 * d_near - d_far) / 2.0;
    if d.signum() != d_near.signum() || d_near == 0.0 {
        0.0
    } else if d_near.signum() != d_far.signum() && d.abs() > 3.0 * d_near.abs() {
        3.0 * d_near
    } else {
        d
    }
}
