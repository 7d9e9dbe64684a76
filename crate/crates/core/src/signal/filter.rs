//! Zero-phase Butterworth low-pass filtering.
//!
//! The filter is a cascade of second-order sections designed with the
//! bilinear transform at an internal rate of `oversample × fs`. The input is
//! first band-limited-interpolated to that rate (FFT zero-padding of the
//! mirrored signal), filtered forward and backward, then decimated back onto
//! the original sample instants. Running the sections at the higher rate
//! keeps the frequency warping of the bilinear map negligible below the
//! input Nyquist, so the realised response follows the analog Butterworth
//! magnitude `1/sqrt(1 + (f/fc)^(2n))` per pass.

use rustfft::{num_complex::Complex, FftPlanner};

use super::trace::{check_finite, SensorTrace, TARGET_RATE_HZ};
use crate::error::{Error, Result};

pub const DEFAULT_ORDER: usize = 4;
pub const DEFAULT_CUTOFF_HZ: f64 = 17.0;
pub const DEFAULT_OVERSAMPLE: usize = 8;

/// One second-order section in transposed direct form II, `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// State that makes a constant unit input pass through without a transient.
    fn steady_state(&self) -> [f64; 2] {
        let gain = (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2]);
        let z2 = self.b[2] - self.a[2] * gain;
        let z1 = self.b[1] - self.a[1] * gain + z2;
        [z1, z2]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z[0];
            z[0] = b1 * input - a1 * y + z[1];
            z[1] = b2 * input - a2 * y;
            *v = y;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ButterworthLowpass {
    pub order: usize,
    pub cutoff_hz: f64,
    pub sample_rate_hz: f64,
    pub oversample: usize,
    pub sections: Vec<Biquad>,
}

impl ButterworthLowpass {
    pub fn design(
        order: usize,
        cutoff_hz: f64,
        sample_rate_hz: f64,
        oversample: usize,
    ) -> Result<Self> {
        if order == 0 || order % 2 != 0 {
            return Err(Error::Spec(format!("order must be even and positive, got {order}")));
        }
        if oversample == 0 {
            return Err(Error::Spec("oversample factor must be ≥ 1".into()));
        }
        if !(cutoff_hz > 0.0 && cutoff_hz < sample_rate_hz / 2.0) {
            return Err(Error::Spec(format!(
                "cutoff {cutoff_hz} Hz outside (0, {}) Hz",
                sample_rate_hz / 2.0
            )));
        }
        let internal_rate = sample_rate_hz * oversample as f64;
        let k = (std::f64::consts::PI * cutoff_hz / internal_rate).tan();
        let k2 = k * k;
        let sections = (1..=order / 2)
            .map(|i| {
                // analog pole pair s² + 2ζs + 1 with 2ζ = 2 sin((2i−1)π / 2n)
                let two_zeta = 2.0
                    * ((2 * i - 1) as f64 * std::f64::consts::PI / (2 * order) as f64).sin();
                let a0 = 1.0 + two_zeta * k + k2;
                let a = [1.0, (2.0 * k2 - 2.0) / a0, (1.0 - two_zeta * k + k2) / a0];
                let mut b = [k2 / a0, 2.0 * k2 / a0, k2 / a0];
                // pin the DC gain to exactly one
                let scale = (a[0] + a[1] + a[2]) / (b[0] + b[1] + b[2]);
                b.iter_mut().for_each(|v| *v *= scale);
                Biquad { b, a }
            })
            .collect();
        Ok(ButterworthLowpass {
            order,
            cutoff_hz,
            sample_rate_hz,
            oversample,
            sections,
        })
    }

    /// The filter used by the preprocessing pipeline: 4th order, 17 Hz, at 50 Hz.
    pub fn standard() -> Self {
        Self::design(
            DEFAULT_ORDER,
            DEFAULT_CUTOFF_HZ,
            TARGET_RATE_HZ,
            DEFAULT_OVERSAMPLE,
        )
        .expect("standard filter parameters are valid")
    }

    /// Edge padding at the input rate: three times the filter order.
    pub fn pad_len(&self) -> usize {
        3 * self.order
    }

    pub fn min_len(&self) -> usize {
        2 * self.pad_len()
    }

    /// Single-pass magnitude response of the realised sections at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI * freq_hz
            / (self.sample_rate_hz * self.oversample as f64);
        let z1 = Complex::new(w.cos(), -w.sin());
        let z2 = z1 * z1;
        self.sections
            .iter()
            .map(|s| {
                let num = s.b[0] + z1 * s.b[1] + z2 * s.b[2];
                let den = s.a[0] + z1 * s.a[1] + z2 * s.a[2];
                (num / den).norm()
            })
            .product()
    }

    /// Forward-backward filtering of one channel.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() < self.min_len() {
            return Err(Error::TraceTooShort {
                needed: self.min_len(),
                got: x.len(),
            });
        }
        let l = self.oversample;
        let fine = if l == 1 {
            x.to_vec()
        } else {
            upsample_bandlimited(x, l)
        };
        let pad = self.pad_len() * l;
        let n = fine.len();
        let mut work = Vec::with_capacity(n + 2 * pad);
        // odd (point) reflection keeps level and slope continuous at the edges
        work.extend((1..=pad).rev().map(|i| 2.0 * fine[0] - fine[i]));
        work.extend_from_slice(&fine);
        work.extend((1..=pad).map(|i| 2.0 * fine[n - 1] - fine[n - 1 - i]));

        self.run_cascade(&mut work);
        work.reverse();
        self.run_cascade(&mut work);
        work.reverse();

        Ok(work[pad..pad + n].iter().step_by(l).copied().collect())
    }

    fn run_cascade(&self, x: &mut [f64]) {
        for s in &self.sections {
            let ss = s.steady_state();
            let x0 = x[0];
            s.run(x, [ss[0] * x0, ss[1] * x0]);
        }
    }
}

/// Band-limited interpolation by an integer factor. The signal is mirrored
/// to avoid a jump at the periodic wrap; returns `(n − 1)·factor + 1`
/// samples that coincide with the input at every `factor`-th index.
fn upsample_bandlimited(x: &[f64], factor: usize) -> Vec<f64> {
    let n = x.len();
    let m = 2 * n;
    let big = m * factor;
    let mut planner = FftPlanner::<f64>::new();
    let mut spec: Vec<Complex<f64>> = x
        .iter()
        .chain(x.iter().rev())
        .map(|&v| Complex::new(v, 0.0))
        .collect();
    planner.plan_fft_forward(m).process(&mut spec);

    let half = m / 2;
    let mut up = vec![Complex::new(0.0, 0.0); big];
    up[..half].copy_from_slice(&spec[..half]);
    for k in 1..half {
        up[big - k] = spec[m - k];
    }
    up[half] = spec[half] * 0.5;
    up[big - half] = spec[half] * 0.5;
    planner.plan_fft_inverse(big).process(&mut up);

    let scale = 1.0 / m as f64;
    let mut out: Vec<f64> = up[..(n - 1) * factor + 1]
        .iter()
        .map(|c| c.re * scale)
        .collect();
    // the knots are exact in theory; restore them bit-for-bit
    for (i, &v) in x.iter().enumerate() {
        out[i * factor] = v;
    }
    out
}

/// Applies the standard 17 Hz zero-phase low-pass to every channel of a 50 Hz trace.
pub fn lowpass_filter(trace: &SensorTrace) -> Result<SensorTrace> {
    if trace.sample_rate_hz != TARGET_RATE_HZ {
        return Err(Error::Spec(format!(
            "low-pass expects a {TARGET_RATE_HZ} Hz trace, got {} Hz",
            trace.sample_rate_hz
        )));
    }
    check_finite(&trace.channels)?;
    let filter = ButterworthLowpass::standard();
    let channels = trace
        .channels
        .iter()
        .map(|c| filter.filtfilt(c))
        .collect::<Result<Vec<_>>>()?;
    Ok(trace.with_channels(trace.sample_rate_hz, channels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    /// Least-squares amplitude of a sinusoid of known frequency over `range`.
    fn fitted_amplitude(y: &[f64], freq: f64, fs: f64, range: std::ops::Range<usize>) -> f64 {
        let (mut ss, mut cc, mut sc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in range {
            let t = i as f64 / fs;
            let (s, c) = (2.0 * PI * freq * t).sin_cos();
            ss += s * s;
            cc += c * c;
            sc += s * c;
            ys += y[i] * s;
            yc += y[i] * c;
        }
        let det = ss * cc - sc * sc;
        let a = (ys * cc - yc * sc) / det;
        let b = (yc * ss - ys * sc) / det;
        a.hypot(b)
    }

    fn sine(freq: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / 50.0).sin()).collect()
    }

    /// Two passes of the analog 4th-order Butterworth: |H|² = 1/(1+(f/fc)^8).
    fn analog_two_pass(f: f64) -> f64 {
        1.0 / (1.0 + (f / 17.0).powi(8))
    }

    #[test]
    fn dc_gain_is_one() {
        let f = ButterworthLowpass::standard();
        let y = f.filtfilt(&vec![5.0; 200]).unwrap();
        assert!(y.iter().all(|v| (v - 5.0).abs() < 1e-9));
        assert!((f.magnitude(0.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cutoff_is_half_power() {
        let f = ButterworthLowpass::standard();
        assert!((f.magnitude(17.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
    }

    #[test]
    fn passband_two_hz() {
        let y = ButterworthLowpass::standard().filtfilt(&sine(2.0, 500)).unwrap();
        let amp = fitted_amplitude(&y, 2.0, 50.0, 50..450);
        assert!((amp - 1.0).abs() < 0.01, "amp {amp}");
    }

    #[test]
    fn stopband_twenty_hz_matches_analog_oracle() {
        let expected = analog_two_pass(20.0);
        assert!((expected - 0.2141).abs() < 1e-3);
        let y = ButterworthLowpass::standard().filtfilt(&sine(20.0, 500)).unwrap();
        let amp = fitted_amplitude(&y, 20.0, 50.0, 100..400);
        assert!((amp - 0.215).abs() < 0.02, "amp {amp}");
        assert!((amp - expected).abs() < 0.01, "amp {amp} vs oracle {expected}");
    }

    #[test]
    fn response_tracks_analog_prototype() {
        let f = ButterworthLowpass::standard();
        for freq in [1.0, 5.0, 10.0, 15.0, 17.0, 20.0, 24.0] {
            let analog = 1.0 / (1.0 + (freq / 17.0f64).powi(8)).sqrt();
            assert!((f.magnitude(freq) - analog).abs() < 0.01, "{freq} Hz");
        }
    }

    #[test]
    fn linear_in_input() {
        let f = ButterworthLowpass::standard();
        let x: Vec<f64> = (0..300).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let y = sine(3.3, 300);
        let (a, b) = (1.7, -0.4);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let fx = f.filtfilt(&x).unwrap();
        let fy = f.filtfilt(&y).unwrap();
        let fm = f.filtfilt(&mix).unwrap();
        for i in 0..300 {
            assert!((fm[i] - (a * fx[i] + b * fy[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn short_input_rejected() {
        let f = ButterworthLowpass::standard();
        assert!(matches!(
            f.filtfilt(&[1.0; 23]),
            Err(Error::TraceTooShort { needed: 24, .. })
        ));
        assert!(f.filtfilt(&[1.0; 24]).is_ok());
    }

    #[test]
    fn wrong_rate_rejected() {
        let tr = SensorTrace::new("s", "t", 0, 20.0, vec![vec![0.0; 100]; 3]).unwrap();
        assert!(matches!(lowpass_filter(&tr), Err(Error::Spec(_))));
    }
}
