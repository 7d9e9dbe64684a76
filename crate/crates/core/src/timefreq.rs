//! Morlet scalograms and band energies.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Morlet centre frequency parameter.
pub const OMEGA0: f64 = 6.0;
pub const MIN_SIGNAL_LEN: usize = 16;
pub const DEFAULT_FMIN_HZ: f64 = 0.3;
pub const DEFAULT_FMAX_HZ: f64 = 17.0;
pub const VOICES_PER_OCTAVE: usize = 12;

/// Gait band used for E_s.
pub const GAIT_BAND_HZ: (f64, f64) = (0.5, 3.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scalogram {
    /// `magnitudes[row][col]`, one row per entry of `freqs_hz`.
    pub magnitudes: Vec<Vec<f64>>,
    /// Strictly descending.
    pub freqs_hz: Vec<f64>,
    pub sample_rate_hz: f64,
    /// Per row, how many columns at each end lie inside the cone of
    /// influence (e-folding time √2·s). Those columns are edge-affected.
    pub edge_columns: Vec<usize>,
}

impl Scalogram {
    pub fn n_cols(&self) -> usize {
        self.magnitudes.first().map_or(0, Vec::len)
    }

    /// Columns clear of edge effects in every row.
    pub fn interior_columns(&self) -> std::ops::Range<usize> {
        let e = self.edge_columns.iter().copied().max().unwrap_or(0);
        let n = self.n_cols();
        if 2 * e >= n {
            0..0
        } else {
            e..n - e
        }
    }

    /// Row index of the maximum magnitude in `col` (first maximum on ties).
    pub fn ridge_row(&self, col: usize) -> usize {
        let mut best = 0;
        for r in 1..self.magnitudes.len() {
            if self.magnitudes[r][col] > self.magnitudes[best][col] {
                best = r;
            }
        }
        best
    }

    pub fn total_energy(&self) -> f64 {
        self.magnitudes.iter().flatten().map(|m| m * m).sum()
    }

    /// Header row of times, first column of frequencies.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("freq_hz");
        for c in 0..self.n_cols() {
            let _ = write!(s, ",{}", c as f64 / self.sample_rate_hz);
        }
        s.push('\n');
        for (f, row) in self.freqs_hz.iter().zip(&self.magnitudes) {
            let _ = write!(s, "{f}");
            for m in row {
                let _ = write!(s, ",{m}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandEnergy {
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub energy: f64,
}

/// Log-spaced grid from `fmin` upwards at `voices` per octave, stopping at
/// `fmax`; returned in descending order.
pub fn log_grid(fmin: f64, fmax: f64, voices: usize) -> Vec<f64> {
    let mut f = Vec::new();
    let mut k = 0;
    loop {
        let v = fmin * 2f64.powf(k as f64 / voices as f64);
        if v > fmax * (1.0 + 1e-12) {
            break;
        }
        f.push(v);
        k += 1;
    }
    f.reverse();
    f
}

pub fn default_grid() -> Vec<f64> {
    log_grid(DEFAULT_FMIN_HZ, DEFAULT_FMAX_HZ, VOICES_PER_OCTAVE)
}

/// Scale in samples for frequency `f`.
pub fn scale_for(f: f64, sample_rate: f64) -> f64 {
    OMEGA0 * sample_rate / (2.0 * PI * f)
}

/// Continuous wavelet transform with an analytic Morlet wavelet, computed as
/// a zero-padded frequency-domain product. The wavelet is L1-normalised and
/// scaled so a unit-amplitude sinusoid has magnitude 1 at its own frequency.
pub fn cwt_morlet(signal: &[f64], sample_rate: f64, freqs: &[f64]) -> Result<Scalogram> {
    if signal.len() < MIN_SIGNAL_LEN {
        return Err(Error::TraceTooShort { needed: MIN_SIGNAL_LEN, got: signal.len() });
    }
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::Spec(format!("sample rate must be positive, got {sample_rate}")));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidSample("non-finite value in signal".into()));
    }
    if freqs.is_empty() {
        return Err(Error::Spec("frequency grid is empty".into()));
    }
    for &f in freqs {
        if !(f > 0.0 && f < sample_rate / 2.0) {
            return Err(Error::Spec(format!("frequency {f} Hz outside (0, {})", sample_rate / 2.0)));
        }
    }
    if !(freqs.windows(2).all(|w| w[0] > w[1]) || freqs.windows(2).all(|w| w[0] < w[1])) {
        return Err(Error::Spec("frequencies must be strictly monotone".into()));
    }
    let n = signal.len();
    let max_scale = freqs.iter().map(|&f| scale_for(f, sample_rate)).fold(0.0, f64::max);
    let pad = (n + (4.0 * max_scale).ceil() as usize).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(pad);
    let inv = planner.plan_fft_inverse(pad);
    let mut spectrum: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    spectrum.resize(pad, Complex::new(0.0, 0.0));
    fwd.process(&mut spectrum);

    let mut magnitudes = Vec::with_capacity(freqs.len());
    let mut edge_columns = Vec::with_capacity(freqs.len());
    let mut buf = vec![Complex::new(0.0, 0.0); pad];
    for &f in freqs {
        let s = scale_for(f, sample_rate);
        for (k, b) in buf.iter_mut().enumerate() {
            // positive frequencies only: the wavelet is analytic
            *b = if k > 0 && k <= pad / 2 {
                let w = 2.0 * PI * k as f64 / pad as f64;
                spectrum[k] * (2.0 * (-0.5 * (s * w - OMEGA0).powi(2)).exp())
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        inv.process(&mut buf);
        let norm = 1.0 / pad as f64;
        magnitudes.push(buf[..n].iter().map(|c| c.norm() * norm).collect());
        edge_columns.push(((2f64.sqrt() * s).ceil() as usize).min(n));
    }
    Ok(Scalogram { magnitudes, freqs_hz: freqs.to_vec(), sample_rate_hz: sample_rate, edge_columns })
}

/// Σ magnitude² over rows with `lo ≤ f ≤ hi`, all columns.
pub fn band_energy(s: &Scalogram, lo: f64, hi: f64) -> Result<BandEnergy> {
    if !(lo < hi) {
        return Err(Error::Spec(format!("band needs lo < hi, got {lo}–{hi}")));
    }
    let rows: Vec<usize> = (0..s.freqs_hz.len()).filter(|&r| s.freqs_hz[r] >= lo && s.freqs_hz[r] <= hi).collect();
    if rows.is_empty() {
        return Err(Error::Spec(format!("band {lo}–{hi} Hz contains no grid frequency")));
    }
    let energy = rows.iter().flat_map(|&r| &s.magnitudes[r]).map(|m| m * m).sum();
    Ok(BandEnergy { band_lo_hz: lo, band_hi_hz: hi, energy })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(f: f64, secs: f64) -> Vec<f64> {
        (0..(secs * 50.0) as usize).map(|i| (2.0 * PI * f * i as f64 / 50.0).sin()).collect()
    }

    fn nearest(grid: &[f64], f: f64) -> usize {
        (0..grid.len()).min_by(|&a, &b| (grid[a] / f).ln().abs().total_cmp(&(grid[b] / f).ln().abs())).unwrap()
    }

    #[test]
    fn grid_shape() {
        let g = default_grid();
        assert_eq!(g.len(), 70);
        assert!((g[69] - 0.3).abs() < 1e-12 && g[0] <= 17.0);
        assert!(g.windows(2).all(|w| (w[0] / w[1] - 2f64.powf(1.0 / 12.0)).abs() < 1e-12));
    }

    #[test]
    fn two_hz_ridge() {
        let g = default_grid();
        let s = cwt_morlet(&tone(2.0, 20.0), 50.0, &g).unwrap();
        let want = nearest(&g, 2.0);
        let cols = s.interior_columns();
        assert!(cols.len() > 400);
        let hits = cols.clone().filter(|&c| s.ridge_row(c) == want).count();
        assert!(hits as f64 >= 0.95 * cols.len() as f64);
        // unit amplitude at the matching scale, up to grid mismatch
        let peak = s.magnitudes[want][500];
        assert!((peak - 1.0).abs() < 0.02, "{peak}");
        let e_gait = band_energy(&s, 0.5, 3.0).unwrap().energy;
        let e_high = band_energy(&s, 3.5, 17.0).unwrap().energy;
        assert!(e_gait / e_high > 10.0);
    }

    #[test]
    fn two_tones_two_ridges() {
        let g = default_grid();
        let x: Vec<f64> = tone(1.0, 20.0).iter().zip(tone(6.0, 20.0)).map(|(a, b)| a + b).collect();
        let s = cwt_morlet(&x, 50.0, &g).unwrap();
        let (r1, r6) = (nearest(&g, 1.0), nearest(&g, 6.0));
        for c in s.interior_columns() {
            let col: Vec<f64> = s.magnitudes.iter().map(|r| r[c]).collect();
            // each tone dominates its neighbourhood
            assert!(col[r1] > col[r1 - 3] && col[r1] > col[r1 + 3]);
            assert!(col[r6] > col[r6 - 3] && col[r6] > col[r6 + 3]);
        }
    }

    #[test]
    fn zero_signal_and_errors() {
        let g = default_grid();
        let s = cwt_morlet(&[0.0; 64], 50.0, &g).unwrap();
        assert!(s.magnitudes.iter().flatten().all(|&m| m == 0.0));
        assert_eq!(band_energy(&s, 0.5, 3.0).unwrap().energy, 0.0);
        assert!(matches!(cwt_morlet(&[0.0; 64], 50.0, &[30.0]), Err(Error::Spec(_))));
        assert!(matches!(cwt_morlet(&[0.0; 8], 50.0, &g), Err(Error::TraceTooShort { .. })));
        assert!(matches!(band_energy(&s, 17.5, 20.0), Err(Error::Spec(_))));
    }

    #[test]
    fn bands_partition_total() {
        let g = default_grid();
        let s = cwt_morlet(&tone(3.0, 6.0), 50.0, &g).unwrap();
        let a = band_energy(&s, 0.0, 3.0).unwrap().energy;
        let b = band_energy(&s, 3.0 + 1e-9, 17.0).unwrap().energy;
        assert!(((a + b) - s.total_energy()).abs() <= 1e-9 * s.total_energy());
    }

    #[test]
    fn csv_layout() {
        let s = cwt_morlet(&tone(2.0, 1.0), 50.0, &[4.0, 2.0]).unwrap();
        let csv = s.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("freq_hz,0,0.02,"));
        assert!(lines[1].starts_with("4,"));
        assert_eq!(lines[1].split(',').count(), 51);
    }
}
