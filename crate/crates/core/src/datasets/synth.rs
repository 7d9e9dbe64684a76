//! Synthetic gait cohort with cadence differences and step-coincident
//! high-frequency bursts, with ground-truth burst times.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Role, SubjectMeta};
use crate::error::{Error, Result};
use crate::seed;
use crate::signal::{preprocess_pipeline, rotation_onto_y, SensorTrace, TARGET_RATE_HZ};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthClassSpec {
    pub name: String,
    pub subjects: usize,
    /// Step rate range in Hz; each subject draws a base rate from it.
    pub step_frequency_hz: [f64; 2],
    /// Amplitudes (g) of the step-rate harmonics on the vertical axis.
    pub harmonic_amplitudes: Vec<f64>,
    /// Fraction of steps carrying a burst.
    pub perturbation_rate: f64,
    pub perturbation_band_hz: [f64; 2],
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthCohortSpec {
    pub classes: Vec<SynthClassSpec>,
    pub tests_per_subject: usize,
    pub test_duration_s: f64,
    pub seed: u64,
    /// Relative spread of a test's cadence around the subject's base rate;
    /// also the depth of the slow within-test cadence drift.
    pub cadence_jitter: f64,
    /// Largest random device tilt, degrees.
    pub max_tilt_deg: f64,
    /// Peak burst amplitude (g).
    pub burst_amplitude: f64,
    /// Gaussian envelope standard deviation of a burst, seconds.
    pub burst_width_s: f64,
}

impl Default for SynthCohortSpec {
    fn default() -> Self {
        let class = |name: &str, subjects, f: [f64; 2], amps: Vec<f64>, rate| SynthClassSpec {
            name: name.into(),
            subjects,
            step_frequency_hz: f,
            harmonic_amplitudes: amps,
            perturbation_rate: rate,
            perturbation_band_hz: [5.0, 12.0],
            noise_std: 0.03,
        };
        SynthCohortSpec {
            classes: vec![
                class("HC", 24, [1.8, 2.2], vec![0.30, 0.12, 0.05], 0.0),
                class("PwMSmild", 52, [1.6, 2.0], vec![0.30, 0.12, 0.05], 0.2),
                class("PwMSmod", 21, [1.2, 1.6], vec![0.25, 0.12, 0.06], 0.7),
            ],
            tests_per_subject: 3,
            test_duration_s: 120.0,
            seed: 0,
            cadence_jitter: 0.03,
            max_tilt_deg: 15.0,
            burst_amplitude: 0.15,
            burst_width_s: 0.04,
        }
    }
}

impl SynthCohortSpec {
    pub const KEYS: &'static [&'static str] = &[
        "classes",
        "tests_per_subject",
        "test_duration_s",
        "seed",
        "cadence_jitter",
        "max_tilt_deg",
        "burst_amplitude",
        "burst_width_s",
    ];

    pub fn validate(&self) -> Result<()> {
        let nyquist = TARGET_RATE_HZ / 2.0;
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] > 0.0 && r[0] <= r[1] && r[1] < nyquist;
        if self.classes.len() < 2 {
            return Err(Error::Spec("need at least two classes".into()));
        }
        for c in &self.classes {
            let bad = |m: &str| Err(Error::Spec(format!("class {}: {m}", c.name)));
            if c.subjects == 0 {
                return bad("needs at least one subject");
            }
            if !range_ok(c.step_frequency_hz) {
                return bad("step_frequency_hz must be a non-empty range below 25 Hz");
            }
            if !range_ok(c.perturbation_band_hz) {
                return bad("perturbation_band_hz must be a non-empty range below 25 Hz");
            }
            let top = c.step_frequency_hz[1] * c.harmonic_amplitudes.len() as f64;
            if top >= nyquist {
                return bad("highest harmonic reaches 25 Hz");
            }
            if c.harmonic_amplitudes.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                return bad("harmonic amplitudes must be non-negative");
            }
            if !(0.0..=1.0).contains(&c.perturbation_rate) {
                return bad("perturbation_rate must lie in [0, 1]");
            }
            if !(c.noise_std.is_finite() && c.noise_std >= 0.0) {
                return bad("noise_std must be non-negative");
            }
        }
        let mut names: Vec<&str> = self.classes.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.classes.len() {
            return Err(Error::Spec("class names must be unique".into()));
        }
        if self.tests_per_subject == 0 {
            return Err(Error::Spec("tests_per_subject must be positive".into()));
        }
        if !(self.test_duration_s.is_finite() && self.test_duration_s > 0.0) {
            return Err(Error::Spec("test_duration_s must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.cadence_jitter) {
            return Err(Error::Spec("cadence_jitter must lie in [0, 0.5)".into()));
        }
        if !(0.0..=90.0).contains(&self.max_tilt_deg) {
            return Err(Error::Spec("max_tilt_deg must lie in [0, 90]".into()));
        }
        if !(self.burst_amplitude.is_finite() && self.burst_amplitude >= 0.0) {
            return Err(Error::Spec("burst_amplitude must be non-negative".into()));
        }
        if !(self.burst_width_s.is_finite() && self.burst_width_s > 0.0) {
            return Err(Error::Spec("burst_width_s must be positive".into()));
        }
        Ok(())
    }

    pub fn label_space(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.name.clone()).collect()
    }
}

/// Raw generator output before preprocessing.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTraces {
    pub traces: Vec<SensorTrace>,
    /// Burst centre times (s from trace start) per test id.
    pub bursts: BTreeMap<String, Vec<f64>>,
    pub subjects: BTreeMap<String, SubjectMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCohort {
    pub dataset: Dataset,
    pub bursts: BTreeMap<String, Vec<f64>>,
}

/// Generates raw 50 Hz traces. The vertical axis carries the step
/// harmonics plus gravity, the lateral axis the stride (half step rate),
/// the anterior axis a phase-shifted step component; bursts are Gabor
/// packets centred on selected steps. The device is then tilted.
pub fn generate_traces(spec: &SynthCohortSpec) -> Result<SynthTraces> {
    spec.validate()?;
    let n = (spec.test_duration_s * TARGET_RATE_HZ).round() as usize;
    let dt = 1.0 / TARGET_RATE_HZ;
    let mut traces = Vec::new();
    let mut bursts = BTreeMap::new();
    let mut subjects = BTreeMap::new();
    for (label, class) in spec.classes.iter().enumerate() {
        for s in 0..class.subjects {
            let subject_id = format!("{}-{s:03}", class.name);
            let mut srng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, &[label as u64, s as u64]));
            let [f_lo, f_hi] = class.step_frequency_hz;
            let base_f = if f_hi > f_lo { srng.random_range(f_lo..=f_hi) } else { f_lo };
            let gain = if spec.cadence_jitter > 0.0 { srng.random_range(0.85..1.15) } else { 1.0 };
            let phases: Vec<f64> = (0..class.harmonic_amplitudes.len() + 2).map(|_| srng.random_range(0.0..2.0 * PI)).collect();
            subjects.insert(subject_id.clone(), SubjectMeta { subject_id: subject_id.clone(), group: Some(class.name.clone()) });
            for t in 0..spec.tests_per_subject {
                let test_id = format!("{subject_id}-t{t}");
                let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(spec.seed, &[label as u64, s as u64, 1 + t as u64]));
                let j = spec.cadence_jitter;
                let f = if j > 0.0 { base_f * (1.0 + rng.random_range(-j..=j)) } else { base_f };
                let drift_phase = rng.random_range(0.0..2.0 * PI);
                let theta0 = rng.random_range(0.0..2.0 * PI);
                // step phase with slow cadence drift
                let mut theta = Vec::with_capacity(n);
                let mut acc = theta0;
                for i in 0..n {
                    theta.push(acc);
                    let ti = i as f64 * dt;
                    acc += 2.0 * PI * f * (1.0 + j * (2.0 * PI * ti / 15.0 + drift_phase).sin()) * dt;
                }
                let mut x = vec![0.0; n];
                let mut y = vec![1.0; n];
                let mut z = vec![0.0; n];
                let a1 = class.harmonic_amplitudes.first().copied().unwrap_or(0.0) * gain;
                for i in 0..n {
                    let th = theta[i];
                    for (h, &a) in class.harmonic_amplitudes.iter().enumerate() {
                        y[i] += gain * a * ((h + 1) as f64 * th + phases[h]).sin();
                    }
                    x[i] += 0.3 * a1 * (0.5 * th + phases[phases.len() - 2]).sin();
                    z[i] += 0.5 * a1 * (th + phases[phases.len() - 1]).sin();
                }
                // steps at phase 2πk + π/2 (peak of the fundamental)
                let mut centers = Vec::new();
                if class.perturbation_rate > 0.0 && spec.burst_amplitude > 0.0 {
                    let margin = 4.0 * spec.burst_width_s;
                    let first = ((theta[0] - PI / 2.0) / (2.0 * PI)).ceil() as i64;
                    let mut k = first;
                    let mut i = 0;
                    loop {
                        let target = 2.0 * PI * k as f64 + PI / 2.0;
                        while i + 1 < n && theta[i + 1] < target {
                            i += 1;
                        }
                        if i + 1 >= n {
                            break;
                        }
                        let frac = (target - theta[i]) / (theta[i + 1] - theta[i]);
                        let tc = (i as f64 + frac) * dt;
                        let draw: f64 = rng.random();
                        let fc = rng.random_range(class.perturbation_band_hz[0]..=class.perturbation_band_hz[1]);
                        let ph = rng.random_range(0.0..2.0 * PI);
                        if draw < class.perturbation_rate && tc >= margin && tc <= spec.test_duration_s - margin {
                            centers.push(tc);
                            let w = spec.burst_width_s;
                            let lo = ((tc - 4.0 * w) / dt).floor().max(0.0) as usize;
                            let hi = (((tc + 4.0 * w) / dt).ceil() as usize).min(n - 1);
                            for q in lo..=hi {
                                let u = q as f64 * dt - tc;
                                let g = gain * spec.burst_amplitude * (-0.5 * (u / w).powi(2)).exp() * (2.0 * PI * fc * u + ph).sin();
                                y[q] += g;
                                z[q] += 0.5 * g;
                            }
                        }
                        k += 1;
                    }
                }
                if class.noise_std > 0.0 {
                    let noise = Normal::new(0.0, class.noise_std).expect("valid std");
                    for v in x.iter_mut().chain(y.iter_mut()).chain(z.iter_mut()) {
                        *v += noise.sample(&mut rng);
                    }
                }
                if spec.max_tilt_deg > 0.0 {
                    // rotate +y onto a random direction within the tilt cone
                    let tilt = rng.random_range(0.0..=spec.max_tilt_deg).to_radians();
                    let az = rng.random_range(0.0..2.0 * PI);
                    let dir = [tilt.sin() * az.cos(), tilt.cos(), tilt.sin() * az.sin()];
                    let r = rotation_onto_y(dir);
                    // transpose maps +y back onto `dir`
                    for i in 0..n {
                        let v = [x[i], y[i], z[i]];
                        let w: Vec<f64> = (0..3).map(|a| (0..3).map(|b| r[b][a] * v[b]).sum()).collect();
                        (x[i], y[i], z[i]) = (w[0], w[1], w[2]);
                    }
                }
                bursts.insert(test_id.clone(), centers);
                traces.push(SensorTrace {
                    subject_id: subject_id.clone(),
                    test_id,
                    label,
                    sample_rate_hz: TARGET_RATE_HZ,
                    channels: vec![x, y, z],
                });
            }
        }
    }
    Ok(SynthTraces { traces, bursts, subjects })
}

/// Generates and preprocesses the cohort into epochs.
pub fn generate_synthetic_cohort(spec: &SynthCohortSpec) -> Result<SynthCohort> {
    let raw = generate_traces(spec)?;
    let mut epochs = Vec::new();
    for t in &raw.traces {
        epochs.extend(preprocess_pipeline(t)?);
    }
    let mut dataset = Dataset::new("synthetic", Role::Target, spec.label_space(), epochs)?;
    dataset.subjects = raw.subjects;
    dataset.validate()?;
    Ok(SynthCohort { dataset, bursts: raw.bursts })
}
