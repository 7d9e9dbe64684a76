//! Layer-wise relevance propagation: αβ rule on conv layers, ε rule on dense
//! layers, identity through relu/dropout/flatten, winner-take-all through
//! maxpool. Everything runs in f64.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelBundle;
use crate::nn::forward::seq_len;
use crate::nn::{forward_from, ForwardTrace, LayerSpec, Mode, ModelSpec, Parameters, Shape};
use crate::signal::{Epoch, EPOCH_CHANNELS, EPOCH_LEN, TARGET_RATE_HZ};

pub const CHANNEL_NAMES: [&str; EPOCH_CHANNELS] = ["ax", "ay", "az", "mag"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrpRules {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl Default for LrpRules {
    fn default() -> Self {
        LrpRules { alpha: 1.0, beta: 0.0, epsilon: 0.01 }
    }
}

impl LrpRules {
    /// Rules with `beta = alpha − 1`.
    pub fn new(alpha: f64, epsilon: f64) -> Result<Self> {
        let r = LrpRules { alpha, beta: alpha - 1.0, epsilon };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 1.0) {
            return Err(Error::Spec(format!("alpha must be ≥ 1, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0 && (self.alpha - self.beta - 1.0).abs() < 1e-12) {
            return Err(Error::Spec(format!(
                "need alpha − beta = 1 and beta ≥ 0, got alpha {} beta {}",
                self.alpha, self.beta
            )));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::Spec(format!("epsilon must be ≥ 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSum {
    /// Boundary index: the input of layer `boundary`, or the network output
    /// when it equals the layer count.
    pub boundary: usize,
    pub sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceMap {
    /// Channel-major, same layout as the epoch.
    pub relevance: Vec<f64>,
    pub channels: usize,
    pub len: usize,
    pub explained_class: usize,
    pub explained_logit: f64,
    /// One entry per activation boundary (layers + 1).
    pub per_layer_sums: Vec<LayerSum>,
    pub per_channel_totals: Vec<f64>,
    /// Layer names, for reports.
    pub layer_names: Vec<String>,
}

impl RelevanceMap {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.relevance[c * self.len..(c + 1) * self.len]
    }

    pub fn total(&self) -> f64 {
        self.relevance.iter().sum()
    }
}

/// A bundle converted to f64 once, for explaining many epochs.
#[derive(Debug, Clone)]
pub struct Explainer {
    spec: ModelSpec,
    shapes: Vec<Shape>,
    params: Parameters<f64>,
}

impl Explainer {
    pub fn new(bundle: &ModelBundle) -> Result<Self> {
        Self::from_parts(&bundle.spec, &bundle.params.cast())
    }

    pub fn from_parts(spec: &ModelSpec, params: &Parameters<f64>) -> Result<Self> {
        params.check_against(spec)?;
        if !params.all_finite() {
            return Err(Error::Numerical("model parameters are not finite".into()));
        }
        Ok(Explainer { spec: spec.clone(), shapes: spec.shapes()?, params: params.clone() })
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardTrace<f64>> {
        if input.len() != self.shapes[0].size() {
            return Err(Error::Shape(format!(
                "input has {} values, model expects {}",
                input.len(),
                self.shapes[0].size()
            )));
        }
        forward_from(&self.spec, &self.shapes, &self.params, 0, input.to_vec(), Mode::Inference)
    }

    /// Explains the pre-softmax score of `class`.
    pub fn explain(&self, input: &[f32], class: usize, rules: &LrpRules) -> Result<RelevanceMap> {
        self.explain_scaled(input, class, rules, 1.0)
    }

    /// Like [`Explainer::explain`] with the seed relevance multiplied by `scale`.
    pub fn explain_scaled(&self, input: &[f32], class: usize, rules: &LrpRules, scale: f64) -> Result<RelevanceMap> {
        rules.validate()?;
        let x: Vec<f64> = input.iter().map(|&v| v as f64).collect();
        let trace = self.forward(&x)?;
        let logits = trace.logits();
        if class >= logits.len() {
            return Err(Error::Shape(format!("class {class} outside {} outputs", logits.len())));
        }
        let mut seed = vec![0.0; logits.len()];
        seed[class] = logits[class] * scale;
        let (relevance, sums) = self.propagate(&trace, seed, rules)?;
        let (channels, len) = match self.shapes[0] {
            Shape::Seq { channels, len } => (channels, len),
            Shape::Flat(n) => (1, n),
        };
        let per_channel_totals = (0..channels).map(|c| relevance[c * len..(c + 1) * len].iter().sum()).collect();
        Ok(RelevanceMap {
            relevance,
            channels,
            len,
            explained_class: class,
            explained_logit: logits[class],
            per_layer_sums: sums
                .into_iter()
                .enumerate()
                .map(|(boundary, sum)| LayerSum { boundary, sum })
                .collect(),
            per_channel_totals,
            layer_names: self.spec.layers.iter().map(|l| l.name().to_string()).collect(),
        })
    }

    /// Runs the relevance pass from `seed` (relevance at the logits).
    /// Returns input relevance and the sum at every boundary.
    pub fn propagate(&self, trace: &ForwardTrace<f64>, seed: Vec<f64>, rules: &LrpRules) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.spec.layers.len();
        let top = self.spec.logits_boundary();
        let mut sums = vec![0.0; n + 1];
        let seed_sum: f64 = seed.iter().sum();
        for s in &mut sums[top..] {
            *s = seed_sum;
        }
        let mut r = seed;
        for i in (0..top).rev() {
            let x = trace.input_of(i);
            let lp = &self.params.layers[i];
            r = match &self.spec.layers[i] {
                LayerSpec::Conv1d { in_channels, out_channels, kernel_size } => conv_alpha_beta(
                    x,
                    &lp.weight,
                    &lp.bias,
                    &r,
                    (*in_channels, *out_channels, *kernel_size, seq_len(self.shapes[i])),
                    rules,
                ),
                LayerSpec::Dense { in_dim, out_dim } => {
                    dense_epsilon(x, &lp.weight, &lp.bias, &r, *in_dim, *out_dim, rules.epsilon)
                }
                LayerSpec::MaxPool1d { .. } => {
                    let mut out = vec![0.0; x.len()];
                    for (&w, &rv) in trace.pool_winners[i].iter().zip(&r) {
                        out[w as usize] += rv;
                    }
                    out
                }
                LayerSpec::Relu | LayerSpec::Flatten | LayerSpec::Dropout { .. } => r,
                LayerSpec::Softmax => unreachable!("softmax is only allowed last"),
            };
            sums[i] = r.iter().sum();
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("relevance is not finite".into()));
        }
        Ok((r, sums))
    }
}

/// ε rule: `R_j = Σ_k a_j w_kj / (z_k + ε·sign(z_k)) · R_k`, `z_k` including
/// the bias. A zero denominator drops that unit's relevance.
pub fn dense_epsilon(x: &[f64], w: &[f64], b: &[f64], r: &[f64], din: usize, dout: usize, eps: f64) -> Vec<f64> {
    let mut out = vec![0.0; din];
    for k in 0..dout {
        if r[k] == 0.0 {
            continue;
        }
        let row = &w[k * din..(k + 1) * din];
        let z: f64 = row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b[k];
        let den = z + if z >= 0.0 { eps } else { -eps };
        if den == 0.0 {
            continue;
        }
        let s = r[k] / den;
        for j in 0..din {
            out[j] += x[j] * row[j] * s;
        }
    }
    out
}

/// αβ rule on a valid 1-D convolution. Contributions `a_i·w_ij` are split by
/// sign; the positive (negative) part of the bias enters the matching
/// denominator but receives no share.
pub fn conv_alpha_beta(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    r: &[f64],
    (cin, cout, k, len_in): (usize, usize, usize, usize),
    rules: &LrpRules,
) -> Vec<f64> {
    let len_out = len_in - k + 1;
    let mut out = vec![0.0; cin * len_in];
    for o in 0..cout {
        for t in 0..len_out {
            let rv = r[o * len_out + t];
            if rv == 0.0 {
                continue;
            }
            let (mut zp, mut zn) = (b[o].max(0.0), b[o].min(0.0));
            for ci in 0..cin {
                let wk = &w[(o * cin + ci) * k..(o * cin + ci + 1) * k];
                let xs = &x[ci * len_in + t..ci * len_in + t + k];
                for (a, wv) in xs.iter().zip(wk) {
                    let z = a * wv;
                    if z > 0.0 {
                        zp += z;
                    } else {
                        zn += z;
                    }
                }
            }
            let sp = if zp > 0.0 { rules.alpha * rv / zp } else { 0.0 };
            let sn = if zn < 0.0 && rules.beta > 0.0 { rules.beta * rv / zn } else { 0.0 };
            if sp == 0.0 && sn == 0.0 {
                continue;
            }
            for ci in 0..cin {
                let wk = &w[(o * cin + ci) * k..(o * cin + ci + 1) * k];
                let base = ci * len_in + t;
                for kk in 0..k {
                    let z = x[base + kk] * wk[kk];
                    out[base + kk] += if z > 0.0 { z * sp } else { -z * sn };
                }
            }
        }
    }
    out
}

/// Explains one epoch with a bundle.
pub fn lrp_explain(bundle: &ModelBundle, input: &[f32], class: usize, rules: &LrpRules) -> Result<RelevanceMap> {
    Explainer::new(bundle)?.explain(input, class, rules)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDeviation {
    pub layer: usize,
    pub name: String,
    pub sum_in: f64,
    pub sum_out: f64,
    pub deviation: f64,
}

/// Relative change of the relevance total across every layer.
pub fn conservation_report(map: &RelevanceMap) -> Vec<LayerDeviation> {
    map.per_layer_sums
        .windows(2)
        .enumerate()
        .map(|(layer, w)| LayerDeviation {
            layer,
            name: map.layer_names.get(layer).cloned().unwrap_or_default(),
            sum_in: w[0].sum,
            sum_out: w[1].sum,
            deviation: (w[0].sum - w[1].sum).abs() / w[1].sum.abs().max(1e-12),
        })
        .collect()
}

pub fn conservation_csv(reports: &[(String, Vec<LayerDeviation>)]) -> String {
    let mut s = String::from("record,layer,name,sum_in,sum_out,deviation\n");
    for (rec, rows) in reports {
        for d in rows {
            let _ = writeln!(s, "{rec},{},{},{},{},{}", d.layer, d.name, d.sum_in, d.sum_out, d.deviation);
        }
    }
    s
}

/// CSV with one row per channel sample.
pub fn heatmap_csv(map: &RelevanceMap, epoch: &Epoch) -> Result<String> {
    if map.channels != EPOCH_CHANNELS || map.len != EPOCH_LEN {
        return Err(Error::Shape("relevance map is not 4×128".into()));
    }
    let t0 = epoch.start_time_s();
    let mut s = String::from("channel,sample_index,time_s,signal_value,relevance\n");
    for c in 0..EPOCH_CHANNELS {
        let sig = epoch.channel(c);
        for (i, (&v, &r)) in sig.iter().zip(map.channel(c)).enumerate() {
            let t = t0 + i as f64 / TARGET_RATE_HZ;
            let _ = writeln!(s, "{},{i},{t},{v},{r}", CHANNEL_NAMES[c]);
        }
    }
    Ok(s)
}

/// Writes the heatmap CSV and, when `svg` is given, an SVG rendering.
pub fn export_heatmap(map: &RelevanceMap, epoch: &Epoch, csv: &Path, svg: Option<&Path>) -> Result<()> {
    let text = heatmap_csv(map, epoch)?;
    fs::write(csv, text).map_err(|e| Error::io(csv, e))?;
    if let Some(p) = svg {
        fs::write(p, heatmap_svg(map, epoch)).map_err(|e| Error::io(p, e))?;
    }
    Ok(())
}

/// Symmetric colour scale: the 99th percentile of |R|.
pub fn color_scale(relevance: &[f64]) -> f64 {
    let mut a: Vec<f64> = relevance.iter().map(|v| v.abs()).collect();
    if a.is_empty() {
        return 0.0;
    }
    a.sort_by(f64::total_cmp);
    let idx = ((a.len() - 1) as f64 * 0.99).round() as usize;
    a[idx]
}

/// Diverging palette: black at zero, red→yellow for positive, blue→cyan for
/// negative relevance.
pub fn relevance_color(r: f64, scale: f64) -> (u8, u8, u8) {
    if scale <= 0.0 || r == 0.0 {
        return (0, 0, 0);
    }
    let u = (r.abs() / scale).min(1.0);
    let lo = (255.0 * (2.0 * u).min(1.0)).round() as u8;
    let hi = (255.0 * (2.0 * u - 1.0).max(0.0)).round() as u8;
    if r > 0.0 {
        (lo, hi, 0)
    } else {
        (0, hi, lo)
    }
}

pub fn heatmap_svg(map: &RelevanceMap, epoch: &Epoch) -> String {
    let (w, panel_h, pad) = (800.0, 120.0, 10.0);
    let scale = color_scale(&map.relevance);
    let mut s = String::new();
    let height = EPOCH_CHANNELS as f64 * panel_h;
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{height}" viewBox="0 0 {w} {height}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for c in 0..EPOCH_CHANNELS {
        let sig = epoch.channel(c);
        let rel = map.channel(c);
        let (mn, mx) = sig.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = if mx > mn { (mx - mn) as f64 } else { 1.0 };
        let y0 = c as f64 * panel_h;
        let px = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (sig.len() - 1) as f64;
        let py = |v: f32| y0 + panel_h - pad - (panel_h - 2.0 * pad) * ((v - mn) as f64 / span);
        let _ = writeln!(s, r#"<text x="{pad}" y="{}" font-size="11">{}</text>"#, y0 + 12.0, CHANNEL_NAMES[c]);
        for i in 0..sig.len() - 1 {
            let (r, g, b) = relevance_color(0.5 * (rel[i] + rel[i + 1]), scale);
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="rgb({r},{g},{b})" stroke-width="2"/>"#,
                px(i),
                py(sig[i]),
                px(i + 1),
                py(sig[i + 1])
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerParams;

    fn dense_net(w: Vec<f64>, b: f64) -> (ModelSpec, Parameters<f64>) {
        let spec = ModelSpec::new(1, 2, vec![LayerSpec::Flatten, LayerSpec::Dense { in_dim: 2, out_dim: 1 }]).unwrap();
        let p = Parameters { layers: vec![LayerParams::default(), LayerParams { weight: w, bias: vec![b] }] };
        (spec, p)
    }

    #[test]
    fn dense_hand_examples() {
        let (spec, p) = dense_net(vec![1.0, 3.0], 0.0);
        let ex = Explainer::from_parts(&spec, &p).unwrap();
        let rules0 = LrpRules { alpha: 1.0, beta: 0.0, epsilon: 0.0 };
        let m = ex.explain(&[1.0, 2.0], 0, &rules0).unwrap();
        assert_eq!(m.explained_logit, 7.0);
        assert!((m.relevance[0] - 1.0).abs() < 1e-12 && (m.relevance[1] - 6.0).abs() < 1e-12);
        assert_eq!(m.per_layer_sums.len(), 3);

        let m = ex.explain(&[1.0, 2.0], 0, &LrpRules::default()).unwrap();
        assert!((m.relevance[0] - 7.0 / 7.01).abs() < 1e-12);
        assert!((m.relevance[1] - 42.0 / 7.01).abs() < 1e-12);
        let dev = conservation_report(&m);
        assert!((dev[1].deviation - 0.01 / 7.01).abs() < 1e-12, "{dev:?}");
        assert_eq!(dev[0].deviation, 0.0);
    }

    #[test]
    fn epsilon_follows_denominator_sign() {
        let r = dense_epsilon(&[1.0, 2.0], &[-1.0, -3.0], &[0.0], &[-7.0], 2, 1, 0.01);
        assert!((r[0] - (-7.0 / -7.01) * -1.0).abs() < 1e-12);
        assert!(r.iter().sum::<f64>().abs() < 7.0);
    }

    #[test]
    fn conv_rule_conserves_and_splits_by_sign() {
        let x = [1.0, -2.0, 0.5];
        let w = [2.0, 1.0];
        let rules = LrpRules { alpha: 1.0, beta: 0.0, epsilon: 0.0 };
        let r = conv_alpha_beta(&x, &w, &[0.0], &[1.0, 0.0], (1, 1, 2, 3), &rules);
        // contributions 2 and −2: only the positive one receives relevance
        assert_eq!(r, vec![1.0, 0.0, 0.0]);
        let rules = LrpRules::new(2.0, 0.0).unwrap();
        let r = conv_alpha_beta(&x, &w, &[0.0], &[1.0, 0.0], (1, 1, 2, 3), &rules);
        assert_eq!(r, vec![2.0, -1.0, 0.0]);
        // positive bias takes its share out of the total
        let r = conv_alpha_beta(&[1.0, 1.0], &[1.0, 1.0], &[2.0], &[1.0], (1, 1, 2, 2), &LrpRules::default());
        assert_eq!(r, vec![0.25, 0.25]);
    }

    #[test]
    fn rules_validation() {
        assert!(LrpRules::new(0.5, 0.0).is_err());
        assert!(LrpRules::new(1.0, -1.0).is_err());
        assert!(LrpRules { alpha: 2.0, beta: 0.0, epsilon: 0.0 }.validate().is_err());
        assert_eq!(LrpRules::new(2.0, 0.01).unwrap().beta, 1.0);
    }

    #[test]
    fn palette() {
        assert_eq!(relevance_color(0.0, 1.0), (0, 0, 0));
        assert_eq!(relevance_color(5.0, 0.0), (0, 0, 0));
        assert_eq!(relevance_color(1.0, 1.0), (255, 255, 0));
        assert_eq!(relevance_color(-1.0, 1.0), (0, 255, 255));
        assert_eq!(relevance_color(0.5, 1.0), (255, 0, 0));
        let v: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(color_scale(&v), 99.0);
    }
}
