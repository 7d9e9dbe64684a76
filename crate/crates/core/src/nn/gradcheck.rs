use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backward::{backward, cross_entropy};
use super::forward::{forward_from, ForwardTrace, Mode};
use super::params::Parameters;
use super::spec::{LayerSpec, ModelSpec};
use crate::error::{Error, Result};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates whose ±step perturbation crossed a relu kink or changed a
    /// maxpool winner; the loss is not differentiable across those.
    pub skipped: usize,
}

/// Compares backprop gradients with central differences on a random subset
/// of max(1%, 50) parameters (all of them for small models). Dropout is off.
///
/// The loss is cross-entropy when the model ends in softmax, otherwise the
/// raw output at `label`.
pub fn check_gradients(
    spec: &ModelSpec,
    params: &Parameters<f64>,
    input: &[f64],
    label: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    params.check_against(spec)?;
    let shapes = spec.shapes()?;
    if input.len() != shapes[0].size() {
        return Err(Error::Shape(format!(
            "input has {} values, model expects {}",
            input.len(),
            shapes[0].size()
        )));
    }
    let run = |p: &Parameters<f64>| forward_from(spec, &shapes, p, 0, input.to_vec(), Mode::Inference);
    let loss_of = |t: &ForwardTrace<f64>| -> (f64, Vec<f64>) {
        if spec.ends_with_softmax() {
            let lg = cross_entropy(t.posteriors(), label);
            (lg.loss, lg.grad_logits)
        } else {
            let mut g = vec![0.0; t.output().len()];
            g[label] = 1.0;
            (t.output()[label], g)
        }
    };

    let base = run(params)?;
    let (_, grad_out) = loss_of(&base);
    let mut grads = Parameters::zeros(spec);
    backward(spec, params, &base, &grad_out, &vec![false; spec.layers.len()], &mut grads)?;
    let base_pattern = pattern(spec, &base);

    let coords: Vec<(usize, usize)> = params
        .layers
        .iter()
        .enumerate()
        .flat_map(|(l, lp)| (0..lp.len()).map(move |i| (l, i)))
        .collect();
    let n = coords.len();
    let want = (n.div_ceil(100)).max(50).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, want).into_vec();
    picked.sort_unstable();

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        skipped: 0,
    };
    let mut work = params.clone();
    for idx in picked {
        let (l, i) = coords[idx];
        let orig = params.layers[l].get(i);
        *work.layers[l].get_mut(i) = orig + FD_STEP;
        let plus = run(&work)?;
        *work.layers[l].get_mut(i) = orig - FD_STEP;
        let minus = run(&work)?;
        *work.layers[l].get_mut(i) = orig;
        if pattern(spec, &plus) != base_pattern || pattern(spec, &minus) != base_pattern {
            report.skipped += 1;
            continue;
        }
        let fd = (loss_of(&plus).0 - loss_of(&minus).0) / (2.0 * FD_STEP);
        let bp = grads.layers[l].get(i);
        let rel = (bp - fd).abs() / bp.abs().max(fd.abs()).max(1e-8);
        report.max_relative_error = report.max_relative_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

/// Relu on/off states and maxpool winners: the piecewise-linear region.
fn pattern(spec: &ModelSpec, t: &ForwardTrace<f64>) -> (Vec<bool>, Vec<u32>) {
    let mut on = Vec::new();
    let mut winners = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        match layer {
            LayerSpec::Relu => on.extend(t.input_of(i).iter().map(|&v| v > 0.0)),
            LayerSpec::MaxPool1d { .. } => winners.extend_from_slice(&t.pool_winners[i]),
            _ => {}
        }
    }
    (on, winners)
}
