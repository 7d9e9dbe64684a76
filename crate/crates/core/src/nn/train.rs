use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backward::{backward, loss_and_grad, lowest_trainable};
use super::forward::{argmax, forward_from, Mode};
use super::optim::{Optimizer, OptimizerKind, OptimizerSettings};
use super::params::Parameters;
use super::spec::{LayerSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::seed;
use crate::signal::Epoch;

/// Training hyperparameters. `epochs` counts passes over the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    /// Passes without validation improvement before stopping; 0 disables.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 64,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "epochs",
        "batch_size",
        "learning_rate",
        "optimizer",
        "adam_beta1",
        "adam_beta2",
        "adam_eps",
        "seed",
        "patience",
    ];

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.batch_size == 0 {
            bad.push("batch_size must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            bad.push("learning_rate must be finite and non-negative");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) {
            bad.push("adam_beta1 must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.adam_beta2) {
            bad.push("adam_beta2 must lie in [0, 1)");
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            bad.push("adam_eps must be positive");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Spec(bad.join("; ")))
        }
    }

    fn optimizer_settings(&self) -> OptimizerSettings {
        OptimizerSettings {
            kind: self.optimizer,
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_eps,
        }
    }
}

/// Borrowed inputs with labels.
#[derive(Debug, Clone, Default)]
pub struct LabeledSet<'a> {
    pub inputs: Vec<&'a [f32]>,
    pub labels: Vec<usize>,
}

impl<'a> LabeledSet<'a> {
    pub fn from_epochs<I: IntoIterator<Item = &'a Epoch>>(epochs: I) -> Self {
        let mut s = LabeledSet::default();
        for e in epochs {
            s.inputs.push(&e.data);
            s.labels.push(e.label);
        }
        s
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    pub pass: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub passes: Vec<PassRecord>,
    /// Pass whose parameters were returned; `None` when no pass ran.
    pub best_pass: Option<usize>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("pass,train_loss,train_acc,val_loss,val_acc\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.passes {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.pass,
                r.train_loss,
                r.train_acc,
                opt(r.val_loss),
                opt(r.val_acc)
            );
        }
        s
    }
}

/// First layer index after the longest prefix that is frozen or
/// parameter-free and contains no dropout. Activations at this boundary are
/// fixed for the whole run and computed once.
pub(crate) fn frozen_prefix(spec: &ModelSpec, frozen: &[bool]) -> usize {
    let stop = lowest_trainable(spec, frozen, 0).unwrap_or(spec.layers.len());
    spec.layers[..stop]
        .iter()
        .position(|l| matches!(l, LayerSpec::Dropout { .. }))
        .unwrap_or(stop)
}

/// Mini-batch training with early stopping on validation loss (training loss
/// when `val` is empty). Returns the parameters from the best pass.
pub fn train(
    spec: &ModelSpec,
    init: &Parameters<f32>,
    train_set: &LabeledSet<'_>,
    val_set: &LabeledSet<'_>,
    config: &TrainConfig,
    frozen: &[bool],
) -> Result<(Parameters<f32>, History)> {
    config.validate()?;
    init.check_against(spec)?;
    if frozen.len() != spec.layers.len() {
        return Err(Error::Shape(format!(
            "frozen mask has {} entries, model has {} layers",
            frozen.len(),
            spec.layers.len()
        )));
    }
    if train_set.is_empty() {
        return Err(Error::Spec("training set is empty".into()));
    }
    if !spec.ends_with_softmax() {
        return Err(Error::Spec("training needs a softmax output layer".into()));
    }
    let n_classes = spec.output_size()?;
    for &l in train_set.labels.iter().chain(&val_set.labels) {
        if l >= n_classes {
            return Err(Error::Shape(format!("label {l} outside {n_classes} classes")));
        }
    }
    let shapes = spec.shapes()?;
    let start = frozen_prefix(spec, frozen);
    let features = |set: &LabeledSet<'_>| -> Result<Vec<Vec<f32>>> {
        set.inputs
            .iter()
            .map(|x| {
                if x.len() != shapes[0].size() {
                    return Err(Error::Shape(format!(
                        "input has {} values, model expects {}",
                        x.len(),
                        shapes[0].size()
                    )));
                }
                if start == 0 {
                    return Ok(x.to_vec());
                }
                let t = forward_from(spec, &shapes, init, 0, x.to_vec(), Mode::Inference)?;
                Ok(t.input_of(start).to_vec())
            })
            .collect()
    };
    let train_feat = features(train_set)?;
    let val_feat = features(val_set)?;

    let mut params = init.clone();
    let mut best = init.clone();
    let mut best_metric = f64::INFINITY;
    let mut history = History::default();
    let mut opt = Optimizer::new(config.optimizer_settings());
    let mut grads = Parameters::<f32>::zeros(spec);
    let mut order: Vec<usize> = (0..train_feat.len()).collect();
    let mut stale = 0;

    for pass in 0..config.epochs {
        let diverged = |e: Error| match e {
            Error::Numerical(m) => Error::Numerical(format!("pass {pass}: {m}")),
            other => other,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, &[0, pass as u64]));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            grads.layers.iter_mut().for_each(|l| {
                l.weight.iter_mut().for_each(|v| *v = 0.0);
                l.bias.iter_mut().for_each(|v| *v = 0.0);
            });
            for (k, &i) in batch.iter().enumerate() {
                let mode = Mode::Training {
                    seed: seed::derive(config.seed, &[1, pass as u64, b as u64, k as u64]),
                };
                let t = forward_from(spec, &shapes, &params, start, train_feat[i].clone(), mode)
                    .map_err(diverged)?;
                let lg = loss_and_grad(&t, train_set.labels[i])?;
                if !lg.loss.is_finite() {
                    return Err(Error::Numerical(format!("pass {pass}: loss is not finite")));
                }
                loss_sum += lg.loss as f64;
                correct += usize::from(t.argmax() == train_set.labels[i]);
                backward(spec, &params, &t, &lg.grad_logits, frozen, &mut grads)?;
            }
            let scale = 1.0 / batch.len() as f32;
            grads.layers.iter_mut().for_each(|l| {
                l.weight.iter_mut().chain(l.bias.iter_mut()).for_each(|v| *v *= scale);
            });
            opt.step(&mut params, &grads, frozen);
        }
        if !params.all_finite() {
            return Err(Error::Numerical(format!("pass {pass}: parameters diverged")));
        }
        let n = train_feat.len() as f64;
        let mut rec = PassRecord {
            pass,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss: None,
            val_acc: None,
        };
        if !val_feat.is_empty() {
            let (mut vl, mut vc) = (0.0f64, 0usize);
            for (x, &y) in val_feat.iter().zip(&val_set.labels) {
                let t = forward_from(spec, &shapes, &params, start, x.clone(), Mode::Inference)
                    .map_err(diverged)?;
                vl += loss_and_grad(&t, y)?.loss as f64;
                vc += usize::from(argmax(t.output()) == y);
            }
            let m = val_feat.len() as f64;
            rec.val_loss = Some(vl / m);
            rec.val_acc = Some(vc as f64 / m);
        }
        let metric = rec.val_loss.unwrap_or(rec.train_loss);
        history.passes.push(rec);
        if metric < best_metric {
            best_metric = metric;
            best.clone_from(&params);
            history.best_pass = Some(pass);
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                break;
            }
        }
    }
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (ModelSpec, Vec<Vec<f32>>, Vec<usize>) {
        let spec = ModelSpec::new(
            2,
            16,
            vec![
                LayerSpec::Conv1d { in_channels: 2, out_channels: 4, kernel_size: 3 },
                LayerSpec::Relu,
                LayerSpec::MaxPool1d { pool: 2, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { in_dim: 28, out_dim: 8 },
                LayerSpec::Relu,
                LayerSpec::Dropout { rate: 0.2 },
                LayerSpec::Dense { in_dim: 8, out_dim: 2 },
                LayerSpec::Softmax,
            ],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..60 {
            let y = i % 2;
            let sign = if y == 0 { 1.0 } else { -1.0 };
            let x: Vec<f32> = (0..32)
                .map(|t| sign * ((t % 16) as f32 * 0.4).sin() + 0.3 * (rand::Rng::random::<f32>(&mut rng) - 0.5))
                .collect();
            xs.push(x);
            ys.push(y);
        }
        (spec, xs, ys)
    }

    fn set<'a>(xs: &'a [Vec<f32>], ys: &[usize]) -> LabeledSet<'a> {
        LabeledSet { inputs: xs.iter().map(|x| x.as_slice()).collect(), labels: ys.to_vec() }
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let (spec, xs, ys) = toy();
        let init = Parameters::he_uniform(&spec, 1);
        let cfg = TrainConfig { epochs: 50, batch_size: 8, learning_rate: 1e-2, patience: 0, ..Default::default() };
        let (p, h) = train(&spec, &init, &set(&xs, &ys), &LabeledSet::default(), &cfg, &[false; 9]).unwrap();
        assert_eq!(h.passes.len(), 50);
        let posts = crate::nn::predict(&spec, &p, &xs.iter().map(|x| x.as_slice()).collect::<Vec<_>>()).unwrap();
        let acc = posts.iter().zip(&ys).filter(|(p, &y)| argmax(p) == y).count() as f64 / ys.len() as f64;
        assert!(acc >= 0.99, "accuracy {acc}");
    }

    #[test]
    fn zero_rate_and_zero_passes_keep_parameters() {
        let (spec, xs, ys) = toy();
        let init = Parameters::he_uniform(&spec, 2);
        let cfg = TrainConfig { epochs: 3, learning_rate: 0.0, ..Default::default() };
        let (p, _) = train(&spec, &init, &set(&xs, &ys), &set(&xs, &ys), &cfg, &[false; 9]).unwrap();
        assert_eq!(p, init);
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let (p, h) = train(&spec, &init, &set(&xs, &ys), &LabeledSet::default(), &cfg, &[false; 9]).unwrap();
        assert_eq!(p, init);
        assert!(h.passes.is_empty() && h.best_pass.is_none());
    }

    #[test]
    fn deterministic_and_frozen_layers_fixed() {
        let (spec, xs, ys) = toy();
        let init = Parameters::he_uniform(&spec, 3);
        let cfg = TrainConfig { epochs: 4, batch_size: 16, learning_rate: 5e-3, seed: 11, ..Default::default() };
        let mut frozen = [false; 9];
        frozen[0] = true;
        let a = train(&spec, &init, &set(&xs[..40], &ys[..40]), &set(&xs[40..], &ys[40..]), &cfg, &frozen).unwrap();
        let b = train(&spec, &init, &set(&xs[..40], &ys[..40]), &set(&xs[40..], &ys[40..]), &cfg, &frozen).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.layers[0], init.layers[0]);
        assert_ne!(a.0.layers[4], init.layers[4]);
        assert!(a.1.to_csv().starts_with("pass,train_loss,train_acc,val_loss,val_acc\n0,"));
    }

    #[test]
    fn prefix_stops_at_trainable_or_dropout() {
        let (spec, _, _) = toy();
        assert_eq!(frozen_prefix(&spec, &[false; 9]), 0);
        let mut f = [true; 9];
        f[7] = false;
        assert_eq!(frozen_prefix(&spec, &f), 6);
        f[4] = false;
        assert_eq!(frozen_prefix(&spec, &f), 4);
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { learning_rate: -1.0, batch_size: 0, ..Default::default() };
        let e = bad.validate().unwrap_err().to_string();
        assert!(e.contains("learning_rate") && e.contains("batch_size"));
        let c: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, TrainConfig::default());
    }
}
