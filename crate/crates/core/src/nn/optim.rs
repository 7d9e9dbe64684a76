use serde::{Deserialize, Serialize};

use super::params::Parameters;
use super::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Plain SGD or Adam. Frozen layers are never touched, so their parameters
/// stay bitwise unchanged.
#[derive(Debug, Clone)]
pub struct Optimizer<F> {
    settings: OptimizerSettings,
    step: u64,
    m: Option<Parameters<F>>,
    v: Option<Parameters<F>>,
}

impl<F: Real> Optimizer<F> {
    pub fn new(settings: OptimizerSettings) -> Self {
        Optimizer {
            settings,
            step: 0,
            m: None,
            v: None,
        }
    }

    pub fn step(&mut self, params: &mut Parameters<F>, grads: &Parameters<F>, frozen: &[bool]) {
        self.step += 1;
        let s = self.settings;
        let lr = F::of(s.learning_rate);
        match s.kind {
            OptimizerKind::Sgd => {
                for (l, (p, g)) in params.layers.iter_mut().zip(&grads.layers).enumerate() {
                    if frozen[l] {
                        continue;
                    }
                    for (pv, &gv) in p.weight.iter_mut().chain(p.bias.iter_mut()).zip(g.weight.iter().chain(&g.bias)) {
                        *pv -= lr * gv;
                    }
                }
            }
            OptimizerKind::Adam => {
                let m = self.m.get_or_insert_with(|| zeros_like(grads));
                let v = self.v.get_or_insert_with(|| zeros_like(grads));
                let (b1, b2) = (F::of(s.beta1), F::of(s.beta2));
                let c1 = F::of(1.0 - s.beta1.powi(self.step as i32));
                let c2 = F::of(1.0 - s.beta2.powi(self.step as i32));
                let eps = F::of(s.epsilon);
                let one = F::one();
                for l in 0..params.layers.len() {
                    if frozen[l] {
                        continue;
                    }
                    let p = &mut params.layers[l];
                    let g = &grads.layers[l];
                    let (ml, vl) = (&mut m.layers[l], &mut v.layers[l]);
                    let it = p
                        .weight
                        .iter_mut()
                        .chain(p.bias.iter_mut())
                        .zip(g.weight.iter().chain(&g.bias))
                        .zip(ml.weight.iter_mut().chain(ml.bias.iter_mut()))
                        .zip(vl.weight.iter_mut().chain(vl.bias.iter_mut()));
                    for (((pv, &gv), mv), vv) in it {
                        *mv = b1 * *mv + (one - b1) * gv;
                        *vv = b2 * *vv + (one - b2) * gv * gv;
                        let mhat = *mv / c1;
                        let vhat = *vv / c2;
                        *pv -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

fn zeros_like<F: Real>(p: &Parameters<F>) -> Parameters<F> {
    Parameters {
        layers: p
            .layers
            .iter()
            .map(|l| super::params::LayerParams {
                weight: vec![F::zero(); l.weight.len()],
                bias: vec![F::zero(); l.bias.len()],
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::LayerParams;

    fn one_layer(w: f64) -> Parameters<f64> {
        Parameters {
            layers: vec![LayerParams { weight: vec![w], bias: vec![0.0] }],
        }
    }

    fn settings(kind: OptimizerKind, lr: f64) -> OptimizerSettings {
        OptimizerSettings { kind, learning_rate: lr, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }

    #[test]
    fn sgd_step() {
        let mut p = one_layer(1.0);
        let g = one_layer(2.0);
        Optimizer::new(settings(OptimizerKind::Sgd, 0.1)).step(&mut p, &g, &[false]);
        assert!((p.layers[0].weight[0] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut p = one_layer(1.0);
        let g = one_layer(-5.0);
        Optimizer::new(settings(OptimizerKind::Adam, 0.01)).step(&mut p, &g, &[false]);
        assert!((p.layers[0].weight[0] - 1.01).abs() < 1e-6);
    }

    #[test]
    fn frozen_and_zero_rate_untouched() {
        let mut p = one_layer(1.0);
        let g = one_layer(3.0);
        Optimizer::new(settings(OptimizerKind::Adam, 0.1)).step(&mut p, &g, &[true]);
        assert_eq!(p, one_layer(1.0));
        Optimizer::new(settings(OptimizerKind::Adam, 0.0)).step(&mut p, &g, &[false]);
        assert_eq!(p, one_layer(1.0));
    }
}
