use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::real::Real;
use super::spec::ModelSpec;
use crate::error::{Error, Result};

/// Weights and biases of one layer; both empty for parameter-free layers.
/// Conv weights are `[out][in][k]`, dense weights `[out][in]`, row-major.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams<F> {
    pub weight: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Real> LayerParams<F> {
    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> F {
        if i < self.weight.len() {
            self.weight[i]
        } else {
            self.bias[i - self.weight.len()]
        }
    }

    pub fn get_mut(&mut self, i: usize) -> &mut F {
        let nw = self.weight.len();
        if i < nw {
            &mut self.weight[i]
        } else {
            &mut self.bias[i - nw]
        }
    }
}

/// Parameters for every layer of a [`ModelSpec`], index-aligned with its layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters<F> {
    pub layers: Vec<LayerParams<F>>,
}

impl<F: Real> Parameters<F> {
    pub fn zeros(spec: &ModelSpec) -> Self {
        let layers = spec
            .layers
            .iter()
            .map(|l| match l.param_shapes() {
                Some((w, b)) => LayerParams {
                    weight: vec![F::zero(); w.iter().product()],
                    bias: vec![F::zero(); b],
                },
                None => LayerParams::default(),
            })
            .collect();
        Parameters { layers }
    }

    /// He-uniform weights `U(−√(6/fan_in), √(6/fan_in))`, zero biases.
    pub fn he_uniform(spec: &ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(spec);
        for (layer, lp) in spec.layers.iter().zip(p.layers.iter_mut()) {
            init_layer(layer.fan_in(), &mut lp.weight, &mut rng);
        }
        p
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum()
    }

    pub fn cast<G: Real>(&self) -> Parameters<G> {
        Parameters {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    weight: l.weight.iter().map(|&v| G::of(Real::to_f64(v))).collect(),
                    bias: l.bias.iter().map(|&v| G::of(Real::to_f64(v))).collect(),
                })
                .collect(),
        }
    }

    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        if self.layers.len() != spec.layers.len() {
            return Err(Error::Shape(format!(
                "parameters cover {} layers, spec has {}",
                self.layers.len(),
                spec.layers.len()
            )));
        }
        for (i, (layer, lp)) in spec.layers.iter().zip(&self.layers).enumerate() {
            let (w, b) = layer
                .param_shapes()
                .map(|(w, b)| (w.iter().product::<usize>(), b))
                .unwrap_or((0, 0));
            if lp.weight.len() != w || lp.bias.len() != b {
                return Err(Error::Shape(format!(
                    "layer {i}: expected {w} weights/{b} biases, got {}/{}",
                    lp.weight.len(),
                    lp.bias.len()
                )));
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn zero_biases(&mut self) {
        for l in &mut self.layers {
            l.bias.iter_mut().for_each(|b| *b = F::zero());
        }
    }
}

pub(crate) fn init_layer<F: Real>(fan_in: usize, weight: &mut [F], rng: &mut ChaCha8Rng) {
    if fan_in == 0 {
        return;
    }
    let limit = (6.0 / fan_in as f64).sqrt();
    for w in weight.iter_mut() {
        *w = F::of(rng.random_range(-limit..limit));
    }
}
