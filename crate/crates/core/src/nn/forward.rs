use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{LayerParams, Parameters};
use super::real::{dot, gemm_acc, im2col, MatRef, Real};
use super::spec::{LayerSpec, ModelSpec, Shape};
use crate::error::{Error, Result};

/// Whether dropout is active. Training mode draws the masks from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Inference,
    Training { seed: u64 },
}

/// Cached activations of one forward pass.
///
/// `activations[i]` is the input of layer `start + i`; the last entry is the
/// network output. Pool winners and dropout scales are kept for backprop and
/// relevance propagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace<F> {
    pub start: usize,
    pub activations: Vec<Vec<F>>,
    pub shapes: Vec<Shape>,
    pub pool_winners: Vec<Vec<u32>>,
    pub dropout_scales: Vec<Vec<F>>,
    logits_at: usize,
}

impl<F: Real> ForwardTrace<F> {
    /// Input of layer `layer` (absolute index).
    pub fn input_of(&self, layer: usize) -> &[F] {
        &self.activations[layer - self.start]
    }

    pub fn output(&self) -> &[F] {
        self.activations.last().unwrap()
    }

    /// Pre-softmax scores.
    pub fn logits(&self) -> &[F] {
        &self.activations[self.logits_at - self.start]
    }

    pub fn posteriors(&self) -> &[F] {
        self.output()
    }

    pub fn argmax(&self) -> usize {
        argmax(self.output())
    }
}

pub fn argmax<F: PartialOrd + Copy>(v: &[F]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Runs the whole network on one input.
pub fn forward<F: Real>(
    spec: &ModelSpec,
    params: &Parameters<F>,
    input: &[F],
    mode: Mode,
) -> Result<ForwardTrace<F>> {
    if input.len() != spec.input_size() {
        return Err(Error::Shape(format!(
            "input has {} values, model expects {}×{}",
            input.len(),
            spec.input_channels,
            spec.input_len
        )));
    }
    params.check_against(spec)?;
    let shapes = spec.shapes()?;
    forward_from(spec, &shapes, params, 0, input.to_vec(), mode)
}

/// Runs layers `start..` on an activation that is already the input of layer
/// `start`. `shapes` must come from `spec.shapes()`.
pub fn forward_from<F: Real>(
    spec: &ModelSpec,
    shapes: &[Shape],
    params: &Parameters<F>,
    start: usize,
    input: Vec<F>,
    mode: Mode,
) -> Result<ForwardTrace<F>> {
    let n = spec.layers.len();
    if input.len() != shapes[start].size() {
        return Err(Error::Shape(format!(
            "activation for layer {start} has {} values, expected {}",
            input.len(),
            shapes[start].size()
        )));
    }
    let mut rng = match mode {
        Mode::Training { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Mode::Inference => None,
    };
    let mut activations = Vec::with_capacity(n - start + 1);
    let mut pool_winners = vec![Vec::new(); n - start];
    let mut dropout_scales = vec![Vec::new(); n - start];
    activations.push(input);
    for i in start..n {
        let x = activations.last().unwrap();
        let out = match &spec.layers[i] {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
            } => conv_forward(
                x,
                &params.layers[i],
                *in_channels,
                *out_channels,
                *kernel_size,
                seq_len(shapes[i]),
            ),
            LayerSpec::Relu => x.iter().map(|&v| v.max(F::zero())).collect(),
            LayerSpec::MaxPool1d { pool, stride } => {
                let (out, win) = maxpool_forward(x, shapes[i], *pool, *stride);
                pool_winners[i - start] = win;
                out
            }
            LayerSpec::Flatten => x.clone(),
            LayerSpec::Dense { in_dim, out_dim } => {
                dense_forward(x, &params.layers[i], *in_dim, *out_dim)
            }
            LayerSpec::Dropout { rate } => match rng.as_mut() {
                Some(rng) if *rate > 0.0 => {
                    let keep = 1.0 - rate;
                    let scale = F::of(1.0 / keep);
                    let mask: Vec<F> = (0..x.len())
                        .map(|_| {
                            if rng.random::<f64>() < keep {
                                scale
                            } else {
                                F::zero()
                            }
                        })
                        .collect();
                    let out = x.iter().zip(&mask).map(|(&a, &m)| a * m).collect();
                    dropout_scales[i - start] = mask;
                    out
                }
                _ => x.clone(),
            },
            LayerSpec::Softmax => softmax(x),
        };
        activations.push(out);
    }
    let logits_at = spec.logits_boundary().max(start);
    let trace = ForwardTrace {
        start,
        activations,
        shapes: shapes.to_vec(),
        pool_winners,
        dropout_scales,
        logits_at,
    };
    if trace.output().iter().any(|v| !v.is_finite()) || trace.logits().iter().any(|v| !v.is_finite())
    {
        return Err(Error::Numerical("non-finite activation in forward pass".into()));
    }
    Ok(trace)
}

pub(crate) fn seq_len(s: Shape) -> usize {
    match s {
        Shape::Seq { len, .. } => len,
        Shape::Flat(n) => n,
    }
}

pub(crate) fn conv_forward<F: Real>(
    x: &[F],
    p: &LayerParams<F>,
    cin: usize,
    cout: usize,
    k: usize,
    len_in: usize,
) -> Vec<F> {
    let len_out = len_in - k + 1;
    let mut out = Vec::with_capacity(cout * len_out);
    for &b in &p.bias {
        out.extend(std::iter::repeat(b).take(len_out));
    }
    let cols = im2col(x, cin, len_in, k);
    gemm_acc(MatRef::row_major(&p.weight, cout, cin * k), MatRef::row_major(&cols, cin * k, len_out), &mut out);
    out
}

fn maxpool_forward<F: Real>(x: &[F], shape: Shape, pool: usize, stride: usize) -> (Vec<F>, Vec<u32>) {
    let (channels, len) = match shape {
        Shape::Seq { channels, len } => (channels, len),
        Shape::Flat(n) => (1, n),
    };
    let len_out = (len - pool) / stride + 1;
    let mut out = Vec::with_capacity(channels * len_out);
    let mut win = Vec::with_capacity(channels * len_out);
    for c in 0..channels {
        let xc = &x[c * len..(c + 1) * len];
        for t in 0..len_out {
            let base = t * stride;
            // first maximum wins ties
            let mut best = base;
            for j in base + 1..base + pool {
                if xc[j] > xc[best] {
                    best = j;
                }
            }
            out.push(xc[best]);
            win.push((c * len + best) as u32);
        }
    }
    (out, win)
}

pub(crate) fn dense_forward<F: Real>(x: &[F], p: &LayerParams<F>, din: usize, dout: usize) -> Vec<F> {
    (0..dout)
        .map(|o| p.bias[o] + dot(&p.weight[o * din..(o + 1) * din], x))
        .collect()
}

pub fn softmax<F: Real>(x: &[F]) -> Vec<F> {
    let m = x.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
    let e: Vec<F> = x.iter().map(|&v| (v - m).exp()).collect();
    let s: F = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Inference-mode posteriors for a batch of inputs.
pub fn predict<F: Real>(spec: &ModelSpec, params: &Parameters<F>, inputs: &[&[F]]) -> Result<Vec<Vec<F>>> {
    params.check_against(spec)?;
    let shapes = spec.shapes()?;
    inputs
        .iter()
        .map(|x| {
            if x.len() != spec.input_size() {
                return Err(Error::Shape(format!(
                    "input has {} values, model expects {}",
                    x.len(),
                    spec.input_size()
                )));
            }
            forward_from(spec, &shapes, params, 0, x.to_vec(), Mode::Inference)
                .map(|t| t.output().to_vec())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_hand_example() {
        let spec = ModelSpec::new(
            1,
            4,
            vec![LayerSpec::Conv1d {
                in_channels: 1,
                out_channels: 1,
                kernel_size: 3,
            }],
        )
        .unwrap();
        let params = Parameters {
            layers: vec![LayerParams {
                weight: vec![1.0f64, 0.0, -1.0],
                bias: vec![0.0],
            }],
        };
        let t = forward(&spec, &params, &[1.0, 2.0, 3.0, 4.0], Mode::Inference).unwrap();
        assert_eq!(t.output(), &[-2.0, -2.0]);
    }

    #[test]
    fn relu_and_softmax() {
        let spec = ModelSpec::new(1, 3, vec![LayerSpec::Relu]).unwrap();
        let p = Parameters::<f64>::zeros(&spec);
        let t = forward(&spec, &p, &[-1.0, 0.0, 2.0], Mode::Inference).unwrap();
        assert_eq!(t.output(), &[0.0, 0.0, 2.0]);
        let s = softmax(&[0.0f64, 0.0, 0.0]);
        assert!(s.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn maxpool_first_max_wins() {
        let spec = ModelSpec::new(1, 4, vec![LayerSpec::MaxPool1d { pool: 2, stride: 2 }]).unwrap();
        let p = Parameters::<f64>::zeros(&spec);
        let t = forward(&spec, &p, &[3.0, 3.0, 1.0, 5.0], Mode::Inference).unwrap();
        assert_eq!(t.output(), &[3.0, 5.0]);
        assert_eq!(t.pool_winners[0], vec![0, 3]);
    }

    #[test]
    fn dropout_inference_is_identity_and_training_is_seeded() {
        let spec = ModelSpec::new(1, 64, vec![LayerSpec::Dropout { rate: 0.5 }]).unwrap();
        let p = Parameters::<f32>::zeros(&spec);
        let x: Vec<f32> = (0..64).map(|i| i as f32 + 1.0).collect();
        let t = forward(&spec, &p, &x, Mode::Inference).unwrap();
        assert_eq!(t.output(), &x[..]);
        let a = forward(&spec, &p, &x, Mode::Training { seed: 3 }).unwrap();
        let b = forward(&spec, &p, &x, Mode::Training { seed: 3 }).unwrap();
        assert_eq!(a.output(), b.output());
        for (o, i) in a.output().iter().zip(&x) {
            assert!(*o == 0.0 || *o == 2.0 * i);
        }
    }

    #[test]
    fn shape_mismatch() {
        let spec = ModelSpec::new(1, 4, vec![LayerSpec::Relu]).unwrap();
        let p = Parameters::<f32>::zeros(&spec);
        assert!(matches!(
            forward(&spec, &p, &[1.0; 3], Mode::Inference),
            Err(Error::Shape(_))
        ));
    }
}
