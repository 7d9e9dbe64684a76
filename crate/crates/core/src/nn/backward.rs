use super::forward::{seq_len, ForwardTrace};
use super::params::Parameters;
use super::real::{axpy, gemm_acc, im2col, MatRef, Real};
use super::spec::{LayerSpec, ModelSpec};
use crate::error::{Error, Result};

/// Parameter gradients share the parameter layout.
pub type Gradients<F> = Parameters<F>;

/// Smallest posterior used inside the log.
pub const POSTERIOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<F> {
    pub loss: F,
    /// d loss / d logits = posterior − onehot(label).
    pub grad_logits: Vec<F>,
    /// Set when the true-class posterior had to be floored.
    pub clamped: bool,
}

/// Cross-entropy on the softmax output of `trace`.
pub fn loss_and_grad<F: Real>(trace: &ForwardTrace<F>, label: usize) -> Result<LossGrad<F>> {
    let p = trace.posteriors();
    if label >= p.len() {
        return Err(Error::Shape(format!(
            "label {label} outside {} classes",
            p.len()
        )));
    }
    Ok(cross_entropy(p, label))
}

pub fn cross_entropy<F: Real>(p: &[F], label: usize) -> LossGrad<F> {
    let floor = F::of(POSTERIOR_FLOOR);
    let clamped = p[label] < floor;
    let loss = -(p[label].max(floor)).ln();
    let mut grad_logits = p.to_vec();
    grad_logits[label] -= F::one();
    LossGrad {
        loss,
        grad_logits,
        clamped,
    }
}

/// Index of the lowest layer (≥ `start`) that carries trainable parameters.
pub(crate) fn lowest_trainable(spec: &ModelSpec, frozen: &[bool], start: usize) -> Option<usize> {
    (start..spec.layers.len()).find(|&i| spec.layers[i].has_params() && !frozen[i])
}

/// Backpropagates `grad_logits` through the layers recorded in `trace`,
/// adding parameter gradients into `grads`. Frozen layers get nothing added;
/// propagation stops below the lowest trainable layer since nothing there
/// can use it.
pub fn backward<F: Real>(
    spec: &ModelSpec,
    params: &Parameters<F>,
    trace: &ForwardTrace<F>,
    grad_logits: &[F],
    frozen: &[bool],
    grads: &mut Gradients<F>,
) -> Result<()> {
    if frozen.len() != spec.layers.len() {
        return Err(Error::Shape(format!(
            "frozen mask has {} entries, model has {} layers",
            frozen.len(),
            spec.layers.len()
        )));
    }
    let Some(lowest) = lowest_trainable(spec, frozen, trace.start) else {
        return Ok(());
    };
    let top = spec.logits_boundary();
    let mut g = grad_logits.to_vec();
    for i in (lowest..top).rev() {
        let x = trace.input_of(i);
        let need_input = i > lowest;
        let trainable = !frozen[i];
        g = match &spec.layers[i] {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
            } => {
                let (cin, cout, k) = (*in_channels, *out_channels, *kernel_size);
                let len_in = seq_len(trace.shapes[i]);
                let len_out = len_in - k + 1;
                let w = &params.layers[i].weight;
                let ck = cin * k;
                let gm = MatRef::row_major(&g, cout, len_out);
                if trainable {
                    let gl = &mut grads.layers[i];
                    for o in 0..cout {
                        gl.bias[o] += g[o * len_out..(o + 1) * len_out].iter().copied().sum();
                    }
                    let cols = im2col(x, cin, len_in, k);
                    gemm_acc(gm, MatRef::row_major(&cols, ck, len_out).t(), &mut gl.weight);
                }
                if need_input {
                    let mut gcols = vec![F::zero(); ck * len_out];
                    gemm_acc(MatRef::row_major(w, cout, ck).t(), gm, &mut gcols);
                    let mut gx = vec![F::zero(); cin * len_in];
                    for ci in 0..cin {
                        let gxi = &mut gx[ci * len_in..(ci + 1) * len_in];
                        for kk in 0..k {
                            let src = &gcols[(ci * k + kk) * len_out..(ci * k + kk + 1) * len_out];
                            for (d, &s) in gxi[kk..kk + len_out].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    gx
                } else {
                    Vec::new()
                }
            }
            LayerSpec::Dense { in_dim, out_dim } => {
                let (din, dout) = (*in_dim, *out_dim);
                let w = &params.layers[i].weight;
                if trainable {
                    let gl = &mut grads.layers[i];
                    for o in 0..dout {
                        gl.bias[o] += g[o];
                        axpy(g[o], x, &mut gl.weight[o * din..(o + 1) * din]);
                    }
                }
                if need_input {
                    let mut gx = vec![F::zero(); din];
                    for o in 0..dout {
                        if g[o] != F::zero() {
                            axpy(g[o], &w[o * din..(o + 1) * din], &mut gx);
                        }
                    }
                    gx
                } else {
                    Vec::new()
                }
            }
            LayerSpec::Relu => {
                let y = trace.input_of(i + 1);
                g.iter()
                    .zip(y)
                    .map(|(&gv, &yv)| if yv > F::zero() { gv } else { F::zero() })
                    .collect()
            }
            LayerSpec::MaxPool1d { .. } => {
                let mut gx = vec![F::zero(); x.len()];
                for (&w, &gv) in trace.pool_winners[i - trace.start].iter().zip(&g) {
                    gx[w as usize] += gv;
                }
                gx
            }
            LayerSpec::Flatten => g,
            LayerSpec::Dropout { .. } => {
                let mask = &trace.dropout_scales[i - trace.start];
                if mask.is_empty() {
                    g
                } else {
                    g.iter().zip(mask).map(|(&a, &m)| a * m).collect()
                }
            }
            LayerSpec::Softmax => {
                return Err(Error::Shape("softmax may only be the final layer".into()))
            }
        };
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::forward::{forward, Mode};
    use crate::nn::params::LayerParams;

    #[test]
    fn loss_examples() {
        let lg = cross_entropy(&[1.0f64, 0.0], 0);
        assert_eq!(lg.loss, 0.0);
        let lg = cross_entropy(&[0.5f64, 0.5], 1);
        assert!((lg.loss - std::f64::consts::LN_2).abs() < 1e-12);
        let lg = cross_entropy(&[0.7f64, 0.3], 0);
        assert!((lg.grad_logits[0] + 0.3).abs() < 1e-12 && (lg.grad_logits[1] - 0.3).abs() < 1e-12);
        let lg = cross_entropy(&[1.0f64, 0.0], 1);
        assert!(lg.clamped && (lg.loss - 1e-12f64.ln().abs()).abs() < 1e-9);
    }

    #[test]
    fn linear_dense_gradient() {
        // y = w·x with x = 2 and loss = y gives dL/dw = 2
        let spec = ModelSpec::new(1, 1, vec![LayerSpec::Flatten, LayerSpec::Dense { in_dim: 1, out_dim: 1 }]).unwrap();
        let params = Parameters {
            layers: vec![
                LayerParams::default(),
                LayerParams {
                    weight: vec![0.3f64],
                    bias: vec![0.0],
                },
            ],
        };
        let t = forward(&spec, &params, &[2.0], Mode::Inference).unwrap();
        let mut g = Parameters::zeros(&spec);
        backward(&spec, &params, &t, &[1.0], &[false, false], &mut g).unwrap();
        assert_eq!(g.layers[1].weight, vec![2.0]);
        assert_eq!(g.layers[1].bias, vec![1.0]);
    }

    #[test]
    fn all_frozen_gives_zero() {
        let spec = ModelSpec::new(1, 2, vec![LayerSpec::Flatten, LayerSpec::Dense { in_dim: 2, out_dim: 2 }, LayerSpec::Softmax]).unwrap();
        let params = Parameters::<f64>::he_uniform(&spec, 1);
        let t = forward(&spec, &params, &[1.0, -1.0], Mode::Inference).unwrap();
        let lg = loss_and_grad(&t, 0).unwrap();
        let mut g = Parameters::zeros(&spec);
        backward(&spec, &params, &t, &lg.grad_logits, &[true; 3], &mut g).unwrap();
        assert!(g.layers.iter().all(|l| l.weight.iter().chain(&l.bias).all(|&v| v == 0.0)));
        assert!(matches!(
            backward(&spec, &params, &t, &lg.grad_logits, &[true; 2], &mut g),
            Err(Error::Shape(_))
        ));
    }
}
