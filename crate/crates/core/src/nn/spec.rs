use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of a feed-forward network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Stride 1, no padding.
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
    },
    Relu,
    #[serde(rename = "maxpool1d")]
    MaxPool1d { pool: usize, stride: usize },
    Flatten,
    Dense { in_dim: usize, out_dim: usize },
    Dropout { rate: f64 },
    Softmax,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv1d { .. } | LayerSpec::Dense { .. })
    }

    pub fn is_conv_block(&self) -> bool {
        matches!(
            self,
            LayerSpec::Conv1d { .. } | LayerSpec::Relu | LayerSpec::MaxPool1d { .. }
        )
    }

    /// (weight shape, bias length) for parameterised layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, usize)> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
            } => Some((vec![out_channels, in_channels, kernel_size], out_channels)),
            LayerSpec::Dense { in_dim, out_dim } => Some((vec![out_dim, in_dim], out_dim)),
            _ => None,
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                kernel_size,
                ..
            } => in_channels * kernel_size,
            LayerSpec::Dense { in_dim, .. } => in_dim,
            _ => 0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool1d { .. } => "maxpool1d",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Softmax => "softmax",
        }
    }
}

/// Activation shape between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Seq { channels: usize, len: usize },
    Flat(usize),
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Seq { channels, len } => channels * len,
            Shape::Flat(n) => n,
        }
    }
}

/// An ordered layer list applied to a `input_channels × input_len` input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_channels: usize,
    pub input_len: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(input_channels: usize, input_len: usize, layers: Vec<LayerSpec>) -> Result<Self> {
        let spec = ModelSpec {
            input_channels,
            input_len,
            layers,
        };
        spec.shapes()?;
        Ok(spec)
    }

    pub fn input_shape(&self) -> Shape {
        Shape::Seq {
            channels: self.input_channels,
            len: self.input_len,
        }
    }

    pub fn input_size(&self) -> usize {
        self.input_channels * self.input_len
    }

    /// Activation shapes at every boundary (`layers.len() + 1` entries);
    /// fails if any consecutive pair does not compose.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut shapes = vec![self.input_shape()];
        let n = self.layers.len();
        if n == 0 {
            return Err(Error::Shape("model has no layers".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = *shapes.last().unwrap();
            let bad = |msg: String| Error::Shape(format!("layer {i} ({}): {msg}", layer.name()));
            let next = match (*layer, cur) {
                (
                    LayerSpec::Conv1d {
                        in_channels,
                        out_channels,
                        kernel_size,
                    },
                    Shape::Seq { channels, len },
                ) => {
                    if in_channels != channels {
                        return Err(bad(format!("expects {in_channels} channels, got {channels}")));
                    }
                    if kernel_size == 0 || out_channels == 0 || kernel_size > len {
                        return Err(bad(format!("kernel {kernel_size} does not fit length {len}")));
                    }
                    Shape::Seq {
                        channels: out_channels,
                        len: len - kernel_size + 1,
                    }
                }
                (LayerSpec::MaxPool1d { pool, stride }, Shape::Seq { channels, len }) => {
                    if pool == 0 || stride == 0 || pool > len {
                        return Err(bad(format!("pool {pool}/stride {stride} invalid for length {len}")));
                    }
                    Shape::Seq {
                        channels,
                        len: (len - pool) / stride + 1,
                    }
                }
                (LayerSpec::Flatten, s) => Shape::Flat(s.size()),
                (LayerSpec::Dense { in_dim, out_dim }, Shape::Flat(d)) => {
                    if in_dim != d || out_dim == 0 {
                        return Err(bad(format!("expects input {in_dim}, got {d}")));
                    }
                    Shape::Flat(out_dim)
                }
                (LayerSpec::Relu, s) => s,
                (LayerSpec::Dropout { rate }, s) => {
                    if !(0.0..1.0).contains(&rate) {
                        return Err(bad(format!("rate {rate} outside [0, 1)")));
                    }
                    s
                }
                (LayerSpec::Softmax, Shape::Flat(d)) => {
                    if i + 1 != n {
                        return Err(bad("softmax must be the final layer".into()));
                    }
                    Shape::Flat(d)
                }
                (_, s) => return Err(bad(format!("incompatible input shape {s:?}"))),
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_size(&self) -> Result<usize> {
        Ok(self.shapes()?.last().unwrap().size())
    }

    pub fn ends_with_softmax(&self) -> bool {
        matches!(self.layers.last(), Some(LayerSpec::Softmax))
    }

    /// Index of the layer producing the logits (the softmax input).
    pub fn logits_boundary(&self) -> usize {
        if self.ends_with_softmax() {
            self.layers.len() - 1
        } else {
            self.layers.len()
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.param_shapes())
            .map(|(w, b)| w.iter().product::<usize>() + b)
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_chain() {
        let spec = ModelSpec::new(
            1,
            10,
            vec![
                LayerSpec::Conv1d {
                    in_channels: 1,
                    out_channels: 2,
                    kernel_size: 3,
                },
                LayerSpec::Relu,
                LayerSpec::MaxPool1d { pool: 2, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense { in_dim: 8, out_dim: 3 },
                LayerSpec::Softmax,
            ],
        )
        .unwrap();
        assert_eq!(spec.output_size().unwrap(), 3);
        assert_eq!(spec.param_count(), 2 * 3 + 2 + 8 * 3 + 3);
    }

    #[test]
    fn rejects_bad_chains() {
        let dense_wrong = vec![LayerSpec::Flatten, LayerSpec::Dense { in_dim: 9, out_dim: 2 }];
        assert!(matches!(ModelSpec::new(1, 10, dense_wrong), Err(Error::Shape(_))));
        let softmax_mid = vec![LayerSpec::Flatten, LayerSpec::Softmax, LayerSpec::Relu];
        assert!(matches!(ModelSpec::new(1, 4, softmax_mid), Err(Error::Shape(_))));
        let conv_after_flat = vec![
            LayerSpec::Flatten,
            LayerSpec::Conv1d {
                in_channels: 1,
                out_channels: 1,
                kernel_size: 1,
            },
        ];
        assert!(ModelSpec::new(1, 4, conv_after_flat).is_err());
    }

    #[test]
    fn serde_tags() {
        let json = serde_json::to_string(&LayerSpec::MaxPool1d { pool: 2, stride: 2 }).unwrap();
        assert_eq!(json, r#"{"kind":"maxpool1d","pool":2,"stride":2}"#);
    }
}
