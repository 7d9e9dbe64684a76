//! The default 1-D DCNN for 4×128 epochs and its on-disk format.
//!
//! A model directory holds `manifest.json` (spec, labels, provenance, frozen
//! mask, tensor table, checksum) and `weights.bin` (every tensor in layer
//! order, weight before bias, row-major little-endian f32).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checksum::fnv1a64_hex;
use crate::error::{Error, Result};
use crate::nn::{LayerParams, LayerSpec, ModelSpec, Parameters};
use crate::signal::{EPOCH_CHANNELS, EPOCH_LEN};
use crate::transfer::TransferMode;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";
const FORMAT_VERSION: u32 = 1;

/// Width of the hidden dense layer.
pub const HIDDEN_UNITS: usize = 128;
/// Flattened feature count after the third conv block (64 channels × 13).
pub const FEATURE_DIM: usize = 832;
/// Parameter count of the default model for five classes.
pub const PARAMS_FIVE_CLASSES: usize = 131_109;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub source_dataset: String,
    /// Dataset the model was transferred to, if any.
    #[serde(default)]
    pub target_dataset: Option<String>,
    #[serde(default)]
    pub transfer_mode: Option<TransferMode>,
    #[serde(default)]
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub spec: ModelSpec,
    pub params: Parameters<f32>,
    pub label_space: Vec<String>,
    pub provenance: Provenance,
    pub frozen_mask: Vec<bool>,
}

/// Layer list of the default architecture.
pub fn default_layers(n_classes: usize) -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![
        Conv1d { in_channels: EPOCH_CHANNELS, out_channels: 32, kernel_size: 9 },
        Relu,
        MaxPool1d { pool: 2, stride: 2 },
        Conv1d { in_channels: 32, out_channels: 64, kernel_size: 5 },
        Relu,
        MaxPool1d { pool: 2, stride: 2 },
        Conv1d { in_channels: 64, out_channels: 64, kernel_size: 3 },
        Relu,
        MaxPool1d { pool: 2, stride: 2 },
        Flatten,
        Dense { in_dim: FEATURE_DIM, out_dim: HIDDEN_UNITS },
        Relu,
        Dropout { rate: 0.5 },
        Dense { in_dim: HIDDEN_UNITS, out_dim: n_classes },
        Softmax,
    ]
}

pub fn default_spec(n_classes: usize) -> Result<ModelSpec> {
    if n_classes < 2 {
        return Err(Error::Spec(format!("need at least 2 classes, got {n_classes}")));
    }
    ModelSpec::new(EPOCH_CHANNELS, EPOCH_LEN, default_layers(n_classes))
}

/// Untrained default DCNN: He-uniform weights from `seed`, zero biases.
pub fn build_default_dcnn(label_space: &[String], seed: u64) -> Result<ModelBundle> {
    let spec = default_spec(label_space.len())?;
    let params = Parameters::he_uniform(&spec, seed);
    let frozen_mask = vec![false; spec.layers.len()];
    Ok(ModelBundle {
        spec,
        params,
        label_space: label_space.to_vec(),
        provenance: Provenance::default(),
        frozen_mask,
    })
}

impl ModelBundle {
    pub fn validate(&self) -> Result<()> {
        self.spec.shapes()?;
        self.params.check_against(&self.spec)?;
        if self.frozen_mask.len() != self.spec.layers.len() {
            return Err(Error::Shape("frozen mask length differs from layer count".into()));
        }
        let out = self.spec.output_size()?;
        if out != self.label_space.len() {
            return Err(Error::Shape(format!(
                "model has {out} outputs but {} labels",
                self.label_space.len()
            )));
        }
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.label_space.len()
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.label_space.iter().position(|l| l == name)
    }

    /// Inference posteriors for a batch of 4×128 inputs.
    pub fn predict(&self, inputs: &[&[f32]]) -> Result<Vec<Vec<f32>>> {
        crate::nn::predict(&self.spec, &self.params, inputs)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        save_model(self, dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        load_model(dir)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub layer: usize,
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    spec: ModelSpec,
    label_space: Vec<String>,
    provenance: Provenance,
    frozen_mask: Vec<bool>,
    tensors: Vec<TensorEntry>,
    weights_bytes: usize,
    weights_fnv1a64: String,
}

fn tensor_table(spec: &ModelSpec) -> Vec<TensorEntry> {
    let mut off = 0;
    let mut out = Vec::new();
    for (layer, l) in spec.layers.iter().enumerate() {
        if let Some((w, b)) = l.param_shapes() {
            out.push(TensorEntry { layer, name: "weight".into(), offset: off, shape: w.clone() });
            off += 4 * w.iter().product::<usize>();
            out.push(TensorEntry { layer, name: "bias".into(), offset: off, shape: vec![b] });
            off += 4 * b;
        }
    }
    out
}

fn encode_weights(p: &Parameters<f32>) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(4 * p.num_params());
    for l in &p.layers {
        for v in l.weight.iter().chain(&l.bias) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

pub fn save_model(bundle: &ModelBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes = encode_weights(&bundle.params);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        spec: bundle.spec.clone(),
        label_space: bundle.label_space.clone(),
        provenance: bundle.provenance.clone(),
        frozen_mask: bundle.frozen_mask.clone(),
        tensors: tensor_table(&bundle.spec),
        weights_bytes: bytes.len(),
        weights_fnv1a64: fnv1a64_hex(&bytes),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let wpath = dir.join(WEIGHTS_FILE);
    fs::write(&wpath, &bytes).map_err(|e| Error::io(&wpath, e))?;
    let mpath = dir.join(MANIFEST_FILE);
    fs::write(&mpath, json + "\n").map_err(|e| Error::io(&mpath, e))?;
    Ok(())
}

/// Loads a model directory. Checks run in order: spec and tensor shapes
/// (`Shape`), then weights size and checksum (`CorruptModel`).
pub fn load_model(dir: &Path) -> Result<ModelBundle> {
    let mpath = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::CorruptModel(format!("{}: {e}", mpath.display())))?;
    if m.format_version != FORMAT_VERSION {
        return Err(Error::CorruptModel(format!("unsupported format version {}", m.format_version)));
    }
    let spec = ModelSpec::new(m.spec.input_channels, m.spec.input_len, m.spec.layers)?;
    let expected = tensor_table(&spec);
    if m.tensors != expected {
        let detail = m
            .tensors
            .iter()
            .zip(&expected)
            .find(|(a, b)| a != b)
            .map(|(a, b)| format!("layer {} {}: manifest {:?}, spec {:?}", a.layer, a.name, a.shape, b.shape))
            .unwrap_or_else(|| format!("{} tensors listed, spec needs {}", m.tensors.len(), expected.len()));
        return Err(Error::Shape(format!("tensor table does not match spec: {detail}")));
    }
    if m.frozen_mask.len() != spec.layers.len() {
        return Err(Error::Shape("frozen mask length differs from layer count".into()));
    }
    let wpath = dir.join(WEIGHTS_FILE);
    let bytes = fs::read(&wpath).map_err(|e| Error::io(&wpath, e))?;
    let want = 4 * spec.param_count();
    if bytes.len() != want || m.weights_bytes != want {
        return Err(Error::CorruptModel(format!(
            "weights.bin has {} bytes, expected {want}",
            bytes.len()
        )));
    }
    let sum = fnv1a64_hex(&bytes);
    if sum != m.weights_fnv1a64 {
        return Err(Error::CorruptModel(format!(
            "checksum mismatch: manifest {}, file {sum}",
            m.weights_fnv1a64
        )));
    }
    let mut vals = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]));
    let layers = spec
        .layers
        .iter()
        .map(|l| match l.param_shapes() {
            Some((w, b)) => LayerParams {
                weight: vals.by_ref().take(w.iter().product()).collect(),
                bias: vals.by_ref().take(b).collect(),
            },
            None => LayerParams::default(),
        })
        .collect();
    let bundle = ModelBundle {
        spec,
        params: Parameters { layers },
        label_space: m.label_space,
        provenance: m.provenance,
        frozen_mask: m.frozen_mask,
    };
    bundle.validate()?;
    if !bundle.params.all_finite() {
        return Err(Error::CorruptModel("non-finite parameter values".into()));
    }
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn architecture() {
        let b = build_default_dcnn(&labels(5), 0).unwrap();
        assert_eq!(b.spec.output_size().unwrap(), 5);
        // conv 32·4·9+32, 64·32·5+64, 64·64·3+64; dense 832·128+128, 128·5+5
        let by_hand = (1152 + 32) + (10240 + 64) + (12288 + 64) + (106_496 + 128) + (640 + 5);
        assert_eq!(by_hand, PARAMS_FIVE_CLASSES);
        assert_eq!(b.params.num_params(), PARAMS_FIVE_CLASSES);
        assert_eq!(b.spec.shapes().unwrap()[10].size(), FEATURE_DIM);
        assert_eq!(build_default_dcnn(&labels(5), 0).unwrap(), b);
        assert_ne!(build_default_dcnn(&labels(5), 1).unwrap().params, b.params);
        assert!(b.params.layers.iter().all(|l| l.bias.iter().all(|&v| v == 0.0)));
        assert!(build_default_dcnn(&labels(1), 0).is_err());
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = build_default_dcnn(&labels(3), 4).unwrap();
        b.params.layers[0].bias[3] = -0.125;
        b.frozen_mask[0] = true;
        b.provenance.source_dataset = "ucihar".into();
        b.save(dir.path()).unwrap();
        let l = ModelBundle::load(dir.path()).unwrap();
        assert_eq!(l, b);
        let x: Vec<f32> = (0..512).map(|i| (i as f32 * 0.1).sin()).collect();
        assert_eq!(l.predict(&[&x]).unwrap(), b.predict(&[&x]).unwrap());
        let first = fs::read(dir.path().join(WEIGHTS_FILE)).unwrap();
        let m1 = fs::read(dir.path().join(MANIFEST_FILE)).unwrap();
        l.save(dir.path()).unwrap();
        assert_eq!(fs::read(dir.path().join(WEIGHTS_FILE)).unwrap(), first);
        assert_eq!(fs::read(dir.path().join(MANIFEST_FILE)).unwrap(), m1);
    }

    #[test]
    fn corruption_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let b = build_default_dcnn(&labels(2), 1).unwrap();
        b.save(dir.path()).unwrap();
        let w = dir.path().join(WEIGHTS_FILE);
        let bytes = fs::read(&w).unwrap();
        fs::write(&w, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::CorruptModel(_))));
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        fs::write(&w, &flipped).unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::CorruptModel(_))));
        fs::write(&w, &bytes).unwrap();
        let mpath = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&mpath).unwrap();
        let edited = text.replacen("\"shape\": [\n        32,", "\"shape\": [\n        33,", 1);
        assert_ne!(edited, text);
        fs::write(&mpath, edited).unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::Shape(_))));
    }
}
