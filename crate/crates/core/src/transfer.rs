//! Reusing a source-trained DCNN on a new label space.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checksum::config_hash;
use crate::error::{Error, Result};
use crate::model::{build_default_dcnn, default_layers, ModelBundle};
use crate::nn::{train, History, LabeledSet, LayerSpec, ModelSpec, TrainConfig};

/// How much of the source model is reused and frozen.
///
/// `Full` (start from the source, freeze nothing) is an extra baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    /// Only the new output layer trains.
    Direct,
    /// Conv blocks frozen, dense layers fine-tuned.
    Fixed,
    /// Fresh initialisation; no source parameters are used.
    EndToEnd,
    Full,
}

impl TransferMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TransferMode::Direct => "direct",
            TransferMode::Fixed => "fixed",
            TransferMode::EndToEnd => "end_to_end",
            TransferMode::Full => "full",
        }
    }

    pub fn uses_source(self) -> bool {
        self != TransferMode::EndToEnd
    }
}

impl fmt::Display for TransferMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "direct" => Ok(TransferMode::Direct),
            "fixed" => Ok(TransferMode::Fixed),
            "end_to_end" | "end2end" | "end-to-end" => Ok(TransferMode::EndToEnd),
            "full" => Ok(TransferMode::Full),
            other => Err(Error::Spec(format!("unknown transfer mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferPlan {
    pub mode: TransferMode,
    pub source_labels: Vec<String>,
    pub target_labels: Vec<String>,
}

impl TransferPlan {
    /// Frozen flags per layer of `spec` for this mode.
    pub fn frozen_mask(&self, spec: &ModelSpec) -> Vec<bool> {
        frozen_mask_for(self.mode, spec)
    }
}

fn last_dense(spec: &ModelSpec) -> Option<usize> {
    spec.layers.iter().rposition(|l| matches!(l, LayerSpec::Dense { .. }))
}

pub fn frozen_mask_for(mode: TransferMode, spec: &ModelSpec) -> Vec<bool> {
    let n = spec.layers.len();
    match mode {
        TransferMode::Direct => {
            let head = last_dense(spec);
            (0..n).map(|i| Some(i) != head && !matches!(spec.layers[i], LayerSpec::Softmax)).collect()
        }
        TransferMode::Fixed => {
            let flat = spec.layers.iter().position(|l| !l.is_conv_block()).unwrap_or(n);
            (0..n).map(|i| i < flat).collect()
        }
        TransferMode::EndToEnd | TransferMode::Full => vec![false; n],
    }
}

/// Target-shaped bundle with a fresh output layer (He-uniform from `seed`)
/// and the mode's frozen mask. All other parameters come from `source`
/// except in `EndToEnd`, which ignores them.
pub fn apply_transfer(source: &ModelBundle, plan: &TransferPlan, seed: u64) -> Result<ModelBundle> {
    source.validate()?;
    if source.spec.layers != default_layers(source.n_classes()) {
        return Err(Error::Shape("source model is not the default architecture".into()));
    }
    if source.label_space != plan.source_labels {
        return Err(Error::Shape(format!(
            "plan expects source labels {:?}, model has {:?}",
            plan.source_labels, source.label_space
        )));
    }
    let mut out = build_default_dcnn(&plan.target_labels, seed)?;
    if plan.mode.uses_source() {
        let head = last_dense(&out.spec).expect("default model has a dense head");
        let fresh = std::mem::take(&mut out.params.layers[head]);
        out.params = source.params.clone();
        out.params.layers[head] = fresh;
    }
    out.frozen_mask = plan.frozen_mask(&out.spec);
    out.provenance = source.provenance.clone();
    if out.provenance.source_dataset.is_empty() {
        out.provenance.source_dataset = "unknown".into();
    }
    out.provenance.transfer_mode = Some(plan.mode);
    Ok(out)
}

/// Trains `bundle` on target data honouring its frozen mask.
pub fn fine_tune(
    bundle: &ModelBundle,
    train_set: &LabeledSet<'_>,
    val_set: &LabeledSet<'_>,
    config: &TrainConfig,
    target_dataset: &str,
) -> Result<(ModelBundle, History)> {
    bundle.validate()?;
    let (params, history) = train(&bundle.spec, &bundle.params, train_set, val_set, config, &bundle.frozen_mask)?;
    let mut out = bundle.clone();
    out.params = params;
    out.provenance.target_dataset = Some(target_dataset.to_string());
    out.provenance.config_hash = Some(config_hash(config));
    Ok((out, history))
}
