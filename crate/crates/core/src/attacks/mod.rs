//! Trace-only attacks: statistical filtering, leaked-constant subtraction,
//! side-information pruning, boundary-effect filter sizing and
//! volume-equation reverse engineering.

mod huffduff;
mod reverse;
mod segment;
mod si;
mod ss;

pub use huffduff::{
    craft_inputs, huffduff_attack, write_series, BaselineVictim, CraftedInputSet, HuffDuffConfig,
    InputPolicy, NpVictim, Victim,
};
pub use reverse::{reverse_engg_attack, LayerCandidate, ReverseConfig, VolumeSlack};
pub use segment::{segment, segment_stats, Segment, SegmentStats};
pub use si::{si_attack, si_filter, NsqfPrior};
pub use ss::{kk_attack, ss_attack, LeakedConstants, SsAccumulator};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("domain: {0}")]
    Domain(String),
    #[error("inapplicable: {0}")]
    Inapplicable(String),
    #[error(transparent)]
    Trace(#[from] crate::tracegen::TraceError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Ss,
    Kk,
    Si,
    #[serde(rename = "huffduff")]
    HuffDuff,
    ReverseEngg,
}

/// Per-layer output of an attack, with the statistic it rests on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEstimate {
    pub layer: usize,
    /// Point estimate of the layer's input volume in bytes.
    pub volume: f64,
    pub volume_min: f64,
    pub volume_mean: f64,
    /// Ofmap writes kept after filtering (minimum over runs).
    pub writes: usize,
    pub write_volume: f64,
    pub runs: usize,
    /// No leaked constant could be applied; the estimate still carries key noise.
    pub key_resident: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub filter_r: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub filter_s: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub candidates: Option<Vec<u64>>,
    /// Geometries consistent with the volumes, up to the configured limit.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub shapes: Vec<LayerCandidate>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub shape_count: Option<u64>,
}

impl LayerEstimate {
    fn new(layer: usize) -> Self {
        Self {
            layer,
            volume: 0.0,
            volume_min: 0.0,
            volume_mean: 0.0,
            writes: 0,
            write_volume: 0.0,
            runs: 0,
            key_resident: false,
            filter_r: None,
            filter_s: None,
            candidates: None,
            shapes: Vec::new(),
            shape_count: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub kind: AttackKind,
    pub layers: Vec<LayerEstimate>,
    pub runs: usize,
    /// Statistics the estimates rest on, by name.
    pub evidence: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    /// Raw observable series the estimates were read from.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub series: BTreeMap<String, Vec<f64>>,
}

impl AttackReport {
    fn new(kind: AttackKind, runs: usize) -> Self {
        Self {
            kind,
            layers: Vec::new(),
            runs,
            evidence: BTreeMap::new(),
            notes: Vec::new(),
            series: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
