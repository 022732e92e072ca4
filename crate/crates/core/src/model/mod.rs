//! Network geometry, synthetic weights, desk-scale forward passes and
//! square-divisibility number theory.

mod conv;
mod networks;
mod nsqf;
mod shape;
mod tensor;
mod weights;

pub use conv::{conv_forward, conv_pre_activation, forward_network, requant_shift, requantize};
pub use networks::{by_name, toy_sparse, vgg16, vgg16_32, REFERENCE_VGG16_IFMAP_VOLUMES};
pub use nsqf::{is_nsqf, nsqf_in_range};
pub use shape::{ifmap_volume, LayerShape, LayerSpec, NetworkSpec, TileBand, TilingSpec};
pub use tensor::Tensor3D;
pub use weights::{generate_weights, LayerWeights};

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid layer shape: {0}")]
    Shape(String),
    #[error("invalid tiling: {0}")]
    Tiling(String),
    #[error("invalid network: {0}")]
    Network(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: String, got: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("unknown network '{0}'")]
    UnknownNetwork(String),
    #[error("network config: {0}")]
    Config(String),
}
