//! Memory-trace side-channel laboratory for tiled DNN accelerators.
//!
//! Simulates the off-chip traffic of a tiled convolution accelerator with and
//! without bin-based obfuscation, attacks those traces, and sizes the
//! attacker's residual search space.

pub mod attacks;
pub mod binpack;
pub mod mellin;
pub mod model;
pub mod sfc;
pub mod stats;
pub mod tracegen;
