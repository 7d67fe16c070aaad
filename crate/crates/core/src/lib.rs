//! Multimodal multi-head convolutional attention (MMHCA) for medical image
//! super-resolution, built on a small reverse-mode autodiff core.

pub mod ablate;
pub mod attention;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod image;
pub mod kernels;
pub mod layers;
pub mod manifest;
pub mod metrics;
pub mod network;
pub mod params;
pub mod resample;
pub mod synth;
pub mod tensor;
pub mod train;

pub use attention::AttentionConfig;
pub use error::{Error, ErrorKind, Result};
pub use graph::{Graph, Var};
pub use network::{Host, ModelSpec, SrModel};
pub use params::ParamSet;
pub use tensor::{Real, Shape, Tensor};
