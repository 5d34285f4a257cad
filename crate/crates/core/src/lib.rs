//! Differentiable appearance engine for frozen Gaussian splat scenes.
//!
//! Geometry is fixed, so every camera's blend weights are computed once and
//! the rendered image becomes linear in per-gaussian colors. On top of that
//! sit a hash-grid encoded diffuse/specular color model, multi-view tile
//! training, and single-view recoloring through a cloned output head and a
//! learned soft segmentation.

pub mod ablation;
pub mod appearance;
pub mod checkpoint;
pub mod codec;
pub mod editing;
pub mod encoding;
pub mod error;
pub mod image;
pub mod math;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod projection;
pub mod rasterizer;
pub mod render;
pub mod scene;
pub mod service;
pub mod training;

pub use error::{Error, Result};
