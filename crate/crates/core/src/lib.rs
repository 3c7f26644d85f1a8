//! Differentiable 2D vector scenes built from elliptic Fourier shapes.
//!
//! A [`Scene`] is a list of objects, each with a color, translation, scale,
//! rotation, a soft choice over a [`PrototypeBank`] of shapes, and a
//! confidence. The crate renders scenes with a soft rasterizer, provides exact
//! gradients of image losses, fits scenes to target images, generates a
//! synthetic benchmark, discovers shape prototypes by clustering, and
//! computes evaluation metrics.

pub mod analysis;
pub mod assignment;
pub mod config;
pub mod dataset;
pub mod efd;
pub mod generator;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod optimize;
pub mod prototypes;
pub mod render;
pub mod scene;
mod triangulate;

pub use crate::efd::{Contour, EfdShape, PrototypeBank};
pub use crate::image::{Image, LabelMap};
pub use crate::render::{Mesh, RenderConfig};
pub use crate::scene::{FlatParams, ObjectParams, Scene};
