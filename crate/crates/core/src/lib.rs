//! Gaussian splatting scene fitting with a second-order, trust-region
//! regularized optimizer.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod error;
pub mod harness;
pub mod image;
pub mod linalg;
pub mod renderer;
pub mod optimizer;
pub mod residuals;
pub mod scene;
pub mod trustregion;

pub use error::{Error, Result};
pub use image::Image;
pub use renderer::RenderSettings;
pub use residuals::LossSettings;
pub use scene::{Camera, GaussianPrimitive, Group, Scene, View};
