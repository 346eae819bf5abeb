//! Smoothed total variation over the mesh and structural similarity over
//! rasters, each with analytic gradients.

pub mod ssim;
pub mod tv;

pub use ssim::{mssim, ssim_loss_grad, SsimConfig};
pub use tv::{tv_loss_grad, TvConfig, TvOperator, TvWeighting};
