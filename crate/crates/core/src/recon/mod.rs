//! Reconstruction drivers: the guided neural-field optimization, its
//! unguided reduction, and a Gauss-Newton total-variation baseline.

mod gauss_newton;
mod sdeit;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use gauss_newton::{constant_fit, reconstruct_tv, TvBaselineConfig};
pub use sdeit::{
    reconstruct_inr_tv, reconstruct_sdeit, resume_sdeit, Checkpoint, Evaluation, GridState,
    InrObjective,
};

use crate::error::{EitError, Result};
use crate::fem::{ConductivityField, DEFAULT_CONTACT_IMPEDANCE};
use crate::grid::GridImage;
use crate::guidance::PROMPT_BASIC;
use crate::regularizers::{SsimConfig, TvConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceSettings {
    pub prompt: String,
    pub strength: f64,
    pub steps: u32,
    pub guidance_scale: f64,
    pub seed: u64,
    /// Query the provider every `guide_every` guided iterations and reuse
    /// the last image in between.
    pub guide_every: usize,
}

impl Default for GuidanceSettings {
    fn default() -> Self {
        GuidanceSettings {
            prompt: PROMPT_BASIC.to_string(),
            strength: 0.4,
            steps: 50,
            guidance_scale: 0.8,
            seed: 0,
            guide_every: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSettings {
    pub n: usize,
    pub bandwidth: f64,
    pub seed: u64,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        EncoderSettings {
            n: 128,
            bandwidth: 1.0,
            seed: 0,
        }
    }
}

/// Voltage unit in which the data term of the objective is measured.
/// Frames are stored in mV; the regularization weights are calibrated for
/// a data term in V^2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VoltageUnit {
    V,
    #[serde(rename = "mV")]
    MilliVolt,
}

impl VoltageUnit {
    /// Factor converting mV into this unit.
    pub fn from_mv(self) -> f64 {
        match self {
            VoltageUnit::V => 1e-3,
            VoltageUnit::MilliVolt => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub alpha0: f64,
    pub alpha1: f64,
    pub n_pre: usize,
    pub n_total: usize,
    pub lr: f64,
    pub guidance: GuidanceSettings,
    pub grid_width: usize,
    pub grid_height: usize,
    pub encoder: EncoderSettings,
    pub mlp_seed: u64,
    pub output_scale: f64,
    pub contact_impedance: f64,
    pub data_unit: VoltageUnit,
    pub tv: TvConfig,
    pub ssim: SsimConfig,
    pub log_every: usize,
    pub checkpoint_every: usize,
    /// Where checkpoints go; none disables them.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for ReconConfig {
    fn default() -> Self {
        ReconConfig {
            alpha0: 1e-6,
            alpha1: 1e-2,
            n_pre: 800,
            n_total: 1200,
            lr: 0.01,
            guidance: GuidanceSettings::default(),
            grid_width: 128,
            grid_height: 128,
            encoder: EncoderSettings::default(),
            mlp_seed: 1,
            output_scale: 1.0,
            contact_impedance: DEFAULT_CONTACT_IMPEDANCE,
            data_unit: VoltageUnit::V,
            tv: TvConfig::default(),
            ssim: SsimConfig::default(),
            log_every: 100,
            checkpoint_every: 100,
            checkpoint_dir: None,
        }
    }
}

impl ReconConfig {
    /// Weights used on measured phantoms.
    pub fn experimental() -> Self {
        ReconConfig {
            alpha1: 3e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(EitError::invariant("recon config", d));
        if self.n_pre > self.n_total {
            return bad(format!(
                "n_pre {} exceeds n_total {}",
                self.n_pre, self.n_total
            ));
        }
        if !(self.alpha0 >= 0.0 && self.alpha1 >= 0.0)
            || !self.alpha0.is_finite()
            || !self.alpha1.is_finite()
        {
            return bad("alpha0 and alpha1 must be non-negative".into());
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.grid_width < self.ssim.window || self.grid_height < self.ssim.window {
            return bad("grid is smaller than the SSIM window".into());
        }
        if self.guidance.guide_every == 0 {
            return bad("guide_every must be at least 1".into());
        }
        if !(self.output_scale > 0.0) {
            return bad("output_scale must be positive".into());
        }
        self.tv.validate()?;
        self.ssim.validate()?;
        Ok(())
    }
}

/// Loss terms of one iteration. `total = data + alpha0 * tv + alpha1 * ssim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub data: f64,
    pub tv: f64,
    pub ssim: f64,
    pub total: f64,
}

impl LossRecord {
    pub fn new(iteration: usize, data: f64, tv: f64, ssim: f64, alpha0: f64, alpha1: f64) -> Self {
        LossRecord {
            iteration,
            data,
            tv,
            ssim,
            total: data + alpha0 * tv + alpha1 * ssim,
        }
    }
}

/// Loss history as CSV with header `iteration,data,tv,ssim,total`.
pub fn loss_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("iteration,data,tv,ssim,total\n");
    for r in history {
        out.push_str(&format!(
            "{},{:e},{:e},{:e},{:e}\n",
            r.iteration, r.data, r.tv, r.ssim, r.total
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    pub sigma_meas: ConductivityField,
    pub sigma_grid: GridImage,
    /// Last guidance image, normalized, with the physical range of the
    /// raster it was produced from.
    pub sigma_dm: Option<GridImage>,
    pub loss_history: Vec<LossRecord>,
    pub iterations_run: usize,
    pub provider_calls: usize,
    pub provider_failures: usize,
    /// Set when a line search gave up and the best iterate was returned.
    pub warning: Option<String>,
    /// Norm of each Gauss-Newton direction; empty for the neural methods.
    pub step_norms: Vec<f64>,
}
