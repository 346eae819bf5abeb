use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{LossRecord, ReconConfig, ReconResult};
use crate::error::{EitError, Result};
use crate::fem::{CemModel, ConductivityField, MeasurementFrame};
use crate::grid::{GridImage, NormalizedCoords};
use crate::guidance::{normalize_image, GuidanceProvider, GuidanceRequest};
use crate::inr::{
    adam_step, mlp_forward, Encoder, ForwardPass, InrModel, MlpParams, OutputMapping, SIGMA_FLOOR,
};
use crate::mesh::{domain_mask, Mesh};
use crate::regularizers::{ssim_loss_grad, TvOperator};
use crate::sensitivity::{data_loss, data_loss_grad, forward_and_jacobian};

/// Resumable optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: InrModel,
    pub history: Vec<LossRecord>,
    pub last_guide: Option<GridImage>,
    pub provider_calls: usize,
    pub provider_failures: usize,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| EitError::Parse(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| EitError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EitError::io(path, e))?;
        let ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| EitError::Parse(format!("{}: {e}", path.display())))?;
        ckpt.model.params.check_shapes()?;
        if ckpt.history.len() != ckpt.model.step {
            return Err(EitError::invariant(
                "checkpoint",
                "history length differs from step count",
            ));
        }
        Ok(ckpt)
    }

    pub fn file_name(step: usize) -> String {
        format!("checkpoint_{step:05}.json")
    }
}

/// Network output on the image grid and its normalized raster.
#[derive(Debug, Clone)]
pub struct GridState {
    pass: ForwardPass,
    pub raster: GridImage,
    pub normalized: GridImage,
    pub lo: f64,
    pub hi: f64,
}

/// Terms and parameter gradient of the total loss at one parameter set.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub data: f64,
    pub tv: f64,
    pub ssim: f64,
    pub grads: MlpParams,
    pub sigma_meas: Vec<f64>,
}

/// `||V - U(f(x0))||^2 + alpha0 TV(f(x0)) + alpha1 (1 - mSSIM(f(x1), guide))`
/// as a function of the network parameters.
pub struct InrObjective<'m> {
    model: CemModel<'m>,
    frame: MeasurementFrame,
    tv: TvOperator,
    encoder: Encoder,
    node_features: DMatrix<f64>,
    grid_features: Option<DMatrix<f64>>,
    mask: Vec<bool>,
    cfg: ReconConfig,
}

impl<'m> InrObjective<'m> {
    pub fn new(
        mesh: &'m Mesh,
        frame: &MeasurementFrame,
        cfg: &ReconConfig,
        encoder: &Encoder,
    ) -> Result<Self> {
        cfg.validate()?;
        frame.validate()?;
        if frame.pattern.n_electrodes() != mesh.n_electrodes() {
            return Err(EitError::Dimension(format!(
                "frame addresses {} electrodes, mesh has {}",
                frame.pattern.n_electrodes(),
                mesh.n_electrodes()
            )));
        }
        let model = CemModel::uniform(mesh, cfg.contact_impedance)?;
        Ok(InrObjective {
            model,
            frame: frame.clone(),
            tv: TvOperator::new(mesh, &cfg.tv)?,
            encoder: encoder.clone(),
            node_features: encoder.encode(&mesh.normalized_nodes()),
            grid_features: None,
            mask: domain_mask(mesh, cfg.grid_width, cfg.grid_height)?,
            cfg: cfg.clone(),
        })
    }

    pub fn node_features(&self) -> &DMatrix<f64> {
        &self.node_features
    }

    fn grid_features(&mut self) -> &DMatrix<f64> {
        let (w, h) = (self.cfg.grid_width, self.cfg.grid_height);
        let enc = &self.encoder;
        self.grid_features
            .get_or_insert_with(|| enc.encode(&NormalizedCoords::grid(w, h)))
    }

    pub fn sigma_meas(&self, params: &MlpParams) -> Result<Vec<f64>> {
        Ok(mlp_forward(params, &self.node_features)?.sigma)
    }

    /// Evaluate the network on the image grid.
    pub fn grid_forward(&mut self, params: &MlpParams) -> Result<GridState> {
        let (w, h) = (self.cfg.grid_width, self.cfg.grid_height);
        let pass = mlp_forward(params, self.grid_features())?;
        let raster = GridImage::with_mask(w, h, pass.sigma.clone(), self.mask.clone())?;
        let (normalized, lo, hi) = normalize_image(&raster);
        Ok(GridState {
            pass,
            raster,
            normalized,
            lo,
            hi,
        })
    }

    /// Loss terms and gradient; the SSIM term is active when `guided`
    /// carries the grid state at `params` and a guidance image.
    pub fn evaluate(
        &mut self,
        params: &MlpParams,
        guided: Option<(&GridState, &GridImage)>,
    ) -> Result<Evaluation> {
        let pass = mlp_forward(params, &self.node_features)?;
        let sigma = ConductivityField::new(pass.sigma.clone())?;
        let (predicted, jac) = forward_and_jacobian(&self.model, &sigma, &self.frame.pattern)?;
        let unit2 = self.cfg.data_unit.from_mv().powi(2);
        let data = unit2 * data_loss(&self.frame, &predicted);
        let mut cot = data_loss_grad(&self.frame, &predicted, &jac)?;
        if unit2 != 1.0 {
            cot.iter_mut().for_each(|c| *c *= unit2);
        }
        let (tv, g_tv) = self.tv.loss_grad(sigma.values())?;
        let a0 = self.cfg.alpha0;
        for (c, g) in cot.iter_mut().zip(&g_tv) {
            *c += a0 * g;
        }
        let mut grads = pass.backward(params, &self.node_features, &cot)?;

        let mut ssim = 0.0;
        if let Some((grid, guide)) = guided {
            let (loss, g_img) = ssim_loss_grad(&grid.normalized, guide, &self.cfg.ssim)?;
            ssim = loss;
            let g_sigma = normalization_chain(
                &grid.raster.values,
                &grid.normalized.values,
                &g_img,
                grid.lo,
                grid.hi,
            );
            let a1 = self.cfg.alpha1;
            let cot_grid: Vec<f64> = g_sigma.iter().map(|g| a1 * g).collect();
            let features = self
                .grid_features
                .as_ref()
                .expect("grid features exist after grid_forward");
            grads.add_assign(&grid.pass.backward(params, features, &cot_grid)?);
        }
        Ok(Evaluation {
            data,
            tv,
            ssim,
            grads,
            sigma_meas: pass.sigma,
        })
    }
}

/// Pull a gradient on the min-max normalized raster back to the raw one.
/// `lo` and `hi` move with the arg-min and arg-max pixels.
fn normalization_chain(raw: &[f64], normalized: &[f64], g: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    if !(span >= 1e-12) {
        return vec![0.0; raw.len()];
    }
    let mut out: Vec<f64> = g.iter().map(|v| v / span).collect();
    let imin = raw
        .iter()
        .position(|&v| v == lo)
        .expect("minimum is attained");
    let imax = raw
        .iter()
        .position(|&v| v == hi)
        .expect("maximum is attained");
    let mut d_lo = 0.0;
    let mut d_hi = 0.0;
    for (gp, xp) in g.iter().zip(normalized) {
        d_lo += gp * (xp - 1.0);
        d_hi -= gp * xp;
    }
    out[imin] += d_lo / span;
    out[imax] += d_hi / span;
    out
}

fn fresh_checkpoint(cfg: &ReconConfig) -> Result<Checkpoint> {
    let output = OutputMapping {
        floor: SIGMA_FLOOR,
        scale: cfg.output_scale,
    };
    let model = InrModel::new(
        cfg.encoder.n,
        cfg.encoder.bandwidth,
        cfg.encoder.seed,
        cfg.mlp_seed,
        output,
    )?;
    Ok(Checkpoint {
        model,
        history: Vec::new(),
        last_guide: None,
        provider_calls: 0,
        provider_failures: 0,
    })
}

fn checkpoint_path(cfg: &ReconConfig, name: &str) -> Option<PathBuf> {
    cfg.checkpoint_dir.as_ref().map(|d| d.join(name))
}

fn run(
    mesh: &Mesh,
    frame: &MeasurementFrame,
    cfg: &ReconConfig,
    mut provider: Option<&mut dyn GuidanceProvider>,
    start: Checkpoint,
) -> Result<ReconResult> {
    let mut state = start;
    let mut obj = InrObjective::new(mesh, frame, cfg, &state.model.encoder)?;
    if state.model.params.input_dim() != state.model.encoder.feature_dim() {
        return Err(EitError::invariant(
            "model",
            "encoder and network dimensions differ",
        ));
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| EitError::io(dir, e))?;
    }

    for e in state.model.step..cfg.n_total {
        let guided = e >= cfg.n_pre && cfg.alpha1 > 0.0;
        let grid = if guided {
            Some(obj.grid_forward(&state.model.params)?)
        } else {
            None
        };
        if let (Some(g), Some(p)) = (&grid, provider.as_deref_mut()) {
            if (e - cfg.n_pre).is_multiple_of(cfg.guidance.guide_every) {
                let req = GuidanceRequest {
                    image: g.normalized.clone(),
                    prompt: cfg.guidance.prompt.clone(),
                    strength: cfg.guidance.strength,
                    steps: cfg.guidance.steps,
                    guidance_scale: cfg.guidance.guidance_scale,
                    seed: cfg.guidance.seed.wrapping_add(e as u64),
                };
                state.provider_calls += 1;
                match p.guide(&req) {
                    Ok(resp) => {
                        let mut img = resp.image;
                        img.range = Some((g.lo, g.hi));
                        state.last_guide = Some(img);
                    }
                    Err(err) => {
                        state.provider_failures += 1;
                        if state.last_guide.is_some() {
                            log::warn!("iteration {e}: guidance failed ({err}); reusing the last guidance image");
                        } else {
                            log::warn!(
                                "iteration {e}: guidance failed ({err}); skipping the SSIM term"
                            );
                        }
                    }
                }
            }
        }
        let guide = if guided {
            state.last_guide.clone()
        } else {
            None
        };
        let eval = obj.evaluate(&state.model.params, grid.as_ref().zip(guide.as_ref()))?;
        let rec = LossRecord::new(e, eval.data, eval.tv, eval.ssim, cfg.alpha0, cfg.alpha1);
        if !rec.total.is_finite() || !eval.grads.is_finite() {
            if let Some(path) = checkpoint_path(cfg, "diagnostic.json") {
                state.save_best_effort(&path);
            }
            return Err(EitError::Numeric {
                detail: format!(
                    "non-finite loss at iteration {e} (data {}, tv {}, ssim {})",
                    rec.data, rec.tv, rec.ssim
                ),
                residual: rec.total,
            });
        }
        state.history.push(rec);
        adam_step(
            &mut state.model.adam,
            &mut state.model.params,
            &eval.grads,
            cfg.lr,
        )?;
        state.model.step = e + 1;
        if cfg.log_every > 0 && (e % cfg.log_every == 0 || e + 1 == cfg.n_total) {
            log::info!(
                "iter {e:5} data {:.4e} tv {:.4e} ssim {:.4e} total {:.4e}",
                rec.data,
                rec.tv,
                rec.ssim,
                rec.total
            );
        }
        if cfg.checkpoint_every > 0 && (e + 1) % cfg.checkpoint_every == 0 {
            if let Some(path) = checkpoint_path(cfg, &Checkpoint::file_name(e + 1)) {
                state.save(&path)?;
            }
        }
    }

    let sigma_meas = ConductivityField::new(obj.sigma_meas(&state.model.params)?)?;
    let sigma_grid = obj.grid_forward(&state.model.params)?.raster;
    Ok(ReconResult {
        sigma_meas,
        sigma_grid,
        sigma_dm: state.last_guide,
        iterations_run: state.history.len(),
        loss_history: state.history,
        provider_calls: state.provider_calls,
        provider_failures: state.provider_failures,
        warning: None,
        step_norms: Vec::new(),
    })
}

impl Checkpoint {
    fn save_best_effort(&self, path: &Path) {
        if let Err(e) = self.save(path) {
            log::error!("could not write diagnostic checkpoint: {e}");
        }
    }
}

/// Guided reconstruction: data and TV terms throughout, plus SSIM against a
/// fresh guidance image from iteration `n_pre` on.
pub fn reconstruct_sdeit(
    mesh: &Mesh,
    frame: &MeasurementFrame,
    cfg: &ReconConfig,
    provider: &mut dyn GuidanceProvider,
) -> Result<ReconResult> {
    run(mesh, frame, cfg, Some(provider), fresh_checkpoint(cfg)?)
}

/// Continue a guided reconstruction from a checkpoint.
pub fn resume_sdeit(
    mesh: &Mesh,
    frame: &MeasurementFrame,
    cfg: &ReconConfig,
    provider: &mut dyn GuidanceProvider,
    checkpoint: Checkpoint,
) -> Result<ReconResult> {
    run(mesh, frame, cfg, Some(provider), checkpoint)
}

/// The unguided reduction: `alpha1` is forced to zero.
pub fn reconstruct_inr_tv(
    mesh: &Mesh,
    frame: &MeasurementFrame,
    cfg: &ReconConfig,
) -> Result<ReconResult> {
    let cfg = ReconConfig {
        alpha1: 0.0,
        ..cfg.clone()
    };
    run(mesh, frame, &cfg, None, fresh_checkpoint(&cfg)?)
}
