use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{LossRecord, ReconResult, VoltageUnit};
use crate::error::{EitError, Result};
use crate::fem::{CemModel, ConductivityField, MeasurementFrame, DEFAULT_CONTACT_IMPEDANCE};
use crate::inr::SIGMA_FLOOR;
use crate::linalg::{gemm, Op};
use crate::mesh::{rasterize_field, Mesh};
use crate::regularizers::{TvConfig, TvOperator};
use crate::sensitivity::{data_loss, forward_and_jacobian};

const MAX_HALVINGS: usize = 30;
const ARMIJO_C: f64 = 1e-4;
const REL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TvBaselineConfig {
    /// TV weight against a data term measured in `data_unit`.
    pub alpha: f64,
    pub data_unit: VoltageUnit,
    pub tv: TvConfig,
    pub max_iters: usize,
    pub contact_impedance: f64,
    pub sigma_floor: f64,
    /// Starting conductivity; fitted to the data when absent.
    pub initial: Option<f64>,
    pub grid_width: usize,
    pub grid_height: usize,
}

impl Default for TvBaselineConfig {
    fn default() -> Self {
        TvBaselineConfig {
            // Largest weight keeping the desk-study residual within the
            // injected noise power (discrepancy principle).
            alpha: 2e-6,
            data_unit: VoltageUnit::V,
            tv: TvConfig::default(),
            max_iters: 50,
            contact_impedance: DEFAULT_CONTACT_IMPEDANCE,
            sigma_floor: SIGMA_FLOOR,
            initial: None,
            grid_width: 128,
            grid_height: 128,
        }
    }
}

/// Least-squares fit of a homogeneous conductivity to the data.
pub fn constant_fit(model: &CemModel, frame: &MeasurementFrame) -> Result<f64> {
    let n = model.mesh().n_nodes();
    let ones = ConductivityField::constant(n, 1.0)?;
    let (u1, _) = forward_and_jacobian(model, &ones, &frame.pattern)?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    // Voltages scale as 1/c when contact impedance is negligible.
    let inv = dot(&u1, &frame.voltages) / dot(&u1, &u1);
    if !(inv > 0.0) || !inv.is_finite() {
        return Err(EitError::Numeric {
            detail: "data are not positively correlated with the homogeneous prediction".into(),
            residual: inv,
        });
    }
    let mut c = 1.0 / inv;
    for _ in 0..20 {
        let sigma = ConductivityField::constant(n, c)?;
        let (u, jac) = forward_and_jacobian(model, &sigma, &frame.pattern)?;
        let du: Vec<f64> = jac.matrix.column_sum().iter().copied().collect();
        let r: Vec<f64> = u.iter().zip(&frame.voltages).map(|(a, b)| a - b).collect();
        let step = -dot(&r, &du) / dot(&du, &du);
        let next = (c + step).max(0.5 * c);
        let done = (next - c).abs() <= 1e-12 * c;
        c = next;
        if done {
            break;
        }
    }
    Ok(c)
}

fn objective(
    model: &CemModel,
    tv: &TvOperator,
    frame: &MeasurementFrame,
    sigma: &[f64],
    alpha: f64,
    unit2: f64,
) -> Result<(f64, f64, f64)> {
    let field = ConductivityField::new(sigma.to_vec())?;
    let system = model.system(&field)?;
    let states = crate::fem::solve_injections(&system, &frame.pattern)?;
    let u = crate::fem::apply_selectors(&states, sigma.len(), &frame.pattern);
    let data = unit2 * data_loss(frame, &u);
    let (t, _) = tv.loss_grad(sigma)?;
    Ok((data, t, data + alpha * t))
}

/// Solve `h x = b`, adding diagonal damping if `h` is not numerically
/// positive definite.
fn spd_solve(h: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let scale = h.diagonal().amax().max(f64::MIN_POSITIVE);
    let mut damping = 0.0;
    for _ in 0..12 {
        let mut m = h.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += damping;
        }
        if let Some(chol) = m.cholesky() {
            return Ok(chol.solve(b));
        }
        damping = if damping == 0.0 {
            1e-12 * scale
        } else {
            damping * 10.0
        };
    }
    Err(EitError::Numeric {
        detail: "Gauss-Newton matrix is not positive definite even with damping".into(),
        residual: damping,
    })
}

/// Gauss-Newton on `||V - U(sigma)||^2 + alpha TV(sigma)` over nodal
/// conductivity, with a lagged-diffusivity TV Hessian, Armijo backtracking
/// and projection onto `sigma >= sigma_floor`.
pub fn reconstruct_tv(
    mesh: &Mesh,
    frame: &MeasurementFrame,
    cfg: &TvBaselineConfig,
) -> Result<ReconResult> {
    if !(cfg.alpha >= 0.0) || !(cfg.sigma_floor > 0.0) {
        return Err(EitError::invariant(
            "tv baseline config",
            "alpha must be >= 0 and the floor > 0",
        ));
    }
    frame.validate()?;
    let model = CemModel::uniform(mesh, cfg.contact_impedance)?;
    let tv = TvOperator::new(mesh, &cfg.tv)?;
    let n = mesh.n_nodes();
    let c0 = match cfg.initial {
        Some(c) => c,
        None => constant_fit(&model, frame)?,
    };
    let mut sigma = vec![c0.max(cfg.sigma_floor); n];
    let mut history = Vec::new();
    let mut step_norms = Vec::new();
    let mut warning = None;
    let unit2 = cfg.data_unit.from_mv().powi(2);

    for it in 0..cfg.max_iters {
        let field = ConductivityField::new(sigma.clone())?;
        let (u, jac) = forward_and_jacobian(&model, &field, &frame.pattern)?;
        let r = DVector::from_iterator(u.len(), u.iter().zip(&frame.voltages).map(|(a, b)| a - b));
        let data = unit2 * r.norm_squared();
        let (t, g_tv) = tv.loss_grad(&sigma)?;
        let obj = data + cfg.alpha * t;

        let mut grad = jac.matrix.tr_mul(&r) * (2.0 * unit2);
        grad += DVector::from_vec(g_tv) * cfg.alpha;
        let mut h = tv.lagged_hessian(&sigma) * cfg.alpha;
        gemm(2.0 * unit2, &jac.matrix, Op::T, &jac.matrix, Op::N, 1.0, &mut h);
        let delta = spd_solve(h, &(-&grad))?;
        step_norms.push(delta.norm());
        if -grad.dot(&delta) <= REL_TOL * obj.abs() {
            break;
        }

        let mut t_step = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = sigma
                .iter()
                .zip(delta.iter())
                .map(|(s, d)| (s + t_step * d).max(cfg.sigma_floor))
                .collect();
            let decrease: f64 = trial
                .iter()
                .zip(&sigma)
                .zip(grad.iter())
                .map(|((a, b), g)| g * (a - b))
                .sum();
            let (d_new, t_new, o_new) = objective(&model, &tv, frame, &trial, cfg.alpha, unit2)?;
            if o_new <= obj + ARMIJO_C * decrease && o_new <= obj {
                accepted = Some((trial, d_new, t_new, o_new));
                break;
            }
            t_step *= 0.5;
        }
        let Some((trial, d_new, t_new, o_new)) = accepted else {
            warning = Some(format!(
                "line search failed at iteration {it} after {MAX_HALVINGS} halvings"
            ));
            log::warn!("{}", warning.as_deref().unwrap_or_default());
            break;
        };
        sigma = trial;
        history.push(LossRecord::new(it, d_new, t_new, 0.0, cfg.alpha, 0.0));
        log::info!(
            "gauss-newton {it:3} data {d_new:.4e} tv {t_new:.4e} total {o_new:.4e} step {t_step}"
        );
        if (obj - o_new).abs() <= REL_TOL * obj.abs() {
            break;
        }
    }

    let sigma_grid = rasterize_field(mesh, &sigma, cfg.grid_width, cfg.grid_height, c0)?;
    Ok(ReconResult {
        sigma_meas: ConductivityField::new(sigma)?,
        sigma_grid,
        sigma_dm: None,
        iterations_run: history.len(),
        loss_history: history,
        provider_calls: 0,
        provider_failures: 0,
        warning,
        step_norms,
    })
}
