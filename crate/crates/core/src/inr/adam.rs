use serde::{Deserialize, Serialize};

use crate::error::{EitError, Result};
use crate::inr::mlp::MlpParams;

/// Adam moments over the flattened parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_params(params: &MlpParams) -> Self {
        Self::new(params.n_params())
    }

    /// One bias-corrected update of `x` in place.
    pub fn update(&mut self, x: &mut [&mut [f64]], g: &[&[f64]], lr: f64) -> Result<()> {
        let n: usize = x.iter().map(|b| b.len()).sum();
        let ng: usize = g.iter().map(|b| b.len()).sum();
        if n != self.m.len() || ng != n {
            return Err(EitError::Dimension(format!(
                "optimizer state has {} entries, parameters {n}, gradients {ng}",
                self.m.len()
            )));
        }
        if let Some(i) = g.iter().flat_map(|b| b.iter()).position(|v| !v.is_finite()) {
            return Err(EitError::Numeric {
                detail: format!("non-finite gradient at parameter {i}"),
                residual: f64::NAN,
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let mut i = 0;
        for (xb, gb) in x.iter_mut().zip(g) {
            for (xi, &gi) in xb.iter_mut().zip(gb.iter()) {
                let m = self.beta1 * self.m[i] + (1.0 - self.beta1) * gi;
                let v = self.beta2 * self.v[i] + (1.0 - self.beta2) * gi * gi;
                self.m[i] = m;
                self.v[i] = v;
                *xi -= lr * (m / c1) / ((v / c2).sqrt() + self.eps);
                i += 1;
            }
        }
        Ok(())
    }
}

pub fn adam_step(
    state: &mut AdamState,
    params: &mut MlpParams,
    grads: &MlpParams,
    lr: f64,
) -> Result<()> {
    let g: Vec<&[f64]> = grads.blocks().collect();
    let mut x: Vec<&mut [f64]> = params.blocks_mut().collect();
    state.update(&mut x, &g, lr)
}
