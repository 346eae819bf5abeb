//! Coordinate network: Fourier features, MLP and Adam.

pub mod adam;
pub mod encoder;
pub mod mlp;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamState};
pub use encoder::{make_encoder, Encoder};
pub use mlp::{
    mlp_eval_grad, mlp_forward, mlp_init, mlp_init_with, Activation, ForwardPass, MlpParams,
    OutputMapping, SIGMA_FLOOR,
};

use crate::error::{EitError, Result};

/// Hidden width used throughout.
pub const HIDDEN_WIDTH: usize = 128;
pub const HIDDEN_LAYERS: usize = 4;

/// `[2n, 128, 128, 128, 128, 1]`.
pub fn default_widths(n_frequencies: usize) -> Vec<usize> {
    let mut w = vec![2 * n_frequencies];
    w.extend(std::iter::repeat_n(HIDDEN_WIDTH, HIDDEN_LAYERS));
    w.push(1);
    w
}

/// Encoder, network and optimizer state, as written to checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InrModel {
    pub encoder: Encoder,
    pub params: MlpParams,
    pub adam: AdamState,
    pub mlp_seed: u64,
    /// Completed optimization iterations.
    pub step: usize,
}

impl InrModel {
    pub fn new(
        n_frequencies: usize,
        bandwidth: f64,
        encoder_seed: u64,
        mlp_seed: u64,
        output: OutputMapping,
    ) -> Result<Self> {
        let encoder = make_encoder(n_frequencies, bandwidth, encoder_seed)?;
        let params = mlp_init_with(&default_widths(n_frequencies), mlp_seed, output)?;
        let adam = AdamState::for_params(&params);
        Ok(InrModel {
            encoder,
            params,
            adam,
            mlp_seed,
            step: 0,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| EitError::Parse(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| EitError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EitError::io(path, e))?;
        let model: InrModel = serde_json::from_str(&text)
            .map_err(|e| EitError::Parse(format!("{}: {e}", path.display())))?;
        model.params.check_shapes()?;
        if model.adam.m.len() != model.params.n_params()
            || model.adam.v.len() != model.params.n_params()
        {
            return Err(EitError::invariant(
                "checkpoint",
                "optimizer state does not mirror parameters",
            ));
        }
        if model.params.input_dim() != model.encoder.feature_dim() {
            return Err(EitError::invariant(
                "checkpoint",
                "encoder and network dimensions differ",
            ));
        }
        Ok(model)
    }
}
