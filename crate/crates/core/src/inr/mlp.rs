use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{EitError, Result};
use crate::linalg::{gemm, Op};

/// Lower bound of the output mapping, in mS/cm.
pub const SIGMA_FLOOR: f64 = 1e-3;
/// Half-width of the uniform output-head initialization.
pub const HEAD_INIT: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
}

/// `sigma = floor + scale * softplus(raw)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputMapping {
    pub floor: f64,
    pub scale: f64,
}

impl Default for OutputMapping {
    fn default() -> Self {
        OutputMapping {
            floor: SIGMA_FLOOR,
            scale: 1.0,
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fully connected network. `weights[l]` is `widths[l+1] x widths[l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub widths: Vec<usize>,
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
    pub activation: Activation,
    pub output: OutputMapping,
}

/// Kaiming-uniform hidden layers, small uniform head.
pub fn mlp_init(widths: &[usize], seed: u64) -> Result<MlpParams> {
    mlp_init_with(widths, seed, OutputMapping::default())
}

pub fn mlp_init_with(widths: &[usize], seed: u64, output: OutputMapping) -> Result<MlpParams> {
    if widths.len() < 2 || widths.contains(&0) {
        return Err(EitError::invariant(
            "mlp",
            format!("invalid layer widths {widths:?}"),
        ));
    }
    if *widths.last().expect("non-empty") != 1 {
        return Err(EitError::invariant("mlp", "output width must be 1"));
    }
    if !(output.floor > 0.0 && output.scale > 0.0) {
        return Err(EitError::invariant(
            "mlp",
            "output floor and scale must be positive",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_layers = widths.len() - 1;
    let mut weights = Vec::with_capacity(n_layers);
    let mut biases = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let (wb, bb) = if l + 1 == n_layers {
            (HEAD_INIT, HEAD_INIT)
        } else {
            ((6.0 / fan_in as f64).sqrt(), 1.0 / (fan_in as f64).sqrt())
        };
        let wd = Uniform::new_inclusive(-wb, wb).expect("finite bounds");
        let bd = Uniform::new_inclusive(-bb, bb).expect("finite bounds");
        weights.push(DMatrix::from_fn(fan_out, fan_in, |_, _| {
            wd.sample(&mut rng)
        }));
        biases.push(DVector::from_fn(fan_out, |_, _| bd.sample(&mut rng)));
    }
    Ok(MlpParams {
        widths: widths.to_vec(),
        weights,
        biases,
        activation: Activation::Relu,
        output,
    })
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> MlpParams {
        MlpParams {
            widths: self.widths.clone(),
            weights: self
                .weights
                .iter()
                .map(|w| DMatrix::zeros(w.nrows(), w.ncols()))
                .collect(),
            biases: self
                .biases
                .iter()
                .map(|b| DVector::zeros(b.len()))
                .collect(),
            activation: self.activation,
            output: self.output,
        }
    }

    /// Parameter blocks in a fixed order: all weights, then all biases.
    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .map(|w| w.as_slice())
            .chain(self.biases.iter().map(|b| b.as_slice()))
    }

    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .map(|w| w.as_mut_slice())
            .chain(self.biases.iter_mut().map(|b| b.as_mut_slice()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().flat_map(|b| b.iter().copied()).collect()
    }

    pub fn get(&self, index: usize) -> f64 {
        let mut i = index;
        for b in self.blocks() {
            if i < b.len() {
                return b[i];
            }
            i -= b.len();
        }
        panic!("parameter index {index} out of range");
    }

    pub fn set(&mut self, index: usize, value: f64) {
        let mut i = index;
        for b in self.blocks_mut() {
            if i < b.len() {
                b[i] = value;
                return;
            }
            i -= b.len();
        }
        panic!("parameter index {index} out of range");
    }

    /// `self += other`, block by block.
    pub fn add_assign(&mut self, other: &MlpParams) {
        for (a, b) in self.blocks_mut().zip(other.blocks()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn check_shapes(&self) -> Result<()> {
        let n = self.widths.len() - 1;
        if self.weights.len() != n || self.biases.len() != n {
            return Err(EitError::invariant(
                "mlp",
                "layer count does not match widths",
            ));
        }
        for l in 0..n {
            if self.weights[l].shape() != (self.widths[l + 1], self.widths[l])
                || self.biases[l].len() != self.widths[l + 1]
            {
                return Err(EitError::invariant(
                    "mlp",
                    format!("layer {l} shape does not chain"),
                ));
            }
        }
        Ok(())
    }
}

/// Hidden activations of one forward pass, kept for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    acts: Vec<DMatrix<f64>>,
    raw: Vec<f64>,
    pub sigma: Vec<f64>,
}

/// Forward pass over every feature column.
pub fn mlp_forward(params: &MlpParams, features: &DMatrix<f64>) -> Result<ForwardPass> {
    if features.nrows() != params.input_dim() {
        return Err(EitError::Dimension(format!(
            "feature dimension {} does not match network input {}",
            features.nrows(),
            params.input_dim()
        )));
    }
    let n_pts = features.ncols();
    let n_layers = params.weights.len();
    // Post-activation outputs of each hidden layer.
    let mut acts: Vec<DMatrix<f64>> = Vec::with_capacity(n_layers);
    for l in 0..n_layers {
        let input = if l == 0 { features } else { &acts[l - 1] };
        let mut z = DMatrix::zeros(params.widths[l + 1], n_pts);
        gemm(1.0, &params.weights[l], Op::N, input, Op::N, 0.0, &mut z);
        let b = &params.biases[l];
        for mut col in z.column_iter_mut() {
            col += b;
        }
        if l + 1 < n_layers {
            z.apply(|v| *v = v.max(0.0));
        }
        acts.push(z);
    }
    let raw: Vec<f64> = acts.pop().expect("at least one layer").as_slice().to_vec();
    let map = params.output;
    let sigma = raw
        .iter()
        .map(|&r| map.floor + map.scale * softplus(r))
        .collect();
    Ok(ForwardPass { acts, raw, sigma })
}

impl ForwardPass {
    /// Gradient of `sum_i cotangent[i] * sigma[i]` with respect to every
    /// parameter.
    pub fn backward(
        &self,
        params: &MlpParams,
        features: &DMatrix<f64>,
        cotangent: &[f64],
    ) -> Result<MlpParams> {
        let n_pts = self.raw.len();
        if cotangent.len() != n_pts || features.ncols() != n_pts {
            return Err(EitError::Dimension(format!(
                "cotangent has {} entries, features {} columns, for {} points",
                cotangent.len(),
                features.ncols(),
                n_pts
            )));
        }
        let n_layers = params.weights.len();
        let scale = params.output.scale;
        let mut grads = params.zeros_like();
        let mut delta =
            DMatrix::from_fn(1, n_pts, |_, j| cotangent[j] * scale * sigmoid(self.raw[j]));
        for l in (0..n_layers).rev() {
            let input = if l == 0 { features } else { &self.acts[l - 1] };
            gemm(1.0, &delta, Op::N, input, Op::T, 0.0, &mut grads.weights[l]);
            grads.biases[l] = delta.column_sum();
            if l > 0 {
                let mut prev = DMatrix::zeros(params.widths[l], n_pts);
                gemm(
                    1.0,
                    &params.weights[l],
                    Op::T,
                    &delta,
                    Op::N,
                    0.0,
                    &mut prev,
                );
                prev.zip_apply(&self.acts[l - 1], |d, a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = prev;
            }
        }
        Ok(grads)
    }
}

/// Conductivities for each feature column, and when `cotangent` is given,
/// the gradient of `sum_i cotangent[i] * sigma[i]` with respect to every
/// parameter.
pub fn mlp_eval_grad(
    params: &MlpParams,
    features: &DMatrix<f64>,
    cotangent: Option<&[f64]>,
) -> Result<(Vec<f64>, Option<MlpParams>)> {
    let pass = mlp_forward(params, features)?;
    let grads = match cotangent {
        Some(c) => Some(pass.backward(params, features, c)?),
        None => None,
    };
    Ok((pass.sigma, grads))
}
