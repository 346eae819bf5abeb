use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{EitError, Result};
use crate::grid::NormalizedCoords;

/// Random Fourier feature map `x -> [sin(2 pi B x); cos(2 pi B x)]` with
/// `B` an `n x 2` matrix of `N(0, s^2)` frequencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub frequencies: Vec<[f64; 2]>,
    pub bandwidth: f64,
    pub seed: u64,
}

impl Encoder {
    pub fn new(n: usize, bandwidth: f64, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(EitError::invariant(
                "encoder",
                "frequency count must be at least 1",
            ));
        }
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(EitError::invariant(
                "encoder",
                format!("bandwidth must be positive, got {bandwidth}"),
            ));
        }
        let normal = Normal::new(0.0, bandwidth)
            .map_err(|e| EitError::invariant("encoder", e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frequencies = (0..n)
            .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
            .collect();
        Ok(Encoder {
            frequencies,
            bandwidth,
            seed,
        })
    }

    pub fn n_frequencies(&self) -> usize {
        self.frequencies.len()
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.frequencies.len()
    }

    /// Feature matrix with one column per point: rows `0..n` hold the sines
    /// and rows `n..2n` the cosines.
    pub fn encode(&self, coords: &NormalizedCoords) -> DMatrix<f64> {
        let n = self.frequencies.len();
        let mut out = DMatrix::zeros(2 * n, coords.len());
        for (i, p) in coords.points.iter().enumerate() {
            let mut col = out.column_mut(i);
            for (j, b) in self.frequencies.iter().enumerate() {
                let phase = 2.0 * PI * (b[0] * p[0] + b[1] * p[1]);
                let (s, c) = phase.sin_cos();
                col[j] = s;
                col[n + j] = c;
            }
        }
        out
    }
}

/// Convenience wrapper matching [`Encoder::new`].
pub fn make_encoder(n: usize, bandwidth: f64, seed: u64) -> Result<Encoder> {
    Encoder::new(n, bandwidth, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CoordSource;

    fn coords(points: Vec<[f64; 2]>) -> NormalizedCoords {
        NormalizedCoords {
            points,
            source: CoordSource::FeNodes,
        }
    }

    #[test]
    fn dimension_and_determinism() {
        let a = make_encoder(128, 1.0, 3).unwrap();
        assert_eq!(a.feature_dim(), 256);
        assert_eq!(a, make_encoder(128, 1.0, 3).unwrap());
        assert_ne!(a, make_encoder(128, 1.0, 4).unwrap());
    }

    #[test]
    fn frequency_spread_matches_bandwidth() {
        let enc = make_encoder(10_000, 2.5, 11).unwrap();
        let vals: Vec<f64> = enc.frequencies.iter().flat_map(|b| [b[0], b[1]]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        assert!((var.sqrt() - 2.5).abs() < 0.05 * 2.5);
    }

    #[test]
    fn origin_encodes_to_zeros_and_ones() {
        let enc = make_encoder(16, 1.0, 0).unwrap();
        let f = enc.encode(&coords(vec![[0.0, 0.0]]));
        for j in 0..16 {
            assert_eq!(f[(j, 0)], 0.0);
            assert_eq!(f[(16 + j, 0)], 1.0);
        }
    }

    #[test]
    fn sin_cos_pairs_have_unit_norm() {
        let enc = make_encoder(32, 3.0, 5).unwrap();
        let f = enc.encode(&coords(vec![[0.3, -0.7], [1.0, 1.0], [-0.2, 0.05]]));
        for i in 0..3 {
            for j in 0..32 {
                let s = f[(j, i)] * f[(j, i)] + f[(32 + j, i)] * f[(32 + j, i)];
                assert!((s - 1.0).abs() < 1e-14);
            }
        }
    }
}
