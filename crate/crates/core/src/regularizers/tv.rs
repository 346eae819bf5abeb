use serde::{Deserialize, Serialize};

use crate::error::{EitError, Result};
use crate::fem::ConductivityField;
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TvWeighting {
    ElementArea,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvConfig {
    pub beta: f64,
    pub weighting: TvWeighting,
}

impl Default for TvConfig {
    fn default() -> Self {
        TvConfig {
            beta: 1e-8,
            weighting: TvWeighting::ElementArea,
        }
    }
}

impl TvConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(EitError::invariant(
                "tv config",
                format!("beta must be positive, got {}", self.beta),
            ));
        }
        Ok(())
    }
}

/// Per-element data reused across evaluations on one mesh.
#[derive(Debug, Clone)]
pub struct TvOperator {
    elements: Vec<[usize; 3]>,
    grads: Vec<[[f64; 2]; 3]>,
    weights: Vec<f64>,
    n_nodes: usize,
    beta: f64,
}

impl TvOperator {
    pub fn new(mesh: &Mesh, cfg: &TvConfig) -> Result<Self> {
        cfg.validate()?;
        let mut grads = Vec::with_capacity(mesh.n_elements());
        let mut weights = Vec::with_capacity(mesh.n_elements());
        for k in 0..mesh.n_elements() {
            let (area, g) = mesh.element_geometry(k);
            if !(area > 0.0) || !area.is_finite() {
                return Err(EitError::Assembly(format!("element {k} has zero area")));
            }
            grads.push(g);
            weights.push(match cfg.weighting {
                TvWeighting::ElementArea => area,
                TvWeighting::Uniform => 1.0,
            });
        }
        Ok(TvOperator {
            elements: mesh.elements().to_vec(),
            grads,
            weights,
            n_nodes: mesh.n_nodes(),
            beta: cfg.beta,
        })
    }

    pub fn loss_grad(&self, sigma: &[f64]) -> Result<(f64, Vec<f64>)> {
        if sigma.len() != self.n_nodes {
            return Err(EitError::Dimension(format!(
                "field has {} values, mesh has {} nodes",
                sigma.len(),
                self.n_nodes
            )));
        }
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.n_nodes];
        for ((tri, g), w) in self.elements.iter().zip(&self.grads).zip(&self.weights) {
            let mut d = [0.0; 2];
            for l in 0..3 {
                d[0] += sigma[tri[l]] * g[l][0];
                d[1] += sigma[tri[l]] * g[l][1];
            }
            let r = (d[0] * d[0] + d[1] * d[1] + self.beta).sqrt();
            loss += w * r;
            for l in 0..3 {
                grad[tri[l]] += w * (d[0] * g[l][0] + d[1] * g[l][1]) / r;
            }
        }
        Ok((loss, grad))
    }

    /// Lagged-diffusivity matrix `sum_K w_K / r_K * G_K^T G_K` at `sigma`,
    /// dense, as used by Gauss-Newton.
    pub fn lagged_hessian(&self, sigma: &[f64]) -> nalgebra::DMatrix<f64> {
        let mut h = nalgebra::DMatrix::zeros(self.n_nodes, self.n_nodes);
        for ((tri, g), w) in self.elements.iter().zip(&self.grads).zip(&self.weights) {
            let mut d = [0.0; 2];
            for l in 0..3 {
                d[0] += sigma[tri[l]] * g[l][0];
                d[1] += sigma[tri[l]] * g[l][1];
            }
            let c = w / (d[0] * d[0] + d[1] * d[1] + self.beta).sqrt();
            for a in 0..3 {
                for b in 0..3 {
                    h[(tri[a], tri[b])] += c * (g[a][0] * g[b][0] + g[a][1] * g[b][1]);
                }
            }
        }
        h
    }
}

/// Smoothed total variation `sum_K w_K sqrt(|grad sigma|_K^2 + beta)` and
/// its nodal gradient.
pub fn tv_loss_grad(
    mesh: &Mesh,
    sigma: &ConductivityField,
    cfg: &TvConfig,
) -> Result<(f64, Vec<f64>)> {
    TvOperator::new(mesh, cfg)?.loss_grad(sigma.values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_disk_mesh, DomainKind};

    fn unit_square(n: usize) -> Mesh {
        let mut nodes = Vec::new();
        for i in 0..=n {
            for j in 0..=n {
                nodes.push([j as f64 / n as f64, i as f64 / n as f64]);
            }
        }
        let id = |i: usize, j: usize| i * (n + 1) + j;
        let mut elements = Vec::new();
        for i in 0..n {
            for j in 0..n {
                elements.push([id(i, j), id(i, j + 1), id(i + 1, j + 1)]);
                elements.push([id(i, j), id(i + 1, j + 1), id(i + 1, j)]);
            }
        }
        let electrodes = vec![vec![[id(0, 0), id(0, 1)]], vec![[id(n, 0), id(n, 1)]]];
        Mesh::new(nodes, elements, electrodes, DomainKind::Polygon).unwrap()
    }

    #[test]
    fn constant_field_gives_sqrt_beta_and_zero_gradient() {
        let mesh = make_disk_mesh(14.0, 16, 2.5, 300).unwrap();
        let cfg = TvConfig::default();
        let s = ConductivityField::constant(mesh.n_nodes(), 2.0).unwrap();
        let (loss, g) = tv_loss_grad(&mesh, &s, &cfg).unwrap();
        assert!((loss - mesh.total_area() * cfg.beta.sqrt()).abs() < 1e-12 * loss);
        // Round-off in the element gradient is amplified by 1/sqrt(beta).
        assert!(
            g.iter().all(|v| v.abs() < 1e-9),
            "{:e}",
            g.iter().fold(0.0f64, |m, v| m.max(v.abs()))
        );
    }

    #[test]
    fn linear_field_on_unit_square() {
        let mesh = unit_square(6);
        let cfg = TvConfig::default();
        let s: Vec<f64> = mesh.nodes().iter().map(|p| p[0] + 1.0).collect();
        let (loss, _) = tv_loss_grad(&mesh, &ConductivityField::new(s).unwrap(), &cfg).unwrap();
        assert!((loss - (1.0 + cfg.beta).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn gradient_sums_to_zero() {
        let mesh = make_disk_mesh(14.0, 16, 2.5, 300).unwrap();
        let s: Vec<f64> = mesh
            .nodes()
            .iter()
            .map(|p| 1.0 + 0.3 * (p[0] * 0.4).sin() * p[1].cos())
            .collect();
        let (_, g) = tv_loss_grad(
            &mesh,
            &ConductivityField::new(s).unwrap(),
            &TvConfig::default(),
        )
        .unwrap();
        let scale: f64 = g.iter().map(|v| v.abs()).sum();
        assert!(g.iter().sum::<f64>().abs() < 1e-12 * scale);
    }
}
