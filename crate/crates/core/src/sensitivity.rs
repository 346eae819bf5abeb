//! Adjoint sensitivities of predicted voltages with respect to nodal
//! conductivity.

use nalgebra::{DMatrix, DVector};

use crate::error::{EitError, Result};
use crate::fem::{
    apply_selectors, solve_injections, CemModel, ConductivityField, MeasurementFrame,
    StimPatternSet, MV_PER_V,
};
use crate::mesh::Mesh;

/// `J[m, n] = d(voltage m) / d(sigma at node n)`, in mV per mS/cm.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix {
    pub matrix: DMatrix<f64>,
}

impl JacobianMatrix {
    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.matrix[(m, n)]
    }

    /// `J^T r`.
    pub fn transpose_mul(&self, r: &[f64]) -> Vec<f64> {
        let r = DVector::from_column_slice(r);
        self.matrix.tr_mul(&r).as_slice().to_vec()
    }
}

/// Forward voltages and Jacobian from a single factorization.
///
/// For a measurement `(drive d, selector s)` the adjoint field `w_s` solves
/// the CEM with the selector as an electrode load, and
/// `J[m, n] = -sum_{K ∋ n} |K|/3 * grad(u_d) . grad(w_s)` on each element
/// `K` touching node `n`.
pub fn forward_and_jacobian(
    model: &CemModel,
    sigma: &ConductivityField,
    patterns: &StimPatternSet,
) -> Result<(Vec<f64>, JacobianMatrix)> {
    let mesh = model.mesh();
    if patterns.n_electrodes() != mesh.n_electrodes() {
        return Err(EitError::Dimension(format!(
            "patterns address {} electrodes, mesh has {}",
            patterns.n_electrodes(),
            mesh.n_electrodes()
        )));
    }
    let system = model.system(sigma)?;
    let nn = mesh.n_nodes();
    let ne = mesh.n_electrodes();
    let states = solve_injections(&system, patterns)?;
    let predicted = apply_selectors(&states, nn, patterns);

    // Unit electrode loads e_q - e_0; any difference selector is a
    // difference of these.
    let mut basis = Vec::with_capacity(ne);
    basis.push(vec![0.0; nn + ne]);
    for q in 1..ne {
        let mut load = vec![0.0; ne];
        load[q] = 1.0;
        load[0] = -1.0;
        basis.push(system.solve_electrode_load(&load)?);
    }

    let gradients = |state: &[f64]| -> Vec<[f64; 2]> {
        mesh.elements()
            .iter()
            .zip(model.geometry())
            .map(|(tri, (_, g))| {
                let mut acc = [0.0; 2];
                for l in 0..3 {
                    acc[0] += state[tri[l]] * g[l][0];
                    acc[1] += state[tri[l]] * g[l][1];
                }
                acc
            })
            .collect()
    };
    let drive_grads: Vec<Vec<[f64; 2]>> = states.iter().map(|s| gradients(s)).collect();
    let adjoint_grads: Vec<Vec<[f64; 2]>> = basis.iter().map(|s| gradients(s)).collect();
    let weights: Vec<f64> = model.geometry().iter().map(|(a, _)| a / 3.0).collect();

    let n_meas = patterns.n_measurements();
    let mut jac = DMatrix::<f64>::zeros(n_meas, nn);
    let mut row = vec![0.0; nn];
    for (m, (d, sel)) in patterns.flat().enumerate() {
        row.iter_mut().for_each(|v| *v = 0.0);
        let (gu, gp, gm) = (
            &drive_grads[d],
            &adjoint_grads[sel.plus],
            &adjoint_grads[sel.minus],
        );
        for (k, tri) in mesh.elements().iter().enumerate() {
            let wx = gp[k][0] - gm[k][0];
            let wy = gp[k][1] - gm[k][1];
            let c = -MV_PER_V * weights[k] * (gu[k][0] * wx + gu[k][1] * wy);
            for &node in tri {
                row[node] += c;
            }
        }
        for (n, v) in row.iter().enumerate() {
            jac[(m, n)] = *v;
        }
    }
    Ok((predicted, JacobianMatrix { matrix: jac }))
}

/// Jacobian of the predicted voltages at `sigma`.
pub fn conductivity_jacobian(
    mesh: &Mesh,
    sigma: &ConductivityField,
    contact_impedances: &[f64],
    patterns: &StimPatternSet,
) -> Result<JacobianMatrix> {
    let model = CemModel::new(mesh, contact_impedances)?;
    Ok(forward_and_jacobian(&model, sigma, patterns)?.1)
}

/// Gradient of `||V - U(sigma)||^2` with respect to nodal conductivity:
/// `2 J^T (U - V)`.
pub fn data_loss_grad(
    frame: &MeasurementFrame,
    predicted: &[f64],
    jac: &JacobianMatrix,
) -> Result<Vec<f64>> {
    if predicted.len() != frame.voltages.len() || jac.rows() != predicted.len() {
        return Err(EitError::Dimension(format!(
            "frame has {} voltages, prediction {}, Jacobian {} rows",
            frame.voltages.len(),
            predicted.len(),
            jac.rows()
        )));
    }
    let residual: Vec<f64> = predicted
        .iter()
        .zip(&frame.voltages)
        .map(|(u, v)| 2.0 * (u - v))
        .collect();
    Ok(jac.transpose_mul(&residual))
}

/// `||V - U||^2`.
pub fn data_loss(frame: &MeasurementFrame, predicted: &[f64]) -> f64 {
    frame
        .voltages
        .iter()
        .zip(predicted)
        .map(|(v, u)| (v - u) * (v - u))
        .sum()
}
