mod common;

use common::*;
use eit_core::fem::{adjacent_patterns, assemble_and_solve, ConductivityField, MeasurementFrame, DEFAULT_CONTACT_IMPEDANCE};
use eit_core::sensitivity::{conductivity_jacobian, data_loss, data_loss_grad};
use eit_core::study::{disk_mesh, INVERSE_ELEMENTS};

#[test]
fn reciprocity_on_two_thousand_elements() {
    let mesh = disk(2000);
    let sigma = random_field(mesh.n_nodes(), 3);
    let err = reciprocity_error(&mesh, &sigma, 50, 17);
    assert!(err <= 1e-8, "reciprocity error {err:e}");
}

#[test]
fn electrode_potentials_are_grounded() {
    let mesh = disk(2000);
    let (worst, _) = grounding_and_timing(&mesh, &random_field(mesh.n_nodes(), 5));
    assert!(worst <= 1e-10, "sum of electrode potentials {worst:e}");
}

#[test]
fn homogeneous_disk_is_invariant_under_electrode_shift() {
    let mesh = disk(600);
    let ne = mesh.n_electrodes();
    let patterns = adjacent_patterns(ne, 1.0, false).unwrap();
    let sigma = ConductivityField::constant(mesh.n_nodes(), 1.0).unwrap();
    let z = vec![DEFAULT_CONTACT_IMPEDANCE; ne];
    let (_, v) = assemble_and_solve(&mesh, &sigma, &z, &patterns).unwrap();
    let scale = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    for d in 0..ne {
        for m in 0..ne {
            let shifted = v[((d + 1) % ne) * ne + (m + 1) % ne];
            assert!((v[d * ne + m] - shifted).abs() <= 1e-8 * scale, "drive {d} selector {m}");
        }
    }
}

#[test]
fn jacobian_matches_finite_differences() {
    let mesh = disk(300);
    let err = jacobian_fd_error(&mesh, &random_field(mesh.n_nodes(), 9), 20, 23);
    assert!(err <= 1e-4, "jacobian relative error {err:e}");
}

#[test]
fn jacobian_shape_on_inverse_mesh() {
    let mesh = disk_mesh(INVERSE_ELEMENTS).unwrap();
    let patterns = adjacent_patterns(16, 1.0, false).unwrap();
    let sigma = ConductivityField::constant(mesh.n_nodes(), 1.0).unwrap();
    let jac = conductivity_jacobian(&mesh, &sigma, &[DEFAULT_CONTACT_IMPEDANCE; 16], &patterns).unwrap();
    assert_eq!((jac.rows(), jac.cols()), (256, mesh.n_nodes()));
}

#[test]
fn data_gradient_matches_finite_differences() {
    let err = data_grad_fd_error(&disk(300), 10, 31);
    assert!(err <= 1e-4, "data gradient relative error {err:e}");
}

#[test]
fn small_step_along_negative_gradient_descends() {
    let mesh = disk(300);
    let frame = synthetic_frame(&mesh, 41);
    let z = vec![DEFAULT_CONTACT_IMPEDANCE; 16];
    let mut sigma = random_field(mesh.n_nodes(), 42).into_values();
    for s in &mut sigma {
        *s *= 1.1;
    }
    let field = ConductivityField::new(sigma.clone()).unwrap();
    let jac = conductivity_jacobian(&mesh, &field, &z, &frame.pattern).unwrap();
    let (_, u) = assemble_and_solve(&mesh, &field, &z, &frame.pattern).unwrap();
    let g = data_loss_grad(&frame, &u, &jac).unwrap();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let stepped: Vec<f64> = sigma.iter().zip(&g).map(|(s, gi)| s - 1e-6 * gi / norm).collect();
    let (_, u2) = assemble_and_solve(&mesh, &ConductivityField::new(stepped).unwrap(), &z, &frame.pattern).unwrap();
    assert!(data_loss(&frame, &u2) < data_loss(&frame, &u));
}

#[test]
fn matching_prediction_has_zero_gradient() {
    let mesh = disk(300);
    let frame = synthetic_frame(&mesh, 5);
    let sigma = random_field(mesh.n_nodes(), 5);
    let z = vec![DEFAULT_CONTACT_IMPEDANCE; 16];
    let jac = conductivity_jacobian(&mesh, &sigma, &z, &frame.pattern).unwrap();
    let same = MeasurementFrame::new(frame.pattern.clone(), frame.voltages.clone()).unwrap();
    let g = data_loss_grad(&same, &frame.voltages, &jac).unwrap();
    assert!(g.iter().all(|v| *v == 0.0));
}
