//! The simulated thorax study: distinct forward and inverse disk meshes, a
//! heart-and-lungs phantom and noisy adjacent-pattern data.

use crate::error::Result;
use crate::fem::{
    add_noise, adjacent_patterns, assemble_and_solve, ConductivityField, MeasurementFrame,
    StimPatternSet,
};
use crate::grid::GridImage;
use crate::mesh::{make_disk_mesh, Mesh};
use crate::phantom::Phantom;
use crate::sensitivity::data_loss;

pub const DISK_RADIUS_CM: f64 = 14.0;
pub const N_ELECTRODES: usize = 16;
pub const ELECTRODE_WIDTH_CM: f64 = 2.5;
pub const FORWARD_ELEMENTS: usize = 11424;
pub const INVERSE_ELEMENTS: usize = 2176;
pub const AMPLITUDE_MA: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct SimulatedCase {
    pub forward_mesh: Mesh,
    pub inverse_mesh: Mesh,
    pub phantom: Phantom,
    pub clean: MeasurementFrame,
    pub noisy: MeasurementFrame,
    /// `||noisy - clean||^2` in mV^2.
    pub noise_power: f64,
    pub truth: GridImage,
}

pub fn disk_mesh(target_elements: usize) -> Result<Mesh> {
    make_disk_mesh(
        DISK_RADIUS_CM,
        N_ELECTRODES,
        ELECTRODE_WIDTH_CM,
        target_elements,
    )
}

/// Simulate `phantom` on `forward_mesh` and add noise at `snr_db`.
pub fn simulate(
    forward_mesh: &Mesh,
    phantom: &Phantom,
    contact_impedance: f64,
    patterns: &StimPatternSet,
    snr_db: f64,
    seed: u64,
) -> Result<(MeasurementFrame, MeasurementFrame)> {
    let sigma = ConductivityField::new(phantom.nodal_field(forward_mesh))?;
    let z = vec![contact_impedance; forward_mesh.n_electrodes()];
    let (_, voltages) = assemble_and_solve(forward_mesh, &sigma, &z, patterns)?;
    let clean = MeasurementFrame::new(patterns.clone(), voltages)?;
    let noisy = add_noise(&clean, snr_db, seed)?;
    Ok((clean, noisy))
}

impl SimulatedCase {
    /// The default study at `snr_db` with a fixed noise seed.
    pub fn thorax(snr_db: f64, seed: u64, contact_impedance: f64, grid: usize) -> Result<Self> {
        let forward_mesh = disk_mesh(FORWARD_ELEMENTS)?;
        let inverse_mesh = disk_mesh(INVERSE_ELEMENTS)?;
        let phantom = Phantom::heart_and_lungs();
        let patterns = adjacent_patterns(N_ELECTRODES, AMPLITUDE_MA, false)?;
        let (clean, noisy) = simulate(
            &forward_mesh,
            &phantom,
            contact_impedance,
            &patterns,
            snr_db,
            seed,
        )?;
        let noise_power = data_loss(&noisy, &clean.voltages);
        let truth = phantom.raster(&inverse_mesh, grid, grid)?;
        Ok(SimulatedCase {
            forward_mesh,
            inverse_mesh,
            phantom,
            clean,
            noisy,
            noise_power,
            truth,
        })
    }
}

/// `||V - U(sigma)||^2` on `mesh`.
pub fn residual_power(
    mesh: &Mesh,
    frame: &MeasurementFrame,
    sigma: &ConductivityField,
    contact_impedance: f64,
) -> Result<f64> {
    let z = vec![contact_impedance; mesh.n_electrodes()];
    let (_, u) = assemble_and_solve(mesh, sigma, &z, &frame.pattern)?;
    Ok(data_loss(frame, &u))
}
