//! Complete electrode model: P1 finite elements for the potential plus one
//! unknown per electrode, grounded so the electrode potentials sum to zero.
//!
//! Units: conductivity in mS/cm, lengths in cm, currents in mA. The linear
//! system is solved for potentials in V; everything returned is in mV.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{EitError, Result};
use crate::mesh::Mesh;
use crate::sparse::{CsrMatrix, EnvelopeCholesky, TripletBuilder};

pub(crate) const MV_PER_V: f64 = 1e3;

/// Default contact impedance applied to every electrode.
pub const DEFAULT_CONTACT_IMPEDANCE: f64 = 1e-2;

/// Relative residual every linear solve must reach.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

/// Nodal conductivity, strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityField {
    values: Vec<f64>,
}

impl ConductivityField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(EitError::invariant(
                format!("sigma[{i}]"),
                format!(
                    "conductivity must be positive and finite, got {}",
                    values[i]
                ),
            ));
        }
        Ok(ConductivityField { values })
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub(crate) fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        if self.values.len() != mesh.n_nodes() {
            return Err(EitError::Dimension(format!(
                "conductivity has {} values for {} mesh nodes",
                self.values.len(),
                mesh.n_nodes()
            )));
        }
        Ok(())
    }
}

/// Voltage difference `U[plus] - U[minus]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Selector {
    pub plus: usize,
    pub minus: usize,
}

/// How a pattern set was generated; kept for the measurement file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Protocol {
    Adjacent {
        #[serde(rename = "amplitude_mA")]
        amplitude_ma: f64,
        skip_injecting: bool,
    },
    Custom {
        injections: Vec<Vec<f64>>,
        selectors: Vec<Vec<[usize; 2]>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StimPatternSet {
    n_electrodes: usize,
    injections: Vec<Vec<f64>>,
    measurements: Vec<Vec<Selector>>,
    protocol: Protocol,
}

impl StimPatternSet {
    /// Arbitrary patterns. Each injection must sum to zero and every
    /// selector must reference an existing electrode.
    pub fn custom(
        n_electrodes: usize,
        injections: Vec<Vec<f64>>,
        measurements: Vec<Vec<Selector>>,
    ) -> Result<Self> {
        let protocol = Protocol::Custom {
            injections: injections.clone(),
            selectors: measurements
                .iter()
                .map(|sel| sel.iter().map(|s| [s.plus, s.minus]).collect())
                .collect(),
        };
        let set = StimPatternSet {
            n_electrodes,
            injections,
            measurements,
            protocol,
        };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        if self.injections.len() != self.measurements.len() {
            return Err(EitError::invariant(
                "patterns",
                format!(
                    "{} injections but {} selector lists",
                    self.injections.len(),
                    self.measurements.len()
                ),
            ));
        }
        for (k, inj) in self.injections.iter().enumerate() {
            if inj.len() != self.n_electrodes {
                return Err(EitError::invariant(
                    format!("injection {k}"),
                    format!(
                        "{} currents for {} electrodes",
                        inj.len(),
                        self.n_electrodes
                    ),
                ));
            }
            let sum: f64 = inj.iter().sum();
            let scale = inj.iter().map(|v| v.abs()).fold(0.0, f64::max);
            if sum.abs() > 1e-12 * scale.max(1.0) {
                return Err(EitError::invariant(
                    format!("injection {k}"),
                    format!("currents sum to {sum:e}, not 0"),
                ));
            }
        }
        for (k, sel) in self.measurements.iter().enumerate() {
            if let Some(s) = sel
                .iter()
                .find(|s| s.plus >= self.n_electrodes || s.minus >= self.n_electrodes)
            {
                return Err(EitError::invariant(
                    format!("injection {k} selector ({},{})", s.plus, s.minus),
                    format!(
                        "electrode index out of range for {} electrodes",
                        self.n_electrodes
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn n_electrodes(&self) -> usize {
        self.n_electrodes
    }

    pub fn injections(&self) -> &[Vec<f64>] {
        &self.injections
    }

    pub fn measurements(&self) -> &[Vec<Selector>] {
        &self.measurements
    }

    pub fn protocol(&self) -> &Protocol {
        &self.protocol
    }

    pub fn n_measurements(&self) -> usize {
        self.measurements.iter().map(Vec::len).sum()
    }

    /// `(injection, selector)` for every measurement, injection-major.
    pub fn flat(&self) -> impl Iterator<Item = (usize, Selector)> + '_ {
        self.measurements
            .iter()
            .enumerate()
            .flat_map(|(d, sel)| sel.iter().map(move |&s| (d, s)))
    }

    pub fn from_protocol(n_electrodes: usize, protocol: &Protocol) -> Result<Self> {
        match protocol {
            Protocol::Adjacent {
                amplitude_ma,
                skip_injecting,
            } => adjacent_patterns(n_electrodes, *amplitude_ma, *skip_injecting),
            Protocol::Custom {
                injections,
                selectors,
            } => StimPatternSet::custom(
                n_electrodes,
                injections.clone(),
                selectors
                    .iter()
                    .map(|sel| {
                        sel.iter()
                            .map(|&[plus, minus]| Selector { plus, minus })
                            .collect()
                    })
                    .collect(),
            ),
        }
    }
}

/// Adjacent drive and adjacent measurement. Injection `k` drives
/// `+amplitude` into electrode `k` and out of `k+1`; selectors are
/// `U[m] - U[m+1]`. With `skip_injecting`, the three selectors that touch a
/// current-carrying electrode are dropped.
pub fn adjacent_patterns(
    n_electrodes: usize,
    amplitude: f64,
    skip_injecting: bool,
) -> Result<StimPatternSet> {
    let min = if skip_injecting { 3 } else { 2 };
    if n_electrodes < min {
        return Err(EitError::invariant(
            "patterns",
            format!("adjacent protocol needs at least {min} electrodes, got {n_electrodes}"),
        ));
    }
    if !(amplitude > 0.0) || !amplitude.is_finite() {
        return Err(EitError::invariant(
            "patterns",
            format!("amplitude must be positive, got {amplitude}"),
        ));
    }
    let n = n_electrodes;
    let mut injections = Vec::with_capacity(n);
    let mut measurements = Vec::with_capacity(n);
    for k in 0..n {
        let mut inj = vec![0.0; n];
        inj[k] += amplitude;
        inj[(k + 1) % n] -= amplitude;
        injections.push(inj);
        let driven = [k, (k + 1) % n];
        measurements.push(
            (0..n)
                .map(|m| Selector {
                    plus: m,
                    minus: (m + 1) % n,
                })
                .filter(|s| {
                    !skip_injecting || !(driven.contains(&s.plus) || driven.contains(&s.minus))
                })
                .collect(),
        );
    }
    Ok(StimPatternSet {
        n_electrodes,
        injections,
        measurements,
        protocol: Protocol::Adjacent {
            amplitude_ma: amplitude,
            skip_injecting,
        },
    })
}

/// Stimulation patterns plus the voltages they produced, in mV, ordered
/// injection-major then selector.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFrame {
    pub pattern: StimPatternSet,
    pub voltages: Vec<f64>,
    pub noise_snr_db: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MeasurementFile {
    n_electrodes: usize,
    protocol: Protocol,
    voltages: Vec<f64>,
    #[serde(default)]
    snr_db: Option<f64>,
}

impl MeasurementFrame {
    pub fn new(pattern: StimPatternSet, voltages: Vec<f64>) -> Result<Self> {
        let frame = MeasurementFrame {
            pattern,
            voltages,
            noise_snr_db: None,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn validate(&self) -> Result<()> {
        let expected = self.pattern.n_measurements();
        if self.voltages.len() != expected {
            return Err(EitError::invariant(
                "frame.voltages",
                format!("{} voltages for {expected} selectors", self.voltages.len()),
            ));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = MeasurementFile {
            n_electrodes: self.pattern.n_electrodes(),
            protocol: self.pattern.protocol().clone(),
            voltages: self.voltages.clone(),
            snr_db: self.noise_snr_db.filter(|s| s.is_finite()),
        };
        serde_json::to_string_pretty(&file).expect("frame serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MeasurementFile =
            serde_json::from_str(text).map_err(|e| EitError::Parse(e.to_string()))?;
        let pattern = StimPatternSet::from_protocol(file.n_electrodes, &file.protocol)?;
        let mut frame = MeasurementFrame::new(pattern, file.voltages)?;
        frame.noise_snr_db = file.snr_db;
        Ok(frame)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EitError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| EitError::io(path, e))
    }
}

/// Forward solution for every injection of a pattern set, in mV.
#[derive(Debug, Clone, PartialEq)]
pub struct CemSolution {
    pub potentials: Vec<Vec<f64>>,
    pub electrode_potentials: Vec<Vec<f64>>,
    pub contact_impedances: Vec<f64>,
}

/// Geometry and contact data of a mesh, reusable across conductivities.
#[derive(Debug, Clone)]
pub struct CemModel<'m> {
    mesh: &'m Mesh,
    contact: Vec<f64>,
    geometry: Vec<(f64, [[f64; 2]; 3])>,
}

impl<'m> CemModel<'m> {
    pub fn new(mesh: &'m Mesh, contact_impedances: &[f64]) -> Result<Self> {
        if contact_impedances.len() != mesh.n_electrodes() {
            return Err(EitError::Dimension(format!(
                "{} contact impedances for {} electrodes",
                contact_impedances.len(),
                mesh.n_electrodes()
            )));
        }
        if let Some(q) = contact_impedances
            .iter()
            .position(|z| !(*z > 0.0) || !z.is_finite())
        {
            return Err(EitError::invariant(
                format!("electrode {q}"),
                format!(
                    "contact impedance must be positive, got {}",
                    contact_impedances[q]
                ),
            ));
        }
        for q in 0..mesh.n_electrodes() {
            if !(mesh.electrode_length(q) > 0.0) {
                return Err(EitError::Assembly(format!("electrode {q} has zero length")));
            }
        }
        let geometry = (0..mesh.n_elements())
            .map(|k| mesh.element_geometry(k))
            .collect();
        Ok(CemModel {
            mesh,
            contact: contact_impedances.to_vec(),
            geometry,
        })
    }

    /// Uniform contact impedance on every electrode.
    pub fn uniform(mesh: &'m Mesh, z: f64) -> Result<Self> {
        Self::new(mesh, &vec![z; mesh.n_electrodes()])
    }

    pub fn mesh(&self) -> &'m Mesh {
        self.mesh
    }

    pub fn contact_impedances(&self) -> &[f64] {
        &self.contact
    }

    pub(crate) fn geometry(&self) -> &[(f64, [[f64; 2]; 3])] {
        &self.geometry
    }

    /// Assemble the full (ungrounded) system matrix and factor its grounded
    /// reduction.
    pub fn system(&self, sigma: &ConductivityField) -> Result<CemSystem> {
        sigma.check_mesh(self.mesh)?;
        let nn = self.mesh.n_nodes();
        let ne = self.mesh.n_electrodes();
        let s = sigma.values();
        let mut b = TripletBuilder::new(nn + ne);
        for (tri, (area, g)) in self.mesh.elements().iter().zip(&self.geometry) {
            let mean = (s[tri[0]] + s[tri[1]] + s[tri[2]]) / 3.0;
            let w = mean * area;
            for i in 0..3 {
                for j in 0..3 {
                    b.add(tri[i], tri[j], w * (g[i][0] * g[j][0] + g[i][1] * g[j][1]));
                }
            }
        }
        for (q, edges) in self.mesh.electrodes().iter().enumerate() {
            let inv_z = 1.0 / self.contact[q];
            let eq = nn + q;
            for &[a, c] in edges {
                let h = self.mesh.edge_length([a, c]);
                b.add(a, a, inv_z * h / 3.0);
                b.add(c, c, inv_z * h / 3.0);
                b.add_sym(a, c, inv_z * h / 6.0);
                b.add_sym(a, eq, -inv_z * h / 2.0);
                b.add_sym(c, eq, -inv_z * h / 2.0);
                b.add(eq, eq, inv_z * h);
            }
        }
        let matrix = b.build();
        let factor = EnvelopeCholesky::factor(&matrix.without_index(nn))?;
        Ok(CemSystem {
            n_nodes: nn,
            n_electrodes: ne,
            matrix,
            factor,
        })
    }
}

/// A factored CEM system for one conductivity.
#[derive(Debug, Clone)]
pub struct CemSystem {
    n_nodes: usize,
    n_electrodes: usize,
    matrix: CsrMatrix,
    factor: EnvelopeCholesky,
}

impl CemSystem {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_electrodes(&self) -> usize {
        self.n_electrodes
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    /// Solve for a zero-sum load on the electrode unknowns. Returns the full
    /// state `[u_1..u_N, U_1..U_Ne]` in V with `sum U = 0`.
    pub fn solve_electrode_load(&self, load: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(load.len(), self.n_electrodes);
        let nn = self.n_nodes;
        let mut rhs = vec![0.0; nn + self.n_electrodes];
        rhs[nn..].copy_from_slice(load);
        self.solve_full(&rhs)
    }

    /// Solve `A x = rhs` for a right-hand side orthogonal to constants,
    /// fixing the gauge by `sum U = 0`.
    pub fn solve_full(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let nn = self.n_nodes;
        let reduce =
            |v: &[f64]| -> Vec<f64> { v[..nn].iter().chain(&v[nn + 1..]).copied().collect() };
        let expand = |r: Vec<f64>| -> Vec<f64> {
            let mut x = Vec::with_capacity(r.len() + 1);
            x.extend_from_slice(&r[..nn]);
            x.push(0.0);
            x.extend_from_slice(&r[nn..]);
            x
        };
        let bnorm = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if bnorm == 0.0 {
            return Ok(vec![0.0; rhs.len()]);
        }
        let mut x = expand(self.factor.solve(&reduce(rhs)));
        let mut rel = f64::INFINITY;
        for _ in 0..4 {
            let ax = self.matrix.matvec(&x);
            let res: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
            rel = res.iter().map(|v| v * v).sum::<f64>().sqrt() / bnorm;
            if rel <= SOLVE_TOLERANCE {
                break;
            }
            let dx = expand(self.factor.solve(&reduce(&res)));
            for (xi, d) in x.iter_mut().zip(dx) {
                *xi += d;
            }
        }
        if !(rel <= SOLVE_TOLERANCE) {
            return Err(EitError::Numeric {
                detail: "CEM linear solve did not reach tolerance".into(),
                residual: rel,
            });
        }
        let shift = x[nn..].iter().sum::<f64>() / self.n_electrodes as f64;
        for v in &mut x {
            *v -= shift;
        }
        Ok(x)
    }
}

/// Net current leaving the model through each electrode, in mA, for a full
/// state vector in V.
pub fn electrode_currents(model: &CemModel, state: &[f64]) -> Vec<f64> {
    let mesh = model.mesh();
    let nn = mesh.n_nodes();
    mesh.electrodes()
        .iter()
        .enumerate()
        .map(|(q, edges)| {
            let uq = state[nn + q];
            edges
                .iter()
                .map(|&[a, c]| {
                    let h = mesh.edge_length([a, c]);
                    h * (uq - 0.5 * (state[a] + state[c]))
                })
                .sum::<f64>()
                / model.contact_impedances()[q]
        })
        .collect()
}

/// Forward solution of a factored system: full states in V per injection.
pub(crate) fn solve_injections(
    system: &CemSystem,
    patterns: &StimPatternSet,
) -> Result<Vec<Vec<f64>>> {
    patterns
        .injections()
        .iter()
        .map(|inj| system.solve_electrode_load(inj))
        .collect()
}

/// Apply selectors to electrode potentials, returning mV.
pub(crate) fn apply_selectors(
    states: &[Vec<f64>],
    n_nodes: usize,
    patterns: &StimPatternSet,
) -> Vec<f64> {
    patterns
        .flat()
        .map(|(d, s)| MV_PER_V * (states[d][n_nodes + s.plus] - states[d][n_nodes + s.minus]))
        .collect()
}

/// Solve the CEM for every injection and return the solution with the
/// predicted voltages in mV.
pub fn assemble_and_solve(
    mesh: &Mesh,
    sigma: &ConductivityField,
    contact_impedances: &[f64],
    patterns: &StimPatternSet,
) -> Result<(CemSolution, Vec<f64>)> {
    if patterns.n_electrodes() != mesh.n_electrodes() {
        return Err(EitError::Dimension(format!(
            "patterns address {} electrodes, mesh has {}",
            patterns.n_electrodes(),
            mesh.n_electrodes()
        )));
    }
    let model = CemModel::new(mesh, contact_impedances)?;
    let system = model.system(sigma)?;
    let states = solve_injections(&system, patterns)?;
    let nn = mesh.n_nodes();
    let predicted = apply_selectors(&states, nn, patterns);
    let solution = CemSolution {
        potentials: states
            .iter()
            .map(|x| x[..nn].iter().map(|v| v * MV_PER_V).collect())
            .collect(),
        electrode_potentials: states
            .iter()
            .map(|x| x[nn..].iter().map(|v| v * MV_PER_V).collect())
            .collect(),
        contact_impedances: contact_impedances.to_vec(),
    };
    Ok((solution, predicted))
}

/// Root-mean-square of a vector.
pub fn rms(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// Add i.i.d. Gaussian noise with standard deviation
/// `rms(V) * 10^(-snr_db / 20)`. An infinite SNR returns the input
/// unchanged.
pub fn add_noise(frame: &MeasurementFrame, snr_db: f64, seed: u64) -> Result<MeasurementFrame> {
    if frame.voltages.is_empty() {
        return Err(EitError::invariant(
            "frame.voltages",
            "cannot add noise to an empty frame",
        ));
    }
    if snr_db.is_nan() {
        return Err(EitError::invariant("snr_db", "SNR is NaN"));
    }
    let mut out = frame.clone();
    out.noise_snr_db = Some(snr_db);
    if snr_db == f64::INFINITY {
        return Ok(out);
    }
    let std = rms(&frame.voltages) * 10f64.powf(-snr_db / 20.0);
    let normal = Normal::new(0.0, std).map_err(|e| EitError::invariant("snr_db", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut out.voltages {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}
