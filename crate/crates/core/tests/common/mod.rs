//! Independent oracles shared by the integration tests and the acceptance
//! suite.
#![allow(dead_code)]

use std::time::Instant;

use eit_core::fem::{
    adjacent_patterns, assemble_and_solve, add_noise, rms, ConductivityField, MeasurementFrame,
    Selector, StimPatternSet, DEFAULT_CONTACT_IMPEDANCE,
};
use eit_core::grid::GridImage;
use eit_core::guidance::{stub_guide, GuidanceRequest, StubProvider, PROMPT_BASIC};
use eit_core::inr::make_encoder;
use eit_core::mesh::{make_disk_mesh, Mesh};
use eit_core::recon::{InrObjective, ReconConfig};
use eit_core::regularizers::{ssim_loss_grad, SsimConfig, TvConfig, TvOperator};
use eit_core::sensitivity::{data_loss, data_loss_grad, forward_and_jacobian};
use eit_core::fem::CemModel;
use eit_core::inr::{mlp_init_with, default_widths, OutputMapping, SIGMA_FLOOR};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Disk of radius 14 cm with 16 electrodes of 2.5 cm.
pub fn disk(target_elements: usize) -> Mesh {
    make_disk_mesh(14.0, 16, 2.5, target_elements).unwrap()
}

pub fn random_field(n: usize, seed: u64) -> ConductivityField {
    let mut r = rng(seed);
    ConductivityField::new((0..n).map(|_| r.random_range(0.5..1.5)).collect()).unwrap()
}

fn z(mesh: &Mesh) -> Vec<f64> {
    vec![DEFAULT_CONTACT_IMPEDANCE; mesh.n_electrodes()]
}

fn pair(r: &mut ChaCha8Rng, n: usize) -> (usize, usize) {
    let a = r.random_range(0..n);
    let b = (a + r.random_range(1..n)) % n;
    (a, b)
}

/// Largest relative mismatch between `drive (a,b), measure (c,d)` and the
/// swapped configuration over `swaps` random pairs.
pub fn reciprocity_error(mesh: &Mesh, sigma: &ConductivityField, swaps: usize, seed: u64) -> f64 {
    let ne = mesh.n_electrodes();
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..swaps {
        let (a, b) = pair(&mut r, ne);
        let (c, d) = pair(&mut r, ne);
        let inj = |p: usize, m: usize| {
            let mut v = vec![0.0; ne];
            v[p] += 1.0;
            v[m] -= 1.0;
            v
        };
        let patterns = StimPatternSet::custom(
            ne,
            vec![inj(a, b), inj(c, d)],
            vec![
                vec![Selector { plus: c, minus: d }],
                vec![Selector { plus: a, minus: b }],
            ],
        )
        .unwrap();
        let (_, v) = assemble_and_solve(mesh, sigma, &z(mesh), &patterns).unwrap();
        worst = worst.max(rel_err(v[0], v[1]));
    }
    worst
}

/// Largest `|sum_q U_q|` over the injections of the adjacent protocol, and
/// the seconds taken by the 16-injection solve.
pub fn grounding_and_timing(mesh: &Mesh, sigma: &ConductivityField) -> (f64, f64) {
    let patterns = adjacent_patterns(mesh.n_electrodes(), 1.0, false).unwrap();
    let t = Instant::now();
    let (sol, _) = assemble_and_solve(mesh, sigma, &z(mesh), &patterns).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let worst = sol
        .electrode_potentials
        .iter()
        .map(|u| u.iter().sum::<f64>().abs())
        .fold(0.0, f64::max);
    (worst, secs)
}

/// Adjoint Jacobian against central differences with step `1e-5 sigma_n` at
/// `entries` random `(m, n)` positions. Returns the worst relative error.
///
/// Each perturbed solve is written as a correction to the base state,
/// `(A + dA) du = -dA u`, so `U(sigma + h) - U(sigma - h)` is formed without
/// subtracting two nearly equal solutions.
pub fn jacobian_fd_error(mesh: &Mesh, sigma: &ConductivityField, entries: usize, seed: u64) -> f64 {
    let patterns = adjacent_patterns(mesh.n_electrodes(), 1.0, false).unwrap();
    let model = CemModel::new(mesh, &z(mesh)).unwrap();
    let (_, jac) = forward_and_jacobian(&model, sigma, &patterns).unwrap();
    let base = model.system(sigma).unwrap();
    let selectors: Vec<_> = patterns.flat().collect();
    let nn = mesh.n_nodes();
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..entries {
        let m = r.random_range(0..jac.rows());
        let n = r.random_range(0..jac.cols());
        let (d, sel) = selectors[m];
        let u = base.solve_electrode_load(&patterns.injections()[d]).unwrap();
        let au = base.matrix().matvec(&u);
        let h = 1e-5 * sigma.values()[n];
        let shift = |delta: f64| {
            let mut v = sigma.values().to_vec();
            v[n] += delta;
            let sys = model.system(&ConductivityField::new(v).unwrap()).unwrap();
            let mut rhs: Vec<f64> = au.iter().zip(sys.matrix().matvec(&u)).map(|(a, b)| a - b).collect();
            // Remove the round-off component along the constant null vector.
            let mean = rhs.iter().sum::<f64>() / rhs.len() as f64;
            rhs.iter_mut().for_each(|v| *v -= mean);
            let du = sys.solve_full(&rhs).unwrap();
            du[nn + sel.plus] - du[nn + sel.minus]
        };
        // States are in V, measurements in mV.
        let fd = 1e3 * (shift(h) - shift(-h)) / (2.0 * h);
        worst = worst.max(rel_err(jac.get(m, n), fd));
    }
    worst
}

/// Windowed SSIM written directly from the definition: every valid window,
/// population statistics, averaged.
pub fn reference_mssim(x: &GridImage, y: &GridImage, win: usize, k1: f64, k2: f64, l: f64) -> f64 {
    let (w, h) = (x.width, x.height);
    let c1 = (k1 * l).powi(2);
    let c2 = (k2 * l).powi(2);
    let npx = (win * win) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for top in 0..=h - win {
        for left in 0..=w - win {
            let mut xs = Vec::with_capacity(win * win);
            let mut ys = Vec::with_capacity(win * win);
            for i in top..top + win {
                for j in left..left + win {
                    xs.push(x.get(i, j));
                    ys.push(y.get(i, j));
                }
            }
            let mx = xs.iter().sum::<f64>() / npx;
            let my = ys.iter().sum::<f64>() / npx;
            let vx = xs.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / npx;
            let vy = ys.iter().map(|b| (b - my).powi(2)).sum::<f64>() / npx;
            let cxy = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / npx;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

pub fn random_image(w: usize, h: usize, r: &mut ChaCha8Rng) -> GridImage {
    GridImage::new(w, h, (0..w * h).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()
}

/// Worst disagreement with [`reference_mssim`] over `pairs` random 32x32
/// images, one of each pair a noisy copy of the other.
pub fn mssim_reference_error(pairs: usize, seed: u64) -> f64 {
    let cfg = SsimConfig::default();
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let x = random_image(32, 32, &mut r);
        let noise: f64 = r.random_range(0.05..0.5);
        let y = x.with_values(
            x.values
                .iter()
                .map(|v| (v + noise * r.random_range(-1.0..1.0)).clamp(0.0, 1.0))
                .collect(),
        );
        let ours = eit_core::regularizers::mssim(&x, &y, &cfg).unwrap();
        let oracle = reference_mssim(&x, &y, cfg.window, cfg.k1, cfg.k2, cfg.data_range);
        worst = worst.max((ours - oracle).abs());
    }
    worst
}

/// Scalar Adam on `f(x) = x^2 / 2` written out by hand.
pub fn adam_oracle(x0: f64, lr: f64, steps: usize) -> Vec<f64> {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let (mut x, mut m, mut v) = (x0, 0.0, 0.0);
    let mut out = Vec::new();
    for t in 1..=steps {
        let g = x;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mhat = m / (1.0 - b1.powi(t as i32));
        let vhat = v / (1.0 - b2.powi(t as i32));
        x -= lr * mhat / (vhat.sqrt() + eps);
        out.push(x);
    }
    out
}

/// Central-difference check of the TV gradient at `coords` random nodes of
/// a random field. Returns the worst relative error.
pub fn tv_fd_error(mesh: &Mesh, coords: usize, seed: u64) -> f64 {
    let op = TvOperator::new(mesh, &TvConfig::default()).unwrap();
    let sigma = random_field(mesh.n_nodes(), seed);
    let (_, g) = op.loss_grad(sigma.values()).unwrap();
    let mut r = rng(seed ^ 0x5eed);
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let n = r.random_range(0..mesh.n_nodes());
        let h = 1e-6;
        let eval = |d: f64| {
            let mut v = sigma.values().to_vec();
            v[n] += d;
            op.loss_grad(&v).unwrap().0
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        worst = worst.max(rel_err(g[n], fd));
    }
    worst
}

/// Central-difference check of the SSIM-loss gradient at `coords` random
/// pixels of a random 32x32 pair.
pub fn ssim_fd_error(coords: usize, seed: u64) -> f64 {
    let cfg = SsimConfig::default();
    let mut r = rng(seed);
    let x = random_image(32, 32, &mut r);
    let y = random_image(32, 32, &mut r);
    let (_, g) = ssim_loss_grad(&x, &y, &cfg).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let p = r.random_range(0..x.len());
        let h = 1e-6;
        let eval = |d: f64| {
            let mut v = x.values.clone();
            v[p] += d;
            ssim_loss_grad(&x.with_values(v), &y, &cfg).unwrap().0
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        worst = worst.max(rel_err(g[p], fd));
    }
    worst
}

/// Mean realized SNR `20 log10(rms(V) / rms(e))` over `seeds` noise draws
/// of a 256-measurement frame.
pub fn mean_realized_snr(frame: &MeasurementFrame, snr_db: f64, seeds: u64) -> f64 {
    let clean = rms(&frame.voltages);
    let total: f64 = (0..seeds)
        .map(|s| {
            let noisy = add_noise(frame, snr_db, s).unwrap();
            let e: Vec<f64> = noisy.voltages.iter().zip(&frame.voltages).map(|(a, b)| a - b).collect();
            20.0 * (clean / rms(&e)).log10()
        })
        .sum();
    total / seeds as f64
}

/// Noiseless adjacent-protocol frame of a random field on `mesh`.
pub fn synthetic_frame(mesh: &Mesh, seed: u64) -> MeasurementFrame {
    let patterns = adjacent_patterns(mesh.n_electrodes(), 1.0, false).unwrap();
    let sigma = random_field(mesh.n_nodes(), seed);
    let (_, v) = assemble_and_solve(mesh, &sigma, &z(mesh), &patterns).unwrap();
    MeasurementFrame::new(patterns, v).unwrap()
}

/// Central-difference check of the data-loss gradient with respect to
/// nodal conductivity at `coords` random nodes.
pub fn data_grad_fd_error(mesh: &Mesh, coords: usize, seed: u64) -> f64 {
    let frame = synthetic_frame(mesh, seed);
    let patterns = frame.pattern.clone();
    let model = CemModel::new(mesh, &z(mesh)).unwrap();
    let sigma = random_field(mesh.n_nodes(), seed + 1);
    let (u, jac) = forward_and_jacobian(&model, &sigma, &patterns).unwrap();
    let g = data_loss_grad(&frame, &u, &jac).unwrap();
    let mut r = rng(seed + 2);
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let n = r.random_range(0..mesh.n_nodes());
        let h = 1e-5 * sigma.values()[n];
        let eval = |d: f64| {
            let mut v = sigma.values().to_vec();
            v[n] += d;
            let f = ConductivityField::new(v).unwrap();
            data_loss(&frame, &assemble_and_solve(mesh, &f, &z(mesh), &patterns).unwrap().1)
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        worst = worst.max(rel_err(g[n], fd));
    }
    worst
}

/// Small configuration for pipeline checks on the ~300-element mesh.
pub fn small_config() -> ReconConfig {
    ReconConfig {
        grid_width: 32,
        grid_height: 32,
        n_pre: 3,
        n_total: 8,
        ..ReconConfig::default()
    }
}

/// Reverse-mode gradient of the full objective (data + TV + SSIM against a
/// frozen stub guidance image) against central differences at `params`
/// random network parameters. Returns the worst relative error and the
/// three loss terms at the base point.
pub fn end_to_end_fd_error(params: usize, seed: u64) -> (f64, [f64; 3]) {
    let mesh = disk(300);
    let noisy = add_noise(&synthetic_frame(&mesh, seed), 60.0, seed).unwrap();
    let cfg = small_config();
    let enc = make_encoder(cfg.encoder.n, cfg.encoder.bandwidth, cfg.encoder.seed).unwrap();
    let output = OutputMapping {
        floor: SIGMA_FLOOR,
        scale: cfg.output_scale,
    };
    let theta = mlp_init_with(&default_widths(cfg.encoder.n), cfg.mlp_seed, output).unwrap();
    let mut obj = InrObjective::new(&mesh, &noisy, &cfg, &enc).unwrap();
    let grid = obj.grid_forward(&theta).unwrap();
    let req = GuidanceRequest {
        image: grid.normalized.clone(),
        prompt: PROMPT_BASIC.into(),
        strength: 0.4,
        steps: 50,
        guidance_scale: 0.8,
        seed,
    };
    let stub = StubProvider::default();
    let guide = stub_guide(&req, stub.levels, stub.blur_sigma).unwrap().image;
    let base = obj.evaluate(&theta, Some((&grid, &guide))).unwrap();
    let total = |obj: &mut InrObjective, th: &eit_core::inr::MlpParams| {
        let g = obj.grid_forward(th).unwrap();
        let e = obj.evaluate(th, Some((&g, &guide))).unwrap();
        e.data + cfg.alpha0 * e.tv + cfg.alpha1 * e.ssim
    };
    let mut r = rng(seed + 11);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    while checked < params {
        let i = r.random_range(0..theta.n_params());
        let analytic = base.grads.get(i);
        // Parameters feeding only dead units carry no signal to compare.
        if analytic == 0.0 {
            continue;
        }
        // Smaller steps drown in the round-off of the forward solves.
        let h = 1e-4;
        let mut plus = theta.clone();
        plus.set(i, theta.get(i) + h);
        let mut minus = theta.clone();
        minus.set(i, theta.get(i) - h);
        let fd = (total(&mut obj, &plus) - total(&mut obj, &minus)) / (2.0 * h);
        worst = worst.max(rel_err(analytic, fd));
        checked += 1;
    }
    (worst, [base.data, base.tv, base.ssim])
}
