//! Runs the three reconstruction methods on the simulated thorax and prints
//! residuals, scores and timings.
//!
//! `cargo run --release -p eit-core --example desk_study -- [tv_alpha] [n_total] [n_pre]`
//!
//! `DESK_CONFIG=path.json` overrides the reconstruction settings.

use std::time::Instant;

use eit_core::fem::DEFAULT_CONTACT_IMPEDANCE;
use eit_core::guidance::StubProvider;
use eit_core::metrics::{evaluate_metrics, MetricsConfig};
use eit_core::recon::{
    reconstruct_inr_tv, reconstruct_sdeit, reconstruct_tv, ReconConfig, ReconResult,
    TvBaselineConfig,
};
use eit_core::study::{residual_power, SimulatedCase};

fn report(name: &str, case: &SimulatedCase, r: &ReconResult, secs: f64) {
    let data = residual_power(
        &case.inverse_mesh,
        &case.noisy,
        &r.sigma_meas,
        DEFAULT_CONTACT_IMPEDANCE,
    )
    .unwrap();
    let m = evaluate_metrics(&r.sigma_grid, &case.truth, &MetricsConfig::default()).unwrap();
    let masked = MetricsConfig {
        masked: true,
        ..Default::default()
    };
    let inside = evaluate_metrics(&r.sigma_grid, &case.truth, &masked).unwrap();
    println!(
        "{name:8} data {data:.4e} ({:.2} x noise) mssim {:.4} psnr {:.2} cc {:.4} mse {:.4e} masked-mssim {:.4} time {secs:.1}s",
        data / case.noise_power,
        m.mssim,
        m.psnr,
        m.cc,
        m.mse,
        inside.mssim
    );
}

fn main() {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let alpha: f64 = args
        .get(1)
        .map(|s| s.parse().unwrap())
        .unwrap_or(TvBaselineConfig::default().alpha);
    let mut cfg: ReconConfig = match std::env::var("DESK_CONFIG") {
        Ok(path) => serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap(),
        Err(_) => ReconConfig::default(),
    };
    if let Some(n) = args.get(2) {
        cfg.n_total = n.parse().unwrap();
    }
    if let Some(n) = args.get(3) {
        cfg.n_pre = n.parse().unwrap();
    }
    let case = SimulatedCase::thorax(60.0, 7, DEFAULT_CONTACT_IMPEDANCE, cfg.grid_width).unwrap();
    println!(
        "forward {} nodes / {} elements, inverse {} nodes / {} elements, noise power {:.4e} mV^2",
        case.forward_mesh.n_nodes(),
        case.forward_mesh.n_elements(),
        case.inverse_mesh.n_nodes(),
        case.inverse_mesh.n_elements(),
        case.noise_power
    );

    let skip: Vec<String> = std::env::var("DESK_SKIP")
        .unwrap_or_default()
        .split(',')
        .map(String::from)
        .collect();
    let t = Instant::now();
    if !skip.iter().any(|s| s == "tv") {
        let tv = reconstruct_tv(
            &case.inverse_mesh,
            &case.noisy,
            &TvBaselineConfig {
                alpha,
                ..Default::default()
            },
        )
        .unwrap();
        report("tv", &case, &tv, t.elapsed().as_secs_f64());
    }
    if !skip.iter().any(|s| s == "inr") {
        let t = Instant::now();
        let inr = reconstruct_inr_tv(&case.inverse_mesh, &case.noisy, &cfg).unwrap();
        report("inr-tv", &case, &inr, t.elapsed().as_secs_f64());
    }
    if skip.iter().any(|s| s == "sdeit") {
        return;
    }

    let t = Instant::now();
    let sd = reconstruct_sdeit(
        &case.inverse_mesh,
        &case.noisy,
        &cfg,
        &mut StubProvider::default(),
    )
    .unwrap();
    report("sdeit", &case, &sd, t.elapsed().as_secs_f64());
}
