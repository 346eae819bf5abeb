//! Acceptance suite: one PASS/FAIL line per criterion, then a single
//! assertion over all of them. Runs sequentially so timings are not skewed
//! by other tests.

mod common;

use std::time::Instant;

use common::*;
use eit_core::fem::DEFAULT_CONTACT_IMPEDANCE;
use eit_core::guidance::{GuidanceProvider, GuidanceRequest, GuidanceResponse, StubProvider};
use eit_core::metrics::{evaluate_metrics, MetricsConfig};
use eit_core::recon::{
    loss_csv, reconstruct_inr_tv, reconstruct_sdeit, reconstruct_tv, ReconConfig, ReconResult,
    TvBaselineConfig,
};
use eit_core::study::{residual_power, SimulatedCase};
use eit_core::GuidanceError;

const DESK_LIMIT_S: f64 = 15.0 * 60.0;

struct Counting {
    inner: StubProvider,
    calls: usize,
}

impl GuidanceProvider for Counting {
    fn guide(&mut self, req: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        self.calls += 1;
        self.inner.guide(req)
    }

    fn provider_id(&self) -> String {
        self.inner.provider_id()
    }
}

#[derive(Default)]
struct Ledger {
    failed: Vec<String>,
}

impl Ledger {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(name.to_string());
        }
    }
}

struct Outcome {
    secs: f64,
    data: f64,
    mssim: f64,
}

fn score(case: &SimulatedCase, r: &ReconResult, secs: f64) -> Outcome {
    let data = residual_power(&case.inverse_mesh, &case.noisy, &r.sigma_meas, DEFAULT_CONTACT_IMPEDANCE).unwrap();
    let mssim = evaluate_metrics(&r.sigma_grid, &case.truth, &MetricsConfig::default())
        .unwrap()
        .mssim;
    Outcome { secs, data, mssim }
}

fn forward_physics(l: &mut Ledger) {
    let mesh = disk(2000);
    let sigma = random_field(mesh.n_nodes(), 1);
    let recip = reciprocity_error(&mesh, &sigma, 50, 2);
    let (ground, secs) = grounding_and_timing(&mesh, &sigma);
    l.check(
        "forward-physics",
        recip <= 1e-8 && ground <= 1e-10 && secs <= 1.0,
        format!(
            "{} elements, reciprocity {recip:.2e} (<= 1e-8), grounding {ground:.2e} (<= 1e-10), frame {secs:.3}s (<= 1s)",
            mesh.n_elements()
        ),
    );
}

fn jacobian(l: &mut Ledger) {
    let mesh = disk(300);
    let sigma = random_field(mesh.n_nodes(), 3);
    let t = Instant::now();
    let err = jacobian_fd_error(&mesh, &sigma, 20, 4);
    let secs = t.elapsed().as_secs_f64();
    l.check(
        "jacobian",
        err <= 1e-4 && secs <= 30.0,
        format!("{} elements, 20 entries, max rel err {err:.2e} (<= 1e-4), {secs:.2}s (<= 30s)", mesh.n_elements()),
    );
}

fn end_to_end(l: &mut Ledger) {
    let (err, [data, tv, ssim]) = end_to_end_fd_error(20, 3);
    let active = data > 0.0 && tv > 0.0 && ssim > 0.0;
    l.check(
        "end-to-end-gradient",
        active && err <= 1e-3,
        format!("20 params, max rel err {err:.2e} (<= 1e-3), terms data {data:.2e} tv {tv:.2e} ssim {ssim:.2e}"),
    );
}

fn regularizers(l: &mut Ledger) {
    let tv = tv_fd_error(&disk(300), 12, 5);
    let ssim = ssim_fd_error(12, 8);
    l.check(
        "regularizer-gradients",
        tv <= 1e-4 && ssim <= 1e-4,
        format!("12 coords each, tv {tv:.2e}, ssim {ssim:.2e} (<= 1e-4)"),
    );
}

fn metric_oracles(l: &mut Ledger) {
    let err = mssim_reference_error(10, 77);
    let mut r = rng(3);
    let t = random_image(32, 32, &mut r);
    let m = evaluate_metrics(&t, &t, &MetricsConfig::default()).unwrap();
    let identity = (m.mse, m.psnr, m.cc, m.mssim) == (0.0, f64::INFINITY, 1.0, 1.0);
    l.check(
        "metric-oracles",
        err <= 1e-6 && identity,
        format!(
            "10 pairs, mssim deviation {err:.2e} (<= 1e-6), identity (mse {}, psnr {}, cc {}, mssim {})",
            m.mse, m.psnr, m.cc, m.mssim
        ),
    );
}

fn noise(l: &mut Ledger) {
    let frame = synthetic_frame(&disk(300), 2);
    let mut ok = frame.voltages.len() == 256;
    let mut parts = Vec::new();
    for target in [60.0, 50.0, 40.0] {
        let got = mean_realized_snr(&frame, target, 100);
        ok &= (got - target).abs() <= 0.5;
        parts.push(format!("{target} dB -> {got:.3}"));
    }
    l.check(
        "noise-injection",
        ok,
        format!("{} measurements, 100 seeds, {} (+-0.5 dB)", frame.voltages.len(), parts.join(", ")),
    );
}

fn desk_study(l: &mut Ledger) {
    let cfg = ReconConfig::default();
    let case = SimulatedCase::thorax(60.0, 7, DEFAULT_CONTACT_IMPEDANCE, cfg.grid_width).unwrap();
    println!(
        "desk study: forward {} elements, inverse {} elements, noise power {:.4e} mV^2",
        case.forward_mesh.n_elements(),
        case.inverse_mesh.n_elements(),
        case.noise_power
    );

    let t = Instant::now();
    let tv = reconstruct_tv(&case.inverse_mesh, &case.noisy, &TvBaselineConfig::default()).unwrap();
    let tv = score(&case, &tv, t.elapsed().as_secs_f64());

    let t = Instant::now();
    let inr = reconstruct_inr_tv(&case.inverse_mesh, &case.noisy, &cfg).unwrap();
    let inr = score(&case, &inr, t.elapsed().as_secs_f64());

    let mut counting = Counting {
        inner: StubProvider::default(),
        calls: 0,
    };
    let t = Instant::now();
    let first = reconstruct_sdeit(&case.inverse_mesh, &case.noisy, &cfg, &mut counting).unwrap();
    let sd = score(&case, &first, t.elapsed().as_secs_f64());

    for (name, o) in [("tv", &tv), ("inr-tv", &inr), ("sdeit", &sd)] {
        let ratio = o.data / case.noise_power;
        l.check(
            &format!("desk-{name}"),
            o.secs <= DESK_LIMIT_S && ratio <= 2.0,
            format!(
                "{:.1}s (<= 900s), data {:.4e} = {ratio:.2} x noise (<= 2), mssim {:.4}",
                o.secs, o.data, o.mssim
            ),
        );
    }
    let upper = sd.mssim >= inr.mssim - 0.01;
    let lower = inr.mssim - 0.01 >= tv.mssim - 0.02;
    l.check(
        "desk-ordering",
        upper && lower,
        format!(
            "sdeit {:.4} >= inr-tv - 0.01 = {:.4}: {upper}; inr-tv - 0.01 = {:.4} >= tv - 0.02 = {:.4}: {lower}",
            sd.mssim,
            inr.mssim - 0.01,
            inr.mssim - 0.01,
            tv.mssim - 0.02
        ),
    );

    let expected = cfg.n_total - cfg.n_pre;
    l.check(
        "cadence",
        counting.calls == 400 && expected == 400 && first.provider_calls == 400,
        format!(
            "provider invoked {} times (reported {}), N - N0 = {expected} (== 400)",
            counting.calls, first.provider_calls
        ),
    );

    let second = reconstruct_sdeit(&case.inverse_mesh, &case.noisy, &cfg, &mut StubProvider::default()).unwrap();
    let (a, b) = (loss_csv(&first.loss_history), loss_csv(&second.loss_history));
    l.check(
        "determinism",
        a == b,
        format!("two seeded sdeit runs, {} csv bytes, identical: {}", a.len(), a == b),
    );
}

#[test]
fn acceptance() {
    let mut l = Ledger::default();
    forward_physics(&mut l);
    jacobian(&mut l);
    end_to_end(&mut l);
    regularizers(&mut l);
    metric_oracles(&mut l);
    noise(&mut l);
    desk_study(&mut l);
    assert!(l.failed.is_empty(), "failed: {}", l.failed.join(", "));
}
