mod common;

use common::*;
use eit_core::fem::adjacent_patterns;
use eit_core::metrics::{evaluate_metrics, MetricsConfig, MetricsReport};
use eit_core::regularizers::{ssim_loss_grad, SsimConfig};

#[test]
fn tv_gradient_matches_finite_differences() {
    let err = tv_fd_error(&disk(300), 12, 5);
    assert!(err <= 1e-4, "tv relative error {err:e}");
}

#[test]
fn ssim_loss_gradient_matches_finite_differences() {
    let err = ssim_fd_error(20, 8);
    assert!(err <= 1e-4, "ssim relative error {err:e}");
}

#[test]
fn mssim_agrees_with_reference() {
    let err = mssim_reference_error(10, 77);
    assert!(err <= 1e-6, "mssim deviation {err:e}");
}

#[test]
fn ssim_loss_stays_in_range_and_vanishes_at_identity() {
    let cfg = SsimConfig::default();
    let mut r = rng(1);
    for _ in 0..20 {
        let x = random_image(16, 16, &mut r);
        let y = random_image(16, 16, &mut r);
        let (l, _) = ssim_loss_grad(&x, &y, &cfg).unwrap();
        assert!((0.0..=2.0).contains(&l));
        let (l0, g0) = ssim_loss_grad(&x, &x, &cfg).unwrap();
        assert!(l0.abs() < 1e-12 && g0.iter().all(|g| g.abs() < 1e-12));
    }
}

#[test]
fn metric_identity_signature() {
    let mut r = rng(3);
    let t = random_image(32, 32, &mut r);
    let m = evaluate_metrics(&t, &t, &MetricsConfig::default()).unwrap();
    assert_eq!((m.mse, m.psnr, m.cc, m.mssim), (0.0, f64::INFINITY, 1.0, 1.0));
    assert!(m.to_json().contains("\"psnr\": \"inf\""));
    assert_eq!(MetricsReport::CSV_HEADER, "case,mssim,cc,psnr,mse");
}

#[test]
fn realized_snr_matches_target() {
    let frame = synthetic_frame(&disk(300), 2);
    assert_eq!(frame.voltages.len(), adjacent_patterns(16, 1.0, false).unwrap().n_measurements());
    for target in [60.0, 50.0, 40.0] {
        let got = mean_realized_snr(&frame, target, 100);
        assert!((got - target).abs() <= 0.5, "target {target} dB, realized {got:.3} dB");
    }
}
