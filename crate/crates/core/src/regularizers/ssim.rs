use serde::{Deserialize, Serialize};

use crate::error::{EitError, Result};
use crate::grid::GridImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range `L`.
    pub data_range: f64,
    /// Only average windows whose center pixel lies in the mask of `x`.
    #[serde(default)]
    pub masked: bool,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            window: 7,
            k1: 0.01,
            k2: 0.03,
            data_range: 1.0,
            masked: false,
        }
    }
}

impl SsimConfig {
    pub fn with_range(self, data_range: f64) -> Self {
        SsimConfig { data_range, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(EitError::invariant(
                "ssim config",
                format!("window must be odd and >= 3, got {}", self.window),
            ));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.data_range > 0.0) {
            return Err(EitError::invariant(
                "ssim config",
                "k1, k2 and L must be positive",
            ));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.data_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.data_range).powi(2)
    }
}

/// Sums over every `w x w` window, stride 1; output is `(h-w+1) x (w'-w+1)`.
fn box_valid(v: &[f64], h: usize, wd: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h - w + 1, wd - w + 1);
    let mut rows = vec![0.0; oh * wd];
    for j in 0..wd {
        for i in 0..oh {
            rows[i * wd + j] = (i..i + w).map(|r| v[r * wd + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = rows[i * wd + j..i * wd + j + w].iter().sum();
        }
    }
    out
}

/// Adjoint of [`box_valid`]: each pixel gathers the windows covering it.
fn box_full(v: &[f64], h: usize, wd: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (h - w + 1, wd - w + 1);
    let mut rows = vec![0.0; h * ow];
    for j in 0..ow {
        for i in 0..h {
            let lo = (i + 1).saturating_sub(w);
            let hi = i.min(oh - 1);
            rows[i * ow + j] = (lo..=hi).map(|r| v[r * ow + j]).sum();
        }
    }
    let mut out = vec![0.0; h * wd];
    for i in 0..h {
        for j in 0..wd {
            let lo = (j + 1).saturating_sub(w);
            let hi = j.min(ow - 1);
            out[i * wd + j] = rows[i * ow + lo..=i * ow + hi].iter().sum();
        }
    }
    out
}

struct Windows {
    mux: Vec<f64>,
    muy: Vec<f64>,
    vx: Vec<f64>,
    vy: Vec<f64>,
    cxy: Vec<f64>,
    active: Vec<bool>,
    oh: usize,
    ow: usize,
}

fn windows(x: &GridImage, y: &GridImage, cfg: &SsimConfig) -> Result<Windows> {
    cfg.validate()?;
    if !x.same_shape(y) {
        return Err(EitError::Dimension(format!(
            "images are {}x{} and {}x{}",
            x.height, x.width, y.height, y.width
        )));
    }
    let (h, wd, w) = (x.height, x.width, cfg.window);
    if h < w || wd < w {
        return Err(EitError::Dimension(format!(
            "{h}x{wd} image is smaller than the {w}x{w} window"
        )));
    }
    let n = (w * w) as f64;
    let xx: Vec<f64> = x.values.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.values.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.values.iter().zip(&y.values).map(|(a, b)| a * b).collect();
    let sx = box_valid(&x.values, h, wd, w);
    let sy = box_valid(&y.values, h, wd, w);
    let sxx = box_valid(&xx, h, wd, w);
    let syy = box_valid(&yy, h, wd, w);
    let sxy = box_valid(&xy, h, wd, w);
    let (oh, ow) = (h - w + 1, wd - w + 1);
    let mut out = Windows {
        mux: Vec::with_capacity(oh * ow),
        muy: Vec::with_capacity(oh * ow),
        vx: Vec::with_capacity(oh * ow),
        vy: Vec::with_capacity(oh * ow),
        cxy: Vec::with_capacity(oh * ow),
        active: Vec::with_capacity(oh * ow),
        oh,
        ow,
    };
    let r = w / 2;
    for i in 0..oh {
        for j in 0..ow {
            let k = i * ow + j;
            let (mx, my) = (sx[k] / n, sy[k] / n);
            out.mux.push(mx);
            out.muy.push(my);
            out.vx.push(sxx[k] / n - mx * mx);
            out.vy.push(syy[k] / n - my * my);
            out.cxy.push(sxy[k] / n - mx * my);
            out.active.push(!cfg.masked || x.mask[(i + r) * wd + j + r]);
        }
    }
    if !out.active.iter().any(|&a| a) {
        return Err(EitError::Dimension(
            "no window center lies inside the mask".into(),
        ));
    }
    Ok(out)
}

/// Mean SSIM over all stride-1 windows with uniform weights.
pub fn mssim(x: &GridImage, y: &GridImage, cfg: &SsimConfig) -> Result<f64> {
    let w = windows(x, y, cfg)?;
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in 0..w.oh * w.ow {
        if !w.active[k] {
            continue;
        }
        let a1 = 2.0 * w.mux[k] * w.muy[k] + c1;
        let a2 = 2.0 * w.cxy[k] + c2;
        let b1 = w.mux[k].powi(2) + w.muy[k].powi(2) + c1;
        let b2 = w.vx[k] + w.vy[k] + c2;
        sum += a1 * a2 / (b1 * b2);
        count += 1;
    }
    Ok(sum / count as f64)
}

/// `1 - mssim(x, y)` and its gradient with respect to `x`; `y` is constant.
pub fn ssim_loss_grad(x: &GridImage, y: &GridImage, cfg: &SsimConfig) -> Result<(f64, Vec<f64>)> {
    let w = windows(x, y, cfg)?;
    let (c1, c2) = (cfg.c1(), cfg.c2());
    let nw = w.oh * w.ow;
    let m = w.active.iter().filter(|&&a| a).count() as f64;
    let n = (cfg.window * cfg.window) as f64;
    let (mut alpha, mut beta, mut gamma) = (vec![0.0; nw], vec![0.0; nw], vec![0.0; nw]);
    let mut sum = 0.0;
    for k in 0..nw {
        if !w.active[k] {
            continue;
        }
        let (mx, my) = (w.mux[k], w.muy[k]);
        let a1 = 2.0 * mx * my + c1;
        let a2 = 2.0 * w.cxy[k] + c2;
        let b1 = mx * mx + my * my + c1;
        let b2 = w.vx[k] + w.vy[k] + c2;
        let s = a1 * a2 / (b1 * b2);
        sum += s;
        let d_mu = 2.0 * my * a2 / (b1 * b2) - s * 2.0 * mx / b1;
        let d_cov = 2.0 * a1 / (b1 * b2);
        let d_var = -s / b2;
        // dS/dx_p = (alpha + beta x_p + gamma y_p) / N, negated and averaged.
        let c = -1.0 / (m * n);
        alpha[k] = c * (d_mu - 2.0 * mx * d_var - my * d_cov);
        beta[k] = c * 2.0 * d_var;
        gamma[k] = c * d_cov;
    }
    let (h, wd, win) = (x.height, x.width, cfg.window);
    let fa = box_full(&alpha, h, wd, win);
    let fb = box_full(&beta, h, wd, win);
    let fg = box_full(&gamma, h, wd, win);
    let grad = (0..h * wd)
        .map(|p| fa[p] + fb[p] * x.values[p] + fg[p] * y.values[p])
        .collect();
    Ok((1.0 - sum / m, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> GridImage {
        GridImage::new(w, h, (0..h * w).map(|k| f(k / w, k % w)).collect()).unwrap()
    }

    #[test]
    fn box_full_is_adjoint_of_box_valid() {
        let (h, w, k) = (9, 11, 3);
        let a: Vec<f64> = (0..h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..(h - k + 1) * (w - k + 1))
            .map(|i| (i as f64 * 0.11).cos())
            .collect();
        let lhs: f64 = box_valid(&a, h, w, k)
            .iter()
            .zip(&b)
            .map(|(x, y)| x * y)
            .sum();
        let rhs: f64 = box_full(&b, h, w, k)
            .iter()
            .zip(&a)
            .map(|(x, y)| x * y)
            .sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn identity_and_symmetry() {
        let cfg = SsimConfig::default();
        let x = img(20, 24, |i, j| ((i * j) as f64 * 0.1).sin().abs());
        let y = img(20, 24, |i, j| ((i + 2 * j) as f64 * 0.2).cos().abs());
        assert!((mssim(&x, &x, &cfg).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(mssim(&x, &y, &cfg).unwrap(), mssim(&y, &x, &cfg).unwrap());
        let (l, g) = ssim_loss_grad(&x, &x, &cfg).unwrap();
        assert!(l.abs() < 1e-12);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn rejects_bad_shapes() {
        let cfg = SsimConfig::default();
        assert!(mssim(&img(8, 8, |_, _| 0.0), &img(8, 9, |_, _| 0.0), &cfg).is_err());
        assert!(mssim(&img(5, 8, |_, _| 0.0), &img(5, 8, |_, _| 0.0), &cfg).is_err());
        assert!(SsimConfig { window: 6, ..cfg }.validate().is_err());
    }
}
