//! Image-quality scores of a reconstruction against ground truth.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{EitError, Result};
use crate::grid::GridImage;
use crate::regularizers::{mssim, SsimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    /// Peak value for PSNR; the maximum of the truth when absent.
    pub max_i: Option<f64>,
    /// Restrict every score to pixels inside the truth mask.
    pub masked: bool,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        let s = SsimConfig::default();
        MetricsConfig {
            window: s.window,
            k1: s.k1,
            k2: s.k2,
            max_i: None,
            masked: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mssim: f64,
    /// `inf` when the images are identical.
    #[serde(serialize_with = "ser_psnr", deserialize_with = "de_psnr")]
    pub psnr: f64,
    pub mse: f64,
    pub cc: f64,
    pub width: usize,
    pub height: usize,
    pub window: usize,
    pub masked: bool,
}

fn ser_psnr<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

fn de_psnr<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Psnr {
        Num(f64),
        Text(String),
    }
    match Psnr::deserialize(d)? {
        Psnr::Num(v) => Ok(v),
        Psnr::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Psnr::Text(t) => Err(serde::de::Error::custom(format!("invalid psnr {t:?}"))),
    }
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "case,mssim,cc,psnr,mse";

    pub fn csv_row(&self, case: &str) -> String {
        let psnr = if self.psnr.is_finite() {
            format!("{}", self.psnr)
        } else {
            "inf".into()
        };
        format!("{case},{},{},{psnr},{}", self.mssim, self.cc, self.mse)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// MSE, PSNR (peak = max of truth), Pearson correlation and mean SSIM with
/// `L` = range of the truth.
pub fn evaluate_metrics(
    recon: &GridImage,
    truth: &GridImage,
    cfg: &MetricsConfig,
) -> Result<MetricsReport> {
    if !recon.same_shape(truth) {
        return Err(EitError::Dimension(format!(
            "reconstruction is {}x{}, truth {}x{}",
            recon.height, recon.width, truth.height, truth.width
        )));
    }
    let idx: Vec<usize> = (0..truth.len())
        .filter(|&i| !cfg.masked || truth.mask[i])
        .collect();
    if idx.is_empty() {
        return Err(EitError::Dimension("no pixels to compare".into()));
    }
    let n = idx.len() as f64;
    let mse = idx
        .iter()
        .map(|&i| (recon.values[i] - truth.values[i]).powi(2))
        .sum::<f64>()
        / n;
    let (t_lo, t_hi) = idx
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            (lo.min(truth.values[i]), hi.max(truth.values[i]))
        });
    let max_i = cfg.max_i.unwrap_or(t_hi);
    let psnr = if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_i * max_i / mse).log10()
    };

    let mr = idx.iter().map(|&i| recon.values[i]).sum::<f64>() / n;
    let mt = idx.iter().map(|&i| truth.values[i]).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &i in &idx {
        let (a, b) = (recon.values[i] - mr, truth.values[i] - mt);
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    if !(t_hi > t_lo) {
        return Err(EitError::invariant(
            "truth",
            "constant image; correlation is undefined",
        ));
    }
    let cc = if sxx == 0.0 {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    };

    let ssim_cfg = SsimConfig {
        window: cfg.window,
        k1: cfg.k1,
        k2: cfg.k2,
        data_range: t_hi - t_lo,
        masked: cfg.masked,
    };
    // Masked SSIM keys windows on the mask of its first argument.
    let mut r = recon.clone();
    r.mask = truth.mask.clone();
    let s = mssim(&r, truth, &ssim_cfg)?;
    Ok(MetricsReport {
        mssim: s,
        psnr,
        mse,
        cc,
        width: truth.width,
        height: truth.height,
        window: cfg.window,
        masked: cfg.masked,
    })
}
