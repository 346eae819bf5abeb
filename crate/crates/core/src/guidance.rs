//! Guidance images: normalization of conductivity rasters, the provider
//! interface, a deterministic in-process stub and an HTTP client.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::GuidanceError;
use crate::grid::GridImage;

/// Prompt used when none is configured.
pub const PROMPT_BASIC: &str = "Shapes. Clean background. Simple form.";
/// Prompt that also names the shapes and their positions.
pub const PROMPT_FULL: &str =
    "Shapes. The one at the upper right is a triangle. The one at the lower left is a rectangle. Clean background. Simple form.";

pub fn prompt_preset(name: &str) -> Option<&'static str> {
    match name {
        "basic" => Some(PROMPT_BASIC),
        "full" => Some(PROMPT_FULL),
        _ => None,
    }
}

/// Map `[min, max]` affinely onto `[0, 1]`. A flat raster maps to 0.5.
pub fn normalize_image(raster: &GridImage) -> (GridImage, f64, f64) {
    let (lo, hi) = raster.min_max();
    if !(hi - lo >= 1e-12) {
        let v = raster.values.first().copied().unwrap_or(0.0);
        let mut out = raster.with_values(vec![0.5; raster.len()]);
        out.range = Some((v, v));
        return (out, v, v);
    }
    let span = hi - lo;
    let mut out = raster.with_values(raster.values.iter().map(|v| (v - lo) / span).collect());
    out.range = Some((lo, hi));
    (out, lo, hi)
}

/// Inverse of [`normalize_image`].
pub fn denormalize_image(image: &GridImage, lo: f64, hi: f64) -> GridImage {
    let mut out = image.with_values(image.values.iter().map(|v| lo + v * (hi - lo)).collect());
    out.range = None;
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceRequest {
    pub image: GridImage,
    pub prompt: String,
    pub strength: f64,
    pub steps: u32,
    pub guidance_scale: f64,
    pub seed: u64,
}

impl GuidanceRequest {
    pub fn validate(&self) -> Result<(), GuidanceError> {
        if !(0.0..=1.0).contains(&self.strength) {
            return Err(GuidanceError::Request(format!(
                "strength {} outside [0, 1]",
                self.strength
            )));
        }
        if self.steps < 1 {
            return Err(GuidanceError::Request("steps must be at least 1".into()));
        }
        if !(self.guidance_scale >= 0.0) {
            return Err(GuidanceError::Request(format!(
                "guidance scale {} is negative",
                self.guidance_scale
            )));
        }
        if self.image.validate().is_err() {
            return Err(GuidanceError::Request("image shape is inconsistent".into()));
        }
        if let Some(v) = self.image.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(GuidanceError::Request(format!("pixel {v} outside [0, 1]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceResponse {
    pub image: GridImage,
    pub provider_id: String,
    pub elapsed: f64,
}

/// Anything that turns a normalized raster into a guidance image.
pub trait GuidanceProvider {
    fn guide(&mut self, req: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError>;
    fn provider_id(&self) -> String;
}

pub const STUB_LEVELS: usize = 3;
pub const STUB_BLUR_SIGMA: f64 = 2.0;

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let mut sum = 0.0;
    for w in &raw {
        sum += w;
    }
    raw.iter().map(|w| w / sum).collect()
}

/// Separable blur with replicated edges: rows first, then columns.
fn gaussian_blur(values: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; values.len()];
    for i in 0..height {
        for j in 0..width {
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                acc += w * values[i * width + clamp(j as i64 + t as i64 - r, width)];
            }
            tmp[i * width + j] = acc;
        }
    }
    let mut out = vec![0.0; values.len()];
    for i in 0..height {
        for j in 0..width {
            let mut acc = 0.0;
            for (t, w) in k.iter().enumerate() {
                acc += w * tmp[clamp(i as i64 + t as i64 - r, height) * width + j];
            }
            out[i * width + j] = acc;
        }
    }
    out
}

/// Replace each value by the mean of its quantile bin.
fn quantize(values: &[f64], levels: usize) -> Vec<f64> {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let thresholds: Vec<f64> = (1..levels).map(|k| sorted[k * n / levels]).collect();
    let bin = |v: f64| thresholds.iter().filter(|&&t| v >= t).count();
    let mut sums = vec![0.0; levels];
    let mut counts = vec![0usize; levels];
    for &v in values {
        let b = bin(v);
        sums[b] += v;
        counts[b] += 1;
    }
    let means: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| {
            if c > 0 {
                (s / c as f64).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    values.iter().map(|&v| means[bin(v)]).collect()
}

/// Deterministic stand-in for a diffusion backend: blur with standard
/// deviation `blur_sigma * strength` pixels, then quantize to `levels`
/// quantile bins. Zero strength echoes the input.
pub fn stub_guide(
    req: &GuidanceRequest,
    levels: usize,
    blur_sigma: f64,
) -> Result<GuidanceResponse, GuidanceError> {
    let start = Instant::now();
    req.validate()?;
    if levels < 2 {
        return Err(GuidanceError::Request(format!(
            "levels must be at least 2, got {levels}"
        )));
    }
    if !(blur_sigma >= 0.0) {
        return Err(GuidanceError::Request(format!(
            "blur sigma {blur_sigma} is negative"
        )));
    }
    let img = &req.image;
    let values = if req.strength == 0.0 {
        img.values.clone()
    } else {
        let sigma = blur_sigma * req.strength;
        let blurred = if sigma > 0.0 {
            gaussian_blur(&img.values, img.width, img.height, sigma)
        } else {
            img.values.clone()
        };
        quantize(&blurred, levels)
    };
    let mut image = img.with_values(values);
    image.range = None;
    Ok(GuidanceResponse {
        image,
        provider_id: format!("stub(levels={levels},blur_sigma={blur_sigma})"),
        elapsed: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StubProvider {
    pub levels: usize,
    pub blur_sigma: f64,
}

impl Default for StubProvider {
    fn default() -> Self {
        StubProvider {
            levels: STUB_LEVELS,
            blur_sigma: STUB_BLUR_SIGMA,
        }
    }
}

impl GuidanceProvider for StubProvider {
    fn guide(&mut self, req: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        stub_guide(req, self.levels, self.blur_sigma)
    }

    fn provider_id(&self) -> String {
        format!(
            "stub(levels={},blur_sigma={})",
            self.levels, self.blur_sigma
        )
    }
}

/// Body of `POST /v1/guide`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
    pub prompt: String,
    pub strength: f64,
    pub steps: u32,
    pub guidance_scale: f64,
    pub seed: u64,
}

/// Successful reply of `POST /v1/guide`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
    pub provider_id: String,
    pub elapsed_s: f64,
}

/// Reply of `GET /v1/health`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub mode: String,
}

impl From<&GuidanceRequest> for WireRequest {
    fn from(req: &GuidanceRequest) -> Self {
        WireRequest {
            width: req.image.width,
            height: req.image.height,
            pixels: req.image.values.clone(),
            prompt: req.prompt.clone(),
            strength: req.strength,
            steps: req.steps,
            guidance_scale: req.guidance_scale,
            seed: req.seed,
        }
    }
}

impl WireRequest {
    pub fn into_request(self) -> Result<GuidanceRequest, GuidanceError> {
        if self.pixels.len() != self.width * self.height {
            return Err(GuidanceError::Request(format!(
                "{} pixels for a {}x{} image",
                self.pixels.len(),
                self.width,
                self.height
            )));
        }
        let image = GridImage::filled(self.width, self.height, 0.0).with_values(self.pixels);
        let req = GuidanceRequest {
            image,
            prompt: self.prompt,
            strength: self.strength,
            steps: self.steps,
            guidance_scale: self.guidance_scale,
            seed: self.seed,
        };
        req.validate()?;
        Ok(req)
    }
}

fn agent(timeout: f64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs_f64(timeout)))
        .http_status_as_error(false)
        .build()
        .into()
}

fn transport_error(e: ureq::Error, timeout: f64) -> GuidanceError {
    match e {
        ureq::Error::Timeout(_) => GuidanceError::Timeout(timeout),
        ureq::Error::Io(ref io) if io.kind() == std::io::ErrorKind::TimedOut => {
            GuidanceError::Timeout(timeout)
        }
        other => GuidanceError::Transport(other.to_string()),
    }
}

fn join(endpoint: &str, path: &str) -> String {
    format!("{}{}", endpoint.trim_end_matches('/'), path)
}

/// Send `req` to a guidance service and validate the reply.
pub fn remote_guide(
    endpoint: &str,
    req: &GuidanceRequest,
    timeout: f64,
) -> Result<GuidanceResponse, GuidanceError> {
    req.validate()?;
    if !(timeout > 0.0) {
        return Err(GuidanceError::Request(format!(
            "timeout {timeout} must be positive"
        )));
    }
    let start = Instant::now();
    let mut resp = agent(timeout)
        .post(&join(endpoint, "/v1/guide"))
        .send_json(WireRequest::from(req))
        .map_err(|e| transport_error(e, timeout))?;
    let status = resp.status().as_u16();
    let body = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| transport_error(e, timeout))?;
    if !(200..300).contains(&status) {
        return Err(GuidanceError::Status { status, body });
    }
    let wire: WireResponse =
        serde_json::from_str(&body).map_err(|e| GuidanceError::Malformed(e.to_string()))?;
    let img = &req.image;
    if wire.width != img.width || wire.height != img.height {
        return Err(GuidanceError::Contract(format!(
            "response is {}x{}, request was {}x{}",
            wire.width, wire.height, img.width, img.height
        )));
    }
    if wire.pixels.len() != img.len() {
        return Err(GuidanceError::Contract(format!(
            "response carries {} pixels for {}x{}",
            wire.pixels.len(),
            wire.width,
            wire.height
        )));
    }
    if let Some(v) = wire.pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(GuidanceError::Contract(format!("pixel {v} outside [0, 1]")));
    }
    let mut image = img.with_values(wire.pixels);
    image.range = None;
    log::debug!(
        "guidance from {} in {:.3} s",
        wire.provider_id,
        start.elapsed().as_secs_f64()
    );
    Ok(GuidanceResponse {
        image,
        provider_id: wire.provider_id,
        elapsed: wire.elapsed_s,
    })
}

/// Query `GET /v1/health`.
pub fn remote_health(endpoint: &str, timeout: f64) -> Result<HealthResponse, GuidanceError> {
    let mut resp = agent(timeout)
        .get(&join(endpoint, "/v1/health"))
        .call()
        .map_err(|e| transport_error(e, timeout))?;
    let status = resp.status().as_u16();
    let body = resp
        .body_mut()
        .read_to_string()
        .map_err(|e| transport_error(e, timeout))?;
    if !(200..300).contains(&status) {
        return Err(GuidanceError::Status { status, body });
    }
    serde_json::from_str(&body).map_err(|e| GuidanceError::Malformed(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteProvider {
    pub endpoint: String,
    pub timeout: f64,
}

impl GuidanceProvider for RemoteProvider {
    fn guide(&mut self, req: &GuidanceRequest) -> Result<GuidanceResponse, GuidanceError> {
        remote_guide(&self.endpoint, req, self.timeout)
    }

    fn provider_id(&self) -> String {
        format!("remote({})", self.endpoint)
    }
}
