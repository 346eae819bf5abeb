//! PNG rendering of grid images with a fixed colormap.

use std::path::Path;

use eit_core::grid::GridImage;
use image::{Rgb, RgbImage};

use crate::error::{io_err, CliError, CliResult, Kind};

/// Colour of pixels outside the domain mask.
const OUTSIDE: Rgb<u8> = Rgb([255, 255, 255]);

/// Value range used for the colour scale: the extremes inside the mask.
pub fn default_range(img: &GridImage) -> (f64, f64) {
    img.values
        .iter()
        .zip(&img.mask)
        .filter(|(_, &m)| m)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| {
            (lo.min(v), hi.max(v))
        })
}

/// Map `img` through viridis over `[lo, hi]`, clamping outside values.
pub fn colorize(img: &GridImage, (lo, hi): (f64, f64)) -> CliResult<RgbImage> {
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(CliError::new(
            Kind::Invariant,
            format!("render range [{lo}, {hi}] is not a finite interval"),
        ));
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let map = colorous::VIRIDIS;
    Ok(RgbImage::from_fn(
        img.width as u32,
        img.height as u32,
        |x, y| {
            let k = y as usize * img.width + x as usize;
            if !img.mask[k] {
                return OUTSIDE;
            }
            let t = ((img.values[k] - lo) / span).clamp(0.0, 1.0);
            let c = map.eval_continuous(t);
            Rgb([c.r, c.g, c.b])
        },
    ))
}

pub fn save_png(img: &GridImage, range: (f64, f64), path: &Path) -> CliResult<()> {
    colorize(img, range)?.save(path).map_err(|e| io_err(path, e))
}
