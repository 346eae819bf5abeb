//! Raster images over the normalized square and the coordinate sets the
//! neural field is evaluated on.

use serde::{Deserialize, Serialize};

use crate::error::{EitError, Result};

/// Where a set of normalized coordinates came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum CoordSource {
    FeNodes,
    Grid { width: usize, height: usize },
}

/// Points inside `[-1, 1]^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedCoords {
    pub points: Vec<[f64; 2]>,
    pub source: CoordSource,
}

impl NormalizedCoords {
    /// Pixel centres of a `width x height` lattice, row-major, row 0 at the
    /// top (`y = +1` side).
    pub fn grid(width: usize, height: usize) -> Self {
        let mut points = Vec::with_capacity(width * height);
        for row in 0..height {
            let y = pixel_center_y(row, height);
            for col in 0..width {
                points.push([pixel_center_x(col, width), y]);
            }
        }
        NormalizedCoords {
            points,
            source: CoordSource::Grid { width, height },
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub(crate) fn pixel_center_x(col: usize, width: usize) -> f64 {
    -1.0 + (2.0 * col as f64 + 1.0) / width as f64
}

pub(crate) fn pixel_center_y(row: usize, height: usize) -> f64 {
    1.0 - (2.0 * row as f64 + 1.0) / height as f64
}

/// A scalar raster over `[-1, 1]^2`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    /// `true` where the pixel centre lies inside the measurement domain.
    pub mask: Vec<bool>,
    /// Physical `(lo, hi)` range recorded when the image was normalized.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<(f64, f64)>,
}

impl GridImage {
    /// An image with every pixel inside the domain.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        let mask = vec![true; values.len()];
        Self::with_mask(width, height, values, mask)
    }

    pub fn with_mask(
        width: usize,
        height: usize,
        values: Vec<f64>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        let img = GridImage {
            width,
            height,
            values,
            mask,
            range: None,
        };
        img.validate()?;
        Ok(img)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        GridImage {
            width,
            height,
            values: vec![value; width * height],
            mask: vec![true; width * height],
            range: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.width * self.height;
        if self.values.len() != n {
            return Err(EitError::invariant(
                "image.values",
                format!(
                    "length {} != {}x{}",
                    self.values.len(),
                    self.width,
                    self.height
                ),
            ));
        }
        if self.mask.len() != n {
            return Err(EitError::invariant(
                "image.mask",
                format!(
                    "length {} != {}x{}",
                    self.mask.len(),
                    self.width,
                    self.height
                ),
            ));
        }
        if let Some((lo, hi)) = self.range {
            if !(lo <= hi) {
                return Err(EitError::invariant(
                    "image.range",
                    format!("lo {lo} > hi {hi}"),
                ));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_shape(&self, other: &GridImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Replace every pixel outside the domain mask with `fill`.
    pub fn masked_fill(&self, fill: f64) -> GridImage {
        let values = self
            .values
            .iter()
            .zip(&self.mask)
            .map(|(&v, &inside)| if inside { v } else { fill })
            .collect();
        GridImage {
            values,
            ..self.clone()
        }
    }

    pub fn with_values(&self, values: Vec<f64>) -> GridImage {
        debug_assert_eq!(values.len(), self.values.len());
        GridImage {
            values,
            ..self.clone()
        }
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EitError::io(path, e))?;
        let img: GridImage = serde_json::from_str(&text)
            .map_err(|e| EitError::Parse(format!("{}: {e}", path.display())))?;
        img.validate()?;
        Ok(img)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| EitError::Parse(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| EitError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_coords_are_row_major_and_inside_square() {
        let g = NormalizedCoords::grid(4, 3);
        assert_eq!(g.len(), 12);
        assert_eq!(g.points[0], [-0.75, 1.0 - 1.0 / 3.0]);
        assert_eq!(g.points[1][1], g.points[0][1]);
        assert!(g
            .points
            .iter()
            .all(|p| p[0].abs() <= 1.0 && p[1].abs() <= 1.0));
        assert!(g.points[4][1] < g.points[0][1]);
    }

    #[test]
    fn rejects_bad_lengths() {
        assert!(GridImage::new(3, 3, vec![0.0; 8]).is_err());
        assert!(GridImage::with_mask(2, 2, vec![0.0; 4], vec![true; 3]).is_err());
    }
}
