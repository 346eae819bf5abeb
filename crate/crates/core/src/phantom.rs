//! Analytic conductivity phantoms.

use serde::{Deserialize, Serialize};

use crate::grid::{GridImage, NormalizedCoords};
use crate::mesh::Mesh;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Inclusion {
    Ellipse {
        center: [f64; 2],
        semi_axes: [f64; 2],
        /// Rotation in radians, counter-clockwise.
        angle: f64,
        sigma: f64,
    },
    Circle {
        center: [f64; 2],
        radius: f64,
        sigma: f64,
    },
}

impl Inclusion {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match *self {
            Inclusion::Ellipse {
                center,
                semi_axes,
                angle,
                ..
            } => {
                let (dx, dy) = (p[0] - center[0], p[1] - center[1]);
                let (c, s) = (angle.cos(), angle.sin());
                let u = (c * dx + s * dy) / semi_axes[0];
                let v = (-s * dx + c * dy) / semi_axes[1];
                u * u + v * v <= 1.0
            }
            Inclusion::Circle { center, radius, .. } => {
                (p[0] - center[0]).hypot(p[1] - center[1]) <= radius
            }
        }
    }

    pub fn sigma(&self) -> f64 {
        match *self {
            Inclusion::Ellipse { sigma, .. } | Inclusion::Circle { sigma, .. } => sigma,
        }
    }
}

/// Piecewise-constant conductivity: a background with non-overlapping
/// inclusions. Coordinates in cm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phantom {
    pub background: f64,
    pub inclusions: Vec<Inclusion>,
}

impl Phantom {
    /// Heart-and-lungs disk phantom for a 14 cm disk: two elliptic lungs at
    /// 0.25 mS/cm, a circular heart at 1.5 mS/cm, background 1 mS/cm.
    pub fn heart_and_lungs() -> Self {
        Phantom {
            background: 1.0,
            inclusions: vec![
                Inclusion::Ellipse {
                    center: [-5.5, 2.0],
                    semi_axes: [3.0, 5.0],
                    angle: 0.0,
                    sigma: 0.25,
                },
                Inclusion::Ellipse {
                    center: [5.5, 2.0],
                    semi_axes: [3.0, 5.0],
                    angle: 0.0,
                    sigma: 0.25,
                },
                Inclusion::Circle {
                    center: [0.0, -4.5],
                    radius: 3.0,
                    sigma: 1.5,
                },
            ],
        }
    }

    pub fn value_at(&self, p: [f64; 2]) -> f64 {
        self.inclusions
            .iter()
            .find(|inc| inc.contains(p))
            .map_or(self.background, Inclusion::sigma)
    }

    /// Nodal conductivity on a mesh.
    pub fn nodal_field(&self, mesh: &Mesh) -> Vec<f64> {
        mesh.nodes().iter().map(|&p| self.value_at(p)).collect()
    }

    /// Ground-truth raster: the phantom sampled at pixel centres inside the
    /// mesh domain, `background` outside.
    pub fn raster(&self, mesh: &Mesh, width: usize, height: usize) -> crate::Result<GridImage> {
        let mask = crate::mesh::domain_mask(mesh, width, height)?;
        let norm = mesh.normalization();
        let values = NormalizedCoords::grid(width, height)
            .points
            .iter()
            .zip(&mask)
            .map(|(&q, &inside)| {
                if inside {
                    self.value_at(norm.to_physical(q))
                } else {
                    self.background
                }
            })
            .collect();
        GridImage::with_mask(width, height, values, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{make_disk_mesh, rasterize_field};

    #[test]
    fn levels_and_membership() {
        let ph = Phantom::heart_and_lungs();
        assert_eq!(ph.value_at([0.0, 10.0]), 1.0);
        assert_eq!(ph.value_at([-5.5, 2.0]), 0.25);
        assert_eq!(ph.value_at([0.0, -4.5]), 1.5);
    }

    #[test]
    fn rasterized_phantom_has_three_dominant_levels() {
        let ph = Phantom::heart_and_lungs();
        let mesh = make_disk_mesh(14.0, 16, 2.5, 11424).unwrap();
        let img = rasterize_field(&mesh, &ph.nodal_field(&mesh), 128, 128, 1.0).unwrap();
        // Expected pixel counts per region from the analytic geometry: each
        // pixel is (28/128)^2 cm^2.
        let pix = (28.0f64 / 128.0).powi(2);
        let lungs = 2.0 * std::f64::consts::PI * 3.0 * 5.0 / pix;
        let heart = std::f64::consts::PI * 9.0 / pix;
        let count_near = |level: f64| {
            img.values
                .iter()
                .zip(&img.mask)
                .filter(|(v, &m)| m && (**v - level).abs() < 0.02)
                .count() as f64
        };
        let inside = img.mask.iter().filter(|&&m| m).count() as f64;
        assert!(
            (count_near(0.25) - lungs).abs() / lungs < 0.15,
            "{} vs {lungs}",
            count_near(0.25)
        );
        assert!(
            (count_near(1.5) - heart).abs() / heart < 0.2,
            "{} vs {heart}",
            count_near(1.5)
        );
        let bg = inside - lungs - heart;
        assert!((count_near(1.0) - bg).abs() / bg < 0.1);
    }
}
