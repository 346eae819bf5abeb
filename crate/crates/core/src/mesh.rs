//! Triangular first-order meshes with electrode boundary groups.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{EitError, Result};
use crate::grid::{pixel_center_x, pixel_center_y, CoordSource, GridImage, NormalizedCoords};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DomainKind {
    Disk,
    #[default]
    Polygon,
}

/// A 2-D P1 mesh. Coordinates are in cm; triangles are stored
/// counter-clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    electrodes: Vec<Vec<[usize; 2]>>,
    domain_kind: DomainKind,
}

#[derive(Debug, Serialize, Deserialize)]
struct MeshFile {
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    electrodes: Vec<Vec<[usize; 2]>>,
    #[serde(default = "default_units")]
    units: String,
    #[serde(default)]
    domain_kind: DomainKind,
}

fn default_units() -> String {
    "cm".to_string()
}

#[inline]
fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

fn signed_area(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
    0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
}

impl Mesh {
    /// Validate and orient a mesh. Clockwise triangles are flipped.
    pub fn new(
        nodes: Vec<[f64; 2]>,
        mut elements: Vec<[usize; 3]>,
        electrodes: Vec<Vec<[usize; 2]>>,
        domain_kind: DomainKind,
    ) -> Result<Self> {
        let n = nodes.len();
        if let Some(i) = nodes
            .iter()
            .position(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(EitError::invariant(
                format!("node {i}"),
                "non-finite coordinate",
            ));
        }
        let (lo, hi) = bbox(&nodes);
        let scale = ((hi[0] - lo[0]) * (hi[1] - lo[1]))
            .abs()
            .max(f64::MIN_POSITIVE);
        for (k, tri) in elements.iter_mut().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i >= n) {
                return Err(EitError::invariant(
                    format!("element {k}"),
                    format!("node index {bad} >= node count {n}"),
                ));
            }
            let a = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if a.abs() <= 1e-14 * scale {
                return Err(EitError::invariant(
                    format!("element {k}"),
                    "degenerate (zero-area) triangle",
                ));
            }
            if a < 0.0 {
                tri.swap(1, 2);
            }
        }

        if electrodes.len() < 2 {
            return Err(EitError::invariant(
                "electrodes",
                format!("need at least 2 electrodes, got {}", electrodes.len()),
            ));
        }
        let mut edge_count: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &elements {
            for e in 0..3 {
                *edge_count
                    .entry(edge_key(tri[e], tri[(e + 1) % 3]))
                    .or_default() += 1;
            }
        }
        let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
        for (q, group) in electrodes.iter().enumerate() {
            if group.is_empty() {
                return Err(EitError::invariant(format!("electrode {q}"), "no edges"));
            }
            for &[a, b] in group {
                let key = edge_key(a, b);
                if edge_count.get(&key) != Some(&1) {
                    return Err(EitError::invariant(
                        format!("electrode {q} edge ({a},{b})"),
                        "edge is not on the domain boundary",
                    ));
                }
                if let Some(prev) = owner.insert(key, q) {
                    return Err(EitError::invariant(
                        format!("electrode {q} edge ({a},{b})"),
                        format!(
                            "edge already belongs to electrode {prev}; electrodes must be disjoint"
                        ),
                    ));
                }
            }
        }

        Ok(Mesh {
            nodes,
            elements,
            electrodes,
            domain_kind,
        })
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn electrodes(&self) -> &[Vec<[usize; 2]>] {
        &self.electrodes
    }

    pub fn domain_kind(&self) -> DomainKind {
        self.domain_kind
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_electrodes(&self) -> usize {
        self.electrodes.len()
    }

    pub fn element_area(&self, k: usize) -> f64 {
        let [a, b, c] = self.elements[k];
        signed_area(self.nodes[a], self.nodes[b], self.nodes[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_elements()).map(|k| self.element_area(k)).sum()
    }

    /// Area and constant gradients `(dphi/dx, dphi/dy)` of the three local
    /// basis functions of element `k`.
    pub fn element_geometry(&self, k: usize) -> (f64, [[f64; 2]; 3]) {
        let [a, b, c] = self.elements[k];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        let area = signed_area(pa, pb, pc);
        let inv = 0.5 / area;
        let grads = [
            [(pb[1] - pc[1]) * inv, (pc[0] - pb[0]) * inv],
            [(pc[1] - pa[1]) * inv, (pa[0] - pc[0]) * inv],
            [(pa[1] - pb[1]) * inv, (pb[0] - pa[0]) * inv],
        ];
        (area, grads)
    }

    pub fn edge_length(&self, [a, b]: [usize; 2]) -> f64 {
        let (p, q) = (self.nodes[a], self.nodes[b]);
        (q[0] - p[0]).hypot(q[1] - p[1])
    }

    pub fn electrode_length(&self, q: usize) -> f64 {
        self.electrodes[q]
            .iter()
            .map(|&e| self.edge_length(e))
            .sum()
    }

    /// Edges used by exactly one triangle.
    pub fn boundary_edges(&self) -> Vec<[usize; 2]> {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.elements {
            for e in 0..3 {
                *count.entry(edge_key(tri[e], tri[(e + 1) % 3])).or_default() += 1;
            }
        }
        let mut out: Vec<[usize; 2]> = count
            .into_iter()
            .filter(|&(_, c)| c == 1)
            .map(|((a, b), _)| [a, b])
            .collect();
        out.sort_unstable();
        out
    }

    pub fn perimeter(&self) -> f64 {
        self.boundary_edges()
            .iter()
            .map(|&e| self.edge_length(e))
            .sum()
    }

    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        bbox(&self.nodes)
    }

    pub fn normalization(&self) -> Normalization {
        let (lo, hi) = self.bbox();
        let center = [0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])];
        let half_extent = 0.5 * (hi[0] - lo[0]).max(hi[1] - lo[1]);
        Normalization {
            center,
            half_extent,
        }
    }

    /// FE node coordinates mapped into `[-1, 1]^2`.
    pub fn normalized_nodes(&self) -> NormalizedCoords {
        let norm = self.normalization();
        NormalizedCoords {
            points: self.nodes.iter().map(|&p| norm.to_normalized(p)).collect(),
            source: CoordSource::FeNodes,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| EitError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: MeshFile =
            serde_json::from_str(text).map_err(|e| EitError::Parse(e.to_string()))?;
        if file.units != "cm" {
            return Err(EitError::Parse(format!(
                "unsupported units {:?}, expected \"cm\"",
                file.units
            )));
        }
        Mesh::new(file.nodes, file.elements, file.electrodes, file.domain_kind)
    }

    pub fn to_json(&self) -> String {
        let file = MeshFile {
            nodes: self.nodes.clone(),
            elements: self.elements.clone(),
            electrodes: self.electrodes.clone(),
            units: default_units(),
            domain_kind: self.domain_kind,
        };
        serde_json::to_string(&file).expect("mesh serialization cannot fail")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| EitError::io(path, e))
    }
}

fn bbox(nodes: &[[f64; 2]]) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in nodes {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    (lo, hi)
}

/// Isotropic map from physical coordinates to `[-1, 1]^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub center: [f64; 2],
    pub half_extent: f64,
}

impl Normalization {
    pub fn to_normalized(&self, p: [f64; 2]) -> [f64; 2] {
        [
            ((p[0] - self.center[0]) / self.half_extent).clamp(-1.0, 1.0),
            ((p[1] - self.center[1]) / self.half_extent).clamp(-1.0, 1.0),
        ]
    }

    pub fn to_physical(&self, q: [f64; 2]) -> [f64; 2] {
        [
            self.center[0] + q[0] * self.half_extent,
            self.center[1] + q[1] * self.half_extent,
        ]
    }
}

/// Angular layout of the outer ring within one electrode sector.
struct OuterSector {
    gap_edges: usize,
    electrode_edges: usize,
}

impl OuterSector {
    fn nodes(&self) -> usize {
        2 * self.gap_edges + self.electrode_edges
    }
}

/// Per-sector node count of every ring, centre excluded.
fn disk_ring_layout(rings: usize, n_electrodes: usize, coverage: f64) -> (Vec<usize>, OuterSector) {
    let mut per_sector: Vec<usize> = (1..rings)
        .map(|i| ((6 * i) as f64 / n_electrodes as f64).round().max(1.0) as usize)
        .collect();
    let k = ((6 * rings) as f64 / n_electrodes as f64).round().max(3.0);
    let outer = OuterSector {
        electrode_edges: (k * coverage).round().max(1.0) as usize,
        gap_edges: (k * (1.0 - coverage) / 2.0).round().max(1.0) as usize,
    };
    per_sector.push(outer.nodes());
    (per_sector, outer)
}

fn disk_element_count(per_sector: &[usize], n_electrodes: usize) -> usize {
    let mut count = per_sector[0] * n_electrodes;
    for w in per_sector.windows(2) {
        count += (w[0] + w[1]) * n_electrodes;
    }
    count
}

/// Triangulate the strip between two rings inside one sector. Both rings
/// carry a node on each sector boundary, so the local indices run
/// `0..=inner` and `0..=outer`.
fn zip_sector(inner_angles: &[f64], outer_angles: &[f64]) -> Vec<[(bool, usize); 3]> {
    let (a, b) = (inner_angles.len() - 1, outer_angles.len() - 1);
    let (mut i, mut j) = (0, 0);
    let mut tris = Vec::with_capacity(a + b);
    while i < a || j < b {
        let advance_inner = if i == a {
            false
        } else if j == b {
            true
        } else {
            inner_angles[i + 1] <= outer_angles[j + 1]
        };
        if advance_inner {
            tris.push([(false, i), (false, i + 1), (true, j)]);
            i += 1;
        } else {
            tris.push([(false, i), (true, j + 1), (true, j)]);
            j += 1;
        }
    }
    tris
}

/// Structured concentric-ring triangulation of a disk with `n_electrodes`
/// equispaced electrodes. Electrode `q` is centred at angle
/// `2 pi (q + 1/2) / n_electrodes`; the mesh is exactly invariant (as an
/// index permutation) under rotation by one electrode spacing.
pub fn make_disk_mesh(
    radius: f64,
    n_electrodes: usize,
    electrode_width: f64,
    target_elements: usize,
) -> Result<Mesh> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(EitError::Layout(format!(
            "radius must be positive, got {radius}"
        )));
    }
    if n_electrodes < 2 {
        return Err(EitError::Layout(format!(
            "need at least 2 electrodes, got {n_electrodes}"
        )));
    }
    if !(electrode_width > 0.0) {
        return Err(EitError::Layout(format!(
            "electrode width must be positive, got {electrode_width}"
        )));
    }
    let circumference = 2.0 * PI * radius;
    if electrode_width * n_electrodes as f64 >= circumference {
        return Err(EitError::Layout(format!(
            "{n_electrodes} electrodes of width {electrode_width} cm exceed circumference {circumference:.4} cm"
        )));
    }
    let sector_angle = 2.0 * PI / n_electrodes as f64;
    let electrode_angle = electrode_width / radius;
    let coverage = electrode_angle / sector_angle;

    let mut best: Option<(usize, usize)> = None;
    for rings in 1..=512 {
        let (per_sector, _) = disk_ring_layout(rings, n_electrodes, coverage);
        let count = disk_element_count(&per_sector, n_electrodes);
        let diff = count.abs_diff(target_elements);
        if best.is_none_or(|(_, d)| diff < d) {
            best = Some((rings, diff));
        }
        if count > 2 * target_elements.max(1) + 64 {
            break;
        }
    }
    let (rings, _) = best.expect("at least one ring count is tried");
    let (per_sector, outer) = disk_ring_layout(rings, n_electrodes, coverage);
    let count = disk_element_count(&per_sector, n_electrodes);
    let tol = 0.2 * target_elements as f64;
    if (count as f64 - target_elements as f64).abs() > tol {
        return Err(EitError::Layout(format!(
            "closest structured disk mesh has {count} elements, outside 20% of target {target_elements}"
        )));
    }

    // Relative angles of the nodes of one sector, per ring, including the
    // node on the closing sector boundary.
    let gap_angle = 0.5 * (sector_angle - electrode_angle);
    let sector_angles: Vec<Vec<f64>> = per_sector
        .iter()
        .enumerate()
        .map(|(r, &m)| {
            if r + 1 < per_sector.len() {
                (0..=m)
                    .map(|j| sector_angle * j as f64 / m as f64)
                    .collect()
            } else {
                let g = outer.gap_edges;
                let e = outer.electrode_edges;
                let mut v = Vec::with_capacity(m + 1);
                v.extend((0..g).map(|j| gap_angle * j as f64 / g as f64));
                v.extend((0..e).map(|j| gap_angle + electrode_angle * j as f64 / e as f64));
                v.extend(
                    (0..g).map(|j| gap_angle + electrode_angle + gap_angle * j as f64 / g as f64),
                );
                v.push(sector_angle);
                v
            }
        })
        .collect();

    let mut nodes = vec![[0.0, 0.0]];
    let mut ring_offset = Vec::with_capacity(rings);
    for (r, &m) in per_sector.iter().enumerate() {
        ring_offset.push(nodes.len());
        let rad = radius * (r + 1) as f64 / rings as f64;
        for s in 0..n_electrodes {
            let base = sector_angle * s as f64;
            for &t in &sector_angles[r][..m] {
                let th = base + t;
                nodes.push([rad * th.cos(), rad * th.sin()]);
            }
        }
    }
    let ring_node = |r: usize, s: usize, j: usize| -> usize {
        let n = per_sector[r] * n_electrodes;
        ring_offset[r] + (s * per_sector[r] + j) % n
    };

    let mut elements = Vec::with_capacity(count);
    for s in 0..n_electrodes {
        for j in 0..per_sector[0] {
            elements.push([0, ring_node(0, s, j), ring_node(0, s, j + 1)]);
        }
    }
    for r in 1..rings {
        let pattern = zip_sector(&sector_angles[r - 1], &sector_angles[r]);
        for s in 0..n_electrodes {
            for tri in &pattern {
                elements.push(tri.map(|(outer_ring, j)| {
                    if outer_ring {
                        ring_node(r, s, j)
                    } else {
                        ring_node(r - 1, s, j)
                    }
                }));
            }
        }
    }

    let last = rings - 1;
    let electrodes = (0..n_electrodes)
        .map(|s| {
            (0..outer.electrode_edges)
                .map(|e| {
                    let j = outer.gap_edges + e;
                    [ring_node(last, s, j), ring_node(last, s, j + 1)]
                })
                .collect()
        })
        .collect();

    Mesh::new(nodes, elements, electrodes, DomainKind::Disk)
}

/// Index permutation induced by rotating a mesh from [`make_disk_mesh`] by one
/// electrode spacing: node `i` maps onto node `perm[i]`.
pub fn disk_rotation_permutation(mesh: &Mesh) -> Option<Vec<usize>> {
    let ne = mesh.n_electrodes() as f64;
    let (c, s) = ((2.0 * PI / ne).cos(), (2.0 * PI / ne).sin());
    let (lo, hi) = mesh.bbox();
    let tol = 1e-9 * (hi[0] - lo[0]).max(hi[1] - lo[1]);
    let mut sorted: Vec<(usize, [f64; 2])> = mesh.nodes().iter().copied().enumerate().collect();
    sorted.sort_by(|a, b| a.1[0].total_cmp(&b.1[0]));
    mesh.nodes()
        .iter()
        .map(|p| {
            let q = [c * p[0] - s * p[1], s * p[0] + c * p[1]];
            let start = sorted.partition_point(|e| e.1[0] < q[0] - tol);
            sorted[start..]
                .iter()
                .take_while(|e| e.1[0] <= q[0] + tol)
                .find(|e| (e.1[1] - q[1]).abs() <= tol)
                .map(|e| e.0)
        })
        .collect()
}

/// Sample a nodal field on the pixel centres of a `width x height` grid by
/// barycentric interpolation. Pixels outside the mesh take `background`.
pub fn rasterize_field(
    mesh: &Mesh,
    field: &[f64],
    width: usize,
    height: usize,
    background: f64,
) -> Result<GridImage> {
    if field.len() != mesh.n_nodes() {
        return Err(EitError::Dimension(format!(
            "field has {} values for {} nodes",
            field.len(),
            mesh.n_nodes()
        )));
    }
    if width < 2 || height < 2 {
        return Err(EitError::Dimension(format!(
            "raster {width}x{height} is smaller than 2x2"
        )));
    }
    let norm = mesh.normalization();
    let pts: Vec<[f64; 2]> = mesh
        .nodes()
        .iter()
        .map(|&p| norm.to_normalized(p))
        .collect();
    let mut values = vec![background; width * height];
    let mut mask = vec![false; width * height];
    const EPS: f64 = 1e-12;

    for tri in mesh.elements() {
        let [a, b, c] = tri.map(|i| pts[i]);
        let area = signed_area(a, b, c);
        let xmin = a[0].min(b[0]).min(c[0]);
        let xmax = a[0].max(b[0]).max(c[0]);
        let ymin = a[1].min(b[1]).min(c[1]);
        let ymax = a[1].max(b[1]).max(c[1]);
        // Column j has centre x = -1 + (2j+1)/W.
        let col_lo = (((xmin + 1.0) * width as f64 - 1.0) / 2.0).floor().max(0.0) as usize;
        let col_hi =
            ((((xmax + 1.0) * width as f64 - 1.0) / 2.0).ceil().max(0.0) as usize).min(width - 1);
        let row_lo = (((1.0 - ymax) * height as f64 - 1.0) / 2.0)
            .floor()
            .max(0.0) as usize;
        let row_hi =
            ((((1.0 - ymin) * height as f64 - 1.0) / 2.0).ceil().max(0.0) as usize).min(height - 1);
        for row in row_lo..=row_hi {
            let y = pixel_center_y(row, height);
            for col in col_lo..=col_hi {
                let idx = row * width + col;
                if mask[idx] {
                    continue;
                }
                let p = [pixel_center_x(col, width), y];
                let l0 = signed_area(p, b, c) / area;
                let l1 = signed_area(a, p, c) / area;
                let l2 = 1.0 - l0 - l1;
                if l0 >= -EPS && l1 >= -EPS && l2 >= -EPS {
                    values[idx] = l0 * field[tri[0]] + l1 * field[tri[1]] + l2 * field[tri[2]];
                    mask[idx] = true;
                }
            }
        }
    }
    GridImage::with_mask(width, height, values, mask)
}

/// Membership mask of the mesh domain on a pixel grid.
pub fn domain_mask(mesh: &Mesh, width: usize, height: usize) -> Result<Vec<bool>> {
    let zeros = vec![0.0; mesh.n_nodes()];
    Ok(rasterize_field(mesh, &zeros, width, height, 0.0)?.mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Mesh {
        let nodes = vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        let elements = vec![[0, 1, 2], [0, 2, 3]];
        Mesh::new(
            nodes,
            elements,
            vec![vec![[0, 1]], vec![[2, 3]]],
            DomainKind::Polygon,
        )
        .unwrap()
    }

    #[test]
    fn disk_mesh_matches_reference_layout() {
        let m = make_disk_mesh(14.0, 16, 2.5, 2176).unwrap();
        let n = m.n_elements() as f64;
        assert!((n - 2176.0).abs() <= 0.2 * 2176.0, "{n}");
        assert_eq!(m.n_electrodes(), 16);
        let boundary_edge = m
            .boundary_edges()
            .iter()
            .map(|&e| m.edge_length(e))
            .fold(0.0, f64::max);
        for q in 0..16 {
            assert!((m.electrode_length(q) - 2.5).abs() <= boundary_edge);
        }
        for k in 0..m.n_elements() {
            assert!(m.element_area(k) > 0.0);
        }
        let area = m.total_area();
        assert!((area - PI * 196.0).abs() / (PI * 196.0) < 0.01);
    }

    #[test]
    fn minimal_two_electrode_mesh() {
        let m = make_disk_mesh(1.0, 2, 0.5, 50).unwrap();
        assert_eq!(m.n_electrodes(), 2);
        assert!((m.n_elements() as f64 - 50.0).abs() <= 10.0);
        let a: Vec<_> = m.electrodes()[0]
            .iter()
            .map(|e| edge_key(e[0], e[1]))
            .collect();
        assert!(m.electrodes()[1]
            .iter()
            .all(|e| !a.contains(&edge_key(e[0], e[1]))));
    }

    #[test]
    fn electrode_coverage_tracks_requested_width() {
        let wide = make_disk_mesh(14.0, 16, 3.0, 2176).unwrap();
        let narrow = make_disk_mesh(14.0, 16, 2.5, 2176).unwrap();
        let cov = |m: &Mesh| (0..16).map(|q| m.electrode_length(q)).sum::<f64>() / m.perimeter();
        let circ = 2.0 * PI * 14.0;
        assert!((cov(&wide) - 48.0 / circ).abs() < 1e-3, "{}", cov(&wide));
        assert!(
            (cov(&narrow) - 40.0 / circ).abs() < 1e-3,
            "{}",
            cov(&narrow)
        );
    }

    #[test]
    fn infeasible_layout_is_rejected() {
        let err = make_disk_mesh(1.0, 16, 0.5, 500).unwrap_err();
        assert!(matches!(err, EitError::Layout(_)));
    }

    #[test]
    fn electrodes_form_contiguous_arcs() {
        let m = make_disk_mesh(14.0, 16, 2.5, 800).unwrap();
        for group in m.electrodes() {
            for w in group.windows(2) {
                assert_eq!(w[0][1], w[1][0]);
            }
        }
    }

    #[test]
    fn rotation_permutation_exists_for_disk() {
        let m = make_disk_mesh(14.0, 16, 2.5, 600).unwrap();
        let perm = disk_rotation_permutation(&m).expect("mesh is rotation symmetric");
        let mut seen = perm.clone();
        seen.sort_unstable();
        assert_eq!(seen, (0..m.n_nodes()).collect::<Vec<_>>());
    }

    #[test]
    fn clockwise_triangles_are_reoriented() {
        let nodes = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let m = Mesh::new(
            nodes,
            vec![[0, 2, 1]],
            vec![vec![[0, 1]], vec![[1, 2]]],
            DomainKind::Polygon,
        )
        .unwrap();
        assert!(m.element_area(0) > 0.0);
    }

    #[test]
    fn load_rejects_out_of_range_triangle() {
        let text = r#"{"nodes":[[0,0],[1,0],[0,1]],"elements":[[0,1,3]],"electrodes":[[[0,1]],[[1,2]]],"units":"cm"}"#;
        match Mesh::from_json(text).unwrap_err() {
            EitError::Invariant { entity, .. } => assert_eq!(entity, "element 0"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn load_rejects_shared_electrode_edge() {
        let text = r#"{"nodes":[[0,0],[1,0],[0,1]],"elements":[[0,1,2]],"electrodes":[[[0,1]],[[1,0]]],"units":"cm"}"#;
        let err = Mesh::from_json(text).unwrap_err();
        assert!(err.to_string().contains("disjoint"), "{err}");
    }

    #[test]
    fn load_rejects_interior_electrode_edge() {
        let text = r#"{"nodes":[[0,0],[1,0],[1,1],[0,1]],"elements":[[0,1,2],[0,2,3]],"electrodes":[[[0,2]],[[1,2]]],"units":"cm"}"#;
        let err = Mesh::from_json(text).unwrap_err();
        assert!(err.to_string().contains("boundary"), "{err}");
    }

    #[test]
    fn json_round_trip_is_identity() {
        let m = make_disk_mesh(14.0, 16, 2.5, 2176).unwrap();
        let again = Mesh::from_json(&m.to_json()).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn normalization_keeps_aspect_and_is_stable() {
        let nodes = vec![[0.0, 0.0], [4.0, 0.0], [4.0, 2.0], [0.0, 2.0]];
        let m = Mesh::new(
            nodes,
            vec![[0, 1, 2], [0, 2, 3]],
            vec![vec![[0, 1]], vec![[2, 3]]],
            DomainKind::Polygon,
        )
        .unwrap();
        let a = m.normalized_nodes();
        assert_eq!(a.points[2], [1.0, 0.5]);
        assert_eq!(a.points[0], [-1.0, -0.5]);
        assert_eq!(a, m.normalized_nodes());
    }

    #[test]
    fn constant_field_rasterizes_to_constant() {
        let m = make_disk_mesh(14.0, 16, 2.5, 600).unwrap();
        let img = rasterize_field(&m, &vec![0.7; m.n_nodes()], 64, 64, -1.0).unwrap();
        let inside = img.mask.iter().filter(|&&b| b).count();
        assert!(inside > 64 * 64 / 2);
        for (v, &inside) in img.values.iter().zip(&img.mask) {
            if inside {
                assert!((v - 0.7).abs() < 1e-12);
            } else {
                assert_eq!(*v, -1.0);
            }
        }
        assert!(!img.mask[0], "corner lies outside the disk");
    }

    #[test]
    fn x_field_increases_along_rows() {
        let m = make_disk_mesh(14.0, 16, 2.5, 600).unwrap();
        let field: Vec<f64> = m.nodes().iter().map(|p| p[0]).collect();
        let img = rasterize_field(&m, &field, 48, 48, 0.0).unwrap();
        for row in 0..48 {
            let vals: Vec<f64> = (0..48)
                .filter(|&c| img.mask[row * 48 + c])
                .map(|c| img.get(row, c))
                .collect();
            assert!(vals.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn square_mesh_covers_whole_raster() {
        let m = unit_square();
        let img = rasterize_field(&m, &[1.0, 2.0, 3.0, 4.0], 8, 8, 0.0).unwrap();
        assert!(img.mask.iter().all(|&b| b));
    }
}
