//! Sparse symmetric storage and a profile (envelope) Cholesky factorization
//! under reverse Cuthill-McKee ordering.

use std::collections::VecDeque;

use crate::error::{EitError, Result};

/// Square sparse matrix in compressed-row form with sorted, merged columns.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

/// Accumulates `(row, col, value)` entries; duplicates are summed.
#[derive(Debug, Clone, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        TripletBuilder {
            n,
            entries: Vec::new(),
        }
    }

    #[inline]
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.n && col < self.n);
        self.entries.push((row, col, value));
    }

    /// Add `value` at `(i, j)` and `(j, i)` (once on the diagonal).
    #[inline]
    pub fn add_sym(&mut self, i: usize, j: usize, value: f64) {
        self.add(i, j, value);
        if i != j {
            self.add(j, i, value);
        }
    }

    pub fn build(mut self) -> CsrMatrix {
        self.entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in self.entries {
            if last == Some((r, c)) {
                *values.last_mut().expect("merged entry exists") += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n: self.n,
            row_ptr,
            col_idx,
            values,
        }
    }
}

impl CsrMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()]
            .iter()
            .copied()
            .zip(self.values[r].iter().copied())
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// Drop row and column `k`, renumbering the rest.
    pub fn without_index(&self, k: usize) -> CsrMatrix {
        let mut b = TripletBuilder::new(self.n - 1);
        let shift = |i: usize| if i > k { i - 1 } else { i };
        for i in (0..self.n).filter(|&i| i != k) {
            for (j, v) in self.row(i).filter(|&(j, _)| j != k) {
                b.add(shift(i), shift(j), v);
            }
        }
        b.build()
    }
}

/// Reverse Cuthill-McKee ordering. `perm[new] = old`.
pub fn reverse_cuthill_mckee(a: &CsrMatrix) -> Vec<usize> {
    let n = a.dim();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| a.row(i).map(|(j, _)| j).filter(|&j| j != i).collect())
        .collect();
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);

    while order.len() < n {
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| (degree[i], i))
            .expect("unvisited node remains");
        let start = pseudo_peripheral(&adj, &degree, seed);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            next.sort_unstable_by_key(|&w| (degree[w], w));
            for w in next {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    }
    order.reverse();
    order
}

fn bfs_levels(adj: &[Vec<usize>], start: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adj.len()];
    level[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(v) = queue.pop_front() {
        let l = level[v].expect("queued nodes have a level");
        for &w in &adj[v] {
            if level[w].is_none() {
                level[w] = Some(l + 1);
                queue.push_back(w);
            }
        }
    }
    level
}

fn pseudo_peripheral(adj: &[Vec<usize>], degree: &[usize], seed: usize) -> usize {
    let mut node = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let level = bfs_levels(adj, node);
        let (far, far_level) = level
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.map(|l| (i, l)))
            .max_by_key(|&(i, l)| (l, std::cmp::Reverse(degree[i])))
            .expect("seed has a level");
        if far_level <= ecc {
            break;
        }
        ecc = far_level;
        node = far;
    }
    node
}

/// `L L^T = P A P^T` with `L` stored row by row over each row's envelope.
#[derive(Debug, Clone)]
pub struct EnvelopeCholesky {
    n: usize,
    perm: Vec<usize>,
    inv_perm: Vec<usize>,
    first: Vec<usize>,
    row_start: Vec<usize>,
    data: Vec<f64>,
}

impl EnvelopeCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        let n = a.dim();
        let perm = reverse_cuthill_mckee(a);
        let mut inv_perm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv_perm[old] = new;
        }

        let mut first: Vec<usize> = (0..n).collect();
        for old_i in 0..n {
            let i = inv_perm[old_i];
            for (old_j, _) in a.row(old_i) {
                let j = inv_perm[old_j];
                if j < first[i] {
                    first[i] = j;
                }
            }
        }
        let mut row_start = Vec::with_capacity(n + 1);
        let mut total = 0usize;
        for (i, &f) in first.iter().enumerate() {
            row_start.push(total);
            total += i - f + 1;
        }
        row_start.push(total);

        let mut data = vec![0.0; total];
        for old_i in 0..n {
            let i = inv_perm[old_i];
            for (old_j, v) in a.row(old_i) {
                let j = inv_perm[old_j];
                if j <= i {
                    data[row_start[i] + j - first[i]] += v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let ri = row_start[i];
            for j in fi..i {
                let fj = first[j];
                let rj = row_start[j];
                let k0 = fi.max(fj);
                let mut s = data[ri + j - fi];
                let li = &data[ri + k0 - fi..ri + j - fi];
                let lj = &data[rj + k0 - fj..rj + j - fj];
                s -= li.iter().zip(lj).map(|(x, y)| x * y).sum::<f64>();
                let djj = data[rj + j - fj];
                data[ri + j - fi] = s / djj;
            }
            let row = &data[ri..ri + i - fi];
            let diag = data[ri + i - fi];
            let d = diag - row.iter().map(|x| x * x).sum::<f64>();
            if !(d > 1e-13 * diag.abs()) || !d.is_finite() {
                return Err(EitError::Assembly(format!(
                    "matrix is not positive definite (pivot {d:e} at row {})",
                    perm[i]
                )));
            }
            data[ri + i - fi] = d.sqrt();
        }

        Ok(EnvelopeCholesky {
            n,
            perm,
            inv_perm,
            first,
            row_start,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries of the factor.
    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let mut y: Vec<f64> = self.perm.iter().map(|&old| b[old]).collect();
        for i in 0..self.n {
            let fi = self.first[i];
            let ri = self.row_start[i];
            let row = &self.data[ri..ri + i - fi];
            let s: f64 = row.iter().zip(&y[fi..i]).map(|(l, v)| l * v).sum();
            y[i] = (y[i] - s) / self.data[ri + i - fi];
        }
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let ri = self.row_start[i];
            y[i] /= self.data[ri + i - fi];
            let xi = y[i];
            let row = &self.data[ri..ri + i - fi];
            for (yj, l) in y[fi..i].iter_mut().zip(row) {
                *yj -= l * xi;
            }
        }
        (0..self.n).map(|old| y[self.inv_perm[old]]).collect()
    }
}
