//! Sparse matrices and an envelope (skyline) Cholesky factorization.
//!
//! Factorizations always run in `f64`: the cotangent systems solved here lose
//! several digits to conditioning and single precision is not enough to meet
//! the sub-micron round-trip tolerance.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::Real;

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut indptr = vec![0; rows + 1];
        let mut indices: Vec<usize> = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < rows && c < cols, "triplet ({r}, {c}) out of bounds");
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.row(r).find(|&(j, _)| j == c).map_or(T::zero(), |(_, v)| v)
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| self.row(r).map(|(c, v)| v * x[c]).sum())
            .collect()
    }

    /// `Y = A X` for a dense row-major `cols x width` block.
    pub fn mul_dense(&self, x: ndarray::ArrayView2<T>) -> ndarray::Array2<T> {
        assert_eq!(x.nrows(), self.cols);
        let width = x.ncols();
        let mut out = ndarray::Array2::zeros((self.rows, width));
        for r in 0..self.rows {
            let mut row = out.row_mut(r);
            for (c, v) in self.row(r) {
                row.scaled_add(v, &x.row(c));
            }
        }
        out
    }

    /// `Y = A^T X` for a dense row-major `rows x width` block.
    pub fn mul_dense_transpose(&self, x: ndarray::ArrayView2<T>) -> ndarray::Array2<T> {
        assert_eq!(x.nrows(), self.rows);
        let width = x.ncols();
        let mut out = ndarray::Array2::zeros((self.cols, width));
        for r in 0..self.rows {
            let xr = x.row(r);
            for (c, v) in self.row(r) {
                out.row_mut(c).scaled_add(v, &xr);
            }
        }
        out
    }

    pub fn cast<S: Real>(&self) -> CsrMatrix<S> {
        CsrMatrix {
            rows: self.rows,
            cols: self.cols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            values: self.values.iter().map(|v| S::of(v.as_f64())).collect(),
        }
    }

    /// Renumbers rows and columns: entry `(i, j)` moves to `(perm[i], perm[j])`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(self.rows, self.cols);
        let mut trip = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                trip.push((perm[r], perm[c], v));
            }
        }
        Self::from_triplets(self.rows, self.cols, trip)
    }
}

/// Reverse Cuthill-McKee ordering of a symmetric sparsity pattern.
///
/// Returns `order` with `order[k]` the original index placed at position `k`.
pub fn reverse_cuthill_mckee(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (degree[i], i));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(adjacency, &degree, seed);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = adjacency[u].iter().copied().filter(|&v| !visited[v]).collect();
            nbrs.sort_by_key(|&v| (degree[v], v));
            for v in nbrs {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}

fn pseudo_peripheral(adjacency: &[Vec<usize>], degree: &[usize], seed: usize) -> usize {
    let mut node = seed;
    let mut ecc = 0;
    for _ in 0..8 {
        let levels = bfs_levels(adjacency, node);
        let depth = levels.iter().filter_map(|&l| l).max().unwrap_or(0);
        if depth <= ecc && ecc > 0 {
            break;
        }
        ecc = depth;
        let far = (0..adjacency.len())
            .filter(|&i| levels[i] == Some(depth))
            .min_by_key(|&i| (degree[i], i))
            .unwrap_or(node);
        if far == node {
            break;
        }
        node = far;
    }
    node
}

fn bfs_levels(adjacency: &[Vec<usize>], start: usize) -> Vec<Option<usize>> {
    let mut level = vec![None; adjacency.len()];
    level[start] = Some(0);
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        let lu = level[u].unwrap();
        for &v in &adjacency[u] {
            if level[v].is_none() {
                level[v] = Some(lu + 1);
                queue.push_back(v);
            }
        }
    }
    level
}

/// Envelope Cholesky factor `P A P^T = L L^T` of a sparse SPD matrix.
///
/// Immutable after construction; solves take `&self` and may run concurrently.
#[derive(Clone, Debug)]
pub struct SkylineCholesky {
    n: usize,
    /// `order[k]` = original index at permuted position `k`.
    order: Vec<usize>,
    /// `position[i]` = permuted position of original index `i`.
    position: Vec<usize>,
    /// First stored column of each permuted row.
    first: Vec<usize>,
    /// Offset of each row's segment in `values`.
    offset: Vec<usize>,
    values: Vec<f64>,
}

impl SkylineCholesky {
    /// Factorizes a symmetric matrix given as CSR (both triangles present).
    pub fn factorize<T: Real>(a: &CsrMatrix<T>) -> Result<Self> {
        let n = a.rows();
        assert_eq!(n, a.cols(), "matrix must be square");
        let adjacency: Vec<Vec<usize>> = (0..n)
            .map(|r| a.row(r).map(|(c, _)| c).filter(|&c| c != r).collect())
            .collect();
        let order = reverse_cuthill_mckee(&adjacency);
        let mut position = vec![0; n];
        for (k, &i) in order.iter().enumerate() {
            position[i] = k;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for r in 0..n {
            let pr = position[r];
            for (c, _) in a.row(r) {
                let pc = position[c];
                if pc < pr {
                    first[pr] = first[pr].min(pc);
                }
            }
        }
        let mut offset = vec![0; n + 1];
        for i in 0..n {
            offset[i + 1] = offset[i] + (i - first[i] + 1);
        }
        let mut values = vec![0.0; offset[n]];
        for r in 0..n {
            let pr = position[r];
            for (c, v) in a.row(r) {
                let pc = position[c];
                if pc <= pr {
                    values[offset[pr] + pc - first[pr]] += v.as_f64();
                }
            }
        }
        let max_diag = (0..n)
            .map(|i| values[offset[i] + i - first[i]].abs())
            .fold(0.0f64, f64::max);
        let tol = max_diag * 1e-11;
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let (ri, rj) = (offset[i] - fi, offset[j] - fj);
                let mut s = values[ri + j];
                for k in k0..j {
                    s -= values[ri + k] * values[rj + k];
                }
                values[ri + j] = s / values[rj + j];
            }
            let ri = offset[i] - fi;
            let mut d = values[ri + i];
            for k in fi..i {
                d -= values[ri + k] * values[ri + k];
            }
            if !(d > tol) {
                return Err(Error::SingularSystem(format!(
                    "non-positive pivot {d:e} at row {} (tolerance {tol:e})",
                    order[i]
                )));
            }
            values[ri + i] = d.sqrt();
        }
        Ok(Self {
            n,
            order,
            position,
            first,
            offset,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Number of stored factor entries.
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        let mut y: Vec<f64> = self.order.iter().map(|&i| b[i]).collect();
        for i in 0..self.n {
            let fi = self.first[i];
            let ri = self.offset[i] - fi;
            let mut s = y[i];
            for k in fi..i {
                s -= self.values[ri + k] * y[k];
            }
            y[i] = s / self.values[ri + i];
        }
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let ri = self.offset[i] - fi;
            y[i] /= self.values[ri + i];
            let yi = y[i];
            for k in fi..i {
                y[k] -= self.values[ri + k] * yi;
            }
        }
        for (i, out) in b.iter_mut().enumerate() {
            *out = y[self.position[i]];
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_laplacian(n: usize, shift: f64) -> CsrMatrix<f64> {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + shift));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn solves_tridiagonal_system() {
        let a = path_laplacian(30, 0.1);
        let x: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let b = a.mul_vec(&x);
        let chol = SkylineCholesky::factorize(&a).unwrap();
        let sol = chol.solve(&b);
        for (s, e) in sol.iter().zip(&x) {
            assert!((s - e).abs() < 1e-10);
        }
    }

    #[test]
    fn detects_singular_matrix() {
        // Pure path Laplacian has the constant vector in its kernel.
        let mut t = Vec::new();
        for i in 0..5 {
            let deg = if i == 0 || i == 4 { 1.0 } else { 2.0 };
            t.push((i, i, deg));
            if i + 1 < 5 {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(5, 5, t);
        assert!(matches!(SkylineCholesky::factorize(&a), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn rcm_is_a_permutation() {
        let adj = vec![vec![3], vec![2, 4], vec![1], vec![0, 4], vec![1, 3]];
        let mut o = reverse_cuthill_mckee(&adj);
        o.sort_unstable();
        assert_eq!(o, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn duplicate_triplets_are_summed() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 0, 4.0)]);
        assert_eq!(a.get(0, 0), 3.0);
        assert_eq!(a.get(1, 0), 4.0);
        assert_eq!(a.nnz(), 2);
    }
}
