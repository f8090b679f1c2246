//! Low-frequency eigenpairs of the cotangent Laplacian.
//!
//! Solves `L phi = lambda M phi` (M the lumped mass) for the smallest
//! eigenvalues with shift-invert Lanczos and full reorthogonalization.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::gradient::stiffness_matrix;
use crate::mesh::TriangleMesh;
use crate::sparse::{CsrMatrix, SkylineCholesky};
use crate::Real;

#[derive(Clone, Debug)]
pub struct SpectralBasis<T> {
    /// Ascending.
    pub eigenvalues: Vec<T>,
    /// `N x k`, mass-orthonormal columns.
    pub eigenvectors: Array2<T>,
    pub mass: Vec<T>,
}

impl<T: Real> SpectralBasis<T> {
    pub fn k(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn cast<S: Real>(&self) -> SpectralBasis<S> {
        SpectralBasis {
            eigenvalues: self.eigenvalues.iter().map(|x| S::of(x.as_f64())).collect(),
            eigenvectors: self.eigenvectors.mapv(|x| S::of(x.as_f64())),
            mass: self.mass.iter().map(|x| S::of(x.as_f64())).collect(),
        }
    }
}

const RESIDUAL_TOL: f64 = 1e-9;

/// First `k` eigenpairs of the cotangent Laplacian with lumped mass.
pub fn laplacian_eigenbasis<T: Real>(mesh: &TriangleMesh<T>, k: usize) -> Result<SpectralBasis<T>> {
    let n = mesh.vertex_count();
    if k == 0 || k >= n {
        return Err(Error::InvalidConfig(format!(
            "eigenbasis size k = {k} must satisfy 0 < k < N = {n}"
        )));
    }
    let mesh64: TriangleMesh<f64> = mesh.cast();
    let stiffness = stiffness_matrix(&mesh64);
    let mass = mesh64.lumped_mass();
    if let Some(i) = mass.iter().position(|&m| m <= 0.0) {
        return Err(Error::InvalidConfig(format!("vertex {i} belongs to no triangle")));
    }
    let (values, vectors) = generalized_smallest(&stiffness, &mass, k)?;
    Ok(SpectralBasis {
        eigenvalues: values.into_iter().map(T::of).collect(),
        eigenvectors: vectors.mapv(T::of),
        mass: mass.into_iter().map(T::of).collect(),
    })
}

/// Smallest `k` eigenpairs of the pencil `(a, diag(mass))`, `a` symmetric PSD.
pub fn generalized_smallest(a: &CsrMatrix<f64>, mass: &[f64], k: usize) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = a.rows();
    let trace_a: f64 = (0..n).map(|i| a.get(i, i)).sum();
    let trace_m: f64 = mass.iter().sum();
    let shift = 1e-6 * trace_a / trace_m;
    let mut trip = Vec::with_capacity(a.nnz());
    for r in 0..n {
        for (c, v) in a.row(r) {
            trip.push((r, c, v));
        }
        trip.push((r, r, shift * mass[r]));
    }
    let shifted = CsrMatrix::from_triplets(n, n, trip);
    let chol = SkylineCholesky::factorize(&shifted)?;
    let sqrt_m: Vec<f64> = mass.iter().map(|m| m.sqrt()).collect();
    let apply = |x: &[f64]| -> Vec<f64> {
        let mut y: Vec<f64> = x.iter().zip(&sqrt_m).map(|(a, b)| a * b).collect();
        chol.solve_in_place(&mut y);
        y.iter_mut().zip(&sqrt_m).for_each(|(a, b)| *a *= b);
        y
    };

    let mut m = (2 * k + 20).min(n);
    loop {
        let (basis, ritz) = lanczos(&apply, n, m);
        let got = ritz.len().min(k);
        let mut pairs: Vec<(f64, Vec<f64>)> = Vec::with_capacity(got);
        for (theta, coeffs) in ritz.into_iter().take(got) {
            let _ = theta;
            let mut psi = vec![0.0; n];
            for (j, c) in coeffs.iter().enumerate() {
                for (p, q) in psi.iter_mut().zip(&basis[j]) {
                    *p += c * q;
                }
            }
            let mut phi: Vec<f64> = psi.iter().zip(&sqrt_m).map(|(p, s)| p / s).collect();
            let norm: f64 = phi.iter().zip(mass).map(|(p, w)| p * p * w).sum::<f64>().sqrt();
            phi.iter_mut().for_each(|p| *p /= norm);
            let lphi = a.mul_vec(&phi);
            let lambda: f64 = phi.iter().zip(&lphi).map(|(p, l)| p * l).sum();
            pairs.push((lambda.max(0.0), phi));
        }
        let scale = trace_a / trace_m;
        let converged = got == k
            && pairs.iter().all(|(lambda, phi)| {
                let lphi = a.mul_vec(phi);
                let res: f64 = lphi
                    .iter()
                    .zip(phi)
                    .zip(mass)
                    .map(|((l, p), w)| {
                        let r = l - lambda * w * p;
                        r * r / w
                    })
                    .sum::<f64>()
                    .sqrt();
                res <= RESIDUAL_TOL * (lambda + scale)
            });
        if converged || m == n {
            if got < k {
                return Err(Error::ConvergenceFailure(format!(
                    "Krylov space exhausted with {got} of {k} eigenpairs"
                )));
            }
            if !converged {
                return Err(Error::ConvergenceFailure(format!(
                    "residual above {RESIDUAL_TOL:e} with a full Krylov basis"
                )));
            }
            pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
            let mut values = Vec::with_capacity(k);
            let mut vectors = Array2::zeros((n, k));
            for (j, (lambda, mut phi)) in pairs.into_iter().enumerate() {
                canonical_sign(&mut phi, mass);
                values.push(lambda);
                for (i, p) in phi.into_iter().enumerate() {
                    vectors[[i, j]] = p;
                }
            }
            return Ok((values, vectors));
        }
        m = ((m as f64 * 1.5) as usize + 10).min(n);
    }
}

/// Picks an ordering-independent sign for an eigenvector.
fn canonical_sign(phi: &mut [f64], mass: &[f64]) {
    let first: f64 = phi.iter().zip(mass).map(|(p, w)| p * w).sum();
    let third: f64 = phi.iter().zip(mass).map(|(p, w)| p * p * p * w).sum();
    let key = if first.abs() > 1e-8 { first } else { third };
    if key < 0.0 {
        phi.iter_mut().for_each(|p| *p = -*p);
    }
}

type RitzPairs = Vec<(f64, Vec<f64>)>;

/// `m` steps of Lanczos with full reorthogonalization; returns the Krylov basis
/// and Ritz pairs sorted by descending Ritz value.
fn lanczos(apply: &dyn Fn(&[f64]) -> Vec<f64>, n: usize, m: usize) -> (Vec<Vec<f64>>, RitzPairs) {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut alpha = Vec::with_capacity(m);
    let mut beta: Vec<f64> = Vec::with_capacity(m);
    let mut q: Vec<f64> = (0..n).map(|i| 1.0 + 0.25 * ((i as f64) * 1.618_033_988 + 0.5).sin()).collect();
    normalize(&mut q);
    let mut restart_seed = 1u64;
    while basis.len() < m {
        let mut w = apply(&q);
        let a: f64 = dot(&q, &w);
        basis.push(q.clone());
        alpha.push(a);
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &w);
                axpy(-c, b, &mut w);
            }
        }
        if basis.len() == m {
            break;
        }
        let mut b = norm(&w);
        if b < 1e-10 * a.abs().max(1e-300) {
            // Invariant subspace: continue from a fresh direction orthogonal to the basis.
            b = 0.0;
            let mut fresh: Vec<f64> = (0..n)
                .map(|i| ((i as u64 * 2_654_435_761 + restart_seed * 97) % 1000) as f64 / 1000.0 - 0.5)
                .collect();
            restart_seed += 1;
            for _ in 0..2 {
                for v in &basis {
                    let c = dot(v, &fresh);
                    axpy(-c, v, &mut fresh);
                }
            }
            if norm(&fresh) < 1e-12 {
                break;
            }
            normalize(&mut fresh);
            w = fresh;
        } else {
            w.iter_mut().for_each(|x| *x /= b);
        }
        beta.push(b);
        q = w;
    }
    let size = basis.len();
    let mut t = DMatrix::<f64>::zeros(size, size);
    for i in 0..size {
        t[(i, i)] = alpha[i];
        if i + 1 < size {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let mut idx: Vec<usize> = (0..size).collect();
    idx.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let ritz = idx
        .into_iter()
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).iter().copied().collect()))
        .collect();
    (basis, ritz)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: &mut [f64]) {
    let n = norm(a);
    a.iter_mut().for_each(|x| *x /= n);
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
