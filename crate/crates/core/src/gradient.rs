//! Per-triangle deformation Jacobians and their least-squares integration.
//!
//! For a rest triangle with edges `e1, e2` and scaled normal
//! `m = (e1 x e2) / sqrt(|e1 x e2|)`, the Jacobian of a deformation to edges
//! `e1', e2'` is `J = [e1' e2' m'] [e1 e2 m]^-1`. Identity, uniform scaling,
//! rotations and similarities map to themselves exactly. `J` splits into the
//! intrinsic gradient of the piecewise-linear map (linear in the deformed
//! vertices) plus the normal term `m' n^T / |m|`; only the tangential action
//! `J (I - n n^T)` enters the Poisson solve.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::sparse::{CsrMatrix, SkylineCholesky};
use crate::vec3::{self, Mat3, Vec3};
use crate::Real;

/// One 3x3 matrix per triangle.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianField<T> {
    pub jacobians: Vec<Mat3<T>>,
}

impl<T: Real> JacobianField<T> {
    pub fn identity(triangles: usize) -> Self {
        Self {
            jacobians: vec![vec3::identity(); triangles],
        }
    }

    pub fn zeros(triangles: usize) -> Self {
        Self {
            jacobians: vec![[[T::zero(); 3]; 3]; triangles],
        }
    }

    pub fn len(&self) -> usize {
        self.jacobians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jacobians.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.jacobians
            .iter()
            .all(|m| m.iter().all(|r| r.iter().all(|x| x.is_finite())))
    }

    /// Row-major flattening, 9 values per triangle.
    pub fn to_flat(&self) -> Vec<T> {
        self.jacobians
            .iter()
            .flat_map(|m| m.iter().flat_map(|r| r.iter().copied()))
            .collect()
    }

    pub fn from_flat(values: &[T]) -> Result<Self> {
        if values.len() % 9 != 0 {
            return Err(Error::DimensionMismatch {
                expected: (values.len() / 9 + 1) * 9,
                actual: values.len(),
            });
        }
        let jacobians = values
            .chunks_exact(9)
            .map(|c| [[c[0], c[1], c[2]], [c[3], c[4], c[5]], [c[6], c[7], c[8]]])
            .collect();
        Ok(Self { jacobians })
    }

    pub fn cast<S: Real>(&self) -> JacobianField<S> {
        JacobianField {
            jacobians: self
                .jacobians
                .iter()
                .map(|m| m.map(|r| r.map(|x| S::of(x.as_f64()))))
                .collect(),
        }
    }
}

/// Gradients of the three hat functions of each triangle, `hat[t][corner]`.
pub fn hat_gradients<T: Real>(mesh: &TriangleMesh<T>) -> Vec<[Vec3<T>; 3]> {
    let v = mesh.vertices();
    mesh.triangles()
        .iter()
        .enumerate()
        .map(|(t, &[a, b, c])| {
            let cr = mesh.triangle_cross(t);
            let twice_area = vec3::norm(cr);
            let n = vec3::scale(cr, T::one() / twice_area);
            let inv = T::one() / twice_area;
            let g = |from: usize, to: usize| vec3::scale(vec3::cross(n, vec3::sub(v[to], v[from])), inv);
            [g(b, c), g(c, a), g(a, b)]
        })
        .collect()
}

/// Area-weighted stiffness matrix `sum_t area_t grad(phi_i) . grad(phi_j)`,
/// i.e. the (positive semi-definite) cotangent Laplacian.
pub fn stiffness_matrix<T: Real>(mesh: &TriangleMesh<T>) -> CsrMatrix<T> {
    let hats = hat_gradients(mesh);
    let areas = mesh.triangle_areas();
    let mut trip = Vec::with_capacity(mesh.triangle_count() * 9);
    for ((tri, g), &a) in mesh.triangles().iter().zip(&hats).zip(&areas) {
        for i in 0..3 {
            for j in 0..3 {
                trip.push((tri[i], tri[j], a * vec3::dot(g[i], g[j])));
            }
        }
    }
    CsrMatrix::from_triplets(mesh.vertex_count(), mesh.vertex_count(), trip)
}

/// Maps vertex positions to per-triangle Jacobians relative to a rest mesh, and
/// integrates Jacobian fields back to positions with vertex 0 pinned.
#[derive(Clone, Debug)]
pub struct GradientOperator<T> {
    rest: TriangleMesh<T>,
    hats: Vec<[Vec3<T>; 3]>,
    normals: Vec<Vec3<T>>,
    areas: Vec<T>,
    /// `|e1 x e2|` of each rest triangle.
    rest_cross: Vec<T>,
    /// Factor of the stiffness matrix restricted to vertices `1..N`.
    solver: Arc<SkylineCholesky>,
    /// Nonzeros `(free_row, K[row][0])` coupling the free vertices to vertex 0.
    pinned_column: Vec<(usize, f64)>,
}

impl<T: Real> GradientOperator<T> {
    pub fn build(mesh: &TriangleMesh<T>) -> Result<Self> {
        mesh.check_areas()?;
        if mesh.vertex_count() < 3 || mesh.triangle_count() == 0 {
            return Err(Error::EmptyResult("mesh has no triangles".into()));
        }
        let hats = hat_gradients(mesh);
        let areas = mesh.triangle_areas();
        let rest_cross: Vec<T> = areas.iter().map(|&a| a + a).collect();
        let normals = mesh.triangle_features().normals;
        let k = stiffness_matrix(mesh);
        let n = mesh.vertex_count();
        let mut trip = Vec::with_capacity(k.nnz());
        let mut pinned_column = Vec::new();
        for r in 1..n {
            for (c, v) in k.row(r) {
                if c == 0 {
                    pinned_column.push((r - 1, v.as_f64()));
                } else {
                    trip.push((r - 1, c - 1, v.as_f64()));
                }
            }
        }
        let reduced = CsrMatrix::from_triplets(n - 1, n - 1, trip);
        let solver = SkylineCholesky::factorize(&reduced).map_err(|e| match e {
            Error::SingularSystem(msg) => Error::SingularSystem(format!(
                "{msg}; a connected component may not contain the pinned vertex 0"
            )),
            other => other,
        })?;
        Ok(Self {
            rest: mesh.clone(),
            hats,
            normals,
            areas,
            rest_cross,
            solver: Arc::new(solver),
            pinned_column,
        })
    }

    pub fn rest(&self) -> &TriangleMesh<T> {
        &self.rest
    }

    pub fn areas(&self) -> &[T] {
        &self.areas
    }

    pub fn rest_normals(&self) -> &[Vec3<T>] {
        &self.normals
    }

    pub fn hat_gradients(&self) -> &[[Vec3<T>; 3]] {
        &self.hats
    }

    pub fn triangle_count(&self) -> usize {
        self.rest.triangle_count()
    }

    pub fn vertex_count(&self) -> usize {
        self.rest.vertex_count()
    }

    /// Jacobians of the map from the rest mesh to `deformed`.
    pub fn compute_jacobians(&self, deformed: &TriangleMesh<T>) -> Result<JacobianField<T>> {
        if deformed.triangles() != self.rest.triangles() {
            return Err(Error::TopologyMismatch(format!(
                "operator has {} triangles over {} vertices, deformed mesh has {} over {}",
                self.rest.triangle_count(),
                self.rest.vertex_count(),
                deformed.triangle_count(),
                deformed.vertex_count()
            )));
        }
        Ok(self.jacobians_of(deformed.vertices()))
    }

    /// Same as [`Self::compute_jacobians`] for raw positions over the rest connectivity.
    pub fn jacobians_of(&self, vertices: &[Vec3<T>]) -> JacobianField<T> {
        assert_eq!(vertices.len(), self.rest.vertex_count());
        let jacobians = self
            .rest
            .triangles()
            .iter()
            .enumerate()
            .map(|(t, tri)| {
                let g = &self.hats[t];
                let mut j = [[T::zero(); 3]; 3];
                for (corner, &vi) in tri.iter().enumerate() {
                    let p = vertices[vi];
                    for r in 0..3 {
                        for c in 0..3 {
                            j[r][c] += p[r] * g[corner][c];
                        }
                    }
                }
                let [a, b, c] = *tri;
                let cr = vec3::cross(vec3::sub(vertices[b], vertices[a]), vec3::sub(vertices[c], vertices[a]));
                let len = vec3::norm(cr);
                if len > T::zero() {
                    let q = vec3::scale(cr, T::one() / (len * self.rest_cross[t]).sqrt());
                    let n = self.normals[t];
                    for r in 0..3 {
                        for c in 0..3 {
                            j[r][c] += q[r] * n[c];
                        }
                    }
                }
                j
            })
            .collect();
        JacobianField { jacobians }
    }

    fn check_field(&self, field: &JacobianField<T>) -> Result<()> {
        if field.len() != self.triangle_count() {
            return Err(Error::DimensionMismatch {
                expected: self.triangle_count(),
                actual: field.len(),
            });
        }
        Ok(())
    }

    /// Positions minimizing `sum_t area_t |grad v(t) - J_t (I - n_t n_t^T)|^2`
    /// with vertex 0 placed at `anchor`.
    pub fn integrate(&self, field: &JacobianField<T>, anchor: Vec3<T>) -> Result<Vec<Vec3<T>>> {
        self.check_field(field)?;
        let n = self.vertex_count();
        let mut rhs = vec![vec![0.0f64; n]; 3];
        for (t, tri) in self.rest.triangles().iter().enumerate() {
            // Hat gradients are tangent, so J . grad(phi) already sees only the
            // tangential part of J.
            let j = &field.jacobians[t];
            let a = self.areas[t].as_f64();
            for (corner, &vi) in tri.iter().enumerate() {
                let g = self.hats[t][corner];
                for r in 0..3 {
                    rhs[r][vi] += a * vec3::dot(j[r], g).as_f64();
                }
            }
        }
        let mut out = vec![[T::zero(); 3]; n];
        for (r, b) in rhs.iter().enumerate() {
            let pin = anchor[r].as_f64();
            let mut free: Vec<f64> = b[1..].to_vec();
            for &(row, k) in &self.pinned_column {
                free[row] -= k * pin;
            }
            self.solver.solve_in_place(&mut free);
            out[0][r] = anchor[r];
            for (i, x) in free.into_iter().enumerate() {
                out[i + 1][r] = T::of(x);
            }
        }
        Ok(out)
    }

    pub fn integrate_jacobians(&self, field: &JacobianField<T>, anchor: Vec3<T>) -> Result<TriangleMesh<T>> {
        let v = self.integrate(field, anchor)?;
        self.rest.with_vertices(v)
    }

    /// Back-propagates a gradient with respect to the integrated positions to a
    /// gradient with respect to the field. The pinned vertex carries no
    /// dependence on the field, so its entry in `grad_vertices` is ignored.
    pub fn integrate_vjp(&self, grad_vertices: &[Vec3<T>]) -> Result<JacobianField<T>> {
        let n = self.vertex_count();
        if grad_vertices.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: grad_vertices.len(),
            });
        }
        let mut adjoint = vec![[T::zero(); 3]; n];
        for r in 0..3 {
            let mut free: Vec<f64> = grad_vertices[1..].iter().map(|g| g[r].as_f64()).collect();
            self.solver.solve_in_place(&mut free);
            for (i, x) in free.into_iter().enumerate() {
                adjoint[i + 1][r] = T::of(x);
            }
        }
        let jacobians = self
            .rest
            .triangles()
            .iter()
            .enumerate()
            .map(|(t, tri)| {
                let a = self.areas[t];
                let mut grad = [[T::zero(); 3]; 3];
                for (corner, &vi) in tri.iter().enumerate() {
                    let g = self.hats[t][corner];
                    for r in 0..3 {
                        for c in 0..3 {
                            grad[r][c] += a * adjoint[vi][r] * g[c];
                        }
                    }
                }
                grad
            })
            .collect();
        Ok(JacobianField { jacobians })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{grid, icosphere};

    fn wavy_grid() -> TriangleMesh<f64> {
        let g = grid::<f64>(6, 5, 2.0);
        let v = g
            .vertices()
            .iter()
            .map(|p| [p[0], p[1], (p[0] * 0.3).sin() * 2.0 + (p[1] * 0.2).cos()])
            .collect();
        g.with_vertices(v).unwrap()
    }

    #[test]
    fn rest_mesh_maps_to_identity() {
        let m = wavy_grid();
        let op = GradientOperator::build(&m).unwrap();
        let f = op.compute_jacobians(&m).unwrap();
        for j in &f.jacobians {
            for r in 0..3 {
                for c in 0..3 {
                    let e = if r == c { 1.0 } else { 0.0 };
                    assert!((j[r][c] - e).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn topology_mismatch_is_rejected() {
        let op = GradientOperator::build(&grid::<f64>(3, 3, 1.0)).unwrap();
        let other = grid::<f64>(3, 2, 1.0);
        assert!(matches!(op.compute_jacobians(&other), Err(Error::TopologyMismatch(_))));
    }

    #[test]
    fn disconnected_component_is_singular() {
        let v = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [5.0, 0.0, 0.0],
            [6.0, 0.0, 0.0],
            [5.0, 1.0, 0.0],
        ];
        let m = TriangleMesh::new(v, vec![[0, 1, 2], [3, 4, 5]]).unwrap();
        assert!(matches!(GradientOperator::build(&m), Err(Error::SingularSystem(_))));
    }

    #[test]
    fn identity_field_integrates_to_rest() {
        let m = icosphere::<f64>(50.0, 2);
        let op = GradientOperator::build(&m).unwrap();
        let v = op
            .integrate(&JacobianField::identity(m.triangle_count()), m.vertices()[0])
            .unwrap();
        for (a, b) in v.iter().zip(m.vertices()) {
            assert!(vec3::norm(vec3::sub(*a, *b)) < 1e-6);
        }
    }
}
