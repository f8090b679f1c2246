//! Triangle mesh container and per-element geometric features.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::vec3::{self, Vec3};
use crate::Real;

/// Triangles with area at or below this value (mm^2) are rejected.
pub const DEGENERATE_AREA: f64 = 1e-12;

/// Indexed triangle mesh in millimeters.
///
/// Construction through [`TriangleMesh::new`] validates index ranges and rejects
/// degenerate triangles. Deformed copies produced by [`TriangleMesh::with_vertices`]
/// share the (already validated) connectivity and skip the area check, since a
/// predicted or augmented shape may legitimately collapse a triangle.
#[derive(Clone, Debug, PartialEq)]
pub struct TriangleMesh<T> {
    vertices: Vec<Vec3<T>>,
    /// Shared between deformed copies.
    triangles: Arc<[[usize; 3]]>,
    /// Flags over the vertices of the mesh this one was cut from; `true` marks a
    /// vertex that survived (augmentation and standardization set this).
    vertex_mask: Option<Vec<bool>>,
    edge_manifold: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerVertexFeatures<T> {
    pub positions: Vec<Vec3<T>>,
    pub normals: Vec<Vec3<T>>,
    /// Vertices with no incident area; their normal is zero.
    pub invalid: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerTriangleFeatures<T> {
    pub centers: Vec<Vec3<T>>,
    pub normals: Vec<Vec3<T>>,
}

impl<T: Real> TriangleMesh<T> {
    pub fn new(vertices: Vec<Vec3<T>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            for &i in tri {
                if i >= n {
                    return Err(Error::IndexOutOfRange {
                        triangle: t,
                        index: i,
                        vertex_count: n,
                    });
                }
            }
        }
        let mesh = Self::assemble(vertices, triangles, None);
        mesh.check_areas()?;
        Ok(mesh)
    }

    fn assemble(
        vertices: Vec<Vec3<T>>,
        triangles: Vec<[usize; 3]>,
        vertex_mask: Option<Vec<bool>>,
    ) -> Self {
        let edge_manifold = edge_use_counts(&triangles).values().all(|&c| c <= 2);
        Self {
            vertices,
            triangles: triangles.into(),
            vertex_mask,
            edge_manifold,
        }
    }

    /// Same connectivity, new positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3<T>>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::DimensionMismatch {
                expected: self.vertices.len(),
                actual: vertices.len(),
            });
        }
        Ok(Self {
            vertices,
            triangles: self.triangles.clone(),
            vertex_mask: self.vertex_mask.clone(),
            edge_manifold: self.edge_manifold,
        })
    }

    pub fn with_vertex_mask(mut self, mask: Option<Vec<bool>>) -> Self {
        self.vertex_mask = mask;
        self
    }

    pub fn check_areas(&self) -> Result<()> {
        for (t, a) in self.triangle_areas().into_iter().enumerate() {
            if !(a.as_f64() > DEGENERATE_AREA) {
                return Err(Error::DegenerateTriangle {
                    triangle: t,
                    area: a.as_f64(),
                });
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Vec3<T>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertex_mask(&self) -> Option<&[bool]> {
        self.vertex_mask.as_deref()
    }

    pub fn is_edge_manifold(&self) -> bool {
        self.edge_manifold
    }

    pub fn cast<S: Real>(&self) -> TriangleMesh<S> {
        TriangleMesh {
            vertices: crate::real::cast_points(&self.vertices),
            triangles: self.triangles.clone(),
            vertex_mask: self.vertex_mask.clone(),
            edge_manifold: self.edge_manifold,
        }
    }

    /// Twice the area vector `(b - a) x (c - a)` of triangle `t`.
    #[inline]
    pub fn triangle_cross(&self, t: usize) -> Vec3<T> {
        let [a, b, c] = self.triangles[t];
        let (a, b, c) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        vec3::cross(vec3::sub(b, a), vec3::sub(c, a))
    }

    pub fn triangle_areas(&self) -> Vec<T> {
        (0..self.triangles.len())
            .map(|t| vec3::norm(self.triangle_cross(t)) * T::c(0.5))
            .collect()
    }

    pub fn triangle_features(&self) -> PerTriangleFeatures<T> {
        let third = T::c(1.0 / 3.0);
        let centers = self
            .triangles
            .iter()
            .map(|&[a, b, c]| {
                let s = vec3::add(vec3::add(self.vertices[a], self.vertices[b]), self.vertices[c]);
                vec3::scale(s, third)
            })
            .collect();
        let normals = (0..self.triangles.len())
            .map(|t| vec3::normalize(self.triangle_cross(t)).unwrap_or([T::zero(); 3]))
            .collect();
        PerTriangleFeatures { centers, normals }
    }

    /// Area-weighted vertex normals.
    pub fn vertex_normals(&self) -> PerVertexFeatures<T> {
        let mut acc = vec![[T::zero(); 3]; self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            let c = self.triangle_cross(t);
            for &i in tri {
                acc[i] = vec3::add(acc[i], c);
            }
        }
        let mut invalid = Vec::new();
        let normals = acc
            .into_iter()
            .enumerate()
            .map(|(i, s)| match vec3::normalize(s) {
                Some(n) => n,
                None => {
                    invalid.push(i);
                    [T::zero(); 3]
                }
            })
            .collect();
        PerVertexFeatures {
            positions: self.vertices.clone(),
            normals,
            invalid,
        }
    }

    /// Barycentric lumped mass: one third of each incident triangle's area.
    pub fn lumped_mass(&self) -> Vec<T> {
        let mut mass = vec![T::zero(); self.vertices.len()];
        let third = T::c(1.0 / 3.0);
        for (tri, a) in self.triangles.iter().zip(self.triangle_areas()) {
            for &i in tri {
                mass[i] += a * third;
            }
        }
        mass
    }

    pub fn bounding_box(&self) -> Option<(Vec3<T>, Vec3<T>)> {
        let first = *self.vertices.first()?;
        let mut lo = first;
        let mut hi = first;
        for v in &self.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        Some((lo, hi))
    }

    pub fn translated(&self, offset: Vec3<T>) -> Self {
        let vertices = self.vertices.iter().map(|&v| vec3::add(v, offset)).collect();
        Self {
            vertices,
            ..self.clone()
        }
    }

    /// Applies `v -> m v + t` to every vertex.
    pub fn transformed(&self, m: &vec3::Mat3<T>, t: Vec3<T>) -> Self {
        let vertices = self
            .vertices
            .iter()
            .map(|&v| vec3::add(vec3::mat_vec(m, v), t))
            .collect();
        Self {
            vertices,
            ..self.clone()
        }
    }

    /// Keeps the triangles flagged in `keep`, drops vertices no kept triangle
    /// references, and re-indexes. The returned mesh's vertex mask flags the
    /// surviving vertices of `self`.
    pub fn retain_triangles(&self, keep: &[bool]) -> Self {
        assert_eq!(keep.len(), self.triangles.len());
        let mut used = vec![false; self.vertices.len()];
        for (tri, &k) in self.triangles.iter().zip(keep) {
            if k {
                for &i in tri {
                    used[i] = true;
                }
            }
        }
        let mut remap = vec![usize::MAX; self.vertices.len()];
        let mut vertices = Vec::new();
        for (i, &u) in used.iter().enumerate() {
            if u {
                remap[i] = vertices.len();
                vertices.push(self.vertices[i]);
            }
        }
        let triangles = self
            .triangles
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(&[a, b, c], _)| [remap[a], remap[b], remap[c]])
            .collect();
        Self::assemble(vertices, triangles, Some(used))
    }

    /// Renumbers vertices so that old vertex `i` becomes `perm[i]`.
    pub fn permute_vertices(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.vertices.len());
        let mut vertices = vec![[T::zero(); 3]; self.vertices.len()];
        for (i, &p) in perm.iter().enumerate() {
            vertices[p] = self.vertices[i];
        }
        let triangles = self
            .triangles
            .iter()
            .map(|&[a, b, c]| [perm[a], perm[b], perm[c]])
            .collect();
        Self::assemble(vertices, triangles, None)
    }

    /// Reorders triangles so that old triangle `t` lands at `perm[t]`.
    pub fn permute_triangles(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.triangles.len());
        let mut triangles = vec![[0; 3]; self.triangles.len()];
        for (t, &p) in perm.iter().enumerate() {
            triangles[p] = self.triangles[t];
        }
        Self::assemble(self.vertices.clone(), triangles, self.vertex_mask.clone())
    }

    /// Closed loops of boundary edges, each listed as a vertex cycle.
    pub fn boundary_loops(&self) -> Vec<Vec<usize>> {
        let counts = edge_use_counts(&self.triangles);
        let mut next: HashMap<usize, Vec<usize>> = HashMap::new();
        for &[a, b, c] in self.triangles.iter() {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                if counts[&edge_key(u, v)] == 1 {
                    next.entry(u).or_default().push(v);
                }
            }
        }
        let mut starts: Vec<usize> = next.keys().copied().collect();
        starts.sort_unstable();
        let mut loops = Vec::new();
        for s in starts {
            while next.get(&s).is_some_and(|n| !n.is_empty()) {
                let mut cycle = vec![s];
                let mut cur = s;
                loop {
                    let Some(nv) = next.get_mut(&cur).and_then(|n| n.pop()) else {
                        break;
                    };
                    if nv == s {
                        break;
                    }
                    cycle.push(nv);
                    cur = nv;
                }
                loops.push(cycle);
            }
        }
        loops
    }

    /// Connected components over triangle adjacency, as a label per vertex
    /// (`usize::MAX` for vertices in no triangle) and the component count.
    pub fn connected_components(&self) -> (Vec<usize>, usize) {
        let n = self.vertices.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut used = vec![false; n];
        for &[a, b, c] in self.triangles.iter() {
            used[a] = true;
            used[b] = true;
            used[c] = true;
            for (u, v) in [(a, b), (b, c)] {
                let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
                if ru != rv {
                    parent[ru.max(rv)] = ru.min(rv);
                }
            }
        }
        let mut label = vec![usize::MAX; n];
        let mut ids: HashMap<usize, usize> = HashMap::new();
        for i in 0..n {
            if used[i] {
                let r = find(&mut parent, i);
                let next = ids.len();
                label[i] = *ids.entry(r).or_insert(next);
            }
        }
        (label, ids.len())
    }

    /// Stable 64-bit FNV-1a hash of positions and connectivity.
    pub fn content_hash(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        feed(&(self.vertices.len() as u64).to_le_bytes());
        for v in &self.vertices {
            for x in v {
                feed(&x.as_f64().to_le_bytes());
            }
        }
        for t in self.triangles.iter() {
            for &i in t {
                feed(&(i as u64).to_le_bytes());
            }
        }
        h
    }
}

/// Vector-Jacobian product of [`TriangleMesh::vertex_normals`]: maps a gradient
/// with respect to the unit vertex normals to a gradient with respect to the
/// vertex positions.
pub fn vertex_normals_vjp<T: Real>(
    vertices: &[Vec3<T>],
    triangles: &[[usize; 3]],
    grad_normals: &[Vec3<T>],
) -> Vec<Vec3<T>> {
    let n = vertices.len();
    let mut sums = vec![[T::zero(); 3]; n];
    let mut crosses = Vec::with_capacity(triangles.len());
    for &[a, b, c] in triangles {
        let e1 = vec3::sub(vertices[b], vertices[a]);
        let e2 = vec3::sub(vertices[c], vertices[a]);
        let cr = vec3::cross(e1, e2);
        for i in [a, b, c] {
            sums[i] = vec3::add(sums[i], cr);
        }
        crosses.push((e1, e2));
    }
    // d n / d s = (I - n n^T) / |s|
    let grad_sums: Vec<Vec3<T>> = sums
        .iter()
        .zip(grad_normals)
        .map(|(&s, &g)| {
            let len = vec3::norm(s);
            if len == T::zero() {
                return [T::zero(); 3];
            }
            let nrm = vec3::scale(s, T::one() / len);
            let proj = vec3::sub(g, vec3::scale(nrm, vec3::dot(nrm, g)));
            vec3::scale(proj, T::one() / len)
        })
        .collect();
    let mut out = vec![[T::zero(); 3]; n];
    for (&[a, b, c], &(e1, e2)) in triangles.iter().zip(&crosses) {
        let g = vec3::add(vec3::add(grad_sums[a], grad_sums[b]), grad_sums[c]);
        let ge1 = vec3::cross(e2, g);
        let ge2 = vec3::cross(g, e1);
        out[b] = vec3::add(out[b], ge1);
        out[c] = vec3::add(out[c], ge2);
        out[a] = vec3::sub(out[a], vec3::add(ge1, ge2));
    }
    out
}

fn edge_key(u: usize, v: usize) -> (usize, usize) {
    (u.min(v), u.max(v))
}

fn edge_use_counts(triangles: &[[usize; 3]]) -> HashMap<(usize, usize), usize> {
    let mut counts = HashMap::with_capacity(triangles.len() * 2);
    for &[a, b, c] in triangles {
        for (u, v) in [(a, b), (b, c), (c, a)] {
            *counts.entry(edge_key(u, v)).or_insert(0) += 1;
        }
    }
    counts
}

/// Regular `nx` x `ny` grid of unit squares in the z = 0 plane, split into
/// counter-clockwise triangles. Handy for tests and examples.
pub fn grid<T: Real>(nx: usize, ny: usize, spacing: f64) -> TriangleMesh<T> {
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([T::c(i as f64 * spacing), T::c(j as f64 * spacing), T::zero()]);
        }
    }
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            if (i + j) % 2 == 0 {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            } else {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            }
        }
    }
    TriangleMesh::new(vertices, triangles).expect("grid is valid")
}

/// Icosphere of the given radius after `subdivisions` rounds of 4-to-1 splits.
pub fn icosphere<T: Real>(radius: f64, subdivisions: usize) -> TriangleMesh<T> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<[f64; 3]> = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<[f64; 3]>| -> usize {
            *mid.entry(edge_key(a, b)).or_insert_with(|| {
                let (p, q) = (verts[a], verts[b]);
                verts.push([(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0, (p[2] + q[2]) / 2.0]);
                verts.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    let vertices = verts
        .iter()
        .map(|p| {
            let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            [T::c(p[0] / n * radius), T::c(p[1] / n * radius), T::c(p[2] / n * radius)]
        })
        .collect();
    TriangleMesh::new(vertices, faces).expect("icosphere is valid")
}
