//! Spectral diffusion blocks on triangle meshes and the mesh encoders built
//! from them.
//!
//! A block diffuses each channel for a learned time in a truncated
//! Laplacian eigenbasis, adds rotation-invariant products of tangent-plane
//! gradients, and mixes everything with a per-vertex MLP plus a residual.

use facrig_core::sparse::CsrMatrix;
use facrig_core::{laplacian_eigenbasis, vec3, Real, TriangleMesh};
use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::nn::{Init, Linear, Mlp, MlpCache, ParamSet};

/// Millimetres to network units.
pub const INPUT_SCALE: f64 = 0.01;

/// Everything a mesh encoder needs about one input mesh.
#[derive(Clone, Debug)]
pub struct MeshOperators<T> {
    /// Scaled positions relative to the mass-weighted centroid and unit
    /// vertex normals, `N x 6`.
    pub features: Array2<T>,
    /// Lumped masses normalized to sum 1.
    pub readout: Array1<T>,
    /// Lumped masses of the scaled mesh.
    pub mass: Array1<T>,
    /// `N x k`, mass-orthonormal.
    pub basis: Array2<T>,
    pub eigenvalues: Array1<T>,
    pub grad_x: CsrMatrix<T>,
    pub grad_y: CsrMatrix<T>,
    pub content_hash: u64,
}

impl<T: Real> MeshOperators<T> {
    /// `k` is clamped to `N - 1` for small meshes.
    pub fn build(mesh: &TriangleMesh<f64>, k: usize) -> Result<Self> {
        let n = mesh.vertex_count();
        if n < 3 || mesh.triangle_count() == 0 {
            return Err(ModelError::MissingOperators("mesh has no triangles".into()));
        }
        let scaled = mesh.with_vertices(mesh.vertices().iter().map(|p| vec3::scale(*p, INPUT_SCALE)).collect())?;
        let k = k.min(n - 1);
        let spectral = laplacian_eigenbasis(&scaled, k)?;
        let normals = scaled.vertex_normals().normals;
        let total: f64 = spectral.mass.iter().sum();
        let mut centroid = [0.0; 3];
        for (p, m) in scaled.vertices().iter().zip(&spectral.mass) {
            centroid = vec3::add(centroid, vec3::scale(*p, m / total));
        }
        let mut features = Array2::zeros((n, 6));
        for (i, (p, nr)) in scaled.vertices().iter().zip(&normals).enumerate() {
            for c in 0..3 {
                features[[i, c]] = T::of(p[c] - centroid[c]);
                features[[i, 3 + c]] = T::of(nr[c]);
            }
        }
        let (grad_x, grad_y) = tangent_gradients(&scaled, &normals);
        Ok(Self {
            features,
            readout: spectral.mass.iter().map(|m| T::of(m / total)).collect(),
            mass: spectral.mass.iter().map(|&m| T::of(m)).collect(),
            basis: spectral.eigenvectors.mapv(T::of),
            eigenvalues: spectral.eigenvalues.iter().map(|&l| T::of(l)).collect(),
            grad_x: grad_x.cast(),
            grad_y: grad_y.cast(),
            content_hash: mesh.content_hash(),
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.features.nrows()
    }

    pub fn cast<S: Real>(&self) -> MeshOperators<S> {
        let c = |a: &Array2<T>| a.mapv(|x| S::of(x.as_f64()));
        let c1 = |a: &Array1<T>| a.mapv(|x| S::of(x.as_f64()));
        MeshOperators {
            features: c(&self.features),
            readout: c1(&self.readout),
            mass: c1(&self.mass),
            basis: c(&self.basis),
            eigenvalues: c1(&self.eigenvalues),
            grad_x: self.grad_x.cast(),
            grad_y: self.grad_y.cast(),
            content_hash: self.content_hash,
        }
    }
}

/// Least-squares per-vertex gradients in a tangent frame whose first axis is
/// the projection of a fixed world axis, so the frame does not depend on
/// vertex or neighbour order.
fn tangent_gradients(mesh: &TriangleMesh<f64>, normals: &[[f64; 3]]) -> (CsrMatrix<f64>, CsrMatrix<f64>) {
    let n = mesh.vertex_count();
    let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &[a, b, c] in mesh.triangles() {
        for (u, v) in [(a, b), (b, c), (c, a), (b, a), (c, b), (a, c)] {
            nbrs[u].push(v);
        }
    }
    let v = mesh.vertices();
    let mut tx = Vec::new();
    let mut ty = Vec::new();
    for i in 0..n {
        let list = &mut nbrs[i];
        list.sort_unstable();
        list.dedup();
        let nr = normals[i];
        let axis = if nr[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let b1 = vec3::normalize(vec3::sub(axis, vec3::scale(nr, vec3::dot(axis, nr)))).unwrap();
        let b2 = vec3::cross(nr, b1);
        let d: Vec<[f64; 2]> = list
            .iter()
            .map(|&j| {
                let e = vec3::sub(v[j], v[i]);
                [vec3::dot(e, b1), vec3::dot(e, b2)]
            })
            .collect();
        let scale: f64 = d.iter().map(|p| p[0] * p[0] + p[1] * p[1]).sum::<f64>() / d.len().max(1) as f64;
        let eps = 1e-8 * scale.max(1e-30);
        let (mut a00, mut a01, mut a11) = (eps, 0.0, eps);
        for p in &d {
            a00 += p[0] * p[0];
            a01 += p[0] * p[1];
            a11 += p[1] * p[1];
        }
        let det = a00 * a11 - a01 * a01;
        let mut sx = 0.0;
        let mut sy = 0.0;
        for (&j, p) in list.iter().zip(&d) {
            let gx = (a11 * p[0] - a01 * p[1]) / det;
            let gy = (a00 * p[1] - a01 * p[0]) / det;
            tx.push((i, j, gx));
            ty.push((i, j, gy));
            sx += gx;
            sy += gy;
        }
        tx.push((i, i, -sx));
        ty.push((i, i, -sy));
    }
    (CsrMatrix::from_triplets(n, n, tx), CsrMatrix::from_triplets(n, n, ty))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    Diffusion,
    /// Per-vertex residual MLPs without any spatial coupling.
    PointNet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionBlock {
    pub time: usize,
    pub a_re: usize,
    pub a_im: usize,
    pub mlp: Mlp,
    pub width: usize,
}

struct BlockCache<T> {
    spec: Array2<T>,
    decay: Array2<T>,
    gx: Array2<T>,
    gy: Array2<T>,
    bre: Array2<T>,
    bim: Array2<T>,
    gfeat: Array2<T>,
    mlp: MlpCache<T>,
}

impl DiffusionBlock {
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, width: usize, rng: &mut impl Rng) -> Self {
        let times = Array2::from_shape_fn((1, width), |(_, c)| {
            let f = if width > 1 { c as f64 / (width - 1) as f64 } else { 0.5 };
            T::of(10f64.powf(-4.0 + 2.0 * f))
        });
        let time = ps.add(format!("{name}.time"), times);
        let a_re = ps.add(format!("{name}.a_re"), crate::nn::init_matrix(width, width, width, Init::Lecun, rng));
        let a_im = ps.add(format!("{name}.a_im"), crate::nn::init_matrix(width, width, width, Init::Lecun, rng));
        let mlp = Mlp::new(ps, &format!("{name}.mlp"), &[3 * width, width, width], Init::Lecun, rng);
        Self {
            time,
            a_re,
            a_im,
            mlp,
            width,
        }
    }

    fn decay<T: Real>(&self, ps: &ParamSet<T>, ops: &MeshOperators<T>) -> Array2<T> {
        let t = ps.value(self.time);
        Array2::from_shape_fn((ops.eigenvalues.len(), self.width), |(j, c)| {
            (-(ops.eigenvalues[j] * t[[0, c]].abs())).exp()
        })
    }

    fn forward<T: Real>(&self, ps: &ParamSet<T>, ops: &MeshOperators<T>, x: Array2<T>) -> (Array2<T>, BlockCache<T>) {
        let mx = &x * &ops.mass.view().insert_axis(Axis(1));
        let spec = ops.basis.t().dot(&mx);
        let decay = self.decay(ps, ops);
        let xd = ops.basis.dot(&(&spec * &decay));
        let gx = ops.grad_x.mul_dense(xd.view());
        let gy = ops.grad_y.mul_dense(xd.view());
        let (are, aim) = (ps.value(self.a_re), ps.value(self.a_im));
        let bre = gx.dot(are) - gy.dot(aim);
        let bim = gy.dot(are) + gx.dot(aim);
        let mut gfeat = &gx * &bre + &gy * &bim;
        gfeat.mapv_inplace(|v| v.tanh());
        let w = self.width;
        let mut h = Array2::zeros((x.nrows(), 3 * w));
        h.slice_mut(s![.., 0..w]).assign(&x);
        h.slice_mut(s![.., w..2 * w]).assign(&xd);
        h.slice_mut(s![.., 2 * w..]).assign(&gfeat);
        let (out, mlp) = self.mlp.forward_cached(ps, h);
        let y = &x + &out;
        (
            y,
            BlockCache {
                spec,
                decay,
                gx,
                gy,
                bre,
                bim,
                gfeat,
                mlp,
            },
        )
    }

    fn backward<T: Real>(&self, ps: &mut ParamSet<T>, ops: &MeshOperators<T>, c: &BlockCache<T>, dy: Array2<T>) -> Array2<T> {
        let w = self.width;
        let dh = self.mlp.backward(ps, &c.mlp, dy.clone());
        let mut dx = dy + &dh.slice(s![.., 0..w]);
        let mut dxd = dh.slice(s![.., w..2 * w]).to_owned();
        let mut ds = dh.slice(s![.., 2 * w..3 * w]).to_owned();
        Zip::from(&mut ds).and(&c.gfeat).for_each(|d, &g| *d = *d * (T::one() - g * g));
        let mut dgx = &ds * &c.bre;
        let mut dgy = &ds * &c.bim;
        let dbre = &ds * &c.gx;
        let dbim = &ds * &c.gy;
        let (are, aim) = (ps.value(self.a_re).clone(), ps.value(self.a_im).clone());
        let dare = c.gx.t().dot(&dbre) + c.gy.t().dot(&dbim);
        let daim = c.gx.t().dot(&dbim) - c.gy.t().dot(&dbre);
        *ps.grad_mut(self.a_re) += &dare;
        *ps.grad_mut(self.a_im) += &daim;
        dgx = dgx + dbre.dot(&are.t()) + dbim.dot(&aim.t());
        dgy = dgy - dbre.dot(&aim.t()) + dbim.dot(&are.t());
        dxd += &ops.grad_x.mul_dense_transpose(dgx.view());
        dxd += &ops.grad_y.mul_dense_transpose(dgy.view());
        let dd = ops.basis.t().dot(&dxd);
        let dspec = &dd * &c.decay;
        let de = &dd * &c.spec;
        let t = ps.value(self.time).clone();
        let mut dt = Array2::zeros((1, w));
        for j in 0..ops.eigenvalues.len() {
            let lam = ops.eigenvalues[j];
            for ch in 0..w {
                let sign = if t[[0, ch]] >= T::zero() { T::one() } else { -T::one() };
                dt[[0, ch]] -= de[[j, ch]] * lam * c.decay[[j, ch]] * sign;
            }
        }
        *ps.grad_mut(self.time) += &dt;
        let dmx = ops.basis.dot(&dspec);
        dx += &(&dmx * &ops.mass.view().insert_axis(Axis(1)));
        dx
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    Diffusion(DiffusionBlock),
    Point(Mlp),
}

enum BlockState<T> {
    Diffusion(BlockCache<T>),
    Point(MlpCache<T>),
}

/// Lift, blocks, per-vertex head, mass-weighted mean readout.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshEncoder {
    pub kind: EncoderKind,
    pub lift: Linear,
    /// Projection of the broadcast view code, without bias.
    pub lift_code: Option<usize>,
    pub blocks: Vec<Block>,
    pub head: Linear,
    pub width: usize,
}

pub struct EncoderCache<T> {
    lifted_input: Array2<T>,
    code: Option<Vec<T>>,
    blocks: Vec<BlockState<T>>,
    last: Array2<T>,
}

impl MeshEncoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        kind: EncoderKind,
        code_dim: Option<usize>,
        width: usize,
        blocks: usize,
        out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let lift = Linear::new(ps, &format!("{name}.lift"), 6, width, Init::Lecun, rng);
        let lift_code = code_dim.map(|d| {
            ps.add(
                format!("{name}.lift_code"),
                crate::nn::init_matrix(d, width, d, Init::Lecun, rng),
            )
        });
        let blocks = (0..blocks)
            .map(|i| match kind {
                EncoderKind::Diffusion => Block::Diffusion(DiffusionBlock::new(ps, &format!("{name}.block{i}"), width, rng)),
                EncoderKind::PointNet => {
                    Block::Point(Mlp::new(ps, &format!("{name}.block{i}"), &[width, width, width], Init::Lecun, rng))
                }
            })
            .collect();
        let head = Linear::new(ps, &format!("{name}.head"), width, out, Init::Lecun, rng);
        Self {
            kind,
            lift,
            lift_code,
            blocks,
            head,
            width,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.head.outputs
    }

    pub fn forward<T: Real>(
        &self,
        ps: &ParamSet<T>,
        ops: &MeshOperators<T>,
        code: Option<&[T]>,
    ) -> Result<(Vec<T>, EncoderCache<T>)> {
        let mut h = self.lift.forward(ps, ops.features.view());
        let code = match (self.lift_code, code) {
            (Some(id), Some(c)) => {
                let w = ps.value(id);
                if c.len() != w.nrows() {
                    return Err(ModelError::DimensionMismatch {
                        expected: w.nrows(),
                        actual: c.len(),
                    });
                }
                let cv = ArrayView2::from_shape((1, c.len()), c).unwrap();
                let proj = cv.dot(w);
                h += &proj.row(0);
                Some(c.to_vec())
            }
            _ => None,
        };
        let mut states = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            h = match b {
                Block::Diffusion(d) => {
                    let (y, c) = d.forward(ps, ops, h);
                    states.push(BlockState::Diffusion(c));
                    y
                }
                Block::Point(m) => {
                    let (out, c) = m.forward_cached(ps, h.clone());
                    states.push(BlockState::Point(c));
                    h + out
                }
            };
        }
        let y = self.head.forward(ps, h.view());
        let z = ops.readout.dot(&y);
        Ok((
            z.to_vec(),
            EncoderCache {
                lifted_input: ops.features.clone(),
                code,
                blocks: states,
                last: h,
            },
        ))
    }

    /// Accumulates parameter gradients; returns the gradient with respect to
    /// the view code when one was used.
    pub fn backward<T: Real>(
        &self,
        ps: &mut ParamSet<T>,
        ops: &MeshOperators<T>,
        cache: &EncoderCache<T>,
        dz: &[T],
    ) -> Option<Vec<T>> {
        let dzv = ArrayView2::from_shape((1, dz.len()), dz).unwrap();
        let dy = ops.readout.view().insert_axis(Axis(1)).dot(&dzv);
        let mut dh = self.head.backward(ps, cache.last.view(), dy.view());
        for (b, st) in self.blocks.iter().zip(&cache.blocks).rev() {
            dh = match (b, st) {
                (Block::Diffusion(d), BlockState::Diffusion(c)) => d.backward(ps, ops, c, dh),
                (Block::Point(m), BlockState::Point(c)) => {
                    let d = m.backward(ps, c, dh.clone());
                    dh + d
                }
                _ => unreachable!(),
            };
        }
        self.lift.backward_params(ps, cache.lifted_input.view(), dh.view());
        match (self.lift_code, &cache.code) {
            (Some(id), Some(c)) => {
                let sum = dh.sum_axis(Axis(0));
                let cv = ArrayView2::from_shape((c.len(), 1), c).unwrap();
                let sv = sum.view().insert_axis(Axis(0));
                *ps.grad_mut(id) += &cv.dot(&sv);
                Some(ps.value(id).dot(&sum).to_vec())
            }
            _ => None,
        }
    }
}
