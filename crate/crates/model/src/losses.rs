//! Decoder and encoder objectives with their gradients.
//!
//! Every term is mean-reduced over its elements: vertices for positions and
//! normals, triangles for Jacobians, entries for codes.

use facrig_core::gradient::JacobianField;
use facrig_core::mesh::vertex_normals_vjp;
use facrig_core::rig::SourceTag;
use facrig_core::{vec3, Real, TriangleMesh, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_v: f64,
    pub lambda_g: f64,
    pub lambda_n: f64,
    pub lambda_e: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_v: 10.0,
            lambda_g: 1.0,
            lambda_n: 1.0,
            lambda_e: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_v, self.lambda_g, self.lambda_n, self.lambda_e];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(ModelError::UnknownConfig(format!("loss weights must be nonnegative: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DecoderLoss {
    pub total: f64,
    /// Unweighted mean squared vertex distance.
    pub vertices: f64,
    pub jacobians: f64,
    pub normals: f64,
}

#[derive(Clone, Debug)]
pub struct DecoderLossGrad<T> {
    pub loss: DecoderLoss,
    /// Gradient with respect to the predicted vertex positions.
    pub d_vertices: Vec<Vec3<T>>,
    /// Gradient with respect to the predicted Jacobians.
    pub d_field: JacobianField<T>,
}

fn check_shapes<T: Real>(
    m_e: &TriangleMesh<T>,
    m_e_star: &TriangleMesh<T>,
    g: &JacobianField<T>,
    g_star: &JacobianField<T>,
) -> Result<()> {
    if m_e.vertex_count() != m_e_star.vertex_count() || m_e.triangles() != m_e_star.triangles() {
        return Err(ModelError::ShapeMismatch(format!(
            "meshes have {} and {} vertices or differ in triangulation",
            m_e.vertex_count(),
            m_e_star.vertex_count()
        )));
    }
    if g.len() != g_star.len() || g.len() != m_e.triangle_count() {
        return Err(ModelError::ShapeMismatch(format!(
            "fields have {} and {} matrices for {} triangles",
            g.len(),
            g_star.len(),
            m_e.triangle_count()
        )));
    }
    Ok(())
}

/// `lambda_v |v - v*|^2 + lambda_g |g - g*|^2 + lambda_n |n - n*|^2`.
pub fn decoder_loss<T: Real>(
    m_e: &TriangleMesh<T>,
    m_e_star: &TriangleMesh<T>,
    g: &JacobianField<T>,
    g_star: &JacobianField<T>,
    weights: &LossWeights,
) -> Result<DecoderLoss> {
    Ok(decoder_loss_grad(m_e, m_e_star, g, g_star, weights)?.loss)
}

pub fn decoder_loss_grad<T: Real>(
    m_e: &TriangleMesh<T>,
    m_e_star: &TriangleMesh<T>,
    g: &JacobianField<T>,
    g_star: &JacobianField<T>,
    weights: &LossWeights,
) -> Result<DecoderLossGrad<T>> {
    check_shapes(m_e, m_e_star, g, g_star)?;
    let n = m_e.vertex_count();
    let f = g.len();
    let inv_n = T::one() / T::of(n as f64);
    let inv_f = T::one() / T::of(f as f64);
    let two = T::c(2.0);

    let mut lv = T::zero();
    let mut d_vertices = vec![[T::zero(); 3]; n];
    let cv = T::of(weights.lambda_v) * two * inv_n;
    for ((a, b), d) in m_e.vertices().iter().zip(m_e_star.vertices()).zip(&mut d_vertices) {
        let diff = vec3::sub(*b, *a);
        lv += vec3::dot(diff, diff);
        *d = vec3::scale(diff, cv);
    }
    lv *= inv_n;

    let mut lg = T::zero();
    let cg = T::of(weights.lambda_g) * two * inv_f;
    let mut d_field = JacobianField::zeros(f);
    for ((a, b), d) in g.jacobians.iter().zip(&g_star.jacobians).zip(&mut d_field.jacobians) {
        for r in 0..3 {
            for c in 0..3 {
                let diff = b[r][c] - a[r][c];
                lg += diff * diff;
                d[r][c] = diff * cg;
            }
        }
    }
    lg *= inv_f;

    let na = m_e.vertex_normals().normals;
    let nb = m_e_star.vertex_normals().normals;
    let mut ln = T::zero();
    let cn = T::of(weights.lambda_n) * two * inv_n;
    let mut d_normals = vec![[T::zero(); 3]; n];
    for ((a, b), d) in na.iter().zip(&nb).zip(&mut d_normals) {
        let diff = vec3::sub(*b, *a);
        ln += vec3::dot(diff, diff);
        *d = vec3::scale(diff, cn);
    }
    ln *= inv_n;
    if weights.lambda_n != 0.0 {
        let extra = vertex_normals_vjp(m_e_star.vertices(), m_e_star.triangles(), &d_normals);
        for (d, e) in d_vertices.iter_mut().zip(extra) {
            *d = vec3::add(*d, e);
        }
    }

    let (lv, lg, ln) = (lv.as_f64(), lg.as_f64(), ln.as_f64());
    Ok(DecoderLossGrad {
        loss: DecoderLoss {
            total: weights.lambda_v * lv + weights.lambda_g * lg + weights.lambda_n * ln,
            vertices: lv,
            jacobians: lg,
            normals: ln,
        },
        d_vertices,
        d_field,
    })
}

/// `mean (label - z_FACS)^2 + mean z_ext^2`; `z` holds `label.len()` FACS
/// entries followed by the extension.
pub fn encoder_loss_stage1<T: Real>(label: &[T], z: &[T]) -> Result<(f64, Vec<T>)> {
    let k = label.len();
    if z.len() < k || k == 0 {
        return Err(ModelError::ShapeMismatch(format!("label has {k} entries, code has {}", z.len())));
    }
    let mut grad = vec![T::zero(); z.len()];
    let mut facs = T::zero();
    let ck = T::c(2.0) / T::of(k as f64);
    for i in 0..k {
        let d = z[i] - label[i];
        facs += d * d;
        grad[i] = d * ck;
    }
    let mut loss = facs.as_f64() / k as f64;
    let ext = z.len() - k;
    if ext > 0 {
        let ce = T::c(2.0) / T::of(ext as f64);
        let mut s = T::zero();
        for i in k..z.len() {
            s += z[i] * z[i];
            grad[i] = z[i] * ce;
        }
        loss += s.as_f64() / ext as f64;
    }
    Ok((loss, grad))
}

/// Penalty for leaving `[0, 1]`.
pub fn range_penalty<T: Real>(x: T) -> T {
    if x < T::zero() {
        -x
    } else if x > T::one() {
        x - T::one()
    } else {
        T::zero()
    }
}

/// Mean range penalty with its subgradient (zero at the kinks).
pub fn range_regularizer<T: Real>(z: &[T]) -> (f64, Vec<T>) {
    if z.is_empty() {
        return (0.0, Vec::new());
    }
    let inv = T::one() / T::of(z.len() as f64);
    let mut s = T::zero();
    let grad = z
        .iter()
        .map(|&x| {
            s += range_penalty(x);
            if x < T::zero() {
                -inv
            } else if x > T::one() {
                inv
            } else {
                T::zero()
            }
        })
        .collect();
    (s.as_f64() / z.len() as f64, grad)
}

/// One code of a stage-2 batch.
#[derive(Clone, Copy, Debug)]
pub struct CodeSample<'a, T> {
    pub source: SourceTag,
    pub label: Option<&'a [T]>,
    pub code: &'a [T],
}

/// Stage-1 loss averaged over labeled samples plus the range penalty averaged
/// over scan-like samples. Returns the gradient for every code.
pub fn encoder_loss_stage2<T: Real>(batch: &[CodeSample<T>]) -> Result<(f64, Vec<Vec<T>>)> {
    let n_lab = batch.iter().filter(|s| s.source.is_labeled()).count();
    let n_scan = batch.len() - n_lab;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for (i, s) in batch.iter().enumerate() {
        let (l, mut g) = if s.source.is_labeled() {
            let label = s.label.ok_or(ModelError::MissingLabel(i))?;
            let (l, g) = encoder_loss_stage1(label, s.code)?;
            (l / n_lab as f64, g.into_iter().map(|x| x / T::of(n_lab as f64)).collect::<Vec<_>>())
        } else {
            let (l, g) = range_regularizer(s.code);
            (l / n_scan as f64, g)
        };
        if !s.source.is_labeled() {
            g.iter_mut().for_each(|x| *x /= T::of(n_scan as f64));
        }
        total += l;
        grads.push(g);
    }
    Ok((total, grads))
}
