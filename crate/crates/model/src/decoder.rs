//! Per-triangle MLP predicting deformation Jacobians as identity plus a delta.

use facrig_core::gradient::JacobianField;
use facrig_core::{Real, TriangleMesh};
use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{ModelError, Result};
use crate::nn::{init_matrix, relu, relu_backward, Init, Linear, Mlp, MlpCache, ParamSet};

/// Centroid scale for the decoder inputs (mm to network units).
pub const POSITION_SCALE: f64 = 0.1;

/// Scaled centroid and unit normal of every triangle, `F x 6`.
pub fn triangle_inputs<T: Real>(mesh: &TriangleMesh<f64>) -> Array2<T> {
    let f = mesh.triangle_features();
    let mut out = Array2::zeros((mesh.triangle_count(), 6));
    for (t, (c, n)) in f.centers.iter().zip(&f.normals).enumerate() {
        for k in 0..3 {
            out[[t, k]] = T::of(c[k] * POSITION_SCALE);
            out[[t, 3 + k]] = T::of(n[k]);
        }
    }
    out
}

/// The first layer is split into a per-triangle part and a code part shared by
/// all triangles, so the code projection is computed once per mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianDecoder {
    pub first: Linear,
    pub first_code: usize,
    pub rest: Mlp,
    pub code_dim: usize,
}

pub struct DecoderCache<T> {
    inputs: Array2<T>,
    code: Vec<T>,
    hidden: Array2<T>,
    rest: MlpCache<T>,
}

impl JacobianDecoder {
    /// `layers` linear layers in total, the last one zero-initialized.
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, code_dim: usize, width: usize, layers: usize, rng: &mut impl Rng) -> Self {
        assert!(layers >= 2);
        let fan_in = 6 + code_dim;
        let first = Linear::new(ps, &format!("{name}.0"), 6, width, Init::Zeros, rng);
        *ps.value_mut(first.w) = init_matrix(6, width, 6, Init::He, rng);
        let first_code = ps.add(format!("{name}.0.code"), init_matrix(code_dim, width, fan_in, Init::He, rng));
        let mut dims = vec![width; layers - 1];
        dims.push(9);
        let rest = Mlp::new(ps, &format!("{name}.r"), &dims, Init::Zeros, rng);
        Self {
            first,
            first_code,
            rest,
            code_dim,
        }
    }

    /// Raw `F x 9` deltas, row-major per triangle.
    pub fn forward<T: Real>(&self, ps: &ParamSet<T>, inputs: ArrayView2<T>, code: &[T]) -> Result<(Array2<T>, DecoderCache<T>)> {
        if code.len() != self.code_dim {
            return Err(ModelError::DimensionMismatch {
                expected: self.code_dim,
                actual: code.len(),
            });
        }
        if inputs.ncols() != 6 {
            return Err(ModelError::DimensionMismatch {
                expected: 6,
                actual: inputs.ncols(),
            });
        }
        let cv = ArrayView2::from_shape((1, code.len()), code).unwrap();
        let shared = cv.dot(ps.value(self.first_code));
        let mut h = self.first.forward(ps, inputs);
        h += &shared.row(0);
        relu(&mut h);
        let (out, rest) = self.rest.forward_cached(ps, h.clone());
        Ok((
            out,
            DecoderCache {
                inputs: inputs.to_owned(),
                code: code.to_vec(),
                hidden: h,
                rest,
            },
        ))
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the code.
    pub fn backward<T: Real>(&self, ps: &mut ParamSet<T>, cache: &DecoderCache<T>, dout: Array2<T>) -> Vec<T> {
        let mut dh = self.rest.backward(ps, &cache.rest, dout);
        relu_backward(cache.hidden.view(), &mut dh);
        self.first.backward_params(ps, cache.inputs.view(), dh.view());
        let sum = dh.sum_axis(Axis(0));
        let cv = ArrayView2::from_shape((cache.code.len(), 1), &cache.code).unwrap();
        *ps.grad_mut(self.first_code) += &cv.dot(&sum.view().insert_axis(Axis(0)));
        ps.value(self.first_code).dot(&sum).to_vec()
    }
}

/// `I + delta` per triangle.
pub fn to_field<T: Real>(raw: &Array2<T>) -> JacobianField<T> {
    let jacobians = raw
        .rows()
        .into_iter()
        .map(|r| std::array::from_fn(|i| std::array::from_fn(|j| r[3 * i + j] + if i == j { T::one() } else { T::zero() })))
        .collect();
    JacobianField { jacobians }
}

/// Flattens a field gradient to the `F x 9` layout of the raw output.
pub fn field_grad_to_raw<T: Real>(grad: &JacobianField<T>) -> Array2<T> {
    Array2::from_shape_vec((grad.len(), 9), grad.to_flat()).unwrap()
}
