//! Dense layers with hand-written backward passes, and Adam.
//!
//! Activations are row-major `rows x features` blocks. Layers own only the
//! indices of their parameters inside a [`ParamSet`], so one set can be
//! optimized, checkpointed and cast as a unit.

use facrig_core::Real;
use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Array2<T>,
    pub grad: Array2<T>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Registers a parameter and returns its index. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Array2<T>) -> usize {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        let grad = Array2::zeros(value.raw_dim());
        self.params.push(Param { name, value, grad });
        self.params.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn value(&self, id: usize) -> &Array2<T> {
        &self.params[id].value
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Array2<T> {
        &mut self.params[id].value
    }

    pub fn grad(&self, id: usize) -> &Array2<T> {
        &self.params[id].grad
    }

    pub fn grad_mut(&mut self, id: usize) -> &mut Array2<T> {
        &mut self.params[id].grad
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(T::zero());
        }
    }

    pub fn scale_grad(&mut self, s: T) {
        for p in &mut self.params {
            p.grad.mapv_inplace(|g| g * s);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter())
            .map(|g| g.as_f64() * g.as_f64())
            .sum::<f64>()
            .sqrt()
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn cast<S: Real>(&self) -> ParamSet<S> {
        ParamSet {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.mapv(|x| S::of(x.as_f64())),
                    grad: p.grad.mapv(|x| S::of(x.as_f64())),
                })
                .collect(),
        }
    }

    /// Parameter values concatenated in registration order.
    pub fn flat_values(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.grad.iter().copied()).collect()
    }

    pub fn set_flat_values(&mut self, values: &[T]) {
        assert_eq!(values.len(), self.num_values());
        let mut it = values.iter();
        for p in &mut self.params {
            for v in p.value.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
    }
}

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Normal with variance `2 / fan_in`.
    He,
    /// Normal with variance `1 / fan_in`.
    Lecun,
    Zeros,
}

pub fn init_matrix<T: Real>(rows: usize, cols: usize, fan_in: usize, init: Init, rng: &mut impl Rng) -> Array2<T> {
    let std = match init {
        Init::He => (2.0 / fan_in.max(1) as f64).sqrt(),
        Init::Lecun => (1.0 / fan_in.max(1) as f64).sqrt(),
        Init::Zeros => return Array2::zeros((rows, cols)),
    };
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = rng.sample(StandardNormal);
        T::of(z * std)
    })
}

/// `y = x W + b` with `W` stored `in x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<T: Real>(
        ps: &mut ParamSet<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        let w = ps.add(format!("{name}.w"), init_matrix(inputs, outputs, inputs, init, rng));
        let b = ps.add(format!("{name}.b"), Array2::zeros((1, outputs)));
        Self { w, b, inputs, outputs }
    }

    pub fn forward<T: Real>(&self, ps: &ParamSet<T>, x: ArrayView2<T>) -> Array2<T> {
        let mut y = x.dot(ps.value(self.w));
        y += &ps.value(self.b).row(0);
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward<T: Real>(&self, ps: &mut ParamSet<T>, x: ArrayView2<T>, dy: ArrayView2<T>) -> Array2<T> {
        self.backward_params(ps, x, dy);
        dy.dot(&ps.value(self.w).t())
    }

    /// Accumulates parameter gradients only.
    pub fn backward_params<T: Real>(&self, ps: &mut ParamSet<T>, x: ArrayView2<T>, dy: ArrayView2<T>) {
        let dw = x.t().dot(&dy);
        *ps.grad_mut(self.w) += &dw;
        let db = dy.sum_axis(Axis(0));
        ps.grad_mut(self.b).row_mut(0).zip_mut_with(&db, |a, &b| *a += b);
    }
}

pub fn relu<T: Real>(x: &mut Array2<T>) {
    x.mapv_inplace(|v| v.max(T::zero()));
}

/// Zeroes `dy` where the post-activation output `y` is not positive.
pub fn relu_backward<T: Real>(y: ArrayView2<T>, dy: &mut Array2<T>) {
    Zip::from(dy).and(&y).for_each(|d, &v| {
        if v <= T::zero() {
            *d = T::zero();
        }
    });
}

/// Linear layers with ReLU between them (none after the last).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

#[derive(Clone, Debug)]
pub struct MlpCache<T> {
    /// Input followed by the post-activation output of every hidden layer.
    acts: Vec<Array2<T>>,
}

impl Mlp {
    /// `dims = [in, hidden..., out]`. The final layer uses `last_init`.
    pub fn new<T: Real>(ps: &mut ParamSet<T>, name: &str, dims: &[usize], last_init: Init, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2);
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let init = if i + 1 == n { last_init } else { Init::He };
                Linear::new(ps, &format!("{name}.{i}"), dims[i], dims[i + 1], init, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn forward<T: Real>(&self, ps: &ParamSet<T>, x: ArrayView2<T>) -> Array2<T> {
        self.forward_cached(ps, x.to_owned()).0
    }

    pub fn forward_cached<T: Real>(&self, ps: &ParamSet<T>, x: Array2<T>) -> (Array2<T>, MlpCache<T>) {
        let mut acts = vec![x];
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = l.forward(ps, acts[i].view());
            if i == last {
                return (y, MlpCache { acts });
            }
            relu(&mut y);
            acts.push(y);
        }
        unreachable!()
    }

    pub fn backward<T: Real>(&self, ps: &mut ParamSet<T>, cache: &MlpCache<T>, dy: Array2<T>) -> Array2<T> {
        let mut d = dy;
        for (i, l) in self.layers.iter().enumerate().rev() {
            d = l.backward(ps, cache.acts[i].view(), d.view());
            if i > 0 {
                relu_backward(cache.acts[i].view(), &mut d);
            }
        }
        d
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(10.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new<T: Real>(ps: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros = || ps.params().iter().map(|p| Array2::zeros(p.value.raw_dim())).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update from the accumulated gradients. Moments are kept in `f64`.
    pub fn step<T: Real>(&mut self, ps: &mut ParamSet<T>, lr: f64) {
        self.step += 1;
        let c = &self.config;
        let scale = match c.clip_norm {
            Some(max) => {
                let n = ps.grad_norm();
                if n > max {
                    max / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for ((p, m), v) in ps.params_mut().iter_mut().zip(&mut self.m).zip(&mut self.v) {
            Zip::from(&mut p.value).and(&p.grad).and(m).and(v).for_each(|w, &g, m, v| {
                let g = g.as_f64() * scale;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let update = lr * (*m / bc1) / ((*v / bc2).sqrt() + c.eps);
                *w = T::of(w.as_f64() - update);
            });
        }
    }
}
