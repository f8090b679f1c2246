//! Optimization-based inverse rig: box-constrained least squares on the AU
//! deltas by cyclic coordinate descent.

use facrig_core::rig::BlendshapeRig;
use facrig_core::{vec3, TriangleMesh};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

/// Sweeps stop once the objective improves by less than this.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeolResult {
    pub weights: Vec<f64>,
    /// Objective before the first sweep and after every sweep.
    pub objective: Vec<f64>,
    pub converged: bool,
}

impl SeolResult {
    pub fn sweeps(&self) -> usize {
        self.objective.len() - 1
    }
}

/// `min_w |template + B w - target|^2` over `w in [0, 1]^K`, at most `iters`
/// sweeps. Each sweep visits the AUs in descending order of the reduction a
/// single clamped update would achieve at the start of the sweep.
pub fn inverse_rig_seol(rig: &BlendshapeRig, target: &TriangleMesh<f64>, iters: usize) -> Result<SeolResult> {
    let n = rig.vertex_count();
    if target.vertex_count() != n {
        return Err(ModelError::CorrespondenceMismatch(format!(
            "target has {} vertices, the rig {n}",
            target.vertex_count()
        )));
    }
    let k = rig.au_shapes.len();
    let flat = |v: &[[f64; 3]]| -> Vec<f64> { v.iter().flatten().copied().collect() };
    let basis: Vec<Vec<f64>> = rig.au_shapes.iter().map(|b| flat(b)).collect();
    let norms: Vec<f64> = basis.iter().map(|b| b.iter().map(|x| x * x).sum()).collect();
    let mut res: Vec<f64> = target
        .vertices()
        .iter()
        .zip(rig.template.vertices())
        .flat_map(|(t, p)| vec3::sub(*t, *p))
        .collect();
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let mut w = vec![0.0; k];
    let mut f = dot(&res, &res);
    let mut objective = vec![f];
    let mut converged = false;

    // Clamped coordinate update and the reduction it yields.
    let update = |w_k: f64, g: f64, nk: f64| -> (f64, f64) {
        let new = (w_k + g / nk).clamp(0.0, 1.0);
        let d = new - w_k;
        (new, 2.0 * d * g - d * d * nk)
    };

    for _ in 0..iters {
        let mut order: Vec<(usize, f64)> = (0..k)
            .filter(|&j| norms[j] > 0.0)
            .map(|j| (j, update(w[j], dot(&basis[j], &res), norms[j]).1))
            .collect();
        order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        for &(j, _) in &order {
            let g = dot(&basis[j], &res);
            let (new, _) = update(w[j], g, norms[j]);
            let d = new - w[j];
            if d != 0.0 {
                for (r, b) in res.iter_mut().zip(&basis[j]) {
                    *r -= d * b;
                }
                w[j] = new;
            }
        }
        let next = dot(&res, &res);
        let improvement = f - next;
        f = next;
        objective.push(f);
        if improvement < CONVERGENCE_TOLERANCE {
            converged = true;
            break;
        }
    }
    Ok(SeolResult {
        weights: w,
        objective,
        converged,
    })
}
