//! Random rigid-ish perturbation and hole cutting for encoder inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::vec3::{self, Vec3};
use crate::Real;

/// Largest fraction of vertices augmentation may remove.
pub const MAX_REMOVED_FRACTION: f64 = 0.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationConfig {
    /// Shift drawn uniformly from `[-s, s]` per axis (mm).
    pub shift_range: [f64; 3],
    /// Independent per-axis scale drawn from `[low, high]`.
    pub scale_range: [f64; 2],
    /// Probability of applying the front-facial mask.
    pub mask_probability: f64,
    /// Depth fraction (of the z extent, from the back) cut by the front mask.
    pub mask_depth_fraction: f64,
    /// Inclusive range of random hole counts.
    pub hole_count_range: [usize; 2],
    pub hole_radius_range: [f64; 2],
    /// Holes placed at given centers (after shift and scale) in addition to the random ones.
    #[serde(default)]
    pub fixed_holes: Vec<(Vec3<f64>, f64)>,
    pub seed: u64,
}

impl AugmentationConfig {
    /// No-op configuration.
    pub fn identity(seed: u64) -> Self {
        Self {
            shift_range: [0.0; 3],
            scale_range: [1.0, 1.0],
            mask_probability: 0.0,
            mask_depth_fraction: 0.25,
            hole_count_range: [0, 0],
            hole_radius_range: [0.0, 0.0],
            fixed_holes: Vec::new(),
            seed,
        }
    }

    /// Defaults used for training: a few mm of shift, +-10 % scale, up to
    /// three holes of 5-15 mm.
    pub fn training(seed: u64) -> Self {
        Self {
            shift_range: [5.0, 5.0, 5.0],
            scale_range: [0.9, 1.1],
            mask_probability: 0.3,
            mask_depth_fraction: 0.25,
            hole_count_range: [0, 3],
            hole_radius_range: [5.0, 15.0],
            fixed_holes: Vec::new(),
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("augmentation: {m}")));
        if self.shift_range.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("shift range must be finite and nonnegative");
        }
        let [lo, hi] = self.scale_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad("scale range must be a nonempty interval");
        }
        if lo <= 0.0 && hi >= 0.0 {
            return bad("scale range must exclude zero");
        }
        if !(0.0..=1.0).contains(&self.mask_probability) || !(0.0..1.0).contains(&self.mask_depth_fraction) {
            return bad("mask probability and depth fraction must lie in [0, 1]");
        }
        if self.hole_count_range[0] > self.hole_count_range[1] {
            return bad("hole count range is empty");
        }
        let [rlo, rhi] = self.hole_radius_range;
        if !(rlo >= 0.0 && rlo <= rhi) {
            return bad("hole radius range is empty");
        }
        Ok(())
    }
}

/// Applies shift and scale, then the optional front mask and Euclidean-ball
/// holes. Removed geometry is recorded in the output's vertex mask.
pub fn augment<T: Real>(mesh: &TriangleMesh<T>, cfg: &AugmentationConfig) -> Result<TriangleMesh<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut shift = [0.0f64; 3];
    for (s, r) in shift.iter_mut().zip(cfg.shift_range) {
        if r > 0.0 {
            *s = rng.random_range(-r..=r);
        }
    }
    let mut scale = [1.0f64; 3];
    let [lo, hi] = cfg.scale_range;
    for s in scale.iter_mut() {
        *s = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    }
    let vertices: Vec<Vec3<T>> = mesh
        .vertices()
        .iter()
        .map(|p| std::array::from_fn(|c| T::of(p[c].as_f64() * scale[c] + shift[c])))
        .collect();
    let moved = mesh.with_vertices(vertices)?;

    let centers = moved.triangle_features().centers;
    let mut keep = vec![true; moved.triangle_count()];
    if cfg.mask_probability > 0.0 && rng.random_bool(cfg.mask_probability) {
        if let Some((lo, hi)) = moved.bounding_box() {
            let cut = lo[2].as_f64() + cfg.mask_depth_fraction * (hi[2].as_f64() - lo[2].as_f64());
            for (k, c) in keep.iter_mut().zip(&centers) {
                if c[2].as_f64() < cut {
                    *k = false;
                }
            }
        }
    }
    let [clo, chi] = cfg.hole_count_range;
    let n_holes = if chi > clo { rng.random_range(clo..=chi) } else { clo };
    let mut holes: Vec<(Vec3<f64>, f64)> = cfg.fixed_holes.clone();
    for _ in 0..n_holes {
        let v = moved.vertices()[rng.random_range(0..moved.vertex_count())];
        let [rlo, rhi] = cfg.hole_radius_range;
        let r = if rhi > rlo { rng.random_range(rlo..=rhi) } else { rlo };
        holes.push((v.map(|x| x.as_f64()), r));
    }
    for (center, r) in &holes {
        for (k, c) in keep.iter_mut().zip(&centers) {
            let c = c.map(|x| x.as_f64());
            if vec3::norm(vec3::sub(c, *center)) < *r {
                *k = false;
            }
        }
    }
    if keep.iter().all(|&k| k) {
        return Ok(moved);
    }
    let out = moved.retain_triangles(&keep);
    let removed = mesh.vertex_count() - out.vertex_count();
    if removed as f64 > MAX_REMOVED_FRACTION * mesh.vertex_count() as f64 || out.triangle_count() == 0 {
        return Err(Error::EmptyResult(format!(
            "augmentation removed {removed} of {} vertices",
            mesh.vertex_count()
        )));
    }
    Ok(out)
}

/// Retries with derived seeds until the result keeps enough of the mesh.
pub fn augment_resampling<T: Real>(mesh: &TriangleMesh<T>, cfg: &AugmentationConfig) -> Result<TriangleMesh<T>> {
    let mut last = None;
    for attempt in 0..16u64 {
        let c = cfg.with_seed(cfg.seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9_7F4A_7C15)));
        match augment(mesh, &c) {
            Err(Error::EmptyResult(m)) => last = Some(m),
            other => return other,
        }
    }
    Err(Error::EmptyResult(last.unwrap_or_default()))
}
