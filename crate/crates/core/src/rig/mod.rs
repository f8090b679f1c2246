//! Synthetic linear blendshape rig, dataset generators, augmentation and
//! standardization.

pub mod augment;
pub mod datasets;
pub mod face;
pub mod standardize;
pub mod store;

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::vec3::Vec3;

pub use augment::{augment, AugmentationConfig};
pub use datasets::{
    generate_scanlike_dataset, sample_random_au_dataset, sample_trajectory_au_dataset, RigSample, ScanlikeDataset,
    SourceTag,
};
pub use face::{N_AU, N_IDENTITY};
pub use standardize::{standardize, Region, StandardizeSpec};

/// Linear 3DMM: template plus identity modes plus AU deltas.
#[derive(Clone, Debug, PartialEq)]
pub struct BlendshapeRig {
    pub template: TriangleMesh<f64>,
    /// `N_IDENTITY` columns of `N` displacements, scaled by their singular values.
    pub identity_basis: Vec<Vec<Vec3<f64>>>,
    /// `N_AU` delta shapes of `N` displacements.
    pub au_shapes: Vec<Vec<Vec3<f64>>>,
    pub au_names: Vec<String>,
    /// Planar domain coordinate of each template vertex (mm).
    pub planar: Vec<[f64; 2]>,
    /// Seed of the face functions (surface, identity modes).
    pub seed: u64,
    /// Multiplier applied to each unit-amplitude identity function; fixed at
    /// construction so resampled rigs evaluate the same continuous modes.
    pub identity_scales: Vec<f64>,
}

impl BlendshapeRig {
    pub fn vertex_count(&self) -> usize {
        self.template.vertex_count()
    }

    /// Singular value of identity column `j` (its Euclidean norm).
    pub fn singular_value(&self, j: usize) -> f64 {
        self.identity_basis[j].iter().map(|d| crate::vec3::dot(*d, *d)).sum::<f64>().sqrt()
    }

    /// Indices of vertices moved by AU `k`.
    pub fn au_support(&self, k: usize) -> Vec<usize> {
        self.au_shapes[k]
            .iter()
            .enumerate()
            .filter(|(_, d)| d.iter().any(|x| *x != 0.0))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn au_index(&self, name: &str) -> Option<usize> {
        self.au_names.iter().position(|n| n == name)
    }

    /// The rig re-based on a subject's neutral: evaluating it with zero
    /// identity weights adds the AU deltas to `neutral`.
    pub fn personalized(&self, neutral: &TriangleMesh<f64>) -> Result<BlendshapeRig> {
        if neutral.vertex_count() != self.vertex_count() {
            return Err(Error::InvalidConfig(format!(
                "neutral has {} vertices, the rig {}",
                neutral.vertex_count(),
                self.vertex_count()
            )));
        }
        Ok(BlendshapeRig {
            template: neutral.clone(),
            ..self.clone()
        })
    }

    /// Same continuous rig sampled with `n_target` vertices and a new
    /// triangulation.
    pub fn remesh(&self, n_target: usize, sampling_seed: u64) -> Result<BlendshapeRig> {
        build_rig(self.seed, n_target, sampling_seed, false, Some(&self.identity_scales))
    }
}

/// Deterministic synthetic rig with exactly `n_target` template vertices.
pub fn build_synthetic_rig(seed: u64, n_target: usize) -> Result<BlendshapeRig> {
    build_rig(seed, n_target, seed, false, None)
}

/// Template variant whose eye openings are filled with extra triangles, plus
/// the [`StandardizeSpec`] that removes them again.
pub fn build_closed_eye_template(seed: u64, n_target: usize) -> Result<(TriangleMesh<f64>, StandardizeSpec)> {
    let rig = build_rig(seed, n_target, seed, true, None)?;
    let spec = StandardizeSpec::Regions(vec![Region::Ellipse(face::EYE_L), Region::Ellipse(face::EYE_R)]);
    Ok((rig.template, spec))
}

fn build_rig(
    seed: u64,
    n_target: usize,
    sampling_seed: u64,
    closed_eyes: bool,
    identity_scales: Option<&[f64]>,
) -> Result<BlendshapeRig> {
    if n_target < 500 {
        return Err(Error::InvalidConfig(format!("rig needs at least 500 vertices, got {n_target}")));
    }
    let planar_mesh = face::sample_domain(n_target, sampling_seed, closed_eyes);
    let planar = planar_mesh.points;
    let vertices: Vec<Vec3<f64>> = planar.iter().map(|&p| face::surface(p)).collect();
    let template = TriangleMesh::new(vertices, planar_mesh.triangles)?;
    let modes = face::identity_modes(seed);
    let raw: Vec<Vec<Vec3<f64>>> =
        modes.iter().map(|m| planar.iter().map(|&p| m.displacement(p)).collect()).collect();
    let scales: Vec<f64> = match identity_scales {
        Some(s) => s.to_vec(),
        None => raw
            .iter()
            .enumerate()
            .map(|(j, col)| {
                let rms = (col.iter().map(|d| crate::vec3::dot(*d, *d)).sum::<f64>() / col.len() as f64).sqrt();
                face::identity_rms(j) / rms
            })
            .collect(),
    };
    let identity_basis = raw
        .into_iter()
        .zip(&scales)
        .map(|(col, &s)| col.into_iter().map(|d| crate::vec3::scale(d, s)).collect())
        .collect();
    let table = face::au_table();
    let au_shapes = table
        .iter()
        .map(|(_, shape)| planar.iter().map(|&p| shape.displacement(p)).collect())
        .collect();
    Ok(BlendshapeRig {
        template,
        identity_basis,
        au_shapes,
        au_names: table.into_iter().map(|(n, _)| n).collect(),
        planar,
        seed,
        identity_scales: scales,
    })
}

/// `template + sum_j identity_basis[j] w_id[j] + sum_k au_shapes[k] w_au[k]`.
pub fn evaluate_rig(rig: &BlendshapeRig, identity_weights: &[f64], au_weights: &[f64]) -> Result<TriangleMesh<f64>> {
    Ok(rig.template.with_vertices(evaluate_vertices(rig, identity_weights, au_weights)?)?)
}

pub fn evaluate_vertices(rig: &BlendshapeRig, identity_weights: &[f64], au_weights: &[f64]) -> Result<Vec<Vec3<f64>>> {
    if identity_weights.len() != rig.identity_basis.len() {
        return Err(Error::WeightDimensionMismatch {
            expected: rig.identity_basis.len(),
            actual: identity_weights.len(),
        });
    }
    if au_weights.len() != rig.au_shapes.len() {
        return Err(Error::WeightDimensionMismatch {
            expected: rig.au_shapes.len(),
            actual: au_weights.len(),
        });
    }
    let mut v = rig.template.vertices().to_vec();
    for (col, &w) in rig.identity_basis.iter().zip(identity_weights).chain(rig.au_shapes.iter().zip(au_weights)) {
        if w == 0.0 {
            continue;
        }
        for (p, d) in v.iter_mut().zip(col) {
            for c in 0..3 {
                p[c] += w * d[c];
            }
        }
    }
    Ok(v)
}
