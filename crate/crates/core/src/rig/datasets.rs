//! Labeled and scan-like sample generators.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{evaluate_rig, evaluate_vertices, BlendshapeRig, N_AU};
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::spectral::laplacian_eigenbasis;
use crate::vec3::{self, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceTag {
    SyntheticRandom,
    SyntheticTrajectory,
    Scanlike,
}

impl SourceTag {
    pub fn is_labeled(self) -> bool {
        !matches!(self, Self::Scanlike)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RigSample {
    pub identity: usize,
    pub frame: usize,
    pub identity_weights: Vec<f64>,
    /// Training labels; `None` for scan-like samples.
    pub au_weights: Option<Vec<f64>>,
    /// Activations behind a scan-like sample, kept for evaluation only.
    pub withheld_au_weights: Option<Vec<f64>>,
    pub mesh: TriangleMesh<f64>,
    pub source_tag: SourceTag,
    pub seed: u64,
}

impl RigSample {
    /// Ground-truth activations regardless of whether they are exposed to training.
    pub fn true_au_weights(&self) -> Option<&[f64]> {
        self.au_weights.as_deref().or(self.withheld_au_weights.as_deref())
    }
}

/// Maximum simultaneously active AUs in trajectories.
pub const MAX_ACTIVE: usize = 8;
/// Maximum per-frame change of any trajectory AU weight.
pub const MAX_STEP: f64 = 0.1;
/// Probability that a random-AU sample activates a given AU.
pub const RANDOM_AU_PROBABILITY: f64 = 0.3;
/// Scan-like warp amplitude per squared unit of total activation (mm).
pub const WARP_GAIN: f64 = 0.02;

/// SplitMix64 mixing of a base seed with a stream and an index.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_IDENTITY: u64 = 1;
const STREAM_RANDOM: u64 = 2;
const STREAM_TRAJECTORY: u64 = 3;
const STREAM_WARP: u64 = 4;
const STREAM_REMESH: u64 = 5;

/// Standard-normal identity weights for identity `index` under `seed`.
pub fn identity_weights(rig: &BlendshapeRig, seed: u64, index: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_IDENTITY, index as u64));
    (0..rig.identity_basis.len()).map(|_| rng.sample(StandardNormal)).collect()
}

fn check_counts(n_identities: usize, n_frames: usize) -> Result<()> {
    if n_frames == 0 || n_identities == 0 {
        return Err(Error::InvalidConfig("need at least one identity and one frame".into()));
    }
    Ok(())
}

/// i.i.d. activations: each AU is active with probability 0.3 and then
/// uniform on [0, 1].
pub fn sample_random_au_dataset(
    rig: &BlendshapeRig,
    n_identities: usize,
    n_frames: usize,
    seed: u64,
) -> Result<Vec<RigSample>> {
    check_counts(n_identities, n_frames)?;
    let mut out = Vec::with_capacity(n_identities * n_frames);
    for id in 0..n_identities {
        let idw = identity_weights(rig, seed, id);
        for frame in 0..n_frames {
            let s = derive_seed(seed, STREAM_RANDOM, (id * n_frames + frame) as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let au: Vec<f64> = (0..rig.au_shapes.len())
                .map(|_| {
                    if rng.random_bool(RANDOM_AU_PROBABILITY) {
                        rng.random_range(0.0..=1.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            out.push(RigSample {
                identity: id,
                frame,
                mesh: evaluate_rig(rig, &idw, &au)?,
                identity_weights: idw.clone(),
                au_weights: Some(au),
                withheld_au_weights: None,
                source_tag: SourceTag::SyntheticRandom,
                seed: s,
            });
        }
    }
    Ok(out)
}

/// Groups of AUs that tend to fire together.
const GROUPS: [&[&str]; 9] = [
    &["mouthSmile_L", "mouthSmile_R", "cheekSquint_L", "cheekSquint_R"],
    &["eyeBlink_L", "eyeBlink_R"],
    &["browInnerUp_L", "browInnerUp_R", "browOuterUp_L", "browOuterUp_R", "eyeWide_L", "eyeWide_R"],
    &["jawOpen", "mouthLowerDown_L", "mouthLowerDown_R"],
    &["browDown_L", "browDown_R", "mouthFrown_L", "mouthFrown_R"],
    &["mouthPucker", "mouthFunnel"],
    &["noseSneer_L", "noseSneer_R", "mouthUpperUp_L", "mouthUpperUp_R"],
    &["eyeSquint_L", "eyeSquint_R"],
    &["mouthStretch_L", "mouthStretch_R", "mouthPress_L", "mouthPress_R"],
];

/// Smooth activation curves for one performance of `n_frames` frames.
pub fn au_trajectory(au_names: &[String], n_frames: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = au_names.len();
    let groups: Vec<Vec<usize>> = GROUPS
        .iter()
        .map(|g| g.iter().filter_map(|name| au_names.iter().position(|a| a == name)).collect())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![0.0f64; n];
    let mut target = vec![0.0f64; n];
    let mut speed = vec![0.05f64; n];
    let mut frames = Vec::with_capacity(n_frames);
    for _ in 0..n_frames {
        let busy = (0..n).filter(|&k| w[k] > 0.0 || target[k] > 0.0).count();
        if rng.random_bool(0.3) {
            let pick: Vec<usize> = if rng.random_bool(0.5) {
                groups[rng.random_range(0..groups.len())].clone()
            } else {
                vec![rng.random_range(0..n)]
            };
            let fresh: Vec<usize> = pick.into_iter().filter(|&k| w[k] == 0.0 && target[k] == 0.0).collect();
            if !fresh.is_empty() && busy + fresh.len() <= MAX_ACTIVE {
                let level = rng.random_range(0.3..=1.0);
                for k in fresh {
                    target[k] = (level * rng.random_range(0.8..=1.0f64)).min(1.0);
                    speed[k] = rng.random_range(0.03..=MAX_STEP);
                }
            }
        }
        for k in 0..n {
            let d = target[k] - w[k];
            let step = d.clamp(-speed[k], speed[k]);
            w[k] = (w[k] + step).clamp(0.0, 1.0);
            if (target[k] - w[k]).abs() < 1e-12 {
                w[k] = target[k];
                if target[k] > 0.0 && rng.random_bool(0.12) {
                    target[k] = 0.0;
                }
            }
        }
        frames.push(w.clone());
    }
    frames
}

/// Trajectory samples: smooth, sparse, co-activated AU curves.
pub fn sample_trajectory_au_dataset(
    rig: &BlendshapeRig,
    n_identities: usize,
    n_frames: usize,
    seed: u64,
) -> Result<Vec<RigSample>> {
    check_counts(n_identities, n_frames)?;
    let mut out = Vec::with_capacity(n_identities * n_frames);
    for id in 0..n_identities {
        let idw = identity_weights(rig, seed, id);
        let s = derive_seed(seed, STREAM_TRAJECTORY, id as u64);
        for (frame, au) in au_trajectory(&rig.au_names, n_frames, s).into_iter().enumerate() {
            out.push(RigSample {
                identity: id,
                frame,
                mesh: evaluate_rig(rig, &idw, &au)?,
                identity_weights: idw.clone(),
                au_weights: Some(au),
                withheld_au_weights: None,
                source_tag: SourceTag::SyntheticTrajectory,
                seed: s,
            });
        }
    }
    Ok(out)
}

/// Scan-like data on a 1.5x remeshed template with a nonlinear warp.
#[derive(Clone, Debug)]
pub struct ScanlikeDataset {
    pub rig: BlendshapeRig,
    /// Unit-max smooth displacement field per identity.
    pub warps: Vec<Vec<Vec3<f64>>>,
    pub samples: Vec<RigSample>,
}

impl ScanlikeDataset {
    /// Linear rig part of sample `i` (the warp removed).
    pub fn linear_part(&self, i: usize) -> Result<TriangleMesh<f64>> {
        let s = &self.samples[i];
        let au = s.true_au_weights().expect("scan-like samples keep their activations");
        evaluate_rig(&self.rig, &s.identity_weights, au)
    }

    /// Scan-like shape of identity `id` at arbitrary activations.
    pub fn evaluate(&self, id: usize, au: &[f64]) -> Result<TriangleMesh<f64>> {
        let s = self
            .samples
            .iter()
            .find(|s| s.identity == id)
            .ok_or_else(|| Error::InvalidConfig(format!("no scan-like identity {id}")))?;
        let mut v = evaluate_vertices(&self.rig, &s.identity_weights, au)?;
        let m = warp_magnitude(au);
        for (p, d) in v.iter_mut().zip(&self.warps[id]) {
            *p = vec3::add(*p, vec3::scale(*d, m));
        }
        self.rig.template.with_vertices(v)
    }

    /// Neutral mesh of identity `id` (the warp vanishes at zero activation).
    pub fn neutral(&self, id: usize) -> Result<TriangleMesh<f64>> {
        let s = self
            .samples
            .iter()
            .find(|s| s.identity == id)
            .ok_or_else(|| Error::InvalidConfig(format!("no scan-like identity {id}")))?;
        evaluate_rig(&self.rig, &s.identity_weights, &[0.0; N_AU])
    }

    /// Indices of samples whose mean displacement from their neutral is at
    /// least `min_neutral_distance` mm.
    pub fn training_indices(&self, min_neutral_distance: f64) -> Result<Vec<usize>> {
        let mut neutrals = std::collections::HashMap::new();
        let mut out = Vec::new();
        for (i, s) in self.samples.iter().enumerate() {
            if !neutrals.contains_key(&s.identity) {
                neutrals.insert(s.identity, self.neutral(s.identity)?);
            }
            let n = &neutrals[&s.identity];
            let mean = n
                .vertices()
                .iter()
                .zip(s.mesh.vertices())
                .map(|(a, b)| vec3::norm(vec3::sub(*a, *b)))
                .sum::<f64>()
                / n.vertex_count() as f64;
            if mean >= min_neutral_distance {
                out.push(i);
            }
        }
        Ok(out)
    }
}

/// Warp magnitude for a given activation vector.
pub fn warp_magnitude(au: &[f64]) -> f64 {
    let s: f64 = au.iter().sum();
    WARP_GAIN * s * s
}

/// Unit-max random combination of low-frequency Laplacian eigenfunctions.
pub fn smooth_warp_field(mesh: &TriangleMesh<f64>, seed: u64) -> Result<Vec<Vec3<f64>>> {
    const MODES: usize = 12;
    let basis = laplacian_eigenbasis(mesh, MODES + 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<Vec3<f64>> = (0..MODES)
        .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)])
        .collect();
    let mut field: Vec<Vec3<f64>> = (0..mesh.vertex_count())
        .map(|i| {
            let mut d = [0.0; 3];
            for (m, c) in coeffs.iter().enumerate() {
                d = vec3::add(d, vec3::scale(*c, basis.eigenvectors[[i, m + 1]]));
            }
            d
        })
        .collect();
    let max = field.iter().map(|d| vec3::norm(*d)).fold(0.0, f64::max);
    if max > 0.0 {
        field.iter_mut().for_each(|d| *d = vec3::scale(*d, 1.0 / max));
    }
    Ok(field)
}

/// Trajectory activations on a remeshed template (~1.5x vertices) plus a
/// per-identity warp scaled by `0.02 (sum au)^2` mm. Labels are withheld.
pub fn generate_scanlike_dataset(
    rig: &BlendshapeRig,
    n_identities: usize,
    n_frames: usize,
    seed: u64,
) -> Result<ScanlikeDataset> {
    check_counts(n_identities, n_frames)?;
    let n_target = (rig.vertex_count() as f64 * 1.5).round() as usize;
    let remeshed = rig.remesh(n_target, derive_seed(seed, STREAM_REMESH, 0))?;
    let mut warps = Vec::with_capacity(n_identities);
    let mut samples = Vec::with_capacity(n_identities * n_frames);
    for id in 0..n_identities {
        let idw = identity_weights(&remeshed, seed, id);
        let warp = smooth_warp_field(&remeshed.template, derive_seed(seed, STREAM_WARP, id as u64))?;
        let s = derive_seed(seed, STREAM_TRAJECTORY, id as u64);
        for (frame, au) in au_trajectory(&remeshed.au_names, n_frames, s).into_iter().enumerate() {
            let mut v = evaluate_vertices(&remeshed, &idw, &au)?;
            let m = warp_magnitude(&au);
            if m > 0.0 {
                for (p, d) in v.iter_mut().zip(&warp) {
                    *p = vec3::add(*p, vec3::scale(*d, m));
                }
            }
            samples.push(RigSample {
                identity: id,
                frame,
                mesh: remeshed.template.with_vertices(v)?,
                identity_weights: idw.clone(),
                au_weights: None,
                withheld_au_weights: Some(au),
                source_tag: SourceTag::Scanlike,
                seed: s,
            });
        }
        warps.push(warp);
    }
    Ok(ScanlikeDataset {
        rig: remeshed,
        warps,
        samples,
    })
}
