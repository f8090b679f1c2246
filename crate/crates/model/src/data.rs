//! Frame collections and their cached encoder inputs.

use std::collections::BTreeMap;

use facrig_core::gradient::JacobianField;
use facrig_core::rig::augment::augment_resampling;
use facrig_core::rig::datasets::derive_seed;
use facrig_core::rig::{evaluate_rig, AugmentationConfig, BlendshapeRig, RigSample, ScanlikeDataset, SourceTag};
use facrig_core::{Real, TriangleMesh};

use crate::error::{ModelError, Result};
use crate::model::{ModelConfig, PreparedIdentity, PreparedMesh, TrainingSample};

const STREAM_AUGMENT: u64 = 11;

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    /// Index into [`FrameSet::identities`].
    pub identity: usize,
    pub mesh: TriangleMesh<f64>,
    /// Training labels; `None` for scan-like frames.
    pub label: Option<Vec<f64>>,
    /// Activations behind the frame, for evaluation only.
    pub truth: Option<Vec<f64>>,
    pub source: SourceTag,
}

/// Expression frames with the neutral of every identity they use.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameSet {
    pub identities: Vec<TriangleMesh<f64>>,
    pub frames: Vec<Frame>,
}

impl FrameSet {
    /// Labeled rig samples; neutrals are the rig at zero activation.
    pub fn from_rig_samples(rig: &BlendshapeRig, samples: &[RigSample]) -> Result<Self> {
        let mut index = BTreeMap::new();
        let mut set = FrameSet::default();
        for s in samples {
            let id = match index.get(&s.identity) {
                Some(&i) => i,
                None => {
                    set.identities.push(evaluate_rig(rig, &s.identity_weights, &vec![0.0; rig.au_shapes.len()])?);
                    index.insert(s.identity, set.identities.len() - 1);
                    set.identities.len() - 1
                }
            };
            set.frames.push(Frame {
                identity: id,
                mesh: s.mesh.clone(),
                label: s.au_weights.clone(),
                truth: s.true_au_weights().map(<[f64]>::to_vec),
                source: s.source_tag,
            });
        }
        Ok(set)
    }

    /// Scan-like samples, all of them or the given indices.
    pub fn from_scanlike(ds: &ScanlikeDataset, indices: Option<&[usize]>) -> Result<Self> {
        let all: Vec<usize> = (0..ds.samples.len()).collect();
        let mut index = BTreeMap::new();
        let mut set = FrameSet::default();
        for &i in indices.unwrap_or(&all) {
            let s = ds
                .samples
                .get(i)
                .ok_or_else(|| ModelError::DatasetEmpty(format!("scan-like sample {i} out of range")))?;
            let id = match index.get(&s.identity) {
                Some(&k) => k,
                None => {
                    set.identities.push(ds.neutral(s.identity)?);
                    index.insert(s.identity, set.identities.len() - 1);
                    set.identities.len() - 1
                }
            };
            set.frames.push(Frame {
                identity: id,
                mesh: s.mesh.clone(),
                label: s.au_weights.clone(),
                truth: s.true_au_weights().map(<[f64]>::to_vec),
                source: s.source_tag,
            });
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frames whose labels are present whenever their source requires them.
    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.frames.iter().enumerate() {
            if f.source.is_labeled() && f.label.is_none() {
                return Err(ModelError::MissingLabel(i));
            }
            let id = self
                .identities
                .get(f.identity)
                .ok_or_else(|| ModelError::CorrespondenceMismatch(format!("frame {i} names identity {}", f.identity)))?;
            if id.vertex_count() != f.mesh.vertex_count() || id.triangles() != f.mesh.triangles() {
                return Err(ModelError::CorrespondenceMismatch(format!(
                    "frame {i} does not share its identity's connectivity"
                )));
            }
        }
        Ok(())
    }
}

/// Encoder inputs, ground-truth fields and labels of a frame set, computed
/// once. Variant 0 of every frame is the frame itself; further variants are
/// augmented copies.
pub struct PreparedSet<T> {
    pub identities: Vec<PreparedIdentity<T>>,
    pub inputs: Vec<Vec<PreparedMesh<T>>>,
    pub fields: Vec<JacobianField<T>>,
    pub labels: Vec<Option<Vec<T>>>,
    pub set: FrameSet,
}

impl<T: Real> PreparedSet<T> {
    /// `augmentation`: config plus the number of augmented copies per frame.
    pub fn build(cfg: &ModelConfig, set: &FrameSet, augmentation: Option<(&AugmentationConfig, usize)>) -> Result<Self> {
        set.validate()?;
        let identities = set
            .identities
            .iter()
            .map(|m| PreparedIdentity::build(cfg, m))
            .collect::<Result<Vec<_>>>()?;
        let mut inputs = Vec::with_capacity(set.len());
        let mut fields = Vec::with_capacity(set.len());
        for (i, f) in set.frames.iter().enumerate() {
            let mut variants = vec![PreparedMesh::build(cfg, &f.mesh)?];
            if let Some((aug, copies)) = augmentation {
                for c in 0..copies {
                    let a = aug.with_seed(derive_seed(aug.seed, STREAM_AUGMENT, (i * copies + c) as u64));
                    variants.push(PreparedMesh::build(cfg, &augment_resampling(&f.mesh, &a)?)?);
                }
            }
            inputs.push(variants);
            fields.push(identities[f.identity].jacobians_of(&f.mesh)?);
        }
        let labels = set
            .frames
            .iter()
            .map(|f| f.label.as_ref().map(|l| l.iter().map(|&x| T::of(x)).collect()))
            .collect();
        Ok(Self {
            identities,
            inputs,
            fields,
            labels,
            set: set.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn variants(&self, frame: usize) -> usize {
        self.inputs[frame].len()
    }

    pub fn sample(&self, frame: usize, variant: usize) -> TrainingSample<'_, T> {
        let f = &self.set.frames[frame];
        TrainingSample {
            identity: &self.identities[f.identity],
            input: &self.inputs[frame][variant],
            target: &f.mesh,
            target_field: &self.fields[frame],
            label: self.labels[frame].as_deref(),
            source: f.source,
        }
    }
}
