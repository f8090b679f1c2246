//! On-disk dataset directories written by `facrig gen-data`.
//!
//! ```text
//! <root>/dataset.json      generation parameters
//! <root>/rig.bin           labeled rig
//! <root>/scan_rig.bin      remeshed rig behind the scan-like splits
//! <root>/{train,val,test}/ labeled random-AU frames
//! <root>/{scan,scan_test}/ scan-like frames, split by identity
//! ```

use std::path::{Path, PathBuf};

use facrig_core::rig::datasets::derive_seed;
use facrig_core::rig::store::{read_dataset, read_rig, write_dataset, write_rig};
use facrig_core::rig::{build_synthetic_rig, generate_scanlike_dataset, sample_random_au_dataset, BlendshapeRig, RigSample};
use facrig_model::data::FrameSet;
use serde::{Deserialize, Serialize};

pub const LABELED_SPLITS: [&str; 3] = ["train", "val", "test"];
pub const SCANLIKE_SPLITS: [&str; 2] = ["scan", "scan_test"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub seed: u64,
    pub vertices: usize,
    pub identities: usize,
    pub frames: usize,
    pub test_identities: usize,
    pub test_frames: usize,
    pub scan_identities: usize,
    pub scan_frames: usize,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            vertices: 1000,
            identities: 8,
            frames: 50,
            test_identities: 2,
            test_frames: 20,
            scan_identities: 4,
            scan_frames: 50,
        }
    }
}

impl GenSpec {
    pub fn validate(&self) -> facrig_core::Result<()> {
        let counts = [
            self.identities,
            self.frames,
            self.test_identities,
            self.test_frames,
            self.scan_identities,
            self.scan_frames,
        ];
        if counts.contains(&0) {
            return Err(facrig_core::Error::InvalidConfig("identity and frame counts must be positive".into()));
        }
        Ok(())
    }
}

/// Every split of a generated dataset, in memory.
pub struct Generated {
    pub rig: BlendshapeRig,
    pub scan_rig: BlendshapeRig,
    pub splits: Vec<(&'static str, Vec<RigSample>)>,
}

pub fn generate(spec: &GenSpec) -> facrig_core::Result<Generated> {
    spec.validate()?;
    let rig = build_synthetic_rig(spec.seed, spec.vertices)?;
    let labeled = |stream, ids, frames| sample_random_au_dataset(&rig, ids, frames, derive_seed(spec.seed, stream, 0));
    let train = labeled(1, spec.identities, spec.frames)?;
    let val = labeled(2, spec.test_identities, spec.test_frames)?;
    let test = labeled(3, spec.test_identities, spec.test_frames)?;
    let scan_ids = spec.scan_identities + spec.test_identities;
    let ds = generate_scanlike_dataset(&rig, scan_ids, spec.scan_frames.max(spec.test_frames), derive_seed(spec.seed, 4, 0))?;
    let (scan, scan_test): (Vec<_>, Vec<_>) = ds.samples.into_iter().partition(|s| s.identity < spec.scan_identities);
    let scan = scan.into_iter().filter(|s| s.frame < spec.scan_frames).collect();
    let scan_test = scan_test.into_iter().filter(|s| s.frame < spec.test_frames).collect();
    Ok(Generated {
        rig,
        scan_rig: ds.rig,
        splits: vec![("train", train), ("val", val), ("test", test), ("scan", scan), ("scan_test", scan_test)],
    })
}

pub fn write(root: &Path, spec: &GenSpec, data: &Generated) -> facrig_core::Result<()> {
    std::fs::create_dir_all(root)?;
    std::fs::write(root.join("dataset.json"), serde_json::to_vec_pretty(spec)?)?;
    std::fs::write(root.join("rig.bin"), write_rig(&data.rig))?;
    std::fs::write(root.join("scan_rig.bin"), write_rig(&data.scan_rig))?;
    for (name, samples) in &data.splits {
        write_dataset(root, name, samples)?;
    }
    Ok(())
}

/// A dataset directory opened for reading.
pub struct DataDir {
    pub root: PathBuf,
    pub rig: BlendshapeRig,
    pub scan_rig: BlendshapeRig,
}

impl DataDir {
    pub fn open(root: impl Into<PathBuf>) -> facrig_core::Result<Self> {
        let root = root.into();
        let rig = read_rig(&std::fs::read(root.join("rig.bin"))?)?;
        let scan_rig = read_rig(&std::fs::read(root.join("scan_rig.bin"))?)?;
        Ok(Self { root, rig, scan_rig })
    }

    pub fn rig_for(&self, split: &str) -> &BlendshapeRig {
        if SCANLIKE_SPLITS.contains(&split) {
            &self.scan_rig
        } else {
            &self.rig
        }
    }

    pub fn samples(&self, split: &str) -> facrig_core::Result<Vec<RigSample>> {
        read_dataset(&self.root, split)
    }

    pub fn frames(&self, split: &str) -> facrig_model::Result<FrameSet> {
        FrameSet::from_rig_samples(self.rig_for(split), &self.samples(split)?)
    }

    /// `split` with every frame re-evaluated on `remeshed`.
    pub fn remeshed_frames(&self, split: &str, remeshed: &BlendshapeRig) -> facrig_model::Result<FrameSet> {
        let samples = self
            .samples(split)?
            .into_iter()
            .map(|mut s| {
                let au = s.true_au_weights().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; remeshed.au_shapes.len()]);
                s.mesh = facrig_core::evaluate_rig(remeshed, &s.identity_weights, &au)?;
                Ok(s)
            })
            .collect::<facrig_core::Result<Vec<_>>>()?;
        FrameSet::from_rig_samples(remeshed, &samples)
    }
}
