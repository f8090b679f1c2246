//! Named training variants compared on the same data.

use serde::{Deserialize, Serialize};

use crate::data::{FrameSet, PreparedSet};
use crate::diffusion::EncoderKind;
use crate::error::{ModelError, Result};
use crate::eval::{eval_reconstruction, facs_mae, ErrorReport, Table, TableRow};
use crate::train::{train_stage1, train_stage2, TrainConfig};

pub const ABLATION_CONFIGS: [&str; 7] = [
    "full",
    "no-stage1",
    "no-stage2",
    "no-augmentation",
    "no-CNN",
    "point-encoder-swap",
    "no-z_ext",
];

/// Training and test frames shared by every variant.
#[derive(Clone, Debug)]
pub struct AblationData {
    pub labeled: FrameSet,
    pub scanlike: FrameSet,
    pub test_labeled: FrameSet,
    pub test_scanlike: FrameSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationVariant {
    pub name: String,
    pub config: TrainConfig,
    pub stage1: bool,
    pub stage2: bool,
}

/// `base` with the named change applied.
pub fn ablation_variant(name: &str, base: &TrainConfig) -> Result<AblationVariant> {
    let mut config = base.clone();
    let (mut stage1, mut stage2) = (true, true);
    match name {
        "full" => {}
        "no-stage1" => stage1 = false,
        "no-stage2" => stage2 = false,
        "no-augmentation" => config.augmentation = None,
        "no-CNN" => config.model.use_cnn = false,
        "point-encoder-swap" => config.model.encoder = EncoderKind::PointNet,
        "no-z_ext" => config.model.ext_dims = 0,
        other => return Err(ModelError::UnknownConfig(other.into())),
    }
    config.validate()?;
    Ok(AblationVariant {
        name: name.into(),
        config,
        stage1,
        stage2,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub scanlike: ErrorReport,
    pub labeled: ErrorReport,
    pub facs_mae: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn row(&self, config: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.config == config)
    }

    /// Scan-like test errors, one row per variant.
    pub fn table(&self) -> Table {
        Table {
            rows: self.rows.iter().map(|r| TableRow::new(&r.config, &r.scanlike)).collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Trains every named variant from scratch and scores it on the test frames.
/// Names are checked before any training starts.
pub fn run_ablation(names: &[&str], base: &TrainConfig, data: &AblationData) -> Result<AblationReport> {
    let variants = names
        .iter()
        .map(|n| ablation_variant(n, base))
        .collect::<Result<Vec<_>>>()?;
    let mut report = AblationReport::default();
    for v in variants {
        let aug = v.config.augmentation.as_ref().map(|a| (a, v.config.augmented_copies));
        let model_cfg = &v.config.model;
        let lab = if v.stage1 {
            PreparedSet::build(model_cfg, &data.labeled, aug)?
        } else {
            PreparedSet::build(model_cfg, &FrameSet::default(), None)?
        };
        let mut model = None;
        if v.stage1 {
            model = Some(train_stage1(&v.config, &lab, None, None, &mut |_, _| Ok(()))?.model);
        }
        if v.stage2 {
            let scan = PreparedSet::build(model_cfg, &data.scanlike, aug)?;
            let init = match model.take() {
                Some(m) => m,
                None => crate::NfrModel::new(model_cfg.clone())?,
            };
            model = Some(train_stage2(&v.config, init, &lab, &scan, None, &mut |_, _| Ok(()))?.model);
        }
        let model = model.ok_or_else(|| ModelError::UnknownConfig(format!("{} trains nothing", v.name)))?;
        let test_scan = PreparedSet::build(model_cfg, &data.test_scanlike, None)?;
        let test_lab = PreparedSet::build(model_cfg, &data.test_labeled, None)?;
        report.rows.push(AblationRow {
            config: v.name,
            scanlike: eval_reconstruction(&model, &test_scan, 0)?,
            labeled: eval_reconstruction(&model, &test_lab, 0)?,
            facs_mae: facs_mae(&model, &test_lab)?,
        });
    }
    Ok(report)
}
