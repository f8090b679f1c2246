//! Two-stage training: labeled warm-up and supervision, then mixed batches
//! with unlabeled scan-like frames.

use std::io::Write;
use std::path::Path;

use facrig_core::rig::datasets::derive_seed;
use facrig_core::rig::AugmentationConfig;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::PreparedSet;
use crate::error::{ModelError, Result};
use crate::losses::{DecoderLoss, LossWeights};
use crate::model::{BatchOptions, ModelConfig, NfrModel, TrainingSample};
use crate::nn::{Adam, AdamConfig};

const STREAM_SHUFFLE: u64 = 21;
const STREAM_LABELED: u64 = 22;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub warmup_epochs: usize,
    /// Stage-1 epochs after the warm-up.
    pub stage1_epochs: usize,
    pub stage2_max_epochs: usize,
    pub patience: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub batch_size: usize,
    /// Fraction of every stage-2 batch drawn from labeled frames.
    pub labeled_ratio: f64,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            warmup_epochs: 100,
            stage1_epochs: 200,
            stage2_max_epochs: 1000,
            patience: 50,
            lr0: 1e-4,
            lr_decay: 0.75,
            decay_every: 100,
            batch_size: 8,
            labeled_ratio: 0.5,
        }
    }
}

impl Schedule {
    /// `lr0 * lr_decay^floor(epoch / decay_every)`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::UnknownConfig(format!("schedule: {m}")));
        if self.warmup_epochs + self.stage1_epochs == 0 || self.stage2_max_epochs == 0 {
            return bad("epochs must be positive");
        }
        if self.batch_size == 0 || self.decay_every == 0 || self.patience == 0 {
            return bad("batch size, decay period and patience must be positive");
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) || !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("learning rate must be positive and decay in (0, 1]");
        }
        if !(self.labeled_ratio > 0.0 && self.labeled_ratio <= 1.0) {
            return bad("labeled ratio must be in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub schedule: Schedule,
    #[serde(default)]
    pub loss: LossWeights,
    #[serde(default)]
    pub adam: AdamConfig,
    /// Encoder-input augmentation; `None` trains on the frames as given.
    pub augmentation: Option<AugmentationConfig>,
    /// Augmented copies prepared per frame.
    pub augmented_copies: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            schedule: Schedule::default(),
            loss: LossWeights::default(),
            adam: AdamConfig::default(),
            augmentation: Some(AugmentationConfig::training(0)),
            augmented_copies: 2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        self.loss.validate()?;
        if let Some(a) = &self.augmentation {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub stage: u8,
    pub epoch: usize,
    pub lr: f64,
    pub teacher_forcing: bool,
    /// Mean batch loss.
    pub loss: f64,
    pub decoder: DecoderLoss,
    pub encoder: f64,
    /// Mean decoder loss on the validation frames.
    pub validation: Option<f64>,
    pub batch_losses: Vec<f64>,
}

pub struct TrainRun {
    pub model: NfrModel<f32>,
    pub history: Vec<EpochMetrics>,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
}

/// Called after every epoch with the metrics and the current weights.
pub type EpochHook<'a> = dyn FnMut(&EpochMetrics, &NfrModel<f32>) -> Result<()> + 'a;

/// Append-only JSON lines.
pub struct MetricsLog {
    file: std::fs::File,
}

impl MetricsLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { file })
    }

    pub fn append(&mut self, m: &EpochMetrics) -> Result<()> {
        let mut line = serde_json::to_vec(m)?;
        line.push(b'\n');
        self.file.write_all(&line)?;
        Ok(())
    }
}

struct Accumulator {
    m: EpochMetrics,
}

impl Accumulator {
    fn new(stage: u8, epoch: usize, lr: f64, teacher_forcing: bool) -> Self {
        Self {
            m: EpochMetrics {
                stage,
                epoch,
                lr,
                teacher_forcing,
                ..Default::default()
            },
        }
    }

    fn add(&mut self, l: &crate::model::BatchLoss) {
        self.m.batch_losses.push(l.total);
        self.m.decoder.total += l.decoder.total;
        self.m.decoder.vertices += l.decoder.vertices;
        self.m.decoder.jacobians += l.decoder.jacobians;
        self.m.decoder.normals += l.decoder.normals;
        self.m.encoder += l.encoder;
    }

    fn finish(mut self) -> EpochMetrics {
        let n = self.m.batch_losses.len().max(1) as f64;
        self.m.loss = self.m.batch_losses.iter().sum::<f64>() / n;
        self.m.decoder.total /= n;
        self.m.decoder.vertices /= n;
        self.m.decoder.jacobians /= n;
        self.m.decoder.normals /= n;
        self.m.encoder /= n;
        self.m
    }
}

fn step(model: &mut NfrModel<f32>, adam: &mut Adam, batch: &[TrainingSample<f32>], opts: &BatchOptions, lr: f64) -> Result<crate::model::BatchLoss> {
    model.params.zero_grad();
    let loss = model.accumulate_batch(batch, opts)?;
    adam.step(&mut model.params, lr);
    Ok(loss)
}

fn pick_variant(set: &PreparedSet<f32>, frame: usize, augment: bool, rng: &mut ChaCha8Rng) -> usize {
    let n = set.variants(frame);
    if augment && n > 1 {
        rng.random_range(0..n)
    } else {
        0
    }
}

/// Mean decoder loss with predicted codes over every frame of `set`.
pub fn validation_loss(model: &NfrModel<f32>, set: &PreparedSet<f32>, loss: &LossWeights, batch_size: usize) -> Result<f64> {
    let opts = BatchOptions {
        loss: loss.clone(),
        teacher_forcing: false,
    };
    let mut total = 0.0;
    let frames: Vec<usize> = (0..set.len()).collect();
    for chunk in frames.chunks(batch_size.max(1)) {
        let batch: Vec<_> = chunk.iter().map(|&i| set.sample(i, 0)).collect();
        total += model.batch_loss(&batch, &opts)?.decoder.total * chunk.len() as f64;
    }
    Ok(total / set.len().max(1) as f64)
}

/// Warm-up with ground-truth codes, then full supervision with predicted
/// codes. Starts from `init` or from a fresh model.
pub fn train_stage1(
    cfg: &TrainConfig,
    data: &PreparedSet<f32>,
    val: Option<&PreparedSet<f32>>,
    init: Option<NfrModel<f32>>,
    hook: &mut EpochHook,
) -> Result<TrainRun> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(ModelError::DatasetEmpty("stage 1 needs labeled frames".into()));
    }
    if let Some(i) = data.set.frames.iter().position(|f| !f.source.is_labeled()) {
        return Err(ModelError::MissingLabel(i));
    }
    let mut model = match init {
        Some(m) => m,
        None => NfrModel::new(cfg.model.clone())?,
    };
    let mut adam = Adam::new(&model.params, cfg.adam.clone());
    let s = &cfg.schedule;
    let mut history = Vec::new();
    let augment = cfg.augmentation.is_some();
    for epoch in 0..s.warmup_epochs + s.stage1_epochs {
        let teacher = epoch < s.warmup_epochs;
        let lr = s.learning_rate(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SHUFFLE, epoch as u64));
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        let opts = BatchOptions {
            loss: cfg.loss.clone(),
            teacher_forcing: teacher,
        };
        let mut acc = Accumulator::new(1, epoch, lr, teacher);
        for chunk in order.chunks(s.batch_size) {
            let batch: Vec<_> = chunk
                .iter()
                .map(|&i| data.sample(i, pick_variant(data, i, augment, &mut rng)))
                .collect();
            acc.add(&step(&mut model, &mut adam, &batch, &opts, lr)?);
        }
        let mut m = acc.finish();
        if let Some(v) = val {
            m.validation = Some(validation_loss(&model, v, &cfg.loss, s.batch_size)?);
        }
        hook(&m, &model)?;
        history.push(m);
    }
    let best_epoch = history.len() - 1;
    Ok(TrainRun {
        model,
        history,
        best_epoch,
    })
}

/// Mixed labeled and scan-like batches with early stopping on the
/// validation decoder loss (training loss when no validation set is given).
/// An empty labeled set trains on scan-like frames alone.
pub fn train_stage2(
    cfg: &TrainConfig,
    init: NfrModel<f32>,
    labeled: &PreparedSet<f32>,
    scanlike: &PreparedSet<f32>,
    val: Option<&PreparedSet<f32>>,
    hook: &mut EpochHook,
) -> Result<TrainRun> {
    cfg.validate()?;
    if scanlike.is_empty() && labeled.is_empty() {
        return Err(ModelError::DatasetEmpty("stage 2 needs frames".into()));
    }
    let s = &cfg.schedule;
    let n_lab = if labeled.is_empty() {
        0
    } else if scanlike.is_empty() {
        s.batch_size
    } else {
        ((s.labeled_ratio * s.batch_size as f64).round() as usize).clamp(1, s.batch_size)
    };
    let n_scan = s.batch_size - n_lab;
    let mut model = init;
    let mut adam = Adam::new(&model.params, cfg.adam.clone());
    let augment = cfg.augmentation.is_some();
    let opts = BatchOptions {
        loss: cfg.loss.clone(),
        teacher_forcing: false,
    };
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut lab_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ 0x5EED_0002, STREAM_LABELED, 0));
    let mut lab_order: Vec<usize> = Vec::new();
    let mut lab_at = 0;
    for epoch in 0..s.stage2_max_epochs {
        let lr = s.learning_rate(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ 0x5EED_0002, STREAM_SHUFFLE, epoch as u64));
        let mut scan_order: Vec<usize> = (0..scanlike.len()).collect();
        scan_order.shuffle(&mut rng);
        let batches = if n_scan > 0 {
            scanlike.len().div_ceil(n_scan)
        } else {
            labeled.len().div_ceil(n_lab)
        };
        let mut acc = Accumulator::new(2, epoch, lr, false);
        for b in 0..batches {
            let mut batch = Vec::with_capacity(s.batch_size);
            for _ in 0..n_lab {
                if lab_at == lab_order.len() {
                    lab_order = (0..labeled.len()).collect();
                    lab_order.shuffle(&mut lab_rng);
                    lab_at = 0;
                }
                let i = lab_order[lab_at];
                lab_at += 1;
                batch.push(labeled.sample(i, pick_variant(labeled, i, augment, &mut lab_rng)));
            }
            if n_scan > 0 {
                let end = ((b + 1) * n_scan).min(scan_order.len());
                for &i in &scan_order[b * n_scan..end] {
                    batch.push(scanlike.sample(i, pick_variant(scanlike, i, augment, &mut rng)));
                }
            }
            acc.add(&step(&mut model, &mut adam, &batch, &opts, lr)?);
        }
        let mut m = acc.finish();
        let score = match val {
            Some(v) => {
                let l = validation_loss(&model, v, &cfg.loss, s.batch_size)?;
                m.validation = Some(l);
                l
            }
            None => m.decoder.total,
        };
        hook(&m, &model)?;
        history.push(m);
        if score < best.0 {
            best = (score, epoch, model.params.clone());
        } else if epoch - best.1 >= s.patience {
            break;
        }
    }
    model.params = best.2;
    Ok(TrainRun {
        model,
        history,
        best_epoch: best.1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learning_rate_steps_every_hundred_epochs() {
        let s = Schedule::default();
        assert_eq!(s.learning_rate(0), 1e-4);
        assert_eq!(s.learning_rate(99), 1e-4);
        assert!((s.learning_rate(150) - 0.75e-4).abs() < 1e-18);
        assert!((s.learning_rate(250) - 0.5625e-4).abs() < 1e-18);
    }

    #[test]
    fn schedule_rejects_bad_ratios() {
        let s = Schedule {
            labeled_ratio: 0.0,
            ..Default::default()
        };
        assert!(s.validate().is_err());
    }
}
