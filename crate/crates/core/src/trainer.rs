//! Training loop, learning-rate schedules and K-fold splitting.
//!
//! Batches hold a single image. Every epoch draws its shuffle order and its
//! dropout masks from generators keyed on `(seed, epoch)`, so a run resumed
//! from a checkpoint retraces an uninterrupted one exactly.

use std::time::Instant;

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adamw::{adamw_step, AdamwConfig, AdamwState};
use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::error::{Error, Result};
use crate::gcn::GcnConfig;
use crate::model::{eval_loss, init_params, loss_and_gradients, AblationMode, ModelConfig, ModelParams, PreparedSample};
use crate::raster::RgbImage;
use crate::rng::{epoch_rng, stream_rng, Stream};
use crate::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulePreset {
    /// `1e-4` throughout.
    AblationFlat,
    /// `1e-3`, then `1e-4` from epoch 75, then `1e-5` from epoch 150.
    FivekStaged,
    /// `1e-3`, then `1e-4` from epoch 150, then `1e-5` from epoch 300.
    Hc200Staged,
}

impl SchedulePreset {
    pub fn steps(self) -> Vec<(usize, f64)> {
        match self {
            SchedulePreset::AblationFlat => vec![(0, 1e-4)],
            SchedulePreset::FivekStaged => vec![(0, 1e-3), (75, 1e-4), (150, 1e-5)],
            SchedulePreset::Hc200Staged => vec![(0, 1e-3), (150, 1e-4), (300, 1e-5)],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SchedulePreset::AblationFlat => "ablation-flat",
            SchedulePreset::FivekStaged => "fivek-staged",
            SchedulePreset::Hc200Staged => "hc200-staged",
        }
    }
}

impl std::str::FromStr for SchedulePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::AblationFlat, Self::FivekStaged, Self::Hc200Staged]
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown schedule `{s}` (expected ablation-flat, fivek-staged or hc200-staged)"
                ))
            })
    }
}

/// Piecewise-constant learning rate: a preset name or explicit
/// `[[start_epoch, lr], ...]` steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LrSchedule {
    Preset(SchedulePreset),
    Steps(Vec<(usize, f64)>),
}

impl LrSchedule {
    pub fn steps(&self) -> Vec<(usize, f64)> {
        match self {
            LrSchedule::Preset(p) => p.steps(),
            LrSchedule::Steps(s) => s.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let steps = self.steps();
        match steps.first() {
            Some((0, _)) => {}
            Some((e, _)) => return Err(Error::Config(format!("learning-rate schedule starts at epoch {e}, not 0"))),
            None => return Err(Error::Config("learning-rate schedule is empty".into())),
        }
        if steps.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config("learning-rate schedule epochs must be strictly increasing".into()));
        }
        if let Some((e, lr)) = steps.iter().find(|(_, lr)| !(lr.is_finite() && *lr > 0.0)) {
            return Err(Error::Config(format!("learning rate {lr} at epoch {e} must be positive")));
        }
        Ok(())
    }

    /// Rate of the last step starting at or before `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = self.steps();
        steps
            .iter()
            .rev()
            .find(|(start, _)| *start <= epoch)
            .or(steps.first())
            .map_or(0.0, |(_, lr)| *lr)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KFold {
    pub k: usize,
    pub fold: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub ablation_mode: AblationMode,
    pub epochs: usize,
    pub lr_schedule: LrSchedule,
    pub weight_decay: f64,
    pub seed: u64,
    pub batch_size: usize,
    pub kfold: Option<KFold>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub gcn: GcnConfig,
    pub fc_negative_slope: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamwConfig::default();
        Self {
            ablation_mode: AblationMode::Gsemtmo,
            epochs: 250,
            lr_schedule: LrSchedule::Preset(SchedulePreset::FivekStaged),
            weight_decay: adam.weight_decay,
            seed: 0,
            batch_size: 1,
            kfold: None,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            gcn: GcnConfig::default(),
            fc_negative_slope: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size != 1 {
            return Err(Error::Config(format!(
                "batch_size must be 1 (graphs differ per image), got {}",
                self.batch_size
            )));
        }
        self.lr_schedule.validate()?;
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay must be non-negative, got {}", self.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps must be positive".into()));
        }
        for (name, p) in [
            ("dropedge", self.gcn.dropedge),
            ("input_dropout", self.gcn.input_dropout),
            ("output_dropout", self.gcn.output_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("gcn.{name} must lie in [0, 1), got {p}")));
            }
        }
        if let Some(KFold { k, fold }) = self.kfold {
            if k < 2 || fold >= k {
                return Err(Error::Config(format!("kfold needs k >= 2 and fold < k, got k={k} fold={fold}")));
            }
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            mode: self.ablation_mode,
            gcn: self.gcn,
            fc_negative_slope: self.fc_negative_slope,
        }
    }

    pub fn adamw_config(&self) -> AdamwConfig {
        AdamwConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    config.lr_schedule.lr_at(epoch)
}

/// Summed absolute difference over all pixels and channels.
pub fn loss_l1(pred: &RgbImage, reference: &RgbImage) -> Result<f64> {
    if pred.dims() != reference.dims() {
        return Err(Error::dim(
            "loss_l1",
            (pred.height(), pred.width()),
            (reference.height(), reference.width()),
        ));
    }
    Ok(pred
        .pixels()
        .iter()
        .flatten()
        .zip(reference.pixels().iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .sum())
}

/// [`loss_l1`] divided by `3·W·H`.
pub fn loss_l1_mean(pred: &RgbImage, reference: &RgbImage) -> Result<f64> {
    let n = 3 * pred.pixels().len();
    Ok(loss_l1(pred, reference)? / n.max(1) as f64)
}

/// Validation indices of `fold` and the remaining training indices, both in
/// ascending order. Indices are shuffled with the seed and cut into `k`
/// contiguous folds of near-equal size.
pub fn kfold_indices(n: usize, k: usize, fold: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if k < 2 || fold >= k {
        return Err(Error::Usage(format!("kfold needs k >= 2 and fold < k, got k={k} fold={fold}")));
    }
    if n < k {
        return Err(Error::Usage(format!("cannot split {n} entries into {k} folds")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, Stream::Split));
    let (lo, hi) = (fold * n / k, (fold + 1) * n / k);
    let mut val = perm[lo..hi].to_vec();
    let mut train: Vec<usize> = perm[..lo].iter().chain(&perm[hi..]).copied().collect();
    val.sort_unstable();
    train.sort_unstable();
    Ok((train, val))
}

/// `(train, validation)` subsets of `items` for one fold.
pub fn kfold_split<T: Clone>(items: &[T], k: usize, fold: usize, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (train, val) = kfold_indices(items.len(), k, fold, seed)?;
    Ok((
        train.iter().map(|&i| items[i].clone()).collect(),
        val.iter().map(|&i| items[i].clone()).collect(),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over images of the per-image mean L1 (what the optimizer sees).
    pub train_loss: f64,
    /// Mean over images of the per-image summed L1.
    pub train_loss_sum: f64,
    /// Eval-mode, unclamped mean L1 over the validation set.
    pub val_loss: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_loss: Option<f64>,
    /// Seconds spent per epoch of this process; informational only and
    /// ignored by `==`.
    pub epoch_seconds: Vec<f64>,
}

impl PartialEq for TrainReport {
    fn eq(&self, other: &Self) -> bool {
        self.epochs == other.epochs && self.best_epoch == other.best_epoch && self.best_loss == other.best_loss
    }
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss,lr\n");
        for r in &self.epochs {
            let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, val, r.lr));
        }
        s
    }
}

/// Everything needed to continue training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub seed: u64,
    pub params: ModelParams,
    pub optimizer: AdamwState,
    /// Parameters with the lowest validation loss so far (lowest training
    /// loss when there is no validation set).
    pub best: ModelParams,
    pub best_epoch: Option<usize>,
    pub best_loss: Option<f64>,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn epochs_completed(&self) -> usize {
        self.history.len()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                model: self.params.config,
                seed: self.seed,
                epochs_completed: self.epochs_completed(),
                optimizer_step: Some(self.optimizer.step_count()),
                best_epoch: self.best_epoch,
                best_loss: self.best_loss,
                history: self.history.clone(),
            },
            params: self.params.clone(),
            optimizer: Some(self.optimizer.clone()),
            best: Some(self.best.clone()),
        }
    }

    /// The best parameters as a weights-only checkpoint.
    pub fn best_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::weights_only(self.best.clone(), self.seed, self.epochs_completed());
        ckpt.meta.best_epoch = self.best_epoch;
        ckpt.meta.best_loss = self.best_loss;
        ckpt.meta.history = self.history.clone();
        ckpt
    }

    pub fn report(&self) -> TrainReport {
        TrainReport {
            epochs: self.history.clone(),
            best_epoch: self.best_epoch,
            best_loss: self.best_loss,
            epoch_seconds: Vec::new(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters after the last epoch.
    pub params: ModelParams,
    pub best: ModelParams,
    pub report: TrainReport,
    pub state: TrainState,
}

pub struct Trainer {
    config: TrainConfig,
    state: TrainState,
}

impl Trainer {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = init_params(config.model_config(), config.seed);
        let optimizer = AdamwState::new(params.named_tensors().into_iter().map(|(_, t)| t));
        Ok(Self {
            config: config.clone(),
            state: TrainState {
                seed: config.seed,
                best: params.clone(),
                params,
                optimizer,
                best_epoch: None,
                best_loss: None,
                history: Vec::new(),
            },
        })
    }

    /// Continues from a checkpoint written by [`TrainState::to_checkpoint`].
    pub fn resume(config: &TrainConfig, ckpt: Checkpoint) -> Result<Self> {
        config.validate()?;
        if ckpt.params.config != config.model_config() {
            return Err(Error::Checkpoint(format!(
                "checkpoint architecture ({}) does not match the configuration ({})",
                ckpt.params.mode(),
                config.ablation_mode
            )));
        }
        if ckpt.meta.seed != config.seed {
            return Err(Error::Checkpoint(format!(
                "checkpoint was trained with seed {}, configuration says {}",
                ckpt.meta.seed, config.seed
            )));
        }
        let optimizer = ckpt
            .optimizer
            .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state; cannot resume".into()))?;
        if ckpt.meta.history.len() != ckpt.meta.epochs_completed {
            return Err(Error::Checkpoint("checkpoint history does not cover every completed epoch".into()));
        }
        Ok(Self {
            config: config.clone(),
            state: TrainState {
                seed: ckpt.meta.seed,
                best: ckpt.best.unwrap_or_else(|| ckpt.params.clone()),
                params: ckpt.params,
                optimizer,
                best_epoch: ckpt.meta.best_epoch,
                best_loss: ckpt.meta.best_loss,
                history: ckpt.meta.history,
            },
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    /// Runs the remaining epochs. `on_epoch` sees the state after each one.
    pub fn run(
        mut self,
        train: &[PreparedSample],
        val: &[PreparedSample],
        mut on_epoch: impl FnMut(&TrainState) -> Result<()>,
    ) -> Result<TrainOutcome> {
        if train.is_empty() && self.state.epochs_completed() < self.config.epochs {
            return Err(Error::Usage("training set is empty".into()));
        }
        let adam = self.config.adamw_config();
        let mut seconds = Vec::new();
        for epoch in self.state.epochs_completed()..self.config.epochs {
            let start = Instant::now();
            let lr = lr_at_epoch(&self.config, epoch);
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut epoch_rng(self.config.seed, Stream::Shuffle, epoch));
            let mut dropout = epoch_rng(self.config.seed, Stream::Dropout, epoch);

            let (mut mean_sum, mut sum_sum) = (0.0, 0.0);
            for &i in &order {
                let sample = &train[i];
                let (loss, grads) = loss_and_gradients(&self.state.params, sample, Mode::Train, &mut dropout)?;
                if !loss.mean.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                    return Err(Error::NonFiniteLoss {
                        image: sample.id.clone(),
                        epoch,
                    });
                }
                mean_sum += loss.mean;
                sum_sum += loss.sum;
                let mut tensors = self.state.params.tensors_mut();
                adamw_step(&mut tensors, &grads, &mut self.state.optimizer, lr, &adam)?;
            }
            let train_loss = mean_sum / train.len() as f64;
            let val_loss = if val.is_empty() {
                None
            } else {
                let mut total = 0.0;
                for sample in val {
                    let l = eval_loss(&self.state.params, sample)?;
                    if !l.is_finite() {
                        return Err(Error::NonFiniteLoss {
                            image: sample.id.clone(),
                            epoch,
                        });
                    }
                    total += l;
                }
                Some(total / val.len() as f64)
            };
            let score = val_loss.unwrap_or(train_loss);
            if self.state.best_loss.is_none_or(|b| score < b) {
                self.state.best = self.state.params.clone();
                self.state.best_loss = Some(score);
                self.state.best_epoch = Some(epoch);
            }
            let record = EpochRecord {
                epoch,
                train_loss,
                train_loss_sum: sum_sum / train.len() as f64,
                val_loss,
                lr,
            };
            match val_loss {
                Some(v) => info!("epoch {epoch}: train {train_loss:.6} val {v:.6} lr {lr:e}"),
                None => info!("epoch {epoch}: train {train_loss:.6} lr {lr:e}"),
            }
            self.state.history.push(record);
            seconds.push(start.elapsed().as_secs_f64());
            debug!("epoch {epoch} took {:.3}s", seconds.last().copied().unwrap_or(0.0));
            on_epoch(&self.state)?;
        }
        let mut report = self.state.report();
        report.epoch_seconds = seconds;
        Ok(TrainOutcome {
            params: self.state.params.clone(),
            best: self.state.best.clone(),
            report,
            state: self.state,
        })
    }
}

pub fn train(train_set: &[PreparedSample], val_set: &[PreparedSample], config: &TrainConfig) -> Result<TrainOutcome> {
    Trainer::new(config)?.run(train_set, val_set, |_| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::{DisplayImage, LinearImage, SegmentationMap};
    use rand::Rng;

    fn toy_samples(n: usize, mode: AblationMode) -> Vec<PreparedSample> {
        (0..n)
            .map(|i| {
                let img = LinearImage(RgbImage::from_fn(8, 6, |x, y| {
                    [0.05 * x as f64 + 0.01 * i as f64, 0.1 * y as f64, 0.4]
                }));
                let seg = SegmentationMap::from_fn(8, 6, |x, _| if x < 4 { 0 } else { 1 + (i % 3) as u8 }).unwrap();
                let reference = DisplayImage(img.map(|p| p.map(|v| v.sqrt())));
                PreparedSample::new(format!("img{i}"), &img, &seg, &reference, mode).unwrap()
            })
            .collect()
    }

    fn quick(mode: AblationMode, epochs: usize) -> TrainConfig {
        TrainConfig {
            ablation_mode: mode,
            epochs,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn schedule_lookup() {
        let five = LrSchedule::Preset(SchedulePreset::FivekStaged);
        assert_eq!(five.lr_at(0), 1e-3);
        assert_eq!(five.lr_at(50), 1e-3);
        assert_eq!(five.lr_at(75), 1e-4);
        assert_eq!(five.lr_at(100), 1e-4);
        assert_eq!(five.lr_at(249), 1e-5);
        let hc = LrSchedule::Preset(SchedulePreset::Hc200Staged);
        assert_eq!(hc.lr_at(149), 1e-3);
        assert_eq!(hc.lr_at(200), 1e-4);
        assert_eq!(LrSchedule::Preset(SchedulePreset::AblationFlat).lr_at(1000), 1e-4);
    }

    #[test]
    fn schedule_validation() {
        assert!(LrSchedule::Steps(vec![(0, 1e-3), (10, 1e-4)]).validate().is_ok());
        assert!(LrSchedule::Steps(vec![(1, 1e-3)]).validate().is_err());
        assert!(LrSchedule::Steps(vec![(0, 1e-3), (10, 1e-4), (10, 1e-5)]).validate().is_err());
        assert!(LrSchedule::Steps(vec![(0, 0.0)]).validate().is_err());
        assert!(LrSchedule::Steps(vec![]).validate().is_err());
    }

    #[test]
    fn schedule_serde_accepts_names_and_steps() {
        let p: LrSchedule = serde_json::from_str("\"hc200-staged\"").unwrap();
        assert_eq!(p, LrSchedule::Preset(SchedulePreset::Hc200Staged));
        let s: LrSchedule = serde_json::from_str("[[0, 0.01], [5, 0.001]]").unwrap();
        assert_eq!(s.steps(), vec![(0, 0.01), (5, 0.001)]);
    }

    #[test]
    fn config_rejects_batches() {
        let config = TrainConfig {
            batch_size: 4,
            ..TrainConfig::default()
        };
        assert!(matches!(config.validate(), Err(Error::Config(_))));
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn l1_by_hand() {
        let a = RgbImage::filled(1, 1, [0.0, 0.0, 0.0]);
        let b = RgbImage::filled(1, 1, [0.1, 0.2, 0.3]);
        assert!((loss_l1(&a, &b).unwrap() - 0.6).abs() < 1e-15);
        assert!((loss_l1_mean(&a, &b).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(loss_l1(&b, &b).unwrap(), 0.0);
        assert!(loss_l1(&a, &RgbImage::filled(2, 1, [0.0; 3])).is_err());
    }

    #[test]
    fn l1_matches_pixel_loop() {
        let mut rng = stream_rng(1, Stream::Synthetic);
        let mut gen = || RgbImage::from_fn(7, 5, |_, _| [rng.random(), rng.random(), rng.random()]);
        let (a, b) = (gen(), gen());
        let mut want = 0.0;
        for y in 0..5 {
            for x in 0..7 {
                for c in 0..3 {
                    want += (a.get(x, y)[c] - b.get(x, y)[c]).abs();
                }
            }
        }
        assert!((loss_l1(&a, &b).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn kfold_partitions() {
        let (train, val) = kfold_indices(200, 4, 2, 9).unwrap();
        assert_eq!((train.len(), val.len()), (150, 50));
        let mut seen = vec![0; 10];
        for f in 0..4 {
            let (_, v) = kfold_indices(10, 4, f, 1).unwrap();
            for i in v {
                seen[i] += 1;
            }
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(kfold_indices(10, 4, 1, 5).unwrap(), kfold_indices(10, 4, 1, 5).unwrap());
        assert!(kfold_indices(3, 4, 0, 0).is_err());
        assert!(kfold_indices(10, 4, 4, 0).is_err());
        assert!(kfold_indices(10, 1, 0, 0).is_err());
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let config = quick(AblationMode::Gsemtmo, 0);
        let out = train(&toy_samples(2, AblationMode::Gsemtmo), &[], &config).unwrap();
        assert_eq!(out.params, init_params(config.model_config(), config.seed));
        assert!(out.report.epochs.is_empty());
    }

    #[test]
    fn empty_training_set_is_an_error() {
        assert!(train(&[], &[], &quick(AblationMode::GlobalLut, 1)).is_err());
    }

    #[test]
    fn seeded_runs_are_identical_and_resume_exactly() {
        for mode in AblationMode::ALL {
            let samples = toy_samples(4, mode);
            let (tr, va) = samples.split_at(3);
            let config = quick(mode, 4);
            let a = train(tr, va, &config).unwrap();
            let b = train(tr, va, &config).unwrap();
            assert_eq!(a.report, b.report);
            assert_eq!(a.params, b.params);

            let half = Trainer::new(&quick(mode, 2)).unwrap().run(tr, va, |_| Ok(())).unwrap();
            let bytes = half.state.to_checkpoint().to_bytes().unwrap();
            let ckpt = Checkpoint::from_bytes(&bytes).unwrap();
            let resumed = Trainer::resume(&config, ckpt).unwrap().run(tr, va, |_| Ok(())).unwrap();
            assert_eq!(resumed.params, a.params, "{mode}");
            assert_eq!(resumed.report, a.report, "{mode}");
            assert_eq!(resumed.best, a.best, "{mode}");
        }
    }

    #[test]
    fn best_tracks_lowest_validation_loss() {
        let samples = toy_samples(3, AblationMode::LocalLut);
        let out = train(&samples[..2], &samples[2..], &quick(AblationMode::LocalLut, 6)).unwrap();
        let vals: Vec<f64> = out.report.epochs.iter().map(|r| r.val_loss.unwrap()).collect();
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(out.report.best_loss, Some(min));
        assert_eq!(eval_loss(&out.best, &samples[2]).unwrap(), min);
    }

    #[test]
    fn resume_rejects_other_architectures() {
        let samples = toy_samples(2, AblationMode::GlobalLut);
        let out = train(&samples, &[], &quick(AblationMode::GlobalLut, 1)).unwrap();
        let ckpt = out.state.to_checkpoint();
        assert!(Trainer::resume(&quick(AblationMode::LocalLut, 2), ckpt.clone()).is_err());
        let weights_only = out.state.best_checkpoint();
        assert!(Trainer::resume(&quick(AblationMode::GlobalLut, 2), weights_only).is_err());
    }

    #[test]
    fn nan_input_aborts_with_the_image_name() {
        let mut samples = toy_samples(2, AblationMode::GlobalLut);
        samples[1].input.values_mut()[0] = f64::NAN;
        match train(&samples, &[], &quick(AblationMode::GlobalLut, 1)) {
            Err(Error::NonFiniteLoss { image, epoch }) => {
                assert_eq!(image, "img1");
                assert_eq!(epoch, 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
