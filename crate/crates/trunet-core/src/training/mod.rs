//! Training loop: per-iteration poly learning rate, Dice+CE loss, Adam,
//! on-the-fly augmentation and preprocessing, per-epoch validation scoring,
//! and best-checkpoint tracking.

mod adam;
mod augment;
mod infer;
mod loss;
mod lr;
mod preprocess;

pub use adam::AdamState;
pub use augment::augment;
pub use infer::infer_labels;
pub use loss::{dice_ce_components, dice_ce_loss, LossComponents, DICE_SMOOTHING};
pub use lr::poly_lr;
pub use preprocess::{preprocess_train, standardize, InputMode, TrainInput};

use std::collections::HashMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, usage_err, Error, Result};
use crate::metrics::{macro_scores, VoxelBox};
use crate::models::Model;
use crate::phantom::derive_seed;
use crate::tensor::Tensor;
use crate::volume::VolumeSample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub poly_power: f64,
    /// Poly-decay horizon; defaults to `epochs * steps_per_epoch`.
    pub max_iters: Option<usize>,
    pub batch_size: usize,
    pub input_mode: InputMode,
    pub target_extent: usize,
    pub rotate_max_deg: f64,
    pub rotate_prob: f64,
    pub flip_prob: f64,
    pub seed: u64,
    pub epochs: usize,
    /// Optional wall-clock budget; checked between epochs.
    pub max_wall_seconds: Option<f64>,
    pub exclude_background: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            base_lr: 0.01,
            poly_power: 0.9,
            max_iters: None,
            batch_size: 1,
            input_mode: InputMode::Downsample,
            target_extent: 32,
            rotate_max_deg: 20.0,
            rotate_prob: 0.5,
            flip_prob: 0.5,
            seed: 0,
            epochs: 10,
            max_wall_seconds: None,
            exclude_background: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("rotate_prob", self.rotate_prob), ("flip_prob", self.flip_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(config_err!("{} must lie in [0, 1], got {}", name, p));
            }
        }
        if self.target_extent == 0 || self.target_extent % 16 != 0 {
            return Err(config_err!(
                "target_extent {} must be a positive multiple of 16",
                self.target_extent
            ));
        }
        if self.batch_size == 0 {
            return Err(config_err!("batch_size must be positive"));
        }
        if !(self.base_lr > 0.0) || self.poly_power < 0.0 {
            return Err(config_err!("base_lr must be positive, poly_power nonnegative"));
        }
        if self.rotate_max_deg < 0.0 {
            return Err(config_err!("rotate_max_deg must be nonnegative"));
        }
        Ok(())
    }
}

/// One trace row per epoch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub iter: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_dss_macro: f64,
    pub val_hd95_macro: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub rows: Vec<EpochRow>,
    pub best_epoch: Option<usize>,
    pub best_val_dss: f64,
    /// First epoch whose validation macro DSS is within 0.01 of the best.
    pub epochs_to_near_best: Option<usize>,
    pub seconds_to_near_best: Option<f64>,
}

impl TrainingTrace {
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("epoch,iter,lr,train_loss,val_dss_macro,val_hd95_macro,wall_seconds\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{:.8},{:.6},{:.6},{:.6},{:.3}\n",
                r.epoch, r.iter, r.lr, r.train_loss, r.val_dss_macro, r.val_hd95_macro,
                r.wall_seconds
            ));
        }
        s
    }

    fn finalize(&mut self) {
        // Runs without a validation set carry NaN scores; they have no best
        // epoch.
        let scored: Vec<&EpochRow> = self
            .rows
            .iter()
            .filter(|r| r.val_dss_macro.is_finite())
            .collect();
        let Some(best) = scored
            .iter()
            .max_by(|a, b| a.val_dss_macro.total_cmp(&b.val_dss_macro))
        else {
            return;
        };
        self.best_val_dss = best.val_dss_macro;
        self.best_epoch = Some(best.epoch);
        let near = scored
            .iter()
            .find(|r| r.val_dss_macro >= best.val_dss_macro - 0.01)
            .expect("the best row itself qualifies");
        self.epochs_to_near_best = Some(near.epoch);
        self.seconds_to_near_best = Some(near.wall_seconds);
    }
}

pub struct FitOutcome {
    pub trace: TrainingTrace,
    /// Parameter values at the best validation epoch, in declaration order.
    pub best_params: Option<Vec<Vec<f32>>>,
}

/// Copies saved parameter values back into a model (best-epoch restore).
pub fn restore_params(model: &Model<f32>, values: &[Vec<f32>]) {
    let params = model.named_parameters();
    assert_eq!(params.len(), values.len(), "snapshot/parameter mismatch");
    for ((_, p), v) in params.iter().zip(values) {
        p.data_mut().copy_from_slice(v);
    }
}

/// Trains `model` in place. Validation runs after every epoch; the trace
/// records losses, macro scores, and wall time. Boxes are required per
/// patient in crop mode.
pub fn fit(
    model: &Model<f32>,
    train: &[VolumeSample],
    val: &[VolumeSample],
    cfg: &TrainConfig,
    boxes: Option<&HashMap<u32, VoxelBox>>,
    mut on_epoch: Option<&mut dyn FnMut(&EpochRow)>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(usage_err!("fit called with an empty training set"));
    }
    let num_classes = model.config().num_classes;
    let params = model.named_parameters();
    let mut optimizer = AdamState::new(&params);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size);
    let horizon = cfg
        .max_iters
        .unwrap_or(cfg.epochs * steps_per_epoch)
        .max(1);

    let region_for = |patient: u32| -> Result<Option<VoxelBox>> {
        if cfg.input_mode != InputMode::CropThenDownsample {
            return Ok(None);
        }
        match boxes.and_then(|b| b.get(&patient)) {
            Some(b) => Ok(Some(*b)),
            None => Err(config_err!("no bounding box for patient {patient}")),
        }
    };

    let start = Instant::now();
    let mut trace = TrainingTrace::default();
    let mut best_dss = f64::NEG_INFINITY;
    let mut best_params: Option<Vec<Vec<f32>>> = None;
    let mut iter = 0usize;
    let t = cfg.target_extent;

    for epoch in 1..=cfg.epochs {
        if let Some(budget) = cfg.max_wall_seconds {
            if start.elapsed().as_secs_f64() >= budget {
                log::info!("wall budget reached before epoch {epoch}; stopping");
                break;
            }
        }
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64, 0x05D]));
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut last_lr = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut intensity = Vec::with_capacity(batch.len() * t * t * t);
            let mut labels: Vec<u8> = Vec::with_capacity(batch.len() * t * t * t);
            for &idx in batch {
                let sample = &train[idx];
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                    cfg.seed,
                    &[epoch as u64, idx as u64, 0xA06],
                ));
                let augmented = augment(
                    sample,
                    cfg.rotate_max_deg,
                    cfg.rotate_prob,
                    cfg.flip_prob,
                    &mut rng,
                );
                let region = region_for(sample.patient_id)?;
                let input =
                    preprocess_train(&augmented, cfg.input_mode, t, region.as_ref(), &mut rng)?;
                intensity.extend(standardize(&input.intensity));
                labels.extend_from_slice(&input.labels.voxels);
            }
            let x = Tensor::from_vec(&[batch.len(), 1, t, t, t], intensity);
            last_lr = poly_lr(cfg.base_lr, iter, horizon, cfg.poly_power);
            let probs = model.forward(&x)?;
            let loss = dice_ce_loss(&probs, &labels, cfg.exclude_background)?;
            let loss_value = loss.item() as f64;
            if !loss_value.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss {loss_value} at epoch {epoch}, iteration {iter}"
                )));
            }
            loss.backward()?;
            optimizer.update(&params, last_lr as f32);
            for (_, p) in &params {
                p.zero_grad();
            }
            epoch_loss += loss_value;
            iter += 1;
        }

        let (mut val_dss, mut val_hd) = (f64::NAN, f64::NAN);
        if !val.is_empty() {
            let (mut dss_acc, mut hd_acc) = (0.0, 0.0);
            for sample in val {
                let region = region_for(sample.patient_id)?;
                let pred = infer_labels(model, sample, cfg.input_mode, t, region.as_ref())?;
                let (d, h) = macro_scores(&pred, &sample.labels, num_classes)?;
                dss_acc += d;
                hd_acc += h;
            }
            val_dss = dss_acc / val.len() as f64;
            val_hd = hd_acc / val.len() as f64;
        }

        let row = EpochRow {
            epoch,
            iter,
            lr: last_lr,
            train_loss: epoch_loss / steps_per_epoch as f64,
            val_dss_macro: val_dss,
            val_hd95_macro: val_hd,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        if !val.is_empty() && val_dss > best_dss {
            best_dss = val_dss;
            best_params = Some(params.iter().map(|(_, p)| p.to_vec()).collect());
        }
        if let Some(cb) = on_epoch.as_deref_mut() {
            cb(&row);
        }
        trace.rows.push(row);
    }

    trace.finalize();
    Ok(FitOutcome { trace, best_params })
}

/// Adam moments plus step counter packed for the checkpoint's extras block.
pub fn optimizer_extras(
    optimizer: &AdamState<f32>,
    params: &crate::nn::NamedParams<f32>,
) -> Vec<(String, Vec<f32>)> {
    optimizer.to_extras(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build, ModelConfig, ModelKind};
    use crate::phantom::{generate_sample, PhantomSpec};

    fn tiny_dataset(n: usize) -> Vec<VolumeSample> {
        let spec = PhantomSpec::default();
        (0..n as u32)
            .map(|p| generate_sample(&spec, p, 1).unwrap())
            .collect()
    }

    fn tiny_model() -> Model<f32> {
        let mut cfg = ModelConfig::toy(ModelKind::ResUnet);
        cfg.unet_channels = vec![2, 4, 8, 8, 8];
        build::<f32>(&cfg, 1).unwrap()
    }

    fn fast_config(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            rotate_prob: 0.0,
            flip_prob: 0.0,
            ..Default::default()
        }
    }

    #[test]
    fn zero_epoch_budget_gives_empty_trace() {
        let model = tiny_model();
        let data = tiny_dataset(1);
        let out = fit(&model, &data, &data, &fast_config(0), None, None).unwrap();
        assert!(out.trace.rows.is_empty());
        assert!(out.best_params.is_none());
        assert!(out.trace.best_epoch.is_none());
    }

    #[test]
    fn fixed_seed_repeats_the_loss_trace() {
        let data = tiny_dataset(2);
        let cfg = TrainConfig {
            rotate_prob: 0.5,
            flip_prob: 0.5,
            ..fast_config(2)
        };
        let run = || {
            let model = tiny_model();
            fit(&model, &data, &data[..1], &cfg, None, None)
                .unwrap()
                .trace
        };
        let (a, b) = (run(), run());
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
            assert_eq!(ra.val_dss_macro.to_bits(), rb.val_dss_macro.to_bits());
            assert_eq!(ra.lr, rb.lr);
        }
    }

    #[test]
    fn trace_tracks_near_best_epoch() {
        let model = tiny_model();
        let data = tiny_dataset(1);
        let out = fit(&model, &data, &data, &fast_config(2), None, None).unwrap();
        assert_eq!(out.trace.rows.len(), 2);
        assert!(out.trace.best_epoch.is_some());
        let near = out.trace.epochs_to_near_best.unwrap();
        assert!(near <= out.trace.best_epoch.unwrap());
        assert!(out.best_params.is_some());
        let csv = out.trace.to_csv();
        assert!(csv.starts_with("epoch,iter,lr,"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let model = tiny_model();
        assert!(fit(&model, &[], &[], &fast_config(1), None, None).is_err());
    }

    #[test]
    fn crop_mode_without_boxes_fails_with_patient_id() {
        let model = tiny_model();
        let data = tiny_dataset(1);
        let cfg = TrainConfig {
            input_mode: InputMode::CropThenDownsample,
            ..fast_config(1)
        };
        let Err(err) = fit(&model, &data, &[], &cfg, None, None) else {
            panic!("crop mode without boxes must fail")
        };
        assert!(err.to_string().contains("patient 0"), "{err}");
    }
}
