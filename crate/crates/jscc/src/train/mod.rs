//! End-to-end optimization under the average-MSE objective.
//!
//! Each iteration draws a training SNR uniformly from the schedule's list
//! (or uses the fixed single SNR in baseline mode), transmits the batch
//! through the channel at that SNR, and feeds the decoder the *true* noise
//! variance of the draw — estimation noise is strictly a test-time
//! experiment. The learning rate decays by a fixed factor every
//! `decay_every` epochs, and training stops once the selection metric (mean
//! test PSNR over the testing SNR grid) stops improving for `patience`
//! epochs.

pub mod adam;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::channel::tensor::awgn_tensor;
use crate::channel::{snr_to_variance, DEFAULT_POWER};
use crate::data::{Dataset, ImageBatch};
use crate::error::{Error, Result};
use crate::eval::psnr_from_tensors;
use crate::model::checkpoint;
use crate::model::Model;
use crate::seed::{self, Stream};

pub use adam::{Adam, AdamConfig};

/// Training hyper-parameters and schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSchedule {
    pub initial_lr: f64,
    pub decay_factor: f64,
    /// Epochs between learning-rate decays.
    pub decay_every: usize,
    pub batch_size: usize,
    /// Training SNR list in dB; one entry is drawn per iteration.
    pub train_snr_list: Vec<f64>,
    /// Baseline mode: train at exactly this SNR (the list must be empty).
    pub single_snr: Option<f64>,
    /// Epochs without selection-metric improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Draw an SNR per image instead of per batch.
    pub per_image_snr: bool,
    /// Testing SNR grid for the per-epoch selection metric.
    pub test_snr_list: Vec<f64>,
    /// Cap on test images used for the selection metric (0 = all).
    pub eval_subset: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            initial_lr: 1e-4,
            decay_factor: 0.9,
            decay_every: 10,
            batch_size: 64,
            train_snr_list: vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0],
            single_snr: None,
            patience: 15,
            max_epochs: 300,
            seed: 7,
            per_image_snr: false,
            test_snr_list: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            eval_subset: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        match (&self.single_snr, self.train_snr_list.is_empty()) {
            (Some(_), false) => {
                return Err(Error::config(
                    "exactly one of train_snr_list / single_snr may drive noise sampling; both are set",
                ))
            }
            (None, true) => {
                return Err(Error::config(
                    "exactly one of train_snr_list / single_snr must be set; neither is",
                ))
            }
            _ => {}
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if self.initial_lr <= 0.0 || self.decay_factor <= 0.0 || self.decay_factor > 1.0 {
            return Err(Error::config("learning-rate schedule values out of range"));
        }
        if self.decay_every == 0 {
            return Err(Error::config("decay_every must be >= 1"));
        }
        if self.test_snr_list.is_empty() && self.single_snr.is_none() {
            return Err(Error::config("test_snr_list must not be empty"));
        }
        Ok(())
    }

    /// `initial_lr · decay_factor^⌊epoch/decay_every⌋`.
    pub fn lr_at_epoch(&self, epoch: usize) -> f64 {
        self.initial_lr * self.decay_factor.powi((epoch / self.decay_every) as i32)
    }

    /// SNR grid used for the selection metric: the testing list for the
    /// adaptive schedule, the single training SNR in baseline mode.
    pub fn selection_snr_list(&self) -> Vec<f64> {
        match self.single_snr {
            Some(s) => vec![s],
            None => self.test_snr_list.clone(),
        }
    }
}

/// Uniform draw from the training SNR list, deterministic in
/// `(schedule.seed, step)`; baseline mode always returns the single SNR.
pub fn sample_train_snr(schedule: &TrainSchedule, step: u64) -> Result<f64> {
    if let Some(s) = schedule.single_snr {
        return Ok(s);
    }
    if schedule.train_snr_list.is_empty() {
        return Err(Error::config("train_snr_list is empty and no single_snr is set"));
    }
    let idx = seed::derive(schedule.seed, Stream::TrainSnr, &[step]) as usize % schedule.train_snr_list.len();
    Ok(schedule.train_snr_list[idx])
}

/// Average mean squared error over the batch:
/// `(1/N) Σ_i (1/n) ‖x_i − x̂_i‖²`.
pub fn mse_loss(x: &Tensor, xhat: &Tensor) -> Result<Tensor> {
    if x.dims() != xhat.dims() {
        return Err(Error::shape(format!(
            "mse_loss: {:?} vs {:?}",
            x.dims(),
            xhat.dims()
        )));
    }
    Ok((x - xhat)?.sqr()?.mean_all()?)
}

/// Mutable training progress, embedded in checkpoints for resumability.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainState {
    pub epoch: usize,
    pub step: usize,
    pub best_metric: f64,
    pub epochs_since_improvement: usize,
}

impl Default for TrainState {
    fn default() -> Self {
        TrainState {
            epoch: 0,
            step: 0,
            best_metric: f64::NEG_INFINITY,
            epochs_since_improvement: 0,
        }
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub loss: f64,
    pub snr_db: f64,
    /// Noise variance the decoder consumed this step — always the true
    /// variance of the sampled channel.
    pub sigma2: f64,
    pub lr: f64,
}

/// Result of a full training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub best_metric: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

pub struct Trainer {
    pub model: Model,
    adam: Adam,
    schedule: TrainSchedule,
    state: TrainState,
}

impl Trainer {
    pub fn new(model: Model, schedule: TrainSchedule) -> Result<Self> {
        schedule.validate()?;
        let adam = Adam::new(model.store(), AdamConfig::default())?;
        Ok(Trainer {
            model,
            adam,
            schedule,
            state: TrainState::default(),
        })
    }

    /// Resume from a checkpoint that carries optimizer state.
    pub fn resume(ckpt: checkpoint::Checkpoint, schedule: TrainSchedule) -> Result<Self> {
        schedule.validate()?;
        let state: TrainState = match ckpt.metadata.get("train_state") {
            Some(json) => serde_json::from_str(json)?,
            None => TrainState::default(),
        };
        let adam = match ckpt.optimizer {
            Some(opt) => Adam::from_state(ckpt.model.store(), AdamConfig::default(), opt)?,
            None => Adam::new(ckpt.model.store(), AdamConfig::default())?,
        };
        Ok(Trainer {
            model: ckpt.model,
            adam,
            schedule,
            state,
        })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn schedule(&self) -> &TrainSchedule {
        &self.schedule
    }

    fn snrs_for_step(&self, batch_len: usize, step: u64) -> Result<(Vec<f64>, Vec<f64>, Vec<u64>)> {
        if self.schedule.per_image_snr && self.schedule.single_snr.is_none() {
            let mut snrs = Vec::with_capacity(batch_len);
            let mut vars = Vec::with_capacity(batch_len);
            let mut seeds = Vec::with_capacity(batch_len);
            for i in 0..batch_len {
                let idx = seed::derive(self.schedule.seed, Stream::TrainSnr, &[step, i as u64]) as usize
                    % self.schedule.train_snr_list.len();
                let snr = self.schedule.train_snr_list[idx];
                snrs.push(snr);
                vars.push(snr_to_variance(snr, DEFAULT_POWER)?);
                seeds.push(seed::derive(self.schedule.seed, Stream::TrainNoise, &[step, i as u64]));
            }
            Ok((snrs, vars, seeds))
        } else {
            let snr = sample_train_snr(&self.schedule, step)?;
            let sigma2 = snr_to_variance(snr, DEFAULT_POWER)?;
            let noise_seed = seed::derive(self.schedule.seed, Stream::TrainNoise, &[step]);
            Ok((vec![snr], vec![sigma2], vec![noise_seed]))
        }
    }

    /// One optimization step: encode → AWGN at the sampled SNR → decode with
    /// the true variance → backprop → Adam update.
    pub fn train_step(&mut self, batch: &ImageBatch) -> Result<StepInfo> {
        let lr = self.schedule.lr_at_epoch(self.state.epoch);
        let step = self.state.step as u64;
        let store = self.model.store();
        let x = batch.to_tensor(store.device(), store.dtype())?;
        let (snrs, sigma2s, noise_seeds) = self.snrs_for_step(batch.len(), step)?;

        let y = self.model.encode(&x)?;
        let z = awgn_tensor(&y, &sigma2s, &noise_seeds)?;
        let xhat = self.model.decode(&z, &sigma2s, true)?;
        let loss_t = mse_loss(&x, &xhat)?;
        let loss = loss_t.to_dtype(candle_core::DType::F64)?.to_vec0::<f64>()?;
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite loss {loss} at step {} (epoch {}, snr {:?} dB, lr {lr})",
                self.state.step, self.state.epoch, snrs
            )));
        }
        let grads = loss_t.backward()?;
        self.adam.step(self.model.store(), &grads, lr)?;
        self.state.step += 1;
        Ok(StepInfo {
            loss,
            snr_db: snrs[0],
            sigma2: sigma2s[0],
            lr,
        })
    }

    /// Selection metric: mean test PSNR over the selection SNR grid, with
    /// the decoder consuming the true channel variance. Returns the mean and
    /// the per-SNR values.
    pub fn evaluate_selection_metric(&self, test: &Dataset) -> Result<(f64, Vec<(f64, f64)>)> {
        let subset = if self.schedule.eval_subset > 0 {
            test.subset(self.schedule.eval_subset)
        } else {
            test.clone()
        };
        let store = self.model.store();
        let snrs = self.schedule.selection_snr_list();
        let mut per_snr = Vec::with_capacity(snrs.len());
        for &snr in &snrs {
            let sigma2 = snr_to_variance(snr, DEFAULT_POWER)?;
            let mut psnr_sum = 0.0;
            let mut count = 0usize;
            for batch in subset.batches(self.schedule.batch_size, None)? {
                let x = batch.to_tensor(store.device(), store.dtype())?;
                let y = self.model.encode(&x)?;
                let seeds: Vec<u64> = batch
                    .ids()
                    .iter()
                    .map(|&id| seed::derive(self.schedule.seed, Stream::EvalNoise, &[id as u64, seed::millidb(snr)]))
                    .collect();
                let vars = vec![sigma2; batch.len()];
                let z = awgn_tensor(&y, &vars, &seeds)?;
                let xhat = self.model.decode(&z, &vars, false)?;
                for p in psnr_from_tensors(&x, &xhat, 1.0)? {
                    psnr_sum += p;
                    count += 1;
                }
            }
            per_snr.push((snr, psnr_sum / count as f64));
        }
        let mean = per_snr.iter().map(|(_, p)| p).sum::<f64>() / per_snr.len() as f64;
        Ok((mean, per_snr))
    }

    fn write_log_row(log_path: &Path, row: &str) -> Result<()> {
        let mut f = OpenOptions::new().create(true).append(true).open(log_path)?;
        writeln!(f, "{row}")?;
        Ok(())
    }

    /// Full training loop with learning-rate decay, per-epoch selection
    /// evaluation, best-checkpoint keeping and early stopping.
    pub fn train(&mut self, train_set: &Dataset, test_set: &Dataset, out_dir: &Path) -> Result<TrainOutcome> {
        std::fs::create_dir_all(out_dir)?;
        let log_path = out_dir.join("train_log.tsv");
        let best_path = out_dir.join("best.ckpt");
        let last_path = out_dir.join("last.ckpt");
        if self.state.epoch == 0 {
            let snr_cols: String = self
                .schedule
                .selection_snr_list()
                .iter()
                .map(|s| format!("\tpsnr_{s}dB"))
                .collect();
            Self::write_log_row(&log_path, &format!("epoch\tstep\tlr\ttrain_loss\tmean_psnr{snr_cols}"))?;
        }

        let mut stopped_early = false;
        let start_epoch = self.state.epoch;
        let mut epochs_run = 0usize;
        for epoch in start_epoch..self.schedule.max_epochs {
            self.state.epoch = epoch;
            let mut loss_sum = 0.0;
            let mut batches = 0usize;
            for batch in train_set.batches(self.schedule.batch_size, Some((self.schedule.seed, epoch as u64)))? {
                let info = self.train_step(&batch)?;
                loss_sum += info.loss;
                batches += 1;
            }
            let train_loss = loss_sum / batches.max(1) as f64;
            let (metric, per_snr) = self.evaluate_selection_metric(test_set)?;
            epochs_run += 1;

            let improved = metric > self.state.best_metric;
            if improved {
                self.state.best_metric = metric;
                self.state.epochs_since_improvement = 0;
            } else {
                self.state.epochs_since_improvement += 1;
            }

            let psnr_cols: String = per_snr.iter().map(|(_, p)| format!("\t{p:.4}")).collect();
            Self::write_log_row(
                &log_path,
                &format!(
                    "{epoch}\t{}\t{:.6e}\t{:.6e}\t{metric:.4}{psnr_cols}",
                    self.state.step,
                    self.schedule.lr_at_epoch(epoch),
                    train_loss
                ),
            )?;
            log::info!(
                "epoch {epoch}: loss {train_loss:.5}, mean test PSNR {metric:.2} dB{}",
                if improved { " (best)" } else { "" }
            );

            let state_json = serde_json::to_string(&self.state)?;
            if improved {
                checkpoint::save(
                    &self.model,
                    None,
                    &[
                        ("train_state".into(), state_json.clone()),
                        ("best_metric".into(), format!("{metric}")),
                    ],
                    &best_path,
                )?;
            }
            checkpoint::save(
                &self.model,
                Some(&self.adam.state()),
                &[("train_state".into(), state_json)],
                &last_path,
            )?;

            if self.state.epochs_since_improvement > self.schedule.patience {
                stopped_early = true;
                break;
            }
        }
        self.state.epoch += 1;
        Ok(TrainOutcome {
            best_checkpoint: best_path,
            last_checkpoint: last_path,
            log_path,
            best_metric: self.state.best_metric,
            epochs_run,
            stopped_early,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_formula() {
        let s = TrainSchedule::default();
        assert!((s.lr_at_epoch(0) - 1e-4).abs() < 1e-18);
        assert!((s.lr_at_epoch(9) - 1e-4).abs() < 1e-18);
        assert!((s.lr_at_epoch(10) - 0.9e-4).abs() < 1e-18);
        assert!((s.lr_at_epoch(25) - 8.1e-5).abs() < 1e-18);
    }

    #[test]
    fn lr_is_non_increasing() {
        let s = TrainSchedule::default();
        let mut prev = f64::INFINITY;
        for e in 0..100 {
            let lr = s.lr_at_epoch(e);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn snr_sampling_singleton_list() {
        let s = TrainSchedule {
            train_snr_list: vec![10.0],
            ..TrainSchedule::default()
        };
        for step in 0..20 {
            assert_eq!(sample_train_snr(&s, step).unwrap(), 10.0);
        }
    }

    #[test]
    fn snr_sampling_baseline_mode_is_constant() {
        let s = TrainSchedule {
            train_snr_list: vec![],
            single_snr: Some(20.0),
            ..TrainSchedule::default()
        };
        s.validate().unwrap();
        for step in 0..20 {
            assert_eq!(sample_train_snr(&s, step).unwrap(), 20.0);
        }
    }

    #[test]
    fn snr_sampling_is_uniform() {
        let s = TrainSchedule::default();
        let n = 600_000u64;
        let mut counts = std::collections::HashMap::new();
        for step in 0..n {
            let v = sample_train_snr(&s, step).unwrap();
            *counts.entry(v as i64).or_insert(0usize) += 1;
        }
        let expected = n as f64 / 6.0;
        for (snr, count) in counts {
            let rel = (count as f64 - expected).abs() / expected;
            assert!(rel < 0.01, "snr {snr} frequency off by {rel}");
        }
    }

    #[test]
    fn schedule_rejects_ambiguous_snr_modes() {
        let both = TrainSchedule {
            single_snr: Some(10.0),
            ..TrainSchedule::default()
        };
        assert!(both.validate().is_err());
        let neither = TrainSchedule {
            train_snr_list: vec![],
            ..TrainSchedule::default()
        };
        assert!(neither.validate().is_err());
    }

    #[test]
    fn mse_loss_known_values() {
        let dev = candle_core::Device::Cpu;
        let x = Tensor::zeros((1, 3, 32, 32), candle_core::DType::F64, &dev).unwrap();
        let xhat = Tensor::full(0.5f64, (1, 3, 32, 32), &dev).unwrap();
        let l = mse_loss(&x, &xhat).unwrap().to_vec0::<f64>().unwrap();
        assert!((l - 0.25).abs() < 1e-12);
        let zero = mse_loss(&x, &x).unwrap().to_vec0::<f64>().unwrap();
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn mse_loss_rejects_shape_mismatch() {
        let dev = candle_core::Device::Cpu;
        let x = Tensor::zeros((1, 3, 32, 32), candle_core::DType::F64, &dev).unwrap();
        let y = Tensor::zeros((2, 3, 32, 32), candle_core::DType::F64, &dev).unwrap();
        assert!(matches!(mse_loss(&x, &y), Err(Error::Shape(_))));
    }

    #[test]
    fn mse_loss_matches_brute_force() {
        let dev = candle_core::Device::Cpu;
        let a: Vec<f64> = (0..2 * 3 * 32 * 32).map(|i| ((i * 37 % 101) as f64) / 101.0).collect();
        let b: Vec<f64> = (0..2 * 3 * 32 * 32).map(|i| ((i * 53 % 89) as f64) / 89.0).collect();
        let x = Tensor::from_vec(a.clone(), (2, 3, 32, 32), &dev).unwrap();
        let y = Tensor::from_vec(b.clone(), (2, 3, 32, 32), &dev).unwrap();
        let fast = mse_loss(&x, &y).unwrap().to_vec0::<f64>().unwrap();
        // Independent double loop: mean over images of per-image MSE.
        let n = 3 * 32 * 32;
        let mut total = 0.0;
        for img in 0..2 {
            let mut acc = 0.0;
            for j in 0..n {
                let d = a[img * n + j] - b[img * n + j];
                acc += d * d;
            }
            total += acc / n as f64;
        }
        let slow = total / 2.0;
        assert!((fast - slow).abs() / slow < 1e-10, "{fast} vs {slow}");
    }
}
