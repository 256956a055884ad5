//! Run configuration: line-oriented `key = value` files with dotted
//! sections, strict key validation, `--set` overrides and deterministic
//! effective-config serialization.
//!
//! The format is intentionally tiny and diff-friendly: one key per line,
//! `#` comments, blank lines ignored. Every key has a registered default —
//! serializing a config always writes the complete effective key set.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::model::{ModelConfig, ModelKind};
use crate::train::TrainSchedule;

/// `(key, default, help)` for every recognized key.
pub const REGISTRY: &[(&str, &str, &str)] = &[
    ("seed", "7", "global seed; all randomness derives from it"),
    ("model.kind", "adaptive", "adaptive | baseline"),
    ("model.c", "8", "encoder output channels (even); k = 32*c, bandwidth ratio c/96"),
    ("model.dm_enabled", "true", "enable the denoising module (adaptive model only)"),
    ("model.dm_filter_reduction", "16", "filters removed from decoder capacity convs when the DM is off"),
    ("model.base_width", "32", "decoder capacity width with the DM on"),
    ("model.snr_map_db", "false", "fill the SNR map with dB instead of noise variance (ablation)"),
    ("schedule.initial_lr", "1e-4", "initial Adam learning rate"),
    ("schedule.decay_factor", "0.9", "learning-rate multiplier applied every decay_every epochs"),
    ("schedule.decay_every", "10", "epochs between learning-rate decays"),
    ("schedule.batch_size", "64", "training batch size"),
    ("schedule.train_snr_list", "0,5,10,15,20,25", "training SNRs in dB; one drawn per iteration"),
    ("schedule.single_snr", "none", "baseline mode: train at exactly this SNR (train_snr_list must be empty)"),
    ("schedule.patience", "15", "epochs without test improvement before stopping"),
    ("schedule.max_epochs", "300", "hard epoch cap"),
    ("schedule.per_image_snr", "false", "sample a training SNR per image instead of per batch"),
    ("schedule.eval_subset", "0", "test images used for the per-epoch selection metric (0 = all)"),
    ("data.source", "cifar10", "cifar10 | synthetic"),
    ("data.cache_dir", "data", "dataset cache directory"),
    ("data.train_subset", "0", "train on the first N images (0 = all)"),
    ("data.test_subset", "0", "evaluate on the first N test images (0 = all)"),
    ("data.synthetic_train", "50000", "synthetic train set size"),
    ("data.synthetic_test", "10000", "synthetic test set size"),
    ("eval.test_snr_list", "0,5,10,15,20", "testing SNRs in dB"),
    ("eval.est_noise_var", "0", "variance (dB^2) of decoder SNR-estimation noise during sweeps"),
    ("eval.noise_realizations", "1", "channel noise realizations averaged per (image, SNR)"),
    ("eval.pilot_len", "64", "pilot symbols per transmission in pilot estimation mode"),
    ("eval.batch_size", "64", "evaluation batch size"),
    ("paths.out_dir", "runs/run", "output directory for checkpoints, logs and reports"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: REGISTRY.iter().map(|(k, d, _)| (k.to_string(), d.to_string())).collect(),
        }
    }
}

impl RunConfig {
    /// Parse file text over the defaults. Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(format!("line {}: expected 'key = value', got '{raw}'", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Set one key, rejecting unknown keys (strict parsing).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !self.values.contains_key(key) {
            return Err(Error::config(format!("unknown config key '{key}'")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Apply a `--set section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--set expects key=value, got '{spec}'")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::config(format!("unknown config key '{key}'")))
    }

    /// Complete effective configuration, sorted, one key per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// Persist the effective config next to a run's outputs.
    pub fn persist(&self, out_dir: &Path, name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(out_dir)?;
        let path = out_dir.join(name);
        std::fs::write(&path, self.to_text())?;
        Ok(path)
    }

    fn parse_typed<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<T> {
        let raw = self.get(key)?;
        raw.parse::<T>()
            .map_err(|_| Error::config(format!("config key '{key}': '{raw}' is not a valid {what}")))
    }

    pub fn u64_value(&self, key: &str) -> Result<u64> {
        self.parse_typed(key, "integer")
    }

    pub fn usize_value(&self, key: &str) -> Result<usize> {
        self.parse_typed(key, "integer")
    }

    pub fn f64_value(&self, key: &str) -> Result<f64> {
        self.parse_typed(key, "number")
    }

    pub fn bool_value(&self, key: &str) -> Result<bool> {
        match self.get(key)? {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            other => Err(Error::config(format!("config key '{key}': '{other}' is not a boolean"))),
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self.get(key)?.trim();
        if raw.is_empty() || raw == "none" {
            return Ok(vec![]);
        }
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::config(format!("config key '{key}': '{s}' is not a number")))
            })
            .collect()
    }

    pub fn optional_f64(&self, key: &str) -> Result<Option<f64>> {
        let raw = self.get(key)?.trim();
        if raw.is_empty() || raw == "none" {
            return Ok(None);
        }
        raw.parse::<f64>()
            .map(Some)
            .map_err(|_| Error::config(format!("config key '{key}': '{raw}' is not a number")))
    }

    pub fn seed(&self) -> Result<u64> {
        self.u64_value("seed")
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        Ok(PathBuf::from(self.get("paths.out_dir")?))
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let c = self.usize_value("model.c")?;
        let kind = match self.get("model.kind")? {
            "adaptive" => ModelKind::Adaptive,
            "baseline" => ModelKind::Baseline,
            other => return Err(Error::config(format!("model.kind must be adaptive|baseline, got '{other}'"))),
        };
        let mut cfg = match kind {
            ModelKind::Adaptive => ModelConfig::adaptive(c, self.bool_value("model.dm_enabled")?)?,
            ModelKind::Baseline => ModelConfig::baseline(c)?,
        };
        cfg.dm_filter_reduction = self.usize_value("model.dm_filter_reduction")?;
        cfg.base_width = self.usize_value("model.base_width")?;
        cfg.snr_map_db = self.bool_value("model.snr_map_db")?;
        cfg.rebuild_specs();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_schedule(&self) -> Result<TrainSchedule> {
        let schedule = TrainSchedule {
            initial_lr: self.f64_value("schedule.initial_lr")?,
            decay_factor: self.f64_value("schedule.decay_factor")?,
            decay_every: self.usize_value("schedule.decay_every")?,
            batch_size: self.usize_value("schedule.batch_size")?,
            train_snr_list: self.f64_list("schedule.train_snr_list")?,
            single_snr: self.optional_f64("schedule.single_snr")?,
            patience: self.usize_value("schedule.patience")?,
            max_epochs: self.usize_value("schedule.max_epochs")?,
            seed: self.seed()?,
            per_image_snr: self.bool_value("schedule.per_image_snr")?,
            test_snr_list: self.f64_list("eval.test_snr_list")?,
            eval_subset: self.usize_value("schedule.eval_subset")?,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn eval_options(&self) -> Result<EvalOptions> {
        Ok(EvalOptions {
            seed: self.seed()?,
            batch_size: self.usize_value("eval.batch_size")?,
            noise_realizations: self.usize_value("eval.noise_realizations")?,
            noiseless_channel: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_cover_registry() {
        let cfg = RunConfig::default();
        for (key, default, _) in REGISTRY {
            assert_eq!(cfg.get(key).unwrap(), *default);
        }
    }

    #[test]
    fn parse_accepts_comments_and_overrides() {
        let cfg = RunConfig::parse("# comment\n\nmodel.c = 16\nschedule.batch_size = 32\n").unwrap();
        assert_eq!(cfg.usize_value("model.c").unwrap(), 16);
        assert_eq!(cfg.usize_value("schedule.batch_size").unwrap(), 32);
        // Untouched keys keep their defaults.
        assert_eq!(cfg.get("model.kind").unwrap(), "adaptive");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::parse("model.frobnicate = 1\n"), Err(Error::Config(_))));
        let mut cfg = RunConfig::default();
        assert!(cfg.apply_override("nope=1").is_err());
    }

    #[test]
    fn malformed_lines_rejected() {
        assert!(RunConfig::parse("model.c\n").is_err());
    }

    #[test]
    fn set_override_syntax() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("schedule.single_snr=10").unwrap();
        cfg.apply_override("schedule.train_snr_list=").unwrap();
        let schedule = cfg.train_schedule().unwrap();
        assert_eq!(schedule.single_snr, Some(10.0));
        assert!(schedule.train_snr_list.is_empty());
    }

    #[test]
    fn effective_text_roundtrips() {
        let mut cfg = RunConfig::default();
        cfg.set("model.c", "16").unwrap();
        cfg.set("data.source", "synthetic").unwrap();
        let text = cfg.to_text();
        let back = RunConfig::parse(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn typed_accessors_build_model_and_schedule() {
        let cfg = RunConfig::default();
        let model = cfg.model_config().unwrap();
        assert_eq!(model.c, 8);
        assert_eq!(model.kind, ModelKind::Adaptive);
        let schedule = cfg.train_schedule().unwrap();
        assert_eq!(schedule.batch_size, 64);
        assert_eq!(schedule.train_snr_list, vec![0.0, 5.0, 10.0, 15.0, 20.0, 25.0]);
        assert_eq!(schedule.test_snr_list, vec![0.0, 5.0, 10.0, 15.0, 20.0]);
    }

    #[test]
    fn baseline_config_requires_single_snr() {
        let mut cfg = RunConfig::default();
        cfg.set("model.kind", "baseline").unwrap();
        // Still has the full train list: schedule invalid for baseline use
        // only when both modes are set; switching modes needs both keys.
        cfg.set("schedule.single_snr", "20").unwrap();
        assert!(cfg.train_schedule().is_err());
        cfg.set("schedule.train_snr_list", "").unwrap();
        let schedule = cfg.train_schedule().unwrap();
        assert_eq!(schedule.single_snr, Some(20.0));
    }

    #[test]
    fn bad_values_are_reported_with_key() {
        let mut cfg = RunConfig::default();
        cfg.set("model.c", "eight").unwrap();
        let err = cfg.model_config().unwrap_err();
        assert!(err.to_string().contains("model.c"));
    }
}
