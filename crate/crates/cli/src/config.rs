//! Flat `key = value` run configuration.
//!
//! Values come from built-in defaults, then the `--config` file, then
//! command-line overrides. Unknown keys are rejected so a typo never
//! silently falls back to a default.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use conv4rec::dataset::{RatingScale, SplitSpec};
use conv4rec::theory::{SamplingMode, SynthConfig, TvExperimentConfig};
use conv4rec::training::{StopMetric, TrainConfig};

use crate::CliError;

/// Every accepted key with its default value.
const DEFAULTS: &[(&str, &str)] = &[
    ("data", ""),
    ("scale", ""),
    ("split.train", "0.9"),
    ("split.validation", "0.05"),
    ("split.test", "0.05"),
    ("split.seed", "0"),
    ("split.stratified", "false"),
    ("seed", "0"),
    ("model.r", "32"),
    ("model.depth", "3"),
    ("model.width", "16"),
    ("model.bias", "true"),
    ("train.learning_rate", "0.01"),
    ("train.batch_size", "32"),
    ("train.epoch_block", "10"),
    ("train.max_blocks", "4"),
    ("train.stop_metric", "validation-loss"),
    ("train.weight_decay", "0"),
    ("eval.recall_k", "50,100"),
    ("eval.skip_cold_users", "false"),
    ("eval.exclude_validation", "false"),
    ("eval.lambda_density", "false"),
    ("predict.user", ""),
    ("predict.item", ""),
    ("predict.percentile", "0.1"),
    ("bounds.delta", "0.05"),
    ("synth.m", "50"),
    ("synth.n", "80"),
    ("synth.r_true", "2"),
    ("synth.k", "5"),
    ("synth.width", "8"),
    ("synth.embed_scale", "1"),
    ("synth.weight_scale", "2"),
    ("synth.noiseless", "false"),
    ("synth.sizes", "1000,10000,100000"),
    ("synth.seeds", "0,1,2"),
    ("synth.sampling", "with-replacement"),
    ("synth.r", "8"),
    ("synth.depth", "2"),
    ("synth.width_model", "16"),
    ("synth.learning_rate", "0.01"),
    ("synth.batch_size", "10"),
    ("synth.epoch_block", "10"),
    ("synth.max_blocks", "20"),
    ("gradcheck.m", "8"),
    ("gradcheck.n", "12"),
    ("gradcheck.k", "5"),
    ("gradcheck.r", "4"),
    ("gradcheck.depth", "3"),
    ("gradcheck.width", "6"),
    ("gradcheck.density", "0.3"),
    ("gradcheck.bias", "false"),
    ("gradcheck.h", "1e-5"),
    ("gradcheck.threshold", "1e-4"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: DEFAULTS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.trim().to_string();
                Ok(())
            }
            None => Err(usage(format!("unknown config key '{key}'"))),
        }
    }

    /// Applies a `key = value` text; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| usage(format!("{origin}:{}: expected key = value", idx + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| usage(format!("{origin}:{}: {e}", idx + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// Canonical echo: every key, sorted, one per line.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).expect("known key")
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .parse()
            .map_err(|e| usage(format!("config key {key} = '{}': {e}", self.raw(key))))
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| usage(format!("config key {key}: '{s}': {e}")))
            })
            .collect()
    }

    pub fn data_path(&self) -> Result<PathBuf, CliError> {
        match self.raw("data") {
            "" => Err(usage("config key 'data' (ratings file) is required")),
            p => Ok(PathBuf::from(p)),
        }
    }

    pub fn scale(&self) -> Result<Option<RatingScale>, CliError> {
        match self.raw("scale") {
            "" => Ok(None),
            s => s
                .parse()
                .map(Some)
                .map_err(|e| usage(format!("config key scale: {e}"))),
        }
    }

    pub fn split_spec(&self) -> Result<SplitSpec, CliError> {
        Ok(SplitSpec {
            train: self.get("split.train")?,
            validation: self.get("split.validation")?,
            test: self.get("split.test")?,
            seed: self.get("split.seed")?,
            stratified: self.get("split.stratified")?,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let metric: StopMetric = self.get("train.stop_metric")?;
        Ok(TrainConfig {
            r: self.get("model.r")?,
            depth: self.get("model.depth")?,
            width: self.get("model.width")?,
            bias: self.get("model.bias")?,
            learning_rate: self.get("train.learning_rate")?,
            batch_size: self.get("train.batch_size")?,
            epoch_block: self.get("train.epoch_block")?,
            max_blocks: self.get("train.max_blocks")?,
            stop_metric: metric,
            weight_decay: self.get("train.weight_decay")?,
            seed: self.get("seed")?,
        })
    }

    pub fn synth_config(&self) -> Result<SynthConfig, CliError> {
        Ok(SynthConfig {
            m: self.get("synth.m")?,
            n: self.get("synth.n")?,
            r_true: self.get("synth.r_true")?,
            k: self.get("synth.k")?,
            width: self.get("synth.width")?,
            embed_scale: self.get("synth.embed_scale")?,
            weight_scale: self.get("synth.weight_scale")?,
            noiseless: self.get("synth.noiseless")?,
            seed: self.get("seed")?,
        })
    }

    pub fn synth_train_config(&self) -> Result<TrainConfig, CliError> {
        Ok(TrainConfig {
            r: self.get("synth.r")?,
            depth: self.get("synth.depth")?,
            width: self.get("synth.width_model")?,
            bias: false,
            learning_rate: self.get("synth.learning_rate")?,
            batch_size: self.get("synth.batch_size")?,
            epoch_block: self.get("synth.epoch_block")?,
            max_blocks: self.get("synth.max_blocks")?,
            stop_metric: StopMetric::ValidationLoss,
            weight_decay: 0.0,
            seed: self.get("seed")?,
        })
    }

    pub fn sampling(&self) -> Result<SamplingMode, CliError> {
        match self.raw("synth.sampling") {
            "with-replacement" => Ok(SamplingMode::WithReplacement),
            "duplicate-free" => Ok(SamplingMode::DuplicateFree),
            other => Err(usage(format!(
                "synth.sampling must be with-replacement or duplicate-free, got '{other}'"
            ))),
        }
    }

    /// Everything `synth-tv` runs, validated.
    pub fn tv_experiment(&self) -> Result<TvExperimentConfig, CliError> {
        let exp = TvExperimentConfig {
            synth: self.synth_config()?,
            sample_sizes: self.list("synth.sizes")?,
            seeds: self.list("synth.seeds")?,
            mode: self.sampling()?,
            train: self.synth_train_config()?,
            delta: self.get("bounds.delta")?,
        };
        exp.train.validate()?;
        if exp.sample_sizes.is_empty() || exp.seeds.is_empty() {
            return Err(usage("synth.sizes and synth.seeds must be non-empty"));
        }
        Ok(exp)
    }
}
