//! Run configuration: plain-text `key = value` lines with `#` comments.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::models::ModelConfig;
use crate::schedule::{NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START};
use crate::training::{config_hash, AdamW};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub scale: usize,
    pub hr_size: usize,
    pub t_train: usize,
    pub t_eval: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub base_width: usize,
    pub channel_mults: Vec<usize>,
    pub n_blocks: usize,
    pub dropout: f64,
    pub predictor_hidden: usize,
    pub predictor_layers: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub use_dwt: bool,
    pub use_init_predictor: bool,
    pub final_noise: bool,
    /// Images generated by `gen-data`.
    pub n_images: usize,
    /// The last `n_eval` images of the corpus are held out from training.
    pub n_eval: usize,
    pub data_dir: PathBuf,
    pub run_name: String,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::desk();
        Self {
            scale: 4,
            hr_size: 32,
            t_train: 200,
            t_eval: 100,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            base_width: m.base_width,
            channel_mults: m.channel_mults,
            n_blocks: m.n_blocks,
            dropout: m.dropout,
            predictor_hidden: m.predictor_hidden,
            predictor_layers: m.predictor_layers,
            lr: 1e-4,
            weight_decay: 1e-4,
            batch_size: 8,
            steps: 2000,
            seed: 7,
            use_dwt: true,
            use_init_predictor: true,
            final_noise: false,
            n_images: 200,
            n_eval: 20,
            data_dir: PathBuf::from("data"),
            run_name: "default".into(),
        }
    }
}

/// Keys excluded from the config hash: locations and run length, which do
/// not change what a given training step computes.
const UNHASHED: [&str; 4] = ["data_dir", "n_eval", "run_name", "steps"];

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("invalid value {value:?} for {key}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid boolean {value:?} for {key}"))),
    }
}

impl TrainConfig {
    /// Applies one `key = value` setting. Dashes in `key` are read as underscores.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        let k = key.as_str();
        match k {
            "scale" => self.scale = parse_value(k, v)?,
            "hr_size" => self.hr_size = parse_value(k, v)?,
            "t_train" => self.t_train = parse_value(k, v)?,
            "t_eval" => self.t_eval = parse_value(k, v)?,
            "beta_start" => self.beta_start = parse_value(k, v)?,
            "beta_end" => self.beta_end = parse_value(k, v)?,
            "base_width" => self.base_width = parse_value(k, v)?,
            "channel_mults" => {
                self.channel_mults = v.split(',').map(|p| parse_value(k, p.trim())).collect::<Result<_>>()?
            }
            "n_blocks" => self.n_blocks = parse_value(k, v)?,
            "dropout" => self.dropout = parse_value(k, v)?,
            "predictor_hidden" => self.predictor_hidden = parse_value(k, v)?,
            "predictor_layers" => self.predictor_layers = parse_value(k, v)?,
            "lr" => self.lr = parse_value(k, v)?,
            "weight_decay" => self.weight_decay = parse_value(k, v)?,
            "batch_size" => self.batch_size = parse_value(k, v)?,
            "steps" => self.steps = parse_value(k, v)?,
            "seed" => self.seed = parse_value(k, v)?,
            "use_dwt" => self.use_dwt = parse_bool(k, v)?,
            "use_init_predictor" => self.use_init_predictor = parse_bool(k, v)?,
            "final_noise" => self.final_noise = parse_bool(k, v)?,
            "n_images" => self.n_images = parse_value(k, v)?,
            "n_eval" => self.n_eval = parse_value(k, v)?,
            "data_dir" => self.data_dir = PathBuf::from(v),
            "run_name" => self.run_name = v.to_string(),
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies every setting in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        let mults: Vec<String> = self.channel_mults.iter().map(|m| m.to_string()).collect();
        let mut e = vec![
            ("base_width", self.base_width.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("beta_end", self.beta_end.to_string()),
            ("beta_start", self.beta_start.to_string()),
            ("channel_mults", mults.join(",")),
            ("data_dir", self.data_dir.display().to_string()),
            ("dropout", self.dropout.to_string()),
            ("final_noise", self.final_noise.to_string()),
            ("hr_size", self.hr_size.to_string()),
            ("lr", self.lr.to_string()),
            ("n_blocks", self.n_blocks.to_string()),
            ("n_eval", self.n_eval.to_string()),
            ("n_images", self.n_images.to_string()),
            ("predictor_hidden", self.predictor_hidden.to_string()),
            ("predictor_layers", self.predictor_layers.to_string()),
            ("run_name", self.run_name.clone()),
            ("scale", self.scale.to_string()),
            ("seed", self.seed.to_string()),
            ("steps", self.steps.to_string()),
            ("t_eval", self.t_eval.to_string()),
            ("t_train", self.t_train.to_string()),
            ("use_dwt", self.use_dwt.to_string()),
            ("use_init_predictor", self.use_init_predictor.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
        ];
        e.sort_by_key(|(k, _)| *k);
        e
    }

    /// Every setting, one sorted `key = value` line each; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            writeln!(out, "{k} = {v}").expect("write to String");
        }
        out
    }

    /// Sorted settings that determine the computation (no paths or run length).
    pub fn canonical_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries().into_iter().filter(|(k, _)| !UNHASHED.contains(k)) {
            writeln!(out, "{k} = {v}").expect("write to String");
        }
        out
    }

    pub fn hash(&self) -> u64 {
        config_hash(&self.canonical_text())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.t_eval < 1 || self.t_train < self.t_eval {
            return bad(format!(
                "need t_train >= t_eval >= 1 (got {} and {})",
                self.t_train, self.t_eval
            ));
        }
        if self.scale == 0 || self.hr_size == 0 || self.hr_size % (2 * self.scale) != 0 {
            return bad(format!(
                "hr_size {} must be divisible by 2*scale ({})",
                self.hr_size,
                2 * self.scale
            ));
        }
        let div = 1usize << (self.channel_mults.len().saturating_sub(1) + usize::from(self.use_dwt));
        if self.hr_size % div != 0 {
            return bad(format!(
                "hr_size {} must be divisible by {div} for this network depth",
                self.hr_size
            ));
        }
        if !(self.beta_start > 0.0 && self.beta_start <= self.beta_end && self.beta_end < 1.0) {
            return bad(format!(
                "need 0 < beta_start <= beta_end < 1 (got {} and {})",
                self.beta_start, self.beta_end
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr and weight_decay must be non-negative".into());
        }
        if self.n_images == 0 || self.n_eval >= self.n_images {
            return bad(format!(
                "need n_images > n_eval (got {} and {})",
                self.n_images, self.n_eval
            ));
        }
        self.model_config().validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            image_channels: 3,
            use_dwt: self.use_dwt,
            use_init_predictor: self.use_init_predictor,
            predictor_hidden: self.predictor_hidden,
            predictor_layers: self.predictor_layers,
            base_width: self.base_width,
            channel_mults: self.channel_mults.clone(),
            n_blocks: self.n_blocks,
            dropout: self.dropout,
        }
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamW::default()
        }
    }

    pub fn train_schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.t_train, self.beta_start, self.beta_end)
    }

    pub fn eval_schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.t_eval, self.beta_start, self.beta_end)
    }
}
