use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::LossWeights;

/// Every key a config file must define, in canonical order.
pub const CONFIG_KEYS: [&str; 15] = [
    "data_dir",
    "patch",
    "batch",
    "epochs",
    "lr",
    "poly_power",
    "lambda_anatomy",
    "lambda_smooth",
    "lambda_align",
    "channel_scale",
    "seed",
    "variant",
    "adv_form",
    "hu_lo",
    "hu_hi",
];

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub data_dir: PathBuf,
    /// Cubic patch edge, a multiple of 16.
    pub patch: usize,
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub poly_power: f64,
    pub weights: LossWeights,
    pub channel_scale: f64,
    pub seed: u64,
    pub variant: String,
    pub adv_form: String,
    pub hu_lo: f32,
    pub hu_hi: f32,
}

impl TrainConfig {
    /// Desk-scale defaults for a dataset directory.
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        TrainConfig {
            data_dir: data_dir.into(),
            patch: 32,
            batch: 2,
            epochs: 30,
            lr: 2e-4,
            poly_power: 0.9,
            weights: LossWeights::default(),
            channel_scale: 0.5,
            seed: 7,
            variant: "BOTH+ACDS".into(),
            adv_form: "lsgan".into(),
            hu_lo: -1000.0,
            hu_hi: 1000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.patch % 16 != 0 {
            return Err(Error::Config(format!("patch must be a positive multiple of 16, got {}", self.patch)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.poly_power >= 0.0) || !self.poly_power.is_finite() {
            return Err(Error::Config(format!("poly_power must be >= 0, got {}", self.poly_power)));
        }
        if !(self.channel_scale > 0.0) || self.channel_scale > 4.0 {
            return Err(Error::Config(format!("channel_scale must lie in (0, 4], got {}", self.channel_scale)));
        }
        if !(self.hu_lo < self.hu_hi) {
            return Err(Error::Config(format!("hu_lo must be < hu_hi, got [{}, {}]", self.hu_lo, self.hu_hi)));
        }
        self.weights.validate()
    }

    /// Parses `key = value` lines; `#` starts a comment. Relative `data_dir`
    /// paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !CONFIG_KEYS.contains(&k) {
                return Err(Error::Config(format!(
                    "line {}: unknown key `{k}` (valid keys: {})",
                    n + 1,
                    CONFIG_KEYS.join(", ")
                )));
            }
            if kv.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key `{k}`", n + 1)));
            }
        }
        let missing: Vec<&str> = CONFIG_KEYS.iter().copied().filter(|k| !kv.contains_key(*k)).collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!("missing key(s): {}", missing.join(", "))));
        }
        fn num<T: std::str::FromStr>(kv: &BTreeMap<String, String>, k: &str) -> Result<T> {
            kv[k]
                .parse()
                .map_err(|_| Error::Config(format!("key `{k}`: cannot parse `{}`", kv[k])))
        }
        let data_dir = PathBuf::from(&kv["data_dir"]);
        let cfg = TrainConfig {
            data_dir: if data_dir.is_absolute() { data_dir } else { base.join(data_dir) },
            patch: num(&kv, "patch")?,
            batch: num(&kv, "batch")?,
            epochs: num(&kv, "epochs")?,
            lr: num(&kv, "lr")?,
            poly_power: num(&kv, "poly_power")?,
            weights: LossWeights {
                anatomy: num(&kv, "lambda_anatomy")?,
                smooth: num(&kv, "lambda_smooth")?,
                align: num(&kv, "lambda_align")?,
            },
            channel_scale: num(&kv, "channel_scale")?,
            seed: num(&kv, "seed")?,
            variant: kv["variant"].clone(),
            adv_form: kv["adv_form"].clone(),
            hu_lo: num(&kv, "hu_lo")?,
            hu_hi: num(&kv, "hu_hi")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let w = &self.weights;
        let vals: [String; 15] = [
            self.data_dir.display().to_string(),
            self.patch.to_string(),
            self.batch.to_string(),
            self.epochs.to_string(),
            format!("{:?}", self.lr),
            format!("{:?}", self.poly_power),
            format!("{:?}", w.anatomy),
            format!("{:?}", w.smooth),
            format!("{:?}", w.align),
            format!("{:?}", self.channel_scale),
            self.seed.to_string(),
            self.variant.clone(),
            self.adv_form.clone(),
            format!("{:?}", self.hu_lo),
            format!("{:?}", self.hu_hi),
        ];
        for (k, v) in CONFIG_KEYS.iter().zip(vals) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// SHA-256 of the canonical text, hex-encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// `<config dir>/<config stem>/`.
    pub fn run_dir_for(config_path: &Path) -> PathBuf {
        let stem = config_path.file_stem().map(|s| s.to_os_string()).unwrap_or_else(|| "run".into());
        config_path.parent().unwrap_or(Path::new(".")).join(stem)
    }
}

/// `base · (1 − iter / max_iter)^power`, clamped at zero past the end.
pub fn lr_schedule(iter: usize, max_iter: usize, base: f64, power: f64) -> f64 {
    if max_iter == 0 {
        return base;
    }
    let frac = (1.0 - iter as f64 / max_iter as f64).max(0.0);
    base * frac.powf(power)
}
