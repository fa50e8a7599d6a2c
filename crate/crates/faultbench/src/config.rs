//! Flat `key=value` experiment configs.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored.
//! Every key must be known, may appear once, and `regime` is required.
//! Numeric values accept decimal literals or exact rationals such as
//! `8/255`. Lists are comma separated. Keys under `study.` are passed
//! through unvalidated for the study runners.
//!
//! [`ExperimentConfig::resolved`] renders every key with its effective value;
//! parsing that text yields the same config.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use faultbench_core::attacks::{AttackConfig, AttackObjective};
use faultbench_core::faults::FaultKind;
use faultbench_core::metrics::Dispersion;
use faultbench_core::training::{DpConfig, NoiseKind, Regime, TrainConfig};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("missing required key: {0}")]
    Missing(&'static str),
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { key: String, line: usize },
    #[error("duplicate key {key:?} on lines {first} and {second}")]
    Duplicate { key: String, first: usize, second: usize },
    #[error("line {line}: expected key=value, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: bad value for {key}: {message}")]
    Value { key: String, line: usize, message: String },
}

/// Parses a decimal or `a/b` literal. Rationals are divided once in f64,
/// which is the correctly rounded value of the exact fraction when both
/// parts are exactly representable.
pub fn parse_number(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a = parse_plain(a)?;
            let b = parse_plain(b)?;
            if b == 0.0 {
                return Err(format!("zero denominator in {s:?}"));
            }
            a / b
        }
        None => parse_plain(s)?,
    };
    if !v.is_finite() {
        return Err(format!("{s:?} is not finite"));
    }
    Ok(v)
}

fn parse_plain(s: &str) -> Result<f64, String> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("nan") || s.to_ascii_lowercase().contains("inf") {
        return Err(format!("malformed number {s:?}"));
    }
    s.parse::<f64>().map_err(|_| format!("malformed number {s:?}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegimeTag {
    Natural,
    Tikhonov,
    InputNoise,
    Trades,
    DpSgd,
}

impl RegimeTag {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "natural" => Self::Natural,
            "tikhonov" => Self::Tikhonov,
            "input_noise" => Self::InputNoise,
            "trades" => Self::Trades,
            "dpsgd" => Self::DpSgd,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Natural => "natural",
            Self::Tikhonov => "tikhonov",
            Self::InputNoise => "input_noise",
            Self::Trades => "trades",
            Self::DpSgd => "dpsgd",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataName {
    TwoCircles,
    FashionMnist,
}

impl DataName {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "two_circles" => Some(Self::TwoCircles),
            "fashion_mnist" => Some(Self::FashionMnist),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::TwoCircles => "two_circles",
            Self::FashionMnist => "fashion_mnist",
        }
    }
}

pub const DEFAULT_MIRROR: &str = "https://fashion-mnist.s3-website.eu-central-1.amazonaws.com/";

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub name: DataName,
    pub train_size: usize,
    /// `None` keeps the full test split (FashionMNIST only).
    pub test_size: Option<usize>,
    /// Two-circles coordinate noise sd.
    pub noise: f64,
    /// Two-circles inner radius.
    pub factor: f64,
    pub mirror: String,
    /// Overrides `FAULTBENCH_DATA_DIR`.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub include_bias: bool,
    pub trials: usize,
    pub fractions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub regime: RegimeTag,
    pub data: DataSpec,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seeds: Vec<u64>,
    pub lambda: f64,
    pub noise_kind: NoiseKind,
    pub noise_sigma: f64,
    pub attack: AttackConfig,
    pub beta: f64,
    pub dp: DpConfig,
    pub dp_audit: bool,
    pub faults: FaultSpec,
    pub dispersion: Dispersion,
    pub out_dir: PathBuf,
    pub study: BTreeMap<String, String>,
}

/// Every accepted key, in the order the resolved rendering uses.
pub const KEYS: &[&str] = &[
    "regime",
    "data.name",
    "data.train_size",
    "data.test_size",
    "data.noise",
    "data.factor",
    "data.mirror",
    "data.cache_dir",
    "model.hidden",
    "train.epochs",
    "train.batch_size",
    "train.lr",
    "seeds",
    "tikhonov.lambda",
    "noise.kind",
    "noise.sigma",
    "attack.eps",
    "attack.steps",
    "attack.step_size",
    "attack.objective",
    "attack.random_start",
    "attack.allow_large_step",
    "trades.beta",
    "dp.clip",
    "dp.sigma",
    "dp.delta",
    "dp.audit",
    "faults.kind",
    "faults.include_bias",
    "faults.trials",
    "faults.fractions",
    "metrics.eq10_literal",
    "out_dir",
];

struct Raw {
    values: BTreeMap<String, (String, usize)>,
}

impl Raw {
    fn get(&self, key: &str) -> Option<(&str, usize)> {
        self.values.get(key).map(|(v, l)| (v.as_str(), *l))
    }

    fn parsed<T>(&self, key: &str, default: T, f: impl Fn(&str) -> Result<T, String>) -> Result<T, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some((v, line)) => f(v).map_err(|message| ConfigError::Value { key: key.into(), line, message }),
        }
    }

    fn number(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        self.parsed(key, default, parse_number)
    }

    fn non_negative(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        self.parsed(key, default, |v| {
            let x = parse_number(v)?;
            if x < 0.0 {
                return Err(format!("must be non-negative, got {x}"));
            }
            Ok(x)
        })
    }

    fn count(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        self.parsed(key, default, parse_count)
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool, ConfigError> {
        self.parsed(key, default, |v| match v {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => Err(format!("expected true or false, got {other:?}")),
        })
    }
}

fn parse_count(v: &str) -> Result<usize, String> {
    v.trim().parse::<usize>().map_err(|_| format!("expected a non-negative integer, got {v:?}"))
}

fn parse_list<T>(v: &str, f: impl Fn(&str) -> Result<T, String>) -> Result<Vec<T>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| f(s.trim())).collect()
}

/// Seeds as a list (`0,3,9`) or a half-open range (`0..5`).
pub fn parse_seeds(v: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = v.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| format!("bad seed range {v:?}"))?;
        let b: u64 = b.trim().parse().map_err(|_| format!("bad seed range {v:?}"))?;
        if a >= b {
            return Err(format!("empty seed range {v:?}"));
        }
        return Ok((a..b).collect());
    }
    let seeds = parse_list(v, |s| s.parse::<u64>().map_err(|_| format!("bad seed {s:?}")))?;
    if seeds.is_empty() {
        return Err("at least one seed is required".into());
    }
    Ok(seeds)
}

fn tokenize(text: &str) -> Result<Raw, ConfigError> {
    let mut values: BTreeMap<String, (String, usize)> = BTreeMap::new();
    for (i, raw_line) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ConfigError::Syntax { line, text: raw_line.into() });
        };
        let key = key.trim();
        if key.is_empty() {
            return Err(ConfigError::Syntax { line, text: raw_line.into() });
        }
        if !KEYS.contains(&key) && !key.starts_with("study.") {
            return Err(ConfigError::UnknownKey { key: key.into(), line });
        }
        if let Some((_, first)) = values.get(key) {
            return Err(ConfigError::Duplicate { key: key.into(), first: *first, second: line });
        }
        values.insert(key.into(), (value.trim().into(), line));
    }
    Ok(Raw { values })
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let raw = tokenize(text)?;
        let (regime_text, regime_line) = raw.get("regime").ok_or(ConfigError::Missing("regime"))?;
        let regime = RegimeTag::parse(regime_text).ok_or_else(|| ConfigError::Value {
            key: "regime".into(),
            line: regime_line,
            message: format!(
                "unknown regime {regime_text:?} (expected natural, tikhonov, input_noise, trades or dpsgd)"
            ),
        })?;

        let name = raw.parsed("data.name", DataName::FashionMnist, |v| {
            DataName::parse(v).ok_or_else(|| format!("unknown dataset {v:?} (expected two_circles or fashion_mnist)"))
        })?;
        let (default_train, default_test) = match name {
            DataName::TwoCircles => (300, Some(200)),
            DataName::FashionMnist => (10_000, None),
        };
        let data = DataSpec {
            name,
            train_size: raw.count("data.train_size", default_train)?,
            test_size: raw.parsed("data.test_size", default_test, |v| {
                if v == "all" {
                    Ok(None)
                } else {
                    parse_count(v).map(Some)
                }
            })?,
            noise: raw.non_negative("data.noise", 0.1)?,
            factor: raw.number("data.factor", 0.5)?,
            mirror: raw.parsed("data.mirror", DEFAULT_MIRROR.to_string(), |v| Ok(v.to_string()))?,
            cache_dir: raw.parsed("data.cache_dir", None, |v| {
                Ok(if v.is_empty() { None } else { Some(PathBuf::from(v)) })
            })?,
        };

        let hidden = raw.parsed("model.hidden", vec![512, 512], |v| {
            let h = parse_list(v, parse_count)?;
            if h.contains(&0) {
                return Err("hidden widths must be positive".into());
            }
            Ok(h)
        })?;

        let eps = raw.non_negative("attack.eps", 8.0 / 255.0)?;
        let steps = raw.count("attack.steps", AttackConfig::DEFAULT_STEPS)?;
        let attack = AttackConfig {
            eps,
            steps,
            step_size: raw.non_negative("attack.step_size", AttackConfig::default_step_size(eps, steps))?,
            objective: raw.parsed("attack.objective", AttackObjective::Kl, |v| {
                v.parse().map_err(|e: faultbench_core::Error| e.to_string())
            })?,
            random_start: raw.flag("attack.random_start", false)?,
            allow_large_step: raw.flag("attack.allow_large_step", false)?,
        };

        let cfg = Self {
            regime,
            data,
            hidden,
            epochs: raw.count("train.epochs", 20)?,
            batch_size: raw.count("train.batch_size", 64)?,
            lr: raw.non_negative("train.lr", 0.1)?,
            seeds: raw.parsed("seeds", vec![0], parse_seeds)?,
            lambda: raw.non_negative("tikhonov.lambda", 1e-3)?,
            noise_kind: raw.parsed("noise.kind", NoiseKind::Additive, |v| {
                v.parse().map_err(|e: faultbench_core::Error| e.to_string())
            })?,
            noise_sigma: raw.non_negative("noise.sigma", 0.0)?,
            attack,
            beta: raw.non_negative("trades.beta", 1.0)?,
            dp: DpConfig {
                clip_norm: raw.non_negative("dp.clip", 1.0)?,
                noise_multiplier: raw.non_negative("dp.sigma", 1.1)?,
                delta: raw.number("dp.delta", 1e-5)?,
            },
            dp_audit: raw.flag("dp.audit", false)?,
            faults: FaultSpec {
                kind: raw.parsed("faults.kind", FaultKind::Parameter, |v| {
                    v.parse().map_err(|e: faultbench_core::Error| e.to_string())
                })?,
                include_bias: raw.flag("faults.include_bias", true)?,
                trials: raw.count("faults.trials", 20)?,
                fractions: raw.parsed("faults.fractions", default_fractions(), |v| {
                    let f = parse_list(v, parse_number)?;
                    if f.iter().any(|x| !(0.0..=1.0).contains(x)) {
                        return Err("fault fractions must lie in [0, 1]".into());
                    }
                    Ok(f)
                })?,
            },
            dispersion: if raw.flag("metrics.eq10_literal", false)? {
                Dispersion::Literal
            } else {
                Dispersion::StdDev
            },
            out_dir: raw.parsed("out_dir", PathBuf::from("runs"), |v| Ok(PathBuf::from(v)))?,
            study: raw
                .values
                .iter()
                .filter(|(k, _)| k.starts_with("study."))
                .map(|(k, (v, _))| (k.clone(), v.clone()))
                .collect(),
        };
        cfg.train_config(cfg.seeds[0]).validate().map_err(|e| ConfigError::Value {
            key: "regime".into(),
            line: regime_line,
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn regime(&self) -> Regime {
        match self.regime {
            RegimeTag::Natural => Regime::Natural,
            RegimeTag::Tikhonov => Regime::Tikhonov { lambda: self.lambda },
            RegimeTag::InputNoise => Regime::InputNoise { kind: self.noise_kind, sigma: self.noise_sigma },
            RegimeTag::Trades => Regime::Trades { attack: self.attack.clone(), beta: self.beta },
            RegimeTag::DpSgd => Regime::DpSgd(self.dp),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            hidden: self.hidden.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            seed,
            regime: self.regime(),
            audit: self.dp_audit,
        }
    }

    /// Every key with its effective value, one per line.
    pub fn resolved(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("regime", self.regime.as_str().into());
        put("data.name", self.data.name.as_str().into());
        put("data.train_size", self.data.train_size.to_string());
        put("data.test_size", self.data.test_size.map_or("all".into(), |n| n.to_string()));
        put("data.noise", self.data.noise.to_string());
        put("data.factor", self.data.factor.to_string());
        put("data.mirror", self.data.mirror.clone());
        put(
            "data.cache_dir",
            self.data.cache_dir.as_ref().map_or(String::new(), |p| p.display().to_string()),
        );
        put("model.hidden", self.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","));
        put("train.epochs", self.epochs.to_string());
        put("train.batch_size", self.batch_size.to_string());
        put("train.lr", self.lr.to_string());
        put("seeds", self.seeds.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","));
        put("tikhonov.lambda", self.lambda.to_string());
        put("noise.kind", self.noise_kind.to_string());
        put("noise.sigma", self.noise_sigma.to_string());
        put("attack.eps", self.attack.eps.to_string());
        put("attack.steps", self.attack.steps.to_string());
        put("attack.step_size", self.attack.step_size.to_string());
        put(
            "attack.objective",
            match self.attack.objective {
                AttackObjective::CrossEntropy => "ce".into(),
                AttackObjective::Kl => "kl".into(),
            },
        );
        put("attack.random_start", self.attack.random_start.to_string());
        put("attack.allow_large_step", self.attack.allow_large_step.to_string());
        put("trades.beta", self.beta.to_string());
        put("dp.clip", self.dp.clip_norm.to_string());
        put("dp.sigma", self.dp.noise_multiplier.to_string());
        put("dp.delta", self.dp.delta.to_string());
        put("dp.audit", self.dp_audit.to_string());
        put("faults.kind", self.faults.kind.to_string());
        put("faults.include_bias", self.faults.include_bias.to_string());
        put("faults.trials", self.faults.trials.to_string());
        put("faults.fractions", join(&self.faults.fractions));
        put("metrics.eq10_literal", (self.dispersion == Dispersion::Literal).to_string());
        put("out_dir", self.out_dir.display().to_string());
        for (k, v) in &self.study {
            put(k, v.clone());
        }
        s
    }

    /// Raw `study.<name>` value.
    pub fn study_value(&self, name: &str) -> Option<&str> {
        self.study.get(&format!("study.{name}")).map(String::as_str)
    }

    pub fn study_numbers(&self, name: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        self.study_value(name)
            .map(|v| {
                parse_list(v, parse_number).map_err(|message| ConfigError::Value {
                    key: format!("study.{name}"),
                    line: 0,
                    message,
                })
            })
            .transpose()
    }
}

/// `0, 0.1, …, 0.9, 0.95`.
pub fn default_fractions() -> Vec<f64> {
    let mut f: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
    f.push(0.95);
    f
}
