//! Plain-text run configuration.
//!
//! One `key = value` per line; blank lines and lines starting with `#` are
//! ignored. Ranges and lists are comma separated (`streak.length = 8, 24`).
//! Unknown keys, repeated keys and malformed values are errors, and the
//! assembled configuration is validated as a whole before it is returned.
//! Relative paths are resolved against the configuration file's directory.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::ArchConfig;
use crate::synth::{GeneratorParams, StreakParams, VaporParams, DEFAULT_ALPHA};
use crate::training::TrainConfig;

/// Every accepted key, in documentation order.
pub const KEYS: &[&str] = &[
    "train.patch",
    "train.batch",
    "train.epochs_anet",
    "train.epochs_snet",
    "train.epochs_joint",
    "train.lr_anet_pre",
    "train.lr_main",
    "train.lr_finetune",
    "train.lambda1",
    "train.lambda2",
    "train.eps",
    "train.adam_beta1",
    "train.adam_beta2",
    "train.adam_eps",
    "train.flips",
    "arch.groups",
    "arch.base_channels",
    "arch.middle_units",
    "arch.spp_levels",
    "arch.spp_channels",
    "arch.slope",
    "arch.vnet_channels",
    "arch.vnet_groups",
    "arch.vnet_units",
    "arch.vnet_fuse_channels",
    "arch.anet_channels",
    "streak.density",
    "streak.length",
    "streak.width",
    "streak.angle",
    "streak.intensity",
    "vapor.octaves",
    "vapor.base_scale",
    "vapor.strength",
    "scene.atmosphere",
    "scene.alpha",
    "path.data",
    "path.test_data",
    "path.clean_dir",
    "path.out",
    "path.checkpoint",
];

/// Paths named in a configuration file, already resolved.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Paths {
    pub data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    pub clean_dir: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub arch: ArchConfig,
    pub streak: StreakParams,
    pub vapor: VaporParams,
    pub atmosphere_range: [f64; 2],
    pub alpha: f64,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        let gen = GeneratorParams::new(crate::synth::DatasetKind::Scenes, 64);
        Self {
            train: TrainConfig::default(),
            arch: ArchConfig::default(),
            streak: StreakParams::default(),
            vapor: VaporParams::default(),
            atmosphere_range: gen.atmosphere_range,
            alpha: DEFAULT_ALPHA,
            paths: Paths::default(),
        }
    }
}

fn scalar<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| scalar(key, v)).collect()
}

fn pair(key: &str, value: &str) -> Result<[f64; 2]> {
    match list::<f64>(key, value)?.as_slice() {
        &[a, b] => Ok([a, b]),
        &[a] => Ok([a, a]),
        _ => Err(Error::Config(format!("`{key}`: expected one or two numbers, got `{value}`"))),
    }
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(Error::Config(format!("`{key}`: expected true or false, got `{other}`"))),
    }
}

impl RunConfig {
    /// Reads and validates a configuration file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Parses configuration text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected `key = value`", n + 1)));
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: `{key}` given twice", n + 1)));
            }
            cfg.set(key, value, base).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("line {}: {msg}", n + 1)),
                other => other,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str, base: &Path) -> Result<()> {
        let path = || Some(base.join(v));
        let (t, a) = (&mut self.train, &mut self.arch);
        match key {
            "train.patch" => t.patch = scalar(key, v)?,
            "train.batch" => t.batch = scalar(key, v)?,
            "train.epochs_anet" => t.epochs_anet = scalar(key, v)?,
            "train.epochs_snet" => t.epochs_snet = scalar(key, v)?,
            "train.epochs_joint" => t.epochs_joint = scalar(key, v)?,
            "train.lr_anet_pre" => t.lr_anet_pre = scalar(key, v)?,
            "train.lr_main" => t.lr_main = scalar(key, v)?,
            "train.lr_finetune" => t.lr_finetune = scalar(key, v)?,
            "train.lambda1" => t.lambda1 = scalar(key, v)?,
            "train.lambda2" => t.lambda2 = scalar(key, v)?,
            "train.eps" => t.eps = scalar(key, v)?,
            "train.adam_beta1" => t.adam.beta1 = scalar(key, v)?,
            "train.adam_beta2" => t.adam.beta2 = scalar(key, v)?,
            "train.adam_eps" => t.adam.eps = scalar(key, v)?,
            "train.flips" => t.flips = flag(key, v)?,
            "arch.groups" => a.groups = scalar(key, v)?,
            "arch.base_channels" => a.base_channels = scalar(key, v)?,
            "arch.middle_units" => a.middle_units = scalar(key, v)?,
            "arch.spp_levels" => a.spp_levels = list(key, v)?,
            "arch.spp_channels" => a.spp_channels = scalar(key, v)?,
            "arch.slope" => a.slope = scalar(key, v)?,
            "arch.vnet_channels" => a.vnet_channels = scalar(key, v)?,
            "arch.vnet_groups" => a.vnet_groups = scalar(key, v)?,
            "arch.vnet_units" => a.vnet_units = scalar(key, v)?,
            "arch.vnet_fuse_channels" => a.vnet_fuse_channels = scalar(key, v)?,
            "arch.anet_channels" => a.anet_channels = list(key, v)?,
            "streak.density" => self.streak.density = scalar(key, v)?,
            "streak.length" => self.streak.length_range = pair(key, v)?,
            "streak.width" => self.streak.width_range = pair(key, v)?,
            "streak.angle" => self.streak.angle_range = pair(key, v)?,
            "streak.intensity" => self.streak.intensity_range = pair(key, v)?,
            "vapor.octaves" => self.vapor.octaves = scalar(key, v)?,
            "vapor.base_scale" => self.vapor.base_scale = scalar(key, v)?,
            "vapor.strength" => self.vapor.strength_range = pair(key, v)?,
            "scene.atmosphere" => self.atmosphere_range = pair(key, v)?,
            "scene.alpha" => self.alpha = scalar(key, v)?,
            "path.data" => self.paths.data = path(),
            "path.test_data" => self.paths.test_data = path(),
            "path.clean_dir" => self.paths.clean_dir = path(),
            "path.out" => self.paths.out = path(),
            "path.checkpoint" => self.paths.checkpoint = path(),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        };
        self.train.validate().map_err(wrap)?;
        self.arch.validate().map_err(wrap)?;
        self.generator(crate::synth::DatasetKind::Scenes, crate::synth::MIN_RENDER_SIZE)
            .validate()
            .map_err(wrap)
    }

    /// Dataset generator settings drawn from this configuration.
    pub fn generator(&self, kind: crate::synth::DatasetKind, size: usize) -> GeneratorParams {
        GeneratorParams {
            streak: self.streak.clone(),
            vapor: self.vapor.clone(),
            atmosphere_range: self.atmosphere_range,
            alpha: self.alpha,
            ..GeneratorParams::new(kind, size)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_key_kind() {
        let text = "\
# desk run
train.patch = 32
train.flips = true
arch.spp_levels = 1, 2, 4
streak.length = 5, 9
vapor.strength = 0.3
path.data = data/manifest.json
";
        let cfg = RunConfig::parse(text, Path::new("/base")).unwrap();
        assert_eq!(cfg.train.patch, 32);
        assert!(cfg.train.flips);
        assert_eq!(cfg.arch.spp_levels, vec![1, 2, 4]);
        assert_eq!(cfg.streak.length_range, [5.0, 9.0]);
        assert_eq!(cfg.vapor.strength_range, [0.3, 0.3]);
        assert_eq!(cfg.paths.data, Some(PathBuf::from("/base/data/manifest.json")));
        assert_eq!(cfg.train.batch, TrainConfig::default().batch);
    }

    #[test]
    fn rejects_bad_input() {
        let bad = |t: &str| RunConfig::parse(t, Path::new(".")).unwrap_err();
        assert!(bad("train.bogus = 1").to_string().contains("unknown key"));
        assert!(bad("train.patch = 32\ntrain.patch = 32").to_string().contains("twice"));
        assert!(bad("train.patch 32").to_string().contains("line 1"));
        assert!(bad("train.patch = big").to_string().contains("cannot parse"));
        assert!(matches!(bad("train.patch = 30"), Error::Config(_)));
        assert!(matches!(bad("arch.spp_levels = 4, 2"), Error::Config(_)));
        assert!(matches!(bad("streak.intensity = 0.5, 1.5"), Error::Config(_)));
    }

    #[test]
    fn every_documented_key_is_accepted() {
        let defaults = RunConfig::default();
        for key in KEYS {
            let changed = ["7", "0.5", "0.3, 0.4", "1, 2", "true"].iter().any(|v| {
                let mut cfg = RunConfig::default();
                cfg.set(key, v, Path::new(".")).is_ok() && cfg != defaults
            });
            assert!(changed, "{key} has no effect");
        }
    }
}
