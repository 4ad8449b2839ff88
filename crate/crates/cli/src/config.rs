//! Run configuration: TOML file, environment seed and command-line overrides.

use std::path::Path;

use discocal_core::calib::OptimizeOptions;
use discocal_core::synth::{Arm, DatasetConfig, DatasetKind, McConfig, PoseSampler, Scenario};
use discocal_core::uncmap::DEFAULT_GRID;
use discocal_core::{DetectParams, Distortion, Intrinsics, TargetSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "DISCOCAL_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub target: TargetSpec,
    pub detect: DetectParams,
    pub optimizer: OptimizeOptions,
    pub synth: SynthConfig,
    pub mc: McSection,
    pub uncmap: UncmapConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            target: Scenario::default().target,
            detect: DetectParams::default(),
            optimizer: OptimizeOptions::default(),
            synth: SynthConfig::default(),
            mc: McSection::default(),
            uncmap: UncmapConfig::default(),
        }
    }
}

/// Synthetic camera, poses and imaging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub camera: Intrinsics,
    pub distortion: Distortion,
    pub width: usize,
    pub height: usize,
    pub kind: DatasetKind,
    pub images: usize,
    pub sampler: PoseSampler,
    /// Additive Gaussian noise, gray levels.
    pub noise: f64,
    pub supersampling: usize,
    /// Smallest half-extent of the motion blur, px.
    pub min_motion: f64,
    /// Largest half-extent of the motion blur, px.
    pub max_motion: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let s = Scenario::default();
        let d = DatasetConfig::default();
        Self {
            camera: s.intrinsics,
            distortion: s.distortion,
            width: s.width,
            height: s.height,
            kind: d.kind,
            images: d.images,
            sampler: s.sampler,
            noise: s.noise,
            supersampling: s.supersampling,
            min_motion: d.min_motion,
            max_motion: d.max_motion,
        }
    }
}

/// Monte-Carlo draws over a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSection {
    pub draws: usize,
    pub views_per_draw: usize,
    pub arms: Vec<Arm>,
    /// Radial coefficients estimated in every draw.
    pub nd: usize,
}

impl Default for McSection {
    fn default() -> Self {
        let m = McConfig::default();
        Self {
            draws: m.draws,
            views_per_draw: m.views_per_draw,
            arms: m.arms,
            nd: m.optimizer.nd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UncmapConfig {
    /// Azimuth and elevation samples of the ray grid.
    pub grid: usize,
    /// Also write the heatmap with measurement dots.
    pub overlay: bool,
    /// Radius of the measurement dots, px.
    pub dot_radius: f64,
}

impl Default for UncmapConfig {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID,
            overlay: true,
            dot_radius: 2.0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let check = |r: discocal_core::Result<()>| r.map_err(|e| CliError::Config(e.to_string()));
        check(self.target.validate())?;
        check(self.detect.validate())?;
        check(self.optimizer.validate())?;
        check(self.dataset().scenario.validate())?;
        if self.synth.images == 0 || !(0.0 <= self.synth.min_motion && self.synth.min_motion <= self.synth.max_motion) {
            return Err(CliError::Config(
                "synth needs at least one image and 0 <= min_motion <= max_motion".into(),
            ));
        }
        if self.mc.draws == 0 || self.mc.views_per_draw < 3 || self.mc.arms.is_empty() {
            return Err(CliError::Config(
                "mc needs at least one draw, one arm and 3 views per draw".into(),
            ));
        }
        if self.uncmap.grid < 3 || !(self.uncmap.dot_radius >= 0.0) {
            return Err(CliError::Config("uncmap grid must be at least 3 and dot_radius >= 0".into()));
        }
        Ok(())
    }

    /// Synthetic dataset of the configured target and seed.
    pub fn dataset(&self) -> DatasetConfig {
        let s = &self.synth;
        DatasetConfig {
            scenario: Scenario {
                intrinsics: s.camera,
                distortion: s.distortion.clone(),
                target: self.target,
                width: s.width,
                height: s.height,
                sampler: s.sampler,
                supersampling: s.supersampling,
                noise: s.noise,
            },
            kind: s.kind,
            images: s.images,
            seed: self.seed,
            max_motion: s.max_motion,
            min_motion: s.min_motion,
        }
    }

    pub fn monte_carlo(&self) -> McConfig {
        McConfig {
            draws: self.mc.draws,
            views_per_draw: self.mc.views_per_draw,
            seed: self.seed,
            arms: self.mc.arms.clone(),
            optimizer: OptimizeOptions {
                nd: self.mc.nd,
                ..self.optimizer
            },
        }
    }

    /// Parses a TOML document.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self, CliError> {
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Layers the file, the environment seed, then `key=value` overrides.
    ///
    /// Override keys are dotted paths such as `detect.sigma`; values use TOML
    /// syntax and fall back to a bare string.
    pub fn load(file: Option<&Path>, env_seed: Option<&str>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        if let Some(seed) = env_seed {
            let seed: u64 = seed
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV} must be an unsigned integer, got {seed:?}")))?;
            table.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        for item in overrides {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override {item:?} is not key=value")))?;
            set_path(&mut table, key.trim(), parse_value(value.trim()))?;
        }
        Self::from_table(table)
    }
}

fn parse_value(text: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("invalid override key {key:?}")));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override key {key:?} passes through a value")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
