//! Subcommand options, the optional TOML config file and scenario files.
//!
//! Every option can come from a flag or from the subcommand's table in the
//! config file (`[gen-dataset]`, `[train]`, `[eval]`, `[simulate]`, `[plot]`);
//! flags win. Resolved options are echoed back as TOML.

use std::path::{Path, PathBuf};

use clap::Args;
use lsbnav::control::ControllerConfig;
use lsbnav::sim::Scenario;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("missing required option `{0}` (flag or config file)")]
    Missing(&'static str),
    #[error("invalid value for `{key}`: {msg}")]
    Invalid { key: &'static str, msg: String },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
}

fn required<T>(v: Option<T>, key: &'static str) -> Result<T, ConfigError> {
    v.ok_or(ConfigError::Missing(key))
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
    toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
}

/// Serializes a resolved configuration for the echo file.
pub fn to_toml<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("resolved configurations are TOML-representable")
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default, rename = "gen-dataset")]
    pub gen_dataset: GenDatasetOpts,
    #[serde(default)]
    pub train: TrainOpts,
    #[serde(default)]
    pub eval: EvalOpts,
    #[serde(default)]
    pub simulate: SimulateOpts,
    #[serde(default)]
    pub plot: PlotOpts,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        path.map_or(Ok(Self::default()), read_toml)
    }
}

macro_rules! merge_fields {
    ($flags:expr, $file:expr, $($f:ident),*) => {
        Self { $($f: $flags.$f.or($file.$f)),* }
    };
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDatasetOpts {
    /// Obstacle map file.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Robot shape file.
    #[arg(long)]
    pub shape: Option<PathBuf>,
    /// Number of sampled positions [default: 1389].
    #[arg(long)]
    pub locations: Option<usize>,
    /// Headings per position [default: 36].
    #[arg(long)]
    pub thetas: Option<usize>,
    /// Random seed for positions [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Place positions on a regular grid instead of uniformly at random.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub grid: Option<bool>,
    /// Output dataset file; normalization statistics go to `<out>.stats`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GenDatasetConfig {
    pub map: PathBuf,
    pub shape: PathBuf,
    pub locations: usize,
    pub thetas: usize,
    pub seed: u64,
    pub grid: bool,
    pub out: PathBuf,
}

impl GenDatasetOpts {
    pub fn resolve(self, file: Self) -> Result<GenDatasetConfig, ConfigError> {
        let o = merge_fields!(self, file, map, shape, locations, thetas, seed, grid, out);
        Ok(GenDatasetConfig {
            map: required(o.map, "map")?,
            shape: required(o.shape, "shape")?,
            locations: o.locations.unwrap_or(1389),
            thetas: o.thetas.unwrap_or(36),
            seed: o.seed.unwrap_or(0),
            grid: o.grid.unwrap_or(false),
            out: required(o.out, "out")?,
        })
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainOpts {
    /// Dataset file written by `gen-dataset`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Fraction held out for validation [default: 0.1].
    #[arg(long)]
    pub val_frac: Option<f64>,
    /// Seed of the train/validation split [default: 0].
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Hidden width h [default: 128].
    #[arg(long)]
    pub width: Option<usize>,
    /// Residual blocks [default: 4].
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Block distance of the long skips, 0 for none [default: 2].
    #[arg(long)]
    pub skip_stride: Option<usize>,
    /// Weight initialization seed [default: 0].
    #[arg(long)]
    pub init_seed: Option<u64>,
    /// Mini-batch shuffling seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Lower learning rate of the cyclic schedule [default: 1e-4].
    #[arg(long)]
    pub base_lr: Option<f64>,
    /// Upper learning rate of the cyclic schedule [default: 1e-3].
    #[arg(long)]
    pub max_lr: Option<f64>,
    /// Epochs per triangular cycle [default: 4].
    #[arg(long)]
    pub cycle_epochs: Option<f64>,
    /// Global gradient-norm clip [default: 1.0].
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// [default: 256]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Maximum epochs [default: 60].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Early-stopping patience in epochs [default: 10].
    #[arg(long)]
    pub patience: Option<usize>,
    /// Decoupled weight decay [default: 1e-4].
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Wall-clock budget in seconds; no limit when absent.
    #[arg(long)]
    pub time_budget_secs: Option<f64>,
    /// Output checkpoint; the loss history goes to `<out>.history.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRunConfig {
    pub data: PathBuf,
    pub val_frac: f64,
    pub split_seed: u64,
    pub width: usize,
    pub blocks: usize,
    pub skip_stride: usize,
    pub init_seed: u64,
    pub seed: u64,
    pub base_lr: f64,
    pub max_lr: f64,
    pub cycle_epochs: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub weight_decay: f64,
    pub time_budget_secs: Option<f64>,
    pub out: PathBuf,
}

impl TrainOpts {
    pub fn resolve(self, file: Self) -> Result<TrainRunConfig, ConfigError> {
        let o = merge_fields!(
            self, file, data, val_frac, split_seed, width, blocks, skip_stride, init_seed, seed, base_lr, max_lr,
            cycle_epochs, clip_norm, batch_size, epochs, patience, weight_decay, time_budget_secs, out
        );
        let d = lsbnav::net::TrainConfig::default();
        let val_frac = o.val_frac.unwrap_or(0.1);
        if !(val_frac > 0.0 && val_frac < 1.0) {
            return Err(ConfigError::Invalid { key: "val_frac", msg: format!("{val_frac} is not in (0, 1)") });
        }
        if let Some(t) = o.time_budget_secs {
            if !(t > 0.0 && t.is_finite()) {
                return Err(ConfigError::Invalid { key: "time_budget_secs", msg: format!("{t} is not positive") });
            }
        }
        Ok(TrainRunConfig {
            data: required(o.data, "data")?,
            val_frac,
            split_seed: o.split_seed.unwrap_or(0),
            width: o.width.unwrap_or(128),
            blocks: o.blocks.unwrap_or(4),
            skip_stride: o.skip_stride.unwrap_or(2),
            init_seed: o.init_seed.unwrap_or(0),
            seed: o.seed.unwrap_or(d.seed),
            base_lr: o.base_lr.unwrap_or(d.base_lr),
            max_lr: o.max_lr.unwrap_or(d.max_lr),
            cycle_epochs: o.cycle_epochs.unwrap_or(d.cycle_epochs),
            clip_norm: o.clip_norm.unwrap_or(d.clip_norm),
            batch_size: o.batch_size.unwrap_or(d.batch_size),
            epochs: o.epochs.unwrap_or(d.max_epochs),
            patience: o.patience.unwrap_or(d.patience),
            weight_decay: o.weight_decay.unwrap_or(d.weight_decay),
            time_budget_secs: o.time_budget_secs,
            out: required(o.out, "out")?,
        })
    }
}

impl TrainRunConfig {
    pub fn mlp(&self) -> lsbnav::net::MlpConfig {
        lsbnav::net::MlpConfig {
            width: self.width,
            n_blocks: self.blocks,
            skip_stride: self.skip_stride,
            seed: self.init_seed,
        }
    }

    pub fn train(&self) -> lsbnav::net::TrainConfig {
        lsbnav::net::TrainConfig {
            base_lr: self.base_lr,
            max_lr: self.max_lr,
            cycle_epochs: self.cycle_epochs,
            clip_norm: self.clip_norm,
            batch_size: self.batch_size,
            max_epochs: self.epochs,
            patience: self.patience,
            weight_decay: self.weight_decay,
            seed: self.seed,
            time_budget: self.time_budget_secs.map(std::time::Duration::from_secs_f64),
        }
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOpts {
    /// Model checkpoint.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Test dataset.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Write a per-location MSE heat map SVG here.
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    /// Map drawn under the heat map.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalConfig {
    pub model: PathBuf,
    pub data: PathBuf,
    pub heatmap: Option<PathBuf>,
    pub map: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl EvalOpts {
    pub fn resolve(self, file: Self) -> Result<EvalConfig, ConfigError> {
        let o = merge_fields!(self, file, model, data, heatmap, map, out);
        Ok(EvalConfig {
            model: required(o.model, "model")?,
            data: required(o.data, "data")?,
            heatmap: o.heatmap,
            map: o.map,
            out: o.out,
        })
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateOpts {
    /// Scenario file (TOML).
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Overrides the scenario's map.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Overrides the scenario's robot shape.
    #[arg(long)]
    pub shape: Option<PathBuf>,
    /// Model checkpoint trained for this map and shape.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Controller settings (TOML); replaces the scenario's `[controller]` table.
    #[arg(long)]
    pub controller: Option<PathBuf>,
    /// Output directory for the trajectory, audit and config echo.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Record solve times in the trajectory CSV [default: true]; disable for
    /// byte-reproducible logs.
    #[arg(long)]
    pub timings: Option<bool>,
}

/// Scenario file contents; relative paths are taken from the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub map: Option<PathBuf>,
    pub shape: Option<PathBuf>,
    pub scenario: Scenario,
    #[serde(default)]
    pub controller: ControllerConfig,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut s: Self = read_toml(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        s.map = s.map.map(|p| dir.join(p));
        s.shape = s.shape.map(|p| dir.join(p));
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateConfig {
    pub scenario_file: PathBuf,
    pub map: PathBuf,
    pub shape: PathBuf,
    pub model: PathBuf,
    pub out_dir: PathBuf,
    pub timings: bool,
    pub scenario: Scenario,
    pub controller: ControllerConfig,
}

impl SimulateOpts {
    pub fn resolve(self, file: Self) -> Result<SimulateConfig, ConfigError> {
        let o = merge_fields!(self, file, scenario, map, shape, model, controller, out_dir, timings);
        let scenario_file = required(o.scenario, "scenario")?;
        let sf = ScenarioFile::load(&scenario_file)?;
        let controller = match &o.controller {
            Some(p) => read_toml(p)?,
            None => sf.controller,
        };
        Ok(SimulateConfig {
            map: required(o.map.or(sf.map), "map")?,
            shape: required(o.shape.or(sf.shape), "shape")?,
            model: required(o.model, "model")?,
            out_dir: required(o.out_dir, "out_dir")?,
            timings: o.timings.unwrap_or(true),
            scenario: sf.scenario,
            controller,
            scenario_file,
        })
    }
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotOpts {
    /// Trajectory CSV written by `simulate`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Obstacle map file.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Robot shape; draws outlines and safety balls when given.
    #[arg(long)]
    pub shape: Option<PathBuf>,
    /// Steps between drawn outlines [default: 25].
    #[arg(long)]
    pub every: Option<usize>,
    /// Output SVG.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotConfig {
    pub log: PathBuf,
    pub map: PathBuf,
    pub shape: Option<PathBuf>,
    pub every: usize,
    pub out: PathBuf,
}

impl PlotOpts {
    pub fn resolve(self, file: Self) -> Result<PlotConfig, ConfigError> {
        let o = merge_fields!(self, file, log, map, shape, every, out);
        let every = o.every.unwrap_or(25);
        if every == 0 {
            return Err(ConfigError::Invalid { key: "every", msg: "must be at least 1".into() });
        }
        Ok(PlotConfig {
            log: required(o.log, "log")?,
            map: required(o.map, "map")?,
            shape: o.shape,
            every,
            out: required(o.out, "out")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let flags = GenDatasetOpts { locations: Some(10), ..Default::default() };
        let file: ConfigFile = toml::from_str(
            "[gen-dataset]\nmap = \"m.map\"\nshape = \"s.shape\"\nlocations = 99\nthetas = 4\nout = \"d.bin\"\n",
        )
        .unwrap();
        let c = flags.resolve(file.gen_dataset).unwrap();
        assert_eq!((c.locations, c.thetas, c.seed, c.grid), (10, 4, 0, false));
        assert_eq!(c.map, PathBuf::from("m.map"));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<ConfigFile>("[train]\nwidht = 3\n").is_err());
        assert!(toml::from_str::<ConfigFile>("[other]\n").is_err());
    }

    #[test]
    fn missing_required_reported() {
        let e = TrainOpts::default().resolve(TrainOpts::default()).unwrap_err();
        assert!(matches!(e, ConfigError::Missing("data")));
    }

    #[test]
    fn bad_values_rejected() {
        let o = TrainOpts { data: Some("d".into()), out: Some("o".into()), val_frac: Some(1.5), ..Default::default() };
        assert!(matches!(o.resolve(TrainOpts::default()), Err(ConfigError::Invalid { key: "val_frac", .. })));
        let p = PlotOpts { every: Some(0), ..Default::default() };
        assert!(p.resolve(PlotOpts::default()).is_err());
    }

    #[test]
    fn train_defaults_match_library() {
        let o = TrainOpts { data: Some("d".into()), out: Some("o".into()), ..Default::default() };
        let c = o.resolve(TrainOpts::default()).unwrap();
        assert_eq!(c.train(), lsbnav::net::TrainConfig::default());
        assert_eq!(c.mlp(), lsbnav::net::MlpConfig::desk(0));
    }

    #[test]
    fn resolved_config_echo_parses_back() {
        let o = TrainOpts { data: Some("d".into()), out: Some("o".into()), ..Default::default() };
        let c = o.resolve(TrainOpts::default()).unwrap();
        let text = to_toml(&c);
        let back: TrainOpts = toml::from_str(&text).unwrap();
        assert_eq!(back.resolve(TrainOpts::default()).unwrap(), c);
    }
}
