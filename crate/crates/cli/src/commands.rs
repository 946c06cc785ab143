//! Subcommand implementations.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use lsbnav::dataset::{self, Coverage};
use lsbnav::mapfile::{load_map, load_shape};
use lsbnav::net::{self, ClearanceModel, MlpModel, NormalizedData};
use lsbnav::sim::{self, TrajectoryLog};
use serde::Serialize;

use crate::config::{self, EvalConfig, GenDatasetConfig, PlotConfig, SimulateConfig, TrainRunConfig};
use crate::svg;

/// Error categories printed as `error[<category>]: …`.
pub fn category(e: &anyhow::Error) -> &'static str {
    for cause in e.chain() {
        if cause.is::<config::ConfigError>() {
            return "config";
        }
        if cause.is::<lsbnav::mapfile::MapFileError>() || cause.is::<lsbnav::geometry::GeometryError>() {
            return "map";
        }
        if cause.is::<lsbnav::dataset::DatasetError>() {
            return "dataset";
        }
        if cause.is::<lsbnav::net::NetError>() {
            return "model";
        }
        if cause.is::<lsbnav::control::ControlError>() {
            return "control";
        }
        if cause.is::<lsbnav::sim::SimError>() {
            return "sim";
        }
        if cause.is::<std::io::Error>() {
            return "io";
        }
    }
    "internal"
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn create_parent(p: &Path) -> Result<()> {
    let dir = parent_dir(p);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))
}

/// Prints the resolved configuration and writes it to `<dir>/<name>.resolved.toml`.
fn echo<T: Serialize>(dir: &Path, name: &str, cfg: &T) -> Result<()> {
    let text = config::to_toml(cfg);
    println!("# resolved {name} configuration\n{text}");
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(format!("{name}.resolved.toml"));
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn gen_dataset(cfg: &GenDatasetConfig) -> Result<()> {
    echo(&parent_dir(&cfg.out), "gen-dataset", cfg)?;
    let obs = load_map(&cfg.map).with_context(|| format!("loading map {}", cfg.map.display()))?;
    let shape = load_shape(&cfg.shape).with_context(|| format!("loading shape {}", cfg.shape.display()))?;
    let coverage = if cfg.grid { Coverage::Grid } else { Coverage::Uniform };
    let started = Instant::now();
    let samples = dataset::generate_with_coverage(&shape, &obs, cfg.locations, cfg.thetas, cfg.seed, coverage)?;
    let stats = dataset::fit_norm_stats(&samples)?;
    create_parent(&cfg.out)?;
    dataset::save(&cfg.out, &samples)?;
    let stats_path = with_suffix(&cfg.out, ".stats");
    fs::write(&stats_path, stats.to_text()).with_context(|| format!("writing {}", stats_path.display()))?;
    println!(
        "wrote {} samples to {} in {:.1} s (d in [{:.4}, {:.4}] m)",
        samples.len(),
        cfg.out.display(),
        started.elapsed().as_secs_f64(),
        samples.iter().map(|s| s.d).fold(f64::INFINITY, f64::min),
        samples.iter().map(|s| s.d).fold(f64::NEG_INFINITY, f64::max),
    );
    Ok(())
}

/// Trains a model on `samples`; shared by the `train` subcommand and the tests.
pub fn fit(samples: &[dataset::ClearanceSample], cfg: &TrainRunConfig) -> Result<(ClearanceModel, net::TrainHistory)> {
    let (train, val) = dataset::split(samples, 1.0 - cfg.val_frac, cfg.split_seed)?;
    let stats = dataset::fit_norm_stats(&train)?;
    let train_data = NormalizedData::new(&train, &stats)?;
    let val_data = NormalizedData::new(&val, &stats)?;
    let init = MlpModel::init(cfg.mlp())?;
    let out = net::train(&init, &train_data, &val_data, &cfg.train())?;
    Ok((ClearanceModel { model: out.model, stats }, out.history))
}

pub fn train(cfg: &TrainRunConfig) -> Result<()> {
    echo(&parent_dir(&cfg.out), "train", cfg)?;
    let samples = dataset::load(&cfg.data).with_context(|| format!("loading {}", cfg.data.display()))?;
    let started = Instant::now();
    let (model, history) = fit(&samples, cfg)?;
    create_parent(&cfg.out)?;
    net::save_checkpoint(&cfg.out, &model)?;
    let mut csv = String::from("epoch,train_loss,val_loss,lr\n");
    for (e, v) in history.val_loss.iter().enumerate() {
        let t = if e == 0 { String::new() } else { history.train_loss[e - 1].to_string() };
        let lr = if e == 0 { String::new() } else { history.lr[e - 1].to_string() };
        csv.push_str(&format!("{e},{t},{v},{lr}\n"));
    }
    let hist_path = with_suffix(&cfg.out, ".history.csv");
    fs::write(&hist_path, csv).with_context(|| format!("writing {}", hist_path.display()))?;
    println!(
        "trained {} epochs in {:.1} s; best epoch {} (validation loss {}); wrote {}",
        history.train_loss.len(),
        started.elapsed().as_secs_f64(),
        history.best_epoch,
        history.val_loss.get(history.best_epoch).copied().unwrap_or(f64::NAN),
        cfg.out.display()
    );
    Ok(())
}

pub fn eval(cfg: &EvalConfig) -> Result<()> {
    let dir = cfg.out.as_deref().or(cfg.heatmap.as_deref()).map_or(PathBuf::from("."), parent_dir);
    echo(&dir, "eval", cfg)?;
    let model = net::load_checkpoint(&cfg.model).with_context(|| format!("loading {}", cfg.model.display()))?;
    let samples = dataset::load(&cfg.data).with_context(|| format!("loading {}", cfg.data.display()))?;
    let report = net::evaluate(&model, &samples);
    let text = format!(
        "samples {}\nlocations {}\nmse {}\nmax_abs_error {}\nmedian_location_mse {}\nfrac_locations_below_0.01 {}\n",
        report.n_samples,
        report.per_location.len(),
        report.mse,
        report.max_abs_error,
        report.median_location_mse,
        report.frac_locations_below_001
    );
    print!("{text}");
    if let Some(out) = &cfg.out {
        create_parent(out)?;
        fs::write(out, &text).with_context(|| format!("writing {}", out.display()))?;
    }
    if let Some(path) = &cfg.heatmap {
        let obs = cfg.map.as_ref().map(load_map).transpose()?;
        create_parent(path)?;
        fs::write(path, svg::heatmap(obs.as_ref(), &report.per_location, None))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn simulate(cfg: &SimulateConfig) -> Result<()> {
    echo(&cfg.out_dir, "simulate", cfg)?;
    let obs = load_map(&cfg.map).with_context(|| format!("loading map {}", cfg.map.display()))?;
    let shape = load_shape(&cfg.shape).with_context(|| format!("loading shape {}", cfg.shape.display()))?;
    let model = net::load_checkpoint(&cfg.model).with_context(|| format!("loading {}", cfg.model.display()))?;
    let result = sim::run(&cfg.scenario, &model, &shape, &obs, &cfg.controller)?;
    let csv = cfg.out_dir.join("trajectory.csv");
    fs::write(&csv, result.log.to_csv(cfg.timings)).with_context(|| format!("writing {}", csv.display()))?;
    let report = sim::audit_report(&result.log);
    let f = result.final_state;
    let mut text = format!("outcome {}\n", result.outcome.as_str());
    if let Some(a) = &result.abort {
        text.push_str(&format!("abort {}\n", a.replace('\n', " ")));
    }
    text.push_str(&format!("final_state {} {} {} {}\n", f.x, f.y, f.theta, f.v));
    text.push_str(&report.to_text());
    let audit = cfg.out_dir.join("audit.txt");
    fs::write(&audit, &text).with_context(|| format!("writing {}", audit.display()))?;
    print!("{text}");
    Ok(())
}

pub fn plot(cfg: &PlotConfig) -> Result<()> {
    echo(&parent_dir(&cfg.out), "plot", cfg)?;
    let file = fs::File::open(&cfg.log).with_context(|| format!("opening {}", cfg.log.display()))?;
    let log = TrajectoryLog::read_csv(BufReader::new(file))?;
    let obs = load_map(&cfg.map).with_context(|| format!("loading map {}", cfg.map.display()))?;
    let shape = cfg.shape.as_ref().map(load_shape).transpose()?;
    fs::write(&cfg.out, svg::trajectory(&obs, &log, shape.as_ref(), cfg.every))
        .with_context(|| format!("writing {}", cfg.out.display()))?;
    println!("wrote {} ({} steps)", cfg.out.display(), log.records.len());
    Ok(())
}
