//! Configuration → clearance training data: generation, normalization,
//! storage and splitting.
//!
//! Sample inputs and targets are kept exactly representable in `f32`, so a
//! dataset written to disk and read back is bit-identical to the in-memory one
//! and every stored target can be re-derived exactly from its stored inputs.
//!
//! Binary layout (all little-endian):
//!
//! | bytes | content                         |
//! |-------|---------------------------------|
//! | 8     | magic `LSBDATA\0`               |
//! | 4     | format version (`u32`, = 1)     |
//! | 8     | sample count (`u64`)            |
//! | 16·n  | per sample: `x y theta d` as `f32` |

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{clearance, Configuration, ObstacleSet, RobotShape};

pub const DATASET_MAGIC: [u8; 8] = *b"LSBDATA\0";
pub const DATASET_VERSION: u32 = 1;

/// Added to `|min d|` to obtain the log-shift `ε`.
pub const EPSILON_MARGIN: f64 = 0.1;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset is empty")]
    Empty,
    #[error("feature `{0}` has zero spread; widen the sampling")]
    DegenerateFeature(&'static str),
    #[error("non-finite clearance target (is the obstacle set empty?)")]
    NonFiniteTarget,
    #[error("epsilon {epsilon} must exceed |d_min| = {d_min_abs}")]
    EpsilonTooSmall { epsilon: f64, d_min_abs: f64 },
    #[error("d + epsilon = {0} is not positive")]
    NonPositiveShifted(f64),
    #[error("train fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("n_theta must be at least 1")]
    NoOrientations,
    #[error("not a dataset file (bad magic)")]
    BadMagic,
    #[error("dataset version {found} is not supported (expected {DATASET_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("dataset file truncated: expected {expected} samples")]
    Truncated { expected: u64 },
    #[error("stats file: {0}")]
    StatsFormat(String),
    #[error("sample {index}: stored d = {stored} but recomputed {recomputed}")]
    AuditMismatch { index: usize, stored: f64, recomputed: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClearanceSample {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub d: f64,
}

impl ClearanceSample {
    pub fn input(&self) -> [f64; 3] {
        [self.x, self.y, self.theta]
    }

    pub fn configuration(&self) -> Configuration {
        Configuration::new(self.x, self.y, self.theta)
    }
}

/// Input standardization and log-target normalization constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mu_x: [f64; 3],
    pub sigma_x: [f64; 3],
    pub mu_log: f64,
    pub sigma_log: f64,
    pub epsilon: f64,
}

const FEATURES: [&str; 3] = ["x", "y", "theta"];

impl NormStats {
    pub fn normalize_input(&self, input: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| (input[k] - self.mu_x[k]) / self.sigma_x[k])
    }

    pub fn normalize_target(&self, d: f64) -> Result<f64, DatasetError> {
        let shifted = d + self.epsilon;
        if !(shifted > 0.0) {
            return Err(DatasetError::NonPositiveShifted(shifted));
        }
        Ok((shifted.ln() - self.mu_log) / self.sigma_log)
    }

    pub fn denormalize(&self, nd: f64) -> f64 {
        (nd * self.sigma_log + self.mu_log).exp() - self.epsilon
    }

    /// `d(denormalize)/d(nd)` at `nd`.
    pub fn denormalize_slope(&self, nd: f64) -> f64 {
        self.sigma_log * (nd * self.sigma_log + self.mu_log).exp()
    }

    /// Labeled decimal lines; values use the shortest exact representation.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let [a, b, c] = self.mu_x;
        let _ = writeln!(s, "mu_x {a:?} {b:?} {c:?}");
        let [a, b, c] = self.sigma_x;
        let _ = writeln!(s, "sigma_x {a:?} {b:?} {c:?}");
        let _ = writeln!(s, "mu_log {:?}", self.mu_log);
        let _ = writeln!(s, "sigma_log {:?}", self.sigma_log);
        let _ = writeln!(s, "epsilon {:?}", self.epsilon);
        s
    }

    pub fn from_text(text: &str) -> Result<Self, DatasetError> {
        let bad = |m: String| DatasetError::StatsFormat(m);
        let mut vals: [Option<Vec<f64>>; 5] = Default::default();
        const KEYS: [(&str, usize); 5] =
            [("mu_x", 3), ("sigma_x", 3), ("mu_log", 1), ("sigma_log", 1), ("epsilon", 1)];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let mut it = line.split_whitespace();
            let key = it.next().unwrap_or_default();
            let slot = KEYS.iter().position(|(k, _)| *k == key).ok_or_else(|| bad(format!("unknown key `{key}`")))?;
            let nums = it
                .map(|t| t.parse::<f64>().map_err(|_| bad(format!("bad number `{t}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            if nums.len() != KEYS[slot].1 {
                return Err(bad(format!("`{key}` expects {} values", KEYS[slot].1)));
            }
            if vals[slot].replace(nums).is_some() {
                return Err(bad(format!("duplicate `{key}`")));
            }
        }
        let take = |i: usize| vals[i].clone().ok_or_else(|| bad(format!("missing `{}`", KEYS[i].0)));
        let (mx, sx) = (take(0)?, take(1)?);
        Ok(Self {
            mu_x: [mx[0], mx[1], mx[2]],
            sigma_x: [sx[0], sx[1], sx[2]],
            mu_log: take(2)?[0],
            sigma_log: take(3)?[0],
            epsilon: take(4)?[0],
        })
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Fits normalization constants with `ε = |d_min| + EPSILON_MARGIN`.
pub fn fit_norm_stats(samples: &[ClearanceSample]) -> Result<NormStats, DatasetError> {
    if samples.is_empty() {
        return Err(DatasetError::Empty);
    }
    let d_min = samples.iter().map(|s| s.d).fold(f64::INFINITY, f64::min);
    fit_norm_stats_with_epsilon(samples, d_min.abs() + EPSILON_MARGIN)
}

pub fn fit_norm_stats_with_epsilon(
    samples: &[ClearanceSample],
    epsilon: f64,
) -> Result<NormStats, DatasetError> {
    if samples.is_empty() {
        return Err(DatasetError::Empty);
    }
    if samples.iter().any(|s| !s.d.is_finite()) {
        return Err(DatasetError::NonFiniteTarget);
    }
    let d_min_abs = samples.iter().map(|s| s.d).fold(f64::INFINITY, f64::min).abs();
    if !(epsilon > d_min_abs) {
        return Err(DatasetError::EpsilonTooSmall { epsilon, d_min_abs });
    }
    let mut mu_x = [0.0; 3];
    let mut sigma_x = [0.0; 3];
    for k in 0..3 {
        let (m, s) = mean_std(samples.iter().map(move |smp| smp.input()[k]));
        if !(s > 0.0) {
            return Err(DatasetError::DegenerateFeature(FEATURES[k]));
        }
        mu_x[k] = m;
        sigma_x[k] = s;
    }
    let (mu_log, sigma_log) = mean_std(samples.iter().map(|s| (s.d + epsilon).ln()));
    if !(sigma_log > 0.0) {
        return Err(DatasetError::DegenerateFeature("log_d"));
    }
    Ok(NormStats { mu_x, sigma_x, mu_log, sigma_log, epsilon })
}

/// Rounds to the nearest `f32`.
fn snap(v: f64) -> f64 {
    v as f32 as f64
}

/// Rounds a heading to an `f32` that still lies in `(-π, π]`.
fn snap_angle(theta: f64) -> f64 {
    let mut t = theta as f32;
    while (t as f64) > PI {
        t = f32::from_bits(t.to_bits() - 1);
    }
    while (t as f64) <= -PI {
        t = f32::from_bits(t.to_bits() - 1);
    }
    t as f64
}

/// Heading grid `θ_j = -π + 2πj/N`, wrapped into `(-π, π]`.
pub fn theta_grid(n_theta: usize) -> Vec<f64> {
    (0..n_theta)
        .map(|j| Configuration::new(0.0, 0.0, -PI + 2.0 * PI * j as f64 / n_theta as f64).theta())
        .collect()
}

/// How sample locations cover the map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Coverage {
    #[default]
    Uniform,
    /// Cell centers of a `⌈√n⌉`-wide grid, row-major, first `n` cells.
    Grid,
}

fn locations(obs: &ObstacleSet, n: usize, coverage: Coverage, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let b = obs.world_bounds();
    match coverage {
        Coverage::Uniform => (0..n)
            .map(|_| {
                let x = b.min.x + rng.random::<f64>() * b.width();
                let y = b.min.y + rng.random::<f64>() * b.height();
                (x, y)
            })
            .collect(),
        Coverage::Grid => {
            let nx = (n as f64).sqrt().ceil().max(1.0) as usize;
            let ny = n.div_ceil(nx).max(1);
            (0..n)
                .map(|k| {
                    let (i, j) = (k % nx, k / nx);
                    let x = b.min.x + (i as f64 + 0.5) * b.width() / nx as f64;
                    let y = b.min.y + (j as f64 + 0.5) * b.height() / ny as f64;
                    (x, y)
                })
                .collect()
        }
    }
}

/// `n_locations` uniform positions × `n_theta` headings, ordered by location then heading.
pub fn generate(
    shape: &RobotShape,
    obs: &ObstacleSet,
    n_locations: usize,
    n_theta: usize,
    seed: u64,
) -> Result<Vec<ClearanceSample>, DatasetError> {
    generate_with_coverage(shape, obs, n_locations, n_theta, seed, Coverage::Uniform)
}

pub fn generate_with_coverage(
    shape: &RobotShape,
    obs: &ObstacleSet,
    n_locations: usize,
    n_theta: usize,
    seed: u64,
    coverage: Coverage,
) -> Result<Vec<ClearanceSample>, DatasetError> {
    if n_theta == 0 {
        return Err(DatasetError::NoOrientations);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let locs = locations(obs, n_locations, coverage, &mut rng);
    let thetas: Vec<f64> = theta_grid(n_theta).into_iter().map(snap_angle).collect();
    let b = *obs.world_bounds();
    let per_location: Vec<Vec<ClearanceSample>> = locs
        .par_iter()
        .map(|&(x, y)| {
            // Rounding must not push a location off the map.
            let x = snap(x).clamp(b.min.x, b.max.x);
            let y = snap(y).clamp(b.min.y, b.max.y);
            thetas.iter().map(|&theta| labeled(shape, obs, x, y, theta)).collect()
        })
        .collect();
    Ok(per_location.into_iter().flatten().collect())
}

fn labeled(shape: &RobotShape, obs: &ObstacleSet, x: f64, y: f64, theta: f64) -> ClearanceSample {
    let d = clearance(shape, &Configuration::new(x, y, theta), obs).distance;
    ClearanceSample { x, y, theta, d: snap(d) }
}

/// Recomputes the targets of a seeded random `fraction` of samples.
/// Returns how many were checked.
pub fn audit(
    samples: &[ClearanceSample],
    shape: &RobotShape,
    obs: &ObstacleSet,
    fraction: f64,
    seed: u64,
) -> Result<usize, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    for (index, s) in samples.iter().enumerate() {
        if rng.random::<f64>() >= fraction {
            continue;
        }
        let again = labeled(shape, obs, s.x, s.y, s.theta);
        if again.d.to_bits() != s.d.to_bits() {
            return Err(DatasetError::AuditMismatch { index, stored: s.d, recomputed: again.d });
        }
        checked += 1;
    }
    Ok(checked)
}

/// Seeded shuffle, then the first `⌊n·train_frac⌋` samples go to training.
pub fn split(
    samples: &[ClearanceSample],
    train_frac: f64,
    seed: u64,
) -> Result<(Vec<ClearanceSample>, Vec<ClearanceSample>), DatasetError> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(DatasetError::BadFraction(train_frac));
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (samples.len() as f64 * train_frac).floor() as usize;
    let train = idx[..n_train].iter().map(|&i| samples[i]).collect();
    let test = idx[n_train..].iter().map(|&i| samples[i]).collect();
    Ok((train, test))
}

pub fn write_samples<W: Write>(mut w: W, samples: &[ClearanceSample]) -> Result<(), DatasetError> {
    let mut buf = Vec::with_capacity(20 + 16 * samples.len());
    buf.extend_from_slice(&DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    for s in samples {
        for v in [s.x, s.y, s.theta, s.d] {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_samples<R: Read>(mut r: R) -> Result<Vec<ClearanceSample>, DatasetError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 20 || bytes[..8] != DATASET_MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != DATASET_VERSION {
        return Err(DatasetError::VersionMismatch { found: version });
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let body = &bytes[20..];
    if (body.len() as u64) != count.saturating_mul(16) {
        return Err(DatasetError::Truncated { expected: count });
    }
    let f = |c: &[u8]| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64;
    Ok(body
        .chunks_exact(16)
        .map(|c| ClearanceSample { x: f(&c[0..4]), y: f(&c[4..8]), theta: f(&c[8..12]), d: f(&c[12..16]) })
        .collect())
}

pub fn save(path: impl AsRef<Path>, samples: &[ClearanceSample]) -> Result<(), DatasetError> {
    let file = std::fs::File::create(path)?;
    write_samples(std::io::BufWriter::new(file), samples)
}

pub fn load(path: impl AsRef<Path>) -> Result<Vec<ClearanceSample>, DatasetError> {
    read_samples(std::fs::File::open(path)?)
}
