//! Mini-batch training (AdamW, triangular cyclic learning rate, global-norm
//! clipping, early stopping) and metric-scale evaluation.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use ndarray::{s, Array1, Array2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ClearanceModel, MlpModel, NetError};
use crate::dataset::{ClearanceSample, DatasetError, NormStats};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const EVAL_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub max_lr: f64,
    /// Length of one triangular cycle; the amplitude halves after each cycle.
    pub cycle_epochs: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Wall-clock cap; training stops after the first epoch that exceeds it.
    pub time_budget: Option<Duration>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-4,
            max_lr: 1e-3,
            cycle_epochs: 4.0,
            clip_norm: 1.0,
            batch_size: 256,
            max_epochs: 60,
            patience: 10,
            weight_decay: 1e-4,
            seed: 0,
            time_budget: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: &str| Err(NetError::Config(m.to_string()));
        if !(self.base_lr > 0.0 && self.base_lr <= self.max_lr) {
            return bad("need 0 < base_lr <= max_lr");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        if !(self.cycle_epochs > 0.0) {
            return bad("cycle_epochs must be positive");
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }
}

/// Learning rate after `epochs` (fractional) of training.
pub fn cyclic_lr(cfg: &TrainConfig, epochs: f64) -> f64 {
    let cycle = (epochs / cfg.cycle_epochs).floor();
    let pos = epochs / cfg.cycle_epochs - cycle;
    let tri = 1.0 - (2.0 * pos - 1.0).abs();
    cfg.base_lr + (cfg.max_lr - cfg.base_lr) * tri * 0.5f64.powf(cycle)
}

/// Rescales `grads` in place to global norm at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= k);
    }
    norm
}

/// Normalized inputs (`n × 3`) and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedData {
    pub inputs: Array2<f64>,
    pub targets: Array1<f64>,
}

impl NormalizedData {
    pub fn new(samples: &[ClearanceSample], stats: &NormStats) -> Result<Self, DatasetError> {
        let mut inputs = Array2::zeros((samples.len(), 3));
        let mut targets = Array1::zeros(samples.len());
        for (i, s) in samples.iter().enumerate() {
            let nx = stats.normalize_input(s.input());
            inputs.row_mut(i).assign(&Array1::from(nx.to_vec()));
            targets[i] = stats.normalize_target(s.d)?;
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    fn gather(&self, idx: &[usize]) -> (Array2<f64>, Array1<f64>) {
        let mut x = Array2::zeros((idx.len(), 3));
        let mut t = Array1::zeros(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            x.row_mut(r).assign(&self.inputs.row(i));
            t[r] = self.targets[i];
        }
        (x, t)
    }

    /// Eval-mode MSE in normalized space.
    pub fn loss(&self, model: &MlpModel) -> f64 {
        let mut sum = 0.0;
        for start in (0..self.len()).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(self.len());
            let y = model.predict_batch(&self.inputs.slice(s![start..end, ..]).to_owned());
            sum += (&y - &self.targets.slice(s![start..end])).mapv(|r| r * r).sum();
        }
        sum / self.len() as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    /// Index 0 is the loss before any update.
    pub val_loss: Vec<f64>,
    pub lr: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: MlpModel,
    pub history: TrainHistory,
}

struct AdamW {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, wd: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= lr * (mhat / (vhat.sqrt() + ADAM_EPS) + wd * params[i]);
        }
    }
}

/// Trains `model` in place of a copy and returns the best-validation parameters.
pub fn train(
    model: &MlpModel,
    train_set: &NormalizedData,
    val_set: &NormalizedData,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, NetError> {
    cfg.validate()?;
    if train_set.len() < 2 || val_set.is_empty() {
        return Err(NetError::Config("need at least 2 training and 1 validation sample".into()));
    }
    let started = Instant::now();
    let mut current = model.clone();
    let mut adam = AdamW::new(current.param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let steps_per_epoch = train_set.len().div_ceil(cfg.batch_size) as f64;

    let mut history = TrainHistory { val_loss: vec![val_set.loss(&current)], ..Default::default() };
    let mut best = (history.val_loss[0], current.clone());
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        let last_good = current.clone();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        let mut lr = cfg.base_lr;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let (x, t) = train_set.gather(chunk);
            let lg = current.loss_and_gradients(&x, &t);
            if !lg.loss.is_finite() {
                return Err(NetError::Diverged { epoch, last_good: Box::new(last_good) });
            }
            loss_sum += lg.loss * chunk.len() as f64;
            seen += chunk.len();
            let mut g = lg.grads.params_flat();
            clip_global_norm(&mut g, cfg.clip_norm);
            lr = cyclic_lr(cfg, (epoch - 1) as f64 + step as f64 / steps_per_epoch);
            let mut p = current.params_flat();
            adam.step(&mut p, &g, lr, cfg.weight_decay);
            current.set_params_flat(&p);
            current.apply_batch_stats(&lg.batch_stats);
        }
        let val = val_set.loss(&current);
        if !val.is_finite() {
            return Err(NetError::Diverged { epoch, last_good: Box::new(last_good) });
        }
        history.train_loss.push(loss_sum / seen.max(1) as f64);
        history.val_loss.push(val);
        history.lr.push(lr);
        if val < best.0 {
            best = (val, current.clone());
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        }
        if cfg.time_budget.is_some_and(|b| started.elapsed() > b) {
            break;
        }
    }
    Ok(TrainOutcome { model: best.1, history })
}

/// Squared error at one `(x, y)` location, averaged over its orientations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationError {
    pub x: f64,
    pub y: f64,
    pub mse: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Mean over samples of `(d̃ − d)²` in metres².
    pub mse: f64,
    pub max_abs_error: f64,
    pub n_samples: usize,
    pub per_location: Vec<LocationError>,
    pub median_location_mse: f64,
    pub frac_locations_below_001: f64,
}

/// Metric-scale errors of `model` on `samples`.
pub fn evaluate(model: &ClearanceModel, samples: &[ClearanceSample]) -> EvalReport {
    let mut sq = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let mut x = Array2::zeros((chunk.len(), 3));
        for (r, s) in chunk.iter().enumerate() {
            x.row_mut(r).assign(&Array1::from(model.stats.normalize_input(s.input()).to_vec()));
        }
        let y = model.model.predict_batch(&x);
        for (s, nd) in chunk.iter().zip(y.iter()) {
            let e = model.stats.denormalize(*nd) - s.d;
            sq.push(e);
        }
    }
    let n = samples.len();
    let mse = if n == 0 { 0.0 } else { sq.iter().map(|e| e * e).sum::<f64>() / n as f64 };
    let max_abs_error = sq.iter().fold(0.0f64, |m, e| m.max(e.abs()));

    let mut groups: BTreeMap<(u64, u64), (f64, f64, f64, usize)> = BTreeMap::new();
    for (s, e) in samples.iter().zip(&sq) {
        let g = groups.entry((s.x.to_bits(), s.y.to_bits())).or_insert((s.x, s.y, 0.0, 0));
        g.2 += e * e;
        g.3 += 1;
    }
    let per_location: Vec<LocationError> = groups
        .into_values()
        .map(|(x, y, sum, count)| LocationError { x, y, mse: sum / count as f64, count })
        .collect();
    let mut sorted: Vec<f64> = per_location.iter().map(|l| l.mse).collect();
    sorted.sort_by(f64::total_cmp);
    let median_location_mse = match sorted.len() {
        0 => 0.0,
        k if k % 2 == 1 => sorted[k / 2],
        k => 0.5 * (sorted[k / 2 - 1] + sorted[k / 2]),
    };
    let below = sorted.iter().filter(|&&m| m < 0.01).count();
    let frac_locations_below_001 = if sorted.is_empty() { 0.0 } else { below as f64 / sorted.len() as f64 };
    EvalReport { mse, max_abs_error, n_samples: n, per_location, median_location_mse, frac_locations_below_001 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::fit_norm_stats;
    use crate::net::MlpConfig;
    use approx::assert_abs_diff_eq;

    fn toy(n: usize) -> Vec<ClearanceSample> {
        (0..n)
            .map(|i| {
                let f = i as f64;
                ClearanceSample { x: f * 0.3, y: 1.0 - f * 0.1, theta: (f * 0.7).sin(), d: 0.2 + 0.05 * f }
            })
            .collect()
    }

    #[test]
    fn paper_learning_rate_bounds() {
        let c = TrainConfig::default();
        assert_eq!((c.base_lr, c.max_lr, c.clip_norm), (1e-4, 1e-3, 1.0));
    }

    #[test]
    fn triangular_schedule_halves_each_cycle() {
        let c = TrainConfig::default();
        assert_abs_diff_eq!(cyclic_lr(&c, 0.0), 1e-4, epsilon = 1e-15);
        assert_abs_diff_eq!(cyclic_lr(&c, 2.0), 1e-3, epsilon = 1e-15);
        assert_abs_diff_eq!(cyclic_lr(&c, 4.0), 1e-4, epsilon = 1e-15);
        assert_abs_diff_eq!(cyclic_lr(&c, 6.0), 1e-4 + 0.5 * 9e-4, epsilon = 1e-15);
        assert_abs_diff_eq!(cyclic_lr(&c, 10.0), 1e-4 + 0.25 * 9e-4, epsilon = 1e-15);
        for k in 0..200 {
            let lr = cyclic_lr(&c, k as f64 * 0.13);
            assert!((1e-4..=1e-3 + 1e-15).contains(&lr));
        }
    }

    #[test]
    fn clip_scales_to_unit_norm() {
        let mut g = vec![60.0, 80.0];
        assert_eq!(clip_global_norm(&mut g, 1.0), 100.0);
        assert_abs_diff_eq!(g[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], 0.8, epsilon = 1e-15);
        let mut small = vec![0.1, 0.2];
        clip_global_norm(&mut small, 1.0);
        assert_eq!(small, vec![0.1, 0.2]);
    }

    #[test]
    fn one_epoch_reduces_toy_training_loss() {
        let samples = toy(10);
        let stats = fit_norm_stats(&samples).unwrap();
        let data = NormalizedData::new(&samples, &stats).unwrap();
        let model = MlpModel::init(MlpConfig { width: 16, n_blocks: 2, skip_stride: 2, seed: 3 }).unwrap();
        let before = model.loss_and_gradients(&data.inputs, &data.targets).loss;
        let cfg = TrainConfig { batch_size: 10, max_epochs: 1, base_lr: 1e-3, max_lr: 1e-3, ..Default::default() };
        let out = train(&model, &data, &data, &cfg).unwrap();
        let trained = &out.model;
        let after = trained.loss_and_gradients(&data.inputs, &data.targets).loss;
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn bad_config_rejected() {
        let c = TrainConfig { base_lr: 1e-2, ..Default::default() };
        assert!(matches!(c.validate(), Err(NetError::Config(_))));
        assert!(TrainConfig { clip_norm: 0.0, ..Default::default() }.validate().is_err());
    }

    fn constant_model(stats: NormStats, d: f64) -> ClearanceModel {
        let mut model = MlpModel::init(MlpConfig { width: 8, n_blocks: 1, skip_stride: 0, seed: 1 }).unwrap();
        model.output.w.fill(0.0);
        model.output.b[0] = stats.normalize_target(d).unwrap();
        ClearanceModel { model, stats }
    }

    #[test]
    fn constant_mean_predictor_mse_is_variance() {
        let samples = toy(12);
        let stats = fit_norm_stats(&samples).unwrap();
        let mean = samples.iter().map(|s| s.d).sum::<f64>() / 12.0;
        let var = samples.iter().map(|s| (s.d - mean).powi(2)).sum::<f64>() / 12.0;
        let report = evaluate(&constant_model(stats, mean), &samples);
        assert_abs_diff_eq!(report.mse, var, epsilon = 1e-9);
        assert_eq!(report.per_location.len(), 12);
    }

    #[test]
    fn evaluate_matches_scalar_reimplementation() {
        let samples = toy(10);
        let stats = fit_norm_stats(&samples).unwrap();
        let model = ClearanceModel {
            model: MlpModel::init(MlpConfig { width: 8, n_blocks: 2, skip_stride: 0, seed: 5 }).unwrap(),
            stats,
        };
        let direct = samples.iter().map(|s| (model.predict(s.x, s.y, s.theta) - s.d).powi(2)).sum::<f64>() / 10.0;
        assert_abs_diff_eq!(evaluate(&model, &samples).mse, direct, epsilon = 1e-12);
    }

    #[test]
    fn per_location_groups_orientations() {
        let mut samples = Vec::new();
        for (k, &(x, y)) in [(1.0, 1.0), (2.0, 3.0)].iter().enumerate() {
            for j in 0..4 {
                samples.push(ClearanceSample { x, y, theta: j as f64, d: 0.5 + k as f64 + 0.1 * j as f64 });
            }
        }
        let stats = fit_norm_stats(&samples).unwrap();
        let report = evaluate(&constant_model(stats, 0.5), &samples);
        assert_eq!(report.per_location.len(), 2);
        let first = report.per_location[0];
        assert_eq!((first.x, first.y, first.count), (1.0, 1.0, 4));
        assert_abs_diff_eq!(first.mse, (0.0 + 0.01 + 0.04 + 0.09) / 4.0, epsilon = 1e-12);
    }
}
