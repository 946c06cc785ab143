//! Residual MLP `f: R³ → R` with batch-norm, GELU and non-adjacent skips.
//!
//! Layout for width `h` and `L` residual blocks:
//!
//! ```text
//! input stack   3 → h/4 → h/2 → h        (Dense → BatchNorm → GELU) × 3
//! block j       z_j = GELU(BN(Dense(GELU(BN(Dense(z_{j-1}))))) + z_{j-1})
//! skip i → i+s  z_{i+s} ← z_{i+s} + A_i z_i     for i = 1, 1+s, 1+2s, … with i+s ≤ L
//! head          h → h/2 → h/4 (Dense → BatchNorm → GELU) × 2, then Dense h/4 → 1
//! ```
//!
//! Parameter (and checkpoint) order: input units `[W, b, γ, β]`, blocks
//! `[W₁, b₁, γ₁, β₁, W₂, b₂, γ₂, β₂]`, skip matrices by source block, head units
//! `[W, b, γ, β]`, output `[W, b]`. Running statistics follow in batch-norm order
//! as `[mean, var]` pairs.

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{gelu, gelu_grad, kaiming, vec_mat_acc, BatchNorm, BnBatchStats, BnCache, Dense};
use super::NetError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MlpConfig {
    pub width: usize,
    pub n_blocks: usize,
    /// Distance between a skip's source and target block; 0 disables the skips.
    pub skip_stride: usize,
    pub seed: u64,
}

impl MlpConfig {
    /// Width 128 with 4 blocks.
    pub fn desk(seed: u64) -> Self {
        Self { width: 128, n_blocks: 4, skip_stride: 2, seed }
    }

    /// Width 2048 with 6 blocks; skips from blocks 1 and 3.
    pub fn paper(seed: u64) -> Self {
        Self { width: 2048, n_blocks: 6, skip_stride: 2, seed }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if self.width < 4 || self.width % 4 != 0 {
            return Err(NetError::Config(format!("width {} must be a positive multiple of 4", self.width)));
        }
        if self.n_blocks == 0 {
            return Err(NetError::Config("at least one residual block is required".into()));
        }
        Ok(())
    }

    /// 1-based source blocks of the non-adjacent skips.
    pub fn skip_sources(&self) -> Vec<usize> {
        if self.skip_stride == 0 {
            return Vec::new();
        }
        (1..)
            .step_by(self.skip_stride)
            .take_while(|i| i + self.skip_stride <= self.n_blocks)
            .collect()
    }

    /// Trainable parameter count, in closed form.
    pub fn param_count(&self) -> usize {
        let h = self.width;
        let (q, hh) = (h / 4, h / 2);
        let unit = |i: usize, o: usize| i * o + o + 2 * o;
        let input = unit(3, q) + unit(q, hh) + unit(hh, h);
        let blocks = self.n_blocks * (2 * unit(h, h));
        let skips = self.skip_sources().len() * h * h;
        let head = unit(h, hh) + unit(hh, q) + q + 1;
        input + blocks + skips + head
    }

    /// Batch-norm running statistics count (means plus variances).
    pub fn running_count(&self) -> usize {
        let h = self.width;
        let (q, hh) = (h / 4, h / 2);
        2 * (q + hh + h) + self.n_blocks * 4 * h + 2 * (hh + q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in every batch-norm layer.
    Train,
    /// Running statistics; a fixed smooth function of the input.
    Eval,
}

/// Dense → BatchNorm → GELU.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub dense: Dense,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock {
    pub first: Unit,
    pub second: Dense,
    pub second_bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skip {
    /// 1-based source block.
    pub from: usize,
    pub to: usize,
    pub a: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    config: MlpConfig,
    pub input: Vec<Unit>,
    pub blocks: Vec<ResidualBlock>,
    pub skips: Vec<Skip>,
    pub head: Vec<Unit>,
    pub output: Dense,
}

struct UnitTape {
    x: Array2<f64>,
    bn: BnCache,
    pre: Array2<f64>,
}

struct BlockTape {
    z_in: Array2<f64>,
    bn1: BnCache,
    pre1: Array2<f64>,
    h1: Array2<f64>,
    bn2: BnCache,
    pre2: Array2<f64>,
}

/// Activations saved by a training-mode forward pass.
pub(crate) struct Tape {
    input: Vec<UnitTape>,
    blocks: Vec<BlockTape>,
    z: Vec<Array2<f64>>,
    head: Vec<UnitTape>,
    out_in: Array2<f64>,
}

/// Result of one training-mode loss evaluation.
pub struct LossGrad {
    pub loss: f64,
    /// Same shape as the model; running statistics are zero.
    pub grads: MlpModel,
    pub(crate) batch_stats: Vec<BnBatchStats>,
}

impl Unit {
    fn init(rng: &mut ChaCha8Rng, i: usize, o: usize) -> Self {
        Self { dense: Dense::init(rng, i, o), bn: BatchNorm::new(o) }
    }

    fn zeros(i: usize, o: usize) -> Self {
        Self { dense: Dense::zeros(i, o), bn: BatchNorm::zeros(o) }
    }

    fn forward_train(&self, x: Array2<f64>, stats: &mut Vec<BnBatchStats>) -> (Array2<f64>, UnitTape) {
        let (pre, cache, s) = self.bn.forward_train(&self.dense.forward(&x));
        stats.push(s);
        let out = pre.mapv(gelu);
        (out, UnitTape { x, bn: cache, pre })
    }

    fn backward(&self, tape: &UnitTape, dout: &Array2<f64>, g: &mut Unit) -> Array2<f64> {
        let dpre = dout * &tape.pre.mapv(gelu_grad);
        let dlin = self.bn.backward_train(&tape.bn, &dpre, &mut g.bn);
        self.dense.backward(&tape.x, &dlin, &mut g.dense)
    }

    fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        self.bn.forward_eval(&self.dense.forward(x)).mapv(gelu)
    }

    /// Writes the pre-activation into `pre` and the activation into `out`.
    fn forward_vec(&self, x: &[f64], pre: &mut Vec<f64>, out: &mut Vec<f64>) {
        self.dense.forward_vec(x, pre);
        self.bn.forward_eval_vec(pre);
        out.clear();
        out.extend(pre.iter().map(|&v| gelu(v)));
    }

    fn backward_vec(&self, pre: &[f64], dout: &[f64], dx: &mut Vec<f64>) {
        let mut d: Vec<f64> = dout.iter().zip(pre).map(|(g, &p)| g * gelu_grad(p)).collect();
        self.bn.backward_eval_vec(&mut d);
        self.dense.backward_vec(&d, dx);
    }
}

/// Single-sample eval activations kept for the input-gradient sweep.
struct VecTrace {
    input_pre: Vec<Vec<f64>>,
    block_pre1: Vec<Vec<f64>>,
    block_pre2: Vec<Vec<f64>>,
    head_pre: Vec<Vec<f64>>,
}

macro_rules! push_unit {
    ($out:expr, $u:expr, $as:ident) => {{
        let Unit { dense, bn } = $u;
        $out.push(dense.w.$as().expect("standard layout"));
        $out.push(dense.b.$as().expect("standard layout"));
        $out.push(bn.gamma.$as().expect("standard layout"));
        $out.push(bn.beta.$as().expect("standard layout"));
    }};
}

impl MlpModel {
    /// Kaiming-normal weights (ReLU gain), zero biases, batch-norm scale 1 and shift 0.
    pub fn init(config: MlpConfig) -> Result<Self, NetError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let h = config.width;
        let (q, hh) = (h / 4, h / 2);
        let input = vec![Unit::init(&mut rng, 3, q), Unit::init(&mut rng, q, hh), Unit::init(&mut rng, hh, h)];
        let blocks = (0..config.n_blocks)
            .map(|_| ResidualBlock {
                first: Unit::init(&mut rng, h, h),
                second: Dense::init(&mut rng, h, h),
                second_bn: BatchNorm::new(h),
            })
            .collect();
        let skips = config
            .skip_sources()
            .into_iter()
            .map(|from| Skip { from, to: from + config.skip_stride, a: kaiming(&mut rng, h, h) })
            .collect();
        let head = vec![Unit::init(&mut rng, h, hh), Unit::init(&mut rng, hh, q)];
        let output = Dense::init(&mut rng, q, 1);
        Ok(Self { config, input, blocks, skips, head, output })
    }

    /// Same structure with every tensor zero (the gradient container).
    pub fn zeros_like(&self) -> Self {
        let h = self.config.width;
        let (q, hh) = (h / 4, h / 2);
        Self {
            config: self.config,
            input: vec![Unit::zeros(3, q), Unit::zeros(q, hh), Unit::zeros(hh, h)],
            blocks: (0..self.config.n_blocks)
                .map(|_| ResidualBlock {
                    first: Unit::zeros(h, h),
                    second: Dense::zeros(h, h),
                    second_bn: BatchNorm::zeros(h),
                })
                .collect(),
            skips: self
                .skips
                .iter()
                .map(|s| Skip { from: s.from, to: s.to, a: Array2::zeros((h, h)) })
                .collect(),
            head: vec![Unit::zeros(h, hh), Unit::zeros(hh, q)],
            output: Dense::zeros(q, 1),
        }
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn param_tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for u in &self.input {
            push_unit!(out, u, as_slice);
        }
        for b in &self.blocks {
            push_unit!(out, &b.first, as_slice);
            out.push(b.second.w.as_slice().expect("standard layout"));
            out.push(b.second.b.as_slice().expect("standard layout"));
            out.push(b.second_bn.gamma.as_slice().expect("standard layout"));
            out.push(b.second_bn.beta.as_slice().expect("standard layout"));
        }
        for s in &self.skips {
            out.push(s.a.as_slice().expect("standard layout"));
        }
        for u in &self.head {
            push_unit!(out, u, as_slice);
        }
        out.push(self.output.w.as_slice().expect("standard layout"));
        out.push(self.output.b.as_slice().expect("standard layout"));
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        let Self { input, blocks, skips, head, output, .. } = self;
        for u in input.iter_mut() {
            push_unit!(out, u, as_slice_mut);
        }
        for b in blocks.iter_mut() {
            let ResidualBlock { first, second, second_bn } = b;
            push_unit!(out, first, as_slice_mut);
            out.push(second.w.as_slice_mut().expect("standard layout"));
            out.push(second.b.as_slice_mut().expect("standard layout"));
            out.push(second_bn.gamma.as_slice_mut().expect("standard layout"));
            out.push(second_bn.beta.as_slice_mut().expect("standard layout"));
        }
        for s in skips.iter_mut() {
            out.push(s.a.as_slice_mut().expect("standard layout"));
        }
        for u in head.iter_mut() {
            push_unit!(out, u, as_slice_mut);
        }
        out.push(output.w.as_slice_mut().expect("standard layout"));
        out.push(output.b.as_slice_mut().expect("standard layout"));
        out
    }

    fn batch_norms(&self) -> Vec<&BatchNorm> {
        let mut out: Vec<&BatchNorm> = self.input.iter().map(|u| &u.bn).collect();
        for b in &self.blocks {
            out.push(&b.first.bn);
            out.push(&b.second_bn);
        }
        out.extend(self.head.iter().map(|u| &u.bn));
        out
    }

    fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm> {
        let Self { input, blocks, head, .. } = self;
        let mut out: Vec<&mut BatchNorm> = input.iter_mut().map(|u| &mut u.bn).collect();
        for b in blocks.iter_mut() {
            out.push(&mut b.first.bn);
            out.push(&mut b.second_bn);
        }
        out.extend(head.iter_mut().map(|u| &mut u.bn));
        out
    }

    pub fn running_tensors(&self) -> Vec<&[f64]> {
        self.batch_norms()
            .into_iter()
            .flat_map(|bn| {
                [
                    bn.running_mean.as_slice().expect("standard layout"),
                    bn.running_var.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn running_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.batch_norms_mut()
            .into_iter()
            .flat_map(|bn| {
                let BatchNorm { running_mean, running_var, .. } = bn;
                [
                    running_mean.as_slice_mut().expect("standard layout"),
                    running_var.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_tensors().iter().map(|t| t.len()).sum()
    }

    pub fn params_flat(&self) -> Vec<f64> {
        self.param_tensors().concat()
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.param_tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }

    pub(crate) fn apply_batch_stats(&mut self, stats: &[BnBatchStats]) {
        for (bn, s) in self.batch_norms_mut().into_iter().zip(stats) {
            bn.update_running(s);
        }
    }

    fn skip_into(&self, block: usize) -> Option<&Skip> {
        self.skips.iter().find(|s| s.to == block)
    }

    pub(crate) fn forward_train(&self, x: &Array2<f64>) -> (Array1<f64>, Tape, Vec<BnBatchStats>) {
        let mut stats = Vec::new();
        let mut act = x.clone();
        let mut input = Vec::with_capacity(3);
        for u in &self.input {
            let (out, tape) = u.forward_train(act, &mut stats);
            input.push(tape);
            act = out;
        }
        let mut z = vec![act];
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (j, b) in self.blocks.iter().enumerate() {
            let z_in = z[j].clone();
            let (pre1, bn1, s1) = b.first.bn.forward_train(&b.first.dense.forward(&z_in));
            stats.push(s1);
            let h1 = pre1.mapv(gelu);
            let (mut pre2, bn2, s2) = b.second_bn.forward_train(&b.second.forward(&h1));
            stats.push(s2);
            pre2 += &z_in;
            let mut out = pre2.mapv(gelu);
            if let Some(skip) = self.skip_into(j + 1) {
                out += &z[skip.from].dot(&skip.a);
            }
            z.push(out);
            blocks.push(BlockTape { z_in, bn1, pre1, h1, bn2, pre2 });
        }
        let mut act = z[self.blocks.len()].clone();
        let mut head = Vec::with_capacity(2);
        for u in &self.head {
            let (out, tape) = u.forward_train(act, &mut stats);
            head.push(tape);
            act = out;
        }
        let y = self.output.forward(&act).column(0).to_owned();
        (y, Tape { input, blocks, z, head, out_in: act }, stats)
    }

    /// Reverse sweep: fills `g` with parameter gradients, returns `dL/dx`.
    pub(crate) fn backward(&self, tape: &Tape, dy: &Array1<f64>, g: &mut MlpModel) -> Array2<f64> {
        let dy = dy.view().insert_axis(Axis(1)).to_owned();
        let mut d = self.output.backward(&tape.out_in, &dy, &mut g.output);
        for (k, u) in self.head.iter().enumerate().rev() {
            d = u.backward(&tape.head[k], &d, &mut g.head[k]);
        }
        let n = self.blocks.len();
        let mut dz: Vec<Option<Array2<f64>>> = vec![None; n + 1];
        dz[n] = Some(d);
        for j in (1..=n).rev() {
            let dzj = dz[j].take().expect("gradient reaches every block output");
            if let Some(k) = self.skips.iter().position(|s| s.to == j) {
                let skip = &self.skips[k];
                ndarray::linalg::general_mat_mul(1.0, &tape.z[skip.from].t(), &dzj, 1.0, &mut g.skips[k].a);
                accumulate(&mut dz[skip.from], dzj.dot(&skip.a.t()));
            }
            let b = &self.blocks[j - 1];
            let gb = &mut g.blocks[j - 1];
            let t = &tape.blocks[j - 1];
            let dpre2 = &dzj * &t.pre2.mapv(gelu_grad);
            let dlin2 = b.second_bn.backward_train(&t.bn2, &dpre2, &mut gb.second_bn);
            let dh1 = b.second.backward(&t.h1, &dlin2, &mut gb.second);
            let dpre1 = dh1 * &t.pre1.mapv(gelu_grad);
            let dlin1 = b.first.bn.backward_train(&t.bn1, &dpre1, &mut gb.first.bn);
            let dzin = b.first.dense.backward(&t.z_in, &dlin1, &mut gb.first.dense);
            accumulate(&mut dz[j - 1], dzin + &dpre2);
        }
        let mut d = dz[0].take().expect("stack output gradient");
        for (k, u) in self.input.iter().enumerate().rev() {
            d = u.backward(&tape.input[k], &d, &mut g.input[k]);
        }
        d
    }

    /// Mean squared error against `targets` with batch statistics, plus its gradient.
    pub fn loss_and_gradients(&self, inputs: &Array2<f64>, targets: &Array1<f64>) -> LossGrad {
        let (y, tape, batch_stats) = self.forward_train(inputs);
        let n = y.len() as f64;
        let resid = &y - targets;
        let loss = resid.mapv(|r| r * r).sum() / n;
        let dy = resid * (2.0 / n);
        let mut grads = self.zeros_like();
        self.backward(&tape, &dy, &mut grads);
        LossGrad { loss, grads, batch_stats }
    }

    /// Eval-mode predictions for a batch of normalized inputs.
    pub fn predict_batch(&self, inputs: &Array2<f64>) -> Array1<f64> {
        let mut act = inputs.clone();
        for u in &self.input {
            act = u.forward_eval(&act);
        }
        let mut z = vec![act];
        for (j, b) in self.blocks.iter().enumerate() {
            let h1 = b.first.forward_eval(&z[j]);
            let mut pre2 = b.second_bn.forward_eval(&b.second.forward(&h1));
            pre2 += &z[j];
            let mut out = pre2.mapv(gelu);
            if let Some(skip) = self.skip_into(j + 1) {
                out += &z[skip.from].dot(&skip.a);
            }
            z.push(out);
        }
        let mut act = z.pop().expect("at least the stack output");
        for u in &self.head {
            act = u.forward_eval(&act);
        }
        self.output.forward(&act).column(0).to_owned()
    }

    /// Output for one normalized input.
    pub fn forward(&self, input: [f64; 3], mode: Mode) -> f64 {
        match mode {
            Mode::Eval => self.eval_vec(&input, None),
            Mode::Train => {
                let x = Array2::from_shape_vec((1, 3), input.to_vec()).expect("1×3");
                self.forward_train(&x).0[0]
            }
        }
    }

    fn eval_vec(&self, input: &[f64], mut trace: Option<&mut VecTrace>) -> f64 {
        let (mut pre, mut act) = (Vec::new(), input.to_vec());
        let mut next = Vec::new();
        for u in &self.input {
            u.forward_vec(&act, &mut pre, &mut next);
            std::mem::swap(&mut act, &mut next);
            if let Some(t) = trace.as_deref_mut() {
                t.input_pre.push(pre.clone());
            }
        }
        let mut z = vec![act];
        let mut h1 = Vec::new();
        let mut pre2 = Vec::new();
        for (j, b) in self.blocks.iter().enumerate() {
            b.first.forward_vec(&z[j], &mut pre, &mut h1);
            b.second.forward_vec(&h1, &mut pre2);
            b.second_bn.forward_eval_vec(&mut pre2);
            for (p, zi) in pre2.iter_mut().zip(&z[j]) {
                *p += zi;
            }
            let mut out: Vec<f64> = pre2.iter().map(|&v| gelu(v)).collect();
            if let Some(skip) = self.skip_into(j + 1) {
                vec_mat_acc(&z[skip.from], &skip.a, &mut out);
            }
            if let Some(t) = trace.as_deref_mut() {
                t.block_pre1.push(pre.clone());
                t.block_pre2.push(pre2.clone());
            }
            z.push(out);
        }
        let mut act = z.pop().expect("at least the stack output");
        for u in &self.head {
            u.forward_vec(&act, &mut pre, &mut next);
            std::mem::swap(&mut act, &mut next);
            if let Some(t) = trace.as_deref_mut() {
                t.head_pre.push(pre.clone());
            }
        }
        let mut y = Vec::new();
        self.output.forward_vec(&act, &mut y);
        y[0]
    }

    /// Eval-mode output and its gradient with respect to the normalized input.
    pub fn input_gradient(&self, input: [f64; 3]) -> (f64, [f64; 3]) {
        let mut tr = VecTrace { input_pre: Vec::new(), block_pre1: Vec::new(), block_pre2: Vec::new(), head_pre: Vec::new() };
        let y = self.eval_vec(&input, Some(&mut tr));
        let mut d = Vec::new();
        self.output.backward_vec(&[1.0], &mut d);
        let mut next = Vec::new();
        for (k, u) in self.head.iter().enumerate().rev() {
            u.backward_vec(&tr.head_pre[k], &d, &mut next);
            std::mem::swap(&mut d, &mut next);
        }
        let n = self.blocks.len();
        let h = self.config.width;
        let mut dz: Vec<Vec<f64>> = vec![vec![0.0; h]; n + 1];
        dz[n] = d;
        for j in (1..=n).rev() {
            let dzj = std::mem::take(&mut dz[j]);
            if let Some(skip) = self.skip_into(j) {
                let a = skip.a.as_slice().expect("standard layout");
                for (acc, row) in dz[skip.from].iter_mut().zip(a.chunks_exact(h)) {
                    *acc += super::layers::dot(row, &dzj);
                }
            }
            let b = &self.blocks[j - 1];
            let mut dpre2: Vec<f64> = dzj.iter().zip(&tr.block_pre2[j - 1]).map(|(g, &p)| g * gelu_grad(p)).collect();
            let skip_part = dpre2.clone();
            b.second_bn.backward_eval_vec(&mut dpre2);
            let mut dh1 = Vec::new();
            b.second.backward_vec(&dpre2, &mut dh1);
            let mut dzin = Vec::new();
            b.first.backward_vec(&tr.block_pre1[j - 1], &dh1, &mut dzin);
            for ((acc, a), s) in dz[j - 1].iter_mut().zip(&dzin).zip(&skip_part) {
                *acc += a + s;
            }
        }
        let mut d = std::mem::take(&mut dz[0]);
        for (k, u) in self.input.iter().enumerate().rev() {
            u.backward_vec(&tr.input_pre[k], &d, &mut next);
            std::mem::swap(&mut d, &mut next);
        }
        (y, [d[0], d[1], d[2]])
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, value: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &value,
        None => *slot = Some(value),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn cfg(width: usize, n_blocks: usize) -> MlpConfig {
        MlpConfig { width, n_blocks, skip_stride: 2, seed: 9 }
    }

    #[test]
    fn skip_schedule() {
        assert_eq!(MlpConfig::paper(0).skip_sources(), vec![1, 3]);
        assert_eq!(MlpConfig::desk(0).skip_sources(), vec![1]);
        assert_eq!(cfg(8, 2).skip_sources(), Vec::<usize>::new());
        assert_eq!(MlpConfig { skip_stride: 0, ..MlpConfig::paper(0) }.skip_sources(), Vec::<usize>::new());
        assert_eq!(MlpConfig { skip_stride: 1, ..MlpConfig::desk(0) }.skip_sources(), vec![1, 2, 3]);
    }

    #[test]
    fn config_validation() {
        assert!(MlpModel::init(cfg(6, 2)).is_err());
        assert!(MlpModel::init(cfg(8, 0)).is_err());
    }

    #[test]
    fn parameter_count_hand_check() {
        // input 8+4+12+8+40+16, blocks 2·176, head 36+8+10+4+3
        assert_eq!(cfg(8, 2).param_count(), 501);
        for c in [cfg(8, 2), cfg(8, 3), cfg(12, 5), MlpConfig::desk(1)] {
            let m = MlpModel::init(c).unwrap();
            assert_eq!(m.param_count(), c.param_count());
            let running: usize = m.running_tensors().iter().map(|t| t.len()).sum();
            assert_eq!(running, c.running_count());
        }
    }

    #[test]
    fn init_is_seeded_and_norms_are_identity() {
        let a = MlpModel::init(cfg(16, 3)).unwrap();
        assert_eq!(a, MlpModel::init(cfg(16, 3)).unwrap());
        assert_ne!(a.params_flat(), MlpModel::init(MlpConfig { seed: 10, ..cfg(16, 3) }).unwrap().params_flat());
        for bn in a.batch_norms() {
            assert!(bn.gamma.iter().all(|&v| v == 1.0));
            assert!(bn.beta.iter().all(|&v| v == 0.0));
        }
    }

    fn random_batch(n: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_simple_fn((n, 3), || rng.random_range(-1.5..1.5));
        let t = Array1::from_shape_simple_fn(n, || rng.random_range(-1.0..1.0));
        (x, t)
    }

    fn check_gradients(c: MlpConfig) {
        let m = MlpModel::init(c).unwrap();
        let (x, t) = random_batch(6, c.seed + 100);
        let analytic = m.loss_and_gradients(&x, &t).grads.params_flat();
        let base = m.params_flat();
        let h = 1e-5;
        let mut probe = m.clone();
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] = base[i] + h;
            probe.set_params_flat(&p);
            let up = probe.loss_and_gradients(&x, &t).loss;
            p[i] = base[i] - h;
            probe.set_params_flat(&p);
            let down = probe.loss_and_gradients(&x, &t).loss;
            let fd = (up - down) / (2.0 * h);
            let a = analytic[i];
            let tol = (1e-4 * a.abs().max(fd.abs())).max(1e-6);
            assert!((a - fd).abs() <= tol, "param {i}: analytic {a} vs fd {fd}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        check_gradients(cfg(8, 2));
    }

    #[test]
    fn skip_gradients_match_finite_differences() {
        let c = MlpConfig { width: 8, n_blocks: 3, skip_stride: 1, seed: 4 };
        assert_eq!(c.skip_sources(), vec![1, 2]);
        check_gradients(c);
    }

    #[test]
    fn loss_is_mean_and_vanishes_at_perfect_fit() {
        let m = MlpModel::init(cfg(8, 2)).unwrap();
        let (x, t) = random_batch(4, 1);
        let single = m.loss_and_gradients(&x, &t).loss;
        let x2 = ndarray::concatenate(Axis(0), &[x.view(), x.view()]).unwrap();
        let t2 = ndarray::concatenate(Axis(0), &[t.view(), t.view()]).unwrap();
        assert_abs_diff_eq!(m.loss_and_gradients(&x2, &t2).loss, single, epsilon = 1e-12);

        let (y, _, _) = m.forward_train(&x);
        let lg = m.loss_and_gradients(&x, &y);
        assert_eq!(lg.loss, 0.0);
        assert!(lg.grads.params_flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn train_mode_uses_batch_statistics() {
        let m = MlpModel::init(cfg(8, 2)).unwrap();
        let (x, _) = random_batch(5, 2);
        let (train_out, _, stats) = m.forward_train(&x);
        assert_eq!(stats.len(), 3 + 2 * 2 + 2);
        // Fresh running stats (mean 0, var 1) differ from the batch statistics.
        let eval_out = m.predict_batch(&x);
        assert!((0..5).any(|i| (train_out[i] - eval_out[i]).abs() > 1e-6));
        let mut updated = m.clone();
        updated.apply_batch_stats(&stats);
        assert_ne!(updated.running_tensors(), m.running_tensors());
        assert_eq!(updated.params_flat(), m.params_flat());
    }

    #[test]
    fn zero_head_gives_zero_output() {
        let mut m = MlpModel::init(cfg(8, 2)).unwrap();
        m.output.w.fill(0.0);
        m.output.b.fill(0.0);
        for x in [[0.0, 0.0, 0.0], [1.0, -2.0, 3.0]] {
            assert_eq!(m.forward(x, Mode::Eval), 0.0);
        }
    }

    #[test]
    fn eval_is_batch_invariant_and_deterministic() {
        let m = MlpModel::init(cfg(16, 3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_simple_fn((7, 3), || rng.random_range(-2.0..2.0));
        let batch = m.predict_batch(&x);
        for i in 0..7 {
            let single = [x[[i, 0]], x[[i, 1]], x[[i, 2]]];
            let a = m.forward(single, Mode::Eval);
            assert_eq!(a.to_bits(), m.forward(single, Mode::Eval).to_bits());
            assert_abs_diff_eq!(a, batch[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let mut m = MlpModel::init(MlpConfig { width: 4, n_blocks: 1, skip_stride: 0, seed: 0 }).unwrap();
        let (_, g) = m.input_gradient([0.3, -0.2, 0.1]);
        let h = 1e-6;
        for k in 0..3 {
            let mut xp = [0.3, -0.2, 0.1];
            let mut xm = xp;
            xp[k] += h;
            xm[k] -= h;
            let fd = (m.forward(xp, Mode::Eval) - m.forward(xm, Mode::Eval)) / (2.0 * h);
            assert_abs_diff_eq!(g[k], fd, epsilon = 1e-7);
        }
        // Constant model: zero output weights.
        m.output.w.fill(0.0);
        assert_eq!(m.input_gradient([1.0, 2.0, 3.0]).1, [0.0; 3]);
    }
}
