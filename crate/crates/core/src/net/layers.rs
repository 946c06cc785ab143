//! Dense, batch-norm and GELU primitives with their reverse-mode rules.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub(crate) const BN_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * INV_SQRT_2))
}

#[inline]
pub(crate) fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * INV_SQRT_2));
    cdf + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Kaiming-normal draw with the ReLU gain: `N(0, 2 / fan_in)`.
pub(crate) fn kaiming<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(rng))
}

/// `y = x W + b`, with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    pub(crate) fn init<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Self {
        Self { w: kaiming(rng, fan_in, fan_out), b: Array1::zeros(fan_out) }
    }

    pub(crate) fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { w: Array2::zeros((fan_in, fan_out)), b: Array1::zeros(fan_out) }
    }

    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }

    pub(crate) fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w);
        y += &self.b;
        y
    }

    /// Accumulates parameter gradients into `g` and returns `dL/dx`.
    pub(crate) fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, g: &mut Dense) -> Array2<f64> {
        general_mat_mul(1.0, &x.t(), dy, 1.0, &mut g.w);
        g.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }

    pub(crate) fn forward_vec(&self, x: &[f64], y: &mut Vec<f64>) {
        y.clear();
        y.extend_from_slice(self.b.as_slice().expect("contiguous bias"));
        vec_mat_acc(x, &self.w, y);
    }

    /// `dx = W dy`.
    pub(crate) fn backward_vec(&self, dy: &[f64], dx: &mut Vec<f64>) {
        dx.clear();
        let w = self.w.as_slice().expect("contiguous weights");
        let n_out = self.fan_out();
        dx.extend(w.chunks_exact(n_out).map(|row| dot(row, dy)));
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += x W` for a row-major `W`.
pub(crate) fn vec_mat_acc(x: &[f64], w: &Array2<f64>, y: &mut [f64]) {
    let n_out = w.ncols();
    let w = w.as_slice().expect("contiguous weights");
    for (xi, row) in x.iter().zip(w.chunks_exact(n_out)) {
        for (yo, wo) in y.iter_mut().zip(row) {
            *yo += xi * wo;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

/// Saved normalized activations for the training-mode backward pass.
#[derive(Debug, Clone)]
pub(crate) struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Per-channel batch statistics observed in one training forward pass.
#[derive(Debug, Clone)]
pub(crate) struct BnBatchStats {
    pub mean: Array1<f64>,
    pub var: Array1<f64>,
    pub count: usize,
}

impl BatchNorm {
    pub(crate) fn new(channels: usize) -> Self {
        Self {
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
        }
    }

    pub(crate) fn zeros(channels: usize) -> Self {
        Self {
            gamma: Array1::zeros(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::zeros(channels),
        }
    }

    pub(crate) fn forward_train(&self, x: &Array2<f64>) -> (Array2<f64>, BnCache, BnBatchStats) {
        let n = x.nrows() as f64;
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = x - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let xhat = centered * &inv_std;
        let y = &xhat * &self.gamma + &self.beta;
        let stats = BnBatchStats { mean, var, count: x.nrows() };
        (y, BnCache { xhat, inv_std }, stats)
    }

    pub(crate) fn backward_train(&self, cache: &BnCache, dy: &Array2<f64>, g: &mut BatchNorm) -> Array2<f64> {
        let n = dy.nrows() as f64;
        g.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        g.beta += &dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let mut dx = dxhat * n - &sum_dxhat - &cache.xhat * &sum_dxhat_xhat;
        dx *= &(&cache.inv_std / n);
        dx
    }

    /// Folds observed batch statistics into the running estimates (unbiased variance).
    pub(crate) fn update_running(&mut self, stats: &BnBatchStats) {
        let n = stats.count as f64;
        let unbias = if stats.count > 1 { n / (n - 1.0) } else { 1.0 };
        self.running_mean *= 1.0 - BN_MOMENTUM;
        self.running_mean.scaled_add(BN_MOMENTUM, &stats.mean);
        self.running_var *= 1.0 - BN_MOMENTUM;
        self.running_var.scaled_add(BN_MOMENTUM * unbias, &stats.var);
    }

    fn eval_scale(&self) -> Array1<f64> {
        &self.gamma / &self.running_var.mapv(|v| (v + BN_EPS).sqrt())
    }

    pub(crate) fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let scale = self.eval_scale();
        (x - &self.running_mean) * &scale + &self.beta
    }

    pub(crate) fn forward_eval_vec(&self, x: &mut [f64]) {
        for (k, v) in x.iter_mut().enumerate() {
            let scale = self.gamma[k] / (self.running_var[k] + BN_EPS).sqrt();
            *v = (*v - self.running_mean[k]) * scale + self.beta[k];
        }
    }

    pub(crate) fn backward_eval_vec(&self, dy: &mut [f64]) {
        for (k, v) in dy.iter_mut().enumerate() {
            *v *= self.gamma[k] / (self.running_var[k] + BN_EPS).sqrt();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gelu_matches_finite_difference() {
        for &x in &[-3.0, -1.0, -0.2, 0.0, 0.4, 1.7, 5.0] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(gelu_grad(x), fd, epsilon = 1e-8);
        }
        assert_eq!(gelu(0.0), 0.0);
        assert_abs_diff_eq!(gelu(1.0), 0.841344746068543, epsilon = 1e-12);
    }

    #[test]
    fn vector_and_batch_dense_agree() {
        let mut rng = rand::rng();
        let d = Dense::init(&mut rng, 5, 3);
        let x = Array2::from_shape_fn((1, 5), |(_, j)| j as f64 * 0.3 - 0.5);
        let batch = d.forward(&x);
        let mut y = Vec::new();
        d.forward_vec(x.as_slice().unwrap(), &mut y);
        for k in 0..3 {
            assert_abs_diff_eq!(batch[[0, k]], y[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn train_bn_output_is_standardized() {
        let bn = BatchNorm::new(2);
        let x = Array2::from_shape_vec((4, 2), vec![1.0, 10.0, 2.0, 20.0, 3.0, 30.0, 4.0, 40.0]).unwrap();
        let (y, _, stats) = bn.forward_train(&x);
        for k in 0..2 {
            let col = y.column(k);
            assert_abs_diff_eq!(col.sum(), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(col.mapv(|v| v * v).sum() / 4.0, stats.var[k] / (stats.var[k] + BN_EPS), epsilon = 1e-12);
        }
    }
}
