//! Shared trunk: optional tanh hidden layer followed by linear outputs,
//! trained by full-batch gradient descent.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    Hidden(usize),
}

impl Architecture {
    pub fn hidden_width(&self) -> Option<usize> {
        match self {
            Architecture::Linear => None,
            Architecture::Hidden(h) => Some(*h),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub max_epochs: usize,
    /// Stop once an accepted step changes the loss by less than this fraction.
    pub tolerance: f64,
    /// Width of the ordinal target kernel, see [`Objective::Softmax`].
    #[serde(default)]
    pub label_smoothing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 0.5, l2: 1e-3, max_epochs: 400, tolerance: 1e-6, label_smoothing: 0.0 }
    }
}

/// Per-feature affine standardization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows[0].len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let scale = var.into_iter().map(|v| if v.sqrt() > 1e-12 { v.sqrt() } else { 1.0 }).collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| v * s + m).collect()
    }

    pub fn matrix(&self, rows: &[Vec<f64>]) -> DMatrix<f64> {
        let d = self.mean.len();
        DMatrix::from_fn(rows.len(), d, |i, j| (rows[i][j] - self.mean[j]) / self.scale[j])
    }
}

/// What the outputs are trained against.
pub enum Objective<'a> {
    /// Softmax cross-entropy per head; `targets[n][h]` is the class of sample `n` in head `h`.
    /// With `smoothing > 0` the target is a Gaussian over neighbouring classes
    /// with that standard deviation (in classes) instead of a one-hot vector.
    Softmax { heads: &'a [Range<usize>], targets: &'a [Vec<usize>], smoothing: f64 },
    /// Half squared error against an `N x outputs` matrix.
    Squared { targets: &'a DMatrix<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub w1: Option<DMatrix<f64>>,
    pub b1: Option<DVector<f64>>,
    pub w2: DMatrix<f64>,
    pub b2: DVector<f64>,
}

impl Network {
    /// Hidden weights drawn from `N(0, 1/inputs)`; output weights and all
    /// biases start at zero.
    pub fn init(inputs: usize, outputs: usize, arch: Architecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match arch.hidden_width() {
            None => Network { w1: None, b1: None, w2: DMatrix::zeros(outputs, inputs), b2: DVector::zeros(outputs) },
            Some(h) => {
                let normal = Normal::new(0.0, 1.0 / (inputs as f64).sqrt()).expect("valid std");
                let w1 = DMatrix::from_fn(h, inputs, |_, _| normal.sample(&mut rng));
                Network { w1: Some(w1), b1: Some(DVector::zeros(h)), w2: DMatrix::zeros(outputs, h), b2: DVector::zeros(outputs) }
            }
        }
    }

    fn hidden(&self, x: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let (w1, b1) = (self.w1.as_ref()?, self.b1.as_ref()?);
        let mut a = x * w1.transpose();
        for mut row in a.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(b1.iter()) {
                *v = (*v + b).tanh();
            }
        }
        Some(a)
    }

    /// Raw outputs for a batch of standardized rows.
    pub fn forward(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let h = self.hidden(x);
        let input = h.as_ref().unwrap_or(x);
        let mut z = input * self.w2.transpose();
        for mut row in z.row_iter_mut() {
            row += self.b2.transpose();
        }
        z
    }

    fn zeros_like(&self) -> Self {
        Network {
            w1: self.w1.as_ref().map(|m| DMatrix::zeros(m.nrows(), m.ncols())),
            b1: self.b1.as_ref().map(|v| DVector::zeros(v.len())),
            w2: DMatrix::zeros(self.w2.nrows(), self.w2.ncols()),
            b2: DVector::zeros(self.b2.len()),
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &Network) {
        if let (Some(w), Some(o)) = (self.w1.as_mut(), other.w1.as_ref()) {
            *w += o * a;
        }
        if let (Some(b), Some(o)) = (self.b1.as_mut(), other.b1.as_ref()) {
            *b += o * a;
        }
        self.w2 += &other.w2 * a;
        self.b2 += &other.b2 * a;
    }

    /// Every parameter in a fixed order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::new();
        if let (Some(w), Some(b)) = (&self.w1, &self.b1) {
            v.extend(w.iter());
            v.extend(b.iter());
        }
        v.extend(self.w2.iter());
        v.extend(self.b2.iter());
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut it = flat.iter().copied();
        if let (Some(w), Some(b)) = (self.w1.as_mut(), self.b1.as_mut()) {
            w.iter_mut().for_each(|x| *x = it.next().unwrap());
            b.iter_mut().for_each(|x| *x = it.next().unwrap());
        }
        self.w2.iter_mut().for_each(|x| *x = it.next().unwrap());
        self.b2.iter_mut().for_each(|x| *x = it.next().unwrap());
    }

    fn weight_norm_sq(&self) -> f64 {
        self.w1.as_ref().map_or(0.0, |w| w.norm_squared()) + self.w2.norm_squared()
    }

    /// Mean loss over the batch plus `l2/2` times the squared weight norm
    /// (biases are not penalized), with its gradient.
    pub fn loss_and_gradient(&self, x: &DMatrix<f64>, objective: &Objective, l2: f64) -> (f64, Network) {
        let n = x.nrows() as f64;
        let h = self.hidden(x);
        let input = h.as_ref().unwrap_or(x);
        let mut z = input * self.w2.transpose();
        for mut row in z.row_iter_mut() {
            row += self.b2.transpose();
        }
        // dz holds dLoss/dz.
        let (data_loss, dz) = match objective {
            Objective::Softmax { heads, targets, smoothing } => {
                let mut loss = 0.0;
                let mut dz = z.clone();
                let mut target = Vec::new();
                for (i, t) in targets.iter().enumerate() {
                    for (head, &cls) in heads.iter().zip(t) {
                        soft_target(head.len(), cls, *smoothing, &mut target);
                        let row = z.row(i);
                        let seg = &row.columns_range(head.clone());
                        let max = seg.max();
                        let sum: f64 = seg.iter().map(|v| (v - max).exp()).sum();
                        let lse = max + sum.ln();
                        for (k, j) in head.clone().enumerate() {
                            loss -= target[k] * (z[(i, j)] - lse);
                            dz[(i, j)] = ((z[(i, j)] - lse).exp() - target[k]) / n;
                        }
                    }
                }
                (loss / n, dz)
            }
            Objective::Squared { targets } => {
                let diff = &z - *targets;
                (0.5 * diff.norm_squared() / n, diff / n)
            }
        };
        let loss = data_loss + 0.5 * l2 * self.weight_norm_sq();

        let mut g = self.zeros_like();
        g.w2 = dz.transpose() * input + &self.w2 * l2;
        g.b2 = dz.row_sum().transpose();
        if let (Some(h), Some(w1)) = (h.as_ref(), self.w1.as_ref()) {
            let mut da = &dz * &self.w2;
            da.zip_apply(h, |d, a| *d *= 1.0 - a * a);
            g.w1 = Some(da.transpose() * x + w1 * l2);
            g.b1 = Some(da.row_sum().transpose());
        }
        (loss, g)
    }
}

/// Target distribution over `k` classes centred on `cls`.
fn soft_target(k: usize, cls: usize, width: f64, out: &mut Vec<f64>) {
    out.clear();
    if width <= 0.0 {
        out.extend((0..k).map(|j| if j == cls { 1.0 } else { 0.0 }));
        return;
    }
    out.extend((0..k).map(|j| {
        let d = (j as f64 - cls as f64) / width;
        (-0.5 * d * d).exp()
    }));
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
}

/// Loss trace of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub epochs: usize,
    pub rejected_steps: usize,
    pub final_learning_rate: f64,
}

/// Gradient descent with a fixed step that halves whenever a step would
/// increase the loss; rejected steps are not applied, so the accepted
/// losses never increase.
pub fn train(net: &mut Network, x: &DMatrix<f64>, objective: &Objective, config: &TrainConfig) -> Result<TrainReport> {
    if !(config.learning_rate > 0.0) || config.l2 < 0.0 {
        return Err(Error::invalid("learning rate must be positive and l2 non-negative"));
    }
    let (mut loss, mut grad) = net.loss_and_gradient(x, objective, config.l2);
    let mut lr = config.learning_rate;
    let mut report = TrainReport { losses: vec![loss], epochs: 0, rejected_steps: 0, final_learning_rate: lr };
    for _ in 0..config.max_epochs {
        report.epochs += 1;
        let mut trial = net.clone();
        trial.axpy(-lr, &grad);
        let (trial_loss, trial_grad) = trial.loss_and_gradient(x, objective, config.l2);
        if !(trial_loss <= loss) {
            report.rejected_steps += 1;
            lr *= 0.5;
            if lr < 1e-12 {
                break;
            }
            continue;
        }
        let rel = (loss - trial_loss) / loss.abs().max(f64::MIN_POSITIVE);
        *net = trial;
        loss = trial_loss;
        grad = trial_grad;
        report.losses.push(loss);
        if rel < config.tolerance {
            break;
        }
    }
    report.final_learning_rate = lr;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_instance(seed: u64, arch: Architecture) -> (Network, DMatrix<f64>, Vec<Range<usize>>, Vec<Vec<usize>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, f) = (6, 4);
        let heads = vec![0..3, 3..5];
        let mut net = Network::init(f, 5, arch, seed);
        let flat: Vec<f64> = (0..net.to_flat().len()).map(|_| rng.random_range(-0.8..0.8)).collect();
        net.set_flat(&flat);
        let x = DMatrix::from_fn(n, f, |_, _| rng.random_range(-1.5..1.5));
        let targets = (0..n).map(|_| vec![rng.random_range(0..3), rng.random_range(0..2)]).collect();
        (net, x, heads, targets)
    }

    fn finite_difference(net: &Network, x: &DMatrix<f64>, obj: &Objective, l2: f64) -> Vec<f64> {
        let base = net.to_flat();
        let h = 1e-6;
        (0..base.len())
            .map(|i| {
                let mut p = net.clone();
                let mut v = base.clone();
                v[i] += h;
                p.set_flat(&v);
                let up = p.loss_and_gradient(x, obj, l2).0;
                v[i] -= 2.0 * h;
                p.set_flat(&v);
                let down = p.loss_and_gradient(x, obj, l2).0;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn relative_error(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
        num / den.max(1e-12)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn softmax_gradient_matches_finite_differences(seed in 0u64..10_000, hidden in proptest::bool::ANY) {
            let arch = if hidden { Architecture::Hidden(3) } else { Architecture::Linear };
            let (net, x, heads, targets) = random_instance(seed, arch);
            let obj = Objective::Softmax { heads: &heads, targets: &targets, smoothing: (seed % 3) as f64 * 0.7 };
            let g = net.loss_and_gradient(&x, &obj, 0.1).1.to_flat();
            prop_assert!(relative_error(&g, &finite_difference(&net, &x, &obj, 0.1)) < 1e-4);
        }

        #[test]
        fn squared_gradient_matches_finite_differences(seed in 0u64..10_000) {
            let (net, x, _, _) = random_instance(seed, Architecture::Hidden(3));
            let y = DMatrix::from_fn(x.nrows(), 5, |i, j| ((i * 5 + j) as f64).sin());
            let obj = Objective::Squared { targets: &y };
            let g = net.loss_and_gradient(&x, &obj, 0.05).1.to_flat();
            prop_assert!(relative_error(&g, &finite_difference(&net, &x, &obj, 0.05)) < 1e-4);
        }
    }

    #[test]
    fn training_loss_never_increases() {
        let (mut net, x, heads, targets) = random_instance(7, Architecture::Hidden(8));
        let obj = Objective::Softmax { heads: &heads, targets: &targets, smoothing: 0.0 };
        let cfg = TrainConfig { learning_rate: 50.0, l2: 1e-3, max_epochs: 300, tolerance: 1e-9, label_smoothing: 0.0 };
        let report = train(&mut net, &x, &obj, &cfg).unwrap();
        assert!(report.rejected_steps > 0, "the large initial step should be halved");
        for w in report.losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
    }

    #[test]
    fn standardizer_round_trips() {
        let rows = vec![vec![1.0, 5.0, 2.0], vec![3.0, 5.0, -2.0], vec![2.0, 5.0, 0.0]];
        let s = Standardizer::fit(&rows);
        assert_eq!(s.scale[1], 1.0);
        for r in &rows {
            let back = s.invert(&s.apply(r));
            assert!(back.iter().zip(r).all(|(a, b)| (a - b).abs() < 1e-12));
        }
    }
}
