use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_dim, check_problem, ScoreKind, ScoreVector, TrainConfig};
use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// Single affine layer `dim → n` followed by softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHead {
    dim: usize,
    classes: usize,
    /// `dim × classes`, row-major: `weights[i * classes + k]`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Gradient of the mean cross-entropy with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SoftmaxHead {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        Self {
            dim,
            classes,
            weights: vec![0.0; dim * classes],
            bias: vec![0.0; classes],
        }
    }

    pub fn from_parts(
        dim: usize,
        classes: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if dim == 0 || classes == 0 {
            return Err(Error::Shape(
                "softmax head needs positive dim and classes".into(),
            ));
        }
        if weights.len() != dim * classes || bias.len() != classes {
            return Err(Error::Shape(format!(
                "softmax head {dim}x{classes} needs {} weights and {classes} biases, got {} and {}",
                dim * classes,
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("non-finite softmax parameter".into()));
        }
        Ok(Self {
            dim,
            classes,
            weights,
            bias,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (i, &xi) in x.iter().enumerate() {
            let row = &self.weights[i * self.classes..(i + 1) * self.classes];
            for (zk, &w) in z.iter_mut().zip(row) {
                *zk += xi * w;
            }
        }
        z
    }

    pub fn predict_scores(&self, x: &[f64]) -> Result<ScoreVector> {
        check_dim(self.dim, x.len())?;
        Ok(ScoreVector {
            scores: softmax(&self.logits(x)),
            kind: ScoreKind::Softmax,
        })
    }

    /// Mean categorical cross-entropy over `batch` and its gradient.
    pub fn loss_and_gradient(&self, batch: &[(&[f64], usize)]) -> (f64, SoftmaxGradient) {
        let mut grad = SoftmaxGradient {
            weights: vec![0.0; self.weights.len()],
            bias: vec![0.0; self.classes],
        };
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &(x, label) in batch {
            let z = self.logits(x);
            let p = softmax(&z);
            loss -= log_softmax_at(&z, label) * scale;
            for (k, &pk) in p.iter().enumerate() {
                let delta = (pk - if k == label { 1.0 } else { 0.0 }) * scale;
                grad.bias[k] += delta;
                for (i, &xi) in x.iter().enumerate() {
                    grad.weights[i * self.classes + k] += xi * delta;
                }
            }
        }
        (loss, grad)
    }
}

pub(crate) fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

fn log_softmax_at(z: &[f64], k: usize) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z[k] - lse
}

/// Adam state for one flat parameter vector.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], t: i32, cfg: &TrainConfig) {
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        }
    }
}

/// Trains a zero-initialized head for `cfg.epochs` shuffled mini-batch passes
/// with Adam. Deterministic for a given seed.
pub fn train_softmax_head(
    features: &[FeatureVector],
    labels: &[usize],
    classes: usize,
    cfg: &TrainConfig,
) -> Result<SoftmaxHead> {
    cfg.validate()?;
    let dim = check_problem(features, labels, classes)?;
    let mut head = SoftmaxHead::zeros(dim, classes);
    let mut adam_w = Adam::new(head.weights.len());
    let mut adam_b = Adam::new(classes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut t = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[f64], usize)> = chunk
                .iter()
                .map(|&i| (features[i].values(), labels[i]))
                .collect();
            let (_, grad) = head.loss_and_gradient(&batch);
            t += 1;
            adam_w.step(&mut head.weights, &grad.weights, t, cfg);
            adam_b.step(&mut head.bias, &grad.bias, t, cfg);
        }
        if head
            .weights
            .iter()
            .chain(&head.bias)
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidProblem(
                "training diverged to non-finite parameters".into(),
            ));
        }
    }
    Ok(head)
}
