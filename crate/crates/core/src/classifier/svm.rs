use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{check_dim, check_problem, ScoreKind, ScoreVector, TrainConfig};
use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// One binary linear SVM, `f(x) = w·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMember {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearMember {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b
    }

    /// `λ/2·‖w‖² + mean(max(0, 1 − y·f(x)))` over the batch, with its
    /// sub-gradient `(∂w, ∂b)`. Targets `y` are ±1.
    pub fn hinge_loss_and_subgradient(
        &self,
        batch: &[(&[f64], f64)],
        lambda: f64,
    ) -> (f64, Vec<f64>, f64) {
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.5 * lambda * self.w.iter().map(|w| w * w).sum::<f64>();
        let mut gw: Vec<f64> = self.w.iter().map(|w| lambda * w).collect();
        let mut gb = 0.0;
        for &(x, y) in batch {
            let margin = y * self.decision(x);
            if margin < 1.0 {
                loss += (1.0 - margin) * scale;
                for (g, &xi) in gw.iter_mut().zip(x) {
                    *g -= y * xi * scale;
                }
                gb -= y * scale;
            }
        }
        (loss, gw, gb)
    }
}

/// One-vs-rest ensemble: member `k` separates class `k` from all others.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmEnsemble {
    dim: usize,
    members: Vec<LinearMember>,
}

impl SvmEnsemble {
    pub fn from_members(members: Vec<LinearMember>) -> Result<Self> {
        let dim = members
            .first()
            .map(|m| m.w.len())
            .ok_or_else(|| Error::Shape("SVM ensemble needs at least one member".into()))?;
        if dim == 0 || members.iter().any(|m| m.w.len() != dim) {
            return Err(Error::Shape("SVM members must share a positive dim".into()));
        }
        if members
            .iter()
            .any(|m| !m.b.is_finite() || m.w.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::InvalidProblem("non-finite SVM parameter".into()));
        }
        Ok(Self { dim, members })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[LinearMember] {
        &self.members
    }

    /// Raw decision values, one per class.
    pub fn predict_scores(&self, x: &[f64]) -> Result<ScoreVector> {
        check_dim(self.dim, x.len())?;
        Ok(ScoreVector {
            scores: self.members.iter().map(|m| m.decision(x)).collect(),
            kind: ScoreKind::SvmDecision,
        })
    }
}

/// Trains `classes` one-vs-rest linear SVMs by mini-batch sub-gradient descent
/// with step `η₀ / (1 + η₀·λ·t)`, for `cfg.epochs` shuffled passes.
pub fn train_svm_ensemble(
    features: &[FeatureVector],
    labels: &[usize],
    classes: usize,
    cfg: &TrainConfig,
) -> Result<SvmEnsemble> {
    cfg.validate()?;
    let dim = check_problem(features, labels, classes)?;
    if labels.iter().all(|&l| l == labels[0]) {
        return Err(Error::InvalidProblem(
            "all training labels belong to one class".into(),
        ));
    }
    let mut members = vec![
        LinearMember {
            w: vec![0.0; dim],
            b: 0.0,
        };
        classes
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..features.len()).collect();
    let mut t = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let step =
                cfg.svm_learning_rate / (1.0 + cfg.svm_learning_rate * cfg.svm_lambda * t as f64);
            t += 1;
            for (k, member) in members.iter_mut().enumerate() {
                let batch: Vec<(&[f64], f64)> = chunk
                    .iter()
                    .map(|&i| {
                        (
                            features[i].values(),
                            if labels[i] == k { 1.0 } else { -1.0 },
                        )
                    })
                    .collect();
                let (_, gw, gb) = member.hinge_loss_and_subgradient(&batch, cfg.svm_lambda);
                for (w, g) in member.w.iter_mut().zip(&gw) {
                    *w -= step * g;
                }
                member.b -= step * gb;
            }
        }
    }
    SvmEnsemble::from_members(members)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_weights_give_biases() {
        let e = SvmEnsemble::from_members(vec![
            LinearMember {
                w: vec![0.0; 3],
                b: 0.5,
            },
            LinearMember {
                w: vec![0.0; 3],
                b: -0.2,
            },
        ])
        .unwrap();
        let s = e.predict_scores(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.scores, vec![0.5, -0.2]);
        assert_eq!(s.kind, ScoreKind::SvmDecision);
        assert!(e.predict_scores(&[1.0]).is_err());
    }

    #[test]
    fn single_class_labels_are_rejected() {
        let f = vec![FeatureVector::new(vec![1.0]).unwrap(); 3];
        assert!(matches!(
            train_svm_ensemble(&f, &[1, 1, 1], 2, &TrainConfig::default()),
            Err(Error::InvalidProblem(_))
        ));
    }

    #[test]
    fn hinge_is_zero_beyond_margin() {
        let m = LinearMember {
            w: vec![2.0],
            b: 0.0,
        };
        let (loss, gw, gb) = m.hinge_loss_and_subgradient(&[(&[1.0][..], 1.0)], 0.0);
        assert_eq!((loss, gw, gb), (0.0, vec![0.0], 0.0));
        let (loss, gw, gb) = m.hinge_loss_and_subgradient(&[(&[1.0][..], -1.0)], 0.0);
        assert_eq!((loss, gw, gb), (3.0, vec![1.0], 1.0));
    }
}
