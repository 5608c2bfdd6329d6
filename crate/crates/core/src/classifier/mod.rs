//! Secondary classifiers trained on frozen features, and the dispersion metric
//! computed from their scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;

mod container;
mod metric;
mod softmax;
mod svm;

pub use container::{load_model, save_model, MAGIC, VERSION};
pub use metric::dispersion_metric;
pub use softmax::{train_softmax_head, SoftmaxGradient, SoftmaxHead};
pub use svm::{train_svm_ensemble, LinearMember, SvmEnsemble};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    /// Probabilities in [0, 1] that sum to one.
    Softmax,
    /// Raw one-vs-rest decision values.
    SvmDecision,
}

/// Per-class prediction scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub kind: ScoreKind,
}

impl ScoreVector {
    /// Index of the largest score; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &s) in self.scores.iter().enumerate() {
            if s > self.scores[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierKind {
    Softmax,
    Svm,
}

/// Training hyperparameters shared by both classifier kinds.
///
/// The head uses Adam on categorical cross-entropy; the SVM ensemble uses
/// mini-batch sub-gradient descent on the L2-regularized hinge loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 regularization strength of each SVM member.
    pub svm_lambda: f64,
    /// Initial sub-gradient step of the SVM members.
    pub svm_learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.001,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            svm_lambda: 1e-4,
            svm_learning_rate: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        positive("learning_rate", self.learning_rate)?;
        positive("epsilon", self.epsilon)?;
        positive("svm_learning_rate", self.svm_learning_rate)?;
        if !(self.svm_lambda >= 0.0 && self.svm_lambda.is_finite()) {
            return Err(Error::Config(format!(
                "svm_lambda must be non-negative, got {}",
                self.svm_lambda
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        Ok(())
    }
}

/// A trained secondary classifier.
#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Softmax(SoftmaxHead),
    Svm(SvmEnsemble),
}

impl Classifier {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            Classifier::Softmax(_) => ClassifierKind::Softmax,
            Classifier::Svm(_) => ClassifierKind::Svm,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Classifier::Softmax(h) => h.dim(),
            Classifier::Svm(e) => e.dim(),
        }
    }

    pub fn classes(&self) -> usize {
        match self {
            Classifier::Softmax(h) => h.classes(),
            Classifier::Svm(e) => e.classes(),
        }
    }

    pub fn train(
        kind: ClassifierKind,
        features: &[FeatureVector],
        labels: &[usize],
        classes: usize,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        Ok(match kind {
            ClassifierKind::Softmax => {
                Classifier::Softmax(train_softmax_head(features, labels, classes, cfg)?)
            }
            ClassifierKind::Svm => {
                Classifier::Svm(train_svm_ensemble(features, labels, classes, cfg)?)
            }
        })
    }

    pub fn predict_scores(&self, f: &FeatureVector) -> Result<ScoreVector> {
        match self {
            Classifier::Softmax(h) => h.predict_scores(f.values()),
            Classifier::Svm(e) => e.predict_scores(f.values()),
        }
    }

    pub fn predict_label(&self, f: &FeatureVector) -> Result<usize> {
        Ok(self.predict_scores(f)?.argmax())
    }
}

impl From<SoftmaxHead> for Classifier {
    fn from(h: SoftmaxHead) -> Self {
        Classifier::Softmax(h)
    }
}

impl From<SvmEnsemble> for Classifier {
    fn from(e: SvmEnsemble) -> Self {
        Classifier::Svm(e)
    }
}

pub fn predict_scores(model: &Classifier, f: &FeatureVector) -> Result<ScoreVector> {
    model.predict_scores(f)
}

pub fn predict_label(model: &Classifier, f: &FeatureVector) -> Result<usize> {
    model.predict_label(f)
}

/// Checks shapes shared by both trainers and returns the feature dimension.
fn check_problem(features: &[FeatureVector], labels: &[usize], classes: usize) -> Result<usize> {
    if features.is_empty() {
        return Err(Error::InvalidProblem("no training samples".into()));
    }
    if features.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} feature vectors but {} labels",
            features.len(),
            labels.len()
        )));
    }
    if classes < 2 {
        return Err(Error::InvalidProblem(format!(
            "need at least 2 classes, got {classes}"
        )));
    }
    let dim = features[0].dim();
    if let Some((i, f)) = features.iter().enumerate().find(|(_, f)| f.dim() != dim) {
        return Err(Error::Shape(format!(
            "feature {i} has dim {}, expected {dim}",
            f.dim()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidProblem(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    Ok(dim)
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape(format!(
            "model expects {expected} features, got {got}"
        )))
    }
}
