//! Baseline classification, hard-sample routing, Q-learning refinement and
//! re-classification of the chosen transform.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{ActionBank, ActionSpec};
use crate::classifier::{dispersion_metric, Classifier, ScoreVector};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::features::FeatureBackend;
use crate::image::Image;
use crate::qlearn::{run_episode, EpisodeTrace, MetricCaching, RLConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterMode {
    /// Hard iff the baseline prediction is wrong. Needs ground truth, so it is
    /// only usable for evaluation.
    OracleMisclassified,
    /// Hard iff the baseline dispersion is below the threshold.
    DispersionThreshold,
    Always,
    Never,
}

impl std::str::FromStr for FilterMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "oracle-misclassified" => FilterMode::OracleMisclassified,
            "dispersion-threshold" => FilterMode::DispersionThreshold,
            "always" => FilterMode::Always,
            "never" => FilterMode::Never,
            other => return Err(Error::Config(format!("unknown filter mode `{other}`"))),
        })
    }
}

/// Decides which test samples go through refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HardFilter {
    pub mode: FilterMode,
    #[serde(default)]
    pub threshold: f64,
}

impl HardFilter {
    pub fn new(mode: FilterMode) -> Self {
        Self {
            mode,
            threshold: 0.0,
        }
    }

    pub fn threshold(threshold: f64) -> Self {
        Self {
            mode: FilterMode::DispersionThreshold,
            threshold,
        }
    }

    pub fn needs_truth(&self) -> bool {
        self.mode == FilterMode::OracleMisclassified
    }

    fn is_hard(
        &self,
        baseline_label: usize,
        baseline_metric: f64,
        truth: Option<usize>,
    ) -> Result<bool> {
        Ok(match self.mode {
            FilterMode::Never => false,
            FilterMode::Always => true,
            FilterMode::DispersionThreshold => baseline_metric < self.threshold,
            FilterMode::OracleMisclassified => {
                let truth = truth.ok_or_else(|| {
                    Error::Config("oracle-misclassified filter needs a ground-truth label".into())
                })?;
                baseline_label != truth
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub label: usize,
    pub refined: bool,
    pub baseline_label: usize,
    pub applied_action: Option<ActionSpec>,
    pub metric_before: f64,
    pub metric_after: f64,
    /// Present when refined; written separately from reports.
    #[serde(skip)]
    pub trace: Option<EpisodeTrace>,
}

/// Every action evaluated once, with the index of the largest metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BruteForce {
    pub best: usize,
    pub metrics: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub index: usize,
    pub source_path: String,
    pub truth: usize,
    #[serde(flatten)]
    pub result: ClassificationResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refinement_error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationCounts {
    pub total: usize,
    pub hard: usize,
    pub baseline_correct: usize,
    pub refined_correct: usize,
    /// Baseline wrong, refined right.
    pub corrected: usize,
    /// Baseline right, refined wrong.
    pub broken: usize,
    pub refinement_errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub baseline_accuracy: f64,
    pub refined_accuracy: f64,
    pub counts: EvaluationCounts,
    pub samples: Vec<SampleResult>,
}

/// The full hybrid classifier: backend + secondary classifier + refinement.
pub struct Pipeline<'a> {
    backend: &'a dyn FeatureBackend,
    model: &'a Classifier,
    bank: &'a ActionBank,
    filter: HardFilter,
    rl: RLConfig,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        backend: &'a dyn FeatureBackend,
        model: &'a Classifier,
        bank: &'a ActionBank,
        filter: HardFilter,
        rl: RLConfig,
    ) -> Result<Self> {
        if backend.dim() != model.dim() {
            return Err(Error::Shape(format!(
                "backend emits {} features but the classifier expects {}",
                backend.dim(),
                model.dim()
            )));
        }
        if bank.is_empty() {
            return Err(Error::InvalidAction("action bank must not be empty".into()));
        }
        rl.validate()?;
        Ok(Self {
            backend,
            model,
            bank,
            filter,
            rl,
        })
    }

    fn caching(&self) -> MetricCaching {
        if self.backend.descriptor().deterministic {
            MetricCaching::Cached
        } else {
            MetricCaching::Uncached
        }
    }

    /// Scores of the untransformed image.
    pub fn baseline_scores(&self, img: &Image) -> Result<ScoreVector> {
        self.model.predict_scores(&self.backend.extract(img)?)
    }

    /// Dispersion of the classifier scores for `img` transformed by `action`.
    pub fn action_metric(&self, img: &Image, action: &ActionSpec) -> Result<f64> {
        let moved = action.apply(img)?;
        dispersion_metric(&self.model.predict_scores(&self.backend.extract(&moved)?)?)
    }

    /// Classifies one image with the pipeline's own RL seed.
    pub fn classify(&self, img: &Image, truth: Option<usize>) -> Result<ClassificationResult> {
        self.classify_seeded(img, truth, self.rl.seed)
    }

    pub fn classify_seeded(
        &self,
        img: &Image,
        truth: Option<usize>,
        seed: u64,
    ) -> Result<ClassificationResult> {
        let scores = self.baseline_scores(img)?;
        let baseline_label = scores.argmax();
        let metric_before = dispersion_metric(&scores)?;
        if !self.filter.is_hard(baseline_label, metric_before, truth)? {
            return Ok(ClassificationResult {
                label: baseline_label,
                refined: false,
                baseline_label,
                applied_action: None,
                metric_before,
                metric_after: metric_before,
                trace: None,
            });
        }
        self.refine(img, metric_before, seed)
            .map(
                |(label, action, metric_after, trace)| ClassificationResult {
                    label,
                    refined: true,
                    baseline_label,
                    applied_action: Some(action),
                    metric_before,
                    metric_after,
                    trace: Some(trace),
                },
            )
            .map_err(|source| Error::Refinement {
                baseline_label,
                source: Box::new(source),
            })
    }

    fn refine(
        &self,
        img: &Image,
        baseline: f64,
        seed: u64,
    ) -> Result<(usize, ActionSpec, f64, EpisodeTrace)> {
        let cfg = self.rl.with_seed(seed);
        let trace = run_episode(
            self.bank.len(),
            baseline,
            |a| self.action_metric(img, &self.bank.actions[a]),
            &cfg,
            self.caching(),
        )?;
        let action = *self.bank.get(trace.selected_action)?;
        let moved = action.apply(img)?;
        let scores = self.model.predict_scores(&self.backend.extract(&moved)?)?;
        Ok((scores.argmax(), action, dispersion_metric(&scores)?, trace))
    }

    /// Evaluates every action once and returns the largest metric (lowest
    /// index on ties).
    pub fn brute_force_best_action(&self, img: &Image) -> Result<BruteForce> {
        let metrics = self
            .bank
            .actions
            .iter()
            .map(|a| self.action_metric(img, a))
            .collect::<Result<Vec<_>>>()?;
        let mut best = 0;
        for (i, &m) in metrics.iter().enumerate() {
            if m > metrics[best] {
                best = i;
            }
        }
        Ok(BruteForce { best, metrics })
    }

    /// Baseline and refined accuracy over a labelled split. Sample `i` uses RL
    /// seed `rl.seed + i`, so results do not depend on scheduling. Samples run
    /// in parallel on the current rayon pool.
    pub fn evaluate(&self, dataset: &Dataset) -> Result<EvaluationReport> {
        if dataset.is_empty() {
            return Err(Error::InvalidDataset("evaluation split is empty".into()));
        }
        let samples = dataset
            .samples
            .par_iter()
            .enumerate()
            .map(|(index, s)| {
                let seed = self.rl.seed.wrapping_add(index as u64);
                let (result, refinement_error) =
                    match self.classify_seeded(&s.image, Some(s.label), seed) {
                        Ok(r) => (r, None),
                        Err(Error::Refinement {
                            baseline_label,
                            source,
                        }) => {
                            let metric = dispersion_metric(&self.baseline_scores(&s.image)?)?;
                            (
                                ClassificationResult {
                                    label: baseline_label,
                                    refined: false,
                                    baseline_label,
                                    applied_action: None,
                                    metric_before: metric,
                                    metric_after: metric,
                                    trace: None,
                                },
                                Some(source.to_string()),
                            )
                        }
                        Err(e) => return Err(e),
                    };
                Ok(SampleResult {
                    index,
                    source_path: s.source_path.clone(),
                    truth: s.label,
                    result,
                    refinement_error,
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut counts = EvaluationCounts {
            total: samples.len(),
            hard: 0,
            baseline_correct: 0,
            refined_correct: 0,
            corrected: 0,
            broken: 0,
            refinement_errors: 0,
        };
        for s in &samples {
            let base_ok = s.result.baseline_label == s.truth;
            let refined_ok = s.result.label == s.truth;
            counts.hard += (s.result.refined || s.refinement_error.is_some()) as usize;
            counts.baseline_correct += base_ok as usize;
            counts.refined_correct += refined_ok as usize;
            counts.corrected += (!base_ok && refined_ok) as usize;
            counts.broken += (base_ok && !refined_ok) as usize;
            counts.refinement_errors += s.refinement_error.is_some() as usize;
        }
        Ok(EvaluationReport {
            baseline_accuracy: counts.baseline_correct as f64 / counts.total as f64,
            refined_accuracy: counts.refined_correct as f64 / counts.total as f64,
            counts,
            samples,
        })
    }
}
