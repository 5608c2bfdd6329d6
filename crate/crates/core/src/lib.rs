//! Test-time refinement of image classification with two-state Q-learning.
//!
//! A frozen feature backend turns images into vectors, a secondary classifier
//! (softmax head or one-vs-rest linear SVMs) scores them, and samples tagged as
//! hard go through a short Q-learning episode that picks the image transform
//! (rotation or translation) whose scores are most dispersed. The chosen
//! transform is applied to the original image, which is then re-classified.
//!
//! ```
//! use qrefine::qlearn::{compute_reward, q_update, QTable, RLConfig, Reward, State};
//!
//! let cfg = RLConfig::default();
//! assert_eq!(compute_reward(0.10, 0.25)?, Reward::Better);
//! let table = q_update(&QTable::new(2)?, State::NotImproved, 1, Reward::Better, State::Improved, &cfg)?;
//! assert!((table.get(0, 1)? - 0.4).abs() < 1e-12);
//! # Ok::<(), qrefine::Error>(())
//! ```

pub mod action;
pub mod classifier;
pub mod dataset;
mod error;
pub mod features;
pub mod image;
pub mod pipeline;
pub mod qlearn;

pub use action::{apply_action, ActionBank, ActionSpec};
pub use classifier::{dispersion_metric, Classifier, ClassifierKind, ScoreVector, TrainConfig};
pub use error::{Error, Result};
pub use features::{FeatureBackend, FeatureVector};
pub use image::Image;
pub use pipeline::{FilterMode, HardFilter, Pipeline};
pub use qlearn::{EpisodeTrace, QTable, RLConfig};
