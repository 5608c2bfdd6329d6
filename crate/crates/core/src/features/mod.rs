//! Image → feature-vector backends.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

#[cfg(feature = "onnx")]
mod onnx;
mod toy;

#[cfg(feature = "onnx")]
pub use onnx::{load_interchange_model, ChannelOrder, Layout, OnnxBackend, Preprocess, Sidecar};
pub use toy::{toy_extractor, ToyExtractor, TOY_GRID};

/// Fixed-length vector of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    /// Fails with a backend error if any value is NaN or infinite.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Backend("feature vector is empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Backend(format!(
                "non-finite feature value {} at index {i}",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Height, width and channel count of a backend's input tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Toy,
    InterchangeModel,
}

/// Whether one backend instance may be shared across threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sharing {
    /// `extract` may be called concurrently on one instance.
    Concurrent,
    /// Callers must build one instance per worker.
    PerWorker,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub source: Option<std::path::PathBuf>,
    /// `None` means any input size is accepted as-is.
    pub expected_input: Option<InputShape>,
    pub deterministic: bool,
    pub sharing: Sharing,
}

/// Anything that maps an image to a feature vector of fixed dimension.
pub trait FeatureBackend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Output dimension; constant for an instance.
    fn dim(&self) -> usize;

    fn extract(&self, img: &Image) -> Result<FeatureVector>;
}

/// Free-function form of [`FeatureBackend::extract`].
pub fn extract(backend: &dyn FeatureBackend, img: &Image) -> Result<FeatureVector> {
    backend.extract(img)
}
