//! Feature extraction with truncated pretrained networks stored as ONNX.
//!
//! Every model file `name.onnx` may sit next to a TOML sidecar `name.toml`:
//!
//! ```toml
//! backbone = "resnet50"
//! layer = "conv5_block3_out"
//! output_dim = 2048
//! layout = "nhwc"          # or "nchw"; applies to input and output tensors
//! channel_order = "rgb"    # or "bgr"
//!
//! [input]
//! height = 224
//! width = 224
//! channels = 3
//!
//! [preprocess]             # x = (pixel - mean[c]) * scale[c], pixel in 0..=255
//! mean = [0.0, 0.0, 0.0]
//! scale = [1.0, 1.0, 1.0]
//! ```
//!
//! Outputs of rank 4 are globally average-pooled over their spatial axes; any
//! other output is flattened. The feature dimension always comes from the
//! loaded graph.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tract_onnx::prelude::*;

use super::{BackendDescriptor, BackendKind, FeatureBackend, FeatureVector, InputShape, Sharing};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    #[default]
    Nhwc,
    Nchw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelOrder {
    #[default]
    Rgb,
    Bgr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preprocess {
    pub mean: Vec<f32>,
    pub scale: Vec<f32>,
}

/// Metadata written next to each exported model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub backbone: Option<String>,
    pub layer: Option<String>,
    pub output_dim: Option<usize>,
    #[serde(default)]
    pub layout: Layout,
    #[serde(default)]
    pub channel_order: ChannelOrder,
    pub input: InputShape,
    pub preprocess: Option<Preprocess>,
}

impl Sidecar {
    /// `model.onnx` → `model.toml`.
    pub fn path_for(model: &Path) -> PathBuf {
        model.with_extension("toml")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::ModelLoad {
            path: path.to_path_buf(),
            reason: format!("malformed sidecar: {e}"),
        })
    }
}

/// A loaded, optimized ONNX graph plus its preprocessing.
#[derive(Debug, Clone)]
pub struct OnnxBackend {
    descriptor: BackendDescriptor,
    plan: Arc<TypedRunnableModel>,
    input: InputShape,
    layout: Layout,
    channel_order: ChannelOrder,
    mean: Vec<f32>,
    scale: Vec<f32>,
    output_shape: Vec<usize>,
    dim: usize,
    sidecar: Option<Sidecar>,
}

/// Loads `path` and its sidecar, if present. `expected_input` overrides the
/// sidecar's input shape and is required when there is no sidecar.
pub fn load_interchange_model(
    path: impl AsRef<Path>,
    expected_input: Option<InputShape>,
) -> Result<OnnxBackend> {
    OnnxBackend::load(path.as_ref(), expected_input)
}

impl OnnxBackend {
    pub fn load(path: &Path, expected_input: Option<InputShape>) -> Result<Self> {
        let load_err = |reason: String| Error::ModelLoad {
            path: path.to_path_buf(),
            reason,
        };
        if !path.is_file() {
            return Err(load_err("model file does not exist".into()));
        }
        let sidecar_path = Sidecar::path_for(path);
        let sidecar = if sidecar_path.is_file() {
            Some(Sidecar::load(&sidecar_path)?)
        } else {
            None
        };
        let input = match (expected_input, sidecar.as_ref().map(|s| s.input)) {
            (Some(given), Some(recorded)) if given != recorded => {
                return Err(load_err(format!(
                    "requested input {given:?} disagrees with sidecar input {recorded:?}"
                )))
            }
            (Some(given), _) => given,
            (None, Some(recorded)) => recorded,
            (None, None) => {
                return Err(load_err(
                    "no sidecar found and no expected input shape given".into(),
                ))
            }
        };
        if input.height == 0 || input.width == 0 || !matches!(input.channels, 1 | 3) {
            return Err(load_err(format!("unsupported input shape {input:?}")));
        }
        let layout = sidecar.as_ref().map(|s| s.layout).unwrap_or_default();
        let channel_order = sidecar
            .as_ref()
            .map(|s| s.channel_order)
            .unwrap_or_default();
        let (mean, scale) = match sidecar.as_ref().and_then(|s| s.preprocess.clone()) {
            Some(p) => {
                if p.mean.len() != input.channels || p.scale.len() != input.channels {
                    return Err(load_err(format!(
                        "preprocess constants need {} entries each",
                        input.channels
                    )));
                }
                (p.mean, p.scale)
            }
            None => (vec![0.0; input.channels], vec![1.0; input.channels]),
        };

        let model = tract_onnx::onnx()
            .model_for_path(path)
            .map_err(|e| load_err(format!("{e:#}")))?;
        let n_inputs = model
            .input_outlets()
            .map_err(|e| load_err(format!("{e:#}")))?
            .len();
        let n_outputs = model
            .output_outlets()
            .map_err(|e| load_err(format!("{e:#}")))?
            .len();
        if n_inputs != 1 || n_outputs != 1 {
            return Err(load_err(format!(
                "expected one input and one output, found {n_inputs} inputs and {n_outputs} outputs"
            )));
        }
        let shape = input_tensor_shape(input, layout);
        let typed = model
            .with_input_fact(0, f32::fact(shape).into())
            .and_then(|m| m.into_optimized())
            .map_err(|e| load_err(format!("{e:#}")))?;
        let output_shape: Vec<usize> = typed
            .output_fact(0)
            .ok()
            .and_then(|f| f.shape.as_concrete().map(|s| s.to_vec()))
            .ok_or_else(|| load_err("output shape is not fully determined".into()))?;
        let dim = feature_dim(&output_shape, layout)
            .ok_or_else(|| load_err(format!("unsupported output shape {output_shape:?}")))?;
        if let Some(recorded) = sidecar.as_ref().and_then(|s| s.output_dim) {
            if recorded != dim {
                return Err(load_err(format!(
                    "sidecar records output dim {recorded} but the graph produces {dim}"
                )));
            }
        }
        let plan = typed
            .into_runnable()
            .map_err(|e| load_err(format!("{e:#}")))?;

        Ok(Self {
            descriptor: BackendDescriptor {
                kind: BackendKind::InterchangeModel,
                source: Some(path.to_path_buf()),
                expected_input: Some(input),
                deterministic: true,
                sharing: Sharing::Concurrent,
            },
            plan,
            input,
            layout,
            channel_order,
            mean,
            scale,
            output_shape,
            dim,
            sidecar,
        })
    }

    pub fn sidecar(&self) -> Option<&Sidecar> {
        self.sidecar.as_ref()
    }

    /// Raw output shape of the graph, before pooling.
    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    /// Resizes and channel-matches `img` to the model input.
    fn conform(&self, img: &Image) -> Result<Image> {
        let InputShape {
            height,
            width,
            channels,
        } = self.input;
        let mut img = if img.height() != height || img.width() != width {
            let resized = image::imageops::resize(
                &img.to_dynamic(),
                width as u32,
                height as u32,
                image::imageops::FilterType::Triangle,
            );
            let resized = image::DynamicImage::ImageRgba8(resized);
            match img.channels() {
                1 => Image::from_dynamic(image::DynamicImage::ImageLuma8(resized.to_luma8())),
                _ => Image::from_dynamic(image::DynamicImage::ImageRgb8(resized.to_rgb8())),
            }
        } else {
            img.clone()
        };
        if img.channels() != channels {
            if img.channels() == 1 && channels == 3 {
                let gray = img.pixels();
                let rgb = gray.iter().flat_map(|&v| [v, v, v]).collect();
                img = Image::new(height, width, 3, rgb)?;
            } else {
                return Err(Error::InputShape(format!(
                    "model expects {channels} channel(s), image has {}",
                    img.channels()
                )));
            }
        }
        if img.height() != height || img.width() != width {
            return Err(Error::InputShape(format!(
                "expected {height}x{width} after resize, got {}x{}",
                img.height(),
                img.width()
            )));
        }
        Ok(img)
    }

    fn input_tensor(&self, img: &Image) -> Result<Tensor> {
        let InputShape {
            height,
            width,
            channels,
        } = self.input;
        let value = |y: usize, x: usize, c: usize| -> f32 {
            let src_c = match self.channel_order {
                ChannelOrder::Rgb => c,
                ChannelOrder::Bgr => channels - 1 - c,
            };
            (img.get(y, x, src_c) as f32 - self.mean[c]) * self.scale[c]
        };
        let mut data = Vec::with_capacity(height * width * channels);
        match self.layout {
            Layout::Nhwc => {
                for y in 0..height {
                    for x in 0..width {
                        for c in 0..channels {
                            data.push(value(y, x, c));
                        }
                    }
                }
            }
            Layout::Nchw => {
                for c in 0..channels {
                    for y in 0..height {
                        for x in 0..width {
                            data.push(value(y, x, c));
                        }
                    }
                }
            }
        }
        Tensor::from_shape(&input_tensor_shape(self.input, self.layout), &data)
            .map_err(|e| Error::Backend(format!("{e:#}")))
    }
}

fn input_tensor_shape(input: InputShape, layout: Layout) -> [usize; 4] {
    match layout {
        Layout::Nhwc => [1, input.height, input.width, input.channels],
        Layout::Nchw => [1, input.channels, input.height, input.width],
    }
}

fn feature_dim(shape: &[usize], layout: Layout) -> Option<usize> {
    let dim = match (shape.len(), layout) {
        (4, Layout::Nhwc) => shape[3],
        (4, Layout::Nchw) => shape[1],
        (0, _) => return None,
        _ => shape.iter().product(),
    };
    (dim > 0).then_some(dim)
}

/// Global average pooling (rank 4) or flattening (any other rank).
pub(crate) fn pool_output(shape: &[usize], values: &[f32], layout: Layout) -> Vec<f64> {
    if shape.len() != 4 {
        return values.iter().map(|&v| v as f64).collect();
    }
    let (n, d1, d2, d3) = (shape[0], shape[1], shape[2], shape[3]);
    match layout {
        Layout::Nhwc => {
            let mut acc = vec![0.0f64; d3];
            for chunk in values.chunks_exact(d3) {
                for (a, &v) in acc.iter_mut().zip(chunk) {
                    *a += v as f64;
                }
            }
            let count = (n * d1 * d2) as f64;
            acc.iter_mut().for_each(|a| *a /= count);
            acc
        }
        Layout::Nchw => {
            let plane = d2 * d3;
            let mut acc = vec![0.0f64; d1];
            for (i, chunk) in values.chunks_exact(plane).enumerate() {
                acc[i % d1] += chunk.iter().map(|&v| v as f64).sum::<f64>();
            }
            let count = (n * plane) as f64;
            acc.iter_mut().for_each(|a| *a /= count);
            acc
        }
    }
}

impl FeatureBackend for OnnxBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn extract(&self, img: &Image) -> Result<FeatureVector> {
        let img = self.conform(img)?;
        let input = self.input_tensor(&img)?;
        let outputs = self
            .plan
            .run(tvec!(input.into()))
            .map_err(|e| Error::Backend(format!("{e:#}")))?;
        let out = outputs[0]
            .cast_to::<f32>()
            .map_err(|e| Error::Backend(format!("{e:#}")))?;
        let values: Vec<f32> = out
            .to_plain_array_view::<f32>()
            .map_err(|e| Error::Backend(format!("{e:#}")))?
            .iter()
            .copied()
            .collect();
        let pooled = pool_output(out.shape(), &values, self.layout);
        if pooled.len() != self.dim {
            return Err(Error::Backend(format!(
                "graph produced {} features, expected {}",
                pooled.len(),
                self.dim
            )));
        }
        FeatureVector::new(pooled)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_nhwc_and_nchw_agree_on_transposed_data() {
        // 1×2×2×3 in NHWC; channel c at pixel p has value 10·p + c.
        let nhwc: Vec<f32> = (0..4)
            .flat_map(|p| (0..3).map(move |c| (10 * p + c) as f32))
            .collect();
        let nchw: Vec<f32> = (0..3)
            .flat_map(|c| (0..4).map(move |p| (10 * p + c) as f32))
            .collect();
        let a = pool_output(&[1, 2, 2, 3], &nhwc, Layout::Nhwc);
        let b = pool_output(&[1, 3, 2, 2], &nchw, Layout::Nchw);
        assert_eq!(a, vec![15.0, 16.0, 17.0]);
        assert_eq!(a, b);
    }

    #[test]
    fn flat_outputs_pass_through() {
        assert_eq!(
            pool_output(&[1, 3], &[1.0, 2.0, 3.0], Layout::Nhwc),
            vec![1.0, 2.0, 3.0]
        );
        assert_eq!(feature_dim(&[1, 4096], Layout::Nhwc), Some(4096));
        assert_eq!(feature_dim(&[1, 7, 7, 768], Layout::Nhwc), Some(768));
        assert_eq!(feature_dim(&[1, 768, 7, 7], Layout::Nchw), Some(768));
        assert_eq!(feature_dim(&[], Layout::Nhwc), None);
    }

    #[test]
    fn missing_model_is_a_load_error() {
        let err = load_interchange_model("/no/such/model.onnx", None).unwrap_err();
        assert!(matches!(err, Error::ModelLoad { .. }), "{err}");
    }

    #[test]
    fn sidecar_parses() {
        let text = r#"
            backbone = "inceptionv3"
            layer = "mixed7"
            output_dim = 768
            layout = "nhwc"
            [input]
            height = 150
            width = 150
            channels = 3
            [preprocess]
            mean = [127.5, 127.5, 127.5]
            scale = [0.0078431373, 0.0078431373, 0.0078431373]
        "#;
        let s: Sidecar = toml::from_str(text).unwrap();
        assert_eq!(s.layer.as_deref(), Some("mixed7"));
        assert_eq!(s.channel_order, ChannelOrder::Rgb);
        assert_eq!(s.input.height, 150);
        assert_eq!(
            Sidecar::path_for(Path::new("/m/inception.onnx")),
            PathBuf::from("/m/inception.toml")
        );
    }
}
