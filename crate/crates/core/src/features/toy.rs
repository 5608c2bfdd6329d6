use super::{BackendDescriptor, BackendKind, FeatureBackend, FeatureVector, Sharing};
use crate::error::Result;
use crate::image::Image;

/// Side of the square grid the toy extractor pools down to.
pub const TOY_GRID: usize = 8;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Deterministic stand-in for a pretrained CNN: luma grayscale, area-average
/// to an 8×8 grid, flatten row-major, L2-normalize (zero vectors stay zero).
///
/// Accepts any image size.
#[derive(Debug, Clone)]
pub struct ToyExtractor {
    descriptor: BackendDescriptor,
}

pub fn toy_extractor() -> ToyExtractor {
    ToyExtractor::default()
}

impl Default for ToyExtractor {
    fn default() -> Self {
        Self {
            descriptor: BackendDescriptor {
                kind: BackendKind::Toy,
                source: None,
                expected_input: None,
                deterministic: true,
                sharing: Sharing::Concurrent,
            },
        }
    }
}

impl ToyExtractor {
    /// The 8×8 grid of area-averaged luma values, before normalization.
    pub fn pooled(&self, img: &Image) -> Vec<f64> {
        let (h, w) = (img.height(), img.width());
        let gray: Vec<f64> = (0..h * w)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                match img.channels() {
                    1 => img.get(y, x, 0) as f64,
                    _ => (0..3).map(|c| LUMA[c] * img.get(y, x, c) as f64).sum(),
                }
            })
            .collect();
        let row_w = overlap_weights(h, TOY_GRID);
        let col_w = overlap_weights(w, TOY_GRID);
        let cell_area = (h as f64 / TOY_GRID as f64) * (w as f64 / TOY_GRID as f64);

        let mut out = vec![0.0; TOY_GRID * TOY_GRID];
        for (gy, rows) in row_w.iter().enumerate() {
            for (gx, cols) in col_w.iter().enumerate() {
                let mut acc = 0.0;
                for &(y, wy) in rows {
                    for &(x, wx) in cols {
                        acc += wy * wx * gray[y * w + x];
                    }
                }
                out[gy * TOY_GRID + gx] = acc / cell_area;
            }
        }
        out
    }
}

/// For each of `cells` equal output intervals over `len` source pixels, the
/// covered source pixels and how much of each is covered.
fn overlap_weights(len: usize, cells: usize) -> Vec<Vec<(usize, f64)>> {
    let step = len as f64 / cells as f64;
    (0..cells)
        .map(|i| {
            let (lo, hi) = (i as f64 * step, (i + 1) as f64 * step);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(len);
            (first..last)
                .filter_map(|p| {
                    let cover = (hi.min(p as f64 + 1.0) - lo.max(p as f64)).max(0.0);
                    (cover > 0.0).then_some((p, cover))
                })
                .collect()
        })
        .collect()
}

impl FeatureBackend for ToyExtractor {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn dim(&self) -> usize {
        TOY_GRID * TOY_GRID
    }

    fn extract(&self, img: &Image) -> Result<FeatureVector> {
        let mut v = self.pooled(img);
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        FeatureVector::new(v)
    }
}
