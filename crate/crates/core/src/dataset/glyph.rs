//! Synthetic "comet" glyphs: a bright disk off-center plus a stem back to the
//! middle. Class `k` points in direction `135° + k·360°/n`, so for an even
//! class count a half-turn maps every class onto another one. The test split
//! contains exact 180° rotations of training images, which a classifier trained
//! on upright glyphs gets wrong.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, LabeledSample};
use crate::action::ActionSpec;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlyphSpec {
    pub classes: usize,
    /// Training images per class.
    pub per_class: usize,
    /// Test images per class.
    pub test_per_class: usize,
    pub image_size: usize,
    /// Share of the test split made of half-turned training images.
    pub rotated_fraction: f64,
    pub seed: u64,
}

impl Default for GlyphSpec {
    fn default() -> Self {
        Self {
            classes: 2,
            per_class: 40,
            test_per_class: 40,
            image_size: 64,
            rotated_fraction: 0.3,
            seed: 0,
        }
    }
}

impl GlyphSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "glyph fixture needs at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.per_class == 0 {
            return Err(Error::Config("per_class must be positive".into()));
        }
        if self.image_size < 8 {
            return Err(Error::Config(format!(
                "image_size must be at least 8, got {}",
                self.image_size
            )));
        }
        if !(0.0..=1.0).contains(&self.rotated_fraction) {
            return Err(Error::Config(format!(
                "rotated_fraction must lie in [0, 1], got {}",
                self.rotated_fraction
            )));
        }
        Ok(())
    }

    pub fn rotated_count(&self) -> usize {
        (self.rotated_fraction * (self.classes * self.test_per_class) as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlyphFixture {
    pub train: Dataset,
    pub test: Dataset,
    /// `(test index, train index)` pairs: the test image is the training image
    /// turned by 180°.
    pub rotated_from: Vec<(usize, usize)>,
}

/// Convenience wrapper with the default test size and a 30% rotated share.
pub fn make_glyph_fixture(
    classes: usize,
    per_class: usize,
    image_size: usize,
    seed: u64,
) -> Result<GlyphFixture> {
    GlyphFixture::generate(&GlyphSpec {
        classes,
        per_class,
        test_per_class: per_class,
        image_size,
        seed,
        ..GlyphSpec::default()
    })
}

impl GlyphFixture {
    pub fn generate(spec: &GlyphSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let class_names: Vec<String> = (0..spec.classes).map(|c| format!("glyph_{c:02}")).collect();

        let mut train = Vec::with_capacity(spec.classes * spec.per_class);
        for label in 0..spec.classes {
            for i in 0..spec.per_class {
                train.push(LabeledSample {
                    image: draw_glyph(spec, label, &mut rng)?,
                    label,
                    source_path: format!("synthetic/train/{label}/{i}"),
                });
            }
        }

        let total_test = spec.classes * spec.test_per_class;
        let mut slots: Vec<usize> = (0..total_test).collect();
        slots.shuffle(&mut rng);
        let mut rotated_slots = slots[..spec.rotated_count()].to_vec();
        rotated_slots.sort_unstable();

        let mut test = Vec::with_capacity(total_test);
        let mut rotated_from = Vec::new();
        for slot in 0..total_test {
            let label = slot / spec.test_per_class;
            let i = slot % spec.test_per_class;
            let sample = if rotated_slots.binary_search(&slot).is_ok() {
                let source = label * spec.per_class + rng.random_range(0..spec.per_class);
                rotated_from.push((slot, source));
                LabeledSample {
                    image: ActionSpec::rotate(180.0).apply(&train[source].image)?,
                    label,
                    source_path: format!("synthetic/test/{label}/{i}-rot180-of-{source}"),
                }
            } else {
                LabeledSample {
                    image: draw_glyph(spec, label, &mut rng)?,
                    label,
                    source_path: format!("synthetic/test/{label}/{i}"),
                }
            };
            test.push(sample);
        }

        Ok(Self {
            train: Dataset {
                samples: train,
                class_names: class_names.clone(),
            },
            test: Dataset {
                samples: test,
                class_names,
            },
            rotated_from,
        })
    }
}

fn draw_glyph(spec: &GlyphSpec, label: usize, rng: &mut ChaCha8Rng) -> Result<Image> {
    let s = spec.image_size as f64;
    let center = (s - 1.0) / 2.0;
    let angle = (135.0 + label as f64 * 360.0 / spec.classes as f64 + rng.random_range(-8.0..8.0))
        .to_radians();
    let dist = s * (0.28 + rng.random_range(-0.03..0.03));
    let radius = s * (0.13 + rng.random_range(-0.02..0.02));
    let (ux, uy) = (angle.cos(), -angle.sin());
    let (hx, hy) = (center + dist * ux, center + dist * uy);
    let head = rng.random_range(210.0..245.0);
    let stem = rng.random_range(120.0..160.0);
    let stem_half_width = s * 0.035;
    let background = rng.random_range(15.0..30.0);

    let n = spec.image_size;
    let mut pixels = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64, y as f64);
            let mut v: f64 = background;
            // Stem: segment from the center to the head.
            let along = (px - center) * ux + (py - center) * uy;
            let across = ((px - center) * uy - (py - center) * ux).abs();
            if (0.0..=dist).contains(&along) && across <= stem_half_width {
                v = v.max(stem);
            }
            if (px - hx).hypot(py - hy) <= radius {
                v = v.max(head);
            }
            v += rng.random_range(-8.0..8.0);
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Image::new(n, n, 1, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let a = make_glyph_fixture(2, 10, 64, 5).unwrap();
        assert_eq!(a.train.len(), 20);
        assert_eq!(a.test.len(), 20);
        assert_eq!(a.rotated_from.len(), 6);
        assert_eq!(a, make_glyph_fixture(2, 10, 64, 5).unwrap());
    }

    #[test]
    fn rotated_tests_are_exact_half_turns() {
        let f = make_glyph_fixture(3, 8, 32, 1).unwrap();
        for &(t, s) in &f.rotated_from {
            let turned = ActionSpec::rotate(180.0)
                .apply(&f.train.samples[s].image)
                .unwrap();
            assert_eq!(f.test.samples[t].image, turned);
            assert_eq!(f.test.samples[t].label, f.train.samples[s].label);
        }
    }

    #[test]
    fn seeds_change_content() {
        let a = make_glyph_fixture(2, 4, 32, 1).unwrap();
        let b = make_glyph_fixture(2, 4, 32, 2).unwrap();
        let checksum = |d: &Dataset| {
            d.samples
                .iter()
                .flat_map(|s| s.image.pixels())
                .fold(0u64, |h, &p| {
                    h.wrapping_mul(1_099_511_628_211).wrapping_add(p as u64)
                })
        };
        assert_ne!(checksum(&a.train), checksum(&b.train));
    }

    #[test]
    fn glyphs_are_not_half_turn_symmetric() {
        let f = make_glyph_fixture(2, 3, 64, 0).unwrap();
        for s in &f.train.samples {
            let turned = ActionSpec::rotate(180.0).apply(&s.image).unwrap();
            assert_ne!(turned, s.image);
        }
    }

    #[test]
    fn rejects_single_class() {
        assert!(make_glyph_fixture(1, 4, 32, 0).is_err());
    }
}
