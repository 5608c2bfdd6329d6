//! Directory-per-class datasets, seeded splits and the synthetic glyph fixture.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

mod glyph;

pub use glyph::{make_glyph_fixture, GlyphFixture, GlyphSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub image: Image,
    pub label: usize,
    pub source_path: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<LabeledSample>,
    pub class_names: Vec<String>,
}

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    /// Writes `root/<class>/<index>.png` for every sample, in the layout
    /// [`load_folder_dataset`] reads back. Indices are zero-padded per class
    /// so that lexicographic order equals sample order.
    pub fn write_folders(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        for name in &self.class_names {
            let dir = root.join(name);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        let mut counters = vec![0usize; self.classes()];
        let jobs: Vec<(PathBuf, &Image)> = self
            .samples
            .iter()
            .map(|s| {
                let i = counters[s.label];
                counters[s.label] += 1;
                (
                    root.join(&self.class_names[s.label])
                        .join(format!("{i:05}.png")),
                    &s.image,
                )
            })
            .collect();
        jobs.par_iter()
            .map(|(path, img)| img.save_png(path))
            .collect::<Result<Vec<()>>>()?;
        Ok(())
    }
}

/// Loads `root/<class>/<image>` trees. Classes are indexed by sorted directory
/// name, samples are ordered by sorted path.
pub fn load_folder_dataset(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::InvalidDataset(format!(
            "dataset root {} does not exist or is not a directory",
            root.display()
        )));
    }
    let read_dir = |dir: &Path| -> Result<Vec<PathBuf>> {
        let mut entries = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
            .collect::<Result<Vec<_>>>()?;
        entries.sort();
        Ok(entries)
    };
    let class_dirs: Vec<PathBuf> = read_dir(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::InvalidDataset(format!(
            "no class directories under {}",
            root.display()
        )));
    }
    let mut class_names = Vec::with_capacity(class_dirs.len());
    let mut files = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        class_names.push(dir.file_name().unwrap().to_string_lossy().into_owned());
        for path in read_dir(dir)? {
            let is_image = path.is_file()
                && path
                    .extension()
                    .map(|e| e.to_string_lossy().to_ascii_lowercase())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str()));
            if is_image {
                files.push((path, label));
            }
        }
    }
    let samples = files
        .par_iter()
        .map(|(path, label)| {
            Ok(LabeledSample {
                image: Image::load(path)?,
                label: *label,
                source_path: path.to_string_lossy().into_owned(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        samples,
        class_names,
    })
}

/// Split sizes as absolute counts or as fractions of the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitSizes {
    Counts {
        train: usize,
        validation: usize,
        test: usize,
    },
    Fractions {
        train: f64,
        validation: f64,
        test: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub sizes: SplitSizes,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

impl SplitSpec {
    /// Resolves to `(train, validation, test)` counts for `n` samples.
    pub fn counts(&self, n: usize) -> Result<[usize; 3]> {
        let counts = match self.sizes {
            SplitSizes::Counts {
                train,
                validation,
                test,
            } => [train, validation, test],
            SplitSizes::Fractions {
                train,
                validation,
                test,
            } => {
                let fr = [train, validation, test];
                if fr.iter().any(|f| !(0.0..=1.0).contains(f)) {
                    return Err(Error::InvalidSplit(format!(
                        "fractions must lie in [0, 1], got {fr:?}"
                    )));
                }
                if fr.iter().sum::<f64>() > 1.0 + 1e-9 {
                    return Err(Error::InvalidSplit(format!(
                        "fractions sum above 1: {fr:?}"
                    )));
                }
                fr.map(|f| (f * n as f64 + 1e-9).floor() as usize)
            }
        };
        if counts.iter().sum::<usize>() > n {
            return Err(Error::InvalidSplit(format!(
                "split {counts:?} needs more than the {n} available samples"
            )));
        }
        Ok(counts)
    }
}

/// Disjoint, seed-deterministic split. When every split count divides evenly
/// among the classes and each class has enough samples, every class gets the
/// same quota; otherwise samples are drawn from one global shuffle.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    let counts = spec.counts(dataset.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let classes = dataset.classes().max(1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class[s.label].push(i);
    }
    let per_class_need: usize = counts.iter().map(|c| c / classes).sum();
    let stratified = counts.iter().all(|c| c % classes == 0)
        && by_class.iter().all(|g| g.len() >= per_class_need);

    let mut parts: [Vec<usize>; 3] = Default::default();
    if stratified {
        for group in &mut by_class {
            group.shuffle(&mut rng);
            let mut offset = 0;
            for (part, count) in parts.iter_mut().zip(counts) {
                let quota = count / classes;
                part.extend_from_slice(&group[offset..offset + quota]);
                offset += quota;
            }
        }
    } else {
        let mut all: Vec<usize> = (0..dataset.len()).collect();
        all.shuffle(&mut rng);
        let mut offset = 0;
        for (part, count) in parts.iter_mut().zip(counts) {
            part.extend_from_slice(&all[offset..offset + count]);
            offset += count;
        }
    }
    let build = |mut idx: Vec<usize>| {
        idx.sort_unstable();
        Dataset {
            samples: idx
                .into_iter()
                .map(|i| dataset.samples[i].clone())
                .collect(),
            class_names: dataset.class_names.clone(),
        }
    };
    let [train, validation, test] = parts;
    Ok(Splits {
        train: build(train),
        validation: build(validation),
        test: build(test),
    })
}
