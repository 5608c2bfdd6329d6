//! Library side of the `qrefine` binary: configuration and the three
//! subcommands, callable without spawning a process.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use qrefine::classifier::{load_model, save_model};
use qrefine::dataset::{load_folder_dataset, split, Dataset, GlyphFixture, GlyphSpec};
use qrefine::features::{load_interchange_model, toy_extractor};
use qrefine::pipeline::{EvaluationCounts, SampleResult};
use qrefine::{Classifier, ClassifierKind, FeatureBackend, FeatureVector, Pipeline};

pub mod config;

use config::BackendChoice;
pub use config::{Command, Overrides, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub model: PathBuf,
    pub classifier: ClassifierKind,
    pub backend: BackendChoice,
    pub seed: u64,
    pub samples: usize,
    pub classes: usize,
    pub class_names: Vec<String>,
    pub dim: usize,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// The run configuration without the worker count.
    pub config: RunConfig,
    pub baseline_accuracy: f64,
    pub refined_accuracy: f64,
    pub counts: EvaluationCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<SampleResult>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixtureSummary {
    pub spec: GlyphSpec,
    pub train: usize,
    pub test: usize,
    /// `(test index, train index)` pairs in folder order.
    pub rotated_from: Vec<(usize, usize)>,
}

/// Runs `f` on a pool sized by `cfg.workers`.
pub fn with_workers<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers.unwrap_or(0))
        .build()?;
    Ok(pool.install(f))
}

fn backend(cfg: &RunConfig) -> Result<Box<dyn FeatureBackend>> {
    Ok(match cfg.backend.kind {
        BackendChoice::Toy => Box::new(toy_extractor()),
        BackendChoice::Onnx => {
            let path = cfg
                .backend
                .model
                .as_ref()
                .context("onnx backend needs backend.model")?;
            Box::new(load_interchange_model(path, cfg.backend.input)?)
        }
    })
}

fn load_split(cfg: &RunConfig, cmd: Command) -> Result<Dataset> {
    let Some(d) = &cfg.dataset else {
        let fixture = GlyphFixture::generate(&cfg.glyph_spec())?;
        return Ok(if cmd == Command::Train {
            fixture.train
        } else {
            fixture.test
        });
    };
    let dir = if cmd == Command::Train {
        &d.train
    } else {
        &d.test
    };
    if let Some(dir) = dir {
        return Ok(load_folder_dataset(dir)?);
    }
    let root = d.root.as_ref().context("dataset needs a root")?;
    let spec = cfg
        .split_spec()
        .context("dataset.root needs a dataset.split")?;
    let splits = split(&load_folder_dataset(root)?, &spec)?;
    Ok(if cmd == Command::Train {
        splits.train
    } else {
        splits.test
    })
}

fn extract_all(backend: &dyn FeatureBackend, data: &Dataset) -> Result<Vec<FeatureVector>> {
    Ok(data
        .samples
        .par_iter()
        .map(|s| backend.extract(&s.image))
        .collect::<qrefine::Result<Vec<_>>>()?)
}

fn parent_dir(path: &Path) -> Result<PathBuf> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = tempfile::NamedTempFile::new_in(parent_dir(path)?)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Extracts training features, fits the classifier and writes the model
/// container plus a JSON summary next to it.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate(Command::Train)?;
    let data = load_split(cfg, Command::Train)?;
    if data.is_empty() {
        bail!("training split is empty");
    }
    let backend = backend(cfg)?;
    let features = extract_all(backend.as_ref(), &data)?;
    let labels = data.labels();
    let model = Classifier::train(
        cfg.classifier.kind,
        &features,
        &labels,
        data.classes(),
        &cfg.train_config(),
    )?;
    let correct = features
        .iter()
        .zip(&labels)
        .map(|(x, &y)| Ok((model.predict_label(x)? == y) as usize))
        .sum::<Result<usize>>()?;
    let summary = TrainSummary {
        model: cfg.output.model.clone(),
        classifier: model.kind(),
        backend: cfg.backend.kind,
        seed: cfg.seed,
        samples: data.len(),
        classes: data.classes(),
        class_names: data.class_names.clone(),
        dim: model.dim(),
        train_accuracy: correct as f64 / data.len() as f64,
    };

    parent_dir(&cfg.output.model)?;
    save_model(&model, &cfg.output.model)?;
    let summary_path = summary_path(cfg);
    if let Err(e) = write_atomic(&summary_path, &to_json(&summary)?) {
        let _ = fs::remove_file(&cfg.output.model);
        return Err(e);
    }
    Ok(summary)
}

/// `output.summary`, or the model path with a `.json` extension.
pub fn summary_path(cfg: &RunConfig) -> PathBuf {
    cfg.output
        .summary
        .clone()
        .unwrap_or_else(|| cfg.output.model.with_extension("json"))
}

/// Runs the refinement pipeline over the test split and writes the report
/// and, when configured, the episode trace.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.validate(Command::Eval)?;
    let model = load_model(&cfg.output.model)?;
    let data = load_split(cfg, Command::Eval)?;
    if data.classes() != model.classes() {
        bail!(
            "test split has {} classes but the model was trained on {}",
            data.classes(),
            model.classes()
        );
    }
    let backend = backend(cfg)?;
    let bank = cfg.bank()?;
    let pipeline = Pipeline::new(
        backend.as_ref(),
        &model,
        &bank,
        cfg.hard_filter()?,
        cfg.rl_config(),
    )?;
    let report = pipeline.evaluate(&data)?;

    if let Some(trace_path) = &cfg.output.trace {
        let mut lines = Vec::new();
        for s in &report.samples {
            if let Some(trace) = &s.result.trace {
                trace.write_jsonl(&mut lines, Some(s.index))?;
            }
        }
        write_atomic(trace_path, &lines)?;
    }
    let out = EvalReport {
        config: RunConfig {
            workers: None,
            ..cfg.clone()
        },
        baseline_accuracy: report.baseline_accuracy,
        refined_accuracy: report.refined_accuracy,
        counts: report.counts,
        samples: cfg.output.samples.then_some(report.samples),
    };
    if let Err(e) = write_atomic(&cfg.output.report, &to_json(&out)?) {
        if let Some(t) = &cfg.output.trace {
            let _ = fs::remove_file(t);
        }
        return Err(e);
    }
    Ok(out)
}

/// Writes the glyph fixture as `train/` and `test/` class folders plus a
/// `fixture.json` manifest. The target must be absent or empty.
pub fn cmd_fixture(cfg: &RunConfig) -> Result<FixtureSummary> {
    cfg.validate(Command::Fixture)?;
    let target = &cfg.output.fixture_dir;
    if target.exists() {
        let empty = target.is_dir()
            && fs::read_dir(target)
                .with_context(|| format!("reading {}", target.display()))?
                .next()
                .is_none();
        if !empty {
            bail!(
                "fixture target {} exists and is not empty",
                target.display()
            );
        }
    }
    let spec = cfg.glyph_spec();
    let fixture = GlyphFixture::generate(&spec)?;
    let summary = FixtureSummary {
        spec,
        train: fixture.train.len(),
        test: fixture.test.len(),
        rotated_from: fixture.rotated_from.clone(),
    };

    let staging = tempfile::Builder::new()
        .prefix(".qrefine-fixture")
        .tempdir_in(parent_dir(target)?)?;
    fixture.train.write_folders(staging.path().join("train"))?;
    fixture.test.write_folders(staging.path().join("test"))?;
    fs::write(staging.path().join("fixture.json"), to_json(&summary)?)?;
    if target.exists() {
        fs::remove_dir(target)?;
    }
    fs::rename(staging.path(), target)
        .with_context(|| format!("moving fixture into {}", target.display()))?;
    let _ = staging.keep();
    Ok(summary)
}
