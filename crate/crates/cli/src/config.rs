//! The TOML run configuration shared by every subcommand.
//!
//! ```toml
//! seed = 7
//! workers = 4
//!
//! [fixture]                # or [dataset]
//! classes = 2
//! per_class = 40
//!
//! [backend]
//! kind = "toy"             # or "onnx" with `model = "resnet50.onnx"`
//!
//! [classifier]
//! kind = "softmax"         # or "svm"
//! epochs = 200
//! learning_rate = 0.05
//!
//! [refine]
//! actions = [{ type = "rotate", degrees = 180.0 }, { type = "rotate", degrees = 90.0 }]
//! filter = "oracle-misclassified"
//!
//! [output]
//! model = "out/model.qrcm"
//! report = "out/report.json"
//! ```

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};

use qrefine::dataset::{GlyphSpec, SplitSpec};
use qrefine::features::InputShape;
use qrefine::{
    ActionBank, ActionSpec, ClassifierKind, FilterMode, HardFilter, RLConfig, TrainConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds training, splitting, fixture generation and refinement.
    pub seed: u64,
    /// Worker threads; all available cores when absent.
    pub workers: Option<usize>,
    pub dataset: Option<DatasetConfig>,
    pub fixture: Option<FixtureConfig>,
    pub backend: BackendConfig,
    pub classifier: ClassifierConfig,
    pub refine: RefineConfig,
    pub output: OutputConfig,
}

/// Folder datasets: either separate train/test trees or one tree plus a split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub root: Option<PathBuf>,
    pub split: Option<qrefine::dataset::SplitSizes>,
}

/// Glyph fixture parameters; the seed comes from [`RunConfig::seed`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixtureConfig {
    pub classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub image_size: usize,
    pub rotated_fraction: f64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        let g = GlyphSpec::default();
        Self {
            classes: g.classes,
            per_class: g.per_class,
            test_per_class: g.test_per_class,
            image_size: g.image_size,
            rotated_fraction: g.rotated_fraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendChoice {
    #[default]
    Toy,
    Onnx,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendChoice,
    pub model: Option<PathBuf>,
    /// Required for ONNX models without a sidecar.
    pub input: Option<InputShape>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub svm_lambda: f64,
    pub svm_learning_rate: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            kind: ClassifierKind::Softmax,
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            svm_lambda: t.svm_lambda,
            svm_learning_rate: t.svm_learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// A predefined bank (see [`qrefine::action::BANK_NAMES`]); ignored when `actions` is
    /// given. Without either, the bank is `[rotate 180, rotate 90]`.
    pub bank: Option<String>,
    pub actions: Option<Vec<ActionSpec>>,
    pub filter: FilterMode,
    pub threshold: Option<f64>,
    pub alpha: f64,
    pub gamma: f64,
    pub m: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        let rl = RLConfig::default();
        Self {
            bank: None,
            actions: None,
            filter: FilterMode::OracleMisclassified,
            threshold: None,
            alpha: rl.alpha,
            gamma: rl.gamma,
            m: rl.m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub model: PathBuf,
    pub summary: Option<PathBuf>,
    pub report: PathBuf,
    pub trace: Option<PathBuf>,
    /// Include per-sample results in the report.
    pub samples: bool,
    /// Target directory of `fixture`.
    pub fixture_dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            model: "model.qrcm".into(),
            summary: None,
            report: "report.json".into(),
            trace: None,
            samples: false,
            fixture_dir: "fixture".into(),
        }
    }
}

/// Command-line flags that override the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub trace: Option<PathBuf>,
    pub filter: Option<FilterMode>,
    pub bank: Option<String>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Eval,
    Fixture,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg =
            Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.resolve_relative_to(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    /// Anchors relative paths at the config file's directory.
    fn resolve_relative_to(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let mut optional: Vec<&mut PathBuf> = Vec::new();
        if let Some(d) = &mut self.dataset {
            optional.extend(d.train.as_mut());
            optional.extend(d.test.as_mut());
            optional.extend(d.root.as_mut());
        }
        optional.extend(self.backend.model.as_mut());
        optional.extend(self.output.summary.as_mut());
        optional.extend(self.output.trace.as_mut());
        optional.push(&mut self.output.model);
        optional.push(&mut self.output.report);
        optional.push(&mut self.output.fixture_dir);
        optional.into_iter().for_each(fix);
    }

    /// Applies flag overrides; `--out` names the primary output of `cmd`.
    pub fn apply(&mut self, cmd: Command, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if o.workers.is_some() {
            self.workers = o.workers;
        }
        if let Some(t) = &o.trace {
            self.output.trace = Some(t.clone());
        }
        if let Some(f) = o.filter {
            self.refine.filter = f;
        }
        if let Some(b) = &o.bank {
            self.refine.bank = Some(b.clone());
            self.refine.actions = None;
        }
        if let Some(out) = &o.out {
            match cmd {
                Command::Train => self.output.model = out.clone(),
                Command::Eval => self.output.report = out.clone(),
                Command::Fixture => self.output.fixture_dir = out.clone(),
            }
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let c = &self.classifier;
        TrainConfig {
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            batch_size: c.batch_size,
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
            svm_lambda: c.svm_lambda,
            svm_learning_rate: c.svm_learning_rate,
            seed: self.seed,
        }
    }

    pub fn rl_config(&self) -> RLConfig {
        RLConfig {
            alpha: self.refine.alpha,
            gamma: self.refine.gamma,
            m: self.refine.m,
            seed: self.seed,
        }
    }

    pub fn glyph_spec(&self) -> GlyphSpec {
        let f = self.fixture.unwrap_or_default();
        GlyphSpec {
            classes: f.classes,
            per_class: f.per_class,
            test_per_class: f.test_per_class,
            image_size: f.image_size,
            rotated_fraction: f.rotated_fraction,
            seed: self.seed,
        }
    }

    pub fn split_spec(&self) -> Option<SplitSpec> {
        let sizes = self.dataset.as_ref()?.split?;
        Some(SplitSpec {
            sizes,
            seed: self.seed,
        })
    }

    pub fn bank(&self) -> Result<ActionBank> {
        match (&self.refine.actions, &self.refine.bank) {
            (Some(actions), _) => Ok(ActionBank::new(
                self.refine.bank.clone().unwrap_or_else(|| "custom".into()),
                actions.clone(),
            )?),
            (None, Some(name)) => Ok(ActionBank::named(name)?),
            (None, None) => Ok(ActionBank::new(
                "half-turns",
                vec![ActionSpec::rotate(180.0), ActionSpec::rotate(90.0)],
            )?),
        }
    }

    pub fn hard_filter(&self) -> Result<HardFilter> {
        match (self.refine.filter, self.refine.threshold) {
            (FilterMode::DispersionThreshold, Some(t)) if t.is_finite() => {
                Ok(HardFilter::threshold(t))
            }
            (FilterMode::DispersionThreshold, _) => {
                bail!("filter `dispersion-threshold` needs a finite `threshold`")
            }
            (mode, _) => Ok(HardFilter::new(mode)),
        }
    }

    /// Checks everything `cmd` will need before any file is written.
    pub fn validate(&self, cmd: Command) -> Result<()> {
        if self.workers == Some(0) {
            bail!("workers must be positive");
        }
        if cmd == Command::Fixture {
            self.glyph_spec().validate()?;
            return Ok(());
        }
        match (&self.dataset, &self.fixture) {
            (Some(_), Some(_)) => bail!("configure either [dataset] or [fixture], not both"),
            (None, _) => self.glyph_spec().validate()?,
            (Some(d), None) => {
                let need = if cmd == Command::Train {
                    &d.train
                } else {
                    &d.test
                };
                match (need, &d.root) {
                    (Some(dir), None) => require_dir(dir)?,
                    (None, Some(root)) => {
                        require_dir(root)?;
                        if d.split.is_none() {
                            bail!("dataset.root needs a dataset.split");
                        }
                    }
                    (Some(_), Some(_)) => {
                        bail!("dataset: give either train/test directories or root + split")
                    }
                    (None, None) => bail!(
                        "dataset needs `{}` or `root`",
                        if cmd == Command::Train {
                            "train"
                        } else {
                            "test"
                        }
                    ),
                }
            }
        }
        match self.backend.kind {
            BackendChoice::Toy => {
                if self.backend.model.is_some() {
                    bail!("backend.model is only used with kind = \"onnx\"");
                }
            }
            BackendChoice::Onnx => {
                let model = self
                    .backend
                    .model
                    .as_ref()
                    .ok_or_else(|| anyhow!("onnx backend needs backend.model"))?;
                if !model.is_file() {
                    bail!("backend model {} does not exist", model.display());
                }
            }
        }
        match cmd {
            Command::Train => self.train_config().validate()?,
            Command::Eval => {
                self.bank()?;
                self.hard_filter()?;
                self.rl_config().validate()?;
                if !self.output.model.is_file() {
                    bail!("model file {} does not exist", self.output.model.display());
                }
            }
            Command::Fixture => unreachable!(),
        }
        Ok(())
    }
}

fn require_dir(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        bail!("dataset directory {} does not exist", dir.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn module_example_parses() {
        let doc: String = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start().to_string() + "\n")
            .collect();
        let cfg = RunConfig::from_toml(&doc).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.workers, Some(4));
        assert_eq!(cfg.bank().unwrap().len(), 2);
        assert_eq!(cfg.classifier.epochs, 200);
    }

    #[test]
    fn flags_override_the_file() {
        let mut cfg =
            RunConfig::from_toml("seed = 1\n[refine]\nactions = [{ type = \"identity\" }]\n")
                .unwrap();
        cfg.apply(
            Command::Eval,
            &Overrides {
                seed: Some(9),
                bank: Some("caltech101".into()),
                filter: Some(FilterMode::Never),
                out: Some("r.json".into()),
                ..Default::default()
            },
        );
        assert_eq!(cfg.rl_config().seed, 9);
        assert_eq!(cfg.train_config().seed, 9);
        assert_eq!(cfg.bank().unwrap().name, "caltech101");
        assert_eq!(
            cfg.hard_filter().unwrap(),
            HardFilter::new(FilterMode::Never)
        );
        assert_eq!(cfg.output.report, PathBuf::from("r.json"));
        assert_eq!(cfg.output.model, PathBuf::from("model.qrcm"));
    }

    #[test]
    fn split_forms_and_threshold() {
        let cfg = RunConfig::from_toml(
            "[dataset]\nroot = \"d\"\nsplit = { train = 750, validation = 0, test = 1250 }\n[refine]\nfilter = \"dispersion-threshold\"\nthreshold = 0.25\n",
        )
        .unwrap();
        assert_eq!(
            cfg.split_spec().unwrap().counts(2000).unwrap(),
            [750, 0, 1250]
        );
        assert_eq!(cfg.hard_filter().unwrap(), HardFilter::threshold(0.25));
        assert!(RunConfig::from_toml("[refine]\nfilter = \"sometimes\"\n").is_err());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let mut cfg = RunConfig::from_toml("[dataset]\ntrain = \"t\"\ntest = \"/abs\"\n").unwrap();
        cfg.resolve_relative_to(Path::new("/runs"));
        let d = cfg.dataset.unwrap();
        assert_eq!(d.train.unwrap(), PathBuf::from("/runs/t"));
        assert_eq!(d.test.unwrap(), PathBuf::from("/abs"));
        assert_eq!(cfg.output.model, PathBuf::from("/runs/model.qrcm"));
    }
}
