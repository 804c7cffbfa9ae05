//! Experiment files.
//!
//! An experiment is a TOML document with the tables `[dataset]`, `[model]`,
//! `[train]`, `[augment]`, `[output]` and `[sweep]`. Every table is flat
//! (`key = value` only) and unknown keys are rejected. Command-line
//! overrides take the form `section.key=value`, with `value` written as a
//! TOML value; bare words are read as strings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{AugParams, AugPolicy, Modality, Strength};
use crate::data::{gen_factor_shapes, gen_two_moons, split_labeled, DatasetSplit, Holdout, LabelSpec, Sample};
use crate::error::{Error, Result};
use crate::eval::Rect;
use crate::nn::{build_bundle, ArchSpec, LayerSpec, ModelBundle, Task};
use crate::objectives::{Distance, LossKind, Method};
use crate::optim::SgdConfig;
use crate::train::{model_seeds, TrainConfig};

/// Overrides the output directory of every command.
pub const OUTPUT_DIR_ENV: &str = "CHI_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Generator {
    TwoMoons,
    FactorShapes,
}

impl Generator {
    pub fn name(self) -> &'static str {
        match self {
            Generator::TwoMoons => "two-moons",
            Generator::FactorShapes => "factor-shapes",
        }
    }

    pub fn task(self) -> Task {
        match self {
            Generator::TwoMoons => Task::Classification,
            Generator::FactorShapes => Task::Regression,
        }
    }

    pub fn modality(self) -> Modality {
        match self {
            Generator::TwoMoons => Modality::Point2d,
            Generator::FactorShapes => Modality::Raster32,
        }
    }

    /// Classes for classification, factors for regression.
    pub fn outputs(self) -> usize {
        match self {
            Generator::TwoMoons => 2,
            Generator::FactorShapes => 3,
        }
    }

    pub fn default_arch(self) -> ArchSpec {
        match self {
            Generator::TwoMoons => ArchSpec::two_moons(2),
            Generator::FactorShapes => ArchSpec::factor_shapes(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub generator: Generator,
    /// Number of samples to generate. Mutually exclusive with `file`.
    pub samples: Option<usize>,
    /// Gaussian noise on two-moons coordinates.
    pub noise: Option<f64>,
    /// Seed for generation and splitting; defaults to `train.seed`.
    pub seed: Option<u64>,
    pub label_ratio: Option<f64>,
    pub labels_per_class: Option<usize>,
    pub test_fraction: Option<f64>,
    pub test_count: Option<usize>,
    #[serde(default)]
    pub stratify: bool,
    /// Sample file written by `generate`, used in place of the generator.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub extractor: Option<Vec<LayerSpec>>,
    pub head: Option<Vec<LayerSpec>>,
    pub branches: Option<usize>,
    /// Initialization seed; defaults to `train.seed`.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub method: Method,
    pub eta: f64,
    pub grl_lambda: f64,
    pub learning_rate: f64,
    pub head_lr_multiplier: f64,
    pub momentum: f64,
    pub clip_norm: Option<f64>,
    pub ema_alpha: f64,
    pub epochs: usize,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub seed: u64,
    /// Regression distance; L1 when omitted. Not allowed for classification.
    pub distance: Option<Distance>,
    pub warmup_epochs: usize,
    pub pseudo_threshold: f64,
    pub pi_dropout: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::new(
            Method::Chi,
            LossKind::classification(),
            [AugPolicy::new(Modality::Point2d, Strength::None); 2],
        );
        Self {
            method: t.method,
            eta: t.eta,
            grl_lambda: t.grl_lambda,
            learning_rate: t.sgd.learning_rate,
            head_lr_multiplier: t.sgd.head_lr_multiplier,
            momentum: t.sgd.momentum,
            clip_norm: t.sgd.clip_norm,
            ema_alpha: t.ema_alpha,
            epochs: t.epochs,
            labeled_batch: t.labeled_batch,
            unlabeled_batch: t.unlabeled_batch,
            seed: t.seed,
            distance: None,
            warmup_epochs: t.warmup_epochs,
            pseudo_threshold: t.pseudo_threshold,
            pi_dropout: t.pi_dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub strength: Strength,
    /// Rotation center for point data; the middle of the moons by default.
    pub center: Option<[f64; 2]>,
    pub point_weak_sigma: f64,
    pub point_strong_sigma: f64,
    pub rotation_deg: f64,
    pub point_cutout_prob: f64,
    pub flip_prob: f64,
    pub translate: usize,
    pub cutout: usize,
    pub contrast_min: f64,
    pub contrast_max: f64,
}

impl Default for AugmentSection {
    fn default() -> Self {
        let p = AugParams::default();
        Self {
            strength: Strength::Strong,
            center: None,
            point_weak_sigma: p.point_weak_sigma,
            point_strong_sigma: p.point_strong_sigma,
            rotation_deg: p.rotation_deg,
            point_cutout_prob: p.point_cutout_prob,
            flip_prob: p.flip_prob,
            translate: p.translate,
            cutout: p.cutout,
            contrast_min: p.contrast_min,
            contrast_max: p.contrast_max,
        }
    }
}

impl AugmentSection {
    pub fn params(&self) -> AugParams {
        AugParams {
            point_weak_sigma: self.point_weak_sigma,
            point_strong_sigma: self.point_strong_sigma,
            rotation_deg: self.rotation_deg,
            point_cutout_prob: self.point_cutout_prob,
            flip_prob: self.flip_prob,
            translate: self.translate,
            cutout: self.cutout,
            contrast_min: self.contrast_min,
            contrast_max: self.contrast_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub history: bool,
    pub metrics: bool,
    /// Add a metrics.csv row every this many epochs; the final epoch is
    /// always evaluated. 0 means final only.
    pub eval_every: usize,
    pub boundary: bool,
    pub boundary_resolution: usize,
    /// `[x_min, x_max, y_min, y_max]`.
    pub boundary_bounds: [f64; 4],
    pub features: bool,
    /// Write `checkpoint.bin` after the final epoch.
    pub checkpoint: bool,
    /// Also write `checkpoint-epoch-<k>.bin` every this many epochs.
    pub checkpoint_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            history: true,
            metrics: true,
            eval_every: 0,
            boundary: false,
            boundary_resolution: 100,
            boundary_bounds: [-1.5, 2.5, -1.0, 1.5],
            features: false,
            checkpoint: true,
            checkpoint_every: 0,
        }
    }
}

impl OutputSection {
    pub fn bounds(&self) -> Rect {
        let [x_min, x_max, y_min, y_max] = self.boundary_bounds;
        Rect {
            x_min,
            x_max,
            y_min,
            y_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub methods: Vec<Method>,
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            methods: vec![Method::LabelOnly, Method::Chi],
            ratios: vec![0.01, 0.05, 0.1, 0.2, 0.5],
            seeds: vec![0, 1, 2],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub augment: AugmentSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub sweep: SweepSection,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn one_line(s: &str) -> String {
    s.trim().lines().map(str::trim).collect::<Vec<_>>().join("; ")
}

/// Line of `key` inside `[section]`, if the document sets it.
fn find_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = name.trim().to_string();
            continue;
        }
        let lhs = line.split('=').next().unwrap_or("").trim();
        if current == section && lhs == key {
            return Some(i + 1);
        }
    }
    None
}

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies one `section.key=value` override.
fn or_flag(key: &str) -> &str {
    if key.is_empty() {
        "--set"
    } else {
        key
    }
}

pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(or_flag(spec.trim()), "override must look like section.key=value"))?;
    let path = path.trim();
    let (section, key) = path
        .split_once('.')
        .filter(|(s, k)| !s.is_empty() && !k.is_empty() && !k.contains('.'))
        .ok_or_else(|| Error::config(or_flag(path), "override key must look like section.key"))?;
    let entry = table
        .entry(section.to_string())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let toml::Value::Table(t) = entry else {
        return Err(Error::config(section, "is not a table"));
    };
    t.insert(key.to_string(), parse_value(raw.trim()));
    Ok(())
}

impl ExperimentConfig {
    /// Parses `text`, applies `overrides` in order and validates the result.
    /// `origin` names the source in error messages.
    pub fn parse(text: &str, origin: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let line = e.span().map_or(0, |s| line_of(text, s.start));
            Error::config(format!("{origin}:{line}"), one_line(e.message()))
        })?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let key = e.path().to_string();
            let message = one_line(&e.inner().to_string());
            let location = match key.split_once('.') {
                Some((s, k)) => find_key(text, s, k).map(|l| format!(" ({origin}:{l})")),
                None => None,
            };
            Error::config(key, format!("{message}{}", location.unwrap_or_default()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), format!("cannot read: {e}")))?;
        Self::parse(&text, &path.display().to_string(), overrides)
    }

    /// Cross-field checks that need no data.
    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        match (d.samples, &d.file) {
            (Some(_), Some(_)) => return Err(Error::config("dataset.file", "conflicts with dataset.samples")),
            (None, None) => return Err(Error::config("dataset.samples", "required unless dataset.file is set")),
            (Some(0), None) => return Err(Error::config("dataset.samples", "must be positive")),
            _ => {}
        }
        match (d.generator, d.noise) {
            (Generator::FactorShapes, Some(_)) => {
                return Err(Error::config("dataset.noise", "only applies to two-moons"))
            }
            (_, Some(n)) if !(n >= 0.0 && n.is_finite()) => {
                return Err(Error::config("dataset.noise", "must be finite and non-negative"))
            }
            _ => {}
        }
        if d.label_ratio.is_some() == d.labels_per_class.is_some() {
            return Err(Error::config(
                "dataset.label_ratio",
                "set exactly one of label_ratio and labels_per_class",
            ));
        }
        if let Some(r) = d.label_ratio {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::config(
                    "dataset.label_ratio",
                    format!("must lie in (0, 1], got {r}"),
                ));
            }
        }
        if d.test_fraction.is_some() && d.test_count.is_some() {
            return Err(Error::config(
                "dataset.test_count",
                "conflicts with dataset.test_fraction",
            ));
        }
        if let Some(f) = d.test_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::config(
                    "dataset.test_fraction",
                    format!("must lie in (0, 1), got {f}"),
                ));
            }
        }
        if d.generator.task() == Task::Regression && (d.stratify || d.labels_per_class.is_some()) {
            return Err(Error::config("dataset.stratify", "regression targets have no classes"));
        }

        let task = self.task();
        if task == Task::Classification && self.train.distance.is_some() {
            return Err(Error::config("train.distance", "only applies to regression"));
        }
        let arch = self.arch();
        arch.validate(task)?;
        let modality = d.generator.modality();
        if arch.input_width() != modality.width() {
            return Err(Error::config(
                "model.extractor",
                format!(
                    "{} inputs have width {}, the network expects {}",
                    d.generator.name(),
                    modality.width(),
                    arch.input_width()
                ),
            ));
        }
        if arch.output_width() != d.generator.outputs() {
            return Err(Error::config(
                "model.head",
                format!(
                    "{} needs {} outputs, the heads give {}",
                    d.generator.name(),
                    d.generator.outputs(),
                    arch.output_width()
                ),
            ));
        }
        self.train_config().validate(task)?;

        let o = &self.output;
        if o.boundary && modality != Modality::Point2d {
            return Err(Error::config("output.boundary", "decision boundaries need 2-D inputs"));
        }
        if o.boundary_resolution == 0 {
            return Err(Error::config("output.boundary_resolution", "must be positive"));
        }
        let [x0, x1, y0, y1] = o.boundary_bounds;
        if !(x0 < x1 && y0 < y1) || o.boundary_bounds.iter().any(|v| !v.is_finite()) {
            return Err(Error::config(
                "output.boundary_bounds",
                "need finite x_min < x_max and y_min < y_max",
            ));
        }

        let s = &self.sweep;
        if s.methods.is_empty() {
            return Err(Error::config("sweep.methods", "must not be empty"));
        }
        if s.seeds.is_empty() {
            return Err(Error::config("sweep.seeds", "must not be empty"));
        }
        if s.ratios.is_empty() {
            return Err(Error::config("sweep.ratios", "must not be empty"));
        }
        if let Some(r) = s.ratios.iter().find(|r| !(**r > 0.0 && **r <= 1.0)) {
            return Err(Error::config("sweep.ratios", format!("{r} is outside (0, 1]")));
        }
        for &m in &s.methods {
            if m.classification_only() && task != Task::Classification {
                return Err(Error::config(
                    "sweep.methods",
                    format!("{m} is only defined for classification"),
                ));
            }
        }
        Ok(())
    }

    pub fn task(&self) -> Task {
        self.dataset.generator.task()
    }

    pub fn arch(&self) -> ArchSpec {
        let base = self.dataset.generator.default_arch();
        ArchSpec {
            extractor: self.model.extractor.clone().unwrap_or(base.extractor),
            head: self.model.head.clone().unwrap_or(base.head),
            branches: self.model.branches.unwrap_or(base.branches),
        }
    }

    pub fn data_seed(&self) -> u64 {
        self.dataset.seed.unwrap_or(self.train.seed)
    }

    pub fn policies(&self) -> [AugPolicy; 2] {
        let a = &self.augment;
        let center = a.center.unwrap_or([0.5, 0.25]);
        let p = AugPolicy::new(self.dataset.generator.modality(), a.strength)
            .with_params(a.params())
            .with_center(center);
        [p, p]
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.task() {
            Task::Classification => LossKind::classification(),
            Task::Regression => LossKind::regression(self.train.distance.unwrap_or(Distance::L1)),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            method: t.method,
            eta: t.eta,
            grl_lambda: t.grl_lambda,
            sgd: SgdConfig {
                learning_rate: t.learning_rate,
                head_lr_multiplier: t.head_lr_multiplier,
                momentum: t.momentum,
                clip_norm: t.clip_norm,
            },
            ema_alpha: t.ema_alpha,
            epochs: t.epochs,
            labeled_batch: t.labeled_batch,
            unlabeled_batch: t.unlabeled_batch,
            seed: t.seed,
            loss: self.loss_kind(),
            policies: self.policies(),
            warmup_epochs: t.warmup_epochs,
            pseudo_threshold: t.pseudo_threshold,
            pi_dropout: t.pi_dropout,
        }
    }

    pub fn initial_bundle(&self) -> Result<ModelBundle> {
        let seed = self.model.seed.unwrap_or(self.train.seed);
        build_bundle(&self.arch(), self.task(), model_seeds(seed))
    }

    /// The full sample pool, before splitting.
    pub fn samples(&self) -> Result<Vec<Sample>> {
        let d = &self.dataset;
        if let Some(path) = &d.file {
            let (generator, samples) = crate::checkpoint::load_samples(path)?;
            if generator != d.generator {
                return Err(Error::config(
                    "dataset.file",
                    format!(
                        "{} holds {} samples, config says {}",
                        path.display(),
                        generator.name(),
                        d.generator.name()
                    ),
                ));
            }
            return Ok(samples);
        }
        let n = d.samples.expect("validated");
        match d.generator {
            Generator::TwoMoons => gen_two_moons(n, d.noise.unwrap_or(0.1), self.data_seed()),
            Generator::FactorShapes => gen_factor_shapes(n, self.data_seed()),
        }
    }

    pub fn label_spec(&self) -> LabelSpec {
        match (self.dataset.label_ratio, self.dataset.labels_per_class) {
            (_, Some(k)) => LabelSpec::PerClass(k),
            (r, None) => LabelSpec::Ratio(r.expect("validated")),
        }
    }

    pub fn holdout(&self) -> Holdout {
        match (self.dataset.test_fraction, self.dataset.test_count) {
            (_, Some(c)) => Holdout::Count(c),
            (Some(f), None) => Holdout::Fraction(f),
            (None, None) => Holdout::default(),
        }
    }

    pub fn split(&self) -> Result<DatasetSplit> {
        split_labeled(
            self.samples()?,
            self.label_spec(),
            self.holdout(),
            self.data_seed(),
            self.dataset.stratify,
        )
    }

    /// Copy of this config at another label ratio, method and seed, as run by
    /// one sweep cell. The seed drives data, split and training alike unless
    /// the dataset or model pins its own.
    pub fn cell(&self, method: Method, ratio: f64, seed: u64) -> Self {
        let mut c = self.clone();
        c.train.method = method;
        c.train.seed = seed;
        c.dataset.label_ratio = Some(ratio);
        c.dataset.labels_per_class = None;
        c
    }

    /// `output.dir`, unless the environment overrides it.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output.dir.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MOONS: &str = r#"
[dataset]
generator = "two-moons"
samples = 300
labels_per_class = 5
test_count = 100
stratify = true

[train]
method = "chi"
epochs = 2
"#;

    fn config_error(r: Result<ExperimentConfig>) -> (String, String) {
        match r {
            Err(Error::Config { key, message }) => (key, message),
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_file_parses_with_defaults() {
        let c = ExperimentConfig::parse(MOONS, "t.toml", &[]).unwrap();
        assert_eq!(c.train.method, Method::Chi);
        assert_eq!(c.train.eta, 0.1);
        assert_eq!(c.arch(), ArchSpec::two_moons(2));
        assert_eq!(c.holdout(), Holdout::Count(100));
        assert_eq!(c.label_spec(), LabelSpec::PerClass(5));
    }

    #[test]
    fn unknown_key_names_key_and_line() {
        let text = MOONS.replace("epochs = 2", "epochs = 2\netas = 0.3");
        let (key, message) = config_error(ExperimentConfig::parse(&text, "t.toml", &[]));
        assert_eq!(key, "train.etas");
        assert!(message.contains("t.toml:12"), "{message}");
    }

    #[test]
    fn wrong_type_names_key() {
        let text = MOONS.replace("epochs = 2", "epochs = \"two\"");
        let (key, _) = config_error(ExperimentConfig::parse(&text, "t.toml", &[]));
        assert_eq!(key, "train.epochs");
    }

    #[test]
    fn unknown_section_rejected() {
        let text = format!("{MOONS}\n[extra]\nx = 1\n");
        let (key, _) = config_error(ExperimentConfig::parse(&text, "t.toml", &[]));
        assert_eq!(key, "extra");
    }

    #[test]
    fn syntax_error_reports_line() {
        let (key, _) = config_error(ExperimentConfig::parse("[dataset]\ngenerator = \n", "t.toml", &[]));
        assert_eq!(key, "t.toml:2");
    }

    #[test]
    fn overrides_apply_in_order() {
        let sets = vec![
            "train.eta=0.5".to_string(),
            "train.method=label-only".into(),
            "train.eta=0.25".into(),
        ];
        let c = ExperimentConfig::parse(MOONS, "t.toml", &sets).unwrap();
        assert_eq!(c.train.eta, 0.25);
        assert_eq!(c.train.method, Method::LabelOnly);
        let c = ExperimentConfig::parse(MOONS, "t.toml", &["output.dir=runs/a".into()]).unwrap();
        assert_eq!(c.output.dir, PathBuf::from("runs/a"));
    }

    #[test]
    fn malformed_override_rejected() {
        let (key, _) = config_error(ExperimentConfig::parse(MOONS, "t.toml", &["eta=0.5".into()]));
        assert_eq!(key, "eta");
        assert!(ExperimentConfig::parse(MOONS, "t.toml", &["train.eta".into()]).is_err());
    }

    #[test]
    fn pseudo_label_on_regression_rejected() {
        let text = r#"
[dataset]
generator = "factor-shapes"
samples = 100
label_ratio = 0.1
[train]
method = "pseudo-label"
"#;
        let (key, _) = config_error(ExperimentConfig::parse(text, "t.toml", &[]));
        assert_eq!(key, "train.method");
    }

    #[test]
    fn conflicting_label_keys_rejected() {
        let text = MOONS.replace("labels_per_class = 5", "labels_per_class = 5\nlabel_ratio = 0.1");
        let (key, _) = config_error(ExperimentConfig::parse(&text, "t.toml", &[]));
        assert_eq!(key, "dataset.label_ratio");
    }

    #[test]
    fn mismatched_architecture_rejected() {
        let sets = ["model.extractor=[{input = 3, output = 32, activation = \"relu\"}, {input = 32, output = 32, activation = \"relu\"}]".to_string()];
        let (key, _) = config_error(ExperimentConfig::parse(MOONS, "t.toml", &sets));
        assert_eq!(key, "model.extractor");
    }

    #[test]
    fn config_survives_json_round_trip() {
        let c = ExperimentConfig::parse(MOONS, "t.toml", &["train.eta=0.1234567890123".into()]).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn cell_overrides_method_ratio_and_seed() {
        let c = ExperimentConfig::parse(MOONS, "t.toml", &[]).unwrap();
        let cell = c.cell(Method::PiModel, 0.5, 7);
        assert_eq!(cell.label_spec(), LabelSpec::Ratio(0.5));
        assert_eq!(cell.data_seed(), 7);
        assert_eq!(cell.train.method, Method::PiModel);
    }
}
