//! The optimization loop.

use serde::{Deserialize, Serialize};

use crate::augment::{AugPolicy, Strength};
use crate::autodiff::Tape;
use crate::data::{inputs, targets, DatasetSplit, Sample};
use crate::error::{Error, Result};
use crate::eval::{evaluate, head_disagreement, MetricsReport};
use crate::nn::{build_bundle, ArchSpec, EmaTwin, ModelBundle, Seeds, Task};
use crate::objectives::{method_loss, AugStreams, Batch, LabeledBatch, LossKind, Method, ObjectiveConfig};
use crate::optim::{sgd_momentum_step, SgdConfig, Velocity};
use crate::rng::{RngState, RngStream};
use crate::tensor::Tensor;
use rand::RngCore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub eta: f64,
    pub grl_lambda: f64,
    pub sgd: SgdConfig,
    pub ema_alpha: f64,
    pub epochs: usize,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub seed: u64,
    pub loss: LossKind,
    /// View policies. Every method augments labeled inputs with these (the
    /// single-head ones with the first only). On unlabeled inputs χ and its
    /// minimax ablation use them too, while the single-head baselines use the
    /// weak variant of the first.
    pub policies: [AugPolicy; 2],
    /// Ramp η linearly over this many epochs; 0 disables the ramp.
    pub warmup_epochs: usize,
    pub pseudo_threshold: f64,
    pub pi_dropout: f64,
}

impl TrainConfig {
    pub fn new(method: Method, loss: LossKind, policies: [AugPolicy; 2]) -> Self {
        Self {
            method,
            eta: 0.1,
            grl_lambda: 1.0,
            sgd: SgdConfig::default(),
            ema_alpha: 0.99,
            epochs: 10,
            labeled_batch: 32,
            unlabeled_batch: 32,
            seed: 0,
            loss,
            policies,
            warmup_epochs: 0,
            pseudo_threshold: 0.95,
            pi_dropout: 0.0,
        }
    }

    pub fn validate(&self, task: Task) -> Result<()> {
        self.sgd.validate()?;
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::config("train.eta", "must be finite and non-negative"));
        }
        if !(self.grl_lambda >= 0.0 && self.grl_lambda.is_finite()) {
            return Err(Error::config("train.grl_lambda", "must be finite and non-negative"));
        }
        if self.labeled_batch == 0 {
            return Err(Error::config("train.labeled_batch", "must be at least 1"));
        }
        if self.unlabeled_batch == 0 {
            return Err(Error::config("train.unlabeled_batch", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.ema_alpha) {
            return Err(Error::config("train.ema_alpha", "must lie in [0, 1]"));
        }
        if !(self.pseudo_threshold > 0.0 && self.pseudo_threshold <= 1.0) {
            return Err(Error::config("train.pseudo_threshold", "must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.pi_dropout) {
            return Err(Error::config("train.pi_dropout", "must lie in [0, 1)"));
        }
        if self.loss.task != task {
            return Err(Error::config("train.loss", "loss task differs from the dataset task"));
        }
        if self.method.classification_only() && task != Task::Classification {
            return Err(Error::config(
                "train.method",
                format!("{} is only defined for classification", self.method),
            ));
        }
        for p in &self.policies {
            p.params.validate()?;
        }
        Ok(())
    }

    /// `(labeled, unlabeled)` view policies for this method.
    pub fn effective_policies(&self) -> ([AugPolicy; 2], [AugPolicy; 2]) {
        let with = |strength| AugPolicy {
            strength,
            ..self.policies[0]
        };
        let none = [with(Strength::None), with(Strength::None)];
        let weak = [with(Strength::Weak), with(Strength::Weak)];
        match self.method {
            Method::ChiNoAug => (none, none),
            Method::PiModel | Method::MeanTeacher | Method::PseudoLabel | Method::EntropyMin => (self.policies, weak),
            Method::LabelOnly | Method::Chi | Method::ChiNoMinimax => (self.policies, self.policies),
        }
    }
}

/// Extractor and head seeds derived from a master seed.
pub fn model_seeds(master: u64) -> Seeds {
    let mut rng = RngStream::new(master, "init/seeds");
    let extractor = rng.next_u64();
    let head1 = rng.next_u64();
    let mut head2 = rng.next_u64();
    if head2 == head1 {
        head2 ^= 1;
    }
    Seeds {
        extractor,
        head1,
        head2,
    }
}

/// Cycles through `0..n` in shuffled order, reshuffling after each pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampler {
    order: Vec<usize>,
    pos: usize,
    rng: RngStream,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerState {
    pub order: Vec<usize>,
    pub pos: usize,
    pub rng: RngState,
}

impl Sampler {
    pub fn new(n: usize, mut rng: RngStream) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        Self { order, pos: 0, rng }
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        if self.order.is_empty() {
            return Vec::new();
        }
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.pos == self.order.len() {
                self.rng.shuffle(&mut self.order);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }

    pub fn state(&self) -> SamplerState {
        SamplerState {
            order: self.order.clone(),
            pos: self.pos,
            rng: self.rng.state(),
        }
    }

    pub fn from_state(s: SamplerState) -> Result<Self> {
        if s.pos > s.order.len() {
            return Err(Error::Format("sampler position past its order".into()));
        }
        Ok(Self {
            order: s.order,
            pos: s.pos,
            rng: RngStream::from_state(s.rng),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean supervised loss over the epoch's steps.
    pub supervised: f64,
    /// Mean unsupervised term, before η weighting.
    pub unsupervised: f64,
    /// Head disagreement on the unlabeled set after the epoch.
    pub disagreement: f64,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

/// Everything that evolves during training. Together with the config and
/// the data it determines the rest of the run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub bundle: ModelBundle,
    pub velocity: Velocity,
    pub twin: Option<EmaTwin>,
    pub streams: AugStreams,
    pub labeled: Sampler,
    pub unlabeled: Sampler,
    pub epoch: usize,
    pub history: History,
}

impl TrainState {
    pub fn initial(cfg: &TrainConfig, bundle: ModelBundle, data: &DatasetSplit) -> Result<Self> {
        let mut bundle = bundle;
        bundle.head_mode = cfg.method.head_mode();
        let twin = match cfg.method {
            Method::MeanTeacher => Some(EmaTwin::new(&bundle, cfg.ema_alpha)?),
            _ => None,
        };
        Ok(Self {
            velocity: Velocity::zeros(&bundle),
            bundle,
            twin,
            streams: AugStreams::new(cfg.seed),
            labeled: Sampler::new(data.labeled.len(), RngStream::new(cfg.seed, "sampler/labeled")),
            unlabeled: Sampler::new(data.unlabeled.len(), RngStream::new(cfg.seed, "sampler/unlabeled")),
            epoch: 0,
            history: History::default(),
        })
    }
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a DatasetSplit,
    state: TrainState,
    classes: usize,
    labeled_x: Tensor,
    unlabeled_x: Tensor,
}

impl<'a> Trainer<'a> {
    /// Fresh run with parameters initialized from `cfg.seed`.
    pub fn new(cfg: TrainConfig, arch: &ArchSpec, task: Task, data: &'a DatasetSplit) -> Result<Self> {
        let bundle = build_bundle(arch, task, model_seeds(cfg.seed))?;
        Self::with_bundle(cfg, bundle, data)
    }

    pub fn with_bundle(cfg: TrainConfig, bundle: ModelBundle, data: &'a DatasetSplit) -> Result<Self> {
        let state = TrainState::initial(&cfg, bundle, data)?;
        Self::resume(cfg, data, state)
    }

    /// Continues from a saved state. The state must come from a run with
    /// the same config and data.
    pub fn resume(cfg: TrainConfig, data: &'a DatasetSplit, state: TrainState) -> Result<Self> {
        cfg.validate(state.bundle.task)?;
        if data.labeled.is_empty() {
            return Err(Error::config("dataset", "no labeled samples"));
        }
        if data.test.is_empty() {
            return Err(Error::config("dataset.test", "the test split is empty"));
        }
        let width = state.bundle.input_width();
        for s in data.labeled.iter().chain(&data.unlabeled).chain(&data.test) {
            if s.input.len() != width {
                return Err(Error::config(
                    "model",
                    format!("network expects {width} inputs, sample {} has {}", s.id, s.input.len()),
                ));
            }
        }
        if cfg.method == Method::MeanTeacher && state.twin.is_none() {
            return Err(Error::invalid("mean teacher state lacks an EMA twin"));
        }
        let classes = state.bundle.output_width();
        let all = |s: &'a [Sample]| -> Result<Tensor> {
            if s.is_empty() {
                Ok(Tensor::zeros(&[0, width]))
            } else {
                inputs(&s.iter().collect::<Vec<_>>())
            }
        };
        Ok(Self {
            labeled_x: all(&data.labeled)?,
            unlabeled_x: all(&data.unlabeled)?,
            cfg,
            data,
            state,
            classes,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    /// Steps per epoch: one pass over the unlabeled set, or over the labeled
    /// set when there is no unlabeled data. Independent of the method so all
    /// methods on one split take the same number of steps.
    pub fn steps_per_epoch(&self) -> usize {
        let n_u = self.data.unlabeled.len();
        if n_u > 0 {
            n_u.div_ceil(self.cfg.unlabeled_batch)
        } else {
            self.data.labeled.len().div_ceil(self.cfg.labeled_batch)
        }
    }

    fn eta_for_epoch(&self, epoch: usize) -> f64 {
        if self.data.unlabeled.is_empty() {
            return 0.0;
        }
        match self.cfg.warmup_epochs {
            0 => self.cfg.eta,
            w => self.cfg.eta * ((epoch + 1) as f64 / w as f64).min(1.0),
        }
    }

    fn next_batch(&mut self) -> Result<Batch> {
        let li = self.state.labeled.next_batch(self.cfg.labeled_batch);
        let refs: Vec<&Sample> = li.iter().map(|&i| &self.data.labeled[i]).collect();
        let labeled = LabeledBatch {
            inputs: self.labeled_x.select_rows(&li),
            targets: targets(&refs, self.classes)?,
        };
        let unlabeled = if self.cfg.method.uses_unlabeled() {
            let ui = self.state.unlabeled.next_batch(self.cfg.unlabeled_batch);
            self.unlabeled_x.select_rows(&ui)
        } else {
            Tensor::zeros(&[0, self.unlabeled_x.cols()])
        };
        Ok(Batch { labeled, unlabeled })
    }

    /// One optimization step. Returns the supervised and unsupervised terms.
    pub fn step(&mut self, eta: f64) -> Result<(f64, f64)> {
        let batch = self.next_batch()?;
        let (labeled_policies, policies) = self.cfg.effective_policies();
        let obj = ObjectiveConfig {
            kind: self.cfg.loss,
            labeled_policies,
            policies,
            eta,
            grl_lambda: self.cfg.grl_lambda,
            threshold: self.cfg.pseudo_threshold,
            dropout: self.cfg.pi_dropout,
        };
        let mut tape = Tape::new();
        let bound = self.state.bundle.bind(&mut tape);
        let terms = method_loss(
            self.cfg.method,
            &mut tape,
            &bound,
            self.state.twin.as_ref(),
            &batch,
            &obj,
            &mut self.state.streams,
        )?;
        let total = tape.value(terms.total)?.item();
        if !total.is_finite() {
            return Err(Error::Numeric(format!(
                "{} loss became {total} in epoch {}",
                self.cfg.method, self.state.epoch
            )));
        }
        let mut grads = tape.backward(terms.total)?;
        sgd_momentum_step(
            &mut self.state.bundle,
            &mut grads,
            &mut self.state.velocity,
            &self.cfg.sgd,
        )?;
        if let Some(twin) = &mut self.state.twin {
            twin.update(&self.state.bundle)?;
        }
        Ok((terms.supervised, terms.unsupervised))
    }

    pub fn run_epoch(&mut self) -> Result<&EpochRecord> {
        let eta = self.eta_for_epoch(self.state.epoch);
        let steps = self.steps_per_epoch();
        let (mut sup, mut unsup) = (0.0, 0.0);
        for _ in 0..steps {
            let (s, u) = self.step(eta)?;
            sup += s;
            unsup += u;
        }
        let record = EpochRecord {
            epoch: self.state.epoch + 1,
            supervised: sup / steps as f64,
            unsupervised: unsup / steps as f64,
            disagreement: head_disagreement(&self.state.bundle, &self.data.unlabeled, self.cfg.loss)?,
            metrics: evaluate(&self.state.bundle, &self.data.test)?,
        };
        self.state.epoch += 1;
        self.state.history.records.push(record);
        Ok(self.state.history.records.last().expect("just pushed"))
    }

    /// Trains until `epoch` epochs have completed in total.
    pub fn run_until(&mut self, epoch: usize) -> Result<()> {
        while self.state.epoch < epoch {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_until(self.cfg.epochs)
    }
}

/// Trains from scratch for `cfg.epochs` epochs.
pub fn train(cfg: TrainConfig, arch: &ArchSpec, task: Task, data: &DatasetSplit) -> Result<(ModelBundle, History)> {
    let mut t = Trainer::new(cfg, arch, task, data)?;
    t.run()?;
    let state = t.into_state();
    Ok((state.bundle, state.history))
}
