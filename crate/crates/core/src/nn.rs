//! Shared feature extractor, twin task heads, and the EMA shadow model.
//!
//! Every network here is a plain multilayer perceptron. A head may consist of
//! several independent branches whose outputs are concatenated; multi-factor
//! regression uses one single-output branch per factor on top of the shared
//! extractor.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Softmax,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub const fn new(input: usize, output: usize, activation: Activation) -> Self {
        Self {
            input,
            output,
            activation,
        }
    }
}

/// Layer stacks for the extractor and for one head branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub extractor: Vec<LayerSpec>,
    pub head: Vec<LayerSpec>,
    /// Independent branches per head, concatenated along the output axis.
    pub branches: usize,
}

impl ArchSpec {
    /// 2 → 32 → 32 extractor, 32 → 16 → `classes` heads.
    pub fn two_moons(classes: usize) -> Self {
        Self {
            extractor: vec![
                LayerSpec::new(2, 32, Activation::Relu),
                LayerSpec::new(32, 32, Activation::Relu),
            ],
            head: vec![
                LayerSpec::new(32, 16, Activation::Relu),
                LayerSpec::new(16, classes, Activation::Softmax),
            ],
            branches: 1,
        }
    }

    /// 1024 → 128 → 64 extractor, one 64 → 32 → 1 sigmoid branch per factor.
    pub fn factor_shapes(factors: usize) -> Self {
        Self {
            extractor: vec![
                LayerSpec::new(1024, 128, Activation::Relu),
                LayerSpec::new(128, 64, Activation::Relu),
            ],
            head: vec![
                LayerSpec::new(64, 32, Activation::Relu),
                LayerSpec::new(32, 1, Activation::Sigmoid),
            ],
            branches: factors,
        }
    }

    pub fn input_width(&self) -> usize {
        self.extractor.first().map_or(0, |l| l.input)
    }

    pub fn feature_width(&self) -> usize {
        self.extractor.last().map_or(0, |l| l.output)
    }

    pub fn output_width(&self) -> usize {
        self.branches * self.head.last().map_or(0, |l| l.output)
    }

    pub fn validate(&self, task: Task) -> Result<()> {
        let bad = |m: String| Err(Error::config("model", m));
        if self.extractor.is_empty() || self.head.is_empty() {
            return bad("extractor and head need at least one layer each".into());
        }
        if self.branches == 0 {
            return bad("head branches must be positive".into());
        }
        for (name, stack) in [("extractor", &self.extractor), ("head", &self.head)] {
            for (i, l) in stack.iter().enumerate() {
                if l.input == 0 || l.output == 0 {
                    return bad(format!("{name} layer {i} has a zero width"));
                }
                if let Some(next) = stack.get(i + 1) {
                    if next.input != l.output {
                        return bad(format!(
                            "{name} layer {i} outputs {} but layer {} expects {}",
                            l.output,
                            i + 1,
                            next.input
                        ));
                    }
                }
                let last_head_layer = name == "head" && i + 1 == stack.len();
                if l.activation == Activation::Softmax && !last_head_layer {
                    return bad(format!(
                        "{name} layer {i}: softmax is only allowed as the final head activation"
                    ));
                }
            }
        }
        if self.feature_width() != self.head[0].input {
            return bad(format!(
                "extractor outputs {} features but the head expects {}",
                self.feature_width(),
                self.head[0].input
            ));
        }
        let last = self.head.last().unwrap().activation;
        match task {
            Task::Regression if last != Activation::Sigmoid => bad("regression heads must end in sigmoid".into()),
            Task::Classification if last != Activation::Softmax => {
                bad("classification heads must end in softmax".into())
            }
            Task::Classification if self.branches != 1 => bad("classification heads have exactly one branch".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[input, output]`
    pub weight: Tensor,
    /// `[output]`
    pub bias: Tensor,
    pub activation: Activation,
}

impl Dense {
    fn init(spec: &LayerSpec, rng: &mut RngStream) -> Self {
        let limit = (6.0 / (spec.input + spec.output) as f64).sqrt();
        let data = (0..spec.input * spec.output)
            .map(|_| rng.uniform_range(-limit, limit))
            .collect();
        Self {
            weight: Tensor::new(vec![spec.input, spec.output], data).expect("consistent shape"),
            bias: Tensor::zeros(&[spec.output]),
            activation: spec.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    fn init(specs: &[LayerSpec], rng: &mut RngStream) -> Self {
        Self {
            layers: specs.iter().map(|s| Dense::init(s, rng)).collect(),
        }
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.bias.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub branches: Vec<Mlp>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    Extractor,
    Head1,
    Head2,
}

impl ParamGroup {
    pub fn is_head(self) -> bool {
        !matches!(self, ParamGroup::Extractor)
    }
}

/// Which heads produce the clean-input prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadMode {
    /// Elementwise mean of both heads.
    Both,
    /// First head only, for methods that never train the second.
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub extractor: u64,
    pub head1: u64,
    pub head2: u64,
}

/// Extractor θ plus heads φ1 and φ2.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub extractor: Mlp,
    pub heads: [Head; 2],
    pub task: Task,
    pub head_mode: HeadMode,
}

/// Builds a bundle with Xavier-uniform weights and zero biases. Each
/// component draws from its own seed, so the two heads differ.
pub fn build_bundle(arch: &ArchSpec, task: Task, seeds: Seeds) -> Result<ModelBundle> {
    arch.validate(task)?;
    if seeds.head1 == seeds.head2 {
        return Err(Error::config(
            "model.seeds",
            "head seeds must differ so the heads start from different parameters",
        ));
    }
    let mut rng = RngStream::new(seeds.extractor, "init/extractor");
    let extractor = Mlp::init(&arch.extractor, &mut rng);
    let head = |seed: u64| {
        let mut rng = RngStream::new(seed, "init/head");
        Head {
            branches: (0..arch.branches).map(|_| Mlp::init(&arch.head, &mut rng)).collect(),
        }
    };
    Ok(ModelBundle {
        extractor,
        heads: [head(seeds.head1), head(seeds.head2)],
        task,
        head_mode: HeadMode::Both,
    })
}

impl ModelBundle {
    pub fn input_width(&self) -> usize {
        self.extractor.layers[0].weight.shape()[0]
    }

    pub fn feature_width(&self) -> usize {
        self.extractor.output_width()
    }

    pub fn output_width(&self) -> usize {
        self.heads[0].branches.iter().map(Mlp::output_width).sum()
    }

    /// Parameters in a fixed order with stable names.
    pub fn named_params(&self) -> Vec<(String, ParamGroup, &Tensor)> {
        let mut out = Vec::new();
        push_mlp(&mut out, "extractor", ParamGroup::Extractor, &self.extractor);
        for (h, group) in [ParamGroup::Head1, ParamGroup::Head2].into_iter().enumerate() {
            for (b, mlp) in self.heads[h].branches.iter().enumerate() {
                push_mlp(&mut out, &format!("head{}.{b}", h + 1), group, mlp);
            }
        }
        out
    }

    /// Mutable view in the same order as [`named_params`](Self::named_params).
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        let mlps =
            std::iter::once(&mut self.extractor).chain(self.heads.iter_mut().flat_map(|h| h.branches.iter_mut()));
        for mlp in mlps {
            for l in &mut mlp.layers {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, _, t)| t.len()).sum()
    }

    /// Places every parameter on `tape` as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> BoundBundle {
        self.bind_with(tape, |_| true)
    }

    /// Places parameters on `tape`; groups for which `trainable` is false
    /// become constants and receive no gradient.
    pub fn bind_with(&self, tape: &mut Tape, trainable: impl Fn(ParamGroup) -> bool) -> BoundBundle {
        let mut bind_mlp = |prefix: &str, group: ParamGroup, mlp: &Mlp| BoundMlp {
            layers: mlp
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let (w, b) = if trainable(group) {
                        (
                            tape.param(format!("{prefix}.{i}.weight"), l.weight.clone()),
                            tape.param(format!("{prefix}.{i}.bias"), l.bias.clone()),
                        )
                    } else {
                        (tape.constant(l.weight.clone()), tape.constant(l.bias.clone()))
                    };
                    (w, b, l.activation)
                })
                .collect(),
        };
        let extractor = bind_mlp("extractor", ParamGroup::Extractor, &self.extractor);
        let mut heads = Vec::with_capacity(2);
        for (h, group) in [ParamGroup::Head1, ParamGroup::Head2].into_iter().enumerate() {
            heads.push(
                self.heads[h]
                    .branches
                    .iter()
                    .enumerate()
                    .map(|(b, mlp)| bind_mlp(&format!("head{}.{b}", h + 1), group, mlp))
                    .collect(),
            );
        }
        let second = heads.pop().unwrap();
        let first = heads.pop().unwrap();
        BoundBundle {
            extractor,
            heads: [first, second],
        }
    }

    /// Copies head 1's parameters onto head 2.
    pub fn tie_heads(&mut self) {
        self.heads[1] = self.heads[0].clone();
    }
}

fn push_mlp<'a>(out: &mut Vec<(String, ParamGroup, &'a Tensor)>, prefix: &str, group: ParamGroup, mlp: &'a Mlp) {
    for (i, l) in mlp.layers.iter().enumerate() {
        out.push((format!("{prefix}.{i}.weight"), group, &l.weight));
        out.push((format!("{prefix}.{i}.bias"), group, &l.bias));
    }
}

#[derive(Debug, Clone)]
pub struct BoundMlp {
    layers: Vec<(Var, Var, Activation)>,
}

impl BoundMlp {
    fn forward(&self, tape: &mut Tape, mut x: Var) -> Result<Var> {
        for &(w, b, act) in &self.layers {
            let z = tape.matmul(x, w)?;
            let z = tape.add(z, b)?;
            x = match act {
                Activation::Relu => tape.relu(z)?,
                Activation::Tanh => tape.tanh(z)?,
                Activation::Sigmoid => tape.sigmoid(z)?,
                Activation::Softmax => tape.softmax(z)?,
                Activation::Identity => z,
            };
        }
        Ok(x)
    }
}

/// A bundle whose parameters live on a tape.
#[derive(Debug, Clone)]
pub struct BoundBundle {
    extractor: BoundMlp,
    heads: [Vec<BoundMlp>; 2],
}

impl BoundBundle {
    /// θ(x)
    pub fn features(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.extractor.forward(tape, x)
    }

    /// φ_k(features), `k ∈ {0, 1}`.
    pub fn head(&self, tape: &mut Tape, k: usize, features: Var) -> Result<Var> {
        let branches = &self.heads[k];
        if branches.len() == 1 {
            return branches[0].forward(tape, features);
        }
        let outs = branches
            .iter()
            .map(|b| b.forward(tape, features))
            .collect::<Result<Vec<_>>>()?;
        tape.concat(&outs)
    }

    /// `(φ1∘θ)(x1)` and `(φ2∘θ)(x2)` sharing the same θ.
    pub fn forward_pair(&self, tape: &mut Tape, x1: Var, x2: Var) -> Result<(Var, Var)> {
        let (r1, r2) = (tape.shape(x1)?[0], tape.shape(x2)?[0]);
        if r1 != r2 {
            return Err(Error::Shape(format!("forward_pair: batch sizes differ ({r1} vs {r2})")));
        }
        let f1 = self.features(tape, x1)?;
        let f2 = self.features(tape, x2)?;
        Ok((self.head(tape, 0, f1)?, self.head(tape, 1, f2)?))
    }
}

/// Value-level dual-branch forward on already-augmented views.
pub fn forward_pair(bundle: &ModelBundle, x1: &Tensor, x2: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let bound = bundle.bind_with(&mut tape, |_| false);
    let (a, b) = (tape.constant(x1.clone()), tape.constant(x2.clone()));
    let (y1, y2) = bound.forward_pair(&mut tape, a, b)?;
    Ok((tape.value(y1)?.clone(), tape.value(y2)?.clone()))
}

/// Both heads' predictions on clean inputs.
pub fn predict_heads(bundle: &ModelBundle, x: &Tensor) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let bound = bundle.bind_with(&mut tape, |_| false);
    let xv = tape.constant(x.clone());
    let f = bound.features(&mut tape, xv)?;
    let y1 = bound.head(&mut tape, 0, f)?;
    let y2 = bound.head(&mut tape, 1, f)?;
    Ok((tape.value(y1)?.clone(), tape.value(y2)?.clone()))
}

/// Clean-input prediction: the mean of both heads, or head 1 alone when the
/// bundle's [`HeadMode`] is `First`.
pub fn forward_inference(bundle: &ModelBundle, x: &Tensor) -> Result<Tensor> {
    let (y1, y2) = predict_heads(bundle, x)?;
    Ok(match bundle.head_mode {
        HeadMode::First => y1,
        HeadMode::Both => {
            let data = y1.data().iter().zip(y2.data()).map(|(a, b)| (a + b) / 2.0).collect();
            Tensor::new(y1.shape().to_vec(), data)?
        }
    })
}

/// θ(x) on clean inputs.
pub fn extract_features(bundle: &ModelBundle, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = bundle.bind_with(&mut tape, |_| false);
    let xv = tape.constant(x.clone());
    let f = bound.features(&mut tape, xv)?;
    Ok(tape.value(f)?.clone())
}

/// Exponential moving average of a bundle's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaTwin {
    pub shadow: ModelBundle,
    pub alpha: f64,
}

impl EmaTwin {
    pub fn new(bundle: &ModelBundle, alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::config(
                "train.ema_alpha",
                format!("smoothing coefficient must lie in [0, 1], got {alpha}"),
            ));
        }
        Ok(Self {
            shadow: bundle.clone(),
            alpha,
        })
    }

    /// `shadow ← α·shadow + (1 − α)·current`, per parameter.
    pub fn update(&mut self, bundle: &ModelBundle) -> Result<()> {
        let alpha = self.alpha;
        let current = bundle.named_params();
        let shadow = self.shadow.params_mut();
        if current.len() != shadow.len() {
            return Err(Error::Shape("EMA twin does not mirror the bundle".into()));
        }
        for ((name, _, cur), sh) in current.into_iter().zip(shadow) {
            if cur.shape() != sh.shape() {
                return Err(Error::Shape(format!(
                    "EMA twin parameter {name}: {:?} vs {:?}",
                    sh.shape(),
                    cur.shape()
                )));
            }
            for (s, &c) in sh.data_mut().iter_mut().zip(cur.data()) {
                *s = alpha * *s + (1.0 - alpha) * c;
            }
        }
        Ok(())
    }
}

/// Functional form of [`EmaTwin::update`].
pub fn ema_update(twin: &EmaTwin, bundle: &ModelBundle) -> Result<EmaTwin> {
    let mut next = twin.clone();
    next.update(bundle)?;
    Ok(next)
}
