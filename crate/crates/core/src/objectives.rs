//! Training objectives.
//!
//! Each objective records its forward pass on a [`Tape`] and returns a
//! scalar [`Var`] to differentiate, together with the plain values of its
//! supervised and unsupervised parts.
//!
//! The χ objective realizes the minimax game in one backward pass. Unlabeled
//! features pass through a gradient-reversal node before reaching the heads,
//! and the recorded loss is `L_s − η·L_u`. The heads therefore descend on
//! `L_s − η·L_u` (pushing their unlabeled predictions apart), while the
//! reversal flips the unlabeled gradient at the feature boundary so the
//! extractor descends on `L_s + η·λ·L_u`.

use serde::{Deserialize, Serialize};

use crate::augment::{augment_batch, sample_pair_batch, AugPolicy};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{predict_heads, BoundBundle, EmaTwin, HeadMode, Task};
use crate::rng::RngStream;
use crate::tensor::Tensor;

const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    L1,
    /// Mean squared error, no square root.
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossKind {
    pub task: Task,
    /// Regression distance for both the supervised and consistency terms.
    pub distance: Distance,
}

impl LossKind {
    pub fn classification() -> Self {
        Self {
            task: Task::Classification,
            distance: Distance::L1,
        }
    }

    pub fn regression(distance: Distance) -> Self {
        Self {
            task: Task::Regression,
            distance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    LabelOnly,
    PiModel,
    MeanTeacher,
    PseudoLabel,
    EntropyMin,
    Chi,
    ChiNoMinimax,
    ChiNoAug,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::LabelOnly,
        Method::PiModel,
        Method::MeanTeacher,
        Method::PseudoLabel,
        Method::EntropyMin,
        Method::Chi,
        Method::ChiNoMinimax,
        Method::ChiNoAug,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::LabelOnly => "label-only",
            Method::PiModel => "pi-model",
            Method::MeanTeacher => "mean-teacher",
            Method::PseudoLabel => "pseudo-label",
            Method::EntropyMin => "entropy-min",
            Method::Chi => "chi",
            Method::ChiNoMinimax => "chi-no-minimax",
            Method::ChiNoAug => "chi-no-aug",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name() == s)
    }

    pub fn uses_unlabeled(self) -> bool {
        self != Method::LabelOnly
    }

    /// Whether prediction uses both heads or only the first.
    pub fn head_mode(self) -> HeadMode {
        match self {
            Method::LabelOnly | Method::Chi | Method::ChiNoMinimax | Method::ChiNoAug => HeadMode::Both,
            _ => HeadMode::First,
        }
    }

    pub fn classification_only(self) -> bool {
        matches!(self, Method::PseudoLabel | Method::EntropyMin)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes { labels: Vec<usize>, classes: usize },
    Values(Tensor),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Values(t) => t.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// One-hot matrix for class targets, the raw values otherwise.
    pub fn dense(&self) -> Tensor {
        match self {
            Targets::Classes { labels, classes } => one_hot(labels, *classes),
            Targets::Values(t) => t.clone(),
        }
    }
}

pub fn one_hot(labels: &[usize], classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), classes]);
    for (i, &c) in labels.iter().enumerate() {
        t.data_mut()[i * classes + c] = 1.0;
    }
    t
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledBatch {
    pub inputs: Tensor,
    pub targets: Targets,
}

/// One optimization step's worth of data. Unlabeled inputs carry no targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub labeled: LabeledBatch,
    pub unlabeled: Tensor,
}

/// Random streams consumed by the objectives. Labeled and unlabeled views
/// draw from separate streams so a method that ignores unlabeled data sees
/// the same labeled views as one that uses it.
#[derive(Debug, Clone, PartialEq)]
pub struct AugStreams {
    pub labeled: RngStream,
    pub unlabeled: RngStream,
    pub dropout: RngStream,
}

impl AugStreams {
    pub fn new(seed: u64) -> Self {
        Self {
            labeled: RngStream::new(seed, "aug/labeled"),
            unlabeled: RngStream::new(seed, "aug/unlabeled"),
            dropout: RngStream::new(seed, "dropout"),
        }
    }
}

/// Knobs shared by every objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveConfig {
    pub kind: LossKind,
    /// View policies for labeled inputs. Single-head objectives use the first.
    pub labeled_policies: [AugPolicy; 2],
    /// View policies for unlabeled inputs.
    pub policies: [AugPolicy; 2],
    /// Weight of the unsupervised term.
    pub eta: f64,
    /// Gradient-reversal coefficient for the χ objective.
    pub grl_lambda: f64,
    /// Confidence threshold for pseudo-labels.
    pub threshold: f64,
    /// Dropout rate on extractor features, Π-model only.
    pub dropout: f64,
}

/// A recorded objective. `total` is what gets differentiated.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub supervised: f64,
    pub unsupervised: f64,
}

fn check_simplex(t: &Tensor, what: &str) -> Result<()> {
    for r in 0..t.rows() {
        let row = t.row(r);
        if row.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!("{what} row {r} = {row:?}")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL || row.iter().any(|&p| p < -SIMPLEX_TOL) {
            return Err(Error::NonSimplex(format!("{what} row {r} = {row:?}")));
        }
    }
    Ok(())
}

fn same_shape(tape: &Tape, a: Var, b: Var, what: &'static str) -> Result<()> {
    let (sa, sb) = (tape.shape(a)?, tape.shape(b)?);
    if sa != sb {
        return Err(Error::ShapeMismatch {
            primitive: what,
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        });
    }
    Ok(())
}

fn batch_rows(tape: &Tape, v: Var) -> Result<f64> {
    Ok(tape.shape(v)?[0].max(1) as f64)
}

/// Regression distance between two equally shaped predictions, averaged
/// over every element.
fn distance(tape: &mut Tape, a: Var, b: Var, d: Distance) -> Result<Var> {
    let diff = tape.sub(a, b)?;
    let e = match d {
        Distance::L1 => tape.abs(diff)?,
        Distance::L2 => tape.square(diff)?,
    };
    tape.mean(e)
}

/// `−(1/B)·Σ target ⊙ ln p` for a `[B, C]` probability matrix.
fn cross_entropy(tape: &mut Tape, probs: Var, target: Tensor) -> Result<Var> {
    let rows = batch_rows(tape, probs)?;
    let t = tape.constant(target);
    same_shape(tape, probs, t, "cross_entropy")?;
    let logp = tape.log(probs)?;
    let prod = tape.mul(t, logp)?;
    let s = tape.sum(prod)?;
    tape.scale(s, -1.0 / rows)
}

/// ℓ_s for a single head.
pub fn supervised_term(tape: &mut Tape, y_hat: Var, y: &Targets, kind: LossKind) -> Result<Var> {
    match (kind.task, y) {
        (Task::Classification, Targets::Classes { .. }) => {
            check_simplex(tape.value(y_hat)?, "prediction")?;
            cross_entropy(tape, y_hat, y.dense())
        }
        (Task::Regression, Targets::Values(t)) => {
            let t = tape.constant(t.clone());
            same_shape(tape, y_hat, t, "supervised_loss")?;
            distance(tape, y_hat, t, kind.distance)
        }
        _ => Err(Error::invalid("target type does not match the task")),
    }
}

/// `ℓ_s(ŷ1, y) + ℓ_s(ŷ2, y)`, each averaged over the batch.
pub fn supervised_loss(tape: &mut Tape, y1_hat: Var, y2_hat: Var, y: &Targets, kind: LossKind) -> Result<Var> {
    let a = supervised_term(tape, y1_hat, y, kind)?;
    let b = supervised_term(tape, y2_hat, y, kind)?;
    tape.add(a, b)
}

/// `KL(p‖q) + KL(q‖p)` per row, averaged over rows. Equivalent to
/// `Σ (p − q)(ln p − ln q)` with logs clamped at [`LOG_FLOOR`](crate::autodiff::LOG_FLOOR).
pub fn symmetric_kl(tape: &mut Tape, p: Var, q: Var) -> Result<Var> {
    same_shape(tape, p, q, "symmetric_kl")?;
    check_simplex(tape.value(p)?, "p")?;
    check_simplex(tape.value(q)?, "q")?;
    let rows = batch_rows(tape, p)?;
    let diff = tape.sub(p, q)?;
    let lp = tape.log(p)?;
    let lq = tape.log(q)?;
    let ldiff = tape.sub(lp, lq)?;
    let prod = tape.mul(diff, ldiff)?;
    let s = tape.sum(prod)?;
    tape.scale(s, 1.0 / rows)
}

/// ℓ_u between two predictions: the regression distance, or symmetric KL
/// for classification.
pub fn consistency_loss(tape: &mut Tape, y1_hat: Var, y2_hat: Var, kind: LossKind) -> Result<Var> {
    match kind.task {
        Task::Classification => symmetric_kl(tape, y1_hat, y2_hat),
        Task::Regression => {
            same_shape(tape, y1_hat, y2_hat, "consistency_loss")?;
            distance(tape, y1_hat, y2_hat, kind.distance)
        }
    }
}

/// `−(1/B)·Σ p ln p` over rows of a probability matrix.
pub fn entropy(tape: &mut Tape, p: Var) -> Result<Var> {
    check_simplex(tape.value(p)?, "prediction")?;
    let rows = batch_rows(tape, p)?;
    let lp = tape.log(p)?;
    let prod = tape.mul(p, lp)?;
    let s = tape.sum(prod)?;
    tape.scale(s, -1.0 / rows)
}

/// Pseudo-label targets: the one-hot argmax of each row whose top
/// probability reaches `threshold`, a zero row otherwise. Ties go to the
/// lower class index.
pub fn pseudo_targets(probs: &Tensor, threshold: f64) -> Tensor {
    let c = probs.cols();
    let mut out = Tensor::zeros(probs.shape());
    for r in 0..probs.rows() {
        let row = probs.row(r);
        let (arg, &best) = row
            .iter()
            .enumerate()
            .fold((0, &row[0]), |acc, (i, v)| if *v > *acc.1 { (i, v) } else { acc });
        if best >= threshold {
            out.data_mut()[r * c + arg] = 1.0;
        }
    }
    out
}

/// Augmented views for one step. Labeled pairs come from the labeled stream,
/// unlabeled pairs from the unlabeled stream, one pair per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PairViews {
    pub labeled: (Tensor, Tensor),
    pub unlabeled: (Tensor, Tensor),
}

pub fn draw_pair_views(batch: &Batch, cfg: &ObjectiveConfig, rngs: &mut AugStreams) -> Result<PairViews> {
    let (l, u) = (&cfg.labeled_policies, &cfg.policies);
    Ok(PairViews {
        labeled: sample_pair_batch(&batch.labeled.inputs, &l[0], &l[1], &mut rngs.labeled)?,
        unlabeled: sample_pair_batch(&batch.unlabeled, &u[0], &u[1], &mut rngs.unlabeled)?,
    })
}

fn combine(tape: &mut Tape, sup: Var, unsup: Option<Var>, weight: f64) -> Result<LossTerms> {
    let supervised = tape.value(sup)?.item();
    match unsup {
        None => Ok(LossTerms {
            total: sup,
            supervised,
            unsupervised: 0.0,
        }),
        Some(u) => {
            let unsupervised = tape.value(u)?.item();
            let scaled = tape.scale(u, weight)?;
            Ok(LossTerms {
                total: tape.add(sup, scaled)?,
                supervised,
                unsupervised,
            })
        }
    }
}

fn check_unlabeled(batch: &Batch, eta: f64) -> Result<bool> {
    if eta < 0.0 || !eta.is_finite() {
        return Err(Error::config(
            "train.eta",
            format!("must be finite and non-negative, got {eta}"),
        ));
    }
    let empty = batch.unlabeled.rows() == 0 || batch.unlabeled.is_empty();
    if empty && eta > 0.0 {
        return Err(Error::config(
            "train.eta",
            "an unsupervised weight needs a non-empty unlabeled batch",
        ));
    }
    Ok(!empty)
}

/// Dual-head supervised loss on paired labeled views. The baseline that
/// ignores unlabeled data.
pub fn label_only_loss(
    tape: &mut Tape,
    bound: &BoundBundle,
    labeled: &LabeledBatch,
    cfg: &ObjectiveConfig,
    rngs: &mut AugStreams,
) -> Result<LossTerms> {
    let [p1, p2] = &cfg.labeled_policies;
    let (v1, v2) = sample_pair_batch(&labeled.inputs, p1, p2, &mut rngs.labeled)?;
    let (x1, x2) = (tape.constant(v1), tape.constant(v2));
    let (y1, y2) = bound.forward_pair(tape, x1, x2)?;
    let sup = supervised_loss(tape, y1, y2, &labeled.targets, cfg.kind)?;
    combine(tape, sup, None, 0.0)
}

/// χ objective on pre-drawn views. With `minimax` false the reversal is
/// omitted and the unsupervised term is added, so every parameter
/// minimizes `L_s + η·L_u`.
pub fn chi_loss_on_views(
    tape: &mut Tape,
    bound: &BoundBundle,
    views: &PairViews,
    targets: &Targets,
    cfg: &ObjectiveConfig,
    minimax: bool,
) -> Result<LossTerms> {
    let (x1, x2) = (
        tape.constant(views.labeled.0.clone()),
        tape.constant(views.labeled.1.clone()),
    );
    let (y1, y2) = bound.forward_pair(tape, x1, x2)?;
    let sup = supervised_loss(tape, y1, y2, targets, cfg.kind)?;

    if views.unlabeled.0.rows() == 0 {
        return combine(tape, sup, None, 0.0);
    }
    let u1 = tape.constant(views.unlabeled.0.clone());
    let u2 = tape.constant(views.unlabeled.1.clone());
    let mut f1 = bound.features(tape, u1)?;
    let mut f2 = bound.features(tape, u2)?;
    if minimax {
        f1 = tape.grad_reverse(f1, cfg.grl_lambda)?;
        f2 = tape.grad_reverse(f2, cfg.grl_lambda)?;
    }
    let p1 = bound.head(tape, 0, f1)?;
    let p2 = bound.head(tape, 1, f2)?;
    let unsup = consistency_loss(tape, p1, p2, cfg.kind)?;
    let weight = if minimax { -cfg.eta } else { cfg.eta };
    combine(tape, sup, Some(unsup), weight)
}

/// Supervised loss on both heads plus the minimax consistency game on
/// unlabeled data.
pub fn chi_training_loss(
    tape: &mut Tape,
    bound: &BoundBundle,
    batch: &Batch,
    cfg: &ObjectiveConfig,
    rngs: &mut AugStreams,
) -> Result<LossTerms> {
    if cfg.grl_lambda < 0.0 {
        return Err(Error::config("train.grl_lambda", "must be non-negative"));
    }
    check_unlabeled(batch, cfg.eta)?;
    let views = draw_pair_views(batch, cfg, rngs)?;
    chi_loss_on_views(tape, bound, &views, &batch.labeled.targets, cfg, true)
}

/// The w/o-minimax ablation: same views and terms, all parameters minimize
/// `L_s + η·L_u`.
pub fn chi_no_minimax_loss(
    tape: &mut Tape,
    bound: &BoundBundle,
    batch: &Batch,
    cfg: &ObjectiveConfig,
    rngs: &mut AugStreams,
) -> Result<LossTerms> {
    check_unlabeled(batch, cfg.eta)?;
    let views = draw_pair_views(batch, cfg, rngs)?;
    chi_loss_on_views(tape, bound, &views, &batch.labeled.targets, cfg, false)
}

fn single_head_supervised(
    tape: &mut Tape,
    bound: &BoundBundle,
    labeled: &LabeledBatch,
    cfg: &ObjectiveConfig,
    rngs: &mut AugStreams,
) -> Result<Var> {
    let view = augment_batch(&labeled.inputs, &cfg.labeled_policies[0], &mut rngs.labeled)?;
    let x = tape.constant(view);
    let f = bound.features(tape, x)?;
    let y = bound.head(tape, 0, f)?;
    supervised_term(tape, y, &labeled.targets, cfg.kind)
}

fn dropout_mask(tape: &mut Tape, features: Var, rate: f64, rng: &mut RngStream) -> Result<Var> {
    if rate <= 0.0 {
        return Ok(features);
    }
    let keep = 1.0 - rate;
    let shape = tape.shape(features)?.to_vec();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let mask = tape.constant(Tensor::new(shape, data)?);
    tape.mul(features, mask)
}

/// Single head, two views of each unlabeled input, consistency minimized by
/// every parameter.
pub fn pi_model_loss(
    tape: &mut Tape,
    bound: &BoundBundle,
    batch: &Batch,
    cfg: &ObjectiveConfig,
    rngs: &mut AugStreams,
) -> Result<LossTerms> {
    if !(0.0..1.0).contains(&cfg.dropout) {
        return Err(Error::config("train.pi_dropout", "must lie in [0, 1)"));
    }
    let has_unlabeled = check_unlabeled(batch, cfg.eta)?;
    let sup = single_head_supervised(tape, bound, &batch.labeled, cfg, rngs)?;
    if !has_unlabeled {
        return combine(tape, sup, None, 0.0);
    }
    let (v1, v2) = sample_pair_batch(
        &batch.unlabeled,
        &cfg.policies[0],
        &cfg.policies[1],
        &mut rngs.unlabeled,
    )?;
    let mut preds = Vec::with_capacity(2);
    for v in [v1, v2] {
        let x = tape.constant(v);
        let f = bound.features(tape, x)?;
        let f = dropout_mask(tape, f, cfg.dropout, &mut rngs.dropout)?;
        preds.push(bound.head(tape, 0, f)?);
    }
    let unsup = consistency_loss(tape, preds[0], preds[1], cfg.kind)?;
    combine(tape, sup, Some(unsup), cfg.eta)
}

/// Student (head 1) regularized toward the EMA teacher's head-1 prediction
/// on a second view. The teacher is evaluated off the tape and enters as a
/// constant.
pub fn mean_teacher_loss(
    tape: &mut Tape,
    bound: &BoundBundle,
    twin: &EmaTwin,
    batch: &Batch,
    cfg: &ObjectiveConfig,
    rngs: &mut AugStreams,
) -> Result<LossTerms> {
    let has_unlabeled = check_unlabeled(batch, cfg.eta)?;
    let sup = single_head_supervised(tape, bound, &batch.labeled, cfg, rngs)?;
    if !has_unlabeled {
        return combine(tape, sup, None, 0.0);
    }
    let (v1, v2) = sample_pair_batch(
        &batch.unlabeled,
        &cfg.policies[0],
        &cfg.policies[1],
        &mut rngs.unlabeled,
    )?;
    let (teacher, _) = predict_heads(&twin.shadow, &v2)?;
    let x = tape.constant(v1);
    let f = bound.features(tape, x)?;
    let student = bound.head(tape, 0, f)?;
    let teacher = tape.constant(teacher);
    let unsup = consistency_loss(tape, student, teacher, cfg.kind)?;
    combine(tape, sup, Some(unsup), cfg.eta)
}

/// Cross-entropy against confident argmax predictions on unlabeled views.
/// The pseudo-labels are constants; rows below the threshold contribute 0.
pub fn pseudo_label_loss(
    tape: &mut Tape,
    bound: &BoundBundle,
    batch: &Batch,
    cfg: &ObjectiveConfig,
    rngs: &mut AugStreams,
) -> Result<LossTerms> {
    if cfg.kind.task != Task::Classification {
        return Err(Error::config(
            "train.method",
            "pseudo-label requires a classification task",
        ));
    }
    if !(cfg.threshold > 0.0 && cfg.threshold <= 1.0) {
        return Err(Error::config("train.pseudo_threshold", "must lie in (0, 1]"));
    }
    let has_unlabeled = check_unlabeled(batch, cfg.eta)?;
    let sup = single_head_supervised(tape, bound, &batch.labeled, cfg, rngs)?;
    if !has_unlabeled {
        return combine(tape, sup, None, 0.0);
    }
    let view = augment_batch(&batch.unlabeled, &cfg.policies[0], &mut rngs.unlabeled)?;
    let x = tape.constant(view);
    let f = bound.features(tape, x)?;
    let p = bound.head(tape, 0, f)?;
    check_simplex(tape.value(p)?, "prediction")?;
    let targets = pseudo_targets(tape.value(p)?, cfg.threshold);
    let unsup = cross_entropy(tape, p, targets)?;
    combine(tape, sup, Some(unsup), cfg.eta)
}

/// Supervised loss plus η times the mean prediction entropy on unlabeled
/// views.
pub fn entropy_min_loss(
    tape: &mut Tape,
    bound: &BoundBundle,
    batch: &Batch,
    cfg: &ObjectiveConfig,
    rngs: &mut AugStreams,
) -> Result<LossTerms> {
    if cfg.kind.task != Task::Classification {
        return Err(Error::config(
            "train.method",
            "entropy-min requires a classification task",
        ));
    }
    let has_unlabeled = check_unlabeled(batch, cfg.eta)?;
    let sup = single_head_supervised(tape, bound, &batch.labeled, cfg, rngs)?;
    if !has_unlabeled {
        return combine(tape, sup, None, 0.0);
    }
    let view = augment_batch(&batch.unlabeled, &cfg.policies[0], &mut rngs.unlabeled)?;
    let x = tape.constant(view);
    let f = bound.features(tape, x)?;
    let p = bound.head(tape, 0, f)?;
    let unsup = entropy(tape, p)?;
    combine(tape, sup, Some(unsup), cfg.eta)
}

/// Records `method`'s objective. `twin` is required for Mean Teacher and
/// ignored otherwise. The χ-no-aug ablation expects identity policies in
/// `cfg` for both labeled and unlabeled views.
pub fn method_loss(
    method: Method,
    tape: &mut Tape,
    bound: &BoundBundle,
    twin: Option<&EmaTwin>,
    batch: &Batch,
    cfg: &ObjectiveConfig,
    rngs: &mut AugStreams,
) -> Result<LossTerms> {
    match method {
        Method::LabelOnly => label_only_loss(tape, bound, &batch.labeled, cfg, rngs),
        Method::Chi | Method::ChiNoAug => chi_training_loss(tape, bound, batch, cfg, rngs),
        Method::ChiNoMinimax => chi_no_minimax_loss(tape, bound, batch, cfg, rngs),
        Method::PiModel => pi_model_loss(tape, bound, batch, cfg, rngs),
        Method::MeanTeacher => {
            let twin = twin.ok_or_else(|| Error::invalid("mean teacher needs an EMA twin"))?;
            mean_teacher_loss(tape, bound, twin, batch, cfg, rngs)
        }
        Method::PseudoLabel => pseudo_label_loss(tape, bound, batch, cfg, rngs),
        Method::EntropyMin => entropy_min_loss(tape, bound, batch, cfg, rngs),
    }
}
