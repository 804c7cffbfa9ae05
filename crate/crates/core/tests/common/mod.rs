//! Gradient oracles shared by the gradient tests and the acceptance suite.
#![allow(dead_code)]

use chi_core::augment::{AugParams, AugPolicy, Modality, Strength};
use chi_core::autodiff::{finite_diff_gradient, relative_error, GradientMap, Tape, Var};
use chi_core::nn::{build_bundle, Activation, ArchSpec, EmaTwin, LayerSpec, ModelBundle, ParamGroup, Seeds, Task};
use chi_core::objectives::{
    chi_loss_on_views, consistency_loss, draw_pair_views, method_loss, supervised_loss, AugStreams, Batch, Distance,
    LabeledBatch, LossKind, Method, ObjectiveConfig, Targets,
};
use chi_core::rng::RngStream;
use chi_core::{Result, Tensor};

pub const FD_EPSILON: f64 = 1e-6;
pub const GRAD_REL_TOL: f64 = 1e-4;
pub const GRAD_ABS_FLOOR: f64 = 1e-7;
pub const ORACLE_REL_TOL: f64 = 1e-10;

#[derive(Debug, Default)]
pub struct Report {
    pub instances: usize,
    pub compared: usize,
    pub worst: f64,
    /// Largest absolute difference, including those under the floor.
    pub worst_abs: f64,
    pub failures: Vec<String>,
}

impl Report {
    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }

    fn record(&mut self, what: &str, analytic: f64, expected: f64, err: f64, tol: f64) {
        self.compared += 1;
        self.worst = self.worst.max(err);
        self.worst_abs = self.worst_abs.max((analytic - expected).abs());
        if err > tol && self.failures.len() < 8 {
            self.failures.push(format!(
                "{what}: analytic {analytic:e}, reference {expected:e}, rel {err:e}"
            ));
        }
    }

    pub fn merge(&mut self, other: Report) {
        self.instances += other.instances;
        self.compared += other.compared;
        self.worst = self.worst.max(other.worst);
        self.worst_abs = self.worst_abs.max(other.worst_abs);
        self.failures.extend(other.failures);
    }
}

fn uniform_tensor(rng: &mut RngStream, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.uniform_range(lo, hi)).collect()).unwrap()
}

/// Uniform in `±[gap, hi]`, away from the kink at zero.
fn away_from_zero(rng: &mut RngStream, shape: &[usize], gap: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.uniform_range(gap, hi);
            if rng.bernoulli(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

type Build = fn(&mut Tape, &[Var], f64) -> Result<Var>;

/// Name, input generator and graph for every primitive. The `f64` is a
/// per-instance constant (scale factor or reversal strength).
pub fn primitive_cases() -> Vec<(&'static str, fn(&mut RngStream) -> Vec<Tensor>, Build)> {
    fn pair(r: &mut RngStream) -> Vec<Tensor> {
        vec![
            uniform_tensor(r, &[3, 4], -2.0, 2.0),
            uniform_tensor(r, &[3, 4], -2.0, 2.0),
        ]
    }
    fn one(r: &mut RngStream) -> Vec<Tensor> {
        vec![uniform_tensor(r, &[3, 4], -2.5, 2.5)]
    }
    vec![
        (
            "matmul",
            |r| {
                vec![
                    uniform_tensor(r, &[3, 4], -1.0, 1.0),
                    uniform_tensor(r, &[4, 2], -1.0, 1.0),
                ]
            },
            |t, v, _| t.matmul(v[0], v[1]),
        ),
        ("add", pair, |t, v, _| t.add(v[0], v[1])),
        (
            "add-broadcast",
            |r| {
                vec![
                    uniform_tensor(r, &[3, 4], -1.0, 1.0),
                    uniform_tensor(r, &[4], -1.0, 1.0),
                ]
            },
            |t, v, _| t.add(v[0], v[1]),
        ),
        ("subtract", pair, |t, v, _| t.sub(v[0], v[1])),
        ("multiply", pair, |t, v, _| t.mul(v[0], v[1])),
        ("scale", one, |t, v, c| t.scale(v[0], c)),
        (
            "relu",
            |r| vec![away_from_zero(r, &[3, 4], 0.05, 2.0)],
            |t, v, _| t.relu(v[0]),
        ),
        ("tanh", one, |t, v, _| t.tanh(v[0])),
        ("sigmoid", one, |t, v, _| t.sigmoid(v[0])),
        ("softmax", one, |t, v, _| t.softmax(v[0])),
        (
            "log",
            |r| vec![uniform_tensor(r, &[3, 4], 0.1, 3.0)],
            |t, v, _| t.log(v[0]),
        ),
        ("exp", one, |t, v, _| t.exp(v[0])),
        ("sum", one, |t, v, _| t.sum(v[0])),
        ("mean", one, |t, v, _| t.mean(v[0])),
        (
            "abs",
            |r| vec![away_from_zero(r, &[3, 4], 0.05, 2.0)],
            |t, v, _| t.abs(v[0]),
        ),
        ("square", one, |t, v, _| t.square(v[0])),
        (
            "concat",
            |r| {
                vec![
                    uniform_tensor(r, &[3, 2], -1.0, 1.0),
                    uniform_tensor(r, &[3, 3], -1.0, 1.0),
                ]
            },
            |t, v, _| t.concat(&[v[0], v[1]]),
        ),
        ("grad-reverse", one, |t, v, c| t.grad_reverse(v[0], c)),
    ]
}

/// `Σ w ⊙ build(x)` so every output element carries a distinct weight.
fn weighted(tape: &mut Tape, y: Var, w: &Tensor) -> Result<Var> {
    let wv = tape.constant(w.clone());
    let p = tape.mul(y, wv)?;
    tape.sum(p)
}

pub fn check_primitives(instances: usize, seed: u64) -> Report {
    let mut report = Report::default();
    let mut rng = RngStream::new(seed, "gradcheck/primitives");
    for (name, gen, build) in primitive_cases() {
        for i in 0..instances {
            let inputs = gen(&mut rng);
            let c = rng.uniform_range(0.2, 3.0);
            let params: Vec<(String, Tensor)> = inputs
                .iter()
                .enumerate()
                .map(|(k, t)| (format!("x{k}"), t.clone()))
                .collect();

            let mut tape = Tape::new();
            let vars: Vec<Var> = params.iter().map(|(n, t)| tape.param(n.clone(), t.clone())).collect();
            let y = build(&mut tape, &vars, c).unwrap();
            let w = uniform_tensor(&mut rng, tape.shape(y).unwrap(), -1.0, 1.0);
            let loss = weighted(&mut tape, y, &w).unwrap();
            let analytic = tape.backward(loss).unwrap();

            let fd = finite_diff_gradient(
                |p| {
                    let mut t = Tape::new();
                    let vars: Vec<Var> = p.iter().map(|(_, x)| t.constant(x.clone())).collect();
                    let y = build(&mut t, &vars, c)?;
                    let l = weighted(&mut t, y, &w)?;
                    Ok(t.value(l)?.item())
                },
                &params,
                FD_EPSILON,
            )
            .unwrap();
            // The reversal node is the identity forward, so the difference
            // quotient sees +g while backward must deliver −λ·g.
            let factor = if name == "grad-reverse" { -c } else { 1.0 };
            for (pname, _) in &params {
                let (a, f) = (analytic.get(pname).unwrap(), fd.get(pname).unwrap());
                for (j, (&av, &fv)) in a.data().iter().zip(f.data()).enumerate() {
                    let expected = factor * fv;
                    let err = relative_error(av, expected, GRAD_ABS_FLOOR);
                    report.record(&format!("{name}#{i} {pname}[{j}]"), av, expected, err, GRAD_REL_TOL);
                }
            }
            report.instances += 1;
        }
    }
    report
}

/// A tanh network with at most 50 parameters: 2 → 4 extractor and 4 → 3
/// softmax heads, or 4 → 2 sigmoid heads for regression.
pub fn tiny_arch(task: Task) -> ArchSpec {
    let head = match task {
        Task::Classification => LayerSpec::new(4, 3, Activation::Softmax),
        Task::Regression => LayerSpec::new(4, 2, Activation::Sigmoid),
    };
    ArchSpec {
        extractor: vec![LayerSpec::new(2, 4, Activation::Tanh)],
        head: vec![head],
        branches: 1,
    }
}

fn random_seeds(rng: &mut RngStream) -> Seeds {
    Seeds {
        extractor: rng.below(1 << 30) as u64,
        head1: rng.below(1 << 30) as u64 + (1 << 30),
        head2: rng.below(1 << 30) as u64 + (2 << 30),
    }
}

fn random_batch(rng: &mut RngStream, kind: LossKind, n_l: usize, n_u: usize, outputs: usize) -> Batch {
    let inputs = uniform_tensor(rng, &[n_l, 2], -1.5, 1.5);
    let targets = match kind.task {
        Task::Classification => Targets::Classes {
            labels: (0..n_l).map(|_| rng.below(outputs)).collect(),
            classes: outputs,
        },
        Task::Regression => Targets::Values(uniform_tensor(rng, &[n_l, outputs], 0.05, 0.95)),
    };
    Batch {
        labeled: LabeledBatch { inputs, targets },
        unlabeled: uniform_tensor(rng, &[n_u, 2], -1.5, 1.5),
    }
}

fn point_policy(strength: Strength) -> AugPolicy {
    AugPolicy::new(Modality::Point2d, strength)
        .with_params(AugParams {
            point_cutout_prob: 0.2,
            ..AugParams::default()
        })
        .with_center([0.5, 0.25])
}

fn with_params(bundle: &ModelBundle, params: &[(String, Tensor)]) -> ModelBundle {
    let mut b = bundle.clone();
    for (p, (_, t)) in b.params_mut().into_iter().zip(params) {
        *p = t.clone();
    }
    b
}

pub const CHECKED_METHODS: [Method; 6] = [
    Method::Chi,
    Method::ChiNoMinimax,
    Method::PiModel,
    Method::MeanTeacher,
    Method::PseudoLabel,
    Method::EntropyMin,
];

/// Compares `method`'s backward pass with central differences of its two
/// terms. Parameters minimizing `L_s + c·L_u` should receive
/// `∇L_s + c·∇L_u`, where `c` is `η` for ordinary objectives and, under the
/// χ minimax game, `−η` for heads and `ηλ` for the extractor.
pub fn check_method(method: Method, instances: usize, seed: u64) -> Report {
    let mut report = Report::default();
    let mut rng = RngStream::new(seed, &format!("gradcheck/{method}"));
    for i in 0..instances {
        let kind = if method.classification_only() || i % 2 == 0 {
            LossKind::classification()
        } else if i % 4 == 1 {
            LossKind::regression(Distance::L1)
        } else {
            LossKind::regression(Distance::L2)
        };
        let arch = tiny_arch(kind.task);
        let bundle = build_bundle(&arch, kind.task, random_seeds(&mut rng)).unwrap();
        assert!(bundle.param_count() <= 50);
        let teacher = build_bundle(&arch, kind.task, random_seeds(&mut rng)).unwrap();
        let twin = EmaTwin::new(&teacher, 0.9).unwrap();
        let batch = random_batch(&mut rng, kind, 4, 5, arch.output_width());
        let eta = rng.uniform_range(0.1, 1.0);
        let lambda = rng.uniform_range(0.5, 2.0);
        let strong = point_policy(Strength::Strong);
        let cfg = ObjectiveConfig {
            kind,
            labeled_policies: [strong, strong],
            policies: [strong, point_policy(Strength::Weak)],
            eta,
            grl_lambda: lambda,
            threshold: 0.4,
            dropout: 0.3,
        };
        let streams = AugStreams::new(rng.below(1 << 30) as u64);

        let terms = |b: &ModelBundle, tape: &mut Tape| {
            let bound = b.bind(tape);
            let mut rngs = streams.clone();
            method_loss(method, tape, &bound, Some(&twin), &batch, &cfg, &mut rngs)
        };
        let mut tape = Tape::new();
        let t = terms(&bundle, &mut tape).unwrap();
        let analytic = tape.backward(t.total).unwrap();

        let params: Vec<(String, Tensor)> = bundle
            .named_params()
            .into_iter()
            .map(|(n, _, t)| (n, t.clone()))
            .collect();
        let fd_of = |pick: fn(f64, f64) -> f64| {
            finite_diff_gradient(
                |p| {
                    let mut tape = Tape::new();
                    let t = terms(&with_params(&bundle, p), &mut tape)?;
                    Ok(pick(t.supervised, t.unsupervised))
                },
                &params,
                FD_EPSILON,
            )
            .unwrap()
        };
        let fd_sup = fd_of(|s, _| s);
        let fd_unsup = fd_of(|_, u| u);

        for (name, group, _) in bundle.named_params() {
            let c = match (method, group) {
                (Method::Chi, ParamGroup::Extractor) => eta * lambda,
                (Method::Chi, _) => -eta,
                _ => eta,
            };
            let a = analytic.get(&name).unwrap();
            let (s, u) = (fd_sup.get(&name).unwrap(), fd_unsup.get(&name).unwrap());
            for j in 0..a.len() {
                let expected = s.data()[j] + c * u.data()[j];
                let err = relative_error(a.data()[j], expected, GRAD_ABS_FLOOR);
                report.record(
                    &format!("{method}#{i} {name}[{j}]"),
                    a.data()[j],
                    expected,
                    err,
                    GRAD_REL_TOL,
                );
            }
        }
        report.instances += 1;
    }
    report
}

fn oracle_instance(rng: &mut RngStream, kind: LossKind) -> (ModelBundle, Batch, ObjectiveConfig, AugStreams) {
    let arch = match kind.task {
        Task::Classification => ArchSpec::two_moons(2),
        Task::Regression => ArchSpec {
            extractor: vec![
                LayerSpec::new(2, 8, Activation::Relu),
                LayerSpec::new(8, 6, Activation::Tanh),
            ],
            head: vec![
                LayerSpec::new(6, 4, Activation::Relu),
                LayerSpec::new(4, 1, Activation::Sigmoid),
            ],
            branches: 2,
        },
    };
    let bundle = build_bundle(&arch, kind.task, random_seeds(rng)).unwrap();
    let batch = random_batch(rng, kind, 6, 8, arch.output_width());
    let strong = point_policy(Strength::Strong);
    let cfg = ObjectiveConfig {
        kind,
        labeled_policies: [strong, strong],
        policies: [strong, strong],
        eta: rng.uniform_range(0.01, 2.0),
        grl_lambda: rng.uniform_range(0.0, 5.0),
        threshold: 0.95,
        dropout: 0.0,
    };
    (bundle, batch, cfg, AugStreams::new(rng.below(1 << 30) as u64))
}

/// `L_s + w·L_u` on fixed views with only the groups in `trainable` bound
/// as parameters. No reversal node anywhere.
fn frozen_pass(
    bundle: &ModelBundle,
    views: &chi_core::objectives::PairViews,
    targets: &Targets,
    kind: LossKind,
    w: f64,
    trainable: fn(ParamGroup) -> bool,
) -> GradientMap {
    let mut tape = Tape::new();
    let bound = bundle.bind_with(&mut tape, trainable);
    let (x1, x2) = (
        tape.constant(views.labeled.0.clone()),
        tape.constant(views.labeled.1.clone()),
    );
    let (y1, y2) = bound.forward_pair(&mut tape, x1, x2).unwrap();
    let ls = supervised_loss(&mut tape, y1, y2, targets, kind).unwrap();
    let (u1, u2) = (
        tape.constant(views.unlabeled.0.clone()),
        tape.constant(views.unlabeled.1.clone()),
    );
    let f1 = bound.features(&mut tape, u1).unwrap();
    let f2 = bound.features(&mut tape, u2).unwrap();
    let p1 = bound.head(&mut tape, 0, f1).unwrap();
    let p2 = bound.head(&mut tape, 1, f2).unwrap();
    let lu = consistency_loss(&mut tape, p1, p2, kind).unwrap();
    let scaled = tape.scale(lu, w).unwrap();
    let total = tape.add(ls, scaled).unwrap();
    tape.backward(total).unwrap()
}

/// Single backward pass through the reversal layer against two frozen
/// passes: the extractor minimizing `L_s + ηλ·L_u` with heads fixed, and the
/// heads minimizing `L_s − η·L_u` with the extractor fixed.
pub fn check_minimax_oracle(instances: usize, seed: u64) -> Report {
    let mut report = Report::default();
    let mut rng = RngStream::new(seed, "gradcheck/minimax-oracle");
    for i in 0..instances {
        let kind = match i % 3 {
            0 => LossKind::classification(),
            1 => LossKind::regression(Distance::L1),
            _ => LossKind::regression(Distance::L2),
        };
        let (bundle, batch, cfg, mut streams) = oracle_instance(&mut rng, kind);
        let views = draw_pair_views(&batch, &cfg, &mut streams).unwrap();
        let targets = &batch.labeled.targets;

        let mut tape = Tape::new();
        let bound = bundle.bind(&mut tape);
        let t = chi_loss_on_views(&mut tape, &bound, &views, targets, &cfg, true).unwrap();
        let single = tape.backward(t.total).unwrap();

        let ext = frozen_pass(&bundle, &views, targets, kind, cfg.eta * cfg.grl_lambda, |g| {
            g == ParamGroup::Extractor
        });
        let heads = frozen_pass(&bundle, &views, targets, kind, -cfg.eta, |g| g.is_head());

        if single.len() != ext.len() + heads.len() {
            report.failures.push(format!(
                "instance {i}: {} gradients vs {} + {}",
                single.len(),
                ext.len(),
                heads.len()
            ));
        }
        for (name, g) in single.iter() {
            let Some(reference) = ext.get(name).or_else(|| heads.get(name)) else {
                report
                    .failures
                    .push(format!("instance {i}: {name} missing from the two-pass result"));
                continue;
            };
            for (j, (&a, &b)) in g.data().iter().zip(reference.data()).enumerate() {
                let err = relative_error(a, b, f64::MIN_POSITIVE);
                report.record(&format!("oracle#{i} {name}[{j}]"), a, b, err, ORACLE_REL_TOL);
            }
        }
        report.instances += 1;
    }
    report
}
