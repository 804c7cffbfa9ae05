//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. Run with `cargo test -p chi-core --test acceptance`.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use chi_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use chi_core::config::ExperimentConfig;
use chi_core::eval::{geometric_mean, mean_absolute_error};
use chi_core::experiment;
use chi_core::nn::{build_bundle, ema_update, ArchSpec, EmaTwin, ModelBundle, Task};
use chi_core::objectives::{symmetric_kl, Method};
use chi_core::rng::RngStream;
use chi_core::train::{model_seeds, TrainState, Trainer};
use chi_core::{Result, Tensor};

use common::{check_method, check_minimax_oracle, check_primitives, Report, CHECKED_METHODS};

const TWO_MOONS: &str = include_str!("../../../configs/two-moons.toml");
const MINI_SHAPES: &str = include_str!("../../../configs/mini-shapes.toml");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> (String, Outcome, Duration) {
    let t0 = Instant::now();
    let mut o = f();
    let took = t0.elapsed();
    if took > limit {
        o.pass = false;
        o.detail = format!("{}; over the {:?} budget", o.detail, limit);
    }
    (name.to_string(), o, took)
}

fn report_outcome(r: &Report, label: &str) -> Outcome {
    let detail = format!(
        "{label}: {} instances, {} comparisons, worst rel {:.2e}, worst abs diff {:.2e}",
        r.instances, r.compared, r.worst, r.worst_abs
    );
    if r.ok() {
        outcome(true, detail)
    } else {
        outcome(false, format!("{detail}; {}", r.failures.join("; ")))
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Final (headline metric, head disagreement) of one preset run.
fn final_numbers(base: &str, origin: &str, method: Method, seed: u64) -> Result<(f64, f64)> {
    let sets = [
        format!("train.method=\"{}\"", method.name()),
        format!("train.seed={seed}"),
    ];
    let cfg = ExperimentConfig::parse(base, origin, &sets)?;
    let data = cfg.split()?;
    let mut t = Trainer::with_bundle(cfg.train_config(), cfg.initial_bundle()?, &data)?;
    t.run()?;
    let last = t.into_state().history.records.pop().expect("at least one epoch");
    Ok((last.metrics.headline(), last.disagreement))
}

/// Rows are seeds, columns follow `methods`.
fn grid(base: &str, origin: &str, methods: &[Method], seeds: std::ops::Range<u64>) -> Result<Vec<Vec<(f64, f64)>>> {
    let cells: Vec<(u64, Method)> = seeds.flat_map(|s| methods.iter().map(move |&m| (s, m))).collect();
    let flat = cells
        .par_iter()
        .map(|&(s, m)| final_numbers(base, origin, m, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(flat.chunks(methods.len()).map(|c| c.to_vec()).collect())
}

fn c1_gradients() -> Outcome {
    let mut total = check_primitives(100, 11);
    let mut parts = vec![format!("primitives worst abs {:.2e}", total.worst_abs)];
    for (i, &m) in CHECKED_METHODS.iter().enumerate() {
        let r = check_method(m, 100, 100 + i as u64);
        parts.push(format!("{} {:.2e}", m.name(), r.worst_abs));
        total.merge(r);
    }
    let mut o = report_outcome(&total, "all");
    o.detail = format!("{}; {}", o.detail, parts.join(", "));
    o
}

fn c2_oracle() -> Outcome {
    report_outcome(&check_minimax_oracle(50, 7), "single pass vs frozen two-pass")
}

fn c3_two_moons() -> Outcome {
    let methods = [Method::LabelOnly, Method::PiModel, Method::Chi];
    let rows = match grid(TWO_MOONS, "two-moons.toml", &methods, 0..10) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let acc = |j: usize| -> Vec<f64> { rows.iter().map(|r| 1.0 - r[j].0).collect() };
    let (lo, pi, chi) = (acc(0), acc(1), acc(2));
    let (m_lo, m_pi, m_chi) = (mean(&lo), mean(&pi), mean(&chi));
    let wins = chi.iter().zip(&lo).filter(|(c, l)| c > l).count();
    let pass = m_chi > m_lo && wins >= 7 && m_pi > m_lo && m_lo <= m_pi && m_pi <= m_chi;
    outcome(
        pass,
        format!("mean accuracy label-only {m_lo:.4}, pi-model {m_pi:.4}, chi {m_chi:.4}; chi wins {wins}/10"),
    )
}

struct Shapes {
    lo: Vec<f64>,
    chi: Vec<f64>,
    nomin: Vec<f64>,
    dis_chi: Vec<f64>,
    dis_nomin: Vec<f64>,
}

fn shapes_runs() -> Result<Shapes> {
    let methods = [Method::LabelOnly, Method::Chi, Method::ChiNoMinimax];
    let rows = grid(MINI_SHAPES, "mini-shapes.toml", &methods, 0..5)?;
    let col = |j: usize, dis: bool| -> Vec<f64> { rows.iter().map(|r| if dis { r[j].1 } else { r[j].0 }).collect() };
    Ok(Shapes {
        lo: col(0, false),
        chi: col(1, false),
        nomin: col(2, false),
        dis_chi: col(1, true),
        dis_nomin: col(2, true),
    })
}

fn c4_mini_shapes(s: &Result<Shapes>) -> Outcome {
    let s = match s {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let wins = s.chi.iter().zip(&s.lo).filter(|(c, l)| c < l).count();
    let (m_lo, m_chi) = (mean(&s.lo), mean(&s.chi));
    outcome(
        m_chi < m_lo && wins >= 4,
        format!(
            "mean MAE label-only {m_lo:.4}, chi {m_chi:.4}, chi-no-minimax {:.4}; chi wins {wins}/5",
            mean(&s.nomin)
        ),
    )
}

fn c5_disagreement(s: &Result<Shapes>) -> Outcome {
    let s = match s {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("run failed: {e}")),
    };
    let (a, b) = (mean(&s.dis_chi), mean(&s.dis_nomin));
    outcome(
        a >= b,
        format!("mean head disagreement chi {a:.4}, chi-no-minimax {b:.4}"),
    )
}

fn c6_ema() -> Outcome {
    let arch = ArchSpec::two_moons(2);
    let b = |s: u64| build_bundle(&arch, Task::Classification, model_seeds(s)).unwrap();
    let (start, students) = (b(1), [b(2), b(3), b(4)]);
    let mut bad = Vec::new();
    for alpha in [0.0, 0.5, 0.99, 1.0] {
        let mut twin = EmaTwin::new(&start, alpha).unwrap();
        let mut hand: Vec<Vec<f64>> = start.named_params().iter().map(|(_, _, t)| t.data().to_vec()).collect();
        for s in &students {
            twin = ema_update(&twin, s).unwrap();
            for (h, (_, _, cur)) in hand.iter_mut().zip(s.named_params()) {
                for (x, &c) in h.iter_mut().zip(cur.data()) {
                    *x = alpha * *x + (1.0 - alpha) * c;
                }
            }
        }
        let same = twin
            .shadow
            .named_params()
            .iter()
            .zip(&hand)
            .all(|((_, _, t), h)| t.data().iter().zip(h).all(|(a, b)| a.to_bits() == b.to_bits()));
        if !same {
            bad.push(alpha.to_string());
        }
    }
    if bad.is_empty() {
        outcome(true, "3 steps bitwise equal for alpha 0, 0.5, 0.99, 1")
    } else {
        outcome(false, format!("mismatch for alpha {}", bad.join(", ")))
    }
}

fn skl(p: &Tensor, q: &Tensor) -> f64 {
    let mut tape = chi_core::autodiff::Tape::new();
    let (a, b) = (tape.constant(p.clone()), tape.constant(q.clone()));
    let d = symmetric_kl(&mut tape, a, b).unwrap();
    tape.value(d).unwrap().item()
}

fn simplex(rng: &mut RngStream, k: usize) -> Tensor {
    let raw: Vec<f64> = (0..k).map(|_| -rng.uniform_range(1e-12, 1.0).ln()).collect();
    let s: f64 = raw.iter().sum();
    Tensor::from_rows(&[raw.iter().map(|v| v / s).collect()]).unwrap()
}

fn c7_metrics() -> Outcome {
    let gm = geometric_mean(&[1.0, 2.0, 4.0, 8.0]);
    let gm_ok = (gm - 2.828427).abs() <= 1e-3;

    let mut rng = RngStream::new(2024, "acceptance/metrics");
    let mut amgm_bad = 0;
    for _ in 0..1000 {
        let n = 1 + (rng.uniform_range(0.0, 40.0) as usize);
        let errs: Vec<f64> = (0..n).map(|_| rng.uniform_range(0.0, 5.0)).collect();
        if geometric_mean(&errs) > mean_absolute_error(&errs) + 1e-6 {
            amgm_bad += 1;
        }
    }

    let (mut asym, mut neg, mut worst_asym) = (0, 0, 0.0f64);
    for _ in 0..1000 {
        let k = 2 + (rng.uniform_range(0.0, 9.0) as usize);
        let (p, q) = (simplex(&mut rng, k), simplex(&mut rng, k));
        let (pq, qp) = (skl(&p, &q), skl(&q, &p));
        let gap = (pq - qp).abs() / pq.abs().max(1.0);
        worst_asym = worst_asym.max(gap);
        if gap > 1e-12 {
            asym += 1;
        }
        if pq < 0.0 || !pq.is_finite() {
            neg += 1;
        }
    }
    outcome(
        gm_ok && amgm_bad == 0 && asym == 0 && neg == 0,
        format!(
            "GM{{1,2,4,8}} = {gm:.6}; AM-GM violations {amgm_bad}/1000; \
             symmetric-KL asymmetric {asym}/1000 (worst {worst_asym:.1e}), negative {neg}/1000"
        ),
    )
}

const PERSIST: &str = r#"
[dataset]
generator = "two-moons"
samples = 200
noise = 0.1
labels_per_class = 5
test_count = 50
stratify = true

[train]
eta = 0.01
grl_lambda = 30.0
learning_rate = 0.003
epochs = 6
labeled_batch = 10
unlabeled_batch = 32
seed = 5

[augment]
point_cutout_prob = 0.0
"#;

fn straight_and_resumed(method: Method, dir: &std::path::Path) -> Result<(TrainState, TrainState)> {
    let cfg = ExperimentConfig::parse(
        PERSIST,
        "persist.toml",
        &[format!("train.method=\"{}\"", method.name())],
    )?;
    let data = cfg.split()?;
    let fresh = || -> Result<Trainer<'_>> { Trainer::with_bundle(cfg.train_config(), cfg.initial_bundle()?, &data) };

    let mut straight = fresh()?;
    straight.run()?;

    let mut first = fresh()?;
    first.run_until(3)?;
    let path = dir.join(format!("{}.bin", method.name()));
    save_checkpoint(
        &path,
        &Checkpoint {
            config: cfg.clone(),
            state: first.into_state(),
        },
    )?;
    let ck = load_checkpoint(&path)?;
    let mut resumed = Trainer::resume(ck.config.train_config(), &data, ck.state)?;
    resumed.run()?;
    Ok((straight.into_state(), resumed.into_state()))
}

fn bundles_bitwise(a: &ModelBundle, b: &ModelBundle) -> bool {
    a.named_params()
        .iter()
        .zip(b.named_params())
        .all(|((_, _, x), (_, _, y))| x.data().iter().zip(y.data()).all(|(u, v)| u.to_bits() == v.to_bits()))
}

fn c8_determinism() -> Outcome {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut notes = Vec::new();
    let mut pass = true;

    let metrics = |sub: &str| -> Result<Vec<u8>> {
        let set = [format!("output.dir={:?}", tmp.path().join(sub).to_str().unwrap())];
        let cfg = ExperimentConfig::parse(PERSIST, "persist.toml", &set)?;
        let out = experiment::run(&cfg)?;
        Ok(std::fs::read(out.dir.join("metrics.csv"))?)
    };
    match (metrics("a"), metrics("b")) {
        (Ok(a), Ok(b)) if a == b => notes.push("metrics.csv byte-identical".to_string()),
        (Ok(_), Ok(_)) => {
            pass = false;
            notes.push("metrics.csv differs between identical runs".into());
        }
        (Err(e), _) | (_, Err(e)) => {
            pass = false;
            notes.push(format!("run failed: {e}"));
        }
    }

    for m in [Method::Chi, Method::MeanTeacher] {
        match straight_and_resumed(m, tmp.path()) {
            Ok((s, r)) if s == r && bundles_bitwise(&s.bundle, &r.bundle) => {
                notes.push(format!("{} resume at epoch 3 of 6 bitwise equal", m.name()))
            }
            Ok(_) => {
                pass = false;
                notes.push(format!("{} resumed state differs", m.name()));
            }
            Err(e) => {
                pass = false;
                notes.push(format!("{}: {e}", m.name()));
            }
        }
    }
    outcome(pass, notes.join("; "))
}

fn main() -> ExitCode {
    // Output locations come from the config under test, not the caller's shell.
    std::env::remove_var(chi_core::config::OUTPUT_DIR_ENV);

    let mut results = vec![
        within("1 gradient correctness", Duration::from_secs(60), c1_gradients),
        within("2 minimax oracle", Duration::from_secs(10), c2_oracle),
        within("3 two-moons", Duration::from_secs(600), c3_two_moons),
    ];
    let t0 = Instant::now();
    let shapes = shapes_runs();
    let shapes_time = t0.elapsed();
    let mut c4 = within("4 mini-shapes", Duration::from_secs(1800), || c4_mini_shapes(&shapes));
    c4.2 += shapes_time;
    if c4.2 > Duration::from_secs(1800) && c4.1.pass {
        c4.1.pass = false;
        c4.1.detail += "; over the 1800s budget";
    }
    results.push(c4);
    results.push(within("5 degeneration diagnostic", Duration::MAX, || {
        c5_disagreement(&shapes)
    }));
    results.push(within("6 EMA exactness", Duration::MAX, c6_ema));
    results.push(within("7 metric identities", Duration::MAX, c7_metrics));
    results.push(within("8 determinism and persistence", Duration::MAX, c8_determinism));

    let mut failed = 0;
    for (name, o, took) in &results {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} criterion {name} ({:.1}s): {}", took.as_secs_f64(), o.detail);
        failed += usize::from(!o.pass);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
