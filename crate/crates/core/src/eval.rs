//! Metrics and diagnostics on trained bundles.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::data::{inputs, Sample, Target};
use crate::error::{Error, Result};
use crate::nn::{extract_features, forward_inference, predict_heads, ModelBundle, Task};
use crate::objectives::{consistency_loss, LossKind};
use crate::tensor::Tensor;

/// Added to each absolute error before taking logs in [`geometric_mean`].
pub const GM_EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "kebab-case")]
pub enum MetricsReport {
    Regression {
        mae_per_factor: Vec<f64>,
        mae: f64,
        gm: f64,
    },
    Classification {
        error_rate: f64,
    },
}

impl MetricsReport {
    /// Column names matching [`values`](Self::values).
    pub fn columns(&self) -> Vec<String> {
        match self {
            MetricsReport::Regression { mae_per_factor, .. } => {
                let mut c: Vec<String> = (0..mae_per_factor.len()).map(|i| format!("mae_{i}")).collect();
                c.extend(["mae".to_string(), "gm".to_string()]);
                c
            }
            MetricsReport::Classification { .. } => vec!["error_rate".into()],
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            MetricsReport::Regression {
                mae_per_factor,
                mae,
                gm,
            } => {
                let mut v = mae_per_factor.clone();
                v.extend([*mae, *gm]);
                v
            }
            MetricsReport::Classification { error_rate } => vec![*error_rate],
        }
    }

    /// The single number a sweep compares: overall MAE or error rate.
    pub fn headline(&self) -> f64 {
        match self {
            MetricsReport::Regression { mae, .. } => *mae,
            MetricsReport::Classification { error_rate } => *error_rate,
        }
    }
}

pub fn mean_absolute_error(errors: &[f64]) -> f64 {
    errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64
}

/// `exp(mean ln(|e| + ε))`, the geometric mean of absolute errors shifted by
/// [`GM_EPSILON`] so exact zeros stay finite.
pub fn geometric_mean(errors: &[f64]) -> f64 {
    let n = errors.len() as f64;
    let gm = (errors.iter().map(|e| (e.abs() + GM_EPSILON).ln()).sum::<f64>() / n).exp();
    // exp(ln x) can round one ulp above x; AM-GM bounds the exact value.
    let am = errors.iter().map(|e| e.abs() + GM_EPSILON).sum::<f64>() / n;
    gm.min(am)
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
        )
        .0
}

/// Test metrics from clean-input predictions.
pub fn evaluate(bundle: &ModelBundle, samples: &[Sample]) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty sample list"));
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    let pred = forward_inference(bundle, &inputs(&refs)?)?;
    match bundle.task {
        Task::Classification => {
            let mut wrong = 0usize;
            for (r, s) in samples.iter().enumerate() {
                let c = s
                    .class()
                    .ok_or_else(|| Error::invalid("classification sample without a class"))?;
                if argmax(pred.row(r)) != c {
                    wrong += 1;
                }
            }
            Ok(MetricsReport::Classification {
                error_rate: wrong as f64 / samples.len() as f64,
            })
        }
        Task::Regression => {
            let k = pred.cols();
            let mut per_factor = vec![0.0; k];
            let mut all = Vec::with_capacity(samples.len() * k);
            for (r, s) in samples.iter().enumerate() {
                let Target::Values(y) = &s.target else {
                    return Err(Error::invalid("regression sample without values"));
                };
                if y.len() != k {
                    return Err(Error::Shape(format!(
                        "target width {} vs prediction width {k}",
                        y.len()
                    )));
                }
                for (j, (&p, &t)) in pred.row(r).iter().zip(y).enumerate() {
                    let e = (p - t).abs();
                    per_factor[j] += e;
                    all.push(e);
                }
            }
            per_factor.iter_mut().for_each(|m| *m /= samples.len() as f64);
            Ok(MetricsReport::Regression {
                mae: mean_absolute_error(&all),
                gm: geometric_mean(&all),
                mae_per_factor: per_factor,
            })
        }
    }
}

/// Consistency loss between the two heads' clean-input predictions.
pub fn head_disagreement(bundle: &ModelBundle, samples: &[Sample], kind: LossKind) -> Result<f64> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    let (y1, y2) = predict_heads(bundle, &inputs(&refs)?)?;
    let mut tape = Tape::new();
    let (a, b) = (tape.constant(y1), tape.constant(y2));
    let l = consistency_loss(&mut tape, a, b, kind)?;
    Ok(tape.value(l)?.item())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryGrid {
    pub resolution: usize,
    /// Lattice points, row-major with `y` as the slow axis.
    pub points: Vec<[f64; 2]>,
    /// One prediction row per point.
    pub predictions: Tensor,
}

fn lattice(lo: f64, hi: f64, n: usize, i: usize) -> f64 {
    if n == 1 {
        lo
    } else {
        lo + (hi - lo) * i as f64 / (n - 1) as f64
    }
}

/// Predictions on a `resolution × resolution` lattice spanning `bounds`,
/// corners included.
pub fn decision_boundary_grid(bundle: &ModelBundle, bounds: Rect, resolution: usize) -> Result<BoundaryGrid> {
    if bundle.input_width() != 2 {
        return Err(Error::invalid(format!(
            "decision boundaries need a 2-D input model, this one takes {}",
            bundle.input_width()
        )));
    }
    if resolution == 0 {
        return Err(Error::invalid("resolution must be positive"));
    }
    let mut points = Vec::with_capacity(resolution * resolution);
    for j in 0..resolution {
        for i in 0..resolution {
            points.push([
                lattice(bounds.x_min, bounds.x_max, resolution, i),
                lattice(bounds.y_min, bounds.y_max, resolution, j),
            ]);
        }
    }
    let x = Tensor::new(vec![points.len(), 2], points.iter().flatten().copied().collect())?;
    Ok(BoundaryGrid {
        resolution,
        predictions: forward_inference(bundle, &x)?,
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Partition {
    Labeled,
    Unlabeled,
    Test,
}

impl Partition {
    pub fn name(self) -> &'static str {
        match self {
            Partition::Labeled => "labeled",
            Partition::Unlabeled => "unlabeled",
            Partition::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub id: u64,
    pub features: Vec<f64>,
    pub target: Target,
    pub partition: Partition,
}

/// Extractor outputs for `samples`, one row each, tagged with `partition`.
pub fn dump_features(bundle: &ModelBundle, samples: &[Sample], partition: Partition) -> Result<Vec<FeatureRow>> {
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    let f = extract_features(bundle, &inputs(&refs)?)?;
    Ok(samples
        .iter()
        .enumerate()
        .map(|(r, s)| FeatureRow {
            id: s.id,
            features: f.row(r).to_vec(),
            target: s.target.clone(),
            partition,
        })
        .collect())
}
