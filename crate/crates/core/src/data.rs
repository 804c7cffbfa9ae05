//! Synthetic datasets and labeled/unlabeled/test splitting.

use serde::{Deserialize, Serialize};

use crate::augment::{RASTER_LEN, RASTER_SIDE};
use crate::error::{Error, Result};
use crate::objectives::Targets;
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Class(usize),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub input: Vec<f64>,
    pub target: Target,
}

impl Sample {
    pub fn class(&self) -> Option<usize> {
        match self.target {
            Target::Class(c) => Some(c),
            Target::Values(_) => None,
        }
    }
}

/// Stacks sample inputs into a `[n, width]` matrix.
pub fn inputs(samples: &[&Sample]) -> Result<Tensor> {
    let width = samples.first().map_or(0, |s| s.input.len());
    let mut data = Vec::with_capacity(samples.len() * width);
    for s in samples {
        if s.input.len() != width {
            return Err(Error::Shape(format!(
                "sample {} has width {}, expected {width}",
                s.id,
                s.input.len()
            )));
        }
        data.extend_from_slice(&s.input);
    }
    Tensor::new(vec![samples.len(), width], data)
}

/// Collects the targets of `samples`, which must all be of one kind.
pub fn targets(samples: &[&Sample], classes: usize) -> Result<Targets> {
    match samples.first().map(|s| &s.target) {
        Some(Target::Values(v)) => {
            let k = v.len();
            let mut data = Vec::with_capacity(samples.len() * k);
            for s in samples {
                match &s.target {
                    Target::Values(v) if v.len() == k => data.extend_from_slice(v),
                    _ => return Err(Error::invalid(format!("sample {} has a mismatched target", s.id))),
                }
            }
            Ok(Targets::Values(Tensor::new(vec![samples.len(), k], data)?))
        }
        _ => {
            let labels = samples
                .iter()
                .map(|s| s.class().filter(|&c| c < classes))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| Error::invalid("class target missing or out of range"))?;
            Ok(Targets::Classes { labels, classes })
        }
    }
}

/// Two interleaving half circles of radius 1, in the arrangement popularized
/// by scikit-learn's `make_moons`: the upper arc is `(cos t, sin t)` and the
/// lower arc `(1 − cos t, 1/2 − sin t)` for `t ∈ [0, π]`. Class 0 is the upper
/// moon. Points are shuffled before ids are assigned.
pub fn gen_two_moons(n: usize, noise_sigma: f64, seed: u64) -> Result<Vec<Sample>> {
    if n < 2 {
        return Err(Error::config(
            "dataset.count",
            format!("two-moons needs at least 2 points, got {n}"),
        ));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::config("dataset.noise", "must be finite and non-negative"));
    }
    let mut rng = RngStream::new(seed, "data/two-moons");
    let n_upper = n / 2;
    let n_lower = n - n_upper;
    let arc = |i: usize, m: usize| {
        if m <= 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (m - 1) as f64
        }
    };
    let mut points = Vec::with_capacity(n);
    for i in 0..n_upper {
        let t = arc(i, n_upper);
        points.push(([t.cos(), t.sin()], 0));
    }
    for i in 0..n_lower {
        let t = arc(i, n_lower);
        points.push(([1.0 - t.cos(), 0.5 - t.sin()], 1));
    }
    if noise_sigma > 0.0 {
        for (p, _) in &mut points {
            p[0] += noise_sigma * rng.normal();
            p[1] += noise_sigma * rng.normal();
        }
    }
    rng.shuffle(&mut points);
    Ok(points
        .into_iter()
        .enumerate()
        .map(|(id, (p, c))| Sample {
            id: id as u64,
            input: p.to_vec(),
            target: Target::Class(c),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Square,
    Ellipse,
    Heart,
}

impl Shape {
    pub const ALL: [Shape; 3] = [Shape::Square, Shape::Ellipse, Shape::Heart];
}

pub const SCALE_STEPS: usize = 6;
pub const POSITION_STEPS: usize = 32;
pub const FACTOR_NAMES: [&str; 3] = ["scale", "pos_x", "pos_y"];

fn grid(lo: f64, hi: f64, steps: usize, i: usize) -> f64 {
    lo + (hi - lo) * i as f64 / (steps - 1) as f64
}

/// Rasterizes one shape into a 32×32 binary image, row-major with row 0 at
/// the top. Positions in `[0, 1]` map to centers between pixel 5.5 and 25.5;
/// scale 1 gives a half-extent of 5 pixels.
pub fn render_shape(shape: Shape, scale: f64, pos_x: f64, pos_y: f64) -> Vec<f64> {
    let cx = 5.5 + 20.0 * pos_x;
    let cy = 5.5 + 20.0 * pos_y;
    let r = 5.0 * scale;
    let mut img = vec![0.0; RASTER_LEN];
    for row in 0..RASTER_SIDE {
        for col in 0..RASTER_SIDE {
            let dx = col as f64 - cx;
            let dy = row as f64 - cy;
            let inside = match shape {
                Shape::Square => dx.abs() <= r && dy.abs() <= r,
                Shape::Ellipse => (dx / r).powi(2) + (dy / (0.6 * r)).powi(2) <= 1.0,
                Shape::Heart => {
                    // The implicit heart spans about 2.3 units across, so 1.2
                    // units per half-extent keeps it inside the square's box.
                    let u = 1.2 * dx / r;
                    let v = -1.2 * dy / r + 0.1;
                    (u * u + v * v - 1.0).powi(3) - u * u * v.powi(3) <= 0.0
                }
            };
            if inside {
                img[row * RASTER_SIDE + col] = 1.0;
            }
        }
    }
    img
}

/// Shape rasters with factors drawn uniformly from their grids: scale from
/// six values in `[0.5, 1]`, each position from 32 values in `[0, 1]`.
/// Targets are `(scale rescaled to [0, 1], pos_x, pos_y)`.
pub fn gen_factor_shapes(count: usize, seed: u64) -> Result<Vec<Sample>> {
    if count == 0 {
        return Err(Error::config("dataset.count", "must be at least 1"));
    }
    let mut rng = RngStream::new(seed, "data/factor-shapes");
    Ok((0..count)
        .map(|id| {
            let shape = Shape::ALL[rng.below(Shape::ALL.len())];
            let scale = grid(0.5, 1.0, SCALE_STEPS, rng.below(SCALE_STEPS));
            let pos_x = grid(0.0, 1.0, POSITION_STEPS, rng.below(POSITION_STEPS));
            let pos_y = grid(0.0, 1.0, POSITION_STEPS, rng.below(POSITION_STEPS));
            Sample {
                id: id as u64,
                input: render_shape(shape, scale, pos_x, pos_y),
                target: Target::Values(vec![(scale - 0.5) / 0.5, pos_x, pos_y]),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelSpec {
    /// Fraction of the training pool that keeps its labels.
    Ratio(f64),
    /// Exact number of labeled samples per class.
    PerClass(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Holdout {
    Fraction(f64),
    Count(usize),
}

impl Default for Holdout {
    fn default() -> Self {
        Holdout::Fraction(0.2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub labeled: Vec<Sample>,
    /// Targets are kept for diagnostics; training only reads the inputs.
    pub unlabeled: Vec<Sample>,
    pub test: Vec<Sample>,
    pub label_ratio: f64,
}

fn by_class(pool: &[Sample]) -> Result<Vec<Vec<usize>>> {
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, s) in pool.iter().enumerate() {
        let c = s
            .class()
            .ok_or_else(|| Error::config("dataset.split", "stratified splits need class targets"))?;
        if groups.len() <= c {
            groups.resize_with(c + 1, Vec::new);
        }
        groups[c].push(i);
    }
    Ok(groups)
}

/// Holds out the test set, then picks the labeled subset uniformly without
/// replacement from what remains. Per-class mode is always stratified.
pub fn split_labeled(
    samples: Vec<Sample>,
    labels: LabelSpec,
    holdout: Holdout,
    seed: u64,
    stratify: bool,
) -> Result<DatasetSplit> {
    let n = samples.len();
    let n_test = match holdout {
        Holdout::Fraction(f) if (0.0..1.0).contains(&f) => (f * n as f64).round() as usize,
        Holdout::Count(c) if c < n => c,
        _ => {
            return Err(Error::config(
                "dataset.test",
                format!("holdout {holdout:?} leaves no training samples out of {n}"),
            ))
        }
    };
    let mut order: Vec<usize> = (0..n).collect();
    RngStream::new(seed, "split/test").shuffle(&mut order);
    let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let mut take =
        |idx: &[usize]| -> Vec<Sample> { idx.iter().map(|&i| slots[i].take().expect("index used once")).collect() };
    let test = take(&order[..n_test]);
    let pool = take(&order[n_test..]);

    let mut rng = RngStream::new(seed, "split/labeled");
    let mut chosen = vec![false; pool.len()];
    match labels {
        LabelSpec::Ratio(r) => {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::config(
                    "dataset.label_ratio",
                    format!("must lie in (0, 1], got {r}"),
                ));
            }
            if stratify {
                for mut members in by_class(&pool)? {
                    let k = (r * members.len() as f64).round() as usize;
                    rng.shuffle(&mut members);
                    members[..k].iter().for_each(|&i| chosen[i] = true);
                }
            } else {
                let k = ((r * pool.len() as f64).round() as usize).max(1);
                let mut idx: Vec<usize> = (0..pool.len()).collect();
                rng.shuffle(&mut idx);
                idx[..k].iter().for_each(|&i| chosen[i] = true);
            }
        }
        LabelSpec::PerClass(k) => {
            for (c, mut members) in by_class(&pool)?.into_iter().enumerate() {
                if members.len() < k {
                    return Err(Error::config(
                        "dataset.labels_per_class",
                        format!("class {c} has {} training samples, {k} requested", members.len()),
                    ));
                }
                rng.shuffle(&mut members);
                members[..k].iter().for_each(|&i| chosen[i] = true);
            }
        }
    }

    let (mut labeled, mut unlabeled) = (Vec::new(), Vec::new());
    for (s, c) in pool.into_iter().zip(chosen) {
        if c {
            labeled.push(s);
        } else {
            unlabeled.push(s);
        }
    }
    if labeled.is_empty() {
        return Err(Error::config("dataset.label_ratio", "no labeled samples selected"));
    }
    let label_ratio = labeled.len() as f64 / (labeled.len() + unlabeled.len()) as f64;
    Ok(DatasetSplit {
        labeled,
        unlabeled,
        test,
        label_ratio,
    })
}
