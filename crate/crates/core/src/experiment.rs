//! End-to-end runs, sweeps and their files on disk.
//!
//! Every CSV starts with a header row. Numbers are written with `{}`, which
//! for f64 is the shortest decimal that parses back to the same bits.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::checkpoint::{save_checkpoint, save_samples, Checkpoint};
use crate::config::ExperimentConfig;
use crate::data::{DatasetSplit, Sample, Target};
use crate::error::{Error, Result};
use crate::eval::{decision_boundary_grid, dump_features, BoundaryGrid, MetricsReport, Partition};
use crate::nn::ModelBundle;
use crate::objectives::Method;
use crate::train::{EpochRecord, History, TrainState, Trainer};

fn num(v: f64) -> String {
    format!("{v}")
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn metric_columns(history: &History) -> Vec<String> {
    history.records.first().map(|r| r.metrics.columns()).unwrap_or_default()
}

/// `epoch, supervised, unsupervised, disagreement, <test metrics>`.
pub fn write_history(path: &Path, history: &History) -> Result<()> {
    let mut w = writer(path)?;
    let mut head: Vec<String> = ["epoch", "supervised", "unsupervised", "disagreement"]
        .map(String::from)
        .into();
    head.extend(metric_columns(history));
    w.write_record(&head)?;
    for r in &history.records {
        let mut row = vec![
            r.epoch.to_string(),
            num(r.supervised),
            num(r.unsupervised),
            num(r.disagreement),
        ];
        row.extend(r.metrics.values().into_iter().map(num));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Epochs that get a metrics.csv row: multiples of `every`, plus the last.
pub fn evaluated_records(history: &History, every: usize) -> Vec<&EpochRecord> {
    let last = history.records.len();
    history
        .records
        .iter()
        .filter(|r| r.epoch == last || (every > 0 && r.epoch % every == 0))
        .collect()
}

/// `epoch, method, seed, label_ratio, <test metrics>`.
pub fn write_metrics(path: &Path, cfg: &ExperimentConfig, data: &DatasetSplit, history: &History) -> Result<()> {
    let mut w = writer(path)?;
    let mut head: Vec<String> = ["epoch", "method", "seed", "label_ratio"].map(String::from).into();
    head.extend(metric_columns(history));
    w.write_record(&head)?;
    for r in evaluated_records(history, cfg.output.eval_every) {
        let mut row = vec![
            r.epoch.to_string(),
            cfg.train.method.to_string(),
            cfg.train.seed.to_string(),
            num(data.label_ratio),
        ];
        row.extend(r.metrics.values().into_iter().map(num));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `x, y, p_0, p_1, …` per lattice point.
pub fn write_boundary_csv(path: &Path, grid: &BoundaryGrid) -> Result<()> {
    let mut w = writer(path)?;
    let k = grid.predictions.cols();
    let mut head = vec!["x".to_string(), "y".to_string()];
    head.extend((0..k).map(|i| format!("p_{i}")));
    w.write_record(&head)?;
    for (r, [x, y]) in grid.points.iter().enumerate() {
        let mut row = vec![num(*x), num(*y)];
        row.extend(grid.predictions.row(r).iter().map(|&p| num(p)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Binary greyscale PGM, top row at `y_max`. Two-class grids show the
/// probability of class 1; wider ones shade by the argmax class.
pub fn write_boundary_pgm(path: &Path, grid: &BoundaryGrid) -> Result<()> {
    let n = grid.resolution;
    let k = grid.predictions.cols();
    let shade = |row: &[f64]| -> u8 {
        let v = match k {
            1 => row[0],
            2 => row[1],
            _ => {
                let arg = row
                    .iter()
                    .enumerate()
                    .fold(0, |best, (i, &p)| if p > row[best] { i } else { best });
                arg as f64 / (k - 1) as f64
            }
        };
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    };
    let mut buf = format!("P5\n{n} {n}\n255\n").into_bytes();
    for j in (0..n).rev() {
        for i in 0..n {
            buf.push(shade(grid.predictions.row(j * n + i)));
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn write_boundary(dir: &Path, bundle: &ModelBundle, cfg: &ExperimentConfig, resolution: usize) -> Result<()> {
    let grid = decision_boundary_grid(bundle, cfg.output.bounds(), resolution)?;
    write_boundary_csv(&dir.join("boundary.csv"), &grid)?;
    write_boundary_pgm(&dir.join("boundary.pgm"), &grid)
}

fn target_header(sample: Option<&Sample>) -> Vec<String> {
    match sample.map(|s| &s.target) {
        Some(Target::Values(v)) => (0..v.len()).map(|i| format!("t_{i}")).collect(),
        _ => vec!["class".into()],
    }
}

fn target_cells(t: &Target) -> Vec<String> {
    match t {
        Target::Class(c) => vec![c.to_string()],
        Target::Values(v) => v.iter().map(|&x| num(x)).collect(),
    }
}

fn partitions(data: &DatasetSplit) -> [(Partition, &[Sample]); 3] {
    [
        (Partition::Labeled, &data.labeled),
        (Partition::Unlabeled, &data.unlabeled),
        (Partition::Test, &data.test),
    ]
}

/// `id, partition, f_0, …, <targets>` for every sample of every partition.
pub fn write_features(path: &Path, bundle: &ModelBundle, data: &DatasetSplit) -> Result<()> {
    let mut w = writer(path)?;
    let mut head = vec!["id".to_string(), "partition".to_string()];
    head.extend((0..bundle.feature_width()).map(|i| format!("f_{i}")));
    head.extend(target_header(data.labeled.first()));
    w.write_record(&head)?;
    for (partition, samples) in partitions(data) {
        for row in dump_features(bundle, samples, partition)? {
            let mut cells = vec![row.id.to_string(), partition.name().to_string()];
            cells.extend(row.features.iter().map(|&f| num(f)));
            cells.extend(target_cells(&row.target));
            w.write_record(&cells)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the sample pool to `samples.bin` and its split to `samples.csv`
/// (`id, partition, x_0, …, <targets>`).
pub fn export_dataset(cfg: &ExperimentConfig, dir: &Path) -> Result<DatasetSplit> {
    fs::create_dir_all(dir)?;
    let mut pool = cfg.samples()?;
    pool.sort_by_key(|s| s.id);
    save_samples(&dir.join("samples.bin"), cfg.dataset.generator, &pool)?;
    let data = cfg.split()?;
    let mut w = writer(&dir.join("samples.csv"))?;
    let mut head = vec!["id".to_string(), "partition".to_string()];
    head.extend((0..pool.first().map_or(0, |s| s.input.len())).map(|i| format!("x_{i}")));
    head.extend(target_header(pool.first()));
    w.write_record(&head)?;
    for (partition, samples) in partitions(&data) {
        for s in samples {
            let mut cells = vec![s.id.to_string(), partition.name().to_string()];
            cells.extend(s.input.iter().map(|&x| num(x)));
            cells.extend(target_cells(&s.target));
            w.write_record(&cells)?;
        }
    }
    w.flush()?;
    Ok(data)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub state: TrainState,
}

fn checkpoint_path(dir: &Path, epoch: Option<usize>) -> PathBuf {
    match epoch {
        Some(e) => dir.join(format!("checkpoint-epoch-{e:04}.bin")),
        None => dir.join("checkpoint.bin"),
    }
}

fn drive(cfg: &ExperimentConfig, data: &DatasetSplit, mut trainer: Trainer<'_>, dir: &Path) -> Result<TrainState> {
    fs::create_dir_all(dir)?;
    let every = cfg.output.checkpoint_every;
    while trainer.state().epoch < cfg.train.epochs {
        trainer.run_epoch()?;
        let epoch = trainer.state().epoch;
        if every > 0 && epoch.is_multiple_of(every) {
            let ck = Checkpoint {
                config: cfg.clone(),
                state: trainer.state().clone(),
            };
            save_checkpoint(&checkpoint_path(dir, Some(epoch)), &ck)?;
        }
    }
    let state = trainer.into_state();
    let o = &cfg.output;
    if o.history {
        write_history(&dir.join("history.csv"), &state.history)?;
    }
    if o.metrics {
        write_metrics(&dir.join("metrics.csv"), cfg, data, &state.history)?;
    }
    if o.boundary {
        write_boundary(dir, &state.bundle, cfg, o.boundary_resolution)?;
    }
    if o.features {
        write_features(&dir.join("features.csv"), &state.bundle, data)?;
    }
    if o.checkpoint {
        let ck = Checkpoint {
            config: cfg.clone(),
            state,
        };
        save_checkpoint(&checkpoint_path(dir, None), &ck)?;
        return Ok(ck.state);
    }
    Ok(state)
}

/// Generate, split, train and evaluate, writing the configured outputs.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let dir = cfg.output_dir();
    let data = cfg.split()?;
    let trainer = Trainer::with_bundle(cfg.train_config(), cfg.initial_bundle()?, &data)?;
    let state = drive(cfg, &data, trainer, &dir)?;
    Ok(RunOutcome { dir, state })
}

/// Continues a checkpointed run to `cfg.train.epochs` (or `epochs`) and
/// writes the same outputs a straight run would.
pub fn resume(ck: Checkpoint, epochs: Option<usize>, dir: Option<PathBuf>) -> Result<RunOutcome> {
    let mut cfg = ck.config;
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if ck.state.epoch > cfg.train.epochs {
        return Err(Error::config(
            "train.epochs",
            format!(
                "checkpoint is already at epoch {}, past {}",
                ck.state.epoch, cfg.train.epochs
            ),
        ));
    }
    let dir = dir.unwrap_or_else(|| cfg.output_dir());
    let data = cfg.split()?;
    let trainer = Trainer::resume(cfg.train_config(), &data, ck.state)?;
    let state = drive(&cfg, &data, trainer, &dir)?;
    Ok(RunOutcome { dir, state })
}

/// Final numbers of one (method, ratio, seed) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub method: Method,
    pub ratio: f64,
    pub seed: u64,
    pub metrics: MetricsReport,
    pub disagreement: f64,
}

impl CellResult {
    fn values(&self) -> Vec<f64> {
        let mut v = self.metrics.values();
        v.push(self.disagreement);
        v
    }
}

/// Mean and population standard deviation over seeds for one (method, ratio).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub method: Method,
    pub ratio: f64,
    pub seeds: usize,
    /// Metric columns, then `disagreement`.
    pub columns: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn run_cell(cfg: &ExperimentConfig, method: Method, ratio: f64, seed: u64) -> Result<CellResult> {
    let c = cfg.cell(method, ratio, seed);
    c.validate()?;
    let data = c.split()?;
    let mut t = Trainer::with_bundle(c.train_config(), c.initial_bundle()?, &data)?;
    t.run()?;
    let state = t.into_state();
    let last = state
        .history
        .records
        .last()
        .cloned()
        .ok_or_else(|| Error::config("train.epochs", "a sweep needs at least one epoch"))?;
    Ok(CellResult {
        method,
        ratio,
        seed,
        metrics: last.metrics,
        disagreement: last.disagreement,
    })
}

/// Runs every (method, ratio, seed) cell of `cfg.sweep`, in parallel, and
/// aggregates over seeds. Results come back in grid order regardless of
/// scheduling.
pub fn sweep(cfg: &ExperimentConfig) -> Result<(Vec<CellResult>, Vec<SweepRow>)> {
    let s = &cfg.sweep;
    let grid: Vec<(Method, f64, u64)> = s
        .methods
        .iter()
        .flat_map(|&m| {
            s.ratios
                .iter()
                .flat_map(move |&r| s.seeds.iter().map(move |&seed| (m, r, seed)))
        })
        .collect();
    let cells = grid
        .par_iter()
        .map(|&(m, r, seed)| run_cell(cfg, m, r, seed))
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let rows = cells
        .chunks(s.seeds.len())
        .map(|group| {
            let first = &group[0];
            let mut columns = first.metrics.columns();
            columns.push("disagreement".into());
            let per_seed: Vec<Vec<f64>> = group.iter().map(CellResult::values).collect();
            let (mean, std) = (0..columns.len())
                .map(|j| mean_std(&per_seed.iter().map(|v| v[j]).collect::<Vec<_>>()))
                .unzip();
            SweepRow {
                method: first.method,
                ratio: first.ratio,
                seeds: group.len(),
                columns,
                mean,
                std,
            }
        })
        .collect();
    Ok((cells, rows))
}

/// `method, ratio, seeds, <col>_mean, <col>_std, …`.
pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = writer(path)?;
    let Some(first) = rows.first() else {
        return Err(Error::invalid("empty sweep"));
    };
    let mut head: Vec<String> = ["method", "ratio", "seeds"].map(String::from).into();
    for c in &first.columns {
        head.push(format!("{c}_mean"));
        head.push(format!("{c}_std"));
    }
    w.write_record(&head)?;
    for r in rows {
        let mut row = vec![r.method.to_string(), num(r.ratio), r.seeds.to_string()];
        for (m, s) in r.mean.iter().zip(&r.std) {
            row.push(num(*m));
            row.push(num(*s));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `method, ratio, seed, <metrics>, disagreement`, one row per cell.
pub fn write_sweep_cells(path: &Path, cells: &[CellResult]) -> Result<()> {
    let mut w = writer(path)?;
    let Some(first) = cells.first() else {
        return Err(Error::invalid("empty sweep"));
    };
    let mut head: Vec<String> = ["method", "ratio", "seed"].map(String::from).into();
    head.extend(first.metrics.columns());
    head.push("disagreement".into());
    w.write_record(&head)?;
    for c in cells {
        let mut row = vec![c.method.to_string(), num(c.ratio), c.seed.to_string()];
        row.extend(c.values().into_iter().map(num));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Sweeps and writes `sweep.csv` plus `sweep_cells.csv` into the output
/// directory.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<(PathBuf, Vec<SweepRow>)> {
    let dir = cfg.output_dir();
    fs::create_dir_all(&dir)?;
    let (cells, rows) = sweep(cfg)?;
    write_sweep_cells(&dir.join("sweep_cells.csv"), &cells)?;
    write_sweep(&dir.join("sweep.csv"), &rows)?;
    Ok((dir, rows))
}
