//! Binary checkpoints and sample files.
//!
//! Both use one container layout, all integers little-endian:
//!
//! | bytes | content                                              |
//! |-------|------------------------------------------------------|
//! | 8     | magic `CHIMODEL`                                     |
//! | 4     | format version (u32)                                 |
//! | 8     | header length in bytes (u64)                         |
//! | n     | UTF-8 JSON header                                    |
//! | 8·m   | payload of `m` f64 values                            |
//!
//! The header holds `kind` (`"checkpoint"` or `"samples"`), `payload_len`
//! (`m`), an `arrays` table of `{name, shape, offset}` entries indexing
//! into the payload in f64 units, and a kind-specific `body`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Generator};
use crate::data::{Sample, Target};
use crate::error::{Error, Result};
use crate::nn::{EmaTwin, ModelBundle};
use crate::objectives::AugStreams;
use crate::optim::Velocity;
use crate::rng::{RngState, RngStream};
use crate::tensor::Tensor;
use crate::train::{History, Sampler, SamplerState, TrainState};

pub const MAGIC: [u8; 8] = *b"CHIMODEL";
pub const FORMAT_VERSION: u32 = 1;
const PREFIX: usize = 8 + 4 + 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Header<B> {
    kind: String,
    payload_len: u64,
    arrays: Vec<ArrayEntry>,
    body: B,
}

fn write_container<B: Serialize>(path: &Path, kind: &str, body: B, arrays: &[(String, &Tensor)]) -> Result<()> {
    let mut entries = Vec::with_capacity(arrays.len());
    let mut offset = 0u64;
    for (name, t) in arrays {
        entries.push(ArrayEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.data().len() as u64;
    }
    let header = serde_json::to_vec(&Header {
        kind: kind.to_string(),
        payload_len: offset,
        arrays: entries,
        body,
    })
    .map_err(|e| Error::Format(format!("cannot encode header: {e}")))?;

    let mut buf = Vec::with_capacity(PREFIX + header.len() + 8 * offset as usize);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for (_, t) in arrays {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    // Write beside the target and rename so readers never see a partial file.
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&buf)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_container<B: for<'de> Deserialize<'de>>(path: &Path, kind: &str) -> Result<(B, Vec<(String, Tensor)>)> {
    let bytes = fs::read(path)?;
    let fail = |m: String| Error::Format(format!("{}: {m}", path.display()));
    if bytes.len() < PREFIX {
        return Err(fail(format!("{} bytes is shorter than the fixed prefix", bytes.len())));
    }
    if bytes[..8] != MAGIC {
        return Err(fail("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(fail(format!(
            "format version {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let rest = (bytes.len() - PREFIX) as u64;
    if header_len > rest {
        return Err(fail(format!(
            "truncated header: {header_len} bytes declared, {rest} present"
        )));
    }
    let header_end = PREFIX + header_len as usize;
    let header: Header<serde_json::Value> =
        serde_json::from_slice(&bytes[PREFIX..header_end]).map_err(|e| fail(format!("bad header: {e}")))?;
    if header.kind != kind {
        return Err(fail(format!("holds a {} file, expected {kind}", header.kind)));
    }
    let body: B = serde_json::from_value(header.body).map_err(|e| fail(format!("bad {kind} header: {e}")))?;
    let payload = &bytes[header_end..];
    let declared = header
        .payload_len
        .checked_mul(8)
        .ok_or_else(|| fail("payload length overflows".into()))?;
    if (payload.len() as u64) < declared {
        return Err(fail(format!(
            "truncated payload: {declared} bytes declared, {} present",
            payload.len()
        )));
    }
    if payload.len() as u64 > declared {
        return Err(fail(format!(
            "{} trailing bytes after the payload",
            payload.len() as u64 - declared
        )));
    }

    let mut arrays = Vec::with_capacity(header.arrays.len());
    for e in header.arrays {
        let len = e.shape.iter().product::<usize>() as u64;
        let end = e.offset.checked_add(len).filter(|&end| end <= header.payload_len);
        let end = end.ok_or_else(|| fail(format!("array {} lies outside the payload", e.name)))?;
        let data = payload[8 * e.offset as usize..8 * end as usize]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        arrays.push((e.name, Tensor::new(e.shape, data)?));
    }
    Ok((body, arrays))
}

/// Config snapshot plus the complete training state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub state: TrainState,
}

#[derive(Serialize, Deserialize)]
struct CheckpointBody {
    config: ExperimentConfig,
    epoch: usize,
    ema_alpha: Option<f64>,
    aug_labeled: RngState,
    aug_unlabeled: RngState,
    dropout: RngState,
    labeled_sampler: SamplerState,
    unlabeled_sampler: SamplerState,
    history: History,
}

pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let s = &ck.state;
    let body = CheckpointBody {
        config: ck.config.clone(),
        epoch: s.epoch,
        ema_alpha: s.twin.as_ref().map(|t| t.alpha),
        aug_labeled: s.streams.labeled.state(),
        aug_unlabeled: s.streams.unlabeled.state(),
        dropout: s.streams.dropout.state(),
        labeled_sampler: s.labeled.state(),
        unlabeled_sampler: s.unlabeled.state(),
        history: s.history.clone(),
    };
    let params = s.bundle.named_params();
    let mut arrays: Vec<(String, &Tensor)> = Vec::new();
    for (name, _, t) in &params {
        arrays.push((format!("param/{name}"), t));
    }
    for ((name, _, _), v) in params.iter().zip(&s.velocity.0) {
        arrays.push((format!("velocity/{name}"), v));
    }
    let shadow = s.twin.as_ref().map(|t| t.shadow.named_params()).unwrap_or_default();
    for (name, _, t) in &shadow {
        arrays.push((format!("ema/{name}"), t));
    }
    write_container(path, "checkpoint", body, &arrays)
}

fn take(arrays: &mut Vec<(String, Tensor)>, name: &str) -> Result<Tensor> {
    let i = arrays
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::Format(format!("checkpoint lacks array {name}")))?;
    Ok(arrays.swap_remove(i).1)
}

/// Overwrites every parameter of `bundle` with `<prefix>/<name>` from `arrays`.
fn fill(bundle: &mut ModelBundle, prefix: &str, arrays: &mut Vec<(String, Tensor)>) -> Result<()> {
    let names: Vec<String> = bundle.named_params().into_iter().map(|(n, _, _)| n).collect();
    for (name, p) in names.iter().zip(bundle.params_mut()) {
        let t = take(arrays, &format!("{prefix}/{name}"))?;
        if t.shape() != p.shape() {
            return Err(Error::Format(format!(
                "{prefix}/{name} has shape {:?}, the configured network needs {:?}",
                t.shape(),
                p.shape()
            )));
        }
        *p = t;
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let (body, mut arrays): (CheckpointBody, _) = read_container(path, "checkpoint")?;
    body.config.validate()?;
    let mut bundle = body.config.initial_bundle()?;
    bundle.head_mode = body.config.train.method.head_mode();
    fill(&mut bundle, "param", &mut arrays)?;
    let names: Vec<String> = bundle.named_params().into_iter().map(|(n, _, _)| n).collect();
    let velocity = names
        .iter()
        .map(|n| take(&mut arrays, &format!("velocity/{n}")))
        .collect::<Result<Vec<_>>>()?;
    let twin = match body.ema_alpha {
        Some(alpha) => {
            let mut t = EmaTwin::new(&bundle, alpha)?;
            fill(&mut t.shadow, "ema", &mut arrays)?;
            Some(t)
        }
        None => None,
    };
    if let Some((name, _)) = arrays.first() {
        return Err(Error::Format(format!("unexpected array {name}")));
    }
    Ok(Checkpoint {
        state: TrainState {
            bundle,
            velocity: Velocity(velocity),
            twin,
            streams: AugStreams {
                labeled: RngStream::from_state(body.aug_labeled),
                unlabeled: RngStream::from_state(body.aug_unlabeled),
                dropout: RngStream::from_state(body.dropout),
            },
            labeled: Sampler::from_state(body.labeled_sampler)?,
            unlabeled: Sampler::from_state(body.unlabeled_sampler)?,
            epoch: body.epoch,
            history: body.history,
        },
        config: body.config,
    })
}

#[derive(Serialize, Deserialize)]
struct SamplesBody {
    generator: Generator,
    ids: Vec<u64>,
    /// Whether the `targets` column holds class indices.
    classes: bool,
}

/// Writes a generated sample pool. Inputs go to the `inputs` array
/// (`[n, width]`), targets to `targets` (`[n, k]`, class indices as floats).
pub fn save_samples(path: &Path, generator: Generator, samples: &[Sample]) -> Result<()> {
    let classes = matches!(samples.first().map(|s| &s.target), None | Some(Target::Class(_)));
    let width = samples.first().map_or(0, |s| s.input.len());
    let k = samples.first().map_or(1, |s| match &s.target {
        Target::Class(_) => 1,
        Target::Values(v) => v.len(),
    });
    let mut x = Vec::with_capacity(samples.len() * width);
    let mut y = Vec::with_capacity(samples.len() * k);
    for s in samples {
        if s.input.len() != width {
            return Err(Error::Shape(format!(
                "sample {} has width {}, expected {width}",
                s.id,
                s.input.len()
            )));
        }
        x.extend_from_slice(&s.input);
        match (&s.target, classes) {
            (Target::Class(c), true) => y.push(*c as f64),
            (Target::Values(v), false) if v.len() == k => y.extend_from_slice(v),
            _ => return Err(Error::invalid(format!("sample {} has a mismatched target", s.id))),
        }
    }
    let inputs = Tensor::new(vec![samples.len(), width], x)?;
    let targets = Tensor::new(vec![samples.len(), k], y)?;
    let body = SamplesBody {
        generator,
        ids: samples.iter().map(|s| s.id).collect(),
        classes,
    };
    write_container(
        path,
        "samples",
        body,
        &[("inputs".into(), &inputs), ("targets".into(), &targets)],
    )
}

pub fn load_samples(path: &Path) -> Result<(Generator, Vec<Sample>)> {
    let (body, mut arrays): (SamplesBody, _) = read_container(path, "samples")?;
    let inputs = take(&mut arrays, "inputs")?;
    let targets = take(&mut arrays, "targets")?;
    let n = body.ids.len();
    if inputs.shape().first() != Some(&n) || targets.shape().first() != Some(&n) {
        return Err(Error::Format(format!(
            "{}: array rows disagree with {n} ids",
            path.display()
        )));
    }
    let samples = body
        .ids
        .iter()
        .enumerate()
        .map(|(r, &id)| {
            let t = targets.row(r);
            let target = if body.classes {
                Target::Class(t[0] as usize)
            } else {
                Target::Values(t.to_vec())
            };
            Sample {
                id,
                input: inputs.row(r).to_vec(),
                target,
            }
        })
        .collect();
    Ok((body.generator, samples))
}
