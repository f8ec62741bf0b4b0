//! `GNSC` training checkpoint.
//!
//! ```text
//! "GNSC" | version u16 | model config (TOML) | train config (TOML)
//! | normalizer: field, edge_diff, target as (means, stds)
//! | manifest: count, then (name, rank, dims...) per tensor | flat parameters
//! | optimizer flag u8 [+ Adam hyper-parameters, step, moments]
//! | epochs done u64 | RNG: seed u64, next stream u64
//! | history: count, then (epoch u64, loss, lr, seconds) | FNV-1a(all above) u64
//! ```
//!
//! Strings and vectors carry a `u64` length prefix.

use std::path::Path;

use crate::error::Result;
use crate::model::{GnsConfig, GnsParams, ParamSpec};
use crate::tensor::{Adam, AdamConfig};
use crate::training::{ChannelStats, EpochRecord, Normalizer, TrainConfig, TrainState};

use super::{read_file, verify_checksum, write_atomic, Decoder, Encoder};

pub const CHECKPOINT_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"GNSC";

fn to_toml<T: serde::Serialize>(v: &T) -> String {
    toml::to_string(v).expect("configuration types serialize to TOML")
}

fn put_stats(e: &mut Encoder, s: &ChannelStats) {
    e.f64_vec(&s.mean);
    e.f64_vec(&s.std);
}

fn get_stats(d: &mut Decoder<'_>) -> Result<ChannelStats> {
    let mean = d.f64_vec()?;
    let std = d.f64_vec()?;
    if mean.len() != std.len() {
        return Err(d.error("normalizer mean and std widths differ"));
    }
    Ok(ChannelStats { mean, std })
}

/// Serialize a training state. Without the optimizer the file is enough for
/// inference; resuming from it restarts the moment estimates.
pub fn encode_checkpoint(state: &TrainState, include_optimizer: bool) -> Vec<u8> {
    let mut e = Encoder::default();
    e.bytes(MAGIC);
    e.u16(CHECKPOINT_VERSION);
    e.str(&to_toml(state.params.config()));
    e.str(&to_toml(&state.config));
    for s in [&state.normalizer.field, &state.normalizer.edge_diff, &state.normalizer.target] {
        put_stats(&mut e, s);
    }
    let specs = state.params.specs();
    e.u64(specs.len() as u64);
    for s in specs {
        e.str(&s.name);
        e.u64(s.shape.len() as u64);
        s.shape.iter().for_each(|&d| e.u64(d as u64));
    }
    e.f64_vec(&state.params.flat());
    e.u8(include_optimizer as u8);
    if include_optimizer {
        let opt = &state.optimizer;
        let c = opt.config;
        e.f64s(&[c.lr, c.beta1, c.beta2, c.epsilon]);
        e.u64(opt.step_count());
        let (m, v) = opt.moments();
        e.u64(m.len() as u64);
        for (m, v) in m.iter().zip(v) {
            e.f64_vec(m);
            e.f64_vec(v);
        }
    }
    e.u64(state.epochs_done as u64);
    e.u64(state.config.seed);
    e.u64(state.epochs_done as u64);
    e.u64(state.history.len() as u64);
    for r in &state.history {
        e.u64(r.epoch as u64);
        e.f64s(&[r.mean_loss, r.lr, r.wall_seconds]);
    }
    let sum = super::checksum(&e.buf);
    e.u64(sum);
    e.buf
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<TrainState> {
    let mut d = Decoder::new(bytes, path);
    d.magic(MAGIC)?;
    if bytes.len() < 14 {
        return Err(d.error("truncated checkpoint"));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    verify_checksum(path, u64::from_le_bytes(tail.try_into().unwrap()), body)?;
    let version = d.u16()?;
    if version != super::checkpoint::CHECKPOINT_VERSION {
        return Err(d.error(format!("unsupported checkpoint version {version}")));
    }
    let model: GnsConfig = toml::from_str(d.str()?).map_err(|e| d.error(format!("model config: {e}")))?;
    let config: TrainConfig = toml::from_str(d.str()?).map_err(|e| d.error(format!("train config: {e}")))?;
    let normalizer = Normalizer {
        field: get_stats(&mut d)?,
        edge_diff: get_stats(&mut d)?,
        target: get_stats(&mut d)?,
    };
    let n_specs = d.len(16)?;
    let mut manifest = Vec::with_capacity(n_specs);
    for _ in 0..n_specs {
        let name = d.str()?.to_string();
        let rank = d.len(8)?;
        let shape = (0..rank).map(|_| d.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        manifest.push(ParamSpec { name, shape });
    }
    let flat = d.f64_vec()?;
    let manifest_count: usize = manifest.iter().map(ParamSpec::numel).sum();
    if manifest_count != flat.len() {
        return Err(d.error(format!("manifest covers {manifest_count} values, vector has {}", flat.len())));
    }
    let params = GnsParams::from_flat(model, &flat).map_err(|e| d.error(e.to_string()))?;
    if params.specs() != manifest.as_slice() {
        return Err(d.error("parameter manifest does not match the model configuration"));
    }
    let optimizer = match d.u8()? {
        0 => Adam::new(AdamConfig { lr: config.lr, ..AdamConfig::default() }, params.tensors()),
        1 => {
            let h = d.f64s(4)?;
            let cfg = AdamConfig {
                lr: h[0],
                beta1: h[1],
                beta2: h[2],
                epsilon: h[3],
            };
            let step = d.u64()?;
            let slots = d.len(16)?;
            let (mut m, mut v) = (Vec::with_capacity(slots), Vec::with_capacity(slots));
            for _ in 0..slots {
                m.push(d.f64_vec()?);
                v.push(d.f64_vec()?);
            }
            let sizes_match =
                m.len() == params.tensors().len() && m.iter().zip(params.tensors()).all(|(m, p)| m.len() == p.len());
            if !sizes_match {
                return Err(d.error("optimizer state does not match the parameters"));
            }
            Adam::from_parts(cfg, step, m, v).map_err(|e| d.error(e.to_string()))?
        }
        f => return Err(d.error(format!("bad optimizer flag {f}"))),
    };
    let epochs_done = d.u64()? as usize;
    let (seed, stream) = (d.u64()?, d.u64()?);
    if seed != config.seed || stream != epochs_done as u64 {
        return Err(d.error("RNG state disagrees with the training config and epoch counter"));
    }
    let n_hist = d.len(32)?;
    let mut history = Vec::with_capacity(n_hist);
    for _ in 0..n_hist {
        let epoch = d.u64()? as usize;
        let v = d.f64s(3)?;
        history.push(EpochRecord {
            epoch,
            mean_loss: v[0],
            lr: v[1],
            wall_seconds: v[2],
        });
    }
    d.u64()?;
    d.finish()?;
    Ok(TrainState {
        config,
        params,
        normalizer,
        optimizer,
        epochs_done,
        history,
    })
}

pub fn write_checkpoint(path: &Path, state: &TrainState, overwrite: bool) -> Result<()> {
    write_atomic(path, &encode_checkpoint(state, true), overwrite)
}

pub fn read_checkpoint(path: &Path) -> Result<TrainState> {
    decode_checkpoint(&read_file(path)?, path)
}
