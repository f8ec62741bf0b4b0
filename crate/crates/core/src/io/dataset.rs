//! `GNSD` dataset container.
//!
//! ```text
//! "GNSD" | version u16 | case u8 | nx ny Nt C N_s: u32 | float bits u8 (64)
//! | byte order u8 (0 = little) | dt f64 | n_coef u8 | coefficients f64...
//! | payload: N_s x [Nt, nx*ny, C] f64 | seeds: N_s x u64 | FNV-1a(payload) u64
//! ```

use std::path::Path;

use crate::datagen::{Dataset, GridSpec, PdeCase, Physics, Trajectory};
use crate::error::{GnsError, Result};

use super::{checksum, read_file, verify_checksum, write_atomic, Decoder, Encoder};

pub const DATASET_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"GNSD";
const FLOAT_BITS: u8 = 64;
const LITTLE_ENDIAN: u8 = 0;

fn coefficients(p: &Physics) -> Vec<f64> {
    match *p {
        Physics::BurgersScalar { nu } => vec![nu],
        Physics::BurgersCoupled { mu } => vec![mu],
        Physics::AllenCahn { epsilon } => vec![epsilon],
        Physics::Swe { gravity, nu } => vec![gravity, nu],
    }
}

fn physics_from(case: PdeCase, c: &[f64]) -> Option<Physics> {
    Some(match (case, c) {
        (PdeCase::BurgersScalar, &[nu]) => Physics::BurgersScalar { nu },
        (PdeCase::BurgersCoupled, &[mu]) => Physics::BurgersCoupled { mu },
        (PdeCase::AllenCahn, &[epsilon]) => Physics::AllenCahn { epsilon },
        (PdeCase::Swe, &[gravity, nu]) => Physics::Swe { gravity, nu },
        _ => return None,
    })
}

fn u32_field(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| GnsError::Input(format!("{what} = {v} does not fit the container header")))
}

pub fn encode_dataset(ds: &Dataset) -> Result<Vec<u8>> {
    let dt = ds.dt();
    if ds.trajectories.iter().any(|t| t.dt.to_bits() != dt.to_bits()) {
        return Err(GnsError::Input("trajectories disagree on the snapshot interval".into()));
    }
    let mut e = Encoder::default();
    e.bytes(MAGIC);
    e.u16(DATASET_VERSION);
    e.u8(ds.case().id());
    e.u32(u32_field(ds.grid.nx, "nx")?);
    e.u32(u32_field(ds.grid.ny, "ny")?);
    e.u32(u32_field(ds.n_snapshots(), "Nt")?);
    e.u32(u32_field(ds.channels(), "C")?);
    e.u32(u32_field(ds.len(), "N_s")?);
    e.u8(FLOAT_BITS);
    e.u8(LITTLE_ENDIAN);
    e.f64(dt);
    let coef = coefficients(&ds.physics);
    e.u8(coef.len() as u8);
    e.f64s(&coef);
    let start = e.buf.len();
    for t in &ds.trajectories {
        e.f64s(t.fields());
    }
    let sum = checksum(&e.buf[start..]);
    for t in &ds.trajectories {
        e.u64(t.ic_seed);
    }
    e.u64(sum);
    Ok(e.buf)
}

pub fn decode_dataset(bytes: &[u8], path: &Path) -> Result<Dataset> {
    let mut d = Decoder::new(bytes, path);
    d.magic(MAGIC)?;
    let version = d.u16()?;
    if version != DATASET_VERSION {
        return Err(d.error(format!("unsupported dataset version {version}")));
    }
    let case_id = d.u8()?;
    let case = PdeCase::from_id(case_id).ok_or_else(|| d.error(format!("unknown case id {case_id}")))?;
    let nx = d.u32()? as usize;
    let ny = d.u32()? as usize;
    let nt = d.u32()? as usize;
    let channels = d.u32()? as usize;
    let count = d.u32()? as usize;
    if channels != case.channels() {
        return Err(d.error(format!("{case} has {} channels, header says {channels}", case.channels())));
    }
    let (bits, order) = (d.u8()?, d.u8()?);
    if bits != FLOAT_BITS || order != LITTLE_ENDIAN {
        return Err(d.error(format!("unsupported float layout ({bits} bits, byte order {order})")));
    }
    let dt = d.f64()?;
    let n_coef = d.u8()? as usize;
    let coef = d.f64s(n_coef)?;
    let physics = physics_from(case, &coef).ok_or_else(|| d.error("physics coefficients do not match the case"))?;
    let n_nodes = nx * ny;
    let per_traj = nt
        .checked_mul(n_nodes)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| d.error("header dimensions overflow"))?;
    let payload_len = per_traj.checked_mul(count).and_then(|v| v.checked_mul(8));
    let expected = payload_len.and_then(|p| p.checked_add(8 * count + 8));
    if expected != Some(d.remaining()) {
        return Err(d.error(format!(
            "header promises {count} x [{nt}, {n_nodes}, {channels}] values but {} bytes follow it",
            d.remaining()
        )));
    }
    let start = d.position();
    let payload_len = payload_len.unwrap();
    let payload = &bytes[start..start + payload_len];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    verify_checksum(path, stored, payload)?;
    let mut fields = Vec::with_capacity(count);
    for _ in 0..count {
        fields.push(d.f64s(per_traj)?);
    }
    let mut trajectories = Vec::with_capacity(count);
    for f in fields {
        let seed = d.u64()?;
        let t = Trajectory::new(case, n_nodes, dt, seed, f).map_err(|e| d.error(e.to_string()))?;
        trajectories.push(t);
    }
    d.u64()?;
    d.finish()?;
    Dataset::new(GridSpec::new(nx, ny), physics, trajectories).map_err(|e| d.error(e.to_string()))
}

pub fn write_dataset(path: &Path, ds: &Dataset, overwrite: bool) -> Result<()> {
    write_atomic(path, &encode_dataset(ds)?, overwrite)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&read_file(path)?, path)
}
