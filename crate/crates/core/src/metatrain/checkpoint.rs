//! Named-tensor checkpoint file and the mapping of training state onto it.
//!
//! Layout (little-endian): magic `CELO1\0`, `u32` version, `u64` tensor count,
//! then per tensor `u32` name length, UTF-8 name, `u8` dtype (1 = f64), `u8`
//! rank, `u64` extents and a `u64` payload offset; then the payloads back to
//! back, then a `u64` FNV-1a hash of the payload bytes.

use std::collections::HashSet;
use std::hash::Hasher;
use std::path::Path;

use thiserror::Error;

use crate::error::{Error, Result};
use crate::lopt::{CeloParams, CeloState, Factored, NormKind};
use crate::nn::LstmState;
use crate::tasks::TaskInstance;
use crate::tensor::{ParamSet, Tensor};

use super::meta_opt::AdamWState;
use super::stage::{pair_streams, CeloEpisode, CeloPair, CeloTrajectory, CeloUnroller, MetaState, StageId, StagePlan, StageRun};
use super::pes::ParticlePair;

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"CELO1\0";
pub const CHECKPOINT_VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("bad magic: not a Celo checkpoint")]
    BadMagic,
    #[error("version mismatch: file has {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated checkpoint: {0}")]
    Truncated(String),
    #[error("checksum mismatch")]
    ChecksumMismatch,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    h.finish()
}

pub fn encode_checkpoint(tensors: &ParamSet) -> Vec<u8> {
    let mut header = Vec::new();
    header.extend_from_slice(CHECKPOINT_MAGIC);
    header.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    header.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    let mut payload = Vec::with_capacity(tensors.numel() * 8);
    for (name, t) in tensors.iter() {
        header.extend_from_slice(&(name.len() as u32).to_le_bytes());
        header.extend_from_slice(name.as_bytes());
        header.push(DTYPE_F64);
        header.push(t.rank() as u8);
        for &e in t.shape() {
            header.extend_from_slice(&(e as u64).to_le_bytes());
        }
        header.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = fnv1a(&payload);
    header.extend_from_slice(&payload);
    header.extend_from_slice(&checksum.to_le_bytes());
    header
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CheckpointError::Truncated(format!("while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: usize,
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamSet, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(CHECKPOINT_MAGIC.len(), "magic").map_err(|_| CheckpointError::BadMagic)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
    }
    let count = r.u64("tensor count")?;
    let mut entries = Vec::new();
    let mut names = HashSet::new();
    let mut expected_offset = 0u64;
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| CheckpointError::Malformed(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        if !names.insert(name.clone()) {
            return Err(CheckpointError::Malformed(format!("duplicate tensor name {name:?}")));
        }
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F64 {
            return Err(CheckpointError::Malformed(format!("tensor {name:?}: unsupported dtype {dtype}")));
        }
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut len = 1usize;
        for _ in 0..rank {
            let e = usize::try_from(r.u64("extent")?)
                .map_err(|_| CheckpointError::Malformed(format!("tensor {name:?}: extent too large")))?;
            len = len
                .checked_mul(e)
                .ok_or_else(|| CheckpointError::Malformed(format!("tensor {name:?}: size overflows")))?;
            shape.push(e);
        }
        let offset = r.u64("payload offset")?;
        if offset != expected_offset {
            return Err(CheckpointError::Malformed(format!("tensor {name:?}: payload offset {offset}, expected {expected_offset}")));
        }
        let bytes_len = (len as u64)
            .checked_mul(8)
            .ok_or_else(|| CheckpointError::Malformed(format!("tensor {name:?}: size overflows")))?;
        expected_offset = expected_offset
            .checked_add(bytes_len)
            .ok_or_else(|| CheckpointError::Malformed("payload size overflows".into()))?;
        entries.push(Entry { name, shape, offset, len });
    }
    let payload_len = usize::try_from(expected_offset).map_err(|_| CheckpointError::Truncated("payload".into()))?;
    let payload = r.take(payload_len, "payload")?;
    let checksum = r.u64("checksum")?;
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    if checksum != fnv1a(payload) {
        return Err(CheckpointError::ChecksumMismatch);
    }
    let mut out = ParamSet::new();
    for e in entries {
        let start = e.offset as usize;
        let data = payload[start..start + e.len * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(e.shape, data).map_err(|err| CheckpointError::Malformed(err.to_string()))?;
        out.insert(e.name, t).map_err(|err| CheckpointError::Malformed(err.to_string()))?;
    }
    Ok(out)
}

pub fn save_tensors(tensors: &ParamSet, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode_checkpoint(tensors))?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_tensors(path: &Path) -> Result<ParamSet> {
    Ok(decode_checkpoint(&std::fs::read(path)?)?)
}

const PHI: &str = "phi/";
const CELO_SCALARS: &str = "celo/scalars";
const META_COUNTERS: &str = "meta/counters";

fn vector(values: Vec<f64>) -> Tensor {
    let n = values.len();
    Tensor::new(vec![n], values).expect("vector shape")
}

fn insert(set: &mut ParamSet, name: String, t: Tensor) -> Result<()> {
    set.insert(name, t)
}

fn fetch<'a>(set: &'a ParamSet, name: &str) -> Result<&'a Tensor> {
    set.get(name)
        .ok_or_else(|| CheckpointError::Malformed(format!("missing tensor {name:?}")).into())
}

fn fetch_vec<'a>(set: &'a ParamSet, name: &str, len: usize) -> Result<&'a [f64]> {
    let t = fetch(set, name)?;
    if t.len() != len {
        return Err(CheckpointError::Malformed(format!("tensor {name:?} has {} values, expected {len}", t.len())).into());
    }
    Ok(t.data())
}

fn counter(v: f64, what: &str) -> Result<u64> {
    if v >= 0.0 && v.fract() == 0.0 && v < 9.007_199_254_740_992e15 {
        Ok(v as u64)
    } else {
        Err(CheckpointError::Malformed(format!("{what} is not a counter: {v}")).into())
    }
}

fn put_params(set: &mut ParamSet, params: &CeloParams) -> Result<()> {
    for (name, t) in params.to_meta().iter() {
        insert(set, format!("{PHI}{name}"), t.clone())?;
    }
    let norm = match params.norm {
        NormKind::L2 => 0.0,
        NormKind::Rms => 1.0,
    };
    insert(set, CELO_SCALARS.into(), vector(vec![params.alpha, params.lambda1, params.lambda2, norm]))
}

/// Learned weights only, read from any checkpoint written by this module.
pub fn params_from_tensors(set: &ParamSet) -> Result<CeloParams> {
    let s = fetch_vec(set, CELO_SCALARS, 4)?;
    let norm = match s[3] {
        0.0 => NormKind::L2,
        1.0 => NormKind::Rms,
        other => return Err(CheckpointError::Malformed(format!("unknown norm code {other}")).into()),
    };
    let meta: ParamSet = set
        .iter()
        .filter_map(|(n, t)| n.strip_prefix(PHI).map(|s| (s.to_string(), t.clone())))
        .collect();
    let template = CeloParams::init(&crate::rng::RngStream::new(0));
    let params = template
        .with_meta(&meta)
        .map_err(|_| Error::from(CheckpointError::Malformed("learned weights do not match the Celo layout".into())))?;
    Ok(CeloParams { alpha: s[0], lambda1: s[1], lambda2: s[2], norm, ..params })
}

pub fn save_params(params: &CeloParams, path: &Path) -> Result<()> {
    let mut set = ParamSet::new();
    put_params(&mut set, params)?;
    save_tensors(&set, path)
}

pub fn load_params(path: &Path) -> Result<CeloParams> {
    params_from_tensors(&load_tensors(path)?)
}

fn put_state(set: &mut ParamSet, prefix: &str, state: &CeloState) -> Result<()> {
    let initial = state.initial_loss.unwrap_or(f64::NAN);
    insert(
        set,
        format!("{prefix}scalars"),
        vector(vec![
            state.step as f64,
            state.horizon as f64,
            f64::from(u8::from(state.diverged)),
            f64::from(u8::from(state.initial_loss.is_some())),
            initial,
        ]),
    )?;
    insert(set, format!("{prefix}loss_emas"), vector(state.loss_emas.to_vec()))?;
    insert(set, format!("{prefix}lstm_h"), vector(state.lstm.h.clone()))?;
    insert(set, format!("{prefix}lstm_c"), vector(state.lstm.c.clone()))?;
    for (i, acc) in state.tensors.iter().enumerate() {
        let p = format!("{prefix}acc{i}/");
        insert(set, format!("{p}shape"), vector(acc.shape.iter().map(|&e| e as f64).collect()))?;
        for (k, m) in acc.momenta.iter().enumerate() {
            insert(set, format!("{p}m{k}"), vector(m.clone()))?;
        }
        insert(set, format!("{p}v"), vector(acc.second_moment.clone()))?;
        if let Some(f) = &acc.factored {
            insert(set, format!("{p}rows"), vector(f.rows.clone()))?;
            insert(set, format!("{p}cols"), vector(f.cols.clone()))?;
        }
    }
    Ok(())
}

fn take_state(set: &ParamSet, prefix: &str, theta: &ParamSet) -> Result<CeloState> {
    let s = fetch_vec(set, &format!("{prefix}scalars"), 5)?;
    let mut state = CeloState::new(theta, counter(s[1], "horizon")?.max(1) as usize)?;
    state.step = counter(s[0], "step")? as usize;
    state.diverged = s[2] != 0.0;
    state.initial_loss = (s[3] != 0.0).then_some(s[4]);
    state.loss_emas.copy_from_slice(fetch_vec(set, &format!("{prefix}loss_emas"), 4)?);
    let hidden = state.lstm.h.len();
    state.lstm = LstmState {
        h: fetch_vec(set, &format!("{prefix}lstm_h"), hidden)?.to_vec(),
        c: fetch_vec(set, &format!("{prefix}lstm_c"), hidden)?.to_vec(),
    };
    for (i, acc) in state.tensors.iter_mut().enumerate() {
        let p = format!("{prefix}acc{i}/");
        let shape: Vec<f64> = acc.shape.iter().map(|&e| e as f64).collect();
        if fetch_vec(set, &format!("{p}shape"), shape.len())? != shape.as_slice() {
            return Err(CheckpointError::Malformed(format!("accumulator {i} shape mismatch")).into());
        }
        let n = acc.second_moment.len();
        for k in 0..3 {
            acc.momenta[k] = fetch_vec(set, &format!("{p}m{k}"), n)?.to_vec();
        }
        acc.second_moment = fetch_vec(set, &format!("{p}v"), n)?.to_vec();
        if let Some(f) = &acc.factored {
            let (r, c) = (f.rows.len(), f.cols.len());
            acc.factored = Some(Factored {
                rows: fetch_vec(set, &format!("{p}rows"), r)?.to_vec(),
                cols: fetch_vec(set, &format!("{p}cols"), c)?.to_vec(),
            });
        }
    }
    Ok(state)
}

fn put_set(set: &mut ParamSet, prefix: &str, values: &ParamSet) -> Result<()> {
    for (name, t) in values.iter() {
        insert(set, format!("{prefix}{name}"), t.clone())?;
    }
    Ok(())
}

fn take_set(set: &ParamSet, prefix: &str, template: &ParamSet) -> Result<ParamSet> {
    let mut out = ParamSet::new();
    for (name, t) in template.iter() {
        let key = format!("{prefix}{name}");
        let stored = fetch(set, &key)?;
        if !stored.same_shape(t) {
            return Err(CheckpointError::Malformed(format!("tensor {key:?} has the wrong shape")).into());
        }
        out.insert(name, stored.clone())?;
    }
    Ok(out)
}

/// Serializes φ and the full meta-training state.
pub fn checkpoint_tensors(params: &CeloParams, meta: &MetaState) -> Result<ParamSet> {
    let mut set = ParamSet::new();
    put_params(&mut set, params)?;
    insert(
        &mut set,
        META_COUNTERS.into(),
        vector(vec![
            meta.stage.index() as f64,
            meta.seed as f64,
            meta.iteration as f64,
            f64::from(meta.adam.t),
            meta.pairs.len() as f64,
        ]),
    )?;
    // Seeds are stored exactly as two 32-bit halves as well.
    insert(&mut set, "meta/seed".into(), vector(vec![(meta.seed >> 32) as f64, (meta.seed & 0xffff_ffff) as f64]))?;
    put_set(&mut set, "meta/adam_m/", &meta.adam.m)?;
    put_set(&mut set, "meta/adam_v/", &meta.adam.v)?;
    for (i, pair) in meta.pairs.iter().enumerate() {
        let p = format!("pair{i}/");
        insert(
            &mut set,
            format!("{p}counters"),
            vector(vec![
                pair.elapsed as f64,
                pair.horizon as f64,
                pair.resets as f64,
                pair.episode.task_index as f64,
                pair.episode.task.tau(),
            ]),
        )?;
        put_set(&mut set, &format!("{p}xi/"), &pair.xi)?;
        for (side, traj) in [("plus", &pair.plus), ("minus", &pair.minus)] {
            put_set(&mut set, &format!("{p}{side}/theta/"), &traj.theta)?;
            put_state(&mut set, &format!("{p}{side}/state/"), &traj.state)?;
        }
    }
    Ok(set)
}

pub fn checkpoint_save(params: &CeloParams, meta: &MetaState, path: &Path) -> Result<()> {
    save_tensors(&checkpoint_tensors(params, meta)?, path)
}

/// Restores φ and meta-state. The suite must be the one training ran on.
pub fn checkpoint_from_tensors(set: &ParamSet, suite: &[TaskInstance]) -> Result<(CeloParams, MetaState)> {
    let params = params_from_tensors(set)?;
    let c = fetch_vec(set, META_COUNTERS, 5)?;
    let stage = StageId::from_index(counter(c[0], "stage")?)
        .ok_or_else(|| Error::from(CheckpointError::Malformed(format!("unknown stage {}", c[0]))))?;
    let halves = fetch_vec(set, "meta/seed", 2)?;
    let seed = (counter(halves[0], "seed")? << 32) | counter(halves[1], "seed")?;
    let iteration = counter(c[2], "iteration")? as usize;
    let adam_t = u32::try_from(counter(c[3], "meta step")?)
        .map_err(|_| Error::from(CheckpointError::Malformed("meta step out of range".into())))?;
    let n_pairs = counter(c[4], "pair count")? as usize;

    let plan = StagePlan::new(stage, &params);
    let trainable = plan.trainable(&params.to_meta());
    let adam = AdamWState {
        m: take_set(set, "meta/adam_m/", &trainable)?,
        v: take_set(set, "meta/adam_v/", &trainable)?,
        t: adam_t,
    };
    let unroller = CeloUnroller { suite, base: &params, variant: stage.variant() };
    let mut pairs: Vec<CeloPair> = Vec::with_capacity(n_pairs);
    for (i, rng) in pair_streams(seed, stage, n_pairs).iter().enumerate() {
        let p = format!("pair{i}/");
        let pc = fetch_vec(set, &format!("{p}counters"), 5)?;
        let resets = counter(pc[2], "resets")?;
        let episode: CeloEpisode = unroller.episode(&rng.child("episode", resets))?;
        if episode.task_index as f64 != pc[3] || episode.task.tau() != pc[4] {
            return Err(CheckpointError::Malformed(format!("pair {i} does not match the task suite")).into());
        }
        let template = crate::nn::init_params(episode.task.net(), &rng.child("template", 0));
        let mut sides = Vec::with_capacity(2);
        for side in ["plus", "minus"] {
            let theta = take_set(set, &format!("{p}{side}/theta/"), &template)?;
            let state = take_state(set, &format!("{p}{side}/state/"), &theta)?;
            sides.push(CeloTrajectory { theta, state });
        }
        let minus = sides.pop().expect("two sides");
        let plus = sides.pop().expect("two sides");
        pairs.push(ParticlePair {
            episode,
            plus,
            minus,
            xi: take_set(set, &format!("{p}xi/"), &trainable)?,
            elapsed: counter(pc[0], "elapsed")? as usize,
            horizon: counter(pc[1], "horizon")? as usize,
            resets,
        });
    }
    Ok((params, MetaState { stage, seed, iteration, adam, pairs }))
}

pub fn checkpoint_load(path: &Path, suite: &[TaskInstance]) -> Result<(CeloParams, MetaState)> {
    checkpoint_from_tensors(&load_tensors(path)?, suite)
}

/// Resumable stage rebuilt from a checkpoint.
pub fn resume_stage(path: &Path, suite: &[TaskInstance]) -> Result<StageRun> {
    let (params, meta) = checkpoint_load(path, suite)?;
    Ok(StageRun { plan: StagePlan::new(meta.stage, &params), params, meta })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::new(vec![2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5]).unwrap()).unwrap();
        p.insert("b", Tensor::scalar(f64::NAN)).unwrap();
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let back = decode_checkpoint(&encode_checkpoint(&sample())).unwrap();
        for ((n1, t1), (n2, t2)) in sample().iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(t1), bits(t2));
        }
    }

    #[test]
    fn distinct_errors() {
        let good = encode_checkpoint(&sample());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert_eq!(decode_checkpoint(&bad), Err(CheckpointError::BadMagic));
        let mut bad = good.clone();
        bad[6] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(CheckpointError::VersionMismatch { found: 9, .. })));
        assert!(matches!(decode_checkpoint(&good[..good.len() - 3]), Err(CheckpointError::Truncated(_))));
        let mut bad = good.clone();
        let n = bad.len();
        bad[n - 12] ^= 1;
        assert_eq!(decode_checkpoint(&bad), Err(CheckpointError::ChecksumMismatch));
        assert_eq!(decode_checkpoint(b"CEL"), Err(CheckpointError::BadMagic));
    }

    #[test]
    fn params_round_trip() {
        let params = CeloParams::init(&crate::rng::RngStream::new(9));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("phi.ckpt");
        save_params(&params, &path).unwrap();
        assert_eq!(load_params(&path).unwrap(), params);
    }
}
