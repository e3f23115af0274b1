//! Teacher trajectory shards and the sequence sampler used for distillation.
//!
//! Shard layout (little endian): `b"RTSD"`, then `u32` version, env count,
//! steps per env, dense dim, sparse dim, proprio dim, action dim. Records
//! follow env-major (`env * steps + t`), each `proprio, dense, sparse, action`
//! as `f32` and one `done` byte.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::nnkernel::{sample_gaussian, NnError};
use crate::obs::{ObsBatch, PatternConfig, PROPRIO_DIM};
use crate::simkin::{Action, EnvConfig, SimError};
use crate::teacher::{TeacherNet, ACTION_DIM, TEACHER_CHECKPOINT};
use crate::terrain::TerrainParams;
use crate::vecenv::VecEnv;

pub const SHARD_MAGIC: &[u8; 4] = b"RTSD";
pub const SHARD_VERSION: u32 = 1;
pub const HEADER_BYTES: u64 = 32;
pub const ENVS_PER_SHARD: usize = 64;
pub const DATASET_MANIFEST: &str = "dataset.json";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("record dims {got:?} do not match shard dims {expected:?}")]
    RecordShape { expected: (usize, usize), got: (usize, usize) },
    #[error("no sequence of length {seq_len} fits inside any episode")]
    SequenceTooLong { seq_len: usize },
    #[error("dataset is empty")]
    Empty,
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardHeader {
    pub version: u32,
    pub env_count: u32,
    pub steps_per_env: u32,
    pub dense_dim: u32,
    pub sparse_dim: u32,
    pub proprio_dim: u32,
    pub action_dim: u32,
}

impl ShardHeader {
    pub fn new(env_count: usize, steps_per_env: usize, dense_dim: usize, sparse_dim: usize) -> Self {
        Self {
            version: SHARD_VERSION,
            env_count: env_count as u32,
            steps_per_env: steps_per_env as u32,
            dense_dim: dense_dim as u32,
            sparse_dim: sparse_dim as u32,
            proprio_dim: PROPRIO_DIM as u32,
            action_dim: ACTION_DIM as u32,
        }
    }

    pub fn floats_per_record(&self) -> usize {
        (self.proprio_dim + self.dense_dim + self.sparse_dim + self.action_dim) as usize
    }

    pub fn stride(&self) -> u64 {
        self.floats_per_record() as u64 * 4 + 1
    }

    pub fn records(&self) -> u64 {
        self.env_count as u64 * self.steps_per_env as u64
    }

    pub fn file_len(&self) -> u64 {
        HEADER_BYTES + self.records() * self.stride()
    }

    fn to_bytes(self) -> [u8; HEADER_BYTES as usize] {
        let mut b = [0u8; HEADER_BYTES as usize];
        b[..4].copy_from_slice(SHARD_MAGIC);
        let fields =
            [self.version, self.env_count, self.steps_per_env, self.dense_dim, self.sparse_dim, self.proprio_dim, self.action_dim];
        for (i, f) in fields.iter().enumerate() {
            b[4 + 4 * i..8 + 4 * i].copy_from_slice(&f.to_le_bytes());
        }
        b
    }

    fn from_bytes(b: &[u8; HEADER_BYTES as usize]) -> Result<Self, String> {
        if &b[..4] != SHARD_MAGIC {
            return Err("bad magic".into());
        }
        let f = |i: usize| u32::from_le_bytes(b[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        let h = Self {
            version: f(0),
            env_count: f(1),
            steps_per_env: f(2),
            dense_dim: f(3),
            sparse_dim: f(4),
            proprio_dim: f(5),
            action_dim: f(6),
        };
        if h.version != SHARD_VERSION {
            return Err(format!("unsupported version {}", h.version));
        }
        if h.proprio_dim as usize != PROPRIO_DIM || h.action_dim as usize != ACTION_DIM {
            return Err(format!("proprio/action dims {}/{} unsupported", h.proprio_dim, h.action_dim));
        }
        Ok(h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub proprio: [f32; PROPRIO_DIM],
    pub dense: Vec<f32>,
    pub sparse: Vec<f32>,
    pub action: [f32; ACTION_DIM],
    pub done: bool,
}

impl StepRecord {
    fn encode(&self, out: &mut Vec<u8>) {
        for v in self.proprio.iter().chain(&self.dense).chain(&self.sparse).chain(&self.action) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.push(self.done as u8);
    }

    fn decode(b: &[u8], h: &ShardHeader) -> Result<Self, String> {
        let kd = h.dense_dim as usize;
        let ks = h.sparse_dim as usize;
        let f = |i: usize| f32::from_le_bytes(b[4 * i..4 * i + 4].try_into().unwrap());
        let n = h.floats_per_record();
        let done = match b[4 * n] {
            0 => false,
            1 => true,
            other => return Err(format!("done byte {other}")),
        };
        Ok(Self {
            proprio: std::array::from_fn(f),
            dense: (PROPRIO_DIM..PROPRIO_DIM + kd).map(f).collect(),
            sparse: (PROPRIO_DIM + kd..PROPRIO_DIM + kd + ks).map(f).collect(),
            action: std::array::from_fn(|j| f(PROPRIO_DIM + kd + ks + j)),
            done,
        })
    }
}

/// Random-access shard writer. The file is removed if the writer is dropped
/// without [`ShardWriter::finish`].
#[derive(Debug)]
pub struct ShardWriter {
    path: PathBuf,
    header: ShardHeader,
    file: Option<BufWriter<File>>,
    buf: Vec<u8>,
}

impl ShardWriter {
    pub fn create(path: &Path, header: ShardHeader) -> Result<Self, DatasetError> {
        let mut w = Self { path: path.to_path_buf(), header, file: None, buf: Vec::new() };
        let mut file = File::create(path)?;
        file.write_all(&header.to_bytes())?;
        file.set_len(header.file_len())?;
        w.file = Some(BufWriter::new(file));
        Ok(w)
    }

    pub fn header(&self) -> &ShardHeader {
        &self.header
    }

    pub fn write(&mut self, env: usize, t: usize, rec: &StepRecord) -> Result<(), DatasetError> {
        let h = self.header;
        if rec.dense.len() != h.dense_dim as usize || rec.sparse.len() != h.sparse_dim as usize {
            return Err(DatasetError::RecordShape {
                expected: (h.dense_dim as usize, h.sparse_dim as usize),
                got: (rec.dense.len(), rec.sparse.len()),
            });
        }
        if env >= h.env_count as usize || t >= h.steps_per_env as usize {
            return Err(DatasetError::Invalid(format!("record ({env}, {t}) outside shard")));
        }
        self.buf.clear();
        rec.encode(&mut self.buf);
        let off = HEADER_BYTES + (env as u64 * h.steps_per_env as u64 + t as u64) * h.stride();
        let file = self.file.as_mut().expect("open until finish");
        file.seek(SeekFrom::Start(off))?;
        file.write_all(&self.buf)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<PathBuf, DatasetError> {
        let file = self.file.take().expect("open until finish");
        let res = file.into_inner().map_err(|e| e.into_error()).and_then(|f| f.sync_all());
        if let Err(e) = res {
            let _ = fs::remove_file(&self.path);
            return Err(e.into());
        }
        Ok(std::mem::take(&mut self.path))
    }
}

impl Drop for ShardWriter {
    fn drop(&mut self) {
        if self.file.take().is_some() {
            let _ = fs::remove_file(&self.path);
        }
    }
}

/// Read access to one shard with all done flags cached.
#[derive(Debug)]
pub struct ShardReader {
    path: PathBuf,
    header: ShardHeader,
    file: File,
    dones: Vec<bool>,
}

impl ShardReader {
    pub fn open(path: &Path) -> Result<Self, DatasetError> {
        let bad = |reason: String| DatasetError::Format { path: path.to_path_buf(), reason };
        let mut file = File::open(path)?;
        let mut hb = [0u8; HEADER_BYTES as usize];
        file.read_exact(&mut hb).map_err(|_| bad("truncated header".into()))?;
        let header = ShardHeader::from_bytes(&hb).map_err(bad)?;
        let len = file.metadata()?.len();
        if len != header.file_len() {
            return Err(bad(format!("file is {len} bytes, header implies {}", header.file_len())));
        }
        let stride = header.stride() as usize;
        let mut dones = Vec::with_capacity(header.records() as usize);
        let mut r = BufReader::with_capacity(1 << 20, &file);
        r.seek(SeekFrom::Start(HEADER_BYTES))?;
        let mut rec = vec![0u8; stride];
        for i in 0..header.records() {
            r.read_exact(&mut rec)?;
            match rec[stride - 1] {
                0 => dones.push(false),
                1 => dones.push(true),
                other => return Err(bad(format!("record {i}: done byte {other}"))),
            }
        }
        drop(r);
        Ok(Self { path: path.to_path_buf(), header, file, dones })
    }

    pub fn header(&self) -> &ShardHeader {
        &self.header
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn done(&self, env: usize, t: usize) -> bool {
        self.dones[env * self.header.steps_per_env as usize + t]
    }

    /// `len` consecutive records of one env starting at step `t`.
    pub fn read_run(&mut self, env: usize, t: usize, len: usize) -> Result<Vec<StepRecord>, DatasetError> {
        let h = self.header;
        if env >= h.env_count as usize || t + len > h.steps_per_env as usize {
            return Err(DatasetError::Invalid(format!("run ({env}, {t}..{}) outside shard", t + len)));
        }
        let stride = h.stride() as usize;
        let mut buf = vec![0u8; stride * len];
        self.file.seek(SeekFrom::Start(HEADER_BYTES + (env as u64 * h.steps_per_env as u64 + t as u64) * h.stride()))?;
        self.file.read_exact(&mut buf)?;
        buf.chunks_exact(stride)
            .map(|c| StepRecord::decode(c, &h).map_err(|reason| DatasetError::Format { path: self.path.clone(), reason }))
            .collect()
    }

    pub fn read(&mut self, env: usize, t: usize) -> Result<StepRecord, DatasetError> {
        Ok(self.read_run(env, t, 1)?.remove(0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub file: String,
    pub env_count: usize,
    pub steps_per_env: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub teacher_checkpoint_sha256: String,
    pub terrain: TerrainParams,
    pub pattern: PatternConfig,
    pub env: EnvConfig,
    pub seed: u64,
    pub stochastic: bool,
    pub shards: Vec<ShardInfo>,
}

pub fn sha256_file(path: &Path) -> Result<String, std::io::Error> {
    let mut h = Sha256::new();
    let mut r = BufReader::new(File::open(path)?);
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone)]
pub struct CollectConfig {
    pub steps: usize,
    pub seed: u64,
    /// Log sampled rather than mean actions.
    pub stochastic: bool,
}

/// Runs the teacher on noiseless observations and logs one record per env
/// per step into `ceil(n / 64)` shards under `out`. On any error, shards of
/// this call are removed.
pub fn collect(
    teacher: &TeacherNet<f32>,
    teacher_dir: &Path,
    envs: &mut VecEnv,
    terrain: &TerrainParams,
    cfg: &CollectConfig,
    out: &Path,
) -> Result<DatasetManifest, DatasetError> {
    fs::create_dir_all(out)?;
    let n = envs.len();
    if n == 0 || cfg.steps == 0 {
        return Err(DatasetError::Invalid("collection needs at least one env and one step".into()));
    }
    let (kd, ks) = (envs.pattern().dense_len(), envs.pattern().sparse_len());
    if (kd, ks) != (teacher.arch.dense_dim, teacher.arch.sparse_dim) {
        return Err(DatasetError::RecordShape { expected: (teacher.arch.dense_dim, teacher.arch.sparse_dim), got: (kd, ks) });
    }
    let mut writers = Vec::new();
    for (k, start) in (0..n).step_by(ENVS_PER_SHARD).enumerate() {
        let count = ENVS_PER_SHARD.min(n - start);
        let path = out.join(format!("shard_{k:03}.rtsd"));
        writers.push(ShardWriter::create(&path, ShardHeader::new(count, cfg.steps, kd, ks))?);
    }
    let mut rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x636f_6c6c);
            r.set_stream(i as u64);
            r
        })
        .collect();
    for t in 0..cfg.steps {
        let obs: ObsBatch<f32> = ObsBatch::from_observations(envs.clean_observations(), kd, ks);
        let out_now = teacher.forward(&obs)?;
        let mut raw = out_now.mean.clone();
        if cfg.stochastic {
            for (mut row, rng) in raw.rows_mut().into_iter().zip(rngs.iter_mut()) {
                let s = sample_gaussian(&row.to_owned().insert_axis(ndarray::Axis(0)), &out_now.log_std, rng);
                row.assign(&s.row(0));
            }
        }
        let actions: Vec<Action> = crate::teacher::to_actions(&raw);
        let transitions = envs.step(&actions)?;
        for (i, (a, tr)) in actions.iter().zip(&transitions).enumerate() {
            let rec = StepRecord {
                proprio: std::array::from_fn(|j| obs.proprio[[i, j]]),
                dense: obs.dense.row(i).to_vec(),
                sparse: obs.sparse.row(i).to_vec(),
                action: [a.v_lin as f32, a.v_ang as f32],
                done: tr.done(),
            };
            writers[i / ENVS_PER_SHARD].write(i % ENVS_PER_SHARD, t, &rec)?;
        }
    }
    let mut shards = Vec::new();
    for w in writers {
        let h = *w.header();
        let path = w.finish()?;
        shards.push(ShardInfo {
            file: path.file_name().unwrap().to_string_lossy().into_owned(),
            env_count: h.env_count as usize,
            steps_per_env: h.steps_per_env as usize,
            sha256: sha256_file(&path)?,
        });
    }
    let manifest = DatasetManifest {
        teacher_checkpoint_sha256: sha256_file(&teacher_dir.join(TEACHER_CHECKPOINT))?,
        terrain: terrain.clone(),
        pattern: envs.pattern().config().clone(),
        env: envs.env_config().clone(),
        seed: cfg.seed,
        stochastic: cfg.stochastic,
        shards,
    };
    fs::write(out.join(DATASET_MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// An env trajectory: shard index and env within the shard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EnvRef {
    pub shard: usize,
    pub env: usize,
}

#[derive(Debug)]
pub struct Dataset {
    pub shards: Vec<ShardReader>,
    pub dense_dim: usize,
    pub sparse_dim: usize,
}

impl Dataset {
    pub fn open_shards(paths: &[PathBuf]) -> Result<Self, DatasetError> {
        let shards = paths.iter().map(|p| ShardReader::open(p)).collect::<Result<Vec<_>, _>>()?;
        let first = shards.first().ok_or(DatasetError::Empty)?;
        let (kd, ks) = (first.header.dense_dim as usize, first.header.sparse_dim as usize);
        for s in &shards {
            if (s.header.dense_dim as usize, s.header.sparse_dim as usize) != (kd, ks) {
                return Err(DatasetError::Format { path: s.path.clone(), reason: "heightmap dims differ between shards".into() });
            }
        }
        Ok(Self { shards, dense_dim: kd, sparse_dim: ks })
    }

    /// Opens every shard listed in `<dir>/dataset.json`.
    pub fn open_dir(dir: &Path) -> Result<(Self, DatasetManifest), DatasetError> {
        let manifest: DatasetManifest = serde_json::from_slice(&fs::read(dir.join(DATASET_MANIFEST))?)?;
        let paths: Vec<PathBuf> = manifest.shards.iter().map(|s| dir.join(&s.file)).collect();
        Ok((Self::open_shards(&paths)?, manifest))
    }

    pub fn envs(&self) -> Vec<EnvRef> {
        self.shards
            .iter()
            .enumerate()
            .flat_map(|(shard, s)| (0..s.header.env_count as usize).map(move |env| EnvRef { shard, env }))
            .collect()
    }

    pub fn steps(&self, e: EnvRef) -> usize {
        self.shards[e.shard].header.steps_per_env as usize
    }

    pub fn records(&self) -> u64 {
        self.shards.iter().map(|s| s.header.records()).sum()
    }

    /// Seed-stable split of env trajectories into (train, validation) with
    /// `validation_fraction` of envs (at least one when there are two or more).
    pub fn split(&self, validation_fraction: f64, seed: u64) -> (Vec<EnvRef>, Vec<EnvRef>) {
        let mut all = self.envs();
        all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut k = (all.len() as f64 * validation_fraction).round() as usize;
        if all.len() >= 2 {
            k = k.clamp(1, all.len() - 1);
        } else {
            k = 0;
        }
        let mut val = all.split_off(all.len() - k);
        let mut train = all;
        train.sort();
        val.sort();
        (train, val)
    }

    /// Starts `(env, t)` whose window of `seq_len` steps contains no episode
    /// end except possibly at its last element.
    pub fn valid_starts(&self, envs: &[EnvRef], seq_len: usize) -> Vec<(EnvRef, usize)> {
        let mut out = Vec::new();
        for &e in envs {
            let steps = self.steps(e);
            if seq_len == 0 || seq_len > steps {
                continue;
            }
            let shard = &self.shards[e.shard];
            // Count of done flags in the first seq_len - 1 positions of the window.
            let inner = seq_len - 1;
            let mut dones_in = (0..inner).filter(|&t| shard.done(e.env, t)).count();
            for t in 0..=steps - seq_len {
                if dones_in == 0 {
                    out.push((e, t));
                }
                if inner > 0 {
                    dones_in -= shard.done(e.env, t) as usize;
                    dones_in += shard.done(e.env, t + inner) as usize;
                }
            }
        }
        out
    }

    pub fn read_sequence(&mut self, e: EnvRef, t: usize, len: usize) -> Result<Vec<StepRecord>, DatasetError> {
        self.shards[e.shard].read_run(e.env, t, len)
    }
}

/// One time-major batch of sequences: `steps[t]` holds row `b` of sequence `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub steps: Vec<StepBatch>,
    pub starts: Vec<(EnvRef, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepBatch {
    pub obs: ObsBatch<f32>,
    pub actions: Array2<f32>,
    pub done: Vec<bool>,
}

impl SequenceBatch {
    pub fn batch_size(&self) -> usize {
        self.starts.len()
    }

    pub fn seq_len(&self) -> usize {
        self.steps.len()
    }

    fn from_sequences(seqs: Vec<Vec<StepRecord>>, starts: Vec<(EnvRef, usize)>, kd: usize, ks: usize) -> Self {
        let b = seqs.len();
        let len = seqs[0].len();
        let steps = (0..len)
            .map(|t| {
                let mut proprio = Array2::zeros((b, PROPRIO_DIM));
                let mut dense = Array2::zeros((b, kd));
                let mut sparse = Array2::zeros((b, ks));
                let mut actions = Array2::zeros((b, ACTION_DIM));
                let mut done = Vec::with_capacity(b);
                for (i, s) in seqs.iter().enumerate() {
                    let r = &s[t];
                    proprio.row_mut(i).assign(&ndarray::ArrayView1::from(&r.proprio));
                    dense.row_mut(i).assign(&ndarray::ArrayView1::from(&r.dense));
                    sparse.row_mut(i).assign(&ndarray::ArrayView1::from(&r.sparse));
                    actions.row_mut(i).assign(&ndarray::ArrayView1::from(&r.action));
                    done.push(r.done);
                }
                StepBatch { obs: ObsBatch { proprio, dense, sparse }, actions, done }
            })
            .collect();
        Self { steps, starts }
    }
}

/// One epoch of shuffled sequences from `envs`: `floor(records / seq_len)`
/// distinct valid starts (all of them if fewer), grouped into batches of
/// `batch_size` (the last batch may be smaller).
pub struct SequenceIter<'a> {
    dataset: &'a mut Dataset,
    starts: std::vec::IntoIter<(EnvRef, usize)>,
    seq_len: usize,
    batch_size: usize,
}

pub fn sequence_iter<'a, R: Rng + ?Sized>(
    dataset: &'a mut Dataset,
    envs: &[EnvRef],
    seq_len: usize,
    batch_size: usize,
    rng: &mut R,
) -> Result<SequenceIter<'a>, DatasetError> {
    if envs.is_empty() {
        return Err(DatasetError::Empty);
    }
    if seq_len == 0 || batch_size == 0 {
        return Err(DatasetError::Invalid("seq_len and batch_size must be >= 1".into()));
    }
    let mut starts = dataset.valid_starts(envs, seq_len);
    if starts.is_empty() {
        return Err(DatasetError::SequenceTooLong { seq_len });
    }
    let records: usize = envs.iter().map(|&e| dataset.steps(e)).sum();
    starts.shuffle(rng);
    starts.truncate((records / seq_len).max(1));
    Ok(SequenceIter { dataset, starts: starts.into_iter(), seq_len, batch_size })
}

impl Iterator for SequenceIter<'_> {
    type Item = Result<SequenceBatch, DatasetError>;

    fn next(&mut self) -> Option<Self::Item> {
        let chosen: Vec<(EnvRef, usize)> = self.starts.by_ref().take(self.batch_size).collect();
        if chosen.is_empty() {
            return None;
        }
        let (kd, ks) = (self.dataset.dense_dim, self.dataset.sparse_dim);
        let seqs: Result<Vec<_>, _> = chosen.iter().map(|&(e, t)| self.dataset.read_sequence(e, t, self.seq_len)).collect();
        Some(seqs.map(|s| SequenceBatch::from_sequences(s, chosen, kd, ks)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn rec(kd: usize, ks: usize, tag: f32, done: bool) -> StepRecord {
        StepRecord {
            proprio: [tag, -tag, 0.5, f32::MIN_POSITIVE],
            dense: (0..kd).map(|i| tag + i as f32 * 1e-3).collect(),
            sparse: (0..ks).map(|i| -tag - i as f32 * 1e-7).collect(),
            action: [tag.sin(), tag.cos()],
            done,
        }
    }

    /// Writes a shard whose done pattern is given per env.
    fn synthetic(dir: &Path, name: &str, dones: &[Vec<bool>]) -> PathBuf {
        let steps = dones[0].len();
        let path = dir.join(name);
        let mut w = ShardWriter::create(&path, ShardHeader::new(dones.len(), steps, 3, 2)).unwrap();
        for (e, d) in dones.iter().enumerate() {
            for (t, &done) in d.iter().enumerate() {
                w.write(e, t, &rec(3, 2, (e * 1000 + t) as f32, done)).unwrap();
            }
        }
        w.finish().unwrap()
    }

    #[test]
    fn write_read_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = synthetic(dir.path(), "a.rtsd", &[vec![false, true, false], vec![false; 3]]);
        let mut r = ShardReader::open(&path).unwrap();
        assert_eq!(r.header().records(), 6);
        for e in 0..2 {
            for t in 0..3 {
                let back = r.read(e, t).unwrap();
                let want = rec(3, 2, (e * 1000 + t) as f32, e == 0 && t == 1);
                assert_eq!(back, want);
            }
        }
    }

    #[test]
    fn structural_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = synthetic(dir.path(), "a.rtsd", &[vec![false; 4]]);
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(ShardReader::open(&path), Err(DatasetError::Format { .. })));
        let mut w = ShardWriter::create(&dir.path().join("b.rtsd"), ShardHeader::new(1, 1, 3, 2)).unwrap();
        assert!(matches!(w.write(0, 0, &rec(4, 2, 0.0, false)), Err(DatasetError::RecordShape { .. })));
    }

    #[test]
    fn dropped_writer_removes_partial_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.rtsd");
        {
            let _w = ShardWriter::create(&path, ShardHeader::new(1, 4, 3, 2)).unwrap();
            assert!(path.exists());
        }
        assert!(!path.exists());
    }

    #[test]
    fn seq_len_one_yields_every_record_once() {
        let dir = tempfile::tempdir().unwrap();
        let p = synthetic(dir.path(), "a.rtsd", &[vec![false, true, false, false, true], vec![true; 5]]);
        let mut ds = Dataset::open_shards(&[p]).unwrap();
        let envs = ds.envs();
        let mut seen = HashSet::new();
        for b in sequence_iter(&mut ds, &envs, 1, 3, &mut ChaCha8Rng::seed_from_u64(0)).unwrap() {
            for s in b.unwrap().starts {
                assert!(seen.insert(s));
            }
        }
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn short_episodes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = synthetic(dir.path(), "a.rtsd", &[vec![false, true, false, true, true, false, true]]);
        let mut ds = Dataset::open_shards(&[p]).unwrap();
        let envs = ds.envs();
        assert!(matches!(
            sequence_iter(&mut ds, &envs, 3, 2, &mut ChaCha8Rng::seed_from_u64(0)),
            Err(DatasetError::SequenceTooLong { seq_len: 3 })
        ));
    }

    #[test]
    fn split_is_disjoint_and_stable() {
        let dir = tempfile::tempdir().unwrap();
        let dones = vec![vec![false; 2]; 20];
        let p = synthetic(dir.path(), "a.rtsd", &dones);
        let ds = Dataset::open_shards(&[p]).unwrap();
        let (tr, va) = ds.split(0.1, 5);
        assert_eq!((tr.len(), va.len()), (18, 2));
        assert!(tr.iter().all(|e| !va.contains(e)));
        assert_eq!(ds.split(0.1, 5), (tr, va));
    }
}
