//! Recurrent student policy distilled from the teacher.
//!
//! Per step: `l_s, l_d` from the student's own encoders on (noisy)
//! heightmaps; `x', h = GRU([o_p, l_s, l_d], h)`; gate `AG = sigmoid(e_a(x'))`;
//! belief `x = e_b(x') + [l_s, l_d] * AG`; action `mlp([o_p, x])`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, s, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{sequence_iter, Dataset, DatasetError, EnvRef, SequenceBatch};
use crate::nnkernel::{
    load_params, save_params, Activation, AdamConfig, CheckpointManifest, Gru, GruStepCache, Mlp, MlpCache, NnError, ParamStore,
    Scalar,
};
use crate::noise::NoiseModel;
use crate::obs::{ObsBatch, PROPRIO_DIM};
use crate::simkin::Action;
use crate::teacher::{to_actions, TeacherNet, ACTION_DIM};

pub const STUDENT_CHECKPOINT: &str = "student.ckpt";
pub const STUDENT_MANIFEST: &str = "student.json";
pub const LOSS_FILE: &str = "loss.csv";

#[derive(Debug, Error)]
pub enum StudentError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid student config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentArch {
    pub dense_dim: usize,
    pub sparse_dim: usize,
    pub encoder_hidden: usize,
    pub latent_dim: usize,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    /// Hidden widths of the gate and belief encoders; both end in a
    /// projection to `2 * latent_dim`.
    pub belief_hidden: Vec<usize>,
    pub trunk: Vec<usize>,
}

impl StudentArch {
    pub fn new(dense_dim: usize, sparse_dim: usize) -> Self {
        Self {
            dense_dim,
            sparse_dim,
            encoder_hidden: 60,
            latent_dim: 20,
            gru_hidden: 256,
            gru_layers: 2,
            belief_hidden: vec![128, 256, 512, 1024],
            trunk: vec![512, 256, 128],
        }
    }

    pub fn belief_dim(&self) -> usize {
        2 * self.latent_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentModules {
    pub enc_dense: Mlp,
    pub enc_sparse: Mlp,
    pub gru: Gru,
    pub gate: Mlp,
    pub belief: Mlp,
    pub head: Mlp,
}

impl StudentModules {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, arch: &StudentArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = 2f64.sqrt();
        let lrelu = Activation::LeakyRelu;
        let enc = |store: &mut ParamStore<S>, name: &str, input: usize, rng: &mut ChaCha8Rng| {
            Mlp::new(store, name, &[input, arch.encoder_hidden, arch.latent_dim], lrelu, lrelu, g, g, rng)
        };
        let enc_dense = enc(store, "student.dense", arch.dense_dim, &mut rng);
        let enc_sparse = enc(store, "student.sparse", arch.sparse_dim, &mut rng);
        let gru = Gru::new(store, "student.gru", PROPRIO_DIM + arch.belief_dim(), arch.gru_hidden, arch.gru_layers, &mut rng);
        let mut sizes = vec![arch.gru_hidden];
        sizes.extend(&arch.belief_hidden);
        sizes.push(arch.belief_dim());
        let gate = Mlp::new(store, "student.gate", &sizes, lrelu, Activation::Sigmoid, g, 1.0, &mut rng);
        let belief = Mlp::new(store, "student.belief", &sizes, lrelu, Activation::Identity, g, 1.0, &mut rng);
        let mut head_sizes = vec![PROPRIO_DIM + arch.belief_dim()];
        head_sizes.extend(&arch.trunk);
        head_sizes.push(ACTION_DIM);
        let head = Mlp::new(store, "student.head", &head_sizes, lrelu, Activation::Identity, g, 1.0, &mut rng);
        Self { enc_dense, enc_sparse, gru, gate, belief, head }
    }
}

/// Everything cached from one step for the backward pass.
#[derive(Debug, Clone)]
pub struct StudentStepCache<S> {
    dense: MlpCache<S>,
    sparse: MlpCache<S>,
    /// `[l_s, l_d]`.
    latents: Array2<S>,
    gru: Vec<GruStepCache<S>>,
    gate: MlpCache<S>,
    belief: MlpCache<S>,
    head: MlpCache<S>,
}

impl<S: Scalar> StudentStepCache<S> {
    /// Unclamped action output.
    pub fn action(&self) -> &Array2<S> {
        self.head.output()
    }

    pub fn gate(&self) -> &Array2<S> {
        self.gate.output()
    }

    /// Belief state `x_t`.
    pub fn belief_state(&self) -> Array2<S> {
        self.belief.output() + &(&self.latents * self.gate.output())
    }
}

/// Belief part of the step given precomputed latents `[l_s, l_d]`.
/// Returns `(x_t, new hidden state)`.
pub fn belief_forward<S: Scalar>(
    m: &StudentModules,
    store: &ParamStore<S>,
    proprio: &Array2<S>,
    latents: &Array2<S>,
    h_prev: &[Array2<S>],
) -> Result<(Array2<S>, Vec<Array2<S>>), NnError> {
    let input = concatenate![Axis(1), *proprio, *latents];
    let (x_prime, h, _) = m.gru.step(store, input.view(), h_prev)?;
    let gate = m.gate.forward(store, x_prime.view())?;
    let belief = m.belief.forward(store, x_prime.view())?;
    Ok((belief + &(latents * &gate), h))
}

/// One full student step with caches. `h_prev` is per GRU layer.
pub fn student_step<S: Scalar>(
    m: &StudentModules,
    store: &ParamStore<S>,
    obs: &ObsBatch<S>,
    h_prev: &[Array2<S>],
) -> Result<(StudentStepCache<S>, Vec<Array2<S>>), NnError> {
    let dense = m.enc_dense.forward_cached(store, obs.dense.view())?;
    let sparse = m.enc_sparse.forward_cached(store, obs.sparse.view())?;
    let latents = concatenate![Axis(1), *sparse.output(), *dense.output()];
    let input = concatenate![Axis(1), obs.proprio, latents];
    let (x_prime, h, gru) = m.gru.step(store, input.view(), h_prev)?;
    let gate = m.gate.forward_cached(store, x_prime.view())?;
    let belief = m.belief.forward_cached(store, x_prime.view())?;
    let x = belief.output() + &(&latents * gate.output());
    let head_in = concatenate![Axis(1), obs.proprio, x];
    let head = m.head.forward_cached(store, head_in.view())?;
    Ok((StudentStepCache { dense, sparse, latents, gru, gate, belief, head }, h))
}

/// Forward over a time-major sequence starting from a zero state; the state
/// of row `b` is reset after any step whose `done[t][b]` is set.
pub fn unroll<S: Scalar>(
    m: &StudentModules,
    store: &ParamStore<S>,
    steps: &[ObsBatch<S>],
    done: &[Vec<bool>],
) -> Result<Vec<StudentStepCache<S>>, NnError> {
    let rows = steps.first().map_or(0, |o| o.rows());
    let mut h = m.gru.zero_state(rows);
    let mut caches = Vec::with_capacity(steps.len());
    for (t, obs) in steps.iter().enumerate() {
        let (cache, mut next) = student_step(m, store, obs, &h)?;
        reset_rows(&mut next, &done[t]);
        h = next;
        caches.push(cache);
    }
    Ok(caches)
}

fn reset_rows<S: Scalar>(h: &mut [Array2<S>], done: &[bool]) {
    for (b, &d) in done.iter().enumerate() {
        if d {
            for layer in h.iter_mut() {
                layer.row_mut(b).fill(S::zero());
            }
        }
    }
}

/// Backward over an unroll. `d_actions[t]` is the gradient w.r.t. the
/// unclamped action at step `t`; `d_beliefs[t]`, if given, w.r.t. `x_t`.
pub fn unroll_backward<S: Scalar>(
    m: &StudentModules,
    store: &mut ParamStore<S>,
    caches: &[StudentStepCache<S>],
    done: &[Vec<bool>],
    d_actions: &[Array2<S>],
    d_beliefs: Option<&[Array2<S>]>,
) {
    let bd = caches.first().map_or(0, |c| c.latents.ncols());
    let mut d_x_prime = Vec::with_capacity(caches.len());
    let mut d_latents = Vec::with_capacity(caches.len());
    for (t, c) in caches.iter().enumerate() {
        let d_in = m.head.backward(store, &c.head, &d_actions[t], true).expect("dx requested");
        let mut d_x = d_in.slice(s![.., PROPRIO_DIM..]).to_owned();
        if let Some(db) = d_beliefs {
            d_x += &db[t];
        }
        let d_gate = &d_x * &c.latents;
        d_latents.push(&d_x * c.gate.output());
        let mut dxp = m.belief.backward(store, &c.belief, &d_x, true).expect("dx requested");
        dxp += &m.gate.backward(store, &c.gate, &d_gate, true).expect("dx requested");
        d_x_prime.push(dxp);
    }
    let gru_caches: Vec<_> = caches.iter().map(|c| c.gru.clone()).collect();
    let carry: Vec<Vec<bool>> = done.iter().map(|d| d.iter().map(|&x| !x).collect()).collect();
    let d_inputs = m.gru.backward_through_time(store, &gru_caches, &d_x_prime, Some(&carry), true);
    for (t, c) in caches.iter().enumerate() {
        let d_in = d_inputs[t].as_ref().expect("dx requested");
        let d_lat = &d_latents[t] + &d_in.slice(s![.., PROPRIO_DIM..]);
        let half = bd / 2;
        let d_sparse = d_lat.slice(s![.., ..half]).to_owned();
        let d_dense = d_lat.slice(s![.., half..]).to_owned();
        m.enc_sparse.backward(store, &c.sparse, &d_sparse, false);
        m.enc_dense.backward(store, &c.dense, &d_dense, false);
    }
}

#[derive(Debug, Clone)]
pub struct StudentNet<S: Scalar = f32> {
    pub arch: StudentArch,
    pub modules: StudentModules,
    pub store: ParamStore<S>,
}

/// Per-env recurrent state for batched inference.
#[derive(Debug, Clone, PartialEq)]
pub struct StudentState<S> {
    pub h: Vec<Array2<S>>,
}

impl<S: Scalar> StudentState<S> {
    /// Zeroes the hidden state of the given rows (episode starts).
    pub fn reset_rows(&mut self, rows: &[bool]) {
        reset_rows(&mut self.h, rows);
    }
}

impl<S: Scalar> StudentNet<S> {
    pub fn new(arch: StudentArch, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let modules = StudentModules::new(&mut store, &arch, seed);
        Self { arch, modules, store }
    }

    pub fn initial_state(&self, rows: usize) -> StudentState<S> {
        StudentState { h: self.modules.gru.zero_state(rows) }
    }

    fn check_dims(&self, obs: &ObsBatch<S>) -> Result<(), NnError> {
        if obs.dense.ncols() != self.arch.dense_dim || obs.sparse.ncols() != self.arch.sparse_dim {
            return Err(NnError::ShapeMismatch {
                op: "student input",
                expected: format!("dense {}, sparse {}", self.arch.dense_dim, self.arch.sparse_dim),
                got: format!("dense {}, sparse {}", obs.dense.ncols(), obs.sparse.ncols()),
            });
        }
        Ok(())
    }

    /// Unclamped action output and the updated state.
    pub fn forward(&self, obs: &ObsBatch<S>, state: &StudentState<S>) -> Result<(Array2<S>, StudentState<S>), NnError> {
        self.check_dims(obs)?;
        let (cache, h) = student_step(&self.modules, &self.store, obs, &state.h)?;
        Ok((cache.head.output().clone(), StudentState { h }))
    }

    /// Deterministic clamped actions; advances `state`.
    pub fn act(&self, obs: &ObsBatch<S>, state: &mut StudentState<S>) -> Result<Vec<Action>, NnError> {
        let (a, next) = self.forward(obs, state)?;
        *state = next;
        Ok(to_actions(&a))
    }

    /// Copies the teacher's actor encoder weights into the student encoders.
    pub fn warm_start_from(&mut self, teacher: &TeacherNet<S>) -> Result<(), NnError> {
        let pairs = [(&self.modules.enc_dense, &teacher.modules.actor_dense), (&self.modules.enc_sparse, &teacher.modules.actor_sparse)];
        for (dst, src) in pairs {
            for (a, b) in dst.layers.iter().zip(&src.layers) {
                for (da, sb) in [(a.w, b.w), (a.b, b.b)] {
                    let v = teacher.store.value(sb);
                    if v.dim() != self.store.value(da).dim() {
                        return Err(NnError::ShapeMismatch {
                            op: "warm start",
                            expected: format!("{:?}", self.store.value(da).dim()),
                            got: format!("{:?}", v.dim()),
                        });
                    }
                    self.store.value_mut(da).assign(v);
                }
            }
        }
        Ok(())
    }

    pub fn manifest(&self) -> CheckpointManifest {
        CheckpointManifest::for_store(serde_json::json!({ "kind": "student", "arch": self.arch }), &self.store)
    }

    pub fn save(&self, dir: &Path) -> Result<(), NnError> {
        fs::create_dir_all(dir)?;
        save_params(&self.store, &dir.join(STUDENT_CHECKPOINT))?;
        self.manifest().write(&dir.join(STUDENT_MANIFEST))
    }

    pub fn load(dir: &Path) -> Result<Self, NnError> {
        let manifest = CheckpointManifest::read(&dir.join(STUDENT_MANIFEST))?;
        if manifest.arch.get("kind").and_then(|k| k.as_str()) != Some("student") {
            return Err(NnError::Checkpoint(format!("{} is not a student checkpoint", dir.display())));
        }
        let arch: StudentArch = serde_json::from_value(manifest.arch["arch"].clone())?;
        let mut net = Self::new(arch, 0);
        manifest.check_compatible(&net.store)?;
        load_params(&mut net.store, &dir.join(STUDENT_CHECKPOINT))?;
        Ok(net)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentTrainConfig {
    pub seq_len: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplies the learning rate after every epoch (1 keeps it constant).
    pub lr_decay: f64,
    pub epochs: usize,
    /// Stop after this many epochs without validation improvement.
    pub patience: usize,
    pub min_delta: f64,
    pub validation_fraction: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
    /// Weight of an auxiliary MSE between the belief state and the
    /// teacher's noiseless latents (needs the teacher).
    pub aux_latent_weight: f64,
    /// Initialize the student encoders from the teacher's actor encoders.
    pub warm_start_encoders: bool,
}

impl Default for StudentTrainConfig {
    fn default() -> Self {
        Self {
            seq_len: 30,
            batch_size: 64,
            lr: 3e-4,
            lr_decay: 1.0,
            epochs: 50,
            patience: 5,
            min_delta: 1e-6,
            validation_fraction: 0.1,
            grad_clip_norm: 1.0,
            seed: 0,
            aux_latent_weight: 0.0,
            warm_start_encoders: false,
        }
    }
}

impl StudentTrainConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.seq_len == 0 || self.batch_size == 0 {
            return Err("student.seq_len and batch_size must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.grad_clip_norm > 0.0) {
            return Err("student.lr and grad_clip_norm must be > 0".into());
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err("student.lr_decay must lie in (0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err("student.validation_fraction must lie in [0, 1)".into());
        }
        if self.aux_latent_weight < 0.0 {
            return Err("student.aux_latent_weight must be >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub epoch: usize,
    /// Mean training objective (unclamped action MSE plus any auxiliary term).
    pub train_loss: f64,
    /// Validation MSE between clamped student and logged teacher actions.
    pub val_mse: f64,
}

#[derive(Debug)]
pub struct StudentRun {
    pub net: StudentNet<f32>,
    pub losses: Vec<LossRow>,
    pub best_epoch: usize,
    pub out_dir: PathBuf,
}

/// Applies per-sequence noise to a batch's heightmaps in place. Each
/// sequence draws its own mode/offset, like an episode would.
pub fn apply_noise(batch: &mut SequenceBatch, noise: &NoiseModel, rng: &mut ChaCha8Rng) {
    let b = batch.batch_size();
    let episodes: Vec<_> = (0..b).map(|_| noise.begin_episode(rng)).collect();
    for step in &mut batch.steps {
        for (i, ep) in episodes.iter().enumerate() {
            for map in [&mut step.obs.dense, &mut step.obs.sparse] {
                let clean: Vec<f64> = map.row(i).iter().map(|&v| v as f64).collect();
                let noisy = ep.apply(&clean, rng);
                for (d, v) in map.row_mut(i).iter_mut().zip(noisy) {
                    *d = v as f32;
                }
            }
        }
    }
}

fn split_batch(batch: &SequenceBatch) -> (Vec<ObsBatch<f32>>, Vec<Vec<bool>>) {
    (batch.steps.iter().map(|s| s.obs.clone()).collect(), batch.steps.iter().map(|s| s.done.clone()).collect())
}

/// Teacher latents reordered to the student's `[l_s, l_d]` layout.
fn teacher_targets(teacher: &TeacherNet<f32>, obs: &ObsBatch<f32>) -> Result<Array2<f32>, NnError> {
    let lat = teacher.latents(obs)?;
    let l = teacher.arch.latent_dim;
    Ok(concatenate![Axis(1), lat.slice(s![.., l..]), lat.slice(s![.., ..l])])
}

/// One optimization step on a batch; returns the objective value.
fn train_batch(
    net: &mut StudentNet<f32>,
    batch: &SequenceBatch,
    teacher: Option<&TeacherNet<f32>>,
    cfg: &StudentTrainConfig,
    lr: f64,
) -> Result<f64, StudentError> {
    let (obs, done) = split_batch(batch);
    let caches = unroll(&net.modules, &net.store, &obs, &done)?;
    let n = (batch.batch_size() * batch.seq_len() * ACTION_DIM) as f32;
    let mut loss = 0.0f64;
    let mut d_actions = Vec::with_capacity(caches.len());
    for (c, step) in caches.iter().zip(&batch.steps) {
        let diff = c.action() - &step.actions;
        loss += diff.iter().map(|&d| (d as f64).powi(2)).sum::<f64>() / n as f64;
        d_actions.push(diff.mapv(|d| 2.0 * d / n));
    }
    let mut d_beliefs = None;
    if let (Some(t), true) = (teacher, cfg.aux_latent_weight > 0.0) {
        let w = cfg.aux_latent_weight as f32;
        let m = (batch.batch_size() * batch.seq_len() * net.arch.belief_dim()) as f32;
        let mut grads = Vec::with_capacity(caches.len());
        for (c, step) in caches.iter().zip(&batch.steps) {
            let diff = c.belief_state() - &teacher_targets(t, &step.obs)?;
            loss += w as f64 * diff.iter().map(|&d| (d as f64).powi(2)).sum::<f64>() / m as f64;
            grads.push(diff.mapv(|d| w * 2.0 * d / m));
        }
        d_beliefs = Some(grads);
    }
    unroll_backward(&net.modules, &mut net.store, &caches, &done, &d_actions, d_beliefs.as_deref());
    net.store.clip_grad_norm(cfg.grad_clip_norm);
    net.store.adam_step(&AdamConfig::with_lr(lr))?;
    Ok(loss)
}

/// Mean squared error between clamped student actions and logged actions
/// over every valid sequence start of `envs` (fixed order, one pass).
pub fn held_out_mse(
    net: &StudentNet<f32>,
    dataset: &mut Dataset,
    envs: &[EnvRef],
    seq_len: usize,
    noise: Option<&NoiseModel>,
    seed: u64,
) -> Result<f64, StudentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = 0.0;
    let mut count = 0usize;
    for batch in sequence_iter(dataset, envs, seq_len, 64, &mut rng.clone())? {
        let mut batch = batch?;
        if let Some(n) = noise {
            apply_noise(&mut batch, n, &mut rng);
        }
        let (obs, done) = split_batch(&batch);
        for (c, step) in unroll(&net.modules, &net.store, &obs, &done)?.iter().zip(&batch.steps) {
            let clamped = c.action().mapv(|v| v.clamp(-1.0, 1.0));
            sum += (&clamped - &step.actions).iter().map(|&d| (d as f64).powi(2)).sum::<f64>();
            count += clamped.len();
        }
    }
    Ok(sum / count.max(1) as f64)
}

/// Supervised distillation with early stopping on validation MSE. The best
/// parameters are kept and written to `out`, with `loss.csv` per epoch.
pub fn train_student(
    dataset: &mut Dataset,
    noise: Option<&NoiseModel>,
    teacher: Option<&TeacherNet<f32>>,
    cfg: &StudentTrainConfig,
    out: &Path,
) -> Result<StudentRun, StudentError> {
    cfg.validate().map_err(StudentError::InvalidConfig)?;
    if cfg.aux_latent_weight > 0.0 && teacher.is_none() {
        return Err(StudentError::InvalidConfig("aux_latent_weight > 0 needs the teacher checkpoint".into()));
    }
    if dataset.records() == 0 {
        return Err(DatasetError::Empty.into());
    }
    fs::create_dir_all(out)?;
    let mut net = StudentNet::<f32>::new(StudentArch::new(dataset.dense_dim, dataset.sparse_dim), cfg.seed);
    if cfg.warm_start_encoders {
        let t = teacher.ok_or_else(|| StudentError::InvalidConfig("warm_start_encoders needs the teacher checkpoint".into()))?;
        net.warm_start_from(t)?;
    }
    let (train, val) = dataset.split(cfg.validation_fraction, cfg.seed);
    let val = if val.is_empty() { train.clone() } else { val };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7374_7564);
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_path(out.join(LOSS_FILE))?;
    writer.write_record(["epoch", "train_loss", "val_mse"])?;
    let mut losses = Vec::new();
    let mut best = (f64::INFINITY, 0usize, net.store.clone());
    let mut lr = cfg.lr;
    for epoch in 1..=cfg.epochs {
        let mut total = 0.0;
        let mut batches = 0usize;
        let mut order_rng = ChaCha8Rng::seed_from_u64(rand::Rng::random(&mut rng));
        let mut noise_rng = ChaCha8Rng::seed_from_u64(rand::Rng::random(&mut rng));
        for batch in sequence_iter(dataset, &train, cfg.seq_len, cfg.batch_size, &mut order_rng)? {
            let mut batch = batch?;
            if let Some(n) = noise {
                apply_noise(&mut batch, n, &mut noise_rng);
            }
            let l = train_batch(&mut net, &batch, teacher, cfg, lr)?;
            if !l.is_finite() {
                return Err(StudentError::NonFiniteLoss { epoch });
            }
            total += l;
            batches += 1;
        }
        let val_mse = held_out_mse(&net, dataset, &val, cfg.seq_len, noise, cfg.seed ^ 0x76616c)?;
        let row = LossRow { epoch, train_loss: total / batches.max(1) as f64, val_mse };
        writer.serialize(row)?;
        writer.flush()?;
        losses.push(row);
        lr *= cfg.lr_decay;
        if val_mse < best.0 - cfg.min_delta {
            best = (val_mse, epoch, net.store.clone());
        } else if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    net.store = best.2;
    net.save(out)?;
    Ok(StudentRun { net, losses, best_epoch: best.1, out_dir: out.to_path_buf() })
}
