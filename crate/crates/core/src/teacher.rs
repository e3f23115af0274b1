//! Privileged teacher policy and its PPO trainer.
//!
//! The actor maps `[proprio, e_d(dense), e_s(sparse)]` to the mean of a
//! diagonal Gaussian with a state-independent learnable `log_std`. The critic
//! has the same shape with its own encoders and predicts returns in units of
//! `PpoConfig::value_scale`.

use std::collections::VecDeque;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nnkernel::{
    cast, gaussian_entropy, gaussian_log_prob, gaussian_log_prob_grads, load_params, save_params, sample_gaussian,
    Activation, AdamConfig, CheckpointManifest, Mlp, MlpCache, NnError, ParamId, ParamStore, Scalar,
};
use crate::obs::{ObsBatch, Observation, PROPRIO_DIM};
use crate::simkin::{Action, SimError, TerminationCause};
use crate::vecenv::{EpisodeEnd, VecEnv};

pub const ACTION_DIM: usize = 2;
pub const TEACHER_CHECKPOINT: &str = "teacher.ckpt";
pub const TEACHER_MANIFEST: &str = "teacher.json";
pub const METRICS_FILE: &str = "metrics.csv";

#[derive(Debug, Error)]
pub enum TeacherError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("rollout buffer holds {filled} of {horizon} steps")]
    IncompleteBuffer { filled: usize, horizon: usize },
    #[error("non-finite loss at iteration {iteration}, epoch {epoch}: {detail}")]
    NonFiniteLoss { iteration: u64, epoch: usize, detail: String },
    #[error("invalid PPO config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherArch {
    pub dense_dim: usize,
    pub sparse_dim: usize,
    pub encoder_hidden: usize,
    pub latent_dim: usize,
    pub trunk: Vec<usize>,
}

impl TeacherArch {
    pub fn new(dense_dim: usize, sparse_dim: usize) -> Self {
        Self { dense_dim, sparse_dim, encoder_hidden: 60, latent_dim: 20, trunk: vec![512, 256, 128] }
    }

    pub fn head_input(&self) -> usize {
        PROPRIO_DIM + 2 * self.latent_dim
    }
}

/// Parameter handles of a teacher; values live in a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherModules {
    pub actor_dense: Mlp,
    pub actor_sparse: Mlp,
    pub actor: Mlp,
    pub log_std: ParamId,
    pub critic_dense: Mlp,
    pub critic_sparse: Mlp,
    pub critic: Mlp,
}

/// Forward caches of one encoder pair plus head.
#[derive(Debug, Clone)]
pub struct BranchCache<S> {
    dense: MlpCache<S>,
    sparse: MlpCache<S>,
    head: MlpCache<S>,
}

impl<S: Scalar> BranchCache<S> {
    pub fn output(&self) -> &Array2<S> {
        self.head.output()
    }

    /// `[l_d, l_s]` as fed to the head.
    pub fn latents(&self) -> Array2<S> {
        concatenate![Axis(1), *self.dense.output(), *self.sparse.output()]
    }
}

fn encoder<S: Scalar>(store: &mut ParamStore<S>, name: &str, input: usize, arch: &TeacherArch, rng: &mut ChaCha8Rng) -> Mlp {
    let sizes = [input, arch.encoder_hidden, arch.latent_dim];
    Mlp::new(store, name, &sizes, Activation::LeakyRelu, Activation::LeakyRelu, 2f64.sqrt(), 2f64.sqrt(), rng)
}

fn head<S: Scalar>(store: &mut ParamStore<S>, name: &str, arch: &TeacherArch, out: usize, rng: &mut ChaCha8Rng) -> Mlp {
    let mut sizes = vec![arch.head_input()];
    sizes.extend(&arch.trunk);
    sizes.push(out);
    Mlp::new(store, name, &sizes, Activation::LeakyRelu, Activation::Identity, 2f64.sqrt(), 1.0, rng)
}

/// Runs an encoder pair and head on a batch.
pub(crate) fn branch_forward<S: Scalar>(
    store: &ParamStore<S>,
    enc_d: &Mlp,
    enc_s: &Mlp,
    head: &Mlp,
    obs: &ObsBatch<S>,
) -> Result<BranchCache<S>, NnError> {
    let dense = enc_d.forward_cached(store, obs.dense.view())?;
    let sparse = enc_s.forward_cached(store, obs.sparse.view())?;
    let input = concatenate![Axis(1), obs.proprio, *dense.output(), *sparse.output()];
    let head = head.forward_cached(store, input.view())?;
    Ok(BranchCache { dense, sparse, head })
}

pub(crate) fn branch_backward<S: Scalar>(
    store: &mut ParamStore<S>,
    enc_d: &Mlp,
    enc_s: &Mlp,
    head: &Mlp,
    cache: &BranchCache<S>,
    dy: &Array2<S>,
) {
    let dx = head.backward(store, &cache.head, dy, true).expect("dx requested");
    let l = enc_d.out_dim();
    let d_dense = dx.slice(s![.., PROPRIO_DIM..PROPRIO_DIM + l]).to_owned();
    let d_sparse = dx.slice(s![.., PROPRIO_DIM + l..]).to_owned();
    enc_d.backward(store, &cache.dense, &d_dense, false);
    enc_s.backward(store, &cache.sparse, &d_sparse, false);
}

impl TeacherModules {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, arch: &TeacherArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor_dense = encoder(store, "actor.dense", arch.dense_dim, arch, &mut rng);
        let actor_sparse = encoder(store, "actor.sparse", arch.sparse_dim, arch, &mut rng);
        let actor = head(store, "actor.head", arch, ACTION_DIM, &mut rng);
        let log_std = store.add("actor.log_std", Array2::zeros((1, ACTION_DIM)));
        let critic_dense = encoder(store, "critic.dense", arch.dense_dim, arch, &mut rng);
        let critic_sparse = encoder(store, "critic.sparse", arch.sparse_dim, arch, &mut rng);
        let critic = head(store, "critic.head", arch, 1, &mut rng);
        Self { actor_dense, actor_sparse, actor, log_std, critic_dense, critic_sparse, critic }
    }

    pub fn actor_forward<S: Scalar>(&self, store: &ParamStore<S>, obs: &ObsBatch<S>) -> Result<BranchCache<S>, NnError> {
        branch_forward(store, &self.actor_dense, &self.actor_sparse, &self.actor, obs)
    }

    pub fn critic_forward<S: Scalar>(&self, store: &ParamStore<S>, obs: &ObsBatch<S>) -> Result<BranchCache<S>, NnError> {
        branch_forward(store, &self.critic_dense, &self.critic_sparse, &self.critic, obs)
    }
}

/// Output of [`TeacherNet::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherOutput<S> {
    pub mean: Array2<S>,
    pub log_std: Array2<S>,
    /// Value estimate in reward units.
    pub value: Array1<S>,
}

#[derive(Debug, Clone)]
pub struct TeacherNet<S: Scalar = f32> {
    pub arch: TeacherArch,
    pub modules: TeacherModules,
    pub store: ParamStore<S>,
    /// Critic outputs are multiplied by this to give values in reward units.
    pub value_scale: f64,
}

impl<S: Scalar> TeacherNet<S> {
    pub fn new(arch: TeacherArch, value_scale: f64, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let modules = TeacherModules::new(&mut store, &arch, seed);
        Self { arch, modules, store, value_scale }
    }

    fn check_dims(&self, obs: &ObsBatch<S>) -> Result<(), NnError> {
        if obs.dense.ncols() != self.arch.dense_dim || obs.sparse.ncols() != self.arch.sparse_dim {
            return Err(NnError::ShapeMismatch {
                op: "teacher input",
                expected: format!("dense {}, sparse {}", self.arch.dense_dim, self.arch.sparse_dim),
                got: format!("dense {}, sparse {}", obs.dense.ncols(), obs.sparse.ncols()),
            });
        }
        Ok(())
    }

    pub fn forward(&self, obs: &ObsBatch<S>) -> Result<TeacherOutput<S>, NnError> {
        self.check_dims(obs)?;
        let m = &self.modules;
        let mean = m.actor.forward(&self.store, self.actor_input(obs)?.view())?;
        let value = self.value(obs)?;
        Ok(TeacherOutput { mean, log_std: self.store.value(m.log_std).clone(), value })
    }

    fn actor_input(&self, obs: &ObsBatch<S>) -> Result<Array2<S>, NnError> {
        let m = &self.modules;
        let ld = m.actor_dense.forward(&self.store, obs.dense.view())?;
        let ls = m.actor_sparse.forward(&self.store, obs.sparse.view())?;
        Ok(concatenate![Axis(1), obs.proprio, ld, ls])
    }

    /// `[l_d, l_s]` from the actor encoders.
    pub fn latents(&self, obs: &ObsBatch<S>) -> Result<Array2<S>, NnError> {
        self.check_dims(obs)?;
        Ok(self.actor_input(obs)?.slice(s![.., PROPRIO_DIM..]).to_owned())
    }

    pub fn mean_action(&self, obs: &ObsBatch<S>) -> Result<Array2<S>, NnError> {
        self.check_dims(obs)?;
        self.modules.actor.forward(&self.store, self.actor_input(obs)?.view())
    }

    pub fn value(&self, obs: &ObsBatch<S>) -> Result<Array1<S>, NnError> {
        self.check_dims(obs)?;
        let m = &self.modules;
        let v = m.critic_forward(&self.store, obs)?;
        let scale: S = cast(self.value_scale);
        Ok(v.output().column(0).mapv(|x| x * scale))
    }

    /// Deterministic actions (distribution mean), clamped to the action box.
    pub fn act_deterministic(&self, obs: &ObsBatch<S>) -> Result<Vec<Action>, NnError> {
        Ok(to_actions(&self.mean_action(obs)?))
    }

    pub fn manifest(&self) -> CheckpointManifest {
        let arch = serde_json::json!({ "kind": "teacher", "arch": self.arch, "value_scale": self.value_scale });
        CheckpointManifest::for_store(arch, &self.store)
    }

    /// Writes `<dir>/teacher.ckpt` and `<dir>/teacher.json`.
    pub fn save(&self, dir: &Path) -> Result<(), NnError> {
        fs::create_dir_all(dir)?;
        save_params(&self.store, &dir.join(TEACHER_CHECKPOINT))?;
        self.manifest().write(&dir.join(TEACHER_MANIFEST))
    }

    pub fn load(dir: &Path) -> Result<Self, NnError> {
        let manifest = CheckpointManifest::read(&dir.join(TEACHER_MANIFEST))?;
        if manifest.arch.get("kind").and_then(|k| k.as_str()) != Some("teacher") {
            return Err(NnError::Checkpoint(format!("{} is not a teacher checkpoint", dir.display())));
        }
        let arch: TeacherArch = serde_json::from_value(manifest.arch["arch"].clone())?;
        let value_scale = manifest.arch["value_scale"].as_f64().unwrap_or(1.0);
        let mut net = Self::new(arch, value_scale, 0);
        manifest.check_compatible(&net.store)?;
        load_params(&mut net.store, &dir.join(TEACHER_CHECKPOINT))?;
        Ok(net)
    }
}

pub fn to_actions<S: Scalar>(a: &Array2<S>) -> Vec<Action> {
    a.rows()
        .into_iter()
        .map(|r| Action::new(r[0].to_f64().unwrap(), r[1].to_f64().unwrap()).clamped())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub lr: f64,
    pub kl_threshold: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub grad_clip_norm: f64,
    pub horizon: usize,
    pub value_scale: f64,
    /// Add the discounted value of remaining at the goal to goal-reaching
    /// rewards in the learning target.
    pub goal_bootstrap: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            kl_threshold: 0.008,
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            epochs: 5,
            minibatches: 4,
            value_coef: 1.0,
            entropy_coef: 0.0,
            grad_clip_norm: 1.0,
            horizon: 60,
            value_scale: 100.0,
            goal_bootstrap: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0 && self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err("ppo.gamma and ppo.lambda must lie in (0, 1]".into());
        }
        if !(self.lr > 0.0 && self.kl_threshold > 0.0 && self.clip > 0.0 && self.value_scale > 0.0 && self.grad_clip_norm > 0.0) {
            return Err("ppo.lr, kl_threshold, clip, value_scale and grad_clip_norm must be > 0".into());
        }
        if self.goal_bootstrap && self.gamma >= 1.0 {
            return Err("ppo.goal_bootstrap requires gamma < 1".into());
        }
        if self.epochs == 0 || self.minibatches == 0 || self.horizon == 0 {
            return Err("ppo.epochs, minibatches and horizon must be >= 1".into());
        }
        Ok(())
    }
}

pub const LR_MIN: f64 = 1e-6;
pub const LR_MAX: f64 = 1e-2;

/// Dead-zone learning-rate controller on the measured policy KL.
pub fn kl_adaptive_lr(approx_kl: f64, lr: f64, kl_threshold: f64) -> f64 {
    let next = if approx_kl > 2.0 * kl_threshold {
        lr / 1.5
    } else if approx_kl < kl_threshold / 2.0 {
        lr * 1.5
    } else {
        lr
    };
    next.clamp(LR_MIN, LR_MAX)
}

/// Generalized advantage estimates over a `[t][env]` layout. `dones[t][e]`
/// marks the last step of an episode; `last_values[e]` bootstraps the step
/// after the horizon.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_values: &[f64],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = last_values.len();
    let len = rewards.len();
    assert!(n > 0 && len % n == 0 && values.len() == len && dones.len() == len);
    let horizon = len / n;
    let mut adv = vec![0.0; len];
    for e in 0..n {
        let mut gae = 0.0;
        for t in (0..horizon).rev() {
            let i = t * n + e;
            let nonterminal = if dones[i] { 0.0 } else { 1.0 };
            let next_v = if t + 1 == horizon { last_values[e] } else { values[i + n] };
            let delta = rewards[i] + gamma * next_v * nonterminal - values[i];
            gae = delta + gamma * lambda * nonterminal * gae;
            adv[i] = gae;
        }
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// One horizon of experience from `n_envs` environments, row `t * n_envs + e`.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub horizon: usize,
    filled: usize,
    pub proprio: Array2<f32>,
    pub dense: Array2<f32>,
    pub sparse: Array2<f32>,
    pub actions: Array2<f32>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// Learning rewards (environment reward plus terminal bootstraps).
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub last_values: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(n_envs: usize, horizon: usize, dense_dim: usize, sparse_dim: usize) -> Self {
        let rows = n_envs * horizon;
        Self {
            n_envs,
            horizon,
            filled: 0,
            proprio: Array2::zeros((rows, PROPRIO_DIM)),
            dense: Array2::zeros((rows, dense_dim)),
            sparse: Array2::zeros((rows, sparse_dim)),
            actions: Array2::zeros((rows, ACTION_DIM)),
            log_probs: vec![0.0; rows],
            values: vec![0.0; rows],
            rewards: vec![0.0; rows],
            dones: vec![false; rows],
            last_values: vec![0.0; n_envs],
        }
    }

    pub fn clear(&mut self) {
        self.filled = 0;
    }

    pub fn filled(&self) -> usize {
        self.filled
    }

    pub fn is_full(&self) -> bool {
        self.filled == self.horizon
    }

    /// Stores one step for every env. `obs` rows are the observations the
    /// actions were taken from.
    pub fn push(&mut self, obs: &ObsBatch<f32>, actions: &Array2<f32>, log_probs: &[f64], values: &[f64], rewards: &[f64], dones: &[bool]) {
        assert!(self.filled < self.horizon, "rollout buffer is full");
        let r0 = self.filled * self.n_envs;
        let r1 = r0 + self.n_envs;
        self.proprio.slice_mut(s![r0..r1, ..]).assign(&obs.proprio);
        self.dense.slice_mut(s![r0..r1, ..]).assign(&obs.dense);
        self.sparse.slice_mut(s![r0..r1, ..]).assign(&obs.sparse);
        self.actions.slice_mut(s![r0..r1, ..]).assign(actions);
        self.log_probs[r0..r1].copy_from_slice(log_probs);
        self.values[r0..r1].copy_from_slice(values);
        self.rewards[r0..r1].copy_from_slice(rewards);
        self.dones[r0..r1].copy_from_slice(dones);
        self.filled += 1;
    }

    pub fn set_last_values(&mut self, v: &[f64]) {
        self.last_values.copy_from_slice(v);
    }

    pub fn gae(&self, gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>), TeacherError> {
        if !self.is_full() {
            return Err(TeacherError::IncompleteBuffer { filled: self.filled, horizon: self.horizon });
        }
        Ok(compute_gae(&self.rewards, &self.values, &self.dones, &self.last_values, gamma, lambda))
    }
}

/// Zero mean, unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = if std > 1e-12 { (*a - mean) / std } else { 0.0 };
    }
}

/// Training tensors for one PPO minibatch.
#[derive(Debug, Clone)]
pub struct Minibatch<S> {
    pub obs: ObsBatch<S>,
    pub actions: Array2<S>,
    pub old_log_probs: Array1<S>,
    pub advantages: Array1<S>,
    /// Return targets in reward units.
    pub returns: Array1<S>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub total: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean of `(r - 1) - ln r` over the minibatch, `r` the probability ratio.
    pub approx_kl: f64,
    pub clip_frac: f64,
}

/// Clipped-surrogate PPO loss plus scaled value MSE minus entropy bonus.
/// With `with_grads` the gradient of `total` is accumulated into `store`.
pub fn ppo_loss<S: Scalar>(
    modules: &TeacherModules,
    store: &mut ParamStore<S>,
    mb: &Minibatch<S>,
    cfg: &PpoConfig,
    with_grads: bool,
) -> Result<LossStats, NnError> {
    let n = mb.actions.nrows();
    let nf = n as f64;
    let actor = modules.actor_forward(store, &mb.obs)?;
    let critic = modules.critic_forward(store, &mb.obs)?;
    let log_std = store.value(modules.log_std).clone();
    let mean = actor.output();
    let new_lp = gaussian_log_prob(mean, &log_std, &mb.actions);
    let entropy = gaussian_entropy(&log_std).to_f64().unwrap();

    let mut stats = LossStats { entropy, ..Default::default() };
    let mut d_logp = Array1::<S>::zeros(n);
    for i in 0..n {
        let log_ratio = (new_lp[i] - mb.old_log_probs[i]).to_f64().unwrap();
        let ratio = log_ratio.exp();
        let adv = mb.advantages[i].to_f64().unwrap();
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv;
        stats.policy_loss -= unclipped.min(clipped) / nf;
        stats.approx_kl += ((ratio - 1.0) - log_ratio) / nf;
        if (ratio - 1.0).abs() > cfg.clip {
            stats.clip_frac += 1.0 / nf;
        }
        if unclipped <= clipped {
            d_logp[i] = cast(-adv * ratio / nf);
        }
    }
    let scale = cfg.value_scale;
    let v_pred = critic.output().column(0);
    let mut d_v = Array2::<S>::zeros((n, 1));
    for i in 0..n {
        let err = v_pred[i].to_f64().unwrap() - mb.returns[i].to_f64().unwrap() / scale;
        stats.value_loss += err * err / nf;
        d_v[[i, 0]] = cast(cfg.value_coef * 2.0 * err / nf);
    }
    stats.total = stats.policy_loss + cfg.value_coef * stats.value_loss - cfg.entropy_coef * entropy;
    if !stats.total.is_finite() {
        return Err(NnError::NonFinite(format!("ppo loss {stats:?}")));
    }
    if with_grads {
        let (dm, dls) = gaussian_log_prob_grads(mean, &log_std, &mb.actions);
        let d_mean = &dm * &d_logp.view().insert_axis(Axis(1));
        let mut d_log_std = (&dls * &d_logp.view().insert_axis(Axis(1))).sum_axis(Axis(0)).insert_axis(Axis(0));
        d_log_std.mapv_inplace(|g| g - cast::<S>(cfg.entropy_coef));
        *store.grad_mut(modules.log_std) += &d_log_std;
        branch_backward(store, &modules.actor_dense, &modules.actor_sparse, &modules.actor, &actor, &d_mean);
        branch_backward(store, &modules.critic_dense, &modules.critic_sparse, &modules.critic, &critic, &d_v);
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Mean approximate KL of the last epoch.
    pub approx_kl: f64,
    pub clip_frac: f64,
    pub lr: f64,
}

/// Epochs x minibatches of PPO on a full buffer. Advantages are normalized
/// here; the learning rate is adapted after every epoch.
pub fn ppo_update(
    net: &mut TeacherNet<f32>,
    buffer: &RolloutBuffer,
    cfg: &PpoConfig,
    lr: &mut f64,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats, TeacherError> {
    let (mut adv, returns) = buffer.gae(cfg.gamma, cfg.lambda)?;
    normalize_advantages(&mut adv);
    let rows = adv.len();
    let mb_size = rows.div_ceil(cfg.minibatches);
    let mut order: Vec<usize> = (0..rows).collect();
    let mut stats = UpdateStats::default();
    let mut count = 0.0;
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let mut epoch_kl = 0.0;
        let mut batches = 0.0;
        for chunk in order.chunks(mb_size) {
            let pick = |a: &Array2<f32>| a.select(Axis(0), chunk);
            let mb = Minibatch {
                obs: ObsBatch { proprio: pick(&buffer.proprio), dense: pick(&buffer.dense), sparse: pick(&buffer.sparse) },
                actions: pick(&buffer.actions),
                old_log_probs: chunk.iter().map(|&i| buffer.log_probs[i] as f32).collect(),
                advantages: chunk.iter().map(|&i| adv[i] as f32).collect(),
                returns: chunk.iter().map(|&i| returns[i] as f32).collect(),
            };
            let l = ppo_loss(&net.modules, &mut net.store, &mb, cfg, true).map_err(|e| TeacherError::NonFiniteLoss {
                iteration: net.store.adam_steps_taken(),
                epoch,
                detail: e.to_string(),
            })?;
            net.store.clip_grad_norm(cfg.grad_clip_norm);
            net.store.adam_step(&AdamConfig::with_lr(*lr))?;
            epoch_kl += l.approx_kl;
            batches += 1.0;
            stats.policy_loss += l.policy_loss;
            stats.value_loss += l.value_loss;
            stats.clip_frac += l.clip_frac;
            count += 1.0;
        }
        stats.approx_kl = epoch_kl / batches;
        *lr = kl_adaptive_lr(stats.approx_kl, *lr, cfg.kl_threshold);
    }
    stats.policy_loss /= count;
    stats.value_loss /= count;
    stats.clip_frac /= count;
    stats.lr = *lr;
    Ok(stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherTrainConfig {
    pub ppo: PpoConfig,
    pub n_envs: usize,
    pub total_steps: u64,
    pub seed: u64,
    /// Iterations between checkpoint writes (0 = only initial and final).
    pub checkpoint_every: u64,
}

impl Default for TeacherTrainConfig {
    fn default() -> Self {
        Self { ppo: PpoConfig::default(), n_envs: 64, total_steps: 2_000_000, seed: 0, checkpoint_every: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub iteration: u64,
    pub env_steps: u64,
    /// Mean undiscounted return over the most recent `2 * n_envs` episodes,
    /// with goal-reaching episodes credited the distance reward for each step
    /// left before the time limit (see [`credited_return`]).
    pub mean_return: f64,
    pub success_rate: f64,
    pub approx_kl: f64,
    pub lr: f64,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, TeacherError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[derive(Debug)]
pub struct TeacherRun {
    pub net: TeacherNet<f32>,
    pub metrics: Vec<MetricsRow>,
    pub checkpoint_dir: PathBuf,
}

fn batch_of<'a>(obs: impl IntoIterator<Item = &'a Observation>, dense: usize, sparse: usize) -> ObsBatch<f32> {
    ObsBatch::from_observations(obs, dense, sparse)
}

/// Rollout/update loop. Writes `metrics.csv` and checkpoints into `out`.
/// If the environment fails, the current parameters are checkpointed before
/// the error is returned.
/// Episode return as logged in the metrics. Without the credit a policy that
/// reaches the goal sooner collects fewer positive distance rewards, so the
/// raw return would fall as the policy improves.
pub fn credited_return(ep: &EpisodeEnd, max_episode_steps: u32, distance_weight: f64) -> f64 {
    match ep.cause {
        TerminationCause::GoalReached => ep.total_reward + distance_weight * max_episode_steps.saturating_sub(ep.steps) as f64,
        _ => ep.total_reward,
    }
}

/// Observation noise during training (domain randomization) is whatever the
/// `VecEnv` was built with.
pub fn train_teacher(envs: &mut VecEnv, cfg: &TeacherTrainConfig, out: &Path) -> Result<TeacherRun, TeacherError> {
    cfg.ppo.validate().map_err(TeacherError::InvalidConfig)?;
    fs::create_dir_all(out)?;
    let (kd, ks) = (envs.pattern().dense_len(), envs.pattern().sparse_len());
    let mut net = TeacherNet::<f32>::new(TeacherArch::new(kd, ks), cfg.ppo.value_scale, cfg.seed);
    net.save(out)?;
    let mut metrics_w = csv::WriterBuilder::new().has_headers(false).from_path(out.join(METRICS_FILE))?;
    metrics_w.write_record(["iteration", "env_steps", "mean_return", "success_rate", "approx_kl", "lr"])?;
    metrics_w.flush()?;

    let n = envs.len();
    let per_iter = (n * cfg.ppo.horizon) as u64;
    let iterations = cfg.total_steps.div_ceil(per_iter);
    let mut buffer = RolloutBuffer::new(n, cfg.ppo.horizon, kd, ks);
    let mut update_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7570_6461_7465);
    let mut action_rngs: Vec<ChaCha8Rng> = (0..n)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x6163_7469_6f6e);
            r.set_stream(i as u64);
            r
        })
        .collect();
    let mut lr = cfg.ppo.lr;
    let window = 2 * n;
    let mut recent: VecDeque<(f64, bool)> = VecDeque::with_capacity(window);
    // Value of staying at the goal forever with the full distance reward.
    let absorb = cfg.ppo.gamma * envs.reward_weights().distance / (1.0 - cfg.ppo.gamma);
    let (max_steps, w_d) = (envs.env_config().max_episode_steps, envs.reward_weights().distance);
    let mut rows = Vec::new();

    for iteration in 1..=iterations {
        buffer.clear();
        for _ in 0..cfg.ppo.horizon {
            let obs = batch_of(envs.observations(), kd, ks);
            let out_now = net.forward(&obs)?;
            let mut actions = out_now.mean.clone();
            for (mut row, rng) in actions.rows_mut().into_iter().zip(action_rngs.iter_mut()) {
                let sampled = sample_gaussian(&row.to_owned().insert_axis(Axis(0)), &out_now.log_std, rng);
                row.assign(&sampled.row(0));
            }
            let log_probs: Vec<f64> = gaussian_log_prob(&out_now.mean, &out_now.log_std, &actions).iter().map(|&v| v as f64).collect();
            let values: Vec<f64> = out_now.value.iter().map(|&v| v as f64).collect();
            let acts: Vec<Action> = actions.rows().into_iter().map(|r| Action::new(r[0] as f64, r[1] as f64)).collect();
            let transitions = match envs.step(&acts) {
                Ok(t) => t,
                Err(e) => {
                    net.save(out)?;
                    return Err(e.into());
                }
            };
            let timeout_rows: Vec<usize> = (0..n).filter(|&i| transitions[i].timeout_obs.is_some()).collect();
            let mut timeout_values = vec![0.0; n];
            if !timeout_rows.is_empty() {
                let obs_t = batch_of(timeout_rows.iter().map(|&i| transitions[i].timeout_obs.as_ref().unwrap()), kd, ks);
                for (&i, v) in timeout_rows.iter().zip(net.value(&obs_t)?.iter()) {
                    timeout_values[i] = *v as f64;
                }
            }
            let mut rewards = Vec::with_capacity(n);
            let mut dones = Vec::with_capacity(n);
            for (i, tr) in transitions.iter().enumerate() {
                let bonus = match tr.cause {
                    TerminationCause::GoalReached if cfg.ppo.goal_bootstrap => absorb,
                    TerminationCause::Timeout => cfg.ppo.gamma * timeout_values[i],
                    _ => 0.0,
                };
                rewards.push(tr.reward + bonus);
                dones.push(tr.done());
                if let Some(ep) = tr.episode {
                    if recent.len() == window {
                        recent.pop_front();
                    }
                    recent.push_back((credited_return(&ep, max_steps, w_d), ep.cause == TerminationCause::GoalReached));
                }
            }
            buffer.push(&obs, &actions, &log_probs, &values, &rewards, &dones);
        }
        let last = batch_of(envs.observations(), kd, ks);
        let last_values: Vec<f64> = net.value(&last)?.iter().map(|&v| v as f64).collect();
        buffer.set_last_values(&last_values);
        let stats = match ppo_update(&mut net, &buffer, &cfg.ppo, &mut lr, &mut update_rng) {
            Ok(s) => s,
            Err(e) => {
                net.save(out)?;
                return Err(e);
            }
        };
        let (mean_return, success_rate) = if recent.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let k = recent.len() as f64;
            (recent.iter().map(|r| r.0).sum::<f64>() / k, recent.iter().filter(|r| r.1).count() as f64 / k)
        };
        let row = MetricsRow { iteration, env_steps: iteration * per_iter, mean_return, success_rate, approx_kl: stats.approx_kl, lr: stats.lr };
        metrics_w.serialize(row)?;
        metrics_w.flush()?;
        rows.push(row);
        if cfg.checkpoint_every > 0 && iteration % cfg.checkpoint_every == 0 {
            net.save(out)?;
        }
    }
    net.save(out)?;
    Ok(TeacherRun { net, metrics: rows, checkpoint_dir: out.to_path_buf() })
}
