//! Auto-resetting batch of rover environments sharing one terrain.
//!
//! Each environment owns a ChaCha8 stream (`seed`, stream = env index) used
//! for resets and observation noise, so results do not depend on how the
//! batch is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::exec::{map_indexed_mut, Execution};
use crate::noise::{EpisodeNoise, NoiseModel};
use crate::obs::{observe, Observation, SamplePattern};
use crate::reward::RewardWeights;
use crate::simkin::{reset, step_one, Action, EnvConfig, RoverState, SimError, SpawnSlot, StepContext, TerminationCause};
use crate::terrain::TerrainMap;

/// Summary of an episode that ended during a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeEnd {
    pub cause: TerminationCause,
    pub steps: u32,
    pub total_reward: f64,
    /// Sum of squared action deltas over the episode.
    pub oscillation_sum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub reward: f64,
    pub cause: TerminationCause,
    pub applied: Action,
    /// Policy-facing observation of the terminal state, kept only for
    /// timeouts where the value of the cut-off state is bootstrapped.
    pub timeout_obs: Option<Observation>,
    pub episode: Option<EpisodeEnd>,
}

impl Transition {
    pub fn done(&self) -> bool {
        self.cause != TerminationCause::None
    }
}

#[derive(Debug, Clone)]
struct EnvSlot {
    slot: SpawnSlot,
    state: RoverState,
    rng: ChaCha8Rng,
    noise: EpisodeNoise,
    clean: Observation,
    policy: Observation,
    ep_reward: f64,
    ep_osc: f64,
}

#[derive(Debug)]
pub struct VecEnv {
    map: TerrainMap,
    pattern: SamplePattern,
    env: EnvConfig,
    reward: RewardWeights,
    noise: Option<NoiseModel>,
    exec: Execution,
    slots: Vec<EnvSlot>,
}

fn noisy(noise: Option<&NoiseModel>, ep: &EpisodeNoise, clean: &Observation, rng: &mut ChaCha8Rng) -> Observation {
    match noise {
        Some(_) => {
            let (dense, sparse) = ep.apply_pair(&clean.dense, &clean.sparse, rng);
            Observation { dense, sparse, ..clean.clone() }
        }
        None => clean.clone(),
    }
}

impl VecEnv {
    #[allow(clippy::too_many_arguments)]
    /// `noise = None` gives noiseless observations; otherwise every episode
    /// draws a mode from the model and every step redraws per-point noise.
    pub fn new(
        map: TerrainMap,
        pattern: SamplePattern,
        env: EnvConfig,
        reward: RewardWeights,
        n_envs: usize,
        seed: u64,
        noise: Option<NoiseModel>,
        exec: Execution,
    ) -> Result<Self, SimError> {
        env.validate().map_err(SimError::InvalidConfig)?;
        reward.validate().map_err(SimError::InvalidConfig)?;
        if let Some(n) = &noise {
            n.validate().map_err(SimError::InvalidConfig)?;
        }
        let noise = noise.filter(|n| !n.is_identity());
        let grid = SpawnSlot::grid(n_envs, &map, &env)?;
        let mut slots = Vec::with_capacity(n_envs);
        for (i, slot) in grid.into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let state = reset(&slot, &map, &env, &mut rng)?;
            let ep = noise.as_ref().map_or(EpisodeNoise::identity(), |n| n.begin_episode(&mut rng));
            let clean = observe(&state, &map, &pattern)?;
            let policy = noisy(noise.as_ref(), &ep, &clean, &mut rng);
            slots.push(EnvSlot { slot, state, rng, noise: ep, clean, policy, ep_reward: 0.0, ep_osc: 0.0 });
        }
        Ok(Self { map, pattern, env, reward, noise, exec, slots })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn map(&self) -> &TerrainMap {
        &self.map
    }

    pub fn pattern(&self) -> &SamplePattern {
        &self.pattern
    }

    pub fn reward_weights(&self) -> &RewardWeights {
        &self.reward
    }

    pub fn env_config(&self) -> &EnvConfig {
        &self.env
    }

    pub fn states(&self) -> impl Iterator<Item = &RoverState> {
        self.slots.iter().map(|s| &s.state)
    }

    /// Noiseless observations of the current states.
    pub fn clean_observations(&self) -> impl Iterator<Item = &Observation> {
        self.slots.iter().map(|s| &s.clean)
    }

    /// Observations as seen by the policy (noisy when noise is enabled).
    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.slots.iter().map(|s| &s.policy)
    }

    /// Steps all environments, resetting those that terminate. After the call
    /// `observations()` describe the post-reset states.
    pub fn step(&mut self, actions: &[Action]) -> Result<Vec<Transition>, SimError> {
        if actions.len() != self.slots.len() {
            return Err(SimError::LengthMismatch { states: self.slots.len(), actions: actions.len() });
        }
        if let Some(index) = actions.iter().position(|a| a.has_nan()) {
            return Err(SimError::NanAction { index });
        }
        let ctx = StepContext { map: &self.map, pattern: &self.pattern, env: &self.env, reward: &self.reward };
        let noise = self.noise.as_ref();
        map_indexed_mut(self.exec, &mut self.slots, |i, s| {
            let prev = s.state.prev_action;
            let res = step_one(&mut s.state, actions[i], &ctx)?;
            s.ep_reward += res.reward;
            s.ep_osc += res.applied.squared_delta(prev);
            let mut out = Transition { reward: res.reward, cause: res.cause, applied: res.applied, timeout_obs: None, episode: None };
            if res.terminated {
                if res.cause == TerminationCause::Timeout {
                    out.timeout_obs = Some(noisy(noise, &s.noise, &res.observation, &mut s.rng));
                }
                out.episode = Some(EpisodeEnd {
                    cause: res.cause,
                    steps: s.state.steps_elapsed,
                    total_reward: s.ep_reward,
                    oscillation_sum: s.ep_osc,
                });
                s.state = reset(&s.slot, ctx.map, ctx.env, &mut s.rng)?;
                if let Some(n) = noise {
                    s.noise = n.begin_episode(&mut s.rng);
                }
                s.ep_reward = 0.0;
                s.ep_osc = 0.0;
                s.clean = observe(&s.state, ctx.map, ctx.pattern)?;
            } else {
                s.clean = res.observation;
            }
            s.policy = noisy(noise, &s.noise, &s.clean, &mut s.rng);
            Ok(out)
        })
        .into_iter()
        .collect()
    }
}
