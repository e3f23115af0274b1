//! Experiment configuration file (TOML). Every section is optional and falls
//! back to the library defaults; unknown keys are rejected.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use rovernav::exec::Execution;
use rovernav::noise::{NoiseModel, NoisePreset};
use rovernav::obs::PatternConfig;
use rovernav::reward::RewardWeights;
use rovernav::simkin::EnvConfig;
use rovernav::student::StudentTrainConfig;
use rovernav::teacher::PpoConfig;
use rovernav::terrain::TerrainParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecSetting {
    #[default]
    Parallel,
    Sequential,
}

impl From<ExecSetting> for Execution {
    fn from(e: ExecSetting) -> Self {
        match e {
            ExecSetting::Parallel => Execution::Parallel,
            ExecSetting::Sequential => Execution::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherSection {
    pub n_envs: usize,
    pub total_steps: u64,
    pub checkpoint_every: u64,
    /// Heightmap noise during training; `none` trains on privileged input.
    pub domain_randomization: NoisePreset,
}

impl Default for TeacherSection {
    fn default() -> Self {
        Self { n_envs: 64, total_steps: 2_000_000, checkpoint_every: 50, domain_randomization: NoisePreset::None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CollectSection {
    pub n_envs: usize,
    pub steps: usize,
    pub stochastic: bool,
}

impl Default for CollectSection {
    fn default() -> Self {
        Self { n_envs: 512, steps: 1500, stochastic: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Applied to heightmaps while distilling.
    pub student: NoisePreset,
    pub eval: NoisePreset,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self { student: NoisePreset::TrainMix, eval: NoisePreset::None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub episodes: usize,
    pub chunk: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { episodes: 512, chunk: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub execution: ExecSetting,
    pub terrain: TerrainParams,
    pub pattern: PatternConfig,
    pub env: EnvConfig,
    pub reward: RewardWeights,
    pub ppo: PpoConfig,
    pub teacher: TeacherSection,
    pub collect: CollectSection,
    pub noise: NoiseSection,
    pub student: StudentTrainConfig,
    pub eval: EvalSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg = Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.terrain.validate().context("terrain")?;
        self.pattern.validate().map_err(anyhow::Error::msg)?;
        self.env.validate().map_err(anyhow::Error::msg)?;
        self.reward.validate().map_err(anyhow::Error::msg)?;
        self.ppo.validate().map_err(anyhow::Error::msg)?;
        self.student.validate().map_err(anyhow::Error::msg)?;
        if self.teacher.n_envs == 0 || self.collect.n_envs == 0 {
            bail!("teacher.n_envs and collect.n_envs must be >= 1");
        }
        if self.collect.steps == 0 {
            bail!("collect.steps must be >= 1");
        }
        if self.eval.episodes == 0 || self.eval.chunk == 0 {
            bail!("eval.episodes and eval.chunk must be >= 1");
        }
        for p in [self.teacher.domain_randomization, self.noise.student, self.noise.eval] {
            NoiseModel::preset(p).validate().map_err(anyhow::Error::msg)?;
        }
        Ok(())
    }
}
