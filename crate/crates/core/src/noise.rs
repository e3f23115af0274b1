//! Exteroceptive heightmap noise. A mode (and, for the offset mode, a single
//! Gaussian offset) is drawn once per episode; per-point Gaussian jitter and
//! the zeroed-point mask are redrawn every step. Proprioceptive inputs are
//! never touched.

use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Low,
    LowOffset,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModeSpec {
    pub mode: NoiseMode,
    /// Per-point standard deviation (m).
    pub std: f64,
    /// Standard deviation of the per-episode offset (m).
    pub offset_std: f64,
    pub zero_fraction: f64,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub modes: Vec<NoiseModeSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoisePreset {
    TrainMix,
    EvalNoise,
    None,
}

impl FromStr for NoisePreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train-mix" => Ok(Self::TrainMix),
            "eval-noise" => Ok(Self::EvalNoise),
            "none" => Ok(Self::None),
            other => Err(format!("unknown noise preset `{other}` (expected train-mix, eval-noise or none)")),
        }
    }
}

impl NoisePreset {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TrainMix => "train-mix",
            Self::EvalNoise => "eval-noise",
            Self::None => "none",
        }
    }
}

impl NoiseModel {
    pub fn preset(preset: NoisePreset) -> Self {
        let spec = |mode, std, offset_std, probability| NoiseModeSpec { mode, std, offset_std, zero_fraction: 0.1, probability };
        match preset {
            NoisePreset::TrainMix => Self {
                modes: vec![
                    spec(NoiseMode::Low, 0.1, 0.0, 0.6),
                    spec(NoiseMode::LowOffset, 0.1, 0.05, 0.3),
                    spec(NoiseMode::High, 0.2, 0.0, 0.1),
                ],
            },
            NoisePreset::EvalNoise => Self { modes: vec![spec(NoiseMode::Low, 0.1, 0.0, 1.0)] },
            NoisePreset::None => Self { modes: vec![NoiseModeSpec { zero_fraction: 0.0, ..spec(NoiseMode::Low, 0.0, 0.0, 1.0) }] },
        }
    }

    pub fn is_identity(&self) -> bool {
        self.modes.iter().all(|m| m.probability == 0.0 || (m.std == 0.0 && m.offset_std == 0.0 && m.zero_fraction == 0.0))
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.modes.is_empty() {
            return Err("noise model needs at least one mode".into());
        }
        let mut total = 0.0;
        for m in &self.modes {
            for (name, v) in [("std", m.std), ("offset_std", m.offset_std), ("probability", m.probability)] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(format!("noise mode {:?}: {name} must be finite and >= 0", m.mode));
                }
            }
            if !(0.0..=1.0).contains(&m.zero_fraction) || m.probability > 1.0 {
                return Err(format!("noise mode {:?}: fractions must lie in [0, 1]", m.mode));
            }
            total += m.probability;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(format!("noise mode probabilities sum to {total}, expected 1"));
        }
        Ok(())
    }

    /// Categorical draw over the mode table.
    pub fn sample_mode<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseModeSpec {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for m in &self.modes {
            acc += m.probability;
            if u < acc {
                return *m;
            }
        }
        // Rounding slack: fall back to the last mode with mass.
        *self.modes.iter().rev().find(|m| m.probability > 0.0).unwrap_or(&self.modes[0])
    }

    /// Draws the per-episode mode and offset.
    pub fn begin_episode<R: Rng + ?Sized>(&self, rng: &mut R) -> EpisodeNoise {
        let spec = self.sample_mode(rng);
        let offset = if spec.offset_std > 0.0 {
            Normal::new(0.0, spec.offset_std).unwrap().sample(rng)
        } else {
            0.0
        };
        EpisodeNoise { spec, offset }
    }
}

/// Noise state held fixed for the duration of one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeNoise {
    pub spec: NoiseModeSpec,
    pub offset: f64,
}

impl EpisodeNoise {
    pub fn identity() -> Self {
        let spec = NoiseModel::preset(NoisePreset::None).modes[0];
        Self { spec, offset: 0.0 }
    }

    /// Number of points zeroed in a map of `len` entries.
    pub fn zeroed_count(&self, len: usize) -> usize {
        (self.spec.zero_fraction * len as f64 + 1e-9).floor() as usize
    }

    /// Returns a noisy copy of one heightmap: Gaussian jitter plus the episode
    /// offset on every point, then an exact-size random subset set to zero.
    pub fn apply<R: Rng + ?Sized>(&self, clean: &[f64], rng: &mut R) -> Vec<f64> {
        let mut out: Vec<f64> = if self.spec.std > 0.0 {
            clean
                .iter()
                .map(|&h| {
                    let n: f64 = StandardNormal.sample(rng);
                    h + self.spec.std * n + self.offset
                })
                .collect()
        } else {
            clean.iter().map(|&h| h + self.offset).collect()
        };
        let k = self.zeroed_count(out.len());
        if k > 0 {
            for i in sample(rng, out.len(), k) {
                out[i] = 0.0;
            }
        }
        out
    }

    /// Applies [`EpisodeNoise::apply`] to the dense then the sparse map.
    pub fn apply_pair<R: Rng + ?Sized>(&self, dense: &[f64], sparse: &[f64], rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let d = self.apply(dense, rng);
        let s = self.apply(sparse, rng);
        (d, s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn presets_are_valid() {
        for p in [NoisePreset::TrainMix, NoisePreset::EvalNoise, NoisePreset::None] {
            NoiseModel::preset(p).validate().unwrap();
            assert_eq!(p.as_str().parse::<NoisePreset>().unwrap(), p);
        }
        assert!(NoiseModel::preset(NoisePreset::None).is_identity());
        let table = NoiseModel::preset(NoisePreset::TrainMix);
        let high = table.modes.iter().find(|m| m.mode == NoiseMode::High).unwrap();
        assert_eq!((high.std, high.offset_std, high.zero_fraction), (0.2, 0.0, 0.1));
    }

    #[test]
    fn mode_frequencies() {
        let table = NoiseModel::preset(NoisePreset::TrainMix);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut counts = [0usize; 3];
        for _ in 0..10_000 {
            match table.sample_mode(&mut rng).mode {
                NoiseMode::Low => counts[0] += 1,
                NoiseMode::LowOffset => counts[1] += 1,
                NoiseMode::High => counts[2] += 1,
            }
        }
        for (c, p) in counts.iter().zip([0.6, 0.3, 0.1]) {
            assert!((*c as f64 / 1e4 - p).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn degenerate_table_and_reproducibility() {
        let mut table = NoiseModel::preset(NoisePreset::TrainMix);
        table.modes[0].probability = 1.0;
        table.modes[1].probability = 0.0;
        table.modes[2].probability = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((0..1000).all(|_| table.sample_mode(&mut rng).mode == NoiseMode::Low));

        let mix = NoiseModel::preset(NoisePreset::TrainMix);
        let seq = |seed| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| mix.sample_mode(&mut r).mode).collect::<Vec<_>>()
        };
        assert_eq!(seq(3), seq(3));
    }

    #[test]
    fn identity_noise_is_identity() {
        let clean: Vec<f64> = (0..100).map(|i| i as f64 * 0.01).collect();
        let out = EpisodeNoise::identity().apply(&clean, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out, clean);
    }

    #[test]
    fn zeroing_is_exact_and_clean_untouched() {
        let clean = vec![1.0; 1681];
        let copy = clean.clone();
        let noise = NoiseModel::preset(NoisePreset::EvalNoise).begin_episode(&mut ChaCha8Rng::seed_from_u64(4));
        let out = noise.apply(&clean, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(clean, copy);
        assert_eq!(out.iter().filter(|&&v| v == 0.0).count(), 168);
    }

    #[test]
    fn low_mode_statistics() {
        let n = 100_000;
        let clean = vec![0.25; n];
        let noise = EpisodeNoise { spec: NoiseModel::preset(NoisePreset::TrainMix).modes[0], offset: 0.0 };
        let out = noise.apply(&clean, &mut ChaCha8Rng::seed_from_u64(11));
        let zeroed = out.iter().filter(|&&v| v == 0.0).count();
        assert!((zeroed as f64 / n as f64 - 0.1).abs() < 0.01);
        let kept: Vec<f64> = out.iter().filter(|&&v| v != 0.0).map(|v| v - 0.25).collect();
        let mean = kept.iter().sum::<f64>() / kept.len() as f64;
        let std = (kept.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (kept.len() - 1) as f64).sqrt();
        assert!((std - 0.1).abs() < 0.003, "std {std}");
    }

    #[test]
    fn offset_mode_mean_matches_offset() {
        let table = NoiseModel::preset(NoisePreset::TrainMix);
        let spec = table.modes[1];
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let noise = EpisodeNoise { spec, offset: Normal::new(0.0, 0.05).unwrap().sample(&mut rng) };
        let n = 100_000;
        let clean = vec![-0.3; n];
        let out = noise.apply(&clean, &mut rng);
        let kept: Vec<f64> = out.iter().filter(|&&v| v != 0.0).map(|v| v + 0.3).collect();
        let mean = kept.iter().sum::<f64>() / kept.len() as f64;
        assert!((mean - noise.offset).abs() < 3.0 * 0.1 / (kept.len() as f64).sqrt());
    }
}
