//! Composite navigation reward: distance attraction plus oscillation,
//! reverse-driving and heading penalties, and a terminal collision penalty.
//!
//! Weights are stored as non-negative magnitudes; each penalty term applies
//! its own minus sign exactly once.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simkin::{Action, TerminationCause};

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("distance must be finite and non-negative, got {0}")]
    NegativeDistance(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardWeights {
    pub distance: f64,
    pub oscillation: f64,
    pub velocity: f64,
    pub heading: f64,
    pub collision_penalty: f64,
    pub heading_limit_rad: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            distance: 1.0,
            oscillation: 0.01,
            velocity: 0.005,
            heading: 0.05,
            collision_penalty: collision_penalty_for(1.0, 0.99),
            heading_limit_rad: 115f64.to_radians(),
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), String> {
        for (name, w) in [
            ("distance", self.distance),
            ("oscillation", self.oscillation),
            ("velocity", self.velocity),
            ("heading", self.heading),
            ("heading_limit_rad", self.heading_limit_rad),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(format!("reward.{name} must be finite and >= 0, got {w}"));
            }
        }
        if !(self.collision_penalty.is_finite() && self.collision_penalty <= 0.0) {
            return Err(format!("reward.collision_penalty must be <= 0, got {}", self.collision_penalty));
        }
        Ok(())
    }
}

/// Ten percent of the best discounted return, which is collecting the full
/// distance reward forever while parked on the goal.
pub fn collision_penalty_for(distance_weight: f64, gamma: f64) -> f64 {
    -0.1 * distance_weight / (1.0 - gamma)
}

pub fn distance_reward(d: f64, w: &RewardWeights) -> Result<f64, RewardError> {
    if !(d >= 0.0) || !d.is_finite() {
        return Err(RewardError::NegativeDistance(d));
    }
    Ok(w.distance / (1.0 + d / 3.0))
}

pub fn oscillation_penalty(action: Action, prev: Action, w: &RewardWeights) -> f64 {
    -w.oscillation * action.squared_delta(prev)
}

pub fn velocity_penalty(v_lin: f64, w: &RewardWeights) -> f64 {
    if v_lin < 0.0 {
        -w.velocity * v_lin.abs()
    } else {
        0.0
    }
}

pub fn heading_penalty(theta: f64, w: &RewardWeights) -> f64 {
    if theta.abs() > w.heading_limit_rad {
        -w.heading * theta.abs()
    } else {
        0.0
    }
}

/// Inputs of one reward evaluation; actions are the normalized, clamped ones.
#[derive(Debug, Clone, Copy)]
pub struct RewardInputs {
    pub distance: f64,
    pub heading: f64,
    pub action: Action,
    pub prev_action: Action,
}

pub fn total_reward(inputs: &RewardInputs, cause: TerminationCause, w: &RewardWeights) -> Result<f64, RewardError> {
    let mut r = distance_reward(inputs.distance, w)?
        + oscillation_penalty(inputs.action, inputs.prev_action, w)
        + velocity_penalty(inputs.action.v_lin, w)
        + heading_penalty(inputs.heading, w);
    if cause == TerminationCause::Collision {
        r += w.collision_penalty;
    }
    Ok(r)
}
