//! Kinematic rover simulation: action denormalization, Ackermann wheel
//! setpoints, planar unicycle integration with a turn-on-the-spot rule, ray
//! based collision checks, spawning and the batched control step.
//!
//! Control runs at `control_hz`; each action is held for
//! `physics_hz / control_hz` Euler substeps.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{map_indexed_mut, Execution};
use crate::obs::{goal_distance_heading, observe, ObsError, Observation, SamplePattern};
use crate::reward::{total_reward, RewardError, RewardInputs, RewardWeights};
use crate::terrain::TerrainMap;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{states} states but {actions} actions")]
    LengthMismatch { states: usize, actions: usize },
    #[error("action {index} has a NaN component")]
    NanAction { index: usize },
    #[error("environment {index} is not alive; reset it before stepping")]
    NotAlive { index: usize },
    #[error("no admissible goal after {attempts} attempts (terrain too dense?)")]
    GoalSamplingExhausted { attempts: usize },
    #[error("no collision-free spawn after {attempts} attempts")]
    SpawnSamplingExhausted { attempts: usize },
    #[error("map of {extent} m has no spawn region with {margin} m margin")]
    MapTooSmall { extent: f64, margin: f64 },
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Obs(#[from] ObsError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Normalized command; both components are used after clamping to `[-1, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub v_lin: f64,
    pub v_ang: f64,
}

impl Action {
    pub fn new(v_lin: f64, v_ang: f64) -> Self {
        Self { v_lin, v_ang }
    }

    pub fn clamped(self) -> Self {
        Self { v_lin: self.v_lin.clamp(-1.0, 1.0), v_ang: self.v_ang.clamp(-1.0, 1.0) }
    }

    pub fn has_nan(self) -> bool {
        self.v_lin.is_nan() || self.v_ang.is_nan()
    }

    pub fn squared_delta(self, other: Action) -> f64 {
        (self.v_lin - other.v_lin).powi(2) + (self.v_ang - other.v_ang).powi(2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wheel {
    pub offset: [f64; 2],
    pub steerable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoverGeometry {
    pub footprint_x_m: f64,
    pub footprint_y_m: f64,
    pub wheels: Vec<Wheel>,
    pub collision_radius_m: f64,
}

impl Default for RoverGeometry {
    fn default() -> Self {
        let mut wheels = Vec::with_capacity(6);
        for side in [1.0, -1.0] {
            for (x, steerable) in [(0.42, true), (0.0, false), (-0.42, true)] {
                wheels.push(Wheel { offset: [x, side * 0.45], steerable });
            }
        }
        Self { footprint_x_m: 1.03, footprint_y_m: 1.05, wheels, collision_radius_m: 0.74 }
    }
}

impl RoverGeometry {
    pub fn validate(&self) -> Result<(), String> {
        let half_diag = 0.5 * self.footprint_x_m.hypot(self.footprint_y_m);
        if !(self.collision_radius_m >= 0.9 * half_diag) {
            return Err(format!(
                "collision_radius_m {} is below 0.9 x half footprint diagonal {:.4}",
                self.collision_radius_m,
                0.9 * half_diag
            ));
        }
        if self.wheels.len() != 6 {
            return Err(format!("expected 6 wheels, got {}", self.wheels.len()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub v_lin_max: f64,
    pub v_ang_max: f64,
    pub physics_hz: u32,
    pub control_hz: u32,
    pub goal_radius_m: f64,
    pub goal_threshold_m: f64,
    pub max_episode_steps: u32,
    pub point_turn_ratio: f64,
    pub point_turn_eps: f64,
    pub collision_rays: u32,
    /// Spawns and goals keep at least this distance to the map edge.
    pub spawn_margin_m: f64,
    /// Leaving the square this far inside the map edge ends the episode as a
    /// collision with the map boundary.
    pub boundary_margin_m: f64,
    /// Minimum distance from a goal to the edge of any non-climbable rock.
    pub goal_clearance_m: f64,
    pub max_goal_attempts: usize,
    pub geometry: RoverGeometry,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            v_lin_max: 0.5,
            v_ang_max: 0.6,
            physics_hz: 60,
            control_hz: 5,
            goal_radius_m: 9.0,
            goal_threshold_m: 0.25,
            max_episode_steps: 600,
            point_turn_ratio: 0.15,
            point_turn_eps: 1e-6,
            collision_rays: 16,
            spawn_margin_m: 5.0,
            boundary_margin_m: 4.5,
            goal_clearance_m: 1.0,
            max_goal_attempts: 100,
            geometry: RoverGeometry::default(),
        }
    }
}

impl EnvConfig {
    pub fn substeps(&self) -> u32 {
        self.physics_hz / self.control_hz
    }

    pub fn control_dt(&self) -> f64 {
        1.0 / self.control_hz as f64
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.control_hz == 0 || self.physics_hz == 0 || self.physics_hz % self.control_hz != 0 {
            return Err("env.physics_hz must be a positive multiple of env.control_hz".into());
        }
        for (name, v) in [
            ("v_lin_max", self.v_lin_max),
            ("v_ang_max", self.v_ang_max),
            ("goal_radius_m", self.goal_radius_m),
            ("goal_threshold_m", self.goal_threshold_m),
            ("point_turn_eps", self.point_turn_eps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("env.{name} must be finite and > 0, got {v}"));
            }
        }
        if self.collision_rays < 3 {
            return Err("env.collision_rays must be >= 3".into());
        }
        if self.max_episode_steps == 0 || self.max_goal_attempts == 0 {
            return Err("env.max_episode_steps and env.max_goal_attempts must be positive".into());
        }
        if self.spawn_margin_m < self.boundary_margin_m {
            return Err("env.spawn_margin_m must be >= env.boundary_margin_m".into());
        }
        self.geometry.validate().map_err(|e| format!("env.geometry: {e}"))
    }

    /// Denormalized (m/s, rad/s) velocities after clamping and the
    /// turn-on-the-spot rule.
    pub fn body_velocities(&self, action: Action) -> (f64, f64) {
        let a = action.clamped();
        let v = a.v_lin * self.v_lin_max;
        let w = a.v_ang * self.v_ang_max;
        if self.is_point_turn(v, w) {
            (0.0, w)
        } else {
            (v, w)
        }
    }

    /// Ratio of denormalized linear to angular speed below the threshold.
    pub fn is_point_turn(&self, v: f64, w: f64) -> bool {
        v.abs() / w.abs().max(self.point_turn_eps) < self.point_turn_ratio
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WheelSetpoint {
    pub steer_rad: f64,
    pub speed_mps: f64,
}

/// Per-wheel steering angle and signed speed such that every wheel rolls
/// tangent to a circle about the common instantaneous center of rotation.
/// In turn-on-the-spot mode that center is the rover center.
pub fn ackermann_setpoints(action: Action, geometry: &RoverGeometry, cfg: &EnvConfig) -> Vec<WheelSetpoint> {
    let (v, w) = cfg.body_velocities(action);
    geometry
        .wheels
        .iter()
        .map(|wheel| {
            let [px, py] = wheel.offset;
            // Rigid-body velocity of the contact point.
            let vx = v - w * py;
            let vy = w * px;
            let speed = vx.hypot(vy);
            if speed == 0.0 {
                return WheelSetpoint { steer_rad: 0.0, speed_mps: 0.0 };
            }
            let heading = vy.atan2(vx);
            if heading > FRAC_PI_2 {
                WheelSetpoint { steer_rad: heading - PI, speed_mps: -speed }
            } else if heading <= -FRAC_PI_2 {
                WheelSetpoint { steer_rad: heading + PI, speed_mps: -speed }
            } else {
                WheelSetpoint { steer_rad: heading, speed_mps: speed }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationCause {
    None,
    GoalReached,
    Collision,
    Timeout,
}

impl TerminationCause {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::GoalReached => "goal_reached",
            Self::Collision => "collision",
            Self::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollisionClass {
    None,
    ClimbableContact,
    Fatal,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RoverState {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub prev_action: Action,
    pub goal: [f64; 2],
    pub steps_elapsed: u32,
    pub alive: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub cause: TerminationCause,
    /// The clamped action that was applied.
    pub applied: Action,
}

/// Casts `collision_rays` body-frame rays of length `collision_radius_m` from
/// the rover center. Any ray touching a non-climbable rock disc is fatal.
pub fn check_collision(state: &RoverState, map: &TerrainMap, cfg: &EnvConfig) -> CollisionClass {
    let radius = cfg.geometry.collision_radius_m;
    let mut candidates = Vec::new();
    map.rock_indices_near([state.x, state.y], radius, &mut candidates);
    if candidates.is_empty() {
        return CollisionClass::None;
    }
    let rocks = map.rocks();
    let mut class = CollisionClass::None;
    for k in 0..cfg.collision_rays {
        let angle = state.yaw + TAU * k as f64 / cfg.collision_rays as f64;
        let (dy, dx) = angle.sin_cos();
        for &i in &candidates {
            let rock = &rocks[i as usize];
            let cx = rock.center[0] - state.x;
            let cy = rock.center[1] - state.y;
            let t = (cx * dx + cy * dy).clamp(0.0, radius);
            let ex = cx - t * dx;
            let ey = cy - t * dy;
            if ex * ex + ey * ey <= rock.radius_m * rock.radius_m {
                if !rock.climbable {
                    return CollisionClass::Fatal;
                }
                class = CollisionClass::ClimbableContact;
            }
        }
    }
    class
}

/// Advances one control step: the action is held for all physics substeps.
pub fn integrate(state: &mut RoverState, action: Action, cfg: &EnvConfig) {
    let (v, w) = cfg.body_velocities(action);
    let dt = 1.0 / cfg.physics_hz as f64;
    for _ in 0..cfg.substeps() {
        let (s, c) = state.yaw.sin_cos();
        state.x += v * c * dt;
        state.y += v * s * dt;
        state.yaw = wrap_angle(state.yaw + w * dt);
    }
}

/// Axis-aligned cell inside which a slot's rover spawns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpawnSlot {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl SpawnSlot {
    /// The whole admissible spawn region of a map.
    pub fn region(map: &TerrainMap, cfg: &EnvConfig) -> Result<Self, SimError> {
        let margin = cfg.spawn_margin_m + cfg.goal_radius_m;
        let e = map.extent();
        if e - 2.0 * margin <= 0.0 {
            return Err(SimError::MapTooSmall { extent: e, margin });
        }
        Ok(Self { min: [margin, margin], max: [e - margin, e - margin] })
    }

    /// Splits the spawn region into a square grid with one cell per env.
    pub fn grid(n: usize, map: &TerrainMap, cfg: &EnvConfig) -> Result<Vec<Self>, SimError> {
        let region = Self::region(map, cfg)?;
        let k = (n as f64).sqrt().ceil().max(1.0) as usize;
        let cell = [(region.max[0] - region.min[0]) / k as f64, (region.max[1] - region.min[1]) / k as f64];
        Ok((0..n)
            .map(|i| {
                let (cx, cy) = ((i % k) as f64, (i / k) as f64);
                let min = [region.min[0] + cx * cell[0], region.min[1] + cy * cell[1]];
                Self { min, max: [min[0] + cell[0], min[1] + cell[1]] }
            })
            .collect())
    }
}

fn clearance_to_rock_edges(map: &TerrainMap, p: [f64; 2], clearance: f64) -> bool {
    map.rocks_near(p, clearance)
        .iter()
        .filter(|r| !r.climbable)
        .all(|r| (r.center[0] - p[0]).hypot(r.center[1] - p[1]) - r.radius_m >= clearance)
}

/// Spawns a rover in its slot with a uniformly random yaw and a goal on the
/// circle of `goal_radius_m` around it, resampling until the goal keeps
/// `goal_clearance_m` from every non-climbable rock.
pub fn reset<R: Rng + ?Sized>(slot: &SpawnSlot, map: &TerrainMap, cfg: &EnvConfig, rng: &mut R) -> Result<RoverState, SimError> {
    let attempts = cfg.max_goal_attempts;
    let radius = cfg.geometry.collision_radius_m;
    let mut spawn = None;
    for _ in 0..attempts {
        let p = [rng.random_range(slot.min[0]..=slot.max[0]), rng.random_range(slot.min[1]..=slot.max[1])];
        if clearance_to_rock_edges(map, p, radius) {
            spawn = Some(p);
            break;
        }
    }
    let [x, y] = spawn.ok_or(SimError::SpawnSamplingExhausted { attempts })?;
    let yaw = wrap_angle(rng.random_range(-PI..PI));
    let e = map.extent();
    let lo = cfg.spawn_margin_m;
    for _ in 0..attempts {
        let angle: f64 = rng.random_range(0.0..TAU);
        let goal = [x + cfg.goal_radius_m * angle.cos(), y + cfg.goal_radius_m * angle.sin()];
        let inside = goal.iter().all(|g| *g >= lo && *g <= e - lo);
        if inside && clearance_to_rock_edges(map, goal, cfg.goal_clearance_m) {
            return Ok(RoverState { x, y, yaw, prev_action: Action::default(), goal, steps_elapsed: 0, alive: true });
        }
    }
    Err(SimError::GoalSamplingExhausted { attempts })
}

fn out_of_bounds(state: &RoverState, map: &TerrainMap, cfg: &EnvConfig) -> bool {
    let m = cfg.boundary_margin_m;
    let e = map.extent();
    !(state.x >= m && state.x <= e - m && state.y >= m && state.y <= e - m)
}

/// Everything a control step needs besides the per-env state.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub map: &'a TerrainMap,
    pub pattern: &'a SamplePattern,
    pub env: &'a EnvConfig,
    pub reward: &'a RewardWeights,
}

/// One control step of a single environment.
pub fn step_one(state: &mut RoverState, action: Action, ctx: &StepContext) -> Result<StepResult, SimError> {
    let applied = action.clamped();
    let prev = state.prev_action;
    integrate(state, applied, ctx.env);
    state.steps_elapsed += 1;
    state.prev_action = applied;
    let (distance, heading) = goal_distance_heading(state);
    let cause = if out_of_bounds(state, ctx.map, ctx.env) || check_collision(state, ctx.map, ctx.env) == CollisionClass::Fatal {
        TerminationCause::Collision
    } else if distance <= ctx.env.goal_threshold_m {
        TerminationCause::GoalReached
    } else if state.steps_elapsed >= ctx.env.max_episode_steps {
        TerminationCause::Timeout
    } else {
        TerminationCause::None
    };
    let reward = total_reward(&RewardInputs { distance, heading, action: applied, prev_action: prev }, cause, ctx.reward)?;
    let terminated = cause != TerminationCause::None;
    if terminated {
        state.alive = false;
    }
    Ok(StepResult { observation: observe(state, ctx.map, ctx.pattern)?, reward, terminated, cause, applied })
}

/// Steps every environment once. Environments are independent, so the
/// result does not depend on `exec`.
pub fn step_batch(
    states: &mut [RoverState],
    actions: &[Action],
    ctx: &StepContext,
    exec: Execution,
) -> Result<Vec<StepResult>, SimError> {
    if states.len() != actions.len() {
        return Err(SimError::LengthMismatch { states: states.len(), actions: actions.len() });
    }
    if let Some(index) = actions.iter().position(|a| a.has_nan()) {
        return Err(SimError::NanAction { index });
    }
    if let Some(index) = states.iter().position(|s| !s.alive) {
        return Err(SimError::NotAlive { index });
    }
    map_indexed_mut(exec, states, |i, s| step_one(s, actions[i], ctx)).into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
    pub v_lin: f64,
    pub v_ang: f64,
    pub reward: f64,
    pub cause: TerminationCause,
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<(), SimError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "t,x,y,yaw,v_lin,v_ang,reward,cause")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{},{},{},{}", r.t, r.x, r.y, r.yaw, r.v_lin, r.v_ang, r.reward, r.cause.as_str())?;
    }
    out.flush()?;
    Ok(())
}
