//! Teacher observations: the proprioceptive tuple (distance to goal, heading
//! to goal, previous action) and two egocentric heightmaps, a dense square
//! near the rover and a sparse annulus reaching further out.
//!
//! Heightmap offsets live in the body frame (`x` forward, `y` left) and are
//! rotated by the rover yaw before sampling. Entries are heights relative to
//! the terrain surface under the rover center. Heading is positive when the
//! goal lies to the rover's left.

use ndarray::Array2;
use num_traits::Float;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::simkin::{wrap_angle, Action, RoverState};
use crate::terrain::TerrainMap;

pub const PROPRIO_DIM: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum ObsError {
    #[error("rover at ({x:.2}, {y:.2}) is closer than {margin} m to the map edge")]
    MarginViolation { x: f64, y: f64, margin: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatternConfig {
    pub dense_half_extent_m: f64,
    pub dense_pitch_m: f64,
    pub sparse_pitch_m: f64,
    pub sparse_inner_m: f64,
    pub sparse_outer_m: f64,
}

impl Default for PatternConfig {
    fn default() -> Self {
        Self {
            dense_half_extent_m: 1.0,
            dense_pitch_m: 0.05,
            sparse_pitch_m: 0.15,
            sparse_inner_m: 1.0,
            sparse_outer_m: 4.0,
        }
    }
}

impl PatternConfig {
    pub fn validate(&self) -> Result<(), String> {
        let all = [
            ("dense_half_extent_m", self.dense_half_extent_m),
            ("dense_pitch_m", self.dense_pitch_m),
            ("sparse_pitch_m", self.sparse_pitch_m),
            ("sparse_outer_m", self.sparse_outer_m),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("pattern.{name} must be finite and > 0, got {v}"));
            }
        }
        if !(self.sparse_inner_m >= 0.0 && self.sparse_inner_m < self.sparse_outer_m) {
            return Err("pattern.sparse_inner_m must lie in [0, sparse_outer_m)".into());
        }
        Ok(())
    }
}

/// Fixed, ordered body-frame sample offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePattern {
    config: PatternConfig,
    dense: Vec<[f64; 2]>,
    sparse: Vec<[f64; 2]>,
    max_range: f64,
}

impl SamplePattern {
    pub fn config(&self) -> &PatternConfig {
        &self.config
    }
    pub fn dense(&self) -> &[[f64; 2]] {
        &self.dense
    }
    pub fn sparse(&self) -> &[[f64; 2]] {
        &self.sparse
    }
    pub fn dense_len(&self) -> usize {
        self.dense.len()
    }
    pub fn sparse_len(&self) -> usize {
        self.sparse.len()
    }
    /// Largest offset norm; observing requires this much clearance to the map edge.
    pub fn max_range(&self) -> f64 {
        self.max_range
    }
}

/// Dense: square grid of half-width `dense_half_extent_m` at `dense_pitch_m`.
/// Sparse: grid points at `sparse_pitch_m` with `inner < |p| <= outer`.
/// Both are ordered row-major with rows along body `x`.
pub fn build_pattern(config: &PatternConfig) -> SamplePattern {
    let n_dense = (config.dense_half_extent_m / config.dense_pitch_m + 1e-9).floor() as i64;
    let mut dense = Vec::with_capacity(((2 * n_dense + 1) * (2 * n_dense + 1)) as usize);
    for i in -n_dense..=n_dense {
        for j in -n_dense..=n_dense {
            dense.push([i as f64 * config.dense_pitch_m, j as f64 * config.dense_pitch_m]);
        }
    }
    let n_sparse = (config.sparse_outer_m / config.sparse_pitch_m + 1e-9).floor() as i64;
    let inner2 = config.sparse_inner_m * config.sparse_inner_m;
    let outer2 = config.sparse_outer_m * config.sparse_outer_m;
    let mut sparse = Vec::new();
    for i in -n_sparse..=n_sparse {
        for j in -n_sparse..=n_sparse {
            // Integer lattice norms avoid float drift at the annulus edges.
            let r2 = ((i * i + j * j) as f64) * config.sparse_pitch_m * config.sparse_pitch_m;
            if r2 > inner2 * (1.0 + 1e-12) && r2 <= outer2 * (1.0 + 1e-12) {
                sparse.push([i as f64 * config.sparse_pitch_m, j as f64 * config.sparse_pitch_m]);
            }
        }
    }
    let max_range = dense
        .iter()
        .chain(&sparse)
        .map(|p| p[0].hypot(p[1]))
        .fold(0.0, f64::max);
    SamplePattern { config: config.clone(), dense, sparse, max_range }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub distance_m: f64,
    pub heading_rad: f64,
    pub prev_action: Action,
    pub dense: Vec<f64>,
    pub sparse: Vec<f64>,
}

impl Observation {
    pub fn proprio(&self) -> [f64; PROPRIO_DIM] {
        [self.distance_m, self.heading_rad, self.prev_action.v_lin, self.prev_action.v_ang]
    }

    pub fn is_finite(&self) -> bool {
        self.proprio().iter().chain(&self.dense).chain(&self.sparse).all(|v| v.is_finite())
    }
}

pub fn goal_distance_heading(state: &RoverState) -> (f64, f64) {
    let dx = state.goal[0] - state.x;
    let dy = state.goal[1] - state.y;
    (dx.hypot(dy), wrap_angle(dy.atan2(dx) - state.yaw))
}

pub fn observe(state: &RoverState, map: &TerrainMap, pattern: &SamplePattern) -> Result<Observation, ObsError> {
    let margin = pattern.max_range();
    let e = map.extent();
    let (x, y) = (state.x, state.y);
    if !(x >= margin && x <= e - margin && y >= margin && y <= e - margin) {
        return Err(ObsError::MarginViolation { x, y, margin });
    }
    let mut candidates = Vec::new();
    map.rock_indices_near([x, y], margin, &mut candidates);
    let surface = |px: f64, py: f64| map.ground_height_unchecked(px, py) + map.rock_height_among(&candidates, px, py);
    let base = surface(x, y);
    let (s, c) = state.yaw.sin_cos();
    let sample = |offsets: &[[f64; 2]]| -> Vec<f64> {
        offsets
            .iter()
            .map(|o| {
                let px = x + c * o[0] - s * o[1];
                let py = y + s * o[0] + c * o[1];
                surface(px, py) - base
            })
            .collect()
    };
    let (distance_m, heading_rad) = goal_distance_heading(state);
    Ok(Observation {
        distance_m,
        heading_rad,
        prev_action: state.prev_action,
        dense: sample(pattern.dense()),
        sparse: sample(pattern.sparse()),
    })
}

/// Row-stacked network inputs for a batch of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsBatch<S> {
    pub proprio: Array2<S>,
    pub dense: Array2<S>,
    pub sparse: Array2<S>,
}

impl<S: Float + 'static> ObsBatch<S> {
    pub fn from_observations<'a, I>(obs: I, dense_dim: usize, sparse_dim: usize) -> Self
    where
        I: IntoIterator<Item = &'a Observation>,
    {
        let cast = |v: f64| S::from(v).unwrap();
        let mut proprio = Vec::new();
        let mut dense = Vec::new();
        let mut sparse = Vec::new();
        let mut rows = 0;
        for o in obs {
            assert_eq!(o.dense.len(), dense_dim, "dense heightmap dimension");
            assert_eq!(o.sparse.len(), sparse_dim, "sparse heightmap dimension");
            proprio.extend(o.proprio().iter().map(|&v| cast(v)));
            dense.extend(o.dense.iter().map(|&v| cast(v)));
            sparse.extend(o.sparse.iter().map(|&v| cast(v)));
            rows += 1;
        }
        Self {
            proprio: Array2::from_shape_vec((rows, PROPRIO_DIM), proprio).unwrap(),
            dense: Array2::from_shape_vec((rows, dense_dim), dense).unwrap(),
            sparse: Array2::from_shape_vec((rows, sparse_dim), sparse).unwrap(),
        }
    }

    pub fn rows(&self) -> usize {
        self.proprio.nrows()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let pick = |a: &Array2<S>| a.select(ndarray::Axis(0), rows);
        Self { proprio: pick(&self.proprio), dense: pick(&self.dense), sparse: pick(&self.sparse) }
    }
}
