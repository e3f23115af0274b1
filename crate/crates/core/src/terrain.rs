//! Procedural Mars-like terrain: a heightfield built from two octaves of
//! gradient noise (long-wavelength hills, short-wavelength bumps) plus a set of
//! disc-shaped rocks placed by blue-noise dart throwing.
//!
//! Coordinates are meters in the map frame, `x` and `y` both in `[0, extent_m]`.
//! The height grid has `cells + 1` nodes per side and is stored row-major with
//! `y` selecting the row.

use std::f64::consts::TAU;
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Rock radii are drawn uniformly from this range (meters).
pub const ROCK_RADIUS_RANGE: (f64, f64) = (0.1, 0.5);
/// Climbable rocks are at least this tall.
const MIN_SMALL_ROCK_HEIGHT: f64 = 0.05;
/// Non-climbable rocks rise this far above the climb threshold at most.
const MAX_LARGE_ROCK_EXCESS: f64 = 0.6;
const HILL_SALT: u64 = 0x6869_6c6c;
const BUMP_SALT: u64 = 0x6275_6d70;
const ROCK_SALT: u64 = 0x726f_636b;

pub const HEIGHTS_FILE: &str = "heights.f32";
pub const SIDECAR_FILE: &str = "terrain.json";

#[derive(Debug, Error)]
pub enum TerrainError {
    #[error("invalid terrain parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
    #[error("query ({x:.3}, {y:.3}) lies outside the {extent} m map")]
    OutOfExtent { x: f64, y: f64, extent: f64 },
    #[error("terrain file format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerrainPreset {
    /// Large, non-climbable rocks only.
    T1,
    /// Large rocks plus an equal number of climbable small rocks.
    T2,
}

impl FromStr for TerrainPreset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "t1" => Ok(Self::T1),
            "t2" => Ok(Self::T2),
            other => Err(format!("unknown terrain preset `{other}` (expected t1 or t2)")),
        }
    }
}

impl std::fmt::Display for TerrainPreset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::T1 => "T1",
            Self::T2 => "T2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerrainParams {
    pub seed: u64,
    pub extent_m: f64,
    pub cell_m: f64,
    pub hill_amplitude_m: f64,
    pub hill_wavelength_m: f64,
    pub bump_amplitude_m: f64,
    pub bump_wavelength_m: f64,
    pub rock_density_per_m2: f64,
    pub small_rock_fraction: f64,
    pub climb_height_threshold_m: f64,
}

impl Default for TerrainParams {
    fn default() -> Self {
        Self::preset(TerrainPreset::T1, 0)
    }
}

impl TerrainParams {
    pub fn preset(preset: TerrainPreset, seed: u64) -> Self {
        let (rock_density_per_m2, small_rock_fraction) = match preset {
            TerrainPreset::T1 => (0.02, 0.0),
            TerrainPreset::T2 => (0.04, 0.5),
        };
        Self {
            seed,
            extent_m: 60.0,
            cell_m: 0.05,
            hill_amplitude_m: 0.5,
            hill_wavelength_m: 15.0,
            bump_amplitude_m: 0.04,
            bump_wavelength_m: 1.0,
            rock_density_per_m2,
            small_rock_fraction,
            climb_height_threshold_m: 0.2,
        }
    }

    /// Number of grid cells per side.
    pub fn cells(&self) -> usize {
        (self.extent_m / self.cell_m).round() as usize
    }

    pub fn validate(&self) -> Result<(), TerrainError> {
        fn positive(field: &'static str, v: f64) -> Result<(), TerrainError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(TerrainError::InvalidParam { field, reason: format!("must be finite and > 0, got {v}") })
            }
        }
        fn nonneg(field: &'static str, v: f64) -> Result<(), TerrainError> {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(TerrainError::InvalidParam { field, reason: format!("must be finite and >= 0, got {v}") })
            }
        }
        positive("extent_m", self.extent_m)?;
        positive("cell_m", self.cell_m)?;
        positive("hill_wavelength_m", self.hill_wavelength_m)?;
        positive("bump_wavelength_m", self.bump_wavelength_m)?;
        positive("climb_height_threshold_m", self.climb_height_threshold_m)?;
        // Zero amplitude is the flat-terrain case.
        nonneg("hill_amplitude_m", self.hill_amplitude_m)?;
        nonneg("bump_amplitude_m", self.bump_amplitude_m)?;
        nonneg("rock_density_per_m2", self.rock_density_per_m2)?;
        if !(0.0..=1.0).contains(&self.small_rock_fraction) {
            return Err(TerrainError::InvalidParam {
                field: "small_rock_fraction",
                reason: format!("must lie in [0, 1], got {}", self.small_rock_fraction),
            });
        }
        let ratio = self.extent_m / self.cell_m;
        if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) || ratio.round() < 2.0 {
            return Err(TerrainError::InvalidParam {
                field: "cell_m",
                reason: format!("extent_m / cell_m must be an integer >= 2, got {ratio}"),
            });
        }
        if self.hill_wavelength_m <= self.bump_wavelength_m {
            return Err(TerrainError::InvalidParam {
                field: "hill_wavelength_m",
                reason: "must exceed bump_wavelength_m".into(),
            });
        }
        if self.extent_m < 2.0 * ROCK_RADIUS_RANGE.1 {
            return Err(TerrainError::InvalidParam {
                field: "extent_m",
                reason: "map is smaller than one rock".into(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rock {
    pub center: [f64; 2],
    pub radius_m: f64,
    pub height_m: f64,
    pub climbable: bool,
}

impl Rock {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        dx * dx + dy * dy <= self.radius_m * self.radius_m
    }
}

/// Uniform spatial hash over rock centers.
#[derive(Debug, Clone)]
struct RockIndex {
    bucket_m: f64,
    buckets_per_side: usize,
    buckets: Vec<Vec<u32>>,
    max_radius: f64,
}

impl RockIndex {
    fn build(rocks: &[Rock], extent: f64) -> Self {
        let max_radius = rocks.iter().map(|r| r.radius_m).fold(0.0, f64::max);
        let bucket_m = (2.0 * max_radius).max(1.0);
        let buckets_per_side = ((extent / bucket_m).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); buckets_per_side * buckets_per_side];
        for (i, rock) in rocks.iter().enumerate() {
            let bx = Self::coord(rock.center[0], bucket_m, buckets_per_side);
            let by = Self::coord(rock.center[1], bucket_m, buckets_per_side);
            buckets[by * buckets_per_side + bx].push(i as u32);
        }
        Self { bucket_m, buckets_per_side, buckets, max_radius }
    }

    fn coord(v: f64, bucket_m: f64, n: usize) -> usize {
        ((v / bucket_m).floor().max(0.0) as usize).min(n - 1)
    }

    fn query(&self, rocks: &[Rock], center: [f64; 2], radius: f64, out: &mut Vec<u32>) {
        out.clear();
        if rocks.is_empty() {
            return;
        }
        let reach = radius + self.max_radius;
        let n = self.buckets_per_side;
        let x0 = Self::coord(center[0] - reach, self.bucket_m, n);
        let x1 = Self::coord(center[0] + reach, self.bucket_m, n);
        let y0 = Self::coord(center[1] - reach, self.bucket_m, n);
        let y1 = Self::coord(center[1] + reach, self.bucket_m, n);
        for by in y0..=y1 {
            for bx in x0..=x1 {
                for &i in &self.buckets[by * n + bx] {
                    let rock = &rocks[i as usize];
                    let dx = rock.center[0] - center[0];
                    let dy = rock.center[1] - center[1];
                    let limit = radius + rock.radius_m;
                    if dx * dx + dy * dy <= limit * limit {
                        out.push(i);
                    }
                }
            }
        }
        out.sort_unstable();
    }
}

#[derive(Debug, Clone)]
pub struct TerrainMap {
    params: TerrainParams,
    cells: usize,
    heights: Vec<f32>,
    rocks: Vec<Rock>,
    index: RockIndex,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    params: TerrainParams,
    nodes_per_side: usize,
    rocks: Vec<Rock>,
}

impl TerrainMap {
    /// Assembles a map from explicit parts. `heights` must hold
    /// `(cells + 1)^2` finite values.
    pub fn from_parts(params: TerrainParams, heights: Vec<f32>, rocks: Vec<Rock>) -> Result<Self, TerrainError> {
        params.validate()?;
        let cells = params.cells();
        let nodes = (cells + 1) * (cells + 1);
        if heights.len() != nodes {
            return Err(TerrainError::Format(format!("expected {nodes} heights, got {}", heights.len())));
        }
        if heights.iter().any(|h| !h.is_finite()) {
            return Err(TerrainError::Format("non-finite height".into()));
        }
        for rock in &rocks {
            let inside = rock.center.iter().all(|c| (0.0..=params.extent_m).contains(c));
            if !inside || !(rock.radius_m > 0.0) || !(rock.height_m > 0.0) {
                return Err(TerrainError::Format(format!("invalid rock {rock:?}")));
            }
        }
        let index = RockIndex::build(&rocks, params.extent_m);
        Ok(Self { params, cells, heights, rocks, index })
    }

    pub fn flat(params: TerrainParams, rocks: Vec<Rock>) -> Result<Self, TerrainError> {
        let n = params.cells() + 1;
        Self::from_parts(params, vec![0.0; n * n], rocks)
    }

    pub fn params(&self) -> &TerrainParams {
        &self.params
    }

    pub fn extent(&self) -> f64 {
        self.params.extent_m
    }

    pub fn nodes_per_side(&self) -> usize {
        self.cells + 1
    }

    pub fn heights(&self) -> &[f32] {
        &self.heights
    }

    pub fn rocks(&self) -> &[Rock] {
        &self.rocks
    }

    pub fn node_height(&self, ix: usize, iy: usize) -> f32 {
        self.heights[iy * (self.cells + 1) + ix]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let e = self.params.extent_m;
        (0.0..=e).contains(&x) && (0.0..=e).contains(&y)
    }

    /// Bilinear interpolation of the base grid, without rocks.
    pub fn ground_height_at(&self, x: f64, y: f64) -> Result<f64, TerrainError> {
        if !self.contains(x, y) {
            return Err(TerrainError::OutOfExtent { x, y, extent: self.params.extent_m });
        }
        Ok(self.ground_height_unchecked(x, y))
    }

    pub(crate) fn ground_height_unchecked(&self, x: f64, y: f64) -> f64 {
        let n = self.cells;
        let gx = x / self.params.cell_m;
        let gy = y / self.params.cell_m;
        let ix = (gx.floor() as usize).min(n - 1);
        let iy = (gy.floor() as usize).min(n - 1);
        let fx = gx - ix as f64;
        let fy = gy - iy as f64;
        let stride = n + 1;
        let h00 = self.heights[iy * stride + ix] as f64;
        let h10 = self.heights[iy * stride + ix + 1] as f64;
        let h01 = self.heights[(iy + 1) * stride + ix] as f64;
        let h11 = self.heights[(iy + 1) * stride + ix + 1] as f64;
        let bottom = h00 + (h10 - h00) * fx;
        let top = h01 + (h11 - h01) * fx;
        bottom + (top - bottom) * fy
    }

    /// Terrain surface height: ground plus the top of any rock covering the point.
    pub fn height_at(&self, x: f64, y: f64) -> Result<f64, TerrainError> {
        let ground = self.ground_height_at(x, y)?;
        let mut scratch = Vec::new();
        self.index.query(&self.rocks, [x, y], 0.0, &mut scratch);
        Ok(ground + self.rock_height_among(&scratch, x, y))
    }

    /// Tallest rock among `candidates` whose footprint covers `(x, y)`, or 0.
    pub(crate) fn rock_height_among(&self, candidates: &[u32], x: f64, y: f64) -> f64 {
        candidates
            .iter()
            .map(|&i| &self.rocks[i as usize])
            .filter(|r| r.contains(x, y))
            .map(|r| r.height_m)
            .fold(0.0, f64::max)
    }

    /// Indices of rocks whose discs intersect the query disc, ascending.
    pub(crate) fn rock_indices_near(&self, center: [f64; 2], radius_m: f64, out: &mut Vec<u32>) {
        self.index.query(&self.rocks, center, radius_m, out);
    }

    /// Rocks whose discs intersect the disc of `radius_m` around `center`
    /// (touching counts).
    pub fn rocks_near(&self, center: [f64; 2], radius_m: f64) -> Vec<&Rock> {
        let mut idx = Vec::new();
        self.index.query(&self.rocks, center, radius_m, &mut idx);
        idx.into_iter().map(|i| &self.rocks[i as usize]).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<(), TerrainError> {
        fs::create_dir_all(dir)?;
        let mut bytes = Vec::with_capacity(self.heights.len() * 4);
        for h in &self.heights {
            bytes.extend_from_slice(&h.to_le_bytes());
        }
        fs::File::create(dir.join(HEIGHTS_FILE))?.write_all(&bytes)?;
        let sidecar = Sidecar {
            params: self.params.clone(),
            nodes_per_side: self.cells + 1,
            rocks: self.rocks.clone(),
        };
        fs::write(dir.join(SIDECAR_FILE), serde_json::to_string_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, TerrainError> {
        let sidecar: Sidecar = serde_json::from_str(&fs::read_to_string(dir.join(SIDECAR_FILE))?)?;
        let mut bytes = Vec::new();
        fs::File::open(dir.join(HEIGHTS_FILE))?.read_to_end(&mut bytes)?;
        if bytes.len() != sidecar.nodes_per_side * sidecar.nodes_per_side * 4 {
            return Err(TerrainError::Format(format!(
                "{} bytes do not match {}^2 f32 nodes",
                bytes.len(),
                sidecar.nodes_per_side
            )));
        }
        let heights = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_parts(sidecar.params, heights, sidecar.rocks)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn lattice_gradient(seed: u64, ix: i64, iy: i64) -> (f64, f64) {
    let h = splitmix64(seed ^ splitmix64((ix as u64) ^ splitmix64(iy as u64).rotate_left(17)));
    let angle = (h >> 11) as f64 / (1u64 << 53) as f64 * TAU;
    (angle.cos(), angle.sin())
}

/// 2-D gradient noise on the unit lattice with quintic fade; roughly in [-0.7, 0.7].
fn gradient_noise(seed: u64, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (ix, iy) = (x0 as i64, y0 as i64);
    let corner = |cx: i64, cy: i64, dx: f64, dy: f64| {
        let (gx, gy) = lattice_gradient(seed, cx, cy);
        gx * dx + gy * dy
    };
    let n00 = corner(ix, iy, fx, fy);
    let n10 = corner(ix + 1, iy, fx - 1.0, fy);
    let n01 = corner(ix, iy + 1, fx, fy - 1.0);
    let n11 = corner(ix + 1, iy + 1, fx - 1.0, fy - 1.0);
    let fade = |t: f64| t * t * t * (t * (t * 6.0 - 15.0) + 10.0);
    let (u, v) = (fade(fx), fade(fy));
    let bottom = n00 + (n10 - n00) * u;
    let top = n01 + (n11 - n01) * u;
    bottom + (top - bottom) * v
}

/// Number of rocks the sampler aims for: density times map area, rounded.
pub fn target_rock_count(params: &TerrainParams) -> usize {
    (params.rock_density_per_m2 * params.extent_m * params.extent_m).round() as usize
}

/// Dart-throwing Poisson-disc placement of rock centers with a minimum
/// center spacing of twice the largest rock radius.
fn place_rocks(params: &TerrainParams) -> Vec<Rock> {
    let target = target_rock_count(params);
    if target == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ ROCK_SALT);
    let (r_min, r_max) = ROCK_RADIUS_RANGE;
    let spacing = 2.0 * r_max;
    let lo = r_max;
    let hi = params.extent_m - r_max;
    let mut centers: Vec<[f64; 2]> = Vec::with_capacity(target);
    let max_attempts = 50 * target + 1000;
    let mut attempts = 0;
    while centers.len() < target && attempts < max_attempts {
        attempts += 1;
        let c = [rng.random_range(lo..=hi), rng.random_range(lo..=hi)];
        let clear = centers.iter().all(|p| {
            let dx = p[0] - c[0];
            let dy = p[1] - c[1];
            dx * dx + dy * dy >= spacing * spacing
        });
        if clear {
            centers.push(c);
        }
    }
    let small = (params.small_rock_fraction * centers.len() as f64).round() as usize;
    let threshold = params.climb_height_threshold_m;
    centers
        .into_iter()
        .enumerate()
        .map(|(i, center)| {
            let radius_m = rng.random_range(r_min..=r_max);
            let climbable = i < small;
            let height_m = if climbable {
                rng.random_range(MIN_SMALL_ROCK_HEIGHT.min(threshold)..=threshold)
            } else {
                // Strictly above the threshold.
                threshold + rng.random_range(0.1..=MAX_LARGE_ROCK_EXCESS)
            };
            Rock { center, radius_m, height_m, climbable }
        })
        .collect()
}

/// Deterministic procedural terrain for the given parameters.
pub fn generate_terrain(params: &TerrainParams) -> Result<TerrainMap, TerrainError> {
    params.validate()?;
    let cells = params.cells();
    let n = cells + 1;
    let hill_seed = splitmix64(params.seed ^ HILL_SALT);
    let bump_seed = splitmix64(params.seed ^ BUMP_SALT);
    let mut heights = Vec::with_capacity(n * n);
    for iy in 0..n {
        let y = iy as f64 * params.cell_m;
        for ix in 0..n {
            let x = ix as f64 * params.cell_m;
            let mut h = 0.0;
            if params.hill_amplitude_m > 0.0 {
                h += params.hill_amplitude_m
                    * gradient_noise(hill_seed, x / params.hill_wavelength_m, y / params.hill_wavelength_m);
            }
            if params.bump_amplitude_m > 0.0 {
                h += params.bump_amplitude_m
                    * gradient_noise(bump_seed, x / params.bump_wavelength_m, y / params.bump_wavelength_m);
            }
            heights.push(h as f32);
        }
    }
    let rocks = place_rocks(params);
    TerrainMap::from_parts(params.clone(), heights, rocks)
}
