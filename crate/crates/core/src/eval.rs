//! Evaluation harness: success rate, mean duration of successful episodes
//! and action oscillation over independent episodes.
//!
//! Episode `i` draws its spawn, goal and noise from ChaCha8 stream `i` of the
//! eval seed. Episodes run in fixed chunks stepped in lockstep, so the report
//! does not depend on the execution strategy.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::{map_indexed, Execution};
use crate::nnkernel::NnError;
use crate::noise::{EpisodeNoise, NoiseModel, NoisePreset};
use crate::obs::{observe, ObsBatch, Observation, SamplePattern};
use crate::reward::RewardWeights;
use crate::simkin::{reset, step_one, Action, EnvConfig, SimError, SpawnSlot, StepContext, TerminationCause};
use crate::student::{StudentNet, StudentState};
use crate::teacher::{to_actions, TeacherNet};
use crate::terrain::TerrainMap;

pub const REPORT_FILE: &str = "report.json";
pub const EPISODES_FILE: &str = "episodes.csv";
const MISSING_CELL: &str = "—";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("policy expects heightmaps of {expected:?} points, pattern gives {got:?}")]
    PatternMismatch { expected: (usize, usize), got: (usize, usize) },
    #[error("invalid eval config: {0}")]
    InvalidConfig(String),
    #[error("malformed comparison table: {0}")]
    Table(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// A policy that can be stepped over a batch of episodes.
pub trait EvalPolicy: Sync {
    type State: Send;

    /// `(dense, sparse)` heightmap sizes, if the policy has fixed inputs.
    fn input_dims(&self) -> Option<(usize, usize)>;

    fn start(&self, episodes: usize) -> Self::State;

    /// Actions for the episodes listed in `rows` (indices into the state),
    /// given their current observations in the same order.
    fn act(&self, obs: &[&Observation], rows: &[usize], state: &mut Self::State) -> Result<Vec<Action>, EvalError>;
}

/// Teacher evaluated with its deterministic (mean) action.
impl EvalPolicy for TeacherNet<f32> {
    type State = ();

    fn input_dims(&self) -> Option<(usize, usize)> {
        Some((self.arch.dense_dim, self.arch.sparse_dim))
    }

    fn start(&self, _: usize) {}

    fn act(&self, obs: &[&Observation], _: &[usize], _: &mut ()) -> Result<Vec<Action>, EvalError> {
        let batch = ObsBatch::from_observations(obs.iter().copied(), self.arch.dense_dim, self.arch.sparse_dim);
        Ok(self.act_deterministic(&batch)?)
    }
}

/// Student with one persistent hidden state per episode.
impl EvalPolicy for StudentNet<f32> {
    type State = StudentState<f32>;

    fn input_dims(&self) -> Option<(usize, usize)> {
        Some((self.arch.dense_dim, self.arch.sparse_dim))
    }

    fn start(&self, episodes: usize) -> Self::State {
        self.initial_state(episodes)
    }

    fn act(&self, obs: &[&Observation], rows: &[usize], state: &mut Self::State) -> Result<Vec<Action>, EvalError> {
        let batch = ObsBatch::from_observations(obs.iter().copied(), self.arch.dense_dim, self.arch.sparse_dim);
        let sub = StudentState { h: state.h.iter().map(|h| h.select(ndarray::Axis(0), rows)).collect() };
        let (out, next) = self.forward(&batch, &sub)?;
        for (full, part) in state.h.iter_mut().zip(&next.h) {
            for (k, &r) in rows.iter().enumerate() {
                full.row_mut(r).assign(&part.row(k));
            }
        }
        Ok(to_actions(&out))
    }
}

/// Stateless scripted policy, mainly for tests and baselines.
pub struct FnPolicy<F>(pub F);

impl<F: Fn(&Observation) -> Action + Sync> EvalPolicy for FnPolicy<F> {
    type State = ();

    fn input_dims(&self) -> Option<(usize, usize)> {
        None
    }

    fn start(&self, _: usize) {}

    fn act(&self, obs: &[&Observation], _: &[usize], _: &mut ()) -> Result<Vec<Action>, EvalError> {
        Ok(obs.iter().map(|o| (self.0)(o)).collect())
    }
}

/// Loaded checkpoint of either kind.
#[derive(Debug, Clone)]
pub enum LoadedPolicy {
    Teacher(TeacherNet<f32>),
    Student(StudentNet<f32>),
}

impl LoadedPolicy {
    /// Loads whichever checkpoint `dir` holds.
    pub fn load(dir: &Path) -> Result<Self, EvalError> {
        if dir.join(crate::student::STUDENT_MANIFEST).exists() {
            Ok(Self::Student(StudentNet::load(dir)?))
        } else {
            Ok(Self::Teacher(TeacherNet::load(dir)?))
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Teacher(_) => "teacher",
            Self::Student(_) => "student",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Row label in comparison tables.
    pub agent: String,
    /// Terrain label in comparison tables (e.g. `T1`).
    pub terrain: String,
    pub noise: NoisePreset,
    pub episodes: usize,
    pub seed: u64,
    /// Episodes stepped together as one batch.
    pub chunk: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { agent: "policy".into(), terrain: "T1".into(), noise: NoisePreset::None, episodes: 512, seed: 0, chunk: 64 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.episodes == 0 {
            return Err("eval.episodes must be >= 1".into());
        }
        if self.chunk == 0 {
            return Err("eval.chunk must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub cause: TerminationCause,
    pub success: bool,
    pub steps: u32,
    pub duration_s: f64,
    pub total_reward: f64,
    /// Mean squared action change per step.
    pub oscillation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub agent: String,
    pub terrain: String,
    pub noise: String,
    pub seed: u64,
    pub episodes: usize,
    pub success_rate: f64,
    pub collision_rate: f64,
    pub timeout_rate: f64,
    /// Over successful episodes only; `None` if there were none.
    pub mean_success_duration_s: Option<f64>,
    pub mean_oscillation: f64,
    pub rows: Vec<EpisodeRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub report: EvalReport,
    /// Applied actions of every episode.
    pub actions: Vec<Vec<Action>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationTrace {
    /// `(a_t - a_{t-1})^2` summed over both components, for `t >= 1`.
    pub deltas: Vec<f64>,
    pub mean: f64,
}

/// Squared action changes between consecutive steps and their mean
/// (0 for a single-step trajectory).
pub fn oscillation_trace(actions: &[Action]) -> OscillationTrace {
    let deltas: Vec<f64> = actions.windows(2).map(|w| w[1].squared_delta(w[0])).collect();
    let mean = if deltas.is_empty() { 0.0 } else { deltas.iter().sum::<f64>() / deltas.len() as f64 };
    OscillationTrace { deltas, mean }
}

pub fn write_actions_csv(path: &Path, actions: &[Action], control_dt: f64) -> Result<(), EvalError> {
    let trace = oscillation_trace(actions);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "v_lin", "v_ang", "delta_sq"])?;
    for (i, a) in actions.iter().enumerate() {
        let d = if i == 0 { 0.0 } else { trace.deltas[i - 1] };
        w.write_record([(i as f64 * control_dt).to_string(), a.v_lin.to_string(), a.v_ang.to_string(), d.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

struct Episode {
    state: crate::simkin::RoverState,
    rng: ChaCha8Rng,
    noise: EpisodeNoise,
    obs: Observation,
    reward: f64,
    actions: Vec<Action>,
    end: Option<TerminationCause>,
}

pub struct EvalSetup<'a> {
    pub map: &'a TerrainMap,
    pub pattern: &'a SamplePattern,
    pub env: &'a EnvConfig,
    pub reward: &'a RewardWeights,
    pub exec: Execution,
}

fn run_chunk<P: EvalPolicy>(
    policy: &P,
    setup: &EvalSetup,
    noise: Option<&NoiseModel>,
    cfg: &EvalConfig,
    first: usize,
    count: usize,
) -> Result<Vec<Episode>, EvalError> {
    let slot = SpawnSlot::region(setup.map, setup.env)?;
    let ctx = StepContext { map: setup.map, pattern: setup.pattern, env: setup.env, reward: setup.reward };
    let mut eps = Vec::with_capacity(count);
    for i in first..first + count {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let state = reset(&slot, setup.map, setup.env, &mut rng)?;
        let ep_noise = noise.map_or(EpisodeNoise::identity(), |n| n.begin_episode(&mut rng));
        let clean = observe(&state, setup.map, setup.pattern).map_err(SimError::from)?;
        let obs = noisy(noise, &ep_noise, clean, &mut rng);
        eps.push(Episode { state, rng, noise: ep_noise, obs, reward: 0.0, actions: Vec::new(), end: None });
    }
    let mut policy_state = policy.start(count);
    loop {
        let rows: Vec<usize> = (0..count).filter(|&k| eps[k].end.is_none()).collect();
        if rows.is_empty() {
            break;
        }
        let obs: Vec<&Observation> = rows.iter().map(|&k| &eps[k].obs).collect();
        let actions = policy.act(&obs, &rows, &mut policy_state)?;
        for (&k, a) in rows.iter().zip(actions) {
            let e = &mut eps[k];
            let res = step_one(&mut e.state, a, &ctx)?;
            e.reward += res.reward;
            e.actions.push(res.applied);
            if res.terminated {
                e.end = Some(res.cause);
            } else {
                e.obs = noisy(noise, &e.noise, res.observation, &mut e.rng);
            }
        }
    }
    Ok(eps)
}

fn noisy(noise: Option<&NoiseModel>, ep: &EpisodeNoise, clean: Observation, rng: &mut ChaCha8Rng) -> Observation {
    match noise {
        Some(_) => {
            let (dense, sparse) = ep.apply_pair(&clean.dense, &clean.sparse, rng);
            Observation { dense, sparse, ..clean }
        }
        None => clean,
    }
}

/// Runs `cfg.episodes` independent episodes and summarizes them.
pub fn run_eval<P: EvalPolicy>(policy: &P, setup: &EvalSetup, cfg: &EvalConfig) -> Result<EvalOutcome, EvalError> {
    cfg.validate().map_err(EvalError::InvalidConfig)?;
    let got = (setup.pattern.dense_len(), setup.pattern.sparse_len());
    if let Some(expected) = policy.input_dims() {
        if expected != got {
            return Err(EvalError::PatternMismatch { expected, got });
        }
    }
    let model = NoiseModel::preset(cfg.noise);
    let noise = (!model.is_identity()).then_some(&model);
    let chunks: Vec<(usize, usize)> =
        (0..cfg.episodes).step_by(cfg.chunk).map(|s| (s, cfg.chunk.min(cfg.episodes - s))).collect();
    let results = map_indexed(setup.exec, &chunks, |_, &(first, count)| run_chunk(policy, setup, noise, cfg, first, count));
    let dt = setup.env.control_dt();
    let mut rows = Vec::with_capacity(cfg.episodes);
    let mut actions = Vec::with_capacity(cfg.episodes);
    for chunk in results {
        for e in chunk? {
            let cause = e.end.expect("episode finished");
            let steps = e.state.steps_elapsed;
            rows.push(EpisodeRow {
                episode: rows.len(),
                cause,
                success: cause == TerminationCause::GoalReached,
                steps,
                duration_s: steps as f64 * dt,
                total_reward: e.reward,
                oscillation: oscillation_trace(&e.actions).mean,
            });
            actions.push(e.actions);
        }
    }
    let n = rows.len() as f64;
    let frac = |c: TerminationCause| rows.iter().filter(|r| r.cause == c).count() as f64 / n;
    let successes: Vec<f64> = rows.iter().filter(|r| r.success).map(|r| r.duration_s).collect();
    let report = EvalReport {
        agent: cfg.agent.clone(),
        terrain: cfg.terrain.clone(),
        noise: cfg.noise.as_str().to_string(),
        seed: cfg.seed,
        episodes: rows.len(),
        success_rate: frac(TerminationCause::GoalReached),
        collision_rate: frac(TerminationCause::Collision),
        timeout_rate: frac(TerminationCause::Timeout),
        mean_success_duration_s: (!successes.is_empty()).then(|| successes.iter().sum::<f64>() / successes.len() as f64),
        mean_oscillation: rows.iter().map(|r| r.oscillation).sum::<f64>() / n,
        rows,
    };
    Ok(EvalOutcome { report, actions })
}

/// Writes `report.json`, `episodes.csv` and one `actions_<ep>.csv` per episode.
pub fn write_outcome(outcome: &EvalOutcome, control_dt: f64, dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(dir)?;
    let mut f = fs::File::create(dir.join(REPORT_FILE))?;
    serde_json::to_writer_pretty(&mut f, &outcome.report)?;
    f.write_all(b"\n")?;
    let mut w = csv::Writer::from_path(dir.join(EPISODES_FILE))?;
    for r in &outcome.report.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    for (i, a) in outcome.actions.iter().enumerate() {
        write_actions_csv(&dir.join(format!("actions_{i}.csv")), a, control_dt)?;
    }
    Ok(())
}

pub fn read_report(path: &Path) -> Result<EvalReport, EvalError> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

/// One comparison cell: success rate in percent and mean successful
/// duration, both rounded to one decimal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub success_pct: f64,
    pub duration_s: Option<f64>,
}

impl Cell {
    fn render(&self) -> String {
        match self.duration_s {
            Some(d) => format!("{:.1}% ({:.1} s)", self.success_pct, d),
            None => format!("{:.1}% (—)", self.success_pct),
        }
    }

    fn parse(s: &str) -> Option<Self> {
        let (pct, rest) = s.split_once("% (")?;
        let dur = rest.strip_suffix(')')?;
        let duration_s = if dur == MISSING_CELL { None } else { Some(dur.strip_suffix(" s")?.parse().ok()?) };
        Some(Self { success_pct: pct.parse().ok()?, duration_s })
    }
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

/// Agents as rows, `terrain/noise` combinations as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<Cell>>)>,
}

impl Comparison {
    /// Rows keep the first-seen agent order; columns are sorted. A later
    /// report for the same agent and column replaces an earlier one.
    pub fn from_reports(reports: &[EvalReport]) -> Self {
        let mut agents: Vec<String> = Vec::new();
        let mut cells: BTreeMap<(String, String), Cell> = BTreeMap::new();
        let mut columns: Vec<String> = Vec::new();
        for r in reports {
            if !agents.contains(&r.agent) {
                agents.push(r.agent.clone());
            }
            let col = format!("{}/{}", r.terrain, r.noise);
            if !columns.contains(&col) {
                columns.push(col.clone());
            }
            let cell = Cell { success_pct: round1(100.0 * r.success_rate), duration_s: r.mean_success_duration_s.map(round1) };
            cells.insert((r.agent.clone(), col), cell);
        }
        columns.sort();
        let rows = agents
            .into_iter()
            .map(|a| {
                let row = columns.iter().map(|c| cells.get(&(a.clone(), c.clone())).copied()).collect();
                (a, row)
            })
            .collect();
        Self { columns, rows }
    }

    fn rendered(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|(a, cells)| {
                let mut r = vec![a.clone()];
                r.extend(cells.iter().map(|c| c.map_or_else(|| MISSING_CELL.to_string(), |c| c.render())));
                r
            })
            .collect()
    }

    pub fn to_csv(&self) -> Result<String, EvalError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["agent".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for r in self.rendered() {
            w.write_record(&r)?;
        }
        String::from_utf8(w.into_inner().map_err(|e| EvalError::Io(e.into_error()))?).map_err(|e| EvalError::Table(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers()?.clone();
        if header.get(0) != Some("agent") {
            return Err(EvalError::Table("first column must be `agent`".into()));
        }
        let columns: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let cells = rec
                .iter()
                .skip(1)
                .map(|s| match s {
                    MISSING_CELL => Ok(None),
                    s => Cell::parse(s).map(Some).ok_or_else(|| EvalError::Table(format!("bad cell `{s}`"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push((rec[0].to_string(), cells));
        }
        Ok(Self { columns, rows })
    }

    pub fn to_markdown(&self) -> String {
        let mut out = format!("| agent | {} |\n", self.columns.join(" | "));
        out += &format!("|---|{}\n", "---|".repeat(self.columns.len()));
        for r in self.rendered() {
            out += &format!("| {} |\n", r.join(" | "));
        }
        out
    }
}
