use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use rovernav::dataset::{collect, CollectConfig, Dataset, DATASET_MANIFEST};
use rovernav::eval::{read_report, run_eval, write_outcome, Comparison, EvalConfig, EvalSetup, LoadedPolicy, REPORT_FILE};
use rovernav::noise::{NoiseModel, NoisePreset};
use rovernav::obs::build_pattern;
use rovernav::student::{train_student, STUDENT_CHECKPOINT, STUDENT_MANIFEST, LOSS_FILE};
use rovernav::teacher::{train_teacher, TeacherNet, TeacherTrainConfig, METRICS_FILE, TEACHER_CHECKPOINT, TEACHER_MANIFEST};
use rovernav::terrain::{generate_terrain, TerrainMap, TerrainParams, TerrainPreset, HEIGHTS_FILE, SIDECAR_FILE};
use rovernav::vecenv::VecEnv;

mod config;
mod plot;
mod run;

use config::ExperimentConfig;
use run::{require_upstream, RunDir};

#[derive(Parser)]
#[command(name = "rovernav", version, about = "Teacher-student rover navigation pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a terrain map.
    Terrain {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use the rock layout of a preset instead of the config values.
        #[arg(long)]
        preset: Option<TerrainPreset>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the teacher with PPO on a generated terrain.
    TrainTeacher {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory of `rovernav terrain`.
        #[arg(long)]
        terrain: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Train on noisy heightmaps from this noise preset.
        #[arg(long)]
        domain_rand: Option<NoisePreset>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Log teacher trajectories into dataset shards.
    Collect {
        /// Output directory of `rovernav train-teacher`.
        #[arg(long)]
        teacher: PathBuf,
        /// Defaults to the teacher run's config snapshot.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        envs: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distill the student from a dataset.
    TrainStudent {
        /// Output directory of `rovernav collect`.
        #[arg(long)]
        data: PathBuf,
        /// Defaults to the dataset run's config snapshot.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        noise: Option<NoisePreset>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Teacher run, needed for warm starts or the latent auxiliary loss.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a teacher or student checkpoint.
    Eval {
        /// Output directory of `train-teacher` or `train-student`.
        #[arg(long)]
        policy: PathBuf,
        /// `t1`, `t2` or a terrain directory.
        #[arg(long)]
        terrain: String,
        #[arg(long)]
        noise: Option<NoisePreset>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Row label in comparison tables (defaults to the policy kind).
        #[arg(long)]
        agent: Option<String>,
        /// Defaults to the policy run's config snapshot.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a comparison table from eval run directories.
    Report {
        #[arg(required = true, num_args = 2..)]
        runs: Vec<PathBuf>,
        /// `.csv` or `.md`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a training-metrics, loss or action CSV as an SVG line plot.
    Plot {
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn apply_preset(params: &mut TerrainParams, preset: TerrainPreset) {
    let p = TerrainParams::preset(preset, params.seed);
    params.rock_density_per_m2 = p.rock_density_per_m2;
    params.small_rock_fraction = p.small_rock_fraction;
}

fn noise_model(p: NoisePreset) -> Option<NoiseModel> {
    let m = NoiseModel::preset(p);
    (!m.is_identity()).then_some(m)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Terrain { config, preset, seed, out } => {
            let mut cfg = ExperimentConfig::load_or_default(config.as_deref())?;
            if let Some(s) = seed {
                cfg.terrain.seed = s;
            }
            if let Some(p) = preset {
                apply_preset(&mut cfg.terrain, p);
            }
            cfg.validate()?;
            let dir = RunDir::create(&out, "terrain", &cfg)?;
            let map = generate_terrain(&cfg.terrain)?;
            map.save(&out)?;
            println!("terrain: {} m, {} rocks -> {}", map.extent(), map.rocks().len(), out.display());
            dir.finish(&[HEIGHTS_FILE.into(), SIDECAR_FILE.into()])?;
        }
        Command::TrainTeacher { config, terrain, steps, seed, domain_rand, out } => {
            require_upstream(&terrain, &["terrain"])?;
            let mut cfg = ExperimentConfig::load_or_default(config.as_deref())?;
            let map = TerrainMap::load(&terrain)?;
            cfg.terrain = map.params().clone();
            if let Some(s) = steps {
                cfg.teacher.total_steps = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(d) = domain_rand {
                cfg.teacher.domain_randomization = d;
            }
            cfg.validate()?;
            let mut dir = RunDir::create(&out, "train-teacher", &cfg)?;
            dir.add_input(&terrain.join(HEIGHTS_FILE))?;
            dir.add_input(&terrain.join(SIDECAR_FILE))?;
            let mut envs = VecEnv::new(
                map,
                build_pattern(&cfg.pattern),
                cfg.env.clone(),
                cfg.reward.clone(),
                cfg.teacher.n_envs,
                cfg.seed,
                noise_model(cfg.teacher.domain_randomization),
                cfg.execution.into(),
            )?;
            let tcfg = TeacherTrainConfig {
                ppo: cfg.ppo.clone(),
                n_envs: cfg.teacher.n_envs,
                total_steps: cfg.teacher.total_steps,
                seed: cfg.seed,
                checkpoint_every: cfg.teacher.checkpoint_every,
            };
            let result = train_teacher(&mut envs, &tcfg, &out)?;
            if let Some(last) = result.metrics.last() {
                println!(
                    "teacher: {} steps, mean return {:.2}, success {:.3}",
                    last.env_steps, last.mean_return, last.success_rate
                );
            }
            dir.finish(&[TEACHER_CHECKPOINT.into(), TEACHER_MANIFEST.into(), METRICS_FILE.into()])?;
        }
        Command::Collect { teacher, config, envs, steps, seed, out } => {
            let (_, upstream) = require_upstream(&teacher, &["train-teacher"])?;
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => upstream.clone(),
            };
            cfg.terrain = upstream.terrain.clone();
            cfg.pattern = upstream.pattern.clone();
            if let Some(n) = envs {
                cfg.collect.n_envs = n;
            }
            if let Some(s) = steps {
                cfg.collect.steps = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let mut dir = RunDir::create(&out, "collect", &cfg)?;
            dir.add_input(&teacher.join(TEACHER_CHECKPOINT))?;
            let net = TeacherNet::<f32>::load(&teacher)?;
            let map = generate_terrain(&cfg.terrain)?;
            let mut venv = VecEnv::new(
                map,
                build_pattern(&cfg.pattern),
                cfg.env.clone(),
                cfg.reward.clone(),
                cfg.collect.n_envs,
                cfg.seed,
                None,
                cfg.execution.into(),
            )?;
            let ccfg = CollectConfig { steps: cfg.collect.steps, seed: cfg.seed, stochastic: cfg.collect.stochastic };
            let manifest = collect(&net, &teacher, &mut venv, &cfg.terrain, &ccfg, &out)?;
            let mut outputs: Vec<String> = manifest.shards.iter().map(|s| s.file.clone()).collect();
            outputs.push(DATASET_MANIFEST.into());
            println!("collect: {} shards, {} records", manifest.shards.len(), cfg.collect.n_envs * cfg.collect.steps);
            dir.finish(&outputs)?;
        }
        Command::TrainStudent { data, config, noise, epochs, seed, teacher, out } => {
            let (data_run, upstream) = require_upstream(&data, &["collect"])?;
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => upstream.clone(),
            };
            if let Some(n) = noise {
                cfg.noise.student = n;
            }
            if let Some(e) = epochs {
                cfg.student.epochs = e;
            }
            if let Some(s) = seed {
                cfg.student.seed = s;
            }
            cfg.validate()?;
            let needs_teacher = cfg.student.warm_start_encoders || cfg.student.aux_latent_weight > 0.0;
            let teacher_net = match (&teacher, needs_teacher) {
                (Some(t), _) => {
                    require_upstream(t, &["train-teacher"])?;
                    let sha = rovernav::dataset::sha256_file(&t.join(TEACHER_CHECKPOINT))?;
                    if !data_run.inputs.iter().any(|i| i.sha256 == sha) {
                        bail!("provenance error: {} is not the teacher that produced {}", t.display(), data.display());
                    }
                    Some(TeacherNet::<f32>::load(t)?)
                }
                (None, true) => bail!("student.warm_start_encoders / aux_latent_weight need --teacher"),
                (None, false) => None,
            };
            let mut dir = RunDir::create(&out, "train-student", &cfg)?;
            for f in &data_run.outputs {
                dir.add_input(&data.join(&f.path))?;
            }
            let (mut dataset, _) = Dataset::open_dir(&data)?;
            let model = noise_model(cfg.noise.student);
            let result = train_student(&mut dataset, model.as_ref(), teacher_net.as_ref(), &cfg.student, &out)?;
            if let Some(best) = result.losses.iter().find(|r| r.epoch == result.best_epoch) {
                println!("student: best epoch {} val mse {:.3e}", best.epoch, best.val_mse);
            }
            dir.finish(&[STUDENT_CHECKPOINT.into(), STUDENT_MANIFEST.into(), LOSS_FILE.into()])?;
        }
        Command::Eval { policy, terrain, noise, episodes, seed, agent, config, out } => {
            let (_, upstream) = require_upstream(&policy, &["train-teacher", "train-student"])?;
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => upstream.clone(),
            };
            cfg.pattern = upstream.pattern.clone();
            let mut terrain_inputs = Vec::new();
            let (map, label) = match terrain.parse::<TerrainPreset>() {
                Ok(p) => {
                    apply_preset(&mut cfg.terrain, p);
                    (generate_terrain(&cfg.terrain)?, p.to_string())
                }
                Err(_) => {
                    let dir = Path::new(&terrain);
                    require_upstream(dir, &["terrain"])?;
                    terrain_inputs = vec![dir.join(HEIGHTS_FILE), dir.join(SIDECAR_FILE)];
                    let map = TerrainMap::load(dir)?;
                    cfg.terrain = map.params().clone();
                    let name = dir.file_name().map_or("terrain".into(), |n| n.to_string_lossy().into_owned());
                    (map, name)
                }
            };
            if let Some(n) = noise {
                cfg.noise.eval = n;
            }
            if let Some(e) = episodes {
                cfg.eval.episodes = e;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let mut dir = RunDir::create(&out, "eval", &cfg)?;
            let loaded = LoadedPolicy::load(&policy)?;
            let ckpt = match loaded {
                LoadedPolicy::Teacher(_) => TEACHER_CHECKPOINT,
                LoadedPolicy::Student(_) => STUDENT_CHECKPOINT,
            };
            dir.add_input(&policy.join(ckpt))?;
            for f in &terrain_inputs {
                dir.add_input(f)?;
            }
            let ecfg = EvalConfig {
                agent: agent.unwrap_or_else(|| loaded.kind().to_string()),
                terrain: label,
                noise: cfg.noise.eval,
                episodes: cfg.eval.episodes,
                seed: cfg.seed,
                chunk: cfg.eval.chunk,
            };
            let pattern = build_pattern(&cfg.pattern);
            let setup = EvalSetup { map: &map, pattern: &pattern, env: &cfg.env, reward: &cfg.reward, exec: cfg.execution.into() };
            let outcome = match &loaded {
                LoadedPolicy::Teacher(t) => run_eval(t, &setup, &ecfg)?,
                LoadedPolicy::Student(s) => run_eval(s, &setup, &ecfg)?,
            };
            write_outcome(&outcome, cfg.env.control_dt(), &out)?;
            let r = &outcome.report;
            println!(
                "eval {} on {}/{}: success {:.3}, mean duration {}, oscillation {:.4}",
                r.agent,
                r.terrain,
                r.noise,
                r.success_rate,
                r.mean_success_duration_s.map_or("n/a".into(), |d| format!("{d:.1} s")),
                r.mean_oscillation
            );
            dir.finish(&[REPORT_FILE.into(), rovernav::eval::EPISODES_FILE.into()])?;
        }
        Command::Report { runs, out } => {
            let mut reports = Vec::new();
            for r in &runs {
                require_upstream(r, &["eval"])?;
                reports.push(read_report(&r.join(REPORT_FILE))?);
            }
            let table = Comparison::from_reports(&reports);
            let text = if out.extension().is_some_and(|e| e == "md") { table.to_markdown() } else { table.to_csv()? };
            std::fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
            print!("{}", table.to_markdown());
        }
        Command::Plot { csv, out } => plot::plot_csv(&csv, &out)?,
    }
    Ok(())
}
