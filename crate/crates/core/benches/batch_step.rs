//! Sequential vs. parallel batch stepping and teacher inference.
//!
//! On a single core the two paths should be within noise of each other;
//! the parallel path pays off with more cores.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rovernav::exec::Execution;
use rovernav::noise::{NoiseModel, NoisePreset};
use rovernav::obs::{build_pattern, ObsBatch, PatternConfig};
use rovernav::reward::RewardWeights;
use rovernav::simkin::{Action, EnvConfig};
use rovernav::teacher::{TeacherArch, TeacherNet};
use rovernav::terrain::{generate_terrain, TerrainParams, TerrainPreset};
use rovernav::vecenv::VecEnv;

fn envs(n: usize, exec: Execution) -> VecEnv {
    let params = TerrainParams { extent_m: 40.0, ..TerrainParams::preset(TerrainPreset::T2, 1) };
    let map = generate_terrain(&params).unwrap();
    let noise = Some(NoiseModel::preset(NoisePreset::TrainMix));
    VecEnv::new(map, build_pattern(&PatternConfig::default()), EnvConfig::default(), RewardWeights::default(), n, 1, noise, exec).unwrap()
}

fn batch_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("batch_step");
    for n in [16, 64] {
        for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
            let mut venv = envs(n, exec);
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, &n| {
                b.iter(|| {
                    let actions: Vec<Action> = (0..n).map(|_| Action::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
                    venv.step(&actions).unwrap()
                })
            });
        }
    }
    group.finish();
}

fn inference(c: &mut Criterion) {
    let venv = envs(64, Execution::Parallel);
    let pattern = build_pattern(&PatternConfig::default());
    let (kd, ks) = (pattern.dense_len(), pattern.sparse_len());
    let batch = ObsBatch::<f32>::from_observations(venv.observations(), kd, ks);
    let net = TeacherNet::<f32>::new(TeacherArch::new(kd, ks), 100.0, 0);
    c.bench_function("teacher_forward_64", |b| b.iter(|| net.act_deterministic(&batch).unwrap()));
}

criterion_group!(benches, batch_step, inference);
criterion_main!(benches);
