use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use gainscout::channel::MeasurementLog;
use gainscout::experiment::{build_environment, run_environments, ExperimentSpec, ModelSource};
use gainscout::grid::{generate_world, Cell, GenParams, GridSpec, SwarmState, UrbanWorld};
use gainscout::kriging::{posterior_variance_field_with, KrigingModel};
use gainscout::mission::MissionConfig;
use gainscout::par::Exec;
use gainscout::planners::{plan_entropy_vi, EntropyParams, PlanRequest};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn model() -> KrigingModel {
    KrigingModel::new(-40.0, 13.0, 25.0, 50.0, 2.0).unwrap()
}

fn variance_field(c: &mut Criterion) {
    let world = generate_world(1, &GenParams::default()).unwrap();
    let free = world.free_cells();
    let mut log = MeasurementLog::new();
    for (k, cell) in free.iter().step_by(free.len() / 300).enumerate() {
        log.push(*cell, k, -80.0);
    }
    let m = model();
    let mut g = c.benchmark_group("posterior_variance_field");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, log.len()), |b| {
            b.iter(|| posterior_variance_field_with(exec, &m, black_box(&log), &world).unwrap())
        });
    }
    g.finish();
}

fn entropy_dp(c: &mut Criterion) {
    let world = UrbanWorld::open(GridSpec::square(12, 4.0, 40.0, 10.0).unwrap()).unwrap();
    let m = model();
    let req = PlanRequest { world: &world, model: &m, start: SwarmState::new(vec![Cell::new(5, 5), Cell::new(6, 5)]), horizon: 10 };
    let mut g = c.benchmark_group("entropy_vi");
    g.sample_size(10);
    for (name, exec) in MODES {
        let params = EntropyParams { exec, ..Default::default() };
        g.bench_function(BenchmarkId::new(name, "n2_t10"), |b| b.iter(|| plan_entropy_vi(black_box(&req), &params).unwrap()));
    }
    g.finish();
}

fn experiment_batch(c: &mut Criterion) {
    let spec = ExperimentSpec {
        env: GenParams { side_m: 120.0, blocks_per_dim: 3, ..Default::default() },
        crop_side_m: None,
        model: ModelSource::Truth,
        horizons: vec![20],
        checkpoints: vec![20],
        seeds: 4,
        mission: MissionConfig { warmup_steps: 5, replan_period: 5, entropy_window: Some(3), ..Default::default() },
        ..Default::default()
    };
    let envs = vec![build_environment(&spec, 0).unwrap()];
    let mut g = c.benchmark_group("experiment_batch");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::new(name, "12_runs"), |b| b.iter(|| run_environments(&spec, &envs, None, exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, variance_field, entropy_dp, experiment_batch);
criterion_main!(benches);
