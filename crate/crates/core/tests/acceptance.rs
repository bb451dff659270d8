//! End-to-end acceptance suite. Runs every criterion in order, prints one
//! PASS/FAIL line each and exits nonzero if any failed.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use gainscout::channel::{sample_gaussian_field, synthesize_field, TruthParams};
use gainscout::experiment::{build_environment, run_experiment, truth_model, ExperimentSpec, ModelSource, RunRecord};
use gainscout::grid::{is_legal, transition, Cell, GridSpec, JointAction, Point3, SwarmState, UrbanWorld};
use gainscout::io::{digest, save_bundle};
use gainscout::kriging::{fit_kernel, fit_path_loss, Conditioned, KernelSearch, KrigingModel};
use gainscout::mission::{run_mission_with, MissionConfig, StartPolicy};
use gainscout::par::Exec;
use gainscout::planners::{plan_entropy_vi, EntropyParams, PlanRequest, PlannerKind, RewardCache};
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn grid(nx: usize, ny: usize) -> GridSpec {
    GridSpec::new(nx as f64 * 4.0, ny as f64 * 4.0, 40.0, 4.0, 10.0, 10.0).unwrap()
}

fn kriging_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_mean = 0.0f64;
    let mut worst_cov = 0.0f64;
    let t0 = Instant::now();
    for _ in 0..200 {
        let total = rng.random_range(2..=8);
        let n_obs = rng.random_range(1..total);
        let side = 12;
        let cells: Vec<usize> = sample(&mut rng, side * side, total).into_vec();
        let pts: Vec<Point3> = cells
            .iter()
            .map(|&i| Point3::new((i % side) as f64 * 4.0 + 2.0, (i / side) as f64 * 4.0 + 2.0, 10.0))
            .collect();
        let model = KrigingModel::new(
            rng.random_range(-60.0..-20.0),
            rng.random_range(5.0..30.0),
            rng.random_range(1.0..50.0),
            rng.random_range(5.0..150.0),
            2.0,
        )
        .unwrap();
        let tx = Point3::new(rng.random_range(-50.0..100.0), rng.random_range(-50.0..100.0), 2.0);
        let (obs, qry) = pts.split_at(n_obs);
        let gains: Vec<f64> = obs.iter().map(|p| model.mean(p, &tx) + rng.random_range(-10.0..10.0)).collect();
        let cond = Conditioned::new(&model, tx, obs.to_vec(), &gains).unwrap();
        let post = cond.posterior(Exec::Sequential, qry, true);
        let cov = post.covariance.unwrap();

        // Direct conditioning of the joint Gaussian through a general inverse.
        let k = |a: &[Point3], b: &[Point3]| DMatrix::from_fn(a.len(), b.len(), |i, j| model.cov(&a[i], &b[j]));
        let mut s_oo = k(obs, obs);
        for i in 0..n_obs {
            s_oo[(i, i)] += cond.jitter();
        }
        let inv = s_oo.clone().try_inverse().unwrap();
        let s_qo = k(qry, obs);
        let resid = DVector::from_iterator(n_obs, obs.iter().zip(&gains).map(|(p, g)| g - model.mean(p, &tx)));
        let mean = DVector::from_iterator(qry.len(), qry.iter().map(|q| model.mean(q, &tx))) + &s_qo * &inv * resid;
        let direct = k(qry, qry) - &s_qo * &inv * s_qo.transpose();

        for i in 0..qry.len() {
            worst_mean = worst_mean.max((post.mean[i] - mean[i]).abs() / mean[i].abs().max(1.0));
            worst_mean = worst_mean.max((post.variance[i] - direct[(i, i)]).abs() / direct[(i, i)]);
            for j in 0..qry.len() {
                let scale = (direct[(i, i)] * direct[(j, j)]).sqrt();
                worst_cov = worst_cov.max((cov[(i, j)] - direct[(i, j)]).abs() / scale);
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        worst_mean < 1e-8 && worst_cov < 1e-8 && secs < 5.0,
        format!("200 instances, max rel err mean/var {worst_mean:.2e}, cov {worst_cov:.2e}, {secs:.2}s"),
    )
}

/// Best total over every legal joint-action sequence, summed in step order.
fn enumerate(
    world: &UrbanWorld,
    model: &KrigingModel,
    state: &SwarmState,
    left: usize,
    acc: f64,
    cache: &mut RewardCache,
) -> f64 {
    if left == 0 {
        return acc;
    }
    let n = state.n_uavs();
    let mut best = f64::NEG_INFINITY;
    for a in 0..JointAction::cardinality(n) {
        let action = JointAction::from_index(a, n);
        if !is_legal(world, state, &action) {
            continue;
        }
        let r = cache.reward(model, world.grid.spacing_m, &state.positions, &action.0, &[]).unwrap();
        best = best.max(enumerate(world, model, &transition(state, &action), left - 1, acc + r, cache));
    }
    best
}

fn sequence_value(world: &UrbanWorld, model: &KrigingModel, start: &SwarmState, actions: &[JointAction]) -> Option<f64> {
    let mut cache = RewardCache::new();
    let mut state = start.clone();
    let mut acc = 0.0;
    for a in actions {
        if !is_legal(world, &state, a) {
            return None;
        }
        acc += cache.reward(model, world.grid.spacing_m, &state.positions, &a.0, &[]).unwrap();
        state = transition(&state, a);
    }
    Some(acc)
}

fn vi_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t0 = Instant::now();
    let mut bad = Vec::new();
    for inst in 0..50 {
        let (nx, ny) = (rng.random_range(2..=6), rng.random_range(2..=6));
        let world = UrbanWorld::open(grid(nx, ny)).unwrap();
        let n = rng.random_range(1..=2);
        let horizon = rng.random_range(1..=4);
        let start = SwarmState::new(
            (0..n)
                .map(|_| Cell::new(rng.random_range(0..nx as i32), rng.random_range(0..ny as i32)))
                .collect(),
        );
        let model = KrigingModel::new(-40.0, 13.0, rng.random_range(1.0..50.0), rng.random_range(4.0..120.0), 2.0).unwrap();
        let req = PlanRequest { world: &world, model: &model, start: start.clone(), horizon };
        let params = EntropyParams { exec: Exec::Sequential, ..Default::default() };
        let plan = plan_entropy_vi(&req, &params).unwrap();
        let again = plan_entropy_vi(&req, &EntropyParams { exec: Exec::Parallel, ..Default::default() }).unwrap();
        let best = enumerate(&world, &model, &start, horizon, 0.0, &mut RewardCache::new());
        let own = sequence_value(&world, &model, &start, &plan.actions);
        let exact = plan.objective_value.to_bits() == best.to_bits() && own.map(f64::to_bits) == Some(best.to_bits());
        if !exact || plan != again || plan.actions.len() != horizon {
            bad.push(format!("#{inst} dp {} brute {best}", plan.objective_value));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        bad.is_empty() && secs < 60.0,
        format!("50 instances, {} mismatches {:?}, {secs:.2}s", bad.len(), bad.first()),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn hyperparameter_recovery() -> Outcome {
    let t0 = Instant::now();
    let (phi0, delta0) = (25.0, 50.0);
    let side = 96;
    let mut phi_err = Vec::new();
    let mut delta_err = Vec::new();
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let pts: Vec<Point3> = sample(&mut rng, side * side, 400)
            .into_iter()
            .map(|i| Point3::new((i % side) as f64 * 4.0 + 2.0, (i / side) as f64 * 4.0 + 2.0, 10.0))
            .collect();
        let (values, _) = sample_gaussian_field(&pts, seed, phi0, delta0, usize::MAX).unwrap();
        let fit = fit_kernel(&pts, &values, &KernelSearch::default()).unwrap();
        phi_err.push((fit.phi / phi0 - 1.0).abs());
        delta_err.push((fit.delta / delta0 - 1.0).abs());
    }
    let (mp, md) = (median(phi_err), median(delta_err));

    let (alpha0, beta0) = (-40.0, 13.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pl: Vec<(f64, f64)> = (0..400)
        .map(|_| {
            let d: f64 = rng.random_range(2.0..600.0);
            (d, alpha0 - beta0 * d.ln())
        })
        .collect();
    let (a, b) = fit_path_loss(&pl).unwrap();
    let (ea, eb) = ((a / alpha0 - 1.0).abs(), (b / beta0 - 1.0).abs());
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        mp < 0.2 && md < 0.2 && ea < 0.01 && eb < 0.01 && secs < 120.0,
        format!("median rel err phi {mp:.3}, delta {md:.3}; path loss alpha {ea:.1e}, beta {eb:.1e}; {secs:.1}s"),
    )
}

fn calibration() -> Outcome {
    let t0 = Instant::now();
    // Truth drawn from exactly the model the predictor assumes.
    let spec = ExperimentSpec {
        master_seed: 4,
        worlds: 10,
        seeds: 5,
        truth: TruthParams { penalty_db: 0.0, ..Default::default() },
        model: ModelSource::Truth,
        planners: vec![PlannerKind::RandomWaypoint],
        checkpoints: vec![200],
        ..Default::default()
    };
    let out = run_experiment(&spec, None, Exec::Parallel).unwrap();
    let gofs: Vec<f64> = out.records.iter().filter_map(|r| r.gof).collect();
    let mean = gofs.iter().sum::<f64>() / gofs.len() as f64;
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        gofs.len() == 50 && out.failures() == 0 && mean.abs() < 0.3 && secs < 300.0,
        format!("{} missions, mean goodness of fit {mean:.3}, {secs:.1}s", gofs.len()),
    )
}

fn paired_p(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let m = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = m / (sd / n.sqrt());
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).unwrap();
    (t, 2.0 * dist.cdf(-t.abs()))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn planner_sweep() -> (Vec<RunRecord>, Duration) {
    let spec = ExperimentSpec {
        worlds: 30,
        seeds: 1,
        starts: vec![StartPolicy::default(), StartPolicy::WholeAoi],
        ..Default::default()
    };
    let t0 = Instant::now();
    let out = run_experiment(&spec, None, Exec::Parallel).unwrap();
    (out.records, t0.elapsed())
}

type Groups = BTreeMap<(bool, PlannerKind), Vec<f64>>;

fn group_rmse(records: &[RunRecord]) -> Groups {
    let mut g: Groups = BTreeMap::new();
    for r in records {
        let whole = r.key.start == StartPolicy::WholeAoi;
        g.entry((whole, r.key.planner)).or_default().push(r.rmse.unwrap_or(f64::NAN));
    }
    g
}

fn planner_ordering(records: &[RunRecord], elapsed: Duration) -> Outcome {
    let g = group_rmse(records);
    let e = &g[&(false, PlannerKind::EntropyVi)];
    let gr = &g[&(false, PlannerKind::Greedy)];
    let rw = &g[&(false, PlannerKind::RandomWaypoint)];
    let (t1, p1) = paired_p(e, gr);
    let (t2, p2) = paired_p(gr, rw);
    let failures = records.iter().filter(|r| r.error.is_some()).count();
    let pass = failures == 0
        && mean(e) < mean(gr)
        && mean(gr) < mean(rw)
        && p1 < 0.05
        && p2 < 0.05
        && elapsed.as_secs_f64() < 1800.0;
    outcome(
        pass,
        format!(
            "RMSE entropy {:.3} < greedy {:.3} (t {t1:.2}, p {p1:.4}) < random {:.3} (t {t2:.2}, p {p2:.2e}); {failures} failed runs; sweep {:.0}s",
            mean(e),
            mean(gr),
            mean(rw),
            elapsed.as_secs_f64()
        ),
    )
}

fn start_dispersion(records: &[RunRecord]) -> Outcome {
    let g = group_rmse(records);
    let mut lines = Vec::new();
    let mut pass = true;
    for p in PlannerKind::ALL {
        let (rect, whole) = (mean(&g[&(false, p)]), mean(&g[&(true, p)]));
        pass &= whole < rect;
        lines.push(format!("{p} {rect:.3}->{whole:.3}"));
    }
    let gap = |whole: bool| mean(&g[&(whole, PlannerKind::Greedy)]) - mean(&g[&(whole, PlannerKind::EntropyVi)]);
    let (gr, gw) = (gap(false), gap(true));
    pass &= gw < gr;
    outcome(pass, format!("{}; greedy-entropy gap {gr:.3}->{gw:.3}", lines.join(", ")))
}

fn non_increasing(v: impl Iterator<Item = f64>) -> bool {
    let v: Vec<f64> = v.collect();
    v.windows(2).all(|w| w[1] <= w[0])
}

fn monotone_learning(records: &[RunRecord]) -> Outcome {
    let mut pass = true;
    let mut lines = Vec::new();
    for p in PlannerKind::ALL {
        let runs: Vec<&RunRecord> = records.iter().filter(|r| r.key.planner == p).collect();
        let rmse_ok = runs.iter().filter(|r| non_increasing(r.curve.iter().map(|c| c.1))).count();
        let var_ok = runs.iter().filter(|r| non_increasing(r.curve.iter().map(|c| c.2))).count();
        let frac = rmse_ok as f64 / runs.len() as f64;
        pass &= frac >= 0.9 && var_ok == runs.len() && runs.iter().all(|r| r.curve.len() > 1);
        lines.push(format!("{p} rmse {rmse_ok}/{n} variance {var_ok}/{n}", n = runs.len()));
    }
    outcome(pass, lines.join(", "))
}

fn complexity() -> Outcome {
    let model = KrigingModel::new(-40.0, 13.0, 25.0, 50.0, 2.0).unwrap();
    let sides = [5usize, 8, 10];
    let horizon = 20;
    let times: Vec<f64> = sides
        .iter()
        .map(|&k| {
            let world = UrbanWorld::open(grid(k, k)).unwrap();
            let start = SwarmState::new(vec![Cell::new(0, 0), Cell::new(1, 0)]);
            let req = PlanRequest { world: &world, model: &model, start, horizon };
            let params = EntropyParams { exec: Exec::Sequential, ..Default::default() };
            let mut best = f64::INFINITY;
            for _ in 0..3 {
                let t0 = Instant::now();
                plan_entropy_vi(&req, &params).unwrap();
                best = best.min(t0.elapsed().as_secs_f64());
            }
            best
        })
        .collect();
    let s0 = (sides[0] * sides[0]) as f64;
    let mut pass = true;
    let mut lines = Vec::new();
    for (k, t) in sides.iter().zip(&times) {
        let s = (k * k) as f64;
        let ratio = (t / times[0]) / (s / s0).powi(2);
        pass &= (1.0 / 3.0..=3.0).contains(&ratio);
        lines.push(format!("S={s} {:.1}ms (x{ratio:.2} of S^2)", t * 1e3));
    }
    outcome(pass, lines.join(", "))
}

fn bundle_hash(result: &gainscout::mission::MissionResult, dir: &std::path::Path) -> String {
    let b = save_bundle(dir, result).unwrap();
    let mut h = Sha256::new();
    for p in [&b.plan, &b.log, &b.posterior, &b.snapshots] {
        h.update(std::fs::read(p).unwrap());
    }
    hex::encode(h.finalize())
}

fn determinism() -> Outcome {
    let spec = ExperimentSpec { master_seed: 9, ..Default::default() };
    let env = build_environment(&spec, 0).unwrap();
    let (field, model, _) = &env.cases[0];
    let small = synthesize_field(&env.world, field.tx, 5, TruthParams::default()).unwrap();
    let fitted = truth_model(&TruthParams::default(), 2.0).unwrap();
    let base = MissionConfig { steps: 40, checkpoints: vec![0, 20, 40], warmup_steps: 10, replan_period: 10, ..Default::default() };
    let entropy = MissionConfig { entropy_window: Some(3), entropy_stride: 4, entropy_commit: Some(1), entropy_history: true, ..base.clone() };
    let configs = vec![
        MissionConfig { planner: PlannerKind::EntropyVi, n_uavs: 1, entropy_window: Some(4), ..base.clone() },
        MissionConfig { planner: PlannerKind::EntropyVi, n_uavs: 2, ..entropy.clone() },
        MissionConfig { planner: PlannerKind::EntropyVi, n_uavs: 3, start: StartPolicy::WholeAoi, ..entropy.clone() },
        MissionConfig { planner: PlannerKind::EntropyVi, n_uavs: 2, entropy_window: Some(2), ..base.clone() },
        MissionConfig { planner: PlannerKind::Greedy, n_uavs: 1, ..base.clone() },
        MissionConfig { planner: PlannerKind::Greedy, n_uavs: 3, start_seed: 7, ..base.clone() },
        MissionConfig { planner: PlannerKind::Greedy, n_uavs: 2, start: StartPolicy::WholeAoi, ..base.clone() },
        MissionConfig { planner: PlannerKind::RandomWaypoint, n_uavs: 1, planner_seed: 3, ..base.clone() },
        MissionConfig { planner: PlannerKind::RandomWaypoint, n_uavs: 3, repeat_prob: 0.5, ..base.clone() },
        MissionConfig { planner: PlannerKind::RandomWaypoint, n_uavs: 2, steps: 60, start: StartPolicy::WholeAoi, ..base.clone() },
    ];
    let root = std::env::temp_dir().join(format!("gainscout-acceptance-{}", std::process::id()));
    let mut mismatches = Vec::new();
    let mut distinct = std::collections::HashSet::new();
    for (i, cfg) in configs.iter().enumerate() {
        let (f, m) = if i % 2 == 0 { (field, model) } else { (&small, &fitted) };
        let a = run_mission_with(Exec::Parallel, &env.world, f, m, cfg).unwrap();
        let b = run_mission_with(Exec::Sequential, &env.world, f, m, cfg).unwrap();
        let ha = bundle_hash(&a, &root.join(format!("{i}a")));
        let hb = bundle_hash(&b, &root.join(format!("{i}b")));
        if digest(&a) != digest(&b) || ha != hb || a.aborted.is_some() {
            mismatches.push(i);
        }
        distinct.insert(ha);
    }
    let _ = std::fs::remove_dir_all(&root);
    outcome(
        mismatches.is_empty() && distinct.len() == configs.len(),
        format!("{} configurations, {} distinct artifact hashes, mismatches {mismatches:?}", configs.len(), distinct.len()),
    )
}

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let want = |k: usize| filter.is_empty() || filter.iter().any(|f| f == &k.to_string());
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut run = |k: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        if want(k) {
            let o = f();
            println!("criterion {k} {name}: {} ({})", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            results.push((k, name, o));
        }
    };
    run(1, "kriging oracle equivalence", &mut kriging_oracle);
    run(2, "value iteration optimality", &mut vi_optimality);
    run(3, "hyperparameter recovery", &mut hyperparameter_recovery);
    run(4, "calibration", &mut calibration);
    if want(5) || want(6) || want(7) {
        let (records, elapsed) = planner_sweep();
        run(5, "planner ordering", &mut || planner_ordering(&records, elapsed));
        run(6, "start dispersion", &mut || start_dispersion(&records));
        run(7, "monotone learning", &mut || monotone_learning(&records));
    }
    run(8, "complexity", &mut complexity);
    run(9, "determinism", &mut determinism);
    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!("acceptance: {} passed, {} failed", results.len() - failed.len(), failed.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
