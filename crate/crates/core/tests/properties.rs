use gainscout::grid::{Cell, GridSpec, Move, SwarmState, UrbanWorld};
use gainscout::kriging::KrigingModel;
use gainscout::metrics::{binned_rmse, goodness_of_fit, rmse, EvalMask};
use gainscout::par::Exec;
use gainscout::planners::{plan_entropy_vi, plan_greedy_variance, plan_random_waypoint, EntropyParams, PlanRequest};
use proptest::prelude::*;

fn world_with_walls(nx: usize, ny: usize, walls: &[(i32, i32)]) -> UrbanWorld {
    let g = GridSpec::new(nx as f64 * 4.0, ny as f64 * 4.0, 40.0, 4.0, 10.0, 10.0).unwrap();
    UrbanWorld::open(g).unwrap().with_nofly(walls.iter().map(|&(x, y)| Cell::new(x, y)))
}

fn errors_and_truth() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..60).prop_flat_map(|n| {
        (prop::collection::vec(-20.0..20.0f64, n), prop::collection::vec(-200.0..-90.0f64, n))
    })
}

proptest! {
    #[test]
    fn rmse_scales_with_errors((err, truth) in errors_and_truth(), c in -5.0..5.0f64) {
        let mask = EvalMask::all(err.len());
        let mean: Vec<f64> = truth.iter().zip(&err).map(|(t, e)| t + e).collect();
        let scaled: Vec<f64> = truth.iter().zip(&err).map(|(t, e)| t + c * e).collect();
        let base = rmse(&mean, &truth, &mask).unwrap();
        let r = rmse(&scaled, &truth, &mask).unwrap();
        prop_assert!((r - c.abs() * base).abs() <= 1e-9 * (1.0 + base * c.abs()));
    }

    #[test]
    fn rmse_ignores_cell_order((err, truth) in errors_and_truth(), seed in any::<u64>()) {
        let n = err.len();
        let mask = EvalMask::all(n);
        let mean: Vec<f64> = truth.iter().zip(&err).map(|(t, e)| t + e).collect();
        let mut order: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let pm: Vec<f64> = order.iter().map(|&i| mean[i]).collect();
        let pt: Vec<f64> = order.iter().map(|&i| truth[i]).collect();
        let a = rmse(&mean, &truth, &mask).unwrap();
        let b = rmse(&pm, &pt, &mask).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a));
    }

    #[test]
    fn gof_shifts_with_predicted_spread(
        err in prop::collection::vec(-10.0..10.0f64, 1..40),
        c in 0.1..10.0f64,
    ) {
        let var: Vec<f64> = err.iter().enumerate().map(|(i, _)| 1.0 + i as f64).collect();
        prop_assume!(err.iter().any(|e| *e != 0.0));
        let mask = EvalMask::all(err.len());
        let g = goodness_of_fit(&err, &var, &mask).unwrap();
        let wide: Vec<f64> = var.iter().map(|v| v * c * c).collect();
        let gw = goodness_of_fit(&err, &wide, &mask).unwrap();
        prop_assert!((gw - (g - 2.0 * c.ln())).abs() < 1e-9);
    }

    #[test]
    fn bins_decompose_global_rmse((err, truth) in errors_and_truth()) {
        let mask = EvalMask::all(err.len());
        let edges: Vec<f64> = (0..=12).map(|i| -200.0 + 10.0 * i as f64).collect();
        let bins = binned_rmse(&err, &truth, &mask, &edges).unwrap();
        let total: usize = bins.iter().map(|b| b.count).sum();
        prop_assert_eq!(total, err.len());
        let weighted: f64 = bins.iter().filter_map(|b| b.rmse.map(|r| r * r * b.count as f64)).sum::<f64>() / total as f64;
        let zero = vec![0.0; err.len()];
        let global = rmse(&err, &zero, &mask).unwrap();
        prop_assert!((weighted - global * global).abs() <= 1e-9 * (1.0 + global * global));
    }

    #[test]
    fn random_waypoint_paths_are_legal(
        nx in 3usize..12, ny in 3usize..12,
        walls in prop::collection::vec((0i32..12, 0i32..12), 0..10),
        n in 1usize..4, steps in 0usize..40, p in 0.0..1.0f64, seed in any::<u64>(),
    ) {
        let world = world_with_walls(nx, ny, &walls);
        let free = world.free_cells();
        prop_assume!(free.len() >= 2);
        let start = SwarmState::new((0..n).map(|i| free[(seed as usize).wrapping_add(i * 7) % free.len()]).collect());
        let plan = plan_random_waypoint(&world, &start, steps, p, seed).unwrap();
        prop_assert_eq!(plan.steps(), steps);
        let stuck = plan.actions.iter().any(|a| a.0.contains(&Move::Hold));
        prop_assert!(stuck || plan.is_consistent(&world));
    }

    #[test]
    fn greedy_paths_never_revisit(
        nx in 3usize..10, ny in 3usize..10,
        walls in prop::collection::vec((0i32..10, 0i32..10), 0..8),
        n in 1usize..4, horizon in 1usize..12, seed in any::<u64>(),
    ) {
        let world = world_with_walls(nx, ny, &walls);
        let free = world.free_cells();
        prop_assume!(free.len() >= 2);
        let start = SwarmState::new((0..n).map(|i| free[(seed as usize).wrapping_add(i * 5) % free.len()]).collect());
        let model = KrigingModel::new(-40.0, 13.0, 25.0, 50.0, 2.0).unwrap();
        let var: Vec<f64> = (0..world.grid.n_cells()).map(|i| ((i as u64 ^ seed) % 97) as f64).collect();
        let req = PlanRequest { world: &world, model: &model, start: start.clone(), horizon };
        let plan = plan_greedy_variance(&req, &var, &start, seed).unwrap();
        prop_assert_eq!(plan.steps(), horizon);
        if plan.events.is_empty() {
            prop_assert!(plan.is_consistent(&world));
            for u in 0..n {
                let mut seen: Vec<Cell> = plan.positions.iter().map(|s| s.positions[u]).collect();
                seen.sort_by_key(|c| (c.x, c.y));
                seen.dedup();
                prop_assert_eq!(seen.len(), horizon + 1);
            }
        }
    }

    #[test]
    fn entropy_plans_are_legal(
        nx in 2usize..7, ny in 2usize..7,
        walls in prop::collection::vec((0i32..7, 0i32..7), 0..5),
        n in 1usize..3, horizon in 1usize..5, stride in 1usize..3, pick in any::<usize>(),
    ) {
        let world = world_with_walls(nx, ny, &walls);
        let free = world.free_cells();
        prop_assume!(!free.is_empty());
        let start = SwarmState::new((0..n).map(|i| free[pick.wrapping_add(i * 3) % free.len()]).collect());
        let model = KrigingModel::new(-40.0, 13.0, 25.0, 30.0, 2.0).unwrap();
        let req = PlanRequest { world: &world, model: &model, start, horizon };
        let params = EntropyParams { stride, exec: Exec::Sequential, ..Default::default() };
        match plan_entropy_vi(&req, &params) {
            Ok(plan) => {
                prop_assert_eq!(plan.steps(), horizon * stride);
                prop_assert!(plan.is_consistent(&world));
            }
            Err(gainscout::Error::Blocked { .. }) => {}
            Err(e) => prop_assert!(false, "{e}"),
        }
    }
}
