use std::collections::HashSet;

use super::random_waypoint::RandomWalker;
use super::{MissionPlan, PlanRequest, PlannerKind};
use crate::error::{Error, Result};
use crate::grid::{Cell, JointAction, Move};

/// Best achievable (monotone steps, collected variance) from a cell with a
/// given number of steps left.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Value {
    steps: usize,
    gain: f64,
}

impl Value {
    const ZERO: Value = Value { steps: 0, gain: 0.0 };

    fn beats(self, other: Value) -> bool {
        self.steps > other.steps || (self.steps == other.steps && self.gain > other.gain)
    }
}

/// Per-UAV max-variance paths over a frozen variance field.
///
/// Each UAV independently maximizes the summed variance of the cells it
/// enters, subject to its L1 distance from its `origin` cell growing by one
/// every step. Among optimal paths the lexicographically smallest action
/// sequence wins. A UAV with no monotone move left takes a random legal
/// move (recorded in `events`) and continues from there.
pub fn plan_greedy_variance(
    req: &PlanRequest<'_>,
    variance_field: &[f64],
    origin: &crate::grid::SwarmState,
    fallback_seed: u64,
) -> Result<MissionPlan> {
    let world = req.world;
    let grid = &world.grid;
    if variance_field.len() != grid.n_cells() {
        return Err(Error::InvalidParameter(format!(
            "variance field has {} entries, grid has {} cells",
            variance_field.len(),
            grid.n_cells()
        )));
    }
    if origin.n_uavs() != req.start.n_uavs() {
        return Err(Error::InvalidParameter("origin and start differ in UAV count".into()));
    }
    if !req.start.is_legal(world) {
        return Err(Error::InvalidParameter("start state is not legal".into()));
    }
    let n = req.start.n_uavs();
    let t_max = req.horizon;
    let n_cells = grid.n_cells();

    let mut walker = RandomWalker::new(n, 0.0, fallback_seed)?;
    let mut per_uav: Vec<Vec<Move>> = Vec::with_capacity(n);
    let mut events = Vec::new();
    for u in 0..n {
        let o = origin.positions[u];
        // values[k][i]: best value from cell i with k steps left.
        let mut values = vec![vec![Value::ZERO; n_cells]; t_max + 1];
        for k in 1..=t_max {
            let (done, todo) = values.split_at_mut(k);
            let below = &done[k - 1];
            for (i, slot) in todo[0].iter_mut().enumerate() {
                let c = grid.cell(i);
                if !world.is_free(c) {
                    continue;
                }
                *slot = best_move(world, variance_field, below, o, c).map_or(Value::ZERO, |(_, v)| v);
            }
        }
        let mut c = req.start.positions[u];
        let mut moves = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let m = match best_move(world, variance_field, &values[t_max - t - 1], o, c) {
                Some((m, _)) => m,
                None => {
                    let m = walker.uniform_move(world, c);
                    events.push(format!("step {t}: uav {u} cornered at {c}, fallback {m:?}"));
                    m
                }
            };
            c = c.step(m);
            moves.push(m);
        }
        per_uav.push(moves);
    }

    let mut plan = MissionPlan::new(PlannerKind::Greedy, req.start.clone());
    plan.events = events;
    let mut seen: HashSet<Cell> = req.start.positions.iter().copied().collect();
    for t in 0..t_max {
        let action = JointAction(per_uav.iter().map(|m| m[t]).collect());
        let mut r = 0.0;
        for (c, m) in plan.last().positions.iter().zip(&action.0) {
            let nc = c.step(*m);
            if seen.insert(nc) {
                r += variance_field[grid.index(nc).expect("legal cell")];
            }
        }
        plan.objective_value += r;
        plan.push(action, r);
    }
    Ok(plan)
}

/// Best monotone legal move from `c`; smallest move index on ties.
fn best_move(
    world: &crate::grid::UrbanWorld,
    field: &[f64],
    below: &[Value],
    origin: Cell,
    c: Cell,
) -> Option<(Move, Value)> {
    let d = c.l1(&origin);
    let mut best: Option<(Move, Value)> = None;
    for m in Move::ALL {
        let nc = c.step(m);
        if nc.l1(&origin) <= d || !world.is_free(nc) {
            continue;
        }
        let i = world.grid.index(nc).expect("free cell in grid");
        let v = Value { steps: below[i].steps + 1, gain: field[i] + below[i].gain };
        if best.is_none_or(|(_, b)| v.beats(b)) {
            best = Some((m, v));
        }
    }
    best
}
