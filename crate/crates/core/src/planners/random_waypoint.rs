use rand::Rng;

use super::{MissionPlan, PlannerKind};
use crate::error::{Error, Result};
use crate::grid::{legal_moves, JointAction, Move, SwarmState, UrbanWorld};
use crate::rng::{seeded, StreamRng};

pub const DEFAULT_REPEAT_PROB: f64 = 0.8;

/// Persistent random motion: each UAV repeats its previous move with
/// probability `p`, otherwise draws uniformly among its legal moves.
#[derive(Debug, Clone)]
pub struct RandomWalker {
    p: f64,
    prev: Vec<Option<Move>>,
    rng: StreamRng,
}

impl RandomWalker {
    pub fn new(n_uavs: usize, p: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!("repeat probability {p} outside [0, 1]")));
        }
        Ok(RandomWalker { p, prev: vec![None; n_uavs], rng: seeded(seed) })
    }

    /// Next joint action from `state`. A UAV with no legal move holds; the
    /// returned strings describe such events.
    pub fn step(&mut self, world: &UrbanWorld, state: &SwarmState) -> (JointAction, Vec<String>) {
        assert_eq!(state.n_uavs(), self.prev.len());
        let mut moves = Vec::with_capacity(self.prev.len());
        let mut events = Vec::new();
        for (u, c) in state.positions.iter().enumerate() {
            let repeat = self.rng.random::<f64>() < self.p;
            let keep = self.prev[u].filter(|m| repeat && *m != Move::Hold && world.is_free(c.step(*m)));
            let m = match keep {
                Some(m) => m,
                None => {
                    let legal: Vec<Move> = legal_moves(world, *c).collect();
                    if legal.is_empty() {
                        events.push(format!("step {}: uav {u} boxed in at {c}, holding", state.step));
                        Move::Hold
                    } else {
                        legal[self.rng.random_range(0..legal.len())]
                    }
                }
            };
            self.prev[u] = Some(m);
            moves.push(m);
        }
        (JointAction(moves), events)
    }

    /// Uniform legal move for one UAV, or `Hold` when boxed in.
    pub fn uniform_move(&mut self, world: &UrbanWorld, c: crate::grid::Cell) -> Move {
        let legal: Vec<Move> = legal_moves(world, c).collect();
        if legal.is_empty() {
            Move::Hold
        } else {
            legal[self.rng.random_range(0..legal.len())]
        }
    }
}

/// Random-waypoint plan of `steps` joint moves from `start`.
pub fn plan_random_waypoint(world: &UrbanWorld, start: &SwarmState, steps: usize, p: f64, seed: u64) -> Result<MissionPlan> {
    let mut walker = RandomWalker::new(start.n_uavs(), p, seed)?;
    let mut plan = MissionPlan::new(PlannerKind::RandomWaypoint, start.clone());
    for _ in 0..steps {
        let (a, ev) = walker.step(world, plan.last());
        plan.events.extend(ev);
        plan.push(a, 0.0);
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Cell, GridSpec};

    fn open(n: usize) -> UrbanWorld {
        UrbanWorld::open(GridSpec::square(n, 4.0, 20.0, 10.0).unwrap()).unwrap()
    }

    #[test]
    fn p_one_goes_straight_until_the_wall() {
        let w = open(30);
        let plan = plan_random_waypoint(&w, &SwarmState::new(vec![Cell::new(15, 15)]), 10, 1.0, 3).unwrap();
        let first = plan.actions[0].0[0];
        assert!(plan.actions.iter().all(|a| a.0[0] == first));
        assert!(plan.is_consistent(&w));
    }

    #[test]
    fn inferred_repeat_probability() {
        // In the interior the action repeats with probability p + (1 - p) / 4.
        let w = open(400);
        for (p, tol) in [(0.8, 0.02), (0.0, 0.02)] {
            let plan = plan_random_waypoint(&w, &SwarmState::new(vec![Cell::new(200, 200)]), 10_000, p, 11).unwrap();
            let mut same = 0;
            let mut total = 0;
            for (pair, pos) in plan.actions.windows(2).zip(&plan.positions[1..]) {
                if legal_moves(&w, pos.positions[0]).count() == 4 {
                    total += 1;
                    same += (pair[0] == pair[1]) as usize;
                }
            }
            let f = same as f64 / total as f64;
            let p_hat = (f - 0.25) / 0.75;
            assert!((p_hat - p).abs() < tol, "p = {p}, estimated {p_hat}");
        }
    }

    #[test]
    fn deterministic_legal_and_boxed_in() {
        let w = open(8).with_nofly([Cell::new(3, 3), Cell::new(4, 4)]);
        let s = SwarmState::new(vec![Cell::new(0, 0), Cell::new(7, 7)]);
        let a = plan_random_waypoint(&w, &s, 200, 0.8, 5).unwrap();
        let b = plan_random_waypoint(&w, &s, 200, 0.8, 5).unwrap();
        assert_eq!(a, b);
        assert!(a.is_consistent(&w));
        let boxed = open(3).with_nofly([Cell::new(0, 1), Cell::new(1, 0)]);
        let h = plan_random_waypoint(&boxed, &SwarmState::new(vec![Cell::new(0, 0)]), 2, 0.8, 1).unwrap();
        assert_eq!(h.actions[0].0[0], Move::Hold);
        assert_eq!(h.events.len(), 2);
        assert!(plan_random_waypoint(&w, &s, 1, 1.5, 0).is_err());
    }
}
