//! Measurement-path planners.
//!
//! * [`plan_entropy_vi`]: joint forward value iteration maximizing the sum
//!   of step-wise conditional entropies of the newly measured shadowing.
//! * [`plan_greedy_variance`]: independent per-UAV value iteration through
//!   cells of maximum posterior variance, moving strictly away from the
//!   replanning origin.
//! * [`plan_random_waypoint`]: persistent random motion.

mod entropy;
mod greedy;
mod random_waypoint;
mod value_iteration;

use serde::{Deserialize, Serialize};

use crate::grid::{transition, JointAction, SwarmState, UrbanWorld};

pub use entropy::{gaussian_entropy, step_reward_entropy, RewardCache, RewardKey};
pub use greedy::plan_greedy_variance;
pub use random_waypoint::{plan_random_waypoint, RandomWalker, DEFAULT_REPEAT_PROB};
pub use value_iteration::{plan_entropy_vi, EntropyParams, DEFAULT_STATE_BUDGET, MAX_ENTROPY_UAVS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    EntropyVi,
    Greedy,
    RandomWaypoint,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 3] = [PlannerKind::EntropyVi, PlannerKind::Greedy, PlannerKind::RandomWaypoint];

    pub fn name(self) -> &'static str {
        match self {
            PlannerKind::EntropyVi => "entropy_vi",
            PlannerKind::Greedy => "greedy",
            PlannerKind::RandomWaypoint => "random_waypoint",
        }
    }
}

impl std::fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PlannerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PlannerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown planner '{s}' (expected entropy_vi, greedy or random_waypoint)"))
    }
}

/// Inputs shared by the model-based planners.
#[derive(Debug, Clone)]
pub struct PlanRequest<'a> {
    pub world: &'a UrbanWorld,
    pub model: &'a crate::kriging::KrigingModel,
    pub start: SwarmState,
    pub horizon: usize,
}

/// Per-step joint actions with the resulting positions and rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionPlan {
    pub planner: PlannerKind,
    pub actions: Vec<JointAction>,
    /// `horizon + 1` states, starting with the start state.
    pub positions: Vec<SwarmState>,
    pub step_rewards: Vec<f64>,
    /// Nats for the entropy planner, dB^2 for greedy, zero for random.
    pub objective_value: f64,
    /// Fallbacks and other notable events.
    #[serde(default)]
    pub events: Vec<String>,
}

impl MissionPlan {
    pub fn new(planner: PlannerKind, start: SwarmState) -> Self {
        MissionPlan {
            planner,
            actions: Vec::new(),
            positions: vec![start],
            step_rewards: Vec::new(),
            objective_value: 0.0,
            events: Vec::new(),
        }
    }

    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn last(&self) -> &SwarmState {
        self.positions.last().expect("plan holds the start state")
    }

    pub(crate) fn push(&mut self, action: JointAction, reward: f64) {
        let next = transition(self.last(), &action);
        self.actions.push(action);
        self.positions.push(next);
        self.step_rewards.push(reward);
    }

    /// Every step is a legal transition from the previous state.
    pub fn is_consistent(&self, world: &UrbanWorld) -> bool {
        self.positions.len() == self.actions.len() + 1
            && self.actions.iter().zip(self.positions.windows(2)).all(|(a, w)| {
                transition(&w[0], a) == w[1] && w[1].is_legal(world)
            })
    }
}
