//! Closed measurement loop: plan, move, measure, refit, replan.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{GainField, MeasurementLog};
use crate::error::{Error, Result};
use crate::grid::{legal_moves, transition, Cell, JointAction, SwarmState, UrbanWorld};
use crate::kriging::{posterior_variance_field_with, Conditioned, KrigingModel};
use crate::metrics::{binned_rmse, default_bin_edges, goodness_of_fit, rmse, BinStat, EvalMask};
use crate::par::Exec;
use crate::planners::{
    plan_entropy_vi, plan_greedy_variance, EntropyParams, MissionPlan, PlanRequest, PlannerKind, RandomWalker,
    DEFAULT_REPEAT_PROB, DEFAULT_STATE_BUDGET,
};
use crate::rng::{derive_seed, substream, PLANNER, START};

pub const DEFAULT_WARMUP_STEPS: usize = 20;
pub const DEFAULT_REPLAN_PERIOD: usize = 40;
pub const DEFAULT_START_SIDE_M: f64 = 40.0;
const MAX_START_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StartPolicy {
    /// All UAVs start inside a randomly placed square of this side.
    Rectangle { side_m: f64 },
    /// UAVs start anywhere in the area.
    WholeAoi,
}

impl Default for StartPolicy {
    fn default() -> Self {
        StartPolicy::Rectangle { side_m: DEFAULT_START_SIDE_M }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MissionConfig {
    pub planner: PlannerKind,
    pub n_uavs: usize,
    /// Total steps `T`.
    pub steps: usize,
    /// Random-waypoint steps before the first greedy plan.
    pub warmup_steps: usize,
    /// Greedy replanning period.
    pub replan_period: usize,
    pub start: StartPolicy,
    pub repeat_prob: f64,
    pub start_seed: u64,
    pub planner_seed: u64,
    /// Steps after which the posterior is scored, sorted.
    pub checkpoints: Vec<usize>,
    /// Entropy planner: `None` plans the whole horizon at once, `Some(h)`
    /// replans every `h` steps over an `h`-step horizon.
    pub entropy_window: Option<usize>,
    /// Entropy planner: condition each window's rewards on all earlier
    /// measurements instead of flagging revisits.
    pub entropy_history: bool,
    /// Entropy planner: grid steps per planned move. A window then spans
    /// `entropy_window * entropy_stride` steps.
    pub entropy_stride: usize,
    /// Entropy planner: planned moves executed before replanning; `None`
    /// executes the whole window.
    pub entropy_commit: Option<usize>,
    pub state_budget: usize,
}

impl Default for MissionConfig {
    fn default() -> Self {
        MissionConfig {
            planner: PlannerKind::EntropyVi,
            n_uavs: 1,
            steps: 200,
            warmup_steps: DEFAULT_WARMUP_STEPS,
            replan_period: DEFAULT_REPLAN_PERIOD,
            start: StartPolicy::default(),
            repeat_prob: DEFAULT_REPEAT_PROB,
            start_seed: 0,
            planner_seed: 0,
            checkpoints: Vec::new(),
            entropy_window: None,
            entropy_history: false,
            entropy_stride: 1,
            entropy_commit: None,
            state_budget: DEFAULT_STATE_BUDGET,
        }
    }
}

impl MissionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.n_uavs == 0 {
            return bad("at least one UAV");
        }
        if self.planner == PlannerKind::Greedy && self.steps > 0 && self.warmup_steps >= self.steps {
            return bad("warmup steps must be below the horizon");
        }
        if self.replan_period == 0 {
            return bad("replanning period must be positive");
        }
        if self.entropy_window == Some(0) {
            return bad("entropy window must be positive");
        }
        if self.entropy_commit == Some(0) {
            return bad("entropy commit must be positive");
        }
        if self.entropy_stride == 0 {
            return bad("entropy stride must be positive");
        }
        if !(0.0..=1.0).contains(&self.repeat_prob) {
            return bad("repeat probability outside [0, 1]");
        }
        if self.checkpoints.windows(2).any(|w| w[0] >= w[1]) {
            return bad("checkpoints must be strictly increasing");
        }
        if let StartPolicy::Rectangle { side_m } = self.start {
            if !(side_m > 0.0) {
                return bad("start rectangle side must be positive");
            }
        }
        Ok(())
    }
}

/// Prediction quality after a given number of steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub measurements: usize,
    pub rmse: f64,
    pub gof: Option<f64>,
    /// Posterior variance averaged over every outdoor cell.
    pub mean_variance: f64,
    pub bins: Vec<BinStat>,
}

/// Posterior over the outdoor prediction cells, in `cells` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPosterior {
    pub cells: Vec<Cell>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionResult {
    pub config: MissionConfig,
    /// Executed trajectory; `positions[t]` is the swarm after `t` steps.
    pub trajectory: MissionPlan,
    pub log: MeasurementLog,
    pub posterior: CellPosterior,
    pub snapshots: Vec<Snapshot>,
    /// Set when the mission stopped early; results cover the steps done.
    pub aborted: Option<String>,
}

impl MissionResult {
    pub fn final_snapshot(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }
}

/// Cells with at least one legal move, so a UAV placed there is not stuck.
fn startable(world: &UrbanWorld, c: Cell) -> bool {
    world.is_free(c) && legal_moves(world, c).next().is_some()
}

/// Random distinct start cells for `n` UAVs.
pub fn sample_start(world: &UrbanWorld, policy: StartPolicy, n: usize, seed: u64) -> Result<SwarmState> {
    let mut rng = substream(seed, START, 0);
    let pick = |cands: &[Cell], rng: &mut crate::rng::StreamRng| -> SwarmState {
        SwarmState::new(sample(rng, cands.len(), n).into_iter().map(|i| cands[i]).collect())
    };
    match policy {
        StartPolicy::WholeAoi => {
            let cands: Vec<Cell> = world.grid.cells().filter(|c| startable(world, *c)).collect();
            if cands.len() < n {
                return Err(Error::NoLegalCells);
            }
            Ok(pick(&cands, &mut rng))
        }
        StartPolicy::Rectangle { side_m } => {
            let (nx, ny) = world.side_cells();
            let k = ((side_m / world.grid.spacing_m).round() as usize).clamp(1, nx.min(ny));
            for _ in 0..MAX_START_ATTEMPTS {
                let x0 = rng.random_range(0..=nx - k) as i32;
                let y0 = rng.random_range(0..=ny - k) as i32;
                let cands: Vec<Cell> = (x0..x0 + k as i32)
                    .flat_map(|x| (y0..y0 + k as i32).map(move |y| Cell::new(x, y)))
                    .filter(|c| startable(world, *c))
                    .collect();
                if cands.len() >= n {
                    return Ok(pick(&cands, &mut rng));
                }
            }
            Err(Error::NoLegalCells)
        }
    }
}

struct Loop<'a> {
    world: &'a UrbanWorld,
    field: &'a GainField,
    model: &'a KrigingModel,
    exec: Exec,
    trajectory: MissionPlan,
    log: MeasurementLog,
    snapshots: Vec<Snapshot>,
    checkpoints: Vec<usize>,
    outdoor: Vec<Cell>,
}

impl Loop<'_> {
    fn step(&self) -> usize {
        self.trajectory.steps()
    }

    fn apply(&mut self, action: JointAction, reward: f64) -> Result<()> {
        let next = transition(self.trajectory.last(), &action);
        let t = self.step() + 1;
        self.log.measure(self.field, &next.positions, t)?;
        self.trajectory.push(action, reward);
        self.checkpoint()
    }

    fn checkpoint(&mut self) -> Result<()> {
        if self.checkpoints.binary_search(&self.step()).is_ok() {
            let snap = self.snapshot()?.1;
            self.snapshots.push(snap);
        }
        Ok(())
    }

    fn snapshot(&self) -> Result<(CellPosterior, Snapshot)> {
        let grid = &self.world.grid;
        let cond = Conditioned::from_log(self.model, self.field.tx, &self.log, grid)?;
        let queries: Vec<_> = self.outdoor.iter().map(|c| grid.pred_point(*c)).collect();
        let post = cond.posterior(self.exec, &queries, false);

        let n = grid.n_cells();
        let mut mean = vec![0.0; n];
        let mut var = vec![0.0; n];
        let mut truth = vec![0.0; n];
        for (k, c) in self.outdoor.iter().enumerate() {
            let i = grid.index(*c).expect("outdoor cell in grid");
            mean[i] = post.mean[k];
            var[i] = post.variance[k];
            truth[i] = self.field.pred_plane[i];
        }
        let mask = EvalMask::new(self.world, self.log.visited());
        let err: Vec<f64> = mean.iter().zip(&truth).map(|(m, t)| m - t).collect();
        let snap = Snapshot {
            step: self.step(),
            measurements: self.log.len(),
            rmse: rmse(&mean, &truth, &mask)?,
            gof: goodness_of_fit(&err, &var, &mask).ok(),
            mean_variance: post.variance.iter().sum::<f64>() / post.variance.len().max(1) as f64,
            bins: binned_rmse(&err, &truth, &mask, &default_bin_edges())?,
        };
        let cp = CellPosterior { cells: self.outdoor.clone(), mean: post.mean, variance: post.variance };
        Ok((cp, snap))
    }
}

/// Run one mission with the default execution mode.
pub fn run_mission(world: &UrbanWorld, field: &GainField, model: &KrigingModel, config: &MissionConfig) -> Result<MissionResult> {
    run_mission_with(Exec::default(), world, field, model, config)
}

pub fn run_mission_with(
    exec: Exec,
    world: &UrbanWorld,
    field: &GainField,
    model: &KrigingModel,
    config: &MissionConfig,
) -> Result<MissionResult> {
    config.validate()?;
    if field.grid != world.grid {
        return Err(Error::InvalidParameter("field and world grids differ".into()));
    }
    let start = sample_start(world, config.start, config.n_uavs, config.start_seed)?;
    run_mission_from(exec, world, field, model, config, start)
}

/// Run a mission from a given start state; `config.start` and
/// `config.start_seed` are ignored.
pub fn run_mission_from(
    exec: Exec,
    world: &UrbanWorld,
    field: &GainField,
    model: &KrigingModel,
    config: &MissionConfig,
    start: SwarmState,
) -> Result<MissionResult> {
    config.validate()?;
    if start.n_uavs() != config.n_uavs || !start.is_legal(world) {
        return Err(Error::InvalidParameter("start state is illegal or has the wrong size".into()));
    }
    let mut lp = Loop {
        world,
        field,
        model,
        exec,
        trajectory: MissionPlan::new(config.planner, start.clone()),
        log: MeasurementLog::new(),
        snapshots: Vec::new(),
        checkpoints: config.checkpoints.clone(),
        outdoor: world.outdoor_cells(),
    };
    lp.log.measure(field, &start.positions, 0)?;
    lp.checkpoint()?;

    let aborted = match drive(&mut lp, config) {
        Ok(()) => None,
        Err(e) => {
            lp.trajectory.events.push(format!("aborted at step {}: {e}", lp.step()));
            Some(e.to_string())
        }
    };
    let (posterior, last) = lp.snapshot()?;
    if lp.snapshots.last().is_none_or(|s| s.step != last.step) {
        lp.snapshots.push(last);
    }
    lp.trajectory.objective_value = lp.trajectory.step_rewards.iter().sum();
    Ok(MissionResult {
        config: config.clone(),
        trajectory: lp.trajectory,
        log: lp.log,
        posterior,
        snapshots: lp.snapshots,
        aborted,
    })
}

fn drive(lp: &mut Loop<'_>, config: &MissionConfig) -> Result<()> {
    let total = config.steps;
    let n = config.n_uavs;
    match config.planner {
        PlannerKind::RandomWaypoint => {
            let mut walker = RandomWalker::new(n, config.repeat_prob, derive_seed(config.planner_seed, PLANNER, 0))?;
            while lp.step() < total {
                let (a, ev) = walker.step(lp.world, lp.trajectory.last());
                lp.trajectory.events.extend(ev);
                lp.apply(a, 0.0)?;
            }
        }
        PlannerKind::Greedy => {
            let mut walker = RandomWalker::new(n, config.repeat_prob, derive_seed(config.planner_seed, PLANNER, 0))?;
            while lp.step() < config.warmup_steps.min(total) {
                let (a, ev) = walker.step(lp.world, lp.trajectory.last());
                lp.trajectory.events.extend(ev);
                lp.apply(a, 0.0)?;
            }
            let mut previous: Option<(f64, usize)> = None;
            let mut window = 0u64;
            while lp.step() < total {
                let var = posterior_variance_field_with(lp.exec, lp.model, &lp.log, lp.world)?;
                let sum: f64 = var.iter().sum();
                if let Some((prev_sum, prev_len)) = previous {
                    if lp.log.len() > prev_len {
                        assert!(sum < prev_sum, "total posterior variance grew after new measurements");
                    }
                }
                previous = Some((sum, lp.log.len()));
                window += 1;
                let here = lp.trajectory.last().clone();
                let req = PlanRequest {
                    world: lp.world,
                    model: lp.model,
                    start: here.clone(),
                    horizon: config.replan_period.min(total - lp.step()),
                };
                let plan = plan_greedy_variance(&req, &var, &here, derive_seed(config.planner_seed, PLANNER, window))?;
                execute(lp, plan)?;
            }
        }
        PlannerKind::EntropyVi => {
            let window = config.entropy_window.unwrap_or(total.max(1));
            while lp.step() < total {
                let known: Vec<bool> = lp.world.grid.cells().map(|c| lp.log.contains(&c)).collect();
                let measured: Vec<Cell> = lp.log.cells().collect();
                let left = total - lp.step();
                // Fall back to single steps for a tail shorter than one move.
                let stride = if left >= config.entropy_stride { config.entropy_stride } else { 1 };
                let req = PlanRequest {
                    world: lp.world,
                    model: lp.model,
                    start: lp.trajectory.last().clone(),
                    horizon: window.min(left / stride),
                };
                let params = EntropyParams {
                    state_budget: config.state_budget,
                    stride,
                    known: config.entropy_window.filter(|_| !config.entropy_history).map(|_| known.as_slice()),
                    conditioning: config.entropy_history.then_some(measured.as_slice()),
                    exec: lp.exec,
                };
                let mut plan = plan_entropy_vi(&req, &params)?;
                if let Some(c) = config.entropy_commit {
                    let keep = (c * stride).min(plan.steps());
                    plan.actions.truncate(keep);
                    plan.step_rewards.truncate(keep);
                }
                execute(lp, plan)?;
            }
        }
    }
    Ok(())
}

fn execute(lp: &mut Loop<'_>, plan: MissionPlan) -> Result<()> {
    lp.trajectory.events.extend(plan.events);
    for (a, r) in plan.actions.into_iter().zip(plan.step_rewards) {
        lp.apply(a, r)?;
    }
    Ok(())
}
