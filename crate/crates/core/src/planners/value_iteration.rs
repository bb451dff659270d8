use std::collections::HashSet;

use nalgebra::DMatrix;
use rustc_hash::FxHashMap;

use super::entropy::{conditional_entropy, gaussian_entropy, step_reward_entropy, RewardKey};
use super::{MissionPlan, PlanRequest, PlannerKind};
use crate::error::{Error, Result};
use crate::grid::{Cell, GridSpec, JointAction, Move};
use crate::kriging::KrigingModel;
use crate::par::{self, Exec};

pub const MAX_ENTROPY_UAVS: usize = 3;
/// Total number of stored (stage, state) pairs before giving up.
pub const DEFAULT_STATE_BUDGET: usize = 20_000_000;

const DENSE_LIMIT: u64 = 10_000_000;
const CHUNK: usize = 1024;
const BATCH: usize = 16 * CHUNK;
const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy)]
pub struct EntropyParams<'a> {
    pub state_budget: usize,
    /// Flat-grid flags of cells measured before the plan starts. A step onto
    /// such a cell is rewarded as a revisit.
    pub known: Option<&'a [bool]>,
    /// Cells measured before the plan starts. When set, every step reward is
    /// additionally conditioned on these cells.
    pub conditioning: Option<&'a [Cell]>,
    /// Cells travelled per planned move. With `stride > 1` each planned move
    /// covers `stride` grid steps in one direction and is rewarded with the
    /// joint entropy of every cell it passes; the horizon counts planned moves.
    pub stride: usize,
    pub exec: Exec,
}

impl Default for EntropyParams<'_> {
    fn default() -> Self {
        EntropyParams {
            state_budget: DEFAULT_STATE_BUDGET,
            known: None,
            conditioning: None,
            stride: 1,
            exec: Exec::default(),
        }
    }
}

/// One DP stage, sorted by state key.
struct Stage {
    keys: Vec<u64>,
    values: Vec<f64>,
    pred: Vec<u32>,
    action: Vec<u16>,
}

struct Tables {
    n: usize,
    s: u64,
    grid: GridSpec,
    stride: usize,
    cells: Vec<Cell>,
    /// Grid index to compact index, `NONE` for blocked cells.
    compact: Vec<u32>,
    /// `next[c * 4 + m]`: compact index after move `m`, or `NONE`.
    next: Vec<u32>,
    known: Vec<bool>,
}

impl Tables {
    fn decode(&self, mut key: u64, out: &mut [u32]) {
        for slot in out.iter_mut().rev() {
            *slot = (key % self.s) as u32;
            key /= self.s;
        }
    }

    fn encode(&self, idx: &[u32]) -> u64 {
        idx.iter().fold(0, |k, &c| k * self.s + c as u64)
    }

    /// Compact indices of the cells passed by move `m` from `i`, endpoint last.
    fn path(&self, i: u32, m: Move) -> impl Iterator<Item = u32> + '_ {
        let c = self.cells[i as usize];
        (1..=self.stride).scan(c, move |at, _| {
            *at = at.step(m);
            Some(self.compact[self.grid.index(*at).expect("legal path")])
        })
    }
}

/// Step reward source: the prior model, or the model conditioned on
/// earlier measurements over every cell the plan can reach.
enum Rewarder<'a> {
    Prior { model: &'a KrigingModel, spacing: f64 },
    Posterior { row: Vec<u32>, measured: Vec<bool>, cov: DMatrix<f64>, jitter: f64 },
}

impl Rewarder<'_> {
    fn key(&self, tables: &Tables, idx: &[u32], moves: &[Move], flags: &[bool]) -> u128 {
        match self {
            Rewarder::Prior { .. } => {
                let cur: Vec<Cell> = idx.iter().map(|&i| tables.cells[i as usize]).collect();
                RewardKey::new(&cur, moves, flags).expect("packable configuration").0
            }
            Rewarder::Posterior { .. } => {
                let mut k = 0u128;
                for (&i, m) in idx.iter().zip(moves) {
                    k = (k << 35) | ((i as u128) << 3) | m.index() as u128;
                }
                k
            }
        }
    }

    fn reward(&self, tables: &Tables, idx: &[u32], moves: &[Move], flags: &[bool]) -> Result<f64> {
        match self {
            Rewarder::Prior { model, spacing } => {
                let cur: Vec<Cell> = idx.iter().map(|&i| tables.cells[i as usize]).collect();
                let next: Vec<Cell> = cur.iter().zip(moves).map(|(c, m)| c.step(*m)).collect();
                step_reward_entropy(model, *spacing, &cur, &next, flags)
            }
            Rewarder::Posterior { row, measured, cov, jitter } => {
                // Measured cells are already conditioned on.
                let mut cond: Vec<usize> = Vec::new();
                for &i in idx {
                    let r = row[i as usize] as usize;
                    if !measured[i as usize] && !cond.contains(&r) {
                        cond.push(r);
                    }
                }
                let mut next: Vec<usize> = Vec::new();
                for (&i, m) in idx.iter().zip(moves) {
                    for j in tables.path(i, *m) {
                        let r = row[j as usize] as usize;
                        if !next.contains(&r) {
                            next.push(r);
                        }
                    }
                }
                let s_nn = DMatrix::from_fn(next.len(), next.len(), |a, b| cov[(next[a], next[b])]);
                if cond.is_empty() {
                    return gaussian_entropy(&s_nn);
                }
                let s_cc = DMatrix::from_fn(cond.len(), cond.len(), |a, b| cov[(cond[a], cond[b])]);
                // The jitter is per measurement, so a cell shared by both sets
                // keeps it only on the diagonal blocks.
                let s_cn = DMatrix::from_fn(cond.len(), next.len(), |a, b| {
                    cov[(cond[a], next[b])] - if cond[a] == next[b] { *jitter } else { 0.0 }
                });
                conditional_entropy(&s_cc, &s_nn, &s_cn)
            }
        }
    }
}

/// Posterior covariance (jitter on the diagonal) over the cells the plan can
/// pass, given measurements at `log`.
fn posterior_rewarder<'a>(req: &PlanRequest<'_>, tables: &Tables, log: &[Cell]) -> Result<Rewarder<'a>> {
    let grid = &req.world.grid;
    let k = tables.stride as i32;
    let reach = req.horizon as i32 * k;
    let mut row = vec![NONE; tables.cells.len()];
    let mut pts = Vec::new();
    for (i, c) in tables.cells.iter().enumerate() {
        let on_lines = |s: &Cell| (c.x - s.x) % k == 0 || (c.y - s.y) % k == 0;
        if req.start.positions.iter().any(|s| s.l1(c) <= reach && on_lines(s)) {
            row[i] = pts.len() as u32;
            pts.push(grid.uav_point(*c));
        }
    }
    let mut log_cells: Vec<Cell> = Vec::new();
    let mut seen = HashSet::new();
    for c in log {
        if seen.insert(*c) {
            log_cells.push(*c);
        }
    }
    let measured = tables.cells.iter().map(|c| seen.contains(c)).collect();
    let model = req.model;
    let mut cov = model.cov_matrix(&pts);
    for i in 0..pts.len() {
        cov[(i, i)] += model.jitter;
    }
    if !log_cells.is_empty() {
        let lp: Vec<_> = log_cells.iter().map(|c| grid.uav_point(*c)).collect();
        let f = model.factor(&lp)?;
        let cross = DMatrix::from_fn(lp.len(), pts.len(), |a, b| model.cov(&lp[a], &pts[b]));
        let v = f.solve_lower(&cross);
        cov -= v.tr_mul(&v);
        cov = (&cov + cov.transpose()) * 0.5;
    }
    Ok(Rewarder::Posterior { row, measured, cov, jitter: model.jitter })
}

struct Candidate {
    key: u64,
    value: f64,
    pred: u32,
    action: u16,
}

fn better(value: f64, action: u16, pred: u32, best: &Candidate) -> bool {
    value > best.value || (value == best.value && (action, pred) < (best.action, best.pred))
}

/// Joint forward value iteration over swarm states maximizing the sum of
/// step-wise conditional entropies.
///
/// Among optimal terminal states the one with the smallest state key wins;
/// among optimal predecessors the smallest joint-action index wins. The
/// returned plan has `horizon * stride` grid steps.
pub fn plan_entropy_vi(req: &PlanRequest<'_>, params: &EntropyParams<'_>) -> Result<MissionPlan> {
    let world = req.world;
    let n = req.start.n_uavs();
    if n == 0 || n > MAX_ENTROPY_UAVS {
        return Err(Error::InvalidParameter(format!(
            "entropy planner supports 1..={MAX_ENTROPY_UAVS} UAVs, got {n}"
        )));
    }
    if !req.start.is_legal(world) {
        return Err(Error::InvalidParameter("start state is not legal".into()));
    }
    if let Some(k) = params.known {
        if k.len() != world.grid.n_cells() {
            return Err(Error::InvalidParameter("known-cell mask has the wrong length".into()));
        }
    }
    if params.stride == 0 {
        return Err(Error::InvalidParameter("stride must be positive".into()));
    }
    req.model.validate()?;
    let stride = params.stride;

    let mut compact = vec![NONE; world.grid.n_cells()];
    let cells = world.free_cells();
    for (i, c) in cells.iter().enumerate() {
        compact[world.grid.index(*c).expect("free cell in grid")] = i as u32;
    }
    let mut next = vec![NONE; cells.len() * Move::COUNT];
    for (i, c) in cells.iter().enumerate() {
        for m in Move::ALL {
            let mut at = *c;
            let mut j = NONE;
            for _ in 0..stride {
                at = at.step(m);
                j = world.grid.index(at).map_or(NONE, |g| compact[g]);
                if j == NONE {
                    break;
                }
            }
            next[i * Move::COUNT + m.index()] = j;
        }
    }
    let known = cells
        .iter()
        .map(|c| params.known.is_some_and(|k| k[world.grid.index(*c).unwrap()]))
        .collect();
    let s = cells.len() as u64;
    let tables = Tables { n, s, grid: world.grid, stride, cells, compact, next, known };
    let dense = s.checked_pow(n as u32).is_some_and(|v| v <= DENSE_LIMIT);

    let start_idx: Vec<u32> = req
        .start
        .positions
        .iter()
        .map(|c| tables.compact[world.grid.index(*c).unwrap()])
        .collect();
    let mut stages = vec![Stage { keys: vec![tables.encode(&start_idx)], values: vec![0.0], pred: vec![0], action: vec![0] }];
    let mut stored = 1usize;
    let rewarder = match (params.conditioning, stride) {
        (None, 1) => Rewarder::Prior { model: req.model, spacing: world.grid.spacing_m },
        (log, _) => posterior_rewarder(req, &tables, log.unwrap_or(&[]))?,
    };
    let mut cache: FxHashMap<u128, f64> = FxHashMap::default();
    let mut slot_of_dense = if dense { vec![NONE; s.pow(n as u32) as usize] } else { Vec::new() };
    let n_actions = JointAction::cardinality(n);

    for t in 0..req.horizon {
        let prev = stages.last().unwrap();
        let mut best: Vec<Candidate> = Vec::new();
        let mut slot_of_sparse: FxHashMap<u64, u32> = FxHashMap::default();
        for batch_start in (0..prev.keys.len()).step_by(BATCH) {
            let batch_end = (batch_start + BATCH).min(prev.keys.len());
            let ranges: Vec<_> = (batch_start..batch_end)
                .step_by(CHUNK)
                .map(|a| a..(a + CHUNK).min(batch_end))
                .collect();
            let shared = &cache;
            let outs = par::map(params.exec, &ranges, |r| {
                expand(&tables, prev, r.clone(), n_actions, shared, &rewarder)
            });
            for out in outs {
                let (cands, fresh) = out?;
                cache.extend(fresh);
                for c in cands {
                    let slot = if dense {
                        &mut slot_of_dense[c.key as usize]
                    } else {
                        slot_of_sparse.entry(c.key).or_insert(NONE)
                    };
                    if *slot == NONE {
                        *slot = best.len() as u32;
                        best.push(c);
                    } else if better(c.value, c.action, c.pred, &best[*slot as usize]) {
                        best[*slot as usize] = c;
                    }
                }
            }
        }
        if dense {
            for c in &best {
                slot_of_dense[c.key as usize] = NONE;
            }
        }
        if best.is_empty() {
            return Err(Error::Blocked { step: t });
        }
        stored += best.len();
        if stored > params.state_budget {
            return Err(Error::BudgetExceeded { states: stored, budget: params.state_budget });
        }
        best.sort_unstable_by_key(|c| c.key);
        stages.push(Stage {
            keys: best.iter().map(|c| c.key).collect(),
            values: best.iter().map(|c| c.value).collect(),
            pred: best.iter().map(|c| c.pred).collect(),
            action: best.iter().map(|c| c.action).collect(),
        });
    }

    let last = stages.last().unwrap();
    let mut at = 0usize;
    for i in 1..last.values.len() {
        if last.values[i] > last.values[at] {
            at = i;
        }
    }
    let optimum = last.values[at];
    let mut actions = Vec::with_capacity(req.horizon);
    for stage in stages[1..].iter().rev() {
        actions.push(stage.action[at] as usize);
        at = stage.pred[at] as usize;
    }
    actions.reverse();

    let mut plan = MissionPlan::new(PlannerKind::EntropyVi, req.start.clone());
    let mut total = 0.0;
    for a in actions {
        let action = JointAction::from_index(a, n);
        let cur = &plan.last().positions;
        let idx: Vec<u32> = cur.iter().map(|c| tables.compact[world.grid.index(*c).unwrap()]).collect();
        let flags: Vec<bool> = idx
            .iter()
            .zip(&action.0)
            .map(|(&i, m)| tables.known[tables.next[i as usize * Move::COUNT + m.index()] as usize])
            .collect();
        let key = rewarder.key(&tables, &idx, &action.0, &flags);
        let r = match cache.get(&key) {
            Some(r) => *r,
            None => rewarder.reward(&tables, &idx, &action.0, &flags)?,
        };
        total += r;
        // The reward of a long move is spread over its grid steps.
        for _ in 0..stride {
            plan.push(action.clone(), r / stride as f64);
        }
    }
    debug_assert_eq!(total.to_bits(), optimum.to_bits());
    plan.objective_value = total;
    plan.events.push(format!("entropy_vi: {stored} states over {} stages", stages.len()));
    Ok(plan)
}

type ChunkOut = (Vec<Candidate>, Vec<(u128, f64)>);

fn expand(
    tables: &Tables,
    prev: &Stage,
    range: std::ops::Range<usize>,
    n_actions: usize,
    shared: &FxHashMap<u128, f64>,
    rewarder: &Rewarder<'_>,
) -> Result<ChunkOut> {
    let n = tables.n;
    let mut local: FxHashMap<u128, f64> = FxHashMap::default();
    let mut out = Vec::with_capacity(range.len() * n_actions);
    let mut idx = [0u32; MAX_ENTROPY_UAVS];
    let mut nidx = [0u32; MAX_ENTROPY_UAVS];
    let mut moves = [Move::PosX; MAX_ENTROPY_UAVS];
    let mut flags = [false; MAX_ENTROPY_UAVS];
    for si in range {
        tables.decode(prev.keys[si], &mut idx[..n]);
        'action: for a in 0..n_actions {
            let mut rest = a;
            for u in (0..n).rev() {
                let m = rest % Move::COUNT;
                rest /= Move::COUNT;
                let j = tables.next[idx[u] as usize * Move::COUNT + m];
                if j == NONE {
                    continue 'action;
                }
                nidx[u] = j;
                moves[u] = Move::from_index(m);
                flags[u] = tables.known[j as usize];
            }
            let key = rewarder.key(tables, &idx[..n], &moves[..n], &flags[..n]);
            let r = match shared.get(&key).or_else(|| local.get(&key)) {
                Some(r) => *r,
                None => {
                    let r = rewarder.reward(tables, &idx[..n], &moves[..n], &flags[..n])?;
                    local.insert(key, r);
                    r
                }
            };
            out.push(Candidate {
                key: tables.encode(&nidx[..n]),
                value: prev.values[si] + r,
                pred: si as u32,
                action: a as u16,
            });
        }
    }
    Ok((out, local.into_iter().collect()))
}
