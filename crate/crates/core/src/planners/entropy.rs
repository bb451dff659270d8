use nalgebra::DMatrix;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::grid::{Cell, Move, Point3};
use crate::kriging::KrigingModel;
use crate::linalg::cholesky_jittered;

/// Differential entropy (nats) of a Gaussian with covariance `cov`.
pub fn gaussian_entropy(cov: &DMatrix<f64>) -> Result<f64> {
    if !cov.is_square() {
        return Err(Error::InvalidParameter("covariance must be square".into()));
    }
    let n = cov.nrows() as f64;
    let f = cholesky_jittered(cov, 0.0, 0)?;
    Ok(0.5 * n * (std::f64::consts::TAU * std::f64::consts::E).ln() + 0.5 * f.log_det())
}

fn dedup(cells: impl IntoIterator<Item = Cell>) -> Vec<Cell> {
    let mut out: Vec<Cell> = Vec::new();
    for c in cells {
        if !out.contains(&c) {
            out.push(c);
        }
    }
    out
}

/// Conditional entropy of the shadowing at the distinct `next` cells given
/// the distinct `current` cells.
///
/// `known[i]` marks `next[i]` as already measured before the current step;
/// such a cell joins the conditioning set, so it contributes only the
/// jitter-floor entropy, like a cell some UAV currently occupies. Geometry is
/// taken relative to `current[0]`, which makes the value a pure function of
/// the relative configuration.
pub fn step_reward_entropy(
    model: &KrigingModel,
    spacing_m: f64,
    current: &[Cell],
    next: &[Cell],
    known: &[bool],
) -> Result<f64> {
    assert!(!current.is_empty(), "at least one UAV");
    assert!(known.is_empty() || known.len() == next.len());
    let origin = current[0];
    let pt = |c: &Cell| Point3::new((c.x - origin.x) as f64 * spacing_m, (c.y - origin.y) as f64 * spacing_m, 0.0);

    let cur = dedup(current.iter().copied());
    let nxt = dedup(next.iter().copied());
    let mut cond = cur.clone();
    for (i, c) in next.iter().enumerate() {
        if known.get(i).copied().unwrap_or(false) && !cond.contains(c) {
            cond.push(*c);
        }
    }
    let cp: Vec<Point3> = cond.iter().map(pt).collect();
    let np: Vec<Point3> = nxt.iter().map(pt).collect();
    let j = model.jitter;
    let s_cc = DMatrix::from_fn(cp.len(), cp.len(), |a, b| model.cov(&cp[a], &cp[b]) + if a == b { j } else { 0.0 });
    let s_nn = DMatrix::from_fn(np.len(), np.len(), |a, b| model.cov(&np[a], &np[b]) + if a == b { j } else { 0.0 });
    let s_cn = DMatrix::from_fn(cp.len(), np.len(), |a, b| model.cov(&cp[a], &np[b]));
    conditional_entropy(&s_cc, &s_nn, &s_cn)
}

/// Entropy of `n` given `c` for a joint Gaussian with blocks `s_cc`,
/// `s_nn` and cross-covariance `s_cn`.
pub(crate) fn conditional_entropy(s_cc: &DMatrix<f64>, s_nn: &DMatrix<f64>, s_cn: &DMatrix<f64>) -> Result<f64> {
    let f = cholesky_jittered(s_cc, 0.0, 0)?;
    let v = f.solve_lower(s_cn);
    let cond_cov = s_nn - v.tr_mul(&v);
    let sym = (&cond_cov + cond_cov.transpose()) * 0.5;
    let m = s_nn.nrows() as f64;
    let fc = cholesky_jittered(&sym, 0.0, 2)?;
    Ok(0.5 * m * (std::f64::consts::TAU * std::f64::consts::E).ln() + 0.5 * fc.log_det())
}

/// Translation-invariant description of one joint move: offsets of UAVs
/// `1..N` from UAV 0, the per-UAV moves and the known-cell flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RewardKey(pub(crate) u128);

impl RewardKey {
    /// `None` when the configuration does not fit the packed encoding
    /// (more than 3 UAVs or offsets beyond +-32767 cells).
    pub fn new(current: &[Cell], moves: &[Move], known: &[bool]) -> Option<RewardKey> {
        let n = current.len();
        if n == 0 || n > 3 || moves.len() != n {
            return None;
        }
        let o = current[0];
        let mut k: u128 = n as u128;
        for c in &current[1..] {
            let dx = i16::try_from(c.x - o.x).ok()?;
            let dy = i16::try_from(c.y - o.y).ok()?;
            k = (k << 16) | dx as u16 as u128;
            k = (k << 16) | dy as u16 as u128;
        }
        for m in moves {
            k = (k << 3) | m.index() as u128;
        }
        for i in 0..n {
            k = (k << 1) | known.get(i).copied().unwrap_or(false) as u128;
        }
        Some(RewardKey(k))
    }
}

/// Memo of [`step_reward_entropy`] keyed by relative geometry.
#[derive(Debug, Clone, Default)]
pub struct RewardCache {
    map: FxHashMap<RewardKey, f64>,
}

impl RewardCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, key: &RewardKey) -> Option<f64> {
        self.map.get(key).copied()
    }

    pub fn insert(&mut self, key: RewardKey, value: f64) {
        self.map.insert(key, value);
    }

    pub fn extend(&mut self, other: impl IntoIterator<Item = (RewardKey, f64)>) {
        self.map.extend(other);
    }

    pub fn reward(
        &mut self,
        model: &KrigingModel,
        spacing_m: f64,
        current: &[Cell],
        moves: &[Move],
        known: &[bool],
    ) -> Result<f64> {
        let key = RewardKey::new(current, moves, known);
        if let Some(v) = key.and_then(|k| self.get(&k)) {
            return Ok(v);
        }
        let next: Vec<Cell> = current.iter().zip(moves).map(|(c, m)| c.step(*m)).collect();
        let v = step_reward_entropy(model, spacing_m, current, &next, known)?;
        if let Some(k) = key {
            self.insert(k, v);
        }
        Ok(v)
    }
}
