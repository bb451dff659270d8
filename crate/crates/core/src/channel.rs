//! Synthetic ground-truth channel gain and the measurement model.
//!
//! The surrogate gain at a point `q` for a transmitter at `w` is
//!
//! ```text
//! alpha0 - beta0 * ln(max(|q - w|, d/2)) + shadowing(q) - penalty * blockages(w, q)
//! ```
//!
//! where shadowing is a zero-mean Gaussian field with exponential covariance
//! `phi0 * exp(-r / delta0)` drawn jointly over the prediction and flight
//! planes, and `blockages` counts the buildings crossed by the straight
//! segment between transmitter and receiver.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Cell, GridSpec, Point3, UrbanWorld};
use crate::kriging::kernel;
use crate::linalg::cholesky_jittered;
use crate::rng;

/// Above this many joint cells the shadowing sampler switches from exact
/// Cholesky sampling to random spectral features.
pub const EXACT_SAMPLING_LIMIT: usize = 5000;
pub const SPECTRAL_FEATURES: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShadowingMethod {
    None,
    Cholesky,
    Spectral { features: usize },
}

/// Shadowing values on both planes. When the planes coincide `uav` is a copy
/// of `pred`.
#[derive(Debug, Clone, PartialEq)]
pub struct Shadowing {
    pub pred: Vec<f64>,
    pub uav: Vec<f64>,
    pub method: ShadowingMethod,
}

fn joint_points(grid: &GridSpec) -> Vec<Point3> {
    let mut pts: Vec<Point3> = grid.cells().map(|c| grid.pred_point(c)).collect();
    if !grid.planes_coincide() {
        pts.extend(grid.cells().map(|c| grid.uav_point(c)));
    }
    pts
}

/// Zero-mean Gaussian sample at `points` with covariance `phi * exp(-r/delta)`.
/// Exact (Cholesky) up to `exact_limit` points, random spectral features
/// beyond.
pub fn sample_gaussian_field(
    points: &[Point3],
    seed: u64,
    phi: f64,
    delta: f64,
    exact_limit: usize,
) -> Result<(Vec<f64>, ShadowingMethod)> {
    if !(phi > 0.0 && delta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "shadowing needs phi > 0 and delta > 0 (got {phi}, {delta})"
        )));
    }
    let mut rng = rng::substream(seed, rng::FIELD, 0);
    let n = points.len();
    if n <= exact_limit {
        let cov = DMatrix::from_fn(n, n, |i, j| kernel(&points[i], &points[j], phi, delta));
        let f = cholesky_jittered(&cov, 1e-10 * phi, 3)?;
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &f.l * z;
        return Ok((x.iter().copied().collect(), ShadowingMethod::Cholesky));
    }
    let m = SPECTRAL_FEATURES;
    // Exponential kernel in 3D has a multivariate Cauchy spectral density.
    let features: Vec<([f64; 3], f64)> = (0..m)
        .map(|_| {
            let g: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let scale = 1.0 / (delta * g[0].abs().max(1e-300));
            let b = rng.random::<f64>() * std::f64::consts::TAU;
            ([g[1] * scale, g[2] * scale, g[3] * scale], b)
        })
        .collect();
    let amp = (2.0 * phi / m as f64).sqrt();
    let values = points
        .iter()
        .map(|p| {
            amp * features
                .iter()
                .map(|(w, b)| (w[0] * p.x + w[1] * p.y + w[2] * p.z + b).cos())
                .sum::<f64>()
        })
        .collect();
    Ok((values, ShadowingMethod::Spectral { features: m }))
}

/// Joint shadowing sample over the prediction and flight planes of `world`.
pub fn sample_shadowing(world: &UrbanWorld, seed: u64, phi0: f64, delta0: f64) -> Result<Shadowing> {
    sample_shadowing_with_limit(world, seed, phi0, delta0, EXACT_SAMPLING_LIMIT)
}

pub fn sample_shadowing_with_limit(
    world: &UrbanWorld,
    seed: u64,
    phi0: f64,
    delta0: f64,
    exact_limit: usize,
) -> Result<Shadowing> {
    let grid = &world.grid;
    let pts = joint_points(grid);
    let (values, method) = sample_gaussian_field(&pts, seed, phi0, delta0, exact_limit)?;
    let n = grid.n_cells();
    let pred = values[..n].to_vec();
    let uav = if grid.planes_coincide() { pred.clone() } else { values[n..].to_vec() };
    Ok(Shadowing { pred, uav, method })
}

/// Parameters of the synthetic ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TruthParams {
    pub alpha0: f64,
    pub beta0: f64,
    /// Shadowing sill in dB^2; zero disables shadowing.
    pub phi0: f64,
    pub delta0: f64,
    /// Loss per building crossed by the direct segment, dB.
    pub penalty_db: f64,
    /// Standard deviation of additive measurement noise; zero is the perfect
    /// measurement model.
    pub noise_db: f64,
    /// Joint-cell count up to which shadowing is sampled exactly.
    pub exact_limit: usize,
}

impl Default for TruthParams {
    fn default() -> Self {
        TruthParams {
            alpha0: -40.0,
            beta0: 13.0,
            phi0: 25.0,
            delta0: 50.0,
            penalty_db: 15.0,
            noise_db: 0.0,
            exact_limit: EXACT_SAMPLING_LIMIT,
        }
    }
}

/// Ground-truth gain on the prediction plane and the flight plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainField {
    pub grid: GridSpec,
    pub tx: Point3,
    pub seed: u64,
    pub truth: TruthParams,
    pub shadowing: ShadowingMethod,
    /// dB, flat-indexed over the grid at the prediction altitude.
    pub pred_plane: Vec<f64>,
    /// dB, flat-indexed over the grid at the flight altitude.
    pub uav_plane: Vec<f64>,
}

impl GainField {
    pub fn uav_gain(&self, c: Cell) -> Option<f64> {
        self.grid.index(c).map(|i| self.uav_plane[i])
    }

    pub fn pred_gain(&self, c: Cell) -> Option<f64> {
        self.grid.index(c).map(|i| self.pred_plane[i])
    }
}

/// Log-distance mean gain with the distance floored at `floor`.
pub fn log_distance(q: &Point3, tx: &Point3, alpha: f64, beta: f64, floor: f64) -> f64 {
    alpha - beta * q.distance(tx).max(floor).ln()
}

/// Number of distinct buildings (runs of blocked columns) crossed by the
/// segment `a`-`b`. The segment is always walked from the lexicographically
/// smaller endpoint, which makes the count symmetric.
pub fn blockage_count(world: &UrbanWorld, a: &Point3, b: &Point3) -> usize {
    let key = |p: &Point3| (p.x, p.y, p.z);
    let (a, b) = if key(a).partial_cmp(&key(b)) == Some(std::cmp::Ordering::Greater) {
        (b, a)
    } else {
        (a, b)
    };
    let d = world.grid.spacing_m;
    let (dx, dy, dz) = (b.x - a.x, b.y - a.y, b.z - a.z);
    let mut cx = (a.x / d).floor() as i64;
    let mut cy = (a.y / d).floor() as i64;
    let ex = (b.x / d).floor() as i64;
    let ey = (b.y / d).floor() as i64;
    let (sx, sy) = (dx.signum() as i64, dy.signum() as i64);
    let next_boundary = |c: i64, s: i64| if s > 0 { (c + 1) as f64 * d } else { c as f64 * d };
    let mut t_max_x = if dx != 0.0 { (next_boundary(cx, sx) - a.x) / dx } else { f64::INFINITY };
    let mut t_max_y = if dy != 0.0 { (next_boundary(cy, sy) - a.y) / dy } else { f64::INFINITY };
    let t_dx = if dx != 0.0 { d / dx.abs() } else { f64::INFINITY };
    let t_dy = if dy != 0.0 { d / dy.abs() } else { f64::INFINITY };

    let mut count = 0;
    let mut inside = false;
    let mut t_in = 0.0f64;
    loop {
        let last = cx == ex && cy == ey;
        let t_out = if last { 1.0 } else { t_max_x.min(t_max_y).min(1.0) };
        let z_min = (a.z + dz * t_in).min(a.z + dz * t_out);
        let cell = Cell::new(cx as i32, cy as i32);
        let blocked = world.blocked_at(cell, z_min);
        if blocked && !inside {
            count += 1;
        }
        inside = blocked;
        if last || t_out >= 1.0 {
            break;
        }
        t_in = t_out;
        if t_max_x <= t_max_y {
            cx += sx;
            t_max_x += t_dx;
        } else {
            cy += sy;
            t_max_y += t_dy;
        }
    }
    count
}

/// Ground-truth gain field for a transmitter at `tx`.
pub fn synthesize_field(world: &UrbanWorld, tx: Point3, seed: u64, truth: TruthParams) -> Result<GainField> {
    let grid = world.grid;
    let d = grid.spacing_m;
    let tx_cell = Cell::new((tx.x / d).floor() as i32, (tx.y / d).floor() as i32);
    if world.blocked_at(tx_cell, tx.z) {
        return Err(Error::TransmitterIndoor { x: tx.x, y: tx.y, z: tx.z });
    }
    let shadow = if truth.phi0 > 0.0 {
        sample_shadowing_with_limit(world, seed, truth.phi0, truth.delta0, truth.exact_limit)?
    } else {
        let n = grid.n_cells();
        Shadowing { pred: vec![0.0; n], uav: vec![0.0; n], method: ShadowingMethod::None }
    };
    let floor = d / 2.0;
    let gain = |q: Point3, sh: f64| {
        let blocks = if truth.penalty_db != 0.0 { blockage_count(world, &tx, &q) } else { 0 };
        log_distance(&q, &tx, truth.alpha0, truth.beta0, floor) + sh - truth.penalty_db * blocks as f64
    };
    let pred_plane: Vec<f64> = grid.cells().zip(&shadow.pred).map(|(c, s)| gain(grid.pred_point(c), *s)).collect();
    let uav_plane = if grid.planes_coincide() {
        pred_plane.clone()
    } else {
        grid.cells().zip(&shadow.uav).map(|(c, s)| gain(grid.uav_point(c), *s)).collect()
    };
    Ok(GainField { grid, tx, seed, truth, shadowing: shadow.method, pred_plane, uav_plane })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub cell: Cell,
    /// Step of the first visit.
    pub step: usize,
    pub value: f64,
}

/// Visited flight-plane cells in first-visit order with their measured gain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "LogRepr", into = "LogRepr")]
pub struct MeasurementLog {
    entries: Vec<Measurement>,
    seen: HashSet<Cell>,
}

#[derive(Serialize, Deserialize)]
struct LogRepr {
    entries: Vec<Measurement>,
}

impl From<LogRepr> for MeasurementLog {
    fn from(r: LogRepr) -> Self {
        let mut log = MeasurementLog::default();
        for m in r.entries {
            if log.seen.insert(m.cell) {
                log.entries.push(m);
            }
        }
        log
    }
}

impl From<MeasurementLog> for LogRepr {
    fn from(l: MeasurementLog) -> Self {
        LogRepr { entries: l.entries }
    }
}

impl MeasurementLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Measurement] {
        &self.entries
    }

    pub fn contains(&self, c: &Cell) -> bool {
        self.seen.contains(c)
    }

    pub fn cells(&self) -> impl Iterator<Item = Cell> + '_ {
        self.entries.iter().map(|m| m.cell)
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|m| m.value).collect()
    }

    pub fn visited(&self) -> &HashSet<Cell> {
        &self.seen
    }

    /// Append a measurement unless `cell` is already logged.
    pub fn push(&mut self, cell: Cell, step: usize, value: f64) -> bool {
        let fresh = self.seen.insert(cell);
        if fresh {
            self.entries.push(Measurement { cell, step, value });
        }
        fresh
    }

    /// Measure at `cells`, appending only cells not yet visited. Returns the
    /// number of new entries.
    pub fn measure(&mut self, field: &GainField, cells: &[Cell], step: usize) -> Result<usize> {
        let mut added = 0;
        for &c in cells {
            let Some(value) = field.uav_gain(c) else {
                return Err(Error::OutOfBounds { x: c.x, y: c.y });
            };
            if self.contains(&c) {
                continue;
            }
            let value = value + measurement_noise(field, c);
            self.push(c, step, value);
            added += 1;
        }
        Ok(added)
    }

    /// Entries logged at or before `step`.
    pub fn until(&self, step: usize) -> MeasurementLog {
        let mut out = MeasurementLog::new();
        for m in self.entries.iter().filter(|m| m.step <= step) {
            out.push(m.cell, m.step, m.value);
        }
        out
    }
}

fn measurement_noise(field: &GainField, c: Cell) -> f64 {
    if field.truth.noise_db <= 0.0 {
        return 0.0;
    }
    let idx = field.grid.index(c).unwrap_or(0) as u64;
    let mut r = rng::substream(field.seed, "noise", idx);
    field.truth.noise_db * r.sample::<f64, _>(StandardNormal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn open(n: usize) -> UrbanWorld {
        UrbanWorld::open(GridSpec::square(n, 4.0, 40.0, 10.0).unwrap()).unwrap()
    }

    fn no_shadow(penalty: f64) -> TruthParams {
        TruthParams { alpha0: -30.0, beta0: 20.0, phi0: 0.0, penalty_db: penalty, ..TruthParams::default() }
    }

    #[test]
    fn log_distance_decade() {
        let tx = Point3::new(0.0, 0.0, 10.0);
        let a = log_distance(&Point3::new(3.0, 0.0, 10.0), &tx, -30.0, 20.0, 2.0);
        let b = log_distance(&Point3::new(30.0, 0.0, 10.0), &tx, -30.0, 20.0, 2.0);
        assert!((b - a + 20.0 * 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn field_in_empty_world_is_pure_path_loss() {
        let w = open(10);
        let tx = Point3::new(2.0, 2.0, 10.0);
        let f = synthesize_field(&w, tx, 1, no_shadow(15.0)).unwrap();
        for c in w.grid.cells() {
            let q = w.grid.pred_point(c);
            assert_eq!(f.pred_gain(c).unwrap(), log_distance(&q, &tx, -30.0, 20.0, 2.0));
        }
    }

    #[test]
    fn building_penalty_is_exact() {
        // Transmitter in the middle of a 9x9 world, one tall building two
        // cells to its +x side; compare against the mirror cell on -x.
        let mut w = open(9);
        let b = Cell::new(6, 4);
        let i = w.grid.index(b).unwrap();
        w.heights[i] = 30.0;
        let tx = w.grid.uav_point(Cell::new(4, 4));
        let f = synthesize_field(&w, tx, 1, no_shadow(15.0)).unwrap();
        let behind = f.pred_gain(Cell::new(8, 4)).unwrap();
        let mirror = f.pred_gain(Cell::new(0, 4)).unwrap();
        assert_eq!(blockage_count(&w, &tx, &w.grid.pred_point(Cell::new(8, 4))), 1);
        assert!((mirror - behind - 15.0).abs() < 1e-12);
    }

    #[test]
    fn two_buildings_counted_separately() {
        let mut w = open(12);
        for x in [3, 4, 7] {
            let i = w.grid.index(Cell::new(x, 5)).unwrap();
            w.heights[i] = 30.0;
        }
        let a = w.grid.uav_point(Cell::new(0, 5));
        let b = w.grid.uav_point(Cell::new(11, 5));
        assert_eq!(blockage_count(&w, &a, &b), 2);
        assert_eq!(blockage_count(&w, &b, &a), 2);
    }

    #[test]
    fn low_building_does_not_block_high_segment() {
        let mut w = open(8);
        let i = w.grid.index(Cell::new(4, 4)).unwrap();
        w.heights[i] = 5.0;
        let a = w.grid.point(Cell::new(0, 4), 10.0);
        let b = w.grid.point(Cell::new(7, 4), 10.0);
        assert_eq!(blockage_count(&w, &a, &b), 0);
    }

    #[test]
    fn transmitter_indoor_rejected() {
        let mut w = open(6);
        let i = w.grid.index(Cell::new(2, 2)).unwrap();
        w.heights[i] = 30.0;
        let tx = w.grid.uav_point(Cell::new(2, 2));
        assert!(matches!(
            synthesize_field(&w, tx, 1, TruthParams::default()),
            Err(Error::TransmitterIndoor { .. })
        ));
    }

    #[test]
    fn sampler_rejects_bad_hyperparameters() {
        let w = open(4);
        assert!(sample_shadowing(&w, 1, 0.0, 10.0).is_err());
        assert!(sample_shadowing(&w, 1, 1.0, -1.0).is_err());
    }

    #[test]
    fn huge_correlation_distance_gives_flat_field() {
        let w = open(6);
        let s = sample_shadowing(&w, 3, 4.0, 1e9).unwrap();
        let first = s.pred[0];
        assert!(s.pred.iter().all(|v| (v - first).abs() < 1e-3));
    }

    #[test]
    fn distinct_planes_sampled_jointly() {
        let g = GridSpec::new(24.0, 24.0, 40.0, 4.0, 10.0, 30.0).unwrap();
        let w = UrbanWorld::open(g).unwrap();
        let s = sample_shadowing(&w, 3, 4.0, 50.0).unwrap();
        assert_eq!(s.method, ShadowingMethod::Cholesky);
        assert_ne!(s.pred, s.uav);
        // 20 m vertical separation at delta 50 keeps the planes correlated.
        let n = s.pred.len() as f64;
        let mp = s.pred.iter().sum::<f64>() / n;
        let mu = s.uav.iter().sum::<f64>() / n;
        assert!(s.pred.iter().zip(&s.uav).map(|(a, b)| (a - mp) * (b - mu)).sum::<f64>() > 0.0);
    }

    #[test]
    fn measurement_is_idempotent_and_exact() {
        let w = open(6);
        let f = synthesize_field(&w, Point3::new(1.0, 1.0, 10.0), 4, TruthParams::default()).unwrap();
        let mut log = MeasurementLog::new();
        let cells = [Cell::new(1, 1), Cell::new(2, 3), Cell::new(4, 4)];
        assert_eq!(log.measure(&f, &cells, 0).unwrap(), 3);
        assert_eq!(log.measure(&f, &cells[..1], 1).unwrap(), 0);
        assert_eq!(log.len(), 3);
        assert_eq!(log.entries()[1].value.to_bits(), f.uav_gain(Cell::new(2, 3)).unwrap().to_bits());
        assert!(matches!(log.measure(&f, &[Cell::new(6, 0)], 2), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn log_serde_roundtrip_rebuilds_index() {
        let mut log = MeasurementLog::new();
        log.push(Cell::new(1, 2), 0, -80.0);
        log.push(Cell::new(2, 2), 1, -81.0);
        let s = serde_json::to_string(&log).unwrap();
        let back: MeasurementLog = serde_json::from_str(&s).unwrap();
        assert_eq!(back, log);
        assert!(back.contains(&Cell::new(2, 2)));
    }
}
