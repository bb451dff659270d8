//! Simple Kriging of channel gain.
//!
//! Gain is split into a log-distance mean `alpha - beta * ln(r)` and a
//! zero-mean shadowing process with exponential covariance
//! `phi * exp(-r / delta)`. Predictions condition the shadowing process on
//! the measured residuals; every linear solve goes through a Cholesky factor.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channel::MeasurementLog;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, Point3, UrbanWorld};
use crate::linalg::{cholesky_jittered, Factor};
use crate::par::{self, Exec};

/// Relative diagonal jitter used when none is configured.
pub const DEFAULT_JITTER_REL: f64 = 1e-6;
const JITTER_ESCALATIONS: usize = 2;
const QUERY_CHUNK: usize = 256;

/// Exponential (Gudmundson) covariance between two points.
#[inline]
pub fn kernel(a: &Point3, b: &Point3, phi: f64, delta: f64) -> f64 {
    phi * (-a.distance(b) / delta).exp()
}

/// `alpha - beta * ln(|q - tx|)`, distance floored at `floor`.
#[inline]
pub fn path_loss(q: &Point3, tx: &Point3, alpha: f64, beta: f64, floor: f64) -> f64 {
    alpha - beta * q.distance(tx).max(floor).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub samples: usize,
    pub nll: f64,
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KrigingModel {
    pub alpha: f64,
    pub beta: f64,
    pub phi: f64,
    pub delta: f64,
    pub jitter: f64,
    pub distance_floor: f64,
    #[serde(default)]
    pub fit_metadata: Option<FitMetadata>,
}

impl KrigingModel {
    /// Model with the default jitter `1e-6 * phi`.
    pub fn new(alpha: f64, beta: f64, phi: f64, delta: f64, distance_floor: f64) -> Result<Self> {
        let m = KrigingModel {
            alpha,
            beta,
            phi,
            delta,
            jitter: DEFAULT_JITTER_REL * phi,
            distance_floor,
            fit_metadata: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0 && self.delta > 0.0 && self.jitter >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kriging model needs phi > 0, delta > 0, jitter >= 0 (got {}, {}, {})",
                self.phi, self.delta, self.jitter
            )));
        }
        Ok(())
    }

    pub fn cov(&self, a: &Point3, b: &Point3) -> f64 {
        kernel(a, b, self.phi, self.delta)
    }

    pub fn mean(&self, q: &Point3, tx: &Point3) -> f64 {
        path_loss(q, tx, self.alpha, self.beta, self.distance_floor)
    }

    /// Covariance matrix over `points` (no jitter).
    pub fn cov_matrix(&self, points: &[Point3]) -> DMatrix<f64> {
        let n = points.len();
        DMatrix::from_fn(n, n, |i, j| self.cov(&points[i], &points[j]))
    }

    /// Cholesky factor of `Sigma_vv + jitter * I` with the escalation policy.
    pub fn factor(&self, points: &[Point3]) -> Result<Factor> {
        cholesky_jittered(&self.cov_matrix(points), self.jitter, JITTER_ESCALATIONS)
    }
}

/// Ordinary least squares of gain on `(1, -ln r)`; returns `(alpha, beta)`.
pub fn fit_path_loss(samples: &[(f64, f64)]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::Degenerate(format!("{} samples; need at least 2", samples.len())));
    }
    if let Some((r, _)) = samples.iter().find(|(r, _)| !(*r > 0.0)) {
        return Err(Error::Degenerate(format!("non-positive distance {r}")));
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|(r, _)| -r.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = samples.iter().map(|(_, g)| g).sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(samples).map(|(x, (_, g))| (x - mx) * (g - my)).sum();
    if !(sxx > 1e-12 * n * (1.0 + mx * mx)) {
        return Err(Error::Degenerate("all sample distances are equal".into()));
    }
    let beta = sxy / sxx;
    Ok((my - beta * mx, beta))
}

/// Search box and resolution for [`fit_kernel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSearch {
    /// `None` spans `[s2 / 100, s2 * 100]` around the mean square residual.
    pub phi_bounds: Option<(f64, f64)>,
    /// `None` spans `[min pair distance / 2, 4 * max pair distance]`.
    pub delta_bounds: Option<(f64, f64)>,
    /// Log-spaced `delta` grid that brackets the optimum.
    pub delta_points: usize,
    /// Golden-section iterations inside the bracket.
    pub refine_iters: usize,
    pub jitter_rel: f64,
}

impl Default for KernelSearch {
    fn default() -> Self {
        KernelSearch {
            phi_bounds: None,
            delta_bounds: None,
            delta_points: 25,
            refine_iters: 60,
            jitter_rel: DEFAULT_JITTER_REL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelFit {
    pub phi: f64,
    pub delta: f64,
    pub nll: f64,
}

/// Correlation-matrix summary at one `delta`: `log|R|` and `y^T R^-1 y`
/// with `R = C_delta + jitter_rel * I`.
struct Profile {
    log_det: f64,
    quad: f64,
    n: usize,
}

impl Profile {
    fn at(points: &[Point3], y: &DVector<f64>, delta: f64, jitter_rel: f64) -> Result<Profile> {
        let n = points.len();
        let r = DMatrix::from_fn(n, n, |i, j| kernel(&points[i], &points[j], 1.0, delta));
        let f = cholesky_jittered(&r, jitter_rel, 0)?;
        let z = f.solve_lower_vec(y);
        Ok(Profile { log_det: f.log_det(), quad: z.norm_squared(), n })
    }

    /// Gaussian NLL of `N(0, phi R)`.
    fn nll(&self, phi: f64) -> f64 {
        let n = self.n as f64;
        0.5 * (n * (std::f64::consts::TAU).ln() + n * phi.ln() + self.log_det + self.quad / phi)
    }

    fn best_phi(&self, lo: f64, hi: f64) -> f64 {
        (self.quad / self.n as f64).clamp(lo, hi)
    }
}

/// Zero-mean Gaussian negative log-likelihood of `residuals` at `points`
/// under `phi * exp(-r / delta)` with relative diagonal jitter.
pub fn kernel_nll(points: &[Point3], residuals: &[f64], phi: f64, delta: f64, jitter_rel: f64) -> Result<f64> {
    let y = DVector::from_column_slice(residuals);
    Ok(Profile::at(points, &y, delta, jitter_rel)?.nll(phi))
}

fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 || hi <= lo {
        return vec![(lo * hi).sqrt()];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Fit `(phi, delta)` by minimizing the Gaussian NLL. For fixed `delta` the
/// optimal `phi` is closed-form, so the profile NLL is minimized over
/// `ln delta` alone: a log-spaced grid, then golden section between the grid
/// neighbours of the best point.
pub fn fit_kernel(points: &[Point3], residuals: &[f64], search: &KernelSearch) -> Result<KernelFit> {
    if points.len() != residuals.len() {
        return Err(Error::InvalidParameter("points and residuals differ in length".into()));
    }
    if points.len() < 3 {
        return Err(Error::Degenerate(format!("{} residuals; need at least 3", points.len())));
    }
    let y = DVector::from_column_slice(residuals);
    let s2 = y.norm_squared() / y.len() as f64;
    let (phi_lo, phi_hi) = search.phi_bounds.unwrap_or((s2.max(1e-12) / 100.0, s2.max(1e-12) * 100.0));
    let (delta_lo, delta_hi) = search.delta_bounds.unwrap_or_else(|| {
        let (mut dmin, mut dmax) = (f64::INFINITY, 0.0f64);
        for (i, a) in points.iter().enumerate() {
            for b in &points[i + 1..] {
                let d = a.distance(b);
                if d > 0.0 {
                    dmin = dmin.min(d);
                }
                dmax = dmax.max(d);
            }
        }
        if !dmin.is_finite() {
            dmin = 1.0;
        }
        (dmin / 2.0, 4.0 * dmax.max(dmin))
    });
    if !(phi_lo > 0.0 && phi_lo <= phi_hi && delta_lo > 0.0 && delta_lo <= delta_hi) {
        return Err(Error::InvalidParameter("empty kernel search box".into()));
    }

    let profile = |ln_delta: f64| -> Result<KernelFit> {
        let delta = ln_delta.exp();
        let p = Profile::at(points, &y, delta, search.jitter_rel)?;
        let phi = p.best_phi(phi_lo, phi_hi);
        Ok(KernelFit { phi, delta, nll: p.nll(phi) })
    };
    let grid: Vec<f64> = log_space(delta_lo, delta_hi, search.delta_points).iter().map(|d| d.ln()).collect();
    let mut best = KernelFit { phi: f64::NAN, delta: f64::NAN, nll: f64::INFINITY };
    let mut at = 0;
    for (k, &x) in grid.iter().enumerate() {
        let f = profile(x)?;
        if f.nll < best.nll {
            best = f;
            at = k;
        }
    }

    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (grid[at.saturating_sub(1)], grid[(at + 1).min(grid.len() - 1)]);
    if b - a > 0.0 {
        let mut c = b - INV_PHI * (b - a);
        let mut d = a + INV_PHI * (b - a);
        let (mut fc, mut fd) = (profile(c)?, profile(d)?);
        for _ in 0..search.refine_iters {
            if fc.nll <= fd.nll {
                b = d;
                d = c;
                fd = fc;
                c = b - INV_PHI * (b - a);
                fc = profile(c)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + INV_PHI * (b - a);
                fd = profile(d)?;
            }
        }
        for f in [fc, fd] {
            if f.nll < best.nll {
                best = f;
            }
        }
    }
    Ok(best)
}

/// Fit path loss then kernel to `(point, gain)` samples for transmitter `tx`.
pub fn fit_model(
    samples: &[(Point3, f64)],
    tx: &Point3,
    distance_floor: f64,
    search: &KernelSearch,
) -> Result<KrigingModel> {
    let pl: Vec<(f64, f64)> = samples.iter().map(|(q, g)| (q.distance(tx).max(distance_floor), *g)).collect();
    let (alpha, beta) = fit_path_loss(&pl)?;
    let points: Vec<Point3> = samples.iter().map(|(q, _)| *q).collect();
    let residuals: Vec<f64> = samples
        .iter()
        .map(|(q, g)| g - path_loss(q, tx, alpha, beta, distance_floor))
        .collect();
    let k = fit_kernel(&points, &residuals, search)?;
    let mut model = KrigingModel::new(alpha, beta, k.phi, k.delta, distance_floor)?;
    model.jitter = search.jitter_rel * k.phi;
    model.fit_metadata = Some(FitMetadata { samples: samples.len(), nll: k.nll, source: "mle".into() });
    Ok(model)
}

/// Gaussian posterior of gain at the query points.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub covariance: Option<DMatrix<f64>>,
}

/// Conditioned shadowing process: the factor of `Sigma_vv` and the weights
/// `Sigma_vv^-1 y~`, reusable across query batches.
#[derive(Debug, Clone)]
pub struct Conditioned<'a> {
    model: &'a KrigingModel,
    tx: Point3,
    obs: Vec<Point3>,
    factor: Factor,
    weights: Option<DVector<f64>>,
}

impl<'a> Conditioned<'a> {
    /// Condition on observation points only (variances need no values).
    pub fn locations(model: &'a KrigingModel, tx: Point3, obs: Vec<Point3>) -> Result<Self> {
        model.validate()?;
        if obs.is_empty() {
            return Err(Error::EmptyLog);
        }
        let factor = model.factor(&obs)?;
        Ok(Conditioned { model, tx, obs, factor, weights: None })
    }

    /// Condition on observed gains at `obs`.
    pub fn new(model: &'a KrigingModel, tx: Point3, obs: Vec<Point3>, gains: &[f64]) -> Result<Self> {
        assert_eq!(obs.len(), gains.len());
        let mut c = Self::locations(model, tx, obs)?;
        let resid = DVector::from_iterator(
            gains.len(),
            c.obs.iter().zip(gains).map(|(q, g)| g - model.mean(q, &tx)),
        );
        c.weights = Some(c.factor.solve_vec(&resid));
        Ok(c)
    }

    pub fn from_log(model: &'a KrigingModel, tx: Point3, log: &MeasurementLog, grid: &GridSpec) -> Result<Self> {
        let obs: Vec<Point3> = log.cells().map(|c| grid.uav_point(c)).collect();
        Self::new(model, tx, obs, &log.values())
    }

    pub fn jitter(&self) -> f64 {
        self.factor.jitter
    }

    fn cross(&self, queries: &[Point3]) -> DMatrix<f64> {
        DMatrix::from_fn(self.obs.len(), queries.len(), |i, j| self.model.cov(&self.obs[i], &queries[j]))
    }

    /// Posterior variances at `queries`, clamped at zero.
    pub fn variances(&self, exec: Exec, queries: &[Point3]) -> Vec<f64> {
        par::map_chunks(exec, queries.len(), QUERY_CHUNK, |r| {
            let v = self.factor.solve_lower(&self.cross(&queries[r]));
            v.column_iter().map(|c| (self.model.phi - c.norm_squared()).max(0.0)).collect()
        })
    }

    /// Posterior means at `queries`; requires observed values.
    pub fn means(&self, exec: Exec, queries: &[Point3]) -> Vec<f64> {
        let w = self.weights.as_ref().expect("means need observed values");
        par::map_chunks(exec, queries.len(), QUERY_CHUNK, |r| {
            let k = self.cross(&queries[r.clone()]);
            k.column_iter()
                .zip(&queries[r])
                .map(|(c, q)| c.dot(w) + self.model.mean(q, &self.tx))
                .collect()
        })
    }

    /// Full posterior covariance over `queries`.
    pub fn covariance(&self, queries: &[Point3]) -> DMatrix<f64> {
        let v = self.factor.solve_lower(&self.cross(queries));
        let prior = self.model.cov_matrix(queries);
        let c = prior - v.tr_mul(&v);
        (&c + c.transpose()) * 0.5
    }

    pub fn posterior(&self, exec: Exec, queries: &[Point3], want_full_cov: bool) -> Posterior {
        Posterior {
            mean: self.means(exec, queries),
            variance: self.variances(exec, queries),
            covariance: want_full_cov.then(|| self.covariance(queries)),
        }
    }
}

/// Posterior of gain at `queries` given the measurement log.
pub fn posterior(
    model: &KrigingModel,
    tx: Point3,
    log: &MeasurementLog,
    grid: &GridSpec,
    queries: &[Point3],
    want_full_cov: bool,
) -> Result<Posterior> {
    Ok(Conditioned::from_log(model, tx, log, grid)?.posterior(Exec::default(), queries, want_full_cov))
}

/// Posterior variance over the prediction plane, flat-indexed; indoor cells
/// hold zero. Depends only on the visited locations.
pub fn posterior_variance_field(model: &KrigingModel, log: &MeasurementLog, world: &UrbanWorld) -> Result<Vec<f64>> {
    posterior_variance_field_with(Exec::default(), model, log, world)
}

pub fn posterior_variance_field_with(
    exec: Exec,
    model: &KrigingModel,
    log: &MeasurementLog,
    world: &UrbanWorld,
) -> Result<Vec<f64>> {
    let grid = &world.grid;
    let obs: Vec<Point3> = log.cells().map(|c| grid.uav_point(c)).collect();
    // Transmitter position does not enter the variance.
    let cond = Conditioned::locations(model, Point3::new(0.0, 0.0, 0.0), obs)?;
    let outdoor = world.outdoor_cells();
    let queries: Vec<Point3> = outdoor.iter().map(|c| grid.pred_point(*c)).collect();
    let var = cond.variances(exec, &queries);
    let mut field = vec![0.0; grid.n_cells()];
    for (c, v) in outdoor.iter().zip(var) {
        field[grid.index(*c).expect("outdoor cell is inside grid")] = v;
    }
    Ok(field)
}
