//! Prediction-quality metrics over the prediction plane.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::UrbanWorld;

/// Cells that count toward evaluation: outdoor at the prediction altitude
/// and not measured.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalMask(pub Vec<bool>);

impl EvalMask {
    /// Outdoor cells minus visited cells. Visited flight-plane cells only
    /// coincide with prediction cells when the two planes are the same.
    pub fn new<'a>(world: &UrbanWorld, visited: impl IntoIterator<Item = &'a crate::grid::Cell>) -> Self {
        let mut mask = world.outdoor_mask();
        if world.grid.planes_coincide() {
            for c in visited {
                if let Some(i) = world.grid.index(*c) {
                    mask[i] = false;
                }
            }
        }
        EvalMask(mask)
    }

    pub fn all(n: usize) -> Self {
        EvalMask(vec![true; n])
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|m| **m).count()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i)
    }
}

/// Root mean square of `mean - truth` over masked cells.
pub fn rmse(mean: &[f64], truth: &[f64], mask: &EvalMask) -> Result<f64> {
    assert_eq!(mean.len(), truth.len());
    assert_eq!(mean.len(), mask.len());
    let n = mask.count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let ss: f64 = mask.indices().map(|i| (mean[i] - truth[i]).powi(2)).sum();
    Ok((ss / n as f64).sqrt())
}

/// Natural log of the masked average of `error^2 / variance`. Zero means
/// the predicted variance matches the observed squared error.
pub fn goodness_of_fit(errors: &[f64], variances: &[f64], mask: &EvalMask) -> Result<f64> {
    assert_eq!(errors.len(), variances.len());
    assert_eq!(errors.len(), mask.len());
    let n = mask.count();
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    let mut acc = 0.0;
    for i in mask.indices() {
        if !(variances[i] > 0.0) {
            return Err(Error::ZeroVariance(i));
        }
        acc += errors[i] * errors[i] / variances[i];
    }
    Ok((acc / n as f64).ln())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    /// `None` for an empty bin.
    pub rmse: Option<f64>,
    pub count: usize,
}

/// 16 bins of 10 dB over [-240, -80] dB.
pub fn default_bin_edges() -> Vec<f64> {
    (0..=16).map(|i| -240.0 + 10.0 * i as f64).collect()
}

/// Masked RMSE per truth-gain bin `[lo, hi)`; the last bin is closed.
/// Cells outside every bin are ignored.
pub fn binned_rmse(errors: &[f64], truth: &[f64], mask: &EvalMask, edges: &[f64]) -> Result<Vec<BinStat>> {
    assert_eq!(errors.len(), truth.len());
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("bin edges must be strictly increasing".into()));
    }
    let nb = edges.len() - 1;
    let mut ss = vec![0.0; nb];
    let mut counts = vec![0usize; nb];
    for i in mask.indices() {
        let t = truth[i];
        let bin = if t == edges[nb] {
            Some(nb - 1)
        } else {
            edges.windows(2).position(|w| t >= w[0] && t < w[1])
        };
        if let Some(b) = bin {
            ss[b] += errors[i] * errors[i];
            counts[b] += 1;
        }
    }
    Ok((0..nb)
        .map(|b| BinStat {
            lo: edges[b],
            hi: edges[b + 1],
            rmse: (counts[b] > 0).then(|| (ss[b] / counts[b] as f64).sqrt()),
            count: counts[b],
        })
        .collect())
}
