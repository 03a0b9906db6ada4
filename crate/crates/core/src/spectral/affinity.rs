use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::fps::fps_from;
use crate::error::{Error, Result};

/// Above this many points the median bandwidth is taken over a farthest-point
/// subsample of [`MEDIAN_SUBSAMPLE`] points instead of all pairs.
pub const MEDIAN_EXACT_LIMIT: usize = 2048;
pub const MEDIAN_SUBSAMPLE: usize = 512;

/// How the RBF bandwidth `h` is chosen for a point set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    /// `h = scale * median pairwise squared distance`, recomputed per point set.
    Median { scale: f64 },
    Fixed(f64),
}

impl Default for Bandwidth {
    fn default() -> Self {
        Bandwidth::Median { scale: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffinityParams {
    pub kappa: f64,
    pub bandwidth: Bandwidth,
}

impl Default for AffinityParams {
    fn default() -> Self {
        Self {
            kappa: 1.0,
            bandwidth: Bandwidth::default(),
        }
    }
}

impl AffinityParams {
    pub fn resolve_bandwidth(&self, points: ArrayView2<'_, f64>) -> Result<f64> {
        match self.bandwidth {
            Bandwidth::Median { scale } => {
                check_positive("bandwidth scale", scale)?;
                Ok(scale * median_bandwidth(points)?)
            }
            Bandwidth::Fixed(h) => {
                check_positive("bandwidth h", h)?;
                Ok(h)
            }
        }
    }

    pub fn build(&self, points: ArrayView2<'_, f64>) -> Result<AffinityMatrix> {
        let h = self.resolve_bandwidth(points)?;
        rbf_affinity(points, self.kappa, h)
    }
}

/// Dense RBF affinity `kappa * exp(-|p_i - p_j|^2 / h)` with its degree
/// normalizations.
#[derive(Debug, Clone)]
pub struct AffinityMatrix {
    pub kappa: f64,
    pub h: f64,
    pub raw: Array2<f64>,
    pub row_normalized: Array2<f64>,
    /// Row sums of `raw`.
    pub degrees: Array1<f64>,
}

impl AffinityMatrix {
    pub fn n(&self) -> usize {
        self.raw.nrows()
    }

    /// `D^{-1/2} raw D^{-1/2}`: same spectrum as the row-normalized matrix,
    /// but symmetric.
    pub fn symmetric_normalized(&self) -> Array2<f64> {
        let inv_sqrt = self.degrees.mapv(|d| 1.0 / d.sqrt());
        let mut out = self.raw.clone();
        for ((i, j), v) in out.indexed_iter_mut() {
            *v *= inv_sqrt[i] * inv_sqrt[j];
        }
        out
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")))
    }
}

fn check_points(points: ArrayView2<'_, f64>) -> Result<()> {
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("points"));
    }
    Ok(())
}

/// Pairwise squared Euclidean distances with an exactly zero diagonal and
/// exact symmetry.
pub fn squared_distances(points: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = points.nrows();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let pi = points.row(i);
        for j in (i + 1)..n {
            let pj = points.row(j);
            let d: f64 = pi.iter().zip(pj.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            out[[i, j]] = d;
            out[[j, i]] = d;
        }
    }
    out
}

pub fn rbf_affinity(points: ArrayView2<'_, f64>, kappa: f64, h: f64) -> Result<AffinityMatrix> {
    if points.nrows() < 2 {
        return Err(Error::InvalidArgument("affinity needs at least 2 points".into()));
    }
    check_points(points)?;
    check_positive("kappa", kappa)?;
    check_positive("bandwidth h", h)?;
    Ok(affinity_from_sq_dists(&squared_distances(points), kappa, h))
}

pub(crate) fn affinity_from_sq_dists(sq: &Array2<f64>, kappa: f64, h: f64) -> AffinityMatrix {
    // libm rather than the platform exp: right after faer's AVX-512 kernels
    // the system exp runs ~40x slower, and this is on every training step.
    let raw = sq.mapv(|d| kappa * libm::exp(-d / h));
    let degrees = raw.sum_axis(Axis(1));
    let mut row_normalized = raw.clone();
    for (mut row, d) in row_normalized.axis_iter_mut(Axis(0)).zip(degrees.iter()) {
        row.mapv_inplace(|v| v / d);
    }
    AffinityMatrix {
        kappa,
        h,
        raw,
        row_normalized,
        degrees,
    }
}

/// The median pairwise squared distance together with the pair(s) that
/// realize it, so callers can differentiate through the median.
#[derive(Debug, Clone)]
pub(crate) struct MedianPairs {
    pub value: f64,
    /// `(i, j, weight)`: the median is `sum weight * |p_i - p_j|^2`.
    pub pairs: Vec<(usize, usize, f64)>,
}

/// Median over all `i < j` pairs of a precomputed squared-distance matrix.
/// Even pair counts average the two middle values. Ordering is total on
/// `(distance, i, j)` so the selected pair is deterministic.
pub(crate) fn median_of_pairs(sq: &Array2<f64>) -> MedianPairs {
    let n = sq.nrows();
    let mut all: Vec<(f64, usize, usize)> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            all.push((sq[[i, j]], i, j));
        }
    }
    let cmp = |a: &(f64, usize, usize), b: &(f64, usize, usize)| {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    };
    let m = all.len();
    let mid = m / 2;
    let (lower, upper_mid, _) = all.select_nth_unstable_by(mid, cmp);
    let upper = *upper_mid;
    if m % 2 == 1 {
        MedianPairs {
            value: upper.0,
            pairs: vec![(upper.1, upper.2, 1.0)],
        }
    } else {
        let below = *lower.iter().max_by(|a, b| cmp(a, b)).expect("m >= 2");
        MedianPairs {
            value: 0.5 * (below.0 + upper.0),
            pairs: vec![(below.1, below.2, 0.5), (upper.1, upper.2, 0.5)],
        }
    }
}

/// Bandwidth pairs for a squared-distance matrix: the median, or the mean
/// over all pairs when more than half the pairs coincide. Only a fully
/// collapsed set is rejected.
pub(crate) fn bandwidth_pairs(sq: &Array2<f64>) -> Result<MedianPairs> {
    let median = median_of_pairs(sq);
    if median.value > 0.0 {
        return Ok(median);
    }
    let n = sq.nrows();
    let weight = 2.0 / (n * (n - 1)) as f64;
    let mut value = 0.0;
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            value += weight * sq[[i, j]];
            pairs.push((i, j, weight));
        }
    }
    if value > 0.0 {
        Ok(MedianPairs { value, pairs })
    } else {
        Err(Error::DegenerateBandwidth)
    }
}

/// Median of all pairwise squared distances, over a farthest-point
/// subsample when the set is large.
pub fn median_bandwidth(points: ArrayView2<'_, f64>) -> Result<f64> {
    let n = points.nrows();
    if n < 2 {
        return Err(Error::InvalidArgument("median bandwidth needs at least 2 points".into()));
    }
    check_points(points)?;
    let sq = if n > MEDIAN_EXACT_LIMIT {
        let idx = fps_from(points, MEDIAN_SUBSAMPLE, 0)?;
        squared_distances(points.select(Axis(0), &idx).view())
    } else {
        squared_distances(points)
    };
    Ok(bandwidth_pairs(&sq)?.value)
}
