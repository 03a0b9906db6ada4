//! Curvature, repulsion, reconstruction and variance terms, each returning
//! its value together with the analytic gradient.

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Neighbors considered around each anchor when sampling curvature triples.
pub const CURVATURE_NEIGHBORS: usize = 8;
pub const DEFAULT_REPULSION_EPS: f64 = 1e-4;

/// Squared Menger curvature of the triangle `(m_i, m_i + u, m_i + w)`:
/// `4 (|u|^2 |w|^2 - (u.w)^2) / (|u|^2 |w|^2 |u - w|^2)`.
///
/// The numerator uses Lagrange's identity `sum_{a<b} (u_a w_b - u_b w_a)^2`,
/// so exactly collinear inputs give exactly zero. Coincident points give
/// `None`.
fn menger_sq(u: &[f64], w: &[f64]) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let p: f64 = u.iter().map(|x| x * x).sum();
    let q: f64 = w.iter().map(|x| x * x).sum();
    let r: f64 = u.iter().zip(w).map(|(a, b)| a * b).sum();
    let s: f64 = u.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum();
    let denom = p * q * s;
    if !(denom > f64::MIN_POSITIVE) {
        return None;
    }
    let mut num = 0.0;
    for a in 0..u.len() {
        for b in (a + 1)..u.len() {
            let x = u[a] * w[b] - u[b] * w[a];
            num += x * x;
        }
    }
    let value = 4.0 * num / denom;
    // d num/du = 2(q u - r w), d num/dw = 2(p w - r u)
    let gu = (0..u.len())
        .map(|a| {
            let dnum = 2.0 * (q * u[a] - r * w[a]);
            4.0 * dnum / denom - value * (2.0 * u[a] / p + 2.0 * (u[a] - w[a]) / s)
        })
        .collect();
    let gw = (0..u.len())
        .map(|a| {
            let dnum = 2.0 * (p * w[a] - r * u[a]);
            4.0 * dnum / denom - value * (2.0 * w[a] / q - 2.0 * (u[a] - w[a]) / s)
        })
        .collect();
    Some((value, gu, gw))
}

/// `CURVATURE_NEIGHBORS` nearest neighbors of every point (fewer when the
/// set is small), ties broken by index.
fn neighbor_lists(points: ArrayView2<'_, f64>) -> Vec<Vec<usize>> {
    let n = points.nrows();
    let k = CURVATURE_NEIGHBORS.min(n.saturating_sub(1));
    (0..n)
        .map(|i| {
            let mut d: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let sq = points
                        .row(i)
                        .iter()
                        .zip(points.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>();
                    (sq, j)
                })
                .collect();
            let order = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            if k > 0 && k < d.len() {
                d.select_nth_unstable_by(k - 1, order);
                d.truncate(k);
            }
            d.sort_by(order);
            d.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Mean squared Menger curvature over `triples_per_point` triples per
/// anchor, each formed from the anchor and two distinct sampled neighbors.
pub fn curvature_loss(
    points: ArrayView2<'_, f64>,
    triples_per_point: usize,
    seed: u64,
) -> Result<(f64, Array2<f64>)> {
    let (n, g) = points.dim();
    let mut grad = Array2::zeros((n, g));
    if triples_per_point == 0 || n < 3 {
        return Ok((0.0, grad));
    }
    let neighbors = neighbor_lists(points);
    let k = neighbors[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = (n * triples_per_point) as f64;
    let mut value = 0.0;
    let mut u = vec![0.0; g];
    let mut w = vec![0.0; g];
    for i in 0..n {
        for _ in 0..triples_per_point {
            let a = rng.random_range(0..k);
            let mut b = rng.random_range(0..k - 1);
            if b >= a {
                b += 1;
            }
            let (j, l) = (neighbors[i][a], neighbors[i][b]);
            for c in 0..g {
                u[c] = points[[j, c]] - points[[i, c]];
                w[c] = points[[l, c]] - points[[i, c]];
            }
            let Some((v, gu, gw)) = menger_sq(&u, &w) else {
                continue;
            };
            value += v;
            for c in 0..g {
                grad[[j, c]] += gu[c] / total;
                grad[[l, c]] += gw[c] / total;
                grad[[i, c]] -= (gu[c] + gw[c]) / total;
            }
        }
    }
    Ok((value / total, grad))
}

/// `sum_{i != j} 1 / (|m_i - m_j|^2 + eps)` over ordered pairs.
pub fn repulsion_loss(points: ArrayView2<'_, f64>, eps: f64) -> Result<(f64, Array2<f64>)> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("repulsion epsilon must be positive, got {eps}")));
    }
    let (n, g) = points.dim();
    let mut grad = Array2::zeros((n, g));
    let mut value = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let mut sq = 0.0;
            for c in 0..g {
                let d = points[[i, c]] - points[[j, c]];
                sq += d * d;
            }
            let inv = 1.0 / (sq + eps);
            value += 2.0 * inv;
            // d/dm_i of 2/(q + eps) = -2/(q + eps)^2 * 2 (m_i - m_j)
            let coef = -4.0 * inv * inv;
            for c in 0..g {
                let d = points[[i, c]] - points[[j, c]];
                grad[[i, c]] += coef * d;
                grad[[j, c]] -= coef * d;
            }
        }
    }
    Ok((value, grad))
}

/// Mean squared error over all entries.
pub fn recon_loss(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
    if pred.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "reconstruction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let count = pred.len().max(1) as f64;
    let diff = &pred - &target;
    let value = diff.iter().map(|d| d * d).sum::<f64>() / count;
    Ok((value, diff * (2.0 / count)))
}

/// `|| M^T M / n - I ||_F^2`, pulling the point covariance toward identity.
pub fn variance_loss(points: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
    let n = points.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("variance loss on zero points".into()));
    }
    let mut c = points.t().dot(&points) / n as f64;
    for i in 0..c.nrows() {
        c[[i, i]] -= 1.0;
    }
    let value = c.iter().map(|v| v * v).sum();
    let grad = points.dot(&c) * (4.0 / n as f64);
    Ok((value, grad))
}
