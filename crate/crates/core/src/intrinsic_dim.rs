//! Maximum-likelihood intrinsic dimension (Levina & Bickel, 2004).
//!
//! For a point `x` with sorted neighbor distances `T_1 <= T_2 <= ...`:
//!
//! ```text
//! m_k(x) = [ 1/(k-1) * sum_{j=1}^{k-1} ln(T_k(x) / T_j(x)) ]^{-1}
//! ```
//!
//! The estimate averages `m_k(x)` over all points, then over
//! `k in [k_min, k_max]`. Only ratios of distances enter, so the estimate is
//! unchanged by rotation, translation and uniform scaling.

use ndarray::ArrayView2;
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_K_MIN: usize = 10;
pub const DEFAULT_K_MAX: usize = 20;

#[derive(Debug, Clone, Serialize)]
pub struct DimEstimate {
    pub g_hat: f64,
    /// `round(g_hat)` clamped to `[1, ambient dim]`.
    pub g_rounded: usize,
    pub k_range: (usize, usize),
    /// Per-point estimate averaged over the k range.
    #[serde(skip)]
    pub per_point: Vec<f64>,
}

impl DimEstimate {
    /// Dimension to use for a Mood Space: at least 2, since a one-dimensional
    /// space cannot hold distinct paths.
    pub fn mood_dim(&self) -> usize {
        self.g_rounded.max(2)
    }
}

pub fn estimate_dim(points: ArrayView2<'_, f64>, k_min: usize, k_max: usize) -> Result<DimEstimate> {
    let (n, d) = points.dim();
    if k_min < 3 || k_max < k_min {
        return Err(Error::InvalidArgument(format!(
            "need 3 <= k_min <= k_max, got k_min = {k_min}, k_max = {k_max}"
        )));
    }
    if n <= k_max {
        return Err(Error::InvalidArgument(format!(
            "need more than k_max = {k_max} points, got {n}"
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("points"));
    }

    let n_k = k_max - k_min + 1;
    // sums[k - k_min] accumulates m_k over points in index order.
    let mut sums = vec![0.0f64; n_k];
    let mut per_point = Vec::with_capacity(n);
    let mut dists = Vec::with_capacity(n - 1);
    let mut logs = vec![0.0f64; k_max];
    for i in 0..n {
        dists.clear();
        let pi = points.row(i);
        for j in 0..n {
            if j == i {
                continue;
            }
            let sq: f64 = pi
                .iter()
                .zip(points.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            // Duplicates carry no scale information.
            if sq > 0.0 {
                dists.push(sq);
            }
        }
        if dists.len() < k_max {
            return Err(Error::NotEnoughNeighbors {
                point: i,
                needed: k_max,
                found: dists.len(),
            });
        }
        dists.select_nth_unstable_by(k_max - 1, f64::total_cmp);
        let nearest = &mut dists[..k_max];
        nearest.sort_unstable_by(f64::total_cmp);
        for (l, sq) in logs.iter_mut().zip(nearest.iter()) {
            *l = 0.5 * sq.ln();
        }

        let mut point_sum = 0.0;
        let mut prefix = 0.0;
        let mut next = 0;
        for k in k_min..=k_max {
            // prefix = sum_{j < k} ln T_j
            while next < k - 1 {
                prefix += logs[next];
                next += 1;
            }
            let mean_log_ratio = ((k - 1) as f64 * logs[k - 1] - prefix) / (k - 1) as f64;
            let m = 1.0 / mean_log_ratio;
            sums[k - k_min] += m;
            point_sum += m;
        }
        per_point.push(point_sum / n_k as f64);
    }

    let g_hat = sums.iter().map(|s| s / n as f64).sum::<f64>() / n_k as f64;
    let g_rounded = (g_hat.round().max(1.0) as usize).min(d.max(1));
    Ok(DimEstimate {
        g_hat,
        g_rounded,
        k_range: (k_min, k_max),
        per_point,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    /// Naive per-k, per-point formula, used as a second route.
    fn naive(points: &Array2<f64>, k: usize) -> f64 {
        let n = points.nrows();
        let mut total = 0.0;
        for i in 0..n {
            let mut d: Vec<f64> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (&points.row(i) - &points.row(j)).mapv(|x| x * x).sum().sqrt())
                .collect();
            d.sort_by(f64::total_cmp);
            let s: f64 = (0..k - 1).map(|j| (d[k - 1] / d[j]).ln()).sum();
            total += (k - 1) as f64 / s;
        }
        total / n as f64
    }

    fn cloud(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, d), || StandardNormal.sample(&mut rng))
    }

    #[test]
    fn matches_naive_formula() {
        let p = cloud(120, 4, 1);
        let got = estimate_dim(p.view(), 5, 8).unwrap();
        let want = (5..=8).map(|k| naive(&p, k)).sum::<f64>() / 4.0;
        assert!((got.g_hat - want).abs() < 1e-10, "{} vs {want}", got.g_hat);
    }

    #[test]
    fn line_segment_in_ten_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = Uniform::new(0.0, 1.0).unwrap();
        let dir = cloud(1, 10, 3);
        let dir = &dir / dir.mapv(|x| x * x).sum().sqrt();
        let p = Array2::from_shape_fn((2000, 10), |_| 0.0);
        let mut p = p;
        for mut row in p.rows_mut() {
            let t: f64 = u.sample(&mut rng);
            row.assign(&(&dir.row(0) * t));
        }
        let est = estimate_dim(p.view(), DEFAULT_K_MIN, DEFAULT_K_MAX).unwrap();
        assert!((0.8..=1.3).contains(&est.g_hat), "{}", est.g_hat);
        assert_eq!(est.g_rounded, 1);
        assert_eq!(est.mood_dim(), 2);
    }

    #[test]
    fn scale_and_translation_invariant() {
        let p = cloud(300, 6, 4);
        let base = estimate_dim(p.view(), 10, 20).unwrap().g_hat;
        let moved = (&p * 37.5) + 3.0;
        let other = estimate_dim(moved.view(), 10, 20).unwrap().g_hat;
        assert!((base - other).abs() < 1e-9 * base.abs());
    }

    #[test]
    fn argument_errors() {
        let p = cloud(20, 3, 5);
        assert!(estimate_dim(p.view(), 2, 10).is_err());
        assert!(estimate_dim(p.view(), 10, 9).is_err());
        assert!(estimate_dim(p.view(), 10, 20).is_err());
    }

    #[test]
    fn duplicates_are_skipped_but_counted_against_k() {
        let mut p = cloud(30, 3, 6);
        let first = p.row(0).to_owned();
        p.row_mut(1).assign(&first);
        assert!(estimate_dim(p.view(), 5, 10).is_ok());
        // 25 copies of one point: each copy has only 5 distinct neighbors.
        let mut q = cloud(30, 3, 7);
        for i in 1..25 {
            q.row_mut(i).assign(&first);
        }
        q.row_mut(0).assign(&first);
        assert!(matches!(
            estimate_dim(q.view(), 5, 10),
            Err(Error::NotEnoughNeighbors { .. })
        ));
    }
}
