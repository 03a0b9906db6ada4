//! Per-image spectral token clustering and cross-image cluster matching.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::affinity::{squared_distances, AffinityParams};
use super::eigen::top_k_eigs;
use crate::error::{Error, Result};

pub const KMEANS_MAX_ITERS: usize = 100;
pub const KMEANS_RESEEDS: usize = 5;

/// Token cluster labels (0-based) and feature-space centroids for a group of
/// images, plus an optional cluster correspondence between two of them.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenClusterMap {
    pub h: usize,
    /// `labels[image][token]` in `0..h`.
    pub labels: Vec<Vec<usize>>,
    /// `centroids[image]` is `h x dim`.
    pub centroids: Vec<Array2<f64>>,
    /// Cluster `i` of the source image maps to `correspondence[i]`.
    pub correspondence: Option<Vec<usize>>,
}

/// Cluster every image's tokens separately into `h` groups.
pub fn spectral_cluster(
    images: &[ArrayView2<'_, f64>],
    h: usize,
    seed: u64,
) -> Result<TokenClusterMap> {
    let mut labels = Vec::with_capacity(images.len());
    let mut centroids = Vec::with_capacity(images.len());
    for feats in images {
        let (l, c) = cluster_image(*feats, h, seed)?;
        labels.push(l);
        centroids.push(c);
    }
    Ok(TokenClusterMap {
        h,
        labels,
        centroids,
        correspondence: None,
    })
}

/// Labels and original-space centroids for one image's tokens.
pub fn cluster_image(
    feats: ArrayView2<'_, f64>,
    h: usize,
    seed: u64,
) -> Result<(Vec<usize>, Array2<f64>)> {
    let n = feats.nrows();
    if h == 0 || h > n {
        return Err(Error::InvalidArgument(format!(
            "cluster count {h} must lie in 1..={n} (tokens per image)"
        )));
    }
    let labels = if h == 1 {
        vec![0; n]
    } else {
        let affinity = AffinityParams::default().build(feats)?;
        let embedding = top_k_eigs(affinity.symmetric_normalized().view(), h)?;
        let mut rows = embedding.vectors;
        for mut row in rows.rows_mut() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
            }
        }
        kmeans(rows.view(), h, seed)?
    };
    let centroids = centroids_of(feats, &labels, h);
    Ok((labels, centroids))
}

fn centroids_of(feats: ArrayView2<'_, f64>, labels: &[usize], h: usize) -> Array2<f64> {
    let mut sums = Array2::zeros((h, feats.ncols()));
    let mut counts = vec![0usize; h];
    for (row, &l) in feats.rows().into_iter().zip(labels) {
        let mut target = sums.row_mut(l);
        target += &row;
        counts[l] += 1;
    }
    for (mut row, &c) in sums.rows_mut().into_iter().zip(&counts) {
        if c > 0 {
            row.mapv_inplace(|v| v / c as f64);
        }
    }
    sums
}

fn nearest(point: ndarray::ArrayView1<'_, f64>, centers: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, center) in centers.rows().into_iter().enumerate() {
        let d: f64 = point.iter().zip(center.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp_init(points: ArrayView2<'_, f64>, h: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centers = Array2::zeros((h, points.ncols()));
    centers.row_mut(0).assign(&points.row(rng.random_range(0..n)));
    let mut d2: Array1<f64> = Array1::from_elem(n, f64::INFINITY);
    for c in 1..h {
        let prev = centers.row(c - 1).to_owned();
        for (i, p) in points.rows().into_iter().enumerate() {
            let d: f64 = p.iter().zip(prev.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
            d2[i] = d2[i].min(d);
        }
        let pick = match WeightedIndex::new(d2.iter().copied()) {
            Ok(dist) => dist.sample(rng),
            // Every point already coincides with a center.
            Err(_) => rng.random_range(0..n),
        };
        centers.row_mut(c).assign(&points.row(pick));
    }
    centers
}

/// Seeded k-means++ / Lloyd. Re-seeds when a cluster ends up empty.
pub fn kmeans(points: ArrayView2<'_, f64>, h: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.nrows();
    for attempt in 0..=KMEANS_RESEEDS as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9)));
        let mut centers = kmeans_pp_init(points, h, &mut rng);
        let mut labels = vec![usize::MAX; n];
        for _ in 0..KMEANS_MAX_ITERS {
            let mut changed = false;
            for (i, p) in points.rows().into_iter().enumerate() {
                let (c, _) = nearest(p, &centers);
                if labels[i] != c {
                    labels[i] = c;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            let fresh = centroids_of(points, &labels, h);
            let mut counts = vec![0usize; h];
            for &l in &labels {
                counts[l] += 1;
            }
            for c in 0..h {
                if counts[c] > 0 {
                    centers.row_mut(c).assign(&fresh.row(c));
                }
            }
        }
        let mut counts = vec![0usize; h];
        for &l in &labels {
            counts[l] += 1;
        }
        if counts.iter().all(|&c| c > 0) {
            return Ok(labels);
        }
    }
    Err(Error::Clustering(format!(
        "empty cluster persisted after {KMEANS_RESEEDS} re-seeds (h = {h}, n = {n})"
    )))
}

/// `P(i) = argmax_j affinity(src_i, dst_j)`, lowest `j` on ties. The argmax
/// is taken on the log-affinity `ln kappa - d^2 / h` so distant centroids
/// do not underflow into spurious ties.
pub fn match_clusters(
    src: ArrayView2<'_, f64>,
    dst: ArrayView2<'_, f64>,
    params: &AffinityParams,
) -> Result<Vec<usize>> {
    if src.ncols() != dst.ncols() || src.nrows() != dst.nrows() {
        return Err(Error::Shape(format!(
            "centroid sets differ: {:?} vs {:?}",
            src.dim(),
            dst.dim()
        )));
    }
    let both = ndarray::concatenate(Axis(0), &[src, dst]).map_err(|e| Error::Shape(e.to_string()))?;
    let h = match params.resolve_bandwidth(both.view()) {
        Ok(h) => h,
        // All centroids coincide: every affinity is equal.
        Err(Error::DegenerateBandwidth) => 1.0,
        Err(e) => return Err(e),
    };
    let sq = squared_distances(both.view());
    let k = src.nrows();
    let log_kappa = params.kappa.ln();
    Ok((0..k)
        .map(|i| {
            let mut best = (0, f64::NEG_INFINITY);
            for j in 0..k {
                let score = log_kappa - sq[[i, k + j]] / h;
                if score > best.1 {
                    best = (j, score);
                }
            }
            best.0
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{s, Array2};
    use rand_distr::StandardNormal;

    /// `h` blobs of `per` points in `dim` dims, centers far apart.
    fn blobs(h: usize, per: usize, dim: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = Array2::from_shape_fn((h, dim), |_| 20.0 * rng.sample::<f64, _>(StandardNormal));
        let mut pts = Array2::zeros((h * per, dim));
        let mut truth = Vec::new();
        // interleave so blob ids are not contiguous
        for i in 0..h * per {
            let b = i % h;
            for d in 0..dim {
                pts[[i, d]] = centers[[b, d]] + 0.1 * rng.sample::<f64, _>(StandardNormal);
            }
            truth.push(b);
        }
        (pts, truth)
    }

    /// Two labelings agree up to a bijective relabeling.
    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        let mut fwd = std::collections::HashMap::new();
        let mut bwd = std::collections::HashMap::new();
        a.iter().zip(b).all(|(x, y)| {
            *fwd.entry(x).or_insert(y) == y && *bwd.entry(y).or_insert(x) == x
        })
    }

    #[test]
    fn recovers_separated_blobs() {
        for seed in 0..3 {
            let (pts, truth) = blobs(4, 16, 5, seed);
            let (labels, centroids) = cluster_image(pts.view(), 4, seed).unwrap();
            assert!(same_partition(&labels, &truth), "seed {seed}");
            assert_eq!(centroids.dim(), (4, 5));
        }
    }

    #[test]
    fn single_cluster_centroid_is_mean() {
        let (pts, _) = blobs(3, 5, 2, 1);
        let (labels, centroids) = cluster_image(pts.view(), 1, 0).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
        let mean = pts.mean_axis(Axis(0)).unwrap();
        for (a, b) in centroids.row(0).iter().zip(mean.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_images_cluster_identically() {
        let (pts, _) = blobs(3, 10, 4, 2);
        let map = spectral_cluster(&[pts.view(), pts.view()], 3, 9).unwrap();
        assert_eq!(map.labels[0], map.labels[1]);
        assert_eq!(map.centroids[0], map.centroids[1]);
    }

    #[test]
    fn too_many_clusters_rejected() {
        let (pts, _) = blobs(2, 3, 2, 0);
        assert!(cluster_image(pts.view(), 7, 0).is_err());
    }

    #[test]
    fn clustering_is_deterministic() {
        let (pts, _) = blobs(5, 8, 3, 4);
        let a = cluster_image(pts.view(), 5, 13).unwrap();
        let b = cluster_image(pts.view(), 5, 13).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn match_identity_and_reversal() {
        let (c, _) = blobs(6, 1, 3, 8);
        let params = AffinityParams::default();
        assert_eq!(match_clusters(c.view(), c.view(), &params).unwrap(), (0..6).collect::<Vec<_>>());
        let rev = c.slice(s![..;-1, ..]).to_owned();
        assert_eq!(
            match_clusters(c.view(), rev.view(), &params).unwrap(),
            (0..6).rev().collect::<Vec<_>>()
        );
    }

    #[test]
    fn match_agrees_with_exhaustive_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let params = AffinityParams { kappa: 2.0, bandwidth: crate::spectral::Bandwidth::Fixed(4.0) };
        for _ in 0..10 {
            let a = Array2::from_shape_simple_fn((10, 4), || rng.sample::<f64, _>(StandardNormal));
            let b = Array2::from_shape_simple_fn((10, 4), || rng.sample::<f64, _>(StandardNormal));
            let got = match_clusters(a.view(), b.view(), &params).unwrap();
            for i in 0..10 {
                let aff: Vec<f64> = (0..10)
                    .map(|j| 2.0 * (-(&a.row(i) - &b.row(j)).mapv(|x| x * x).sum() / 4.0).exp())
                    .collect();
                let mut best = 0;
                for j in 1..10 {
                    if aff[j] > aff[best] {
                        best = j;
                    }
                }
                assert_eq!(got[i], best);
            }
        }
    }

    #[test]
    fn match_shape_mismatch() {
        let a = Array2::<f64>::zeros((3, 2));
        let b = Array2::<f64>::zeros((4, 2));
        assert!(match_clusters(a.view(), b.view(), &AffinityParams::default()).is_err());
    }
}
