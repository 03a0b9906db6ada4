//! Spectral graph embedding loss.
//!
//! For each prefix size `i`, compare the rank-`i` projectors onto the top
//! eigenvectors of the target affinity and of the affinity built from the
//! Mood-Space points:
//!
//! ```text
//! L = sum_i || P_i(target) - P_i(M) ||_F^2
//! ```
//!
//! Projectors are invariant to any rotation inside the top-`i` block, so only
//! the subspace matters. The gradient flows back through the symmetric
//! eigendecomposition with first-order perturbation theory. Only pairs
//! straddling the cut contribute, since rotations inside either block leave
//! the projector unchanged:
//!
//! ```text
//! dP_i = sum_{a <= i < b} (u_b^T dS u_a) / (lambda_a - lambda_b) (u_a u_b^T + u_b u_a^T)
//! ```
//!
//! and then through the degree normalization, the RBF kernel, and (for
//! median bandwidths) the pair that sets `h`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::dense::gemm;
use crate::error::{Error, Result};
use crate::spectral::{
    affinity_from_sq_dists, bandwidth_pairs, squared_distances, sym_eigen, AffinityParams,
    Bandwidth, SpectralEmbedding, DEGENERATE_GAP,
};

/// Doubling prefixes `4, 8, 16, ...` capped by `k`, always ending at `k`.
pub fn default_prefixes(k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 4;
    while i < k {
        out.push(i);
        i *= 2;
    }
    if k > 0 {
        out.push(k);
    }
    out
}

#[derive(Debug, Clone)]
pub struct SpectralLoss {
    pub value: f64,
    /// `(prefix, loss_i)` in the order the prefixes were given.
    pub per_prefix: Vec<(usize, f64)>,
    /// `dL/dM`, same shape as the points.
    pub grad: Array2<f64>,
    /// Prefixes whose eigengap fell below [`DEGENERATE_GAP`]; their value is
    /// counted but their gradient is dropped.
    pub degenerate_prefixes: Vec<usize>,
    /// Bandwidth used for the Mood-Space affinity.
    pub h: f64,
}

pub fn spectral_loss(
    target: &SpectralEmbedding,
    points: ArrayView2<'_, f64>,
    params: &AffinityParams,
    prefixes: &[usize],
) -> Result<SpectralLoss> {
    let n = points.nrows();
    if target.n() != n {
        return Err(Error::Shape(format!(
            "target embedding has {} nodes, points have {n}",
            target.n()
        )));
    }
    let max_prefix = prefixes.iter().copied().max().unwrap_or(0);
    if prefixes.is_empty() || prefixes.contains(&0) {
        return Err(Error::InvalidArgument("prefixes must be non-empty and positive".into()));
    }
    if max_prefix > n {
        return Err(Error::InvalidArgument(format!(
            "largest prefix {max_prefix} exceeds point count {n}"
        )));
    }
    if max_prefix > target.k() {
        return Err(Error::InvalidArgument(format!(
            "largest prefix {max_prefix} exceeds the {} target eigenvectors",
            target.k()
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("mood-space points"));
    }

    let sq = squared_distances(points);
    let (h, median) = match params.bandwidth {
        Bandwidth::Median { scale } => {
            let mp = bandwidth_pairs(&sq)?;
            (scale * mp.value, Some((scale, mp)))
        }
        Bandwidth::Fixed(h) => (h, None),
    };
    if !(h > 0.0 && h.is_finite()) || !(params.kappa > 0.0) {
        return Err(Error::InvalidArgument(format!("invalid kernel: kappa {}, h {h}", params.kappa)));
    }
    let affinity = affinity_from_sq_dists(&sq, params.kappa, h);
    let sym = affinity.symmetric_normalized();
    let eig = sym_eigen(sym.view())?;

    let mut value = 0.0;
    let mut per_prefix = Vec::with_capacity(prefixes.len());
    let mut degenerate_prefixes = Vec::new();
    // dL/dS for the symmetric normalized affinity (not yet symmetrized).
    let mut grad_s = Array2::<f64>::zeros((n, n));

    for &i in prefixes {
        let t = target.vectors.slice(s![.., ..i]);
        let e = eig.vectors.slice(s![.., ..i]);
        // ||T T^T - E E^T||^2 = 2i - 2 ||T^T E||^2 for orthonormal blocks;
        // computed densely instead to keep the value exact near cancellation.
        let diff = gemm(t, false, t, true) - gemm(e, false, e, true);
        let loss_i = diff.iter().map(|v| v * v).sum::<f64>();
        value += loss_i;
        per_prefix.push((i, loss_i));

        if i == n {
            continue;
        }
        let gap = eig.values[i - 1] - eig.values[i];
        if gap < DEGENERATE_GAP {
            degenerate_prefixes.push(i);
            continue;
        }
        // G = dL/dP_M = -2 (T T^T - E E^T); with E^T E E^T U_rest = 0,
        // C = E^T G U_rest = -2 (E^T T)(T^T U_rest).
        let rest = eig.vectors.slice(s![.., i..]);
        let et = gemm(e, true, t, false);
        let t_rest = gemm(t, true, rest, false);
        let mut coef = gemm(et.view(), false, t_rest.view(), false) * -2.0;
        for a in 0..i {
            for b in 0..(n - i) {
                coef[[a, b]] /= eig.values[a] - eig.values[i + b];
            }
        }
        // dL/dS += 2 * U_rest F^T E^T
        let x = gemm(gemm(rest, false, coef.view(), true).view(), false, e, true);
        grad_s.scaled_add(2.0, &x);
    }

    let grad_s = (&grad_s + &grad_s.t()) * 0.5;
    let grad = backprop_affinity(points, &sq, &affinity.raw, &affinity.degrees, &sym, &grad_s, h, median);

    Ok(SpectralLoss {
        value,
        per_prefix,
        grad,
        degenerate_prefixes,
        h,
    })
}

/// Chain a symmetric `dL/dS_sym` through `S_sym = D^{-1/2} K D^{-1/2}`,
/// `K = kappa exp(-q / h)` and `q_ij = |m_i - m_j|^2` down to the points.
#[allow(clippy::too_many_arguments)]
fn backprop_affinity(
    points: ArrayView2<'_, f64>,
    sq: &Array2<f64>,
    raw: &Array2<f64>,
    degrees: &Array1<f64>,
    sym: &Array2<f64>,
    grad_sym: &Array2<f64>,
    h: f64,
    median: Option<(f64, crate::spectral::MedianPairs)>,
) -> Array2<f64> {
    let n = points.nrows();
    let inv_sqrt = degrees.mapv(|d| 1.0 / d.sqrt());
    // dL/dd_j = -(1/d_j) sum_l G_jl S_jl
    let grad_deg: Array1<f64> = (grad_sym * sym).sum_axis(Axis(1)) / degrees * -1.0;

    // dL/dK_jl = G_jl s_j s_l + dL/dd_j
    let mut grad_k = grad_sym.clone();
    for ((j, l), v) in grad_k.indexed_iter_mut() {
        *v = *v * inv_sqrt[j] * inv_sqrt[l] + grad_deg[j];
    }

    // Coefficients on each unordered pair's squared distance, stored
    // symmetrically with a zero diagonal.
    let mut grad_q = Array2::<f64>::zeros((n, n));
    let mut grad_h = 0.0;
    for j in 0..n {
        for l in (j + 1)..n {
            let k = raw[[j, l]];
            let both = grad_k[[j, l]] + grad_k[[l, j]];
            let c = -both * k / h;
            grad_q[[j, l]] = c;
            grad_q[[l, j]] = c;
            grad_h += both * k * sq[[j, l]] / (h * h);
        }
    }
    if let Some((scale, mp)) = median {
        for (j, l, w) in mp.pairs {
            let c = grad_h * scale * w;
            grad_q[[j, l]] += c;
            grad_q[[l, j]] += c;
        }
    }

    // dL/dm_j = 2 sum_l c_jl (m_j - m_l)
    let row_sums = grad_q.sum_axis(Axis(1));
    let mut grad = grad_q.dot(&points) * -2.0;
    for (mut row, (&rs, p)) in grad
        .rows_mut()
        .into_iter()
        .zip(row_sums.iter().zip(points.rows()))
    {
        row.scaled_add(2.0 * rs, &p);
    }
    grad
}
