//! Dense symmetric eigendecomposition and top-k spectral embeddings.

use ndarray::{s, Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Eigengaps below this are treated as ties: the projector across the cut is
/// still returned, but it is not differentiable there.
pub const DEGENERATE_GAP: f64 = 1e-10;

/// Relative asymmetry accepted by the solvers.
pub const SYMMETRY_TOL: f64 = 1e-8;

/// Full eigendecomposition of a symmetric matrix, eigenvalues in
/// non-increasing order, eigenvectors in the matching columns.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

impl SymEigen {
    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Keep the leading `k` eigenpairs.
    pub fn truncate(&self, k: usize) -> Result<SpectralEmbedding> {
        let n = self.n();
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!("k = {k} must lie in 1..={n}")));
        }
        Ok(SpectralEmbedding {
            vectors: self.vectors.slice(s![.., ..k]).to_owned(),
            values: self.values.slice(s![..k]).to_owned(),
            eigengap_at_cut: (k < n).then(|| self.values[k - 1] - self.values[k]),
        })
    }
}

/// The top-`k` eigenpairs of a symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEmbedding {
    /// `n x k`, orthonormal columns.
    pub vectors: Array2<f64>,
    /// Non-increasing.
    pub values: Array1<f64>,
    /// `values[k-1] - values[k]` when the decomposition had more than `k` pairs.
    pub eigengap_at_cut: Option<f64>,
}

impl SpectralEmbedding {
    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }

    /// Gap between eigenvalue `i` and `i + 1` (1-based prefix size `i`).
    pub fn prefix_gap(&self, i: usize) -> Option<f64> {
        if i == 0 || i > self.k() {
            None
        } else if i < self.k() {
            Some(self.values[i - 1] - self.values[i])
        } else {
            self.eigengap_at_cut
        }
    }

    /// True when the prefix cut at `i` sits on a (near-)tie.
    pub fn is_degenerate_prefix(&self, i: usize) -> bool {
        self.prefix_gap(i).is_some_and(|g| g < DEGENERATE_GAP)
    }

    pub fn projector(&self, i: usize) -> Result<Array2<f64>> {
        projector(self, i)
    }
}

fn check_symmetric(s: ArrayView2<'_, f64>) -> Result<()> {
    let (n, m) = s.dim();
    if n != m {
        return Err(Error::Shape(format!("matrix is {n}x{m}, expected square")));
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("matrix"));
    }
    let scale = s.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((s[[i, j]] - s[[j, i]]).abs());
        }
    }
    if worst > SYMMETRY_TOL * scale {
        return Err(Error::Asymmetric(worst));
    }
    Ok(())
}

/// Full decomposition via a dense tridiagonal solver. Each eigenvector is
/// signed so that its largest-magnitude entry (lowest index on ties) is
/// positive, which makes the output independent of solver sign choices.
pub fn sym_eigen(s: ArrayView2<'_, f64>) -> Result<SymEigen> {
    check_symmetric(s)?;
    let n = s.nrows();
    if n == 0 {
        return Err(Error::Shape("empty matrix".into()));
    }
    let mat = faer::Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (s[[i, j]] + s[[j, i]]));
    let evd = mat
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let u = evd.U();
    let diag = evd.S().column_vector();

    // faer returns ascending order.
    let mut values = Array1::zeros(n);
    let mut vectors = Array2::zeros((n, n));
    for c in 0..n {
        let src = n - 1 - c;
        values[c] = diag[src];
        let mut pivot = 0;
        for r in 0..n {
            if u[(r, src)].abs() > u[(pivot, src)].abs() {
                pivot = r;
            }
        }
        let sign = if u[(pivot, src)] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[[r, c]] = sign * u[(r, src)];
        }
    }
    Ok(SymEigen { values, vectors })
}

/// The `k` largest-eigenvalue eigenpairs of the symmetric matrix `s`.
///
/// The matrix is used as given; affinity matrices should be passed through
/// [`AffinityMatrix::symmetric_normalized`](super::AffinityMatrix::symmetric_normalized)
/// first.
pub fn top_k_eigs(s: ArrayView2<'_, f64>, k: usize) -> Result<SpectralEmbedding> {
    let n = s.nrows();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} must lie in 1..={n}")));
    }
    sym_eigen(s)?.truncate(k)
}

/// `P_i = E[:, :i] E[:, :i]^T`, the orthogonal projector onto the top-`i`
/// eigenvector subspace.
pub fn projector(e: &SpectralEmbedding, i: usize) -> Result<Array2<f64>> {
    if i > e.k() {
        return Err(Error::InvalidArgument(format!(
            "prefix {i} exceeds the {} available eigenvectors",
            e.k()
        )));
    }
    let block = e.vectors.slice(s![.., ..i]);
    Ok(block.dot(&block.t()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn diagonal_matrix() {
        let s = array![[3.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 1.0]];
        let e = top_k_eigs(s.view(), 2).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] - 2.0).abs() < 1e-14);
        assert!((e.vectors[[0, 0]].abs() - 1.0).abs() < 1e-14);
        assert!((e.vectors[[1, 1]].abs() - 1.0).abs() < 1e-14);
        assert_eq!(e.eigengap_at_cut.map(|g| (g - 1.0).abs() < 1e-14), Some(true));
    }

    #[test]
    fn rejects_asymmetric_and_oversized_k() {
        let s = array![[1.0, 2.0], [0.0, 1.0]];
        assert!(matches!(top_k_eigs(s.view(), 1), Err(Error::Asymmetric(_))));
        let s = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(top_k_eigs(s.view(), 3).is_err());
        assert!(top_k_eigs(s.view(), 0).is_err());
    }

    #[test]
    fn full_basis_projector_is_identity() {
        let s = array![[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]];
        let e = top_k_eigs(s.view(), 3).unwrap();
        let p = e.projector(3).unwrap();
        for ((i, j), v) in p.indexed_iter() {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-12);
        }
        assert!(e.projector(4).is_err());
    }

    #[test]
    fn tie_at_cut_is_flagged() {
        let s = array![[2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let e = top_k_eigs(s.view(), 2).unwrap();
        assert!(!e.is_degenerate_prefix(1));
        assert!(e.is_degenerate_prefix(2));
        // The projector is still produced.
        assert!(e.projector(2).is_ok());
    }
}
