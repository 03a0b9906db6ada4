//! Dense matrix products through faer's kernel, which is markedly faster
//! than ndarray's generic one for the 512-wide products in the training loop.

use ndarray::{Array2, ArrayView2};

/// `op(a) · op(b)` where `op` optionally transposes.
pub(crate) fn gemm(a: ArrayView2<'_, f64>, ta: bool, b: ArrayView2<'_, f64>, tb: bool) -> Array2<f64> {
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let fa = faer::MatRef::from_row_major_slice(a.as_slice().expect("standard layout"), a.nrows(), a.ncols());
    let fb = faer::MatRef::from_row_major_slice(b.as_slice().expect("standard layout"), b.nrows(), b.ncols());
    let fa = if ta { fa.transpose() } else { fa };
    let fb = if tb { fb.transpose() } else { fb };
    let (rows, cols) = (fa.nrows(), fb.ncols());
    let mut out = Array2::<f64>::zeros((rows, cols));
    let dst = faer::MatMut::from_row_major_slice_mut(out.as_slice_mut().expect("fresh array"), rows, cols);
    faer::linalg::matmul::matmul(dst, faer::Accum::Replace, fa, fb, 1.0, faer::Par::Seq);
    out
}
