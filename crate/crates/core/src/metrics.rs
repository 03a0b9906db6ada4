//! Embedding-uniformity entropies and eigenvector image exports.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::spectral::{sym_eigen, SpectralEmbedding};

/// Principal components kept for the PCA entropies.
pub const PCA_DIMS: usize = 250;
/// Histogram bins per coordinate for the coordinate entropies.
pub const HIST_BINS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UniformityReport {
    /// Mean normalized histogram entropy of the raw coordinates.
    pub entropy_raw: f64,
    /// Same, after projecting onto the retained principal components.
    pub entropy_pca: f64,
    /// Normalized Shannon entropy of the retained PCA eigenvalues.
    pub entropy_eigvals: f64,
    pub n_points: usize,
    pub dims: usize,
    pub pca_dims: usize,
    pub bins: usize,
    pub estimator: String,
}

/// Normalized entropy `-sum p ln p / ln r` of a non-negative spectrum.
pub fn eigenvalue_entropy(values: ArrayView1<'_, f64>) -> f64 {
    let r = values.len();
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    if r < 2 || !(total > 0.0) {
        return 0.0;
    }
    let h: f64 = values
        .iter()
        .map(|v| v.max(0.0) / total)
        .filter(|&p| p > 0.0)
        .map(|p| -p * p.ln())
        .sum();
    (h / (r as f64).ln()).clamp(0.0, 1.0)
}

/// Histogram entropy of one coordinate over `bins` equal-width bins spanning
/// its observed range, normalized by `ln bins`. Constant coordinates score 0.
pub fn histogram_entropy(values: ArrayView1<'_, f64>, bins: usize) -> f64 {
    let n = values.len();
    if n == 0 || bins < 2 {
        return 0.0;
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return 0.0;
    }
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = (((v - lo) / (hi - lo)) * bins as f64) as usize;
        counts[b.min(bins - 1)] += 1;
    }
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.ln()
        })
        .sum();
    h / (bins as f64).ln()
}

fn mean_histogram_entropy(x: ArrayView2<'_, f64>, bins: usize) -> f64 {
    if x.ncols() == 0 {
        return 0.0;
    }
    x.columns().into_iter().map(|c| histogram_entropy(c, bins)).sum::<f64>() / x.ncols() as f64
}

/// Centered data, its top principal directions (`d x r`) and variances.
fn pca(x: ArrayView2<'_, f64>, r: usize) -> Result<(Array2<f64>, Array2<f64>, Array1<f64>)> {
    let n = x.nrows();
    let mean = x.mean_axis(Axis(0)).expect("n > 0");
    let centered = &x - &mean;
    let cov = centered.t().dot(&centered) / (n.max(2) - 1) as f64;
    let eig = sym_eigen(cov.view())?;
    let dirs = eig.vectors.slice(ndarray::s![.., ..r]).to_owned();
    let vars = eig.values.slice(ndarray::s![..r]).mapv(|v| v.max(0.0));
    Ok((centered, dirs, vars))
}

pub fn uniformity(points: ArrayView2<'_, f64>) -> Result<UniformityReport> {
    let (n, d) = points.dim();
    if n < 2 || d == 0 {
        return Err(Error::InvalidArgument(format!("uniformity needs at least 2 points in >= 1 dims, got {n} x {d}")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("points"));
    }
    let r = PCA_DIMS.min(d).min(n - 1);
    let (centered, dirs, vars) = pca(points, r)?;
    let projected = centered.dot(&dirs);
    Ok(UniformityReport {
        entropy_raw: mean_histogram_entropy(points, HIST_BINS),
        entropy_pca: mean_histogram_entropy(projected.view(), HIST_BINS),
        entropy_eigvals: eigenvalue_entropy(vars.view()),
        n_points: n,
        dims: d,
        pca_dims: r,
        bins: HIST_BINS,
        estimator: format!(
            "coordinate entropy: {HIST_BINS}-bin histogram over observed range per dimension, \
             normalized by ln {HIST_BINS}, averaged over dimensions; eigenvalue entropy over top \
             {r} covariance eigenvalues normalized by ln {r}"
        ),
    })
}

/// Layout of an embedding set for eigenvector export.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridLayout {
    pub n_images: usize,
    pub tokens_per_image: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl GridLayout {
    fn validate(&self, n: usize) -> Result<()> {
        let grid = self.grid_h * self.grid_w;
        if grid == 0 || self.tokens_per_image < grid || self.tokens_per_image > grid + 1 {
            return Err(Error::Shape(format!(
                "{} tokens per image do not fit a {}x{} grid",
                self.tokens_per_image, self.grid_h, self.grid_w
            )));
        }
        if self.n_images * self.tokens_per_image != n {
            return Err(Error::Shape(format!(
                "{n} eigenvector entries, layout expects {} x {}",
                self.n_images, self.tokens_per_image
            )));
        }
        Ok(())
    }
}

fn to_gray(v: f64, lo: f64, hi: f64) -> u8 {
    if !(hi > lo) {
        return 128;
    }
    ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Write every eigenvector as one grayscale PGM and one CSV per image.
///
/// Grid tokens come first in each image; a trailing class token is left
/// out. Gray levels map the eigenvector's range over all images to
/// `[0, 255]`, so images are comparable; a constant vector is mid-gray.
/// Returns the written paths.
pub fn export_eigvec_grids(e: &SpectralEmbedding, layout: GridLayout, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    layout.validate(e.n())?;
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir)?;
    let grid = layout.grid_h * layout.grid_w;
    let mut written = Vec::new();
    for j in 0..e.k() {
        let col = e.vectors.column(j);
        let grid_values = (0..layout.n_images)
            .flat_map(|i| (0..grid).map(move |t| i * layout.tokens_per_image + t))
            .map(|idx| col[idx]);
        let (lo, hi) = grid_values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        for i in 0..layout.n_images {
            let base = i * layout.tokens_per_image;
            let values = col.slice(ndarray::s![base..base + grid]);

            let mut pgm = format!("P5\n{} {}\n255\n", layout.grid_w, layout.grid_h).into_bytes();
            pgm.extend(values.iter().map(|&v| to_gray(v, lo, hi)));
            let pgm_path = dir.join(format!("eig{j:02}_img{i:03}.pgm"));
            fs::write(&pgm_path, pgm)?;

            let mut csv = String::new();
            for row in 0..layout.grid_h {
                let line: Vec<String> = (0..layout.grid_w)
                    .map(|c| format!("{}", values[row * layout.grid_w + c]))
                    .collect();
                csv.push_str(&line.join(","));
                csv.push('\n');
            }
            let csv_path = dir.join(format!("eig{j:02}_img{i:03}.csv"));
            fs::write(&csv_path, csv)?;
            written.push(pgm_path);
            written.push(csv_path);
        }
    }
    Ok(written)
}

/// Read back a grid CSV written by [`export_eigvec_grids`].
pub fn read_grid_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path)?;
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|e| Error::InvalidMetadata(format!("bad CSV value {v:?}: {e}"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(Error::Shape("ragged CSV grid".into()));
    }
    Array2::from_shape_vec((h, w), rows.into_iter().flatten().collect()).map_err(|e| Error::Shape(e.to_string()))
}
