//! Path algebra in Mood Space.
//!
//! A straight Mood-Space segment `m(t) = m_A1 + t (m_A2 - m_A1)` is lifted to
//! W by decoding the code difference once and re-anchoring the slope:
//!
//! ```text
//! w(t) = w_A1 + t * sigma_W(m_A2 - m_A1)
//! ```
//!
//! Re-anchoring the same slope at a different image's embedding gives the
//! visual analogy `A1 : A2 :: B1 : B2`. The image-level variant assigns each
//! token the drift of its matched cluster.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::MoodSpaceModel;
use crate::spectral::{match_clusters, spectral_cluster, AffinityParams, TokenClusterMap};

/// Default number of token clusters per image for image paths.
pub const DEFAULT_CLUSTERS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PathMode {
    Connect,
    Analogy,
    ImagePath,
}

/// How a Mood-Space path is carried into W.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Lifting {
    /// `w(t) = anchor + t * sigma_W(m_A2 - m_A1)`.
    Literal,
    /// `w(t) = sigma_W(m(t))`, decoding every point of the path.
    DecodeAlongPath,
    /// Piecewise lifting over `q` equal segments.
    Segmented { q: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftedPath {
    pub t_samples: Vec<f64>,
    /// `len(t) x G`.
    pub m_path: Array2<f64>,
    /// `len(t) x D_w`.
    pub w_path: Array2<f64>,
    pub anchor_w: Array1<f64>,
    pub mode: PathMode,
    pub lifting: Lifting,
    /// Some sample lies outside `[0, 1]`.
    pub extrapolated: bool,
}

/// `n` evenly spaced samples covering `[0, 1]`; a single sample is `t = 0`.
pub fn linspace_t(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

fn check_t(t: &[f64]) -> Result<bool> {
    if t.is_empty() || t.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument("t samples must be non-empty and finite".into()));
    }
    Ok(t.iter().any(|&x| !(0.0..=1.0).contains(&x)))
}

fn check_rows(model: &MoodSpaceModel, m1: ArrayView2<'_, f64>, m2: ArrayView2<'_, f64>, w: ArrayView2<'_, f64>) -> Result<()> {
    let g = model.g();
    if m1.ncols() != g || m2.ncols() != g {
        return Err(Error::Shape(format!("codes must have dimension G = {g}")));
    }
    if w.ncols() != model.output_dim_w() {
        return Err(Error::Shape(format!(
            "anchor has dimension {}, model decodes to {}",
            w.ncols(),
            model.output_dim_w()
        )));
    }
    if m1.nrows() != m2.nrows() || m1.nrows() != w.nrows() {
        return Err(Error::Shape("codes and anchors must have matching row counts".into()));
    }
    Ok(())
}

fn straight_m(m1: ArrayView1<'_, f64>, m2: ArrayView1<'_, f64>, t: &[f64]) -> Array2<f64> {
    let diff = &m2 - &m1;
    let mut out = Array2::zeros((t.len(), m1.len()));
    for (mut row, &ti) in out.rows_mut().into_iter().zip(t) {
        row.assign(&(&m1 + &(&diff * ti)));
    }
    out
}

/// `anchor + t * slope` for each sample.
fn affine_w(anchor: ArrayView1<'_, f64>, slope: ArrayView1<'_, f64>, t: &[f64]) -> Array2<f64> {
    let mut out = Array2::zeros((t.len(), anchor.len()));
    for (mut row, &ti) in out.rows_mut().into_iter().zip(t) {
        for ((o, &a), &s) in row.iter_mut().zip(anchor).zip(slope) {
            *o = a + ti * s;
        }
    }
    out
}

/// Literal lift for a batch of token paths: one decoder call for all slopes.
fn lift_batch(
    model: &MoodSpaceModel,
    anchors: ArrayView2<'_, f64>,
    m1: ArrayView2<'_, f64>,
    m2: ArrayView2<'_, f64>,
    t: &[f64],
    mode: PathMode,
) -> Result<Vec<LiftedPath>> {
    check_rows(model, m1, m2, anchors)?;
    let extrapolated = check_t(t)?;
    let slopes = model.decode_delta((&m2 - &m1).view())?;
    Ok((0..anchors.nrows())
        .map(|r| LiftedPath {
            t_samples: t.to_vec(),
            m_path: straight_m(m1.row(r), m2.row(r), t),
            w_path: affine_w(anchors.row(r), slopes.row(r), t),
            anchor_w: anchors.row(r).to_owned(),
            mode,
            lifting: Lifting::Literal,
            extrapolated,
        })
        .collect())
}

fn single(path: Result<Vec<LiftedPath>>) -> Result<LiftedPath> {
    path.map(|mut v| v.pop().expect("one row in, one path out"))
}

/// Lift the straight path `m_A1 -> m_A2`, anchored at `w_A1`.
pub fn connect(
    model: &MoodSpaceModel,
    w_a1: ArrayView1<'_, f64>,
    m_a1: ArrayView1<'_, f64>,
    m_a2: ArrayView1<'_, f64>,
    t: &[f64],
) -> Result<LiftedPath> {
    single(lift_batch(model, w_a1.insert_axis(Axis(0)), m_a1.insert_axis(Axis(0)), m_a2.insert_axis(Axis(0)), t, PathMode::Connect))
}

/// [`connect`] for many tokens at once (row `r` of each input is one path).
pub fn connect_batch(
    model: &MoodSpaceModel,
    w_a1: ArrayView2<'_, f64>,
    m_a1: ArrayView2<'_, f64>,
    m_a2: ArrayView2<'_, f64>,
    t: &[f64],
) -> Result<Vec<LiftedPath>> {
    lift_batch(model, w_a1, m_a1, m_a2, t, PathMode::Connect)
}

/// The `A1 -> A2` slope re-anchored at `w_B1`.
pub fn analogy(
    model: &MoodSpaceModel,
    w_b1: ArrayView1<'_, f64>,
    m_a1: ArrayView1<'_, f64>,
    m_a2: ArrayView1<'_, f64>,
    t: &[f64],
) -> Result<LiftedPath> {
    single(lift_batch(model, w_b1.insert_axis(Axis(0)), m_a1.insert_axis(Axis(0)), m_a2.insert_axis(Axis(0)), t, PathMode::Analogy))
}

pub fn analogy_batch(
    model: &MoodSpaceModel,
    w_b1: ArrayView2<'_, f64>,
    m_a1: ArrayView2<'_, f64>,
    m_a2: ArrayView2<'_, f64>,
    t: &[f64],
) -> Result<Vec<LiftedPath>> {
    lift_batch(model, w_b1, m_a1, m_a2, t, PathMode::Analogy)
}

/// Decode every point of the straight path instead of re-anchoring a slope.
/// The anchor is the decoded start point.
pub fn decode_along_path_batch(
    model: &MoodSpaceModel,
    m_a1: ArrayView2<'_, f64>,
    m_a2: ArrayView2<'_, f64>,
    t: &[f64],
) -> Result<Vec<LiftedPath>> {
    let extrapolated = check_t(t)?;
    let g = model.g();
    if m_a1.ncols() != g || m_a2.dim() != m_a1.dim() {
        return Err(Error::Shape(format!("codes must be matching n x {g} arrays")));
    }
    (0..m_a1.nrows())
        .map(|r| {
            let m_path = straight_m(m_a1.row(r), m_a2.row(r), t);
            let w_path = model.decode(m_path.view())?;
            // Reuse the t = 0 row when present so the anchor matches it bitwise.
            let anchor_w = match t.iter().position(|&x| x == 0.0) {
                Some(i) => w_path.row(i).to_owned(),
                None => model.decode(m_a1.row(r).insert_axis(Axis(0)))?.row(0).to_owned(),
            };
            Ok(LiftedPath {
                t_samples: t.to_vec(),
                m_path,
                w_path,
                anchor_w,
                mode: PathMode::Connect,
                lifting: Lifting::DecodeAlongPath,
                extrapolated,
            })
        })
        .collect()
}

/// Piecewise lifting over `q` equal segments on the grid `t_j = j / q`:
/// `w(t_{j+1}) = w(t_j) + Delta_j` with `Delta_j` the decoded displacement
/// of the segment's Mood-Space step. `q = 1` reproduces [`connect`] at
/// `t = {0, 1}`.
pub fn segmented_connect(
    model: &MoodSpaceModel,
    m_a1: ArrayView1<'_, f64>,
    m_a2: ArrayView1<'_, f64>,
    w_a1: ArrayView1<'_, f64>,
    q: usize,
) -> Result<LiftedPath> {
    if q == 0 {
        return Err(Error::InvalidArgument("segment count must be at least 1".into()));
    }
    check_rows(model, m_a1.insert_axis(Axis(0)), m_a2.insert_axis(Axis(0)), w_a1.insert_axis(Axis(0)))?;
    let t = linspace_t(q + 1);
    let m_path = straight_m(m_a1, m_a2, &t);
    // Every segment of a straight path has the same step; each is decoded
    // separately so the scheme generalizes to curved code paths.
    let steps = Array2::from_shape_fn((q, m_a1.len()), |(j, c)| m_path[[j + 1, c]] - m_path[[j, c]]);
    let deltas = if q == 1 {
        model.decode_delta((&m_a2 - &m_a1).insert_axis(Axis(0)).view())?
    } else {
        model.decode_delta(steps.view())?
    };
    let mut w_path = Array2::zeros((q + 1, w_a1.len()));
    w_path.row_mut(0).assign(&w_a1);
    for j in 0..q {
        let next = &w_path.row(j) + &deltas.row(j);
        w_path.row_mut(j + 1).assign(&next);
    }
    Ok(LiftedPath {
        t_samples: t,
        m_path,
        w_path,
        anchor_w: w_a1.to_owned(),
        mode: PathMode::Connect,
        lifting: Lifting::Segmented { q },
        extrapolated: false,
    })
}

/// Largest deviation of a path from the chord through its first and last
/// samples, measured at each sample's own `t`.
pub fn collinearity_residual(path: &LiftedPath) -> f64 {
    let t = &path.t_samples;
    let n = t.len();
    if n < 3 {
        return 0.0;
    }
    let (t0, t1) = (t[0], t[n - 1]);
    let w0 = path.w_path.row(0);
    let chord = &path.w_path.row(n - 1) - &w0;
    (0..n)
        .map(|i| {
            let frac = (t[i] - t0) / (t1 - t0);
            let expect = &w0 + &(&chord * frac);
            (&path.w_path.row(i) - &expect).iter().fold(0.0f64, |a, d| a.max(d.abs()))
        })
        .fold(0.0, f64::max)
}

/// `|| B2 - B2' ||` for `B2 = w_B1 + sigma(m_A2 - m_A1)` and the swapped
/// composition `B2' = w_A2 + sigma(m_B1 - m_A1)`. A diagnostic: the two
/// routes need not agree exactly.
pub fn path_consistency(
    model: &MoodSpaceModel,
    w_b1: ArrayView1<'_, f64>,
    w_a2: ArrayView1<'_, f64>,
    m_a1: ArrayView1<'_, f64>,
    m_a2: ArrayView1<'_, f64>,
    m_b1: ArrayView1<'_, f64>,
) -> Result<f64> {
    let b2 = analogy(model, w_b1, m_a1, m_a2, &[1.0])?;
    let b2_swapped = analogy(model, w_a2, m_a1, m_b1, &[1.0])?;
    let d = &b2.w_path.row(0) - &b2_swapped.w_path.row(0);
    Ok(d.dot(&d).sqrt())
}

/// Per-token paths for an image-level analogy, with the cluster bookkeeping
/// that produced them.
#[derive(Debug, Clone)]
pub struct ImagePath {
    /// Clusters of A1, A2 and B1 (in that order); `correspondence` holds the
    /// A1 -> A2 matching.
    pub clusters: TokenClusterMap,
    /// B1 cluster `b` borrows the drift of A1 cluster `b1_to_a1[b]`.
    pub b1_to_a1: Vec<usize>,
    /// Mood-Space drift of each A1 cluster, `h x G`.
    pub drifts: Array2<f64>,
    /// One path per B1 token.
    pub paths: Vec<LiftedPath>,
}

impl ImagePath {
    /// W embedding of every B1 token at sample `index`, `tokens x D_w`.
    pub fn frame(&self, index: usize) -> Array2<f64> {
        let d = self.paths.first().map_or(0, |p| p.w_path.ncols());
        let mut out = Array2::zeros((self.paths.len(), d));
        for (mut row, p) in out.rows_mut().into_iter().zip(&self.paths) {
            row.assign(&p.w_path.row(index));
        }
        out
    }
}

/// Image-level analogy via cluster correspondence.
///
/// Each image's tokens are clustered into `h` groups. A1 cluster `i` is
/// matched to A2 cluster `P(i)` and drifts by
/// `pi_V(C_A2,P(i)) - pi_V(C_A1,i)` in Mood Space. B1 clusters are matched
/// to A1 clusters the same way, and every B1 token is lifted from its
/// anchor `w_b1` with its cluster's drift.
#[allow(clippy::too_many_arguments)]
pub fn image_path(
    model: &MoodSpaceModel,
    v_a1: ArrayView2<'_, f64>,
    v_a2: ArrayView2<'_, f64>,
    v_b1: ArrayView2<'_, f64>,
    w_b1: ArrayView2<'_, f64>,
    h: usize,
    seed: u64,
    t: &[f64],
) -> Result<ImagePath> {
    let extrapolated = check_t(t)?;
    let d_v = model.input_dim_v();
    for (name, v) in [("A1", v_a1), ("A2", v_a2), ("B1", v_b1)] {
        if v.ncols() != d_v {
            return Err(Error::Shape(format!("{name} tokens have dimension {}, model expects {d_v}", v.ncols())));
        }
    }
    if v_a1.nrows() != v_a2.nrows() || v_a1.nrows() != v_b1.nrows() {
        return Err(Error::Shape("images must have the same number of tokens".into()));
    }
    if w_b1.nrows() != v_b1.nrows() || w_b1.ncols() != model.output_dim_w() {
        return Err(Error::Shape("B1 anchors must be tokens x D_w".into()));
    }

    // Cluster in the standardized feature space the model was trained on.
    let std = [
        model.v_norm.apply(v_a1)?,
        model.v_norm.apply(v_a2)?,
        model.v_norm.apply(v_b1)?,
    ];
    let views: Vec<_> = std.iter().map(|a| a.view()).collect();
    let mut clusters = spectral_cluster(&views, h, seed)?;
    let params = AffinityParams::default();
    let a1_to_a2 = match_clusters(clusters.centroids[0].view(), clusters.centroids[1].view(), &params)?;
    let b1_to_a1 = match_clusters(clusters.centroids[2].view(), clusters.centroids[0].view(), &params)?;

    let codes_a1 = model.encoder.predict(clusters.centroids[0].view())?;
    let codes_a2 = model.encoder.predict(clusters.centroids[1].view())?;
    let mut drifts = Array2::zeros((h, model.g()));
    for i in 0..h {
        let d = &codes_a2.row(a1_to_a2[i]) - &codes_a1.row(i);
        drifts.row_mut(i).assign(&d);
    }
    let slopes = model.decode_delta(drifts.view())?;
    clusters.correspondence = Some(a1_to_a2);

    let zero = Array1::zeros(model.g());
    let paths = clusters.labels[2]
        .iter()
        .enumerate()
        .map(|(tok, &b)| {
            let i = b1_to_a1[b];
            LiftedPath {
                t_samples: t.to_vec(),
                m_path: straight_m(zero.view(), drifts.row(i), t),
                w_path: affine_w(w_b1.row(tok), slopes.row(i), t),
                anchor_w: w_b1.row(tok).to_owned(),
                mode: PathMode::ImagePath,
                lifting: Lifting::Literal,
                extrapolated,
            }
        })
        .collect();
    Ok(ImagePath {
        clusters,
        b1_to_a1,
        drifts,
        paths,
    })
}
