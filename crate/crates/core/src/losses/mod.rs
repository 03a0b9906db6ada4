//! Training objective: the spectral term plus weighted curvature, repulsion,
//! reconstruction and variance regularizers.

mod regularizers;
mod spectral;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mlp::{Mlp, MlpGrads};
use crate::spectral::{AffinityParams, SpectralEmbedding};

pub use regularizers::{
    curvature_loss, recon_loss, repulsion_loss, variance_loss, CURVATURE_NEIGHBORS,
    DEFAULT_REPULSION_EPS,
};
pub use spectral::{default_prefixes, spectral_loss, SpectralLoss};

/// Weights `lambda_1..lambda_4` on curvature, repulsion, reconstruction and
/// variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub curvature: f64,
    pub repulsion: f64,
    pub recon: f64,
    pub variance: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            curvature: 1e-5,
            repulsion: 1e-5,
            recon: 1.0,
            variance: 1e-5,
        }
    }
}

/// Unweighted term values and the weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub spec: f64,
    pub curv: f64,
    pub rep: f64,
    pub recon: f64,
    pub var: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(spec: f64, curv: f64, rep: f64, recon: f64, var: f64, w: &LossWeights) -> Self {
        let total =
            spec + w.curvature * curv + w.repulsion * rep + w.recon * recon + w.variance * var;
        Self { spec, curv, rep, recon, var, total }
    }

    pub fn is_finite(&self) -> bool {
        [self.spec, self.curv, self.rep, self.recon, self.var, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone)]
pub struct LossConfig {
    pub weights: LossWeights,
    /// Kernel used on the Mood-Space points.
    pub affinity: AffinityParams,
    pub prefixes: Vec<usize>,
    pub repulsion_eps: f64,
    pub curvature_triples: usize,
    pub curvature_seed: u64,
}

#[derive(Debug, Clone)]
pub struct TotalLoss {
    pub breakdown: LossBreakdown,
    pub encoder_grads: MlpGrads,
    pub decoder_grads: MlpGrads,
    pub degenerate_prefixes: Vec<usize>,
}

/// Evaluate the objective and its parameter gradients.
///
/// `v` and `w` hold every training token (standardized); the reconstruction
/// term covers all of them while the graph terms use the `subset` rows.
pub fn total_loss(
    encoder: &Mlp,
    decoder: &Mlp,
    v: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    subset: &[usize],
    target: &SpectralEmbedding,
    cfg: &LossConfig,
) -> Result<TotalLoss> {
    if v.nrows() != w.nrows() {
        return Err(Error::Shape(format!(
            "{} source tokens but {} target tokens",
            v.nrows(),
            w.nrows()
        )));
    }
    if subset.iter().any(|&i| i >= v.nrows()) {
        return Err(Error::InvalidArgument("subset index out of range".into()));
    }
    let (m, enc_cache) = encoder.forward(v)?;
    let (w_pred, dec_cache) = decoder.forward(m.view())?;
    let m_sub = m.select(Axis(0), subset);

    let spec = spectral_loss(target, m_sub.view(), &cfg.affinity, &cfg.prefixes)?;
    let (curv, g_curv) = curvature_loss(m_sub.view(), cfg.curvature_triples, cfg.curvature_seed)?;
    let (rep, g_rep) = repulsion_loss(m_sub.view(), cfg.repulsion_eps)?;
    let (var, g_var) = variance_loss(m_sub.view())?;
    let (recon, g_recon) = recon_loss(w_pred.view(), w)?;
    let weights = &cfg.weights;
    let breakdown = LossBreakdown::combine(spec.value, curv, rep, recon, var, weights);

    let mut g_sub = spec.grad;
    g_sub.scaled_add(weights.curvature, &g_curv);
    g_sub.scaled_add(weights.repulsion, &g_rep);
    g_sub.scaled_add(weights.variance, &g_var);

    let (decoder_grads, mut g_m) = decoder.backward(&dec_cache, (g_recon * weights.recon).view())?;
    for (row, &i) in subset.iter().enumerate() {
        let mut target_row = g_m.row_mut(i);
        target_row += &g_sub.row(row);
    }
    let (encoder_grads, _) = encoder.backward(&enc_cache, g_m.view())?;

    Ok(TotalLoss {
        breakdown,
        encoder_grads,
        decoder_grads,
        degenerate_prefixes: spec.degenerate_prefixes,
    })
}

/// Loss value only, for diagnostics and gradient checks.
pub fn total_loss_value(
    encoder: &Mlp,
    decoder: &Mlp,
    v: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    subset: &[usize],
    target: &SpectralEmbedding,
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    total_loss(encoder, decoder, v, w, subset, target, cfg).map(|t| t.breakdown)
}
