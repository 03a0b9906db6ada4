//! End-to-end Mood Space learning.
//!
//! 1. Standardize V and W per dimension.
//! 2. Pick `G` (explicit, or the rounded intrinsic-dimension estimate of V).
//! 3. Select a farthest-point subset of V tokens and compute the target
//!    eigenvectors of its affinity once.
//! 4. Jointly train encoder and decoder with Adam on the total loss. The graph
//!    terms see the subset; reconstruction sees every token.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::intrinsic_dim::{estimate_dim, DEFAULT_K_MAX, DEFAULT_K_MIN};
use crate::io::TokenEmbeddingSet;
use crate::losses::{default_prefixes, total_loss, LossConfig, LossWeights, DEFAULT_REPULSION_EPS};
use crate::mlp::{adam_step, clip_global_norm, AdamConfig, AdamState, Mlp};
use crate::model::{FeatureNorm, Hyperparams, LossRecord, MoodSpaceModel};
use crate::spectral::{fps, top_k_eigs, AffinityParams, Bandwidth};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_K: usize = 32;
pub const DEFAULT_FPS_COUNT: usize = 512;
pub const DEFAULT_GRAD_CLIP: f64 = 10.0;
pub const DEFAULT_CURVATURE_TRIPLES: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub k: usize,
    pub fps_count: usize,
    pub weights: LossWeights,
    /// Mood Space dimension; `None` estimates it from the data.
    pub g: Option<usize>,
    pub seed: u64,
    pub kappa: f64,
    pub v_bandwidth: Bandwidth,
    pub m_bandwidth: Bandwidth,
    pub include_class_tokens: bool,
    pub log_every: usize,
    pub repulsion_eps: f64,
    pub curvature_triples: usize,
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            lr: 1e-3,
            k: DEFAULT_K,
            fps_count: DEFAULT_FPS_COUNT,
            weights: LossWeights::default(),
            g: None,
            seed: 0,
            kappa: 1.0,
            v_bandwidth: Bandwidth::default(),
            m_bandwidth: Bandwidth::default(),
            include_class_tokens: true,
            log_every: 1,
            repulsion_eps: DEFAULT_REPULSION_EPS,
            curvature_triples: DEFAULT_CURVATURE_TRIPLES,
            grad_clip: DEFAULT_GRAD_CLIP,
        }
    }
}

/// Train a Mood Space on aligned source and target token sets.
pub fn fit(v_set: &TokenEmbeddingSet, w_set: &TokenEmbeddingSet, cfg: &TrainConfig) -> Result<MoodSpaceModel> {
    if v_set.n_images() != w_set.n_images() || v_set.tokens_per_image() != w_set.tokens_per_image() {
        return Err(Error::Shape(format!(
            "V has {}x{} tokens but W has {}x{}",
            v_set.n_images(),
            v_set.tokens_per_image(),
            w_set.n_images(),
            w_set.tokens_per_image()
        )));
    }
    if v_set.has_class_token() != w_set.has_class_token() {
        return Err(Error::Shape("V and W disagree on the class token".into()));
    }
    let v_raw = v_set.training_rows(cfg.include_class_tokens);
    let w_raw = w_set.training_rows(cfg.include_class_tokens);
    let mut notes = Vec::new();
    for (name, set) in [("v", v_set), ("w", w_set)] {
        if let Some(tag) = set.source_tag() {
            notes.push(format!("{name}_source={tag}"));
        }
    }
    fit_arrays(&v_raw, &w_raw, cfg, notes)
}

/// [`fit`] on already flattened token rows (`n x D_v` and `n x D_w`).
pub fn fit_arrays(
    v_raw: &Array2<f64>,
    w_raw: &Array2<f64>,
    cfg: &TrainConfig,
    mut notes: Vec<String>,
) -> Result<MoodSpaceModel> {
    let n = v_raw.nrows();
    if w_raw.nrows() != n {
        return Err(Error::Shape(format!("{n} source tokens but {} target tokens", w_raw.nrows())));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two tokens".into()));
    }
    if v_raw.iter().chain(w_raw.iter()).any(|x| !x.is_finite()) {
        return Err(Error::non_finite("training tokens"));
    }
    if cfg.log_every == 0 || cfg.k == 0 || cfg.fps_count == 0 {
        return Err(Error::InvalidArgument("k, fps count and log_every must be positive".into()));
    }
    if !(cfg.lr > 0.0) || !(cfg.kappa > 0.0) || !(cfg.grad_clip > 0.0) {
        return Err(Error::InvalidArgument("lr, kappa and grad_clip must be positive".into()));
    }

    let v_norm = FeatureNorm::fit(v_raw.view())?;
    let w_norm = FeatureNorm::fit(w_raw.view())?;
    let v = v_norm.apply(v_raw.view())?;
    let w = w_norm.apply(w_raw.view())?;
    let d_v = v.ncols();

    let (g, g_auto) = match cfg.g {
        Some(g) => (g, false),
        None => (estimate_dim(v.view(), DEFAULT_K_MIN, DEFAULT_K_MAX)?.mood_dim(), true),
    };
    if g == 0 || g > d_v {
        return Err(Error::InvalidArgument(format!("G = {g} must lie in 1..={d_v}")));
    }

    let mut fps_count = cfg.fps_count;
    if fps_count > n {
        notes.push(format!("fps count clamped from {fps_count} to {n}"));
        fps_count = n;
    }
    let mut k = cfg.k;
    if k > fps_count {
        notes.push(format!("k clamped from {k} to {fps_count}"));
        k = fps_count;
    }

    let subset = fps(v.view(), fps_count, cfg.seed)?;
    let v_sub = v.select(Axis(0), &subset);
    let v_affinity = AffinityParams {
        kappa: cfg.kappa,
        bandwidth: cfg.v_bandwidth,
    };
    let affinity = v_affinity.build(v_sub.view())?;
    let target = top_k_eigs(affinity.symmetric_normalized().view(), k)?;

    let mut encoder = Mlp::init(d_v, g, cfg.seed)?;
    let mut decoder = Mlp::init(g, w.ncols(), cfg.seed.wrapping_add(1))?;
    let adam = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut enc_state = AdamState::new(&encoder, adam);
    let mut dec_state = AdamState::new(&decoder, adam);
    let mut loss_cfg = LossConfig {
        weights: cfg.weights,
        affinity: AffinityParams {
            kappa: cfg.kappa,
            bandwidth: cfg.m_bandwidth,
        },
        prefixes: default_prefixes(k),
        repulsion_eps: cfg.repulsion_eps,
        curvature_triples: cfg.curvature_triples,
        curvature_seed: 0,
    };

    let mut loss_history = Vec::new();
    // Each record holds the loss at the parameters entering that step; with
    // zero steps only the initial evaluation is recorded.
    for step in 0..cfg.steps.max(1) {
        loss_cfg.curvature_seed = cfg.seed.wrapping_add(step as u64);
        let mut out = total_loss(&encoder, &decoder, v.view(), w.view(), &subset, &target, &loss_cfg)?;
        if !out.breakdown.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        if step % cfg.log_every == 0 {
            loss_history.push(LossRecord {
                step,
                loss: out.breakdown,
                degenerate_prefixes: out.degenerate_prefixes.clone(),
            });
        }
        if step >= cfg.steps {
            break;
        }
        if !out.encoder_grads.is_finite() || !out.decoder_grads.is_finite() {
            return Err(Error::NonFiniteGradient);
        }
        clip_global_norm(&mut [&mut out.encoder_grads, &mut out.decoder_grads], cfg.grad_clip);
        adam_step(&mut encoder, &out.encoder_grads, &mut enc_state)?;
        adam_step(&mut decoder, &out.decoder_grads, &mut dec_state)?;
    }

    let model = MoodSpaceModel {
        hyper: Hyperparams {
            k,
            fps_count,
            g,
            g_auto,
            kappa: cfg.kappa,
            v_bandwidth: cfg.v_bandwidth,
            h_v: affinity.h,
            m_bandwidth: cfg.m_bandwidth,
            weights: cfg.weights,
            lr: cfg.lr,
            steps: cfg.steps,
            seed: cfg.seed,
            repulsion_eps: cfg.repulsion_eps,
            curvature_triples: cfg.curvature_triples,
            grad_clip: cfg.grad_clip,
            include_class_tokens: cfg.include_class_tokens,
            log_every: cfg.log_every,
        },
        v_norm,
        w_norm,
        encoder,
        decoder,
        loss_history,
        notes,
    };
    model.validate()?;
    Ok(model)
}
