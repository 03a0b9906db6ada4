use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, LossWeights};
use crate::mlp::Mlp;
use crate::spectral::Bandwidth;

/// Per-dimension affine standardization `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNorm {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl FeatureNorm {
    /// Mean and population standard deviation of each column. Constant
    /// columns keep scale 1 so they map to zero rather than blowing up.
    pub fn fit(x: ArrayView2<'_, f64>) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::InvalidArgument("cannot standardize zero rows".into()));
        }
        let mean = x.mean_axis(Axis(0)).expect("n > 0");
        let mut var = Array1::<f64>::zeros(x.ncols());
        for row in x.rows() {
            for ((v, &m), &xi) in var.iter_mut().zip(&mean).zip(row) {
                *v += (xi - m) * (xi - m);
            }
        }
        let scale = var.mapv(|v| {
            let sd = (v / n as f64).sqrt();
            if sd > 1e-12 { sd } else { 1.0 }
        });
        Ok(Self { mean, scale })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            scale: Array1::ones(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, x: ArrayView2<'_, f64>, what: &str) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(Error::Shape(format!(
                "{what} has dimension {}, model expects {}",
                x.ncols(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check(x, "input")?;
        Ok((&x - &self.mean) / &self.scale)
    }

    pub fn invert(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check(z, "output")?;
        Ok(&z * &self.scale + &self.mean)
    }
}

/// Effective training configuration, stored with the model for provenance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hyperparams {
    pub k: usize,
    pub fps_count: usize,
    pub g: usize,
    /// Whether `g` came from the intrinsic-dimension estimate.
    pub g_auto: bool,
    pub kappa: f64,
    pub v_bandwidth: Bandwidth,
    /// Bandwidth actually used for the source affinity.
    pub h_v: f64,
    pub m_bandwidth: Bandwidth,
    pub weights: LossWeights,
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
    pub repulsion_eps: f64,
    pub curvature_triples: usize,
    pub grad_clip: f64,
    pub include_class_tokens: bool,
    pub log_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss: LossBreakdown,
    pub degenerate_prefixes: Vec<usize>,
}

/// A trained encoder/decoder pair with everything needed to use and
/// reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct MoodSpaceModel {
    pub hyper: Hyperparams,
    pub v_norm: FeatureNorm,
    pub w_norm: FeatureNorm,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub loss_history: Vec<LossRecord>,
    /// Free-form provenance (input source tags, clamping notes).
    pub notes: Vec<String>,
}

impl MoodSpaceModel {
    pub fn g(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn input_dim_v(&self) -> usize {
        self.encoder.in_dim()
    }

    pub fn output_dim_w(&self) -> usize {
        self.decoder.out_dim()
    }

    /// Check that the networks chain `D_v -> G -> D_w` and agree with the
    /// normalization statistics.
    pub fn validate(&self) -> Result<()> {
        let chain = |m: &Mlp, name: &str| -> Result<()> {
            for pair in m.layers.windows(2) {
                if pair[0].out_dim() != pair[1].in_dim() {
                    return Err(Error::Shape(format!("{name} layers do not chain")));
                }
            }
            for l in &m.layers {
                if l.bias.len() != l.out_dim() {
                    return Err(Error::Shape(format!("{name} bias length mismatch")));
                }
            }
            if m.layers.is_empty() {
                return Err(Error::Shape(format!("{name} has no layers")));
            }
            Ok(())
        };
        chain(&self.encoder, "encoder")?;
        chain(&self.decoder, "decoder")?;
        if self.encoder.out_dim() != self.decoder.in_dim() || self.g() != self.hyper.g {
            return Err(Error::Shape("encoder output, decoder input and G disagree".into()));
        }
        if self.v_norm.dim() != self.input_dim_v() || self.w_norm.dim() != self.output_dim_w() {
            return Err(Error::Shape("normalization statistics do not match networks".into()));
        }
        Ok(())
    }

    /// `pi_V`: raw source tokens to Mood-Space codes.
    pub fn encode(&self, tokens: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let z = self.v_norm.apply(tokens)?;
        self.encoder.predict(z.view())
    }

    /// `sigma_W`: codes to target-space embeddings at the original W scale.
    pub fn decode(&self, codes: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_codes(codes)?;
        let z = self.decoder.predict(codes)?;
        self.w_norm.invert(z.view())
    }

    /// Decoder applied to code differences, read as a W-space displacement:
    /// the output is rescaled to W units but not shifted by the W mean.
    pub fn decode_delta(&self, deltas: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_codes(deltas)?;
        let z = self.decoder.predict(deltas)?;
        Ok(z * &self.w_norm.scale)
    }

    fn check_codes(&self, codes: ArrayView2<'_, f64>) -> Result<()> {
        if codes.ncols() != self.g() {
            return Err(Error::Shape(format!(
                "codes have dimension {}, model has G = {}",
                codes.ncols(),
                self.g()
            )));
        }
        Ok(())
    }

    pub fn final_loss(&self) -> Option<&LossRecord> {
        self.loss_history.last()
    }

    /// Loss history as CSV with header `step,spec,curv,rep,recon,var,total`.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("step,spec,curv,rep,recon,var,total\n");
        for r in &self.loss_history {
            let l = &r.loss;
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.step, l.spec, l.curv, l.rep, l.recon, l.var, l.total
            ));
        }
        out
    }
}
