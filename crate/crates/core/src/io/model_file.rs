//! The `MOODMDL1` trained-model format.
//!
//! Everything is little-endian; integers are `u32` unless noted, parameters
//! are stored as `f64` so a load/save cycle is bit-exact:
//!
//! ```text
//! "MOODMDL1" version
//! hyperparameters (see `write_hyper`)
//! v_norm: dim, mean[dim], scale[dim]      w_norm: same
//! encoder, decoder: n_layers leaky_slope, then per layer
//!     in out weight[in*out] (row-major) bias[out]
//! loss history: count(u64), per record step(u64) spec curv rep recon var total
//!     n_degenerate prefix...
//! notes: count, then length-prefixed UTF-8 strings
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::bytes::{checked_bytes, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::losses::{LossBreakdown, LossWeights};
use crate::mlp::{Layer, Mlp};
use crate::model::{FeatureNorm, Hyperparams, LossRecord, MoodSpaceModel};
use crate::spectral::Bandwidth;

pub const MODEL_MAGIC: &[u8; 8] = b"MOODMDL1";
const FORMAT_VERSION: u32 = 1;

fn u32_of(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Shape(format!("{what} exceeds u32")))
}

fn write_bandwidth(w: &mut ByteWriter, b: Bandwidth) {
    match b {
        Bandwidth::Median { scale } => {
            w.u32(0);
            w.f64(scale);
        }
        Bandwidth::Fixed(h) => {
            w.u32(1);
            w.f64(h);
        }
    }
}

fn read_bandwidth(r: &mut ByteReader<'_>) -> Result<Bandwidth> {
    let tag = r.u32()?;
    let value = r.f64()?;
    match tag {
        0 => Ok(Bandwidth::Median { scale: value }),
        1 => Ok(Bandwidth::Fixed(value)),
        t => Err(Error::InvalidMetadata(format!("unknown bandwidth policy {t}"))),
    }
}

fn write_bool(w: &mut ByteWriter, b: bool) {
    w.u32(b as u32);
}

fn read_bool(r: &mut ByteReader<'_>) -> Result<bool> {
    match r.u32()? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(Error::InvalidMetadata(format!("expected boolean, found {v}"))),
    }
}

fn write_hyper(w: &mut ByteWriter, h: &Hyperparams) -> Result<()> {
    w.u32(u32_of(h.k, "k")?);
    w.u32(u32_of(h.fps_count, "fps count")?);
    w.u32(u32_of(h.g, "G")?);
    write_bool(w, h.g_auto);
    w.f64(h.kappa);
    write_bandwidth(w, h.v_bandwidth);
    w.f64(h.h_v);
    write_bandwidth(w, h.m_bandwidth);
    w.f64s(&[h.weights.curvature, h.weights.repulsion, h.weights.recon, h.weights.variance]);
    w.f64(h.lr);
    w.u64(h.steps as u64);
    w.u64(h.seed);
    w.f64(h.repulsion_eps);
    w.u32(u32_of(h.curvature_triples, "curvature triples")?);
    w.f64(h.grad_clip);
    write_bool(w, h.include_class_tokens);
    w.u64(h.log_every as u64);
    Ok(())
}

fn read_hyper(r: &mut ByteReader<'_>) -> Result<Hyperparams> {
    let k = r.u32()? as usize;
    let fps_count = r.u32()? as usize;
    let g = r.u32()? as usize;
    let g_auto = read_bool(r)?;
    let kappa = r.f64()?;
    let v_bandwidth = read_bandwidth(r)?;
    let h_v = r.f64()?;
    let m_bandwidth = read_bandwidth(r)?;
    let lw = r.f64s(4)?;
    let weights = LossWeights {
        curvature: lw[0],
        repulsion: lw[1],
        recon: lw[2],
        variance: lw[3],
    };
    Ok(Hyperparams {
        k,
        fps_count,
        g,
        g_auto,
        kappa,
        v_bandwidth,
        h_v,
        m_bandwidth,
        weights,
        lr: r.f64()?,
        steps: r.u64()? as usize,
        seed: r.u64()?,
        repulsion_eps: r.f64()?,
        curvature_triples: r.u32()? as usize,
        grad_clip: r.f64()?,
        include_class_tokens: read_bool(r)?,
        log_every: r.u64()? as usize,
    })
}

fn write_norm(w: &mut ByteWriter, n: &FeatureNorm) -> Result<()> {
    w.u32(u32_of(n.dim(), "feature dimension")?);
    w.f64s(&n.mean);
    w.f64s(&n.scale);
    Ok(())
}

fn read_norm(r: &mut ByteReader<'_>) -> Result<FeatureNorm> {
    let dim = r.u32()? as usize;
    Ok(FeatureNorm {
        mean: Array1::from(r.f64s(dim)?),
        scale: Array1::from(r.f64s(dim)?),
    })
}

fn write_mlp(w: &mut ByteWriter, m: &Mlp) -> Result<()> {
    w.u32(u32_of(m.layers.len(), "layer count")?);
    w.f64(m.leaky_slope);
    for l in &m.layers {
        w.u32(u32_of(l.in_dim(), "layer width")?);
        w.u32(u32_of(l.out_dim(), "layer width")?);
        // Iterating a standard-layout array is row-major; `iter` walks
        // logical order for any layout.
        w.f64s(l.weight.iter());
        w.f64s(&l.bias);
    }
    Ok(())
}

fn read_mlp(r: &mut ByteReader<'_>) -> Result<Mlp> {
    let n_layers = r.u32()? as usize;
    let leaky_slope = r.f64()?;
    let mut layers = Vec::new();
    for _ in 0..n_layers {
        let fan_in = r.u32()? as usize;
        let fan_out = r.u32()? as usize;
        let count = fan_in
            .checked_mul(fan_out)
            .ok_or_else(|| Error::Shape("layer size overflows".into()))?;
        // Fail fast on absurd headers before allocating.
        if checked_bytes(count, 8)? > r.remaining() {
            return Err(Error::TruncatedPayload {
                expected: count * 8,
                found: r.remaining(),
            });
        }
        let weight = Array2::from_shape_vec((fan_in, fan_out), r.f64s(count)?)
            .map_err(|e| Error::Shape(e.to_string()))?;
        let bias = Array1::from(r.f64s(fan_out)?);
        layers.push(Layer { weight, bias });
    }
    Ok(Mlp { layers, leaky_slope })
}

impl MoodSpaceModel {
    fn check_finite(&self) -> Result<()> {
        let norms_finite = [&self.v_norm, &self.w_norm]
            .iter()
            .all(|n| n.mean.iter().chain(n.scale.iter()).all(|v| v.is_finite()));
        if !norms_finite || !self.encoder.is_finite() || !self.decoder.is_finite() {
            return Err(Error::non_finite("model parameters"));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        self.check_finite()?;
        let mut w = ByteWriter::new();
        w.bytes(MODEL_MAGIC);
        w.u32(FORMAT_VERSION);
        write_hyper(&mut w, &self.hyper)?;
        write_norm(&mut w, &self.v_norm)?;
        write_norm(&mut w, &self.w_norm)?;
        write_mlp(&mut w, &self.encoder)?;
        write_mlp(&mut w, &self.decoder)?;
        w.u64(self.loss_history.len() as u64);
        for rec in &self.loss_history {
            let l = &rec.loss;
            w.u64(rec.step as u64);
            w.f64s(&[l.spec, l.curv, l.rep, l.recon, l.var, l.total]);
            w.u32(u32_of(rec.degenerate_prefixes.len(), "prefix count")?);
            for &p in &rec.degenerate_prefixes {
                w.u32(u32_of(p, "prefix")?);
            }
        }
        w.u32(u32_of(self.notes.len(), "note count")?);
        for note in &self.notes {
            w.string(note)?;
        }
        Ok(w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r
            .take(8)
            .map_err(|_| Error::UnrecognizedFormat { expected: "MOODMDL1" })?;
        if magic != MODEL_MAGIC {
            return Err(Error::UnrecognizedFormat { expected: "MOODMDL1" });
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::InvalidMetadata(format!("unsupported model version {version}")));
        }
        let hyper = read_hyper(&mut r)?;
        let v_norm = read_norm(&mut r)?;
        let w_norm = read_norm(&mut r)?;
        let encoder = read_mlp(&mut r)?;
        let decoder = read_mlp(&mut r)?;
        let n_records = r.u64()? as usize;
        let mut loss_history = Vec::new();
        for _ in 0..n_records {
            let step = r.u64()? as usize;
            let v = r.f64s(6)?;
            let n_deg = r.u32()? as usize;
            let degenerate_prefixes = (0..n_deg)
                .map(|_| r.u32().map(|p| p as usize))
                .collect::<Result<Vec<_>>>()?;
            loss_history.push(LossRecord {
                step,
                loss: LossBreakdown {
                    spec: v[0],
                    curv: v[1],
                    rep: v[2],
                    recon: v[3],
                    var: v[4],
                    total: v[5],
                },
                degenerate_prefixes,
            });
        }
        let n_notes = r.u32()? as usize;
        let notes = (0..n_notes).map(|_| r.string()).collect::<Result<Vec<_>>>()?;
        r.finish()?;

        let model = MoodSpaceModel {
            hyper,
            v_norm,
            w_norm,
            encoder,
            decoder,
            loss_history,
            notes,
        };
        model.validate()?;
        model.check_finite()?;
        Ok(model)
    }
}

pub fn save_model(model: &MoodSpaceModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, model.to_bytes()?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<MoodSpaceModel> {
    MoodSpaceModel::from_bytes(&fs::read(path)?)
}
