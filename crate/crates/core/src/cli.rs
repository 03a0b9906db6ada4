//! Command-line front end: `estimate-dim`, `fit`, `interp`, `analogy`,
//! `inspect` and `eigvecs`.
//!
//! Machine-readable results go to stdout as JSON; diagnostics go to stderr.
//! Exit status is 0 on success, 1 for problems with the invocation or the
//! input files, and 2 for numerical failures inside the pipeline.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array2, Axis};
use serde_json::json;

use crate::error::Error;
use crate::intrinsic_dim::{estimate_dim, DEFAULT_K_MAX, DEFAULT_K_MIN};
use crate::io::{load_model, read_embeddings, save_model, write_embeddings, SpaceTag, TokenEmbeddingSet};
use crate::losses::LossWeights;
use crate::metrics::{export_eigvec_grids, uniformity, GridLayout};
use crate::model::MoodSpaceModel;
use crate::pathops::{connect_batch, decode_along_path_batch, image_path, linspace_t, analogy_batch, DEFAULT_CLUSTERS};
use crate::spectral::{top_k_eigs, AffinityParams, Bandwidth};
use crate::trainer::{fit, TrainConfig, DEFAULT_CURVATURE_TRIPLES, DEFAULT_FPS_COUNT, DEFAULT_GRAD_CLIP, DEFAULT_K, DEFAULT_STEPS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, unreadable or malformed inputs, out-of-range indices.
    #[error("{0}")]
    User(String),
    /// The pipeline failed on inputs that were accepted.
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => EXIT_USER,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }

    fn user(msg: impl Into<String>) -> Self {
        CliError::User(msg.into())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io(_)
            | Error::UnrecognizedFormat { .. }
            | Error::TruncatedPayload { .. }
            | Error::TrailingBytes(_)
            | Error::NonFinite { .. }
            | Error::InvalidMetadata(_)
            | Error::Shape(_)
            | Error::InvalidArgument(_)
            | Error::DegenerateBandwidth
            | Error::NotEnoughNeighbors { .. } => CliError::User(msg),
            Error::Asymmetric(_)
            | Error::Eigen(_)
            | Error::NonFiniteActivation { .. }
            | Error::NonFiniteGradient
            | Error::NonFiniteLoss { .. }
            | Error::Clustering(_) => CliError::Internal(msg),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "moodspace", version, about = "Learn a Mood Space from token embeddings and walk paths in it")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the intrinsic dimension of an embedding set.
    EstimateDim(EstimateDimArgs),
    /// Train encoder and decoder on aligned V and W token sets.
    Fit(FitArgs),
    /// Interpolate between two images of a V set, lifted into W.
    Interp(InterpArgs),
    /// Apply the A1 -> A2 change to B1.
    Analogy(AnalogyArgs),
    /// Print a model's configuration, final losses and uniformity metrics.
    Inspect(InspectArgs),
    /// Export the leading affinity eigenvectors of an embedding set as images.
    Eigvecs(EigvecsArgs),
}

#[derive(Debug, Args)]
pub struct EstimateDimArgs {
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K_MIN)]
    pub kmin: usize,
    #[arg(long, default_value_t = DEFAULT_K_MAX)]
    pub kmax: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Source-space (encoder input) embeddings.
    #[arg(long)]
    pub v: PathBuf,
    /// Target-space (decoder output) embeddings, token-aligned with `--v`.
    #[arg(long)]
    pub w: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss log; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_STEPS)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_FPS_COUNT)]
    pub fps: usize,
    /// Mood Space dimension; estimated from `--v` when omitted.
    #[arg(long)]
    pub g: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Curvature weight.
    #[arg(long, default_value_t = LossWeights::default().curvature)]
    pub lambda1: f64,
    /// Repulsion weight.
    #[arg(long, default_value_t = LossWeights::default().repulsion)]
    pub lambda2: f64,
    /// Reconstruction weight.
    #[arg(long, default_value_t = LossWeights::default().recon)]
    pub lambda3: f64,
    /// Variance (whitening) weight.
    #[arg(long, default_value_t = LossWeights::default().variance)]
    pub lambda4: f64,
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    /// Fixed bandwidth for the source affinity instead of the median heuristic.
    #[arg(long)]
    pub h: Option<f64>,
    /// Fixed bandwidth for the Mood-Space affinity instead of the per-step
    /// median heuristic.
    #[arg(long)]
    pub m_h: Option<f64>,
    /// Leave class tokens out of training.
    #[arg(long)]
    pub exclude_class_tokens: bool,
    #[arg(long, default_value_t = 1)]
    pub log_every: usize,
    #[arg(long, default_value_t = DEFAULT_CURVATURE_TRIPLES)]
    pub curvature_triples: usize,
    #[arg(long, default_value_t = DEFAULT_GRAD_CLIP)]
    pub grad_clip: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InterpMode {
    /// Anchor plus a scaled decoded displacement; exactly affine in t.
    Literal,
    /// Decode every point of the Mood-Space segment.
    DecodeAlongPath,
}

#[derive(Debug, Args)]
pub struct InterpArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub v: PathBuf,
    /// W-space anchors for the source image; defaults to decoding its codes.
    #[arg(long)]
    pub w: Option<PathBuf>,
    #[arg(long)]
    pub src_image: usize,
    #[arg(long)]
    pub dst_image: usize,
    /// Number of frames, evenly spaced over t in [0, 1].
    #[arg(long, default_value_t = 5)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = InterpMode::Literal)]
    pub mode: InterpMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalogyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub v: PathBuf,
    /// W-space anchors for B1; defaults to decoding its codes.
    #[arg(long)]
    pub w: Option<PathBuf>,
    #[arg(long)]
    pub a1: usize,
    #[arg(long)]
    pub a2: usize,
    #[arg(long)]
    pub b1: usize,
    /// Lift through per-cluster drifts instead of per-token ones.
    #[arg(long)]
    pub image_path: bool,
    /// Clusters per image for `--image-path`.
    #[arg(long = "H", default_value_t = DEFAULT_CLUSTERS)]
    pub clusters: usize,
    /// Seed for the clustering in `--image-path`.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Source-space tokens to encode for the uniformity report.
    #[arg(long)]
    pub emb: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EigvecsArgs {
    #[arg(long)]
    pub emb: PathBuf,
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub kappa: f64,
    /// Fixed bandwidth instead of the median heuristic.
    #[arg(long)]
    pub h: Option<f64>,
}

/// Parse `args` (including the program name) and run. Returns the exit code;
/// JSON goes to `out`, diagnostics to `err`.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USER } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    let value = match command {
        Command::EstimateDim(a) => cmd_estimate_dim(&a)?,
        Command::Fit(a) => cmd_fit(&a, err)?,
        Command::Interp(a) => cmd_interp(&a)?,
        Command::Analogy(a) => cmd_analogy(&a)?,
        Command::Inspect(a) => cmd_inspect(&a)?,
        Command::Eigvecs(a) => cmd_eigvecs(&a)?,
    };
    let text = serde_json::to_string_pretty(&value).map_err(|e| CliError::Internal(e.to_string()))?;
    writeln!(out, "{text}").map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(())
}

fn read_set(path: &Path) -> CliResult<TokenEmbeddingSet> {
    read_embeddings(path).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> CliResult<MoodSpaceModel> {
    load_model(path).map_err(|e| CliError::user(format!("{}: {e}", path.display())))
}

fn image_index(set: &TokenEmbeddingSet, index: usize, flag: &str) -> CliResult<()> {
    if index >= set.n_images() {
        return Err(CliError::user(format!(
            "{flag} {index} out of range: the set has {} images",
            set.n_images()
        )));
    }
    Ok(())
}

/// W-space anchors for one image: from an aligned W set if given, otherwise
/// the model's reconstruction of the image.
fn anchors(model: &MoodSpaceModel, w: Option<&Path>, v_set: &TokenEmbeddingSet, image: usize) -> CliResult<Array2<f64>> {
    match w {
        Some(path) => {
            let w_set = read_set(path)?;
            if w_set.n_images() != v_set.n_images() || w_set.tokens_per_image() != v_set.tokens_per_image() {
                return Err(CliError::user("--w is not token-aligned with --v"));
            }
            let rows = w_set.image(image)?;
            if rows.ncols() != model.output_dim_w() {
                return Err(CliError::user(format!(
                    "--w has dimension {}, model decodes to {}",
                    rows.ncols(),
                    model.output_dim_w()
                )));
            }
            Ok(rows)
        }
        None => Ok(model.decode(model.encode(v_set.image(image)?.view())?.view())?),
    }
}

/// Stack frame `s` of every token path into image `s` of a W set.
fn frames_to_set(frames: &[Array2<f64>], like: &TokenEmbeddingSet, meta: &str) -> CliResult<TokenEmbeddingSet> {
    let views: Vec<_> = frames.iter().map(|f| f.view()).collect();
    let rows = ndarray::concatenate(Axis(0), &views).map_err(|e| CliError::Internal(e.to_string()))?;
    let mut set = TokenEmbeddingSet::from_rows(rows.view(), frames.len(), SpaceTag::W, like.grid(), like.has_class_token())?;
    set.metadata = meta.to_string();
    Ok(set)
}

pub fn cmd_estimate_dim(a: &EstimateDimArgs) -> CliResult<serde_json::Value> {
    let set = read_set(&a.emb)?;
    let est = estimate_dim(set.rows().view(), a.kmin, a.kmax)?;
    Ok(json!({ "g_hat": est.g_hat, "g_rounded": est.g_rounded }))
}

pub fn cmd_fit(a: &FitArgs, err: &mut dyn Write) -> CliResult<serde_json::Value> {
    let v = read_set(&a.v)?;
    let w = read_set(&a.w)?;
    if v.n_images() != w.n_images() || v.tokens_per_image() != w.tokens_per_image() {
        return Err(CliError::user(format!(
            "--v has {}x{} tokens but --w has {}x{}",
            v.n_images(),
            v.tokens_per_image(),
            w.n_images(),
            w.tokens_per_image()
        )));
    }
    let fixed = |h: Option<f64>, flag: &str| -> CliResult<Bandwidth> {
        match h {
            None => Ok(Bandwidth::default()),
            Some(h) if h > 0.0 && h.is_finite() => Ok(Bandwidth::Fixed(h)),
            Some(h) => Err(CliError::user(format!("{flag} must be positive and finite, got {h}"))),
        }
    };
    let cfg = TrainConfig {
        steps: a.steps,
        lr: a.lr,
        k: a.k,
        fps_count: a.fps,
        weights: LossWeights {
            curvature: a.lambda1,
            repulsion: a.lambda2,
            recon: a.lambda3,
            variance: a.lambda4,
        },
        g: a.g,
        seed: a.seed,
        kappa: a.kappa,
        v_bandwidth: fixed(a.h, "--h")?,
        m_bandwidth: fixed(a.m_h, "--m-h")?,
        include_class_tokens: !a.exclude_class_tokens,
        log_every: a.log_every,
        repulsion_eps: crate::losses::DEFAULT_REPULSION_EPS,
        curvature_triples: a.curvature_triples,
        grad_clip: a.grad_clip,
    };
    let model = fit(&v, &w, &cfg)?;
    for note in &model.notes {
        let _ = writeln!(err, "note: {note}");
    }
    save_model(&model, &a.out)?;
    let csv_path = a.loss_csv.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".loss.csv");
        PathBuf::from(p)
    });
    fs::write(&csv_path, model.loss_csv()).map_err(Error::from)?;
    let first = model.loss_history.first().map(|r| &r.loss);
    let last = model.final_loss().map(|r| &r.loss);
    if let (Some(f), Some(l)) = (first, last) {
        let _ = writeln!(
            err,
            "trained G = {} for {} steps: spec {:.4} -> {:.4}, recon {:.4} -> {:.4}",
            model.g(),
            model.hyper.steps,
            f.spec,
            l.spec,
            f.recon,
            l.recon
        );
    }
    Ok(json!({
        "model": a.out,
        "loss_csv": csv_path,
        "g": model.g(),
        "hyperparams": model.hyper,
        "initial_loss": first,
        "final_loss": last,
        "notes": model.notes,
    }))
}

pub fn cmd_interp(a: &InterpArgs) -> CliResult<serde_json::Value> {
    let model = load(&a.model)?;
    let v = read_set(&a.v)?;
    image_index(&v, a.src_image, "--src-image")?;
    image_index(&v, a.dst_image, "--dst-image")?;
    if a.steps == 0 {
        return Err(CliError::user("--steps must be at least 1"));
    }
    let t = linspace_t(a.steps);
    let m_src = model.encode(v.image(a.src_image)?.view())?;
    let m_dst = model.encode(v.image(a.dst_image)?.view())?;
    let paths = match a.mode {
        InterpMode::Literal => {
            let w_src = anchors(&model, a.w.as_deref(), &v, a.src_image)?;
            connect_batch(&model, w_src.view(), m_src.view(), m_dst.view(), &t)?
        }
        InterpMode::DecodeAlongPath => decode_along_path_batch(&model, m_src.view(), m_dst.view(), &t)?,
    };
    let frames: Vec<Array2<f64>> = (0..t.len())
        .map(|s| {
            let mut f = Array2::zeros((paths.len(), model.output_dim_w()));
            for (mut row, p) in f.rows_mut().into_iter().zip(&paths) {
                row.assign(&p.w_path.row(s));
            }
            f
        })
        .collect();
    let meta = format!(
        "op=interp\nsrc_image={}\ndst_image={}\nmode={:?}\nt={:?}\n",
        a.src_image, a.dst_image, a.mode, t
    );
    let set = frames_to_set(&frames, &v, &meta)?;
    write_embeddings(&set, &a.out)?;
    Ok(json!({ "out": a.out, "frames": t.len(), "t": t, "tokens_per_frame": paths.len() }))
}

pub fn cmd_analogy(a: &AnalogyArgs) -> CliResult<serde_json::Value> {
    let model = load(&a.model)?;
    let v = read_set(&a.v)?;
    image_index(&v, a.a1, "--a1")?;
    image_index(&v, a.a2, "--a2")?;
    image_index(&v, a.b1, "--b1")?;
    let w_b1 = anchors(&model, a.w.as_deref(), &v, a.b1)?;
    let (v_a1, v_a2, v_b1) = (v.image(a.a1)?, v.image(a.a2)?, v.image(a.b1)?);
    let t = [1.0];
    let b2 = if a.image_path {
        if a.clusters == 0 || a.clusters > v.tokens_per_image() {
            return Err(CliError::user(format!(
                "--H must be between 1 and the {} tokens per image, got {}",
                v.tokens_per_image(),
                a.clusters
            )));
        }
        image_path(&model, v_a1.view(), v_a2.view(), v_b1.view(), w_b1.view(), a.clusters, a.seed, &t)?.frame(0)
    } else {
        let m_a1 = model.encode(v_a1.view())?;
        let m_a2 = model.encode(v_a2.view())?;
        let paths = analogy_batch(&model, w_b1.view(), m_a1.view(), m_a2.view(), &t)?;
        let mut f = Array2::zeros((paths.len(), model.output_dim_w()));
        for (mut row, p) in f.rows_mut().into_iter().zip(&paths) {
            row.assign(&p.w_path.row(0));
        }
        f
    };
    let meta = format!(
        "op=analogy\na1={}\na2={}\nb1={}\nimage_path={}\nH={}\n",
        a.a1, a.a2, a.b1, a.image_path, a.clusters
    );
    let set = frames_to_set(&[b2], &v, &meta)?;
    write_embeddings(&set, &a.out)?;
    Ok(json!({ "out": a.out, "image_path": a.image_path, "tokens": v.tokens_per_image() }))
}

pub fn cmd_inspect(a: &InspectArgs) -> CliResult<serde_json::Value> {
    let model = load(&a.model)?;
    let mut report = json!({
        "g": model.g(),
        "input_dim_v": model.input_dim_v(),
        "output_dim_w": model.output_dim_w(),
        "hyperparams": model.hyper,
        "final_loss": model.final_loss(),
        "history_len": model.loss_history.len(),
        "notes": model.notes,
    });
    if let Some(path) = &a.emb {
        let set = read_set(path)?;
        let rows = set.rows();
        let codes = model.encode(rows.view())?;
        report["uniformity"] = json!({
            "source": uniformity(rows.view())?,
            "mood": uniformity(codes.view())?,
        });
    }
    Ok(report)
}

pub fn cmd_eigvecs(a: &EigvecsArgs) -> CliResult<serde_json::Value> {
    let set = read_set(&a.emb)?;
    if !set.has_grid() {
        return Err(CliError::user(format!("{} has no token grid", a.emb.display())));
    }
    let bandwidth = match a.h {
        None => Bandwidth::default(),
        Some(h) if h > 0.0 && h.is_finite() => Bandwidth::Fixed(h),
        Some(h) => return Err(CliError::user(format!("--h must be positive and finite, got {h}"))),
    };
    let rows = set.rows();
    if a.k == 0 || a.k > rows.nrows() {
        return Err(CliError::user(format!("--k must be between 1 and {}, got {}", rows.nrows(), a.k)));
    }
    let params = AffinityParams { kappa: a.kappa, bandwidth };
    let affinity = params.build(rows.view())?;
    let e = top_k_eigs(affinity.symmetric_normalized().view(), a.k)?;
    let (gh, gw) = set.grid();
    let layout = GridLayout {
        n_images: set.n_images(),
        tokens_per_image: set.tokens_per_image(),
        grid_h: gh as usize,
        grid_w: gw as usize,
    };
    let written = export_eigvec_grids(&e, layout, &a.out)?;
    let pgm = written.iter().filter(|p| p.extension().is_some_and(|x| x == "pgm")).count();
    Ok(json!({ "out": a.out, "eigenvalues": e.values.to_vec(), "pgm_files": pgm, "files": written }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_with(std::iter::once("moodspace").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn unknown_flag_is_user_error() {
        let (code, out, err) = run(&["fit", "--bogus"]);
        assert_eq!(code, EXIT_USER);
        assert!(out.is_empty());
        assert!(!err.is_empty());
    }

    #[test]
    fn help_goes_to_stdout() {
        let (code, out, _) = run(&["--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("estimate-dim"));
    }

    #[test]
    fn missing_file_is_user_error() {
        let (code, out, err) = run(&["estimate-dim", "--emb", "/nonexistent/x.memb"]);
        assert_eq!(code, EXIT_USER);
        assert!(out.is_empty());
        assert!(err.contains("error"));
    }

    #[test]
    fn error_classification() {
        assert_eq!(CliError::from(Error::Shape("x".into())).exit_code(), EXIT_USER);
        assert_eq!(CliError::from(Error::TrailingBytes(3)).exit_code(), EXIT_USER);
        assert_eq!(CliError::from(Error::NonFiniteLoss { step: 2 }).exit_code(), EXIT_INTERNAL);
        assert_eq!(CliError::from(Error::Eigen("x".into())).exit_code(), EXIT_INTERNAL);
    }

    #[test]
    fn lambda_flags_default_to_table() {
        let cli = Cli::try_parse_from(["moodspace", "fit", "--v", "a", "--w", "b", "--out", "c"]).unwrap();
        let Command::Fit(a) = cli.command else { panic!("not fit") };
        let d = LossWeights::default();
        assert_eq!((a.lambda1, a.lambda2, a.lambda3, a.lambda4), (d.curvature, d.repulsion, d.recon, d.variance));
        assert_eq!((a.steps, a.k, a.fps), (1000, 32, 512));
        assert!(a.g.is_none() && a.h.is_none());
    }
}
