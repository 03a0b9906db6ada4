//! The `moodspace` binary: subcommands, outputs and exit codes.

mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use moodspace::io::{load_model, read_embeddings, write_embeddings, SpaceTag, TokenEmbeddingSet};
use moodspace::pathops::image_path;
use ndarray::{Array2, Array3};
use serde_json::Value;
use tempfile::TempDir;

fn moodspace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moodspace")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A 2-image board, written to disk, and a briefly trained model on it.
struct Fixture {
    dir: TempDir,
    v: PathBuf,
    w: PathBuf,
    model: PathBuf,
}

const FIT_STEPS: &str = "6";

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let (v, w) = common::board(2, 16, 12, 5);
        let vp = dir.path().join("v.memb");
        let wp = dir.path().join("w.memb");
        write_embeddings(&v, &vp).unwrap();
        write_embeddings(&w, &wp).unwrap();
        let model = dir.path().join("board.mdl");
        let out = moodspace(&[
            "fit", "--v", p(&vp), "--w", p(&wp), "--out", p(&model), "--steps", FIT_STEPS, "--fps", "128", "--k", "16",
            "--seed", "11", "--lambda1", "2e-5", "--lambda4", "3e-5",
        ]);
        json(&out);
        Fixture { dir, v: vp, w: wp, model }
    })
}

fn out_path(name: &str) -> PathBuf {
    fixture().dir.path().join(name)
}

#[test]
fn estimate_dim_recovers_cube_dimension() {
    let dir = tempfile::tempdir().unwrap();
    let x = common::rotated_cube(1500, 5, 20, 3);
    let set = TokenEmbeddingSet::from_rows(x.view(), 1, SpaceTag::Other, (0, 0), false).unwrap();
    let path = dir.path().join("cube.memb");
    write_embeddings(&set, &path).unwrap();
    let v = json(&moodspace(&["estimate-dim", "--emb", p(&path)]));
    assert_eq!(v["g_rounded"], 5);
    assert!((v["g_hat"].as_f64().unwrap() - 5.0).abs() < 1.5);

    let out = moodspace(&["estimate-dim", "--emb", p(&path), "--kmin", "10", "--kmax", "1500"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
}

#[test]
fn missing_file_exits_1_with_message() {
    let out = moodspace(&["estimate-dim", "--emb", "/definitely/not/here.memb"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("not/here.memb"));
}

#[test]
fn bad_flags_exit_1() {
    assert_eq!(moodspace(&["fit", "--nope"]).status.code(), Some(1));
    assert_eq!(moodspace(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn fit_writes_model_and_loss_log() {
    let f = fixture();
    let model = load_model(&f.model).unwrap();
    assert_eq!(model.loss_history.len(), FIT_STEPS.parse::<usize>().unwrap());
    let csv = std::fs::read_to_string(f.dir.path().join("board.mdl.loss.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,spec,curv,rep,recon,var,total"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), model.loss_history.len());
    assert!(rows.iter().enumerate().all(|(i, r)| r.starts_with(&format!("{i},"))));
}

#[test]
fn fit_rejects_misaligned_inputs() {
    let f = fixture();
    let (_, w3) = common::board(3, 16, 12, 5);
    let wp = out_path("w3.memb");
    write_embeddings(&w3, &wp).unwrap();
    let out = moodspace(&["fit", "--v", p(&f.v), "--w", p(&wp), "--out", p(&out_path("never.mdl")), "--steps", "1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_path("never.mdl").exists());
}

#[test]
fn interp_frames_start_at_anchor_and_are_affine() {
    let f = fixture();
    let two = out_path("interp2.memb");
    json(&moodspace(&[
        "interp", "--model", p(&f.model), "--v", p(&f.v), "--w", p(&f.w), "--src-image", "0", "--dst-image", "1", "--steps",
        "2", "--out", p(&two),
    ]));
    let frames = read_embeddings(&two).unwrap();
    assert_eq!(frames.n_images(), 2);
    assert_eq!(frames.space, SpaceTag::W);
    let w = read_embeddings(&f.w).unwrap();
    // Frame 0 is the source image's W anchors, bit for bit.
    assert_eq!(frames.image(0).unwrap(), w.image(0).unwrap());

    let three = out_path("interp3.memb");
    json(&moodspace(&[
        "interp", "--model", p(&f.model), "--v", p(&f.v), "--w", p(&f.w), "--src-image", "0", "--dst-image", "1", "--steps",
        "3", "--mode", "literal", "--out", p(&three),
    ]));
    let frames = read_embeddings(&three).unwrap();
    let (a, mid, b) = (frames.image(0).unwrap(), frames.image(1).unwrap(), frames.image(2).unwrap());
    let expect = (&a + &b) * 0.5;
    let scale = a.iter().chain(b.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let gap = (&mid - &expect).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // Stored as f32, so agreement is to single precision.
    assert!(gap <= 4.0 * f32::EPSILON as f64 * scale, "midpoint off by {gap}");
}

#[test]
fn interp_without_w_anchors_on_reconstruction() {
    let f = fixture();
    let out = out_path("interp_recon.memb");
    json(&moodspace(&[
        "interp", "--model", p(&f.model), "--v", p(&f.v), "--src-image", "1", "--dst-image", "0", "--steps", "4", "--mode",
        "decode-along-path", "--out", p(&out),
    ]));
    let model = load_model(&f.model).unwrap();
    let v = read_embeddings(&f.v).unwrap();
    let recon = model.decode(model.encode(v.image(1).unwrap().view()).unwrap().view()).unwrap();
    let frames = read_embeddings(&out).unwrap();
    assert_eq!(frames.image(0).unwrap(), recon.mapv(|x| x as f32 as f64));
}

#[test]
fn interp_rejects_bad_image_index() {
    let f = fixture();
    let out = moodspace(&[
        "interp", "--model", p(&f.model), "--v", p(&f.v), "--src-image", "0", "--dst-image", "2", "--steps", "2", "--out",
        p(&out_path("bad.memb")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--dst-image"));
}

#[test]
fn analogy_with_b1_equal_a1_is_interp_endpoint() {
    let f = fixture();
    let b2 = out_path("b2_same.memb");
    json(&moodspace(&[
        "analogy", "--model", p(&f.model), "--v", p(&f.v), "--w", p(&f.w), "--a1", "0", "--a2", "1", "--b1", "0", "--out", p(&b2),
    ]));
    let interp = out_path("interp_end.memb");
    json(&moodspace(&[
        "interp", "--model", p(&f.model), "--v", p(&f.v), "--w", p(&f.w), "--src-image", "0", "--dst-image", "1", "--steps",
        "2", "--out", p(&interp),
    ]));
    let b2 = read_embeddings(&b2).unwrap();
    let frames = read_embeddings(&interp).unwrap();
    assert_eq!(b2.n_images(), 1);
    assert_eq!(b2.image(0).unwrap(), frames.image(1).unwrap());
}

/// Three images whose tokens sit in four planted blobs (the grid quadrants),
/// with blob centres moving between images.
fn planted(seed: u64) -> (TokenEmbeddingSet, TokenEmbeddingSet) {
    let centres = common::randn(12, 6, seed).mapv(|x| 4.0 * x);
    let noise = common::randn(48, 6, seed + 1);
    let v = Array3::from_shape_fn((3, 16, 6), |(img, tok, c)| {
        let blob = (tok % 4) / 2 + 2 * ((tok / 4) / 2);
        (centres[[img * 4 + blob, c]] + 0.05 * noise[[img * 16 + tok, c]]) as f32
    });
    let lift = common::randn(6, 5, seed + 2);
    let rows: Array2<f64> = Array2::from_shape_fn((48, 6), |(r, c)| v[[r / 16, r % 16, c]] as f64);
    let w_rows = rows.dot(&lift).mapv(f64::tanh);
    let w = Array3::from_shape_fn((3, 16, 5), |(i, t, c)| w_rows[[i * 16 + t, c]] as f32);
    (
        TokenEmbeddingSet::new(v, SpaceTag::V, (4, 4), false, "").unwrap(),
        TokenEmbeddingSet::new(w, SpaceTag::W, (4, 4), false, "").unwrap(),
    )
}

#[test]
fn image_path_analogy_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let (v, w) = planted(21);
    let vp = dir.path().join("v.memb");
    let wp = dir.path().join("w.memb");
    write_embeddings(&v, &vp).unwrap();
    write_embeddings(&w, &wp).unwrap();
    let model_path = dir.path().join("m.mdl");
    json(&moodspace(&["fit", "--v", p(&vp), "--w", p(&wp), "--out", p(&model_path), "--steps", "5", "--k", "8", "--g", "3"]));
    let out = dir.path().join("b2.memb");
    json(&moodspace(&[
        "analogy", "--model", p(&model_path), "--v", p(&vp), "--w", p(&wp), "--a1", "0", "--a2", "1", "--b1", "2",
        "--image-path", "--H", "4", "--seed", "9", "--out", p(&out),
    ]));

    let model = load_model(&model_path).unwrap();
    let oracle = image_path(
        &model,
        v.image(0).unwrap().view(),
        v.image(1).unwrap().view(),
        v.image(2).unwrap().view(),
        w.image(2).unwrap().view(),
        4,
        9,
        &[1.0],
    )
    .unwrap();
    let got = read_embeddings(&out).unwrap();
    assert_eq!(got.image(0).unwrap(), oracle.frame(0).mapv(|x| x as f32 as f64));
    // Each planted blob of B1 is one cluster, so it moves by a single drift.
    let labels = &oracle.clusters.labels[2];
    for tok in 0..16 {
        let blob = (tok % 4) / 2 + 2 * ((tok / 4) / 2);
        let first = (0..16).find(|&t| (t % 4) / 2 + 2 * ((t / 4) / 2) == blob).unwrap();
        assert_eq!(labels[tok], labels[first]);
    }

    let too_many = moodspace(&[
        "analogy", "--model", p(&model_path), "--v", p(&vp), "--a1", "0", "--a2", "1", "--b1", "2", "--image-path", "--H", "17",
        "--out", p(&dir.path().join("never.memb")),
    ]);
    assert_eq!(too_many.status.code(), Some(1));
}

#[test]
fn inspect_echoes_training_configuration() {
    let f = fixture();
    let v = json(&moodspace(&["inspect", "--model", p(&f.model)]));
    let h = &v["hyperparams"];
    assert_eq!(h["seed"], 11);
    assert_eq!(h["steps"], 6);
    assert_eq!(h["weights"]["curvature"], 2e-5);
    assert_eq!(h["weights"]["repulsion"], 1e-5);
    assert_eq!(h["weights"]["recon"], 1.0);
    assert_eq!(h["weights"]["variance"], 3e-5);
    assert_eq!(h["k"], 16);
    assert_eq!(h["fps_count"], 128);
    assert!(v["final_loss"]["loss"]["total"].is_number());
    assert!(v.get("uniformity").is_none());

    let v = json(&moodspace(&["inspect", "--model", p(&f.model), "--emb", p(&f.v)]));
    let mood = &v["uniformity"]["mood"];
    assert_eq!(mood["n_points"], 512);
    assert!(mood["entropy_eigvals"].as_f64().unwrap() <= 1.0);
}

#[test]
fn eigvecs_exports_one_image_per_vector_and_image() {
    let f = fixture();
    let dir = out_path("eig");
    let v = json(&moodspace(&["eigvecs", "--emb", p(&f.v), "--k", "5", "--out", p(&dir)]));
    assert_eq!(v["pgm_files"], 10);
    let pgm = std::fs::read_dir(&dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "pgm"))
        .count();
    assert_eq!(pgm, 10);
    let first = std::fs::read(dir.join("eig00_img000.pgm")).unwrap();
    assert!(first.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(first.len(), b"P5\n16 16\n255\n".len() + 256);

    let flat = out_path("flat.memb");
    let x = common::randn(40, 3, 1);
    write_embeddings(&TokenEmbeddingSet::from_rows(x.view(), 2, SpaceTag::Other, (0, 0), false).unwrap(), &flat).unwrap();
    let out = moodspace(&["eigvecs", "--emb", p(&flat), "--k", "3", "--out", p(&out_path("eig_flat"))]);
    assert_eq!(out.status.code(), Some(1));
}
