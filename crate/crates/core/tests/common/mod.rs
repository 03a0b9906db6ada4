//! Synthetic fixtures and independent oracles shared by the integration
//! tests.
#![allow(dead_code)]

use moodspace::io::{SpaceTag, TokenEmbeddingSet};
use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};

pub const GRID: usize = 16;

pub fn randn(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || rng.sample(StandardNormal))
}

/// Latent description of a token on a synthetic mood board: position on the
/// grid, which image it belongs to, and a smooth texture field.
fn board_latents(n_images: usize) -> Array2<f64> {
    let t = GRID * GRID;
    Array2::from_shape_fn((n_images * t, 4), |(idx, c)| {
        let (img, tok) = (idx / t, idx % t);
        let x = (tok % GRID) as f64 / (GRID - 1) as f64;
        let y = (tok / GRID) as f64 / (GRID - 1) as f64;
        match c {
            0 => x,
            1 => y,
            2 => img as f64 / n_images.max(2).saturating_sub(1) as f64,
            _ => (3.0 * x + img as f64).sin() * (2.0 * y).cos(),
        }
    })
}

fn lift(latent: &Array2<f64>, dim: usize, seed: u64, noise: f64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = Array2::from_shape_simple_fn((latent.ncols(), dim), || rng.sample::<f64, _>(StandardNormal) * 1.5);
    let b = Array1::from_shape_simple_fn(dim, || rng.sample::<f64, _>(StandardNormal) * 0.5);
    let mut out = (latent.dot(&a) + &b).mapv(f64::tanh);
    out.mapv_inplace(|v| v + noise * rng.sample::<f64, _>(StandardNormal));
    out
}

fn to_set(rows: &Array2<f64>, n_images: usize, space: SpaceTag) -> TokenEmbeddingSet {
    let t = rows.nrows() / n_images;
    let data = Array3::from_shape_fn((n_images, t, rows.ncols()), |(i, j, c)| rows[[i * t + j, c]] as f32);
    TokenEmbeddingSet::new(data, space, (GRID as u32, GRID as u32), false, String::new()).unwrap()
}

/// Aligned V (`d_v`) and W (`d_w`) token sets for an `n_images` board of
/// 16x16 tokens. V and W are different smooth nonlinear views of the same
/// low-dimensional latent, so a compact Mood Space exists.
pub fn board(n_images: usize, d_v: usize, d_w: usize, seed: u64) -> (TokenEmbeddingSet, TokenEmbeddingSet) {
    let z = board_latents(n_images);
    let v = lift(&z, d_v, seed, 0.01);
    let w = lift(&z, d_w, seed.wrapping_add(1000), 0.01);
    (to_set(&v, n_images, SpaceTag::V), to_set(&w, n_images, SpaceTag::W))
}

/// Uniform samples from the unit `d`-cube, rotated into `ambient` dims.
pub fn rotated_cube(n: usize, d: usize, ambient: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = Uniform::new(0.0, 1.0).unwrap();
    let x = Array2::from_shape_simple_fn((n, d), || rng.sample(u));
    let q = random_orthogonal(ambient, seed.wrapping_add(77));
    x.dot(&q.slice(ndarray::s![..d, ..]))
}

/// Gram-Schmidt on a Gaussian matrix: a random orthogonal `k x k` matrix.
pub fn random_orthogonal(k: usize, seed: u64) -> Array2<f64> {
    let mut a = randn(k, k, seed);
    for c in 0..k {
        for _ in 0..2 {
            for prev in 0..c {
                let proj = a.column(c).dot(&a.column(prev));
                let p = a.column(prev).to_owned();
                a.column_mut(c).scaled_add(-proj, &p);
            }
        }
        let norm = a.column(c).dot(&a.column(c)).sqrt();
        a.column_mut(c).mapv_inplace(|v| v / norm);
    }
    a
}

pub fn random_symmetric(n: usize, seed: u64) -> Array2<f64> {
    let a = randn(n, n, seed);
    (&a + &a.t()) * 0.5
}

/// Cyclic Jacobi eigendecomposition: eigenvalues descending, eigenvectors as
/// columns. Slow but simple and independent of any linear-algebra backend.
pub fn jacobi_eigen(s: &Array2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = s.nrows();
    let mut a = s.clone();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum();
        let scale: f64 = a.iter().map(|x| x * x).sum();
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - sn * akq;
                    a[[k, q]] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - sn * aqk;
                    a[[q, k]] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - sn * vkq;
                    v[[k, q]] = sn * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]));
    let values = Array1::from_iter(order.iter().map(|&i| a[[i, i]]));
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| v[[r, order[c]]]);
    (values, vectors)
}

pub fn max_abs(a: &Array2<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Angular range of the toy spiral.
pub const SPIRAL_THETA: (f64, f64) = (std::f64::consts::PI, 3.0 * std::f64::consts::PI);

/// Points `(theta cos theta, theta sin theta) / 3pi` of an Archimedean
/// spiral, placed in a random 2-plane of `ambient` dims.
pub fn spiral(thetas: &[f64], ambient: usize, seed: u64) -> Array2<f64> {
    let q = random_orthogonal(ambient, seed);
    let scale = 1.0 / SPIRAL_THETA.1;
    let flat = Array2::from_shape_fn((thetas.len(), 2), |(i, c)| {
        let th = thetas[i];
        scale * th * if c == 0 { th.cos() } else { th.sin() }
    });
    flat.dot(&q.slice(ndarray::s![..2, ..]))
}

/// `n` evenly spaced angles over [`SPIRAL_THETA`].
pub fn spiral_thetas(n: usize) -> Vec<f64> {
    let (a, b) = SPIRAL_THETA;
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Distance from each row of `x` to the nearest row of `dense`.
pub fn distance_to_set(x: &Array2<f64>, dense: &Array2<f64>) -> Vec<f64> {
    x.rows()
        .into_iter()
        .map(|r| {
            dense
                .rows()
                .into_iter()
                .map(|d| r.iter().zip(d).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}
