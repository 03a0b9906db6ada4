use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Farthest point sampling with a seeded uniform start.
pub fn fps(points: ArrayView2<'_, f64>, m: usize, seed: u64) -> Result<Vec<usize>> {
    let n = points.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("fps on an empty point set".into()));
    }
    let start = ChaCha8Rng::seed_from_u64(seed).random_range(0..n);
    fps_from(points, m, start)
}

/// Farthest point sampling from a fixed start index. Each step picks the
/// point maximizing the distance to the already chosen set; ties go to the
/// lowest index.
pub fn fps_from(points: ArrayView2<'_, f64>, m: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.nrows();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!("fps count {m} must lie in 1..={n}")));
    }
    if start >= n {
        return Err(Error::InvalidArgument(format!("start index {start} out of range")));
    }
    let sq = |a: usize, b: usize| -> f64 {
        points
            .row(a)
            .iter()
            .zip(points.row(b).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum()
    };

    let mut chosen = Vec::with_capacity(m);
    let mut taken = vec![false; n];
    let mut min_dist = vec![f64::INFINITY; n];
    let mut current = start;
    loop {
        chosen.push(current);
        taken[current] = true;
        if chosen.len() == m {
            break;
        }
        let mut best = None;
        let mut best_dist = f64::NEG_INFINITY;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = sq(current, i);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if min_dist[i] > best_dist {
                best_dist = min_dist[i];
                best = Some(i);
            }
        }
        current = best.expect("m <= n leaves an untaken point");
    }
    Ok(chosen)
}
