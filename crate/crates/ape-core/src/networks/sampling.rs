//! Farthest point sampling and nearest-neighbor grouping.

use crate::error::{Error, Result};

fn dist2(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Greedy max-min selection of `count` indices, beginning at `start`.
/// Deterministic: each step takes the point with the largest distance to
/// the selected set, lowest index on ties.
pub fn farthest_point_sampling(points: &[[f64; 3]], count: usize, start: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if count == 0 || count > n {
        return Err(Error::Precondition(format!(
            "cannot sample {count} of {n} points"
        )));
    }
    if start >= n {
        return Err(Error::Index(format!("start {start} out of range for {n} points")));
    }
    let mut selected = Vec::with_capacity(count);
    let mut min_dist = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut current = start;
    selected.push(current);
    taken[current] = true;
    while selected.len() < count {
        let mut best = usize::MAX;
        let mut best_dist = f64::NEG_INFINITY;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let d = dist2(points[i], points[current]);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if min_dist[i] > best_dist {
                best_dist = min_dist[i];
                best = i;
            }
        }
        current = best;
        selected.push(current);
        taken[current] = true;
    }
    Ok(selected)
}

/// The `k` pool members closest to `center`, ordered by (distance, index).
/// `k` must not exceed the pool size; callers clamp beforehand.
pub fn k_nearest(points: &[[f64; 3]], pool: &[usize], center: [f64; 3], k: usize) -> Vec<usize> {
    debug_assert!(k <= pool.len());
    let mut by_dist: Vec<(f64, usize)> = pool.iter().map(|&i| (dist2(points[i], center), i)).collect();
    by_dist.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1)));
    by_dist.truncate(k);
    by_dist.into_iter().map(|(_, i)| i).collect()
}
