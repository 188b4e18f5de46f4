//! Kraskov-Stögbauer-Grassberger mutual information, estimator 1.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::special::digamma;
use super::{mean, population_std, StatsError};

/// Jitter amplitude relative to a unit-variance variable.
const JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MiEstimate {
    /// Clamped at zero.
    pub nats: f64,
    pub raw: f64,
    pub k: usize,
    pub n: usize,
}

fn standardize(v: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let m = mean(v);
    let s = population_std(v);
    let s = if s > 0.0 { s } else { 1.0 };
    v.iter()
        .map(|&x| (x - m) / s + JITTER * (rng.random::<f64>() - 0.5))
        .collect()
}

/// Distance to the `k`-th nearest neighbour of every point under the max norm.
/// `order` sorts points by x.
fn kth_distances(xs: &[f64], ys: &[f64], order: &[usize], k: usize) -> Vec<f64> {
    let n = xs.len();
    let mut rank = vec![0usize; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    (0..n)
        .into_par_iter()
        .map(|i| {
            // sorted ascending, at most k entries
            let mut best: Vec<f64> = Vec::with_capacity(k + 1);
            let push = |best: &mut Vec<f64>, d: f64| {
                if best.len() == k && d >= best[k - 1] {
                    return;
                }
                let pos = best.partition_point(|&b| b <= d);
                best.insert(pos, d);
                best.truncate(k);
            };
            let r = rank[i];
            let (mut lo, mut hi) = (r, r + 1);
            let mut go_lo = r > 0;
            let mut go_hi = hi < n;
            while go_lo || go_hi {
                if go_lo {
                    let j = order[lo - 1];
                    let dx = xs[i] - xs[j];
                    if best.len() == k && dx > best[k - 1] {
                        go_lo = false;
                    } else {
                        push(&mut best, dx.abs().max((ys[i] - ys[j]).abs()));
                        lo -= 1;
                        go_lo = lo > 0;
                    }
                }
                if go_hi {
                    let j = order[hi];
                    let dx = xs[j] - xs[i];
                    if best.len() == k && dx > best[k - 1] {
                        go_hi = false;
                    } else {
                        push(&mut best, dx.abs().max((ys[i] - ys[j]).abs()));
                        hi += 1;
                        go_hi = hi < n;
                    }
                }
            }
            best[k - 1]
        })
        .collect()
}

/// Points strictly within `eps` of `v`, excluding the point itself.
fn count_within(sorted: &[f64], v: f64, eps: f64) -> usize {
    let lo = sorted.partition_point(|&s| s <= v - eps);
    let hi = sorted.partition_point(|&s| s < v + eps);
    hi - lo - 1
}

/// KSG estimator 1 with max-norm neighbourhoods. Ties are broken by seeded
/// jitter after standardizing each variable, so the result is deterministic
/// for a given `seed`.
pub fn ksg_mi(x: &[f64], y: &[f64], k: usize, seed: u64) -> Result<MiEstimate, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if k == 0 || n <= k {
        return Err(StatsError::TooFewPoints { n, needed: k + 1 });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = standardize(x, &mut rng);
    let ys = standardize(y, &mut rng);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let eps = kth_distances(&xs, &ys, &order, k);

    let mut sx = xs.clone();
    sx.sort_by(f64::total_cmp);
    let mut sy = ys.clone();
    sy.sort_by(f64::total_cmp);
    let terms: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let nx = count_within(&sx, xs[i], eps[i]);
            let ny = count_within(&sy, ys[i], eps[i]);
            digamma(nx as f64 + 1.0) + digamma(ny as f64 + 1.0)
        })
        .collect();
    let raw = digamma(k as f64) + digamma(n as f64) - mean(&terms);
    Ok(MiEstimate {
        nats: raw.max(0.0),
        raw,
        k,
        n,
    })
}
