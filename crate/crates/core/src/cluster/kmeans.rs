use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{nearest_centre, ClusterAssignment, KMeansParams, MiniBatchParams};
use crate::error::{Error, Result};
use crate::features::{sq_dist_mixed, Points};

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub labels: Vec<i32>,
    /// `k x d`, row-major.
    pub centroids: Vec<f64>,
    pub inertia: f64,
    pub n_iter: usize,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
}

fn check_k(x: Points<'_>, k: usize) -> Result<()> {
    if k == 0 || k > x.n() {
        return Err(Error::InvalidK { k, n: x.n() });
    }
    Ok(())
}

/// Labels and squared distances to the nearest centre, for every row.
fn assign(x: Points<'_>, centres: &[f64]) -> (Vec<i32>, Vec<f64>) {
    let pairs: Vec<(usize, f64)> = (0..x.n())
        .into_par_iter()
        .map(|i| nearest_centre(x.row(i), centres, x.dim()))
        .collect();
    pairs.into_iter().map(|(c, d)| (c as i32, d)).unzip()
}

fn row_f64(x: Points<'_>, i: usize) -> impl Iterator<Item = f64> + '_ {
    x.row(i).iter().map(|&v| v as f64)
}

/// Greedy k-means++ over the rows listed in `subset`.
pub(crate) fn kmeans_plus_plus(x: Points<'_>, subset: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let d = x.dim();
    let m = subset.len();
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centres = Vec::with_capacity(k * d);
    let mut chosen = vec![false; m];

    let first = rng.random_range(0..m);
    chosen[first] = true;
    centres.extend(row_f64(x, subset[first]));
    let mut closest: Vec<f64> = subset
        .iter()
        .map(|&i| sq_dist_mixed(x.row(i), &centres[..d]))
        .collect();

    for _ in 1..k {
        let pot: f64 = closest.iter().sum();
        let pick = if pot > 0.0 {
            let mut best: Option<(usize, f64, Vec<f64>)> = None;
            for _ in 0..trials {
                let target = rng.random::<f64>() * pot;
                let mut acc = 0.0;
                let mut cand = m - 1;
                for (j, &c) in closest.iter().enumerate() {
                    acc += c;
                    if acc > target {
                        cand = j;
                        break;
                    }
                }
                let row = x.row(subset[cand]);
                let updated: Vec<f64> = subset
                    .iter()
                    .zip(&closest)
                    .map(|(&i, &c)| c.min(crate::features::sq_dist(x.row(i), row)))
                    .collect();
                let new_pot: f64 = updated.iter().sum();
                if best.as_ref().is_none_or(|b| new_pot < b.1) {
                    best = Some((cand, new_pot, updated));
                }
            }
            let (cand, _, updated) = best.expect("at least one trial");
            closest = updated;
            cand
        } else {
            // Every remaining row coincides with a centre: take any unused row.
            let free: Vec<usize> = (0..m).filter(|&j| !chosen[j]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        let start = centres.len();
        centres.extend(row_f64(x, subset[pick]));
        let c = centres[start..].to_vec();
        for (slot, &i) in closest.iter_mut().zip(subset) {
            *slot = slot.min(sq_dist_mixed(x.row(i), &c));
        }
    }
    centres
}

/// Mean of the per-feature variances; scales the convergence tolerance.
fn mean_variance(x: Points<'_>) -> f64 {
    let (n, d) = (x.n(), x.dim());
    if n == 0 || d == 0 {
        return 0.0;
    }
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(row_f64(x, i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = 0.0;
    for i in 0..n {
        var += sq_dist_mixed(x.row(i), &mean);
    }
    var / (n * d) as f64
}

fn lloyd(x: Points<'_>, mut centres: Vec<f64>, k: usize, max_iter: usize, tol: f64) -> KMeansFit {
    let d = x.dim();
    let mut history = Vec::new();
    let mut prev: Option<Vec<i32>> = None;
    let mut n_iter = 0;
    for _ in 0..max_iter {
        n_iter += 1;
        let (labels, dists) = assign(x, &centres);
        history.push(dists.iter().sum());
        if prev.as_ref() == Some(&labels) {
            break;
        }

        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            let l = l as usize;
            counts[l] += 1;
            for (s, v) in sums[l * d..(l + 1) * d].iter_mut().zip(row_f64(x, i)) {
                *s += v;
            }
        }
        // Empty clusters take the rows farthest from their current centre.
        let mut far: Vec<usize> = (0..x.n()).collect();
        far.sort_by(|&a, &b| dists[b].total_cmp(&dists[a]).then(a.cmp(&b)));
        let mut far = far.into_iter();
        let mut new = vec![0.0; k * d];
        for c in 0..k {
            let slot = &mut new[c * d..(c + 1) * d];
            if counts[c] > 0 {
                for (s, v) in slot.iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                    *s = v / counts[c] as f64;
                }
            } else if let Some(i) = far.next() {
                slot.iter_mut().zip(row_f64(x, i)).for_each(|(s, v)| *s = v);
            }
        }
        let shift: f64 = new.iter().zip(&centres).map(|(a, b)| (a - b) * (a - b)).sum();
        centres = new;
        prev = Some(labels);
        if shift <= tol {
            break;
        }
    }
    let (labels, dists) = assign(x, &centres);
    let inertia = dists.iter().sum();
    KMeansFit {
        labels,
        centroids: centres,
        inertia,
        n_iter,
        inertia_history: history,
    }
}

/// k-means with k-means++ seeding and Lloyd iterations; the restart with the
/// lowest inertia wins.
pub fn kmeans_fit(x: Points<'_>, k: usize, seed: u64, params: &KMeansParams) -> Result<KMeansFit> {
    check_k(x, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = params.tol * mean_variance(x);
    let all: Vec<usize> = (0..x.n()).collect();
    let mut best: Option<KMeansFit> = None;
    for _ in 0..params.n_init.max(1) {
        let centres = kmeans_plus_plus(x, &all, k, &mut rng);
        let fit = lloyd(x, centres, k, params.max_iter, tol);
        if best.as_ref().is_none_or(|b| fit.inertia < b.inertia) {
            best = Some(fit);
        }
    }
    Ok(best.expect("n_init >= 1"))
}

/// Mini-batch k-means: per-centre learning rate `1 / count`, early stop when
/// the smoothed batch inertia stops improving.
pub fn minibatch_kmeans_with(
    x: Points<'_>,
    k: usize,
    seed: u64,
    params: &MiniBatchParams,
) -> Result<ClusterAssignment> {
    check_k(x, k)?;
    let (n, d) = (x.n(), x.dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = params.batch_size.min(n);
    let full_batch = batch == n;

    let init_size = (3 * batch).max(k).min(n);
    let init_rows: Vec<usize> = if init_size == n {
        (0..n).collect()
    } else {
        let mut rows = rand::seq::index::sample(&mut rng, n, init_size).into_vec();
        rows.sort_unstable();
        rows
    };
    let init_points: Vec<f32> = init_rows.iter().flat_map(|&i| x.row(i).iter().copied()).collect();
    let init_view = Points::new(&init_points, init_rows.len(), d)?;
    let mut centres = Vec::new();
    let mut best_inertia = f64::INFINITY;
    let local: Vec<usize> = (0..init_rows.len()).collect();
    for _ in 0..params.n_init.max(1) {
        let cand = kmeans_plus_plus(init_view, &local, k, &mut rng);
        let (_, dists) = assign(init_view, &cand);
        let inertia: f64 = dists.iter().sum();
        if inertia < best_inertia {
            best_inertia = inertia;
            centres = cand;
        }
    }

    let mut counts = vec![0u64; k];
    let steps = params.max_iter * n.div_ceil(batch);
    let alpha = (2.0 * batch as f64 / (n as f64 + 1.0)).min(1.0);
    let mut ewa: Option<f64> = None;
    let mut ewa_best = f64::INFINITY;
    let mut no_improvement = 0;
    let all: Vec<usize> = (0..n).collect();
    for _ in 0..steps {
        let rows: Vec<usize> = if full_batch {
            all.clone()
        } else {
            (0..batch).map(|_| rng.random_range(0..n)).collect()
        };
        let mut sums = vec![0.0; k * d];
        let mut hits = vec![0u64; k];
        let mut batch_inertia = 0.0;
        for &i in &rows {
            let (c, dist) = nearest_centre(x.row(i), &centres, d);
            batch_inertia += dist;
            hits[c] += 1;
            for (s, v) in sums[c * d..(c + 1) * d].iter_mut().zip(row_f64(x, i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if hits[c] == 0 {
                continue;
            }
            let old = counts[c] as f64;
            counts[c] += hits[c];
            let total = counts[c] as f64;
            for (cv, s) in centres[c * d..(c + 1) * d].iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                *cv = (*cv * old + s) / total;
            }
        }
        let batch_inertia = batch_inertia / rows.len() as f64;
        let smoothed = match ewa {
            None => batch_inertia,
            Some(prev) => prev * (1.0 - alpha) + batch_inertia * alpha,
        };
        ewa = Some(smoothed);
        if smoothed < ewa_best {
            ewa_best = smoothed;
            no_improvement = 0;
        } else {
            no_improvement += 1;
            if no_improvement >= params.max_no_improvement {
                break;
            }
        }
    }
    let (labels, _) = assign(x, &centres);
    Ok(ClusterAssignment::from_labels(labels, Some(seed)))
}
