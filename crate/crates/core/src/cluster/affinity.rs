use rayon::prelude::*;

use super::{AffinityParams, ClusterAssignment};
use crate::error::{Error, Result};
use crate::features::Points;

/// Negative squared distances with `preference` on the diagonal.
fn similarities(x: Points<'_>, preference: Option<f64>) -> (Vec<f64>, f64) {
    let n = x.n();
    let mut s: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|ij| -x.sq_dist(ij / n, ij % n))
        .collect();
    let pref = preference.unwrap_or_else(|| {
        let mut off: Vec<f64> = (0..n * n).filter(|ij| ij / n != ij % n).map(|ij| s[ij]).collect();
        off.sort_by(f64::total_cmp);
        let m = off.len();
        if m % 2 == 1 {
            off[m / 2]
        } else {
            (off[m / 2 - 1] + off[m / 2]) / 2.0
        }
    });
    for i in 0..n {
        s[i * n + i] = pref;
    }
    (s, pref)
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Affinity propagation on negative squared Euclidean similarities.
pub fn affinity_propagation_with(x: Points<'_>, params: &AffinityParams) -> Result<ClusterAssignment> {
    let n = x.n();
    if n < 2 {
        return Err(Error::DegenerateInput(format!(
            "affinity propagation needs at least 2 samples, got {n}"
        )));
    }
    let (s, pref) = similarities(x, params.preference);

    // All similarities equal: the answer is fixed by how the preference compares.
    let first_off = s[1];
    let all_equal = (0..n * n).all(|ij| ij / n == ij % n || s[ij] == first_off);
    if all_equal {
        let labels = if pref > first_off {
            (0..n as i32).collect()
        } else {
            vec![0; n]
        };
        return Ok(ClusterAssignment::from_labels(labels, None));
    }

    let damping = params.damping;
    let conv = params.convergence_iter;
    let mut r = vec![0.0f64; n * n];
    let mut a = vec![0.0f64; n * n];
    let mut history: Vec<Vec<bool>> = vec![vec![false; n]; conv];
    let mut converged = false;
    let mut iterations = 0;
    let mut last_k = 0;

    for it in 0..params.max_iter {
        iterations = it + 1;
        // Responsibilities.
        r.par_chunks_mut(n).enumerate().for_each(|(i, r_row)| {
            let row = |k: usize| a[i * n + k] + s[i * n + k];
            let mut first = (0usize, f64::NEG_INFINITY);
            let mut second = f64::NEG_INFINITY;
            for k in 0..n {
                let v = row(k);
                if v > first.1 {
                    second = first.1;
                    first = (k, v);
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let competitor = if k == first.0 { second } else { first.1 };
                let new = s[i * n + k] - competitor;
                r_row[k] = damping * r_row[k] + (1.0 - damping) * new;
            }
        });

        // Availabilities, column by column.
        let col_sums: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|k| {
                (0..n)
                    .map(|i| if i == k { r[k * n + k] } else { r[i * n + k].max(0.0) })
                    .sum()
            })
            .collect();
        a.par_chunks_mut(n).enumerate().for_each(|(i, a_row)| {
            for k in 0..n {
                let own = if i == k { r[k * n + k] } else { r[i * n + k].max(0.0) };
                let rest = col_sums[k] - own;
                let new = if i == k { rest } else { rest.min(0.0) };
                a_row[k] = damping * a_row[k] + (1.0 - damping) * new;
            }
        });

        let exemplar: Vec<bool> = (0..n).map(|k| a[k * n + k] + r[k * n + k] > 0.0).collect();
        last_k = exemplar.iter().filter(|&&e| e).count();
        history[it % conv] = exemplar;
        if it + 1 >= conv {
            let stable = (0..n).all(|k| {
                let c = history.iter().filter(|h| h[k]).count();
                c == 0 || c == conv
            });
            if stable && last_k > 0 {
                converged = true;
                break;
            }
        }
    }

    let mut exemplars: Vec<usize> = (0..n).filter(|&k| a[k * n + k] + r[k * n + k] > 0.0).collect();
    if exemplars.is_empty() {
        return Err(Error::NonConvergence(format!(
            "no exemplar after {iterations} iterations (last exemplar count {last_k}, preference {pref:.6e})"
        )));
    }
    if !converged {
        log::warn!("affinity propagation stopped after {iterations} iterations without converging");
    }

    let assign = |exemplars: &[usize]| -> Vec<usize> {
        let mut c: Vec<usize> = (0..n)
            .map(|i| argmax(exemplars.iter().map(|&e| s[i * n + e])))
            .collect();
        for (k, &e) in exemplars.iter().enumerate() {
            c[e] = k;
        }
        c
    };

    // Refine each exemplar to the member with the highest in-cluster similarity.
    let c = assign(&exemplars);
    for (k, ex) in exemplars.iter_mut().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&i| c[i] == k).collect();
        let best = argmax(members.iter().map(|&j| members.iter().map(|&i| s[i * n + j]).sum()));
        *ex = members[best];
    }
    let c = assign(&exemplars);
    let labels = c.into_iter().map(|l| l as i32).collect();
    Ok(ClusterAssignment::from_labels(labels, None))
}
