use rayon::prelude::*;

use super::{nearest_centre, ClusterAssignment, MeanShiftParams};
use crate::error::{Error, Result};
use crate::features::{sq_dist_mixed, Points};

/// Mean over all rows of the distance to the `ceil(quantile * n)`-th nearest
/// row, the row itself counting as the first neighbour.
pub fn estimate_bandwidth(x: Points<'_>, quantile: f64) -> f64 {
    let n = x.n();
    if n == 0 {
        return 0.0;
    }
    let rank = ((quantile * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<f64> = (0..n).map(|j| x.sq_dist(i, j)).collect();
            d.select_nth_unstable_by(rank - 1, f64::total_cmp);
            d[rank - 1].sqrt()
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total / n as f64
}

/// Follows the flat-kernel mean from `start`; returns the mode and the
/// number of rows within `bandwidth` of it.
fn climb(x: Points<'_>, start: usize, bandwidth: f64, max_iter: usize) -> Option<(Vec<f64>, usize)> {
    let d = x.dim();
    let radius2 = bandwidth * bandwidth;
    let stop = bandwidth * 1e-3;
    let mut mean: Vec<f64> = x.row(start).iter().map(|&v| v as f64).collect();
    let mut count = 0;
    for _ in 0..max_iter {
        let mut sum = vec![0.0; d];
        count = 0;
        for i in 0..x.n() {
            let row = x.row(i);
            if sq_dist_mixed(row, &mean) <= radius2 {
                count += 1;
                for (s, &v) in sum.iter_mut().zip(row) {
                    *s += v as f64;
                }
            }
        }
        if count == 0 {
            return None;
        }
        let next: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let shift: f64 = next.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        mean = next;
        if shift < stop {
            break;
        }
    }
    Some((mean, count))
}

pub fn mean_shift_with(x: Points<'_>, params: &MeanShiftParams) -> Result<ClusterAssignment> {
    let n = x.n();
    if n == 0 {
        return Err(Error::DegenerateInput("mean shift on an empty matrix".into()));
    }
    if n == 1 {
        return Ok(ClusterAssignment::from_labels(vec![0], None));
    }
    let bandwidth = match params.bandwidth {
        Some(b) => b,
        None => estimate_bandwidth(x, params.quantile),
    };
    if bandwidth.is_nan() || bandwidth <= 0.0 {
        return Err(Error::DegenerateInput(
            "estimated bandwidth is 0 (all points identical)".into(),
        ));
    }

    let modes: Vec<(Vec<f64>, usize)> = (0..n)
        .into_par_iter()
        .map(|i| climb(x, i, bandwidth, params.max_iter))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();

    // Highest-density modes first; drop any mode within one bandwidth of a kept one.
    let mut order: Vec<usize> = (0..modes.len()).collect();
    order.sort_by(|&a, &b| modes[b].1.cmp(&modes[a].1).then(a.cmp(&b)));
    let radius2 = bandwidth * bandwidth;
    let mut kept: Vec<&[f64]> = Vec::new();
    for i in order {
        let m = &modes[i].0;
        let close = kept
            .iter()
            .any(|k| k.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() <= radius2);
        if !close {
            kept.push(m);
        }
    }
    let centres: Vec<f64> = kept.concat();
    let labels: Vec<i32> = (0..n)
        .into_par_iter()
        .map(|i| nearest_centre(x.row(i), &centres, x.dim()).0 as i32)
        .collect();
    Ok(ClusterAssignment::from_labels(labels, None))
}
