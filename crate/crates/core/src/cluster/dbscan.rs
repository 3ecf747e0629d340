use std::collections::VecDeque;

use rayon::prelude::*;

use super::{ClusterAssignment, DbscanParams, NOISE};
use crate::features::Points;

/// DBSCAN with inclusive `eps` neighbourhoods (a row is its own neighbour).
///
/// Core rows are grouped into connected components of the `eps` graph. A
/// non-core row within `eps` of a core row joins the cluster of its nearest
/// core neighbour (lowest index on ties), which keeps the result independent
/// of row order. Everything else is noise.
pub fn dbscan_with(x: Points<'_>, params: &DbscanParams) -> ClusterAssignment {
    let n = x.n();
    let eps2 = params.eps * params.eps;
    let neighbours: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter_map(|j| {
                    let d = x.sq_dist(i, j);
                    (d <= eps2).then_some((j, d))
                })
                .collect()
        })
        .collect();
    let core: Vec<bool> = neighbours.iter().map(|nb| nb.len() >= params.min_samples).collect();

    let mut labels = vec![NOISE; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if !core[start] || labels[start] != NOISE {
            continue;
        }
        labels[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            for &(q, _) in &neighbours[p] {
                if core[q] && labels[q] == NOISE {
                    labels[q] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }

    for i in 0..n {
        if core[i] {
            continue;
        }
        let nearest = neighbours[i]
            .iter()
            .filter(|(j, _)| core[*j])
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        if let Some(&(j, _)) = nearest {
            labels[i] = labels[j];
        }
    }
    ClusterAssignment::from_labels(labels, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tight_group_plus_outlier() {
        let mut data = Vec::new();
        for i in 0..6 {
            data.extend([0.05 * i as f32, 0.0]);
        }
        data.extend([100.0, 0.0]);
        let x = Points::new(&data, 7, 2).unwrap();
        let out = dbscan_with(x, &DbscanParams::default());
        assert_eq!(out.labels, vec![0, 0, 0, 0, 0, 0, -1]);
        assert_eq!(out.n_clusters_found, 1);
    }

    #[test]
    fn sparse_points_are_noise() {
        let data: Vec<f32> = (0..10).map(|i| i as f32).collect();
        let x = Points::new(&data, 10, 1).unwrap();
        let out = dbscan_with(x, &DbscanParams::default());
        assert!(out.labels.iter().all(|&l| l == -1));
        assert_eq!(out.n_clusters_found, 0);
    }

    #[test]
    fn border_point_joins_nearest_core() {
        // Two dense groups; the border point at 0.72 reaches core rows of
        // both groups and is closer to the left-hand one.
        let mut data = vec![0.0f32, 0.05, 0.1, 0.15, 0.2];
        data.extend([1.3, 1.35, 1.4, 1.45, 1.5]);
        data.push(0.72);
        let x = Points::new(&data, data.len(), 1).unwrap();
        let params = DbscanParams {
            eps: 0.6,
            min_samples: 5,
        };
        let out = dbscan_with(x, &params);
        assert_eq!(out.n_clusters_found, 2);
        assert_eq!(out.labels[10], out.labels[0]);
    }
}
