//! Library-versus-reference comparisons, shared by the oracle tests and the
//! acceptance run. Each returns a description of the first mismatch.

use rand::Rng;

use deepcluster::cluster::{
    affinity_propagation, agglomerative, dbscan_with, kmeans_fit, minibatch_kmeans, DbscanParams, KMeansParams,
};
use deepcluster::metrics::score;
use deepcluster::Points;

use super::{best_two_partition, random_points, rng};

/// The four corners of a 10 x 1 rectangle.
pub const RECTANGLE: [f32; 8] = [0.0, 0.0, 0.0, 1.0, 10.0, 0.0, 10.0, 1.0];

pub fn random_labeling(r: &mut rand_chacha::ChaCha8Rng) -> (Vec<i32>, Vec<usize>) {
    let n = r.random_range(1..=30);
    let k = r.random_range(1..=6);
    let c = r.random_range(1..=6);
    // A few predictions are noise so the noise row is exercised too.
    let pred = (0..n)
        .map(|_| if r.random_bool(0.1) { -1 } else { r.random_range(0..k) })
        .collect();
    let truth = (0..n).map(|_| r.random_range(0..c)).collect();
    (pred, truth)
}

/// NMI and purity on 200 random labelings against the joint-distribution
/// reference, within 1e-9.
pub fn metrics(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for case in 0..200 {
        let (pred, truth) = random_labeling(&mut r);
        let got = score(&pred, &truth).map_err(|e| format!("case {case}: {e}"))?;
        let (nmi, purity) = (super::nmi(&pred, &truth), super::purity(&pred, &truth));
        if (got.nmi - nmi).abs() > 1e-9 || (got.purity - purity).abs() > 1e-9 {
            return Err(format!(
                "case {case} pred={pred:?} truth={truth:?}: library ({}, {}) vs reference ({nmi}, {purity})",
                got.nmi, got.purity
            ));
        }
    }
    Ok(())
}

/// Symmetry and label-permutation invariance on 200 random labelings.
pub fn metric_properties(seed: u64) -> Result<(), String> {
    use rand::seq::SliceRandom;
    let mut r = rng(seed);
    for case in 0..200 {
        let (pred, truth) = random_labeling(&mut r);
        let pred: Vec<i32> = pred.into_iter().map(|p| p.max(0)).collect();
        let forward = score(&pred, &truth).map_err(|e| e.to_string())?;
        let swapped_pred: Vec<i32> = truth.iter().map(|&t| t as i32).collect();
        let swapped_truth: Vec<usize> = pred.iter().map(|&p| p as usize).collect();
        let backward = score(&swapped_pred, &swapped_truth).map_err(|e| e.to_string())?;
        if (forward.nmi - backward.nmi).abs() > 1e-12 {
            return Err(format!("case {case}: nmi not symmetric, {} vs {}", forward.nmi, backward.nmi));
        }
        let mut perm: Vec<i32> = (0..6).collect();
        perm.shuffle(&mut r);
        let renamed: Vec<i32> = pred.iter().map(|&p| perm[p as usize]).collect();
        let other = score(&renamed, &truth).map_err(|e| e.to_string())?;
        if (forward.nmi - other.nmi).abs() > 1e-12 || forward.purity != other.purity {
            return Err(format!("case {case}: scores change under relabelling"));
        }
    }
    Ok(())
}

/// Ward on 100 random instances with at most 8 points, every k.
pub fn ward(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for case in 0..100 {
        let n = r.random_range(2..=8);
        let d = r.random_range(1..=3);
        // Odd cases sit on a small lattice, where equal merge costs are common.
        let (flat, rows) = if case % 2 == 0 {
            random_points(&mut r, n, d, 5.0)
        } else {
            let flat: Vec<f32> = (0..n * d).map(|_| r.random_range(0..3) as f32).collect();
            let rows = flat.chunks(d).map(|p| p.iter().map(|&v| v as f64).collect()).collect();
            (flat, rows)
        };
        let x = Points::new(&flat, n, d).unwrap();
        for k in 1..=n {
            let got = agglomerative(x, k).map_err(|e| e.to_string())?.labels;
            let expect = super::ward(&rows, k);
            if got != expect {
                return Err(format!("case {case} k={k} points={rows:?}: {got:?} vs {expect:?}"));
            }
        }
    }
    Ok(())
}

/// k-means with k = 2 on the rectangle finds the split along the long side.
pub fn kmeans_rectangle() -> Result<(), String> {
    let rows: Vec<Vec<f64>> = RECTANGLE.chunks(2).map(|p| p.iter().map(|&v| v as f64).collect()).collect();
    let (expect, best) = best_two_partition(&rows);
    let x = Points::new(&RECTANGLE, 4, 2).unwrap();
    for seed in 0..5 {
        let fit = kmeans_fit(x, 2, seed, &KMeansParams::default()).map_err(|e| e.to_string())?;
        let (labels, _) = deepcluster::cluster::canonical_labels(&fit.labels);
        if labels != expect || (fit.inertia - 1.0).abs() > 1e-6 || (best - 1.0).abs() > 1e-12 {
            return Err(format!(
                "seed {seed}: labels {labels:?} inertia {} (reference {expect:?}, {best})",
                fit.inertia
            ));
        }
        let mb = minibatch_kmeans(x, 2, seed).map_err(|e| e.to_string())?;
        if mb.labels != expect {
            return Err(format!("seed {seed}: mini-batch labels {:?}", mb.labels));
        }
    }
    Ok(())
}

/// DBSCAN on 100 random instances with at most 50 points. Parameters are
/// drawn so that cores, borders and noise all occur.
pub fn dbscan(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for case in 0..100 {
        let n = r.random_range(1..=50);
        let d = r.random_range(1..=3);
        // Odd cases sit on an integer lattice so that distances hit eps exactly.
        let (flat, rows) = if case % 2 == 0 {
            random_points(&mut r, n, d, 2.0)
        } else {
            let flat: Vec<f32> = (0..n * d).map(|_| r.random_range(0..5) as f32).collect();
            let rows = flat.chunks(d).map(|p| p.iter().map(|&v| v as f64).collect()).collect();
            (flat, rows)
        };
        let params = DbscanParams {
            eps: if case % 2 == 0 { r.random_range(0.2..1.2) } else { [1.0, 2.0, 5f64.sqrt()][case % 3] },
            min_samples: r.random_range(1..=6),
        };
        let x = Points::new(&flat, n, d).unwrap();
        let got = dbscan_with(x, &params).labels;
        let expect = super::dbscan(&rows, params.eps, params.min_samples);
        if got != expect {
            return Err(format!("case {case} {params:?}: {got:?} vs {expect:?}"));
        }
    }
    Ok(())
}

/// Affinity propagation on random well-separated blobs.
pub fn affinity(seed: u64) -> Result<(), String> {
    let mut r = rng(seed);
    for case in 0..30 {
        let blobs = r.random_range(2..=4);
        let per = r.random_range(2..=5);
        let mut flat = Vec::new();
        for b in 0..blobs {
            for _ in 0..per {
                flat.push(20.0 * b as f32 + r.random_range(-1.0..1.0));
                flat.push(r.random_range(-1.0..1.0f32));
            }
        }
        let rows: Vec<Vec<f64>> = flat.chunks(2).map(|p| p.iter().map(|&v| v as f64).collect()).collect();
        let x = Points::new(&flat, rows.len(), 2).unwrap();
        let got = affinity_propagation(x).ok().map(|a| a.labels);
        let expect = super::affinity(&rows, 0.5, 200, 15);
        if got != expect {
            return Err(format!("case {case}: {got:?} vs {expect:?}"));
        }
    }
    Ok(())
}
