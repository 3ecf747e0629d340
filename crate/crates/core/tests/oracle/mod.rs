//! Deliberately naive reference implementations. They share no code with
//! the library beyond plain data types, and favour obviousness over speed.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Renumbers labels by first occurrence; every negative label becomes -1.
pub fn canonical(labels: &[i32]) -> Vec<i32> {
    let mut seen: Vec<i32> = Vec::new();
    labels
        .iter()
        .map(|&l| {
            if l < 0 {
                return -1;
            }
            match seen.iter().position(|&s| s == l) {
                Some(p) => p as i32,
                None => {
                    seen.push(l);
                    seen.len() as i32 - 1
                }
            }
        })
        .collect()
}

/// NMI from the empirical joint distribution of (prediction, truth) pairs,
/// geometric normalization, natural log. Negative predictions are one cluster.
pub fn nmi(pred: &[i32], truth: &[usize]) -> f64 {
    let n = pred.len() as f64;
    let mut joint: BTreeMap<(i32, usize), f64> = BTreeMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *joint.entry((p.max(-1), t)).or_default() += 1.0 / n;
    }
    let mut pu: BTreeMap<i32, f64> = BTreeMap::new();
    let mut pv: BTreeMap<usize, f64> = BTreeMap::new();
    for (&(u, v), &p) in &joint {
        *pu.entry(u).or_default() += p;
        *pv.entry(v).or_default() += p;
    }
    let h = |ps: Vec<f64>| -> f64 { ps.into_iter().map(|p| -p * p.ln()).sum() };
    let hu = h(pu.values().copied().collect());
    let hv = h(pv.values().copied().collect());
    if pu.len() == 1 && pv.len() == 1 {
        return 1.0;
    }
    if pu.len() == 1 || pv.len() == 1 {
        return 0.0;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(u, v), &p)| p * (p / (pu[&u] * pv[&v])).ln())
        .sum();
    mi / (hu * hv).sqrt()
}

/// Fraction of points whose class is the most common one in their cluster.
pub fn purity(pred: &[i32], truth: &[usize]) -> f64 {
    let mut per_cluster: BTreeMap<i32, BTreeMap<usize, usize>> = BTreeMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *per_cluster.entry(p.max(-1)).or_default().entry(t).or_default() += 1;
    }
    let hits: usize = per_cluster.values().map(|m| *m.values().max().unwrap()).sum();
    hits as f64 / pred.len() as f64
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn centroid(points: &[Vec<f64>], members: &[usize]) -> Vec<f64> {
    let d = points[0].len();
    let mut c = vec![0.0; d];
    for &m in members {
        for j in 0..d {
            c[j] += points[m][j];
        }
    }
    c.iter_mut().for_each(|v| *v /= members.len() as f64);
    c
}

/// Within-cluster sum of squares of one cluster.
pub fn sse(points: &[Vec<f64>], members: &[usize]) -> f64 {
    let c = centroid(points, members);
    members.iter().map(|&m| sq(&points[m], &c)).sum()
}

/// Ward clustering by exhaustive search: at every step, evaluate the SSE
/// increase of merging each pair of clusters from scratch. Clusters are
/// keyed by their smallest member; ties go to the smallest key pair.
pub fn ward(points: &[Vec<f64>], k: usize) -> Vec<i32> {
    let mut clusters: Vec<Vec<usize>> = (0..points.len()).map(|i| vec![i]).collect();
    while clusters.len() > k {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let mut union = clusters[a].clone();
                union.extend(&clusters[b]);
                let cost = sse(points, &union) - sse(points, &clusters[a]) - sse(points, &clusters[b]);
                let better = match best {
                    None => true,
                    Some((c, _, _)) => cost < c - 1e-9 * c.abs().max(1e-12),
                };
                if better {
                    best = Some((cost, a, b));
                }
            }
        }
        let (_, a, b) = best.unwrap();
        let moved = clusters.remove(b);
        clusters[a].extend(moved);
        clusters.sort_by_key(|c| *c.iter().min().unwrap());
    }
    let mut labels = vec![0; points.len()];
    for (c, members) in clusters.iter().enumerate() {
        for &m in members {
            labels[m] = c as i32;
        }
    }
    canonical(&labels)
}

/// DBSCAN evaluated on the explicit eps-neighbourhood graph: core points
/// are those with at least `min_samples` neighbours (self included); core
/// components found by flood fill; a border point takes the cluster of its
/// nearest core neighbour, lower index on ties.
pub fn dbscan(points: &[Vec<f64>], eps: f64, min_samples: usize) -> Vec<i32> {
    let n = points.len();
    let adj: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| sq(&points[i], &points[j]).sqrt() <= eps).collect())
        .collect();
    let core: Vec<bool> = adj.iter().map(|row| row.iter().filter(|&&b| b).count() >= min_samples).collect();
    let mut comp = vec![-1i32; n];
    let mut next = 0;
    for s in 0..n {
        if !core[s] || comp[s] >= 0 {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = next;
        while let Some(p) = stack.pop() {
            for q in 0..n {
                if adj[p][q] && core[q] && comp[q] < 0 {
                    comp[q] = next;
                    stack.push(q);
                }
            }
        }
        next += 1;
    }
    let mut labels = comp.clone();
    for i in 0..n {
        if core[i] {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for j in 0..n {
            if core[j] && adj[i][j] {
                let d = sq(&points[i], &points[j]);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, j));
                }
            }
        }
        labels[i] = best.map_or(-1, |(_, j)| comp[j]);
    }
    canonical(&labels)
}

/// Affinity propagation written out loop by loop: responsibilities, then
/// availabilities, damped, until the exemplar set has been stable for
/// `conv` iterations. Labels follow the nearest exemplar. Returns `None`
/// when no exemplar emerges.
pub fn affinity(points: &[Vec<f64>], damping: f64, max_iter: usize, conv: usize) -> Option<Vec<i32>> {
    let n = points.len();
    let mut s = vec![vec![0.0; n]; n];
    let mut off = Vec::new();
    for i in 0..n {
        for k in 0..n {
            if i != k {
                s[i][k] = -sq(&points[i], &points[k]);
                off.push(s[i][k]);
            }
        }
    }
    off.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = off.len();
    let pref = if m % 2 == 1 { off[m / 2] } else { (off[m / 2 - 1] + off[m / 2]) / 2.0 };
    if off.iter().all(|&v| v == off[0]) {
        // Equal similarities: everything is one cluster unless the
        // preference beats the similarities.
        return Some(if pref > off[0] { (0..n as i32).collect() } else { vec![0; n] });
    }
    for i in 0..n {
        s[i][i] = pref;
    }
    let mut r = vec![vec![0.0; n]; n];
    let mut a = vec![vec![0.0; n]; n];
    let mut history: Vec<BTreeSet<usize>> = Vec::new();
    for _ in 0..max_iter {
        for i in 0..n {
            for k in 0..n {
                let mut competitor = f64::NEG_INFINITY;
                for kk in 0..n {
                    if kk != k {
                        competitor = competitor.max(a[i][kk] + s[i][kk]);
                    }
                }
                r[i][k] = damping * r[i][k] + (1.0 - damping) * (s[i][k] - competitor);
            }
        }
        let mut new_a = vec![vec![0.0; n]; n];
        for i in 0..n {
            for k in 0..n {
                let support: f64 = (0..n).filter(|&ii| ii != i && ii != k).map(|ii| r[ii][k].max(0.0)).sum();
                new_a[i][k] = if i == k { support } else { (r[k][k] + support).min(0.0) };
            }
        }
        for i in 0..n {
            for k in 0..n {
                a[i][k] = damping * a[i][k] + (1.0 - damping) * new_a[i][k];
            }
        }
        let ex: BTreeSet<usize> = (0..n).filter(|&k| a[k][k] + r[k][k] > 0.0).collect();
        history.push(ex.clone());
        if history.len() >= conv && !ex.is_empty() && history[history.len() - conv..].iter().all(|h| *h == ex) {
            break;
        }
    }
    let mut exemplars: Vec<usize> = (0..n).filter(|&k| a[k][k] + r[k][k] > 0.0).collect();
    if exemplars.is_empty() {
        return None;
    }
    let assign = |ex: &[usize]| -> Vec<usize> {
        (0..n)
            .map(|i| {
                if let Some(p) = ex.iter().position(|&e| e == i) {
                    return p;
                }
                let mut best = 0;
                for (c, &e) in ex.iter().enumerate() {
                    if s[i][e] > s[i][ex[best]] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    };
    // Move each exemplar to the member that is most similar to the others.
    let c = assign(&exemplars);
    for (k, e) in exemplars.iter_mut().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&i| c[i] == k).collect();
        let mut best = (members[0], f64::NEG_INFINITY);
        for &j in &members {
            let total: f64 = members.iter().map(|&i| s[i][j]).sum();
            if total > best.1 {
                best = (j, total);
            }
        }
        *e = best.0;
    }
    let labels: Vec<i32> = assign(&exemplars).into_iter().map(|l| l as i32).collect();
    Some(canonical(&labels))
}

/// Best 2-partition by enumerating every split, with its inertia.
pub fn best_two_partition(points: &[Vec<f64>]) -> (Vec<i32>, f64) {
    let n = points.len();
    let mut best = (Vec::new(), f64::INFINITY);
    for mask in 1u32..(1 << n) - 1 {
        let a: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let b: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) == 0).collect();
        let cost = sse(points, &a) + sse(points, &b);
        if cost < best.1 {
            let labels: Vec<i32> = (0..n).map(|i| (mask >> i & 1) as i32).collect();
            best = (canonical(&labels), cost);
        }
    }
    best
}

/// Random points in `[-scale, scale]^d`, as f32 rows widened to f64.
pub fn random_points(rng: &mut ChaCha8Rng, n: usize, d: usize, scale: f32) -> (Vec<f32>, Vec<Vec<f64>>) {
    let flat: Vec<f32> = (0..n * d).map(|_| rng.random_range(-scale..scale)).collect();
    let rows = flat.chunks(d).map(|r| r.iter().map(|&v| v as f64).collect()).collect();
    (flat, rows)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub mod suites;
