//! Ward agglomerative clustering.
//!
//! Merge costs are kept as the Ward increase in within-cluster sum of
//! squares, `|A||B| / (|A|+|B|) * |c_A - c_B|^2`, in a condensed matrix and
//! updated with the Lance-Williams recurrence. A merged cluster keeps the
//! smaller of its two slot indices, so a slot index is always the smallest
//! row index in the cluster. Among equal-cost candidates the pair with the
//! smallest `(i, j)` merges first. Costs within a relative [`TIE`] of each
//! other count as equal, since the recurrence carries rounding noise.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::features::Points;

/// Relative tolerance under which two merge costs are a tie.
const TIE: f64 = 1e-10;

/// `a` is smaller than `b` by more than rounding noise.
#[inline]
fn below(a: f64, b: f64) -> bool {
    if b.is_infinite() {
        return a < b;
    }
    a < b - TIE * b.abs()
}

struct Condensed {
    n: usize,
    data: Vec<f64>,
}

impl Condensed {
    #[inline]
    fn index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        i * self.n - i * (i + 1) / 2 + (j - i - 1)
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.index(i, j)]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: f64) {
        let ix = self.index(i, j);
        self.data[ix] = v;
    }
}

struct State {
    dist: Condensed,
    active: Vec<bool>,
    size: Vec<usize>,
    nn: Vec<Option<usize>>,
    nn_dist: Vec<f64>,
}

impl State {
    /// Nearest active slot above `i`; smallest index wins ties.
    fn rescan(&mut self, i: usize) {
        let mut best = (None, f64::INFINITY);
        for j in i + 1..self.dist.n {
            if self.active[j] {
                let d = self.dist.get(i, j);
                if best.0.is_none() || below(d, best.1) {
                    best = (Some(j), d);
                }
            }
        }
        self.nn[i] = best.0;
        self.nn_dist[i] = best.1;
    }
}

/// Cluster index (canonical by first occurrence) for each row, stopping at
/// `k` clusters.
pub fn ward_labels(x: Points<'_>, k: usize) -> Result<Vec<i32>> {
    let n = x.n();
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let mut parent: Vec<usize> = (0..n).collect();
    if k < n {
        let data: Vec<f64> = (0..n)
            .into_par_iter()
            .flat_map_iter(|i| (i + 1..n).map(move |j| 0.5 * x.sq_dist(i, j)))
            .collect();
        let mut st = State {
            dist: Condensed { n, data },
            active: vec![true; n],
            size: vec![1; n],
            nn: vec![None; n],
            nn_dist: vec![f64::INFINITY; n],
        };
        for i in 0..n {
            st.rescan(i);
        }

        for _ in 0..n - k {
            let mut best: Option<(usize, f64)> = None;
            for i in 0..n {
                if st.active[i] && st.nn[i].is_some() && best.is_none_or(|b| below(st.nn_dist[i], b.1)) {
                    best = Some((i, st.nn_dist[i]));
                }
            }
            let (a, d_ab) = best.expect("at least two active clusters");
            let b = st.nn[a].expect("checked above");

            let (na, nb) = (st.size[a] as f64, st.size[b] as f64);
            for c in 0..n {
                if !st.active[c] || c == a || c == b {
                    continue;
                }
                let nc = st.size[c] as f64;
                let v = ((nc + na) * st.dist.get(c, a) + (nc + nb) * st.dist.get(c, b) - nc * d_ab)
                    / (na + nb + nc);
                st.dist.set(c, a, v);
            }
            st.size[a] += st.size[b];
            st.active[b] = false;
            parent[b] = a;

            st.rescan(a);
            for c in 0..n {
                if !st.active[c] || c == a {
                    continue;
                }
                if c < a {
                    if st.nn[c] == Some(a) || st.nn[c] == Some(b) {
                        st.rescan(c);
                    } else {
                        let d = st.dist.get(c, a);
                        let cur = st.nn[c].expect("slot below an active slot has a neighbour");
                        if below(d, st.nn_dist[c]) || (!below(st.nn_dist[c], d) && a < cur) {
                            st.nn[c] = Some(a);
                            st.nn_dist[c] = d;
                        }
                    }
                } else if st.nn[c] == Some(b) {
                    st.rescan(c);
                }
            }
        }
    }

    fn root(parent: &[usize], mut i: usize) -> usize {
        while parent[i] != i {
            i = parent[i];
        }
        i
    }
    Ok((0..n).map(|i| root(&parent, i) as i32).collect())
}
