//! Birch: one pass through a clustering-feature tree, then Ward on the leaf
//! subcluster centroids.

use super::ward::ward_labels;
use super::{BirchParams, ClusterAssignment};
use crate::error::{Error, Result};
use crate::features::Points;

/// Clustering feature: size, centroid and within-subcluster sum of squares.
#[derive(Debug, Clone)]
struct Feature {
    n: usize,
    centroid: Vec<f64>,
    sse: f64,
    first: usize,
    child: Option<usize>,
    members: Vec<usize>,
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl Feature {
    fn point(x: Points<'_>, i: usize) -> Self {
        Feature {
            n: 1,
            centroid: x.row(i).iter().map(|&v| v as f64).collect(),
            sse: 0.0,
            first: i,
            child: None,
            members: vec![i],
        }
    }

    fn combined(&self, other: &Feature) -> (usize, Vec<f64>, f64) {
        let (n1, n2) = (self.n as f64, other.n as f64);
        let n = self.n + other.n;
        let centroid = self
            .centroid
            .iter()
            .zip(&other.centroid)
            .map(|(a, b)| (n1 * a + n2 * b) / (n1 + n2))
            .collect();
        let sse = self.sse + other.sse + n1 * n2 / (n1 + n2) * sq(&self.centroid, &other.centroid);
        (n, centroid, sse)
    }

    fn merged_radius2(&self, other: &Feature) -> f64 {
        let (n, _, sse) = self.combined(other);
        sse / n as f64
    }

    fn absorb(&mut self, other: &Feature) {
        let (n, centroid, sse) = self.combined(other);
        self.n = n;
        self.centroid = centroid;
        self.sse = sse;
        self.first = self.first.min(other.first);
        if self.child.is_none() {
            self.members.extend_from_slice(&other.members);
        }
    }
}

struct Node {
    leaf: bool,
    entries: Vec<Feature>,
}

struct Tree {
    nodes: Vec<Node>,
    root: usize,
    threshold2: f64,
    branching: usize,
}

impl Tree {
    fn closest(&self, node: usize, f: &Feature) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, e) in self.nodes[node].entries.iter().enumerate() {
            let d = sq(&e.centroid, &f.centroid);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    /// Inserts and reports whether `node` now exceeds the branching factor.
    fn insert(&mut self, node: usize, f: Feature) -> bool {
        if self.nodes[node].entries.is_empty() {
            self.nodes[node].entries.push(f);
            return false;
        }
        let c = self.closest(node, &f);
        match self.nodes[node].entries[c].child {
            Some(child) => {
                let summary = Feature {
                    members: Vec::new(),
                    child: None,
                    ..f.clone()
                };
                if !self.insert(child, f) {
                    self.nodes[node].entries[c].absorb(&summary);
                    return false;
                }
                let (a, b) = self.split(child);
                let entries = &mut self.nodes[node].entries;
                entries[c] = a;
                entries.push(b);
                entries.len() > self.branching
            }
            None => {
                let entries = &mut self.nodes[node].entries;
                if entries[c].merged_radius2(&f) <= self.threshold2 {
                    entries[c].absorb(&f);
                    false
                } else {
                    entries.push(f);
                    entries.len() > self.branching
                }
            }
        }
    }

    /// Splits `node` around its farthest pair of entries into two new nodes.
    fn split(&mut self, node: usize) -> (Feature, Feature) {
        let leaf = self.nodes[node].leaf;
        let entries = std::mem::take(&mut self.nodes[node].entries);
        let mut far = (0, 1, f64::NEG_INFINITY);
        for i in 0..entries.len() {
            for j in i + 1..entries.len() {
                let d = sq(&entries[i].centroid, &entries[j].centroid);
                if d > far.2 {
                    far = (i, j, d);
                }
            }
        }
        let (mut left, mut right) = (Vec::new(), Vec::new());
        let (sa, sb) = (entries[far.0].centroid.clone(), entries[far.1].centroid.clone());
        for (i, e) in entries.into_iter().enumerate() {
            let to_left = i == far.0 || (i != far.1 && sq(&e.centroid, &sa) < sq(&e.centroid, &sb));
            if to_left {
                left.push(e);
            } else {
                right.push(e);
            }
        }
        (self.adopt(leaf, left), self.adopt(leaf, right))
    }

    fn adopt(&mut self, leaf: bool, entries: Vec<Feature>) -> Feature {
        let mut summary = Feature {
            child: None,
            members: Vec::new(),
            ..entries[0].clone()
        };
        summary.members.clear();
        for e in &entries[1..] {
            let e = Feature {
                members: Vec::new(),
                ..e.clone()
            };
            summary.absorb(&e);
        }
        summary.members.clear();
        let id = self.nodes.len();
        self.nodes.push(Node { leaf, entries });
        summary.child = Some(id);
        summary
    }

    fn leaves(&self) -> Vec<&Feature> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(node) = stack.pop() {
            let node = &self.nodes[node];
            for e in &node.entries {
                match e.child {
                    Some(c) => stack.push(c),
                    None if node.leaf => out.push(e),
                    None => {}
                }
            }
        }
        out.sort_by_key(|f| f.first);
        out
    }
}

pub fn birch_with(x: Points<'_>, k: usize, params: &BirchParams) -> Result<ClusterAssignment> {
    let n = x.n();
    if k == 0 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    let mut tree = Tree {
        nodes: vec![Node {
            leaf: true,
            entries: Vec::new(),
        }],
        root: 0,
        threshold2: params.threshold * params.threshold,
        branching: params.branching_factor,
    };
    for i in 0..n {
        if tree.insert(tree.root, Feature::point(x, i)) {
            let (a, b) = tree.split(tree.root);
            tree.nodes.push(Node {
                leaf: false,
                entries: vec![a, b],
            });
            tree.root = tree.nodes.len() - 1;
        }
    }

    let leaves = tree.leaves();
    if leaves.len() < k {
        log::debug!(
            "birch found {} subclusters for k={k}; clustering rows directly",
            leaves.len()
        );
        return Ok(ClusterAssignment::from_labels(ward_labels(x, k)?, None));
    }
    let d = x.dim();
    let centroids: Vec<f32> = leaves
        .iter()
        .flat_map(|f| f.centroid.iter().map(|&v| v as f32))
        .collect();
    let sub = ward_labels(Points::new(&centroids, leaves.len(), d)?, k)?;
    let mut labels = vec![0; n];
    for (f, &l) in leaves.iter().zip(&sub) {
        for &m in &f.members {
            labels[m] = l;
        }
    }
    Ok(ClusterAssignment::from_labels(labels, None))
}
