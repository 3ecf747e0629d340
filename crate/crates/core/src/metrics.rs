//! External clustering scores: contingency table, NMI and purity.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cluster::NOISE;
use crate::error::{Error, Result};

/// Counts of predicted cluster (rows) against true class (columns).
///
/// Rows follow ascending predicted label with all noise points in a single
/// leading row; columns follow ascending class index. Only labels that occur
/// get a row or column, so no row or column is all zero.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

/// How mutual information is normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmiNormalization {
    /// `I / sqrt(H(U) H(V))`.
    #[default]
    Geometric,
    /// `2 I / (H(U) + H(V))`.
    Arithmetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScorePair {
    pub nmi: f64,
    pub purity: f64,
}

impl ContingencyTable {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let width = counts.first().map_or(0, Vec::len);
        if counts.iter().any(|r| r.len() != width) {
            return Err(Error::Shape("ragged contingency table".into()));
        }
        let n = counts.iter().flatten().sum();
        Ok(ContingencyTable { counts, n })
    }

    pub fn rows(&self) -> usize {
        self.counts.len()
    }

    pub fn cols(&self) -> usize {
        self.counts.first().map_or(0, Vec::len)
    }

    fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    fn col_sums(&self) -> Vec<u64> {
        let mut out = vec![0; self.cols()];
        for row in &self.counts {
            for (o, &c) in out.iter_mut().zip(row) {
                *o += c;
            }
        }
        out
    }

    pub fn transpose(&self) -> ContingencyTable {
        let counts = (0..self.cols())
            .map(|c| self.counts.iter().map(|r| r[c]).collect())
            .collect();
        ContingencyTable { counts, n: self.n }
    }
}

pub fn contingency(pred: &[i32], truth: &[usize]) -> Result<ContingencyTable> {
    if pred.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} ground-truth labels",
            pred.len(),
            truth.len()
        )));
    }
    let row_of = |p: i32| if p < 0 { NOISE } else { p };
    let rows: BTreeMap<i32, usize> = pred
        .iter()
        .map(|&p| row_of(p))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, p)| (p, i))
        .collect();
    let cols: BTreeMap<usize, usize> = truth
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(i, c)| (c, i))
        .collect();
    let mut counts = vec![vec![0u64; cols.len()]; rows.len()];
    for (&p, &t) in pred.iter().zip(truth) {
        counts[rows[&row_of(p)]][cols[&t]] += 1;
    }
    Ok(ContingencyTable {
        counts,
        n: pred.len() as u64,
    })
}

fn entropy(marginal: &[u64], n: f64) -> f64 {
    marginal
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

fn mutual_information(table: &ContingencyTable) -> f64 {
    let n = table.n as f64;
    let rows = table.row_sums();
    let cols = table.col_sums();
    let mut mi = 0.0;
    for (r, row) in table.counts.iter().enumerate() {
        for (c, &nij) in row.iter().enumerate() {
            if nij == 0 {
                continue;
            }
            let nij = nij as f64;
            mi += nij / n * ((n * nij) / (rows[r] as f64 * cols[c] as f64)).ln();
        }
    }
    mi.max(0.0)
}

pub fn nmi(table: &ContingencyTable) -> f64 {
    nmi_with(table, NmiNormalization::Geometric)
}

/// Normalized mutual information with natural-log entropies. Two constant
/// labelings score 1; exactly one constant labeling scores 0.
pub fn nmi_with(table: &ContingencyTable, norm: NmiNormalization) -> f64 {
    if table.n == 0 {
        return 0.0;
    }
    let n = table.n as f64;
    let hu = entropy(&table.row_sums(), n);
    let hv = entropy(&table.col_sums(), n);
    match (hu == 0.0, hv == 0.0) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mi = mutual_information(table);
    let denom = match norm {
        NmiNormalization::Geometric => (hu * hv).sqrt(),
        NmiNormalization::Arithmetic => 0.5 * (hu + hv),
    };
    (mi / denom).clamp(0.0, 1.0)
}

/// Share of samples belonging to the majority class of their cluster.
pub fn purity(table: &ContingencyTable) -> f64 {
    if table.n == 0 {
        return 0.0;
    }
    let hits: u64 = table
        .counts
        .iter()
        .map(|r| r.iter().copied().max().unwrap_or(0))
        .sum();
    hits as f64 / table.n as f64
}

pub fn score(pred: &[i32], truth: &[usize]) -> Result<ScorePair> {
    let table = contingency(pred, truth)?;
    Ok(ScorePair {
        nmi: nmi(&table),
        purity: purity(&table),
    })
}
