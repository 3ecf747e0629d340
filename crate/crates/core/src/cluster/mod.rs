//! The seven clustering algorithms of the benchmark grid and their dispatch.
//!
//! Every algorithm runs with a fixed default parameter table (see
//! [`Params`]); individual values can be overridden by name through
//! [`AlgoConfig::overrides`]. Labels are always returned in canonical form:
//! cluster ids are renumbered by first occurrence and `-1` marks noise.

mod affinity;
mod birch;
mod dbscan;
mod kmeans;
mod mean_shift;
mod ward;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, Points};

pub use affinity::affinity_propagation_with;
pub use birch::birch_with;
pub use dbscan::dbscan_with;
pub use kmeans::{kmeans_fit, minibatch_kmeans_with, KMeansFit};
pub use mean_shift::{estimate_bandwidth, mean_shift_with};
pub use ward::ward_labels;

pub const NOISE: i32 = -1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub labels: Vec<i32>,
    pub n_clusters_found: usize,
    pub seed: Option<u64>,
    pub wall_seconds: f64,
}

impl ClusterAssignment {
    /// Canonicalizes `labels` and counts clusters (noise excluded).
    pub fn from_labels(labels: Vec<i32>, seed: Option<u64>) -> Self {
        let (labels, n_clusters_found) = canonical_labels(&labels);
        ClusterAssignment {
            labels,
            n_clusters_found,
            seed,
            wall_seconds: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_noise(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }
}

/// Renumbers non-negative labels by first occurrence; negatives become noise.
pub fn canonical_labels(labels: &[i32]) -> (Vec<i32>, usize) {
    let mut map: BTreeMap<i32, i32> = BTreeMap::new();
    let out = labels
        .iter()
        .map(|&l| {
            if l < 0 {
                NOISE
            } else {
                let next = map.len() as i32;
                *map.entry(l).or_insert(next)
            }
        })
        .collect();
    (out, map.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "KM")]
    KMeans,
    #[serde(rename = "MBKM")]
    MiniBatchKMeans,
    #[serde(rename = "AP")]
    AffinityPropagation,
    #[serde(rename = "MS")]
    MeanShift,
    #[serde(rename = "AC")]
    Agglomerative,
    #[serde(rename = "DBS")]
    Dbscan,
    #[serde(rename = "Bi")]
    Birch,
}

impl Algorithm {
    /// Column order of the layer-choice grid.
    pub const ALL: [Algorithm; 7] = [
        Algorithm::KMeans,
        Algorithm::MiniBatchKMeans,
        Algorithm::AffinityPropagation,
        Algorithm::MeanShift,
        Algorithm::Agglomerative,
        Algorithm::Dbscan,
        Algorithm::Birch,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Algorithm::KMeans => "KM",
            Algorithm::MiniBatchKMeans => "MBKM",
            Algorithm::AffinityPropagation => "AP",
            Algorithm::MeanShift => "MS",
            Algorithm::Agglomerative => "AC",
            Algorithm::Dbscan => "DBS",
            Algorithm::Birch => "Bi",
        }
    }

    /// Whether the number of clusters is an input.
    pub fn takes_k(self) -> bool {
        matches!(
            self,
            Algorithm::KMeans | Algorithm::MiniBatchKMeans | Algorithm::Agglomerative | Algorithm::Birch
        )
    }

    /// Whether results depend on the seed.
    pub fn is_stochastic(self) -> bool {
        matches!(self, Algorithm::KMeans | Algorithm::MiniBatchKMeans)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansParams {
    pub n_init: usize,
    pub max_iter: usize,
    /// Convergence threshold on total squared centroid shift, relative to
    /// the mean per-feature variance of the data.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            n_init: 10,
            max_iter: 300,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatchParams {
    pub batch_size: usize,
    /// Passes over the data.
    pub max_iter: usize,
    pub max_no_improvement: usize,
    pub n_init: usize,
}

impl Default for MiniBatchParams {
    fn default() -> Self {
        MiniBatchParams {
            batch_size: 100,
            max_iter: 100,
            max_no_improvement: 10,
            n_init: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityParams {
    pub damping: f64,
    pub max_iter: usize,
    pub convergence_iter: usize,
    /// Defaults to the median off-diagonal similarity.
    pub preference: Option<f64>,
}

impl Default for AffinityParams {
    fn default() -> Self {
        AffinityParams {
            damping: 0.5,
            max_iter: 200,
            convergence_iter: 15,
            preference: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanShiftParams {
    pub quantile: f64,
    /// Skips estimation when set.
    pub bandwidth: Option<f64>,
    pub max_iter: usize,
}

impl Default for MeanShiftParams {
    fn default() -> Self {
        MeanShiftParams {
            quantile: 0.3,
            bandwidth: None,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_samples: usize,
}

impl Default for DbscanParams {
    fn default() -> Self {
        DbscanParams {
            eps: 0.5,
            min_samples: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BirchParams {
    pub threshold: f64,
    pub branching_factor: usize,
}

impl Default for BirchParams {
    fn default() -> Self {
        BirchParams {
            threshold: 0.5,
            branching_factor: 50,
        }
    }
}

/// Resolved parameters for one algorithm.
#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    KMeans(KMeansParams),
    MiniBatch(MiniBatchParams),
    Affinity(AffinityParams),
    MeanShift(MeanShiftParams),
    Agglomerative,
    Dbscan(DbscanParams),
    Birch(BirchParams),
}

fn positive_int(key: &str, v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(Error::Config(format!("`{key}` must be a positive integer, got {v}")))
    }
}

fn positive(key: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("`{key}` must be positive, got {v}")))
    }
}

impl Params {
    pub fn defaults(algorithm: Algorithm) -> Params {
        match algorithm {
            Algorithm::KMeans => Params::KMeans(KMeansParams::default()),
            Algorithm::MiniBatchKMeans => Params::MiniBatch(MiniBatchParams::default()),
            Algorithm::AffinityPropagation => Params::Affinity(AffinityParams::default()),
            Algorithm::MeanShift => Params::MeanShift(MeanShiftParams::default()),
            Algorithm::Agglomerative => Params::Agglomerative,
            Algorithm::Dbscan => Params::Dbscan(DbscanParams::default()),
            Algorithm::Birch => Params::Birch(BirchParams::default()),
        }
    }

    /// Defaults with named overrides applied. Unknown keys are an error.
    pub fn resolve(algorithm: Algorithm, overrides: &BTreeMap<String, f64>) -> Result<Params> {
        let mut params = Params::defaults(algorithm);
        for (key, &v) in overrides {
            let k = key.as_str();
            match (&mut params, k) {
                (Params::KMeans(p), "n_init") => p.n_init = positive_int(k, v)?,
                (Params::KMeans(p), "max_iter") => p.max_iter = positive_int(k, v)?,
                (Params::KMeans(p), "tol") => p.tol = v.max(0.0),
                (Params::MiniBatch(p), "batch_size") => p.batch_size = positive_int(k, v)?,
                (Params::MiniBatch(p), "max_iter") => p.max_iter = positive_int(k, v)?,
                (Params::MiniBatch(p), "max_no_improvement") => p.max_no_improvement = positive_int(k, v)?,
                (Params::MiniBatch(p), "n_init") => p.n_init = positive_int(k, v)?,
                (Params::Affinity(p), "damping") => {
                    if !(0.5..1.0).contains(&v) {
                        return Err(Error::Config(format!("`damping` must be in [0.5, 1), got {v}")));
                    }
                    p.damping = v
                }
                (Params::Affinity(p), "max_iter") => p.max_iter = positive_int(k, v)?,
                (Params::Affinity(p), "convergence_iter") => p.convergence_iter = positive_int(k, v)?,
                (Params::Affinity(p), "preference") => p.preference = Some(v),
                (Params::MeanShift(p), "quantile") => {
                    if !(v > 0.0 && v <= 1.0) {
                        return Err(Error::Config(format!("`quantile` must be in (0, 1], got {v}")));
                    }
                    p.quantile = v
                }
                (Params::MeanShift(p), "bandwidth") => p.bandwidth = Some(positive(k, v)?),
                (Params::MeanShift(p), "max_iter") => p.max_iter = positive_int(k, v)?,
                (Params::Dbscan(p), "eps") => p.eps = positive(k, v)?,
                (Params::Dbscan(p), "min_samples") => p.min_samples = positive_int(k, v)?,
                (Params::Birch(p), "threshold") => p.threshold = v.max(0.0),
                (Params::Birch(p), "branching_factor") => {
                    let b = positive_int(k, v)?;
                    if b < 2 {
                        return Err(Error::Config("`branching_factor` must be at least 2".into()));
                    }
                    p.branching_factor = b
                }
                _ => {
                    return Err(Error::Config(format!(
                        "unknown parameter `{key}` for {algorithm}"
                    )))
                }
            }
        }
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub algorithm: Algorithm,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, f64>,
}

impl AlgoConfig {
    pub fn new(algorithm: Algorithm, k: Option<usize>) -> Self {
        AlgoConfig {
            algorithm,
            k,
            overrides: BTreeMap::new(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("algorithm config: {e}")))
    }

    /// Checks the k contract and resolves parameters.
    pub fn validate(&self, n: usize) -> Result<Params> {
        match (self.algorithm.takes_k(), self.k) {
            (true, None) => {
                return Err(Error::Config(format!("k required for {}", self.algorithm)))
            }
            (false, Some(_)) => {
                return Err(Error::Config(format!("k forbidden for {}", self.algorithm)))
            }
            (true, Some(k)) if k == 0 || k > n => return Err(Error::InvalidK { k, n }),
            _ => {}
        }
        Params::resolve(self.algorithm, &self.overrides)
    }
}

pub fn kmeans(x: Points<'_>, k: usize, seed: u64) -> Result<ClusterAssignment> {
    let fit = kmeans_fit(x, k, seed, &KMeansParams::default())?;
    Ok(ClusterAssignment::from_labels(fit.labels, Some(seed)))
}

pub fn minibatch_kmeans(x: Points<'_>, k: usize, seed: u64) -> Result<ClusterAssignment> {
    minibatch_kmeans_with(x, k, seed, &MiniBatchParams::default())
}

pub fn affinity_propagation(x: Points<'_>) -> Result<ClusterAssignment> {
    affinity_propagation_with(x, &AffinityParams::default())
}

pub fn mean_shift(x: Points<'_>) -> Result<ClusterAssignment> {
    mean_shift_with(x, &MeanShiftParams::default())
}

pub fn agglomerative(x: Points<'_>, k: usize) -> Result<ClusterAssignment> {
    Ok(ClusterAssignment::from_labels(ward_labels(x, k)?, None))
}

pub fn dbscan(x: Points<'_>) -> Result<ClusterAssignment> {
    Ok(dbscan_with(x, &DbscanParams::default()))
}

pub fn birch(x: Points<'_>, k: usize) -> Result<ClusterAssignment> {
    birch_with(x, k, &BirchParams::default())
}

/// Validates `config`, runs the algorithm, and times the fit alone.
pub fn run(x: &FeatureMatrix, config: &AlgoConfig, seed: u64) -> Result<ClusterAssignment> {
    run_points(x.points(), config, seed)
}

pub fn run_points(x: Points<'_>, config: &AlgoConfig, seed: u64) -> Result<ClusterAssignment> {
    let params = config.validate(x.n())?;
    let k = config.k.unwrap_or(0);
    let start = Instant::now();
    let mut out = match params {
        Params::KMeans(p) => {
            let fit = kmeans_fit(x, k, seed, &p)?;
            ClusterAssignment::from_labels(fit.labels, Some(seed))
        }
        Params::MiniBatch(p) => minibatch_kmeans_with(x, k, seed, &p)?,
        Params::Affinity(p) => affinity_propagation_with(x, &p)?,
        Params::MeanShift(p) => mean_shift_with(x, &p)?,
        Params::Agglomerative => agglomerative(x, k)?,
        Params::Dbscan(p) => dbscan_with(x, &p),
        Params::Birch(p) => birch_with(x, k, &p)?,
    };
    out.wall_seconds = start.elapsed().as_secs_f64();
    Ok(out)
}

/// On-disk form of a clustering result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentFile {
    pub algorithm: Algorithm,
    pub params: AlgoConfig,
    pub seed: Option<u64>,
    pub labels: Vec<i32>,
    pub wall_seconds: f64,
    /// Record ids aligned with `labels`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<String>>,
}

impl AssignmentFile {
    pub fn new(config: &AlgoConfig, assignment: &ClusterAssignment, ids: Option<Vec<String>>) -> Self {
        AssignmentFile {
            algorithm: config.algorithm,
            params: config.clone(),
            seed: assignment.seed,
            labels: assignment.labels.clone(),
            wall_seconds: assignment.wall_seconds,
            ids,
        }
    }
}

/// Nearest row of `centres` (row-major, `dim` wide) for an `f32` point;
/// ties go to the lower index.
pub(crate) fn nearest_centre(point: &[f32], centres: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centre) in centres.chunks(dim.max(1)).enumerate() {
        let d = crate::features::sq_dist_mixed(point, centre);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}
