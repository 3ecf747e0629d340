//! Benchmark orchestration: the model x layer x algorithm sweep, the
//! acquisition-condition protocol, and fine-grained per-class clustering.
//!
//! Features for each (model, layer) are loaded from a cache file named
//! `<dataset>__<model>__<layer>.dfc` under the cache directory, or extracted
//! and cached when the model's sidecar is configured. Cell failures are
//! recorded in their report row; only configuration and dataset errors abort
//! a run.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{run_points, AlgoConfig, Algorithm};
use crate::dataset::{
    class_condition_records, filter_single_label, load_manifest, sample_conditions, ConditionChoice,
    DatasetManifest, ImageRecord,
};
use crate::error::{Error, ErrorKind, Result};
use crate::extract::{extract_features, ModelName, ModelSpec};
use crate::features::FeatureMatrix;
use crate::metrics::{contingency, nmi, purity};

/// Environment variable that overrides the configured cache directory.
pub const CACHE_DIR_ENV: &str = "DEEPCLUSTER_CACHE_DIR";

fn default_runs() -> usize {
    10
}

fn default_combinations() -> usize {
    100
}

fn default_batch() -> usize {
    16
}

fn default_true() -> bool {
    true
}

fn default_protocol_model() -> ModelName {
    ModelName::Xception
}

fn default_protocol_layer() -> String {
    "avg_pool".into()
}

fn default_protocol_algorithm() -> Algorithm {
    Algorithm::Agglomerative
}

/// One (model, tap, algorithm) combination of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub model: ModelName,
    pub layer: String,
    pub algorithm: Algorithm,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, f64>,
}

impl GridCell {
    pub fn new(model: ModelName, layer: &str, algorithm: Algorithm) -> Self {
        GridCell {
            model,
            layer: layer.to_string(),
            algorithm,
            overrides: BTreeMap::new(),
        }
    }
}

/// Every benchmarked tap of every model crossed with every algorithm, in
/// table order: 16 taps x 7 algorithms.
pub fn layer_choice_grid() -> Vec<GridCell> {
    let mut cells = Vec::new();
    for model in ModelName::ALL {
        for layer in model.grid_taps() {
            for algorithm in Algorithm::ALL {
                cells.push(GridCell::new(model, layer, algorithm));
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionProtocol {
    #[serde(default = "default_protocol_model")]
    pub model: ModelName,
    #[serde(default = "default_protocol_layer")]
    pub layer: String,
    #[serde(default = "default_protocol_algorithm")]
    pub algorithm: Algorithm,
    #[serde(default = "default_combinations")]
    pub n_combinations: usize,
    /// Condition tags to evaluate; all tags of the dataset when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conditions: Option<Vec<u32>>,
    #[serde(default = "default_true")]
    pub include_mixed: bool,
}

impl Default for ConditionProtocol {
    fn default() -> Self {
        ConditionProtocol {
            model: default_protocol_model(),
            layer: default_protocol_layer(),
            algorithm: default_protocol_algorithm(),
            n_combinations: default_combinations(),
            conditions: None,
            include_mixed: true,
        }
    }
}

/// Sweep configuration, as read from JSON. Relative paths are resolved
/// against the directory of the config file by [`SweepConfig::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Dataset root or manifest file.
    pub dataset: PathBuf,
    #[serde(default)]
    pub grid: Vec<GridCell>,
    /// `"layer_choice"` appends [`layer_choice_grid`] to `grid`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Sidecar path per model; models without one must be fully cached.
    #[serde(default)]
    pub models: BTreeMap<ModelName, PathBuf>,
    #[serde(default = "default_runs")]
    pub runs_per_stochastic: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Drop records carrying more than one label before clustering.
    #[serde(default)]
    pub single_label: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_protocol: Option<ConditionProtocol>,
}

impl SweepConfig {
    pub fn new(dataset: impl Into<PathBuf>, grid: Vec<GridCell>) -> Self {
        SweepConfig {
            dataset: dataset.into(),
            grid,
            preset: None,
            models: BTreeMap::new(),
            runs_per_stochastic: default_runs(),
            seed: 0,
            cache_dir: None,
            batch_size: default_batch(),
            single_label: false,
            jobs: None,
            condition_protocol: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: SweepConfig = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.dataset);
        config.models.values_mut().for_each(resolve);
        if let Some(dir) = config.cache_dir.as_mut() {
            resolve(dir);
        }
        config.expand_preset()?;
        Ok(config)
    }

    fn expand_preset(&mut self) -> Result<()> {
        match self.preset.take().as_deref() {
            None => {}
            Some("layer_choice") => self.grid.extend(layer_choice_grid()),
            Some(other) => return Err(Error::Config(format!("unknown grid preset `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() && self.preset.is_none() {
            return Err(Error::Config("sweep grid is empty".into()));
        }
        if self.runs_per_stochastic == 0 {
            return Err(Error::Config("runs_per_stochastic must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be positive".into()));
        }
        if let Some(p) = &self.condition_protocol {
            if p.n_combinations == 0 {
                return Err(Error::Config("n_combinations must be at least 1".into()));
            }
        }
        Ok(())
    }

    /// Cache directory: the environment override, then the configured
    /// directory, then `cache` next to the dataset.
    pub fn cache_dir(&self) -> PathBuf {
        if let Some(dir) = std::env::var_os(CACHE_DIR_ENV).filter(|d| !d.is_empty()) {
            return PathBuf::from(dir);
        }
        if let Some(dir) = &self.cache_dir {
            return dir.clone();
        }
        let root = if self.dataset.is_file() {
            self.dataset.parent().unwrap_or(Path::new(".")).to_path_buf()
        } else {
            self.dataset.clone()
        };
        root.join("cache")
    }

    fn manifest(&self) -> Result<DatasetManifest> {
        let m = load_manifest(&self.dataset)?;
        if self.single_label {
            filter_single_label(&m)
        } else {
            Ok(m)
        }
    }
}

pub fn cache_path(dir: &Path, dataset: &str, model: ModelName, layer: &str) -> PathBuf {
    dir.join(format!("{dataset}__{model}__{layer}.dfc"))
}

/// Seed of run `run`: `base + run`, wrapping. Every cell sees the same
/// seed sequence, so scheduling cannot change results.
pub fn run_seed(base: u64, run: u64) -> u64 {
    base.wrapping_add(run)
}

/// Loads the cached features of one tap, extracting them first when a
/// sidecar is configured and the cache is missing or stale.
pub fn resolve_features(
    config: &SweepConfig,
    manifest: &DatasetManifest,
    model: ModelName,
    layer: &str,
) -> Result<FeatureMatrix> {
    let path = cache_path(&config.cache_dir(), &manifest.name, model, layer);
    let Some(sidecar) = config.models.get(&model) else {
        return FeatureMatrix::load(&path, None);
    };
    let (spec, _) = ModelSpec::from_sidecar(sidecar, layer)?;
    match FeatureMatrix::load(&path, Some(&spec.digest())) {
        Ok(m) => return Ok(m),
        Err(Error::NotFound(_)) => log::info!("no cache at {}; extracting", path.display()),
        Err(e @ Error::StaleCache { .. }) => log::warn!("{e}; re-extracting"),
        Err(e) => return Err(e),
    }
    let extraction = extract_features(&manifest.records, &spec, config.batch_size)?;
    extraction.features.save(&path)?;
    Ok(extraction.features)
}

/// Feature rows and ground truth for the manifest records present in
/// `features`, in manifest order.
pub fn align(manifest: &DatasetManifest, features: &FeatureMatrix) -> Result<(FeatureMatrix, Vec<ImageRecord>)> {
    let have: BTreeSet<&str> = features.ids().iter().map(String::as_str).collect();
    let records: Vec<ImageRecord> = manifest
        .records
        .iter()
        .filter(|r| have.contains(r.id.as_str()))
        .cloned()
        .collect();
    if records.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no record of `{}` has a feature row",
            manifest.name
        )));
    }
    if records.len() < manifest.len() {
        log::warn!(
            "{} of {} records have no feature row and are left out",
            manifest.len() - records.len(),
            manifest.len()
        );
    }
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    Ok((features.select(&ids)?, records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed { kind: ErrorKind, message: String },
}

fn first_failure<'a>(mut statuses: impl Iterator<Item = &'a CellStatus>) -> Option<ErrorKind> {
    statuses.find_map(|s| match s {
        CellStatus::Failed { kind, .. } => Some(*kind),
        CellStatus::Ok => None,
    })
}

impl CellStatus {
    pub fn failed(e: &Error) -> Self {
        CellStatus::Failed {
            kind: e.kind(),
            message: e.to_string(),
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, CellStatus::Ok)
    }
}

impl fmt::Display for CellStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellStatus::Ok => f.write_str("ok"),
            CellStatus::Failed { message, .. } => write!(f, "error: {message}"),
        }
    }
}

/// Mean and population standard deviation of a run series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Summary { mean, std: var.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub model: ModelName,
    pub layer: String,
    pub algorithm: Algorithm,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<String, f64>,
    pub n_points: usize,
    pub k: Option<usize>,
    pub nmi_mean: Option<f64>,
    pub nmi_std: Option<f64>,
    pub purity_mean: Option<f64>,
    pub seconds_mean: Option<f64>,
    pub clusters_found_mean: Option<f64>,
    pub n_runs: usize,
    pub status: CellStatus,
}

impl SweepRow {
    fn failed(cell: &GridCell, e: &Error) -> Self {
        SweepRow {
            model: cell.model,
            layer: cell.layer.clone(),
            algorithm: cell.algorithm,
            overrides: cell.overrides.clone(),
            n_points: 0,
            k: None,
            nmi_mean: None,
            nmi_std: None,
            purity_mean: None,
            seconds_mean: None,
            clusters_found_mean: None,
            n_runs: 0,
            status: CellStatus::failed(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Environment {
    pub host: String,
    pub os: String,
    pub arch: String,
    pub version: String,
    pub threads: usize,
}

impl Environment {
    pub fn current() -> Self {
        let host = std::env::var("HOSTNAME")
            .ok()
            .or_else(|| fs::read_to_string("/etc/hostname").ok())
            .map(|h| h.trim().to_string())
            .filter(|h| !h.is_empty())
            .unwrap_or_else(|| "unknown".into());
        Environment {
            host,
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            threads: rayon::current_num_threads(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub dataset: String,
    pub seed: u64,
    pub runs_per_stochastic: usize,
    pub rows: Vec<SweepRow>,
    pub environment: Environment,
}

impl SweepReport {
    pub fn has_failures(&self) -> bool {
        self.rows.iter().any(|r| !r.status.is_ok())
    }

    /// Error kind of the first failed row.
    pub fn first_failure(&self) -> Option<ErrorKind> {
        first_failure(self.rows.iter().map(|r| &r.status))
    }
}

/// Scores of one clustering run.
struct RunScore {
    nmi: f64,
    purity: f64,
    seconds: f64,
    clusters: usize,
}

fn score_run(
    features: &FeatureMatrix,
    truth: &[usize],
    config: &AlgoConfig,
    seed: u64,
) -> Result<RunScore> {
    let out = run_points(features.points(), config, seed)?;
    let table = contingency(&out.labels, truth)?;
    Ok(RunScore {
        nmi: nmi(&table),
        purity: purity(&table),
        seconds: out.wall_seconds,
        clusters: out.n_clusters_found,
    })
}

fn run_cell(
    cell: &GridCell,
    features: &FeatureMatrix,
    records: &[ImageRecord],
    runs_per_stochastic: usize,
    base_seed: u64,
) -> SweepRow {
    let truth = DatasetManifest::ground_truth(records);
    let k = cell
        .algorithm
        .takes_k()
        .then(|| DatasetManifest::distinct_classes(records));
    let config = AlgoConfig {
        algorithm: cell.algorithm,
        k,
        overrides: cell.overrides.clone(),
    };
    let n_runs = if cell.algorithm.is_stochastic() {
        runs_per_stochastic
    } else {
        1
    };
    let mut scores = Vec::with_capacity(n_runs);
    for run in 0..n_runs {
        let seed = run_seed(base_seed, run as u64);
        match score_run(features, &truth, &config, seed) {
            Ok(s) => scores.push(s),
            Err(e) => {
                log::warn!("{}/{}/{} run {run}: {e}", cell.model, cell.layer, cell.algorithm);
                let mut row = SweepRow::failed(cell, &e);
                row.n_points = features.n();
                row.k = k;
                return row;
            }
        }
    }
    let series = |f: fn(&RunScore) -> f64| Summary::of(&scores.iter().map(f).collect::<Vec<_>>());
    let nmi = series(|s| s.nmi);
    SweepRow {
        model: cell.model,
        layer: cell.layer.clone(),
        algorithm: cell.algorithm,
        overrides: cell.overrides.clone(),
        n_points: features.n(),
        k,
        nmi_mean: nmi.map(|s| s.mean),
        nmi_std: nmi.map(|s| s.std),
        purity_mean: series(|s| s.purity).map(|s| s.mean),
        seconds_mean: series(|s| s.seconds).map(|s| s.mean),
        clusters_found_mean: series(|s| s.clusters as f64).map(|s| s.mean),
        n_runs,
        status: CellStatus::Ok,
    }
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs every grid cell and returns one row per cell, in grid order.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepReport> {
    let mut config = config.clone();
    config.expand_preset()?;
    config.validate()?;
    let manifest = config.manifest()?;

    let mut taps: Vec<(ModelName, &str)> = Vec::new();
    for cell in &config.grid {
        if !taps.iter().any(|&(m, l)| m == cell.model && l == cell.layer) {
            taps.push((cell.model, &cell.layer));
        }
    }
    let mut resolved = Vec::with_capacity(taps.len());
    for &(model, layer) in &taps {
        let r = resolve_features(&config, &manifest, model, layer).and_then(|f| align(&manifest, &f));
        if let Err(e) = &r {
            log::warn!("{model}/{layer}: {e}");
        }
        resolved.push(((model, layer), r));
    }

    let rows = with_pool(config.jobs, || {
        config
            .grid
            .par_iter()
            .map(|cell| {
                let (_, tap) = resolved
                    .iter()
                    .find(|((m, l), _)| *m == cell.model && *l == cell.layer)
                    .expect("every grid tap was resolved");
                match tap {
                    Ok((features, records)) => {
                        run_cell(cell, features, records, config.runs_per_stochastic, config.seed)
                    }
                    Err(e) => SweepRow::failed(cell, e),
                }
            })
            .collect()
    })?;
    Ok(SweepReport {
        dataset: manifest.name.clone(),
        seed: config.seed,
        runs_per_stochastic: config.runs_per_stochastic,
        rows,
        environment: Environment::current(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRow {
    pub condition: ConditionChoice,
    pub n_combinations: usize,
    pub n_images: usize,
    pub k: usize,
    pub nmi_mean: Option<f64>,
    pub nmi_std: Option<f64>,
    pub purity_mean: Option<f64>,
    pub purity_std: Option<f64>,
    pub status: CellStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub dataset: String,
    pub model: ModelName,
    pub layer: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    /// How pictures are drawn for the mixed column.
    pub mixed_policy: String,
    pub rows: Vec<ConditionRow>,
    pub environment: Environment,
}

impl ConditionReport {
    pub fn has_failures(&self) -> bool {
        self.rows.iter().any(|r| !r.status.is_ok())
    }

    pub fn first_failure(&self) -> Option<ErrorKind> {
        first_failure(self.rows.iter().map(|r| &r.status))
    }
}

fn protocol_inputs(config: &SweepConfig) -> Result<(ConditionProtocol, DatasetManifest, Vec<u32>)> {
    config.validate_protocol()?;
    let protocol = config.condition_protocol.clone().unwrap_or_default();
    let manifest = config.manifest()?;
    let tags = manifest.condition_tags();
    if tags.is_empty() {
        return Err(Error::Config(format!(
            "dataset `{}` declares no acquisition conditions",
            manifest.name
        )));
    }
    let conditions = match &protocol.conditions {
        Some(c) => {
            if let Some(bad) = c.iter().find(|t| !tags.contains(t)) {
                return Err(Error::Config(format!("condition {bad} is not declared")));
            }
            c.clone()
        }
        None => tags,
    };
    Ok((protocol, manifest, conditions))
}

impl SweepConfig {
    fn validate_protocol(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be positive".into()));
        }
        if let Some(p) = &self.condition_protocol {
            if p.n_combinations == 0 {
                return Err(Error::Config("n_combinations must be at least 1".into()));
            }
        }
        Ok(())
    }
}

fn condition_row(
    choice: ConditionChoice,
    manifest: &DatasetManifest,
    features: &FeatureMatrix,
    protocol: &ConditionProtocol,
    base_seed: u64,
) -> ConditionRow {
    let label = choice.to_string();
    let mut nmis = Vec::new();
    let mut purities = Vec::new();
    let mut n_images = 0;
    let mut k = 0;
    let attempt = (0..protocol.n_combinations).try_for_each(|c| -> Result<()> {
        let seed = run_seed(base_seed, c as u64);
        let sample = sample_conditions(manifest, choice, seed)?;
        let ids: Vec<String> = sample.iter().map(|r| r.id.clone()).collect();
        let x = features.select(&ids)?;
        k = DatasetManifest::distinct_classes(&sample);
        n_images = sample.len();
        let config = AlgoConfig::new(protocol.algorithm, protocol.algorithm.takes_k().then_some(k));
        let s = score_run(&x, &DatasetManifest::ground_truth(&sample), &config, seed)?;
        nmis.push(s.nmi);
        purities.push(s.purity);
        Ok(())
    });
    let nmi = Summary::of(&nmis);
    let pur = Summary::of(&purities);
    ConditionRow {
        condition: choice,
        n_combinations: protocol.n_combinations,
        n_images,
        k,
        nmi_mean: nmi.map(|s| s.mean),
        nmi_std: nmi.map(|s| s.std),
        purity_mean: pur.map(|s| s.mean),
        purity_std: pur.map(|s| s.std),
        status: match attempt {
            Ok(()) => CellStatus::Ok,
            Err(e) => {
                log::warn!("condition {label}: {e}");
                CellStatus::failed(&e)
            }
        },
    }
}

/// Clusters one picture per object under each condition (and under mixed
/// conditions), averaged over `n_combinations` random draws.
pub fn run_condition_protocol(config: &SweepConfig) -> Result<ConditionReport> {
    let (protocol, manifest, conditions) = protocol_inputs(config)?;
    let features = resolve_features(config, &manifest, protocol.model, &protocol.layer)?;
    let mut choices: Vec<ConditionChoice> = conditions.into_iter().map(ConditionChoice::Tag).collect();
    if protocol.include_mixed {
        choices.push(ConditionChoice::Mixed);
    }
    let rows = with_pool(config.jobs, || {
        choices
            .par_iter()
            .map(|&c| condition_row(c, &manifest, &features, &protocol, config.seed))
            .collect()
    })?;
    Ok(ConditionReport {
        dataset: manifest.name.clone(),
        model: protocol.model,
        layer: protocol.layer.clone(),
        algorithm: protocol.algorithm,
        seed: config.seed,
        mixed_policy: "one picture per object; its condition drawn uniformly among those it was photographed under"
            .into(),
        rows,
        environment: Environment::current(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinegrainedRow {
    pub class: String,
    pub condition: u32,
    pub n_images: usize,
    pub n_instances: usize,
    pub purity: Option<f64>,
    pub nmi: Option<f64>,
    /// A single physical object: one cluster, purity trivially 1.
    pub degenerate: bool,
    pub status: CellStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinegrainedReport {
    pub dataset: String,
    pub model: ModelName,
    pub layer: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub rows: Vec<FinegrainedRow>,
    pub environment: Environment,
}

impl FinegrainedReport {
    pub fn has_failures(&self) -> bool {
        self.rows.iter().any(|r| !r.status.is_ok())
    }

    pub fn first_failure(&self) -> Option<ErrorKind> {
        first_failure(self.rows.iter().map(|r| &r.status))
    }
}

fn finegrained_row(
    manifest: &DatasetManifest,
    features: &FeatureMatrix,
    class: usize,
    condition: u32,
    algorithm: Algorithm,
    base_seed: u64,
) -> FinegrainedRow {
    let records = class_condition_records(manifest, class, condition);
    let mut row = FinegrainedRow {
        class: manifest.class_names[class].clone(),
        condition,
        n_images: records.len(),
        n_instances: 0,
        purity: None,
        nmi: None,
        degenerate: false,
        status: CellStatus::Ok,
    };
    let result = (|| -> Result<RunScore> {
        if records.is_empty() {
            return Err(Error::EmptyDataset(format!(
                "no picture of `{}` under condition {condition}",
                row.class
            )));
        }
        let mut instance_index: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &records {
            let inst = r.instance_id.as_deref().ok_or_else(|| {
                Error::MalformedManifest(format!("record `{}` has no instance id", r.id))
            })?;
            let next = instance_index.len();
            instance_index.entry(inst).or_insert(next);
        }
        let truth: Vec<usize> = records
            .iter()
            .map(|r| instance_index[r.instance_id.as_deref().unwrap_or_default()])
            .collect();
        row.n_instances = instance_index.len();
        let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
        let x = features.select(&ids)?;
        let k = algorithm.takes_k().then_some(row.n_instances);
        let seed = base_seed;
        score_run(&x, &truth, &AlgoConfig::new(algorithm, k), seed)
    })();
    match result {
        Ok(s) => {
            row.purity = Some(s.purity);
            row.nmi = Some(s.nmi);
            row.degenerate = row.n_instances == 1;
        }
        Err(e) => {
            log::warn!("{} / condition {condition}: {e}", row.class);
            row.status = CellStatus::failed(&e);
        }
    }
    row
}

/// Within each class and condition, clusters all pictures by physical
/// object with k = number of distinct objects.
pub fn run_finegrained(config: &SweepConfig) -> Result<FinegrainedReport> {
    let (protocol, manifest, conditions) = protocol_inputs(config)?;
    let features = resolve_features(config, &manifest, protocol.model, &protocol.layer)?;
    let cells: Vec<(usize, u32)> = (0..manifest.n_classes())
        .flat_map(|c| conditions.iter().map(move |&t| (c, t)))
        .collect();
    let rows = with_pool(config.jobs, || {
        cells
            .par_iter()
            .map(|&(c, t)| finegrained_row(&manifest, &features, c, t, protocol.algorithm, config.seed))
            .collect()
    })?;
    Ok(FinegrainedReport {
        dataset: manifest.name.clone(),
        model: protocol.model,
        layer: protocol.layer.clone(),
        algorithm: protocol.algorithm,
        seed: config.seed,
        rows,
        environment: Environment::current(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::Config(format!("unknown report format `{s}`"))),
        }
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|v| format!("{v:.digits$}")).unwrap_or_default()
}

fn csv_string(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w).map_err(|e| Error::Config(format!("csv: {e}")))?;
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(format!("csv: {}", e.error())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// A report that renders to the three output formats.
pub trait Report: Serialize + for<'de> Deserialize<'de> {
    fn to_csv(&self) -> Result<String>;
    fn to_markdown(&self) -> String;

    fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::json("<report>", e))
    }

    fn render(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Markdown => Ok(self.to_markdown()),
            ReportFormat::Json => self.to_json(),
        }
    }
}

pub const SWEEP_CSV_HEADER: [&str; 9] = [
    "model",
    "layer",
    "algorithm",
    "nmi_mean",
    "nmi_std",
    "purity_mean",
    "seconds_mean",
    "n_runs",
    "status",
];

impl Report for SweepReport {
    fn to_csv(&self) -> Result<String> {
        csv_string(|w| {
            w.write_record(SWEEP_CSV_HEADER)?;
            for r in &self.rows {
                w.write_record([
                    r.model.to_string(),
                    r.layer.clone(),
                    r.algorithm.to_string(),
                    fmt_opt(r.nmi_mean, 6),
                    fmt_opt(r.nmi_std, 6),
                    fmt_opt(r.purity_mean, 6),
                    fmt_opt(r.seconds_mean, 4),
                    r.n_runs.to_string(),
                    r.status.to_string(),
                ])?;
            }
            Ok(())
        })
    }

    /// One row per (model, layer), one column per algorithm. Each cell shows
    /// the NMI and the mean fit time in seconds.
    fn to_markdown(&self) -> String {
        let mut taps: Vec<(ModelName, &str)> = Vec::new();
        for r in &self.rows {
            if !taps.iter().any(|&(m, l)| m == r.model && l == r.layer) {
                taps.push((r.model, &r.layer));
            }
        }
        let mut out = String::from("| Model | Layer |");
        for a in Algorithm::ALL {
            out.push_str(&format!(" {a} |"));
        }
        out.push_str("\n|---|---|");
        out.push_str(&"---|".repeat(Algorithm::ALL.len()));
        out.push('\n');
        let mut last_model = None;
        for (model, layer) in taps {
            let name = if last_model == Some(model) {
                String::new()
            } else {
                model.to_string()
            };
            last_model = Some(model);
            out.push_str(&format!("| {name} | {layer} |"));
            for a in Algorithm::ALL {
                let cell = self
                    .rows
                    .iter()
                    .find(|r| r.model == model && r.layer == layer && r.algorithm == a);
                let text = match cell {
                    None => String::new(),
                    Some(r) if !r.status.is_ok() => "error".into(),
                    Some(r) => format!(
                        "{} *({}s)*",
                        fmt_opt(r.nmi_mean, 3),
                        fmt_opt(r.seconds_mean, 2)
                    ),
                };
                out.push_str(&format!(" {text} |"));
            }
            out.push('\n');
        }
        out
    }
}

impl Report for ConditionReport {
    fn to_csv(&self) -> Result<String> {
        csv_string(|w| {
            w.write_record([
                "condition",
                "n_combinations",
                "n_images",
                "k",
                "purity_mean",
                "purity_std",
                "nmi_mean",
                "nmi_std",
                "status",
            ])?;
            for r in &self.rows {
                w.write_record([
                    r.condition.to_string(),
                    r.n_combinations.to_string(),
                    r.n_images.to_string(),
                    r.k.to_string(),
                    fmt_opt(r.purity_mean, 6),
                    fmt_opt(r.purity_std, 6),
                    fmt_opt(r.nmi_mean, 6),
                    fmt_opt(r.nmi_std, 6),
                    r.status.to_string(),
                ])?;
            }
            Ok(())
        })
    }

    /// Conditions as columns, purity and NMI as rows.
    fn to_markdown(&self) -> String {
        let mut out = String::from("| Condition |");
        for r in &self.rows {
            out.push_str(&format!(" {} |", r.condition));
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(self.rows.len()));
        out.push('\n');
        for (name, get) in [
            ("Purity", (|r: &ConditionRow| r.purity_mean) as fn(&ConditionRow) -> Option<f64>),
            ("NMI", |r: &ConditionRow| r.nmi_mean),
        ] {
            out.push_str(&format!("| {name} |"));
            for r in &self.rows {
                let text = if r.status.is_ok() {
                    fmt_opt(get(r), 2)
                } else {
                    "error".into()
                };
                out.push_str(&format!(" {text} |"));
            }
            out.push('\n');
        }
        out
    }
}

impl Report for FinegrainedReport {
    fn to_csv(&self) -> Result<String> {
        csv_string(|w| {
            w.write_record([
                "class",
                "condition",
                "n_images",
                "n_instances",
                "purity",
                "nmi",
                "degenerate",
                "status",
            ])?;
            for r in &self.rows {
                w.write_record([
                    r.class.clone(),
                    r.condition.to_string(),
                    r.n_images.to_string(),
                    r.n_instances.to_string(),
                    fmt_opt(r.purity, 6),
                    fmt_opt(r.nmi, 6),
                    r.degenerate.to_string(),
                    r.status.to_string(),
                ])?;
            }
            Ok(())
        })
    }

    /// Classes as rows, conditions as columns, purity in each cell. A
    /// trailing `*` marks single-object classes.
    fn to_markdown(&self) -> String {
        let conditions: BTreeSet<u32> = self.rows.iter().map(|r| r.condition).collect();
        let mut classes: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !classes.contains(&r.class.as_str()) {
                classes.push(&r.class);
            }
        }
        let mut out = String::from("| Class |");
        for c in &conditions {
            out.push_str(&format!(" {c} |"));
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(conditions.len()));
        out.push('\n');
        for class in classes {
            out.push_str(&format!("| {class} |"));
            for &c in &conditions {
                let text = match self.rows.iter().find(|r| r.class == class && r.condition == c) {
                    None => String::new(),
                    Some(r) if !r.status.is_ok() => "error".into(),
                    Some(r) => format!("{}{}", fmt_opt(r.purity, 2), if r.degenerate { "*" } else { "" }),
                };
                out.push_str(&format!(" {text} |"));
            }
            out.push('\n');
        }
        out
    }
}

/// Writes `report` in `format` to `path`.
pub fn emit_report<R: Report>(report: &R, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = report.render(format)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub const REPORT_STEM: &str = "report";

/// Writes `report.json`, `report.csv` and `report.md` into `dir`.
pub fn write_report_dir<R: Report>(report: &R, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for format in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Markdown] {
        emit_report(report, format, dir.join(format!("{REPORT_STEM}.{}", format.extension())))?;
    }
    Ok(())
}

/// Reads a report from a JSON file, or from `report.json` inside a directory.
pub fn load_report<R: Report>(path: impl AsRef<Path>) -> Result<R> {
    let mut path = path.as_ref().to_path_buf();
    if path.is_dir() {
        path = path.join(format!("{REPORT_STEM}.json"));
    }
    if !path.exists() {
        return Err(Error::NotFound(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(&path, e))
}
