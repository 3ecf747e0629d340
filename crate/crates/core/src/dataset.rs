//! Image sets on disk: manifests, ground truth, and the sampling procedures
//! used by the benchmark protocols.
//!
//! Two on-disk layouts are understood:
//!
//! * a two-level directory tree `<root>/<class_name>/<image>`, which yields
//!   single-label records whose id is `<class_name>/<file_name>`;
//! * a JSON manifest (`manifest.json` inside `root`, or `root` itself when it
//!   points at a `.json` file) carrying multi-label, condition and instance
//!   metadata.
//!
//! Class and condition names are kept in lexicographic order and records are
//! sorted by id, so the same files always produce the same label indices.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const IMAGE_EXTENSIONS: [&str; 4] = ["jpg", "jpeg", "png", "bmp"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub id: String,
    pub path: PathBuf,
    /// Indices into [`DatasetManifest::class_names`]; never empty.
    pub labels: BTreeSet<usize>,
    /// 1-based index into [`DatasetManifest::condition_names`].
    pub condition: Option<u32>,
    /// Identity of the physical object within its class.
    pub instance_id: Option<String>,
}

impl ImageRecord {
    /// The smallest label index. For single-label records this is the label.
    pub fn primary_label(&self) -> usize {
        *self
            .labels
            .iter()
            .next()
            .expect("record labels are non-empty")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub name: String,
    pub records: Vec<ImageRecord>,
    pub class_names: Vec<String>,
    pub condition_names: Option<Vec<String>>,
}

/// Which acquisition condition to draw pictures from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ConditionChoice {
    Tag(u32),
    Mixed,
}

impl fmt::Display for ConditionChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConditionChoice::Tag(t) => write!(f, "{t}"),
            ConditionChoice::Mixed => f.write_str("Mixed"),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    name: String,
    classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    conditions: Option<Vec<String>>,
    records: Vec<ManifestRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    id: String,
    path: PathBuf,
    labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    condition: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    instance: Option<String>,
}

impl DatasetManifest {
    /// Builds a manifest and enforces its invariants. Class and condition
    /// names are re-sorted lexicographically and all indices remapped.
    pub fn new(
        name: impl Into<String>,
        records: Vec<ImageRecord>,
        class_names: Vec<String>,
        condition_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let name = name.into();
        if records.is_empty() {
            return Err(Error::EmptyDataset(format!("dataset `{name}` has no records")));
        }

        let class_map = sorted_remap(&class_names, "class")?;
        let condition_map = condition_names
            .as_ref()
            .map(|c| sorted_remap(c, "condition"))
            .transpose()?;

        let mut seen = HashSet::with_capacity(records.len());
        let mut out = Vec::with_capacity(records.len());
        for mut rec in records {
            if !seen.insert(rec.id.clone()) {
                return Err(Error::MalformedManifest(format!("duplicate record id `{}`", rec.id)));
            }
            if rec.labels.is_empty() {
                return Err(Error::MalformedManifest(format!("record `{}` has no labels", rec.id)));
            }
            let mut labels = BTreeSet::new();
            for &l in &rec.labels {
                let mapped = class_map.get(l).ok_or_else(|| {
                    Error::MalformedManifest(format!(
                        "record `{}` label {l} out of range ({} classes)",
                        rec.id,
                        class_names.len()
                    ))
                })?;
                labels.insert(*mapped);
            }
            rec.labels = labels;
            if let Some(tag) = rec.condition {
                let map = condition_map.as_ref().ok_or_else(|| {
                    Error::MalformedManifest(format!(
                        "record `{}` has a condition but the manifest declares none",
                        rec.id
                    ))
                })?;
                let ix = (tag as usize).checked_sub(1).filter(|&i| i < map.len());
                let ix = ix.ok_or_else(|| {
                    Error::MalformedManifest(format!(
                        "record `{}` condition {tag} not in 1..={}",
                        rec.id,
                        map.len()
                    ))
                })?;
                rec.condition = Some(map[ix] as u32 + 1);
            }
            out.push(rec);
        }
        out.sort_by(|a, b| a.id.cmp(&b.id));

        let mut class_names = class_names;
        class_names.sort();
        let condition_names = condition_names.map(|mut c| {
            c.sort();
            c
        });

        Ok(DatasetManifest {
            name,
            records: out,
            class_names,
            condition_names,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.class_names.len()
    }

    /// Ground-truth class index (primary label) for each given record.
    pub fn ground_truth(records: &[ImageRecord]) -> Vec<usize> {
        records.iter().map(ImageRecord::primary_label).collect()
    }

    /// Number of distinct primary classes among `records`.
    pub fn distinct_classes(records: &[ImageRecord]) -> usize {
        records
            .iter()
            .map(ImageRecord::primary_label)
            .collect::<BTreeSet<_>>()
            .len()
    }

    pub fn record(&self, id: &str) -> Option<&ImageRecord> {
        self.records
            .binary_search_by(|r| r.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.records[i])
    }

    /// All declared condition tags, as [`ConditionChoice::Tag`] values.
    pub fn condition_tags(&self) -> Vec<u32> {
        match &self.condition_names {
            Some(c) => (1..=c.len() as u32).collect(),
            None => Vec::new(),
        }
    }

    /// Serializes in the manifest-file format; paths are written as stored.
    pub fn to_json(&self) -> Result<String> {
        let file = ManifestFile {
            name: self.name.clone(),
            classes: self.class_names.clone(),
            conditions: self.condition_names.clone(),
            records: self
                .records
                .iter()
                .map(|r| ManifestRecord {
                    id: r.id.clone(),
                    path: r.path.clone(),
                    labels: r.labels.iter().copied().collect(),
                    condition: r.condition,
                    instance: r.instance_id.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::json("<manifest>", e))
    }
}

fn sorted_remap(names: &[String], what: &str) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..names.len()).collect();
    order.sort_by(|&a, &b| names[a].cmp(&names[b]));
    for w in order.windows(2) {
        if names[w[0]] == names[w[1]] {
            return Err(Error::MalformedManifest(format!(
                "duplicate {what} name `{}`",
                names[w[0]]
            )));
        }
    }
    let mut map = vec![0; names.len()];
    for (new, &old) in order.iter().enumerate() {
        map[old] = new;
    }
    Ok(map)
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.iter().any(|x| x.eq_ignore_ascii_case(e)))
        .unwrap_or(false)
}

/// Loads a dataset from a manifest file or a `class/<image>` directory tree.
pub fn load_manifest(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    if !root.exists() {
        return Err(Error::NotFound(root.to_path_buf()));
    }
    if root.is_file() {
        return load_manifest_file(root);
    }
    let manifest = root.join(MANIFEST_FILE);
    if manifest.is_file() {
        return load_manifest_file(&manifest);
    }
    load_directory(root)
}

fn load_manifest_file(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ManifestFile = serde_json::from_str(&text)
        .map_err(|e| Error::MalformedManifest(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let records = file
        .records
        .into_iter()
        .map(|r| ImageRecord {
            path: base.join(&r.path),
            labels: r.labels.into_iter().collect(),
            id: r.id,
            condition: r.condition,
            instance_id: r.instance,
        })
        .collect();
    DatasetManifest::new(file.name, records, file.classes, file.conditions)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn load_directory(root: &Path) -> Result<DatasetManifest> {
    let name = root
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let mut class_names = Vec::new();
    let mut records = Vec::new();
    for class_dir in sorted_entries(root)? {
        if !class_dir.is_dir() {
            continue;
        }
        let class_name = class_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let images: Vec<PathBuf> = sorted_entries(&class_dir)?
            .into_iter()
            .filter(|p| p.is_file() && is_image(p))
            .collect();
        if images.is_empty() {
            continue;
        }
        let label = class_names.len();
        class_names.push(class_name.clone());
        for path in images {
            let file = path.file_name().unwrap_or_default().to_string_lossy();
            records.push(ImageRecord {
                id: format!("{class_name}/{file}"),
                path,
                labels: BTreeSet::from([label]),
                condition: None,
                instance_id: None,
            });
        }
    }
    if records.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no images under {}",
            root.display()
        )));
    }
    DatasetManifest::new(name, records, class_names, None)
}

/// Keeps only records carrying exactly one label and drops classes left empty.
pub fn filter_single_label(manifest: &DatasetManifest) -> Result<DatasetManifest> {
    let kept: Vec<&ImageRecord> = manifest.records.iter().filter(|r| r.labels.len() == 1).collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no single-label records in `{}`",
            manifest.name
        )));
    }
    let used: BTreeSet<usize> = kept.iter().map(|r| r.primary_label()).collect();
    // `used` is ordered and class_names is sorted, so surviving names stay sorted.
    let mut remap = vec![usize::MAX; manifest.class_names.len()];
    let mut class_names = Vec::with_capacity(used.len());
    for (new, &old) in used.iter().enumerate() {
        remap[old] = new;
        class_names.push(manifest.class_names[old].clone());
    }
    let records = kept
        .into_iter()
        .map(|r| ImageRecord {
            labels: BTreeSet::from([remap[r.primary_label()]]),
            ..r.clone()
        })
        .collect();
    Ok(DatasetManifest {
        name: manifest.name.clone(),
        records,
        class_names,
        condition_names: manifest.condition_names.clone(),
    })
}

/// An object is identified by its class and its instance id within the class.
pub type ObjectKey = (usize, String);

fn objects(manifest: &DatasetManifest) -> Result<BTreeMap<ObjectKey, Vec<&ImageRecord>>> {
    if manifest.condition_names.is_none() {
        return Err(Error::MalformedManifest(format!(
            "`{}` declares no acquisition conditions",
            manifest.name
        )));
    }
    let mut by_object: BTreeMap<ObjectKey, Vec<&ImageRecord>> = BTreeMap::new();
    for rec in &manifest.records {
        let instance = rec.instance_id.clone().ok_or_else(|| {
            Error::MalformedManifest(format!("record `{}` has no instance id", rec.id))
        })?;
        if rec.condition.is_none() {
            return Err(Error::MalformedManifest(format!(
                "record `{}` has no condition tag",
                rec.id
            )));
        }
        by_object
            .entry((rec.primary_label(), instance))
            .or_default()
            .push(rec);
    }
    Ok(by_object)
}

fn object_name(manifest: &DatasetManifest, key: &ObjectKey) -> String {
    format!("{}/{}", manifest.class_names[key.0], key.1)
}

/// Draws one picture per physical object.
///
/// For a fixed condition, each object contributes one of its pictures taken
/// under that condition. For [`ConditionChoice::Mixed`], each object first
/// draws a condition uniformly among those it was photographed under. Output
/// is ordered by (class, instance) and is a pure function of `seed`.
pub fn sample_conditions(
    manifest: &DatasetManifest,
    condition: ConditionChoice,
    seed: u64,
) -> Result<Vec<ImageRecord>> {
    let by_object = objects(manifest)?;
    if let ConditionChoice::Tag(t) = condition {
        if !manifest.condition_tags().contains(&t) {
            return Err(Error::Config(format!("condition {t} is not declared")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(by_object.len());
    for (key, pictures) in &by_object {
        let tag = match condition {
            ConditionChoice::Tag(t) => t,
            ConditionChoice::Mixed => {
                let available: Vec<u32> = pictures
                    .iter()
                    .filter_map(|r| r.condition)
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect();
                *available.choose(&mut rng).expect("object has at least one picture")
            }
        };
        let candidates: Vec<&ImageRecord> = pictures
            .iter()
            .copied()
            .filter(|r| r.condition == Some(tag))
            .collect();
        let pick = candidates.choose(&mut rng).ok_or_else(|| Error::Coverage {
            object: object_name(manifest, key),
            condition: tag.to_string(),
        })?;
        out.push((*pick).clone());
    }
    Ok(out)
}

/// All pictures of one class taken under one condition, sorted by id.
pub fn class_condition_records(
    manifest: &DatasetManifest,
    class: usize,
    condition: u32,
) -> Vec<ImageRecord> {
    manifest
        .records
        .iter()
        .filter(|r| r.primary_label() == class && r.condition == Some(condition))
        .cloned()
        .collect()
}
