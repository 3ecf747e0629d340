//! Deep-feature extraction from frozen ONNX graphs.
//!
//! A model is an ONNX file with one input named `input` (`N x H x W x 3`,
//! `f32`) and one named graph output per tap, plus a JSON sidecar
//! describing the taps and the input convention.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tract_onnx::prelude::*;

use crate::dataset::ImageRecord;
use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, Provenance};
use crate::preprocess::{load_rgb, preprocess, Preprocessing};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    InceptionV3,
    Resnet50,
    Vgg16,
    Vgg19,
    Xception,
}

impl ModelName {
    pub const ALL: [ModelName; 5] = [
        ModelName::InceptionV3,
        ModelName::Resnet50,
        ModelName::Vgg16,
        ModelName::Vgg19,
        ModelName::Xception,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelName::InceptionV3 => "inception_v3",
            ModelName::Resnet50 => "resnet50",
            ModelName::Vgg16 => "vgg16",
            ModelName::Vgg19 => "vgg19",
            ModelName::Xception => "xception",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ModelName::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model `{s}`")))
    }

    /// Input size and normalization the pretrained weights expect.
    pub fn input_convention(self) -> ((u32, u32), Preprocessing) {
        match self {
            ModelName::InceptionV3 | ModelName::Xception => ((299, 299), Preprocessing::ScaleMinus1To1),
            ModelName::Resnet50 | ModelName::Vgg16 | ModelName::Vgg19 => {
                ((224, 224), Preprocessing::MeanSubtractBgr)
            }
        }
    }

    /// Taps benchmarked in the layer-choice grid. Xception's last block has
    /// two activations; both are listed and a sweep must name one explicitly.
    pub fn grid_taps(self) -> &'static [&'static str] {
        match self {
            ModelName::InceptionV3 => &["mixed9", "mixed10", "avg_pool"],
            ModelName::Resnet50 => &["avg_pool"],
            ModelName::Vgg16 | ModelName::Vgg19 => &["block4_pool", "block5_pool", "fc1", "fc2"],
            ModelName::Xception => &[
                "block13_pool",
                "block14_sepconv1_act",
                "block14_sepconv2_act",
                "avg_pool",
            ],
        }
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapInfo {
    pub name: String,
    pub dim: usize,
}

/// Metadata written next to each exported graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sidecar {
    pub model_name: ModelName,
    pub taps: Vec<TapInfo>,
    pub input_size: (u32, u32),
    pub preprocessing: Preprocessing,
    pub source_digest: String,
    /// Graph file, relative to the sidecar. Defaults to the sidecar's stem
    /// with an `.onnx` extension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<PathBuf>,
}

impl Sidecar {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Model(format!("{}: {e}", path.display())))
    }

    pub fn tap(&self, name: &str) -> Option<&TapInfo> {
        self.taps.iter().find(|t| t.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub model_name: ModelName,
    pub layer_name: String,
    pub input_size: (u32, u32),
    pub preprocessing: Preprocessing,
    pub graph_path: PathBuf,
    pub source_digest: String,
}

impl ModelSpec {
    /// Resolves a tap of an exported model from its sidecar.
    pub fn from_sidecar(sidecar_path: impl AsRef<Path>, layer: &str) -> Result<(ModelSpec, Sidecar)> {
        let sidecar_path = sidecar_path.as_ref();
        let sidecar = Sidecar::load(sidecar_path)?;
        if sidecar.tap(layer).is_none() {
            return Err(Error::TapNotFound {
                tap: layer.to_string(),
                available: sidecar.taps.iter().map(|t| t.name.clone()).collect(),
            });
        }
        let dir = sidecar_path.parent().unwrap_or(Path::new("."));
        let graph_path = match &sidecar.graph {
            Some(g) => dir.join(g),
            None => sidecar_path.with_extension("onnx"),
        };
        let spec = ModelSpec {
            model_name: sidecar.model_name,
            layer_name: layer.to_string(),
            input_size: sidecar.input_size,
            preprocessing: sidecar.preprocessing,
            graph_path,
            source_digest: sidecar.source_digest.clone(),
        };
        spec.validate()?;
        Ok((spec, sidecar))
    }

    /// Checks input size and normalization against the model's convention.
    pub fn validate(&self) -> Result<()> {
        let (size, prep) = self.model_name.input_convention();
        if self.input_size != size || self.preprocessing != prep {
            return Err(Error::Model(format!(
                "{} expects {}x{} input with {}, sidecar says {}x{} with {}",
                self.model_name,
                size.0,
                size.1,
                prep.as_str(),
                self.input_size.0,
                self.input_size.1,
                self.preprocessing.as_str()
            )));
        }
        Ok(())
    }

    /// Stable digest of everything that determines the extracted features.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for part in [
            self.model_name.as_str(),
            &self.layer_name,
            &self.input_size.0.to_string(),
            &self.input_size.1.to_string(),
            self.preprocessing.as_str(),
            &self.source_digest,
        ] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        hex::encode(h.finalize())
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            model: self.model_name.to_string(),
            layer: self.layer_name.clone(),
            digest: self.digest(),
        }
    }
}

type Plan = Arc<TypedRunnableModel>;

/// A loaded graph restricted to one tap. Not shared across threads; build
/// one per worker.
pub struct Extractor {
    spec: ModelSpec,
    model: InferenceModel,
    plans: HashMap<usize, Plan>,
}

/// Result of a batch extraction. Undecodable images are skipped, not fatal.
#[derive(Debug)]
pub struct Extraction {
    pub features: FeatureMatrix,
    pub skipped: Vec<(String, String)>,
}

fn model_err(e: impl fmt::Display) -> Error {
    Error::Model(format!("{e:#}"))
}

/// Names of the graph outputs of an ONNX file.
pub fn graph_outputs(graph_path: &Path) -> Result<Vec<String>> {
    if !graph_path.exists() {
        return Err(Error::NotFound(graph_path.to_path_buf()));
    }
    let proto = tract_onnx::onnx()
        .proto_model_for_path(graph_path)
        .map_err(model_err)?;
    Ok(proto
        .graph
        .map(|g| g.output.into_iter().map(|o| o.name).collect())
        .unwrap_or_default())
}

impl Extractor {
    pub fn open(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let path = &spec.graph_path;
        if !path.exists() {
            return Err(Error::NotFound(path.clone()));
        }
        let onnx = tract_onnx::onnx();
        let proto = onnx.proto_model_for_path(path).map_err(model_err)?;
        let available: Vec<String> = proto
            .graph
            .as_ref()
            .map(|g| g.output.iter().map(|o| o.name.clone()).collect())
            .unwrap_or_default();
        if !available.contains(&spec.layer_name) {
            return Err(Error::TapNotFound {
                tap: spec.layer_name.clone(),
                available,
            });
        }
        let dir = path.parent().and_then(|p| p.to_str());
        let parsed = onnx.parse(&proto, dir).map_err(model_err)?;
        let model = parsed
            .model
            .with_outputs_by_name([spec.layer_name.as_str()])
            .map_err(model_err)?;
        Ok(Extractor {
            spec,
            model,
            plans: HashMap::new(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn plan(&mut self, batch: usize) -> Result<Plan> {
        if let Some(p) = self.plans.get(&batch) {
            return Ok(p.clone());
        }
        let (h, w) = self.spec.input_size;
        let plan = self
            .model
            .clone()
            .with_input_fact(0, f32::fact([batch, h as usize, w as usize, 3]).into())
            .and_then(|m| m.into_optimized())
            .and_then(|m| m.into_runnable())
            .map_err(model_err)?;
        self.plans.insert(batch, plan.clone());
        Ok(plan)
    }

    /// Runs already-preprocessed HWC inputs and returns one flattened
    /// activation row per input.
    pub fn run_tensors(&mut self, inputs: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let (h, w) = self.spec.input_size;
        let per = h as usize * w as usize * 3;
        if let Some(bad) = inputs.iter().find(|t| t.len() != per) {
            return Err(Error::Shape(format!(
                "input tensor has {} values, expected {per}",
                bad.len()
            )));
        }
        let plan = self.plan(inputs.len())?;
        let flat: Vec<f32> = inputs.concat();
        let tensor = Tensor::from_shape(&[inputs.len(), h as usize, w as usize, 3], &flat)
            .map_err(model_err)?;
        let outputs = plan.run(tvec!(tensor.into())).map_err(model_err)?;
        let view = outputs[0].to_plain_array_view::<f32>().map_err(model_err)?;
        let values: Vec<f32> = view.iter().copied().collect();
        if !values.len().is_multiple_of(inputs.len()) {
            return Err(Error::Model(format!(
                "tap output of {} values does not split into {} rows",
                values.len(),
                inputs.len()
            )));
        }
        let d = values.len() / inputs.len();
        Ok(values.chunks(d).map(<[f32]>::to_vec).collect())
    }

    /// Extracts the tap activation of every decodable record, in input order.
    pub fn extract(&mut self, records: &[ImageRecord], batch: usize) -> Result<Extraction> {
        if batch == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let size = self.spec.input_size;
        let mode = self.spec.preprocessing;
        let mut data = Vec::new();
        let mut ids = Vec::new();
        let mut skipped = Vec::new();
        let mut dim = None;

        for chunk in records.chunks(batch) {
            let decoded: Vec<_> = chunk
                .par_iter()
                .map(|r| load_rgb(&r.path).and_then(|img| preprocess(&img, size, mode)))
                .collect();
            let mut ok_ids = Vec::new();
            let mut tensors = Vec::new();
            for (rec, res) in chunk.iter().zip(decoded) {
                match res {
                    Ok(t) => {
                        ok_ids.push(rec.id.clone());
                        tensors.push(t);
                    }
                    Err(e) => {
                        log::warn!("skipping `{}`: {e}", rec.id);
                        skipped.push((rec.id.clone(), e.to_string()));
                    }
                }
            }
            let rows = self.run_tensors(&tensors).map_err(|e| Error::Inference {
                record: ok_ids.first().cloned().unwrap_or_default(),
                message: e.to_string(),
            })?;
            for (id, row) in ok_ids.into_iter().zip(rows) {
                if *dim.get_or_insert(row.len()) != row.len() {
                    return Err(Error::Inference {
                        record: id,
                        message: "activation size changed between rows".into(),
                    });
                }
                data.extend(row);
                ids.push(id);
            }
        }
        if !skipped.is_empty() {
            log::warn!("{} of {} images could not be decoded", skipped.len(), records.len());
        }
        let features = FeatureMatrix::new(data, dim.unwrap_or(0), ids, self.spec.provenance())?;
        Ok(Extraction { features, skipped })
    }
}

/// Opens the model graph and extracts features for `records`.
pub fn extract_features(records: &[ImageRecord], spec: &ModelSpec, batch: usize) -> Result<Extraction> {
    Extractor::open(spec.clone())?.extract(records, batch)
}
