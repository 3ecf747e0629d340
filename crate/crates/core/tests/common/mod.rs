//! Fixtures shared by the integration tests: a tiny ONNX graph with named
//! taps, small image datasets, and synthetic feature caches.

#![allow(dead_code, clippy::needless_range_loop)]

use std::fs;
use std::path::{Path, PathBuf};

use deepcluster::{FeatureMatrix, Provenance};
use image::{Rgb, RgbImage};
use prost::Message;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use tract_onnx::pb;

const FLOAT: i32 = 1;

fn tensor_type(dims: &[Option<i64>]) -> Option<pb::TypeProto> {
    use pb::tensor_shape_proto::{dimension, Dimension};
    let dim = dims
        .iter()
        .map(|d| Dimension {
            value: Some(match d {
                Some(v) => dimension::Value::DimValue(*v),
                None => dimension::Value::DimParam("N".into()),
            }),
            ..Default::default()
        })
        .collect();
    Some(pb::TypeProto {
        value: Some(pb::type_proto::Value::TensorType(pb::type_proto::Tensor {
            elem_type: FLOAT,
            shape: Some(pb::TensorShapeProto { dim }),
        })),
        ..Default::default()
    })
}

fn value(name: &str, dims: &[Option<i64>]) -> pb::ValueInfoProto {
    pb::ValueInfoProto {
        name: name.into(),
        r#type: tensor_type(dims),
        ..Default::default()
    }
}

fn node(op: &str, inputs: &[&str], output: &str, attribute: Vec<pb::AttributeProto>) -> pb::NodeProto {
    pb::NodeProto {
        op_type: op.into(),
        name: output.into(),
        input: inputs.iter().map(|s| s.to_string()).collect(),
        output: vec![output.into()],
        attribute,
        ..Default::default()
    }
}

fn initializer(name: &str, dims: &[i64], data: Vec<f32>) -> pb::TensorProto {
    pb::TensorProto {
        name: name.into(),
        dims: dims.to_vec(),
        data_type: FLOAT,
        float_data: data,
        ..Default::default()
    }
}

/// Projection used by the `fc1` tap: `fc1 = avg_pool * W + b`.
pub const FC_WEIGHTS: [[f32; 4]; 3] = [
    [1.0, 0.0, -1.0, 0.5],
    [0.0, 1.0, 1.0, -0.5],
    [0.5, -1.0, 0.0, 1.0],
];
pub const FC_BIAS: [f32; 4] = [0.1, -0.2, 0.0, 3.0];

/// Writes `fixture.onnx` and its sidecar `fixture.json` into `dir`.
///
/// The graph takes `N x 224 x 224 x 3` and exposes three taps:
/// `avg_pool` (per-channel spatial mean), `fc1` (affine map of `avg_pool`)
/// and `fc2` (`relu(fc1)`). It poses as vgg16 so the input convention is
/// 224 x 224 with BGR mean subtraction.
pub fn write_fixture_model(dir: &Path) -> PathBuf {
    let axes = pb::AttributeProto {
        name: "axes".into(),
        r#type: pb::attribute_proto::AttributeType::Ints as i32,
        ints: vec![1, 2],
        ..Default::default()
    };
    let keepdims = pb::AttributeProto {
        name: "keepdims".into(),
        r#type: pb::attribute_proto::AttributeType::Int as i32,
        i: 0,
        ..Default::default()
    };
    let graph = pb::GraphProto {
        name: "fixture".into(),
        node: vec![
            node("ReduceMean", &["input"], "avg_pool", vec![axes, keepdims]),
            node("MatMul", &["avg_pool", "fc_w"], "fc_mm", vec![]),
            node("Add", &["fc_mm", "fc_b"], "fc1", vec![]),
            node("Relu", &["fc1"], "fc2", vec![]),
        ],
        initializer: vec![
            initializer("fc_w", &[3, 4], FC_WEIGHTS.iter().flatten().copied().collect()),
            initializer("fc_b", &[4], FC_BIAS.to_vec()),
        ],
        input: vec![value("input", &[None, Some(224), Some(224), Some(3)])],
        output: vec![
            value("avg_pool", &[None, Some(3)]),
            value("fc1", &[None, Some(4)]),
            value("fc2", &[None, Some(4)]),
        ],
        ..Default::default()
    };
    let model = pb::ModelProto {
        ir_version: 7,
        producer_name: "fixture".into(),
        opset_import: vec![pb::OperatorSetIdProto {
            domain: String::new(),
            version: 13,
        }],
        graph: Some(graph),
        ..Default::default()
    };
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("fixture.onnx"), model.encode_to_vec()).unwrap();
    let sidecar = json!({
        "model_name": "vgg16",
        "taps": [
            {"name": "avg_pool", "dim": 3},
            {"name": "fc1", "dim": 4},
            {"name": "fc2", "dim": 4},
        ],
        "input_size": [224, 224],
        "preprocessing": "mean_subtract_bgr",
        "source_digest": "fixture-v1",
    });
    let path = dir.join("fixture.json");
    fs::write(&path, serde_json::to_string_pretty(&sidecar).unwrap()).unwrap();
    path
}

/// Solid-colour image with small per-pixel noise.
pub fn noisy_image(colour: [u8; 3], size: u32, rng: &mut ChaCha8Rng) -> RgbImage {
    RgbImage::from_fn(size, size, |_, _| {
        Rgb(colour.map(|c| (c as i32 + rng.random_range(-6..=6)).clamp(0, 255) as u8))
    })
}

/// Writes `class/<i>.png` images: each class is a distinct colour.
pub fn write_colour_dataset(root: &Path, classes: &[(&str, [u8; 3])], per_class: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (name, colour) in classes {
        let dir = root.join(name);
        fs::create_dir_all(&dir).unwrap();
        for i in 0..per_class {
            noisy_image(*colour, 16, &mut rng)
                .save(dir.join(format!("{i:03}.png")))
                .unwrap();
        }
    }
}

pub const COLOURS: [(&str, [u8; 3]); 4] = [
    ("blue", [20, 30, 220]),
    ("green", [30, 200, 40]),
    ("red", [220, 20, 30]),
    ("yellow", [230, 220, 20]),
];

/// Manifest record as written to `manifest.json`.
pub fn record(id: &str, label: usize, condition: Option<u32>, instance: Option<&str>) -> serde_json::Value {
    let mut r = json!({"id": id, "path": format!("{id}.png"), "labels": [label]});
    if let Some(c) = condition {
        r["condition"] = json!(c);
    }
    if let Some(i) = instance {
        r["instance"] = json!(i);
    }
    r
}

/// Writes a manifest of `n_classes` classes with `per_class` records each
/// and returns its path and the record ids. Image files are not created.
pub fn write_class_manifest(root: &Path, name: &str, n_classes: usize, per_class: usize) -> (PathBuf, Vec<String>) {
    fs::create_dir_all(root).unwrap();
    let classes: Vec<String> = (0..n_classes).map(|c| format!("class{c:02}")).collect();
    let mut records = Vec::new();
    let mut ids = Vec::new();
    for c in 0..n_classes {
        for i in 0..per_class {
            let id = format!("{}/{i:03}", classes[c]);
            records.push(record(&id, c, None, None));
            ids.push(id);
        }
    }
    let manifest = json!({"name": name, "classes": classes, "records": records});
    let path = root.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    (path, ids)
}

/// Blob features for `ids`, whose class is the prefix before `/`. Class `c`
/// sits around `spacing * (1 + c / dim)` on axis `c % dim`.
pub fn blob_features(ids: &[String], dim: usize, spacing: f32, spread: f32, seed: u64, label: &str) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: Vec<&str> = ids.iter().map(|id| id.split('/').next().unwrap()).collect();
    classes.dedup();
    let mut data = Vec::with_capacity(ids.len() * dim);
    for id in ids {
        let class = id.split('/').next().unwrap();
        let c = classes.iter().position(|&x| x == class).unwrap();
        for j in 0..dim {
            let centre = if j == c % dim { spacing * (1 + c / dim) as f32 } else { 0.0 };
            data.push(centre + rng.random_range(-spread..=spread));
        }
    }
    FeatureMatrix::new(data, dim, ids.to_vec(), Provenance::synthetic(label)).unwrap()
}

/// Writes a manifest of physical objects photographed under conditions.
/// `instances[c]` objects of class `c`, each with `per_condition` pictures
/// under every condition. Ids are `classNN/objNN/<condition>/<p>`.
pub fn write_object_manifest(
    root: &Path,
    name: &str,
    instances: &[usize],
    conditions: &[&str],
    per_condition: usize,
) -> (PathBuf, Vec<String>) {
    fs::create_dir_all(root).unwrap();
    let classes: Vec<String> = (0..instances.len()).map(|c| format!("class{c:02}")).collect();
    let mut records = Vec::new();
    let mut ids = Vec::new();
    for (c, &count) in instances.iter().enumerate() {
        for i in 0..count {
            for (t, cond) in conditions.iter().enumerate() {
                for p in 0..per_condition {
                    let id = format!("{}/obj{i:02}/{cond}/{p}", classes[c]);
                    let inst = format!("obj{i:02}");
                    records.push(record(&id, c, Some(t as u32 + 1), Some(&inst)));
                    ids.push(id);
                }
            }
        }
    }
    let manifest = json!({"name": name, "classes": classes, "conditions": conditions, "records": records});
    let path = root.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest).unwrap()).unwrap();
    (path, ids)
}

/// Features for [`write_object_manifest`] ids: classes 60 apart, objects
/// of a class 8 apart on a shared last axis, pictures within 0.5 of their
/// object.
pub fn object_features(ids: &[String], n_classes: usize, seed: u64) -> FeatureMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = n_classes + 1;
    let mut data = Vec::with_capacity(ids.len() * dim);
    for id in ids {
        let mut parts = id.split('/');
        let c: usize = parts.next().unwrap()["class".len()..].parse().unwrap();
        let i: usize = parts.next().unwrap()["obj".len()..].parse().unwrap();
        for j in 0..dim {
            let centre = if j == c {
                60.0
            } else if j == dim - 1 {
                8.0 * i as f32
            } else {
                0.0
            };
            data.push(centre + rng.random_range(-0.5..=0.5f32));
        }
    }
    FeatureMatrix::new(data, dim, ids.to_vec(), Provenance::synthetic("objects")).unwrap()
}

/// Saves `features` as the cache of every listed tap.
pub fn write_caches(dir: &Path, dataset: &str, taps: &[(deepcluster::extract::ModelName, &str)], features: &FeatureMatrix) {
    for &(model, layer) in taps {
        features
            .save(deepcluster::bench::cache_path(dir, dataset, model, layer))
            .unwrap();
    }
}

/// Every tap of the layer-choice grid.
pub fn grid_taps() -> Vec<(deepcluster::extract::ModelName, &'static str)> {
    deepcluster::extract::ModelName::ALL
        .into_iter()
        .flat_map(|m| m.grid_taps().iter().map(move |&l| (m, l)))
        .collect()
}
