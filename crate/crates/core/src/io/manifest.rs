//! Model container: a JSON manifest describing the graph plus a sibling
//! `PFPW` weight blob.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::blob::{decode_blob, encode_blob};
use super::json::canonical_json;
use crate::error::{Error, Result};
use crate::model::{Model, Provenance};
use crate::netgraph::{FlattenOrder, LayerNode, NetworkGraph, Op};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    op_kind: String,
    #[serde(default)]
    inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    attrs: Value,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    weight_refs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format_version: u32,
    pub input_shape: [usize; 3],
    pub flatten_order: Option<FlattenOrder>,
    nodes: Vec<NodeDoc>,
    pub weight_blob: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl ModelManifest {
    pub fn from_graph(graph: &NetworkGraph, weight_blob: &str) -> Self {
        let nodes = graph
            .nodes()
            .iter()
            .map(|n| NodeDoc {
                id: n.id.clone(),
                op_kind: n.op.kind().to_string(),
                inputs: n.inputs.clone(),
                attrs: n.op.attrs_json(),
                weight_refs: n.weights.clone(),
            })
            .collect();
        Self {
            format_version: FORMAT_VERSION,
            input_shape: graph.input_shape(),
            flatten_order: graph.flatten_order(),
            nodes,
            weight_blob: weight_blob.to_string(),
            provenance: None,
        }
    }

    pub fn to_graph(&self) -> Result<NetworkGraph> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::InvalidGraph(format!(
                "unsupported manifest format_version {}",
                self.format_version
            )));
        }
        let nodes = self
            .nodes
            .iter()
            .map(|d| {
                let op = Op::from_parts(&d.op_kind, d.attrs.clone())?;
                let inputs: Vec<&str> = d.inputs.iter().map(String::as_str).collect();
                let mut node = LayerNode::new(d.id.clone(), op, &inputs);
                node.weights = d.weight_refs.clone();
                Ok(node)
            })
            .collect::<Result<Vec<_>>>()?;
        NetworkGraph::new(self.input_shape, self.flatten_order, nodes)
    }
}

/// Manifest of `model` as a JSON value.
pub fn manifest_json(model: &Model, weight_blob: &str, include_provenance: bool) -> Value {
    let mut m = ModelManifest::from_graph(model.graph(), weight_blob);
    if include_provenance {
        m.provenance = model.provenance().cloned();
    }
    serde_json::to_value(m).expect("manifest always serializes")
}

/// SHA-256 of the canonical graph description alone.
pub fn graph_hash(graph: &NetworkGraph) -> String {
    let doc = serde_json::to_value(ModelManifest::from_graph(graph, "")).expect("serializes");
    hex::encode(Sha256::digest(canonical_json(&doc).as_bytes()))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Write via a temporary file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    // temp files start owner-only
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(tmp.path(), fs::Permissions::from_mode(0o644))
            .map_err(|e| Error::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<ModelManifest> {
    Ok(serde_json::from_slice(&read(path)?)?)
}

/// Graph only; the weight blob is not opened.
pub fn load_graph(path: &Path) -> Result<NetworkGraph> {
    read_manifest(path)?.to_graph()
}

fn blob_path(manifest_path: &Path, blob: &str) -> PathBuf {
    manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(blob)
}

pub fn load_model(path: &Path) -> Result<Model> {
    let manifest = read_manifest(path)?;
    let graph = manifest.to_graph()?;
    let weights = decode_blob(&read(&blob_path(path, &manifest.weight_blob))?)?;
    Ok(Model::new(graph, weights)?.with_provenance(manifest.provenance))
}

/// Write `<stem>.json` (the given path) and `<stem>.pfpw` next to it.
/// Returns the blob path.
pub fn save_model(model: &Model, manifest_path: &Path) -> Result<PathBuf> {
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| {
            Error::InvalidArgument(format!("bad manifest path {}", manifest_path.display()))
        })?;
    let blob_name = format!("{stem}.pfpw");
    let blob = blob_path(manifest_path, &blob_name);
    write_atomic(&blob, &encode_blob(model.weights()))?;
    let doc = manifest_json(model, &blob_name, true);
    write_atomic(manifest_path, canonical_json(&doc).as_bytes())?;
    Ok(blob)
}

/// Graph-only manifest; `weight_blob` names a file that may not exist.
pub fn save_graph(graph: &NetworkGraph, manifest_path: &Path, weight_blob: &str) -> Result<()> {
    let doc = serde_json::to_value(ModelManifest::from_graph(graph, weight_blob))?;
    write_atomic(manifest_path, canonical_json(&doc).as_bytes())
}

/// Input samples from a blob: rank-3 tensors are single samples, rank-4
/// tensors are batches along axis 0. Tensors are taken in name order.
pub fn load_inputs(path: &Path) -> Result<Vec<Tensor>> {
    let store = decode_blob(&read(path)?)?;
    let mut out = Vec::new();
    for (name, t) in store {
        match *t.dims() {
            [_, _, _] => out.push(t),
            [n, c, h, w] => {
                let per = c * h * w;
                for k in 0..n {
                    out.push(Tensor::new(
                        vec![c, h, w],
                        t.data()[k * per..(k + 1) * per].to_vec(),
                    )?);
                }
            }
            _ => {
                return Err(Error::InvalidTensor(format!(
                    "input tensor `{name}` must be (C,H,W) or (N,C,H,W), got {:?}",
                    t.dims()
                )))
            }
        }
    }
    Ok(out)
}

/// Store samples as one `(N, C, H, W)` tensor named `inputs`.
pub fn save_inputs(samples: &[Tensor], path: &Path) -> Result<()> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("no samples to save".into()))?;
    let mut dims = vec![samples.len()];
    dims.extend_from_slice(first.dims());
    let data: Vec<f32> = samples
        .iter()
        .flat_map(|s| s.data().iter().copied())
        .collect();
    let mut store = crate::model::WeightStore::new();
    store.insert("inputs".into(), Tensor::new(dims, data)?);
    write_atomic(path, &encode_blob(&store))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.json");
        let model = fixtures::toy_model(4);
        let blob = save_model(&model, &path).unwrap();
        assert_eq!(blob.file_name().unwrap(), "toy.pfpw");
        let back = load_model(&path).unwrap();
        assert_eq!(back, model);
        let bytes = fs::read(&blob).unwrap();
        save_model(&back, &dir.path().join("again.json")).unwrap();
        assert_eq!(fs::read(dir.path().join("again.pfpw")).unwrap(), bytes);
    }

    #[test]
    fn missing_tensor_is_unresolved_reference() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let model = fixtures::toy_model(4);
        save_model(&model, &path).unwrap();
        let mut w = model.weights().clone();
        w.remove("c2.kernel");
        fs::write(dir.path().join("m.pfpw"), encode_blob(&w)).unwrap();
        let err = load_model(&path).unwrap_err();
        assert_eq!(err.code(), "unresolved_weight_reference");
    }

    #[test]
    fn wrong_magic_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        save_model(&fixtures::toy_model(4), &path).unwrap();
        let blob = dir.path().join("m.pfpw");
        let mut bytes = fs::read(&blob).unwrap();
        bytes[..4].copy_from_slice(b"NOPE");
        fs::write(&blob, bytes).unwrap();
        assert_eq!(load_model(&path).unwrap_err().code(), "bad_magic");
    }

    #[test]
    fn unknown_op_kind_is_rejected() {
        let mut doc =
            serde_json::to_value(ModelManifest::from_graph(&fixtures::toy_chain(), "x")).unwrap();
        doc["nodes"][1]["op_kind"] = "lstm".into();
        let m: ModelManifest = serde_json::from_value(doc).unwrap();
        assert_eq!(m.to_graph().unwrap_err().code(), "unknown_op");
    }

    #[test]
    fn inputs_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pfpw");
        let xs = fixtures::random_inputs([1, 3, 4], 5, 2);
        save_inputs(&xs, &path).unwrap();
        assert_eq!(load_inputs(&path).unwrap(), xs);
    }
}
