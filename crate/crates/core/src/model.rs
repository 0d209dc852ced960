//! A network graph together with its weight tensors.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{encode_blob, manifest_json};
use crate::netgraph::{infer_shapes, NetworkGraph, Op, Shape};
use crate::tensor::{KernelTensor, Tensor};

/// Named weight tensors, iterated in name order.
pub type WeightStore = BTreeMap<String, Tensor>;

/// Where a pruned model came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub original_model_hash: String,
    pub plan_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    graph: NetworkGraph,
    weights: WeightStore,
    provenance: Option<Provenance>,
}

/// Expected dims for every weight role of a node, given its input shape.
pub(crate) fn expected_weight_dims(
    op: &Op,
    input: Shape,
    output: Shape,
) -> Vec<(&'static str, Vec<usize>)> {
    match op {
        Op::Conv2d(a) => {
            let mut v = vec![(
                "kernel",
                vec![
                    a.filters,
                    input.channels(),
                    a.kernel_size[0],
                    a.kernel_size[1],
                ],
            )];
            if a.use_bias {
                v.push(("bias", vec![a.filters]));
            }
            v
        }
        Op::Dense(a) => {
            let mut v = vec![("kernel", vec![a.units, input.numel()])];
            if a.use_bias {
                v.push(("bias", vec![a.units]));
            }
            v
        }
        Op::BatchNorm(_) => {
            let c = output.channels();
            ["gamma", "beta", "moving_mean", "moving_variance"]
                .into_iter()
                .map(|r| (r, vec![c]))
                .collect()
        }
        _ => Vec::new(),
    }
}

impl Model {
    /// Bind weights to a graph, checking every reference and its dims.
    pub fn new(graph: NetworkGraph, weights: WeightStore) -> Result<Self> {
        let shapes = infer_shapes(&graph, graph.input_shape())?;
        for (i, node) in graph.nodes().iter().enumerate() {
            let input = graph
                .input_indices(i)
                .first()
                .map_or(shapes.at(i), |&j| shapes.at(j));
            for (role, dims) in expected_weight_dims(&node.op, input, shapes.at(i)) {
                let name = &node.weights[role];
                let t = weights
                    .get(name)
                    .ok_or_else(|| Error::UnresolvedWeightRef {
                        node: node.id.clone(),
                        role: role.to_string(),
                        tensor: name.clone(),
                    })?;
                if t.dims() != dims.as_slice() {
                    return Err(Error::ShapeContradiction {
                        node: node.id.clone(),
                        detail: format!(
                            "weight `{name}` ({role}) has dims {:?}, expected {dims:?}",
                            t.dims()
                        ),
                    });
                }
            }
        }
        Ok(Self {
            graph,
            weights,
            provenance: None,
        })
    }

    /// Seeded random weights with He-uniform kernels and plausible
    /// batchnorm statistics.
    pub fn with_random_weights(graph: NetworkGraph, seed: u64) -> Result<Self> {
        let shapes = infer_shapes(&graph, graph.input_shape())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = WeightStore::new();
        for (i, node) in graph.nodes().iter().enumerate() {
            let input = graph
                .input_indices(i)
                .first()
                .map_or(shapes.at(i), |&j| shapes.at(j));
            for (role, dims) in expected_weight_dims(&node.op, input, shapes.at(i)) {
                let len: usize = dims.iter().product();
                let (lo, hi) = match role {
                    "kernel" => {
                        let fan_in: usize = dims[1..].iter().product();
                        let limit = (6.0 / fan_in as f32).sqrt();
                        (-limit, limit)
                    }
                    "bias" | "beta" | "moving_mean" => (-0.05, 0.05),
                    _ => (0.5, 1.5),
                };
                let data: Vec<f32> = (0..len).map(|_| rng.random_range(lo..hi)).collect();
                weights.insert(node.weights[role].clone(), Tensor::new(dims, data)?);
            }
        }
        Self::new(graph, weights)
    }

    pub fn graph(&self) -> &NetworkGraph {
        &self.graph
    }

    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn with_provenance(mut self, provenance: Option<Provenance>) -> Self {
        self.provenance = provenance;
        self
    }

    /// Weight tensor bound to `role` on node `node_id`.
    pub fn weight(&self, node_id: &str, role: &str) -> Result<&Tensor> {
        let node = self
            .graph
            .node(node_id)
            .ok_or_else(|| Error::InvalidArgument(format!("no node `{node_id}`")))?;
        let name = node
            .weights
            .get(role)
            .ok_or_else(|| Error::MissingWeights {
                node: node_id.to_string(),
                tensor: role.to_string(),
            })?;
        self.weights.get(name).ok_or_else(|| Error::MissingWeights {
            node: node_id.to_string(),
            tensor: name.clone(),
        })
    }

    pub fn kernel(&self, conv_id: &str) -> Result<KernelTensor> {
        match self.graph.node(conv_id).map(|n| &n.op) {
            Some(Op::Conv2d(_)) => KernelTensor::from_tensor(self.weight(conv_id, "kernel")?),
            Some(other) => Err(Error::InvalidArgument(format!(
                "`{conv_id}` is a {} node, not conv2d",
                other.kind()
            ))),
            None => Err(Error::InvalidArgument(format!("no node `{conv_id}`"))),
        }
    }

    /// Total scalar count over all stored tensors.
    pub fn stored_scalars(&self) -> u64 {
        self.weights.values().map(|t| t.len() as u64).sum()
    }

    /// SHA-256 over the canonical graph description and the encoded blob.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        let graph_doc = manifest_json(self, "", false);
        h.update(crate::io::canonical_json(&graph_doc).as_bytes());
        h.update(encode_blob(&self.weights));
        hex::encode(h.finalize())
    }
}
