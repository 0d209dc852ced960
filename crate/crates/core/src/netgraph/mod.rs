//! Network graph: typed layer nodes, shape inference and prune-group
//! discovery.

mod groups;
mod shapes;

pub use groups::{discover_groups, flattened_columns, Consumer, ConsumerRole, PruneGroup};
pub use shapes::{infer_shapes, same_padding, spatial_output, Shape, ShapeMap};

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
    #[default]
    Valid,
}

/// Index order used when a `(C, H, W)` tensor is flattened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlattenOrder {
    /// Position-major, channel fastest: `(y * W + x) * C + c`.
    #[serde(rename = "hwc")]
    ChannelLast,
    /// Channel-major: `c * H * W + y * W + x`.
    #[serde(rename = "chw")]
    ChannelFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationKind {
    Relu,
    Linear,
    Sigmoid,
    Tanh,
}

fn one_one() -> [usize; 2] {
    [1, 1]
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvAttrs {
    pub filters: usize,
    pub kernel_size: [usize; 2],
    #[serde(default = "one_one")]
    pub strides: [usize; 2],
    #[serde(default)]
    pub padding: Padding,
    #[serde(default = "yes")]
    pub use_bias: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseAttrs {
    pub units: usize,
    #[serde(default = "yes")]
    pub use_bias: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolAttrs {
    pub pool_size: [usize; 2],
    /// Defaults to `pool_size`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strides: Option<[usize; 2]>,
    #[serde(default)]
    pub padding: Padding,
}

impl PoolAttrs {
    pub fn strides(&self) -> [usize; 2] {
        self.strides.unwrap_or(self.pool_size)
    }
}

fn default_bn_eps() -> f32 {
    1e-3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchNormAttrs {
    #[serde(default = "default_bn_eps")]
    pub epsilon: f32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationAttrs {
    pub function: ActivationKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    Conv2d(ConvAttrs),
    Dense(DenseAttrs),
    Add,
    MaxPool(PoolAttrs),
    AvgPool(PoolAttrs),
    GlobalAvgPool,
    Flatten,
    BatchNorm(BatchNormAttrs),
    Activation(ActivationAttrs),
    Softmax,
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Conv2d(_) => "conv2d",
            Op::Dense(_) => "dense",
            Op::Add => "add",
            Op::MaxPool(_) => "maxpool",
            Op::AvgPool(_) => "avgpool",
            Op::GlobalAvgPool => "globalavgpool",
            Op::Flatten => "flatten",
            Op::BatchNorm(_) => "batchnorm",
            Op::Activation(_) => "activation",
            Op::Softmax => "softmax",
        }
    }

    /// Build an op from its manifest kind string and attribute object.
    pub fn from_parts(kind: &str, attrs: serde_json::Value) -> Result<Op> {
        fn parse<T: serde::de::DeserializeOwned>(kind: &str, v: serde_json::Value) -> Result<T> {
            serde_json::from_value(v)
                .map_err(|e| Error::InvalidGraph(format!("bad attrs for {kind}: {e}")))
        }
        let empty = |v: &serde_json::Value| match v {
            serde_json::Value::Null => true,
            serde_json::Value::Object(m) => m.is_empty(),
            _ => false,
        };
        let no_attrs = |op: Op, v: serde_json::Value| {
            if empty(&v) {
                Ok(op)
            } else {
                Err(Error::InvalidGraph(format!(
                    "{kind} takes no attrs, got {v}"
                )))
            }
        };
        match kind {
            "input" => no_attrs(Op::Input, attrs),
            "conv2d" => Ok(Op::Conv2d(parse(kind, attrs)?)),
            "dense" => Ok(Op::Dense(parse(kind, attrs)?)),
            "add" => no_attrs(Op::Add, attrs),
            "maxpool" => Ok(Op::MaxPool(parse(kind, attrs)?)),
            "avgpool" => Ok(Op::AvgPool(parse(kind, attrs)?)),
            "globalavgpool" => no_attrs(Op::GlobalAvgPool, attrs),
            "flatten" => no_attrs(Op::Flatten, attrs),
            "batchnorm" => {
                let attrs = if attrs.is_null() {
                    serde_json::json!({})
                } else {
                    attrs
                };
                Ok(Op::BatchNorm(parse(kind, attrs)?))
            }
            "activation" => Ok(Op::Activation(parse(kind, attrs)?)),
            "softmax" => no_attrs(Op::Softmax, attrs),
            other => Err(Error::UnknownOp(other.to_string())),
        }
    }

    /// Attribute object as written to a manifest (`null` for attr-less ops).
    pub fn attrs_json(&self) -> serde_json::Value {
        let v = match self {
            Op::Conv2d(a) => serde_json::to_value(a),
            Op::Dense(a) => serde_json::to_value(a),
            Op::MaxPool(a) | Op::AvgPool(a) => serde_json::to_value(a),
            Op::BatchNorm(a) => serde_json::to_value(a),
            Op::Activation(a) => serde_json::to_value(a),
            _ => return serde_json::Value::Null,
        };
        v.expect("attribute structs always serialize")
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Op::Input => Some(0),
            Op::Add => Some(2),
            _ => Some(1),
        }
    }

    /// Weight roles this op must reference.
    pub fn weight_roles(&self) -> Vec<&'static str> {
        match self {
            Op::Conv2d(a) if a.use_bias => vec!["kernel", "bias"],
            Op::Conv2d(_) => vec!["kernel"],
            Op::Dense(a) if a.use_bias => vec!["kernel", "bias"],
            Op::Dense(_) => vec!["kernel"],
            Op::BatchNorm(_) => vec!["gamma", "beta", "moving_mean", "moving_variance"],
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub id: String,
    pub op: Op,
    pub inputs: Vec<String>,
    /// Role (e.g. `kernel`, `bias`, `gamma`) to tensor name in the weight store.
    pub weights: BTreeMap<String, String>,
}

impl LayerNode {
    pub fn new(id: impl Into<String>, op: Op, inputs: &[&str]) -> Self {
        let id = id.into();
        let weights = op
            .weight_roles()
            .into_iter()
            .map(|role| (role.to_string(), format!("{id}.{role}")))
            .collect();
        Self {
            id,
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            weights,
        }
    }
}

/// Immutable, validated DAG of layer nodes stored in topological order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    input_shape: [usize; 3],
    flatten_order: Option<FlattenOrder>,
    nodes: Vec<LayerNode>,
    index: HashMap<String, usize>,
    inputs: Vec<Vec<usize>>,
    consumers: Vec<Vec<usize>>,
}

impl NetworkGraph {
    pub fn new(
        input_shape: [usize; 3],
        flatten_order: Option<FlattenOrder>,
        nodes: Vec<LayerNode>,
    ) -> Result<Self> {
        if input_shape.contains(&0) {
            return Err(Error::InvalidGraph(format!(
                "input shape must be positive, got {input_shape:?}"
            )));
        }
        let mut position = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if position.insert(n.id.clone(), i).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate node id `{}`", n.id)));
            }
        }
        let input_nodes = nodes.iter().filter(|n| n.op == Op::Input).count();
        if input_nodes != 1 {
            return Err(Error::InvalidGraph(format!(
                "exactly one input node required, found {input_nodes}"
            )));
        }
        for n in &nodes {
            if let Some(a) = n.op.arity() {
                if n.inputs.len() != a {
                    return Err(Error::InvalidGraph(format!(
                        "node `{}` ({}) takes {a} input(s), got {}",
                        n.id,
                        n.op.kind(),
                        n.inputs.len()
                    )));
                }
            }
            for src in &n.inputs {
                if !position.contains_key(src) {
                    return Err(Error::InvalidGraph(format!(
                        "node `{}` references unknown input `{src}`",
                        n.id
                    )));
                }
            }
            for role in n.op.weight_roles() {
                if !n.weights.contains_key(role) {
                    return Err(Error::InvalidGraph(format!(
                        "node `{}` lacks weight reference `{role}`",
                        n.id
                    )));
                }
            }
        }

        // Kahn's algorithm
        let mut indegree: Vec<usize> = nodes.iter().map(|n| n.inputs.len()).collect();
        let mut out_edges = vec![Vec::new(); nodes.len()];
        for (i, n) in nodes.iter().enumerate() {
            for src in &n.inputs {
                out_edges[position[src]].push(i);
            }
        }
        // earliest-declared ready node first, so already-sorted input keeps its order
        let mut ready: BinaryHeap<Reverse<usize>> = (0..nodes.len())
            .filter(|&i| indegree[i] == 0)
            .map(Reverse)
            .collect();
        let mut order = Vec::with_capacity(nodes.len());
        while let Some(Reverse(i)) = ready.pop() {
            order.push(i);
            for &j in &out_edges[i] {
                indegree[j] -= 1;
                if indegree[j] == 0 {
                    ready.push(Reverse(j));
                }
            }
        }
        if order.len() != nodes.len() {
            return Err(Error::InvalidGraph("graph contains a cycle".into()));
        }

        let mut slots: Vec<Option<LayerNode>> = nodes.into_iter().map(Some).collect();
        let nodes: Vec<LayerNode> = order.iter().map(|&i| slots[i].take().unwrap()).collect();
        let index: HashMap<String, usize> = nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.id.clone(), i))
            .collect();
        let inputs: Vec<Vec<usize>> = nodes
            .iter()
            .map(|n| n.inputs.iter().map(|s| index[s]).collect())
            .collect();
        let mut consumers = vec![Vec::new(); nodes.len()];
        for (i, ins) in inputs.iter().enumerate() {
            for &s in ins {
                consumers[s].push(i);
            }
        }
        let graph = Self {
            input_shape,
            flatten_order,
            nodes,
            index,
            inputs,
            consumers,
        };
        infer_shapes(&graph, input_shape)?;
        Ok(graph)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn flatten_order(&self) -> Option<FlattenOrder> {
        self.flatten_order
    }

    /// Nodes in topological order.
    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn node(&self, id: &str) -> Option<&LayerNode> {
        self.index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn input_indices(&self, i: usize) -> &[usize] {
        &self.inputs[i]
    }

    pub fn consumer_indices(&self, i: usize) -> &[usize] {
        &self.consumers[i]
    }

    pub fn input_node(&self) -> &LayerNode {
        self.nodes
            .iter()
            .find(|n| n.op == Op::Input)
            .expect("validated graph has an input node")
    }

    pub fn conv_ids(&self) -> Vec<&str> {
        self.nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Conv2d(_)))
            .map(|n| n.id.as_str())
            .collect()
    }

    /// Copy of this graph with replaced nodes, re-validated.
    pub fn with_nodes(&self, nodes: Vec<LayerNode>) -> Result<NetworkGraph> {
        NetworkGraph::new(self.input_shape, self.flatten_order, nodes)
    }

    /// Copy of this graph declaring a different input shape, re-validated.
    pub fn with_input_shape(&self, input_shape: [usize; 3]) -> Result<NetworkGraph> {
        NetworkGraph::new(input_shape, self.flatten_order, self.nodes.clone())
    }

    /// Index of the last node of the post-conv chain starting at `start`:
    /// follows single-consumer batchnorm/activation nodes.
    pub fn post_activation_tap(&self, start: usize) -> usize {
        let mut cur = start;
        loop {
            match self.consumers[cur].as_slice() {
                [next] if matches!(self.nodes[*next].op, Op::BatchNorm(_) | Op::Activation(_)) => {
                    cur = *next
                }
                _ => return cur,
            }
        }
    }
}
