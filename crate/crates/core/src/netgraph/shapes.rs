use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{NetworkGraph, Op, Padding};
use crate::error::{Error, Result};

/// Activation shape of one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Shape {
    /// `(channels, height, width)`
    Spatial([usize; 3]),
    /// `(features,)`
    Flat([usize; 1]),
}

impl Shape {
    pub fn spatial(c: usize, h: usize, w: usize) -> Self {
        Shape::Spatial([c, h, w])
    }

    pub fn flat(n: usize) -> Self {
        Shape::Flat([n])
    }

    pub fn numel(&self) -> usize {
        match self {
            Shape::Spatial(d) => d.iter().product(),
            Shape::Flat([n]) => *n,
        }
    }

    /// Channel count for spatial tensors, feature count for flat ones.
    pub fn channels(&self) -> usize {
        match self {
            Shape::Spatial([c, _, _]) => *c,
            Shape::Flat([n]) => *n,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        match self {
            Shape::Spatial(d) => d.to_vec(),
            Shape::Flat(d) => d.to_vec(),
        }
    }
}

/// Inferred shape for every node, keyed by node id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeMap {
    ordered: Vec<Shape>,
    by_id: BTreeMap<String, Shape>,
}

impl ShapeMap {
    pub fn get(&self, id: &str) -> Option<Shape> {
        self.by_id.get(id).copied()
    }

    /// Shape of the node at topological position `i`.
    pub fn at(&self, i: usize) -> Shape {
        self.ordered[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Shape)> {
        self.by_id.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Output extent along one spatial axis.
pub fn spatial_output(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Option<usize> {
    if stride == 0 || kernel == 0 {
        return None;
    }
    match padding {
        Padding::Same => Some(input.div_ceil(stride)),
        Padding::Valid if input >= kernel => Some((input - kernel) / stride + 1),
        Padding::Valid => None,
    }
}

/// Leading zero padding for `same` along one axis. Odd totals put the extra
/// element after the data.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> usize {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    total / 2
}

fn window_output(
    node: &str,
    [c, h, w]: [usize; 3],
    out_c: usize,
    kernel: [usize; 2],
    strides: [usize; 2],
    padding: Padding,
) -> Result<Shape> {
    let oh = spatial_output(h, kernel[0], strides[0], padding);
    let ow = spatial_output(w, kernel[1], strides[1], padding);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(Shape::spatial(out_c, oh, ow)),
        _ => Err(Error::ShapeContradiction {
            node: node.to_string(),
            detail: format!(
                "window {kernel:?} stride {strides:?} ({padding:?}) does not fit input ({c},{h},{w})"
            ),
        }),
    }
}

/// Infer every node's activation shape for `input_shape = (C, H, W)`.
pub fn infer_shapes(graph: &NetworkGraph, input_shape: [usize; 3]) -> Result<ShapeMap> {
    if input_shape.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "input shape must be positive, got {input_shape:?}"
        )));
    }
    let nodes = graph.nodes();
    let mut ordered: Vec<Shape> = Vec::with_capacity(nodes.len());
    for (i, node) in nodes.iter().enumerate() {
        let ins: Vec<Shape> = graph.input_indices(i).iter().map(|&j| ordered[j]).collect();
        let contradiction = |detail: String| Error::ShapeContradiction {
            node: node.id.clone(),
            detail,
        };
        let spatial_in = || match ins[0] {
            Shape::Spatial(d) => Ok(d),
            other => Err(contradiction(format!(
                "{} needs a (C,H,W) input, got {:?}",
                node.op.kind(),
                other.dims()
            ))),
        };
        let shape = match &node.op {
            Op::Input => Shape::Spatial(input_shape),
            Op::Conv2d(a) => {
                if a.filters == 0 || a.strides.contains(&0) || a.kernel_size.contains(&0) {
                    return Err(contradiction("conv attrs must be positive".into()));
                }
                window_output(
                    &node.id,
                    spatial_in()?,
                    a.filters,
                    a.kernel_size,
                    a.strides,
                    a.padding,
                )?
            }
            Op::MaxPool(a) | Op::AvgPool(a) => {
                let d = spatial_in()?;
                window_output(&node.id, d, d[0], a.pool_size, a.strides(), a.padding)?
            }
            Op::GlobalAvgPool => Shape::flat(spatial_in()?[0]),
            Op::Flatten => Shape::flat(spatial_in()?.iter().product()),
            Op::Dense(a) => match ins[0] {
                Shape::Flat(_) if a.units > 0 => Shape::flat(a.units),
                Shape::Flat(_) => return Err(contradiction("dense units must be positive".into())),
                Shape::Spatial(d) => {
                    return Err(contradiction(format!(
                        "dense needs a flat input, got {d:?}; insert a flatten"
                    )))
                }
            },
            Op::Add => {
                if ins[0] != ins[1] {
                    return Err(contradiction(format!(
                        "add inputs disagree: {:?} vs {:?}",
                        ins[0].dims(),
                        ins[1].dims()
                    )));
                }
                ins[0]
            }
            Op::BatchNorm(_) | Op::Activation(_) | Op::Softmax => ins[0],
        };
        ordered.push(shape);
    }
    let by_id = nodes
        .iter()
        .zip(&ordered)
        .map(|(n, s)| (n.id.clone(), *s))
        .collect();
    Ok(ShapeMap { ordered, by_id })
}
