use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{infer_shapes, FlattenOrder, NetworkGraph, Op, Shape};
use crate::error::{Error, Result};

/// How removing output channels of a group propagates into a downstream node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum ConsumerRole {
    /// A conv kernel loses input channels (axis 1).
    InputChannels,
    /// All four batchnorm vectors lose entries.
    BatchNorm,
    /// A dense kernel loses the columns of every flattened position of each
    /// removed channel.
    FlattenedColumns {
        height: usize,
        width: usize,
        channels: usize,
        order: Option<FlattenOrder>,
    },
    /// A dense kernel fed by global average pooling loses one column per
    /// removed channel.
    PooledColumns { channels: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Consumer {
    pub node: String,
    #[serde(flatten)]
    pub role: ConsumerRole,
}

/// Conv layers whose output channels must share one keep mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneGroup {
    pub members: Vec<String>,
    /// Output channel count shared by all members.
    pub channels: usize,
    pub consumers: Vec<Consumer>,
    /// Channels are tied to the network input through an add; masks must keep
    /// every channel.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub locked: bool,
}

/// Column indices of a dense kernel that belong to `removed` channels.
pub fn flattened_columns(
    height: usize,
    width: usize,
    channels: usize,
    order: FlattenOrder,
    removed: &[usize],
) -> Vec<usize> {
    let positions = height * width;
    let mut cols: Vec<usize> = match order {
        FlattenOrder::ChannelLast => (0..positions)
            .flat_map(|p| removed.iter().map(move |&c| p * channels + c))
            .collect(),
        FlattenOrder::ChannelFirst => removed
            .iter()
            .flat_map(|&c| (0..positions).map(move |p| c * positions + p))
            .collect(),
    };
    cols.sort_unstable();
    cols
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // smaller id wins so roots stay stable in topological order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi] = lo;
        }
    }
}

/// Channel provenance of an activation tensor.
#[derive(Debug, Clone, Copy)]
enum Origin {
    /// Channel axis indexed by a channel space (union-find element).
    Channels(usize),
    /// Flat features derived from a channel space.
    Flattened(usize, FlatKind),
    /// Not tied to any prunable channel space (dense outputs).
    Opaque,
}

#[derive(Debug, Clone, Copy)]
enum FlatKind {
    Flatten {
        height: usize,
        width: usize,
        channels: usize,
    },
    Pooled {
        channels: usize,
    },
}

/// Partition the conv layers into prune groups.
///
/// Channel identity propagates through batchnorm, activation and pooling;
/// an add merges the channel spaces of its two inputs. Flatten and global
/// average pooling end propagation at the next dense layer.
pub fn discover_groups(graph: &NetworkGraph) -> Result<Vec<PruneGroup>> {
    const INPUT_SPACE: usize = 0;
    let shapes = infer_shapes(graph, graph.input_shape())?;
    let nodes = graph.nodes();

    // element 0 is the network input; convs get 1.. in topological order
    let mut space_of_conv: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, n) in nodes.iter().enumerate() {
        if matches!(n.op, Op::Conv2d(_)) {
            let next = space_of_conv.len() + 1;
            space_of_conv.insert(i, next);
        }
    }
    let mut uf = UnionFind((0..=space_of_conv.len()).collect());
    let mut origin: Vec<Origin> = Vec::with_capacity(nodes.len());
    let mut records: Vec<(usize, usize, ConsumerRole)> = Vec::new();

    let unsupported = |node: &str, detail: String| Error::UnsupportedTopology {
        node: node.to_string(),
        detail,
    };

    for (i, node) in nodes.iter().enumerate() {
        let ins: Vec<Origin> = graph.input_indices(i).iter().map(|&j| origin[j]).collect();
        let o = match &node.op {
            Op::Input => Origin::Channels(INPUT_SPACE),
            Op::Conv2d(_) => {
                if let Origin::Channels(s) = ins[0] {
                    records.push((s, i, ConsumerRole::InputChannels));
                }
                Origin::Channels(space_of_conv[&i])
            }
            Op::BatchNorm(_) => match ins[0] {
                Origin::Channels(s) => {
                    records.push((s, i, ConsumerRole::BatchNorm));
                    ins[0]
                }
                Origin::Flattened(..) => {
                    return Err(unsupported(
                        &node.id,
                        "batchnorm over features flattened from conv channels".into(),
                    ))
                }
                Origin::Opaque => Origin::Opaque,
            },
            Op::Activation(_) | Op::MaxPool(_) | Op::AvgPool(_) => ins[0],
            Op::Add => match (ins[0], ins[1]) {
                (Origin::Channels(a), Origin::Channels(b)) => {
                    uf.union(a, b);
                    Origin::Channels(a)
                }
                (Origin::Opaque, Origin::Opaque) => Origin::Opaque,
                _ => {
                    return Err(unsupported(
                        &node.id,
                        "add mixes conv-derived features with an incompatible index space".into(),
                    ))
                }
            },
            Op::Flatten => match (ins[0], shapes.at(graph.input_indices(i)[0])) {
                (Origin::Channels(s), Shape::Spatial([c, h, w])) => Origin::Flattened(
                    s,
                    FlatKind::Flatten {
                        height: h,
                        width: w,
                        channels: c,
                    },
                ),
                _ => Origin::Opaque,
            },
            Op::GlobalAvgPool => match ins[0] {
                Origin::Channels(s) => Origin::Flattened(
                    s,
                    FlatKind::Pooled {
                        channels: shapes.at(graph.input_indices(i)[0]).channels(),
                    },
                ),
                _ => Origin::Opaque,
            },
            Op::Dense(_) => {
                if let Origin::Flattened(s, kind) = ins[0] {
                    let role = match kind {
                        FlatKind::Flatten {
                            height,
                            width,
                            channels,
                        } => ConsumerRole::FlattenedColumns {
                            height,
                            width,
                            channels,
                            order: graph.flatten_order(),
                        },
                        FlatKind::Pooled { channels } => ConsumerRole::PooledColumns { channels },
                    };
                    records.push((s, i, role));
                }
                Origin::Opaque
            }
            Op::Softmax => match ins[0] {
                Origin::Opaque => Origin::Opaque,
                _ => {
                    return Err(unsupported(
                        &node.id,
                        "softmax directly over conv-derived channels".into(),
                    ))
                }
            },
        };
        origin.push(o);
    }

    let input_root = uf.find(INPUT_SPACE);
    let mut groups: BTreeMap<usize, PruneGroup> = BTreeMap::new();
    for (&pos, &space) in &space_of_conv {
        let root = uf.find(space);
        let channels = shapes.at(pos).channels();
        let g = groups.entry(root).or_insert_with(|| PruneGroup {
            members: Vec::new(),
            channels,
            consumers: Vec::new(),
            locked: root == input_root,
        });
        g.members.push(nodes[pos].id.clone());
    }
    records.sort_by_key(|(_, node, _)| *node);
    for (space, node, role) in records {
        let root = uf.find(space);
        if let Some(g) = groups.get_mut(&root) {
            let c = Consumer {
                node: nodes[node].id.clone(),
                role,
            };
            if !g.consumers.contains(&c) {
                g.consumers.push(c);
            }
        }
    }
    Ok(groups.into_values().collect())
}
