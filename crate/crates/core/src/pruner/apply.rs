use std::collections::BTreeSet;

use super::plan::{GroupPlan, PrunePlan};
use crate::error::{Error, Result};
use crate::model::{Model, Provenance, WeightStore};
use crate::netgraph::{
    discover_groups, flattened_columns, ConsumerRole, LayerNode, Op, PruneGroup,
};

fn check_partition(g: &GroupPlan) -> Result<()> {
    let sorted = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
    let all: BTreeSet<usize> = g.keep.iter().chain(&g.drop).copied().collect();
    let ok = sorted(&g.keep)
        && sorted(&g.drop)
        && !g.keep.is_empty()
        && all.len() == g.channels
        && g.keep.len() + g.drop.len() == g.channels
        && all.iter().next_back().is_none_or(|&m| m < g.channels);
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidPlan(format!(
            "keep/drop of group {:?} do not partition 0..{}",
            g.layers, g.channels
        )))
    }
}

fn matching_group<'g>(groups: &'g [PruneGroup], plan: &GroupPlan) -> Result<&'g PruneGroup> {
    let want: BTreeSet<&str> = plan.layers.iter().map(String::as_str).collect();
    let g = groups
        .iter()
        .find(|g| {
            g.members
                .iter()
                .map(String::as_str)
                .collect::<BTreeSet<_>>()
                == want
        })
        .ok_or_else(|| {
            Error::InvalidPlan(format!(
                "layers {:?} are not a prune group of this model",
                plan.layers
            ))
        })?;
    if g.channels != plan.channels {
        return Err(Error::InvalidPlan(format!(
            "group {:?} has {} channels, plan says {}",
            plan.layers, g.channels, plan.channels
        )));
    }
    if g.locked && !plan.drop.is_empty() {
        return Err(Error::InvalidPlan(format!(
            "group {:?} is tied to the network input and cannot be pruned",
            plan.layers
        )));
    }
    Ok(g)
}

fn slice(
    weights: &mut WeightStore,
    node: &LayerNode,
    role: &str,
    axis: usize,
    keep: &[usize],
) -> Result<()> {
    let name = node
        .weights
        .get(role)
        .ok_or_else(|| Error::MissingWeights {
            node: node.id.clone(),
            tensor: role.to_string(),
        })?;
    let t = weights.get(name).ok_or_else(|| Error::MissingWeights {
        node: node.id.clone(),
        tensor: name.clone(),
    })?;
    let sliced = t.select(axis, keep)?;
    weights.insert(name.clone(), sliced);
    Ok(())
}

/// Rewrite graph and weights so every planned group keeps only its `keep`
/// channels. The source model is left untouched.
pub fn apply_plan(model: &Model, plan: &PrunePlan) -> Result<Model> {
    let graph = model.graph();
    let groups = discover_groups(graph)?;
    let mut weights = model.weights().clone();
    let mut nodes: Vec<LayerNode> = graph.nodes().to_vec();
    let position = |id: &str| {
        graph
            .position(id)
            .ok_or_else(|| Error::InvalidPlan(format!("plan names unknown node `{id}`")))
    };

    for gp in &plan.groups {
        check_partition(gp)?;
        let g = matching_group(&groups, gp)?;
        if gp.drop.is_empty() {
            continue;
        }
        let keep = &gp.keep;
        for member in &g.members {
            let i = position(member)?;
            let node = &mut nodes[i];
            let Op::Conv2d(attrs) = &mut node.op else {
                unreachable!("group members are conv layers")
            };
            attrs.filters = keep.len();
            let use_bias = attrs.use_bias;
            let node = &nodes[i];
            slice(&mut weights, node, "kernel", 0, keep)?;
            if use_bias {
                slice(&mut weights, node, "bias", 0, keep)?;
            }
        }
        for c in &g.consumers {
            let node = &nodes[position(&c.node)?];
            match &c.role {
                ConsumerRole::InputChannels | ConsumerRole::PooledColumns { .. } => {
                    slice(&mut weights, node, "kernel", 1, keep)?
                }
                ConsumerRole::BatchNorm => {
                    for role in ["gamma", "beta", "moving_mean", "moving_variance"] {
                        slice(&mut weights, node, role, 0, keep)?;
                    }
                }
                ConsumerRole::FlattenedColumns {
                    height,
                    width,
                    channels,
                    order,
                } => {
                    let order = order.ok_or_else(|| Error::MissingFlattenOrder(c.node.clone()))?;
                    let removed = flattened_columns(*height, *width, *channels, order, &gp.drop);
                    let total = height * width * channels;
                    let kept: Vec<usize> = (0..total)
                        .filter(|k| removed.binary_search(k).is_err())
                        .collect();
                    slice(&mut weights, node, "kernel", 1, &kept)?;
                }
            }
        }
    }

    let pruned_graph = graph.with_nodes(nodes)?;
    let pruned = Model::new(pruned_graph, weights)?;
    Ok(pruned.with_provenance(Some(Provenance {
        original_model_hash: model.content_hash(),
        plan_hash: plan.hash(),
    })))
}
