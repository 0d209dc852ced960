use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::importance::{ImportanceReport, Method};
use crate::io::to_canonical;
use crate::netgraph::{flattened_columns, ConsumerRole, PruneGroup};

/// Keep/drop decision for one prune group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPlan {
    /// Conv layers sharing this mask.
    pub layers: Vec<String>,
    pub channels: usize,
    /// Ascending.
    pub keep: Vec<usize>,
    /// Ascending.
    pub drop: Vec<usize>,
    /// The floor rule asked for every channel; one was kept.
    #[serde(default)]
    pub min_keep_engaged: bool,
    /// Group tied to the network input; nothing can be dropped.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub locked: bool,
}

/// Indices removed along `axis` of a downstream node's weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Propagation {
    pub consumer: String,
    pub axis: usize,
    pub removed: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrunePlan {
    pub method: Method,
    pub ratio: f64,
    /// Content hash of the model the scores were computed on.
    pub model_hash: String,
    pub groups: Vec<GroupPlan>,
    pub propagation: Vec<Propagation>,
}

impl PrunePlan {
    /// A plan that removes nothing.
    pub fn empty(method: Method, model_hash: impl Into<String>) -> Self {
        Self {
            method,
            ratio: 0.0,
            model_hash: model_hash.into(),
            groups: Vec::new(),
            propagation: Vec::new(),
        }
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = to_canonical(self).expect("plans always serialize");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn group_of(&self, layer: &str) -> Option<&GroupPlan> {
        self.groups
            .iter()
            .find(|g| g.layers.iter().any(|l| l == layer))
    }

    /// Filters kept for `layer`, if the plan touches it.
    pub fn kept(&self, layer: &str) -> Option<usize> {
        self.group_of(layer).map(|g| g.keep.len())
    }
}

/// `floor(p * n)` filters to drop, capped so one survives. The second value
/// reports whether the cap was applied.
pub fn drop_count(n: usize, p: f64) -> (usize, bool) {
    // absorbs products like 0.29 * 100 = 28.999999999999996
    let raw = (p * n as f64 + 1e-9).floor() as usize;
    if raw >= n {
        (n.saturating_sub(1), true)
    } else {
        (raw, false)
    }
}

fn check_ratio(p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "pruning ratio must lie in (0, 1), got {p}"
        )))
    }
}

/// Build a plan at ratio `p` over the groups containing the selected layers
/// (every reported layer when `selection` is `None`).
///
/// A group's score vector is the sum of its members' normalized scores; the
/// lowest-scoring channels are dropped, ties by ascending index. Selecting
/// any member selects its whole group.
pub fn make_plan(
    reports: &[ImportanceReport],
    groups: &[PruneGroup],
    p: f64,
    selection: Option<&[String]>,
    model_hash: &str,
) -> Result<PrunePlan> {
    check_ratio(p)?;
    let method = reports
        .first()
        .ok_or_else(|| Error::InvalidPlan("no importance reports".into()))?
        .method;
    if let Some(r) = reports.iter().find(|r| r.method != method) {
        return Err(Error::InvalidPlan(format!(
            "mixed methods: {} and {} (layer `{}`)",
            method, r.method, r.layer_id
        )));
    }
    let by_layer: BTreeMap<&str, &ImportanceReport> =
        reports.iter().map(|r| (r.layer_id.as_str(), r)).collect();
    let group_index: BTreeMap<&str, usize> = groups
        .iter()
        .enumerate()
        .flat_map(|(gi, g)| g.members.iter().map(move |m| (m.as_str(), gi)))
        .collect();

    let wanted: Vec<&str> = match selection {
        Some(ids) => ids.iter().map(String::as_str).collect(),
        None => reports.iter().map(|r| r.layer_id.as_str()).collect(),
    };
    let mut chosen = BTreeSet::new();
    for id in &wanted {
        let gi = *group_index.get(id).ok_or_else(|| {
            Error::InvalidPlan(format!("layer `{id}` is not a conv layer of the model"))
        })?;
        if !by_layer.contains_key(id) {
            return Err(Error::InvalidPlan(format!(
                "selected layer `{id}` has no importance report"
            )));
        }
        chosen.insert(gi);
    }

    let mut plan = PrunePlan {
        method,
        ratio: p,
        model_hash: model_hash.to_string(),
        groups: Vec::new(),
        propagation: Vec::new(),
    };
    for gi in chosen {
        let g = &groups[gi];
        let mut total = vec![0.0f64; g.channels];
        for m in &g.members {
            let r = by_layer.get(m.as_str()).ok_or_else(|| {
                Error::InvalidPlan(format!(
                    "layer `{m}` shares a mask with a selected layer but has no importance report"
                ))
            })?;
            if r.normalized.len() != g.channels {
                return Err(Error::InvalidPlan(format!(
                    "report for `{m}` has {} scores, layer has {} filters",
                    r.normalized.len(),
                    g.channels
                )));
            }
            for (acc, s) in total.iter_mut().zip(&r.normalized) {
                *acc += s;
            }
        }
        let (n_drop, min_keep_engaged) = if g.locked {
            (0, false)
        } else {
            drop_count(g.channels, p)
        };
        let mut order: Vec<usize> = (0..g.channels).collect();
        order.sort_by(|&a, &b| total[a].total_cmp(&total[b]).then(a.cmp(&b)));
        let mut drop: Vec<usize> = order[..n_drop].to_vec();
        drop.sort_unstable();
        let keep: Vec<usize> = (0..g.channels)
            .filter(|c| drop.binary_search(c).is_err())
            .collect();

        if !drop.is_empty() {
            for c in &g.consumers {
                let (axis, removed) = match &c.role {
                    ConsumerRole::InputChannels => (1, drop.clone()),
                    ConsumerRole::BatchNorm => (0, drop.clone()),
                    ConsumerRole::PooledColumns { .. } => (1, drop.clone()),
                    ConsumerRole::FlattenedColumns {
                        height,
                        width,
                        channels,
                        order,
                    } => {
                        let order =
                            order.ok_or_else(|| Error::MissingFlattenOrder(c.node.clone()))?;
                        (
                            1,
                            flattened_columns(*height, *width, *channels, order, &drop),
                        )
                    }
                };
                plan.propagation.push(Propagation {
                    consumer: c.node.clone(),
                    axis,
                    removed,
                });
            }
        }
        plan.groups.push(GroupPlan {
            layers: g.members.clone(),
            channels: g.channels,
            keep,
            drop,
            min_keep_engaged,
            locked: g.locked,
        });
    }
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::Consumer;

    fn single(id: &str, n: usize) -> PruneGroup {
        PruneGroup {
            members: vec![id.into()],
            channels: n,
            consumers: vec![Consumer {
                node: "next".into(),
                role: ConsumerRole::InputChannels,
            }],
            locked: false,
        }
    }

    fn report(id: &str, raw: Vec<f64>) -> ImportanceReport {
        ImportanceReport::new(id, Method::L1, raw)
    }

    #[test]
    fn floor_arithmetic() {
        assert_eq!(drop_count(64, 0.25), (16, false));
        assert_eq!(drop_count(10, 0.9), (9, false));
        assert_eq!(drop_count(1, 0.9), (0, false));
        assert_eq!(drop_count(3, 0.999_999_999_9), (2, true));
        assert_eq!(drop_count(3, 0.34), (1, false));
        assert_eq!(drop_count(100, 0.29), (29, false));
    }

    #[test]
    fn worked_example_drops_the_zero_filter() {
        let r = ImportanceReport::new("c", Method::OperatorNorm, vec![3.0, 0.0, 3.0]);
        let plan = make_plan(&[r], &[single("c", 3)], 0.34, None, "h").unwrap();
        assert_eq!(plan.groups[0].drop, [1]);
        assert_eq!(plan.groups[0].keep, [0, 2]);
        assert_eq!(plan.propagation[0].removed, [1]);
    }

    #[test]
    fn sixty_four_filters_at_a_quarter() {
        let raw: Vec<f64> = (0..64).map(|i| ((i * 37) % 64) as f64).collect();
        let plan = make_plan(&[report("c", raw)], &[single("c", 64)], 0.25, None, "h").unwrap();
        assert_eq!(plan.groups[0].drop.len(), 16);
        assert_eq!(plan.groups[0].keep.len(), 48);
    }

    #[test]
    fn ties_break_by_index() {
        let plan = make_plan(
            &[report("c", vec![1.0; 4])],
            &[single("c", 4)],
            0.5,
            None,
            "h",
        )
        .unwrap();
        assert_eq!(plan.groups[0].drop, [0, 1]);
    }

    #[test]
    fn grouped_scores_are_summed() {
        let g = PruneGroup {
            members: vec!["a".into(), "b".into()],
            channels: 3,
            consumers: vec![],
            locked: false,
        };
        let ra = report("a", vec![1.0, 0.0, 0.5]);
        let rb = report("b", vec![0.0, 1.0, 0.6]);
        let plan = make_plan(&[ra, rb], &[g], 0.34, Some(&["a".into()]), "h").unwrap();
        // sums: 1.0, 1.0, 1.1
        assert_eq!(plan.groups[0].drop, [0]);
    }

    #[test]
    fn bad_inputs() {
        let r = report("c", vec![1.0, 2.0]);
        let g = single("c", 2);
        assert!(make_plan(
            std::slice::from_ref(&r),
            std::slice::from_ref(&g),
            0.0,
            None,
            "h"
        )
        .is_err());
        assert!(make_plan(
            std::slice::from_ref(&r),
            std::slice::from_ref(&g),
            1.0,
            None,
            "h"
        )
        .is_err());
        assert!(make_plan(
            std::slice::from_ref(&r),
            std::slice::from_ref(&g),
            0.5,
            Some(&["zz".into()]),
            "h"
        )
        .is_err());
        assert!(make_plan(&[], &[g], 0.5, None, "h").is_err());
    }

    #[test]
    fn locked_groups_keep_everything() {
        let mut g = single("c", 4);
        g.locked = true;
        let plan = make_plan(
            &[report("c", vec![1.0, 2.0, 3.0, 4.0])],
            &[g],
            0.5,
            None,
            "h",
        )
        .unwrap();
        assert!(plan.groups[0].drop.is_empty());
        assert!(plan.propagation.is_empty());
    }

    #[test]
    fn plan_hash_is_stable() {
        let r = report("c", vec![1.0, 2.0]);
        let a = make_plan(std::slice::from_ref(&r), &[single("c", 2)], 0.5, None, "h").unwrap();
        let b = make_plan(&[r], &[single("c", 2)], 0.5, None, "h").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
