use serde::{Deserialize, Serialize};

use super::plan::PrunePlan;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::forward::{ChannelMask, Forward};
use crate::model::Model;
use crate::netgraph::Op;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheck {
    pub layer: String,
    /// `pruned` for layers whose filters were removed, `downstream` otherwise.
    pub role: String,
    pub max_abs_diff: f64,
    pub equal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub samples: usize,
    pub layers: Vec<LayerCheck>,
    /// Layers whose outputs differ from the reference.
    pub violations: Vec<String>,
    /// Largest difference at the network output against the unmasked
    /// original; informative only.
    pub unmasked_output_max_abs_diff: f64,
    pub passed: bool,
}

/// Channels removed by `plan`, masked at every node that carries them.
fn reference_mask(model: &Model, plan: &PrunePlan) -> ChannelMask {
    let graph = model.graph();
    let mut carried: Vec<Option<&[usize]>> = Vec::with_capacity(graph.nodes().len());
    for (i, node) in graph.nodes().iter().enumerate() {
        let first = graph.input_indices(i).first().and_then(|&j| carried[j]);
        let c = match &node.op {
            Op::Conv2d(_) => plan
                .group_of(&node.id)
                .filter(|g| !g.drop.is_empty())
                .map(|g| g.drop.as_slice()),
            Op::BatchNorm(_) | Op::Activation(_) | Op::MaxPool(_) | Op::AvgPool(_) => first,
            Op::Add => first.or_else(|| carried[graph.input_indices(i)[1]]),
            _ => None,
        };
        carried.push(c);
    }
    carried
        .into_iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|d| (i, d.to_vec())))
        .collect()
}

fn max_abs_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x as f64 - *y as f64).abs())
        .fold(0.0, f64::max)
}

/// Compare every conv and dense output of `pruned` with a reference run of
/// `model` in which the removed channels are zeroed wherever they flow.
/// Pruned layers are compared on their kept filters. Equality is exact.
pub fn verify_equivalence(
    model: &Model,
    pruned: &Model,
    plan: &PrunePlan,
    samples: &[Tensor],
    exec: Exec,
) -> Result<VerifyReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument(
            "verification needs at least one sample".into(),
        ));
    }
    let g0 = model.graph();
    let g1 = pruned.graph();
    let mask = reference_mask(model, plan);
    let checked: Vec<(String, usize, usize, Option<Vec<usize>>)> = g0
        .nodes()
        .iter()
        .enumerate()
        .filter(|(_, n)| matches!(n.op, Op::Conv2d(_) | Op::Dense(_)))
        .map(|(i, n)| {
            let j = g1.position(&n.id).ok_or_else(|| {
                Error::InvalidArgument(format!("pruned model lacks node `{}`", n.id))
            })?;
            let keep = plan
                .group_of(&n.id)
                .and_then(|g| (!g.drop.is_empty()).then(|| g.keep.clone()));
            Ok((n.id.clone(), i, j, keep))
        })
        .collect::<Result<_>>()?;
    let t0: Vec<usize> = checked.iter().map(|c| c.1).collect();
    let t1: Vec<usize> = checked.iter().map(|c| c.2).collect();
    let out0 = g0.nodes().len() - 1;
    let out1 = g1
        .position(&g0.nodes()[out0].id)
        .ok_or_else(|| Error::InvalidArgument("pruned model lacks the output node".into()))?;

    let f0 = Forward::new(model, exec);
    let f1 = Forward::new(pruned, exec);
    let per_sample: Vec<(Vec<f64>, f64)> = exec.try_map(samples, |x| {
        let reference = f0.run(x, &t0, Some(&mask))?;
        let actual = f1.run(x, &t1, None)?;
        let diffs = checked
            .iter()
            .zip(reference.iter().zip(&actual))
            .map(|((_, _, _, keep), (r, a))| {
                let r = match keep {
                    Some(k) => r.select(0, k)?,
                    None => r.clone(),
                };
                Ok(if r.dims() == a.dims() {
                    max_abs_diff(r.data(), a.data())
                } else {
                    f64::INFINITY
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        let plain = f0.run(x, &[out0], None)?;
        let after = f1.run(x, &[out1], None)?;
        Ok::<_, Error>((diffs, max_abs_diff(plain[0].data(), after[0].data())))
    })?;

    let layers: Vec<LayerCheck> = checked
        .iter()
        .enumerate()
        .map(|(k, (id, _, _, keep))| {
            let d = per_sample.iter().map(|(v, _)| v[k]).fold(0.0, f64::max);
            LayerCheck {
                layer: id.clone(),
                role: if keep.is_some() {
                    "pruned"
                } else {
                    "downstream"
                }
                .to_string(),
                max_abs_diff: d,
                equal: d == 0.0,
            }
        })
        .collect();
    let violations: Vec<String> = layers
        .iter()
        .filter(|l| !l.equal)
        .map(|l| l.layer.clone())
        .collect();
    Ok(VerifyReport {
        samples: samples.len(),
        unmasked_output_max_abs_diff: per_sample.iter().map(|p| p.1).fold(0.0, f64::max),
        passed: violations.is_empty(),
        layers,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::importance::{rank_model, Method, RankOptions};
    use crate::netgraph::discover_groups;
    use crate::pruner::{apply_plan, make_plan};

    fn plan_for(model: &Model, p: f64, layers: Option<&[String]>) -> PrunePlan {
        let out = rank_model(model, Method::L2, None, &RankOptions::default()).unwrap();
        let groups = discover_groups(model.graph()).unwrap();
        make_plan(&out.reports, &groups, p, layers, &model.content_hash()).unwrap()
    }

    #[test]
    fn empty_plan_gives_full_equality() {
        let model = fixtures::toy_model(3);
        let plan = PrunePlan::empty(Method::L1, model.content_hash());
        let pruned = apply_plan(&model, &plan).unwrap();
        let xs = fixtures::random_inputs(model.graph().input_shape(), 3, 1);
        let r = verify_equivalence(&model, &pruned, &plan, &xs, Exec::Sequential).unwrap();
        assert!(r.passed);
        assert_eq!(r.unmasked_output_max_abs_diff, 0.0);
    }

    #[test]
    fn toy_drop_keeps_slices_equal() {
        let model = fixtures::toy_model(3);
        let plan = plan_for(&model, 0.5, None);
        let pruned = apply_plan(&model, &plan).unwrap();
        let xs = fixtures::random_inputs(model.graph().input_shape(), 4, 2);
        let r = verify_equivalence(&model, &pruned, &plan, &xs, Exec::Parallel).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r
            .layers
            .iter()
            .any(|l| l.layer == "c1" && l.role == "pruned"));
    }

    #[test]
    fn residual_groups_stay_consistent() {
        let model = Model::with_random_weights(fixtures::residual_toy(), 8).unwrap();
        let plan = plan_for(&model, 0.5, None);
        let merged = plan.groups.iter().find(|g| g.layers.len() > 1).unwrap();
        assert!(
            merged.layers.contains(&"stem".to_string())
                && merged.layers.contains(&"a2".to_string())
        );
        let pruned = apply_plan(&model, &plan).unwrap();
        let xs = fixtures::random_inputs(model.graph().input_shape(), 3, 4);
        let r = verify_equivalence(&model, &pruned, &plan, &xs, Exec::Sequential).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn tampered_weights_are_reported() {
        let model = fixtures::toy_model(3);
        let plan = plan_for(&model, 0.5, None);
        let pruned = apply_plan(&model, &plan).unwrap();
        let mut w = pruned.weights().clone();
        let k = &w["c2.kernel"];
        let mut data = k.data().to_vec();
        data[0] += 1.0;
        w.insert(
            "c2.kernel".into(),
            Tensor::new(k.dims().to_vec(), data).unwrap(),
        );
        let bad = Model::new(pruned.graph().clone(), w).unwrap();
        let xs = fixtures::random_inputs(model.graph().input_shape(), 2, 2);
        let r = verify_equivalence(&model, &bad, &plan, &xs, Exec::Sequential).unwrap();
        assert!(!r.passed);
        assert!(r.violations.contains(&"c2".to_string()));
    }
}
