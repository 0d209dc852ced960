use super::{
    direction_bank, feature_map_energies, feature_map_ranks, score_entrywise, score_gm,
    score_operator_norm, ImportanceReport, Method,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::forward::{Forward, Tap};
use crate::model::Model;
use crate::netgraph::Op;
use crate::tensor::{EntrywiseNorm, Tensor};

/// Samples drawn for active criteria unless told otherwise.
pub const DEFAULT_ACTIVE_SAMPLES: usize = 500;

#[derive(Debug, Clone)]
pub struct RankOptions {
    /// Input samples; required by active methods, ignored by passive ones.
    pub inputs: Option<Vec<Tensor>>,
    /// Upper bound on the samples used from `inputs`.
    pub samples: usize,
    pub tap: Tap,
    pub exec: Exec,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self {
            inputs: None,
            samples: DEFAULT_ACTIVE_SAMPLES,
            tap: Tap::default(),
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RankOutcome {
    pub reports: Vec<ImportanceReport>,
    /// Forward passes executed while ranking.
    pub forward_passes: usize,
}

fn selected_layers(model: &Model, layers: Option<&[String]>) -> Result<Vec<String>> {
    let graph = model.graph();
    match layers {
        None => Ok(graph.conv_ids().into_iter().map(String::from).collect()),
        Some(ids) => {
            for id in ids {
                match graph.node(id).map(|n| &n.op) {
                    Some(Op::Conv2d(_)) => {}
                    Some(op) => {
                        return Err(Error::InvalidArgument(format!(
                            "layer `{id}` is a {} node, only conv2d layers can be ranked",
                            op.kind()
                        )))
                    }
                    None => return Err(Error::InvalidArgument(format!("no layer `{id}`"))),
                }
            }
            // graph order, no duplicates
            Ok(graph
                .conv_ids()
                .into_iter()
                .filter(|c| ids.iter().any(|i| i == c))
                .map(String::from)
                .collect())
        }
    }
}

fn rank_passive(
    model: &Model,
    method: Method,
    layer: &str,
    exec: Exec,
) -> Result<ImportanceReport> {
    let kernel = model.kernel(layer)?;
    match method {
        Method::OperatorNorm => {
            score_operator_norm(&kernel, &direction_bank(layer, &kernel, exec), exec)
        }
        Method::L1 => Ok(score_entrywise(layer, &kernel, EntrywiseNorm::L1, exec)),
        Method::L2 => Ok(score_entrywise(layer, &kernel, EntrywiseNorm::L2, exec)),
        Method::Gm => score_gm(layer, &kernel, exec),
        Method::Hrank | Method::Energy => unreachable!("active methods are handled separately"),
    }
}

/// Score the selected conv layers (all of them by default) with `method`.
///
/// Passive methods read kernels only and never touch the forward engine.
/// Active methods refuse to run without input samples.
pub fn rank_model(
    model: &Model,
    method: Method,
    layers: Option<&[String]>,
    opts: &RankOptions,
) -> Result<RankOutcome> {
    let layers = selected_layers(model, layers)?;
    let fwd = Forward::new(model, opts.exec);
    if !method.is_active() {
        let reports = opts
            .exec
            .try_map(&layers, |l| rank_passive(model, method, l, opts.exec))?
            .into_iter()
            .map(|r| r.with_meta("forward_passes", 0))
            .collect();
        return Ok(RankOutcome {
            reports,
            forward_passes: fwd.passes(),
        });
    }

    let inputs = match &opts.inputs {
        Some(v) if !v.is_empty() => v,
        _ => return Err(Error::ActiveMethodNeedsData(method.cli_name().to_string())),
    };
    if opts.samples == 0 {
        return Err(Error::InvalidArgument(
            "sample count must be positive".into(),
        ));
    }
    let used = &inputs[..inputs.len().min(opts.samples)];
    let graph = model.graph();
    let taps: Vec<usize> = layers
        .iter()
        .map(|l| {
            let pos = graph.position(l).expect("selected layers exist");
            match opts.tap {
                Tap::PreAct => pos,
                Tap::PostAct => graph.post_activation_tap(pos),
            }
        })
        .collect();
    let per_map = match method {
        Method::Hrank => feature_map_ranks,
        _ => feature_map_energies,
    };
    // one pass per sample yields every tapped layer at once
    let per_sample: Vec<Vec<Vec<f64>>> = opts.exec.try_map(used, |x| {
        fwd.run(x, &taps, None)?
            .iter()
            .map(|t| per_map(t, Exec::Sequential))
            .collect::<Result<Vec<_>>>()
    })?;
    let reports = layers
        .iter()
        .enumerate()
        .map(|(li, layer)| {
            let n = per_sample[0][li].len();
            let mut mean = vec![0.0f64; n];
            for s in &per_sample {
                for (acc, v) in mean.iter_mut().zip(&s[li]) {
                    *acc += v;
                }
            }
            mean.iter_mut().for_each(|v| *v /= used.len() as f64);
            ImportanceReport::new(layer.clone(), method, mean)
                .with_meta("samples", used.len())
                .with_meta("tap", opts.tap.name())
                .with_meta("tap_node", graph.nodes()[taps[li]].id.clone())
        })
        .collect();
    Ok(RankOutcome {
        reports,
        forward_passes: fwd.passes(),
    })
}
