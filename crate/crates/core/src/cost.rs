//! Parameter and multiply-accumulate accounting.
//!
//! One MAC is one multiply-accumulate. Biases, batchnorm, activations,
//! pooling and adds cost no MACs. Batchnorm contributes four parameters per
//! channel (scale, shift and both moving statistics) unless disabled.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::{infer_shapes, NetworkGraph, Op, Shape};
use crate::pruner::PrunePlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeCost {
    pub id: String,
    pub op_kind: String,
    pub params: u64,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDelta {
    pub id: String,
    pub params_reduction_pct: f64,
    pub macs_reduction_pct: f64,
}

/// Change relative to a baseline; reductions are positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostDelta {
    pub baseline_params: u64,
    pub baseline_macs: u64,
    pub params_removed: i64,
    pub macs_removed: i64,
    pub params_reduction_pct: f64,
    pub macs_reduction_pct: f64,
    pub nodes: Vec<NodeDelta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub input_shape: [usize; 3],
    pub include_batchnorm: bool,
    pub nodes: Vec<NodeCost>,
    pub total_params: u64,
    pub total_macs: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<CostDelta>,
}

fn node_cost(op: &Op, input: Shape, output: Shape, include_batchnorm: bool) -> (u64, u64) {
    match op {
        Op::Conv2d(a) => {
            let k = (a.kernel_size[0] * a.kernel_size[1]) as u64;
            let (n_in, n_out) = (input.channels() as u64, a.filters as u64);
            let bias = if a.use_bias { n_out } else { 0 };
            let Shape::Spatial([_, h, w]) = output else {
                unreachable!("conv outputs are spatial")
            };
            (n_out * n_in * k + bias, (h * w) as u64 * k * n_in * n_out)
        }
        Op::Dense(a) => {
            let (n_in, n_out) = (input.numel() as u64, a.units as u64);
            let bias = if a.use_bias { n_out } else { 0 };
            (n_in * n_out + bias, n_in * n_out)
        }
        Op::BatchNorm(_) if include_batchnorm => (4 * output.channels() as u64, 0),
        _ => (0, 0),
    }
}

/// Per-node parameters and MACs at `input_shape` (the graph's own by default).
pub fn cost_report(
    graph: &NetworkGraph,
    input_shape: Option<[usize; 3]>,
    include_batchnorm: bool,
) -> Result<CostReport> {
    let input_shape = input_shape.unwrap_or(graph.input_shape());
    let shapes = infer_shapes(graph, input_shape)?;
    let nodes: Vec<NodeCost> = graph
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let input = graph
                .input_indices(i)
                .first()
                .map_or(shapes.at(i), |&j| shapes.at(j));
            let (params, macs) = node_cost(&n.op, input, shapes.at(i), include_batchnorm);
            NodeCost {
                id: n.id.clone(),
                op_kind: n.op.kind().to_string(),
                params,
                macs,
            }
        })
        .collect();
    Ok(CostReport {
        input_shape,
        include_batchnorm,
        total_params: nodes.iter().map(|n| n.params).sum(),
        total_macs: nodes.iter().map(|n| n.macs).sum(),
        nodes,
        delta: None,
    })
}

pub fn count_params(graph: &NetworkGraph, include_batchnorm: bool) -> u64 {
    cost_report(graph, None, include_batchnorm)
        .expect("a validated graph has consistent shapes at its own input")
        .total_params
}

pub fn count_macs(graph: &NetworkGraph, input_shape: Option<[usize; 3]>) -> Result<u64> {
    Ok(cost_report(graph, input_shape, true)?.total_macs)
}

fn reduction_pct(before: u64, after: u64) -> f64 {
    if before == 0 {
        0.0
    } else {
        100.0 * (before as f64 - after as f64) / before as f64
    }
}

/// `after` annotated with its reduction relative to `before`.
pub fn compare(before: &CostReport, after: &CostReport) -> Result<CostReport> {
    let ids = |r: &CostReport| r.nodes.iter().map(|n| n.id.clone()).collect::<Vec<_>>();
    if ids(before) != ids(after) {
        return Err(Error::BaselineMismatch("node sets differ".into()));
    }
    if before.input_shape != after.input_shape {
        return Err(Error::BaselineMismatch(format!(
            "input shapes {:?} and {:?}",
            before.input_shape, after.input_shape
        )));
    }
    if before.include_batchnorm != after.include_batchnorm {
        return Err(Error::BaselineMismatch("batchnorm counting differs".into()));
    }
    let nodes = before
        .nodes
        .iter()
        .zip(&after.nodes)
        .map(|(b, a)| NodeDelta {
            id: a.id.clone(),
            params_reduction_pct: reduction_pct(b.params, a.params),
            macs_reduction_pct: reduction_pct(b.macs, a.macs),
        })
        .collect();
    let mut out = after.clone();
    out.delta = Some(CostDelta {
        baseline_params: before.total_params,
        baseline_macs: before.total_macs,
        params_removed: before.total_params as i64 - after.total_params as i64,
        macs_removed: before.total_macs as i64 - after.total_macs as i64,
        params_reduction_pct: reduction_pct(before.total_params, after.total_params),
        macs_reduction_pct: reduction_pct(before.total_macs, after.total_macs),
        nodes,
    });
    Ok(out)
}

/// Parameter count the pruned model will have, from keep counts and shape
/// arithmetic alone.
pub fn predict_params(
    graph: &NetworkGraph,
    plan: &PrunePlan,
    include_batchnorm: bool,
) -> Result<u64> {
    let shapes = infer_shapes(graph, graph.input_shape())?;
    let kept: BTreeMap<&str, usize> = plan
        .groups
        .iter()
        .flat_map(|g| g.layers.iter().map(move |l| (l.as_str(), g.keep.len())))
        .collect();
    // channel (or feature) count of every node after pruning
    let mut width: Vec<usize> = Vec::with_capacity(graph.nodes().len());
    let mut total = 0u64;
    for (i, node) in graph.nodes().iter().enumerate() {
        let input_width = graph.input_indices(i).first().map(|&j| width[j]);
        let w = match &node.op {
            Op::Input => graph.input_shape()[0],
            Op::Conv2d(a) => kept.get(node.id.as_str()).copied().unwrap_or(a.filters),
            Op::Dense(a) => a.units,
            Op::Flatten => {
                let Shape::Spatial([_, h, w]) = shapes.at(graph.input_indices(i)[0]) else {
                    unreachable!("flatten inputs are spatial")
                };
                input_width.unwrap() * h * w
            }
            _ => input_width.unwrap(),
        };
        let n_in = input_width.unwrap_or(0) as u64;
        total += match &node.op {
            Op::Conv2d(a) => {
                let k = (a.kernel_size[0] * a.kernel_size[1]) as u64;
                w as u64 * n_in * k + if a.use_bias { w as u64 } else { 0 }
            }
            Op::Dense(a) => n_in * a.units as u64 + if a.use_bias { a.units as u64 } else { 0 },
            Op::BatchNorm(_) if include_batchnorm => 4 * w as u64,
            _ => 0,
        };
        width.push(w);
    }
    Ok(total)
}

fn thousands(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (k, ch) in s.chars().enumerate() {
        if k > 0 && (s.len() - k).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Aligned text table of the report.
pub fn render_table(report: &CostReport) -> String {
    let with_delta = report.delta.is_some();
    let mut rows: Vec<Vec<String>> = vec![{
        let mut h = vec![
            "node".to_string(),
            "op".into(),
            "params".into(),
            "MACs".into(),
        ];
        if with_delta {
            h.extend(["params -%".to_string(), "MACs -%".into()]);
        }
        h
    }];
    let deltas: BTreeMap<&str, &NodeDelta> = report
        .delta
        .iter()
        .flat_map(|d| d.nodes.iter().map(|n| (n.id.as_str(), n)))
        .collect();
    for n in report.nodes.iter().filter(|n| n.params > 0 || n.macs > 0) {
        let mut r = vec![
            n.id.clone(),
            n.op_kind.clone(),
            thousands(n.params),
            thousands(n.macs),
        ];
        if let Some(d) = deltas.get(n.id.as_str()) {
            r.push(format!("{:.2}", d.params_reduction_pct));
            r.push(format!("{:.2}", d.macs_reduction_pct));
        }
        rows.push(r);
    }
    let mut total = vec![
        "total".to_string(),
        String::new(),
        thousands(report.total_params),
        thousands(report.total_macs),
    ];
    if let Some(d) = &report.delta {
        total.push(format!("{:.2}", d.params_reduction_pct));
        total.push(format!("{:.2}", d.macs_reduction_pct));
    }
    rows.push(total);

    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .map(|r| r.get(c).map_or(0, |s| s.len()))
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for (k, r) in rows.iter().enumerate() {
        if k == rows.len() - 1 {
            let rule = widths
                .iter()
                .map(|w| "-".repeat(*w))
                .collect::<Vec<_>>()
                .join("  ");
            let _ = writeln!(out, "{rule}");
        }
        let cells: Vec<String> = (0..cols)
            .map(|c| {
                let s = r.get(c).map_or("", |s| s.as_str());
                if c < 2 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
    }
    out
}
