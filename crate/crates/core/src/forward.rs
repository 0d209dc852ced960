//! Reference inference for the supported op set.
//!
//! Only as fast as needed to produce feature maps for the active criteria.
//! All accumulation is in f64; each output element of a conv or dense layer
//! is summed in a fixed order (bias, then input channels, then kernel rows
//! and columns), which makes pruned and masked executions comparable bit for
//! bit.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::Model;
use crate::netgraph::{
    same_padding, spatial_output, ActivationKind, FlattenOrder, NetworkGraph, Op, Padding,
    PoolAttrs,
};
use crate::tensor::{KernelTensor, Tensor};

/// Where active criteria read a conv layer's feature maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Tap {
    /// Raw conv output.
    PreAct,
    /// After the batchnorm/activation chain that directly follows the conv.
    #[default]
    PostAct,
}

impl Tap {
    pub fn name(self) -> &'static str {
        match self {
            Tap::PreAct => "pre-act",
            Tap::PostAct => "post-act",
        }
    }
}

impl std::str::FromStr for Tap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pre-act" => Ok(Tap::PreAct),
            "post-act" => Ok(Tap::PostAct),
            other => Err(Error::InvalidArgument(format!(
                "unknown tap point `{other}`"
            ))),
        }
    }
}

/// A node's output for one input sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Activation {
    pub node_id: String,
    pub tensor: Tensor,
}

fn dims3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *t.dims() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::InvalidTensor(format!(
            "{what} expects (C,H,W), got {:?}",
            t.dims()
        ))),
    }
}

fn window_geometry(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    let out = spatial_output(input, kernel, stride, padding).ok_or_else(|| {
        Error::InvalidTensor(format!(
            "window {kernel} stride {stride} does not fit extent {input}"
        ))
    })?;
    let pad = match padding {
        Padding::Same => same_padding(input, kernel, stride),
        Padding::Valid => 0,
    };
    Ok((out, pad))
}

/// Range of output positions `o` with `0 <= o*stride + offset - pad < input`.
fn valid_outputs(
    out: usize,
    stride: usize,
    offset: usize,
    pad: usize,
    input: usize,
) -> (usize, usize) {
    let lo = if offset >= pad {
        0
    } else {
        (pad - offset).div_ceil(stride)
    };
    // largest o with o*stride + offset - pad <= input - 1
    let limit = input + pad;
    if offset >= limit {
        return (0, 0);
    }
    let hi = ((limit - 1 - offset) / stride + 1).min(out);
    (lo.min(hi), hi)
}

/// 2-D convolution (cross-correlation) of a `(n_in, h, w)` input.
pub fn conv_forward(
    x: &Tensor,
    kernel: &KernelTensor,
    bias: Option<&[f32]>,
    padding: Padding,
    strides: [usize; 2],
) -> Result<Tensor> {
    conv_forward_with(x, kernel, bias, padding, strides, Exec::default())
}

pub fn conv_forward_with(
    x: &Tensor,
    kernel: &KernelTensor,
    bias: Option<&[f32]>,
    padding: Padding,
    strides: [usize; 2],
    exec: Exec,
) -> Result<Tensor> {
    let (c, h, w) = dims3(x, "conv_forward")?;
    if c != kernel.n_in() {
        return Err(Error::DimensionMismatch {
            left: format!("input channels {c}"),
            right: format!("kernel n_in {}", kernel.n_in()),
        });
    }
    if let Some(b) = bias {
        if b.len() != kernel.n_out() {
            return Err(Error::DimensionMismatch {
                left: format!("bias length {}", b.len()),
                right: format!("kernel n_out {}", kernel.n_out()),
            });
        }
    }
    let (kh, kw) = (kernel.k_h(), kernel.k_w());
    let (oh, pt) = window_geometry(h, kh, strides[0], padding)?;
    let (ow, pl) = window_geometry(w, kw, strides[1], padding)?;
    let xs = x.data();
    let planes = exec.map_range(kernel.n_out(), |oc| {
        let b0 = bias.map_or(0.0, |b| b[oc] as f64);
        let mut acc = vec![b0; oh * ow];
        for ic in 0..c {
            let plane = &xs[ic * h * w..(ic + 1) * h * w];
            let kern = kernel.kernel(oc, ic);
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_outputs(oh, strides[0], ky, pt, h);
                for kx in 0..kw {
                    let wv = kern[ky * kw + kx] as f64;
                    let (ox_lo, ox_hi) = valid_outputs(ow, strides[1], kx, pl, w);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * strides[0] + ky - pt;
                        let row = &plane[iy * w..(iy + 1) * w];
                        let out_row = &mut acc[oy * ow..(oy + 1) * ow];
                        for (o, ox) in out_row[ox_lo..ox_hi].iter_mut().zip(ox_lo..) {
                            *o += wv * row[ox * strides[1] + kx - pl] as f64;
                        }
                    }
                }
            }
        }
        acc
    });
    let data: Vec<f32> = planes.into_iter().flatten().map(|v| v as f32).collect();
    Tensor::new(vec![kernel.n_out(), oh, ow], data)
}

fn pool(x: &Tensor, attrs: &PoolAttrs, max: bool) -> Result<Tensor> {
    let (c, h, w) = dims3(x, "pooling")?;
    let [kh, kw] = attrs.pool_size;
    let [sh, sw] = attrs.strides();
    let (oh, pt) = window_geometry(h, kh, sh, attrs.padding)?;
    let (ow, pl) = window_geometry(w, kw, sw, attrs.padding)?;
    let xs = x.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let plane = &xs[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut sum = 0.0f64;
                let mut count = 0usize;
                for ky in 0..kh {
                    let Some(iy) = (oy * sh + ky).checked_sub(pt).filter(|&v| v < h) else {
                        continue;
                    };
                    for kx in 0..kw {
                        let Some(ix) = (ox * sw + kx).checked_sub(pl).filter(|&v| v < w) else {
                            continue;
                        };
                        let v = plane[iy * w + ix];
                        best = best.max(v);
                        sum += v as f64;
                        count += 1;
                    }
                }
                out.push(if max {
                    best
                } else {
                    (sum / count as f64) as f32
                });
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = dims3(x, "globalavgpool")?;
    let n = (h * w) as f64;
    let data = x
        .data()
        .chunks(h * w)
        .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / n) as f32)
        .collect();
    Tensor::new(vec![c], data)
}

fn flatten(x: &Tensor, order: FlattenOrder) -> Result<Tensor> {
    let (c, h, w) = dims3(x, "flatten")?;
    let data = match order {
        FlattenOrder::ChannelFirst => x.data().to_vec(),
        FlattenOrder::ChannelLast => {
            let xs = x.data();
            let mut out = Vec::with_capacity(xs.len());
            for p in 0..h * w {
                for ch in 0..c {
                    out.push(xs[ch * h * w + p]);
                }
            }
            out
        }
    };
    Tensor::new(vec![c * h * w], data)
}

fn dense(x: &Tensor, kernel: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (units, n_in) = match *kernel.dims() {
        [u, i] => (u, i),
        _ => {
            return Err(Error::InvalidTensor(
                "dense kernel must be (units, in)".into(),
            ))
        }
    };
    if x.len() != n_in {
        return Err(Error::DimensionMismatch {
            left: format!("dense input {}", x.len()),
            right: format!("kernel ({units}, {n_in})"),
        });
    }
    let xs = x.data();
    let ws = kernel.data();
    let data = (0..units)
        .map(|o| {
            let mut acc = bias.map_or(0.0, |b| b.data()[o] as f64);
            for (wv, xv) in ws[o * n_in..(o + 1) * n_in].iter().zip(xs) {
                acc += *wv as f64 * *xv as f64;
            }
            acc as f32
        })
        .collect();
    Tensor::new(vec![units], data)
}

/// Per-channel scale and shift. Spatial inputs use the channel axis, flat
/// inputs the feature axis.
fn batchnorm(x: &Tensor, model: &Model, node: &str, eps: f32) -> Result<Tensor> {
    let gamma = model.weight(node, "gamma")?.data();
    let beta = model.weight(node, "beta")?.data();
    let mean = model.weight(node, "moving_mean")?.data();
    let var = model.weight(node, "moving_variance")?.data();
    let channels = x.dims()[0];
    let per = x.len() / channels;
    let data = x
        .data()
        .chunks(per)
        .enumerate()
        .flat_map(|(ch, plane)| {
            let scale = gamma[ch] as f64 / (var[ch] as f64 + eps as f64).sqrt();
            let shift = beta[ch] as f64 - mean[ch] as f64 * scale;
            plane
                .iter()
                .map(move |&v| (v as f64 * scale + shift) as f32)
        })
        .collect();
    Tensor::new(x.dims().to_vec(), data)
}

fn activation(x: &Tensor, kind: ActivationKind) -> Result<Tensor> {
    let f = |v: f32| -> f32 {
        match kind {
            ActivationKind::Relu => v.max(0.0),
            ActivationKind::Linear => v,
            ActivationKind::Sigmoid => (1.0 / (1.0 + (-(v as f64)).exp())) as f32,
            ActivationKind::Tanh => (v as f64).tanh() as f32,
        }
    };
    Tensor::new(x.dims().to_vec(), x.data().iter().map(|&v| f(v)).collect())
}

fn softmax(x: &Tensor) -> Result<Tensor> {
    let max = x.data().iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = x.data().iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Tensor::new(
        x.dims().to_vec(),
        exps.iter().map(|e| (e / sum) as f32).collect(),
    )
}

fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            left: format!("{:?}", a.dims()),
            right: format!("{:?}", b.dims()),
        });
    }
    Tensor::new(
        a.dims().to_vec(),
        a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
    )
}

/// Channels forced to zero at selected nodes, keyed by topological index.
pub type ChannelMask = HashMap<usize, Vec<usize>>;

fn zero_channels(t: Tensor, dropped: &[usize]) -> Result<Tensor> {
    let channels = t.dims()[0];
    let per = t.len() / channels;
    let dims = t.dims().to_vec();
    let mut data = t.into_data();
    for &ch in dropped {
        data[ch * per..(ch + 1) * per].fill(0.0);
    }
    Tensor::new(dims, data)
}

/// Runs a model, counting every forward pass it performs.
pub struct Forward<'m> {
    model: &'m Model,
    exec: Exec,
    passes: AtomicUsize,
}

impl<'m> Forward<'m> {
    pub fn new(model: &'m Model, exec: Exec) -> Self {
        Self {
            model,
            exec,
            passes: AtomicUsize::new(0),
        }
    }

    /// Number of (possibly partial) forward passes executed so far.
    pub fn passes(&self) -> usize {
        self.passes.load(Ordering::Relaxed)
    }

    fn graph(&self) -> &NetworkGraph {
        self.model.graph()
    }

    /// Execute the ancestors of `targets` on one input and return the outputs
    /// of `targets`, in the order given. Masked nodes get the listed channels
    /// zeroed right after they are computed.
    pub fn run(
        &self,
        input: &Tensor,
        targets: &[usize],
        mask: Option<&ChannelMask>,
    ) -> Result<Vec<Tensor>> {
        let graph = self.graph();
        let expected = graph.input_shape();
        if input.dims() != expected.as_slice() {
            return Err(Error::DimensionMismatch {
                left: format!("input {:?}", input.dims()),
                right: format!("model input {expected:?}"),
            });
        }
        let n = graph.nodes().len();
        let mut needed = vec![false; n];
        let mut stack: Vec<usize> = targets.to_vec();
        while let Some(i) = stack.pop() {
            if i >= n {
                return Err(Error::InvalidArgument(format!(
                    "node index {i} out of range"
                )));
            }
            if !needed[i] {
                needed[i] = true;
                stack.extend_from_slice(graph.input_indices(i));
            }
        }
        self.passes.fetch_add(1, Ordering::Relaxed);

        let mut outputs: Vec<Option<Tensor>> = vec![None; n];
        for i in 0..n {
            if !needed[i] {
                continue;
            }
            let node = &graph.nodes()[i];
            let arg = |k: usize| -> &Tensor {
                outputs[graph.input_indices(i)[k]]
                    .as_ref()
                    .expect("inputs run before consumers")
            };
            let out = match &node.op {
                Op::Input => input.clone(),
                Op::Conv2d(a) => {
                    let kernel = self.model.kernel(&node.id)?;
                    let bias = if a.use_bias {
                        Some(self.model.weight(&node.id, "bias")?.data())
                    } else {
                        None
                    };
                    conv_forward_with(arg(0), &kernel, bias, a.padding, a.strides, self.exec)?
                }
                Op::Dense(a) => {
                    let bias = if a.use_bias {
                        Some(self.model.weight(&node.id, "bias")?)
                    } else {
                        None
                    };
                    dense(arg(0), self.model.weight(&node.id, "kernel")?, bias)?
                }
                Op::Add => add(arg(0), arg(1))?,
                Op::MaxPool(a) => pool(arg(0), a, true)?,
                Op::AvgPool(a) => pool(arg(0), a, false)?,
                Op::GlobalAvgPool => global_avg_pool(arg(0))?,
                Op::Flatten => {
                    let order = graph
                        .flatten_order()
                        .ok_or_else(|| Error::MissingFlattenOrder(node.id.clone()))?;
                    flatten(arg(0), order)?
                }
                Op::BatchNorm(a) => batchnorm(arg(0), self.model, &node.id, a.epsilon)?,
                Op::Activation(a) => activation(arg(0), a.function)?,
                Op::Softmax => softmax(arg(0))?,
            };
            let out = match mask.and_then(|m| m.get(&i)) {
                Some(dropped) if !dropped.is_empty() => zero_channels(out, dropped)?,
                _ => out,
            };
            outputs[i] = Some(out);
        }
        Ok(targets
            .iter()
            .map(|&t| outputs[t].clone().expect("targets are executed"))
            .collect())
    }

    /// Output of `target` (or of its post-activation chain) for one input.
    pub fn run_to_layer(&self, input: &Tensor, target: &str, tap: Tap) -> Result<Activation> {
        let graph = self.graph();
        let pos = graph
            .position(target)
            .ok_or_else(|| Error::InvalidArgument(format!("no node `{target}`")))?;
        let at = match tap {
            Tap::PreAct => pos,
            Tap::PostAct => graph.post_activation_tap(pos),
        };
        let mut out = self.run(input, &[at], None)?;
        Ok(Activation {
            node_id: graph.nodes()[at].id.clone(),
            tensor: out.pop().expect("one target"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    fn t(dims: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(dims.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let x = t(&[1, 2, 3], &[1., 2., 3., 4., 5., 6.]);
        let k = KernelTensor::new(1, 1, 1, 1, vec![1.0]).unwrap();
        let y = conv_forward(&x, &k, None, Padding::Valid, [1, 1]).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn hand_dot_product() {
        let x = t(&[1, 2, 2], &[1., 2., 3., 4.]);
        let k = KernelTensor::new(1, 1, 2, 2, vec![1., 0., 0., 1.]).unwrap();
        let y = conv_forward(&x, &k, None, Padding::Valid, [1, 1]).unwrap();
        assert_eq!(y.dims(), &[1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn zero_kernel_gives_zero_output() {
        let x = t(&[2, 3, 3], &[1.5; 18]);
        let k = KernelTensor::new(3, 2, 3, 3, vec![0.0; 54]).unwrap();
        let y = conv_forward(&x, &k, None, Padding::Same, [1, 1]).unwrap();
        assert_eq!(y.dims(), &[3, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_padding_border_values() {
        // 3x3 all-ones kernel over all-ones 3x3 input counts the in-bounds taps
        let x = t(&[1, 3, 3], &[1.0; 9]);
        let k = KernelTensor::new(1, 1, 3, 3, vec![1.0; 9]).unwrap();
        let y = conv_forward(&x, &k, Some(&[0.5]), Padding::Same, [1, 1]).unwrap();
        assert_eq!(y.data(), &[4.5, 6.5, 4.5, 6.5, 9.5, 6.5, 4.5, 6.5, 4.5]);
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let x = t(&[2, 2, 2], &[0.0; 8]);
        let k = KernelTensor::new(1, 1, 1, 1, vec![1.0]).unwrap();
        assert!(conv_forward(&x, &k, None, Padding::Valid, [1, 1]).is_err());
    }

    #[test]
    fn relu_and_maxpool() {
        let r = activation(&t(&[2], &[-1.0, 2.0]), ActivationKind::Relu).unwrap();
        assert_eq!(r.data(), &[0.0, 2.0]);
        let attrs = PoolAttrs {
            pool_size: [2, 2],
            strides: Some([2, 2]),
            padding: Padding::Valid,
        };
        let p = pool(&t(&[1, 2, 2], &[1., 2., 3., 4.]), &attrs, true).unwrap();
        assert_eq!(p.data(), &[4.0]);
    }

    #[test]
    fn flatten_orders() {
        let x = t(&[2, 1, 2], &[1., 2., 3., 4.]);
        assert_eq!(
            flatten(&x, FlattenOrder::ChannelFirst).unwrap().data(),
            &[1., 2., 3., 4.]
        );
        assert_eq!(
            flatten(&x, FlattenOrder::ChannelLast).unwrap().data(),
            &[1., 3., 2., 4.]
        );
    }

    #[test]
    fn run_to_first_conv_equals_direct_conv() {
        let model = fixtures::toy_model(3);
        let x = fixtures::random_inputs(model.graph().input_shape(), 1, 11).remove(0);
        let fwd = Forward::new(&model, Exec::Sequential);
        let act = fwd.run_to_layer(&x, "c1", Tap::PreAct).unwrap();
        let direct = conv_forward(
            &x,
            &model.kernel("c1").unwrap(),
            Some(model.weight("c1", "bias").unwrap().data()),
            Padding::Valid,
            [1, 1],
        )
        .unwrap();
        assert_eq!(act.node_id, "c1");
        assert_eq!(act.tensor, direct);
        assert_eq!(fwd.passes(), 1);
        let post = fwd.run_to_layer(&x, "c1", Tap::PostAct).unwrap();
        assert_eq!(post.node_id, "c1_relu");
        assert!(post.tensor.data().iter().all(|&v| v >= 0.0));
        assert_eq!(fwd.passes(), 2);
    }

    #[test]
    fn missing_weights_name_the_tensor() {
        let model = fixtures::toy_model(3);
        let mut graph_nodes = model.graph().nodes().to_vec();
        for n in &mut graph_nodes {
            if n.id == "c2" {
                n.weights.insert("kernel".into(), "nowhere".into());
            }
        }
        let graph = model.graph().with_nodes(graph_nodes).unwrap();
        let err = Model::new(graph, model.weights().clone()).unwrap_err();
        assert!(err.to_string().contains("nowhere"));
    }
}
