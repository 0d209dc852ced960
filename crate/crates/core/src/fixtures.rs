//! Built-in network graphs: small toys for tests and the four reference
//! architectures used for cost reproduction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::netgraph::{
    ActivationAttrs, ActivationKind, BatchNormAttrs, ConvAttrs, DenseAttrs, FlattenOrder,
    LayerNode, NetworkGraph, Op, Padding, PoolAttrs,
};
use crate::tensor::Tensor;

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 6] = [
    "toy",
    "residual_toy",
    "dcase21",
    "vgg16_cifar",
    "vggish",
    "resnet50",
];

/// Incremental node list builder.
struct Net {
    nodes: Vec<LayerNode>,
    last: String,
}

impl Net {
    fn new() -> Self {
        Self {
            nodes: vec![LayerNode::new("input", Op::Input, &[])],
            last: "input".into(),
        }
    }

    fn push(&mut self, id: &str, op: Op, inputs: &[&str]) -> String {
        self.nodes.push(LayerNode::new(id, op, inputs));
        self.last = id.to_string();
        self.last.clone()
    }

    fn then(&mut self, id: &str, op: Op) -> String {
        let prev = self.last.clone();
        self.push(id, op, &[&prev])
    }

    fn build(self, input_shape: [usize; 3], order: Option<FlattenOrder>) -> NetworkGraph {
        NetworkGraph::new(input_shape, order, self.nodes).expect("fixture graphs are valid")
    }
}

fn conv(filters: usize, k: [usize; 2], strides: usize, padding: Padding) -> Op {
    Op::Conv2d(ConvAttrs {
        filters,
        kernel_size: k,
        strides: [strides, strides],
        padding,
        use_bias: true,
    })
}

fn dense(units: usize) -> Op {
    Op::Dense(DenseAttrs {
        units,
        use_bias: true,
    })
}

fn bn() -> Op {
    Op::BatchNorm(BatchNormAttrs { epsilon: 1e-3 })
}

fn relu() -> Op {
    Op::Activation(ActivationAttrs {
        function: ActivationKind::Relu,
    })
}

fn maxpool(size: [usize; 2], strides: Option<[usize; 2]>, padding: Padding) -> Op {
    Op::MaxPool(PoolAttrs {
        pool_size: size,
        strides,
        padding,
    })
}

/// Two-conv toy. `c1` has three 1x2 filters over one channel, the shape of
/// the worked operator-norm example.
pub fn toy_chain() -> NetworkGraph {
    let mut n = Net::new();
    n.then("c1", conv(3, [1, 2], 1, Padding::Valid));
    n.then("c1_relu", relu());
    n.then("c2", conv(4, [3, 3], 1, Padding::Same));
    n.then("c2_bn", bn());
    n.then("c2_relu", relu());
    n.then("pool", maxpool([2, 2], None, Padding::Valid));
    n.then("flat", Op::Flatten);
    n.then("fc", dense(3));
    n.build([1, 4, 5], Some(FlattenOrder::ChannelLast))
}

pub fn toy_model(seed: u64) -> Model {
    Model::with_random_weights(toy_chain(), seed).expect("toy weights fit the toy graph")
}

/// The toy with `c1` set to filters (3,0), (0,1), (3,0) and zero bias.
pub fn worked_toy() -> Model {
    let base = toy_model(2024);
    let mut w = base.weights().clone();
    w.insert(
        "c1.kernel".into(),
        Tensor::new(vec![3, 1, 1, 2], vec![3.0, 0.0, 0.0, 1.0, 3.0, 0.0]).expect("valid"),
    );
    w.insert("c1.bias".into(), Tensor::zeros(vec![3]).expect("valid"));
    Model::new(base.graph().clone(), w).expect("same dims as the random toy")
}

/// Small residual net: an identity block whose last conv shares channels
/// with the stem, then a projection block with a shortcut conv.
pub fn residual_toy() -> NetworkGraph {
    let mut n = Net::new();
    n.then("stem", conv(4, [3, 3], 1, Padding::Same));
    n.then("stem_bn", bn());
    n.then("stem_relu", relu());
    n.then("a1", conv(3, [1, 1], 1, Padding::Valid));
    n.then("a1_relu", relu());
    n.then("a2", conv(4, [3, 3], 1, Padding::Same));
    n.then("a2_bn", bn());
    n.push("add_a", Op::Add, &["a2_bn", "stem_relu"]);
    let block_out = n.then("add_a_relu", relu());
    n.then("b1", conv(3, [1, 1], 2, Padding::Valid));
    n.then("b1_relu", relu());
    n.then("b2", conv(6, [3, 3], 1, Padding::Same));
    n.then("b2_bn", bn());
    n.push("short", conv(6, [1, 1], 2, Padding::Valid), &[&block_out]);
    n.then("short_bn", bn());
    n.push("add_b", Op::Add, &["b2_bn", "short_bn"]);
    n.then("add_b_relu", relu());
    n.then("gap", Op::GlobalAvgPool);
    n.then("fc", dense(5));
    n.build([2, 8, 8], None)
}

/// DCASE 2021 task 1a baseline at input (1, 40, 500).
pub fn dcase21() -> NetworkGraph {
    let mut n = Net::new();
    n.then("conv1", conv(16, [7, 7], 1, Padding::Same));
    n.then("bn1", bn());
    n.then("relu1", relu());
    n.then("conv2", conv(16, [7, 7], 1, Padding::Same));
    n.then("bn2", bn());
    n.then("relu2", relu());
    n.then("pool1", maxpool([5, 5], None, Padding::Valid));
    n.then("conv3", conv(32, [7, 7], 1, Padding::Same));
    n.then("bn3", bn());
    n.then("relu3", relu());
    n.then("pool2", maxpool([4, 100], None, Padding::Valid));
    n.then("flatten", Op::Flatten);
    n.then("dense1", dense(100));
    n.then("relu4", relu());
    n.then("dense2", dense(10));
    n.then("softmax", Op::Softmax);
    n.build([1, 40, 500], Some(FlattenOrder::ChannelLast))
}

/// VGG-16 for 32x32 inputs: thirteen 3x3 convs with batchnorm, then a
/// 512-unit hidden dense layer.
pub fn vgg16_cifar() -> NetworkGraph {
    let cfg: [&[usize]; 5] = [
        &[64, 64],
        &[128, 128],
        &[256, 256, 256],
        &[512, 512, 512],
        &[512, 512, 512],
    ];
    let mut n = Net::new();
    let mut k = 0;
    for (b, block) in cfg.iter().enumerate() {
        for &filters in block.iter() {
            k += 1;
            n.then(&format!("conv{k}"), conv(filters, [3, 3], 1, Padding::Same));
            n.then(&format!("bn{k}"), bn());
            n.then(&format!("relu{k}"), relu());
        }
        n.then(
            &format!("pool{}", b + 1),
            maxpool([2, 2], None, Padding::Valid),
        );
    }
    n.then("flatten", Op::Flatten);
    n.then("fc1", dense(512));
    n.then("fc1_bn", bn());
    n.then("fc1_relu", relu());
    n.then("fc2", dense(10));
    n.then("softmax", Op::Softmax);
    n.build([3, 32, 32], Some(FlattenOrder::ChannelLast))
}

/// VGGish with a 10-way classifier, input (1, 96, 64).
pub fn vggish() -> NetworkGraph {
    let mut n = Net::new();
    let stages: [&[usize]; 4] = [&[64], &[128], &[256, 256], &[512, 512]];
    let mut k = 0;
    for (s, stage) in stages.iter().enumerate() {
        for &filters in stage.iter() {
            k += 1;
            n.then(&format!("conv{k}"), conv(filters, [3, 3], 1, Padding::Same));
            n.then(&format!("relu{k}"), relu());
        }
        n.then(
            &format!("pool{}", s + 1),
            maxpool([2, 2], None, Padding::Valid),
        );
    }
    n.then("flatten", Op::Flatten);
    n.then("fc1", dense(4096));
    n.then("fc1_relu", relu());
    n.then("fc2", dense(128));
    n.then("fc2_relu", relu());
    n.then("fc3", dense(10));
    n.then("softmax", Op::Softmax);
    n.build([1, 96, 64], Some(FlattenOrder::ChannelLast))
}

fn bottleneck(
    n: &mut Net,
    stage: usize,
    block: char,
    filters: [usize; 3],
    stride: usize,
    project: bool,
) {
    let input = n.last.clone();
    let tag = format!("{stage}{block}");
    let [f1, f2, f3] = filters;
    n.then(
        &format!("res{tag}_branch2a"),
        conv(f1, [1, 1], stride, Padding::Valid),
    );
    n.then(&format!("bn{tag}_branch2a"), bn());
    n.then(&format!("res{tag}_branch2a_relu"), relu());
    n.then(
        &format!("res{tag}_branch2b"),
        conv(f2, [3, 3], 1, Padding::Same),
    );
    n.then(&format!("bn{tag}_branch2b"), bn());
    n.then(&format!("res{tag}_branch2b_relu"), relu());
    n.then(
        &format!("res{tag}_branch2c"),
        conv(f3, [1, 1], 1, Padding::Valid),
    );
    let main = n.then(&format!("bn{tag}_branch2c"), bn());
    let shortcut = if project {
        n.push(
            &format!("res{tag}_branch1"),
            conv(f3, [1, 1], stride, Padding::Valid),
            &[&input],
        );
        n.then(&format!("bn{tag}_branch1"), bn())
    } else {
        input
    };
    n.push(&format!("res{tag}"), Op::Add, &[&main, &shortcut]);
    n.then(&format!("res{tag}_relu"), relu());
}

/// ResNet-50 (bottleneck blocks, stride on the first 1x1 conv) at input
/// (3, 64, 64) with a 256-unit hidden layer and 200 classes.
pub fn resnet50() -> NetworkGraph {
    let mut n = Net::new();
    n.then("conv1", conv(64, [7, 7], 2, Padding::Same));
    n.then("bn_conv1", bn());
    n.then("conv1_relu", relu());
    n.then("pool1", maxpool([3, 3], Some([2, 2]), Padding::Same));
    let stages: [(usize, usize, [usize; 3], usize); 4] = [
        (2, 3, [64, 64, 256], 1),
        (3, 4, [128, 128, 512], 2),
        (4, 6, [256, 256, 1024], 2),
        (5, 3, [512, 512, 2048], 2),
    ];
    for (stage, blocks, filters, stride) in stages {
        for b in 0..blocks {
            let letter = (b'a' + b as u8) as char;
            let (s, project) = if b == 0 { (stride, true) } else { (1, false) };
            bottleneck(&mut n, stage, letter, filters, s, project);
        }
    }
    n.then("gap", Op::GlobalAvgPool);
    n.then("fc1", dense(256));
    n.then("fc1_relu", relu());
    n.then("fc2", dense(200));
    n.then("softmax", Op::Softmax);
    n.build([3, 64, 64], None)
}

pub fn by_name(name: &str) -> Result<NetworkGraph> {
    Ok(match name {
        "toy" => toy_chain(),
        "residual_toy" => residual_toy(),
        "dcase21" => dcase21(),
        "vgg16_cifar" => vgg16_cifar(),
        "vggish" => vggish(),
        "resnet50" => resnet50(),
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown fixture `{other}` (known: {})",
                NAMES.join(", ")
            )))
        }
    })
}

/// Which convs of a ResNet stage to select.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// The inner `branch2a`/`branch2b` convs, whose channels never meet an add.
    Main,
    /// Every conv of the stage, including `branch2c` and the shortcut, which
    /// share masks through the adds.
    All,
}

/// Conv ids of the given ResNet stages (2..=5).
pub fn resnet_selection(graph: &NetworkGraph, stages: &[usize], branch: Branch) -> Vec<String> {
    graph
        .conv_ids()
        .into_iter()
        .filter(|id| {
            stages.iter().any(|s| id.starts_with(&format!("res{s}")))
                && match branch {
                    Branch::Main => id.ends_with("branch2a") || id.ends_with("branch2b"),
                    Branch::All => true,
                }
        })
        .map(String::from)
        .collect()
}

/// `n` standard-normal samples of the given `(C, H, W)` shape.
pub fn random_inputs(shape: [usize; 3], n: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len: usize = shape.iter().product();
    (0..n)
        .map(|_| {
            let data = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
            Tensor::new(shape.to_vec(), data).expect("finite samples")
        })
        .collect()
}
