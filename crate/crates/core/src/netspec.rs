//! Network layout: turns a block specification and a stack count into a
//! concrete layer graph with exact channel, parameter and memory accounting.
//!
//! The architecture is a stem convolution, `stack_count` dense blocks joined
//! by transitions (a 1x1 convolution followed by 2x2 average pooling), and a
//! BN-ReLU-globalpool-FC head. Inside a block, composite layer `l` consumes
//! the concatenation of the block input and all previous layer outputs, so
//! its input channel count is `c_in + l * growth_rate`.

use thiserror::Error;

/// Bytes per tensor element; the training engine runs on `f64`.
pub const ELEMENT_BYTES: u64 = 8;

/// Decoded dense-block hyperparameters: composite layer count and the number
/// of feature maps each layer adds to the concatenation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockSpec {
    pub num_layers: u32,
    pub growth_rate: u32,
}

impl BlockSpec {
    pub fn new(num_layers: u32, growth_rate: u32) -> Self {
        Self {
            num_layers,
            growth_rate,
        }
    }
}

impl std::fmt::Display for BlockSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({} layers, growth {})", self.num_layers, self.growth_rate)
    }
}

/// Hardware resource model: a candidate network is admissible only if it fits
/// both the parameter and the activation-memory budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryBudget {
    pub max_parameters: u64,
    pub max_activation_bytes: u64,
}

impl MemoryBudget {
    pub fn new(max_parameters: u64, max_activation_bytes: u64) -> Self {
        Self {
            max_parameters,
            max_activation_bytes,
        }
    }
}

/// One resolved layer in the flattened graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerDesc {
    /// Parameter-store prefix for this layer (e.g. `s0.l3.conv`).
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Spatial size (height, width) of the input tensor.
    pub in_size: (usize, usize),
    /// Spatial size of the output tensor.
    pub out_size: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    BatchNorm,
    Relu,
    AvgPool {
        kernel: usize,
        stride: usize,
    },
    GlobalAvgPool,
    FullyConnected,
}

impl LayerDesc {
    /// Trainable scalar count: conv = kh*kw*cin*cout + cout, BN = 2*channels,
    /// FC = in*out + out, everything else zero.
    pub fn parameter_count(&self) -> u64 {
        match self.kind {
            LayerKind::Conv { kernel, .. } => {
                (kernel * kernel * self.in_channels * self.out_channels + self.out_channels) as u64
            }
            LayerKind::BatchNorm => 2 * self.out_channels as u64,
            LayerKind::FullyConnected => {
                (self.in_channels * self.out_channels + self.out_channels) as u64
            }
            LayerKind::Relu | LayerKind::AvgPool { .. } | LayerKind::GlobalAvgPool => 0,
        }
    }

    /// Element count of this layer's output tensor for one example.
    pub fn output_elements(&self) -> u64 {
        (self.out_channels * self.out_size.0 * self.out_size.1) as u64
    }

    fn kind_label(&self) -> &'static str {
        match self.kind {
            LayerKind::Conv { kernel: 1, .. } => "conv1x1",
            LayerKind::Conv { .. } => "conv3x3",
            LayerKind::BatchNorm => "batchnorm",
            LayerKind::Relu => "relu",
            LayerKind::AvgPool { .. } => "avgpool2x2",
            LayerKind::GlobalAvgPool => "globalpool",
            LayerKind::FullyConnected => "fc",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BuildError {
    #[error("stack count must be at least 1")]
    ZeroStack,
    #[error(
        "input size {height}x{width} cannot carry {stack_count} blocks: \
         spatial size must be divisible by 2^{halvings} and stay at least 2x2 at the last block"
    )]
    SpatialExhausted {
        height: usize,
        width: usize,
        stack_count: u32,
        halvings: u32,
    },
}

/// Fully resolved network: the generating parameters plus the flattened layer
/// list used for accounting and reporting. Pure data, immutable after build.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    pub block: BlockSpec,
    pub stack_count: u32,
    /// Channel multiplier of the transition 1x1 convolution (1.0 keeps the
    /// channel count; 0.5 gives the compressed variant).
    pub compression: f64,
    /// Input shape as (channels, height, width).
    pub input_shape: (usize, usize, usize),
    pub num_classes: usize,
    pub layers: Vec<LayerDesc>,
    pub total_parameters: u64,
}

/// Builds the standard graph: stem 3x3 conv emitting `2 * growth_rate`
/// channels, then `stack_count` dense blocks with transitions between
/// consecutive blocks (none after the last), then BN-ReLU-globalpool-FC.
pub fn build_network(
    block: BlockSpec,
    stack_count: u32,
    input_shape: (usize, usize, usize),
    num_classes: usize,
) -> Result<NetworkGraph, BuildError> {
    build_network_with(block, stack_count, input_shape, num_classes, 1.0)
}

/// As [`build_network`] but with an explicit transition compression factor.
pub fn build_network_with(
    block: BlockSpec,
    stack_count: u32,
    input_shape: (usize, usize, usize),
    num_classes: usize,
    compression: f64,
) -> Result<NetworkGraph, BuildError> {
    if stack_count == 0 {
        return Err(BuildError::ZeroStack);
    }
    let (in_channels, height, width) = input_shape;
    let halvings = stack_count - 1;
    let divisor = 1usize
        .checked_shl(halvings)
        .filter(|d| height % d == 0 && width % d == 0 && height / d >= 2 && width / d >= 2)
        .ok_or(BuildError::SpatialExhausted {
            height,
            width,
            stack_count,
            halvings,
        })?;
    let _ = divisor;

    let growth = block.growth_rate as usize;
    let num_layers = block.num_layers as usize;
    let mut layers = Vec::new();
    let mut size = (height, width);
    let mut channels = in_channels;

    let conv3 = LayerKind::Conv {
        kernel: 3,
        stride: 1,
        padding: 1,
    };
    layers.push(LayerDesc {
        name: "stem.conv".into(),
        kind: conv3,
        in_channels: channels,
        out_channels: 2 * growth,
        in_size: size,
        out_size: size,
    });
    channels = 2 * growth;

    for stage in 0..stack_count as usize {
        for layer in 0..num_layers {
            // Dense concatenation: this layer sees the block input plus every
            // previous layer's growth_rate feature maps.
            let cat = channels + layer * growth;
            let prefix = format!("s{stage}.l{layer}");
            layers.push(LayerDesc {
                name: format!("{prefix}.bn"),
                kind: LayerKind::BatchNorm,
                in_channels: cat,
                out_channels: cat,
                in_size: size,
                out_size: size,
            });
            layers.push(LayerDesc {
                name: format!("{prefix}.relu"),
                kind: LayerKind::Relu,
                in_channels: cat,
                out_channels: cat,
                in_size: size,
                out_size: size,
            });
            layers.push(LayerDesc {
                name: format!("{prefix}.conv"),
                kind: conv3,
                in_channels: cat,
                out_channels: growth,
                in_size: size,
                out_size: size,
            });
        }
        channels += num_layers * growth;

        if stage + 1 < stack_count as usize {
            let out = ((channels as f64) * compression).floor().max(1.0) as usize;
            layers.push(LayerDesc {
                name: format!("s{stage}.trans.conv"),
                kind: LayerKind::Conv {
                    kernel: 1,
                    stride: 1,
                    padding: 0,
                },
                in_channels: channels,
                out_channels: out,
                in_size: size,
                out_size: size,
            });
            let pooled = (size.0 / 2, size.1 / 2);
            layers.push(LayerDesc {
                name: format!("s{stage}.trans.pool"),
                kind: LayerKind::AvgPool { kernel: 2, stride: 2 },
                in_channels: out,
                out_channels: out,
                in_size: size,
                out_size: pooled,
            });
            channels = out;
            size = pooled;
        }
    }

    layers.push(LayerDesc {
        name: "head.bn".into(),
        kind: LayerKind::BatchNorm,
        in_channels: channels,
        out_channels: channels,
        in_size: size,
        out_size: size,
    });
    layers.push(LayerDesc {
        name: "head.relu".into(),
        kind: LayerKind::Relu,
        in_channels: channels,
        out_channels: channels,
        in_size: size,
        out_size: size,
    });
    layers.push(LayerDesc {
        name: "head.pool".into(),
        kind: LayerKind::GlobalAvgPool,
        in_channels: channels,
        out_channels: channels,
        in_size: size,
        out_size: (1, 1),
    });
    layers.push(LayerDesc {
        name: "head.fc".into(),
        kind: LayerKind::FullyConnected,
        in_channels: channels,
        out_channels: num_classes,
        in_size: (1, 1),
        out_size: (1, 1),
    });

    let total_parameters = layers.iter().map(LayerDesc::parameter_count).sum();
    Ok(NetworkGraph {
        block,
        stack_count,
        compression,
        input_shape,
        num_classes,
        layers,
        total_parameters,
    })
}

/// Exact trainable scalar count of the graph.
pub fn count_parameters(graph: &NetworkGraph) -> u64 {
    graph.layers.iter().map(LayerDesc::parameter_count).sum()
}

impl NetworkGraph {
    /// Estimated activation memory at `batch_size`: every layer output is
    /// held once for the forward pass and once for its gradient.
    pub fn activation_bytes(&self, batch_size: usize) -> u64 {
        let per_example: u64 = self.layers.iter().map(LayerDesc::output_elements).sum();
        per_example * ELEMENT_BYTES * batch_size as u64 * 2
    }

    /// Channel count entering the classifier head.
    pub fn head_channels(&self) -> usize {
        self.layers
            .last()
            .map(|l| l.in_channels)
            .unwrap_or(0)
    }

    /// Human-readable summary, one layer per line.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "network: block {} stacked {}x, input {}x{}x{}, {} classes\n",
            self.block,
            self.stack_count,
            self.input_shape.0,
            self.input_shape.1,
            self.input_shape.2,
            self.num_classes
        ));
        for layer in &self.layers {
            out.push_str(&format!(
                "{:<16} {:<10} {:>5} -> {:<5} {:>3}x{:<3} -> {:>3}x{:<3} params {}\n",
                layer.name,
                layer.kind_label(),
                layer.in_channels,
                layer.out_channels,
                layer.in_size.0,
                layer.in_size.1,
                layer.out_size.0,
                layer.out_size.1,
                layer.parameter_count()
            ));
        }
        out.push_str(&format!("total parameters: {}\n", self.total_parameters));
        out
    }
}

/// True iff the graph fits both budget axes at the given batch size.
pub fn check_budget(graph: &NetworkGraph, budget: &MemoryBudget, batch_size: usize) -> bool {
    graph.total_parameters <= budget.max_parameters
        && graph.activation_bytes(batch_size) <= budget.max_activation_bytes
}
