//! Network assembly: declarative configuration, the three stock topologies,
//! weight binding, whole-clip and per-frame inference, and the conversion
//! that removes clip-mode padding in favour of residual delays.
//!
//! A configuration is a JSON-serializable description of a block stack; a
//! [`Model`] is that description bound to a [`WeightStore`]. Inference runs
//! either over a whole clip `[C, T, V, M]` ([`Model::forward_clip`]) or one
//! frame `[C, V, M]` at a time against a [`StreamState`]
//! ([`Model::forward_step`]). For an unpadded (continual) configuration under
//! the strict warm-up policy, every streamed prediction is bit-identical to
//! running the clip path over the frames seen so far.

use crate::blocks::{
    co_st_block_init, co_st_block_step, join_frames, split_frames, st_block_clip, AgcParams,
    AttentionScope, BlockParams, BlockResidual, BnParams, CoBlockState, GcParams, HeadParams,
    SpatialParams, SpatialResidual, SsaParams,
};
use crate::continual::{
    co_avgpool_step, co_pool_init, compute_delay, kernel_extent, network_stride, CoPoolState,
    WarmupPolicy,
};
use crate::error::{Error, Result};
use crate::graph::{build_skeleton, AdjacencySet, SkeletonGraph, SkeletonPreset, DEGREE_EPS};
use crate::io::WeightStore;
use crate::tensor::{matmul, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn default_one() -> usize {
    1
}

fn default_t_ref() -> usize {
    300
}

/// Skeleton topology reference inside a configuration.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphSpec {
    /// A named embedded topology: `"ntu25"` or `"openpose18"`.
    Preset(String),
    /// An inline topology (same schema as a custom skeleton JSON document).
    Custom {
        #[serde(rename = "V")]
        num_joints: usize,
        edges: Vec<(usize, usize)>,
        center: usize,
    },
}

/// How the clip-mode temporal convolution pads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingMode {
    /// Symmetric padding of `(extent − 1)/2` frames, preserving length at
    /// stride 1. Requires an odd effective kernel extent.
    Equal,
    /// No padding; the form required for streaming.
    Zero,
}

/// Skip connection kind around one block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualKind {
    None,
    Identity,
    Projection,
}

/// Spatial operator selection for one block.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SpatialKind {
    /// Graph convolution over the fixed partitioned adjacency.
    Gc,
    /// Adaptive graph convolution with learned offset and attention.
    Agc {
        #[serde(default)]
        attention_scope: AttentionScope,
    },
    /// Multi-head self-attention over vertices.
    Ssa { heads: usize },
}

/// One block of the stack.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpec {
    pub spatial: SpatialKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    #[serde(default = "default_one")]
    pub stride: usize,
    #[serde(default = "default_one")]
    pub dilation: usize,
    pub padding: PaddingMode,
    pub residual: ResidualKind,
    /// Explicit residual alignment in input frames. Omitted, it defaults to
    /// `extent − 1 − padding`, which keeps the block aligned with itself;
    /// conversion writes the value derived from the removed padding here.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual_delay: Option<usize>,
}

impl BlockSpec {
    /// Effective temporal extent `(K−1)·d + 1`.
    pub fn extent(&self) -> usize {
        kernel_extent(self.kernel, self.dilation)
    }

    /// Padding in frames implied by the padding mode.
    pub fn padding_frames(&self) -> usize {
        match self.padding {
            PaddingMode::Equal => (self.extent() - 1) / 2,
            PaddingMode::Zero => 0,
        }
    }

    /// Residual alignment in input frames (explicit or the self-consistent
    /// default).
    pub fn delay(&self) -> usize {
        self.residual_delay
            .unwrap_or(self.extent() - 1 - self.padding_frames())
    }
}

/// Classifier head options.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    /// Streaming pool window in emitted frames; defaults to
    /// `ceil(t_ref / network_stride)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool_window: Option<usize>,
}

/// Declarative description of a whole network.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub graph: GraphSpec,
    pub num_classes: usize,
    /// Reference clip length the streaming pool window is derived from.
    #[serde(default = "default_t_ref")]
    pub t_ref: usize,
    pub in_channels: usize,
    #[serde(default = "default_one")]
    pub persons: usize,
    /// Normalize raw inputs over the joint-coordinate channels before the
    /// first block.
    #[serde(default)]
    pub input_bn: bool,
    pub blocks: Vec<BlockSpec>,
    #[serde(default)]
    pub head: HeadSpec,
}

impl NetworkConfig {
    /// Parses a configuration from JSON and validates it.
    pub fn from_json(text: &str) -> Result<Self> {
        let config: NetworkConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("malformed configuration: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Checks every structural rule; all other entry points call this.
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Config("a network needs at least one block".into()));
        }
        if self.num_classes == 0 || self.in_channels == 0 || self.t_ref == 0 || self.persons == 0
        {
            return Err(Error::Config(
                "class count, input channels, reference length, and person count \
                 must be positive"
                    .into(),
            ));
        }
        if let Some(w) = self.head.pool_window {
            if w == 0 {
                return Err(Error::Config("pool window must be positive".into()));
            }
        }
        if let GraphSpec::Preset(name) = &self.graph {
            if name != "ntu25" && name != "openpose18" {
                return Err(Error::Config(format!(
                    "unknown skeleton preset '{name}' (expected 'ntu25' or 'openpose18')"
                )));
            }
        }
        let mut expect_in = self.in_channels;
        for (i, b) in self.blocks.iter().enumerate() {
            let at = |msg: String| Error::Config(format!("block {i}: {msg}"));
            if b.in_channels != expect_in {
                return Err(at(format!(
                    "expects {} input channels but receives {expect_in}",
                    b.in_channels
                )));
            }
            if b.out_channels == 0 || b.kernel == 0 || b.stride == 0 || b.dilation == 0 {
                return Err(at(
                    "channels, kernel, stride, and dilation must be positive".into(),
                ));
            }
            let extent = b.extent();
            if b.padding == PaddingMode::Equal && extent % 2 == 0 {
                return Err(at(format!(
                    "equal padding requires an odd effective kernel extent, got {extent}"
                )));
            }
            let p = b.padding_frames();
            let delay = b.delay();
            if delay < p || delay + p > extent - 1 {
                return Err(at(format!(
                    "residual delay {delay} must lie in [{p}, {}] for kernel extent \
                     {extent} and padding {p}",
                    extent - 1 - p
                )));
            }
            if b.residual == ResidualKind::Identity && b.in_channels != b.out_channels {
                return Err(at(
                    "identity residual requires matching channel counts".into(),
                ));
            }
            match &b.spatial {
                SpatialKind::Gc => {}
                SpatialKind::Agc { .. } => {
                    if b.out_channels % 4 != 0 {
                        return Err(at(format!(
                            "adaptive attention embeds into out_channels/4 channels; \
                             {} is not divisible by 4",
                            b.out_channels
                        )));
                    }
                }
                SpatialKind::Ssa { heads } => {
                    if *heads == 0 {
                        return Err(at("self-attention needs at least one head".into()));
                    }
                    if b.out_channels % heads != 0 {
                        return Err(at(format!(
                            "{} output channels do not split evenly over {heads} heads",
                            b.out_channels
                        )));
                    }
                }
            }
            expect_in = b.out_channels;
        }
        // Also validate the skeleton itself.
        self.skeleton()?;
        Ok(())
    }

    /// Builds the skeleton graph this configuration runs on.
    pub fn skeleton(&self) -> Result<SkeletonGraph> {
        match &self.graph {
            GraphSpec::Preset(name) => match name.as_str() {
                "ntu25" => build_skeleton(SkeletonPreset::Ntu25),
                "openpose18" => build_skeleton(SkeletonPreset::Openpose18),
                other => Err(Error::Config(format!("unknown skeleton preset '{other}'"))),
            },
            GraphSpec::Custom {
                num_joints,
                edges,
                center,
            } => build_skeleton(SkeletonPreset::Custom {
                num_joints: *num_joints,
                edges: edges.clone(),
                center: *center,
            }),
        }
    }

    /// Product of the block strides: one prediction per this many frames.
    pub fn network_stride(&self) -> usize {
        network_stride(&self.blocks.iter().map(|b| b.stride).collect::<Vec<_>>())
    }

    /// Channel count entering the classifier head.
    pub fn out_channels(&self) -> usize {
        self.blocks.last().map_or(self.in_channels, |b| b.out_channels)
    }

    /// Streaming pool window in emitted frames.
    pub fn pool_window(&self) -> usize {
        self.head
            .pool_window
            .unwrap_or_else(|| self.t_ref.div_ceil(self.network_stride()))
    }

    /// Whether this configuration can stream: no clip-mode padding anywhere
    /// and no attention scope that needs the whole clip.
    pub fn is_continual(&self) -> bool {
        self.blocks.iter().all(|b| {
            b.padding_frames() == 0
                && !matches!(
                    b.spatial,
                    SpatialKind::Agc {
                        attention_scope: AttentionScope::Global
                    }
                )
        })
    }

    /// Input frames consumed before the first prediction when streaming:
    /// `Σ_l (extent_l − 1 − padding_l) · Π_{m<l} stride_m`.
    pub fn total_delay(&self) -> usize {
        let mut cum = 1usize;
        let mut sum = 0usize;
        for b in &self.blocks {
            sum += (b.extent() - 1 - b.padding_frames()) * cum;
            cum *= b.stride;
        }
        sum
    }

    /// Minimum clip length that yields at least one prediction.
    pub fn min_clip_frames(&self) -> usize {
        let mut need = 1usize;
        for b in self.blocks.iter().rev() {
            need = (need - 1) * b.stride + b.extent() - 2 * b.padding_frames();
        }
        need
    }
}

/// Stock topologies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PresetKind {
    /// Fixed-adjacency graph convolution in every block.
    Stgcn,
    /// Adaptive graph convolution in every block.
    Agcn,
    /// Graph convolution in the first three blocks, vertex self-attention in
    /// the rest.
    Str,
}

impl std::str::FromStr for PresetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stgcn" => Ok(PresetKind::Stgcn),
            "agcn" => Ok(PresetKind::Agcn),
            "str" => Ok(PresetKind::Str),
            other => Err(Error::Config(format!(
                "unknown model '{other}' (expected 'stgcn', 'agcn', or 'str')"
            ))),
        }
    }
}

/// Execution variants of a preset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    /// Clip-mode original: equal padding, strides as published.
    Reg,
    /// Continual: padding removed in favour of residual delays.
    Co,
    /// Continual with all strides reduced to 1 (a prediction every frame).
    CoStar,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reg" => Ok(Variant::Reg),
            "co" => Ok(Variant::Co),
            "co_star" => Ok(Variant::CoStar),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected 'reg', 'co', or 'co_star')"
            ))),
        }
    }
}

/// Builds one of the stock 10-block configurations over the 25-joint
/// skeleton: channels 64/128/256, temporal kernel 9, strided at the two
/// channel increases (except `co_star`, which never strides).
pub fn preset(kind: PresetKind, variant: Variant) -> NetworkConfig {
    const PLAN: [(usize, usize, usize); 10] = [
        (3, 64, 1),
        (64, 64, 1),
        (64, 64, 1),
        (64, 64, 1),
        (64, 128, 2),
        (128, 128, 1),
        (128, 128, 1),
        (128, 256, 2),
        (256, 256, 1),
        (256, 256, 1),
    ];
    let kernel = 9usize;
    let reg_padding = (kernel - 1) / 2;
    let blocks = PLAN
        .iter()
        .enumerate()
        .map(|(i, &(c_in, c_out, stride))| {
            let spatial = match kind {
                PresetKind::Stgcn => SpatialKind::Gc,
                PresetKind::Agcn => SpatialKind::Agc {
                    attention_scope: if variant == Variant::Reg {
                        AttentionScope::Global
                    } else {
                        AttentionScope::Frame
                    },
                },
                PresetKind::Str => {
                    if i < 3 {
                        SpatialKind::Gc
                    } else {
                        SpatialKind::Ssa { heads: 8 }
                    }
                }
            };
            let residual = if i == 0 {
                ResidualKind::None
            } else if c_in != c_out {
                ResidualKind::Projection
            } else {
                ResidualKind::Identity
            };
            BlockSpec {
                spatial,
                in_channels: c_in,
                out_channels: c_out,
                kernel,
                stride: if variant == Variant::CoStar { 1 } else { stride },
                dilation: 1,
                padding: if variant == Variant::Reg {
                    PaddingMode::Equal
                } else {
                    PaddingMode::Zero
                },
                residual,
                residual_delay: if variant == Variant::Reg {
                    None
                } else {
                    Some(compute_delay(kernel, 1, reg_padding).expect("padding < extent"))
                },
            }
        })
        .collect();
    NetworkConfig {
        graph: GraphSpec::Preset("ntu25".into()),
        num_classes: 60,
        t_ref: 300,
        in_channels: 3,
        persons: 1,
        input_bn: true,
        blocks,
        head: HeadSpec::default(),
    }
}

/// Conversion outcome: what each block's padding became.
#[derive(Clone, Debug, serde::Serialize)]
pub struct BlockDelay {
    pub block: usize,
    pub kernel: usize,
    pub dilation: usize,
    /// Clip-mode padding the block had before conversion.
    pub padding_removed: usize,
    /// Residual delay the block carries afterwards.
    pub delay: usize,
}

/// Per-block delays, the whole network's delay, and any semantic warnings.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ConversionReport {
    pub block_delays: Vec<BlockDelay>,
    /// Input frames consumed before the first streamed prediction.
    pub total_delay: usize,
    pub warnings: Vec<String>,
}

/// Rewrites a configuration into a streamable one: padding is removed and
/// each block's residual alignment is pinned to the delay its padding
/// implied. `CoStar` additionally reduces every stride to 1. Converting an
/// already-converted configuration changes nothing.
pub fn convert(config: &NetworkConfig, target: Variant) -> Result<(NetworkConfig, ConversionReport)> {
    if target == Variant::Reg {
        return Err(Error::Config(
            "conversion targets the continual variants 'co' or 'co_star'".into(),
        ));
    }
    config.validate()?;
    let mut out = config.clone();
    let mut warnings = Vec::new();
    let mut block_delays = Vec::with_capacity(out.blocks.len());
    let mut reduced_stride = false;
    for (i, b) in out.blocks.iter_mut().enumerate() {
        let removed = b.padding_frames();
        let delay = match b.residual_delay {
            // Already pinned (an earlier conversion): keep it.
            Some(d) => d,
            None => compute_delay(b.kernel, b.dilation, removed)?,
        };
        b.padding = PaddingMode::Zero;
        b.residual_delay = Some(delay);
        if target == Variant::CoStar && b.stride > 1 {
            b.stride = 1;
            reduced_stride = true;
        }
        if let SpatialKind::Agc { attention_scope } = &mut b.spatial {
            if *attention_scope == AttentionScope::Global {
                *attention_scope = AttentionScope::Frame;
                warnings.push(format!(
                    "block {i}: attention scope switched from global to frame; streamed \
                     outputs will differ from the clip-mode original"
                ));
            }
        }
        block_delays.push(BlockDelay {
            block: i,
            kernel: b.kernel,
            dilation: b.dilation,
            padding_removed: removed,
            delay,
        });
    }
    if reduced_stride {
        warnings.push(
            "strides reduced to 1: a prediction is emitted every frame, and matching \
             the published accuracy of this variant requires fine-tuning"
                .into(),
        );
    }
    out.validate()?;
    let report = ConversionReport {
        block_delays,
        total_delay: out.total_delay(),
        warnings,
    };
    Ok((out, report))
}

/// One named parameter tensor: shape plus the uniform range its random
/// initialization draws from.
#[derive(Clone, Debug)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    lo: f32,
    hi: f32,
}

fn weight_spec(name: String, shape: Vec<usize>, fan_in: usize) -> TensorSpec {
    let limit = 1.0 / (fan_in as f32).sqrt();
    TensorSpec {
        name,
        shape,
        lo: -limit,
        hi: limit,
    }
}

fn push_bn_specs(specs: &mut Vec<TensorSpec>, prefix: &str, channels: usize) {
    for (field, lo, hi) in [
        ("gamma", 0.5, 1.5),
        ("beta", -0.5, 0.5),
        ("mean", -0.5, 0.5),
        ("var", 0.5, 1.5),
    ] {
        specs.push(TensorSpec {
            name: format!("{prefix}.{field}"),
            shape: vec![channels],
            lo,
            hi,
        });
    }
}

/// Enumerates every tensor the configuration names: this single listing
/// drives random initialization, weight binding, and the parameter count.
pub fn tensor_specs(config: &NetworkConfig) -> Result<Vec<TensorSpec>> {
    config.validate()?;
    let v = config.skeleton()?.num_joints();
    let mut specs = Vec::new();
    if config.input_bn {
        push_bn_specs(&mut specs, "input_bn", config.in_channels * v);
    }
    for (i, b) in config.blocks.iter().enumerate() {
        let pre = format!("blocks.{i}");
        let (c_in, c_out) = (b.in_channels, b.out_channels);
        match &b.spatial {
            SpatialKind::Gc => {
                for p in 0..crate::graph::NUM_SUBSETS {
                    specs.push(weight_spec(
                        format!("{pre}.spatial.w.{p}"),
                        vec![c_out, c_in],
                        c_in,
                    ));
                }
                for p in 0..crate::graph::NUM_SUBSETS {
                    specs.push(TensorSpec {
                        name: format!("{pre}.spatial.edge.{p}"),
                        shape: vec![v, v],
                        lo: 0.5,
                        hi: 1.5,
                    });
                }
            }
            SpatialKind::Agc { .. } => {
                let c_e = c_out / 4;
                for p in 0..crate::graph::NUM_SUBSETS {
                    specs.push(weight_spec(
                        format!("{pre}.spatial.w.{p}"),
                        vec![c_out, c_in],
                        c_in,
                    ));
                }
                for p in 0..crate::graph::NUM_SUBSETS {
                    specs.push(TensorSpec {
                        name: format!("{pre}.spatial.adapt.{p}"),
                        shape: vec![v, v],
                        lo: -0.1,
                        hi: 0.1,
                    });
                }
                for p in 0..crate::graph::NUM_SUBSETS {
                    specs.push(weight_spec(
                        format!("{pre}.spatial.theta.{p}"),
                        vec![c_e, c_in],
                        c_in,
                    ));
                }
                for p in 0..crate::graph::NUM_SUBSETS {
                    specs.push(weight_spec(
                        format!("{pre}.spatial.phi.{p}"),
                        vec![c_e, c_in],
                        c_in,
                    ));
                }
            }
            SpatialKind::Ssa { heads } => {
                let d = c_out / heads;
                for s in 0..*heads {
                    for proj in ["wq", "wk", "wv"] {
                        specs.push(weight_spec(
                            format!("{pre}.spatial.heads.{s}.{proj}"),
                            vec![d, c_in],
                            c_in,
                        ));
                    }
                }
                specs.push(weight_spec(
                    format!("{pre}.spatial.wo"),
                    vec![c_out, heads * d],
                    heads * d,
                ));
            }
        }
        push_bn_specs(&mut specs, &format!("{pre}.spatial.bn"), c_out);
        if c_in != c_out {
            specs.push(weight_spec(
                format!("{pre}.spatial.res"),
                vec![c_out, c_in],
                c_in,
            ));
        }
        specs.push(weight_spec(
            format!("{pre}.tcn.kernel"),
            vec![c_out, c_out, b.kernel],
            c_out * b.kernel,
        ));
        specs.push(weight_spec(
            format!("{pre}.tcn.bias"),
            vec![c_out],
            c_out * b.kernel,
        ));
        push_bn_specs(&mut specs, &format!("{pre}.tcn.bn"), c_out);
        if b.residual == ResidualKind::Projection {
            specs.push(weight_spec(format!("{pre}.res"), vec![c_out, c_in], c_in));
        }
    }
    let c_last = config.out_channels();
    specs.push(weight_spec(
        "head.fc.weight".into(),
        vec![config.num_classes, c_last],
        c_last,
    ));
    specs.push(weight_spec(
        "head.fc.bias".into(),
        vec![config.num_classes],
        c_last,
    ));
    Ok(specs)
}

/// Fills every tensor the configuration names with seeded uniform noise.
/// The same seed always produces the same store.
pub fn random_weights(config: &NetworkConfig, seed: u64) -> Result<WeightStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = WeightStore::new();
    for spec in tensor_specs(config)? {
        let numel: usize = spec.shape.iter().product();
        let data = (0..numel)
            .map(|_| rng.gen_range(spec.lo..spec.hi))
            .collect();
        store.insert(spec.name, Tensor::new(spec.shape, data)?)?;
    }
    Ok(store)
}

/// A configuration bound to its weights, ready to run.
pub struct Model {
    pub config: NetworkConfig,
    pub graph: SkeletonGraph,
    pub adj: AdjacencySet,
    input_bn: Option<BnParams>,
    blocks: Vec<BlockParams>,
    fc_weight: Tensor,
    fc_bias: Tensor,
}

fn fetch(store: &WeightStore, name: &str) -> Result<Tensor> {
    store
        .get(name)
        .cloned()
        .ok_or_else(|| Error::MissingTensor { name: name.into() })
}

fn fetch_bn(store: &WeightStore, prefix: &str) -> Result<BnParams> {
    Ok(BnParams {
        gamma: fetch(store, &format!("{prefix}.gamma"))?,
        beta: fetch(store, &format!("{prefix}.beta"))?,
        mean: fetch(store, &format!("{prefix}.mean"))?,
        var: fetch(store, &format!("{prefix}.var"))?,
    })
}

impl Model {
    /// Binds a configuration to a weight store, checking that every tensor
    /// the configuration names exists with exactly the declared shape.
    /// Tensors the configuration does not name are ignored with a warning.
    pub fn from_store(config: NetworkConfig, store: &WeightStore) -> Result<Model> {
        let specs = tensor_specs(&config)?;
        for spec in &specs {
            let tensor = store
                .get(&spec.name)
                .ok_or_else(|| Error::MissingTensor {
                    name: spec.name.clone(),
                })?;
            if tensor.shape() != spec.shape.as_slice() {
                return Err(Error::TensorShape {
                    name: spec.name.clone(),
                    expected: spec.shape.clone(),
                    found: tensor.shape().to_vec(),
                });
            }
        }
        let named: std::collections::BTreeSet<&str> =
            specs.iter().map(|s| s.name.as_str()).collect();
        for name in store.names() {
            if !named.contains(name) {
                log::warn!("weight store tensor '{name}' is not used by this configuration");
            }
        }

        let graph = config.skeleton()?;
        let adj = AdjacencySet::build(&graph, DEGREE_EPS)?;
        let input_bn = if config.input_bn {
            Some(fetch_bn(store, "input_bn")?)
        } else {
            None
        };
        let mut blocks = Vec::with_capacity(config.blocks.len());
        for (i, b) in config.blocks.iter().enumerate() {
            let pre = format!("blocks.{i}");
            let spatial_residual = if b.in_channels == b.out_channels {
                SpatialResidual::Identity
            } else {
                SpatialResidual::Projection(fetch(store, &format!("{pre}.spatial.res"))?)
            };
            let bn = fetch_bn(store, &format!("{pre}.spatial.bn"))?;
            let indexed = |stem: &str| -> Result<[Tensor; crate::graph::NUM_SUBSETS]> {
                let mut out = Vec::with_capacity(crate::graph::NUM_SUBSETS);
                for p in 0..crate::graph::NUM_SUBSETS {
                    out.push(fetch(store, &format!("{pre}.spatial.{stem}.{p}"))?);
                }
                Ok(out.try_into().expect("exactly NUM_SUBSETS tensors"))
            };
            let spatial = match &b.spatial {
                SpatialKind::Gc => SpatialParams::Gc(GcParams {
                    weight: indexed("w")?,
                    edge: indexed("edge")?,
                    bn,
                    residual: spatial_residual,
                }),
                SpatialKind::Agc { attention_scope } => SpatialParams::Agc {
                    params: AgcParams {
                        weight: indexed("w")?,
                        adapt: indexed("adapt")?,
                        theta: indexed("theta")?,
                        phi: indexed("phi")?,
                        bn,
                        residual: spatial_residual,
                    },
                    scope: *attention_scope,
                },
                SpatialKind::Ssa { heads } => {
                    let mut head_params = Vec::with_capacity(*heads);
                    for s in 0..*heads {
                        head_params.push(HeadParams {
                            wq: fetch(store, &format!("{pre}.spatial.heads.{s}.wq"))?,
                            wk: fetch(store, &format!("{pre}.spatial.heads.{s}.wk"))?,
                            wv: fetch(store, &format!("{pre}.spatial.heads.{s}.wv"))?,
                        });
                    }
                    SpatialParams::Ssa(SsaParams {
                        heads: head_params,
                        wo: fetch(store, &format!("{pre}.spatial.wo"))?,
                        bn,
                        residual: spatial_residual,
                    })
                }
            };
            let residual = match b.residual {
                ResidualKind::None => BlockResidual::None,
                ResidualKind::Identity => BlockResidual::Identity,
                ResidualKind::Projection => {
                    BlockResidual::Projection(fetch(store, &format!("{pre}.res"))?)
                }
            };
            blocks.push(BlockParams {
                spatial,
                tcn_kernel: fetch(store, &format!("{pre}.tcn.kernel"))?,
                tcn_bias: fetch(store, &format!("{pre}.tcn.bias"))?,
                tcn_bn: fetch_bn(store, &format!("{pre}.tcn.bn"))?,
                stride: b.stride,
                dilation: b.dilation,
                padding: b.padding_frames(),
                residual,
                residual_delay: b.delay(),
            });
        }
        Ok(Model {
            fc_weight: fetch(store, "head.fc.weight")?,
            fc_bias: fetch(store, "head.fc.bias")?,
            config,
            graph,
            adj,
            input_bn,
            blocks,
        })
    }

    /// Normalizes one raw frame `[C, V]` over its `C·V` input channels.
    fn apply_input_bn(&self, frame: &Tensor) -> Result<Tensor> {
        match &self.input_bn {
            None => Ok(frame.clone()),
            Some(bn) => {
                let shape = frame.shape().to_vec();
                let flat = frame.clone().reshape(vec![frame.numel(), 1])?;
                bn.apply(&flat)?.reshape(shape)
            }
        }
    }

    /// Mean over vertices, `[C, V] → [C]`, vertex-ascending accumulation.
    fn vertex_mean(frame: &Tensor) -> Tensor {
        let &[c, v] = frame.shape() else {
            unreachable!("block outputs are [C, V]")
        };
        let mut out = vec![0.0f32; c];
        for (ci, slot) in out.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for vi in 0..v {
                acc += frame.data()[ci * v + vi];
            }
            *slot = acc / v as f32;
        }
        Tensor::new(vec![c], out).expect("positive dims")
    }

    /// Classifier: `W·pooled + b`, shared verbatim by both modes.
    fn head_logits(&self, pooled: &Tensor) -> Result<Tensor> {
        let c = pooled.numel();
        let y = matmul(&self.fc_weight, &pooled.clone().reshape(vec![c, 1])?)?;
        let mut data = y.data().to_vec();
        for (d, b) in data.iter_mut().zip(self.fc_bias.data()) {
            *d += b;
        }
        Tensor::new(vec![self.config.num_classes], data)
    }

    /// Extracts person `m` of a clip `[C, T, V, M]` as `[C, T, V]`.
    fn person_clip(clip: &Tensor, m: usize) -> Tensor {
        let &[c, t, v, persons] = clip.shape() else {
            unreachable!("validated by forward_clip")
        };
        let mut data = Vec::with_capacity(c * t * v);
        for ci in 0..c {
            for ti in 0..t {
                for vi in 0..v {
                    data.push(clip.data()[((ci * t + ti) * v + vi) * persons + m]);
                }
            }
        }
        Tensor::new(vec![c, t, v], data).expect("positive dims")
    }

    /// Runs the whole clip `[C, T, V, M]` to one logit vector `[num_classes]`.
    ///
    /// Any person count `M ≥ 1` is accepted; persons run independently and
    /// their pooled features are averaged.
    pub fn forward_clip(&self, clip: &Tensor) -> Result<Tensor> {
        let &[c, t, v, m] = clip.shape() else {
            return Err(Error::Dim(format!(
                "clip must be [C, T, V, M], got {:?}",
                clip.shape()
            )));
        };
        if c != self.config.in_channels {
            return Err(Error::Dim(format!(
                "clip has {c} channels, the network expects {}",
                self.config.in_channels
            )));
        }
        if v != self.graph.num_joints() {
            return Err(Error::Dim(format!(
                "clip has {v} joints, the skeleton has {}",
                self.graph.num_joints()
            )));
        }
        let min = self.config.min_clip_frames();
        if t < min {
            return Err(Error::Dim(format!(
                "clip of {t} frames is too short: this configuration needs at least \
                 {min} to produce a prediction"
            )));
        }
        let mut person_mean: Option<Tensor> = None;
        for mi in 0..m {
            let person = Self::person_clip(clip, mi);
            let mut x = if self.input_bn.is_some() {
                let frames = split_frames(&person)?;
                let normed: Vec<Tensor> = frames
                    .iter()
                    .map(|f| self.apply_input_bn(f))
                    .collect::<Result<_>>()?;
                join_frames(&normed)?
            } else {
                person
            };
            for params in &self.blocks {
                x = st_block_clip(&x, &self.adj, params)?.ok_or_else(|| {
                    Error::Dim(format!(
                        "clip of {t} frames is too short: this configuration needs at \
                         least {min} to produce a prediction"
                    ))
                })?;
            }
            // Pool: per-frame vertex mean, then frame-ascending temporal mean —
            // the identical fold the streaming pool performs.
            let frames = split_frames(&x)?;
            let channels = x.shape()[0];
            let mut acc = Tensor::zeros(&[channels]);
            for frame in &frames {
                let vm = Self::vertex_mean(frame);
                for (a, &b) in acc.data_mut().iter_mut().zip(vm.data()) {
                    *a += b;
                }
            }
            let len = frames.len() as f32;
            for a in acc.data_mut() {
                *a /= len;
            }
            person_mean = Some(match person_mean {
                None => acc,
                Some(prev) => {
                    let mut sum = prev;
                    for (a, &b) in sum.data_mut().iter_mut().zip(acc.data()) {
                        *a += b;
                    }
                    sum
                }
            });
        }
        let mut pooled = person_mean.expect("at least one person");
        for a in pooled.data_mut() {
            *a /= m as f32;
        }
        self.head_logits(&pooled)
    }

    /// Creates streaming state. Fails on configurations that still pad or
    /// that use clip-global attention — convert those first.
    pub fn init_stream(&self, policy: WarmupPolicy) -> Result<StreamState> {
        if !self.config.is_continual() {
            return Err(Error::Mode(
                "this configuration is clip-only (padded temporal convolutions or \
                 clip-global attention); run the conversion to a continual variant \
                 first"
                    .into(),
            ));
        }
        let v = self.graph.num_joints();
        let mut persons = Vec::with_capacity(self.config.persons);
        for _ in 0..self.config.persons {
            let mut block_states = Vec::with_capacity(self.blocks.len());
            for params in &self.blocks {
                block_states.push(co_st_block_init(params, v, policy)?);
            }
            persons.push(PersonState {
                blocks: block_states,
                pool: co_pool_init(self.config.pool_window(), self.config.out_channels())?,
            });
        }
        Ok(StreamState {
            policy,
            frames_seen: 0,
            persons,
        })
    }

    /// Feeds one frame `[C, V, M]`; `M` must equal the configured person
    /// count. Returns a prediction when the network emits on this frame.
    pub fn forward_step(
        &self,
        state: &mut StreamState,
        frame: &Tensor,
    ) -> Result<Option<Prediction>> {
        let &[c, v, m] = frame.shape() else {
            return Err(Error::Dim(format!(
                "stream frame must be [C, V, M], got {:?}",
                frame.shape()
            )));
        };
        if c != self.config.in_channels || v != self.graph.num_joints() {
            return Err(Error::Dim(format!(
                "stream frame is [{c}, {v}, _], the network expects [{}, {}, _]",
                self.config.in_channels,
                self.graph.num_joints()
            )));
        }
        if m != state.persons.len() {
            return Err(Error::Dim(format!(
                "stream frame carries {m} persons, the stream was initialized for {}",
                state.persons.len()
            )));
        }
        state.frames_seen += 1;
        let mut pooled_persons: Vec<Option<Tensor>> = Vec::with_capacity(m);
        for (mi, person) in state.persons.iter_mut().enumerate() {
            // Gather this person's frame [C, V].
            let mut data = Vec::with_capacity(c * v);
            for ci in 0..c {
                for vi in 0..v {
                    data.push(frame.data()[(ci * v + vi) * m + mi]);
                }
            }
            let mut x = Some(self.apply_input_bn(&Tensor::new(vec![c, v], data)?)?);
            for (params, block_state) in self.blocks.iter().zip(person.blocks.iter_mut()) {
                match x {
                    None => break,
                    Some(input) => {
                        x = co_st_block_step(params, block_state, &input, &self.adj)?;
                    }
                }
            }
            pooled_persons.push(match x {
                None => None,
                Some(y) => Some(co_avgpool_step(&mut person.pool, &Self::vertex_mean(&y))?),
            });
        }
        let emitted = pooled_persons.iter().filter(|p| p.is_some()).count();
        if emitted == 0 {
            return Ok(None);
        }
        if emitted != m {
            return Err(Error::Config(
                "internal error: persons of one stream emitted out of lockstep".into(),
            ));
        }
        let mut mean: Option<Tensor> = None;
        for pooled in pooled_persons.into_iter().flatten() {
            mean = Some(match mean {
                None => pooled,
                Some(prev) => {
                    let mut sum = prev;
                    for (a, &b) in sum.data_mut().iter_mut().zip(pooled.data()) {
                        *a += b;
                    }
                    sum
                }
            });
        }
        let mut pooled = mean.expect("emitted > 0");
        for a in pooled.data_mut() {
            *a /= m as f32;
        }
        Ok(Some(Prediction {
            logits: self.head_logits(&pooled)?,
            frame_index: state.frames_seen - 1,
        }))
    }
}

/// One streamed prediction: logits plus the 0-based index of the newest
/// input frame that produced it.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub logits: Tensor,
    pub frame_index: u64,
}

struct PersonState {
    blocks: Vec<CoBlockState>,
    pool: CoPoolState,
}

/// All mutable state of one input stream.
pub struct StreamState {
    policy: WarmupPolicy,
    frames_seen: u64,
    persons: Vec<PersonState>,
}

impl StreamState {
    pub fn policy(&self) -> WarmupPolicy {
        self.policy
    }

    pub fn frames_seen(&self) -> u64 {
        self.frames_seen
    }

    /// Steady-state scalar footprint across persons: convolution rings,
    /// residual delay lines, and the pooling window.
    pub fn state_scalars(&self) -> usize {
        self.persons
            .iter()
            .map(|p| {
                p.blocks
                    .iter()
                    .map(CoBlockState::state_scalars)
                    .sum::<usize>()
                    + p.pool.state_scalars()
            })
            .sum()
    }

    /// Scalars currently held (delay lines and pools fill during warm-up;
    /// afterwards this never exceeds [`Self::state_scalars`]).
    pub fn resident_scalars(&self) -> usize {
        self.persons
            .iter()
            .map(|p| {
                p.blocks
                    .iter()
                    .map(CoBlockState::resident_scalars)
                    .sum::<usize>()
                    + p.pool.resident_scalars()
            })
            .sum()
    }

    /// Steady-state footprint in bytes (4 bytes per scalar).
    pub fn state_bytes(&self) -> usize {
        self.state_scalars() * 4
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::argmax;

    fn tiny_graph_spec() -> GraphSpec {
        GraphSpec::Custom {
            num_joints: 5,
            edges: vec![(0, 1), (1, 2), (2, 3), (3, 4)],
            center: 2,
        }
    }

    fn tiny_block(
        spatial: SpatialKind,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: PaddingMode,
        residual: ResidualKind,
    ) -> BlockSpec {
        BlockSpec {
            spatial,
            in_channels: c_in,
            out_channels: c_out,
            kernel,
            stride,
            dilation: 1,
            padding,
            residual,
            residual_delay: None,
        }
    }

    /// Three-block mixed-operator network, streamable as written.
    fn tiny_co_config(persons: usize) -> NetworkConfig {
        NetworkConfig {
            graph: tiny_graph_spec(),
            num_classes: 7,
            t_ref: 64,
            in_channels: 3,
            persons,
            input_bn: true,
            blocks: vec![
                tiny_block(SpatialKind::Gc, 3, 8, 5, 1, PaddingMode::Zero, ResidualKind::None),
                tiny_block(
                    SpatialKind::Agc {
                        attention_scope: AttentionScope::Frame,
                    },
                    8,
                    8,
                    5,
                    2,
                    PaddingMode::Zero,
                    ResidualKind::Identity,
                ),
                tiny_block(
                    SpatialKind::Ssa { heads: 2 },
                    8,
                    12,
                    3,
                    1,
                    PaddingMode::Zero,
                    ResidualKind::Projection,
                ),
            ],
            head: HeadSpec::default(),
        }
    }

    /// The same topology in clip form (equal padding, global attention).
    fn tiny_reg_config() -> NetworkConfig {
        let mut config = tiny_co_config(1);
        for b in &mut config.blocks {
            b.padding = PaddingMode::Equal;
            if let SpatialKind::Agc { attention_scope } = &mut b.spatial {
                *attention_scope = AttentionScope::Global;
            }
        }
        config
    }

    fn stream_frames(clip: &Tensor) -> Vec<Tensor> {
        let &[c, t, v, m] = clip.shape() else { panic!() };
        (0..t)
            .map(|ti| {
                let mut data = Vec::with_capacity(c * v * m);
                for ci in 0..c {
                    for vi in 0..v {
                        for mi in 0..m {
                            data.push(clip.get(&[ci, ti, vi, mi]));
                        }
                    }
                }
                Tensor::new(vec![c, v, m], data).unwrap()
            })
            .collect()
    }

    fn prefix_clip(clip: &Tensor, len: usize) -> Tensor {
        let &[c, t, v, m] = clip.shape() else { panic!() };
        assert!(len <= t);
        let mut data = Vec::with_capacity(c * len * v * m);
        for ci in 0..c {
            for ti in 0..len {
                for vi in 0..v {
                    for mi in 0..m {
                        data.push(clip.get(&[ci, ti, vi, mi]));
                    }
                }
            }
        }
        Tensor::new(vec![c, len, v, m], data).unwrap()
    }

    fn random_clip(seed: u64, c: usize, t: usize, v: usize, m: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..c * t * v * m)
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect();
        Tensor::new(vec![c, t, v, m], data).unwrap()
    }

    #[test]
    fn presets_validate_and_describe_the_stock_shapes() {
        for kind in [PresetKind::Stgcn, PresetKind::Agcn, PresetKind::Str] {
            for variant in [Variant::Reg, Variant::Co, Variant::CoStar] {
                let config = preset(kind, variant);
                config.validate().unwrap();
                assert_eq!(config.blocks.len(), 10);
                assert_eq!(config.out_channels(), 256);
                match variant {
                    Variant::Reg => {
                        assert_eq!(config.network_stride(), 4);
                        assert!(!config.is_continual());
                    }
                    Variant::Co => {
                        assert_eq!(config.network_stride(), 4);
                        assert!(config.is_continual());
                        assert_eq!(config.pool_window(), 75);
                    }
                    Variant::CoStar => {
                        assert_eq!(config.network_stride(), 1);
                        assert!(config.is_continual());
                        assert_eq!(config.pool_window(), 300);
                    }
                }
            }
        }
    }

    #[test]
    fn config_json_round_trips() {
        let config = preset(PresetKind::Agcn, Variant::Co);
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back = NetworkConfig::from_json(&text).unwrap();
        assert_eq!(back, config);
    }

    #[test]
    fn config_rejects_unknown_fields_and_bad_chains() {
        let err = NetworkConfig::from_json(r#"{"graph":{"preset":"ntu25"},"num_classes":5,"in_channels":3,"blocks":[],"bogus":1}"#)
            .unwrap_err();
        assert!(err.to_string().contains("malformed configuration"));

        let mut config = tiny_co_config(1);
        config.blocks[1].in_channels = 9;
        let msg = config.validate().unwrap_err().to_string();
        assert!(msg.contains("block 1"), "unexpected message: {msg}");
    }

    #[test]
    fn total_delay_accumulates_by_upstream_stride() {
        let mk = |blocks: Vec<BlockSpec>| NetworkConfig {
            graph: tiny_graph_spec(),
            num_classes: 4,
            t_ref: 64,
            in_channels: 3,
            persons: 1,
            input_bn: false,
            blocks,
            head: HeadSpec::default(),
        };
        let b = |c_in: usize, stride: usize| {
            tiny_block(
                SpatialKind::Gc,
                c_in,
                8,
                9,
                stride,
                PaddingMode::Zero,
                if c_in == 8 {
                    ResidualKind::Identity
                } else {
                    ResidualKind::None
                },
            )
        };
        assert_eq!(mk(vec![b(3, 1)]).total_delay(), 8);
        assert_eq!(mk(vec![b(3, 1), b(8, 1)]).total_delay(), 16);
        assert_eq!(mk(vec![b(3, 1), b(8, 1), b(8, 1)]).total_delay(), 24);
        // A stride doubles the input frames every later block consumes.
        assert_eq!(mk(vec![b(3, 2), b(8, 1)]).total_delay(), 8 + 16);
        // The ten-block stock plan: 8·(1+1+1+1+1+2+2+2+4+4).
        assert_eq!(preset(PresetKind::Stgcn, Variant::Co).total_delay(), 152);
    }

    #[test]
    fn missing_or_misshapen_tensors_are_reported_by_name() {
        let config = tiny_co_config(1);
        let store = random_weights(&config, 3).unwrap();
        Model::from_store(config.clone(), &store).unwrap();

        for spec in tensor_specs(&config).unwrap() {
            let mut altered = WeightStore::new();
            for (name, tensor) in store.iter() {
                if name != spec.name {
                    altered.insert(name, tensor.clone()).unwrap();
                }
            }
            match Model::from_store(config.clone(), &altered).err() {
                Some(Error::MissingTensor { name }) => assert_eq!(name, spec.name),
                other => panic!("expected MissingTensor for {}, got {other:?}", spec.name),
            }
        }

        let mut altered = WeightStore::new();
        for (name, tensor) in store.iter() {
            if name == "head.fc.bias" {
                altered.insert(name, Tensor::zeros(&[3])).unwrap();
            } else {
                altered.insert(name, tensor.clone()).unwrap();
            }
        }
        match Model::from_store(config, &altered).err() {
            Some(Error::TensorShape { name, .. }) => assert_eq!(name, "head.fc.bias"),
            other => panic!("expected TensorShape, got {other:?}"),
        }
    }

    #[test]
    fn streamed_predictions_equal_clip_prefixes_bitwise() {
        for persons in [1usize, 2] {
            let config = tiny_co_config(persons);
            let store = random_weights(&config, 11).unwrap();
            let model = Model::from_store(config.clone(), &store).unwrap();
            let clip = random_clip(12, 3, 48, 5, persons);
            let mut state = model.init_stream(WarmupPolicy::Strict).unwrap();
            let mut predictions = 0usize;
            for (ti, frame) in stream_frames(&clip).iter().enumerate() {
                if let Some(pred) = model.forward_step(&mut state, frame).unwrap() {
                    assert_eq!(pred.frame_index, ti as u64);
                    let want = model.forward_clip(&prefix_clip(&clip, ti + 1)).unwrap();
                    for (a, b) in pred.logits.data().iter().zip(want.data()) {
                        assert_eq!(a.to_bits(), b.to_bits(), "persons={persons} frame={ti}");
                    }
                    predictions += 1;
                }
            }
            assert!(predictions > 0);
        }
    }

    #[test]
    fn first_emission_lands_on_total_delay_then_every_network_stride() {
        let config = tiny_co_config(1);
        let store = random_weights(&config, 21).unwrap();
        let model = Model::from_store(config.clone(), &store).unwrap();
        let clip = random_clip(22, 3, 48, 5, 1);
        let mut state = model.init_stream(WarmupPolicy::Strict).unwrap();
        let mut indices = Vec::new();
        for frame in stream_frames(&clip) {
            if let Some(pred) = model.forward_step(&mut state, &frame).unwrap() {
                indices.push(pred.frame_index as usize);
            }
        }
        let first = config.total_delay();
        let stride = config.network_stride();
        let want: Vec<usize> = (0..indices.len()).map(|i| first + i * stride).collect();
        assert_eq!(indices, want);
    }

    #[test]
    fn zeros_policy_emits_from_the_first_frame() {
        let config = tiny_co_config(1);
        let store = random_weights(&config, 31).unwrap();
        let model = Model::from_store(config.clone(), &store).unwrap();
        let clip = random_clip(32, 3, 12, 5, 1);
        let mut state = model.init_stream(WarmupPolicy::Zeros).unwrap();
        let mut indices = Vec::new();
        for frame in stream_frames(&clip) {
            if let Some(pred) = model.forward_step(&mut state, &frame).unwrap() {
                indices.push(pred.frame_index as usize);
            }
        }
        let stride = config.network_stride();
        let want: Vec<usize> = (0..indices.len()).map(|i| i * stride).collect();
        assert_eq!(indices, want);
        assert_eq!(indices.first(), Some(&0));
    }

    #[test]
    fn padded_configs_refuse_to_stream() {
        let config = tiny_reg_config();
        let store = random_weights(&config, 41).unwrap();
        let model = Model::from_store(config, &store).unwrap();
        match model.init_stream(WarmupPolicy::Strict).err() {
            Some(Error::Mode(_)) => {}
            other => panic!("expected a mode error, got {other:?}"),
        }
    }

    #[test]
    fn duplicated_person_matches_single_person() {
        let config = tiny_co_config(1);
        let store = random_weights(&config, 51).unwrap();
        let model = Model::from_store(config, &store).unwrap();
        let clip = random_clip(52, 3, 40, 5, 1);
        let &[c, t, v, _] = clip.shape() else { panic!() };
        let mut doubled = Vec::with_capacity(c * t * v * 2);
        for ci in 0..c {
            for ti in 0..t {
                for vi in 0..v {
                    let val = clip.get(&[ci, ti, vi, 0]);
                    doubled.push(val);
                    doubled.push(val);
                }
            }
        }
        let doubled = Tensor::new(vec![c, t, v, 2], doubled).unwrap();
        let single = model.forward_clip(&clip).unwrap();
        let both = model.forward_clip(&doubled).unwrap();
        for (a, b) in single.data().iter().zip(both.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn person_order_does_not_change_the_prediction() {
        let config = tiny_co_config(2);
        let store = random_weights(&config, 61).unwrap();
        let model = Model::from_store(config, &store).unwrap();
        let clip = random_clip(62, 3, 40, 5, 2);
        let &[c, t, v, m] = clip.shape() else { panic!() };
        let mut swapped = Vec::with_capacity(clip.numel());
        for ci in 0..c {
            for ti in 0..t {
                for vi in 0..v {
                    for mi in (0..m).rev() {
                        swapped.push(clip.get(&[ci, ti, vi, mi]));
                    }
                }
            }
        }
        let swapped = Tensor::new(vec![c, t, v, m], swapped).unwrap();
        let a = model.forward_clip(&clip).unwrap();
        let b = model.forward_clip(&swapped).unwrap();
        assert_eq!(argmax(&a), argmax(&b));
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn conversion_pins_delays_and_is_idempotent() {
        let config = tiny_reg_config();
        let (co, report) = convert(&config, Variant::Co).unwrap();
        assert!(co.is_continual());
        // Kernel 5 equal padding 2 → delay 2; kernel 3 equal padding 1 → 1.
        let delays: Vec<usize> = report.block_delays.iter().map(|d| d.delay).collect();
        assert_eq!(delays, vec![2, 2, 1]);
        let removed: Vec<usize> = report
            .block_delays
            .iter()
            .map(|d| d.padding_removed)
            .collect();
        assert_eq!(removed, vec![2, 2, 1]);
        assert_eq!(report.total_delay, co.total_delay());
        // The global-attention block reports its scope switch.
        assert!(report.warnings.iter().any(|w| w.contains("attention scope")));

        let (again, report2) = convert(&co, Variant::Co).unwrap();
        assert_eq!(again, co);
        assert!(report2.warnings.is_empty());

        let (star, report3) = convert(&config, Variant::CoStar).unwrap();
        assert_eq!(star.network_stride(), 1);
        assert!(report3.warnings.iter().any(|w| w.contains("fine-tuning")));
        // Stride reduction commutes with the co conversion.
        let (star_via_co, _) = convert(&co, Variant::CoStar).unwrap();
        assert_eq!(star, star_via_co);
    }

    #[test]
    fn converted_network_streams_bitwise_like_its_own_clip_form() {
        let (co, _) = convert(&tiny_reg_config(), Variant::Co).unwrap();
        let store = random_weights(&co, 71).unwrap();
        let model = Model::from_store(co, &store).unwrap();
        let clip = random_clip(72, 3, 48, 5, 1);
        let mut state = model.init_stream(WarmupPolicy::Strict).unwrap();
        let mut checked = 0usize;
        for (ti, frame) in stream_frames(&clip).iter().enumerate() {
            if let Some(pred) = model.forward_step(&mut state, frame).unwrap() {
                let want = model.forward_clip(&prefix_clip(&clip, ti + 1)).unwrap();
                for (a, b) in pred.logits.data().iter().zip(want.data()) {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn deterministic_weights_reproduce_exactly() {
        let config = tiny_co_config(1);
        let a = random_weights(&config, 123).unwrap();
        let b = random_weights(&config, 123).unwrap();
        assert_eq!(a, b);
        let c = random_weights(&config, 124).unwrap();
        assert_ne!(a, c);
    }

    /// Fixed-seed logits pinned to committed bits. The network is restricted
    /// to operators whose arithmetic (add, mul, div, sqrt, max) is exactly
    /// rounded under IEEE-754, so the bits are stable across platforms.
    #[test]
    fn golden_clip_logits_are_bit_stable() {
        let config = NetworkConfig {
            graph: tiny_graph_spec(),
            num_classes: 7,
            t_ref: 16,
            in_channels: 3,
            persons: 1,
            input_bn: true,
            blocks: vec![
                tiny_block(SpatialKind::Gc, 3, 8, 3, 1, PaddingMode::Zero, ResidualKind::None),
                tiny_block(
                    SpatialKind::Gc,
                    8,
                    8,
                    3,
                    2,
                    PaddingMode::Zero,
                    ResidualKind::Identity,
                ),
            ],
            head: HeadSpec::default(),
        };
        let store = random_weights(&config, 7).unwrap();
        let model = Model::from_store(config, &store).unwrap();
        let clip = random_clip(8, 3, 16, 5, 1);
        let logits = model.forward_clip(&clip).unwrap();
        let hex: Vec<String> = logits
            .data()
            .iter()
            .map(|v| format!("{:08x}", v.to_bits()))
            .collect();
        let golden = include_str!("../tests/data/golden_clip_logits.hex");
        let golden: Vec<&str> = golden.split_whitespace().collect();
        assert!(
            !golden.is_empty(),
            "golden file is empty; computed bits:\n{}",
            hex.join("\n")
        );
        assert_eq!(hex.len(), golden.len(), "logit count changed");
        for (i, (got, want)) in hex.iter().zip(&golden).enumerate() {
            assert_eq!(got, *want, "logit {i} drifted");
        }
    }

    #[test]
    fn stream_state_census_is_flat_and_matches_structure() {
        let config = tiny_co_config(2);
        let store = random_weights(&config, 81).unwrap();
        let model = Model::from_store(config.clone(), &store).unwrap();
        let state = model.init_stream(WarmupPolicy::Strict).unwrap();
        // Per person: conv rings (K_eff−1)·C_out·V, delay lines delay·C_out·V
        // for blocks with a skip path, pool window + running sum.
        let v = 5;
        let per_person = (4 * 8 * v) + (4 * 8 * v + 4 * 8 * v) + (2 * 12 * v + 2 * 12 * v)
            + (config.pool_window() * 12 + 12);
        assert_eq!(state.state_scalars(), 2 * per_person);
        assert_eq!(state.state_bytes(), state.state_scalars() * 4);
    }
}
