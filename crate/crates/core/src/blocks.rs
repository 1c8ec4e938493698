//! Spatio-temporal blocks: a per-frame spatial operator feeding a strided
//! temporal convolution, with batch normalization and residual connections.
//!
//! Three spatial operators are provided, all mapping one frame `[C_in, V]` to
//! `[C_out, V]`:
//!
//! * [`gc_forward`] — graph convolution over fixed partitioned adjacency with
//!   learned edge weighting,
//! * [`agc_forward`] — adaptive graph convolution that adds a learned global
//!   offset and a data-dependent attention matrix per partition subset,
//! * [`ssa_forward`] — multi-head self-attention over vertices.
//!
//! A block runs in two modes that produce bit-identical outputs on the frames
//! both emit: [`st_block_clip`] sweeps a whole sequence, while
//! [`co_st_block_step`] consumes one frame at a time, keeping only the
//! temporal convolution's partial sums and a short residual delay line.

use crate::continual::{
    co_conv_init, co_conv_step, delay_step, kernel_extent, temporal_conv_clip, CoConvState,
    DelayLine, WarmupPolicy,
};
use crate::error::{Error, Result};
use crate::graph::{AdjacencySet, NUM_SUBSETS};
use crate::tensor::{add, batchnorm_inference, matmul, mul_elem, relu, softmax_rows, Tensor, BN_EPS};

/// Inference-mode batch-normalization parameters for one channel axis.
#[derive(Clone, Debug)]
pub struct BnParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub mean: Tensor,
    pub var: Tensor,
}

impl BnParams {
    /// Normalizes over the leading (channel) dimension of `x`.
    pub fn apply(&self, x: &Tensor) -> Result<Tensor> {
        batchnorm_inference(x, &self.gamma, &self.beta, &self.mean, &self.var, BN_EPS)
    }
}

/// Skip connection inside a spatial operator.
#[derive(Clone, Debug)]
pub enum SpatialResidual {
    /// Pass the input through unchanged (requires matching channel counts).
    Identity,
    /// 1×1 projection `[C_out, C_in]` applied per vertex.
    Projection(Tensor),
}

impl SpatialResidual {
    fn apply(&self, h: &Tensor) -> Result<Tensor> {
        match self {
            SpatialResidual::Identity => Ok(h.clone()),
            SpatialResidual::Projection(w) => matmul(w, h),
        }
    }
}

/// Parameters of the fixed-adjacency graph convolution.
#[derive(Clone, Debug)]
pub struct GcParams {
    /// Per-subset channel mixing `[C_out, C_in]`.
    pub weight: [Tensor; NUM_SUBSETS],
    /// Per-subset learned edge importance `[V, V]`, multiplied elementwise
    /// into the normalized adjacency.
    pub edge: [Tensor; NUM_SUBSETS],
    pub bn: BnParams,
    pub residual: SpatialResidual,
}

/// Parameters of the adaptive graph convolution.
#[derive(Clone, Debug)]
pub struct AgcParams {
    /// Per-subset channel mixing `[C_out, C_in]`.
    pub weight: [Tensor; NUM_SUBSETS],
    /// Learned global adjacency offset `[V, V]`, added to the normalized
    /// adjacency (shared across inputs).
    pub adapt: [Tensor; NUM_SUBSETS],
    /// Query-side embedding `[C_e, C_in]` of the attention branch.
    pub theta: [Tensor; NUM_SUBSETS],
    /// Key-side embedding `[C_e, C_in]` of the attention branch.
    pub phi: [Tensor; NUM_SUBSETS],
    pub bn: BnParams,
    pub residual: SpatialResidual,
}

/// Where the adaptive attention matrices are computed from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionScope {
    /// Attention logits are summed over every frame of the clip before the
    /// softmax; one matrix serves the whole clip. Requires clip mode.
    #[default]
    Global,
    /// Each frame computes its own attention matrix; streamable, and the form
    /// used for clip/step equivalence.
    Frame,
}

/// One attention head's projections, each `[d, C_in]`.
#[derive(Clone, Debug)]
pub struct HeadParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

/// Parameters of vertex self-attention.
#[derive(Clone, Debug)]
pub struct SsaParams {
    pub heads: Vec<HeadParams>,
    /// Output mixing `[C_out, S·d_v]` applied to the concatenated heads.
    pub wo: Tensor,
    pub bn: BnParams,
    pub residual: SpatialResidual,
}

/// The spatial operator of a block.
#[derive(Clone, Debug)]
pub enum SpatialParams {
    Gc(GcParams),
    Agc {
        params: AgcParams,
        scope: AttentionScope,
    },
    Ssa(SsaParams),
}

/// Skip connection around a whole block.
#[derive(Clone, Debug)]
pub enum BlockResidual {
    /// No skip path (used by a network's stem block).
    None,
    /// Identity skip (requires matching channels and stride handled by delay).
    Identity,
    /// 1×1 projection `[C_out, C_in]`.
    Projection(Tensor),
}

/// Everything needed to run one block in either mode.
#[derive(Clone, Debug)]
pub struct BlockParams {
    pub spatial: SpatialParams,
    /// Temporal kernel `[C_out, C_out, K]`; the last tap weights the newest
    /// frame.
    pub tcn_kernel: Tensor,
    pub tcn_bias: Tensor,
    pub tcn_bn: BnParams,
    pub stride: usize,
    pub dilation: usize,
    /// Symmetric zero padding applied by the clip-mode convolution. Step mode
    /// never pads; the padding only sets the emission phase so both modes
    /// emit on the same temporal grid.
    pub padding: usize,
    pub residual: BlockResidual,
    /// Offset, in the block's input frames, between a conv output and the
    /// input frame its skip connection reads. `extent − 1 − padding` keeps a
    /// block aligned with itself; converted networks carry the value derived
    /// from the padding they used to have.
    pub residual_delay: usize,
}

impl BlockParams {
    pub fn out_channels(&self) -> usize {
        self.tcn_kernel.shape()[0]
    }

    pub fn extent(&self) -> usize {
        kernel_extent(self.tcn_kernel.shape()[2], self.dilation)
    }
}

/// Fixed-adjacency graph convolution on one frame:
/// `relu(res(h) + bn(Σ_s (W_s h)(Â_s ⊙ M_s)))`.
pub fn gc_forward(h: &Tensor, adj: &AdjacencySet, p: &GcParams) -> Result<Tensor> {
    let mut agg: Option<Tensor> = None;
    for s in 0..NUM_SUBSETS {
        let masked = mul_elem(adj.subset(s), &p.edge[s])?;
        let term = matmul(&matmul(&p.weight[s], h)?, &masked)?;
        agg = Some(match agg {
            None => term,
            Some(acc) => add(&acc, &term)?,
        });
    }
    let agg = agg.expect("at least one partition subset");
    finish_spatial(h, &agg, &p.bn, &p.residual)
}

/// Data-dependent vertex-affinity matrices, one per partition subset:
/// `softmax_rows((θ_s h)ᵀ (φ_s h))`.
pub fn agc_attention(h: &Tensor, p: &AgcParams) -> Result<[Tensor; NUM_SUBSETS]> {
    let mut out = Vec::with_capacity(NUM_SUBSETS);
    for s in 0..NUM_SUBSETS {
        out.push(softmax_rows(&agc_logits(h, &p.theta[s], &p.phi[s])?)?);
    }
    Ok(out.try_into().expect("exactly NUM_SUBSETS matrices"))
}

/// Pre-softmax attention logits `[V, V]` for one subset.
fn agc_logits(h: &Tensor, theta: &Tensor, phi: &Tensor) -> Result<Tensor> {
    matmul(&matmul(theta, h)?.transpose2()?, &matmul(phi, h)?)
}

/// Adaptive graph convolution on one frame with per-frame attention:
/// `relu(res(h) + bn(Σ_s (W_s h)(Â_s + B_s + C_s)))`.
pub fn agc_forward(h: &Tensor, adj: &AdjacencySet, p: &AgcParams) -> Result<Tensor> {
    let attn = agc_attention(h, p)?;
    agc_forward_with(h, adj, p, &attn)
}

/// Adaptive graph convolution with externally supplied attention matrices
/// (used by clip mode when one attention matrix serves the whole clip).
pub fn agc_forward_with(
    h: &Tensor,
    adj: &AdjacencySet,
    p: &AgcParams,
    attn: &[Tensor; NUM_SUBSETS],
) -> Result<Tensor> {
    let mut agg: Option<Tensor> = None;
    for s in 0..NUM_SUBSETS {
        let combined = add(&add(adj.subset(s), &p.adapt[s])?, &attn[s])?;
        let term = matmul(&matmul(&p.weight[s], h)?, &combined)?;
        agg = Some(match agg {
            None => term,
            Some(acc) => add(&acc, &term)?,
        });
    }
    let agg = agg.expect("at least one partition subset");
    finish_spatial(h, &agg, &p.bn, &p.residual)
}

/// Multi-head self-attention over vertices on one frame:
/// per head `softmax_rows((W_q h)ᵀ(W_k h)/√d_k)` weighting `W_v h`, heads
/// concatenated and mixed by `W_o`, then `relu(res(h) + bn(·))`.
pub fn ssa_forward(h: &Tensor, p: &SsaParams) -> Result<Tensor> {
    if p.heads.is_empty() {
        return Err(Error::Config("self-attention requires at least one head".into()));
    }
    let v = match h.shape() {
        &[_, v] => v,
        s => return Err(Error::Dim(format!("frame must be [C, V], got {s:?}"))),
    };
    let mut concat = Vec::new();
    let mut rows = 0usize;
    for head in &p.heads {
        let q = matmul(&head.wq, h)?;
        let k = matmul(&head.wk, h)?;
        let val = matmul(&head.wv, h)?;
        let dk = q.shape()[0];
        let scale = 1.0 / (dk as f32).sqrt();
        let mut logits = matmul(&q.transpose2()?, &k)?;
        for l in logits.data_mut() {
            *l *= scale;
        }
        let attn = softmax_rows(&logits)?;
        let out = matmul(&val, &attn.transpose2()?)?;
        rows += out.shape()[0];
        concat.extend_from_slice(out.data());
    }
    let concat = Tensor::new(vec![rows, v], concat)?;
    let mixed = matmul(&p.wo, &concat)?;
    finish_spatial(h, &mixed, &p.bn, &p.residual)
}

/// Shared tail of every spatial operator: `relu(res(h) + bn(agg))`.
fn finish_spatial(
    h: &Tensor,
    agg: &Tensor,
    bn: &BnParams,
    residual: &SpatialResidual,
) -> Result<Tensor> {
    let normed = bn.apply(agg)?;
    let res = residual.apply(h)?;
    Ok(relu(&add(&res, &normed)?))
}

/// Frame-scope spatial dispatch; the step path and the clip path both route
/// through this so the arithmetic is shared.
pub fn spatial_forward(params: &SpatialParams, h: &Tensor, adj: &AdjacencySet) -> Result<Tensor> {
    match params {
        SpatialParams::Gc(p) => gc_forward(h, adj, p),
        SpatialParams::Agc { params: p, scope } => match scope {
            AttentionScope::Frame => agc_forward(h, adj, p),
            AttentionScope::Global => Err(Error::Mode(
                "global attention scope needs the whole clip; convert the model \
                 to frame scope to stream it"
                    .into(),
            )),
        },
        SpatialParams::Ssa(p) => ssa_forward(h, p),
    }
}

/// Splits `[C, T, V]` into `T` frames of `[C, V]`.
pub(crate) fn split_frames(x: &Tensor) -> Result<Vec<Tensor>> {
    let &[c, t, v] = x.shape() else {
        return Err(Error::Dim(format!("expected [C, T, V], got {:?}", x.shape())));
    };
    let mut frames = Vec::with_capacity(t);
    for ti in 0..t {
        let mut data = Vec::with_capacity(c * v);
        for ci in 0..c {
            let off = (ci * t + ti) * v;
            data.extend_from_slice(&x.data()[off..off + v]);
        }
        frames.push(Tensor::new(vec![c, v], data)?);
    }
    Ok(frames)
}

/// Reassembles `T` frames of `[C, V]` into `[C, T, V]`.
pub(crate) fn join_frames(frames: &[Tensor]) -> Result<Tensor> {
    let t = frames.len();
    let &[c, v] = frames[0].shape() else {
        return Err(Error::Dim(format!(
            "expected [C, V] frames, got {:?}",
            frames[0].shape()
        )));
    };
    let mut data = vec![0.0f32; c * t * v];
    for (ti, frame) in frames.iter().enumerate() {
        if frame.shape() != [c, v] {
            return Err(Error::Dim("ragged frame shapes".into()));
        }
        for ci in 0..c {
            data[(ci * t + ti) * v..(ci * t + ti + 1) * v]
                .copy_from_slice(&frame.data()[ci * v..(ci + 1) * v]);
        }
    }
    Tensor::new(vec![c, t, v], data)
}

/// Applies `f` to every frame, in parallel when the `parallel` feature is on.
/// Frames are independent, so the parallel and sequential results are
/// bit-identical.
fn map_frames<F>(frames: &[Tensor], f: F) -> Result<Vec<Tensor>>
where
    F: Fn(&Tensor) -> Result<Tensor> + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if frames.len() > 1 {
            return frames.par_iter().map(|fr| f(fr)).collect();
        }
    }
    frames.iter().map(f).collect()
}

/// Runs one block over a whole clip `[C_in, T, V]`.
///
/// Returns `None` when the sequence is too short for the temporal kernel;
/// otherwise `[C_out, T', V]` with `T' = (T + 2p − extent)/stride + 1`.
pub fn st_block_clip(
    x: &Tensor,
    adj: &AdjacencySet,
    params: &BlockParams,
) -> Result<Option<Tensor>> {
    let frames = split_frames(x)?;
    let spatial_frames = match &params.spatial {
        SpatialParams::Agc {
            params: p,
            scope: AttentionScope::Global,
        } => {
            // One attention matrix per subset for the whole clip: logits are
            // summed over frames in arrival order, then softmaxed once.
            let mut attn = Vec::with_capacity(NUM_SUBSETS);
            for s in 0..NUM_SUBSETS {
                let mut sum: Option<Tensor> = None;
                for frame in &frames {
                    let logits = agc_logits(frame, &p.theta[s], &p.phi[s])?;
                    sum = Some(match sum {
                        None => logits,
                        Some(acc) => add(&acc, &logits)?,
                    });
                }
                attn.push(softmax_rows(&sum.expect("clip has at least one frame"))?);
            }
            let attn: [Tensor; NUM_SUBSETS] =
                attn.try_into().expect("exactly NUM_SUBSETS matrices");
            map_frames(&frames, |fr| agc_forward_with(fr, adj, p, &attn))?
        }
        sp => map_frames(&frames, |fr| spatial_forward(sp, fr, adj))?,
    };
    let g = join_frames(&spatial_frames)?;
    let Some(conv) = temporal_conv_clip(
        &g,
        &params.tcn_kernel,
        &params.tcn_bias,
        params.stride,
        params.dilation,
        params.padding,
    )?
    else {
        return Ok(None);
    };
    let normed = params.tcn_bn.apply(&conv)?;

    if matches!(params.residual, BlockResidual::None) {
        return Ok(Some(relu(&normed)));
    }
    let &[c_out, t_out, v] = normed.shape() else {
        unreachable!("conv output is [C_out, T', V]")
    };
    // Output t' pairs with input frame t'·stride + offset; the offset is zero
    // for a self-consistent block and positive after conversion.
    let offset = (params.extent() - 1)
        .checked_sub(params.residual_delay + params.padding)
        .ok_or_else(|| {
            Error::Config(format!(
                "residual delay {} plus padding {} exceeds causal extent {}",
                params.residual_delay,
                params.padding,
                params.extent() - 1
            ))
        })?;
    let mut out = vec![0.0f32; c_out * t_out * v];
    for tp in 0..t_out {
        let r_idx = tp * params.stride + offset;
        if r_idx >= frames.len() {
            return Err(Error::Config(format!(
                "residual alignment out of range: output {tp} reads input frame \
                 {r_idx} of {}",
                frames.len()
            )));
        }
        let res = match &params.residual {
            BlockResidual::None => unreachable!("handled above"),
            BlockResidual::Identity => frames[r_idx].clone(),
            BlockResidual::Projection(w) => matmul(w, &frames[r_idx])?,
        };
        for ci in 0..c_out {
            for vi in 0..v {
                let n = normed.data()[(ci * t_out + tp) * v + vi];
                let r = res.data()[ci * v + vi];
                out[(ci * t_out + tp) * v + vi] = (n + r).max(0.0);
            }
        }
    }
    Ok(Some(Tensor::new(vec![c_out, t_out, v], out)?))
}

/// Streaming state of one block: the temporal convolution's partial-sum ring
/// plus (when the block has a skip path) a short delay line.
pub struct CoBlockState {
    conv: CoConvState,
    res_line: Option<DelayLine>,
}

/// Creates streaming state for a block over `num_joints` vertices.
pub fn co_st_block_init(
    params: &BlockParams,
    num_joints: usize,
    policy: WarmupPolicy,
) -> Result<CoBlockState> {
    let conv = co_conv_init(
        &params.tcn_kernel,
        &params.tcn_bias,
        params.dilation,
        params.stride,
        num_joints,
        policy,
        params.padding % params.stride,
    )?;
    let res_line = match params.residual {
        BlockResidual::None => None,
        _ => Some(DelayLine::new(
            params.residual_delay,
            params.out_channels() * num_joints,
        )),
    };
    Ok(CoBlockState { conv, res_line })
}

impl CoBlockState {
    /// Steady-state scalar footprint of this block's stream state.
    pub fn state_scalars(&self) -> usize {
        self.conv.state_scalars()
            + self.res_line.as_ref().map_or(0, DelayLine::state_scalars)
    }

    /// Scalars held right now (delay lines fill during warm-up).
    pub fn resident_scalars(&self) -> usize {
        self.conv.resident_scalars()
            + self
                .res_line
                .as_ref()
                .map_or(0, DelayLine::resident_scalars)
    }
}

/// Feeds one frame `[C_in, V]` through the block; emits `[C_out, V]` when the
/// temporal convolution completes a window on the block's emission grid.
pub fn co_st_block_step(
    params: &BlockParams,
    state: &mut CoBlockState,
    x_t: &Tensor,
    adj: &AdjacencySet,
) -> Result<Option<Tensor>> {
    let g = spatial_forward(&params.spatial, x_t, adj)?;
    let conv_out = co_conv_step(&mut state.conv, &g)?;

    // The delay line advances every step regardless of emission so the skip
    // path stays aligned with the convolution's window arithmetic.
    let delayed = match (&params.residual, state.res_line.as_mut()) {
        (BlockResidual::None, _) => None,
        (BlockResidual::Identity, Some(line)) => delay_step(line, x_t.clone()),
        (BlockResidual::Projection(w), Some(line)) => delay_step(line, matmul(w, x_t)?),
        _ => {
            return Err(Error::Config(
                "block state was initialized without its residual delay line".into(),
            ))
        }
    };

    let Some(y) = conv_out else { return Ok(None) };
    let normed = params.tcn_bn.apply(&y)?;
    let out = match &params.residual {
        BlockResidual::None => relu(&normed),
        _ => {
            // Before the delay line fills (zeros warm-up policy only), the
            // skip contribution is the zero frame the policy pretends to have
            // seen.
            let res = delayed.unwrap_or_else(|| Tensor::zeros(normed.shape()));
            relu(&add(&normed, &res)?)
        }
    };
    Ok(Some(out))
}
