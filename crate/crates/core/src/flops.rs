//! Analytical cost model: floating-point operation counts per prediction for
//! both inference modes, parameter totals, and the byte footprint of
//! streaming state.
//!
//! Convention (documented, since any fixed choice is one of several
//! defensible ones): one multiply-accumulate is 2 FLOPs, batch normalization
//! is 2 FLOPs per element, ReLU is 1, and softmax is 5 per element. Counts
//! mirror what the engine executes: spatial operators run once per input
//! frame, temporal convolutions once per output frame in clip mode and once
//! per input frame in step mode (every frame feeds the partial-sum ring),
//! and the amortized window refresh of the streaming pool is ignored.

use crate::error::{Error, Result};
use crate::graph::NUM_SUBSETS;
use crate::network::{tensor_specs, BlockSpec, NetworkConfig, ResidualKind, SpatialKind};

/// Cost summary for one configuration, serializable for the CLI.
///
/// `clip_flops` is the whole-clip cost at the configuration's reference
/// length. The step-mode fields are present only for configurations that can
/// stream; `reduction_factor` is then exactly
/// `clip_flops / step_flops_per_pred`.
#[derive(Clone, Debug, serde::Serialize)]
pub struct FlopsReport {
    /// FLOPs for one whole-clip prediction at `t_ref` frames.
    pub clip_flops: f64,
    /// FLOPs per streamed prediction (steady state).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step_flops_per_pred: Option<f64>,
    /// Total learned scalars.
    pub params: u64,
    /// Steady-state streaming state in bytes.
    pub state_bytes: u64,
    /// Input frames consumed per streamed prediction (the network stride).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames_per_pred: Option<u64>,
    /// `clip_flops / step_flops_per_pred`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reduction_factor: Option<f64>,
}

/// Every spatial-operator FLOP spent on one input frame, including the
/// operator's own normalization, residual, and activation tail.
fn spatial_cost_per_frame(b: &BlockSpec, v: usize) -> u64 {
    let (c_in, c_out, v) = (b.in_channels as u64, b.out_channels as u64, v as u64);
    let subsets = NUM_SUBSETS as u64;
    let body = match &b.spatial {
        SpatialKind::Gc => {
            // Per subset: edge mask multiply, vertex transform, aggregation.
            subsets * (v * v + 2 * c_out * c_in * v + 2 * c_out * v * v)
        }
        SpatialKind::Agc { .. } => {
            // Per subset: two attention embeddings, their product, a row
            // softmax, two adjacency additions, transform, aggregation.
            let c_e = c_out / 4;
            subsets
                * (4 * c_e * c_in * v
                    + 2 * v * v * c_e
                    + 5 * v * v
                    + 2 * v * v
                    + 2 * c_out * c_in * v
                    + 2 * c_out * v * v)
        }
        SpatialKind::Ssa { heads } => {
            let s = *heads as u64;
            let d = c_out / s;
            // Per head: query/key/value projections, scaled scores, softmax,
            // value aggregation; then the shared output projection.
            s * (6 * d * c_in * v + 2 * v * v * d + v * v + 5 * v * v + 2 * d * v * v)
                + 2 * c_out * c_out * v
        }
    };
    let subset_sum = match b.spatial {
        SpatialKind::Ssa { .. } => 0,
        _ => (subsets - 1) * c_out * v,
    };
    // The spatial stage always carries a residual: identity when channel
    // counts match, a projection otherwise.
    let residual = if c_in == c_out {
        c_out * v
    } else {
        2 * c_out * c_in * v + c_out * v
    };
    body + subset_sum + 2 * c_out * v + residual + c_out * v
}

/// Multiply-accumulates of all kernel taps for one frame of the temporal
/// convolution (identical work per output frame in clip mode and per input
/// frame in step mode).
fn conv_taps(b: &BlockSpec, v: usize) -> u64 {
    let c = b.out_channels as u64;
    2 * c * c * b.kernel as u64 * v as u64
}

/// Per-output-frame tail of a block: bias, normalization, skip addition,
/// activation.
fn block_out_cost(b: &BlockSpec, v: usize) -> u64 {
    let c = b.out_channels as u64 * v as u64;
    let res_add = if b.residual == ResidualKind::None { 0 } else { c };
    c + 2 * c + res_add + c
}

/// FLOPs of projecting one frame for the block's skip path (zero unless the
/// skip is a projection).
fn block_res_projection(b: &BlockSpec, v: usize) -> u64 {
    if b.residual == ResidualKind::Projection {
        2 * b.out_channels as u64 * b.in_channels as u64 * v as u64
    } else {
        0
    }
}

/// Total learned scalars of the configuration.
pub fn count_params(config: &NetworkConfig) -> Result<u64> {
    Ok(tensor_specs(config)?
        .iter()
        .map(|s| s.shape.iter().product::<usize>() as u64)
        .sum())
}

/// FLOPs for one whole-clip prediction over `t` input frames.
pub fn count_clip(config: &NetworkConfig, t: usize) -> Result<u64> {
    config.validate()?;
    let min = config.min_clip_frames();
    if t < min {
        return Err(Error::Dim(format!(
            "a clip of {t} frames yields no prediction; this configuration needs at \
             least {min}"
        )));
    }
    let v = config.skeleton()?.num_joints();
    let mut per_person = 0u64;
    let mut t_in = t as u64;
    if config.input_bn {
        per_person += t_in * 2 * (config.in_channels * v) as u64;
    }
    for b in &config.blocks {
        let extent = b.extent() as u64;
        let (s, p) = (b.stride as u64, b.padding_frames() as u64);
        let t_out = (t_in + 2 * p - extent) / s + 1;
        per_person += t_in * spatial_cost_per_frame(b, v);
        per_person += t_out * (conv_taps(b, v) + block_out_cost(b, v) + block_res_projection(b, v));
        t_in = t_out;
    }
    // Per person: vertex means for every pooled frame, then the temporal
    // mean. The classifier runs once on the person average.
    let c_last = config.out_channels() as u64;
    per_person += t_in * c_last * (v as u64 + 1) + t_in * c_last + c_last;
    let body = per_person * config.persons as u64;
    let classes = config.num_classes as u64;
    Ok(body + 2 * classes * c_last + classes)
}

/// FLOPs per streamed prediction in steady state. Blocks deeper in the stack
/// run at a fraction of the input rate set by the strides above them; one
/// prediction spans `network_stride` input frames.
pub fn count_step(config: &NetworkConfig) -> Result<u64> {
    config.validate()?;
    if !config.is_continual() {
        return Err(Error::Config(
            "per-step cost is defined for continual configurations only; this one \
             still pads its temporal convolutions or uses clip-global attention"
                .into(),
        ));
    }
    let v = config.skeleton()?.num_joints();
    let s_nn = config.network_stride() as u64;
    let mut per_person = 0u64;
    if config.input_bn {
        per_person += s_nn * 2 * (config.in_channels * v) as u64;
    }
    let mut cum_before = 1u64;
    for b in &config.blocks {
        let n_in = s_nn / cum_before;
        let n_out = s_nn / (cum_before * b.stride as u64);
        per_person +=
            n_in * (spatial_cost_per_frame(b, v) + conv_taps(b, v) + block_res_projection(b, v));
        per_person += n_out * block_out_cost(b, v);
        cum_before *= b.stride as u64;
    }
    // Per emission: vertex mean, window update (evict, admit, divide).
    let c_last = config.out_channels() as u64;
    per_person += c_last * (v as u64 + 1) + 3 * c_last;
    let body = per_person * config.persons as u64;
    let classes = config.num_classes as u64;
    Ok(body + 2 * classes * c_last + classes)
}

/// Steady-state streaming footprint in bytes: partial-sum rings, residual
/// delay lines, and the pooling window, at 4 bytes per scalar. Defined for
/// any configuration (what it *would* hold if streamed).
pub fn count_state(config: &NetworkConfig) -> Result<u64> {
    config.validate()?;
    let v = config.skeleton()?.num_joints() as u64;
    let mut scalars = 0u64;
    for b in &config.blocks {
        let c_out = b.out_channels as u64;
        scalars += (b.extent() as u64 - 1) * c_out * v;
        if b.residual != ResidualKind::None {
            scalars += b.delay() as u64 * c_out * v;
        }
    }
    let c_last = config.out_channels() as u64;
    scalars += config.pool_window() as u64 * c_last + c_last;
    Ok(scalars * config.persons as u64 * 4)
}

/// Builds the full report: clip cost at the reference length, plus the
/// step-mode fields when the configuration can stream.
pub fn report(config: &NetworkConfig) -> Result<FlopsReport> {
    let clip = count_clip(config, config.t_ref)? as f64;
    let (step, frames, reduction) = if config.is_continual() {
        let step = count_step(config)? as f64;
        (
            Some(step),
            Some(config.network_stride() as u64),
            Some(clip / step),
        )
    } else {
        (None, None, None)
    };
    Ok(FlopsReport {
        clip_flops: clip,
        step_flops_per_pred: step,
        params: count_params(config)?,
        state_bytes: count_state(config)?,
        frames_per_pred: frames,
        reduction_factor: reduction,
    })
}
