//! Wall-clock comparison of the two inference modes on the host.
//!
//! Throughput claims here are always *relative* — step mode versus clip mode
//! on the same machine with the same weights — never absolute. The harness
//! reports medians over a configurable number of repetitions after one
//! discarded warm-up pass, and times only steady-state streaming (the
//! warm-up prefix that fills the network's receptive field is fed off the
//! clock).
//!
//! To compare the `parallel` feature against the sequential fallback, run
//! the criterion suite twice — `cargo bench` and
//! `cargo bench --no-default-features` — and compare the saved baselines;
//! both builds produce bit-identical numerics.

use crate::error::{Error, Result};
use crate::network::Model;
use crate::continual::WarmupPolicy;
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// Relative throughput of the two modes. Seconds are medians.
#[derive(Clone, Debug, serde::Serialize)]
pub struct BenchReport {
    /// Median seconds for one whole-clip prediction.
    pub clip_seconds_per_pred: f64,
    /// Median seconds per streamed prediction in steady state.
    pub step_seconds_per_pred: f64,
    pub clip_preds_per_sec: f64,
    pub step_preds_per_sec: f64,
    /// `step_preds_per_sec / clip_preds_per_sec`.
    pub speedup: f64,
    /// Repetitions each median is drawn from.
    pub reps: usize,
    /// Clip length fed to the clip model.
    pub clip_frames: usize,
    /// Timed steady-state frames fed to the streaming model per repetition.
    pub stream_frames: usize,
    /// Predictions emitted during one timed streaming repetition.
    pub stream_preds: usize,
}

/// Median of a sample (odd/even handled; empty is a caller bug).
fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

fn random_clip(seed: u64, c: usize, t: usize, v: usize, m: usize) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..c * t * v * m)
        .map(|_| rng.gen_range(-1.0f32..1.0))
        .collect();
    Tensor::new(vec![c, t, v, m], data)
}

/// Times `clip_model` on whole clips of `clip_frames` frames and
/// `step_model` on a steady-state stream, `reps` repetitions each after a
/// warm-up pass. The streaming side feeds the model's whole warm-up prefix
/// off the clock, then times `stream_frames` further frames.
pub fn bench_compare(
    clip_model: &Model,
    clip_frames: usize,
    step_model: &Model,
    stream_frames: usize,
    reps: usize,
    seed: u64,
) -> Result<BenchReport> {
    if reps == 0 {
        return Err(Error::Config("benchmark needs at least one repetition".into()));
    }
    let s_nn = step_model.config.network_stride();
    if stream_frames < s_nn {
        return Err(Error::Config(format!(
            "{stream_frames} timed frames cannot cover one prediction interval of \
             {s_nn} frames"
        )));
    }

    // Clip side.
    let c = clip_model.config.in_channels;
    let v = clip_model.graph.num_joints();
    let m = clip_model.config.persons;
    let clip = random_clip(seed, c, clip_frames, v, m)?;
    clip_model.forward_clip(&clip)?; // warm-up, discarded
    let mut clip_secs = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        let logits = clip_model.forward_clip(&clip)?;
        let dt = t0.elapsed().as_secs_f64();
        assert!(logits.numel() > 0);
        clip_secs.push(dt);
    }

    // Step side: frames for the warm-up prefix plus the timed stretch.
    let sc = step_model.config.in_channels;
    let sv = step_model.graph.num_joints();
    let sm = step_model.config.persons;
    let prefix = step_model.config.total_delay();
    let total = prefix + stream_frames;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let frames: Vec<Tensor> = (0..total)
        .map(|_| {
            let data = (0..sc * sv * sm)
                .map(|_| rng.gen_range(-1.0f32..1.0))
                .collect();
            Tensor::new(vec![sc, sv, sm], data)
        })
        .collect::<Result<_>>()?;

    let run = |timed: bool| -> Result<(f64, usize)> {
        let mut state = step_model.init_stream(WarmupPolicy::Strict)?;
        for frame in &frames[..prefix] {
            step_model.forward_step(&mut state, frame)?;
        }
        let t0 = Instant::now();
        let mut preds = 0usize;
        for frame in &frames[prefix..] {
            if step_model.forward_step(&mut state, frame)?.is_some() {
                preds += 1;
            }
        }
        let dt = if timed { t0.elapsed().as_secs_f64() } else { 0.0 };
        Ok((dt, preds))
    };
    run(false)?; // warm-up, discarded
    let mut step_secs = Vec::with_capacity(reps);
    let mut stream_preds = 0usize;
    for _ in 0..reps {
        let (dt, preds) = run(true)?;
        if preds == 0 {
            return Err(Error::Config(
                "the timed stream emitted no predictions; raise the frame count".into(),
            ));
        }
        stream_preds = preds;
        step_secs.push(dt / preds as f64);
    }

    let clip_med = median(&mut clip_secs);
    let step_med = median(&mut step_secs);
    let clip_pps = 1.0 / clip_med;
    let step_pps = 1.0 / step_med;
    Ok(BenchReport {
        clip_seconds_per_pred: clip_med,
        step_seconds_per_pred: step_med,
        clip_preds_per_sec: clip_pps,
        step_preds_per_sec: step_pps,
        speedup: step_pps / clip_pps,
        reps,
        clip_frames,
        stream_frames,
        stream_preds,
    })
}
