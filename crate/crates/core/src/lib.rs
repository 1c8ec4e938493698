//! Inference engine for spatio-temporal graph convolutional networks over
//! skeleton sequences, with two execution modes that produce matching outputs:
//!
//! - **clip mode** — a whole fixed-length sequence is processed in one pass and
//!   yields one prediction ([`network::forward_clip`]);
//! - **continual (step) mode** — frames are fed one at a time against cached
//!   state, and predictions stream out online with no recomputation of past
//!   frames ([`network::forward_step`]).
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] — dense row-major `f32` tensors and the small kernel set
//!   (matmul, ReLU, inference batch norm, row softmax);
//! - [`graph`] — skeleton topologies, the three-subset neighbourhood
//!   partition, and degree-normalised adjacency matrices;
//! - [`continual`] — the streaming primitives: cached-partial-sum temporal
//!   convolution, residual delay lines, windowed average pooling, and stride
//!   algebra;
//! - [`blocks`] — the spatial operators (graph convolution, adaptive graph
//!   convolution, spatial self-attention) and the spatio-temporal block in
//!   clip and step forms;
//! - [`network`] — block stacks, presets (`stgcn`, `agcn`, `str`), end-to-end
//!   clip/step inference, and regular→continual conversion;
//! - [`flops`] — the analytical cost model (per-prediction FLOPs, parameters,
//!   state bytes);
//! - [`io`] — the binary weight container, clip/stream data formats, input
//!   modalities, and score fusion;
//! - [`bench`] — a small wall-clock harness comparing clip and step
//!   throughput.
//!
//! # Feature flags
//!
//! - `parallel` (default): data-parallel clip-mode kernels via rayon.
//!   Disabling it (`--no-default-features`) selects sequential fallbacks that
//!   produce bit-identical results; parallelism is only ever over independent
//!   output elements.

pub mod bench;
pub mod blocks;
pub mod continual;
pub mod error;
pub mod flops;
pub mod graph;
pub mod io;
pub mod network;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
