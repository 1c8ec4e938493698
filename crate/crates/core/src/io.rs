//! Serialization and input handling: the binary tensor container, stored
//! clips, skeleton-frame JSONL streams, derived input modalities, and
//! multi-stream score fusion.
//!
//! # Container layout
//!
//! A weight file is `"COSG"` (4 bytes), a little-endian `u32` format version,
//! a little-endian `u64` header length, a UTF-8 JSON header mapping tensor
//! names to `{shape, offset, dtype}`, then the payload of little-endian `f32`
//! values. Offsets are byte positions from the start of the payload. Tensor
//! names are sorted in the header and the payload is packed in the same
//! order, so equal stores serialize to identical bytes.

use crate::error::{Error, Result};
use crate::graph::SkeletonGraph;
use crate::tensor::{softmax_rows, Tensor};
use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

/// Leading magic bytes of the tensor container.
pub const CONTAINER_MAGIC: &[u8; 4] = b"COSG";
/// Container format version this build reads and writes.
pub const CONTAINER_VERSION: u32 = 1;
/// Name under which a stored clip's single tensor is kept.
pub const CLIP_TENSOR_NAME: &str = "clip";

/// Named tensors, ordered by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore {
    tensors: BTreeMap<String, Tensor>,
}

impl WeightStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor; names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Config(format!("duplicate tensor name '{name}'")));
        }
        self.tensors.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }
}

#[derive(serde::Serialize, serde::Deserialize)]
struct HeaderDoc {
    tensors: BTreeMap<String, TensorMeta>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct TensorMeta {
    shape: Vec<usize>,
    offset: u64,
    dtype: String,
}

/// Serializes a store to container bytes. Deterministic: equal stores yield
/// byte-identical output.
pub fn encode_weights(store: &WeightStore) -> Result<Vec<u8>> {
    let mut metas = BTreeMap::new();
    let mut offset = 0u64;
    for (name, tensor) in store.iter() {
        metas.insert(
            name.to_string(),
            TensorMeta {
                shape: tensor.shape().to_vec(),
                offset,
                dtype: "f32".to_string(),
            },
        );
        offset += (tensor.numel() * 4) as u64;
    }
    let header = serde_json::to_vec(&HeaderDoc { tensors: metas })?;
    let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, tensor) in store.iter() {
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses container bytes, validating magic, version, header coherence, and
/// tensor extents (in-bounds, non-overlapping).
pub fn decode_weights(bytes: &[u8]) -> Result<WeightStore> {
    if bytes.len() < 16 {
        return Err(Error::Format(format!(
            "container truncated: {} bytes is shorter than the fixed header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != CONTAINER_MAGIC {
        return Err(Error::Format(
            "bad magic: not a COSG tensor container".into(),
        ));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CONTAINER_VERSION {
        return Err(Error::Format(format!(
            "unsupported container version {version} (this build reads version \
             {CONTAINER_VERSION})"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let Some(payload_start) = 16usize.checked_add(header_len) else {
        return Err(Error::Format("header length overflows".into()));
    };
    if payload_start > bytes.len() {
        return Err(Error::Format(format!(
            "container truncated: header claims {header_len} bytes but only {} remain",
            bytes.len() - 16
        )));
    }
    let header: HeaderDoc = serde_json::from_slice(&bytes[16..payload_start])
        .map_err(|e| Error::Format(format!("malformed header JSON: {e}")))?;
    let payload = &bytes[payload_start..];

    let mut extents: Vec<(u64, u64, &str)> = Vec::with_capacity(header.tensors.len());
    let mut store = WeightStore::new();
    for (name, meta) in &header.tensors {
        if meta.dtype != "f32" {
            return Err(Error::Format(format!(
                "tensor '{name}': unsupported dtype '{}'",
                meta.dtype
            )));
        }
        let numel = meta
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| {
                if d == 0 {
                    None
                } else {
                    acc.checked_mul(d)
                }
            })
            .ok_or_else(|| {
                Error::Format(format!(
                    "tensor '{name}': invalid shape {:?}",
                    meta.shape
                ))
            })?;
        let nbytes = (numel * 4) as u64;
        let end = meta.offset.checked_add(nbytes).ok_or_else(|| {
            Error::Format(format!("tensor '{name}': offset overflows"))
        })?;
        if end > payload.len() as u64 {
            return Err(Error::Format(format!(
                "tensor '{name}': extent [{}, {end}) exceeds payload length {}",
                meta.offset,
                payload.len()
            )));
        }
        extents.push((meta.offset, end, name));
        let start = meta.offset as usize;
        let data: Vec<f32> = payload[start..start + numel * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        store.insert(name.clone(), Tensor::new(meta.shape.clone(), data)?)?;
    }
    extents.sort();
    for pair in extents.windows(2) {
        let (_, end_a, name_a) = pair[0];
        let (start_b, _, name_b) = pair[1];
        if start_b < end_a {
            return Err(Error::Format(format!(
                "tensors '{name_a}' and '{name_b}' overlap in the payload"
            )));
        }
    }
    Ok(store)
}

/// Writes a store to a container file.
pub fn save_weights(store: &WeightStore, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_weights(store)?)?;
    Ok(())
}

/// Reads a container file.
pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore> {
    decode_weights(&std::fs::read(path)?)
}

/// Stores a clip `[C, T, V, M]` as a container holding one tensor named
/// [`CLIP_TENSOR_NAME`].
pub fn write_clip(clip: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    if clip.shape().len() != 4 {
        return Err(Error::Dim(format!(
            "a stored clip must be [C, T, V, M], got {:?}",
            clip.shape()
        )));
    }
    let mut store = WeightStore::new();
    store.insert(CLIP_TENSOR_NAME, clip.clone())?;
    save_weights(&store, path)
}

/// Reads a clip written by [`write_clip`].
pub fn read_clip(path: impl AsRef<Path>) -> Result<Tensor> {
    let store = load_weights(path)?;
    let clip = store.get(CLIP_TENSOR_NAME).ok_or_else(|| {
        Error::Format(format!(
            "clip container has no tensor named '{CLIP_TENSOR_NAME}'"
        ))
    })?;
    if clip.shape().len() != 4 {
        return Err(Error::Format(format!(
            "clip tensor must be [C, T, V, M], got {:?}",
            clip.shape()
        )));
    }
    Ok(clip.clone())
}

/// One skeleton frame on the wire: a frame counter and per-body joint
/// coordinates, `bodies[m][v] = [x, y, z]`.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SkeletonFrame {
    pub t: u64,
    pub bodies: Vec<Vec<[f32; 3]>>,
}

/// Line-by-line reader of skeleton-frame JSONL.
///
/// Malformed lines — unparsable JSON, a body with the wrong joint count, or
/// non-finite coordinates — are skipped with a logged warning and counted;
/// blank lines are ignored silently. I/O errors terminate the stream.
pub struct FrameStream<R> {
    lines: std::io::Lines<R>,
    expected_joints: usize,
    line_no: u64,
    skipped: u64,
}

/// Opens a JSONL frame stream; `expected_joints` is the vertex count every
/// body must carry.
pub fn open_stream<R: BufRead>(reader: R, expected_joints: usize) -> FrameStream<R> {
    FrameStream {
        lines: reader.lines(),
        expected_joints,
        line_no: 0,
        skipped: 0,
    }
}

impl<R: BufRead> FrameStream<R> {
    /// Number of malformed lines skipped so far.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// 1-based number of the last line read.
    pub fn line_number(&self) -> u64 {
        self.line_no
    }

    fn validate(&self, frame: &SkeletonFrame) -> std::result::Result<(), String> {
        for (m, body) in frame.bodies.iter().enumerate() {
            if body.len() != self.expected_joints {
                return Err(format!(
                    "body {m} has {} joints, expected {}",
                    body.len(),
                    self.expected_joints
                ));
            }
            for joint in body {
                if joint.iter().any(|c| !c.is_finite()) {
                    return Err(format!("body {m} has non-finite coordinates"));
                }
            }
        }
        Ok(())
    }
}

impl<R: BufRead> Iterator for FrameStream<R> {
    type Item = Result<SkeletonFrame>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<SkeletonFrame>(&line) {
                Ok(frame) => match self.validate(&frame) {
                    Ok(()) => return Some(Ok(frame)),
                    Err(why) => {
                        self.skipped += 1;
                        log::warn!("skipping line {}: {why}", self.line_no);
                    }
                },
                Err(e) => {
                    self.skipped += 1;
                    log::warn!("skipping line {}: {e}", self.line_no);
                }
            }
        }
    }
}

/// Packs a frame into `[3, V, M]`, zero-filling absent bodies and ignoring
/// bodies beyond `persons`.
pub fn frame_to_tensor(frame: &SkeletonFrame, num_joints: usize, persons: usize) -> Result<Tensor> {
    if persons == 0 {
        return Err(Error::Config("person count must be positive".into()));
    }
    let mut data = vec![0.0f32; 3 * num_joints * persons];
    for (m, body) in frame.bodies.iter().take(persons).enumerate() {
        if body.len() != num_joints {
            return Err(Error::Dim(format!(
                "body {m} has {} joints, expected {num_joints}",
                body.len()
            )));
        }
        for (v, joint) in body.iter().enumerate() {
            for (c, &coord) in joint.iter().enumerate() {
                data[(c * num_joints + v) * persons + m] = coord;
            }
        }
    }
    Tensor::new(vec![3, num_joints, persons], data)
}

/// Input representations derivable from raw joint coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModalityKind {
    /// Raw coordinates, unchanged.
    Joints,
    /// Joint minus its skeleton parent toward the center (center and
    /// unreachable joints become zero vectors).
    Bones,
    /// Frame-to-frame coordinate difference; the first frame is zeros.
    JointMotion,
    /// Frame-to-frame difference of the bone vectors.
    BoneMotion,
}

impl ModalityKind {
    fn uses_bones(self) -> bool {
        matches!(self, ModalityKind::Bones | ModalityKind::BoneMotion)
    }

    fn uses_motion(self) -> bool {
        matches!(self, ModalityKind::JointMotion | ModalityKind::BoneMotion)
    }
}

fn bone_transform_frame(
    frame_data: &[f32],
    out: &mut [f32],
    parents: &[Option<usize>],
    channels: usize,
    persons: usize,
) {
    let v = parents.len();
    for c in 0..channels {
        for (vi, parent) in parents.iter().enumerate() {
            for m in 0..persons {
                let idx = (c * v + vi) * persons + m;
                out[idx] = match parent {
                    Some(p) => frame_data[idx] - frame_data[(c * v + p) * persons + m],
                    None => 0.0,
                };
            }
        }
    }
}

/// Derives a modality from a whole clip `[C, T, V, M]`.
pub fn derive_modality_clip(
    clip: &Tensor,
    kind: ModalityKind,
    graph: &SkeletonGraph,
) -> Result<Tensor> {
    let &[c, t, v, m] = clip.shape() else {
        return Err(Error::Dim(format!(
            "modality input must be [C, T, V, M], got {:?}",
            clip.shape()
        )));
    };
    if v != graph.num_joints() {
        return Err(Error::Dim(format!(
            "clip has {v} joints but the skeleton has {}",
            graph.num_joints()
        )));
    }
    let parents = graph.parent_toward_center();
    let frame_numel = v * m;
    let take_frame = |src: &Tensor, ti: usize, dst: &mut Vec<f32>| {
        dst.clear();
        for ci in 0..c {
            let off = (ci * t + ti) * frame_numel;
            dst.extend_from_slice(&src.data()[off..off + frame_numel]);
        }
    };
    let mut out = vec![0.0f32; c * t * frame_numel];
    let mut frame = Vec::with_capacity(c * frame_numel);
    let mut prev: Option<Vec<f32>> = None;
    let mut scratch = vec![0.0f32; c * frame_numel];
    for ti in 0..t {
        take_frame(clip, ti, &mut frame);
        let current: Vec<f32> = if kind.uses_bones() {
            bone_transform_frame(&frame, &mut scratch, &parents, c, m);
            scratch.clone()
        } else {
            frame.clone()
        };
        let emitted: Vec<f32> = if kind.uses_motion() {
            match &prev {
                None => vec![0.0f32; c * frame_numel],
                Some(p) => current.iter().zip(p).map(|(&a, &b)| a - b).collect(),
            }
        } else {
            current.clone()
        };
        if kind.uses_motion() {
            prev = Some(current);
        }
        for ci in 0..c {
            let src = &emitted[ci * frame_numel..(ci + 1) * frame_numel];
            let off = (ci * t + ti) * frame_numel;
            out[off..off + frame_numel].copy_from_slice(src);
        }
    }
    Tensor::new(vec![c, t, v, m], out)
}

/// Stateful per-frame modality derivation; feeding frames in order yields
/// exactly the frames of [`derive_modality_clip`].
pub struct ModalityStream {
    kind: ModalityKind,
    parents: Vec<Option<usize>>,
    prev: Option<Tensor>,
}

impl ModalityStream {
    pub fn new(kind: ModalityKind, graph: &SkeletonGraph) -> Self {
        Self {
            kind,
            parents: graph.parent_toward_center(),
            prev: None,
        }
    }

    /// Transforms one frame `[C, V, M]`.
    pub fn step(&mut self, frame: &Tensor) -> Result<Tensor> {
        let &[c, v, m] = frame.shape() else {
            return Err(Error::Dim(format!(
                "modality frame must be [C, V, M], got {:?}",
                frame.shape()
            )));
        };
        if v != self.parents.len() {
            return Err(Error::Dim(format!(
                "frame has {v} joints but the skeleton has {}",
                self.parents.len()
            )));
        }
        let current = if self.kind.uses_bones() {
            let mut out = vec![0.0f32; frame.numel()];
            bone_transform_frame(frame.data(), &mut out, &self.parents, c, m);
            Tensor::new(frame.shape().to_vec(), out)?
        } else {
            frame.clone()
        };
        if !self.kind.uses_motion() {
            return Ok(current);
        }
        let emitted = match &self.prev {
            // The first frame of a motion stream is all zeros, matching the
            // clip-mode convention.
            None => Tensor::zeros(frame.shape()),
            Some(p) => {
                let data = current
                    .data()
                    .iter()
                    .zip(p.data())
                    .map(|(&a, &b)| a - b)
                    .collect();
                Tensor::new(frame.shape().to_vec(), data)?
            }
        };
        self.prev = Some(current);
        Ok(emitted)
    }

    /// Forgets the previous frame (for starting a new sequence).
    pub fn reset(&mut self) {
        self.prev = None;
    }
}

/// Sums the softmax of each logit vector; all inputs must share one shape.
/// The result ranks classes by ensemble agreement.
pub fn fuse_scores(scores: &[Tensor]) -> Result<Tensor> {
    if scores.is_empty() {
        return Err(Error::Config(
            "score fusion requires at least one logit vector".into(),
        ));
    }
    let n = match scores[0].shape() {
        &[n] => n,
        s => {
            return Err(Error::Dim(format!(
                "fusion expects 1-D logit vectors, got {s:?}"
            )))
        }
    };
    let mut fused = vec![0.0f32; n];
    for logits in scores {
        if logits.shape() != [n] {
            return Err(Error::Dim(format!(
                "fusion inputs disagree: {:?} vs [{n}]",
                logits.shape()
            )));
        }
        let probs = softmax_rows(&logits.clone().reshape(vec![1, n])?)?;
        for (f, &p) in fused.iter_mut().zip(probs.data()) {
            *f += p;
        }
    }
    Tensor::new(vec![n], fused)
}
