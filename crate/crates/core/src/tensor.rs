//! Dense row-major `f32` tensors and the kernel set every other module builds
//! on: matrix multiply, ReLU, inference-mode batch normalization, and
//! numerically stable row softmax.
//!
//! All operations are pure functions over immutable inputs and are safe to
//! call concurrently. Accumulation order is fixed (ascending inner index) so
//! results are identical between the `parallel` and sequential builds.

use crate::error::{Error, Result};

/// Dense multi-dimensional array of `f32` in row-major layout.
///
/// Invariants: every dimension is positive and `data.len()` equals the product
/// of the dimensions.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    /// Builds a tensor, validating the shape/data contract.
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Dim(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Dim(format!(
                "shape {shape:?} implies {numel} elements but {} were provided",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// All-zero tensor. Panics on a zero dimension (programming error).
    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    /// Constant-filled tensor. Panics on a zero dimension (programming error).
    pub fn filled(shape: &[usize], value: f32) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "tensor dimensions must be positive, got {shape:?}"
        );
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Row-major flat offset of a multi-index. Panics on rank mismatch or an
    /// out-of-range index (programming error; used on validated paths).
    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (i, (&ix, &dim)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < dim, "index {ix} out of range for dim {i} ({dim})");
            off = off * dim + ix;
        }
        off
    }

    /// Checked element read by multi-index.
    pub fn get(&self, index: &[usize]) -> f32 {
        self.data[self.offset(index)]
    }

    /// Reinterprets the same data under a new shape with equal element count.
    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Dim(format!(
                "tensor dimensions must be positive, got {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Dim(format!(
                "cannot reshape {:?} ({} elements) to {shape:?} ({numel})",
                self.shape,
                self.data.len()
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose2(&self) -> Result<Self> {
        let [m, n] = dims2(self, "transpose2")?;
        let mut out = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }

    /// Maximum absolute difference between two same-shaped tensors.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f32> {
        if self.shape != other.shape {
            return Err(Error::Dim(format!(
                "shape {:?} vs {:?} in max_abs_diff",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max))
    }
}

fn dims2(t: &Tensor, op: &str) -> Result<[usize; 2]> {
    match t.shape() {
        &[m, n] => Ok([m, n]),
        s => Err(Error::Dim(format!("{op} expects a 2-D tensor, got {s:?}"))),
    }
}

/// Work below this many scalar multiply-adds is not worth a rayon dispatch.
#[cfg(feature = "parallel")]
const PAR_MATMUL_THRESHOLD: usize = 16_384;

/// Standard real matrix product of `a` (m×k) and `b` (k×n).
///
/// Per output element the accumulation runs over ascending `k`, so the result
/// is identical whether or not rows are computed in parallel.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [m, k] = dims2(a, "matmul lhs")?;
    let [kb, n] = dims2(b, "matmul rhs")?;
    if k != kb {
        return Err(Error::Dim(format!(
            "matmul inner dimensions differ: {m}x{k} vs {kb}x{n}"
        )));
    }
    let mut out = vec![0.0f32; m * n];
    let row = |i: usize, out_row: &mut [f32]| {
        let a_row = &a.data[i * k..(i + 1) * k];
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b.data[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        if m * k * n >= PAR_MATMUL_THRESHOLD {
            out.par_chunks_mut(n).enumerate().for_each(|(i, r)| row(i, r));
            return Tensor::new(vec![m, n], out);
        }
    }
    for (i, r) in out.chunks_mut(n).enumerate() {
        row(i, r);
    }
    Tensor::new(vec![m, n], out)
}

/// Elementwise `max(0, x)`.
pub fn relu(x: &Tensor) -> Tensor {
    Tensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Elementwise sum `a + b`; shapes must match exactly.
pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(Error::Dim(format!(
            "elementwise add of {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| x + y).collect(),
    })
}

/// Elementwise (Hadamard) product; shapes must match exactly.
pub fn mul_elem(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape != b.shape {
        return Err(Error::Dim(format!(
            "elementwise product of {:?} and {:?}",
            a.shape, b.shape
        )));
    }
    Ok(Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| x * y).collect(),
    })
}

/// Epsilon added to the variance inside batch normalization.
pub const BN_EPS: f32 = 1e-5;

/// Inference-mode batch normalization over the leading (channel) dimension.
///
/// For channel `c`: `y = gamma[c]·(x − mean[c])/sqrt(var[c] + eps) + beta[c]`,
/// evaluated in the fused form `y = x·scale[c] + shift[c]`.
pub fn batchnorm_inference(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    eps: f32,
) -> Result<Tensor> {
    let c = x.shape[0];
    for (name, t) in [("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)] {
        if t.shape() != [c] {
            return Err(Error::Dim(format!(
                "batchnorm {name} must have shape [{c}], got {:?}",
                t.shape()
            )));
        }
    }
    let per_channel = x.numel() / c;
    let mut out = vec![0.0f32; x.numel()];
    for ch in 0..c {
        let scale = gamma.data[ch] / (var.data[ch] + eps).sqrt();
        let shift = beta.data[ch] - mean.data[ch] * scale;
        let src = &x.data[ch * per_channel..(ch + 1) * per_channel];
        let dst = &mut out[ch * per_channel..(ch + 1) * per_channel];
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = s * scale + shift;
        }
    }
    Tensor::new(x.shape.clone(), out)
}

/// Row-wise softmax of a 2-D tensor with max-subtraction for stability.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let [m, n] = dims2(x, "softmax_rows")?;
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let row = &x.data[i * n..(i + 1) * n];
        let dst = &mut out[i * n..(i + 1) * n];
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0f32;
        for (d, &v) in dst.iter_mut().zip(row) {
            let e = (v - max).exp();
            *d = e;
            sum += e;
        }
        for d in dst.iter_mut() {
            *d /= sum;
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Index of the largest element; ties resolve to the lowest index.
pub fn argmax(x: &Tensor) -> usize {
    let mut best = 0;
    for (i, &v) in x.data().iter().enumerate() {
        if v > x.data()[best] {
            best = i;
        }
    }
    best
}
