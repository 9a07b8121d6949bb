use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Sigmoid,
}

pub fn activation(x: &Tensor, kind: Activation) -> Result<Tensor> {
    match kind {
        Activation::Relu => x.relu(),
        Activation::LeakyRelu(slope) => x.leaky_relu(slope),
        Activation::Sigmoid => x.sigmoid(),
    }
}

/// `x · wᵀ + b` for `x: [B, In]`, `w: [Out, In]`, `b: [Out]`.
pub fn dense(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let y = x.matmul(&weight.transpose()?)?;
    match bias {
        Some(b) => y.add(&b.channel_broadcast(y.shape())?),
        None => Ok(y),
    }
}

pub enum BatchNormMode<'a> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with stored running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

pub struct BatchNormOutput {
    pub output: Tensor,
    /// Per-channel batch mean and biased variance (train mode only).
    pub batch_stats: Option<(Vec<f64>, Vec<f64>)>,
}

/// Per-channel normalization over every dim except dim 1 of `[B, C, ...]`,
/// followed by the affine map `γ·x̂ + β`.
pub fn batchnorm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
    mode: BatchNormMode<'_>,
) -> Result<BatchNormOutput> {
    let shape = x.shape().to_vec();
    if shape.len() < 2 || gamma.shape() != [shape[1]] || beta.shape() != [shape[1]] {
        return Err(Error::Shape {
            op: "batchnorm",
            lhs: shape,
            rhs: gamma.shape().to_vec(),
        });
    }
    let per_channel = (x.numel() / shape[1]) as f64;
    let (centered, inv_std, stats) = match mode {
        BatchNormMode::Train => {
            let mean = x.channel_sum()?.scale(1.0 / per_channel)?;
            let centered = x.sub(&mean.channel_broadcast(&shape)?)?;
            let var = centered.square()?.channel_sum()?.scale(1.0 / per_channel)?;
            let inv_std = var.add_scalar(eps)?.sqrt()?.recip()?;
            let stats = (mean.data().to_vec(), var.data().to_vec());
            (centered, inv_std, Some(stats))
        }
        BatchNormMode::Eval { mean, var } => {
            let c = shape[1];
            if mean.len() != c || var.len() != c {
                return Err(Error::invalid("running statistics do not match channels"));
            }
            let mean = Tensor::new(mean.to_vec(), &[c])?;
            let inv = Tensor::new(var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect(), &[c])?;
            (x.sub(&mean.channel_broadcast(&shape)?)?, inv, None)
        }
    };
    let scale = inv_std.mul(gamma)?.channel_broadcast(&shape)?;
    let output = centered.mul(&scale)?.add(&beta.channel_broadcast(&shape)?)?;
    Ok(BatchNormOutput {
        output,
        batch_stats: stats,
    })
}

/// Mean binary cross-entropy `-mean(t·ln p + (1-t)·ln(1-p))`, with `p`
/// clamped to `[BCE_EPS, 1 - BCE_EPS]`.
pub fn bce(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            op: "bce",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    if target.data().iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::invalid("bce targets must lie in [0, 1]"));
    }
    let p = pred.clamp(BCE_EPS, 1.0 - BCE_EPS)?;
    let one_minus_t = target.neg()?.add_scalar(1.0)?;
    let pos = target.mul(&p.ln()?)?;
    let neg = one_minus_t.mul(&p.neg()?.add_scalar(1.0)?.ln()?)?;
    pos.add(&neg)?.mean()?.neg()
}

/// Euclidean norm of all elements, as a scalar.
pub fn l2_norm(x: &Tensor) -> Result<Tensor> {
    x.square()?.sum()?.sqrt()
}

/// Euclidean norm of each `x[b, ...]`, as a `[B]` tensor.
pub fn l2_norm_rows(x: &Tensor) -> Result<Tensor> {
    x.square()?.sum_rows()?.sqrt()
}
