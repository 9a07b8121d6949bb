use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::conv::ConvGeometry;
use super::grad;
use crate::error::{Error, Result};

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Operation that produced a tensor. Broadcast targets, transposed-conv
/// output sizes and weight-gradient kernel sizes are read back from the
/// output tensor's shape.
#[derive(Clone, Debug)]
pub(crate) enum Op {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale(f64),
    AddScalar,
    Sqrt,
    Recip,
    Log,
    Sigmoid,
    Relu,
    LeakyRelu(f64),
    Clamp(f64, f64),
    Sum,
    BroadcastScalar,
    SumRows,
    BroadcastRows,
    ChannelSum,
    ChannelBroadcast,
    Reshape,
    Transpose,
    MatMul,
    Conv(ConvGeometry),
    ConvTranspose(ConvGeometry),
    ConvWeightGrad(ConvGeometry),
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) inputs: Vec<Tensor>,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    node: Option<Node>,
}

/// An immutable n-dimensional array that may participate in a computation
/// graph. Cloning is cheap and shares the underlying buffer.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.node.as_ref().map(|n| &n.op))
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn leaf(shape: Vec<usize>, data: Arc<Vec<f64>>, requires_grad: bool) -> Tensor {
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            node: None,
        }))
    }

    /// A constant tensor.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if data.len() != numel(shape) {
            return Err(Error::invalid(format!(
                "{} values do not fill shape {shape:?}",
                data.len()
            )));
        }
        if shape.contains(&0) {
            return Err(Error::invalid(format!("zero-sized dimension in {shape:?}")));
        }
        Ok(Self::leaf(shape.to_vec(), Arc::new(data), false))
    }

    /// A leaf tensor that gradients are taken with respect to.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        let t = Self::new(data, shape)?;
        Ok(t.requiring_grad())
    }

    pub fn scalar(value: f64) -> Tensor {
        Self::leaf(Vec::new(), Arc::new(vec![value]), false)
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Tensor {
        Self::leaf(shape.to_vec(), Arc::new(vec![value; numel(shape)]), false)
    }

    /// Same values, detached from any graph, as a fresh leaf that requires
    /// gradients.
    pub fn requiring_grad(&self) -> Tensor {
        Self::leaf(self.0.shape.clone(), self.0.data.clone(), true)
    }

    /// Same values as a constant leaf.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.0.shape.clone(), self.0.data.clone(), false)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    pub(crate) fn node(&self) -> Option<&Node> {
        self.0.node.as_ref()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::invalid(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.0.data[0])
    }

    pub(crate) fn from_op(op: Op, inputs: Vec<Tensor>, shape: Vec<usize>, data: Vec<f64>) -> Result<Tensor> {
        debug_assert_eq!(numel(&shape), data.len());
        if grad::anomaly_detection() && data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(op_name(&op)));
        }
        let record = grad::grad_enabled() && inputs.iter().any(Tensor::requires_grad);
        Ok(Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: Arc::new(data),
            requires_grad: record,
            node: record.then_some(Node { op, inputs }),
        })))
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn zip(&self, other: &Tensor, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.same_shape(other, op_name(&op))?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
        Tensor::from_op(op, vec![self.clone(), other.clone()], self.shape().to_vec(), data)
    }

    fn map(&self, op: Op, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let data = self.data().iter().map(|&a| f(a)).collect();
        Tensor::from_op(op, vec![self.clone()], self.shape().to_vec(), data)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, Op::Mul, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, Op::Div, |a, b| a / b)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.map(Op::Neg, |a| -a)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        self.map(Op::Scale(c), |a| c * a)
    }

    pub fn add_scalar(&self, c: f64) -> Result<Tensor> {
        self.map(Op::AddScalar, |a| a + c)
    }

    pub fn square(&self) -> Result<Tensor> {
        self.mul(self)
    }

    /// Square root. The derivative at 0 is taken as 0 rather than infinity.
    pub fn sqrt(&self) -> Result<Tensor> {
        if let Some(v) = self.data().iter().find(|v| **v < 0.0) {
            return Err(Error::invalid(format!("sqrt of negative value {v}")));
        }
        self.map(Op::Sqrt, f64::sqrt)
    }

    /// Elementwise `1/x`, with `1/0` defined as 0.
    pub fn recip(&self) -> Result<Tensor> {
        self.map(Op::Recip, safe_recip)
    }

    pub fn ln(&self) -> Result<Tensor> {
        self.map(Op::Log, f64::ln)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.map(Op::Sigmoid, sigmoid)
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.map(Op::Relu, |a| if a > 0.0 { a } else { 0.0 })
    }

    pub fn leaky_relu(&self, slope: f64) -> Result<Tensor> {
        self.map(Op::LeakyRelu(slope), |a| if a > 0.0 { a } else { slope * a })
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        if !(lo <= hi) {
            return Err(Error::invalid(format!("clamp bounds {lo} > {hi}")));
        }
        self.map(Op::Clamp(lo, hi), |a| a.clamp(lo, hi))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Result<Tensor> {
        let s = self.data().iter().sum();
        Tensor::from_op(Op::Sum, vec![self.clone()], Vec::new(), vec![s])
    }

    pub fn mean(&self) -> Result<Tensor> {
        self.sum()?.scale(1.0 / self.numel() as f64)
    }

    /// Broadcasts a one-element tensor to `shape`.
    pub fn broadcast_scalar(&self, shape: &[usize]) -> Result<Tensor> {
        let v = self.item()?;
        Tensor::from_op(
            Op::BroadcastScalar,
            vec![self.clone()],
            shape.to_vec(),
            vec![v; numel(shape)],
        )
    }

    /// Sums over every dimension except the first: `[B, ...] -> [B]`.
    pub fn sum_rows(&self) -> Result<Tensor> {
        let b = *self.shape().first().ok_or_else(|| Error::invalid("sum_rows on a scalar"))?;
        let row = self.numel() / b;
        let data = self.data().chunks(row).map(|r| r.iter().sum()).collect();
        Tensor::from_op(Op::SumRows, vec![self.clone()], vec![b], data)
    }

    /// Repeats each element of a `[B]` tensor across the trailing dims of
    /// `shape` (whose first dim must be `B`).
    pub fn broadcast_rows(&self, shape: &[usize]) -> Result<Tensor> {
        if self.shape().len() != 1 || shape.first() != Some(&self.shape()[0]) {
            return Err(Error::Shape {
                op: "broadcast_rows",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let row = numel(shape) / shape[0];
        let data = self.data().iter().flat_map(|&v| std::iter::repeat_n(v, row)).collect();
        Tensor::from_op(Op::BroadcastRows, vec![self.clone()], shape.to_vec(), data)
    }

    /// Sums over every dimension except dim 1: `[B, C, ...] -> [C]`.
    pub fn channel_sum(&self) -> Result<Tensor> {
        let (b, c, inner) = channel_layout(self.shape())?;
        let mut out = vec![0.0; c];
        for bi in 0..b {
            for (ci, o) in out.iter_mut().enumerate() {
                let start = (bi * c + ci) * inner;
                *o += self.data()[start..start + inner].iter().sum::<f64>();
            }
        }
        Tensor::from_op(Op::ChannelSum, vec![self.clone()], vec![c], out)
    }

    /// Repeats a `[C]` tensor over every position of `shape = [B, C, ...]`.
    pub fn channel_broadcast(&self, shape: &[usize]) -> Result<Tensor> {
        let (b, c, inner) = channel_layout(shape)?;
        if self.shape() != [c] {
            return Err(Error::Shape {
                op: "channel_broadcast",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let mut data = Vec::with_capacity(numel(shape));
        for _ in 0..b {
            for &v in self.data() {
                data.extend(std::iter::repeat_n(v, inner));
            }
        }
        Tensor::from_op(Op::ChannelBroadcast, vec![self.clone()], shape.to_vec(), data)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        let record = grad::grad_enabled() && self.requires_grad();
        Ok(Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape: shape.to_vec(),
            data: self.0.data.clone(),
            requires_grad: record,
            node: record.then(|| Node {
                op: Op::Reshape,
                inputs: vec![self.clone()],
            }),
        })))
    }

    /// Transpose of a 2-D tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let &[r, c] = self.shape() else {
            return Err(Error::invalid(format!("transpose of shape {:?}", self.shape())));
        };
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data()[i * c + j];
            }
        }
        Tensor::from_op(Op::Transpose, vec![self.clone()], vec![c, r], data)
    }

    /// `[M, K] × [K, N] -> [M, N]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (&[m, k], &[k2, n]) = (self.shape(), other.shape()) else {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        };
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        let (a, b) = (self.data(), other.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                    *o += av * bv;
                }
            }
        }
        Tensor::from_op(Op::MatMul, vec![self.clone(), other.clone()], vec![m, n], out)
    }

    /// Constant elementwise product with a mask, used by piecewise-linear
    /// backward rules.
    pub(crate) fn mul_const(&self, mask: Vec<f64>) -> Result<Tensor> {
        let m = Tensor::leaf(self.shape().to_vec(), Arc::new(mask), false);
        self.mul(&m)
    }
}

fn channel_layout(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::invalid(format!(
            "channel op needs [B, C, ...], got {shape:?}"
        )));
    }
    Ok((shape[0], shape[1], numel(&shape[2..])))
}

#[inline]
pub(crate) fn safe_recip(a: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        1.0 / a
    }
}

#[inline]
pub(crate) fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Add => "add",
        Op::Sub => "sub",
        Op::Mul => "mul",
        Op::Div => "div",
        Op::Neg => "neg",
        Op::Scale(_) => "scale",
        Op::AddScalar => "add_scalar",
        Op::Sqrt => "sqrt",
        Op::Recip => "recip",
        Op::Log => "log",
        Op::Sigmoid => "sigmoid",
        Op::Relu => "relu",
        Op::LeakyRelu(_) => "leaky_relu",
        Op::Clamp(..) => "clamp",
        Op::Sum => "sum",
        Op::BroadcastScalar => "broadcast_scalar",
        Op::SumRows => "sum_rows",
        Op::BroadcastRows => "broadcast_rows",
        Op::ChannelSum => "channel_sum",
        Op::ChannelBroadcast => "channel_broadcast",
        Op::Reshape => "reshape",
        Op::Transpose => "transpose",
        Op::MatMul => "matmul",
        Op::Conv(_) => "conv",
        Op::ConvTranspose(_) => "conv_transpose",
        Op::ConvWeightGrad(_) => "conv_weight_grad",
    }
}
