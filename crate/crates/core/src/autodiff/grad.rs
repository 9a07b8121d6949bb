use std::cell::Cell;
use std::collections::{HashMap, HashSet};

use super::conv::{conv_raw, conv_transpose_raw, conv_weight_grad_raw};
use super::tensor::{Op, Tensor};
use crate::error::{Error, Result};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static DETECT_ANOMALY: Cell<bool> = const { Cell::new(cfg!(debug_assertions)) };
}

/// Whether new operations on this thread record graph nodes.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

/// Runs `f` without recording graph nodes.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    with_grad_mode(false, f)
}

fn with_grad_mode<T>(enabled: bool, f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(enabled)));
    f()
}

/// When enabled, every operation fails with [`Error::Numeric`] as soon as it
/// produces a NaN or infinity. Defaults to on in debug builds.
pub fn set_detect_anomaly(enabled: bool) {
    DETECT_ANOMALY.with(|d| d.set(enabled));
}

pub(crate) fn anomaly_detection() -> bool {
    DETECT_ANOMALY.with(Cell::get)
}

/// Gradients of the scalar `output` with respect to each tensor in `wrt`.
///
/// Nodes are visited in reverse creation order, which is a reverse
/// topological order because a node is always created after its inputs.
/// Only the part of the graph that leads to some `wrt` tensor is
/// differentiated. Tensors in `wrt` that `output` does not depend on get
/// zero gradients.
///
/// With `higher_order`, the backward computation is itself recorded, so the
/// returned gradients can be differentiated again.
pub fn backward(output: &Tensor, wrt: &[&Tensor], higher_order: bool) -> Result<Vec<Tensor>> {
    if output.numel() != 1 {
        return Err(Error::invalid(format!(
            "backward needs a scalar output, got shape {:?}",
            output.shape()
        )));
    }

    // Reachable graph.
    let mut nodes: HashMap<u64, Tensor> = HashMap::new();
    let mut stack = vec![output.clone()];
    while let Some(t) = stack.pop() {
        if !t.requires_grad() || nodes.contains_key(&t.id()) {
            continue;
        }
        if let Some(node) = t.node() {
            for input in &node.inputs {
                if input.id() >= t.id() {
                    return Err(Error::Internal(format!(
                        "graph cycle: node {} depends on {}",
                        t.id(),
                        input.id()
                    )));
                }
                stack.push(input.clone());
            }
        }
        nodes.insert(t.id(), t);
    }
    let mut order: Vec<u64> = nodes.keys().copied().collect();
    order.sort_unstable();

    // A node is needed when some wrt tensor is reachable from it.
    let targets: HashSet<u64> = wrt.iter().map(|t| t.id()).collect();
    let mut needed: HashSet<u64> = HashSet::new();
    for id in &order {
        let t = &nodes[id];
        let hit = targets.contains(id)
            || t.node()
                .is_some_and(|n| n.inputs.iter().any(|i| needed.contains(&i.id())));
        if hit {
            needed.insert(*id);
        }
    }

    let mut grads: HashMap<u64, Tensor> = HashMap::new();
    with_grad_mode(higher_order, || -> Result<()> {
        if needed.contains(&output.id()) {
            grads.insert(output.id(), Tensor::ones(output.shape()));
        }
        for id in order.iter().rev() {
            let t = &nodes[id];
            let Some(node) = t.node() else { continue };
            let Some(g) = grads.get(id).cloned() else { continue };
            let want: Vec<bool> = node.inputs.iter().map(|i| needed.contains(&i.id())).collect();
            if !want.iter().any(|&w| w) {
                continue;
            }
            let input_grads = backward_rule(&node.op, &node.inputs, t, &g, &want)?;
            for ((input, ig), w) in node.inputs.iter().zip(input_grads).zip(want) {
                if !w {
                    continue;
                }
                let Some(ig) = ig else { continue };
                let acc = match grads.remove(&input.id()) {
                    Some(prev) => prev.add(&ig)?,
                    None => ig,
                };
                grads.insert(input.id(), acc);
            }
        }
        Ok(())
    })?;

    Ok(wrt
        .iter()
        .map(|t| {
            grads
                .get(&t.id())
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(t.shape()))
        })
        .collect())
}

fn spatial(t: &Tensor) -> [usize; 3] {
    let s = t.shape();
    [s[2], s[3], s[4]]
}

/// Input gradients of one node given the gradient `g` of its output `out`.
/// Entries for inputs with `want[i] == false` may be `None`.
fn backward_rule(
    op: &Op,
    inputs: &[Tensor],
    out: &Tensor,
    g: &Tensor,
    want: &[bool],
) -> Result<Vec<Option<Tensor>>> {
    let x = &inputs[0];
    let mask = |f: &dyn Fn(f64) -> f64| -> Vec<f64> { x.data().iter().map(|&v| f(v)).collect() };
    let one = |t: Result<Tensor>| -> Result<Vec<Option<Tensor>>> { Ok(vec![Some(t?)]) };
    let when = |i: usize, f: &dyn Fn() -> Result<Tensor>| -> Result<Option<Tensor>> {
        if want[i] {
            f().map(Some)
        } else {
            Ok(None)
        }
    };
    match op {
        Op::Add => Ok(vec![Some(g.clone()), Some(g.clone())]),
        Op::Sub => Ok(vec![Some(g.clone()), when(1, &|| g.neg())?]),
        Op::Mul => {
            let y = &inputs[1];
            Ok(vec![when(0, &|| g.mul(y))?, when(1, &|| g.mul(x))?])
        }
        Op::Div => {
            let y = &inputs[1];
            Ok(vec![
                when(0, &|| g.mul(&y.recip()?))?,
                when(1, &|| g.mul(out)?.mul(&y.recip()?)?.neg())?,
            ])
        }
        Op::Neg => one(g.neg()),
        Op::Scale(c) => one(g.scale(*c)),
        Op::AddScalar => Ok(vec![Some(g.clone())]),
        Op::Sqrt => one(g.mul(&out.recip()?.scale(0.5)?)),
        Op::Recip => one(g.mul(&out.square()?)?.neg()),
        Op::Log => one(g.mul(&x.recip()?)),
        Op::Sigmoid => one(g.mul(&out.mul(&out.neg()?.add_scalar(1.0)?)?)),
        Op::Relu => one(g.mul_const(mask(&|v| if v > 0.0 { 1.0 } else { 0.0 }))),
        Op::LeakyRelu(slope) => {
            let s = *slope;
            one(g.mul_const(mask(&|v| if v > 0.0 { 1.0 } else { s })))
        }
        Op::Clamp(lo, hi) => {
            let (lo, hi) = (*lo, *hi);
            one(g.mul_const(mask(&|v| if v > lo && v < hi { 1.0 } else { 0.0 })))
        }
        Op::Sum => one(g.broadcast_scalar(x.shape())),
        Op::BroadcastScalar => one(g.sum()?.reshape(x.shape())),
        Op::SumRows => one(g.broadcast_rows(x.shape())),
        Op::BroadcastRows => one(g.sum_rows()),
        Op::ChannelSum => one(g.channel_broadcast(x.shape())),
        Op::ChannelBroadcast => one(g.channel_sum()),
        Op::Reshape => one(g.reshape(x.shape())),
        Op::Transpose => one(g.transpose()),
        Op::MatMul => {
            let y = &inputs[1];
            Ok(vec![
                when(0, &|| g.matmul(&y.transpose()?))?,
                when(1, &|| x.transpose()?.matmul(g))?,
            ])
        }
        Op::Conv(geom) => {
            let w = &inputs[1];
            let ws = w.shape();
            Ok(vec![
                when(0, &|| conv_transpose_raw(g, w, *geom, spatial(x)))?,
                when(1, &|| conv_weight_grad_raw(x, g, *geom, [ws[2], ws[3], ws[4]]))?,
            ])
        }
        Op::ConvTranspose(geom) => {
            // out = T_w(gy): d/d gy = conv(g, w), d/dw = weight_grad(g, gy).
            let w = &inputs[1];
            let ws = w.shape();
            Ok(vec![
                when(0, &|| conv_raw(g, w, *geom))?,
                when(1, &|| conv_weight_grad_raw(g, x, *geom, [ws[2], ws[3], ws[4]]))?,
            ])
        }
        Op::ConvWeightGrad(geom) => {
            // out = W(x, gy): d/dx = conv_transpose(gy, g), d/d gy = conv(x, g).
            let gy = &inputs[1];
            Ok(vec![
                when(0, &|| conv_transpose_raw(gy, g, *geom, spatial(x)))?,
                when(1, &|| conv_raw(x, g, *geom))?,
            ])
        }
    }
}
