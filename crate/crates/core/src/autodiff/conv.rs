//! Direct 3-D convolution kernels and the three primitives that close the
//! convolution family under differentiation:
//!
//! * `conv(x, w)`: cross-correlation, `w` is `[Co, Ci, kd, kh, kw]`;
//! * `conv_transpose(g, w)`: the adjoint of `conv` in `x`, producing a
//!   `[B, Ci, ...]` tensor from a `[B, Co, ...]` one;
//! * `conv_weight_grad(x, g)`: the adjoint of `conv` in `w`.
//!
//! The backward rule of each primitive is expressed with the other two.
//! 2-D convolution runs through the same kernels with a unit depth axis.

use std::ops::Range;

use super::tensor::{Op, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

/// `floor((n + 2p - k) / s) + 1`, or `None` when the kernel does not fit.
pub fn conv_output_size(n: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = n + 2 * padding;
    (padded >= k && stride > 0).then(|| (padded - k) / stride + 1)
}

/// `(n - 1) * s - 2p + k`, or `None` when the result is not positive.
pub fn conv_transpose_output_size(n: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    if n == 0 {
        return None;
    }
    let full = (n - 1) * stride + k;
    (full > 2 * padding).then(|| full - 2 * padding)
}

/// Output positions `o` along one axis for which `o*s + k - p` lands inside
/// an input of length `n`.
#[inline]
fn valid(out_n: usize, n: usize, s: usize, p: usize, k: usize) -> Range<usize> {
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    let hi = if n + p > k { ((n - 1 + p - k) / s + 1).min(out_n) } else { 0 };
    lo..hi.max(lo)
}

fn dims5(t: &Tensor, what: &'static str) -> Result<[usize; 5]> {
    t.shape().try_into().map_err(|_| {
        Error::invalid(format!("{what} must be 5-D, got {:?}", t.shape()))
    })
}

struct Layout {
    b: usize,
    ci: usize,
    co: usize,
    input: [usize; 3],
    output: [usize; 3],
    kernel: [usize; 3],
}

impl Layout {
    fn in_vol(&self) -> usize {
        self.input.iter().product()
    }
    fn out_vol(&self) -> usize {
        self.output.iter().product()
    }
    fn k_vol(&self) -> usize {
        self.kernel.iter().product()
    }
}

/// Calls `f(w_index, x_offset, y_offset, len, x_step)` for every contiguous
/// row of taps between an input volume and an output volume.
#[inline]
fn for_each_row(l: &Layout, g: &ConvGeometry, mut f: impl FnMut(usize, usize, usize, usize)) {
    let [s_d, s_h, s_w] = g.stride;
    let [p_d, p_h, p_w] = g.padding;
    let [_, ih, iw] = l.input;
    let [od, oh, ow] = l.output;
    let [kd, kh, kw] = l.kernel;
    for zd in 0..kd {
        let rd = valid(od, l.input[0], s_d, p_d, zd);
        for zh in 0..kh {
            let rh = valid(oh, ih, s_h, p_h, zh);
            for zw in 0..kw {
                let rw = valid(ow, iw, s_w, p_w, zw);
                if rw.is_empty() {
                    continue;
                }
                let tap = (zd * kh + zh) * kw + zw;
                for o_d in rd.clone() {
                    let i_d = o_d * s_d + zd - p_d;
                    for o_h in rh.clone() {
                        let i_h = o_h * s_h + zh - p_h;
                        let x_off = (i_d * ih + i_h) * iw + rw.start * s_w + zw - p_w;
                        let y_off = (o_d * oh + o_h) * ow + rw.start;
                        f(tap, x_off, y_off, rw.len());
                    }
                }
            }
        }
    }
}

fn conv_kernel(x: &[f64], w: &[f64], l: &Layout, g: &ConvGeometry) -> Vec<f64> {
    let (iv, ov, kv) = (l.in_vol(), l.out_vol(), l.k_vol());
    let sw = g.stride[2];
    let mut y = vec![0.0; l.b * l.co * ov];
    for b in 0..l.b {
        for o in 0..l.co {
            let out = &mut y[(b * l.co + o) * ov..][..ov];
            for i in 0..l.ci {
                let xin = &x[(b * l.ci + i) * iv..][..iv];
                let wk = &w[(o * l.ci + i) * kv..][..kv];
                for_each_row(l, g, |tap, x_off, y_off, len| {
                    let wv = wk[tap];
                    let dst = &mut out[y_off..y_off + len];
                    if sw == 1 {
                        for (d, s) in dst.iter_mut().zip(&xin[x_off..x_off + len]) {
                            *d += wv * s;
                        }
                    } else {
                        for (d, s) in dst.iter_mut().zip(xin[x_off..].iter().step_by(sw)) {
                            *d += wv * s;
                        }
                    }
                });
            }
        }
    }
    y
}

fn conv_transpose_kernel(gy: &[f64], w: &[f64], l: &Layout, g: &ConvGeometry) -> Vec<f64> {
    let (iv, ov, kv) = (l.in_vol(), l.out_vol(), l.k_vol());
    let sw = g.stride[2];
    let mut x = vec![0.0; l.b * l.ci * iv];
    for b in 0..l.b {
        for i in 0..l.ci {
            let dst = &mut x[(b * l.ci + i) * iv..][..iv];
            for o in 0..l.co {
                let gin = &gy[(b * l.co + o) * ov..][..ov];
                let wk = &w[(o * l.ci + i) * kv..][..kv];
                for_each_row(l, g, |tap, x_off, y_off, len| {
                    let wv = wk[tap];
                    let src = &gin[y_off..y_off + len];
                    if sw == 1 {
                        for (d, s) in dst[x_off..x_off + len].iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    } else {
                        for (d, s) in dst[x_off..].iter_mut().step_by(sw).zip(src) {
                            *d += wv * s;
                        }
                    }
                });
            }
        }
    }
    x
}

fn conv_weight_grad_kernel(x: &[f64], gy: &[f64], l: &Layout, g: &ConvGeometry) -> Vec<f64> {
    let (iv, ov, kv) = (l.in_vol(), l.out_vol(), l.k_vol());
    let sw = g.stride[2];
    let mut w = vec![0.0; l.co * l.ci * kv];
    for o in 0..l.co {
        for i in 0..l.ci {
            let wk = &mut w[(o * l.ci + i) * kv..][..kv];
            for b in 0..l.b {
                let xin = &x[(b * l.ci + i) * iv..][..iv];
                let gin = &gy[(b * l.co + o) * ov..][..ov];
                for_each_row(l, g, |tap, x_off, y_off, len| {
                    let src = &gin[y_off..y_off + len];
                    let acc: f64 = if sw == 1 {
                        src.iter().zip(&xin[x_off..x_off + len]).map(|(a, b)| a * b).sum()
                    } else {
                        src.iter().zip(xin[x_off..].iter().step_by(sw)).map(|(a, b)| a * b).sum()
                    };
                    wk[tap] += acc;
                });
            }
        }
    }
    w
}

fn check_geometry(g: &ConvGeometry) -> Result<()> {
    if g.stride.contains(&0) {
        return Err(Error::invalid(format!("stride must be >= 1, got {:?}", g.stride)));
    }
    Ok(())
}

/// Raw convolution primitive on 5-D tensors, no bias.
pub(crate) fn conv_raw(x: &Tensor, w: &Tensor, g: ConvGeometry) -> Result<Tensor> {
    check_geometry(&g)?;
    let [b, ci, d, h, wd] = dims5(x, "conv input")?;
    let [co, wci, kd, kh, kw] = dims5(w, "conv weight")?;
    if ci != wci {
        return Err(Error::Shape {
            op: "conv",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let input = [d, h, wd];
    let kernel = [kd, kh, kw];
    let mut output = [0; 3];
    for a in 0..3 {
        output[a] = conv_output_size(input[a], kernel[a], g.stride[a], g.padding[a]).ok_or_else(|| {
            Error::Shape {
                op: "conv",
                lhs: x.shape().to_vec(),
                rhs: w.shape().to_vec(),
            }
        })?;
    }
    let l = Layout { b, ci, co, input, output, kernel };
    let y = conv_kernel(x.data(), w.data(), &l, &g);
    Tensor::from_op(
        Op::Conv(g),
        vec![x.clone(), w.clone()],
        vec![b, co, output[0], output[1], output[2]],
        y,
    )
}

/// Adjoint of [`conv_raw`] in its input: maps `gy: [B, Co, ...]` with
/// `w: [Co, Ci, k...]` to a `[B, Ci, input...]` tensor.
pub(crate) fn conv_transpose_raw(
    gy: &Tensor,
    w: &Tensor,
    g: ConvGeometry,
    input: [usize; 3],
) -> Result<Tensor> {
    check_geometry(&g)?;
    let [b, co, od, oh, ow] = dims5(gy, "conv_transpose input")?;
    let [wco, ci, kd, kh, kw] = dims5(w, "conv_transpose weight")?;
    let kernel = [kd, kh, kw];
    let output = [od, oh, ow];
    let consistent = wco == co
        && (0..3).all(|a| {
            conv_output_size(input[a], kernel[a], g.stride[a], g.padding[a]) == Some(output[a])
        });
    if !consistent {
        return Err(Error::Shape {
            op: "conv_transpose",
            lhs: gy.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let l = Layout { b, ci, co, input, output, kernel };
    let x = conv_transpose_kernel(gy.data(), w.data(), &l, &g);
    Tensor::from_op(
        Op::ConvTranspose(g),
        vec![gy.clone(), w.clone()],
        vec![b, ci, input[0], input[1], input[2]],
        x,
    )
}

/// Adjoint of [`conv_raw`] in its weight.
pub(crate) fn conv_weight_grad_raw(
    x: &Tensor,
    gy: &Tensor,
    g: ConvGeometry,
    kernel: [usize; 3],
) -> Result<Tensor> {
    check_geometry(&g)?;
    let [b, ci, d, h, wd] = dims5(x, "conv_weight_grad input")?;
    let [gb, co, od, oh, ow] = dims5(gy, "conv_weight_grad output grad")?;
    let input = [d, h, wd];
    let output = [od, oh, ow];
    let consistent = gb == b
        && (0..3).all(|a| {
            conv_output_size(input[a], kernel[a], g.stride[a], g.padding[a]) == Some(output[a])
        });
    if !consistent {
        return Err(Error::Shape {
            op: "conv_weight_grad",
            lhs: x.shape().to_vec(),
            rhs: gy.shape().to_vec(),
        });
    }
    let l = Layout { b, ci, co, input, output, kernel };
    let w = conv_weight_grad_kernel(x.data(), gy.data(), &l, &g);
    Tensor::from_op(
        Op::ConvWeightGrad(g),
        vec![x.clone(), gy.clone()],
        vec![co, ci, kernel[0], kernel[1], kernel[2]],
        w,
    )
}

fn add_bias(y: Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    match bias {
        Some(b) => y.add(&b.channel_broadcast(y.shape())?),
        None => Ok(y),
    }
}

/// 3-D cross-correlation of `input: [B, Ci, D, H, W]` with
/// `weight: [Co, Ci, k, k, k]`, plus an optional `[Co]` bias.
pub fn conv3d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let g = ConvGeometry {
        stride: [stride; 3],
        padding: [padding; 3],
    };
    add_bias(conv_raw(input, weight, g)?, bias)
}

/// 2-D cross-correlation of `input: [B, Ci, H, W]` with
/// `weight: [Co, Ci, k, k]`, plus an optional `[Co]` bias.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let (&[b, ci, h, w], &[co, wci, kh, kw]) = (input.shape(), weight.shape()) else {
        return Err(Error::Shape {
            op: "conv2d",
            lhs: input.shape().to_vec(),
            rhs: weight.shape().to_vec(),
        });
    };
    let g = ConvGeometry {
        stride: [1, stride, stride],
        padding: [0, padding, padding],
    };
    let y = conv_raw(
        &input.reshape(&[b, ci, 1, h, w])?,
        &weight.reshape(&[co, wci, 1, kh, kw])?,
        g,
    )?;
    let s = y.shape().to_vec();
    add_bias(y.reshape(&[s[0], s[1], s[3], s[4]])?, bias)
}

/// Transposed 3-D convolution of `input: [B, Ci, D, H, W]` with
/// `weight: [Ci, Co, k, k, k]`; each output side is `(n - 1)s - 2p + k`.
pub fn conv_transpose3d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
) -> Result<Tensor> {
    let [_, _, d, h, w] = dims5(input, "conv_transpose3d input")?;
    let [_, _, kd, kh, kw] = dims5(weight, "conv_transpose3d weight")?;
    let mut out = [0; 3];
    for (a, (n, k)) in [(d, kd), (h, kh), (w, kw)].into_iter().enumerate() {
        out[a] = conv_transpose_output_size(n, k, stride.max(1), padding).ok_or_else(|| {
            Error::Shape {
                op: "conv_transpose3d",
                lhs: input.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            }
        })?;
    }
    let g = ConvGeometry {
        stride: [stride; 3],
        padding: [padding; 3],
    };
    add_bias(conv_transpose_raw(input, weight, g, out)?, bias)
}
