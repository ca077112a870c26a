//! Forward and backward kernels for every graph primitive.
//!
//! Each op has an exact, documented shape rule and a hand-derived backward
//! rule. There is no broadcasting: elementwise ops require identical shapes.
//! Convolutions use zero padding and a configurable stride.

use rayon::prelude::*;

use super::graph::Op;
use super::{format_shape, Scalar, Tensor, TensorError};

fn shape_err(op: &'static str, shape: &[usize], reason: impl Into<String>) -> TensorError {
    TensorError::InvalidShape { op, shape: format_shape(shape), reason: reason.into() }
}

fn mismatch(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::ShapeMismatch { op, lhs: format_shape(lhs), rhs: format_shape(rhs) }
}

/// Output rows `o` for which `o*stride + k - pad` lands inside `[0, extent)`.
fn valid_range(extent: usize, stride: usize, pad: usize, k: usize, out_extent: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let top = extent as isize - 1 + pad as isize - k as isize;
    if top < 0 {
        return (0, 0);
    }
    let hi = (top as usize / stride + 1).min(out_extent);
    (lo, hi.max(lo))
}

fn conv_out_extent(op: &'static str, extent: usize, kernel: usize, stride: usize, pad: usize, shape: &[usize]) -> Result<usize, TensorError> {
    if stride == 0 {
        return Err(shape_err(op, shape, "stride must be at least 1"));
    }
    let padded = extent + 2 * pad;
    if padded < kernel {
        return Err(shape_err(op, shape, format!("padded extent {padded} smaller than kernel {kernel}")));
    }
    Ok((padded - kernel) / stride + 1)
}

pub(crate) fn eval<E: Scalar>(op: &Op<E>, inputs: &[&Tensor<E>]) -> Result<Tensor<E>, TensorError> {
    match op {
        Op::Add => elementwise(op.name(), inputs, |a, b| a + b),
        Op::Sub => elementwise(op.name(), inputs, |a, b| a - b),
        Op::Mul => elementwise(op.name(), inputs, |a, b| a * b),
        Op::Scale(c) => Ok(inputs[0].map(|v| v * *c)),
        Op::Relu => Ok(inputs[0].map(|v| v.max(E::zero()))),
        Op::Conv2d { stride, padding } => conv2d_forward(inputs, *stride, *padding),
        Op::DepthwiseConv2d { stride, padding } => depthwise_forward(inputs, *stride, *padding),
        Op::Dense => dense_forward(inputs),
        Op::GlobalAvgPool => spatial_mean_forward("global-average-pool", inputs[0], false),
        Op::SpatialMean => spatial_mean_forward("spatial-mean", inputs[0], true),
        Op::BilinearUpsample { out_h, out_w } => bilinear_forward(inputs[0], *out_h, *out_w),
        Op::Softmax => softmax_forward(inputs[0]),
        Op::SumSquares => {
            let s = inputs[0].data().iter().fold(E::zero(), |acc, &v| acc + v * v);
            Ok(Tensor::scalar(s))
        }
        Op::Select { index } => {
            let x = inputs[0];
            if *index >= x.numel() {
                return Err(TensorError::IndexOutOfRange { op: "select", index: *index, len: x.numel() });
            }
            Ok(Tensor::scalar(x.data()[*index]))
        }
        Op::ChannelWeightedSum { weights } => channel_weighted_sum_forward(inputs[0], weights),
        Op::CrossEntropy { labels } => cross_entropy_forward(inputs[0], labels),
    }
}

pub(crate) fn backward<E: Scalar>(
    op: &Op<E>,
    inputs: &[&Tensor<E>],
    output: &Tensor<E>,
    grad: &Tensor<E>,
) -> Result<Vec<Option<Tensor<E>>>, TensorError> {
    match op {
        Op::Add => Ok(vec![Some(grad.clone()), Some(grad.clone())]),
        Op::Sub => Ok(vec![Some(grad.clone()), Some(grad.map(|v| -v))]),
        Op::Mul => {
            let (a, b) = (inputs[0], inputs[1]);
            let da = zip_map(grad, b, |g, b| g * b);
            let db = zip_map(grad, a, |g, a| g * a);
            Ok(vec![Some(da), Some(db)])
        }
        Op::Scale(c) => Ok(vec![Some(grad.map(|g| g * *c))]),
        Op::Relu => Ok(vec![Some(zip_map(grad, inputs[0], |g, x| {
            if x > E::zero() {
                g
            } else {
                E::zero()
            }
        }))]),
        Op::Conv2d { stride, padding } => conv2d_backward(inputs, grad, *stride, *padding),
        Op::DepthwiseConv2d { stride, padding } => depthwise_backward(inputs, grad, *stride, *padding),
        Op::Dense => dense_backward(inputs, grad),
        Op::GlobalAvgPool => Ok(vec![Some(spatial_mean_backward(inputs[0], grad))]),
        Op::SpatialMean => Ok(vec![Some(spatial_mean_backward(inputs[0], grad))]),
        Op::BilinearUpsample { out_h, out_w } => {
            Ok(vec![Some(bilinear_backward(inputs[0], grad, *out_h, *out_w))])
        }
        Op::Softmax => Ok(vec![Some(softmax_backward(output, grad))]),
        Op::SumSquares => {
            let g0 = grad.item();
            let two = E::from_f64(2.0);
            Ok(vec![Some(inputs[0].map(|x| two * g0 * x))])
        }
        Op::Select { index } => {
            let mut dx = vec![E::zero(); inputs[0].numel()];
            dx[*index] = grad.item();
            Ok(vec![Some(Tensor::new(inputs[0].shape(), dx)?)])
        }
        Op::ChannelWeightedSum { weights } => {
            Ok(vec![Some(channel_weighted_sum_backward(inputs[0], grad, weights))])
        }
        Op::CrossEntropy { labels } => Ok(vec![Some(cross_entropy_backward(inputs[0], labels, grad))]),
    }
}

fn elementwise<E: Scalar>(
    op: &'static str,
    inputs: &[&Tensor<E>],
    f: impl Fn(E, E) -> E,
) -> Result<Tensor<E>, TensorError> {
    let (a, b) = (inputs[0], inputs[1]);
    if a.shape() != b.shape() {
        return Err(mismatch(op, a.shape(), b.shape()));
    }
    Ok(zip_map_with(a, b, f))
}

fn zip_map<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, f: impl Fn(E, E) -> E) -> Tensor<E> {
    debug_assert_eq!(a.shape(), b.shape());
    zip_map_with(a, b, f)
}

fn zip_map_with<E: Scalar>(a: &Tensor<E>, b: &Tensor<E>, f: impl Fn(E, E) -> E) -> Tensor<E> {
    let data: Vec<E> = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

// ---------------------------------------------------------------- conv2d

fn conv2d_check<E: Scalar>(
    inputs: &[&Tensor<E>],
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize, usize), TensorError> {
    let op = "conv2d";
    let x = inputs[0];
    let w = inputs[1];
    let [n, cin, h, wd] = match *x.shape() {
        [n, c, h, w] => [n, c, h, w],
        _ => return Err(shape_err(op, x.shape(), "input must be N x C x H x W")),
    };
    let [oc, wc, kh, kw] = match *w.shape() {
        [o, c, kh, kw] => [o, c, kh, kw],
        _ => return Err(shape_err(op, w.shape(), "kernel must be OC x C x KH x KW")),
    };
    if wc != cin {
        return Err(mismatch(op, x.shape(), w.shape()));
    }
    if let Some(b) = inputs.get(2) {
        if b.shape() != [oc] {
            return Err(mismatch(op, w.shape(), b.shape()));
        }
    }
    let oh = conv_out_extent(op, h, kh, stride, padding, x.shape())?;
    let ow = conv_out_extent(op, wd, kw, stride, padding, x.shape())?;
    Ok((n, cin, h, wd, oc, kh, kw, oh, ow))
}

fn conv2d_forward<E: Scalar>(
    inputs: &[&Tensor<E>],
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>, TensorError> {
    let (n, cin, h, wd, oc, kh, kw, oh, ow) = conv2d_check(inputs, stride, padding)?;
    let x = inputs[0].data();
    let w = inputs[1].data();
    let bias = inputs.get(2).map(|b| b.data());

    let hw = h * wd;
    let ohw = oh * ow;
    let mut out = vec![E::zero(); n * oc * ohw];
    // samples are independent; per-sample work is written to disjoint chunks
    out.par_chunks_mut(oc * ohw).enumerate().for_each(|(ni, sample_out)| {
        for o in 0..oc {
            let out_plane = &mut sample_out[o * ohw..][..ohw];
            if let Some(b) = bias {
                out_plane.fill(b[o]);
            }
            for c in 0..cin {
                let x_plane = &x[(ni * cin + c) * hw..][..hw];
                let w_base = (o * cin + c) * kh * kw;
                accumulate_plane(out_plane, x_plane, &w[w_base..w_base + kh * kw], h, wd, oh, ow, kh, kw, stride, padding);
            }
        }
    });
    Tensor::new(&[n, oc, oh, ow], out)
}

/// out[oh,ow] += sum_{k} w[k] * x[oh*s+kh-p, ow*s+kw-p] for in-bounds taps.
#[allow(clippy::too_many_arguments)]
fn accumulate_plane<E: Scalar>(
    out_plane: &mut [E],
    x_plane: &[E],
    w_k: &[E],
    h: usize,
    wd: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) {
    for ky in 0..kh {
        let (oh_lo, oh_hi) = valid_range(h, stride, padding, ky, oh);
        for kx in 0..kw {
            let wv = w_k[ky * kw + kx];
            let (ow_lo, ow_hi) = valid_range(wd, stride, padding, kx, ow);
            if ow_lo >= ow_hi {
                continue;
            }
            for oy in oh_lo..oh_hi {
                let iy = oy * stride + ky - padding;
                let xrow = &x_plane[iy * wd..][..wd];
                let orow = &mut out_plane[oy * ow..][..ow];
                if stride == 1 {
                    let ix0 = ow_lo + kx - padding;
                    let src = &xrow[ix0..ix0 + (ow_hi - ow_lo)];
                    for (acc, &v) in orow[ow_lo..ow_hi].iter_mut().zip(src) {
                        *acc = *acc + wv * v;
                    }
                } else {
                    for ox in ow_lo..ow_hi {
                        let ix = ox * stride + kx - padding;
                        orow[ox] = orow[ox] + wv * xrow[ix];
                    }
                }
            }
        }
    }
}

/// x_plane[oh*s+kh-p, ow*s+kw-p] += sum w[k] * g[oh,ow]: the transpose of
/// `accumulate_plane`, used for input gradients.
#[allow(clippy::too_many_arguments)]
fn scatter_plane<E: Scalar>(
    dx_plane: &mut [E],
    g_plane: &[E],
    w_k: &[E],
    h: usize,
    wd: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) {
    for ky in 0..kh {
        let (oh_lo, oh_hi) = valid_range(h, stride, padding, ky, oh);
        for kx in 0..kw {
            let wv = w_k[ky * kw + kx];
            let (ow_lo, ow_hi) = valid_range(wd, stride, padding, kx, ow);
            for oy in oh_lo..oh_hi {
                let iy = oy * stride + ky - padding;
                let dxrow = &mut dx_plane[iy * wd..][..wd];
                let grow = &g_plane[oy * ow..][..ow];
                for ox in ow_lo..ow_hi {
                    let ix = ox * stride + kx - padding;
                    dxrow[ix] = dxrow[ix] + wv * grow[ox];
                }
            }
        }
    }
}

/// dw[k] += sum_{oh,ow} g[oh,ow] * x[oh*s+kh-p, ow*s+kw-p].
#[allow(clippy::too_many_arguments)]
fn kernel_grad_plane<E: Scalar>(
    dw_k: &mut [E],
    x_plane: &[E],
    g_plane: &[E],
    h: usize,
    wd: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) {
    for ky in 0..kh {
        let (oh_lo, oh_hi) = valid_range(h, stride, padding, ky, oh);
        for kx in 0..kw {
            let (ow_lo, ow_hi) = valid_range(wd, stride, padding, kx, ow);
            let mut acc = E::zero();
            for oy in oh_lo..oh_hi {
                let iy = oy * stride + ky - padding;
                let xrow = &x_plane[iy * wd..][..wd];
                let grow = &g_plane[oy * ow..][..ow];
                if stride == 1 {
                    let ix0 = ow_lo + kx - padding;
                    for (&g, &v) in grow[ow_lo..ow_hi].iter().zip(&xrow[ix0..ix0 + (ow_hi - ow_lo)]) {
                        acc = acc + g * v;
                    }
                } else {
                    for ox in ow_lo..ow_hi {
                        let ix = ox * stride + kx - padding;
                        acc = acc + grow[ox] * xrow[ix];
                    }
                }
            }
            dw_k[ky * kw + kx] = dw_k[ky * kw + kx] + acc;
        }
    }
}

fn conv2d_backward<E: Scalar>(
    inputs: &[&Tensor<E>],
    grad: &Tensor<E>,
    stride: usize,
    padding: usize,
) -> Result<Vec<Option<Tensor<E>>>, TensorError> {
    let (n, cin, h, wd, oc, kh, kw, oh, ow) = conv2d_check(inputs, stride, padding)?;
    let x = inputs[0].data();
    let w = inputs[1].data();
    let g = grad.data();
    let hw = h * wd;
    let ohw = oh * ow;
    let khw = kh * kw;

    let mut dx = vec![E::zero(); x.len()];
    // per-sample input gradients land in disjoint chunks; kernel gradients
    // are accumulated per sample and then reduced in index order so the
    // result does not depend on scheduling
    let dw_parts: Vec<Vec<E>> = dx
        .par_chunks_mut(cin * hw)
        .enumerate()
        .map(|(ni, dx_sample)| {
            let mut dw_n = vec![E::zero(); w.len()];
            for o in 0..oc {
                let g_plane = &g[(ni * oc + o) * ohw..][..ohw];
                for c in 0..cin {
                    let w_base = (o * cin + c) * khw;
                    scatter_plane(&mut dx_sample[c * hw..][..hw], g_plane, &w[w_base..w_base + khw], h, wd, oh, ow, kh, kw, stride, padding);
                    kernel_grad_plane(&mut dw_n[w_base..w_base + khw], &x[(ni * cin + c) * hw..][..hw], g_plane, h, wd, oh, ow, kh, kw, stride, padding);
                }
            }
            dw_n
        })
        .collect();
    let mut dw = vec![E::zero(); w.len()];
    for dw_n in dw_parts {
        for (acc, v) in dw.iter_mut().zip(dw_n) {
            *acc = *acc + v;
        }
    }

    let mut grads = vec![
        Some(Tensor::new(inputs[0].shape(), dx)?),
        Some(Tensor::new(inputs[1].shape(), dw)?),
    ];
    if inputs.len() > 2 {
        let mut db = vec![E::zero(); oc];
        for ni in 0..n {
            for (o, db_o) in db.iter_mut().enumerate() {
                let g_plane = &g[(ni * oc + o) * ohw..][..ohw];
                *db_o = *db_o + g_plane.iter().fold(E::zero(), |a, &v| a + v);
            }
        }
        grads.push(Some(Tensor::new(&[oc], db)?));
    }
    Ok(grads)
}

// ------------------------------------------------------- depthwise conv2d

fn depthwise_check<E: Scalar>(
    inputs: &[&Tensor<E>],
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, usize, usize, usize, usize, usize, usize), TensorError> {
    let op = "depthwise-conv2d";
    let x = inputs[0];
    let w = inputs[1];
    let [n, c, h, wd] = match *x.shape() {
        [n, c, h, w] => [n, c, h, w],
        _ => return Err(shape_err(op, x.shape(), "input must be N x C x H x W")),
    };
    let [wc, kh, kw] = match *w.shape() {
        [c, kh, kw] => [c, kh, kw],
        _ => return Err(shape_err(op, w.shape(), "kernel must be C x KH x KW")),
    };
    if wc != c {
        return Err(mismatch(op, x.shape(), w.shape()));
    }
    if let Some(b) = inputs.get(2) {
        if b.shape() != [c] {
            return Err(mismatch(op, w.shape(), b.shape()));
        }
    }
    let oh = conv_out_extent(op, h, kh, stride, padding, x.shape())?;
    let ow = conv_out_extent(op, wd, kw, stride, padding, x.shape())?;
    Ok((n, c, h, wd, kh, kw, oh, ow))
}

fn depthwise_forward<E: Scalar>(
    inputs: &[&Tensor<E>],
    stride: usize,
    padding: usize,
) -> Result<Tensor<E>, TensorError> {
    let (n, c, h, wd, kh, kw, oh, ow) = depthwise_check(inputs, stride, padding)?;
    let x = inputs[0].data();
    let w = inputs[1].data();
    let bias = inputs.get(2).map(|b| b.data());
    let hw = h * wd;
    let ohw = oh * ow;
    let khw = kh * kw;
    let mut out = vec![E::zero(); n * c * ohw];
    out.par_chunks_mut(c * ohw).enumerate().for_each(|(ni, sample_out)| {
        for ci in 0..c {
            let out_plane = &mut sample_out[ci * ohw..][..ohw];
            if let Some(b) = bias {
                out_plane.fill(b[ci]);
            }
            accumulate_plane(out_plane, &x[(ni * c + ci) * hw..][..hw], &w[ci * khw..(ci + 1) * khw], h, wd, oh, ow, kh, kw, stride, padding);
        }
    });
    Tensor::new(&[n, c, oh, ow], out)
}

fn depthwise_backward<E: Scalar>(
    inputs: &[&Tensor<E>],
    grad: &Tensor<E>,
    stride: usize,
    padding: usize,
) -> Result<Vec<Option<Tensor<E>>>, TensorError> {
    let (n, c, h, wd, kh, kw, oh, ow) = depthwise_check(inputs, stride, padding)?;
    let x = inputs[0].data();
    let w = inputs[1].data();
    let g = grad.data();
    let hw = h * wd;
    let ohw = oh * ow;
    let khw = kh * kw;

    let mut dx = vec![E::zero(); x.len()];
    let dw_parts: Vec<Vec<E>> = dx
        .par_chunks_mut(c * hw)
        .enumerate()
        .map(|(ni, dx_sample)| {
            let mut dw_n = vec![E::zero(); w.len()];
            for ci in 0..c {
                let g_plane = &g[(ni * c + ci) * ohw..][..ohw];
                scatter_plane(&mut dx_sample[ci * hw..][..hw], g_plane, &w[ci * khw..(ci + 1) * khw], h, wd, oh, ow, kh, kw, stride, padding);
                kernel_grad_plane(&mut dw_n[ci * khw..(ci + 1) * khw], &x[(ni * c + ci) * hw..][..hw], g_plane, h, wd, oh, ow, kh, kw, stride, padding);
            }
            dw_n
        })
        .collect();
    let mut dw = vec![E::zero(); w.len()];
    for dw_n in dw_parts {
        for (acc, v) in dw.iter_mut().zip(dw_n) {
            *acc = *acc + v;
        }
    }

    let mut grads = vec![
        Some(Tensor::new(inputs[0].shape(), dx)?),
        Some(Tensor::new(inputs[1].shape(), dw)?),
    ];
    if inputs.len() > 2 {
        let mut db = vec![E::zero(); c];
        for ni in 0..n {
            for (ci, db_c) in db.iter_mut().enumerate() {
                let g_plane = &g[(ni * c + ci) * ohw..][..ohw];
                *db_c = *db_c + g_plane.iter().fold(E::zero(), |a, &v| a + v);
            }
        }
        grads.push(Some(Tensor::new(&[c], db)?));
    }
    Ok(grads)
}

// ----------------------------------------------------------------- dense

fn dense_check<E: Scalar>(inputs: &[&Tensor<E>]) -> Result<(usize, usize, usize), TensorError> {
    let op = "dense";
    let x = inputs[0];
    let w = inputs[1];
    let [n, f] = match *x.shape() {
        [n, f] => [n, f],
        _ => return Err(shape_err(op, x.shape(), "input must be N x F")),
    };
    let [o, wf] = match *w.shape() {
        [o, f] => [o, f],
        _ => return Err(shape_err(op, w.shape(), "weight must be O x F")),
    };
    if wf != f {
        return Err(mismatch(op, x.shape(), w.shape()));
    }
    if let Some(b) = inputs.get(2) {
        if b.shape() != [o] {
            return Err(mismatch(op, w.shape(), b.shape()));
        }
    }
    Ok((n, f, o))
}

fn dense_forward<E: Scalar>(inputs: &[&Tensor<E>]) -> Result<Tensor<E>, TensorError> {
    let (n, f, o) = dense_check(inputs)?;
    let x = inputs[0].data();
    let w = inputs[1].data();
    let bias = inputs.get(2).map(|b| b.data());
    let mut out = vec![E::zero(); n * o];
    for ni in 0..n {
        let xrow = &x[ni * f..][..f];
        for oi in 0..o {
            let wrow = &w[oi * f..][..f];
            let mut acc = bias.map_or(E::zero(), |b| b[oi]);
            for (&xv, &wv) in xrow.iter().zip(wrow) {
                acc = acc + xv * wv;
            }
            out[ni * o + oi] = acc;
        }
    }
    Tensor::new(&[n, o], out)
}

fn dense_backward<E: Scalar>(
    inputs: &[&Tensor<E>],
    grad: &Tensor<E>,
) -> Result<Vec<Option<Tensor<E>>>, TensorError> {
    let (n, f, o) = dense_check(inputs)?;
    let x = inputs[0].data();
    let w = inputs[1].data();
    let g = grad.data();

    let mut dx = vec![E::zero(); n * f];
    let mut dw = vec![E::zero(); o * f];
    for ni in 0..n {
        let xrow = &x[ni * f..][..f];
        let dxrow = &mut dx[ni * f..][..f];
        for oi in 0..o {
            let gv = g[ni * o + oi];
            let wrow = &w[oi * f..][..f];
            let dwrow = &mut dw[oi * f..][..f];
            for fi in 0..f {
                dxrow[fi] = dxrow[fi] + gv * wrow[fi];
                dwrow[fi] = dwrow[fi] + gv * xrow[fi];
            }
        }
    }

    let mut grads = vec![
        Some(Tensor::new(inputs[0].shape(), dx)?),
        Some(Tensor::new(inputs[1].shape(), dw)?),
    ];
    if inputs.len() > 2 {
        let mut db = vec![E::zero(); o];
        for ni in 0..n {
            for (oi, db_o) in db.iter_mut().enumerate() {
                *db_o = *db_o + g[ni * o + oi];
            }
        }
        grads.push(Some(Tensor::new(&[o], db)?));
    }
    Ok(grads)
}

// ---------------------------------------------------------- reductions

fn spatial_mean_forward<E: Scalar>(
    op: &'static str,
    x: &Tensor<E>,
    keepdims: bool,
) -> Result<Tensor<E>, TensorError> {
    let [n, c, h, w] = match *x.shape() {
        [n, c, h, w] => [n, c, h, w],
        _ => return Err(shape_err(op, x.shape(), "input must be N x C x H x W")),
    };
    let hw = h * w;
    let inv = E::from_f64(1.0 / hw as f64);
    let data = x.data();
    let out: Vec<E> = (0..n * c)
        .map(|p| data[p * hw..(p + 1) * hw].iter().fold(E::zero(), |a, &v| a + v) * inv)
        .collect();
    let shape: &[usize] = if keepdims { &[n, c, 1, 1] } else { &[n, c] };
    Tensor::new(shape, out)
}

fn spatial_mean_backward<E: Scalar>(x: &Tensor<E>, grad: &Tensor<E>) -> Tensor<E> {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let hw = h * w;
    let inv = E::from_f64(1.0 / hw as f64);
    let g = grad.data();
    let mut dx = vec![E::zero(); x.numel()];
    for (p, chunk) in dx.chunks_mut(hw).enumerate() {
        let gv = g[p] * inv;
        chunk.fill(gv);
    }
    Tensor::new(x.shape(), dx).expect("same shape")
}

// ------------------------------------------------------ bilinear upsample

/// Source taps for one output axis under the align-corners=false convention.
fn bilinear_axis(in_extent: usize, out_extent: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_extent as f64 / out_extent as f64;
    (0..out_extent)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(in_extent - 1);
            let hi = (lo + 1).min(in_extent - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

fn bilinear_forward<E: Scalar>(
    x: &Tensor<E>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<E>, TensorError> {
    let op = "bilinear-upsample";
    let [n, c, h, w] = match *x.shape() {
        [n, c, h, w] => [n, c, h, w],
        _ => return Err(shape_err(op, x.shape(), "input must be N x C x H x W")),
    };
    if out_h == 0 || out_w == 0 {
        return Err(shape_err(op, x.shape(), "output extents must be nonzero"));
    }
    let ys = bilinear_axis(h, out_h);
    let xs = bilinear_axis(w, out_w);
    let data = x.data();
    let mut out = vec![E::zero(); n * c * out_h * out_w];
    for p in 0..n * c {
        let plane = &data[p * h * w..][..h * w];
        let out_plane = &mut out[p * out_h * out_w..][..out_h * out_w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let fy_e = E::from_f64(fy);
            let one_fy = E::from_f64(1.0 - fy);
            let row0 = &plane[y0 * w..][..w];
            let row1 = &plane[y1 * w..][..w];
            let orow = &mut out_plane[oy * out_w..][..out_w];
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let fx_e = E::from_f64(fx);
                let one_fx = E::from_f64(1.0 - fx);
                orow[ox] = one_fy * (one_fx * row0[x0] + fx_e * row0[x1])
                    + fy_e * (one_fx * row1[x0] + fx_e * row1[x1]);
            }
        }
    }
    Tensor::new(&[n, c, out_h, out_w], out)
}

fn bilinear_backward<E: Scalar>(
    x: &Tensor<E>,
    grad: &Tensor<E>,
    out_h: usize,
    out_w: usize,
) -> Tensor<E> {
    let [n, c, h, w] = match *x.shape() {
        [n, c, h, w] => [n, c, h, w],
        _ => unreachable!("validated in forward"),
    };
    let ys = bilinear_axis(h, out_h);
    let xs = bilinear_axis(w, out_w);
    let g = grad.data();
    let mut dx = vec![E::zero(); x.numel()];
    for p in 0..n * c {
        let g_plane = &g[p * out_h * out_w..][..out_h * out_w];
        let dx_plane = &mut dx[p * h * w..][..h * w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let fy_e = E::from_f64(fy);
            let one_fy = E::from_f64(1.0 - fy);
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let gv = g_plane[oy * out_w + ox];
                let fx_e = E::from_f64(fx);
                let one_fx = E::from_f64(1.0 - fx);
                dx_plane[y0 * w + x0] = dx_plane[y0 * w + x0] + gv * one_fy * one_fx;
                dx_plane[y0 * w + x1] = dx_plane[y0 * w + x1] + gv * one_fy * fx_e;
                dx_plane[y1 * w + x0] = dx_plane[y1 * w + x0] + gv * fy_e * one_fx;
                dx_plane[y1 * w + x1] = dx_plane[y1 * w + x1] + gv * fy_e * fx_e;
            }
        }
    }
    Tensor::new(x.shape(), dx).expect("same shape")
}

// -------------------------------------------------------------- softmax

fn softmax_rows_check<E: Scalar>(op: &'static str, x: &Tensor<E>) -> Result<(usize, usize), TensorError> {
    match *x.shape() {
        [n, k] if k > 0 => Ok((n, k)),
        _ => Err(shape_err(op, x.shape(), "input must be N x K")),
    }
}

fn softmax_forward<E: Scalar>(x: &Tensor<E>) -> Result<Tensor<E>, TensorError> {
    let (n, k) = softmax_rows_check("softmax", x)?;
    let data = x.data();
    let mut out = vec![E::zero(); n * k];
    for ni in 0..n {
        let row = &data[ni * k..][..k];
        let orow = &mut out[ni * k..][..k];
        let m = row.iter().fold(E::neg_infinity(), |a, &v| a.max(v));
        let mut sum = E::zero();
        for (o, &v) in orow.iter_mut().zip(row) {
            *o = (v - m).exp();
            sum = sum + *o;
        }
        for o in orow.iter_mut() {
            *o = *o / sum;
        }
    }
    Tensor::new(x.shape(), out)
}

fn softmax_backward<E: Scalar>(output: &Tensor<E>, grad: &Tensor<E>) -> Tensor<E> {
    let (n, k) = (output.shape()[0], output.shape()[1]);
    let s = output.data();
    let g = grad.data();
    let mut dx = vec![E::zero(); n * k];
    for ni in 0..n {
        let srow = &s[ni * k..][..k];
        let grow = &g[ni * k..][..k];
        let dot = srow.iter().zip(grow).fold(E::zero(), |a, (&sv, &gv)| a + sv * gv);
        for ((d, &sv), &gv) in dx[ni * k..][..k].iter_mut().zip(srow).zip(grow) {
            *d = sv * (gv - dot);
        }
    }
    Tensor::new(output.shape(), dx).expect("same shape")
}

// ---------------------------------------------- channel-weighted sum

fn channel_weighted_sum_forward<E: Scalar>(
    x: &Tensor<E>,
    weights: &[E],
) -> Result<Tensor<E>, TensorError> {
    let op = "channel-weighted-sum";
    let [n, k, h, w] = match *x.shape() {
        [n, k, h, w] => [n, k, h, w],
        _ => return Err(shape_err(op, x.shape(), "input must be N x K x H x W")),
    };
    if weights.len() != k {
        return Err(shape_err(op, x.shape(), format!("{} weights for {k} channels", weights.len())));
    }
    let hw = h * w;
    let data = x.data();
    let mut out = vec![E::zero(); n * hw];
    for ni in 0..n {
        let out_plane = &mut out[ni * hw..][..hw];
        for (ki, &wv) in weights.iter().enumerate() {
            let plane = &data[(ni * k + ki) * hw..][..hw];
            for (o, &v) in out_plane.iter_mut().zip(plane) {
                *o = *o + wv * v;
            }
        }
    }
    Tensor::new(&[n, 1, h, w], out)
}

fn channel_weighted_sum_backward<E: Scalar>(
    x: &Tensor<E>,
    grad: &Tensor<E>,
    weights: &[E],
) -> Tensor<E> {
    let [n, k, h, w] = match *x.shape() {
        [n, k, h, w] => [n, k, h, w],
        _ => unreachable!("validated in forward"),
    };
    let hw = h * w;
    let g = grad.data();
    let mut dx = vec![E::zero(); x.numel()];
    for ni in 0..n {
        let g_plane = &g[ni * hw..][..hw];
        for (ki, &wv) in weights.iter().enumerate() {
            let dplane = &mut dx[(ni * k + ki) * hw..][..hw];
            for (d, &gv) in dplane.iter_mut().zip(g_plane) {
                *d = wv * gv;
            }
        }
    }
    Tensor::new(x.shape(), dx).expect("same shape")
}

// ---------------------------------------------------------- cross entropy

fn cross_entropy_check<E: Scalar>(x: &Tensor<E>, labels: &[usize]) -> Result<(usize, usize), TensorError> {
    let op = "cross-entropy";
    let (n, k) = softmax_rows_check(op, x)?;
    if labels.len() != n {
        return Err(shape_err(op, x.shape(), format!("{} labels for batch of {n}", labels.len())));
    }
    for &l in labels {
        if l >= k {
            return Err(TensorError::LabelOutOfRange { op, label: l, classes: k });
        }
    }
    Ok((n, k))
}

/// Mean over the batch of -log softmax(logits)[label], computed via a
/// numerically stable log-sum-exp.
fn cross_entropy_forward<E: Scalar>(x: &Tensor<E>, labels: &[usize]) -> Result<Tensor<E>, TensorError> {
    let (n, k) = cross_entropy_check(x, labels)?;
    let data = x.data();
    let mut total = E::zero();
    for ni in 0..n {
        let row = &data[ni * k..][..k];
        let m = row.iter().fold(E::neg_infinity(), |a, &v| a.max(v));
        let sum_exp = row.iter().fold(E::zero(), |a, &v| a + (v - m).exp());
        let lse = m + sum_exp.ln();
        total = total + (lse - row[labels[ni]]);
    }
    Ok(Tensor::scalar(total / E::from_f64(n as f64)))
}

fn cross_entropy_backward<E: Scalar>(x: &Tensor<E>, labels: &[usize], grad: &Tensor<E>) -> Tensor<E> {
    let (n, k) = (x.shape()[0], x.shape()[1]);
    let data = x.data();
    let scale = grad.item() / E::from_f64(n as f64);
    let mut dx = vec![E::zero(); n * k];
    for ni in 0..n {
        let row = &data[ni * k..][..k];
        let m = row.iter().fold(E::neg_infinity(), |a, &v| a.max(v));
        let mut exps: Vec<E> = row.iter().map(|&v| (v - m).exp()).collect();
        let sum: E = exps.iter().fold(E::zero(), |a, &v| a + v);
        for e in exps.iter_mut() {
            *e = *e / sum;
        }
        let drow = &mut dx[ni * k..][..k];
        for (d, &p) in drow.iter_mut().zip(&exps) {
            *d = scale * p;
        }
        drow[labels[ni]] = drow[labels[ni]] - scale;
    }
    Tensor::new(x.shape(), dx).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::super::{Graph, Tensor};
    use crate::rng::SplitMix64;

    fn rand_tensor(shape: &[usize], rng: &mut SplitMix64) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
    }

    #[test]
    fn relu_definition() {
        let mut g = Graph::new();
        let x = g.input(Tensor::<f64>::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn conv2d_identity_kernel_preserves_image() {
        let mut rng = SplitMix64::new(1);
        let img = rand_tensor(&[1, 1, 6, 6], &mut rng);
        let mut kernel = vec![0.0; 9];
        kernel[4] = 1.0; // centered 3x3 identity
        let mut g = Graph::new();
        let x = g.input(img.clone());
        let w = g.input(Tensor::new(&[1, 1, 3, 3], kernel).unwrap());
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        for (a, b) in g.value(y).data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    /// Direct six-nested-loop convolution; the reference oracle for conv2d.
    fn conv2d_naive(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let [n, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let [oc, _, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wd + 2 * pad - kw) / stride + 1;
        let mut out = vec![0.0; n * oc * oh * ow];
        for ni in 0..n {
            for o in 0..oc {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ky in 0..kh {
                                for kx in 0..kw {
                                    let iy = oy * stride + ky;
                                    let ix = ox * stride + kx;
                                    if iy < pad || ix < pad {
                                        continue;
                                    }
                                    let (iy, ix) = (iy - pad, ix - pad);
                                    if iy >= h || ix >= wd {
                                        continue;
                                    }
                                    acc += x.data()[((ni * c + ci) * h + iy) * wd + ix]
                                        * w.data()[((o * c + ci) * kh + ky) * kw + kx];
                                }
                            }
                        }
                        out[((ni * oc + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        Tensor::new(&[n, oc, oh, ow], out).unwrap()
    }

    #[test]
    fn conv2d_matches_naive_loop_oracle() {
        let mut rng = SplitMix64::new(7);
        let x = rand_tensor(&[1, 1, 4, 4], &mut rng);
        let w = rand_tensor(&[2, 1, 3, 3], &mut rng);
        let expect = conv2d_naive(&x, &w, 1, 1);
        let mut g = Graph::new();
        let xi = g.input(x);
        let wi = g.input(w);
        let y = g.conv2d(xi, wi, None, 1, 1).unwrap();
        assert_eq!(g.value(y).shape(), expect.shape());
        for (a, b) in g.value(y).data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn conv2d_strided_matches_naive_loop_oracle() {
        let mut rng = SplitMix64::new(8);
        for &(stride, pad) in &[(2usize, 1usize), (2, 0), (1, 0)] {
            let x = rand_tensor(&[2, 3, 5, 5], &mut rng);
            let w = rand_tensor(&[4, 3, 3, 3], &mut rng);
            let expect = conv2d_naive(&x, &w, stride, pad);
            let mut g = Graph::new();
            let xi = g.input(x);
            let wi = g.input(w);
            let y = g.conv2d(xi, wi, None, stride, pad).unwrap();
            assert_eq!(g.value(y).shape(), expect.shape());
            for (a, b) in g.value(y).data().iter().zip(expect.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv2d_rejects_channel_mismatch() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[1, 2, 4, 4]));
        let w = g.input(Tensor::zeros(&[1, 3, 3, 3]));
        let err = g.conv2d(x, w, None, 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("conv2d") && msg.contains("1x2x4x4") && msg.contains("1x3x3x3"), "{msg}");
    }

    #[test]
    fn dense_matches_manual() {
        let mut g = Graph::new();
        let x = g.input(Tensor::<f64>::new(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap());
        let w = g.input(Tensor::<f64>::new(&[2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 1.0]).unwrap());
        let b = g.input(Tensor::<f64>::new(&[2], vec![0.5, -0.5]).unwrap());
        let y = g.dense(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[1.5, 4.5]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = SplitMix64::new(3);
        let x = rand_tensor(&[4, 5], &mut rng);
        let mut g = Graph::new();
        let xi = g.input(x);
        let y = g.softmax(xi).unwrap();
        for row in g.value(y).data().chunks(5) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn global_average_pool_means() {
        let x = Tensor::<f64>::from_fn(&[1, 2, 2, 2], |i| i as f64);
        let mut g = Graph::new();
        let xi = g.input(x);
        let y = g.global_avg_pool(xi).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 2]);
        assert_eq!(g.value(y).data(), &[1.5, 5.5]);
    }

    #[test]
    fn bilinear_upsample_constant_stays_constant() {
        let x = Tensor::<f64>::full(&[1, 1, 4, 4], 0.7);
        let mut g = Graph::new();
        let xi = g.input(x);
        let y = g.bilinear_upsample(xi, 16, 16).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_zero_logits_is_ln2() {
        let mut g = Graph::new();
        let x = g.input(Tensor::<f64>::zeros(&[3, 2]));
        let l = g.cross_entropy(x, &[0, 1, 0]).unwrap();
        assert!((g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut g = Graph::new();
        let x = g.input(Tensor::<f64>::zeros(&[1, 2]));
        assert!(g.cross_entropy(x, &[2]).is_err());
    }
}
