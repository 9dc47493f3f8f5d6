//! 2-D convolution and transposed convolution via im2col + GEMM.
//!
//! Weight layouts follow the usual convention: convolution kernels are
//! `(out, in, k, k)`, transposed-convolution kernels `(in, out, k, k)`.

use ndarray::parallel::prelude::*;
use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView3, Axis};

use super::T4;

pub fn conv_out_size(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// Lowers `k`x`k` patches of a `(c, h, w)` sample to a `(c*k*k, oh*ow)` matrix.
fn im2col(
    x: &[f32],
    (c, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
) -> Array2<f32> {
    let mut cols = Array2::<f32>::zeros((c * k * k, oh * ow));
    let cs = cols.as_slice_mut().unwrap();
    for ci in 0..c {
        for di in 0..k {
            for dj in 0..k {
                let row = (ci * k + di) * k + dj;
                let ro = row * oh * ow;
                for oi in 0..oh {
                    let ii = (oi * stride + di) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let xrow = ci * h * w + ii as usize * w;
                    let dst = ro + oi * ow;
                    for oj in 0..ow {
                        let jj = (oj * stride + dj) as isize - pad as isize;
                        if jj >= 0 && jj < w as isize {
                            cs[dst + oj] = x[xrow + jj as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates a `(c*k*k, ph*pw)` patch matrix back
/// into a `(c, h, w)` buffer. Also the scatter step of transposed convolution.
fn col2im_add(
    cols: &ArrayView2<f32>,
    out: &mut [f32],
    (c, h, w): (usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    (ph, pw): (usize, usize),
) {
    let cs = cols.as_slice().expect("standard layout");
    for ci in 0..c {
        for di in 0..k {
            for dj in 0..k {
                let row = (ci * k + di) * k + dj;
                let ro = row * ph * pw;
                for pi in 0..ph {
                    let ii = (pi * stride + di) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    let orow = ci * h * w + ii as usize * w;
                    let src = ro + pi * pw;
                    for pj in 0..pw {
                        let jj = (pj * stride + dj) as isize - pad as isize;
                        if jj >= 0 && jj < w as isize {
                            out[orow + jj as usize] += cs[src + pj];
                        }
                    }
                }
            }
        }
    }
}

fn sample_slice<'a>(x: &ArrayView3<'a, f32>) -> &'a [f32] {
    x.to_slice().expect("standard layout")
}

pub fn conv2d_forward(x: &T4, w: &Array4<f32>, b: &Array1<f32>, stride: usize, pad: usize) -> T4 {
    let (bs, cin, h, win) = x.dim();
    let (cout, wcin, k, _) = w.dim();
    assert_eq!(cin, wcin, "conv input channels");
    let oh = conv_out_size(h, k, stride, pad);
    let ow = conv_out_size(win, k, stride, pad);
    let wmat = w.view().into_shape_with_order((cout, cin * k * k)).unwrap();

    let mut y = T4::zeros((bs, cout, oh, ow));
    y.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(x.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut yb, xb)| {
            let cols = im2col(sample_slice(&xb), (cin, h, win), k, stride, pad, (oh, ow));
            let mut out = wmat.dot(&cols);
            for (o, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
                row += b[o];
            }
            yb.assign(&out.into_shape_with_order((cout, oh, ow)).unwrap());
        });
    y
}

/// Returns `(dx, dw, db)`.
pub fn conv2d_backward(
    x: &T4,
    w: &Array4<f32>,
    stride: usize,
    pad: usize,
    dy: &T4,
) -> (T4, Array4<f32>, Array1<f32>) {
    let (bs, cin, h, win) = x.dim();
    let (cout, _, k, _) = w.dim();
    let (_, _, oh, ow) = dy.dim();
    let wmat = w.view().into_shape_with_order((cout, cin * k * k)).unwrap();

    let mut dx = T4::zeros((bs, cin, h, win));
    let dw_parts: Vec<Array2<f32>> = dx
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(x.axis_iter(Axis(0)).into_par_iter())
        .zip(dy.axis_iter(Axis(0)).into_par_iter())
        .map(|((mut dxb, xb), dyb)| {
            let dymat = dyb.into_shape_with_order((cout, oh * ow)).unwrap();
            // dw contribution: dY (O, ohw) x cols^T (ohw, IKK)
            let cols = im2col(sample_slice(&xb), (cin, h, win), k, stride, pad, (oh, ow));
            let dwb = dymat.dot(&cols.t());
            // dx: W^T (IKK, O) x dY (O, ohw), scattered back
            let dcols = wmat.t().dot(&dymat);
            let mut buf = vec![0.0f32; cin * h * win];
            col2im_add(&dcols.view(), &mut buf, (cin, h, win), k, stride, pad, (oh, ow));
            dxb.assign(
                &ndarray::ArrayView3::from_shape((cin, h, win), &buf).unwrap(),
            );
            dwb
        })
        .collect();

    // Fixed-order reductions keep gradients bit-identical across thread counts.
    let mut dwmat = Array2::<f32>::zeros((cout, cin * k * k));
    for part in &dw_parts {
        dwmat += part;
    }
    let dw = dwmat.into_shape_with_order((cout, cin, k, k)).unwrap();
    let db = super::sum_per_channel(dy);
    (dx, dw, db)
}

/// Transposed convolution. `out_hw` is the exact output size; the layer picks
/// it from its skip partner so odd encoder sizes invert cleanly.
pub fn transpose_conv2d_forward(
    x: &T4,
    w: &Array4<f32>,
    b: &Array1<f32>,
    stride: usize,
    pad: usize,
    out_hw: (usize, usize),
) -> T4 {
    let (bs, cin, h, win) = x.dim();
    let (wcin, cout, k, _) = w.dim();
    assert_eq!(cin, wcin, "transpose conv input channels");
    let (oh, ow) = out_hw;
    debug_assert_eq!(conv_out_size(oh, k, stride, pad), h, "output size inverts to input");
    let wmat = w.view().into_shape_with_order((cin, cout * k * k)).unwrap();

    let mut y = T4::zeros((bs, cout, oh, ow));
    y.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(x.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut yb, xb)| {
            let xmat = xb.into_shape_with_order((cin, h * win)).unwrap();
            let g = wmat.t().dot(&xmat); // (O*k*k, h*w)
            let mut buf = vec![0.0f32; cout * oh * ow];
            col2im_add(&g.view(), &mut buf, (cout, oh, ow), k, stride, pad, (h, win));
            let mut out = Array2::from_shape_vec((cout, oh * ow), buf).unwrap();
            for (o, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
                row += b[o];
            }
            yb.assign(&out.into_shape_with_order((cout, oh, ow)).unwrap());
        });
    y
}

/// Returns `(dx, dw, db)` for a transposed convolution.
pub fn transpose_conv2d_backward(
    x: &T4,
    w: &Array4<f32>,
    stride: usize,
    pad: usize,
    dy: &T4,
) -> (T4, Array4<f32>, Array1<f32>) {
    let (bs, cin, h, win) = x.dim();
    let (_, cout, k, _) = w.dim();
    let (_, _, oh, ow) = dy.dim();
    let wmat = w.view().into_shape_with_order((cin, cout * k * k)).unwrap();

    let mut dx = T4::zeros((bs, cin, h, win));
    let dw_parts: Vec<Array2<f32>> = dx
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(x.axis_iter(Axis(0)).into_par_iter())
        .zip(dy.axis_iter(Axis(0)).into_par_iter())
        .map(|((mut dxb, xb), dyb)| {
            // The forward scatter is the adjoint of patch extraction over dy.
            let cols = im2col(sample_slice(&dyb), (cout, oh, ow), k, stride, pad, (h, win));
            let dxm = wmat.dot(&cols); // (I, h*w)
            dxb.assign(&dxm.into_shape_with_order((cin, h, win)).unwrap());
            let xmat = xb.into_shape_with_order((cin, h * win)).unwrap();
            xmat.dot(&cols.t()) // (I, O*k*k)
        })
        .collect();

    let mut dwmat = Array2::<f32>::zeros((cin, cout * k * k));
    for part in &dw_parts {
        dwmat += part;
    }
    let dw = dwmat.into_shape_with_order((cin, cout, k, k)).unwrap();
    let db = super::sum_per_channel(dy);
    (dx, dw, db)
}
