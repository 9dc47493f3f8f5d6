//! Soft-argmax: per-pixel expectation over the softmax of disparity-bin
//! logits, with bin centers 0..d_max-1.
//!
//! Per-pixel math runs in f64 (max-subtracted, so arbitrary finite logits are
//! safe); the result is a convex combination of the bin centers and therefore
//! always lies in `[0, d_max - 1]`.

use ndarray::parallel::prelude::*;
use ndarray::{Array3, Axis};

use super::T4;
use crate::error::{Error, Result};

/// Returns `(disparity, probabilities)`. The probabilities are kept for the
/// backward pass.
pub fn soft_argmax_forward(logits: &T4) -> Result<(Array3<f32>, T4)> {
    let full = soft_argmax_forward_f64(logits)?;
    let (b, d, h, w) = logits.dim();
    let mut disp = Array3::<f32>::zeros((b, h, w));
    disp.iter_mut().zip(full.disparity.iter()).for_each(|(o, v)| *o = *v as f32);
    let mut probs = T4::zeros((b, d, h, w));
    probs.iter_mut().zip(full.probs.iter()).for_each(|(o, v)| *o = *v as f32);
    Ok((disp, probs))
}

/// Full-precision result of the expectation.
pub struct SoftArgmaxF64 {
    pub disparity: Array3<f64>,
    pub probs: ndarray::Array4<f64>,
}

/// The expectation at f64 precision (the f32 entry point is this computation
/// rounded to storage precision).
pub fn soft_argmax_forward_f64(logits: &T4) -> Result<SoftArgmaxF64> {
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite logit {bad} in soft-argmax input")));
    }
    let (b, d, h, w) = logits.dim();
    let mut disp = Array3::<f64>::zeros((b, h, w));
    let mut probs = ndarray::Array4::<f64>::zeros((b, d, h, w));

    disp.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(probs.axis_iter_mut(Axis(0)).into_par_iter())
        .zip(logits.axis_iter(Axis(0)).into_par_iter())
        .for_each(|((mut db, mut pb), lb)| {
            let ls = lb.to_slice().expect("standard layout");
            let hw = h * w;
            for yx in 0..hw {
                let mut m = f64::NEG_INFINITY;
                for di in 0..d {
                    m = m.max(ls[di * hw + yx] as f64);
                }
                let mut sum = 0.0f64;
                let mut expect = 0.0f64;
                for di in 0..d {
                    let e = ((ls[di * hw + yx] as f64) - m).exp();
                    sum += e;
                    expect += di as f64 * e;
                }
                db[[yx / w, yx % w]] = expect / sum;
                for di in 0..d {
                    let e = ((ls[di * hw + yx] as f64) - m).exp();
                    pb[[di, yx / w, yx % w]] = e / sum;
                }
            }
        });
    Ok(SoftArgmaxF64 { disparity: disp, probs })
}

/// Gradient of the expectation with respect to the logits:
/// `d D / d l_i = p_i * (i - D)`.
pub fn soft_argmax_backward(probs: &T4, disp: &Array3<f32>, d_disp: &Array3<f32>) -> T4 {
    let (b, d, h, w) = probs.dim();
    let mut dl = T4::zeros((b, d, h, w));
    dl.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(probs.axis_iter(Axis(0)).into_par_iter())
        .zip(disp.axis_iter(Axis(0)).into_par_iter())
        .zip(d_disp.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(((mut dlb, pb), db), gb)| {
            for di in 0..d {
                for yi in 0..h {
                    for xi in 0..w {
                        dlb[[di, yi, xi]] =
                            gb[[yi, xi]] * pb[[di, yi, xi]] * (di as f32 - db[[yi, xi]]);
                    }
                }
            }
        });
    dl
}
