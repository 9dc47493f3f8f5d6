//! Batch normalization.

use ndarray::Array1;

use super::T4;

pub const BN_EPS: f32 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.1;

/// Per-channel statistics the backward pass needs.
#[derive(Debug, Clone)]
pub struct NormSaved {
    pub mean: Array1<f32>,
    pub inv_std: Array1<f32>,
}

/// Updated running statistics produced by a training-mode forward pass. The
/// caller applies them; the kernel itself never mutates shared state.
#[derive(Debug, Clone)]
pub struct NormUpdate {
    pub running_mean: Array1<f32>,
    pub running_var: Array1<f32>,
}

pub fn norm_forward_train(
    x: &T4,
    scale: &Array1<f32>,
    shift: &Array1<f32>,
    running_mean: &Array1<f32>,
    running_var: &Array1<f32>,
) -> (T4, NormSaved, NormUpdate) {
    let (b, c, h, w) = x.dim();
    let n = (b * h * w) as f64;
    let xs = x.as_slice().expect("standard layout");
    let hw = h * w;

    let mut mean = Array1::<f32>::zeros(c);
    let mut var = Array1::<f32>::zeros(c);
    for ci in 0..c {
        let mut acc = 0.0f64;
        for bi in 0..b {
            let base = (bi * c + ci) * hw;
            for v in &xs[base..base + hw] {
                acc += *v as f64;
            }
        }
        let m = acc / n;
        let mut sq = 0.0f64;
        for bi in 0..b {
            let base = (bi * c + ci) * hw;
            for v in &xs[base..base + hw] {
                let d = *v as f64 - m;
                sq += d * d;
            }
        }
        mean[ci] = m as f32;
        var[ci] = (sq / n) as f32;
    }

    let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let mut y = x.clone();
    let ys = y.as_slice_mut().unwrap();
    for bi in 0..b {
        for ci in 0..c {
            let (m, is, g, s) = (mean[ci], inv_std[ci], scale[ci], shift[ci]);
            let base = (bi * c + ci) * hw;
            for v in &mut ys[base..base + hw] {
                *v = (*v - m) * is * g + s;
            }
        }
    }

    // Running averages track the unbiased variance.
    let bessel = if n > 1.0 { n / (n - 1.0) } else { 1.0 } as f32;
    let new_mean = running_mean * (1.0 - BN_MOMENTUM) + &mean * BN_MOMENTUM;
    let new_var = running_var * (1.0 - BN_MOMENTUM) + &(var.mapv(|v| v * bessel)) * BN_MOMENTUM;
    (
        y,
        NormSaved { mean, inv_std },
        NormUpdate { running_mean: new_mean, running_var: new_var },
    )
}

pub fn norm_forward_eval(
    x: &T4,
    scale: &Array1<f32>,
    shift: &Array1<f32>,
    running_mean: &Array1<f32>,
    running_var: &Array1<f32>,
) -> (T4, NormSaved) {
    let (b, c, h, w) = x.dim();
    let hw = h * w;
    let inv_std = running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
    let mut y = x.clone();
    let ys = y.as_slice_mut().unwrap();
    for bi in 0..b {
        for ci in 0..c {
            let (m, is, g, s) = (running_mean[ci], inv_std[ci], scale[ci], shift[ci]);
            let base = (bi * c + ci) * hw;
            for v in &mut ys[base..base + hw] {
                *v = (*v - m) * is * g + s;
            }
        }
    }
    (y, NormSaved { mean: running_mean.clone(), inv_std })
}

/// Backward through training-mode normalization (gradients flow through the
/// batch statistics). Returns `(dx, dscale, dshift)`.
pub fn norm_backward_train(
    x: &T4,
    scale: &Array1<f32>,
    saved: &NormSaved,
    dy: &T4,
) -> (T4, Array1<f32>, Array1<f32>) {
    let (b, c, h, w) = x.dim();
    let n = (b * h * w) as f64;
    let hw = h * w;
    let xs = x.as_slice().unwrap();
    let dys = dy.as_slice().unwrap();

    let mut dscale = Array1::<f32>::zeros(c);
    let mut dshift = Array1::<f32>::zeros(c);
    let mut dx = T4::zeros(x.dim());
    let dxs = dx.as_slice_mut().unwrap();

    for ci in 0..c {
        let m = saved.mean[ci] as f64;
        let is = saved.inv_std[ci] as f64;
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for bi in 0..b {
            let base = (bi * c + ci) * hw;
            for i in base..base + hw {
                let xhat = (xs[i] as f64 - m) * is;
                sum_dy += dys[i] as f64;
                sum_dy_xhat += dys[i] as f64 * xhat;
            }
        }
        dscale[ci] = sum_dy_xhat as f32;
        dshift[ci] = sum_dy as f32;
        let g = scale[ci] as f64;
        let coeff = g * is / n;
        for bi in 0..b {
            let base = (bi * c + ci) * hw;
            for i in base..base + hw {
                let xhat = (xs[i] as f64 - m) * is;
                dxs[i] = (coeff * (n * dys[i] as f64 - sum_dy - xhat * sum_dy_xhat)) as f32;
            }
        }
    }
    (dx, dscale, dshift)
}

/// Backward through evaluation-mode normalization (statistics are constants).
pub fn norm_backward_eval(
    x: &T4,
    scale: &Array1<f32>,
    saved: &NormSaved,
    dy: &T4,
) -> (T4, Array1<f32>, Array1<f32>) {
    let (b, c, h, w) = x.dim();
    let hw = h * w;
    let xs = x.as_slice().unwrap();
    let dys = dy.as_slice().unwrap();
    let mut dscale = Array1::<f32>::zeros(c);
    let mut dshift = Array1::<f32>::zeros(c);
    let mut dx = T4::zeros(x.dim());
    let dxs = dx.as_slice_mut().unwrap();
    for ci in 0..c {
        let m = saved.mean[ci];
        let is = saved.inv_std[ci];
        let g = scale[ci];
        let mut ds = 0.0f64;
        let mut db = 0.0f64;
        for bi in 0..b {
            let base = (bi * c + ci) * hw;
            for i in base..base + hw {
                let xhat = (xs[i] - m) * is;
                ds += (dys[i] * xhat) as f64;
                db += dys[i] as f64;
                dxs[i] = dys[i] * g * is;
            }
        }
        dscale[ci] = ds as f32;
        dshift[ci] = db as f32;
    }
    (dx, dscale, dshift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_mode_normalizes_to_zero_mean_unit_var() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array::from_shape_simple_fn((4, 3, 5, 5), || rng.gen_range(-2.0f32..5.0));
        let scale = Array1::ones(3);
        let shift = Array1::zeros(3);
        let (y, _, _) = norm_forward_train(&x, &scale, &shift, &Array1::zeros(3), &Array1::ones(3));
        for ci in 0..3 {
            let ch = y.index_axis(ndarray::Axis(1), ci);
            let n = ch.len() as f64;
            let mean: f64 = ch.iter().map(|v| *v as f64).sum::<f64>() / n;
            let var: f64 = ch.iter().map(|v| (*v as f64 - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "var {var}");
        }
    }

    #[test]
    fn train_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array::from_shape_simple_fn((2, 2, 3, 3), || rng.gen_range(-1.0f32..1.0));
        let scale = Array1::from_vec(vec![1.3, 0.7]);
        let shift = Array1::from_vec(vec![0.1, -0.2]);
        let dy = Array::from_shape_simple_fn((2, 2, 3, 3), || rng.gen_range(-1.0f32..1.0));
        let rm = Array1::zeros(2);
        let rv = Array1::ones(2);
        let loss = |x: &T4| -> f64 {
            let (y, _, _) = norm_forward_train(x, &scale, &shift, &rm, &rv);
            y.iter().zip(dy.iter()).map(|(a, b)| *a as f64 * *b as f64).sum()
        };
        let (_, saved, _) = norm_forward_train(&x, &scale, &shift, &rm, &rv);
        let (dx, _, _) = norm_backward_train(&x, &scale, &saved, &dy);
        let eps = 1e-3f32;
        for &idx in &[[0, 0, 1, 2], [1, 1, 0, 0], [0, 1, 2, 2]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * eps as f64);
            assert!(
                (fd - dx[idx] as f64).abs() < 5e-3,
                "dx at {idx:?}: fd {fd} analytic {}",
                dx[idx]
            );
        }
    }

    #[test]
    fn eval_mode_is_an_affine_map_of_running_stats() {
        let x = Array::from_elem((1, 1, 2, 2), 3.0f32);
        let (y, _) = norm_forward_eval(
            &x,
            &Array1::from_vec(vec![2.0]),
            &Array1::from_vec(vec![1.0]),
            &Array1::from_vec(vec![1.0]),
            &Array1::from_vec(vec![4.0]),
        );
        // (3 - 1) / sqrt(4 + eps) * 2 + 1 ~= 3.0
        for v in y.iter() {
            assert!((v - 3.0).abs() < 1e-4);
        }
    }
}
