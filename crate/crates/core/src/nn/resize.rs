//! Bilinear resampling by a rational scale factor (half-pixel-center
//! convention). Upsampling by 4 restores full resolution after the pyramid;
//! downsampling by 2 fuses the half-resolution pyramid scale.

use ndarray::parallel::prelude::*;
use ndarray::Axis;

use super::T4;

/// Per-axis interpolation taps: indices of the two source rows/columns and
/// the weight of the second one.
fn taps(n_in: usize, n_out: usize, num: usize, den: usize) -> Vec<(usize, usize, f32)> {
    debug_assert_eq!(n_in * num % den, 0);
    debug_assert_eq!(n_in * num / den, n_out);
    (0..n_out)
        .map(|i| {
            let src = (i as f64 + 0.5) * den as f64 / num as f64 - 0.5;
            let s = src.clamp(0.0, (n_in - 1) as f64);
            let i0 = s.floor() as usize;
            let f = (s - i0 as f64) as f32;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, f)
        })
        .collect()
}

pub fn bilinear_forward(x: &T4, num: usize, den: usize) -> T4 {
    let (b, c, h, w) = x.dim();
    let (oh, ow) = (h * num / den, w * num / den);
    let ty = taps(h, oh, num, den);
    let tx = taps(w, ow, num, den);

    let mut y = T4::zeros((b, c, oh, ow));
    y.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(x.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut yb, xb)| {
            for ci in 0..c {
                let src = xb.index_axis(Axis(0), ci);
                let mut dst = yb.index_axis_mut(Axis(0), ci);
                for (oi, &(i0, i1, fy)) in ty.iter().enumerate() {
                    for (oj, &(j0, j1, fx)) in tx.iter().enumerate() {
                        let v = src[[i0, j0]] * (1.0 - fy) * (1.0 - fx)
                            + src[[i0, j1]] * (1.0 - fy) * fx
                            + src[[i1, j0]] * fy * (1.0 - fx)
                            + src[[i1, j1]] * fy * fx;
                        dst[[oi, oj]] = v;
                    }
                }
            }
        });
    y
}

pub fn bilinear_backward(x_dim: (usize, usize, usize, usize), num: usize, den: usize, dy: &T4) -> T4 {
    let (_, c, h, w) = x_dim;
    let (_, _, oh, ow) = dy.dim();
    let ty = taps(h, oh, num, den);
    let tx = taps(w, ow, num, den);

    let mut dx = T4::zeros(x_dim);
    dx.axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(dy.axis_iter(Axis(0)).into_par_iter())
        .for_each(|(mut dxb, dyb)| {
            for ci in 0..c {
                let g = dyb.index_axis(Axis(0), ci);
                let mut acc = dxb.index_axis_mut(Axis(0), ci);
                for (oi, &(i0, i1, fy)) in ty.iter().enumerate() {
                    for (oj, &(j0, j1, fx)) in tx.iter().enumerate() {
                        let v = g[[oi, oj]];
                        acc[[i0, j0]] += v * (1.0 - fy) * (1.0 - fx);
                        acc[[i0, j1]] += v * (1.0 - fy) * fx;
                        acc[[i1, j0]] += v * fy * (1.0 - fx);
                        acc[[i1, j1]] += v * fy * fx;
                    }
                }
            }
        });
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    #[test]
    fn upsampling_a_constant_stays_constant() {
        let x = Array::from_elem((1, 2, 4, 4), 2.5f32);
        let y = bilinear_forward(&x, 4, 1);
        assert_eq!(y.dim(), (1, 2, 16, 16));
        for v in y.iter() {
            assert!((v - 2.5).abs() < 1e-6);
        }
    }

    #[test]
    fn downsample_by_two_is_a_2x2_average() {
        let x = Array::from_shape_vec((1, 1, 2, 4), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0])
            .unwrap();
        let y = bilinear_forward(&x, 1, 2);
        assert_eq!(y.dim(), (1, 1, 1, 2));
        assert!((y[[0, 0, 0, 0]] - 3.5).abs() < 1e-6);
        assert!((y[[0, 0, 0, 1]] - 5.5).abs() < 1e-6);
    }

    #[test]
    fn backward_is_the_adjoint() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x = Array::from_shape_simple_fn((1, 1, 3, 4), || rng.gen_range(-1.0f32..1.0));
        let dy = Array::from_shape_simple_fn((1, 1, 12, 16), || rng.gen_range(-1.0f32..1.0));
        let y = bilinear_forward(&x, 4, 1);
        let dx = bilinear_backward(x.dim(), 4, 1, &dy);
        let lhs: f64 = y.iter().zip(dy.iter()).map(|(a, b)| (*a * *b) as f64).sum();
        let rhs: f64 = x.iter().zip(dx.iter()).map(|(a, b)| (*a * *b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-4);
    }
}
