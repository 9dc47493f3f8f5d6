//! Numeric kernels: forward and backward passes for every layer kind.
//!
//! All kernels are deterministic. Parallelism only ever splits work along the
//! batch axis into disjoint writes, and cross-sample reductions (weight
//! gradients, batch statistics) run in fixed sample order, so results are
//! bit-identical regardless of thread count.

pub mod conv;
pub mod norm;
pub mod resize;
pub mod softargmax;

use ndarray::{Array1, Array4};

/// Activations and images: `(batch, channels, height, width)`.
pub type T4 = Array4<f32>;

pub fn relu_forward(x: &T4) -> T4 {
    x.mapv(|v| if v > 0.0 { v } else { 0.0 })
}

/// `out` is the saved forward output; the kink at zero routes no gradient.
pub fn relu_backward(out: &T4, dy: &T4) -> T4 {
    let mut dx = dy.clone();
    dx.zip_mut_with(out, |g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
    dx
}

pub fn add_forward(a: &T4, b: &T4) -> T4 {
    a + b
}

pub fn concat_forward(a: &T4, b: &T4) -> T4 {
    ndarray::concatenate(ndarray::Axis(1), &[a.view(), b.view()]).expect("concat shapes agree")
}

/// Splits the gradient of a channel concatenation back into its two parts.
pub fn concat_backward(dy: &T4, c_first: usize) -> (T4, T4) {
    let da = dy.slice(ndarray::s![.., ..c_first, .., ..]).to_owned();
    let db = dy.slice(ndarray::s![.., c_first.., .., ..]).to_owned();
    (da, db)
}

/// Sum over batch and spatial axes, one value per channel.
pub fn sum_per_channel(x: &T4) -> Array1<f32> {
    let (b, c, h, w) = x.dim();
    let mut out = Array1::<f32>::zeros(c);
    let xs = x.as_slice().expect("standard layout");
    let hw = h * w;
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * hw;
            let mut acc = 0.0f32;
            for v in &xs[base..base + hw] {
                acc += v;
            }
            out[ci] += acc;
        }
    }
    out
}
