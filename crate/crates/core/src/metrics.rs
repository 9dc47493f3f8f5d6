//! Disparity quality metrics: end-point error and D1.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

/// Mean absolute disparity error in pixels over mask-true pixels. `None` when
/// no pixel is valid; an empty mask is not a zero-error image.
pub fn epe(pred: &ArrayView2<f32>, gt: &ArrayView2<f32>, mask: &ArrayView2<bool>) -> Option<f64> {
    debug_assert_eq!(pred.dim(), gt.dim());
    debug_assert_eq!(pred.dim(), mask.dim());
    let mut total = 0.0f64;
    let mut n = 0usize;
    for ((p, g), m) in pred.iter().zip(gt.iter()).zip(mask.iter()) {
        if *m {
            total += (*p - *g).abs() as f64;
            n += 1;
        }
    }
    (n > 0).then(|| total / n as f64)
}

/// Percentage of valid pixels whose error exceeds 3 px (strict inequality).
pub fn d1(pred: &ArrayView2<f32>, gt: &ArrayView2<f32>, mask: &ArrayView2<bool>) -> Option<f64> {
    let mut bad = 0usize;
    let mut n = 0usize;
    for ((p, g), m) in pred.iter().zip(gt.iter()).zip(mask.iter()) {
        if *m {
            if (*p - *g).abs() > 3.0 {
                bad += 1;
            }
            n += 1;
        }
    }
    (n > 0).then(|| 100.0 * bad as f64 / n as f64)
}

/// The official benchmark variant of D1: a pixel is an outlier only when its
/// error exceeds 3 px AND 5% of the true disparity. Reported for comparison
/// runs; the plain `>3 px` definition above is the one used everywhere else.
pub fn d1_official(
    pred: &ArrayView2<f32>,
    gt: &ArrayView2<f32>,
    mask: &ArrayView2<bool>,
) -> Option<f64> {
    let mut bad = 0usize;
    let mut n = 0usize;
    for ((p, g), m) in pred.iter().zip(gt.iter()).zip(mask.iter()) {
        if *m {
            let e = (*p - *g).abs();
            if e > 3.0 && e > 0.05 * g.abs() {
                bad += 1;
            }
            n += 1;
        }
    }
    (n > 0).then(|| 100.0 * bad as f64 / n as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub index: usize,
    pub epe: Option<f64>,
    pub d1: Option<f64>,
    pub valid_pixels: usize,
}

/// Aggregated metrics over a dataset, pixel-weighted, with a per-image
/// breakdown.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub epe: Option<f64>,
    pub d1: Option<f64>,
    pub valid_pixel_count: usize,
    pub per_image: Vec<ImageMetrics>,
    #[serde(skip)]
    abs_err_sum: f64,
    #[serde(skip)]
    outlier_count: usize,
}

impl MetricReport {
    pub fn new() -> Self {
        MetricReport::default()
    }

    pub fn add_image(
        &mut self,
        index: usize,
        pred: &ArrayView2<f32>,
        gt: &ArrayView2<f32>,
        mask: &ArrayView2<bool>,
    ) {
        let mut n = 0usize;
        let mut err = 0.0f64;
        let mut bad = 0usize;
        for ((p, g), m) in pred.iter().zip(gt.iter()).zip(mask.iter()) {
            if *m {
                let e = (*p - *g).abs();
                err += e as f64;
                if e > 3.0 {
                    bad += 1;
                }
                n += 1;
            }
        }
        self.per_image.push(ImageMetrics {
            index,
            epe: (n > 0).then(|| err / n as f64),
            d1: (n > 0).then(|| 100.0 * bad as f64 / n as f64),
            valid_pixels: n,
        });
        self.abs_err_sum += err;
        self.outlier_count += bad;
        self.valid_pixel_count += n;
        if self.valid_pixel_count > 0 {
            self.epe = Some(self.abs_err_sum / self.valid_pixel_count as f64);
            self.d1 = Some(100.0 * self.outlier_count as f64 / self.valid_pixel_count as f64);
        }
    }
}
