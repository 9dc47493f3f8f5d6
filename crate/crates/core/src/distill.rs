//! Knowledge distillation: logits-based losses between student and teacher,
//! the supervised smooth-L1 loss, the temperature schedule, and the three
//! supervision-signal modes.
//!
//! Loss scalars are accumulated in f64; gradients are produced at f32 for the
//! training loop. Per-pixel reductions sum over the bin axis and average over
//! pixels and batch, so magnitudes are resolution-independent.

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DisparityMap, Logits};
use crate::nn::softargmax;
use crate::nn::T4;

/// Which signal supervises the student.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalMode {
    GtOnly,
    KdPlusGt,
    KdOnly,
}

/// Distance between tempered student and teacher distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Divergence {
    L1,
    Kl,
}

/// Distillation setup. The default is the winning combination: knowledge-only
/// supervision with the L1 divergence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DistillConfig {
    pub signal_mode: SignalMode,
    pub divergence: Divergence,
    /// Weight of the supervised term in the combined mode; unused in pure modes.
    pub gt_weight: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig { signal_mode: SignalMode::KdOnly, divergence: Divergence::L1, gt_weight: 0.5 }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gt_weight) {
            return Err(Error::Config(format!("gt_weight {} outside [0, 1]", self.gt_weight)));
        }
        Ok(())
    }
}

/// Temperature grows linearly over the epochs of a training phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub t_start: f64,
    pub t_end: f64,
    pub total_epochs: usize,
}

impl TemperatureSchedule {
    pub fn new(total_epochs: usize) -> Self {
        TemperatureSchedule { t_start: 0.5, t_end: 1.0, total_epochs }
    }
}

/// Linear interpolation from `t_start` at epoch 0 to `t_end` at the last
/// epoch, constant within an epoch. A one-epoch phase stays at `t_start`.
pub fn temperature_at(schedule: &TemperatureSchedule, epoch: usize) -> Result<f64> {
    if epoch >= schedule.total_epochs {
        return Err(Error::Domain(format!(
            "epoch {epoch} outside schedule of {} epochs",
            schedule.total_epochs
        )));
    }
    if schedule.total_epochs == 1 {
        return Ok(schedule.t_start);
    }
    let f = epoch as f64 / (schedule.total_epochs - 1) as f64;
    Ok(schedule.t_start + (schedule.t_end - schedule.t_start) * f)
}

fn check_pair(p: &Logits, q: &Logits, t: f64) -> Result<()> {
    if t <= 0.0 {
        return Err(Error::Domain(format!("temperature must be positive, got {t}")));
    }
    if p.0.dim() != q.0.dim() {
        return Err(Error::shape(
            "channel",
            format!("student logits {:?} vs teacher logits {:?}", p.0.dim(), q.0.dim()),
        ));
    }
    Ok(())
}

/// Tempered softmax of one pixel's bins, in f64.
fn tempered_softmax(ls: &[f64], hw: usize, yx: usize, d: usize, t: f64, out: &mut [f64]) {
    let mut m = f64::NEG_INFINITY;
    for di in 0..d {
        m = m.max(ls[di * hw + yx] / t);
    }
    let mut sum = 0.0;
    for di in 0..d {
        let e = (ls[di * hw + yx] / t - m).exp();
        out[di] = e;
        sum += e;
    }
    for v in out.iter_mut() {
        *v /= sum;
    }
}

fn per_pixel_loss<F>(
    ps: &[f64],
    qs: &[f64],
    (b, d, h, w): (usize, usize, usize, usize),
    t: f64,
    mut f: F,
) -> f64
where
    F: FnMut(&[f64], &[f64]) -> f64,
{
    let hw = h * w;
    let mut sp = vec![0.0f64; d];
    let mut sq = vec![0.0f64; d];
    let mut total = 0.0f64;
    for bi in 0..b {
        let pb = &ps[bi * d * hw..(bi + 1) * d * hw];
        let qb = &qs[bi * d * hw..(bi + 1) * d * hw];
        for yx in 0..hw {
            tempered_softmax(pb, hw, yx, d, t, &mut sp);
            tempered_softmax(qb, hw, yx, d, t, &mut sq);
            total += f(&sp, &sq);
        }
    }
    total / (b * hw) as f64
}

fn widen(x: &T4) -> Vec<f64> {
    x.as_slice().expect("standard layout").iter().map(|v| *v as f64).collect()
}

fn l1_term(sp: &[f64], sq: &[f64]) -> f64 {
    sp.iter().zip(sq).map(|(a, b)| (a - b).abs()).sum()
}

fn kl_term(sp: &[f64], sq: &[f64]) -> f64 {
    sp.iter().zip(sq).map(|(a, b)| if *b > 0.0 { b * (b.ln() - a.ln()) } else { 0.0 }).sum()
}

/// L1 distance between the temperature-`t` softmaxes of student logits `p`
/// and teacher logits `q`, summed over bins and averaged over pixels. The
/// teacher is a constant: no gradient flows to `q`.
pub fn kd_loss(p: &Logits, q: &Logits, t: f64) -> Result<f64> {
    check_pair(p, q, t)?;
    Ok(per_pixel_loss(&widen(&p.0), &widen(&q.0), p.0.dim(), t, l1_term))
}

/// Kullback-Leibler divergence `KL(softmax(q/t) || softmax(p/t))`, teacher as
/// the reference distribution, same reduction as [`kd_loss`].
pub fn kl_loss(p: &Logits, q: &Logits, t: f64) -> Result<f64> {
    check_pair(p, q, t)?;
    Ok(per_pixel_loss(&widen(&p.0), &widen(&q.0), p.0.dim(), t, kl_term))
}

/// [`kd_loss`] on full-precision logits: the same computation without the f32
/// storage quantization, for verification against hand-computed values.
pub fn kd_loss_f64(p: &ndarray::Array4<f64>, q: &ndarray::Array4<f64>, t: f64) -> Result<f64> {
    if t <= 0.0 {
        return Err(Error::Domain(format!("temperature must be positive, got {t}")));
    }
    if p.dim() != q.dim() {
        return Err(Error::shape("channel", "student/teacher logits differ"));
    }
    Ok(per_pixel_loss(p.as_slice().unwrap(), q.as_slice().unwrap(), p.dim(), t, l1_term))
}

/// [`kl_loss`] on full-precision logits.
pub fn kl_loss_f64(p: &ndarray::Array4<f64>, q: &ndarray::Array4<f64>, t: f64) -> Result<f64> {
    if t <= 0.0 {
        return Err(Error::Domain(format!("temperature must be positive, got {t}")));
    }
    if p.dim() != q.dim() {
        return Err(Error::shape("channel", "student/teacher logits differ"));
    }
    Ok(per_pixel_loss(p.as_slice().unwrap(), q.as_slice().unwrap(), p.dim(), t, kl_term))
}

fn divergence_loss_grad(
    p: &Logits,
    q: &Logits,
    t: f64,
    divergence: Divergence,
) -> Result<(f64, T4)> {
    check_pair(p, q, t)?;
    let (b, d, h, w) = p.0.dim();
    let hw = h * w;
    let ps = p.0.as_slice().expect("standard layout");
    let qs = q.0.as_slice().expect("standard layout");
    let softmax32 = |ls: &[f32], yx: usize, out: &mut [f64]| {
        let mut m = f64::NEG_INFINITY;
        for di in 0..d {
            m = m.max(ls[di * hw + yx] as f64 / t);
        }
        let mut sum = 0.0;
        for di in 0..d {
            let e = (ls[di * hw + yx] as f64 / t - m).exp();
            out[di] = e;
            sum += e;
        }
        for v in out.iter_mut() {
            *v /= sum;
        }
    };
    let mut grad = T4::zeros((b, d, h, w));
    let gs = grad.as_slice_mut().unwrap();
    let mut sp = vec![0.0f64; d];
    let mut sq = vec![0.0f64; d];
    let mut total = 0.0f64;
    let norm = 1.0 / (b * hw) as f64;
    for bi in 0..b {
        let off = bi * d * hw;
        for yx in 0..hw {
            softmax32(&ps[off..off + d * hw], yx, &mut sp);
            softmax32(&qs[off..off + d * hw], yx, &mut sq);
            match divergence {
                Divergence::L1 => {
                    let mut dot = 0.0f64;
                    for i in 0..d {
                        let s = (sp[i] - sq[i]).signum();
                        total += (sp[i] - sq[i]).abs();
                        dot += s * sp[i];
                    }
                    for j in 0..d {
                        let sgn = (sp[j] - sq[j]).signum();
                        gs[off + j * hw + yx] = ((sp[j] * (sgn - dot)) / t * norm) as f32;
                    }
                }
                Divergence::Kl => {
                    for i in 0..d {
                        if sq[i] > 0.0 {
                            total += sq[i] * (sq[i].ln() - sp[i].ln());
                        }
                    }
                    for j in 0..d {
                        gs[off + j * hw + yx] = ((sp[j] - sq[j]) / t * norm) as f32;
                    }
                }
            }
        }
    }
    Ok((total * norm, grad))
}

/// [`kd_loss`] with its gradient with respect to the student logits.
pub fn kd_loss_grad(p: &Logits, q: &Logits, t: f64) -> Result<(f64, T4)> {
    divergence_loss_grad(p, q, t, Divergence::L1)
}

/// [`kl_loss`] with its gradient with respect to the student logits.
pub fn kl_loss_grad(p: &Logits, q: &Logits, t: f64) -> Result<(f64, T4)> {
    divergence_loss_grad(p, q, t, Divergence::Kl)
}

/// Smooth-L1 over valid pixels: quadratic below one pixel of error, linear
/// above. Returns 0 (flagged) when the mask is empty.
#[derive(Debug, Clone, Copy)]
pub struct MaskedLoss {
    pub value: f64,
    pub valid_pixels: usize,
}

impl MaskedLoss {
    pub fn is_empty(&self) -> bool {
        self.valid_pixels == 0
    }
}

fn check_disparity_shapes(pred: &DisparityMap, gt: &Array3<f32>, mask: &Array3<bool>) -> Result<()> {
    if pred.0.dim() != gt.dim() || gt.dim() != mask.dim() {
        return Err(Error::shape(
            "height",
            format!(
                "disparity {:?}, ground truth {:?} and mask {:?} must agree",
                pred.0.dim(),
                gt.dim(),
                mask.dim()
            ),
        ));
    }
    Ok(())
}

pub fn supervised_loss(pred: &DisparityMap, gt: &Array3<f32>, mask: &Array3<bool>) -> Result<MaskedLoss> {
    check_disparity_shapes(pred, gt, mask)?;
    let mut total = 0.0f64;
    let mut n = 0usize;
    for ((p, g), m) in pred.0.iter().zip(gt.iter()).zip(mask.iter()) {
        if *m {
            let d = (*p - *g).abs() as f64;
            total += if d < 1.0 { 0.5 * d * d } else { d - 0.5 };
            n += 1;
        }
    }
    if n == 0 {
        log::warn!("supervised loss over an empty mask; returning 0");
        return Ok(MaskedLoss { value: 0.0, valid_pixels: 0 });
    }
    Ok(MaskedLoss { value: total / n as f64, valid_pixels: n })
}

/// [`supervised_loss`] plus its gradient with respect to the prediction.
pub fn supervised_loss_grad(
    pred: &DisparityMap,
    gt: &Array3<f32>,
    mask: &Array3<bool>,
) -> Result<(MaskedLoss, Array3<f32>)> {
    let loss = supervised_loss(pred, gt, mask)?;
    let mut grad = Array3::<f32>::zeros(pred.0.dim());
    if loss.valid_pixels > 0 {
        let inv = 1.0 / loss.valid_pixels as f32;
        for ((gr, (p, g)), m) in grad.iter_mut().zip(pred.0.iter().zip(gt.iter())).zip(mask.iter()) {
            if *m {
                *gr = (p - g).clamp(-1.0, 1.0) * inv;
            }
        }
    }
    Ok((loss, grad))
}

/// The selected supervision signal as a single scalar.
pub fn combined_loss(
    config: &DistillConfig,
    p: &Logits,
    q: Option<&Logits>,
    pred: &DisparityMap,
    gt: &Array3<f32>,
    mask: &Array3<bool>,
    t: f64,
) -> Result<f64> {
    config.validate()?;
    let divergence = |q: Option<&Logits>| -> Result<f64> {
        let q = q.ok_or_else(|| {
            Error::Config("knowledge-distillation mode requires teacher logits".into())
        })?;
        match config.divergence {
            Divergence::L1 => kd_loss(p, q, t),
            Divergence::Kl => kl_loss(p, q, t),
        }
    };
    match config.signal_mode {
        SignalMode::GtOnly => Ok(supervised_loss(pred, gt, mask)?.value),
        SignalMode::KdOnly => divergence(q),
        SignalMode::KdPlusGt => {
            let s = supervised_loss(pred, gt, mask)?.value;
            let k = divergence(q)?;
            Ok(config.gt_weight * s + (1.0 - config.gt_weight) * k)
        }
    }
}

/// Combined loss with its gradient at the student logits. The supervised term
/// is chained through soft-argmax using the probabilities and disparity of
/// the student forward pass.
pub fn combined_loss_grad(
    config: &DistillConfig,
    p: &Logits,
    q: Option<&Logits>,
    probs: &T4,
    disp: &DisparityMap,
    gt: &Array3<f32>,
    mask: &Array3<bool>,
    t: f64,
) -> Result<(f64, T4)> {
    config.validate()?;
    let sup = |w: f64| -> Result<(f64, T4)> {
        let (loss, d_pred) = supervised_loss_grad(disp, gt, mask)?;
        let scaled = d_pred.mapv(|v| v * w as f32);
        let dl = softargmax::soft_argmax_backward(probs, &disp.0, &scaled);
        Ok((loss.value, dl))
    };
    let kd = |w: f64| -> Result<(f64, T4)> {
        let q = q.ok_or_else(|| {
            Error::Config("knowledge-distillation mode requires teacher logits".into())
        })?;
        let (loss, g) = match config.divergence {
            Divergence::L1 => kd_loss_grad(p, q, t)?,
            Divergence::Kl => kl_loss_grad(p, q, t)?,
        };
        Ok((loss, g.mapv(|v| v * w as f32)))
    };
    match config.signal_mode {
        SignalMode::GtOnly => sup(1.0),
        SignalMode::KdOnly => kd(1.0),
        SignalMode::KdPlusGt => {
            let w = config.gt_weight;
            let (ls, mut gs) = sup(w)?;
            let (lk, gk) = kd(1.0 - w)?;
            gs += &gk;
            Ok((w * ls + (1.0 - w) * lk, gs))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn logits_1px(vals: &[f32]) -> Logits {
        Logits(Array::from_shape_vec((1, vals.len(), 1, 1), vals.to_vec()).unwrap())
    }

    /// Brute-force oracle: tempered softmaxes via direct summation.
    fn oracle_softmax(vals: &[f64], t: f64) -> Vec<f64> {
        let sum: f64 = vals.iter().map(|v| (v / t).exp()).sum();
        vals.iter().map(|v| (v / t).exp() / sum).collect()
    }

    #[test]
    fn kd_loss_is_zero_for_identical_logits() {
        let p = logits_1px(&[0.3, -1.2, 2.0]);
        assert_eq!(kd_loss(&p, &p, 0.7).unwrap(), 0.0);
        assert_eq!(kl_loss(&p, &p, 2.0).unwrap(), 0.0);
    }

    fn logits64_1px(vals: &[f64]) -> ndarray::Array4<f64> {
        Array::from_shape_vec((1, vals.len(), 1, 1), vals.to_vec()).unwrap()
    }

    #[test]
    fn kd_loss_matches_the_hand_computed_two_bin_case() {
        // softmax([0,0]) = [1/2, 1/2]; softmax([0, ln 3]) = [1/4, 3/4];
        // L1 distance = |1/2-1/4| + |1/2-3/4| = 1/2.
        let p = logits64_1px(&[0.0, 0.0]);
        let q = logits64_1px(&[0.0, 3.0f64.ln()]);
        let got = kd_loss_f64(&p, &q, 1.0).unwrap();
        assert!((got - 0.5).abs() < 1e-9, "got {got}");

        // Cross-check against the direct-summation oracle and make sure the
        // f32 entry point agrees at its storage precision.
        let sp = oracle_softmax(&[0.0, 0.0], 1.0);
        let sq = oracle_softmax(&[0.0, (3.0f64).ln()], 1.0);
        let want: f64 = sp.iter().zip(&sq).map(|(a, b)| (a - b).abs()).sum();
        assert!((got - want).abs() < 1e-9);
        let got32 =
            kd_loss(&logits_1px(&[0.0, 0.0]), &logits_1px(&[0.0, 3.0f32.ln()]), 1.0).unwrap();
        assert!((got32 - 0.5).abs() < 1e-6);
    }

    #[test]
    fn huge_temperature_flattens_both_distributions() {
        let p = logits_1px(&[0.2, -0.1, 0.05]);
        let q = logits_1px(&[-0.1, 0.3, 0.0]);
        let loss = kd_loss(&p, &q, 1e6).unwrap();
        assert!(loss < 1e-6, "loss {loss}");
    }

    #[test]
    fn kl_loss_matches_the_direct_summation_oracle() {
        let p = logits64_1px(&[0.0, 0.0]);
        let q = logits64_1px(&[0.0, 3.0f64.ln()]);
        let got = kl_loss_f64(&p, &q, 1.0).unwrap();
        // KL(q||p) = 0.25 ln(0.5) + 0.75 ln(1.5), with q the reference.
        let want = 0.25f64 * (0.25f64 / 0.5).ln() + 0.75 * (0.75f64 / 0.5).ln();
        assert!((got - want).abs() < 1e-9, "got {got} want {want}");
    }

    #[test]
    fn kl_is_nonnegative_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        for _ in 0..100 {
            let d = rng.gen_range(2..9);
            let p = logits_1px(&(0..d).map(|_| rng.gen_range(-3.0f32..3.0)).collect::<Vec<_>>());
            let q = logits_1px(&(0..d).map(|_| rng.gen_range(-3.0f32..3.0)).collect::<Vec<_>>());
            let t = rng.gen_range(0.3f64..3.0);
            assert!(kl_loss(&p, &q, t).unwrap() >= 0.0);
        }
    }

    #[test]
    fn losses_are_strictly_positive_for_distinct_softmaxes() {
        let p = logits_1px(&[0.0, 1.0]);
        let q = logits_1px(&[1.0, 0.0]);
        assert!(kd_loss(&p, &q, 1.0).unwrap() > 0.0);
        assert!(kl_loss(&p, &q, 1.0).unwrap() > 0.0);
    }

    #[test]
    fn losses_are_shift_invariant_in_logit_space() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mk = |rng: &mut ChaCha8Rng| {
            Logits(Array::from_shape_simple_fn((2, 5, 3, 3), || rng.gen_range(-2.0f32..2.0)))
        };
        let p = mk(&mut rng);
        let q = mk(&mut rng);
        let base_kd = kd_loss(&p, &q, 0.8).unwrap();
        let base_kl = kl_loss(&p, &q, 0.8).unwrap();
        let p2 = Logits(&p.0 + 3.0);
        let q2 = Logits(&q.0 - 1.5);
        assert!((kd_loss(&p2, &q2, 0.8).unwrap() - base_kd).abs() < 1e-9);
        assert!((kl_loss(&p2, &q2, 0.8).unwrap() - base_kl).abs() < 1e-9);
    }

    #[test]
    fn non_positive_temperature_is_a_domain_error() {
        let p = logits_1px(&[0.0, 0.0]);
        assert!(matches!(kd_loss(&p, &p, 0.0), Err(Error::Domain(_))));
        assert!(matches!(kl_loss(&p, &p, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = logits_1px(&[0.0, 0.0]);
        let q = logits_1px(&[0.0, 0.0, 0.0]);
        assert!(matches!(kd_loss(&p, &q, 1.0), Err(Error::Shape { .. })));
    }

    #[test]
    fn kd_gradient_matches_central_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for trial in 0..10 {
            let d = rng.gen_range(2..=8);
            let (b, h, w) = (1, 2, 2);
            let p = Logits(Array::from_shape_simple_fn((b, d, h, w), || rng.gen_range(-2.0f32..2.0)));
            let q = Logits(Array::from_shape_simple_fn((b, d, h, w), || rng.gen_range(-2.0f32..2.0)));
            let t = rng.gen_range(0.5f64..2.0);
            let (_, grad) = kd_loss_grad(&p, &q, t).unwrap();

            let mut num = Vec::new();
            let mut ana = Vec::new();
            let eps = 1e-3f32;
            for di in 0..d {
                for yx in 0..(h * w) {
                    let idx = [0, di, yx / w, yx % w];
                    let mut pp = p.clone();
                    pp.0[idx] += eps;
                    let mut pm = p.clone();
                    pm.0[idx] -= eps;
                    let fd = (kd_loss(&pp, &q, t).unwrap() - kd_loss(&pm, &q, t).unwrap())
                        / (2.0 * eps as f64);
                    num.push(fd);
                    ana.push(grad[idx] as f64);
                }
            }
            let diff: f64 = num.iter().zip(&ana).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale: f64 = num.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(diff / scale.max(1e-8) < 1e-3, "trial {trial}: rel err {}", diff / scale);
        }
    }

    #[test]
    fn supervised_loss_follows_the_smooth_l1_branches() {
        let gt = Array::from_elem((1, 1, 1), 2.0f32);
        let mask = Array::from_elem((1, 1, 1), true);
        let at = |v: f32| {
            supervised_loss(&DisparityMap(Array::from_elem((1, 1, 1), v)), &gt, &mask)
                .unwrap()
                .value
        };
        assert_eq!(at(2.0), 0.0);
        assert!((at(2.5) - 0.125).abs() < 1e-9); // quadratic branch: 0.5 * 0.5^2
        assert!((at(4.0) - 1.5).abs() < 1e-9); // linear branch: 2 - 0.5
    }

    #[test]
    fn empty_mask_returns_zero_with_the_flag_set() {
        let gt = Array::from_elem((1, 2, 2), 1.0f32);
        let mask = Array::from_elem((1, 2, 2), false);
        let pred = DisparityMap(Array::from_elem((1, 2, 2), 5.0f32));
        let loss = supervised_loss(&pred, &gt, &mask).unwrap();
        assert_eq!(loss.value, 0.0);
        assert!(loss.is_empty());
    }

    #[test]
    fn masked_pixels_do_not_contribute() {
        let gt = Array::from_shape_vec((1, 1, 2), vec![1.0f32, 1.0]).unwrap();
        let mask = Array::from_shape_vec((1, 1, 2), vec![true, false]).unwrap();
        let pred = DisparityMap(Array::from_shape_vec((1, 1, 2), vec![1.5f32, 100.0]).unwrap());
        let loss = supervised_loss(&pred, &gt, &mask).unwrap();
        assert!((loss.value - 0.125).abs() < 1e-9);
        assert_eq!(loss.valid_pixels, 1);
    }

    #[test]
    fn combined_modes_ignore_the_unused_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p = Logits(Array::from_shape_simple_fn((1, 4, 2, 2), || rng.gen_range(-1.0f32..1.0)));
        let q1 = Logits(Array::from_shape_simple_fn((1, 4, 2, 2), || rng.gen_range(-1.0f32..1.0)));
        let q2 = Logits(Array::from_shape_simple_fn((1, 4, 2, 2), || rng.gen_range(-1.0f32..1.0)));
        let pred = DisparityMap(Array::from_shape_simple_fn((1, 2, 2), || rng.gen_range(0.0f32..3.0)));
        let gt = Array::from_shape_simple_fn((1, 2, 2), || rng.gen_range(0.0f32..3.0));
        let gt2 = Array::from_shape_simple_fn((1, 2, 2), || rng.gen_range(0.0f32..3.0));
        let mask = Array::from_elem((1, 2, 2), true);

        let gt_only = DistillConfig { signal_mode: SignalMode::GtOnly, ..Default::default() };
        let a = combined_loss(&gt_only, &p, Some(&q1), &pred, &gt, &mask, 1.0).unwrap();
        let b = combined_loss(&gt_only, &p, Some(&q2), &pred, &gt, &mask, 1.0).unwrap();
        assert_eq!(a, b);

        let kd_only = DistillConfig::default();
        let a = combined_loss(&kd_only, &p, Some(&q1), &pred, &gt, &mask, 1.0).unwrap();
        let b = combined_loss(&kd_only, &p, Some(&q1), &pred, &gt2, &mask, 1.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn full_gt_weight_reduces_the_combined_mode_to_supervised() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let p = Logits(Array::from_shape_simple_fn((1, 4, 2, 2), || rng.gen_range(-1.0f32..1.0)));
        let q = Logits(Array::from_shape_simple_fn((1, 4, 2, 2), || rng.gen_range(-1.0f32..1.0)));
        let pred = DisparityMap(Array::from_shape_simple_fn((1, 2, 2), || rng.gen_range(0.0f32..3.0)));
        let gt = Array::from_shape_simple_fn((1, 2, 2), || rng.gen_range(0.0f32..3.0));
        let mask = Array::from_elem((1, 2, 2), true);
        let mixed = DistillConfig {
            signal_mode: SignalMode::KdPlusGt,
            divergence: Divergence::L1,
            gt_weight: 1.0,
        };
        let gt_only = DistillConfig { signal_mode: SignalMode::GtOnly, ..Default::default() };
        let a = combined_loss(&mixed, &p, Some(&q), &pred, &gt, &mask, 1.0).unwrap();
        let b = combined_loss(&gt_only, &p, None, &pred, &gt, &mask, 1.0).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn kd_mode_without_teacher_logits_is_a_config_error() {
        let p = logits_1px(&[0.0, 0.0]);
        let pred = DisparityMap(Array::zeros((1, 1, 1)));
        let gt = Array::zeros((1, 1, 1));
        let mask = Array::from_elem((1, 1, 1), true);
        let err = combined_loss(&DistillConfig::default(), &p, None, &pred, &gt, &mask, 1.0);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn temperature_schedule_endpoints_and_midpoint() {
        let s = TemperatureSchedule::new(21);
        assert_eq!(temperature_at(&s, 0).unwrap(), 0.5);
        assert_eq!(temperature_at(&s, 20).unwrap(), 1.0);
        assert_eq!(temperature_at(&s, 10).unwrap(), 0.75);
        assert!(matches!(temperature_at(&s, 21), Err(Error::Domain(_))));
        for e in 1..21 {
            assert!(temperature_at(&s, e).unwrap() >= temperature_at(&s, e - 1).unwrap());
        }
    }
}
