//! Parameter and FLOP accounting, derived from the same `ModelConfig` that
//! builds the network, plus a wall-clock latency bench.
//!
//! Two FLOP columns are reported: multiply-accumulates and `2 * MACs`.
//! Pointwise work (normalization, activations, interpolation, additions) is
//! tallied separately as element counts rather than folded into the MACs.

use std::time::Instant;

use ndarray::Array;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::graph::{infer_channels, infer_spatial, LayerKind, LayerSpec};
use crate::model::{Mode, Model, ModelConfig, ModuleTag};

/// Scalar parameter count of one layer.
pub fn layer_param_count(kind: &LayerKind) -> usize {
    match kind {
        LayerKind::Conv2d { in_ch, out_ch, kernel, .. }
        | LayerKind::TransposeConv2d { in_ch, out_ch, kernel, .. } => {
            kernel * kernel * in_ch * out_ch + out_ch
        }
        LayerKind::Norm { channels } => 2 * channels,
        _ => 0,
    }
}

/// Multiply-accumulates of one layer given its output size (and input size,
/// for the pointwise kinds).
pub fn layer_macs(kind: &LayerKind, out_hw: (usize, usize)) -> u64 {
    let (oh, ow) = (out_hw.0 as u64, out_hw.1 as u64);
    match kind {
        LayerKind::Conv2d { in_ch, out_ch, kernel, .. }
        | LayerKind::TransposeConv2d { in_ch, out_ch, kernel, .. } => {
            (kernel * kernel * in_ch * out_ch) as u64 * oh * ow
        }
        _ => 0,
    }
}

/// Pointwise op count of one layer (output elements touched).
fn layer_pointwise(kind: &LayerKind, out_ch: usize, out_hw: (usize, usize)) -> u64 {
    let elems = out_ch as u64 * out_hw.0 as u64 * out_hw.1 as u64;
    match kind {
        LayerKind::Norm { .. }
        | LayerKind::Activation
        | LayerKind::BilinearResize { .. }
        | LayerKind::SkipAdd => elems,
        _ => 0,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccountRow {
    pub module: String,
    pub params: usize,
    pub macs: u64,
    pub pointwise: u64,
    pub flops2: u64,
}

/// Per-module and total accounting at a stated resolution. Parameter counts
/// are resolution-independent; the siamese feature tower is charged twice in
/// the FLOP columns because it runs once per image of the pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccountingTable {
    pub resolution: (usize, usize),
    pub rows: Vec<AccountRow>,
    pub total: AccountRow,
}

impl AccountingTable {
    /// Aligned text rendering, one row per module plus the total.
    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "{:<28} {:>10} {:>12} {:>12} {:>12}\n",
            "Module", "Params(M)", "MACs(G)", "2xMACs(G)", "Pointwise(G)"
        ));
        let giga = |v: u64| v as f64 / 1e9;
        for r in self.rows.iter().chain(std::iter::once(&self.total)) {
            s.push_str(&format!(
                "{:<28} {:>10.3} {:>12.3} {:>12.3} {:>12.3}\n",
                r.module,
                r.params as f64 / 1e6,
                giga(r.macs),
                giga(r.flops2),
                giga(r.pointwise),
            ));
        }
        s.push_str(&format!("(at {}x{})\n", self.resolution.1, self.resolution.0));
        s
    }
}

fn segment_rows(
    layers: &[LayerSpec],
    input_channels: usize,
    input_hw: (usize, usize),
    passes: u64,
) -> Result<(usize, u64, u64)> {
    let chans = infer_channels(layers, input_channels)?;
    let sizes = infer_spatial(layers, input_hw)?;
    let mut params = 0usize;
    let mut macs = 0u64;
    let mut pointwise = 0u64;
    for (i, l) in layers.iter().enumerate() {
        params += layer_param_count(&l.kind);
        macs += layer_macs(&l.kind, sizes[i]) * passes;
        pointwise += layer_pointwise(&l.kind, chans[i], sizes[i]) * passes;
    }
    Ok((params, macs, pointwise))
}

/// Parameter counts per module (exact closed-form sums over the layer list).
pub fn count_params(config: &ModelConfig) -> Result<AccountingTable> {
    count_flops(config, 960, 540).map(|mut t| {
        // Parameter counting is resolution-independent; keep the FLOP columns
        // from the default resolution but the caller only reads params.
        t.resolution = (0, 0);
        t
    })
}

/// Full accounting table at resolution `h` x `w` (rows and columns divisible
/// by the downsample factor are required for the stereo family).
pub fn count_flops(config: &ModelConfig, h: usize, w: usize) -> Result<AccountingTable> {
    config.validate()?;
    let f = config.downsample_factor;
    if h % f != 0 || w % f != 0 {
        return Err(crate::error::Error::Domain(format!(
            "accounting resolution {h}x{w} not divisible by {f}"
        )));
    }
    let mut rows = Vec::new();
    let quarter = (h / f, w / f);
    for tag in ModuleTag::ALL {
        let layers = config.segment(tag);
        let cin = config.segment_input_channels(tag)?;
        let (input_hw, passes) = match tag {
            ModuleTag::Feature => ((h, w), 2), // one pass per image of the pair
            _ => (if config.is_stereo() { quarter } else { (h, w) }, 1),
        };
        let (params, macs, pointwise) = segment_rows(layers, cin, input_hw, passes)?;
        rows.push(AccountRow {
            module: tag.name().to_string(),
            params,
            macs,
            pointwise,
            flops2: 2 * macs,
        });
    }
    let total = AccountRow {
        module: "total".to_string(),
        params: rows.iter().map(|r| r.params).sum(),
        macs: rows.iter().map(|r| r.macs).sum(),
        pointwise: rows.iter().map(|r| r.pointwise).sum(),
        flops2: rows.iter().map(|r| 2 * r.macs).sum(),
    };
    Ok(AccountingTable { resolution: (h, w), rows, total })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatencyReport {
    pub median_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    pub iterations: usize,
    pub device: String,
}

/// Wall-clock single-batch inference timing. Warmup iterations are run and
/// discarded; absolute numbers are machine-dependent and never asserted.
pub fn latency_bench(
    model: &Model,
    h: usize,
    w: usize,
    batch: usize,
    warmup: usize,
    iters: usize,
) -> Result<LatencyReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mk = |rng: &mut ChaCha8Rng| {
        Array::from_shape_simple_fn((batch, model.config.input_channels, h, w), || {
            rng.gen_range(0.0f32..1.0)
        })
    };
    let left = mk(&mut rng);
    let right = mk(&mut rng);
    for _ in 0..warmup {
        model.forward(&left, &right, Mode::Eval)?;
    }
    let mut times = Vec::with_capacity(iters.max(1));
    for _ in 0..iters.max(1) {
        let t0 = Instant::now();
        model.forward(&left, &right, Mode::Eval)?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mut sorted = times.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    let p95 = sorted[(((n as f64) * 0.95).ceil() as usize).clamp(1, n) - 1];
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let threads = std::thread::available_parallelism().map(|v| v.get()).unwrap_or(1);
    Ok(LatencyReport {
        median_ms: median,
        p95_ms: p95,
        mean_ms: mean,
        iterations: n,
        device: format!("cpu/{}threads/{}", threads, std::env::consts::ARCH),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::graph::{LayerKind, LayerSpec, NodeRef as NR};
    use crate::model::{Setting, StereoWidths};

    #[test]
    fn single_conv_param_formula() {
        let kind = LayerKind::Conv2d { in_ch: 4, out_ch: 8, kernel: 3, stride: 1, padding: 1 };
        assert_eq!(layer_param_count(&kind), 296); // 3*3*4*8 + 8
    }

    #[test]
    fn single_conv_mac_formula() {
        let kind = LayerKind::Conv2d { in_ch: 1, out_ch: 1, kernel: 3, stride: 1, padding: 1 };
        assert_eq!(layer_macs(&kind, (4, 4)), 144); // 9 * 16
    }

    #[test]
    fn stride_two_quarters_the_macs() {
        let k1 = LayerKind::Conv2d { in_ch: 8, out_ch: 8, kernel: 3, stride: 1, padding: 1 };
        let k2 = LayerKind::Conv2d { in_ch: 8, out_ch: 8, kernel: 3, stride: 2, padding: 1 };
        let m1 = layer_macs(&k1, (16, 16));
        let m2 = layer_macs(&k2, (8, 8));
        assert_eq!(m1, 4 * m2);
    }

    #[test]
    fn random_layer_specs_match_the_closed_form() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let cin = rng.gen_range(1..12);
            let cout = rng.gen_range(1..12);
            let k = [1usize, 3, 5][rng.gen_range(0..3)];
            let stride = rng.gen_range(1..3);
            let pad = k / 2;
            let h = rng.gen_range(4..33);
            let w = rng.gen_range(4..33);
            let kind = LayerKind::Conv2d { in_ch: cin, out_ch: cout, kernel: k, stride, padding: pad };
            let oh = (h + 2 * pad - k) / stride + 1;
            let ow = (w + 2 * pad - k) / stride + 1;
            assert_eq!(
                layer_macs(&kind, (oh, ow)),
                (k * k * cin * cout) as u64 * (oh * ow) as u64
            );
            assert_eq!(layer_param_count(&kind), k * k * cin * cout + cout);
        }
    }

    #[test]
    fn totals_equal_row_sums_and_params_ignore_resolution() {
        let cfg = ModelConfig::setting3();
        let a = count_flops(&cfg, 64, 64).unwrap();
        let b = count_flops(&cfg, 128, 96).unwrap();
        assert_eq!(a.total.params, a.rows.iter().map(|r| r.params).sum::<usize>());
        assert_eq!(a.total.macs, a.rows.iter().map(|r| r.macs).sum::<u64>());
        assert_eq!(a.total.params, b.total.params);
        assert!(a.total.macs < b.total.macs);
        assert_eq!(a.total.flops2, 2 * a.total.macs);
    }

    #[test]
    fn counts_match_the_constructed_model_exactly() {
        let cfg = ModelConfig::stereo(
            Setting::Setting3,
            32,
            StereoWidths { stages: vec![8, 16], cost_hidden: [6, 8], hourglass: 12 },
        )
        .unwrap();
        let model = Model::init(cfg.clone(), 3).unwrap();
        let table = count_params(&cfg).unwrap();
        assert_eq!(table.total.params, model.store.trainable_param_count());
    }

    #[test]
    fn bench_reports_ordered_statistics() {
        let cfg = ModelConfig::stereo(
            Setting::Setting3,
            8,
            StereoWidths { stages: vec![4, 4], cost_hidden: [4, 4], hourglass: 4 },
        )
        .unwrap();
        let model = Model::init(cfg, 1).unwrap();
        let r = latency_bench(&model, 16, 16, 1, 0, 5).unwrap();
        assert!(r.median_ms <= r.p95_ms);
        assert!(r.median_ms > 0.0);
        let single = latency_bench(&model, 16, 16, 1, 0, 1).unwrap();
        assert_eq!(single.median_ms, single.p95_ms);
        assert_eq!(single.iterations, 1);
    }

    #[test]
    fn single_path_configs_account_at_full_resolution() {
        let layers = vec![
            LayerSpec::unary(
                LayerKind::Conv2d { in_ch: 3, out_ch: 4, kernel: 3, stride: 1, padding: 1 },
                NR::Input,
            ),
            LayerSpec::unary(
                LayerKind::Conv2d { in_ch: 4, out_ch: 2, kernel: 3, stride: 1, padding: 1 },
                NR::Node(0),
            ),
        ];
        let cfg = ModelConfig::single_path(layers, 3, 2).unwrap();
        let t = count_flops(&cfg, 8, 8).unwrap();
        assert_eq!(t.total.params, (9 * 12 + 4) + (9 * 8 + 2));
        assert_eq!(t.total.macs, (9 * 12 * 64 + 9 * 8 * 64) as u64);
    }
}
