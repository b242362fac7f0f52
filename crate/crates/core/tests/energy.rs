use hybridseg::dataset::{Dataset, PreparedSample};
use hybridseg::energy::{count_ann_macs, count_snn_synops, energy_total, profile, LayerKind, LayerSpec};
use hybridseg::events::synthetic::SynthConfig;
use hybridseg::events::VoxelGrid;
use hybridseg::network::{HybridNetwork, NetworkConfig};
use hybridseg::Tensor;
use proptest::prelude::*;

fn samples(size: u32, count: usize) -> Vec<PreparedSample> {
    let cfg = SynthConfig {
        width: size,
        height: size,
        ..SynthConfig::default()
    };
    Dataset::synthetic(3, count, &cfg).unwrap().prepare(5).unwrap()
}

fn conv(cin: usize, cout: usize, k: usize, h: usize, w: usize) -> f64 {
    count_ann_macs(&LayerSpec::Conv {
        cin,
        cout,
        kh: k,
        kw: k,
        out_h: h,
        out_w: w,
    }) as f64
}

fn linear(din: usize, dout: usize, rows: usize) -> f64 {
    rows as f64 * count_ann_macs(&LayerSpec::Linear { din, dout }) as f64
}

#[test]
fn profile_matches_closed_form_counts() {
    let cfg = NetworkConfig::default();
    let net = HybridNetwork::build(cfg.clone()).unwrap();
    let data = samples(64, 1);
    let s = &data[0];
    let (h, w) = (64, 64);
    let frames = Tensor::new([1, 1, h, w], s.frame.data().to_vec()).unwrap();
    let events = net.prepare_events(std::slice::from_ref(&s.voxel), h, w).unwrap();
    let (_, stats) = net.forward_with_stats(&frames, &events).unwrap();
    let report = profile(&net, &data).unwrap();

    let (t, k, r) = (cfg.timesteps, cfg.points, cfg.reduction);
    let (mut ann, mut snn) = (0.0, 0.0);
    let mut prev = (cfg.input_channels, 1);
    for (i, &(_, c)) in cfg.scales.iter().enumerate() {
        let (hs, ws) = (h >> (i + 1), w >> (i + 1));
        let hw = hs * ws;
        let st = &stats.stages[i];
        ann += conv(prev.0, c, 3, hs, ws);
        snn += conv(prev.1, c, 3, hs, ws) * st.snn_input_rate * t as f64;
        // ATW: adaptor on T pooled vectors, temporal collapse, query/offset/
        // weight heads per location, bilinear taps and weighting per point,
        // output projection.
        ann += linear(c, c / r, t) + linear(c / r, c, t) + (t * c * hw) as f64;
        ann += linear(c, c, hw) + linear(c, 2 * k, hw) + linear(c, k, hw);
        ann += (hw * k * c * 4 + hw * k * c) as f64 + linear(c, c, hw);
        // EDS: heads per reference point and timestep, dense projection, two
        // bilinear reads per point, product and weighting.
        let rt = st.reference_points * t;
        ann += linear(c, 2 * k, rt) + linear(c, k, rt) + linear(c, c, hw);
        ann += (rt * k * c * 8) as f64 + (2 * rt * k * c) as f64;
        // CSF: two 1x1 gate convs and two channel scalings.
        ann += 2.0 * (conv(c, c, 1, hs, ws) + (hw * c) as f64);
        // Head: per-scale 1x1 classifier, upsampling to the finest scale,
        // final upsampling.
        ann += conv(c, cfg.num_classes, 1, hs, ws);
        if i > 0 {
            ann += (4 * cfg.num_classes * (h / 2) * (w / 2)) as f64;
        }
        prev = (c, c);
    }
    ann += (4 * cfg.num_classes * h * w) as f64;

    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-30);
    assert!(rel(report.gflops_ann, ann / 1e9) <= 1e-12, "{} vs {}", report.gflops_ann, ann / 1e9);
    assert!(rel(report.gflops_snn, snn / 1e9) <= 1e-12, "{} vs {}", report.gflops_snn, snn / 1e9);
    assert_eq!(report.e_total_mj, energy_total(report.gflops_ann, report.gflops_snn));
    let layer_sum: f64 = report.layers.iter().map(|l| l.ops).sum::<f64>() / 1e9;
    assert!(rel(layer_sum, report.gflops_ann + report.gflops_snn) <= 1e-12);
}

#[test]
fn silent_events_cost_no_spiking_operations() {
    let net = HybridNetwork::build(NetworkConfig::default()).unwrap();
    let mut data = samples(32, 2);
    for s in &mut data {
        s.voxel = VoxelGrid::zeros(5, 32, 32, 0, 1000);
    }
    let report = profile(&net, &data).unwrap();
    assert_eq!(report.gflops_snn, 0.0);
    assert!(report.gflops_ann > 0.0);
}

#[test]
fn doubling_resolution_quadruples_conv_macs() {
    let net = HybridNetwork::build(NetworkConfig::default()).unwrap();
    let small = profile(&net, &samples(32, 1)).unwrap();
    let large = profile(&net, &samples(64, 1)).unwrap();
    for (a, b) in small.layers.iter().zip(&large.layers) {
        if a.name.ends_with("_conv") {
            assert_eq!(4.0 * a.macs, b.macs, "{}", a.name);
        }
    }
}

#[test]
fn profiling_leaves_the_network_untouched() {
    let net = HybridNetwork::build(NetworkConfig::default()).unwrap();
    let before = net.clone();
    let report = profile(&net, &samples(32, 2)).unwrap();
    assert_eq!(net, before);
    assert!(report.layers.iter().any(|l| l.kind == LayerKind::Snn));
    assert!(profile(&net, &[]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn synops_are_monotone_in_rate_and_linear_in_t(
        r1 in 0.0f64..=1.0,
        r2 in 0.0f64..=1.0,
        t in 1usize..10,
        c in 1usize..16,
    ) {
        let spec = LayerSpec::Conv { cin: c, cout: 2 * c, kh: 3, kw: 3, out_h: 8, out_w: 8 };
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        prop_assert!(count_snn_synops(&spec, lo, t).unwrap() <= count_snn_synops(&spec, hi, t).unwrap());
        let one = count_snn_synops(&spec, r1, 1).unwrap();
        let many = count_snn_synops(&spec, r1, t).unwrap();
        prop_assert!((many - t as f64 * one).abs() <= 1e-9 * many.max(1.0));
    }
}
