//! Operation counting and inference energy.
//!
//! One "FLOP" here is one multiply-accumulate. Frame-branch layers and all
//! fusion arithmetic cost 4.6 pJ per MAC; spike-driven accumulates cost
//! 0.9 pJ each. A spiking layer performs `MACs x input rate x T` accumulates.
//!
//! Fusion blocks count linear layers and convolutions by their MACs,
//! bilinear sampling as 4 MACs per sampled channel value, and weighted sums,
//! temporal collapse, element-wise products and channel scaling as 1 MAC per
//! product. Normalization, softmax, pooling and activations are not counted.

use serde::{Deserialize, Serialize};

use crate::dataset::PreparedSample;
use crate::error::{Error, Result};
use crate::network::{ForwardStats, HybridNetwork};
use crate::tensor::Tensor;

/// pJ per frame-branch MAC (equivalently mJ per GMAC).
pub const ANN_PJ_PER_OP: f64 = 4.6;
/// pJ per spike-driven accumulate.
pub const SNN_PJ_PER_OP: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Ann,
    Snn,
}

/// Geometry of a counted layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    /// Output spatial size is `out_h x out_w`.
    Conv {
        cin: usize,
        cout: usize,
        kh: usize,
        kw: usize,
        out_h: usize,
        out_w: usize,
    },
    Linear { din: usize, dout: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: LayerKind,
    /// Dense multiply-accumulates per inference.
    pub macs: f64,
    /// Mean input firing rate, spiking layers only.
    pub spike_rate: Option<f64>,
    pub timesteps: Option<usize>,
    /// Counted operations: `macs` for frame layers, synaptic ops for spiking ones.
    pub ops: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub gflops_ann: f64,
    pub gflops_snn: f64,
    pub e_total_mj: f64,
    pub layers: Vec<LayerCost>,
}

impl EnergyReport {
    /// Sums the layers into the GFLOP columns and the energy total.
    pub fn from_layers(layers: Vec<LayerCost>) -> Self {
        let sum = |k: LayerKind| layers.iter().filter(|l| l.kind == k).map(|l| l.ops).sum::<f64>() / 1e9;
        let gflops_ann = sum(LayerKind::Ann);
        let gflops_snn = sum(LayerKind::Snn);
        Self {
            gflops_ann,
            gflops_snn,
            e_total_mj: energy_total(gflops_ann, gflops_snn),
            layers,
        }
    }
}

pub fn count_ann_macs(spec: &LayerSpec) -> u64 {
    match *spec {
        LayerSpec::Conv {
            cin,
            cout,
            kh,
            kw,
            out_h,
            out_w,
        } => (cout * out_h * out_w * cin * kh * kw) as u64,
        LayerSpec::Linear { din, dout } => (din * dout) as u64,
    }
}

/// Spike-gated accumulates of one layer over `timesteps` steps.
pub fn count_snn_synops(spec: &LayerSpec, spike_rate: f64, timesteps: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&spike_rate) {
        return Err(Error::InvalidArgument(format!("spike rate {spike_rate} outside [0, 1]")));
    }
    Ok(count_ann_macs(spec) as f64 * spike_rate * timesteps as f64)
}

/// Energy in mJ of `gflops_ann` frame-branch GMACs and `gflops_snn` spike GOPs.
pub fn energy_total(gflops_ann: f64, gflops_snn: f64) -> f64 {
    ANN_PJ_PER_OP * gflops_ann + SNN_PJ_PER_OP * gflops_snn
}

/// Least-squares `(a, b)` minimizing `sum (a x + b y - e)^2` over rows
/// `(x, y, e)`, without intercept.
pub fn fit_energy_coefficients(rows: &[(f64, f64, f64)]) -> Result<(f64, f64)> {
    let (mut sxx, mut sxy, mut syy, mut sxe, mut sye) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y, e) in rows {
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        sxe += x * e;
        sye += y * e;
    }
    let det = sxx * syy - sxy * sxy;
    if det.abs() <= 1e-12 * (sxx * syy).max(f64::MIN_POSITIVE) {
        return Err(Error::InvalidArgument(
            "energy rows do not determine both coefficients".into(),
        ));
    }
    Ok(((sxe * syy - sye * sxy) / det, (sye * sxx - sxe * sxy) / det))
}

/// Per-layer costs of one forward pass with the given statistics.
pub fn layer_costs(net: &HybridNetwork, height: usize, width: usize, stats: &ForwardStats) -> Result<Vec<LayerCost>> {
    let cfg = &net.config;
    if stats.stages.len() != cfg.scales.len() {
        return Err(Error::InvalidArgument(format!(
            "statistics cover {} stages, network has {}",
            stats.stages.len(),
            cfg.scales.len()
        )));
    }
    let t = cfg.timesteps;
    let k = cfg.points;
    let ann = |name: String, macs: f64| LayerCost {
        name,
        kind: LayerKind::Ann,
        macs,
        spike_rate: None,
        timesteps: None,
        ops: macs,
    };
    let mut layers = Vec::new();
    let (mut cin, mut cin_snn) = (cfg.input_channels, 1);
    for (i, (&(_, c), st)) in cfg.scales.iter().zip(&stats.stages).enumerate() {
        let (hs, ws) = (height >> (i + 1), width >> (i + 1));
        let hw = (hs * ws) as f64;
        let conv3 = |ci| LayerSpec::Conv {
            cin: ci,
            cout: c,
            kh: 3,
            kw: 3,
            out_h: hs,
            out_w: ws,
        };
        layers.push(ann(format!("stage{i}.ann_conv"), count_ann_macs(&conv3(cin)) as f64));
        let snn = conv3(cin_snn);
        layers.push(LayerCost {
            name: format!("stage{i}.snn_conv"),
            kind: LayerKind::Snn,
            macs: count_ann_macs(&snn) as f64,
            spike_rate: Some(st.snn_input_rate),
            timesteps: Some(t),
            ops: count_snn_synops(&snn, st.snn_input_rate, t)?,
        });
        let (cf, kf) = (c as f64, k as f64);
        if cfg.atw_on {
            let cr = (c / cfg.reduction) as f64;
            let adaptor = t as f64 * 2.0 * cf * cr;
            let collapse = t as f64 * cf * hw;
            let heads = hw * (cf * cf + cf * 2.0 * kf + cf * kf);
            let sampling = hw * kf * cf * 4.0 + hw * kf * cf;
            let out = hw * cf * cf;
            layers.push(ann(format!("stage{i}.atw"), adaptor + collapse + heads + sampling + out));
        }
        if cfg.eds_on {
            let r = st.reference_points as f64;
            let rt = r * t as f64;
            let heads = rt * (cf * 2.0 * kf + cf * kf);
            let proj = hw * cf * cf;
            let sampling = r * t as f64 * kf * cf * 4.0 * 2.0;
            let combine = 2.0 * rt * kf * cf;
            layers.push(ann(format!("stage{i}.eds"), heads + proj + sampling + combine));
        }
        if cfg.csf_on {
            layers.push(ann(format!("stage{i}.csf"), 2.0 * (hw * cf * cf + hw * cf)));
        }
        cin = c;
        cin_snn = c;
    }
    let (h1, w1) = (height / 2, width / 2);
    let classes = cfg.num_classes as f64;
    let mut head = 0.0;
    for (i, &(_, c)) in cfg.scales.iter().enumerate() {
        let (hs, ws) = (height >> (i + 1), width >> (i + 1));
        head += classes * c as f64 * (hs * ws) as f64;
        if i > 0 {
            head += 4.0 * classes * (h1 * w1) as f64;
        }
    }
    head += 4.0 * classes * (height * width) as f64;
    layers.push(ann("head".into(), head));
    Ok(layers)
}

/// Mean per-inference costs over `samples`, one forward pass each.
pub fn profile(net: &HybridNetwork, samples: &[PreparedSample]) -> Result<EnergyReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("profiling needs at least one sample".into()));
    }
    let mut acc: Option<Vec<LayerCost>> = None;
    for s in samples {
        let (h, w) = (s.height(), s.width());
        let frames = Tensor::new([1, s.frame.shape()[0], h, w], s.frame.data().to_vec())?;
        let events = net.prepare_events(std::slice::from_ref(&s.voxel), h, w)?;
        let (_, stats) = net.forward_with_stats(&frames, &events)?;
        let layers = layer_costs(net, h, w, &stats)?;
        match acc.as_mut() {
            None => acc = Some(layers),
            Some(a) => {
                for (dst, src) in a.iter_mut().zip(layers) {
                    dst.macs += src.macs;
                    dst.ops += src.ops;
                    if let (Some(d), Some(r)) = (dst.spike_rate.as_mut(), src.spike_rate) {
                        *d += r;
                    }
                }
            }
        }
    }
    let n = samples.len() as f64;
    let mut layers = acc.expect("nonempty");
    for l in &mut layers {
        l.macs /= n;
        l.ops /= n;
        if let Some(r) = l.spike_rate.as_mut() {
            *r /= n;
        }
    }
    Ok(EnergyReport::from_layers(layers))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mac_counts() {
        let conv = LayerSpec::Conv {
            cin: 3,
            cout: 8,
            kh: 3,
            kw: 3,
            out_h: 16,
            out_w: 16,
        };
        assert_eq!(count_ann_macs(&conv), 55_296);
        assert_eq!(count_ann_macs(&LayerSpec::Linear { din: 10, dout: 5 }), 50);
        assert_eq!(count_snn_synops(&conv, 0.1, 5).unwrap(), 27_648.0);
        assert_eq!(count_snn_synops(&conv, 1.0, 1).unwrap(), 55_296.0);
        assert_eq!(count_snn_synops(&conv, 0.0, 7).unwrap(), 0.0);
        assert!(count_snn_synops(&conv, 1.5, 1).is_err());
        assert!(count_snn_synops(&conv, f64::NAN, 1).is_err());
    }

    #[test]
    fn energy_hand_cases() {
        assert_eq!(energy_total(0.0, 0.0), 0.0);
        assert!((energy_total(73.62, 0.0) - 338.652).abs() < 1e-9);
        assert!((energy_total(0.0, 54.35) - 48.915).abs() < 1e-9);
    }

    #[test]
    fn fit_recovers_exact_coefficients() {
        let rows: Vec<_> = [(1.0, 0.0), (0.0, 2.0), (3.0, 0.5)]
            .iter()
            .map(|&(x, y)| (x, y, 4.6 * x + 0.9 * y))
            .collect();
        let (a, b) = fit_energy_coefficients(&rows).unwrap();
        assert!((a - 4.6).abs() < 1e-12 && (b - 0.9).abs() < 1e-12);
        assert!(fit_energy_coefficients(&[(1.0, 0.0, 4.6)]).is_err());
    }
}
