//! The two-branch encoder, segmentation head, training loop and checkpoints.
//!
//! Per scale, the frame branch runs conv3x3 (stride 2) -> group norm -> ReLU
//! and the spiking branch runs a shared conv3x3 (stride 2) per timestep
//! followed by LIF. The temporal injector then feeds the spike tensor into the
//! frame features, the sparse injector feeds frame features into the spike
//! tensor at event locations, and channel-selection fusion produces the
//! scale's output. Both injected streams continue to the next scale; the
//! sparse injector's output enters the next spiking stage as real-valued
//! current.
//!
//! The head applies a 1x1 conv to each fused map, upsamples to the finest
//! scale, sums, adds the bias and upsamples to the input resolution.

mod checkpoint;
mod config;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use config::{NetworkConfig, IGNORE_INDEX};
pub use train::{lr_at, train, AdamW, TrainConfig, TrainOutcome};

use crate::error::{Error, Result};
use crate::events::{downsample_voxel, extract_reference_points, znorm, ReferencePointSet, VoxelGrid};
use crate::fusion::{atw, csf, eds, AtwParams, CsfParams, EdsParams};
use crate::params::uniform;
use crate::spiking::SpikeMode;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct StageParams<P> {
    /// `C x C_in x 3 x 3`.
    pub ann_w: P,
    pub gn_gamma: P,
    pub gn_beta: P,
    /// `C x C_in x 3 x 3`, no bias: silent input stays silent.
    pub snn_w: P,
    pub atw: Option<AtwParams<P>>,
    pub eds: Option<EdsParams<P>>,
    /// Frame-branch and spike-branch gates.
    pub csf: Option<(CsfParams<P>, CsfParams<P>)>,
    /// `classes x C x 1 x 1`.
    pub head_w: P,
}

impl<P> StageParams<P> {
    pub fn map<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> StageParams<Q> {
        StageParams {
            ann_w: f(&self.ann_w),
            gn_gamma: f(&self.gn_gamma),
            gn_beta: f(&self.gn_beta),
            snn_w: f(&self.snn_w),
            atw: self.atw.as_ref().map(|p| p.map(f)),
            eds: self.eds.as_ref().map(|p| p.map(f)),
            csf: self.csf.as_ref().map(|(a, s)| (a.map(f), s.map(f))),
            head_w: f(&self.head_w),
        }
    }

    pub fn for_each<'a>(&'a self, f: &mut dyn FnMut(&'a P)) {
        f(&self.ann_w);
        f(&self.gn_gamma);
        f(&self.gn_beta);
        f(&self.snn_w);
        if let Some(p) = &self.atw {
            p.for_each(f);
        }
        if let Some(p) = &self.eds {
            p.for_each(f);
        }
        if let Some((a, s)) = &self.csf {
            a.for_each(f);
            s.for_each(f);
        }
        f(&self.head_w);
    }

    pub fn for_each_mut(&mut self, f: &mut dyn FnMut(&mut P)) {
        f(&mut self.ann_w);
        f(&mut self.gn_gamma);
        f(&mut self.gn_beta);
        f(&mut self.snn_w);
        if let Some(p) = &mut self.atw {
            p.for_each_mut(f);
        }
        if let Some(p) = &mut self.eds {
            p.for_each_mut(f);
        }
        if let Some((a, s)) = &mut self.csf {
            a.for_each_mut(f);
            s.for_each_mut(f);
        }
        f(&mut self.head_w);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<P> {
    pub stages: Vec<StageParams<P>>,
    pub head_b: P,
}

impl<P> NetworkParams<P> {
    pub fn map<Q>(&self, f: &mut dyn FnMut(&P) -> Q) -> NetworkParams<Q> {
        NetworkParams {
            stages: self.stages.iter().map(|s| s.map(f)).collect(),
            head_b: f(&self.head_b),
        }
    }

    pub fn for_each_mut(&mut self, f: &mut dyn FnMut(&mut P)) {
        for s in &mut self.stages {
            s.for_each_mut(f);
        }
        f(&mut self.head_b);
    }

    pub fn for_each<'a>(&'a self, f: &mut dyn FnMut(&'a P)) {
        for s in &self.stages {
            s.for_each(f);
        }
        f(&self.head_b);
    }

    /// Leaves in declaration order.
    pub fn leaves(&self) -> Vec<&P> {
        let mut out = Vec::new();
        self.for_each(&mut |p| out.push(p));
        out
    }
}

impl NetworkParams<Tensor> {
    pub fn count(&self) -> usize {
        self.leaves().iter().map(|t| t.numel()).sum()
    }
}

/// Per-scale statistics of one forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageStats {
    /// Fraction of non-zero entries in the spiking conv's input.
    pub snn_input_rate: f64,
    /// Firing rate of the stage's LIF layer.
    pub spike_rate: f64,
    pub reference_points: usize,
    /// Smallest `|H - theta|` of the LIF layer.
    pub min_margin: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ForwardStats {
    pub stages: Vec<StageStats>,
}

impl ForwardStats {
    pub fn min_margin(&self) -> f64 {
        self.stages.iter().map(|s| s.min_margin).fold(f64::INFINITY, f64::min)
    }
}

/// Event-side inputs of a batch, derived from raw voxel grids.
#[derive(Clone, Debug)]
pub struct EventBatch {
    /// Z-normalized voxels, `N x T x 1 x H x W`.
    pub snn_input: Tensor,
    /// `refs[scale][sample]`.
    pub refs: Vec<Vec<ReferencePointSet>>,
}

impl EventBatch {
    pub fn len(&self) -> usize {
        self.snn_input.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stacks batches along the sample axis.
    pub fn concat(parts: &[EventBatch]) -> Result<EventBatch> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("no event batches to concatenate".into()))?;
        let mut shape = first.snn_input.shape().to_vec();
        let mut data = Vec::new();
        let mut refs = vec![Vec::new(); first.refs.len()];
        for p in parts {
            if p.snn_input.shape()[1..] != shape[1..] || p.refs.len() != refs.len() {
                return Err(Error::shape("EventBatch::concat", "inconsistent event batches"));
            }
            data.extend_from_slice(p.snn_input.data());
            for (dst, src) in refs.iter_mut().zip(&p.refs) {
                dst.extend(src.iter().cloned());
            }
        }
        shape[0] = parts.iter().map(|p| p.len()).sum();
        Ok(EventBatch {
            snn_input: Tensor::new(shape, data)?,
            refs,
        })
    }
}

/// Linear interpolation of a voxel grid along time to `bins` bins.
pub fn remap_bins(v: &VoxelGrid, bins: usize) -> VoxelGrid {
    if bins == v.bins {
        return v.clone();
    }
    let plane = v.height * v.width;
    let mut out = VoxelGrid {
        bins,
        data: vec![0.0; bins * plane],
        ..v.clone()
    };
    for b in 0..bins {
        let pos = if bins == 1 {
            0.0
        } else {
            b as f64 * (v.bins - 1) as f64 / (bins - 1) as f64
        };
        let lo = (pos.floor() as usize).min(v.bins - 1);
        let hi = (lo + 1).min(v.bins - 1);
        let f = pos - lo as f64;
        for i in 0..plane {
            out.data[b * plane + i] =
                (1.0 - f) * v.data[lo * plane + i] + f * v.data[hi * plane + i];
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridNetwork {
    pub config: NetworkConfig,
    pub params: NetworkParams<Tensor>,
}

impl HybridNetwork {
    /// Deterministic initialization from `config.seed`.
    pub fn build(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut stages = Vec::with_capacity(config.scales.len());
        let mut cin = config.input_channels;
        let mut cin_snn = 1;
        for &(_, c) in &config.scales {
            let ann_w = uniform(&[c, cin, 3, 3], cin * 9, &mut rng);
            let mut snn_w = uniform(&[c, cin_snn, 3, 3], cin_snn * 9, &mut rng);
            for v in snn_w.data_mut() {
                *v *= config.snn_init_gain;
            }
            let atw = config
                .atw_on
                .then(|| AtwParams::init(c, config.reduction, config.points, &mut rng))
                .transpose()?;
            let eds = config
                .eds_on
                .then(|| EdsParams::init(c, c, config.points, &mut rng))
                .transpose()?;
            let csf = config
                .csf_on
                .then(|| (CsfParams::init(c, &mut rng), CsfParams::init(c, &mut rng)));
            let head_w = uniform(&[config.num_classes, c, 1, 1], c, &mut rng);
            stages.push(StageParams {
                ann_w,
                gn_gamma: Tensor::full([c], 1.0),
                gn_beta: Tensor::zeros([c]),
                snn_w,
                atw,
                eds,
                csf,
                head_w,
            });
            cin = c;
            cin_snn = c;
        }
        let head_b = Tensor::zeros([config.num_classes]);
        Ok(Self {
            config,
            params: NetworkParams { stages, head_b },
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Binds every parameter as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> NetworkParams<Var> {
        self.params.map(&mut |t| tape.param(t.clone()))
    }

    /// Binds every parameter as a constant.
    pub fn bind_constant(&self, tape: &mut Tape) -> NetworkParams<Var> {
        self.params.map(&mut |t| tape.constant(t.clone()))
    }

    /// Checks bins and geometry, z-normalizes the voxels and extracts the
    /// reference points of every scale.
    pub fn prepare_events(&self, voxels: &[VoxelGrid], height: usize, width: usize) -> Result<EventBatch> {
        let cfg = &self.config;
        let t = cfg.timesteps;
        let mut data = Vec::with_capacity(voxels.len() * t * height * width);
        let mut refs = vec![Vec::with_capacity(voxels.len()); cfg.scales.len()];
        for (i, v) in voxels.iter().enumerate() {
            if (v.height, v.width) != (height, width) {
                return Err(Error::InvalidArgument(format!(
                    "voxel {i} is {}x{}, frames are {height}x{width}",
                    v.height, v.width
                )));
            }
            let v = if v.bins == t {
                v.clone()
            } else if cfg.remap_timesteps {
                remap_bins(v, t)
            } else {
                return Err(Error::InvalidArgument(format!(
                    "voxel {i} has {} bins but the network runs {t} timesteps",
                    v.bins
                )));
            };
            data.extend_from_slice(&znorm(&v).data);
            for (s, &(factor, _)) in cfg.scales.iter().enumerate() {
                refs[s].push(extract_reference_points(&downsample_voxel(&v, factor)?));
            }
        }
        Ok(EventBatch {
            snn_input: Tensor::new([voxels.len(), t, 1, height, width], data)?,
            refs,
        })
    }

    fn check_frames(&self, shape: &[usize]) -> Result<(usize, usize, usize)> {
        let [n, c, h, w] = *shape else {
            return Err(Error::shape("forward", format!("frames must be N x C x H x W, got {shape:?}")));
        };
        let f = self.config.max_factor();
        if c != self.config.input_channels || h % f != 0 || w % f != 0 || n == 0 {
            return Err(Error::shape(
                "forward",
                format!(
                    "frames {shape:?} need {} channels and sides divisible by {f}",
                    self.config.input_channels
                ),
            ));
        }
        Ok((n, h, w))
    }

    /// Full forward on a tape. Returns logits `N x classes x H x W`.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        p: &NetworkParams<Var>,
        frames: Var,
        events: &EventBatch,
        mode: SpikeMode,
    ) -> Result<(Var, ForwardStats)> {
        let (n, h, w) = self.check_frames(tape.shape(frames))?;
        let cfg = &self.config;
        let t = cfg.timesteps;
        if events.snn_input.shape() != [n, t, 1, h, w] {
            return Err(Error::shape(
                "forward",
                format!("event input {:?} does not match frames", events.snn_input.shape()),
            ));
        }
        let mut stats = ForwardStats::default();
        let mut ann_in = frames;
        let mut snn_in = tape.constant(events.snn_input.clone());
        let mut fused_maps = Vec::with_capacity(cfg.scales.len());
        for (i, sp) in p.stages.iter().enumerate() {
            let c = cfg.scales[i].1;
            let (hs, ws) = (h >> (i + 1), w >> (i + 1));
            let a = ann_stage(tape, ann_in, sp, cfg.norm_eps)?;

            let snn_shape = tape.shape(snn_in).to_vec();
            let input_rate = nonzero_fraction(tape.value(snn_in));
            let flat = tape.reshape(snn_in, &[n * t, snn_shape[2], snn_shape[3], snn_shape[4]])?;
            let current = tape.conv2d(flat, sp.snn_w, None, 2, 1)?;
            let current = tape.reshape(current, &[n, t, c, hs, ws])?;
            let (s, trace) = tape.lif(current, &cfg.lif, mode)?;

            let a_o = match &sp.atw {
                Some(ap) => {
                    let alpha = atw::atw_temporal_weights(tape, s, ap)?;
                    let fw = atw::atw_collapse(tape, s, alpha)?;
                    atw::atw_inject(tape, a, fw, ap)?
                }
                None => a,
            };
            let refs = &events.refs[i];
            let s_o = match &sp.eds {
                Some(ep) => eds::eds_inject(tape, s, a_o, refs, ep)?,
                None => s,
            };
            let fused = match &sp.csf {
                Some((pa, ps)) => csf::csf_fuse(tape, a_o, s_o, pa, ps)?,
                None => {
                    let x_snn = csf::time_sum(tape, a_o, s_o)?;
                    tape.add(a_o, x_snn)?
                }
            };
            fused_maps.push(fused);
            stats.stages.push(StageStats {
                snn_input_rate: input_rate,
                spike_rate: trace.rate,
                reference_points: refs.iter().map(|r| r.len()).sum(),
                min_margin: trace.min_margin,
            });
            ann_in = a_o;
            snn_in = s_o;
        }
        let logits = self.head(tape, p, &fused_maps, h, w)?;
        Ok((logits, stats))
    }

    /// The frame branch alone: no spiking stages and no injection; fusion
    /// reduces to the frame-side gate.
    pub fn forward_frames_only_on(&self, tape: &mut Tape, p: &NetworkParams<Var>, frames: Var) -> Result<Var> {
        let (_, h, w) = self.check_frames(tape.shape(frames))?;
        let mut ann_in = frames;
        let mut fused_maps = Vec::new();
        for sp in &p.stages {
            let a = ann_stage(tape, ann_in, sp, self.config.norm_eps)?;
            let fused = match &sp.csf {
                Some((pa, _)) => csf::csf_select(tape, a, pa)?,
                None => a,
            };
            fused_maps.push(fused);
            ann_in = a;
        }
        self.head(tape, p, &fused_maps, h, w)
    }

    fn head(&self, tape: &mut Tape, p: &NetworkParams<Var>, maps: &[Var], h: usize, w: usize) -> Result<Var> {
        let (h1, w1) = (h / 2, w / 2);
        let mut sum: Option<Var> = None;
        for (i, (sp, &m)) in p.stages.iter().zip(maps).enumerate() {
            // The bias rides on the finest scale, which needs no resampling.
            let bias = (i == 0).then_some(p.head_b);
            let mut z = tape.conv2d(m, sp.head_w, bias, 1, 0)?;
            if tape.shape(z)[2..] != [h1, w1] {
                z = tape.upsample_bilinear(z, h1, w1)?;
            }
            sum = Some(match sum {
                Some(s) => tape.add(s, z)?,
                None => z,
            });
        }
        let sum = sum.expect("at least one scale");
        tape.upsample_bilinear(sum, h, w)
    }

    /// Convenience forward without gradients.
    pub fn forward(&self, frames: &Tensor, voxels: &[VoxelGrid]) -> Result<Tensor> {
        let (_, h, w) = self.check_frames(frames.shape())?;
        let events = self.prepare_events(voxels, h, w)?;
        let mut tape = Tape::new();
        let p = self.bind_constant(&mut tape);
        let f = tape.constant(frames.clone());
        let (logits, _) = self.forward_on(&mut tape, &p, f, &events, SpikeMode::Heaviside)?;
        Ok(tape.value(logits).clone())
    }

    pub fn forward_frames_only(&self, frames: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.bind_constant(&mut tape);
        let f = tape.constant(frames.clone());
        let logits = self.forward_frames_only_on(&mut tape, &p, f)?;
        Ok(tape.value(logits).clone())
    }

    /// Forward plus statistics, without gradients.
    pub fn forward_with_stats(&self, frames: &Tensor, events: &EventBatch) -> Result<(Tensor, ForwardStats)> {
        let mut tape = Tape::new();
        let p = self.bind_constant(&mut tape);
        let f = tape.constant(frames.clone());
        let (logits, stats) = self.forward_on(&mut tape, &p, f, events, SpikeMode::Heaviside)?;
        Ok((tape.value(logits).clone(), stats))
    }

    /// Arg-max label map `N x H x W` (flattened).
    pub fn predict(&self, frames: &Tensor, voxels: &[VoxelGrid]) -> Result<Vec<usize>> {
        Ok(argmax_classes(&self.forward(frames, voxels)?))
    }
}

fn ann_stage(tape: &mut Tape, x: Var, sp: &StageParams<Var>, eps: f64) -> Result<Var> {
    let conv = tape.conv2d(x, sp.ann_w, None, 2, 1)?;
    let norm = tape.group_norm(conv, sp.gn_gamma, sp.gn_beta, eps)?;
    tape.relu(norm)
}

fn nonzero_fraction(t: &Tensor) -> f64 {
    t.data().iter().filter(|&&v| v != 0.0).count() as f64 / t.numel() as f64
}

/// Arg-max over the class axis of `N x K x H x W` logits; ties go to the
/// lower class index.
pub fn argmax_classes(logits: &Tensor) -> Vec<usize> {
    let [n, k, h, w] = *logits.shape() else {
        panic!("logits must be 4-D");
    };
    let plane = h * w;
    let d = logits.data();
    let mut out = Vec::with_capacity(n * plane);
    for s in 0..n {
        for i in 0..plane {
            let mut best = 0;
            for c in 1..k {
                if d[(s * k + c) * plane + i] > d[(s * k + best) * plane + i] {
                    best = c;
                }
            }
            out.push(best);
        }
    }
    out
}
