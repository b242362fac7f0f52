//! Evaluation, experiment sweeps, gradient-check runners and table output.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, PreparedSample};
use crate::energy::{profile, EnergyReport};
use crate::error::{Error, Result};
use crate::events::io::{write_pgm, write_ppm};
use crate::events::synthetic::SynthConfig;
use crate::events::{voxelize, Event, EventStream, ReferencePointSet};
use crate::fusion::{atw, csf, eds, AtwParams, CsfParams, EdsParams};
use crate::metrics::{metrics, ConfusionMatrix};
use crate::network::{
    argmax_classes, train, AdamW, HybridNetwork, NetworkConfig, NetworkParams, TrainConfig, IGNORE_INDEX,
};
use crate::spiking::{LifConfig, SpikeMode};
use crate::tensor::{grad_check_sampled, GradCheckReport, Tape, Tensor, Var, REL_ERROR_FLOOR};

/// Color of class `c` is `PALETTE[c % 19]`.
pub const PALETTE: [[u8; 3]; 19] = [
    [128, 64, 128],
    [244, 35, 232],
    [70, 70, 70],
    [102, 102, 156],
    [190, 153, 153],
    [153, 153, 153],
    [250, 170, 30],
    [220, 220, 0],
    [107, 142, 35],
    [152, 251, 152],
    [70, 130, 180],
    [220, 20, 60],
    [255, 0, 0],
    [0, 0, 142],
    [0, 0, 70],
    [0, 60, 100],
    [0, 80, 100],
    [0, 0, 230],
    [119, 11, 32],
];

/// Color rendering of a label map; ignored pixels are black.
pub fn colorize(labels: &[usize], ignore_index: usize) -> Vec<u8> {
    labels
        .iter()
        .flat_map(|&l| if l == ignore_index { [0, 0, 0] } else { PALETTE[l % PALETTE.len()] })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub miou: f64,
    pub samples: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub energy: Option<EnergyReport>,
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub ignore_index: usize,
    /// Writes `pred_XXXX.pgm` and `pred_XXXX.ppm` per sample.
    pub emit_images: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub profile_energy: bool,
}

impl EvalOptions {
    pub fn new(ignore_index: usize) -> Self {
        Self {
            ignore_index,
            ..Self::default()
        }
    }
}

/// Predicted label map of one prepared sample.
pub fn predict_sample(net: &HybridNetwork, s: &PreparedSample) -> Result<Vec<usize>> {
    let frames = Tensor::new([1, s.frame.shape()[0], s.height(), s.width()], s.frame.data().to_vec())?;
    let events = net.prepare_events(std::slice::from_ref(&s.voxel), s.height(), s.width())?;
    let (logits, _) = net.forward_with_stats(&frames, &events)?;
    Ok(argmax_classes(&logits))
}

/// Metrics over prepared samples, one confusion matrix for the whole set.
pub fn evaluate(
    net: &HybridNetwork,
    samples: &[PreparedSample],
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<Vec<usize>>)> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let mut cm = ConfusionMatrix::new(net.config.num_classes);
    let mut preds = Vec::with_capacity(samples.len());
    for s in samples {
        let pred = predict_sample(net, s)?;
        cm.accumulate(&pred, &s.labels, opts.ignore_index)?;
        preds.push(pred);
    }
    let m = metrics(&cm)?;
    let energy = opts.profile_energy.then(|| profile(net, samples)).transpose()?;
    Ok((
        EvalReport {
            accuracy: m.accuracy,
            per_class_iou: m.per_class_iou,
            miou: m.miou,
            samples: samples.len(),
            energy,
        },
        preds,
    ))
}

/// Evaluates a dataset, optionally writing prediction images and a JSON report.
pub fn run_eval(net: &HybridNetwork, data: &Dataset, opts: &EvalOptions) -> Result<EvalReport> {
    if data.num_classes != net.config.num_classes {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} classes, network predicts {}",
            data.num_classes, net.config.num_classes
        )));
    }
    let samples = data.prepare(net.config.bins)?;
    let (report, preds) = evaluate(net, &samples, opts)?;
    if let Some(dir) = &opts.emit_images {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let (w, h) = (data.width as u32, data.height as u32);
        for (i, p) in preds.iter().enumerate() {
            let gray: Vec<u8> = p.iter().map(|&c| c as u8).collect();
            write_pgm(dir.join(format!("pred_{i:04}.pgm")), w, h, &gray)?;
            write_ppm(dir.join(format!("pred_{i:04}.ppm")), w, h, &colorize(p, opts.ignore_index))?;
        }
    }
    if let Some(path) = &opts.report {
        write_json(path, &report)?;
    }
    Ok(report)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Synthetic train/test split used by experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub synth: SynthConfig,
    pub train_seed: u64,
    pub test_seed: u64,
    pub train_samples: usize,
    pub test_samples: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            train_seed: 1,
            test_seed: 2,
            train_samples: 200,
            test_samples: 50,
        }
    }
}

impl DataConfig {
    pub fn generate(&self) -> Result<(Dataset, Dataset)> {
        Ok((
            Dataset::synthetic(self.train_seed, self.train_samples, &self.synth)?,
            Dataset::synthetic(self.test_seed, self.test_samples, &self.synth)?,
        ))
    }
}

/// The JSON configuration file shared by the CLI commands.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&raw)?)
    }
}

/// Result of training and testing one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub network: HybridNetwork,
    pub losses: Vec<f64>,
    pub eval: EvalReport,
}

/// Trains `network` on the train split and evaluates it on the test split.
pub fn train_and_eval(
    network: &NetworkConfig,
    train_cfg: &TrainConfig,
    train_set: &[PreparedSample],
    test_set: &[PreparedSample],
    profile_energy: bool,
    on_iter: &mut dyn FnMut(usize, f64),
) -> Result<RunResult> {
    let mut net = HybridNetwork::build(network.clone())?;
    let mut opt = AdamW::new(&net.params);
    let outcome = train(&mut net, train_set, train_cfg, &mut opt, on_iter)?;
    let opts = EvalOptions {
        ignore_index: train_cfg.ignore_index,
        profile_energy,
        ..EvalOptions::default()
    };
    let (eval, _) = evaluate(&net, test_set, &opts)?;
    Ok(RunResult {
        network: net,
        losses: outcome.losses,
        eval,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub timesteps: usize,
    pub accuracy: f64,
    pub miou: f64,
    pub gflops_ann: f64,
    pub gflops_snn: f64,
    pub energy_mj: f64,
}

/// One model per `T`, with voxel bins equal to `T`. Data, initialization and
/// visiting order share the base seeds.
pub fn timestep_sweep(
    base: &ExperimentConfig,
    timesteps: &[usize],
    on_row: &mut dyn FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    if timesteps.is_empty() || timesteps.contains(&0) {
        return Err(Error::InvalidArgument("timesteps must be a nonempty list of positive values".into()));
    }
    let (train_data, test_data) = base.data.generate()?;
    let mut rows = Vec::with_capacity(timesteps.len());
    for &t in timesteps {
        let network = NetworkConfig {
            timesteps: t,
            bins: t,
            ..base.network.clone()
        };
        let train_set = train_data.prepare(t)?;
        let test_set = test_data.prepare(t)?;
        let run = train_and_eval(&network, &base.train, &train_set, &test_set, true, &mut |_, _| {})?;
        let e = run.eval.energy.expect("profiled");
        let row = SweepRow {
            timesteps: t,
            accuracy: run.eval.accuracy,
            miou: run.eval.miou,
            gflops_ann: e.gflops_ann,
            gflops_snn: e.gflops_snn,
            energy_mj: e.e_total_mj,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub atw: bool,
    pub eds: bool,
    pub csf: bool,
}

impl Toggles {
    /// Frame+event baseline, single modules, pairs, then all three.
    pub fn standard_set() -> Vec<Toggles> {
        let t = |atw, eds, csf| Toggles { atw, eds, csf };
        vec![
            t(false, false, false),
            t(true, false, false),
            t(false, true, false),
            t(false, false, true),
            t(true, true, false),
            t(true, false, true),
            t(false, true, true),
            t(true, true, true),
        ]
    }

    pub fn label(&self) -> String {
        let mut parts = vec!["F-E"];
        if self.atw {
            parts.push("ATW");
        }
        if self.eds {
            parts.push("EDS");
        }
        if self.csf {
            parts.push("CSF");
        }
        parts.join("+")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub toggles: Toggles,
    pub params: usize,
    pub accuracy: f64,
    pub miou: f64,
}

pub fn ablation(
    base: &ExperimentConfig,
    toggle_sets: &[Toggles],
    on_row: &mut dyn FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let (train_data, test_data) = base.data.generate()?;
    let train_set = train_data.prepare(base.network.bins)?;
    let test_set = test_data.prepare(base.network.bins)?;
    let mut rows = Vec::with_capacity(toggle_sets.len());
    for &toggles in toggle_sets {
        let network = NetworkConfig {
            atw_on: toggles.atw,
            eds_on: toggles.eds,
            csf_on: toggles.csf,
            ..base.network.clone()
        };
        let run = train_and_eval(&network, &base.train, &train_set, &test_set, false, &mut |_, _| {})?;
        let row = AblationRow {
            label: toggles.label(),
            toggles,
            params: run.network.param_count(),
            accuracy: run.eval.accuracy,
            miou: run.eval.miou,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// Plain-text table with left-aligned, space-padded columns.
pub fn format_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(headers.to_vec());
    out.push('\n');
    out.push_str(&line(widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().iter().map(|s| s.as_str()).collect()));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(|s| s.as_str()).collect()));
        out.push('\n');
    }
    out
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.timesteps.to_string(),
                format!("{:.2}", 100.0 * r.accuracy),
                format!("{:.2}", 100.0 * r.miou),
                format!("{:.6}", r.gflops_ann),
                format!("{:.6}", r.gflops_snn),
                format!("{:.6}", r.energy_mj),
            ]
        })
        .collect();
    format_table(&["T", "Acc[%]", "mIoU[%]", "GFLOPs_ANN", "GFLOPs_SNN", "E_Total(mJ)"], &body)
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mark = |b: bool| if b { "x" } else { "" }.to_string();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                mark(r.toggles.atw),
                mark(r.toggles.eds),
                mark(r.toggles.csf),
                r.params.to_string(),
                format!("{:.2}", 100.0 * r.accuracy),
                format!("{:.2}", 100.0 * r.miou),
            ]
        })
        .collect();
    format_table(&["Config", "ATW", "EDS", "CSF", "Params", "Acc[%]", "mIoU[%]"], &body)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradCheckModule {
    Atw,
    Eds,
    Csf,
    Lif,
    Net,
}

impl GradCheckModule {
    pub const ALL: [GradCheckModule; 5] = [Self::Atw, Self::Eds, Self::Csf, Self::Lif, Self::Net];

    /// Largest accepted relative error.
    pub fn tolerance(self) -> f64 {
        match self {
            Self::Net => 1e-3,
            _ => 1e-4,
        }
    }

    /// Denominator floor of the relative error. Whole-network gradients
    /// include entries near 1e-9 whose central differences are dominated by
    /// f64 roundoff of the loss, so there the floor is raised.
    pub fn rel_error_floor(self) -> f64 {
        match self {
            Self::Net => NET_REL_ERROR_FLOOR,
            _ => REL_ERROR_FLOOR,
        }
    }
}

/// Relative-error floor of the whole-network check.
pub const NET_REL_ERROR_FLOOR: f64 = 1e-6;

impl fmt::Display for GradCheckModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Atw => "atw",
            Self::Eds => "eds",
            Self::Csf => "csf",
            Self::Lif => "lif",
            Self::Net => "net",
        })
    }
}

impl FromStr for GradCheckModule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown module {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOutcome {
    pub module: GradCheckModule,
    /// Relative error under [`GradCheckModule::rel_error_floor`].
    pub max_rel_error: f64,
    /// Relative error with the default floor of 1e-8.
    pub max_rel_error_default_floor: f64,
    pub checked: usize,
    /// Elements whose step had to be shrunk around a kink.
    pub refined: usize,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckOutcome {
    fn new(module: GradCheckModule, r: GradCheckReport) -> Self {
        let tolerance = module.tolerance();
        let max_rel_error = r.max_rel_error_with_floor(module.rel_error_floor());
        Self {
            module,
            max_rel_error,
            max_rel_error_default_floor: r.max_rel_error,
            checked: r.checked,
            refined: r.refined,
            tolerance,
            passed: max_rel_error <= tolerance,
        }
    }
}

/// Finite-difference step of the module gradient checks.
pub const GRADCHECK_EPS: f64 = 1e-5;
pub const NET_GRADCHECK_EPS: f64 = 1e-5;
/// Smallest allowed `|H - theta|` so that no perturbation flips a spike.
pub const GRADCHECK_MARGIN: f64 = 1e-3;
const PER_PARAM: usize = 8;

fn rand_tensor(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-scale..scale))
}

/// Adds uniform noise so that zero-initialized tensors carry gradient.
fn jitter(t: &mut Tensor, rng: &mut ChaCha8Rng) {
    for v in t.data_mut() {
        *v += rng.gen_range(-0.3..0.3);
    }
}

/// `sum(out * r)` for a fixed random `r`: every output element gets a
/// distinct, nonzero upstream gradient.
fn project(tape: &mut Tape, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rand_tensor(tape.shape(out), 1.0, &mut rng);
    let r = tape.constant(r);
    let prod = tape.mul(out, r)?;
    tape.sum(prod)
}

fn rebind<T>(vars: &[Var], count: usize, f: impl FnOnce(&mut dyn FnMut() -> Var) -> T) -> T {
    assert!(vars.len() >= count);
    let mut it = vars.iter();
    f(&mut || *it.next().expect("parameter count"))
}

/// Runs one gradient check with a fixed seed.
pub fn run_gradcheck(module: GradCheckModule, seed: u64) -> Result<GradCheckOutcome> {
    let report = match module {
        GradCheckModule::Atw => gradcheck_atw(seed)?,
        GradCheckModule::Eds => gradcheck_eds(seed)?,
        GradCheckModule::Csf => gradcheck_csf(seed)?,
        GradCheckModule::Lif => gradcheck_lif(seed)?,
        GradCheckModule::Net => gradcheck_net(seed)?,
    };
    Ok(GradCheckOutcome::new(module, report))
}

fn gradcheck_atw(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, t, c, h, w) = (2, 3, 4, 5, 4);
    let mut p = AtwParams::init(c, 2, 3, &mut rng)?;
    p.for_each_mut(&mut |x| jitter(x, &mut rng));
    let mut params = vec![
        rand_tensor(&[n, c, h, w], 1.0, &mut rng),
        Tensor::from_fn([n, t, c, h, w], |_| rng.gen_range(0.0..1.0)),
    ];
    p.for_each(&mut |x| params.push(x.clone()));
    let template = p.map(&mut |_| ());
    grad_check_sampled(
        |tape, v| {
            let pv = rebind(&v[2..], v.len() - 2, |next| template.map(&mut |_| next()));
            let alpha = atw::atw_temporal_weights(tape, v[1], &pv)?;
            let fw = atw::atw_collapse(tape, v[1], alpha)?;
            let out = atw::atw_inject(tape, v[0], fw, &pv)?;
            project(tape, out, seed ^ 0xa7)
        },
        &params,
        GRADCHECK_EPS,
        PER_PARAM,
        seed,
    )
}

fn gradcheck_eds(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, t, c, ca, h, w) = (2, 2, 3, 4, 5, 5);
    let mut p = EdsParams::init(c, ca, 3, &mut rng)?;
    p.for_each_mut(&mut |x| jitter(x, &mut rng));
    let refs: Vec<ReferencePointSet> = (0..n)
        .map(|s| ReferencePointSet {
            points: if s == 0 { vec![(0, 1), (2, 2), (4, 3)] } else { vec![(1, 4), (3, 0)] },
            height: h,
            width: w,
            scale: 1,
        })
        .collect();
    let mut params = vec![
        rand_tensor(&[n, t, c, h, w], 1.0, &mut rng),
        rand_tensor(&[n, ca, h, w], 1.0, &mut rng),
    ];
    p.for_each(&mut |x| params.push(x.clone()));
    let template = p.map(&mut |_| ());
    grad_check_sampled(
        |tape, v| {
            let pv = rebind(&v[2..], v.len() - 2, |next| template.map(&mut |_| next()));
            let out = eds::eds_inject(tape, v[0], v[1], &refs, &pv)?;
            project(tape, out, seed ^ 0xed)
        },
        &params,
        GRADCHECK_EPS,
        PER_PARAM,
        seed,
    )
}

fn gradcheck_csf(seed: u64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, t, c, h, w) = (2, 3, 4, 3, 4);
    let pa = CsfParams::init(c, &mut rng);
    let ps = CsfParams::init(c, &mut rng);
    let mut params = vec![
        rand_tensor(&[n, c, h, w], 1.0, &mut rng),
        rand_tensor(&[n, t, c, h, w], 1.0, &mut rng),
    ];
    pa.for_each(&mut |x| params.push(x.clone()));
    ps.for_each(&mut |x| params.push(x.clone()));
    grad_check_sampled(
        |tape, v| {
            let pa = CsfParams { w: v[2], b: v[3] };
            let ps = CsfParams { w: v[4], b: v[5] };
            let out = csf::csf_fuse(tape, v[0], v[1], &pa, &ps)?;
            project(tape, out, seed ^ 0xcf)
        },
        &params,
        GRADCHECK_EPS,
        PER_PARAM,
        seed,
    )
}

/// Surrogate convention: the forward emits `sigmoid(alpha (H - theta))`, whose
/// derivative is the surrogate; the reset still follows the hard threshold,
/// so inputs are redrawn until every membrane stays clear of it.
fn gradcheck_lif(seed: u64) -> Result<GradCheckReport> {
    let cfg = LifConfig::default();
    let shape = [2, 6, 3, 4];
    for attempt in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt * 0x9e37));
        let x = Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-0.5..2.5));
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let (_, trace) = tape.lif(xv, &cfg, SpikeMode::Sigmoid)?;
        if trace.min_margin < GRADCHECK_MARGIN {
            continue;
        }
        return grad_check_sampled(
            |tape, v| {
                let (s, _) = tape.lif(v[0], &cfg, SpikeMode::Sigmoid)?;
                project(tape, s, seed ^ 0x11f)
            },
            &[x],
            GRADCHECK_EPS,
            shape.iter().product(),
            seed,
        );
    }
    Err(Error::InvalidArgument("no LIF input clear of the threshold found".into()))
}

/// Network used by the whole-network check: two scales on a 16x16 input.
pub fn gradcheck_network_config(seed: u64) -> NetworkConfig {
    NetworkConfig {
        bins: 3,
        timesteps: 3,
        scales: vec![(2, 4), (4, 8)],
        points: 2,
        reduction: 2,
        seed,
        ..NetworkConfig::default()
    }
}

fn random_stream(rng: &mut ChaCha8Rng, size: u32, count: usize, t_end: u64) -> Result<EventStream> {
    let mut times: Vec<u64> = (0..count).map(|_| rng.gen_range(0..=t_end)).collect();
    times.sort_unstable();
    let events = times
        .into_iter()
        .map(|t| {
            Event::new(
                rng.gen_range(0..size) as u16,
                rng.gen_range(0..size) as u16,
                t,
                if rng.gen_bool(0.5) { 1 } else { -1 },
            )
        })
        .collect();
    EventStream::new(size, size, events)
}

fn gradcheck_net(seed: u64) -> Result<GradCheckReport> {
    const SIZE: usize = 16;
    let cfg = gradcheck_network_config(seed);
    let mut net = HybridNetwork::build(cfg.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    net.params.for_each_mut(&mut |t| jitter(t, &mut rng));
    for attempt in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt * 0x9e37) ^ 0xf00d);
        let n = 2;
        let frames = rand_tensor(&[n, 1, SIZE, SIZE], 1.0, &mut rng);
        let voxels = (0..n)
            .map(|_| voxelize(&random_stream(&mut rng, SIZE as u32, 40, 1000)?, cfg.bins, 0, 1000))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = (0..n * SIZE * SIZE).map(|_| rng.gen_range(0..cfg.num_classes)).collect();
        let events = net.prepare_events(&voxels, SIZE, SIZE)?;

        let mut tape = Tape::new();
        let p = net.bind_constant(&mut tape);
        let f = tape.constant(frames.clone());
        let (_, stats) = net.forward_on(&mut tape, &p, f, &events, SpikeMode::Sigmoid)?;
        if stats.min_margin() < GRADCHECK_MARGIN {
            continue;
        }
        let params: Vec<Tensor> = net.params.leaves().into_iter().cloned().collect();
        let template: NetworkParams<()> = net.params.map(&mut |_| ());
        let count = params.len();
        return grad_check_sampled(
            |tape, v| {
                let pv = rebind(v, count, |next| template.map(&mut |_| next()));
                let f = tape.constant(frames.clone());
                let (logits, _) = net.forward_on(tape, &pv, f, &events, SpikeMode::Sigmoid)?;
                tape.cross_entropy(logits, &labels, IGNORE_INDEX)
            },
            &params,
            NET_GRADCHECK_EPS,
            PER_PARAM / 2,
            seed,
        );
    }
    Err(Error::InvalidArgument("no network input clear of the threshold found".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_alignment() {
        let t = format_table(&["a", "long"], &[vec!["xyz".into(), "1".into()]]);
        assert_eq!(t, "a    long\n---  ----\nxyz  1\n");
    }

    #[test]
    fn standard_toggles_cover_all_combinations() {
        let set = Toggles::standard_set();
        assert_eq!(set.len(), 8);
        for (i, a) in set.iter().enumerate() {
            assert!(set[i + 1..].iter().all(|b| a != b));
        }
        assert_eq!(set[0].label(), "F-E");
        assert_eq!(set[7].label(), "F-E+ATW+EDS+CSF");
    }

    #[test]
    fn module_names_round_trip() {
        for m in GradCheckModule::ALL {
            assert_eq!(m.to_string().parse::<GradCheckModule>().unwrap(), m);
        }
        assert!("foo".parse::<GradCheckModule>().is_err());
    }

    #[test]
    fn palette_colors_are_distinct() {
        for (i, a) in PALETTE.iter().enumerate() {
            assert!(PALETTE[i + 1..].iter().all(|b| a != b));
        }
        assert_eq!(colorize(&[0, 255], 255), vec![128, 64, 128, 0, 0, 0]);
    }
}
