use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use hybridseg::dataset::Dataset;
use hybridseg::energy::profile;
use hybridseg::events::io::{read_events, write_voxel};
use hybridseg::events::synthetic::SynthConfig;
use hybridseg::events::voxelize;
use hybridseg::harness::{
    ablation, ablation_table, format_table, run_eval, run_gradcheck, sweep_table, timestep_sweep, write_json,
    EvalOptions, ExperimentConfig, GradCheckModule, Toggles,
};
use hybridseg::network::{load_checkpoint, save_checkpoint, train, AdamW, HybridNetwork};

#[derive(Parser)]
#[command(name = "hybridseg", version, about = "Hybrid frame/event segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic moving-shapes dataset.
    GenSynthetic {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 64)]
        width: u32,
        #[arg(long, default_value_t = 64)]
        height: u32,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 10)]
        samples: usize,
        #[arg(long, default_value_t = 3)]
        shapes: usize,
    },
    /// Convert an event file (EVT1 or .csv) to a VOX1 voxel grid.
    Voxelize {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
        /// Window start in µs; defaults to the first event.
        #[arg(long)]
        t_start: Option<u64>,
        /// Inclusive window end in µs; defaults to the last event.
        #[arg(long)]
        t_end: Option<u64>,
    },
    /// Train a network on a dataset directory and save a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the iteration count of the config file.
        #[arg(long)]
        iterations: Option<usize>,
        /// Writes `iteration,loss` rows.
        #[arg(long)]
        loss_log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint: accuracy, per-class IoU and mIoU.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Directory for predicted label maps (PGM) and color renderings (PPM).
        #[arg(long)]
        emit_images: Option<PathBuf>,
        /// Include the energy profile in the report.
        #[arg(long)]
        energy: bool,
    },
    /// Count operations and estimate inference energy.
    Profile {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Compare analytic gradients with finite differences.
    Gradcheck {
        #[arg(long, value_enum, default_value_t = ModuleArg::All)]
        module: ModuleArg,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and evaluate one model per timestep count.
    SweepTimesteps {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5,7")]
        list: Vec<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train and evaluate the eight module on/off configurations.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModuleArg {
    All,
    Atw,
    Eds,
    Csf,
    Lif,
    Net,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn load_dataset(dir: &Path) -> Result<Dataset> {
    let data = Dataset::load(dir).with_context(|| format!("loading dataset {}", dir.display()))?;
    ensure!(!data.is_empty(), "dataset {} has no samples", dir.display());
    Ok(data)
}

fn load_network(path: &Path) -> Result<HybridNetwork> {
    Ok(load_checkpoint(path)
        .with_context(|| format!("loading checkpoint {}", path.display()))?
        .network)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenSynthetic {
            seed,
            out_dir,
            width,
            height,
            classes,
            samples,
            shapes,
        } => {
            let cfg = SynthConfig {
                width,
                height,
                num_classes: classes,
                num_shapes: shapes,
                ..SynthConfig::default()
            };
            let data = Dataset::synthetic(seed, samples, &cfg)?;
            data.save(&out_dir)
                .with_context(|| format!("writing dataset to {}", out_dir.display()))?;
            let events: usize = data.samples.iter().map(|s| s.events.len()).sum();
            println!(
                "wrote {samples} samples ({width}x{height}, {classes} classes, {events} events) to {}",
                out_dir.display()
            );
        }
        Command::Voxelize {
            events,
            bins,
            out,
            t_start,
            t_end,
        } => {
            let stream = read_events(&events).with_context(|| format!("reading {}", events.display()))?;
            let first = stream.events().first().map(|e| e.t);
            let last = stream.events().last().map(|e| e.t);
            let (Some(t0), Some(t1)) = (t_start.or(first), t_end.or(last)) else {
                bail!("{} has no events; pass --t-start and --t-end", events.display());
            };
            let grid = voxelize(&stream.window(t0, t1), bins, t0, t1)?;
            write_voxel(&grid, &out).with_context(|| format!("writing {}", out.display()))?;
            println!(
                "{} events -> {bins}x{}x{} voxel grid in {}",
                stream.window(t0, t1).len(),
                grid.height,
                grid.width,
                out.display()
            );
        }
        Command::Train {
            config,
            data,
            out,
            iterations,
            loss_log,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(n) = iterations {
                cfg.train.iterations = n;
                cfg.train.warmup = cfg.train.warmup.min(n);
            }
            let dataset = load_dataset(&data)?;
            ensure!(
                dataset.num_classes == cfg.network.num_classes,
                "dataset has {} classes, config expects {}",
                dataset.num_classes,
                cfg.network.num_classes
            );
            let samples = dataset.prepare(cfg.network.bins)?;
            let mut net = HybridNetwork::build(cfg.network.clone())?;
            let mut opt = AdamW::new(&net.params);
            eprintln!(
                "training {} parameters on {} samples for {} iterations",
                net.param_count(),
                samples.len(),
                cfg.train.iterations
            );
            let started = Instant::now();
            let total = cfg.train.iterations;
            let outcome = train(&mut net, &samples, &cfg.train, &mut opt, &mut |i, loss| {
                if i % 50 == 0 || i == 1 || i == total {
                    eprintln!("iter {i:>5}  loss {loss:.5}  {:.1}s", started.elapsed().as_secs_f64());
                }
            })?;
            save_checkpoint(&out, &net, Some(&opt)).with_context(|| format!("writing {}", out.display()))?;
            if let Some(path) = loss_log {
                let mut text = String::from("iteration,loss\n");
                for (i, l) in outcome.losses.iter().enumerate() {
                    text.push_str(&format!("{},{l}\n", i + 1));
                }
                std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            }
            println!(
                "final loss {:.5}, checkpoint {}",
                outcome.losses.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Eval {
            ckpt,
            data,
            report,
            emit_images,
            energy,
        } => {
            let net = load_network(&ckpt)?;
            let dataset = load_dataset(&data)?;
            let opts = EvalOptions {
                emit_images,
                report,
                profile_energy: energy,
                ..EvalOptions::new(hybridseg::network::IGNORE_INDEX)
            };
            let r = run_eval(&net, &dataset, &opts)?;
            let rows: Vec<Vec<String>> = r
                .per_class_iou
                .iter()
                .enumerate()
                .map(|(c, iou)| {
                    vec![
                        c.to_string(),
                        iou.map_or("-".into(), |v| format!("{:.2}", 100.0 * v)),
                    ]
                })
                .collect();
            print!("{}", format_table(&["class", "IoU[%]"], &rows));
            println!(
                "samples {}  Acc {:.2}%  mIoU {:.2}%",
                r.samples,
                100.0 * r.accuracy,
                100.0 * r.miou
            );
            if let Some(e) = &r.energy {
                println!("E_Total {:.6} mJ", e.e_total_mj);
            }
        }
        Command::Profile { ckpt, data, report } => {
            let net = load_network(&ckpt)?;
            let dataset = load_dataset(&data)?;
            let rep = profile(&net, &dataset.prepare(net.config.bins)?)?;
            let rows: Vec<Vec<String>> = rep
                .layers
                .iter()
                .map(|l| {
                    vec![
                        l.name.clone(),
                        format!("{:?}", l.kind).to_uppercase(),
                        format!("{:.0}", l.macs),
                        l.spike_rate.map_or("-".into(), |r| format!("{r:.4}")),
                        format!("{:.0}", l.ops),
                    ]
                })
                .collect();
            print!("{}", format_table(&["layer", "kind", "MACs", "rate", "ops"], &rows));
            println!(
                "GFLOPs_ANN {:.6}  GFLOPs_SNN {:.6}  E_Total {:.6} mJ",
                rep.gflops_ann, rep.gflops_snn, rep.e_total_mj
            );
            if let Some(path) = report {
                write_json(&path, &rep)?;
            }
        }
        Command::Gradcheck { module, seed } => {
            let modules: Vec<GradCheckModule> = match module {
                ModuleArg::All => GradCheckModule::ALL.to_vec(),
                ModuleArg::Atw => vec![GradCheckModule::Atw],
                ModuleArg::Eds => vec![GradCheckModule::Eds],
                ModuleArg::Csf => vec![GradCheckModule::Csf],
                ModuleArg::Lif => vec![GradCheckModule::Lif],
                ModuleArg::Net => vec![GradCheckModule::Net],
            };
            let mut rows = Vec::new();
            let mut all_passed = true;
            for m in modules {
                let o = run_gradcheck(m, seed)?;
                all_passed &= o.passed;
                rows.push(vec![
                    m.to_string(),
                    o.checked.to_string(),
                    format!("{:.3e}", o.max_rel_error),
                    format!("{:.0e}", m.rel_error_floor()),
                    format!("{:.0e}", o.tolerance),
                    if o.passed { "pass" } else { "FAIL" }.to_string(),
                ]);
            }
            print!("{}", format_table(&["module", "elements", "max rel err", "floor", "tol", "result"], &rows));
            if !all_passed {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::SweepTimesteps { config, list, report } => {
            let cfg = load_config(config.as_deref())?;
            let rows = timestep_sweep(&cfg, &list, &mut |r| {
                eprintln!("T={} done: mIoU {:.2}%", r.timesteps, 100.0 * r.miou);
            })?;
            print!("{}", sweep_table(&rows));
            if let Some(path) = report {
                write_json(&path, &rows)?;
            }
        }
        Command::Ablate { config, report } => {
            let cfg = load_config(config.as_deref())?;
            let rows = ablation(&cfg, &Toggles::standard_set(), &mut |r| {
                eprintln!("{} done: mIoU {:.2}%", r.label, 100.0 * r.miou);
            })?;
            print!("{}", ablation_table(&rows));
            if let Some(path) = report {
                write_json(&path, &rows)?;
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
