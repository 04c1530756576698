//! `emstress` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use emstress::config::{tree_summary, RunConfig};
use emstress::io::{read_field, write_field, write_file, write_loss_history, write_sweep, Provenance, SweepRow};
use emstress::neural::{load_checkpoint, save_checkpoint};
use emstress::oracle::relative_error;
use emstress::pipeline::{run_cell, sweep_grid, timed, Setup, SweepAxis};
use emstress::{Error, Result};

#[derive(Parser)]
#[command(name = "emstress", version, about = "Electromigration stress on interconnect trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Only print errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file, or directory for commands that write several files.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the config and tree invariants.
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Solve the finite-difference reference at the probes.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Train the network and write a checkpoint plus loss history.
    Train {
        #[command(flatten)]
        common: Common,
        /// Checkpoint path (default: <output_dir>/model.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Evaluate a trained model at the probes.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Relative error of a trained model against the reference solver.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Reuse a reference field CSV instead of solving again.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Train and compare over a grid of settings.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Axis to vary, optionally with values: `n_c` or `n_c=10,20,30`. Repeat for a grid.
        #[arg(long, required = true)]
        axis: Vec<String>,
        /// Cells run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Time training, inference and the reference solve on the configured tree.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Skip training and time this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.set_seed(seed);
    }
    Ok(cfg)
}

fn provenance(cfg: &RunConfig) -> Provenance {
    Provenance {
        config_hash: cfg.hash(),
        seed: cfg.seed(),
    }
}

fn out_path(common: &Common, cfg: &RunConfig, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| cfg.output_dir.join(default))
}

fn load_model(setup: &Setup, path: &Path) -> Result<emstress::neural::MlpModel> {
    let expected = setup.config.training.layer_sizes();
    let (model, _) = load_checkpoint(path, Some(&expected))?;
    Ok(model)
}

fn parse_axis(spec: &str) -> Result<(SweepAxis, Vec<usize>)> {
    let (name, values) = match spec.split_once('=') {
        Some((n, v)) => (n, Some(v)),
        None => (spec, None),
    };
    let axis = SweepAxis::parse(name)?;
    let values = match values {
        Some(v) => v
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad value {s:?} for axis {name}"))))
            .collect::<Result<Vec<_>>>()?,
        None => axis.default_values(),
    };
    if values.is_empty() {
        return Err(Error::Config(format!("axis {name} has no values")));
    }
    Ok((axis, values))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Validate { common } => {
            let cfg = load(&common)?;
            let tree = cfg.validate()?;
            println!("valid: {}", tree_summary(&tree));
        }
        Command::Oracle { common } => {
            let cfg = load(&common)?;
            let setup = Setup::new(cfg)?;
            let field = setup.oracle(&setup.probes)?;
            let path = out_path(&common, &setup.config, "oracle.csv");
            write_file(&path, |b| write_field(b, &field, &provenance(&setup.config)))?;
            log::info!("wrote {} samples to {}", field.samples.len(), path.display());
        }
        Command::Train { common, checkpoint } => {
            let cfg = load(&common)?;
            let setup = Setup::new(cfg)?;
            let (model, report) = setup.train()?;
            let dir = common.out.clone().unwrap_or_else(|| setup.config.output_dir.clone());
            std::fs::create_dir_all(&dir)?;
            let ckpt = checkpoint.unwrap_or_else(|| dir.join("model.ckpt"));
            save_checkpoint(&model, &setup.checkpoint_meta(&model), &ckpt)?;
            let prov = provenance(&setup.config);
            write_file(&dir.join("loss_history.csv"), |b| write_loss_history(b, &report.loss_history, &prov))?;
            std::fs::write(dir.join("train_report.json"), serde_json::to_string_pretty(&report)?)?;
            println!(
                "trained: loss {:.6e} -> {:.6e}, {} iterations, {:.1} s, stop {:?}; checkpoint {}",
                report.initial_loss,
                report.final_loss,
                report.iterations,
                report.wall_time_s,
                report.stop_reason,
                ckpt.display()
            );
        }
        Command::Infer { common, checkpoint } => {
            let cfg = load(&common)?;
            let setup = Setup::new(cfg)?;
            let model = load_model(&setup, &checkpoint)?;
            let (field, secs) = timed(|| setup.predict(&model, &setup.probes))?;
            let path = out_path(&common, &setup.config, "infer.csv");
            write_file(&path, |b| write_field(b, &field, &provenance(&setup.config)))?;
            log::info!("inferred {} samples in {:.4} s", field.samples.len(), secs);
            match setup.nucleation(&model)? {
                Some(n) => println!("nucleation time: {:.6e} s", n.t_s),
                None => println!("nucleation time: none within probe horizon"),
            }
        }
        Command::Compare {
            common,
            checkpoint,
            reference,
        } => {
            let cfg = load(&common)?;
            let setup = Setup::new(cfg)?;
            let model = load_model(&setup, &checkpoint)?;
            let report = match reference {
                Some(path) => {
                    let (reference, _) = read_field(&path)?;
                    relative_error(&setup.predict(&model, &setup.probes)?, &reference)?
                }
                None => setup.compare(&model)?,
            };
            let json = serde_json::to_string_pretty(&report)?;
            if let Some(path) = &common.out {
                write_file(path, |b| {
                    b.extend_from_slice(json.as_bytes());
                    Ok(())
                })?;
            }
            println!("global relative error: {:.6e}", report.global);
            for (t, e) in &report.per_time {
                println!("  t = {t:.4e} s: {e:.6e}");
            }
        }
        Command::Sweep { common, axis, jobs } => {
            let cfg = load(&common)?;
            cfg.validate()?;
            let axes = axis.iter().map(|a| parse_axis(a)).collect::<Result<Vec<_>>>()?;
            let label = axes.iter().map(|(a, _)| a.name()).collect::<Vec<_>>().join("+");
            let cells = sweep_grid(&cfg, &axes);
            let dir = common.out.clone().unwrap_or_else(|| cfg.output_dir.join("sweep"));
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            let rows: Vec<SweepRow> = pool.install(|| {
                cells
                    .into_par_iter()
                    .enumerate()
                    .map(|(k, cell)| {
                        let prov = provenance(&cell);
                        let result = run_cell(cell, &label)?;
                        let cell_dir = dir.join(format!("cell_{k:03}"));
                        write_file(&cell_dir.join("loss_history.csv"), |b| {
                            write_loss_history(b, &result.report.loss_history, &prov)
                        })?;
                        write_file(&cell_dir.join("row.csv"), |b| write_sweep(b, std::slice::from_ref(&result.row), &prov))?;
                        log::info!("cell {k}: rel_error {:.3e}, train {:.1} s", result.row.rel_error, result.row.train_s);
                        Ok(result.row)
                    })
                    .collect::<Result<Vec<_>>>()
            })?;
            write_file(&dir.join("sweep.csv"), |b| write_sweep(b, &rows, &provenance(&cfg)))?;
            for r in &rows {
                println!(
                    "n_g={} n_c={} layers={} neurons={} n_segments={}: rel_error {:.3e}, train {:.1} s, infer {:.3} s",
                    r.n_g, r.n_c, r.layers, r.neurons, r.n_segments, r.rel_error, r.train_s, r.infer_s
                );
            }
        }
        Command::Bench { common, checkpoint } => {
            let cfg = load(&common)?;
            let setup = Setup::new(cfg)?;
            let (model, train_s) = match checkpoint {
                Some(p) => (load_model(&setup, &p)?, 0.0),
                None => {
                    let ((m, _), s) = timed(|| setup.train())?;
                    (m, s)
                }
            };
            let (_, infer_s) = timed(|| setup.predict(&model, &setup.probes))?;
            let (_, oracle_s) = timed(|| setup.oracle(&setup.probes))?;
            let report = serde_json::json!({
                "n_segments": setup.tree.segments().len(),
                "n_probe_times": setup.probes.times_s.len(),
                "train_s": train_s,
                "infer_s": infer_s,
                "oracle_s": oracle_s,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let validation = e.is_validation() || matches!(e, Error::Io(_));
            ExitCode::from(if validation { 1 } else { 2 })
        }
    }
}
