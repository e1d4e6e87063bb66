use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hgnn::model::Observation;
use hgnn::sim::Dataset;
use hgnn_cli::data::{cap_tactile, split_indices};
use hgnn_cli::eval::{evaluate_model, write_bins, write_metrics, MetricsReport};
use hgnn_cli::plot::{line_plot, Series};
use hgnn_cli::report::{
    ablate, sweep_tactile, write_ablation, write_ablation_runs, write_sweep, GenSpec, SummaryRow,
    ABLATION_SEEDS, SWEEP_CAPS,
};
use hgnn_cli::train::{load_checkpoint, train_on, with_threads, CONFIG_FILE};
use hgnn_cli::{variant_from_flags, HarnessError, Result, RunConfig};

/// Visuotactile in-hand pose estimation with hierarchical graph networks.
#[derive(Parser, Debug)]
#[command(name = "hgnn", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset file.
    GenData(GenArgs),
    /// Train a model on the training split.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        /// Checkpoint written by `train`; its run.cfg is read first.
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Evaluate every sample instead of the test split.
        #[arg(long)]
        all: bool,
        /// Also write error-vs-occlusion plots.
        #[arg(long)]
        svg: bool,
    },
    /// Train and evaluate the full model and its three ablations.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        /// Seeds to train with.
        #[arg(long, value_delimiter = ',', default_values_t = ABLATION_SEEDS)]
        seeds: Vec<u64>,
    },
    /// Re-generate data per tactile cap, then train and evaluate on each.
    SweepTactile {
        #[command(flatten)]
        run: RunArgs,
        /// Samples per generated dataset.
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// Generation seed.
        #[arg(long, default_value_t = 1)]
        gen_seed: u64,
        #[arg(long, default_value_t = 5)]
        objects: usize,
        #[arg(long, value_delimiter = ',', default_values_t = SWEEP_CAPS)]
        caps: Vec<usize>,
        /// Also write an error-vs-cap plot.
        #[arg(long)]
        svg: bool,
    },
    /// Print one dataset record, or its graph with `--graph`.
    Dump {
        path: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        graph: bool,
        /// Graph construction settings come from this config file.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Number of samples.
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Object categories (1 to 5).
    #[arg(long, default_value_t = 5)]
    objects: usize,
    /// Contact points kept per sensor.
    #[arg(long, default_value_t = 16)]
    max_tactile_points: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Run settings. Flags override values from `--config`.
#[derive(Args, Debug, Default)]
struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Training fraction in (0, 1).
    #[arg(long)]
    split: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Final learning rate as a fraction of `--lr` (cosine decay).
    #[arg(long)]
    lr_final: Option<f64>,
    /// Model variant: full, NoVis, NoProp or NoHrch (ablations are exclusive).
    #[arg(long = "flag")]
    flags: Vec<String>,
    /// Message-passing rounds L.
    #[arg(long)]
    rounds: Option<usize>,
    /// Confident nodes K in the objective.
    #[arg(long)]
    top_k: Option<usize>,
    /// Confidence regularizer weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Radius-edge threshold in voxel units.
    #[arg(long)]
    r_multiplier: Option<f64>,
    /// Cross-modality neighbors per node.
    #[arg(long)]
    k_inter: Option<usize>,
    /// Contacts kept per sensor at load time.
    #[arg(long)]
    max_tactile_points: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Run on one thread for bit-reproducible output.
    #[arg(long)]
    single_thread: bool,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    /// Model points per object in the objective.
    #[arg(long)]
    loss_points: Option<usize>,
    /// Gradient norm cap (0 disables).
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    max_steps: Option<u64>,
}

impl RunArgs {
    fn resolve(&self, mut cfg: RunConfig) -> Result<RunConfig> {
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        macro_rules! set {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = &self.$field { cfg.$target = v.clone(); })*
            };
        }
        set!(dataset => dataset, split => split, seed => seed, epochs => epochs, batch_size => batch_size,
             lr => learning_rate, lr_final => lr_final, rounds => rounds, top_k => top_k, lambda => lambda,
             r_multiplier => r_multiplier, k_inter => k_inter, out_dir => out_dir,
             checkpoint_every => checkpoint_every, loss_points => loss_points, clip_norm => clip_norm);
        if let Some(v) = self.max_tactile_points {
            cfg.max_tactile_points = Some(v);
        }
        if let Some(v) = self.max_steps {
            cfg.max_steps = Some(v);
        }
        if let Some(v) = variant_from_flags(&self.flags)? {
            cfg.variant = v;
        }
        if self.single_thread {
            cfg.single_thread = true;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Ok(Dataset::load(path)?)
}

fn print_report(report: &MetricsReport) {
    println!("samples {}", report.rows.len());
    println!(
        "position error {:.4} ± {:.4} cm",
        report.position.mean, report.position.se
    );
    println!(
        "angular error {:.4} ± {:.4} deg",
        report.angular.mean, report.angular.se
    );
    for b in report.bins.iter().filter(|b| b.position.n > 0) {
        println!(
            "  occlusion {:>3}-{:<3}% n={:<4} pos {:.4} cm  ang {:.4} deg",
            b.lo, b.hi, b.position.n, b.position.mean, b.angular.mean
        );
    }
}

fn print_rows(first: &str, rows: &[SummaryRow]) {
    println!("{first:<8} {:>22} {:>22}", "position (cm)", "angular (deg)");
    for r in rows {
        println!(
            "{:<8} {:>12.4} ± {:<7.4} {:>12.4} ± {:<7.4}",
            r.label, r.position.mean, r.position.se, r.angular.mean, r.angular.se
        );
    }
}

fn write_svg(path: &Path, svg: &str) -> Result<()> {
    fs::write(path, svg).map_err(|e| HarnessError::Io {
        path: path.into(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let spec = GenSpec {
                samples: a.n,
                seed: a.seed,
                objects: a.objects,
                max_points_per_sensor: a.max_tactile_points,
            };
            let ds = spec.generate()?;
            ds.save(&a.out)?;
            println!(
                "wrote {} samples of {} objects to {}",
                ds.samples.len(),
                ds.objects.len(),
                a.out.display()
            );
        }
        Command::Train { run, resume } => {
            let cfg = run.resolve(RunConfig::default())?;
            let ds = load_dataset(&cfg.dataset)?;
            let split = split_indices(ds.samples.len(), cfg.split, cfg.seed)?;
            let out = train_on(&cfg, &ds, &split.train, resume.as_deref())?;
            let last = out.losses.last().map_or(f64::NAN, |r| r.1);
            println!("trained {} steps, last loss {last:.6}", out.state.step);
            println!("checkpoint {}", out.checkpoint.display());
        }
        Command::Eval {
            checkpoint,
            run,
            all,
            svg,
        } => {
            let dir = checkpoint.parent().unwrap_or(Path::new("."));
            let mut base = RunConfig::default();
            let saved = dir.join(CONFIG_FILE);
            if saved.exists() {
                base.apply_file(&saved)?;
            }
            base.out_dir = dir.to_path_buf();
            let cfg = run.resolve(base)?;
            let ds = load_dataset(&cfg.dataset)?;
            let (model, fresh) = hgnn::model::Model::new::<f32>(cfg.model_config(), cfg.seed)?;
            let state = load_checkpoint(&checkpoint, fresh)?;
            let indices: Vec<usize> = if all {
                (0..ds.samples.len()).collect()
            } else {
                split_indices(ds.samples.len(), cfg.split, cfg.seed)?.test
            };
            let report = with_threads(cfg.single_thread, || {
                evaluate_model(&cfg, &ds, &indices, &model, &state.params)
            })??;
            fs::create_dir_all(&cfg.out_dir).map_err(|e| HarnessError::Io {
                path: cfg.out_dir.clone(),
                source: e,
            })?;
            write_metrics(&cfg.out_dir.join("metrics.csv"), &report.rows)?;
            write_bins(&cfg.out_dir.join("occlusion_bins.csv"), &report.bins)?;
            print_report(&report);
            if svg {
                let centers =
                    |f: fn(&hgnn_cli::eval::OcclusionBin) -> (f64, f64)| -> Vec<(f64, f64, f64)> {
                        report
                            .bins
                            .iter()
                            .map(|b| {
                                let (m, s) = f(b);
                                (0.5 * (b.lo + b.hi), m, s)
                            })
                            .collect()
                    };
                let pos = Series {
                    name: "position".into(),
                    points: centers(|b| (b.position.mean, b.position.se)),
                };
                let ang = Series {
                    name: "angular".into(),
                    points: centers(|b| (b.angular.mean, b.angular.se)),
                };
                write_svg(
                    &cfg.out_dir.join("occlusion_position.svg"),
                    &line_plot(
                        "Position error vs occlusion",
                        "occlusion (%)",
                        "position error (cm)",
                        &[pos],
                    ),
                )?;
                write_svg(
                    &cfg.out_dir.join("occlusion_angular.svg"),
                    &line_plot(
                        "Angular error vs occlusion",
                        "occlusion (%)",
                        "angular error (deg)",
                        &[ang],
                    ),
                )?;
            }
        }
        Command::Ablate { run, seeds } => {
            let cfg = run.resolve(RunConfig::default())?;
            let ds = load_dataset(&cfg.dataset)?;
            let report = ablate(&cfg, &ds, &seeds)?;
            fs::create_dir_all(&cfg.out_dir).map_err(|e| HarnessError::Io {
                path: cfg.out_dir.clone(),
                source: e,
            })?;
            write_ablation(&cfg.out_dir.join("ablation.csv"), &report.rows)?;
            write_ablation_runs(&cfg.out_dir.join("ablation_runs.csv"), &report.runs)?;
            print_rows("model", &report.rows);
        }
        Command::SweepTactile {
            run,
            n,
            gen_seed,
            objects,
            caps,
            svg,
        } => {
            let cfg = run.resolve(RunConfig::default())?;
            let spec = GenSpec {
                samples: n,
                seed: gen_seed,
                objects,
                ..GenSpec::default()
            };
            let rows = sweep_tactile(&cfg, &spec, &caps)?;
            fs::create_dir_all(&cfg.out_dir).map_err(|e| HarnessError::Io {
                path: cfg.out_dir.clone(),
                source: e,
            })?;
            write_sweep(&cfg.out_dir.join("sweep.csv"), &rows)?;
            let plain: Vec<SummaryRow> = rows.iter().map(|r| r.1.clone()).collect();
            print_rows("cap", &plain);
            if svg {
                let pos = Series {
                    name: "position".into(),
                    points: rows
                        .iter()
                        .map(|(c, r)| (*c as f64, r.position.mean, r.position.se))
                        .collect(),
                };
                write_svg(
                    &cfg.out_dir.join("sweep.svg"),
                    &line_plot(
                        "Position error vs tactile points",
                        "max points per sensor",
                        "position error (cm)",
                        &[pos],
                    ),
                )?;
            }
        }
        Command::Dump {
            path,
            index,
            graph,
            config,
        } => {
            let ds = load_dataset(&path)?;
            if graph {
                let mut cfg = RunConfig::default();
                if let Some(c) = config {
                    cfg.apply_file(&c)?;
                }
                let s = ds.samples.get(index).ok_or_else(|| {
                    HarnessError::Config(format!(
                        "index {index} out of range for {} samples",
                        ds.samples.len()
                    ))
                })?;
                let s = cap_tactile(s, cfg.max_tactile_points);
                let obs = Observation::new(
                    &s,
                    &ds.camera,
                    ds.object(&s).diameter,
                    &cfg.model_config().graph,
                )?;
                print!("{}", obs.graph.to_text());
            } else {
                print!("{}", ds.dump_sample(index)?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
