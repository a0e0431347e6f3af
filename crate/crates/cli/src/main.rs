//! Command-line front end: dataset generation, training, evaluation and
//! the comparison, grounding and recurrence-depth experiments.

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use multinet::harness::{
    cmd_compare, cmd_eval, cmd_generate, cmd_ground_experiment, cmd_recurrence_sweep, headline,
    load_checkpoint, parse_scene_spec, save_checkpoint, write_loss_curve, write_sweep_csv,
    GroundSource, Prepared, RunConfig, Trainer, METRIC_NAMES,
};
use multinet::multinet::Mode;
use multinet::synthdata::read_dataset;
use multinet::tasks::{write_metrics_csv, MetricRow};
use multinet::{Error, Result};

#[derive(Parser)]
#[command(
    name = "multinet",
    version,
    about = "Recurrent multi-task network on synthetic scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a scene spec (TOML)
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        count: usize,
        /// Overrides the spec seed
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one network; writes model.mnck, loss_curve.csv and metrics.csv
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Resume from this checkpoint; its stored config wins over flags
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint; writes a metrics CSV
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Recursion depth (default: the trained depth)
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train all four modes on every seed and tabulate
    Compare {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        val_dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Ground the class label with the truth and compare
    Ground {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics of a trained network read out at t = 0..=T
    Sweep {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 4)]
        iterations: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run config (TOML); defaults apply without one
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training dataset (overrides `train_dataset`)
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    iterations: Option<usize>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.train_dataset = Some(d.clone());
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(t) = self.iterations {
            cfg.iterations = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_data(path: Option<&Path>, what: &str, n_regions: usize) -> Result<Prepared> {
    let path = path.ok_or_else(|| Error::Config(format!("no {what} dataset given")))?;
    let (spec, scenes) = read_dataset(path)?;
    Prepared::new(&spec, &scenes, n_regions)
}

fn write_rows(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_metrics_csv(File::create(path)?, rows)
}

fn summary(label: &str, m: &multinet::tasks::Metrics) -> String {
    let parts: Vec<String> = METRIC_NAMES
        .iter()
        .zip(headline(m))
        .filter_map(|(n, v)| v.map(|v| format!("{n} {v:.4}")))
        .collect();
    format!("{label}: {}", parts.join(", "))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            config,
            count,
            seed,
            out,
        } => {
            let text = match config {
                Some(p) => fs::read_to_string(p)?,
                None => String::new(),
            };
            let mut spec = parse_scene_spec(&text)?;
            if let Some(s) = seed {
                spec.seed = s;
            }
            cmd_generate(&spec, count, &out)?;
            eprintln!(
                "wrote {count} scenes (seed {}) to {}",
                spec.seed,
                out.display()
            );
        }
        Command::Train {
            run,
            checkpoint,
            out,
        } => {
            let cfg = run.resolve()?;
            let data = load_data(cfg.train_dataset.as_deref(), "training", cfg.n_regions)?;
            let mut tr = match checkpoint {
                Some(p) => load_checkpoint(p)?,
                None => Trainer::new(cfg.clone(), cfg.seeds[0], data.task_config(&cfg))?,
            };
            fs::create_dir_all(&out)?;
            tr.run(&data, None, |tr| {
                let log = tr.history.last().unwrap();
                eprintln!(
                    "epoch {:>3}  lr {:.0e}  loss {:.5}",
                    log.epoch + 1,
                    log.lr,
                    log.mean_loss
                );
                save_checkpoint(out.join("model.mnck"), tr)
            })?;
            save_checkpoint(out.join("model.mnck"), &tr)?;
            write_loss_curve(File::create(out.join("loss_curve.csv"))?, &tr.history)?;
            let rows = cmd_eval(&tr, &data, "train")?;
            write_rows(&out.join("metrics.csv"), &rows)?;
        }
        Command::Eval {
            checkpoint,
            dataset,
            iterations,
            out,
        } => {
            let mut tr = load_checkpoint(checkpoint)?;
            if let Some(t) = iterations {
                tr.cfg.iterations = t;
            }
            let data = load_data(Some(&dataset), "evaluation", tr.cfg.n_regions)?;
            write_rows(&out, &cmd_eval(&tr, &data, "eval")?)?;
        }
        Command::Compare {
            run,
            val_dataset,
            out,
        } => {
            let mut cfg = run.resolve()?;
            if let Some(v) = val_dataset {
                cfg.val_dataset = Some(v);
            }
            let train = load_data(cfg.train_dataset.as_deref(), "training", cfg.n_regions)?;
            let val = load_data(cfg.val_dataset.as_deref(), "validation", cfg.n_regions)?;
            let (cmp, _) = cmd_compare(&cfg, &train, &val, &Mode::ALL, |mode, seed, m| {
                eprintln!("{}", summary(&format!("{mode} seed {seed}"), m));
            })?;
            fs::create_dir_all(&out)?;
            cmp.write_csv(File::create(out.join("comparison.csv"))?)?;
            fs::write(out.join("comparison.md"), cmp.to_markdown())?;
            write_rows(&out.join("metrics.csv"), &cmp.metrics)?;
            io::stdout().write_all(cmp.to_markdown().as_bytes())?;
        }
        Command::Ground {
            checkpoint,
            dataset,
            out,
        } => {
            let tr = load_checkpoint(checkpoint)?;
            let data = load_data(Some(&dataset), "evaluation", tr.cfg.n_regions)?;
            let t = tr.net.task_config().effective_iterations(tr.cfg.iterations);
            let r = cmd_ground_experiment(&tr.net, t, &data, GroundSource::Truth)?;
            let mut w = csv_out(&out)?;
            writeln!(w, "metric,ungrounded,grounded,delta")?;
            let (a, b) = (headline(&r.ungrounded), headline(&r.grounded));
            for (i, d) in r.deltas().iter().enumerate() {
                if let (Some(a), Some(b), Some(d)) = (a[i], b[i], d) {
                    writeln!(w, "{},{a},{b},{d}", METRIC_NAMES[i])?;
                }
            }
            eprintln!("{}", summary("ungrounded", &r.ungrounded));
            eprintln!("{}", summary("grounded", &r.grounded));
        }
        Command::Sweep {
            checkpoint,
            dataset,
            iterations,
            out,
        } => {
            let tr = load_checkpoint(checkpoint)?;
            let data = load_data(Some(&dataset), "evaluation", tr.cfg.n_regions)?;
            let curve = cmd_recurrence_sweep(&tr.net, &data, iterations)?;
            write_sweep_csv(csv_out(&out)?, &curve)?;
        }
    }
    Ok(())
}

fn csv_out(path: &Path) -> Result<File> {
    Ok(File::create(path)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
