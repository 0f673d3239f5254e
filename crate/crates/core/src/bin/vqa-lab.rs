use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vqa_lab::data::MetricMode;
use vqa_lab::experiment::{
    cmd_ablate, cmd_eval, cmd_gen_data, cmd_gradcheck, cmd_plot_data, cmd_train, parse_seeds, AblateOptions,
    Preset,
};
use vqa_lab::Result;

/// Synthetic VQA experiments: data, training, ablation grids, gradient checks.
#[derive(Parser)]
#[command(name = "vqa-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a JSONL dataset from a run config.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one configuration; writes checkpoint, loss CSVs and eval.csv.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "run")]
        out: PathBuf,
        #[arg(long)]
        metric: Option<MetricMode>,
    },
    /// Score a checkpoint on the validation split.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint file, or a run directory holding checkpoint.bin.
        #[arg(long, default_value = "run")]
        checkpoint: PathBuf,
        /// Also write the scores as CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        metric: Option<MetricMode>,
    },
    /// Run an ablation grid and write the results CSV.
    Ablate {
        /// Base config; may hold `seeds`, `out`, `preset` and `grid.<key>` axes.
        #[arg(long)]
        config: Option<PathBuf>,
        /// table1 or table2; replaces any preset named in the config.
        #[arg(long)]
        preset: Option<Preset>,
        /// `0,1,2` or `0..4`.
        #[arg(long)]
        seeds: Option<String>,
        /// Worker threads; defaults to the available cores.
        #[arg(long)]
        jobs: Option<usize>,
        /// Results CSV; loss logs go to a sibling `<stem>.losses` directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        metric: Option<MetricMode>,
    },
    /// Turn a results CSV into gnuplot data files.
    PlotData {
        results: PathBuf,
        #[arg(long, default_value = "plots")]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable op and model.
    Gradcheck {
        #[arg(long)]
        seeds: Option<String>,
    },
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData { config, out } => {
            let summary = cmd_gen_data(&config, &out)?;
            println!("{summary}");
        }
        Command::Train { config, out, metric } => {
            let outcome = cmd_train(&config, &out, metric)?;
            println!("{}", outcome.breakdown);
            println!("artifacts in {}", out.display());
        }
        Command::Eval {
            config,
            checkpoint,
            out,
            metric,
        } => {
            let file = if checkpoint.is_dir() {
                checkpoint.join("checkpoint.bin")
            } else {
                checkpoint
            };
            let breakdown = cmd_eval(&config, &file, metric)?;
            println!("{breakdown}");
            if let Some(out) = out {
                breakdown.write_csv(std::fs::File::create(out)?)?;
            }
        }
        Command::Ablate {
            config,
            preset,
            seeds,
            jobs,
            out,
            metric,
        } => {
            let opts = AblateOptions {
                config,
                preset,
                seeds: seeds.as_deref().map(parse_seeds).transpose()?,
                out,
                jobs,
                metric,
            };
            let report = cmd_ablate(&opts)?;
            for run in &report.runs {
                let r = &run.row;
                println!(
                    "{:<40} seed {:<4} all {:>8} {}",
                    r.label(),
                    r.seed,
                    r.scores[0],
                    r.status
                );
            }
            println!("results in {}, loss logs in {}", report.results.display(), report.loss_dir.display());
            if report.failures() > 0 {
                eprintln!("{} of {} runs failed", report.failures(), report.runs.len());
            }
        }
        Command::PlotData { results, out } => {
            for f in cmd_plot_data(&results, &out)? {
                println!("{}", f.display());
            }
        }
        Command::Gradcheck { seeds } => {
            let seeds = seeds.as_deref().map(parse_seeds).transpose()?;
            let cases = cmd_gradcheck(seeds.as_deref())?;
            let mut failed = 0;
            for c in &cases {
                let ok = c.passes();
                failed += usize::from(!ok);
                if !ok {
                    println!("FAIL {} seed {}: {}", c.name, c.seed, c.report);
                }
            }
            println!("{} of {} gradient checks passed", cases.len() - failed, cases.len());
            if failed > 0 {
                return Ok(ExitCode::from(3));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
