//! The command-line subcommands as library calls. The binary only parses
//! flags, prints and maps errors to exit codes.

use std::path::{Path, PathBuf};

use super::ablation::{run_ablation, write_results, AblationSpec, GridRun, Preset, ResultRow};
use super::config::{env_seed, RunConfig};
use super::gradsuite::{gradient_suite, SuiteCase};
use super::plot::{loss_dir_for, loss_file_name, write_plot_data};
use super::run::{evaluate, execute, prepare_records, save_outcome, RunOutcome, TrainedModel};
use crate::data::{
    generate_dataset, save_dataset, train_validation_split, EvalBreakdown, MetricMode, QuestionType,
};
use crate::error::{Error, Result};
use crate::models::Checkpoint;

/// Record count and per-type counts of a generated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSummary {
    pub total: usize,
    /// In `yes_no, number, other` order.
    pub counts: [usize; 3],
}

impl std::fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} records", self.total)?;
        for t in QuestionType::ALL {
            write!(f, " | {t} {}", self.counts[t.index()])?;
        }
        Ok(())
    }
}

fn load_run_config(path: &Path, metric: Option<MetricMode>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(m) = metric {
        cfg.metric = m;
    }
    Ok(cfg)
}

/// Generates the dataset described by the config and writes it as JSONL.
pub fn cmd_gen_data(config: &Path, out: &Path) -> Result<DatasetSummary> {
    let cfg = RunConfig::load(config)?;
    let records = generate_dataset(&cfg.dataset_config())?;
    save_dataset(&records, out)?;
    let mut counts = [0; 3];
    for r in &records {
        counts[r.question_type.index()] += 1;
    }
    Ok(DatasetSummary {
        total: records.len(),
        counts,
    })
}

/// Trains one configuration and writes its artifacts into `out`.
pub fn cmd_train(config: &Path, out: &Path, metric: Option<MetricMode>) -> Result<RunOutcome> {
    let cfg = load_run_config(config, metric)?;
    let records = prepare_records(&cfg)?;
    let outcome = execute(&cfg, &records)?;
    save_outcome(&cfg, &outcome, out)?;
    Ok(outcome)
}

/// Scores a saved checkpoint on the validation split of the config's data.
pub fn cmd_eval(config: &Path, checkpoint: &Path, metric: Option<MetricMode>) -> Result<EvalBreakdown> {
    let cfg = load_run_config(config, metric)?;
    cfg.validate()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = TrainedModel::restore(&cfg, &ckpt)?;
    let records = prepare_records(&cfg)?;
    let (_, val) = train_validation_split(&records, cfg.validation_fraction);
    if val.is_empty() {
        return Err(Error::config("validation_fraction", "empty validation split"));
    }
    evaluate(&cfg, &model, val)
}

/// Flags of the `ablate` subcommand.
#[derive(Debug, Clone, Default)]
pub struct AblateOptions {
    /// Ablation file. Without one the preset runs over default settings.
    pub config: Option<PathBuf>,
    pub preset: Option<Preset>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    /// Worker threads; all hardware threads when absent.
    pub jobs: Option<usize>,
    pub metric: Option<MetricMode>,
}

/// Finished grid plus where its files went.
#[derive(Debug, Clone)]
pub struct AblationReport {
    pub results: PathBuf,
    pub loss_dir: PathBuf,
    pub runs: Vec<GridRun>,
}

impl AblationReport {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.runs.iter().map(|r| r.row.clone()).collect()
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| !r.row.is_ok()).count()
    }
}

/// Resolves the grid from the flags.
pub fn ablation_spec(opts: &AblateOptions) -> Result<AblationSpec> {
    let mut spec = match (&opts.config, opts.preset) {
        (Some(path), preset) => AblationSpec::load_with_preset(path, preset)?,
        (None, Some(preset)) => {
            let mut base = RunConfig::default();
            base.apply_env_seed()?;
            AblationSpec::from_preset(preset, &base, vec![base.seed])
        }
        (None, None) => return Err(Error::config("config", "ablate needs --config or --preset")),
    };
    if let Some(seeds) = &opts.seeds {
        spec.seeds = seeds.clone();
    }
    if let Some(m) = opts.metric {
        for row in &mut spec.rows {
            row.metric = m;
        }
    }
    if let Some(out) = &opts.out {
        spec.out = Some(out.clone());
    }
    Ok(spec)
}

/// Runs the grid, writes the results CSV and one loss CSV per finished run.
pub fn cmd_ablate(opts: &AblateOptions) -> Result<AblationReport> {
    let spec = ablation_spec(opts)?;
    let jobs = match opts.jobs {
        Some(0) => return Err(Error::config("jobs", "must be at least 1")),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let results = spec.out.clone().unwrap_or_else(|| PathBuf::from("results.csv"));
    let runs = run_ablation(&spec, jobs)?;
    if let Some(dir) = results.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let rows: Vec<ResultRow> = runs.iter().map(|r| r.row.clone()).collect();
    write_results(&rows, std::fs::File::create(&results)?)?;
    let loss_dir = loss_dir_for(&results);
    std::fs::create_dir_all(&loss_dir)?;
    for (i, run) in runs.iter().enumerate() {
        if let Some(log) = &run.log {
            log.save(&loss_dir.join(loss_file_name(&run.row, i)))?;
        }
    }
    Ok(AblationReport {
        results,
        loss_dir,
        runs,
    })
}

/// Writes bar-chart and loss-curve data for a results CSV.
pub fn cmd_plot_data(results: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    write_plot_data(results, out)
}

/// Runs the gradient suite. Without explicit seeds it uses `VFL_SEED` or 0.
pub fn cmd_gradcheck(seeds: Option<&[u64]>) -> Result<Vec<SuiteCase>> {
    let seeds = match seeds {
        Some(s) => s.to_vec(),
        None => vec![env_seed()?.unwrap_or(0)],
    };
    if seeds.is_empty() {
        return Err(Error::config("seeds", "no seeds"));
    }
    gradient_suite(&seeds)
}
