use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use super::config::{at_line, env_seed, key_values, Method, RunConfig};
use super::run::{execute, prepare_records};
use crate::data::{EvalBreakdown, VqaRecord};
use crate::error::{Error, Result};
use crate::models::{Combiner, GeneratorArch, NoiseMode};
use crate::nn::InitScheme;
use crate::training::LossLog;

/// Results CSV header, in order. `wall_ms` is the only column that may
/// differ between two runs of the same grid.
pub const RESULT_COLUMNS: [&str; 15] = [
    "method", "arch", "noise", "init", "pretrain_G", "pretrain_D", "combiner", "all", "yes_no",
    "number", "other", "seed", "steps", "wall_ms", "status",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Eight method rows: generator baselines, GANs, autoencoder, attention.
    Table1,
    /// GAN_full-N2-I1 under the four pretraining combinations.
    Table2,
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "table1" => Ok(Preset::Table1),
            "table2" => Ok(Preset::Table2),
            other => Err(format!("unknown preset `{other}` (table1, table2)")),
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Preset::Table1 => "table1",
            Preset::Table2 => "table2",
        })
    }
}

/// A list of run configurations, each run once per seed.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub rows: Vec<RunConfig>,
    pub seeds: Vec<u64>,
    pub out: Option<PathBuf>,
}

fn gen_row(base: &RunConfig, method: Method, arch: GeneratorArch, noise: NoiseMode) -> RunConfig {
    let mut c = base.clone();
    c.method = method;
    c.arch = arch;
    c.noise_mode = noise;
    c.init = InitScheme::I1;
    c
}

impl Preset {
    /// Rows of the preset over `base`.
    ///
    /// In `table1` the generator baselines train for the GAN rows'
    /// pretraining budget, so each GAN row is its baseline plus the
    /// adversarial phase.
    pub fn rows(self, base: &RunConfig) -> Vec<RunConfig> {
        use GeneratorArch::{Full, Simp};
        use NoiseMode::{N0, N1, N2};
        match self {
            Preset::Table1 => {
                let mut baseline = base.clone();
                baseline.steps = base.pretrain.pretrain_steps;
                let mut rows = vec![
                    gen_row(&baseline, Method::GClassifier, Simp, N0),
                    gen_row(&baseline, Method::GClassifier, Full, N1),
                    gen_row(&baseline, Method::GClassifier, Full, N2),
                ];
                for (arch, noise) in [(Simp, N0), (Full, N2)] {
                    let mut c = gen_row(base, Method::Gan, arch, noise);
                    c.pretrain.pretrain_g = true;
                    c.pretrain.pretrain_d = false;
                    rows.push(c);
                }
                let mut ae = base.clone();
                ae.method = Method::Autoencoder;
                rows.push(ae);
                for combiner in [Combiner::Addition, Combiner::Mcb] {
                    let mut c = base.clone();
                    c.method = Method::Attention;
                    c.combiner = combiner;
                    rows.push(c);
                }
                rows
            }
            Preset::Table2 => [(false, false), (true, false), (false, true), (true, true)]
                .into_iter()
                .map(|(g, d)| {
                    let mut c = gen_row(base, Method::Gan, Full, N2);
                    c.pretrain.pretrain_g = g;
                    c.pretrain.pretrain_d = d;
                    c
                })
                .collect(),
        }
    }
}

impl AblationSpec {
    pub fn from_preset(preset: Preset, base: &RunConfig, seeds: Vec<u64>) -> Self {
        Self {
            rows: preset.rows(base),
            seeds,
            out: None,
        }
    }

    /// Parses an ablation file: run-config keys set the base, plus
    ///
    /// - `preset = table1|table2` expands the base into the preset rows,
    /// - `seeds = 0,1,2`,
    /// - `out = results.csv`,
    /// - `grid.<key> = a | b | c` crosses every row with these values.
    pub fn parse_text(text: &str, path: &Path) -> Result<Self> {
        let mut base = RunConfig::default();
        let mut preset = None;
        let mut seeds = None;
        let mut out = None;
        let mut axes: Vec<(String, Vec<String>, usize)> = Vec::new();
        for (key, value, line) in key_values(text, path)? {
            let res = match key.as_str() {
                "preset" => value
                    .parse::<Preset>()
                    .map(|p| preset = Some(p))
                    .map_err(|e| Error::config("preset", e)),
                "seeds" => parse_seeds(&value).map(|s| seeds = Some(s)),
                "out" => {
                    out = Some(PathBuf::from(&value));
                    Ok(())
                }
                k if k.starts_with("grid.") => {
                    let field = k["grid.".len()..].to_string();
                    let values: Vec<String> = value.split('|').map(|v| v.trim().to_string()).collect();
                    if values.iter().any(String::is_empty) {
                        Err(Error::config(k, "empty grid value"))
                    } else {
                        axes.push((field, values, line));
                        Ok(())
                    }
                }
                _ => base.set(&key, &value),
            };
            res.map_err(|e| at_line(e, path, line))?;
        }
        let mut rows = match preset {
            Some(p) => p.rows(&base),
            None => vec![base.clone()],
        };
        for (field, values, line) in axes {
            let mut next = Vec::with_capacity(rows.len() * values.len());
            for row in &rows {
                for v in &values {
                    let mut c = row.clone();
                    c.set(&field, v).map_err(|e| at_line(e, path, line))?;
                    next.push(c);
                }
            }
            rows = next;
        }
        Ok(Self {
            rows,
            seeds: seeds.unwrap_or_else(|| vec![base.seed]),
            out,
        })
    }

    /// Reads and parses an ablation file. `VFL_SEED` replaces the base seed,
    /// which is the seed list when the file gives none.
    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_preset(path, None)
    }

    /// [`AblationSpec::load`], with `preset` replacing any preset in the file.
    pub fn load_with_preset(path: &Path, preset: Option<Preset>) -> Result<Self> {
        let mut text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        if let Some(p) = preset {
            text.push_str(&format!("\npreset = {p}\n"));
        }
        let mut spec = Self::parse_text(&text, path)?;
        let has_seeds = key_values(&text, path)?.iter().any(|(k, _, _)| k == "seeds");
        if let (Some(seed), false) = (env_seed()?, has_seeds) {
            spec.seeds = vec![seed];
        }
        Ok(spec)
    }

    /// Checks the grid shape and every row configuration.
    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::config("grid", "no rows"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "no seeds"));
        }
        for (i, row) in self.rows.iter().enumerate() {
            row.validate().map_err(|e| match e {
                Error::Config { field, msg } => Error::Config {
                    field,
                    msg: format!("{msg} (grid row {i}, {})", row.label()),
                },
                other => other,
            })?;
        }
        Ok(())
    }

    /// `(row, seed)` jobs in output order: rows outer, seeds inner.
    pub fn jobs(&self) -> Vec<RunConfig> {
        self.rows
            .iter()
            .flat_map(|row| {
                self.seeds.iter().map(move |&seed| RunConfig { seed, ..row.clone() })
            })
            .collect()
    }
}

/// `0,1,2` or an inclusive range `0..4`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let t = text.trim();
    let bad = |e: String| Error::config("seeds", e);
    if let Some((a, b)) = t.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| bad(format!("`{t}`: {e}")))?;
        let b: u64 = b.trim().parse().map_err(|e| bad(format!("`{t}`: {e}")))?;
        if b < a {
            return Err(bad(format!("empty range `{t}`")));
        }
        return Ok((a..=b).collect());
    }
    let seeds: Vec<u64> = t
        .split(',')
        .map(|s| s.trim().parse().map_err(|e| bad(format!("`{s}`: {e}"))))
        .collect::<Result<_>>()?;
    if seeds.is_empty() {
        return Err(bad("no seeds".into()));
    }
    Ok(seeds)
}

/// One line of the results CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: String,
    pub arch: String,
    pub noise: String,
    pub init: String,
    pub pretrain_g: String,
    pub pretrain_d: String,
    pub combiner: String,
    /// Score cells as written; empty when the run failed.
    pub scores: [String; 4],
    pub seed: u64,
    pub steps: usize,
    pub wall_ms: u64,
    /// `ok`, or `error: <message>`.
    pub status: String,
}

impl ResultRow {
    /// Identity columns for `cfg`; axes that do not apply read `-`.
    pub fn describe(cfg: &RunConfig) -> Self {
        let dash = || "-".to_string();
        let generator = matches!(cfg.method, Method::GClassifier | Method::Gan);
        let gan = cfg.method == Method::Gan;
        Self {
            method: cfg.method.to_string(),
            arch: if generator { cfg.arch.to_string() } else { dash() },
            noise: if generator { cfg.noise_mode.to_string() } else { dash() },
            init: cfg.init.to_string(),
            pretrain_g: if gan { cfg.pretrain.pretrain_g.to_string() } else { dash() },
            pretrain_d: if gan { cfg.pretrain.pretrain_d.to_string() } else { dash() },
            combiner: if cfg.method == Method::Attention { cfg.combiner.to_string() } else { dash() },
            scores: Default::default(),
            seed: cfg.seed,
            steps: cfg.steps,
            wall_ms: 0,
            status: "ok".into(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    /// Score in column `all`, `yes_no`, `number` or `other`.
    pub fn score(&self, column: &str) -> Option<f64> {
        let i = ["all", "yes_no", "number", "other"].iter().position(|c| *c == column)?;
        self.scores[i].parse().ok()
    }

    /// Short row name, e.g. `GAN_full-N2-I1` or `attention+mcb`, with the
    /// pretraining flags appended for GAN rows.
    pub fn label(&self) -> String {
        match self.method.as_str() {
            "g_classifier" => format!("G_{}-{}-{}", self.arch, self.noise, self.init),
            "gan" => format!(
                "GAN_{}-{}-{}[G={},D={}]",
                self.arch, self.noise, self.init, self.pretrain_g, self.pretrain_d
            ),
            "attention" if self.combiner == "mcb" => "attention+mcb".into(),
            other => other.to_string(),
        }
    }

    fn fields(&self) -> Vec<String> {
        let mut v = vec![
            self.method.clone(),
            self.arch.clone(),
            self.noise.clone(),
            self.init.clone(),
            self.pretrain_g.clone(),
            self.pretrain_d.clone(),
            self.combiner.clone(),
        ];
        v.extend(self.scores.iter().cloned());
        v.extend([
            self.seed.to_string(),
            self.steps.to_string(),
            self.wall_ms.to_string(),
            self.status.clone(),
        ]);
        v
    }
}

fn score_cells(b: &EvalBreakdown) -> [String; 4] {
    [b.all, b.yes_no, b.number, b.other].map(|v| format!("{v:.4}"))
}

/// One finished grid cell.
#[derive(Debug, Clone)]
pub struct GridRun {
    pub row: ResultRow,
    /// Main training log, absent when the run failed.
    pub log: Option<LossLog>,
}

/// Runs every `(row, seed)` job on a pool of `jobs` threads and returns the
/// rows in grid order. A failing run becomes a row with an error status;
/// the grid carries on.
pub fn run_ablation(spec: &AblationSpec, jobs: usize) -> Result<Vec<GridRun>> {
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::config("jobs", e.to_string()))?;
    let configs = spec.jobs();
    pool.install(|| {
        let datasets = shared_datasets(&configs);
        Ok(configs
            .par_iter()
            .map(|cfg| {
                let key = data_key(cfg);
                run_one(cfg, &datasets[&key])
            })
            .collect())
    })
}

fn data_key(cfg: &RunConfig) -> String {
    match &cfg.dataset {
        Some(p) => format!("file:{}", p.display()),
        None => format!("{:?}", cfg.dataset_config()),
    }
}

type Shared = Result<Arc<Vec<VqaRecord>>, String>;

/// Each distinct dataset is built once and shared by the runs using it.
fn shared_datasets(configs: &[RunConfig]) -> HashMap<String, Shared> {
    let mut firsts: Vec<(String, &RunConfig)> = Vec::new();
    for c in configs {
        let k = data_key(c);
        if !firsts.iter().any(|(f, _)| *f == k) {
            firsts.push((k, c));
        }
    }
    firsts
        .into_par_iter()
        .map(|(k, c)| (k, prepare_records(c).map(Arc::new).map_err(|e| e.to_string())))
        .collect()
}

fn run_one(cfg: &RunConfig, data: &Shared) -> GridRun {
    let mut row = ResultRow::describe(cfg);
    let start = Instant::now();
    let result = match data {
        Ok(records) => execute(cfg, records),
        Err(msg) => Err(Error::InvalidArgument(format!("dataset: {msg}"))),
    };
    row.wall_ms = start.elapsed().as_millis() as u64;
    match result {
        Ok(out) => {
            row.scores = score_cells(&out.breakdown);
            GridRun {
                log: Some(out.loss_log().clone()),
                row,
            }
        }
        Err(e) => {
            row.status = format!("error: {e}");
            GridRun { row, log: None }
        }
    }
}

/// Writes the results CSV.
pub fn write_results<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a results CSV, insisting on the documented header.
pub fn read_results<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let missing: Vec<&str> = RESULT_COLUMNS
        .iter()
        .copied()
        .filter(|c| !header.iter().any(|h| h == *c))
        .collect();
    if !missing.is_empty() {
        return Err(Error::config("results", format!("missing columns: {}", missing.join(", "))));
    }
    let col = |name: &str| header.iter().position(|h| h == name).expect("checked");
    let idx: Vec<usize> = RESULT_COLUMNS.iter().map(|c| col(c)).collect();
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let cell = |i: usize| rec.get(idx[i]).unwrap_or("").to_string();
        let num = |i: usize| -> Result<u64> {
            cell(i).parse().map_err(|_| {
                Error::config("results", format!("row {}: bad {} `{}`", line + 1, RESULT_COLUMNS[i], cell(i)))
            })
        };
        rows.push(ResultRow {
            method: cell(0),
            arch: cell(1),
            noise: cell(2),
            init: cell(3),
            pretrain_g: cell(4),
            pretrain_d: cell(5),
            combiner: cell(6),
            scores: [cell(7), cell(8), cell(9), cell(10)],
            seed: num(11)?,
            steps: num(12)? as usize,
            wall_ms: num(13)?,
            status: cell(14),
        });
    }
    Ok(rows)
}

/// Mean of `column` over the successful rows matching `pick`.
pub fn mean_score<F: Fn(&ResultRow) -> bool>(rows: &[ResultRow], column: &str, pick: F) -> Option<f64> {
    let v: Vec<f64> = rows.iter().filter(|r| r.is_ok() && pick(r)).filter_map(|r| r.score(column)).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}
