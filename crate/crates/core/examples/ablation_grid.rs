//! Runs the pretraining grid over two seeds on a small configuration,
//! writes the results CSV and the plot data.

use std::path::PathBuf;

use vqa_lab::experiment::{cmd_ablate, cmd_plot_data, mean_score, AblateOptions, Preset};

fn main() -> vqa_lab::Result<()> {
    let dir = std::env::temp_dir().join("vqa-lab-ablation-example");
    std::fs::create_dir_all(&dir)?;
    let config = dir.join("grid.cfg");
    std::fs::write(&config, "n_records = 600\nsteps = 150\npretrain_steps = 100\n")?;

    let report = cmd_ablate(&AblateOptions {
        config: Some(config),
        preset: Some(Preset::Table2),
        seeds: Some(vec![0, 1]),
        out: Some(dir.join("results.csv")),
        jobs: None,
        metric: None,
    })?;
    let rows = report.rows();
    let mut labels: Vec<String> = rows.iter().map(|r| r.label()).collect();
    labels.dedup();
    for label in labels {
        let all = mean_score(&rows, "all", |r| r.label() == label).unwrap_or(f64::NAN);
        println!("{label:<36} mean All {all:.2}");
    }
    let plots: Vec<PathBuf> = cmd_plot_data(&report.results, &dir.join("plots"))?;
    println!("{} runs, {} plot files in {}", report.runs.len(), plots.len(), dir.display());
    Ok(())
}
