use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::ablation::{read_results, ResultRow};
use crate::error::{Error, Result};

/// Score categories, one data file each.
pub const CATEGORIES: [&str; 4] = ["all", "yes_no", "number", "other"];

/// Loss logs of an ablation sit in this directory next to the results file.
pub fn loss_dir_for(results: &Path) -> PathBuf {
    let stem = results.file_stem().map_or_else(|| "results".into(), |s| s.to_string_lossy().into_owned());
    results.with_file_name(format!("{stem}.losses"))
}

/// File name of one run's loss log inside [`loss_dir_for`].
pub fn loss_file_name(row: &ResultRow, index: usize) -> String {
    let label: String = row
        .label()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("{index:03}_{label}_s{}.csv", row.seed)
}

/// Bar-chart text for one category: `index "label" seed value` per
/// successful row, values copied verbatim from the CSV.
pub fn category_data(rows: &[ResultRow], category: &str) -> Result<String> {
    let col = CATEGORIES
        .iter()
        .position(|c| *c == category)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown category `{category}`")))?;
    let mut s = format!("# {category}: index label seed score\n");
    for (i, r) in rows.iter().enumerate().filter(|(_, r)| r.is_ok()) {
        let _ = writeln!(s, "{i} \"{}\" {} {}", r.label(), r.seed, r.scores[col]);
    }
    Ok(s)
}

/// Turns a loss CSV into whitespace-separated columns with a `#` header.
pub fn loss_curve_data(csv_text: &str) -> Result<String> {
    let mut r = csv::Reader::from_reader(csv_text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let mut s = format!("# {}\n", header.join(" "));
    for rec in r.records() {
        let rec = rec?;
        let _ = writeln!(s, "{}", rec.iter().collect::<Vec<_>>().join(" "));
    }
    Ok(s)
}

/// Reads a results CSV and writes `all.dat`, `yes_no.dat`, `number.dat`,
/// `other.dat` and, when the ablation's loss directory exists, one
/// `loss_<run>.dat` per loss log. Returns the files written.
pub fn write_plot_data(results: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let file = std::fs::File::open(results)
        .map_err(|e| Error::config("results", format!("cannot open {}: {e}", results.display())))?;
    let rows = read_results(file)?;
    if rows.is_empty() {
        return Err(Error::config("results", format!("{} has no rows", results.display())));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for cat in CATEGORIES {
        let path = out_dir.join(format!("{cat}.dat"));
        std::fs::write(&path, category_data(&rows, cat)?)?;
        written.push(path);
    }
    let loss_dir = loss_dir_for(results);
    if loss_dir.is_dir() {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&loss_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        entries.sort();
        for p in entries {
            let stem = p.file_stem().expect("csv file").to_string_lossy().into_owned();
            let path = out_dir.join(format!("loss_{stem}.dat"));
            std::fs::write(&path, loss_curve_data(&std::fs::read_to_string(&p)?)?)?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::ablation::{write_results, RESULT_COLUMNS};

    fn row(i: usize) -> ResultRow {
        ResultRow {
            method: "gan".into(),
            arch: "full".into(),
            noise: "N2".into(),
            init: "I1".into(),
            pretrain_g: (i % 2 == 0).to_string(),
            pretrain_d: "false".into(),
            combiner: "-".into(),
            scores: [format!("{i}.1250"), "1.0000".into(), "2.5000".into(), format!("0.{i}")],
            seed: i as u64,
            steps: 10,
            wall_ms: 7,
            status: "ok".into(),
        }
    }

    #[test]
    fn twelve_rows_give_four_files_with_cells_verbatim() {
        let dir = tempfile::tempdir().unwrap();
        let results = dir.path().join("r.csv");
        let rows: Vec<ResultRow> = (0..12).map(row).collect();
        write_results(&rows, std::fs::File::create(&results).unwrap()).unwrap();
        let files = write_plot_data(&results, &dir.path().join("plots")).unwrap();
        assert_eq!(files.len(), 4);
        let all = std::fs::read_to_string(&files[0]).unwrap();
        assert_eq!(all.lines().count(), 13);
        assert!(all.lines().nth(8).unwrap().ends_with(" 7 7.1250"));
        let other = std::fs::read_to_string(&files[3]).unwrap();
        assert!(other.lines().nth(4).unwrap().ends_with(" 0.3"));
    }

    #[test]
    fn empty_or_malformed_input_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("e.csv");
        std::fs::write(&empty, format!("{}\n", RESULT_COLUMNS.join(","))).unwrap();
        assert_eq!(write_plot_data(&empty, dir.path()).unwrap_err().exit_code(), 2);
        std::fs::write(&empty, "").unwrap();
        assert_eq!(write_plot_data(&empty, dir.path()).unwrap_err().exit_code(), 2);
        let missing = dir.path().join("m.csv");
        std::fs::write(&missing, "method,all\ngan,3\n").unwrap();
        assert_eq!(write_plot_data(&missing, dir.path()).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn failed_rows_are_skipped_and_loss_logs_converted() {
        let dir = tempfile::tempdir().unwrap();
        let results = dir.path().join("r.csv");
        let mut rows: Vec<ResultRow> = (0..2).map(row).collect();
        rows[1].status = "error: boom".into();
        rows[1].scores = Default::default();
        write_results(&rows, std::fs::File::create(&results).unwrap()).unwrap();
        let losses = loss_dir_for(&results);
        std::fs::create_dir_all(&losses).unwrap();
        std::fs::write(losses.join(loss_file_name(&rows[0], 0)), "step,l_d,l_g,saturation_count\n1,-1.2,-0.6,0\n").unwrap();
        let files = write_plot_data(&results, &dir.path().join("p")).unwrap();
        assert_eq!(files.len(), 5);
        assert_eq!(std::fs::read_to_string(&files[0]).unwrap().lines().count(), 2);
        let curve = std::fs::read_to_string(&files[4]).unwrap();
        assert_eq!(curve, "# step l_d l_g saturation_count\n1 -1.2 -0.6 0\n");
    }
}
