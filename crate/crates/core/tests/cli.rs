use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
n_records = 120
image_dim = 16
vocab = 12
answers = 8
templates_per_type = 2
embed_dim = 4
rnn_hidden = 8
fused_dim = 8
noise_dim = 4
sketch_dim = 16
g_hidden = 16,16,16
d_hidden = 16
code_dim = 8
ae_hidden = 16
att_hidden = 8
att_classifier_hidden = 8
steps = 12
batch = 8
pretrain_steps = 5
";

fn vqa_lab(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vqa-lab"));
    cmd.current_dir(dir).args(args).env_remove("VFL_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn drop_wall_ms(csv: &str) -> String {
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|c| *c == "wall_ms").unwrap();
    csv.lines()
        .map(|l| {
            let mut cells: Vec<&str> = l.split(',').collect();
            cells.remove(col);
            cells.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn gen_data_prints_counts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "d.cfg", "n_records = 1000\ntype_mix = 0.4, 0.3, 0.3\n");
    let a = vqa_lab(dir.path(), &["gen-data", "--config", "d.cfg", "--out", "a.jsonl"], &[]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let out = String::from_utf8(a.stdout).unwrap();
    let counts: Vec<usize> = out
        .split('|')
        .skip(1)
        .map(|part| part.split_whitespace().last().unwrap().parse().unwrap())
        .collect();
    assert_eq!(counts.len(), 3);
    assert_eq!(counts.iter().sum::<usize>(), 1000);
    let b = vqa_lab(dir.path(), &["gen-data", "--config", "d.cfg", "--out", "b.jsonl"], &[]);
    assert_eq!(code(&b), 0);
    assert_eq!(
        std::fs::read(dir.path().join("a.jsonl")).unwrap(),
        std::fs::read(dir.path().join("b.jsonl")).unwrap()
    );
}

#[test]
fn config_errors_exit_two_with_the_field() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "mix.cfg", "type_mix = 0.4, 0.3, 0.2\n");
    let o = vqa_lab(dir.path(), &["gen-data", "--config", "mix.cfg", "--out", "x.jsonl"], &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("type mix"), "{}", stderr(&o));

    write(dir.path(), "typo.cfg", "stpes = 3\n");
    let o = vqa_lab(dir.path(), &["train", "--config", "typo.cfg", "--out", "r"], &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("stpes"));

    write(dir.path(), "alpha.cfg", "alpha = -1\n");
    let o = vqa_lab(dir.path(), &["train", "--config", "alpha.cfg", "--out", "r"], &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("alpha"));

    let o = vqa_lab(dir.path(), &["gen-data", "--config", "missing.cfg", "--out", "x"], &[]);
    assert_eq!(code(&o), 2);

    let o = vqa_lab(dir.path(), &["ablate", "--preset", "table3"], &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn env_seed_overrides_the_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "s3.cfg", "n_records = 50\nseed = 3\n");
    write(dir.path(), "s9.cfg", "n_records = 50\nseed = 9\n");
    let run = |cfg: &str, out: &str, env: &[(&str, &str)]| {
        let o = vqa_lab(dir.path(), &["gen-data", "--config", cfg, "--out", out], env);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        std::fs::read(dir.path().join(out)).unwrap()
    };
    let plain = run("s3.cfg", "a.jsonl", &[]);
    let overridden = run("s9.cfg", "b.jsonl", &[("VFL_SEED", "3")]);
    let own = run("s9.cfg", "c.jsonl", &[]);
    assert_eq!(plain, overridden);
    assert_ne!(plain, own);

    let o = vqa_lab(dir.path(), &["gen-data", "--config", "s3.cfg", "--out", "d"], &[("VFL_SEED", "x")]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_writes_artifacts_and_eval_reloads_them() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "t.cfg", TINY);
    let o = vqa_lab(dir.path(), &["train", "--config", "t.cfg", "--out", "run"], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trained = String::from_utf8(o.stdout).unwrap();
    let log = std::fs::read_to_string(dir.path().join("run/loss.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 12);
    for f in ["checkpoint.bin", "eval.csv", "config.cfg"] {
        assert!(dir.path().join("run").join(f).exists(), "{f}");
    }
    let e = vqa_lab(dir.path(), &["eval", "--config", "t.cfg", "--checkpoint", "run"], &[]);
    assert_eq!(code(&e), 0, "{}", stderr(&e));
    assert_eq!(
        trained.lines().next().unwrap(),
        String::from_utf8(e.stdout).unwrap().lines().next().unwrap()
    );
}

#[test]
fn numerical_blowup_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "nan.cfg", &format!("{TINY}alpha = 1e150\n"));
    let o = vqa_lab(dir.path(), &["train", "--config", "nan.cfg", "--out", "run"], &[]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn ablate_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "t.cfg", TINY);
    let args = |out: &'static str, jobs: &'static str| {
        ["ablate", "--config", "t.cfg", "--preset", "table2", "--seeds", "0,1", "--jobs", jobs, "--out", out]
    };
    let a = vqa_lab(dir.path(), &args("a.csv", "1"), &[]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    let b = vqa_lab(dir.path(), &args("b.csv", "2"), &[]);
    assert_eq!(code(&b), 0);
    let a = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read_to_string(dir.path().join("b.csv")).unwrap();
    assert_eq!(a.lines().count(), 1 + 4 * 2);
    assert_eq!(drop_wall_ms(&a), drop_wall_ms(&b));
    assert_eq!(std::fs::read_dir(dir.path().join("a.losses")).unwrap().count(), 8);

    let p = vqa_lab(dir.path(), &["plot-data", "a.csv", "--out", "plots"], &[]);
    assert_eq!(code(&p), 0, "{}", stderr(&p));
    for cat in ["all", "yes_no", "number", "other"] {
        assert!(dir.path().join(format!("plots/{cat}.dat")).exists());
    }

    write(dir.path(), "empty.csv", "");
    let p = vqa_lab(dir.path(), &["plot-data", "empty.csv", "--out", "p2"], &[]);
    assert_eq!(code(&p), 2);
    write(dir.path(), "short.csv", "method,all\ngan,1.0\n");
    let p = vqa_lab(dir.path(), &["plot-data", "short.csv", "--out", "p3"], &[]);
    assert_eq!(code(&p), 2);
}

#[test]
fn metric_flag_switches_scoring() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "t.cfg", TINY);
    let score = |metric: &str| {
        let o = vqa_lab(dir.path(), &["train", "--config", "t.cfg", "--out", metric, "--metric", metric], &[]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let line = String::from_utf8(o.stdout).unwrap();
        line.split_whitespace().nth(1).unwrap().parse::<f64>().unwrap()
    };
    assert!(score("strict") <= score("official"));
    let o = vqa_lab(dir.path(), &["train", "--config", "t.cfg", "--metric", "loose"], &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_passes_for_one_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = vqa_lab(dir.path(), &["gradcheck", "--seeds", "3"], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
}
