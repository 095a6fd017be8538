use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use radkg::kg::{AnnotationTable, LabelValue, UncertainPolicy};

fn radkg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_radkg"))
        .args(args)
        .env_remove("RADKG_CONFIG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = radkg(args);
    assert!(
        out.status.success(),
        "radkg {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn synth(extra: &[&str]) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("f.csv");
        let a = dir.path().join("a.csv");
        let mut args = vec![
            "synth",
            "--features",
            s(&f),
            "--annotations",
            s(&a),
            "--synth-images",
            "120",
            "--synth-findings",
            "5",
            "--synth-dim",
            "12",
        ];
        args.extend_from_slice(extra);
        ok(&args);
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, ckpt: &str, extra: &[&str]) -> String {
        let (f, a, c) = (self.path("f.csv"), self.path("a.csv"), self.path(ckpt));
        let mut args = vec![
            "train",
            "--features",
            s(&f),
            "--annotations",
            s(&a),
            "--checkpoint",
            s(&c),
        ];
        args.extend_from_slice(extra);
        ok(&args)
    }
}

fn summary_count(summary: &str, key: &str) -> usize {
    summary
        .lines()
        .find_map(|l| l.strip_prefix(&format!("{key}\t")))
        .unwrap_or_else(|| panic!("no `{key}` in {summary}"))
        .parse()
        .unwrap()
}

#[test]
fn help_exits_zero_everywhere() {
    assert!(radkg(&["--help"]).status.success());
    for cmd in ["build-kg", "train", "eval", "predict", "synth", "gradcheck"] {
        let out = radkg(&[cmd, "--help"]);
        assert_eq!(out.status.code(), Some(0), "{cmd}");
        assert!(
            !String::from_utf8_lossy(&out.stdout).contains("corrupt"),
            "test hook is hidden"
        );
    }
}

#[test]
fn unknown_flag_fails_without_side_effects() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("f.csv");
    let a = dir.path().join("a.csv");
    let out = radkg(&["synth", "--features", s(&f), "--annotations", s(&a), "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!f.exists() && !a.exists());
    assert_eq!(radkg(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn build_kg_policy_accounting() {
    let fx = Fixture::synth(&["--synth-uncertain", "0.3"]);
    let table = AnnotationTable::read_csv(fx.path("a.csv")).unwrap();
    let kg = fx.path("kg.tsv");
    let a = fx.path("a.csv");
    let positive = ok(&[
        "build-kg",
        "--annotations",
        s(&a),
        "--output",
        s(&kg),
        "--policy",
        "positive",
    ]);
    assert_eq!(
        summary_count(&positive, "hasFinding"),
        table.count(LabelValue::Positive) + table.count(LabelValue::Uncertain)
    );
    let negative = ok(&[
        "build-kg",
        "--annotations",
        s(&a),
        "--output",
        s(&kg),
        "--policy",
        "negative",
    ]);
    assert_eq!(summary_count(&negative, "probablyHasFinding"), 0);
    assert_eq!(
        summary_count(&negative, "hasFinding"),
        table.count(LabelValue::Positive)
    );
    let separate = ok(&[
        "build-kg",
        "--annotations",
        s(&a),
        "--output",
        s(&kg),
        "--policy",
        "separate",
    ]);
    assert_eq!(
        summary_count(&separate, "probablyHasFinding"),
        table.count(LabelValue::Uncertain)
    );

    let text = fs::read_to_string(&kg).unwrap();
    assert!(text.contains("# policy = separate"));
    let reread = radkg::kg::KnowledgeGraph::read_from(text.as_bytes(), "kg").unwrap();
    assert_eq!(reread.len(), summary_count(&separate, "total"));
}

#[test]
fn build_kg_cooccurrence_matches_counting() {
    let fx = Fixture::synth(&["--synth-sparsity", "0.4"]);
    let table = AnnotationTable::read_csv(fx.path("a.csv")).unwrap();
    let n = table.num_findings();
    let mut expected = 0;
    for i in 0..n {
        for j in 0..n {
            let cond = (0..table.num_images())
                .filter(|&r| table.get(r, j) == LabelValue::Positive)
                .count();
            let both = (0..table.num_images())
                .filter(|&r| table.get(r, j) == LabelValue::Positive && table.get(r, i) == LabelValue::Positive)
                .count();
            if i != j && cond > 0 && both as f64 / cond as f64 > 0.2 {
                expected += 1;
            }
        }
    }
    let kg = fx.path("kg.tsv");
    let a = fx.path("a.csv");
    let out = ok(&["build-kg", "--annotations", s(&a), "--output", s(&kg), "--cooccurrence"]);
    assert_eq!(summary_count(&out, "coOccurs"), expected);
    assert!(expected > 0);
}

#[test]
fn parse_errors_name_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("bad.csv");
    fs::write(&a, "id,A,B\nx0,1,0\nx1,1,maybe\n").unwrap();
    let out = radkg(&[
        "build-kg",
        "--annotations",
        s(&a),
        "--output",
        s(&dir.path().join("kg.tsv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.csv") && err.contains('3'), "{err}");
}

#[test]
fn single_epoch_zero_patience_history() {
    let fx = Fixture::synth(&[]);
    let out = fx.train("m.ckpt", &["--epochs", "1", "--patience", "0"]);
    assert_eq!(summary_count(&out, "epochs"), 1);
    let history = fs::read_to_string(fx.path("m.ckpt.history.tsv")).unwrap();
    let rows: Vec<&str> = history.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 2, "{history}");
    assert!(history.contains("# epochs = 1"));
}

#[test]
fn config_file_env_and_override() {
    let fx = Fixture::synth(&[]);
    let cfg = fx.path("run.cfg");
    fs::write(&cfg, "# toy run\nepochs = 3\npatience = 3\nlearning_rate = 0.01\n").unwrap();
    let out = fx.train("a.ckpt", &["--config", s(&cfg), "--epochs", "2"]);
    assert_eq!(summary_count(&out, "epochs"), 2);
    let meta = radkg::training::load_checkpoint(fx.path("a.ckpt")).unwrap().metadata;
    assert_eq!(meta["learning_rate"], "0.01");
    assert_eq!(meta["epochs"], "2");
    assert!(!meta.contains_key("checkpoint"));

    let (f, a, c) = (fx.path("f.csv"), fx.path("a.csv"), fx.path("b.ckpt"));
    let out = Command::new(env!("CARGO_BIN_EXE_radkg"))
        .args([
            "train",
            "--features",
            s(&f),
            "--annotations",
            s(&a),
            "--checkpoint",
            s(&c),
        ])
        .env("RADKG_CONFIG", &cfg)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(summary_count(&String::from_utf8_lossy(&out.stdout), "epochs"), 3);

    fs::write(&cfg, "epochs = 3\nwat = 1\n").unwrap();
    let out = radkg(&["train", "--config", s(&cfg)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("wat"));
}

#[test]
fn eval_subset_and_train_fold_sanity() {
    let fx = Fixture::synth(&["--synth-images", "300"]);
    let out = fx.train("m.ckpt", &["--learning-rate", "0.01"]);
    let val: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("best_val_macro_auc\t"))
        .unwrap()
        .parse()
        .unwrap();
    let (f, a, c, r) = (fx.path("f.csv"), fx.path("a.csv"), fx.path("m.ckpt"), fx.path("r.txt"));
    let base = [
        "eval",
        "--features",
        s(&f),
        "--annotations",
        s(&a),
        "--checkpoint",
        s(&c),
        "--output",
        s(&r),
    ];

    let mut args = base.to_vec();
    args.extend(["--fold", "train"]);
    let train_auc: f64 = ok(&args).trim().strip_prefix("macro_auc\t").unwrap().parse().unwrap();
    assert!(train_auc >= val - 0.05, "train {train_auc} vs val {val}");

    let mut args = base.to_vec();
    args.extend(["--eval-findings", "F02", "--threshold", "0.5"]);
    ok(&args);
    let report = fs::read_to_string(&r).unwrap();
    let rows: Vec<&str> = report
        .lines()
        .skip_while(|l| !l.starts_with("finding\t"))
        .skip(1)
        .collect();
    assert_eq!(rows.len(), 1);
    assert!(rows[0].starts_with("F02\t"));
    assert!(report.contains("# eval_findings = F02"));
    assert!(report
        .lines()
        .any(|l| l.starts_with("finding\tauc\tpositives\tnegatives\tsensitivity")));

    let mut args = base.to_vec();
    args.extend(["--eval-findings", "F99"]);
    assert_eq!(radkg(&args).status.code(), Some(1));
}

#[test]
fn empty_test_fold_is_undefined_not_a_crash() {
    let fx = Fixture::synth(&[]);
    fx.train("m.ckpt", &["--epochs", "1"]);
    let tiny = fx.path("tiny.csv");
    fs::write(&tiny, "id,F00,F01,F02,F03,F04\nimg00000,1,0,0,0,0\n").unwrap();
    let (f, c, r) = (fx.path("f.csv"), fx.path("m.ckpt"), fx.path("r.txt"));
    let out = radkg(&[
        "eval",
        "--features",
        s(&f),
        "--annotations",
        s(&tiny),
        "--checkpoint",
        s(&c),
        "--output",
        s(&r),
    ]);
    assert_eq!(out.status.code(), Some(4));
    let report = fs::read_to_string(&r).unwrap();
    assert!(
        report.contains("images = 0") && report.contains("macro_auc = undefined"),
        "{report}"
    );
}

#[test]
fn feature_dimension_mismatch_is_explicit() {
    let fx = Fixture::synth(&[]);
    fx.train("m.ckpt", &["--epochs", "1"]);
    let (g, b) = (fx.path("g.csv"), fx.path("b.csv"));
    ok(&[
        "synth",
        "--features",
        s(&g),
        "--annotations",
        s(&b),
        "--synth-dim",
        "7",
        "--synth-findings",
        "5",
    ]);
    let (a, c) = (fx.path("a.csv"), fx.path("m.ckpt"));
    let out = radkg(&[
        "eval",
        "--features",
        s(&g),
        "--annotations",
        s(&a),
        "--checkpoint",
        s(&c),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dimension mismatch"));
}

#[test]
fn predict_rows_labels_and_rerun() {
    let fx = Fixture::synth(&[]);
    fx.train("m.ckpt", &["--epochs", "2"]);
    let three = fx.path("three.csv");
    fs::write(
        &three,
        "id,F00,F01,F02,F03,F04\nimg00003,1,0,0,0,0\nimg00007,0,0,0,0,0\nimg00011,0,1,0,0,0\n",
    )
    .unwrap();
    let (f, c, o) = (fx.path("f.csv"), fx.path("m.ckpt"), fx.path("p.csv"));
    let args = [
        "predict",
        "--features",
        s(&f),
        "--annotations",
        s(&three),
        "--checkpoint",
        s(&c),
        "--output",
        s(&o),
    ];
    assert_eq!(ok(&args), "rows\t3\n");
    let first = fs::read_to_string(&o).unwrap();
    let lines: Vec<&str> = first.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "id,F00,F01,F02,F03,F04");
    assert!(lines[1].starts_with("img00003,"));
    ok(&args);
    assert_eq!(fs::read_to_string(&o).unwrap(), first);
    assert!(fs::read_to_string(fx.path("p.csv.config.txt"))
        .unwrap()
        .contains("scorer = distmult"));

    let mut with_tau = args.to_vec();
    with_tau.extend(["--threshold", "0.5"]);
    ok(&with_tau);
    let labelled = fs::read_to_string(&o).unwrap();
    let header: Vec<&str> = labelled.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 11);
    assert_eq!(header[6], "F00_label");
    for line in labelled.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        for j in 0..5 {
            let p: f64 = fields[1 + j].parse().unwrap();
            assert_eq!(fields[6 + j] == "1", p > 0.5);
        }
    }
}

#[test]
fn predict_lists_missing_features() {
    let fx = Fixture::synth(&[]);
    fx.train("m.ckpt", &["--epochs", "1"]);
    let ids = fx.path("ids.csv");
    fs::write(
        &ids,
        "id,F00,F01,F02,F03,F04\nimg00001,1,0,0,0,0\nghost1,0,0,0,0,0\nghost2,0,0,0,0,0\n",
    )
    .unwrap();
    let (f, c, o) = (fx.path("f.csv"), fx.path("m.ckpt"), fx.path("p.csv"));
    let out = radkg(&[
        "predict",
        "--features",
        s(&f),
        "--annotations",
        s(&ids),
        "--checkpoint",
        s(&c),
        "--output",
        s(&o),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("ghost1") && err.contains("ghost2") && !err.contains("img00001"),
        "{err}"
    );
}

#[test]
fn synth_determinism_and_controls() {
    let a = Fixture::synth(&["--seed", "4"]);
    let b = Fixture::synth(&["--seed", "4"]);
    for name in ["f.csv", "a.csv"] {
        assert_eq!(fs::read(a.path(name)).unwrap(), fs::read(b.path(name)).unwrap());
    }
    let c = Fixture::synth(&["--seed", "5"]);
    assert_ne!(fs::read(a.path("f.csv")).unwrap(), fs::read(c.path("f.csv")).unwrap());
    assert!(fs::read_to_string(a.path("f.csv.config.txt"))
        .unwrap()
        .contains("seed = 4"));

    let table = AnnotationTable::read_csv(a.path("a.csv")).unwrap();
    assert_eq!(table.count(LabelValue::Uncertain), 0);

    let clean = Fixture::synth(&["--synth-noise", "0"]);
    let features = radkg::encoders::load_features(clean.path("f.csv")).unwrap();
    let labels = AnnotationTable::read_csv(clean.path("a.csv")).unwrap();
    // zero noise: images with identical label rows have identical codes
    for i in 0..labels.num_images() {
        for k in 0..i {
            if labels.row(i) == labels.row(k) {
                assert_eq!(features.code(i), features.code(k));
            }
        }
    }
    let bin = labels.binary(UncertainPolicy::AsPositive);
    assert!(bin.chunks(5).all(|r| r.iter().any(|x| *x)));
}

#[test]
fn gradcheck_command() {
    let out = ok(&["gradcheck"]);
    assert!(out.contains("PASS") && out.contains("max_rel_error"));
    let out = ok(&["gradcheck", "--scorer", "conve"]);
    assert!(out.contains("PASS"));
    let out = radkg(&[
        "gradcheck",
        "--scorer",
        "conve",
        "--corrupt-gradient",
        "--gradcheck-dim",
        "8",
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}
