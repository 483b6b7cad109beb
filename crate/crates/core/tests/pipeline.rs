//! End-to-end checks on a reduced grid: cell independence, CSV round trip,
//! dataset persistence and every CLI subcommand.

use std::path::Path;
use std::process::Command;

use confbench::explain::Method;
use confbench::harness::{cell_seed, csv_string, parse_csv, run_cell, run_sweep, SweepConfig, CSV_HEADER};
use confbench::synthgen::{build_dataset, load_dataset, save_dataset, ConfounderKind, DatasetSpec};

const SMALL: &str = "\
confounders = tag, obstruction
p_grid = 0, 100
seeds = 3
n_train = 160
n_val = 40
n_test = 40
image_size = 32
epochs = 2
segments = 4
lime_samples = 60
shap_max_evals = 60
explainers = gradient, gradcam, shap
heatmaps = false
";

fn small() -> SweepConfig {
    SweepConfig::parse(SMALL).unwrap()
}

#[test]
fn cell_standalone_equals_cell_in_sweep() {
    let cfg = small();
    let (report, outputs) = run_sweep(&cfg).unwrap();
    assert_eq!(outputs.len(), 4);
    assert_eq!(report.rows.len(), 4 * 3);
    let alone = run_cell(&ConfounderKind::obstruction(), 100, 3, &cfg);
    let in_sweep = &outputs[3];
    assert_eq!((in_sweep.confounder.as_str(), in_sweep.p), ("obstruction", 100));
    assert_eq!(alone.rows, in_sweep.rows);
    assert!(alone.rows.iter().all(|r| r.error.is_none()), "{:?}", alone.rows);
}

#[test]
fn sweep_csv_round_trips_and_repeats() {
    let cfg = small();
    let text = csv_string(&run_sweep(&cfg).unwrap().0.rows);
    assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(text.lines().count(), 1 + 12);
    let rows = parse_csv(&text, Path::new("mem")).unwrap();
    assert_eq!(csv_string(&rows), text);
    let again = csv_string(&run_sweep(&cfg).unwrap().0.rows);
    assert_eq!(text, again);
}

#[test]
fn component_seeds_are_distinct() {
    let tag = ConfounderKind::tag();
    let seeds = ["data", "model", "pairs", "explain"].map(|c| cell_seed(0, &tag, 50, c));
    for i in 0..4 {
        for j in i + 1..4 {
            assert_ne!(seeds[i], seeds[j]);
        }
    }
    assert_ne!(cell_seed(0, &tag, 50, "data"), cell_seed(0, &tag, 80, "data"));
    assert_ne!(cell_seed(0, &tag, 50, "data"), cell_seed(1, &tag, 50, "data"));
    assert_ne!(
        cell_seed(0, &tag, 50, "data"),
        cell_seed(0, &ConfounderKind::hyperintensity(), 50, "data")
    );
}

#[test]
fn dataset_survives_save_and_load() {
    let ds = build_dataset(&DatasetSpec {
        n_train: 30,
        n_val: 10,
        n_test: 10,
        image_size: 32,
        p: 50,
        confounder: ConfounderKind::hyperintensity(),
        seed: 8,
        ..DatasetSpec::default()
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path()).unwrap();
    // pixels are stored as 8-bit PGM, so compare quantized values
    for (a, b) in ds.train.iter().zip(&back.train) {
        assert_eq!(a.label, b.label);
        assert_eq!(a.confounded, b.confounded);
        assert_eq!(a.image.to_bytes(), b.image.to_bytes());
        assert_eq!(a.mask, b.mask);
    }
    assert_eq!(back.test.len(), 10);
}

fn confbench(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_confbench"))
        .args(args)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "confbench {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn cli_runs_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let d = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let config = d("small.cfg");
    std::fs::write(&config, SMALL).unwrap();
    let common = ["--config", &config, "--seed", "2", "--confounder", "tag", "--p", "100"];
    let with = |cmd: &str, extra: &[&str]| {
        let mut v = vec![cmd];
        v.extend_from_slice(&common);
        v.extend_from_slice(extra);
        v.into_iter().map(String::from).collect::<Vec<_>>()
    };
    let run = |args: Vec<String>| confbench(&args.iter().map(String::as_str).collect::<Vec<_>>());

    run(with("gen", &["--out", &d("data")]));
    assert!(dir.path().join("data/manifest.csv").is_file());

    run(with("train", &["--data", &d("data"), "--out", &d("model.bin")]));
    assert!(dir.path().join("model.bin").is_file());

    let image = walk_pgm(&dir.path().join("data")).unwrap();
    run(with(
        "explain",
        &[
            "--model",
            &d("model.bin"),
            "--image",
            image.to_str().unwrap(),
            "--method",
            "lime",
            "--out",
            &d("maps"),
        ],
    ));
    assert_eq!(std::fs::read_dir(dir.path().join("maps")).unwrap().count(), 2);

    let eval = run(with(
        "eval",
        &["--data", &d("data"), "--model", &d("model.bin"), "--out", &d("eval")],
    ));
    assert_eq!(eval.lines().count(), 1 + 3);
    assert!(dir.path().join("eval/eval.csv").is_file());

    let sweep = run(with("sweep", &["--out", &d("sweep")]));
    assert!(sweep.contains("tag"));
    let results = std::fs::read_to_string(dir.path().join("sweep/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 12);

    let report = run(with("report", &["--csv", &d("sweep/results.csv")]));
    assert_eq!(report, sweep);
}

fn walk_pgm(dir: &Path) -> Option<std::path::PathBuf> {
    for entry in std::fs::read_dir(dir).ok()?.flatten() {
        let p = entry.path();
        if p.is_dir() {
            if let Some(found) = walk_pgm(&p) {
                return Some(found);
            }
        } else if p.extension().is_some_and(|x| x == "pgm") {
            return Some(p);
        }
    }
    None
}

#[test]
fn cli_rejects_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "p_grid = 0, 120\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_confbench"))
        .args(["sweep", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
    let out = Command::new(env!("CARGO_BIN_EXE_confbench"))
        .args(["gen", "--confounder", "glitter"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn every_method_name_parses() {
    for m in Method::ALL {
        assert_eq!(m.name().parse::<Method>().unwrap(), m);
    }
}
