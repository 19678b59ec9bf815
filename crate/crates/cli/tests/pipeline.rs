use std::path::{Path, PathBuf};
use std::process::Command;

use proptest::prelude::*;
use ticket_cli::histogram::weight_histograms;
use ticket_cli::records::{find_files, MetricsRow, EARLY_STOP_FILE, METRICS_FILE};
use ticket_cli::{aggregate_metrics, CliError, ExperimentConfig};
use ticket_core::{Checkpoint, SeededRng};

fn write_idx(dir: &Path, prefix: &str, n: usize, seed: u64) {
    // Class c lights up rows 2c..2c+2 of the 28×28 image, plus noise.
    let mut rng = SeededRng::new(seed);
    let mut images = vec![0, 0, 8, 3];
    for d in [n as u32, 28, 28] {
        images.extend(d.to_be_bytes());
    }
    let mut labels = vec![0, 0, 8, 1];
    labels.extend((n as u32).to_be_bytes());
    for _ in 0..n {
        let c = rng.below(10);
        labels.push(c as u8);
        for r in 0..28 {
            for _ in 0..28 {
                let on = r / 2 == c;
                images.push(if on {
                    200 + rng.below(56) as u8
                } else {
                    rng.below(40) as u8
                });
            }
        }
    }
    std::fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), images).unwrap();
    std::fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), labels).unwrap();
}

fn synthetic_data(root: &Path) -> PathBuf {
    let dir = root.join("data");
    let digits = dir.join("stripes");
    std::fs::create_dir_all(&digits).unwrap();
    write_idx(&digits, "train", 300, 1);
    write_idx(&digits, "t10k", 100, 2);
    dir
}

fn small_config(data_dir: &Path, out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::load_with_overrides(
        None,
        &[
            "dataset=stripes".into(),
            "strategies=[\"original\"]".into(),
            "train_modes=[\"natural\"]".into(),
            "attacks=[\"fgsm\"]".into(),
            "trials=1".into(),
            "train.iterations_per_round=40".into(),
            "train.eval_every=20".into(),
            "train.pruning_rounds=2".into(),
            "train.validation_size=100".into(),
            "train.batch_size=20".into(),
        ],
    )
    .unwrap();
    c.data_dir = data_dir.to_path_buf();
    c.output_dir = out.to_path_buf();
    c
}

fn ticket() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ticket"))
}

#[test]
fn unit_experiment_writes_one_eval_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synthetic_data(tmp.path());
    let cfg = small_config(&data, &tmp.path().join("run"));
    let summary = ticket_cli::run_experiment(&cfg, 1).unwrap().into_result().unwrap();
    assert_eq!(summary.total, 1);
    let csvs = find_files(&cfg.output_dir, METRICS_FILE).unwrap();
    assert_eq!(csvs.len(), 1);
    assert_eq!(find_files(&cfg.output_dir, EARLY_STOP_FILE).unwrap().len(), 1);
    assert!(cfg.output_dir.join("config.resolved.toml").exists());

    let rows = ticket_cli::records::read_metrics_dir(&cfg.output_dir).unwrap();
    // 2 rounds × 2 evaluations × 2 splits.
    assert_eq!(rows.len(), 8);
    assert!(rows.iter().all(|r| r.seed == 0 && r.config_hash == cfg.hash()));
    assert_eq!(rows[0].sparsity_pct, 100.0);

    let ckpts = find_files(&csvs[0].parent().unwrap().join("checkpoints"), "round_01.ckpt").unwrap();
    let ck = Checkpoint::load(&ckpts[0]).unwrap();
    assert_eq!(ck.round, 1);
    for h in weight_histograms(&ck, 30) {
        let h = h.histogram.unwrap();
        assert!((h.area() - 1.0).abs() < 1e-9);
        assert!(h.densities.iter().all(|d| *d >= 0.0));
    }
}

#[test]
fn identical_configs_give_identical_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synthetic_data(tmp.path());
    let mut csvs = Vec::new();
    for name in ["a", "b"] {
        let cfg = small_config(&data, &tmp.path().join(name));
        ticket_cli::run_experiment(&cfg, 1).unwrap().into_result().unwrap();
        let files: Vec<Vec<u8>> = [METRICS_FILE, EARLY_STOP_FILE]
            .iter()
            .flat_map(|f| find_files(&cfg.output_dir, f).unwrap())
            .map(|p| std::fs::read(p).unwrap())
            .collect();
        csvs.push(files);
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn failed_cell_does_not_stop_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synthetic_data(tmp.path());
    let mut cfg = small_config(&data, &tmp.path().join("run"));
    cfg.trials = 2;
    cfg.train.pruning_rounds = 1;
    // A file where trial 1's directory should go makes that run fail.
    let blocked = tmp.path().join("run/cells/original_natural_fgsm");
    std::fs::create_dir_all(&blocked).unwrap();
    std::fs::write(blocked.join("trial_1"), "").unwrap();
    let summary = ticket_cli::run_experiment(&cfg, 2).unwrap();
    assert_eq!(summary.failures.len(), 1);
    assert_eq!(summary.failures[0].trial, 1);
    assert!(find_files(&blocked.join("trial_0"), METRICS_FILE).unwrap().len() == 1);
    let err = summary.into_result().unwrap_err();
    assert!(matches!(err, CliError::Partial { failed: 1, total: 2 }));
    assert_eq!(err.exit_code(), 3);
    let status = std::fs::read_to_string(tmp.path().join("run/status.csv")).unwrap();
    assert!(status.contains(",0,0,ok,"), "{status}");
    assert!(status.contains(",1,1,failed,"), "{status}");
}

#[test]
fn aggregate_report_and_plot_from_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synthetic_data(tmp.path());
    let mut cfg = small_config(&data, &tmp.path().join("run"));
    cfg.trials = 3;
    cfg.strategies = vec!["original".into(), "continued".into()];
    cfg.train_modes = vec!["natural".into(), "adversarial".into()];
    cfg.train.pruning_rounds = 2;
    cfg.train.iterations_per_round = 20;
    ticket_cli::run_experiment(&cfg, 1).unwrap().into_result().unwrap();

    let (metrics, early) = ticket_cli::aggregate_run(&cfg.output_dir).unwrap();
    // 4 cells × 2 rounds × 1 iteration × 2 splits × 4 metrics.
    assert_eq!(metrics.len(), 64);
    assert!(metrics.iter().all(|r| r.n == 3 && r.std >= 0.0));
    assert_eq!(early.len(), 4 * 2 * 2 * 6);

    let report = ticket_cli::report_run(&cfg.output_dir, 30_000).unwrap();
    assert_eq!(report, ticket_cli::report_run(&cfg.output_dir, 30_000).unwrap());
    assert!(report.contains("## stripes, strategy continued: test accuracy (%)"));
    assert!(report.contains("Iteration 20 (30000 not recorded)"));
    assert!(report.contains("| 80.0 |"), "{report}");

    let plots = ticket_cli::plot_run(&cfg.output_dir, &tmp.path().join("plots")).unwrap();
    // 4 cells × 4 curve charts + 2 early-stop charts.
    assert_eq!(plots.len(), 18);
    let svg = std::fs::read_to_string(&plots[0]).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("errorbar"));
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synthetic_data(tmp.path());
    let out = tmp.path().join("run");
    let base = [
        "run",
        "--set",
        "dataset=stripes",
        "--set",
        "strategies=[\"random\"]",
        "--set",
        "train_modes=[\"adversarial\"]",
        "--set",
        "attacks=[\"pgd\"]",
        "--set",
        "train.iterations_per_round=20",
        "--set",
        "train.eval_every=20",
        "--set",
        "train.pruning_rounds=2",
        "--set",
        "train.validation_size=100",
        "--trials",
        "1",
    ];

    let status = ticket()
        .args(base)
        .args(["--set", "checkpoints=sometimes"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));
    assert_eq!(ticket().args(["run", "--bogus"]).status().unwrap().code(), Some(1));

    let missing = ticket()
        .args(base)
        .arg("--out")
        .arg(&out)
        .env("TICKET_DATA_DIR", tmp.path().join("nowhere"))
        .status()
        .unwrap();
    assert_eq!(missing.code(), Some(2));

    let ok = ticket()
        .args(base)
        .arg("--out")
        .arg(&out)
        .env("TICKET_DATA_DIR", &data)
        .status()
        .unwrap();
    assert_eq!(ok.code(), Some(0));

    let agg = ticket().arg("aggregate").arg(&out).status().unwrap();
    assert_eq!(agg.code(), Some(0));
    assert!(out.join("aggregate.csv").exists() && out.join("early_stop_aggregate.csv").exists());

    let hist = ticket()
        .arg("histograms")
        .arg(&out)
        .args(["--bins", "20"])
        .output()
        .unwrap();
    assert_eq!(hist.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&hist.stdout).lines().count(), 2);

    let report = ticket().arg("report").arg(&out).output().unwrap();
    assert_eq!(report.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&report.stdout).contains("PGD natural"));

    let empty = tmp.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert_eq!(ticket().arg("plot").arg(&empty).status().unwrap().code(), Some(2));
    assert!(!empty.join("plots").exists());
}

fn metrics_row(trial: usize, iteration: usize, acc: f64) -> MetricsRow {
    MetricsRow {
        dataset: "d".into(),
        strategy: "original".into(),
        train_mode: "natural".into(),
        attack: "fgsm".into(),
        trial,
        round: 0,
        sparsity_pct: 100.0,
        iteration,
        split: "test".into(),
        natural_loss: 1.0 - acc,
        natural_acc: acc,
        adv_loss: acc * 3.0,
        adv_acc: acc / 7.0,
        seed: trial as u64,
        config_hash: "h".into(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn aggregation_ignores_trial_order(
        accs in prop::collection::vec(0.0f64..1.0, 1..8),
        seed in any::<u64>(),
    ) {
        let rows: Vec<MetricsRow> = accs
            .iter()
            .enumerate()
            .flat_map(|(t, &a)| [metrics_row(t, 500, a), metrics_row(t, 1000, a * a)])
            .collect();
        let mut shuffled = rows.clone();
        SeededRng::new(seed).shuffle(&mut shuffled);
        let a = aggregate_metrics(&rows).unwrap();
        let b = aggregate_metrics(&shuffled).unwrap();
        prop_assert_eq!(a.len(), 8);
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.mean.to_bits(), y.mean.to_bits());
            prop_assert_eq!(x.std.to_bits(), y.std.to_bits());
            prop_assert_eq!(x, y);
        }
    }
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let cfg = ExperimentConfig::load(&path).unwrap();
            cfg.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert_eq!(seen, 3);
    let full = ExperimentConfig::load(&dir.join("full_digits.toml")).unwrap();
    let defaults = ExperimentConfig {
        output_dir: full.output_dir.clone(),
        ..ExperimentConfig::default()
    };
    assert_eq!(full, defaults);
}
