//! End-to-end tests that drive the compiled `irknet` binary the way a user
//! would: every test works in its own temporary directory and asserts on
//! exit codes and the files left behind.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use irknet::ButcherTableau;
use tempfile::TempDir;

fn run_in(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_irknet"))
        .args(args)
        .current_dir(dir)
        .env_remove("IRKNET_OUT")
        .output()
        .expect("spawn irknet binary")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("process terminated by signal")
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// Every non-header cell of a CSV must parse as a finite float; returns the
/// number of data rows.
fn assert_finite_csv(path: &Path, skip_cols: usize) -> usize {
    let text = read(path);
    let mut rows = 0;
    for line in text.lines().skip(1) {
        for cell in line.split(',').skip(skip_cols) {
            let v: f64 = cell
                .trim()
                .parse()
                .unwrap_or_else(|_| panic!("non-numeric cell '{cell}' in {}", path.display()));
            assert!(v.is_finite(), "non-finite cell in {}", path.display());
        }
        rows += 1;
    }
    rows
}

/// Overrides that shrink the default experiment down to seconds: a scalar
/// linear DAE, two-stage collocation, six-wide nets, eight training points.
const TINY: &[&str] = &[
    "--set",
    "model.name=linear_test",
    "--set",
    "scheme.stages=2",
    "--set",
    "scheme.h=0.1",
    "--set",
    "network.y_width=6",
    "--set",
    "network.y_depth=2",
    "--set",
    "network.z_width=6",
    "--set",
    "network.z_depth=2",
    "--set",
    "network.init_seed=3",
    "--set",
    "train.train_size=8",
    "--set",
    "train.test_size=4",
    "--set",
    "train.epochs_per_outer=40",
    "--set",
    "train.outer_iterations=1",
    "--set",
    "train.eval_every=20",
    "--set",
    "train.data_seed=11",
];

fn tiny_train(dir: &Path, ckpt: &str) -> PathBuf {
    let path = dir.join(ckpt);
    let mut args = vec!["train", "--out", path.to_str().unwrap()];
    args.extend_from_slice(TINY);
    let out = run_in(dir, &args);
    assert_success(&out);
    assert!(path.is_file(), "checkpoint missing at {}", path.display());
    path
}

#[test]
fn tableau_file_reloads_and_passes_order_checks() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("g4.tableau");
    let out = run_in(
        tmp.path(),
        &[
            "tableau",
            "--scheme",
            "gauss",
            "--stages",
            "4",
            "--out",
            path.to_str().unwrap(),
        ],
    );
    assert_success(&out);
    assert!(tmp.path().join("g4.manifest").is_file());

    let tab = ButcherTableau::load(&path).expect("reload written tableau");
    assert_eq!(tab.nu, 4);
    // Four-point quadrature integrates monomials up to degree 7 exactly;
    // the node conditions hold up to the stage count.
    let report = tab.verify_order_conditions(8);
    assert!(report.max_b(8) <= 1e-9 && report.max_c(4) <= 1e-9);
}

#[test]
fn oracle_writes_a_decaying_consistent_trajectory() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("oracle.csv");
    let out = run_in(
        tmp.path(),
        &[
            "oracle",
            "--model",
            "linear_test",
            "--ic",
            "1.0",
            "--zguess",
            "0.5",
            "--tend",
            "0.05",
            "--h",
            "0.01",
            "--out",
            path.to_str().unwrap(),
        ],
    );
    assert_success(&out);
    let text = read(&path);
    assert_eq!(text.lines().next(), Some("t,y,z"));
    assert_eq!(assert_finite_csv(&path, 0), 6); // t = 0 plus five steps

    // The algebraic constraint is z = y, and y' = -y decays from 1.
    let last = text.lines().last().unwrap();
    let cells: Vec<f64> = last.split(',').map(|c| c.parse().unwrap()).collect();
    assert!((cells[1] - cells[2]).abs() < 1e-10);
    assert!(cells[1] < 1.0 && cells[1] > 0.9);
    assert!(tmp.path().join("oracle.manifest").is_file());
}

#[test]
fn datagen_honors_count_and_ranges() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("data.csv");
    let out = run_in(
        tmp.path(),
        &[
            "datagen",
            "--model",
            "linear_test",
            "--count",
            "5",
            "--seed",
            "7",
            "--ranges",
            "-2:2",
            "--out",
            path.to_str().unwrap(),
        ],
    );
    assert_success(&out);
    let text = read(&path);
    assert_eq!(text.lines().next(), Some("y"));
    assert_eq!(assert_finite_csv(&path, 0), 5);
    for line in text.lines().skip(1) {
        let v: f64 = line.parse().unwrap();
        assert!((-2.0..=2.0).contains(&v));
    }
}

#[test]
fn training_is_reproducible_and_manifests_feed_back() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let c = tmp.path().join("c");
    for d in [&a, &b, &c] {
        fs::create_dir(d).unwrap();
    }

    let ckpt_a = tiny_train(&a, "model.ckpt");
    let ckpt_b = tiny_train(&b, "model.ckpt");

    // Same configuration, fresh process: bit-identical artifacts.
    assert_eq!(fs::read(&ckpt_a).unwrap(), fs::read(&ckpt_b).unwrap());
    assert_eq!(
        read(&a.join("model.log.csv")),
        read(&b.join("model.log.csv"))
    );

    let log = read(&a.join("model.log.csv"));
    assert_eq!(
        log.lines().next(),
        Some("epoch,outer_iter,w_f,w_g,l_f,l_g,total,learning_rate")
    );
    // Two outer iterations at a 40-epoch cap and every line numeric.
    assert_eq!(assert_finite_csv(&a.join("model.log.csv"), 0), 80);
    assert_eq!(
        read(&a.join("model.test.csv")).lines().next(),
        Some("epoch,outer_iter,l_f,l_g,total")
    );

    // The manifest is a complete config: training from it reproduces the
    // checkpoint exactly.
    let manifest = a.join("model.manifest");
    assert!(manifest.is_file());
    let ckpt_c = c.join("model.ckpt");
    let out = run_in(
        &c,
        &[
            "train",
            "--config",
            manifest.to_str().unwrap(),
            "--out",
            ckpt_c.to_str().unwrap(),
        ],
    );
    assert_success(&out);
    assert_eq!(fs::read(&ckpt_a).unwrap(), fs::read(&ckpt_c).unwrap());
}

#[test]
fn simulate_scores_against_the_reference_solver() {
    let tmp = TempDir::new().unwrap();
    let ckpt = tiny_train(tmp.path(), "model.ckpt");
    let dir = tmp.path().join("sim");
    let out = run_in(
        tmp.path(),
        &[
            "simulate",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--ic",
            "0.3",
            "--steps",
            "3",
            "--truth",
            "oracle",
            "--model",
            "linear_test",
            "--svg",
            "--oracle-h",
            "0.01",
            "--out",
            dir.to_str().unwrap(),
        ],
    );
    assert_success(&out);

    let traj = dir.join("trajectory.csv");
    assert_eq!(read(&traj).lines().next(), Some("t,y,z"));
    // Three steps, each contributing two collocation rows plus the endpoint.
    assert_eq!(assert_finite_csv(&traj, 0), 9);

    assert_eq!(read(&dir.join("drift.csv")).lines().next(), Some("step,ginf"));
    assert_eq!(assert_finite_csv(&dir.join("drift.csv"), 0), 3);

    let errors = read(&dir.join("errors.csv"));
    assert_eq!(errors.lines().next(), Some("state,l2rel"));
    let states: Vec<&str> = errors
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(states, ["y", "z"]);
    assert_eq!(assert_finite_csv(&dir.join("errors.csv"), 1), 2);

    for name in ["y", "z"] {
        let svg = read(&dir.join(format!("state_{name}.svg")));
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("predicted") && svg.contains("reference"));
    }
    assert!(dir.join("manifest").is_file());
}

#[test]
fn simulate_without_truth_skips_error_scoring() {
    let tmp = TempDir::new().unwrap();
    let ckpt = tiny_train(tmp.path(), "model.ckpt");
    let dir = tmp.path().join("sim");
    let out = run_in(
        tmp.path(),
        &[
            "simulate",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--ic",
            "0.3",
            "--steps",
            "2",
            "--truth",
            "none",
            "--model",
            "linear_test",
            "--out",
            dir.to_str().unwrap(),
        ],
    );
    assert_success(&out);
    assert!(dir.join("trajectory.csv").is_file());
    assert!(!dir.join("errors.csv").exists());
}

#[test]
fn evaluate_summarizes_an_ensemble() {
    let tmp = TempDir::new().unwrap();
    let ckpt = tiny_train(tmp.path(), "model.ckpt");
    let dir = tmp.path().join("eval");
    let out = run_in(
        tmp.path(),
        &[
            "evaluate",
            "--ckpt",
            ckpt.to_str().unwrap(),
            "--ensemble",
            "4",
            "--steps",
            "2",
            "--model",
            "linear_test",
            "--seed",
            "5",
            "--oracle-h",
            "0.01",
            "--out",
            dir.to_str().unwrap(),
        ],
    );
    assert_success(&out);
    let table = read(&dir.join("table.csv"));
    assert_eq!(table.lines().next(), Some("metric,y,z"));
    let labels: Vec<&str> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(labels, ["mean", "std"]);
    assert_eq!(assert_finite_csv(&dir.join("table.csv"), 1), 2);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("evaluated 4 of 4"), "{stdout}");
}

#[test]
fn compare_gives_identical_checkpoints_identical_curves() {
    let tmp = TempDir::new().unwrap();
    let first = tiny_train(tmp.path(), "first.ckpt");
    let second = tmp.path().join("second.ckpt");
    fs::copy(&first, &second).unwrap();

    let dir = tmp.path().join("cmp");
    let ckpts = format!("{},{}", first.display(), second.display());
    let out = run_in(
        tmp.path(),
        &[
            "compare",
            "--ckpts",
            &ckpts,
            "--ic",
            "0.2",
            "--steps",
            "3",
            "--model",
            "linear_test",
            "--oracle-h",
            "0.01",
            "--svg",
            "--out",
            dir.to_str().unwrap(),
        ],
    );
    assert_success(&out);

    let csv = read(&dir.join("comparison.csv"));
    assert_eq!(csv.lines().next(), Some("scheme,steps,y,z"));
    let rows: Vec<Vec<&str>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 6); // two labels, three step counts each
    for k in 0..3 {
        assert_eq!(rows[k][0], "first");
        assert_eq!(rows[k + 3][0], "second");
        // Same weights must give exactly the same error curves.
        assert_eq!(rows[k][2..], rows[k + 3][2..]);
    }
    assert!(dir.join("comparison_y.svg").is_file());
    assert!(dir.join("comparison_z.svg").is_file());
}

#[test]
fn grid_trains_each_point_and_collects_a_summary() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("grid.cfg");
    fs::write(
        &cfg,
        "[model]\n\
         name = linear_test\n\n\
         [scheme]\n\
         stages = 2\n\
         h = 0.1\n\n\
         [network]\n\
         y_depth = 2\n\
         z_depth = 2\n\
         init_seed = 3\n\n\
         [train]\n\
         train_size = 8\n\
         test_size = 4\n\
         epochs_per_outer = 25\n\
         outer_iterations = 0\n\
         eval_every = 25\n\
         data_seed = 11\n\n\
         [grid]\n\
         widths = 4, 6\n",
    )
    .unwrap();

    let dir = tmp.path().join("grid");
    let out = run_in(
        tmp.path(),
        &[
            "grid",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ],
    );
    assert_success(&out);

    let summary = read(&dir.join("summary.csv"));
    assert_eq!(
        summary.lines().next(),
        Some("width,depth,train_size,mode,status,train_l_f,train_l_g,train_total,test_total,epochs")
    );
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    for (row, width) in rows.iter().zip(["4", "6"]) {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[0], width);
        assert_eq!(cells[4], "ok");
    }
    for point in ["unstacked_w4_d2_t8", "unstacked_w6_d2_t8"] {
        assert!(dir.join(point).join("model.ckpt").is_file());
        assert!(dir.join(point).join("model.manifest").is_file());
    }
}

#[test]
fn unknown_keys_and_malformed_overrides_exit_2() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(tmp.path(), &["train", "--set", "train.bogus_knob=1"]);
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("bogus_knob"), "{stderr}");

    let out = run_in(tmp.path(), &["train", "--set", "no-equals-sign"]);
    assert_eq!(exit_code(&out), 2);

    // Unknown keys in a config file are reported with their line number.
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "[train]\ntrain_size = 8\nmystery = 1\n").unwrap();
    let out = run_in(tmp.path(), &["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 3"), "{stderr}");
}

#[test]
fn bad_flag_values_exit_2() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(
        tmp.path(),
        &[
            "oracle",
            "--model",
            "linear_test",
            "--ic",
            "1.0,oops",
            "--zguess",
            "0.0",
            "--tend",
            "0.1",
        ],
    );
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--ic"), "{stderr}");

    // clap's own diagnostics also leave exit code 2.
    let out = run_in(tmp.path(), &["tableau", "--stages", "not-a-number"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn runtime_failures_exit_1() {
    let tmp = TempDir::new().unwrap();
    let out = run_in(
        tmp.path(),
        &[
            "simulate",
            "--ckpt",
            "no-such-file.ckpt",
            "--ic",
            "0.1",
            "--steps",
            "1",
            "--model",
            "linear_test",
        ],
    );
    assert_eq!(exit_code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn out_env_var_sets_the_default_output_root() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("artifacts");
    let out = Command::new(env!("CARGO_BIN_EXE_irknet"))
        .args(["tableau", "--scheme", "gauss", "--stages", "2"])
        .current_dir(tmp.path())
        .env("IRKNET_OUT", &root)
        .output()
        .expect("spawn irknet binary");
    assert_success(&out);
    assert!(root.join("gauss_2.tableau").is_file());
    assert!(!tmp.path().join("gauss_2.tableau").exists());
}
