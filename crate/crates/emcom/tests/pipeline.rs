//! End-to-end pipeline contracts: checkpoint resume, CLI behavior,
//! determinism of artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use emcom::checkpoint::{load_train_state, save_train_state};
use emcom::config::Config;
use emcom::dataset::{gen_synthetic, split};
use emcom::training::{run_training, MetricsRecord, RunHooks, TrainState};

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("emcom_pipeline").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Tiny but real config for fast end-to-end runs.
fn tiny_config() -> Config {
    let mut cfg = Config::desk();
    for (section, key, value) in [
        ("dataset", "dim", "16"),
        ("dataset", "attrs", "2"),
        ("dataset", "values", "8"),
        ("dataset", "objects", "32"),
        ("agents", "speaker_hidden", "8"),
        ("agents", "listener_hidden", "8"),
        ("agents", "listener_embed", "8"),
        ("training", "total_steps", "8"),
        ("training", "batch_size", "4"),
        ("training", "c_size", "4"),
        ("training", "log_interval", "1"),
        ("training", "checkpoint_interval", "4"),
    ] {
        cfg.set(section, key, value).unwrap();
    }
    cfg
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_run() {
    let cfg = tiny_config();
    let tc = cfg.train_config().unwrap();
    let ds = gen_synthetic(cfg.attribute_spec(), 16, 32, cfg.dataset.seed).unwrap();
    let (train, _) = split(&ds, 0.75, cfg.dataset.seed).unwrap();

    // Uninterrupted run.
    let mut full_state = TrainState::<f32>::init(&tc);
    let mut hooks = RunHooks::silent();
    hooks.log_interval = 1;
    let full = run_training(&mut full_state, &train, &tc, &mut hooks).unwrap();

    // Interrupted at step 4, serialized, reloaded, continued.
    let mut half_cfg = tc.clone();
    half_cfg.total_steps = 4;
    let mut state = TrainState::<f32>::init(&tc);
    let mut hooks = RunHooks::silent();
    hooks.log_interval = 1;
    let first_half = run_training(&mut state, &train, &half_cfg, &mut hooks).unwrap();

    let dir = tmp_dir("resume");
    let ckpt = dir.join("mid.emck");
    save_train_state(&ckpt, &state, &cfg.serialize()).unwrap();
    let mut resumed = load_train_state(&ckpt).unwrap().state;
    let mut hooks = RunHooks::silent();
    hooks.log_interval = 1;
    let second_half = run_training(&mut resumed, &train, &tc, &mut hooks).unwrap();

    let stitched: Vec<MetricsRecord> = first_half.into_iter().chain(second_half).collect();
    assert_eq!(stitched.len(), full.len());
    for (a, b) in stitched.iter().zip(&full) {
        assert_eq!(
            serde_json::to_string(a).unwrap(),
            serde_json::to_string(b).unwrap(),
            "resumed trajectory diverged at step {}",
            b.step
        );
    }
    assert_eq!(resumed.speaker, full_state.speaker);
    assert_eq!(resumed.listener, full_state.listener);
}

// ---- CLI ----------------------------------------------------------------------

fn emcom(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emcom"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const TINY_TRAIN_ARGS: &[&str] = &[
    "--set",
    "dataset.dim=16",
    "--set",
    "dataset.attrs=2",
    "--set",
    "dataset.values=8",
    "--set",
    "dataset.objects=32",
    "--set",
    "agents.speaker_hidden=8",
    "--set",
    "agents.listener_hidden=8",
    "--set",
    "agents.listener_embed=8",
    "--set",
    "training.total_steps=8",
    "--set",
    "training.batch_size=4",
    "--set",
    "training.c_size=4",
    "--set",
    "training.log_interval=1",
    "--set",
    "training.checkpoint_interval=4",
];

#[test]
fn cli_gen_data_is_deterministic_and_validates() {
    let dir = tmp_dir("gendata");
    let args = [
        "gen-data",
        "--attrs",
        "2",
        "--values",
        "4",
        "--objects",
        "16",
        "--dim",
        "16",
        "--seed",
        "3",
        "--out",
        "a.emcf",
    ];
    let out1 = emcom(&args, &dir);
    assert_ok(&out1);
    let mut args2 = args;
    args2[args.len() - 1] = "b.emcf";
    let out2 = emcom(&args2, &dir);
    assert_ok(&out2);
    assert_eq!(
        std::fs::read(dir.join("a.emcf")).unwrap(),
        std::fs::read(dir.join("b.emcf")).unwrap()
    );
    // identical digests printed
    let line1 = String::from_utf8_lossy(&out1.stdout);
    let line2 = String::from_utf8_lossy(&out2.stdout);
    let digest = |s: &str| s.split("digest ").nth(1).map(|d| d[..16].to_string());
    assert_eq!(digest(&line1), digest(&line2));

    // too many objects for the tuple space
    let bad = emcom(
        &[
            "gen-data",
            "--attrs",
            "2",
            "--values",
            "4",
            "--objects",
            "20",
            "--dim",
            "16",
            "--out",
            "c.emcf",
        ],
        &dir,
    );
    assert_eq!(bad.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("distinct attribute tuples"));
}

#[test]
fn cli_train_writes_expected_artifacts() {
    let dir = tmp_dir("train");
    let mut args: Vec<&str> = vec![
        "train",
        "--variant",
        "NLG",
        "--lambda",
        "0.5",
        "--out",
        "run",
        "--set",
        "game.schedule=constant",
    ];
    args.extend_from_slice(TINY_TRAIN_ARGS);
    let out = emcom(&args, &dir);
    assert_ok(&out);

    let metrics = std::fs::read_to_string(dir.join("run/metrics.jsonl")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines.len(), 8);
    let last: MetricsRecord = serde_json::from_str(lines.last().unwrap()).unwrap();
    assert_eq!(
        last.lambda, 0.5,
        "final metrics line must carry the channel noise level"
    );
    // steps are monotone
    let steps: Vec<u64> = lines
        .iter()
        .map(|l| serde_json::from_str::<MetricsRecord>(l).unwrap().step)
        .collect();
    assert!(steps.windows(2).all(|w| w[0] < w[1]));
    assert!(dir.join("run/final.emck").exists());
    assert!(dir.join("run/config.txt").exists());
    assert!(dir.join("run/step_00000004.emck").exists());
}

#[test]
fn cli_train_lg_s_reports_infonce() {
    let dir = tmp_dir("train_lgs");
    let mut args: Vec<&str> = vec!["train", "--variant", "LG_S", "--out", "run"];
    args.extend_from_slice(TINY_TRAIN_ARGS);
    assert_ok(&emcom(&args, &dir));
    let metrics = std::fs::read_to_string(dir.join("run/metrics.jsonl")).unwrap();
    let first: serde_json::Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    assert!(
        first.get("infonce").is_some(),
        "supervised runs log the infonce term"
    );
    assert!(
        first.get("l_la").is_none(),
        "supervised runs have no listener actor loss"
    );
    assert!(first.get("l_lc").is_none());
}

#[test]
fn cli_resume_continues_step_numbering() {
    let dir = tmp_dir("resume_cli");
    let mut args: Vec<&str> = vec!["train", "--variant", "LG_RL", "--out", "run"];
    args.extend_from_slice(TINY_TRAIN_ARGS);
    assert_ok(&emcom(&args, &dir));
    let full = std::fs::read_to_string(dir.join("run/metrics.jsonl")).unwrap();

    let resumed = emcom(
        &[
            "train",
            "--resume",
            "run/step_00000004.emck",
            "--out",
            "run2",
        ],
        &dir,
    );
    assert_ok(&resumed);
    let tail = std::fs::read_to_string(dir.join("run2/metrics.jsonl")).unwrap();
    let full_lines: Vec<&str> = full.lines().collect();
    let tail_lines: Vec<&str> = tail.lines().collect();
    assert_eq!(tail_lines.len(), 4, "resume covers steps 4..8");
    assert_eq!(
        &full_lines[4..],
        &tail_lines[..],
        "resumed metrics must match byte-for-byte"
    );

    // Resume rejects conflicting config flags.
    let conflict = emcom(
        &[
            "train",
            "--resume",
            "run/step_00000004.emck",
            "--steps",
            "20",
        ],
        &dir,
    );
    assert_eq!(conflict.status.code(), Some(2));
}

#[test]
fn cli_eval_grid_is_byte_deterministic() {
    let dir = tmp_dir("eval_cli");
    let mut args: Vec<&str> = vec!["train", "--variant", "LG_RL", "--out", "run"];
    args.extend_from_slice(TINY_TRAIN_ARGS);
    assert_ok(&emcom(&args, &dir));

    let eval_args = [
        "eval",
        "--checkpoint",
        "run/final.emck",
        "--lambda-test",
        "0,0.25,0.5,0.75",
        "--c-test",
        "4,8",
        "--n-games",
        "64",
        "--seed",
        "5",
        "--out",
        "report.csv",
    ];
    assert_ok(&emcom(&eval_args, &dir));
    let first = std::fs::read(dir.join("report.csv")).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    assert!(
        text.starts_with("variant,lambda_train,c_train,lambda_test,c_test,acc_mean,acc_sd,n_seeds")
    );
    assert_eq!(
        text.lines().count(),
        1 + 8,
        "4 noise levels x 2 candidate counts"
    );

    assert_ok(&emcom(&eval_args, &dir));
    let second = std::fs::read(dir.join("report.csv")).unwrap();
    assert_eq!(
        first, second,
        "identical invocations must produce identical bytes"
    );
}

#[test]
fn cli_eval_masking_rows() {
    let dir = tmp_dir("eval_mask");
    let mut args: Vec<&str> = vec!["train", "--variant", "LG_RL", "--out", "run"];
    args.extend_from_slice(TINY_TRAIN_ARGS);
    assert_ok(&emcom(&args, &dir));
    let out = emcom(
        &[
            "eval",
            "--checkpoint",
            "run/final.emck",
            "--lambda-test",
            "0",
            "--c-test",
            "4",
            "--n-games",
            "32",
            "--masking",
            "--out",
            "r.csv",
        ],
        &dir,
    );
    assert_ok(&out);
    let mask = std::fs::read_to_string(dir.join("r.csv.masking.csv")).unwrap();
    let rows = mask.lines().count() - 1;
    // k = 0 has one row; each k in 1..=5 has at most 10 combos
    assert!(rows > 5, "expected k rows, got {rows}");
    assert!(rows <= 1 + 5 * 10);
    let stdout = String::from_utf8_lossy(&out.stdout);
    for k in 0..=5 {
        assert!(
            stdout.contains(&format!("masked_k={k}")),
            "missing k={k} line"
        );
    }
}

#[test]
fn cli_etl_rejects_unlabeled_classification() {
    let dir = tmp_dir("etl_cli");
    let mut args: Vec<&str> = vec!["train", "--variant", "LG_RL", "--out", "run"];
    args.extend_from_slice(TINY_TRAIN_ARGS);
    assert_ok(&emcom(&args, &dir));

    // Build an unlabeled EMCF and point the checkpoint's dataset at it.
    let ds = gen_synthetic(
        emcom::dataset::AttributeSpec {
            n_attrs: 2,
            values_per_attr: 4,
            jitter_sigma: 0.0,
        },
        16,
        16,
        3,
    )
    .unwrap();
    let stripped = emcom::dataset::Dataset::from_parts(
        16,
        (0..ds.len()).flat_map(|i| ds.feature(i).to_vec()).collect(),
        None,
        None,
        "unlabeled".into(),
    )
    .unwrap();
    emcom::dataset::save_features(&stripped, &dir.join("plain.emcf")).unwrap();

    let out = emcom(
        &[
            "etl",
            "--checkpoint",
            "run/final.emck",
            "--task",
            "classification",
            "--steps",
            "2",
            "--set",
            "dataset.source=file",
            "--set",
            "dataset.path=plain.emcf",
        ],
        &dir,
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("labels"));
}

#[test]
fn cli_etl_prints_provenance_and_writes_row() {
    let dir = tmp_dir("etl_prov");
    let mut args: Vec<&str> = vec!["train", "--variant", "LG_RL", "--out", "run"];
    args.extend_from_slice(TINY_TRAIN_ARGS);
    assert_ok(&emcom(&args, &dir));
    let out = emcom(
        &[
            "etl",
            "--checkpoint",
            "run/final.emck",
            "--task",
            "discrimination",
            "--steps",
            "2",
            "--regime-lambda",
            "0.5",
            "--set",
            "etl.disc_c_size=8",
            "--set",
            "etl.batch=8",
            "--set",
            "etl.disc_sigma=0.5",
            "--out",
            "etl.csv",
        ],
        &dir,
    );
    assert_ok(&out);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("sigma=0.5"), "provenance line: {stdout}");
    assert!(stdout.contains("c_size=8"));
    let csv = std::fs::read_to_string(dir.join("etl.csv")).unwrap();
    assert!(csv.starts_with("task,regime_lambda,metric,value,steps,seed"));
    let row = csv.lines().nth(1).unwrap();
    assert!(
        row.starts_with("discrimination,0.5,accuracy,"),
        "row: {row}"
    );
}

#[test]
fn cli_paper_profile_prints_published_etl_defaults() {
    // The default (paper-profile) discrimination setup reports sigma 0.5 and
    // 4096 candidates in its provenance line. Config-level check only.
    let cfg = Config::paper();
    assert_eq!(cfg.etl.disc_sigma, 0.5);
    assert_eq!(cfg.etl.disc_c_size, 4096);
}

#[test]
fn cli_help_config_covers_every_key() {
    let dir = tmp_dir("help");
    let out = emcom(&["--help-config"], &dir);
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    for (section, key, _, _) in Config::desk().entries() {
        assert!(
            text.contains(&format!("[{section}]")),
            "missing section {section}"
        );
        assert!(text.contains(key), "missing key {key}");
    }
    // tables' defaults surface in the help text
    for pinned in ["750000", "0.0001", "0.99", "300000", "4096", "500"] {
        assert!(text.contains(pinned), "missing pinned default {pinned}");
    }
}

#[test]
fn cli_unknown_flags_and_missing_files_use_exit_codes() {
    let dir = tmp_dir("exitcodes");
    let out = emcom(&["train", "--bogus", "1"], &dir);
    assert_eq!(out.status.code(), Some(2));
    let out = emcom(&["eval", "--checkpoint", "missing.emck"], &dir);
    assert_eq!(out.status.code(), Some(3));
    let out = emcom(&["frobnicate"], &dir);
    assert_eq!(out.status.code(), Some(2));
}
