use std::fs;
use std::path::Path;
use std::process::Command;

use fixpo_cli::export::{curves, Input, XAxis};
use fixpo_cli::run::{read_metrics, DIAGNOSTICS_FILE, METRICS_FILE, SUMMARY_FILE};
use fixpo_cli::sweep::{sweep, GridAxis, SweepSpec};
use fixpo_cli::{run, Algorithm, MetricsRecord, RunConfig, RunError};
use fixpo_core::{Ablation, EnvId, KlDirection, NetworkConfig};
use proptest::prelude::*;

const FIELDS: [&str; 14] = [
    "step",
    "env_steps",
    "avg_return",
    "mean_kl",
    "max_kl_at_exit",
    "beta",
    "primary_grad_steps",
    "fixup_grad_steps",
    "fixup_passes",
    "entropy",
    "loss_pi",
    "loss_vf",
    "loss_kl",
    "wall_ms",
];

fn small(env: EnvId, out: &Path) -> RunConfig {
    let mut cfg = RunConfig {
        env,
        batch_timesteps: 200,
        improvement_steps: 3,
        out_dir: out.to_path_buf(),
        record_wall_time: false,
        network: NetworkConfig {
            hidden: vec![8],
            share_trunk: false,
        },
        ..RunConfig::default()
    };
    cfg.trust_region.n_epochs = 2;
    cfg
}

#[test]
fn metrics_have_exact_fields_one_record_per_step() {
    let dir = tempfile::tempdir().unwrap();
    for env in [EnvId::PointMass2d, EnvId::ChainWalk] {
        let out = dir.path().join(env.name());
        let outcome = run(&small(env, &out)).unwrap();
        let text = fs::read_to_string(out.join(METRICS_FILE)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let mut last_env_steps = 0;
        for (i, line) in lines.iter().enumerate() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
            let mut want = FIELDS.to_vec();
            want.sort_unstable();
            let mut got = keys.clone();
            got.sort_unstable();
            assert_eq!(got, want);
            assert_eq!(v["step"], i);
            let es = v["env_steps"].as_u64().unwrap() as usize;
            assert!(es > last_env_steps);
            last_env_steps = es;
            assert!(v["max_kl_at_exit"].as_f64().unwrap() <= 0.2 + 1e-9);
            assert!(v["beta"].is_number());
        }
        assert_eq!(outcome.summary.steps_completed, 3);
        assert!(out.join(SUMMARY_FILE).exists());
    }
}

#[test]
fn zero_steps_gives_empty_metrics_and_valid_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(EnvId::PointMass2d, dir.path());
    cfg.improvement_steps = 0;
    run(&cfg).unwrap();
    assert_eq!(fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap(), "");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary["steps_completed"], 0);
    assert!(summary["final_avg_return"].is_null());
}

#[test]
fn ppo_clip_records_null_beta() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(EnvId::PointMass2d, dir.path());
    cfg.algorithm = Algorithm::PpoClip;
    let o = run(&cfg).unwrap();
    assert!(o.records.iter().all(|r| r.beta.is_none() && r.fixup_grad_steps == 0));
    assert!(!o.summary.trust_region_enforced);
}

#[test]
fn enforcing_modes_hold_the_trust_region_in_both_directions() {
    let dir = tempfile::tempdir().unwrap();
    for (i, (mode, dir_kl)) in [
        (Ablation::None, KlDirection::OldNew),
        (Ablation::FixupLastEpochOnly, KlDirection::NewOld),
        (Ablation::ConstantBeta, KlDirection::NewOld),
    ]
    .into_iter()
    .enumerate()
    {
        let mut cfg = small(EnvId::ChainWalk, &dir.path().join(i.to_string()));
        cfg.trust_region.ablation = mode;
        cfg.trust_region.kl_direction = dir_kl;
        cfg.trust_region.eps_kl = 0.02;
        cfg.trust_region.lr_theta = 3e-3;
        let o = run(&cfg).unwrap();
        assert!(o.records.iter().all(|r| r.max_kl_at_exit <= 0.02 + 1e-9), "{mode:?}");
    }
}

#[test]
fn fixup_cap_aborts_with_code_two_and_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(EnvId::PointMass2d, dir.path());
    cfg.trust_region.eps_kl = 1e-6;
    cfg.trust_region.lr_theta = 0.05;
    cfg.trust_region.fixup_pass_cap = 1;
    let err = run(&cfg).unwrap_err();
    assert!(matches!(err, RunError::Abort { .. }), "{err}");
    assert_eq!(err.exit_code(), 2);
    let diag: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join(DIAGNOSTICS_FILE)).unwrap()).unwrap();
    assert_eq!(diag["fixup_cap"]["passes"], 1);
    assert!(diag["fixup_cap"]["max_kl"].as_f64().unwrap() > 1e-6);
}

fn fixpo(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fixpo"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

#[test]
fn binary_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bad");
    let bad = fixpo(&[
        "train",
        "--out",
        out.to_str().unwrap(),
        "--override",
        "trust_region.eps_kl=-1",
        "--override",
        "batch_timesteps=0",
    ]);
    assert_eq!(bad.status.code(), Some(1));
    let err = String::from_utf8_lossy(&bad.stderr);
    assert!(err.contains("trust_region.eps_kl") && err.contains("batch_timesteps"), "{err}");

    let cfg_path = dir.path().join("cap.json");
    fs::write(
        &cfg_path,
        r#"{"schema_version": 1, "batch_timesteps": 200, "improvement_steps": 2,
            "network": {"hidden": [8]},
            "trust_region": {"eps_kl": 1e-6, "lr_theta": 0.05, "fixup_pass_cap": 1}}"#,
    )
    .unwrap();
    let cap_out = dir.path().join("cap");
    let cap = fixpo(&["train", "--config", cfg_path.to_str().unwrap(), "--out", cap_out.to_str().unwrap()]);
    assert_eq!(cap.status.code(), Some(2));
    assert!(cap_out.join(DIAGNOSTICS_FILE).exists());

    let schema = dir.path().join("schema.json");
    fs::write(&schema, r#"{"schema_version": 1, "trust_region": {"epsilon": 0.1}}"#).unwrap();
    let s = fixpo(&["train", "--config", schema.to_str().unwrap()]);
    assert_eq!(s.status.code(), Some(1));
}

#[test]
fn binary_replays_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let files: Vec<Vec<u8>> = ["a", "b"]
        .iter()
        .map(|tag| {
            let out = dir.path().join(tag);
            let o = fixpo(&[
                "train",
                "--seed",
                "9",
                "--out",
                out.to_str().unwrap(),
                "--override",
                "env=chain_walk",
                "--override",
                "batch_timesteps=150",
                "--override",
                "improvement_steps=2",
                "--override",
                "record_wall_time=false",
                "--override",
                "network.hidden=[8]",
            ]);
            assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
            fs::read(out.join(METRICS_FILE)).unwrap()
        })
        .collect();
    assert!(!files[0].is_empty());
    assert_eq!(files[0], files[1]);
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

fn col(header: &[String], name: &str) -> usize {
    header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn sweep_runs_product_and_aggregates() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SweepSpec {
        base: small(EnvId::PointMass2d, dir.path()),
        axes: vec![GridAxis::parse("trust_region.c_beta=1,3").unwrap()],
        seeds: vec![0, 1],
        out_dir: dir.path().to_path_buf(),
        jobs: 2,
        skip_steps: 0,
    };
    let result = sweep(&spec).unwrap();
    assert_eq!(result.runs.len(), 4);
    assert!(result.runs.iter().all(|r| r.result.is_ok()));
    let (header, rows) = read_csv(&result.aggregate_csv);
    assert_eq!(rows.len(), 2);
    for f in FIELDS {
        col(&header, &format!("{f}_mean"));
        col(&header, &format!("{f}_stderr"));
    }
    assert_eq!(rows[0][col(&header, "series")], "c_beta=1");
    assert_eq!(rows[1][col(&header, "trust_region.c_beta")], "3");
    assert!(fs::read_to_string(dir.path().join("aggregate.csv")).unwrap().ends_with('\n'));
}

#[test]
fn single_cell_single_seed_aggregate_equals_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SweepSpec {
        base: small(EnvId::ChainWalk, dir.path()),
        axes: vec![GridAxis::parse("trust_region.c_beta=3").unwrap()],
        seeds: vec![4],
        out_dir: dir.path().to_path_buf(),
        jobs: 1,
        skip_steps: 0,
    };
    let result = sweep(&spec).unwrap();
    let records = &result.runs[0].result.as_ref().unwrap().1;
    let (header, rows) = read_csv(&result.aggregate_csv);
    for f in ["avg_return", "max_kl_at_exit", "fixup_grad_steps"] {
        let want = records.iter().map(|r| r.field(f).unwrap()).sum::<f64>() / records.len() as f64;
        let got: f64 = rows[0][col(&header, &format!("{f}_mean"))].parse().unwrap();
        assert!((got - want).abs() < 1e-12, "{f}");
        assert_eq!(rows[0][col(&header, &format!("{f}_stderr"))], "0");
    }
}

#[test]
fn ablation_grid_yields_five_series_and_marks_failures() {
    let dir = tempfile::tempdir().unwrap();
    let mut base = small(EnvId::ChainWalk, dir.path());
    base.improvement_steps = 1;
    let spec = SweepSpec {
        base,
        axes: vec![GridAxis::parse(
            "trust_region.ablation=none,no_fixup,mean_kl,fixup_last_epoch_only,constant_beta",
        )
        .unwrap()],
        seeds: vec![0],
        out_dir: dir.path().to_path_buf(),
        jobs: 1,
        skip_steps: 0,
    };
    let (header, rows) = read_csv(&sweep(&spec).unwrap().aggregate_csv);
    let series: Vec<&str> = rows.iter().map(|r| r[col(&header, "series")].as_str()).collect();
    assert_eq!(
        series,
        [
            "ablation=none",
            "ablation=no_fixup",
            "ablation=mean_kl",
            "ablation=fixup_last_epoch_only",
            "ablation=constant_beta"
        ]
    );

    // A cell whose only run aborts is reported as missing.
    let mut base = small(EnvId::PointMass2d, &dir.path().join("cap"));
    base.trust_region.lr_theta = 0.05;
    base.trust_region.fixup_pass_cap = 1;
    let spec = SweepSpec {
        base,
        axes: vec![GridAxis::parse("trust_region.eps_kl=1e-6,0.2").unwrap()],
        seeds: vec![0],
        out_dir: dir.path().join("cap"),
        jobs: 1,
        skip_steps: 0,
    };
    let result = sweep(&spec).unwrap();
    let (header, rows) = read_csv(&result.aggregate_csv);
    assert_eq!(rows[0][col(&header, "missing")], "true");
    assert_eq!(rows[0][col(&header, "failed")], "1");
    assert_eq!(rows[0][col(&header, "avg_return_mean")], "");
    assert_eq!(rows[1][col(&header, "missing")], "false");
}

fn record(step: usize, env_steps: usize, avg_return: f64) -> MetricsRecord {
    MetricsRecord {
        step,
        env_steps,
        avg_return,
        mean_kl: 0.0,
        max_kl_at_exit: 0.0,
        beta: Some(1.0),
        primary_grad_steps: 10,
        fixup_grad_steps: 0,
        fixup_passes: 1,
        entropy: 0.5,
        loss_pi: 0.0,
        loss_vf: 0.0,
        loss_kl: 0.0,
        wall_ms: 0,
    }
}

fn write_metrics(path: &Path, recs: &[MetricsRecord]) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    let text: String = recs.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    fs::write(path, text).unwrap();
}

#[test]
fn export_matches_spreadsheet_values() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("s/seed_0/metrics.jsonl");
    let b = dir.path().join("s/seed_1/metrics.jsonl");
    write_metrics(&a, &[record(0, 100, 1.0), record(1, 200, 3.0), record(2, 300, 2.0)]);
    write_metrics(&b, &[record(0, 110, 3.0), record(1, 190, 5.0), record(2, 310, 6.0)]);
    let inputs: Vec<Input> = [&a, &b].iter().map(|p| Input::parse(p.to_str().unwrap())).collect();

    // Window 1: raw means; stderr = |a−b|/2 for two seeds.
    let raw = curves(&inputs, XAxis::EnvSteps, "avg_return", 1).unwrap();
    let got: Vec<(f64, f64, f64)> = raw.iter().map(|p| (p.x, p.mean, p.stderr)).collect();
    assert_eq!(got, vec![(105.0, 2.0, 1.0), (195.0, 4.0, 1.0), (305.0, 4.0, 2.0)]);
    assert!(raw.iter().all(|p| p.series == "s"));

    // Window 3 (α = 0.5): seed a → 1, 2, 2; seed b → 3, 4, 5.
    let smooth = curves(&inputs, XAxis::EnvSteps, "avg_return", 3).unwrap();
    let got: Vec<(f64, f64)> = smooth.iter().map(|p| (p.mean, p.stderr)).collect();
    assert_eq!(got, vec![(2.0, 1.0), (3.0, 1.0), (3.5, 1.5)]);

    // Constant metric across seeds: zero stderr.
    let flat = curves(&inputs, XAxis::WallMs, "entropy", 2).unwrap();
    assert!(flat.iter().all(|p| p.stderr == 0.0 && p.mean == 0.5));
}

#[test]
fn export_names_the_mismatched_file() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.jsonl");
    let bad = dir.path().join("bad.jsonl");
    write_metrics(&good, &[record(0, 1, 0.0)]);
    fs::write(&bad, "{\"step\": 0, \"reward\": 1.0}\n").unwrap();
    let inputs = vec![
        Input::parse(&format!("a={}", good.display())),
        Input::parse(&format!("b={}", bad.display())),
    ];
    let err = curves(&inputs, XAxis::EnvSteps, "avg_return", 1).unwrap_err();
    assert!(err.contains("bad.jsonl"), "{err}");
    assert!(read_metrics(&good).is_ok());

    let out = dir.path().join("curves.csv");
    let o = fixpo(&["export", good.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let (header, rows) = read_csv(&out);
    assert_eq!(header, ["x", "series", "mean", "stderr"]);
    assert_eq!(rows.len(), 1);
}

fn run_config() -> impl Strategy<Value = RunConfig> {
    (
        prop_oneof![Just(Algorithm::Fixpo), Just(Algorithm::PpoClip)],
        prop_oneof![Just(EnvId::PointMass2d), Just(EnvId::ChainWalk)],
        prop::sample::select(Ablation::ALL.to_vec()),
        0.01..2.0f64,
        1.0..6.0f64,
        1usize..10_000,
        any::<u64>(),
        prop::collection::vec(1usize..128, 0..3),
        any::<bool>(),
    )
        .prop_map(|(algorithm, env, ablation, eps, c, batch, seed, hidden, wall)| {
            let mut cfg = RunConfig {
                algorithm,
                env,
                batch_timesteps: batch,
                seed,
                record_wall_time: wall,
                network: NetworkConfig {
                    hidden,
                    share_trunk: wall,
                },
                ..RunConfig::default()
            };
            cfg.trust_region.ablation = ablation;
            cfg.trust_region.eps_kl = eps;
            cfg.trust_region.c_beta = c;
            cfg
        })
}

proptest! {
    #[test]
    fn config_round_trips(cfg in run_config()) {
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}
