use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
[detect]
mc_trials = 2000

[learn_power]
samples_per_slot = 500
snr_db = -6.0
train_frames = 80
test_frames = 100
trials = 2
restarts = 3
boundary_steps = 10

[learn_mod]
train_per_pattern = 30
test_per_pattern = 10
n_sweeps = 60
burn_in = 20
trials = 2
concentration_sensitivity = [1.0]

[predict]
channels = 6
budget = 2
vacancy_grid = [0.3, 0.7]
horizon = 200
warmup = 20
trials = 2
"#;

fn cogniscope(args: &[&str], seed_env: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cogniscope"));
    cmd.args(args).env_remove("COGNISCOPE_SEED");
    if let Some(s) = seed_env {
        cmd.env("COGNISCOPE_SEED", s);
    }
    cmd.output().expect("binary runs")
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    fs::write(&p, text).unwrap();
    p
}

fn run_ok(args: &[&str]) {
    let out = cogniscope(args, None);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn every_pipeline_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let cfg = cfg.to_str().unwrap();
    let verbs: [&[&str]; 8] = [
        &["fig3-detect-curve"],
        &["fig4-power-clustering"],
        &["fig5-modulation-dpgmm"],
        &["fig6-occupancy-prediction"],
        &["detect-curve", "--fix-pfa", "0.05"],
        &["learn-power", "train"],
        &["learn-mod", "fit"],
        &["predict", "run"],
    ];
    for verb in verbs {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let out = tmp.path().join(format!("{}-{run}", verb.join("-")));
            let mut args = verb.to_vec();
            args.extend(["--config", cfg, "--seed", "7", "--out", out.to_str().unwrap()]);
            run_ok(&args);
            outputs.push(files(&out));
        }
        assert!(outputs[0].keys().any(|k| k.ends_with(".csv")), "{verb:?} wrote no CSV");
        assert_eq!(outputs[0], outputs[1], "{verb:?}");
    }
}

#[test]
fn seed_changes_output_and_env_sets_it() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let dir = |n: &str| tmp.path().join(n);
    let run = |out: &str, seed: Option<&str>, env: Option<&str>| {
        let out_dir = dir(out);
        let mut args = vec!["fig4-power-clustering", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()];
        if let Some(s) = seed {
            args.extend(["--seed", s]);
        }
        assert!(cogniscope(&args, env).status.success());
        fs::read(out_dir.join("power_trials.csv")).unwrap()
    };
    let a = run("a", Some("1"), None);
    let b = run("b", Some("2"), None);
    let c = run("c", None, Some("1"));
    assert_ne!(a, b);
    assert_eq!(a, c);
}

#[test]
fn module_verbs_chain_through_files() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let cfg = cfg.to_str().unwrap();
    let fit = tmp.path().join("fit");
    run_ok(&["learn-mod", "fit", "--config", cfg, "--out", fit.to_str().unwrap()]);
    let model = fit.join("model.json");
    let vectors = fit.join("cumulants.csv");
    assert!(model.exists() && vectors.exists());
    let cls = tmp.path().join("cls");
    run_ok(&["learn-mod", "classify", "--model", model.to_str().unwrap(), "--input", vectors.to_str().unwrap(), "--out", cls.to_str().unwrap()]);
    let rows = fs::read_to_string(cls.join("classifications.csv")).unwrap();
    assert_eq!(rows.lines().count(), fs::read_to_string(&vectors).unwrap().lines().count());
    let upd = tmp.path().join("upd");
    run_ok(&["learn-mod", "update", "--config", cfg, "--model", model.to_str().unwrap(), "--input", vectors.to_str().unwrap(), "--out", upd.to_str().unwrap()]);
    assert!(upd.join("model.json").exists());

    let lp = tmp.path().join("lp");
    run_ok(&["learn-power", "cluster", "--config", cfg, "--out", lp.to_str().unwrap()]);
    let energy = lp.join("energy.csv");
    let lp2 = tmp.path().join("lp2");
    run_ok(&["learn-power", "cluster", "--input", energy.to_str().unwrap(), "--out", lp2.to_str().unwrap()]);
    assert_eq!(
        fs::read_to_string(lp.join("clusters.csv")).unwrap().lines().count(),
        fs::read_to_string(lp2.join("clusters.csv")).unwrap().lines().count()
    );

    let hist = tmp.path().join("history.csv");
    fs::write(&hist, "channel,slot,sensed_state\n0,0,VACANT\n0,1,VACANT\n1,0,OCCUPIED\n1,1,OCCUPIED\n").unwrap();
    let fc = tmp.path().join("fc");
    run_ok(&["predict", "forecast", "--history", hist.to_str().unwrap(), "--out", fc.to_str().unwrap()]);
    let text = fs::read_to_string(fc.join("forecast.csv")).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("0,"), "{text}");
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(cogniscope(&[], None).status.code(), Some(2));
    assert_eq!(cogniscope(&["no-such-verb"], None).status.code(), Some(2));
    assert_eq!(cogniscope(&["--help"], None).status.code(), Some(0));

    let bad = write_config(tmp.path(), "[learn_power]\nnoise_variance = -1.0\n");
    let out = cogniscope(&["run", "--config", bad.to_str().unwrap(), "--out", tmp.path().join("x").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learn_power.noise_variance"));

    let missing = tmp.path().join("absent.csv");
    let out = cogniscope(&["learn-power", "cluster", "--input", missing.to_str().unwrap(), "--out", tmp.path().join("y").to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_keys_warn_in_bundle_log() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("experiment = \"fig3-detect-curve\"\nflavour = 1\n{SMALL}"));
    let out_dir = tmp.path().join("out");
    let out = cogniscope(&["run", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()], None);
    assert!(out.status.success());
    let log = fs::read_to_string(out_dir.join("run.log")).unwrap();
    assert!(log.contains("flavour"), "{log}");
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 0);
    assert_eq!(summary["config_hash"].as_str().unwrap().len(), 64);
    assert!(summary["files"]["detect_curve.csv"].is_string());
}
