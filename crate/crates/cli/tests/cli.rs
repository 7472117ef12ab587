use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"{
  "grid": {"height": 28, "width": 28},
  "model": {"hidden_channels": 4},
  "shift_range": 1,
  "optimizer": {"epochs": 1, "sequences_per_epoch": 3, "lr": 0.001},
  "dataset": {"test_sequences": 2}
}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stable-align"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    data: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let config = root.join("cfg.json");
    fs::write(&config, SMALL).unwrap();
    let data = root.join("data");
    let out = run(&["synth", "-c", s(&config), "-o", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    Fixture {
        _dir: dir,
        root,
        config,
        data,
    }
}

#[test]
fn synth_writes_manifest_and_is_reproducible() {
    let fx = fixture();
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(fx.data.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["sequences"].as_array().unwrap().len(), 5);
    let again = fx.root.join("again");
    assert!(run(&["synth", "-c", s(&fx.config), "-o", s(&again)]).status.success());
    for entry in fs::read_dir(&fx.data).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(fx.data.join(&name)).unwrap(), fs::read(again.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn validation_errors_exit_2_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"degradation": {"noise_sigma": -0.5}}"#).unwrap();
    let out = run(&["synth", "-c", s(&bad), "-o", s(&dir.path().join("d"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("noise_sigma"));
    assert!(out.stdout.is_empty());

    fs::write(&bad, r#"{"thetaa": 1}"#).unwrap();
    assert_eq!(run(&["synth", "-c", s(&bad), "-o", s(&dir.path().join("d"))]).status.code(), Some(2));
    assert_eq!(run(&["sweep", "bogus"]).status.code(), Some(2));
    assert_eq!(run(&["synth", "--loss", "huber", "-o", "x"]).status.code(), Some(2));
}

#[test]
fn finetune_eval_round_trip() {
    let fx = fixture();
    let identity = fx.root.join("identity.clm");
    let out = run(&["finetune", "-c", s(&fx.config), "-d", s(&fx.data), "-o", s(&identity), "--epochs", "0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());

    let baseline = run(&["eval", "-c", s(&fx.config), "-d", s(&fx.data), "--baseline"]);
    assert!(baseline.status.success());
    let ident = run(&["eval", "-c", s(&fx.config), "-d", s(&fx.data), "-m", s(&identity)]);
    assert_eq!(baseline.stdout, ident.stdout);
    let report: serde_json::Value = serde_json::from_slice(&baseline.stdout).unwrap();
    assert!(report["mcv"].as_f64().unwrap() > 0.0);

    let jitter = fx.root.join("jitter.clm");
    let l2 = fx.root.join("l2.clm");
    for (path, loss) in [(&jitter, "jitter"), (&l2, "l2")] {
        let out = run(&["finetune", "-c", s(&fx.config), "-d", s(&fx.data), "-o", s(path), "--loss", loss]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let last: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
        assert!(last.is_finite());
    }
    assert_ne!(fs::read(&jitter).unwrap(), fs::read(&l2).unwrap());
    assert_ne!(fs::read(&jitter).unwrap(), fs::read(&identity).unwrap());
    let history = fs::read_to_string(fx.root.join("jitter.clm.history.csv")).unwrap();
    assert!(history.starts_with("epoch,loss,decode_fallbacks\n"));
    assert_eq!(history.lines().count(), 2);

    let metrics = fx.root.join("metrics");
    let out = run(&["eval", "-c", s(&fx.config), "-d", s(&fx.data), "-m", s(&jitter), "-o", s(&metrics)]);
    assert!(out.status.success());
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(metrics.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json, serde_json::from_slice::<serde_json::Value>(&out.stdout).unwrap());
    assert_eq!(fs::read_to_string(metrics.join("metrics.csv")).unwrap().lines().count(), 2);
}

#[test]
fn eval_input_errors_exit_2() {
    let fx = fixture();
    let missing = run(&["eval", "-c", s(&fx.config), "-d", s(&fx.data), "-m", s(&fx.root.join("nope.clm"))]);
    assert_eq!(missing.status.code(), Some(2));

    // A model built for a different landmark count.
    let other_cfg = fx.root.join("other.json");
    fs::write(&other_cfg, SMALL.replacen('{', r#"{"landmarks": 4,"#, 1)).unwrap();
    let other_data = fx.root.join("other");
    assert!(run(&["synth", "-c", s(&other_cfg), "-o", s(&other_data)]).status.success());
    let model = fx.root.join("k4.clm");
    let out = run(&["finetune", "-c", s(&other_cfg), "-d", s(&other_data), "-o", s(&model), "--epochs", "0"]);
    assert!(out.status.success());
    let mismatch = run(&["eval", "-c", s(&fx.config), "-d", s(&fx.data), "-m", s(&model)]);
    assert_eq!(mismatch.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&mismatch.stderr).contains("mismatch"));
}

#[test]
fn numerical_failure_exits_3() {
    let fx = fixture();
    let out = run(&[
        "finetune",
        "-c",
        s(&fx.config),
        "-d",
        s(&fx.data),
        "-o",
        s(&fx.root.join("m.clm")),
        "--lr",
        "1e308",
        "--epochs",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn surface_sweep_streams_csv() {
    let out = run(&["sweep", "surface", "--theta", "0.5"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("e_t,e_prev,pixel_term,modulated_term,total\n"));
    assert_eq!(text.lines().count(), 1 + 64 * 64);
}

#[test]
fn pdc_sweep_emits_default_grid() {
    let fx = fixture();
    let csv = fx.root.join("pdc.csv");
    let out = run(&["sweep", "theta-pdc", "-c", s(&fx.config), "--epochs", "0", "-o", s(&csv)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(csv).unwrap();
    let grid: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(grid, ["0.0", "0.1", "0.2", "0.4", "0.6"]);
}

#[test]
fn help_lists_every_flag() {
    let out = run(&["sweep", "--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for flag in [
        "--config", "--out", "--loss", "--decoder", "--theta ", "--theta-pdc", "--lambda", "--xi", "--lr", "--epochs", "--seed",
    ] {
        assert!(text.contains(flag), "{flag}");
    }
    assert!(text.contains("[default: 0.0001]") && text.contains("[default: 0.2]"));
    let eval = String::from_utf8(run(&["eval", "--help"]).stdout).unwrap();
    assert!(eval.contains("--baseline"));
}
