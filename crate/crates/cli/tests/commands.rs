use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn entbank(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_entbank"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn demo(dir: &Path) {
    let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("demo");
    for name in ["boy_and_dog.json", "run.json"] {
        fs::copy(src.join(name), dir.join(name)).unwrap();
    }
}

#[test]
fn validate_script_reports_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    demo(dir.path());
    assert!(
        entbank(&["validate-script", "boy_and_dog.json"], dir.path())
            .status
            .success()
    );
    let bad = fs::read_to_string(dir.path().join("boy_and_dog.json"))
        .unwrap()
        .replace("\"shot_num\": 2", "\"shot_num\": 5");
    fs::write(dir.path().join("bad.json"), bad).unwrap();
    let out = entbank(&["validate-script", "bad.json"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("shot 5"));
}

#[test]
fn stepwise_run_matches_full_run() {
    let dir = tempfile::tempdir().unwrap();
    demo(dir.path());
    let ok = |args: &[&str]| {
        let out = entbank(args, dir.path());
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    ok(&["run", "--config", "run.json", "--out", "full"]);
    ok(&["init-bank", "--config", "run.json", "--out", "steps"]);
    for shot in ["1", "2", "3"] {
        ok(&[
            "step", "--config", "run.json", "--shot", shot, "--out", "steps",
        ]);
    }
    for rel in [
        "bank_initial.emvb",
        "bank/after_shot_003.emvb",
        "shots/shot_002/latent.emvt",
        "shots/shot_003/decisions.csv",
    ] {
        assert_eq!(
            fs::read(dir.path().join("full").join(rel)).unwrap(),
            fs::read(dir.path().join("steps").join(rel)).unwrap(),
            "{rel}"
        );
    }
    ok(&["metrics", "--run-dir", "steps"]);
    assert_eq!(
        fs::read(dir.path().join("full/reports/metrics.txt")).unwrap(),
        fs::read(dir.path().join("steps/reports/metrics.txt")).unwrap()
    );
    ok(&["report", "--run-dir", "steps"]);
    assert_eq!(
        fs::read(dir.path().join("full/reports/cost_summary.csv")).unwrap(),
        fs::read(dir.path().join("steps/reports/cost_summary.csv")).unwrap()
    );
}

#[test]
fn step_without_previous_bank_fails_and_run_refuses_to_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    demo(dir.path());
    let out = entbank(
        &["step", "--config", "run.json", "--shot", "2", "--out", "r"],
        dir.path(),
    );
    assert!(!out.status.success());
    assert!(entbank(
        &[
            "run",
            "--config",
            "run.json",
            "--out",
            "r",
            "--update-every",
            "0"
        ],
        dir.path()
    )
    .status
    .success());
    assert!(
        !entbank(&["run", "--config", "run.json", "--out", "r"], dir.path())
            .status
            .success()
    );
    assert!(entbank(
        &["run", "--config", "run.json", "--out", "r", "--force"],
        dir.path()
    )
    .status
    .success());
}
