use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn qrelax(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrelax"))
        .env("QRELAX_OUT", out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn trajectory_from_scenario_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let o = qrelax(
        dir.path(),
        &["trajectory", "--scenario", "fn3-eps1", "--start", "-1.5,1.5", "--periods", "25", "--svg"],
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("traj_-1.5_1.5_25T.csv")).unwrap();
    assert!(csv.starts_with("# tool: qrelax"));
    assert!(csv.contains("# spec_sha256: "));
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2501);
    assert!(dir.path().join("traj_-1.5_1.5_25T.svg").exists());
    assert!(stdout(&o).contains("verdict: "));
}

#[test]
fn ground_state_does_not_move() {
    let dir = tempfile::tempdir().unwrap();
    let o = qrelax(dir.path(), &["trajectory", "--epsilon", "0", "--start", "1.5,1.5", "--periods", "100"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("verdict: Confined"), "{s}");
    assert!(s.contains("width 0, height 0"), "{s}");
}

#[test]
fn checkpoint_series_and_verification() {
    let dir = tempfile::tempdir().unwrap();
    let o = qrelax(
        dir.path(),
        &[
            "trajectory",
            "--scenario",
            "fn3-eps1",
            "--start",
            "-0.5,0",
            "--periods",
            "25",
            "--checkpoints",
            "--verify",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    assert!(s.contains("periods") && s.contains("width") && s.contains("height"));
    assert!(s.contains("convergence: ok"), "{s}");
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["ensemble", "--epsilon", "1", "--n", "0"][..],
        &["trajectory", "--epsilon", "1", "--start", "1", "--periods", "1"],
        &["trajectory", "--epsilon", "1", "--start", "0,1"],
        &["sweep", "--scenario", "no-such-scenario"],
        &["sweep"],
        &["frobnicate"],
        &["trajectory", "--epsilon", "1", "--phases", "fn9", "--start", "0,1", "--periods", "1"],
    ] {
        let o = qrelax(dir.path(), args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
    }
    assert_eq!(qrelax(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn integration_failure_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = qrelax(dir.path(), &["trajectory", "--epsilon", "1", "--start", "9,0", "--periods", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn sweep_list_and_expectations() {
    let dir = tempfile::tempdir().unwrap();
    let o = qrelax(dir.path(), &["sweep", "--list"]);
    let s = stdout(&o);
    for name in ["fn3-eps1", "fn4-eps0.1@500", "fn7-cohorts", "eps0"] {
        assert!(s.lines().any(|l| l.starts_with(&format!("{name} "))), "{name}");
    }

    let o = qrelax(dir.path(), &["sweep", "--scenario", "eps0", "--expect", "--workers", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(dir.path().join("eps0/summary.json").exists());
    assert!(stdout(&o).contains("PASS confinement labels"));

    // the ground state cannot wander, so this expectation must fail
    let file = dir.path().join("wrong.toml");
    fs::write(
        &file,
        "name = \"wrong\"\nmodes = [[0, 0]]\nepsilons = [1]\nthetas = [0]\nstarts = [[1, 0]]\nhorizon_periods = 2\n\n[expected]\nunconfined = [1]\n",
    )
    .unwrap();
    let o = qrelax(dir.path(), &["sweep", "--scenario", file.to_str().unwrap(), "--expect"]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    let o = qrelax(dir.path(), &["sweep", "--scenario", file.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn ensemble_outputs_and_relaxation() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "ensemble",
        "--scenario",
        "fn3-eps1",
        "--kind",
        "disk:1",
        "--n",
        "2000",
        "--seed",
        "7",
        "--periods",
        "5",
        "--plot",
    ];
    let o = qrelax(dir.path(), &args);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let run = fs::read_dir(dir.path()).unwrap().next().unwrap().unwrap().path();
    let h = fs::read_to_string(run.join("hbar.csv")).unwrap();
    let rows: Vec<f64> = h
        .lines()
        .skip_while(|l| l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rows.len(), 6);
    assert!(rows[5] < rows[0], "{rows:?}");
    assert!(h.contains("# seed: 7"));
    for f in ["snap_000.csv", "snap_005.csv", "density_000.svg", "density_005.svg", "born.svg"] {
        assert!(run.join(f).exists(), "{f}");
    }

    let again = tempfile::tempdir().unwrap();
    qrelax(again.path(), &args);
    let run2 = again.path().join(run.file_name().unwrap());
    for f in ["hbar.csv", "snap_005.csv", "density_005.svg"] {
        assert_eq!(fs::read(run.join(f)).unwrap(), fs::read(run2.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn svg_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["trajectory", "--scenario", "fn4-eps0.1", "--start", "1.5,1.5", "--periods", "10", "--svg"];
    qrelax(a.path(), &args);
    qrelax(b.path(), &args);
    for f in ["traj_1.5_1.5_10T.svg", "traj_1.5_1.5_10T.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
}
