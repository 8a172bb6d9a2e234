//! End-to-end checks of the `pathtomo` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pathtomo"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn gen_ruler_prints_positions() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["geometry", "gen-ruler", "--d", "5", "--lmin", "1"], dir.path());
    assert!(out.status.success());
    assert!(stdout(&out).contains("[0, 11, 24, 34, 41]"), "{}", stdout(&out));

    let out = run(&["geometry", "gen-ruler", "--d", "4"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn validate_exit_codes_and_collision_listing() {
    let dir = tempfile::tempdir().unwrap();
    let eight = pathtomo::PathGeometry::grid_2x4(0.3);
    fs::write(dir.path().join("eight.json"), eight.to_json()).unwrap();
    let grid = pathtomo::PathGeometry::grid_2x3(0.34);
    fs::write(dir.path().join("grid.json"), grid.to_json()).unwrap();

    let out = run(&["geometry", "validate", "eight.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let text = stdout(&out);
    assert!(text.contains("FAIL"), "{text}");
    assert!(text.contains("same line"), "{text}");

    let out = run(&["geometry", "validate", "grid.json"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("PASS"));

    let out = run(&["geometry", "validate", "missing.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn plan_lists_eight_angles_and_fifteen_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let grid = pathtomo::PathGeometry::grid_2x3(0.34);
    fs::write(dir.path().join("grid.json"), grid.to_json()).unwrap();
    let out = run(&["geometry", "plan", "grid.json"], dir.path());
    assert!(out.status.success());
    assert!(stdout(&out).contains("8 angles, 15 pair entries"), "{}", stdout(&out));
}

#[test]
fn report_prints_resources() {
    let dir = tempfile::tempdir().unwrap();
    let grid = pathtomo::PathGeometry::grid_2x3(0.34);
    fs::write(dir.path().join("grid.json"), grid.to_json()).unwrap();
    let out = run(&["geometry", "report", "grid.json"], dir.path());
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("eta: 8 (bound 15)"), "{text}");
    assert!(text.contains("Nyquist"), "{text}");
}

#[test]
fn file_based_prepare_simulate_reconstruct_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run(&["prepare", "--out", "prep"], dir.path()).status.success());
    assert!(dir.path().join("prep/state.json").exists());

    let out = run(
        &[
            "simulate",
            "--state",
            "prep/state.json",
            "--geometry",
            "prep/geometry.json",
            "--out",
            "frames",
            "--seed",
            "3",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("frames/direct.pgm").exists());
    assert!(dir.path().join("frames/oft_07.pgm").exists());

    let out = run(
        &[
            "reconstruct",
            "--frames",
            "frames",
            "--geometry",
            "prep/geometry.json",
            "--out",
            "result.json",
            "--csv",
            "readings.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = run(
        &[
            "evaluate",
            "--result",
            "result.json",
            "--truth",
            "prep/state.json",
            "--out",
            "eval.json",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let fidelity: f64 = text
        .lines()
        .find(|l| l.starts_with("fidelity:"))
        .and_then(|l| l.split(':').nth(1))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(fidelity >= 0.999, "fidelity {fidelity}");
    let readings = fs::read_to_string(dir.path().join("readings.csv")).unwrap();
    assert_eq!(readings.lines().count(), 16); // header + 15 pairs
}

#[test]
fn pipeline_is_deterministic_and_accurate() {
    let dir = tempfile::tempdir().unwrap();
    for out_dir in ["run1", "run2"] {
        let out = run(
            &["pipeline", "--seed", "11", "--out", out_dir],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let text = stdout(&out);
        let fidelity: f64 = text
            .lines()
            .find(|l| l.starts_with("fidelity:"))
            .and_then(|l| l.split(':').nth(1))
            .unwrap()
            .trim()
            .parse()
            .unwrap();
        assert!(fidelity >= 0.999, "fidelity {fidelity}");
    }
    for file in ["result.json", "summary.csv", "frames/oft_00.pgm", "frames/direct.pgm"] {
        let a = fs::read(dir.path().join("run1").join(file)).unwrap();
        let b = fs::read(dir.path().join("run2").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
}

#[test]
fn pipeline_maximally_mixed_reports_low_purity() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["pipeline", "--state", "maximally-mixed", "--out", "run"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let purity: f64 = text
        .lines()
        .find(|l| l.starts_with("purity (reconstructed):"))
        .and_then(|l| l.split(':').nth(1))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((purity - 1.0 / 6.0).abs() < 0.01, "purity {purity}");
}

#[test]
fn pipeline_with_noise_stays_in_band() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &["pipeline", "--noise", "poisson:1e4", "--seed", "5", "--out", "run"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    let fidelity: f64 = text
        .lines()
        .find(|l| l.starts_with("fidelity:"))
        .and_then(|l| l.split(':').nth(1))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!((0.97..=1.0).contains(&fidelity), "fidelity {fidelity}");
}

#[test]
fn pipeline_with_offset_calibrates() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "pipeline",
            "--origin-offset",
            "12",
            "--seed",
            "2",
            "--out",
            "run",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("run/calibration.json").exists());
    let text = stdout(&out);
    let fidelity: f64 = text
        .lines()
        .find(|l| l.starts_with("fidelity:"))
        .and_then(|l| l.split(':').nth(1))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(fidelity >= 0.999, "fidelity {fidelity}");
}

#[test]
fn standalone_calibrate_command_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    // Reference A: the default preparation; reference B: zeta at 30.
    assert!(run(&["prepare", "--out", "ref_a"], dir.path()).status.success());
    fs::write(
        dir.path().join("prep_b.json"),
        r#"{"zeta_deg": 30.0}"#,
    )
    .unwrap();
    assert!(run(
        &["prepare", "--settings", "prep_b.json", "--out", "ref_b"],
        dir.path()
    )
    .status
    .success());

    for (state, frames, seed) in
        [("ref_a", "frames_a", "21"), ("ref_b", "frames_b", "22")]
    {
        assert!(run(
            &[
                "simulate",
                "--state",
                &format!("{state}/state.json"),
                "--geometry",
                "ref_a/geometry.json",
                "--origin-offset",
                "8",
                "--seed",
                seed,
                "--out",
                frames,
            ],
            dir.path()
        )
        .status
        .success());
    }
    let out = run(
        &[
            "calibrate",
            "--ref1-state",
            "ref_a/state.json",
            "--ref1-frames",
            "frames_a",
            "--ref2-state",
            "ref_b/state.json",
            "--ref2-frames",
            "frames_b",
            "--geometry",
            "ref_a/geometry.json",
            "--out",
            "cal.json",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // A fresh state simulated with the same hidden offset reconstructs
    // cleanly once the calibration file is supplied.
    assert!(run(
        &[
            "simulate",
            "--state",
            "ref_b/state.json",
            "--geometry",
            "ref_a/geometry.json",
            "--origin-offset",
            "8",
            "--seed",
            "30",
            "--out",
            "frames_test",
        ],
        dir.path()
    )
    .status
    .success());
    assert!(run(
        &[
            "reconstruct",
            "--frames",
            "frames_test",
            "--geometry",
            "ref_a/geometry.json",
            "--cal",
            "cal.json",
            "--out",
            "result.json",
        ],
        dir.path()
    )
    .status
    .success());
    let out = run(
        &[
            "evaluate",
            "--result",
            "result.json",
            "--truth",
            "ref_b/state.json",
        ],
        dir.path(),
    );
    let text = stdout(&out);
    let fidelity: f64 = text
        .lines()
        .find(|l| l.starts_with("fidelity:"))
        .and_then(|l| l.split(':').nth(1))
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(fidelity >= 0.999, "fidelity {fidelity}");
}

#[test]
fn sweep_tau_matches_theory_curve() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "sweep", "--var", "tau", "--from", "0", "--to", "45", "--step", "5", "--out",
            "sweep.csv",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let fields: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let (angle, fidelity, _purity, theory) = (fields[0], fields[1], fields[2], fields[3]);
        let expected = (5.0 + 4.0 * (4.0_f64 * angle.to_radians()).cos().powi(2)) / 9.0;
        assert!((theory - expected).abs() < 1e-3, "angle {angle}: theory {theory}");
        assert!(fidelity >= 0.999, "angle {angle}: fidelity {fidelity}");
        if angle == 0.0 {
            assert!((theory - 1.0).abs() < 1e-9);
        }
        rows += 1;
    }
    assert_eq!(rows, 10);

    let out = run(&["sweep", "--var", "bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
