use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use koopman_mp::decomp::KoopmanModel;
use koopman_mp::dictionary::{DictionarySpec, Observable};
use koopman_mp::sampling::io::read_snapshots;
use koopman_mp::spectral::scalar_measure;

fn bin(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_koopman-mp"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = bin(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn rotation_model(dir: &Path) {
    ok(dir, &["simulate", "--system", "rotation", "--steps", "256", "--out", "r"]);
    ok(
        dir,
        &[
            "fit",
            "--data",
            "r/snapshots.txt",
            "--method",
            "mpedmd",
            "--dictionary",
            r#"{"type":"fourier","kmax":5}"#,
            "--out",
            "r",
        ],
    );
}

#[test]
fn rotation_spectrum_is_single_atom() {
    let tmp = tempfile::tempdir().unwrap();
    rotation_model(tmp.path());
    ok(tmp.path(), &["spectrum", "--model", "r/model.json", "--observable", "fourier:1", "--out", "r"]);
    let csv = fs::read_to_string(tmp.path().join("r/measure.csv")).unwrap();
    let heavy: Vec<(f64, f64)> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let (t, m) = l.split_once(',').unwrap();
            (t.parse().unwrap(), m.parse().unwrap())
        })
        .filter(|&(_, m)| m > 1e-12)
        .collect();
    assert_eq!(heavy.len(), 1);
    assert!((heavy[0].0 - 1.0).abs() < 1e-8 && (heavy[0].1 - 1.0).abs() < 1e-8);
}

#[test]
fn spectrum_after_reload_is_bitwise_identical() {
    let tmp = tempfile::tempdir().unwrap();
    rotation_model(tmp.path());
    ok(tmp.path(), &["spectrum", "--model", "r/model.json", "--observable", "fourier:2", "--out", "r"]);
    let from_cli = fs::read_to_string(tmp.path().join("r/measure.csv")).unwrap();

    // refit in memory and compare with the measure computed from the file
    let snaps = read_snapshots(tmp.path().join("r/snapshots.txt")).unwrap();
    let spec = DictionarySpec::Fourier { kmax: 5 };
    let gp = spec.data_matrices(&snaps).unwrap().gram().unwrap();
    let model = koopman_mp::decomp::mpedmd(&gp).unwrap().with_dictionary(spec.clone());
    let ghat = spec.coefficients_of(&Observable::Fourier(2), 11).unwrap();
    let in_memory = scalar_measure(&model, &ghat).unwrap().to_csv();
    assert_eq!(from_cli, in_memory);

    let loaded = KoopmanModel::load(tmp.path().join("r/model.json")).unwrap();
    assert_eq!(scalar_measure(&loaded, &ghat).unwrap().to_csv(), in_memory);
}

#[test]
fn edmd_on_shift_is_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["simulate", "--system", "shift", "--steps", "10", "--weights", "unit", "--out", "s"]);
    let stdout = ok(
        tmp.path(),
        &["fit", "--data", "s/snapshots.txt", "--method", "edmd", "--dictionary", r#"{"type":"indicator","N":6}"#, "--out", "s"],
    );
    assert!(stdout.contains("NonDiagonalizable"), "{stdout}");
    let model = KoopmanModel::load(tmp.path().join("s/model.json")).unwrap();
    assert!(!model.reliable);
}

#[test]
fn predict_rotation_forecast() {
    let tmp = tempfile::tempdir().unwrap();
    rotation_model(tmp.path());
    ok(
        tmp.path(),
        &["predict", "--model", "r/model.json", "--data", "r/snapshots.txt", "--observable", "fourier:1", "--x0", "0.3", "--steps", "100", "--out", "r"],
    );
    let csv = fs::read_to_string(tmp.path().join("r/prediction.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 101);
    for r in rows {
        let t = 0.3 + r[0];
        assert!((r[1] - t.cos()).abs() < 1e-7 && (r[2] - t.sin()).abs() < 1e-7);
    }
}

#[test]
fn config_file_drives_fit() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["simulate", "--system", "lorenz", "--steps", "600", "--out", "l"]);
    fs::write(
        tmp.path().join("fit.json"),
        r#"{"data":"l/snapshots.txt","method":"mpedmd","dictionary":{"type":"delay","observable":"x1","N":10}}"#,
    )
    .unwrap();
    ok(tmp.path(), &["fit", "--config", "fit.json", "--out", "l"]);
    let model = KoopmanModel::load(tmp.path().join("l/model.json")).unwrap();
    assert_eq!(model.size(), 10);
    ok(tmp.path(), &["spectrum", "--model", "l/model.json", "--observable", "x1", "--data", "l/snapshots.txt", "--out", "l"]);
    assert!(tmp.path().join("l/eigenpairs.csv").exists());

    fs::write(tmp.path().join("bad.json"), r#"{"data":"l/snapshots.txt","colour":"red"}"#).unwrap();
    assert_eq!(code(&bin(tmp.path(), &["fit", "--config", "bad.json"])), 1);
}

#[test]
fn experiment_outputs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"experiment":"pendulum-noise","seed":7,
        "params":{"M1":12,"N":12,"taus":[0.05,0.1],"seeds":2,"check_tau":0.1}}"#;
    fs::write(tmp.path().join("noise.json"), cfg).unwrap();
    bin(tmp.path(), &["experiment", "--config", "noise.json", "--workers", "1", "--out", "a"]);
    bin(tmp.path(), &["experiment", "--config", "noise.json", "--workers", "3", "--out", "b"]);
    for f in ["noise.csv", "summary.json"] {
        let a = fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = fs::read(tmp.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn shift_warning_experiment_writes_matrices() {
    let tmp = tempfile::tempdir().unwrap();
    let stdout = ok(tmp.path(), &["experiment", "shift-warning", "--check", "--out", "x"]);
    assert!(stdout.contains("passed"));
    let k = fs::read_to_string(tmp.path().join("x/k_mpedmd.csv")).unwrap();
    // corner entry of the cyclic shift
    assert!(k.lines().any(|l| l == "0,5,1.0,0.0"), "{k}");
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("x/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(code(&bin(dir, &["--help"])), 0);
    assert_eq!(code(&bin(dir, &["frobnicate"])), 1);
    assert_eq!(code(&bin(dir, &["experiment", "no-such-experiment"])), 1);
    assert_eq!(code(&bin(dir, &["experiment", "shift-warning", "--workers", "0"])), 1);
    assert_eq!(code(&bin(dir, &["fit", "--data", "missing.txt", "--method", "mpedmd"])), 1);

    fs::write(dir.join("extra.json"), r#"{"experiment":"shift-warning","params":{"N":6,"extra":2}}"#).unwrap();
    assert_eq!(code(&bin(dir, &["experiment", "--config", "extra.json"])), 1);

    // rank-deficient dictionary: indicators beyond the visited states
    ok(dir, &["simulate", "--system", "shift", "--steps", "10", "--out", "s"]);
    let out = bin(dir, &["fit", "--data", "s/snapshots.txt", "--method", "edmd", "--dictionary", r#"{"type":"indicator","N":20}"#, "--out", "s"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));

    // a sweep too short to show the convergence rate fails its check
    fs::write(
        dir.join("short.json"),
        r#"{"experiment":"lorenz-w1-vs-N","params":{"M":2000,"N_values":[8,9],"N_ref":10}}"#,
    )
    .unwrap();
    assert_eq!(code(&bin(dir, &["experiment", "--config", "short.json", "--out", "f"])), 0);
    assert_eq!(code(&bin(dir, &["experiment", "--config", "short.json", "--check", "--out", "f"])), 3);
}
