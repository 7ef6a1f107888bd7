use serde_json::json;

use koopman_mp::experiments::{run, write_outcome, ExperimentConfig, ExperimentName};

fn quick(name: ExperimentName, params: serde_json::Value) -> ExperimentConfig {
    ExperimentConfig::new(name).with_params(params)
}

fn small_configs() -> Vec<ExperimentConfig> {
    let lorenz = json!({"burn_in": 100});
    let pendulum = json!({"M1": 10, "N": 10});
    vec![
        quick(ExperimentName::ShiftWarning, json!({"N": 4, "M": 4})),
        quick(ExperimentName::RotationExact, json!({"kmax": 3, "M": 64, "horizon": 20})),
        quick(
            ExperimentName::LorenzW1VsM,
            json!({"N": 8, "M_values": [256, 512], "M_ref": 1024, "trajectories": 2, "system": lorenz}),
        ),
        quick(
            ExperimentName::LorenzW1VsN,
            json!({"M": 2000, "N_values": [8, 16], "N_ref": 32, "system": lorenz}),
        ),
        quick(
            ExperimentName::LorenzCdf,
            json!({"N": 10, "M": 1000, "grid_points": 11, "system": lorenz}),
        ),
        quick(
            ExperimentName::LorenzProjectionValued,
            json!({"q": 3, "M_values": [256, 512], "M_ref": 1024, "q_values": [2, 3], "q_ref": 4, "M_for_q": 500, "system": lorenz}),
        ),
        quick(ExperimentName::PendulumEigs, pendulum.clone()),
        quick(ExperimentName::PendulumEigenfunctions, json!({"M1": 10, "N": 10, "phases": [0.5]})),
        quick(
            ExperimentName::PendulumNoise,
            json!({"M1": 10, "N": 10, "taus": [0.0, 0.1], "seeds": 2}),
        ),
        quick(
            ExperimentName::EnergyConservation,
            json!({"instances": 2, "N_random": 4, "horizon": 200, "edmd_horizon": 100, "pendulum": pendulum}),
        ),
    ]
}

#[test]
fn every_experiment_runs_on_small_configs() {
    let tmp = tempfile::tempdir().unwrap();
    for cfg in small_configs() {
        let outcome = run(&cfg).unwrap_or_else(|e| panic!("{}: {e}", cfg.experiment));
        assert!(!outcome.summary.checks.is_empty(), "{}", cfg.experiment);
        assert!(!outcome.artifacts.is_empty(), "{}", cfg.experiment);
        let dir = tmp.path().join(cfg.experiment.as_str());
        write_outcome(&outcome, &dir).unwrap();
        for f in &outcome.summary.files {
            let text = std::fs::read_to_string(dir.join(f)).unwrap();
            assert!(text.lines().count() > 1, "{f} is empty");
        }
        assert!(dir.join("summary.json").exists());
    }
}

#[test]
fn exact_experiments_pass_on_small_configs() {
    let cfgs = small_configs();
    for cfg in cfgs.iter().filter(|c| {
        matches!(
            c.experiment,
            ExperimentName::ShiftWarning | ExperimentName::RotationExact | ExperimentName::EnergyConservation
        )
    }) {
        let o = run(cfg).unwrap();
        assert!(o.summary.passed, "{:?}", o.summary.checks);
    }
}

#[test]
fn shift_warning_needs_at_least_n_samples() {
    assert!(run(&quick(ExperimentName::ShiftWarning, json!({"N": 6, "M": 3}))).is_err());
}

#[test]
fn noise_check_level_must_be_swept() {
    let cfg = quick(ExperimentName::PendulumNoise, json!({"M1": 10, "N": 10, "taus": [0.0], "check_tau": 0.1}));
    assert!(run(&cfg).is_err());
}

#[test]
fn seeds_change_stochastic_outputs_only() {
    let noise = json!({"M1": 10, "N": 10, "taus": [0.1], "seeds": 1});
    let a = run(&quick(ExperimentName::PendulumNoise, noise.clone())).unwrap();
    let mut cfg = quick(ExperimentName::PendulumNoise, noise);
    cfg.seed = 5;
    let b = run(&cfg).unwrap();
    assert_ne!(a.artifacts[0].contents, b.artifacts[0].contents);

    let mut cfg = quick(ExperimentName::ShiftWarning, serde_json::Value::Null);
    cfg.seed = 5;
    let c = run(&cfg).unwrap();
    let d = run(&quick(ExperimentName::ShiftWarning, serde_json::Value::Null)).unwrap();
    assert_eq!(c.artifacts[0].contents, d.artifacts[0].contents);
}
