use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use faer::Mat;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use koopman_mp::decomp::{self, KoopmanModel, Method};
use koopman_mp::dictionary::{DictionarySpec, Observable};
use koopman_mp::experiments::{self, ExperimentConfig, ExperimentName};
use koopman_mp::forecast::{self, Kmd};
use koopman_mp::numkit::{self, C64};
use koopman_mp::sampling::{self, io, LorenzParams, Regime, SnapshotMeta, SnapshotSet, Weighting};
use koopman_mp::spectral::{self, Eigenpair};
use koopman_mp::Error;

#[derive(Parser)]
#[command(name = "koopman-mp", version, about = "Measure-preserving EDMD and Koopman spectral measures")]
struct Cli {
    /// JSON config; for `experiment` an experiment config, otherwise an
    /// object whose keys are the subcommand's long option names.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for sweeps (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a catalog experiment and write CSV artifacts plus summary.json.
    Experiment(ExperimentArgs),
    /// Generate a snapshot file from a built-in system.
    Simulate(SimulateArgs),
    /// Fit a Koopman model from a snapshot file.
    Fit(FitArgs),
    /// Spectral measure, cdf and eigenpairs of a fitted model.
    Spectrum(SpectrumArgs),
    /// Koopman mode forecast of an observable.
    Predict(PredictArgs),
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment name (overrides the config).
    name: Option<ExperimentName>,
    /// Exit with status 3 if any acceptance check fails.
    #[arg(long)]
    check: bool,
    /// List available experiments and exit.
    #[arg(long)]
    list: bool,
}

#[derive(Clone, Copy, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum System {
    Lorenz,
    Pendulum,
    PendulumGrid,
    Rotation,
    Shift,
}

#[derive(Clone, Copy, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum WeightKind {
    Uniform,
    Unit,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    system: Option<System>,
    /// Number of snapshot pairs along a trajectory.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    /// Rotation angle.
    #[arg(long, allow_hyphen_values = true)]
    alpha: Option<f64>,
    /// Discarded initial samples (Lorenz).
    #[arg(long)]
    burn_in: Option<usize>,
    /// RK4 substeps per sample.
    #[arg(long)]
    substeps: Option<usize>,
    /// Nodes per direction (pendulum-grid).
    #[arg(long)]
    grid: Option<usize>,
    /// Momentum truncation (pendulum-grid).
    #[arg(long)]
    bound: Option<f64>,
    #[arg(long)]
    weights: Option<WeightKind>,
    /// Snapshot file (default `<out>/snapshots.txt`; `.json` selects JSON).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct SimulateConfig {
    system: Option<System>,
    steps: Option<usize>,
    dt: Option<f64>,
    x0: Option<Vec<f64>>,
    alpha: Option<f64>,
    burn_in: Option<usize>,
    substeps: Option<usize>,
    grid: Option<usize>,
    bound: Option<f64>,
    weights: Option<WeightKind>,
    output: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    /// Dictionary descriptor: inline JSON or a path to a JSON file.
    #[arg(long)]
    dictionary: Option<String>,
    /// Model file (default `<out>/model.json`).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FitConfig {
    data: Option<PathBuf>,
    method: Option<Method>,
    dictionary: Option<DictionarySpec>,
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SpectrumArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Built-in observable (`x1`, `fourier:1`, `pendulum_g`, ...).
    #[arg(long)]
    observable: Option<String>,
    /// Snapshot file; enables residuals and projection of observables
    /// outside the dictionary.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Points of the cdf grid on (-pi, pi].
    #[arg(long)]
    grid_points: Option<usize>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct SpectrumConfig {
    model: Option<PathBuf>,
    observable: Option<String>,
    data: Option<PathBuf>,
    grid_points: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    observable: Option<String>,
    /// Initial state, comma separated (default: the first snapshot).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
    #[arg(long)]
    steps: Option<u64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct PredictConfig {
    model: Option<PathBuf>,
    data: Option<PathBuf>,
    observable: Option<String>,
    x0: Option<Vec<f64>>,
    steps: Option<u64>,
}

enum Failure {
    Usage(String),
    Lib(Error),
    Checks(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult<T> = Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

fn required<T>(v: Option<T>, flag: &str) -> CliResult<T> {
    v.ok_or_else(|| Failure::Usage(format!("missing --{flag}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
        Err(Failure::Checks(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    let out = cli.out.clone();
    match cli.command {
        Command::Experiment(a) => experiment(a, cli.config, out, cli.seed, cli.workers),
        Command::Simulate(a) => simulate(merge_simulate(a, load_config(cli.config.as_deref())?), out),
        Command::Fit(a) => fit(a, load_config(cli.config.as_deref())?, out),
        Command::Spectrum(a) => spectrum(a, load_config(cli.config.as_deref())?, out),
        Command::Predict(a) => predict(a, load_config(cli.config.as_deref())?, out),
    }
}

fn load_config<C: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<C> {
    let Some(path) = path else { return Ok(C::default()) };
    let text = fs::read_to_string(path).map_err(Error::from)?;
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn out_dir(out: Option<PathBuf>) -> CliResult<PathBuf> {
    let dir = out.unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).map_err(Error::from)?;
    Ok(dir)
}

fn write(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::from)?;
    }
    fs::write(path, contents).map_err(Error::from)?;
    Ok(())
}

// ----------------------------------------------------------- experiment

fn experiment(
    a: ExperimentArgs,
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
) -> CliResult<()> {
    if a.list {
        for e in ExperimentName::ALL {
            println!("{e}");
        }
        return Ok(());
    }
    let mut cfg = match (&config, a.name) {
        (Some(path), name) => {
            let c = ExperimentConfig::load(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            if let Some(n) = name {
                if n != c.experiment {
                    return usage(format!("config is for {}, not {n}", c.experiment));
                }
            }
            c
        }
        (None, Some(name)) => ExperimentConfig::new(name),
        (None, None) => return usage("give an experiment name or --config"),
    };
    if seed.is_some() {
        cfg.seed = seed.unwrap_or_default();
    }
    if workers.is_some() {
        cfg.workers = workers;
    }
    let dir = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out").join(cfg.experiment.as_str()));
    let outcome = experiments::run(&cfg).map_err(|e| match e {
        Error::Parse(_) | Error::Invalid(_) => Failure::Usage(e.to_string()),
        other => Failure::Lib(other),
    })?;
    experiments::write_outcome(&outcome, &dir)?;
    let s = &outcome.summary;
    for c in &s.checks {
        println!(
            "{} {}: {:e} (want {})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.threshold
        );
    }
    println!("{}: {} -> {}", s.experiment, if s.passed { "passed" } else { "failed" }, dir.display());
    if a.check && !s.passed {
        return Err(Failure::Checks(format!("{}: acceptance checks failed", s.experiment)));
    }
    Ok(())
}

// ------------------------------------------------------------- simulate

fn merge_simulate(a: SimulateArgs, c: SimulateConfig) -> SimulateConfig {
    SimulateConfig {
        system: a.system.or(c.system),
        steps: a.steps.or(c.steps),
        dt: a.dt.or(c.dt),
        x0: a.x0.or(c.x0),
        alpha: a.alpha.or(c.alpha),
        burn_in: a.burn_in.or(c.burn_in),
        substeps: a.substeps.or(c.substeps),
        grid: a.grid.or(c.grid),
        bound: a.bound.or(c.bound),
        weights: a.weights.or(c.weights),
        output: a.output.or(c.output),
    }
}

fn state<const D: usize>(x0: Option<&[f64]>, default: [f64; D]) -> CliResult<[f64; D]> {
    match x0 {
        None => Ok(default),
        Some(v) => v
            .try_into()
            .map_err(|_| Failure::Usage(format!("--x0 needs {D} components, got {}", v.len()))),
    }
}

fn simulate(c: SimulateConfig, out: Option<PathBuf>) -> CliResult<()> {
    let system = required(c.system, "system")?;
    let weighting = match c.weights.unwrap_or(WeightKind::Uniform) {
        WeightKind::Uniform => Weighting::Uniform,
        WeightKind::Unit => Weighting::Unit,
    };
    let x0 = c.x0.as_deref();
    let steps = c.steps.unwrap_or(1000);
    let (name, snaps) = match system {
        System::Lorenz => {
            let dt = c.dt.unwrap_or(0.1);
            let start = state(x0, [1.0, 1.0, 1.0])?;
            let traj = koopman_mp::experiments::lorenz::attractor_trajectory(
                start,
                dt,
                c.burn_in.unwrap_or(1000),
                steps + 1,
                LorenzParams::default(),
                c.substeps,
            )?;
            ("lorenz", sampling::snapshots_from_trajectory(&traj, weighting)?)
        }
        System::Pendulum => {
            let dt = c.dt.unwrap_or(0.5);
            let start = state(x0, [1.0, 0.0])?;
            let sub = c.substeps.unwrap_or_else(|| sampling::default_substeps(dt));
            let traj = sampling::pendulum_trajectory(start, dt, steps, sub)?;
            ("pendulum", sampling::snapshots_from_trajectory(&traj, weighting)?)
        }
        System::PendulumGrid => {
            let dt = c.dt.unwrap_or(0.5);
            let sub = c.substeps.unwrap_or_else(|| sampling::default_substeps(dt));
            let m = c.grid.unwrap_or(50);
            let snaps = sampling::tensor_trapezoid_snapshots(m, m, c.bound.unwrap_or(4.0), |x| {
                Ok(sampling::pendulum_flow([x[0], x[1]], dt, sub).to_vec())
            })?;
            ("pendulum", snaps)
        }
        System::Rotation => {
            let alpha = c.alpha.unwrap_or(1.0);
            if x0.is_some() {
                let [t0] = state(x0, [0.0])?;
                let traj = sampling::rotation_trajectory(t0, alpha, steps)?;
                ("rotation", sampling::snapshots_from_trajectory(&traj, weighting)?)
            } else {
                // equispaced nodes: the periodic trapezoid rule
                let x = Mat::from_fn(steps, 1, |i, _| 2.0 * PI * i as f64 / steps as f64);
                let y = Mat::from_fn(steps, 1, |i, _| sampling::rotation_step(x[(i, 0)], alpha));
                let w = match weighting {
                    Weighting::Uniform => 1.0 / steps as f64,
                    Weighting::Unit => 1.0,
                };
                let meta = SnapshotMeta {
                    system: String::new(),
                    dt: Some(1.0),
                    regime: Regime::Quadrature,
                };
                ("rotation", SnapshotSet::new(x, y, vec![w; steps], meta)?)
            }
        }
        System::Shift => {
            let [start] = state(x0, [steps as f64])?;
            if start < 0.0 || start.fract() != 0.0 {
                return usage("shift start must be a nonnegative integer");
            }
            let traj = sampling::shift_trajectory(start as usize, steps)?;
            ("shift", sampling::snapshots_from_trajectory(&traj, weighting)?)
        }
    };
    let mut snaps = snaps;
    snaps.meta.system = name.into();
    let path = match c.output {
        Some(p) => p,
        None => out_dir(out)?.join("snapshots.txt"),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(Error::from)?;
    }
    io::write_snapshots(&snaps, &path)?;
    println!("{} snapshot pairs of {name} -> {}", snaps.len(), path.display());
    Ok(())
}

// ------------------------------------------------------------------ fit

fn parse_dictionary(arg: &str) -> CliResult<DictionarySpec> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).map_err(|e| Failure::Usage(format!("dictionary {arg}: {e}")))?
    };
    serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("dictionary: {e}")))
}

fn read_data(path: &Path) -> CliResult<SnapshotSet> {
    io::read_snapshots(path).map_err(|e| match e {
        Error::Io(_) | Error::Parse(_) | Error::Json(_) | Error::Shape(_) => {
            Failure::Usage(format!("{}: {e}", path.display()))
        }
        other => Failure::Lib(other),
    })
}

/// Fits `method` on `snaps`; DMD and piDMD use the raw states.
fn fit_model(method: Method, spec: Option<DictionarySpec>, snaps: &SnapshotSet) -> CliResult<KoopmanModel> {
    match method {
        Method::Dmd | Method::Pidmd => {
            if spec.as_ref().is_some_and(|s| *s != DictionarySpec::Linear) {
                return usage(format!("{method} works on the raw states; use the linear dictionary"));
            }
            Ok(if method == Method::Dmd {
                decomp::dmd(&snaps.x, &snaps.y, &snaps.weights)?
            } else {
                decomp::pidmd_unitary(&snaps.x, &snaps.y, &snaps.weights)?
            })
        }
        Method::Edmd | Method::Mpedmd => {
            let spec = required(spec, "dictionary")?;
            let gp = spec.data_matrices(snaps)?.gram()?;
            Ok(decomp::fit_gram(method, &gp)?.with_dictionary(spec))
        }
    }
}

fn fit(a: FitArgs, c: FitConfig, out: Option<PathBuf>) -> CliResult<()> {
    let data = required(a.data.or(c.data), "data")?;
    let method = required(a.method.or(c.method), "method")?;
    let spec = match a.dictionary {
        Some(s) => Some(parse_dictionary(&s)?),
        None => c.dictionary,
    };
    let snaps = read_data(&data)?;
    let model = fit_model(method, spec, &snaps)?;
    let path = match a.output.or(c.output) {
        Some(p) => p,
        None => out_dir(out)?.join("model.json"),
    };
    write(&path, &model.to_json()?)?;
    let dev = model.eigvals.iter().map(|l| (l.norm() - 1.0).abs()).fold(0.0, f64::max);
    println!(
        "{method}: N = {}, max ||lambda|-1| = {dev:.3e}, eigenvector cond = {:.3e} -> {}",
        model.size(),
        model.eigvec_cond,
        path.display()
    );
    if !model.reliable {
        println!("flag: NonDiagonalizable (eigenvector matrix is numerically singular)");
    }
    Ok(())
}

// ------------------------------------------------------------- spectrum

/// Dictionary coefficients of `g`: exact when `g` is a dictionary member,
/// otherwise projected from `data` (state-evaluable dictionaries only).
fn observable_coefficients(model: &KoopmanModel, g: &Observable, data: Option<&SnapshotSet>) -> CliResult<Vec<C64>> {
    let spec = model
        .dictionary
        .as_ref()
        .ok_or_else(|| Failure::Usage("model file has no dictionary descriptor".into()))?;
    if let Some(c) = spec.coefficients_of(g, model.size()) {
        return Ok(c);
    }
    let Some(snaps) = data else {
        return usage(format!("{g} is not a dictionary element; pass --data to project it"));
    };
    let Some(dict) = spec.build(snaps)? else {
        return usage(format!("{g} is not the delay observable and cannot be projected"));
    };
    let dm = spec.data_matrices(snaps)?;
    let samples: Vec<C64> = (0..snaps.len()).map(|m| g.eval(&snaps.x.row(m).iter().copied().collect::<Vec<_>>())).collect();
    if dict.size() != model.size() {
        return Err(Error::Shape(format!("dictionary on data has {} elements, model {}", dict.size(), model.size())).into());
    }
    Ok(forecast::project_observable(&dm.gram()?, &dm.psi_x, &dm.weights, &samples)?)
}

fn spectrum(a: SpectrumArgs, c: SpectrumConfig, out: Option<PathBuf>) -> CliResult<()> {
    let model = KoopmanModel::load(required(a.model.or(c.model), "model")?)?;
    let g: Observable = required(a.observable.or(c.observable), "observable")?
        .parse()
        .map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let data = a.data.or(c.data).map(|p| read_data(&p)).transpose()?;
    let points = a.grid_points.or(c.grid_points).unwrap_or(1001);
    if points < 2 {
        return usage("--grid-points must be at least 2");
    }
    let dir = out_dir(out)?;
    let ghat = observable_coefficients(&model, &g, data.as_ref())?;
    let mu = spectral::scalar_measure(&model, &ghat)?;
    let grid: Vec<f64> = (0..points).map(|i| -PI + 2.0 * PI * (i + 1) as f64 / points as f64).collect();
    write(&dir.join("measure.csv"), &mu.to_csv())?;
    write(&dir.join("cdf.csv"), &spectral::cdf_csv(&grid, &spectral::cdf(&mu, &grid)))?;
    if let (Some(snaps), Some(spec)) = (&data, &model.dictionary) {
        let gp = spec.data_matrices(snaps)?.gram()?;
        let pairs: Vec<Eigenpair> = spectral::residuals(&model, &gp)?
            .into_iter()
            .enumerate()
            .map(|(index, residual)| Eigenpair {
                index,
                lambda: model.eigvals[index],
                residual,
            })
            .collect();
        write(&dir.join("eigenpairs.csv"), &spectral::eigenpairs_csv(&pairs))?;
    }
    println!(
        "{} atoms, total mass {:.12} -> {}",
        mu.atoms().len(),
        mu.total_mass(),
        dir.display()
    );
    Ok(())
}

// -------------------------------------------------------------- predict

fn predict(a: PredictArgs, c: PredictConfig, out: Option<PathBuf>) -> CliResult<()> {
    let model = KoopmanModel::load(required(a.model.or(c.model), "model")?)?;
    let snaps = read_data(&required(a.data.or(c.data), "data")?)?;
    let g: Observable = required(a.observable.or(c.observable), "observable")?
        .parse()
        .map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let steps = a.steps.or(c.steps).unwrap_or(100);
    let x0 = a.x0.or(c.x0);
    let spec = model
        .dictionary
        .clone()
        .ok_or_else(|| Failure::Usage("model file has no dictionary descriptor".into()))?;
    let row = match spec.build(&snaps)? {
        Some(dict) => {
            let x0 = x0.unwrap_or_else(|| snaps.x.row(0).iter().copied().collect());
            if x0.len() != snaps.dim() {
                return usage(format!("--x0 needs {} components", snaps.dim()));
            }
            dict.eval_row(&x0)
        }
        None => {
            if x0.is_some() {
                return usage("delay dictionaries forecast from the first snapshot; drop --x0");
            }
            let dm = spec.data_matrices(&snaps)?;
            (0..dm.psi_x.ncols()).map(|j| dm.psi_x[(0, j)]).collect()
        }
    };
    let ghat = observable_coefficients(&model, &g, Some(&snaps))?;
    let kmd: Kmd = forecast::kmd_from_coefficients(&model, &Mat::from_fn(ghat.len(), 1, |i, _| ghat[i]))?;
    let eig_row = forecast::eigenfunction_row(&model, &row)?;
    let series: Vec<(u64, C64)> = (0..=steps).map(|n| (n, forecast::predict(&kmd, &eig_row, n)[0])).collect();
    numkit::check_finite(
        &Mat::from_fn(series.len(), 1, |i, _| series[i].1),
        "prediction",
    )?;
    let dir = out_dir(out)?;
    write(&dir.join("prediction.csv"), &forecast::prediction_csv(&series))?;
    println!("{} steps of {g} -> {}", steps, dir.join("prediction.csv").display());
    Ok(())
}
