use std::f64::consts::PI;
use std::fmt::Write as _;

use faer::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use super::lorenz::{attractor_trajectory, delay_measure, series};
use super::pendulum::{PendulumData, PendulumSetup};
use super::{loglog_slope, matrix_csv, random, Check, ExperimentConfig, ExperimentName, Outcome, Report};
use crate::decomp::{edmd, mpedmd, KoopmanModel};
use crate::dictionary::{self, delay_matrices_multi, gram, Dictionary, GramPair, Observable};
use crate::error::{Error, Result};
use crate::forecast::{build_kmd, coeff_energy, eigenfunction_row, energy_series, predict, unit_coefficients};
use crate::numkit::{self, cplx, phase, CMatrix, C64};
use crate::sampling::{default_substeps, perturb, rotation_step, shift_trajectory, snapshots_from_trajectory, LorenzParams, Weighting};
use crate::spectral::{
    apply_test_function, cdf, cdf_csv, eigenpairs_csv, residuals, scalar_measure, w1, Eigenpair, TestFunction,
};

pub(super) fn dispatch(cfg: &ExperimentConfig) -> Result<Outcome> {
    let report = match cfg.experiment {
        ExperimentName::ShiftWarning => shift_warning(cfg.params()?)?,
        ExperimentName::RotationExact => rotation_exact(cfg.params()?)?,
        ExperimentName::LorenzW1VsM => lorenz_w1_vs_m(cfg.params()?, cfg.seed)?,
        ExperimentName::LorenzW1VsN => lorenz_w1_vs_n(cfg.params()?)?,
        ExperimentName::LorenzCdf => lorenz_cdf(cfg.params()?)?,
        ExperimentName::LorenzProjectionValued => lorenz_projection_valued(cfg.params()?)?,
        ExperimentName::PendulumEigs => pendulum_eigs(cfg.params()?)?,
        ExperimentName::PendulumEigenfunctions => pendulum_eigenfunctions(cfg.params()?)?,
        ExperimentName::PendulumNoise => pendulum_noise(cfg.params()?, cfg.seed)?,
        ExperimentName::EnergyConservation => energy_conservation(cfg.params()?, cfg.seed)?,
    };
    Ok(report.finish(cfg.experiment, cfg.seed))
}

/// Independent stream for sub-task `k` of a run seeded with `seed`.
fn sub_rng(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k + 1);
    rng
}

fn sub_seed(seed: u64, k: u64) -> u64 {
    sub_rng(seed, k).random()
}

fn max_modulus_deviation(model: &KoopmanModel) -> f64 {
    model.eigvals.iter().map(|l| (l.norm() - 1.0).abs()).fold(0.0, f64::max)
}

fn eigenpairs(model: &KoopmanModel, gp: &GramPair) -> Result<Vec<Eigenpair>> {
    Ok(residuals(model, gp)?
        .into_iter()
        .enumerate()
        .map(|(index, residual)| Eigenpair {
            index,
            lambda: model.eigvals[index],
            residual,
        })
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------- shift

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ShiftParams {
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M")]
    m: usize,
}

impl Default for ShiftParams {
    fn default() -> Self {
        Self { n: 6, m: 10 }
    }
}

fn shift_warning(p: ShiftParams) -> Result<Report> {
    if p.n < 2 || p.m < p.n {
        return Err(Error::Invalid(format!("need 2 <= N <= M, got N={} M={}", p.n, p.m)));
    }
    let snaps = snapshots_from_trajectory(&shift_trajectory(p.m, p.m)?, Weighting::Unit)?;
    let (gp, _) = dictionary::gram_from_snapshots(&Dictionary::indicators(p.n), &snaps)?;
    let e = edmd(&gp)?;
    let mp = mpedmd(&gp)?;
    let n = p.n;
    let mut err_e: f64 = 0.0;
    let mut err_mp: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let lower = if i == j + 1 { 1.0 } else { 0.0 };
            let cyclic = if i == j + 1 || (i == 0 && j == n - 1) { 1.0 } else { 0.0 };
            err_e = err_e.max((e.k[(i, j)] - cplx(lower, 0.0)).norm());
            err_mp = err_mp.max((mp.k[(i, j)] - cplx(cyclic, 0.0)).norm());
        }
    }
    let mut r = Report::default();
    r.check(Check::at_most("edmd_max_entry_error", err_e, 1e-12));
    r.check(Check::at_most("mpedmd_max_entry_error", err_mp, 1e-12));
    r.check(Check::flag("edmd_flagged_nondiagonalizable", !e.reliable));
    r.metric("edmd_eigvec_cond", if e.eigvec_cond.is_finite() { e.eigvec_cond } else { f64::MAX });
    r.metric("mpedmd_max_modulus_deviation", max_modulus_deviation(&mp));
    r.file("k_edmd.csv", matrix_csv(&e.k));
    r.file("k_mpedmd.csv", matrix_csv(&mp.k));
    Ok(r)
}

// ------------------------------------------------------------- rotation

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RotationParams {
    alpha: f64,
    kmax: i32,
    #[serde(rename = "M")]
    m: usize,
    theta0: f64,
    horizon: u64,
}

impl Default for RotationParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            kmax: 5,
            m: 256,
            theta0: 0.3,
            horizon: 100,
        }
    }
}

/// Max distance under a greedy nearest-neighbour matching of two multisets.
fn multiset_distance(expected: &[C64], computed: &[C64]) -> f64 {
    if expected.len() != computed.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; computed.len()];
    let mut worst: f64 = 0.0;
    for e in expected {
        let (j, d) = computed
            .iter()
            .enumerate()
            .filter(|(j, _)| !used[*j])
            .map(|(j, c)| (j, (c - e).norm()))
            .fold((usize::MAX, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        used[j] = true;
        worst = worst.max(d);
    }
    worst
}

fn rotation_exact(p: RotationParams) -> Result<Report> {
    if p.m < 2 * p.kmax as usize + 1 {
        return Err(Error::Invalid("M must exceed the number of Fourier modes".into()));
    }
    let dict = Dictionary::fourier(p.kmax);
    let x = Mat::from_fn(p.m, 1, |i, _| 2.0 * PI * i as f64 / p.m as f64);
    let y = Mat::from_fn(p.m, 1, |i, _| rotation_step(x[(i, 0)], p.alpha));
    let w = vec![1.0 / p.m as f64; p.m];
    let psi_x = dictionary::evaluate(&dict, &x)?;
    let gp = gram(&psi_x, &dictionary::evaluate(&dict, &y)?, &w)?;
    let model = mpedmd(&gp)?;

    let expected: Vec<C64> = (-p.kmax..=p.kmax).map(|k| C64::from_polar(1.0, k as f64 * p.alpha)).collect();
    let eig_err = multiset_distance(&expected, &model.eigvals);

    let g_index = (p.kmax + 1) as usize;
    let mu = scalar_measure(&model, &unit_coefficients(dict.size(), g_index))?;
    let top = mu.atoms().iter().cloned().fold((0.0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
    let alpha_phase = phase(C64::from_polar(1.0, p.alpha));
    let atom_phase_err = (top.0 - alpha_phase).abs();
    let atom_mass_err = (top.1 - 1.0).abs();

    let target = Mat::from_fn(p.m, 1, |i, _| C64::from_polar(1.0, x[(i, 0)]));
    let kmd = build_kmd(&model, &gp, &psi_x, &w, &target)?;
    let row = eigenfunction_row(&model, &dict.eval_row(&[p.theta0]))?;
    let mut pred_err: f64 = 0.0;
    let mut series = Vec::new();
    for n in 0..=p.horizon {
        let v = predict(&kmd, &row, n)[0];
        pred_err = pred_err.max((v - C64::from_polar(1.0, p.theta0 + n as f64 * p.alpha)).norm());
        series.push((n, v));
    }

    let mut r = Report::default();
    r.check(Check::at_most("eigenvalue_multiset_error", eig_err, 1e-8));
    r.check(Check::at_most("atom_phase_error", atom_phase_err, 1e-8));
    r.check(Check::at_most("atom_mass_error", atom_mass_err, 1e-8));
    r.check(Check::at_most("prediction_max_error", pred_err, 1e-7));
    r.metric("max_modulus_deviation", max_modulus_deviation(&model));
    r.file("eigenvalues.csv", eigenpairs_csv(&eigenpairs(&model, &gp)?));
    r.file("measure.csv", mu.to_csv());
    r.file("prediction.csv", crate::forecast::prediction_csv(&series));
    Ok(r)
}

// --------------------------------------------------------------- lorenz

#[derive(Deserialize, Clone, Copy)]
#[serde(deny_unknown_fields, default)]
struct LorenzSystem {
    sigma: f64,
    rho: f64,
    beta: f64,
    dt: f64,
    burn_in: usize,
    substeps: Option<usize>,
    x0: [f64; 3],
}

impl Default for LorenzSystem {
    fn default() -> Self {
        let p = LorenzParams::default();
        Self {
            sigma: p.sigma,
            rho: p.rho,
            beta: p.beta,
            dt: 0.1,
            burn_in: 1000,
            substeps: None,
            x0: [1.0, 1.0, 1.0],
        }
    }
}

impl LorenzSystem {
    fn params(&self) -> LorenzParams {
        LorenzParams {
            sigma: self.sigma,
            rho: self.rho,
            beta: self.beta,
        }
    }

    fn trajectory(&self, x0: [f64; 3], len: usize) -> Result<crate::sampling::Trajectory> {
        attractor_trajectory(x0, self.dt, self.burn_in, len, self.params(), self.substeps)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LorenzMParams {
    observable: String,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M_values")]
    m_values: Vec<usize>,
    #[serde(rename = "M_ref")]
    m_ref: usize,
    /// Independent trajectories; W1 is averaged over them at each M.
    trajectories: usize,
    system: LorenzSystem,
}

impl Default for LorenzMParams {
    fn default() -> Self {
        Self {
            observable: "x1".into(),
            n: 50,
            m_values: (9..=14).map(|p| 1 << p).collect(),
            m_ref: 1 << 16,
            trajectories: 16,
            system: LorenzSystem::default(),
        }
    }
}

/// Initial condition for trajectory `k`: the configured point for `k = 0`,
/// otherwise a seeded draw from a box around the attractor.
fn lorenz_start(sys: &LorenzSystem, seed: u64, k: u64) -> [f64; 3] {
    if k == 0 {
        return sys.x0;
    }
    let mut rng = sub_rng(seed, k);
    [
        rng.random_range(-10.0..10.0),
        rng.random_range(-10.0..10.0),
        rng.random_range(10.0..40.0),
    ]
}

fn lorenz_w1_vs_m(p: LorenzMParams, seed: u64) -> Result<Report> {
    let g: Observable = p.observable.parse()?;
    if p.m_values.len() < 2 || p.trajectories == 0 {
        return Err(Error::Invalid("need at least two M values and one trajectory".into()));
    }
    if let Some(&m) = p.m_values.iter().find(|&&m| m > p.m_ref) {
        return Err(Error::Invalid(format!("M = {m} exceeds M_ref = {}", p.m_ref)));
    }
    let per_traj: Vec<Vec<f64>> = (0..p.trajectories as u64)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let traj = p.system.trajectory(lorenz_start(&p.system, seed, k), p.m_ref + p.n)?;
            let z = series(&traj, &g)?;
            let reference = delay_measure(&z, p.n, p.m_ref)?;
            p.m_values
                .iter()
                .map(|&m| Ok(w1(&reference, &delay_measure(&z, p.n, m)?)))
                .collect()
        })
        .collect::<Result<_>>()?;

    let means: Vec<f64> = (0..p.m_values.len())
        .map(|i| mean(&per_traj.iter().map(|v| v[i]).collect::<Vec<_>>()))
        .collect();
    let ms: Vec<f64> = p.m_values.iter().map(|&m| m as f64).collect();
    let slope = loglog_slope(&ms, &means);

    let mut table = String::from("M,w1_mean,w1_min,w1_max\n");
    for (i, m) in p.m_values.iter().enumerate() {
        let col: Vec<f64> = per_traj.iter().map(|v| v[i]).collect();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(0.0, f64::max);
        let _ = writeln!(table, "{m},{:?},{lo:?},{hi:?}", means[i]);
    }
    let mut long = String::from("trajectory,M,w1\n");
    for (k, v) in per_traj.iter().enumerate() {
        for (m, w) in p.m_values.iter().zip(v) {
            let _ = writeln!(long, "{k},{m},{w:?}");
        }
    }
    let mut r = Report::default();
    r.check(Check::within("loglog_slope", slope, -0.75, -0.30));
    r.metric("observable", p.observable.clone());
    r.metric("slope_first_trajectory", loglog_slope(&ms, &per_traj[0]));
    // robust to the few trajectories whose fit lands on the other side of a
    // near-singular direction from the reference
    let medians: Vec<f64> = (0..p.m_values.len())
        .map(|i| median(per_traj.iter().map(|v| v[i]).collect()))
        .collect();
    r.metric("slope_median", loglog_slope(&ms, &medians));
    r.file("w1_vs_M.csv", table);
    r.file("w1_vs_M_trajectories.csv", long);
    Ok(r)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LorenzNParams {
    observable: String,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "N_values")]
    n_values: Vec<usize>,
    #[serde(rename = "N_ref")]
    n_ref: usize,
    system: LorenzSystem,
}

impl Default for LorenzNParams {
    fn default() -> Self {
        Self {
            observable: "x1".into(),
            m: 100_000,
            n_values: vec![16, 32, 64, 128, 256],
            n_ref: 512,
            system: LorenzSystem::default(),
        }
    }
}

fn lorenz_w1_vs_n(p: LorenzNParams) -> Result<Report> {
    let g: Observable = p.observable.parse()?;
    if p.n_values.len() < 2 {
        return Err(Error::Invalid("need at least two N values".into()));
    }
    if let Some(&n) = p.n_values.iter().find(|&&n| n >= p.n_ref) {
        return Err(Error::Invalid(format!("N = {n} must be below N_ref = {}", p.n_ref)));
    }
    let traj = p.system.trajectory(p.system.x0, p.m + p.n_ref)?;
    let z = series(&traj, &g)?;
    let mut depths = vec![p.n_ref];
    depths.extend(&p.n_values);
    let measures: Vec<_> = depths
        .par_iter()
        .map(|&n| delay_measure(&z, n, p.m))
        .collect::<Result<_>>()?;
    let dists: Vec<f64> = measures[1..].iter().map(|mu| w1(&measures[0], mu)).collect();
    let ns: Vec<f64> = p.n_values.iter().map(|&n| n as f64).collect();
    let slope = loglog_slope(&ns, &dists);

    let mut table = String::from("N,w1\n");
    for (n, d) in p.n_values.iter().zip(&dists) {
        let _ = writeln!(table, "{n},{d:?}");
    }
    let mut r = Report::default();
    r.check(Check::at_most("loglog_slope", slope, -0.7));
    r.metric("observable", p.observable.clone());
    r.file("w1_vs_N.csv", table);
    Ok(r)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct LorenzCdfParams {
    observables: Vec<String>,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    grid_points: usize,
    system: LorenzSystem,
}

impl Default for LorenzCdfParams {
    fn default() -> Self {
        Self {
            observables: vec!["x1".into(), "x2".into(), "x3".into()],
            n: 300,
            m: 100_000,
            grid_points: 1001,
            system: LorenzSystem::default(),
        }
    }
}

fn lorenz_cdf(p: LorenzCdfParams) -> Result<Report> {
    if p.grid_points < 2 {
        return Err(Error::Invalid("grid_points must be at least 2".into()));
    }
    let obs: Vec<Observable> = p.observables.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    let traj = p.system.trajectory(p.system.x0, p.m + p.n)?;
    let grid: Vec<f64> = (0..p.grid_points)
        .map(|i| -PI + 2.0 * PI * (i + 1) as f64 / p.grid_points as f64)
        .collect();
    let measures: Vec<_> = obs
        .par_iter()
        .map(|g| delay_measure(&series(&traj, g)?, p.n, p.m))
        .collect::<Result<_>>()?;
    let mut r = Report::default();
    let mut worst: f64 = 0.0;
    for (name, mu) in p.observables.iter().zip(&measures) {
        worst = worst.max((mu.total_mass() - 1.0).abs());
        let at_one: f64 = mu.atoms().iter().filter(|a| a.0.abs() < 1e-9).map(|a| a.1).fold(0.0, |s, v| s + v);
        r.metric(&format!("mass_at_1_{name}"), at_one);
        r.file(format!("measure_{name}.csv"), mu.to_csv());
        r.file(format!("cdf_{name}.csv"), cdf_csv(&grid, &cdf(mu, &grid)));
    }
    r.check(Check::at_most("max_total_mass_error", worst, 1e-10));
    Ok(r)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ProjectionParams {
    /// Delays per coordinate for the M sweep (`N = 3q`).
    q: usize,
    #[serde(rename = "M_values")]
    m_values: Vec<usize>,
    #[serde(rename = "M_ref")]
    m_ref: usize,
    q_values: Vec<usize>,
    q_ref: usize,
    /// Sample count for the q sweep.
    #[serde(rename = "M_for_q")]
    m_for_q: usize,
    laurent_degree: usize,
    system: LorenzSystem,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        Self {
            q: 10,
            m_values: (10..=15).map(|p| 1 << p).collect(),
            m_ref: 1 << 17,
            q_values: vec![4, 8, 16, 32],
            q_ref: 64,
            m_for_q: 20_000,
            laurent_degree: 30,
            system: LorenzSystem::default(),
        }
    }
}

/// `int phi dE g_j` for `g_j` the `j`-th coordinate (`j < 3`), with `phi`
/// the exponential of `sin`.
fn projection_coefficients(model: &KoopmanModel) -> Result<Vec<Vec<C64>>> {
    (0..3)
        .map(|j| apply_test_function(model, &TestFunction::ExpSin, &unit_coefficients(model.size(), j)))
        .collect()
}

/// Relative `L^2(W)` distance between `Psi_a h_a` and `Psi_b h_b` on shared
/// samples.
fn relative_function_error(pa: &CMatrix, ha: &[C64], pb: &CMatrix, hb: &[C64], w: &[f64]) -> f64 {
    let fa = numkit::matvec(pa, ha);
    let fb = numkit::matvec(pb, hb);
    let num: f64 = fa.iter().zip(&fb).zip(w).map(|((a, b), w)| w * (a - b).norm_sqr()).sum();
    let den: f64 = fb.iter().zip(w).map(|(b, w)| w * b.norm_sqr()).sum();
    (num / den).sqrt()
}

fn lorenz_projection_valued(p: ProjectionParams) -> Result<Report> {
    let gs = [Observable::coordinate(0), Observable::coordinate(1), Observable::coordinate(2)];
    let longest = p.m_ref.max(p.m_for_q) + p.q.max(p.q_ref) + 1;
    let traj = p.system.trajectory(p.system.x0, longest)?;
    let mut r = Report::default();

    // M sweep at fixed q, errors measured on the reference samples.
    let reference = delay_matrices_multi(&traj, &gs, p.q, p.m_ref)?;
    let ref_model = mpedmd(&reference.gram()?)?;
    let ref_h = projection_coefficients(&ref_model)?;
    let m_errors: Vec<[f64; 3]> = p
        .m_values
        .par_iter()
        .map(|&m| -> Result<[f64; 3]> {
            let d = delay_matrices_multi(&traj, &gs, p.q, m)?;
            let h = projection_coefficients(&mpedmd(&d.gram()?)?)?;
            let mut e = [0.0; 3];
            for j in 0..3 {
                e[j] = relative_function_error(&reference.psi_x, &h[j], &reference.psi_x, &ref_h[j], &reference.weights);
            }
            Ok(e)
        })
        .collect::<Result<_>>()?;

    // q sweep at fixed M.
    let mut depths = vec![p.q_ref];
    depths.extend(&p.q_values);
    let fits: Vec<(CMatrix, Vec<Vec<C64>>)> = depths
        .par_iter()
        .map(|&q| -> Result<_> {
            let d = delay_matrices_multi(&traj, &gs, q, p.m_for_q)?;
            let h = projection_coefficients(&mpedmd(&d.gram()?)?)?;
            Ok((d.psi_x, h))
        })
        .collect::<Result<_>>()?;
    let w = vec![1.0 / p.m_for_q as f64; p.m_for_q];
    let q_errors: Vec<[f64; 3]> = fits[1..]
        .iter()
        .map(|(psi, h)| {
            let mut e = [0.0; 3];
            for j in 0..3 {
                e[j] = relative_function_error(psi, &h[j], &fits[0].0, &fits[0].1[j], &w);
            }
            e
        })
        .collect();

    // The closed form and its Laurent truncation must agree.
    let g0 = unit_coefficients(ref_model.size(), 0);
    let exact = apply_test_function(&ref_model, &TestFunction::ExpSin, &g0)?;
    let trunc = apply_test_function(&ref_model, &TestFunction::ExpSin.truncate(p.laurent_degree), &g0)?;
    let diff: f64 = exact.iter().zip(&trunc).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
    let norm: f64 = exact.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    r.check(Check::at_most("laurent_truncation_consistency", diff / norm, 1e-10));
    let finite = m_errors.iter().chain(&q_errors).flatten().all(|e| e.is_finite());
    r.check(Check::flag("errors_finite", finite));

    let ms: Vec<f64> = p.m_values.iter().map(|&m| m as f64).collect();
    let ns: Vec<f64> = p.q_values.iter().map(|&q| 3.0 * q as f64).collect();
    for j in 0..3 {
        let em: Vec<f64> = m_errors.iter().map(|e| e[j]).collect();
        let en: Vec<f64> = q_errors.iter().map(|e| e[j]).collect();
        r.metric(&format!("slope_M_x{}", j + 1), loglog_slope(&ms, &em));
        r.metric(&format!("slope_N_x{}", j + 1), loglog_slope(&ns, &en));
    }

    let mut t = String::from("M,err_x1,err_x2,err_x3\n");
    for (m, e) in p.m_values.iter().zip(&m_errors) {
        let _ = writeln!(t, "{m},{:?},{:?},{:?}", e[0], e[1], e[2]);
    }
    r.file("pv_vs_M.csv", t);
    let mut t = String::from("N,err_x1,err_x2,err_x3\n");
    for (q, e) in p.q_values.iter().zip(&q_errors) {
        let _ = writeln!(t, "{},{:?},{:?},{:?}", 3 * q, e[0], e[1], e[2]);
    }
    r.file("pv_vs_N.csv", t);
    let mut t = String::from("t,re_x1,im_x1,re_x2,im_x2,re_x3,im_x3\n");
    let vals: Vec<Vec<C64>> = ref_h.iter().map(|h| numkit::matvec(&reference.psi_x, h)).collect();
    for i in 0..p.m_ref.min(500) {
        let _ = write!(t, "{i}");
        for v in &vals {
            let _ = write!(t, ",{:?},{:?}", v[i].re, v[i].im);
        }
        t.push('\n');
    }
    r.file("pv_values.csv", t);
    Ok(r)
}

// ------------------------------------------------------------- pendulum

#[derive(Deserialize, Clone)]
#[serde(deny_unknown_fields, default)]
struct PendulumParams {
    #[serde(rename = "M1")]
    m1: usize,
    /// Defaults to `M1`.
    #[serde(rename = "M2")]
    m2: Option<usize>,
    #[serde(rename = "N")]
    n: usize,
    bound: f64,
    dt: f64,
    substeps: Option<usize>,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            m1: 50,
            m2: None,
            n: 100,
            bound: 4.0,
            dt: 0.5,
            substeps: None,
        }
    }
}

impl PendulumParams {
    fn data(&self) -> Result<PendulumData> {
        let setup = PendulumSetup {
            m1: self.m1,
            m2: self.m2.unwrap_or(self.m1),
            bound: self.bound,
            n: self.n,
            dt: self.dt,
            substeps: self.substeps.unwrap_or_else(|| default_substeps(self.dt)),
        };
        PendulumData::generate(&setup, &Observable::PendulumG)
    }
}

fn pendulum_eigs(p: PendulumParams) -> Result<Report> {
    let gp = p.data()?.data_matrices()?.gram()?;
    let mp = mpedmd(&gp)?;
    let e = edmd(&gp)?;
    let inside = e.eigvals.iter().filter(|l| l.norm() < 0.99).count() as f64 / e.size() as f64;
    let mp_pairs = eigenpairs(&mp, &gp)?;
    let e_pairs = eigenpairs(&e, &gp)?;
    let mut r = Report::default();
    r.check(Check::at_most("mpedmd_max_modulus_deviation", max_modulus_deviation(&mp), 1e-12));
    r.check(Check::at_least("edmd_fraction_modulus_below_0.99", inside, 0.2));
    r.metric("mpedmd_mean_residual", mean(&mp_pairs.iter().map(|q| q.residual).collect::<Vec<_>>()));
    r.metric("edmd_mean_residual", mean(&e_pairs.iter().map(|q| q.residual).collect::<Vec<_>>()));
    r.metric("edmd_reliable", e.reliable);
    r.file("eigs_mpedmd.csv", eigenpairs_csv(&mp_pairs));
    r.file("eigs_edmd.csv", eigenpairs_csv(&e_pairs));
    Ok(r)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EigenfunctionParams {
    #[serde(flatten)]
    system: PendulumParams,
    /// Target eigenvalue phases; the nearest eigenvalue is plotted.
    phases: Vec<f64>,
}

impl Default for EigenfunctionParams {
    fn default() -> Self {
        Self {
            system: PendulumParams::default(),
            phases: vec![0.25, 0.5, 1.0, 2.0],
        }
    }
}

fn pendulum_eigenfunctions(p: EigenfunctionParams) -> Result<Report> {
    let data = p.system.data()?;
    let dm = data.data_matrices()?;
    let gp = dm.gram()?;
    let mp = mpedmd(&gp)?;
    let e = edmd(&gp)?;
    let mut r = Report::default();
    let mut selected = String::from("method,target_phase,index,re,im,residual\n");
    let mut finite = true;
    for (name, model) in [("mpedmd", &mp), ("edmd", &e)] {
        let res = residuals(model, &gp)?;
        for (k, &t) in p.phases.iter().enumerate() {
            let target = C64::from_polar(1.0, t);
            let j = (0..model.size())
                .min_by(|&a, &b| (model.eigvals[a] - target).norm().total_cmp(&(model.eigvals[b] - target).norm()))
                .ok_or_else(|| Error::Invalid("empty model".into()))?;
            let l = model.eigvals[j];
            let _ = writeln!(selected, "{name},{t:?},{j},{:?},{:?},{:?}", l.re, l.im, res[j]);
            let values = numkit::matvec(&dm.psi_x, &numkit::column(&model.eigvecs, j));
            let mut csv = String::from("x1,x2,re,im,log10_abs\n");
            for (m, v) in values.iter().enumerate() {
                finite &= v.re.is_finite() && v.im.is_finite();
                let _ = writeln!(
                    csv,
                    "{:?},{:?},{:?},{:?},{:?}",
                    data.grid.nodes[(m, 0)],
                    data.grid.nodes[(m, 1)],
                    v.re,
                    v.im,
                    v.norm().max(1e-300).log10()
                );
            }
            r.file(format!("eigenfunction_{name}_{k}.csv"), csv);
        }
    }
    r.check(Check::at_most("mpedmd_max_modulus_deviation", max_modulus_deviation(&mp), 1e-12));
    r.check(Check::flag("eigenfunctions_finite", finite));
    r.file("selected.csv", selected);
    Ok(r)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct NoiseParams {
    #[serde(flatten)]
    system: PendulumParams,
    taus: Vec<f64>,
    seeds: usize,
    /// Noise level at which mpEDMD must beat EDMD for every seed.
    check_tau: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            system: PendulumParams::default(),
            taus: vec![0.0, 0.02, 0.05, 0.1, 0.2],
            seeds: 5,
            check_tau: 0.1,
        }
    }
}

struct NoisePoint {
    tau_index: usize,
    seed: usize,
    mp: f64,
    edmd: f64,
    moddev: f64,
}

fn noisy_gram(dm: &dictionary::DataMatrices, tau: f64, seed: u64) -> Result<GramPair> {
    let px = perturb(&dm.psi_x, tau, sub_seed(seed, 0));
    let py = perturb(&dm.psi_y, tau, sub_seed(seed, 1));
    gram(&px, &py, &dm.weights)
}

fn pendulum_noise(p: NoiseParams, seed: u64) -> Result<Report> {
    let ti = p
        .taus
        .iter()
        .position(|&t| t == p.check_tau)
        .ok_or_else(|| Error::Invalid(format!("check_tau {} is not among taus", p.check_tau)))?;
    if p.seeds == 0 || p.taus.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::Invalid("need at least one seed and nonnegative noise levels".into()));
    }
    let dm = p.system.data()?.data_matrices()?;
    let clean = dm.gram()?;
    let jobs: Vec<(usize, usize)> = (0..p.taus.len()).flat_map(|t| (0..p.seeds).map(move |s| (t, s))).collect();
    let points: Vec<NoisePoint> = jobs
        .par_iter()
        .map(|&(t, s)| -> Result<NoisePoint> {
            let ng = noisy_gram(&dm, p.taus[t], sub_seed(seed, (t * p.seeds + s) as u64))?;
            let mp = mpedmd(&ng)?;
            let e = edmd(&ng)?;
            Ok(NoisePoint {
                tau_index: t,
                seed: s,
                mp: mean(&residuals(&mp, &clean)?),
                edmd: mean(&residuals(&e, &clean)?),
                moddev: max_modulus_deviation(&mp),
            })
        })
        .collect::<Result<_>>()?;

    let mut csv = String::from("tau,seed,mean_residual_mpedmd,mean_residual_edmd,max_modulus_deviation_mpedmd\n");
    for q in &points {
        let _ = writeln!(csv, "{:?},{},{:?},{:?},{:?}", p.taus[q.tau_index], q.seed, q.mp, q.edmd, q.moddev);
    }
    let at: Vec<&NoisePoint> = points.iter().filter(|q| q.tau_index == ti).collect();
    let wins = at.iter().filter(|q| q.mp < q.edmd).count();
    let worst_dev = points.iter().map(|q| q.moddev).fold(0.0, f64::max);
    let mut r = Report::default();
    r.check(Check::flag("mpedmd_below_edmd_every_seed", wins == at.len()));
    r.check(Check::at_most("mpedmd_max_modulus_deviation", worst_dev, 1e-12));
    r.metric("seeds_won", wins as f64);
    r.metric("mean_residual_mpedmd_at_check_tau", mean(&at.iter().map(|q| q.mp).collect::<Vec<_>>()));
    r.metric("mean_residual_edmd_at_check_tau", mean(&at.iter().map(|q| q.edmd).collect::<Vec<_>>()));
    r.file("noise.csv", csv);
    Ok(r)
}

// --------------------------------------------------------------- energy

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EnergyParams {
    /// Random Gram-pair instances checked for conservation.
    instances: usize,
    #[serde(rename = "N_random")]
    n_random: usize,
    eps: f64,
    horizon: u64,
    edmd_horizon: u64,
    tau: f64,
    pendulum: PendulumParams,
}

impl Default for EnergyParams {
    fn default() -> Self {
        Self {
            instances: 10,
            n_random: 16,
            eps: 0.5,
            horizon: 10_000,
            edmd_horizon: 1000,
            tau: 0.1,
            pendulum: PendulumParams::default(),
        }
    }
}

fn max_relative_drift(model: &KoopmanModel, a0: &[C64], horizon: u64) -> Result<(f64, Vec<f64>)> {
    let e0 = coeff_energy(model, a0, 0)?;
    let mut worst: f64 = 0.0;
    let mut rel = Vec::with_capacity(horizon as usize + 1);
    for n in 0..=horizon {
        let v = coeff_energy(model, a0, n)? / e0;
        worst = worst.max((v - 1.0).abs());
        rel.push(v);
    }
    Ok((worst, rel))
}

fn energy_conservation(p: EnergyParams, seed: u64) -> Result<Report> {
    if p.instances == 0 || p.edmd_horizon > p.horizon {
        return Err(Error::Invalid("need instances >= 1 and edmd_horizon <= horizon".into()));
    }
    let random_drifts: Vec<(f64, Vec<f64>)> = (0..p.instances as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = sub_rng(seed, k);
            let gp = random::gram_pair(&mut rng, p.n_random, p.eps);
            let a0 = random::complex_vector(&mut rng, p.n_random);
            max_relative_drift(&mpedmd(&gp)?, &a0, p.horizon)
        })
        .collect::<Result<_>>()?;

    let dm = p.pendulum.data()?.data_matrices()?;
    let ng = noisy_gram(&dm, p.tau, sub_seed(seed, 1_000_000))?;
    let mp = mpedmd(&ng)?;
    let e = edmd(&ng)?;
    let a0 = random::complex_vector(&mut sub_rng(seed, 1_000_001), mp.size());
    let (mp_drift, mp_rel) = max_relative_drift(&mp, &a0, p.horizon)?;
    let ed = energy_series(&e, &a0, p.edmd_horizon)?;
    let ed_rel: Vec<f64> = ed.iter().map(|v| v / ed[0]).collect();
    let ed_drift = ed_rel.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let first = ed_rel.iter().position(|v| (v - 1.0).abs() > 0.01);

    let worst_random = random_drifts.iter().map(|d| d.0).fold(0.0, f64::max);
    let mut csv = String::from("n,mpedmd_random,mpedmd_pendulum,edmd_pendulum\n");
    for n in 0..=p.horizon as usize {
        if n > p.edmd_horizon as usize && n % 100 != 0 {
            continue;
        }
        let edv = ed_rel.get(n).map(|v| format!("{v:?}")).unwrap_or_default();
        let _ = writeln!(csv, "{n},{:?},{:?},{edv}", random_drifts[0].1[n], mp_rel[n]);
    }
    let mut r = Report::default();
    r.check(Check::at_most("mpedmd_max_relative_drift", worst_random.max(mp_drift), 1e-9));
    r.check(Check::at_least("edmd_max_relative_drift", ed_drift, 0.01));
    r.metric("mpedmd_random_max_drift", worst_random);
    r.metric("mpedmd_pendulum_max_drift", mp_drift);
    r.metric("edmd_first_step_above_1pct", first.map(|n| n as f64).unwrap_or(-1.0));
    r.file("energy.csv", csv);
    Ok(r)
}
