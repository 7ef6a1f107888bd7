//! Trajectory generation for the benchmark systems and snapshot assembly
//! under the three sampling regimes (random, quadrature, ergodic).

use std::f64::consts::PI;

use faer::Mat;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{cplx, CMatrix, RMatrix};

pub mod io;

/// Largest RK4 substep used when the caller does not choose one.
pub const MAX_DEFAULT_SUBSTEP: f64 = 0.005;

/// States `s_0 .. s_M` sampled every `dt`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// One state per row.
    pub states: RMatrix,
    pub dt: f64,
}

impl Trajectory {
    pub fn new(states: RMatrix, dt: f64) -> Result<Self> {
        if states.nrows() < 2 {
            return Err(Error::TooShort {
                needed: 2,
                have: states.nrows(),
            });
        }
        if !(dt > 0.0) {
            return Err(Error::Invalid(format!("time step must be positive, got {dt}")));
        }
        Ok(Self { states, dt })
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn state(&self, i: usize) -> Vec<f64> {
        (0..self.dim()).map(|k| self.states[(i, k)]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorenzParams {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl Default for LorenzParams {
    fn default() -> Self {
        Self {
            sigma: 10.0,
            rho: 28.0,
            beta: 8.0 / 3.0,
        }
    }
}

pub fn default_substeps(dt: f64) -> usize {
    ((dt / MAX_DEFAULT_SUBSTEP).ceil() as usize).max(1)
}

fn rk4_step<const D: usize>(f: &impl Fn(&[f64; D]) -> [f64; D], x: &[f64; D], h: f64) -> [f64; D] {
    let axpy = |a: &[f64; D], s: f64, b: &[f64; D]| -> [f64; D] {
        let mut out = *a;
        for i in 0..D {
            out[i] += s * b[i];
        }
        out
    };
    let k1 = f(x);
    let k2 = f(&axpy(x, 0.5 * h, &k1));
    let k3 = f(&axpy(x, 0.5 * h, &k2));
    let k4 = f(&axpy(x, h, &k3));
    let mut out = *x;
    for i in 0..D {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Advances `x` by `dt` using `substeps` classical RK4 steps.
fn advance<const D: usize>(
    f: &impl Fn(&[f64; D]) -> [f64; D],
    x: &[f64; D],
    dt: f64,
    substeps: usize,
) -> [f64; D] {
    let h = dt / substeps as f64;
    let mut s = *x;
    for _ in 0..substeps {
        s = rk4_step(f, &s, h);
    }
    s
}

fn integrate<const D: usize>(
    f: impl Fn(&[f64; D]) -> [f64; D],
    x0: [f64; D],
    dt: f64,
    steps: usize,
    substeps: usize,
    post: impl Fn(&mut [f64; D]),
) -> Result<Trajectory> {
    if !(dt > 0.0) {
        return Err(Error::Invalid(format!("time step must be positive, got {dt}")));
    }
    if substeps == 0 {
        return Err(Error::Invalid("substeps must be at least 1".into()));
    }
    let mut states = Mat::zeros(steps + 1, D);
    let mut s = x0;
    post(&mut s);
    for t in 0..=steps {
        if t > 0 {
            s = advance(&f, &s, dt, substeps);
            post(&mut s);
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trajectory state"));
        }
        for k in 0..D {
            states[(t, k)] = s[k];
        }
    }
    Trajectory::new(states, dt)
}

pub fn lorenz_field(p: LorenzParams) -> impl Fn(&[f64; 3]) -> [f64; 3] {
    move |x| {
        [
            p.sigma * (x[1] - x[0]),
            x[0] * (p.rho - x[2]) - x[1],
            x[0] * x[1] - p.beta * x[2],
        ]
    }
}

/// `M + 1` states of the Lorenz system sampled every `dt`.
pub fn lorenz_trajectory(
    x0: [f64; 3],
    dt: f64,
    m: usize,
    params: LorenzParams,
    substeps: usize,
) -> Result<Trajectory> {
    integrate(lorenz_field(params), x0, dt, m, substeps, |_| {})
}

fn pendulum_field(x: &[f64; 2]) -> [f64; 2] {
    [x[1], -x[0].sin()]
}

/// Maps an angle into `[-pi, pi)`.
pub fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

pub fn pendulum_energy(x: &[f64]) -> f64 {
    0.5 * x[1] * x[1] - x[0].cos()
}

/// `M + 1` pendulum states; the angle is kept in `[-pi, pi)`.
pub fn pendulum_trajectory(x0: [f64; 2], dt: f64, m: usize, substeps: usize) -> Result<Trajectory> {
    integrate(pendulum_field, x0, dt, m, substeps, |s| s[0] = wrap_angle(s[0]))
}

/// One sampling step of the pendulum flow.
pub fn pendulum_flow(x: [f64; 2], dt: f64, substeps: usize) -> [f64; 2] {
    let mut s = advance(&pendulum_field, &x, dt, substeps);
    s[0] = wrap_angle(s[0]);
    s
}

/// Circle rotation `theta -> theta + alpha mod 2 pi`, reported in `[0, 2 pi)`.
pub fn rotation_step(theta: f64, alpha: f64) -> f64 {
    (theta + alpha).rem_euclid(2.0 * PI)
}

pub fn rotation_trajectory(theta0: f64, alpha: f64, m: usize) -> Result<Trajectory> {
    let mut states = Mat::zeros(m + 1, 1);
    let mut t = theta0.rem_euclid(2.0 * PI);
    for i in 0..=m {
        states[(i, 0)] = t;
        t = rotation_step(t, alpha);
    }
    Trajectory::new(states, 1.0)
}

/// One-sided shift on the naturals: `x -> x - 1` for `x > 1`, else `0`.
pub fn shift_map(x: f64) -> f64 {
    if x > 1.0 {
        x - 1.0
    } else {
        0.0
    }
}

pub fn shift_trajectory(start: usize, m: usize) -> Result<Trajectory> {
    let mut states = Mat::zeros(m + 1, 1);
    let mut x = start as f64;
    for i in 0..=m {
        states[(i, 0)] = x;
        x = shift_map(x);
    }
    Trajectory::new(states, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Random,
    Quadrature,
    Ergodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Weighting {
    /// `w_m = 1/M`
    Uniform,
    /// `w_m = 1` (counting measure)
    Unit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub system: String,
    pub dt: Option<f64>,
    pub regime: Regime,
}

impl Default for SnapshotMeta {
    fn default() -> Self {
        Self {
            system: "unknown".into(),
            dt: None,
            regime: Regime::Random,
        }
    }
}

/// Paired samples `y^(m) = F(x^(m))` with quadrature weights.
#[derive(Debug, Clone)]
pub struct SnapshotSet {
    pub x: RMatrix,
    pub y: RMatrix,
    pub weights: Vec<f64>,
    pub meta: SnapshotMeta,
}

impl SnapshotSet {
    pub fn new(x: RMatrix, y: RMatrix, weights: Vec<f64>, meta: SnapshotMeta) -> Result<Self> {
        if x.nrows() != y.nrows() || x.ncols() != y.ncols() {
            return Err(Error::Shape(format!(
                "X is {}x{} but Y is {}x{}",
                x.nrows(),
                x.ncols(),
                y.nrows(),
                y.ncols()
            )));
        }
        if weights.len() != x.nrows() {
            return Err(Error::Shape(format!(
                "{} weights for {} snapshots",
                weights.len(),
                x.nrows()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(Error::Invalid(format!("weights must be finite and nonnegative, found {w}")));
        }
        if !(weights.iter().sum::<f64>() > 0.0) {
            return Err(Error::Invalid("weights must have positive sum".into()));
        }
        Ok(Self { x, y, weights, meta })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// The states `x^(1), .., x^(M), y^(M)` when the pairs come from one
    /// contiguous trajectory (`y^(m) = x^(m+1)`), otherwise `None`.
    pub fn as_trajectory(&self, dt: f64) -> Option<Trajectory> {
        let m = self.len();
        let d = self.dim();
        for i in 0..m.saturating_sub(1) {
            if (0..d).any(|k| self.y[(i, k)] != self.x[(i + 1, k)]) {
                return None;
            }
        }
        let states = Mat::from_fn(m + 1, d, |i, k| if i < m { self.x[(i, k)] } else { self.y[(m - 1, k)] });
        Trajectory::new(states, dt).ok()
    }
}

/// Ergodic sampling along one trajectory: `x^(m) = s_{m-1}`, `y^(m) = s_m`.
pub fn snapshots_from_trajectory(t: &Trajectory, weighting: Weighting) -> Result<SnapshotSet> {
    if t.len() < 2 {
        return Err(Error::TooShort { needed: 2, have: t.len() });
    }
    let m = t.len() - 1;
    let d = t.dim();
    let x = Mat::from_fn(m, d, |i, k| t.states[(i, k)]);
    let y = Mat::from_fn(m, d, |i, k| t.states[(i + 1, k)]);
    let w = match weighting {
        Weighting::Uniform => 1.0 / m as f64,
        Weighting::Unit => 1.0,
    };
    SnapshotSet::new(
        x,
        y,
        vec![w; m],
        SnapshotMeta {
            system: "trajectory".into(),
            dt: Some(t.dt),
            regime: Regime::Ergodic,
        },
    )
}

/// Nodes and weights of a two-dimensional product rule.
#[derive(Debug, Clone)]
pub struct QuadratureGrid {
    /// `M1*M2` rows of `(x1, x2)`, with `x1` varying slowest.
    pub nodes: RMatrix,
    pub weights: Vec<f64>,
}

/// Periodic trapezoid rule on `[-pi, pi)` times a truncated trapezoid rule on
/// `[-bound, bound]`.
pub fn tensor_trapezoid_grid(m1: usize, m2: usize, bound: f64) -> Result<QuadratureGrid> {
    if m1 < 2 || m2 < 2 {
        return Err(Error::Invalid(format!("need at least 2 points per direction, got {m1}x{m2}")));
    }
    if !(bound > 0.0) {
        return Err(Error::Invalid(format!("bound must be positive, got {bound}")));
    }
    let h1 = 2.0 * PI / m1 as f64;
    let h2 = 2.0 * bound / (m2 - 1) as f64;
    let mut nodes = Mat::zeros(m1 * m2, 2);
    let mut weights = Vec::with_capacity(m1 * m2);
    for a in 0..m1 {
        for b in 0..m2 {
            let r = a * m2 + b;
            nodes[(r, 0)] = -PI + a as f64 * h1;
            nodes[(r, 1)] = -bound + b as f64 * h2;
            let w2 = if b == 0 || b == m2 - 1 { 0.5 * h2 } else { h2 };
            weights.push(h1 * w2);
        }
    }
    Ok(QuadratureGrid { nodes, weights })
}

/// Quadrature-regime snapshots on the tensor trapezoid grid, with `y` given
/// by the one-step map `flow`.
pub fn tensor_trapezoid_snapshots(
    m1: usize,
    m2: usize,
    bound: f64,
    flow: impl Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<SnapshotSet> {
    let grid = tensor_trapezoid_grid(m1, m2, bound)?;
    let m = grid.weights.len();
    let mut y = Mat::zeros(m, 2);
    for r in 0..m {
        let next = flow(&[grid.nodes[(r, 0)], grid.nodes[(r, 1)]])?;
        if next.len() != 2 {
            return Err(Error::Shape(format!("flow returned {} components, expected 2", next.len())));
        }
        y[(r, 0)] = next[0];
        y[(r, 1)] = next[1];
    }
    SnapshotSet::new(
        grid.nodes,
        y,
        grid.weights,
        SnapshotMeta {
            system: "grid".into(),
            dt: None,
            regime: Regime::Quadrature,
        },
    )
}

/// Adds complex Gaussian noise of relative size `tau`.
///
/// Entries of the noise are i.i.d. with independent real and imaginary
/// parts of variance 1/2, scaled by the RMS entry magnitude of `psi`, so the
/// expected relative Frobenius perturbation is `tau`.
pub fn perturb(psi: &CMatrix, tau: f64, seed: u64) -> CMatrix {
    if tau == 0.0 {
        return psi.clone();
    }
    let (m, n) = (psi.nrows(), psi.ncols());
    let rms = psi.norm_l2() / ((m * n) as f64).sqrt();
    let s = tau * rms * 0.5f64.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = psi.clone();
    for j in 0..n {
        for i in 0..m {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            out[(i, j)] += cplx(s * re, s * im);
        }
    }
    out
}
