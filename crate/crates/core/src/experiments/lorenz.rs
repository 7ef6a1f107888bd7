//! Lorenz-63 delay-embedding pipelines.

use crate::decomp::{mpedmd, KoopmanModel};
use crate::dictionary::{delay_gram, observable_series, GramPair, Observable};
use crate::error::{Error, Result};
use crate::forecast::unit_coefficients;
use crate::numkit::C64;
use crate::sampling::{default_substeps, lorenz_trajectory, LorenzParams, Trajectory};
use crate::spectral::{scalar_measure, SpectralMeasure};

/// Samples a trajectory on the attractor: integrate from `x0`, drop
/// `burn_in` samples, keep `len` states.
pub fn attractor_trajectory(
    x0: [f64; 3],
    dt: f64,
    burn_in: usize,
    len: usize,
    params: LorenzParams,
    substeps: Option<usize>,
) -> Result<Trajectory> {
    if len < 2 {
        return Err(Error::Invalid("trajectory needs at least two states".into()));
    }
    let substeps = substeps.unwrap_or_else(|| default_substeps(dt));
    let full = lorenz_trajectory(x0, dt, burn_in + len - 1, params, substeps)?;
    let states = faer::Mat::from_fn(len, 3, |i, k| full.states[(burn_in + i, k)]);
    Trajectory::new(states, dt)
}

/// Scalar series `g(s_t)` used by every delay fit on this trajectory.
pub fn series(traj: &Trajectory, g: &Observable) -> Result<Vec<C64>> {
    observable_series(traj, g, traj.len())
}

/// mpEDMD on the delay dictionary `{g, Kg, .., K^{N-1} g}` from the first
/// `m + n` samples of `z`.
pub fn delay_fit(z: &[C64], n: usize, m: usize) -> Result<(GramPair, KoopmanModel)> {
    let gp = delay_gram(z, n, m)?;
    let model = mpedmd(&gp)?;
    Ok((gp, model))
}

/// `mu_g^{(N,M)}` for the base observable (first delay coordinate).
pub fn delay_measure(z: &[C64], n: usize, m: usize) -> Result<SpectralMeasure> {
    let (_, model) = delay_fit(z, n, m)?;
    scalar_measure(&model, &unit_coefficients(n, 0))
}
