//! Observable dictionaries, the data matrices `Psi_X`, `Psi_Y`, and the Gram
//! pair `G = Psi_X* W Psi_X`, `A = Psi_X* W Psi_Y`.

use std::fmt;
use std::str::FromStr;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numkit::{self, cplx, hermitian_part, CMatrix, RMatrix, C64};
use crate::sampling::{SnapshotSet, Trajectory};

/// A closed-form scalar observable `g: R^d -> C`.
#[derive(Debug, Clone, PartialEq)]
pub enum Observable {
    /// `scale * x_index` (zero-based index).
    Coordinate { index: usize, scale: f64 },
    /// `exp(i k x_0)`
    Fourier(i32),
    /// `exp(i x_0) x_1 exp(-x_1^2 / 2)`
    PendulumG,
    /// `1` at the integer state `k`, `0` elsewhere.
    Indicator(i64),
    /// `exp(cos x_0)`
    ExpCos,
}

impl Observable {
    pub fn coordinate(index: usize) -> Self {
        Observable::Coordinate { index, scale: 1.0 }
    }

    pub fn eval(&self, x: &[f64]) -> C64 {
        match *self {
            Observable::Coordinate { index, scale } => cplx(scale * x[index], 0.0),
            Observable::Fourier(k) => C64::from_polar(1.0, k as f64 * x[0]),
            Observable::PendulumG => C64::from_polar(x[1] * (-0.5 * x[1] * x[1]).exp(), x[0]),
            Observable::Indicator(k) => cplx(if x[0] == k as f64 { 1.0 } else { 0.0 }, 0.0),
            Observable::ExpCos => cplx(x[0].cos().exp(), 0.0),
        }
    }

    /// Smallest state dimension the observable can be evaluated on.
    pub fn min_dim(&self) -> usize {
        match *self {
            Observable::Coordinate { index, .. } => index + 1,
            Observable::PendulumG => 2,
            _ => 1,
        }
    }

    pub fn with_scale(&self, c: f64) -> Self {
        match *self {
            Observable::Coordinate { index, scale } => Observable::Coordinate { index, scale: scale * c },
            ref other => other.clone(),
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::Coordinate { index, .. } => write!(f, "x{}", index + 1),
            Observable::Fourier(k) => write!(f, "fourier:{k}"),
            Observable::PendulumG => write!(f, "pendulum_g"),
            Observable::Indicator(k) => write!(f, "indicator:{k}"),
            Observable::ExpCos => write!(f, "exp_cos"),
        }
    }
}

/// Builtin names: `x1`, `x2`, .. (coordinates), `fourier:<k>`, `pendulum_g`,
/// `indicator:<k>`, `exp_cos`.
impl FromStr for Observable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("unknown observable {s:?}"));
        if let Some(k) = s.strip_prefix("fourier:") {
            return Ok(Observable::Fourier(k.parse().map_err(|_| bad())?));
        }
        if let Some(k) = s.strip_prefix("indicator:") {
            return Ok(Observable::Indicator(k.parse().map_err(|_| bad())?));
        }
        match s {
            "pendulum_g" => Ok(Observable::PendulumG),
            "exp_cos" => Ok(Observable::ExpCos),
            _ => {
                let j: usize = s.strip_prefix('x').ok_or_else(bad)?.parse().map_err(|_| bad())?;
                if j == 0 {
                    return Err(bad());
                }
                Ok(Observable::coordinate(j - 1))
            }
        }
    }
}

/// A finite family `psi_1 .. psi_N` evaluable at single states.
#[derive(Debug, Clone, PartialEq)]
pub enum Dictionary {
    Explicit(Vec<Observable>),
    /// `psi_j(x) = x_j`
    Linear { dim: usize },
    /// `psi_j(x) = <x, mode_j>` with modes stored as the columns of a `d x r`
    /// matrix.
    Pod { modes: RMatrix },
}

impl Dictionary {
    /// `{exp(i k x_0) : -kmax <= k <= kmax}`
    pub fn fourier(kmax: i32) -> Self {
        Dictionary::Explicit((-kmax..=kmax).map(Observable::Fourier).collect())
    }

    /// `{e_1, .., e_n}` on the naturals.
    pub fn indicators(n: usize) -> Self {
        Dictionary::Explicit((1..=n as i64).map(Observable::Indicator).collect())
    }

    pub fn size(&self) -> usize {
        match self {
            Dictionary::Explicit(obs) => obs.len(),
            Dictionary::Linear { dim } => *dim,
            Dictionary::Pod { modes } => modes.ncols(),
        }
    }

    fn min_dim(&self) -> usize {
        match self {
            Dictionary::Explicit(obs) => obs.iter().map(|o| o.min_dim()).max().unwrap_or(0),
            Dictionary::Linear { dim } => *dim,
            Dictionary::Pod { modes } => modes.nrows(),
        }
    }

    /// The row `Psi(x)`.
    pub fn eval_row(&self, x: &[f64]) -> Vec<C64> {
        match self {
            Dictionary::Explicit(obs) => obs.iter().map(|o| o.eval(x)).collect(),
            Dictionary::Linear { dim } => x[..*dim].iter().map(|&v| cplx(v, 0.0)).collect(),
            Dictionary::Pod { modes } => (0..modes.ncols())
                .map(|j| cplx((0..modes.nrows()).map(|i| x[i] * modes[(i, j)]).sum(), 0.0))
                .collect(),
        }
    }
}

/// Evaluates the dictionary at each row of `states` (`M x d`), giving `M x N`.
pub fn evaluate(dict: &Dictionary, states: &RMatrix) -> Result<CMatrix> {
    let d = states.ncols();
    if d < dict.min_dim() {
        return Err(Error::Shape(format!(
            "dictionary needs states of dimension {}, got {d}",
            dict.min_dim()
        )));
    }
    let n = dict.size();
    let mut out = Mat::zeros(states.nrows(), n);
    let mut x = vec![0.0; d];
    for m in 0..states.nrows() {
        for (k, v) in x.iter_mut().enumerate() {
            *v = states[(m, k)];
        }
        for (j, v) in dict.eval_row(&x).into_iter().enumerate() {
            out[(m, j)] = v;
        }
    }
    numkit::check_finite(&out, "dictionary evaluation")?;
    Ok(out)
}

/// `1 / sqrt(sum_m w_m |g(x^(m))|^2)`, the empirical constant that gives `g`
/// unit norm under the sampling measure.
pub fn empirical_normalization(samples: &[C64], weights: &[f64]) -> Result<f64> {
    let s: f64 = samples.iter().zip(weights).map(|(g, w)| w * g.norm_sqr()).sum();
    if !(s > 0.0) {
        return Err(Error::ZeroObservable);
    }
    Ok(1.0 / s.sqrt())
}

/// Data matrices for one fit.
#[derive(Debug, Clone)]
pub struct DataMatrices {
    pub psi_x: CMatrix,
    pub psi_y: CMatrix,
    pub weights: Vec<f64>,
}

impl DataMatrices {
    pub fn gram(&self) -> Result<GramPair> {
        gram(&self.psi_x, &self.psi_y, &self.weights)
    }
}

/// Splits an `M x (N+1)` table of `g(F^j(x^(m)))` into
/// `Psi_X = [.., 0..N]` and `Psi_Y = [.., 1..N+1]`.
pub fn delay_from_samples(samples: &CMatrix, weights: Vec<f64>) -> Result<DataMatrices> {
    let (m, n1) = (samples.nrows(), samples.ncols());
    if n1 < 2 {
        return Err(Error::Shape("need at least two delay columns".into()));
    }
    if weights.len() != m {
        return Err(Error::Shape(format!("{} weights for {m} rows", weights.len())));
    }
    let n = n1 - 1;
    Ok(DataMatrices {
        psi_x: Mat::from_fn(m, n, |i, j| samples[(i, j)]),
        psi_y: Mat::from_fn(m, n, |i, j| samples[(i, j + 1)]),
        weights,
    })
}

fn check_delay_length(traj: &Trajectory, n: usize, m: usize) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(Error::Invalid("delay depth and snapshot count must be positive".into()));
    }
    if traj.len() < m + n {
        return Err(Error::TooShort {
            needed: m + n,
            have: traj.len(),
        });
    }
    Ok(())
}

/// Time-delay (Krylov) dictionary `{g, Kg, .., K^{N-1} g}` realized along
/// one trajectory: `Psi_X[m, j] = g(s_{m+j})`, `Psi_Y[m, j] = g(s_{m+j+1})`,
/// weights `1/M`.
pub fn delay_matrices(traj: &Trajectory, g: &Observable, n: usize, m: usize) -> Result<DataMatrices> {
    check_delay_length(traj, n, m)?;
    let z = observable_series(traj, g, m + n)?;
    let samples = Mat::from_fn(m, n + 1, |i, j| z[i + j]);
    delay_from_samples(&samples, vec![1.0 / m as f64; m])
}

/// Interleaved delay dictionary
/// `{g_1, .., g_k, K g_1, .., K g_k, .., K^{q-1} g_k}` along one trajectory.
pub fn delay_matrices_multi(traj: &Trajectory, gs: &[Observable], q: usize, m: usize) -> Result<DataMatrices> {
    check_delay_length(traj, q, m)?;
    let k = gs.len();
    if k == 0 {
        return Err(Error::Invalid("no observables".into()));
    }
    let series: Vec<Vec<C64>> = gs
        .iter()
        .map(|g| observable_series(traj, g, m + q))
        .collect::<Result<_>>()?;
    let psi = |shift: usize| Mat::from_fn(m, q * k, |i, c| series[c % k][i + c / k + shift]);
    Ok(DataMatrices {
        psi_x: psi(0),
        psi_y: psi(1),
        weights: vec![1.0 / m as f64; m],
    })
}

/// `g(s_0), .., g(s_{len-1})`.
pub fn observable_series(traj: &Trajectory, g: &Observable, len: usize) -> Result<Vec<C64>> {
    if traj.dim() < g.min_dim() {
        return Err(Error::Shape(format!("observable {g} needs dimension {}", g.min_dim())));
    }
    if traj.len() < len {
        return Err(Error::TooShort {
            needed: len,
            have: traj.len(),
        });
    }
    let z: Vec<C64> = (0..len).map(|t| g.eval(&traj.state(t))).collect();
    if z.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
        return Err(Error::NonFinite("observable value"));
    }
    Ok(z)
}

/// Gram pair of the single-trajectory delay dictionary computed from the
/// scalar series `z_t = g(s_t)` without forming `Psi_X`.
///
/// With `H[j,k] = (1/M) sum_{m<M} conj(z_{m+j}) z_{m+k}` for `j,k <= N`,
/// `G = H[0..N, 0..N]` and `A = H[0..N, 1..N+1]`; `H` satisfies
/// `H[j+1,k+1] = H[j,k] + (conj(z_{M+j}) z_{M+k} - conj(z_j) z_k) / M`.
pub fn delay_gram(z: &[C64], n: usize, m: usize) -> Result<GramPair> {
    if n == 0 || m == 0 {
        return Err(Error::Invalid("delay depth and snapshot count must be positive".into()));
    }
    if z.len() < m + n {
        return Err(Error::TooShort {
            needed: m + n,
            have: z.len(),
        });
    }
    let w = 1.0 / m as f64;
    let mut h: CMatrix = Mat::zeros(n + 1, n + 1);
    for k in 0..=n {
        let s: C64 = (0..m).map(|t| z[t].conj() * z[t + k]).sum();
        h[(0, k)] = s * w;
        h[(k, 0)] = (s * w).conj();
    }
    for j in 0..n {
        for k in 0..n {
            // z_{M+n} is never needed: H[n, n] alone would use it and A does not.
            let tail = if j == n - 1 && k == n - 1 && z.len() < m + n + 1 {
                None
            } else {
                Some(z[m + j].conj() * z[m + k])
            };
            let head = z[j].conj() * z[k];
            h[(j + 1, k + 1)] = match tail {
                Some(t) => h[(j, k)] + (t - head) * w,
                None => h[(j, k)] - head * w,
            };
        }
    }
    let g = Mat::from_fn(n, n, |i, j| h[(i, j)]);
    let a = Mat::from_fn(n, n, |i, j| h[(i, j + 1)]);
    Ok(GramPair { g: hermitian_part(&g), a })
}

/// POD dictionary from the top-`rank` right singular vectors of `sqrt(W) X`.
pub fn pod_dictionary(x: &RMatrix, weights: &[f64], rank: usize) -> Result<Dictionary> {
    let (m, d) = (x.nrows(), x.ncols());
    if weights.len() != m {
        return Err(Error::Shape(format!("{} weights for {m} rows", weights.len())));
    }
    if rank == 0 || rank > m.min(d) {
        return Err(Error::Invalid(format!("rank {rank} must lie in 1..={}", m.min(d))));
    }
    let xw = Mat::from_fn(m, d, |i, k| cplx(weights[i].sqrt() * x[(i, k)], 0.0));
    let s = numkit::svd(&xw)?;
    // rows of Vt are the right singular vectors
    let modes = Mat::from_fn(d, rank, |i, j| s.vt[(j, i)].re);
    Ok(Dictionary::Pod { modes })
}

/// `G = Psi_X* W Psi_X` (Hermitian, positive semidefinite) and
/// `A = Psi_X* W Psi_Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramPair {
    pub g: CMatrix,
    pub a: CMatrix,
}

impl GramPair {
    pub fn new(g: CMatrix, a: CMatrix) -> Result<Self> {
        if g.nrows() != g.ncols() || a.nrows() != a.ncols() || g.nrows() != a.nrows() {
            return Err(Error::Shape(format!(
                "G is {}x{}, A is {}x{}",
                g.nrows(),
                g.ncols(),
                a.nrows(),
                a.ncols()
            )));
        }
        numkit::check_finite(&g, "G")?;
        numkit::check_finite(&a, "A")?;
        Ok(Self { g: hermitian_part(&g), a })
    }

    pub fn size(&self) -> usize {
        self.g.nrows()
    }
}

pub fn gram(psi_x: &CMatrix, psi_y: &CMatrix, weights: &[f64]) -> Result<GramPair> {
    if psi_x.nrows() != psi_y.nrows() || psi_x.ncols() != psi_y.ncols() {
        return Err(Error::Shape(format!(
            "Psi_X is {}x{} but Psi_Y is {}x{}",
            psi_x.nrows(),
            psi_x.ncols(),
            psi_y.nrows(),
            psi_y.ncols()
        )));
    }
    if weights.len() != psi_x.nrows() {
        return Err(Error::Shape(format!("{} weights for {} rows", weights.len(), psi_x.nrows())));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::Invalid("weights must be nonnegative".into()));
    }
    let root: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let xw = numkit::scale_rows(psi_x, &root);
    let yw = numkit::scale_rows(psi_y, &root);
    let g = xw.adjoint() * &xw;
    let a = xw.adjoint() * &yw;
    GramPair::new(g, a)
}

/// Gram pair of an explicit dictionary on a snapshot set.
pub fn gram_from_snapshots(dict: &Dictionary, snaps: &SnapshotSet) -> Result<(GramPair, DataMatrices)> {
    let data = DataMatrices {
        psi_x: evaluate(dict, &snaps.x)?,
        psi_y: evaluate(dict, &snaps.y)?,
        weights: snaps.weights.clone(),
    };
    Ok((data.gram()?, data))
}

/// Dictionary descriptor used by configs and stored in model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum DictionarySpec {
    Delay {
        observable: String,
        #[serde(rename = "N")]
        n: usize,
    },
    Linear,
    Fourier {
        kmax: i32,
    },
    Pod {
        rank: usize,
    },
    Indicator {
        #[serde(rename = "N")]
        n: usize,
    },
}

impl DictionarySpec {
    /// Builds the data matrices for this descriptor on a snapshot set. Delay
    /// dictionaries need the pairs to form one contiguous trajectory.
    pub fn data_matrices(&self, snaps: &SnapshotSet) -> Result<DataMatrices> {
        let dict = match self {
            DictionarySpec::Delay { observable, n } => {
                let g: Observable = observable.parse()?;
                let traj = snaps.as_trajectory(snaps.meta.dt.unwrap_or(1.0)).ok_or_else(|| {
                    Error::Invalid("delay dictionary needs snapshots from one contiguous trajectory".into())
                })?;
                let m = traj.len().checked_sub(*n).filter(|&m| m > 0).ok_or(Error::TooShort {
                    needed: n + 1,
                    have: traj.len(),
                })?;
                return delay_matrices(&traj, &g, *n, m);
            }
            other => other.build(snaps)?.expect("non-delay dictionaries are explicit"),
        };
        Ok(gram_from_snapshots(&dict, snaps)?.1)
    }

    /// The state-evaluable dictionary, or `None` for delay dictionaries
    /// (which are only defined along trajectories). POD modes are recomputed
    /// from `snaps`.
    pub fn build(&self, snaps: &SnapshotSet) -> Result<Option<Dictionary>> {
        Ok(Some(match self {
            DictionarySpec::Delay { .. } => return Ok(None),
            DictionarySpec::Linear => Dictionary::Linear { dim: snaps.dim() },
            DictionarySpec::Fourier { kmax } => Dictionary::fourier(*kmax),
            DictionarySpec::Pod { rank } => pod_dictionary(&snaps.x, &snaps.weights, *rank)?,
            DictionarySpec::Indicator { n } => Dictionary::indicators(*n),
        }))
    }

    /// Coefficients of `g` in this dictionary when `g` is itself a member
    /// (the first delay coordinate, a Fourier mode, a coordinate function).
    pub fn coefficients_of(&self, g: &Observable, size: usize) -> Option<Vec<C64>> {
        let unit = |j: usize| {
            let mut v = vec![cplx(0.0, 0.0); size];
            v[j] = cplx(1.0, 0.0);
            v
        };
        match (self, g) {
            (DictionarySpec::Delay { observable, .. }, g) if observable.parse::<Observable>().ok().as_ref() == Some(g) => {
                Some(unit(0))
            }
            (DictionarySpec::Fourier { kmax }, Observable::Fourier(k)) if k.abs() <= *kmax => {
                Some(unit((k + kmax) as usize))
            }
            (DictionarySpec::Linear, Observable::Coordinate { index, scale }) if *index < size => {
                let mut v = unit(*index);
                v[*index] = cplx(*scale, 0.0);
                Some(v)
            }
            (DictionarySpec::Indicator { n }, Observable::Indicator(k)) if *k >= 1 && *k as usize <= *n => {
                Some(unit(*k as usize - 1))
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{
        rotation_trajectory, shift_trajectory, snapshots_from_trajectory, tensor_trapezoid_grid, Weighting,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_and_builtin_evaluation() {
        let states = Mat::from_fn(1, 2, |_, k| [3.0, 4.0][k]);
        let psi = evaluate(&Dictionary::Linear { dim: 2 }, &states).unwrap();
        assert_eq!(psi[(0, 0)], cplx(3.0, 0.0));
        assert_eq!(psi[(0, 1)], cplx(4.0, 0.0));

        let g = Observable::PendulumG.eval(&[0.0, 1.0]);
        assert!((g - cplx((-0.5f64).exp(), 0.0)).norm() < 1e-15);

        let row = Dictionary::fourier(3).eval_row(&[0.0]);
        assert_eq!(row.len(), 7);
        assert!(row.iter().all(|z| (*z - cplx(1.0, 0.0)).norm() < 1e-15));
    }

    #[test]
    fn evaluation_rejects_bad_states() {
        let states = Mat::from_fn(2, 1, |_, _| 0.5);
        assert!(evaluate(&Dictionary::Linear { dim: 2 }, &states).is_err());
        let states = Mat::from_fn(1, 2, |_, k| [0.0, f64::INFINITY][k]);
        assert!(matches!(
            evaluate(&Dictionary::Linear { dim: 2 }, &states),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn observable_names_round_trip() {
        for name in ["x1", "x3", "fourier:-2", "pendulum_g", "indicator:4", "exp_cos"] {
            let o: Observable = name.parse().unwrap();
            assert_eq!(o.to_string(), name);
        }
        assert!("x0".parse::<Observable>().is_err());
        assert!("bogus".parse::<Observable>().is_err());
    }

    #[test]
    fn delay_column_shift_identity() {
        let t = rotation_trajectory(0.2, 0.7, 40).unwrap();
        let g = Observable::Fourier(1);
        let d = delay_matrices(&t, &g, 4, 30).unwrap();
        for m in 0..30 {
            for j in 0..3 {
                assert_eq!(d.psi_y[(m, j)], d.psi_x[(m, j + 1)]);
            }
        }
        let one = delay_matrices(&t, &g, 1, 30).unwrap();
        for m in 0..30 {
            assert_eq!(one.psi_x[(m, 0)], g.eval(&t.state(m)));
            assert_eq!(one.psi_y[(m, 0)], g.eval(&t.state(m + 1)));
        }
        assert!(matches!(delay_matrices(&t, &g, 20, 30), Err(Error::TooShort { .. })));
    }

    #[test]
    fn delay_on_rotation_is_phase_ratio() {
        // g = e^{i theta}: column j+1 is column j times e^{i alpha}.
        let alpha = 0.7;
        let t = rotation_trajectory(0.2, alpha, 40).unwrap();
        let d = delay_matrices(&t, &Observable::Fourier(1), 2, 20).unwrap();
        let r = C64::from_polar(1.0, alpha);
        for m in 0..20 {
            assert!((d.psi_x[(m, 1)] - d.psi_x[(m, 0)] * r).norm() < 1e-12);
            assert!((d.psi_y[(m, 0)] - d.psi_x[(m, 0)] * r).norm() < 1e-12);
        }
    }

    #[test]
    fn delay_gram_matches_explicit_product() {
        let t = crate::sampling::lorenz_trajectory([1.0, 2.0, 20.0], 0.1, 120, Default::default(), 20).unwrap();
        let g = Observable::coordinate(0);
        for (n, m) in [(5, 80), (10, 111), (1, 50)] {
            let d = delay_matrices(&t, &g, n, m).unwrap();
            let direct = d.gram().unwrap();
            let z = observable_series(&t, &g, m + n).unwrap();
            let fast = delay_gram(&z, n, m).unwrap();
            let scale = numkit::frobenius(&direct.g);
            assert!(numkit::frobenius(&(&fast.g - &direct.g)) <= 1e-12 * scale, "G n={n}");
            assert!(numkit::frobenius(&(&fast.a - &direct.a)) <= 1e-12 * scale, "A n={n}");
        }
    }

    #[test]
    fn delay_multi_interleaves() {
        let t = crate::sampling::lorenz_trajectory([1.0, 2.0, 20.0], 0.1, 60, Default::default(), 20).unwrap();
        let gs = [Observable::coordinate(0), Observable::coordinate(1), Observable::coordinate(2)];
        let d = delay_matrices_multi(&t, &gs, 4, 50).unwrap();
        assert_eq!(d.psi_x.ncols(), 12);
        for m in 0..50 {
            for c in 0..12 {
                let expect = gs[c % 3].eval(&t.state(m + c / 3));
                assert_eq!(d.psi_x[(m, c)], expect);
                assert_eq!(d.psi_y[(m, c)], gs[c % 3].eval(&t.state(m + c / 3 + 1)));
            }
        }
    }

    #[test]
    fn pod_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (m, d) = (40, 5);
        let x = Mat::from_fn(m, d, |_, _| rng.random::<f64>() - 0.5);
        let w = vec![1.0 / m as f64; m];

        let full = pod_dictionary(&x, &w, d).unwrap();
        let Dictionary::Pod { modes } = &full else { panic!() };
        // orthonormal, hence spanning all coordinates at full rank
        let gram = modes.transpose() * modes;
        for i in 0..d {
            for j in 0..d {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - e).abs() < 1e-12);
            }
        }

        // projection residual equals the discarded singular values
        let r = 2;
        let Dictionary::Pod { modes } = pod_dictionary(&x, &w, r).unwrap() else { panic!() };
        let xw = Mat::from_fn(m, d, |i, k| w[i].sqrt() * x[(i, k)]);
        let resid = &xw - &xw * &modes * modes.transpose();
        let s = numkit::svd(&numkit::complexify(&xw)).unwrap();
        let tail: f64 = s.sigma[r..].iter().map(|v| v * v).sum();
        assert!((resid.norm_l2().powi(2) - tail).abs() < 1e-12);

        assert!(pod_dictionary(&x, &w, 6).is_err());
    }

    #[test]
    fn gram_scalar_case() {
        let psi_x = Mat::from_fn(1, 1, |_, _| cplx(2.0, 0.0));
        let psi_y = Mat::from_fn(1, 1, |_, _| cplx(4.0, 0.0));
        let gp = gram(&psi_x, &psi_y, &[1.0]).unwrap();
        assert_eq!(gp.g[(0, 0)], cplx(4.0, 0.0));
        assert_eq!(gp.a[(0, 0)], cplx(8.0, 0.0));
    }

    #[test]
    fn gram_shift_example() {
        let n = 6;
        let m = 10;
        let snaps = snapshots_from_trajectory(&shift_trajectory(m, m).unwrap(), Weighting::Unit).unwrap();
        let (gp, _) = gram_from_snapshots(&Dictionary::indicators(n), &snaps).unwrap();
        for i in 0..n {
            for j in 0..n {
                let eg = if i == j { 1.0 } else { 0.0 };
                let ea = if i == j + 1 { 1.0 } else { 0.0 };
                assert_eq!(gp.g[(i, j)], cplx(eg, 0.0));
                assert_eq!(gp.a[(i, j)], cplx(ea, 0.0));
            }
        }
    }

    #[test]
    fn gram_matches_loop_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let (m, n) = (30, 4);
        let mut rc = || cplx(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        let px = Mat::from_fn(m, n, |_, _| rc());
        let py = Mat::from_fn(m, n, |_, _| rc());
        let w: Vec<f64> = (0..m).map(|i| 0.1 + (i as f64).sin().abs()).collect();
        let gp = gram(&px, &py, &w).unwrap();
        for j in 0..n {
            for k in 0..n {
                let g: C64 = (0..m).map(|t| px[(t, j)].conj() * px[(t, k)] * w[t]).sum();
                let a: C64 = (0..m).map(|t| px[(t, j)].conj() * py[(t, k)] * w[t]).sum();
                assert!((gp.g[(j, k)] - g).norm() < 1e-12);
                assert!((gp.a[(j, k)] - a).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn fourier_gram_is_identity_under_periodic_trapezoid() {
        let grid = tensor_trapezoid_grid(32, 2, 1.0).unwrap();
        let total: f64 = grid.weights.iter().sum();
        let w: Vec<f64> = grid.weights.iter().map(|v| v / total).collect();
        let psi = evaluate(&Dictionary::fourier(4), &grid.nodes).unwrap();
        let gp = gram(&psi, &psi, &w).unwrap();
        let dev = numkit::frobenius(&(&gp.g - numkit::identity(9)));
        assert!(dev < 1e-13, "{dev}");
    }

    #[test]
    fn descriptor_json_forms() {
        let s: DictionarySpec = serde_json::from_str(r#"{"type":"delay","observable":"x1","N":50}"#).unwrap();
        assert_eq!(
            s,
            DictionarySpec::Delay {
                observable: "x1".into(),
                n: 50
            }
        );
        let s: DictionarySpec = serde_json::from_str(r#"{"type":"fourier","kmax":3}"#).unwrap();
        assert_eq!(s, DictionarySpec::Fourier { kmax: 3 });
        assert!(serde_json::from_str::<DictionarySpec>(r#"{"type":"linear"}"#).is_ok());
        assert!(serde_json::from_str::<DictionarySpec>(r#"{"type":"pod","rank":2}"#).is_ok());
        assert!(serde_json::from_str::<DictionarySpec>(r#"{"type":"fourier","kmax":3,"x":1}"#).is_err());
        assert!(serde_json::from_str::<DictionarySpec>(r#"{"type":"spline"}"#).is_err());
    }
}
