//! Scalar spectral measures on the unit circle, cdfs and W1 distances,
//! moments, the functional calculus of the discrete projection-valued
//! measure, and residual-based pollution filtering.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::decomp::KoopmanModel;
use crate::dictionary::GramPair;
use crate::error::{Error, Result};
use crate::numkit::{self, cplx, phase, C64};

/// Atoms closer than this in phase are merged.
pub const MERGE_TOL: f64 = 1e-12;

/// Atomic probability measure on the circle, parameterized by phase in
/// `(-pi, pi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMeasure {
    /// `(phase, mass)`, phases strictly ascending.
    atoms: Vec<(f64, f64)>,
}

impl SpectralMeasure {
    /// Sorts, clamps negative masses to zero and merges near-coincident atoms.
    pub fn new(atoms: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut raw: Vec<(f64, f64)> = atoms.into_iter().collect();
        if raw.iter().any(|(t, p)| !t.is_finite() || !p.is_finite()) {
            return Err(Error::NonFinite("spectral measure atom"));
        }
        for (t, p) in raw.iter_mut() {
            // -pi and pi are the same point; roundoff in the imaginary part of
            // a real eigenvalue -1 must not move its mass across the cut
            if *t < -PI + MERGE_TOL {
                *t += 2.0 * PI;
            }
            if *t > PI {
                *t -= 2.0 * PI;
            }
            *p = p.max(0.0);
        }
        raw.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut atoms: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
        for (t, p) in raw {
            match atoms.last_mut() {
                Some(last) if t - last.0 < MERGE_TOL => last.1 += p,
                _ => atoms.push((t, p)),
            }
        }
        Ok(Self { atoms })
    }

    pub fn dirac(theta: f64) -> Self {
        Self::new([(theta, 1.0)]).expect("finite phase")
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    /// Right-continuous cdf `F(theta) = sum_{theta_j <= theta} p_j`.
    pub fn cdf_at(&self, theta: f64) -> f64 {
        self.atoms.iter().take_while(|a| a.0 <= theta).map(|a| a.1).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("theta,mass\n");
        for (t, p) in &self.atoms {
            let _ = writeln!(s, "{t:?},{p:?}");
        }
        s
    }
}

/// `F` on a grid of phases.
pub fn cdf(mu: &SpectralMeasure, grid: &[f64]) -> Vec<f64> {
    grid.iter().map(|&t| mu.cdf_at(t)).collect()
}

pub fn cdf_csv(grid: &[f64], values: &[f64]) -> String {
    let mut s = String::from("theta,F\n");
    for (t, f) in grid.iter().zip(values) {
        let _ = writeln!(s, "{t:?},{f:?}");
    }
    s
}

/// `int_{-pi}^{pi} |F_mu - F_nu| dtheta`, exact for step cdfs cut at `pi`.
pub fn w1(mu: &SpectralMeasure, nu: &SpectralMeasure) -> f64 {
    let (a, b) = (mu.atoms(), nu.atoms());
    let (mut i, mut j) = (0, 0);
    let (mut fa, mut fb) = (0.0f64, 0.0f64);
    let mut prev = -PI;
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(x), Some(y)) => x.0.min(y.0),
            (Some(x), None) => x.0,
            (None, Some(y)) => y.0,
            (None, None) => unreachable!(),
        };
        total += (fa - fb).abs() * (next - prev);
        while i < a.len() && a[i].0 == next {
            fa += a[i].1;
            i += 1;
        }
        while j < b.len() && b[j].0 == next {
            fb += b[j].1;
            j += 1;
        }
        prev = next;
    }
    total + (fa - fb).abs() * (PI - prev)
}

/// `V̂* G^{1/2} g / sqrt(g* G g)`: the coordinates of the normalized
/// observable in the orthonormal eigenbasis.
fn eigen_coordinates(model: &KoopmanModel, ghat: &[C64]) -> Result<Vec<C64>> {
    let vhat = model.require_vhat()?;
    if ghat.len() != model.size() {
        return Err(Error::Shape(format!("{} coefficients for a model of size {}", ghat.len(), model.size())));
    }
    let norm2 = numkit::quadratic_form(&model.g, ghat).re;
    if !(norm2 > 0.0) {
        return Err(Error::ZeroObservable);
    }
    let scaled = numkit::matvec(&model.ghalf, ghat);
    let b = numkit::matvec(&vhat.adjoint().to_owned(), &scaled);
    let s = 1.0 / norm2.sqrt();
    Ok(b.into_iter().map(|z| z * s).collect())
}

/// `mu_g = sum_j |v_j* G g|^2 delta_{lambda_j}` with `g* G g = 1`.
pub fn scalar_measure(model: &KoopmanModel, ghat: &[C64]) -> Result<SpectralMeasure> {
    let b = eigen_coordinates(model, ghat)?;
    SpectralMeasure::new(model.eigvals.iter().zip(&b).map(|(l, z)| (phase(*l), z.norm_sqr())))
}

/// `int lambda^l dmu_g(lambda)` for the normalized observable.
pub fn moment(model: &KoopmanModel, ghat: &[C64], l: i32) -> Result<C64> {
    let b = eigen_coordinates(model, ghat)?;
    Ok(model
        .eigvals
        .iter()
        .zip(&b)
        .map(|(lam, z)| C64::from_polar(z.norm_sqr(), l as f64 * phase(*lam)))
        .sum())
}

/// A function on the circle, evaluated at eigenvalues.
#[derive(Clone)]
pub enum TestFunction {
    /// `sum_{|l| <= L} c_l lambda^l`; `coeffs[l + L]`.
    Laurent(Vec<C64>),
    /// `lambda^l`
    Power(i32),
    /// `exp((lambda - conj(lambda)) / 2i) = exp(sin theta)`
    ExpSin,
    Closure(Arc<dyn Fn(C64) -> C64 + Send + Sync>),
}

impl std::fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TestFunction::Laurent(c) => write!(f, "Laurent(degree {})", c.len() / 2),
            TestFunction::Power(l) => write!(f, "Power({l})"),
            TestFunction::ExpSin => write!(f, "ExpSin"),
            TestFunction::Closure(_) => write!(f, "Closure"),
        }
    }
}

impl TestFunction {
    pub fn laurent(coeffs: Vec<C64>) -> Result<Self> {
        if coeffs.len() % 2 != 1 {
            return Err(Error::Invalid("Laurent coefficients must have odd length 2L+1".into()));
        }
        if coeffs.iter().any(|c| !(c.re.is_finite() && c.im.is_finite())) {
            return Err(Error::NonFinite("Laurent coefficient"));
        }
        Ok(TestFunction::Laurent(coeffs))
    }

    /// Evaluates at a unit-modulus `lambda`.
    pub fn eval(&self, lambda: C64) -> C64 {
        match self {
            TestFunction::Laurent(c) => {
                let big_l = (c.len() / 2) as i32;
                let t = phase(lambda);
                c.iter()
                    .enumerate()
                    .map(|(k, ck)| ck * C64::from_polar(1.0, (k as i32 - big_l) as f64 * t))
                    .sum()
            }
            TestFunction::Power(l) => C64::from_polar(1.0, *l as f64 * phase(lambda)),
            TestFunction::ExpSin => cplx(phase(lambda).sin().exp(), 0.0),
            TestFunction::Closure(f) => f(lambda),
        }
    }

    /// Laurent truncation `S_L phi`, coefficients from a `P`-point periodic
    /// trapezoid rule with `P = 4L + 64`.
    pub fn truncate(&self, degree: usize) -> TestFunction {
        let p = 4 * degree + 64;
        let samples: Vec<C64> = (0..p)
            .map(|k| self.eval(C64::from_polar(1.0, -PI + 2.0 * PI * k as f64 / p as f64)))
            .collect();
        let l = degree as i32;
        let coeffs = (-l..=l)
            .map(|m| {
                let s: C64 = samples
                    .iter()
                    .enumerate()
                    .map(|(k, f)| f * C64::from_polar(1.0, -(m as f64) * (-PI + 2.0 * PI * k as f64 / p as f64)))
                    .sum();
                s / p as f64
            })
            .collect();
        TestFunction::Laurent(coeffs)
    }

    /// Product of two Laurent polynomials.
    pub fn product(a: &[C64], b: &[C64]) -> Vec<C64> {
        let mut out = vec![cplx(0.0, 0.0); a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    }
}

/// Coefficients of `Psi int phi dE g`, i.e.
/// `G^{-1/2} V̂ diag(phi(lambda)) V̂* G^{1/2} g`.
pub fn apply_test_function(model: &KoopmanModel, phi: &TestFunction, ghat: &[C64]) -> Result<Vec<C64>> {
    let vhat = model.require_vhat()?;
    if ghat.len() != model.size() {
        return Err(Error::Shape(format!("{} coefficients for a model of size {}", ghat.len(), model.size())));
    }
    let b = numkit::matvec(&vhat.adjoint().to_owned(), &numkit::matvec(&model.ghalf, ghat));
    let scaled: Vec<C64> = b.iter().zip(&model.eigvals).map(|(z, l)| z * phi.eval(*l)).collect();
    Ok(numkit::matvec(&model.gneghalf, &numkit::matvec(vhat, &scaled)))
}

/// `sqrt(max(0, v* [(1 + |lambda|^2) G - conj(lambda) A - lambda A*] v))`
/// with `v` normalized to `v* G v = 1`.
pub fn residual(gp: &GramPair, lambda: C64, v: &[C64]) -> Result<f64> {
    if v.len() != gp.size() {
        return Err(Error::Shape(format!("vector of length {} for N = {}", v.len(), gp.size())));
    }
    let vgv = numkit::quadratic_form(&gp.g, v).re;
    if !(vgv > 0.0) {
        return Err(Error::ZeroObservable);
    }
    let vav = numkit::quadratic_form(&gp.a, v);
    let r2 = ((1.0 + lambda.norm_sqr()) * vgv - 2.0 * (lambda.conj() * vav).re) / vgv;
    Ok(r2.max(0.0).sqrt())
}

/// Residual of every eigenpair of `model`, in eigenvalue order.
pub fn residuals(model: &KoopmanModel, gp: &GramPair) -> Result<Vec<f64>> {
    (0..model.size())
        .map(|j| residual(gp, model.eigvals[j], &numkit::column(&model.eigvecs, j)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Eigenpair {
    pub index: usize,
    pub lambda: C64,
    pub residual: f64,
}

/// Eigenpairs with residual at most `eps`, keeping phase order.
pub fn filter_spectrum(model: &KoopmanModel, gp: &GramPair, eps: f64) -> Result<Vec<Eigenpair>> {
    if !(eps >= 0.0) {
        return Err(Error::Invalid(format!("threshold must be nonnegative, got {eps}")));
    }
    Ok(residuals(model, gp)?
        .into_iter()
        .enumerate()
        .filter(|(_, r)| *r <= eps)
        .map(|(index, residual)| Eigenpair {
            index,
            lambda: model.eigvals[index],
            residual,
        })
        .collect())
}

pub fn eigenpairs_csv(pairs: &[Eigenpair]) -> String {
    let mut s = String::from("index,re,im,modulus,phase,residual\n");
    for p in pairs {
        let _ = writeln!(
            s,
            "{},{:?},{:?},{:?},{:?},{:?}",
            p.index,
            p.lambda.re,
            p.lambda.im,
            p.lambda.norm(),
            phase(p.lambda),
            p.residual
        );
    }
    s
}
