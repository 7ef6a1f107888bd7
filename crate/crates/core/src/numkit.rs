//! Dense complex linear-algebra kernels.
//!
//! Everything above this module works with [`CMatrix`] (a `faer::Mat<c64>`)
//! and goes through the functions here for factorizations, so that the
//! numerical contracts (symmetrization, unit-circle projection, phase
//! ordering) are enforced in one place.

use std::f64::consts::PI;

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};

use crate::error::{Error, Result};

pub type C64 = faer::c64;
pub type CMatrix = Mat<C64>;
pub type RMatrix = Mat<f64>;

/// Default relative eigenvalue floor for [`spd_sqrt`].
pub const DEFAULT_GRAM_RTOL: f64 = 1e-12;

#[inline]
pub fn cplx(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMatrix {
    Mat::identity(n, n)
}

/// Embeds a real matrix into complex arithmetic.
pub fn complexify(m: &RMatrix) -> CMatrix {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| cplx(m[(i, j)], 0.0))
}

pub fn frobenius(m: &CMatrix) -> f64 {
    m.norm_l2()
}

pub fn adjoint(m: &CMatrix) -> CMatrix {
    m.adjoint().to_owned()
}

pub fn check_finite(m: &CMatrix, what: &'static str) -> Result<()> {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let z = m[(i, j)];
            if !(z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::NonFinite(what));
            }
        }
    }
    Ok(())
}

pub fn check_square(m: &CMatrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NonSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

/// `(H + H*) / 2`.
pub fn hermitian_part(h: &CMatrix) -> CMatrix {
    let n = h.nrows();
    Mat::from_fn(n, n, |i, j| (h[(i, j)] + h[(j, i)].conj()) * 0.5)
}

/// `|Q*Q - I|_F`.
pub fn unitary_defect(q: &CMatrix) -> f64 {
    let n = q.ncols();
    frobenius(&(q.adjoint() * q - identity(n)))
}

/// Phase of `z` in `(-pi, pi]`.
pub fn phase(z: C64) -> f64 {
    let t = z.im.atan2(z.re);
    if t <= -PI {
        PI
    } else {
        t
    }
}

/// Multiplies column `j` of `m` by `d[j]`.
pub fn scale_columns(m: &CMatrix, d: &[C64]) -> CMatrix {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * d[j])
}

/// Multiplies row `i` of `m` by `d[i]`.
pub fn scale_rows(m: &CMatrix, d: &[f64]) -> CMatrix {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * d[i])
}

pub fn matvec(m: &CMatrix, v: &[C64]) -> Vec<C64> {
    assert_eq!(m.ncols(), v.len());
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum())
        .collect()
}

/// `u* v`
pub fn inner(u: &[C64], v: &[C64]) -> C64 {
    u.iter().zip(v).map(|(a, b)| a.conj() * b).sum()
}

/// `v* M v`
pub fn quadratic_form(m: &CMatrix, v: &[C64]) -> C64 {
    inner(v, &matvec(m, v))
}

pub fn column(m: &CMatrix, j: usize) -> Vec<C64> {
    (0..m.nrows()).map(|i| m[(i, j)]).collect()
}

/// Solves `A X = B` by partial-pivoting LU.
pub fn solve(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    check_square(a)?;
    if a.nrows() != b.nrows() {
        return Err(Error::Shape(format!(
            "solve: lhs is {}x{}, rhs has {} rows",
            a.nrows(),
            a.ncols(),
            b.nrows()
        )));
    }
    let x = a.partial_piv_lu().solve(b);
    check_finite(&x, "linear solve")?;
    Ok(x)
}

#[derive(Debug, Clone)]
pub struct HermitianEig {
    /// Real eigenvalues, ascending.
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

pub fn hermitian_eig(h: &CMatrix) -> Result<HermitianEig> {
    let n = check_square(h)?;
    check_finite(h, "hermitian_eig input")?;
    let scale = frobenius(h);
    if scale > 0.0 {
        let asym = frobenius(&(h - h.adjoint())) / scale;
        if asym > 1e-8 {
            return Err(Error::NotHermitian(asym));
        }
    }
    if n == 0 {
        return Ok(HermitianEig {
            values: vec![],
            vectors: Mat::zeros(0, 0),
        });
    }
    let sym = hermitian_part(h);
    let evd = sym
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Backend(format!("{e:?}")))?;
    let d = evd.S().column_vector();
    Ok(HermitianEig {
        values: (0..n).map(|i| d[i].re).collect(),
        vectors: evd.U().to_owned(),
    })
}

#[derive(Debug, Clone)]
pub struct Svd {
    pub u: CMatrix,
    /// Singular values, descending.
    pub sigma: Vec<f64>,
    /// `V*`, so that `B = U diag(sigma) Vt`.
    pub vt: CMatrix,
}

impl Svd {
    pub fn reconstruct(&self) -> CMatrix {
        let k = self.sigma.len();
        let us = Mat::from_fn(self.u.nrows(), k, |i, j| self.u[(i, j)] * self.sigma[j]);
        us * self.vt.as_ref().subrows(0, k)
    }
}

/// Full SVD; `u` is `m x m`, `vt` is `n x n`.
pub fn svd(b: &CMatrix) -> Result<Svd> {
    check_finite(b, "svd input")?;
    if b.nrows() == 0 || b.ncols() == 0 {
        return Ok(Svd {
            u: identity(b.nrows()),
            sigma: vec![],
            vt: identity(b.ncols()),
        });
    }
    let dec = b.svd().map_err(|e| Error::Backend(format!("{e:?}")))?;
    let s = dec.S().column_vector();
    let k = b.nrows().min(b.ncols());
    Ok(Svd {
        u: dec.U().to_owned(),
        sigma: (0..k).map(|i| s[i].re).collect(),
        vt: dec.V().adjoint().to_owned(),
    })
}

/// Square root and inverse square root of a Hermitian positive definite
/// matrix, with the default conditioning floor.
pub fn spd_sqrt(g: &CMatrix) -> Result<(CMatrix, CMatrix)> {
    spd_sqrt_with_rtol(g, DEFAULT_GRAM_RTOL)
}

pub fn spd_sqrt_with_rtol(g: &CMatrix, rtol: f64) -> Result<(CMatrix, CMatrix)> {
    let eig = hermitian_eig(g)?;
    let n = eig.values.len();
    if n == 0 {
        return Ok((Mat::zeros(0, 0), Mat::zeros(0, 0)));
    }
    let min = eig.values[0];
    let max = eig.values[n - 1];
    if !(max > 0.0) || min <= rtol * max {
        return Err(Error::IllConditionedGram { min, max, rtol });
    }
    let v = &eig.vectors;
    let root: Vec<C64> = eig.values.iter().map(|&l| cplx(l.sqrt(), 0.0)).collect();
    let inv_root: Vec<C64> = eig.values.iter().map(|&l| cplx(1.0 / l.sqrt(), 0.0)).collect();
    let half = hermitian_part(&(scale_columns(v, &root) * v.adjoint()));
    let neg_half = hermitian_part(&(scale_columns(v, &inv_root) * v.adjoint()));
    Ok((half, neg_half))
}

#[derive(Debug, Clone)]
pub struct EigPair {
    pub values: Vec<C64>,
    /// Column `j` pairs with `values[j]`.
    pub vectors: CMatrix,
}

impl EigPair {
    /// Reorders by phase in `(-pi, pi]`; ties keep their original order.
    fn sorted_by_phase(self) -> EigPair {
        let n = self.values.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            phase(self.values[a])
                .partial_cmp(&phase(self.values[b]))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let values = order.iter().map(|&j| self.values[j]).collect();
        let vectors = Mat::from_fn(self.vectors.nrows(), n, |i, j| self.vectors[(i, order[j])]);
        EigPair { values, vectors }
    }
}

/// Eigendecomposition of a unitary matrix with a unitary eigenvector matrix.
///
/// The matrix is rotated so that `-1` sits in the widest gap of its spectrum
/// and then mapped through the Cayley transform `H = i (I - Q')(I + Q')^{-1}`.
/// `H` is Hermitian with the same eigenvectors as `Q`, and the map
/// `e^{i t} -> tan(t/2)` is monotone on the circle minus `-1`, so a Hermitian
/// eigensolver on `H` produces an orthonormal eigenbasis of `Q` directly.
/// Eigenvalues are the Rayleigh quotients `v* Q v` projected onto the circle.
pub fn unitary_eig(q: &CMatrix) -> Result<EigPair> {
    let n = check_square(q)?;
    check_finite(q, "unitary_eig input")?;
    if n == 0 {
        return Ok(EigPair {
            values: vec![],
            vectors: Mat::zeros(0, 0),
        });
    }
    let defect = unitary_defect(q);
    if defect > 1e-8 * (n as f64).sqrt() {
        return Err(Error::NotUnitary(defect));
    }

    // cos of each eigenphase comes from the Hermitian part; the widest gap of
    // {+-acos} is a gap of the true spectrum.
    let cosines = hermitian_eig(&hermitian_part(q))?.values;
    let mut angles: Vec<f64> = cosines
        .iter()
        .flat_map(|c| {
            let a = c.clamp(-1.0, 1.0).acos();
            [a, -a]
        })
        .collect();
    angles.sort_by(|a, b| a.total_cmp(b));
    let last = angles[angles.len() - 1];
    let (mut gap, mut start) = (angles[0] + 2.0 * PI - last, last);
    for w in angles.windows(2) {
        if w[1] - w[0] > gap {
            gap = w[1] - w[0];
            start = w[0];
        }
    }
    let beta = start + 0.5 * gap - PI;
    let rot = C64::from_polar(1.0, -beta);

    let i_unit = cplx(0.0, 1.0);
    let plus = Mat::from_fn(n, n, |i, j| {
        q[(i, j)] * rot + if i == j { cplx(1.0, 0.0) } else { cplx(0.0, 0.0) }
    });
    let minus = Mat::from_fn(n, n, |i, j| {
        let d = if i == j { cplx(1.0, 0.0) } else { cplx(0.0, 0.0) };
        (d - q[(i, j)] * rot) * i_unit
    });
    let cayley = hermitian_part(&solve(&plus, &minus)?);
    let vectors = hermitian_eig(&cayley)?.vectors;

    let qv = q * &vectors;
    let values = (0..n)
        .map(|j| {
            let l: C64 = (0..n).map(|i| vectors[(i, j)].conj() * qv[(i, j)]).sum();
            let r = l.norm();
            if r > 0.0 {
                l / r
            } else {
                cplx(1.0, 0.0)
            }
        })
        .collect();
    Ok(EigPair { values, vectors }.sorted_by_phase())
}

/// General (non-normal) eigendecomposition. Columns have unit 2-norm and
/// are ordered by eigenvalue phase.
pub fn general_eig(a: &CMatrix) -> Result<EigPair> {
    let n = check_square(a)?;
    check_finite(a, "general_eig input")?;
    if n == 0 {
        return Ok(EigPair {
            values: vec![],
            vectors: Mat::zeros(0, 0),
        });
    }
    let evd = a.eigen().map_err(|e| Error::Backend(format!("{e:?}")))?;
    let s = evd.S().column_vector();
    Ok(EigPair {
        values: (0..n).map(|i| s[i]).collect(),
        vectors: evd.U().to_owned(),
    }
    .sorted_by_phase())
}

/// 2-norm condition number; infinite for singular input.
pub fn cond2(b: &CMatrix) -> Result<f64> {
    check_finite(b, "cond2 input")?;
    if b.nrows() == 0 || b.ncols() == 0 {
        return Ok(1.0);
    }
    let s = b
        .singular_values()
        .map_err(|e| Error::Backend(format!("{e:?}")))?;
    let max = s[0];
    let min = s[s.len() - 1];
    if min == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(max / min)
    }
}
