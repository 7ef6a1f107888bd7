//! Koopman matrices: DMD, EDMD, piDMD (unitary class) and mpEDMD, plus the
//! orthogonal Procrustes solver underneath mpEDMD.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::dictionary::{self, Dictionary, DictionarySpec, GramPair};
use crate::error::{Error, Result};
use crate::numkit::{self, cplx, CMatrix, RMatrix, C64};

/// Eigenvector bases with `cond2(G^{1/2} V)` above this are flagged as
/// numerically non-diagonalizable.
pub const EIGVEC_COND_LIMIT: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dmd,
    Edmd,
    Pidmd,
    Mpedmd,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Dmd => "dmd",
            Method::Edmd => "edmd",
            Method::Pidmd => "pidmd",
            Method::Mpedmd => "mpedmd",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dmd" => Ok(Method::Dmd),
            "edmd" => Ok(Method::Edmd),
            "pidmd" => Ok(Method::Pidmd),
            "mpedmd" => Ok(Method::Mpedmd),
            _ => Err(Error::Parse(format!("unknown method {s:?} (dmd, edmd, pidmd, mpedmd)"))),
        }
    }
}

/// A fitted Koopman matrix acting on dictionary coefficient vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    pub method: Method,
    pub k: CMatrix,
    pub eigvals: Vec<C64>,
    /// Column `j` pairs with `eigvals[j]`; columns have unit `G`-norm.
    pub eigvecs: CMatrix,
    pub g: CMatrix,
    pub ghalf: CMatrix,
    pub gneghalf: CMatrix,
    /// `G^{1/2} V`, unitary; mpEDMD only.
    pub vhat: Option<CMatrix>,
    /// False when the eigenvector basis is numerically singular (defective
    /// or near-defective `K`); eigenpairs are then only indicative.
    pub reliable: bool,
    /// `cond2(G^{1/2} V)`.
    pub eigvec_cond: f64,
    pub dictionary: Option<DictionarySpec>,
}

impl KoopmanModel {
    pub fn size(&self) -> usize {
        self.k.nrows()
    }

    pub fn is_measure_preserving(&self) -> bool {
        self.method == Method::Mpedmd
    }

    pub fn with_dictionary(mut self, spec: DictionarySpec) -> Self {
        self.dictionary = Some(spec);
        self
    }

    /// `V̂`, or `WrongMethod` for anything but mpEDMD.
    pub fn require_vhat(&self) -> Result<&CMatrix> {
        match (&self.vhat, self.method) {
            (Some(v), Method::Mpedmd) => Ok(v),
            _ => Err(Error::WrongMethod(self.method.to_string())),
        }
    }

    /// `V^{-1}`: exact as `V̂* G^{1/2}` for mpEDMD, an LU solve otherwise.
    pub fn eigvec_inverse(&self) -> Result<CMatrix> {
        if let Ok(vhat) = self.require_vhat() {
            return Ok(vhat.adjoint() * &self.ghalf);
        }
        if !self.reliable {
            return Err(Error::SingularEigenvectors(self.eigvec_cond));
        }
        numkit::solve(&self.eigvecs, &numkit::identity(self.size()))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelJson::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: ModelJson = serde_json::from_str(text)?;
        j.into_model()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Solution of `min_{C unitary} ||P C - Q||_F`.
#[derive(Debug, Clone)]
pub struct Procrustes {
    pub c: CMatrix,
    /// Singular values of `Q* P`, descending.
    pub sigma: Vec<f64>,
}

/// `C = U2 U1*` from `Q* P = U1 Σ U2*`.
pub fn procrustes(p: &CMatrix, q: &CMatrix) -> Result<Procrustes> {
    if p.nrows() != q.nrows() || p.ncols() != q.ncols() {
        return Err(Error::Shape(format!(
            "P is {}x{} but Q is {}x{}",
            p.nrows(),
            p.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    numkit::check_finite(p, "P")?;
    numkit::check_finite(q, "Q")?;
    procrustes_from_cross(&(q.adjoint() * p))
}

/// Optimal Procrustes value `||P||^2 + ||Q||^2 - 2 sum sigma`.
pub fn procrustes_optimum(p: &CMatrix, q: &CMatrix, sigma: &[f64]) -> f64 {
    numkit::frobenius(p).powi(2) + numkit::frobenius(q).powi(2) - 2.0 * sigma.iter().sum::<f64>()
}

/// Unitary polar factor `U2 U1*` of `B* ` given `B = U1 Σ U2*`.
///
/// Singular vectors of numerically zero singular values are only defined up
/// to a phase (and a unitary mix within the null space); each such pair is
/// rotated so that its largest-modulus entry is real and positive, which
/// makes the result reproducible across backends for one-dimensional null
/// spaces.
fn procrustes_from_cross(b: &CMatrix) -> Result<Procrustes> {
    let n = numkit::check_square(b)?;
    let s = numkit::svd(b)?;
    let mut u1 = s.u;
    let mut u2 = s.vt.adjoint().to_owned();
    let smax = s.sigma.first().copied().unwrap_or(0.0);
    let floor = n as f64 * f64::EPSILON * smax;
    for j in 0..n {
        if s.sigma[j] <= floor {
            canonical_phase(&mut u1, j);
            canonical_phase(&mut u2, j);
        }
    }
    Ok(Procrustes {
        c: u2 * u1.adjoint(),
        sigma: s.sigma,
    })
}

fn canonical_phase(m: &mut CMatrix, j: usize) {
    let mut best = cplx(0.0, 0.0);
    for i in 0..m.nrows() {
        // strictly larger with a relative margin keeps ties at the first index
        if m[(i, j)].norm() > best.norm() * (1.0 + 1e-12) {
            best = m[(i, j)];
        }
    }
    if best.norm() > 0.0 {
        let rot = best.conj() / best.norm();
        for i in 0..m.nrows() {
            m[(i, j)] *= rot;
        }
    }
}

/// Rescales columns of `v` to unit `G`-norm.
fn g_normalize(v: &CMatrix, g: &CMatrix) -> CMatrix {
    let scales: Vec<C64> = (0..v.ncols())
        .map(|j| {
            let n2 = numkit::quadratic_form(g, &numkit::column(v, j)).re;
            cplx(if n2 > 0.0 { 1.0 / n2.sqrt() } else { 1.0 }, 0.0)
        })
        .collect();
    numkit::scale_columns(v, &scales)
}

/// `K = G^{-1} A`, eigendecomposed by a general eigensolver.
pub fn edmd(gp: &GramPair) -> Result<KoopmanModel> {
    let (ghalf, gneghalf) = numkit::spd_sqrt(&gp.g)?;
    let k = numkit::solve(&gp.g, &gp.a)?;
    let eig = numkit::general_eig(&k)?;
    let eigvecs = g_normalize(&eig.vectors, &gp.g);
    let eigvec_cond = numkit::cond2(&(&ghalf * &eigvecs))?;
    Ok(KoopmanModel {
        method: Method::Edmd,
        k,
        eigvals: eig.values,
        eigvecs,
        g: gp.g.clone(),
        ghalf,
        gneghalf,
        vhat: None,
        reliable: eigvec_cond.is_finite() && eigvec_cond <= EIGVEC_COND_LIMIT,
        eigvec_cond,
        dictionary: None,
    })
}

/// EDMD on the linear dictionary `psi_j(x) = x_j`; `K_DMD` is the transpose
/// of the usual `Y X^+`.
pub fn dmd(x: &RMatrix, y: &RMatrix, weights: &[f64]) -> Result<KoopmanModel> {
    let dict = Dictionary::Linear { dim: x.ncols() };
    let gp = dictionary::gram(&dictionary::evaluate(&dict, x)?, &dictionary::evaluate(&dict, y)?, weights)?;
    let mut model = edmd(&gp)?;
    model.method = Method::Dmd;
    model.dictionary = Some(DictionarySpec::Linear);
    Ok(model)
}

/// Measure-preserving EDMD.
///
/// 1. SVD `G^{-1/2} A* G^{-1/2} = U1 Σ U2*`
/// 2. `U2 U1* = V̂ Λ V̂*` with `V̂` unitary
/// 3. `K = G^{-1/2} U2 U1* G^{1/2}`, `V = G^{-1/2} V̂`
pub fn mpedmd(gp: &GramPair) -> Result<KoopmanModel> {
    let (ghalf, gneghalf) = numkit::spd_sqrt(&gp.g)?;
    let b = &gneghalf * gp.a.adjoint() * &gneghalf;
    let c = procrustes_from_cross(&b)?.c;
    let eig = numkit::unitary_eig(&c)?;
    let k = &gneghalf * &c * &ghalf;
    let eigvecs = &gneghalf * &eig.vectors;
    let eigvec_cond = numkit::cond2(&eigvecs)?;
    Ok(KoopmanModel {
        method: Method::Mpedmd,
        k,
        eigvals: eig.values,
        eigvecs,
        g: gp.g.clone(),
        ghalf,
        gneghalf,
        vhat: Some(eig.vectors),
        reliable: true,
        eigvec_cond,
        dictionary: None,
    })
}

/// piDMD restricted to unitary models: `Y W X* = V1 S V2*`, `K = V2 V1*`
/// (columns of `X`, `Y` are snapshots in this product).
///
/// `K` is unitary in the Euclidean coefficient inner product, so the stored
/// Gram matrix is the identity; it agrees with mpEDMD on the linear
/// dictionary when `X* W X` and `W` are multiples of the identity and the
/// data are real.
pub fn pidmd_unitary(x: &RMatrix, y: &RMatrix, weights: &[f64]) -> Result<KoopmanModel> {
    if x.nrows() != y.nrows() || x.ncols() != y.ncols() || weights.len() != x.nrows() {
        return Err(Error::Shape("X, Y and weights must describe the same snapshots".into()));
    }
    let d = x.ncols();
    let cross = Mat::from_fn(d, d, |i, j| {
        cplx((0..x.nrows()).map(|m| weights[m] * y[(m, i)] * x[(m, j)]).sum(), 0.0)
    });
    numkit::check_finite(&cross, "Y W X*")?;
    let s = numkit::svd(&cross)?;
    let v1 = s.u;
    let v2 = s.vt.adjoint().to_owned();
    let k = v2 * v1.adjoint();
    let eig = numkit::unitary_eig(&k)?;
    Ok(KoopmanModel {
        method: Method::Pidmd,
        k,
        eigvals: eig.values,
        eigvecs: eig.vectors,
        g: numkit::identity(d),
        ghalf: numkit::identity(d),
        gneghalf: numkit::identity(d),
        vhat: None,
        reliable: true,
        eigvec_cond: 1.0,
        dictionary: Some(DictionarySpec::Linear),
    })
}

/// Fits EDMD or mpEDMD from a Gram pair.
pub fn fit_gram(method: Method, gp: &GramPair) -> Result<KoopmanModel> {
    match method {
        Method::Edmd => edmd(gp),
        Method::Mpedmd => mpedmd(gp),
        other => Err(Error::Invalid(format!("{other} is fitted from raw snapshots, not a Gram pair"))),
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatJson {
    rows: usize,
    cols: usize,
    /// Row-major real parts.
    re: Vec<f64>,
    im: Vec<f64>,
}

impl From<&CMatrix> for MatJson {
    fn from(m: &CMatrix) -> Self {
        let (r, c) = (m.nrows(), m.ncols());
        let at = |k: usize| m[(k / c, k % c)];
        MatJson {
            rows: r,
            cols: c,
            re: (0..r * c).map(|k| at(k).re).collect(),
            im: (0..r * c).map(|k| at(k).im).collect(),
        }
    }
}

impl MatJson {
    fn into_matrix(self, what: &str) -> Result<CMatrix> {
        let n = self.rows * self.cols;
        if self.re.len() != n || self.im.len() != n {
            return Err(Error::Parse(format!("{what}: expected {n} entries")));
        }
        let c = self.cols;
        Ok(Mat::from_fn(self.rows, c, |i, j| cplx(self.re[i * c + j], self.im[i * c + j])))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelJson {
    method: Method,
    #[serde(rename = "N")]
    n: usize,
    eigvals_re: Vec<f64>,
    eigvals_im: Vec<f64>,
    #[serde(rename = "K")]
    k: MatJson,
    #[serde(rename = "V")]
    v: MatJson,
    #[serde(rename = "G")]
    g: MatJson,
    #[serde(rename = "Ghalf")]
    ghalf: MatJson,
    #[serde(rename = "Gneghalf")]
    gneghalf: MatJson,
    #[serde(rename = "Vhat", default, skip_serializing_if = "Option::is_none")]
    vhat: Option<MatJson>,
    reliable: bool,
    /// Absent when infinite.
    #[serde(default)]
    eigvec_cond: Option<f64>,
    #[serde(default)]
    dictionary: Option<DictionarySpec>,
}

impl From<&KoopmanModel> for ModelJson {
    fn from(m: &KoopmanModel) -> Self {
        ModelJson {
            method: m.method,
            n: m.size(),
            eigvals_re: m.eigvals.iter().map(|z| z.re).collect(),
            eigvals_im: m.eigvals.iter().map(|z| z.im).collect(),
            k: (&m.k).into(),
            v: (&m.eigvecs).into(),
            g: (&m.g).into(),
            ghalf: (&m.ghalf).into(),
            gneghalf: (&m.gneghalf).into(),
            vhat: m.vhat.as_ref().map(MatJson::from),
            reliable: m.reliable,
            eigvec_cond: m.eigvec_cond.is_finite().then_some(m.eigvec_cond),
            dictionary: m.dictionary.clone(),
        }
    }
}

impl ModelJson {
    fn into_model(self) -> Result<KoopmanModel> {
        let n = self.n;
        if self.eigvals_re.len() != n || self.eigvals_im.len() != n {
            return Err(Error::Parse(format!("expected {n} eigenvalues")));
        }
        let model = KoopmanModel {
            method: self.method,
            eigvals: self.eigvals_re.iter().zip(&self.eigvals_im).map(|(&r, &i)| cplx(r, i)).collect(),
            k: self.k.into_matrix("K")?,
            eigvecs: self.v.into_matrix("V")?,
            g: self.g.into_matrix("G")?,
            ghalf: self.ghalf.into_matrix("Ghalf")?,
            gneghalf: self.gneghalf.into_matrix("Gneghalf")?,
            vhat: self.vhat.map(|v| v.into_matrix("Vhat")).transpose()?,
            reliable: self.reliable,
            eigvec_cond: self.eigvec_cond.unwrap_or(f64::INFINITY),
            dictionary: self.dictionary,
        };
        for (name, m) in [
            ("K", &model.k),
            ("V", &model.eigvecs),
            ("G", &model.g),
            ("Ghalf", &model.ghalf),
            ("Gneghalf", &model.gneghalf),
        ] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Parse(format!("{name} must be {n}x{n}")));
            }
        }
        if model.method == Method::Mpedmd && model.vhat.is_none() {
            return Err(Error::Parse("mpedmd model without Vhat".into()));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{shift_trajectory, snapshots_from_trajectory, Weighting};

    fn shift_gram(n: usize, m: usize) -> GramPair {
        let snaps = snapshots_from_trajectory(&shift_trajectory(m, m).unwrap(), Weighting::Unit).unwrap();
        dictionary::gram_from_snapshots(&Dictionary::indicators(n), &snaps).unwrap().0
    }

    #[test]
    fn shift_warning_matrices() {
        let n = 6;
        let gp = shift_gram(n, 10);
        let e = edmd(&gp).unwrap();
        let mp = mpedmd(&gp).unwrap();
        for i in 0..n {
            for j in 0..n {
                let lower = if i == j + 1 { 1.0 } else { 0.0 };
                let cyclic = if i == j + 1 || (i == 0 && j == n - 1) { 1.0 } else { 0.0 };
                assert!((e.k[(i, j)] - cplx(lower, 0.0)).norm() <= 1e-12, "edmd ({i},{j})");
                assert!((mp.k[(i, j)] - cplx(cyclic, 0.0)).norm() <= 1e-12, "mpedmd ({i},{j}) = {}", mp.k[(i, j)]);
            }
        }
        assert!(!e.reliable);
        assert!(mp.reliable);
    }

    #[test]
    fn identity_dynamics() {
        let psi = Mat::from_fn(8, 3, |i, j| cplx(((i * 3 + j) as f64).sin(), ((i + 2 * j) as f64).cos()));
        let gp = dictionary::gram(&psi, &psi, &[0.125; 8]).unwrap();
        for model in [edmd(&gp).unwrap(), mpedmd(&gp).unwrap()] {
            assert!(numkit::frobenius(&(&model.k - numkit::identity(3))) < 1e-12);
            assert!(model.eigvals.iter().all(|l| (*l - cplx(1.0, 0.0)).norm() < 1e-12));
        }
    }

    #[test]
    fn procrustes_examples() {
        let p = Mat::from_fn(5, 3, |i, j| cplx((i + j) as f64 * 0.3, (i * j) as f64 * 0.1 - 0.2));
        let same = procrustes(&p, &p).unwrap();
        assert!(numkit::frobenius(&(&p * &same.c - &p)) < 1e-12);

        // P = I: C is the unitary polar factor of Q
        let q = Mat::from_fn(3, 3, |i, j| cplx(1.0 + (i * 2 + j) as f64 * 0.4, (i as f64 - j as f64) * 0.3));
        let sol = procrustes(&numkit::identity(3), &q).unwrap();
        let h = sol.c.adjoint() * &q; // Q = C H with H Hermitian PSD
        assert!(numkit::frobenius(&(&h - h.adjoint())) < 1e-12);
        assert!(numkit::hermitian_eig(&h).unwrap().values[0] > -1e-12);
        assert!(numkit::unitary_defect(&sol.c) < 1e-12);
    }

    #[test]
    fn dmd_examples() {
        let x = Mat::from_fn(6, 2, |i, j| ((i + 1) as f64 * (j + 2) as f64).sin());
        let y2 = Mat::from_fn(6, 2, |i, j| 2.0 * x[(i, j)]);
        let w = [1.0 / 6.0; 6];
        assert!(numkit::frobenius(&(&dmd(&x, &y2, &w).unwrap().k - Mat::from_fn(2, 2, |i, j| cplx(if i == j { 2.0 } else { 0.0 }, 0.0)))) < 1e-12);
        assert!(numkit::frobenius(&(&dmd(&x, &x, &w).unwrap().k - numkit::identity(2))) < 1e-12);
    }

    #[test]
    fn pidmd_planar_rotation() {
        let alpha: f64 = 0.4;
        let m = 8;
        let x = Mat::from_fn(m, 2, |i, j| {
            let t = i as f64 * std::f64::consts::TAU / m as f64;
            if j == 0 {
                t.cos()
            } else {
                t.sin()
            }
        });
        let r = [[alpha.cos(), -alpha.sin()], [alpha.sin(), alpha.cos()]];
        let y = Mat::from_fn(m, 2, |i, j| r[j][0] * x[(i, 0)] + r[j][1] * x[(i, 1)]);
        let w = vec![1.0 / m as f64; m];
        let model = pidmd_unitary(&x, &y, &w).unwrap();
        // coefficient-space (transposed) rotation, as for K_DMD
        for i in 0..2 {
            for j in 0..2 {
                assert!((model.k[(i, j)] - cplx(r[j][i], 0.0)).norm() < 1e-12);
            }
        }
        let dmd_k = dmd(&x, &y, &w).unwrap().k;
        assert!(numkit::frobenius(&(&model.k - &dmd_k)) < 1e-12);
        assert!(model.eigvals.iter().all(|l| (l.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn json_round_trip_is_exact() {
        let gp = shift_gram(5, 9);
        for model in [edmd(&gp).unwrap(), mpedmd(&gp).unwrap()] {
            let model = model.with_dictionary(DictionarySpec::Indicator { n: 5 });
            let back = KoopmanModel::from_json(&model.to_json().unwrap()).unwrap();
            assert_eq!(back, model);
        }
        assert!(KoopmanModel::from_json(r#"{"method":"edmd"}"#).is_err());
    }

    #[test]
    fn method_names() {
        for m in [Method::Dmd, Method::Edmd, Method::Pidmd, Method::Mpedmd] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert!("foo".parse::<Method>().is_err());
    }

    #[test]
    fn wrong_method_guard() {
        let gp = shift_gram(4, 6);
        assert!(matches!(edmd(&gp).unwrap().require_vhat(), Err(Error::WrongMethod(_))));
        assert!(matches!(edmd(&gp).unwrap().eigvec_inverse(), Err(Error::SingularEigenvectors(_))));
        assert!(mpedmd(&gp).unwrap().require_vhat().is_ok());
    }
}
