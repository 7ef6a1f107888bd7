//! Koopman mode decomposition, forecasting, and energy accounting in the
//! `G` inner product.

use std::fmt::Write as _;

use faer::Mat;

use crate::decomp::KoopmanModel;
use crate::dictionary::GramPair;
use crate::error::{Error, Result};
use crate::numkit::{self, cplx, phase, CMatrix, C64};

/// Weighted least-squares coefficients `G^{-1} Psi_X* W g` of sampled values
/// `g(x^(m))`.
pub fn project_observable(gp: &GramPair, psi_x: &CMatrix, weights: &[f64], samples: &[C64]) -> Result<Vec<C64>> {
    let n = gp.size();
    if psi_x.ncols() != n || psi_x.nrows() != samples.len() || weights.len() != samples.len() {
        return Err(Error::Shape(format!(
            "Psi_X is {}x{}, {} samples, {} weights, N = {n}",
            psi_x.nrows(),
            psi_x.ncols(),
            samples.len(),
            weights.len()
        )));
    }
    // surfaces rank deficiency as IllConditionedGram rather than a noisy solve
    numkit::spd_sqrt(&gp.g)?;
    let rhs = Mat::from_fn(n, 1, |j, _| {
        (0..samples.len())
            .map(|m| psi_x[(m, j)].conj() * samples[m] * weights[m])
            .sum::<C64>()
    });
    let sol = numkit::solve(&gp.g, &rhs)?;
    Ok((0..n).map(|j| sol[(j, 0)]).collect())
}

/// `g(x_n) ~ [Psi(x_0) V] Lambda^n modes`.
#[derive(Debug, Clone)]
pub struct Kmd {
    pub eigvals: Vec<C64>,
    /// `N x p`, one column per target.
    pub modes: CMatrix,
    /// Advance by exact phase rotation (`|lambda| = 1`).
    pub on_circle: bool,
}

/// Modes `V^{-1} g_hat` for coefficient columns `N x p`.
pub fn kmd_from_coefficients(model: &KoopmanModel, coeffs: &CMatrix) -> Result<Kmd> {
    if coeffs.nrows() != model.size() {
        return Err(Error::Shape(format!("{} coefficient rows for N = {}", coeffs.nrows(), model.size())));
    }
    let vinv = model.eigvec_inverse()?;
    Ok(Kmd {
        eigvals: model.eigvals.clone(),
        modes: vinv * coeffs,
        on_circle: model.is_measure_preserving(),
    })
}

/// Modes for target samples `M x p` (column `k` holds `g_k(x^(m))`).
pub fn build_kmd(
    model: &KoopmanModel,
    gp: &GramPair,
    psi_x: &CMatrix,
    weights: &[f64],
    targets: &CMatrix,
) -> Result<Kmd> {
    let p = targets.ncols();
    let mut coeffs = Mat::zeros(model.size(), p);
    for k in 0..p {
        let c = project_observable(gp, psi_x, weights, &numkit::column(targets, k))?;
        for (j, v) in c.into_iter().enumerate() {
            coeffs[(j, k)] = v;
        }
    }
    kmd_from_coefficients(model, &coeffs)
}

/// `Psi(x_0) V`.
pub fn eigenfunction_row(model: &KoopmanModel, psi_x0: &[C64]) -> Result<Vec<C64>> {
    if psi_x0.len() != model.size() {
        return Err(Error::Shape(format!("row of length {} for N = {}", psi_x0.len(), model.size())));
    }
    let v = &model.eigvecs;
    Ok((0..v.ncols())
        .map(|j| (0..v.nrows()).map(|i| psi_x0[i] * v[(i, j)]).sum())
        .collect())
}

fn lambda_pow(l: C64, n: u64, on_circle: bool) -> C64 {
    if on_circle {
        C64::from_polar(1.0, n as f64 * phase(l))
    } else {
        l.powf(n as f64)
    }
}

/// `row Lambda^n modes`, one value per target.
pub fn predict(kmd: &Kmd, row: &[C64], n: u64) -> Vec<C64> {
    let weights: Vec<C64> = row
        .iter()
        .zip(&kmd.eigvals)
        .map(|(r, l)| if n == 0 { *r } else { r * lambda_pow(*l, n, kmd.on_circle) })
        .collect();
    (0..kmd.modes.ncols())
        .map(|k| weights.iter().enumerate().map(|(j, w)| w * kmd.modes[(j, k)]).sum())
        .collect()
}

/// CSV `n,re,im` for one target.
pub fn prediction_csv(series: &[(u64, C64)]) -> String {
    let mut s = String::from("n,re,im\n");
    for (n, z) in series {
        let _ = writeln!(s, "{n},{:?},{:?}", z.re, z.im);
    }
    s
}

/// `a_n* G a_n` with `a_n = K^n a_0`.
///
/// For mpEDMD `a_n = V Lambda^n V̂* G^{1/2} a_0` with exact phase powers;
/// otherwise `K` is applied `n` times.
pub fn coeff_energy(model: &KoopmanModel, a0: &[C64], n: u64) -> Result<f64> {
    if a0.len() != model.size() {
        return Err(Error::Shape(format!("{} coefficients for N = {}", a0.len(), model.size())));
    }
    if let Ok(vhat) = model.require_vhat() {
        let b = numkit::matvec(&vhat.adjoint().to_owned(), &numkit::matvec(&model.ghalf, a0));
        let advanced: Vec<C64> = b.iter().zip(&model.eigvals).map(|(z, l)| z * lambda_pow(*l, n, true)).collect();
        let an = numkit::matvec(&model.eigvecs, &advanced);
        return Ok(numkit::quadratic_form(&model.g, &an).re);
    }
    Ok(*energy_series(model, a0, n)?.last().expect("n + 1 entries"))
}

/// `a_n* G a_n` for `n = 0..=n_max` by repeated multiplication with `K`.
pub fn energy_series(model: &KoopmanModel, a0: &[C64], n_max: u64) -> Result<Vec<f64>> {
    if a0.len() != model.size() {
        return Err(Error::Shape(format!("{} coefficients for N = {}", a0.len(), model.size())));
    }
    let mut a = a0.to_vec();
    let mut out = Vec::with_capacity(n_max as usize + 1);
    out.push(numkit::quadratic_form(&model.g, &a).re);
    for _ in 0..n_max {
        a = numkit::matvec(&model.k, &a);
        let e = numkit::quadratic_form(&model.g, &a).re;
        out.push(e);
        if !e.is_finite() {
            return Err(Error::NonFinite("advanced coefficients"));
        }
    }
    Ok(out)
}

/// Coefficient vector of `e_j`.
pub fn unit_coefficients(n: usize, j: usize) -> Vec<C64> {
    (0..n).map(|i| cplx(if i == j { 1.0 } else { 0.0 }, 0.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomp::{edmd, mpedmd};
    use crate::dictionary::{evaluate, gram, Dictionary, Observable};
    use crate::numkit::RMatrix;
    use std::f64::consts::TAU;

    struct Rot {
        gp: GramPair,
        psi_x: CMatrix,
        x: RMatrix,
        w: Vec<f64>,
    }

    fn rotation(alpha: f64, kmax: i32, m: usize) -> Rot {
        let dict = Dictionary::fourier(kmax);
        let x = Mat::from_fn(m, 1, |i, _| -std::f64::consts::PI + TAU * i as f64 / m as f64);
        let y = Mat::from_fn(m, 1, |i, _| x[(i, 0)] + alpha);
        let psi_x = evaluate(&dict, &x).unwrap();
        let w = vec![1.0 / m as f64; m];
        let gp = gram(&psi_x, &evaluate(&dict, &y).unwrap(), &w).unwrap();
        Rot { gp, psi_x, x, w }
    }

    #[test]
    fn projection_examples() {
        let r = rotation(0.5, 2, 32);
        let samples = numkit::column(&r.psi_x, 1);
        let c = project_observable(&r.gp, &r.psi_x, &r.w, &samples).unwrap();
        for (j, v) in c.iter().enumerate() {
            let e = if j == 1 { 1.0 } else { 0.0 };
            assert!((v - cplx(e, 0.0)).norm() < 1e-12);
        }
        // e^{4 i theta} is orthogonal to |k| <= 2 on the 32-point grid
        let samples: Vec<C64> = (0..32).map(|m| Observable::Fourier(4).eval(&[r.x[(m, 0)]])).collect();
        let c = project_observable(&r.gp, &r.psi_x, &r.w, &samples).unwrap();
        assert!(c.iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn rotation_prediction_is_exact() {
        let alpha = 1.0;
        let r = rotation(alpha, 3, 64);
        let model = mpedmd(&r.gp).unwrap();
        let target = Mat::from_fn(64, 1, |m, _| C64::from_polar(1.0, r.x[(m, 0)]));
        let kmd = build_kmd(&model, &r.gp, &r.psi_x, &r.w, &target).unwrap();
        let theta0 = 0.3;
        let row = eigenfunction_row(&model, &Dictionary::fourier(3).eval_row(&[theta0])).unwrap();
        for n in [0u64, 1, 7, 100] {
            let p = predict(&kmd, &row, n)[0];
            assert!((p - C64::from_polar(1.0, theta0 + n as f64 * alpha)).norm() < 1e-8, "n={n}");
        }
    }

    #[test]
    fn identity_dynamics_constant_forecast() {
        let r = rotation(0.0, 2, 32);
        let model = mpedmd(&r.gp).unwrap();
        let coeffs = Mat::from_fn(5, 1, |j, _| cplx(0.1 * j as f64, 0.3));
        let kmd = kmd_from_coefficients(&model, &coeffs).unwrap();
        let row = eigenfunction_row(&model, &Dictionary::fourier(2).eval_row(&[0.7])).unwrap();
        let p0 = predict(&kmd, &row, 0)[0];
        for n in [1, 10, 1000] {
            assert!((predict(&kmd, &row, n)[0] - p0).norm() < 1e-12);
        }
    }

    #[test]
    fn eigenfunction_target_gives_unit_mode() {
        let r = rotation(0.4, 2, 32);
        let model = edmd(&r.gp).unwrap();
        let v = numkit::column(&model.eigvecs, 3);
        let kmd = kmd_from_coefficients(&model, &Mat::from_fn(5, 1, |i, _| v[i])).unwrap();
        for j in 0..5 {
            let e = if j == 3 { 1.0 } else { 0.0 };
            assert!((kmd.modes[(j, 0)] - cplx(e, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn energy_is_conserved_for_mpedmd() {
        let r = rotation(0.9, 3, 64);
        let model = mpedmd(&r.gp).unwrap();
        let a0: Vec<C64> = (0..7).map(|j| cplx((j as f64).cos(), 0.2 * j as f64)).collect();
        let e0 = coeff_energy(&model, &a0, 0).unwrap();
        assert!((e0 - numkit::quadratic_form(&model.g, &a0).re).abs() < 1e-12 * e0);
        for n in [1, 100, 10_000] {
            assert!((coeff_energy(&model, &a0, n).unwrap() - e0).abs() <= 1e-9 * e0);
        }
    }

    #[test]
    fn prediction_csv_layout() {
        let s = prediction_csv(&[(0, cplx(1.0, -0.5))]);
        assert_eq!(s, "n,re,im\n0,1.0,-0.5\n");
    }
}
