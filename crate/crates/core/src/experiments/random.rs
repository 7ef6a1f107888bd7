//! Seeded random test instances.

use faer::Mat;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dictionary::GramPair;
use crate::numkit::{cplx, hermitian_part, CMatrix, C64};

pub fn complex_normal(rng: &mut impl Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    cplx(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn complex_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> CMatrix {
    Mat::from_fn(rows, cols, |_, _| complex_normal(rng))
}

pub fn complex_vector(rng: &mut impl Rng, n: usize) -> Vec<C64> {
    (0..n).map(|_| complex_normal(rng)).collect()
}

/// `G = B* B + eps I` with complex Gaussian `B` and an independent Gaussian
/// `A`.
pub fn gram_pair(rng: &mut impl Rng, n: usize, eps: f64) -> GramPair {
    let b = complex_matrix(rng, n, n);
    let mut g = b.adjoint() * &b;
    for i in 0..n {
        g[(i, i)] += cplx(eps, 0.0);
    }
    let a = complex_matrix(rng, n, n);
    GramPair {
        g: hermitian_part(&g),
        a,
    }
}

/// Haar-distributed unitary matrix (QR of a Gaussian matrix with the phases
/// of `R`'s diagonal absorbed).
pub fn unitary(rng: &mut impl Rng, n: usize) -> CMatrix {
    let z = complex_matrix(rng, n, n);
    let qr = z.qr();
    let q = qr.compute_Q();
    let r = qr.R();
    Mat::from_fn(n, n, |i, j| {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { cplx(1.0, 0.0) };
        q[(i, j)] * ph
    })
}
