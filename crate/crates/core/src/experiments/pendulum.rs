//! Pendulum delay-embedding data on the tensor trapezoid grid.

use faer::Mat;
use rayon::prelude::*;

use crate::dictionary::{delay_from_samples, DataMatrices, Observable};
use crate::error::{Error, Result};
use crate::numkit::{CMatrix, C64};
use crate::sampling::{pendulum_flow, tensor_trapezoid_grid, QuadratureGrid};

#[derive(Debug, Clone)]
pub struct PendulumSetup {
    pub m1: usize,
    pub m2: usize,
    pub bound: f64,
    pub n: usize,
    pub dt: f64,
    pub substeps: usize,
}

/// Delay samples `g(F^j(x^(m)))`, `j = 0..=N`, at every grid node, with the
/// quadrature weights normalized to sum to one.
#[derive(Debug, Clone)]
pub struct PendulumData {
    pub grid: QuadratureGrid,
    pub samples: CMatrix,
    pub weights: Vec<f64>,
}

impl PendulumData {
    pub fn generate(setup: &PendulumSetup, g: &Observable) -> Result<Self> {
        if setup.n == 0 {
            return Err(Error::Invalid("delay depth must be positive".into()));
        }
        let grid = tensor_trapezoid_grid(setup.m1, setup.m2, setup.bound)?;
        let m = grid.weights.len();
        let rows: Vec<Vec<C64>> = (0..m)
            .into_par_iter()
            .map(|r| {
                let mut x = [grid.nodes[(r, 0)], grid.nodes[(r, 1)]];
                let mut row = Vec::with_capacity(setup.n + 1);
                row.push(g.eval(&x));
                for _ in 0..setup.n {
                    x = pendulum_flow(x, setup.dt, setup.substeps);
                    row.push(g.eval(&x));
                }
                row
            })
            .collect();
        let samples = Mat::from_fn(m, setup.n + 1, |i, j| rows[i][j]);
        crate::numkit::check_finite(&samples, "pendulum samples")?;
        let total: f64 = grid.weights.iter().sum();
        let weights = grid.weights.iter().map(|w| w / total).collect();
        Ok(Self { grid, samples, weights })
    }

    pub fn data_matrices(&self) -> Result<DataMatrices> {
        delay_from_samples(&self.samples, self.weights.clone())
    }
}
