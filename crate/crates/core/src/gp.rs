//! Stationary isotropic Gaussian-process covariances and simulation.
//!
//! The correlation family is exponential, corr(u) = exp(-u/phi). The
//! practical range (correlation below 0.05) is therefore 3*phi.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance_matrix, DistanceMatrix, Location};
use crate::numeric::chol;
use crate::rng;

/// Variance and scale of a spatial process.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GpParams {
    /// Process variance sigma^2.
    pub sigma2: f64,
    /// Scale phi in kilometres.
    pub phi: f64,
}

impl GpParams {
    pub fn new(sigma2: f64, phi: f64) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::validation(format!("gp: sigma2 must be > 0, got {sigma2}")));
        }
        if !(phi > 0.0) || !phi.is_finite() {
            return Err(Error::validation(format!("gp: phi must be > 0, got {phi}")));
        }
        Ok(GpParams { sigma2, phi })
    }

    /// Distance beyond which correlation drops below 0.05.
    pub fn practical_range(&self) -> f64 {
        3.0 * self.phi
    }
}

/// Variance of the non-spatial noise component.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NuggetParams {
    pub tau2: f64,
}

impl NuggetParams {
    pub fn new(tau2: f64) -> Result<Self> {
        if !(tau2 >= 0.0) || !tau2.is_finite() {
            return Err(Error::validation(format!("gp: tau2 must be >= 0, got {tau2}")));
        }
        Ok(NuggetParams { tau2 })
    }
}

/// Symmetric positive-definite matrix with its cached lower Cholesky factor.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    matrix: Array2<f64>,
    factor: Array2<f64>,
}

impl SpdMatrix {
    /// Factorize `matrix`; fails if it is not positive definite.
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        let factor = chol::cholesky(matrix.view())?;
        Ok(SpdMatrix { matrix, factor })
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    /// Lower-triangular factor L with A = L L^T.
    pub fn factor(&self) -> &Array2<f64> {
        &self.factor
    }

    pub fn log_determinant(&self) -> f64 {
        chol::logdet_from_factor(self.factor.view())
    }

    pub fn solve(&self, b: ArrayView1<f64>) -> Array1<f64> {
        chol::solve_spd(self.factor.view(), b)
    }

    /// x^T A^{-1} x via one triangular solve.
    pub fn quad_form_inv(&self, x: ArrayView1<f64>) -> f64 {
        let y = chol::solve_lower(self.factor.view(), x);
        y.dot(&y)
    }
}

/// Exponential correlation exp(-u/phi).
pub fn exp_correlation(u: f64, phi: f64) -> Result<f64> {
    if !(u >= 0.0) || !u.is_finite() {
        return Err(Error::validation(format!(
            "exp_correlation: distance must be >= 0, got {u}"
        )));
    }
    if !(phi > 0.0) || !phi.is_finite() {
        return Err(Error::validation(format!(
            "exp_correlation: phi must be > 0, got {phi}"
        )));
    }
    Ok((-u / phi).exp())
}

/// Correlation matrix exp(-d/phi) without variance scaling.
pub fn correlation_matrix(phi: f64, d: &DistanceMatrix) -> Array2<f64> {
    d.matrix().mapv(|u| (-u / phi).exp())
}

/// Covariance sigma^2 exp(-d/phi), optionally with tau^2 added on the
/// diagonal, factorized on construction.
///
/// If the factorization fails (coincident sites with no nugget), the
/// diagonal is jittered once by 1e-10 * sigma2 with a warning; a second
/// failure is an error naming the closest offending pair.
pub fn covariance_matrix(
    params: &GpParams,
    d: &DistanceMatrix,
    nugget: Option<&NuggetParams>,
) -> Result<SpdMatrix> {
    GpParams::new(params.sigma2, params.phi)?;
    if let Some(n) = nugget {
        NuggetParams::new(n.tau2)?;
    }
    let n = d.n();
    let mut m = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            m[[i, j]] = params.sigma2 * (-d.get(i, j) / params.phi).exp();
        }
    }
    if let Some(ng) = nugget {
        for i in 0..n {
            m[[i, i]] += ng.tau2;
        }
    }
    match SpdMatrix::new(m.clone()) {
        Ok(s) => Ok(s),
        Err(_) => {
            log::warn!("covariance factorization failed; retrying with jitter 1e-10*sigma2");
            let jitter = 1e-10 * params.sigma2;
            for i in 0..n {
                m[[i, i]] += jitter;
            }
            SpdMatrix::new(m).map_err(|_| {
                let (i, j) = closest_pair(d);
                Error::numerical(format!(
                    "covariance not positive definite even after jitter; closest site pair \
                     ({i}, {j}) at distance {:.6e} km",
                    d.get(i, j)
                ))
            })
        }
    }
}

fn closest_pair(d: &DistanceMatrix) -> (usize, usize) {
    let n = d.n();
    let mut best = (0, if n > 1 { 1 } else { 0 });
    let mut best_d = f64::INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            if d.get(i, j) < best_d {
                best_d = d.get(i, j);
                best = (i, j);
            }
        }
    }
    best
}

/// One zero-mean draw with covariance `sigma2 exp(-d/phi)` at `locations`;
/// deterministic given `seed`.
pub fn simulate_gp(params: &GpParams, locations: &[Location], seed: u64) -> Result<Vec<f64>> {
    let d = distance_matrix(locations)?;
    let cov = covariance_matrix(params, &d, None)?;
    let mut rng = rng::stream(seed, "gp-sim", 0);
    let z: Array1<f64> = Array1::from_iter(
        (0..locations.len()).map(|_| StandardNormal.sample(&mut rng)),
    );
    Ok(cov.factor().dot(&z).to_vec())
}

/// Draw standard normals and map through a cached factor; used by the
/// dataset simulator so every component draws from its own derived stream.
pub fn draw_with_factor(
    factor: ArrayView2<f64>,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Array1<f64> {
    let n = factor.nrows();
    let z: Array1<f64> = Array1::from_iter((0..n).map(|_| StandardNormal.sample(rng)));
    factor.dot(&z)
}
