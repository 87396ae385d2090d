//! Plug-in spatial prediction: exact Gaussian conditioning of the latent
//! field at target locations given retained MCMC draws at the data sites,
//! composed through the model's linear predictor into prevalence draws,
//! summarized as mean, SD and exceedance probabilities.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance_matrix, Location};
use crate::inference::{sample_latent_conditional, FitResult, McmcOptions};
use crate::model::latent::{dot, LatentField};
use crate::model::{ParamName, Structure, SurveyDataset};
use crate::numeric::chol;
use crate::rng;

/// Locations to predict at, with regression designs per diagnostic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictionTarget {
    pub locations: Vec<Location>,
    /// designs[k][t] is the design vector of diagnostic k at location t.
    pub designs: [Vec<Vec<f64>>; 2],
}

impl PredictionTarget {
    /// Intercept-only target at the given locations for `n_diag` diagnostics.
    pub fn intercept_only(locations: Vec<Location>, n_diag: usize) -> Self {
        let d: Vec<Vec<f64>> = locations.iter().map(|_| vec![1.0]).collect();
        let designs = [d.clone(), if n_diag > 1 { d } else { Vec::new() }];
        PredictionTarget { locations, designs }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictOptions {
    pub thresholds: Vec<f64>,
    /// Draw fresh nugget terms at target locations (sampling-scale
    /// prevalence). Disable to predict the signal-scale prevalence surface.
    pub include_nugget: bool,
    pub mcmc: McmcOptions,
    /// Proceed even when the fit did not converge.
    pub allow_unconverged: bool,
    /// Keep the per-draw prevalence matrices (targets x draws).
    pub keep_draws: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        PredictOptions {
            thresholds: Vec::new(),
            include_nugget: true,
            mcmc: McmcOptions::default(),
            allow_unconverged: false,
            keep_draws: false,
        }
    }
}

/// Summaries per diagnostic over the target locations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticSurface {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    /// exceedance[t][loc] = P(prevalence > thresholds[t]).
    pub exceedance: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct PredictionSurface {
    pub locations: Vec<Location>,
    pub thresholds: Vec<f64>,
    pub diagnostics: Vec<DiagnosticSurface>,
    pub n_draws: usize,
    pub warnings: Vec<String>,
    /// Per-draw prevalence (targets x draws) when requested.
    pub draws: Vec<Option<Array2<f64>>>,
}

/// Conditional simulator for one spatial field at the targets.
struct FieldConditioner {
    /// latent block offset in the sample draws, or None when the field has
    /// no data support (unconditional at targets)
    block: Option<(usize, usize)>,
    /// L_ss^-1 (cross-covariance to targets), n_s x n_t
    k: Option<Array2<f64>>,
    /// factor of the conditional covariance at targets
    factor: Array2<f64>,
    /// lower factor of the data-site covariance
    l_ss: Option<Array2<f64>>,
}

impl FieldConditioner {
    fn build(
        sigma2: f64,
        phi: f64,
        support: Option<(&[Location], usize, usize)>,
        targets: &[Location],
    ) -> Result<FieldConditioner> {
        let n_t = targets.len();
        let mut cov_tt = Array2::<f64>::zeros((n_t, n_t));
        for i in 0..n_t {
            for j in 0..n_t {
                let d = targets[i].distance_to(&targets[j]);
                cov_tt[[i, j]] = sigma2 * (-d / phi).exp();
            }
        }
        match support {
            None => {
                let factor = factor_with_jitter(cov_tt, sigma2)?;
                Ok(FieldConditioner { block: None, k: None, factor, l_ss: None })
            }
            Some((locs, offset, len)) => {
                let d_ss = distance_matrix(locs)?;
                let cov_ss = d_ss.matrix().mapv(|u| sigma2 * (-u / phi).exp());
                let l_ss = factor_with_jitter(cov_ss, sigma2)?;
                let mut cov_st = Array2::<f64>::zeros((locs.len(), n_t));
                for i in 0..locs.len() {
                    for j in 0..n_t {
                        let d = locs[i].distance_to(&targets[j]);
                        cov_st[[i, j]] = sigma2 * (-d / phi).exp();
                    }
                }
                let k = chol::solve_lower_multi(l_ss.view(), cov_st.view());
                // conditional covariance = cov_tt - K' K
                let mut cond = cov_tt;
                for a in 0..n_t {
                    for b in 0..n_t {
                        let mut s = 0.0;
                        for i in 0..locs.len() {
                            s += k[[i, a]] * k[[i, b]];
                        }
                        cond[[a, b]] -= s;
                    }
                }
                let factor = factor_with_jitter(cond, sigma2)?;
                Ok(FieldConditioner {
                    block: Some((offset, len)),
                    k: Some(k),
                    factor,
                    l_ss: Some(l_ss),
                })
            }
        }
    }

    /// One draw of the field at the targets given a latent draw row.
    fn draw(&self, latent_row: &[f64], rng: &mut rand_chacha::ChaCha8Rng) -> Array1<f64> {
        let n_t = self.factor.nrows();
        let z: Array1<f64> = Array1::from_iter((0..n_t).map(|_| StandardNormal.sample(rng)));
        let mut out = self.factor.dot(&z);
        if let (Some((offset, len)), Some(k), Some(l_ss)) = (self.block, &self.k, &self.l_ss) {
            let s = ndarray::ArrayView1::from(&latent_row[offset..offset + len]);
            let v = chol::solve_lower(l_ss.view(), s);
            out = out + k.t().dot(&v);
        }
        out
    }
}

fn factor_with_jitter(mut m: Array2<f64>, sigma2: f64) -> Result<Array2<f64>> {
    match chol::cholesky(m.view()) {
        Ok(l) => Ok(l),
        Err(_) => {
            let jitter = 1e-10 * sigma2.max(1e-12);
            for i in 0..m.nrows() {
                m[[i, i]] += jitter;
            }
            chol::cholesky(m.view())
                .map_err(|e| Error::numerical(format!("conditional covariance: {e}")))
        }
    }
}

/// Predict prevalence surfaces for every diagnostic of the fitted model.
pub fn predict_surface(
    fit: &FitResult,
    data: &SurveyDataset,
    target: &PredictionTarget,
    opts: &PredictOptions,
    seed: u64,
) -> Result<PredictionSurface> {
    let spec = &fit.spec;
    data.check_spec(spec)?;
    if !fit.converged && !opts.allow_unconverged {
        return Err(Error::validation(
            "fit did not converge; set allow_unconverged to predict anyway",
        ));
    }
    for th in &opts.thresholds {
        if !(0.0..=1.0).contains(th) {
            return Err(Error::validation(format!("threshold {th} outside [0,1]")));
        }
    }
    let n_t = target.locations.len();
    if n_t == 0 {
        return Err(Error::validation("prediction target is empty"));
    }
    for k in 0..spec.n_diagnostics() {
        if target.designs[k].len() != n_t {
            return Err(Error::validation(format!(
                "target designs for diagnostic {} have length {} but {} locations",
                k + 1,
                target.designs[k].len(),
                n_t
            )));
        }
        for d in &target.designs[k] {
            if d.len() != spec.design_dims[k] {
                return Err(Error::validation(format!(
                    "target design dimension {} does not match spec {} for diagnostic {}",
                    d.len(),
                    spec.design_dims[k],
                    k + 1
                )));
            }
        }
    }

    let mut warnings = Vec::new();
    let params = &fit.params;
    let samples = sample_latent_conditional(
        spec,
        params,
        data,
        &opts.mcmc,
        rng::derive_seed(seed, "predict-mcmc", 0),
    )?;
    warnings.extend(samples.warnings.iter().cloned());
    let n_draws = samples.n_samples();
    if n_draws < 1000 {
        warnings.push(format!(
            "only {n_draws} retained draws (floor 1000); exceedance probabilities have \
             Monte Carlo SE up to {:.3}",
            0.5 / (n_draws as f64).sqrt()
        ));
    }

    // conditioners for every spatial field the spec activates
    let mut fields: Vec<(LatentField, FieldConditioner)> = Vec::new();
    let spec_fields: Vec<LatentField> = match spec.structure {
        Structure::Univariate => {
            let mut v = Vec::new();
            if spec.include_s[0] {
                v.push(LatentField::S(0));
            }
            v
        }
        Structure::Asymmetric => {
            let mut v = Vec::new();
            for k in 0..2 {
                if spec.include_s[k] {
                    v.push(LatentField::S(k));
                }
            }
            v
        }
        Structure::Symmetric => {
            let mut v = vec![LatentField::T];
            for k in 0..2 {
                if spec.include_specific_s[k] {
                    v.push(LatentField::S(k));
                }
            }
            v
        }
    };
    for field in spec_fields {
        let (sigma2, phi) = match field {
            LatentField::S(k) => (
                params.value(ParamName::Sigma2(k))?,
                params.value(ParamName::Phi(k))?,
            ),
            LatentField::T => (1.0, params.value(ParamName::PhiT)?),
            LatentField::Z(_) => unreachable!(),
        };
        let cond = match samples.layout.component(field) {
            Some(comp) => {
                let locs: Vec<Location> = comp.support.iter().map(|&s| data.sites()[s]).collect();
                FieldConditioner::build(
                    sigma2,
                    phi,
                    Some((&locs, comp.offset, comp.len())),
                    &target.locations,
                )?
            }
            None => FieldConditioner::build(sigma2, phi, None, &target.locations)?,
        };
        fields.push((field, cond));
    }
    let field_index = |f: LatentField| fields.iter().position(|(g, _)| *g == f);

    // per-diagnostic intercept parts at the targets
    let n_diag = spec.n_diagnostics();
    let mut xb: Vec<Vec<f64>> = Vec::new();
    for k in 0..n_diag {
        let beta = params.beta(k);
        xb.push(target.designs[k].iter().map(|d| dot(d, &beta)).collect());
    }

    let mut cond_rngs: Vec<rand_chacha::ChaCha8Rng> = fields
        .iter()
        .enumerate()
        .map(|(i, _)| rng::stream(seed, "predict-field", i as u64))
        .collect();
    let mut nug_rngs: Vec<rand_chacha::ChaCha8Rng> = (0..n_diag)
        .map(|k| rng::stream(seed, "predict-nugget", k as u64))
        .collect();

    let mut p_draws: Vec<Array2<f64>> = (0..n_diag).map(|_| Array2::zeros((n_t, n_draws))).collect();
    let mut field_vals: Vec<Array1<f64>> = vec![Array1::zeros(n_t); fields.len()];
    for j in 0..n_draws {
        let row = samples.draws.row(j);
        let row = row.as_slice().unwrap();
        for (i, (_, cond)) in fields.iter().enumerate() {
            field_vals[i] = cond.draw(row, &mut cond_rngs[i]);
        }
        let fresh_z = |k: usize, rngs: &mut Vec<rand_chacha::ChaCha8Rng>| -> Array1<f64> {
            if opts.include_nugget && spec.include_nugget[k] {
                let tau = params.value_or(ParamName::Tau2(k), 0.0).sqrt();
                Array1::from_iter((0..n_t).map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rngs[k]);
                    tau * e
                }))
            } else {
                Array1::zeros(n_t)
            }
        };
        match spec.structure {
            Structure::Univariate => {
                let z = fresh_z(0, &mut nug_rngs);
                let s = field_index(LatentField::S(0)).map(|i| &field_vals[i]);
                for t in 0..n_t {
                    let eta = xb[0][t] + s.map_or(0.0, |v| v[t]) + z[t];
                    p_draws[0][[t, j]] = spec.links[0].inverse(eta);
                }
            }
            Structure::Asymmetric => {
                let alpha = params.value(ParamName::Alpha)?;
                let z1 = fresh_z(0, &mut nug_rngs);
                let z2 = fresh_z(1, &mut nug_rngs);
                let s1 = field_index(LatentField::S(0)).map(|i| &field_vals[i]);
                let s2 = field_index(LatentField::S(1)).map(|i| &field_vals[i]);
                for t in 0..n_t {
                    let eta1 = xb[0][t] + s1.map_or(0.0, |v| v[t]) + z1[t];
                    let eta2 =
                        xb[1][t] + s2.map_or(0.0, |v| v[t]) + z2[t] + alpha * eta1;
                    p_draws[0][[t, j]] = spec.links[0].inverse(eta1);
                    p_draws[1][[t, j]] = spec.links[1].inverse(eta2);
                }
            }
            Structure::Symmetric => {
                let tv = field_index(LatentField::T).map(|i| &field_vals[i]);
                for k in 0..2 {
                    let nu = params.value(ParamName::Nu2(k))?.sqrt();
                    let z = fresh_z(k, &mut nug_rngs);
                    let sk = field_index(LatentField::S(k)).map(|i| &field_vals[i]);
                    for t in 0..n_t {
                        let eta = xb[k][t]
                            + nu * (tv.map_or(0.0, |v| v[t]) + sk.map_or(0.0, |v| v[t]))
                            + z[t];
                        p_draws[k][[t, j]] = spec.links[k].inverse(eta);
                    }
                }
            }
        }
    }

    let mut diagnostics = Vec::new();
    for k in 0..n_diag {
        let m = &p_draws[k];
        let mut mean = vec![0.0; n_t];
        let mut sd = vec![0.0; n_t];
        let mut exceedance = vec![vec![0.0; n_t]; opts.thresholds.len()];
        for t in 0..n_t {
            let row = m.row(t);
            let mu = row.sum() / n_draws as f64;
            let var = row.iter().map(|p| (p - mu) * (p - mu)).sum::<f64>()
                / (n_draws as f64 - 1.0).max(1.0);
            mean[t] = mu;
            sd[t] = var.max(0.0).sqrt();
            for (ti, thr) in opts.thresholds.iter().enumerate() {
                let c = row.iter().filter(|p| **p > *thr).count();
                exceedance[ti][t] = c as f64 / n_draws as f64;
            }
        }
        diagnostics.push(DiagnosticSurface { mean, sd, exceedance });
    }

    let draws = p_draws
        .into_iter()
        .map(|m| if opts.keep_draws { Some(m) } else { None })
        .collect();
    Ok(PredictionSurface {
        locations: target.locations.clone(),
        thresholds: opts.thresholds.clone(),
        diagnostics,
        n_draws,
        warnings,
        draws,
    })
}

/// Locations whose exceedance probability at `prevalence_threshold` is at
/// least `ep_threshold`, per diagnostic.
pub fn hotspot_mask(
    surface: &PredictionSurface,
    prevalence_threshold: f64,
    ep_threshold: f64,
) -> Result<Vec<Vec<bool>>> {
    let ti = surface
        .thresholds
        .iter()
        .position(|t| (t - prevalence_threshold).abs() < 1e-12)
        .ok_or_else(|| {
            Error::validation(format!(
                "prevalence threshold {prevalence_threshold} was not configured \
                 (available: {:?})",
                surface.thresholds
            ))
        })?;
    Ok(surface
        .diagnostics
        .iter()
        .map(|d| d.exceedance[ti].iter().map(|ep| *ep >= ep_threshold).collect())
        .collect())
}

/// Elementwise differences of two surfaces over identical targets.
#[derive(Debug, Clone)]
pub struct SurfaceDifference {
    pub locations: Vec<Location>,
    pub thresholds: Vec<f64>,
    /// mean_diff[k][t] = a.mean - b.mean.
    pub mean_diff: Vec<Vec<f64>>,
    /// ep_diff[k][threshold][t].
    pub ep_diff: Vec<Vec<Vec<f64>>>,
}

impl SurfaceDifference {
    /// (min, max) of the mean difference over the grid for diagnostic k.
    pub fn mean_range(&self, diag: usize) -> (f64, f64) {
        let v = &self.mean_diff[diag];
        let mn = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (mn, mx)
    }

    pub fn ep_range(&self, diag: usize, threshold_index: usize) -> (f64, f64) {
        let v = &self.ep_diff[diag][threshold_index];
        let mn = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (mn, mx)
    }
}

pub fn surface_difference(
    a: &PredictionSurface,
    b: &PredictionSurface,
) -> Result<SurfaceDifference> {
    if a.locations.len() != b.locations.len()
        || a.locations
            .iter()
            .zip(b.locations.iter())
            .any(|(x, y)| (x.x - y.x).abs() > 1e-12 || (x.y - y.y).abs() > 1e-12)
    {
        return Err(Error::validation("surface difference: target locations differ"));
    }
    if a.thresholds != b.thresholds {
        return Err(Error::validation("surface difference: thresholds differ"));
    }
    if a.diagnostics.len() != b.diagnostics.len() {
        return Err(Error::validation("surface difference: diagnostic counts differ"));
    }
    let mean_diff = a
        .diagnostics
        .iter()
        .zip(b.diagnostics.iter())
        .map(|(da, db)| da.mean.iter().zip(db.mean.iter()).map(|(x, y)| x - y).collect())
        .collect();
    let ep_diff = a
        .diagnostics
        .iter()
        .zip(b.diagnostics.iter())
        .map(|(da, db)| {
            da.exceedance
                .iter()
                .zip(db.exceedance.iter())
                .map(|(ea, eb)| ea.iter().zip(eb.iter()).map(|(x, y)| x - y).collect())
                .collect()
        })
        .collect();
    Ok(SurfaceDifference {
        locations: a.locations.clone(),
        thresholds: a.thresholds.clone(),
        mean_diff,
        ep_diff,
    })
}
