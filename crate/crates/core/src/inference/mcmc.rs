//! Metropolis-adjusted Langevin sampling of the latent field conditional on
//! the data.
//!
//! The chain runs on the whitened scale u, where the latent vector is
//! s = A u with A the block Cholesky factor of the latent prior covariance.
//! Whitening removes covariance-induced poor mixing; the Langevin proposal
//! uses the gradient of the whitened log-target. The step size follows a
//! Robbins-Monro recursion toward the target acceptance rate during burn-in
//! and is frozen afterwards.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::distance_matrix;
use crate::gp::{covariance_matrix, GpParams};
use crate::model::latent::{LatentField, LatentLayout};
use crate::model::{LinkFunction, ModelSpec, ParamName, ParameterVector, Structure, SurveyDataset};
use crate::rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct McmcOptions {
    pub n_iterations: usize,
    pub burn_in: usize,
    /// Keep every `thinning`-th post-burn-in state.
    pub thinning: usize,
    /// Initial proposal scale before the dimension factor m^(-1/3).
    pub initial_step: f64,
    pub target_acceptance: f64,
}

impl Default for McmcOptions {
    fn default() -> Self {
        McmcOptions {
            n_iterations: 11_000,
            burn_in: 1_000,
            thinning: 10,
            initial_step: 0.2,
            target_acceptance: 0.57,
        }
    }
}

impl McmcOptions {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.n_iterations {
            return Err(Error::validation(format!(
                "mcmc: burn_in {} must be below n_iterations {}",
                self.burn_in, self.n_iterations
            )));
        }
        if self.thinning == 0 {
            return Err(Error::validation("mcmc: thinning must be >= 1"));
        }
        if self.retained() < 100 {
            return Err(Error::validation(format!(
                "mcmc: retained samples {} below the floor of 100",
                self.retained()
            )));
        }
        if !(self.initial_step > 0.0) {
            return Err(Error::validation("mcmc: initial step size must be positive"));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::validation("mcmc: target acceptance must lie in (0,1)"));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        (self.n_iterations - self.burn_in) / self.thinning
    }

    /// Budget-scaled copy, never dropping below the retained floor.
    pub fn scaled(&self, factor: f64) -> McmcOptions {
        let retained = ((self.retained() as f64 * factor).round() as usize).max(100);
        McmcOptions {
            n_iterations: retained * self.thinning + self.burn_in,
            ..self.clone()
        }
    }
}

/// Retained draws of the stacked latent vector (raw, unwhitened scale).
#[derive(Debug, Clone)]
pub struct LatentSampleSet {
    pub layout: LatentLayout,
    /// retained x dim matrix of latent draws.
    pub draws: Array2<f64>,
    pub acceptance_rate: f64,
    pub step_size: f64,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl LatentSampleSet {
    pub fn n_samples(&self) -> usize {
        self.draws.nrows()
    }
}

/// A differentiable unnormalized log-density on R^m.
pub(crate) trait LogTarget {
    fn dim(&self) -> usize;
    fn logp_grad(&self, u: &[f64]) -> (f64, Vec<f64>);
}

/// Generic MALA driver; returns retained whitened states row-wise.
pub(crate) fn mala_chain<T: LogTarget>(
    target: &T,
    opts: &McmcOptions,
    seed: u64,
) -> Result<(Array2<f64>, f64, f64, Vec<String>)> {
    opts.validate()?;
    let m = target.dim();
    let mut warnings = Vec::new();
    let mut rng = rng::stream(seed, "mala", 0);
    let mut u = vec![0.0; m];
    let (mut logp, mut grad) = target.logp_grad(&u);
    if !logp.is_finite() {
        return Err(Error::numerical("mala: log-target not finite at the origin"));
    }
    let mut h = opts.initial_step * (m as f64).powf(-1.0 / 3.0);
    let retained = opts.retained();
    let mut draws = Array2::<f64>::zeros((retained, m));
    let mut kept = 0usize;
    let mut accepted_post = 0usize;
    let mut post_iters = 0usize;

    let mut prop = vec![0.0; m];
    for iter in 0..opts.n_iterations {
        let h2 = h * h;
        for i in 0..m {
            let xi: f64 = StandardNormal.sample(&mut rng);
            prop[i] = u[i] + 0.5 * h2 * grad[i] + h * xi;
        }
        let (logp_new, grad_new) = target.logp_grad(&prop);
        let mut log_ratio = f64::NEG_INFINITY;
        if logp_new.is_finite() {
            // q(u | u') and q(u' | u)
            let mut fwd = 0.0;
            let mut back = 0.0;
            for i in 0..m {
                let df = prop[i] - u[i] - 0.5 * h2 * grad[i];
                let db = u[i] - prop[i] - 0.5 * h2 * grad_new[i];
                fwd += df * df;
                back += db * db;
            }
            log_ratio = logp_new - logp + (fwd - back) / (2.0 * h2);
        }
        let alpha = log_ratio.min(0.0).exp();
        let accept = rng.gen::<f64>() < alpha;
        if accept {
            u.copy_from_slice(&prop);
            logp = logp_new;
            grad = grad_new;
        }
        if iter < opts.burn_in {
            // Robbins-Monro step-size adaptation toward the target rate
            let gamma = 0.7 * ((iter + 1) as f64).powf(-0.6);
            h = (h.ln() + gamma * (alpha - opts.target_acceptance)).exp();
            h = h.clamp(1e-8, 10.0);
        } else {
            post_iters += 1;
            if accept {
                accepted_post += 1;
            }
            if post_iters % opts.thinning == 0 && kept < retained {
                draws.row_mut(kept).assign(&Array1::from(u.clone()));
                kept += 1;
            }
        }
    }
    let acc = accepted_post as f64 / post_iters.max(1) as f64;
    if !(0.1..=0.9).contains(&acc) {
        warnings.push(format!(
            "mcmc acceptance rate {acc:.3} outside (0.1, 0.9) after adaptation; \
             consider a different initial step size"
        ));
    }
    Ok((draws, acc, h, warnings))
}

/// Whitening operator: block Cholesky factors of the latent prior.
pub(crate) struct Whitener {
    /// (offset, factor) per spatial block.
    spatial: Vec<(usize, Array2<f64>)>,
    /// (offset, len, tau) per nugget block.
    nugget: Vec<(usize, usize, f64)>,
    pub dim: usize,
}

impl Whitener {
    pub fn build(
        spec: &ModelSpec,
        params: &ParameterVector,
        data: &SurveyDataset,
        layout: &LatentLayout,
    ) -> Result<Whitener> {
        let _ = spec;
        let mut spatial = Vec::new();
        let mut nugget = Vec::new();
        for comp in &layout.components {
            match comp.field {
                LatentField::Z(k) => {
                    nugget.push((comp.offset, comp.len(), params.value(ParamName::Tau2(k))?.sqrt()));
                }
                field => {
                    let (sigma2, phi) = match field {
                        LatentField::S(k) => (
                            params.value(ParamName::Sigma2(k))?,
                            params.value(ParamName::Phi(k))?,
                        ),
                        LatentField::T => (1.0, params.value(ParamName::PhiT)?),
                        LatentField::Z(_) => unreachable!(),
                    };
                    let locs: Vec<_> = comp.support.iter().map(|&s| data.sites()[s]).collect();
                    let d = distance_matrix(&locs)?;
                    let cov = covariance_matrix(&GpParams::new(sigma2, phi)?, &d, None)?;
                    spatial.push((comp.offset, cov.factor().clone()));
                }
            }
        }
        Ok(Whitener { spatial, nugget, dim: layout.total_dim })
    }

    /// s = A u.
    pub fn unwhiten(&self, u: &[f64], s: &mut [f64]) {
        for &(off, len, tau) in &self.nugget {
            for i in 0..len {
                s[off + i] = tau * u[off + i];
            }
        }
        for (off, l) in &self.spatial {
            let n = l.nrows();
            for i in 0..n {
                let row = l.row(i);
                let ri = &row.as_slice().unwrap()[..=i];
                let mut acc = 0.0;
                for (k, lik) in ri.iter().enumerate() {
                    acc += lik * u[off + k];
                }
                s[off + i] = acc;
            }
        }
    }

    /// g_u = A^T g_s.
    pub fn pullback(&self, gs: &[f64], gu: &mut [f64]) {
        for &(off, len, tau) in &self.nugget {
            for i in 0..len {
                gu[off + i] = tau * gs[off + i];
            }
        }
        for (off, l) in &self.spatial {
            let n = l.nrows();
            for k in 0..n {
                gu[off + k] = 0.0;
            }
            for i in 0..n {
                let row = l.row(i);
                let ri = &row.as_slice().unwrap()[..=i];
                let g = gs[off + i];
                if g != 0.0 {
                    for (k, lik) in ri.iter().enumerate() {
                        gu[off + k] += lik * g;
                    }
                }
            }
        }
    }
}

/// Binomial data terms attached to latent coordinates; the conditional
/// target of the latent field given the survey counts.
pub(crate) struct ConditionalTarget {
    whitener: Whitener,
    /// per record: (link, y, n, eta constant, [(latent index, coefficient)]).
    records: Vec<(LinkFunction, u32, u32, f64, Vec<(usize, f64)>)>,
    scratch_s: std::cell::RefCell<(Vec<f64>, Vec<f64>, Vec<f64>)>,
}

impl ConditionalTarget {
    pub fn build(
        spec: &ModelSpec,
        params: &ParameterVector,
        data: &SurveyDataset,
        layout: &LatentLayout,
    ) -> Result<ConditionalTarget> {
        data.check_spec(spec)?;
        params.validate()?;
        let whitener = Whitener::build(spec, params, data, layout)?;
        let mut records = Vec::new();
        let comp_pos = |field: LatentField, site: usize| -> Option<usize> {
            layout.component(field).and_then(|c| c.position_of(site))
        };
        for k in 0..spec.n_diagnostics() {
            let beta = params.beta(k);
            match spec.structure {
                Structure::Univariate => {
                    for r in data.records(0) {
                        let c = crate::model::latent::dot(&r.design, &beta);
                        let mut terms = Vec::new();
                        if let Some(p) = comp_pos(LatentField::S(0), r.site) {
                            terms.push((p, 1.0));
                        }
                        if let Some(p) = comp_pos(LatentField::Z(0), r.site) {
                            terms.push((p, 1.0));
                        }
                        records.push((spec.links[0], r.y, r.n, c, terms));
                    }
                }
                Structure::Asymmetric => {
                    if k == 0 {
                        for r in data.records(0) {
                            let c = crate::model::latent::dot(&r.design, &beta);
                            let mut terms = Vec::new();
                            if let Some(p) = comp_pos(LatentField::S(0), r.site) {
                                terms.push((p, 1.0));
                            }
                            if let Some(p) = comp_pos(LatentField::Z(0), r.site) {
                                terms.push((p, 1.0));
                            }
                            records.push((spec.links[0], r.y, r.n, c, terms));
                        }
                    } else {
                        let alpha = params.value(ParamName::Alpha)?;
                        let beta1 = params.beta(0);
                        for r in data.records(1) {
                            let c = crate::model::latent::dot(&r.design, &beta)
                                + alpha * crate::model::latent::dot(&r.design, &beta1);
                            let mut terms = Vec::new();
                            if let Some(p) = comp_pos(LatentField::S(1), r.site) {
                                terms.push((p, 1.0));
                            }
                            if let Some(p) = comp_pos(LatentField::Z(1), r.site) {
                                terms.push((p, 1.0));
                            }
                            if alpha != 0.0 {
                                if let Some(p) = comp_pos(LatentField::S(0), r.site) {
                                    terms.push((p, alpha));
                                }
                                if let Some(p) = comp_pos(LatentField::Z(0), r.site) {
                                    terms.push((p, alpha));
                                }
                            }
                            records.push((spec.links[1], r.y, r.n, c, terms));
                        }
                    }
                }
                Structure::Symmetric => {
                    let nu = params.value(ParamName::Nu2(k))?.sqrt();
                    for r in data.records(k) {
                        let c = crate::model::latent::dot(&r.design, &beta);
                        let mut terms = Vec::new();
                        if let Some(p) = comp_pos(LatentField::T, r.site) {
                            terms.push((p, nu));
                        }
                        if let Some(p) = comp_pos(LatentField::S(k), r.site) {
                            terms.push((p, nu));
                        }
                        if let Some(p) = comp_pos(LatentField::Z(k), r.site) {
                            terms.push((p, 1.0));
                        }
                        records.push((spec.links[k], r.y, r.n, c, terms));
                    }
                }
            }
            if spec.structure != Structure::Asymmetric && spec.structure != Structure::Symmetric {
                break; // univariate handled in one pass
            }
            if spec.structure == Structure::Univariate {
                break;
            }
        }
        let dim = whitener.dim;
        Ok(ConditionalTarget {
            whitener,
            records,
            scratch_s: std::cell::RefCell::new((vec![0.0; dim], vec![0.0; dim], vec![0.0; dim])),
        })
    }

    pub fn whitener(&self) -> &Whitener {
        &self.whitener
    }
}

impl LogTarget for ConditionalTarget {
    fn dim(&self) -> usize {
        self.whitener.dim
    }

    fn logp_grad(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let mut scratch = self.scratch_s.borrow_mut();
        let (s, gs, gu) = &mut *scratch;
        self.whitener.unwhiten(u, s);
        gs.iter_mut().for_each(|v| *v = 0.0);
        let mut ll = 0.0;
        for (link, y, n, c, terms) in &self.records {
            let mut eta = *c;
            for &(idx, coef) in terms {
                eta += coef * s[idx];
            }
            let (lp, lq) = link.log_prob_pair(eta);
            ll += f64::from(*y) * lp + f64::from(*n - *y) * lq;
            let d_eta = match link {
                LinkFunction::Logit => f64::from(*y) - f64::from(*n) * link.inverse(eta),
                LinkFunction::Probit => {
                    let p = link.inverse(eta);
                    let q = 1.0 - p;
                    let pdf = link.inverse_derivative(eta);
                    (f64::from(*y) - f64::from(*n) * p) * pdf / (p * q)
                }
            };
            for &(idx, coef) in terms {
                gs[idx] += coef * d_eta;
            }
        }
        self.whitener.pullback(gs, gu);
        let mut logp = ll;
        let mut grad = vec![0.0; u.len()];
        for i in 0..u.len() {
            logp -= 0.5 * u[i] * u[i];
            grad[i] = gu[i] - u[i];
        }
        (logp, grad)
    }
}

/// Sample the latent vector conditional on the data at fixed parameters.
pub fn sample_latent_conditional(
    spec: &ModelSpec,
    params: &ParameterVector,
    data: &SurveyDataset,
    opts: &McmcOptions,
    seed: u64,
) -> Result<LatentSampleSet> {
    let layout = LatentLayout::for_model(spec, data);
    let target = ConditionalTarget::build(spec, params, data, &layout)?;
    let (u_draws, acceptance_rate, step_size, warnings) = mala_chain(&target, opts, seed)?;
    // map whitened draws back to the raw latent scale
    let mut draws = Array2::<f64>::zeros(u_draws.dim());
    let mut s = vec![0.0; layout.total_dim];
    for (i, row) in u_draws.rows().into_iter().enumerate() {
        target.whitener().unwhiten(row.as_slice().unwrap(), &mut s);
        draws.row_mut(i).assign(&Array1::from(s.clone()));
    }
    Ok(LatentSampleSet { layout, draws, acceptance_rate, step_size, seed, warnings })
}
