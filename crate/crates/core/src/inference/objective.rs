//! Monte Carlo likelihood-ratio objective.
//!
//! Given latent samples drawn at a reference parameter theta0, the objective
//! at theta is log mean_j exp{ l_j(theta) - l_j(theta0) }, where l_j is the
//! complete-data log-likelihood of sample j. It approximates the marginal
//! log-likelihood ratio log L(theta)/L(theta0) and is exactly zero at
//! theta = theta0 for any sample set.
//!
//! Evaluation is organized around two caches keyed by the sample set:
//! per-record latent sums (theta-independent) and, per spatial component,
//! the correlation log-determinant and per-sample quadratic forms keyed by
//! the scale parameter phi. Finite-difference optimizers perturb one
//! coordinate at a time, so the phi cache removes almost all factorization
//! work from gradient sweeps.

use ndarray::{Array2, ArrayView2};
use std::cell::RefCell;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::distance_matrix;
use crate::inference::loglik::LN_2PI;
use crate::inference::mcmc::LatentSampleSet;
use crate::model::latent::{dot, LatentField};
use crate::model::{ModelSpec, ParamName, ParameterVector, Structure, SurveyDataset};
use crate::numeric::chol;
use crate::numeric::stats::{effective_sample_size, log_mean_exp};

struct SpatialBlock {
    field: LatentField,
    /// support distances
    dists: Array2<f64>,
    /// m_c x J raw latent values
    samples: Array2<f64>,
    /// phi bits -> (logdet R, per-sample quadratic form s' R^-1 s)
    cache: RefCell<HashMap<u64, (f64, Vec<f64>)>>,
}

struct NuggetBlock {
    diag: usize,
    len: usize,
    /// per-sample sum of squares
    ssq: Vec<f64>,
}

/// Per-diagnostic cached latent contributions to each record's predictor.
struct DiagCache {
    /// records x J: unit-coefficient spatial(+nugget) sum
    main: Array2<f64>,
    /// records x J: second block (asymmetric: diagnostic-1 chain at the
    /// record's site; symmetric: nugget values)
    extra: Option<Array2<f64>>,
}

pub struct McmlObjective<'a> {
    spec: &'a ModelSpec,
    data: &'a SurveyDataset,
    theta0: ParameterVector,
    n_samples: usize,
    spatial: Vec<SpatialBlock>,
    nuggets: Vec<NuggetBlock>,
    diag_cache: Vec<DiagCache>,
    loglik0: Vec<f64>,
    /// Optimizer guard: `eval_free` rejects points whose importance weights
    /// have an effective sample size below this fraction of the sample
    /// count. The plain `eval` path never gates.
    ess_floor: f64,
    /// Scale parameters are unidentifiable beyond the data window; the
    /// optimizer path rejects phi outside [max_dist/1000, 2 max_dist].
    max_dist: f64,
}

impl<'a> McmlObjective<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        data: &'a SurveyDataset,
        theta0: &ParameterVector,
        samples: &LatentSampleSet,
    ) -> Result<Self> {
        data.check_spec(spec)?;
        theta0.validate()?;
        let j = samples.n_samples();
        if j == 0 {
            return Err(Error::validation("mcml objective: empty sample set"));
        }
        let layout = &samples.layout;

        let mut spatial = Vec::new();
        let mut nuggets = Vec::new();
        for comp in &layout.components {
            let block: Array2<f64> = samples
                .draws
                .slice(ndarray::s![.., comp.offset..comp.offset + comp.len()])
                .t()
                .to_owned();
            match comp.field {
                LatentField::Z(k) => {
                    let ssq = (0..j)
                        .map(|col| block.column(col).iter().map(|v| v * v).sum())
                        .collect();
                    nuggets.push(NuggetBlock { diag: k, len: comp.len(), ssq });
                }
                field => {
                    let locs: Vec<_> = comp.support.iter().map(|&s| data.sites()[s]).collect();
                    let dists = distance_matrix(&locs)?.matrix().clone();
                    spatial.push(SpatialBlock {
                        field,
                        dists,
                        samples: block,
                        cache: RefCell::new(HashMap::new()),
                    });
                }
            }
        }

        // per-record latent contributions, sample-major inner dimension
        let mut diag_cache = Vec::new();
        for k in 0..spec.n_diagnostics() {
            let recs = data.records(k);
            let mut main = Array2::<f64>::zeros((recs.len(), j));
            let mut extra: Option<Array2<f64>> = None;
            let value_at = |field: LatentField, site: usize, col: usize| -> f64 {
                layout
                    .component(field)
                    .and_then(|c| c.position_of(site))
                    .map(|p| samples.draws[[col, p]])
                    .unwrap_or(0.0)
            };
            match spec.structure {
                Structure::Univariate => {
                    for (r, rec) in recs.iter().enumerate() {
                        for col in 0..j {
                            main[[r, col]] = value_at(LatentField::S(0), rec.site, col)
                                + value_at(LatentField::Z(0), rec.site, col);
                        }
                    }
                }
                Structure::Asymmetric => {
                    if k == 0 {
                        for (r, rec) in recs.iter().enumerate() {
                            for col in 0..j {
                                main[[r, col]] = value_at(LatentField::S(0), rec.site, col)
                                    + value_at(LatentField::Z(0), rec.site, col);
                            }
                        }
                    } else {
                        let mut chain = Array2::<f64>::zeros((recs.len(), j));
                        for (r, rec) in recs.iter().enumerate() {
                            for col in 0..j {
                                main[[r, col]] = value_at(LatentField::S(1), rec.site, col)
                                    + value_at(LatentField::Z(1), rec.site, col);
                                chain[[r, col]] = value_at(LatentField::S(0), rec.site, col)
                                    + value_at(LatentField::Z(0), rec.site, col);
                            }
                        }
                        extra = Some(chain);
                    }
                }
                Structure::Symmetric => {
                    let mut nug = Array2::<f64>::zeros((recs.len(), j));
                    for (r, rec) in recs.iter().enumerate() {
                        for col in 0..j {
                            main[[r, col]] = value_at(LatentField::T, rec.site, col)
                                + value_at(LatentField::S(k), rec.site, col);
                            nug[[r, col]] = value_at(LatentField::Z(k), rec.site, col);
                        }
                    }
                    extra = Some(nug);
                }
            }
            diag_cache.push(DiagCache { main, extra });
        }

        let max_dist = spatial
            .iter()
            .map(|b| b.dists.iter().cloned().fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let mut obj = McmlObjective {
            spec,
            data,
            theta0: theta0.clone(),
            n_samples: j,
            spatial,
            nuggets,
            diag_cache,
            loglik0: Vec::new(),
            ess_floor: 0.0,
            max_dist,
        };
        obj.loglik0 = obj.loglik_per_sample(theta0)?;
        Ok(obj)
    }

    /// Gate the optimizer path at a minimum effective-sample-size fraction.
    pub fn with_ess_floor(mut self, fraction: f64) -> Self {
        self.ess_floor = fraction;
        self
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn reference(&self) -> &ParameterVector {
        &self.theta0
    }

    /// Complete-data log-likelihood of every retained sample at `params`.
    fn loglik_per_sample(&self, params: &ParameterVector) -> Result<Vec<f64>> {
        params.validate()?;
        let j = self.n_samples;
        let mut ll = vec![0.0; j];

        // binomial terms
        for k in 0..self.spec.n_diagnostics() {
            let recs = self.data.records(k);
            let cache = &self.diag_cache[k];
            let link = self.spec.links[k];
            let beta = params.beta(k);
            match self.spec.structure {
                Structure::Univariate | Structure::Asymmetric if k == 0 => {
                    for (r, rec) in recs.iter().enumerate() {
                        let xb = dot(&rec.design, &beta);
                        let row = cache.main.row(r);
                        let row = row.as_slice().unwrap();
                        let (y, ny) = (f64::from(rec.y), f64::from(rec.n - rec.y));
                        for (col, lat) in row.iter().enumerate() {
                            let (lp, lq) = link.log_prob_pair(xb + lat);
                            ll[col] += y * lp + ny * lq;
                        }
                    }
                }
                Structure::Asymmetric => {
                    let alpha = params.value(ParamName::Alpha)?;
                    let beta1 = params.beta(0);
                    let chain = cache.extra.as_ref().expect("asymmetric chain cache");
                    for (r, rec) in recs.iter().enumerate() {
                        let xb = dot(&rec.design, &beta) + alpha * dot(&rec.design, &beta1);
                        let own = cache.main.row(r);
                        let own = own.as_slice().unwrap();
                        let ch = chain.row(r);
                        let ch = ch.as_slice().unwrap();
                        let (y, ny) = (f64::from(rec.y), f64::from(rec.n - rec.y));
                        for col in 0..j {
                            let (lp, lq) = link.log_prob_pair(xb + own[col] + alpha * ch[col]);
                            ll[col] += y * lp + ny * lq;
                        }
                    }
                }
                Structure::Symmetric => {
                    let nu = params.value(ParamName::Nu2(k))?.sqrt();
                    let nug = cache.extra.as_ref().expect("symmetric nugget cache");
                    for (r, rec) in recs.iter().enumerate() {
                        let xb = dot(&rec.design, &beta);
                        let spat = cache.main.row(r);
                        let spat = spat.as_slice().unwrap();
                        let zg = nug.row(r);
                        let zg = zg.as_slice().unwrap();
                        let (y, ny) = (f64::from(rec.y), f64::from(rec.n - rec.y));
                        for col in 0..j {
                            let (lp, lq) = link.log_prob_pair(xb + nu * spat[col] + zg[col]);
                            ll[col] += y * lp + ny * lq;
                        }
                    }
                }
                Structure::Univariate => unreachable!(),
            }
        }

        // latent Gaussian density
        for block in &self.spatial {
            let (sigma2, phi) = match block.field {
                LatentField::S(k) => (
                    params.value(ParamName::Sigma2(k))?,
                    params.value(ParamName::Phi(k))?,
                ),
                LatentField::T => (1.0, params.value(ParamName::PhiT)?),
                LatentField::Z(_) => unreachable!(),
            };
            let m = block.samples.nrows() as f64;
            let (logdet_r, quads) = self.correlation_terms(block, phi)?;
            let half_const = -0.5 * (m * (LN_2PI + sigma2.ln()) + logdet_r);
            for col in 0..j {
                ll[col] += half_const - 0.5 * quads[col] / sigma2;
            }
        }
        for block in &self.nuggets {
            let tau2 = params.value(ParamName::Tau2(block.diag))?;
            let m = block.len as f64;
            let half_const = -0.5 * m * (LN_2PI + tau2.ln());
            for col in 0..j {
                ll[col] += half_const - 0.5 * block.ssq[col] / tau2;
            }
        }
        Ok(ll)
    }

    fn correlation_terms(&self, block: &SpatialBlock, phi: f64) -> Result<(f64, Vec<f64>)> {
        if !(phi > 0.0) || !phi.is_finite() {
            return Err(Error::validation(format!("objective: invalid phi {phi}")));
        }
        let key = phi.to_bits();
        if let Some(hit) = block.cache.borrow().get(&key) {
            return Ok(hit.clone());
        }
        let r = block.dists.mapv(|u| (-u / phi).exp());
        let l = chol::cholesky(r.view()).or_else(|_| {
            // numerically marginal correlation (near-duplicate sites); jitter once
            let mut rj = r.clone();
            for i in 0..rj.nrows() {
                rj[[i, i]] += 1e-10;
            }
            chol::cholesky(rj.view())
        })?;
        let logdet = chol::logdet_from_factor(l.view());
        let y = chol::solve_lower_multi(l.view(), self.samples_view(block));
        let quads: Vec<f64> = (0..y.ncols())
            .map(|c| y.column(c).iter().map(|v| v * v).sum())
            .collect();
        let entry = (logdet, quads);
        let mut cache = block.cache.borrow_mut();
        if cache.len() > 256 {
            cache.clear();
        }
        cache.insert(key, entry.clone());
        Ok(entry)
    }

    fn samples_view<'b>(&self, block: &'b SpatialBlock) -> ArrayView2<'b, f64> {
        block.samples.view()
    }

    /// Per-sample log importance ratios l_j(theta) - l_j(theta0).
    pub fn log_ratios(&self, params: &ParameterVector) -> Result<Vec<f64>> {
        let ll = self.loglik_per_sample(params)?;
        Ok(ll.iter().zip(self.loglik0.iter()).map(|(a, b)| a - b).collect())
    }

    /// The Monte Carlo log-likelihood-ratio objective.
    pub fn eval(&self, params: &ParameterVector) -> Result<f64> {
        Ok(log_mean_exp(&self.log_ratios(params)?))
    }

    /// Effective sample size fraction of the importance weights at `params`.
    pub fn ess_fraction(&self, params: &ParameterVector) -> Result<f64> {
        let r = self.log_ratios(params)?;
        Ok(effective_sample_size(&r) / self.n_samples as f64)
    }

    /// Objective as a function of the free transformed parameters, with
    /// invalid or weight-degenerate evaluations mapped to -inf for the
    /// optimizer.
    pub fn eval_free(&self, free: &[f64]) -> f64 {
        if free.iter().any(|v| !v.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let params = self.theta0.with_free_transformed(free);
        // smooth penalty outside the scale-identifiability window keeps the
        // surface finite for difference quotients
        let mut penalty = 0.0;
        if self.max_dist > 0.0 {
            let lo = (self.max_dist / 1000.0).ln();
            let hi = (2.0 * self.max_dist).ln();
            for name in params.names() {
                if matches!(name, ParamName::Phi(_) | ParamName::PhiT) {
                    let t = params.value(name).unwrap_or(f64::NAN).ln();
                    if !t.is_finite() {
                        return f64::NEG_INFINITY;
                    }
                    if t > hi {
                        penalty += 200.0 * (t - hi) * (t - hi);
                    } else if t < lo {
                        penalty += 200.0 * (lo - t) * (lo - t);
                    }
                }
            }
        }
        let ratios = match self.log_ratios(&params) {
            Ok(r) => r,
            Err(_) => return f64::NEG_INFINITY,
        };
        if self.ess_floor > 0.0
            && effective_sample_size(&ratios) < self.ess_floor * self.n_samples as f64
        {
            return f64::NEG_INFINITY;
        }
        let v = log_mean_exp(&ratios) - penalty;
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Free-function form: build the caches, evaluate once.
pub fn mcml_objective(
    spec: &ModelSpec,
    params: &ParameterVector,
    theta0: &ParameterVector,
    data: &SurveyDataset,
    samples: &LatentSampleSet,
) -> Result<f64> {
    McmlObjective::new(spec, data, theta0, samples)?.eval(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Location;
    use crate::inference::loglik::complete_data_loglik;
    use crate::inference::mcmc::{sample_latent_conditional, McmcOptions};
    use crate::model::latent::LatentLayout;
    use crate::model::{specs, LatentState, LinkFunction, LinkPair, SurveyRecord};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    fn toy() -> (crate::model::ModelSpec, SurveyDataset, ParameterVector) {
        let mut spec = specs::univariate(1, LinkFunction::Logit);
        spec.include_s = [false, false];
        let data = SurveyDataset::new(
            vec![Location { x: 0.0, y: 0.0 }],
            [vec![SurveyRecord { site: 0, n: 10, y: 7, design: vec![1.0] }], vec![]],
        )
        .unwrap();
        let params = ParameterVector::for_spec(&spec)
            .with(ParamName::Beta { diag: 0, index: 0 }, 0.0)
            .with(ParamName::Tau2(0), 1.0);
        (spec, data, params)
    }

    #[test]
    fn objective_is_exactly_zero_at_reference() {
        let (spec, data, params) = toy();
        let samples =
            sample_latent_conditional(&spec, &params, &data, &McmcOptions::default(), 5).unwrap();
        let v = mcml_objective(&spec, &params, &params, &data, &samples).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn singleton_sample_set_returns_single_ratio() {
        let (spec, data, params) = toy();
        let layout = LatentLayout::for_model(&spec, &data);
        let mut draws = Array2::zeros((1, 1));
        draws[[0, 0]] = 0.4;
        let samples = LatentSampleSet {
            layout: layout.clone(),
            draws,
            acceptance_rate: 0.5,
            step_size: 0.1,
            seed: 0,
            warnings: vec![],
        };
        let theta = params.clone().with(ParamName::Beta { diag: 0, index: 0 }, 0.3);
        let got = mcml_objective(&spec, &theta, &params, &data, &samples).unwrap();
        let state = LatentState::new(layout, vec![0.4]).unwrap();
        let want = complete_data_loglik(&spec, &theta, &data, &state).unwrap()
            - complete_data_loglik(&spec, &params, &data, &state).unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-12);
    }

    #[test]
    fn matches_direct_complete_data_ratio_average() {
        // cached path == naive path through complete_data_loglik
        let spec = specs::asymmetric_model2(1, LinkPair::default());
        let sites = vec![
            Location { x: 0.0, y: 0.0 },
            Location { x: 12.0, y: 4.0 },
            Location { x: 3.0, y: 9.0 },
        ];
        let r = |site, n, y| SurveyRecord { site, n, y, design: vec![1.0] };
        let data = SurveyDataset::new(
            sites,
            [vec![r(0, 20, 5), r(1, 20, 9), r(2, 20, 4)], vec![r(0, 20, 3), r(2, 20, 8)]],
        )
        .unwrap();
        let theta0 = ParameterVector::for_spec(&spec)
            .with(ParamName::Beta { diag: 0, index: 0 }, -0.5)
            .with(ParamName::Beta { diag: 1, index: 0 }, -1.0)
            .with(ParamName::Sigma2(0), 0.8)
            .with(ParamName::Phi(0), 8.0)
            .with(ParamName::Tau2(0), 0.3)
            .with(ParamName::Sigma2(1), 0.4)
            .with(ParamName::Phi(1), 5.0)
            .with(ParamName::Tau2(1), 0.2)
            .with(ParamName::Alpha, 0.9);
        let opts = McmcOptions {
            n_iterations: 2100,
            burn_in: 100,
            thinning: 10,
            ..McmcOptions::default()
        };
        let samples = sample_latent_conditional(&spec, &theta0, &data, &opts, 77).unwrap();
        let theta = theta0
            .clone()
            .with(ParamName::Sigma2(0), 1.1)
            .with(ParamName::Phi(0), 10.0)
            .with(ParamName::Alpha, 0.7)
            .with(ParamName::Beta { diag: 0, index: 0 }, -0.3);
        let got = mcml_objective(&spec, &theta, &theta0, &data, &samples).unwrap();

        // naive recomputation per sample
        let mut ratios = Vec::new();
        for row in samples.draws.rows() {
            let state = LatentState::new(samples.layout.clone(), row.to_vec()).unwrap();
            let a = complete_data_loglik(&spec, &theta, &data, &state).unwrap();
            let b = complete_data_loglik(&spec, &theta0, &data, &state).unwrap();
            ratios.push(a - b);
        }
        let want = crate::numeric::stats::log_mean_exp(&ratios);
        assert_abs_diff_eq!(got, want, epsilon = 1e-8);
    }

    #[test]
    fn gradient_at_reference_equals_mean_score() {
        // d/dtheta logmeanexp(l_j(theta) - l_j(theta0)) at theta0 equals the
        // Monte Carlo average of the complete-data score; both sides by
        // central differences
        let (spec, data, params) = toy();
        let opts = McmcOptions {
            n_iterations: 3000,
            burn_in: 1000,
            thinning: 10,
            ..McmcOptions::default()
        };
        let samples = sample_latent_conditional(&spec, &params, &data, &opts, 21).unwrap();
        let obj = McmlObjective::new(&spec, &data, &params, &samples).unwrap();
        let t0 = params.free_transformed();
        let h = 1e-5;
        for i in 0..t0.len() {
            let mut tp = t0.clone();
            tp[i] += h;
            let mut tm = t0.clone();
            tm[i] -= h;
            let g_obj = (obj.eval_free(&tp) - obj.eval_free(&tm)) / (2.0 * h);
            // average score by per-sample finite differences
            let pp = params.with_free_transformed(&tp);
            let pm = params.with_free_transformed(&tm);
            let mut score = 0.0;
            for row in samples.draws.rows() {
                let state = LatentState::new(samples.layout.clone(), row.to_vec()).unwrap();
                let a = complete_data_loglik(&spec, &pp, &data, &state).unwrap();
                let b = complete_data_loglik(&spec, &pm, &data, &state).unwrap();
                score += (a - b) / (2.0 * h);
            }
            score /= samples.n_samples() as f64;
            let denom = score.abs().max(1e-3);
            assert!(
                ((g_obj - score) / denom).abs() < 1e-4,
                "coordinate {i}: obj grad {g_obj} vs mean score {score}"
            );
        }
    }
}
