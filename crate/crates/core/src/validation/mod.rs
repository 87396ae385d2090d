//! Variogram diagnostics, the Monte Carlo envelope test, and the
//! predictive-performance simulation study.

pub mod kmeans;

pub use kmeans::kmeans;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Location;
use crate::inference::{mcml_fit, sample_latent_conditional, FitResult, McmcOptions};
use crate::model::latent::assemble_w;
use crate::model::{
    simulate_dataset, LatentState, ModelSpec, ParamName, ParameterVector, RecordPlan,
    SimulationPlan, Structure, SurveyDataset,
};
use crate::numeric::stats::quantile_type6;
use crate::prediction::{predict_surface, PredictOptions, PredictionTarget};
use crate::rng::derive_seed;

/// Binned empirical variogram.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariogramBins {
    pub edges: Vec<f64>,
    pub midpoints: Vec<f64>,
    pub counts: Vec<usize>,
    /// Per-bin average of half squared differences; `None` for empty bins.
    pub values: Vec<Option<f64>>,
}

/// Equal-width bin edges from 0 to half the maximum pairwise distance.
pub fn default_bin_edges(locations: &[Location], n_bins: usize) -> Result<Vec<f64>> {
    if n_bins == 0 {
        return Err(Error::validation("variogram: need at least one bin"));
    }
    let mut max_d: f64 = 0.0;
    for i in 0..locations.len() {
        for j in (i + 1)..locations.len() {
            max_d = max_d.max(locations[i].distance_to(&locations[j]));
        }
    }
    if max_d <= 0.0 {
        return Err(Error::validation("variogram: degenerate location set"));
    }
    let top = 0.5 * max_d;
    Ok((0..=n_bins).map(|i| top * i as f64 / n_bins as f64).collect())
}

/// Empirical variogram of `w` over distance bins.
///
/// Bin b collects pairs with distance in [edges[b], edges[b+1]); the last
/// bin is closed on the right.
pub fn empirical_variogram(
    w: &[f64],
    locations: &[Location],
    edges: &[f64],
) -> Result<VariogramBins> {
    if w.len() != locations.len() {
        return Err(Error::validation(format!(
            "variogram: {} values vs {} locations",
            w.len(),
            locations.len()
        )));
    }
    if edges.len() < 2 || edges.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::validation("variogram: bin edges must be strictly increasing"));
    }
    let b = edges.len() - 1;
    let mut sums = vec![0.0f64; b];
    let mut counts = vec![0usize; b];
    for i in 0..w.len() {
        for j in (i + 1)..w.len() {
            let d = locations[i].distance_to(&locations[j]);
            if d < edges[0] || d > edges[b] {
                continue;
            }
            let mut bin = ((d - edges[0]) / (edges[b] - edges[0]) * b as f64) as usize;
            // equal-width fast path can land on a boundary; fix by scan
            bin = bin.min(b - 1);
            while d < edges[bin] {
                bin -= 1;
            }
            while bin + 1 < b && d >= edges[bin + 1] {
                bin += 1;
            }
            let diff = w[i] - w[j];
            sums[bin] += diff * diff;
            counts[bin] += 1;
        }
    }
    if counts.iter().all(|c| *c == 0) {
        return Err(Error::validation("variogram: all bins empty"));
    }
    let values = sums
        .iter()
        .zip(counts.iter())
        .map(|(s, c)| if *c > 0 { Some(s / (2.0 * *c as f64)) } else { None })
        .collect();
    let midpoints = edges.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    Ok(VariogramBins { edges: edges.to_vec(), midpoints, counts, values })
}

/// Theoretical variogram of the symmetric structure's linear predictor:
/// gamma_k(u) = tau_k^2 + nu_k^2 [ (1 - exp(-u/phi_T))
///                                + sigma_k^2 (1 - exp(-u/phi_k)) ].
/// Inactive components contribute zero variance.
pub fn theoretical_variogram_symmetric(
    params: &ParameterVector,
    u: f64,
    diag: usize,
) -> Result<f64> {
    let nu2 = params.value(ParamName::Nu2(diag))?;
    let phi_t = params.value(ParamName::PhiT)?;
    let tau2 = params.value_or(ParamName::Tau2(diag), 0.0);
    let sigma2 = params.value_or(ParamName::Sigma2(diag), 0.0);
    let mut inner = 1.0 - (-u / phi_t).exp();
    if sigma2 > 0.0 {
        let phi_k = params.value(ParamName::Phi(diag))?;
        inner += sigma2 * (1.0 - (-u / phi_k).exp());
    }
    Ok(tau2 + nu2 * inner)
}

/// Cross-variogram between the two linear predictors of the symmetric
/// structure:
/// 0.5 { tau_1^2 + tau_2^2 + nu_1^2 (1 + sigma_1^2) + nu_2^2 (1 + sigma_2^2) }
///   - nu_1 nu_2 exp(-u/phi_T).
///
/// The distance-dependent term carries the product of the shared-process
/// loadings nu_1 nu_2: the shared component of W_1(x) and W_2(x') is
/// nu_1 T(x) and nu_2 T(x'), whose covariance is nu_1 nu_2 corr_T(u). The
/// acceptance suite pins this form against a direct simulation oracle.
pub fn cross_variogram_symmetric(params: &ParameterVector, u: f64) -> Result<f64> {
    let nu1 = params.value(ParamName::Nu2(0))?.sqrt();
    let nu2 = params.value(ParamName::Nu2(1))?.sqrt();
    let phi_t = params.value(ParamName::PhiT)?;
    let tau1 = params.value_or(ParamName::Tau2(0), 0.0);
    let tau2 = params.value_or(ParamName::Tau2(1), 0.0);
    let s1 = params.value_or(ParamName::Sigma2(0), 0.0);
    let s2 = params.value_or(ParamName::Sigma2(1), 0.0);
    Ok(0.5 * (tau1 + tau2 + nu1 * nu1 * (1.0 + s1) + nu2 * nu2 * (1.0 + s2))
        - nu1 * nu2 * (-u / phi_t).exp())
}

/// Posterior mean of the residual field W_k at each site with diagnostic-k
/// records, as `(site, w_hat)` pairs per diagnostic.
pub fn residual_field_estimate(
    spec: &ModelSpec,
    params: &ParameterVector,
    data: &SurveyDataset,
    opts: &McmcOptions,
    seed: u64,
) -> Result<[Vec<(usize, f64)>; 2]> {
    let samples = sample_latent_conditional(spec, params, data, opts, seed)?;
    let mut acc: [Vec<(usize, f64)>; 2] = [Vec::new(), Vec::new()];
    let n = samples.n_samples() as f64;
    for row in samples.draws.rows() {
        let state = LatentState::new(samples.layout.clone(), row.to_vec())?;
        let w = assemble_w(spec, params, data, &state)?;
        for k in 0..2 {
            if acc[k].is_empty() {
                acc[k] = w[k].iter().map(|(s, _)| (*s, 0.0)).collect();
            }
            for (i, (_, v)) in w[k].iter().enumerate() {
                acc[k][i].1 += v / n;
            }
        }
    }
    Ok(acc)
}

/// A separate standard geostatistical fit (W = S + Z) for one diagnostic.
pub struct SeparateFit {
    pub fit: FitResult,
    /// (site, posterior mean W) at the diagnostic's sites.
    pub w_hat: Vec<(usize, f64)>,
}

/// Fit the standard univariate model to diagnostic `diag` of `data`,
/// keeping that diagnostic's link.
pub fn fit_separate_standard(
    data: &SurveyDataset,
    diag: usize,
    link: crate::model::LinkFunction,
    opts: &McmcOptions,
    seed: u64,
) -> Result<SeparateFit> {
    let restricted = data.restrict_to_diagnostic(diag);
    let spec = crate::model::specs::univariate(restricted.design_dim(0), link);
    let fit = mcml_fit(&spec, &restricted, None, opts, derive_seed(seed, "separate-fit", diag as u64))?;
    let w = residual_field_estimate(
        &spec,
        &fit.params,
        &restricted,
        opts,
        derive_seed(seed, "separate-what", diag as u64),
    )?;
    Ok(SeparateFit { fit, w_hat: w[0].clone() })
}

/// Envelope of the variogram validation procedure for one diagnostic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope {
    pub diagnostic: usize,
    pub edges: Vec<f64>,
    pub midpoints: Vec<f64>,
    pub counts: Vec<usize>,
    pub observed: Vec<Option<f64>>,
    pub lower: Vec<Option<f64>>,
    pub upper: Vec<Option<f64>>,
    /// `None` for bins without pairs.
    pub inside: Vec<Option<bool>>,
    /// Strict rule: every non-empty bin inside the interval.
    pub pass: bool,
    pub n_replicates: usize,
    pub failed_replicates: usize,
}

#[derive(Debug, Clone)]
pub struct EnvelopeOptions {
    /// Number of simulation replicates M (>= 100).
    pub m: usize,
    /// Bin edges; derived per diagnostic when absent.
    pub edges: Option<Vec<f64>>,
    pub n_bins: usize,
    /// Budget for the internal separate standard fits.
    pub mcmc: McmcOptions,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        EnvelopeOptions { m: 1000, edges: None, n_bins: 15, mcmc: McmcOptions::default() }
    }
}

/// Monte Carlo envelope test of a fitted model's spatial structure.
///
/// Step 0: separate standard fits to the observed data give residual
/// variograms per diagnostic. Steps 1-2: M datasets simulated from the
/// fitted model, each re-fitted with separate standard models and variogram
/// -summarized. Step 3: per-bin 95% intervals; the model fails a diagnostic
/// if the observed variogram leaves the interval in any non-empty bin.
pub fn envelope_test(
    fit: &FitResult,
    data: &SurveyDataset,
    opts: &EnvelopeOptions,
    seed: u64,
) -> Result<Vec<Envelope>> {
    if opts.m < 100 {
        return Err(Error::validation(format!(
            "envelope: M = {} below the minimum of 100",
            opts.m
        )));
    }
    data.check_spec(&fit.spec)?;
    let n_diag = fit.spec.n_diagnostics();

    // per-diagnostic site geometry and bins
    let mut diag_locs: Vec<Vec<Location>> = Vec::new();
    let mut diag_edges: Vec<Vec<f64>> = Vec::new();
    for k in 0..n_diag {
        let sites = data.diag_sites(k);
        let locs: Vec<Location> = sites.iter().map(|&s| data.sites()[s]).collect();
        let edges = match &opts.edges {
            Some(e) => e.clone(),
            None => default_bin_edges(&locs, opts.n_bins)?,
        };
        diag_locs.push(locs);
        diag_edges.push(edges);
    }

    // Step 0: observed residual variograms
    let mut observed: Vec<VariogramBins> = Vec::new();
    for k in 0..n_diag {
        let sep = fit_separate_standard(data, k, fit.spec.links[k], &opts.mcmc, derive_seed(seed, "env-obs", k as u64))?;
        let w: Vec<f64> = sep.w_hat.iter().map(|(_, v)| *v).collect();
        observed.push(empirical_variogram(&w, &diag_locs[k], &diag_edges[k])?);
    }

    // Steps 1-2: simulate, refit separately, variogram
    let plan = plan_from_data(data);
    let rep_results: Vec<Result<Vec<Vec<Option<f64>>>>> = (0..opts.m)
        .into_par_iter()
        .map(|r| {
            let sim = simulate_dataset(&fit.spec, &fit.params, &plan, derive_seed(seed, "env-sim", r as u64))?;
            let mut per_diag = Vec::new();
            for k in 0..n_diag {
                let sep = fit_separate_standard(
                    &sim.dataset,
                    k,
                    fit.spec.links[k],
                    &opts.mcmc,
                    derive_seed(seed, "env-fit", (r * 2 + k) as u64),
                )?;
                let w: Vec<f64> = sep.w_hat.iter().map(|(_, v)| *v).collect();
                let locs: Vec<Location> =
                    sep.w_hat.iter().map(|(s, _)| sim.dataset.sites()[*s]).collect();
                let vg = empirical_variogram(&w, &locs, &diag_edges[k])?;
                per_diag.push(vg.values);
            }
            Ok(per_diag)
        })
        .collect();

    let failed = rep_results.iter().filter(|r| r.is_err()).count();
    if failed * 10 > opts.m {
        let first_err = rep_results
            .iter()
            .find_map(|r| r.as_ref().err().map(|e| e.to_string()))
            .unwrap_or_default();
        return Err(Error::numerical(format!(
            "envelope: {failed} of {} replicate fits failed (first error: {first_err})",
            opts.m
        )));
    }
    let good: Vec<&Vec<Vec<Option<f64>>>> = rep_results.iter().filter_map(|r| r.as_ref().ok()).collect();

    // Step 3: per-bin intervals and the strict pass rule
    let mut out = Vec::new();
    for k in 0..n_diag {
        let vg = &observed[k];
        let b = vg.values.len();
        let mut lower = vec![None; b];
        let mut upper = vec![None; b];
        let mut inside = vec![None; b];
        let mut pass = true;
        for bin in 0..b {
            if vg.counts[bin] == 0 {
                continue;
            }
            let mut vals: Vec<f64> =
                good.iter().filter_map(|rep| rep[k][bin]).collect();
            if vals.is_empty() {
                continue;
            }
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let lo = quantile_type6(&vals, 0.025);
            let hi = quantile_type6(&vals, 0.975);
            let obs = vg.values[bin].unwrap();
            let ok = obs >= lo && obs <= hi;
            lower[bin] = Some(lo);
            upper[bin] = Some(hi);
            inside[bin] = Some(ok);
            if !ok {
                pass = false;
            }
        }
        out.push(Envelope {
            diagnostic: k,
            edges: vg.edges.clone(),
            midpoints: vg.midpoints.clone(),
            counts: vg.counts.clone(),
            observed: vg.values.clone(),
            lower,
            upper,
            inside,
            pass,
            n_replicates: good.len(),
            failed_replicates: failed,
        });
    }
    Ok(out)
}

fn plan_from_data(data: &SurveyDataset) -> SimulationPlan {
    SimulationPlan {
        sites: data.sites().to_vec(),
        records: [
            data.records(0)
                .iter()
                .map(|r| RecordPlan { site: r.site, n: r.n, design: r.design.clone() })
                .collect(),
            data.records(1)
                .iter()
                .map(|r| RecordPlan { site: r.site, n: r.n, design: r.design.clone() })
                .collect(),
        ],
        truth_locations: Vec::new(),
        truth_designs: [Vec::new(), Vec::new()],
    }
}

/// Predictive metrics at one location across study replicates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocationMetrics {
    pub location: Location,
    pub cp: f64,
    pub rmse: f64,
    pub pil: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimStudyReport {
    pub name: String,
    pub per_location: Vec<LocationMetrics>,
    /// Averages over the prediction locations.
    pub cp: f64,
    /// Root-mean-square error on the prevalence scale.
    pub rmse: f64,
    /// The same in percentage points.
    pub rmse_pct: f64,
    pub pil: f64,
    pub replicates_used: usize,
    pub failed_fits: usize,
    pub flagged_invalid: bool,
}

#[derive(Debug, Clone)]
pub struct SimStudyConfig {
    /// Replicates R (>= 50).
    pub replicates: usize,
    /// Number of k-means prediction centroids.
    pub prediction_k: usize,
    /// Examined per site per diagnostic.
    pub n_per_site: u32,
    pub mcmc: McmcOptions,
}

/// Predictive-performance study: simulate from a true model, fit each
/// candidate, predict gold-standard (diagnostic 2) prevalence at k-means
/// centroids of the site pattern, and score 95% coverage (CP), RMSE and
/// interval length (PIL) against the realized signal prevalence.
///
/// The harness is intercept-only: all design dimensions must equal 1.
pub fn simulation_study(
    spec_true: &ModelSpec,
    theta_true: &ParameterVector,
    fit_specs: &[(String, ModelSpec)],
    sites: &[Location],
    cfg: &SimStudyConfig,
    seed: u64,
) -> Result<Vec<SimStudyReport>> {
    if cfg.replicates < 50 {
        return Err(Error::validation(format!(
            "simulation study: R = {} below the minimum of 50",
            cfg.replicates
        )));
    }
    if spec_true.design_dims.iter().take(spec_true.n_diagnostics()).any(|d| *d != 1) {
        return Err(Error::validation("simulation study supports intercept-only designs"));
    }
    for (_, s) in fit_specs {
        if s.structure == Structure::Univariate {
            return Err(Error::validation("simulation study fits bivariate structures"));
        }
        if s.design_dims.iter().take(2).any(|d| *d != 1) {
            return Err(Error::validation("simulation study supports intercept-only designs"));
        }
    }
    let centroids = kmeans(sites, cfg.prediction_k, derive_seed(seed, "study-kmeans", 0))?;

    let plan = SimulationPlan {
        sites: sites.to_vec(),
        records: [
            (0..sites.len())
                .map(|s| RecordPlan { site: s, n: cfg.n_per_site, design: vec![1.0] })
                .collect(),
            (0..sites.len())
                .map(|s| RecordPlan { site: s, n: cfg.n_per_site, design: vec![1.0] })
                .collect(),
        ],
        truth_locations: centroids.clone(),
        truth_designs: [
            centroids.iter().map(|_| vec![1.0]).collect(),
            centroids.iter().map(|_| vec![1.0]).collect(),
        ],
    };
    let target = PredictionTarget::intercept_only(centroids.clone(), 2);

    // per replicate, per fit spec: Some(per-centroid (covered, sqerr, length))
    type RepOut = Vec<Option<Vec<(bool, f64, f64)>>>;
    let rep_results: Vec<Result<RepOut>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let sim =
                simulate_dataset(spec_true, theta_true, &plan, derive_seed(seed, "study-sim", r as u64))?;
            let truth = &sim.truth.truth_prevalence[1];
            let mut per_spec: RepOut = Vec::new();
            for (si, (name, fspec)) in fit_specs.iter().enumerate() {
                let fit = mcml_fit(
                    fspec,
                    &sim.dataset,
                    None,
                    &cfg.mcmc,
                    derive_seed(seed, &format!("study-fit-{name}"), r as u64),
                );
                let entry = match fit {
                    Err(_) => None,
                    Ok(fit) => {
                        let popts = PredictOptions {
                            thresholds: Vec::new(),
                            include_nugget: false,
                            mcmc: cfg.mcmc.clone(),
                            allow_unconverged: true,
                            keep_draws: true,
                        };
                        match predict_surface(
                            &fit,
                            &sim.dataset,
                            &target,
                            &popts,
                            derive_seed(seed, &format!("study-pred-{si}"), r as u64),
                        ) {
                            Err(_) => None,
                            Ok(surface) => {
                                let draws = surface.draws[1].as_ref().expect("draws kept");
                                let mut rows = Vec::with_capacity(centroids.len());
                                for c in 0..centroids.len() {
                                    let mut v: Vec<f64> = draws.row(c).to_vec();
                                    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                                    let lo = quantile_type6(&v, 0.025);
                                    let hi = quantile_type6(&v, 0.975);
                                    let mean = surface.diagnostics[1].mean[c];
                                    let t = truth[c];
                                    rows.push((t >= lo && t <= hi, (mean - t) * (mean - t), hi - lo));
                                }
                                Some(rows)
                            }
                        }
                    }
                };
                per_spec.push(entry);
            }
            Ok(per_spec)
        })
        .collect();

    // aggregate
    let mut reports = Vec::new();
    for (si, (name, _)) in fit_specs.iter().enumerate() {
        let mut used = 0usize;
        let mut failed = 0usize;
        let nc = centroids.len();
        let mut cover = vec![0.0f64; nc];
        let mut sqerr = vec![0.0f64; nc];
        let mut len = vec![0.0f64; nc];
        for rep in &rep_results {
            match rep {
                Err(_) => failed += 1,
                Ok(per_spec) => match &per_spec[si] {
                    None => failed += 1,
                    Some(rows) => {
                        used += 1;
                        for (c, (cov, se, l)) in rows.iter().enumerate() {
                            if *cov {
                                cover[c] += 1.0;
                            }
                            sqerr[c] += se;
                            len[c] += l;
                        }
                    }
                },
            }
        }
        let flagged_invalid = failed * 5 > cfg.replicates;
        let u = used.max(1) as f64;
        let per_location: Vec<LocationMetrics> = (0..nc)
            .map(|c| LocationMetrics {
                location: centroids[c],
                cp: cover[c] / u,
                rmse: (sqerr[c] / u).sqrt(),
                pil: len[c] / u,
                n: used,
            })
            .collect();
        let cp = per_location.iter().map(|m| m.cp).sum::<f64>() / nc as f64;
        let rmse = per_location.iter().map(|m| m.rmse).sum::<f64>() / nc as f64;
        let pil = per_location.iter().map(|m| m.pil).sum::<f64>() / nc as f64;
        reports.push(SimStudyReport {
            name: name.clone(),
            per_location,
            cp,
            rmse,
            rmse_pct: 100.0 * rmse,
            pil,
            replicates_used: used,
            failed_fits: failed,
            flagged_invalid,
        });
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn loc(x: f64, y: f64) -> Location {
        Location { x, y }
    }

    #[test]
    fn collinear_hand_computed_variogram() {
        let locs = vec![loc(0.0, 0.0), loc(1.0, 0.0), loc(2.0, 0.0)];
        let w = vec![0.0, 1.0, 3.0];
        let edges = vec![0.5, 1.5, 2.5];
        let vg = empirical_variogram(&w, &locs, &edges).unwrap();
        // bin [0.5,1.5): pairs (0,1) and (1,2): (1 + 4) / (2*2) = 1.25
        assert_abs_diff_eq!(vg.values[0].unwrap(), 1.25, epsilon = 1e-12);
        assert_eq!(vg.counts[0], 2);
        // bin [1.5,2.5]: pair (0,2): 9/2 = 4.5
        assert_abs_diff_eq!(vg.values[1].unwrap(), 4.5, epsilon = 1e-12);
        assert_eq!(vg.counts[1], 1);
    }

    #[test]
    fn constant_field_gives_zero() {
        let locs: Vec<Location> = (0..10).map(|i| loc(f64::from(i), 0.0)).collect();
        let w = vec![2.5; 10];
        let edges = default_bin_edges(&locs, 4).unwrap();
        let vg = empirical_variogram(&w, &locs, &edges).unwrap();
        for v in vg.values.iter().flatten() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn permutation_invariant() {
        let locs: Vec<Location> =
            (0..15).map(|i| loc(f64::from(i * i % 13), f64::from(i % 5))).collect();
        let w: Vec<f64> = (0..15).map(|i| f64::from(i) * 0.3 - 1.0).collect();
        let edges = default_bin_edges(&locs, 5).unwrap();
        let a = empirical_variogram(&w, &locs, &edges).unwrap();
        let perm: Vec<usize> = (0..15).rev().collect();
        let locs_p: Vec<Location> = perm.iter().map(|&i| locs[i]).collect();
        let w_p: Vec<f64> = perm.iter().map(|&i| w[i]).collect();
        let b = empirical_variogram(&w_p, &locs_p, &edges).unwrap();
        for (x, y) in a.values.iter().zip(b.values.iter()) {
            match (x, y) {
                (Some(x), Some(y)) => assert_abs_diff_eq!(x, y, epsilon = 1e-12),
                (None, None) => {}
                _ => panic!("bin emptiness changed under permutation"),
            }
        }
    }

    #[test]
    fn variogram_matches_brute_force() {
        // randomized instance vs an independent double loop
        use rand::Rng;
        let mut rng = crate::rng::stream(17, "vgtest", 0);
        let n = 60;
        let locs: Vec<Location> =
            (0..n).map(|_| loc(rng.gen::<f64>() * 50.0, rng.gen::<f64>() * 50.0)).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let edges = default_bin_edges(&locs, 7).unwrap();
        let vg = empirical_variogram(&w, &locs, &edges).unwrap();
        // brute force over ordered pairs (i, j), i != j: each unordered pair
        // enters twice in both the sum and the count, cancelling exactly
        let b = edges.len() - 1;
        let mut sums = vec![0.0f64; b];
        let mut counts = vec![0usize; b];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let d = locs[i].distance_to(&locs[j]);
                for bin in 0..b {
                    let hi_ok = if bin == b - 1 { d <= edges[bin + 1] } else { d < edges[bin + 1] };
                    if d >= edges[bin] && hi_ok {
                        sums[bin] += (w[i] - w[j]).powi(2);
                        counts[bin] += 1;
                        break;
                    }
                }
            }
        }
        for bin in 0..b {
            let brute = if counts[bin] > 0 {
                Some(sums[bin] / (2.0 * counts[bin] as f64))
            } else {
                None
            };
            match (vg.values[bin], brute) {
                (Some(x), Some(y)) => assert_abs_diff_eq!(x, y, epsilon = 1e-12),
                (None, None) => {}
                other => panic!("bin {bin} mismatch: {other:?}"),
            }
        }
    }

    #[test]
    fn all_bins_empty_is_error() {
        let locs = vec![loc(0.0, 0.0), loc(100.0, 0.0)];
        let w = vec![0.0, 1.0];
        // bins end far below the only pair distance
        assert!(empirical_variogram(&w, &locs, &[0.0, 1.0, 2.0]).is_err());
    }

    #[test]
    fn theoretical_variogram_limits() {
        let spec = crate::model::specs::symmetric_shared([1, 1], crate::model::LinkPair::default());
        let params = ParameterVector::for_spec(&spec)
            .with(ParamName::Nu2(0), 0.230)
            .with(ParamName::Nu2(1), 0.081)
            .with(ParamName::PhiT, 11.581);
        // u = 0 -> tau^2 = 0 here
        assert_abs_diff_eq!(theoretical_variogram_symmetric(&params, 0.0, 0).unwrap(), 0.0, epsilon = 1e-12);
        // u = phi_T
        assert_abs_diff_eq!(
            theoretical_variogram_symmetric(&params, 11.581, 0).unwrap(),
            0.14539,
            epsilon = 1e-5
        );
        // u -> infinity: nu^2 (1 + sigma^2), sigma = 0
        assert_abs_diff_eq!(
            theoretical_variogram_symmetric(&params, 1e9, 0).unwrap(),
            0.230,
            epsilon = 1e-9
        );
        // monotone on a grid
        let mut last = -1.0;
        for i in 0..100 {
            let v = theoretical_variogram_symmetric(&params, f64::from(i), 0).unwrap();
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn cross_variogram_values() {
        let spec = crate::model::specs::symmetric_shared([1, 1], crate::model::LinkPair::default());
        let params = ParameterVector::for_spec(&spec)
            .with(ParamName::Nu2(0), 0.230)
            .with(ParamName::Nu2(1), 0.081)
            .with(ParamName::PhiT, 11.581);
        // u = 0: 0.5 (nu1^2 + nu2^2) - nu1 nu2
        let at0 = cross_variogram_symmetric(&params, 0.0).unwrap();
        assert_abs_diff_eq!(at0, 0.01899, epsilon = 5e-5);
        assert_abs_diff_eq!(at0, 0.5 * (0.230 + 0.081) - (0.230f64 * 0.081).sqrt(), epsilon = 1e-12);
        // u -> infinity: the sill
        let sill = cross_variogram_symmetric(&params, 1e9).unwrap();
        assert_abs_diff_eq!(sill, 0.5 * (0.230 + 0.081), epsilon = 1e-9);
    }

    #[test]
    fn cross_variogram_zero_loadings() {
        let spec = crate::model::specs::symmetric_shared([1, 1], crate::model::LinkPair::default());
        let mut s2 = spec.clone();
        s2.include_nugget = [true, true];
        let params = ParameterVector::for_spec(&s2)
            .with(ParamName::Nu2(0), 1e-18)
            .with(ParamName::Nu2(1), 1e-18)
            .with(ParamName::PhiT, 5.0)
            .with(ParamName::Tau2(0), 0.3)
            .with(ParamName::Tau2(1), 0.5);
        for u in [0.0, 3.0, 50.0] {
            assert_abs_diff_eq!(
                cross_variogram_symmetric(&params, u).unwrap(),
                0.5 * (0.3 + 0.5),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn envelope_rejects_small_m() {
        let spec = crate::model::specs::univariate(1, crate::model::LinkFunction::Logit);
        let data = SurveyDataset::new(
            vec![loc(0.0, 0.0), loc(1.0, 0.0)],
            [
                vec![
                    crate::model::SurveyRecord { site: 0, n: 5, y: 1, design: vec![1.0] },
                    crate::model::SurveyRecord { site: 1, n: 5, y: 2, design: vec![1.0] },
                ],
                vec![],
            ],
        )
        .unwrap();
        let fake_fit = FitResult {
            spec: spec.clone(),
            params: ParameterVector::for_spec(&spec),
            intervals: vec![],
            reference: ParameterVector::for_spec(&spec),
            max_objective: 0.0,
            trace: vec![],
            converged: true,
            warnings: vec![],
            mcmc: McmcOptions::default(),
            seed: 0,
        };
        let opts = EnvelopeOptions { m: 1, ..Default::default() };
        assert!(envelope_test(&fake_fit, &data, &opts, 1).is_err());
    }

    #[test]
    fn study_rejects_small_r() {
        let spec = crate::model::specs::asymmetric_model1(1, crate::model::LinkPair::default());
        let params = ParameterVector::for_spec(&spec);
        let sites: Vec<Location> = (0..10).map(|i| loc(f64::from(i), 0.0)).collect();
        let cfg = SimStudyConfig {
            replicates: 10,
            prediction_k: 2,
            n_per_site: 10,
            mcmc: McmcOptions::default(),
        };
        assert!(simulation_study(&spec, &params, &[("m".into(), spec.clone())], &sites, &cfg, 1)
            .is_err());
    }
}
