//! Default starting values: non-spatial binomial regressions per diagnostic,
//! with variance components from the spread of working residuals (75/25
//! sill/nugget split, scale = one third of the maximum pairwise distance).

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::geometry::distance_matrix;
use crate::model::latent::dot;
use crate::model::{LinkFunction, ModelSpec, ParamName, ParameterVector, Structure, SurveyDataset};
use crate::numeric::chol;
use crate::numeric::stats::{mean, variance};

/// IRLS for a binomial GLM; returns the coefficient vector.
pub(crate) fn binomial_glm(
    rows: &[(u32, u32, Vec<f64>)],
    link: LinkFunction,
) -> Result<Vec<f64>> {
    let p = rows.first().map(|r| r.2.len()).ok_or_else(|| {
        Error::validation("glm: no records")
    })?;
    let mut beta = vec![0.0; p];
    for _ in 0..30 {
        let mut xtwx = Array2::<f64>::zeros((p, p));
        let mut xtwz = Array1::<f64>::zeros(p);
        for (y, n, x) in rows {
            let eta = dot(x, &beta).clamp(-8.0, 8.0);
            let mu = link.inverse(eta);
            let d = link.inverse_derivative(eta).max(1e-8);
            let v = (mu * (1.0 - mu)).max(1e-8);
            let w = f64::from(*n) * d * d / v;
            let z = eta + (f64::from(*y) / f64::from(*n) - mu) / d;
            for i in 0..p {
                xtwz[i] += w * x[i] * z;
                for j in 0..p {
                    xtwx[[i, j]] += w * x[i] * x[j];
                }
            }
        }
        for i in 0..p {
            xtwx[[i, i]] += 1e-8 + 1e-8 * xtwx[[i, i]];
        }
        let l = chol::cholesky(xtwx.view())
            .map_err(|e| Error::numerical(format!("glm normal equations: {e}")))?;
        let new = chol::solve_spd(l.view(), xtwz.view());
        let delta = new
            .iter()
            .zip(beta.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        beta = new.to_vec();
        if delta < 1e-8 {
            break;
        }
    }
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("glm: non-finite coefficients"));
    }
    Ok(beta)
}

/// Empirical linear-predictor value with the 0.5 / 1.0 continuity adjustment.
fn working_link(link: LinkFunction, y: u32, n: u32) -> f64 {
    let p = (f64::from(y) + 0.5) / (f64::from(n) + 1.0);
    link.forward(p).unwrap_or(0.0)
}

fn clamp_var(v: f64) -> f64 {
    v.clamp(1e-3, 1e6)
}

/// Exponential-variogram shape estimate (tau2, sigma2, phi) from working
/// residuals: weighted least squares of tau2 + sigma2 (1 - exp(-u/phi))
/// over distance bins, phi profiled on a log grid. Falls back to `None`
/// on degenerate geometry.
fn variogram_shape(
    resid: &[f64],
    locs: &[crate::geometry::Location],
    max_dist: f64,
) -> Option<(f64, f64, f64)> {
    let edges = crate::validation::default_bin_edges(locs, 12).ok()?;
    let vg = crate::validation::empirical_variogram(resid, locs, &edges).ok()?;
    let pts: Vec<(f64, f64, f64)> = vg
        .midpoints
        .iter()
        .zip(vg.values.iter())
        .zip(vg.counts.iter())
        .filter_map(|((u, v), c)| v.map(|v| (*u, v, *c as f64)))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let mut best: Option<(f64, (f64, f64, f64))> = None;
    for k in 0..30 {
        let phi = (max_dist / 150.0) * (300.0f64).powf(k as f64 / 29.0);
        // weighted LS for gamma = a + b x with x = 1 - exp(-u/phi)
        let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(u, g, w) in &pts {
            let x = 1.0 - (-u / phi).exp();
            sw += w;
            sx += w * x;
            sy += w * g;
            sxx += w * x * x;
            sxy += w * x * g;
        }
        let det = sw * sxx - sx * sx;
        if det.abs() < 1e-12 {
            continue;
        }
        let mut b = (sw * sxy - sx * sy) / det;
        let mut a = (sy - b * sx) / sw;
        if b < 0.0 {
            b = 0.0;
            a = sy / sw;
        }
        if a < 0.0 {
            a = 0.0;
            b = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        }
        let sse: f64 = pts
            .iter()
            .map(|&(u, g, w)| {
                let x = 1.0 - (-u / phi).exp();
                w * (g - a - b * x).powi(2)
            })
            .sum();
        if best.as_ref().map_or(true, |(s, _)| sse < *s) {
            best = Some((sse, (a, b, phi)));
        }
    }
    best.map(|(_, v)| v)
}

/// Variance-component starting values for one diagnostic: variogram-shape
/// estimates when the geometry supports them, otherwise the 75/25
/// sill/nugget split at one third of the maximum distance.
fn variance_init(
    resid: &[f64],
    locs: &[crate::geometry::Location],
    max_dist: f64,
) -> (f64, f64, f64) {
    let v = clamp_var(if resid.len() > 1 { variance(resid) } else { 0.5 }.max(0.01));
    match variogram_shape(resid, locs, max_dist) {
        Some((tau2, sigma2, phi)) if tau2 + sigma2 > 1e-6 => (
            clamp_var(tau2.max(0.05 * v)),
            clamp_var(sigma2.max(0.05 * v)),
            phi.clamp(max_dist / 200.0, 2.0 * max_dist).max(1e-3),
        ),
        _ => (
            clamp_var(0.25 * v),
            clamp_var(0.75 * v),
            (max_dist / 3.0).max(1e-3),
        ),
    }
}

/// Default initial parameters for MCML.
pub fn default_init(spec: &ModelSpec, data: &SurveyDataset) -> Result<ParameterVector> {
    data.check_spec(spec)?;
    let mut params = ParameterVector::for_spec(spec);
    let max_dist = distance_matrix(data.sites())?.max().max(1e-6);
    let phi_init = (max_dist / 3.0).max(1e-3);

    // per-diagnostic regression rows
    let glm_rows = |k: usize| -> Vec<(u32, u32, Vec<f64>)> {
        data.records(k).iter().map(|r| (r.y, r.n, r.design.clone())).collect()
    };

    // per-site pooled residual on the link scale for diagnostic k, after
    // removing the regression part (and any supplied extra per-site term)
    let site_residuals = |k: usize,
                          beta: &[f64],
                          extra: &dyn Fn(usize) -> f64|
     -> (Vec<f64>, Vec<crate::geometry::Location>) {
        let mut resid = Vec::new();
        let mut locs = Vec::new();
        for site in data.diag_sites(k) {
            let (mut y, mut n) = (0u32, 0u32);
            let mut design: Option<&Vec<f64>> = None;
            for r in data.records(k).iter().filter(|r| r.site == site) {
                y += r.y;
                n += r.n;
                design.get_or_insert(&r.design);
            }
            let xb = design.map(|d| dot(d, beta)).unwrap_or(0.0);
            resid.push(working_link(spec.links[k], y, n) - xb - extra(site));
            locs.push(data.sites()[site]);
        }
        (resid, locs)
    };

    match spec.structure {
        Structure::Univariate => {
            let beta = binomial_glm(&glm_rows(0), spec.links[0])?;
            for (i, b) in beta.iter().enumerate() {
                params.set(ParamName::Beta { diag: 0, index: i }, *b)?;
            }
            let (resid, locs) = site_residuals(0, &beta, &|_| 0.0);
            let (tau2, sigma2, phi) = variance_init(&resid, &locs, max_dist);
            match (spec.include_s[0], spec.include_nugget[0]) {
                (true, true) => {
                    params.set(ParamName::Sigma2(0), sigma2)?;
                    params.set(ParamName::Phi(0), phi)?;
                    params.set(ParamName::Tau2(0), tau2)?;
                }
                (true, false) => {
                    params.set(ParamName::Sigma2(0), clamp_var(sigma2 + tau2))?;
                    params.set(ParamName::Phi(0), phi)?;
                }
                (false, true) => {
                    params.set(ParamName::Tau2(0), clamp_var(sigma2 + tau2))?;
                }
                (false, false) => {}
            }
        }
        Structure::Asymmetric => {
            let beta1 = binomial_glm(&glm_rows(0), spec.links[0])?;
            for (i, b) in beta1.iter().enumerate() {
                params.set(ParamName::Beta { diag: 0, index: i }, *b)?;
            }
            let (resid1, locs1) = site_residuals(0, &beta1, &|_| 0.0);
            let (tau2_1, sigma2_1, phi_1) = variance_init(&resid1, &locs1, max_dist);
            if spec.include_s[0] && spec.include_nugget[0] {
                params.set(ParamName::Sigma2(0), sigma2_1)?;
                params.set(ParamName::Phi(0), phi_1)?;
                params.set(ParamName::Tau2(0), tau2_1)?;
            } else if spec.include_s[0] {
                params.set(ParamName::Sigma2(0), clamp_var(sigma2_1 + tau2_1))?;
                params.set(ParamName::Phi(0), phi_1)?;
            } else if spec.include_nugget[0] {
                params.set(ParamName::Tau2(0), clamp_var(sigma2_1 + tau2_1))?;
            }

            // empirical diagnostic-1 predictor per site for the calibration slope
            let sites1 = data.diag_sites(0);
            let eta1_of_site = |site: usize| -> f64 {
                if sites1.binary_search(&site).is_ok() {
                    let (mut y, mut n) = (0u32, 0u32);
                    for r in data.records(0).iter().filter(|r| r.site == site) {
                        y += r.y;
                        n += r.n;
                    }
                    working_link(spec.links[0], y, n)
                } else {
                    f64::NAN
                }
            };
            let rows2: Vec<(u32, u32, Vec<f64>)> = data
                .records(1)
                .iter()
                .map(|r| {
                    let e1 = eta1_of_site(r.site);
                    let e1 = if e1.is_finite() { e1 } else { dot(&r.design, &beta1) };
                    let mut x = r.design.clone();
                    x.push(e1);
                    (r.y, r.n, x)
                })
                .collect();
            let beta2a = binomial_glm(&rows2, spec.links[1])?;
            let alpha = beta2a.last().copied().unwrap_or(0.0).clamp(-5.0, 5.0);
            for i in 0..spec.design_dims[1] {
                params.set(ParamName::Beta { diag: 1, index: i }, beta2a[i])?;
            }
            params.set(ParamName::Alpha, alpha)?;
            let beta2 = beta2a[..spec.design_dims[1]].to_vec();
            let (resid2, locs2) = site_residuals(1, &beta2, &|site| {
                let e1 = eta1_of_site(site);
                alpha * if e1.is_finite() { e1 } else { 0.0 }
            });
            let (tau2_2, sigma2_2, phi_2) = variance_init(&resid2, &locs2, max_dist);
            if spec.include_s[1] && spec.include_nugget[1] {
                params.set(ParamName::Sigma2(1), sigma2_2)?;
                params.set(ParamName::Phi(1), phi_2)?;
                params.set(ParamName::Tau2(1), tau2_2)?;
            } else if spec.include_s[1] {
                params.set(ParamName::Sigma2(1), clamp_var(sigma2_2 + tau2_2))?;
                params.set(ParamName::Phi(1), phi_2)?;
            } else if spec.include_nugget[1] {
                params.set(ParamName::Tau2(1), clamp_var(sigma2_2 + tau2_2))?;
            }
        }
        Structure::Symmetric => {
            let mut phi_ts = Vec::new();
            for k in 0..2 {
                let beta = binomial_glm(&glm_rows(k), spec.links[k])?;
                for (i, b) in beta.iter().enumerate() {
                    params.set(ParamName::Beta { diag: k, index: i }, *b)?;
                }
                let (resid, locs) = site_residuals(k, &beta, &|_| 0.0);
                let (tau2, sigma2, phi) = variance_init(&resid, &locs, max_dist);
                phi_ts.push(phi);
                let spatial_share = if spec.include_specific_s[k] { 2.0 } else { 1.0 };
                params.set(ParamName::Nu2(k), clamp_var(sigma2 / spatial_share))?;
                if spec.include_specific_s[k] {
                    params.set(ParamName::Sigma2(k), 1.0)?;
                    params.set(ParamName::Phi(k), (max_dist / 6.0).max(1e-3))?;
                }
                if spec.include_nugget[k] {
                    params.set(ParamName::Tau2(k), tau2)?;
                }
            }
            let phi_t = (phi_ts.iter().product::<f64>()).sqrt();
            params.set(ParamName::PhiT, phi_t.max(1e-3))?;
        }
    }
    let _ = phi_init;
    params.validate()?;
    Ok(params)
}

#[allow(dead_code)]
fn unused(_: f64) -> f64 {
    mean(&[0.0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Location;
    use crate::model::{specs, LinkPair, SurveyRecord};

    #[test]
    fn glm_recovers_logistic_intercept() {
        let rows = vec![(30u32, 100u32, vec![1.0])];
        let beta = binomial_glm(&rows, LinkFunction::Logit).unwrap();
        let want = LinkFunction::Logit.forward(0.3).unwrap();
        assert!((beta[0] - want).abs() < 1e-6, "{} vs {}", beta[0], want);
    }

    #[test]
    fn glm_recovers_slope() {
        // p = logit^-1(-1 + 0.5 x) evaluated without noise at n large
        let mut rows = Vec::new();
        for i in 0..20 {
            let x = i as f64 * 0.3;
            let p = 1.0 / (1.0 + (1.0 - 0.5 * x).exp());
            let n = 100_000u32;
            let y = (p * f64::from(n)).round() as u32;
            rows.push((y, n, vec![1.0, x]));
        }
        let beta = binomial_glm(&rows, LinkFunction::Logit).unwrap();
        assert!((beta[0] + 1.0).abs() < 5e-3, "intercept {}", beta[0]);
        assert!((beta[1] - 0.5).abs() < 5e-3, "slope {}", beta[1]);
    }

    #[test]
    fn default_init_produces_valid_parameters() {
        let spec = specs::asymmetric_model2(1, LinkPair::default());
        let r = |site, n, y| SurveyRecord { site, n, y, design: vec![1.0] };
        let sites: Vec<Location> = (0..6)
            .map(|i| Location { x: f64::from(i) * 10.0, y: 0.0 })
            .collect();
        let data = SurveyDataset::new(
            sites,
            [
                (0..6).map(|i| r(i, 50, 10 + (i as u32) * 3)).collect(),
                (0..6).map(|i| r(i, 50, 5 + (i as u32) * 2)).collect(),
            ],
        )
        .unwrap();
        let init = default_init(&spec, &data).unwrap();
        init.validate().unwrap();
        assert!(init.value(ParamName::Alpha).unwrap().is_finite());
        assert!(init.value(ParamName::Phi(0)).unwrap() > 0.0);
    }
}
