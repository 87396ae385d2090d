//! Forward simulation of survey data with a realized-truth sidecar.

use ndarray::Array2;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{distance_matrix, Location};
use crate::gp::{covariance_matrix, GpParams};
use crate::model::latent::{dot, LatentField, LatentLayout, LatentState};
use crate::model::predictor::linear_predictor;
use crate::model::{ModelSpec, ParamName, ParameterVector, Structure, SurveyDataset, SurveyRecord};
use crate::rng;

/// A record to generate: site index, number examined, design vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecordPlan {
    pub site: usize,
    pub n: u32,
    pub design: Vec<f64>,
}

/// What to simulate: records per diagnostic over a site list, plus optional
/// extra locations at which the realized signal surface is also reported
/// (e.g. prediction targets of a simulation study).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationPlan {
    pub sites: Vec<Location>,
    pub records: [Vec<RecordPlan>; 2],
    pub truth_locations: Vec<Location>,
    /// Designs at the truth locations, one per diagnostic with records.
    pub truth_designs: [Vec<Vec<f64>>; 2],
}

/// Realized latent state and prevalences behind a simulated dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationTruth {
    pub latent: LatentState,
    /// Sampling prevalence per record (nuggets included): the binomial p.
    pub record_prevalence: [Vec<f64>; 2],
    /// Signal-scale prevalence (spatial fields only, no nuggets) at the
    /// truth locations, per diagnostic.
    pub truth_prevalence: [Vec<f64>; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulatedSurvey {
    pub dataset: SurveyDataset,
    pub truth: SimulationTruth,
}

struct FieldDraw {
    /// values over the component support (data sites)
    support_values: Vec<f64>,
    /// values at the truth locations
    truth_values: Vec<f64>,
}

/// Simulate one spatial field jointly over its support sites and the truth
/// locations so the truth surface is coherent with the data.
fn simulate_field(
    gp: &GpParams,
    support_locs: &[Location],
    truth_locs: &[Location],
    seed: u64,
    tag: &str,
) -> Result<FieldDraw> {
    let mut all: Vec<Location> = Vec::with_capacity(support_locs.len() + truth_locs.len());
    all.extend_from_slice(support_locs);
    all.extend_from_slice(truth_locs);
    let d = distance_matrix(&all)?;
    let cov = covariance_matrix(gp, &d, None)?;
    let mut rng = rng::stream(seed, tag, 0);
    let z: ndarray::Array1<f64> =
        ndarray::Array1::from_iter((0..all.len()).map(|_| StandardNormal.sample(&mut rng)));
    let v = cov.factor().dot(&z);
    Ok(FieldDraw {
        support_values: v.as_slice().unwrap()[..support_locs.len()].to_vec(),
        truth_values: v.as_slice().unwrap()[support_locs.len()..].to_vec(),
    })
}

/// Draw a full survey from the model; deterministic given `seed`.
pub fn simulate_dataset(
    spec: &ModelSpec,
    params: &ParameterVector,
    plan: &SimulationPlan,
    seed: u64,
) -> Result<SimulatedSurvey> {
    spec.validate()?;
    params.validate()?;

    // provisional dataset (y = 0) fixes the latent layout and validates the plan
    let provisional = SurveyDataset::new(
        plan.sites.clone(),
        [
            plan.records[0]
                .iter()
                .map(|r| SurveyRecord { site: r.site, n: r.n, y: 0, design: r.design.clone() })
                .collect(),
            plan.records[1]
                .iter()
                .map(|r| SurveyRecord { site: r.site, n: r.n, y: 0, design: r.design.clone() })
                .collect(),
        ],
    )?;
    provisional.check_spec(spec)?;
    for k in 0..spec.n_diagnostics() {
        for d in &plan.truth_designs[k] {
            if d.len() != spec.design_dims[k] {
                return Err(Error::validation(format!(
                    "truth design dimension {} does not match spec {} for diagnostic {}",
                    d.len(),
                    spec.design_dims[k],
                    k + 1
                )));
            }
        }
        if !plan.truth_locations.is_empty() && plan.truth_designs[k].len() != plan.truth_locations.len()
        {
            return Err(Error::validation(
                "truth designs must align with truth locations".to_string(),
            ));
        }
    }

    let layout = LatentLayout::for_model(spec, &provisional);
    let mut latent = LatentState::zeros(layout.clone());

    // spatial fields, each on its own derived stream, with values at the
    // truth locations retained for the signal surface
    let mut truth_fields: Vec<(LatentField, Vec<f64>)> = Vec::new();
    for comp in &layout.components {
        if !comp.is_spatial() {
            continue;
        }
        let (gp, tag) = match comp.field {
            LatentField::S(k) => (
                GpParams::new(
                    params.value(ParamName::Sigma2(k))?,
                    params.value(ParamName::Phi(k))?,
                )?,
                if k == 0 { "sim-s1" } else { "sim-s2" },
            ),
            LatentField::T => (GpParams::new(1.0, params.value(ParamName::PhiT)?)?, "sim-t"),
            LatentField::Z(_) => unreachable!(),
        };
        let support_locs: Vec<Location> =
            comp.support.iter().map(|&s| plan.sites[s]).collect();
        let draw = simulate_field(&gp, &support_locs, &plan.truth_locations, seed, tag)?;
        latent.values[comp.offset..comp.offset + comp.len()].copy_from_slice(&draw.support_values);
        truth_fields.push((comp.field, draw.truth_values));
    }
    // handle truth values for spatial fields that are active in the spec but
    // have empty data support (possible when a diagnostic has no records)
    // -- covered above because such components are dropped from the layout;
    // their truth-surface contribution is an unconditional draw
    for field in spec_fields(spec) {
        if layout.component(field).is_none() && !plan.truth_locations.is_empty() {
            let (gp, tag) = match field {
                LatentField::S(k) => (
                    GpParams::new(
                        params.value(ParamName::Sigma2(k))?,
                        params.value(ParamName::Phi(k))?,
                    )?,
                    if k == 0 { "sim-s1" } else { "sim-s2" },
                ),
                LatentField::T => (GpParams::new(1.0, params.value(ParamName::PhiT)?)?, "sim-t"),
                LatentField::Z(_) => continue,
            };
            let draw = simulate_field(&gp, &[], &plan.truth_locations, seed, tag)?;
            truth_fields.push((field, draw.truth_values));
        }
    }

    // nuggets
    for comp in &layout.components {
        if let LatentField::Z(k) = comp.field {
            let tau = params.value(ParamName::Tau2(k))?.sqrt();
            let mut stream = rng::stream(seed, if k == 0 { "sim-z1" } else { "sim-z2" }, 0);
            for i in 0..comp.len() {
                let e: f64 = StandardNormal.sample(&mut stream);
                latent.values[comp.offset + i] = tau * e;
            }
        }
    }

    // linear predictors and binomial draws
    let eta = linear_predictor(spec, params, &provisional, &latent)?;
    let mut records: [Vec<SurveyRecord>; 2] = [Vec::new(), Vec::new()];
    let mut record_prevalence: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for k in 0..spec.n_diagnostics() {
        let mut stream = rng::stream(seed, if k == 0 { "sim-y1" } else { "sim-y2" }, 0);
        for (r, plan_rec) in plan.records[k].iter().enumerate() {
            let p = spec.links[k].inverse(eta[k][r]);
            let y = Binomial::new(u64::from(plan_rec.n), p)
                .map_err(|e| Error::numerical(format!("binomial draw: {e}")))?
                .sample(&mut stream) as u32;
            record_prevalence[k].push(p);
            records[k].push(SurveyRecord {
                site: plan_rec.site,
                n: plan_rec.n,
                y,
                design: plan_rec.design.clone(),
            });
        }
    }

    // signal-scale truth at the extra locations
    let field_at = |field: LatentField, t: usize| -> f64 {
        truth_fields
            .iter()
            .find(|(f, _)| *f == field)
            .map(|(_, v)| v[t])
            .unwrap_or(0.0)
    };
    let mut truth_prevalence: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for t in 0..plan.truth_locations.len() {
        match spec.structure {
            Structure::Univariate => {
                let beta = params.beta(0);
                let mut eta = dot(&plan.truth_designs[0][t], &beta);
                if spec.include_s[0] {
                    eta += field_at(LatentField::S(0), t);
                }
                truth_prevalence[0].push(spec.links[0].inverse(eta));
            }
            Structure::Asymmetric => {
                let beta1 = params.beta(0);
                let beta2 = params.beta(1);
                let alpha = params.value(ParamName::Alpha)?;
                let mut eta1 = dot(&plan.truth_designs[0][t], &beta1);
                if spec.include_s[0] {
                    eta1 += field_at(LatentField::S(0), t);
                }
                let mut eta2 = dot(&plan.truth_designs[1][t], &beta2) + alpha * eta1;
                if spec.include_s[1] {
                    eta2 += field_at(LatentField::S(1), t);
                }
                truth_prevalence[0].push(spec.links[0].inverse(eta1));
                truth_prevalence[1].push(spec.links[1].inverse(eta2));
            }
            Structure::Symmetric => {
                for k in 0..2 {
                    let beta = params.beta(k);
                    let nu = params.value(ParamName::Nu2(k))?.sqrt();
                    let mut field = field_at(LatentField::T, t);
                    if spec.include_specific_s[k] {
                        field += field_at(LatentField::S(k), t);
                    }
                    let eta = dot(&plan.truth_designs[k][t], &beta) + nu * field;
                    truth_prevalence[k].push(spec.links[k].inverse(eta));
                }
            }
        }
    }

    let dataset = SurveyDataset::new(plan.sites.clone(), records)?;
    Ok(SimulatedSurvey {
        dataset,
        truth: SimulationTruth { latent, record_prevalence, truth_prevalence },
    })
}

fn spec_fields(spec: &ModelSpec) -> Vec<LatentField> {
    let mut out = Vec::new();
    match spec.structure {
        Structure::Univariate => {
            if spec.include_s[0] {
                out.push(LatentField::S(0));
            }
        }
        Structure::Asymmetric => {
            for k in 0..2 {
                if spec.include_s[k] {
                    out.push(LatentField::S(k));
                }
            }
        }
        Structure::Symmetric => {
            out.push(LatentField::T);
            for k in 0..2 {
                if spec.include_specific_s[k] {
                    out.push(LatentField::S(k));
                }
            }
        }
    }
    out
}

/// Covariance check helper used by tests: correlation matrix of a plan's
/// sites under given GP parameters.
#[allow(dead_code)]
fn correlation_of(plan: &SimulationPlan, gp: &GpParams) -> Result<Array2<f64>> {
    let d = distance_matrix(&plan.sites)?;
    Ok(d.matrix().mapv(|u| gp.sigma2 * (-u / gp.phi).exp()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{specs, LinkFunction, LinkPair};
    use crate::numeric::stats::mean;

    fn grid_sites(nx: usize, ny: usize, step: f64) -> Vec<Location> {
        let mut out = Vec::new();
        for iy in 0..ny {
            for ix in 0..nx {
                out.push(Location { x: ix as f64 * step, y: iy as f64 * step });
            }
        }
        out
    }

    fn intercept_plan(sites: Vec<Location>, n: u32, both: bool) -> SimulationPlan {
        let recs: Vec<RecordPlan> = (0..sites.len())
            .map(|s| RecordPlan { site: s, n, design: vec![1.0] })
            .collect();
        SimulationPlan {
            sites,
            records: [recs.clone(), if both { recs } else { Vec::new() }],
            truth_locations: Vec::new(),
            truth_designs: [Vec::new(), Vec::new()],
        }
    }

    #[test]
    fn same_seed_identical_datasets() {
        let mut spec = specs::asymmetric_model2(1, LinkPair::default());
        spec.include_nugget = [true, true];
        let params = ParameterVector::for_spec(&spec)
            .with(ParamName::Beta { diag: 0, index: 0 }, -0.7)
            .with(ParamName::Beta { diag: 1, index: 0 }, -1.7)
            .with(ParamName::Sigma2(0), 1.0)
            .with(ParamName::Phi(0), 50.0)
            .with(ParamName::Sigma2(1), 0.2)
            .with(ParamName::Phi(1), 10.0)
            .with(ParamName::Tau2(0), 0.3)
            .with(ParamName::Tau2(1), 0.1)
            .with(ParamName::Alpha, 1.0);
        let plan = intercept_plan(grid_sites(5, 5, 20.0), 50, true);
        let a = simulate_dataset(&spec, &params, &plan, 11).unwrap();
        let b = simulate_dataset(&spec, &params, &plan, 11).unwrap();
        for k in 0..2 {
            let ya: Vec<u32> = a.dataset.records(k).iter().map(|r| r.y).collect();
            let yb: Vec<u32> = b.dataset.records(k).iter().map(|r| r.y).collect();
            assert_eq!(ya, yb);
        }
        let c = simulate_dataset(&spec, &params, &plan, 12).unwrap();
        let ya: Vec<u32> = a.dataset.records(0).iter().map(|r| r.y).collect();
        let yc: Vec<u32> = c.dataset.records(0).iter().map(|r| r.y).collect();
        assert_ne!(ya, yc);
    }

    #[test]
    fn no_latent_pooled_fraction_matches_intercept() {
        // pure logistic with inverse-logit(beta0) = 0.3
        let mut spec = specs::univariate(1, LinkFunction::Logit);
        spec.include_s = [false, false];
        spec.include_nugget = [false, false];
        let beta0 = LinkFunction::Logit.forward(0.3).unwrap();
        let params =
            ParameterVector::for_spec(&spec).with(ParamName::Beta { diag: 0, index: 0 }, beta0);
        let plan = intercept_plan(grid_sites(10, 5, 5.0), 100, false);
        let sim = simulate_dataset(&spec, &params, &plan, 33).unwrap();
        let tot_n: u32 = sim.dataset.records(0).iter().map(|r| r.n).sum();
        let tot_y: u32 = sim.dataset.records(0).iter().map(|r| r.y).sum();
        let frac = f64::from(tot_y) / f64::from(tot_n);
        assert!((frac - 0.3).abs() < 0.02, "pooled fraction {frac}");
    }

    #[test]
    fn rejects_zero_count_plan() {
        let spec = specs::univariate(1, LinkFunction::Logit);
        let params = ParameterVector::for_spec(&spec);
        let plan = intercept_plan(grid_sites(2, 1, 1.0), 0, false);
        assert!(simulate_dataset(&spec, &params, &plan, 1).is_err());
    }

    #[test]
    fn alpha_zero_gives_uncorrelated_prevalences() {
        let mut spec = specs::asymmetric_model1(1, LinkPair::default());
        spec.include_nugget = [true, true];
        let params = ParameterVector::for_spec(&spec)
            .with(ParamName::Beta { diag: 0, index: 0 }, 0.0)
            .with(ParamName::Beta { diag: 1, index: 0 }, 0.0)
            .with(ParamName::Sigma2(0), 1.0)
            .with(ParamName::Phi(0), 5.0)
            .with(ParamName::Tau2(0), 0.2)
            .with(ParamName::Tau2(1), 0.5)
            .with(ParamName::Alpha, 0.0);
        let plan = intercept_plan(grid_sites(6, 6, 30.0), 80, true);
        let reps = 60;
        let mut corrs = Vec::new();
        for rep in 0..reps {
            let sim =
                simulate_dataset(&spec, &params, &plan, crate::rng::derive_seed(7, "rep", rep))
                    .unwrap();
            let p1: Vec<f64> = sim
                .dataset
                .records(0)
                .iter()
                .map(|r| f64::from(r.y) / f64::from(r.n))
                .collect();
            let p2: Vec<f64> = sim
                .dataset
                .records(1)
                .iter()
                .map(|r| f64::from(r.y) / f64::from(r.n))
                .collect();
            corrs.push(sample_corr(&p1, &p2));
        }
        let m = mean(&corrs);
        let se = (crate::numeric::stats::variance(&corrs) / reps as f64).sqrt();
        assert!(m.abs() < 3.0 * se + 1e-9, "mean corr {m}, se {se}");
    }

    #[test]
    fn symmetric_label_exchange_is_invariant() {
        let spec = specs::symmetric_shared([1, 1], LinkPair::default());
        let params = ParameterVector::for_spec(&spec)
            .with(ParamName::Beta { diag: 0, index: 0 }, -1.0)
            .with(ParamName::Beta { diag: 1, index: 0 }, -1.0)
            .with(ParamName::Nu2(0), 0.5)
            .with(ParamName::Nu2(1), 0.5)
            .with(ParamName::PhiT, 15.0);
        let plan = intercept_plan(grid_sites(6, 6, 10.0), 60, true);
        let reps = 80;
        let (mut m1, mut m2) = (Vec::new(), Vec::new());
        for rep in 0..reps {
            let sim =
                simulate_dataset(&spec, &params, &plan, crate::rng::derive_seed(3, "rep", rep))
                    .unwrap();
            for (k, acc) in [(0usize, &mut m1), (1usize, &mut m2)] {
                let p: Vec<f64> = sim
                    .dataset
                    .records(k)
                    .iter()
                    .map(|r| f64::from(r.y) / f64::from(r.n))
                    .collect();
                acc.push(mean(&p));
            }
        }
        let d = mean(&m1) - mean(&m2);
        let se = ((crate::numeric::stats::variance(&m1) + crate::numeric::stats::variance(&m2))
            / reps as f64)
            .sqrt();
        assert!(d.abs() < 3.0 * se + 1e-9, "difference {d}, se {se}");
    }

    fn sample_corr(a: &[f64], b: &[f64]) -> f64 {
        let (ma, mb) = (mean(a), mean(b));
        let mut num = 0.0;
        let mut da = 0.0;
        let mut db = 0.0;
        for i in 0..a.len() {
            num += (a[i] - ma) * (b[i] - mb);
            da += (a[i] - ma).powi(2);
            db += (b[i] - mb).powi(2);
        }
        num / (da.sqrt() * db.sqrt()).max(1e-12)
    }
}
