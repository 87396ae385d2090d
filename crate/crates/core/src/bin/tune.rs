// Temporary calibration harness; not part of the deliverable.
use geodiag::geometry::Location;
use geodiag::inference::{mcml_fit, McmcOptions};
use geodiag::model::{specs, LinkPair, ParamName, ParameterVector, RecordPlan, SimulationPlan};
use geodiag::rng::derive_seed;
use std::time::Instant;

fn clustered_sites(n_per_cluster: usize, seed: u64) -> Vec<Location> {
    use rand::Rng;
    let centers = [(0.0, 0.0), (600.0, 100.0), (150.0, 700.0), (700.0, 650.0)];
    let mut rng = geodiag::rng::stream(seed, "sites", 0);
    let mut out = Vec::new();
    for c in centers {
        for _ in 0..n_per_cluster {
            let dx: f64 = rng.gen::<f64>() * 200.0 - 100.0;
            let dy: f64 = rng.gen::<f64>() * 200.0 - 100.0;
            out.push(Location { x: c.0 + dx, y: c.1 + dy });
        }
    }
    out
}

fn table1_model2_truth(spec: &geodiag::model::ModelSpec) -> ParameterVector {
    ParameterVector::for_spec(spec)
        .with(ParamName::Beta { diag: 0, index: 0 }, -0.763)
        .with(ParamName::Beta { diag: 1, index: 0 }, -1.736)
        .with(ParamName::Sigma2(0), 1.617)
        .with(ParamName::Phi(0), 187.388)
        .with(ParamName::Sigma2(1), 0.216)
        .with(ParamName::Phi(1), 23.686)
        .with(ParamName::Tau2(0), 0.324)
        .with(ParamName::Tau2(1), 0.104)
        .with(ParamName::Alpha, 1.017)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let mode = args.get(1).map(String::as_str).unwrap_or("recovery");
    let n_sites_pc: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(50);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1);

    match mode {
        "recovery" => {
            let spec = specs::asymmetric_model2(1, LinkPair::default());
            let truth = table1_model2_truth(&spec);
            let sites = clustered_sites(n_sites_pc, seed);
            println!("sites: {}", sites.len());
            let plan = SimulationPlan {
                sites: sites.clone(),
                records: [
                    (0..sites.len()).map(|s| RecordPlan { site: s, n: 100, design: vec![1.0] }).collect(),
                    (0..sites.len()).map(|s| RecordPlan { site: s, n: 100, design: vec![1.0] }).collect(),
                ],
                truth_locations: vec![],
                truth_designs: [vec![], vec![]],
            };
            let sim = geodiag::model::simulate_dataset(&spec, &truth, &plan, derive_seed(seed, "sim", 0)).unwrap();
            let opts = McmcOptions { n_iterations: 5000, burn_in: 1000, thinning: 8, ..Default::default() };
            let t0 = Instant::now();
            let fit = mcml_fit(&spec, &sim.dataset, None, &opts, derive_seed(seed, "fit", 0)).unwrap();
            let dt = t0.elapsed();
            println!("fit time: {dt:.2?}, converged: {}, cycles: {}", fit.converged, fit.trace.len());
            for tr in &fit.trace {
                println!("  cycle {}: obj {:.4}, delta {:.4}, ess {:.3}, acc {:.2}, bfgs {}", tr.cycle, tr.objective, tr.delta_inf, tr.ess_fraction, tr.acceptance_rate, tr.bfgs_iterations);
            }
            for name in fit.params.names() {
                let v = fit.params.value(name).unwrap();
                let t = truth.value(name).unwrap_or(f64::NAN);
                let ci = fit.interval(name);
                let (lo, hi, cov) = match ci {
                    Some(c) => (c.lower, c.upper, if t >= c.lower && t <= c.upper { "COVER" } else { "MISS" }),
                    None => (f64::NAN, f64::NAN, "none"),
                };
                println!("  {name}: est {v:.3} truth {t:.3} ci ({lo:.3}, {hi:.3}) {cov}");
            }
            for w in &fit.warnings {
                println!("  warn: {w}");
            }
        }
        "uni" => {
            // univariate fit speed (envelope building block)
            let spec = specs::univariate(1, geodiag::model::LinkFunction::Logit);
            let truth = ParameterVector::for_spec(&spec)
                .with(ParamName::Beta { diag: 0, index: 0 }, -1.0)
                .with(ParamName::Sigma2(0), 0.8)
                .with(ParamName::Phi(0), 40.0)
                .with(ParamName::Tau2(0), 0.2);
            let sites: Vec<Location> = clustered_sites(n_sites_pc, seed);
            let plan = SimulationPlan {
                sites: sites.clone(),
                records: [
                    (0..sites.len()).map(|s| RecordPlan { site: s, n: 100, design: vec![1.0] }).collect(),
                    vec![],
                ],
                truth_locations: vec![],
                truth_designs: [vec![], vec![]],
            };
            let sim = geodiag::model::simulate_dataset(&spec, &truth, &plan, derive_seed(seed, "sim", 0)).unwrap();
            let opts = McmcOptions { n_iterations: 3000, burn_in: 600, thinning: 6, ..Default::default() };
            let t0 = Instant::now();
            let fit = mcml_fit(&spec, &sim.dataset, None, &opts, derive_seed(seed, "fit", 0)).unwrap();
            println!("uni fit time: {:.2?}, converged {}, cycles {}", t0.elapsed(), fit.converged, fit.trace.len());
            for name in fit.params.names() {
                println!("  {name}: est {:.3} truth {:.3}", fit.params.value(name).unwrap(), truth.value(name).unwrap_or(f64::NAN));
            }
        }
        "hesstruth" => {
            // Hessian behavior centered exactly at the truth
            use geodiag::inference::{sample_latent_conditional, McmlObjective};
            let spec = specs::asymmetric_model2(1, LinkPair::default());
            let truth = table1_model2_truth(&spec);
            let sites = clustered_sites(n_sites_pc, seed);
            let plan = SimulationPlan {
                sites: sites.clone(),
                records: [
                    (0..sites.len()).map(|s| RecordPlan { site: s, n: 100, design: vec![1.0] }).collect(),
                    (0..sites.len()).map(|s| RecordPlan { site: s, n: 100, design: vec![1.0] }).collect(),
                ],
                truth_locations: vec![],
                truth_designs: [vec![], vec![]],
            };
            let sim = geodiag::model::simulate_dataset(&spec, &truth, &plan, derive_seed(seed, "sim", 0)).unwrap();
            // realized latent component variances
            for comp in &sim.truth.latent.layout.components {
                let vals = &sim.truth.latent.values[comp.offset..comp.offset + comp.len()];
                let m = vals.iter().sum::<f64>() / vals.len() as f64;
                let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (vals.len() as f64 - 1.0);
                println!("  {:?}: realized var {:.3}", comp.field, v);
            }
            let opts = McmcOptions { n_iterations: 17_000, burn_in: 1000, thinning: 8, ..Default::default() };
            let t0 = Instant::now();
            let samples = sample_latent_conditional(&spec, &truth, &sim.dataset, &opts, derive_seed(seed, "mc", 0)).unwrap();
            println!("retained {} in {:.2?}", samples.n_samples(), t0.elapsed());
            let obj = McmlObjective::new(&spec, &sim.dataset, &truth, &samples).unwrap();
            let t1 = Instant::now();
            let (ints, warns) = geodiag::inference::hessian::wald_intervals(&obj, &truth);
            println!("hessian pass in {:.2?}", t1.elapsed());
            for w in &warns {
                println!("  warn: {w}");
            }
            for (name, ci) in &ints {
                match ci {
                    Some(c) => println!("  {name}: truth {:.3} ci ({:.4}, {:.4})", truth.value(*name).unwrap(), c.lower, c.upper),
                    None => println!("  {name}: none"),
                }
            }
        }
        other => eprintln!("unknown mode {other}"),
    }
}
