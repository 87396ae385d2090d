//! Model specification, survey data, linear predictors and forward simulation.
//!
//! Three structures are supported:
//!
//! * `Univariate` — the standard single-diagnostic geostatistical model
//!   W(x) = S(x) + Z, used on its own and as the building block of the
//!   variogram validation procedure (separate per-diagnostic fits).
//! * `Asymmetric` — diagnostic 2 is the gold standard; its linear predictor
//!   receives the full diagnostic-1 predictor scaled by `alpha`.
//! * `Symmetric` — both diagnostics load on a shared unit-variance process
//!   T(x) through loadings nu_k, optionally with diagnostic-specific
//!   processes S_k and nuggets.

pub mod latent;
pub mod link;
pub mod params;
pub mod predictor;
pub mod simulate;
pub mod spline;

pub use latent::{LatentComponent, LatentField, LatentLayout, LatentState};
pub use link::LinkFunction;
pub use params::{ParamName, ParameterVector, Transform};
pub use simulate::{simulate_dataset, RecordPlan, SimulatedSurvey, SimulationPlan, SimulationTruth};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Location;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Structure {
    Univariate,
    Asymmetric,
    Symmetric,
}

/// Links for the two diagnostics (second entry unused by univariate specs).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkPair(pub LinkFunction, pub LinkFunction);

impl Default for LinkPair {
    fn default() -> Self {
        LinkPair(LinkFunction::Logit, LinkFunction::Logit)
    }
}

/// Structural choices for a model: which latent components are active and
/// how the diagnostics are linked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub structure: Structure,
    pub links: [LinkFunction; 2],
    /// Regression dimension (including intercept) per diagnostic.
    pub design_dims: [usize; 2],
    /// Diagnostic-specific spatial processes S_k (asymmetric / univariate).
    pub include_s: [bool; 2],
    /// Nugget terms Z_ik.
    pub include_nugget: [bool; 2],
    /// Specific processes inside the symmetric bracket nu_k [S_k + T].
    pub include_specific_s: [bool; 2],
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        match self.structure {
            Structure::Univariate => {
                if self.design_dims[0] == 0 {
                    return Err(Error::validation("univariate spec needs a design dimension"));
                }
                if !self.include_s[0] && !self.include_nugget[0] {
                    // a pure regression is still valid for simulation-only use
                }
            }
            Structure::Asymmetric => {
                if self.design_dims[0] == 0 || self.design_dims[1] == 0 {
                    return Err(Error::validation(
                        "asymmetric spec needs design dimensions for both diagnostics",
                    ));
                }
            }
            Structure::Symmetric => {
                if self.design_dims[0] == 0 || self.design_dims[1] == 0 {
                    return Err(Error::validation(
                        "symmetric spec needs design dimensions for both diagnostics",
                    ));
                }
            }
        }
        Ok(())
    }

    /// Number of diagnostics with data slots in this structure.
    pub fn n_diagnostics(&self) -> usize {
        match self.structure {
            Structure::Univariate => 1,
            _ => 2,
        }
    }
}

/// Canonical spec constructors.
pub mod specs {
    use super::*;

    /// Standard geostatistical model W = S + Z for one diagnostic.
    pub fn univariate(design_dim: usize, link: LinkFunction) -> ModelSpec {
        ModelSpec {
            structure: Structure::Univariate,
            links: [link, link],
            design_dims: [design_dim, 0],
            include_s: [true, false],
            include_nugget: [true, false],
            include_specific_s: [false, false],
        }
    }

    /// Asymmetric structure without a gold-standard spatial process
    /// (diagnostic 2 residual variation is nugget-only).
    pub fn asymmetric_model1(design_dim: usize, links: LinkPair) -> ModelSpec {
        ModelSpec {
            structure: Structure::Asymmetric,
            links: [links.0, links.1],
            design_dims: [design_dim, design_dim],
            include_s: [true, false],
            include_nugget: [true, true],
            include_specific_s: [false, false],
        }
    }

    /// Asymmetric structure with a gold-standard spatial process S_2.
    pub fn asymmetric_model2(design_dim: usize, links: LinkPair) -> ModelSpec {
        ModelSpec {
            include_s: [true, true],
            ..asymmetric_model1(design_dim, links)
        }
    }

    /// Symmetric structure with only the shared process (no specific
    /// processes, no nuggets).
    pub fn symmetric_shared(design_dims: [usize; 2], links: LinkPair) -> ModelSpec {
        ModelSpec {
            structure: Structure::Symmetric,
            links: [links.0, links.1],
            design_dims,
            include_s: [false, false],
            include_nugget: [false, false],
            include_specific_s: [false, false],
        }
    }
}

/// One aggregated binomial observation: `y` positives of `n` examined at a
/// site, with its regression design vector (leading 1 for the intercept).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyRecord {
    pub site: usize,
    pub n: u32,
    pub y: u32,
    pub design: Vec<f64>,
}

/// Survey data for up to two diagnostics over a shared site list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurveyDataset {
    sites: Vec<Location>,
    records: [Vec<SurveyRecord>; 2],
}

impl SurveyDataset {
    pub fn new(sites: Vec<Location>, records: [Vec<SurveyRecord>; 2]) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::validation("dataset: no sites"));
        }
        for l in &sites {
            if !l.x.is_finite() || !l.y.is_finite() {
                return Err(Error::validation("dataset: non-finite site coordinate"));
            }
        }
        for (k, recs) in records.iter().enumerate() {
            let mut dim: Option<usize> = None;
            for (r_idx, r) in recs.iter().enumerate() {
                if r.n == 0 {
                    return Err(Error::validation(format!(
                        "dataset: diagnostic {} record {} has n = 0 (records must have n >= 1)",
                        k + 1,
                        r_idx
                    )));
                }
                if r.y > r.n {
                    return Err(Error::validation(format!(
                        "dataset: diagnostic {} record {} has y = {} > n = {}",
                        k + 1,
                        r_idx,
                        r.y,
                        r.n
                    )));
                }
                if r.site >= sites.len() {
                    return Err(Error::validation(format!(
                        "dataset: diagnostic {} record {} references site {} of {}",
                        k + 1,
                        r_idx,
                        r.site,
                        sites.len()
                    )));
                }
                match dim {
                    None => dim = Some(r.design.len()),
                    Some(d) if d != r.design.len() => {
                        return Err(Error::validation(format!(
                            "dataset: diagnostic {} has mixed design lengths ({} vs {})",
                            k + 1,
                            d,
                            r.design.len()
                        )))
                    }
                    _ => {}
                }
                if r.design.iter().any(|v| !v.is_finite()) {
                    return Err(Error::validation(format!(
                        "dataset: diagnostic {} record {} has non-finite covariates",
                        k + 1,
                        r_idx
                    )));
                }
            }
        }
        Ok(SurveyDataset { sites, records })
    }

    pub fn sites(&self) -> &[Location] {
        &self.sites
    }

    pub fn records(&self, diag: usize) -> &[SurveyRecord] {
        &self.records[diag]
    }

    pub fn design_dim(&self, diag: usize) -> usize {
        self.records[diag].first().map(|r| r.design.len()).unwrap_or(0)
    }

    /// Sorted unique site indices with records for diagnostic `diag`.
    pub fn diag_sites(&self, diag: usize) -> Vec<usize> {
        let mut s: Vec<usize> = self.records[diag].iter().map(|r| r.site).collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Sorted unique site indices with any record.
    pub fn active_sites(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self
            .records
            .iter()
            .flat_map(|recs| recs.iter().map(|r| r.site))
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    /// Keep only diagnostic `diag`, remapped into the first slot. Site list
    /// and indices are preserved so latent fields stay aligned.
    pub fn restrict_to_diagnostic(&self, diag: usize) -> SurveyDataset {
        SurveyDataset {
            sites: self.sites.clone(),
            records: [self.records[diag].clone(), Vec::new()],
        }
    }

    /// Consistency of a dataset with a spec (design dimensions and record
    /// presence per structure).
    pub fn check_spec(&self, spec: &ModelSpec) -> Result<()> {
        spec.validate()?;
        for k in 0..spec.n_diagnostics() {
            if self.records[k].is_empty() {
                return Err(Error::validation(format!(
                    "dataset: no records for diagnostic {}",
                    k + 1
                )));
            }
            let dim = self.design_dim(k);
            if dim != spec.design_dims[k] {
                return Err(Error::validation(format!(
                    "dataset: diagnostic {} design dimension {} does not match spec {}",
                    k + 1,
                    dim,
                    spec.design_dims[k]
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn loc(x: f64, y: f64) -> Location {
        Location { x, y }
    }

    fn rec(site: usize, n: u32, y: u32) -> SurveyRecord {
        SurveyRecord { site, n, y, design: vec![1.0] }
    }

    #[test]
    fn rejects_zero_examined() {
        let err = SurveyDataset::new(vec![loc(0.0, 0.0)], [vec![rec(0, 0, 0)], vec![]]);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_more_positive_than_examined() {
        let err = SurveyDataset::new(vec![loc(0.0, 0.0)], [vec![rec(0, 3, 4)], vec![]]);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_out_of_range_site() {
        let err = SurveyDataset::new(vec![loc(0.0, 0.0)], [vec![rec(1, 3, 1)], vec![]]);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_mixed_design_lengths() {
        let bad = SurveyRecord { site: 0, n: 2, y: 1, design: vec![1.0, 2.0] };
        let err = SurveyDataset::new(vec![loc(0.0, 0.0)], [vec![rec(0, 2, 1), bad], vec![]]);
        assert!(err.is_err());
    }

    #[test]
    fn diag_sites_sorted_unique() {
        let ds = SurveyDataset::new(
            vec![loc(0.0, 0.0), loc(1.0, 0.0), loc(2.0, 0.0)],
            [vec![rec(2, 5, 1), rec(0, 5, 2), rec(2, 4, 0)], vec![rec(1, 5, 3)]],
        )
        .unwrap();
        assert_eq!(ds.diag_sites(0), vec![0, 2]);
        assert_eq!(ds.diag_sites(1), vec![1]);
        assert_eq!(ds.active_sites(), vec![0, 1, 2]);
    }

    #[test]
    fn restriction_preserves_sites() {
        let ds = SurveyDataset::new(
            vec![loc(0.0, 0.0), loc(1.0, 0.0)],
            [vec![rec(0, 5, 1)], vec![rec(1, 5, 3)]],
        )
        .unwrap();
        let one = ds.restrict_to_diagnostic(1);
        assert_eq!(one.sites().len(), 2);
        assert_eq!(one.records(0)[0].site, 1);
        assert!(one.records(1).is_empty());
    }
}
