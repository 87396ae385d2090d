//! Latent-vector layout: which random effects are active, over which sites,
//! and where they live in the stacked latent vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, ParamName, ParameterVector, Structure, SurveyDataset};

/// A spatial field identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatentField {
    /// Diagnostic-specific process S_k (0-based diagnostic).
    S(usize),
    /// Shared unit-variance process T.
    T,
    /// Nugget Z_k (0-based diagnostic).
    Z(usize),
}

/// One block of the stacked latent vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentComponent {
    pub field: LatentField,
    /// Site indices (into the dataset site list) carrying a value, sorted.
    pub support: Vec<usize>,
    /// Offset of this block in the stacked vector.
    pub offset: usize,
}

impl LatentComponent {
    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Position in the stacked vector of the value at dataset site `site`.
    pub fn position_of(&self, site: usize) -> Option<usize> {
        self.support.binary_search(&site).ok().map(|i| self.offset + i)
    }

    pub fn is_spatial(&self) -> bool {
        !matches!(self.field, LatentField::Z(_))
    }
}

/// Stacked layout of all active latent components for a (spec, dataset) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentLayout {
    pub components: Vec<LatentComponent>,
    pub total_dim: usize,
}

impl LatentLayout {
    /// Derive the layout. Spatial components live on the union of sites that
    /// need them; nuggets live on the sites with records for their
    /// diagnostic. In the asymmetric structure the diagnostic-1 chain
    /// (S_1, Z_1) must exist wherever diagnostic 2 is observed because the
    /// gold-standard predictor embeds the full diagnostic-1 predictor.
    pub fn for_model(spec: &ModelSpec, data: &SurveyDataset) -> LatentLayout {
        let mut components = Vec::new();
        let mut offset = 0usize;
        let push = |field: LatentField, support: Vec<usize>, offset: &mut usize,
                        components: &mut Vec<LatentComponent>| {
            if support.is_empty() {
                return;
            }
            let len = support.len();
            components.push(LatentComponent { field, support, offset: *offset });
            *offset += len;
        };

        match spec.structure {
            Structure::Univariate => {
                let support = data.diag_sites(0);
                if spec.include_s[0] {
                    push(LatentField::S(0), support.clone(), &mut offset, &mut components);
                }
                if spec.include_nugget[0] {
                    push(LatentField::Z(0), support, &mut offset, &mut components);
                }
            }
            Structure::Asymmetric => {
                let union = data.active_sites();
                if spec.include_s[0] {
                    push(LatentField::S(0), union.clone(), &mut offset, &mut components);
                }
                if spec.include_nugget[0] {
                    push(LatentField::Z(0), union, &mut offset, &mut components);
                }
                let gold = data.diag_sites(1);
                if spec.include_s[1] {
                    push(LatentField::S(1), gold.clone(), &mut offset, &mut components);
                }
                if spec.include_nugget[1] {
                    push(LatentField::Z(1), gold, &mut offset, &mut components);
                }
            }
            Structure::Symmetric => {
                let union = data.active_sites();
                push(LatentField::T, union, &mut offset, &mut components);
                for k in 0..2 {
                    if spec.include_specific_s[k] {
                        push(LatentField::S(k), data.diag_sites(k), &mut offset, &mut components);
                    }
                }
                for k in 0..2 {
                    if spec.include_nugget[k] {
                        push(LatentField::Z(k), data.diag_sites(k), &mut offset, &mut components);
                    }
                }
            }
        }
        LatentLayout { components, total_dim: offset }
    }

    pub fn component(&self, field: LatentField) -> Option<&LatentComponent> {
        self.components.iter().find(|c| c.field == field)
    }
}

/// Values of the stacked latent vector for a given layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentState {
    pub layout: LatentLayout,
    pub values: Vec<f64>,
}

impl LatentState {
    pub fn zeros(layout: LatentLayout) -> Self {
        let values = vec![0.0; layout.total_dim];
        LatentState { layout, values }
    }

    pub fn new(layout: LatentLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_dim {
            return Err(Error::validation(format!(
                "latent state dimension {} does not match layout {}",
                values.len(),
                layout.total_dim
            )));
        }
        Ok(LatentState { layout, values })
    }

    /// Value of `field` at dataset site `site`, or 0 when inactive there.
    pub fn value_at(&self, field: LatentField, site: usize) -> f64 {
        self.layout
            .component(field)
            .and_then(|c| c.position_of(site))
            .map(|p| self.values[p])
            .unwrap_or(0.0)
    }

    pub fn component_slice(&self, field: LatentField) -> Option<&[f64]> {
        self.layout
            .component(field)
            .map(|c| &self.values[c.offset..c.offset + c.len()])
    }
}

/// Residuals W_k(x_i) on the linear-predictor scale at each site with
/// records for diagnostic k, as `(site, w)` pairs.
///
/// Univariate: W = S + Z. Symmetric: W_k = nu_k (S_k + T) + Z_k.
/// Asymmetric: W_1 = S_1 + Z_1 and W_2 = S_2 + Z_2 + alpha * eta_1, where
/// eta_1 is the full diagnostic-1 predictor built from the (per-site)
/// design of the first diagnostic-2 record at the site.
pub fn assemble_w(
    spec: &ModelSpec,
    params: &ParameterVector,
    data: &SurveyDataset,
    latent: &LatentState,
) -> Result<[Vec<(usize, f64)>; 2]> {
    let mut out: [Vec<(usize, f64)>; 2] = [Vec::new(), Vec::new()];
    match spec.structure {
        Structure::Univariate => {
            for site in data.diag_sites(0) {
                let w = latent.value_at(LatentField::S(0), site)
                    + latent.value_at(LatentField::Z(0), site);
                out[0].push((site, w));
            }
        }
        Structure::Symmetric => {
            for k in 0..2 {
                let nu = params.value(ParamName::Nu2(k))?.sqrt();
                for site in data.diag_sites(k) {
                    let w = nu
                        * (latent.value_at(LatentField::S(k), site)
                            + latent.value_at(LatentField::T, site))
                        + latent.value_at(LatentField::Z(k), site);
                    out[k].push((site, w));
                }
            }
        }
        Structure::Asymmetric => {
            for site in data.diag_sites(0) {
                let w = latent.value_at(LatentField::S(0), site)
                    + latent.value_at(LatentField::Z(0), site);
                out[0].push((site, w));
            }
            let alpha = params.value(ParamName::Alpha)?;
            let beta1 = params.beta(0);
            for site in data.diag_sites(1) {
                let design = data
                    .records(1)
                    .iter()
                    .find(|r| r.site == site)
                    .map(|r| r.design.as_slice())
                    .expect("diag_sites only lists sites with records");
                let eta1 = dot(design, &beta1)
                    + latent.value_at(LatentField::S(0), site)
                    + latent.value_at(LatentField::Z(0), site);
                let w = latent.value_at(LatentField::S(1), site)
                    + latent.value_at(LatentField::Z(1), site)
                    + alpha * eta1;
                out[1].push((site, w));
            }
        }
    }
    Ok(out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}
