//! Model parameters with transform metadata for unconstrained optimization.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Structure};

/// Identifies one scalar parameter. Diagnostics are 0-based in code and
/// rendered 1-based for reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamName {
    /// Regression coefficient `index` for diagnostic `diag`.
    Beta { diag: usize, index: usize },
    /// Variance of the diagnostic-specific spatial process S_k.
    Sigma2(usize),
    /// Scale of the diagnostic-specific spatial process S_k.
    Phi(usize),
    /// Nugget variance for diagnostic k.
    Tau2(usize),
    /// Cross-diagnostic slope of the asymmetric structure.
    Alpha,
    /// Squared loading of the shared process for diagnostic k.
    Nu2(usize),
    /// Scale of the shared process T.
    PhiT,
}

impl fmt::Display for ParamName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamName::Beta { diag, index } => write!(f, "beta{}[{}]", diag + 1, index),
            ParamName::Sigma2(k) => write!(f, "sigma2_{}", k + 1),
            ParamName::Phi(k) => write!(f, "phi_{}", k + 1),
            ParamName::Tau2(k) => write!(f, "tau2_{}", k + 1),
            ParamName::Alpha => write!(f, "alpha"),
            ParamName::Nu2(k) => write!(f, "nu2_{}", k + 1),
            ParamName::PhiT => write!(f, "phi_T"),
        }
    }
}

/// Transform applied to obtain the unconstrained optimization scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Transform {
    Identity,
    Log,
}

impl Transform {
    pub fn to_unconstrained(&self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Log => v.ln(),
        }
    }

    pub fn to_natural(&self, t: f64) -> f64 {
        match self {
            Transform::Identity => t,
            Transform::Log => t.exp(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamEntry {
    name: ParamName,
    value: f64,
    transform: Transform,
    fixed: bool,
}

/// All parameters of a model, ordered by the spec-derived layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterVector {
    entries: Vec<ParamEntry>,
}

fn layout(spec: &ModelSpec) -> Vec<(ParamName, Transform)> {
    let mut out = Vec::new();
    let diags: &[usize] = match spec.structure {
        Structure::Univariate => &[0],
        _ => &[0, 1],
    };
    for &k in diags {
        for j in 0..spec.design_dims[k] {
            out.push((ParamName::Beta { diag: k, index: j }, Transform::Identity));
        }
    }
    match spec.structure {
        Structure::Univariate => {
            if spec.include_s[0] {
                out.push((ParamName::Sigma2(0), Transform::Log));
                out.push((ParamName::Phi(0), Transform::Log));
            }
            if spec.include_nugget[0] {
                out.push((ParamName::Tau2(0), Transform::Log));
            }
        }
        Structure::Asymmetric => {
            for k in 0..2 {
                if spec.include_s[k] {
                    out.push((ParamName::Sigma2(k), Transform::Log));
                    out.push((ParamName::Phi(k), Transform::Log));
                }
                if spec.include_nugget[k] {
                    out.push((ParamName::Tau2(k), Transform::Log));
                }
            }
            out.push((ParamName::Alpha, Transform::Identity));
        }
        Structure::Symmetric => {
            for k in 0..2 {
                out.push((ParamName::Nu2(k), Transform::Log));
            }
            out.push((ParamName::PhiT, Transform::Log));
            for k in 0..2 {
                if spec.include_specific_s[k] {
                    out.push((ParamName::Sigma2(k), Transform::Log));
                    out.push((ParamName::Phi(k), Transform::Log));
                }
                if spec.include_nugget[k] {
                    out.push((ParamName::Tau2(k), Transform::Log));
                }
            }
        }
    }
    out
}

impl ParameterVector {
    /// Layout for `spec` with neutral starting values: betas 0, alpha 0,
    /// variances and scales 1.
    pub fn for_spec(spec: &ModelSpec) -> Self {
        let entries = layout(spec)
            .into_iter()
            .map(|(name, transform)| ParamEntry {
                name,
                value: match transform {
                    Transform::Identity => 0.0,
                    Transform::Log => 1.0,
                },
                transform,
                fixed: false,
            })
            .collect();
        ParameterVector { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = ParamName> + '_ {
        self.entries.iter().map(|e| e.name)
    }

    pub fn contains(&self, name: ParamName) -> bool {
        self.entries.iter().any(|e| e.name == name)
    }

    pub fn value(&self, name: ParamName) -> Result<f64> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.value)
            .ok_or_else(|| Error::validation(format!("parameter {name} not in model layout")))
    }

    /// Value if the parameter exists in this layout, else `default`.
    pub fn value_or(&self, name: ParamName, default: f64) -> f64 {
        self.value(name).unwrap_or(default)
    }

    pub fn set(&mut self, name: ParamName, value: f64) -> Result<&mut Self> {
        let e = self
            .entries
            .iter_mut()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::validation(format!("parameter {name} not in model layout")))?;
        e.value = value;
        Ok(self)
    }

    /// Builder-style `set` that panics on a name outside the layout.
    pub fn with(mut self, name: ParamName, value: f64) -> Self {
        self.set(name, value).expect("parameter in layout");
        self
    }

    pub fn fix(&mut self, name: ParamName) -> Result<()> {
        let e = self
            .entries
            .iter_mut()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::validation(format!("parameter {name} not in model layout")))?;
        e.fixed = true;
        Ok(())
    }

    pub fn unfix(&mut self, name: ParamName) -> Result<()> {
        let e = self
            .entries
            .iter_mut()
            .find(|e| e.name == name)
            .ok_or_else(|| Error::validation(format!("parameter {name} not in model layout")))?;
        e.fixed = false;
        Ok(())
    }

    pub fn is_fixed(&self, name: ParamName) -> bool {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| e.fixed)
            .unwrap_or(false)
    }

    pub fn transform_of(&self, name: ParamName) -> Option<Transform> {
        self.entries.iter().find(|e| e.name == name).map(|e| e.transform)
    }

    /// Regression coefficients for diagnostic `diag`, in index order.
    pub fn beta(&self, diag: usize) -> Vec<f64> {
        let mut out: Vec<(usize, f64)> = self
            .entries
            .iter()
            .filter_map(|e| match e.name {
                ParamName::Beta { diag: d, index } if d == diag => Some((index, e.value)),
                _ => None,
            })
            .collect();
        out.sort_by_key(|&(i, _)| i);
        out.into_iter().map(|(_, v)| v).collect()
    }

    /// Positivity of log-transformed parameters and finiteness of all.
    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if !e.value.is_finite() {
                return Err(Error::validation(format!("parameter {} not finite", e.name)));
            }
            if e.transform == Transform::Log && !(e.value > 0.0) {
                return Err(Error::validation(format!(
                    "parameter {} must be positive, got {}",
                    e.name, e.value
                )));
            }
        }
        Ok(())
    }

    /// Names of non-fixed parameters, in layout order.
    pub fn free_names(&self) -> Vec<ParamName> {
        self.entries.iter().filter(|e| !e.fixed).map(|e| e.name).collect()
    }

    /// Non-fixed parameters on the unconstrained scale.
    pub fn free_transformed(&self) -> Vec<f64> {
        self.entries
            .iter()
            .filter(|e| !e.fixed)
            .map(|e| e.transform.to_unconstrained(e.value))
            .collect()
    }

    /// Replace non-fixed parameters from unconstrained values.
    pub fn with_free_transformed(&self, free: &[f64]) -> Self {
        let mut out = self.clone();
        let mut it = free.iter();
        for e in out.entries.iter_mut() {
            if !e.fixed {
                let t = it.next().expect("free vector matches layout");
                e.value = e.transform.to_natural(*t);
            }
        }
        assert!(it.next().is_none(), "free vector longer than layout");
        out
    }

    /// Max |difference| on the unconstrained scale over non-fixed parameters.
    pub fn transformed_distance_inf(&self, other: &ParameterVector) -> f64 {
        self.free_transformed()
            .iter()
            .zip(other.free_transformed().iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::specs;

    #[test]
    fn asymmetric_layout_has_expected_parameters() {
        let spec = specs::asymmetric_model2(4, LinkPair::default());
        let p = ParameterVector::for_spec(&spec);
        for name in [
            ParamName::Sigma2(0),
            ParamName::Phi(0),
            ParamName::Tau2(0),
            ParamName::Sigma2(1),
            ParamName::Phi(1),
            ParamName::Tau2(1),
            ParamName::Alpha,
        ] {
            assert!(p.contains(name), "missing {name}");
        }
        assert_eq!(p.beta(0).len(), 4);
        assert_eq!(p.beta(1).len(), 4);
    }

    use crate::model::LinkPair;

    #[test]
    fn round_trip_free_transformed() {
        let spec = specs::asymmetric_model1(1, LinkPair::default());
        let mut p = ParameterVector::for_spec(&spec);
        p.set(ParamName::Sigma2(0), 2.5).unwrap();
        p.set(ParamName::Alpha, 1.017).unwrap();
        p.fix(ParamName::Alpha).unwrap();
        let free = p.free_transformed();
        let q = p.with_free_transformed(&free);
        for name in p.names() {
            assert_eq!(p.value(name).unwrap(), q.value(name).unwrap());
        }
        // alpha not in free set
        assert_eq!(free.len(), p.len() - 1);
    }

    #[test]
    fn validate_rejects_nonpositive_variance() {
        let spec = specs::univariate(1, LinkFunction::Logit);
        let mut p = ParameterVector::for_spec(&spec);
        p.set(ParamName::Sigma2(0), -1.0).unwrap();
        assert!(p.validate().is_err());
    }

    use crate::model::LinkFunction;

    #[test]
    fn display_names() {
        assert_eq!(ParamName::Beta { diag: 0, index: 2 }.to_string(), "beta1[2]");
        assert_eq!(ParamName::Sigma2(1).to_string(), "sigma2_2");
        assert_eq!(ParamName::PhiT.to_string(), "phi_T");
    }
}
