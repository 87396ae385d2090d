//! Piecewise-linear spline bases for covariate effects.

use crate::error::{Error, Result};

/// Default elevation knots in metres.
pub const ELEVATION_KNOTS: (f64, f64) = (750.0, 1015.0);

/// Age-spline knot in years.
pub const AGE_KNOT: f64 = 5.0;

/// Three-term piecewise-linear basis in elevation with knots (e1, e2):
/// (min(e, e1), I(e > e1) * min(e - e1, e2 - e1), max(e - e2, 0)).
///
/// The middle term ramps from 0 at e1 to (e2 - e1) at e2 and stays constant
/// above, so the basis is continuous at both knots and the three
/// coefficients read as slopes below e1, between the knots, and above e2.
pub fn elevation_spline(e: f64, knots: (f64, f64)) -> Result<[f64; 3]> {
    if !e.is_finite() {
        return Err(Error::validation(format!("elevation must be finite, got {e}")));
    }
    let (e1, e2) = knots;
    if !(e1.is_finite() && e2.is_finite() && e2 > e1) {
        return Err(Error::validation(format!(
            "elevation knots must be finite with e2 > e1, got ({e1}, {e2})"
        )));
    }
    let b1 = e.min(e1);
    let b2 = if e > e1 { (e - e1).min(e2 - e1) } else { 0.0 };
    let b3 = (e - e2).max(0.0);
    Ok([b1, b2, b3])
}

/// Two-term linear spline in age with a knot at 5 years:
/// (min(a, 5), max(a - 5, 0)).
pub fn age_spline(a: f64) -> Result<[f64; 2]> {
    if !a.is_finite() || a < 0.0 {
        return Err(Error::validation(format!("age must be finite and >= 0, got {a}")));
    }
    Ok([a.min(AGE_KNOT), (a - AGE_KNOT).max(0.0)])
}
