//! Planar coordinates, pairwise distances and prediction grids.
//!
//! Coordinates are projected planar kilometres throughout; the engine does no
//! geodesy. Scale parameters of the spatial processes are only interpretable
//! on a metric scale, so any projection must happen during data preparation.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in projected planar kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::validation(format!(
                "location coordinates must be finite, got ({x}, {y})"
            )));
        }
        Ok(Location { x, y })
    }

    pub fn distance_to(&self, other: &Location) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

/// Symmetric matrix of pairwise Euclidean distances (kilometres).
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    d: Array2<f64>,
}

impl DistanceMatrix {
    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[[i, j]]
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.d
    }

    pub fn max(&self) -> f64 {
        self.d.iter().cloned().fold(0.0, f64::max)
    }
}

/// Pairwise Euclidean distances; symmetric with a zero diagonal.
pub fn distance_matrix(locations: &[Location]) -> Result<DistanceMatrix> {
    if locations.is_empty() {
        return Err(Error::validation("distance_matrix: no locations"));
    }
    for (i, l) in locations.iter().enumerate() {
        if !l.x.is_finite() || !l.y.is_finite() {
            return Err(Error::validation(format!(
                "distance_matrix: non-finite coordinate at index {i}"
            )));
        }
    }
    let n = locations.len();
    let mut d = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let dist = locations[i].distance_to(&locations[j]);
            d[[i, j]] = dist;
            d[[j, i]] = dist;
        }
    }
    Ok(DistanceMatrix { d })
}

/// Rectangular prediction grid addressed by cell centres.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub cell: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        let vals = [self.x_min, self.x_max, self.y_min, self.y_max, self.cell];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("grid: non-finite bounds or cell size"));
        }
        if self.cell <= 0.0 {
            return Err(Error::validation("grid: cell size must be positive"));
        }
        if self.x_max <= self.x_min || self.y_max <= self.y_min {
            return Err(Error::validation("grid: degenerate bounding box"));
        }
        Ok(())
    }
}

/// Cell-centre locations in row-major order (y outer from y_min, x inner).
pub fn make_grid(spec: &GridSpec) -> Result<Vec<Location>> {
    make_grid_masked(spec, |_| true)
}

/// As [`make_grid`], excluding centres for which `include` returns false.
pub fn make_grid_masked<F: Fn(&Location) -> bool>(
    spec: &GridSpec,
    include: F,
) -> Result<Vec<Location>> {
    spec.validate()?;
    let nx = ((spec.x_max - spec.x_min) / spec.cell).ceil() as usize;
    let ny = ((spec.y_max - spec.y_min) / spec.cell).ceil() as usize;
    let mut out = Vec::with_capacity(nx * ny);
    for iy in 0..ny {
        let y = spec.y_min + (iy as f64 + 0.5) * spec.cell;
        if y >= spec.y_max {
            break;
        }
        for ix in 0..nx {
            let x = spec.x_min + (ix as f64 + 0.5) * spec.cell;
            if x >= spec.x_max {
                break;
            }
            let loc = Location { x, y };
            if include(&loc) {
                out.push(loc);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::validation("grid: empty after masking"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn loc(x: f64, y: f64) -> Location {
        Location { x, y }
    }

    #[test]
    fn three_four_five_triangle() {
        let d = distance_matrix(&[loc(0.0, 0.0), loc(3.0, 4.0)]).unwrap();
        assert_abs_diff_eq!(d.get(0, 1), 5.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.get(1, 0), 5.0, epsilon = 1e-15);
    }

    #[test]
    fn single_point() {
        let d = distance_matrix(&[loc(1.0, 1.0)]).unwrap();
        assert_eq!(d.n(), 1);
        assert_eq!(d.get(0, 0), 0.0);
    }

    #[test]
    fn collinear_points() {
        let d = distance_matrix(&[loc(0.0, 0.0), loc(1.0, 0.0), loc(2.0, 0.0)]).unwrap();
        assert_abs_diff_eq!(d.get(0, 2), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.get(0, 1), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.get(1, 2), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(distance_matrix(&[loc(f64::NAN, 0.0)]).is_err());
        assert!(Location::new(f64::INFINITY, 0.0).is_err());
    }

    #[test]
    fn grid_two_by_two() {
        let spec = GridSpec {
            x_min: 0.0,
            x_max: 2.0,
            y_min: 0.0,
            y_max: 2.0,
            cell: 1.0,
        };
        let g = make_grid(&spec).unwrap();
        assert_eq!(
            g,
            vec![loc(0.5, 0.5), loc(1.5, 0.5), loc(0.5, 1.5), loc(1.5, 1.5)]
        );
    }

    #[test]
    fn grid_single_cell() {
        let spec = GridSpec {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
            cell: 1.0,
        };
        assert_eq!(make_grid(&spec).unwrap(), vec![loc(0.5, 0.5)]);
    }

    #[test]
    fn grid_masked() {
        let spec = GridSpec {
            x_min: 0.0,
            x_max: 2.0,
            y_min: 0.0,
            y_max: 1.0,
            cell: 1.0,
        };
        let g = make_grid_masked(&spec, |l| l.x <= 1.0).unwrap();
        assert_eq!(g, vec![loc(0.5, 0.5)]);
    }

    #[test]
    fn grid_empty_after_mask_errors() {
        let spec = GridSpec {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
            cell: 1.0,
        };
        assert!(make_grid_masked(&spec, |_| false).is_err());
    }

    #[test]
    fn grid_rejects_bad_specs() {
        let bad_cell = GridSpec {
            x_min: 0.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
            cell: 0.0,
        };
        assert!(make_grid(&bad_cell).is_err());
        let degenerate = GridSpec {
            x_min: 1.0,
            x_max: 1.0,
            y_min: 0.0,
            y_max: 1.0,
            cell: 0.5,
        };
        assert!(make_grid(&degenerate).is_err());
    }

    proptest! {
        #[test]
        fn distances_symmetric_nonnegative_zero_diag(
            pts in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..30)
        ) {
            let locs: Vec<Location> = pts.iter().map(|&(x, y)| loc(x, y)).collect();
            let d = distance_matrix(&locs).unwrap();
            for i in 0..locs.len() {
                prop_assert_eq!(d.get(i, i), 0.0);
                for j in 0..locs.len() {
                    prop_assert!(d.get(i, j) >= 0.0);
                    prop_assert_eq!(d.get(i, j), d.get(j, i));
                }
            }
        }

        #[test]
        fn permutation_permutes_distances(
            pts in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..20),
            shift in 0usize..20
        ) {
            let locs: Vec<Location> = pts.iter().map(|&(x, y)| loc(x, y)).collect();
            let n = locs.len();
            let k = shift % n;
            let perm: Vec<usize> = (0..n).map(|i| (i + k) % n).collect();
            let permuted: Vec<Location> = perm.iter().map(|&i| locs[i]).collect();
            let d = distance_matrix(&locs).unwrap();
            let dp = distance_matrix(&permuted).unwrap();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(dp.get(i, j), d.get(perm[i], perm[j]));
                }
            }
        }
    }
}
