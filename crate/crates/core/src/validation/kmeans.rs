//! Lloyd's algorithm with k-means++ initialization.
//!
//! Input points are canonicalized by lexicographic sort before seeding, so
//! the result is invariant to the order the locations arrive in; centroids
//! come back lexicographically sorted as well.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Location;
use crate::rng;

pub fn kmeans(locations: &[Location], k: usize, seed: u64) -> Result<Vec<Location>> {
    if k == 0 {
        return Err(Error::validation("kmeans: k must be >= 1"));
    }
    let mut pts: Vec<Location> = locations.to_vec();
    pts.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).unwrap());
    let mut distinct = pts.clone();
    distinct.dedup_by(|a, b| a.x == b.x && a.y == b.y);
    if k > distinct.len() {
        return Err(Error::validation(format!(
            "kmeans: k = {k} exceeds the {} distinct locations",
            distinct.len()
        )));
    }

    let mut rng = rng::stream(seed, "kmeans", 0);
    let n = pts.len();
    let d2 = |a: &Location, b: &Location| {
        let dx = a.x - b.x;
        let dy = a.y - b.y;
        dx * dx + dy * dy
    };

    // k-means++ seeding
    let mut centroids: Vec<Location> = Vec::with_capacity(k);
    centroids.push(pts[rng.gen_range(0..n)]);
    let mut dist = vec![0.0f64; n];
    while centroids.len() < k {
        let mut total = 0.0;
        for (i, p) in pts.iter().enumerate() {
            let d = centroids.iter().map(|c| d2(p, c)).fold(f64::INFINITY, f64::min);
            dist[i] = d;
            total += d;
        }
        let next = if total <= 0.0 {
            // all remaining mass on existing centroids; take the first
            // point not already chosen
            pts.iter()
                .position(|p| centroids.iter().all(|c| d2(p, c) > 0.0))
                .unwrap_or(0)
        } else {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, d) in dist.iter().enumerate() {
                if u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        };
        centroids.push(pts[next]);
    }

    // Lloyd iterations until assignments stabilize
    let mut assign = vec![usize::MAX; n];
    for _ in 0..200 {
        let mut changed = false;
        for (i, p) in pts.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, cent) in centroids.iter().enumerate() {
                let d = d2(p, cent);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![(0.0f64, 0.0f64, 0usize); k];
        for (i, p) in pts.iter().enumerate() {
            let s = &mut sums[assign[i]];
            s.0 += p.x;
            s.1 += p.y;
            s.2 += 1;
        }
        for (c, (sx, sy, cnt)) in sums.into_iter().enumerate() {
            if cnt > 0 {
                centroids[c] = Location { x: sx / cnt as f64, y: sy / cnt as f64 };
            }
        }
    }
    centroids.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).unwrap());
    Ok(centroids)
}

/// Within-cluster sum of squares of a clustering (test hook).
pub fn wcss(locations: &[Location], centroids: &[Location]) -> f64 {
    locations
        .iter()
        .map(|p| {
            centroids
                .iter()
                .map(|c| {
                    let dx = p.x - c.x;
                    let dy = p.y - c.y;
                    dx * dx + dy * dy
                })
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn loc(x: f64, y: f64) -> Location {
        Location { x, y }
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let pts = vec![loc(0.0, 0.0), loc(2.0, 0.0), loc(1.0, 3.0)];
        let c = kmeans(&pts, 1, 7).unwrap();
        assert_eq!(c.len(), 1);
        assert_abs_diff_eq!(c[0].x, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c[0].y, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn two_separated_clouds() {
        let mut pts = Vec::new();
        for i in 0..10 {
            pts.push(loc(i as f64 * 0.01, 0.0));
            pts.push(loc(100.0 + i as f64 * 0.01, 5.0));
        }
        let c = kmeans(&pts, 2, 3).unwrap();
        assert_abs_diff_eq!(c[0].x, 0.045, epsilon = 1e-9);
        assert_abs_diff_eq!(c[1].x, 100.045, epsilon = 1e-9);
        assert_abs_diff_eq!(c[1].y, 5.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_k_above_distinct_count() {
        let pts = vec![loc(0.0, 0.0), loc(0.0, 0.0), loc(1.0, 1.0)];
        assert!(kmeans(&pts, 3, 1).is_err());
        assert!(kmeans(&pts, 2, 1).is_ok());
    }

    #[test]
    fn invariant_to_input_order() {
        let pts: Vec<Location> = (0..40)
            .map(|i| loc((i * i % 17) as f64, (i * 3 % 11) as f64))
            .collect();
        let mut rev = pts.clone();
        rev.reverse();
        let a = kmeans(&pts, 5, 11).unwrap();
        let b = kmeans(&rev, 5, 11).unwrap();
        for (ca, cb) in a.iter().zip(b.iter()) {
            assert_eq!((ca.x, ca.y), (cb.x, cb.y));
        }
    }

    #[test]
    fn lloyd_objective_not_worse_than_seeding() {
        let pts: Vec<Location> = (0..60)
            .map(|i| loc(((i * 7) % 23) as f64, ((i * 13) % 29) as f64))
            .collect();
        // final WCSS must be no worse than assigning to any single centroid
        let c = kmeans(&pts, 4, 5).unwrap();
        let final_wcss = wcss(&pts, &c);
        let single = kmeans(&pts, 1, 5).unwrap();
        assert!(final_wcss <= wcss(&pts, &single) + 1e-9);
    }
}
