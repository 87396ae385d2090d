//! Small statistical helpers shared across modules.

/// log(sum(exp(v))) with max shift.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = v.iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

/// log(mean(exp(v))); exactly 0 when all entries are 0.
pub fn log_mean_exp(v: &[f64]) -> f64 {
    log_sum_exp(v) - (v.len() as f64).ln()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Linear-interpolation quantile on the (m+1) positions convention
/// (exclusive / Hyndman-Fan type 6); slightly wider tails than type 7,
/// which keeps small-M Monte Carlo envelopes honest.
pub fn quantile_type6(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty slice");
    let h = p * (n as f64 + 1.0);
    if h <= 1.0 {
        return sorted[0];
    }
    if h >= n as f64 {
        return sorted[n - 1];
    }
    let k = h.floor() as usize; // 1-based lower index
    let frac = h - k as f64;
    sorted[k - 1] + frac * (sorted[k] - sorted[k - 1])
}

/// Central interval [lower, upper] at level `level` from unsorted samples.
pub fn central_interval(samples: &mut [f64], level: f64) -> (f64, f64) {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = 0.5 * (1.0 - level);
    (
        quantile_type6(samples, alpha),
        quantile_type6(samples, 1.0 - alpha),
    )
}

/// Effective sample size of normalized importance weights given log-weights.
pub fn effective_sample_size(log_w: &[f64]) -> f64 {
    let lse = log_sum_exp(log_w);
    let sum_sq: f64 = log_w.iter().map(|lw| (2.0 * (lw - lse)).exp()).sum();
    1.0 / sum_sq
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn log_mean_exp_of_zeros_is_exactly_zero() {
        let v = vec![0.0; 137];
        assert_eq!(log_mean_exp(&v), 0.0);
    }

    #[test]
    fn log_sum_exp_matches_direct() {
        let v = [0.1f64, -0.3, 2.0];
        let direct: f64 = v.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert_abs_diff_eq!(log_sum_exp(&v), direct, epsilon = 1e-12);
    }

    #[test]
    fn ess_uniform_weights() {
        let lw = vec![-1.2; 50];
        assert_abs_diff_eq!(effective_sample_size(&lw), 50.0, epsilon = 1e-9);
    }

    #[test]
    fn ess_degenerate_weight() {
        let mut lw = vec![-100.0; 10];
        lw[0] = 0.0;
        assert_abs_diff_eq!(effective_sample_size(&lw), 1.0, epsilon = 1e-6);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_abs_diff_eq!(quantile_type6(&v, 0.5), 2.5, epsilon = 1e-12);
        assert_eq!(quantile_type6(&v, 0.0), 1.0);
        assert_eq!(quantile_type6(&v, 1.0), 4.0);
    }
}
