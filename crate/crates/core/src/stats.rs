//! Small numerical helpers shared across modules.

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n - 1 denominator).
pub fn sample_var(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Linear-interpolation quantile on a copy of the data (R type 7).
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    assert!(!xs.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&p));
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    v[lo] + (v[hi] - v[lo]) * frac
}

pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// log(sum(exp(xs))) without overflow.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Effective sample size of a chain via Geyer's initial positive sequence:
/// autocovariances are summed in consecutive pairs until a pair goes
/// non-positive.
pub fn ess(chain: &[f64]) -> f64 {
    let n = chain.len();
    if n < 4 {
        return n as f64;
    }
    let m = mean(chain);
    let c0 = chain.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return n as f64;
    }
    let acov = |lag: usize| -> f64 {
        chain[..n - lag]
            .iter()
            .zip(&chain[lag..])
            .map(|(a, b)| (a - m) * (b - m))
            .sum::<f64>()
            / n as f64
    };
    let mut sum_pairs = 0.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = acov(lag) + acov(lag + 1);
        if pair <= 0.0 {
            break;
        }
        sum_pairs += pair;
        lag += 2;
    }
    let denom = c0 + 2.0 * sum_pairs;
    (n as f64 * c0 / denom).min(n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quantile_interpolates() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(median(&xs), 2.5);
        assert_relative_eq!(quantile(&xs, 0.0), 1.0);
        assert_relative_eq!(quantile(&xs, 1.0), 4.0);
        assert_relative_eq!(quantile(&xs, 0.25), 1.75);
    }

    #[test]
    fn quantiles_are_monotone_in_p() {
        let xs: Vec<f64> = (0..37).map(|i| ((i * 7919) % 101) as f64).collect();
        let ps = [0.05, 0.16, 0.5, 0.84, 0.95];
        let qs: Vec<f64> = ps.iter().map(|&p| quantile(&xs, p)).collect();
        for w in qs.windows(2) {
            assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn log_sum_exp_matches_naive_and_survives_extremes() {
        let xs: [f64; 3] = [-1.0, 0.5, 2.0];
        let naive = xs.iter().map(|x| x.exp()).sum::<f64>().ln();
        assert_relative_eq!(log_sum_exp(&xs), naive, max_relative = 1e-12);
        // far in the tail the naive version underflows, the stabilized one is exact
        let tail = [-800.0, -801.0];
        let expected = -800.0 + (1.0 + (-1.0f64).exp()).ln();
        assert_relative_eq!(log_sum_exp(&tail), expected, max_relative = 1e-12);
    }

    #[test]
    fn ess_of_white_noise_near_n() {
        use rand::Rng;
        let mut rng = crate::rng::stream(0, "ess-test");
        let xs: Vec<f64> = (0..4000).map(|_| rng.gen::<f64>() - 0.5).collect();
        let e = ess(&xs);
        assert!(e > 2500.0, "white noise ESS {e} unexpectedly low");
    }

    #[test]
    fn ess_detects_strong_autocorrelation() {
        use rand::Rng;
        let mut rng = crate::rng::stream(1, "ess-ar");
        let mut xs = vec![0.0f64; 4000];
        for t in 1..4000 {
            xs[t] = 0.95 * xs[t - 1] + rng.gen::<f64>() - 0.5;
        }
        let e = ess(&xs);
        assert!(e < 1000.0, "AR(0.95) ESS {e} unexpectedly high");
    }
}
