//! Sample summaries and the two-sample Kolmogorov-Smirnov statistic.

use serde::{Deserialize, Serialize};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; absent below two samples.
    pub se: Option<f64>,
}

impl MeanSe {
    /// Summarizes `xs` in iteration order (two-pass, so results do not depend
    /// on how the samples were produced).
    pub fn of<I>(xs: I) -> Option<MeanSe>
    where
        I: IntoIterator<Item = f64>,
        I::IntoIter: Clone,
    {
        let it = xs.into_iter();
        let mut n = 0usize;
        let mut sum = 0.0;
        for x in it.clone() {
            n += 1;
            sum += x;
        }
        if n == 0 {
            return None;
        }
        let mean = sum / n as f64;
        let se = if n >= 2 {
            let ss: f64 = it.map(|x| (x - mean) * (x - mean)).sum();
            Some((ss / (n - 1) as f64 / n as f64).sqrt())
        } else {
            None
        };
        Some(MeanSe { n, mean, se })
    }

    pub fn variance(&self) -> Option<f64> {
        self.se.map(|se| se * se * self.n as f64)
    }

    pub fn se_or_zero(&self) -> f64 {
        self.se.unwrap_or(0.0)
    }
}

/// `sqrt(a² + b²)` for two independent standard errors.
pub fn joint_se(a: f64, b: f64) -> f64 {
    a.hypot(b)
}

/// Two-sample Kolmogorov-Smirnov statistic `sup_t |F_x(t) - F_y(t)|`.
pub fn ks_two_sample(xs: &[f64], ys: &[f64]) -> f64 {
    assert!(!xs.is_empty() && !ys.is_empty(), "KS needs non-empty samples");
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic critical value of the two-sample KS statistic at level `alpha`:
/// `c(alpha) * sqrt((n + m) / (n m))` with `c(alpha) = sqrt(-ln(alpha / 2) / 2)`.
pub fn ks_critical_value(alpha: f64, n: usize, m: usize) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    let (n, m) = (n as f64, m as f64);
    c * ((n + m) / (n * m)).sqrt()
}

/// Empirical quantile (lower, nearest-rank) of an unsorted sample.
pub fn quantile(xs: &[f64], q: f64) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((q.clamp(0.0, 1.0) * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Some(v[k - 1])
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn mean_se_basic() {
        let m = MeanSe::of([1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.n, 4);
        assert_relative_eq!(m.mean, 2.5);
        // sd = sqrt(5/3)
        assert_relative_eq!(m.se.unwrap(), (5.0f64 / 3.0).sqrt() / 2.0, max_relative = 1e-12);
        assert!(MeanSe::of(std::iter::empty::<f64>()).is_none());
        assert!(MeanSe::of([3.0]).unwrap().se.is_none());
    }

    #[test]
    fn ks_known_values() {
        assert_eq!(ks_two_sample(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ks_two_sample(&[1.0, 2.0], &[5.0, 6.0]), 1.0);
        // F_x jumps to 1/2 at 1 while F_y is still 0
        assert_relative_eq!(ks_two_sample(&[1.0, 3.0], &[2.0, 4.0]), 0.5);
        // ties across samples are processed together
        assert_relative_eq!(ks_two_sample(&[1.0, 1.0, 2.0], &[1.0, 2.0, 2.0]), 1.0 / 3.0);
    }

    #[test]
    fn ks_critical_value_table() {
        // c(0.05) = 1.3581, c(0.01) = 1.6276
        assert_relative_eq!(ks_critical_value(0.05, 1, 1) / 2f64.sqrt(), 1.3581, max_relative = 1e-4);
        assert_relative_eq!(ks_critical_value(0.01, 1, 1) / 2f64.sqrt(), 1.6276, max_relative = 1e-4);
    }

    #[test]
    fn quantile_nearest_rank() {
        let xs = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(quantile(&xs, 0.6), Some(3.0));
        assert_eq!(quantile(&xs, 0.0), Some(1.0));
        assert_eq!(quantile(&xs, 1.0), Some(5.0));
    }

    #[test]
    fn slope_of_line() {
        let pts: Vec<_> = (0..5).map(|i| (i as f64, 2.0 - 0.5 * i as f64)).collect();
        assert_relative_eq!(ols_slope(&pts).unwrap(), -0.5, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn ks_symmetric_and_bounded(
            xs in prop::collection::vec(-10.0f64..10.0, 1..40),
            ys in prop::collection::vec(-10.0f64..10.0, 1..40),
        ) {
            let d = ks_two_sample(&xs, &ys);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d, ks_two_sample(&ys, &xs));
        }

        #[test]
        fn ks_invariant_under_monotone_map(
            xs in prop::collection::vec(0.0f64..20.0, 1..40),
            ys in prop::collection::vec(0.0f64..20.0, 1..40),
        ) {
            let fx: Vec<f64> = xs.iter().map(|x| -(-x).exp()).collect();
            let fy: Vec<f64> = ys.iter().map(|x| -(-x).exp()).collect();
            prop_assert!((ks_two_sample(&xs, &ys) - ks_two_sample(&fx, &fy)).abs() < 1e-12);
        }
    }
}
