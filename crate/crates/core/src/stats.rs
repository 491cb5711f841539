//! Statistical test helpers: Kolmogorov-Smirnov statistics and jackknife
//! standard errors for covariance estimates.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

/// One-sample KS statistic of `samples` against the standard normal CDF.
pub fn ks_statistic_normal(samples: &[f64]) -> f64 {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d = 0.0_f64;
    for (i, x) in sorted.iter().enumerate() {
        let f = normal.cdf(*x);
        let hi = (i as f64 + 1.0) / n - f;
        let lo = f - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    d
}

/// Two-sample KS statistic. Tied values (atomic laws) are handled by
/// advancing both samples past each distinct value before comparing the
/// empirical CDFs.
pub fn ks_statistic_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0_f64;
    while i < sa.len() || j < sb.len() {
        let v = match (sa.get(i), sb.get(j)) {
            (Some(x), Some(y)) => x.min(*y),
            (Some(x), None) => *x,
            (None, Some(y)) => *y,
            (None, None) => break,
        };
        while i < sa.len() && sa[i] <= v {
            i += 1;
        }
        while j < sb.len() && sb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic one-sample KS critical value at level `alpha`.
pub fn ks_critical_one_sample(n: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c / (n as f64).sqrt()
}

/// Asymptotic two-sample KS critical value at level `alpha`.
pub fn ks_critical_two_sample(n: usize, m: usize, alpha: f64) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// Sample covariance of `points` (unbiased) together with leave-one-out
/// jackknife standard errors, entry by entry.
///
/// Returns `(cov, se)`. Requires at least three points for the jackknife.
pub fn covariance_with_jackknife(points: &[DVector<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let r = points.len();
    assert!(r >= 3, "jackknife needs at least 3 replicas");
    let d = points[0].len();
    let rf = r as f64;

    let mut s1 = DVector::<f64>::zeros(d);
    let mut s2 = DMatrix::<f64>::zeros(d, d);
    for x in points {
        s1 += x;
        s2 += x * x.transpose();
    }
    let mean = &s1 / rf;
    let cov = (&s2 - &mean * mean.transpose() * rf) / (rf - 1.0);

    // Leave-one-out estimates from the shared sums: O(R d^2) total.
    let mut jack_mean = DMatrix::<f64>::zeros(d, d);
    let mut loo = Vec::with_capacity(r);
    for x in points {
        let m1 = (&s1 - x) / (rf - 1.0);
        let c = (&s2 - x * x.transpose() - &m1 * m1.transpose() * (rf - 1.0)) / (rf - 2.0);
        jack_mean += &c;
        loo.push(c);
    }
    jack_mean /= rf;

    let mut se = DMatrix::<f64>::zeros(d, d);
    for c in &loo {
        let dev = c - &jack_mean;
        se += dev.component_mul(&dev);
    }
    se *= (rf - 1.0) / rf;
    se.apply(|v| *v = v.sqrt());
    (cov, se)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngStream, StreamDomain};

    #[test]
    fn ks_accepts_normal_samples() {
        let mut rng = RngStream::new(7, StreamDomain::Thermal, 0);
        let xs: Vec<f64> = (0..20_000).map(|_| rng.gen_normal()).collect();
        let d = ks_statistic_normal(&xs);
        assert!(d < ks_critical_one_sample(xs.len(), 0.01), "d = {d}");
    }

    #[test]
    fn ks_rejects_shifted_samples() {
        let mut rng = RngStream::new(7, StreamDomain::Thermal, 1);
        let xs: Vec<f64> = (0..20_000).map(|_| rng.gen_normal() + 0.5).collect();
        let d = ks_statistic_normal(&xs);
        assert!(d > ks_critical_one_sample(xs.len(), 0.01));
    }

    #[test]
    fn two_sample_ks_same_distribution() {
        let mut rng = RngStream::new(9, StreamDomain::Thermal, 0);
        let a: Vec<f64> = (0..10_000).map(|_| rng.gen_normal()).collect();
        let b: Vec<f64> = (0..10_000).map(|_| rng.gen_normal()).collect();
        let d = ks_statistic_two_sample(&a, &b);
        assert!(d < ks_critical_two_sample(a.len(), b.len(), 0.01));
    }

    #[test]
    fn jackknife_se_tracks_sampling_noise() {
        // Standard normal in d=2: cov = I, and the diagonal SE should be
        // close to sqrt(2/R).
        let mut rng = RngStream::new(11, StreamDomain::Thermal, 0);
        let r = 4000;
        let pts: Vec<DVector<f64>> = (0..r)
            .map(|_| DVector::from_fn(2, |_, _| rng.gen_normal()))
            .collect();
        let (cov, se) = covariance_with_jackknife(&pts);
        let expect_se = (2.0 / r as f64).sqrt();
        for i in 0..2 {
            assert!((cov[(i, i)] - 1.0).abs() < 4.0 * expect_se);
            assert!((se[(i, i)] - expect_se).abs() < 0.5 * expect_se);
        }
    }
}
