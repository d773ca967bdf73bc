//! Small numerical-statistics helpers shared by estimators, experiments and
//! the test suite.

use std::collections::BTreeMap;

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Standard error of the sample mean.
pub fn standard_error(xs: &[f64]) -> f64 {
    (sample_variance(xs) / xs.len() as f64).sqrt()
}

/// Median (average of the middle pair for even lengths).
pub fn median(xs: &[f64]) -> f64 {
    let mut v: Vec<f64> = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN in median input"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Pearson correlation coefficient.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Two-sided standard-normal quantile for a confidence level, e.g.
/// `0.95 -> 1.95996...`.
pub fn normal_quantile_two_sided(level: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    normal.inverse_cdf(0.5 + level / 2.0)
}

/// Empirical distribution of integer-valued samples.
pub fn empirical_distribution(samples: &[u32]) -> BTreeMap<u32, f64> {
    let n = samples.len() as f64;
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    for &s in samples {
        *counts.entry(s).or_insert(0.0) += 1.0;
    }
    for v in counts.values_mut() {
        *v /= n;
    }
    counts
}

/// Total-variation distance between two distributions on the integers.
pub fn tv_distance(p: &BTreeMap<u32, f64>, q: &BTreeMap<u32, f64>) -> f64 {
    let mut keys: Vec<u32> = p.keys().chain(q.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    0.5 * keys
        .iter()
        .map(|k| (p.get(k).unwrap_or(&0.0) - q.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

/// Two-sample Pearson chi-square test on integer samples.
///
/// Cells are pooled from the right until every pooled cell holds at least
/// `min_expected` observations combined. Returns the p-value.
pub fn chi_square_two_sample(xs: &[u32], ys: &[u32], min_expected: f64) -> f64 {
    let mut counts: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
    for &x in xs {
        counts.entry(x).or_insert((0.0, 0.0)).0 += 1.0;
    }
    for &y in ys {
        counts.entry(y).or_insert((0.0, 0.0)).1 += 1.0;
    }
    // Pool adjacent cells so each pooled cell has enough mass.
    let mut pooled: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for &(a, b) in counts.values() {
        acc.0 += a;
        acc.1 += b;
        if acc.0 + acc.1 >= min_expected {
            pooled.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc != (0.0, 0.0) {
        match pooled.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => pooled.push(acc),
        }
    }
    if pooled.len() < 2 {
        return 1.0;
    }
    let n1: f64 = pooled.iter().map(|c| c.0).sum();
    let n2: f64 = pooled.iter().map(|c| c.1).sum();
    let mut stat = 0.0;
    for &(a, b) in &pooled {
        let total = a + b;
        let e1 = total * n1 / (n1 + n2);
        let e2 = total * n2 / (n1 + n2);
        stat += (a - e1).powi(2) / e1 + (b - e2).powi(2) / e2;
    }
    let dof = (pooled.len() - 1) as f64;
    let chi = ChiSquared::new(dof).expect("positive dof");
    1.0 - chi.cdf(stat)
}

/// Anderson–Darling statistic against N(mu, sigma) with estimated moments,
/// with the usual small-sample factor `(1 + 4/n - 25/n^2)`.
///
/// The alpha = 0.01 critical value of the adjusted statistic is 1.035.
pub fn anderson_darling_normal(xs: &[f64]) -> f64 {
    let n = xs.len();
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    let m = mean(&v);
    let sd = sample_variance(&v).sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut a2 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let z = (x - m) / sd;
        let phi = normal.cdf(z).clamp(1e-300, 1.0 - 1e-16);
        let phi_rev = normal
            .cdf((v[n - 1 - i] - m) / sd)
            .clamp(1e-300, 1.0 - 1e-16);
        a2 += (2.0 * (i as f64) + 1.0) * (phi.ln() + (1.0 - phi_rev).ln());
    }
    let nf = n as f64;
    let raw = -nf - a2 / nf;
    raw * (1.0 + 4.0 / nf - 25.0 / (nf * nf))
}

/// Critical value of the adjusted Anderson–Darling statistic at alpha = 0.01.
pub const AD_CRITICAL_001: f64 = 1.035;
