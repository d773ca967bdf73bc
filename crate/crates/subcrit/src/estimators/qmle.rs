//! Maximum likelihood treating the observations as a Q-process path.
//!
//! The Q-process is a birth-and-death chain with total birth rate
//! `lambda (r - 1 + m)` and death rate `mu (r - 1)` at population `r`. Its
//! continuous-observation MLEs give joint estimators of `(lambda, mu, m)`:
//! the death rate decouples (`mu = d_t / (tau_t - t)`), while the offspring
//! mean solves the scalar fixed-point equation
//!
//! ```text
//! x = 1 - tau_t / t + b_t / sum_r (b_r / (r - 1 + x))
//! ```
//!
//! with `b_r` the birth count from state `r`. With a finite offspring
//! support the constrained MLE is closed-form instead and also returns the
//! tilted-corrected probabilities.

use crate::trajectory::SufficientStats;

use super::EstimatorError;

/// Joint rate estimates via the scalar fixed point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QmleFixedPoint {
    pub lambda: f64,
    pub mu: f64,
    pub m: f64,
    pub iterations: u64,
    /// `|x - F(x)|` at the returned point.
    pub residual: f64,
}

/// Joint estimates from the finite-support constrained MLE.
#[derive(Debug, Clone, PartialEq)]
pub struct QmleFiniteSupport {
    pub lambda: f64,
    /// `None` when `tau_t <= t`.
    pub mu: Option<f64>,
    /// Normalised offspring probabilities (sum to 1 exactly).
    pub pk: Vec<(u32, f64)>,
    /// Mean of `pk`.
    pub m: f64,
}

/// Solves the Q-process MLE system with `m` found by bracketed bisection
/// plus a Newton polish.
pub fn qmle_fixed_point(stats: &SufficientStats) -> Result<QmleFixedPoint, EstimatorError> {
    let t = stats.t;
    let tau = stats.lifetime;
    if tau <= t {
        return Err(EstimatorError::DegenerateExposure { tau, t });
    }
    if stats.births == 0 {
        return Err(EstimatorError::NoBirths);
    }
    let b_total = stats.births as f64;
    // Birth counts by source state, summed over offspring sizes.
    let by_state: Vec<(f64, f64)> = {
        let mut acc: std::collections::BTreeMap<u32, u64> = Default::default();
        for (&(r, _), &c) in &stats.births_by_state_size {
            *acc.entry(r).or_insert(0) += c;
        }
        acc.into_iter()
            .map(|(r, c)| (f64::from(r), c as f64))
            .collect()
    };
    let max_size = stats
        .births_by_size
        .keys()
        .max()
        .copied()
        .unwrap_or(2)
        .max(2);

    let fixed_point_map = |x: f64| -> f64 {
        let s: f64 = by_state.iter().map(|&(r, c)| c / (r - 1.0 + x)).sum();
        1.0 - tau / t + b_total / s
    };
    let gap = |x: f64| x - fixed_point_map(x);

    // All positive rates require x > max(0, 1 - tau/t); cap at the largest
    // observed offspring count plus slack.
    let lo0 = (1.0 - tau / t).max(0.0) + 1e-9;
    let hi0 = f64::from(max_size) + 10.0;
    let (mut lo, mut hi) = (lo0, hi0);
    let (glo, ghi) = (gap(lo), gap(hi));
    if !(glo > 0.0 && ghi < 0.0) {
        return Err(EstimatorError::NoFixedPoint {
            detail: format!("no sign change on ({lo0:.6}, {hi0:.6}): g = ({glo:.3e}, {ghi:.3e})"),
        });
    }
    let mut iterations = 0u64;
    for _ in 0..200 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if gap(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 * (1.0 + hi.abs()) {
            break;
        }
    }
    let mut x = 0.5 * (lo + hi);
    // Newton polish on g(x) = x - F(x).
    for _ in 0..8 {
        iterations += 1;
        let s: f64 = by_state.iter().map(|&(r, c)| c / (r - 1.0 + x)).sum();
        let s_prime: f64 = by_state
            .iter()
            .map(|&(r, c)| -c / (r - 1.0 + x).powi(2))
            .sum();
        let g = x - (1.0 - tau / t + b_total / s);
        let g_prime = 1.0 + b_total * s_prime / (s * s);
        if g_prime.abs() < 1e-14 {
            break;
        }
        let next = x - g / g_prime;
        if next.is_finite() && next > lo0 && next < hi0 {
            x = next;
        } else {
            break;
        }
    }
    let residual = gap(x).abs();
    if residual >= 1e-10 {
        return Err(EstimatorError::NoFixedPoint {
            detail: format!("residual {residual:.3e} at x = {x}"),
        });
    }
    Ok(QmleFixedPoint {
        lambda: b_total / (tau + (x - 1.0) * t),
        mu: stats.deaths as f64 / (tau - t),
        m: x,
        iterations,
        residual,
    })
}

/// Constrained finite-support MLE:
/// `pk_k proportional to b_{k,t} / (tau + (k-1) t)`,
/// `lambda = sum_k b_{k,t} / (tau + (k-1) t)`, `mu = d_t / (tau - t)`,
/// `m = sum_k k pk_k`.
pub fn qmle_finite_support(
    stats: &SufficientStats,
    support: &[u32],
) -> Result<QmleFiniteSupport, EstimatorError> {
    let t = stats.t;
    let tau = stats.lifetime;
    let weights: Vec<(u32, f64)> = support
        .iter()
        .map(|&k| {
            let b_k = stats.births_by_size.get(&k).copied().unwrap_or(0) as f64;
            (k, b_k / (tau + (f64::from(k) - 1.0) * t))
        })
        .collect();
    let lambda: f64 = weights.iter().map(|&(_, w)| w).sum();
    if !(lambda > 0.0) {
        return Err(EstimatorError::NoBirths);
    }
    let pk: Vec<(u32, f64)> = weights
        .into_iter()
        .map(|(k, w)| (k, w / lambda))
        .collect();
    let m = pk.iter().map(|&(k, p)| f64::from(k) * p).sum();
    let mu = (tau > t).then(|| stats.deaths as f64 / (tau - t));
    Ok(QmleFiniteSupport { lambda, mu, pk, m })
}
