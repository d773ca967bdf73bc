//! Parameter estimators from a continuously observed trajectory.
//!
//! Classical maximum-likelihood estimators (`b_t / tau_t`, `d_t / tau_t`)
//! converge, on surviving subcritical paths, to the Q-process analogues of
//! the rates rather than to the rates themselves. The corrected estimators
//! subtract the contribution of the immortal line: one individual that never
//! dies and births at the inflated rate `lambda m`,
//!
//! ```text
//! lambda~ = b_t / (tau_t + (m - 1) t)      mu~ = d_t / (tau_t - t)
//! ```
//!
//! and analogously for offspring probabilities. This module also carries the
//! joint estimators that do not assume a known offspring mean: the
//! delta-skeleton system ([`skeleton`]) and the Q-process MLEs ([`qmle`]).

pub mod qmle;
pub mod skeleton;

pub use qmle::{qmle_finite_support, qmle_fixed_point, QmleFiniteSupport, QmleFixedPoint};
pub use skeleton::{
    extract_skeleton, skeleton_estimators, skeleton_moments, SkeletonFit, SkeletonMode,
    SkeletonMoments,
};

use std::fmt;

use thiserror::Error;

use crate::stats::normal_quantile_two_sided;
use crate::trajectory::SufficientStats;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    /// No exposure (`tau_t = 0`); ratios undefined.
    #[error("zero cumulative lifetime")]
    ZeroExposure,
    /// `tau_t <= t`: corrected death-rate denominators are non-positive.
    #[error("degenerate exposure: tau = {tau} with t = {t}")]
    DegenerateExposure { tau: f64, t: f64 },
    /// No birth events observed.
    #[error("no birth events in the observation window")]
    NoBirths,
    /// The skeleton regression carries no information.
    #[error("degenerate skeleton: {reason}")]
    SkeletonDegenerate { reason: String },
    /// The joint skeleton system could not be solved.
    #[error("Newton failed after {iterations} iterations (residual {residual:.3e})")]
    NewtonNoConvergence { iterations: u64, residual: f64 },
    /// The Q-process mean equation has no root in the bracket.
    #[error("no fixed point: {detail}")]
    NoFixedPoint { detail: String },
}

/// Which estimator produced a report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EstimatorId {
    MleClassic,
    CConsistent,
    PkHat,
    PkTilde,
    PkTildePlugin,
    PkMultinomial,
    Skeleton,
    QmleFixedPoint,
    QmleFiniteSupport,
}

impl fmt::Display for EstimatorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EstimatorId::MleClassic => "mle_classic",
            EstimatorId::CConsistent => "c_consistent",
            EstimatorId::PkHat => "pk_hat",
            EstimatorId::PkTilde => "pk_tilde",
            EstimatorId::PkTildePlugin => "pk_tilde_plugin",
            EstimatorId::PkMultinomial => "pk_multinomial",
            EstimatorId::Skeleton => "skeleton",
            EstimatorId::QmleFixedPoint => "qmle_fixed_point",
            EstimatorId::QmleFiniteSupport => "qmle_finite_support",
        };
        f.write_str(s)
    }
}

/// Classical MLEs `(b_t / tau_t, d_t / tau_t)`.
pub fn mle_classic(stats: &SufficientStats) -> Result<(f64, f64), EstimatorError> {
    if stats.lifetime <= 0.0 {
        return Err(EstimatorError::ZeroExposure);
    }
    Ok((
        stats.births as f64 / stats.lifetime,
        stats.deaths as f64 / stats.lifetime,
    ))
}

/// Corrected rate estimates; `mu` is `None` on paths with `tau_t <= t`
/// (possible on short windows), never a clamped number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectedRates {
    pub lambda: f64,
    pub mu: Option<f64>,
    /// `tau_t / t` diagnostic (the occupation estimate of the stationary
    /// mean).
    pub tau_over_t: f64,
}

/// Bias-corrected estimators for a known offspring mean `m`.
pub fn c_consistent(stats: &SufficientStats, m: f64) -> Result<CorrectedRates, EstimatorError> {
    let t = stats.t;
    let lambda_denom = stats.lifetime + (m - 1.0) * t;
    if lambda_denom <= 0.0 {
        return Err(EstimatorError::ZeroExposure);
    }
    let mu_denom = stats.lifetime - t;
    let mu = (mu_denom > 0.0).then(|| stats.deaths as f64 / mu_denom);
    Ok(CorrectedRates {
        lambda: stats.births as f64 / lambda_denom,
        mu,
        tau_over_t: if t > 0.0 {
            stats.lifetime / t
        } else {
            f64::NAN
        },
    })
}

/// How the birth rate enters the corrected offspring-probability estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaMode {
    /// The true birth rate is known.
    Known(f64),
    /// Replace `lambda` by its corrected estimate; requires the offspring
    /// mean.
    Plugin { m: f64 },
}

/// Classical and corrected estimates of a single offspring probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PkEstimates {
    /// `b_{k,t} / b_t`.
    pub p_hat: f64,
    /// `b_{k,t} / (lambda [tau_t + (k - 1) t])`, with `lambda` per mode.
    pub p_tilde: f64,
}

/// Estimates `p_k` for one offspring count `k`.
pub fn pk_estimators(
    stats: &SufficientStats,
    k: u32,
    mode: LambdaMode,
) -> Result<PkEstimates, EstimatorError> {
    if stats.births == 0 {
        return Err(EstimatorError::NoBirths);
    }
    let b_k = stats.births_by_size.get(&k).copied().unwrap_or(0) as f64;
    let p_hat = b_k / stats.births as f64;
    let exposure_k = stats.lifetime + (f64::from(k) - 1.0) * stats.t;
    if exposure_k <= 0.0 {
        return Err(EstimatorError::ZeroExposure);
    }
    let lambda = match mode {
        LambdaMode::Known(lambda) => lambda,
        LambdaMode::Plugin { m } => {
            stats.births as f64 / (stats.lifetime + (m - 1.0) * stats.t)
        }
    };
    Ok(PkEstimates {
        p_hat,
        p_tilde: b_k / (lambda * exposure_k),
    })
}

/// Jointly normalised offspring-probability estimates over a finite support:
/// `(b_{k,t} / [tau + (k-1) t]) / sum_l (b_{l,t} / [tau + (l-1) t])`.
/// The output sums to 1 exactly.
pub fn pk_multinomial(
    stats: &SufficientStats,
    support: &[u32],
) -> Result<Vec<(u32, f64)>, EstimatorError> {
    let weights: Vec<(u32, f64)> = support
        .iter()
        .map(|&k| {
            let b_k = stats.births_by_size.get(&k).copied().unwrap_or(0) as f64;
            (k, b_k / (stats.lifetime + (f64::from(k) - 1.0) * stats.t))
        })
        .collect();
    let total: f64 = weights.iter().map(|&(_, w)| w).sum();
    if !(total > 0.0) {
        return Err(EstimatorError::NoBirths);
    }
    Ok(weights.into_iter().map(|(k, w)| (k, w / total)).collect())
}

/// A point estimate with optional normal-theory uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: Option<f64>,
    pub ci: Option<(f64, f64)>,
}

impl Estimate {
    pub fn point(value: f64) -> Self {
        Self {
            value,
            se: None,
            ci: None,
        }
    }

    fn with_se(value: f64, se: f64, z: f64) -> Self {
        Self {
            value,
            se: Some(se),
            ci: Some((value - z * se, value + z * se)),
        }
    }
}

/// Normal-theory intervals for the corrected rate estimators.
///
/// Asymptotic variances: `Var(lambda~) = lambda / (t (pi_up + m - 1))` and
/// `Var(mu~) = mu / (t (pi_up - 1))`; since `lambda < mu` in the subcritical
/// regime, the `lambda` interval is always the narrower one. Plug-in values
/// (estimates or true parameters) enter both the variance and `pi_up`.
/// Returns `None` when the plugged parameters are not subcritical, so no
/// `pi_up` exists.
pub fn rate_intervals(
    lambda: f64,
    mu: f64,
    m: f64,
    sigma2: f64,
    t: f64,
    level: f64,
) -> Option<RateIntervals> {
    let rho = lambda * (m - 1.0) - mu;
    if !(rho < 0.0) || t <= 0.0 || lambda <= 0.0 || mu <= 0.0 {
        return None;
    }
    let pi_up = 1.0 - lambda * (sigma2 + m * (m - 1.0)) / rho;
    let z = normal_quantile_two_sided(level);
    let se_lambda = (lambda / (t * (pi_up + m - 1.0))).sqrt();
    let se_mu = (mu / (t * (pi_up - 1.0))).sqrt();
    Some(RateIntervals {
        pi_up,
        lambda: Estimate::with_se(lambda, se_lambda, z),
        mu: Estimate::with_se(mu, se_mu, z),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateIntervals {
    /// The plug-in Q-process stationary mean used in the variances.
    pub pi_up: f64,
    pub lambda: Estimate,
    pub mu: Estimate,
}

/// Normal-theory interval for a corrected offspring probability:
/// `Var(p_k~) = p_k / (t lambda (pi_up + k - 1))`.
pub fn pk_interval(p_k: f64, k: u32, lambda: f64, pi_up: f64, t: f64, level: f64) -> Estimate {
    let var = p_k / (t * lambda * (pi_up + f64::from(k) - 1.0));
    if !(var >= 0.0) || t <= 0.0 {
        return Estimate::point(p_k);
    }
    Estimate::with_se(p_k, var.sqrt(), normal_quantile_two_sided(level))
}

/// Flat per-trajectory estimation record, one CSV row per report.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub estimator: EstimatorId,
    pub horizon: f64,
    pub lambda: Option<Estimate>,
    pub mu: Option<Estimate>,
    pub m: Option<Estimate>,
    pub sigma2: Option<Estimate>,
    /// Offspring probability estimates by `k`.
    pub pk: Vec<(u32, Estimate)>,
    /// `tau_t / t` diagnostic.
    pub tau_over_t: Option<f64>,
    /// Iterations of the fixed-point or Newton solver, when one ran.
    pub solver_iterations: Option<u64>,
    /// Set when `mu` was undefined because `tau_t <= t`.
    pub mu_undefined: bool,
}

impl EstimateReport {
    pub fn new(estimator: EstimatorId, horizon: f64) -> Self {
        Self {
            estimator,
            horizon,
            lambda: None,
            mu: None,
            m: None,
            sigma2: None,
            pk: Vec::new(),
            tau_over_t: None,
            solver_iterations: None,
            mu_undefined: false,
        }
    }

    /// CSV header matching [`csv_row`](Self::csv_row) for a fixed support.
    pub fn csv_header(support: &[u32]) -> String {
        let mut cols = vec![
            "estimator".to_string(),
            "t".into(),
            "tau_over_t".into(),
            "solver_iterations".into(),
            "mu_undefined".into(),
        ];
        for name in ["lambda", "mu", "m", "sigma2"] {
            cols.push(name.to_string());
            cols.push(format!("{name}_se"));
            cols.push(format!("{name}_lo"));
            cols.push(format!("{name}_hi"));
        }
        for &k in support {
            cols.push(format!("p{k}"));
            cols.push(format!("p{k}_se"));
            cols.push(format!("p{k}_lo"));
            cols.push(format!("p{k}_hi"));
        }
        cols.join(",")
    }

    /// One flat row; absent values serialise as empty cells.
    pub fn csv_row(&self, support: &[u32]) -> String {
        fn push_estimate(cols: &mut Vec<String>, e: Option<&Estimate>) {
            match e {
                Some(e) => {
                    cols.push(format!("{}", e.value));
                    cols.push(e.se.map(|v| format!("{v}")).unwrap_or_default());
                    let (lo, hi) = e.ci.map(|(a, b)| (Some(a), Some(b))).unwrap_or((None, None));
                    cols.push(lo.map(|v| format!("{v}")).unwrap_or_default());
                    cols.push(hi.map(|v| format!("{v}")).unwrap_or_default());
                }
                None => cols.extend(std::iter::repeat(String::new()).take(4)),
            }
        }
        let mut cols = vec![
            self.estimator.to_string(),
            format!("{}", self.horizon),
            self.tau_over_t.map(|v| format!("{v}")).unwrap_or_default(),
            self.solver_iterations
                .map(|v| format!("{v}"))
                .unwrap_or_default(),
            if self.mu_undefined { "1".into() } else { "0".into() },
        ];
        push_estimate(&mut cols, self.lambda.as_ref());
        push_estimate(&mut cols, self.mu.as_ref());
        push_estimate(&mut cols, self.m.as_ref());
        push_estimate(&mut cols, self.sigma2.as_ref());
        for &k in support {
            let found = self.pk.iter().find(|&&(kk, _)| kk == k).map(|(_, e)| e);
            push_estimate(&mut cols, found);
        }
        cols.join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{EventKind, Trajectory};

    pub(crate) fn synthetic_stats(
        t: f64,
        tau: f64,
        births: &[(u32, u32, u64)], // (state, k, count)
        deaths: u64,
    ) -> SufficientStats {
        let mut stats = SufficientStats {
            t,
            z0: 1,
            births: 0,
            deaths,
            lifetime: tau,
            births_by_size: Default::default(),
            occupation: Default::default(),
            births_by_state_size: Default::default(),
            deaths_by_state: Default::default(),
            max_state: 1,
        };
        for &(r, k, c) in births {
            stats.births += c;
            *stats.births_by_size.entry(k).or_insert(0) += c;
            *stats.births_by_state_size.entry((r, k)).or_insert(0) += c;
            stats.max_state = stats.max_state.max(r);
        }
        *stats.deaths_by_state.entry(1).or_insert(0) += deaths;
        stats
    }

    #[test]
    fn classical_mle_ratios() {
        let stats = synthetic_stats(1.0, 2.0, &[(1, 2, 6)], 3);
        let (l, m) = mle_classic(&stats).unwrap();
        assert_eq!((l, m), (3.0, 1.5));
        let none = synthetic_stats(1.0, 0.0, &[], 0);
        assert!(matches!(
            mle_classic(&none),
            Err(EstimatorError::ZeroExposure)
        ));
        let no_births = synthetic_stats(1.0, 2.0, &[], 3);
        assert_eq!(mle_classic(&no_births).unwrap().0, 0.0);
    }

    #[test]
    fn corrected_rates_hand_example() {
        // b=10, d=5, tau=4, t=2, m=2 -> lambda~ = 10/6, mu~ = 5/2.
        let stats = synthetic_stats(2.0, 4.0, &[(1, 2, 10)], 5);
        let c = c_consistent(&stats, 2.0).unwrap();
        assert!((c.lambda - 10.0 / 6.0).abs() < 1e-15);
        assert_eq!(c.mu, Some(2.5));
    }

    #[test]
    fn corrected_rates_collapse_at_t_zero() {
        let stats = synthetic_stats(0.0, 2.0, &[(1, 2, 6)], 3);
        let c = c_consistent(&stats, 2.7).unwrap();
        let (l_hat, m_hat) = mle_classic(&stats).unwrap();
        assert_eq!(c.lambda, l_hat);
        assert_eq!(c.mu, Some(m_hat));
    }

    #[test]
    fn corrected_mu_undefined_when_tau_below_t() {
        let stats = synthetic_stats(3.0, 2.0, &[(1, 2, 1)], 1);
        let c = c_consistent(&stats, 2.0).unwrap();
        assert_eq!(c.mu, None);
    }

    #[test]
    fn corrected_and_classical_are_algebraically_linked() {
        // lambda~ = tau/(tau + (m-1) t) lambda^ and mu~ = tau/(tau - t) mu^.
        let stats = synthetic_stats(2.0, 7.0, &[(2, 2, 11), (2, 3, 4)], 9);
        let m = 2.43;
        let (l_hat, m_hat) = mle_classic(&stats).unwrap();
        let c = c_consistent(&stats, m).unwrap();
        let tau = stats.lifetime;
        let t = stats.t;
        assert!((c.lambda - tau / (tau + (m - 1.0) * t) * l_hat).abs() < 1e-14);
        assert!((c.mu.unwrap() - tau / (tau - t) * m_hat).abs() < 1e-14);
        // Directional bias correction.
        assert!(c.lambda <= l_hat);
        assert!(c.mu.unwrap() >= m_hat);
    }

    #[test]
    fn pk_trivial_and_plugin_identity() {
        let stats = synthetic_stats(2.0, 7.0, &[(1, 3, 5)], 2);
        let est = pk_estimators(&stats, 3, LambdaMode::Known(1.0)).unwrap();
        assert_eq!(est.p_hat, 1.0);
        // Plugin mode equals Known(lambda~) exactly, by algebra.
        let m = 2.9;
        let lambda_tilde = c_consistent(&stats, m).unwrap().lambda;
        let plugin = pk_estimators(&stats, 3, LambdaMode::Plugin { m }).unwrap();
        let known = pk_estimators(&stats, 3, LambdaMode::Known(lambda_tilde)).unwrap();
        assert!((plugin.p_tilde - known.p_tilde).abs() < 1e-15);
        let ratio = (stats.lifetime + (m - 1.0) * stats.t)
            / (stats.lifetime + (3.0 - 1.0) * stats.t);
        assert!((plugin.p_tilde - ratio * plugin.p_hat).abs() < 1e-15);
    }

    #[test]
    fn pk_requires_births() {
        let stats = synthetic_stats(2.0, 7.0, &[], 2);
        assert!(matches!(
            pk_estimators(&stats, 2, LambdaMode::Known(1.0)),
            Err(EstimatorError::NoBirths)
        ));
        assert!(matches!(
            pk_multinomial(&stats, &[2, 3]),
            Err(EstimatorError::NoBirths)
        ));
    }

    #[test]
    fn multinomial_normalises_exactly() {
        let stats = synthetic_stats(3.0, 9.0, &[(1, 2, 7), (2, 3, 2), (3, 4, 4)], 5);
        let pk = pk_multinomial(&stats, &[2, 3, 4]).unwrap();
        let sum: f64 = pk.iter().map(|&(_, p)| p).sum();
        assert_eq!(sum, 1.0);
        // Single support point.
        let single = pk_multinomial(&stats, &[2]).unwrap();
        assert_eq!(single, vec![(2, 1.0)]);
    }

    #[test]
    fn interval_example_values() {
        // Worked example at t = 75: se(lambda~) ~ 0.0531 < se(mu~) ~ 0.0994.
        let iv = rate_intervals(2.0, 5.0, 2.7, 0.81, 75.0, 0.95).unwrap();
        assert!((iv.pi_up - 7.75).abs() < 1e-12);
        assert!((iv.lambda.se.unwrap() - 0.0531).abs() < 2e-4);
        assert!((iv.mu.se.unwrap() - 0.0994).abs() < 2e-4);
        assert!(iv.lambda.se.unwrap() < iv.mu.se.unwrap());
        let (lo, hi) = iv.lambda.ci.unwrap();
        assert!(lo <= 2.0 && 2.0 <= hi);
        // Non-subcritical plug-ins yield no interval.
        assert!(rate_intervals(2.0, 1.0, 2.7, 0.81, 75.0, 0.95).is_none());
    }

    #[test]
    fn csv_round_shape() {
        let mut report = EstimateReport::new(EstimatorId::CConsistent, 75.0);
        report.lambda = Some(Estimate::point(1.99));
        report.mu_undefined = true;
        let header = EstimateReport::csv_header(&[2, 3]);
        let row = report.csv_row(&[2, 3]);
        assert_eq!(header.split(',').count(), row.split(',').count());
        assert!(row.starts_with("c_consistent,75,"));
    }

    #[test]
    fn stats_from_simulated_trajectory_feed_estimators() {
        // End-to-end smoke: a tiny hand trajectory through the whole chain.
        let traj = Trajectory::from_events(
            2,
            4.0,
            [
                (0.5, EventKind::Birth(3)),
                (1.5, EventKind::Death),
                (2.0, EventKind::Birth(2)),
                (3.0, EventKind::Death),
            ],
        )
        .unwrap();
        let stats = traj.stats(4.0).unwrap();
        let (l_hat, _) = mle_classic(&stats).unwrap();
        assert!(l_hat > 0.0);
        let c = c_consistent(&stats, 2.5).unwrap();
        assert!(c.lambda < l_hat);
    }
}

#[cfg(test)]
pub(crate) use tests::synthetic_stats;
