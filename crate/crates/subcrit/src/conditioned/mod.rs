//! Sampling the process conditioned on survival at a fixed horizon.
//!
//! Conditioning on `{Z_t > 0}` makes the chain time-inhomogeneous: at elapsed
//! time `s` and population `z` the jump rates are tilted by survival
//! probabilities of the remaining window,
//!
//! ```text
//! size-k birth:  lambda p_k z (1 - F(t-s)^{z-1+k}) / (1 - F(t-s)^z)
//! death:         mu z (1 - F(t-s)^{z-1}) / (1 - F(t-s)^z)
//! ```
//!
//! with `F` the single-ancestor extinction probability. The total birth rate
//! is non-increasing in `s` and the death rate is bounded by `mu z`, which
//! gives a per-interval dominating constant: [`simulate_exact`] samples the
//! law exactly by thinning. [`simulate_rejection`] is the brute-force
//! baseline and [`simulate_splitting`] the approximate long-horizon sampler;
//! their agreement with the exact sampler is part of the test suite.

mod extinction;
mod splitting;

pub use extinction::{ExtinctionCurve, F_CLIP_MAX};
pub use splitting::{run_splitting, ResamplingRule, SplittingConfig, SplittingEnsemble};

use thiserror::Error;

use crate::model::ModelParams;
use crate::rng::SimRng;
use crate::sim::simulate_with;
use crate::trajectory::{EventKind, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConditionedError {
    /// The extinction ODE could not be integrated to tolerance.
    #[error("extinction solver failed: {detail}")]
    SolverFailure { detail: String },
    /// Rejection sampling exhausted its attempt budget.
    #[error("no surviving path within {attempts} attempts")]
    AttemptsExhausted { attempts: u64 },
    /// Every particle died inside one splitting level.
    #[error("all particles extinct at splitting level {level}")]
    ParticleCollapse { level: usize },
    /// Level times not increasing, horizon mismatch, or zero particles.
    #[error("invalid splitting configuration")]
    BadSplittingConfig,
}

/// Solves the extinction ODE on `[0, t_max]`; see [`ExtinctionCurve`].
pub fn extinction_prob(
    params: &ModelParams,
    t_max: f64,
    tol: f64,
) -> Result<ExtinctionCurve, ConditionedError> {
    ExtinctionCurve::build(params, t_max, tol)
}

/// `1 - F^a` evaluated without cancellation for `F` near 0 or 1.
fn one_minus_pow(f: f64, a: f64) -> f64 {
    if a <= 0.0 {
        return 0.0;
    }
    if f <= 0.0 {
        return 1.0;
    }
    -f64::exp_m1(a * f.ln())
}

/// Jump rates of the conditioned chain at elapsed time `s`, population `z`,
/// horizon `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionedRates {
    /// Per offspring-count birth rates, aligned with the law support.
    pub birth_by_size: Vec<(u32, f64)>,
    /// Sum of the per-size birth rates.
    pub birth_total: f64,
    /// Death rate (zero when `z == 1`: the last individual cannot die given
    /// survival).
    pub death: f64,
}

/// Evaluates the tilted rates. At `s == t` they collapse to the
/// unconditional rates `(lambda p_k z, mu z)`; when `F(t-s)^z` underflows the
/// ratios they converge to, the unconditional limits are used directly.
pub fn conditioned_rates(
    params: &ModelParams,
    curve: &ExtinctionCurve,
    z: u32,
    s: f64,
    t: f64,
) -> ConditionedRates {
    assert!(z >= 1, "conditioned process lives on {{1, 2, ..}}");
    assert!((0.0..=t).contains(&s), "need 0 <= s <= t");
    let f = curve.value(t - s);
    let zf = f64::from(z);
    let lambda = params.lambda();
    let mu = params.mu();
    let denom = one_minus_pow(f, zf);
    let (birth_by_size, death) = if denom <= 0.0 || !denom.is_finite() {
        // F -> 0 limit: the ratios tend to 1, i.e. unconditional rates.
        (
            params
                .offspring()
                .pairs()
                .map(|(k, p)| (k, lambda * p * zf))
                .collect::<Vec<_>>(),
            mu * zf,
        )
    } else {
        (
            params
                .offspring()
                .pairs()
                .map(|(k, p)| {
                    let num = one_minus_pow(f, zf - 1.0 + f64::from(k));
                    (k, lambda * p * zf * num / denom)
                })
                .collect::<Vec<_>>(),
            mu * zf * one_minus_pow(f, zf - 1.0) / denom,
        )
    };
    let birth_total = birth_by_size.iter().map(|&(_, r)| r).sum();
    ConditionedRates {
        birth_by_size,
        birth_total,
        death,
    }
}

/// Exact sample of the conditioned path on `[0, t]` by thinning.
///
/// Builds the extinction curve internally; use
/// [`simulate_exact_with`] to share one curve across replications.
pub fn simulate_exact(
    params: &ModelParams,
    z0: u32,
    t: f64,
    seed: u64,
) -> Result<Trajectory, ConditionedError> {
    let curve = extinction_prob(params, t.max(1e-9), 1e-10)?;
    let mut rng = SimRng::new(seed);
    Ok(simulate_exact_with(params, &curve, z0, t, &mut rng))
}

/// Exact conditioned sample using a pre-built curve covering `[0, t]`.
///
/// The proposal rate on each inter-event interval is the current total birth
/// rate (non-increasing in `s`) plus `mu z` (which dominates the death rate);
/// proposals are accepted with the ratio of the true to the dominating rate.
pub fn simulate_exact_with(
    params: &ModelParams,
    curve: &ExtinctionCurve,
    z0: u32,
    t: f64,
    rng: &mut SimRng,
) -> Trajectory {
    assert!(z0 >= 1);
    assert!(
        curve.t_max() >= t - 1e-9,
        "extinction curve must cover the horizon"
    );
    let mu = params.mu();
    let mut events: Vec<(f64, EventKind)> = Vec::new();
    let mut s = 0.0_f64;
    let mut z = z0;
    // Slack absorbs interpolation-level wiggle in the monotone bound.
    const BOUND_SLACK: f64 = 1.0 + 1e-9;
    loop {
        let here = conditioned_rates(params, curve, z, s, t);
        let bound = here.birth_total * BOUND_SLACK + mu * f64::from(z);
        let proposal = s + rng.exp(bound);
        if proposal >= t {
            break;
        }
        s = proposal;
        let now = conditioned_rates(params, curve, z, s, t);
        let total = now.birth_total + now.death;
        debug_assert!(
            total <= bound * (1.0 + 1e-7),
            "dominating rate violated: {total} > {bound}"
        );
        if rng.uniform() * bound >= total {
            continue; // thinned out
        }
        if rng.uniform() * total < now.death {
            events.push((s, EventKind::Death));
            z -= 1;
        } else {
            let weights: Vec<f64> = now.birth_by_size.iter().map(|&(_, r)| r).collect();
            let idx = rng.pick_weighted(&weights, now.birth_total);
            let k = now.birth_by_size[idx].0;
            events.push((s, EventKind::Birth(k)));
            z = z - 1 + k;
        }
        debug_assert!(z >= 1, "conditioned path can never die out");
    }
    Trajectory::from_events(z0, t, events).expect("thinning produces a well-formed log")
}

/// Baseline sampler: simulate unconditionally and keep the first path alive
/// at `t`. Only usable when the survival probability is non-negligible.
pub fn simulate_rejection(
    params: &ModelParams,
    z0: u32,
    t: f64,
    seed: u64,
    max_attempts: u64,
) -> Result<Trajectory, ConditionedError> {
    let mut rng = SimRng::new(seed);
    simulate_rejection_with(params, z0, t, &mut rng, max_attempts)
}

/// As [`simulate_rejection`] with a caller-owned generator.
pub fn simulate_rejection_with(
    params: &ModelParams,
    z0: u32,
    t: f64,
    rng: &mut SimRng,
    max_attempts: u64,
) -> Result<Trajectory, ConditionedError> {
    for _ in 0..max_attempts {
        let traj = simulate_with(params, z0, t, rng);
        if traj.terminal_state() > 0 {
            return Ok(traj);
        }
    }
    Err(ConditionedError::AttemptsExhausted {
        attempts: max_attempts,
    })
}

/// Approximate conditioned sample via fixed-effort multilevel splitting: one
/// uniformly chosen particle of a [`run_splitting`] ensemble.
pub fn simulate_splitting(
    params: &ModelParams,
    z0: u32,
    t: f64,
    cfg: &SplittingConfig,
    seed: u64,
) -> Result<Trajectory, ConditionedError> {
    let ensemble = run_splitting(params, z0, t, cfg, seed)?;
    let mut rng = SimRng::for_worker(seed, u64::MAX);
    let pick = (rng.uniform() * ensemble.particles.len() as f64) as usize;
    Ok(ensemble
        .particles
        .into_iter()
        .nth(pick.min(cfg.particles_per_level - 1))
        .expect("ensemble is never empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{example_params, ModelParams, OffspringLaw};

    fn binary_params() -> ModelParams {
        ModelParams::new(1.0, 2.0, OffspringLaw::deterministic(2).unwrap()).unwrap()
    }

    /// Linear binary birth-death extinction probability in closed form.
    fn binary_extinction(lambda: f64, mu: f64, t: f64) -> f64 {
        let e = ((lambda - mu) * t).exp();
        mu * (1.0 - e) / (mu - lambda * e)
    }

    #[test]
    fn ode_matches_binary_closed_form() {
        let params = binary_params();
        let curve = extinction_prob(&params, 10.0, 1e-10).unwrap();
        for i in 0..=100 {
            let t = 0.1 * f64::from(i);
            let expect = binary_extinction(1.0, 2.0, t);
            assert!(
                (curve.value(t) - expect).abs() < 1e-8,
                "t = {t}: {} vs {expect}",
                curve.value(t)
            );
        }
    }

    #[test]
    fn curve_invariants() {
        let curve = extinction_prob(&example_params(), 40.0, 1e-10).unwrap();
        assert_eq!(curve.value(0.0), 0.0);
        assert_eq!(curve.value(-1.0), 0.0);
        let mut prev = 0.0;
        for i in 0..=4000 {
            let v = curve.value(0.01 * f64::from(i));
            assert!(v >= prev - 1e-13, "non-monotone at {i}");
            assert!(v < 1.0);
            prev = v;
        }
        // Subcritical: mass goes to 1 eventually.
        assert!(curve.value(40.0) > 0.999999);
    }

    #[test]
    fn rates_collapse_at_horizon() {
        let params = example_params();
        let curve = extinction_prob(&params, 5.0, 1e-10).unwrap();
        for z in [1u32, 2, 7] {
            let rates = conditioned_rates(&params, &curve, z, 5.0, 5.0);
            for &(k, r) in &rates.birth_by_size {
                let expect = params.lambda() * params.offspring().prob(k) * f64::from(z);
                assert!((r - expect).abs() < 1e-12, "k={k}");
            }
            assert!((rates.death - params.mu() * f64::from(z)).abs() < 1e-12);
        }
    }

    #[test]
    fn lone_survivor_cannot_die() {
        let params = example_params();
        let curve = extinction_prob(&params, 5.0, 1e-10).unwrap();
        for i in 0..50 {
            let s = 0.1 * f64::from(i);
            assert_eq!(conditioned_rates(&params, &curve, 1, s, 5.0).death, 0.0);
        }
    }

    #[test]
    fn rates_at_unit_headroom_regression() {
        // Frozen values computed from an independent integration of the
        // extinction ODE at z = 2, one unit of remaining time.
        let params = example_params();
        let curve = extinction_prob(&params, 2.0, 1e-12).unwrap();
        assert!((curve.value(1.0) - 0.938354592417565).abs() < 1e-9);
        let rates = conditioned_rates(&params, &curve, 2, 1.0, 2.0);
        assert!((rates.birth_total - 6.979001572266754).abs() < 1e-6);
        assert!((rates.death - 5.159014784558975).abs() < 1e-6);
        let expect_by_size = [3.490214570096309, 0.752203736444454, 2.7365832657259905];
        for (&(_, r), e) in rates.birth_by_size.iter().zip(expect_by_size) {
            assert!((r - e).abs() < 1e-6);
        }
    }

    #[test]
    fn per_size_rates_sum_to_pgf_form() {
        // lambda z (1 - F^{z-1} P(F)) / (1 - F^z) equals the sum over sizes.
        let params = example_params();
        let curve = extinction_prob(&params, 6.0, 1e-10).unwrap();
        for (z, s) in [(1u32, 2.0), (3, 0.5), (11, 4.0)] {
            let f = curve.value(6.0 - s);
            let rates = conditioned_rates(&params, &curve, z, s, 6.0);
            let zf = f64::from(z);
            let expect = params.lambda() * zf * (1.0 - f.powf(zf - 1.0) * params.offspring().pgf(f).unwrap())
                / (1.0 - f.powf(zf));
            assert!(
                (rates.birth_total - expect).abs() < 1e-9 * expect,
                "z={z} s={s}"
            );
        }
    }

    #[test]
    fn birth_rate_monotone_down_death_rate_monotone_up() {
        let params = example_params();
        let t = 8.0;
        let curve = extinction_prob(&params, t, 1e-10).unwrap();
        for z in [2u32, 5, 23] {
            let mut prev_birth = f64::INFINITY;
            let mut prev_death = -1.0;
            for i in 0..=200 {
                let s = t * f64::from(i) / 200.0;
                let r = conditioned_rates(&params, &curve, z, s, t);
                assert!(r.birth_total <= prev_birth * (1.0 + 1e-9), "z={z} s={s}");
                assert!(r.death >= prev_death - 1e-9, "z={z} s={s}");
                assert!(r.death <= params.mu() * f64::from(z) + 1e-9);
                prev_birth = r.birth_total;
                prev_death = r.death;
            }
        }
    }

    #[test]
    fn large_population_underflow_uses_limit_rates() {
        let params = example_params();
        let curve = extinction_prob(&params, 100.0, 1e-10).unwrap();
        // Remaining time huge: F is clipped near 1, expressions stay finite
        // and land on the Q-process-like limits.
        let rates = conditioned_rates(&params, &curve, 50_000, 0.0, 100.0);
        assert!(rates.birth_total.is_finite() && rates.birth_total > 0.0);
        assert!(rates.death.is_finite() && rates.death > 0.0);
        assert!(rates.death <= params.mu() * 50_000.0);
    }

    #[test]
    fn exact_sampler_paths_survive() {
        let params = example_params();
        let curve = extinction_prob(&params, 5.0, 1e-10).unwrap();
        let mut rng = SimRng::new(21);
        for _ in 0..200 {
            let traj = simulate_exact_with(&params, &curve, 1, 5.0, &mut rng);
            assert!(traj.terminal_state() >= 1);
        }
    }

    #[test]
    fn rejection_trivial_horizon_and_budget() {
        let params = example_params();
        let traj = simulate_rejection(&params, 2, 0.0, 1, 1).unwrap();
        assert_eq!(traj.terminal_state(), 2);
        // Zero budget: immediate failure.
        assert!(matches!(
            simulate_rejection(&params, 1, 1.0, 1, 0),
            Err(ConditionedError::AttemptsExhausted { .. })
        ));
    }

    #[test]
    fn splitting_config_validation() {
        let params = example_params();
        let cfg = SplittingConfig {
            level_times: vec![2.0, 1.0],
            particles_per_level: 4,
            resampling: ResamplingRule::WithReplacement,
        };
        assert!(matches!(
            run_splitting(&params, 1, 2.0, &cfg, 1),
            Err(ConditionedError::BadSplittingConfig)
        ));
        let cfg = SplittingConfig::equally_spaced(10.0, 5.0, 8);
        assert_eq!(cfg.level_times, vec![5.0, 10.0]);
    }

    #[test]
    fn splitting_particles_all_survive_horizon() {
        let params = example_params();
        let cfg = SplittingConfig::equally_spaced(10.0, 5.0, 32);
        let ensemble = run_splitting(&params, 5, 10.0, &cfg, 17).unwrap();
        assert_eq!(ensemble.particles.len(), 32);
        for p in &ensemble.particles {
            assert!(p.terminal_state() >= 1);
            assert_eq!(p.z0(), 5);
        }
        assert!(ensemble.survival_estimate > 0.0 && ensemble.survival_estimate <= 1.0);
        assert_eq!(ensemble.level_survival.len(), cfg.n_levels());
    }
}
