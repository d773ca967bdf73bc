//! Joint estimation through the embedded discrete-time skeleton.
//!
//! Observing the path only at multiples of `delta` yields a Galton–Watson
//! chain with per-step mean `m* = e^{rho delta}` and variance
//! `sigma2* = m* (1 - m*) pi_up`. On a surviving path the skeleton behaves
//! like the Q-process skeleton, whose one-step conditional mean is affine:
//!
//! ```text
//! E[z_{n+1} | z_n] = m* z_n + sigma2* / m*
//! ```
//!
//! so an ordinary least-squares fit of `z_{n+1}` on `z_n` *with intercept*
//! estimates `m*` by its slope and `sigma2*` by `slope x intercept`. (A plain
//! ratio estimator without the intercept converges to 1 on surviving paths
//! and carries no information.) The skeleton moments are then inverted:
//!
//! * binary case: closed forms for `(lambda, mu)`;
//! * general case: the four moment equations for `(lambda, m, mu, sigma2)` —
//!   the two skeleton moments plus the two classical-MLE limits — solved by
//!   damped Newton with an analytic Jacobian.

use nalgebra::{Matrix4, Vector4};

use crate::trajectory::Trajectory;

use super::{c_consistent, mle_classic, pk_multinomial, EstimatorError};

/// Skeleton moment estimates from the least-squares fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkeletonMoments {
    /// Slope: per-step offspring mean `m*`.
    pub m_star: f64,
    /// `slope x intercept`: per-step offspring variance `sigma2*`.
    pub sigma2_star: f64,
    /// Number of `(z_n, z_{n+1})` pairs in the fit.
    pub n_pairs: usize,
}

/// Skeleton mode: closed-form binary inversion or the joint four-parameter
/// system.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkeletonMode {
    /// Offspring law known to be `p_2 = 1` (`m = 2`, `sigma2 = 0`).
    Binary,
    /// Free `(lambda, m, mu, sigma2)`.
    General,
}

/// Result of a skeleton fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkeletonFit {
    pub moments: SkeletonMoments,
    pub lambda: f64,
    pub mu: f64,
    pub m: f64,
    pub sigma2: f64,
    /// Newton iterations (0 in binary mode).
    pub iterations: u64,
}

/// States sampled at `0, delta, 2 delta, ..` up to the horizon.
pub fn extract_skeleton(traj: &Trajectory, delta: f64) -> Vec<u32> {
    assert!(delta > 0.0);
    let steps = (traj.horizon() / delta).floor() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut state = traj.z0();
    let mut idx = 0;
    for n in 0..=steps {
        let t = n as f64 * delta;
        while idx < traj.events().len() && traj.events()[idx].time <= t {
            let ev = traj.events()[idx];
            state = match ev.kind {
                crate::trajectory::EventKind::Birth(k) => state - 1 + k,
                crate::trajectory::EventKind::Death => state - 1,
            };
            idx += 1;
        }
        out.push(state);
    }
    out
}

/// Least-squares skeleton moments from consecutive observation pairs.
pub fn skeleton_moments(skeleton: &[u32]) -> Result<SkeletonMoments, EstimatorError> {
    if skeleton.len() < 3 {
        return Err(EstimatorError::SkeletonDegenerate {
            reason: format!("only {} observations", skeleton.len()),
        });
    }
    let n = (skeleton.len() - 1) as f64;
    let xs = skeleton[..skeleton.len() - 1].iter().map(|&z| f64::from(z));
    let ys = skeleton[1..].iter().map(|&z| f64::from(z));
    let sx: f64 = xs.clone().sum();
    let sy: f64 = ys.clone().sum();
    let sxx: f64 = xs.clone().map(|x| x * x).sum();
    let sxy: f64 = xs.zip(ys).map(|(x, y)| x * y).sum();
    let det = n * sxx - sx * sx;
    if det <= 0.0 {
        return Err(EstimatorError::SkeletonDegenerate {
            reason: "no variation in observed states".into(),
        });
    }
    let slope = (n * sxy - sx * sy) / det;
    let intercept = (sy - slope * sx) / n;
    Ok(SkeletonMoments {
        m_star: slope,
        sigma2_star: slope * intercept,
        n_pairs: skeleton.len() - 1,
    })
}

/// Closed-form binary inversion of skeleton moments:
///
/// ```text
/// lambda = log(m*)/(2 delta) (sigma2*/(m*(m*-1)) + 1)
/// mu     = log(m*)/(2 delta) (sigma2*/(m*(m*-1)) - 1)
/// ```
pub fn binary_rates_from_moments(
    moments: &SkeletonMoments,
    delta: f64,
) -> Result<(f64, f64), EstimatorError> {
    let m_star = moments.m_star;
    if !(m_star > 0.0) || (m_star - 1.0).abs() < 1e-12 {
        return Err(EstimatorError::SkeletonDegenerate {
            reason: format!("skeleton mean {m_star} at the boundary"),
        });
    }
    let g = m_star.ln() / (2.0 * delta);
    let r = moments.sigma2_star / (m_star * (m_star - 1.0));
    Ok((g * (r + 1.0), g * (r - 1.0)))
}

/// Fits the skeleton estimators on a trajectory.
///
/// In general mode the four unknowns are solved from the skeleton moments
/// and the classical MLEs of the same path by damped Newton, started from
/// `(lambda~, mu~, m, sigma2)` with `m` and `sigma2` taken from the
/// multinomial offspring fit. Local non-identifiability surfaces as
/// [`EstimatorError::NewtonNoConvergence`] rather than a silent answer.
pub fn skeleton_estimators(
    traj: &Trajectory,
    delta: f64,
    mode: SkeletonMode,
) -> Result<SkeletonFit, EstimatorError> {
    if traj.horizon() < 2.0 * delta {
        return Err(EstimatorError::SkeletonDegenerate {
            reason: "horizon shorter than two skeleton steps".into(),
        });
    }
    let skeleton = extract_skeleton(traj, delta);
    let moments = skeleton_moments(&skeleton)?;
    match mode {
        SkeletonMode::Binary => {
            let (lambda, mu) = binary_rates_from_moments(&moments, delta)?;
            Ok(SkeletonFit {
                moments,
                lambda,
                mu,
                m: 2.0,
                sigma2: 0.0,
                iterations: 0,
            })
        }
        SkeletonMode::General => {
            let stats = traj
                .stats(traj.horizon())
                .expect("horizon is within the trajectory");
            let (lambda_hat, mu_hat) = mle_classic(&stats)?;
            if !(0.0..1.0).contains(&moments.m_star) || moments.sigma2_star <= 0.0 {
                return Err(EstimatorError::SkeletonDegenerate {
                    reason: format!(
                        "skeleton moments (m* = {}, sigma2* = {}) outside the subcritical range",
                        moments.m_star, moments.sigma2_star
                    ),
                });
            }
            let targets = Targets {
                log_mstar_over_delta: moments.m_star.ln() / delta,
                sigma2_star: moments.sigma2_star,
                lambda_hat,
                mu_hat,
                delta,
            };
            let start = initial_point(traj, &targets)?;
            let (x, iterations) = newton_solve(&targets, start)?;
            Ok(SkeletonFit {
                moments,
                lambda: x[0],
                m: x[1],
                mu: x[2],
                sigma2: x[3],
                iterations,
            })
        }
    }
}

struct Targets {
    log_mstar_over_delta: f64,
    sigma2_star: f64,
    lambda_hat: f64,
    mu_hat: f64,
    delta: f64,
}

/// Start from the corrected rates with multinomial offspring moments; if the
/// corrected death rate is unavailable the classical one stands in.
fn initial_point(traj: &Trajectory, targets: &Targets) -> Result<Vector4<f64>, EstimatorError> {
    let stats = traj.stats(traj.horizon()).expect("horizon valid");
    let support: Vec<u32> = stats.births_by_size.keys().copied().collect();
    if support.is_empty() {
        return Err(EstimatorError::NoBirths);
    }
    let pk = pk_multinomial(&stats, &support)?;
    let m0: f64 = pk.iter().map(|&(k, p)| f64::from(k) * p).sum();
    let second: f64 = pk.iter().map(|&(k, p)| f64::from(k).powi(2) * p).sum();
    let sigma2_0 = (second - m0 * m0).max(1e-6);
    let corrected = c_consistent(&stats, m0)?;
    let lambda0 = corrected.lambda.max(1e-9);
    let mu0 = corrected.mu.unwrap_or(targets.mu_hat).max(1e-9);
    Ok(Vector4::new(lambda0, m0.max(1.0 + 1e-6), mu0, sigma2_0))
}

/// Residuals of the four moment equations at `(lambda, m, mu, sigma2)`.
fn residuals(t: &Targets, x: &Vector4<f64>) -> Option<Vector4<f64>> {
    let (lambda, m, mu, sigma2) = (x[0], x[1], x[2], x[3]);
    if lambda <= 0.0 || mu <= 0.0 || m <= 1.0 {
        return None;
    }
    let rho = lambda * (m - 1.0) - mu;
    if rho >= -1e-12 {
        return None;
    }
    let a = sigma2 + m * (m - 1.0);
    let pi = 1.0 - lambda * a / rho;
    if pi <= 1.0 + 1e-12 {
        return None;
    }
    let m_star = (rho * t.delta).exp();
    Some(Vector4::new(
        rho - t.log_mstar_over_delta,
        m_star * (1.0 - m_star) * pi - t.sigma2_star,
        lambda + lambda * (m - 1.0) / pi - t.lambda_hat,
        mu - mu / pi - t.mu_hat,
    ))
}

fn jacobian(t: &Targets, x: &Vector4<f64>) -> Matrix4<f64> {
    let (lambda, m, mu, sigma2) = (x[0], x[1], x[2], x[3]);
    let rho = lambda * (m - 1.0) - mu;
    let a = sigma2 + m * (m - 1.0);
    let pi = 1.0 - lambda * a / rho;
    let drho = [m - 1.0, lambda, -1.0, 0.0];
    // d pi / d theta = lambda a rho^{-2} d rho - d(lambda a) / rho.
    let dla = [a, lambda * (2.0 * m - 1.0), 0.0, lambda];
    let mut dpi = [0.0; 4];
    for i in 0..4 {
        dpi[i] = lambda * a / (rho * rho) * drho[i] - dla[i] / rho;
    }
    let m_star = (rho * t.delta).exp();
    let g = m_star * (1.0 - m_star);
    let dg_drho = t.delta * m_star * (1.0 - 2.0 * m_star);

    let mut j = Matrix4::zeros();
    for i in 0..4 {
        // r1 = rho - const
        j[(0, i)] = drho[i];
        // r2 = g(rho) pi - const
        j[(1, i)] = dg_drho * drho[i] * pi + g * dpi[i];
        // r3 = lambda + lambda (m - 1) / pi - const
        let mut v = -lambda * (m - 1.0) / (pi * pi) * dpi[i];
        if i == 0 {
            v += 1.0 + (m - 1.0) / pi;
        }
        if i == 1 {
            v += lambda / pi;
        }
        j[(2, i)] = v;
        // r4 = mu - mu / pi - const
        let mut v = mu / (pi * pi) * dpi[i];
        if i == 2 {
            v += 1.0 - 1.0 / pi;
        }
        j[(3, i)] = v;
    }
    j
}

fn newton_solve(t: &Targets, start: Vector4<f64>) -> Result<(Vector4<f64>, u64), EstimatorError> {
    const MAX_ITER: u64 = 100;
    let scale = 1.0 + t.lambda_hat.abs().max(t.mu_hat.abs()).max(t.sigma2_star.abs());
    let tol = 1e-11 * scale;
    let mut x = start;
    let mut r = residuals(t, &x).ok_or_else(|| EstimatorError::NewtonNoConvergence {
        iterations: 0,
        residual: f64::INFINITY,
    })?;
    for iter in 1..=MAX_ITER {
        if r.amax() < tol {
            return Ok((x, iter - 1));
        }
        let j = jacobian(t, &x);
        let delta = j
            .lu()
            .solve(&(-r))
            .ok_or(EstimatorError::NewtonNoConvergence {
                iterations: iter,
                residual: r.amax(),
            })?;
        // Backtracking: halve until the residual norm decreases on a valid
        // point.
        let mut alpha = 1.0;
        let mut advanced = false;
        while alpha >= 1.0 / 1024.0 {
            let candidate = x + delta * alpha;
            if let Some(rc) = residuals(t, &candidate) {
                if rc.norm() < r.norm() * (1.0 - 0.25 * alpha) || rc.amax() < tol {
                    x = candidate;
                    r = rc;
                    advanced = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !advanced {
            return Err(EstimatorError::NewtonNoConvergence {
                iterations: iter,
                residual: r.amax(),
            });
        }
    }
    Err(EstimatorError::NewtonNoConvergence {
        iterations: MAX_ITER,
        residual: r.amax(),
    })
}
