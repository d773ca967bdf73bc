//! Extinction probability curve `F(s) = P(extinct by s | one ancestor)`.
//!
//! `F` solves the scalar backward equation
//! `dF/ds = mu - (lambda + mu) F + lambda P(F)`, `F(0) = 0`, where `P` is the
//! offspring p.g.f. The solver is an adaptive Dormand–Prince RK45 whose
//! accepted steps become knots of a monotone cubic Hermite interpolant; knot
//! slopes are exact (they come from the right-hand side) and are clamped with
//! the Fritsch–Carlson bound so monotonicity survives interpolation. `F^z`
//! amplifies curve error for large `z`, hence the tight default tolerance.

use crate::model::ModelParams;

use super::ConditionedError;

/// Largest representable value of `F`; keeps `1 - F^z` away from exact zero.
pub const F_CLIP_MAX: f64 = 1.0 - 1e-15;

/// Dense monotone representation of the extinction probability on
/// `[0, t_max]`.
#[derive(Debug, Clone)]
pub struct ExtinctionCurve {
    times: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
    params: ModelParams,
}

impl ExtinctionCurve {
    /// Solves the backward equation up to `t_max` with per-step absolute
    /// error at most `tol`.
    pub fn build(params: &ModelParams, t_max: f64, tol: f64) -> Result<Self, ConditionedError> {
        assert!(t_max > 0.0 && tol > 0.0);
        let rhs = |f: f64| {
            params.mu() - (params.lambda() + params.mu()) * f
                + params.lambda() * params.offspring().pgf(f.clamp(0.0, 1.0)).expect("f in [0,1]")
        };

        let mut times = vec![0.0];
        let mut values = vec![0.0];
        let mut slopes = vec![rhs(0.0)];
        let mut t = 0.0_f64;
        let mut f = 0.0_f64;
        let mut h = (tol.sqrt() / params.mu()).min(t_max / 16.0).max(1e-8);
        let min_step = t_max * 1e-14;
        while t < t_max {
            h = h.min(t_max - t);
            let (next, err) = dopri_step(&rhs, f, h);
            if err <= tol || h <= min_step {
                if h <= min_step && err > tol {
                    return Err(ConditionedError::SolverFailure {
                        detail: format!("step underflow at t = {t} (error {err:.3e})"),
                    });
                }
                t += h;
                f = next.clamp(0.0, F_CLIP_MAX);
                times.push(t);
                values.push(f);
                slopes.push(rhs(f));
            }
            let scale = 0.9 * (tol / err.max(1e-300)).powf(0.2);
            h *= scale.clamp(0.2, 5.0);
        }

        // Fritsch–Carlson clamp: slope at a knot at most 3x the secant slope
        // of each adjacent segment.
        let n = times.len();
        let mut clamped = slopes.clone();
        for j in 0..n {
            let mut limit = f64::INFINITY;
            if j > 0 {
                let secant = (values[j] - values[j - 1]) / (times[j] - times[j - 1]);
                limit = limit.min(3.0 * secant.max(0.0));
            }
            if j + 1 < n {
                let secant = (values[j + 1] - values[j]) / (times[j + 1] - times[j]);
                limit = limit.min(3.0 * secant.max(0.0));
            }
            clamped[j] = clamped[j].clamp(0.0, limit);
        }

        Ok(Self {
            times,
            values,
            slopes: clamped,
            params: params.clone(),
        })
    }

    /// Extinction probability at `s`, clipped to `[0, F_CLIP_MAX]`.
    ///
    /// `s <= 0` returns 0; `s` beyond the built range saturates at the last
    /// knot (callers should build the curve over the full horizon they use).
    pub fn value(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let n = self.times.len();
        if s >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let j = match self
            .times
            .binary_search_by(|t| t.partial_cmp(&s).expect("finite knots"))
        {
            Ok(exact) => return self.values[exact],
            Err(right) => right - 1,
        };
        let h = self.times[j + 1] - self.times[j];
        let x = (s - self.times[j]) / h;
        let (f0, f1) = (self.values[j], self.values[j + 1]);
        let (d0, d1) = (self.slopes[j] * h, self.slopes[j + 1] * h);
        let x2 = x * x;
        let x3 = x2 * x;
        let v = f0 * (2.0 * x3 - 3.0 * x2 + 1.0)
            + d0 * (x3 - 2.0 * x2 + x)
            + f1 * (-2.0 * x3 + 3.0 * x2)
            + d1 * (x3 - x2);
        v.clamp(0.0, F_CLIP_MAX)
    }

    /// Largest time the curve covers.
    pub fn t_max(&self) -> f64 {
        *self.times.last().expect("curve has at least the origin")
    }

    /// Number of solver knots (useful for diagnostics).
    pub fn knots(&self) -> usize {
        self.times.len()
    }

    /// Parameters the curve was built from.
    pub fn params(&self) -> &ModelParams {
        &self.params
    }
}

/// One Dormand–Prince 5(4) step for an autonomous scalar ODE; returns the 5th
/// order value and the embedded error estimate.
fn dopri_step(rhs: &impl Fn(f64) -> f64, y: f64, h: f64) -> (f64, f64) {
    let k1 = rhs(y);
    let k2 = rhs(y + h * (0.2 * k1));
    let k3 = rhs(y + h * (3.0 / 40.0 * k1 + 9.0 / 40.0 * k2));
    let k4 = rhs(y + h * (44.0 / 45.0 * k1 - 56.0 / 15.0 * k2 + 32.0 / 9.0 * k3));
    let k5 = rhs(
        y + h * (19372.0 / 6561.0 * k1 - 25360.0 / 2187.0 * k2 + 64448.0 / 6561.0 * k3
            - 212.0 / 729.0 * k4),
    );
    let k6 = rhs(
        y + h * (9017.0 / 3168.0 * k1 - 355.0 / 33.0 * k2 + 46732.0 / 5247.0 * k3
            + 49.0 / 176.0 * k4
            - 5103.0 / 18656.0 * k5),
    );
    let y5 = y
        + h * (35.0 / 384.0 * k1 + 500.0 / 1113.0 * k3 + 125.0 / 192.0 * k4
            - 2187.0 / 6784.0 * k5
            + 11.0 / 84.0 * k6);
    let k7 = rhs(y5);
    let y4 = y
        + h * (5179.0 / 57600.0 * k1 + 7571.0 / 16695.0 * k3 + 393.0 / 640.0 * k4
            - 92097.0 / 339200.0 * k5
            + 187.0 / 2100.0 * k6
            + 1.0 / 40.0 * k7);
    (y5, (y5 - y4).abs())
}
