//! Model parameters and closed-form derived quantities.
//!
//! A model is a birth rate `lambda > 0`, a death rate `mu > 0` and an
//! offspring law `(p_k)` on a finite support `{2, .., M}`. Construction
//! enforces subcriticality (`rho < 0`): every downstream quantity — the
//! Q-process stationary mean `pi_up`, the biased rates `lambda_up`, `mu_up`,
//! the tilted offspring probabilities — assumes it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Sum-to-one slack accepted in a configured offspring law; laws within this
/// tolerance are renormalised, anything worse is rejected.
pub const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    /// Growth rate `rho = lambda (m - 1) - mu` is not negative.
    #[error("process is not subcritical: rho = {rho}")]
    NotSubcritical { rho: f64 },
    /// The offspring probabilities are not a distribution on `{2, ..}`.
    #[error("invalid offspring law: {0}")]
    BadLaw(String),
    /// A rate parameter is zero, negative or non-finite.
    #[error("rate {name} must be positive and finite, got {value}")]
    NonPositiveRate { name: &'static str, value: f64 },
    /// Argument outside the mathematical domain of the operation.
    #[error("argument {name} = {value} outside {domain}")]
    DomainError {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },
}

/// Offspring distribution `(p_k)` with finite support `{2, .., M}`.
///
/// Stored as parallel sorted vectors; probabilities are strictly positive
/// (zero-probability atoms are dropped at construction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffspringLaw {
    sizes: Vec<u32>,
    probs: Vec<f64>,
}

impl OffspringLaw {
    /// Builds a law from `(k, p_k)` pairs.
    ///
    /// Probabilities must lie in `[0, 1]` and sum to 1 within
    /// [`PROB_SUM_TOL`]; the result is renormalised so the stored law sums to
    /// 1 exactly (up to rounding) even when the input carries config-file
    /// rounding.
    pub fn new(pairs: impl IntoIterator<Item = (u32, f64)>) -> Result<Self, ModelError> {
        let mut entries: Vec<(u32, f64)> = pairs.into_iter().collect();
        entries.sort_by_key(|&(k, _)| k);
        if entries.is_empty() {
            return Err(ModelError::BadLaw("empty support".into()));
        }
        let mut sizes = Vec::with_capacity(entries.len());
        let mut probs = Vec::with_capacity(entries.len());
        for &(k, p) in &entries {
            if k < 2 {
                return Err(ModelError::BadLaw(format!("support point {k} < 2")));
            }
            if sizes.last() == Some(&k) {
                return Err(ModelError::BadLaw(format!("duplicate support point {k}")));
            }
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(ModelError::BadLaw(format!("p_{k} = {p} not in [0, 1]")));
            }
            if p > 0.0 {
                sizes.push(k);
                probs.push(p);
            }
        }
        if sizes.is_empty() {
            return Err(ModelError::BadLaw("all probabilities are zero".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(ModelError::BadLaw(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        for p in &mut probs {
            *p /= total;
        }
        Ok(Self { sizes, probs })
    }

    /// Deterministic law with a single atom at `k`.
    pub fn deterministic(k: u32) -> Result<Self, ModelError> {
        Self::new([(k, 1.0)])
    }

    /// Support points in increasing order.
    pub fn sizes(&self) -> &[u32] {
        &self.sizes
    }

    /// Probabilities aligned with [`sizes`](Self::sizes).
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `(k, p_k)` pairs in increasing `k`.
    pub fn pairs(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.sizes.iter().copied().zip(self.probs.iter().copied())
    }

    /// Largest support point `M`.
    pub fn max_size(&self) -> u32 {
        *self.sizes.last().expect("non-empty support")
    }

    /// Probability of `k` offspring (zero off the support).
    pub fn prob(&self, k: u32) -> f64 {
        match self.sizes.binary_search(&k) {
            Ok(i) => self.probs[i],
            Err(_) => 0.0,
        }
    }

    /// Mean `m = sum_k k p_k`.
    pub fn mean(&self) -> f64 {
        self.pairs().map(|(k, p)| f64::from(k) * p).sum()
    }

    /// Variance `sigma^2 = sum_k k^2 p_k - m^2`.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        let m2: f64 = self.pairs().map(|(k, p)| f64::from(k).powi(2) * p).sum();
        m2 - m * m
    }

    /// Probability generating function `P(s) = sum_k p_k s^k` for `s` in
    /// `[0, 1]`.
    pub fn pgf(&self, s: f64) -> Result<f64, ModelError> {
        if !(0.0..=1.0).contains(&s) {
            return Err(ModelError::DomainError {
                name: "s",
                value: s,
                domain: "[0, 1]",
            });
        }
        Ok(self.pairs().map(|(k, p)| p * s.powi(k as i32)).sum())
    }

    /// Size-biased law `k p_k / m`.
    pub fn size_biased(&self) -> OffspringLaw {
        let m = self.mean();
        let probs: Vec<f64> = self
            .pairs()
            .map(|(k, p)| f64::from(k) * p / m)
            .collect();
        // Sums to 1 by construction of m; renormalise away rounding.
        let total: f64 = probs.iter().sum();
        OffspringLaw {
            sizes: self.sizes.clone(),
            probs: probs.into_iter().map(|p| p / total).collect(),
        }
    }
}

/// Validated parameters of a subcritical process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    lambda: f64,
    mu: f64,
    offspring: OffspringLaw,
}

impl ModelParams {
    /// Validates rates and subcriticality; see [`validate`].
    pub fn new(lambda: f64, mu: f64, offspring: OffspringLaw) -> Result<Self, ModelError> {
        let params = Self {
            lambda,
            mu,
            offspring,
        };
        validate(&params)?;
        Ok(params)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn offspring(&self) -> &OffspringLaw {
        &self.offspring
    }

    /// Growth rate `rho = lambda (m - 1) - mu` (negative by construction).
    pub fn rho(&self) -> f64 {
        self.lambda * (self.offspring.mean() - 1.0) - self.mu
    }

    /// All derived closed forms; see [`derive`].
    pub fn derive(&self) -> DerivedQuantities {
        derive(self)
    }
}

/// Closed-form quantities of the process and of its Q-process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedQuantities {
    /// Offspring mean `m`.
    pub m: f64,
    /// Offspring variance `sigma^2`.
    pub sigma2: f64,
    /// Growth rate `rho = lambda (m - 1) - mu`.
    pub rho: f64,
    /// Mean of the Q-process stationary distribution,
    /// `pi_up = 1 - lambda (sigma^2 + m (m - 1)) / rho`.
    pub pi_up: f64,
    /// Long-run per-individual birth rate in the Q-process,
    /// `(lambda (pi_up - 1) + lambda m) / pi_up`.
    pub lambda_up: f64,
    /// Long-run per-individual death rate in the Q-process,
    /// `mu (pi_up - 1) / pi_up`.
    pub mu_up: f64,
    /// Tilted offspring probabilities
    /// `p_k (pi_up + k - 1) / (pi_up + m - 1)`, aligned with the law support.
    pub pk_up: Vec<(u32, f64)>,
}

/// Checks every construction invariant of [`ModelParams`].
///
/// Errors with [`ModelError::NonPositiveRate`] for a bad `lambda`/`mu`, with
/// [`ModelError::BadLaw`] for an invalid offspring law (checked at law
/// construction) and with [`ModelError::NotSubcritical`] when
/// `rho = lambda (m - 1) - mu >= 0`.
pub fn validate(params: &ModelParams) -> Result<(), ModelError> {
    for (name, value) in [("lambda", params.lambda), ("mu", params.mu)] {
        if !value.is_finite() || value <= 0.0 {
            return Err(ModelError::NonPositiveRate { name, value });
        }
    }
    let rho = params.rho();
    if rho >= 0.0 {
        return Err(ModelError::NotSubcritical { rho });
    }
    Ok(())
}

/// Computes every derived quantity from validated parameters.
pub fn derive(params: &ModelParams) -> DerivedQuantities {
    let law = &params.offspring;
    let m = law.mean();
    let sigma2 = law.variance();
    let rho = params.lambda * (m - 1.0) - params.mu;
    let pi_up = 1.0 - params.lambda * (sigma2 + m * (m - 1.0)) / rho;
    let lambda_up = (params.lambda * (pi_up - 1.0) + params.lambda * m) / pi_up;
    let mu_up = params.mu * (pi_up - 1.0) / pi_up;
    let pk_up = law
        .pairs()
        .map(|(k, p)| (k, p * (pi_up + f64::from(k) - 1.0) / (pi_up + m - 1.0)))
        .collect();
    DerivedQuantities {
        m,
        sigma2,
        rho,
        pi_up,
        lambda_up,
        mu_up,
        pk_up,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// lambda = 2, mu = 5, p = (0.6, 0.1, 0.3) on {2, 3, 4}; the worked
    /// example used across the whole test suite.
    pub(crate) fn example_params() -> ModelParams {
        let law = OffspringLaw::new([(2, 0.6), (3, 0.1), (4, 0.3)]).unwrap();
        ModelParams::new(2.0, 5.0, law).unwrap()
    }

    fn binary(lambda: f64, mu: f64) -> ModelParams {
        ModelParams::new(lambda, mu, OffspringLaw::deterministic(2).unwrap()).unwrap()
    }

    #[test]
    fn example_model_is_valid() {
        assert!(validate(&example_params()).is_ok());
    }

    #[test]
    fn critical_and_supercritical_are_rejected() {
        let law = OffspringLaw::deterministic(2).unwrap();
        // rho = 0
        let err = ModelParams::new(1.0, 1.0, law.clone()).unwrap_err();
        assert!(matches!(err, ModelError::NotSubcritical { rho } if rho == 0.0));
        // rho = 0.5
        let err = ModelParams::new(1.0, 0.5, law).unwrap_err();
        assert!(matches!(err, ModelError::NotSubcritical { rho } if rho == 0.5));
    }

    #[test]
    fn non_positive_rates_are_rejected() {
        let law = OffspringLaw::deterministic(2).unwrap();
        assert!(matches!(
            ModelParams::new(0.0, 1.0, law.clone()),
            Err(ModelError::NonPositiveRate { name: "lambda", .. })
        ));
        assert!(matches!(
            ModelParams::new(1.0, -3.0, law),
            Err(ModelError::NonPositiveRate { name: "mu", .. })
        ));
    }

    #[test]
    fn bad_laws_are_rejected() {
        assert!(OffspringLaw::new([(1, 1.0)]).is_err());
        assert!(OffspringLaw::new([(2, 0.5), (3, 0.4)]).is_err());
        assert!(OffspringLaw::new([(2, 1.2)]).is_err());
        assert!(OffspringLaw::new([]).is_err());
        assert!(OffspringLaw::new([(2, 0.5), (2, 0.5)]).is_err());
        // Within tolerance: accepted and renormalised.
        let law = OffspringLaw::new([(2, 0.6), (3, 0.4 + 4e-13)]).unwrap();
        assert!((law.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn derive_matches_worked_example() {
        let d = example_params().derive();
        assert!((d.m - 2.7).abs() < 1e-12);
        assert!((d.sigma2 - 0.81).abs() < 1e-12);
        assert!((d.rho + 1.6).abs() < 1e-12);
        assert!((d.pi_up - 7.75).abs() < 1e-12);
        assert!((d.lambda_up - 2.4387).abs() < 5e-5);
        assert!((d.mu_up - 4.3548).abs() < 5e-5);
        let expect = [(2u32, 0.5556), (3, 0.1032), (4, 0.3413)];
        for ((k, p), (ek, ep)) in d.pk_up.iter().zip(expect) {
            assert_eq!(*k, ek);
            assert!((p - ep).abs() < 5e-5, "p_{k}_up = {p}");
        }
    }

    #[test]
    fn binary_q_rates_collapse_to_harmonic_mean() {
        let d = binary(1.0, 2.0).derive();
        let expect = 2.0 * 1.0 * 2.0 / (1.0 + 2.0);
        assert!((d.lambda_up - expect).abs() < 1e-12);
        assert!((d.mu_up - expect).abs() < 1e-12);
    }

    #[test]
    fn binary_pi_up_two_routes_agree() {
        // Deterministic-law closed form vs. the general formula.
        let params = binary(1.0, 2.0);
        let d = params.derive();
        let (lambda, mu, m) = (1.0f64, 2.0f64, 2.0f64);
        let special = (mu + lambda * (m - 1.0).powi(2)) / (mu - lambda * (m - 1.0));
        assert!((d.pi_up - 3.0).abs() < 1e-12);
        assert!((special - d.pi_up).abs() < 1e-12);
    }

    #[test]
    fn deterministic_law_balances_q_rates() {
        for m in [2u32, 3, 5] {
            let law = OffspringLaw::deterministic(m).unwrap();
            let params = ModelParams::new(0.7, 0.7 * f64::from(m), law).unwrap();
            let d = params.derive();
            assert!(
                (d.lambda_up * (d.m - 1.0) - d.mu_up).abs() < 1e-10,
                "m = {m}"
            );
        }
    }

    #[test]
    fn pgf_examples() {
        let single = OffspringLaw::deterministic(2).unwrap();
        assert!((single.pgf(0.5).unwrap() - 0.25).abs() < 1e-15);
        let law = example_params().offspring().clone();
        assert!((law.pgf(1.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((law.pgf(0.5).unwrap() - 0.18125).abs() < 1e-15);
        assert!(law.pgf(-0.1).is_err());
        assert!(law.pgf(1.5).is_err());
    }

    #[test]
    fn pgf_is_monotone() {
        let law = example_params().offspring().clone();
        let mut prev = 0.0;
        for i in 0..=100 {
            let s = f64::from(i) / 100.0;
            let v = law.pgf(s).unwrap();
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn size_biased_examples() {
        let single = OffspringLaw::deterministic(2).unwrap();
        assert_eq!(single.size_biased().probs(), &[1.0]);

        let tilted = example_params().offspring().size_biased();
        let expect = [0.6 * 2.0 / 2.7, 0.1 * 3.0 / 2.7, 0.3 * 4.0 / 2.7];
        for (p, e) in tilted.probs().iter().zip(expect) {
            assert!((p - e).abs() < 1e-12);
        }
        // Mean of the size-biased law is E[xi^2]/m.
        let law = example_params().offspring().clone();
        let expect_mean = (law.variance() + law.mean().powi(2)) / law.mean();
        assert!((tilted.mean() - expect_mean).abs() < 1e-12);
    }

    #[test]
    fn derive_is_pure() {
        let params = example_params();
        assert_eq!(params.derive(), params.derive());
    }
}

#[cfg(test)]
pub(crate) use tests::example_params;
