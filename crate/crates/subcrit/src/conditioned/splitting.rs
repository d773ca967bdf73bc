//! Fixed-effort multilevel splitting for long surviving trajectories.
//!
//! Particles are propagated unconditionally between level times; at each
//! level the extinct ones are discarded and the survivors are resampled with
//! replacement back to the configured particle count. Each particle keeps its
//! full ancestral event log, so any surviving particle yields an honest
//! trajectory on `[0, t]`. The product of per-level survival fractions is an
//! unbiased estimate of the survival probability.

use crate::model::ModelParams;
use crate::rng::SimRng;
use crate::trajectory::{EventKind, Trajectory};

use super::ConditionedError;

/// Level layout and effort of a splitting run.
#[derive(Debug, Clone, PartialEq)]
pub struct SplittingConfig {
    /// Strictly increasing level times; the last one is the target horizon.
    pub level_times: Vec<f64>,
    /// Particles kept alive at every level.
    pub particles_per_level: usize,
    /// Resampling rule; only with-replacement multinomial resampling is
    /// implemented.
    pub resampling: ResamplingRule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResamplingRule {
    WithReplacement,
}

impl SplittingConfig {
    /// Levels every `spacing` time units up to `horizon` (the horizon itself
    /// is always the last level).
    pub fn equally_spaced(horizon: f64, spacing: f64, particles: usize) -> Self {
        assert!(horizon > 0.0 && spacing > 0.0 && particles > 0);
        let mut level_times = Vec::new();
        let mut t = spacing;
        while t < horizon - 1e-12 {
            level_times.push(t);
            t += spacing;
        }
        level_times.push(horizon);
        Self {
            level_times,
            particles_per_level: particles,
            resampling: ResamplingRule::WithReplacement,
        }
    }

    pub fn n_levels(&self) -> usize {
        self.level_times.len()
    }

    fn validate(&self, horizon: f64) -> Result<(), ConditionedError> {
        let increasing = self
            .level_times
            .windows(2)
            .all(|w| w[1] > w[0]);
        let last_ok = self
            .level_times
            .last()
            .is_some_and(|&last| (last - horizon).abs() < 1e-9);
        let first_ok = self.level_times.first().is_some_and(|&first| first > 0.0);
        if !increasing || !last_ok || !first_ok || self.particles_per_level == 0 {
            return Err(ConditionedError::BadSplittingConfig);
        }
        Ok(())
    }
}

/// Result of one splitting run.
#[derive(Debug, Clone)]
pub struct SplittingEnsemble {
    /// Surviving particle trajectories on `[0, t]` after the final level
    /// (resampled back to the configured count).
    pub particles: Vec<Trajectory>,
    /// Product of per-level survival fractions; unbiased for the survival
    /// probability of the unconditioned process.
    pub survival_estimate: f64,
    /// Raw per-level survival fractions.
    pub level_survival: Vec<f64>,
}

struct Particle {
    events: Vec<(f64, EventKind)>,
    state: u32,
}

/// Runs one fixed-effort splitting ensemble.
pub fn run_splitting(
    params: &ModelParams,
    z0: u32,
    horizon: f64,
    cfg: &SplittingConfig,
    seed: u64,
) -> Result<SplittingEnsemble, ConditionedError> {
    cfg.validate(horizon)?;
    let mut rng = SimRng::new(seed);
    let n = cfg.particles_per_level;
    let mut particles: Vec<Particle> = (0..n)
        .map(|_| Particle {
            events: Vec::new(),
            state: z0,
        })
        .collect();
    let mut survival_estimate = 1.0;
    let mut level_survival = Vec::with_capacity(cfg.n_levels());
    let mut from = 0.0_f64;
    for (level, &to) in cfg.level_times.iter().enumerate() {
        for p in &mut particles {
            propagate(params, p, from, to, &mut rng);
        }
        let survivors: Vec<Particle> = particles
            .drain(..)
            .filter(|p| p.state > 0)
            .collect();
        let fraction = survivors.len() as f64 / n as f64;
        level_survival.push(fraction);
        survival_estimate *= fraction;
        if survivors.is_empty() {
            return Err(ConditionedError::ParticleCollapse { level });
        }
        particles = (0..n)
            .map(|_| {
                let pick = (rng.uniform() * survivors.len() as f64) as usize;
                let src = &survivors[pick.min(survivors.len() - 1)];
                Particle {
                    events: src.events.clone(),
                    state: src.state,
                }
            })
            .collect();
        from = to;
    }
    let particles = particles
        .into_iter()
        .map(|p| {
            Trajectory::from_events(z0, horizon, p.events)
                .expect("splitting particle log is well-formed")
        })
        .collect();
    Ok(SplittingEnsemble {
        particles,
        survival_estimate,
        level_survival,
    })
}

fn propagate(params: &ModelParams, p: &mut Particle, from: f64, to: f64, rng: &mut SimRng) {
    let lambda = params.lambda();
    let mu = params.mu();
    let sizes = params.offspring().sizes();
    let probs = params.offspring().probs();
    let mut time = from;
    while p.state > 0 {
        time += rng.exp(f64::from(p.state) * (lambda + mu));
        if time >= to {
            return;
        }
        if rng.bernoulli(lambda / (lambda + mu)) {
            let k = sizes[rng.pick_weighted(probs, 1.0)];
            p.events.push((time, EventKind::Birth(k)));
            p.state = p.state - 1 + k;
        } else {
            p.events.push((time, EventKind::Death));
            p.state -= 1;
        }
    }
}
