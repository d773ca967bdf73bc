//! The Q-process: the chain conditioned to survive in the distant future.
//!
//! Three operationally independent samplers of the same law live here and
//! cross-validate each other:
//!
//! * [`simulate_generator`] drives the time-homogeneous jump rates directly:
//!   from state `i`, deaths at `(i - 1) mu` and size-`k` births at
//!   `(i - 1) lambda p_k + lambda k p_k`, so the chain never reaches 0;
//! * [`simulate_spine`] builds the path from one immortal individual that
//!   births at rate `lambda m` with size-biased offspring counts, each birth
//!   seeding independent unconditioned subtrees;
//! * [`simulate_immigration`] realises the equivalent view of `Z - 1` as a
//!   subcritical process fed by Poisson immigration at rate `lambda m`.
//!
//! Statistics are read off merged [`Trajectory`] values with the same replay
//! code as the plain simulator.

use crate::model::ModelParams;
use crate::rng::SimRng;
use crate::sim::simulate_with;
use crate::trajectory::{EventKind, StatsError, SufficientStats, Trajectory};

/// One birth along the spine together with the subtrees it seeded.
#[derive(Debug, Clone)]
pub struct SpineBirth {
    /// Absolute time of the spine birth.
    pub time: f64,
    /// Offspring count (size-biased draw, always `>= 2`).
    pub offspring: u32,
    /// Unconditioned subtrees of the `offspring - 1` non-spine children,
    /// each started at one individual; event times are local to the birth.
    pub subtrees: Vec<Trajectory>,
}

/// Full record of a spine-decomposition run.
#[derive(Debug, Clone, Default)]
pub struct SpineRecord {
    pub births: Vec<SpineBirth>,
}

impl SpineRecord {
    /// Number of spine births up to `t`.
    pub fn count_up_to(&self, t: f64) -> usize {
        self.births.iter().filter(|b| b.time <= t).count()
    }

    /// Population implied by the superposition: the spine plus every live
    /// subtree individual.
    pub fn population_at(&self, t: f64) -> u32 {
        1 + self
            .births
            .iter()
            .filter(|b| b.time <= t)
            .flat_map(|b| b.subtrees.iter().map(move |s| s.state_at(t - b.time)))
            .sum::<u32>()
    }
}

/// Simulates the Q-process from its generator. The path never reaches 0.
pub fn simulate_generator(params: &ModelParams, z0: u32, horizon: f64, seed: u64) -> Trajectory {
    let mut rng = SimRng::new(seed);
    simulate_generator_with(params, z0, horizon, &mut rng)
}

/// As [`simulate_generator`] with a caller-owned generator.
pub fn simulate_generator_with(
    params: &ModelParams,
    z0: u32,
    horizon: f64,
    rng: &mut SimRng,
) -> Trajectory {
    assert!(z0 >= 1, "the Q-process lives on {{1, 2, ..}}");
    let lambda = params.lambda();
    let mu = params.mu();
    let law = params.offspring();
    let m = law.mean();
    let mut birth_weights: Vec<f64> = vec![0.0; law.sizes().len()];
    let mut events: Vec<(f64, EventKind)> = Vec::new();
    let mut state = z0;
    let mut time = 0.0_f64;
    loop {
        let others = f64::from(state - 1);
        let death_rate = others * mu;
        let mut birth_total = 0.0;
        for (w, (k, p)) in birth_weights.iter_mut().zip(law.pairs()) {
            *w = others * lambda * p + lambda * f64::from(k) * p;
            birth_total += *w;
        }
        debug_assert!((birth_total - lambda * (others + m)).abs() < 1e-9 * (1.0 + birth_total));
        let total = death_rate + birth_total;
        time += rng.exp(total);
        if time >= horizon {
            break;
        }
        if rng.uniform() * total < death_rate {
            events.push((time, EventKind::Death));
            state -= 1;
        } else {
            let idx = rng.pick_weighted(&birth_weights, birth_total);
            let k = law.sizes()[idx];
            events.push((time, EventKind::Birth(k)));
            state = state - 1 + k;
        }
    }
    Trajectory::from_events(z0, horizon, events).expect("generator simulation is well-formed")
}

/// Simulates the Q-process started from a single individual via the spine
/// decomposition, returning the merged trajectory and the raw record.
pub fn simulate_spine(params: &ModelParams, horizon: f64, seed: u64) -> (Trajectory, SpineRecord) {
    let mut rng = SimRng::new(seed);
    simulate_spine_with(params, horizon, &mut rng)
}

/// As [`simulate_spine`] with a caller-owned generator.
pub fn simulate_spine_with(
    params: &ModelParams,
    horizon: f64,
    rng: &mut SimRng,
) -> (Trajectory, SpineRecord) {
    let lambda = params.lambda();
    let law = params.offspring();
    let tilted = law.size_biased();
    let spine_rate = lambda * law.mean();

    let mut record = SpineRecord::default();
    let mut time = 0.0_f64;
    loop {
        time += rng.exp(spine_rate);
        if time >= horizon {
            break;
        }
        let offspring = tilted.sizes()[rng.pick_weighted(tilted.probs(), 1.0)];
        // The spine child carries no subtree; the remaining offspring - 1
        // children each start an independent unconditioned copy.
        let subtrees: Vec<Trajectory> = (0..offspring - 1)
            .map(|_| simulate_with(params, 1, horizon - time, rng))
            .collect();
        record.births.push(SpineBirth {
            time,
            offspring,
            subtrees,
        });
    }

    let trajectory = merge_spine(&record, horizon);
    (trajectory, record)
}

/// Q-process from `z0 = i`: one spine system plus `i - 1` independent
/// unconditioned copies, merged into a single event log.
pub fn simulate_spine_composed(
    params: &ModelParams,
    z0: u32,
    horizon: f64,
    seed: u64,
) -> Trajectory {
    assert!(z0 >= 1);
    let mut rng = SimRng::new(seed);
    let (spine_traj, _) = simulate_spine_with(params, horizon, &mut rng);
    let mut merged: Vec<(f64, EventKind)> = spine_traj
        .events()
        .iter()
        .map(|e| (e.time, e.kind))
        .collect();
    for _ in 1..z0 {
        let side = simulate_with(params, 1, horizon, &mut rng);
        merged.extend(side.events().iter().map(|e| (e.time, e.kind)));
    }
    merged.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite event times"));
    Trajectory::from_events(z0, horizon, merged).expect("merged composition is well-formed")
}

/// Immigration view: `Z - 1` evolves as the unconditioned process while an
/// independent Poisson stream at rate `lambda m` inserts `l` immigrants with
/// probability `tilde p_{l + 1}`. Returned as a trajectory of `Z` itself.
pub fn simulate_immigration(params: &ModelParams, horizon: f64, seed: u64) -> Trajectory {
    let mut rng = SimRng::new(seed);
    let lambda = params.lambda();
    let mu = params.mu();
    let law = params.offspring();
    let tilted = law.size_biased();
    let immigration_rate = lambda * law.mean();

    let mut events: Vec<(f64, EventKind)> = Vec::new();
    let mut time = 0.0_f64;
    let mut next_immigration = rng.exp(immigration_rate);
    let mut residents: u32 = 0; // Z - 1
    loop {
        let resident_rate = f64::from(residents) * (lambda + mu);
        let next_resident = if residents > 0 {
            time + rng.exp(resident_rate)
        } else {
            f64::INFINITY
        };
        if next_immigration <= next_resident {
            time = next_immigration;
            if time >= horizon {
                break;
            }
            let batch = tilted.sizes()[rng.pick_weighted(tilted.probs(), 1.0)];
            // l = batch - 1 immigrants; on Z this is a size-`batch` birth.
            events.push((time, EventKind::Birth(batch)));
            residents += batch - 1;
            next_immigration = time + rng.exp(immigration_rate);
        } else {
            time = next_resident;
            if time >= horizon {
                break;
            }
            if rng.bernoulli(lambda / (lambda + mu)) {
                let k = law.sizes()[rng.pick_weighted(law.probs(), 1.0)];
                events.push((time, EventKind::Birth(k)));
                residents = residents - 1 + k;
            } else {
                events.push((time, EventKind::Death));
                residents -= 1;
            }
        }
    }
    Trajectory::from_events(1, horizon, events).expect("immigration simulation is well-formed")
}

/// Sufficient statistics of a Q-process path; same replay code as the plain
/// simulator.
pub fn qprocess_stats(traj: &Trajectory, t: f64) -> Result<SufficientStats, StatsError> {
    traj.stats(t)
}

/// Long-run averages from one generator path started at 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErgodicAverages {
    pub tau_over_t: f64,
    pub births_over_t: f64,
    pub deaths_over_t: f64,
}

/// `(tau_t / t, b_t / t, d_t / t)` from a single long path.
pub fn ergodic_averages(params: &ModelParams, horizon: f64, seed: u64) -> ErgodicAverages {
    let traj = simulate_generator(params, 1, horizon, seed);
    let stats = traj.stats(horizon).expect("t equals the horizon");
    ErgodicAverages {
        tau_over_t: stats.lifetime / horizon,
        births_over_t: stats.births as f64 / horizon,
        deaths_over_t: stats.deaths as f64 / horizon,
    }
}

fn merge_spine(record: &SpineRecord, horizon: f64) -> Trajectory {
    let mut merged: Vec<(f64, EventKind)> = Vec::new();
    for birth in &record.births {
        merged.push((birth.time, EventKind::Birth(birth.offspring)));
        for subtree in &birth.subtrees {
            merged.extend(
                subtree
                    .events()
                    .iter()
                    .map(|e| (birth.time + e.time, e.kind)),
            );
        }
    }
    merged.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite event times"));
    Trajectory::from_events(1, horizon, merged).expect("merged spine log is well-formed")
}
