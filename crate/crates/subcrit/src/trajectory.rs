//! Event-log trajectories and the sufficient statistics derived from them.
//!
//! A [`Trajectory`] stores the initial size, the horizon and the ordered list
//! of events; everything an estimator needs (event counts, cumulative
//! lifetime, per-state occupation times) is recomputed by exact replay, so a
//! single storage format serves continuous-observation estimators and
//! skeleton extraction alike.
//!
//! The serialised form is a CSV with header `time,kind,k,state_before`
//! (`kind` is `B` or `D`, `k` is empty for deaths) preceded by one comment
//! line `# z0=<int> horizon=<float>`. The format is stable and is used for
//! test fixtures.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

/// What happened at an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    /// One individual replaced by `k >= 2` new ones: the state moves
    /// `z -> z - 1 + k`.
    Birth(u32),
    /// One individual removed: `z -> z - 1`.
    Death,
}

/// A single recorded jump.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    /// Population immediately before the jump.
    pub state_before: u32,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("event times must be strictly increasing and within [0, horizon]")]
    BadEventTime { index: usize, time: f64 },
    #[error("event at index {index} occurs after absorption at zero")]
    EventAfterAbsorption { index: usize },
    #[error("death event at index {index} from empty population")]
    DeathFromZero { index: usize },
    #[error("birth size {k} at index {index} is below 2")]
    BadBirthSize { index: usize, k: u32 },
    #[error("state overflow at index {index}")]
    StateOverflow { index: usize },
    #[error("recorded state_before {recorded} at index {index} does not match replay ({expected})")]
    StateMismatch {
        index: usize,
        recorded: u32,
        expected: u32,
    },
    #[error("horizon must be finite and non-negative, got {0}")]
    BadHorizon(f64),
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

/// Error from [`Trajectory::stats`].
#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("requested time {t} exceeds trajectory horizon {horizon}")]
    HorizonExceeded { t: f64, horizon: f64 },
}

/// A realisation of the process on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    z0: u32,
    horizon: f64,
    events: Vec<Event>,
    terminal_state: u32,
}

impl Trajectory {
    /// Assembles a trajectory from `(time, kind)` pairs, computing
    /// `state_before` fields and the terminal state by replay and validating
    /// every structural invariant.
    pub fn from_events(
        z0: u32,
        horizon: f64,
        events: impl IntoIterator<Item = (f64, EventKind)>,
    ) -> Result<Self, TrajectoryError> {
        if !horizon.is_finite() || horizon < 0.0 {
            return Err(TrajectoryError::BadHorizon(horizon));
        }
        let mut state = z0;
        let mut prev_time = 0.0_f64;
        let mut first = true;
        let mut out = Vec::new();
        for (index, (time, kind)) in events.into_iter().enumerate() {
            let increasing = if first { time >= 0.0 } else { time > prev_time };
            if !time.is_finite() || !increasing || time > horizon {
                return Err(TrajectoryError::BadEventTime { index, time });
            }
            first = false;
            prev_time = time;
            if state == 0 {
                return Err(TrajectoryError::EventAfterAbsorption { index });
            }
            let state_before = state;
            state = apply_kind(state, kind, index)?;
            out.push(Event {
                time,
                kind,
                state_before,
            });
        }
        Ok(Self {
            z0,
            horizon,
            events: out,
            terminal_state: state,
        })
    }

    pub fn z0(&self) -> u32 {
        self.z0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn terminal_state(&self) -> u32 {
        self.terminal_state
    }

    /// Population at time `t` (right-continuous; `t` may equal the horizon).
    pub fn state_at(&self, t: f64) -> u32 {
        let mut state = self.z0;
        for ev in &self.events {
            if ev.time > t {
                break;
            }
            state = apply_kind(state, ev.kind, 0).expect("validated at construction");
        }
        state
    }

    /// Sufficient statistics of the restriction to `[0, t]`.
    ///
    /// All fields are computed by exact replay. Occupation time of state 0
    /// after extinction is recorded, so per-state occupation times always sum
    /// to `t`.
    pub fn stats(&self, t: f64) -> Result<SufficientStats, StatsError> {
        if t > self.horizon || !t.is_finite() || t < 0.0 {
            return Err(StatsError::HorizonExceeded {
                t,
                horizon: self.horizon,
            });
        }
        let mut s = SufficientStats {
            t,
            z0: self.z0,
            births: 0,
            deaths: 0,
            lifetime: 0.0,
            births_by_size: BTreeMap::new(),
            occupation: BTreeMap::new(),
            births_by_state_size: BTreeMap::new(),
            deaths_by_state: BTreeMap::new(),
            max_state: self.z0,
        };
        let mut state = self.z0;
        let mut last = 0.0_f64;
        for ev in &self.events {
            if ev.time > t {
                break;
            }
            let dt = ev.time - last;
            s.lifetime += f64::from(state) * dt;
            *s.occupation.entry(state).or_insert(0.0) += dt;
            last = ev.time;
            match ev.kind {
                EventKind::Birth(k) => {
                    s.births += 1;
                    *s.births_by_size.entry(k).or_insert(0) += 1;
                    *s.births_by_state_size.entry((state, k)).or_insert(0) += 1;
                    state = state - 1 + k;
                }
                EventKind::Death => {
                    s.deaths += 1;
                    *s.deaths_by_state.entry(state).or_insert(0) += 1;
                    state -= 1;
                }
            }
            s.max_state = s.max_state.max(state);
        }
        let dt = t - last;
        s.lifetime += f64::from(state) * dt;
        *s.occupation.entry(state).or_insert(0.0) += dt;
        Ok(s)
    }

    /// Serialises to the stable CSV format.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# z0={} horizon={}", self.z0, self.horizon);
        out.push_str("time,kind,k,state_before\n");
        for ev in &self.events {
            match ev.kind {
                EventKind::Birth(k) => {
                    let _ = writeln!(out, "{},B,{},{}", ev.time, k, ev.state_before);
                }
                EventKind::Death => {
                    let _ = writeln!(out, "{},D,,{}", ev.time, ev.state_before);
                }
            }
        }
        out
    }

    /// Parses the CSV format produced by [`to_csv`](Self::to_csv).
    ///
    /// The leading `# z0=.. horizon=..` comment is optional; without it the
    /// initial state is inferred from the first row and the horizon from the
    /// last event time. Recorded `state_before` fields are checked against
    /// replay.
    pub fn from_csv(text: &str) -> Result<Self, TrajectoryError> {
        let parse_err = |line: usize, reason: &str| TrajectoryError::Parse {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate().peekable();
        let mut z0 = None;
        let mut horizon = None;
        if let Some((_, line)) = lines.peek() {
            if let Some(rest) = line.strip_prefix('#') {
                for token in rest.split_whitespace() {
                    if let Some(v) = token.strip_prefix("z0=") {
                        z0 = Some(v.parse::<u32>().map_err(|e| parse_err(1, &e.to_string()))?);
                    } else if let Some(v) = token.strip_prefix("horizon=") {
                        horizon =
                            Some(v.parse::<f64>().map_err(|e| parse_err(1, &e.to_string()))?);
                    } else {
                        return Err(parse_err(1, &format!("unknown comment token `{token}`")));
                    }
                }
                lines.next();
            }
        }
        match lines.next() {
            Some((_, header)) if header.trim() == "time,kind,k,state_before" => {}
            Some((n, _)) => return Err(parse_err(n + 1, "missing or malformed header")),
            None => return Err(parse_err(1, "empty input")),
        }

        let mut rows: Vec<(f64, EventKind, u32)> = Vec::new();
        for (n, line) in lines {
            let lineno = n + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(parse_err(lineno, "expected 4 comma-separated fields"));
            }
            let time: f64 = fields[0]
                .trim()
                .parse()
                .map_err(|_| parse_err(lineno, "bad time"))?;
            let state_before: u32 = fields[3]
                .trim()
                .parse()
                .map_err(|_| parse_err(lineno, "bad state_before"))?;
            let kind = match fields[1].trim() {
                "B" => {
                    let k: u32 = fields[2]
                        .trim()
                        .parse()
                        .map_err(|_| parse_err(lineno, "bad offspring count"))?;
                    EventKind::Birth(k)
                }
                "D" => {
                    if !fields[2].trim().is_empty() {
                        return Err(parse_err(lineno, "death rows must leave k empty"));
                    }
                    EventKind::Death
                }
                other => return Err(parse_err(lineno, &format!("unknown kind `{other}`"))),
            };
            rows.push((time, kind, state_before));
        }

        let z0 = match (z0, rows.first()) {
            (Some(z), _) => z,
            (None, Some(&(_, _, sb))) => sb,
            (None, None) => return Err(parse_err(1, "cannot infer z0 from an empty trajectory")),
        };
        let horizon = match (horizon, rows.last()) {
            (Some(h), _) => h,
            (None, Some(&(t, _, _))) => t,
            (None, None) => unreachable!("z0 inference errored first"),
        };
        let traj = Trajectory::from_events(z0, horizon, rows.iter().map(|&(t, k, _)| (t, k)))?;
        for (index, (ev, &(_, _, recorded))) in traj.events.iter().zip(&rows).enumerate() {
            if ev.state_before != recorded {
                return Err(TrajectoryError::StateMismatch {
                    index,
                    recorded,
                    expected: ev.state_before,
                });
            }
        }
        Ok(traj)
    }
}

fn apply_kind(state: u32, kind: EventKind, index: usize) -> Result<u32, TrajectoryError> {
    match kind {
        EventKind::Birth(k) => {
            if k < 2 {
                return Err(TrajectoryError::BadBirthSize { index, k });
            }
            (state - 1)
                .checked_add(k)
                .ok_or(TrajectoryError::StateOverflow { index })
        }
        EventKind::Death => {
            if state == 0 {
                Err(TrajectoryError::DeathFromZero { index })
            } else {
                Ok(state - 1)
            }
        }
    }
}

/// Everything the estimators read off a trajectory restricted to `[0, t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    /// Observation window length.
    pub t: f64,
    /// Initial population size.
    pub z0: u32,
    /// Total number of birth events `b_t`.
    pub births: u64,
    /// Total number of death events `d_t`.
    pub deaths: u64,
    /// Cumulative lifetime `tau_t = integral of Z_s over [0, t]`.
    pub lifetime: f64,
    /// Birth events by offspring count: `k -> b_{k,t}`.
    pub births_by_size: BTreeMap<u32, u64>,
    /// Occupation time by state: `r -> nu_{r,t}` (state 0 included after
    /// extinction, so the values sum to `t`).
    pub occupation: BTreeMap<u32, f64>,
    /// Birth events by (state, offspring count): `(r, k) -> beta_{r,t,k}`.
    pub births_by_state_size: BTreeMap<(u32, u32), u64>,
    /// Death events by state: `r -> delta_{r,t}`.
    pub deaths_by_state: BTreeMap<u32, u64>,
    /// Largest state visited in `[0, t]`, counting the initial state.
    pub max_state: u32,
}

impl SufficientStats {
    /// Birth events that occurred while the population was `r`, summed over
    /// offspring counts.
    pub fn births_from_state(&self, r: u32) -> u64 {
        self.births_by_state_size
            .range((r, 0)..=(r, u32::MAX))
            .map(|(_, &c)| c)
            .sum()
    }
}
