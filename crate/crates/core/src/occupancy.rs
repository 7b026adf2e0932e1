//! Per-zone binary occupancy as a non-homogeneous Markov chain.
//!
//! The day is cut into equal windows (48 half-hours by default) and each window
//! gets its own transition matrix. States are `(occupied, duration bucket)`
//! pairs, where the bucket records how long the zone has been in its current
//! occupancy state. With the default boundaries `[30, 120]` minutes there are
//! three buckets and six states.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Timestamp;

pub const DEFAULT_INTERVAL_S: i64 = 300;
pub const DEFAULT_WINDOW_MINUTES: u32 = 30;
const ROW_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum OccupancyError {
    #[error("trace for zone '{zone}' spans {days:.2} days, need at least {min_days}")]
    TraceTooShort { zone: String, days: f64, min_days: f64 },
    #[error("trace for zone '{zone}' is not uniformly sampled at index {index}")]
    NonUniform { zone: String, index: usize },
    #[error("trace is empty")]
    Empty,
    #[error("window of {0} minutes does not divide the day")]
    BadWindow(u32),
    #[error("sampling interval {0} s must be positive and divide the window")]
    BadInterval(i64),
    #[error("duration bucket boundaries must be strictly increasing and positive")]
    BadBuckets,
    #[error("office profile: {0}")]
    BadProfile(String),
    #[error("model: {0}")]
    BadModel(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv row {row}: {reason}")]
    Format { row: usize, reason: String },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancySample {
    pub timestamp: Timestamp,
    pub occupied: bool,
}

/// Uniformly sampled occupancy of one zone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyTrace {
    pub zone_id: String,
    pub interval_s: i64,
    pub samples: Vec<OccupancySample>,
}

impl OccupancyTrace {
    pub fn new(
        zone_id: impl Into<String>,
        interval_s: i64,
        samples: Vec<OccupancySample>,
    ) -> Result<Self, OccupancyError> {
        let zone_id = zone_id.into();
        if interval_s <= 0 {
            return Err(OccupancyError::BadInterval(interval_s));
        }
        if let Some(i) = samples
            .windows(2)
            .position(|w| w[1].timestamp.0 - w[0].timestamp.0 != interval_s)
        {
            return Err(OccupancyError::NonUniform {
                zone: zone_id,
                index: i + 1,
            });
        }
        Ok(Self {
            zone_id,
            interval_s,
            samples,
        })
    }

    /// Builds a trace from the occupancy bits of consecutive samples.
    pub fn from_bits(
        zone_id: impl Into<String>,
        start: Timestamp,
        interval_s: i64,
        bits: impl IntoIterator<Item = bool>,
    ) -> Result<Self, OccupancyError> {
        let samples = bits
            .into_iter()
            .enumerate()
            .map(|(k, occupied)| OccupancySample {
                timestamp: start.plus_seconds(k as i64 * interval_s),
                occupied,
            })
            .collect();
        Self::new(zone_id, interval_s, samples)
    }

    /// Resamples event-triggered readings onto a uniform grid by zero-order
    /// hold. The grid starts at the first event rounded down to the interval.
    pub fn from_events(
        zone_id: impl Into<String>,
        events: &[(Timestamp, bool)],
        end: Timestamp,
        interval_s: i64,
    ) -> Result<Self, OccupancyError> {
        if interval_s <= 0 {
            return Err(OccupancyError::BadInterval(interval_s));
        }
        let mut events = events.to_vec();
        events.sort_by_key(|(t, _)| *t);
        let first = events.first().ok_or(OccupancyError::Empty)?.0;
        let start = Timestamp(first.0.div_euclid(interval_s) * interval_s);
        let mut samples = Vec::new();
        let mut idx = 0;
        let mut current = events[0].1;
        let mut t = start;
        while t <= end {
            while idx < events.len() && events[idx].0 <= t {
                current = events[idx].1;
                idx += 1;
            }
            samples.push(OccupancySample {
                timestamp: t,
                occupied: current,
            });
            t = t.plus_seconds(interval_s);
        }
        Self::new(zone_id, interval_s, samples)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Covered time in days, counting the last sample's interval.
    pub fn span_days(&self) -> f64 {
        self.samples.len() as f64 * self.interval_s as f64 / Timestamp::SECONDS_PER_DAY as f64
    }

    pub fn occupied_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().filter(|s| s.occupied).count() as f64 / self.samples.len() as f64
    }

    /// Likelihood of being occupied in each time-of-day window.
    pub fn daily_profile(&self, window_minutes: u32) -> Vec<f64> {
        let windows = (1440 / window_minutes.max(1)) as usize;
        let mut hits = vec![0usize; windows];
        let mut total = vec![0usize; windows];
        for s in &self.samples {
            let w = window_of(s.timestamp, window_minutes);
            total[w] += 1;
            hits[w] += s.occupied as usize;
        }
        hits.iter()
            .zip(&total)
            .map(|(h, t)| if *t == 0 { 0.0 } else { *h as f64 / *t as f64 })
            .collect()
    }

    /// Lengths of the completed occupied spells, in minutes.
    pub fn occupied_durations_min(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut run = 0usize;
        for s in &self.samples {
            if s.occupied {
                run += 1;
            } else if run > 0 {
                out.push(run as f64 * self.interval_s as f64 / 60.0);
                run = 0;
            }
        }
        out
    }
}

fn window_of(t: Timestamp, window_minutes: u32) -> usize {
    (t.minute_of_day() / window_minutes as i64) as usize
}

/// Occupancy bit plus time spent in that state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OccupancyState {
    pub occupied: bool,
    pub duration_min: u32,
}

impl OccupancyState {
    pub fn new(occupied: bool, duration_min: u32) -> Self {
        Self {
            occupied,
            duration_min,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyFitOptions {
    pub window_minutes: u32,
    /// Duration bucket boundaries in minutes; empty means a plain two-state chain.
    pub duration_buckets: Vec<u32>,
    /// Additive (Laplace) smoothing on observed rows. 0 is plain maximum likelihood.
    pub smoothing: f64,
    /// Pseudo-count weight of a within-window prior: each row is shrunk toward
    /// the switching probability of all rows with the same occupancy bit in
    /// that window. 0 is plain maximum likelihood.
    #[serde(default)]
    pub pooling: f64,
    pub min_days: f64,
}

impl Default for OccupancyFitOptions {
    fn default() -> Self {
        Self {
            window_minutes: DEFAULT_WINDOW_MINUTES,
            duration_buckets: vec![30, 120],
            smoothing: 0.0,
            pooling: 0.0,
            min_days: 7.0,
        }
    }
}

/// Row-stochastic transition matrix over the model's state space.
pub type TransitionMatrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyModelMeta {
    pub training_days: f64,
    pub training_samples: usize,
    pub smoothing: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyModel {
    pub zone_id: String,
    pub window_minutes: u32,
    pub interval_s: i64,
    pub duration_buckets: Vec<u32>,
    /// One matrix per time-of-day window; state index is `occupied * buckets + bucket`.
    pub windows: Vec<TransitionMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<OccupancyModelMeta>,
}

fn check_layout(window_minutes: u32, interval_s: i64, buckets: &[u32]) -> Result<(), OccupancyError> {
    if window_minutes == 0 || 1440 % window_minutes != 0 {
        return Err(OccupancyError::BadWindow(window_minutes));
    }
    if interval_s <= 0 || (window_minutes as i64 * 60) % interval_s != 0 {
        return Err(OccupancyError::BadInterval(interval_s));
    }
    if buckets.first().is_some_and(|b| *b == 0) || buckets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(OccupancyError::BadBuckets);
    }
    Ok(())
}

impl OccupancyModel {
    pub fn bucket_count(&self) -> usize {
        self.duration_buckets.len() + 1
    }

    pub fn state_count(&self) -> usize {
        2 * self.bucket_count()
    }

    pub fn window_count(&self) -> usize {
        self.windows.len()
    }

    pub fn bucket_of(&self, duration_min: u32) -> usize {
        self.duration_buckets
            .iter()
            .take_while(|b| duration_min >= **b)
            .count()
    }

    pub fn state_index(&self, state: OccupancyState) -> usize {
        state.occupied as usize * self.bucket_count() + self.bucket_of(state.duration_min)
    }

    pub fn is_occupied_index(&self, index: usize) -> bool {
        index >= self.bucket_count()
    }

    pub fn window_at(&self, t: Timestamp) -> usize {
        window_of(t, self.window_minutes)
    }

    /// A model whose every window is the identity: nothing ever changes.
    pub fn identity(zone_id: impl Into<String>, duration_buckets: Vec<u32>) -> Self {
        let states = 2 * (duration_buckets.len() + 1);
        let eye: TransitionMatrix = (0..states)
            .map(|i| (0..states).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            zone_id: zone_id.into(),
            window_minutes: DEFAULT_WINDOW_MINUTES,
            interval_s: DEFAULT_INTERVAL_S,
            duration_buckets,
            windows: vec![eye; (1440 / DEFAULT_WINDOW_MINUTES) as usize],
            meta: None,
        }
    }

    /// Two-state chain given per-window switching probabilities: `arrive[w]`
    /// is P(unoccupied -> occupied) and `leave[w]` is P(occupied -> unoccupied)
    /// over one sampling interval.
    pub fn two_state(
        zone_id: impl Into<String>,
        interval_s: i64,
        arrive: &[f64],
        leave: &[f64],
    ) -> Result<Self, OccupancyError> {
        if arrive.len() != leave.len() || arrive.is_empty() || 1440 % arrive.len() != 0 {
            return Err(OccupancyError::BadModel(
                "switch probability vectors must share a length dividing 1440".into(),
            ));
        }
        let window_minutes = (1440 / arrive.len()) as u32;
        check_layout(window_minutes, interval_s, &[])?;
        let windows = arrive
            .iter()
            .zip(leave)
            .map(|(&a, &l)| vec![vec![1.0 - a, a], vec![l, 1.0 - l]])
            .collect();
        let m = Self {
            zone_id: zone_id.into(),
            window_minutes,
            interval_s,
            duration_buckets: Vec::new(),
            windows,
            meta: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), OccupancyError> {
        check_layout(self.window_minutes, self.interval_s, &self.duration_buckets)?;
        let expected = (1440 / self.window_minutes) as usize;
        if self.windows.len() != expected {
            return Err(OccupancyError::BadModel(format!(
                "{} windows, expected {expected}",
                self.windows.len()
            )));
        }
        let n = self.state_count();
        for (w, m) in self.windows.iter().enumerate() {
            if m.len() != n || m.iter().any(|r| r.len() != n) {
                return Err(OccupancyError::BadModel(format!("window {w} is not {n}x{n}")));
            }
            for (i, row) in m.iter().enumerate() {
                let sum: f64 = row.iter().sum();
                if row.iter().any(|p| !(0.0..=1.0).contains(p)) || (sum - 1.0).abs() > ROW_TOL {
                    return Err(OccupancyError::BadModel(format!(
                        "window {w} row {i} is not stochastic (sum {sum})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Probability of being occupied after one interval from `state` at time `t`.
    pub fn next_occupied_prob(&self, state: OccupancyState, t: Timestamp) -> f64 {
        let row = &self.windows[self.window_at(t)][self.state_index(state)];
        row[self.bucket_count()..].iter().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("occupancy model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, OccupancyError> {
        let m: OccupancyModel = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }
}

/// Maximum-likelihood fit of the per-window transition matrices.
///
/// Transitions are counted between consecutive samples and attributed to the
/// window of the earlier sample. Rows that were never visited become identity
/// rows.
pub fn fit_occupancy(
    trace: &OccupancyTrace,
    options: &OccupancyFitOptions,
) -> Result<OccupancyModel, OccupancyError> {
    check_layout(options.window_minutes, trace.interval_s, &options.duration_buckets)?;
    if trace.samples.is_empty() {
        return Err(OccupancyError::Empty);
    }
    if let Some(i) = trace
        .samples
        .windows(2)
        .position(|w| w[1].timestamp.0 - w[0].timestamp.0 != trace.interval_s)
    {
        return Err(OccupancyError::NonUniform {
            zone: trace.zone_id.clone(),
            index: i + 1,
        });
    }
    let days = trace.span_days();
    if days + 1e-9 < options.min_days {
        return Err(OccupancyError::TraceTooShort {
            zone: trace.zone_id.clone(),
            days,
            min_days: options.min_days,
        });
    }

    let mut model = OccupancyModel {
        zone_id: trace.zone_id.clone(),
        window_minutes: options.window_minutes,
        interval_s: trace.interval_s,
        duration_buckets: options.duration_buckets.clone(),
        windows: Vec::new(),
        meta: Some(OccupancyModelMeta {
            training_days: days,
            training_samples: trace.samples.len(),
            smoothing: options.smoothing,
        }),
    };
    let n = model.state_count();
    let windows = (1440 / options.window_minutes) as usize;
    let mut counts = vec![vec![vec![0.0f64; n]; n]; windows];

    let interval_min = (trace.interval_s / 60) as u32;
    let mut duration = 0u32;
    let mut prev: Option<(OccupancySample, usize)> = None;
    for s in &trace.samples {
        if let Some((p, _)) = prev {
            duration = if p.occupied == s.occupied {
                duration + interval_min
            } else {
                0
            };
        }
        let idx = model.state_index(OccupancyState::new(s.occupied, duration));
        if let Some((p, pidx)) = prev {
            counts[model.window_at(p.timestamp)][pidx][idx] += 1.0;
        }
        prev = Some((*s, idx));
    }

    if !(options.smoothing >= 0.0 && options.pooling >= 0.0) {
        return Err(OccupancyError::BadModel("smoothing and pooling must be non-negative".into()));
    }
    if options.pooling > 0.0 {
        for m in counts.iter_mut() {
            pool_rows(&model, m, options.pooling);
        }
    }
    model.windows = counts
        .into_iter()
        .map(|m| {
            m.into_iter()
                .enumerate()
                .map(|(i, row)| {
                    let total: f64 = row.iter().sum();
                    if total == 0.0 {
                        (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()
                    } else {
                        let denom = total + options.smoothing * n as f64;
                        row.iter().map(|c| (c + options.smoothing) / denom).collect()
                    }
                })
                .collect()
        })
        .collect();
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub timestamp: Timestamp,
    pub occupied_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyForecast {
    pub zone_id: String,
    pub horizon: Vec<ForecastPoint>,
}

impl OccupancyForecast {
    /// Probability at the far end of the horizon.
    pub fn final_prob(&self) -> f64 {
        self.horizon.last().map(|p| p.occupied_prob).unwrap_or(0.0)
    }
}

// Adds `weight` pseudo-observations to every observed row of one window. The
// pseudo-observations switch bit with the pooled switching rate of all rows
// sharing the bit, landing in the fresh-run state; the rest stay, spread like
// the row's own stays (or on the row's own state if it has none).
fn pool_rows(model: &OccupancyModel, counts: &mut [Vec<f64>], weight: f64) {
    let n = model.state_count();
    let mut switched = [0.0; 2];
    let mut totals = [0.0; 2];
    for (i, row) in counts.iter().enumerate() {
        let bit = model.is_occupied_index(i) as usize;
        for (j, c) in row.iter().enumerate() {
            totals[bit] += c;
            if model.is_occupied_index(j) as usize != bit {
                switched[bit] += c;
            }
        }
    }
    for (i, row) in counts.iter_mut().enumerate() {
        let total: f64 = row.iter().sum();
        if total == 0.0 {
            continue;
        }
        let bit = model.is_occupied_index(i);
        let q = switched[bit as usize] / totals[bit as usize];
        let stays: f64 = (0..n).filter(|&j| model.is_occupied_index(j) == bit).map(|j| row[j]).sum();
        let mut prior = vec![0.0; n];
        prior[model.state_index(OccupancyState::new(!bit, 0))] = q;
        for j in 0..n {
            if model.is_occupied_index(j) == bit {
                prior[j] = if stays > 0.0 {
                    (1.0 - q) * row[j] / stays
                } else if j == i {
                    1.0 - q
                } else {
                    0.0
                };
            }
        }
        for (c, p) in row.iter_mut().zip(prior) {
            *c += weight * p;
        }
    }
}

/// Propagates the state distribution forward one interval at a time and
/// reports the occupied marginal at `now` and after every step up to
/// `horizon_minutes`.
pub fn forecast(
    model: &OccupancyModel,
    current: OccupancyState,
    now: Timestamp,
    horizon_minutes: u32,
) -> OccupancyForecast {
    let n = model.state_count();
    let occupied_mass = |d: &[f64]| -> f64 {
        d[model.bucket_count()..].iter().sum::<f64>().clamp(0.0, 1.0)
    };
    let mut dist = vec![0.0; n];
    dist[model.state_index(current)] = 1.0;
    let mut horizon = vec![ForecastPoint {
        timestamp: now,
        occupied_prob: occupied_mass(&dist),
    }];
    let steps = horizon_minutes as i64 * 60 / model.interval_s;
    let mut t = now;
    for _ in 0..steps {
        let m = &model.windows[model.window_at(t)];
        let mut next = vec![0.0; n];
        for (i, p) in dist.iter().enumerate() {
            if *p == 0.0 {
                continue;
            }
            for (j, q) in m[i].iter().enumerate() {
                next[j] += p * q;
            }
        }
        dist = next;
        t = t.plus_seconds(model.interval_s);
        horizon.push(ForecastPoint {
            timestamp: t,
            occupied_prob: occupied_mass(&dist),
        });
    }
    OccupancyForecast {
        zone_id: model.zone_id.clone(),
        horizon,
    }
}

/// Step-by-step sampler of a zone's occupancy.
///
/// The next bit is drawn from the occupied marginal of the current state's row;
/// the duration bucket then follows from the realized time in state, so
/// generated traces refit to the chain they came from.
#[derive(Debug, Clone)]
pub struct OccupancySimulator {
    state: OccupancyState,
    rng: ChaCha8Rng,
}

impl OccupancySimulator {
    pub fn new(initial: OccupancyState, seed: u64) -> Self {
        Self {
            state: initial,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn state(&self) -> OccupancyState {
        self.state
    }

    /// Advances one sampling interval from time `t` and returns the new state.
    pub fn step(&mut self, model: &OccupancyModel, t: Timestamp) -> OccupancyState {
        let p = model.next_occupied_prob(self.state, t);
        let occupied = self.rng.random::<f64>() < p;
        let interval_min = (model.interval_s / 60) as u32;
        self.state = if occupied == self.state.occupied {
            OccupancyState::new(occupied, self.state.duration_min.saturating_add(interval_min))
        } else {
            OccupancyState::new(occupied, 0)
        };
        self.state
    }
}

/// Samples `days` of occupancy starting at midnight of day 0.
pub fn simulate(
    model: &OccupancyModel,
    initial: OccupancyState,
    seed: u64,
    days: u32,
) -> OccupancyTrace {
    let mut sim = OccupancySimulator::new(initial, seed);
    let steps = days as i64 * Timestamp::SECONDS_PER_DAY / model.interval_s;
    let mut samples = Vec::with_capacity(steps as usize);
    let mut t = Timestamp(0);
    samples.push(OccupancySample {
        timestamp: t,
        occupied: initial.occupied,
    });
    for _ in 1..steps {
        let s = sim.step(model, t);
        t = t.plus_seconds(model.interval_s);
        samples.push(OccupancySample {
            timestamp: t,
            occupied: s.occupied,
        });
    }
    OccupancyTrace {
        zone_id: model.zone_id.clone(),
        interval_s: model.interval_s,
        samples,
    }
}

/// Parameters of the synthetic office-worker schedule. Times are hours of day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfficeProfile {
    /// Probability the zone is used at all on a given workday.
    pub attendance_prob: f64,
    pub arrival_mean_h: f64,
    pub arrival_std_h: f64,
    pub departure_mean_h: f64,
    pub departure_std_h: f64,
    pub lunch_break_prob: f64,
    pub lunch_start_mean_h: f64,
    pub lunch_duration_mean_min: f64,
    /// Expected absences (meetings elsewhere) per hour of presence.
    pub meeting_rate_per_h: f64,
    pub meeting_duration_mean_min: f64,
    /// Leave days 5 and 6 of every week empty.
    #[serde(default)]
    pub weekends_off: bool,
}

impl Default for OfficeProfile {
    fn default() -> Self {
        Self {
            attendance_prob: 0.95,
            arrival_mean_h: 8.5,
            arrival_std_h: 0.5,
            departure_mean_h: 17.0,
            departure_std_h: 0.6,
            lunch_break_prob: 0.7,
            lunch_start_mean_h: 12.25,
            lunch_duration_mean_min: 40.0,
            meeting_rate_per_h: 0.2,
            meeting_duration_mean_min: 40.0,
            weekends_off: false,
        }
    }
}

impl OfficeProfile {
    pub fn validate(&self) -> Result<(), OccupancyError> {
        let bad = |m: &str| Err(OccupancyError::BadProfile(m.into()));
        let all_finite = [
            self.attendance_prob,
            self.arrival_mean_h,
            self.arrival_std_h,
            self.departure_mean_h,
            self.departure_std_h,
            self.lunch_break_prob,
            self.lunch_start_mean_h,
            self.lunch_duration_mean_min,
            self.meeting_rate_per_h,
            self.meeting_duration_mean_min,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return bad("non-finite parameter");
        }
        if self.arrival_mean_h >= self.departure_mean_h {
            return bad("arrival must precede departure");
        }
        if !(0.0..=24.0).contains(&self.arrival_mean_h) || !(0.0..=24.0).contains(&self.departure_mean_h) {
            return bad("arrival and departure must be hours of day");
        }
        if !(0.0..=1.0).contains(&self.attendance_prob) || !(0.0..=1.0).contains(&self.lunch_break_prob) {
            return bad("probabilities must lie in [0, 1]");
        }
        if self.arrival_std_h < 0.0
            || self.departure_std_h < 0.0
            || self.meeting_rate_per_h < 0.0
            || self.lunch_duration_mean_min <= 0.0
            || self.meeting_duration_mean_min <= 0.0
        {
            return bad("spreads and rates must be non-negative, durations positive");
        }
        Ok(())
    }
}

/// Synthetic office occupancy: arrival and departure jitter, an optional lunch
/// break and random meeting absences, sampled every `interval_s` seconds.
pub fn generate_office_trace(
    zone_id: impl Into<String>,
    profile: &OfficeProfile,
    seed: u64,
    days: u32,
    interval_s: i64,
) -> Result<OccupancyTrace, OccupancyError> {
    profile.validate()?;
    if interval_s <= 0 || Timestamp::SECONDS_PER_DAY % interval_s != 0 {
        return Err(OccupancyError::BadInterval(interval_s));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |mean: f64, std: f64| Normal::new(mean, std.max(1e-12)).expect("valid normal");
    let arrival = normal(profile.arrival_mean_h, profile.arrival_std_h);
    let departure = normal(profile.departure_mean_h, profile.departure_std_h);
    let lunch_start = normal(profile.lunch_start_mean_h, 0.35);
    let lunch_len = Exp::new(1.0 / profile.lunch_duration_mean_min).expect("positive rate");
    let meeting_len = Exp::new(1.0 / profile.meeting_duration_mean_min).expect("positive rate");

    let per_day = (Timestamp::SECONDS_PER_DAY / interval_s) as usize;
    let mut bits = Vec::with_capacity(per_day * days as usize);
    for day in 0..days {
        let workday = !(profile.weekends_off && day % 7 >= 5);
        // Draw every variate each day so the stream stays aligned across days.
        let attend = rng.random::<f64>() < profile.attendance_prob;
        let a = arrival.sample(&mut rng).clamp(4.0, 14.0);
        let d = departure.sample(&mut rng).clamp(a + 1.0, 23.5);
        let has_lunch = rng.random::<f64>() < profile.lunch_break_prob;
        let ls = lunch_start.sample(&mut rng);
        let ll = lunch_len.sample(&mut rng).clamp(10.0, 90.0) / 60.0;

        let mut absences: Vec<(f64, f64)> = Vec::new();
        if has_lunch {
            absences.push((ls, ls + ll));
        }
        if profile.meeting_rate_per_h > 0.0 {
            let gap = Exp::new(profile.meeting_rate_per_h).expect("positive rate");
            let mut t = a + gap.sample(&mut rng);
            while t < d {
                let len = meeting_len.sample(&mut rng).clamp(10.0, 120.0) / 60.0;
                absences.push((t, t + len));
                t += len + gap.sample(&mut rng);
            }
        }
        for k in 0..per_day {
            let h = (k as i64 * interval_s) as f64 / 3600.0;
            let present = workday
                && attend
                && h >= a
                && h < d
                && !absences.iter().any(|(s, e)| h >= *s && h < *e);
            bits.push(present);
        }
    }
    OccupancyTrace::from_bits(zone_id, Timestamp(0), interval_s, bits)
}

/// Reads `timestamp_iso8601,zone_id,occupied` rows, one trace per zone in
/// order of first appearance. Rows may be event-triggered; each zone is
/// resampled onto a uniform `interval_s` grid by zero-order hold.
pub fn read_traces_csv<R: Read>(reader: R, interval_s: i64) -> Result<Vec<OccupancyTrace>, OccupancyError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut order: Vec<String> = Vec::new();
    let mut events: BTreeMap<String, Vec<(Timestamp, bool)>> = BTreeMap::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let err = |reason: &str| OccupancyError::Format {
            row: row + 1,
            reason: reason.into(),
        };
        let t = rec
            .get(0)
            .and_then(Timestamp::parse)
            .ok_or_else(|| err("bad timestamp"))?;
        let zone = rec.get(1).ok_or_else(|| err("missing zone"))?.trim().to_string();
        let occupied = match rec.get(2).map(str::trim) {
            Some("1") | Some("true") => true,
            Some("0") | Some("false") => false,
            _ => return Err(err("occupied must be 0 or 1")),
        };
        if !events.contains_key(&zone) {
            order.push(zone.clone());
        }
        events.entry(zone).or_default().push((t, occupied));
    }
    order
        .into_iter()
        .map(|zone| {
            let ev = &events[&zone];
            let end = ev.iter().map(|(t, _)| *t).max().expect("non-empty");
            OccupancyTrace::from_events(zone, ev, end, interval_s)
        })
        .collect()
}

pub fn write_traces_csv<W: Write>(writer: W, traces: &[OccupancyTrace]) -> Result<(), OccupancyError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["timestamp_iso8601", "zone_id", "occupied"])?;
    for tr in traces {
        for s in &tr.samples {
            w.write_record([
                s.timestamp.to_iso8601().as_str(),
                tr.zone_id.as_str(),
                if s.occupied { "1" } else { "0" },
            ])?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
