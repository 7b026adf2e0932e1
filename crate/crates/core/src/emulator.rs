//! Lumped-parameter office building twin.
//!
//! Each zone is a single RC node cooled by a proportional controller that
//! saturates at the zone's cooling capacity. Lights and PCs draw power during
//! the operating schedule and whenever the zone is occupied, unless a command
//! pins them to another setting. Chiller power follows an affine truth model in
//! outdoor temperature and set-points plus Gaussian noise. Occupancy per zone
//! is sampled from a fitted Markov model.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chiller::{ChillerModel, ChillerObservation};
use crate::domain::{Appliance, ApplianceKind, Building, DomainError, Timestamp};
use crate::occupancy::{
    fit_occupancy, generate_office_trace, OccupancyError, OccupancyFitOptions, OccupancyModel,
    OccupancySimulator, OccupancyState, OccupancyTrace, OfficeProfile, DEFAULT_INTERVAL_S,
};

pub const MIN_DT_S: i64 = 10;
pub const MAX_DT_S: i64 = 900;

#[derive(Debug, Error)]
pub enum EmulatorError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Occupancy(#[from] OccupancyError),
    #[error("time step {0} s outside [10, 900] s")]
    StepOutOfRange(i64),
    #[error("time step {dt} s violates the stability bound 0.5*C*R = {bound} s")]
    Unstable { dt: i64, bound: f64 },
    #[error("unknown appliance '{0}'")]
    UnknownAppliance(String),
    #[error("appliance '{appliance}' has no setting {index}")]
    UnknownSetting { appliance: String, index: usize },
    #[error("weather profile: {0}")]
    Weather(String),
    #[error("config: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherPoint {
    pub timestamp: Timestamp,
    pub temp_c: f64,
}

/// Outdoor temperature over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeatherProfile {
    Constant { temp_c: f64 },
    /// Daily cycle: a half-cosine rise from `min_c` at `trough_hour` to `max_c`
    /// at `peak_hour`, then a half-cosine fall back to the next trough.
    Diurnal {
        min_c: f64,
        max_c: f64,
        peak_hour: f64,
        #[serde(default)]
        trough_hour: f64,
    },
    /// Samples joined by straight lines; undefined outside the first and last.
    Series { points: Vec<WeatherPoint> },
}

impl Default for WeatherProfile {
    fn default() -> Self {
        WeatherProfile::Diurnal {
            min_c: 28.0,
            max_c: 38.0,
            peak_hour: 15.0,
            trough_hour: 0.0,
        }
    }
}

impl WeatherProfile {
    pub fn validate(&self) -> Result<(), EmulatorError> {
        let bad = |m: &str| Err(EmulatorError::Weather(m.into()));
        match self {
            WeatherProfile::Constant { temp_c } if !temp_c.is_finite() => bad("non-finite temperature"),
            WeatherProfile::Diurnal {
                min_c,
                max_c,
                peak_hour,
                trough_hour,
            } => {
                if !(min_c.is_finite() && max_c.is_finite() && min_c <= max_c) {
                    return bad("need finite min <= max");
                }
                let gap = (peak_hour - trough_hour).rem_euclid(24.0);
                if !(0.0..24.0).contains(peak_hour) || !(0.0..24.0).contains(trough_hour) || gap == 0.0 {
                    return bad("peak and trough must be distinct hours of day");
                }
                Ok(())
            }
            WeatherProfile::Series { points } => {
                if points.is_empty() {
                    return bad("empty series");
                }
                if points.windows(2).any(|w| w[1].timestamp <= w[0].timestamp) {
                    return bad("series timestamps must increase");
                }
                if points.iter().any(|p| !p.temp_c.is_finite()) {
                    return bad("non-finite temperature");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Whether the profile is defined on all of `[from, to]`.
    pub fn covers(&self, from: Timestamp, to: Timestamp) -> bool {
        match self {
            WeatherProfile::Series { points } => match (points.first(), points.last()) {
                (Some(a), Some(b)) => a.timestamp <= from && to <= b.timestamp,
                _ => false,
            },
            _ => true,
        }
    }

    pub fn temp_at(&self, t: Timestamp) -> Option<f64> {
        match self {
            WeatherProfile::Constant { temp_c } => Some(*temp_c),
            WeatherProfile::Diurnal {
                min_c,
                max_c,
                peak_hour,
                trough_hour,
            } => {
                let rise = (peak_hour - trough_hour).rem_euclid(24.0);
                let since_trough = (t.hour_of_day() - trough_hour).rem_euclid(24.0);
                let frac = if since_trough <= rise {
                    (1.0 - (PI * since_trough / rise).cos()) / 2.0
                } else {
                    (1.0 + (PI * (since_trough - rise) / (24.0 - rise)).cos()) / 2.0
                };
                Some(min_c + (max_c - min_c) * frac)
            }
            WeatherProfile::Series { points } => {
                let i = points.partition_point(|p| p.timestamp <= t);
                if i == 0 {
                    return None;
                }
                let a = points[i - 1];
                if a.timestamp == t {
                    return Some(a.temp_c);
                }
                let b = points.get(i)?;
                let w = (t.0 - a.timestamp.0) as f64 / (b.timestamp.0 - a.timestamp.0) as f64;
                Some(a.temp_c + w * (b.temp_c - a.temp_c))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalParams {
    pub capacitance_j_per_k: f64,
    pub resistance_k_per_w: f64,
    /// Proportional cooling gain, W per K above set-point.
    pub hvac_gain_w_per_k: f64,
    pub hvac_capacity_w: f64,
    pub occupant_gain_w: f64,
    /// Initial zone temperature; defaults to each zone's desired temperature.
    #[serde(default)]
    pub initial_temp_c: Option<f64>,
}

impl Default for ThermalParams {
    fn default() -> Self {
        Self {
            capacitance_j_per_k: 5e6,
            resistance_k_per_w: 2e-3,
            hvac_gain_w_per_k: 5e4,
            hvac_capacity_w: 2e4,
            occupant_gain_w: 120.0,
            initial_temp_c: None,
        }
    }
}

/// Where the emulator's occupancy comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OccupancySource {
    /// Office schedules that differ a little from zone to zone.
    Office,
    /// One profile for every zone, or one per zone in building order.
    Profiles { profiles: Vec<OfficeProfile> },
    /// Every zone stays occupied (or empty) throughout.
    Constant { occupied: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorConfig {
    pub seed: u64,
    pub start: Timestamp,
    pub dt_s: i64,
    pub thermal: ThermalParams,
    pub weather: WeatherProfile,
    pub occupancy: OccupancySource,
    /// Days of synthetic schedule used to fit each zone's occupancy chain.
    pub occupancy_training_days: u32,
    /// Lights and PCs are on between these hours regardless of occupancy.
    pub schedule_start_h: f64,
    pub schedule_end_h: f64,
    pub chiller_cop: f64,
    pub chiller_base_w: f64,
    /// Noise standard deviation as a fraction of nominal chiller power.
    pub chiller_noise_frac: f64,
    /// Outdoor temperature at which nominal chiller power is evaluated.
    pub nominal_outdoor_c: f64,
    /// Overrides the chiller truth model derived from the thermal parameters.
    #[serde(default)]
    pub chiller_truth: Option<ChillerModel>,
}

impl Default for EmulatorConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            start: Timestamp(0),
            dt_s: 60,
            thermal: ThermalParams::default(),
            weather: WeatherProfile::default(),
            occupancy: OccupancySource::Office,
            occupancy_training_days: 28,
            schedule_start_h: 7.0,
            schedule_end_h: 19.0,
            chiller_cop: 10.0 / 3.0,
            chiller_base_w: 2000.0,
            chiller_noise_frac: 0.02,
            nominal_outdoor_c: 35.0,
            chiller_truth: None,
        }
    }
}

impl EmulatorConfig {
    pub fn from_json(text: &str) -> Result<Self, EmulatorError> {
        serde_json::from_str(text).map_err(|e| EmulatorError::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), EmulatorError> {
        let t = &self.thermal;
        let positive = [
            t.capacitance_j_per_k,
            t.resistance_k_per_w,
            self.chiller_cop,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(EmulatorError::Config(
                "capacitance, resistance and COP must be positive".into(),
            ));
        }
        let non_negative = [
            t.hvac_gain_w_per_k,
            t.hvac_capacity_w,
            t.occupant_gain_w,
            self.chiller_noise_frac,
        ];
        if non_negative.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(EmulatorError::Config(
                "gains, capacity and noise must be non-negative".into(),
            ));
        }
        check_dt(self.dt_s, t)?;
        self.weather.validate()
    }

    /// Nominal office schedule for the zone at position `index`.
    pub fn office_profile(index: usize) -> OfficeProfile {
        OfficeProfile {
            attendance_prob: 0.92,
            arrival_mean_h: 7.75 + 0.35 * (index % 5) as f64,
            departure_mean_h: 16.25 + 0.4 * (index % 4) as f64,
            meeting_rate_per_h: 0.3,
            ..OfficeProfile::default()
        }
    }
}

fn check_dt(dt_s: i64, t: &ThermalParams) -> Result<(), EmulatorError> {
    if !(MIN_DT_S..=MAX_DT_S).contains(&dt_s) {
        return Err(EmulatorError::StepOutOfRange(dt_s));
    }
    let bound = 0.5 * t.capacitance_j_per_k * t.resistance_k_per_w;
    if dt_s as f64 >= bound {
        return Err(EmulatorError::Unstable { dt: dt_s, bound });
    }
    Ok(())
}

/// Chiller truth implied by the thermal parameters: each zone's envelope load
/// `(T_out - T_set) / R` plus nominal internal gains, divided by the COP.
pub fn derived_chiller_truth(building: &Building, config: &EmulatorConfig) -> ChillerModel {
    let per_zone = 1.0 / (config.thermal.resistance_k_per_w * config.chiller_cop);
    let zone_ids = building.zone_ids();
    let gains: f64 = building
        .zones()
        .map(|z| {
            config.thermal.occupant_gain_w
                + z.appliances
                    .iter()
                    .map(|a| a.rated_power_w * a.baseline_value())
                    .sum::<f64>()
        })
        .sum();
    ChillerModel {
        beta0: config.chiller_base_w + gains / config.chiller_cop,
        beta_out: per_zone * zone_ids.len() as f64,
        beta_z: vec![-per_zone; zone_ids.len()],
        zone_ids,
        fit_stats: None,
    }
}

/// Request to the emulator, applied at the next step boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Command {
    /// Pin an appliance to one of its settings.
    Set { appliance_id: String, setting_index: usize },
    /// Return an appliance to its uncommanded behavior.
    Release { appliance_id: String },
    ReleaseAll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneSnapshot {
    pub zone_id: String,
    pub temp_c: f64,
    pub setpoint_c: f64,
    pub occupied: bool,
    pub occupied_for_min: u32,
    pub hvac_cooling_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplianceSnapshot {
    pub appliance_id: String,
    pub zone_id: String,
    pub kind: ApplianceKind,
    pub setting_index: usize,
    pub setting_value: f64,
    pub commanded: bool,
    pub power_w: f64,
    /// Power the appliance would draw with no command in force.
    pub demand_w: f64,
}

/// Measurement record of one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub clock: Timestamp,
    pub outdoor_temp_c: f64,
    pub zones: Vec<ZoneSnapshot>,
    pub appliances: Vec<ApplianceSnapshot>,
    pub chiller_power_w: f64,
    pub total_power_w: f64,
}

impl Snapshot {
    pub fn zone(&self, id: &str) -> Option<&ZoneSnapshot> {
        self.zones.iter().find(|z| z.zone_id == id)
    }

    pub fn appliance(&self, id: &str) -> Option<&ApplianceSnapshot> {
        self.appliances.iter().find(|a| a.appliance_id == id)
    }

    pub fn occupied_fraction(&self) -> f64 {
        if self.zones.is_empty() {
            return 0.0;
        }
        self.zones.iter().filter(|z| z.occupied).count() as f64 / self.zones.len() as f64
    }

    pub fn appliance_power_w(&self) -> f64 {
        self.appliances.iter().map(|a| a.power_w).sum()
    }
}

#[derive(Debug, Clone)]
struct Knob {
    zone: usize,
    appliance: Appliance,
}

/// Single-owner building simulator. Cloning yields an independent twin with
/// identical random streams.
#[derive(Debug, Clone)]
pub struct Emulator {
    building: Building,
    config: EmulatorConfig,
    truth: ChillerModel,
    noise: Normal<f64>,
    knobs: Vec<Knob>,
    occupancy_models: Vec<OccupancyModel>,
    occupancy: Vec<OccupancySimulator>,
    temps: Vec<f64>,
    cooling: Vec<f64>,
    commands: BTreeMap<String, usize>,
    inbox: Vec<Command>,
    noise_rng: ChaCha8Rng,
    clock: Timestamp,
    snapshot: Snapshot,
}

fn stream_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer keeps nearby seeds far apart
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn zone_occupancy_models(
    building: &Building,
    config: &EmulatorConfig,
) -> Result<Vec<OccupancyModel>, EmulatorError> {
    let zones: Vec<String> = building.zone_ids();
    let profiles: Vec<OfficeProfile> = match &config.occupancy {
        OccupancySource::Constant { .. } => {
            return Ok(zones
                .iter()
                .map(|z| OccupancyModel::identity(z.clone(), vec![30, 120]))
                .collect())
        }
        OccupancySource::Office => (0..zones.len()).map(EmulatorConfig::office_profile).collect(),
        OccupancySource::Profiles { profiles } if profiles.len() == 1 => vec![profiles[0].clone(); zones.len()],
        OccupancySource::Profiles { profiles } if profiles.len() == zones.len() => profiles.clone(),
        OccupancySource::Profiles { profiles } => {
            return Err(EmulatorError::Config(format!(
                "{} occupancy profiles for {} zones",
                profiles.len(),
                zones.len()
            )))
        }
    };
    let options = OccupancyFitOptions {
        min_days: 1.0,
        ..OccupancyFitOptions::default()
    };
    zones
        .iter()
        .zip(profiles)
        .enumerate()
        .map(|(k, (z, p))| {
            let trace = generate_office_trace(
                z.clone(),
                &p,
                stream_seed(config.seed, 1000 + k as u64),
                config.occupancy_training_days.max(1),
                DEFAULT_INTERVAL_S,
            )?;
            Ok(fit_occupancy(&trace, &options)?)
        })
        .collect()
}

impl Emulator {
    pub fn new(building: Building, config: EmulatorConfig) -> Result<Self, EmulatorError> {
        building.validate()?;
        config.validate()?;
        if !config.weather.covers(config.start, config.start) {
            return Err(EmulatorError::Weather("profile does not cover the start time".into()));
        }
        let truth = match &config.chiller_truth {
            Some(m) if m.zone_ids == building.zone_ids() => m.clone(),
            Some(_) => {
                return Err(EmulatorError::Config(
                    "chiller truth zones differ from the building".into(),
                ))
            }
            None => derived_chiller_truth(&building, &config),
        };
        let desired: Vec<f64> = building.zones().map(|z| z.desired_temp_c).collect();
        let nominal = truth
            .predict_power(config.nominal_outdoor_c, &desired)
            .expect("truth matches building");
        let noise = Normal::new(0.0, (config.chiller_noise_frac * nominal.abs()).max(0.0))
            .map_err(|e| EmulatorError::Config(e.to_string()))?;

        let occupancy_models = zone_occupancy_models(&building, &config)?;
        let initial_occupied = matches!(config.occupancy, OccupancySource::Constant { occupied: true });
        let occupancy = (0..occupancy_models.len())
            .map(|k| {
                OccupancySimulator::new(
                    OccupancyState::new(initial_occupied, 600),
                    stream_seed(config.seed, 2000 + k as u64),
                )
            })
            .collect();
        let knobs = building
            .zones()
            .enumerate()
            .flat_map(|(zi, z)| {
                z.appliances.iter().map(move |a| Knob {
                    zone: zi,
                    appliance: a.clone(),
                })
            })
            .collect();
        let temps = desired
            .iter()
            .map(|d| config.thermal.initial_temp_c.unwrap_or(*d))
            .collect();
        let n_zones = desired.len();
        let mut emu = Self {
            noise_rng: ChaCha8Rng::seed_from_u64(stream_seed(config.seed, 7)),
            clock: config.start,
            building,
            truth,
            noise,
            knobs,
            occupancy_models,
            occupancy,
            temps,
            cooling: vec![0.0; n_zones],
            commands: BTreeMap::new(),
            inbox: Vec::new(),
            snapshot: Snapshot {
                clock: config.start,
                outdoor_temp_c: 0.0,
                zones: Vec::new(),
                appliances: Vec::new(),
                chiller_power_w: 0.0,
                total_power_w: 0.0,
            },
            config,
        };
        emu.snapshot = emu.measure(0.0);
        Ok(emu)
    }

    pub fn building(&self) -> &Building {
        &self.building
    }

    pub fn config(&self) -> &EmulatorConfig {
        &self.config
    }

    pub fn clock(&self) -> Timestamp {
        self.clock
    }

    pub fn snapshot(&self) -> &Snapshot {
        &self.snapshot
    }

    pub fn truth_chiller(&self) -> &ChillerModel {
        &self.truth
    }

    /// Standard deviation of the chiller measurement noise, W.
    pub fn noise_sigma_w(&self) -> f64 {
        self.noise.std_dev()
    }

    pub fn occupancy_models(&self) -> &[OccupancyModel] {
        &self.occupancy_models
    }

    pub fn occupancy_state(&self, zone_index: usize) -> OccupancyState {
        self.occupancy[zone_index].state()
    }

    /// Commands in force, appliance id to setting index.
    pub fn active_commands(&self) -> &BTreeMap<String, usize> {
        &self.commands
    }

    /// Replaces the outdoor temperature profile; it must cover `[now, until]`.
    pub fn inject_weather(&mut self, profile: WeatherProfile, until: Timestamp) -> Result<(), EmulatorError> {
        profile.validate()?;
        if !profile.covers(self.clock, until) {
            return Err(EmulatorError::Weather(format!(
                "profile does not cover {} to {}",
                self.clock, until
            )));
        }
        self.config.weather = profile;
        self.snapshot.outdoor_temp_c = self.outdoor_temp(self.clock)?;
        Ok(())
    }

    /// Queues a command for the next step after checking it names a real
    /// appliance and setting.
    pub fn submit(&mut self, command: Command) -> Result<(), EmulatorError> {
        match &command {
            Command::Set {
                appliance_id,
                setting_index,
            } => {
                let knob = self
                    .knob(appliance_id)
                    .ok_or_else(|| EmulatorError::UnknownAppliance(appliance_id.clone()))?;
                if *setting_index >= knob.appliance.settings.len() {
                    return Err(EmulatorError::UnknownSetting {
                        appliance: appliance_id.clone(),
                        index: *setting_index,
                    });
                }
            }
            Command::Release { appliance_id } => {
                self.knob(appliance_id)
                    .ok_or_else(|| EmulatorError::UnknownAppliance(appliance_id.clone()))?;
            }
            Command::ReleaseAll => {}
        }
        self.inbox.push(command);
        Ok(())
    }

    fn knob(&self, id: &str) -> Option<&Knob> {
        self.knobs.iter().find(|k| k.appliance.id == id)
    }

    fn outdoor_temp(&self, t: Timestamp) -> Result<f64, EmulatorError> {
        self.config
            .weather
            .temp_at(t)
            .ok_or_else(|| EmulatorError::Weather(format!("no outdoor temperature at {t}")))
    }

    fn apply_inbox(&mut self) {
        for cmd in std::mem::take(&mut self.inbox) {
            match cmd {
                Command::Set {
                    appliance_id,
                    setting_index,
                } => {
                    self.commands.insert(appliance_id, setting_index);
                }
                Command::Release { appliance_id } => {
                    self.commands.remove(&appliance_id);
                }
                Command::ReleaseAll => self.commands.clear(),
            }
        }
    }

    fn in_schedule(&self, t: Timestamp) -> bool {
        let h = t.hour_of_day();
        h >= self.config.schedule_start_h && h < self.config.schedule_end_h
    }

    fn effective_setting(&self, knob: &Knob) -> (usize, bool) {
        match self.commands.get(&knob.appliance.id) {
            Some(i) => (*i, true),
            None => (knob.appliance.baseline_index().unwrap_or(0), false),
        }
    }

    fn appliance_snapshots(&self, t: Timestamp) -> Vec<ApplianceSnapshot> {
        let schedule = self.in_schedule(t);
        self.knobs
            .iter()
            .map(|k| {
                let (idx, commanded) = self.effective_setting(k);
                let value = k.appliance.settings[idx].value;
                let on = schedule || self.occupancy[k.zone].state().occupied;
                let (power, demand) = match k.appliance.kind {
                    ApplianceKind::HvacSetpoint => (0.0, 0.0),
                    _ if on => (
                        k.appliance.rated_power_w * value,
                        k.appliance.rated_power_w * k.appliance.baseline_value(),
                    ),
                    _ => (0.0, 0.0),
                };
                ApplianceSnapshot {
                    appliance_id: k.appliance.id.clone(),
                    zone_id: self.building.zones().nth(k.zone).map(|z| z.id.clone()).unwrap_or_default(),
                    kind: k.appliance.kind,
                    setting_index: idx,
                    setting_value: value,
                    commanded,
                    power_w: power,
                    demand_w: demand,
                }
            })
            .collect()
    }

    fn setpoints(&self) -> Vec<f64> {
        let mut sp: Vec<f64> = self.building.zones().map(|z| z.desired_temp_c).collect();
        for k in &self.knobs {
            if k.appliance.kind == ApplianceKind::HvacSetpoint {
                let (idx, _) = self.effective_setting(k);
                sp[k.zone] += k.appliance.settings[idx].value;
            }
        }
        sp
    }

    fn measure(&self, noise_w: f64) -> Snapshot {
        let t = self.clock;
        let outdoor = self.outdoor_temp(t).unwrap_or(f64::NAN);
        let setpoints = self.setpoints();
        let appliances = self.appliance_snapshots(t);
        let chiller = (self
            .truth
            .predict_power(outdoor, &setpoints)
            .expect("truth matches building")
            + noise_w)
            .max(0.0);
        let zones = self
            .building
            .zones()
            .enumerate()
            .map(|(i, z)| {
                let s = self.occupancy[i].state();
                ZoneSnapshot {
                    zone_id: z.id.clone(),
                    temp_c: self.temps[i],
                    setpoint_c: setpoints[i],
                    occupied: s.occupied,
                    occupied_for_min: s.duration_min,
                    hvac_cooling_w: self.cooling[i],
                }
            })
            .collect();
        let total = chiller + appliances.iter().map(|a| a.power_w).sum::<f64>();
        Snapshot {
            clock: t,
            outdoor_temp_c: outdoor,
            zones,
            appliances,
            chiller_power_w: chiller,
            total_power_w: total,
        }
    }

    /// Advances by the configured time step.
    pub fn step(&mut self) -> Result<&Snapshot, EmulatorError> {
        self.step_by(self.config.dt_s)
    }

    /// Applies queued commands, integrates zone temperatures over `dt_s`,
    /// advances occupancy and returns the new measurement.
    pub fn step_by(&mut self, dt_s: i64) -> Result<&Snapshot, EmulatorError> {
        check_dt(dt_s, &self.config.thermal)?;
        let end = self.clock.plus_seconds(dt_s);
        let outdoor = self.outdoor_temp(self.clock)?;
        self.outdoor_temp(end)?;
        self.apply_inbox();

        let th = self.config.thermal.clone();
        let setpoints = self.setpoints();
        let appliances = self.appliance_snapshots(self.clock);
        let mut gains = vec![0.0; self.temps.len()];
        for (k, a) in self.knobs.iter().zip(&appliances) {
            gains[k.zone] += a.power_w;
        }
        for (i, g) in gains.iter_mut().enumerate() {
            if self.occupancy[i].state().occupied {
                *g += th.occupant_gain_w;
            }
        }
        // Explicit Euler with sub-steps well inside the stiffness limit of the
        // proportional controller.
        let h_max = 0.5 * th.capacitance_j_per_k / (1.0 / th.resistance_k_per_w + th.hvac_gain_w_per_k);
        let sub = ((dt_s as f64 / h_max).ceil() as usize).max(1);
        let h = dt_s as f64 / sub as f64;
        for (i, temp) in self.temps.iter_mut().enumerate() {
            let mut q_sum = 0.0;
            for _ in 0..sub {
                let q = (th.hvac_gain_w_per_k * (*temp - setpoints[i])).clamp(0.0, th.hvac_capacity_w);
                let flow = (outdoor - *temp) / th.resistance_k_per_w + gains[i] - q;
                *temp += h / th.capacitance_j_per_k * flow;
                q_sum += q;
            }
            self.cooling[i] = q_sum / sub as f64;
        }

        // Occupancy moves on its own grid.
        let interval = DEFAULT_INTERVAL_S;
        let mut boundary = (self.clock.0.div_euclid(interval) + 1) * interval;
        while boundary <= end.0 {
            let from = Timestamp(boundary - interval);
            for (sim, model) in self.occupancy.iter_mut().zip(&self.occupancy_models) {
                sim.step(model, from);
            }
            boundary += interval;
        }

        self.clock = end;
        let noise = self.noise.sample(&mut self.noise_rng);
        self.snapshot = self.measure(noise);
        Ok(&self.snapshot)
    }

    /// Steps until the clock reaches `until`, returning every snapshot.
    pub fn run_until(&mut self, until: Timestamp) -> Result<Vec<Snapshot>, EmulatorError> {
        let mut out = Vec::new();
        while self.clock < until {
            let dt = self.config.dt_s.min(until.0 - self.clock.0).max(MIN_DT_S);
            out.push(self.step_by(dt)?.clone());
        }
        Ok(out)
    }
}

/// Chiller regression rows from a snapshot log.
pub fn snapshots_to_observations(snapshots: &[Snapshot]) -> Vec<ChillerObservation> {
    snapshots
        .iter()
        .map(|s| ChillerObservation {
            timestamp: s.clock,
            chiller_power_w: s.chiller_power_w,
            outdoor_temp_c: s.outdoor_temp_c,
            setpoints_c: s.zones.iter().map(|z| z.setpoint_c).collect(),
        })
        .collect()
}

/// Per-zone occupancy traces from a snapshot log, resampled to `interval_s`.
pub fn snapshots_to_traces(snapshots: &[Snapshot], interval_s: i64) -> Result<Vec<OccupancyTrace>, EmulatorError> {
    let Some(first) = snapshots.first() else {
        return Ok(Vec::new());
    };
    let end = snapshots.last().map(|s| s.clock).unwrap_or(first.clock);
    first
        .zones
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let events: Vec<(Timestamp, bool)> = snapshots
                .iter()
                .map(|s| (s.clock, s.zones[i].occupied))
                .collect();
            Ok(OccupancyTrace::from_events(z.zone_id.clone(), &events, end, interval_s)?)
        })
        .collect()
}

/// Named numeric fields of a snapshot in CSV column order, without the
/// timestamp.
pub fn snapshot_record(s: &Snapshot) -> Vec<(String, f64)> {
    let mut rec = vec![
        ("chiller_power_W".to_string(), s.chiller_power_w),
        ("outdoor_temp_C".to_string(), s.outdoor_temp_c),
        ("total_power_W".to_string(), s.total_power_w),
    ];
    rec.extend(s.zones.iter().map(|z| (format!("setpoint_{}_C", z.zone_id), z.setpoint_c)));
    rec.extend(s.zones.iter().map(|z| (format!("temp_{}_C", z.zone_id), z.temp_c)));
    rec.extend(s.zones.iter().map(|z| (format!("occupied_{}", z.zone_id), z.occupied as u8 as f64)));
    rec.extend(s.appliances.iter().map(|a| (format!("power_{}_W", a.appliance_id), a.power_w)));
    rec
}

/// One row per snapshot. Column names match the chiller observation format,
/// so the file doubles as regression input.
pub fn write_snapshots_csv<W: Write>(writer: W, snapshots: &[Snapshot]) -> Result<(), EmulatorError> {
    let mut w = csv::Writer::from_writer(writer);
    let Some(first) = snapshots.first() else {
        w.flush().map_err(csv::Error::from)?;
        return Ok(());
    };
    let mut header = vec!["timestamp".to_string()];
    header.extend(snapshot_record(first).into_iter().map(|(k, _)| k));
    w.write_record(&header)?;
    for s in snapshots {
        let mut rec = vec![s.clock.to_iso8601()];
        for (k, v) in snapshot_record(s) {
            rec.push(if k.starts_with("occupied_") {
                format!("{v}")
            } else {
                format!("{v:.3}")
            });
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Occupancy traces from the `occupied_<zone>` columns of a snapshot CSV.
pub fn read_snapshot_traces_csv<R: Read>(reader: R, interval_s: i64) -> Result<Vec<OccupancyTrace>, EmulatorError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let ts_col = headers
        .iter()
        .position(|h| h == "timestamp")
        .ok_or_else(|| EmulatorError::Config("missing timestamp column".into()))?;
    let zones: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("occupied_").map(|z| (i, z.to_string())))
        .collect();
    let mut events: Vec<Vec<(Timestamp, bool)>> = vec![Vec::new(); zones.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| EmulatorError::Config(format!("row {}: bad {what}", row + 1));
        let t = rec.get(ts_col).and_then(Timestamp::parse).ok_or_else(|| bad("timestamp"))?;
        for ((col, zone), ev) in zones.iter().zip(events.iter_mut()) {
            let occupied = match rec.get(*col).map(str::trim) {
                Some("1") | Some("true") => true,
                Some("0") | Some("false") => false,
                _ => return Err(bad(&format!("occupied_{zone}"))),
            };
            ev.push((t, occupied));
        }
    }
    zones
        .into_iter()
        .zip(events)
        .map(|((_, zone), ev)| {
            let end = ev.iter().map(|(t, _)| *t).max().ok_or(OccupancyError::Empty)?;
            Ok(OccupancyTrace::from_events(zone, &ev, end, interval_s)?)
        })
        .collect()
}
