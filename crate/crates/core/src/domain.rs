//! Buildings, zones, control knobs and the alternatives that get ranked.
//!
//! A building configuration is a tree `building -> floors -> zones ->
//! appliances -> settings`. Every appliance is a control knob offering a
//! discrete list of settings; one (appliance, setting) pair is a
//! [`ControlAlternative`].

use std::collections::HashSet;
use std::fmt;

use chrono::{NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest criteria count accepted; classification enumerates `2^A` outcomes.
pub const MAX_CRITERIA: usize = 32;

const SETTING_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DomainError {
    #[error("building '{0}' has no floors")]
    NoFloors(String),
    #[error("floor '{0}' has no zones")]
    EmptyFloor(String),
    #[error("duplicate zone id '{0}'")]
    DuplicateZone(String),
    #[error("duplicate appliance id '{0}'")]
    DuplicateAppliance(String),
    #[error("zone '{zone}': {reason}")]
    InvalidZone { zone: String, reason: String },
    #[error("appliance '{appliance}' in zone '{zone}': {reason}")]
    InvalidAppliance {
        zone: String,
        appliance: String,
        reason: String,
    },
    #[error("floor area must be positive, got {0}")]
    InvalidFloorArea(f64),
    #[error("criteria: {0}")]
    InvalidCriteria(String),
    #[error("criteria weights sum to {sum}, expected 1 within 1e-9")]
    WeightsNotNormalized { sum: f64 },
    #[error("threshold nu = {0} outside the open interval (0.5, 1)")]
    ThresholdOutOfRange(f64),
    #[error("unknown zone '{0}'")]
    UnknownZone(String),
    #[error("unknown appliance '{0}'")]
    UnknownAppliance(String),
    #[error("building json: {0}")]
    Json(String),
}

/// Simulation time in whole seconds since the simulation epoch (day 0, 00:00).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const SECONDS_PER_DAY: i64 = 86_400;

    pub fn from_day_minute(day: i64, minute_of_day: i64) -> Self {
        Timestamp(day * Self::SECONDS_PER_DAY + minute_of_day * 60)
    }

    pub fn from_hours(hours: f64) -> Self {
        Timestamp((hours * 3600.0).round() as i64)
    }

    pub fn seconds(self) -> i64 {
        self.0
    }

    pub fn day(self) -> i64 {
        self.0.div_euclid(Self::SECONDS_PER_DAY)
    }

    pub fn second_of_day(self) -> i64 {
        self.0.rem_euclid(Self::SECONDS_PER_DAY)
    }

    pub fn minute_of_day(self) -> i64 {
        self.second_of_day() / 60
    }

    pub fn hour_of_day(self) -> f64 {
        self.second_of_day() as f64 / 3600.0
    }

    pub fn plus_seconds(self, s: i64) -> Self {
        Timestamp(self.0 + s)
    }
}

impl Timestamp {
    /// Calendar date of day 0. A Monday in cooling season.
    pub fn epoch() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2024, 7, 1)
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .expect("valid epoch")
    }

    pub fn to_iso8601(self) -> String {
        (Self::epoch() + chrono::Duration::seconds(self.0))
            .format("%Y-%m-%dT%H:%M:%S")
            .to_string()
    }

    /// Parses `YYYY-MM-DDTHH:MM:SS` (relative to [`Timestamp::epoch`]) or a
    /// bare integer number of seconds.
    pub fn parse(text: &str) -> Option<Self> {
        let text = text.trim();
        if let Ok(s) = text.parse::<i64>() {
            return Some(Timestamp(s));
        }
        let t = NaiveDateTime::parse_from_str(text.trim_end_matches('Z'), "%Y-%m-%dT%H:%M:%S")
            .or_else(|_| NaiveDateTime::parse_from_str(text, "%Y-%m-%d %H:%M:%S"))
            .ok()?;
        Some(Timestamp((t - Self::epoch()).num_seconds()))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sod = self.second_of_day();
        write!(
            f,
            "d{}+{:02}:{:02}:{:02}",
            self.day(),
            sod / 3600,
            (sod / 60) % 60,
            sod % 60
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ApplianceKind {
    HvacSetpoint,
    DimmableLight,
    PlugLoad,
}

impl fmt::Display for ApplianceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ApplianceKind::HvacSetpoint => "hvac",
            ApplianceKind::DimmableLight => "light",
            ApplianceKind::PlugLoad => "plug",
        };
        f.write_str(s)
    }
}

/// One discrete setting of a knob.
///
/// `value` is interpreted per kind: a set-point offset in °C for HVAC, a power
/// fraction for dimmable lights, and `1.0` (on) / `0.0` (off) for plug loads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlSetting {
    pub value: f64,
    #[serde(default)]
    pub baseline: bool,
}

impl ControlSetting {
    pub fn new(value: f64, baseline: bool) -> Self {
        Self { value, baseline }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Appliance {
    pub id: String,
    pub kind: ApplianceKind,
    /// Rated power in W. Unused for HVAC knobs, whose effect goes through the
    /// chiller model.
    #[serde(default)]
    pub rated_power_w: f64,
    pub settings: Vec<ControlSetting>,
}

impl Appliance {
    /// Set-point knob with offsets -5..=+5 °C in 1 °C steps, baseline 0.
    pub fn hvac(id: impl Into<String>) -> Self {
        let settings = (-5..=5)
            .map(|o| ControlSetting::new(o as f64, o == 0))
            .collect();
        Self {
            id: id.into(),
            kind: ApplianceKind::HvacSetpoint,
            rated_power_w: 0.0,
            settings,
        }
    }

    /// Dimmable light with levels 0%, 20%, ..., 100%, baseline 100%.
    pub fn dimmable_light(id: impl Into<String>, rated_power_w: f64) -> Self {
        let settings = (0..=5)
            .map(|k| ControlSetting::new(k as f64 * 0.2, k == 5))
            .collect();
        Self {
            id: id.into(),
            kind: ApplianceKind::DimmableLight,
            rated_power_w,
            settings,
        }
    }

    /// On/off plug load, baseline on. Settings are ordered `[on, off]`.
    pub fn plug_load(id: impl Into<String>, rated_power_w: f64) -> Self {
        Self {
            id: id.into(),
            kind: ApplianceKind::PlugLoad,
            rated_power_w,
            settings: vec![ControlSetting::new(1.0, true), ControlSetting::new(0.0, false)],
        }
    }

    pub fn baseline_index(&self) -> Option<usize> {
        self.settings.iter().position(|s| s.baseline)
    }

    pub fn baseline_value(&self) -> f64 {
        self.baseline_index()
            .map(|i| self.settings[i].value)
            .unwrap_or(match self.kind {
                ApplianceKind::HvacSetpoint => 0.0,
                _ => 1.0,
            })
    }

    fn validate(&self, zone: &str) -> Result<(), DomainError> {
        let err = |reason: String| DomainError::InvalidAppliance {
            zone: zone.to_string(),
            appliance: self.id.clone(),
            reason,
        };
        if self.id.is_empty() {
            return Err(err("empty appliance id".into()));
        }
        if self.settings.is_empty() {
            return Err(err("no settings".into()));
        }
        let baselines = self.settings.iter().filter(|s| s.baseline).count();
        if baselines != 1 {
            return Err(err(format!(
                "expected exactly one baseline setting, found {baselines}"
            )));
        }
        match self.kind {
            ApplianceKind::HvacSetpoint => {
                for s in &self.settings {
                    if !(-5.0 - SETTING_TOL..=5.0 + SETTING_TOL).contains(&s.value)
                        || (s.value - s.value.round()).abs() > SETTING_TOL
                    {
                        return Err(err(format!(
                            "set-point offset {} is not a whole degree within [-5, 5]",
                            s.value
                        )));
                    }
                }
                if !self.rated_power_w.is_finite() || self.rated_power_w < 0.0 {
                    return Err(err("rated power must be non-negative".into()));
                }
            }
            ApplianceKind::DimmableLight => {
                for s in &self.settings {
                    let steps = s.value / 0.2;
                    if !(-SETTING_TOL..=1.0 + SETTING_TOL).contains(&s.value)
                        || (steps - steps.round()).abs() > 1e-6
                    {
                        return Err(err(format!(
                            "dimming level {} is not a 20% step within [0, 1]",
                            s.value
                        )));
                    }
                }
                if !(self.rated_power_w.is_finite() && self.rated_power_w > 0.0) {
                    return Err(err("rated power must be positive".into()));
                }
            }
            ApplianceKind::PlugLoad => {
                let mut values: Vec<f64> = self.settings.iter().map(|s| s.value).collect();
                values.sort_by(f64::total_cmp);
                if values != [0.0, 1.0] {
                    return Err(err("plug load settings must be exactly {off, on}".into()));
                }
                if !(self.rated_power_w.is_finite() && self.rated_power_w > 0.0) {
                    return Err(err("rated power must be positive".into()));
                }
            }
        }
        let mut seen: Vec<f64> = Vec::with_capacity(self.settings.len());
        for s in &self.settings {
            if seen.iter().any(|v| (v - s.value).abs() < SETTING_TOL) {
                return Err(err(format!("duplicate setting {}", s.value)));
            }
            seen.push(s.value);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Zone {
    pub id: String,
    /// Most comfortable temperature, °C.
    pub desired_temp_c: f64,
    pub comfort_alpha: f64,
    pub comfort_delta_c: f64,
    #[serde(default)]
    pub appliances: Vec<Appliance>,
}

impl Zone {
    fn validate(&self) -> Result<(), DomainError> {
        let err = |reason: &str| DomainError::InvalidZone {
            zone: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(err("empty zone id"));
        }
        if !self.desired_temp_c.is_finite() {
            return Err(err("desired temperature must be finite"));
        }
        if !(self.comfort_alpha.is_finite() && self.comfort_alpha > 1.0) {
            return Err(err("comfort_alpha must be > 1"));
        }
        if !(self.comfort_delta_c.is_finite() && self.comfort_delta_c > 0.0) {
            return Err(err("comfort_delta_c must be > 0"));
        }
        self.appliances.iter().try_for_each(|a| a.validate(&self.id))
    }

    pub fn appliance(&self, id: &str) -> Option<&Appliance> {
        self.appliances.iter().find(|a| a.id == id)
    }

    pub fn hvac(&self) -> Option<&Appliance> {
        self.appliances
            .iter()
            .find(|a| a.kind == ApplianceKind::HvacSetpoint)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Floor {
    pub id: String,
    pub zones: Vec<Zone>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub id: String,
    pub floor_area_m2: f64,
    pub floors: Vec<Floor>,
}

impl Building {
    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.floor_area_m2.is_finite() && self.floor_area_m2 > 0.0) {
            return Err(DomainError::InvalidFloorArea(self.floor_area_m2));
        }
        if self.floors.is_empty() {
            return Err(DomainError::NoFloors(self.id.clone()));
        }
        let mut zone_ids = HashSet::new();
        let mut appliance_ids = HashSet::new();
        for floor in &self.floors {
            if floor.zones.is_empty() {
                return Err(DomainError::EmptyFloor(floor.id.clone()));
            }
            for zone in &floor.zones {
                if !zone_ids.insert(zone.id.as_str()) {
                    return Err(DomainError::DuplicateZone(zone.id.clone()));
                }
                zone.validate()?;
                for a in &zone.appliances {
                    if !appliance_ids.insert(a.id.as_str()) {
                        return Err(DomainError::DuplicateAppliance(a.id.clone()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, DomainError> {
        let b: Building = serde_json::from_str(text).map_err(|e| DomainError::Json(e.to_string()))?;
        b.validate()?;
        Ok(b)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("building serializes")
    }

    /// Zones in enumeration order (floor, then zone).
    pub fn zones(&self) -> impl Iterator<Item = &Zone> {
        self.floors.iter().flat_map(|f| f.zones.iter())
    }

    pub fn zone_ids(&self) -> Vec<String> {
        self.zones().map(|z| z.id.clone()).collect()
    }

    pub fn zone(&self, id: &str) -> Option<&Zone> {
        self.zones().find(|z| z.id == id)
    }

    pub fn zone_index(&self, id: &str) -> Option<usize> {
        self.zones().position(|z| z.id == id)
    }

    /// Appliances with their owning zone, in enumeration order.
    pub fn appliances(&self) -> impl Iterator<Item = (&Zone, &Appliance)> {
        self.zones()
            .flat_map(|z| z.appliances.iter().map(move |a| (z, a)))
    }

    pub fn find_appliance(&self, id: &str) -> Option<(&Zone, &Appliance)> {
        self.appliances().find(|(_, a)| a.id == id)
    }

    /// The office building used throughout the examples and the closed-loop
    /// scenario: `floors` floors of five perimeter/core zones, each with an HVAC
    /// set-point knob, a dimmable light and a PC.
    pub fn office(floors: usize) -> Self {
        const ORIENTATIONS: [&str; 5] = ["N", "E", "S", "W", "C"];
        let floors = (1..=floors)
            .map(|f| Floor {
                id: format!("F{f}"),
                zones: ORIENTATIONS
                    .iter()
                    .enumerate()
                    .map(|(k, o)| {
                        let id = format!("F{f}-{o}");
                        Zone {
                            desired_temp_c: if *o == "C" { 22.5 } else { 22.0 },
                            comfort_alpha: 10.0,
                            comfort_delta_c: 3.0,
                            appliances: vec![
                                Appliance::hvac(format!("{id}/hvac")),
                                Appliance::dimmable_light(
                                    format!("{id}/light"),
                                    700.0 + 50.0 * k as f64,
                                ),
                                Appliance::plug_load(format!("{id}/pc"), 200.0),
                            ],
                            id,
                        }
                    })
                    .collect(),
            })
            .collect();
        Building {
            id: "office".into(),
            floor_area_m2: 46_320.0,
            floors,
        }
    }
}

/// One (knob, setting) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlAlternative {
    pub zone_id: String,
    pub appliance_id: String,
    pub kind: ApplianceKind,
    /// Zero-based position in the appliance's setting list.
    pub setting_index: usize,
    pub value: f64,
    pub baseline: bool,
}

impl ControlAlternative {
    pub fn label(&self) -> String {
        match self.kind {
            ApplianceKind::HvacSetpoint => format!("{} {:+}C", self.appliance_id, self.value),
            ApplianceKind::DimmableLight => {
                format!("{} {:.0}%", self.appliance_id, self.value * 100.0)
            }
            ApplianceKind::PlugLoad => format!(
                "{} {}",
                self.appliance_id,
                if self.value > 0.5 { "on" } else { "off" }
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BaselinePolicy {
    /// Every setting of every knob, baseline included.
    #[default]
    Include,
    /// Drop each knob's baseline ("do nothing") setting.
    Exclude,
}

/// Lists every control alternative in (floor, zone, appliance, setting) order.
pub fn enumerate_alternatives(
    building: &Building,
    policy: BaselinePolicy,
) -> Result<Vec<ControlAlternative>, DomainError> {
    building.validate()?;
    let alts = building
        .appliances()
        .flat_map(|(zone, app)| {
            app.settings
                .iter()
                .enumerate()
                .filter(move |(_, s)| policy == BaselinePolicy::Include || !s.baseline)
                .map(move |(i, s)| ControlAlternative {
                    zone_id: zone.id.clone(),
                    appliance_id: app.id.clone(),
                    kind: app.kind,
                    setting_index: i,
                    value: s.value,
                    baseline: s.baseline,
                })
        })
        .collect();
    Ok(alts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaConfig {
    pub criteria: Vec<String>,
    pub weights: Vec<f64>,
    /// Classification threshold nu in (0.5, 1).
    pub threshold: f64,
}

impl Default for CriteriaConfig {
    fn default() -> Self {
        Self {
            criteria: vec!["comfort".into(), "curtailment".into()],
            weights: vec![0.6, 0.4],
            threshold: 0.75,
        }
    }
}

impl CriteriaConfig {
    /// Comfort/curtailment criteria with the given weights and threshold.
    pub fn comfort_curtailment(comfort: f64, curtailment: f64, threshold: f64) -> Self {
        Self {
            criteria: vec!["comfort".into(), "curtailment".into()],
            weights: vec![comfort, curtailment],
            threshold,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        validate_criteria(self)
    }
}

pub fn validate_criteria(config: &CriteriaConfig) -> Result<(), DomainError> {
    if config.weights.is_empty() {
        return Err(DomainError::InvalidCriteria("no criteria".into()));
    }
    if config.weights.len() > MAX_CRITERIA {
        return Err(DomainError::InvalidCriteria(format!(
            "{} criteria exceeds the limit of {MAX_CRITERIA}",
            config.weights.len()
        )));
    }
    if config.criteria.len() != config.weights.len() {
        return Err(DomainError::InvalidCriteria(format!(
            "{} labels but {} weights",
            config.criteria.len(),
            config.weights.len()
        )));
    }
    if let Some(w) = config.weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(DomainError::InvalidCriteria(format!(
            "weight {w} is negative or not finite"
        )));
    }
    let sum: f64 = config.weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(DomainError::WeightsNotNormalized { sum });
    }
    if !(config.threshold > 0.5 && config.threshold < 1.0) {
        return Err(DomainError::ThresholdOutOfRange(config.threshold));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_plug_building() -> Building {
        Building {
            id: "b".into(),
            floor_area_m2: 100.0,
            floors: vec![Floor {
                id: "F1".into(),
                zones: vec![Zone {
                    id: "z".into(),
                    desired_temp_c: 22.0,
                    comfort_alpha: 10.0,
                    comfort_delta_c: 3.0,
                    appliances: vec![Appliance::plug_load("pc", 60.0)],
                }],
            }],
        }
    }

    #[test]
    fn single_plug_gives_two_alternatives() {
        let alts = enumerate_alternatives(&one_plug_building(), BaselinePolicy::Include).unwrap();
        assert_eq!(alts.len(), 2);
        let alts = enumerate_alternatives(&one_plug_building(), BaselinePolicy::Exclude).unwrap();
        assert_eq!(alts.len(), 1);
        assert_eq!(alts[0].value, 0.0);
    }

    #[test]
    fn office_scenario_has_285_alternatives() {
        let b = Building::office(3);
        assert_eq!(b.zones().count(), 15);
        let alts = enumerate_alternatives(&b, BaselinePolicy::Include).unwrap();
        assert_eq!(alts.len(), 15 * 19);
        let ranked = enumerate_alternatives(&b, BaselinePolicy::Exclude).unwrap();
        assert_eq!(ranked.len(), 15 * 16);
    }

    #[test]
    fn zero_appliances_is_empty() {
        let mut b = one_plug_building();
        b.floors[0].zones[0].appliances.clear();
        assert!(enumerate_alternatives(&b, BaselinePolicy::Include)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn validation_names_the_offender() {
        let mut b = one_plug_building();
        b.floors[0].zones[0].appliances[0].settings[1].baseline = true;
        let e = b.validate().unwrap_err();
        assert!(matches!(e, DomainError::InvalidAppliance { ref appliance, .. } if appliance == "pc"));

        let mut b = one_plug_building();
        b.floors[0].zones[0].comfort_delta_c = 0.0;
        assert!(matches!(b.validate(), Err(DomainError::InvalidZone { ref zone, .. }) if zone == "z"));

        let mut b = one_plug_building();
        b.floors[0].zones[0].appliances.push(Appliance::hvac("h"));
        b.floors[0].zones[0].appliances[1].settings[0].value = 2.5;
        assert!(b.validate().is_err());

        let mut b = one_plug_building();
        let z = b.floors[0].zones[0].clone();
        b.floors[0].zones.push(z);
        assert_eq!(b.validate(), Err(DomainError::DuplicateZone("z".into())));

        let mut b = one_plug_building();
        b.floors[0].zones[0]
            .appliances
            .push(Appliance::dimmable_light("l", 100.0));
        b.floors[0].zones[0].appliances[1].settings[2].value = 0.5;
        assert!(b.validate().is_err());
    }

    #[test]
    fn criteria_validation() {
        assert!(CriteriaConfig::comfort_curtailment(0.6, 0.4, 0.75)
            .validate()
            .is_ok());
        assert!(matches!(
            CriteriaConfig::comfort_curtailment(0.7, 0.4, 0.75).validate(),
            Err(DomainError::WeightsNotNormalized { .. })
        ));
        assert_eq!(
            CriteriaConfig::comfort_curtailment(0.6, 0.4, 0.5).validate(),
            Err(DomainError::ThresholdOutOfRange(0.5))
        );
        assert!(CriteriaConfig::comfort_curtailment(0.6, 0.4, 1.0)
            .validate()
            .is_err());
    }

    #[test]
    fn building_json_round_trip() {
        let b = Building::office(1);
        let back = Building::from_json(&b.to_json_pretty()).unwrap();
        assert_eq!(b, back);
    }

    #[test]
    fn timestamp_helpers() {
        let t = Timestamp::from_day_minute(2, 8 * 60 + 30);
        assert_eq!(t.day(), 2);
        assert_eq!(t.minute_of_day(), 510);
        assert_eq!(t.hour_of_day(), 8.5);
        assert_eq!(t.to_string(), "d2+08:30:00");
        assert_eq!(t.to_iso8601(), "2024-07-03T08:30:00");
        assert_eq!(Timestamp::parse(&t.to_iso8601()), Some(t));
        assert_eq!(Timestamp::parse("3600"), Some(Timestamp(3600)));
        assert_eq!(Timestamp::parse("yesterday"), None);
    }
}
