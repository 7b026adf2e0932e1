//! Closed-loop curtailment: score, rank and greedily dispatch control
//! alternatives during an event window, against a shadow baseline run.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chiller::ChillerModel;
use crate::domain::{
    enumerate_alternatives, ApplianceKind, BaselinePolicy, Building, ControlAlternative, CriteriaConfig,
    DomainError, Timestamp,
};
use crate::emulator::{Command, Emulator, EmulatorError, Snapshot, MIN_DT_S};
use crate::mcdm::{rank, AlternativeRationale, McdmError, RankingResult};
use crate::occupancy::{forecast, OccupancyModel, OccupancyState};
use crate::scoring::{
    comfort_hvac, estimated_reduction, score_alternative, CurtailmentScaleParams, KnobContext, ScoreDistribution,
    ScoringError,
};

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Mcdm(#[from] McdmError),
    #[error(transparent)]
    Emulator(#[from] EmulatorError),
    #[error("no occupancy model for zone '{0}'")]
    MissingOccupancyModel(String),
    #[error("chiller model zones {model:?} differ from building zones {building:?}")]
    ChillerZones { model: Vec<String>, building: Vec<String> },
    #[error("snapshot has no reading for '{0}'")]
    MissingReading(String),
    #[error("invalid event: {0}")]
    InvalidEvent(String),
    #[error("invalid controller config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurtailmentEvent {
    pub start: Timestamp,
    pub end: Timestamp,
    /// Required reduction, W. `None` dispatches every favorable alternative.
    pub target_reduction_w: Option<f64>,
    /// Criteria to use instead of the controller's during this event.
    #[serde(default)]
    pub criteria: Option<CriteriaConfig>,
}

impl CurtailmentEvent {
    /// 08:00 to 16:00 on `day`.
    pub fn business_hours(day: i64, target_reduction_w: Option<f64>) -> Self {
        Self {
            start: Timestamp::from_day_minute(day, 8 * 60),
            end: Timestamp::from_day_minute(day, 16 * 60),
            target_reduction_w,
            criteria: None,
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        if self.end < self.start {
            return Err(ControllerError::InvalidEvent("end precedes start".into()));
        }
        if let Some(t) = self.target_reduction_w {
            if !(t.is_finite() && t >= 0.0) {
                return Err(ControllerError::InvalidEvent(format!("target {t} W")));
            }
        }
        if let Some(c) = &self.criteria {
            c.validate()?;
        }
        Ok(())
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub criteria: CriteriaConfig,
    pub decision_interval_s: i64,
    /// Horizon of the occupancy forecast feeding the comfort mixture.
    pub forecast_horizon_min: u32,
    pub alpha2: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            criteria: CriteriaConfig::default(),
            decision_interval_s: 300,
            forecast_horizon_min: 5,
            alpha2: 10.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        self.criteria.validate()?;
        if self.decision_interval_s < MIN_DT_S {
            return Err(ControllerError::Config(format!(
                "decision interval {} s below {} s",
                self.decision_interval_s, MIN_DT_S
            )));
        }
        if !(self.alpha2.is_finite() && self.alpha2 > 1.0) {
            return Err(ControllerError::Config(format!("alpha2 {} must exceed 1", self.alpha2)));
        }
        Ok(())
    }
}

/// Learned models the controller relies on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerModels {
    pub chiller: ChillerModel,
    pub occupancy: Vec<OccupancyModel>,
}

impl ControllerModels {
    pub fn occupancy_for(&self, zone_id: &str) -> Option<&OccupancyModel> {
        self.occupancy.iter().find(|m| m.zone_id == zone_id)
    }

    pub fn check(&self, building: &Building) -> Result<(), ControllerError> {
        let zones = building.zone_ids();
        if self.chiller.zone_ids != zones {
            return Err(ControllerError::ChillerZones {
                model: self.chiller.zone_ids.clone(),
                building: zones,
            });
        }
        for z in &zones {
            self.occupancy_for(z)
                .ok_or_else(|| ControllerError::MissingOccupancyModel(z.clone()))?;
        }
        Ok(())
    }
}

/// One alternative with everything that went into its scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredAlternative {
    pub alternative: ControlAlternative,
    pub occupied_prob: f64,
    pub estimated_reduction_w: f64,
    pub occupied_comfort: f64,
    pub expected_scores: Vec<f64>,
    pub curtailment_clamped: bool,
}

/// Scored alternatives and their ranking at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedAlternatives {
    pub timestamp: Timestamp,
    pub criteria: CriteriaConfig,
    pub scale: CurtailmentScaleParams,
    pub alternatives: Vec<ScoredAlternative>,
    pub ranking: RankingResult,
}

/// Scores every non-baseline alternative of the building against the
/// snapshot and ranks them.
pub fn rank_alternatives(
    building: &Building,
    snapshot: &Snapshot,
    models: &ControllerModels,
    criteria: &CriteriaConfig,
    forecast_horizon_min: u32,
    alpha2: f64,
) -> Result<RankedAlternatives, ControllerError> {
    models.check(building)?;
    criteria.validate()?;
    let alts = enumerate_alternatives(building, BaselinePolicy::Exclude)?;

    let mut occupied_prob = BTreeMap::new();
    for zone in building.zones() {
        let reading = snapshot
            .zone(&zone.id)
            .ok_or_else(|| ControllerError::MissingReading(zone.id.clone()))?;
        let model = models
            .occupancy_for(&zone.id)
            .ok_or_else(|| ControllerError::MissingOccupancyModel(zone.id.clone()))?;
        let state = OccupancyState::new(reading.occupied, reading.occupied_for_min);
        let p = forecast(model, state, snapshot.clock, forecast_horizon_min).final_prob();
        occupied_prob.insert(zone.id.clone(), p);
    }

    let mut knobs = Vec::with_capacity(alts.len());
    for alt in &alts {
        let (zone, appliance) = building
            .find_appliance(&alt.appliance_id)
            .ok_or_else(|| DomainError::UnknownAppliance(alt.appliance_id.clone()))?;
        let demand = match appliance.kind {
            ApplianceKind::HvacSetpoint => 0.0,
            _ => {
                snapshot
                    .appliance(&appliance.id)
                    .ok_or_else(|| ControllerError::MissingReading(appliance.id.clone()))?
                    .demand_w
            }
        };
        knobs.push(KnobContext {
            zone,
            appliance,
            demand_power_w: demand,
            occupied_prob: occupied_prob[&zone.id],
        });
    }
    let reductions = alts
        .iter()
        .zip(&knobs)
        .map(|(a, k)| estimated_reduction(a, k, &models.chiller))
        .collect::<Result<Vec<_>, _>>()?;
    let scale = CurtailmentScaleParams::from_reductions(alpha2, reductions.iter().copied())?;

    let mut scored = Vec::with_capacity(alts.len());
    let mut distributions = Vec::with_capacity(alts.len());
    for (alt, knob) in alts.iter().zip(&knobs) {
        let s = score_alternative(alt, knob, &models.chiller, &scale)?;
        scored.push(ScoredAlternative {
            alternative: alt.clone(),
            occupied_prob: s.occupied_prob,
            estimated_reduction_w: s.estimated_reduction_w,
            occupied_comfort: s.occupied_comfort,
            expected_scores: s.distributions.iter().map(|d| d.expected()).collect(),
            curtailment_clamped: s.curtailment_clamped,
        });
        distributions.push(s.distributions);
    }
    let ranking = if distributions.len() < 2 {
        lone_ranking(&distributions)
    } else {
        rank(&distributions, criteria)?
    };
    Ok(RankedAlternatives {
        timestamp: snapshot.clock,
        criteria: criteria.clone(),
        scale,
        alternatives: scored,
        ranking,
    })
}

// A lone alternative has no rival to lose against.
fn lone_ranking(distributions: &[Vec<ScoreDistribution>]) -> RankingResult {
    RankingResult {
        order: (0..distributions.len()).collect(),
        fitness: vec![1.0; distributions.len()],
        superiority: distributions.iter().map(|_| vec![0.5]).collect(),
        rationale: distributions
            .iter()
            .map(|d| AlternativeRationale {
                expected_scores: d.iter().map(|x| x.expected()).collect(),
                mean_win_prob: vec![1.0; d.len()],
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedAlternative {
    pub alternative: ControlAlternative,
    pub estimated_reduction_w: f64,
    /// 0-based position in the ranking.
    pub rank: usize,
    pub occupied_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanReason {
    OutsideEventWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchPlan {
    pub step_time: Timestamp,
    pub selected: Vec<SelectedAlternative>,
    pub estimated_total_w: f64,
    pub target_reduction_w: Option<f64>,
    pub target_unmet: bool,
    pub reason: Option<PlanReason>,
    pub ranked: Option<RankedAlternatives>,
}

impl DispatchPlan {
    fn empty(step_time: Timestamp, target: Option<f64>, reason: Option<PlanReason>) -> Self {
        Self {
            step_time,
            selected: Vec::new(),
            estimated_total_w: 0.0,
            target_reduction_w: target,
            target_unmet: false,
            reason,
            ranked: None,
        }
    }

    /// Commands realizing this plan.
    pub fn commands(&self) -> Vec<Command> {
        self.selected
            .iter()
            .map(|s| Command::Set {
                appliance_id: s.alternative.appliance_id.clone(),
                setting_index: s.alternative.setting_index,
            })
            .collect()
    }
}

/// Walks the ranking from the top, taking every alternative that has a positive
/// estimated reduction and whose knob is still free, until the target is met.
pub fn greedy_select(ranked: &RankedAlternatives, target_w: Option<f64>) -> (Vec<SelectedAlternative>, f64, bool) {
    let mut claimed = BTreeSet::new();
    let mut selected = Vec::new();
    let mut total = 0.0;
    let met = |total: f64| target_w.is_some_and(|t| total >= t);
    for (pos, &i) in ranked.ranking.order.iter().enumerate() {
        if met(total) {
            break;
        }
        let s = &ranked.alternatives[i];
        if s.estimated_reduction_w <= 0.0 || claimed.contains(&s.alternative.appliance_id) {
            continue;
        }
        claimed.insert(s.alternative.appliance_id.clone());
        total += s.estimated_reduction_w;
        selected.push(SelectedAlternative {
            alternative: s.alternative.clone(),
            estimated_reduction_w: s.estimated_reduction_w,
            rank: pos,
            occupied_prob: s.occupied_prob,
        });
    }
    let unmet = target_w.is_some_and(|t| total < t);
    (selected, total, unmet)
}

/// Ranks alternatives at the snapshot and picks the dispatch set.
pub fn decide(
    event: &CurtailmentEvent,
    snapshot: &Snapshot,
    building: &Building,
    models: &ControllerModels,
    config: &ControllerConfig,
) -> Result<DispatchPlan, ControllerError> {
    event.validate()?;
    config.validate()?;
    models.check(building)?;
    if !event.contains(snapshot.clock) {
        return Ok(DispatchPlan::empty(
            snapshot.clock,
            event.target_reduction_w,
            Some(PlanReason::OutsideEventWindow),
        ));
    }
    let criteria = event.criteria.as_ref().unwrap_or(&config.criteria);
    let ranked = rank_alternatives(
        building,
        snapshot,
        models,
        criteria,
        config.forecast_horizon_min,
        config.alpha2,
    )?;
    let (selected, total, unmet) = greedy_select(&ranked, event.target_reduction_w);
    Ok(DispatchPlan {
        step_time: snapshot.clock,
        selected,
        estimated_total_w: total,
        target_reduction_w: event.target_reduction_w,
        target_unmet: unmet,
        reason: None,
        ranked: Some(ranked),
    })
}

/// A dispatch plan without its ranking, as stored in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub step_time: Timestamp,
    pub selected: Vec<SelectedAlternative>,
    pub estimated_total_w: f64,
    pub target_unmet: bool,
}

impl From<&DispatchPlan> for PlanSummary {
    fn from(p: &DispatchPlan) -> Self {
        Self {
            step_time: p.step_time,
            selected: p.selected.clone(),
            estimated_total_w: p.estimated_total_w,
            target_unmet: p.target_unmet,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportPoint {
    pub timestamp: Timestamp,
    pub curtailed_total_w: f64,
    pub baseline_total_w: f64,
    pub achieved_reduction_w: f64,
    pub estimated_reduction_w: f64,
    pub occupied_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub event: CurtailmentEvent,
    pub decision_interval_s: i64,
    pub noise_sigma_w: f64,
    pub plans: Vec<PlanSummary>,
    pub series: Vec<ReportPoint>,
    /// Per-zone comfort of the realized zone temperature; 1 while unoccupied.
    pub zone_comfort: BTreeMap<String, Vec<f64>>,
    pub mean_achieved_reduction_w: f64,
    pub energy_saved_kwh: f64,
}

impl EventReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Drives one event on an emulator while stepping an unmodified twin in
/// lockstep as the counterfactual baseline.
#[derive(Debug, Clone)]
pub struct EventRunner {
    event: CurtailmentEvent,
    models: ControllerModels,
    config: ControllerConfig,
    baseline: Emulator,
    next_decision: Timestamp,
    restore_at: Timestamp,
    commanded: BTreeSet<String>,
    released: bool,
    last_estimate: f64,
    plans: Vec<DispatchPlan>,
    series: Vec<ReportPoint>,
    baseline_series: Vec<Snapshot>,
    curtailed_series: Vec<Snapshot>,
    zone_comfort: BTreeMap<String, Vec<f64>>,
    noise_sigma_w: f64,
}

impl EventRunner {
    pub fn new(
        event: CurtailmentEvent,
        emulator: &Emulator,
        models: ControllerModels,
        config: ControllerConfig,
    ) -> Result<Self, ControllerError> {
        event.validate()?;
        config.validate()?;
        models.check(emulator.building())?;
        if emulator.clock() > event.start {
            return Err(ControllerError::InvalidEvent(format!(
                "emulator clock {} is past event start {}",
                emulator.clock(),
                event.start
            )));
        }
        let restore_at = if event.start == event.end {
            event.end
        } else {
            event.end.plus_seconds(config.decision_interval_s)
        };
        Ok(Self {
            next_decision: event.start,
            restore_at,
            baseline: emulator.clone(),
            commanded: BTreeSet::new(),
            released: false,
            last_estimate: 0.0,
            plans: Vec::new(),
            series: Vec::new(),
            baseline_series: Vec::new(),
            curtailed_series: Vec::new(),
            zone_comfort: emulator
                .building()
                .zone_ids()
                .into_iter()
                .map(|z| (z, Vec::new()))
                .collect(),
            noise_sigma_w: emulator.noise_sigma_w(),
            event,
            models,
            config,
        })
    }

    pub fn event(&self) -> &CurtailmentEvent {
        &self.event
    }

    pub fn is_done(&self, emulator: &Emulator) -> bool {
        emulator.clock() >= self.restore_at
    }

    pub fn plans(&self) -> &[DispatchPlan] {
        &self.plans
    }

    pub fn baseline(&self) -> &Emulator {
        &self.baseline
    }

    /// Snapshots recorded inside the report window, curtailed then baseline.
    pub fn recorded(&self) -> (&[Snapshot], &[Snapshot]) {
        (&self.curtailed_series, &self.baseline_series)
    }

    /// Decides if due, then advances both emulators by one step. Returns
    /// `false` once the event has been fully restored.
    pub fn advance(&mut self, emulator: &mut Emulator) -> Result<bool, ControllerError> {
        if self.is_done(emulator) {
            return Ok(false);
        }
        let now = emulator.clock();
        if self.event.contains(now) && now >= self.next_decision {
            let plan = decide(&self.event, emulator.snapshot(), emulator.building(), &self.models, &self.config)?;
            let chosen: BTreeSet<String> = plan.selected.iter().map(|s| s.alternative.appliance_id.clone()).collect();
            for id in self.commanded.difference(&chosen) {
                emulator.submit(Command::Release {
                    appliance_id: id.clone(),
                })?;
            }
            for cmd in plan.commands() {
                emulator.submit(cmd)?;
            }
            self.commanded = chosen;
            self.last_estimate = plan.estimated_total_w;
            self.plans.push(plan);
            while self.next_decision <= now {
                self.next_decision = self.next_decision.plus_seconds(self.config.decision_interval_s);
            }
        }
        if now >= self.event.end && !self.released {
            emulator.submit(Command::ReleaseAll)?;
            self.commanded.clear();
            self.released = true;
            self.last_estimate = 0.0;
        }

        // Land exactly on the event boundaries.
        let mut dt = emulator.config().dt_s;
        for mark in [self.event.start, self.event.end, self.restore_at] {
            if mark > now {
                dt = dt.min(mark.0 - now.0);
            }
        }
        let dt = dt.max(MIN_DT_S);
        let curtailed = emulator.step_by(dt)?.clone();
        let baseline = self.baseline.step_by(dt)?.clone();
        if curtailed.clock > self.event.start && curtailed.clock <= self.restore_at {
            self.record(emulator.building(), curtailed, baseline);
        }
        Ok(!self.is_done(emulator))
    }

    fn record(&mut self, building: &Building, curtailed: Snapshot, baseline: Snapshot) {
        self.series.push(ReportPoint {
            timestamp: curtailed.clock,
            curtailed_total_w: curtailed.total_power_w,
            baseline_total_w: baseline.total_power_w,
            achieved_reduction_w: baseline.total_power_w - curtailed.total_power_w,
            estimated_reduction_w: self.last_estimate,
            occupied_fraction: curtailed.occupied_fraction(),
        });
        for (zone, z) in building.zones().zip(&curtailed.zones) {
            let c = if z.occupied {
                comfort_hvac(z.temp_c, zone.desired_temp_c, zone.comfort_delta_c, zone.comfort_alpha)
                    .unwrap_or(0.0)
            } else {
                1.0
            };
            if let Some(v) = self.zone_comfort.get_mut(&zone.id) {
                v.push(c);
            }
        }
        self.curtailed_series.push(curtailed);
        self.baseline_series.push(baseline);
    }

    pub fn report(&self) -> EventReport {
        let n = self.series.len();
        let during: Vec<&ReportPoint> = self
            .series
            .iter()
            .filter(|p| p.timestamp <= self.event.end)
            .collect();
        let mean = if during.is_empty() {
            0.0
        } else {
            during.iter().map(|p| p.achieved_reduction_w).sum::<f64>() / during.len() as f64
        };
        let mut saved_j = 0.0;
        let mut prev = self.event.start;
        for p in &self.series {
            saved_j += p.achieved_reduction_w * (p.timestamp.0 - prev.0) as f64;
            prev = p.timestamp;
        }
        EventReport {
            event: self.event.clone(),
            decision_interval_s: self.config.decision_interval_s,
            noise_sigma_w: self.noise_sigma_w,
            plans: self.plans.iter().map(PlanSummary::from).collect(),
            series: self.series.clone(),
            zone_comfort: if n == 0 {
                BTreeMap::new()
            } else {
                self.zone_comfort.clone()
            },
            mean_achieved_reduction_w: mean,
            energy_saved_kwh: saved_j / 3.6e6,
        }
    }
}

/// Runs an event to completion, from the emulator's current clock through one
/// decision interval past the event end.
pub fn run_event(
    event: &CurtailmentEvent,
    emulator: &mut Emulator,
    models: &ControllerModels,
    config: &ControllerConfig,
) -> Result<EventReport, ControllerError> {
    let mut runner = EventRunner::new(event.clone(), emulator, models.clone(), config.clone())?;
    while runner.advance(emulator)? {}
    Ok(runner.report())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{Appliance, Floor, Zone};
    use crate::emulator::{EmulatorConfig, OccupancySource, WeatherProfile};

    fn one_zone_pc(watts: f64) -> Building {
        Building {
            id: "b".into(),
            floor_area_m2: 50.0,
            floors: vec![Floor {
                id: "F1".into(),
                zones: vec![Zone {
                    id: "z".into(),
                    desired_temp_c: 22.0,
                    comfort_alpha: 10.0,
                    comfort_delta_c: 3.0,
                    appliances: vec![Appliance::plug_load("z/pc", watts)],
                }],
            }],
        }
    }

    fn models_for(building: &Building, occupied: bool) -> ControllerModels {
        let n = building.zone_ids().len();
        let occupancy = building
            .zone_ids()
            .into_iter()
            .map(|z| {
                let (arrive, leave) = if occupied { (1.0, 0.0) } else { (0.0, 1.0) };
                OccupancyModel::two_state(z, 300, &[arrive; 48], &[leave; 48]).unwrap()
            })
            .collect();
        ControllerModels {
            chiller: ChillerModel::new(building.zone_ids(), 15000.0, 150.0 * n as f64, vec![-150.0; n]).unwrap(),
            occupancy,
        }
    }

    fn emulator(building: &Building, occupied: bool) -> Emulator {
        Emulator::new(
            building.clone(),
            EmulatorConfig {
                seed: 3,
                start: Timestamp::from_hours(7.5),
                weather: WeatherProfile::Constant { temp_c: 34.0 },
                occupancy: OccupancySource::Constant { occupied },
                ..EmulatorConfig::default()
            },
        )
        .unwrap()
    }

    fn at_nine(emu: &mut Emulator) -> Snapshot {
        emu.run_until(Timestamp::from_hours(9.0)).unwrap();
        emu.snapshot().clone()
    }

    #[test]
    fn zero_target_selects_nothing() {
        let b = Building::office(1);
        let mut emu = emulator(&b, false);
        let snap = at_nine(&mut emu);
        let ev = CurtailmentEvent::business_hours(0, Some(0.0));
        let plan = decide(&ev, &snap, &b, &models_for(&b, false), &ControllerConfig::default()).unwrap();
        assert!(plan.selected.is_empty());
        assert_eq!(plan.estimated_total_w, 0.0);
        assert!(!plan.target_unmet);
    }

    #[test]
    fn unoccupied_pc_is_switched_off() {
        let b = one_zone_pc(60.0);
        let mut emu = emulator(&b, false);
        let snap = at_nine(&mut emu);
        let ev = CurtailmentEvent::business_hours(0, Some(1000.0));
        let plan = decide(&ev, &snap, &b, &models_for(&b, false), &ControllerConfig::default()).unwrap();
        assert_eq!(plan.selected.len(), 1);
        assert_eq!(plan.selected[0].alternative.appliance_id, "z/pc");
        assert_eq!(plan.selected[0].alternative.setting_index, 1);
        assert_eq!(plan.selected[0].estimated_reduction_w, 60.0);
        assert!(plan.target_unmet);
    }

    #[test]
    fn exhaustion_claims_each_knob_once() {
        let b = Building::office(1);
        let mut emu = emulator(&b, true);
        let snap = at_nine(&mut emu);
        let ev = CurtailmentEvent::business_hours(0, Some(1e9));
        let plan = decide(&ev, &snap, &b, &models_for(&b, true), &ControllerConfig::default()).unwrap();
        let knobs: BTreeSet<_> = plan.selected.iter().map(|s| s.alternative.appliance_id.clone()).collect();
        assert_eq!(knobs.len(), plan.selected.len());
        assert_eq!(knobs.len(), b.appliances().count());
        assert!(plan.target_unmet);
        let sum: f64 = plan.selected.iter().map(|s| s.estimated_reduction_w).sum();
        assert!((sum - plan.estimated_total_w).abs() < 1e-9);
    }

    #[test]
    fn greedy_skips_only_blocked_or_useless() {
        let b = Building::office(1);
        let mut emu = emulator(&b, true);
        let snap = at_nine(&mut emu);
        let ev = CurtailmentEvent::business_hours(0, Some(2500.0));
        let plan = decide(&ev, &snap, &b, &models_for(&b, true), &ControllerConfig::default()).unwrap();
        let ranked = plan.ranked.as_ref().unwrap();
        let last = plan.selected.last().unwrap().rank;
        let mut claimed = BTreeSet::new();
        let chosen: BTreeSet<usize> = plan.selected.iter().map(|s| s.rank).collect();
        for (pos, &i) in ranked.ranking.order.iter().enumerate().take(last + 1) {
            let a = &ranked.alternatives[i];
            if chosen.contains(&pos) {
                assert!(claimed.insert(a.alternative.appliance_id.clone()));
            } else {
                assert!(
                    claimed.contains(&a.alternative.appliance_id) || a.estimated_reduction_w <= 0.0,
                    "rank {pos} skipped without cause"
                );
            }
        }
        assert!(plan.estimated_total_w >= 2500.0);
        let before_last = plan.estimated_total_w - plan.selected.last().unwrap().estimated_reduction_w;
        assert!(before_last < 2500.0);
    }

    #[test]
    fn outside_window_yields_reasoned_empty_plan() {
        let b = Building::office(1);
        let emu = emulator(&b, true);
        let ev = CurtailmentEvent::business_hours(0, None);
        let plan = decide(&ev, emu.snapshot(), &b, &models_for(&b, true), &ControllerConfig::default()).unwrap();
        assert_eq!(plan.reason, Some(PlanReason::OutsideEventWindow));
        assert!(plan.selected.is_empty());
    }

    #[test]
    fn missing_models_are_configuration_errors() {
        let b = Building::office(1);
        let emu = emulator(&b, true);
        let mut m = models_for(&b, true);
        m.occupancy.pop();
        let ev = CurtailmentEvent::business_hours(0, None);
        assert!(matches!(
            decide(&ev, emu.snapshot(), &b, &m, &ControllerConfig::default()),
            Err(ControllerError::MissingOccupancyModel(_))
        ));
    }

    #[test]
    fn zero_length_event_gives_empty_report() {
        let b = Building::office(1);
        let mut emu = emulator(&b, true);
        let ev = CurtailmentEvent {
            start: Timestamp::from_hours(8.0),
            end: Timestamp::from_hours(8.0),
            target_reduction_w: None,
            criteria: None,
        };
        let r = run_event(&ev, &mut emu, &models_for(&b, true), &ControllerConfig::default()).unwrap();
        assert!(r.plans.is_empty());
        assert!(r.series.is_empty());
        assert!(r.zone_comfort.is_empty());
    }

    #[test]
    fn empty_building_event_curtails_everything() {
        let b = Building::office(1);
        let mut emu = emulator(&b, false);
        let ev = CurtailmentEvent {
            start: Timestamp::from_hours(8.0),
            end: Timestamp::from_hours(9.0),
            target_reduction_w: None,
            criteria: None,
        };
        let models = models_for(&b, false);
        let mut runner = EventRunner::new(ev.clone(), &emu, models, ControllerConfig::default()).unwrap();
        while runner.advance(&mut emu).unwrap() {
            if emu.clock() == Timestamp::from_hours(8.5) {
                let s = emu.snapshot();
                for a in &s.appliances {
                    match a.kind {
                        ApplianceKind::HvacSetpoint => assert_eq!(a.setting_value, 5.0),
                        _ => assert_eq!(a.power_w, 0.0, "{}", a.appliance_id),
                    }
                }
            }
        }
        let r = runner.report();
        assert!(r.mean_achieved_reduction_w > 0.0);
        assert!(r.energy_saved_kwh > 0.0);
        assert_eq!(r.plans.len(), 12);
        let end = emu.snapshot();
        assert_eq!(end.clock, Timestamp::from_hours(9.0).plus_seconds(300));
        assert!(end.appliances.iter().all(|a| !a.commanded));
    }

    #[test]
    fn event_runs_are_reproducible() {
        let b = Building::office(1);
        let ev = CurtailmentEvent {
            start: Timestamp::from_hours(8.0),
            end: Timestamp::from_hours(8.5),
            target_reduction_w: Some(3000.0),
            criteria: None,
        };
        let models = models_for(&b, true);
        let run = || {
            let mut emu = emulator(&b, true);
            run_event(&ev, &mut emu, &models, &ControllerConfig::default()).unwrap().to_json()
        };
        assert_eq!(run(), run());
    }
}
