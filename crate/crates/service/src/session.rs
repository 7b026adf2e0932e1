//! Single-building session: configuration, learned models, the running
//! emulation, curtailment events and the measurement log.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use loadrank::chiller::{fit_chiller, read_observations_csv, ChillerFitOptions, ChillerFitStats};
use loadrank::controller::{
    rank_alternatives, ControllerConfig, ControllerModels, CurtailmentEvent, EventReport, EventRunner,
    RankedAlternatives,
};
use loadrank::domain::{ApplianceKind, Building, ControlAlternative, CriteriaConfig, Timestamp};
use loadrank::emulator::{read_snapshot_traces_csv, snapshot_record, Command, Emulator, EmulatorConfig, Snapshot};
use loadrank::mcdm::RankingResult;
use loadrank::occupancy::{fit_occupancy, OccupancyModelMeta, DEFAULT_INTERVAL_S};
use loadrank::training::{fit_models, generate_training_log, occupancy_fit_options};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub enum SessionError {
    BadRequest(String),
    NotFound(String),
    Conflict(String),
    Internal(String),
}

impl std::fmt::Display for SessionError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SessionError::BadRequest(m) | SessionError::NotFound(m) | SessionError::Conflict(m) | SessionError::Internal(m) => {
                f.write_str(m)
            }
        }
    }
}

impl std::error::Error for SessionError {}

fn bad<E: std::fmt::Display>(e: E) -> SessionError {
    SessionError::BadRequest(e.to_string())
}

fn internal<E: std::fmt::Display>(e: E) -> SessionError {
    SessionError::Internal(e.to_string())
}

pub type SessionResult<T> = Result<T, SessionError>;

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub building: Building,
    pub emulator: EmulatorConfig,
    pub controller: ControllerConfig,
    /// Newline-delimited JSON file the measurement log is appended to.
    pub log_path: Option<PathBuf>,
}

impl SessionConfig {
    pub fn new(building: Building) -> Self {
        Self {
            building,
            emulator: EmulatorConfig::default(),
            controller: ControllerConfig::default(),
            log_path: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventStatus {
    Scheduled,
    Active,
    Completed,
    Aborted,
}

#[derive(Debug)]
struct EventEntry {
    event: CurtailmentEvent,
    status: EventStatus,
    runner: Option<EventRunner>,
    report: Option<EventReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventView {
    pub id: u64,
    pub status: EventStatus,
    pub event: CurtailmentEvent,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EventReportView {
    pub id: u64,
    pub status: EventStatus,
    pub report: EventReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationState {
    pub running: bool,
    pub active_event: Option<EventView>,
    pub log_length: usize,
    pub snapshot: Snapshot,
}

/// Weights and threshold as exchanged over the API.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaView {
    #[serde(default)]
    pub criteria: Option<Vec<String>>,
    pub weights: Vec<f64>,
    pub nu: f64,
}

impl From<&CriteriaConfig> for CriteriaView {
    fn from(c: &CriteriaConfig) -> Self {
        Self {
            criteria: Some(c.criteria.clone()),
            weights: c.weights.clone(),
            nu: c.threshold,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedRow {
    pub rank: usize,
    pub label: String,
    pub alternative: ControlAlternative,
    pub fitness: f64,
    pub expected_scores: Vec<f64>,
    pub mean_win_prob: Vec<f64>,
    pub occupied_prob: f64,
    pub occupied_comfort: f64,
    pub estimated_reduction_w: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankingView {
    pub timestamp: Timestamp,
    pub horizon_min: u32,
    pub criteria: CriteriaView,
    pub rows: Vec<RankedRow>,
    pub ranking: RankingResult,
}

impl RankingView {
    pub fn new(ranked: &RankedAlternatives, horizon_min: u32) -> Self {
        let rows = ranked
            .ranking
            .order
            .iter()
            .enumerate()
            .map(|(pos, &i)| {
                let a = &ranked.alternatives[i];
                let rationale = ranked.ranking.rationale.get(i);
                RankedRow {
                    rank: pos + 1,
                    label: a.alternative.label(),
                    alternative: a.alternative.clone(),
                    fitness: ranked.ranking.fitness[i],
                    expected_scores: a.expected_scores.clone(),
                    mean_win_prob: rationale.map(|r| r.mean_win_prob.clone()).unwrap_or_default(),
                    occupied_prob: a.occupied_prob,
                    occupied_comfort: a.occupied_comfort,
                    estimated_reduction_w: a.estimated_reduction_w,
                }
            })
            .collect();
        Self {
            timestamp: ranked.timestamp,
            horizon_min,
            criteria: CriteriaView::from(&ranked.criteria),
            rows,
            ranking: ranked.ranking.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitSummary {
    pub chiller: Option<ChillerFitStats>,
    pub beta0: f64,
    pub beta_out: f64,
    pub beta_z: BTreeMap<String, f64>,
    pub occupancy: BTreeMap<String, Option<OccupancyModelMeta>>,
}

/// How to obtain training data for a model fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum FitSource {
    /// The session's own measurement log.
    Log,
    /// A snapshot CSV as written by the emulator.
    Csv { text: String },
    /// A fresh emulator run of `days` with random set-point excitation.
    Generate { days: u32, seed: u64 },
}

/// Fits controller models from a snapshot CSV whose zone columns must match
/// `building`.
pub fn models_from_csv(building: &Building, text: &str) -> SessionResult<ControllerModels> {
    let (zones, obs) = read_observations_csv(text.as_bytes()).map_err(bad)?;
    if zones != building.zone_ids() {
        return Err(SessionError::BadRequest(format!(
            "CSV zones {zones:?} differ from the building's {:?}",
            building.zone_ids()
        )));
    }
    let chiller = fit_chiller(&zones, &obs, &ChillerFitOptions::default()).map_err(bad)?;
    let opts = occupancy_fit_options();
    let occupancy = read_snapshot_traces_csv(text.as_bytes(), DEFAULT_INTERVAL_S)
        .map_err(bad)?
        .iter()
        .map(|t| fit_occupancy(t, &opts))
        .collect::<Result<Vec<_>, _>>()
        .map_err(bad)?;
    let models = ControllerModels { chiller, occupancy };
    models.check(building).map_err(bad)?;
    Ok(models)
}

/// One row of the measurement log, flattened.
pub type TimeseriesRow = (Timestamp, Vec<f64>);

#[derive(Debug)]
pub struct Session {
    building: Building,
    emulator_config: EmulatorConfig,
    controller: ControllerConfig,
    models: Option<ControllerModels>,
    emulator: Emulator,
    running: bool,
    events: BTreeMap<u64, EventEntry>,
    next_event_id: u64,
    active_event: Option<u64>,
    log: Vec<Snapshot>,
    log_writer: Option<BufWriter<File>>,
}

impl Session {
    pub fn new(config: SessionConfig) -> SessionResult<Self> {
        config.controller.validate().map_err(bad)?;
        let emulator = Emulator::new(config.building.clone(), config.emulator.clone()).map_err(bad)?;
        let log_writer = match &config.log_path {
            Some(p) => Some(BufWriter::new(
                File::options().create(true).append(true).open(p).map_err(internal)?,
            )),
            None => None,
        };
        Ok(Self {
            building: config.building,
            emulator_config: config.emulator,
            controller: config.controller,
            models: None,
            emulator,
            running: false,
            events: BTreeMap::new(),
            next_event_id: 1,
            active_event: None,
            log: Vec::new(),
            log_writer,
        })
    }

    pub fn building(&self) -> &Building {
        &self.building
    }

    /// Replaces the building and restarts the emulation from its initial
    /// state. Models that no longer match the zone set are dropped.
    pub fn set_building(&mut self, building: Building) -> SessionResult<()> {
        if self.running {
            return Err(SessionError::Conflict("stop the simulation before replacing the building".into()));
        }
        building.validate().map_err(bad)?;
        let emulator = Emulator::new(building.clone(), self.emulator_config.clone()).map_err(bad)?;
        if self.models.as_ref().is_some_and(|m| m.check(&building).is_err()) {
            self.models = None;
        }
        self.building = building;
        self.emulator = emulator;
        self.active_event = None;
        Ok(())
    }

    pub fn criteria(&self) -> &CriteriaConfig {
        &self.controller.criteria
    }

    pub fn set_criteria(&mut self, view: CriteriaView) -> SessionResult<CriteriaView> {
        let criteria = CriteriaConfig {
            criteria: view.criteria.unwrap_or_else(|| self.controller.criteria.criteria.clone()),
            weights: view.weights,
            threshold: view.nu,
        };
        criteria.validate().map_err(bad)?;
        self.controller.criteria = criteria;
        Ok(CriteriaView::from(&self.controller.criteria))
    }

    pub fn models(&self) -> Option<&ControllerModels> {
        self.models.as_ref()
    }

    pub fn set_models(&mut self, models: ControllerModels) -> SessionResult<()> {
        models.check(&self.building).map_err(bad)?;
        self.models = Some(models);
        Ok(())
    }

    pub fn fit(&mut self, source: FitSource) -> SessionResult<FitSummary> {
        let opts = occupancy_fit_options();
        let models = match source {
            FitSource::Log => {
                if self.log.is_empty() {
                    return Err(SessionError::Conflict("measurement log is empty".into()));
                }
                fit_models(&self.building, &self.log, &ChillerFitOptions::default(), &opts).map_err(bad)?
            }
            FitSource::Generate { days, seed } => {
                let mut emu = Emulator::new(
                    self.building.clone(),
                    EmulatorConfig {
                        seed,
                        dt_s: 300,
                        ..self.emulator_config.clone()
                    },
                )
                .map_err(bad)?;
                let log = generate_training_log(&mut emu, days, seed.wrapping_add(1)).map_err(bad)?;
                fit_models(&self.building, &log, &ChillerFitOptions::default(), &opts).map_err(bad)?
            }
            FitSource::Csv { text } => models_from_csv(&self.building, &text)?,
        };
        models.check(&self.building).map_err(bad)?;
        let summary = FitSummary {
            chiller: models.chiller.fit_stats.clone(),
            beta0: models.chiller.beta0,
            beta_out: models.chiller.beta_out,
            beta_z: models
                .chiller
                .zone_ids
                .iter()
                .cloned()
                .zip(models.chiller.beta_z.iter().copied())
                .collect(),
            occupancy: models.occupancy.iter().map(|m| (m.zone_id.clone(), m.meta.clone())).collect(),
        };
        self.models = Some(models);
        Ok(summary)
    }

    pub fn ranking(&self, horizon_min: Option<u32>) -> SessionResult<RankingView> {
        let models = self
            .models
            .as_ref()
            .ok_or_else(|| SessionError::Conflict("no fitted models; POST /api/models/fit first".into()))?;
        let horizon = horizon_min.unwrap_or(self.controller.forecast_horizon_min);
        let ranked = rank_alternatives(
            &self.building,
            self.emulator.snapshot(),
            models,
            &self.controller.criteria,
            horizon,
            self.controller.alpha2,
        )
        .map_err(bad)?;
        Ok(RankingView::new(&ranked, horizon))
    }

    pub fn is_running(&self) -> bool {
        self.running
    }

    pub fn start(&mut self) -> SessionResult<SimulationState> {
        if self.running {
            return Err(SessionError::Conflict("simulation already running".into()));
        }
        self.running = true;
        Ok(self.state())
    }

    /// Stops the emulation. An event in progress is aborted and its commands
    /// released.
    pub fn stop(&mut self) -> SessionResult<SimulationState> {
        if !self.running {
            return Err(SessionError::Conflict("simulation is not running".into()));
        }
        self.running = false;
        if let Some(id) = self.active_event.take() {
            if let Some(entry) = self.events.get_mut(&id) {
                if let Some(runner) = entry.runner.take() {
                    entry.report = Some(runner.report());
                }
                entry.status = EventStatus::Aborted;
            }
            self.emulator.submit(Command::ReleaseAll).map_err(internal)?;
        }
        Ok(self.state())
    }

    pub fn state(&self) -> SimulationState {
        SimulationState {
            running: self.running,
            active_event: self.active_event.and_then(|id| self.event_view(id)),
            log_length: self.log.len(),
            snapshot: self.emulator.snapshot().clone(),
        }
    }

    fn event_view(&self, id: u64) -> Option<EventView> {
        self.events.get(&id).map(|e| EventView {
            id,
            status: e.status,
            event: e.event.clone(),
        })
    }

    /// Steps the emulation `steps` times, through the active event's runner
    /// when there is one, and appends every snapshot to the log.
    pub fn advance(&mut self, steps: usize) -> SessionResult<SimulationState> {
        if !self.running {
            return Err(SessionError::Conflict("simulation is not running".into()));
        }
        for _ in 0..steps {
            self.step_once()?;
        }
        Ok(self.state())
    }

    fn step_once(&mut self) -> SessionResult<()> {
        let entry = self
            .active_event
            .and_then(|id| self.events.get_mut(&id))
            .filter(|e| e.runner.is_some());
        match entry {
            Some(entry) => {
                let runner = entry.runner.as_mut().expect("filtered");
                runner.advance(&mut self.emulator).map_err(internal)?;
                if self.emulator.clock() >= runner.event().start {
                    entry.status = EventStatus::Active;
                }
                if runner.is_done(&self.emulator) {
                    entry.report = Some(runner.report());
                    entry.runner = None;
                    entry.status = EventStatus::Completed;
                    self.active_event = None;
                }
            }
            None => {
                self.emulator.step().map_err(internal)?;
            }
        }
        let snap = self.emulator.snapshot().clone();
        if let Some(w) = self.log_writer.as_mut() {
            serde_json::to_writer(&mut *w, &snap).map_err(internal)?;
            w.write_all(b"\n").map_err(internal)?;
            w.flush().map_err(internal)?;
        }
        self.log.push(snap);
        Ok(())
    }

    pub fn schedule_event(&mut self, event: CurtailmentEvent) -> SessionResult<EventView> {
        event.validate().map_err(bad)?;
        let models = self
            .models
            .clone()
            .ok_or_else(|| SessionError::Conflict("no fitted models; POST /api/models/fit first".into()))?;
        if let Some(id) = self.active_event {
            return Err(SessionError::Conflict(format!("event {id} is already scheduled or active")));
        }
        if event.start < self.emulator.clock() {
            return Err(SessionError::Conflict(format!(
                "event start {} is before the simulation clock {}",
                event.start,
                self.emulator.clock()
            )));
        }
        let runner = EventRunner::new(event.clone(), &self.emulator, models, self.controller.clone()).map_err(bad)?;
        let id = self.next_event_id;
        self.next_event_id += 1;
        let done = runner.is_done(&self.emulator);
        self.events.insert(
            id,
            EventEntry {
                event,
                status: if done { EventStatus::Completed } else { EventStatus::Scheduled },
                report: done.then(|| runner.report()),
                runner: (!done).then_some(runner),
            },
        );
        if !done {
            self.active_event = Some(id);
        }
        Ok(self.event_view(id).expect("just inserted"))
    }

    pub fn event_report(&self, id: u64) -> SessionResult<EventReportView> {
        let entry = self
            .events
            .get(&id)
            .ok_or_else(|| SessionError::NotFound(format!("no event {id}")))?;
        let report = match (&entry.report, &entry.runner) {
            (Some(r), _) => r.clone(),
            (None, Some(runner)) => runner.report(),
            (None, None) => return Err(SessionError::Internal("event has no report".into())),
        };
        Ok(EventReportView {
            id,
            status: entry.status,
            report,
        })
    }

    pub fn log(&self) -> &[Snapshot] {
        &self.log
    }

    /// Columns and rows of the log between `from` and `to` (inclusive),
    /// restricted to `fields` when given.
    pub fn timeseries(
        &self,
        from: Option<Timestamp>,
        to: Option<Timestamp>,
        fields: Option<&[String]>,
    ) -> SessionResult<(Vec<String>, Vec<TimeseriesRow>)> {
        let rows: Vec<&Snapshot> = self
            .log
            .iter()
            .filter(|s| from.is_none_or(|f| s.clock >= f) && to.is_none_or(|t| s.clock <= t))
            .collect();
        let all: Vec<String> = match self.log.first() {
            Some(s) => snapshot_record(s).into_iter().map(|(k, _)| k).collect(),
            None => self.empty_columns(),
        };
        let picked: Vec<usize> = match fields {
            None => (0..all.len()).collect(),
            Some(f) => f
                .iter()
                .map(|name| {
                    all.iter()
                        .position(|c| c == name)
                        .ok_or_else(|| SessionError::BadRequest(format!("unknown field '{name}'")))
                })
                .collect::<SessionResult<_>>()?,
        };
        let columns = picked.iter().map(|&i| all[i].clone()).collect();
        let data = rows
            .into_iter()
            .map(|s| {
                let rec = snapshot_record(s);
                (s.clock, picked.iter().map(|&i| rec[i].1).collect())
            })
            .collect();
        Ok((columns, data))
    }

    fn empty_columns(&self) -> Vec<String> {
        snapshot_record(self.emulator.snapshot())
            .into_iter()
            .map(|(k, _)| k)
            .collect()
    }

    /// Appliance ids the controller can act on, for diagnostics.
    pub fn curtailable_appliances(&self) -> Vec<(String, ApplianceKind)> {
        self.building.appliances().map(|(_, a)| (a.id.clone(), a.kind)).collect()
    }
}
