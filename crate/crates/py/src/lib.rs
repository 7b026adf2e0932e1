//! Python bindings for the load-curtailment controller.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

use loadrank::chiller::ChillerFitOptions;
use loadrank::controller::{rank_alternatives, run_event as run_event_core, ControllerConfig, ControllerModels, CurtailmentEvent};
use loadrank::domain::{enumerate_alternatives, BaselinePolicy, Building, CriteriaConfig, Timestamp};
use loadrank::emulator::{write_snapshots_csv, Command, Emulator, EmulatorConfig, Snapshot};
use loadrank::mcdm;
use loadrank::occupancy::{forecast as forecast_core, OccupancyState};
use loadrank::scoring::{self, CurtailmentScaleParams, ScoreDistribution};
use loadrank::training::{fit_models, generate_training_log, occupancy_fit_options};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Converts through JSON so Python gets plain dicts and lists.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn criteria(weights: (f64, f64), nu: f64) -> PyResult<CriteriaConfig> {
    let c = CriteriaConfig::comfort_curtailment(weights.0, weights.1, nu);
    c.validate().map_err(err)?;
    Ok(c)
}

#[pyclass(name = "Building", module = "loadrank_py", from_py_object)]
#[derive(Clone)]
pub struct PyBuilding {
    inner: Building,
}

#[pymethods]
impl PyBuilding {
    #[new]
    fn new(json: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Building::from_json(json).map_err(err)?,
        })
    }

    /// Built-in office with five zones per floor.
    #[staticmethod]
    fn office(floors: usize) -> Self {
        Self {
            inner: Building::office(floors),
        }
    }

    fn to_json(&self) -> String {
        self.inner.to_json_pretty()
    }

    fn zone_ids(&self) -> Vec<String> {
        self.inner.zone_ids()
    }

    /// Labels of every non-baseline control alternative.
    fn alternatives(&self) -> PyResult<Vec<String>> {
        Ok(enumerate_alternatives(&self.inner, BaselinePolicy::Exclude)
            .map_err(err)?
            .iter()
            .map(|a| a.label())
            .collect())
    }

    fn __repr__(&self) -> String {
        format!("Building(id={:?}, zones={})", self.inner.id, self.inner.zone_ids().len())
    }
}

#[pyclass(name = "Emulator", module = "loadrank_py")]
pub struct PyEmulator {
    inner: Emulator,
}

#[pymethods]
impl PyEmulator {
    #[new]
    #[pyo3(signature = (building, seed = 0, start_hour = 0.0, dt_s = 60, config_json = None))]
    fn new(building: &PyBuilding, seed: u64, start_hour: f64, dt_s: i64, config_json: Option<&str>) -> PyResult<Self> {
        let mut config = match config_json {
            Some(text) => EmulatorConfig::from_json(text).map_err(err)?,
            None => EmulatorConfig {
                start: Timestamp::from_hours(start_hour),
                dt_s,
                ..EmulatorConfig::default()
            },
        };
        config.seed = seed;
        Ok(Self {
            inner: Emulator::new(building.inner.clone(), config).map_err(err)?,
        })
    }

    /// Simulation time in seconds.
    #[getter]
    fn clock(&self) -> i64 {
        self.inner.clock().0
    }

    fn snapshot<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.snapshot())
    }

    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let snap = self.inner.step().map_err(err)?.clone();
        to_py(py, &snap)
    }

    /// Steps until `seconds` and returns the number of steps taken.
    fn run_until(&mut self, seconds: i64) -> PyResult<usize> {
        Ok(self.inner.run_until(Timestamp(seconds)).map_err(err)?.len())
    }

    fn set(&mut self, appliance_id: String, setting_index: usize) -> PyResult<()> {
        self.inner
            .submit(Command::Set {
                appliance_id,
                setting_index,
            })
            .map_err(err)
    }

    fn release_all(&mut self) -> PyResult<()> {
        self.inner.submit(Command::ReleaseAll).map_err(err)
    }

    /// Runs `days` with hourly random set-point changes for model training.
    fn training_log(&mut self, days: u32, excitation_seed: u64) -> PyResult<SnapshotLog> {
        Ok(SnapshotLog {
            snapshots: generate_training_log(&mut self.inner, days, excitation_seed).map_err(err)?,
        })
    }
}

#[pyclass(module = "loadrank_py")]
pub struct SnapshotLog {
    snapshots: Vec<Snapshot>,
}

#[pymethods]
impl SnapshotLog {
    fn __len__(&self) -> usize {
        self.snapshots.len()
    }

    fn to_csv(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        write_snapshots_csv(&mut buf, &self.snapshots).map_err(err)?;
        String::from_utf8(buf).map_err(err)
    }

    fn fit(&self, building: &PyBuilding) -> PyResult<Models> {
        let inner = fit_models(
            &building.inner,
            &self.snapshots,
            &ChillerFitOptions::default(),
            &occupancy_fit_options(),
        )
        .map_err(err)?;
        Ok(Models { inner })
    }
}

#[pyclass(module = "loadrank_py")]
pub struct Models {
    inner: ControllerModels,
}

#[pymethods]
impl Models {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: serde_json::from_str(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(err)
    }

    /// `(beta0, beta_out, {zone: beta_z})`.
    fn chiller_coefficients(&self) -> (f64, f64, Vec<(String, f64)>) {
        let c = &self.inner.chiller;
        (
            c.beta0,
            c.beta_out,
            c.zone_ids.iter().cloned().zip(c.beta_z.iter().copied()).collect(),
        )
    }

    fn predict_chiller_power(&self, outdoor_temp_c: f64, setpoints_c: Vec<f64>) -> PyResult<f64> {
        self.inner.chiller.predict_power(outdoor_temp_c, &setpoints_c).map_err(err)
    }

    /// Occupied probability after each interval up to `horizon_min`.
    #[pyo3(signature = (zone_id, occupied, duration_min, at_seconds, horizon_min = 30))]
    fn forecast(
        &self,
        zone_id: &str,
        occupied: bool,
        duration_min: u32,
        at_seconds: i64,
        horizon_min: u32,
    ) -> PyResult<Vec<f64>> {
        let model = self
            .inner
            .occupancy_for(zone_id)
            .ok_or_else(|| PyValueError::new_err(format!("no occupancy model for zone '{zone_id}'")))?;
        let f = forecast_core(model, OccupancyState::new(occupied, duration_min), Timestamp(at_seconds), horizon_min);
        Ok(f.horizon.iter().map(|p| p.occupied_prob).collect())
    }
}

fn distributions(scores: Vec<Vec<Vec<(f64, f64)>>>) -> PyResult<Vec<Vec<ScoreDistribution>>> {
    scores
        .into_iter()
        .map(|alt| alt.into_iter().map(|atoms| ScoreDistribution::new(atoms).map_err(err)).collect())
        .collect()
}

/// Ranks alternatives given as `scores[alternative][criterion] = [(value, prob), ...]`.
#[pyfunction]
#[pyo3(signature = (scores, weights = (0.6, 0.4), nu = 0.75))]
fn rank<'py>(
    py: Python<'py>,
    scores: Vec<Vec<Vec<(f64, f64)>>>,
    weights: (f64, f64),
    nu: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let result = mcdm::rank(&distributions(scores)?, &criteria(weights, nu)?).map_err(err)?;
    to_py(py, &result)
}

/// Same inputs as `rank`, computed by exhaustive enumeration.
#[pyfunction]
#[pyo3(signature = (scores, weights = (0.6, 0.4), nu = 0.75))]
fn brute_force_rank<'py>(
    py: Python<'py>,
    scores: Vec<Vec<Vec<(f64, f64)>>>,
    weights: (f64, f64),
    nu: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let tables = mcdm::outcome_tables(&distributions(scores)?);
    let result = mcdm::brute_force_rank(&tables, &criteria(weights, nu)?).map_err(err)?;
    to_py(py, &result)
}

#[pyfunction]
fn comfort_hvac(zone_temp_c: f64, desired_temp_c: f64, delta_c: f64, alpha: f64) -> PyResult<f64> {
    scoring::comfort_hvac(zone_temp_c, desired_temp_c, delta_c, alpha).map_err(err)
}

#[pyfunction]
fn comfort_light(power_w: f64, rated_power_w: f64) -> PyResult<f64> {
    scoring::comfort_light(power_w, rated_power_w).map_err(err)
}

#[pyfunction]
fn curtailment_score(reduction_w: f64, alpha2: f64, p_max_w: f64, p_min_w: f64) -> PyResult<f64> {
    let params = CurtailmentScaleParams::new(alpha2, p_max_w, p_min_w).map_err(err)?;
    Ok(scoring::curtailment_score(reduction_w, &params).map_err(err)?.value)
}

/// Scores and ranks every alternative at the emulator's current state.
#[pyfunction]
#[pyo3(signature = (emulator, models, weights = (0.6, 0.4), nu = 0.75, horizon_min = 5))]
fn rank_building<'py>(
    py: Python<'py>,
    emulator: &PyEmulator,
    models: &Models,
    weights: (f64, f64),
    nu: f64,
    horizon_min: u32,
) -> PyResult<Bound<'py, PyAny>> {
    let ranked = rank_alternatives(
        emulator.inner.building(),
        emulator.inner.snapshot(),
        &models.inner,
        &criteria(weights, nu)?,
        horizon_min,
        ControllerConfig::default().alpha2,
    )
    .map_err(err)?;
    to_py(py, &ranked)
}

/// Runs one closed-loop event from the emulator's current state and returns
/// the report.
#[pyfunction]
#[pyo3(signature = (emulator, models, start_hour, end_hour, target_w = None, weights = (0.6, 0.4), nu = 0.75))]
#[allow(clippy::too_many_arguments)]
fn run_event<'py>(
    py: Python<'py>,
    emulator: &mut PyEmulator,
    models: &Models,
    start_hour: f64,
    end_hour: f64,
    target_w: Option<f64>,
    weights: (f64, f64),
    nu: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let event = CurtailmentEvent {
        start: Timestamp::from_hours(start_hour),
        end: Timestamp::from_hours(end_hour),
        target_reduction_w: target_w,
        criteria: None,
    };
    let config = ControllerConfig {
        criteria: criteria(weights, nu)?,
        ..ControllerConfig::default()
    };
    let report = run_event_core(&event, &mut emulator.inner, &models.inner, &config).map_err(err)?;
    to_py(py, &report)
}

#[pymodule]
fn loadrank_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBuilding>()?;
    m.add_class::<PyEmulator>()?;
    m.add_class::<SnapshotLog>()?;
    m.add_class::<Models>()?;
    m.add_function(wrap_pyfunction!(rank, m)?)?;
    m.add_function(wrap_pyfunction!(brute_force_rank, m)?)?;
    m.add_function(wrap_pyfunction!(comfort_hvac, m)?)?;
    m.add_function(wrap_pyfunction!(comfort_light, m)?)?;
    m.add_function(wrap_pyfunction!(curtailment_score, m)?)?;
    m.add_function(wrap_pyfunction!(rank_building, m)?)?;
    m.add_function(wrap_pyfunction!(run_event, m)?)?;
    Ok(())
}
