//! Affine chiller-power model identified by least squares:
//!
//! ```text
//! P_chiller ≈ beta0 + beta_out * T_out + Σ_z beta_z * T_set,z
//! ```
//!
//! `beta_z` is the sensitivity of chiller power to zone `z`'s set-point and is
//! what HVAC curtailment estimates are built on.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::Timestamp;

/// Condition number of the (column-equilibrated) normal matrix above which the
/// solver switches from Cholesky to SVD.
const NORMAL_EQUATIONS_MAX_COND: f64 = 1e8;
/// Relative singular value below which a design direction counts as unidentifiable.
const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum ChillerError {
    #[error("need at least {needed} observations, got {got}")]
    TooFewObservations { needed: usize, got: usize },
    #[error("observation {index}: {reason}")]
    BadObservation { index: usize, reason: String },
    #[error("design matrix is rank deficient; collinear columns: {}", columns.join(", "))]
    Unidentifiable { columns: Vec<String> },
    #[error("expected {expected} set-points, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("unknown zone '{0}'")]
    UnknownZone(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv: {0}")]
    Format(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChillerObservation {
    pub timestamp: Timestamp,
    pub chiller_power_w: f64,
    pub outdoor_temp_c: f64,
    /// One set-point per zone, in the model's zone order.
    pub setpoints_c: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    NormalEquations,
    Svd,
}

/// Summary of `(predicted - observed) / observed` over the fit sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeErrorSummary {
    pub mean: f64,
    pub std: f64,
    pub p05: f64,
    pub p50: f64,
    pub p95: f64,
    /// Fraction of samples with `|relative error| <= 0.10`.
    pub within_10pct: f64,
    /// Histogram of relative errors over [-0.25, 0.25] in 0.025 bins (densities).
    pub density: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChillerFitStats {
    pub samples_used: usize,
    pub samples_filtered: usize,
    pub min_outdoor_temp_c: Option<f64>,
    pub rmse_w: f64,
    pub relative_error: RelativeErrorSummary,
    pub solver: Solver,
    pub condition_number: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChillerFitOptions {
    /// Keep only samples at or above this outdoor temperature.
    pub min_outdoor_temp_c: Option<f64>,
    /// Required observations per unknown coefficient.
    pub samples_per_parameter: usize,
}

impl Default for ChillerFitOptions {
    fn default() -> Self {
        Self {
            min_outdoor_temp_c: Some(24.0),
            samples_per_parameter: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChillerModel {
    pub zone_ids: Vec<String>,
    pub beta0: f64,
    pub beta_out: f64,
    pub beta_z: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_stats: Option<ChillerFitStats>,
}

impl ChillerModel {
    pub fn new(
        zone_ids: Vec<String>,
        beta0: f64,
        beta_out: f64,
        beta_z: Vec<f64>,
    ) -> Result<Self, ChillerError> {
        if zone_ids.len() != beta_z.len() {
            return Err(ChillerError::LengthMismatch {
                expected: zone_ids.len(),
                got: beta_z.len(),
            });
        }
        Ok(Self {
            zone_ids,
            beta0,
            beta_out,
            beta_z,
            fit_stats: None,
        })
    }

    pub fn zone_count(&self) -> usize {
        self.zone_ids.len()
    }

    pub fn sensitivity(&self, zone_id: &str) -> Result<f64, ChillerError> {
        self.zone_ids
            .iter()
            .position(|z| z == zone_id)
            .map(|i| self.beta_z[i])
            .ok_or_else(|| ChillerError::UnknownZone(zone_id.to_string()))
    }

    pub fn predict_power(&self, outdoor_temp_c: f64, setpoints_c: &[f64]) -> Result<f64, ChillerError> {
        if setpoints_c.len() != self.beta_z.len() {
            return Err(ChillerError::LengthMismatch {
                expected: self.beta_z.len(),
                got: setpoints_c.len(),
            });
        }
        Ok(self.beta0
            + self.beta_out * outdoor_temp_c
            + self
                .beta_z
                .iter()
                .zip(setpoints_c)
                .map(|(b, t)| b * t)
                .sum::<f64>())
    }

    /// Chiller power change from moving one zone's set-point by `delta_setpoint_c`.
    /// Negative in cooling season for upward moves.
    pub fn setpoint_power_delta(&self, zone_id: &str, delta_setpoint_c: f64) -> Result<f64, ChillerError> {
        Ok(self.sensitivity(zone_id)? * delta_setpoint_c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("chiller model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ChillerError> {
        let m: ChillerModel = serde_json::from_str(text)?;
        if m.zone_ids.len() != m.beta_z.len() {
            return Err(ChillerError::LengthMismatch {
                expected: m.zone_ids.len(),
                got: m.beta_z.len(),
            });
        }
        Ok(m)
    }
}

fn column_names(zone_ids: &[String]) -> Vec<String> {
    let mut names = vec!["intercept".to_string(), "outdoor_temp".to_string()];
    names.extend(zone_ids.iter().map(|z| format!("setpoint_{z}")));
    names
}

/// Ordinary least squares fit of the affine chiller model.
///
/// Solves the normal equations on a column-equilibrated design and falls back
/// to an SVD solve when their condition number exceeds 1e8. A numerically
/// rank-deficient design is rejected, naming the columns involved.
pub fn fit_chiller(
    zone_ids: &[String],
    observations: &[ChillerObservation],
    options: &ChillerFitOptions,
) -> Result<ChillerModel, ChillerError> {
    let zones = zone_ids.len();
    let params = zones + 2;
    for (index, o) in observations.iter().enumerate() {
        if o.setpoints_c.len() != zones {
            return Err(ChillerError::BadObservation {
                index,
                reason: format!("{} set-points for {zones} zones", o.setpoints_c.len()),
            });
        }
        let finite = o.chiller_power_w.is_finite()
            && o.outdoor_temp_c.is_finite()
            && o.setpoints_c.iter().all(|t| t.is_finite());
        if !finite || o.chiller_power_w < 0.0 {
            return Err(ChillerError::BadObservation {
                index,
                reason: "non-finite value or negative power".into(),
            });
        }
    }
    let kept: Vec<&ChillerObservation> = observations
        .iter()
        .filter(|o| options.min_outdoor_temp_c.is_none_or(|t| o.outdoor_temp_c >= t))
        .collect();
    let needed = options.samples_per_parameter * params;
    if kept.len() < needed.max(params) {
        return Err(ChillerError::TooFewObservations {
            needed: needed.max(params),
            got: kept.len(),
        });
    }

    let n = kept.len();
    let design = DMatrix::from_fn(n, params, |r, c| match c {
        0 => 1.0,
        1 => kept[r].outdoor_temp_c,
        _ => kept[r].setpoints_c[c - 2],
    });
    let target = DVector::from_iterator(n, kept.iter().map(|o| o.chiller_power_w));

    let scales: Vec<f64> = (0..params)
        .map(|c| {
            let norm = design.column(c).norm();
            if norm > 0.0 {
                norm
            } else {
                1.0
            }
        })
        .collect();
    let mut scaled = design.clone();
    for (c, s) in scales.iter().enumerate() {
        scaled.column_mut(c).scale_mut(1.0 / s);
    }

    let normal = scaled.transpose() * &scaled;
    let eig = normal.clone().symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let normal_cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };

    let rhs = scaled.transpose() * &target;
    let cholesky = (normal_cond <= NORMAL_EQUATIONS_MAX_COND)
        .then(|| normal.clone().cholesky())
        .flatten();
    let (solution, solver, condition_number) = match cholesky {
        Some(ch) => (ch.solve(&rhs), Solver::NormalEquations, normal_cond.sqrt()),
        None => {
            let svd = scaled.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let v_t = svd.v_t.as_ref().expect("v_t requested");
            let mut collinear = vec![false; params];
            let mut deficient = false;
            for (i, &s) in svd.singular_values.iter().enumerate() {
                if s <= RANK_TOL * smax {
                    deficient = true;
                    for (c, flag) in collinear.iter_mut().enumerate() {
                        if v_t[(i, c)].abs() > 1e-6 {
                            *flag = true;
                        }
                    }
                }
            }
            if deficient {
                let names = column_names(zone_ids);
                return Err(ChillerError::Unidentifiable {
                    columns: names
                        .into_iter()
                        .zip(collinear)
                        .filter_map(|(n, f)| f.then_some(n))
                        .collect(),
                });
            }
            let smin = svd.singular_values.min();
            let sol = svd
                .solve(&target, RANK_TOL * smax)
                .map_err(|e| ChillerError::Format(e.to_string()))?;
            (sol, Solver::Svd, smax / smin)
        }
    };

    let beta: Vec<f64> = solution
        .iter()
        .zip(&scales)
        .map(|(b, s)| b / s)
        .collect();
    let beta_vec = DVector::from_column_slice(&beta);
    let predicted = &design * &beta_vec;

    let residuals = &predicted - &target;
    let rmse_w = (residuals.norm_squared() / n as f64).sqrt();
    let rel: Vec<f64> = predicted
        .iter()
        .zip(target.iter())
        .filter(|(_, obs)| **obs > 0.0)
        .map(|(p, obs)| (p - obs) / obs)
        .collect();

    let mut model = ChillerModel::new(zone_ids.to_vec(), beta[0], beta[1], beta[2..].to_vec())?;
    model.fit_stats = Some(ChillerFitStats {
        samples_used: n,
        samples_filtered: observations.len() - n,
        min_outdoor_temp_c: options.min_outdoor_temp_c,
        rmse_w,
        relative_error: summarize_relative_errors(&rel),
        solver,
        condition_number,
    });
    Ok(model)
}

fn summarize_relative_errors(rel: &[f64]) -> RelativeErrorSummary {
    if rel.is_empty() {
        return RelativeErrorSummary {
            mean: 0.0,
            std: 0.0,
            p05: 0.0,
            p50: 0.0,
            p95: 0.0,
            within_10pct: 0.0,
            density: vec![0.0; 20],
        };
    }
    let n = rel.len() as f64;
    let mean = rel.iter().sum::<f64>() / n;
    let std = (rel.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut sorted = rel.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| sorted[((p * (sorted.len() - 1) as f64).round()) as usize];
    let within = rel.iter().filter(|r| r.abs() <= 0.10).count() as f64 / n;
    const BIN: f64 = 0.025;
    let mut density = vec![0.0; 20];
    for r in rel {
        let b = ((r + 0.25) / BIN).floor();
        if (0.0..20.0).contains(&b) {
            density[b as usize] += 1.0 / (n * BIN);
        }
    }
    RelativeErrorSummary {
        mean,
        std,
        p05: q(0.05),
        p50: q(0.5),
        p95: q(0.95),
        within_10pct: within,
        density,
    }
}

/// Reads `timestamp,chiller_power_W,outdoor_temp_C,setpoint_<zone>_C,...`.
/// Returns the zone ids in column order and the observations.
pub fn read_observations_csv<R: Read>(
    reader: R,
) -> Result<(Vec<String>, Vec<ChillerObservation>), ChillerError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ChillerError::Format(format!("missing column '{name}'")))
    };
    let ts = col("timestamp")?;
    let power = col("chiller_power_W")?;
    let tout = col("outdoor_temp_C")?;
    let setpoint_cols: Vec<(usize, String)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            h.strip_prefix("setpoint_")
                .and_then(|r| r.strip_suffix("_C"))
                .map(|z| (i, z.to_string()))
        })
        .collect();
    let zone_ids = setpoint_cols.iter().map(|(_, z)| z.clone()).collect();
    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64, ChillerError> {
            rec.get(i)
                .and_then(|v| v.trim().parse::<f64>().ok())
                .ok_or_else(|| ChillerError::Format(format!("row {}: bad number in column {i}", row + 1)))
        };
        let timestamp = rec
            .get(ts)
            .and_then(Timestamp::parse)
            .ok_or_else(|| ChillerError::Format(format!("row {}: bad timestamp", row + 1)))?;
        out.push(ChillerObservation {
            timestamp,
            chiller_power_w: num(power)?,
            outdoor_temp_c: num(tout)?,
            setpoints_c: setpoint_cols
                .iter()
                .map(|(i, _)| num(*i))
                .collect::<Result<_, _>>()?,
        });
    }
    Ok((zone_ids, out))
}

pub fn write_observations_csv<W: Write>(
    writer: W,
    zone_ids: &[String],
    observations: &[ChillerObservation],
) -> Result<(), ChillerError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![
        "timestamp".to_string(),
        "chiller_power_W".to_string(),
        "outdoor_temp_C".to_string(),
    ];
    header.extend(zone_ids.iter().map(|z| format!("setpoint_{z}_C")));
    w.write_record(&header)?;
    for o in observations {
        let mut rec = vec![
            o.timestamp.to_iso8601(),
            format!("{:.3}", o.chiller_power_w),
            format!("{:.3}", o.outdoor_temp_c),
        ];
        rec.extend(o.setpoints_c.iter().map(|t| format!("{t:.3}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
