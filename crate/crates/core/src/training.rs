//! Historical-data generation and model fitting for the controller.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::chiller::{fit_chiller, ChillerError, ChillerFitOptions};
use crate::controller::ControllerModels;
use crate::domain::{ApplianceKind, Building, Timestamp};
use crate::emulator::{snapshots_to_observations, snapshots_to_traces, Command, Emulator, EmulatorError, Snapshot};
use crate::occupancy::{fit_occupancy, OccupancyError, OccupancyFitOptions, DEFAULT_INTERVAL_S};

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error(transparent)]
    Emulator(#[from] EmulatorError),
    #[error(transparent)]
    Chiller(#[from] ChillerError),
    #[error(transparent)]
    Occupancy(#[from] OccupancyError),
    #[error("need at least one day of data, got {0}")]
    NoDays(u32),
    #[error("log is empty")]
    EmptyLog,
}

/// Occupancy fit settings used for controller models: default layout with a
/// within-window prior of five pseudo-observations per row.
pub fn occupancy_fit_options() -> OccupancyFitOptions {
    OccupancyFitOptions {
        pooling: 5.0,
        ..OccupancyFitOptions::default()
    }
}

/// Runs the emulator for `days`, re-drawing every HVAC set-point offset
/// uniformly at random at the top of each hour so the chiller regression sees
/// independent set-point variation. All commands are released at the end.
pub fn generate_training_log(
    emulator: &mut Emulator,
    days: u32,
    excitation_seed: u64,
) -> Result<Vec<Snapshot>, TrainingError> {
    if days == 0 {
        return Err(TrainingError::NoDays(days));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(excitation_seed);
    let knobs: Vec<(String, usize)> = emulator
        .building()
        .appliances()
        .filter(|(_, a)| a.kind == ApplianceKind::HvacSetpoint)
        .map(|(_, a)| (a.id.clone(), a.settings.len()))
        .collect();
    let end = emulator.clock().plus_seconds(days as i64 * Timestamp::SECONDS_PER_DAY);
    let mut log = vec![emulator.snapshot().clone()];
    while emulator.clock() < end {
        for (id, n) in &knobs {
            emulator.submit(Command::Set {
                appliance_id: id.clone(),
                setting_index: rng.random_range(0..*n),
            })?;
        }
        let next_hour = Timestamp((emulator.clock().0.div_euclid(3600) + 1) * 3600).min(end);
        log.extend(emulator.run_until(next_hour)?);
    }
    emulator.submit(Command::ReleaseAll)?;
    Ok(log)
}

/// Fits the chiller regression and one occupancy chain per zone from a
/// snapshot log.
pub fn fit_models(
    building: &Building,
    log: &[Snapshot],
    chiller_options: &ChillerFitOptions,
    occupancy_options: &OccupancyFitOptions,
) -> Result<ControllerModels, TrainingError> {
    if log.is_empty() {
        return Err(TrainingError::EmptyLog);
    }
    let chiller = fit_chiller(&building.zone_ids(), &snapshots_to_observations(log), chiller_options)?;
    let occupancy = snapshots_to_traces(log, DEFAULT_INTERVAL_S)?
        .iter()
        .map(|t| fit_occupancy(t, occupancy_options))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ControllerModels { chiller, occupancy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::emulator::EmulatorConfig;

    #[test]
    fn fitted_models_cover_the_building() {
        let b = Building::office(1);
        let cfg = EmulatorConfig {
            seed: 11,
            dt_s: 300,
            occupancy_training_days: 7,
            ..EmulatorConfig::default()
        };
        let mut emu = Emulator::new(b.clone(), cfg).unwrap();
        assert!(matches!(generate_training_log(&mut emu, 0, 1), Err(TrainingError::NoDays(0))));
        let log = generate_training_log(&mut emu, 8, 1).unwrap();
        assert_eq!(log.len(), 8 * 288 + 1);
        let models = fit_models(&b, &log, &ChillerFitOptions::default(), &occupancy_fit_options()).unwrap();
        models.check(&b).unwrap();
        let truth = emu.truth_chiller();
        for (fit, real) in models.chiller.beta_z.iter().zip(&truth.beta_z) {
            assert!((fit - real).abs() < 0.1 * real.abs(), "{fit} vs {real}");
        }
        emu.step().unwrap();
        assert!(emu.snapshot().appliances.iter().all(|a| !a.commanded));
    }
}
