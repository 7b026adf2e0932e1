//! Occupancy-aware ranking and dispatch of building load-curtailment actions.

pub mod chiller;
pub mod controller;
pub mod domain;
pub mod emulator;
pub mod mcdm;
pub mod occupancy;
pub mod scoring;
pub mod training;
