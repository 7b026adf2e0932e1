//! HTTP service and command-line front end for the load-curtailment
//! controller.

pub mod api;
pub mod cli;
pub mod session;
