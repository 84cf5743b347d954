//! Threat-oriented digital twin testbed for multi-sensor autonomy.

pub mod autonomy;
pub mod bundled;
pub mod channel;
pub mod eventlog;
pub mod gateway;
pub mod harness;
pub mod hosts;
pub mod live;
pub mod message;
pub mod metrics;
pub mod perception;
pub mod relay;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod topology;
