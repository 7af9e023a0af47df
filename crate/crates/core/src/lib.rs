//! Peer-to-peer energy market simulation: allocation by differential
//! evolution over buyers' perceived value, seller pricing by Q-learning, and a
//! greedy baseline.

pub mod cli;
pub mod config;
pub mod debate;
pub mod error;
pub mod instances;
pub mod market;
pub mod pqr;
pub mod report;
pub mod rng;
pub mod rule;
pub mod sim;
pub mod traces;

pub use config::{SimulationConfig, Strategy};
pub use error::{MarketError, Result};
