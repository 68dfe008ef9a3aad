//! Storage layer of a log-is-the-database cloud RDBMS, built as a
//! deterministic single-process simulation.

pub mod audit;
pub mod availability;
pub mod bench;
pub mod config;
pub mod disk;
pub mod logstore;
pub mod msg;
pub mod pagestore;
pub mod record;
pub mod replica;
pub mod sal;
pub mod sim;
pub mod types;
