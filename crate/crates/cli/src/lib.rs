//! Configuration, experiment runner and acceptance suite behind `irand`.

pub mod acceptance;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod output;
