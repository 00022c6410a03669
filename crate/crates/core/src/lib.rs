//! Deliberative forecasting engine and evaluation harness.
//!
//! Groups of three forecasting agents answer binary questions twice: once
//! independently and once after reading two peers' rationales. Group
//! forecasts are the median of the three members. The crate plans and
//! executes runs, scores them, and produces the statistical report.

pub mod agents;
pub mod config;
pub mod corpus;
pub mod pipeline;
pub mod protocol;
pub mod report;
pub mod retry;
pub mod scoring;
pub mod stats;
