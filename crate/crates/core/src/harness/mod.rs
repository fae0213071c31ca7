//! Evaluation harness: closed-loop simulation, open-loop replays, metrics,
//! ablation variants and plots.

pub mod ablation;
pub mod metrics;
pub mod replay;
pub mod scenario;
pub mod sim;
pub mod svg;
