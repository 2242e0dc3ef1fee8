//! Command-line harness: runs the full submission pipeline with per-phase
//! timing and inspects the ledger dumps it leaves behind.

pub mod artifacts;
pub mod commands;
pub mod pipeline;
pub mod timing;
