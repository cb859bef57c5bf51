//! Multi-source misinformation verification by tree search over tools.
//!
//! A news item is checked for each configured forgery source (a subtask) by
//! a reasoner that plans tool calls, scores the resulting trajectories and
//! decides which source to investigate next. See the crate README for the
//! command-line front end.

pub mod bench;
pub mod cases;
pub mod decision;
pub mod domain;
pub mod grammar;
pub mod profile;
pub mod reasoner;
pub mod search;
pub mod selector;
pub mod toolkit;
