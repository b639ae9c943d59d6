//! Syntactic tracking of road-constrained targets.
//!
//! The crate couples a context-conditioned stochastic grammar over road
//! sequences with a particle filter driven by radar-style measurements, so a
//! tracker can both follow a vehicle on a road grid and classify the intent
//! pattern of its trajectory (equal search, asymmetric search, patrol).
//!
//! Start with the runnable examples:
//! - `build_roadmap`: construct a grid network and dump it as text
//! - `sample_trajectories`: draw road strings from each intent grammar
//! - `parse_prefix`: incremental parsing, step likelihoods, next-road forecast
//! - `track_target`: full particle-filter run on a simulated scenario
//! - `classify_perturbed`: two-sided parsing of corrupted road strings
//! - `consistency_check`: grammar health checks (probability mass, termination)

pub mod error;
pub mod expcli;
pub mod grammar;
pub mod kinematics;
pub mod parser;
pub mod roadgraph;
pub mod simgen;
pub mod tracker;

pub use error::{Error, Result};
