//! Command-line pipeline: synthetic cohort through planning, plus the
//! planning service.

pub mod config;
pub mod stages;
pub mod svg;
