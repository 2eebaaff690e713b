//! Billiard collision maps, induced first-return maps and the statistical
//! estimators built on them.

pub mod geometry;
pub mod diagnostics;
pub mod dynamics;
pub mod rng;
pub mod induced;
pub mod stats;
