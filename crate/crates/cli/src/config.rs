//! Experiment configurations and their hashes.

use billiard_core::geometry::TableSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything that determines the outputs of a run. Worker count, output
/// directory, timeout and plot emission are run options, not configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// The argument the table was given as, kept for the record.
    pub table_arg: String,
    pub table: TableSpec,
    pub seed: u64,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Experiment {
    Validate,
    Orbit {
        /// `(r, phi)`; a `mu`-random start when absent.
        start: Option<[f64; 2]>,
        steps: u64,
    },
    Correlation {
        f: String,
        g: String,
        /// `full` or `induced`.
        map: String,
        n_max: u64,
        steps: u64,
        burn_in: u64,
        batches: u64,
        winsorize: Option<f64>,
    },
    Tail {
        samples: u64,
        r_max: u64,
        levels: u32,
        n_min: f64,
        min_count: u64,
    },
    Cells {
        samples: u64,
        r_max: u64,
        levels: u32,
        n_min: u64,
        min_count: u64,
        bins_per_decade: u32,
        /// Relative threshold perturbation of the sensitivity check.
        delta: f64,
    },
    Diagnostics {
        probe: Probe,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Probe {
    Invariants {
        points: u64,
    },
    Invariance {
        samples: u64,
    },
    MeanFreePath {
        chains: u64,
        steps: u64,
    },
    /// Expansion sums over seeded curves, with the cell ranges they cross.
    Sums {
        curves: u64,
        resolution: u64,
        half_length: f64,
        spread: f64,
        n1_min: u64,
    },
    Strips {
        per_strip: u64,
        k0: u32,
        k_max: u32,
    },
    Expansion {
        cell_kind: String,
        samples: u64,
        levels: u32,
        n_min: u64,
    },
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Validate => "validate",
            Experiment::Orbit { .. } => "orbit",
            Experiment::Correlation { .. } => "correlation",
            Experiment::Tail { .. } => "tail",
            Experiment::Cells { .. } => "cells",
            Experiment::Diagnostics { .. } => "diagnostics",
        }
    }
}

impl ExperimentConfig {
    /// SHA-256 of the canonical JSON form, in hex.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("configs serialize");
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            table_arg: "stadium:l=2,r=1".into(),
            table: TableSpec::from_shorthand("stadium:l=2,r=1").unwrap(),
            seed,
            experiment: Experiment::Tail {
                samples: 1000,
                r_max: 100,
                levels: 10,
                n_min: 10.0,
                min_count: 100,
            },
        }
    }

    #[test]
    fn hash_depends_on_seed_only_through_config() {
        assert_eq!(config(1).hash(), config(1).hash());
        assert_ne!(config(1).hash(), config(2).hash());
        assert_eq!(config(1).hash().len(), 64);
    }

    #[test]
    fn json_round_trip() {
        let c = config(7);
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
    }
}
