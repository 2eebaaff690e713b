//! Mean free path along `mu`-distributed orbits.

use super::tail::Estimate;
use crate::dynamics::{orbit, sample_mu, DynamicsError};
use crate::geometry::Table;
use crate::rng::par_chunks;
use serde::Serialize;

/// Stream tag of mean-free-path runs.
const TAG_MFP: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanFreePath {
    pub estimate: Estimate,
    /// `pi * area / perimeter`.
    pub exact: f64,
    pub relative_error: f64,
    pub collisions: u64,
    pub chains: u64,
    pub truncated_chains: u64,
}

/// Averages the free path over `chains` orbits of `steps` collisions, each
/// started from an independent `mu` sample. A chain stopped by a corner keeps
/// the collisions it completed.
pub fn mean_free_path(table: &Table, chains: u64, steps: u64, seed: u64) -> Result<MeanFreePath, DynamicsError> {
    let per_chain = par_chunks(seed, TAG_MFP, chains, 1, |_, _, _, rng| {
        let x = sample_mu(table, rng);
        let mut sum = 0.0;
        let s = orbit(table, x, steps, |ev| sum += ev.free_path)?;
        Ok::<_, DynamicsError>((sum, s.completed, s.truncated))
    });
    let mut sums = Vec::with_capacity(per_chain.len());
    let (mut total, mut count, mut truncated) = (0.0, 0u64, 0u64);
    for c in per_chain {
        let (sum, n, t) = c?;
        total += sum;
        count += n;
        truncated += t as u64;
        if n > 0 {
            sums.push((sum, n as f64));
        }
    }
    let mean = total / count as f64;
    // ratio-estimator variance over chains
    let k = sums.len() as f64;
    let nbar = count as f64 / k;
    let var = sums.iter().map(|(s, n)| (s - mean * n).powi(2)).sum::<f64>() / (k - 1.0).max(1.0) / (k * nbar * nbar);
    let exact = table.mean_free_path();
    Ok(MeanFreePath {
        estimate: Estimate {
            value: mean,
            se: var.sqrt(),
        },
        exact,
        relative_error: (mean - exact).abs() / exact,
        collisions: count,
        chains,
        truncated_chains: truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_custom_disc, build_stadium};
    use std::f64::consts::PI;

    #[test]
    fn stadium_matches_the_area_identity() {
        let t = build_stadium(2.0, 1.0).unwrap();
        let m = mean_free_path(&t, 200, 1000, 9).unwrap();
        assert!((m.exact - PI * (4.0 + PI) / (4.0 + 2.0 * PI)).abs() < 1e-12);
        assert!(m.relative_error < 0.02, "{:?}", m);
        assert!(m.estimate.se > 0.0);
    }

    #[test]
    fn disc_value() {
        let d = build_custom_disc(1.0).unwrap();
        let m = mean_free_path(&d, 400, 50, 2).unwrap();
        assert!((m.exact - PI / 2.0).abs() < 1e-12);
        assert!(m.relative_error < 0.02, "{:?}", m);
    }
}
