//! Invariance check of `mu` under one step of the collision map.

use crate::dynamics::{collision_map, sample_mu};
use crate::geometry::Table;
use crate::rng::par_chunks;
use serde::Serialize;

const TAG_INVARIANCE: u32 = 4;
const CHUNK: u64 = 100_000;

/// KS distances of the pushforward marginals from the uniform laws of
/// `r / |dQ|` on `[0, 1]` and `sin(phi)` on `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvarianceReport {
    pub samples: u64,
    /// Samples whose image could not be computed (corner hits).
    pub failures: u64,
    pub ks_r: f64,
    pub ks_sin_phi: f64,
}

impl InvarianceReport {
    pub fn max_ks(&self) -> f64 {
        self.ks_r.max(self.ks_sin_phi)
    }
}

/// Kolmogorov-Smirnov distance of `values` (each in `[0, 1]`) from the
/// uniform distribution. Sorts in place.
pub fn ks_uniform(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len() as f64;
    values
        .iter()
        .enumerate()
        .map(|(i, &u)| ((i as f64 + 1.0) / n - u).max(u - i as f64 / n))
        .fold(0.0, f64::max)
}

/// Pushes `samples` points of `mu` forward once and compares the marginals
/// of the images with those of `mu`.
pub fn pushforward_ks(table: &Table, samples: u64, seed: u64) -> InvarianceReport {
    let perimeter = table.perimeter();
    let chunks = par_chunks(seed, TAG_INVARIANCE, samples, CHUNK, |_, _, len, rng| {
        let mut r = Vec::with_capacity(len as usize);
        let mut s = Vec::with_capacity(len as usize);
        let mut failures = 0u64;
        for _ in 0..len {
            match collision_map(table, sample_mu(table, rng)) {
                Ok(ev) => {
                    r.push(ev.point.r / perimeter);
                    s.push((ev.point.phi.sin() + 1.0) / 2.0);
                }
                Err(_) => failures += 1,
            }
        }
        (r, s, failures)
    });
    let mut failures = 0;
    let (mut r, mut s) = (Vec::with_capacity(samples as usize), Vec::with_capacity(samples as usize));
    for (cr, cs, f) in chunks {
        r.extend(cr);
        s.extend(cs);
        failures += f;
    }
    InvarianceReport {
        samples,
        failures,
        ks_r: ks_uniform(&mut r),
        ks_sin_phi: ks_uniform(&mut s),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_stadium;

    #[test]
    fn ks_of_a_regular_grid() {
        let mut v: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
        assert!((ks_uniform(&mut v) - 0.005).abs() < 1e-12);
    }

    #[test]
    fn ks_of_a_point_mass() {
        let mut v = vec![0.0; 10];
        assert!((ks_uniform(&mut v) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stadium_pushforward_is_uniform() {
        let t = build_stadium(2.0, 1.0).unwrap();
        let rep = pushforward_ks(&t, 200_000, 5);
        assert_eq!(rep.failures, 0);
        assert!(rep.max_ks() < 0.01, "{rep:?}");
    }
}
