//! Empirical measures of the cells `M_n`, histogrammed by index per kind.

use super::fit::{weighted_linear_fit, LinearFit, MIN_BINS};
use super::tail::{run_ensemble, EnsembleOptions, ReturnEnsemble, WeightedReturn};
use crate::geometry::Table;
use crate::induced::{CellKind, CellLabel, ClassifyParams, InducedError, SubsetSpec};
use serde::Serialize;
use std::collections::BTreeMap;

/// Mass of one `(kind, n)` cell, as a fraction of the whole collision space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellMass {
    pub kind: CellKind,
    pub n: u64,
    pub mass: f64,
    pub se: f64,
    pub count: u64,
}

/// Log-binned mass per unit index and its log-log slope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellScaling {
    pub kind: CellKind,
    /// Geometric centre of each bin.
    pub n: Vec<f64>,
    /// Mean mass of a single cell in the bin.
    pub mass: Vec<f64>,
    pub counts: Vec<u64>,
    pub fit: Option<LinearFit>,
    pub n_lo: f64,
    pub n_hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalingOptions {
    pub n_min: u64,
    pub min_count: u64,
    pub bins_per_decade: u32,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        Self {
            n_min: 10,
            min_count: 100,
            bins_per_decade: 8,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CellMeasures {
    pub masses: Vec<CellMass>,
    pub scalings: Vec<CellScaling>,
    pub drawn: u64,
    pub censored: u64,
}

/// Histogram of cell masses under a labelling of the ensemble records.
pub fn cell_masses(ensemble: &ReturnEnsemble, label: impl Fn(&WeightedReturn) -> CellLabel) -> Vec<CellMass> {
    let mut acc: BTreeMap<(CellKind, u64), (f64, f64, u64)> = BTreeMap::new();
    for rec in ensemble.records.iter().filter(|r| !r.censored) {
        let l = label(rec);
        let e = acc.entry((l.kind, l.n)).or_default();
        e.0 += rec.weight;
        e.1 += rec.weight * rec.weight;
        e.2 += 1;
    }
    let n = ensemble.drawn as f64;
    acc.into_iter()
        .map(|((kind, idx), (w, w2, count))| CellMass {
            kind,
            n: idx,
            mass: w / n,
            se: w2.sqrt() / n,
            count,
        })
        .collect()
}

/// Log-binned scaling of the masses of one kind. Bins start at `n_min` and
/// stop before the first bin with fewer than `min_count` raw samples.
pub fn cell_scaling(masses: &[CellMass], kind: CellKind, opts: &ScalingOptions) -> CellScaling {
    let of_kind: Vec<&CellMass> = masses.iter().filter(|m| m.kind == kind && m.n >= opts.n_min).collect();
    let max_n = of_kind.iter().map(|m| m.n).max().unwrap_or(0);
    let ratio = 10f64.powf(1.0 / opts.bins_per_decade as f64);
    let (mut ns, mut ms, mut cs) = (Vec::new(), Vec::new(), Vec::new());
    let mut lo = opts.n_min.max(1);
    while lo <= max_n {
        let hi = ((lo as f64 * ratio).round() as u64).max(lo + 1);
        let (mut mass, mut count) = (0.0, 0);
        for m in of_kind.iter().filter(|m| m.n >= lo && m.n < hi) {
            mass += m.mass;
            count += m.count;
        }
        if count < opts.min_count {
            break;
        }
        ns.push(((lo as f64) * ((hi - 1) as f64)).sqrt());
        ms.push(mass / (hi - lo) as f64);
        cs.push(count);
        lo = hi;
    }
    let fit = (ns.len() >= MIN_BINS).then(|| {
        let x: Vec<f64> = ns.iter().map(|v| v.ln()).collect();
        let y: Vec<f64> = ms.iter().map(|v| v.ln()).collect();
        let w: Vec<f64> = cs.iter().map(|&c| c as f64).collect();
        weighted_linear_fit(&x, &y, &w)
    });
    CellScaling {
        kind,
        n_lo: ns.first().copied().unwrap_or(0.0),
        n_hi: ns.last().copied().unwrap_or(0.0),
        n: ns,
        mass: ms,
        counts: cs,
        fit,
    }
}

/// Cell masses and per-kind scalings of an existing ensemble.
pub fn cell_measures_of(ensemble: &ReturnEnsemble, params: Option<&ClassifyParams>, opts: &ScalingOptions) -> CellMeasures {
    let masses = match params {
        Some(p) => cell_masses(ensemble, |r| r.reclassify(p)),
        None => cell_masses(ensemble, |r| r.cell),
    };
    let scalings = CellKind::ALL
        .into_iter()
        .filter(|&k| k != CellKind::Regular && masses.iter().any(|m| m.kind == k))
        .map(|k| cell_scaling(&masses, k, opts))
        .collect();
    CellMeasures {
        masses,
        scalings,
        drawn: ensemble.drawn,
        censored: ensemble.censored,
    }
}

/// Samples excursions from `mu` restricted to `M` and histograms their mass by
/// cell kind and index.
pub fn estimate_cell_measures(
    table: &Table,
    spec: SubsetSpec,
    opts: &EnsembleOptions,
    scaling: &ScalingOptions,
) -> Result<CellMeasures, InducedError> {
    let ens = run_ensemble(table, spec, opts)?;
    Ok(cell_measures_of(&ens, None, scaling))
}

/// Slope of one kind under the base thresholds and under both thresholds
/// scaled by `1 - delta` and `1 + delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdSensitivity {
    pub kind: CellKind,
    pub base: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl ThresholdSensitivity {
    /// Largest slope change, if all three fits exist.
    pub fn max_shift(&self) -> Option<f64> {
        let b = self.base?;
        Some((self.lower? - b).abs().max((self.upper? - b).abs()))
    }
}

pub fn threshold_sensitivity(
    ensemble: &ReturnEnsemble,
    kind: CellKind,
    base: &ClassifyParams,
    delta: f64,
    opts: &ScalingOptions,
) -> ThresholdSensitivity {
    let slope = |p: &ClassifyParams| {
        let masses = cell_masses(ensemble, |r| r.reclassify(p));
        cell_scaling(&masses, kind, opts).fit.map(|f| f.slope)
    };
    ThresholdSensitivity {
        kind,
        base: slope(base),
        lower: slope(&base.scaled(1.0 - delta)),
        upper: slope(&base.scaled(1.0 + delta)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mass(kind: CellKind, n: u64, mass: f64) -> CellMass {
        CellMass {
            kind,
            n,
            mass,
            se: 0.0,
            count: 1000,
        }
    }

    #[test]
    fn exact_cubic_scaling() {
        let masses: Vec<CellMass> = (1..5000)
            .map(|n| mass(CellKind::FlatRunDirect, n, (n as f64).powi(-3)))
            .collect();
        let s = cell_scaling(&masses, CellKind::FlatRunDirect, &ScalingOptions::default());
        let slope = s.fit.unwrap().slope;
        // bin averages of n^-3 at geometric centres carry a small bias
        assert!((slope + 3.0).abs() < 0.05, "{slope}");
        assert_eq!(s.n_lo.round(), 11.0);
    }

    #[test]
    fn sparse_bins_stop_the_window() {
        let mut masses: Vec<CellMass> = (10..200).map(|n| mass(CellKind::Sliding, n, 1.0)).collect();
        for m in masses.iter_mut().filter(|m| m.n >= 50) {
            m.count = 1;
        }
        let s = cell_scaling(&masses, CellKind::Sliding, &ScalingOptions::default());
        assert!(s.n.iter().all(|&n| n < 50.0));
    }

    #[test]
    fn other_kinds_are_ignored() {
        let masses = vec![mass(CellKind::Diametric, 20, 1.0)];
        let s = cell_scaling(&masses, CellKind::Sliding, &ScalingOptions::default());
        assert!(s.n.is_empty() && s.fit.is_none());
    }
}
