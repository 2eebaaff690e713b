//! Return-time ensembles and survival curves.

use super::fit::{fit_power_law, FitError, PowerLawFit, WindowPolicy};
use super::sampling::ImportanceSampler;
use crate::dynamics::PhasePoint;
use crate::geometry::Table;
use crate::induced::{
    in_m_traced, return_map, CellKind, CellLabel, ClassifyParams, InducedError, ReturnOptions,
    ReturnRecord, SubsetSpec,
};
use crate::rng::par_chunks;
use serde::Serialize;

/// Samples per deterministic work chunk.
pub const CHUNK: u64 = 4096;

/// Stream tag of the return-time ensemble.
const TAG_ENSEMBLE: u32 = 1;

/// Integer grid: every `n` up to 20, then about 20 points per decade.
pub fn n_grid(n_max: f64) -> Vec<f64> {
    let mut g: Vec<f64> = (0..=20).map(|n| n as f64).filter(|&n| n <= n_max).collect();
    let step = 10f64.powf(1.0 / 20.0);
    let mut v = 20.0;
    loop {
        v *= step;
        let k = v.round();
        if k > n_max {
            break;
        }
        if k > *g.last().unwrap() {
            g.push(k);
        }
    }
    g
}

/// Empirical survival function `P(R > n)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalCurve {
    pub n: Vec<f64>,
    pub p: Vec<f64>,
    pub se: Vec<f64>,
    /// Raw number of samples with `R > n`.
    pub counts: Vec<u64>,
    pub censored: u64,
    /// Bins at or beyond this `n` are affected by censoring.
    pub censored_from: Option<f64>,
}

impl SurvivalCurve {
    /// Exact curve from a function (infinite counts, zero error).
    pub fn from_function(f: impl Fn(f64) -> f64, n_max: f64) -> Self {
        let n: Vec<f64> = n_grid(n_max).into_iter().filter(|&v| v >= 1.0).collect();
        let p: Vec<f64> = n.iter().map(|&v| f(v)).collect();
        Self {
            se: vec![0.0; n.len()],
            counts: vec![u64::MAX; n.len()],
            n,
            p,
            censored: 0,
            censored_from: None,
        }
    }
}

/// One accepted sample of the return-time ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedReturn {
    pub weight: f64,
    pub start: PhasePoint,
    pub r: u64,
    pub censored: bool,
    pub flat_bounces: u64,
    pub same_arc_run: u64,
    pub run_mean_abs_phi: f64,
    pub start_component: usize,
    pub end_component: usize,
    pub cell: CellLabel,
}

impl WeightedReturn {
    fn from_record(weight: f64, rec: &ReturnRecord) -> Self {
        Self {
            weight,
            start: rec.start,
            r: rec.r,
            censored: rec.censored,
            flat_bounces: rec.flat_bounces,
            same_arc_run: rec.same_arc_run,
            run_mean_abs_phi: rec.run_mean_abs_phi,
            start_component: rec.start_component,
            end_component: rec.end_component,
            cell: rec.cell,
        }
    }

    /// The cell label under other classification thresholds.
    pub fn reclassify(&self, params: &ClassifyParams) -> CellLabel {
        crate::induced::label_from_counts(
            self.cell.anchor_id,
            self.start_is_focusing(),
            self.same_arc_run.max(1),
            self.run_mean_abs_phi,
            self.flat_bounces,
            params,
        )
    }

    fn start_is_focusing(&self) -> bool {
        self.same_arc_run > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnsembleOptions {
    pub samples: u64,
    pub r_max: u64,
    pub seed: u64,
    pub classify: ClassifyParams,
    /// Anchor levels of the importance sampler; zero means plain sampling.
    pub levels: u32,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        Self {
            samples: 100_000,
            r_max: crate::induced::DEFAULT_R_MAX,
            seed: 0,
            classify: ClassifyParams::default(),
            levels: 0,
        }
    }
}

/// Weighted return-time samples from `mu` restricted to `M`.
#[derive(Debug, Clone, Serialize)]
pub struct ReturnEnsemble {
    pub spec: SubsetSpec,
    pub drawn: u64,
    /// Sum of all proposal weights (estimates `drawn` under plain sampling).
    pub weight_total: f64,
    pub outside_m: u64,
    pub corner_starts: u64,
    pub truncated: u64,
    pub censored: u64,
    pub sampler: ImportanceSampler,
    #[serde(skip)]
    pub records: Vec<WeightedReturn>,
    #[serde(skip)]
    weights_sq_total: f64,
    #[serde(skip)]
    in_m_weight_sq: f64,
}

#[derive(Default)]
struct ChunkOut {
    records: Vec<WeightedReturn>,
    weight_total: f64,
    weight_sq_total: f64,
    outside: u64,
    corner: u64,
    truncated: u64,
}

/// Draws `opts.samples` points from the proposal, keeps those in `M`, and runs
/// the return map from each.
pub fn run_ensemble(table: &Table, spec: SubsetSpec, opts: &EnsembleOptions) -> Result<ReturnEnsemble, InducedError> {
    spec.check_compatible(table)?;
    let sampler = if opts.levels == 0 {
        ImportanceSampler::plain(table)
    } else {
        ImportanceSampler::for_table(table, opts.levels)
    };
    let ropts = ReturnOptions {
        r_max: opts.r_max,
        classify: opts.classify,
        jacobian: false,
    };
    let chunks = par_chunks(opts.seed, TAG_ENSEMBLE, opts.samples, CHUNK, |_, _, len, rng| {
        let mut out = ChunkOut::default();
        for _ in 0..len {
            let (x, w) = sampler.sample(rng);
            out.weight_total += w;
            out.weight_sq_total += w * w;
            match in_m_traced(table, spec, x) {
                Ok(Some(true)) => {}
                Ok(Some(false)) => {
                    out.outside += 1;
                    continue;
                }
                Ok(None) => {
                    out.corner += 1;
                    continue;
                }
                Err(e) => return Err(e),
            }
            let rec = return_map(table, spec, x, &ropts)?;
            if rec.truncated {
                out.truncated += 1;
                continue;
            }
            out.records.push(WeightedReturn::from_record(w, &rec));
        }
        Ok(out)
    });
    let mut ens = ReturnEnsemble {
        spec,
        drawn: opts.samples,
        weight_total: 0.0,
        outside_m: 0,
        corner_starts: 0,
        truncated: 0,
        censored: 0,
        sampler,
        records: Vec::new(),
        weights_sq_total: 0.0,
        in_m_weight_sq: 0.0,
    };
    for c in chunks {
        let c = c?;
        ens.weight_total += c.weight_total;
        ens.weights_sq_total += c.weight_sq_total;
        ens.outside_m += c.outside;
        ens.corner_starts += c.corner;
        ens.truncated += c.truncated;
        ens.records.extend(c.records);
    }
    ens.censored = ens.records.iter().filter(|r| r.censored).count() as u64;
    ens.in_m_weight_sq = ens.records.iter().map(|r| r.weight * r.weight).sum();
    Ok(ens)
}

/// Value and standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl ReturnEnsemble {
    fn weight_in_m(&self) -> f64 {
        self.records.iter().map(|r| r.weight).sum()
    }

    /// `mu(M) / mu(collision space)`.
    pub fn measure_fraction(&self) -> Estimate {
        let n = self.drawn as f64;
        let mean = self.weight_in_m() / n;
        let var = self.in_m_weight_sq / n - mean * mean;
        Estimate {
            value: mean,
            se: (var.max(0.0) / n).sqrt(),
        }
    }

    /// Weighted mean of the return time over `M` (censored values count as `r_max`).
    pub fn mean_return_time(&self) -> Estimate {
        let sw = self.weight_in_m();
        let mean = self.records.iter().map(|r| r.weight * r.r as f64).sum::<f64>() / sw;
        let var = self
            .records
            .iter()
            .map(|r| (r.weight * (r.r as f64 - mean)).powi(2))
            .sum::<f64>()
            / (sw * sw);
        Estimate {
            value: mean,
            se: var.sqrt(),
        }
    }

    /// Largest observed return time.
    pub fn max_return(&self) -> u64 {
        self.records.iter().map(|r| r.r).max().unwrap_or(0)
    }

    fn censored_from(&self) -> Option<f64> {
        self.records
            .iter()
            .filter(|r| r.censored)
            .map(|r| r.r as f64)
            .reduce(f64::min)
    }

    /// Survival of `R` under `mu` restricted to `M`.
    pub fn survival_m(&self) -> SurvivalCurve {
        let grid = n_grid(self.max_return().max(1) as f64);
        let mut sorted: Vec<(u64, f64)> = self.records.iter().map(|r| (r.r, r.weight)).collect();
        sorted.sort_by_key(|&(r, _)| r);
        let sw: f64 = sorted.iter().map(|&(_, w)| w).sum();
        let sw2: f64 = sorted.iter().map(|&(_, w)| w * w).sum();
        // suffix sums over R > n
        let (mut p, mut se, mut counts) = (Vec::new(), Vec::new(), Vec::new());
        let mut idx = sorted.len();
        let mut tail_w = 0.0;
        let mut tail_w2 = 0.0;
        for &n in grid.iter().rev() {
            while idx > 0 && sorted[idx - 1].0 as f64 > n {
                idx -= 1;
                tail_w += sorted[idx].1;
                tail_w2 += sorted[idx].1 * sorted[idx].1;
            }
            let pn = tail_w / sw;
            // delta-method variance of the self-normalized ratio
            let var = (tail_w2 * (1.0 - pn).powi(2) + (sw2 - tail_w2) * pn * pn) / (sw * sw);
            p.push(pn);
            se.push(var.max(0.0).sqrt());
            counts.push((sorted.len() - idx) as u64);
        }
        p.reverse();
        se.reverse();
        counts.reverse();
        SurvivalCurve {
            n: grid,
            p,
            se,
            counts,
            censored: self.censored,
            censored_from: self.censored_from(),
        }
    }

    /// Survival of `R` under `mu` on the whole collision space:
    /// `E_M[(R - n)+] / E_M[R]`.
    pub fn survival_full(&self) -> SurvivalCurve {
        let grid = n_grid(self.max_return().max(1) as f64);
        let mut sorted: Vec<(u64, f64)> = self.records.iter().map(|r| (r.r, r.weight)).collect();
        sorted.sort_by_key(|&(r, _)| r);
        let total: f64 = sorted.iter().map(|&(r, w)| w * r as f64).sum();
        let (mut p, mut se, mut counts) = (Vec::new(), Vec::new(), Vec::new());
        let mut idx = sorted.len();
        let (mut tail_w, mut tail_wr, mut tail_wr2) = (0.0, 0.0, 0.0);
        for &n in grid.iter().rev() {
            while idx > 0 && sorted[idx - 1].0 as f64 > n {
                idx -= 1;
                let (r, w) = sorted[idx];
                tail_w += w;
                tail_wr += w * r as f64;
                tail_wr2 += (w * r as f64).powi(2);
            }
            let excess = tail_wr - n * tail_w;
            let pn = excess / total;
            p.push(pn);
            // leading-order error from the tail terms
            se.push(tail_wr2.sqrt() / total);
            counts.push((sorted.len() - idx) as u64);
        }
        p.reverse();
        se.reverse();
        counts.reverse();
        SurvivalCurve {
            n: grid,
            p,
            se,
            counts,
            censored: self.censored,
            censored_from: self.censored_from(),
        }
    }
}

/// Tail estimate of one table: both survival curves and their power-law fits.
#[derive(Debug, Clone, Serialize)]
pub struct TailEstimate {
    pub ensemble: ReturnEnsemble,
    pub survival_m: SurvivalCurve,
    pub survival_full: SurvivalCurve,
    pub fit_m: Result<PowerLawFit, String>,
    pub fit_full: Result<PowerLawFit, String>,
    pub measure_fraction: Estimate,
    pub mean_return_time: Estimate,
}

pub fn estimate_tail(
    table: &Table,
    spec: SubsetSpec,
    opts: &EnsembleOptions,
    policy: &WindowPolicy,
) -> Result<TailEstimate, InducedError> {
    let ensemble = run_ensemble(table, spec, opts)?;
    Ok(tail_from_ensemble(ensemble, policy))
}

pub fn tail_from_ensemble(ensemble: ReturnEnsemble, policy: &WindowPolicy) -> TailEstimate {
    let survival_m = ensemble.survival_m();
    let survival_full = ensemble.survival_full();
    let fmt = |r: Result<PowerLawFit, FitError>| r.map_err(|e| e.to_string());
    TailEstimate {
        fit_m: fmt(fit_power_law(&survival_m, policy)),
        fit_full: fmt(fit_power_law(&survival_full, policy)),
        measure_fraction: ensemble.measure_fraction(),
        mean_return_time: ensemble.mean_return_time(),
        survival_m,
        survival_full,
        ensemble,
    }
}

/// Whether a record belongs to one of `kinds`.
pub fn kind_in(cell: &CellLabel, kinds: &[CellKind]) -> bool {
    kinds.contains(&cell.kind)
}
