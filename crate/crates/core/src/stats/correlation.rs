//! Time-average estimates of the correlation function
//! `C_n = E[f(x_{i+n}) g(x_i)] - E[f] E[g]` along long orbits of the collision
//! map or of an induced map, with batch-means standard errors.

use super::fit::{compare_decay, DecayComparison};
use crate::dynamics::{collision_map, sample_mu, CollisionEvent, DynamicsError, PhasePoint};
use crate::geometry::Table;
use crate::induced::{InducedError, SubsetSpec};
use crate::rng::{stream, stream_id, Rng};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;
use std::fmt;
use thiserror::Error;

/// Stream tag of correlation runs.
const TAG_CORRELATION: u32 = 2;

/// Consecutive corner restarts tolerated before giving up.
const MAX_RESTARTS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "id", content = "arg", rename_all = "kebab-case")]
pub enum Observable {
    FreePath,
    CosPhi,
    SinPhi,
    /// Indicator of landing on component `k`.
    ComponentIndicator(usize),
    PositionX,
    Constant(f64),
}

impl Observable {
    pub fn eval(&self, ev: &CollisionEvent) -> f64 {
        match *self {
            Observable::FreePath => ev.free_path,
            Observable::CosPhi => ev.point.phi.cos(),
            Observable::SinPhi => ev.point.phi.sin(),
            Observable::ComponentIndicator(k) => (ev.component == k) as u8 as f64,
            Observable::PositionX => ev.position.x,
            Observable::Constant(c) => c,
        }
    }

    /// Whether the observable may be unbounded on the table.
    pub fn heavy_tailed(&self) -> bool {
        matches!(self, Observable::FreePath)
    }

    /// Parses `free-path`, `cos-phi`, `sin-phi`, `position-x`,
    /// `component-indicator(k)` or `constant(c)`.
    pub fn parse(s: &str) -> Option<Self> {
        let s = s.trim();
        let arg = |prefix: &str| {
            s.strip_prefix(prefix)
                .and_then(|r| r.strip_prefix('('))
                .and_then(|r| r.strip_suffix(')'))
        };
        match s {
            "free-path" => Some(Observable::FreePath),
            "cos-phi" => Some(Observable::CosPhi),
            "sin-phi" => Some(Observable::SinPhi),
            "position-x" => Some(Observable::PositionX),
            _ => {
                if let Some(k) = arg("component-indicator") {
                    k.parse().ok().map(Observable::ComponentIndicator)
                } else {
                    arg("constant").and_then(|c| c.parse().ok()).map(Observable::Constant)
                }
            }
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::FreePath => f.write_str("free-path"),
            Observable::CosPhi => f.write_str("cos-phi"),
            Observable::SinPhi => f.write_str("sin-phi"),
            Observable::ComponentIndicator(k) => write!(f, "component-indicator({k})"),
            Observable::PositionX => f.write_str("position-x"),
            Observable::Constant(c) => write!(f, "constant({c})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", content = "subset", rename_all = "kebab-case")]
pub enum MapKind {
    Full,
    Induced(SubsetSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationOptions {
    pub n_max: usize,
    /// Number of map steps contributing to the averages.
    pub steps: u64,
    pub burn_in: u64,
    pub batches: usize,
    pub seed: u64,
    /// Clip both series at this upper quantile (e.g. `1e-6` clips the top
    /// millionth).
    pub winsorize: Option<f64>,
}

impl Default for CorrelationOptions {
    fn default() -> Self {
        Self {
            n_max: 100,
            steps: 1_000_000,
            burn_in: 1000,
            batches: 50,
            seed: 0,
            winsorize: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorrelationError {
    #[error("budget of {steps} steps is too small for {batches} batches of lag {n_max}")]
    InsufficientBudget { steps: u64, batches: usize, n_max: usize },
    #[error("orbit hit a corner {0} times in a row")]
    TooManyRestarts(u64),
    #[error(transparent)]
    Induced(#[from] InducedError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

#[derive(Debug, Clone, Serialize)]
pub struct CorrelationSeries {
    pub f: Observable,
    pub g: Observable,
    pub map: MapKind,
    pub lags: Vec<usize>,
    pub values: Vec<f64>,
    pub se: Vec<f64>,
    pub sample_size: u64,
    pub restarts: u64,
    pub batches: usize,
    pub mean_f: f64,
    pub mean_g: f64,
    /// Clipping thresholds applied to `f` and `g`, if any.
    pub winsor_cutoffs: Option<(f64, f64)>,
}

/// Observable values along an orbit, split into pieces separated by restarts.
struct Trace {
    f: Vec<f64>,
    /// `None` when `g` equals `f`.
    g: Option<Vec<f64>>,
    /// Start index of every piece.
    piece_starts: Vec<usize>,
    restarts: u64,
}

/// Follows one orbit of the chosen map, restarting from a fresh `mu` sample
/// after every corner hit.
fn trace(table: &Table, f: Observable, g: Observable, map: MapKind, opts: &CorrelationOptions) -> Result<Trace, CorrelationError> {
    if let MapKind::Induced(spec) = map {
        spec.check_compatible(table)?;
    }
    let mut rng: Rng = stream(opts.seed, stream_id(TAG_CORRELATION, 0));
    let total = opts.steps as usize;
    let mut out = Trace {
        f: Vec::with_capacity(total),
        g: (f != g).then(|| Vec::with_capacity(total)),
        piece_starts: vec![0],
        restarts: 0,
    };
    let mut consecutive = 0;
    let mut x: PhasePoint = sample_mu(table, &mut rng);
    let mut prev_component: Option<usize> = None;
    let mut burn = opts.burn_in;
    while out.f.len() < total {
        let ev = match collision_map(table, x) {
            Ok(ev) => ev,
            Err(DynamicsError::CornerHit(_)) => {
                out.restarts += 1;
                consecutive += 1;
                if consecutive > MAX_RESTARTS {
                    return Err(CorrelationError::TooManyRestarts(consecutive));
                }
                if *out.piece_starts.last().unwrap() != out.f.len() {
                    out.piece_starts.push(out.f.len());
                }
                x = sample_mu(table, &mut rng);
                prev_component = None;
                burn = opts.burn_in;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let counted = match map {
            MapKind::Full => true,
            MapKind::Induced(spec) => match prev_component {
                Some(p) => spec.contains(table, ev.component, Some(p))?,
                None => false,
            },
        };
        prev_component = Some(ev.component);
        x = ev.point;
        if !counted {
            continue;
        }
        consecutive = 0;
        if burn > 0 {
            burn -= 1;
            continue;
        }
        out.f.push(f.eval(&ev));
        if let Some(gs) = out.g.as_mut() {
            gs.push(g.eval(&ev));
        }
    }
    if *out.piece_starts.last().unwrap() == out.f.len() {
        out.piece_starts.pop();
    }
    Ok(out)
}

/// Upper `q`-quantile of `v` (`q = 1e-6` gives the value exceeded by a
/// millionth of the entries).
fn upper_quantile(v: &[f64], q: f64) -> f64 {
    let mut s = v.to_vec();
    let k = (((1.0 - q) * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1;
    let (_, kth, _) = s.select_nth_unstable_by(k, |a, b| a.total_cmp(b));
    *kth
}

/// `sum_i a[i + n] * b[i]` for `n` in `0..=n_max` by FFT.
fn lagged_products(a: &[f64], b: &[f64], n_max: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let len = a.len();
    let size = (len + n_max + 1).next_power_of_two();
    let fft = planner.plan_fft_forward(size);
    let ifft = planner.plan_fft_inverse(size);
    let mut fa: Vec<Complex<f64>> = a.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fa.resize(size, Complex::default());
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fb.resize(size, Complex::default());
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y.conj();
    }
    ifft.process(&mut fa);
    (0..=n_max)
        .map(|n| if n < len { fa[n].re / size as f64 } else { 0.0 })
        .collect()
}

/// Lagged sums over one batch, respecting piece boundaries.
struct BatchSums {
    products: Vec<f64>,
    pairs: Vec<f64>,
    sum_f: f64,
    sum_g: f64,
    count: f64,
}

fn batch_sums(f: &[f64], g: &[f64], pieces: &[(usize, usize)], n_max: usize) -> BatchSums {
    let mut planner = FftPlanner::new();
    let mut out = BatchSums {
        products: vec![0.0; n_max + 1],
        pairs: vec![0.0; n_max + 1],
        sum_f: 0.0,
        sum_g: 0.0,
        count: 0.0,
    };
    for &(lo, hi) in pieces {
        let (pf, pg) = (&f[lo..hi], &g[lo..hi]);
        let prods = lagged_products(pf, pg, n_max, &mut planner);
        for n in 0..=n_max {
            out.products[n] += prods[n];
            out.pairs[n] += (hi - lo).saturating_sub(n) as f64;
        }
        out.sum_f += pf.iter().sum::<f64>();
        out.sum_g += pg.iter().sum::<f64>();
        out.count += (hi - lo) as f64;
    }
    out
}

/// Estimates `C_n(f, g)` for `n = 0..=n_max` along one orbit.
pub fn estimate_correlation(
    table: &Table,
    f: Observable,
    g: Observable,
    map: MapKind,
    opts: &CorrelationOptions,
) -> Result<CorrelationSeries, CorrelationError> {
    let batches = opts.batches.max(2);
    if opts.steps < 10_000 || opts.steps < (batches * (opts.n_max + 1) * 2) as u64 {
        return Err(CorrelationError::InsufficientBudget {
            steps: opts.steps,
            batches,
            n_max: opts.n_max,
        });
    }
    let mut tr = trace(table, f, g, map, opts)?;
    let winsor_cutoffs = opts.winsorize.map(|q| {
        let cf = upper_quantile(&tr.f, q);
        tr.f.iter_mut().for_each(|v| *v = v.min(cf));
        let cg = match tr.g.as_mut() {
            Some(gs) => {
                let cg = upper_quantile(gs, q);
                gs.iter_mut().for_each(|v| *v = v.min(cg));
                cg
            }
            None => cf,
        };
        (cf, cg)
    });
    let gs = tr.g.as_deref().unwrap_or(&tr.f);
    let total = tr.f.len();
    let mut piece_bounds: Vec<(usize, usize)> = tr.piece_starts.windows(2).map(|w| (w[0], w[1])).collect();
    piece_bounds.push((*tr.piece_starts.last().unwrap(), total));
    // each batch is a contiguous range, cut further at piece boundaries
    let batch_ranges: Vec<Vec<(usize, usize)>> = (0..batches)
        .map(|b| {
            let lo = b * total / batches;
            let hi = (b + 1) * total / batches;
            piece_bounds
                .iter()
                .filter_map(|&(pl, ph)| {
                    let (l, h) = (pl.max(lo), ph.min(hi));
                    (l < h).then_some((l, h))
                })
                .collect()
        })
        .collect();
    let sums: Vec<BatchSums> = batch_ranges
        .par_iter()
        .map(|pieces| batch_sums(&tr.f, gs, pieces, opts.n_max))
        .collect();

    let count: f64 = sums.iter().map(|s| s.count).sum();
    let mean_f = sums.iter().map(|s| s.sum_f).sum::<f64>() / count;
    let mean_g = sums.iter().map(|s| s.sum_g).sum::<f64>() / count;
    let centered = |n: usize, s: &BatchSums, mf: f64, mg: f64| s.products[n] / s.pairs[n] - mf * mg;
    let mut values = Vec::with_capacity(opts.n_max + 1);
    let mut se = Vec::with_capacity(opts.n_max + 1);
    for n in 0..=opts.n_max {
        let prod: f64 = sums.iter().map(|s| s.products[n]).sum();
        let pairs: f64 = sums.iter().map(|s| s.pairs[n]).sum();
        values.push(prod / pairs - mean_f * mean_g);
        let per_batch: Vec<f64> = sums
            .iter()
            .map(|s| centered(n, s, s.sum_f / s.count, s.sum_g / s.count))
            .collect();
        let m = per_batch.iter().sum::<f64>() / batches as f64;
        let var = per_batch.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (batches as f64 - 1.0);
        se.push((var / batches as f64).sqrt());
    }
    Ok(CorrelationSeries {
        f,
        g,
        map,
        lags: (0..=opts.n_max).collect(),
        values,
        se,
        sample_size: total as u64,
        restarts: tr.restarts,
        batches,
        mean_f,
        mean_g,
        winsor_cutoffs,
    })
}

/// Decay fits to `|C_n|` over the resolved lags: `n >= 1` up to the first lag
/// whose value is not at least `z` standard errors away from zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub n_lo: usize,
    pub n_hi: usize,
    pub comparison: DecayComparison,
    /// Power-law slope of `ln|C_n|` against `ln n`.
    pub loglog_slope: f64,
}

pub fn resolved_window(series: &CorrelationSeries, z: f64) -> (usize, usize) {
    let n_hi = series
        .lags
        .iter()
        .skip(1)
        .take_while(|&&n| series.values[n].abs() > z * series.se[n])
        .last()
        .copied()
        .unwrap_or(0);
    (1, n_hi)
}

/// Fits over `[n_lo, n_hi]`, or over the resolved window when `None`.
pub fn fit_decay(series: &CorrelationSeries, window: Option<(usize, usize)>, z: f64) -> Option<DecayFit> {
    let (n_lo, n_hi) = window.unwrap_or_else(|| resolved_window(series, z));
    let idx: Vec<usize> = (n_lo..=n_hi.min(series.lags.len() - 1))
        .filter(|&n| series.values[n].abs() > 0.0)
        .collect();
    if idx.len() < 3 {
        return None;
    }
    let n: Vec<f64> = idx.iter().map(|&i| i as f64).collect();
    let y: Vec<f64> = idx.iter().map(|&i| series.values[i].abs()).collect();
    let w = vec![1.0; n.len()];
    let comparison = compare_decay(&n, &y, &w);
    Some(DecayFit {
        n_lo,
        n_hi,
        loglog_slope: comparison.power_law.slope,
        comparison,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_custom_disc, build_stadium};

    fn opts(steps: u64, n_max: usize) -> CorrelationOptions {
        CorrelationOptions {
            n_max,
            steps,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn constant_observable_has_zero_correlation() {
        let t = build_stadium(2.0, 1.0).unwrap();
        let c = Observable::Constant(1.0);
        let s = estimate_correlation(&t, c, c, MapKind::Full, &opts(20_000, 10)).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lag_zero_is_the_variance() {
        let t = build_stadium(2.0, 1.0).unwrap();
        let f = Observable::CosPhi;
        let s = estimate_correlation(&t, f, f, MapKind::Full, &opts(20_000, 5)).unwrap();
        assert!(s.values[0] > 0.0);
        // variance of cos(phi) under mu: 2/3 - (pi/4)^2
        let exact = 2.0 / 3.0 - (std::f64::consts::PI / 4.0).powi(2);
        assert!((s.values[0] - exact).abs() < 0.02, "{}", s.values[0]);
        assert!(s.se.iter().all(|&e| e > 0.0));
    }

    #[test]
    fn lag_zero_is_symmetric() {
        let t = build_stadium(2.0, 1.0).unwrap();
        let a = estimate_correlation(&t, Observable::CosPhi, Observable::FreePath, MapKind::Full, &opts(20_000, 3)).unwrap();
        let b = estimate_correlation(&t, Observable::FreePath, Observable::CosPhi, MapKind::Full, &opts(20_000, 3)).unwrap();
        assert!((a.values[0] - b.values[0]).abs() < 1e-12);
    }

    #[test]
    fn circle_orbit_has_no_fluctuations() {
        // phi is conserved in a circle, so a single orbit has no variance
        let d = build_custom_disc(1.0).unwrap();
        let f = Observable::CosPhi;
        let s = estimate_correlation(&d, f, f, MapKind::Full, &opts(20_000, 4)).unwrap();
        assert!(s.values.iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn fft_matches_direct_sum() {
        let a: Vec<f64> = (0..37).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = (0..37).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut planner = FftPlanner::new();
        let fast = lagged_products(&a, &b, 6, &mut planner);
        for n in 0..=6 {
            let direct: f64 = (0..37 - n).map(|i| a[i + n] * b[i]).sum();
            assert!((fast[n] - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn too_small_budget() {
        let t = build_stadium(2.0, 1.0).unwrap();
        let f = Observable::CosPhi;
        assert!(matches!(
            estimate_correlation(&t, f, f, MapKind::Full, &opts(1000, 5)),
            Err(CorrelationError::InsufficientBudget { .. })
        ));
    }

    #[test]
    fn observable_names_round_trip() {
        for o in [
            Observable::FreePath,
            Observable::CosPhi,
            Observable::SinPhi,
            Observable::ComponentIndicator(3),
            Observable::PositionX,
        ] {
            assert_eq!(Observable::parse(&o.to_string()), Some(o));
        }
        assert_eq!(Observable::parse("nope"), None);
    }
}
