//! Numerical checks of the hyperbolicity estimates: homogeneity strips,
//! one-step expansion sums over short unstable curves, expansion laws by
//! strip and by cell index, and the spread of cell indices met by a curve.

use crate::dynamics::{
    collision_map, orbit, sample_mu, tangent_map, unstable_direction, DynamicsError, Mat2, Metric, PhasePoint,
    TangentVector,
};
use crate::geometry::{CurvatureClass, Family, Table};
use crate::induced::{
    in_m_traced, return_map, CellKind, CellLabel, ClassifyParams, InducedError, ReturnOptions, SubsetSpec,
};
use crate::rng::par_chunks;
use crate::stats::fit::{weighted_linear_fit, LinearFit};
use crate::stats::sampling::ImportanceSampler;
use crate::stats::tail::{run_ensemble, EnsembleOptions};
use rand::Rng as _;
use serde::Serialize;
use std::f64::consts::FRAC_PI_2;
use thiserror::Error;

/// Default index of the first homogeneity strip.
pub const DEFAULT_K0: u32 = 10;

/// Default number of sample points on a curve.
pub const DEFAULT_RESOLUTION: usize = 10_000;

/// Backward steps used to estimate the unstable direction.
pub const UNSTABLE_DEPTH: usize = 30;

/// Return-time cap for diagnostic excursions.
const DIAG_R_MAX: u64 = 1_000_000;

/// Relative change of the sum under refinement tolerated before a report is
/// flagged as under-resolved.
pub const REFINEMENT_TOLERANCE: f64 = 0.05;

const TAG_CURVES: u32 = 10;
const TAG_STRIPS: u32 = 11;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("no sample point of the curve has a regular induced image")]
    CurveEntirelySingular,
    #[error("{0}")]
    Family(String),
    #[error(transparent)]
    Induced(#[from] InducedError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Homogeneity strip of an angle: `k >= k0` with
/// `pi/2 - k^-2 <= phi < pi/2 - (k+1)^-2`, negative for the mirrored strips
/// near `-pi/2`, and `0` for the central strip `|phi| < pi/2 - k0^-2`.
pub fn strip_index(phi: f64, k0: u32) -> i64 {
    let eps = FRAC_PI_2 - phi.abs();
    let k0f = k0.max(1) as f64;
    if eps > 1.0 / (k0f * k0f) {
        return 0;
    }
    let k = if eps > 0.0 {
        ((1.0 / eps).sqrt().floor() as i64).max(k0 as i64)
    } else {
        i64::MAX
    };
    if phi < 0.0 {
        -k
    } else {
        k
    }
}

/// Sample of a short straight curve in phase space through `base`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnstableCurveSample {
    pub base: PhasePoint,
    pub direction: TangentVector,
    pub half_length: f64,
    pub points: Vec<PhasePoint>,
}

impl UnstableCurveSample {
    /// `resolution` equally spaced points on the segment of half-length
    /// `half_length` along `direction`, clipped to the component of `base`
    /// and to `|phi| < pi/2`.
    pub fn straight(
        table: &Table,
        base: PhasePoint,
        direction: TangentVector,
        half_length: f64,
        resolution: usize,
    ) -> Result<Self, DiagnosticsError> {
        let dir = direction.normalized();
        let comp = table.component(table.component_at(base.r));
        let (r_lo, r_hi) = (comp.r_offset, comp.r_offset + comp.length);
        // parameter range keeping the point inside the component and off grazing
        let (mut t_lo, mut t_hi) = (-half_length, half_length);
        let margin = 1e-12;
        let clip = |lo: &mut f64, hi: &mut f64, x0: f64, dx: f64, a: f64, b: f64| {
            if dx.abs() > 0.0 {
                let (ta, tb) = ((a - x0) / dx, (b - x0) / dx);
                *lo = lo.max(ta.min(tb));
                *hi = hi.min(ta.max(tb));
            }
        };
        clip(&mut t_lo, &mut t_hi, base.r, dir.dr, r_lo + margin, r_hi - margin);
        clip(&mut t_lo, &mut t_hi, base.phi, dir.dphi, -FRAC_PI_2 + margin, FRAC_PI_2 - margin);
        if !(t_hi > t_lo) || resolution < 2 {
            return Err(DiagnosticsError::CurveEntirelySingular);
        }
        let points = (0..resolution)
            .map(|i| {
                let t = t_lo + (t_hi - t_lo) * i as f64 / (resolution - 1) as f64;
                PhasePoint::new(base.r + t * dir.dr, base.phi + t * dir.dphi)
            })
            .collect();
        Ok(Self {
            base,
            direction: dir,
            half_length,
            points,
        })
    }

    /// Straight curve along the estimated unstable direction at `base`.
    pub fn unstable(table: &Table, base: PhasePoint, half_length: f64, resolution: usize) -> Result<Self, DiagnosticsError> {
        let dir = unstable_direction(table, base, UNSTABLE_DEPTH)?;
        Self::straight(table, base, dir, half_length, resolution)
    }

    /// The same segment with the sample spacing halved.
    pub fn refined(&self) -> Self {
        let mut points = Vec::with_capacity(2 * self.points.len());
        for w in self.points.windows(2) {
            points.push(w[0]);
            points.push(PhasePoint::new((w[0].r + w[1].r) / 2.0, (w[0].phi + w[1].phi) / 2.0));
        }
        points.extend(self.points.last());
        Self {
            points,
            ..self.clone()
        }
    }
}

/// Induced image data of one sample point.
#[derive(Debug, Clone, Copy, PartialEq)]
struct PointImage {
    key: (u64, CellKind, u64, usize),
    cell: CellLabel,
    lambda: f64,
}

/// Evaluation of one sample point: membership in `M` and, when regular, its
/// induced image.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Evaluated {
    in_m: bool,
    image: Option<PointImage>,
}

fn image_of(table: &Table, spec: SubsetSpec, x: PhasePoint, v: TangentVector, metric: Metric) -> Evaluated {
    let opts = ReturnOptions {
        r_max: DIAG_R_MAX,
        classify: ClassifyParams::default(),
        jacobian: true,
    };
    if in_m_traced(table, spec, x) != Ok(Some(true)) {
        return Evaluated { in_m: false, image: None };
    }
    let image = (|| {
        let rec = return_map(table, spec, x, &opts).ok()?;
        if rec.truncated || rec.censored {
            return None;
        }
        let j = rec.jacobian?;
        let n0 = metric.norm(x.phi, v);
        let lambda = metric.norm(rec.end.phi, j.apply(v)) / n0;
        lambda.is_finite().then_some(PointImage {
            key: (rec.r, rec.cell.kind, rec.cell.n, rec.end_component),
            cell: rec.cell,
            lambda,
        })
    })();
    Evaluated { in_m: true, image }
}

/// Return time and landing component of the inverse induced map at `x`, or
/// `None` when the backward orbit hits a corner or the cap.
fn inverse_key(table: &Table, spec: SubsetSpec, x: PhasePoint) -> Option<(u64, usize)> {
    let mut z = x.reversed();
    let mut prev_comp = None;
    for k in 1..=DIAG_R_MAX {
        let ev = collision_map(table, z).ok()?;
        if let Some(c) = prev_comp {
            if spec.contains(table, c, Some(ev.component)).ok()? {
                return Some((k - 1, c));
            }
        }
        prev_comp = Some(ev.component);
        z = ev.point;
    }
    None
}

/// `(min, max)` index of the cells of `kinds` over each piece of the curve:
/// a maximal run of points in `M` along which the inverse induced map is
/// continuous. Points in cells of other kinds do not end a piece.
fn ranges_of(table: &Table, spec: SubsetSpec, points: &[PhasePoint], samples: &[Evaluated], kinds: &[CellKind]) -> Vec<(u64, u64)> {
    let mut ranges = Vec::new();
    let mut run: Option<(u64, u64, (u64, usize))> = None;
    for (x, e) in points.iter().zip(samples) {
        if !e.in_m {
            ranges.extend(run.take().map(|(lo, hi, _)| (lo, hi)));
            continue;
        }
        let Some(p) = e.image.filter(|p| kinds.contains(&p.cell.kind)) else {
            continue;
        };
        let Some(key) = inverse_key(table, spec, *x) else {
            ranges.extend(run.take().map(|(lo, hi, _)| (lo, hi)));
            continue;
        };
        let n = p.cell.n;
        run = match run {
            Some((lo, hi, k)) if k == key => Some((lo.min(n), hi.max(n), k)),
            other => {
                ranges.extend(other.map(|(lo, hi, _)| (lo, hi)));
                Some((n, n, key))
            }
        };
    }
    ranges.extend(run.map(|(lo, hi, _)| (lo, hi)));
    ranges
}

/// One continuity component of the induced map along a curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentExpansion {
    pub cell: CellLabel,
    pub return_time: u64,
    pub end_component: usize,
    /// Index range of the sample points.
    pub first: usize,
    pub last: usize,
    pub lambda_min: f64,
    pub lambda_p05: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionSumReport {
    pub components: Vec<ComponentExpansion>,
    /// Sum of `1 / lambda_min`.
    pub sum: f64,
    /// Sum of `1 / lambda_p05`.
    pub sum_p05: f64,
    /// Largest cell index met.
    pub truncation_index: u64,
    /// Cumulative sum ordered by cell index, as `(n, partial sum)`.
    pub partial_sums: Vec<(u64, f64)>,
    pub resolution: usize,
    pub singular_points: usize,
    /// Sum at doubled resolution.
    pub refined_sum: f64,
    pub refined_truncation_index: u64,
    pub under_resolved: bool,
    pub divergent: bool,
    /// `(n1, n2)` per piece of the curve (a run in `M` on which the inverse
    /// induced map is continuous), over the cell kinds of [`probe_kinds`].
    pub cell_ranges: Vec<(u64, u64)>,
}

fn components_of(samples: &[Evaluated]) -> Vec<ComponentExpansion> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < samples.len() {
        let Some(first) = samples[i].image else {
            i += 1;
            continue;
        };
        let mut j = i;
        let mut lambdas = vec![first.lambda];
        while j + 1 < samples.len() && samples[j + 1].image.map(|p| p.key) == Some(first.key) {
            j += 1;
            lambdas.push(samples[j].image.unwrap().lambda);
        }
        lambdas.sort_by(|a, b| a.total_cmp(b));
        let p05 = lambdas[((lambdas.len() - 1) as f64 * 0.05).round() as usize];
        out.push(ComponentExpansion {
            cell: first.cell,
            return_time: first.key.0,
            end_component: first.key.3,
            first: i,
            last: j,
            lambda_min: lambdas[0],
            lambda_p05: p05,
        });
        i = j + 1;
    }
    out
}

fn partial_sums(components: &[ComponentExpansion]) -> Vec<(u64, f64)> {
    let mut by_n: Vec<(u64, f64)> = components.iter().map(|c| (c.cell.n, 1.0 / c.lambda_min)).collect();
    by_n.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut acc = 0.0;
    by_n.into_iter()
        .map(|(n, v)| {
            acc += v;
            (n, acc)
        })
        .collect()
}

fn evaluate(table: &Table, spec: SubsetSpec, points: &[PhasePoint], direction: TangentVector, metric: Metric) -> Vec<Evaluated> {
    points.iter().map(|&x| image_of(table, spec, x, direction, metric)).collect()
}

/// Splits the curve into continuity components of the induced map (jumps in
/// return time, cell label or landing component between neighbouring
/// samples) and sums the inverse minimal p-metric expansion over them. The
/// computation is repeated at doubled resolution: a sum that moves by more
/// than 5% flags the report as under-resolved, and a refined sum above one
/// that is still growing with the truncation index flags divergence.
pub fn expansion_sum(table: &Table, spec: SubsetSpec, curve: &UnstableCurveSample) -> Result<ExpansionSumReport, DiagnosticsError> {
    spec.check_compatible(table)?;
    let samples = evaluate(table, spec, &curve.points, curve.direction, Metric::P);
    let components = components_of(&samples);
    if components.is_empty() {
        return Err(DiagnosticsError::CurveEntirelySingular);
    }
    let refined_curve = curve.refined();
    let midpoints: Vec<PhasePoint> = refined_curve.points.iter().skip(1).step_by(2).copied().collect();
    let mid_samples = evaluate(table, spec, &midpoints, curve.direction, Metric::P);
    let mut refined_samples = Vec::with_capacity(samples.len() + mid_samples.len());
    for (i, s) in samples.iter().enumerate() {
        refined_samples.push(*s);
        refined_samples.extend(mid_samples.get(i));
    }
    let refined = components_of(&refined_samples);
    let sum: f64 = components.iter().map(|c| 1.0 / c.lambda_min).sum();
    let refined_sum: f64 = refined.iter().map(|c| 1.0 / c.lambda_min).sum();
    let truncation_index = components.iter().map(|c| c.cell.n).max().unwrap_or(0);
    let refined_truncation_index = refined.iter().map(|c| c.cell.n).max().unwrap_or(0);
    let under_resolved = (refined_sum - sum).abs() > REFINEMENT_TOLERANCE * sum || refined.len() < components.len();
    let divergent = refined_sum > 1.0 && refined_sum > sum * (1.0 + REFINEMENT_TOLERANCE) && refined_truncation_index > truncation_index;
    Ok(ExpansionSumReport {
        sum,
        sum_p05: components.iter().map(|c| 1.0 / c.lambda_p05).sum(),
        truncation_index,
        partial_sums: partial_sums(&components),
        resolution: curve.points.len(),
        singular_points: samples.iter().filter(|p| p.image.is_none()).count(),
        refined_sum,
        refined_truncation_index,
        under_resolved,
        divergent,
        cell_ranges: ranges_of(table, spec, &curve.points, &samples, probe_kinds(table.family())),
        components,
    })
}

/// Report summary built from given component expansions, without curve data.
pub fn sum_of_inverses(lambdas: &[f64]) -> f64 {
    lambdas.iter().map(|l| 1.0 / l).sum()
}

/// Anchors of a table whose label is one of `labels`.
fn anchor_points(table: &Table, labels: &[&str]) -> Vec<PhasePoint> {
    ImportanceSampler::for_table(table, 1)
        .anchors
        .iter()
        .filter(|a| labels.contains(&a.label))
        .map(|a| PhasePoint::new(a.r, a.u.asin()))
        .collect()
}

/// Cell kinds whose index range a curve probe tracks for a family.
pub fn probe_kinds(family: Family) -> &'static [CellKind] {
    match family {
        Family::StraightStadium => &[CellKind::FlatRunDirect, CellKind::FlatRunIndirect],
        Family::DriveBelt | Family::Flower => &[CellKind::Diametric],
        _ => &[],
    }
}

fn probe_labels(family: Family) -> &'static [&'static str] {
    match family {
        Family::StraightStadium => &["flat-run"],
        _ => &["diametric"],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveSeeding {
    pub curves: usize,
    pub resolution: usize,
    /// Half-length of every curve.
    pub half_length: f64,
    /// Bases are drawn uniformly in a box of this half-width around an anchor.
    pub spread: f64,
    pub seed: u64,
}

impl Default for CurveSeeding {
    fn default() -> Self {
        Self {
            curves: 1000,
            resolution: DEFAULT_RESOLUTION,
            half_length: 0.02,
            spread: 0.02,
            seed: 0,
        }
    }
}

/// Random short unstable curves with bases near the accumulation points of
/// the cells tracked for the family.
pub fn seed_curves(table: &Table, seeding: &CurveSeeding) -> Result<Vec<UnstableCurveSample>, DiagnosticsError> {
    let anchors = anchor_points(table, probe_labels(table.family()));
    if anchors.is_empty() {
        return Err(DiagnosticsError::Family(format!(
            "a {} table has no cell accumulation points to seed curves at",
            table.family()
        )));
    }
    let results = par_chunks(seeding.seed, TAG_CURVES, seeding.curves as u64, 1, |i, _, _, rng| {
        let a = anchors[i as usize % anchors.len()];
        // redraw a few times if the base lands on a singular point
        for _ in 0..16 {
            let r = (a.r + seeding.spread * (2.0 * rng.gen::<f64>() - 1.0)).rem_euclid(table.perimeter());
            let phi = a.phi + seeding.spread * (2.0 * rng.gen::<f64>() - 1.0);
            let base = PhasePoint::new(r, phi);
            let focusing = table.component(table.component_at(r)).class == CurvatureClass::Focusing;
            if !focusing {
                continue;
            }
            if let Ok(c) = UnstableCurveSample::unstable(table, base, seeding.half_length, seeding.resolution) {
                return Some(c);
            }
        }
        None
    });
    Ok(results.into_iter().flatten().collect())
}

/// Largest expansion sum over seeded curves.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionSurvey {
    pub curves: usize,
    pub max_sum: f64,
    pub max_sum_p05: f64,
    pub worst: Option<ExpansionSumReport>,
    pub divergent_curves: usize,
    pub under_resolved_curves: usize,
    pub singular_curves: usize,
    /// Cell ranges of all curves, in curve order.
    pub cell_ranges: Vec<(u64, u64)>,
}

pub fn expansion_survey(table: &Table, spec: SubsetSpec, curves: &[UnstableCurveSample]) -> Result<ExpansionSurvey, DiagnosticsError> {
    spec.check_compatible(table)?;
    let reports: Vec<Result<ExpansionSumReport, DiagnosticsError>> = par_chunks(0, 0, curves.len() as u64, 1, |i, _, _, _| {
        expansion_sum(table, spec, &curves[i as usize])
    });
    let mut survey = ExpansionSurvey {
        curves: curves.len(),
        max_sum: 0.0,
        max_sum_p05: 0.0,
        worst: None,
        divergent_curves: 0,
        under_resolved_curves: 0,
        singular_curves: 0,
        cell_ranges: Vec::new(),
    };
    for r in reports {
        match r {
            Ok(rep) => {
                survey.cell_ranges.extend_from_slice(&rep.cell_ranges);
                survey.divergent_curves += rep.divergent as usize;
                survey.under_resolved_curves += rep.under_resolved as usize;
                survey.max_sum_p05 = survey.max_sum_p05.max(rep.sum_p05);
                if rep.sum > survey.max_sum {
                    survey.max_sum = rep.sum;
                    survey.worst = Some(rep);
                }
            }
            Err(DiagnosticsError::CurveEntirelySingular) => survey.singular_curves += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(survey)
}

/// Min and max index of the tracked cells met by each curve piece.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellRangeReport {
    pub kinds: Vec<CellKind>,
    /// `(n1, n2)` for every piece meeting a tracked cell.
    pub ranges: Vec<(u64, u64)>,
    pub n1_min: u64,
    /// Largest `n2 / n1` over pieces with `n1 >= n1_min`.
    pub max_ratio: Option<f64>,
    pub qualifying_pieces: usize,
}

impl CellRangeReport {
    pub fn from_ranges(kinds: &[CellKind], ranges: Vec<(u64, u64)>, n1_min: u64) -> Self {
        let qualifying: Vec<f64> = ranges
            .iter()
            .filter(|(n1, _)| *n1 >= n1_min)
            .map(|&(n1, n2)| n2 as f64 / n1 as f64)
            .collect();
        Self {
            kinds: kinds.to_vec(),
            n1_min,
            max_ratio: qualifying.iter().copied().reduce(f64::max),
            qualifying_pieces: qualifying.len(),
            ranges,
        }
    }
}

pub fn cell_range_probe(
    table: &Table,
    spec: SubsetSpec,
    curves: &[UnstableCurveSample],
    kinds: &[CellKind],
    n1_min: u64,
) -> Result<CellRangeReport, DiagnosticsError> {
    spec.check_compatible(table)?;
    let ranges: Vec<Vec<(u64, u64)>> = par_chunks(0, 0, curves.len() as u64, 1, |i, _, _, _| {
        cell_range(table, spec, &curves[i as usize], kinds)
    });
    Ok(CellRangeReport::from_ranges(kinds, ranges.into_iter().flatten().collect(), n1_min))
}

/// `(min, max)` index of the tracked cells met by each piece of the curve,
/// as in [`expansion_sum`].
pub fn cell_range(table: &Table, spec: SubsetSpec, curve: &UnstableCurveSample, kinds: &[CellKind]) -> Vec<(u64, u64)> {
    let samples = evaluate(table, spec, &curve.points, curve.direction, Metric::P);
    ranges_of(table, spec, &curve.points, &samples, kinds)
}

/// Minimal expansion per bin and its log-log trend.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionBin {
    /// Strip index `k` or cell index range start.
    pub index: u64,
    pub index_hi: u64,
    pub samples: usize,
    pub min_lambda: f64,
    /// Minimum of `lambda / index` over the bin's samples.
    pub min_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpansionTrend {
    pub metric: Metric,
    pub bins: Vec<ExpansionBin>,
    /// Bins dropped for having fewer than `min_samples` samples.
    pub dropped: Vec<u64>,
    pub min_samples: usize,
    /// Fit of `ln min_lambda` against `ln index`.
    pub fit: Option<LinearFit>,
}

fn trend(metric: Metric, mut samples: Vec<(u64, u64, Vec<(u64, f64)>)>, min_samples: usize) -> ExpansionTrend {
    let mut bins = Vec::new();
    let mut dropped = Vec::new();
    for (lo, hi, vals) in samples.drain(..) {
        if vals.len() < min_samples {
            dropped.push(lo);
            continue;
        }
        bins.push(ExpansionBin {
            index: lo,
            index_hi: hi,
            samples: vals.len(),
            min_lambda: vals.iter().map(|v| v.1).fold(f64::INFINITY, f64::min),
            min_ratio: vals.iter().map(|&(n, l)| l / n as f64).fold(f64::INFINITY, f64::min),
        });
    }
    let fit = (bins.len() >= 3).then(|| {
        let x: Vec<f64> = bins.iter().map(|b| (b.index as f64).ln()).collect();
        let y: Vec<f64> = bins.iter().map(|b| b.min_lambda.ln()).collect();
        weighted_linear_fit(&x, &y, &vec![1.0; x.len()])
    });
    ExpansionTrend {
        metric,
        bins,
        dropped,
        min_samples,
        fit,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StripOptions {
    pub k0: u32,
    pub k_max: u32,
    /// Landing points drawn per strip.
    pub per_strip: usize,
    /// Strips per decade of `k`.
    pub strips_per_decade: u32,
    pub min_samples: usize,
    pub seed: u64,
}

impl Default for StripOptions {
    fn default() -> Self {
        Self {
            k0: DEFAULT_K0,
            k_max: 200,
            per_strip: 200,
            strips_per_decade: 8,
            min_samples: 30,
            seed: 0,
        }
    }
}

/// Strip indices `k0 <= k <= k_max`, about `per_decade` per decade.
pub fn strip_grid(k0: u32, k_max: u32, per_decade: u32) -> Vec<u32> {
    let ratio = 10f64.powf(1.0 / per_decade as f64);
    let mut out = vec![k0];
    let mut v = k0 as f64;
    loop {
        v *= ratio;
        let k = v.round() as u32;
        if k > k_max {
            break;
        }
        if k > *out.last().unwrap() {
            out.push(k);
        }
    }
    out
}

/// Euclidean expansion of the induced map of a semi-dispersing table along
/// the unstable direction, binned by the homogeneity strip of the landing
/// point. Landing points are drawn uniformly on the scatterers with `phi` in
/// the strip; each is pulled back to its induced preimage, from which the
/// expansion is measured.
pub fn strip_expansion_trend(table: &Table, opts: &StripOptions) -> Result<ExpansionTrend, DiagnosticsError> {
    if table.family() != Family::SemiDispersing {
        return Err(DiagnosticsError::Family(format!(
            "strip trends need a semi-dispersing table, got {}",
            table.family()
        )));
    }
    let spec = SubsetSpec::ScattererCollisions;
    let scatterers: Vec<(f64, f64)> = table
        .components()
        .iter()
        .filter(|c| c.class == CurvatureClass::Dispersing)
        .map(|c| (c.r_offset, c.length))
        .collect();
    let total: f64 = scatterers.iter().map(|s| s.1).sum();
    let ropts = ReturnOptions {
        r_max: DIAG_R_MAX,
        jacobian: true,
        ..Default::default()
    };
    let grid = strip_grid(opts.k0, opts.k_max, opts.strips_per_decade);
    let per_strip = par_chunks(opts.seed, TAG_STRIPS, grid.len() as u64, 1, |i, _, _, rng| {
        let k = grid[i as usize];
        let mut vals = Vec::new();
        for _ in 0..opts.per_strip {
            let mut s = rng.gen::<f64>() * total;
            let mut r1 = 0.0;
            for &(off, len) in &scatterers {
                if s < len {
                    r1 = off + s;
                    break;
                }
                s -= len;
            }
            let (a, b) = ((k as f64).powi(-2), ((k + 1) as f64).powi(-2));
            let eps = b + (a - b) * rng.gen::<f64>();
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let x1 = PhasePoint::new(r1, sign * (FRAC_PI_2 - eps));
            let Ok(back) = return_map(table, spec, x1.reversed(), &ReturnOptions { jacobian: false, ..ropts }) else {
                continue;
            };
            if back.truncated || back.censored {
                continue;
            }
            let x0 = back.end.reversed();
            let Ok(fwd) = return_map(table, spec, x0, &ropts) else {
                continue;
            };
            let Some(j) = fwd.jacobian else { continue };
            if (fwd.end.r - x1.r).abs() > 1e-6 || strip_index(fwd.end.phi, opts.k0) != strip_index(x1.phi, opts.k0) {
                continue;
            }
            let Ok(v) = unstable_direction(table, x0, UNSTABLE_DEPTH) else {
                continue;
            };
            let lambda = Metric::Euclidean.norm(fwd.end.phi, j.apply(v)) / Metric::Euclidean.norm(x0.phi, v);
            if lambda.is_finite() {
                vals.push((k as u64, lambda));
            }
        }
        (k as u64, k as u64, vals)
    });
    Ok(trend(Metric::Euclidean, per_strip, opts.min_samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellTrendOptions {
    pub ensemble: EnsembleOptions,
    pub bins_per_decade: u32,
    pub n_min: u64,
    pub min_samples: usize,
    /// Records per bin whose expansion is evaluated.
    pub max_per_bin: usize,
}

impl Default for CellTrendOptions {
    fn default() -> Self {
        Self {
            ensemble: EnsembleOptions {
                samples: 200_000,
                levels: 10,
                ..Default::default()
            },
            bins_per_decade: 6,
            n_min: 2,
            min_samples: 30,
            max_per_bin: 400,
        }
    }
}

/// p-metric expansion of the induced map along the unstable direction for
/// excursions in cells of `kind`, binned by cell index.
pub fn cell_expansion_trend(
    table: &Table,
    spec: SubsetSpec,
    kind: CellKind,
    opts: &CellTrendOptions,
) -> Result<ExpansionTrend, DiagnosticsError> {
    let ens = run_ensemble(table, spec, &opts.ensemble)?;
    let ratio = 10f64.powf(1.0 / opts.bins_per_decade as f64);
    let max_n = ens
        .records
        .iter()
        .filter(|r| r.cell.kind == kind && !r.censored)
        .map(|r| r.cell.n)
        .max()
        .unwrap_or(0);
    let mut edges = vec![opts.n_min.max(1)];
    while *edges.last().unwrap() <= max_n {
        let lo = *edges.last().unwrap();
        edges.push(((lo as f64 * ratio).round() as u64).max(lo + 1));
    }
    let ropts = ReturnOptions {
        r_max: DIAG_R_MAX,
        classify: opts.ensemble.classify,
        jacobian: true,
    };
    let bins: Vec<(u64, u64)> = edges.windows(2).map(|w| (w[0], w[1])).collect();
    let per_bin = par_chunks(0, 0, bins.len() as u64, 1, |i, _, _, _| {
        let (lo, hi) = bins[i as usize];
        let mut vals = Vec::new();
        for rec in ens
            .records
            .iter()
            .filter(|r| r.cell.kind == kind && !r.censored && r.cell.n >= lo && r.cell.n < hi)
            .take(opts.max_per_bin)
        {
            let Ok(full) = return_map(table, spec, rec.start, &ropts) else {
                continue;
            };
            let Some(j) = full.jacobian else { continue };
            let Ok(v) = unstable_direction(table, rec.start, UNSTABLE_DEPTH) else {
                continue;
            };
            let lambda = Metric::P.norm(full.end.phi, j.apply(v)) / Metric::P.norm(rec.start.phi, v);
            if lambda.is_finite() {
                vals.push((full.cell.n.max(1), lambda));
            }
        }
        (lo, hi - 1, vals)
    });
    Ok(trend(Metric::P, per_bin, opts.min_samples))
}

/// Worst errors of the exact identities of the collision map over sampled
/// points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvariantReport {
    pub points: u64,
    /// Points where the finite-difference check applied.
    pub fd_points: u64,
    /// `| |det DF| cos(phi1) - cos(phi) | / cos(phi)`.
    pub det_rel_err: f64,
    /// Entrywise gap to central differences, relative to the largest entry.
    pub fd_rel_err: f64,
    /// Distance between `x` and `F(I F(x))` with `I` the time reversal.
    pub reversal_err: f64,
    pub closure_residual: f64,
    /// Largest change of `phi` along one orbit; only for a disc.
    pub phi_drift: Option<f64>,
}

/// Points closer to grazing than this are left out of the finite-difference
/// check.
const FD_MIN_COS: f64 = 0.1;
const FD_STEP: f64 = 1e-7;
const TAG_INVARIANTS: u32 = 12;

fn wrapped(d: f64, period: f64) -> f64 {
    d - period * (d / period).round()
}

fn central_differences(table: &Table, x: PhasePoint, component: usize) -> Option<Mat2> {
    let per = table.perimeter();
    let f = |r: f64, phi: f64| collision_map(table, PhasePoint::new(r.rem_euclid(per), phi)).ok();
    let h = FD_STEP;
    let (rp, rm) = (f(x.r + h, x.phi)?, f(x.r - h, x.phi)?);
    let (pp, pm) = (f(x.r, x.phi + h)?, f(x.r, x.phi - h)?);
    if [rp, rm, pp, pm].iter().any(|e| e.component != component) {
        return None;
    }
    Some(Mat2 {
        a: wrapped(rp.point.r - rm.point.r, per) / (2.0 * h),
        b: wrapped(pp.point.r - pm.point.r, per) / (2.0 * h),
        c: (rp.point.phi - rm.point.phi) / (2.0 * h),
        d: (pp.point.phi - pm.point.phi) / (2.0 * h),
    })
}

/// Checks the determinant identity, the tangent map against central
/// differences, time reversal and boundary closure at `points` samples of
/// `mu`. On a disc the drift of `phi` along one orbit of `points` steps is
/// also reported.
pub fn exact_invariants(table: &Table, points: u64, seed: u64) -> InvariantReport {
    let per = table.perimeter();
    let chunks = par_chunks(seed, TAG_INVARIANTS, points, 1000, |_, _, len, rng| {
        let (mut det, mut fd, mut rev, mut fd_points) = (0.0f64, 0.0f64, 0.0f64, 0u64);
        for _ in 0..len {
            let x = sample_mu(table, rng);
            let (Ok(ev), Ok(m)) = (collision_map(table, x), tangent_map(table, x)) else {
                continue;
            };
            let (c0, c1) = (x.phi.cos(), ev.point.phi.cos());
            det = det.max((m.det().abs() * c1 - c0).abs() / c0);
            if let Ok(back) = collision_map(table, ev.point.reversed()) {
                let y = back.point.reversed();
                rev = rev.max(wrapped(y.r - x.r, per).abs() + (y.phi - x.phi).abs());
            }
            if c0 < FD_MIN_COS || c1 < FD_MIN_COS {
                continue;
            }
            if let Some(j) = central_differences(table, x, ev.component) {
                let scale = [m.a, m.b, m.c, m.d].iter().fold(1.0f64, |s, v| s.max(v.abs()));
                let gap = [(m.a, j.a), (m.b, j.b), (m.c, j.c), (m.d, j.d)]
                    .iter()
                    .fold(0.0f64, |g, (u, v)| g.max((u - v).abs()));
                fd = fd.max(gap / scale);
                fd_points += 1;
            }
        }
        (det, fd, rev, fd_points)
    });
    let mut report = InvariantReport {
        points,
        fd_points: 0,
        det_rel_err: 0.0,
        fd_rel_err: 0.0,
        reversal_err: 0.0,
        closure_residual: table.closure_residual(),
        phi_drift: None,
    };
    for (det, fd, rev, n) in chunks {
        report.det_rel_err = report.det_rel_err.max(det);
        report.fd_rel_err = report.fd_rel_err.max(fd);
        report.reversal_err = report.reversal_err.max(rev);
        report.fd_points += n;
    }
    let is_disc = table.components().len() == 1 && table.component(0).is_arc();
    if is_disc {
        let x0 = sample_mu(table, &mut crate::rng::stream(seed, crate::rng::stream_id(TAG_INVARIANTS, u64::MAX)));
        let mut drift = 0.0f64;
        if orbit(table, x0, points, |ev| drift = drift.max((ev.point.phi - x0.phi).abs())).is_ok() {
            report.phi_drift = Some(drift);
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::*;
    use std::f64::consts::PI;

    #[test]
    fn strip_examples() {
        assert_eq!(strip_index(FRAC_PI_2 - 1.0 / 150.0, 10), 12);
        assert_eq!(strip_index(-FRAC_PI_2 + 1.0 / 150.0, 10), -12);
        assert_eq!(strip_index(0.0, 10), 0);
        assert_eq!(strip_index(0.0, 1), 0);
        // just outside the central strip
        assert_eq!(strip_index(FRAC_PI_2 - 0.0099, 10), 10);
        assert_eq!(strip_index(FRAC_PI_2 - 0.0101, 10), 0);
    }

    #[test]
    fn synthetic_sum() {
        assert!((sum_of_inverses(&[4.0, 8.0]) - 0.375).abs() < 1e-15);
    }

    #[test]
    fn strip_grid_is_increasing() {
        let g = strip_grid(10, 200, 8);
        assert_eq!(g[0], 10);
        assert!(g.windows(2).all(|w| w[1] > w[0]));
        assert!(*g.last().unwrap() <= 200);
    }

    #[test]
    fn refinement_interleaves_midpoints() {
        let t = build_stadium(2.0, 1.0).unwrap();
        let c = UnstableCurveSample::straight(&t, PhasePoint::new(3.0, 0.1), TangentVector::new(1.0, -1.0), 0.01, 5).unwrap();
        let r = c.refined();
        assert_eq!(r.points.len(), 9);
        assert_eq!(r.points[0], c.points[0]);
        assert_eq!(r.points[8], c.points[4]);
        assert!((r.points[1].r - (c.points[0].r + c.points[1].r) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn curve_is_clipped_to_its_component() {
        let t = build_stadium(2.0, 1.0).unwrap();
        // right arc starts at r = 2
        let c = UnstableCurveSample::straight(&t, PhasePoint::new(2.001, 0.0), TangentVector::new(1.0, 0.0), 0.01, 11).unwrap();
        assert!(c.points.iter().all(|p| p.r > 2.0 && p.r < 2.0 + PI));
    }

    #[test]
    fn single_cell_curve_has_ratio_one() {
        // a tiny curve around a generic point stays inside one cell
        let t = build_stadium(2.0, 1.0).unwrap();
        let spec = SubsetSpec::FirstArcCollisionArcsOnly;
        let kinds = [CellKind::FlatRunDirect, CellKind::FlatRunIndirect, CellKind::Regular, CellKind::Sliding];
        let c = UnstableCurveSample::straight(&t, PhasePoint::new(2.0 + PI / 2.0, 0.3), TangentVector::new(1.0, -0.5), 1e-9, 20).unwrap();
        let ranges = cell_range(&t, spec, &c, &kinds);
        assert_eq!(ranges.len(), 1);
        assert_eq!(ranges[0].0, ranges[0].1);
    }

    #[test]
    fn stadium_invariants_hold() {
        let t = build_stadium(2.0, 1.0).unwrap();
        let rep = exact_invariants(&t, 2000, 1);
        assert!(rep.det_rel_err < 1e-9, "{rep:?}");
        assert!(rep.fd_rel_err < 1e-5, "{rep:?}");
        assert!(rep.reversal_err < 1e-9, "{rep:?}");
        assert!(rep.fd_points > 1000);
        assert!(rep.phi_drift.is_none());
    }

    #[test]
    fn disc_conserves_phi() {
        let t = crate::geometry::build_custom_disc(1.0).unwrap();
        let drift = exact_invariants(&t, 1000, 2).phi_drift.unwrap();
        assert!(drift < 1e-9 * 1000.0, "{drift}");
    }

    #[test]
    fn inverse_key_undoes_the_return() {
        let t = build_stadium(2.0, 1.0).unwrap();
        let spec = SubsetSpec::FirstArcCollisionArcsOnly;
        let mut rng = crate::rng::stream(5, 0);
        let mut checked = 0;
        while checked < 50 {
            let x = sample_mu(&t, &mut rng);
            if in_m_traced(&t, spec, x) != Ok(Some(true)) {
                continue;
            }
            let Some((k, c)) = inverse_key(&t, spec, x) else { continue };
            let mut y = x;
            for _ in 0..k {
                y = crate::dynamics::preimage(&t, y).unwrap().point;
            }
            assert_eq!(t.component_at(y.r), c);
            let rec = return_map(&t, spec, y, &ReturnOptions::default()).unwrap();
            assert_eq!(rec.r, k);
            assert!((rec.end.r - x.r).abs() < 1e-9 && (rec.end.phi - x.phi).abs() < 1e-9);
            checked += 1;
        }
    }
}
