//! Binds experiment configurations to the library and emits their artifacts.

use crate::config::{Experiment, ExperimentConfig, Probe};
use crate::output::{num, Csv, OutputDir, Plot};
use anyhow::Result;
use billiard_core::diagnostics::{
    cell_expansion_trend, CellRangeReport, exact_invariants, expansion_survey, probe_kinds, seed_curves,
    strip_expansion_trend, CellTrendOptions, CurveSeeding, ExpansionTrend, StripOptions,
};
use billiard_core::dynamics::{orbit, sample_mu, PhasePoint};
use billiard_core::geometry::{validate, GeometryError, Table, TableSpec};
use billiard_core::induced::{CellKind, ClassifyParams, SubsetSpec};
use billiard_core::rng::{stream, stream_id};
use billiard_core::stats::cells::{cell_measures_of, threshold_sensitivity};
use billiard_core::stats::correlation::{fit_decay, resolved_window};
use billiard_core::stats::tail::tail_from_ensemble;
use billiard_core::stats::{
    estimate_correlation, mean_free_path, pushforward_ks, run_ensemble, CorrelationOptions, EnsembleOptions,
    MapKind, Observable, ScalingOptions, SurvivalCurve, WindowPolicy,
};
use serde_json::{json, Value};
use std::fmt;

/// Stream tag of random orbit starts.
const TAG_ORBIT_START: u32 = 20;

/// Significance used to pick the resolved lag window of a correlation.
const CORRELATION_Z: f64 = 2.0;

/// A failure with a machine-readable kind.
#[derive(Debug)]
pub struct Failure {
    pub kind: &'static str,
    pub message: String,
    pub details: Value,
}

impl Failure {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
            details: Value::Null,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for Failure {}

fn failure(kind: &'static str) -> impl Fn(&dyn fmt::Display) -> anyhow::Error {
    move |e| Failure::new(kind, e.to_string()).into()
}

fn build_table(spec: &TableSpec) -> Result<Table> {
    spec.build().map_err(|e| failure("validation")(&e))
}

/// Runs one experiment, writing its CSV series (and plot scripts when asked)
/// into `out`. Returns the result section of the summary.
pub fn run(config: &ExperimentConfig, out: &mut OutputDir, plot: bool) -> Result<Value> {
    if let Experiment::Validate = config.experiment {
        return run_validate(&config.table);
    }
    let table = build_table(&config.table)?;
    let seed = config.seed;
    match &config.experiment {
        Experiment::Validate => unreachable!(),
        Experiment::Orbit { start, steps } => run_orbit(&table, *start, *steps, seed, out),
        Experiment::Correlation {
            f,
            g,
            map,
            n_max,
            steps,
            burn_in,
            batches,
            winsorize,
        } => {
            let parse = |s: &str| Observable::parse(s).ok_or_else(|| Failure::new("config", format!("unknown observable '{s}'")));
            let map = match map.as_str() {
                "full" => MapKind::Full,
                "induced" => MapKind::Induced(subset_of(&table)?),
                other => return Err(Failure::new("config", format!("unknown map '{other}', expected full or induced")).into()),
            };
            let opts = CorrelationOptions {
                n_max: *n_max as usize,
                steps: *steps,
                burn_in: *burn_in,
                batches: *batches as usize,
                seed,
                winsorize: *winsorize,
            };
            run_correlation(&table, parse(f)?, parse(g)?, map, &opts, out, plot)
        }
        Experiment::Tail {
            samples,
            r_max,
            levels,
            n_min,
            min_count,
        } => {
            let opts = EnsembleOptions {
                samples: *samples,
                r_max: *r_max,
                seed,
                classify: ClassifyParams::default(),
                levels: *levels,
            };
            let policy = WindowPolicy::Auto {
                min_count: *min_count,
                n_min: *n_min,
            };
            run_tail(&table, &opts, &policy, out, plot)
        }
        Experiment::Cells {
            samples,
            r_max,
            levels,
            n_min,
            min_count,
            bins_per_decade,
            delta,
        } => {
            let opts = EnsembleOptions {
                samples: *samples,
                r_max: *r_max,
                seed,
                classify: ClassifyParams::default(),
                levels: *levels,
            };
            let scaling = ScalingOptions {
                n_min: *n_min,
                min_count: *min_count,
                bins_per_decade: *bins_per_decade,
            };
            run_cells(&table, &opts, &scaling, *delta, out, plot)
        }
        Experiment::Diagnostics { probe } => run_probe(&table, probe, seed, out, plot),
    }
}

fn subset_of(table: &Table) -> Result<SubsetSpec> {
    SubsetSpec::for_family(table.family())
        .ok_or_else(|| Failure::new("config", format!("no induced map is defined for a {} table", table.family())).into())
}

fn run_validate(spec: &TableSpec) -> Result<Value> {
    let (table, relaxed) = match spec.build() {
        Ok(t) => (t, false),
        // rebuild with large arcs allowed to list every violation
        Err(GeometryError::HalfCircle { .. }) => {
            let mut relaxed = spec.clone();
            relaxed.parameters.insert("allow_large_arcs".into(), json!(1));
            (build_table(&relaxed)?, true)
        }
        Err(e) => {
            return Err(Failure {
                kind: "validation",
                message: e.to_string(),
                details: json!({ "violations": [e.to_string()] }),
            }
            .into())
        }
    };
    let mut report = validate(&table);
    if relaxed {
        report.warnings.retain(|w| w.rule != "half-circle-allowed");
    }
    let result = json!({
        "report": report,
        "perimeter": table.perimeter(),
        "area": table.area(),
        "components": table.components().len(),
        "mean_free_path": table.mean_free_path(),
    });
    if !report.passed {
        let first = report.violations.first().map(|v| v.message.clone()).unwrap_or_default();
        return Err(Failure {
            kind: "validation",
            message: first,
            details: result,
        }
        .into());
    }
    Ok(result)
}

fn run_orbit(table: &Table, start: Option<[f64; 2]>, steps: u64, seed: u64, out: &mut OutputDir) -> Result<Value> {
    let x0 = match start {
        Some([r, phi]) => {
            if !(0.0..table.perimeter()).contains(&r) || phi.abs() >= std::f64::consts::FRAC_PI_2 {
                return Err(Failure::new("config", format!("start ({r}, {phi}) is outside the collision space")).into());
            }
            PhasePoint::new(r, phi)
        }
        None => sample_mu(table, &mut stream(seed, stream_id(TAG_ORBIT_START, 0))),
    };
    let mut csv = Csv::new("orbit", &["k", "r", "phi", "component", "free_path", "grazing"]);
    csv.row(&["0".into(), num(x0.r), num(x0.phi), table.component_at(x0.r).to_string(), num(0.0), "0".into()]);
    let mut k = 0u64;
    let summary = orbit(table, x0, steps, |ev| {
        k += 1;
        csv.row(&[
            k.to_string(),
            num(ev.point.r),
            num(ev.point.phi),
            ev.component.to_string(),
            num(ev.free_path),
            (ev.grazing as u8).to_string(),
        ]);
    })
    .map_err(|e| failure("runtime")(&e))?;
    out.write_csv(&csv)?;
    Ok(json!({ "start": x0, "summary": summary }))
}

fn run_correlation(
    table: &Table,
    f: Observable,
    g: Observable,
    map: MapKind,
    opts: &CorrelationOptions,
    out: &mut OutputDir,
    plot: bool,
) -> Result<Value> {
    let series = estimate_correlation(table, f, g, map, opts).map_err(|e| match e {
        billiard_core::stats::correlation::CorrelationError::InsufficientBudget { .. } => failure("budget")(&e),
        _ => failure("runtime")(&e),
    })?;
    let mut csv = Csv::new("correlation", &["lag", "value", "se"]);
    for (i, &lag) in series.lags.iter().enumerate() {
        csv.row(&[lag.to_string(), num(series.values[i]), num(series.se[i])]);
    }
    out.write_csv(&csv)?;
    if plot {
        out.write_plot(
            "correlation",
            &[Plot {
                csv: "correlation".into(),
                x: 0,
                y: 1,
                title: format!("|C_n({f}, {g})|"),
                log_x: true,
                log_y: true,
            }],
        )?;
    }
    let window = resolved_window(&series, CORRELATION_Z);
    let fit = fit_decay(&series, Some(window), CORRELATION_Z);
    Ok(json!({
        "f": f.to_string(),
        "g": g.to_string(),
        "map": series.map,
        "sample_size": series.sample_size,
        "restarts": series.restarts,
        "batches": series.batches,
        "mean_f": series.mean_f,
        "mean_g": series.mean_g,
        "winsor_cutoffs": series.winsor_cutoffs,
        "resolved_window": window,
        "z": CORRELATION_Z,
        "fit": fit,
        "exponential_preferred": fit.as_ref().map(|d| d.comparison.exponential_preferred()),
    }))
}

fn survival_csv(name: &str, curve: &SurvivalCurve) -> Csv {
    let mut csv = Csv::new(name, &["n", "p", "se", "count"]);
    for i in 0..curve.n.len() {
        csv.row(&[num(curve.n[i]), num(curve.p[i]), num(curve.se[i]), curve.counts[i].to_string()]);
    }
    csv
}

fn run_tail(table: &Table, opts: &EnsembleOptions, policy: &WindowPolicy, out: &mut OutputDir, plot: bool) -> Result<Value> {
    let spec = subset_of(table)?;
    let ens = run_ensemble(table, spec, opts).map_err(|e| failure("runtime")(&e))?;
    let est = tail_from_ensemble(ens, policy);
    out.write_csv(&survival_csv("survival_m", &est.survival_m))?;
    out.write_csv(&survival_csv("survival_full", &est.survival_full))?;
    if plot {
        let p = |csv: &str, title: &str| Plot {
            csv: csv.into(),
            x: 0,
            y: 1,
            title: title.into(),
            log_x: true,
            log_y: true,
        };
        out.write_plot("tail", &[p("survival_m", "P(R > n | M)"), p("survival_full", "P(R > n), full space")])?;
    }
    let ens = &est.ensemble;
    Ok(json!({
        "subset": spec,
        "policy": policy,
        "fit_m": fit_json(&est.fit_m),
        "fit_full": fit_json(&est.fit_full),
        "measure_fraction": est.measure_fraction,
        "mean_return_time": est.mean_return_time,
        "kac_mean_return_time": 1.0 / est.measure_fraction.value,
        "drawn": ens.drawn,
        "outside_m": ens.outside_m,
        "corner_starts": ens.corner_starts,
        "truncated": ens.truncated,
        "censored": ens.censored,
        "max_return": ens.max_return(),
        "anchors": ens.sampler.anchors.len(),
    }))
}

fn fit_json<T: serde::Serialize>(fit: &Result<T, String>) -> Value {
    match fit {
        Ok(f) => json!(f),
        Err(e) => json!({ "error": e }),
    }
}

fn run_cells(
    table: &Table,
    opts: &EnsembleOptions,
    scaling: &ScalingOptions,
    delta: f64,
    out: &mut OutputDir,
    plot: bool,
) -> Result<Value> {
    let spec = subset_of(table)?;
    let ens = run_ensemble(table, spec, opts).map_err(|e| failure("runtime")(&e))?;
    let measures = cell_measures_of(&ens, None, scaling);
    let mut cells = Csv::new("cells", &["kind", "n", "mass", "se", "count"]);
    for m in &measures.masses {
        cells.row(&[m.kind.as_str().into(), m.n.to_string(), num(m.mass), num(m.se), m.count.to_string()]);
    }
    out.write_csv(&cells)?;
    let mut binned = Csv::new("cell_scaling", &["kind", "n", "mass_per_cell", "count"]);
    for s in &measures.scalings {
        for i in 0..s.n.len() {
            binned.row(&[s.kind.as_str().into(), num(s.n[i]), num(s.mass[i]), s.counts[i].to_string()]);
        }
    }
    out.write_csv(&binned)?;
    if plot {
        out.write_plot(
            "cells",
            &[Plot {
                csv: "cell_scaling".into(),
                x: 1,
                y: 2,
                title: "mass per cell".into(),
                log_x: true,
                log_y: true,
            }],
        )?;
    }
    let base = ClassifyParams::default();
    let sensitivity: Vec<_> = measures
        .scalings
        .iter()
        .filter(|s| s.fit.is_some())
        .map(|s| {
            let t = threshold_sensitivity(&ens, s.kind, &base, delta, scaling);
            json!({ "kind": s.kind, "base": t.base, "lower": t.lower, "upper": t.upper, "max_shift": t.max_shift() })
        })
        .collect();
    let scalings: Vec<_> = measures
        .scalings
        .iter()
        .map(|s| json!({ "kind": s.kind, "fit": s.fit, "n_lo": s.n_lo, "n_hi": s.n_hi, "bins": s.n.len() }))
        .collect();
    Ok(json!({
        "subset": spec,
        "drawn": measures.drawn,
        "censored": measures.censored,
        "scalings": scalings,
        "threshold_delta": delta,
        "threshold_sensitivity": sensitivity,
    }))
}

fn trend_csv(name: &str, trend: &ExpansionTrend) -> Csv {
    let mut csv = Csv::new(name, &["index", "index_hi", "samples", "min_lambda", "min_ratio"]);
    for b in &trend.bins {
        csv.row(&[
            b.index.to_string(),
            b.index_hi.to_string(),
            b.samples.to_string(),
            num(b.min_lambda),
            num(b.min_ratio),
        ]);
    }
    csv
}

fn trend_plot(name: &str) -> Plot {
    Plot {
        csv: name.into(),
        x: 0,
        y: 3,
        title: "minimal expansion".into(),
        log_x: true,
        log_y: true,
    }
}

fn trend_json(trend: &ExpansionTrend) -> Value {
    let min_ratio = trend.bins.iter().map(|b| b.min_ratio).reduce(f64::min);
    json!({
        "metric": trend.metric,
        "bins": trend.bins.len(),
        "dropped": trend.dropped,
        "min_samples": trend.min_samples,
        "fit": trend.fit,
        "min_ratio": min_ratio,
        "last_min_ratio": trend.bins.last().map(|b| b.min_ratio),
    })
}

fn run_probe(table: &Table, probe: &Probe, seed: u64, out: &mut OutputDir, plot: bool) -> Result<Value> {
    let rt = failure("runtime");
    match probe {
        Probe::Invariants { points } => {
            let rep = exact_invariants(table, *points, seed);
            Ok(json!({ "invariants": rep }))
        }
        Probe::Invariance { samples } => {
            let rep = pushforward_ks(table, *samples, seed);
            Ok(json!({ "invariance": rep, "max_ks": rep.max_ks() }))
        }
        Probe::MeanFreePath { chains, steps } => {
            let m = mean_free_path(table, *chains, *steps, seed).map_err(|e| rt(&e))?;
            Ok(json!({ "mean_free_path": m }))
        }
        Probe::Sums {
            curves,
            resolution,
            half_length,
            spread,
            n1_min,
        } => {
            let spec = subset_of(table)?;
            let seeding = CurveSeeding {
                curves: *curves as usize,
                resolution: *resolution as usize,
                half_length: *half_length,
                spread: *spread,
                seed,
            };
            let curves = seed_curves(table, &seeding).map_err(|e| failure("config")(&e))?;
            let survey = expansion_survey(table, spec, &curves).map_err(|e| rt(&e))?;
            let kinds = probe_kinds(table.family());
            let ranges = CellRangeReport::from_ranges(kinds, survey.cell_ranges.clone(), *n1_min);
            let mut csv = Csv::new("range", &["n1", "n2"]);
            for (a, b) in &ranges.ranges {
                csv.row(&[a.to_string(), b.to_string()]);
            }
            out.write_csv(&csv)?;
            if let Some(w) = &survey.worst {
                let mut comps = Csv::new("worst_components", &["first", "last", "kind", "n", "return_time", "lambda_min", "lambda_p05"]);
                for c in &w.components {
                    comps.row(&[
                        c.first.to_string(),
                        c.last.to_string(),
                        c.cell.kind.as_str().into(),
                        c.cell.n.to_string(),
                        c.return_time.to_string(),
                        num(c.lambda_min),
                        num(c.lambda_p05),
                    ]);
                }
                out.write_csv(&comps)?;
                let mut partial = Csv::new("worst_partial_sums", &["n", "sum"]);
                for (n, s) in &w.partial_sums {
                    partial.row(&[n.to_string(), num(*s)]);
                }
                out.write_csv(&partial)?;
                if plot {
                    out.write_plot(
                        "partial_sums",
                        &[Plot {
                            csv: "worst_partial_sums".into(),
                            x: 0,
                            y: 1,
                            title: "partial sums of 1/lambda".into(),
                            log_x: true,
                            log_y: false,
                        }],
                    )?;
                }
            }
            let worst = survey.worst.as_ref().map(|w| {
                json!({
                    "sum": w.sum,
                    "sum_p05": w.sum_p05,
                    "refined_sum": w.refined_sum,
                    "truncation_index": w.truncation_index,
                    "refined_truncation_index": w.refined_truncation_index,
                    "components": w.components.len(),
                    "singular_points": w.singular_points,
                    "under_resolved": w.under_resolved,
                    "divergent": w.divergent,
                })
            });
            Ok(json!({
                "subset": spec,
                "curves": survey.curves,
                "max_sum": survey.max_sum,
                "max_sum_p05": survey.max_sum_p05,
                "divergent_curves": survey.divergent_curves,
                "under_resolved_curves": survey.under_resolved_curves,
                "singular_curves": survey.singular_curves,
                "worst": worst,
                "range_kinds": ranges.kinds,
                "range_n1_min": ranges.n1_min,
                "range_max_ratio": ranges.max_ratio,
                "range_qualifying_pieces": ranges.qualifying_pieces,
            }))
        }
        Probe::Strips { per_strip, k0, k_max } => {
            let opts = StripOptions {
                per_strip: *per_strip as usize,
                k0: *k0,
                k_max: *k_max,
                seed,
                ..Default::default()
            };
            let trend = strip_expansion_trend(table, &opts).map_err(|e| failure("config")(&e))?;
            out.write_csv(&trend_csv("strip_expansion", &trend))?;
            if plot {
                out.write_plot("strip_expansion", &[trend_plot("strip_expansion")])?;
            }
            Ok(trend_json(&trend))
        }
        Probe::Expansion {
            cell_kind,
            samples,
            levels,
            n_min,
        } => {
            let spec = subset_of(table)?;
            let kind = CellKind::parse(cell_kind)
                .ok_or_else(|| Failure::new("config", format!("unknown cell kind '{cell_kind}'")))?;
            let mut opts = CellTrendOptions::default();
            opts.ensemble.samples = *samples;
            opts.ensemble.levels = *levels;
            opts.ensemble.seed = seed;
            opts.n_min = *n_min;
            let trend = cell_expansion_trend(table, spec, kind, &opts).map_err(|e| rt(&e))?;
            out.write_csv(&trend_csv("cell_expansion", &trend))?;
            if plot {
                out.write_plot("cell_expansion", &[trend_plot("cell_expansion")])?;
            }
            let mut v = trend_json(&trend);
            v["cell_kind"] = json!(kind);
            Ok(v)
        }
    }
}
