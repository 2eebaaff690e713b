//! Family hypothesis checks.

use super::{CurvatureClass, Family, Shape, Table, EPS_CLOSURE};
use serde::Serialize;
use std::f64::consts::PI;

/// Samples per component for the point-based checks.
const SAMPLES_PER_COMPONENT: usize = 512;

/// Relative margin below which a point counts as lying on a circle.
const ON_CIRCLE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub rule: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub component: Option<usize>,
}

impl Violation {
    fn new(rule: &str, message: String, component: Option<usize>) -> Self {
        Self {
            rule: rule.to_string(),
            message,
            component,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub family: Family,
    pub passed: bool,
    pub violations: Vec<Violation>,
    pub warnings: Vec<Violation>,
}

/// Checks every hypothesis of the table's family. Pure; violations are data.
pub fn validate(table: &Table) -> ValidationReport {
    let mut violations = Vec::new();
    let mut warnings = Vec::new();
    let residual = table.closure_residual();
    if residual > EPS_CLOSURE {
        violations.push(Violation::new(
            "closure",
            format!("boundary not closed, residual {residual:e}"),
            None,
        ));
    }
    match table.family() {
        Family::StraightStadium => check_stadium(table, &mut violations),
        Family::DriveBelt => check_drivebelt(table, &mut violations),
        Family::Flower => check_flower(table, &mut violations, &mut warnings),
        Family::SemiDispersing => check_semidispersing(table, &mut violations, &mut warnings),
        Family::Custom => warnings.push(Violation::new(
            "custom-family",
            "custom table: no hyperbolicity theorem applies".into(),
            None,
        )),
    }
    ValidationReport {
        family: table.family(),
        passed: violations.is_empty(),
        violations,
        warnings,
    }
}

/// Angle between the incoming and outgoing tangents at the end of `id`.
fn junction_turn(table: &Table, id: usize) -> f64 {
    let c = table.component(id);
    let next = table.component(table.next_in_loop(id));
    let t_in = c.shape.tangent_at(c.length);
    let t_out = next.shape.tangent_at(0.0);
    t_in.cross(t_out).atan2(t_in.dot(t_out))
}

fn check_tangency(table: &Table, violations: &mut Vec<Violation>) {
    for c in table.components() {
        let turn = junction_turn(table, c.id);
        if turn.abs() > 1e-9 {
            violations.push(Violation::new(
                "tangency",
                format!(
                    "junction after component {} is not tangent (turn {turn:.3e} rad)",
                    c.id
                ),
                Some(c.id),
            ));
        }
    }
}

fn segment_direction(shape: &Shape) -> Option<super::Vec2> {
    match *shape {
        Shape::Segment { from, to } => Some((to - from).normalized()),
        Shape::Arc { .. } => None,
    }
}

fn check_two_arc_shape(table: &Table, violations: &mut Vec<Violation>) -> bool {
    let comps = table.components();
    let arcs = comps.iter().filter(|c| c.is_arc()).count();
    let focusing = table.focusing_arcs().count();
    if table.loops().len() != 1 || comps.len() != 4 || arcs != 2 || focusing != 2 {
        violations.push(Violation::new(
            "shape",
            "expected one loop of two focusing arcs and two segments".into(),
            None,
        ));
        return false;
    }
    check_tangency(table, violations);
    true
}

fn check_stadium(table: &Table, violations: &mut Vec<Violation>) {
    if !check_two_arc_shape(table, violations) {
        return;
    }
    for c in table.focusing_arcs() {
        if (c.extent() - PI).abs() > 1e-12 {
            violations.push(Violation::new(
                "half-circle-arcs",
                format!("arc {} has extent {:.12} instead of pi", c.id, c.extent()),
                Some(c.id),
            ));
        }
    }
    let dirs: Vec<_> = table
        .components()
        .iter()
        .filter_map(|c| segment_direction(&c.shape))
        .collect();
    if dirs.len() == 2 && dirs[0].cross(dirs[1]).abs() > 1e-12 {
        violations.push(Violation::new(
            "parallel-sides",
            "flat sides are not parallel".into(),
            None,
        ));
    }
}

fn check_drivebelt(table: &Table, violations: &mut Vec<Violation>) {
    if !check_two_arc_shape(table, violations) {
        return;
    }
    let large = table.focusing_arcs().filter(|c| c.extent() > PI).count();
    if large != 1 {
        violations.push(Violation::new(
            "one-large-arc",
            format!("expected exactly one arc longer than a half circle, found {large}"),
            None,
        ));
    }
    let dirs: Vec<_> = table
        .components()
        .iter()
        .filter_map(|c| segment_direction(&c.shape))
        .collect();
    if dirs.len() == 2 && dirs[0].cross(dirs[1]).abs() < 1e-12 {
        violations.push(Violation::new(
            "skewed-sides",
            "flat sides are parallel; this is a straight stadium".into(),
            None,
        ));
    }
}

fn interior_samples(shape: &Shape) -> impl Iterator<Item = super::Vec2> + '_ {
    let len = shape.length();
    (1..SAMPLES_PER_COMPONENT).map(move |j| shape.point_at(len * j as f64 / SAMPLES_PER_COMPONENT as f64))
}

fn check_flower(table: &Table, violations: &mut Vec<Violation>, warnings: &mut Vec<Violation>) {
    for arc in table.focusing_arcs() {
        if arc.extent() >= PI {
            let msg = format!(
                "focusing arc {} not shorter than half circle (extent {:.6} rad)",
                arc.id,
                arc.extent()
            );
            if table.allows_large_arcs() {
                warnings.push(Violation::new(
                    "half-circle-allowed",
                    format!("{msg}; explicitly allowed"),
                    Some(arc.id),
                ));
            }
            violations.push(Violation::new("half-circle", msg, Some(arc.id)));
        }
        let Shape::Arc { center, radius, .. } = arc.shape else {
            continue;
        };
        let limit = radius * (1.0 + ON_CIRCLE_TOL);
        let mut hit = None;
        for other in table.components() {
            if other.id == arc.id {
                continue;
            }
            if interior_samples(&other.shape).any(|p| p.distance(center) <= limit) {
                hit = Some(other.id);
                break;
            }
        }
        if let Some(other) = hit {
            violations.push(Violation::new(
                "containment",
                format!(
                    "component {other} has points on or inside the circle of focusing arc {}",
                    arc.id
                ),
                Some(arc.id),
            ));
        }
    }
    for c in table.components() {
        let next = table.component(table.next_in_loop(c.id));
        if c.class == CurvatureClass::Focusing || next.class == CurvatureClass::Focusing {
            continue;
        }
        if c.class != CurvatureClass::Dispersing && next.class != CurvatureClass::Dispersing {
            continue;
        }
        if (junction_turn(table, c.id).abs() - PI).abs() < 1e-9 {
            violations.push(Violation::new(
                "cusp",
                format!("components {} and {} meet tangentially", c.id, next.id),
                Some(c.id),
            ));
        }
    }
    if table.dispersing_length() == 0.0 {
        warnings.push(Violation::new(
            "no-dispersing",
            "flower without dispersing walls".into(),
            None,
        ));
    }
    warnings.push(Violation::new(
        "genericity",
        "genericity of the flower is not checked".into(),
        None,
    ));
}

/// Approximate gap between two boundary loops: exact for two circles,
/// otherwise the minimum over boundary samples of one loop of the exact
/// distance to the other, less the sample spacing. Negative when nested.
fn loop_gap(table: &Table, a: usize, b: usize) -> f64 {
    let comps = table.components();
    let la = &comps[table.loops()[a].clone()];
    let lb = &comps[table.loops()[b].clone()];
    if let ([ca], [cb]) = (la, lb) {
        if let (
            Shape::Arc {
                center: c1,
                radius: r1,
                ..
            },
            Shape::Arc {
                center: c2,
                radius: r2,
                ..
            },
        ) = (ca.shape, cb.shape)
        {
            if !ca.has_junctions && !cb.has_junctions {
                return c1.distance(c2) - r1 - r2;
            }
        }
    }
    let spacing = la
        .iter()
        .chain(lb.iter())
        .map(|c| c.length / SAMPLES_PER_COMPONENT as f64)
        .fold(0.0, f64::max);
    let mut gap = f64::INFINITY;
    for ca in la {
        for p in interior_samples(&ca.shape).chain(std::iter::once(ca.shape.start())) {
            for cb in lb {
                let s = cb.shape.arclength_of(p);
                gap = gap.min(cb.shape.point_at(s).distance(p));
            }
        }
    }
    gap - spacing
}

fn check_semidispersing(
    table: &Table,
    violations: &mut Vec<Violation>,
    warnings: &mut Vec<Violation>,
) {
    let comps = table.components();
    let outer = &comps[table.loops()[0].clone()];
    let axis_aligned = outer.iter().all(|c| match c.shape {
        Shape::Segment { from, to } => (from.x == to.x) || (from.y == to.y),
        Shape::Arc { .. } => false,
    });
    if outer.len() != 4 || !axis_aligned {
        violations.push(Violation::new(
            "rectangle",
            "outer boundary must be an axis-aligned rectangle".into(),
            None,
        ));
        return;
    }
    let (mut lo, mut hi) = (outer[0].shape.start(), outer[0].shape.start());
    for c in outer {
        let p = c.shape.start();
        lo = super::Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = super::Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let n_loops = table.loops().len();
    if n_loops == 1 {
        warnings.push(Violation::new(
            "no-dispersing",
            "no dispersing component; the dynamics is integrable".into(),
            None,
        ));
    }
    for l in 1..n_loops {
        let loop_comps = &comps[table.loops()[l].clone()];
        for c in loop_comps {
            if c.class != CurvatureClass::Dispersing {
                violations.push(Violation::new(
                    "curvature",
                    format!(
                        "scatterer component {} is not dispersing; curvature must be bounded away from zero",
                        c.id
                    ),
                    Some(c.id),
                ));
            }
        }
        let inside = loop_comps.iter().all(|c| {
            interior_samples(&c.shape)
                .chain(std::iter::once(c.shape.start()))
                .all(|p| p.x > lo.x && p.x < hi.x && p.y > lo.y && p.y < hi.y)
        });
        if !inside {
            violations.push(Violation::new(
                "inside-rectangle",
                format!("scatterer {l} is not strictly inside the rectangle"),
                None,
            ));
        }
    }
    for a in 1..n_loops {
        for b in a + 1..n_loops {
            let gap = loop_gap(table, a, b);
            if !(gap > 0.0) {
                violations.push(Violation::new(
                    "disjoint",
                    format!("scatterers {a} and {b} intersect or touch (gap {gap:.3e})"),
                    None,
                ));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::*;

    #[test]
    fn stadium_passes() {
        let r = validate(&build_stadium(2.0, 1.0).unwrap());
        assert!(r.passed, "{:?}", r.violations);
    }

    #[test]
    fn drivebelt_passes() {
        let r = validate(&build_drivebelt(1.0, 0.5, 2.0).unwrap());
        assert!(r.passed, "{:?}", r.violations);
    }

    #[test]
    fn flower_passes_with_genericity_warning() {
        let spec = FlowerSpec::regular(3, 1.0, 0.5, 0.8 * PI).unwrap();
        let r = validate(&build_flower(&spec).unwrap());
        assert!(r.passed, "{:?}", r.violations);
        assert!(r.warnings.iter().any(|w| w.rule == "genericity"));
    }

    #[test]
    fn pathological_flower_fails() {
        let spec = FlowerSpec::regular(3, 1.0, 0.5, 1.1 * PI)
            .unwrap()
            .with_large_arcs(true);
        let r = validate(&build_flower(&spec).unwrap());
        assert!(!r.passed);
        assert!(r.violations.iter().any(|v| v.rule == "half-circle"));
        assert!(r.violations.iter().all(|v| v.rule == "half-circle"));
    }

    #[test]
    fn containment_violation_detected() {
        // a chord closing a single petal lies inside its circle
        let petals = vec![Petal {
            center: Vec2::new(0.0, 0.0),
            radius: 1.0,
            start_angle: 0.0,
            extent: 0.9 * PI,
        }];
        let spec = FlowerSpec {
            petals,
            walls: vec![Wall::Flat],
            allow_large_arcs: false,
        };
        assert!(matches!(
            build_flower(&spec),
            Err(GeometryError::Containment { .. })
        ));
    }

    #[test]
    fn touching_scatterers_fail_disjointness() {
        let square = vec![
            Shape::Segment {
                from: Vec2::new(0.0, 0.0),
                to: Vec2::new(1.0, 0.0),
            },
            Shape::Segment {
                from: Vec2::new(1.0, 0.0),
                to: Vec2::new(1.0, 1.0),
            },
            Shape::Segment {
                from: Vec2::new(1.0, 1.0),
                to: Vec2::new(0.0, 1.0),
            },
            Shape::Segment {
                from: Vec2::new(0.0, 1.0),
                to: Vec2::new(0.0, 0.0),
            },
        ];
        let disc = |x: f64| {
            vec![Shape::Arc {
                center: Vec2::new(x, 0.5),
                radius: 0.2,
                start_angle: 0.0,
                sweep: -2.0 * PI,
            }]
        };
        let t = Table::from_loops(Family::SemiDispersing, vec![square, disc(0.3), disc(0.7)])
            .unwrap();
        let r = validate(&t);
        assert!(!r.passed);
        assert!(r.violations.iter().any(|v| v.rule == "disjoint"));
    }

    #[test]
    fn empty_square_warns() {
        let t = build_semidispersing(1.0, 1.0, &[]).unwrap();
        let r = validate(&t);
        assert!(r.passed);
        assert!(r.warnings.iter().any(|w| w.rule == "no-dispersing"));
    }

    #[test]
    fn custom_warns() {
        let r = validate(&build_custom_disc(1.0).unwrap());
        assert!(r.passed);
        assert_eq!(r.warnings[0].rule, "custom-family");
    }
}
