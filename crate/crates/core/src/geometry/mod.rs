//! Billiard tables: boundary components, builders for the supported table
//! families, validation of the family hypotheses and the arc-length
//! parametrization of the boundary.
//!
//! Every boundary loop is traversed with the billiard domain on its left. The
//! outer loop therefore runs counterclockwise and scatterer loops run
//! clockwise. Curvature is signed: dispersing components are positive,
//! focusing components negative and flat components zero.

mod builders;
mod spec;
mod validate;
mod vec2;

pub use builders::{
    build_custom_disc, build_custom_polygon, build_custom_rectangle, build_drivebelt,
    build_flower, build_semidispersing, build_stadium, FlowerSpec, Petal, Scatterer, Wall,
};
pub use spec::{ComponentSpec, TableSpec};
pub use validate::{validate, ValidationReport, Violation};
pub use vec2::Vec2;

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use std::fmt;
use thiserror::Error;

/// Distance (in arc-length) from a component junction below which a boundary
/// point is treated as a corner.
pub const EPS_CORNER: f64 = 1e-9;

/// Closure tolerance for consecutive component endpoints.
pub const EPS_CLOSURE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("scatterers overlap: {0}")]
    Overlap(String),
    #[error("curvature not bounded away from zero: {0}")]
    Curvature(String),
    #[error("focusing arc {component} is not shorter than half a circle (extent {extent:.6} rad)")]
    HalfCircle { component: usize, extent: f64 },
    #[error("boundary point inside the full circle of focusing arc {component}")]
    Containment { component: usize },
    #[error("dispersing components {a} and {b} meet tangentially (cusp)")]
    Cusp { a: usize, b: usize },
    #[error("boundary loop {loop_index} is not closed (residual {residual:e})")]
    NotClosed { loop_index: usize, residual: f64 },
    #[error("common tangent construction failed: {0}")]
    TangentConstruction(String),
    #[error("arc-length {r} outside [0, {perimeter})")]
    OutOfRange { r: f64, perimeter: f64 },
}

/// Table family tag; decides which hypotheses `validate` checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    SemiDispersing,
    Flower,
    StraightStadium,
    DriveBelt,
    Custom,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Family::SemiDispersing => "semi-dispersing",
            Family::Flower => "flower",
            Family::StraightStadium => "straight-stadium",
            Family::DriveBelt => "drive-belt",
            Family::Custom => "custom",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurvatureClass {
    Dispersing,
    Focusing,
    Flat,
}

/// Geometric shape of a boundary component.
///
/// Arcs are parametrized by angle `start_angle + sweep * s / (radius * |sweep|)`;
/// a positive sweep runs counterclockwise around the center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Shape {
    Segment {
        from: Vec2,
        to: Vec2,
    },
    Arc {
        center: Vec2,
        radius: f64,
        start_angle: f64,
        sweep: f64,
    },
}

impl Shape {
    pub fn length(&self) -> f64 {
        match *self {
            Shape::Segment { from, to } => from.distance(to),
            Shape::Arc { radius, sweep, .. } => radius * sweep.abs(),
        }
    }

    pub fn curvature_class(&self) -> CurvatureClass {
        match *self {
            Shape::Segment { .. } => CurvatureClass::Flat,
            Shape::Arc { sweep, .. } if sweep > 0.0 => CurvatureClass::Focusing,
            Shape::Arc { .. } => CurvatureClass::Dispersing,
        }
    }

    pub fn start(&self) -> Vec2 {
        self.point_at(0.0)
    }

    pub fn end(&self) -> Vec2 {
        self.point_at(self.length())
    }

    /// Point at local arc-length `s`.
    pub fn point_at(&self, s: f64) -> Vec2 {
        match *self {
            Shape::Segment { from, to } => {
                let d = to - from;
                from + d * (s / d.norm())
            }
            Shape::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => center + Vec2::unit(start_angle + sweep.signum() * s / radius) * radius,
        }
    }

    /// Unit tangent in the direction of increasing arc-length.
    pub fn tangent_at(&self, s: f64) -> Vec2 {
        match *self {
            Shape::Segment { from, to } => (to - from).normalized(),
            Shape::Arc {
                radius,
                start_angle,
                sweep,
                ..
            } => {
                let sign = sweep.signum();
                Vec2::unit(start_angle + sign * s / radius).perp() * sign
            }
        }
    }

    /// Signed curvature: dispersing > 0, focusing < 0, flat = 0.
    pub fn signed_curvature(&self) -> f64 {
        match *self {
            Shape::Segment { .. } => 0.0,
            Shape::Arc { radius, sweep, .. } => -sweep.signum() / radius,
        }
    }

    /// Local arc-length of the point of this component closest to `p`
    /// (exact for points on the component).
    pub fn arclength_of(&self, p: Vec2) -> f64 {
        match *self {
            Shape::Segment { from, to } => {
                let d = to - from;
                let len = d.norm();
                ((p - from).dot(d) / len).clamp(0.0, len)
            }
            Shape::Arc {
                center,
                radius,
                start_angle,
                sweep,
            } => {
                let offset = ((p - center).angle() - start_angle) * sweep.signum();
                let offset = offset.rem_euclid(TAU);
                let extent = sweep.abs();
                if offset <= extent {
                    offset * radius
                } else if offset - extent < TAU - offset {
                    extent * radius
                } else {
                    0.0
                }
            }
        }
    }
}

/// One smooth piece of the boundary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryComponent {
    pub id: usize,
    pub shape: Shape,
    pub class: CurvatureClass,
    /// Cumulative arc-length at the start of this component.
    pub r_offset: f64,
    pub length: f64,
    /// Index of the boundary loop containing this component.
    pub loop_index: usize,
    /// False only for a loop made of a single closed arc, whose seam is smooth.
    pub has_junctions: bool,
}

impl BoundaryComponent {
    pub fn curvature(&self) -> f64 {
        self.shape.signed_curvature()
    }

    pub fn is_arc(&self) -> bool {
        matches!(self.shape, Shape::Arc { .. })
    }

    /// Angular extent for arcs, zero for segments.
    pub fn extent(&self) -> f64 {
        match self.shape {
            Shape::Arc { sweep, .. } => sweep.abs(),
            Shape::Segment { .. } => 0.0,
        }
    }
}

/// Boundary data at a given arc-length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub component: usize,
    /// Arc-length measured from the start of the component.
    pub local_s: f64,
    pub position: Vec2,
    pub normal: Vec2,
    pub tangent: Vec2,
    pub curvature: f64,
    pub corner: bool,
}

/// An immutable billiard table.
#[derive(Debug, Clone, Serialize)]
pub struct Table {
    components: Vec<BoundaryComponent>,
    loops: Vec<std::ops::Range<usize>>,
    perimeter: f64,
    area: f64,
    family: Family,
    allow_large_arcs: bool,
}

impl Table {
    /// Assembles a table from boundary loops. The first loop is the outer
    /// boundary (counterclockwise); the others are scatterers (clockwise).
    pub fn from_loops(family: Family, loops: Vec<Vec<Shape>>) -> Result<Self, GeometryError> {
        if loops.is_empty() || loops.iter().any(|l| l.is_empty()) {
            return Err(GeometryError::InvalidParameter(
                "table needs at least one non-empty loop".into(),
            ));
        }
        let mut components = Vec::new();
        let mut ranges = Vec::new();
        let mut offset = 0.0;
        for (loop_index, shapes) in loops.iter().enumerate() {
            let first = components.len();
            for shape in shapes {
                validate_shape(shape)?;
                let length = shape.length();
                components.push(BoundaryComponent {
                    id: components.len(),
                    shape: *shape,
                    class: shape.curvature_class(),
                    r_offset: offset,
                    length,
                    loop_index,
                    has_junctions: !(shapes.len() == 1 && shape.is_closed_arc()),
                });
                offset += length;
            }
            let range = first..components.len();
            let residual = loop_closure_residual(&components[range.clone()]);
            if residual > EPS_CLOSURE {
                return Err(GeometryError::NotClosed {
                    loop_index,
                    residual,
                });
            }
            ranges.push(range);
        }
        let perimeter = offset;
        let area: f64 = components.iter().map(|c| green_area(&c.shape)).sum();
        if !(area > 0.0) {
            return Err(GeometryError::InvalidParameter(format!(
                "enclosed area {area} is not positive (check loop orientation)"
            )));
        }
        Ok(Self {
            components,
            loops: ranges,
            perimeter,
            area,
            family,
            allow_large_arcs: false,
        })
    }

    pub(crate) fn with_large_arcs_allowed(mut self, allow: bool) -> Self {
        self.allow_large_arcs = allow;
        self
    }

    pub fn components(&self) -> &[BoundaryComponent] {
        &self.components
    }

    pub fn component(&self, id: usize) -> &BoundaryComponent {
        &self.components[id]
    }

    pub fn loops(&self) -> &[std::ops::Range<usize>] {
        &self.loops
    }

    pub fn perimeter(&self) -> f64 {
        self.perimeter
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Whether focusing arcs longer than a half circle were explicitly allowed.
    pub fn allows_large_arcs(&self) -> bool {
        self.allow_large_arcs
    }

    /// Total measure of the collision space under `cos(phi) dr dphi`.
    pub fn collision_space_measure(&self) -> f64 {
        2.0 * self.perimeter
    }

    /// Mean free path of the collision map, `pi * area / perimeter`.
    pub fn mean_free_path(&self) -> f64 {
        PI * self.area / self.perimeter
    }

    /// Component containing arc-length `r`.
    pub fn component_at(&self, r: f64) -> usize {
        let idx = self.components.partition_point(|c| c.r_offset <= r);
        idx.saturating_sub(1).min(self.components.len() - 1)
    }

    /// Global arc-length of local position `s` on `component`, wrapped into
    /// `[0, perimeter)`.
    pub fn global_r(&self, component: usize, s: f64) -> f64 {
        let r = self.components[component].r_offset + s;
        if r >= self.perimeter {
            r - self.perimeter
        } else {
            r
        }
    }

    /// Position, inward normal and signed curvature at arc-length `r`.
    pub fn locate(&self, r: f64) -> Result<Location, GeometryError> {
        if !(0.0..self.perimeter).contains(&r) {
            return Err(GeometryError::OutOfRange {
                r,
                perimeter: self.perimeter,
            });
        }
        let id = self.component_at(r);
        Ok(self.locate_local(id, r - self.components[id].r_offset))
    }

    /// Like [`Table::locate`] but from a component and a local arc-length.
    pub fn locate_local(&self, id: usize, local_s: f64) -> Location {
        let c = &self.components[id];
        let mut s = local_s.clamp(0.0, c.length);
        let corner = c.has_junctions && (s < EPS_CORNER || c.length - s < EPS_CORNER);
        if corner {
            s = if s < EPS_CORNER { 0.0 } else { c.length };
        }
        let tangent = c.shape.tangent_at(s);
        Location {
            component: id,
            local_s: s,
            position: c.shape.point_at(s),
            normal: tangent.perp(),
            tangent,
            curvature: c.curvature(),
            corner,
        }
    }

    /// Component that follows `id` along its loop.
    pub fn next_in_loop(&self, id: usize) -> usize {
        let range = &self.loops[self.components[id].loop_index];
        if id + 1 < range.end {
            id + 1
        } else {
            range.start
        }
    }

    /// Component that precedes `id` along its loop.
    pub fn prev_in_loop(&self, id: usize) -> usize {
        let range = &self.loops[self.components[id].loop_index];
        if id > range.start {
            id - 1
        } else {
            range.end - 1
        }
    }

    /// Largest gap between consecutive component endpoints over all loops.
    pub fn closure_residual(&self) -> f64 {
        self.loops
            .iter()
            .map(|r| loop_closure_residual(&self.components[r.clone()]))
            .fold(0.0, f64::max)
    }

    /// Focusing arcs of the table.
    pub fn focusing_arcs(&self) -> impl Iterator<Item = &BoundaryComponent> {
        self.components
            .iter()
            .filter(|c| c.class == CurvatureClass::Focusing)
    }

    /// Total length of the dispersing components.
    pub fn dispersing_length(&self) -> f64 {
        self.components
            .iter()
            .filter(|c| c.class == CurvatureClass::Dispersing)
            .map(|c| c.length)
            .sum()
    }
}

impl Shape {
    fn is_closed_arc(&self) -> bool {
        matches!(*self, Shape::Arc { sweep, .. } if (sweep.abs() - TAU).abs() < 1e-12)
    }
}

fn validate_shape(shape: &Shape) -> Result<(), GeometryError> {
    match *shape {
        Shape::Segment { from, to } => {
            if !(from.distance(to) > 0.0) {
                return Err(GeometryError::InvalidParameter(
                    "segment endpoints must be distinct".into(),
                ));
            }
        }
        Shape::Arc { radius, sweep, .. } => {
            if !(radius > 0.0) || !radius.is_finite() {
                return Err(GeometryError::InvalidParameter(format!(
                    "arc radius must be positive, got {radius}"
                )));
            }
            if !(sweep.abs() > 0.0) || sweep.abs() > TAU + 1e-12 {
                return Err(GeometryError::InvalidParameter(format!(
                    "arc sweep must lie in (0, 2pi], got {sweep}"
                )));
            }
        }
    }
    Ok(())
}

fn loop_closure_residual(components: &[BoundaryComponent]) -> f64 {
    let n = components.len();
    (0..n)
        .map(|i| {
            components[i]
                .shape
                .end()
                .distance(components[(i + 1) % n].shape.start())
        })
        .fold(0.0, f64::max)
}

/// Contribution of one component to `1/2 * oint (x dy - y dx)`.
fn green_area(shape: &Shape) -> f64 {
    match *shape {
        Shape::Segment { from, to } => 0.5 * from.cross(to),
        Shape::Arc {
            center,
            radius,
            start_angle,
            sweep,
        } => {
            let t0 = start_angle;
            let t1 = start_angle + sweep;
            0.5 * (radius * radius * sweep
                + radius * (center.x * (t1.sin() - t0.sin()) - center.y * (t1.cos() - t0.cos())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_disc() -> Table {
        build_custom_disc(1.0).unwrap()
    }

    #[test]
    fn disc_locate_points_to_center() {
        let t = unit_disc();
        for &r in &[0.0, 0.3, 2.0, 5.9] {
            let loc = t.locate(r).unwrap();
            assert!((loc.curvature + 1.0).abs() < 1e-15);
            assert!((loc.normal + loc.position).norm() < 1e-12);
            assert!(!loc.corner);
        }
    }

    #[test]
    fn stadium_flat_midpoint_normal() {
        let t = build_stadium(2.0, 1.0).unwrap();
        // bottom segment runs from (-1,-1) to (1,-1); its midpoint is at r = 1
        let loc = t.locate(1.0).unwrap();
        assert_eq!(loc.component, 0);
        assert!((loc.position - Vec2::new(0.0, -1.0)).norm() < 1e-12);
        assert!((loc.normal - Vec2::new(0.0, 1.0)).norm() < 1e-12);
        assert_eq!(loc.curvature, 0.0);
    }

    #[test]
    fn scatterer_curvature_positive() {
        let t = build_semidispersing(
            1.0,
            1.0,
            &[Scatterer::Disc {
                center: Vec2::new(0.5, 0.5),
                radius: 0.25,
            }],
        )
        .unwrap();
        let loc = t.locate(4.1).unwrap();
        assert_eq!(loc.component, 4);
        assert!((loc.curvature - 4.0).abs() < 1e-12);
        // normal points away from the scatterer center
        let out = (loc.position - Vec2::new(0.5, 0.5)).normalized();
        assert!((loc.normal - out).norm() < 1e-12);
    }

    #[test]
    fn junction_is_flagged_as_corner() {
        let t = build_custom_rectangle(1.0, 1.0).unwrap();
        let loc = t.locate(1.0 + 1e-10).unwrap();
        assert!(loc.corner);
        assert!((loc.position - Vec2::new(1.0, 0.0)).norm() < 1e-15);
        assert!(!t.locate(0.5).unwrap().corner);
    }

    #[test]
    fn out_of_range_is_rejected() {
        let t = unit_disc();
        assert!(matches!(
            t.locate(TAU),
            Err(GeometryError::OutOfRange { .. })
        ));
        assert!(t.locate(-1e-3).is_err());
    }

    #[test]
    fn open_loop_is_rejected() {
        let err = Table::from_loops(
            Family::Custom,
            vec![vec![
                Shape::Segment {
                    from: Vec2::new(0.0, 0.0),
                    to: Vec2::new(1.0, 0.0),
                },
                Shape::Segment {
                    from: Vec2::new(1.0, 0.0),
                    to: Vec2::new(0.0, 1.0),
                },
                Shape::Segment {
                    from: Vec2::new(0.0, 1.0),
                    to: Vec2::new(0.0, 0.1),
                },
            ]],
        )
        .unwrap_err();
        assert!(matches!(err, GeometryError::NotClosed { .. }));
    }

    #[test]
    fn clockwise_outer_loop_has_negative_area() {
        let err = build_custom_polygon(&[
            Vec2::new(0.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0),
        ])
        .unwrap_err();
        assert!(matches!(err, GeometryError::InvalidParameter(_)));
    }

    #[test]
    fn r_offsets_strictly_increase() {
        let t = build_drivebelt(1.0, 0.5, 2.0).unwrap();
        for w in t.components().windows(2) {
            assert!(w[1].r_offset > w[0].r_offset);
        }
        let total: f64 = t.components().iter().map(|c| c.length).sum();
        assert!((total - t.perimeter()).abs() <= 1e-12 * t.perimeter());
    }
}
