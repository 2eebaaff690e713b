//! Constructors for the supported table families.

use super::{validate, Family, GeometryError, Shape, Table, Vec2};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI, TAU};

/// Smallest admissible scatterer curvature.
const MIN_DISPERSING_CURVATURE: f64 = 1e-6;

/// Boundary samples per scatterer when checking arc-gon clearances.
const CLEARANCE_SAMPLES: usize = 4096;

fn positive(name: &str, v: f64) -> Result<(), GeometryError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(GeometryError::InvalidParameter(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

/// Straight stadium: two half discs of radius `arc_radius` joined by flat
/// sides of length `flat_length`. Centered at the origin, long axis along x.
pub fn build_stadium(flat_length: f64, arc_radius: f64) -> Result<Table, GeometryError> {
    positive("flat-length", flat_length)?;
    positive("arc-radius", arc_radius)?;
    let (h, r) = (flat_length / 2.0, arc_radius);
    let shapes = vec![
        Shape::Segment {
            from: Vec2::new(-h, -r),
            to: Vec2::new(h, -r),
        },
        Shape::Arc {
            center: Vec2::new(h, 0.0),
            radius: r,
            start_angle: -FRAC_PI_2,
            sweep: PI,
        },
        Shape::Segment {
            from: Vec2::new(h, r),
            to: Vec2::new(-h, r),
        },
        Shape::Arc {
            center: Vec2::new(-h, 0.0),
            radius: r,
            start_angle: FRAC_PI_2,
            sweep: PI,
        },
    ];
    Table::from_loops(Family::StraightStadium, vec![shapes])
}

/// Drive-belt table: convex hull of a big circle of radius `big_radius` at the
/// origin and a small circle of radius `small_radius` at `(center_distance, 0)`.
pub fn build_drivebelt(
    big_radius: f64,
    small_radius: f64,
    center_distance: f64,
) -> Result<Table, GeometryError> {
    positive("big-radius", big_radius)?;
    positive("small-radius", small_radius)?;
    positive("center-distance", center_distance)?;
    if big_radius == small_radius {
        return Err(GeometryError::InvalidParameter(
            "equal radii give a straight stadium; use build_stadium".into(),
        ));
    }
    if big_radius < small_radius {
        return Err(GeometryError::InvalidParameter(format!(
            "big-radius {big_radius} must exceed small-radius {small_radius}"
        )));
    }
    let diff = big_radius - small_radius;
    if center_distance <= diff {
        return Err(GeometryError::TangentConstruction(format!(
            "center-distance {center_distance} must exceed big-radius - small-radius = {diff}"
        )));
    }
    let theta = (diff / center_distance).acos();
    let c1 = Vec2::new(0.0, 0.0);
    let c2 = Vec2::new(center_distance, 0.0);
    let shapes = vec![
        Shape::Arc {
            center: c2,
            radius: small_radius,
            start_angle: -theta,
            sweep: 2.0 * theta,
        },
        Shape::Segment {
            from: c2 + Vec2::unit(theta) * small_radius,
            to: c1 + Vec2::unit(theta) * big_radius,
        },
        Shape::Arc {
            center: c1,
            radius: big_radius,
            start_angle: theta,
            sweep: TAU - 2.0 * theta,
        },
        Shape::Segment {
            from: c1 + Vec2::unit(-theta) * big_radius,
            to: c2 + Vec2::unit(-theta) * small_radius,
        },
    ];
    Table::from_loops(Family::DriveBelt, vec![shapes])
}

/// A focusing arc of a flower table, traversed counterclockwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Petal {
    pub center: Vec2,
    pub radius: f64,
    pub start_angle: f64,
    pub extent: f64,
}

/// Boundary piece joining the end of one petal to the start of the next.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Wall {
    /// Minor circular arc of the given radius bulging into the domain.
    Dispersing { radius: f64 },
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowerSpec {
    pub petals: Vec<Petal>,
    /// `walls[i]` joins petal `i` to petal `i + 1` (cyclically).
    pub walls: Vec<Wall>,
    /// Downgrades the half-circle rule to a warning.
    #[serde(default)]
    pub allow_large_arcs: bool,
}

impl FlowerSpec {
    /// `n` congruent petals of radius `petal_radius` and angular extent
    /// `extent`, centered on a ring of radius `ring_radius` and facing
    /// outward, joined by dispersing walls tangent to neighbouring petals.
    pub fn regular(
        n: usize,
        ring_radius: f64,
        petal_radius: f64,
        extent: f64,
    ) -> Result<Self, GeometryError> {
        if n < 2 {
            return Err(GeometryError::InvalidParameter(
                "a flower needs at least two petals".into(),
            ));
        }
        positive("ring-radius", ring_radius)?;
        positive("petal-radius", petal_radius)?;
        positive("extent", extent)?;
        let half_gap = PI / n as f64;
        let excess = extent / 2.0 - half_gap;
        if !(excess > 0.0) || extent >= TAU {
            return Err(GeometryError::InvalidParameter(format!(
                "petal extent must lie in (2pi/n, 2pi) for tangent walls, got {extent}"
            )));
        }
        let wall_radius = ring_radius * half_gap.sin() / excess.sin() - petal_radius;
        if !(wall_radius > 0.0) {
            return Err(GeometryError::InvalidParameter(format!(
                "tangent wall radius is not positive ({wall_radius}); petals too large for the ring"
            )));
        }
        let petals = (0..n)
            .map(|k| {
                let alpha = TAU * k as f64 / n as f64;
                Petal {
                    center: Vec2::unit(alpha) * ring_radius,
                    radius: petal_radius,
                    start_angle: alpha - extent / 2.0,
                    extent,
                }
            })
            .collect();
        Ok(Self {
            petals,
            walls: vec![
                Wall::Dispersing {
                    radius: wall_radius
                };
                n
            ],
            allow_large_arcs: false,
        })
    }

    pub fn with_large_arcs(mut self, allow: bool) -> Self {
        self.allow_large_arcs = allow;
        self
    }

    /// Replaces every wall by a dispersing arc of the given radius. Radii
    /// above the tangent value turn the petal junctions into corners; smaller
    /// ones cut into the petal discs and fail validation.
    pub fn with_wall_radius(mut self, radius: f64) -> Self {
        self.walls = vec![Wall::Dispersing { radius }; self.walls.len()];
        self
    }
}

/// Minor arc from `a` to `b` bulging to the left of the chord `a -> b`,
/// traversed clockwise about its center.
fn dispersing_arc(a: Vec2, b: Vec2, radius: f64) -> Result<Shape, GeometryError> {
    let chord = b - a;
    let half = chord.norm() / 2.0;
    if !(half > 0.0) {
        return Err(GeometryError::InvalidParameter(
            "arc endpoints coincide".into(),
        ));
    }
    if radius < half {
        return Err(GeometryError::InvalidParameter(format!(
            "arc radius {radius} shorter than half the chord {half}"
        )));
    }
    let h = (radius * radius - half * half).max(0.0).sqrt();
    let right = -chord.normalized().perp();
    let center = (a + b) * 0.5 + right * h;
    let sweep = -2.0 * (half / radius).min(1.0).asin();
    Ok(Shape::Arc {
        center,
        radius,
        start_angle: (a - center).angle(),
        sweep,
    })
}

/// Flower table from petals and walls. Validation of the flower hypotheses
/// runs on the result; violations other than an explicitly allowed large arc
/// are returned as errors.
pub fn build_flower(spec: &FlowerSpec) -> Result<Table, GeometryError> {
    let n = spec.petals.len();
    if n == 0 || spec.walls.len() != n {
        return Err(GeometryError::InvalidParameter(format!(
            "flower needs one wall per petal ({} petals, {} walls)",
            n,
            spec.walls.len()
        )));
    }
    let mut shapes = Vec::with_capacity(2 * n);
    for (i, petal) in spec.petals.iter().enumerate() {
        positive("petal radius", petal.radius)?;
        positive("petal extent", petal.extent)?;
        let arc = Shape::Arc {
            center: petal.center,
            radius: petal.radius,
            start_angle: petal.start_angle,
            sweep: petal.extent,
        };
        let next = &spec.petals[(i + 1) % n];
        let next_start = next.center + Vec2::unit(next.start_angle) * next.radius;
        shapes.push(arc);
        let wall = match spec.walls[i] {
            Wall::Dispersing { radius } => {
                positive("wall radius", radius)?;
                if 1.0 / radius < MIN_DISPERSING_CURVATURE {
                    return Err(GeometryError::Curvature(format!(
                        "wall {i} has radius {radius}"
                    )));
                }
                dispersing_arc(arc.end(), next_start, radius)?
            }
            Wall::Flat => Shape::Segment {
                from: arc.end(),
                to: next_start,
            },
        };
        shapes.push(wall);
    }
    let table = Table::from_loops(Family::Flower, vec![shapes])?
        .with_large_arcs_allowed(spec.allow_large_arcs);
    let report = validate(&table);
    for v in &report.violations {
        let err = match v.rule.as_str() {
            "half-circle" if spec.allow_large_arcs => continue,
            "half-circle" => {
                let c = v.component.unwrap_or(0);
                GeometryError::HalfCircle {
                    component: c,
                    extent: table.component(c).extent(),
                }
            }
            "containment" => GeometryError::Containment {
                component: v.component.unwrap_or(0),
            },
            "cusp" => {
                let a = v.component.unwrap_or(0);
                GeometryError::Cusp {
                    a,
                    b: table.next_in_loop(a),
                }
            }
            _ => GeometryError::InvalidParameter(v.message.clone()),
        };
        return Err(err);
    }
    Ok(table)
}

/// A strictly convex scatterer placed inside the rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scatterer {
    Disc { center: Vec2, radius: f64 },
    /// Convex polygon (vertices counterclockwise) whose edges are replaced by
    /// outward-bulging arcs of a common radius.
    ArcGon { vertices: Vec<Vec2>, radius: f64 },
}

impl Scatterer {
    /// Boundary traversed clockwise, so that the billiard domain is on the left.
    fn shapes(&self) -> Result<Vec<Shape>, GeometryError> {
        match self {
            Scatterer::Disc { center, radius } => {
                positive("disc radius", *radius)?;
                if 1.0 / radius < MIN_DISPERSING_CURVATURE {
                    return Err(GeometryError::Curvature(format!(
                        "disc radius {radius}"
                    )));
                }
                Ok(vec![Shape::Arc {
                    center: *center,
                    radius: *radius,
                    start_angle: 0.0,
                    sweep: -TAU,
                }])
            }
            Scatterer::ArcGon { vertices, radius } => {
                positive("arc-gon radius", *radius)?;
                if 1.0 / radius < MIN_DISPERSING_CURVATURE {
                    return Err(GeometryError::Curvature(format!(
                        "arc-gon radius {radius}"
                    )));
                }
                let m = vertices.len();
                if m < 2 {
                    return Err(GeometryError::InvalidParameter(
                        "arc-gon needs at least two vertices".into(),
                    ));
                }
                if m > 2 {
                    for i in 0..m {
                        let (a, b, c) = (vertices[i], vertices[(i + 1) % m], vertices[(i + 2) % m]);
                        if (b - a).cross(c - b) <= 0.0 {
                            return Err(GeometryError::InvalidParameter(
                                "arc-gon vertices must form a strictly convex counterclockwise polygon"
                                    .into(),
                            ));
                        }
                    }
                }
                let mut shapes = Vec::with_capacity(m);
                for i in 0..m {
                    let a = vertices[(m - i) % m];
                    let b = vertices[(2 * m - i - 1) % m];
                    shapes.push(dispersing_arc(a, b, *radius)?);
                }
                // strict convexity at the vertices
                let k = shapes.len();
                for i in 0..k {
                    let t_in = shapes[i].tangent_at(shapes[i].length());
                    let t_out = shapes[(i + 1) % k].tangent_at(0.0);
                    if t_in.cross(t_out) > 1e-12 {
                        return Err(GeometryError::InvalidParameter(
                            "arc-gon is not convex: arcs bulge past the vertex angle".into(),
                        ));
                    }
                }
                Ok(shapes)
            }
        }
    }
}

/// Exact distance from `p` to a shape.
fn distance_to_shape(shape: &Shape, p: Vec2) -> f64 {
    let s = shape.arclength_of(p);
    shape.point_at(s).distance(p)
}

/// Axis-aligned bounding box `(min, max)` of a shape, exact for arcs.
fn bounding_box(shape: &Shape) -> (Vec2, Vec2) {
    let mut lo = shape.start();
    let mut hi = lo;
    let mut add = |p: Vec2| {
        lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
    };
    add(shape.end());
    if let Shape::Arc {
        center,
        radius,
        start_angle,
        sweep,
    } = *shape
    {
        for q in 0..4 {
            let axis = q as f64 * FRAC_PI_2;
            let offset = ((axis - start_angle) * sweep.signum()).rem_euclid(TAU);
            if offset <= sweep.abs() {
                add(center + Vec2::unit(axis) * radius);
            }
        }
    }
    (lo, hi)
}

fn sample_boundary(shapes: &[Shape], count: usize) -> (Vec<Vec2>, f64) {
    let total: f64 = shapes.iter().map(Shape::length).sum();
    let ds = total / count as f64;
    let mut pts = Vec::with_capacity(count + shapes.len());
    for s in shapes {
        let k = (s.length() / ds).ceil().max(1.0) as usize;
        for j in 0..k {
            pts.push(s.point_at(s.length() * j as f64 / k as f64));
        }
    }
    (pts, ds)
}

fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Clearance check between two scatterers; `Err` describes the overlap.
fn check_pair(
    i: usize,
    j: usize,
    a: &(Scatterer, Vec<Shape>),
    b: &(Scatterer, Vec<Shape>),
) -> Result<(), String> {
    if let (
        Scatterer::Disc {
            center: c1,
            radius: r1,
        },
        Scatterer::Disc {
            center: c2,
            radius: r2,
        },
    ) = (&a.0, &b.0)
    {
        let gap = c1.distance(*c2) - r1 - r2;
        return if gap > 0.0 {
            Ok(())
        } else {
            Err(format!(
                "scatterers {i} and {j} intersect or touch (gap {gap:.3e})"
            ))
        };
    }
    let (pa, da) = sample_boundary(&a.1, CLEARANCE_SAMPLES);
    let (pb, db) = sample_boundary(&b.1, CLEARANCE_SAMPLES);
    let min_ab = pa
        .iter()
        .map(|&p| {
            b.1.iter()
                .map(|s| distance_to_shape(s, p))
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min);
    let nested = point_in_polygon(pa[0], &pb) || point_in_polygon(pb[0], &pa);
    if nested || min_ab <= da.max(db) {
        Err(format!(
            "scatterers {i} and {j} intersect or touch (sampled gap {min_ab:.3e})"
        ))
    } else {
        Ok(())
    }
}

/// Rectangle `[0, width] x [0, height]` containing strictly convex scatterers.
pub fn build_semidispersing(
    rect_width: f64,
    rect_height: f64,
    scatterers: &[Scatterer],
) -> Result<Table, GeometryError> {
    positive("rect-width", rect_width)?;
    positive("rect-height", rect_height)?;
    let mut loops = vec![rectangle_shapes(rect_width, rect_height)];
    let mut built = Vec::with_capacity(scatterers.len());
    for (i, sc) in scatterers.iter().enumerate() {
        let shapes = sc.shapes()?;
        let (mut lo, mut hi) = bounding_box(&shapes[0]);
        for s in &shapes[1..] {
            let (l, h) = bounding_box(s);
            lo = Vec2::new(lo.x.min(l.x), lo.y.min(l.y));
            hi = Vec2::new(hi.x.max(h.x), hi.y.max(h.y));
        }
        let gap = lo.x.min(lo.y).min(rect_width - hi.x).min(rect_height - hi.y);
        if !(gap > 0.0) {
            return Err(GeometryError::Overlap(format!(
                "scatterer {i} is not strictly inside the rectangle (gap {gap:.3e})"
            )));
        }
        built.push((sc.clone(), shapes));
    }
    for i in 0..built.len() {
        for j in i + 1..built.len() {
            check_pair(i, j, &built[i], &built[j]).map_err(GeometryError::Overlap)?;
        }
    }
    loops.extend(built.into_iter().map(|(_, s)| s));
    Table::from_loops(Family::SemiDispersing, loops)
}

fn rectangle_shapes(w: f64, h: f64) -> Vec<Shape> {
    polygon_shapes(&[
        Vec2::new(0.0, 0.0),
        Vec2::new(w, 0.0),
        Vec2::new(w, h),
        Vec2::new(0.0, h),
    ])
}

fn polygon_shapes(vertices: &[Vec2]) -> Vec<Shape> {
    let n = vertices.len();
    (0..n)
        .map(|i| Shape::Segment {
            from: vertices[i],
            to: vertices[(i + 1) % n],
        })
        .collect()
}

/// Disc of the given radius centered at the origin; `r = 0` is the point `(radius, 0)`.
pub fn build_custom_disc(radius: f64) -> Result<Table, GeometryError> {
    positive("radius", radius)?;
    Table::from_loops(
        Family::Custom,
        vec![vec![Shape::Arc {
            center: Vec2::new(0.0, 0.0),
            radius,
            start_angle: 0.0,
            sweep: TAU,
        }]],
    )
}

/// Rectangle `[0, width] x [0, height]` with no scatterers.
pub fn build_custom_rectangle(width: f64, height: f64) -> Result<Table, GeometryError> {
    positive("width", width)?;
    positive("height", height)?;
    Table::from_loops(Family::Custom, vec![rectangle_shapes(width, height)])
}

/// Polygon with counterclockwise vertices.
pub fn build_custom_polygon(vertices: &[Vec2]) -> Result<Table, GeometryError> {
    if vertices.len() < 3 {
        return Err(GeometryError::InvalidParameter(
            "polygon needs at least three vertices".into(),
        ));
    }
    Table::from_loops(Family::Custom, vec![polygon_shapes(vertices)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CurvatureClass;

    #[test]
    fn stadium_mensuration() {
        let t = build_stadium(2.0, 1.0).unwrap();
        assert!((t.perimeter() - (4.0 + TAU)).abs() < 1e-12);
        assert!((t.area() - (4.0 + PI)).abs() < 1e-12);
        assert!(t.closure_residual() < 1e-12);
        assert!(build_stadium(0.0, 1.0).is_err());
        assert!(build_stadium(2.0, -1.0).is_err());
    }

    #[test]
    fn stadium_is_tangent_at_junctions() {
        let t = build_stadium(2.0, 1.0).unwrap();
        for c in t.components() {
            let next = t.component(t.next_in_loop(c.id));
            let t_in = c.shape.tangent_at(c.length);
            let t_out = next.shape.tangent_at(0.0);
            assert!((t_in - t_out).norm() < 1e-12);
            if c.is_arc() {
                assert!((c.extent() - PI).abs() < 1e-15);
            }
        }
    }

    /// Tangent angle found by bisection on the tangency condition
    /// `R1 - D cos(theta) = R2`, independent of the closed form.
    fn bisect_tangent_angle(r1: f64, r2: f64, d: f64) -> f64 {
        let (mut lo, mut hi) = (0.0_f64, PI);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if r1 - d * mid.cos() < r2 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn drivebelt_big_arc_extent() {
        let t = build_drivebelt(1.0, 0.5, 2.0).unwrap();
        let theta = bisect_tangent_angle(1.0, 0.5, 2.0);
        let expected = TAU - 2.0 * theta;
        let big: Vec<_> = t.components().iter().filter(|c| c.extent() > PI).collect();
        assert_eq!(big.len(), 1);
        assert!((big[0].extent() - expected).abs() < 1e-12);
        assert!((big[0].extent() - 3.6469).abs() < 1e-3);
        // tangency of the segments
        for c in t.components() {
            let next = t.component(t.next_in_loop(c.id));
            assert!((c.shape.tangent_at(c.length) - next.shape.tangent_at(0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn drivebelt_rejections() {
        assert!(matches!(
            build_drivebelt(1.0, 1.0, 3.0),
            Err(GeometryError::InvalidParameter(_))
        ));
        assert!(matches!(
            build_drivebelt(1.0, 0.5, 0.4),
            Err(GeometryError::TangentConstruction(_))
        ));
    }

    #[test]
    fn semidispersing_unit_square_disc() {
        let t = build_semidispersing(
            1.0,
            1.0,
            &[Scatterer::Disc {
                center: Vec2::new(0.5, 0.5),
                radius: 0.25,
            }],
        )
        .unwrap();
        assert_eq!(t.components().len(), 5);
        assert!((t.perimeter() - (4.0 + FRAC_PI_2)).abs() < 1e-12);
        assert!((t.area() - (1.0 - PI / 16.0)).abs() < 1e-12);
    }

    #[test]
    fn semidispersing_overlap_errors() {
        let discs = [
            Scatterer::Disc {
                center: Vec2::new(0.3, 0.5),
                radius: 0.25,
            },
            Scatterer::Disc {
                center: Vec2::new(0.7, 0.5),
                radius: 0.25,
            },
        ];
        assert!(matches!(
            build_semidispersing(1.0, 1.0, &discs),
            Err(GeometryError::Overlap(_))
        ));
        let touching_wall = [Scatterer::Disc {
            center: Vec2::new(0.25, 0.5),
            radius: 0.25,
        }];
        assert!(matches!(
            build_semidispersing(1.0, 1.0, &touching_wall),
            Err(GeometryError::Overlap(_))
        ));
    }

    #[test]
    fn arcgon_scatterer() {
        let tri = Scatterer::ArcGon {
            vertices: vec![
                Vec2::new(0.4, 0.4),
                Vec2::new(0.6, 0.4),
                Vec2::new(0.5, 0.57),
            ],
            radius: 0.3,
        };
        let t = build_semidispersing(1.0, 1.0, &[tri]).unwrap();
        assert_eq!(t.components().len(), 7);
        for c in &t.components()[4..] {
            assert_eq!(c.class, CurvatureClass::Dispersing);
            assert!((c.curvature() - 1.0 / 0.3).abs() < 1e-12);
        }
        let poly_area = 0.5 * 0.2 * 0.17;
        assert!(t.area() < 1.0 - poly_area);
    }

    #[test]
    fn arcgon_overlapping_disc_rejected() {
        let sc = [
            Scatterer::ArcGon {
                vertices: vec![
                    Vec2::new(0.2, 0.2),
                    Vec2::new(0.5, 0.2),
                    Vec2::new(0.5, 0.5),
                    Vec2::new(0.2, 0.5),
                ],
                radius: 0.4,
            },
            Scatterer::Disc {
                center: Vec2::new(0.7, 0.35),
                radius: 0.18,
            },
        ];
        assert!(matches!(
            build_semidispersing(1.0, 1.0, &sc),
            Err(GeometryError::Overlap(_))
        ));
    }

    #[test]
    fn regular_flower_is_closed_and_tangent() {
        let spec = FlowerSpec::regular(3, 1.0, 0.5, 0.8 * PI).unwrap();
        let t = build_flower(&spec).unwrap();
        assert_eq!(t.components().len(), 6);
        assert!(t.closure_residual() < 1e-12);
        for c in t.components() {
            let next = t.component(t.next_in_loop(c.id));
            assert!((c.shape.tangent_at(c.length) - next.shape.tangent_at(0.0)).norm() < 1e-9);
        }
    }

    #[test]
    fn flower_wall_radius_sets_junctions() {
        let spec = FlowerSpec::regular(3, 1.0, 0.5, 0.8 * PI).unwrap();
        let t = build_flower(&spec.clone().with_wall_radius(8.0)).unwrap();
        let arc = t.component(0);
        let wall = t.component(1);
        let bend = arc.shape.tangent_at(arc.length).cross(wall.shape.tangent_at(0.0));
        // the wall leaves the petal circle on the outside
        assert!(bend < -1e-3, "{bend}");
        assert!(matches!(
            build_flower(&spec.with_wall_radius(2.0)),
            Err(GeometryError::Containment { .. })
        ));
    }

    #[test]
    fn large_arc_flower_needs_flag() {
        let spec = FlowerSpec::regular(3, 1.0, 0.5, 1.1 * PI).unwrap();
        assert!(matches!(
            build_flower(&spec),
            Err(GeometryError::HalfCircle { .. })
        ));
        assert!(build_flower(&spec.with_large_arcs(true)).is_ok());
    }

    #[test]
    fn custom_tables() {
        let d = build_custom_disc(1.0).unwrap();
        assert!((d.perimeter() - TAU).abs() < 1e-15);
        assert!((d.area() - PI).abs() < 1e-12);
        let s = build_custom_rectangle(1.0, 1.0).unwrap();
        assert!((s.area() - 1.0).abs() < 1e-15);
    }
}
