//! The collision map by exact ray tracing, its derivative, the invariant
//! measure and orbit iteration.
//!
//! A phase point `(r, phi)` leaves the boundary point at arc-length `r` with
//! velocity `cos(phi) N - sin(phi) T`, where `T` is the unit tangent in the
//! direction of increasing `r` and `N` the inward normal. Positive `phi` means
//! the velocity is counterclockwise of the normal. Time reversal is
//! `(r, phi) -> (r, -phi)`.

use crate::geometry::{GeometryError, Location, Shape, Table, Vec2, EPS_CORNER};
use crate::rng::Rng;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, TAU};
use thiserror::Error;

/// Minimal flight parameter accepted for a new intersection.
pub const EPS_MIN: f64 = 1e-9;

/// Collisions with `cos(phi)` below this are flagged as grazing.
pub const EPS_GRAZE: f64 = 1e-8;

/// Angular slack when testing whether a circle hit lies on an arc.
const ARC_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub r: f64,
    pub phi: f64,
}

impl PhasePoint {
    pub fn new(r: f64, phi: f64) -> Self {
        Self { r, phi }
    }

    /// Same boundary point, reversed velocity.
    pub fn reversed(self) -> Self {
        Self {
            r: self.r,
            phi: -self.phi,
        }
    }
}

/// Post-collision state and the flight that led to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CollisionEvent {
    pub point: PhasePoint,
    pub position: Vec2,
    pub free_path: f64,
    pub component: usize,
    /// Signed curvature at the collision point.
    pub curvature: f64,
    pub grazing: bool,
    pub corner: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub dr: f64,
    pub dphi: f64,
}

impl TangentVector {
    pub fn new(dr: f64, dphi: f64) -> Self {
        Self { dr, dphi }
    }

    pub fn euclidean_norm(&self) -> f64 {
        self.dr.hypot(self.dphi)
    }

    pub fn normalized(&self) -> Self {
        let n = self.euclidean_norm();
        Self::new(self.dr / n, self.dphi / n)
    }

    /// Slope `dphi/dr`.
    pub fn slope(&self) -> f64 {
        self.dphi / self.dr
    }
}

/// 2x2 matrix `[[a, b], [c, d]]` acting on `(dr, dphi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mat2 {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Mat2 {
    pub const IDENTITY: Mat2 = Mat2 {
        a: 1.0,
        b: 0.0,
        c: 0.0,
        d: 1.0,
    };

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    pub fn apply(&self, v: TangentVector) -> TangentVector {
        TangentVector::new(
            self.a * v.dr + self.b * v.dphi,
            self.c * v.dr + self.d * v.dphi,
        )
    }

    /// `self * rhs`.
    pub fn mul(&self, rhs: &Mat2) -> Mat2 {
        Mat2 {
            a: self.a * rhs.a + self.b * rhs.c,
            b: self.a * rhs.b + self.b * rhs.d,
            c: self.c * rhs.a + self.d * rhs.c,
            d: self.c * rhs.b + self.d * rhs.d,
        }
    }

    pub fn to_rows(&self) -> [[f64; 2]; 2] {
        [[self.a, self.b], [self.c, self.d]]
    }

    /// Eigenvalues as complex pairs `(re, im)`.
    pub fn eigenvalues(&self) -> [(f64, f64); 2] {
        let tr = self.a + self.d;
        let disc = tr * tr / 4.0 - self.det();
        if disc >= 0.0 {
            let s = disc.sqrt();
            [(tr / 2.0 + s, 0.0), (tr / 2.0 - s, 0.0)]
        } else {
            let s = (-disc).sqrt();
            [(tr / 2.0, s), (tr / 2.0, -s)]
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum DynamicsError {
    #[error("corner hit at {:?} on component {}", .0.position, .0.component)]
    CornerHit(Box<CollisionEvent>),
    #[error("ray from r = {r} found no boundary intersection")]
    NoIntersection { r: f64 },
    #[error("near-grazing collision (cos phi = {cos_phi:e})")]
    NearGrazing { cos_phi: f64 },
    #[error("invalid phase point: {0}")]
    InvalidPoint(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Norm used for expansion factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// `|v|_p = cos(phi) |dr|`.
    #[default]
    P,
    /// `sqrt(dr^2 + dphi^2)`.
    Euclidean,
}

impl Metric {
    pub fn norm(&self, phi: f64, v: TangentVector) -> f64 {
        match self {
            Metric::P => phi.cos() * v.dr.abs(),
            Metric::Euclidean => v.euclidean_norm(),
        }
    }
}

/// Outgoing unit velocity of a phase point at `loc`.
pub fn velocity(loc: &Location, phi: f64) -> Vec2 {
    loc.normal * phi.cos() - loc.tangent * phi.sin()
}

/// Event describing the initial state (no flight yet).
pub fn initial_event(table: &Table, x: PhasePoint) -> Result<CollisionEvent, DynamicsError> {
    check_point(table, x)?;
    let loc = table.locate(x.r)?;
    Ok(CollisionEvent {
        point: x,
        position: loc.position,
        free_path: 0.0,
        component: loc.component,
        curvature: loc.curvature,
        grazing: x.phi.cos() < EPS_GRAZE,
        corner: loc.corner,
    })
}

fn check_point(table: &Table, x: PhasePoint) -> Result<(), DynamicsError> {
    if !(0.0..table.perimeter()).contains(&x.r) {
        return Err(DynamicsError::InvalidPoint(format!(
            "r = {} outside [0, {})",
            x.r,
            table.perimeter()
        )));
    }
    if !(x.phi.abs() <= FRAC_PI_2) {
        return Err(DynamicsError::InvalidPoint(format!(
            "phi = {} outside [-pi/2, pi/2]",
            x.phi
        )));
    }
    Ok(())
}

/// Whether angle `theta` (of a point on the circle) lies on the arc.
fn on_arc(theta: f64, start_angle: f64, sweep: f64) -> bool {
    let offset = ((theta - start_angle) * sweep.signum()).rem_euclid(TAU);
    offset <= sweep.abs() + ARC_SLACK || offset >= TAU - ARC_SLACK
}

/// Smallest admissible flight parameter to the shape, if any.
fn intersect(shape: &Shape, p: Vec2, d: Vec2, departing: bool) -> Option<f64> {
    match *shape {
        Shape::Segment { from, to } => {
            if departing {
                return None;
            }
            let e = to - from;
            let denom = d.cross(e);
            if denom == 0.0 {
                return None;
            }
            let w = from - p;
            let t = w.cross(e) / denom;
            let s = w.cross(d) / denom;
            (t > EPS_MIN && (-1e-12..=1.0 + 1e-12).contains(&s)).then_some(t)
        }
        Shape::Arc {
            center,
            radius,
            start_angle,
            sweep,
        } => {
            let w = p - center;
            let b = d.dot(w);
            let hit = |t: f64| on_arc((w + d * t).angle(), start_angle, sweep);
            if departing {
                // p lies on the circle: the roots are 0 and -2b
                let t = -2.0 * b;
                return (t > 0.0 && hit(t)).then_some(t);
            }
            let c = w.norm_sq() - radius * radius;
            let disc = b * b - c;
            if disc < 0.0 {
                return None;
            }
            let sq = disc.sqrt();
            // numerically stable pair of roots
            let q = -b - b.signum() * sq;
            let (mut t1, mut t2) = if q != 0.0 { (q, c / q) } else { (-b, -b) };
            if t1 > t2 {
                std::mem::swap(&mut t1, &mut t2);
            }
            [t1, t2].into_iter().find(|&t| t > EPS_MIN && hit(t))
        }
    }
}

/// One step of the collision map.
pub fn collision_map(table: &Table, x: PhasePoint) -> Result<CollisionEvent, DynamicsError> {
    check_point(table, x)?;
    let loc = table.locate(x.r)?;
    if loc.corner {
        return Err(DynamicsError::CornerHit(Box::new(CollisionEvent {
            point: x,
            position: loc.position,
            free_path: 0.0,
            component: loc.component,
            curvature: loc.curvature,
            grazing: false,
            corner: true,
        })));
    }
    let p = loc.position;
    let d = velocity(&loc, x.phi);
    let mut best: Option<(f64, usize)> = None;
    for c in table.components() {
        if let Some(t) = intersect(&c.shape, p, d, c.id == loc.component) {
            if best.map_or(true, |(bt, _)| t < bt) {
                best = Some((t, c.id));
            }
        }
    }
    let (t, id) = best.ok_or(DynamicsError::NoIntersection { r: x.r })?;
    let q = p + d * t;
    let comp = table.component(id);
    let s = comp.shape.arclength_of(q);
    let at_junction = comp.has_junctions && (s < EPS_CORNER || comp.length - s < EPS_CORNER);
    let hit = table.locate_local(id, s);
    let cos1 = -d.dot(hit.normal);
    let sin1 = -d.dot(hit.tangent);
    let phi1 = sin1.atan2(cos1.max(0.0));
    let event = CollisionEvent {
        point: PhasePoint::new(table.global_r(id, hit.local_s), phi1),
        position: hit.position,
        free_path: t,
        component: id,
        curvature: hit.curvature,
        grazing: cos1 < EPS_GRAZE,
        corner: at_junction,
    };
    if at_junction {
        return Err(DynamicsError::CornerHit(Box::new(event)));
    }
    Ok(event)
}

/// The collision preceding `x`, obtained by time reversal. The returned event
/// holds the preimage point with its original (forward) velocity; its
/// `free_path` is the flight from the preimage to `x`.
pub fn preimage(table: &Table, x: PhasePoint) -> Result<CollisionEvent, DynamicsError> {
    let mut ev = collision_map(table, x.reversed())?;
    ev.point = ev.point.reversed();
    Ok(ev)
}

/// Derivative of the collision map in `(r, phi)` coordinates, from the free
/// path `tau`, the signed curvatures at departure and arrival and the cosines
/// of the two reflection angles.
pub fn jacobian(tau: f64, k0: f64, k1: f64, cos0: f64, cos1: f64) -> Mat2 {
    let m = tau * k0 + cos0;
    Mat2 {
        a: -m / cos1,
        b: tau / cos1,
        c: k1 * m / cos1 + k0,
        d: -k1 * tau / cos1 - 1.0,
    }
}

/// Derivative for the step from a point with curvature `k0` and angle `phi0`
/// to the collision `ev`.
pub fn step_jacobian(k0: f64, phi0: f64, ev: &CollisionEvent) -> Result<Mat2, DynamicsError> {
    let cos1 = ev.point.phi.cos();
    if cos1 < EPS_GRAZE {
        return Err(DynamicsError::NearGrazing { cos_phi: cos1 });
    }
    Ok(jacobian(ev.free_path, k0, ev.curvature, phi0.cos(), cos1))
}

/// `D F(x)`.
pub fn tangent_map(table: &Table, x: PhasePoint) -> Result<Mat2, DynamicsError> {
    let k0 = table.locate(x.r)?.curvature;
    let ev = collision_map(table, x)?;
    step_jacobian(k0, x.phi, &ev)
}

/// Ratio of the norms of `D F(x) v` and `v`.
pub fn expansion_factor(
    table: &Table,
    x: PhasePoint,
    v: TangentVector,
    metric: Metric,
) -> Result<f64, DynamicsError> {
    let ev = collision_map(table, x)?;
    let k0 = table.locate(x.r)?.curvature;
    let m = step_jacobian(k0, x.phi, &ev)?;
    let n0 = metric.norm(x.phi, v);
    if !(n0 > 0.0) {
        return Err(DynamicsError::InvalidPoint(
            "tangent vector has zero norm".into(),
        ));
    }
    Ok(metric.norm(ev.point.phi, m.apply(v)) / n0)
}

/// A point distributed according to the normalized invariant measure
/// `cos(phi) dr dphi / (2 |dQ|)`.
pub fn sample_mu(table: &Table, rng: &mut Rng) -> PhasePoint {
    let r = rng.gen::<f64>() * table.perimeter();
    let u = 2.0 * rng.gen::<f64>() - 1.0;
    PhasePoint::new(r, u.asin())
}

/// Counts gathered by [`orbit`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitSummary {
    pub requested: u64,
    pub completed: u64,
    pub grazing: u64,
    pub component_hits: Vec<u64>,
    /// Set when the orbit stopped at a corner.
    pub truncated: bool,
    pub last: PhasePoint,
}

/// Iterates the collision map `n` times, calling `observer` after every
/// collision. A corner hit ends the orbit early and is reported, not raised.
pub fn orbit<F>(table: &Table, x0: PhasePoint, n: u64, mut observer: F) -> Result<OrbitSummary, DynamicsError>
where
    F: FnMut(&CollisionEvent),
{
    let mut summary = OrbitSummary {
        requested: n,
        completed: 0,
        grazing: 0,
        component_hits: vec![0; table.components().len()],
        truncated: false,
        last: x0,
    };
    let mut x = x0;
    for _ in 0..n {
        match collision_map(table, x) {
            Ok(ev) => {
                summary.completed += 1;
                summary.grazing += ev.grazing as u64;
                summary.component_hits[ev.component] += 1;
                observer(&ev);
                x = ev.point;
            }
            Err(DynamicsError::CornerHit(_)) => {
                summary.truncated = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    summary.last = x;
    Ok(summary)
}

/// Approximate unstable direction at `x`: a tangent vector with zero outgoing
/// wavefront curvature, placed `depth` collisions in the past and pushed
/// forward to `x`. Returned normalized with `dr > 0`.
pub fn unstable_direction(table: &Table, x: PhasePoint, depth: usize) -> Result<TangentVector, DynamicsError> {
    let mut chain = Vec::with_capacity(depth + 1);
    let k_x = table.locate(x.r)?.curvature;
    chain.push((x.phi, k_x, 0.0));
    let mut y = x;
    for _ in 0..depth {
        match preimage(table, y) {
            Ok(ev) => {
                // free path from the preimage to its successor y
                chain.last_mut().unwrap().2 = ev.free_path;
                chain.push((ev.point.phi, ev.curvature, 0.0));
                y = ev.point;
            }
            Err(DynamicsError::CornerHit(_)) => break,
            Err(e) => return Err(e),
        }
    }
    let (_, k_far, _) = *chain.last().unwrap();
    let mut v = TangentVector::new(1.0, k_far);
    for i in (1..chain.len()).rev() {
        let (phi0, k0, _) = chain[i];
        let (phi1, k1, tau) = chain[i - 1];
        let cos1 = phi1.cos();
        if cos1 < EPS_GRAZE {
            return Err(DynamicsError::NearGrazing { cos_phi: cos1 });
        }
        v = jacobian(tau, k0, k1, phi0.cos(), cos1).apply(v).normalized();
    }
    let v = v.normalized();
    Ok(if v.dr < 0.0 {
        TangentVector::new(-v.dr, -v.dphi)
    } else {
        v
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::*;
    use crate::rng::stream;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn disc() -> Table {
        build_custom_disc(1.0).unwrap()
    }

    fn circle_distance(a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(TAU);
        d.min(TAU - d)
    }

    #[test]
    fn disc_diameter() {
        let ev = collision_map(&disc(), PhasePoint::new(0.0, 0.0)).unwrap();
        assert!((ev.point.r - PI).abs() < 1e-12);
        assert!(ev.point.phi.abs() < 1e-12);
        assert!((ev.free_path - 2.0).abs() < 1e-12);
    }

    #[test]
    fn disc_chord() {
        let ev = collision_map(&disc(), PhasePoint::new(0.0, FRAC_PI_4)).unwrap();
        assert!((ev.free_path - 2f64.sqrt()).abs() < 1e-12);
        assert!((ev.point.phi - FRAC_PI_4).abs() < 1e-12);
        assert!((circle_distance(ev.point.r, 0.0) - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn radial_hit_on_scatterer() {
        let t = build_semidispersing(
            1.0,
            1.0,
            &[Scatterer::Disc {
                center: Vec2::new(0.5, 0.5),
                radius: 0.25,
            }],
        )
        .unwrap();
        let ev = collision_map(&t, PhasePoint::new(0.5, 0.0)).unwrap();
        assert_eq!(ev.component, 4);
        assert!((ev.position - Vec2::new(0.5, 0.25)).norm() < 1e-12);
        assert!((ev.free_path - 0.25).abs() < 1e-12);
        assert!(ev.point.phi.abs() < 1e-12);
        // and back down to where it started
        let back = collision_map(&t, ev.point).unwrap();
        assert!((back.point.r - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stadium_axial_period_two() {
        let t = build_stadium(2.0, 1.0).unwrap();
        // apex of the right arc: bottom segment (2) + quarter circle
        let apex = 2.0 + FRAC_PI_2;
        let mut taus = Vec::new();
        let s = orbit(&t, PhasePoint::new(apex, 0.0), 6, |ev| taus.push(ev.free_path)).unwrap();
        assert_eq!(s.completed, 6);
        assert!(taus.iter().all(|&tau| (tau - 4.0).abs() < 1e-12));
        assert!((s.last.r - apex).abs() < 1e-9);
    }

    #[test]
    fn circle_conserves_phi() {
        let x0 = PhasePoint::new(0.0, 0.7854);
        let mut phis = Vec::new();
        orbit(&disc(), x0, 8, |ev| phis.push(ev.point.phi)).unwrap();
        assert!(phis.iter().all(|&p| (p - x0.phi).abs() < 1e-9));
    }

    #[test]
    fn unit_circle_jacobian() {
        let m = tangent_map(&disc(), PhasePoint::new(0.0, 0.0)).unwrap();
        let expect = [[1.0, 2.0], [0.0, 1.0]];
        for (row, erow) in m.to_rows().iter().zip(expect) {
            for (v, e) in row.iter().zip(erow) {
                assert!((v - e).abs() < 1e-12);
            }
        }
        for (re, im) in m.eigenvalues() {
            assert!((re.hypot(im) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_flat_determinant_is_one() {
        let t = build_custom_rectangle(2.0, 1.0).unwrap();
        let x = PhasePoint::new(0.7, 0.3);
        let ev = collision_map(&t, x).unwrap();
        assert!((ev.point.phi.abs() - 0.3).abs() < 1e-12);
        let m = tangent_map(&t, x).unwrap();
        assert!((m.det().abs() - 1.0).abs() < 1e-12);
        // flat-flat shear: p-expansion of (1, 0) is exactly 1
        let f = expansion_factor(&t, x, TangentVector::new(1.0, 0.0), Metric::P).unwrap();
        assert!((f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sample_mu_is_deterministic_per_stream() {
        let t = disc();
        let mut r1 = stream(1, 2);
        let mut r2 = stream(1, 2);
        for _ in 0..100 {
            assert_eq!(sample_mu(&t, &mut r1), sample_mu(&t, &mut r2));
        }
    }

    #[test]
    fn preimage_inverts_the_map() {
        let t = build_stadium(2.0, 1.0).unwrap();
        let mut rng = stream(5, 0);
        for _ in 0..1000 {
            let x = sample_mu(&t, &mut rng);
            let Ok(ev) = collision_map(&t, x) else { continue };
            let back = preimage(&t, ev.point).unwrap();
            assert!((back.position - t.locate(x.r).unwrap().position).norm() < 1e-9);
            assert!((back.point.phi - x.phi).abs() < 1e-9);
        }
    }

    #[test]
    fn unstable_direction_on_dispersing_has_positive_slope() {
        let t = build_semidispersing(
            1.0,
            1.0,
            &[Scatterer::Disc {
                center: Vec2::new(0.5, 0.5),
                radius: 0.25,
            }],
        )
        .unwrap();
        let mut rng = stream(9, 0);
        let mut checked = 0;
        while checked < 50 {
            let x = sample_mu(&t, &mut rng);
            if t.component_at(x.r) != 4 {
                continue;
            }
            let Ok(v) = unstable_direction(&t, x, 20) else { continue };
            // after the reflection off a scatterer the front is dispersing:
            // B+ = (K - s) / cos(phi) > 0 means s < K
            assert!(v.slope() < t.component(4).curvature());
            checked += 1;
        }
    }

    fn wrap(d: f64, per: f64) -> f64 {
        d - per * (d / per).round()
    }

    /// Central differences of the collision map, independent of [`jacobian`].
    fn finite_difference(t: &Table, x: PhasePoint, h: f64) -> Option<Mat2> {
        let f = |r: f64, phi: f64| collision_map(t, PhasePoint::new(r.rem_euclid(t.perimeter()), phi)).ok();
        let (rp, rm) = (f(x.r + h, x.phi)?, f(x.r - h, x.phi)?);
        let (pp, pm) = (f(x.r, x.phi + h)?, f(x.r, x.phi - h)?);
        let c = collision_map(t, x).ok()?;
        if [rp, rm, pp, pm].iter().any(|e| e.component != c.component) {
            return None;
        }
        let per = t.perimeter();
        Some(Mat2 {
            a: wrap(rp.point.r - rm.point.r, per) / (2.0 * h),
            b: wrap(pp.point.r - pm.point.r, per) / (2.0 * h),
            c: (rp.point.phi - rm.point.phi) / (2.0 * h),
            d: (pp.point.phi - pm.point.phi) / (2.0 * h),
        })
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let tables = [
            build_stadium(2.0, 1.0).unwrap(),
            build_semidispersing(1.0, 1.0, &[Scatterer::Disc { center: Vec2::new(0.5, 0.5), radius: 0.25 }]).unwrap(),
            build_flower(&FlowerSpec::regular(3, 1.0, 0.5, 0.8 * PI).unwrap()).unwrap(),
        ];
        for t in &tables {
            let mut rng = stream(3, 0);
            let mut n = 0;
            while n < 200 {
                let x = sample_mu(t, &mut rng);
                if x.phi.cos() < 0.1 {
                    continue;
                }
                let Ok(ev) = collision_map(t, x) else { continue };
                if ev.point.phi.cos() < 0.1 {
                    continue;
                }
                let Some(fd) = finite_difference(t, x, 1e-7) else { continue };
                let m = tangent_map(t, x).unwrap();
                let scale = m.a.abs().max(m.b.abs()).max(m.c.abs()).max(m.d.abs());
                for (u, v) in [(m.a, fd.a), (m.b, fd.b), (m.c, fd.c), (m.d, fd.d)] {
                    assert!((u - v).abs() < 1e-5 * scale.max(1.0), "{m:?} vs {fd:?} at {x:?}");
                }
                assert!((m.det().abs() * ev.point.phi.cos() - x.phi.cos()).abs() < 1e-9 * x.phi.cos());
                n += 1;
            }
        }
    }
}
