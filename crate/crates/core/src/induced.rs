//! Induced first-return maps, return times and dynamic cell classification.

use crate::dynamics::{
    collision_map, initial_event, preimage, step_jacobian, CollisionEvent, DynamicsError, Mat2,
    PhasePoint,
};
use crate::geometry::{CurvatureClass, Family, Table};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Default cap on the length of one excursion.
pub const DEFAULT_R_MAX: u64 = 1_000_000;

/// Which collisions form the subset `M`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsetSpec {
    /// Collisions with dispersing components (semi-dispersing tables).
    ScattererCollisions,
    /// Dispersing collisions plus the first collision of every run on a
    /// focusing arc (flowers).
    FirstArcCollision,
    /// Only the first collision of every run on a focusing arc (stadia and
    /// drive-belts).
    FirstArcCollisionArcsOnly,
}

impl fmt::Display for SubsetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SubsetSpec::ScattererCollisions => "scatterer-collisions",
            SubsetSpec::FirstArcCollision => "first-arc-collision",
            SubsetSpec::FirstArcCollisionArcsOnly => "first-arc-collision-arcs-only",
        })
    }
}

impl SubsetSpec {
    /// The rule matching a table family, if any.
    pub fn for_family(family: Family) -> Option<Self> {
        match family {
            Family::SemiDispersing => Some(SubsetSpec::ScattererCollisions),
            Family::Flower => Some(SubsetSpec::FirstArcCollision),
            Family::StraightStadium | Family::DriveBelt => {
                Some(SubsetSpec::FirstArcCollisionArcsOnly)
            }
            Family::Custom => None,
        }
    }

    /// Errors unless the rule belongs to the table's family and `M` is non-empty.
    pub fn check_compatible(&self, table: &Table) -> Result<(), InducedError> {
        if SubsetSpec::for_family(table.family()) != Some(*self) {
            return Err(InducedError::Incompatible(format!(
                "rule {self} does not apply to a {} table",
                table.family()
            )));
        }
        let nonempty = match self {
            SubsetSpec::ScattererCollisions => table.dispersing_length() > 0.0,
            _ => table.focusing_arcs().next().is_some(),
        };
        if !nonempty {
            return Err(InducedError::Incompatible(format!(
                "rule {self} selects an empty subset of this table"
            )));
        }
        Ok(())
    }

    pub fn needs_prev(&self) -> bool {
        !matches!(self, SubsetSpec::ScattererCollisions)
    }

    /// Membership from the component of the point and of its preimage.
    pub fn contains(&self, table: &Table, component: usize, prev_component: Option<usize>) -> Result<bool, InducedError> {
        let class = table.component(component).class;
        match self {
            SubsetSpec::ScattererCollisions => Ok(class == CurvatureClass::Dispersing),
            SubsetSpec::FirstArcCollision if class == CurvatureClass::Dispersing => Ok(true),
            _ => {
                if class != CurvatureClass::Focusing {
                    return Ok(false);
                }
                let prev = prev_component.ok_or(InducedError::MissingPrev)?;
                Ok(prev != component)
            }
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum InducedError {
    #[error("subset rule incompatible with table: {0}")]
    Incompatible(String),
    #[error("first-arc rules need the preimage of the point")]
    MissingPrev,
    #[error("starting point is not in M")]
    NotInM,
    #[error("excursion was truncated by a corner hit")]
    Truncated,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// `x in M`, given the preimage `prev` for the first-arc rules.
pub fn in_m(
    table: &Table,
    spec: SubsetSpec,
    x: PhasePoint,
    prev: Option<PhasePoint>,
) -> Result<bool, InducedError> {
    let comp = table.locate(x.r).map_err(DynamicsError::from)?.component;
    let prev_comp = match prev {
        Some(p) => Some(table.locate(p.r).map_err(DynamicsError::from)?.component),
        None => None,
    };
    spec.contains(table, comp, prev_comp)
}

/// `x in M`, with the preimage found by time reversal when needed.
/// `Ok(None)` means the preimage hit a corner.
pub fn in_m_traced(table: &Table, spec: SubsetSpec, x: PhasePoint) -> Result<Option<bool>, InducedError> {
    let comp = table.component_at(x.r);
    if !(spec.needs_prev() && table.component(comp).class == CurvatureClass::Focusing) {
        return spec.contains(table, comp, None).map(Some);
    }
    match preimage(table, x) {
        Ok(ev) => spec.contains(table, comp, Some(ev.component)).map(Some),
        Err(DynamicsError::CornerHit(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellKind {
    Sliding,
    Diametric,
    FlatRunDirect,
    FlatRunIndirect,
    IhEscape,
    Regular,
}

impl CellKind {
    pub const ALL: [CellKind; 6] = [
        CellKind::Sliding,
        CellKind::Diametric,
        CellKind::FlatRunDirect,
        CellKind::FlatRunIndirect,
        CellKind::IhEscape,
        CellKind::Regular,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CellKind::Sliding => "sliding",
            CellKind::Diametric => "diametric",
            CellKind::FlatRunDirect => "flat-run-direct",
            CellKind::FlatRunIndirect => "flat-run-indirect",
            CellKind::IhEscape => "ih-escape",
            CellKind::Regular => "regular",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        CellKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for CellKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellLabel {
    pub kind: CellKind,
    pub n: u64,
    /// Starting component and the sign of the starting angle, `2 * id + (phi < 0)`.
    pub anchor_id: u64,
}

impl CellLabel {
    pub fn regular(anchor_id: u64) -> Self {
        Self {
            kind: CellKind::Regular,
            n: 0,
            anchor_id,
        }
    }
}

/// Thresholds on the mean `|phi|` of a same-arc run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifyParams {
    pub phi_slide: f64,
    pub phi_diam: f64,
}

impl Default for ClassifyParams {
    fn default() -> Self {
        Self {
            phi_slide: 1.2,
            phi_diam: 0.35,
        }
    }
}

impl ClassifyParams {
    /// Both thresholds multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            phi_slide: self.phi_slide * factor,
            phi_diam: self.phi_diam * factor,
        }
    }
}

/// Incremental classifier fed with the collisions of one excursion.
#[derive(Debug, Clone)]
struct CellAccumulator {
    start_component: usize,
    start_class: CurvatureClass,
    anchor_id: u64,
    run: u64,
    run_abs_phi: f64,
    in_run: bool,
    flats: u64,
}

impl CellAccumulator {
    fn new(table: &Table, start: &CollisionEvent) -> Self {
        Self {
            start_component: start.component,
            start_class: table.component(start.component).class,
            anchor_id: 2 * start.component as u64 + (start.point.phi < 0.0) as u64,
            run: 1,
            run_abs_phi: start.point.phi.abs(),
            in_run: true,
            flats: 0,
        }
    }

    /// Feeds a collision strictly inside the excursion (not the return point).
    fn feed(&mut self, table: &Table, ev: &CollisionEvent) {
        if self.in_run && ev.component == self.start_component {
            self.run += 1;
            self.run_abs_phi += ev.point.phi.abs();
        } else {
            self.in_run = false;
        }
        if table.component(ev.component).class == CurvatureClass::Flat {
            self.flats += 1;
        }
    }

    fn finish(&self, params: &ClassifyParams) -> CellLabel {
        label_from_counts(
            self.anchor_id,
            self.start_class == CurvatureClass::Focusing,
            self.run,
            self.run_abs_phi / self.run as f64,
            self.flats,
            params,
        )
    }
}

/// Cell label from the summary counts of an excursion: the length of the
/// initial same-arc run (counting the start), the mean `|phi|` over that run
/// and the number of flat bounces.
pub fn label_from_counts(
    anchor_id: u64,
    start_focusing: bool,
    run: u64,
    run_mean_abs_phi: f64,
    flats: u64,
    params: &ClassifyParams,
) -> CellLabel {
    let label = |kind, n| CellLabel { kind, n, anchor_id };
    if !start_focusing {
        return if flats >= 1 {
            label(CellKind::IhEscape, flats)
        } else {
            CellLabel::regular(anchor_id)
        };
    }
    if run >= 2 && run_mean_abs_phi > params.phi_slide {
        label(CellKind::Sliding, run)
    } else if run >= 3 && run_mean_abs_phi < params.phi_diam {
        label(CellKind::Diametric, run)
    } else if flats >= 1 && run == 1 {
        label(CellKind::FlatRunDirect, flats)
    } else if flats >= 1 && run == 2 {
        label(CellKind::FlatRunIndirect, flats)
    } else {
        CellLabel::regular(anchor_id)
    }
}

/// Classifies an excursion given as the start event followed by every
/// collision up to and including the return to `M`.
pub fn classify_cell(table: &Table, excursion: &[CollisionEvent], params: &ClassifyParams) -> CellLabel {
    let Some(start) = excursion.first() else {
        return CellLabel::regular(0);
    };
    let mut acc = CellAccumulator::new(table, start);
    let inner = excursion.len().saturating_sub(1);
    for ev in &excursion[1..inner.max(1)] {
        acc.feed(table, ev);
    }
    acc.finish(params)
}

/// One excursion of the induced map.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReturnRecord {
    pub start: PhasePoint,
    pub end: PhasePoint,
    /// Number of collision-map steps; equals the cap when censored.
    pub r: u64,
    pub flat_bounces: u64,
    pub same_arc_run: u64,
    /// Mean `|phi|` over the initial same-arc run.
    pub run_mean_abs_phi: f64,
    pub cell: CellLabel,
    pub start_component: usize,
    pub end_component: usize,
    pub truncated: bool,
    pub censored: bool,
    /// Whether a collision inside the excursion was grazing.
    pub grazing: bool,
    /// Derivative of the induced map, when requested and defined.
    #[serde(skip)]
    pub jacobian: Option<Mat2>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnOptions {
    pub r_max: u64,
    pub classify: ClassifyParams,
    pub jacobian: bool,
}

impl Default for ReturnOptions {
    fn default() -> Self {
        Self {
            r_max: DEFAULT_R_MAX,
            classify: ClassifyParams::default(),
            jacobian: false,
        }
    }
}

/// Iterates the collision map from `x` (assumed in `M`) until the first
/// return to `M`, at most `opts.r_max` steps.
pub fn return_map(
    table: &Table,
    spec: SubsetSpec,
    x: PhasePoint,
    opts: &ReturnOptions,
) -> Result<ReturnRecord, InducedError> {
    let start = initial_event(table, x)?;
    let mut acc = CellAccumulator::new(table, &start);
    let mut jac = opts.jacobian.then_some(Mat2::IDENTITY);
    let mut grazing = false;
    let mut prev = start;
    let mut steps = 0;
    loop {
        if steps == opts.r_max {
            return Ok(record(x, &prev, steps, &acc, opts, jac, start.component, grazing, false, true));
        }
        let ev = match collision_map(table, prev.point) {
            Ok(ev) => ev,
            Err(DynamicsError::CornerHit(_)) => {
                return Ok(record(x, &prev, steps, &acc, opts, None, start.component, grazing, true, false));
            }
            Err(e) => return Err(e.into()),
        };
        steps += 1;
        if let Some(m) = jac {
            jac = step_jacobian(prev.curvature, prev.point.phi, &ev)
                .ok()
                .map(|s| s.mul(&m));
        }
        if spec.contains(table, ev.component, Some(prev.component))? {
            return Ok(record(x, &ev, steps, &acc, opts, jac, start.component, grazing, false, false));
        }
        grazing |= ev.grazing;
        acc.feed(table, &ev);
        prev = ev;
    }
}

#[allow(clippy::too_many_arguments)]
fn record(
    start: PhasePoint,
    end: &CollisionEvent,
    r: u64,
    acc: &CellAccumulator,
    opts: &ReturnOptions,
    jacobian: Option<Mat2>,
    start_component: usize,
    grazing: bool,
    truncated: bool,
    censored: bool,
) -> ReturnRecord {
    ReturnRecord {
        start,
        end: end.point,
        r,
        flat_bounces: acc.flats,
        same_arc_run: if acc.start_class == CurvatureClass::Focusing {
            acc.run
        } else {
            0
        },
        run_mean_abs_phi: acc.run_abs_phi / acc.run as f64,
        cell: acc.finish(&opts.classify),
        start_component,
        end_component: end.component,
        truncated,
        censored,
        grazing,
        jacobian,
    }
}

/// Derivative of the induced map along a completed excursion, recomputed by
/// re-tracing the orbit from `record.start`.
pub fn induced_tangent_map(table: &Table, spec: SubsetSpec, record: &ReturnRecord) -> Result<Mat2, InducedError> {
    if record.truncated || record.censored {
        return Err(InducedError::Truncated);
    }
    let mut prev = initial_event(table, record.start)?;
    let mut m = Mat2::IDENTITY;
    let mut returned = false;
    for _ in 0..record.r {
        let ev = collision_map(table, prev.point)?;
        m = step_jacobian(prev.curvature, prev.point.phi, &ev)?.mul(&m);
        returned = spec.contains(table, ev.component, Some(prev.component))?;
        prev = ev;
    }
    if !returned {
        return Err(InducedError::NotInM);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{sample_mu, EPS_GRAZE};
    use crate::geometry::*;
    use crate::rng::stream;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn stadium() -> Table {
        build_stadium(2.0, 1.0).unwrap()
    }

    fn sinai() -> Table {
        build_semidispersing(
            1.0,
            1.0,
            &[Scatterer::Disc {
                center: Vec2::new(0.5, 0.5),
                radius: 0.25,
            }],
        )
        .unwrap()
    }

    #[test]
    fn membership_rules() {
        let s = sinai();
        let spec = SubsetSpec::ScattererCollisions;
        assert!(spec.contains(&s, 4, None).unwrap());
        assert!(!spec.contains(&s, 0, None).unwrap());
        let st = stadium();
        let arcs = SubsetSpec::FirstArcCollisionArcsOnly;
        assert!(!arcs.contains(&st, 1, Some(1)).unwrap());
        assert!(arcs.contains(&st, 1, Some(0)).unwrap());
        assert!(!arcs.contains(&st, 0, Some(1)).unwrap());
        assert_eq!(arcs.contains(&st, 1, None), Err(InducedError::MissingPrev));
        let fl = build_flower(&FlowerSpec::regular(3, 1.0, 0.5, 0.8 * PI).unwrap()).unwrap();
        let m2 = SubsetSpec::FirstArcCollision;
        assert!(m2.contains(&fl, 1, Some(1)).unwrap());
        assert!(!m2.contains(&fl, 0, Some(0)).unwrap());
    }

    #[test]
    fn compatibility() {
        let d = build_custom_disc(1.0).unwrap();
        assert!(SubsetSpec::ScattererCollisions.check_compatible(&d).is_err());
        assert!(SubsetSpec::FirstArcCollisionArcsOnly
            .check_compatible(&stadium())
            .is_ok());
        assert!(SubsetSpec::ScattererCollisions
            .check_compatible(&stadium())
            .is_err());
        let empty = build_semidispersing(1.0, 1.0, &[]).unwrap();
        assert!(SubsetSpec::ScattererCollisions.check_compatible(&empty).is_err());
    }

    #[test]
    fn axial_shot_returns_in_one_step() {
        let t = stadium();
        // apex of the left arc
        let apex = 2.0 + PI + 2.0 + FRAC_PI_2;
        let rec = return_map(
            &t,
            SubsetSpec::FirstArcCollisionArcsOnly,
            PhasePoint::new(apex, 0.0),
            &ReturnOptions::default(),
        )
        .unwrap();
        assert_eq!(rec.r, 1);
        assert_eq!(rec.flat_bounces, 0);
        assert_eq!(rec.cell.kind, CellKind::Regular);
        assert_eq!(rec.end_component, 1);
    }

    #[test]
    fn flat_run_direct_counts() {
        // leave the right arc near its bottom, heading steeply left and up
        let t = stadium();
        let (r0, phi0) = (2.0 + 0.2, -1.35);
        let rec = return_map(
            &t,
            SubsetSpec::FirstArcCollisionArcsOnly,
            PhasePoint::new(r0, phi0),
            &ReturnOptions::default(),
        )
        .unwrap();
        if rec.same_arc_run == 1 && rec.flat_bounces >= 1 {
            assert_eq!(rec.cell.kind, CellKind::FlatRunDirect);
            assert_eq!(rec.r, rec.flat_bounces + 1);
        }
    }

    #[test]
    fn flat_run_bookkeeping_over_samples() {
        let t = stadium();
        let spec = SubsetSpec::FirstArcCollisionArcsOnly;
        let mut rng = stream(4, 0);
        let (mut direct, mut indirect) = (0, 0);
        for _ in 0..20000 {
            let x = sample_mu(&t, &mut rng);
            if in_m_traced(&t, spec, x).unwrap() != Some(true) {
                continue;
            }
            let rec = return_map(&t, spec, x, &ReturnOptions::default()).unwrap();
            match rec.cell.kind {
                CellKind::FlatRunDirect => {
                    direct += 1;
                    assert_eq!(rec.r, rec.cell.n + 1);
                }
                CellKind::FlatRunIndirect => {
                    indirect += 1;
                    assert_eq!(rec.r, rec.cell.n + 2);
                }
                _ => {}
            }
        }
        assert!(direct > 0 && indirect > 0);
    }

    #[test]
    fn long_corridor_flight_counts_walls() {
        let t = sinai();
        // leave the bottom of the scatterer almost horizontally, below it
        let bottom = 4.0 + 0.25 * FRAC_PI_2; // angle -pi/2 on the clockwise loop
        let x = PhasePoint::new(bottom, 1.5);
        let rec = return_map(&t, SubsetSpec::ScattererCollisions, x, &ReturnOptions::default()).unwrap();
        assert_eq!(rec.r, rec.flat_bounces + 1);
        assert!(rec.flat_bounces >= 1);
        assert_eq!(rec.cell.kind, CellKind::IhEscape);
    }

    #[test]
    fn sliding_classification() {
        let t = build_flower(&FlowerSpec::regular(3, 1.0, 0.5, 0.8 * PI).unwrap()).unwrap();
        let arc = t.component(0);
        // near-tangent shot from the start of petal 0 along the arc
        let x = PhasePoint::new(arc.r_offset + 1e-3, -(FRAC_PI_2 - 0.02));
        let rec = return_map(&t, SubsetSpec::FirstArcCollision, x, &ReturnOptions::default()).unwrap();
        assert_eq!(rec.cell.kind, CellKind::Sliding);
        assert_eq!(rec.cell.n, rec.same_arc_run);
        assert!(rec.cell.n >= 10);
        assert_eq!(rec.r, rec.cell.n);
    }

    #[test]
    fn induced_derivative_of_single_step_is_tangent_map() {
        let t = stadium();
        let apex = 2.0 + PI + 2.0 + FRAC_PI_2;
        let x = PhasePoint::new(apex, 0.1);
        let opts = ReturnOptions {
            jacobian: true,
            ..Default::default()
        };
        let rec = return_map(&t, SubsetSpec::FirstArcCollisionArcsOnly, x, &opts).unwrap();
        assert_eq!(rec.r, 1);
        let m = crate::dynamics::tangent_map(&t, x).unwrap();
        assert_eq!(rec.jacobian.unwrap(), m);
        assert_eq!(
            induced_tangent_map(&t, SubsetSpec::FirstArcCollisionArcsOnly, &rec).unwrap(),
            m
        );
    }

    #[test]
    fn induced_determinant_identity() {
        let t = build_drivebelt(1.0, 0.5, 2.0).unwrap();
        let spec = SubsetSpec::FirstArcCollisionArcsOnly;
        let opts = ReturnOptions {
            jacobian: true,
            ..Default::default()
        };
        let mut rng = stream(8, 0);
        let mut checked = 0;
        while checked < 300 {
            let x = sample_mu(&t, &mut rng);
            if in_m_traced(&t, spec, x).unwrap() != Some(true) {
                continue;
            }
            let rec = return_map(&t, spec, x, &opts).unwrap();
            let (Some(m), false) = (rec.jacobian, rec.grazing) else { continue };
            if rec.end.phi.cos() < EPS_GRAZE {
                continue;
            }
            let want = rec.start.phi.cos() / rec.end.phi.cos();
            assert!((m.det().abs() - want).abs() < 1e-6 * want, "{rec:?}");
            checked += 1;
        }
    }

    #[test]
    fn classify_from_event_list() {
        let t = stadium();
        let ev = |component: usize, phi: f64| CollisionEvent {
            point: PhasePoint::new(t.component(component).r_offset + 0.1, phi),
            position: Vec2::new(0.0, 0.0),
            free_path: 1.0,
            component,
            curvature: t.component(component).curvature(),
            grazing: false,
            corner: false,
        };
        let p = ClassifyParams::default();
        let direct: Vec<_> = std::iter::once(ev(1, 0.3))
            .chain((0..5).map(|i| ev(2 * (i % 2), 1.0)))
            .chain(std::iter::once(ev(3, 0.2)))
            .collect();
        let c = classify_cell(&t, &direct, &p);
        assert_eq!((c.kind, c.n), (CellKind::FlatRunDirect, 5));
        let indirect: Vec<_> = [ev(1, 0.3), ev(1, 0.3)]
            .into_iter()
            .chain((0..5).map(|i| ev(2 * (i % 2), 1.0)))
            .chain(std::iter::once(ev(3, 0.2)))
            .collect();
        let c = classify_cell(&t, &indirect, &p);
        assert_eq!((c.kind, c.n), (CellKind::FlatRunIndirect, 5));
        let sliding: Vec<_> = (0..12).map(|_| ev(1, 1.5)).chain(std::iter::once(ev(2, 0.5))).collect();
        let c = classify_cell(&t, &sliding, &p);
        assert_eq!((c.kind, c.n), (CellKind::Sliding, 12));
    }
}
