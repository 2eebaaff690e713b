//! Defensive mixture importance sampling of the invariant measure.
//!
//! In coordinates `(r, u = sin phi)` the invariant measure is uniform. The
//! proposal mixes that uniform density with uniform densities on nested boxes
//! around the accumulation points of long excursions, so that deep cells get
//! enough raw samples. Each draw carries the likelihood ratio `p / q`, which
//! has mean one under the proposal.

use crate::dynamics::PhasePoint;
use crate::geometry::{CurvatureClass, Family, Shape, Table, Vec2};
use crate::rng::Rng;
use rand::Rng as _;
use serde::Serialize;
use std::f64::consts::PI;

/// How the `u` half-width of an anchor box shrinks from level to level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorKind {
    /// Interior point `u = 0`; both widths halve per level.
    Center,
    /// Grazing edge `u = +1` or `u = -1`; the `r` width halves and the `u`
    /// width quarters per level.
    Edge,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Anchor {
    pub r: f64,
    /// `0`, `1` or `-1`.
    pub u: f64,
    pub kind: AnchorKind,
    pub label: &'static str,
    /// Arc-length range of the boundary loop carrying the anchor; boxes
    /// wrap around inside it.
    pub span: (f64, f64),
}

#[derive(Debug, Clone, Serialize)]
pub struct ImportanceSampler {
    pub anchors: Vec<Anchor>,
    pub levels: u32,
    pub uniform_fraction: f64,
    pub r_width: f64,
    pub u_width: f64,
    perimeter: f64,
}

impl ImportanceSampler {
    /// Plain sampling from the invariant measure.
    pub fn plain(table: &Table) -> Self {
        Self {
            anchors: Vec::new(),
            levels: 0,
            uniform_fraction: 1.0,
            r_width: 0.0,
            u_width: 0.0,
            perimeter: table.perimeter(),
        }
    }

    /// Anchors at the accumulation points implied by the geometry: grazing
    /// entries at the ends of focusing arcs, arc ends next to a pair of
    /// parallel flat sides, and the antipodes of the ends of arcs longer than
    /// a half circle. Semi-dispersing tables also get grazing anchors where a
    /// scatterer is tangent to a lattice corridor direction.
    pub fn for_table(table: &Table, levels: u32) -> Self {
        let mut anchors = Vec::new();
        let parallel_pair = has_parallel_segments(table);
        for arc in table.focusing_arcs() {
            let start = arc.r_offset;
            let end = table.global_r(arc.id, arc.length);
            anchors.push(Anchor {
                r: start,
                u: -1.0,
                kind: AnchorKind::Edge,
                label: "sliding",
                span: loop_span(table, arc.id),
            });
            anchors.push(Anchor {
                r: end,
                u: 1.0,
                kind: AnchorKind::Edge,
                label: "sliding",
                span: loop_span(table, arc.id),
            });
            if parallel_pair {
                let prev = table.component(table.prev_in_loop(arc.id));
                let next = table.component(table.next_in_loop(arc.id));
                if prev.class == CurvatureClass::Flat || next.class == CurvatureClass::Flat {
                    for r in [start, end] {
                        anchors.push(Anchor {
                            r,
                            u: 0.0,
                            kind: AnchorKind::Center,
                            label: "flat-run",
                            span: loop_span(table, arc.id),
                        });
                    }
                }
            }
            if arc.extent() > PI {
                // antipode of an endpoint lies on the arc at offset pi
                let radius = match arc.shape {
                    Shape::Arc { radius, .. } => radius,
                    Shape::Segment { .. } => unreachable!(),
                };
                for s in [PI * radius, arc.length - PI * radius] {
                    anchors.push(Anchor {
                        r: table.global_r(arc.id, s),
                        u: 0.0,
                        kind: AnchorKind::Center,
                        label: "diametric",
                        span: loop_span(table, arc.id),
                    });
                }
            }
        }
        anchors.extend(corridor_anchors(table));
        let perimeter = table.perimeter();
        if anchors.is_empty() {
            return Self::plain(table);
        }
        Self {
            anchors,
            levels,
            uniform_fraction: 0.25,
            r_width: 0.5,
            u_width: 0.5,
            perimeter,
        }
    }

    fn n_boxes(&self) -> usize {
        self.anchors.len() * (self.levels as usize + 1)
    }

    /// Half-widths `(r, u)` of the box of `anchor` at `level`.
    fn half_widths(&self, anchor: &Anchor, level: u32) -> (f64, f64) {
        let s = 0.5f64.powi(level as i32);
        match anchor.kind {
            AnchorKind::Center => (self.r_width * s, self.u_width * s),
            AnchorKind::Edge => (self.r_width * s, self.u_width * s * s),
        }
    }

    fn in_box(&self, anchor: &Anchor, level: u32, r: f64, u: f64) -> bool {
        let (hr, hu) = self.half_widths(anchor, level);
        let (lo, hi) = anchor.span;
        if r < lo || r >= hi {
            return false;
        }
        let mut dr = (r - anchor.r).abs();
        dr = dr.min(hi - lo - dr);
        if dr >= hr {
            return false;
        }
        match anchor.kind {
            AnchorKind::Center => (u - anchor.u).abs() < hu,
            AnchorKind::Edge => (anchor.u - u) * anchor.u.signum() < hu,
        }
    }

    /// Area of the box in `(r, u)` coordinates (boxes never exceed the
    /// collision space because the widths stay below its extent).
    fn box_area(&self, anchor: &Anchor, level: u32) -> f64 {
        let (hr, hu) = self.half_widths(anchor, level);
        let r_len = (2.0 * hr).min(anchor.span.1 - anchor.span.0);
        let u_len = match anchor.kind {
            AnchorKind::Center => 2.0 * hu.min(1.0),
            AnchorKind::Edge => hu.min(2.0),
        };
        r_len * u_len
    }

    /// Likelihood ratio of the invariant measure against the proposal.
    pub fn weight(&self, x: PhasePoint) -> f64 {
        if self.anchors.is_empty() {
            return 1.0;
        }
        let u = x.phi.sin();
        let total_area = 2.0 * self.perimeter;
        let per_box = (1.0 - self.uniform_fraction) / self.n_boxes() as f64;
        let mut ratio = self.uniform_fraction;
        for a in &self.anchors {
            for level in 0..=self.levels {
                if !self.in_box(a, level, x.r, u) {
                    break;
                }
                ratio += per_box * total_area / self.box_area(a, level);
            }
        }
        1.0 / ratio
    }

    /// A draw from the proposal and its weight.
    pub fn sample(&self, rng: &mut Rng) -> (PhasePoint, f64) {
        let uniform = self.anchors.is_empty() || rng.gen::<f64>() < self.uniform_fraction;
        let (r, u) = if uniform {
            (rng.gen::<f64>() * self.perimeter, 2.0 * rng.gen::<f64>() - 1.0)
        } else {
            let k = rng.gen_range(0..self.n_boxes());
            let a = &self.anchors[k / (self.levels as usize + 1)];
            let level = (k % (self.levels as usize + 1)) as u32;
            let (hr, hu) = self.half_widths(a, level);
            let (lo, hi) = a.span;
            let r = lo
                + (a.r - lo + (2.0 * rng.gen::<f64>() - 1.0) * hr.min((hi - lo) / 2.0))
                    .rem_euclid(hi - lo);
            let r = if r >= hi { lo } else { r };
            let u = match a.kind {
                AnchorKind::Center => a.u + (2.0 * rng.gen::<f64>() - 1.0) * hu.min(1.0),
                AnchorKind::Edge => a.u - a.u.signum() * rng.gen::<f64>() * hu.min(2.0),
            };
            (r, u)
        };
        let r = if r >= self.perimeter { 0.0 } else { r };
        let x = PhasePoint::new(r, u.clamp(-1.0, 1.0).asin());
        (x, self.weight(x))
    }
}

/// Grazing anchors on dispersing arcs at the points whose tangent is parallel
/// to a short vector of the unfolding lattice of the outer rectangle.
fn corridor_anchors(table: &Table) -> Vec<Anchor> {
    if table.family() != Family::SemiDispersing {
        return Vec::new();
    }
    let outer = &table.components()[table.loops()[0].clone()];
    let (mut lo, mut hi) = (Vec2::new(f64::MAX, f64::MAX), Vec2::new(f64::MIN, f64::MIN));
    for c in outer {
        for p in [c.shape.start(), c.shape.end()] {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
    }
    let (w, h) = (hi.x - lo.x, hi.y - lo.y);
    let directions = [(w, 0.0), (0.0, h), (w, h), (w, -h)];
    let mut anchors = Vec::new();
    for c in table.components() {
        let Shape::Arc { center, radius, .. } = c.shape else { continue };
        if c.class != CurvatureClass::Dispersing {
            continue;
        }
        for (dx, dy) in directions {
            let d = Vec2::new(dx, dy).normalized();
            for normal in [d.perp(), -d.perp()] {
                let s = c.shape.arclength_of(center + normal * radius);
                let on_arc = (c.shape.point_at(s) - center).normalized().dot(normal) > 1.0 - 1e-12;
                if !on_arc {
                    continue;
                }
                for u in [-1.0, 1.0] {
                    anchors.push(Anchor {
                        r: table.global_r(c.id, s),
                        u,
                        kind: AnchorKind::Edge,
                        label: "corridor",
                        span: loop_span(table, c.id),
                    });
                }
            }
        }
    }
    anchors
}

fn loop_span(table: &Table, id: usize) -> (f64, f64) {
    let range = table.loops()[table.component(id).loop_index].clone();
    let first = table.component(range.start);
    let last = table.component(range.end - 1);
    (first.r_offset, last.r_offset + last.length)
}

fn has_parallel_segments(table: &Table) -> bool {
    let dirs: Vec<_> = table
        .components()
        .iter()
        .filter_map(|c| match c.shape {
            Shape::Segment { from, to } => Some((to - from).normalized()),
            Shape::Arc { .. } => None,
        })
        .collect();
    dirs.iter()
        .enumerate()
        .any(|(i, a)| dirs[i + 1..].iter().any(|b| a.cross(*b).abs() < 1e-12))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_stadium;
    use crate::rng::stream;

    #[test]
    fn weights_average_to_one() {
        let t = build_stadium(2.0, 1.0).unwrap();
        let s = ImportanceSampler::for_table(&t, 8);
        assert!(!s.anchors.is_empty());
        let mut rng = stream(1, 0);
        let n = 200_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let (_, w) = s.sample(&mut rng);
            sum += w;
            sum_sq += w * w;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - 1.0).abs() < 4.0 * se, "{mean} +- {se}");
    }

    #[test]
    fn weighted_mean_of_cos_phi() {
        // E_mu[cos phi] = pi / 4 regardless of the proposal
        let t = build_stadium(2.0, 1.0).unwrap();
        let s = ImportanceSampler::for_table(&t, 8);
        let mut rng = stream(2, 0);
        let n = 400_000;
        let mut vals = Vec::with_capacity(n);
        let mut wsum = 0.0;
        for _ in 0..n {
            let (x, w) = s.sample(&mut rng);
            vals.push(w * x.phi.cos());
            wsum += w;
        }
        let est = vals.iter().sum::<f64>() / wsum;
        assert!((est - PI / 4.0).abs() < 5e-3, "{est}");
    }

    #[test]
    fn plain_sampler_has_unit_weight() {
        let t = build_stadium(2.0, 1.0).unwrap();
        let s = ImportanceSampler::plain(&t);
        let mut rng = stream(3, 0);
        assert_eq!(s.sample(&mut rng).1, 1.0);
    }
}
