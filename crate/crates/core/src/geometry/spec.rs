//! Table definitions: JSON documents and the inline `family:key=val` shorthand.
//!
//! JSON form:
//!
//! ```json
//! {"family": "stadium", "parameters": {"flat_length": 2, "arc_radius": 1}}
//! ```
//!
//! or an explicit component list (first loop counterclockwise, scatterer
//! loops clockwise):
//!
//! ```json
//! {"family": "custom", "components": [
//!   {"shape": "arc", "center": [0, 0], "radius": 1,
//!    "start_angle": 0, "end_angle": 6.283185307179586, "orientation": "ccw"}
//! ]}
//! ```

use super::{
    build_custom_disc, build_custom_polygon, build_custom_rectangle, build_drivebelt,
    build_flower, build_semidispersing, build_stadium, Family, FlowerSpec, GeometryError, Petal,
    Scatterer, Shape, Table, Vec2, Wall,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use std::f64::consts::{PI, TAU};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Ccw,
    Cw,
}

/// One explicitly listed boundary component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum ComponentSpec {
    Segment {
        from: Vec2,
        to: Vec2,
        #[serde(default, rename = "loop")]
        loop_index: usize,
    },
    Arc {
        center: Vec2,
        radius: f64,
        start_angle: f64,
        end_angle: f64,
        orientation: Orientation,
        #[serde(default, rename = "loop")]
        loop_index: usize,
    },
}

impl ComponentSpec {
    fn loop_index(&self) -> usize {
        match self {
            ComponentSpec::Segment { loop_index, .. } | ComponentSpec::Arc { loop_index, .. } => {
                *loop_index
            }
        }
    }

    fn shape(&self) -> Shape {
        match *self {
            ComponentSpec::Segment { from, to, .. } => Shape::Segment { from, to },
            ComponentSpec::Arc {
                center,
                radius,
                start_angle,
                end_angle,
                orientation,
                ..
            } => {
                let raw = end_angle - start_angle;
                let sweep = match orientation {
                    Orientation::Ccw if raw > 0.0 => raw.min(TAU),
                    Orientation::Ccw => raw.rem_euclid(TAU),
                    Orientation::Cw if raw < 0.0 => raw.max(-TAU),
                    Orientation::Cw => -(-raw).rem_euclid(TAU),
                };
                Shape::Arc {
                    center,
                    radius,
                    start_angle,
                    sweep,
                }
            }
        }
    }
}

/// A table definition: a family with parameters, or an explicit component list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub family: String,
    #[serde(default)]
    pub parameters: Map<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<Vec<ComponentSpec>>,
}

fn bad(msg: impl Into<String>) -> GeometryError {
    GeometryError::InvalidParameter(msg.into())
}

/// Parses a number with an optional `pi` factor: `2`, `0.8pi`, `pi`, `1e-3`.
fn parse_number(s: &str) -> Result<f64, GeometryError> {
    let t = s.trim();
    if let Some(head) = t.strip_suffix("pi") {
        let head = head.trim_end_matches('*');
        let factor = if head.is_empty() {
            1.0
        } else {
            head.parse::<f64>()
                .map_err(|_| bad(format!("cannot parse number '{s}'")))?
        };
        return Ok(factor * PI);
    }
    t.parse::<f64>()
        .map_err(|_| bad(format!("cannot parse number '{s}'")))
}

impl TableSpec {
    /// Parses the shorthand `family:key=val,key=val` (or a bare family name).
    pub fn from_shorthand(s: &str) -> Result<Self, GeometryError> {
        let (family, rest) = match s.split_once(':') {
            Some((f, r)) => (f.trim(), r.trim()),
            None => (s.trim(), ""),
        };
        if family.is_empty() {
            return Err(bad("empty table family"));
        }
        let mut parameters = Map::new();
        for pair in rest.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got '{pair}'")))?;
            let x = parse_number(v)?;
            let num = serde_json::Number::from_f64(x)
                .ok_or_else(|| bad(format!("non-finite value for '{k}'")))?;
            parameters.insert(k.trim().to_string(), Value::Number(num));
        }
        Ok(Self {
            family: family.to_string(),
            parameters,
            components: None,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, GeometryError> {
        serde_json::from_str(text).map_err(|e| bad(format!("table JSON: {e}")))
    }

    /// Accepts either a path to a JSON file or the inline shorthand.
    pub fn parse(arg: &str) -> Result<Self, GeometryError> {
        let path = std::path::Path::new(arg);
        if arg.ends_with(".json") || path.is_file() {
            let text = std::fs::read_to_string(path)
                .map_err(|e| bad(format!("cannot read {arg}: {e}")))?;
            return Self::from_json(&text);
        }
        Self::from_shorthand(arg)
    }

    fn num(&self, keys: &[&str]) -> Result<f64, GeometryError> {
        self.opt_num(keys)?
            .ok_or_else(|| bad(format!("missing parameter '{}' for {}", keys[0], self.family)))
    }

    fn opt_num(&self, keys: &[&str]) -> Result<Option<f64>, GeometryError> {
        for k in keys {
            if let Some(v) = self.parameters.get(*k) {
                return match v {
                    Value::Number(n) => Ok(n.as_f64()),
                    Value::String(s) => parse_number(s).map(Some),
                    Value::Bool(b) => Ok(Some(if *b { 1.0 } else { 0.0 })),
                    _ => Err(bad(format!("parameter '{k}' must be a number"))),
                };
            }
        }
        Ok(None)
    }

    fn field<T: DeserializeOwned>(&self, key: &str) -> Result<Option<T>, GeometryError> {
        self.parameters
            .get(key)
            .map(|v| serde_json::from_value(v.clone()).map_err(|e| bad(format!("{key}: {e}"))))
            .transpose()
    }

    fn family_tag(&self) -> Result<Family, GeometryError> {
        Ok(match self.family.as_str() {
            "stadium" | "straight-stadium" => Family::StraightStadium,
            "drivebelt" | "drive-belt" => Family::DriveBelt,
            "flower" => Family::Flower,
            "semi" | "semi-dispersing" | "sinai" => Family::SemiDispersing,
            "custom" | "disc" | "square" | "rect" | "rectangle" | "polygon" => Family::Custom,
            other => return Err(bad(format!("unknown table family '{other}'"))),
        })
    }

    /// Builds the table.
    pub fn build(&self) -> Result<Table, GeometryError> {
        let family = self.family_tag()?;
        if let Some(components) = &self.components {
            let n_loops = components.iter().map(|c| c.loop_index() + 1).max().unwrap_or(0);
            let mut loops = vec![Vec::new(); n_loops];
            for c in components {
                loops[c.loop_index()].push(c.shape());
            }
            let allow = self.opt_num(&["allow_large_arcs", "pathological"])?.unwrap_or(0.0) != 0.0;
            return Ok(Table::from_loops(family, loops)?.with_large_arcs_allowed(allow));
        }
        match self.family.as_str() {
            "stadium" | "straight-stadium" => build_stadium(
                self.num(&["l", "flat_length", "L"])?,
                self.num(&["r", "arc_radius"])?,
            ),
            "drivebelt" | "drive-belt" => build_drivebelt(
                self.num(&["R", "big_radius", "r1"])?,
                self.num(&["r", "small_radius", "r2"])?,
                self.num(&["d", "center_distance", "D"])?,
            ),
            "flower" => {
                let allow = self.opt_num(&["allow_large_arcs", "pathological"])?.unwrap_or(0.0) != 0.0;
                let spec = if let Some(petals) = self.field::<Vec<Petal>>("petals")? {
                    let walls = self
                        .field::<Vec<Wall>>("walls")?
                        .ok_or_else(|| bad("flower with explicit petals needs 'walls'"))?;
                    FlowerSpec {
                        petals,
                        walls,
                        allow_large_arcs: allow,
                    }
                } else {
                    let n = self.opt_num(&["n", "petals_count"])?.unwrap_or(3.0);
                    if n.fract() != 0.0 || n < 1.0 {
                        return Err(bad(format!("petal count must be a positive integer, got {n}")));
                    }
                    let regular = FlowerSpec::regular(
                        n as usize,
                        self.opt_num(&["d", "ring_radius"])?.unwrap_or(1.0),
                        self.opt_num(&["rho", "petal_radius"])?.unwrap_or(0.5),
                        self.opt_num(&["extent", "e"])?.unwrap_or(0.8 * PI),
                    )?
                    .with_large_arcs(allow);
                    match self.opt_num(&["wall", "wall_radius"])? {
                        Some(w) => regular.with_wall_radius(w),
                        None => regular,
                    }
                };
                build_flower(&spec)
            }
            "semi" | "semi-dispersing" | "sinai" => {
                let w = self.opt_num(&["w", "width"])?.unwrap_or(1.0);
                let h = self.opt_num(&["h", "height"])?.unwrap_or(1.0);
                let scatterers = match self.field::<Vec<Scatterer>>("scatterers")? {
                    Some(s) => s,
                    None => match self.opt_num(&["r", "radius"])? {
                        Some(r) => vec![Scatterer::Disc {
                            center: Vec2::new(
                                self.opt_num(&["x"])?.unwrap_or(w / 2.0),
                                self.opt_num(&["y"])?.unwrap_or(h / 2.0),
                            ),
                            radius: r,
                        }],
                        None => Vec::new(),
                    },
                };
                build_semidispersing(w, h, &scatterers)
            }
            "disc" => build_custom_disc(self.opt_num(&["r", "radius"])?.unwrap_or(1.0)),
            "square" => {
                let a = self.opt_num(&["a", "side"])?.unwrap_or(1.0);
                build_custom_rectangle(a, a)
            }
            "rect" | "rectangle" => build_custom_rectangle(
                self.opt_num(&["w", "width"])?.unwrap_or(1.0),
                self.opt_num(&["h", "height"])?.unwrap_or(1.0),
            ),
            "polygon" => {
                let v = self
                    .field::<Vec<Vec2>>("vertices")?
                    .ok_or_else(|| bad("polygon needs 'vertices'"))?;
                build_custom_polygon(&v)
            }
            _ => Err(bad(format!(
                "family '{}' needs an explicit 'components' list",
                self.family
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shorthand_stadium() {
        let t = TableSpec::from_shorthand("stadium:l=2,r=1").unwrap().build().unwrap();
        assert!((t.perimeter() - (4.0 + TAU)).abs() < 1e-12);
    }

    #[test]
    fn shorthand_pi_values() {
        assert!((parse_number("0.8pi").unwrap() - 0.8 * PI).abs() < 1e-15);
        assert_eq!(parse_number("pi").unwrap(), PI);
        assert_eq!(parse_number("2*pi").unwrap(), 2.0 * PI);
        assert!(parse_number("abc").is_err());
    }

    #[test]
    fn shorthand_flower_pathological() {
        assert!(TableSpec::from_shorthand("flower:extent=1.1pi")
            .unwrap()
            .build()
            .is_err());
        let t = TableSpec::from_shorthand("flower:extent=1.1pi,pathological=1")
            .unwrap()
            .build()
            .unwrap();
        assert!(t.allows_large_arcs());
    }

    #[test]
    fn shorthand_flower_wall() {
        let a = TableSpec::from_shorthand("flower:wall=8").unwrap().build().unwrap();
        let b = build_flower(&FlowerSpec::regular(3, 1.0, 0.5, 0.8 * PI).unwrap().with_wall_radius(8.0)).unwrap();
        assert!((a.perimeter() - b.perimeter()).abs() < 1e-12);
        assert!(TableSpec::from_shorthand("flower:wall=2").unwrap().build().is_err());
    }

    #[test]
    fn json_components_disc() {
        let text = r#"{"family": "custom", "components": [
            {"shape": "arc", "center": [0, 0], "radius": 2,
             "start_angle": 0, "end_angle": 6.283185307179586, "orientation": "ccw"}]}"#;
        let t = TableSpec::from_json(text).unwrap().build().unwrap();
        assert!((t.area() - 4.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn json_semidispersing_parameters() {
        let text = r#"{"family": "semi-dispersing", "parameters": {"width": 1, "height": 1,
            "scatterers": [{"kind": "disc", "center": [0.5, 0.5], "radius": 0.25}]}}"#;
        let t = TableSpec::from_json(text).unwrap().build().unwrap();
        assert_eq!(t.components().len(), 5);
    }

    #[test]
    fn unknown_family() {
        assert!(TableSpec::from_shorthand("torus:r=1").unwrap().build().is_err());
    }
}
