//! Scene documents: a JSON list of primitive records.
//!
//! ```json
//! [{"shape": "box", "center": [0, 0, 0], "dims": [0.5, 0.2, 0.1], "color": [1, 0, 0], "density": 400},
//!  {"shape": "cylinder", "center": [0, 0, 0.3], "dims": [0.1, 0.2], "axis": "z", "color": [0, 0, 1], "density": 400}]
//! ```
//!
//! `dims` holds half-extents for boxes, `[radius]` for spheres and
//! `[radius, half_height]` for cylinders. `axis` defaults to `z`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use watchforge_core::scene::Axis;
use watchforge_core::{Primitive, Shape};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrimitiveRecord {
    pub shape: String,
    pub center: [f64; 3],
    pub dims: Vec<f64>,
    pub color: [f64; 3],
    pub density: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axis: Option<Axis>,
}

impl PrimitiveRecord {
    pub fn to_primitive(&self, index: usize) -> CliResult<Primitive> {
        let bad = |what: &str| CliError::Config(format!("primitive {index}: {what}"));
        let shape = match (self.shape.as_str(), self.dims.as_slice()) {
            ("box", &[x, y, z]) => Shape::Box {
                half_extents: [x, y, z],
            },
            ("sphere", &[radius]) => Shape::Sphere { radius },
            ("cylinder", &[radius, half_height]) => Shape::Cylinder {
                radius,
                half_height,
                axis: self.axis.unwrap_or(Axis::Z),
            },
            ("box" | "sphere" | "cylinder", d) => {
                return Err(bad(&format!("{} dims has wrong length {}", self.shape, d.len())))
            }
            (other, _) => return Err(bad(&format!("unknown shape '{other}'"))),
        };
        if self.axis.is_some() && self.shape != "cylinder" {
            return Err(bad("axis is only valid for cylinders"));
        }
        let p = Primitive {
            shape,
            center: self.center,
            color: self.color,
            density: self.density,
        };
        p.validate().map_err(|e| bad(&e.to_string()))?;
        Ok(p)
    }

    pub fn from_primitive(p: &Primitive) -> Self {
        let (shape, dims, axis) = match p.shape {
            Shape::Box { half_extents } => ("box", half_extents.to_vec(), None),
            Shape::Sphere { radius } => ("sphere", vec![radius], None),
            Shape::Cylinder {
                radius,
                half_height,
                axis,
            } => ("cylinder", vec![radius, half_height], Some(axis)),
        };
        Self {
            shape: shape.into(),
            center: p.center,
            dims,
            color: p.color,
            density: p.density,
            axis,
        }
    }
}

pub fn parse_scene(text: &str) -> CliResult<Vec<Primitive>> {
    let records: Vec<PrimitiveRecord> = serde_json::from_str(text)
        .map_err(|e| CliError::Config(format!("scene file: {e}")))?;
    if records.is_empty() {
        return Err(CliError::Config("scene file has no primitives".into()));
    }
    records
        .iter()
        .enumerate()
        .map(|(i, r)| r.to_primitive(i))
        .collect()
}

/// Reads a scene file. A missing or unreadable file is a configuration error.
pub fn load_scene(path: &Path) -> CliResult<Vec<Primitive>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("scene {}: {e}", path.display())))?;
    parse_scene(&text)
}

pub fn scene_to_json(prims: &[Primitive]) -> String {
    let records: Vec<_> = prims.iter().map(PrimitiveRecord::from_primitive).collect();
    let mut s = serde_json::to_string_pretty(&records).expect("records serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use watchforge_core::scene::toy_locomotive;

    #[test]
    fn shipped_fixture_matches_builtin_locomotive() {
        let text = include_str!("../fixtures/locomotive.json");
        assert_eq!(parse_scene(text).unwrap(), toy_locomotive());
    }

    #[test]
    fn round_trip() {
        let prims = toy_locomotive();
        assert_eq!(parse_scene(&scene_to_json(&prims)).unwrap(), prims);
    }

    #[test]
    fn rejects_bad_records() {
        let cases = [
            r#"[]"#,
            r#"[{"shape":"cone","center":[0,0,0],"dims":[1],"color":[1,1,1],"density":1}]"#,
            r#"[{"shape":"box","center":[0,0,0],"dims":[1,1],"color":[1,1,1],"density":1}]"#,
            r#"[{"shape":"sphere","center":[0,0,0],"dims":[-1],"color":[1,1,1],"density":1}]"#,
            r#"[{"shape":"sphere","center":[0,0,0],"dims":[0.2],"axis":"x","color":[1,1,1],"density":1}]"#,
            r#"[{"shape":"sphere","center":[0,0,0],"dims":[0.2],"color":[1,1,1],"density":1,"extra":2}]"#,
            r#"{"shape":"sphere"}"#,
        ];
        for c in cases {
            assert!(matches!(parse_scene(c), Err(CliError::Config(_))), "{c}");
        }
    }
}
