//! Plain-text map and robot-shape files.
//!
//! ```text
//! # comments and blank lines are ignored
//! max_gap 0.010000                 # optional, default 0.01
//! bounds 0.000000 0.000000 5.000000 5.000000   # map files only: xmin ymin xmax ymax
//! reference 0.000000 0.000000      # shape files only: reference point
//! polygon
//! 1.000000 1.000000
//! 2.000000 1.000000
//! 2.000000 2.000000
//! end
//! ```
//!
//! A map has one `bounds` line and any number of `polygon ... end` blocks
//! (one per obstacle). A shape file has a `reference` line and exactly one
//! polygon; vertices are shifted so the reference point becomes the body-frame
//! origin. Each polygon lists the vertices of a closed loop (the closing edge
//! is implicit) and is resampled to `max_gap` on load. Coordinates are written
//! with 6 decimal places.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{
    Aabb, BoundarySamples, GeometryError, ObstacleSet, RobotShape, Vec2, DEFAULT_MAX_GAP,
};

#[derive(Debug, Error)]
pub enum MapFileError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("missing `{0}` line")]
    Missing(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Vertex-level description of a map, before resampling.
#[derive(Debug, Clone, PartialEq)]
pub struct MapSource {
    pub bounds: Aabb,
    pub max_gap: f64,
    pub polygons: Vec<Vec<Vec2>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSource {
    pub reference: Vec2,
    pub max_gap: f64,
    pub polygon: Vec<Vec2>,
}

impl MapSource {
    pub fn build(&self) -> Result<ObstacleSet, MapFileError> {
        let obstacles = self
            .polygons
            .iter()
            .map(|p| BoundarySamples::from_polygon(p, self.max_gap))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ObstacleSet::new(obstacles, self.bounds)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "max_gap {:.6}", self.max_gap);
        let (a, b) = (self.bounds.min, self.bounds.max);
        let _ = writeln!(out, "bounds {:.6} {:.6} {:.6} {:.6}", a.x, a.y, b.x, b.y);
        for poly in &self.polygons {
            write_polygon(&mut out, poly);
        }
        out
    }
}

impl ShapeSource {
    pub fn build(&self) -> Result<RobotShape, MapFileError> {
        let body: Vec<Vec2> = self.polygon.iter().map(|p| *p - self.reference).collect();
        Ok(RobotShape::new(BoundarySamples::from_polygon(&body, self.max_gap)?))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "reference {:.6} {:.6}", self.reference.x, self.reference.y);
        let _ = writeln!(out, "max_gap {:.6}", self.max_gap);
        write_polygon(&mut out, &self.polygon);
        out
    }
}

fn write_polygon(out: &mut String, poly: &[Vec2]) {
    out.push_str("polygon\n");
    for p in poly {
        let _ = writeln!(out, "{:.6} {:.6}", p.x, p.y);
    }
    out.push_str("end\n");
}

struct Parsed {
    bounds: Option<Aabb>,
    reference: Option<Vec2>,
    max_gap: f64,
    polygons: Vec<Vec<Vec2>>,
}

fn parse_numbers<const N: usize>(fields: &[&str], line: usize) -> Result<[f64; N], MapFileError> {
    if fields.len() != N {
        return Err(MapFileError::Syntax {
            line,
            msg: format!("expected {N} numbers, found {}", fields.len()),
        });
    }
    let mut out = [0.0f64; N];
    for (o, f) in out.iter_mut().zip(fields) {
        *o = f.parse().map_err(|_| MapFileError::Syntax { line, msg: format!("bad number `{f}`") })?;
        if !o.is_finite() {
            return Err(MapFileError::Syntax { line, msg: format!("non-finite number `{f}`") });
        }
    }
    Ok(out)
}

fn parse(text: &str) -> Result<Parsed, MapFileError> {
    let mut parsed =
        Parsed { bounds: None, reference: None, max_gap: DEFAULT_MAX_GAP, polygons: Vec::new() };
    let mut current: Option<Vec<Vec2>> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        let syntax = |msg: &str| MapFileError::Syntax { line, msg: msg.to_string() };
        if let Some(poly) = current.as_mut() {
            if fields == ["end"] {
                parsed.polygons.push(current.take().unwrap_or_default());
            } else {
                let [x, y] = parse_numbers::<2>(&fields, line)?;
                poly.push(Vec2::new(x, y));
            }
            continue;
        }
        match fields[0] {
            "polygon" if fields.len() == 1 => current = Some(Vec::new()),
            "bounds" => {
                if parsed.bounds.is_some() {
                    return Err(syntax("duplicate `bounds`"));
                }
                let [x0, y0, x1, y1] = parse_numbers::<4>(&fields[1..], line)?;
                parsed.bounds = Some(Aabb::new(Vec2::new(x0, y0), Vec2::new(x1, y1))?);
            }
            "reference" => {
                if parsed.reference.is_some() {
                    return Err(syntax("duplicate `reference`"));
                }
                let [x, y] = parse_numbers::<2>(&fields[1..], line)?;
                parsed.reference = Some(Vec2::new(x, y));
            }
            "max_gap" => {
                let [g] = parse_numbers::<1>(&fields[1..], line)?;
                if g <= 0.0 {
                    return Err(syntax("max_gap must be positive"));
                }
                parsed.max_gap = g;
            }
            other => return Err(syntax(&format!("unexpected `{other}`"))),
        }
    }
    if current.is_some() {
        return Err(MapFileError::Syntax { line: text.lines().count(), msg: "unterminated polygon".into() });
    }
    Ok(parsed)
}

pub fn parse_map(text: &str) -> Result<MapSource, MapFileError> {
    let p = parse(text)?;
    if p.reference.is_some() {
        return Err(MapFileError::Syntax { line: 0, msg: "`reference` is only valid in shape files".into() });
    }
    Ok(MapSource { bounds: p.bounds.ok_or(MapFileError::Missing("bounds"))?, max_gap: p.max_gap, polygons: p.polygons })
}

pub fn parse_shape(text: &str) -> Result<ShapeSource, MapFileError> {
    let mut p = parse(text)?;
    let reference = p.reference.ok_or(MapFileError::Missing("reference"))?;
    if p.polygons.len() != 1 {
        return Err(MapFileError::Syntax {
            line: 0,
            msg: format!("shape file needs exactly one polygon, found {}", p.polygons.len()),
        });
    }
    Ok(ShapeSource { reference, max_gap: p.max_gap, polygon: p.polygons.remove(0) })
}

pub fn load_map(path: impl AsRef<Path>) -> Result<ObstacleSet, MapFileError> {
    parse_map(&std::fs::read_to_string(path)?)?.build()
}

pub fn load_shape(path: impl AsRef<Path>) -> Result<RobotShape, MapFileError> {
    parse_shape(&std::fs::read_to_string(path)?)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAP: &str = "\
# two boxes
bounds 0 0 5 5
polygon
1 1
2 1
2 2
1 2
end

polygon   # second
3 3
4 3
3.5 4
end
";

    #[test]
    fn parses_map() {
        let src = parse_map(MAP).unwrap();
        assert_eq!(src.polygons.len(), 2);
        assert_eq!(src.max_gap, DEFAULT_MAX_GAP);
        let obs = src.build().unwrap();
        assert_eq!(obs.len(), 2);
        assert_eq!(obs.obstacles()[0].len(), 400);
    }

    #[test]
    fn text_round_trip() {
        let src = parse_map(MAP).unwrap();
        assert_eq!(parse_map(&src.to_text()).unwrap(), src);
        let shape = ShapeSource {
            reference: Vec2::new(0.1, 0.0),
            max_gap: 0.02,
            polygon: vec![Vec2::new(0.0, 0.0), Vec2::new(0.4, 0.0), Vec2::new(0.0, 0.3)],
        };
        assert_eq!(parse_shape(&shape.to_text()).unwrap(), shape);
    }

    #[test]
    fn shape_is_shifted_to_reference() {
        let text = "reference 1 1\npolygon\n1 1\n2 1\n1 2\nend\n";
        let shape = parse_shape(text).unwrap().build().unwrap();
        assert_eq!(shape.body_boundary().points()[0], Vec2::new(0.0, 0.0));
        assert_eq!(shape.extreme_radius(), 1.0);
    }

    #[test]
    fn syntax_errors() {
        assert!(matches!(parse_map("polygon\n0 0\n1 0\n0 1\nend\n"), Err(MapFileError::Missing("bounds"))));
        assert!(matches!(parse_map("bounds 0 0 1\n"), Err(MapFileError::Syntax { line: 1, .. })));
        assert!(matches!(parse_map("bounds 0 0 1 1\npolygon\n0 0\n"), Err(MapFileError::Syntax { .. })));
        assert!(matches!(parse_map("bounds 0 0 1 1\nwat\n"), Err(MapFileError::Syntax { line: 2, .. })));
        assert!(matches!(parse_shape("polygon\n0 0\n1 0\n0 1\nend\n"), Err(MapFileError::Missing("reference"))));
        assert!(matches!(
            parse_map("bounds 0 0 1 1\npolygon\n0 0\n3 0\n0 3\nend\n").unwrap().build(),
            Err(MapFileError::Geometry(GeometryError::OutOfBounds { .. }))
        ));
    }
}
