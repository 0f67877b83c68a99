//! Minimal GeoJSON reading and writing for the pipeline's vector artifacts.
//! Coordinates are planar meters in whatever projected CRS the inputs use.

use std::path::Path;

use serde_json::{json, Map, Value};

use crate::corridor::CorridorPolygon;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::osm::{LaneFeature, LaneSource, RoadSegment, Tags};

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    LineString(Vec<Point>),
    MultiLineString(Vec<Vec<Point>>),
    Polygon(Vec<Vec<Point>>),
}

impl Geometry {
    /// Line parts; multi-lines yield each part.
    pub fn lines(&self) -> Vec<&[Point]> {
        match self {
            Geometry::LineString(l) => vec![l.as_slice()],
            Geometry::MultiLineString(ls) => ls.iter().map(Vec::as_slice).collect(),
            Geometry::Polygon(_) => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub geometry: Geometry,
    pub properties: Map<String, Value>,
}

fn coords(line: &[Point]) -> Value {
    Value::Array(line.iter().map(|p| json!([p.x, p.y])).collect())
}

pub fn line_feature(line: &[Point], properties: Map<String, Value>) -> Value {
    json!({
        "type": "Feature",
        "geometry": {"type": "LineString", "coordinates": coords(line)},
        "properties": properties,
    })
}

pub fn polygon_feature(rings: &[&[Point]], properties: Map<String, Value>) -> Value {
    json!({
        "type": "Feature",
        "geometry": {"type": "Polygon", "coordinates": rings.iter().map(|r| coords(r)).collect::<Vec<_>>()},
        "properties": properties,
    })
}

pub fn collection(features: Vec<Value>) -> Value {
    json!({"type": "FeatureCollection", "features": features})
}

pub fn write_json(value: &Value, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(Error::io(path))
}

fn parse_point(v: &Value) -> Option<Point> {
    let a = v.as_array()?;
    let p = Point::new(a.first()?.as_f64()?, a.get(1)?.as_f64()?);
    p.is_finite().then_some(p)
}

fn parse_line(v: &Value) -> Option<Vec<Point>> {
    v.as_array()?.iter().map(parse_point).collect()
}

fn parse_lines(v: &Value) -> Option<Vec<Vec<Point>>> {
    v.as_array()?.iter().map(parse_line).collect()
}

fn parse_geometry(v: &Value) -> std::result::Result<Geometry, String> {
    let kind = v.get("type").and_then(Value::as_str).ok_or("geometry without type")?;
    let c = v.get("coordinates").ok_or("geometry without coordinates")?;
    let bad = || format!("bad {kind} coordinates");
    Ok(match kind {
        "LineString" => Geometry::LineString(parse_line(c).ok_or_else(bad)?),
        "MultiLineString" => Geometry::MultiLineString(parse_lines(c).ok_or_else(bad)?),
        "Polygon" => Geometry::Polygon(parse_lines(c).ok_or_else(bad)?),
        other => return Err(format!("unsupported geometry type {other}")),
    })
}

pub fn parse_features(bytes: &[u8]) -> Result<Vec<Feature>> {
    let v: Value = serde_json::from_slice(bytes).map_err(|e| Error::decode(None, e))?;
    let features = v
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::decode(None, "not a FeatureCollection"))?;
    features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let geometry = f
                .get("geometry")
                .ok_or_else(|| "feature without geometry".to_string())
                .and_then(parse_geometry)
                .map_err(|m| Error::decode(Some(i), m))?;
            let properties = f.get("properties").and_then(Value::as_object).cloned().unwrap_or_default();
            Ok(Feature { geometry, properties })
        })
        .collect()
}

pub fn read_features(path: &Path) -> Result<Vec<Feature>> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    parse_features(&bytes).map_err(|e| match e {
        Error::Decode { index, message } => Error::decode(index, format!("{}: {message}", path.display())),
        e => e,
    })
}

pub fn segment_properties(s: &RoadSegment) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("id".into(), json!(s.id));
    m.insert("lanes".into(), json!(s.lanes));
    m.insert("length_m".into(), json!(s.length_m));
    m.insert("tags".into(), json!(s.tags));
    m
}

pub fn segments_to_geojson(segments: &[RoadSegment]) -> Value {
    collection(segments.iter().map(|s| line_feature(&s.geometry, segment_properties(s))).collect())
}

pub fn read_segments(path: &Path) -> Result<Vec<RoadSegment>> {
    read_features(path)?
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let p = &f.properties;
            let id = p
                .get("id")
                .and_then(Value::as_i64)
                .ok_or_else(|| Error::decode(Some(i), "segment without integer id"))?;
            let lanes = p.get("lanes").and_then(Value::as_u64).unwrap_or(crate::osm::DEFAULT_LANES as u64);
            let tags: Tags = match p.get("tags") {
                Some(t) => serde_json::from_value(t.clone()).map_err(|e| Error::decode(Some(i), e))?,
                None => Tags::new(),
            };
            let Geometry::LineString(line) = f.geometry else {
                return Err(Error::decode(Some(i), "segment geometry must be a LineString"));
            };
            let lanes = u32::try_from(lanes).map_err(|_| Error::decode(Some(i), "lane count too large"))?;
            RoadSegment::new(id, line, lanes, tags)
        })
        .collect()
}

pub fn corridors_to_geojson(polys: &[CorridorPolygon], kind: &str) -> Value {
    collection(
        polys
            .iter()
            .map(|c| {
                let mut m = Map::new();
                m.insert("unit_id".into(), json!(c.unit_id));
                m.insert("kind".into(), json!(kind));
                m.insert("radius_m".into(), json!(c.radius_m));
                m.insert("centerline".into(), coords(&c.centerline));
                polygon_feature(&c.rings().collect::<Vec<_>>(), m)
            })
            .collect(),
    )
}

/// Reads corridors written by [`corridors_to_geojson`], optionally keeping
/// only one `kind`.
pub fn read_corridors(path: &Path, kind: Option<&str>) -> Result<Vec<CorridorPolygon>> {
    let mut out = Vec::new();
    for (i, f) in read_features(path)?.into_iter().enumerate() {
        let p = &f.properties;
        if kind.is_some_and(|k| p.get("kind").and_then(Value::as_str) != Some(k)) {
            continue;
        }
        let err = |m: &str| Error::decode(Some(i), m.to_string());
        let Geometry::Polygon(mut rings) = f.geometry else {
            return Err(err("corridor geometry must be a Polygon"));
        };
        if rings.is_empty() {
            return Err(err("corridor without rings"));
        }
        let exterior = rings.remove(0);
        out.push(CorridorPolygon {
            unit_id: p.get("unit_id").and_then(Value::as_i64).ok_or_else(|| err("missing unit_id"))?,
            exterior,
            holes: rings,
            radius_m: p.get("radius_m").and_then(Value::as_f64).ok_or_else(|| err("missing radius_m"))?,
            centerline: p.get("centerline").and_then(parse_line).ok_or_else(|| err("missing centerline"))?,
        });
    }
    Ok(out)
}

/// Traffic-volume polylines: each line part with its `dtv` (vehicles/day).
pub fn read_traffic_volume(path: &Path) -> Result<Vec<(Vec<Point>, f64)>> {
    let mut out = Vec::new();
    for (i, f) in read_features(path)?.into_iter().enumerate() {
        let dtv = f
            .properties
            .get("dtv")
            .and_then(Value::as_f64)
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::decode(Some(i), "traffic feature without numeric dtv"))?;
        out.extend(f.geometry.lines().into_iter().map(|l| (l.to_vec(), dtv)));
    }
    Ok(out)
}

pub fn read_lane_source(path: &Path) -> Result<LaneSource> {
    let mut features = Vec::new();
    for (i, f) in read_features(path)?.into_iter().enumerate() {
        let lanes = f
            .properties
            .get("lanes")
            .and_then(Value::as_u64)
            .filter(|&l| l >= 1 && l <= u32::MAX as u64)
            .ok_or_else(|| Error::decode(Some(i), "lane feature without positive integer lanes"))?;
        features.extend(f.geometry.lines().into_iter().map(|l| LaneFeature {
            geometry: l.to_vec(),
            lanes: lanes as u32,
        }));
    }
    Ok(LaneSource { features })
}
