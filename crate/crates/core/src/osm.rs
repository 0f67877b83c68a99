//! OSM XML ingestion (node/way subset) and motorway / rail-bridge extraction.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{nearest_feature, polyline_length, Point};

pub type Tags = BTreeMap<String, String>;

/// Lane count assumed when a way has no usable `lanes` tag. Motorway
/// carriageways are mapped as one way per driving direction.
pub const DEFAULT_LANES: u32 = 2;

/// Maximum mean vertex distance for attributing a lane-source feature.
pub const LANE_MATCH_MAX_M: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Way {
    pub id: i64,
    pub node_ids: Vec<i64>,
    pub tags: Tags,
}

impl Way {
    pub fn tag(&self, key: &str) -> Option<&str> {
        self.tags.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OsmNetwork {
    pub nodes: HashMap<i64, Point>,
    pub ways: Vec<Way>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSegment {
    pub id: i64,
    pub geometry: Vec<Point>,
    pub lanes: u32,
    pub length_m: f64,
    pub tags: Tags,
}

impl RoadSegment {
    pub fn new(id: i64, geometry: Vec<Point>, lanes: u32, tags: Tags) -> Result<Self> {
        if geometry.len() < 2 {
            return Err(Error::Geometry(format!("segment {id} has fewer than 2 vertices")));
        }
        if lanes == 0 {
            return Err(Error::invalid(format!("segment {id} has zero lanes")));
        }
        let length_m = polyline_length(&geometry);
        if !(length_m > 0.0 && length_m.is_finite()) {
            return Err(Error::Geometry(format!("segment {id} has zero length")));
        }
        Ok(RoadSegment {
            id,
            geometry,
            lanes,
            length_m,
            tags,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneFeature {
    pub geometry: Vec<Point>,
    pub lanes: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LaneSource {
    pub features: Vec<LaneFeature>,
}

/// Non-fatal issue encountered while extracting segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Warning {
    pub way_id: i64,
    pub message: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ParseOptions {
    /// Nodes carrying `lat`/`lon` already hold metric coordinates
    /// (`lon` → x, `lat` → y). Without it only `x`/`y` attributes are accepted.
    pub projected: bool,
}

/// `BufRead` adapter that counts consumed newlines for error reporting.
struct LineCounter<R> {
    inner: R,
    newlines: u64,
}

impl<R: BufRead> std::io::Read for LineCounter<R> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.newlines += buf[..n].iter().filter(|&&b| b == b'\n').count() as u64;
        Ok(n)
    }
}

impl<R: BufRead> BufRead for LineCounter<R> {
    fn fill_buf(&mut self) -> std::io::Result<&[u8]> {
        self.inner.fill_buf()
    }

    fn consume(&mut self, amt: usize) {
        if let Ok(buf) = self.inner.fill_buf() {
            let amt = amt.min(buf.len());
            self.newlines += buf[..amt].iter().filter(|&&b| b == b'\n').count() as u64;
        }
        self.inner.consume(amt);
    }
}

enum Context {
    Top,
    /// Inside an element opened at the given depth whose children are ignored.
    Skip(usize),
    Way(Way),
}

/// Streams an OSM XML document into nodes and ways. Relations and node tags
/// are skipped; way tags are kept verbatim.
pub fn parse_osm_xml<R: BufRead>(input: R, opts: ParseOptions) -> Result<OsmNetwork> {
    let mut reader = Reader::from_reader(LineCounter {
        inner: input,
        newlines: 0,
    });
    let mut buf = Vec::new();
    let mut net = OsmNetwork::default();
    let mut ctx = Context::Top;
    let mut depth = 0usize;
    let mut seen_root = false;

    macro_rules! fail {
        ($msg:expr) => {
            return Err(Error::Xml {
                line: reader.get_ref().newlines + 1,
                message: $msg.to_string(),
            })
        };
    }

    loop {
        let event = match reader.read_event_into(&mut buf) {
            Ok(ev) => ev,
            Err(e) => fail!(e),
        };
        match event {
            Event::Start(ref e) | Event::Empty(ref e) => {
                let opens = matches!(event, Event::Start(_));
                let name = e.name();
                if depth == 0 {
                    if seen_root {
                        fail!("multiple root elements");
                    }
                    if name.as_ref() != b"osm" {
                        fail!(format!("expected <osm> root, found <{}>", String::from_utf8_lossy(name.as_ref())));
                    }
                    seen_root = true;
                } else {
                    match &mut ctx {
                        Context::Skip(_) => {}
                        Context::Top => match name.as_ref() {
                            b"node" => {
                                let (id, p) = match node_from_attrs(e, opts) {
                                    Ok(v) => v,
                                    Err(msg) => fail!(msg),
                                };
                                net.nodes.insert(id, p);
                                if opens {
                                    ctx = Context::Skip(depth);
                                }
                            }
                            b"way" => {
                                let id = match required_i64(e, b"id") {
                                    Ok(v) => v,
                                    Err(msg) => fail!(msg),
                                };
                                let way = Way {
                                    id,
                                    node_ids: Vec::new(),
                                    tags: Tags::new(),
                                };
                                if opens {
                                    ctx = Context::Way(way);
                                } else {
                                    net.ways.push(way);
                                }
                            }
                            _ if opens => ctx = Context::Skip(depth),
                            _ => {}
                        },
                        Context::Way(way) if depth == 2 => match name.as_ref() {
                            b"nd" => match required_i64(e, b"ref") {
                                Ok(r) => way.node_ids.push(r),
                                Err(msg) => fail!(msg),
                            },
                            b"tag" => match (attr(e, b"k"), attr(e, b"v")) {
                                (Ok(Some(k)), Ok(Some(v))) => {
                                    way.tags.insert(k, v);
                                }
                                (Err(m), _) | (_, Err(m)) => fail!(m),
                                _ => fail!(format!("way {}: <tag> without k/v", way.id)),
                            },
                            _ => {}
                        },
                        Context::Way(_) => {}
                    }
                }
                if opens {
                    depth += 1;
                }
            }
            Event::End(_) => {
                if depth == 0 {
                    fail!("unbalanced end tag");
                }
                depth -= 1;
                match ctx {
                    Context::Skip(d) if d == depth => ctx = Context::Top,
                    Context::Way(_) if depth == 1 => {
                        if let Context::Way(way) = std::mem::replace(&mut ctx, Context::Top) {
                            net.ways.push(way);
                        }
                    }
                    _ => {}
                }
            }
            Event::Eof => break,
            _ => {}
        }
        buf.clear();
    }

    if depth != 0 {
        fail!("unexpected end of document (unclosed element)");
    }
    if !seen_root {
        fail!("document has no root element");
    }
    validate_network(&net)?;
    Ok(net)
}

fn validate_network(net: &OsmNetwork) -> Result<()> {
    let mut dangling: Vec<i64> = net
        .ways
        .iter()
        .filter(|w| w.node_ids.iter().any(|id| !net.nodes.contains_key(id)))
        .map(|w| w.id)
        .collect();
    if !dangling.is_empty() {
        dangling.sort_unstable();
        return Err(Error::DanglingReference { way_ids: dangling });
    }
    if let Some(w) = net.ways.iter().find(|w| w.node_ids.len() < 2) {
        return Err(Error::invalid(format!(
            "way {} has {} node refs (need at least 2)",
            w.id,
            w.node_ids.len()
        )));
    }
    Ok(())
}

fn attr(e: &BytesStart<'_>, key: &[u8]) -> std::result::Result<Option<String>, String> {
    for a in e.attributes() {
        let a = a.map_err(|err| err.to_string())?;
        if a.key.as_ref() == key {
            let v = a.unescape_value().map_err(|err| err.to_string())?;
            return Ok(Some(v.into_owned()));
        }
    }
    Ok(None)
}

fn required_i64(e: &BytesStart<'_>, key: &[u8]) -> std::result::Result<i64, String> {
    let elem = String::from_utf8_lossy(e.name().as_ref()).into_owned();
    let key_s = String::from_utf8_lossy(key);
    let raw = attr(e, key)?.ok_or_else(|| format!("<{elem}> missing `{key_s}` attribute"))?;
    raw.trim()
        .parse()
        .map_err(|_| format!("<{elem}> attribute `{key_s}` is not an integer: {raw:?}"))
}

fn required_f64(e: &BytesStart<'_>, key: &[u8], id: i64) -> std::result::Result<f64, String> {
    let key_s = String::from_utf8_lossy(key);
    let raw = attr(e, key)?.ok_or_else(|| format!("node {id} missing `{key_s}`"))?;
    let v: f64 = raw
        .trim()
        .parse()
        .map_err(|_| format!("node {id}: `{key_s}` is not a number: {raw:?}"))?;
    if !v.is_finite() {
        return Err(format!("node {id}: `{key_s}` is not finite"));
    }
    Ok(v)
}

fn node_from_attrs(e: &BytesStart<'_>, opts: ParseOptions) -> std::result::Result<(i64, Point), String> {
    let id = required_i64(e, b"id")?;
    if attr(e, b"x")?.is_some() || attr(e, b"y")?.is_some() {
        return Ok((id, Point::new(required_f64(e, b"x", id)?, required_f64(e, b"y", id)?)));
    }
    if !opts.projected {
        return Err(format!(
            "node {id} has geographic lat/lon; set `projected` if they hold metric coordinates"
        ));
    }
    Ok((id, Point::new(required_f64(e, b"lon", id)?, required_f64(e, b"lat", id)?)))
}

fn way_geometry(net: &OsmNetwork, way: &Way) -> Vec<Point> {
    way.node_ids.iter().map(|id| net.nodes[id]).collect()
}

/// Result of a filter pass: matching segments plus non-fatal warnings.
#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub segments: Vec<RoadSegment>,
    pub warnings: Vec<Warning>,
}

fn extract_where(net: &OsmNetwork, keep: impl Fn(&Way) -> bool) -> Extraction {
    let mut out = Extraction::default();
    let mut ways: Vec<&Way> = net.ways.iter().filter(|w| keep(w)).collect();
    ways.sort_by_key(|w| w.id);
    for way in ways {
        let lanes = match way.tag("lanes") {
            None => DEFAULT_LANES,
            Some(raw) => match raw.trim().parse::<u32>() {
                Ok(n) if n >= 1 => n,
                _ => {
                    out.warnings.push(Warning {
                        way_id: way.id,
                        message: format!("unusable lanes tag {raw:?}; using {DEFAULT_LANES}"),
                    });
                    DEFAULT_LANES
                }
            },
        };
        match RoadSegment::new(way.id, way_geometry(net, way), lanes, way.tags.clone()) {
            Ok(seg) => out.segments.push(seg),
            Err(e) => out.warnings.push(Warning {
                way_id: way.id,
                message: format!("skipped: {e}"),
            }),
        }
    }
    out
}

/// Surface motorways: `highway=motorway` and not `tunnel=yes`, sorted by way id.
pub fn extract_motorways(net: &OsmNetwork) -> Extraction {
    extract_where(net, is_surface_motorway)
}

pub fn is_surface_motorway(w: &Way) -> bool {
    w.tag("highway") == Some("motorway") && w.tag("tunnel") != Some("yes")
}

/// Rail bridges (`railway=rail` and `bridge=yes`) that occlude the road surface.
pub fn extract_rail_occluders(net: &OsmNetwork) -> Extraction {
    extract_where(net, |w| w.tag("railway") == Some("rail") && w.tag("bridge") == Some("yes"))
}

/// Replaces each segment's lane count with that of the nearest lane-source
/// feature (mean vertex distance ≤ `max_distance_m`); others keep their lanes.
pub fn match_lanes(segments: &[RoadSegment], source: &LaneSource, max_distance_m: f64) -> Vec<RoadSegment> {
    segments
        .iter()
        .map(|seg| {
            let mut seg = seg.clone();
            let cands = source.features.iter().map(|f| f.geometry.as_slice());
            if let Some(i) = nearest_feature(&seg.geometry, cands, max_distance_m) {
                let lanes = source.features[i].lanes;
                if lanes >= 1 {
                    seg.lanes = lanes;
                }
            }
            seg
        })
        .collect()
}
