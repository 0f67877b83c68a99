//! Deterministic synthetic scenes: orthophoto tile, OSM network, planted
//! crack ground truth, traffic volumes and a temperature stack.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map};

use crate::classify::Label;
use crate::corridor::{self, CorridorPolygon, PixelMask, LANE_WIDTH_M, RAIL_BUFFER_M};
use crate::covariate::TemperatureStack;
use crate::error::{Error, Result};
use crate::geojson;
use crate::geometry::{Bbox, Point};
use crate::grid::GridSpec;
use crate::osm::{RoadSegment, Tags};
use crate::par;
use crate::pipeline::{Paths, PipelineConfig};
use crate::raster::{self, GeoRaster};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrackStyle {
    pub width_px: usize,
    /// Gray levels below the local asphalt value.
    pub darkness_delta: u8,
}

impl Default for CrackStyle {
    fn default() -> Self {
        CrackStyle {
            width_px: 2,
            darkness_delta: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadSpec {
    pub id: i64,
    pub polyline: Vec<Point>,
    #[serde(default = "default_lanes")]
    pub lanes: u32,
    /// Patch-grid cells `[row, col]` that receive one crack each.
    #[serde(default)]
    pub planted_crack_tiles: Vec<[usize; 2]>,
    /// Traffic volume in vehicles/day, emitted as a parallel polyline.
    #[serde(default)]
    pub dtv: Option<f64>,
}

fn default_lanes() -> u32 {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSpec {
    pub id: i64,
    pub polyline: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstSpec {
    pub cell_m: f64,
    pub layers: usize,
    pub base: f64,
    /// Amplitude of cell `(row, col)` is `amplitude + row_step·row + col_step·col`.
    pub amplitude: f64,
    pub row_step: f64,
    pub col_step: f64,
}

impl Default for LstSpec {
    fn default() -> Self {
        LstSpec {
            cell_m: 30.0,
            layers: 3,
            base: 18.0,
            amplitude: 12.0,
            row_step: 2.5,
            col_step: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    #[serde(default = "default_tile_id")]
    pub tile_id: String,
    pub extent_m: [f64; 2],
    /// Upper-left corner.
    pub origin: Point,
    #[serde(default = "default_pixel_size")]
    pub pixel_size: f64,
    #[serde(default = "default_patch_px")]
    pub patch_px: usize,
    pub roads: Vec<RoadSpec>,
    #[serde(default)]
    pub rail_bridges: Vec<LineSpec>,
    /// Motorway tunnels: present in the OSM export, absent from the imagery.
    #[serde(default)]
    pub tunnels: Vec<LineSpec>,
    #[serde(default = "default_background")]
    pub background_gray: u8,
    #[serde(default = "default_road_gray")]
    pub road_gray: u8,
    #[serde(default = "default_rail_gray")]
    pub rail_gray: u8,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    #[serde(default)]
    pub crack_style: CrackStyle,
    #[serde(default)]
    pub lst: LstSpec,
    #[serde(default = "default_datetime")]
    pub datetime: String,
}

fn default_tile_id() -> String {
    "scene".into()
}
fn default_pixel_size() -> f64 {
    0.1
}
fn default_patch_px() -> usize {
    crate::tiler::PATCH_PX
}
fn default_background() -> u8 {
    70
}
fn default_road_gray() -> u8 {
    125
}
fn default_rail_gray() -> u8 {
    175
}
fn default_noise() -> f64 {
    4.0
}
fn default_datetime() -> String {
    "2023-06-01T10:00:00Z".into()
}

/// Four 2-lane roads across a 100 m × 120 m tile at 10 cm with 0, 2, 5 and
/// 10 planted cracks; a rail bridge crosses the crack-free road.
pub fn demo_spec() -> SceneSpec {
    let (x0, y0) = (2_600_000.0, 1_200_120.0);
    let crack_cols: [&[usize]; 4] = [&[], &[3, 14], &[1, 5, 9, 13, 17], &[0, 2, 4, 6, 8, 11, 13, 15, 17, 19]];
    let dtv = [41_250.0, 86_935.0, 57_480.0, 68_120.0];
    let roads = [2usize, 8, 14, 20]
        .iter()
        .enumerate()
        .map(|(i, &row)| {
            let y = y0 - (row as f64 * 5.0 + 2.5);
            RoadSpec {
                id: 1001 + i as i64,
                polyline: vec![Point::new(x0, y), Point::new(x0 + 50.0, y), Point::new(x0 + 100.0, y)],
                lanes: 2,
                planted_crack_tiles: crack_cols[i].iter().map(|&c| [row, c]).collect(),
                dtv: Some(dtv[i]),
            }
        })
        .collect();
    SceneSpec {
        seed: 20_240_601,
        tile_id: "demo".into(),
        extent_m: [100.0, 120.0],
        origin: Point::new(x0, y0),
        pixel_size: 0.1,
        patch_px: 50,
        roads,
        rail_bridges: vec![LineSpec {
            id: 2001,
            polyline: vec![Point::new(x0 + 50.0, y0 - 2.0), Point::new(x0 + 50.0, y0 - 23.0)],
        }],
        tunnels: vec![LineSpec {
            id: 3001,
            polyline: vec![Point::new(x0, y0 - 57.5), Point::new(x0 + 100.0, y0 - 57.5)],
        }],
        background_gray: default_background(),
        road_gray: default_road_gray(),
        rail_gray: default_rail_gray(),
        noise_sigma: default_noise(),
        crack_style: CrackStyle::default(),
        lst: LstSpec::default(),
        datetime: default_datetime(),
    }
}

pub struct Scene {
    pub spec: SceneSpec,
    pub imagery: GeoRaster,
    /// Label of every patch-grid cell, keyed by patch id.
    pub truth: BTreeMap<String, Label>,
    pub segments: Vec<RoadSegment>,
    pub rails: Vec<RoadSegment>,
    pub lst: TemperatureStack,
}

impl SceneSpec {
    pub fn grid(&self) -> Result<GridSpec> {
        let px = |m: f64| -> Result<usize> {
            let n = m / self.pixel_size;
            if !(n >= 1.0) || (n - n.round()).abs() > 1e-6 {
                return Err(Error::Scene(format!("extent {m} m is not a whole number of {} m pixels", self.pixel_size)));
            }
            Ok(n.round() as usize)
        };
        GridSpec::new(px(self.extent_m[0])?, px(self.extent_m[1])?, self.origin.x, self.origin.y, self.pixel_size)
            .map_err(|e| Error::Scene(e.to_string()))
    }

    pub fn validate(&self) -> Result<GridSpec> {
        let g = self.grid()?;
        if self.crack_style.darkness_delta == 0 {
            return Err(Error::Scene("darkness_delta must be positive".into()));
        }
        if self.crack_style.width_px == 0 || self.patch_px < 20 {
            return Err(Error::Scene("crack width must be positive and patches at least 20 px".into()));
        }
        if !(self.noise_sigma >= 0.0) || !(self.lst.cell_m > 0.0) || self.lst.layers < 2 {
            return Err(Error::Scene("noise_sigma ≥ 0, lst.cell_m > 0 and lst.layers ≥ 2 required".into()));
        }
        if self.tile_id.is_empty() || self.tile_id.contains(['/', '\\', ':']) {
            return Err(Error::Scene(format!("tile id {:?} must be a plain file name without ':'", self.tile_id)));
        }
        let (rows, cols) = (g.height / self.patch_px, g.width / self.patch_px);
        let mut ids = std::collections::BTreeSet::new();
        for r in &self.roads {
            for &[row, col] in &r.planted_crack_tiles {
                if row >= rows || col >= cols {
                    return Err(Error::Scene(format!("road {}: crack cell [{row}, {col}] outside the {rows}x{cols} patch grid", r.id)));
                }
            }
        }
        for id in self.roads.iter().map(|r| r.id).chain(self.rail_bridges.iter().chain(&self.tunnels).map(|l| l.id)) {
            if id <= 0 || !ids.insert(id) {
                return Err(Error::Scene(format!("way id {id} must be positive and unique")));
            }
        }
        Ok(g)
    }
}

fn tags(pairs: &[(&str, String)]) -> Tags {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn road_tags(lanes: u32) -> Tags {
    tags(&[("highway", "motorway".into()), ("lanes", lanes.to_string())])
}

fn rail_tags() -> Tags {
    tags(&[("railway", "rail".into()), ("bridge", "yes".into())])
}

/// Pixels of the crack drawn in cell `(row, col)`: a shallow diagonal across
/// the middle of the cell, well inside its borders.
fn crack_pixels(patch_px: usize, row: usize, col: usize, width: usize) -> Vec<(usize, usize)> {
    let n = patch_px;
    let (c0, c1) = (n / 10, n - n / 10);
    let (r0, r1) = (n * 44 / 100, n * 56 / 100);
    let mut out = Vec::new();
    for c in c0..c1 {
        let r = r0 + (c - c0) * (r1 - r0) / (c1 - c0);
        for w in 0..width.min(n / 5) {
            out.push((col * n + c, row * n + r + w));
        }
    }
    out
}

pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    let g = spec.validate()?;
    let segments = spec
        .roads
        .iter()
        .map(|r| RoadSegment::new(r.id, r.polyline.clone(), r.lanes, road_tags(r.lanes)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Scene(e.to_string()))?;
    let rails = spec
        .rail_bridges
        .iter()
        .map(|l| RoadSegment::new(l.id, l.polyline.clone(), 1, rail_tags()))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Scene(e.to_string()))?;
    let road_polys: Vec<CorridorPolygon> = segments
        .iter()
        .map(|s| corridor::segment_corridor(s, LANE_WIDTH_M, 0.0))
        .collect::<Result<_>>()?;
    let rail_polys: Vec<CorridorPolygon> = rails
        .iter()
        .map(|s| corridor::occluder_corridor(s, RAIL_BUFFER_M))
        .collect::<Result<_>>()?;
    let road_mask = corridor::rasterize(&road_polys, &g)?;
    let rail_mask = corridor::rasterize(&rail_polys, &g)?;

    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Scene(e.to_string()))?;
    let rows = par::map_range(g.height, |row| {
        // one stream per row keeps the noise independent of thread count
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(row as u64);
        (0..g.width)
            .map(|col| {
                let n: f64 = noise.sample(&mut rng);
                if rail_mask.get(col, row) {
                    spec.rail_gray
                } else if road_mask.get(col, row) {
                    (spec.road_gray as f64 + n).round().clamp(1.0, 255.0) as u8
                } else {
                    spec.background_gray
                }
            })
            .collect::<Vec<u8>>()
    });
    let mut gray = rows.concat();

    let (prow, pcol) = (g.height / spec.patch_px, g.width / spec.patch_px);
    let mut cracked = std::collections::BTreeSet::new();
    for (r, poly) in spec.roads.iter().zip(&road_polys) {
        for &[row, col] in &r.planted_crack_tiles {
            draw_crack(spec, &g, &road_mask, &rail_mask, poly, row, col, &mut gray)?;
            cracked.insert((row, col));
        }
    }
    let truth = (0..prow)
        .flat_map(|r| (0..pcol).map(move |c| (r, c)))
        .map(|(r, c)| {
            let l = if cracked.contains(&(r, c)) { Label::Crack } else { Label::NoCrack };
            (format!("{}:{r}:{c}", spec.tile_id), l)
        })
        .collect();

    let rgb: Vec<u8> = gray.iter().flat_map(|&v| [v, v, v]).collect();
    let imagery = GeoRaster::from_u8(g, 3, rgb, None)?;
    let lst = temperature_stack(spec)?;
    Ok(Scene {
        spec: spec.clone(),
        imagery,
        truth,
        segments,
        rails,
        lst,
    })
}

#[allow(clippy::too_many_arguments)]
fn draw_crack(
    spec: &SceneSpec,
    g: &GridSpec,
    road: &PixelMask,
    rail: &PixelMask,
    poly: &CorridorPolygon,
    row: usize,
    col: usize,
    gray: &mut [u8],
) -> Result<()> {
    let n = spec.patch_px as f64;
    let center = Point::new(
        g.origin_x + (col as f64 + 0.5) * n * g.pixel_size,
        g.origin_y - (row as f64 + 0.5) * n * g.pixel_size,
    );
    if !poly.contains(center) {
        return Err(Error::Scene(format!("crack cell [{row}, {col}] is not on road {}", poly.unit_id)));
    }
    for (c, r) in crack_pixels(spec.patch_px, row, col, spec.crack_style.width_px) {
        if !road.get(c, r) || rail.get(c, r) {
            return Err(Error::Scene(format!(
                "crack cell [{row}, {col}] of road {} leaves the visible road surface",
                poly.unit_id
            )));
        }
        let v = &mut gray[r * g.width + c];
        *v = v.saturating_sub(spec.crack_style.darkness_delta).max(1);
    }
    Ok(())
}

/// Layer `k` holds `base + amplitude·f_k` with `f_0 = 0`, `f_1 = 1` and the
/// rest strictly between, so each cell's amplitude is exact by construction.
/// The last layer has a single nodata cell to exercise gap handling.
fn temperature_stack(spec: &SceneSpec) -> Result<TemperatureStack> {
    let l = &spec.lst;
    let cells = |m: f64| (m / l.cell_m).ceil().max(1.0) as usize;
    let g = GridSpec::new(cells(spec.extent_m[0]), cells(spec.extent_m[1]), spec.origin.x, spec.origin.y, l.cell_m)?;
    let nodata = -9999.0f32;
    let mut layers = Vec::new();
    for k in 0..l.layers {
        let f = match k {
            0 => 0.0,
            1 => 1.0,
            _ => k as f64 / (l.layers as f64 + 1.0),
        };
        let mut data = Vec::with_capacity(g.len());
        for row in 0..g.height {
            for col in 0..g.width {
                let amp = l.amplitude + l.row_step * row as f64 + l.col_step * col as f64;
                data.push((l.base + amp * f) as f32);
            }
        }
        if k == l.layers - 1 && k >= 2 {
            data[0] = nodata;
        }
        layers.push(GeoRaster::from_f32(g, data, Some(nodata))?);
    }
    let stamps = (0..l.layers).map(|k| format!("layer-{k}")).collect();
    TemperatureStack::new(layers, stamps)
}

/// OSM XML with planar `x`/`y` node coordinates.
pub fn osm_xml(spec: &SceneSpec) -> String {
    let mut nodes = String::new();
    let mut ways = String::new();
    let mut next = 1i64;
    let mut way = |id: i64, line: &[Point], tags: &Tags| {
        let mut refs = String::new();
        for p in line {
            let _ = writeln!(nodes, "  <node id=\"{next}\" x=\"{}\" y=\"{}\"/>", p.x, p.y);
            let _ = writeln!(refs, "    <nd ref=\"{next}\"/>");
            next += 1;
        }
        let _ = writeln!(ways, "  <way id=\"{id}\">\n{refs}");
        for (k, v) in tags {
            let _ = writeln!(ways, "    <tag k=\"{k}\" v=\"{v}\"/>");
        }
        let _ = writeln!(ways, "  </way>");
    };
    for r in &spec.roads {
        way(r.id, &r.polyline, &road_tags(r.lanes));
    }
    for l in &spec.rail_bridges {
        way(l.id, &l.polyline, &rail_tags());
    }
    for t in &spec.tunnels {
        let mut tg = road_tags(2);
        tg.insert("tunnel".into(), "yes".into());
        way(t.id, &t.polyline, &tg);
    }
    format!("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<osm version=\"0.6\" generator=\"rhcd-synth\">\n{nodes}{ways}</osm>\n")
}

/// Traffic lines offset 1 m from each road centerline.
pub fn traffic_geojson(spec: &SceneSpec) -> serde_json::Value {
    let features = spec
        .roads
        .iter()
        .filter_map(|r| {
            let dtv = r.dtv?;
            let line: Vec<Point> = r.polyline.iter().map(|p| Point::new(p.x, p.y + 1.0)).collect();
            let mut m = Map::new();
            m.insert("dtv".into(), json!(dtv));
            m.insert("source_id".into(), json!(r.id));
            Some(geojson::line_feature(&line, m))
        })
        .collect();
    geojson::collection(features)
}

#[derive(Debug, Clone)]
pub struct SceneFiles {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub truth: PathBuf,
    pub imagery: PathBuf,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(Error::io(d))?;
    }
    std::fs::write(path, bytes).map_err(Error::io(path))
}

fn pretty(v: &impl Serialize) -> Vec<u8> {
    let mut b = serde_json::to_vec_pretty(v).expect("serializable");
    b.push(b'\n');
    b
}

/// Writes the scene inputs plus a `catalog.json` manifest and a
/// `pipeline.json` config wired to them.
pub fn write_scene(scene: &Scene, dir: &Path) -> Result<SceneFiles> {
    std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let dir = std::fs::canonicalize(dir).map_err(Error::io(dir))?;
    let spec = &scene.spec;
    write(&dir.join("scene.json"), &pretty(spec))?;
    write(&dir.join("network.osm"), osm_xml(spec).as_bytes())?;
    write(&dir.join("traffic.geojson"), &pretty(&traffic_geojson(spec)))?;
    write(&dir.join("truth.json"), &pretty(&scene.truth))?;
    let mut truth_segments = geojson::segments_to_geojson(&scene.segments);
    for (f, r) in truth_segments["features"].as_array_mut().into_iter().flatten().zip(&spec.roads) {
        f["properties"]["planted_cracks"] = json!(r.planted_crack_tiles.len());
    }
    write(&dir.join("segments_truth.geojson"), &pretty(&truth_segments))?;

    let imagery = dir.join("source").join(format!("{}.ppm", spec.tile_id));
    std::fs::create_dir_all(imagery.parent().unwrap()).map_err(Error::io(&imagery))?;
    raster::write_raster(&scene.imagery, &imagery)?;
    let wld = raster::world_file_path(&imagery);
    let size = |p: &Path| std::fs::metadata(p).map(|m| m.len()).map_err(Error::io(p));
    let bbox: Bbox = scene.imagery.grid.bbox();
    let catalog = json!({
        "type": "FeatureCollection",
        "features": [{
            "type": "Feature",
            "id": spec.tile_id,
            "bbox": [bbox.xmin, bbox.ymin, bbox.xmax, bbox.ymax],
            "properties": {"datetime": spec.datetime},
            "assets": {
                "image": {"href": format!("file://{}", imagery.display()), "file:size": size(&imagery)?},
                "world_file": {"href": format!("file://{}", wld.display()), "file:size": size(&wld)?},
            },
        }],
    });
    write(&dir.join("catalog.json"), &pretty(&catalog))?;

    let mut lst_layers = Vec::new();
    for (k, layer) in scene.lst.layers.iter().enumerate() {
        let rel = PathBuf::from(format!("lst/lst_{k}.f32"));
        let path = dir.join(&rel);
        std::fs::create_dir_all(path.parent().unwrap()).map_err(Error::io(&path))?;
        raster::write_raster(layer, &path)?;
        lst_layers.push(rel);
    }

    let cfg = PipelineConfig {
        crs_note: "synthetic planar meters".into(),
        patch_px: spec.patch_px,
        paths: Paths {
            osm: Some("network.osm".into()),
            lanes: None,
            catalog: Some("catalog.json".into()),
            lst_layers,
            traffic: Some("traffic.geojson".into()),
            truth: Some("truth.json".into()),
            work_dir: "work".into(),
        },
        ..PipelineConfig::default()
    };
    let config = dir.join("pipeline.json");
    write(&config, &pretty(&cfg))?;
    Ok(SceneFiles {
        truth: dir.join("truth.json"),
        imagery,
        config,
        dir,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_is_valid_and_deterministic() {
        let spec = demo_spec();
        let a = generate_scene(&spec).unwrap();
        let b = generate_scene(&spec).unwrap();
        assert_eq!(a.imagery, b.imagery);
        let cracks = a.truth.values().filter(|&&l| l == Label::Crack).count();
        assert_eq!(cracks, 17);
        assert_eq!(a.truth.len(), 20 * 24);
    }

    #[test]
    fn seed_changes_noise_not_truth() {
        let mut spec = demo_spec();
        let a = generate_scene(&spec).unwrap();
        spec.seed += 1;
        let b = generate_scene(&spec).unwrap();
        assert_ne!(a.imagery, b.imagery);
        assert_eq!(a.truth, b.truth);
    }

    #[test]
    fn no_cracks_means_all_negative() {
        let mut spec = demo_spec();
        for r in &mut spec.roads {
            r.planted_crack_tiles.clear();
        }
        let s = generate_scene(&spec).unwrap();
        assert!(s.truth.values().all(|&l| l == Label::NoCrack));
    }

    #[test]
    fn crack_off_road_is_rejected() {
        let mut spec = demo_spec();
        spec.roads[0].planted_crack_tiles.push([5, 3]);
        assert!(matches!(generate_scene(&spec), Err(Error::Scene(_))));
        let mut spec = demo_spec();
        // under the rail bridge
        spec.roads[0].planted_crack_tiles.push([2, 10]);
        assert!(matches!(generate_scene(&spec), Err(Error::Scene(_))));
        let mut spec = demo_spec();
        spec.roads[0].planted_crack_tiles.push([99, 0]);
        assert!(matches!(generate_scene(&spec), Err(Error::Scene(_))));
    }

    #[test]
    fn stack_amplitudes_exact() {
        let s = generate_scene(&demo_spec()).unwrap();
        let amp = crate::covariate::lt_lst_a(&s.lst, 2).unwrap();
        assert_eq!((amp.grid.width, amp.grid.height), (4, 4));
        let v = amp.value(1, 2).unwrap();
        assert!((v - (12.0 + 2.5 * 2.0 + 0.5)).abs() < 1e-4, "{v}");
    }
}
