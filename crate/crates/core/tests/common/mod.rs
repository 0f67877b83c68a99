//! Helpers shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rhcd::classify::{Classification, ClassifierBackend, HeuristicBackend};
use rhcd::corridor::{self, CorridorPolygon};
use rhcd::geometry::Point;
use rhcd::rhcd::RhcdRecord;
use rhcd::synth::{LineSpec, RoadSpec, Scene, SceneSpec};
use rhcd::tiler::{self, Patch, PatchRecord, TileParams};

#[derive(Default)]
struct State {
    search_body: String,
    assets: HashMap<String, Vec<u8>>,
    counts: HashMap<String, usize>,
    failures: HashMap<String, (usize, u16)>,
    queries: Vec<String>,
}

/// Minimal HTTP/1.1 catalog server on a loopback port: `/search` returns the
/// configured item collection, `/assets/<name>` serves registered bytes.
pub struct MockStac {
    pub addr: SocketAddr,
    state: Arc<Mutex<State>>,
}

impl MockStac {
    pub fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let state = Arc::new(Mutex::new(State::default()));
        let st = state.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let st = st.clone();
                std::thread::spawn(move || handle(stream, &st));
            }
        });
        MockStac { addr, state }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn set_items(&self, collection: &serde_json::Value) {
        self.state.lock().unwrap().search_body = collection.to_string();
    }

    /// Registers an asset and returns its href.
    pub fn add_asset(&self, name: &str, bytes: Vec<u8>) -> String {
        self.state.lock().unwrap().assets.insert(format!("/assets/{name}"), bytes);
        format!("{}/assets/{name}", self.url())
    }

    /// The next `n` requests to `path` answer with `status`.
    pub fn fail_next(&self, path: &str, n: usize, status: u16) {
        self.state.lock().unwrap().failures.insert(path.to_string(), (n, status));
    }

    pub fn count(&self, path: &str) -> usize {
        self.state.lock().unwrap().counts.get(path).copied().unwrap_or(0)
    }

    pub fn queries(&self) -> Vec<String> {
        self.state.lock().unwrap().queries.clone()
    }
}

fn handle(stream: TcpStream, state: &Mutex<State>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut first = String::new();
    if reader.read_line(&mut first).is_err() {
        return;
    }
    loop {
        let mut h = String::new();
        if reader.read_line(&mut h).unwrap_or(0) == 0 || h == "\r\n" {
            break;
        }
    }
    let target = first.split_whitespace().nth(1).unwrap_or("/").to_string();
    let (path, query) = target.split_once('?').unwrap_or((&target, ""));
    let (status, body) = {
        let mut s = state.lock().unwrap();
        *s.counts.entry(path.to_string()).or_default() += 1;
        let fail = s.failures.get_mut(path).filter(|(n, _)| *n > 0).map(|f| {
            f.0 -= 1;
            f.1
        });
        if let Some(code) = fail {
            (code, b"injected failure".to_vec())
        } else if path == "/search" {
            s.queries.push(query.to_string());
            (200, s.search_body.clone().into_bytes())
        } else if let Some(b) = s.assets.get(path) {
            (200, b.clone())
        } else {
            (404, b"not found".to_vec())
        }
    };
    let mut w = stream;
    let _ = write!(
        w,
        "HTTP/1.1 {status} X\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    let _ = w.write_all(&body);
    let _ = w.flush();
}

/// STAC-style item with one imagery asset.
pub fn stac_item(id: &str, bbox: [f64; 4], datetime: &str, href: &str, size: Option<u64>) -> serde_json::Value {
    let mut asset = serde_json::json!({"href": href});
    if let Some(s) = size {
        asset["file:size"] = serde_json::json!(s);
    }
    serde_json::json!({
        "type": "Feature",
        "id": id,
        "bbox": bbox,
        "properties": {"datetime": datetime},
        "assets": {"image": asset},
    })
}

pub fn bin(name: &str) -> &'static str {
    match name {
        "rhcd" => env!("CARGO_BIN_EXE_rhcd"),
        "mock" => env!("CARGO_BIN_EXE_rhcd-mock-classifier"),
        _ => panic!("unknown binary {name}"),
    }
}

pub fn run_cli(args: &[&str]) -> std::process::Output {
    std::process::Command::new(bin("rhcd"))
        .args(args)
        .arg("--log-level")
        .arg("warn")
        .output()
        .expect("cli runs")
}

/// Random scene: axis-aligned roads centered on patch rows or columns, with
/// random lanes and planted cracks, plus an optional crack-free diagonal.
pub fn random_scene_spec(seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, cols) = (rng.random_range(6..12usize), rng.random_range(6..12usize));
    let (w, h) = (cols as f64 * 5.0, rows as f64 * 5.0);
    let origin = Point::new(1000.0 * rng.random_range(0..100) as f64, 5000.0 + h);
    let mut roads = Vec::new();
    let mut used_rows = Vec::new();
    let mut used_cols = Vec::new();
    let n_roads = rng.random_range(1..4);
    for i in 0..n_roads {
        let horizontal = rng.random_bool(0.6);
        let lanes = rng.random_range(2..=3);
        let mut cracks = Vec::new();
        let polyline;
        if horizontal {
            let free: Vec<usize> = (0..rows).filter(|&r| used_rows.iter().all(|&u: &usize| u.abs_diff(r) >= 3)).collect();
            if free.is_empty() {
                continue;
            }
            let row = free[rng.random_range(0..free.len())];
            used_rows.push(row);
            let y = origin.y - (row as f64 * 5.0 + 2.5);
            polyline = vec![Point::new(origin.x, y), Point::new(origin.x + w, y)];
            for c in 0..cols {
                if rng.random_bool(0.3) && !used_cols.iter().any(|&u: &usize| u.abs_diff(c) <= 1) {
                    cracks.push([row, c]);
                }
            }
        } else {
            let free: Vec<usize> = (0..cols).filter(|&c| used_cols.iter().all(|&u: &usize| u.abs_diff(c) >= 3)).collect();
            if free.is_empty() {
                continue;
            }
            let col = free[rng.random_range(0..free.len())];
            used_cols.push(col);
            let x = origin.x + col as f64 * 5.0 + 2.5;
            polyline = vec![Point::new(x, origin.y), Point::new(x, origin.y - h)];
            for r in 0..rows {
                if rng.random_bool(0.3) && !used_rows.iter().any(|&u: &usize| u.abs_diff(r) <= 1) {
                    cracks.push([r, col]);
                }
            }
        }
        roads.push(RoadSpec {
            id: 10 + i as i64,
            polyline,
            lanes,
            planted_crack_tiles: cracks,
            dtv: None,
        });
    }
    // crossings: drop cracks sitting on another road's corridor
    let occupied: Vec<(bool, usize)> = roads
        .iter()
        .map(|r| {
            let hz = r.polyline[0].y == r.polyline[1].y;
            let k = if hz {
                ((origin.y - r.polyline[0].y - 2.5) / 5.0).round() as usize
            } else {
                ((r.polyline[0].x - origin.x - 2.5) / 5.0).round() as usize
            };
            (hz, k)
        })
        .collect();
    for r in &mut roads {
        r.planted_crack_tiles.retain(|&[row, col]| {
            occupied.iter().filter(|&&(hz, k)| if hz { k.abs_diff(row) <= 1 } else { k.abs_diff(col) <= 1 }).count() == 1
        });
    }
    if rng.random_bool(0.5) {
        roads.push(RoadSpec {
            id: 99,
            polyline: vec![Point::new(origin.x, origin.y), Point::new(origin.x + w, origin.y - h)],
            lanes: 2,
            planted_crack_tiles: Vec::new(),
            dtv: None,
        });
    }
    SceneSpec {
        seed,
        tile_id: format!("s{seed}"),
        extent_m: [w, h],
        origin,
        pixel_size: 0.1,
        patch_px: 50,
        roads,
        rail_bridges: Vec::<LineSpec>::new(),
        tunnels: Vec::new(),
        ..rhcd::synth::demo_spec()
    }
}

pub struct LibraryRun {
    pub corridors: Vec<CorridorPolygon>,
    pub patches: Vec<Patch>,
    pub index: Vec<PatchRecord>,
    pub preds: Vec<Classification>,
    pub records: Vec<RhcdRecord>,
}

/// buffer → mask → tile → builtin classify → aggregate, in memory.
pub fn run_library(scene: &Scene) -> LibraryRun {
    let corridors: Vec<CorridorPolygon> = scene
        .segments
        .iter()
        .map(|s| corridor::segment_corridor(s, corridor::LANE_WIDTH_M, 0.0).unwrap())
        .collect();
    let rails: Vec<CorridorPolygon> = scene
        .rails
        .iter()
        .map(|s| corridor::occluder_corridor(s, corridor::RAIL_BUFFER_M).unwrap())
        .collect();
    let g = scene.imagery.grid;
    let mask = corridor::subtract_occluders(
        &corridor::rasterize(&corridors, &g).unwrap(),
        &corridor::rasterize(&rails, &g).unwrap(),
    )
    .unwrap();
    let (patches, _) =
        tiler::tile_patches(&scene.spec.tile_id, &scene.imagery, &mask, &corridors, &TileParams::default()).unwrap();
    let index: Vec<PatchRecord> = patches.iter().map(|p| PatchRecord::of(p, String::new())).collect();
    let preds = HeuristicBackend::default().classify(&patches).unwrap();
    let lengths = scene.segments.iter().map(|s| (s.id, s.length_m)).collect();
    let records = rhcd::rhcd::aggregate_rhcd(&preds, &index, &lengths).unwrap();
    LibraryRun {
        corridors,
        patches,
        index,
        preds,
        records,
    }
}

pub fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Winding-number point-in-polygon over all rings (nonzero rule on a
/// polygon whose holes wind opposite to the exterior).
pub fn winding_contains(rings: &[&[Point]], p: Point) -> bool {
    let mut wn = 0i32;
    for ring in rings {
        for e in ring.windows(2) {
            let (a, b) = (e[0], e[1]);
            let cross = (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y);
            if a.y <= p.y {
                if b.y > p.y && cross > 0.0 {
                    wn += 1;
                }
            } else if b.y <= p.y && cross < 0.0 {
                wn -= 1;
            }
        }
    }
    wn != 0
}

/// Star-shaped random polygon inside a `size`-meter square at `origin`.
pub fn random_star_polygon(rng: &mut ChaCha8Rng, origin: Point, size: f64, unit_id: i64) -> CorridorPolygon {
    let n = rng.random_range(3..14);
    let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    let c = Point::new(origin.x + size / 2.0, origin.y - size / 2.0);
    let mut ring: Vec<Point> = angles
        .iter()
        .map(|a| {
            let r = rng.random_range(0.1..0.62) * size;
            Point::new(c.x + r * a.cos(), c.y + r * a.sin())
        })
        .collect();
    ring.push(ring[0]);
    CorridorPolygon {
        unit_id,
        exterior: ring,
        holes: Vec::new(),
        radius_m: 0.0,
        centerline: vec![c, Point::new(c.x + 1.0, c.y)],
    }
}

/// Membership in the flat-capped, round-joined buffer of `line`, computed
/// from first principles: a point is inside iff it projects onto some
/// segment within distance `r`, or lies within `r` of an interior vertex.
pub fn flat_cap_member(line: &[Point], r: f64, p: Point) -> bool {
    for s in line.windows(2) {
        let (a, b) = (s[0], s[1]);
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let len2 = dx * dx + dy * dy;
        let t = ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2;
        if (0.0..=1.0).contains(&t) {
            let perp = ((p.x - a.x) * dy - (p.y - a.y) * dx).abs() / len2.sqrt();
            if perp <= r {
                return true;
            }
        }
    }
    line[1..line.len() - 1]
        .iter()
        .any(|v| ((p.x - v.x).powi(2) + (p.y - v.y).powi(2)).sqrt() <= r)
}

/// Checks a buffer against [`flat_cap_member`] on a 0.1 m probe grid, with
/// the oracle radius shrunk/grown by `tol` (fraction of `r`) to absorb the
/// polygonal approximation of round joins. Returns the number of probes.
pub fn check_buffer_against_oracle(poly: &CorridorPolygon, line: &[Point], r: f64, tol: f64) -> usize {
    let b = poly.bbox();
    let (mut probes, step) = (0, 0.1);
    let (nx, ny) = (((b.xmax - b.xmin) / step) as usize + 3, ((b.ymax - b.ymin) / step) as usize + 3);
    for i in 0..nx {
        for j in 0..ny {
            let p = Point::new(b.xmin - step + i as f64 * step, b.ymin - step + j as f64 * step);
            let got = poly.contains(p);
            if flat_cap_member(line, r * (1.0 - tol), p) {
                assert!(got, "probe {p:?} should be inside the buffer of {line:?} (r = {r})");
            } else if !flat_cap_member(line, r * (1.0 + tol), p) {
                assert!(!got, "probe {p:?} should be outside the buffer of {line:?} (r = {r})");
            }
            probes += 1;
        }
    }
    probes
}

pub fn random_polyline(rng: &mut ChaCha8Rng) -> Vec<Point> {
    // turns stay below ~150° so the flat end caps are not re-entered
    let n = rng.random_range(2..6);
    let mut p = Point::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0));
    let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut line = vec![p];
    for _ in 1..n {
        heading += rng.random_range(-2.4..2.4);
        let len = rng.random_range(8.0..30.0);
        p = Point::new(p.x + len * heading.cos(), p.y + len * heading.sin());
        line.push(p);
    }
    line
}
