//! Road-surface corridors around centerlines and their pixel masks.

use std::path::Path;

use geo::{Coord, LineString, Polygon};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dedup_vertices, point_polyline_distance, ring_signed_area, Bbox, Point};
use crate::grid::GridSpec;
use crate::osm::RoadSegment;
use crate::par;

pub const LANE_WIDTH_M: f64 = 3.5;
pub const RAIL_BUFFER_M: f64 = 3.0;

/// Round joins are approximated by inscribed polygons with this many
/// vertices per full turn (10° steps).
const JOIN_SEGMENTS: usize = 36;

/// Half-width of the paved surface for a carriageway with `lanes` lanes.
pub fn corridor_radius(lanes: u32, lane_width_m: f64) -> Result<f64> {
    if lanes < 1 {
        return Err(Error::invalid("lane count must be at least 1"));
    }
    if !(lane_width_m > 0.0 && lane_width_m.is_finite()) {
        return Err(Error::invalid(format!("lane width {lane_width_m} must be positive")));
    }
    Ok(lanes as f64 * lane_width_m / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorridorPolygon {
    pub unit_id: i64,
    /// Closed ring (first vertex repeated at the end).
    pub exterior: Vec<Point>,
    /// Closed interior rings, present only when the buffer encloses a gap.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub holes: Vec<Vec<Point>>,
    pub radius_m: f64,
    pub centerline: Vec<Point>,
}

impl CorridorPolygon {
    pub fn rings(&self) -> impl Iterator<Item = &[Point]> {
        std::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(Vec::as_slice))
    }

    pub fn bbox(&self) -> Bbox {
        Bbox::of_points(&self.exterior).expect("non-empty ring")
    }

    /// Even-odd containment over all rings.
    pub fn contains(&self, p: Point) -> bool {
        let mut inside = false;
        for ring in self.rings() {
            if crate::geometry::ring_crossings_odd(ring, p) {
                inside = !inside;
            }
        }
        inside
    }

    pub fn area(&self) -> f64 {
        self.rings().map(|r| ring_signed_area(r).abs()).fold(0.0, |acc, a| {
            if acc == 0.0 {
                a
            } else {
                acc - a
            }
        })
    }

    pub fn centerline_distance(&self, p: Point) -> f64 {
        point_polyline_distance(p, &self.centerline)
    }
}

/// Buffers a polyline by `radius_m` with flat end caps and round joins.
///
/// The buffer is built as the union of one rectangle per segment and one
/// disk per interior vertex, so tight turns and self-overlaps stay simple.
pub fn buffer_polyline(unit_id: i64, line: &[Point], radius_m: f64) -> Result<CorridorPolygon> {
    if !(radius_m > 0.0 && radius_m.is_finite()) {
        return Err(Error::Geometry(format!("buffer radius {radius_m} must be positive")));
    }
    if line.iter().any(|p| !p.is_finite()) {
        return Err(Error::Geometry(format!("unit {unit_id}: non-finite vertex")));
    }
    let pts = dedup_vertices(line);
    if pts.len() < 2 {
        return Err(Error::Geometry(format!("unit {unit_id}: zero-length polyline")));
    }
    // Work in a local frame to keep the overlay's integer snapping fine.
    let o = pts[0];
    let local: Vec<Point> = pts.iter().map(|p| Point::new(p.x - o.x, p.y - o.y)).collect();

    let mut pieces: Vec<Polygon<f64>> = Vec::with_capacity(local.len() * 2);
    for w in local.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = a.dist(b);
        let (nx, ny) = (-(b.y - a.y) / len * radius_m, (b.x - a.x) / len * radius_m);
        pieces.push(Polygon::new(
            LineString::from(vec![
                (a.x - nx, a.y - ny),
                (b.x - nx, b.y - ny),
                (b.x + nx, b.y + ny),
                (a.x + nx, a.y + ny),
            ]),
            vec![],
        ));
    }
    for v in &local[1..local.len() - 1] {
        let ring: Vec<(f64, f64)> = (0..JOIN_SEGMENTS)
            .map(|k| {
                let t = std::f64::consts::TAU * k as f64 / JOIN_SEGMENTS as f64;
                (v.x + radius_m * t.cos(), v.y + radius_m * t.sin())
            })
            .collect();
        pieces.push(Polygon::new(LineString::from(ring), vec![]));
    }

    let merged = geo::unary_union(&pieces);
    let to_world = |ls: &LineString<f64>| -> Vec<Point> {
        let mut ring: Vec<Point> = ls.0.iter().map(|c: &Coord| Point::new(c.x + o.x, c.y + o.y)).collect();
        if ring.first() != ring.last() {
            ring.push(ring[0]);
        }
        ring
    };
    let poly = merged
        .0
        .iter()
        .max_by(|a, b| {
            ring_area(a.exterior())
                .partial_cmp(&ring_area(b.exterior()))
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .ok_or_else(|| Error::Geometry(format!("unit {unit_id}: empty buffer")))?;
    Ok(CorridorPolygon {
        unit_id,
        exterior: to_world(poly.exterior()),
        holes: poly.interiors().iter().map(to_world).collect(),
        radius_m,
        centerline: pts,
    })
}

fn ring_area(ls: &LineString<f64>) -> f64 {
    let pts: Vec<Point> = ls.0.iter().map(|c| Point::new(c.x, c.y)).collect();
    ring_signed_area(&pts).abs()
}

/// Corridor for a road segment: half-width `lanes × lane_width / 2 + extra`.
pub fn segment_corridor(seg: &RoadSegment, lane_width_m: f64, extra_m: f64) -> Result<CorridorPolygon> {
    if !(extra_m >= 0.0) {
        return Err(Error::invalid("buffer extra must be non-negative"));
    }
    let r = corridor_radius(seg.lanes, lane_width_m)? + extra_m;
    buffer_polyline(seg.id, &seg.geometry, r)
}

/// Fixed-radius corridor for a rail occluder.
pub fn occluder_corridor(seg: &RoadSegment, radius_m: f64) -> Result<CorridorPolygon> {
    buffer_polyline(seg.id, &seg.geometry, radius_m)
}

/// Row-major bitmask aligned with a [`GridSpec`]. Each row starts on a word
/// boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    grid: GridSpecKey,
    words_per_row: usize,
    bits: Vec<u64>,
}

/// `GridSpec` with bitwise float equality so masks can be `Eq`.
#[derive(Debug, Clone, Copy)]
struct GridSpecKey(GridSpec);

impl PartialEq for GridSpecKey {
    fn eq(&self, o: &Self) -> bool {
        let (a, b) = (&self.0, &o.0);
        a.width == b.width
            && a.height == b.height
            && a.origin_x.to_bits() == b.origin_x.to_bits()
            && a.origin_y.to_bits() == b.origin_y.to_bits()
            && a.pixel_size.to_bits() == b.pixel_size.to_bits()
    }
}

impl Eq for GridSpecKey {}

impl PixelMask {
    pub fn new(grid: GridSpec) -> Result<Self> {
        grid.validate()?;
        let words_per_row = grid.width.div_ceil(64);
        Ok(PixelMask {
            grid: GridSpecKey(grid),
            words_per_row,
            bits: vec![0; words_per_row * grid.height],
        })
    }

    pub fn filled(grid: GridSpec) -> Result<Self> {
        let mut m = PixelMask::new(grid)?;
        for row in 0..grid.height {
            for col in 0..grid.width {
                m.set(col, row, true);
            }
        }
        Ok(m)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid.0
    }

    pub fn get(&self, col: usize, row: usize) -> bool {
        let w = self.bits[row * self.words_per_row + col / 64];
        (w >> (col % 64)) & 1 == 1
    }

    pub fn set(&mut self, col: usize, row: usize, value: bool) {
        let w = &mut self.bits[row * self.words_per_row + col / 64];
        if value {
            *w |= 1 << (col % 64);
        } else {
            *w &= !(1 << (col % 64));
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Set bits in the `w × h` window whose upper-left pixel is `(col0, row0)`.
    pub fn count_window(&self, col0: usize, row0: usize, w: usize, h: usize) -> usize {
        let mut n = 0;
        for row in row0..row0 + h {
            let words = &self.bits[row * self.words_per_row..(row + 1) * self.words_per_row];
            let (mut c, end) = (col0, col0 + w);
            while c < end {
                let bit = c % 64;
                let take = (64 - bit).min(end - c);
                let mask = if take == 64 { u64::MAX } else { ((1u64 << take) - 1) << bit };
                n += (words[c / 64] & mask).count_ones() as usize;
                c += take;
            }
        }
        n
    }

    fn ensure_same_grid(&self, other: &PixelMask) -> Result<()> {
        if self.grid != other.grid {
            self.grid().ensure_same(other.grid(), "masks")?;
            return Err(Error::GridMismatch("masks: grids differ".into()));
        }
        Ok(())
    }

    pub fn row_words_mut(&mut self) -> (usize, &mut [u64]) {
        (self.words_per_row, &mut self.bits)
    }

    /// Writes the mask as an 8-bit PGM (255 = set) with a world file.
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let g = *self.grid();
        let mut data = Vec::with_capacity(g.len());
        for row in 0..g.height {
            for col in 0..g.width {
                data.push(if self.get(col, row) { 255u8 } else { 0 });
            }
        }
        let raster = crate::raster::GeoRaster::from_u8(g, 1, data, None)?;
        crate::raster::write_raster(&raster, path)
    }
}

/// Sets every pixel whose center lies inside at least one polygon (even-odd
/// rule per polygon).
pub fn rasterize(polygons: &[CorridorPolygon], grid: &GridSpec) -> Result<PixelMask> {
    let mut mask = PixelMask::new(*grid)?;
    let boxes: Vec<Bbox> = polygons.iter().map(CorridorPolygon::bbox).collect();
    let g = *grid;
    let (wpr, bits) = mask.row_words_mut();
    par::for_each_chunk_mut(bits, wpr, |row, words| {
        let cy = g.center_y(row);
        let mut xs: Vec<f64> = Vec::new();
        for (poly, bb) in polygons.iter().zip(&boxes) {
            if cy < bb.ymin || cy > bb.ymax {
                continue;
            }
            xs.clear();
            for ring in poly.rings() {
                ring_crossings(ring, cy, &mut xs);
            }
            xs.sort_by(f64::total_cmp);
            for pair in xs.chunks_exact(2) {
                fill_span(&g, words, pair[0], pair[1]);
            }
        }
    });
    Ok(mask)
}

/// X coordinates where the horizontal line `y` crosses ring edges, using the
/// same half-open straddle rule as the point-in-ring test.
fn ring_crossings(ring: &[Point], y: f64, out: &mut Vec<f64>) {
    let n = ring.len();
    if n < 3 {
        return;
    }
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.y > y) != (b.y > y) {
            out.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
        }
        j = i;
    }
}

/// Sets pixels whose center `cx` satisfies `x0 <= cx < x1`.
fn fill_span(g: &GridSpec, words: &mut [u64], x0: f64, x1: f64) {
    if !(x0 < x1) {
        return;
    }
    let ps = g.pixel_size;
    let lo = ((x0 - g.origin_x) / ps - 0.5).floor() - 1.0;
    let hi = ((x1 - g.origin_x) / ps - 0.5).ceil() + 2.0;
    let lo = lo.max(0.0).min(g.width as f64) as usize;
    let hi = hi.max(0.0).min(g.width as f64) as usize;
    for col in lo..hi {
        let cx = g.center_x(col);
        if x0 <= cx && cx < x1 {
            words[col / 64] |= 1 << (col % 64);
        }
    }
}

/// `road AND NOT occluders`.
pub fn subtract_occluders(road: &PixelMask, occluders: &PixelMask) -> Result<PixelMask> {
    road.ensure_same_grid(occluders)?;
    let mut out = road.clone();
    for (w, o) in out.bits.iter_mut().zip(&occluders.bits) {
        *w &= !o;
    }
    Ok(out)
}
