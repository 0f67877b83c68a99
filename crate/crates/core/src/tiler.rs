//! Masking orthophotos to the road corridor and cutting grid-aligned,
//! georeferenced square patches assigned to analysis units.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corridor::{CorridorPolygon, PixelMask};
use crate::error::{Error, Result};
use crate::geometry::{Bbox, Point};
use crate::par;
use crate::raster::{GeoRaster, RasterData};

pub const PATCH_PX: usize = 50;
pub const MIN_ROAD_FRACTION: f64 = 0.5;

/// A square RGB window of a source raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// `tile_id:row:col` in patch-grid coordinates.
    pub patch_id: String,
    pub unit_id: i64,
    /// Upper-left corner in world coordinates.
    pub origin: Point,
    pub pixel_size: f64,
    /// Edge length in pixels.
    pub size: usize,
    /// `size × size × 3` samples, row-major, non-road pixels zeroed.
    pub pixels: Vec<u8>,
    pub road_fraction: f64,
}

impl Patch {
    pub fn rgb(&self, col: usize, row: usize) -> [u8; 3] {
        let i = (row * self.size + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn center(&self) -> Point {
        let half = self.size as f64 * self.pixel_size / 2.0;
        Point::new(self.origin.x + half, self.origin.y - half)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileParams {
    pub patch_px: usize,
    pub min_road_fraction: f64,
}

impl Default for TileParams {
    fn default() -> Self {
        TileParams {
            patch_px: PATCH_PX,
            min_road_fraction: MIN_ROAD_FRACTION,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSummary {
    pub tiles_processed: usize,
    pub patches_emitted: usize,
    pub patches_skipped: usize,
    /// Pixel rows and columns beyond the last full window, summed over tiles.
    pub remainder_rows_dropped: usize,
    pub remainder_cols_dropped: usize,
}

impl TileSummary {
    pub fn merge(&mut self, o: &TileSummary) {
        self.tiles_processed += o.tiles_processed;
        self.patches_emitted += o.patches_emitted;
        self.patches_skipped += o.patches_skipped;
        self.remainder_rows_dropped += o.remainder_rows_dropped;
        self.remainder_cols_dropped += o.remainder_cols_dropped;
    }
}

/// Zeroes every sample whose mask bit is clear.
pub fn mask_raster(raster: &GeoRaster, mask: &PixelMask) -> Result<GeoRaster> {
    raster.grid.ensure_same(mask.grid(), "raster vs mask")?;
    let RasterData::U8(data) = &raster.data else {
        return Err(Error::invalid("masking needs an 8-bit raster"));
    };
    let (w, bands) = (raster.grid.width, raster.bands);
    let mut out = data.clone();
    par::for_each_chunk_mut(&mut out, w * bands, |row, samples| {
        for col in 0..w {
            if !mask.get(col, row) {
                samples[col * bands..(col + 1) * bands].fill(0);
            }
        }
    });
    GeoRaster::from_u8(raster.grid, bands, out, None)
}

/// Unit whose centerline is nearest to `p` among units whose corridor
/// contains it, falling back to the globally nearest centerline. Ties go to
/// the smallest unit id.
pub fn assign_unit(p: Point, units: &[CorridorPolygon], boxes: &[Bbox]) -> Option<i64> {
    let pick = |it: &mut dyn Iterator<Item = &CorridorPolygon>| -> Option<i64> {
        it.map(|u| (u.centerline_distance(p), u.unit_id))
            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
            .map(|(_, id)| id)
    };
    let mut containing = units
        .iter()
        .zip(boxes)
        .filter(|(u, b)| b.contains(p) && u.contains(p))
        .map(|(u, _)| u);
    pick(&mut containing).or_else(|| pick(&mut units.iter()))
}

/// Cuts `raster` into non-overlapping `patch_px` windows anchored at the
/// raster origin, keeping windows with road fraction ≥ `min_road_fraction`.
/// Output is row-major in window order.
pub fn tile_patches(
    tile_id: &str,
    raster: &GeoRaster,
    mask: &PixelMask,
    units: &[CorridorPolygon],
    params: &TileParams,
) -> Result<(Vec<Patch>, TileSummary)> {
    if units.is_empty() {
        return Err(Error::invalid("tiling needs at least one analysis unit"));
    }
    if params.patch_px == 0 {
        return Err(Error::invalid("patch size must be positive"));
    }
    if !(0.0..=1.0).contains(&params.min_road_fraction) {
        return Err(Error::invalid("min_road_fraction must lie in [0, 1]"));
    }
    raster.grid.ensure_same(mask.grid(), "raster vs mask")?;
    let RasterData::U8(data) = &raster.data else {
        return Err(Error::invalid("tiling needs an 8-bit RGB raster"));
    };
    if raster.bands != 3 {
        return Err(Error::invalid(format!("tiling needs 3 bands, raster has {}", raster.bands)));
    }

    let g = raster.grid;
    let n = params.patch_px;
    let (win_rows, win_cols) = (g.height / n, g.width / n);
    let area = (n * n) as f64;
    let boxes: Vec<Bbox> = units.iter().map(CorridorPolygon::bbox).collect();
    if !g.height.is_multiple_of(n) || !g.width.is_multiple_of(n) {
        log::warn!(
            "tile {tile_id}: {}x{} px is not a multiple of {n}; dropping {} rows and {} cols",
            g.width,
            g.height,
            g.height % n,
            g.width % n
        );
    }

    let rows: Vec<(Vec<Patch>, usize)> = par::map_range(win_rows, |wr| {
        let mut patches = Vec::new();
        let mut skipped = 0usize;
        for wc in 0..win_cols {
            let (col0, row0) = (wc * n, wr * n);
            let road = mask.count_window(col0, row0, n, n);
            let road_fraction = road as f64 / area;
            if road_fraction < params.min_road_fraction {
                skipped += 1;
                continue;
            }
            let mut pixels = Vec::with_capacity(n * n * 3);
            for row in row0..row0 + n {
                let base = (row * g.width + col0) * 3;
                pixels.extend_from_slice(&data[base..base + n * 3]);
                let start = pixels.len() - n * 3;
                for c in 0..n {
                    if !mask.get(col0 + c, row) {
                        pixels[start + c * 3..start + c * 3 + 3].fill(0);
                    }
                }
            }
            let origin = Point::new(
                g.origin_x + col0 as f64 * g.pixel_size,
                g.origin_y - row0 as f64 * g.pixel_size,
            );
            let half = n as f64 * g.pixel_size / 2.0;
            let center = Point::new(origin.x + half, origin.y - half);
            let unit_id = assign_unit(center, units, &boxes).expect("units non-empty");
            patches.push(Patch {
                patch_id: format!("{tile_id}:{wr}:{wc}"),
                unit_id,
                origin,
                pixel_size: g.pixel_size,
                size: n,
                pixels,
                road_fraction,
            });
        }
        (patches, skipped)
    });

    let mut summary = TileSummary {
        tiles_processed: 1,
        remainder_rows_dropped: g.height % n,
        remainder_cols_dropped: g.width % n,
        ..Default::default()
    };
    let mut out = Vec::new();
    for (p, skipped) in rows {
        summary.patches_skipped += skipped;
        out.extend(p);
    }
    summary.patches_emitted = out.len();
    Ok((out, summary))
}

/// One line of the NDJSON patch index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub patch_id: String,
    pub unit_id: i64,
    pub origin: Point,
    pub road_fraction: f64,
    /// Image path relative to the index directory.
    pub file: String,
    pub pixel_size: f64,
    pub size: usize,
}

impl PatchRecord {
    pub fn of(p: &Patch, file: String) -> Self {
        PatchRecord {
            patch_id: p.patch_id.clone(),
            unit_id: p.unit_id,
            origin: p.origin,
            road_fraction: p.road_fraction,
            file,
            pixel_size: p.pixel_size,
            size: p.size,
        }
    }
}

pub fn patch_file_name(patch_id: &str) -> String {
    let safe: String = patch_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.+".contains(c) { c } else { '_' })
        .collect();
    format!("{safe}.ppm")
}

/// Writes `dir/index.ndjson` plus one PPM per patch under `dir/images/`.
pub fn write_patch_index(patches: &[Patch], dir: &Path) -> Result<PathBuf> {
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(Error::io(&images))?;
    let index = dir.join("index.ndjson");
    let f = std::fs::File::create(&index).map_err(Error::io(&index))?;
    let mut w = BufWriter::new(f);
    let written: Vec<Result<String>> = par::map(patches, |p| {
        let file = format!("images/{}", patch_file_name(&p.patch_id));
        crate::raster::write_pnm(&dir.join(&file), p.size, p.size, 3, &p.pixels)?;
        Ok(file)
    });
    for (p, file) in patches.iter().zip(written) {
        let rec = PatchRecord::of(p, file?);
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::invalid(e.to_string()))?;
        w.write_all(b"\n").map_err(Error::io(&index))?;
    }
    w.flush().map_err(Error::io(&index))?;
    Ok(index)
}

pub fn read_patch_index(path: &Path) -> Result<Vec<PatchRecord>> {
    let f = std::fs::File::open(path).map_err(Error::io(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::decode(Some(i), format!("{}: {e}", path.display())))?,
        );
    }
    Ok(out)
}

/// Reloads a patch image referenced by an index record.
pub fn load_patch(rec: &PatchRecord, index_dir: &Path) -> Result<Patch> {
    let path = index_dir.join(&rec.file);
    let bytes = std::fs::read(&path).map_err(Error::io(&path))?;
    let (w, h, bands, pixels) = crate::raster::decode_pnm(&bytes)?;
    if w != rec.size || h != rec.size || bands != 3 {
        return Err(Error::invalid(format!(
            "{}: expected {n}x{n} RGB, found {w}x{h}x{bands}",
            path.display(),
            n = rec.size
        )));
    }
    Ok(Patch {
        patch_id: rec.patch_id.clone(),
        unit_id: rec.unit_id,
        origin: rec.origin,
        pixel_size: rec.pixel_size,
        size: rec.size,
        pixels,
        road_fraction: rec.road_fraction,
    })
}
