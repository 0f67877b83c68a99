//! Georeferenced rasters and their on-disk formats.
//!
//! * 8-bit gray/RGB: binary PGM (`P5`) / PPM (`P6`) plus a six-line ESRI
//!   world file next to it.
//! * 32-bit float single band: a little-endian sidecar format, see
//!   [`write_f32_raster`].
//! * GeoTIFF (read only): 8-bit, striped, uncompressed or DEFLATE, gray or
//!   RGB, georeferenced by pixel-scale + tiepoint tags.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

pub const F32_MAGIC: &[u8; 8] = b"RHCDF32\n";

#[derive(Debug, Clone, PartialEq)]
pub enum RasterData {
    U8(Vec<u8>),
    F32(Vec<f32>),
}

/// Pixel grid with band-interleaved samples in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoRaster {
    pub grid: GridSpec,
    pub bands: usize,
    pub data: RasterData,
    /// Sentinel for missing samples (float rasters only).
    pub nodata: Option<f32>,
}

impl GeoRaster {
    pub fn from_u8(grid: GridSpec, bands: usize, data: Vec<u8>, nodata: Option<f32>) -> Result<Self> {
        grid.validate()?;
        if bands != 1 && bands != 3 {
            return Err(Error::invalid(format!("8-bit rasters need 1 or 3 bands, got {bands}")));
        }
        if data.len() != grid.len() * bands {
            return Err(Error::invalid(format!(
                "raster data length {} does not match {}x{}x{bands}",
                data.len(),
                grid.width,
                grid.height
            )));
        }
        Ok(GeoRaster {
            grid,
            bands,
            data: RasterData::U8(data),
            nodata,
        })
    }

    pub fn from_f32(grid: GridSpec, data: Vec<f32>, nodata: Option<f32>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::invalid(format!(
                "raster data length {} does not match {}x{}",
                data.len(),
                grid.width,
                grid.height
            )));
        }
        Ok(GeoRaster {
            grid,
            bands: 1,
            data: RasterData::F32(data),
            nodata,
        })
    }

    pub fn as_u8(&self) -> Option<&[u8]> {
        match &self.data {
            RasterData::U8(v) => Some(v),
            RasterData::F32(_) => None,
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            RasterData::F32(v) => Some(v),
            RasterData::U8(_) => None,
        }
    }

    /// Single-band sample as f64, `None` for nodata/NaN.
    pub fn value(&self, col: usize, row: usize) -> Option<f64> {
        let i = row * self.grid.width + col;
        match &self.data {
            RasterData::U8(v) if self.bands == 1 => Some(v[i] as f64),
            RasterData::U8(_) => None,
            RasterData::F32(v) => {
                let x = v[i];
                if x.is_nan() || self.nodata.is_some_and(|nd| nd.to_bits() == x.to_bits() || nd == x) {
                    None
                } else {
                    Some(x as f64)
                }
            }
        }
    }
}

/// `foo.ppm` → `foo.wld`; paths without a raster extension get `.wld` appended.
pub fn world_file_path(path: &Path) -> PathBuf {
    const KNOWN: [&str; 6] = ["ppm", "pgm", "pnm", "tif", "tiff", "f32"];
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if KNOWN.contains(&ext.to_ascii_lowercase().as_str()) => path.with_extension("wld"),
        _ => {
            let mut s = path.as_os_str().to_owned();
            s.push(".wld");
            PathBuf::from(s)
        }
    }
}

/// A center coordinate `c` such that `c - half == corner` exactly, so world
/// files round-trip the corner origin bit for bit.
fn center_for_corner(corner: f64, half: f64) -> f64 {
    let c = corner + half;
    [c, c.next_up(), c.next_down()]
        .into_iter()
        .find(|&v| v - half == corner)
        .unwrap_or(c)
}

fn center_for_corner_y(corner: f64, half: f64) -> f64 {
    let c = corner - half;
    [c, c.next_up(), c.next_down()]
        .into_iter()
        .find(|&v| v + half == corner)
        .unwrap_or(c)
}

pub fn write_world_file(grid: &GridSpec, path: &Path) -> Result<()> {
    let half = grid.pixel_size / 2.0;
    let text = format!(
        "{}\n0\n0\n{}\n{}\n{}\n",
        grid.pixel_size,
        -grid.pixel_size,
        center_for_corner(grid.origin_x, half),
        center_for_corner_y(grid.origin_y, half)
    );
    std::fs::write(path, text).map_err(Error::io(path))
}

/// Returns `(origin_x, origin_y, pixel_size)` from a world file.
pub fn read_world_file(path: &Path) -> Result<(f64, f64, f64)> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::decode(None, format!("{}: {e}", path.display())))?;
    if vals.len() != 6 {
        return Err(Error::decode(
            None,
            format!("{}: world file needs 6 values, found {}", path.display(), vals.len()),
        ));
    }
    let [a, d, b, e, c, f] = [vals[0], vals[1], vals[2], vals[3], vals[4], vals[5]];
    if d != 0.0 || b != 0.0 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: rotated/sheared geotransform",
            path.display()
        )));
    }
    if !(a > 0.0) || e != -a {
        return Err(Error::UnsupportedFormat(format!(
            "{}: non-square or south-up pixels ({a}, {e})",
            path.display()
        )));
    }
    let half = a / 2.0;
    Ok((c - half, f + half, a))
}

pub fn read_raster(path: &Path) -> Result<GeoRaster> {
    let mut head = [0u8; 8];
    let n = {
        let mut f = File::open(path).map_err(Error::io(path))?;
        read_up_to(&mut f, &mut head).map_err(Error::io(path))?
    };
    let head = &head[..n];
    if head.starts_with(b"P5") || head.starts_with(b"P6") {
        read_pnm(path)
    } else if head == F32_MAGIC {
        read_f32_raster(path)
    } else if head.starts_with(b"II*\0") || head.starts_with(b"MM\0*") {
        read_geotiff(path)
    } else if head.starts_with(b"II+\0") || head.starts_with(b"MM\0+") {
        Err(Error::UnsupportedFormat(format!("{}: BigTIFF", path.display())))
    } else if head.starts_with(b"P") {
        Err(Error::UnsupportedFormat(format!(
            "{}: only binary PGM/PPM (P5/P6) are supported",
            path.display()
        )))
    } else {
        Err(Error::UnsupportedFormat(format!("{}: unrecognized raster signature", path.display())))
    }
}

fn read_up_to(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..])? {
            0 => break,
            k => n += k,
        }
    }
    Ok(n)
}

/// Writes 8-bit rasters as PGM/PPM + world file and float rasters in the
/// float sidecar format.
pub fn write_raster(raster: &GeoRaster, path: &Path) -> Result<()> {
    match &raster.data {
        RasterData::U8(data) => {
            write_pnm(path, raster.grid.width, raster.grid.height, raster.bands, data)?;
            write_world_file(&raster.grid, &world_file_path(path))
        }
        RasterData::F32(_) => write_f32_raster(raster, path),
    }
}

pub fn write_pnm(path: &Path, width: usize, height: usize, bands: usize, data: &[u8]) -> Result<()> {
    let magic = match bands {
        1 => "P5",
        3 => "P6",
        _ => return Err(Error::invalid(format!("PNM supports 1 or 3 bands, got {bands}"))),
    };
    let f = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(f);
    write!(w, "{magic}\n{width} {height}\n255\n").map_err(Error::io(path))?;
    w.write_all(data).map_err(Error::io(path))?;
    w.flush().map_err(Error::io(path))
}

/// Decodes a binary PGM/PPM into `(width, height, bands, samples)`.
pub fn decode_pnm(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::decode(None, "truncated PNM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token(bytes)?;
    let bands = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::UnsupportedFormat(format!("PNM variant {other}"))),
    };
    let num = |s: String| -> Result<usize> {
        s.parse().map_err(|_| Error::decode(None, format!("bad PNM header field {s:?}")))
    };
    let width = num(token(bytes)?)?;
    let height = num(token(bytes)?)?;
    let maxval = num(token(bytes)?)?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!("PNM maxval {maxval} (only 8-bit)")));
    }
    let data_start = pos + 1;
    let n = width * height * bands;
    if bytes.len() < data_start + n {
        return Err(Error::decode(None, "truncated PNM pixel data"));
    }
    Ok((width, height, bands, bytes[data_start..data_start + n].to_vec()))
}

fn read_pnm(path: &Path) -> Result<GeoRaster> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    let (width, height, bands, data) =
        decode_pnm(&bytes).map_err(|e| Error::decode(None, format!("{}: {e}", path.display())))?;
    let (ox, oy, ps) = read_world_file(&world_file_path(path))?;
    GeoRaster::from_u8(GridSpec::new(width, height, ox, oy, ps)?, bands, data, None)
}

/// Float sidecar layout (all little-endian):
/// magic `RHCDF32\n`, u32 width, u32 height, f64 origin_x, f64 origin_y,
/// f64 pixel_size, u8 has_nodata, f32 nodata, then width×height f32 samples.
pub fn write_f32_raster(raster: &GeoRaster, path: &Path) -> Result<()> {
    let data = raster
        .as_f32()
        .ok_or_else(|| Error::invalid("float sidecar needs a float raster"))?;
    let g = &raster.grid;
    let f = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(f);
    let mut header = Vec::with_capacity(45);
    header.extend_from_slice(F32_MAGIC);
    header.extend_from_slice(&(g.width as u32).to_le_bytes());
    header.extend_from_slice(&(g.height as u32).to_le_bytes());
    header.extend_from_slice(&g.origin_x.to_le_bytes());
    header.extend_from_slice(&g.origin_y.to_le_bytes());
    header.extend_from_slice(&g.pixel_size.to_le_bytes());
    header.push(raster.nodata.is_some() as u8);
    header.extend_from_slice(&raster.nodata.unwrap_or(0.0).to_le_bytes());
    w.write_all(&header).map_err(Error::io(path))?;
    for v in data {
        w.write_all(&v.to_le_bytes()).map_err(Error::io(path))?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_f32_raster(path: &Path) -> Result<GeoRaster> {
    let mut r = BufReader::new(File::open(path).map_err(Error::io(path))?);
    let mut header = [0u8; 45];
    r.read_exact(&mut header)
        .map_err(|_| Error::decode(None, format!("{}: truncated float raster header", path.display())))?;
    if &header[..8] != F32_MAGIC {
        return Err(Error::decode(None, format!("{}: bad float raster magic", path.display())));
    }
    let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let f64_at = |i: usize| f64::from_le_bytes(header[i..i + 8].try_into().unwrap());
    let (width, height) = (u32_at(8) as usize, u32_at(12) as usize);
    let grid = GridSpec::new(width, height, f64_at(16), f64_at(24), f64_at(32))?;
    let nodata = (header[40] != 0).then(|| f32::from_le_bytes(header[41..45].try_into().unwrap()));
    let mut raw = vec![0u8; width * height * 4];
    r.read_exact(&mut raw)
        .map_err(|_| Error::decode(None, format!("{}: truncated float raster data", path.display())))?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    GeoRaster::from_f32(grid, data, nodata)
}

fn read_geotiff(path: &Path) -> Result<GeoRaster> {
    use tiff::decoder::{Decoder, DecodingResult};
    use tiff::tags::Tag;
    use tiff::ColorType;

    let unsupported = |what: String| Error::UnsupportedFormat(format!("{}: {what}", path.display()));
    let tiff_err = |e: tiff::TiffError| match e {
        tiff::TiffError::UnsupportedError(u) => unsupported(u.to_string()),
        other => Error::decode(None, format!("{}: {other}", path.display())),
    };
    let f = File::open(path).map_err(Error::io(path))?;
    let mut dec = Decoder::new(BufReader::new(f)).map_err(tiff_err)?;

    if dec.find_tag(Tag::TileWidth).map_err(tiff_err)?.is_some() {
        return Err(unsupported("tiled layout (only striped GeoTIFF is supported)".into()));
    }
    let compression: u16 = dec
        .find_tag_unsigned(Tag::Compression)
        .map_err(tiff_err)?
        .unwrap_or(1);
    if !matches!(compression, 1 | 8 | 32946) {
        return Err(unsupported(format!("compression scheme {compression}")));
    }
    let planar: u16 = dec
        .find_tag_unsigned(Tag::PlanarConfiguration)
        .map_err(tiff_err)?
        .unwrap_or(1);
    if planar != 1 {
        return Err(unsupported("planar (band-sequential) layout".into()));
    }
    let bands = match dec.colortype().map_err(tiff_err)? {
        ColorType::Gray(8) => 1,
        ColorType::RGB(8) => 3,
        other => return Err(unsupported(format!("color type {other:?} (need 8-bit gray or RGB)"))),
    };
    if dec.find_tag(Tag::ModelTransformationTag).map_err(tiff_err)?.is_some() {
        return Err(unsupported("model transformation (rotated) georeferencing".into()));
    }
    let scale = dec
        .find_tag(Tag::ModelPixelScaleTag)
        .map_err(tiff_err)?
        .ok_or_else(|| unsupported("missing ModelPixelScale tag".into()))?
        .into_f64_vec()
        .map_err(tiff_err)?;
    let tie = dec
        .find_tag(Tag::ModelTiepointTag)
        .map_err(tiff_err)?
        .ok_or_else(|| unsupported("missing ModelTiepoint tag".into()))?
        .into_f64_vec()
        .map_err(tiff_err)?;
    if scale.len() < 2 || tie.len() < 6 {
        return Err(Error::decode(None, format!("{}: short georeferencing tags", path.display())));
    }
    if scale[0] != scale[1] {
        return Err(unsupported(format!("non-square pixels {} x {}", scale[0], scale[1])));
    }
    let (w, h) = dec.dimensions().map_err(tiff_err)?;
    let ps = scale[0];
    let grid = GridSpec::new(w as usize, h as usize, tie[3] - tie[0] * ps, tie[4] + tie[1] * ps, ps)?;
    match dec.read_image().map_err(tiff_err)? {
        DecodingResult::U8(data) => GeoRaster::from_u8(grid, bands, data, None),
        _ => Err(unsupported("non-8-bit samples".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn world_file_path_rules() {
        assert_eq!(world_file_path(Path::new("a/tile.ppm")), PathBuf::from("a/tile.wld"));
        assert_eq!(world_file_path(Path::new("a/swissimage_2021")), PathBuf::from("a/swissimage_2021.wld"));
        assert_eq!(world_file_path(Path::new("a/x.2021")), PathBuf::from("a/x.2021.wld"));
    }

    #[test]
    fn rgb_ppm_roundtrip_with_decimeter_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ppm");
        let g = GridSpec::new(2, 2, 2600000.0, 1200000.0, 0.1).unwrap();
        let r = GeoRaster::from_u8(g, 3, (0..12).collect(), None).unwrap();
        write_raster(&r, &path).unwrap();
        let back = read_raster(&path).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.grid.pixel_size, 0.1);
    }

    #[test]
    fn rotated_world_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.pgm");
        write_pnm(&path, 1, 1, 1, &[7]).unwrap();
        std::fs::write(dir.path().join("t.wld"), "1\n0.5\n0\n-1\n0\n0\n").unwrap();
        assert!(matches!(read_raster(&path), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn ascii_pnm_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ppm");
        std::fs::write(&path, "P3\n1 1\n255\n1 2 3\n").unwrap();
        assert!(matches!(read_raster(&path), Err(Error::UnsupportedFormat(_))));
    }

    #[test]
    fn pnm_header_comments_and_16_bit() {
        let (w, h, b, d) = decode_pnm(b"P5\n# made by hand\n2 1\n255\n\x01\x02").unwrap();
        assert_eq!((w, h, b, d), (2, 1, 1, vec![1, 2]));
        assert!(matches!(decode_pnm(b"P5\n1 1\n65535\n\x00\x01"), Err(Error::UnsupportedFormat(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn float_and_pnm_roundtrip_bit_exact(
            w in 1usize..12, h in 1usize..12,
            ox in -3.0e6f64..3.0e6, oy in -3.0e6f64..3.0e6,
            ps in prop::sample::select(vec![0.1, 0.25, 30.0, 0.3, 1.0/3.0]),
            seed in any::<u64>(),
            nodata in prop::option::of(-9999.0f32..0.0),
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let dir = tempfile::tempdir().unwrap();
            let g = GridSpec::new(w, h, ox, oy, ps).unwrap();

            let f: Vec<f32> = (0..w * h).map(|_| rng.random_range(-50.0f32..80.0)).collect();
            let fr = GeoRaster::from_f32(g, f, nodata).unwrap();
            let fp = dir.path().join("t.f32");
            write_raster(&fr, &fp).unwrap();
            prop_assert_eq!(read_raster(&fp).unwrap(), fr);

            let px: Vec<u8> = (0..w * h * 3).map(|_| rng.random()).collect();
            let pr = GeoRaster::from_u8(g, 3, px, None).unwrap();
            let pp = dir.path().join("t.ppm");
            write_raster(&pr, &pp).unwrap();
            let back = read_raster(&pp).unwrap();
            prop_assert_eq!(back.grid.origin_x.to_bits(), g.origin_x.to_bits());
            prop_assert_eq!(back.grid.origin_y.to_bits(), g.origin_y.to_bits());
            prop_assert_eq!(back, pr);
        }
    }
}
