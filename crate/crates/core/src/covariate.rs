//! Long-term land-surface-temperature amplitude, per-unit covariate
//! sampling, traffic-volume joins, normalization and Pearson correlation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corridor::CorridorPolygon;
use crate::error::{Error, Result};
use crate::geometry::{nearest_feature, Point};
use crate::osm::RoadSegment;
use crate::par;
use crate::raster::GeoRaster;
use crate::rhcd::RhcdRecord;

/// Nodata sentinel of amplitude rasters; amplitudes are never negative.
pub const AMPLITUDE_NODATA: f32 = -9999.0;
pub const MIN_VALID_OBSERVATIONS: usize = 2;
pub const TV_MATCH_MAX_M: f64 = 20.0;

/// Co-registered single-band float layers, one per acquisition.
#[derive(Debug, Clone)]
pub struct TemperatureStack {
    pub layers: Vec<GeoRaster>,
    pub timestamps: Vec<String>,
}

impl TemperatureStack {
    pub fn new(layers: Vec<GeoRaster>, timestamps: Vec<String>) -> Result<Self> {
        let first = layers.first().ok_or_else(|| Error::invalid("temperature stack is empty"))?;
        if timestamps.len() != layers.len() {
            return Err(Error::invalid("one timestamp per layer required"));
        }
        for (i, l) in layers.iter().enumerate() {
            l.grid.ensure_same(&first.grid, &format!("temperature layer {i}"))?;
            if l.as_f32().is_none() || l.bands != 1 {
                return Err(Error::invalid(format!("temperature layer {i} is not single-band float")));
            }
            if l.nodata.map(f32::to_bits) != first.nodata.map(f32::to_bits) {
                return Err(Error::invalid(format!("temperature layer {i} has a different nodata value")));
            }
        }
        Ok(TemperatureStack { layers, timestamps })
    }
}

/// Per-cell max − min over valid observations; cells with fewer than
/// `min_valid` observations become [`AMPLITUDE_NODATA`].
pub fn lt_lst_a(stack: &TemperatureStack, min_valid: usize) -> Result<GeoRaster> {
    let grid = stack.layers[0].grid;
    let min_valid = min_valid.max(1);
    let out = par::map_range(grid.height, |row| {
        (0..grid.width)
            .map(|col| {
                let mut n = 0;
                let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
                for l in &stack.layers {
                    if let Some(v) = l.value(col, row) {
                        let v = v as f32;
                        n += 1;
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                if n >= min_valid {
                    hi - lo
                } else {
                    AMPLITUDE_NODATA
                }
            })
            .collect::<Vec<f32>>()
    });
    GeoRaster::from_f32(grid, out.concat(), Some(AMPLITUDE_NODATA))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateKind {
    LtLstA,
    TrafficVolume,
}

impl CovariateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CovariateKind::LtLstA => "lt_lst_a",
            CovariateKind::TrafficVolume => "traffic_volume",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateRow {
    pub unit_id: i64,
    pub value: f64,
}

/// Mean of the valid cells whose centers lie inside each corridor. Units
/// without any contributing cell are omitted.
pub fn sample_raster_per_unit(raster: &GeoRaster, corridors: &[CorridorPolygon]) -> Result<Vec<CovariateRow>> {
    if raster.bands != 1 {
        return Err(Error::invalid("covariate raster must be single-band"));
    }
    let g = raster.grid;
    let rows = par::map(corridors, |c| {
        let (rows, cols) = g.pixel_window(&c.bbox())?;
        let (mut sum, mut n) = (0.0, 0usize);
        for row in rows {
            for col in cols.clone() {
                if !c.contains(g.pixel_to_world(col, row)) {
                    continue;
                }
                if let Some(v) = raster.value(col, row) {
                    sum += v;
                    n += 1;
                }
            }
        }
        (n > 0).then(|| CovariateRow {
            unit_id: c.unit_id,
            value: sum / n as f64,
        })
    });
    let mut rows: Vec<CovariateRow> = rows.into_iter().flatten().collect();
    rows.sort_by_key(|r| r.unit_id);
    Ok(rows)
}

/// Assigns each segment the volume of the traffic line with the smallest
/// mean vertex distance to its centerline, if within `max_distance_m`.
pub fn join_traffic_volume(segments: &[RoadSegment], tv: &[(Vec<Point>, f64)], max_distance_m: f64) -> Vec<CovariateRow> {
    let mut rows: Vec<CovariateRow> = segments
        .iter()
        .filter_map(|s| {
            let i = nearest_feature(&s.geometry, tv.iter().map(|(l, _)| l.as_slice()), max_distance_m)?;
            Some(CovariateRow {
                unit_id: s.id,
                value: tv[i].1,
            })
        })
        .collect();
    rows.sort_by_key(|r| r.unit_id);
    rows
}

pub fn min_max_normalize(values: &[f64]) -> Result<Vec<f64>> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) || !(hi - lo).is_finite() {
        return Err(Error::invalid("min-max normalization needs at least two distinct finite values"));
    }
    Ok(values.iter().map(|v| (v - lo) / (hi - lo)).collect())
}

/// Two-pass product-moment correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::invalid(format!("pearson on unequal lengths {} and {}", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::invalid("pearson needs at least two pairs"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("pearson undefined for a zero-variance vector"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    None,
    MinMax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub r: f64,
    pub n: usize,
    pub covariate_kind: CovariateKind,
    /// Normalization applied to the values `r` was computed on.
    pub normalization: Normalization,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterRow {
    pub unit_id: i64,
    pub rhcd_norm: f64,
    pub covariate_norm: f64,
}

/// Inner-joins RHCD with a covariate on unit id, correlates the raw pairs
/// and returns min-max normalized pairs for plotting.
pub fn correlate(
    records: &[RhcdRecord],
    covariate: &[CovariateRow],
    kind: CovariateKind,
) -> Result<(CorrelationReport, Vec<ScatterRow>)> {
    let cov: BTreeMap<i64, f64> = covariate.iter().map(|r| (r.unit_id, r.value)).collect();
    let mut joined: Vec<(i64, f64, f64)> = records
        .iter()
        .filter_map(|r| cov.get(&r.unit_id).map(|&c| (r.unit_id, r.rhcd_percent, c)))
        .collect();
    joined.sort_by_key(|j| j.0);
    let xs: Vec<f64> = joined.iter().map(|j| j.1).collect();
    let ys: Vec<f64> = joined.iter().map(|j| j.2).collect();
    let r = pearson(&xs, &ys).map_err(|e| Error::invalid(format!("{} correlation: {e}", kind.as_str())))?;
    let (xn, yn) = (min_max_normalize(&xs)?, min_max_normalize(&ys)?);
    let scatter = joined
        .iter()
        .zip(xn.iter().zip(&yn))
        .map(|(j, (&x, &y))| ScatterRow {
            unit_id: j.0,
            rhcd_norm: x,
            covariate_norm: y,
        })
        .collect();
    Ok((
        CorrelationReport {
            r,
            n: joined.len(),
            covariate_kind: kind,
            normalization: Normalization::None,
        },
        scatter,
    ))
}

pub fn scatter_csv(rows: &[ScatterRow]) -> String {
    let mut s = String::from("unit_id,rhcd_norm,covariate_norm\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{}", r.unit_id, r.rhcd_norm, r.covariate_norm);
    }
    s
}
