//! Relative Highway Crack Density: the percentage of a unit's patches
//! classified as cracked, plus top-percentile flagging and exports.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::classify::{Classification, Label};
use crate::error::{Error, Result};
use crate::geojson;
use crate::osm::RoadSegment;
use crate::tiler::PatchRecord;

pub const DEFAULT_TOP_PERCENTILE: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhcdRecord {
    pub unit_id: i64,
    pub length_m: f64,
    pub n_total: u64,
    pub n_crack: u64,
    pub rhcd_percent: f64,
    pub top_flag: bool,
}

pub fn rhcd_percent(n_crack: u64, n_total: u64) -> f64 {
    100.0 * n_crack as f64 / n_total as f64
}

/// Counts classified patches per unit. Units without patches are omitted;
/// output is sorted by unit id.
pub fn aggregate_rhcd(
    classifications: &[Classification],
    index: &[PatchRecord],
    lengths: &BTreeMap<i64, f64>,
) -> Result<Vec<RhcdRecord>> {
    let unit_of: HashMap<&str, i64> = index.iter().map(|r| (r.patch_id.as_str(), r.unit_id)).collect();
    let mut counts: BTreeMap<i64, (u64, u64)> = BTreeMap::new();
    let mut unknown = Vec::new();
    for c in classifications {
        match unit_of.get(c.patch_id.as_str()) {
            Some(&u) => {
                let e = counts.entry(u).or_default();
                e.0 += 1;
                e.1 += (c.label == Label::Crack) as u64;
            }
            None => unknown.push(c.patch_id.as_str()),
        }
    }
    if !unknown.is_empty() {
        unknown.truncate(10);
        return Err(Error::invalid(format!("classifications reference unknown patches {unknown:?}")));
    }
    counts
        .into_iter()
        .map(|(unit_id, (n_total, n_crack))| {
            let length_m = *lengths
                .get(&unit_id)
                .ok_or_else(|| Error::invalid(format!("patches assigned to unknown unit {unit_id}")))?;
            Ok(RhcdRecord {
                unit_id,
                length_m,
                n_total,
                n_crack,
                rhcd_percent: rhcd_percent(n_crack, n_total),
                top_flag: false,
            })
        })
        .collect()
}

/// Flags records at or above the top-`p`% threshold and returns the
/// threshold. Unweighted: the k-th largest value with k = ⌈p·N/100⌉ (nearest
/// rank from the top), ties included. Weighted: the largest value whose
/// cumulative length from the top reaches p% of total length.
pub fn flag_top_percentile(records: &mut [RhcdRecord], p: f64, weight_by_length: bool) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("no records to flag"));
    }
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::invalid(format!("percentile {p} outside (0, 100)")));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[b]
            .rhcd_percent
            .total_cmp(&records[a].rhcd_percent)
            .then(records[a].unit_id.cmp(&records[b].unit_id))
    });
    let threshold = if weight_by_length {
        let total: f64 = records.iter().map(|r| r.length_m).sum();
        if !(total > 0.0) {
            return Err(Error::invalid("length-weighted flagging needs positive total length"));
        }
        let target = p / 100.0 * total * (1.0 - 1e-12);
        let mut cum = 0.0;
        let mut thr = records[order[order.len() - 1]].rhcd_percent;
        for &i in &order {
            cum += records[i].length_m;
            if cum >= target {
                thr = records[i].rhcd_percent;
                break;
            }
        }
        thr
    } else {
        let k = ((p * records.len() as f64 / 100.0) - 1e-9).ceil().max(1.0) as usize;
        records[order[k.min(records.len()) - 1]].rhcd_percent
    };
    for r in records.iter_mut() {
        r.top_flag = r.rhcd_percent >= threshold;
    }
    Ok(threshold)
}

/// Segment LineStrings carrying their RHCD fields, one per record.
pub fn rhcd_geojson(records: &[RhcdRecord], segments: &[RoadSegment]) -> Result<Value> {
    let by_id: HashMap<i64, &RoadSegment> = segments.iter().map(|s| (s.id, s)).collect();
    let features = records
        .iter()
        .map(|r| {
            let s = by_id
                .get(&r.unit_id)
                .ok_or_else(|| Error::invalid(format!("no segment for unit {}", r.unit_id)))?;
            let mut props = geojson::segment_properties(s);
            props.insert("unit_id".into(), json!(r.unit_id));
            props.insert("n_total".into(), json!(r.n_total));
            props.insert("n_crack".into(), json!(r.n_crack));
            props.insert("rhcd_percent".into(), json!(r.rhcd_percent));
            props.insert("top_flag".into(), json!(r.top_flag));
            Ok(geojson::line_feature(&s.geometry, props))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(geojson::collection(features))
}

pub fn read_rhcd_geojson(path: &Path) -> Result<Vec<RhcdRecord>> {
    geojson::read_features(path)?
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            let v = Value::Object(f.properties);
            serde_json::from_value(v).map_err(|e| Error::decode(Some(i), format!("{}: {e}", path.display())))
        })
        .collect()
}

pub fn rhcd_csv(records: &[RhcdRecord]) -> String {
    let mut s = String::from("unit_id,length_m,n_total,n_crack,rhcd_percent,top_flag\n");
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.unit_id, r.length_m, r.n_total, r.n_crack, r.rhcd_percent, r.top_flag
        );
    }
    s
}
