//! Minimal STAC-style imagery catalog client.
//!
//! Remote catalogs answer `GET {endpoint}/search?bbox=..&datetime=..` with a
//! JSON item collection; local catalogs are `file://` manifests with the same
//! schema. Only `id`, `bbox`, `properties.datetime` and `assets.*.href`
//! (plus the optional `file:size`) are read.

use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::Bbox;
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRef {
    pub key: String,
    pub href: String,
    /// Expected byte length when the catalog advertises `file:size`.
    pub size: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogItem {
    pub item_id: String,
    pub bbox: Bbox,
    pub datetime: DateTime<Utc>,
    pub assets: Vec<AssetRef>,
}

impl CatalogItem {
    fn is_world_file(href: &str) -> bool {
        href.to_ascii_lowercase().ends_with(".wld")
    }

    /// The imagery asset: the first asset (by key) that is not a world file.
    pub fn image_asset(&self) -> Option<&AssetRef> {
        self.assets.iter().find(|a| !Self::is_world_file(&a.href))
    }

    pub fn world_file_asset(&self) -> Option<&AssetRef> {
        self.assets.iter().find(|a| Self::is_world_file(&a.href))
    }
}

/// Closed time interval; either end may be open.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TimeRange {
    pub start: Option<DateTime<Utc>>,
    pub end: Option<DateTime<Utc>>,
}

impl TimeRange {
    /// Parses `start/end` with RFC 3339 instants; `..` or empty marks an open end.
    pub fn parse(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('/')
            .ok_or_else(|| Error::invalid(format!("time range {s:?} must be start/end")))?;
        let one = |t: &str| -> Result<Option<DateTime<Utc>>> {
            let t = t.trim();
            if t.is_empty() || t == ".." {
                return Ok(None);
            }
            DateTime::parse_from_rfc3339(t)
                .map(|d| Some(d.with_timezone(&Utc)))
                .map_err(|e| Error::invalid(format!("bad timestamp {t:?}: {e}")))
        };
        let r = TimeRange {
            start: one(a)?,
            end: one(b)?,
        };
        if let (Some(s0), Some(e0)) = (r.start, r.end) {
            if s0 > e0 {
                return Err(Error::invalid(format!("time range {s:?} ends before it starts")));
            }
        }
        Ok(r)
    }

    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.start.is_none_or(|s| t >= s) && self.end.is_none_or(|e| t <= e)
    }

    pub fn to_query(&self) -> String {
        let f = |t: Option<DateTime<Utc>>| {
            t.map(|t| t.to_rfc3339_opts(SecondsFormat::Secs, true))
                .unwrap_or_else(|| "..".into())
        };
        format!("{}/{}", f(self.start), f(self.end))
    }
}

/// Decodes a `{"features": [...]}` item collection.
pub fn parse_item_collection(bytes: &[u8]) -> Result<Vec<CatalogItem>> {
    let doc: Value = serde_json::from_slice(bytes).map_err(|e| Error::decode(None, e))?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::decode(None, "missing `features` array"))?;
    features
        .iter()
        .enumerate()
        .map(|(i, f)| parse_item(f).map_err(|m| Error::decode(Some(i), m)))
        .collect()
}

fn parse_item(f: &Value) -> std::result::Result<CatalogItem, String> {
    let item_id = f
        .get("id")
        .and_then(Value::as_str)
        .ok_or("missing string `id`")?
        .to_string();
    let bbox = f
        .get("bbox")
        .and_then(Value::as_array)
        .ok_or("missing `bbox` array")?
        .iter()
        .map(Value::as_f64)
        .collect::<Option<Vec<f64>>>()
        .ok_or("non-numeric bbox")?;
    let bbox = match bbox[..] {
        [a, b, c, d] => Bbox::new(a, b, c, d),
        _ => return Err(format!("bbox must have 4 values, found {}", bbox.len())),
    };
    if !bbox.is_valid() {
        return Err("bbox must satisfy xmin < xmax and ymin < ymax".into());
    }
    let dt = f
        .pointer("/properties/datetime")
        .and_then(Value::as_str)
        .ok_or("missing `properties.datetime`")?;
    let datetime = DateTime::parse_from_rfc3339(dt)
        .map_err(|e| format!("bad datetime {dt:?}: {e}"))?
        .with_timezone(&Utc);
    let assets_obj = f
        .get("assets")
        .and_then(Value::as_object)
        .ok_or("missing `assets` object")?;
    let mut assets = Vec::with_capacity(assets_obj.len());
    for (key, a) in assets_obj {
        let href = a
            .get("href")
            .and_then(Value::as_str)
            .ok_or_else(|| format!("asset {key:?} has no href"))?;
        assets.push(AssetRef {
            key: key.clone(),
            href: href.to_string(),
            size: a.get("file:size").and_then(Value::as_u64),
        });
    }
    if assets.is_empty() {
        return Err("item has no assets".into());
    }
    Ok(CatalogItem {
        item_id,
        bbox,
        datetime,
        assets,
    })
}

/// Keeps the newest item per identical footprint; ties go to the
/// lexicographically greatest id. Output is newest-first.
pub fn select_latest(items: &[CatalogItem]) -> Result<Vec<CatalogItem>> {
    if items.is_empty() {
        return Err(Error::invalid("no catalog items to select from"));
    }
    let key = |b: &Bbox| [b.xmin.to_bits(), b.ymin.to_bits(), b.xmax.to_bits(), b.ymax.to_bits()];
    let mut best: std::collections::BTreeMap<[u64; 4], &CatalogItem> = Default::default();
    for it in items {
        best.entry(key(&it.bbox))
            .and_modify(|cur| {
                if (it.datetime, &it.item_id) > (cur.datetime, &cur.item_id) {
                    *cur = it;
                }
            })
            .or_insert(it);
    }
    let mut out: Vec<CatalogItem> = best.into_values().cloned().collect();
    sort_newest_first(&mut out);
    Ok(out)
}

fn sort_newest_first(items: &mut [CatalogItem]) {
    items.sort_by(|a, b| b.datetime.cmp(&a.datetime).then_with(|| a.item_id.cmp(&b.item_id)));
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay: Duration::from_millis(250),
        }
    }
}

pub struct CatalogClient {
    agent: ureq::Agent,
    retry: RetryPolicy,
}

impl Default for CatalogClient {
    fn default() -> Self {
        CatalogClient::new(RetryPolicy::default())
    }
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn file_path(href: &str) -> Option<PathBuf> {
    href.strip_prefix("file://").map(PathBuf::from)
}

impl CatalogClient {
    pub fn new(retry: RetryPolicy) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(120)))
            .build()
            .into();
        CatalogClient { agent, retry }
    }

    /// GET with retries on transport errors and 5xx responses. The delay
    /// before retry `k` (1-based) is `base_delay × 2^(k-1)`.
    fn get(&self, url: &str) -> Result<ureq::http::Response<ureq::Body>> {
        let mut last = String::new();
        for attempt in 0..self.retry.attempts.max(1) {
            if attempt > 0 {
                std::thread::sleep(self.retry.base_delay * 2u32.pow(attempt - 1));
            }
            match self.agent.get(url).call() {
                Ok(resp) if resp.status().is_success() => return Ok(resp),
                Ok(resp) if resp.status().is_server_error() => {
                    last = format!("HTTP {}", resp.status().as_u16());
                }
                Ok(resp) => {
                    return Err(Error::Network {
                        url: url.to_string(),
                        message: format!("HTTP {}", resp.status().as_u16()),
                    })
                }
                Err(e) => last = e.to_string(),
            }
            log::warn!("GET {url} failed (attempt {}): {last}", attempt + 1);
        }
        Err(Error::Network {
            url: url.to_string(),
            message: format!("{last} after {} attempts", self.retry.attempts.max(1)),
        })
    }

    /// Items intersecting `bbox` (closed intervals) with datetime inside
    /// `range`, newest first.
    pub fn search(&self, endpoint: &str, bbox: &Bbox, range: &TimeRange) -> Result<Vec<CatalogItem>> {
        let body = if let Some(path) = file_path(endpoint) {
            std::fs::read(&path).map_err(Error::io(path))?
        } else {
            let url = format!(
                "{}/search?bbox={},{},{},{}&datetime={}",
                endpoint.trim_end_matches('/'),
                bbox.xmin,
                bbox.ymin,
                bbox.xmax,
                bbox.ymax,
                range.to_query()
            );
            let mut resp = self.get(&url)?;
            resp.body_mut()
                .with_config()
                .limit(64 << 20)
                .read_to_vec()
                .map_err(|e| Error::Network {
                    url: url.clone(),
                    message: e.to_string(),
                })?
        };
        let mut items: Vec<CatalogItem> = parse_item_collection(&body)?
            .into_iter()
            .filter(|it| it.bbox.intersects(bbox) && range.contains(it.datetime))
            .collect();
        sort_newest_first(&mut items);
        Ok(items)
    }

    /// Downloads the item's imagery (and world file, if listed) into
    /// `dest_dir/{item_id}`. Files are written to a temporary name and renamed
    /// into place, so an existing destination is complete; it is reused when
    /// its size matches the advertised `file:size` (or none is advertised).
    pub fn fetch_asset(&self, item: &CatalogItem, dest_dir: &Path) -> Result<PathBuf> {
        if item.item_id.is_empty() || item.item_id.contains(['/', '\\']) || item.item_id.starts_with('.') {
            return Err(Error::invalid(format!("item id {:?} is not a safe file name", item.item_id)));
        }
        let image = item
            .image_asset()
            .ok_or_else(|| Error::invalid(format!("item {} has no imagery asset", item.item_id)))?;
        let dest = dest_dir.join(&item.item_id);
        self.download(image, &dest)?;
        if let Some(wld) = item.world_file_asset() {
            self.download(wld, &crate::raster::world_file_path(&dest))?;
        }
        Ok(dest)
    }

    fn download(&self, asset: &AssetRef, dest: &Path) -> Result<()> {
        if let Ok(meta) = std::fs::metadata(dest) {
            if meta.is_file() && asset.size.is_none_or(|s| s == meta.len()) {
                log::debug!("reusing {}", dest.display());
                return Ok(());
            }
        }
        let dir = dest.parent().unwrap_or(Path::new("."));
        let name = dest.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let tmp = dir.join(format!(
            ".{name}.part-{}-{}",
            std::process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let result = self.download_to(asset, &tmp);
        if let Err(e) = result {
            let _ = std::fs::remove_file(&tmp);
            return Err(e);
        }
        std::fs::rename(&tmp, dest).map_err(|e| {
            let _ = std::fs::remove_file(&tmp);
            Error::Io {
                path: dest.to_path_buf(),
                source: e,
            }
        })
    }

    fn download_to(&self, asset: &AssetRef, tmp: &Path) -> Result<()> {
        let named = |e: std::io::Error| Error::Io {
            path: tmp.to_path_buf(),
            source: std::io::Error::new(e.kind(), format!("{} ({e})", asset.href)),
        };
        let mut out = std::fs::File::create(tmp).map_err(named)?;
        let written = if let Some(src) = file_path(&asset.href) {
            let mut f = std::fs::File::open(&src).map_err(|e| Error::Io {
                path: src.clone(),
                source: std::io::Error::new(e.kind(), format!("{} ({e})", asset.href)),
            })?;
            std::io::copy(&mut f, &mut out).map_err(named)?
        } else if asset.href.starts_with("http://") || asset.href.starts_with("https://") {
            let resp = self.get(&asset.href)?;
            let mut reader = resp.into_body().into_reader();
            copy_network(&mut reader, &mut out, &asset.href)?
        } else {
            return Err(Error::invalid(format!("unsupported asset href {}", asset.href)));
        };
        out.sync_all().map_err(named)?;
        if let Some(size) = asset.size {
            if size != written {
                return Err(Error::Network {
                    url: asset.href.clone(),
                    message: format!("expected {size} bytes, received {written}"),
                });
            }
        }
        Ok(())
    }
}

fn copy_network(r: &mut impl Read, w: &mut std::fs::File, href: &str) -> Result<u64> {
    use std::io::Write;
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = r.read(&mut buf).map_err(|e| Error::Network {
            url: href.to_string(),
            message: e.to_string(),
        })?;
        if n == 0 {
            return Ok(total);
        }
        w.write_all(&buf[..n]).map_err(|e| Error::Io {
            path: PathBuf::from(href),
            source: e,
        })?;
        total += n as u64;
    }
}

pub fn search_catalog(endpoint: &str, bbox: &Bbox, range: &TimeRange) -> Result<Vec<CatalogItem>> {
    CatalogClient::default().search(endpoint, bbox, range)
}

/// Fetches several items; callers bound concurrency with [`par::Executor`].
pub fn fetch_all(client: &CatalogClient, items: &[CatalogItem], dest_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dest_dir).map_err(Error::io(dest_dir))?;
    let client_ref = client;
    par::map(items, |it| client_ref.fetch_asset(it, dest_dir))
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str, bbox: [f64; 4], dt: &str) -> CatalogItem {
        CatalogItem {
            item_id: id.into(),
            bbox: Bbox::new(bbox[0], bbox[1], bbox[2], bbox[3]),
            datetime: DateTime::parse_from_rfc3339(dt).unwrap().with_timezone(&Utc),
            assets: vec![AssetRef {
                key: "rgb".into(),
                href: format!("file:///nonexistent/{id}.ppm"),
                size: None,
            }],
        }
    }

    #[test]
    fn latest_per_footprint() {
        let a = item("a", [0.0, 0.0, 1.0, 1.0], "2021-06-01T00:00:00Z");
        let b = item("b", [0.0, 0.0, 1.0, 1.0], "2023-06-01T00:00:00Z");
        let c = item("c", [1.0, 0.0, 2.0, 1.0], "2022-06-01T00:00:00Z");
        let got = select_latest(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(got, vec![b.clone()]);
        assert_eq!(select_latest(std::slice::from_ref(&a)).unwrap(), vec![a.clone()]);
        let got: Vec<String> = select_latest(&[a.clone(), c, b]).unwrap().into_iter().map(|i| i.item_id).collect();
        assert_eq!(got, vec!["b", "c"]);
        assert!(select_latest(&[]).is_err());
    }

    #[test]
    fn equal_datetime_tie_prefers_greatest_id() {
        let a = item("tile-a", [0.0, 0.0, 1.0, 1.0], "2023-06-01T00:00:00Z");
        let b = item("tile-b", [0.0, 0.0, 1.0, 1.0], "2023-06-01T00:00:00Z");
        assert_eq!(select_latest(&[b.clone(), a.clone()]).unwrap()[0].item_id, "tile-b");
        assert_eq!(select_latest(&[a, b]).unwrap()[0].item_id, "tile-b");
    }

    #[test]
    fn decode_error_names_item_index() {
        let doc = br#"{"features":[
            {"id":"ok","bbox":[0,0,1,1],"properties":{"datetime":"2023-01-01T00:00:00Z"},"assets":{"a":{"href":"file:///x"}}},
            {"id":"bad","bbox":[0,0,1],"properties":{"datetime":"2023-01-01T00:00:00Z"},"assets":{"a":{"href":"file:///x"}}}
        ]}"#;
        match parse_item_collection(doc).unwrap_err() {
            Error::Decode { index, .. } => assert_eq!(index, Some(1)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_item_collection(b"{not json"), Err(Error::Decode { index: None, .. })));
    }

    #[test]
    fn time_range_parsing() {
        let r = TimeRange::parse("2021-01-01T00:00:00Z/2023-12-31T23:59:59Z").unwrap();
        assert!(r.contains(DateTime::parse_from_rfc3339("2022-05-05T00:00:00Z").unwrap().with_timezone(&Utc)));
        assert!(!r.contains(DateTime::parse_from_rfc3339("2024-01-01T00:00:00Z").unwrap().with_timezone(&Utc)));
        assert_eq!(r.to_query(), "2021-01-01T00:00:00Z/2023-12-31T23:59:59Z");
        assert_eq!(TimeRange::parse("../..").unwrap(), TimeRange::default());
        assert!(TimeRange::parse("2023-01-01T00:00:00Z/2021-01-01T00:00:00Z").is_err());
    }

    #[test]
    fn file_manifest_search_and_fetch() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src.bin");
        std::fs::write(&src, vec![7u8; 1024]).unwrap();
        let manifest = serde_json::json!({"features": [
            {"id": "t1", "bbox": [0, 0, 10, 10], "properties": {"datetime": "2021-03-01T00:00:00Z"},
             "assets": {"image": {"href": format!("file://{}", src.display()), "file:size": 1024}}},
            {"id": "t2", "bbox": [20, 20, 30, 30], "properties": {"datetime": "2023-03-01T00:00:00Z"},
             "assets": {"image": {"href": format!("file://{}", src.display())}}}
        ]});
        let mpath = dir.path().join("catalog.json");
        std::fs::write(&mpath, manifest.to_string()).unwrap();
        let endpoint = format!("file://{}", mpath.display());
        let client = CatalogClient::default();
        let hits = client
            .search(&endpoint, &Bbox::new(5.0, 5.0, 8.0, 8.0), &TimeRange::default())
            .unwrap();
        assert_eq!(hits.len(), 1);
        assert!(client
            .search(&endpoint, &Bbox::new(100.0, 100.0, 101.0, 101.0), &TimeRange::default())
            .unwrap()
            .is_empty());

        let dest = dir.path().join("cache");
        std::fs::create_dir(&dest).unwrap();
        let out = client.fetch_asset(&hits[0], &dest).unwrap();
        assert_eq!(std::fs::metadata(&out).unwrap().len(), 1024);
        assert_eq!(out, dest.join("t1"));
    }

    #[test]
    fn unwritable_destination_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src.bin");
        std::fs::write(&src, b"abc").unwrap();
        let mut it = item("t", [0.0, 0.0, 1.0, 1.0], "2023-01-01T00:00:00Z");
        it.assets[0].href = format!("file://{}", src.display());
        let missing = dir.path().join("no/such/dir");
        assert!(matches!(CatalogClient::default().fetch_asset(&it, &missing), Err(Error::Io { .. })));
    }
}
