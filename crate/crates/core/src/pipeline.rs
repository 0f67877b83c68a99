//! Stage orchestration over a shared JSON config. Stages communicate only
//! through files in the work directory, so any stage can be rerun alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::augment::{self, SplitManifest};
use crate::catalog::{self, CatalogClient, CatalogItem, RetryPolicy, TimeRange};
use crate::classify::{
    self, evaluate, ClassifierBackend, ExternalBackend, HeuristicBackend, HeuristicParams, Label, MetricsReport,
};
use crate::corridor::{self, CorridorPolygon};
use crate::covariate::{self, CorrelationReport, CovariateKind, TemperatureStack};
use crate::error::{Error, Result};
use crate::geojson;
use crate::geometry::Bbox;
use crate::osm::{self, ParseOptions};
use crate::par::Executor;
use crate::raster;
use crate::rhcd::{self, RhcdRecord};
use crate::tiler::{self, TileParams, TileSummary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierConfig {
    Builtin {
        #[serde(default)]
        params: HeuristicParams,
    },
    Exec {
        command: String,
        #[serde(default = "default_timeout_s")]
        timeout_s: f64,
    },
}

fn default_timeout_s() -> f64 {
    classify::DEFAULT_TIMEOUT.as_secs_f64()
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig::Builtin {
            params: HeuristicParams::default(),
        }
    }
}

impl ClassifierConfig {
    /// `builtin` or `exec:<shell command>`.
    pub fn parse(s: &str) -> Result<Self> {
        if s == "builtin" {
            Ok(ClassifierConfig::default())
        } else if let Some(cmd) = s.strip_prefix("exec:").filter(|c| !c.trim().is_empty()) {
            Ok(ClassifierConfig::Exec {
                command: cmd.to_string(),
                timeout_s: default_timeout_s(),
            })
        } else {
            Err(Error::invalid(format!("classifier must be `builtin` or `exec:<command>`, got {s:?}")))
        }
    }

    pub fn backend(&self) -> Result<Box<dyn ClassifierBackend>> {
        Ok(match self {
            ClassifierConfig::Builtin { params } => Box::new(HeuristicBackend { params: *params }),
            ClassifierConfig::Exec { command, timeout_s } => {
                if !(*timeout_s > 0.0 && timeout_s.is_finite()) {
                    return Err(Error::invalid("classifier timeout_s must be positive"));
                }
                let mut b = ExternalBackend::new(command.clone());
                b.timeout = std::time::Duration::from_secs_f64(*timeout_s);
                Box::new(b)
            }
        })
    }
}

/// Input locations. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub osm: Option<PathBuf>,
    /// Optional GeoJSON lane-count source overriding OSM `lanes` tags.
    pub lanes: Option<PathBuf>,
    /// STAC-style search endpoint: `http(s)://…`, `file://…` or a manifest path.
    pub catalog: Option<String>,
    pub lst_layers: Vec<PathBuf>,
    pub traffic: Option<PathBuf>,
    /// Ground-truth labels `{patch_id: label}` for evaluate, augment and split.
    pub truth: Option<PathBuf>,
    pub work_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub crs_note: String,
    pub lane_width_m: f64,
    pub patch_px: usize,
    pub min_road_fraction: f64,
    pub buffer_extra_m: f64,
    pub rail_buffer_m: f64,
    pub classifier: ClassifierConfig,
    pub top_percentile: f64,
    pub weight_by_length: bool,
    pub parallelism: usize,
    /// Treat OSM `lat`/`lon` attributes as already projected meters.
    pub projected: bool,
    pub lane_match_max_m: f64,
    pub tv_match_max_m: f64,
    pub lst_min_valid: usize,
    /// Search footprint; defaults to the corridor extent.
    pub bbox: Option<[f64; 4]>,
    /// `start/end` RFC 3339 interval, `..` for an open end.
    pub datetime: String,
    pub split_seed: u64,
    pub split_fractions: [f64; 3],
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            crs_note: "projected CRS in meters".into(),
            lane_width_m: corridor::LANE_WIDTH_M,
            patch_px: tiler::PATCH_PX,
            min_road_fraction: tiler::MIN_ROAD_FRACTION,
            buffer_extra_m: 0.0,
            rail_buffer_m: corridor::RAIL_BUFFER_M,
            classifier: ClassifierConfig::default(),
            top_percentile: rhcd::DEFAULT_TOP_PERCENTILE,
            weight_by_length: false,
            parallelism: 1,
            projected: false,
            lane_match_max_m: osm::LANE_MATCH_MAX_M,
            tv_match_max_m: covariate::TV_MATCH_MAX_M,
            lst_min_valid: covariate::MIN_VALID_OBSERVATIONS,
            bbox: None,
            datetime: "../..".into(),
            split_seed: 0,
            split_fractions: augment::DEFAULT_FRACTIONS,
            paths: Paths {
                work_dir: "work".into(),
                ..Paths::default()
            },
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(Error::io(path))?;
        let mut cfg: PipelineConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = std::fs::canonicalize(base).map_err(Error::io(base))?;
        cfg.resolve_paths(&base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        for path in p.osm.iter_mut().chain(&mut p.lanes).chain(&mut p.traffic).chain(&mut p.truth) {
            resolve(base, path);
        }
        for path in &mut p.lst_layers {
            resolve(base, path);
        }
        resolve(base, &mut p.work_dir);
        if let Some(c) = &mut p.catalog {
            if !c.contains("://") {
                let mut path = PathBuf::from(&*c);
                resolve(base, &mut path);
                *c = format!("file://{}", path.display());
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lane_width_m", self.lane_width_m),
            ("rail_buffer_m", self.rail_buffer_m),
            ("lane_match_max_m", self.lane_match_max_m),
            ("tv_match_max_m", self.tv_match_max_m),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.buffer_extra_m >= 0.0 && self.buffer_extra_m.is_finite()) {
            return Err(Error::invalid("buffer_extra_m must be non-negative"));
        }
        if self.patch_px == 0 || self.parallelism == 0 || self.lst_min_valid == 0 {
            return Err(Error::invalid("patch_px, parallelism and lst_min_valid must be positive"));
        }
        if !(0.0..=1.0).contains(&self.min_road_fraction) {
            return Err(Error::invalid("min_road_fraction must lie in [0, 1]"));
        }
        if !(self.top_percentile > 0.0 && self.top_percentile < 100.0) {
            return Err(Error::invalid("top_percentile must lie in (0, 100)"));
        }
        TimeRange::parse(&self.datetime)?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the effective config.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn work(&self, rel: &str) -> PathBuf {
        self.paths.work_dir.join(rel)
    }

    fn tile_params(&self) -> TileParams {
        TileParams {
            patch_px: self.patch_px,
            min_road_fraction: self.min_road_fraction,
        }
    }
}

/// Work-directory layout.
pub mod files {
    pub const SEGMENTS: &str = "segments.geojson";
    pub const OCCLUDERS: &str = "occluders.geojson";
    pub const CORRIDORS: &str = "corridors.geojson";
    pub const IMAGERY: &str = "imagery";
    pub const ITEMS: &str = "imagery/items.json";
    pub const PATCHES: &str = "patches";
    pub const PATCH_INDEX: &str = "patches/index.ndjson";
    pub const TILE_SUMMARY: &str = "patches/summary.json";
    pub const PREDICTIONS: &str = "predictions.ndjson";
    pub const METRICS: &str = "metrics.json";
    pub const RHCD_GEOJSON: &str = "rhcd.geojson";
    pub const RHCD_CSV: &str = "rhcd.csv";
    pub const LST_AMPLITUDE: &str = "lst_amplitude.f32";
    pub const AUGMENTED: &str = "augmented";
    pub const SPLIT: &str = "split.json";
    pub const MANIFESTS: &str = "manifests";
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StageIo {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub config_hash: String,
    pub duration_s: f64,
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    std::fs::write(path, bytes).map_err(Error::io(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::decode(None, format!("{}: {e}", path.display())))
}

fn required<'a, T>(v: &'a Option<T>, name: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| Error::invalid(format!("config is missing paths.{name}")))
}

/// Runs `f` on a pool of `cfg.parallelism` workers and records a manifest.
fn run_stage(cfg: &PipelineConfig, stage: &str, f: impl FnOnce() -> Result<StageIo> + Send) -> Result<StageIo> {
    let start = Instant::now();
    std::fs::create_dir_all(&cfg.paths.work_dir).map_err(Error::io(&cfg.paths.work_dir))?;
    let io = Executor::new(cfg.parallelism)?.install(f)?;
    let manifest = RunManifest {
        stage: stage.to_string(),
        inputs: io.inputs.clone(),
        outputs: io.outputs.clone(),
        config_hash: cfg.hash(),
        duration_s: start.elapsed().as_secs_f64(),
    };
    write_json(&cfg.work(&format!("{}/{stage}.json", files::MANIFESTS)), &manifest)?;
    log::info!("{stage} finished in {:.3} s", manifest.duration_s);
    Ok(io)
}

pub fn extract_network(cfg: &PipelineConfig) -> Result<StageIo> {
    run_stage(cfg, "extract-network", || {
        let osm_path = required(&cfg.paths.osm, "osm")?;
        let f = std::fs::File::open(osm_path).map_err(Error::io(osm_path))?;
        let net = osm::parse_osm_xml(std::io::BufReader::new(f), ParseOptions { projected: cfg.projected })?;
        let roads = osm::extract_motorways(&net);
        let rails = osm::extract_rail_occluders(&net);
        for w in roads.warnings.iter().chain(&rails.warnings) {
            log::warn!("way {}: {}", w.way_id, w.message);
        }
        let mut inputs = vec![osm_path.clone()];
        let mut segments = roads.segments;
        if let Some(lanes) = &cfg.paths.lanes {
            let source = geojson::read_lane_source(lanes)?;
            segments = osm::match_lanes(&segments, &source, cfg.lane_match_max_m);
            inputs.push(lanes.clone());
        }
        log::info!("extracted {} motorway segments and {} rail bridges", segments.len(), rails.segments.len());
        let (seg_path, occ_path) = (cfg.work(files::SEGMENTS), cfg.work(files::OCCLUDERS));
        geojson::write_json(&geojson::segments_to_geojson(&segments), &seg_path)?;
        geojson::write_json(&geojson::segments_to_geojson(&rails.segments), &occ_path)?;
        Ok(StageIo {
            inputs,
            outputs: vec![seg_path, occ_path],
        })
    })
}

pub fn buffer(cfg: &PipelineConfig) -> Result<StageIo> {
    run_stage(cfg, "buffer", || {
        let (seg_path, occ_path) = (cfg.work(files::SEGMENTS), cfg.work(files::OCCLUDERS));
        let segments = geojson::read_segments(&seg_path)?;
        let rails = geojson::read_segments(&occ_path)?;
        let roads: Vec<CorridorPolygon> = crate::par::map(&segments, |s| {
            corridor::segment_corridor(s, cfg.lane_width_m, cfg.buffer_extra_m)
        })
        .into_iter()
        .collect::<Result<_>>()?;
        let occluders: Vec<CorridorPolygon> =
            crate::par::map(&rails, |s| corridor::occluder_corridor(s, cfg.rail_buffer_m))
                .into_iter()
                .collect::<Result<_>>()?;
        let mut features = geojson::corridors_to_geojson(&roads, "road");
        let rail_features = geojson::corridors_to_geojson(&occluders, "rail");
        if let (Some(a), Some(b)) = (features["features"].as_array_mut(), rail_features["features"].as_array()) {
            a.extend(b.iter().cloned());
        }
        let out = cfg.work(files::CORRIDORS);
        geojson::write_json(&features, &out)?;
        Ok(StageIo {
            inputs: vec![seg_path, occ_path],
            outputs: vec![out],
        })
    })
}

fn read_road_and_rail(cfg: &PipelineConfig) -> Result<(Vec<CorridorPolygon>, Vec<CorridorPolygon>)> {
    let path = cfg.work(files::CORRIDORS);
    Ok((geojson::read_corridors(&path, Some("road"))?, geojson::read_corridors(&path, Some("rail"))?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FetchedItem {
    pub item_id: String,
    pub datetime: String,
    pub path: PathBuf,
}

pub fn fetch(cfg: &PipelineConfig) -> Result<StageIo> {
    run_stage(cfg, "fetch", || {
        let endpoint = required(&cfg.paths.catalog, "catalog")?;
        let (roads, _) = read_road_and_rail(cfg)?;
        let bbox = match cfg.bbox {
            Some([a, b, c, d]) => Bbox::new(a, b, c, d),
            None => roads
                .iter()
                .map(CorridorPolygon::bbox)
                .reduce(|a, b| a.union(&b))
                .ok_or_else(|| Error::invalid("no corridors to derive a search bbox from"))?,
        };
        let range = TimeRange::parse(&cfg.datetime)?;
        let client = CatalogClient::new(RetryPolicy::default());
        let found = client.search(endpoint, &bbox, &range)?;
        let items: Vec<CatalogItem> = if found.is_empty() { Vec::new() } else { catalog::select_latest(&found)? };
        log::info!("catalog returned {} items, {} after deduplication", found.len(), items.len());
        let dest = cfg.work(files::IMAGERY);
        let paths = catalog::fetch_all(&client, &items, &dest)?;
        let fetched: Vec<FetchedItem> = items
            .iter()
            .zip(&paths)
            .map(|(it, p)| FetchedItem {
                item_id: it.item_id.clone(),
                datetime: it.datetime.to_rfc3339(),
                path: p.clone(),
            })
            .collect();
        let list = cfg.work(files::ITEMS);
        write_json(&list, &fetched)?;
        let mut outputs = paths;
        outputs.push(list);
        Ok(StageIo {
            inputs: vec![PathBuf::from(endpoint)],
            outputs,
        })
    })
}

pub fn tile(cfg: &PipelineConfig) -> Result<StageIo> {
    run_stage(cfg, "tile", || {
        let (roads, rails) = read_road_and_rail(cfg)?;
        let items_path = cfg.work(files::ITEMS);
        let mut items: Vec<FetchedItem> = read_json(&items_path)?;
        items.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        let mut patches = Vec::new();
        let mut summary = TileSummary::default();
        let mut inputs = vec![cfg.work(files::CORRIDORS), items_path];
        for it in &items {
            let img = raster::read_raster(&it.path)?;
            let road_mask = corridor::rasterize(&roads, &img.grid)?;
            let rail_mask = corridor::rasterize(&rails, &img.grid)?;
            let mask = corridor::subtract_occluders(&road_mask, &rail_mask)?;
            let (p, s) = tiler::tile_patches(&it.item_id, &img, &mask, &roads, &cfg.tile_params())?;
            log::info!("tile {}: {} patches, {} skipped", it.item_id, s.patches_emitted, s.patches_skipped);
            patches.extend(p);
            summary.merge(&s);
            inputs.push(it.path.clone());
        }
        let dir = cfg.work(files::PATCHES);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).map_err(Error::io(&dir))?;
        }
        let index = tiler::write_patch_index(&patches, &dir)?;
        let sum_path = cfg.work(files::TILE_SUMMARY);
        write_json(&sum_path, &summary)?;
        Ok(StageIo {
            inputs,
            outputs: vec![index, sum_path],
        })
    })
}

pub fn classify(cfg: &PipelineConfig) -> Result<StageIo> {
    run_stage(cfg, "classify", || {
        let index_path = cfg.work(files::PATCH_INDEX);
        let dir = cfg.work(files::PATCHES);
        let records = tiler::read_patch_index(&index_path)?;
        let patches: Vec<_> = crate::par::map(&records, |r| tiler::load_patch(r, &dir))
            .into_iter()
            .collect::<Result<_>>()?;
        let backend = cfg.classifier.backend()?;
        let preds = backend.classify(&patches)?;
        if preds.len() != patches.len() {
            return Err(Error::Backend {
                patch_id: None,
                message: format!("{} returned {} results for {} patches", backend.name(), preds.len(), patches.len()),
            });
        }
        let n_crack = preds.iter().filter(|p| p.label == Label::Crack).count();
        log::info!("classified {} patches with {}: {n_crack} crack", preds.len(), backend.name());
        let out = cfg.work(files::PREDICTIONS);
        classify::write_predictions(&preds, &out)?;
        Ok(StageIo {
            inputs: vec![index_path],
            outputs: vec![out],
        })
    })
}

pub fn read_truth(path: &Path) -> Result<BTreeMap<String, Label>> {
    read_json(path)
}

pub fn evaluate_stage(cfg: &PipelineConfig, predictions: Option<&Path>, out: Option<&Path>) -> Result<MetricsReport> {
    let mut report = None;
    run_stage(cfg, "evaluate", || {
        let truth_path = required(&cfg.paths.truth, "truth")?;
        let preds_path = predictions.map(Path::to_path_buf).unwrap_or_else(|| cfg.work(files::PREDICTIONS));
        let preds = classify::read_predictions(&preds_path)?;
        let m = evaluate(&preds, &read_truth(truth_path)?)?;
        let out = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.work(files::METRICS));
        write_json(&out, &m)?;
        report = Some(m);
        Ok(StageIo {
            inputs: vec![preds_path, truth_path.clone()],
            outputs: vec![out],
        })
    })?;
    Ok(report.expect("set by stage"))
}

pub fn rhcd_stage(cfg: &PipelineConfig) -> Result<StageIo> {
    run_stage(cfg, "rhcd", || {
        let (preds_path, index_path, seg_path) =
            (cfg.work(files::PREDICTIONS), cfg.work(files::PATCH_INDEX), cfg.work(files::SEGMENTS));
        let preds = classify::read_predictions(&preds_path)?;
        let index = tiler::read_patch_index(&index_path)?;
        let segments = geojson::read_segments(&seg_path)?;
        let lengths = segments.iter().map(|s| (s.id, s.length_m)).collect();
        let mut records = rhcd::aggregate_rhcd(&preds, &index, &lengths)?;
        if !records.is_empty() {
            let thr = rhcd::flag_top_percentile(&mut records, cfg.top_percentile, cfg.weight_by_length)?;
            log::info!("top {}% threshold: {thr}%", cfg.top_percentile);
        }
        let (gj, csv) = (cfg.work(files::RHCD_GEOJSON), cfg.work(files::RHCD_CSV));
        geojson::write_json(&rhcd::rhcd_geojson(&records, &segments)?, &gj)?;
        write_bytes(&csv, rhcd::rhcd_csv(&records).as_bytes())?;
        Ok(StageIo {
            inputs: vec![preds_path, index_path, seg_path],
            outputs: vec![gj, csv],
        })
    })
}

fn load_stack(cfg: &PipelineConfig) -> Result<TemperatureStack> {
    let layers = cfg
        .paths
        .lst_layers
        .iter()
        .map(|p| raster::read_raster(p))
        .collect::<Result<Vec<_>>>()?;
    let stamps = cfg.paths.lst_layers.iter().map(|p| p.display().to_string()).collect();
    TemperatureStack::new(layers, stamps)
}

pub fn lst_amplitude(cfg: &PipelineConfig) -> Result<StageIo> {
    run_stage(cfg, "lst-amplitude", || {
        if cfg.paths.lst_layers.is_empty() {
            return Err(Error::invalid("config lists no paths.lst_layers"));
        }
        let amp = covariate::lt_lst_a(&load_stack(cfg)?, cfg.lst_min_valid)?;
        let out = cfg.work(files::LST_AMPLITUDE);
        raster::write_raster(&amp, &out)?;
        Ok(StageIo {
            inputs: cfg.paths.lst_layers.clone(),
            outputs: vec![out],
        })
    })
}

pub fn correlation_file(kind: CovariateKind) -> String {
    format!("correlation_{}.json", kind.as_str())
}

pub fn scatter_file(kind: CovariateKind) -> String {
    format!("scatter_{}.csv", kind.as_str())
}

/// Correlates RHCD with every configured covariate. Covariates whose
/// correlation is undefined (fewer than two units, zero variance) are
/// reported as warnings and produce no report.
pub fn correlate(cfg: &PipelineConfig) -> Result<StageIo> {
    run_stage(cfg, "correlate", || {
        let gj = cfg.work(files::RHCD_GEOJSON);
        let records: Vec<RhcdRecord> = rhcd::read_rhcd_geojson(&gj)?;
        let mut io = StageIo {
            inputs: vec![gj],
            outputs: Vec::new(),
        };
        let mut tables = Vec::new();
        if !cfg.paths.lst_layers.is_empty() {
            let amp_path = cfg.work(files::LST_AMPLITUDE);
            let amp = covariate::lt_lst_a(&load_stack(cfg)?, cfg.lst_min_valid)?;
            raster::write_raster(&amp, &amp_path)?;
            let (roads, _) = read_road_and_rail(cfg)?;
            tables.push((CovariateKind::LtLstA, covariate::sample_raster_per_unit(&amp, &roads)?));
            io.inputs.extend(cfg.paths.lst_layers.iter().cloned());
            io.outputs.push(amp_path);
        }
        if let Some(tv_path) = &cfg.paths.traffic {
            let tv = geojson::read_traffic_volume(tv_path)?;
            let seg_path = cfg.work(files::SEGMENTS);
            let segments = geojson::read_segments(&seg_path)?;
            tables.push((
                CovariateKind::TrafficVolume,
                covariate::join_traffic_volume(&segments, &tv, cfg.tv_match_max_m),
            ));
            io.inputs.extend([tv_path.clone(), seg_path]);
        }
        for (kind, rows) in tables {
            let (report, scatter): (CorrelationReport, _) = match covariate::correlate(&records, &rows, kind) {
                Ok(x) => x,
                Err(e) => {
                    log::warn!("{e}");
                    continue;
                }
            };
            log::info!("{}: r = {:.4} over {} units", kind.as_str(), report.r, report.n);
            let (rp, sp) = (cfg.work(&correlation_file(kind)), cfg.work(&scatter_file(kind)));
            write_json(&rp, &report)?;
            write_bytes(&sp, covariate::scatter_csv(&scatter).as_bytes())?;
            io.outputs.extend([rp, sp]);
        }
        Ok(io)
    })
}

fn crack_patches(cfg: &PipelineConfig) -> Result<(Vec<tiler::PatchRecord>, BTreeMap<String, Label>)> {
    let truth = read_truth(required(&cfg.paths.truth, "truth")?)?;
    let index = tiler::read_patch_index(&cfg.work(files::PATCH_INDEX))?;
    let missing: Vec<&str> = index
        .iter()
        .filter(|r| !truth.contains_key(&r.patch_id))
        .map(|r| r.patch_id.as_str())
        .take(10)
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!("no truth label for patches {missing:?}")));
    }
    Ok((index, truth))
}

/// Writes the crack patches plus their six variants each to `augmented/`.
pub fn augment_stage(cfg: &PipelineConfig) -> Result<StageIo> {
    run_stage(cfg, "augment", || {
        let (index, truth) = crack_patches(cfg)?;
        let dir = cfg.work(files::PATCHES);
        let positives: Vec<_> = index.iter().filter(|r| truth[&r.patch_id] == Label::Crack).collect();
        let patches = positives
            .iter()
            .map(|r| tiler::load_patch(r, &dir))
            .collect::<Result<Vec<_>>>()?;
        let expanded = augment::expand_positive_set(&patches);
        log::info!("expanded {} crack patches to {}", patches.len(), expanded.len());
        let out_dir = cfg.work(files::AUGMENTED);
        if out_dir.exists() {
            std::fs::remove_dir_all(&out_dir).map_err(Error::io(&out_dir))?;
        }
        let idx = tiler::write_patch_index(&expanded, &out_dir)?;
        Ok(StageIo {
            inputs: vec![cfg.work(files::PATCH_INDEX), required(&cfg.paths.truth, "truth")?.clone()],
            outputs: vec![idx],
        })
    })
}

pub fn split_stage(cfg: &PipelineConfig) -> Result<SplitManifest> {
    let mut manifest = None;
    run_stage(cfg, "split", || {
        let (index, truth) = crack_patches(cfg)?;
        let mut by_class: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for r in &index {
            by_class
                .entry(truth[&r.patch_id].as_str().to_string())
                .or_default()
                .push(r.patch_id.clone());
        }
        let m = augment::split_dataset(&by_class, cfg.split_seed, cfg.split_fractions)?;
        let out = cfg.work(files::SPLIT);
        write_json(&out, &m)?;
        manifest = Some(m);
        Ok(StageIo {
            inputs: vec![cfg.work(files::PATCH_INDEX)],
            outputs: vec![out],
        })
    })?;
    Ok(manifest.expect("set by stage"))
}

/// extract → buffer → fetch → tile → classify → rhcd → correlate.
pub fn run_all(cfg: &PipelineConfig) -> Result<()> {
    let start = Instant::now();
    extract_network(cfg)?;
    buffer(cfg)?;
    fetch(cfg)?;
    tile(cfg)?;
    classify(cfg)?;
    rhcd_stage(cfg)?;
    correlate(cfg)?;
    write_json(
        &cfg.work(&format!("{}/run-all.json", files::MANIFESTS)),
        &json!({
            "stage": "run-all",
            "stages": ["extract-network", "buffer", "fetch", "tile", "classify", "rhcd", "correlate"],
            "config_hash": cfg.hash(),
            "duration_s": start.elapsed().as_secs_f64(),
        }),
    )
}
