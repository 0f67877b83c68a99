//! Patch tiling: partition properties, assignment and scene-level counts.

mod common;

use std::collections::{BTreeMap, HashSet};

use rhcd::corridor::{buffer_polyline, PixelMask};
use rhcd::raster::GeoRaster;
use rhcd::synth;
use rhcd::tiler::{tile_patches, TileParams};
use rhcd::{GridSpec, Point};

#[test]
fn demo_scene_patch_counts_per_segment() {
    let scene = synth::generate_scene(&synth::demo_spec()).unwrap();
    let run = common::run_library(&scene);
    let mut per_unit: BTreeMap<i64, usize> = BTreeMap::new();
    for p in &run.patches {
        *per_unit.entry(p.unit_id).or_default() += 1;
    }
    // the rail bridge removes two patches from the first road
    assert_eq!(per_unit, BTreeMap::from([(1001, 18), (1002, 20), (1003, 20), (1004, 20)]));
    assert_eq!(per_unit.values().sum::<usize>(), run.patches.len());
}

#[test]
fn footprints_disjoint_and_inside_raster() {
    for seed in 0..10 {
        let scene = synth::generate_scene(&common::random_scene_spec(seed)).unwrap();
        let run = common::run_library(&scene);
        let g = scene.imagery.grid;
        let b = g.bbox();
        let mut cells = HashSet::new();
        for p in &run.patches {
            let size = p.size as f64 * p.pixel_size;
            assert!(p.origin.x >= b.xmin && p.origin.x + size <= b.xmax + 1e-9);
            assert!(p.origin.y <= b.ymax && p.origin.y - size >= b.ymin - 1e-9);
            let key = (((p.origin.x - g.origin_x) / size).round() as i64, ((g.origin_y - p.origin.y) / size).round() as i64);
            assert!(cells.insert(key), "overlapping footprint {key:?}");
            let ids: HashSet<i64> = scene.segments.iter().map(|s| s.id).collect();
            assert!(ids.contains(&p.unit_id));
        }
    }
}

#[test]
fn road_fraction_equals_popcount() {
    let scene = synth::generate_scene(&common::random_scene_spec(3)).unwrap();
    let run = common::run_library(&scene);
    for p in &run.patches {
        let road = p.pixels.chunks(3).filter(|px| *px != [0, 0, 0]).count();
        assert_eq!(p.road_fraction, road as f64 / 2500.0);
    }
}

#[test]
fn pixel_size_sets_ground_footprint() {
    let g = GridSpec::new(100, 100, 0.0, 25.0, 0.25).unwrap();
    let r = GeoRaster::from_u8(g, 3, vec![9; g.len() * 3], None).unwrap();
    let m = PixelMask::filled(g).unwrap();
    let u = buffer_polyline(1, &[Point::new(0.0, 12.5), Point::new(25.0, 12.5)], 20.0).unwrap();
    let (patches, _) = tile_patches("a", &r, &m, &[u], &TileParams::default()).unwrap();
    assert_eq!(patches.len(), 4);
    assert_eq!(patches[3].origin, Point::new(12.5, 12.5));
}
