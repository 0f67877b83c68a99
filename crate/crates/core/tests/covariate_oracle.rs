//! Temperature amplitude, zonal sampling and correlation against loop oracles.

mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rhcd::corridor::buffer_polyline;
use rhcd::covariate::{self, TemperatureStack, AMPLITUDE_NODATA};
use rhcd::raster::GeoRaster;
use rhcd::{GridSpec, Point};

const ND: f32 = -32768.0;

pub fn random_stack(rng: &mut ChaCha8Rng, layers: usize, w: usize, h: usize) -> TemperatureStack {
    let g = GridSpec::new(w, h, 500.0, 900.0, 30.0).unwrap();
    let layers = (0..layers)
        .map(|_| {
            let data = (0..w * h)
                .map(|_| if rng.random_bool(0.2) { ND } else { rng.random_range(-10.0f32..60.0) })
                .collect();
            GeoRaster::from_f32(g, data, Some(ND)).unwrap()
        })
        .collect::<Vec<_>>();
    let n = layers.len();
    TemperatureStack::new(layers, (0..n).map(|i| i.to_string()).collect()).unwrap()
}

#[test]
fn amplitude_matches_cell_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let k = rng.random_range(3..=12);
        let s = random_stack(&mut rng, k, 16, 16);
        let out = covariate::lt_lst_a(&s, 2).unwrap();
        let out = out.as_f32().unwrap();
        for (i, got) in out.iter().enumerate() {
            let vals: Vec<f32> = s.layers.iter().map(|l| l.as_f32().unwrap()[i]).filter(|&v| v != ND).collect();
            let want = if vals.len() < 2 {
                AMPLITUDE_NODATA
            } else {
                vals.iter().cloned().fold(f32::MIN, f32::max) - vals.iter().cloned().fold(f32::MAX, f32::min)
            };
            assert_eq!(got.to_bits(), want.to_bits());
        }
    }
}

#[test]
fn zonal_mean_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let g = GridSpec::new(20, 20, 0.0, 600.0, 30.0).unwrap();
    let data: Vec<f32> = (0..400).map(|_| if rng.random_bool(0.1) { ND } else { rng.random_range(0.0..40.0) }).collect();
    let r = GeoRaster::from_f32(g, data.clone(), Some(ND)).unwrap();
    let corridors: Vec<_> = (0..15)
        .map(|k| {
            let a = Point::new(rng.random_range(0.0..600.0), rng.random_range(0.0..600.0));
            let b = Point::new(rng.random_range(0.0..600.0), rng.random_range(0.0..600.0));
            buffer_polyline(k, &[a, b], rng.random_range(10.0..40.0)).unwrap()
        })
        .collect();
    let rows = covariate::sample_raster_per_unit(&r, &corridors).unwrap();
    for c in &corridors {
        let rings: Vec<&[Point]> = c.rings().collect();
        let vals: Vec<f64> = (0..400)
            .filter(|&i| data[i] != ND && common::winding_contains(&rings, g.pixel_to_world(i % 20, i / 20)))
            .map(|i| data[i] as f64)
            .collect();
        let got = rows.iter().find(|row| row.unit_id == c.unit_id);
        if vals.is_empty() {
            assert!(got.is_none());
        } else {
            let want = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((got.unwrap().value - want).abs() < 1e-9);
        }
    }
}

#[test]
fn pearson_matches_direct_formula_and_affine_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..20 {
        let xs: Vec<f64> = (0..1000).map(|_| rng.random_range(-5.0..5.0)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.4 * x + rng.random_range(-5.0..5.0)).collect();
        let r = covariate::pearson(&xs, &ys).unwrap();
        let n = xs.len() as f64;
        let (sx, sy) = (xs.iter().sum::<f64>(), ys.iter().sum::<f64>());
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let (sxx, syy) = (xs.iter().map(|x| x * x).sum::<f64>(), ys.iter().map(|y| y * y).sum::<f64>());
        let direct = (n * sxy - sx * sy) / ((n * sxx - sx * sx).sqrt() * (n * syy - sy * sy).sqrt());
        assert!((r - direct).abs() < 1e-12, "{r} vs {direct}");
        let scaled: Vec<f64> = ys.iter().map(|y| 3.7 * y - 120.0).collect();
        assert!((covariate::pearson(&xs, &scaled).unwrap() - r).abs() < 1e-12);
    }
}
