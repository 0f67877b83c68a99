//! External classifier subprocess protocol, exercised with the mock binary.

mod common;

use std::time::Duration;

use rhcd::classify::{ClassifierBackend, ExternalBackend, HeuristicBackend, Label};
use rhcd::synth;
use rhcd::tiler::Patch;
use rhcd::{Error, Point};

fn patches(n: usize) -> Vec<Patch> {
    (0..n)
        .map(|i| Patch {
            patch_id: format!("t:{}:{}", i / 7, i % 7),
            unit_id: 1,
            origin: Point::new(0.0, 0.0),
            pixel_size: 0.1,
            size: 50,
            pixels: vec![(i % 200) as u8 + 10; 7500],
            road_fraction: 1.0,
        })
        .collect()
}

fn mock(mode: &str) -> ExternalBackend {
    let mut b = ExternalBackend::new(format!("'{}' {mode}", common::bin("mock")));
    b.timeout = Duration::from_secs(10);
    b
}

fn failing_patch(e: Error) -> Option<String> {
    match e {
        Error::Backend { patch_id, .. } => patch_id,
        other => panic!("expected backend error, got {other}"),
    }
}

#[test]
fn all_no_crack_mock() {
    let out = mock("all-no-crack").classify(&patches(5)).unwrap();
    assert!(out.iter().all(|c| c.label == Label::NoCrack && c.confidence == 1.0));
}

#[test]
fn shuffled_responses_matched_by_id() {
    let ps = patches(23);
    let out = mock("shuffle").classify(&ps).unwrap();
    for (p, c) in ps.iter().zip(&out) {
        assert_eq!(p.patch_id, c.patch_id);
    }
}

#[test]
fn heuristic_over_protocol_equals_builtin() {
    let scene = synth::generate_scene(&synth::demo_spec()).unwrap();
    let run = common::run_library(&scene);
    let remote = mock("heuristic").classify(&run.patches).unwrap();
    let local = HeuristicBackend::default().classify(&run.patches).unwrap();
    assert_eq!(remote, local);
}

#[test]
fn dropped_response_names_patch() {
    let ps = patches(4);
    assert_eq!(failing_patch(mock("drop-one").classify(&ps).unwrap_err()), Some(ps[0].patch_id.clone()));
}

#[test]
fn malformed_line_names_patch() {
    let ps = patches(4);
    assert_eq!(failing_patch(mock("malformed").classify(&ps).unwrap_err()), Some(ps[1].patch_id.clone()));
}

#[test]
fn nonzero_exit_is_backend_error() {
    let ps = patches(3);
    let e = mock("exit-nonzero").classify(&ps).unwrap_err();
    assert!(e.to_string().contains("exit"), "{e}");
    assert_eq!(failing_patch(e), Some(ps[1].patch_id.clone()));
}

#[test]
fn hanging_child_times_out() {
    let mut b = mock("hang");
    b.timeout = Duration::from_millis(300);
    let ps = patches(2);
    let t = std::time::Instant::now();
    assert_eq!(failing_patch(b.classify(&ps).unwrap_err()), Some(ps[0].patch_id.clone()));
    assert!(t.elapsed() < Duration::from_secs(5));
}

#[test]
fn unlaunchable_command() {
    let b = ExternalBackend::new("/nonexistent/model --serve");
    assert!(matches!(b.classify(&patches(1)), Err(Error::Backend { .. })));
}
