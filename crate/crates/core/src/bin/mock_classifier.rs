//! Stand-in model for exercising the external classifier protocol.
//!
//! Usage: `rhcd-mock-classifier <mode>` where mode is one of
//! `all-no-crack`, `shuffle`, `drop-one`, `malformed`, `exit-nonzero`,
//! `hang`, or `heuristic` (runs the builtin detector on decoded pixels).

use std::io::{BufRead, Write};

use base64::Engine;
use serde_json::{json, Value};

fn main() {
    let mode = std::env::args().nth(1).unwrap_or_else(|| "all-no-crack".into());
    let stdin = std::io::stdin();
    let mut requests: Vec<Value> = Vec::new();
    for line in stdin.lock().lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(v) => requests.push(v),
            Err(e) => {
                eprintln!("mock: bad request: {e}");
                std::process::exit(2);
            }
        }
    }
    let id = |v: &Value| v["patch_id"].as_str().unwrap_or_default().to_string();
    let answer = |v: &Value| -> Value {
        if mode != "heuristic" {
            return json!({"patch_id": id(v), "label": "no_crack", "confidence": 1.0});
        }
        let pixels = base64::engine::general_purpose::STANDARD
            .decode(v["rgb_base64"].as_str().unwrap_or_default())
            .unwrap_or_default();
        let patch = rhcd::tiler::Patch {
            patch_id: id(v),
            unit_id: 0,
            origin: rhcd::Point::new(0.0, 0.0),
            pixel_size: 0.1,
            size: v["width"].as_u64().unwrap_or(0) as usize,
            pixels,
            road_fraction: 1.0,
        };
        let c = rhcd::classify::heuristic_classify(&patch, &Default::default());
        serde_json::to_value(c).expect("serializable")
    };

    let mut out = std::io::stdout().lock();
    let mut emit = |v: &Value| {
        let _ = writeln!(out, "{v}");
    };
    match mode.as_str() {
        "all-no-crack" | "heuristic" => requests.iter().for_each(|r| emit(&answer(r))),
        "shuffle" => requests.iter().rev().for_each(|r| emit(&answer(r))),
        "drop-one" => requests.iter().skip(1).for_each(|r| emit(&answer(r))),
        "malformed" => {
            if let Some((first, rest)) = requests.split_first() {
                emit(&answer(first));
                let _ = writeln!(out, "{{\"patch_id\": \"{}\", \"label\": ", id(rest.first().unwrap_or(first)));
            }
        }
        "exit-nonzero" => {
            if let Some(first) = requests.first() {
                emit(&answer(first));
            }
            let _ = out.flush();
            std::process::exit(3);
        }
        "hang" => {
            let _ = out.flush();
            std::thread::sleep(std::time::Duration::from_secs(3600));
        }
        other => {
            eprintln!("mock: unknown mode {other}");
            std::process::exit(64);
        }
    }
    let _ = out.flush();
}
