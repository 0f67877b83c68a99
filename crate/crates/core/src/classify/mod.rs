//! Patch classification behind a pluggable backend, plus binary metrics.

mod external;
mod heuristic;
mod metrics;

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tiler::Patch;

pub use external::{ExternalBackend, DEFAULT_TIMEOUT};
pub use heuristic::{heuristic_classify, HeuristicBackend, HeuristicParams};
pub use metrics::{evaluate, ClassMetrics, MetricsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Crack,
    NoCrack,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Crack => "crack",
            Label::NoCrack => "no_crack",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crack" => Ok(Label::Crack),
            "no_crack" => Ok(Label::NoCrack),
            _ => Err(Error::invalid(format!("unknown label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub patch_id: String,
    pub label: Label,
    pub confidence: f64,
}

pub trait ClassifierBackend: Send + Sync {
    fn name(&self) -> &str;

    /// One result per input patch, in input order.
    fn classify(&self, patches: &[Patch]) -> Result<Vec<Classification>>;
}

pub fn write_predictions(preds: &[Classification], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(f);
    for p in preds {
        serde_json::to_writer(&mut w, p).map_err(|e| Error::invalid(e.to_string()))?;
        w.write_all(b"\n").map_err(Error::io(path))?;
    }
    w.flush().map_err(Error::io(path))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Classification>> {
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
