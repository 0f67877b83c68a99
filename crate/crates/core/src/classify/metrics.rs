use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{Classification, Label};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassMetrics {
    /// Zero denominators yield 0.
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            tp,
            fp,
            tn,
            fn_,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: u64,
    pub accuracy: f64,
    /// Keyed by label name, each class treated as the positive one.
    pub classes: BTreeMap<String, ClassMetrics>,
}

impl MetricsReport {
    pub fn class(&self, l: Label) -> &ClassMetrics {
        &self.classes[l.as_str()]
    }
}

pub fn evaluate(preds: &[Classification], truth: &BTreeMap<String, Label>) -> Result<MetricsReport> {
    let missing: Vec<&str> = preds
        .iter()
        .filter(|p| !truth.contains_key(&p.patch_id))
        .map(|p| p.patch_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::invalid(format!("no truth label for patches {missing:?}")));
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = preds.iter().find(|p| !seen.insert(p.patch_id.as_str())) {
        return Err(Error::invalid(format!("duplicate prediction for {:?}", dup.patch_id)));
    }
    // cm[truth][pred] with index 0 = crack
    let mut cm = [[0u64; 2]; 2];
    let idx = |l: Label| (l == Label::NoCrack) as usize;
    for p in preds {
        cm[idx(truth[&p.patch_id])][idx(p.label)] += 1;
    }
    let n = preds.len() as u64;
    let mut classes = BTreeMap::new();
    for l in [Label::Crack, Label::NoCrack] {
        let (i, o) = (idx(l), 1 - idx(l));
        classes.insert(
            l.as_str().to_string(),
            ClassMetrics::from_counts(cm[i][i], cm[o][i], cm[o][o], cm[i][o]),
        );
    }
    Ok(MetricsReport {
        n,
        accuracy: if n == 0 { 0.0 } else { (cm[0][0] + cm[1][1]) as f64 / n as f64 },
        classes,
    })
}
