//! Training-set augmentation and stratified dataset splits.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::tiler::Patch;

pub const BRIGHTNESS_STEP: i16 = 40;
pub const DEFAULT_FRACTIONS: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Rot90,
    Rot270,
    FlipH,
    FlipV,
    Brighter,
    Darker,
}

impl Variant {
    /// Fixed output order of [`augment_patch`].
    pub const ALL: [Variant; 6] = [
        Variant::Rot90,
        Variant::Rot270,
        Variant::FlipH,
        Variant::FlipV,
        Variant::Brighter,
        Variant::Darker,
    ];

    pub fn suffix(self) -> &'static str {
        match self {
            Variant::Rot90 => ":r90",
            Variant::Rot270 => ":r270",
            Variant::FlipH => ":fh",
            Variant::FlipV => ":fv",
            Variant::Brighter => ":b+40",
            Variant::Darker => ":b-40",
        }
    }
}

/// Builds a new pixel buffer where output `(r, c)` takes input `src(r, c)`.
fn permute(p: &Patch, src: impl Fn(usize, usize) -> (usize, usize)) -> Vec<u8> {
    let n = p.size;
    let mut out = vec![0u8; n * n * 3];
    for r in 0..n {
        for c in 0..n {
            let (sr, sc) = src(r, c);
            let (o, i) = ((r * n + c) * 3, (sr * n + sc) * 3);
            out[o..o + 3].copy_from_slice(&p.pixels[i..i + 3]);
        }
    }
    out
}

fn shift(p: &Patch, delta: i16) -> Vec<u8> {
    p.pixels
        .iter()
        .map(|&v| (v as i16 + delta).clamp(0, 255) as u8)
        .collect()
}

/// Applies one transform. Rotations are counter-clockwise.
pub fn apply(p: &Patch, v: Variant) -> Patch {
    let n = p.size;
    let pixels = match v {
        Variant::Rot90 => permute(p, |r, c| (c, n - 1 - r)),
        Variant::Rot270 => permute(p, |r, c| (n - 1 - c, r)),
        Variant::FlipH => permute(p, |r, c| (r, n - 1 - c)),
        Variant::FlipV => permute(p, |r, c| (n - 1 - r, c)),
        Variant::Brighter => shift(p, BRIGHTNESS_STEP),
        Variant::Darker => shift(p, -BRIGHTNESS_STEP),
    };
    Patch {
        patch_id: format!("{}{}", p.patch_id, v.suffix()),
        pixels,
        ..p.clone()
    }
}

pub fn augment_patch(p: &Patch) -> Vec<Patch> {
    Variant::ALL.iter().map(|&v| apply(p, v)).collect()
}

/// Originals followed by their six variants, patch by patch.
pub fn expand_positive_set(positives: &[Patch]) -> Vec<Patch> {
    par::map(positives, |p| {
        let mut group = Vec::with_capacity(7);
        group.push(p.clone());
        group.extend(augment_patch(p));
        group
    })
    .into_iter()
    .flatten()
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Floor rounding on train and validation, remainder to test.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> SplitCounts {
    // the epsilon keeps exact products like 0.8 * 10 from flooring to 7
    let train = (n as f64 * fractions[0] + 1e-9).floor() as usize;
    let validation = ((n as f64 * fractions[1] + 1e-9).floor() as usize).min(n - train);
    SplitCounts {
        train,
        validation,
        test: n - train - validation,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub fractions: [f64; 3],
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
    pub per_class: BTreeMap<String, SplitCounts>,
}

/// Stratified split: each class is sorted, shuffled with a seeded ChaCha8
/// stream (classes visited in name order), then cut.
pub fn split_dataset(
    ids_by_class: &BTreeMap<String, Vec<String>>,
    seed: u64,
    fractions: [f64; 3],
) -> Result<SplitManifest> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::invalid(format!("split fractions out of range: {fractions:?}")));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions must sum to 1: {fractions:?}")));
    }
    let mut seen = BTreeSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = SplitManifest {
        seed,
        fractions,
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        per_class: BTreeMap::new(),
    };
    for (class, ids) in ids_by_class {
        if ids.is_empty() {
            return Err(Error::invalid(format!("class {class:?} has no samples")));
        }
        let mut ids = ids.clone();
        ids.sort();
        for id in &ids {
            if !seen.insert(id.clone()) {
                return Err(Error::invalid(format!("patch id {id:?} appears more than once")));
            }
        }
        ids.shuffle(&mut rng);
        let k = split_counts(ids.len(), fractions);
        let mut it = ids.into_iter();
        m.train.extend(it.by_ref().take(k.train));
        m.validation.extend(it.by_ref().take(k.validation));
        m.test.extend(it);
        m.per_class.insert(class.clone(), k);
    }
    Ok(m)
}
