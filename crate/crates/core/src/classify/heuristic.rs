use serde::{Deserialize, Serialize};

use super::{Classification, ClassifierBackend, Label};
use crate::error::Result;
use crate::par;
use crate::tiler::Patch;

/// Dark-line detector thresholds. Not a trained model: a deterministic
/// baseline that separates planted synthetic cracks from asphalt noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicParams {
    /// Pixels darker than `mean − k_sigma·std` of the road pixels are dark.
    pub k_sigma: f64,
    pub min_component_px: usize,
    /// Minimum bounding-box aspect ratio of a crack component.
    pub min_elongation: f64,
}

impl Default for HeuristicParams {
    fn default() -> Self {
        HeuristicParams {
            k_sigma: 1.5,
            min_component_px: 10,
            min_elongation: 3.0,
        }
    }
}

struct Component {
    size: usize,
    w: usize,
    h: usize,
}

impl Component {
    fn elongation(&self) -> f64 {
        self.w.max(self.h) as f64 / self.w.min(self.h) as f64
    }
}

/// 8-connected components of the set pixels of an `n × n` grid.
fn components(dark: &[bool], n: usize) -> Vec<Component> {
    let mut seen = vec![false; dark.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..dark.len() {
        if !dark[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut r0, mut r1, mut c0, mut c1) = (usize::MAX, 0, usize::MAX, 0);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (r, c) = (i / n, i % n);
            (r0, r1, c0, c1) = (r0.min(r), r1.max(r), c0.min(c), c1.max(c));
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= n as i64 || cc >= n as i64 {
                        continue;
                    }
                    let j = rr as usize * n + cc as usize;
                    if dark[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        out.push(Component {
            size,
            w: c1 - c0 + 1,
            h: r1 - r0 + 1,
        });
    }
    out
}

pub fn heuristic_classify(p: &Patch, params: &HeuristicParams) -> Classification {
    let n = p.size;
    let gray: Vec<Option<f64>> = p
        .pixels
        .chunks_exact(3)
        .map(|px| {
            (px != [0, 0, 0]).then(|| (px[0] as f64 + px[1] as f64 + px[2] as f64) / 3.0)
        })
        .collect();
    let road: Vec<f64> = gray.iter().flatten().copied().collect();
    let result = |label, confidence: f64| Classification {
        patch_id: p.patch_id.clone(),
        label,
        confidence: confidence.clamp(0.0, 1.0),
    };
    if road.is_empty() {
        return result(Label::NoCrack, 1.0);
    }
    let mean = road.iter().sum::<f64>() / road.len() as f64;
    let var = road.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / road.len() as f64;
    let threshold = mean - params.k_sigma * var.sqrt();
    let dark: Vec<bool> = gray.iter().map(|g| g.is_some_and(|g| g < threshold)).collect();
    let n_dark = dark.iter().filter(|&&d| d).count();

    let best = components(&dark, n)
        .into_iter()
        .filter(|c| c.size >= params.min_component_px && c.elongation() >= params.min_elongation)
        .map(|c| c.size)
        .max();
    match best {
        Some(size) => result(Label::Crack, size as f64 / 100.0),
        None => result(Label::NoCrack, 1.0 - n_dark as f64 / road.len() as f64),
    }
}

#[derive(Debug, Clone, Default)]
pub struct HeuristicBackend {
    pub params: HeuristicParams,
}

impl ClassifierBackend for HeuristicBackend {
    fn name(&self) -> &str {
        "builtin"
    }

    fn classify(&self, patches: &[Patch]) -> Result<Vec<Classification>> {
        Ok(par::map(patches, |p| heuristic_classify(p, &self.params)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;

    fn uniform(g: u8) -> Patch {
        Patch {
            patch_id: "p".into(),
            unit_id: 1,
            origin: Point::new(0.0, 0.0),
            pixel_size: 0.1,
            size: 50,
            pixels: vec![g; 7500],
            road_fraction: 1.0,
        }
    }

    fn paint(p: &mut Patch, col: usize, row: usize, g: u8) {
        let i = (row * p.size + col) * 3;
        p.pixels[i..i + 3].fill(g);
    }

    #[test]
    fn uniform_is_no_crack() {
        let c = heuristic_classify(&uniform(120), &HeuristicParams::default());
        assert_eq!((c.label, c.confidence), (Label::NoCrack, 1.0));
    }

    #[test]
    fn black_patch_is_no_crack_with_full_confidence() {
        let c = heuristic_classify(&uniform(0), &HeuristicParams::default());
        assert_eq!((c.label, c.confidence), (Label::NoCrack, 1.0));
    }

    #[test]
    fn thin_shallow_diagonal_is_crack() {
        // 30 px long, rising 8 rows: bbox 30x9, elongation > 3
        let mut p = uniform(120);
        for i in 0..30 {
            paint(&mut p, 10 + i, 20 + i * 8 / 30, 60);
        }
        let c = heuristic_classify(&p, &HeuristicParams::default());
        assert_eq!(c.label, Label::Crack);
        assert!((c.confidence - 0.30).abs() < 1e-12);
    }

    #[test]
    fn square_blob_is_no_crack() {
        let mut p = uniform(120);
        for r in 20..25 {
            for c in 20..25 {
                paint(&mut p, c, r, 60);
            }
        }
        let c = heuristic_classify(&p, &HeuristicParams::default());
        assert_eq!(c.label, Label::NoCrack);
        assert!((c.confidence - (1.0 - 25.0 / 2500.0)).abs() < 1e-12);
    }

    #[test]
    fn short_line_below_size_threshold() {
        let mut p = uniform(120);
        for i in 0..9 {
            paint(&mut p, 10 + i, 20, 60);
        }
        assert_eq!(heuristic_classify(&p, &HeuristicParams::default()).label, Label::NoCrack);
    }

    #[test]
    fn components_use_eight_connectivity() {
        let n = 4;
        let mut d = vec![false; 16];
        for i in 0..4 {
            d[i * n + i] = true;
        }
        let cs = components(&d, n);
        assert_eq!(cs.len(), 1);
        assert_eq!((cs[0].size, cs[0].w, cs[0].h), (4, 4, 4));
    }
}
