//! Planar geometry in a shared metric CRS.

use serde::{Deserialize, Serialize};

/// A planar coordinate in meters. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point { x, y }
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bbox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl Bbox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        Bbox {
            xmin,
            ymin,
            xmax,
            ymax,
        }
    }

    pub fn of_points<'a>(points: impl IntoIterator<Item = &'a Point>) -> Option<Bbox> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut b = Bbox::new(first.x, first.y, first.x, first.y);
        for p in it {
            b.xmin = b.xmin.min(p.x);
            b.ymin = b.ymin.min(p.y);
            b.xmax = b.xmax.max(p.x);
            b.ymax = b.ymax.max(p.y);
        }
        Some(b)
    }

    pub fn is_valid(&self) -> bool {
        self.xmin < self.xmax && self.ymin < self.ymax
    }

    /// Closed-interval intersection (touching boxes intersect).
    pub fn intersects(&self, other: &Bbox) -> bool {
        self.xmin <= other.xmax
            && other.xmin <= self.xmax
            && self.ymin <= other.ymax
            && other.ymin <= self.ymax
    }

    pub fn contains(&self, p: Point) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    pub fn union(&self, other: &Bbox) -> Bbox {
        Bbox::new(
            self.xmin.min(other.xmin),
            self.ymin.min(other.ymin),
            self.xmax.max(other.xmax),
            self.ymax.max(other.ymax),
        )
    }
}

pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.dist(Point::new(a.x + t * dx, a.y + t * dy))
}

pub fn point_polyline_distance(p: Point, line: &[Point]) -> f64 {
    match line {
        [] => f64::INFINITY,
        [only] => p.dist(*only),
        _ => line
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

pub fn polyline_length(line: &[Point]) -> f64 {
    line.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Mean over the vertices of `candidate` of their distance to the polyline
/// `target`. Used to match features from independent datasets.
pub fn mean_vertex_distance(candidate: &[Point], target: &[Point]) -> f64 {
    if candidate.is_empty() {
        return f64::INFINITY;
    }
    candidate
        .iter()
        .map(|&v| point_polyline_distance(v, target))
        .sum::<f64>()
        / candidate.len() as f64
}

/// Index of the candidate with the smallest mean vertex distance to `target`,
/// if that distance is within `max_distance`. Ties go to the lowest index.
pub fn nearest_feature<'a, I>(target: &[Point], candidates: I, max_distance: f64) -> Option<usize>
where
    I: IntoIterator<Item = &'a [Point]>,
{
    let mut best: Option<(usize, f64)> = None;
    for (i, geom) in candidates.into_iter().enumerate() {
        let d = mean_vertex_distance(geom, target);
        if d <= max_distance && best.is_none_or(|(_, bd)| d < bd) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
}

/// Even-odd crossing count of a horizontal ray from `p` towards +x against a
/// closed ring. Returns true when the number of crossings is odd.
pub fn ring_crossings_odd(ring: &[Point], p: Point) -> bool {
    let n = ring.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_int = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_int {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Signed shoelace area; positive for counter-clockwise rings.
pub fn ring_signed_area(ring: &[Point]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        acc += a.x * b.y - b.x * a.y;
    }
    acc / 2.0
}

/// Removes consecutive duplicate vertices.
pub fn dedup_vertices(line: &[Point]) -> Vec<Point> {
    let mut out: Vec<Point> = Vec::with_capacity(line.len());
    for &p in line {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_distance_clamps_to_endpoints() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(10.0, 0.0);
        assert_eq!(point_segment_distance(Point::new(5.0, 3.0), a, b), 3.0);
        assert_eq!(point_segment_distance(Point::new(-4.0, 3.0), a, b), 5.0);
        assert_eq!(point_segment_distance(Point::new(13.0, 4.0), a, b), 5.0);
    }

    #[test]
    fn unit_square_area_and_containment() {
        let sq = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
        ];
        assert_eq!(ring_signed_area(&sq), 1.0);
        assert!(ring_crossings_odd(&sq, Point::new(0.5, 0.5)));
        assert!(!ring_crossings_odd(&sq, Point::new(1.5, 0.5)));
    }

    #[test]
    fn nearest_feature_prefers_lowest_index_on_tie() {
        let target = [Point::new(0.0, 0.0), Point::new(10.0, 0.0)];
        let a = [Point::new(0.0, 2.0), Point::new(10.0, 2.0)];
        let b = [Point::new(0.0, -2.0), Point::new(10.0, -2.0)];
        let c = [Point::new(0.0, 30.0), Point::new(10.0, 30.0)];
        let cands: Vec<&[Point]> = vec![&c, &a, &b];
        assert_eq!(nearest_feature(&target, cands.clone(), 20.0), Some(1));
        assert_eq!(nearest_feature(&target, cands[..1].to_vec(), 20.0), None);
    }
}
