//! Axis-aligned, north-up pixel grids anchored at their upper-left corner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Bbox, Point};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    /// Upper-left corner of the upper-left pixel.
    pub origin_x: f64,
    pub origin_y: f64,
    /// Square pixel edge length in meters.
    pub pixel_size: f64,
}

impl GridSpec {
    pub fn new(width: usize, height: usize, origin_x: f64, origin_y: f64, pixel_size: f64) -> Result<Self> {
        let g = GridSpec {
            width,
            height,
            origin_x,
            origin_y,
            pixel_size,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid(format!(
                "zero-area grid {}x{}",
                self.width, self.height
            )));
        }
        if !(self.pixel_size > 0.0 && self.pixel_size.is_finite()) {
            return Err(Error::invalid(format!("pixel size {} must be positive", self.pixel_size)));
        }
        if !(self.origin_x.is_finite() && self.origin_y.is_finite()) {
            return Err(Error::invalid("grid origin must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center_x(&self, col: usize) -> f64 {
        self.origin_x + (col as f64 + 0.5) * self.pixel_size
    }

    pub fn center_y(&self, row: usize) -> f64 {
        self.origin_y - (row as f64 + 0.5) * self.pixel_size
    }

    /// World coordinate of the center of pixel `(col, row)`.
    pub fn pixel_to_world(&self, col: usize, row: usize) -> Point {
        Point::new(self.center_x(col), self.center_y(row))
    }

    /// Pixel containing a world coordinate, or `None` outside the grid.
    pub fn world_to_pixel(&self, p: Point) -> Option<(usize, usize)> {
        let c = ((p.x - self.origin_x) / self.pixel_size).floor();
        let r = ((self.origin_y - p.y) / self.pixel_size).floor();
        if c < 0.0 || r < 0.0 || c >= self.width as f64 || r >= self.height as f64 {
            return None;
        }
        Some((c as usize, r as usize))
    }

    pub fn bbox(&self) -> Bbox {
        Bbox::new(
            self.origin_x,
            self.origin_y - self.height as f64 * self.pixel_size,
            self.origin_x + self.width as f64 * self.pixel_size,
            self.origin_y,
        )
    }

    /// Inclusive-exclusive pixel row/column ranges whose centers may fall in `b`.
    pub fn pixel_window(&self, b: &Bbox) -> Option<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let ps = self.pixel_size;
        let c0 = ((b.xmin - self.origin_x) / ps - 0.5).floor() - 1.0;
        let c1 = ((b.xmax - self.origin_x) / ps - 0.5).ceil() + 2.0;
        let r0 = ((self.origin_y - b.ymax) / ps - 0.5).floor() - 1.0;
        let r1 = ((self.origin_y - b.ymin) / ps - 0.5).ceil() + 2.0;
        let clamp = |v: f64, hi: usize| v.max(0.0).min(hi as f64) as usize;
        let cols = clamp(c0, self.width)..clamp(c1, self.width);
        let rows = clamp(r0, self.height)..clamp(r1, self.height);
        if cols.is_empty() || rows.is_empty() {
            None
        } else {
            Some((rows, cols))
        }
    }

    pub fn ensure_same(&self, other: &GridSpec, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "{what}: {}x{} @({}, {}) {} m vs {}x{} @({}, {}) {} m",
                self.width,
                self.height,
                self.origin_x,
                self.origin_y,
                self.pixel_size,
                other.width,
                other.height,
                other.origin_x,
                other.origin_y,
                other.pixel_size
            )));
        }
        Ok(())
    }
}
