//! Axis-aligned boxes in continuous image coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Box `(x1, y1, x2, y2)` with `x2 > x1` and `y2 > y1`. Area is the
/// continuous `(x2 − x1)(y2 − y1)`, with no +1 pixel terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x1, self.y1, self.x2, self.y2]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x2 <= self.x1 || self.y2 <= self.y1 {
            return Err(Error::InvalidArgument(format!("degenerate box {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))
    }

    /// Clips to `[0, width] × [0, height]`; `None` if nothing of positive
    /// area remains.
    pub fn clip(&self, width: f64, height: f64) -> Option<Self> {
        let b = Self {
            x1: self.x1.clamp(0.0, width),
            y1: self.y1.clamp(0.0, height),
            x2: self.x2.clamp(0.0, width),
            y2: self.y2.clamp(0.0, height),
        };
        (b.x2 > b.x1 && b.y2 > b.y1).then_some(b)
    }

    /// Whether `other` lies strictly inside this box.
    pub fn strictly_contains(&self, other: &BBox) -> bool {
        other.x1 > self.x1 && other.y1 > self.y1 && other.x2 < self.x2 && other.y2 < self.y2
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

/// Intersection over union; 0 for disjoint boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// Feature cells `[start, end)` covered by the image interval `[lo, hi)`
/// on a map of `cells` cells with the given stride: floor for the start,
/// ceil for the end, clamped to the map and to at least one cell.
pub fn feature_span(lo: f64, hi: f64, stride: usize, cells: usize) -> (usize, usize) {
    let s = stride as f64;
    let start = (lo / s).floor().max(0.0) as usize;
    let end = (hi / s).ceil().max(0.0) as usize;
    let start = start.min(cells - 1);
    let end = end.clamp(start + 1, cells);
    (start, end)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox {
        BBox::new(x1, y1, x2, y2).unwrap()
    }

    /// Counts sample points of a fine grid inside each box.
    fn raster_iou(a: &BBox, c: &BBox, n: usize) -> f64 {
        let (lo, hi) = (
            a.x1.min(c.x1).min(a.y1).min(c.y1),
            a.x2.max(c.x2).max(a.y2).max(c.y2),
        );
        let step = (hi - lo) / n as f64;
        let (mut inter, mut union) = (0usize, 0usize);
        for i in 0..n {
            for j in 0..n {
                let x = lo + (i as f64 + 0.5) * step;
                let y = lo + (j as f64 + 0.5) * step;
                let ia = x > a.x1 && x < a.x2 && y > a.y1 && y < a.y2;
                let ic = x > c.x1 && x < c.x2 && y > c.y1 && y < c.y2;
                inter += (ia && ic) as usize;
                union += (ia || ic) as usize;
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_cases() {
        let a = b(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &b(5.0, 5.0, 6.0, 6.0)), 0.0);
        let c = b(1.0, 1.0, 3.0, 3.0);
        assert!((iou(&a, &c) - 1.0 / 7.0).abs() <= 1e-12);
        assert!((raster_iou(&a, &c, 600) - 1.0 / 7.0).abs() < 1e-3);
        assert_eq!(iou(&a, &c), iou(&c, &a));
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BBox::new(1.0, 0.0, 1.0, 2.0).is_err());
        assert!(BBox::new(0.0, 3.0, 1.0, 2.0).is_err());
    }

    #[test]
    fn feature_span_rounds_outward_and_clamps() {
        assert_eq!(feature_span(0.0, 64.0, 8, 8), (0, 8));
        assert_eq!(feature_span(9.0, 15.0, 8, 8), (1, 2));
        assert_eq!(feature_span(9.0, 17.0, 8, 8), (1, 3));
        // Zero-width at the far edge still yields one cell.
        assert_eq!(feature_span(64.0, 64.0, 8, 8), (7, 8));
        assert_eq!(feature_span(-5.0, 3.0, 8, 8), (0, 1));
    }
}
