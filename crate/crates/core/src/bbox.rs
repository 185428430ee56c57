//! Axis-aligned pixel rectangles.
//!
//! Coordinates are continuous and half-open: a box `(0, 0, 10, 10)` covers
//! the pixels with indices `0..10` on both axes and has area 100.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("degenerate box {0:?}: needs xmin < xmax and ymin < ymax")]
pub struct DegenerateBox(pub BBox);

impl BBox {
    pub const fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        BBox { xmin, ymin, xmax, ymax }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.xmin + self.xmax) / 2.0, (self.ymin + self.ymax) / 2.0)
    }

    /// Positive width and height, all coordinates finite.
    pub fn is_valid(&self) -> bool {
        [self.xmin, self.ymin, self.xmax, self.ymax].iter().all(|v| v.is_finite()) && self.xmin < self.xmax && self.ymin < self.ymax
    }

    pub fn validate(self) -> Result<Self, DegenerateBox> {
        if self.is_valid() {
            Ok(self)
        } else {
            Err(DegenerateBox(self))
        }
    }

    pub fn within(&self, width: f64, height: f64) -> bool {
        self.xmin >= 0.0 && self.ymin >= 0.0 && self.xmax <= width && self.ymax <= height
    }

    /// Intersection with the frame `[0, width) x [0, height)`; `None` if empty.
    pub fn clip(&self, width: f64, height: f64) -> Option<BBox> {
        let b = BBox::new(
            self.xmin.clamp(0.0, width),
            self.ymin.clamp(0.0, height),
            self.xmax.clamp(0.0, width),
            self.ymax.clamp(0.0, height),
        );
        b.is_valid().then_some(b)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.xmax.min(other.xmax) - self.xmin.max(other.xmin);
        let h = self.ymax.min(other.ymax) - self.ymin.max(other.ymin);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.xmin + dx, self.ymin + dy, self.xmax + dx, self.ymax + dy)
    }

    pub fn scale(&self, sx: f64, sy: f64) -> BBox {
        BBox::new(self.xmin * sx, self.ymin * sy, self.xmax * sx, self.ymax * sy)
    }

    /// Horizontal mirror about the vertical line `x = width / 2`.
    pub fn mirror_x(&self, width: f64) -> BBox {
        BBox::new(width - self.xmax, self.ymin, width - self.xmin, self.ymax)
    }
}

/// Intersection over union of two valid boxes.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64, DegenerateBox> {
    let a = a.validate()?;
    let b = b.validate()?;
    Ok(iou_unchecked(&a, &b))
}

/// IoU without validation; degenerate inputs give 0.
pub fn iou_unchecked(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}
