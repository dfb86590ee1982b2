use serde::{Deserialize, Serialize};

use crate::grid::{Cell, Point};
use crate::scalar::Scalar;

/// Axis-aligned box in image pixels, given by its center and size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetBox {
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl TargetBox {
    pub fn new(cx: f64, cy: f64, width: f64, height: f64) -> Self {
        TargetBox {
            cx,
            cy,
            width,
            height,
        }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.width > 0.0 && self.height > 0.0)
            || !self.cx.is_finite()
            || !self.cy.is_finite()
            || !self.width.is_finite()
            || !self.height.is_finite()
    }

    /// Center in continuous grid coordinates; cell `c` spans
    /// `[c * stride, (c + 1) * stride)` pixels.
    pub fn grid_center<T: Scalar>(&self, stride: f64) -> Point<T> {
        Point::new(T::lit(self.cx / stride - 0.5), T::lit(self.cy / stride - 0.5))
    }

    /// Cell containing the center, if it lies on a `width x height` grid.
    pub fn center_cell(&self, stride: f64, width: usize, height: usize) -> Option<Cell> {
        let gx = (self.cx / stride).floor();
        let gy = (self.cy / stride).floor();
        (gx >= 0.0 && gy >= 0.0 && gx < width as f64 && gy < height as f64)
            .then(|| Cell::new(gx as usize, gy as usize))
    }

    pub fn area(&self) -> f64 {
        self.width.max(0.0) * self.height.max(0.0)
    }

    /// Intersection over union.
    pub fn iou(&self, other: &TargetBox) -> f64 {
        let ix = (self.cx + self.width / 2.0).min(other.cx + other.width / 2.0)
            - (self.cx - self.width / 2.0).max(other.cx - other.width / 2.0);
        let iy = (self.cy + self.height / 2.0).min(other.cy + other.height / 2.0)
            - (self.cy - self.height / 2.0).max(other.cy - other.height / 2.0);
        let inter = ix.max(0.0) * iy.max(0.0);
        let union = self.area() + other.area() - inter;
        if union > 0.0 {
            (inter / union).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_width_offset_gives_one_third() {
        let a = TargetBox::new(50.0, 50.0, 20.0, 20.0);
        let b = TargetBox::new(60.0, 50.0, 20.0, 20.0);
        assert!((a.iou(&b) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.iou(&a), 1.0);
        assert_eq!(a.iou(&TargetBox::new(200.0, 50.0, 20.0, 20.0)), 0.0);
    }

    #[test]
    fn grid_center_round_trip() {
        let b = TargetBox::new(8.0, 24.0, 32.0, 32.0);
        let p: Point<f64> = b.grid_center(16.0);
        assert_eq!((p.x, p.y), (0.0, 1.0));
        assert_eq!(b.center_cell(16.0, 18, 18), Some(Cell::new(0, 1)));
        assert_eq!(TargetBox::new(-1.0, 3.0, 1.0, 1.0).center_cell(16.0, 18, 18), None);
    }
}
