//! Axis-aligned box geometry in corner form.
//!
//! Every box is stored as `(x_min, y_min, x_max, y_max)`. Zero-area boxes are
//! representable; the ratio metrics reject the case where the union is empty
//! instead of returning `NaN`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("invalid box [{x_min}, {y_min}, {x_max}, {y_max}]: {reason}")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        reason: &'static str,
    },
    #[error("IoU is undefined: both boxes have zero area")]
    UndefinedIoU,
    #[error("enclosing box is degenerate (zero diagonal)")]
    DegenerateEnclosure,
}

/// A point in the plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance_squared(&self, other: &Point2D) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn distance(&self, other: &Point2D) -> f64 {
        self.distance_squared(other).sqrt()
    }
}

/// Axis-aligned rectangle. Construction enforces finite coordinates and
/// `min <= max` on both axes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box2D {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl Box2D {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeomError> {
        let invalid = |reason| GeomError::InvalidBox {
            x_min,
            y_min,
            x_max,
            y_max,
            reason,
        };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(invalid("coordinates must be finite"));
        }
        if x_min > x_max || y_min > y_max {
            return Err(invalid("min corner exceeds max corner"));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a box from its center and size. Negative sizes are rejected.
    pub fn from_center_size(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeomError> {
        Self::new(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h)
    }

    pub fn from_array(c: [f64; 4]) -> Result<Self, GeomError> {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn is_degenerate(&self) -> bool {
        self.width() == 0.0 || self.height() == 0.0
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Result<Self, GeomError> {
        Self::new(
            self.x_min + dx,
            self.y_min + dy,
            self.x_max + dx,
            self.y_max + dy,
        )
    }

    /// Uniform scaling about `origin`. `factor` must be non-negative.
    pub fn scaled_about(&self, origin: Point2D, factor: f64) -> Result<Self, GeomError> {
        Self::new(
            origin.x + (self.x_min - origin.x) * factor,
            origin.y + (self.y_min - origin.y) * factor,
            origin.x + (self.x_max - origin.x) * factor,
            origin.y + (self.y_max - origin.y) * factor,
        )
    }
}

impl fmt::Display for Box2D {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}, {}, {}, {}]",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}

pub fn area(b: &Box2D) -> f64 {
    b.width() * b.height()
}

/// Overlap extent along one axis; zero when the intervals are disjoint or
/// only touch.
fn overlap_1d(a_min: f64, a_max: f64, b_min: f64, b_max: f64) -> f64 {
    (a_max.min(b_max) - a_min.max(b_min)).max(0.0)
}

pub fn intersection_area(a: &Box2D, b: &Box2D) -> f64 {
    overlap_1d(a.x_min, a.x_max, b.x_min, b.x_max) * overlap_1d(a.y_min, a.y_max, b.y_min, b.y_max)
}

pub fn union_area(a: &Box2D, b: &Box2D) -> f64 {
    area(a) + area(b) - intersection_area(a, b)
}

pub fn iou(a: &Box2D, b: &Box2D) -> Result<f64, GeomError> {
    let inter = intersection_area(a, b);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        return Err(GeomError::UndefinedIoU);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

pub fn enclosing_box(a: &Box2D, b: &Box2D) -> Box2D {
    Box2D {
        x_min: a.x_min.min(b.x_min),
        y_min: a.y_min.min(b.y_min),
        x_max: a.x_max.max(b.x_max),
        y_max: a.y_max.max(b.y_max),
    }
}

pub fn center(b: &Box2D) -> Point2D {
    Point2D::new(0.5 * (b.x_min + b.x_max), 0.5 * (b.y_min + b.y_max))
}

/// Generalized IoU: `IoU - (|C| - |U|) / |C|` with `C` the enclosing box.
pub fn giou_value(a: &Box2D, b: &Box2D) -> Result<f64, GeomError> {
    let value = iou(a, b)?;
    let union = union_area(a, b);
    // union > 0 implies the enclosure covers a positive area
    let enclosure = area(&enclosing_box(a, b));
    // rounding can push the union past the enclosure when one box contains
    // the other
    Ok(value - ((enclosure - union) / enclosure).max(0.0))
}

/// Distance IoU: `IoU - d^2 / c^2`, `d` the center distance and `c` the
/// diagonal of the enclosing box.
pub fn diou_value(a: &Box2D, b: &Box2D) -> Result<f64, GeomError> {
    let value = iou(a, b)?;
    let c = enclosing_box(a, b);
    let diag_sq = c.width().powi(2) + c.height().powi(2);
    if diag_sq <= 0.0 {
        return Err(GeomError::DegenerateEnclosure);
    }
    Ok(value - center(a).distance_squared(&center(b)) / diag_sq)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(c: [f64; 4]) -> Box2D {
        Box2D::from_array(c).unwrap()
    }

    #[test]
    fn area_examples() {
        assert_eq!(area(&bx([0.0, 0.0, 2.0, 2.0])), 4.0);
        assert_eq!(area(&bx([1.0, 1.0, 1.0, 5.0])), 0.0);
        assert_eq!(area(&bx([0.0, 0.0, 3.0, 1.0])), 3.0);
    }

    #[test]
    fn rejects_inverted_and_non_finite() {
        assert!(Box2D::new(1.0, 0.0, 0.0, 1.0).is_err());
        assert!(Box2D::new(0.0, 1.0, 1.0, 0.0).is_err());
        assert!(Box2D::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(Box2D::new(0.0, 0.0, f64::INFINITY, 1.0).is_err());
        assert!(Box2D::new(0.0, 0.0, 0.0, 0.0).is_ok());
    }

    #[test]
    fn intersection_examples() {
        let a = bx([0.0, 0.0, 2.0, 2.0]);
        assert_eq!(intersection_area(&a, &bx([1.0, 1.0, 3.0, 3.0])), 1.0);
        assert_eq!(intersection_area(&a, &a), area(&a));
        assert_eq!(
            intersection_area(&bx([0.0, 0.0, 1.0, 1.0]), &bx([2.0, 2.0, 3.0, 3.0])),
            0.0
        );
        // shared edge
        assert_eq!(
            intersection_area(&bx([0.0, 0.0, 1.0, 1.0]), &bx([1.0, 0.0, 2.0, 1.0])),
            0.0
        );
    }

    #[test]
    fn iou_examples() {
        let a = bx([0.0, 0.0, 2.0, 2.0]);
        assert!((iou(&a, &bx([1.0, 1.0, 3.0, 3.0])).unwrap() - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(
            iou(&bx([0.0, 0.0, 1.0, 1.0]), &bx([2.0, 2.0, 3.0, 3.0])).unwrap(),
            0.0
        );
        assert_eq!(
            iou(&bx([0.0, 0.0, 1.0, 1.0]), &bx([1.0, 0.0, 2.0, 1.0])).unwrap(),
            0.0
        );
    }

    #[test]
    fn iou_of_two_degenerate_boxes_is_an_error() {
        let a = bx([1.0, 1.0, 1.0, 5.0]);
        let b = bx([2.0, 2.0, 4.0, 2.0]);
        assert_eq!(iou(&a, &b), Err(GeomError::UndefinedIoU));
        assert_eq!(giou_value(&a, &b), Err(GeomError::UndefinedIoU));
        assert_eq!(diou_value(&a, &b), Err(GeomError::UndefinedIoU));
        // one degenerate box is fine
        assert_eq!(iou(&a, &bx([0.0, 0.0, 2.0, 2.0])).unwrap(), 0.0);
    }

    #[test]
    fn enclosing_and_center() {
        assert_eq!(
            enclosing_box(&bx([0.0, 0.0, 1.0, 1.0]), &bx([2.0, 2.0, 3.0, 3.0])),
            bx([0.0, 0.0, 3.0, 3.0])
        );
        let a = bx([0.0, 0.0, 2.0, 2.0]);
        assert_eq!(enclosing_box(&a, &a), a);
        assert_eq!(
            enclosing_box(&a, &bx([1.0, 1.0, 3.0, 3.0])),
            bx([0.0, 0.0, 3.0, 3.0])
        );
        assert_eq!(center(&a), Point2D::new(1.0, 1.0));
        assert_eq!(center(&bx([-1.0, -1.0, 1.0, 1.0])), Point2D::new(0.0, 0.0));
        assert_eq!(center(&bx([0.0, 0.0, 3.0, 1.0])), Point2D::new(1.5, 0.5));
    }

    #[test]
    fn giou_examples() {
        let a = bx([0.0, 0.0, 2.0, 2.0]);
        assert_eq!(giou_value(&a, &a).unwrap(), 1.0);
        let v = giou_value(&bx([0.0, 0.0, 1.0, 1.0]), &bx([2.0, 0.0, 3.0, 1.0])).unwrap();
        assert!((v + 1.0 / 3.0).abs() < 1e-15);
        let v = giou_value(&a, &bx([1.0, 1.0, 3.0, 3.0])).unwrap();
        assert!((v - (1.0 / 7.0 - 2.0 / 9.0)).abs() < 1e-15);
        assert!((v + 0.079365).abs() < 1e-6);
    }

    #[test]
    fn diou_examples() {
        let a = bx([0.0, 0.0, 2.0, 2.0]);
        assert_eq!(diou_value(&a, &a).unwrap(), 1.0);
        let v = diou_value(&bx([0.0, 0.0, 1.0, 1.0]), &bx([2.0, 0.0, 3.0, 1.0])).unwrap();
        assert!((v + 0.4).abs() < 1e-15);
        let v = diou_value(&bx([0.0, 0.0, 4.0, 4.0]), &bx([1.0, 1.0, 3.0, 3.0])).unwrap();
        assert!((v - 0.25).abs() < 1e-15);
    }

    #[test]
    fn diou_rejects_collapsed_enclosure() {
        let p = bx([1.0, 1.0, 1.0, 1.0]);
        // a point against itself has empty union first
        assert_eq!(diou_value(&p, &p), Err(GeomError::UndefinedIoU));
    }
}
