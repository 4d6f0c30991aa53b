//! Localization losses of the IoU family and their box-coordinate gradients.
//!
//! All gradients are with respect to the predicted box's corner coordinates
//! `(x_min, y_min, x_max, y_max)`. Where a predicted edge coincides exactly
//! with a ground-truth edge the derivative is one-sided, taken for the
//! predicted edge moving outward: the intersection stays bounded by the
//! ground-truth edge while the enclosure follows the predicted edge.

use std::fmt;

use thiserror::Error;

use crate::boxgeom::{self, Box2D, GeomError};
use crate::riou_params::RiouParams;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error("IoU value {0} outside [0, 1]")]
    Domain(f64),
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Which localization loss to evaluate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Iou,
    Giou,
    Diou,
    Riou(RiouParams),
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Iou => "iou",
            LossKind::Giou => "giou",
            LossKind::Diou => "diou",
            LossKind::Riou(_) => "riou",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Riou(p) => write!(f, "riou(beta={})", p.beta()),
            other => f.write_str(other.name()),
        }
    }
}

/// Partial derivatives of a scalar with respect to the predicted box corners.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BoxGradient {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoxGradient {
    pub fn from_array(v: [f64; 4]) -> Self {
        Self {
            x_min: v[0],
            y_min: v[1],
            x_max: v[2],
            y_max: v[3],
        }
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::from_array(self.to_array().map(|v| v * s))
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// `max_i |self_i - other_i| / max(|self|_inf, |other|_inf, floor)`.
    pub fn relative_error(&self, other: &BoxGradient, floor: f64) -> f64 {
        let a = self.to_array();
        let b = other.to_array();
        let diff = (0..4).fold(0.0_f64, |m, i| m.max((a[i] - b[i]).abs()));
        diff / self.max_abs().max(other.max_abs()).max(floor)
    }
}

impl std::ops::Add for BoxGradient {
    type Output = BoxGradient;
    fn add(self, rhs: BoxGradient) -> BoxGradient {
        let a = self.to_array();
        let b = rhs.to_array();
        BoxGradient::from_array([a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]])
    }
}

fn check_unit(iou: f64) -> Result<f64, LossError> {
    if (0.0..=1.0).contains(&iou) {
        Ok(iou)
    } else {
        Err(LossError::Domain(iou))
    }
}

pub fn iou_loss(iou: f64) -> Result<f64, LossError> {
    Ok(1.0 - check_unit(iou)?)
}

/// `|dL/dIoU|` of the plain IoU loss: constant 1.
pub fn iou_loss_grad_mag(iou: f64) -> Result<f64, LossError> {
    check_unit(iou)?;
    Ok(1.0)
}

/// `|dL/dIoU|` of the rectified loss: rises from 0 at IoU 0 to its peak at
/// `beta`, then falls back to 0 at IoU 1.
pub fn riou_grad_mag(iou: f64, p: &RiouParams) -> Result<f64, LossError> {
    Ok(p.grad_unchecked(check_unit(iou)?))
}

pub fn riou_loss(iou: f64, p: &RiouParams) -> Result<f64, LossError> {
    Ok(p.loss_unchecked(check_unit(iou)?))
}

pub fn giou_loss(pred: &Box2D, gt: &Box2D) -> Result<f64, LossError> {
    Ok(1.0 - boxgeom::giou_value(pred, gt)?)
}

pub fn diou_loss(pred: &Box2D, gt: &Box2D) -> Result<f64, LossError> {
    Ok(1.0 - boxgeom::diou_value(pred, gt)?)
}

fn smooth_l1(z: f64) -> f64 {
    if z.abs() < 1.0 {
        0.5 * z * z
    } else {
        z.abs() - 0.5
    }
}

/// Smooth-L1 of the center distance normalized by the enclosing diagonal.
pub fn center_penalty(pred: &Box2D, gt: &Box2D) -> Result<f64, LossError> {
    let enc = boxgeom::enclosing_box(pred, gt);
    let diag = enc.width().hypot(enc.height());
    if diag == 0.0 {
        return Err(GeomError::DegenerateEnclosure.into());
    }
    let d = boxgeom::center(pred).distance(&boxgeom::center(gt));
    Ok(smooth_l1(d / diag))
}

/// `|dL/dIoU|` for each loss kind, holding every non-IoU term fixed.
pub fn grad_mag_wrt_iou(kind: &LossKind, iou: f64) -> Result<f64, LossError> {
    match kind {
        LossKind::Riou(p) => riou_grad_mag(iou, p),
        _ => iou_loss_grad_mag(iou),
    }
}

/// The localization objective. For the rectified loss this is the loss on
/// IoU plus the center penalty; the other kinds are used on their own.
pub fn localization_loss(pred: &Box2D, gt: &Box2D, kind: &LossKind) -> Result<f64, LossError> {
    match kind {
        LossKind::Iou => iou_loss(boxgeom::iou(pred, gt)?),
        LossKind::Giou => giou_loss(pred, gt),
        LossKind::Diou => diou_loss(pred, gt),
        LossKind::Riou(p) => {
            Ok(riou_loss(boxgeom::iou(pred, gt)?, p)? + center_penalty(pred, gt)?)
        }
    }
}

/// Geometric quantities and their partials w.r.t. the predicted corners.
struct Terms {
    inter: f64,
    union: f64,
    d_inter: [f64; 4],
    d_union: [f64; 4],
    enclosure: Box2D,
    d_enc_w: [f64; 4],
    d_enc_h: [f64; 4],
}

impl Terms {
    fn new(p: &Box2D, g: &Box2D) -> Self {
        let (x1, y1, x2, y2) = (p.x_min(), p.y_min(), p.x_max(), p.y_max());
        let (gx1, gy1, gx2, gy2) = (g.x_min(), g.y_min(), g.x_max(), g.y_max());

        let iw = x2.min(gx2) - x1.max(gx1);
        let ih = y2.min(gy2) - y1.max(gy1);
        let (inter, d_inter) = if iw >= 0.0 && ih >= 0.0 {
            let active = |pred_edge: bool, v: f64| if pred_edge { v } else { 0.0 };
            (
                iw * ih,
                [
                    active(x1 > gx1, -ih),
                    active(y1 > gy1, -iw),
                    active(x2 < gx2, ih),
                    active(y2 < gy2, iw),
                ],
            )
        } else {
            (0.0, [0.0; 4])
        };

        let (w, h) = (p.width(), p.height());
        let d_area = [-h, -w, h, w];
        let union = boxgeom::area(p) + boxgeom::area(g) - inter;
        let d_union = std::array::from_fn(|i| d_area[i] - d_inter[i]);

        let d_enc_w = [
            if x1 <= gx1 { -1.0 } else { 0.0 },
            0.0,
            if x2 >= gx2 { 1.0 } else { 0.0 },
            0.0,
        ];
        let d_enc_h = [
            0.0,
            if y1 <= gy1 { -1.0 } else { 0.0 },
            0.0,
            if y2 >= gy2 { 1.0 } else { 0.0 },
        ];

        Self {
            inter,
            union,
            d_inter,
            d_union,
            enclosure: boxgeom::enclosing_box(p, g),
            d_enc_w,
            d_enc_h,
        }
    }

    fn d_iou(&self) -> [f64; 4] {
        let u2 = self.union * self.union;
        std::array::from_fn(|i| (self.d_inter[i] * self.union - self.inter * self.d_union[i]) / u2)
    }

    /// Partials of `|U| / |C|`.
    fn d_union_over_enclosure(&self) -> [f64; 4] {
        let (cw, ch) = (self.enclosure.width(), self.enclosure.height());
        let c = cw * ch;
        std::array::from_fn(|i| {
            let dc = self.d_enc_w[i] * ch + self.d_enc_h[i] * cw;
            (self.d_union[i] * c - self.union * dc) / (c * c)
        })
    }

    /// `d^2 / diag^2` and its partials.
    fn distance_ratio(&self, p: &Box2D, g: &Box2D) -> (f64, [f64; 4]) {
        let pc = boxgeom::center(p);
        let gc = boxgeom::center(g);
        let (dx, dy) = (pc.x - gc.x, pc.y - gc.y);
        let d2 = dx * dx + dy * dy;
        let d_d2 = [dx, dy, dx, dy];

        let (cw, ch) = (self.enclosure.width(), self.enclosure.height());
        let diag2 = cw * cw + ch * ch;
        let d_diag2: [f64; 4] =
            std::array::from_fn(|i| 2.0 * cw * self.d_enc_w[i] + 2.0 * ch * self.d_enc_h[i]);

        let ratio = d2 / diag2;
        let d_ratio = std::array::from_fn(|i| (d_d2[i] * diag2 - d2 * d_diag2[i]) / (diag2 * diag2));
        (ratio, d_ratio)
    }
}

/// Analytic gradient of [`localization_loss`] w.r.t. the predicted corners.
pub fn loss_gradient_boxes(
    pred: &Box2D,
    gt: &Box2D,
    kind: &LossKind,
) -> Result<BoxGradient, LossError> {
    // surfaces UndefinedIoU / DegenerateEnclosure like the loss itself
    localization_loss(pred, gt, kind)?;

    let terms = Terms::new(pred, gt);
    let d_iou = terms.d_iou();

    let grad: [f64; 4] = match kind {
        LossKind::Iou => d_iou.map(|v| -v),
        LossKind::Giou => {
            let d_ratio = terms.d_union_over_enclosure();
            std::array::from_fn(|i| -(d_iou[i] + d_ratio[i]))
        }
        LossKind::Diou => {
            let (_, d_ratio) = terms.distance_ratio(pred, gt);
            std::array::from_fn(|i| -(d_iou[i] - d_ratio[i]))
        }
        LossKind::Riou(p) => {
            let iou = (terms.inter / terms.union).clamp(0.0, 1.0);
            let g = p.grad_unchecked(iou);
            let (ratio, d_ratio) = terms.distance_ratio(pred, gt);
            // smooth-L1 on z = sqrt(ratio)
            let z = ratio.sqrt();
            let d_pen = |dr: f64| if z < 1.0 { 0.5 * dr } else { dr / (2.0 * z) };
            std::array::from_fn(|i| -g * d_iou[i] + d_pen(d_ratio[i]))
        }
    };
    Ok(BoxGradient::from_array(grad))
}

/// Central-difference gradient of [`localization_loss`], one coordinate at a
/// time with step `h`.
pub fn finite_diff_gradient(
    pred: &Box2D,
    gt: &Box2D,
    kind: &LossKind,
    h: f64,
) -> Result<BoxGradient, LossError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(LossError::InvalidStep(h));
    }
    let base = pred.to_array();
    let mut out = [0.0; 4];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut plus = base;
        let mut minus = base;
        plus[i] += h;
        minus[i] -= h;
        let lp = localization_loss(&Box2D::from_array(plus)?, gt, kind)?;
        let lm = localization_loss(&Box2D::from_array(minus)?, gt, kind)?;
        *slot = (lp - lm) / (2.0 * h);
    }
    Ok(BoxGradient::from_array(out))
}
