//! Axis-aligned box geometry: corner and center/size forms, IoU, and the
//! anchor-relative offset encoding used by the regressor.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on the log-scale offsets before exponentiation, `ln(1000 / 16)`.
pub const DELTA_LOG_CLAMP: f64 = 4.135_166_556_742_356;

/// Box in corner form `(x1, y1, x2, y2)`, pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoxCorners {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

/// Box in center/size form, pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxCenterSize {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

/// Regressor offsets relative to an anchor: center shifts normalized by the
/// anchor size and log-scale size factors.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxDelta {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

/// Result of clipping a box to image bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clipped {
    pub bbox: BoxCorners,
    /// `false` when the clipped box has zero area (the input lay outside the image).
    pub valid: bool,
}

impl BoxCorners {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let b = Self { x1, y1, x2, y2 };
        if !b.is_valid() {
            return Err(Error::InvalidBox(format!("{:?}", b.to_array())));
        }
        Ok(b)
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    /// Builds a box from coordinates that may have inverted corners, swapping
    /// them into order. The second value reports whether a swap happened.
    pub fn from_array_repaired(a: [f64; 4]) -> Result<(Self, bool)> {
        let swapped = a[0] > a[2] || a[1] > a[3];
        let b = Self::new(a[0].min(a[2]), a[1].min(a[3]), a[0].max(a[2]), a[1].max(a[3]))?;
        Ok((b, swapped))
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite()) && self.x1 <= self.x2 && self.y1 <= self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn has_positive_area(&self) -> bool {
        self.width() > 0.0 && self.height() > 0.0
    }

    pub fn intersection(&self, other: &Self) -> f64 {
        let iw = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let ih = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        iw * ih
    }

    /// Intersection over union. Zero-area pairs yield 0.
    pub fn iou(&self, other: &Self) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 || inter <= 0.0 {
            return 0.0;
        }
        (inter / union).clamp(0.0, 1.0)
    }

    pub fn to_center_size(&self) -> Result<BoxCenterSize> {
        if !self.has_positive_area() {
            return Err(Error::DegenerateBox(format!(
                "{:?} has zero width or height",
                self.to_array()
            )));
        }
        Ok(BoxCenterSize {
            cx: 0.5 * (self.x1 + self.x2),
            cy: 0.5 * (self.y1 + self.y2),
            w: self.width(),
            h: self.height(),
        })
    }

    /// Decodes `delta` relative to this anchor.
    pub fn apply_delta(&self, delta: &BoxDelta) -> Result<BoxCorners> {
        let a = self.to_center_size()?;
        let dw = delta.dw.min(DELTA_LOG_CLAMP);
        let dh = delta.dh.min(DELTA_LOG_CLAMP);
        BoxCenterSize {
            cx: a.cx + delta.dx * a.w,
            cy: a.cy + delta.dy * a.h,
            w: a.w * dw.exp(),
            h: a.h * dh.exp(),
        }
        .to_corners()
    }

    /// Encodes `target` as offsets relative to this anchor.
    pub fn encode_delta(&self, target: &BoxCorners) -> Result<BoxDelta> {
        let a = self.to_center_size()?;
        let t = target.to_center_size()?;
        Ok(BoxDelta {
            dx: (t.cx - a.cx) / a.w,
            dy: (t.cy - a.cy) / a.h,
            dw: (t.w / a.w).ln(),
            dh: (t.h / a.h).ln(),
        })
    }

    pub fn clip_to_image(&self, width: f64, height: f64) -> Result<Clipped> {
        if !(width > 0.0 && height > 0.0) {
            return Err(crate::error::invalid("image size", format!("{width}x{height}")));
        }
        let x1 = self.x1.clamp(0.0, width);
        let y1 = self.y1.clamp(0.0, height);
        let x2 = self.x2.clamp(0.0, width);
        let y2 = self.y2.clamp(0.0, height);
        let bbox = BoxCorners { x1, y1, x2, y2 };
        Ok(Clipped {
            bbox,
            valid: bbox.has_positive_area(),
        })
    }
}

impl TryFrom<[f64; 4]> for BoxCorners {
    type Error = Error;

    fn try_from(a: [f64; 4]) -> Result<Self> {
        Self::from_array(a)
    }
}

impl From<BoxCorners> for [f64; 4] {
    fn from(b: BoxCorners) -> Self {
        b.to_array()
    }
}

impl BoxCenterSize {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { cx, cy, w, h };
        if !b.is_valid() {
            return Err(Error::InvalidBox(format!("center-size {b:?}")));
        }
        Ok(b)
    }

    pub fn is_valid(&self) -> bool {
        [self.cx, self.cy, self.w, self.h].iter().all(|v| v.is_finite()) && self.w > 0.0 && self.h > 0.0
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn to_corners(&self) -> Result<BoxCorners> {
        if !self.is_valid() {
            return Err(Error::InvalidBox(format!("center-size {self:?}")));
        }
        BoxCorners::new(
            self.cx - 0.5 * self.w,
            self.cy - 0.5 * self.h,
            self.cx + 0.5 * self.w,
            self.cy + 0.5 * self.h,
        )
    }
}

impl BoxDelta {
    pub fn new(dx: f64, dy: f64, dw: f64, dh: f64) -> Self {
        Self { dx, dy, dw, dh }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.dx, self.dy, self.dw, self.dh]
    }
}

pub fn iou(a: &BoxCorners, b: &BoxCorners) -> f64 {
    a.iou(b)
}
