//! Box geometry in the image frame (origin top-left, y pointing down).
//!
//! Horizontal boxes are `[xmin, ymin, xmax, ymax]`. Oriented boxes are convex
//! quadrilaterals stored in canonical corner order: the corner closest to the
//! origin first, then the remaining three by ascending `atan2` angle about it.
//! Angles are measured in screen coordinates, so "ascending" walks the quad
//! clockwise on screen (counter-clockwise in the raw `(x, y)` plane, which
//! gives a positive shoelace area).

pub(crate) mod normalize;
mod polygon;

pub use normalize::{denormalize_box, normalize_box, quantize, BoundsMode, NormalizedBox, QUANTUM};
pub use polygon::{clip_convex, polygon_area, signed_area};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("degenerate quadrilateral: {0}")]
    Degenerate(String),
    #[error("quadrilateral is not convex")]
    NonConvex,
    #[error("coordinate {value} outside image extent {limit}")]
    OutOfBounds { value: f64, limit: f64 },
    #[error("invalid image size {width}x{height}")]
    InvalidSize { width: u32, height: u32 },
    #[error("expected {expected} coordinates, got {got}")]
    WrongArity { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, GeometryError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn sub(self, other: Point) -> Point {
        Point::new(self.x - other.x, self.y - other.y)
    }

    fn norm_sq(self) -> f64 {
        self.x * self.x + self.y * self.y
    }
}

/// `(b - a) x (c - a)`.
pub(crate) fn cross(a: Point, b: Point, c: Point) -> f64 {
    let u = b.sub(a);
    let v = c.sub(a);
    u.x * v.y - u.y * v.x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
}

impl ImageSize {
    pub fn new(width: u32, height: u32) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidSize { width, height });
        }
        Ok(Self { width, height })
    }
}

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizontalBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl HorizontalBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        let b = Self { xmin, ymin, xmax, ymax };
        b.validate()?;
        Ok(b)
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v {
            [a, b, c, d] => Self::new(*a, *b, *c, *d),
            _ => Err(GeometryError::WrongArity { expected: 4, got: v.len() }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.xmin, self.ymin, self.xmax, self.ymax];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidBox("non-finite coordinate".into()));
        }
        if vals.iter().any(|v| *v < 0.0) {
            return Err(GeometryError::InvalidBox("negative coordinate".into()));
        }
        if self.xmin >= self.xmax || self.ymin >= self.ymax {
            return Err(GeometryError::InvalidBox(format!(
                "expected xmin < xmax and ymin < ymax, got [{}, {}, {}, {}]",
                self.xmin, self.ymin, self.xmax, self.ymax
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.xmin, self.ymin, self.xmax, self.ymax]
    }

    pub fn corners(&self) -> [Point; 4] {
        [
            Point::new(self.xmin, self.ymin),
            Point::new(self.xmax, self.ymin),
            Point::new(self.xmax, self.ymax),
            Point::new(self.xmin, self.ymax),
        ]
    }

    fn intersection_area(&self, other: &HorizontalBox) -> f64 {
        let w = self.xmax.min(other.xmax) - self.xmin.max(other.xmin);
        let h = self.ymax.min(other.ymax) - self.ymin.max(other.ymin);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }
}

/// Intersection and union areas of two horizontal boxes.
pub fn hbb_overlap(a: &HorizontalBox, b: &HorizontalBox) -> Result<(f64, f64)> {
    a.validate()?;
    b.validate()?;
    let inter = a.intersection_area(b);
    Ok((inter, a.area() + b.area() - inter))
}

pub fn hbb_iou(a: &HorizontalBox, b: &HorizontalBox) -> Result<f64> {
    if a == b {
        a.validate()?;
        return Ok(1.0);
    }
    let (inter, union) = hbb_overlap(a, b)?;
    Ok((inter / union).clamp(0.0, 1.0))
}

/// Convex quadrilateral in canonical corner order. Only constructible through
/// [`canonicalize_obb`], so every value satisfies the ordering and convexity
/// invariants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrientedBox {
    corners: [Point; 4],
}

impl OrientedBox {
    pub fn corners(&self) -> &[Point; 4] {
        &self.corners
    }

    pub fn to_array(&self) -> [f64; 8] {
        let c = &self.corners;
        [c[0].x, c[0].y, c[1].x, c[1].y, c[2].x, c[2].y, c[3].x, c[3].y]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 8 {
            return Err(GeometryError::WrongArity { expected: 8, got: v.len() });
        }
        let pts = [
            Point::new(v[0], v[1]),
            Point::new(v[2], v[3]),
            Point::new(v[4], v[5]),
            Point::new(v[6], v[7]),
        ];
        canonicalize_obb(&pts)
    }

    pub fn from_hbb(b: &HorizontalBox) -> Result<Self> {
        canonicalize_obb(&b.corners())
    }
}

impl<'de> Deserialize<'de> for OrientedBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            corners: [Point; 4],
        }
        let raw = Raw::deserialize(d)?;
        canonicalize_obb(&raw.corners).map_err(serde::de::Error::custom)
    }
}

/// Either box kind, as carried by detection payloads.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BoxShape {
    Horizontal(HorizontalBox),
    Oriented(OrientedBox),
}

impl BoxShape {
    /// Builds from 4 (HBB) or 8 (OBB corner) values.
    pub fn from_values(v: &[f64]) -> Result<Self> {
        match v.len() {
            4 => HorizontalBox::from_slice(v).map(BoxShape::Horizontal),
            8 => OrientedBox::from_slice(v).map(BoxShape::Oriented),
            n => Err(GeometryError::WrongArity { expected: 4, got: n }),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            BoxShape::Horizontal(b) => b.to_array().to_vec(),
            BoxShape::Oriented(q) => q.to_array().to_vec(),
        }
    }

    pub fn to_hbb(&self) -> HorizontalBox {
        match self {
            BoxShape::Horizontal(b) => *b,
            BoxShape::Oriented(q) => hbb_from_obb(q),
        }
    }
}

/// Angle-ties are broken by distance to the anchor corner.
fn order_about(anchor: Point, rest: &mut [Point]) {
    rest.sort_by(|a, b| {
        let (da, db) = (a.sub(anchor), b.sub(anchor));
        let ka = da.y.atan2(da.x);
        let kb = db.y.atan2(db.x);
        ka.total_cmp(&kb).then(da.norm_sq().total_cmp(&db.norm_sq()))
    });
}

/// Index of the corner closest to the origin; ties go to smaller y, then smaller x.
fn anchor_index(points: &[Point; 4]) -> usize {
    (0..4)
        .min_by(|&i, &j| {
            let (a, b) = (points[i], points[j]);
            a.norm_sq()
                .total_cmp(&b.norm_sq())
                .then(a.y.total_cmp(&b.y))
                .then(a.x.total_cmp(&b.x))
        })
        .expect("four points")
}

/// Puts four corners into canonical order and checks that they form a
/// strictly convex quad.
pub fn canonicalize_obb(points: &[Point]) -> Result<OrientedBox> {
    let points: [Point; 4] = points
        .try_into()
        .map_err(|_| GeometryError::WrongArity { expected: 4, got: points.len() })?;
    for p in &points {
        if !p.x.is_finite() || !p.y.is_finite() {
            return Err(GeometryError::InvalidBox("non-finite coordinate".into()));
        }
        // Non-negative coordinates keep every corner within (-90°, 180°] of the
        // anchor, so angular order never wraps around ±180°.
        if p.x < 0.0 || p.y < 0.0 {
            return Err(GeometryError::InvalidBox("negative coordinate".into()));
        }
    }
    for i in 0..4 {
        for j in i + 1..4 {
            if points[i] == points[j] {
                return Err(GeometryError::Degenerate("repeated corner".into()));
            }
        }
    }

    let a = anchor_index(&points);
    let mut rest: Vec<Point> = (0..4).filter(|&i| i != a).map(|i| points[i]).collect();
    order_about(points[a], &mut rest);
    let corners = [points[a], rest[0], rest[1], rest[2]];

    let scale = corners
        .iter()
        .flat_map(|p| [p.x.abs(), p.y.abs()])
        .fold(1.0_f64, f64::max);
    let tol = 1e-12 * scale * scale;
    let mut sign = 0.0_f64;
    for i in 0..4 {
        let turn = cross(corners[i], corners[(i + 1) % 4], corners[(i + 2) % 4]);
        if turn.abs() <= tol {
            return Err(GeometryError::Degenerate("three collinear corners".into()));
        }
        if sign == 0.0 {
            sign = turn.signum();
        } else if turn.signum() != sign {
            return Err(GeometryError::NonConvex);
        }
    }
    Ok(OrientedBox { corners })
}

pub fn obb_area(q: &OrientedBox) -> f64 {
    polygon_area(q.corners())
}

/// Intersection and union areas of two oriented boxes.
pub fn obb_overlap(a: &OrientedBox, b: &OrientedBox) -> (f64, f64) {
    let inter = polygon_area(&clip_convex(a.corners(), b.corners()));
    let union = obb_area(a) + obb_area(b) - inter;
    (inter, union)
}

pub fn obb_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let (inter, union) = obb_overlap(a, b);
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// IoU of two boxes of possibly different kinds. Mixed pairs are compared as
/// polygons.
pub fn box_iou(a: &BoxShape, b: &BoxShape) -> Result<f64> {
    Ok(match (a, b) {
        (BoxShape::Horizontal(x), BoxShape::Horizontal(y)) => hbb_iou(x, y)?,
        (BoxShape::Oriented(x), BoxShape::Oriented(y)) => obb_iou(x, y),
        (BoxShape::Horizontal(x), BoxShape::Oriented(y)) => obb_iou(&OrientedBox::from_hbb(x)?, y),
        (BoxShape::Oriented(x), BoxShape::Horizontal(y)) => obb_iou(x, &OrientedBox::from_hbb(y)?),
    })
}

/// Smallest axis-aligned box containing every corner.
pub fn hbb_from_obb(q: &OrientedBox) -> HorizontalBox {
    let c = q.corners();
    let fold = |f: fn(f64, f64) -> f64, init: f64, get: fn(&Point) -> f64| {
        c.iter().map(get).fold(init, f)
    };
    HorizontalBox {
        xmin: fold(f64::min, f64::INFINITY, |p| p.x),
        ymin: fold(f64::min, f64::INFINITY, |p| p.y),
        xmax: fold(f64::max, f64::NEG_INFINITY, |p| p.x),
        ymax: fold(f64::max, f64::NEG_INFINITY, |p| p.y),
    }
}
