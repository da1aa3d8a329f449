use serde::{Deserialize, Serialize};

use super::{canonicalize_obb, BoxShape, GeometryError, HorizontalBox, ImageSize, Point, Result};

/// Grid step of normalized coordinates.
pub const QUANTUM: f64 = 1e-4;

/// Rounds to the nearest multiple of [`QUANTUM`]. Values are produced as
/// `k / 10_000` so that parsing their 4-decimal text yields the same double.
pub fn quantize(v: f64) -> f64 {
    (v * 10_000.0).round() / 10_000.0
}

/// What to do with coordinates that fall outside the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundsMode {
    /// Reject the box.
    #[default]
    Strict,
    /// Clamp into `[0, extent]`.
    Lenient,
}

/// Box coordinates relative to image width/height, quantized to 4 decimals.
/// HBB: `[xmin, ymin, xmax, ymax]`; OBB: `[x1, y1, ..., x4, y4]` in canonical
/// corner order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NormalizedBox {
    Horizontal([f64; 4]),
    Oriented([f64; 8]),
}

impl NormalizedBox {
    /// Quantizes and range-checks raw normalized values (4 or 8 of them).
    pub fn from_values(values: &[f64]) -> Result<Self> {
        for v in values {
            if !v.is_finite() || *v < 0.0 || *v > 1.0 {
                return Err(GeometryError::OutOfBounds { value: *v, limit: 1.0 });
            }
        }
        match values.len() {
            4 => {
                let mut out = [0.0; 4];
                for (o, v) in out.iter_mut().zip(values) {
                    *o = quantize(*v);
                }
                Ok(NormalizedBox::Horizontal(out))
            }
            8 => {
                let mut out = [0.0; 8];
                for (o, v) in out.iter_mut().zip(values) {
                    *o = quantize(*v);
                }
                Ok(NormalizedBox::Oriented(out))
            }
            n => Err(GeometryError::WrongArity { expected: 4, got: n }),
        }
    }

    pub fn values(&self) -> &[f64] {
        match self {
            NormalizedBox::Horizontal(v) => v,
            NormalizedBox::Oriented(v) => v,
        }
    }

    pub fn is_oriented(&self) -> bool {
        matches!(self, NormalizedBox::Oriented(_))
    }
}

fn place(v: f64, extent: f64, mode: BoundsMode) -> Result<f64> {
    if !v.is_finite() {
        return Err(GeometryError::InvalidBox("non-finite coordinate".into()));
    }
    if (0.0..=extent).contains(&v) {
        return Ok(v);
    }
    match mode {
        BoundsMode::Strict => Err(GeometryError::OutOfBounds { value: v, limit: extent }),
        BoundsMode::Lenient => Ok(v.clamp(0.0, extent)),
    }
}

/// Checks (or clamps) pixel coordinates against the image extent without
/// normalizing. Returns the possibly clamped box.
pub(crate) fn fit_to_image(shape: &BoxShape, size: ImageSize, mode: BoundsMode) -> Result<BoxShape> {
    let (w, h) = (size.width as f64, size.height as f64);
    let vals = shape.values();
    let mut fitted = Vec::with_capacity(vals.len());
    for (i, v) in vals.iter().enumerate() {
        fitted.push(place(*v, if i % 2 == 0 { w } else { h }, mode)?);
    }
    if fitted == vals {
        return Ok(*shape);
    }
    BoxShape::from_values(&fitted)
}

pub fn normalize_box(shape: &BoxShape, size: ImageSize, mode: BoundsMode) -> Result<NormalizedBox> {
    let (w, h) = (size.width as f64, size.height as f64);
    let vals = shape.values();
    let mut out = Vec::with_capacity(vals.len());
    for (i, v) in vals.iter().enumerate() {
        let extent = if i % 2 == 0 { w } else { h };
        out.push(place(*v, extent, mode)? / extent);
    }
    NormalizedBox::from_values(&out)
}

pub fn denormalize_box(nbox: &NormalizedBox, size: ImageSize) -> Result<BoxShape> {
    let (w, h) = (size.width as f64, size.height as f64);
    match nbox {
        NormalizedBox::Horizontal(v) => {
            HorizontalBox::new(v[0] * w, v[1] * h, v[2] * w, v[3] * h).map(BoxShape::Horizontal)
        }
        NormalizedBox::Oriented(v) => {
            let pts: Vec<Point> = v.chunks(2).map(|c| Point::new(c[0] * w, c[1] * h)).collect();
            canonicalize_obb(&pts).map(BoxShape::Oriented)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn size(w: u32, h: u32) -> ImageSize {
        ImageSize::new(w, h).unwrap()
    }

    #[test]
    fn half_box() {
        let b = BoxShape::Horizontal(HorizontalBox::new(0.0, 0.0, 128.0, 128.0).unwrap());
        let n = normalize_box(&b, size(256, 256), BoundsMode::Strict).unwrap();
        assert_eq!(n, NormalizedBox::Horizontal([0.0, 0.0, 0.5, 0.5]));
    }

    #[test]
    fn full_image_box() {
        let b = BoxShape::Horizontal(HorizontalBox::new(0.0, 0.0, 640.0, 480.0).unwrap());
        let n = normalize_box(&b, size(640, 480), BoundsMode::Strict).unwrap();
        assert_eq!(n.values(), &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn out_of_image_strict_vs_lenient() {
        let b = BoxShape::Horizontal(HorizontalBox::new(10.0, 10.0, 300.0, 50.0).unwrap());
        let s = size(256, 256);
        assert!(matches!(
            normalize_box(&b, s, BoundsMode::Strict),
            Err(GeometryError::OutOfBounds { .. })
        ));
        let n = normalize_box(&b, s, BoundsMode::Lenient).unwrap();
        assert_eq!(n.values()[2], 1.0);
    }

    #[test]
    fn quantization_grid() {
        assert_eq!(quantize(0.123_449), 0.1234);
        assert_eq!(quantize(0.123_451), 0.1235);
        assert!(NormalizedBox::from_values(&[0.0, 0.0, 1.2, 0.5]).is_err());
        assert!(NormalizedBox::from_values(&[0.0, 0.0, 0.5]).is_err());
    }

    #[test]
    fn obb_keeps_corner_order() {
        let q = super::super::OrientedBox::from_slice(&[1.0, 1.0, 3.0, 1.0, 3.0, 3.0, 1.0, 3.0]).unwrap();
        let n = normalize_box(&BoxShape::Oriented(q), size(4, 4), BoundsMode::Strict).unwrap();
        assert_eq!(n.values(), &[0.25, 0.25, 0.75, 0.25, 0.75, 0.75, 0.25, 0.75]);
        let back = denormalize_box(&n, size(4, 4)).unwrap();
        assert_eq!(back, BoxShape::Oriented(q));
    }
}
