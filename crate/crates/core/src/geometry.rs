//! Planar projective transforms.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};

/// 3x3 projective transform acting on homogeneous pixel coordinates `(x, y, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography(pub Matrix3<f64>);

impl Homography {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn from_rows(rows: [[f64; 3]; 3]) -> Self {
        Self(Matrix3::from_row_slice(&rows.concat()))
    }

    pub fn rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self::from_rows([[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]])
    }

    pub fn scaling(sx: f64, sy: f64) -> Self {
        Self::from_rows([[sx, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Rotation by `angle` radians (counter-clockwise in a y-down frame appears clockwise) about `(cx, cy)`.
    pub fn rotation_about(cx: f64, cy: f64, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let rot = Self::from_rows([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]);
        Self::translation(cx, cy)
            .then_after(&rot)
            .then_after(&Self::translation(-cx, -cy))
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn then_after(&self, other: &Homography) -> Homography {
        Homography(self.0 * other.0)
    }

    pub fn inverse(&self) -> Result<Homography> {
        self.0
            .try_inverse()
            .map(Homography)
            .ok_or_else(|| Error::InvalidInput("homography is singular".into()))
    }

    pub fn apply(&self, x: f64, y: f64) -> Option<(f64, f64)> {
        let p = self.0 * Vector3::new(x, y, 1.0);
        if p.z.abs() < 1e-12 {
            return None;
        }
        Some((p.x / p.z, p.y / p.z))
    }

    /// Normalizes so that the bottom-right entry is 1 (when it is not ~0).
    pub fn normalized(&self) -> Homography {
        let s = self.0[(2, 2)];
        if s.abs() > 1e-12 {
            Homography(self.0 / s)
        } else {
            *self
        }
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        (self.normalized().0 - Matrix3::identity()).abs().max() <= tol
    }

    /// Direct linear solve for the transform taking `src[k]` to `dst[k]`.
    pub fn from_correspondences(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Result<Self> {
        let mut a = SMatrix::<f64, 8, 8>::zeros();
        let mut b = SVector::<f64, 8>::zeros();
        for k in 0..4 {
            let (x, y) = src[k];
            let (u, v) = dst[k];
            let r = 2 * k;
            a.row_mut(r)
                .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
            a.row_mut(r + 1)
                .copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
            b[r] = u;
            b[r + 1] = v;
        }
        let h = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::InvalidInput("degenerate point correspondences".into()))?;
        Ok(Self::from_rows([
            [h[0], h[1], h[2]],
            [h[3], h[4], h[5]],
            [h[6], h[7], 1.0],
        ]))
    }
}

impl Default for Homography {
    fn default() -> Self {
        Self::identity()
    }
}

/// Axis-aligned rectangle in pixel units, `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn intersect(&self, other: &Rect) -> Rect {
        Rect {
            x0: self.x0.max(other.x0),
            y0: self.y0.max(other.y0),
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
        }
    }

    pub fn expand(&self, margin: f64) -> Rect {
        Rect {
            x0: self.x0 - margin,
            y0: self.y0 - margin,
            x1: self.x1 + margin,
            y1: self.y1 + margin,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.x1 > self.x0 && self.y1 > self.y0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn correspondences_reproduce_points() {
        let src = [(0.0, 0.0), (100.0, 0.0), (100.0, 50.0), (0.0, 50.0)];
        let dst = [(3.0, 1.0), (104.0, -2.0), (99.0, 55.0), (-1.0, 49.0)];
        let h = Homography::from_correspondences(&src, &dst).unwrap();
        for (s, d) in src.iter().zip(&dst) {
            let (u, v) = h.apply(s.0, s.1).unwrap();
            assert!((u - d.0).abs() < 1e-9 && (v - d.1).abs() < 1e-9);
        }
        let inv = h.inverse().unwrap();
        let (x, y) = inv.apply(dst[2].0, dst[2].1).unwrap();
        assert!((x - 100.0).abs() < 1e-9 && (y - 50.0).abs() < 1e-9);
    }

    #[test]
    fn rotation_keeps_centre_fixed() {
        let h = Homography::rotation_about(10.0, 20.0, 0.3);
        let (x, y) = h.apply(10.0, 20.0).unwrap();
        assert!((x - 10.0).abs() < 1e-12 && (y - 20.0).abs() < 1e-12);
    }
}
