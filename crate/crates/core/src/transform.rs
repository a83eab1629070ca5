//! Affine transforms in millimetre space.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

const MIN_ABS_DET: f64 = 1e-9;

/// `x ↦ A·x + b`. The linear part is always nonsingular.
///
/// Serializes as a row-major 3×4 matrix `[[a00, a01, a02, b0], ...]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TransformRepr", into = "TransformRepr")]
pub struct AffineTransform {
    linear: Matrix3<f64>,
    translation: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    matrix: [[f64; 4]; 3],
}

impl TryFrom<TransformRepr> for AffineTransform {
    type Error = Error;

    fn try_from(r: TransformRepr) -> Result<Self> {
        Self::from_rows(r.matrix)
    }
}

impl From<AffineTransform> for TransformRepr {
    fn from(t: AffineTransform) -> Self {
        TransformRepr { matrix: t.to_rows() }
    }
}

impl Default for AffineTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl AffineTransform {
    pub fn new(linear: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let det = linear.determinant();
        if !det.is_finite() || det.abs() <= MIN_ABS_DET || !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::SingularTransform(det));
        }
        Ok(Self { linear, translation })
    }

    pub fn identity() -> Self {
        Self {
            linear: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self {
            linear: Matrix3::identity(),
            translation: t,
        }
    }

    /// Uniform scaling about the origin.
    pub fn uniform_scale(s: f64) -> Result<Self> {
        Self::new(Matrix3::identity() * s, Vector3::zeros())
    }

    /// Uniform scaling by `s` that keeps `center` fixed.
    pub fn scaling_about(center: &Point, s: f64) -> Result<Self> {
        let linear = Matrix3::identity() * s;
        Self::new(linear, center - linear * center)
    }

    /// Rotation by `rotation_vector` (axis × angle in radians) about `center`,
    /// followed by a translation.
    pub fn rigid_about(center: &Point, rotation_vector: Vector3<f64>, translation: Vector3<f64>) -> Self {
        let r = Rotation3::from_scaled_axis(rotation_vector).into_inner();
        Self {
            linear: r,
            translation: center - r * center + translation,
        }
    }

    pub fn from_rows(m: [[f64; 4]; 3]) -> Result<Self> {
        let linear = Matrix3::from_fn(|i, j| m[i][j]);
        let translation = Vector3::new(m[0][3], m[1][3], m[2][3]);
        Self::new(linear, translation)
    }

    pub fn to_rows(&self) -> [[f64; 4]; 3] {
        let mut m = [[0.0; 4]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for j in 0..3 {
                row[j] = self.linear[(i, j)];
            }
            row[3] = self.translation[i];
        }
        m
    }

    pub fn linear(&self) -> &Matrix3<f64> {
        &self.linear
    }

    pub fn offset(&self) -> &Vector3<f64> {
        &self.translation
    }

    #[inline]
    pub fn apply(&self, p: &Point) -> Point {
        self.linear * p + self.translation
    }

    /// `self ∘ inner`: applies `inner` first.
    pub fn compose(&self, inner: &AffineTransform) -> AffineTransform {
        AffineTransform {
            linear: self.linear * inner.linear,
            translation: self.linear * inner.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> AffineTransform {
        // Construction guarantees invertibility.
        let inv = self.linear.try_inverse().expect("nonsingular by construction");
        AffineTransform {
            linear: inv,
            translation: -(inv * self.translation),
        }
    }

    pub fn determinant(&self) -> f64 {
        self.linear.determinant()
    }

    /// Geometric mean of the singular values of the linear part.
    pub fn mean_scale(&self) -> f64 {
        self.determinant().abs().cbrt()
    }

    /// Rotation angle (radians) of the orthogonal polar factor of the linear part.
    pub fn rotation_angle(&self) -> f64 {
        let svd = self.linear.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let r = u * v_t;
        let cos = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        cos.acos()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_scale_maps_point() {
        let t = AffineTransform::uniform_scale(1.5).unwrap();
        assert_eq!(t.apply(&Vector3::new(2.0, 4.0, 6.0)), Vector3::new(3.0, 6.0, 9.0));
    }

    #[test]
    fn singular_rejected() {
        let err = AffineTransform::new(Matrix3::zeros(), Vector3::zeros()).unwrap_err();
        assert!(matches!(err, Error::SingularTransform(_)));
        assert!(AffineTransform::uniform_scale(1e-4).is_err());
    }

    #[test]
    fn inverse_round_trip() {
        let t = AffineTransform::rigid_about(
            &Vector3::new(1.0, 2.0, 3.0),
            Vector3::new(0.1, -0.2, 0.3),
            Vector3::new(5.0, -4.0, 2.0),
        )
        .compose(&AffineTransform::uniform_scale(1.3).unwrap());
        let p = Vector3::new(-7.0, 11.0, 0.5);
        let q = t.inverse().apply(&t.apply(&p));
        assert!((p - q).norm() < 1e-9);
    }

    #[test]
    fn rotation_angle_and_scale() {
        let t = AffineTransform::rigid_about(&Vector3::zeros(), Vector3::new(0.0, 0.0, 0.25), Vector3::zeros());
        assert!((t.rotation_angle() - 0.25).abs() < 1e-12);
        let s = AffineTransform::uniform_scale(1.5).unwrap().compose(&t);
        assert!((s.mean_scale() - 1.5).abs() < 1e-12);
        assert!((s.rotation_angle() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn json_is_row_major_3x4() {
        let t = AffineTransform::from_rows([[1.0, 0.0, 0.0, 5.0], [0.0, 2.0, 0.0, 6.0], [0.0, 0.0, 3.0, 7.0]]).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, r#"{"matrix":[[1.0,0.0,0.0,5.0],[0.0,2.0,0.0,6.0],[0.0,0.0,3.0,7.0]]}"#);
        let back: AffineTransform = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<AffineTransform>(r#"{"matrix":[[0,0,0,0],[0,0,0,0],[0,0,0,0]]}"#).is_err());
    }
}
