use std::f64::consts::{PI, TAU};
use std::ops::Mul;

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};

/// Wraps an angle into `(-π, π]`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Rigid transform with a full translation and a rotation about z only.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SubmapPose {
    pub translation: Vector3<f64>,
    /// Radians in `(-π, π]`.
    pub yaw: f64,
}

impl SubmapPose {
    pub fn new(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Self {
            translation: Vector3::new(x, y, z),
            yaw: wrap_angle(yaw),
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.translation.x, self.translation.y, self.translation.z, self.yaw]
    }

    pub fn from_array(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    #[inline]
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
    }

    #[inline]
    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotate(&p.coords) + self.translation)
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &SubmapPose) -> SubmapPose {
        SubmapPose {
            translation: self.translation + self.rotate(&other.translation),
            yaw: wrap_angle(self.yaw + other.yaw),
        }
    }

    pub fn inverse(&self) -> SubmapPose {
        let back = SubmapPose {
            translation: Vector3::zeros(),
            yaw: -self.yaw,
        };
        SubmapPose {
            translation: -back.rotate(&self.translation),
            yaw: wrap_angle(-self.yaw),
        }
    }

    /// `self⁻¹ ∘ other`: `other` expressed in this pose's frame.
    pub fn between(&self, other: &SubmapPose) -> SubmapPose {
        self.inverse().compose(other)
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::from(self.translation),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.yaw),
        )
    }

    /// Keeps the translation and the heading of `iso`, dropping roll and pitch.
    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        let (_, _, yaw) = iso.rotation.euler_angles();
        Self {
            translation: iso.translation.vector,
            yaw: wrap_angle(yaw),
        }
    }
}

impl Mul for SubmapPose {
    type Output = SubmapPose;

    fn mul(self, rhs: SubmapPose) -> SubmapPose {
        self.compose(&rhs)
    }
}
