//! Residuals of the pose-graph terms and their analytic Jacobians.
//!
//! Poses are parameterized as `(x, y, z, yaw)` and updated additively, so
//! Jacobians are plain partial derivatives with respect to these four
//! numbers.

use nalgebra::{Matrix3x4, Matrix4, Point3, RowVector4, Vector3, Vector4};

use crate::submap::{wrap_angle, SubmapPose};

use super::DistanceField;

/// `R(-ψ)·v` and its derivative with respect to ψ.
#[inline]
fn rot_inv(yaw: f64, v: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let (s, c) = yaw.sin_cos();
    (
        Vector3::new(c * v.x + s * v.y, -s * v.x + c * v.y, v.z),
        Vector3::new(-s * v.x + c * v.y, -c * v.x - s * v.y, 0.0),
    )
}

/// `R(ψ)·v` and its derivative with respect to ψ.
#[inline]
fn rot(yaw: f64, v: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let (s, c) = yaw.sin_cos();
    (
        Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z),
        Vector3::new(-s * v.x - c * v.y, c * v.x - s * v.y, 0.0),
    )
}

/// Matrix of `R(-ψ)`.
fn rot_inv_matrix(yaw: f64) -> nalgebra::Matrix3<f64> {
    let (s, c) = yaw.sin_cos();
    nalgebra::Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Error of a relative-pose measurement: `measurement⁻¹ ∘ (pose_i⁻¹ ∘ pose_j)`
/// as `(Δx, Δy, Δz, Δyaw)`, yaw wrapped to `(-π, π]`.
pub fn residual_odometry(pose_i: &SubmapPose, pose_j: &SubmapPose, measurement: &SubmapPose) -> Vector4<f64> {
    let (rel, _) = rot_inv(pose_i.yaw, &(pose_j.translation - pose_i.translation));
    let (t, _) = rot_inv(measurement.yaw, &(rel - measurement.translation));
    Vector4::new(t.x, t.y, t.z, wrap_angle(pose_j.yaw - pose_i.yaw - measurement.yaw))
}

/// Residual plus Jacobians with respect to pose i and pose j.
pub fn odometry_jacobians(
    pose_i: &SubmapPose,
    pose_j: &SubmapPose,
    measurement: &SubmapPose,
) -> (Vector4<f64>, Matrix4<f64>, Matrix4<f64>) {
    let e = residual_odometry(pose_i, pose_j, measurement);
    let a = rot_inv_matrix(measurement.yaw);
    let ab = a * rot_inv_matrix(pose_i.yaw);
    let (_, d_rel) = rot_inv(pose_i.yaw, &(pose_j.translation - pose_i.translation));
    let d_yaw_i = a * d_rel;
    let mut ji = Matrix4::zeros();
    let mut jj = Matrix4::zeros();
    ji.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-ab));
    ji.fixed_view_mut::<3, 1>(0, 3).copy_from(&d_yaw_i);
    ji[(3, 3)] = -1.0;
    jj.fixed_view_mut::<3, 3>(0, 0).copy_from(&ab);
    jj[(3, 3)] = 1.0;
    (e, ji, jj)
}

/// A surface point of submap i used by a registration term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationSample {
    /// Voxel center in submap i's frame.
    pub point: Point3<f64>,
    /// Sampling weight, normalized to mean 1 over the edge.
    pub weight: f64,
    /// Signed distance stored at the point in submap i.
    pub distance: f64,
}

/// `T_j⁻¹ · T_i · p` and its Jacobians with respect to the two poses.
pub fn transfer_point(pose_i: &SubmapPose, pose_j: &SubmapPose, p: &Point3<f64>) -> (Point3<f64>, Matrix3x4<f64>, Matrix3x4<f64>) {
    let (rp, drp) = rot(pose_i.yaw, &p.coords);
    let w = rp + pose_i.translation - pose_j.translation;
    let (q, dq) = rot_inv(pose_j.yaw, &w);
    let rj = rot_inv_matrix(pose_j.yaw);
    let mut ji = Matrix3x4::zeros();
    let mut jj = Matrix3x4::zeros();
    ji.fixed_view_mut::<3, 3>(0, 0).copy_from(&rj);
    ji.fixed_view_mut::<3, 1>(0, 3).copy_from(&(rj * drp));
    jj.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-rj));
    jj.fixed_view_mut::<3, 1>(0, 3).copy_from(&dq);
    (Point3::from(q), ji, jj)
}

/// Unwhitened registration error `field_j(T_j⁻¹ T_i p) − d_i(p)`, or `None`
/// when the transferred point falls outside field j.
pub fn residual_registration(
    pose_i: &SubmapPose,
    pose_j: &SubmapPose,
    sample: &RegistrationSample,
    field_j: &dyn DistanceField,
) -> Option<f64> {
    let (q, _, _) = transfer_point(pose_i, pose_j, &sample.point);
    field_j.sample(&q).map(|(v, _)| v - sample.distance)
}

/// Registration error with its Jacobians with respect to pose i and pose j.
pub fn registration_jacobians(
    pose_i: &SubmapPose,
    pose_j: &SubmapPose,
    sample: &RegistrationSample,
    field_j: &dyn DistanceField,
) -> Option<(f64, RowVector4<f64>, RowVector4<f64>)> {
    let (q, ji, jj) = transfer_point(pose_i, pose_j, &sample.point);
    let (v, g) = field_j.sample(&q)?;
    Some((v - sample.distance, g.transpose() * ji, g.transpose() * jj))
}
