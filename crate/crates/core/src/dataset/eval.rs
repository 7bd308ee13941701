//! Absolute trajectory error.

use nalgebra::Vector3;

use super::{DatasetError, Trajectory};

/// Largest timestamp difference (seconds) for two samples to be paired.
pub const ASSOCIATION_GAP: f64 = 0.05;

/// Pairs each estimated sample with the ground-truth sample nearest in
/// time, dropping pairs further apart than [`ASSOCIATION_GAP`]. Returns
/// `(estimated, ground truth)` positions.
pub fn associate(estimated: &Trajectory, ground_truth: &Trajectory) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let gt = &ground_truth.samples;
    let mut pairs = Vec::new();
    if gt.is_empty() {
        return pairs;
    }
    for (t, pose) in &estimated.samples {
        let k = gt.partition_point(|s| s.0 < *t);
        let nearest = [k.checked_sub(1), (k < gt.len()).then_some(k)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (gt[a].0 - t).abs().total_cmp(&(gt[b].0 - t).abs()))
            .expect("ground truth is non-empty");
        if (gt[nearest].0 - t).abs() <= ASSOCIATION_GAP {
            pairs.push((pose.translation, gt[nearest].1.translation));
        }
    }
    pairs
}

/// RMSE of translational errors after association. With `align`, the
/// estimate is first moved by the yaw rotation and translation that best
/// fit it to the ground truth in the least-squares sense.
pub fn ate_rmse(estimated: &Trajectory, ground_truth: &Trajectory, align: bool) -> Result<f64, DatasetError> {
    let pairs = associate(estimated, ground_truth);
    if pairs.is_empty() {
        return Err(DatasetError::NoAssociation);
    }
    let n = pairs.len() as f64;
    let (yaw, shift) = if align {
        let me = pairs.iter().map(|p| p.0).sum::<Vector3<f64>>() / n;
        let mg = pairs.iter().map(|p| p.1).sum::<Vector3<f64>>() / n;
        let (mut sin, mut cos) = (0.0, 0.0);
        for (e, g) in &pairs {
            let (e, g) = (e - me, g - mg);
            sin += e.x * g.y - e.y * g.x;
            cos += e.x * g.x + e.y * g.y;
        }
        let yaw = if sin == 0.0 && cos == 0.0 { 0.0 } else { sin.atan2(cos) };
        (yaw, mg - rotate_z(yaw, &me))
    } else {
        (0.0, Vector3::zeros())
    };
    let sq: f64 = pairs
        .iter()
        .map(|(e, g)| (rotate_z(yaw, e) + shift - g).norm_squared())
        .sum();
    Ok((sq / n).sqrt())
}

fn rotate_z(yaw: f64, v: &Vector3<f64>) -> Vector3<f64> {
    if yaw == 0.0 {
        return *v;
    }
    let (s, c) = yaw.sin_cos();
    Vector3::new(c * v.x - s * v.y, s * v.x + c * v.y, v.z)
}
