//! Incremental grid traversal (Amanatides & Woo) over voxel coordinates.

use nalgebra::Point3;

use crate::grid::{GlobalIndex, VoxelIndex};

use super::TsdfError;

/// Iterator over the voxels crossed by a segment, in traversal order.
///
/// Coordinates are in voxel units. The walk takes exactly
/// `|end - start|₁` steps, so it always stops in the voxel containing the
/// segment end and never revisits a voxel.
#[derive(Debug, Clone)]
pub struct RayTraversal {
    current: GlobalIndex,
    end: GlobalIndex,
    step: [i64; 3],
    t_max: [f64; 3],
    t_delta: [f64; 3],
    finished: bool,
}

impl RayTraversal {
    pub fn new(start: Point3<f64>, end: Point3<f64>) -> Self {
        let current = [start.x.floor() as i64, start.y.floor() as i64, start.z.floor() as i64];
        let last = [end.x.floor() as i64, end.y.floor() as i64, end.z.floor() as i64];
        let dir = end - start;
        let mut step = [0; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for axis in 0..3 {
            let d = dir[axis];
            if d > 0.0 {
                step[axis] = 1;
                t_delta[axis] = 1.0 / d;
                t_max[axis] = (current[axis] as f64 + 1.0 - start[axis]) / d;
            } else if d < 0.0 {
                step[axis] = -1;
                t_delta[axis] = -1.0 / d;
                t_max[axis] = (current[axis] as f64 - start[axis]) / d;
            }
        }
        Self {
            current,
            end: last,
            step,
            t_max,
            t_delta,
            finished: false,
        }
    }

    /// Remaining voxels, including the current one.
    pub fn remaining(&self) -> usize {
        if self.finished {
            return 0;
        }
        1 + (0..3)
            .map(|a| (self.end[a] - self.current[a]).unsigned_abs() as usize)
            .sum::<usize>()
    }
}

impl Iterator for RayTraversal {
    type Item = GlobalIndex;

    fn next(&mut self) -> Option<GlobalIndex> {
        if self.finished {
            return None;
        }
        let out = self.current;
        // Only axes that have not yet reached the end voxel may advance.
        let mut axis = None;
        for a in 0..3 {
            if self.current[a] != self.end[a] && axis.is_none_or(|b: usize| self.t_max[a] < self.t_max[b]) {
                axis = Some(a);
            }
        }
        match axis {
            Some(a) => {
                // Direction sign and remaining offset always agree except for
                // degenerate rounding; step toward the end voxel regardless.
                let toward = (self.end[a] - self.current[a]).signum();
                self.current[a] += if self.step[a] != 0 { self.step[a] } else { toward };
                self.t_max[a] += self.t_delta[a];
            }
            None => self.finished = true,
        }
        Some(out)
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.remaining();
        (n, Some(n))
    }
}

impl ExactSizeIterator for RayTraversal {}

/// Global indices of the voxels crossed from `origin` to `endpoint`
/// extended by `extension` meters along the ray.
pub fn raycast_global(
    origin: &Point3<f64>,
    endpoint: &Point3<f64>,
    voxel_size: f64,
    extension: f64,
) -> Result<RayTraversal, TsdfError> {
    let d = endpoint - origin;
    let len = d.norm();
    if !(len > 0.0) || !len.is_finite() {
        return Err(TsdfError::DegenerateRay);
    }
    let end = endpoint + d * (extension / len);
    let inv = 1.0 / voxel_size;
    Ok(RayTraversal::new(
        Point3::from(origin.coords * inv),
        Point3::from(end.coords * inv),
    ))
}

/// Voxels intersected by the segment from `origin` to `endpoint` plus
/// `extension` meters beyond it, in traversal order without duplicates.
pub fn raycast_voxels(
    origin: &Point3<f64>,
    endpoint: &Point3<f64>,
    voxel_size: f64,
    extension: f64,
    voxels_per_side: usize,
) -> Result<Vec<VoxelIndex>, TsdfError> {
    Ok(raycast_global(origin, endpoint, voxel_size, extension)?
        .map(|g| VoxelIndex::from_global(g, voxels_per_side))
        .collect())
}
