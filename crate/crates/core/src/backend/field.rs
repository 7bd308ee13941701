use nalgebra::{Point3, Vector3};

use crate::grid::EsdfGrid;

/// A scalar field that can be sampled with its gradient.
pub trait DistanceField: Sync {
    /// Value and gradient at `p` (submap frame), or `None` outside the
    /// observed region.
    fn sample(&self, p: &Point3<f64>) -> Option<(f64, Vector3<f64>)>;
}

/// Trilinear interpolation between the eight voxel centers around `p`.
///
/// The gradient is that of the interpolant itself, so it is exact for the
/// sampled field away from cell faces. Returns `None` if any of the eight
/// voxels is missing or unobserved.
pub fn interpolate_esdf(grid: &EsdfGrid, p: &Point3<f64>) -> Option<(f64, Vector3<f64>)> {
    let vs = grid.config().voxel_size;
    let u = p.coords / vs - Vector3::repeat(0.5);
    if !u.iter().all(|c| c.is_finite()) {
        return None;
    }
    let base = u.map(f64::floor);
    let t = u - base;
    let b = [base.x as i64, base.y as i64, base.z as i64];
    let mut c = [0.0f64; 8];
    for (k, slot) in c.iter_mut().enumerate() {
        let v = grid.get_global([b[0] + (k & 1) as i64, b[1] + ((k >> 1) & 1) as i64, b[2] + ((k >> 2) & 1) as i64])?;
        if !v.observed {
            return None;
        }
        *slot = v.distance as f64;
    }
    let (tx, ty, tz) = (t.x, t.y, t.z);
    let (sx, sy, sz) = (1.0 - tx, 1.0 - ty, 1.0 - tz);
    // Interpolate along x, then y, then z.
    let c00 = c[0] * sx + c[1] * tx;
    let c10 = c[2] * sx + c[3] * tx;
    let c01 = c[4] * sx + c[5] * tx;
    let c11 = c[6] * sx + c[7] * tx;
    let c0 = c00 * sy + c10 * ty;
    let c1 = c01 * sy + c11 * ty;
    let value = c0 * sz + c1 * tz;

    let dx0 = (c[1] - c[0]) * sy + (c[3] - c[2]) * ty;
    let dx1 = (c[5] - c[4]) * sy + (c[7] - c[6]) * ty;
    let gx = dx0 * sz + dx1 * tz;
    let gy = (c10 - c00) * sz + (c11 - c01) * tz;
    let gz = c1 - c0;
    Some((value, Vector3::new(gx, gy, gz) / vs))
}

impl DistanceField for EsdfGrid {
    fn sample(&self, p: &Point3<f64>) -> Option<(f64, Vector3<f64>)> {
        interpolate_esdf(self, p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::esdf::{new_esdf_grid, EsdfConfig};
    use crate::grid::{EsdfVoxel, GridConfig, VoxelIndex};
    use crate::hash::BlockIndex;

    /// Every voxel holds the linear function 2x - y + 0.5z + 0.3.
    fn linear_grid() -> EsdfGrid {
        let cfg = GridConfig::new(0.1, 8, 0.2).unwrap();
        let mut g = new_esdf_grid(cfg, &EsdfConfig { max_distance: 100.0 }).unwrap();
        g.allocate_block(BlockIndex::new(0, 0, 0)).unwrap();
        for x in 0..8 {
            for y in 0..8 {
                for z in 0..8 {
                    let c = crate::grid::global_center([x, y, z], 0.1);
                    g.set(&VoxelIndex::from_global([x, y, z], 8), EsdfVoxel {
                        distance: (2.0 * c.x - c.y + 0.5 * c.z + 0.3) as f32,
                        observed: true,
                        fixed: false,
                    })
                    .unwrap();
                }
            }
        }
        g
    }

    #[test]
    fn exact_at_centers() {
        let g = linear_grid();
        let c = crate::grid::global_center([3, 4, 5], 0.1);
        let (v, _) = interpolate_esdf(&g, &c).unwrap();
        assert_eq!(v, g.get_global([3, 4, 5]).unwrap().distance as f64);
    }

    #[test]
    fn reproduces_linear_field() {
        let g = linear_grid();
        let p = Point3::new(0.33, 0.41, 0.27);
        let (v, grad) = interpolate_esdf(&g, &p).unwrap();
        assert!((v - (2.0 * 0.33 - 0.41 + 0.5 * 0.27 + 0.3)).abs() < 1e-6);
        assert!((grad - Vector3::new(2.0, -1.0, 0.5)).norm() < 1e-4);
    }

    #[test]
    fn missing_corners_drop_the_sample() {
        let g = linear_grid();
        assert!(interpolate_esdf(&g, &Point3::new(0.02, 0.3, 0.3)).is_none());
        assert!(interpolate_esdf(&g, &Point3::new(0.3, 0.3, 0.79)).is_none());
        assert!(interpolate_esdf(&g, &Point3::new(f64::NAN, 0.3, 0.3)).is_none());
    }
}
