//! Point and image exports for inspecting maps.

use std::io::Write;

use nalgebra::Point3;

use super::DatasetError;
use crate::grid::voxel_center;
use crate::submap::{Submap, SubmapCollection};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub position: Point3<f64>,
    pub color: [u8; 3],
}

/// Centers of observed voxels with `|tsdf| < threshold`, in the world frame
/// given the current submap poses.
pub fn export_surface_points(collection: &SubmapCollection, threshold: f64) -> Result<Vec<SurfacePoint>, DatasetError> {
    if collection.is_empty() {
        return Err(DatasetError::EmptyCollection);
    }
    let mut out = Vec::new();
    for s in &collection.submaps {
        let cfg = s.tsdf.config();
        out.extend(
            s.tsdf
                .iter_voxels()
                .filter(|(_, v)| v.weight > 0.0 && (v.distance as f64).abs() < threshold)
                .map(|(i, v)| SurfacePoint {
                    position: s.pose.transform_point(&voxel_center(&i, cfg)),
                    color: v.color,
                }),
        );
    }
    Ok(out)
}

/// Writes `x,y,z,r,g,b` rows.
pub fn write_points_csv<W: Write>(points: &[SurfacePoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "x,y,z,r,g,b")?;
    for p in points {
        let [r, g, b] = p.color;
        writeln!(out, "{},{},{},{r},{g},{b}", p.position.x, p.position.y, p.position.z)?;
    }
    Ok(())
}

/// A horizontal cut through a submap's ESDF, in the submap frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EsdfSlice {
    pub z: f64,
    pub voxel_size: f64,
    /// Global voxel index (x, y) of the first cell.
    pub origin: [i64; 2],
    pub width: usize,
    pub height: usize,
    /// Row-major with rows along increasing y; `None` where unobserved.
    pub distance: Vec<Option<f32>>,
}

impl EsdfSlice {
    pub fn is_empty(&self) -> bool {
        self.distance.is_empty()
    }

    pub fn get(&self, col: usize, row: usize) -> Option<f32> {
        self.distance[row * self.width + col]
    }

    /// Center of a cell in the submap frame.
    pub fn cell_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            (self.origin[0] + col as i64) as f64 * self.voxel_size + 0.5 * self.voxel_size,
            (self.origin[1] + row as i64) as f64 * self.voxel_size + 0.5 * self.voxel_size,
        )
    }

    /// `x,y,distance` for observed cells.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,y,distance")?;
        for row in 0..self.height {
            for col in 0..self.width {
                if let Some(d) = self.get(col, row) {
                    let (x, y) = self.cell_center(col, row);
                    writeln!(out, "{x},{y},{d}")?;
                }
            }
        }
        Ok(())
    }

    /// ASCII PGM with the largest y at the top. Gray level grows linearly
    /// with the distance up to `max_distance`; unobserved cells and cells
    /// inside obstacles are black.
    pub fn write_pgm<W: Write>(&self, mut out: W, max_distance: f32) -> std::io::Result<()> {
        writeln!(out, "P2\n{} {}\n255", self.width, self.height)?;
        for row in (0..self.height).rev() {
            let line: Vec<String> = (0..self.width)
                .map(|col| self.gray(col, row, max_distance).to_string())
                .collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn gray(&self, col: usize, row: usize, max_distance: f32) -> u8 {
        match self.get(col, row) {
            Some(d) => (255.0 * (d / max_distance).clamp(0.0, 1.0)).round() as u8,
            None => 0,
        }
    }
}

/// Slice of the ESDF at height `z` (submap frame) over the submap's
/// bounding box. Heights outside the box give an empty slice.
pub fn export_esdf_slice(submap: &Submap, z: f64) -> EsdfSlice {
    let cfg = *submap.esdf.config();
    let vs = cfg.voxel_size;
    let aabb = submap.aabb();
    let mut slice = EsdfSlice {
        z,
        voxel_size: vs,
        origin: [0, 0],
        width: 0,
        height: 0,
        distance: Vec::new(),
    };
    if aabb.is_empty() || z < aabb.min.z || z >= aabb.max.z {
        log::warn!("slice height {z} lies outside submap {}", submap.id);
        return slice;
    }
    // Box corners sit on voxel boundaries.
    let lo = |v: f64| (v / vs).round() as i64;
    let iz = (z / vs).floor() as i64;
    slice.origin = [lo(aabb.min.x), lo(aabb.min.y)];
    slice.width = (lo(aabb.max.x) - slice.origin[0]) as usize;
    slice.height = (lo(aabb.max.y) - slice.origin[1]) as usize;
    slice.distance = (0..slice.height)
        .flat_map(|row| (0..slice.width).map(move |col| (col, row)))
        .map(|(col, row)| {
            let g = [slice.origin[0] + col as i64, slice.origin[1] + row as i64, iz];
            submap.esdf.get_global(g).filter(|v| v.observed).map(|v| v.distance)
        })
        .collect();
    slice
}
