//! Data-parallel TSDF fusion of point-cloud frames.
//!
//! A frame is integrated in three phases:
//!
//! 1. **Count.** Every ray is traversed independently and emits one update
//!    per voxel it crosses. Updates stay in ray order.
//! 2. **Allocate.** The set of touched blocks is deduplicated and missing
//!    blocks are allocated in one batch.
//! 3. **Apply.** Updates are sorted by store address (stable with respect to
//!    ray order), reduced per voxel, and each voxel is folded once into the
//!    grid as a weighted running average.
//!
//! Because sums are taken in ray order in every case, the result does not
//! depend on the number of worker threads.

mod raycast;
mod weighting;

use nalgebra::{Isometry3, Point3};
use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{global_center, GlobalIndex, GridError, TsdfGrid, TsdfVoxel, VoxelIndex, VoxelRecord};
use crate::hash::BlockIndex;

pub use raycast::{raycast_global, raycast_voxels, RayTraversal};
pub use weighting::{compute_sdf_and_weight, WeightingScheme, DEFAULT_MIN_RANGE};

#[derive(Debug, Error)]
pub enum TsdfError {
    #[error("ray has zero or non-finite length")]
    DegenerateRay,
    #[error("frame has {points} points but {colors} colors")]
    ColorCountMismatch { points: usize, colors: usize },
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// One sensor sweep: points in the sensor frame plus the sensor pose in the
/// submap frame.
#[derive(Debug, Clone, Default)]
pub struct PointCloudFrame {
    pub timestamp: f64,
    pub sensor_pose: Isometry3<f64>,
    pub points: Vec<Point3<f64>>,
    pub colors: Option<Vec<[u8; 3]>>,
}

impl PointCloudFrame {
    pub fn new(timestamp: f64, sensor_pose: Isometry3<f64>, points: Vec<Point3<f64>>) -> Self {
        Self {
            timestamp,
            sensor_pose,
            points,
            colors: None,
        }
    }
}

/// Counters reported by [`TsdfIntegrator::integrate_frame`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntegrationStats {
    pub rays: usize,
    /// Points dropped because they were non-finite or at the sensor origin.
    pub skipped_points: usize,
    pub updates: usize,
    pub touched_voxels: usize,
    /// Touched blocks, sorted.
    pub touched_blocks: Vec<BlockIndex>,
    pub new_blocks: usize,
}

/// Contribution of one ray to one voxel.
#[derive(Debug, Clone, Copy)]
struct RayUpdate {
    voxel: GlobalIndex,
    sdf: f64,
    weight: f64,
    color: [u8; 3],
}

#[derive(Default)]
struct CountChunk {
    updates: Vec<RayUpdate>,
    blocks: Vec<BlockIndex>,
    rays: usize,
    skipped: usize,
}

/// Per-voxel sums of one frame's updates.
#[derive(Debug, Clone, Copy)]
struct VoxelSum {
    address: usize,
    w: f64,
    wd: f64,
    wc: [f64; 3],
}

const RAYS_PER_TASK: usize = 64;

#[derive(Debug, Clone, Copy, Default)]
pub struct TsdfIntegrator {
    pub weighting: WeightingScheme,
}

impl TsdfIntegrator {
    pub fn new(weighting: WeightingScheme) -> Self {
        Self { weighting }
    }

    /// Fuses `frame` into `grid`.
    pub fn integrate_frame(&self, grid: &mut TsdfGrid, frame: &PointCloudFrame) -> Result<IntegrationStats, TsdfError> {
        if let Some(colors) = &frame.colors {
            if colors.len() != frame.points.len() {
                return Err(TsdfError::ColorCountMismatch {
                    points: frame.points.len(),
                    colors: colors.len(),
                });
            }
        }
        let cfg = *grid.config();
        let n = cfg.voxels_per_side;
        let origin = Point3::from(frame.sensor_pose.translation.vector);

        // Count.
        let chunks: Vec<CountChunk> = frame
            .points
            .par_chunks(RAYS_PER_TASK)
            .enumerate()
            .map(|(c, pts)| {
                let mut out = CountChunk::default();
                for (k, p) in pts.iter().enumerate() {
                    let color = frame.colors.as_ref().map_or([0; 3], |cs| cs[c * RAYS_PER_TASK + k]);
                    let surface = frame.sensor_pose * p;
                    let Ok(ray) = raycast_global(&origin, &surface, cfg.voxel_size, cfg.truncation_distance) else {
                        out.skipped += 1;
                        continue;
                    };
                    out.rays += 1;
                    for g in ray {
                        let center = global_center(g, cfg.voxel_size);
                        let (sdf, weight) =
                            compute_sdf_and_weight(&origin, &surface, &center, cfg.truncation_distance, &self.weighting);
                        out.updates.push(RayUpdate {
                            voxel: g,
                            sdf,
                            weight,
                            color,
                        });
                        let b = VoxelIndex::from_global(g, n).block;
                        if out.blocks.last() != Some(&b) {
                            out.blocks.push(b);
                        }
                    }
                }
                out.blocks.sort_unstable();
                out.blocks.dedup();
                out
            })
            .collect();

        let mut stats = IntegrationStats::default();
        let mut blocks = Vec::new();
        let mut updates = Vec::with_capacity(chunks.iter().map(|c| c.updates.len()).sum());
        for c in chunks {
            stats.rays += c.rays;
            stats.skipped_points += c.skipped;
            blocks.extend(c.blocks);
            updates.extend(c.updates);
        }
        blocks.par_sort_unstable();
        blocks.dedup();
        stats.updates = updates.len();
        if updates.is_empty() {
            return Ok(stats);
        }

        // Allocate.
        let before = grid.num_blocks();
        let handles = grid.get_or_allocate_blocks(&blocks)?;
        stats.new_blocks = grid.num_blocks() - before;

        // Apply. Keys are (address, ray-order position), so an unstable sort
        // on them is equivalent to a stable sort by address.
        let per_block = cfg.voxels_per_block();
        let mut keys: Vec<(usize, u32)> = updates
            .par_iter()
            .enumerate()
            .map(|(i, u)| {
                let v = VoxelIndex::from_global(u.voxel, n);
                let slot = handles[blocks.binary_search(&v.block).expect("block collected in count phase")].0 as usize;
                (slot * per_block + v.linear(n), i as u32)
            })
            .collect();
        keys.par_sort_unstable();

        let starts: Vec<usize> = (0..keys.len())
            .into_par_iter()
            .filter(|&i| i == 0 || keys[i].0 != keys[i - 1].0)
            .collect();
        let sums: Vec<VoxelSum> = (0..starts.len())
            .into_par_iter()
            .map(|s| {
                let end = starts.get(s + 1).copied().unwrap_or(keys.len());
                let mut sum = VoxelSum {
                    address: keys[starts[s]].0,
                    w: 0.0,
                    wd: 0.0,
                    wc: [0.0; 3],
                };
                for &(_, i) in &keys[starts[s]..end] {
                    let u = &updates[i as usize];
                    sum.w += u.weight;
                    sum.wd += u.weight * u.sdf;
                    for ch in 0..3 {
                        sum.wc[ch] += u.weight * u.color[ch] as f64;
                    }
                }
                sum
            })
            .collect();
        stats.touched_voxels = sums.len();

        let has_color = frame.colors.is_some();
        let trunc = cfg.truncation_distance;
        let mut work = Vec::new();
        let mut rest = sums.as_slice();
        for chunk in grid.block_chunks_mut() {
            let end = chunk.start() + chunk.len();
            let k = rest.partition_point(|s| s.address < end);
            if k > 0 {
                work.push((chunk, &rest[..k]));
            }
            rest = &rest[k..];
        }
        work.into_par_iter().for_each(|(mut chunk, sums)| {
            for s in sums {
                let local = s.address - chunk.start();
                let mut v = TsdfVoxel::load(&chunk, local);
                fold(&mut v, s, trunc, has_color);
                v.save(&mut chunk, local);
            }
        });

        stats.touched_blocks = blocks;
        Ok(stats)
    }
}

/// Weighted running average of the stored voxel with one frame's sums.
#[inline]
fn fold(v: &mut TsdfVoxel, s: &VoxelSum, trunc: f64, has_color: bool) {
    let w0 = v.weight as f64;
    let w1 = w0 + s.w;
    if !(w1 > 0.0) {
        return;
    }
    let d = (w0 * v.distance as f64 + s.wd) / w1;
    v.distance = d.clamp(-trunc, trunc) as f32;
    v.weight = w1 as f32;
    if has_color {
        for ch in 0..3 {
            let c = (w0 * v.color[ch] as f64 + s.wc[ch]) / w1;
            v.color[ch] = c.round().clamp(0.0, 255.0) as u8;
        }
    }
}
