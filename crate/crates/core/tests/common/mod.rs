//! Reference implementations shared by the integration tests. Each one is
//! deliberately naive: single-threaded, one measurement at a time, no
//! batching, so that it can serve as ground truth for the optimized code.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxmap::grid::{global_center, GlobalIndex, GridConfig, TsdfGrid, TsdfVoxel, VoxelIndex};
use voxmap::hash::BlockIndex;
use voxmap::tsdf::{raycast_global, PointCloudFrame, WeightingScheme};

/// Running per-voxel `(weight, distance, color)` in `f64`.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleVoxel {
    pub weight: f64,
    pub distance: f64,
    pub color: [f64; 3],
}

/// Sequential TSDF: every ray updates every voxel it crosses immediately.
#[derive(Debug, Clone)]
pub struct TsdfOracle {
    pub config: GridConfig,
    pub weighting: WeightingScheme,
    pub voxels: HashMap<GlobalIndex, OracleVoxel>,
}

impl TsdfOracle {
    pub fn new(config: GridConfig, weighting: WeightingScheme) -> Self {
        Self {
            config,
            weighting,
            voxels: HashMap::new(),
        }
    }

    pub fn integrate(&mut self, frame: &PointCloudFrame) {
        let vs = self.config.voxel_size;
        let trunc = self.config.truncation_distance;
        let origin = Point3::from(frame.sensor_pose.translation.vector);
        for (k, p) in frame.points.iter().enumerate() {
            let surface = frame.sensor_pose * p;
            let Ok(ray) = raycast_global(&origin, &surface, vs, trunc) else {
                continue;
            };
            let dir = surface - origin;
            let range = dir.norm();
            let w = match self.weighting {
                WeightingScheme::Constant => 1.0,
                WeightingScheme::InverseSquare { min_range } => 1.0 / range.max(min_range).powi(2),
            };
            let color = frame.colors.as_ref().map(|c| c[k]);
            for g in ray {
                let c = global_center(g, vs);
                let sdf = ((surface - c).dot(&dir) / range).clamp(-trunc, trunc);
                let v = self.voxels.entry(g).or_default();
                let w1 = v.weight + w;
                v.distance = (v.weight * v.distance + w * sdf) / w1;
                if let Some(col) = color {
                    for ch in 0..3 {
                        v.color[ch] = (v.weight * v.color[ch] + w * col[ch] as f64) / w1;
                    }
                }
                v.weight = w1;
            }
        }
    }

    pub fn blocks(&self) -> BTreeSet<BlockIndex> {
        let n = self.config.voxels_per_side;
        self.voxels.keys().map(|g| VoxelIndex::from_global(*g, n).block).collect()
    }
}

/// Largest discrepancy between a grid and the oracle, as
/// `(distance error, relative weight error)`. Panics with a message if the
/// block sets differ or a voxel is missing on either side.
pub fn compare_with_oracle(grid: &TsdfGrid, oracle: &TsdfOracle) -> Result<(f64, f64), String> {
    let grid_blocks: BTreeSet<BlockIndex> = grid.blocks().iter().copied().collect();
    let oracle_blocks = oracle.blocks();
    if grid_blocks != oracle_blocks {
        return Err(format!(
            "block sets differ: {} in grid, {} in oracle, {} in common",
            grid_blocks.len(),
            oracle_blocks.len(),
            grid_blocks.intersection(&oracle_blocks).count()
        ));
    }
    let n = grid.config().voxels_per_side;
    let (mut dd, mut dw) = (0.0f64, 0.0f64);
    let mut observed = 0;
    for (vi, v) in grid.iter_voxels() {
        let g = vi.to_global(n);
        match oracle.voxels.get(&g) {
            Some(o) => {
                observed += 1;
                dd = dd.max((v.distance as f64 - o.distance).abs());
                dw = dw.max((v.weight as f64 - o.weight).abs() / o.weight.max(1.0));
            }
            None if v.weight != 0.0 => return Err(format!("voxel {g:?} observed only in the grid")),
            None => {}
        }
    }
    if observed != oracle.voxels.len() {
        return Err(format!("grid has {observed} of {} oracle voxels", oracle.voxels.len()));
    }
    Ok((dd, dw))
}

/// A random frame: a few planes and spheres seen from a random pose, with
/// some points jittered and a handful of degenerate points mixed in.
pub fn random_frame(rng: &mut ChaCha8Rng, max_points: usize) -> PointCloudFrame {
    let n = rng.random_range(max_points / 4..=max_points);
    let pose = Isometry3::from_parts(
        Translation3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-0.5..0.5)),
        UnitQuaternion::from_euler_angles(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-3.1..3.1),
        ),
    );
    let walls: Vec<(Vector3<f64>, f64)> = (0..rng.random_range(1..4))
        .map(|_| {
            let d = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.4..0.4));
            (d.normalize(), rng.random_range(1.0..6.0))
        })
        .collect();
    let points = (0..n)
        .map(|k| {
            if k % 997 == 0 {
                return Point3::origin();
            }
            let dir = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.6..0.6))
                .normalize();
            // Nearest wall hit along the ray, else a sphere shell.
            let t = walls
                .iter()
                .filter_map(|(nrm, off)| {
                    let c = nrm.dot(&dir);
                    (c > 0.05).then(|| off / c)
                })
                .fold(rng.random_range(3.0..8.0), f64::min);
            Point3::from(dir * t.min(12.0) * (1.0 + rng.random_range(-0.01..0.01)))
        })
        .collect();
    let mut frame = PointCloudFrame::new(0.0, pose, points);
    if rng.random_bool(0.5) {
        frame.colors = Some((0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect());
    }
    frame
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Observed free space over `blocks³` blocks starting at the origin block.
pub fn free_space(config: GridConfig, blocks: i64) -> TsdfGrid {
    let mut g = TsdfGrid::new(config).unwrap();
    let mut idx = Vec::new();
    for z in 0..blocks {
        for y in 0..blocks {
            for x in 0..blocks {
                idx.push(BlockIndex::new(x, y, z));
            }
        }
    }
    g.get_or_allocate_blocks(&idx).unwrap();
    let trunc = config.truncation_distance as f32;
    let n = config.voxels_per_side;
    let free = TsdfVoxel {
        distance: trunc,
        weight: 1.0,
        color: [0; 3],
    };
    for b in idx {
        let h = g.block_handle(b).unwrap();
        for linear in 0..n * n * n {
            g.set_at(h, linear, free);
        }
    }
    g
}

/// Writes one voxel and returns its block.
pub fn set_voxel(g: &mut TsdfGrid, at: GlobalIndex, distance: f32, weight: f32) -> BlockIndex {
    let vi = VoxelIndex::from_global(at, g.config().voxels_per_side);
    g.set(&vi, TsdfVoxel {
        distance,
        weight,
        color: [0; 3],
    })
    .unwrap();
    vi.block
}
