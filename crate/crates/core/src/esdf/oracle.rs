//! Dense reference distance field, computed with Dijkstra's algorithm over
//! the same stencil and the same `f32` arithmetic as [`propagate`](super::propagate).

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::grid::{GlobalIndex, TsdfGrid};

use super::{edge_costs, offsets, EsdfConfig, EsdfError};

/// Largest grid the oracle will densify (128³ voxels).
pub const MAX_ORACLE_VOXELS: usize = 128 * 128 * 128;

/// Distances over the bounding box of a grid's allocated blocks.
#[derive(Debug, Clone)]
pub struct DenseEsdf {
    pub min: GlobalIndex,
    pub dims: [usize; 3],
    pub distance: Vec<f32>,
}

impl DenseEsdf {
    fn index(&self, g: GlobalIndex) -> Option<usize> {
        let mut i = 0;
        for a in (0..3).rev() {
            let c = g[a] - self.min[a];
            if c < 0 || c as usize >= self.dims[a] {
                return None;
            }
            i = i * self.dims[a] + c as usize;
        }
        Some(i)
    }

    pub fn get(&self, g: GlobalIndex) -> Option<f32> {
        self.index(g).map(|i| self.distance[i])
    }
}

/// Exact shortest-path distances from every band voxel of `tsdf`, through
/// observed voxels of the same sign, capped at the configured maximum.
pub fn brute_force_esdf(tsdf: &TsdfGrid, config: &EsdfConfig) -> Result<DenseEsdf, EsdfError> {
    let cfg = tsdf.config();
    let n = cfg.voxels_per_side as i64;
    let max = config.max_distance;
    let trunc = cfg.truncation_distance as f32;
    let (mut lo, mut hi) = ([i64::MAX; 3], [i64::MIN; 3]);
    for b in tsdf.blocks() {
        for (a, c) in [b.x, b.y, b.z].into_iter().enumerate() {
            lo[a] = lo[a].min(c * n);
            hi[a] = hi[a].max(c * n + n);
        }
    }
    if tsdf.num_blocks() == 0 {
        return Ok(DenseEsdf {
            min: [0; 3],
            dims: [0; 3],
            distance: Vec::new(),
        });
    }
    let dims = [0, 1, 2].map(|a| (hi[a] - lo[a]) as usize);
    let total = dims[0] * dims[1] * dims[2];
    if total > MAX_ORACLE_VOXELS {
        return Err(EsdfError::TooLarge(total));
    }

    // 0 = not traversable, 1 = free, 2 = source
    let mut kind = vec![0u8; total];
    let mut neg = vec![false; total];
    let mut out = DenseEsdf {
        min: lo,
        dims,
        distance: vec![max; total],
    };
    for (vi, v) in tsdf.iter_voxels() {
        let i = out.index(vi.to_global(cfg.voxels_per_side)).expect("inside bounds");
        if !v.is_observed() {
            continue;
        }
        neg[i] = v.distance < 0.0;
        if v.distance.abs() < trunc {
            kind[i] = 2;
            out.distance[i] = v.distance.abs();
        } else {
            kind[i] = 1;
        }
    }

    let costs = edge_costs(cfg.voxel_size);
    let mut heap: BinaryHeap<Reverse<(u32, usize)>> = (0..total)
        .filter(|&i| kind[i] == 2)
        .map(|i| Reverse((out.distance[i].to_bits(), i)))
        .collect();
    let mut done = vec![false; total];
    let coords = |i: usize| {
        let x = i % dims[0];
        let y = (i / dims[0]) % dims[1];
        let z = i / (dims[0] * dims[1]);
        [lo[0] + x as i64, lo[1] + y as i64, lo[2] + z as i64]
    };
    // Non-negative f32 values order like their bit patterns.
    while let Some(Reverse((bits, i))) = heap.pop() {
        if done[i] {
            continue;
        }
        done[i] = true;
        let d = f32::from_bits(bits);
        let g = coords(i);
        for (o, &c) in offsets().iter().zip(&costs) {
            let Some(j) = out.index([g[0] + o[0], g[1] + o[1], g[2] + o[2]]) else {
                continue;
            };
            if kind[j] != 1 || neg[j] != neg[i] || done[j] {
                continue;
            }
            let cand = d + c;
            if cand < out.distance[j] {
                out.distance[j] = cand;
                heap.push(Reverse((cand.to_bits(), j)));
            }
        }
    }
    for i in 0..total {
        if neg[i] && kind[i] != 0 {
            out.distance[i] = -out.distance[i];
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridConfig, TsdfVoxel, VoxelIndex};
    use crate::hash::BlockIndex;

    #[test]
    fn empty_and_single_source() {
        let mut tsdf = TsdfGrid::new(GridConfig::new(0.1, 8, 0.2).unwrap()).unwrap();
        let config = EsdfConfig::default();
        assert!(brute_force_esdf(&tsdf, &config).unwrap().distance.is_empty());
        tsdf.allocate_block(BlockIndex::new(0, 0, 0)).unwrap();
        let d = brute_force_esdf(&tsdf, &config).unwrap();
        assert!(d.distance.iter().all(|&v| v == 2.0));
        for i in 0..512 {
            tsdf.set_at(crate::grid::BlockHandle(0), i, TsdfVoxel {
                distance: 0.2,
                weight: 1.0,
                color: [0; 3],
            });
        }
        tsdf.set(&VoxelIndex::from_global([0, 0, 0], 8), TsdfVoxel {
            distance: 0.0,
            weight: 1.0,
            color: [0; 3],
        })
        .unwrap();
        let d = brute_force_esdf(&tsdf, &config).unwrap();
        assert_eq!(d.get([0, 0, 0]), Some(0.0));
        assert!((d.get([4, 0, 0]).unwrap() - 0.4).abs() < 1e-6);
        assert!((d.get([2, 1, 0]).unwrap() as f64 - 0.1 * 5f64.sqrt()).abs() < 1e-6);
        assert_eq!(d.get([9, 0, 0]), None);
    }

    #[test]
    fn refuses_huge_grids() {
        let mut tsdf = TsdfGrid::new(GridConfig::new(0.1, 8, 0.2).unwrap()).unwrap();
        tsdf.allocate_block(BlockIndex::new(0, 0, 0)).unwrap();
        tsdf.allocate_block(BlockIndex::new(20, 0, 0)).unwrap();
        tsdf.allocate_block(BlockIndex::new(0, 20, 0)).unwrap();
        tsdf.allocate_block(BlockIndex::new(0, 0, 20)).unwrap();
        assert!(matches!(
            brute_force_esdf(&tsdf, &EsdfConfig::default()),
            Err(EsdfError::TooLarge(_))
        ));
    }
}
