//! Propagation stencil.
//!
//! Distances are propagated along the 74 offsets whose sorted absolute
//! components are (0,0,1), (0,1,1), (1,1,1), (0,1,2) or (1,1,2), with edge
//! cost equal to the offset's Euclidean length. Shortest paths in this graph
//! overestimate the Euclidean distance between voxel centers by less than
//! 5%; axis steps alone (6 neighbours) can overestimate by up to √3.

use std::sync::OnceLock;

/// Largest absolute offset component, i.e. how far a block must look into
/// its neighbours.
pub const HALO: usize = 2;

pub const NEIGHBOR_COUNT: usize = 74;

/// Stencil offsets in a fixed order.
pub fn offsets() -> &'static [[i64; 3]] {
    static OFFSETS: OnceLock<Vec<[i64; 3]>> = OnceLock::new();
    OFFSETS.get_or_init(|| {
        let mut out = Vec::with_capacity(NEIGHBOR_COUNT);
        for z in -2i64..=2 {
            for y in -2i64..=2 {
                for x in -2i64..=2 {
                    let mut a = [x.abs(), y.abs(), z.abs()];
                    a.sort_unstable();
                    if matches!(a, [0, 0, 1] | [0, 1, 1] | [1, 1, 1] | [0, 1, 2] | [1, 1, 2]) {
                        out.push([x, y, z]);
                    }
                }
            }
        }
        debug_assert_eq!(out.len(), NEIGHBOR_COUNT);
        out
    })
}

/// Edge cost of each offset for the given voxel size, in the order of
/// [`offsets`].
pub fn edge_costs(voxel_size: f64) -> Vec<f32> {
    offsets()
        .iter()
        .map(|o| (voxel_size * ((o[0] * o[0] + o[1] * o[1] + o[2] * o[2]) as f64).sqrt()) as f32)
        .collect()
}
