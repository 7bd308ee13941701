//! Incremental Euclidean signed distance fields built from a TSDF.
//!
//! Voxels inside the TSDF truncation band are copied as *fixed* sources and
//! never touched again by propagation. Every other observed voxel holds the
//! shortest-path distance, through voxels of the same sign, to a fixed
//! voxel, capped at [`EsdfConfig::max_distance`]. Unobserved voxels hold the
//! cap and are not traversed.
//!
//! An update runs in two stages:
//!
//! * **raise**: voxels whose value was derived from a source that moved
//!   away or disappeared are reset to the cap, following the chain of
//!   voxels that depended on them;
//! * **lower**: each queued block is relaxed to a local fixpoint by
//!   repeated axis-direction sweeps, reading its neighbours' border voxels
//!   from a snapshot. Blocks run in parallel waves; after each wave every
//!   neighbour block that one of the new border values would improve is
//!   queued for the next wave.
//!
//! The result is the unique fixpoint of the relaxation, so it does not
//! depend on the update history or on the thread count.

mod neighborhood;
mod oracle;

use std::collections::{BTreeSet, VecDeque};

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{
    EsdfGrid, EsdfVoxel, GlobalIndex, GridConfig, GridError, TsdfGrid, TsdfVoxel, VoxelGrid, VoxelIndex,
};
use crate::hash::BlockIndex;
use crate::soa::Layout;

pub use neighborhood::{edge_costs, offsets, HALO, NEIGHBOR_COUNT};
pub use oracle::{brute_force_esdf, DenseEsdf, MAX_ORACLE_VOXELS};

#[derive(Debug, Error)]
pub enum EsdfError {
    #[error("invalid ESDF configuration: {0}")]
    InvalidConfig(String),
    #[error("grid too large for the dense oracle ({0} voxels)")]
    TooLarge(usize),
    #[error("TSDF and ESDF grids use different geometry")]
    GeometryMismatch,
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsdfConfig {
    /// Distances are capped at this value, in meters.
    pub max_distance: f32,
}

impl Default for EsdfConfig {
    fn default() -> Self {
        Self { max_distance: 2.0 }
    }
}

impl EsdfConfig {
    pub fn validate(&self, grid: &GridConfig) -> Result<(), EsdfError> {
        if !(self.max_distance.is_finite() && self.max_distance as f64 >= grid.truncation_distance) {
            return Err(EsdfError::InvalidConfig(format!(
                "max distance {} must be finite and at least the truncation distance {}",
                self.max_distance, grid.truncation_distance
            )));
        }
        Ok(())
    }
}

/// Empty ESDF grid matching a TSDF grid's geometry.
pub fn new_esdf_grid(config: GridConfig, esdf: &EsdfConfig) -> Result<EsdfGrid, EsdfError> {
    esdf.validate(&config)?;
    Ok(VoxelGrid::with_default(config, Layout::Soa, EsdfVoxel::unobserved(esdf.max_distance))?)
}

/// A voxel whose ESDF state changed, with the state it had before.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelChange {
    pub voxel: GlobalIndex,
    pub previous: EsdfVoxel,
}

/// Changes derived from one round of TSDF updates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EsdfUpdateBatch {
    pub source: u32,
    /// Voxels that entered the truncation band or whose band value changed.
    pub newly_fixed: Vec<VoxelChange>,
    /// Voxels that left the band or lost their observation, and free
    /// voxels whose sign flipped.
    pub newly_freed: Vec<VoxelChange>,
    /// Voxels observed for the first time, outside the band.
    pub newly_observed: Vec<GlobalIndex>,
}

impl EsdfUpdateBatch {
    pub fn is_empty(&self) -> bool {
        self.newly_fixed.is_empty() && self.newly_freed.is_empty() && self.newly_observed.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PropagationStats {
    pub raised_voxels: usize,
    pub waves: usize,
    pub blocks_processed: usize,
    pub sweeps: usize,
    pub lowered_voxels: usize,
}

/// Whether a TSDF voxel is an ESDF source.
#[inline]
pub fn in_band(voxel: &TsdfVoxel, truncation: f32) -> bool {
    voxel.is_observed() && voxel.distance.abs() < truncation
}

/// ESDF state implied by a TSDF voxel before any propagation.
#[inline]
fn initial_state(t: &TsdfVoxel, truncation: f32, max: f32) -> EsdfVoxel {
    if !t.is_observed() {
        EsdfVoxel::unobserved(max)
    } else if t.distance.abs() < truncation {
        EsdfVoxel {
            distance: t.distance,
            observed: true,
            fixed: true,
        }
    } else {
        EsdfVoxel {
            distance: if t.distance < 0.0 { -max } else { max },
            observed: true,
            fixed: false,
        }
    }
}

/// Copies the band of one TSDF block into the ESDF grid and records what
/// changed. The ESDF block is allocated if needed.
pub fn seed_block(
    tsdf: &TsdfGrid,
    esdf: &mut EsdfGrid,
    block: BlockIndex,
    config: &EsdfConfig,
    batch: &mut EsdfUpdateBatch,
) -> Result<(), EsdfError> {
    if tsdf.config() != esdf.config() {
        return Err(EsdfError::GeometryMismatch);
    }
    let n = tsdf.config().voxels_per_side;
    let trunc = tsdf.config().truncation_distance as f32;
    let t_handle = tsdf.block_handle(block).ok_or(GridError::BlockNotAllocated(block))?;
    let e_handle = esdf.allocate_block(block)?;
    for linear in 0..n * n * n {
        let t = tsdf.voxel_at(t_handle, linear);
        let e = esdf.voxel_at(e_handle, linear);
        let g = VoxelIndex {
            block,
            local: crate::grid::local_from_linear(linear, n),
        }
        .to_global(n);
        let next = initial_state(&t, trunc, config.max_distance);
        let change = VoxelChange { voxel: g, previous: e };
        if !next.observed {
            // Integration never clears weights, but edited grids can.
            if e.observed {
                batch.newly_freed.push(change);
                esdf.set_at(e_handle, linear, next);
            }
            continue;
        }
        if next.fixed {
            if !(e.fixed && e.distance == next.distance) {
                batch.newly_fixed.push(change);
                esdf.set_at(e_handle, linear, next);
            }
        } else if e.fixed || (e.observed && (e.distance < 0.0) != (next.distance < 0.0)) {
            batch.newly_freed.push(change);
            esdf.set_at(e_handle, linear, next);
        } else if !e.observed {
            batch.newly_observed.push(g);
            esdf.set_at(e_handle, linear, next);
        }
    }
    Ok(())
}

/// Seeds every listed block; see [`seed_block`].
pub fn seed_from_tsdf(
    tsdf: &TsdfGrid,
    esdf: &mut EsdfGrid,
    blocks: &[BlockIndex],
    config: &EsdfConfig,
) -> Result<EsdfUpdateBatch, EsdfError> {
    let mut batch = EsdfUpdateBatch::default();
    for &b in blocks {
        seed_block(tsdf, esdf, b, config, &mut batch)?;
    }
    Ok(batch)
}

const UNOBSERVED: u8 = 0;
const FREE: u8 = 1;
const FIXED: u8 = 2;

/// A block plus a halo of [`HALO`] voxels, unpacked for relaxation.
struct Window {
    m: usize,
    mag: Vec<f32>,
    neg: Vec<bool>,
    kind: Vec<u8>,
    /// Magnitudes of observed voxels on the positive (0) and negative (1)
    /// side, infinite elsewhere, so relaxation needs no membership tests.
    side: [Vec<f32>; 2],
    /// Set when a stencil neighbour changed since the voxel was last relaxed.
    dirty: Vec<bool>,
}

impl Window {
    fn load(grid: &EsdfGrid, block: BlockIndex) -> Self {
        let n = grid.config().voxels_per_side;
        let m = n + 2 * HALO;
        let mut handles = [None; 27];
        for dz in -1..=1i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    handles[((dx + 1) + 3 * ((dy + 1) + 3 * (dz + 1))) as usize] =
                        grid.block_handle(block.offset(dx, dy, dz));
                }
            }
        }
        let split = |w: usize| {
            let l = w as i64 - HALO as i64;
            (l.div_euclid(n as i64), l.rem_euclid(n as i64) as usize)
        };
        let mut win = Self {
            m,
            mag: vec![0.0; m * m * m],
            neg: vec![false; m * m * m],
            kind: vec![UNOBSERVED; m * m * m],
            dirty: vec![true; m * m * m],
            side: [vec![f32::INFINITY; m * m * m], vec![f32::INFINITY; m * m * m]],
        };
        for wz in 0..m {
            let (bz, lz) = split(wz);
            for wy in 0..m {
                let (by, ly) = split(wy);
                for wx in 0..m {
                    let (bx, lx) = split(wx);
                    let Some(h) = handles[((bx + 1) + 3 * ((by + 1) + 3 * (bz + 1))) as usize] else {
                        continue;
                    };
                    let v = grid.voxel_at(h, lx + n * (ly + n * lz));
                    let i = wx + m * (wy + m * wz);
                    win.mag[i] = v.distance.abs();
                    win.neg[i] = v.distance < 0.0;
                    if v.observed {
                        win.side[win.neg[i] as usize][i] = win.mag[i];
                    }
                    win.kind[i] = if v.fixed {
                        FIXED
                    } else if v.observed {
                        FREE
                    } else {
                        UNOBSERVED
                    };
                }
            }
        }
        win
    }

    #[inline]
    fn relax(&mut self, i: usize, stencil: &[(isize, f32)]) -> bool {
        if self.kind[i] != FREE {
            return false;
        }
        let side = &self.side[self.neg[i] as usize];
        let mut best = self.mag[i];
        for &(d, c) in stencil {
            let cand = side[(i as isize + d) as usize] + c;
            if cand < best {
                best = cand;
            }
        }
        if best < self.mag[i] {
            self.mag[i] = best;
            self.side[self.neg[i] as usize][i] = best;
            true
        } else {
            false
        }
    }

    /// One Gauss-Seidel pass over the block interior. `axis` is the
    /// outermost loop, walked forward or backward. Voxels none of whose
    /// neighbours changed since their last visit cannot improve and are
    /// skipped.
    fn sweep(&mut self, n: usize, axis: usize, forward: bool, stencil: &[(isize, f32)]) -> bool {
        let m = self.m;
        let mut changed = false;
        for a in 0..n {
            let a = if forward { a } else { n - 1 - a };
            for b in 0..n {
                for c in 0..n {
                    let (x, y, z) = match axis {
                        0 => (a, c, b),
                        1 => (c, a, b),
                        _ => (c, b, a),
                    };
                    let i = (x + HALO) + m * ((y + HALO) + m * (z + HALO));
                    if !self.dirty[i] {
                        continue;
                    }
                    self.dirty[i] = false;
                    if self.relax(i, stencil) {
                        changed = true;
                        for &(d, _) in stencil {
                            self.dirty[(i as isize + d) as usize] = true;
                        }
                    }
                }
            }
        }
        changed
    }
}

struct BlockResult {
    block: BlockIndex,
    /// (local linear index, new magnitude, negative)
    changed: Vec<(usize, f32, bool)>,
    sweeps: usize,
}

fn relax_block(grid: &EsdfGrid, block: BlockIndex, stencil: &[(isize, f32)]) -> BlockResult {
    let n = grid.config().voxels_per_side;
    let mut win = Window::load(grid, block);
    let before = win.mag.clone();
    let mut sweeps = 0;
    loop {
        let mut changed = false;
        for axis in 0..3 {
            for forward in [true, false] {
                changed |= win.sweep(n, axis, forward, stencil);
                sweeps += 1;
            }
        }
        if !changed {
            break;
        }
    }
    let m = win.m;
    let mut changed = Vec::new();
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let i = (x + HALO) + m * ((y + HALO) + m * (z + HALO));
                if win.mag[i] != before[i] {
                    changed.push((x + n * (y + n * z), win.mag[i], win.neg[i]));
                }
            }
        }
    }
    BlockResult { block, changed, sweeps }
}

fn block_of(g: GlobalIndex, n: usize) -> BlockIndex {
    VoxelIndex::from_global(g, n).block
}

fn add_with_neighbors(queue: &mut BTreeSet<BlockIndex>, grid: &EsdfGrid, b: BlockIndex) {
    for dz in -1..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                let nb = b.offset(dx, dy, dz);
                if grid.block_handle(nb).is_some() {
                    queue.insert(nb);
                }
            }
        }
    }
}

/// Brings `grid` to the fixpoint after the changes recorded in `batches`
/// were written by [`seed_from_tsdf`].
pub fn propagate(grid: &mut EsdfGrid, batches: &[EsdfUpdateBatch], config: &EsdfConfig) -> PropagationStats {
    let cfg = *grid.config();
    let n = cfg.voxels_per_side;
    let max = config.max_distance;
    let costs = edge_costs(cfg.voxel_size);
    let offs = offsets();
    let mut stats = PropagationStats::default();
    let mut queue = BTreeSet::new();

    // Raise.
    let mut pending: VecDeque<(GlobalIndex, f32, bool)> = VecDeque::new();
    let mut seeds = BTreeSet::new();
    for batch in batches {
        for ch in batch.newly_fixed.iter().chain(&batch.newly_freed) {
            seeds.insert(block_of(ch.voxel, n));
            if ch.previous.observed {
                pending.push_back((ch.voxel, ch.previous.distance.abs(), ch.previous.distance < 0.0));
            }
        }
        seeds.extend(batch.newly_observed.iter().map(|&g| block_of(g, n)));
    }
    for b in seeds {
        add_with_neighbors(&mut queue, grid, b);
    }
    while let Some((g, old, neg)) = pending.pop_front() {
        for (o, &c) in offs.iter().zip(&costs) {
            let t = [g[0] + o[0], g[1] + o[1], g[2] + o[2]];
            let vi = VoxelIndex::from_global(t, n);
            let Some(v) = grid.get(&vi) else { continue };
            if !v.observed || v.fixed || (v.distance < 0.0) != neg {
                continue;
            }
            let mag = v.distance.abs();
            if mag < max && mag == old + c {
                grid.set(&vi, EsdfVoxel {
                    distance: if neg { -max } else { max },
                    ..v
                })
                .expect("block exists");
                stats.raised_voxels += 1;
                add_with_neighbors(&mut queue, grid, vi.block);
                pending.push_back((t, mag, neg));
            }
        }
    }

    // Lower.
    let m = n + 2 * HALO;
    let stencil: Vec<(isize, f32)> = offs
        .iter()
        .zip(&costs)
        .map(|(o, &c)| ((o[0] + m as i64 * (o[1] + m as i64 * o[2])) as isize, c))
        .collect();
    let wave_bound = 4 * (grid.num_blocks() + 1) * ((max as f64 / cfg.voxel_size) as usize + 2);
    while !queue.is_empty() {
        stats.waves += 1;
        assert!(stats.waves <= wave_bound, "ESDF propagation failed to converge");
        let blocks: Vec<BlockIndex> = std::mem::take(&mut queue).into_iter().collect();
        stats.blocks_processed += blocks.len();
        let results: Vec<BlockResult> = blocks
            .par_iter()
            .map(|&b| relax_block(grid, b, &stencil))
            .collect();
        for r in &results {
            stats.sweeps += r.sweeps;
            stats.lowered_voxels += r.changed.len();
            let h = grid.block_handle(r.block).expect("queued blocks are allocated");
            for &(linear, mag, neg) in &r.changed {
                let v = grid.voxel_at(h, linear);
                debug_assert!(mag < v.distance.abs(), "lowering increased a distance");
                grid.set_at(h, linear, EsdfVoxel {
                    distance: if neg { -mag } else { mag },
                    ..v
                });
            }
        }
        let grid_ref = &*grid;
        let next: Vec<Vec<BlockIndex>> = results
            .par_iter()
            .map(|r| boundary_improvements(grid_ref, r, offs, &costs))
            .collect();
        queue.extend(next.into_iter().flatten());
    }
    stats
}

/// Neighbour blocks containing a voxel that one of `r`'s new values improves.
fn boundary_improvements(grid: &EsdfGrid, r: &BlockResult, offs: &[[i64; 3]], costs: &[f32]) -> Vec<BlockIndex> {
    let n = grid.config().voxels_per_side;
    let ni = n as i64;
    let halo = HALO as i64;
    let slot = |d: [i64; 3]| ((d[0] + 1) + 3 * ((d[1] + 1) + 3 * (d[2] + 1))) as usize;
    let mut handles = [None; 27];
    for dz in -1..=1 {
        for dy in -1..=1 {
            for dx in -1..=1 {
                handles[slot([dx, dy, dz])] = grid.block_handle(r.block.offset(dx, dy, dz));
            }
        }
    }
    let mut hit = [false; 27];
    for &(linear, mag, neg) in &r.changed {
        let l = crate::grid::local_from_linear(linear, n).map(|c| c as i64);
        if l.iter().all(|&c| c >= halo && c < ni - halo) {
            continue;
        }
        for (o, &c) in offs.iter().zip(costs) {
            let t = [l[0] + o[0], l[1] + o[1], l[2] + o[2]];
            let side = t.map(|c| (c >= ni) as i64 - (c < 0) as i64);
            if side == [0, 0, 0] || hit[slot(side)] {
                continue;
            }
            let Some(h) = handles[slot(side)] else { continue };
            let lt = [0, 1, 2].map(|a| (t[a] - side[a] * ni) as usize);
            let v = grid.voxel_at(h, lt[0] + n * (lt[1] + n * lt[2]));
            if v.observed && !v.fixed && (v.distance < 0.0) == neg && mag + c < v.distance.abs() {
                hit[slot(side)] = true;
            }
        }
    }
    let mut out: Vec<BlockIndex> = (0..27)
        .filter(|&k| hit[k])
        .map(|k| {
            let k = k as i64;
            r.block.offset(k % 3 - 1, (k / 3) % 3 - 1, k / 9 - 1)
        })
        .collect();
    out.sort_unstable();
    out
}

/// Keeps an ESDF grid in sync with a TSDF grid.
#[derive(Debug, Clone, Copy, Default)]
pub struct EsdfIntegrator {
    pub config: EsdfConfig,
}

impl EsdfIntegrator {
    pub fn new(config: EsdfConfig) -> Self {
        Self { config }
    }

    /// Reseeds `blocks` from the TSDF and propagates the changes.
    pub fn update(
        &self,
        tsdf: &TsdfGrid,
        esdf: &mut EsdfGrid,
        blocks: &[BlockIndex],
    ) -> Result<(EsdfUpdateBatch, PropagationStats), EsdfError> {
        let batch = seed_from_tsdf(tsdf, esdf, blocks, &self.config)?;
        let stats = propagate(esdf, std::slice::from_ref(&batch), &self.config);
        Ok((batch, stats))
    }

    /// Builds the ESDF of `tsdf` from scratch.
    pub fn rebuild(&self, tsdf: &TsdfGrid) -> Result<EsdfGrid, EsdfError> {
        let mut esdf = new_esdf_grid(*tsdf.config(), &self.config)?;
        self.update(tsdf, &mut esdf, tsdf.blocks())?;
        Ok(esdf)
    }
}
