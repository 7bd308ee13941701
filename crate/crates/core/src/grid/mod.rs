//! Two-level sparse voxel storage.
//!
//! Space is cut into blocks of `n³` voxels. Blocks are located through a
//! [`HashMap3D`] whose slot numbers index into one [`RecordStore`] holding
//! the voxels of every allocated block back to back: the voxel with local
//! coordinates `(i, j, k)` in the block at slot `s` has store address
//! `s·n³ + i + n·(j + n·k)`.
//!
//! Memory grows with the number of allocated blocks only. When either the
//! hash map or the store fills up, a larger one is created and the contents
//! are migrated; slots do not change.

mod snapshot;
mod voxel;

use nalgebra::Point3;
use thiserror::Error;

use crate::hash::{BlockIndex, HashError, HashMap3D};
use crate::soa::{Layout, RecordChunkMut, RecordStore, StoreError};

pub use snapshot::{read_snapshot, write_snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};
pub use voxel::{EsdfVoxel, TsdfVoxel, VoxelRecord};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite coordinate {0:?}")]
    NonFinite([f64; 3]),
    #[error("block {0:?} is not allocated")]
    BlockNotAllocated(BlockIndex),
    #[error(transparent)]
    Hash(#[from] HashError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("malformed snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Resolution and truncation settings shared by a submap's grids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridConfig {
    /// Voxel edge length in meters.
    pub voxel_size: f64,
    /// Voxels along one block edge (8 or 16).
    pub voxels_per_side: usize,
    /// TSDF truncation band half-width in meters.
    pub truncation_distance: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self::outdoor()
    }
}

impl GridConfig {
    pub fn new(voxel_size: f64, voxels_per_side: usize, truncation_distance: f64) -> Result<Self, GridError> {
        let config = Self {
            voxel_size,
            voxels_per_side,
            truncation_distance,
        };
        config.validate()?;
        Ok(config)
    }

    /// 10 cm voxels, 8³ blocks, truncation of four voxels.
    pub fn outdoor() -> Self {
        Self {
            voxel_size: 0.10,
            voxels_per_side: 8,
            truncation_distance: 0.40,
        }
    }

    /// 5 cm voxels, 8³ blocks, truncation of four voxels.
    pub fn indoor() -> Self {
        Self {
            voxel_size: 0.05,
            voxels_per_side: 8,
            truncation_distance: 0.20,
        }
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.voxel_size.is_finite() && self.voxel_size > 0.0) {
            return Err(GridError::InvalidConfig(format!("voxel_size {} must be > 0", self.voxel_size)));
        }
        if !matches!(self.voxels_per_side, 8 | 16) {
            return Err(GridError::InvalidConfig(format!(
                "voxels_per_side {} must be 8 or 16",
                self.voxels_per_side
            )));
        }
        // Small relative slack so that e.g. 2 * 0.05 passes for 0.1.
        if !(self.truncation_distance.is_finite()
            && self.truncation_distance >= 2.0 * self.voxel_size * (1.0 - 1e-9))
        {
            return Err(GridError::InvalidConfig(format!(
                "truncation_distance {} must be >= 2 * voxel_size",
                self.truncation_distance
            )));
        }
        Ok(())
    }

    pub fn voxels_per_block(&self) -> usize {
        self.voxels_per_side.pow(3)
    }

    /// Block edge length in meters.
    pub fn block_size(&self) -> f64 {
        self.voxel_size * self.voxels_per_side as f64
    }
}

/// Global voxel coordinates, `floor(p / voxel_size)` per axis.
pub type GlobalIndex = [i64; 3];

/// A voxel addressed by its block and its position inside the block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelIndex {
    pub block: BlockIndex,
    pub local: [usize; 3],
}

impl VoxelIndex {
    pub fn from_global(g: GlobalIndex, n: usize) -> Self {
        let n = n as i64;
        let split = |c: i64| (c.div_euclid(n), c.rem_euclid(n) as usize);
        let (bx, lx) = split(g[0]);
        let (by, ly) = split(g[1]);
        let (bz, lz) = split(g[2]);
        Self {
            block: BlockIndex::new(bx, by, bz),
            local: [lx, ly, lz],
        }
    }

    pub fn to_global(&self, n: usize) -> GlobalIndex {
        let n = n as i64;
        [
            self.block.x * n + self.local[0] as i64,
            self.block.y * n + self.local[1] as i64,
            self.block.z * n + self.local[2] as i64,
        ]
    }

    /// Position of the voxel within its block's record range.
    #[inline]
    pub fn linear(&self, n: usize) -> usize {
        self.local[0] + n * (self.local[1] + n * self.local[2])
    }
}

#[inline]
pub fn local_from_linear(linear: usize, n: usize) -> [usize; 3] {
    [linear % n, (linear / n) % n, linear / (n * n)]
}

pub fn world_to_global(p: &Point3<f64>, voxel_size: f64) -> Result<GlobalIndex, GridError> {
    if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
        return Err(GridError::NonFinite([p.x, p.y, p.z]));
    }
    Ok([
        (p.x / voxel_size).floor() as i64,
        (p.y / voxel_size).floor() as i64,
        (p.z / voxel_size).floor() as i64,
    ])
}

pub fn world_to_voxel(p: &Point3<f64>, config: &GridConfig) -> Result<VoxelIndex, GridError> {
    let g = world_to_global(p, config.voxel_size)?;
    Ok(VoxelIndex::from_global(g, config.voxels_per_side))
}

pub fn global_center(g: GlobalIndex, voxel_size: f64) -> Point3<f64> {
    Point3::new(
        (g[0] as f64 + 0.5) * voxel_size,
        (g[1] as f64 + 0.5) * voxel_size,
        (g[2] as f64 + 0.5) * voxel_size,
    )
}

pub fn voxel_center(v: &VoxelIndex, config: &GridConfig) -> Point3<f64> {
    global_center(v.to_global(config.voxels_per_side), config.voxel_size)
}

/// Block containing world point `p`.
pub fn world_to_block(p: &Point3<f64>, config: &GridConfig) -> Result<BlockIndex, GridError> {
    Ok(world_to_voxel(p, config)?.block)
}

/// Minimum corner of a block in world coordinates.
pub fn block_origin(b: BlockIndex, config: &GridConfig) -> Point3<f64> {
    let s = config.block_size();
    Point3::new(b.x as f64 * s, b.y as f64 * s, b.z as f64 * s)
}

/// Handle of an allocated block: its slot in the grid's store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockHandle(pub u32);

/// Sparse grid of `n³` voxel blocks.
#[derive(Debug, Clone)]
pub struct VoxelGrid<V: VoxelRecord> {
    config: GridConfig,
    map: HashMap3D,
    store: RecordStore,
    blocks: Vec<BlockIndex>,
    default_voxel: V,
}

pub type TsdfGrid = VoxelGrid<TsdfVoxel>;
pub type EsdfGrid = VoxelGrid<EsdfVoxel>;

const INITIAL_BLOCKS: usize = 64;

impl TsdfGrid {
    pub fn new(config: GridConfig) -> Result<Self, GridError> {
        Self::with_default(config, Layout::Soa, TsdfVoxel::default())
    }
}

impl<V: VoxelRecord> VoxelGrid<V> {
    /// Creates an empty grid whose freshly allocated voxels equal `default_voxel`.
    pub fn with_default(config: GridConfig, layout: Layout, default_voxel: V) -> Result<Self, GridError> {
        config.validate()?;
        Ok(Self {
            config,
            map: HashMap3D::new(INITIAL_BLOCKS * 2),
            store: RecordStore::new(V::schema(), layout, INITIAL_BLOCKS * config.voxels_per_block())?,
            blocks: Vec::new(),
            default_voxel,
        })
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn layout(&self) -> Layout {
        self.store.layout()
    }

    pub fn default_voxel(&self) -> V {
        self.default_voxel
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Allocated block indices ordered by slot.
    pub fn blocks(&self) -> &[BlockIndex] {
        &self.blocks
    }

    pub fn hash_map(&self) -> &HashMap3D {
        &self.map
    }

    pub fn store(&self) -> &RecordStore {
        &self.store
    }

    pub fn block_handle(&self, b: BlockIndex) -> Option<BlockHandle> {
        self.map.find(b).map(BlockHandle)
    }

    pub fn block_index(&self, handle: BlockHandle) -> BlockIndex {
        self.blocks[handle.0 as usize]
    }

    /// Bytes held by the voxel store and the hash table.
    pub fn memory_bytes(&self) -> usize {
        self.store.byte_len() + self.map.capacity() * 12
    }

    /// Returns handles for every index in `indices`, allocating missing
    /// blocks. Existing blocks are left untouched; new blocks hold the
    /// grid's default voxel.
    pub fn get_or_allocate_blocks(&mut self, indices: &[BlockIndex]) -> Result<Vec<BlockHandle>, GridError> {
        let activations = loop {
            match self.map.activate(indices) {
                Ok(a) => break a,
                Err(HashError::Overflow { .. }) => self.map.grow(),
                Err(e) => return Err(e.into()),
            }
        };
        let fresh: Vec<(usize, BlockIndex)> = activations
            .iter()
            .zip(indices)
            .filter(|(a, _)| a.was_new)
            .map(|(a, b)| (a.slot as usize, *b))
            .collect();
        if !fresh.is_empty() {
            self.extend_blocks(fresh)?;
        }
        Ok(activations.into_iter().map(|a| BlockHandle(a.slot)).collect())
    }

    pub fn allocate_block(&mut self, b: BlockIndex) -> Result<BlockHandle, GridError> {
        Ok(self.get_or_allocate_blocks(&[b])?[0])
    }

    fn extend_blocks(&mut self, mut fresh: Vec<(usize, BlockIndex)>) -> Result<(), GridError> {
        fresh.sort_unstable();
        let old_blocks = self.blocks.len();
        let new_blocks = old_blocks + fresh.len();
        debug_assert_eq!(fresh.first().map(|f| f.0), Some(old_blocks));
        self.blocks.extend(fresh.iter().map(|f| f.1));

        let per_block = self.config.voxels_per_block();
        let needed = new_blocks * per_block;
        if needed > self.store.capacity() {
            let mut capacity = self.store.capacity();
            while capacity < needed {
                capacity *= 2;
            }
            let mut bigger = RecordStore::new(V::schema(), self.store.layout(), capacity)?;
            self.store.migrate_into(&mut bigger)?;
            self.store = bigger;
        }
        self.store.set_len(needed)?;
        let default = self.default_voxel;
        for i in old_blocks * per_block..needed {
            default.save(&mut self.store, i);
        }
        Ok(())
    }

    #[inline]
    pub fn address(&self, handle: BlockHandle, linear: usize) -> usize {
        handle.0 as usize * self.config.voxels_per_block() + linear
    }

    pub fn get(&self, v: &VoxelIndex) -> Option<V> {
        let handle = self.block_handle(v.block)?;
        Some(self.voxel_at(handle, v.linear(self.config.voxels_per_side)))
    }

    pub fn set(&mut self, v: &VoxelIndex, voxel: V) -> Result<(), GridError> {
        let handle = self.block_handle(v.block).ok_or(GridError::BlockNotAllocated(v.block))?;
        self.set_at(handle, v.linear(self.config.voxels_per_side), voxel);
        Ok(())
    }

    #[inline]
    pub fn voxel_at(&self, handle: BlockHandle, linear: usize) -> V {
        V::load(&self.store, self.address(handle, linear))
    }

    #[inline]
    pub fn set_at(&mut self, handle: BlockHandle, linear: usize, voxel: V) {
        let at = self.address(handle, linear);
        voxel.save(&mut self.store, at);
    }

    /// Voxel at global voxel coordinates, if its block is allocated.
    pub fn get_global(&self, g: GlobalIndex) -> Option<V> {
        self.get(&VoxelIndex::from_global(g, self.config.voxels_per_side))
    }

    /// One mutable chunk per allocated block, ordered by slot.
    pub fn block_chunks_mut(&mut self) -> Vec<RecordChunkMut<'_>> {
        let per_block = self.config.voxels_per_block();
        self.store.chunks_mut(per_block)
    }

    /// Copies the voxels of one block out, in local linear order.
    pub fn block_voxels(&self, handle: BlockHandle) -> Vec<V> {
        (0..self.config.voxels_per_block())
            .map(|l| self.voxel_at(handle, l))
            .collect()
    }

    /// Iterates `(voxel index, voxel)` over every allocated voxel, by slot
    /// and then local linear order.
    pub fn iter_voxels(&self) -> impl Iterator<Item = (VoxelIndex, V)> + '_ {
        let n = self.config.voxels_per_side;
        self.blocks.iter().enumerate().flat_map(move |(slot, &block)| {
            (0..n * n * n).map(move |linear| {
                (
                    VoxelIndex {
                        block,
                        local: local_from_linear(linear, n),
                    },
                    self.voxel_at(BlockHandle(slot as u32), linear),
                )
            })
        })
    }

    /// Same contents stored under a different layout.
    pub fn to_layout(&self, layout: Layout) -> Result<Self, GridError> {
        let mut store = RecordStore::new(V::schema(), layout, self.store.capacity())?;
        self.store.migrate_into(&mut store)?;
        Ok(Self {
            config: self.config,
            map: self.map.clone(),
            store,
            blocks: self.blocks.clone(),
            default_voxel: self.default_voxel,
        })
    }
}

/// Grids hold equal content when they contain the same blocks with the
/// same voxels, irrespective of slot order or layout.
pub fn grids_equal<V: VoxelRecord>(a: &VoxelGrid<V>, b: &VoxelGrid<V>) -> bool {
    if a.config != b.config || a.num_blocks() != b.num_blocks() {
        return false;
    }
    let per_block = a.config.voxels_per_block();
    a.blocks.iter().enumerate().all(|(slot, &block)| {
        let Some(hb) = b.block_handle(block) else {
            return false;
        };
        let ha = BlockHandle(slot as u32);
        (0..per_block).all(|l| a.voxel_at(ha, l) == b.voxel_at(hb, l))
    })
}
