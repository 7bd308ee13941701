//! Flat binary grid snapshots.
//!
//! ```text
//! magic      4 bytes  "VXMG"
//! version    u32
//! kind       u8       voxel type tag (VoxelRecord::KIND)
//! layout     u8       0 = SoA, 1 = AoS
//! voxel_size f64
//! n          u32      voxels per block side
//! truncation f64
//! default    record   default voxel, fields in schema order
//! blocks     u64
//! then per block, in slot order:
//!   key      u64      packed block index
//!   fields   n³ values of each field, in schema order
//! ```
//!
//! Integers and header floats are little-endian; field payloads are the raw
//! bytes held by the store.

use std::io::{Read, Write};

use super::{GridConfig, GridError, VoxelGrid, VoxelRecord};
use crate::hash::{pack_key, unpack_key};
use crate::soa::{FieldId, Layout, RecordStore};

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"VXMG";
pub const SNAPSHOT_VERSION: u32 = 1;

pub fn write_snapshot<V: VoxelRecord, W: Write>(grid: &VoxelGrid<V>, mut out: W) -> Result<(), GridError> {
    let cfg = grid.config();
    out.write_all(&SNAPSHOT_MAGIC)?;
    out.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    out.write_all(&[V::KIND, matches!(grid.layout(), Layout::Aos) as u8])?;
    out.write_all(&cfg.voxel_size.to_le_bytes())?;
    out.write_all(&(cfg.voxels_per_side as u32).to_le_bytes())?;
    out.write_all(&cfg.truncation_distance.to_le_bytes())?;

    let mut one = RecordStore::new(V::schema(), Layout::Soa, 1)?;
    one.set_len(1)?;
    grid.default_voxel().save(&mut one, 0);
    for k in 0..V::schema().len() {
        out.write_all(one.field_bytes(0, FieldId(k)))?;
    }

    out.write_all(&(grid.num_blocks() as u64).to_le_bytes())?;
    let per_block = cfg.voxels_per_block();
    let store = grid.store();
    let mut buf = Vec::new();
    for (slot, &block) in grid.blocks().iter().enumerate() {
        out.write_all(&pack_key(block)?.to_le_bytes())?;
        let range = slot * per_block..(slot + 1) * per_block;
        for (k, field) in V::schema().fields().iter().enumerate() {
            buf.resize(per_block * field.elem_size, 0);
            store.bulk_read_into(FieldId(k), range.clone(), &mut buf)?;
            out.write_all(&buf)?;
        }
    }
    Ok(())
}

fn read_array<const N: usize>(input: &mut impl Read) -> Result<[u8; N], GridError> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_snapshot<V: VoxelRecord, R: Read>(mut input: R) -> Result<VoxelGrid<V>, GridError> {
    if read_array::<4>(&mut input)? != SNAPSHOT_MAGIC {
        return Err(GridError::Snapshot("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut input)?);
    if version != SNAPSHOT_VERSION {
        return Err(GridError::Snapshot(format!("unsupported version {version}")));
    }
    let [kind, layout] = read_array::<2>(&mut input)?;
    if kind != V::KIND {
        return Err(GridError::Snapshot(format!("voxel kind {kind}, expected {}", V::KIND)));
    }
    let layout = match layout {
        0 => Layout::Soa,
        1 => Layout::Aos,
        other => return Err(GridError::Snapshot(format!("unknown layout {other}"))),
    };
    let voxel_size = f64::from_le_bytes(read_array(&mut input)?);
    let n = u32::from_le_bytes(read_array(&mut input)?) as usize;
    let truncation = f64::from_le_bytes(read_array(&mut input)?);
    let config = GridConfig::new(voxel_size, n, truncation)?;

    let schema = V::schema();
    let mut one = RecordStore::new(schema.clone(), Layout::Soa, 1)?;
    one.set_len(1)?;
    let mut buf = Vec::new();
    for (k, field) in schema.fields().iter().enumerate() {
        buf.resize(field.elem_size, 0);
        input.read_exact(&mut buf)?;
        one.bulk_write_from(FieldId(k), 0..1, &buf)?;
    }
    let default_voxel = V::load(&one, 0);

    let mut grid = VoxelGrid::with_default(config, layout, default_voxel)?;
    let blocks = u64::from_le_bytes(read_array(&mut input)?) as usize;
    let per_block = config.voxels_per_block();
    for slot in 0..blocks {
        let block = unpack_key(u64::from_le_bytes(read_array(&mut input)?));
        let handle = grid.allocate_block(block)?;
        if handle.0 as usize != slot {
            return Err(GridError::Snapshot(format!("duplicate block {block:?}")));
        }
        let range = slot * per_block..(slot + 1) * per_block;
        for (k, field) in schema.fields().iter().enumerate() {
            buf.resize(per_block * field.elem_size, 0);
            input.read_exact(&mut buf)?;
            grid.store.bulk_write_from(FieldId(k), range.clone(), &buf)?;
        }
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(GridError::Snapshot("trailing bytes".into()));
    }
    Ok(grid)
}
