use crate::soa::{FieldId, FieldSchema, Records};

/// A voxel type that can live in a [`RecordStore`](crate::soa::RecordStore).
///
/// Fields are addressed by their position in [`VoxelRecord::schema`], so
/// no name lookup happens on the access path.
pub trait VoxelRecord: Copy + PartialEq + std::fmt::Debug + Send + Sync + 'static {
    /// Tag written into grid snapshots.
    const KIND: u8;

    fn schema() -> FieldSchema;
    fn load<R: Records + ?Sized>(records: &R, index: usize) -> Self;
    fn save<R: Records + ?Sized>(&self, records: &mut R, index: usize);
}

/// Truncated signed distance voxel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TsdfVoxel {
    /// Signed distance to the surface in meters, positive on the sensor side.
    pub distance: f32,
    /// Accumulated integration weight; zero means never observed.
    pub weight: f32,
    pub color: [u8; 3],
}

impl TsdfVoxel {
    pub fn is_observed(&self) -> bool {
        self.weight > 0.0
    }
}

const DISTANCE: FieldId = FieldId(0);
const WEIGHT: FieldId = FieldId(1);
const COLOR: FieldId = FieldId(2);
const FLAGS: FieldId = FieldId(1);

impl VoxelRecord for TsdfVoxel {
    const KIND: u8 = 1;

    fn schema() -> FieldSchema {
        FieldSchema::new()
            .with_typed::<f32>("distance")
            .with_typed::<f32>("weight")
            .with_field("color", 4, 1)
    }

    #[inline]
    fn load<R: Records + ?Sized>(records: &R, index: usize) -> Self {
        let [r, g, b, _]: [u8; 4] = records.get(index, COLOR);
        Self {
            distance: records.get(index, DISTANCE),
            weight: records.get(index, WEIGHT),
            color: [r, g, b],
        }
    }

    #[inline]
    fn save<R: Records + ?Sized>(&self, records: &mut R, index: usize) {
        records.set(index, DISTANCE, self.distance);
        records.set(index, WEIGHT, self.weight);
        let [r, g, b] = self.color;
        records.set(index, COLOR, [r, g, b, 0u8]);
    }
}

/// Euclidean signed distance voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsdfVoxel {
    /// Signed distance in meters. Unobserved voxels hold the maximal distance.
    pub distance: f32,
    pub observed: bool,
    /// Distance copied from the TSDF truncation band; never altered by propagation.
    pub fixed: bool,
}

impl EsdfVoxel {
    pub fn unobserved(max_distance: f32) -> Self {
        Self {
            distance: max_distance,
            observed: false,
            fixed: false,
        }
    }
}

impl VoxelRecord for EsdfVoxel {
    const KIND: u8 = 2;

    fn schema() -> FieldSchema {
        FieldSchema::new()
            .with_typed::<f32>("distance")
            .with_typed::<u8>("flags")
    }

    #[inline]
    fn load<R: Records + ?Sized>(records: &R, index: usize) -> Self {
        let flags: u8 = records.get(index, FLAGS);
        Self {
            distance: records.get(index, DISTANCE),
            observed: flags & 1 != 0,
            fixed: flags & 2 != 0,
        }
    }

    #[inline]
    fn save<R: Records + ?Sized>(&self, records: &mut R, index: usize) {
        records.set(index, DISTANCE, self.distance);
        records.set(index, FLAGS, self.observed as u8 | (self.fixed as u8) << 1);
    }
}
