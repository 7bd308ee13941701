//! Layout-switchable record storage.
//!
//! A [`RecordStore`] holds a fixed number of records described by a
//! [`FieldSchema`]. Records are laid out either as a Structure of Arrays
//! (every field in its own contiguous array) or as an Array of Structs
//! (all fields of one record adjacent). The access interface is identical
//! for both layouts; only the offset arithmetic differs, and offsets are
//! resolved once when the store is created.
//!
//! The store never grows in place. Callers that run out of capacity create
//! a larger store and call [`RecordStore::migrate_into`].

use std::ops::Range;

use bytemuck::{Pod, Zeroable};
use thiserror::Error;

/// Largest alignment a field may request. Backing memory is allocated in
/// cache-line sized chunks, so every field array starts on a boundary of at
/// least this size relative to an aligned base.
pub const MAX_ALIGNMENT: usize = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("store capacity must be non-zero")]
    ZeroCapacity,
    #[error("schema has no fields")]
    EmptySchema,
    #[error("field `{0}` is declared more than once")]
    DuplicateField(String),
    #[error("field `{name}` has alignment {alignment}, expected a power of two <= {MAX_ALIGNMENT}")]
    BadAlignment { name: String, alignment: usize },
    #[error("field `{0}` has zero size")]
    ZeroSizedField(String),
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("record {index} out of range (length {length})")]
    IndexOutOfRange { index: usize, length: usize },
    #[error("range {start}..{end} out of bounds (length {length})")]
    RangeOutOfBounds {
        start: usize,
        end: usize,
        length: usize,
    },
    #[error("field `{name}` holds {expected} bytes, got {actual}")]
    SizeMismatch {
        name: String,
        expected: usize,
        actual: usize,
    },
    #[error("length {requested} exceeds capacity {capacity}")]
    CapacityExceeded { requested: usize, capacity: usize },
    #[error("schemas of source and destination stores differ")]
    SchemaMismatch,
}

/// One named field of a record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldDesc {
    pub name: String,
    pub elem_size: usize,
    pub alignment: usize,
}

/// Ordered list of fields making up one record.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FieldSchema {
    fields: Vec<FieldDesc>,
}

impl FieldSchema {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a field with an explicit size and alignment.
    pub fn with_field(mut self, name: &str, elem_size: usize, alignment: usize) -> Self {
        self.fields.push(FieldDesc {
            name: name.to_owned(),
            elem_size,
            alignment,
        });
        self
    }

    /// Appends a field sized and aligned for `T`.
    pub fn with_typed<T: Pod>(self, name: &str) -> Self {
        self.with_field(name, std::mem::size_of::<T>(), std::mem::align_of::<T>())
    }

    pub fn fields(&self) -> &[FieldDesc] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    /// Sum of field sizes, i.e. the unpadded size of one record.
    pub fn record_size(&self) -> usize {
        self.fields.iter().map(|f| f.elem_size).sum()
    }

    pub fn validate(&self) -> Result<(), StoreError> {
        if self.fields.is_empty() {
            return Err(StoreError::EmptySchema);
        }
        for (k, f) in self.fields.iter().enumerate() {
            if f.elem_size == 0 {
                return Err(StoreError::ZeroSizedField(f.name.clone()));
            }
            if !f.alignment.is_power_of_two() || f.alignment > MAX_ALIGNMENT {
                return Err(StoreError::BadAlignment {
                    name: f.name.clone(),
                    alignment: f.alignment,
                });
            }
            if self.fields[..k].iter().any(|g| g.name == f.name) {
                return Err(StoreError::DuplicateField(f.name.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum Layout {
    /// Structure of Arrays.
    #[default]
    Soa,
    /// Array of Structs.
    Aos,
}

/// Index of a field within its schema, resolved once via
/// [`RecordStore::field_id`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FieldId(pub usize);

#[derive(Debug, Clone, Copy)]
struct ResolvedField {
    // SoA: byte offset of the field array. AoS: offset inside the record.
    offset: usize,
    size: usize,
}

#[repr(C, align(64))]
#[derive(Clone, Copy)]
struct CacheLine([u8; MAX_ALIGNMENT]);

// SAFETY: a plain byte array with no padding (size == alignment == 64).
unsafe impl Zeroable for CacheLine {}
// SAFETY: as above; every bit pattern is valid.
unsafe impl Pod for CacheLine {}

fn round_up(value: usize, align: usize) -> usize {
    (value + align - 1) & !(align - 1)
}

/// Fixed-capacity record container with a selectable memory layout.
#[derive(Clone)]
pub struct RecordStore {
    schema: FieldSchema,
    layout: Layout,
    capacity: usize,
    len: usize,
    stride: usize,
    resolved: Vec<ResolvedField>,
    byte_len: usize,
    buf: Vec<CacheLine>,
}

impl std::fmt::Debug for RecordStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RecordStore")
            .field("layout", &self.layout)
            .field("capacity", &self.capacity)
            .field("len", &self.len)
            .field("fields", &self.schema.fields.len())
            .finish()
    }
}

impl RecordStore {
    /// Creates a zero-initialized store with length 0.
    pub fn new(schema: FieldSchema, layout: Layout, capacity: usize) -> Result<Self, StoreError> {
        if capacity == 0 {
            return Err(StoreError::ZeroCapacity);
        }
        schema.validate()?;

        let mut resolved = Vec::with_capacity(schema.len());
        let (stride, byte_len) = match layout {
            Layout::Soa => {
                let mut end = 0;
                for f in schema.fields() {
                    let offset = round_up(end, f.alignment);
                    resolved.push(ResolvedField {
                        offset,
                        size: f.elem_size,
                    });
                    end = offset + f.elem_size * capacity;
                }
                (0, end)
            }
            Layout::Aos => {
                let mut end = 0;
                let mut max_align = 1;
                for f in schema.fields() {
                    let offset = round_up(end, f.alignment);
                    resolved.push(ResolvedField {
                        offset,
                        size: f.elem_size,
                    });
                    end = offset + f.elem_size;
                    max_align = max_align.max(f.alignment);
                }
                let stride = round_up(end, max_align);
                (stride, stride * capacity)
            }
        };

        let lines = byte_len.div_ceil(MAX_ALIGNMENT);
        Ok(Self {
            schema,
            layout,
            capacity,
            len: 0,
            stride,
            resolved,
            byte_len,
            buf: vec![CacheLine([0; MAX_ALIGNMENT]); lines],
        })
    }

    pub fn schema(&self) -> &FieldSchema {
        &self.schema
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Distance in bytes between consecutive records of the same field.
    pub fn field_stride(&self, field: FieldId) -> usize {
        match self.layout {
            Layout::Soa => self.resolved[field.0].size,
            Layout::Aos => self.stride,
        }
    }

    /// Total bytes of backing storage in use (excluding the final padding line).
    pub fn byte_len(&self) -> usize {
        self.byte_len
    }

    pub fn field_id(&self, name: &str) -> Result<FieldId, StoreError> {
        self.schema
            .fields
            .iter()
            .position(|f| f.name == name)
            .map(FieldId)
            .ok_or_else(|| StoreError::UnknownField(name.to_owned()))
    }

    /// Extends or shrinks the length. New records read as zero.
    pub fn set_len(&mut self, len: usize) -> Result<(), StoreError> {
        if len > self.capacity {
            return Err(StoreError::CapacityExceeded {
                requested: len,
                capacity: self.capacity,
            });
        }
        if len > self.len {
            let (old, new) = (self.len, len);
            for k in 0..self.resolved.len() {
                self.zero_records(FieldId(k), old..new);
            }
        }
        self.len = len;
        Ok(())
    }

    /// Appends one zeroed record and returns its index.
    pub fn push_zeroed(&mut self) -> Result<usize, StoreError> {
        let index = self.len;
        self.set_len(index + 1)?;
        Ok(index)
    }

    fn zero_records(&mut self, field: FieldId, records: Range<usize>) {
        match self.layout {
            Layout::Soa => {
                let f = self.resolved[field.0];
                let start = f.offset + records.start * f.size;
                let end = f.offset + records.end * f.size;
                self.bytes_mut()[start..end].fill(0);
            }
            Layout::Aos => {
                for i in records {
                    let at = self.byte_offset(i, field);
                    let size = self.resolved[field.0].size;
                    self.bytes_mut()[at..at + size].fill(0);
                }
            }
        }
    }

    #[inline]
    fn bytes(&self) -> &[u8] {
        &bytemuck::cast_slice(&self.buf)[..self.byte_len]
    }

    #[inline]
    fn bytes_mut(&mut self) -> &mut [u8] {
        let len = self.byte_len;
        &mut bytemuck::cast_slice_mut(&mut self.buf)[..len]
    }

    #[inline]
    fn byte_offset(&self, index: usize, field: FieldId) -> usize {
        let f = self.resolved[field.0];
        match self.layout {
            Layout::Soa => f.offset + index * f.size,
            Layout::Aos => index * self.stride + f.offset,
        }
    }

    fn check_index(&self, index: usize) -> Result<(), StoreError> {
        if index < self.len {
            Ok(())
        } else {
            Err(StoreError::IndexOutOfRange {
                index,
                length: self.len,
            })
        }
    }

    /// Raw bytes of one field of one record.
    pub fn read_field(&self, index: usize, name: &str) -> Result<&[u8], StoreError> {
        let field = self.field_id(name)?;
        self.check_index(index)?;
        Ok(self.field_bytes(index, field))
    }

    pub fn write_field(&mut self, index: usize, name: &str, bytes: &[u8]) -> Result<(), StoreError> {
        let field = self.field_id(name)?;
        self.check_index(index)?;
        let size = self.resolved[field.0].size;
        if bytes.len() != size {
            return Err(StoreError::SizeMismatch {
                name: name.to_owned(),
                expected: size,
                actual: bytes.len(),
            });
        }
        self.field_bytes_mut(index, field).copy_from_slice(bytes);
        Ok(())
    }

    /// Copies field values of a record range into a fresh buffer.
    pub fn bulk_read_field(&self, name: &str, range: Range<usize>) -> Result<Vec<u8>, StoreError> {
        let field = self.field_id(name)?;
        let mut out = vec![0; range.len() * self.resolved[field.0].size];
        self.bulk_read_into(field, range, &mut out)?;
        Ok(out)
    }

    /// Copies field values of a record range into `out`, which must be
    /// exactly `range.len() * elem_size` bytes. Under SoA this is a single
    /// contiguous copy.
    pub fn bulk_read_into(&self, field: FieldId, range: Range<usize>, out: &mut [u8]) -> Result<(), StoreError> {
        self.check_range(&range)?;
        let size = self.resolved[field.0].size;
        if out.len() != range.len() * size {
            return Err(StoreError::SizeMismatch {
                name: self.schema.fields[field.0].name.clone(),
                expected: range.len() * size,
                actual: out.len(),
            });
        }
        match self.layout {
            Layout::Soa => {
                let start = self.byte_offset(range.start, field);
                out.copy_from_slice(&self.bytes()[start..start + out.len()]);
            }
            Layout::Aos => {
                for (dst, i) in out.chunks_exact_mut(size).zip(range) {
                    dst.copy_from_slice(self.field_bytes(i, field));
                }
            }
        }
        Ok(())
    }

    /// Writes consecutive field values from `data` starting at record `range.start`.
    pub fn bulk_write_from(&mut self, field: FieldId, range: Range<usize>, data: &[u8]) -> Result<(), StoreError> {
        self.check_range(&range)?;
        let size = self.resolved[field.0].size;
        if data.len() != range.len() * size {
            return Err(StoreError::SizeMismatch {
                name: self.schema.fields[field.0].name.clone(),
                expected: range.len() * size,
                actual: data.len(),
            });
        }
        match self.layout {
            Layout::Soa => {
                let start = self.byte_offset(range.start, field);
                self.bytes_mut()[start..start + data.len()].copy_from_slice(data);
            }
            Layout::Aos => {
                for (src, i) in data.chunks_exact(size).zip(range) {
                    self.field_bytes_mut(i, field).copy_from_slice(src);
                }
            }
        }
        Ok(())
    }

    fn check_range(&self, range: &Range<usize>) -> Result<(), StoreError> {
        if range.start <= range.end && range.end <= self.len {
            Ok(())
        } else {
            Err(StoreError::RangeOutOfBounds {
                start: range.start,
                end: range.end,
                length: self.len,
            })
        }
    }

    /// Bytes of one field of one record. Panics if `index >= len`.
    #[inline]
    pub fn field_bytes(&self, index: usize, field: FieldId) -> &[u8] {
        assert!(index < self.len, "record {index} out of range ({})", self.len);
        let at = self.byte_offset(index, field);
        &self.bytes()[at..at + self.resolved[field.0].size]
    }

    #[inline]
    pub fn field_bytes_mut(&mut self, index: usize, field: FieldId) -> &mut [u8] {
        assert!(index < self.len, "record {index} out of range ({})", self.len);
        let at = self.byte_offset(index, field);
        let size = self.resolved[field.0].size;
        &mut self.bytes_mut()[at..at + size]
    }

    /// Typed read. Panics on an out-of-range index or a size mismatch
    /// between `T` and the field.
    #[inline]
    pub fn get<T: Pod>(&self, index: usize, field: FieldId) -> T {
        bytemuck::pod_read_unaligned(self.field_bytes(index, field))
    }

    #[inline]
    pub fn set<T: Pod>(&mut self, index: usize, field: FieldId, value: T) {
        self.field_bytes_mut(index, field)
            .copy_from_slice(bytemuck::bytes_of(&value));
    }

    /// Borrow a SoA field array as a typed slice over `0..len`. Returns
    /// `None` for AoS stores or when `T` does not match the field size.
    pub fn field_slice<T: Pod>(&self, field: FieldId) -> Option<&[T]> {
        let f = self.resolved[field.0];
        if self.layout != Layout::Soa || f.size != std::mem::size_of::<T>() {
            return None;
        }
        let bytes = &self.bytes()[f.offset..f.offset + self.len * f.size];
        bytemuck::try_cast_slice(bytes).ok()
    }

    /// Copies every record into `dest`, which may use a different layout
    /// and must have the same schema and at least `len` capacity.
    pub fn migrate_into(&self, dest: &mut RecordStore) -> Result<(), StoreError> {
        if dest.schema != self.schema {
            return Err(StoreError::SchemaMismatch);
        }
        dest.set_len(self.len)?;
        let mut scratch = Vec::new();
        for k in 0..self.resolved.len() {
            let field = FieldId(k);
            scratch.resize(self.len * self.resolved[k].size, 0);
            self.bulk_read_into(field, 0..self.len, &mut scratch)?;
            dest.bulk_write_from(field, 0..self.len, &scratch)?;
        }
        Ok(())
    }

    /// Splits `0..len` into mutable chunks of `records_per_chunk` records
    /// (the last chunk may be shorter). Chunks are disjoint, so they can be
    /// handed to different workers.
    pub fn chunks_mut(&mut self, records_per_chunk: usize) -> Vec<RecordChunkMut<'_>> {
        assert!(records_per_chunk > 0);
        let len = self.len;
        let n_chunks = len.div_ceil(records_per_chunk);
        let layout = self.layout;
        let stride = self.stride;
        let resolved = self.resolved.clone();
        let byte_len = self.byte_len;
        let bytes: &mut [u8] = &mut bytemuck::cast_slice_mut(&mut self.buf)[..byte_len];

        match layout {
            Layout::Soa => {
                // Carve the buffer into one region per field, then chunk each region.
                let mut per_field: Vec<std::slice::ChunksMut<'_, u8>> = Vec::with_capacity(resolved.len());
                let mut rest = bytes;
                let mut consumed = 0;
                for f in &resolved {
                    let (_, tail) = rest.split_at_mut(f.offset - consumed);
                    let (region, tail) = tail.split_at_mut(len * f.size);
                    consumed = f.offset + len * f.size;
                    rest = tail;
                    per_field.push(region.chunks_mut(records_per_chunk * f.size));
                }
                (0..n_chunks)
                    .map(|c| {
                        let arrays = per_field.iter_mut().map(|it| it.next().unwrap()).collect();
                        let start = c * records_per_chunk;
                        RecordChunkMut {
                            start,
                            len: records_per_chunk.min(len - start),
                            sizes: resolved.iter().map(|f| f.size).collect(),
                            data: ChunkData::Soa(arrays),
                        }
                    })
                    .collect()
            }
            Layout::Aos => bytes[..len * stride]
                .chunks_mut(records_per_chunk * stride)
                .enumerate()
                .map(|(c, data)| {
                    let start = c * records_per_chunk;
                    RecordChunkMut {
                        start,
                        len: records_per_chunk.min(len - start),
                        sizes: resolved.iter().map(|f| f.size).collect(),
                        data: ChunkData::Aos {
                            data,
                            stride,
                            offsets: resolved.iter().map(|f| f.offset).collect(),
                        },
                    }
                })
                .collect(),
        }
    }
}

enum ChunkData<'a> {
    Soa(Vec<&'a mut [u8]>),
    Aos {
        data: &'a mut [u8],
        stride: usize,
        offsets: Vec<usize>,
    },
}

/// Mutable view of a contiguous run of records. Indices passed to
/// [`RecordChunkMut::get`] and [`RecordChunkMut::set`] are local to the chunk.
pub struct RecordChunkMut<'a> {
    start: usize,
    len: usize,
    sizes: Vec<usize>,
    data: ChunkData<'a>,
}

impl RecordChunkMut<'_> {
    /// Store index of the first record in this chunk.
    pub fn start(&self) -> usize {
        self.start
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    fn span(&self, local: usize, field: FieldId) -> (usize, usize) {
        assert!(local < self.len);
        let size = self.sizes[field.0];
        match &self.data {
            ChunkData::Soa(_) => (local * size, size),
            ChunkData::Aos { stride, offsets, .. } => (local * stride + offsets[field.0], size),
        }
    }

    #[inline]
    pub fn get<T: Pod>(&self, local: usize, field: FieldId) -> T {
        let (at, size) = self.span(local, field);
        let bytes = match &self.data {
            ChunkData::Soa(arrays) => &arrays[field.0][at..at + size],
            ChunkData::Aos { data, .. } => &data[at..at + size],
        };
        bytemuck::pod_read_unaligned(bytes)
    }

    #[inline]
    pub fn set<T: Pod>(&mut self, local: usize, field: FieldId, value: T) {
        let (at, size) = self.span(local, field);
        let bytes = match &mut self.data {
            ChunkData::Soa(arrays) => &mut arrays[field.0][at..at + size],
            ChunkData::Aos { data, .. } => &mut data[at..at + size],
        };
        bytes.copy_from_slice(bytemuck::bytes_of(&value));
    }
}

/// Typed record access shared by [`RecordStore`] and [`RecordChunkMut`].
pub trait Records {
    fn get<T: Pod>(&self, index: usize, field: FieldId) -> T;
    fn set<T: Pod>(&mut self, index: usize, field: FieldId, value: T);
}

impl Records for RecordStore {
    #[inline]
    fn get<T: Pod>(&self, index: usize, field: FieldId) -> T {
        RecordStore::get(self, index, field)
    }

    #[inline]
    fn set<T: Pod>(&mut self, index: usize, field: FieldId, value: T) {
        RecordStore::set(self, index, field, value)
    }
}

impl Records for RecordChunkMut<'_> {
    #[inline]
    fn get<T: Pod>(&self, index: usize, field: FieldId) -> T {
        RecordChunkMut::get(self, index, field)
    }

    #[inline]
    fn set<T: Pod>(&mut self, index: usize, field: FieldId, value: T) {
        RecordChunkMut::set(self, index, field, value)
    }
}
