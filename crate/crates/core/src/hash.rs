//! Open-addressing hash map from block indices to store slots.
//!
//! Keys are [`BlockIndex`] values packed into 64 bits; values are dense slot
//! numbers handed out in insertion order, so slot `k` is always the `k`-th
//! distinct key. Collisions are resolved by linear probing over a
//! power-of-two table addressed with Fibonacci hashing.
//!
//! [`HashMap3D::activate`] is the batched insert-if-absent used by block
//! allocation. Duplicates in the batch are removed first and new keys are
//! given slots in ascending key order, which makes the key→slot assignment a
//! function of the batch and the map state only.

use std::sync::atomic::{AtomicU32, AtomicU64, Ordering};

use rayon::prelude::*;
use thiserror::Error;

/// Reserved key value marking an empty cell. Packed keys only use the low
/// 63 bits, so no valid index ever maps to it.
pub const EMPTY: u64 = u64::MAX;

const COMPONENT_BITS: u32 = 21;
const COMPONENT_BIAS: i64 = 1 << (COMPONENT_BITS - 1);
const COMPONENT_MASK: u64 = (1 << COMPONENT_BITS) - 1;
const FIBONACCI: u64 = 0x9E37_79B9_7F4A_7C15;
// Batches smaller than this are processed on the calling thread.
const PARALLEL_THRESHOLD: usize = 2048;

/// Default maximum fraction of occupied cells.
pub const DEFAULT_MAX_LOAD: f64 = 0.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HashError {
    #[error("block index component {0} outside [-2^20, 2^20)")]
    ComponentOutOfRange(i64),
    #[error("hash map overflow: {required} keys exceed {limit} allowed at capacity {capacity}")]
    Overflow {
        required: usize,
        limit: usize,
        capacity: usize,
    },
    #[error("invalid max load factor {0}")]
    InvalidLoadFactor(f64),
}

/// Integer coordinates of a block (world position / block edge length, floored).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct BlockIndex {
    pub x: i64,
    pub y: i64,
    pub z: i64,
}

impl BlockIndex {
    pub const fn new(x: i64, y: i64, z: i64) -> Self {
        Self { x, y, z }
    }

    pub fn offset(self, dx: i64, dy: i64, dz: i64) -> Self {
        Self::new(self.x + dx, self.y + dy, self.z + dz)
    }
}

/// Packs a block index into a 63-bit key (21 bits per component, biased).
pub fn pack_key(b: BlockIndex) -> Result<u64, HashError> {
    let mut key = 0u64;
    for (k, c) in [b.x, b.y, b.z].into_iter().enumerate() {
        if !(-COMPONENT_BIAS..COMPONENT_BIAS).contains(&c) {
            return Err(HashError::ComponentOutOfRange(c));
        }
        key |= ((c + COMPONENT_BIAS) as u64) << (COMPONENT_BITS * k as u32);
    }
    Ok(key)
}

pub fn unpack_key(key: u64) -> BlockIndex {
    let part = |k: u32| ((key >> (COMPONENT_BITS * k)) & COMPONENT_MASK) as i64 - COMPONENT_BIAS;
    BlockIndex::new(part(0), part(1), part(2))
}

/// Outcome of activating one key of a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Activation {
    pub slot: u32,
    pub was_new: bool,
}

/// Linear-probing hash map with a fixed, power-of-two capacity.
pub struct HashMap3D {
    keys: Vec<AtomicU64>,
    slots: Vec<AtomicU32>,
    mask: u64,
    shift: u32,
    occupancy: usize,
    max_load: f64,
}

impl std::fmt::Debug for HashMap3D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HashMap3D")
            .field("capacity", &self.capacity())
            .field("occupancy", &self.occupancy)
            .field("max_load", &self.max_load)
            .finish()
    }
}

impl Clone for HashMap3D {
    fn clone(&self) -> Self {
        Self {
            keys: self.keys.iter().map(|k| AtomicU64::new(k.load(Ordering::Relaxed))).collect(),
            slots: self.slots.iter().map(|s| AtomicU32::new(s.load(Ordering::Relaxed))).collect(),
            mask: self.mask,
            shift: self.shift,
            occupancy: self.occupancy,
            max_load: self.max_load,
        }
    }
}

#[inline]
fn home(key: u64, shift: u32) -> u64 {
    key.wrapping_mul(FIBONACCI) >> shift
}

impl HashMap3D {
    /// Creates an empty map. `capacity` is rounded up to a power of two (min 2).
    pub fn new(capacity: usize) -> Self {
        Self::with_max_load(capacity, DEFAULT_MAX_LOAD).expect("default load factor is valid")
    }

    pub fn with_max_load(capacity: usize, max_load: f64) -> Result<Self, HashError> {
        if !(max_load > 0.0 && max_load < 1.0) {
            return Err(HashError::InvalidLoadFactor(max_load));
        }
        let capacity = capacity.max(2).next_power_of_two();
        Ok(Self {
            keys: (0..capacity).map(|_| AtomicU64::new(EMPTY)).collect(),
            slots: (0..capacity).map(|_| AtomicU32::new(0)).collect(),
            mask: capacity as u64 - 1,
            shift: 64 - capacity.trailing_zeros(),
            occupancy: 0,
            max_load,
        })
    }

    pub fn capacity(&self) -> usize {
        self.keys.len()
    }

    pub fn len(&self) -> usize {
        self.occupancy
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy == 0
    }

    pub fn max_load(&self) -> f64 {
        self.max_load
    }

    pub fn load_factor(&self) -> f64 {
        self.occupancy as f64 / self.capacity() as f64
    }

    /// Largest occupancy the current capacity admits.
    pub fn limit(&self) -> usize {
        (self.max_load * self.capacity() as f64).floor() as usize
    }

    fn probe(&self, key: u64) -> Result<usize, usize> {
        let mut cell = home(key, self.shift);
        loop {
            let stored = self.keys[cell as usize].load(Ordering::Relaxed);
            if stored == key {
                return Ok(cell as usize);
            }
            if stored == EMPTY {
                return Err(cell as usize);
            }
            cell = (cell + 1) & self.mask;
        }
    }

    /// Number of cells inspected to locate `index` (1 = found at its home cell).
    pub fn probe_length(&self, index: BlockIndex) -> Option<usize> {
        let key = pack_key(index).ok()?;
        let mut cell = home(key, self.shift);
        let mut steps = 1;
        loop {
            match self.keys[cell as usize].load(Ordering::Relaxed) {
                k if k == key => return Some(steps),
                EMPTY => return None,
                _ => {}
            }
            cell = (cell + 1) & self.mask;
            steps += 1;
        }
    }

    pub fn find(&self, index: BlockIndex) -> Option<u32> {
        let key = pack_key(index).ok()?;
        self.find_key(key)
    }

    #[inline]
    pub fn find_key(&self, key: u64) -> Option<u32> {
        self.probe(key)
            .ok()
            .map(|cell| self.slots[cell].load(Ordering::Relaxed))
    }

    /// Inserts `index` if absent and returns its slot.
    pub fn insert(&mut self, index: BlockIndex) -> Result<u32, HashError> {
        let key = pack_key(index)?;
        self.insert_key(key)
    }

    pub fn insert_key(&mut self, key: u64) -> Result<u32, HashError> {
        match self.probe(key) {
            Ok(cell) => Ok(*self.slots[cell].get_mut()),
            Err(cell) => {
                if self.occupancy + 1 > self.limit() {
                    return Err(self.overflow(self.occupancy + 1));
                }
                let slot = self.occupancy as u32;
                *self.keys[cell].get_mut() = key;
                *self.slots[cell].get_mut() = slot;
                self.occupancy += 1;
                Ok(slot)
            }
        }
    }

    fn overflow(&self, required: usize) -> HashError {
        HashError::Overflow {
            required,
            limit: self.limit(),
            capacity: self.capacity(),
        }
    }

    /// Batched insert-if-absent.
    ///
    /// Returns one [`Activation`] per input key, in input order. Duplicate
    /// keys share a slot and only the first occurrence reports `was_new`.
    /// On overflow the map is left unchanged.
    pub fn activate(&mut self, batch: &[BlockIndex]) -> Result<Vec<Activation>, HashError> {
        let packed: Vec<u64> = if batch.len() >= PARALLEL_THRESHOLD {
            batch.par_iter().map(|b| pack_key(*b)).collect::<Result<_, _>>()?
        } else {
            batch.iter().map(|b| pack_key(*b)).collect::<Result<_, _>>()?
        };

        let mut unique = packed.clone();
        if unique.len() >= PARALLEL_THRESHOLD {
            unique.par_sort_unstable();
        } else {
            unique.sort_unstable();
        }
        unique.dedup();

        let found: Vec<Option<u32>> = if unique.len() >= PARALLEL_THRESHOLD {
            unique.par_iter().map(|k| self.find_key(*k)).collect()
        } else {
            unique.iter().map(|k| self.find_key(*k)).collect()
        };
        let new_count = found.iter().filter(|s| s.is_none()).count();
        if self.occupancy + new_count > self.limit() {
            return Err(self.overflow(self.occupancy + new_count));
        }

        // Slots for new keys follow ascending key order.
        let base = self.occupancy as u32;
        let mut next = base;
        let assigned: Vec<(u64, u32, bool)> = unique
            .iter()
            .zip(&found)
            .map(|(&key, found)| match found {
                Some(slot) => (key, *slot, false),
                None => {
                    let slot = next;
                    next += 1;
                    (key, slot, true)
                }
            })
            .collect();

        let claim = |&(key, slot, is_new): &(u64, u32, bool)| {
            if is_new {
                self.claim_cell(key, slot);
            }
        };
        if new_count >= PARALLEL_THRESHOLD {
            assigned.par_iter().for_each(claim);
        } else {
            assigned.iter().for_each(claim);
        }
        self.occupancy += new_count;

        let mut reported = vec![false; assigned.len()];
        Ok(packed
            .iter()
            .map(|key| {
                let at = unique.binary_search(key).expect("key present after dedup");
                let (_, slot, is_new) = assigned[at];
                let was_new = is_new && !reported[at];
                reported[at] = true;
                Activation { slot, was_new }
            })
            .collect())
    }

    // Claims an empty cell for a key known to be absent. Safe to call from
    // several threads as long as the keys are distinct.
    fn claim_cell(&self, key: u64, slot: u32) {
        let mut cell = home(key, self.shift);
        loop {
            let target = &self.keys[cell as usize];
            if target
                .compare_exchange(EMPTY, key, Ordering::AcqRel, Ordering::Relaxed)
                .is_ok()
            {
                self.slots[cell as usize].store(slot, Ordering::Release);
                return;
            }
            cell = (cell + 1) & self.mask;
        }
    }

    /// Doubles the capacity and re-inserts every key. Slots are preserved.
    pub fn grow(&mut self) {
        let mut bigger = Self::with_max_load(self.capacity() * 2, self.max_load).expect("valid load");
        for (k, s) in self.keys.iter().zip(&self.slots) {
            let key = k.load(Ordering::Relaxed);
            if key != EMPTY {
                bigger.claim_cell(key, s.load(Ordering::Relaxed));
            }
        }
        bigger.occupancy = self.occupancy;
        *self = bigger;
    }

    /// All `(index, slot)` pairs, in cell order.
    pub fn iter(&self) -> impl Iterator<Item = (BlockIndex, u32)> + '_ {
        self.keys
            .iter()
            .zip(&self.slots)
            .filter_map(|(k, s)| {
                let key = k.load(Ordering::Relaxed);
                (key != EMPTY).then(|| (unpack_key(key), s.load(Ordering::Relaxed)))
            })
    }
}
