//! Dataset files, synthetic scenes, trajectory evaluation and exports.
//!
//! A dataset directory holds
//!
//! * `poses.csv`: header `timestamp,x,y,z,yaw`, one odometry pose per frame;
//! * `frames/NNNNNN.bin`: the points of frame `N` in the sensor frame, as a
//!   little-endian `u32` count, `count × 3` `f32` coordinates and optionally
//!   `count × 3` `u8` colors;
//! * `loops.txt` (optional): loop-closure edges between frame indices, in the
//!   pose-graph text format;
//! * `ground_truth.csv` (optional): same layout as `poses.csv`.

mod eval;
mod export;
mod io;
mod synthetic;

use std::path::PathBuf;

pub use eval::{associate, ate_rmse, ASSOCIATION_GAP};
pub use export::{export_esdf_slice, export_surface_points, write_points_csv, EsdfSlice, SurfacePoint};
pub use io::{read_dataset, read_loops, read_trajectory, write_dataset, write_trajectory, DatasetReader, DatasetWriter};
pub use synthetic::{generate_synthetic, Primitive, Scene, SceneGeometry, SensorModel, SyntheticConfig, SyntheticDataset};

use crate::backend::BackendError;
use crate::submap::SubmapPose;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{file}:{line}: {msg}")]
    Parse { file: PathBuf, line: usize, msg: String },
    #[error("{file}: header announces {expected} points but the payload holds {actual} bytes")]
    CountMismatch { file: PathBuf, expected: usize, actual: usize },
    #[error("{file}:{line}: timestamp {timestamp} does not increase")]
    NonIncreasingTimestamp { file: PathBuf, line: usize, timestamp: f64 },
    #[error("no trajectory samples could be associated")]
    NoAssociation,
    #[error("nothing to export: the submap collection is empty")]
    EmptyCollection,
    #[error("frame has {points} points but {colors} colors")]
    ColorCountMismatch { points: usize, colors: usize },
    #[error(transparent)]
    Graph(#[from] BackendError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One sensor frame as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetFrameRecord {
    pub timestamp: f64,
    /// World ← sensor, as reported by odometry.
    pub odometry_pose: SubmapPose,
    /// Points in the sensor frame.
    pub points: Vec<[f32; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
}

/// Timestamped poses with strictly increasing timestamps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<(f64, SubmapPose)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a sample. Panics if `timestamp` does not increase.
    pub fn push(&mut self, timestamp: f64, pose: SubmapPose) {
        if let Some(&(last, _)) = self.samples.last() {
            assert!(timestamp > last, "trajectory timestamps must increase");
        }
        self.samples.push((timestamp, pose));
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

impl FromIterator<(f64, SubmapPose)> for Trajectory {
    fn from_iter<I: IntoIterator<Item = (f64, SubmapPose)>>(iter: I) -> Self {
        let mut t = Trajectory::new();
        for (s, p) in iter {
            t.push(s, p);
        }
        t
    }
}
