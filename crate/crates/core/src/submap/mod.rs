//! Submaps: locally consistent TSDF/ESDF grids with a 4-DoF pose.

mod aabb;
mod pose;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::esdf::{new_esdf_grid, EsdfConfig, EsdfError, EsdfIntegrator, PropagationStats};
use crate::grid::{block_origin, read_snapshot, voxel_center, write_snapshot, EsdfGrid, GridConfig, GridError, TsdfGrid};
use crate::tsdf::{IntegrationStats, PointCloudFrame, TsdfError, TsdfIntegrator};

pub use aabb::Aabb;
pub use pose::{wrap_angle, SubmapPose};

#[derive(Debug, Error)]
pub enum SubmapError {
    #[error("no submap with id {0}")]
    UnknownSubmap(u32),
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
    #[error(transparent)]
    Tsdf(#[from] TsdfError),
    #[error(transparent)]
    Esdf(#[from] EsdfError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct Submap {
    pub id: u32,
    /// World ← submap.
    pub pose: SubmapPose,
    pub tsdf: TsdfGrid,
    pub esdf: EsdfGrid,
    pub creation_time: f64,
    /// Timestamp of the last integrated frame.
    pub last_time: f64,
    aabb: Aabb,
}

impl Submap {
    pub fn new(id: u32, pose: SubmapPose, grid: GridConfig, esdf: &EsdfConfig, creation_time: f64) -> Result<Self, SubmapError> {
        Ok(Self {
            id,
            pose,
            tsdf: TsdfGrid::new(grid)?,
            esdf: new_esdf_grid(grid, esdf)?,
            creation_time,
            last_time: creation_time,
            aabb: Aabb::empty(),
        })
    }

    pub fn block_count(&self) -> usize {
        self.tsdf.num_blocks()
    }

    /// Bounds of the allocated blocks, in the submap frame.
    pub fn aabb(&self) -> Aabb {
        self.aabb
    }

    pub fn world_aabb(&self) -> Aabb {
        self.aabb.transformed(&self.pose)
    }

    /// Integrates a frame whose sensor pose is given in the submap frame.
    pub fn integrate(&mut self, integrator: &TsdfIntegrator, frame: &PointCloudFrame) -> Result<IntegrationStats, SubmapError> {
        let before = self.tsdf.num_blocks();
        let stats = integrator.integrate_frame(&mut self.tsdf, frame)?;
        self.last_time = self.last_time.max(frame.timestamp);
        let cfg = *self.tsdf.config();
        let edge = Vector3::repeat(cfg.block_size());
        for &b in &self.tsdf.blocks()[before..] {
            let o = block_origin(b, &cfg);
            self.aabb.extend(&o);
            self.aabb.extend(&(o + edge));
        }
        Ok(stats)
    }

    pub fn should_finalize(&self, threshold_blocks: usize) -> bool {
        should_finalize(self, threshold_blocks)
    }

    /// Builds the ESDF from the whole TSDF.
    pub fn finalize_esdf(&mut self, esdf: &EsdfIntegrator) -> Result<PropagationStats, SubmapError> {
        let blocks = self.tsdf.blocks().to_vec();
        let (_, stats) = esdf.update(&self.tsdf, &mut self.esdf, &blocks)?;
        Ok(stats)
    }

    fn recompute_aabb(&mut self) {
        let cfg = *self.tsdf.config();
        let edge = Vector3::repeat(cfg.block_size());
        self.aabb = Aabb::empty();
        for &b in self.tsdf.blocks() {
            let o = block_origin(b, &cfg);
            self.aabb.extend(&o);
            self.aabb.extend(&(o + edge));
        }
    }
}

/// True once the submap holds at least `threshold_blocks` TSDF blocks.
pub fn should_finalize(active: &Submap, threshold_blocks: usize) -> bool {
    assert!(threshold_blocks > 0, "block threshold must be positive");
    active.block_count() >= threshold_blocks
}

/// Whether the world-frame bounding boxes of two submaps intersect.
pub fn overlap(a: &Submap, b: &Submap) -> bool {
    a.world_aabb().intersects(&b.world_aabb())
}

/// Draws up to `count` near-surface voxels without replacement, with
/// probability proportional to their TSDF weight. Returns voxel centers in
/// the submap frame with their weights.
pub fn sample_registration_points(submap: &Submap, count: usize, seed: u64) -> Vec<(Point3<f64>, f64)> {
    RegistrationCandidates::new(submap).sample(count, seed)
}

/// Observed voxels with `|tsdf| < truncation/2`, in global index order.
/// Collecting them once lets several draws share the scan.
#[derive(Debug, Clone, Default)]
pub struct RegistrationCandidates {
    points: Vec<(Point3<f64>, f64)>,
}

impl RegistrationCandidates {
    pub fn new(submap: &Submap) -> Self {
        let cfg = submap.tsdf.config();
        let band = (cfg.truncation_distance / 2.0) as f32;
        let mut c: Vec<_> = submap
            .tsdf
            .iter_voxels()
            .filter(|(_, v)| v.weight > 0.0 && v.distance.abs() < band)
            .map(|(i, v)| (i.to_global(cfg.voxels_per_side), voxel_center(&i, cfg), v.weight as f64))
            .collect();
        c.sort_unstable_by_key(|c| c.0);
        Self {
            points: c.into_iter().map(|c| (c.1, c.2)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn sample(&self, count: usize, seed: u64) -> Vec<(Point3<f64>, f64)> {
        let c = &self.points;
        if c.len() <= count {
            return c.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = rand::seq::index::sample_weighted(&mut rng, c.len(), |i| c[i].1, count)
            .expect("candidate weights are positive")
            .into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| c[i]).collect()
    }
}

/// Ordered submaps; the last one is the active submap.
#[derive(Debug, Clone, Default)]
pub struct SubmapCollection {
    pub submaps: Vec<Submap>,
}

impl SubmapCollection {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.submaps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.submaps.is_empty()
    }

    pub fn active(&self) -> Option<&Submap> {
        self.submaps.last()
    }

    pub fn active_mut(&mut self) -> Option<&mut Submap> {
        self.submaps.last_mut()
    }

    pub fn get(&self, id: u32) -> Option<&Submap> {
        self.submaps.iter().find(|s| s.id == id)
    }

    pub fn push(&mut self, submap: Submap) {
        self.submaps.push(submap);
    }

    pub fn poses(&self) -> Vec<SubmapPose> {
        self.submaps.iter().map(|s| s.pose).collect()
    }

    /// Writes `manifest.txt` plus one TSDF and one ESDF snapshot per submap.
    ///
    /// Manifest lines: `SUBMAP id x y z yaw creation_time last_time blocks
    /// min_x min_y min_z max_x max_y max_z`.
    pub fn save(&self, dir: &Path) -> Result<(), SubmapError> {
        std::fs::create_dir_all(dir)?;
        let mut manifest = BufWriter::new(File::create(dir.join("manifest.txt"))?);
        writeln!(manifest, "# SUBMAP id x y z yaw creation_time last_time blocks min_x min_y min_z max_x max_y max_z")?;
        for s in &self.submaps {
            let [x, y, z, yaw] = s.pose.to_array();
            let b = s.aabb();
            writeln!(
                manifest,
                "SUBMAP {} {x:e} {y:e} {z:e} {yaw:e} {:e} {:e} {} {:e} {:e} {:e} {:e} {:e} {:e}",
                s.id,
                s.creation_time,
                s.last_time,
                s.block_count(),
                b.min.x,
                b.min.y,
                b.min.z,
                b.max.x,
                b.max.y,
                b.max.z
            )?;
            write_snapshot(&s.tsdf, BufWriter::new(File::create(dir.join(format!("submap_{:04}.tsdf", s.id)))?))?;
            write_snapshot(&s.esdf, BufWriter::new(File::create(dir.join(format!("submap_{:04}.esdf", s.id)))?))?;
        }
        manifest.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, SubmapError> {
        let reader = BufReader::new(File::open(dir.join("manifest.txt"))?);
        let mut out = Self::new();
        for (k, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |msg: &str| SubmapError::Manifest {
                line: k + 1,
                msg: msg.to_string(),
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 15 || f[0] != "SUBMAP" {
                return Err(bad("expected SUBMAP record with 14 fields"));
            }
            let id: u32 = f[1].parse().map_err(|_| bad("bad id"))?;
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad("bad number"));
            let pose = SubmapPose::new(num(2)?, num(3)?, num(4)?, num(5)?);
            let tsdf: TsdfGrid = read_snapshot(BufReader::new(File::open(dir.join(format!("submap_{id:04}.tsdf")))?))?;
            let esdf: EsdfGrid = read_snapshot(BufReader::new(File::open(dir.join(format!("submap_{id:04}.esdf")))?))?;
            let blocks: usize = f[8].parse().map_err(|_| bad("bad block count"))?;
            if blocks != tsdf.num_blocks() {
                return Err(bad("block count does not match snapshot"));
            }
            let mut s = Submap {
                id,
                pose,
                tsdf,
                esdf,
                creation_time: num(6)?,
                last_time: num(7)?,
                aabb: Aabb::empty(),
            };
            s.recompute_aabb();
            out.push(s);
        }
        Ok(out)
    }
}
