//! Two-queue mapping pipeline.
//!
//! A reader thread streams frames into a bounded frame queue. The frontend
//! integrates them into the active submap and, once the submap holds enough
//! blocks, hands it to the backend through a second bounded queue. The
//! backend completes each submap's ESDF and re-optimizes the pose graph of
//! all finalized submaps.
//!
//! Submap boundaries depend only on the frames, and the backend handles
//! submaps strictly in order, so queue sizes change throughput but not
//! results.

mod queue;

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use nalgebra::Point3;

use crate::backend::{
    information_from_sigmas, optimize, registration_edge_from, BackendError, DistanceField, LmConfig, LmReport, PgoProblem,
    PoseGraphEdge,
};
use crate::dataset::{read_dataset, read_loops, DatasetError, DatasetFrameRecord, Trajectory};
use crate::esdf::{EsdfConfig, EsdfIntegrator};
use crate::grid::GridConfig;
use crate::submap::{overlap, RegistrationCandidates, Submap, SubmapCollection, SubmapError, SubmapPose};
use crate::tsdf::{PointCloudFrame, TsdfIntegrator, WeightingScheme};

pub use queue::{BoundedQueue, Closed, OverflowPolicy};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Submap(#[from] SubmapError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub frame_queue_capacity: usize,
    pub submap_queue_capacity: usize,
    pub overflow: OverflowPolicy,
    /// A submap is finalized once it holds this many TSDF blocks.
    pub submap_block_threshold: usize,
    /// Samples per registration edge; zero disables registration edges.
    pub registration_samples: usize,
    pub weighting: WeightingScheme,
    pub grid: GridConfig,
    pub esdf: EsdfConfig,
    pub lm: LmConfig,
    /// Per-frame odometry noise assumed for odometry edges.
    pub odometry_sigma_xyz: f64,
    pub odometry_sigma_yaw: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frame_queue_capacity: 8,
            submap_queue_capacity: 4,
            overflow: OverflowPolicy::Block,
            submap_block_threshold: 512,
            registration_samples: 200,
            weighting: WeightingScheme::default(),
            grid: GridConfig::default(),
            esdf: EsdfConfig::default(),
            // Micrometre steps are far below the map resolution.
            lm: LmConfig {
                step_tolerance: 1e-6,
                ..LmConfig::default()
            },
            odometry_sigma_xyz: 0.01,
            odometry_sigma_yaw: 0.002,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.to_string()));
        if self.frame_queue_capacity == 0 || self.submap_queue_capacity == 0 {
            return bad("queue capacities must be at least 1");
        }
        if self.submap_block_threshold == 0 {
            return bad("submap_block_threshold must be positive");
        }
        if !(self.odometry_sigma_xyz > 0.0 && self.odometry_sigma_yaw > 0.0) {
            return bad("odometry sigmas must be positive");
        }
        self.grid.validate().map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        self.esdf
            .validate(&self.grid)
            .map_err(|e| PipelineError::InvalidConfig(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrameCounts {
    /// Items read from the dataset, including unreadable ones.
    pub frames_in: usize,
    pub frames_integrated: usize,
    /// Unreadable or unintegrable frames.
    pub frames_skipped: usize,
    /// Frames evicted from a full frame queue.
    pub frames_dropped: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTiming {
    pub count: usize,
    pub total: Duration,
    pub max: Duration,
}

impl StageTiming {
    fn add(&mut self, d: Duration) {
        self.count += 1;
        self.total += d;
        self.max = self.max.max(d);
    }

    pub fn mean(&self) -> Duration {
        if self.count == 0 {
            Duration::ZERO
        } else {
            self.total / self.count as u32
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TimingStats {
    pub integrate: StageTiming,
    pub esdf: StageTiming,
    pub registration: StageTiming,
    pub optimize: StageTiming,
    pub wall: Duration,
}

impl TimingStats {
    pub fn stages(&self) -> [(&'static str, StageTiming); 4] {
        [
            ("integrate", self.integrate),
            ("esdf", self.esdf),
            ("registration", self.registration),
            ("optimize", self.optimize),
        ]
    }

    /// `stage,count,total_s,mean_s,max_s` rows plus a `wall` row.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "stage,count,total_s,mean_s,max_s")?;
        for (name, t) in self.stages() {
            writeln!(
                out,
                "{name},{},{:.6},{:.6},{:.6}",
                t.count,
                t.total.as_secs_f64(),
                t.mean().as_secs_f64(),
                t.max.as_secs_f64()
            )?;
        }
        let w = self.wall.as_secs_f64();
        writeln!(out, "wall,1,{w:.6},{w:.6},{w:.6}")
    }
}

#[derive(Debug)]
pub struct MappingResult {
    pub collection: SubmapCollection,
    /// Frame poses from the optimized submap poses.
    pub trajectory: Trajectory,
    /// Frame poses as reported by odometry.
    pub odometry: Trajectory,
    pub counts: FrameCounts,
    /// One report per backend optimization.
    pub reports: Vec<LmReport>,
    pub timing: TimingStats,
}

impl MappingResult {
    pub fn backend_runs(&self) -> usize {
        self.reports.len()
    }
}

/// A frame placed in a submap.
#[derive(Debug, Clone, Copy)]
struct FrameSlot {
    index: usize,
    timestamp: f64,
    /// Submap ← sensor.
    local: SubmapPose,
}

struct SealedSubmap {
    submap: Submap,
    /// Odometry pose at creation (world ← submap before optimization).
    anchor: SubmapPose,
    first_frame: usize,
    frames: Vec<FrameSlot>,
}

/// Maps a dataset directory.
pub fn run_dataset(dir: &Path, config: &PipelineConfig) -> Result<MappingResult, PipelineError> {
    let loops = read_loops(dir)?;
    let reader = read_dataset(dir)?;
    run(reader, &loops, config)
}

/// Maps a stream of frames. `loops` are loop closures between frame
/// indices (positions in the stream, counting unreadable items).
pub fn run<I>(frames: I, loops: &[PoseGraphEdge], config: &PipelineConfig) -> Result<MappingResult, PipelineError>
where
    I: Iterator<Item = Result<DatasetFrameRecord, DatasetError>> + Send,
{
    config.validate()?;
    let start = Instant::now();
    let frame_queue = BoundedQueue::new(config.frame_queue_capacity, config.overflow);
    let submap_queue = BoundedQueue::new(config.submap_queue_capacity, OverflowPolicy::Block);
    let timing = Mutex::new(TimingStats::default());

    let (read_counts, front, back) = std::thread::scope(|s| {
        let reader = s.spawn(|| {
            let mut counts = FrameCounts::default();
            for (index, item) in frames.enumerate() {
                counts.frames_in += 1;
                match item {
                    Ok(frame) => {
                        if let Ok(Some(_)) = frame_queue.push((index, frame)) {
                            counts.frames_dropped += 1;
                        }
                    }
                    Err(e) => {
                        log::warn!("skipping frame {index}: {e}");
                        counts.frames_skipped += 1;
                    }
                }
            }
            frame_queue.close();
            counts
        });
        let frontend = s.spawn(|| {
            let out = frontend(config, &frame_queue, &submap_queue, &timing);
            // Unblock the reader and the backend whatever happened.
            frame_queue.close();
            submap_queue.close();
            out
        });
        let backend = s.spawn(|| {
            let out = backend(config, loops, &submap_queue, &timing);
            submap_queue.close();
            while submap_queue.pop().is_some() {}
            out
        });
        (
            reader.join().expect("reader thread panicked"),
            frontend.join().expect("frontend thread panicked"),
            backend.join().expect("backend thread panicked"),
        )
    });
    let (integrated, skipped) = front?;
    let (collection, sealed, reports) = back?;

    let poses = collection.poses();
    let mut slots: Vec<(FrameSlot, usize)> = sealed
        .iter()
        .enumerate()
        .flat_map(|(k, s)| s.frames.iter().map(move |f| (*f, k)))
        .collect();
    slots.sort_by_key(|s| s.0.index);
    let trajectory = slots
        .iter()
        .map(|(f, k)| (f.timestamp, poses[*k].compose(&f.local)))
        .collect();
    let odometry = slots
        .iter()
        .map(|(f, k)| (f.timestamp, sealed[*k].anchor.compose(&f.local)))
        .collect();

    let mut timing = timing.into_inner().unwrap();
    timing.wall = start.elapsed();
    let counts = FrameCounts {
        frames_integrated: integrated,
        frames_skipped: read_counts.frames_skipped + skipped,
        ..read_counts
    };
    debug_assert_eq!(counts.frames_in, counts.frames_integrated + counts.frames_skipped + counts.frames_dropped);
    Ok(MappingResult {
        collection,
        trajectory,
        odometry,
        counts,
        reports,
        timing,
    })
}

/// Returns `(integrated, skipped)` frame counts.
fn frontend(
    config: &PipelineConfig,
    frames: &BoundedQueue<(usize, DatasetFrameRecord)>,
    submaps: &BoundedQueue<SealedSubmap>,
    timing: &Mutex<TimingStats>,
) -> Result<(usize, usize), PipelineError> {
    let integrator = TsdfIntegrator::new(config.weighting);
    let mut active: Option<SealedSubmap> = None;
    let mut next_id = 0u32;
    let (mut integrated, mut skipped) = (0, 0);
    let mut last_timestamp = f64::NEG_INFINITY;
    while let Some((index, record)) = frames.pop() {
        if record.timestamp <= last_timestamp {
            log::warn!("skipping frame {index}: timestamp {} does not increase", record.timestamp);
            skipped += 1;
            continue;
        }
        if active
            .as_ref()
            .is_some_and(|a| a.submap.should_finalize(config.submap_block_threshold))
        {
            if submaps.push(active.take().unwrap()).is_err() {
                return Ok((integrated, skipped));
            }
        }
        let current = match &mut active {
            Some(a) => a,
            None => {
                let pose = record.odometry_pose;
                let submap = Submap::new(next_id, pose, config.grid, &config.esdf, record.timestamp)?;
                next_id += 1;
                active.insert(SealedSubmap {
                    submap,
                    anchor: pose,
                    first_frame: index,
                    frames: Vec::new(),
                })
            }
        };
        let local = current.anchor.between(&record.odometry_pose);
        let frame = PointCloudFrame {
            timestamp: record.timestamp,
            sensor_pose: local.to_isometry(),
            points: record
                .points
                .iter()
                .map(|p| Point3::new(p[0] as f64, p[1] as f64, p[2] as f64))
                .collect(),
            colors: record.colors,
        };
        let t = Instant::now();
        let result = current.submap.integrate(&integrator, &frame);
        timing.lock().unwrap().integrate.add(t.elapsed());
        match result {
            Ok(_) => {
                integrated += 1;
                last_timestamp = record.timestamp;
                current.frames.push(FrameSlot {
                    index,
                    timestamp: record.timestamp,
                    local,
                });
            }
            Err(e) => {
                log::warn!("skipping frame {index}: {e}");
                skipped += 1;
            }
        }
    }
    if let Some(a) = active.filter(|a| !a.frames.is_empty()) {
        let _ = submaps.push(a);
    }
    Ok((integrated, skipped))
}

/// What the backend keeps about each submap's frames.
struct SubmapFrames {
    anchor: SubmapPose,
    frames: Vec<FrameSlot>,
}

type BackendOutput = (SubmapCollection, Vec<SubmapFrames>, Vec<LmReport>);

fn backend(
    config: &PipelineConfig,
    loops: &[PoseGraphEdge],
    queue: &BoundedQueue<SealedSubmap>,
    timing: &Mutex<TimingStats>,
) -> Result<BackendOutput, PipelineError> {
    let esdf = EsdfIntegrator::new(config.esdf);
    let mut sealed: Vec<SealedSubmap> = Vec::new();
    let mut reports = Vec::new();
    let mut frame_home: HashMap<usize, (usize, SubmapPose)> = HashMap::new();
    let mut registration_cache: HashMap<(usize, usize), Option<PoseGraphEdge>> = HashMap::new();
    let mut candidates: Vec<RegistrationCandidates> = Vec::new();

    while let Some(mut next) = queue.pop() {
        let t = Instant::now();
        next.submap.finalize_esdf(&esdf)?;
        timing.lock().unwrap().esdf.add(t.elapsed());
        let k = sealed.len();
        if let Some(prev) = sealed.last() {
            // Start from the optimized previous pose plus odometry.
            next.submap.pose = prev.submap.pose.compose(&prev.anchor.between(&next.anchor));
        }
        for f in &next.frames {
            frame_home.insert(f.index, (k, f.local));
        }
        if config.registration_samples > 0 {
            candidates.push(RegistrationCandidates::new(&next.submap));
        }
        sealed.push(next);
        if sealed.len() < 2 {
            continue;
        }

        let mut edges = Vec::new();
        for w in 1..sealed.len() {
            let (a, b) = (&sealed[w - 1], &sealed[w]);
            let steps = (b.first_frame - a.first_frame).max(1) as f64;
            let info = information_from_sigmas(
                config.odometry_sigma_xyz * steps.sqrt(),
                config.odometry_sigma_yaw * steps.sqrt(),
            );
            edges.push(PoseGraphEdge::odometry(w - 1, w, a.anchor.between(&b.anchor), info));
        }
        for l in loops {
            let (Some(&(a, li)), Some(&(b, lj))) = (frame_home.get(&l.i), frame_home.get(&l.j)) else {
                continue;
            };
            if a != b {
                let m = li.compose(&l.measurement).compose(&lj.inverse());
                edges.push(PoseGraphEdge { i: a, j: b, measurement: m, ..l.clone() });
            }
        }
        if config.registration_samples > 0 {
            let t = Instant::now();
            for a in 0..sealed.len() {
                for b in a + 1..sealed.len() {
                    if !overlap(&sealed[a].submap, &sealed[b].submap) {
                        continue;
                    }
                    let seed = config.seed ^ ((a as u64) << 32 | b as u64);
                    for (from, to, seed) in [(a, b, seed), (b, a, seed.rotate_left(17))] {
                        let e = registration_cache
                            .entry((from, to))
                            .or_insert_with(|| {
                                registration_edge_from(
                                    &sealed[from].submap,
                                    &candidates[from],
                                    from,
                                    to,
                                    config.registration_samples,
                                    seed,
                                )
                            });
                        edges.extend(e.clone());
                    }
                }
            }
            timing.lock().unwrap().registration.add(t.elapsed());
        }

        let mut problem = PgoProblem::new(sealed.iter().map(|s| s.submap.pose).collect(), edges, 0);
        problem.fields = sealed
            .iter()
            .map(|s| Some(&s.submap.esdf as &dyn DistanceField))
            .collect();
        let t = Instant::now();
        let (poses, report) = optimize(&problem, &config.lm)?;
        timing.lock().unwrap().optimize.add(t.elapsed());
        log::info!(
            "submaps={} edges={} cost {:.4e} -> {:.4e} in {} iterations ({:?})",
            sealed.len(),
            problem.edges.len(),
            report.initial_cost,
            report.final_cost,
            report.iterations.len(),
            report.termination
        );
        drop(problem);
        for (s, p) in sealed.iter_mut().zip(poses) {
            s.submap.pose = p;
        }
        reports.push(report);
    }

    let mut collection = SubmapCollection::new();
    let mut meta = Vec::with_capacity(sealed.len());
    for s in sealed {
        collection.push(s.submap);
        meta.push(SubmapFrames {
            anchor: s.anchor,
            frames: s.frames,
        });
    }
    Ok((collection, meta, reports))
}
