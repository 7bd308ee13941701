//! Pose-graph optimization over submap poses.
//!
//! The cost is half the sum of squared whitened residuals of three kinds
//! of terms: odometry and loop-closure edges (relative-pose measurements
//! with a 4×4 information matrix) and registration edges, where surface
//! points sampled from one submap are looked up in the other submap's ESDF.
//! It is minimized with Levenberg–Marquardt; each damped normal system is
//! solved with conjugate gradient on the sparse Jacobian.

mod cg;
mod field;
mod graph_io;
mod lm;
mod residuals;
mod sparse;

use nalgebra::{Matrix4, Point3};
use rayon::prelude::*;
use thiserror::Error;

use crate::submap::{overlap, RegistrationCandidates, Submap, SubmapPose};

pub use cg::{conjugate_gradient, solve_normal_equations_cg, CgResult, LinearOperator, NormalOperator, CG_TOLERANCE};
pub use field::{interpolate_esdf, DistanceField};
pub use graph_io::{read_pose_graph, write_pose_graph, PoseGraphFile};
pub use lm::{optimize, LmConfig, LmIteration, LmReport, Termination};
pub use residuals::{
    odometry_jacobians, registration_jacobians, residual_odometry, residual_registration, transfer_point,
    RegistrationSample,
};
pub use sparse::{dot, norm, SparseMatrix};

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("invalid pose graph: {0}")]
    InvalidProblem(String),
    #[error("degenerate problem: no residuals")]
    Degenerate,
    #[error("non-finite cost at iteration {0}")]
    NonFiniteCost(usize),
    #[error("pose graph line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Odometry,
    LoopClosure,
    Registration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseGraphEdge {
    pub kind: EdgeKind,
    pub i: usize,
    pub j: usize,
    /// Pose of j in i's frame. Identity for registration edges.
    pub measurement: SubmapPose,
    /// Inverse covariance of relative-pose measurements.
    pub information: Matrix4<f64>,
    /// `σ_R⁻²` for registration edges.
    pub precision: f64,
    /// Points of submap i looked up in submap j's field.
    pub samples: Vec<RegistrationSample>,
}

impl PoseGraphEdge {
    pub fn odometry(i: usize, j: usize, measurement: SubmapPose, information: Matrix4<f64>) -> Self {
        Self {
            kind: EdgeKind::Odometry,
            i,
            j,
            measurement,
            information,
            precision: 0.0,
            samples: Vec::new(),
        }
    }

    pub fn loop_closure(i: usize, j: usize, measurement: SubmapPose, information: Matrix4<f64>) -> Self {
        Self {
            kind: EdgeKind::LoopClosure,
            ..Self::odometry(i, j, measurement, information)
        }
    }

    pub fn registration(i: usize, j: usize, precision: f64, samples: Vec<RegistrationSample>) -> Self {
        Self {
            kind: EdgeKind::Registration,
            i,
            j,
            measurement: SubmapPose::identity(),
            information: Matrix4::zeros(),
            precision,
            samples,
        }
    }
}

/// Diagonal information matrix from standard deviations.
pub fn information_from_sigmas(sigma_xyz: f64, sigma_yaw: f64) -> Matrix4<f64> {
    let t = 1.0 / (sigma_xyz * sigma_xyz);
    Matrix4::from_diagonal(&nalgebra::Vector4::new(t, t, t, 1.0 / (sigma_yaw * sigma_yaw)))
}

/// Poses, edges, and the distance fields registration edges read from.
pub struct PgoProblem<'a> {
    pub poses: Vec<SubmapPose>,
    pub edges: Vec<PoseGraphEdge>,
    /// Field of each pose's submap, needed for poses that are the `j` end of
    /// a registration edge.
    pub fields: Vec<Option<&'a dyn DistanceField>>,
    /// Index of the pose held fixed.
    pub gauge: usize,
}

impl<'a> PgoProblem<'a> {
    pub fn new(poses: Vec<SubmapPose>, edges: Vec<PoseGraphEdge>, gauge: usize) -> Self {
        let n = poses.len();
        Self {
            poses,
            edges,
            fields: vec![None; n],
            gauge,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let n = self.poses.len();
        let bad = |m: String| Err(BackendError::InvalidProblem(m));
        if self.gauge >= n {
            return bad(format!("gauge {} outside {} poses", self.gauge, n));
        }
        if self.fields.len() != n {
            return bad("one field slot per pose required".into());
        }
        for (k, e) in self.edges.iter().enumerate() {
            if e.i >= n || e.j >= n || e.i == e.j {
                return bad(format!("edge {k} joins {} and {}", e.i, e.j));
            }
            match e.kind {
                EdgeKind::Registration => {
                    if !(e.precision > 0.0 && e.precision.is_finite()) {
                        return bad(format!("edge {k} has precision {}", e.precision));
                    }
                    if self.fields[e.j].is_none() {
                        return bad(format!("edge {k} needs the field of pose {}", e.j));
                    }
                }
                _ => {
                    let sym = (e.information - e.information.transpose()).abs().max();
                    if sym > 1e-9 * e.information.abs().max() || e.information.cholesky().is_none() {
                        return bad(format!("edge {k} information is not symmetric positive definite"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Number of optimized parameters (4 per non-gauge pose).
    pub fn dim(&self) -> usize {
        4 * (self.poses.len().saturating_sub(1))
    }

    /// First parameter column of a pose, `None` for the gauge.
    pub fn column(&self, pose: usize) -> Option<usize> {
        match pose.cmp(&self.gauge) {
            std::cmp::Ordering::Less => Some(4 * pose),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(4 * (pose - 1)),
        }
    }

    /// Poses after applying the additive step `delta`.
    pub fn retract(&self, poses: &[SubmapPose], delta: &[f64]) -> Vec<SubmapPose> {
        poses
            .iter()
            .enumerate()
            .map(|(k, p)| match self.column(k) {
                None => *p,
                Some(c) => SubmapPose::new(
                    p.translation.x + delta[c],
                    p.translation.y + delta[c + 1],
                    p.translation.z + delta[c + 2],
                    p.yaw + delta[c + 3],
                ),
            })
            .collect()
    }
}

/// Whitened residuals and Jacobian at one linearization point.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub residuals: Vec<f64>,
    pub jacobian: SparseMatrix,
    /// Registration samples whose transferred point fell outside the field.
    pub dropped_samples: usize,
}

impl Assembly {
    pub fn cost(&self) -> f64 {
        0.5 * dot(&self.residuals, &self.residuals)
    }
}

type Rows = Vec<(f64, Vec<(usize, f64)>)>;

fn edge_rows(problem: &PgoProblem<'_>, poses: &[SubmapPose], e: &PoseGraphEdge, with_jacobian: bool) -> (Rows, usize) {
    let (pi, pj) = (&poses[e.i], &poses[e.j]);
    let (ci, cj) = (problem.column(e.i), problem.column(e.j));
    let mut rows = Vec::new();
    let mut dropped = 0;
    let mut push = |value: f64, di: &[f64], dj: &[f64]| {
        let mut entries = Vec::new();
        if with_jacobian {
            for (col, d) in [(ci, di), (cj, dj)] {
                if let Some(c) = col {
                    entries.extend(d.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(k, v)| (c + k, *v)));
                }
            }
        }
        rows.push((value, entries));
    };
    match e.kind {
        EdgeKind::Odometry | EdgeKind::LoopClosure => {
            let u = e.information.cholesky().expect("validated").l().transpose();
            let (err, ji, jj) = odometry_jacobians(pi, pj, &e.measurement);
            let (r, wi, wj) = (u * err, u * ji, u * jj);
            for k in 0..4 {
                let di: Vec<f64> = wi.row(k).iter().copied().collect();
                let dj: Vec<f64> = wj.row(k).iter().copied().collect();
                push(r[k], &di, &dj);
            }
        }
        EdgeKind::Registration => {
            let field = problem.fields[e.j].expect("validated");
            for s in &e.samples {
                let scale = (s.weight * e.precision).sqrt();
                match registration_jacobians(pi, pj, s, field) {
                    Some((err, di, dj)) => {
                        let di: Vec<f64> = di.iter().map(|v| v * scale).collect();
                        let dj: Vec<f64> = dj.iter().map(|v| v * scale).collect();
                        push(scale * err, &di, &dj);
                    }
                    None => dropped += 1,
                }
            }
        }
    }
    (rows, dropped)
}

fn assemble_at(problem: &PgoProblem<'_>, poses: &[SubmapPose], with_jacobian: bool) -> Result<Assembly, BackendError> {
    let per_edge: Vec<(Rows, usize)> = problem
        .edges
        .par_iter()
        .map(|e| edge_rows(problem, poses, e, with_jacobian))
        .collect();
    let mut residuals = Vec::new();
    let mut rows = Vec::new();
    let mut dropped_samples = 0;
    for (edge, d) in per_edge {
        dropped_samples += d;
        for (r, entries) in edge {
            residuals.push(r);
            rows.push(entries);
        }
    }
    if residuals.is_empty() {
        return Err(BackendError::Degenerate);
    }
    Ok(Assembly {
        residuals,
        jacobian: SparseMatrix::from_rows(problem.dim(), &rows),
        dropped_samples,
    })
}

/// Residual vector and sparse Jacobian at the problem's current poses.
pub fn assemble(problem: &PgoProblem<'_>) -> Result<Assembly, BackendError> {
    problem.validate()?;
    assemble_at(problem, &problem.poses, true)
}

/// Cost `½‖r‖²` at arbitrary poses.
pub fn evaluate_cost(problem: &PgoProblem<'_>, poses: &[SubmapPose]) -> Result<f64, BackendError> {
    Ok(assemble_at(problem, poses, false)?.cost())
}

/// Registration edge from submap `a` (pose `ia`) into the ESDF of pose
/// `ib`, with `count` weight-proportional samples whose weights are
/// normalized to mean 1.
pub fn registration_edge(a: &Submap, ia: usize, ib: usize, count: usize, seed: u64) -> Option<PoseGraphEdge> {
    registration_edge_from(a, &RegistrationCandidates::new(a), ia, ib, count, seed)
}

/// [`registration_edge`] drawing from precomputed candidates of `a`.
pub fn registration_edge_from(
    a: &Submap,
    candidates: &RegistrationCandidates,
    ia: usize,
    ib: usize,
    count: usize,
    seed: u64,
) -> Option<PoseGraphEdge> {
    let drawn = candidates.sample(count, seed);
    if drawn.is_empty() {
        return None;
    }
    let mean = drawn.iter().map(|s| s.1).sum::<f64>() / drawn.len() as f64;
    let samples = drawn
        .into_iter()
        .map(|(point, w)| RegistrationSample {
            point,
            weight: w / mean,
            distance: tsdf_distance(a, &point),
        })
        .collect();
    let vs = a.tsdf.config().voxel_size;
    Some(PoseGraphEdge::registration(ia, ib, 1.0 / (vs * vs), samples))
}

fn tsdf_distance(s: &Submap, p: &Point3<f64>) -> f64 {
    crate::grid::world_to_voxel(p, s.tsdf.config())
        .ok()
        .and_then(|v| s.tsdf.get(&v))
        .map_or(0.0, |v| v.distance as f64)
}

/// Registration edges for every pair of submaps whose world bounding boxes
/// overlap, in both directions.
pub fn overlap_registration_edges(submaps: &[&Submap], count: usize, seed: u64) -> Vec<PoseGraphEdge> {
    let candidates: Vec<RegistrationCandidates> = submaps.iter().map(|s| RegistrationCandidates::new(s)).collect();
    let mut edges = Vec::new();
    for a in 0..submaps.len() {
        for b in a + 1..submaps.len() {
            if !overlap(submaps[a], submaps[b]) {
                continue;
            }
            let pair_seed = seed ^ ((a as u64) << 32 | b as u64);
            edges.extend(registration_edge_from(submaps[a], &candidates[a], a, b, count, pair_seed));
            edges.extend(registration_edge_from(submaps[b], &candidates[b], b, a, count, pair_seed.rotate_left(17)));
        }
    }
    edges
}
