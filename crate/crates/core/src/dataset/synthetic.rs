//! Simulated range scans of analytic scenes with exact ground truth.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Point3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DatasetFrameRecord, Trajectory};
use crate::backend::{information_from_sigmas, PoseGraphEdge};
use crate::submap::SubmapPose;

/// Rays starting closer than this to a surface ignore it.
const MIN_HIT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    /// Points with `normal · x = offset`.
    Plane { normal: Vector3<f64>, offset: f64 },
    /// Solid axis-aligned box.
    Box { min: Point3<f64>, max: Point3<f64> },
}

impl Primitive {
    fn axis_box(min: [f64; 3], max: [f64; 3]) -> Self {
        Primitive::Box {
            min: min.into(),
            max: max.into(),
        }
    }

    fn axis_plane(axis: usize, offset: f64) -> Self {
        let mut normal = Vector3::zeros();
        normal[axis] = 1.0;
        Primitive::Plane { normal, offset }
    }

    /// Distance along `dir` to the first hit in front of `origin`.
    pub fn intersect(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<f64> {
        match self {
            Primitive::Plane { normal, offset } => {
                let denom = normal.dot(dir);
                if denom == 0.0 {
                    return None;
                }
                let t = (offset - normal.dot(&origin.coords)) / denom;
                (t > MIN_HIT).then_some(t)
            }
            Primitive::Box { min, max } => {
                let (mut near, mut far) = (f64::NEG_INFINITY, f64::INFINITY);
                for a in 0..3 {
                    if dir[a] == 0.0 {
                        if origin[a] < min[a] || origin[a] > max[a] {
                            return None;
                        }
                        continue;
                    }
                    let t1 = (min[a] - origin[a]) / dir[a];
                    let t2 = (max[a] - origin[a]) / dir[a];
                    near = near.max(t1.min(t2));
                    far = far.min(t1.max(t2));
                }
                (near <= far && near > MIN_HIT).then_some(near)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneGeometry {
    pub primitives: Vec<Primitive>,
}

impl SceneGeometry {
    /// Nearest hit as `(distance, primitive index)`.
    pub fn cast(&self, origin: &Point3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
        self.primitives
            .iter()
            .enumerate()
            .filter_map(|(k, p)| p.intersect(origin, dir).map(|t| (t, k)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// Scans from `pose` (world ← sensor). Returns hit points in the sensor
    /// frame with the index of the primitive they lie on.
    pub fn scan(&self, pose: &SubmapPose, sensor: &SensorModel) -> Vec<(Point3<f64>, usize)> {
        let origin = Point3::from(pose.translation);
        sensor
            .directions()
            .into_iter()
            .filter_map(|d| {
                let (t, k) = self.cast(&origin, &pose.rotate(&d))?;
                (t <= sensor.max_range).then(|| (Point3::from(d * t), k))
            })
            .collect()
    }
}

/// A spinning multi-beam range sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorModel {
    pub azimuth_rays: usize,
    pub elevation_rays: usize,
    /// Horizontal field of view, centered on the x axis (radians).
    pub horizontal_fov: f64,
    /// Vertical field of view, centered on the horizon (radians).
    pub vertical_fov: f64,
    pub max_range: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            azimuth_rays: 240,
            elevation_rays: 12,
            horizontal_fov: TAU,
            vertical_fov: 30f64.to_radians(),
            max_range: 10.0,
        }
    }
}

impl SensorModel {
    /// Unit ray directions in the sensor frame.
    pub fn directions(&self) -> Vec<Vector3<f64>> {
        let mut out = Vec::with_capacity(self.azimuth_rays * self.elevation_rays);
        for j in 0..self.elevation_rays {
            let e = if self.elevation_rays > 1 {
                -0.5 * self.vertical_fov + self.vertical_fov * j as f64 / (self.elevation_rays - 1) as f64
            } else {
                0.0
            };
            for k in 0..self.azimuth_rays {
                let a = -0.5 * self.horizontal_fov + self.horizontal_fov * (k as f64 + 0.5) / self.azimuth_rays as f64;
                out.push(Vector3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin()));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scene {
    /// A rectangular corridor loop around a central block.
    Corridor,
    /// An elliptic path inside a furnished room.
    Room,
    /// A circular path around a single pillar in a square room.
    Circle,
}

impl std::str::FromStr for Scene {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "corridor" => Ok(Scene::Corridor),
            "room" => Ok(Scene::Room),
            "circle" => Ok(Scene::Circle),
            _ => Err(format!("unknown scene '{s}' (corridor, room, circle)")),
        }
    }
}

const SENSOR_HEIGHT: f64 = 1.0;
const CEILING: f64 = 3.0;

// Corridor centerline: rounded rectangle with these half extents.
const CORRIDOR_A: f64 = 5.0;
const CORRIDOR_B: f64 = 3.0;
const CORRIDOR_R: f64 = 1.0;

impl Scene {
    pub fn geometry(self) -> SceneGeometry {
        let mut p = vec![Primitive::axis_plane(2, 0.0), Primitive::axis_plane(2, CEILING)];
        let pillar = |x: f64, y: f64, hx: f64, hy: f64| Primitive::axis_box([x - hx, y - hy, 0.0], [x + hx, y + hy, CEILING]);
        match self {
            Scene::Corridor => {
                p.extend([
                    Primitive::axis_plane(0, -6.0),
                    Primitive::axis_plane(0, 6.0),
                    Primitive::axis_plane(1, -4.0),
                    Primitive::axis_plane(1, 4.0),
                    Primitive::axis_box([-4.0, -2.0, 0.0], [4.0, 2.0, CEILING]),
                ]);
                // Wall features, so no stretch of the corridor is a bare tube.
                p.extend([
                    pillar(-3.0, -3.8, 0.2, 0.2),
                    pillar(0.5, -3.8, 0.3, 0.2),
                    pillar(3.5, -3.85, 0.2, 0.15),
                    pillar(-2.0, 3.8, 0.25, 0.2),
                    pillar(1.5, 3.8, 0.2, 0.2),
                    pillar(4.5, 3.85, 0.3, 0.15),
                    pillar(5.8, -1.0, 0.2, 0.25),
                    pillar(5.8, 1.5, 0.2, 0.2),
                    pillar(-5.8, -2.0, 0.2, 0.2),
                    pillar(-5.8, 0.8, 0.2, 0.3),
                    pillar(-1.3, -2.15, 0.2, 0.15),
                    pillar(2.2, 2.15, 0.2, 0.15),
                    pillar(4.15, -0.3, 0.15, 0.2),
                    pillar(-4.15, 0.7, 0.15, 0.2),
                ]);
            }
            Scene::Room => {
                p.extend([
                    Primitive::axis_plane(0, -5.0),
                    Primitive::axis_plane(0, 5.0),
                    Primitive::axis_plane(1, -4.0),
                    Primitive::axis_plane(1, 4.0),
                    Primitive::axis_box([-0.8, -0.5, 0.0], [0.8, 0.5, 0.75]),
                    Primitive::axis_box([3.8, 2.5, 0.0], [4.8, 3.8, 2.0]),
                    Primitive::axis_box([-4.6, -3.6, 0.0], [-3.6, -2.4, 1.2]),
                    pillar(-4.0, 3.0, 0.3, 0.3),
                ]);
            }
            Scene::Circle => {
                p.extend([
                    Primitive::axis_plane(0, -5.0),
                    Primitive::axis_plane(0, 5.0),
                    Primitive::axis_plane(1, -5.0),
                    Primitive::axis_plane(1, 5.0),
                    Primitive::axis_box([-0.5, -0.5, 0.0], [0.5, 0.5, 2.0]),
                ]);
            }
        }
        SceneGeometry { primitives: p }
    }

    /// Ground-truth pose at lap fraction `s` (any real; one lap per unit).
    pub fn path_pose(self, s: f64) -> SubmapPose {
        let s = s.rem_euclid(1.0);
        let (x, y, heading) = match self {
            Scene::Corridor => rounded_rectangle(s, CORRIDOR_A, CORRIDOR_B, CORRIDOR_R),
            Scene::Room => {
                let th = TAU * s;
                let (a, b) = (3.0, 2.0);
                (a * th.cos(), b * th.sin(), (b * th.cos()).atan2(-a * th.sin()))
            }
            Scene::Circle => {
                let th = TAU * s;
                let r = 2.5;
                (r * th.cos(), r * th.sin(), th + FRAC_PI_2)
            }
        };
        SubmapPose::new(x, y, SENSOR_HEIGHT, heading)
    }
}

/// Counter-clockwise walk along a rectangle with half extents `a`, `b`
/// and rounded corners of radius `r`, starting at the middle of the bottom
/// side. Returns `(x, y, heading)`.
fn rounded_rectangle(s: f64, a: f64, b: f64, r: f64) -> (f64, f64, f64) {
    let (sx, sy, arc) = (2.0 * (a - r), 2.0 * (b - r), FRAC_PI_2 * r);
    let mut d = s * (2.0 * sx + 2.0 * sy + 4.0 * arc);
    // Straight from the bottom middle; shifting by half a side keeps the
    // segment list uniform.
    d += 0.5 * sx;
    let sides = [(sx, 0.0), (sy, FRAC_PI_2), (sx, PI), (sy, -FRAC_PI_2)];
    let corners = [(a - r, -b + r), (a - r, b - r), (-a + r, b - r), (-a + r, -b + r)];
    let starts = [(-a + r, -b), (a, -b + r), (a - r, b), (-a, b - r)];
    loop {
        for k in 0..4 {
            let (len, heading) = sides[k];
            if d <= len {
                let (x0, y0) = starts[k];
                return (x0 + d * heading.cos(), y0 + d * heading.sin(), heading);
            }
            d -= len;
            if d <= arc {
                let phi = heading - FRAC_PI_2 + d / r;
                let (cx, cy) = corners[k];
                return (cx + r * phi.cos(), cy + r * phi.sin(), phi + FRAC_PI_2);
            }
            d -= arc;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub scene: Scene,
    /// Per-frame odometry noise (meters, radians).
    pub sigma_xyz: f64,
    pub sigma_yaw: f64,
    pub n_frames: usize,
    pub seed: u64,
    pub sensor: SensorModel,
    pub laps: f64,
    /// Seconds between frames.
    pub frame_period: f64,
    /// Revisits closer than this emit a loop closure.
    pub loop_radius: f64,
    /// Minimum frame-index gap for a revisit.
    pub loop_min_gap: usize,
    /// Minimum frame-index gap between two emitted loop closures.
    pub loop_spacing: usize,
    pub colors: bool,
}

impl SyntheticConfig {
    pub fn new(scene: Scene, noise: (f64, f64), n_frames: usize, seed: u64) -> Self {
        Self {
            scene,
            sigma_xyz: noise.0,
            sigma_yaw: noise.1,
            n_frames,
            seed,
            sensor: SensorModel::default(),
            laps: 2.0,
            frame_period: 0.1,
            loop_radius: 1.0,
            loop_min_gap: 30,
            loop_spacing: 10,
            colors: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub frames: Vec<DatasetFrameRecord>,
    pub ground_truth: Trajectory,
    /// Loop closures between frame indices, measured exactly.
    pub loops: Vec<PoseGraphEdge>,
}

impl SyntheticDataset {
    pub fn write(&self, dir: &std::path::Path) -> Result<(), super::DatasetError> {
        super::write_dataset(dir, &self.frames, Some(&self.loops), Some(&self.ground_truth))
    }

    /// Odometry poses as a trajectory.
    pub fn odometry(&self) -> Trajectory {
        self.frames.iter().map(|f| (f.timestamp, f.odometry_pose)).collect()
    }
}

fn palette(k: usize) -> [u8; 3] {
    let k = k as u32;
    [(80 + 37 * k) as u8, (40 + 91 * k) as u8, (160 + 53 * k) as u8]
}

/// Generates a dataset with the default sensor and path settings.
pub fn generate_synthetic(scene: Scene, noise: (f64, f64), n_frames: usize, seed: u64) -> SyntheticDataset {
    SyntheticConfig::new(scene, noise, n_frames, seed).generate()
}

impl SyntheticConfig {
    pub fn generate(&self) -> SyntheticDataset {
        assert!(self.sigma_xyz >= 0.0 && self.sigma_yaw >= 0.0, "noise must be non-negative");
        let geometry = self.scene.geometry();
        let gt: Vec<SubmapPose> = (0..self.n_frames)
            .map(|k| self.scene.path_pose(self.laps * k as f64 / self.n_frames as f64))
            .collect();

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let xyz = Normal::new(0.0, self.sigma_xyz).expect("finite sigma");
        let yaw = Normal::new(0.0, self.sigma_yaw).expect("finite sigma");
        let noiseless = self.sigma_xyz == 0.0 && self.sigma_yaw == 0.0;
        let mut odometry: Vec<SubmapPose> = Vec::with_capacity(gt.len());
        for k in 0..gt.len() {
            let pose = if k == 0 || noiseless {
                gt[k]
            } else {
                let step = gt[k - 1].between(&gt[k]);
                let n = SubmapPose::new(xyz.sample(&mut rng), xyz.sample(&mut rng), xyz.sample(&mut rng), yaw.sample(&mut rng));
                odometry[k - 1].compose(&step).compose(&n)
            };
            odometry.push(pose);
        }

        let frames: Vec<DatasetFrameRecord> = (0..gt.len())
            .map(|k| {
                let hits = geometry.scan(&gt[k], &self.sensor);
                DatasetFrameRecord {
                    timestamp: k as f64 * self.frame_period,
                    odometry_pose: odometry[k],
                    points: hits.iter().map(|(p, _)| [p.x as f32, p.y as f32, p.z as f32]).collect(),
                    colors: self.colors.then(|| hits.iter().map(|h| palette(h.1)).collect()),
                }
            })
            .collect::<Vec<_>>();

        let info = information_from_sigmas(0.01, 0.002);
        let mut loops = Vec::new();
        let mut last_loop: Option<usize> = None;
        for j in self.loop_min_gap..gt.len() {
            if last_loop.is_some_and(|l| j < l + self.loop_spacing) {
                continue;
            }
            let best = (0..=j - self.loop_min_gap)
                .map(|i| (i, (gt[i].translation - gt[j].translation).norm()))
                .filter(|c| c.1 < self.loop_radius)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((i, _)) = best {
                loops.push(PoseGraphEdge::loop_closure(i, j, gt[i].between(&gt[j]), info));
                last_loop = Some(j);
            }
        }

        SyntheticDataset {
            ground_truth: frames.iter().zip(&gt).map(|(f, p)| (f.timestamp, *p)).collect(),
            frames,
            loops,
        }
    }
}
