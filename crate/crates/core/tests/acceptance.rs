//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Runs without the libtest harness so criteria
//! execute one after another and their timings do not interfere.

mod common;

use std::alloc::{GlobalAlloc, Layout as AllocLayout, System};
use std::cell::Cell;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix4, Point3, Vector3};
use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestRunner};
use rand::Rng;
use voxmap::backend::{
    assemble, conjugate_gradient, information_from_sigmas, optimize, DistanceField, LmConfig, PgoProblem,
    PoseGraphEdge, RegistrationSample,
};
use voxmap::bench::{hash_stress, sphere_frame, tsdf_benchmark};
use voxmap::dataset::{ate_rmse, generate_synthetic, Scene, Trajectory};
use voxmap::esdf::{brute_force_esdf, EsdfConfig, EsdfIntegrator};
use voxmap::grid::{global_center, grids_equal, GlobalIndex, GridConfig, TsdfGrid, TsdfVoxel, VoxelIndex};
use voxmap::hash::{BlockIndex, HashMap3D};
use voxmap::pipeline::{run, PipelineConfig};
use voxmap::soa::{FieldId, FieldSchema, Layout, RecordStore};
use voxmap::submap::SubmapPose;
use voxmap::tsdf::{TsdfIntegrator, WeightingScheme};

use common::{compare_with_oracle, free_space, random_frame, rng, set_voxel, TsdfOracle};

// Counts allocations made by the current thread while counting is on.
struct CountingAlloc;

thread_local! {
    static COUNTING: Cell<bool> = const { Cell::new(false) };
    static ALLOCATIONS: Cell<usize> = const { Cell::new(0) };
}

unsafe impl GlobalAlloc for CountingAlloc {
    unsafe fn alloc(&self, layout: AllocLayout) -> *mut u8 {
        note_alloc();
        System.alloc(layout)
    }
    unsafe fn dealloc(&self, ptr: *mut u8, layout: AllocLayout) {
        System.dealloc(ptr, layout)
    }
    unsafe fn alloc_zeroed(&self, layout: AllocLayout) -> *mut u8 {
        note_alloc();
        System.alloc_zeroed(layout)
    }
    unsafe fn realloc(&self, ptr: *mut u8, layout: AllocLayout, new_size: usize) -> *mut u8 {
        note_alloc();
        System.realloc(ptr, layout, new_size)
    }
}

fn note_alloc() {
    let _ = COUNTING.try_with(|c| {
        if c.get() {
            let _ = ALLOCATIONS.try_with(|a| a.set(a.get() + 1));
        }
    });
}

#[global_allocator]
static GLOBAL: CountingAlloc = CountingAlloc;

fn count_allocations<R>(f: impl FnOnce() -> R) -> (R, usize) {
    ALLOCATIONS.with(|a| a.set(0));
    COUNTING.with(|c| c.set(true));
    let r = f();
    COUNTING.with(|c| c.set(false));
    (r, ALLOCATIONS.with(|a| a.get()))
}

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit_s: f64, start: Instant) -> Result<f64, String> {
    let t = start.elapsed().as_secs_f64();
    ensure(t < limit_s, || format!("took {t:.1} s, limit {limit_s} s"))?;
    Ok(t)
}

// 1
fn tsdf_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let (mut max_d, mut max_w, mut frames, mut points) = (0.0f64, 0.0f64, 0, 0);
    // Ten sequences of five frames, each sequence on its own grid geometry.
    for _ in 0..10 {
        let vs = [0.1, 0.15, 0.2][r.random_range(0..3)];
        let vps = [8, 16][r.random_range(0..2)];
        let config = GridConfig::new(vs, vps, vs * r.random_range(2.0..4.0)).unwrap();
        let weighting = if r.random_bool(0.5) {
            WeightingScheme::Constant
        } else {
            WeightingScheme::inverse_square()
        };
        let mut grid = TsdfGrid::new(config).unwrap();
        let mut oracle = TsdfOracle::new(config, weighting);
        let integrator = TsdfIntegrator::new(weighting);
        for _ in 0..5 {
            let frame = random_frame(&mut r, 20_000);
            points += frame.points.len();
            integrator.integrate_frame(&mut grid, &frame).map_err(|e| e.to_string())?;
            oracle.integrate(&frame);
            let (d, w) = compare_with_oracle(&grid, &oracle)?;
            max_d = max_d.max(d);
            max_w = max_w.max(w);
            frames += 1;
        }
    }
    ensure(max_d <= 1e-6, || format!("distance error {max_d:.3e} > 1e-6"))?;
    ensure(max_w <= 1e-6, || format!("weight error {max_w:.3e} > 1e-6"))?;
    let t = within(60.0, start)?;
    Ok(format!(
        "{frames} frames, {points} points; max |Δd| {max_d:.1e}, max rel |Δw| {max_w:.1e}; {t:.1} s"
    ))
}

// 2
fn tsdf_determinism() -> Outcome {
    let mut r = rng(2);
    let config = GridConfig::new(0.05, 8, 0.15).unwrap();
    let prior = random_frame(&mut r, 20_000);
    let frame = random_frame(&mut r, 20_000);
    let integrate = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut g = TsdfGrid::new(config).unwrap();
            let integrator = TsdfIntegrator::new(WeightingScheme::inverse_square());
            integrator.integrate_frame(&mut g, &prior).unwrap();
            integrator.integrate_frame(&mut g, &frame).unwrap();
            g
        })
    };
    let base = integrate(1);
    for t in [2, 4, 8] {
        let other = integrate(t);
        ensure(base.blocks() == other.blocks(), || format!("block order differs with {t} workers"))?;
        let same_bits = base
            .iter_voxels()
            .zip(other.iter_voxels())
            .all(|((i, a), (j, b))| i == j && a.distance.to_bits() == b.distance.to_bits() && a.weight.to_bits() == b.weight.to_bits() && a.color == b.color);
        ensure(same_bits && grids_equal(&base, &other), || format!("grid differs with {t} workers"))?;
    }
    Ok(format!("{} blocks identical across 1, 2, 4, 8 workers", base.num_blocks()))
}

// 3
struct EsdfScenario {
    tsdf: TsdfGrid,
    boxes: Vec<([i64; 3], [i64; 3])>,
    points: Vec<GlobalIndex>,
}

const SIDE: i64 = 48;

impl EsdfScenario {
    fn config() -> GridConfig {
        GridConfig::new(0.1, 8, 0.25).unwrap()
    }

    fn paint_box(&mut self, lo: [i64; 3], hi: [i64; 3], present: bool) -> Vec<BlockIndex> {
        let cfg = *self.tsdf.config();
        let trunc = cfg.truncation_distance;
        let mut touched = Vec::new();
        for z in lo[2] - 3..=hi[2] + 3 {
            for y in lo[1] - 3..=hi[1] + 3 {
                for x in lo[0] - 3..=hi[0] + 3 {
                    if [x, y, z].iter().any(|&c| !(0..SIDE).contains(&c)) {
                        continue;
                    }
                    let g = [x, y, z];
                    let d = if present {
                        // Signed distance to the box's faces (voxel centers
                        // of the box span lo..=hi).
                        let c = global_center(g, cfg.voxel_size);
                        let a = global_center(lo, cfg.voxel_size) - Vector3::repeat(cfg.voxel_size / 2.0);
                        let b = global_center(hi, cfg.voxel_size) + Vector3::repeat(cfg.voxel_size / 2.0);
                        let q = (0..3).map(|k| (a[k] - c[k]).max(c[k] - b[k])).collect::<Vec<_>>();
                        let outside = Vector3::new(q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)).norm();
                        let inside = q[0].max(q[1]).max(q[2]).min(0.0);
                        (outside + inside).clamp(-trunc, trunc) as f32
                    } else {
                        trunc as f32
                    };
                    touched.push(set_voxel(&mut self.tsdf, g, d, 1.0));
                }
            }
        }
        touched
    }

    fn random_box(r: &mut impl Rng) -> ([i64; 3], [i64; 3]) {
        let lo = [0, 1, 2].map(|_| r.random_range(2..SIDE - 12));
        let hi = [0, 1, 2].map(|k| lo[k] + r.random_range(1..9));
        (lo, hi)
    }
}

fn check_esdf(s: &EsdfScenario, esdf: &voxmap::grid::EsdfGrid, integ: &EsdfIntegrator) -> Result<(), String> {
    let fresh = integ.rebuild(&s.tsdf).map_err(|e| e.to_string())?;
    if !grids_equal(esdf, &fresh) {
        let oracle = brute_force_esdf(&s.tsdf, &integ.config).map_err(|e| e.to_string())?;
        let diffs: Vec<_> = esdf
            .iter_voxels()
            .zip(fresh.iter_voxels())
            .filter(|((_, a), (_, b))| a != b)
            .map(|((vi, a), (_, b))| (vi.to_global(8), a.distance, b.distance, oracle.get(vi.to_global(8))))
            .collect();
        return Err(format!("incremental differs from rebuild at {} voxels, e.g. {:?}", diffs.len(), &diffs[..diffs.len().min(4)]));
    }
    let oracle = brute_force_esdf(&s.tsdf, &integ.config).map_err(|e| e.to_string())?;
    for (vi, v) in fresh.iter_voxels() {
        let g = vi.to_global(8);
        let o = oracle.get(g).ok_or("oracle does not cover the grid")?;
        ensure(v.distance == o, || format!("voxel {g:?}: propagated {} vs oracle {o}", v.distance))?;
    }
    Ok(())
}

fn esdf_incremental() -> Outcome {
    let start = Instant::now();
    let mut r = rng(3);
    let cfg = EsdfScenario::config();
    let integ = EsdfIntegrator::new(EsdfConfig { max_distance: 1.5 });
    let (mut stages, mut worst_dev) = (0, 0.0f64);
    for _ in 0..20 {
        let mut s = EsdfScenario {
            tsdf: free_space(cfg, SIDE / 8),
            boxes: Vec::new(),
            points: Vec::new(),
        };
        let mut esdf = integ.rebuild(&s.tsdf).map_err(|e| e.to_string())?;

        // Stage 1: isolated point sources; also measured against true
        // Euclidean distance.
        let mut touched = Vec::new();
        for _ in 0..r.random_range(1..5) {
            let g = [0, 1, 2].map(|_| r.random_range(4..SIDE - 4));
            s.points.push(g);
            touched.push(set_voxel(&mut s.tsdf, g, 0.0, 1.0));
        }
        integ.update(&s.tsdf, &mut esdf, &touched).map_err(|e| e.to_string())?;
        check_esdf(&s, &esdf, &integ)?;
        let cap = integ.config.max_distance as f64;
        for (vi, v) in esdf.iter_voxels() {
            let g = vi.to_global(8);
            if v.fixed || v.distance as f64 >= cap {
                continue;
            }
            let c = global_center(g, cfg.voxel_size);
            let e = s
                .points
                .iter()
                .map(|p| (global_center(*p, cfg.voxel_size) - c).norm())
                .fold(f64::INFINITY, f64::min);
            if e < cap / 1.1 {
                worst_dev = worst_dev.max(v.distance as f64 / e - 1.0);
            }
        }
        stages += 1;

        // Stage 2: solid boxes and an unobserved pocket.
        let mut touched = Vec::new();
        for _ in 0..r.random_range(1..4) {
            let (lo, hi) = EsdfScenario::random_box(&mut r);
            s.boxes.push((lo, hi));
            touched.extend(s.paint_box(lo, hi, true));
        }
        let hole = [0, 1, 2].map(|_| r.random_range(0..SIDE - 6));
        for z in 0..5 {
            for y in 0..5 {
                for x in 0..5 {
                    touched.push(set_voxel(&mut s.tsdf, [hole[0] + x, hole[1] + y, hole[2] + z], 0.0, 0.0));
                }
            }
        }
        integ.update(&s.tsdf, &mut esdf, &touched).map_err(|e| e.to_string())?;
        check_esdf(&s, &esdf, &integ)?;
        stages += 1;

        // Stage 3: remove a box and a point source.
        let mut touched = Vec::new();
        let (lo, hi) = s.boxes.remove(r.random_range(0..s.boxes.len()));
        touched.extend(s.paint_box(lo, hi, false));
        let p = s.points.remove(0);
        touched.push(set_voxel(&mut s.tsdf, p, cfg.truncation_distance as f32, 1.0));
        integ.update(&s.tsdf, &mut esdf, &touched).map_err(|e| e.to_string())?;
        check_esdf(&s, &esdf, &integ)?;
        stages += 1;

        // Stage 4: add one more box.
        let (lo, hi) = EsdfScenario::random_box(&mut r);
        let touched = s.paint_box(lo, hi, true);
        integ.update(&s.tsdf, &mut esdf, &touched).map_err(|e| e.to_string())?;
        check_esdf(&s, &esdf, &integ)?;
        stages += 1;
    }
    ensure(worst_dev <= 0.077, || format!("Euclidean overestimate {:.2}% > 7.7%", 100.0 * worst_dev))?;
    let t = within(120.0, start)?;
    Ok(format!(
        "20 scenarios, {stages} staged updates exact; worst Euclidean overestimate {:.2}%; {t:.1} s",
        100.0 * worst_dev
    ))
}

// 4
struct SmoothField;

impl DistanceField for SmoothField {
    fn sample(&self, p: &Point3<f64>) -> Option<(f64, Vector3<f64>)> {
        let c = Vector3::new(0.3, -0.2, 0.1);
        let v = p.coords - c;
        let r = v.norm();
        let (s, co) = (1.3 * p.x).sin_cos();
        let (s2, c2) = (0.7 * p.y).sin_cos();
        let value = r - 1.5 + 0.2 * s * c2 + 0.1 * p.z;
        let grad = v / r + Vector3::new(0.2 * 1.3 * co * c2, -0.2 * 0.7 * s * s2, 0.1);
        Some((value, grad))
    }
}

fn random_pose(r: &mut impl Rng, extent: f64) -> SubmapPose {
    SubmapPose::new(
        r.random_range(-extent..extent),
        r.random_range(-extent..extent),
        r.random_range(-1.0..1.0),
        r.random_range(-3.1..3.1),
    )
}

fn random_information(r: &mut impl Rng) -> Matrix4<f64> {
    let a = Matrix4::from_fn(|_, _| r.random_range(-1.0..1.0));
    let d = information_from_sigmas(r.random_range(0.01..0.2), r.random_range(0.005..0.1));
    a * a.transpose() + d
}

fn jacobian_error(problem: &mut PgoProblem<'_>) -> Result<f64, String> {
    let analytic = assemble(problem).map_err(|e| e.to_string())?.jacobian.to_dense();
    let base = problem.poses.clone();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for col in 0..problem.dim() {
        let mut delta = vec![0.0; problem.dim()];
        delta[col] = h;
        problem.poses = problem.retract(&base, &delta);
        let plus = assemble(problem).map_err(|e| e.to_string())?.residuals;
        delta[col] = -h;
        problem.poses = problem.retract(&base, &delta);
        let minus = assemble(problem).map_err(|e| e.to_string())?.residuals;
        problem.poses = base.clone();
        for row in 0..analytic.nrows() {
            let fd = (plus[row] - minus[row]) / (2.0 * h);
            let a = analytic[(row, col)];
            let scale = a.abs().max(fd.abs()).max(1e-2 * analytic.row(row).amax());
            if scale > 0.0 {
                worst = worst.max((a - fd).abs() / scale);
            }
        }
    }
    Ok(worst)
}

fn jacobians() -> Outcome {
    let mut r = rng(4);
    let field = SmoothField;
    let mut worst = [0.0f64; 3];
    for config in 0..100 {
        let pi = random_pose(&mut r, 3.0);
        let pj = random_pose(&mut r, 3.0);
        let noise = SubmapPose::new(
            r.random_range(-0.1..0.1),
            r.random_range(-0.1..0.1),
            r.random_range(-0.1..0.1),
            r.random_range(-0.2..0.2),
        );
        let m = pi.between(&pj) * noise;
        let samples: Vec<RegistrationSample> = (0..10)
            .map(|_| RegistrationSample {
                point: Point3::new(r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-1.0..1.0)),
                weight: r.random_range(0.2..2.0),
                distance: r.random_range(-0.2..0.2),
            })
            .collect();
        let edges = [
            PoseGraphEdge::odometry(0, 1, m, random_information(&mut r)),
            PoseGraphEdge::loop_closure(1, 0, m.inverse(), random_information(&mut r)),
            PoseGraphEdge::registration(0, 1, r.random_range(1.0..100.0), samples),
        ];
        // A third, unconnected pose carries the gauge so both ends of the
        // edge are free.
        let gauge_pose = random_pose(&mut r, 1.0);
        for (k, e) in edges.into_iter().enumerate() {
            let mut p = PgoProblem::new(vec![pi, pj, gauge_pose], vec![e], 2);
            p.fields[1] = Some(&field);
            let err = jacobian_error(&mut p).map_err(|e| format!("configuration {config}: {e}"))?;
            worst[k] = worst[k].max(err);
        }
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    ensure(max < 1e-4, || format!("relative error odometry {:.1e}, loop {:.1e}, registration {:.1e}", worst[0], worst[1], worst[2]))?;
    Ok(format!(
        "100 configurations; max relative error odometry {:.1e}, loop {:.1e}, registration {:.1e}",
        worst[0], worst[1], worst[2]
    ))
}

// 5
fn cg_vs_dense() -> Outcome {
    let mut r = rng(5);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = r.random_range(1..=200);
        let b = DMatrix::from_fn(n, n, |_, _| r.random_range(-1.0..1.0));
        let a = &b * b.transpose() / n as f64 + DMatrix::identity(n, n) * r.random_range(0.01..1.0);
        let rhs = DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0));
        let exact = a.clone().cholesky().ok_or("matrix not SPD")?.solve(&rhs);
        let cg = conjugate_gradient(&a, rhs.as_slice(), 1e-12, None);
        let err = (DVector::from_vec(cg.x) - &exact).norm() / exact.norm();
        worst = worst.max(err);
    }
    ensure(worst <= 1e-6, || format!("relative error {worst:.2e} > 1e-6"))?;
    Ok(format!("50 systems, max relative error {worst:.2e}"))
}

// 6
fn pgo_circle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(6);
    let n = 20;
    let gt: Vec<SubmapPose> = (0..n)
        .map(|k| {
            let th = std::f64::consts::TAU * k as f64 / n as f64;
            SubmapPose::new(5.0 * th.cos(), 5.0 * th.sin(), 0.0, th + std::f64::consts::FRAC_PI_2)
        })
        .collect();
    let (sx, sy) = (0.05, 0.01);
    let normal = |r: &mut rand_chacha::ChaCha8Rng, s: f64| -> f64 {
        rand_distr::Distribution::sample(&rand_distr::Normal::new(0.0, s).unwrap(), r)
    };
    let info = information_from_sigmas(sx, sy);
    let mut edges = Vec::new();
    let mut odom = vec![gt[0]];
    for k in 1..n {
        let noise = SubmapPose::new(normal(&mut r, sx), normal(&mut r, sx), normal(&mut r, sx), normal(&mut r, sy));
        let m = gt[k - 1].between(&gt[k]) * noise;
        edges.push(PoseGraphEdge::odometry(k - 1, k, m, info));
        odom.push(odom[k - 1] * m);
    }
    edges.push(PoseGraphEdge::loop_closure(n - 1, 0, gt[n - 1].between(&gt[0]), info));
    let problem = PgoProblem::new(odom.clone(), edges, 0);
    let (opt, report) = optimize(&problem, &LmConfig::default()).map_err(|e| e.to_string())?;

    let traj = |p: &[SubmapPose]| p.iter().enumerate().map(|(k, p)| (k as f64, *p)).collect::<Trajectory>();
    let gt_t = traj(&gt);
    let ate_odom = ate_rmse(&traj(&odom), &gt_t, false).map_err(|e| e.to_string())?;
    let ate_opt = ate_rmse(&traj(&opt), &gt_t, false).map_err(|e| e.to_string())?;
    let costs = report.accepted_costs();
    ensure(ate_opt < 0.5 * ate_odom, || format!("ATE {ate_opt:.4} not below half of {ate_odom:.4}"))?;
    ensure(report.final_cost < 0.1 * report.initial_cost, || {
        format!("cost {:.3e} -> {:.3e}", report.initial_cost, report.final_cost)
    })?;
    ensure(costs.windows(2).all(|w| w[1] <= w[0]), || format!("accepted costs increase: {costs:?}"))?;
    let t = within(10.0, start)?;
    Ok(format!(
        "ATE {ate_odom:.4} -> {ate_opt:.4} m, cost {:.2e} -> {:.2e} over {} accepted steps; {t:.2} s",
        report.initial_cost,
        report.final_cost,
        costs.len() - 1
    ))
}

// 7
fn corridor_loop() -> Outcome {
    let start = Instant::now();
    let data = generate_synthetic(Scene::Corridor, (0.01, 0.002), 200, 7);
    let mut cfg = PipelineConfig::default();
    cfg.grid = GridConfig::new(0.05, 8, 0.15).unwrap();
    cfg.submap_block_threshold = 1500;
    cfg.esdf.max_distance = 1.0;
    let result = run(data.frames.iter().cloned().map(Ok), &data.loops, &cfg).map_err(|e| e.to_string())?;
    let pre = ate_rmse(&result.odometry, &data.ground_truth, false).map_err(|e| e.to_string())?;
    let post = ate_rmse(&result.trajectory, &data.ground_truth, false).map_err(|e| e.to_string())?;
    let bound = 3.0 * cfg.grid.voxel_size;
    ensure(post < pre && post < bound, || format!("ATE {pre:.4} -> {post:.4} m (bound {bound} m)"))?;
    Ok(format!(
        "{} frames, {} submaps, {} loops; ATE {pre:.4} -> {post:.4} m (< {bound:.2}); {:.1} s",
        data.frames.len(),
        result.collection.len(),
        data.loops.len(),
        start.elapsed().as_secs_f64()
    ))
}

// 8
fn hash_behavior() -> Outcome {
    let start = Instant::now();
    // Model-based check with duplicate-heavy batches.
    let mut r = rng(8);
    let mut map = HashMap3D::with_max_load(1 << 21, 0.85).map_err(|e| e.to_string())?;
    let mut model = std::collections::HashMap::new();
    let mut inserted = 0;
    while inserted < 1_000_000 {
        let batch: Vec<BlockIndex> = (0..4096)
            .map(|_| BlockIndex::new(r.random_range(-200..200), r.random_range(-200..200), r.random_range(-40..40)))
            .collect();
        let out = map.activate(&batch).map_err(|e| e.to_string())?;
        for (k, a) in batch.iter().zip(out) {
            let expect_new = !model.contains_key(k);
            let slot = *model.entry(*k).or_insert(a.slot);
            if slot != a.slot {
                return Err(format!("{k:?} moved from slot {slot} to {}", a.slot));
            }
            if a.was_new && !expect_new {
                return Err(format!("{k:?} reported new twice"));
            }
        }
        inserted += batch.len();
    }
    ensure(map.len() == model.len(), || format!("{} keys in map, {} in model", map.len(), model.len()))?;
    ensure(model.iter().all(|(k, s)| map.find(*k) == Some(*s)), || "a key is not findable".into())?;
    ensure(map.iter().count() == model.len(), || "iteration disagrees with the model".into())?;

    let half = hash_stress(1_000_000, 0.5, 8).map_err(|e| e.to_string())?;
    let high = hash_stress(1_000_000, 0.85, 8).map_err(|e| e.to_string())?;
    ensure(half.all_found && high.all_found, || "stress run lost keys".into())?;
    let ratio = high.mean_ns / half.mean_ns;
    ensure(ratio <= 3.0, || format!("latency ratio {ratio:.2} > 3"))?;
    let t = within(30.0, start)?;
    Ok(format!(
        "{} distinct keys model-checked; mean insert {:.0} ns @0.50 ({} keys), {:.0} ns @0.85 ({} keys), ratio {ratio:.2}; {t:.1} s",
        model.len(),
        half.mean_ns,
        half.n,
        high.mean_ns,
        high.n
    ))
}

// 9
fn tsdf_scaling() -> Outcome {
    let grid = GridConfig::new(0.05, 8, 0.15).unwrap();
    let threads = [rayon::current_num_threads()];
    let measure = |n: usize| tsdf_benchmark(&sphere_frame(n, 5.0, 9), grid, &threads, 7).map(|v| v[0]);
    let small = measure(2_000).map_err(|e| e.to_string())?;
    // Grow the frame until it touches at least four times as many voxels.
    let mut n = 8_000;
    let mut large = measure(n).map_err(|e| e.to_string())?;
    for _ in 0..6 {
        let ratio = large.touched_voxels as f64 / small.touched_voxels as f64;
        if ratio >= 4.0 {
            break;
        }
        n = (n as f64 * 4.0 / ratio * 1.02).ceil() as usize;
        large = measure(n).map_err(|e| e.to_string())?;
    }
    let voxels = large.touched_voxels as f64 / small.touched_voxels as f64;
    let time = large.seconds / small.seconds;
    ensure(voxels >= 4.0, || format!("could not reach 4x touched voxels ({voxels:.2}x)"))?;
    ensure(time <= 5.0, || format!("time grew {time:.2}x for {voxels:.2}x voxels"))?;
    Ok(format!(
        "touched voxels {} -> {} ({voxels:.2}x), time {:.1} -> {:.1} ms ({time:.2}x, exponent {:.2})",
        small.touched_voxels,
        large.touched_voxels,
        1e3 * small.seconds,
        1e3 * large.seconds,
        time.ln() / voxels.ln()
    ))
}

// 10
#[derive(Debug, Clone)]
enum Op {
    Write { index: usize, field: usize, seed: u64 },
    Read { index: usize, field: usize },
    BulkRead { field: usize, start: usize, len: usize },
    BulkWrite { field: usize, start: usize, len: usize, seed: u64 },
    SetLen(usize),
    Push,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0..80usize, 0..6usize, any::<u64>()).prop_map(|(index, field, seed)| Op::Write { index, field, seed }),
        3 => (0..80usize, 0..6usize).prop_map(|(index, field)| Op::Read { index, field }),
        1 => (0..6usize, 0..80usize, 0..40usize).prop_map(|(field, start, len)| Op::BulkRead { field, start, len }),
        1 => (0..6usize, 0..80usize, 0..40usize, any::<u64>())
            .prop_map(|(field, start, len, seed)| Op::BulkWrite { field, start, len, seed }),
        1 => (0..80usize).prop_map(Op::SetLen),
        1 => Just(Op::Push),
    ]
}

fn script() -> impl Strategy<Value = (Vec<(usize, usize)>, usize, Vec<Op>)> {
    (
        prop::collection::vec((1..13usize, 0..7u32), 1..5).prop_map(|f| f.into_iter().map(|(s, a)| (s, 1 << a)).collect()),
        1..64usize,
        prop::collection::vec(op(), 0..120),
    )
}

fn bytes_from(seed: u64, len: usize) -> Vec<u8> {
    (0..len as u64).map(|i| (seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i * 31) >> 24) as u8).collect()
}

/// Plain model: one byte vector per (record, field).
struct Model {
    sizes: Vec<usize>,
    records: Vec<Vec<Vec<u8>>>,
    capacity: usize,
}

fn run_script(fields: &[(usize, usize)], capacity: usize, ops: &[Op]) -> Result<(), TestCaseError> {
    let mut schema = FieldSchema::new();
    for (k, &(size, align)) in fields.iter().enumerate() {
        schema = schema.with_field(&format!("f{k}"), size, align);
    }
    let mut soa = RecordStore::new(schema.clone(), Layout::Soa, capacity).unwrap();
    let mut aos = RecordStore::new(schema, Layout::Aos, capacity).unwrap();
    let mut model = Model {
        sizes: fields.iter().map(|f| f.0).collect(),
        records: Vec::new(),
        capacity,
    };
    let name = |f: usize| format!("f{f}");
    for op in ops {
        match *op {
            Op::Write { index, field, seed } => {
                let size = model.sizes.get(field).copied().unwrap_or(4);
                let bytes = bytes_from(seed, size);
                let a = soa.write_field(index, &name(field), &bytes);
                let b = aos.write_field(index, &name(field), &bytes);
                prop_assert_eq!(&a, &b);
                let ok = field < model.sizes.len() && index < model.records.len();
                prop_assert_eq!(a.is_ok(), ok);
                if ok {
                    model.records[index][field] = bytes;
                }
            }
            Op::Read { index, field } => {
                let a = soa.read_field(index, &name(field)).map(<[u8]>::to_vec);
                let b = aos.read_field(index, &name(field)).map(<[u8]>::to_vec);
                prop_assert_eq!(&a, &b);
                match model.records.get(index).and_then(|r| r.get(field)) {
                    Some(expected) => prop_assert_eq!(a.unwrap(), expected.clone()),
                    None => prop_assert!(a.is_err()),
                }
            }
            Op::BulkRead { field, start, len } => {
                let a = soa.bulk_read_field(&name(field), start..start + len);
                let b = aos.bulk_read_field(&name(field), start..start + len);
                prop_assert_eq!(&a, &b);
                if field < model.sizes.len() && start + len <= model.records.len() {
                    let expected: Vec<u8> = model.records[start..start + len].iter().flat_map(|r| r[field].clone()).collect();
                    prop_assert_eq!(a.unwrap(), expected);
                } else {
                    prop_assert!(a.is_err());
                }
            }
            Op::BulkWrite { field, start, len, seed } => {
                if field >= model.sizes.len() {
                    prop_assert!(soa.field_id(&name(field)).is_err());
                    continue;
                }
                let size = model.sizes[field];
                let data = bytes_from(seed, size * len);
                let a = soa.bulk_write_from(FieldId(field), start..start + len, &data);
                let b = aos.bulk_write_from(FieldId(field), start..start + len, &data);
                prop_assert_eq!(&a, &b);
                let ok = start + len <= model.records.len();
                prop_assert_eq!(a.is_ok(), ok);
                if ok {
                    for (k, chunk) in data.chunks_exact(size).enumerate() {
                        model.records[start + k][field] = chunk.to_vec();
                    }
                }
            }
            Op::SetLen(len) => {
                let a = soa.set_len(len);
                prop_assert_eq!(&a, &aos.set_len(len));
                prop_assert_eq!(a.is_ok(), len <= model.capacity);
                if len <= model.capacity {
                    let zero: Vec<Vec<u8>> = model.sizes.iter().map(|&s| vec![0; s]).collect();
                    model.records.resize(len, zero);
                }
            }
            Op::Push => {
                let a = soa.push_zeroed();
                prop_assert_eq!(&a, &aos.push_zeroed());
                if model.records.len() < model.capacity {
                    prop_assert_eq!(a, Ok(model.records.len()));
                    model.records.push(model.sizes.iter().map(|&s| vec![0; s]).collect());
                } else {
                    prop_assert!(a.is_err());
                }
            }
        }
        prop_assert_eq!(soa.len(), model.records.len());
        prop_assert_eq!(aos.len(), model.records.len());
    }
    // Final exhaustive comparison, including a cross-layout migration.
    let mut migrated = RecordStore::new(soa.schema().clone(), Layout::Aos, capacity).unwrap();
    soa.migrate_into(&mut migrated).unwrap();
    for (i, rec) in model.records.iter().enumerate() {
        for (f, bytes) in rec.iter().enumerate() {
            prop_assert_eq!(soa.field_bytes(i, FieldId(f)), &bytes[..]);
            prop_assert_eq!(aos.field_bytes(i, FieldId(f)), &bytes[..]);
            prop_assert_eq!(migrated.field_bytes(i, FieldId(f)), &bytes[..]);
        }
    }
    Ok(())
}

fn steady_state_allocations() -> usize {
    let schema = FieldSchema::new()
        .with_typed::<f32>("distance")
        .with_typed::<f32>("weight")
        .with_field("color", 3, 1);
    let mut stores = [Layout::Soa, Layout::Aos].map(|l| {
        let mut s = RecordStore::new(schema.clone(), l, 4096).unwrap();
        s.set_len(4096).unwrap();
        s
    });
    let mut grid = TsdfGrid::new(GridConfig::indoor()).unwrap();
    let h = grid.allocate_block(BlockIndex::new(0, 0, 0)).unwrap();
    let mut buf = vec![0u8; 4 * 256];
    let (_, allocs) = count_allocations(|| {
        let mut acc = 0.0f32;
        for s in stores.iter_mut() {
            let (d, w) = (s.field_id("distance").unwrap(), s.field_id("weight").unwrap());
            for i in 0..4096 {
                s.set(i, d, i as f32);
                s.set(i, w, acc);
                acc += s.get::<f32>(i, d);
                s.write_field(i, "color", &[1, 2, 3]).unwrap();
                acc += s.read_field(i, "color").unwrap()[0] as f32;
            }
            s.bulk_read_into(d, 100..356, &mut buf).unwrap();
            s.bulk_write_from(w, 0..256, &buf).unwrap();
        }
        let n = grid.config().voxels_per_block();
        for linear in 0..n {
            let mut v = grid.voxel_at(h, linear);
            v.weight += 1.0;
            grid.set_at(h, linear, v);
            let vi = VoxelIndex::from_global([linear as i64 % 8, 0, 0], 8);
            acc += grid.get(&vi).map_or(0.0, |v: TsdfVoxel| v.weight);
        }
        std::hint::black_box(acc)
    });
    allocs
}

fn layout_transparency() -> Outcome {
    let mut runner = TestRunner::new(PropConfig {
        cases: 1000,
        failure_persistence: None,
        ..PropConfig::default()
    });
    runner
        .run(&script(), |(fields, cap, ops)| run_script(&fields, cap, &ops))
        .map_err(|e| format!("script failed: {e}"))?;
    let allocs = steady_state_allocations();
    ensure(allocs == 0, || format!("{allocs} allocations during steady-state field access"))?;
    Ok("1000 scripts agree across SoA, AoS and the model; 0 allocations in steady-state access".into())
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("TSDF oracle equivalence", tsdf_oracle_equivalence),
        ("TSDF determinism", tsdf_determinism),
        ("ESDF incremental == rebuild == oracle", esdf_incremental),
        ("Jacobian correctness", jacobians),
        ("CG correctness", cg_vs_dense),
        ("PGO convergence", pgo_circle),
        ("End-to-end loop closure", corridor_loop),
        ("Hash table behavior", hash_behavior),
        ("Scaling shape", tsdf_scaling),
        ("Layout transparency", layout_transparency),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        if only.is_some_and(|o| o != k + 1) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", k + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
