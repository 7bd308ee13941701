//! Measurement harnesses behind the `bench-hash` and `bench-tsdf` commands.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use nalgebra::{Isometry3, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::grid::{GridConfig, TsdfGrid};
use crate::hash::{BlockIndex, HashError, HashMap3D};
use crate::tsdf::{PointCloudFrame, TsdfError, TsdfIntegrator};

/// Keys per `activate` call in the hash stress run.
pub const STRESS_BATCH: usize = 4096;

/// Insert latency of filling a map to a target load factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HashStressReport {
    pub load_factor: f64,
    pub capacity: usize,
    /// Keys inserted.
    pub n: usize,
    /// Mean insert time over the whole fill.
    pub mean_ns: f64,
    /// 99th percentile of the per-key time of each batch.
    pub p99_ns: f64,
    pub mean_probe: f64,
    pub max_probe: usize,
    /// Every key was found at the slot a reference map recorded for it.
    pub all_found: bool,
}

/// Fills a map sized for `n_keys` at `load_factor` with distinct random
/// keys, in batches of [`STRESS_BATCH`].
///
/// The capacity is the power of two at or above `n_keys / load_factor`,
/// and the map is filled to `⌊load_factor · capacity⌋` keys, so the run
/// ends exactly at the requested load.
pub fn hash_stress(n_keys: usize, load_factor: f64, seed: u64) -> Result<HashStressReport, HashError> {
    let capacity = ((n_keys as f64 / load_factor).ceil() as usize).max(2).next_power_of_two();
    let mut map = HashMap3D::with_max_load(capacity, load_factor)?;
    let target = map.limit();
    let keys = distinct_keys(target, seed);

    let mut reference: HashMap<BlockIndex, u32> = HashMap::with_capacity(target);
    let mut per_key = Vec::with_capacity(target / STRESS_BATCH + 1);
    let mut total = Duration::ZERO;
    for batch in keys.chunks(STRESS_BATCH) {
        let t = Instant::now();
        let out = map.activate(batch)?;
        let dt = t.elapsed();
        total += dt;
        per_key.push(dt.as_nanos() as f64 / batch.len() as f64);
        for (k, a) in batch.iter().zip(out) {
            reference.insert(*k, a.slot);
        }
    }
    let all_found = map.len() == reference.len() && reference.iter().all(|(k, s)| map.find(*k) == Some(*s));
    let probes: Vec<usize> = keys.iter().filter_map(|k| map.probe_length(*k)).collect();
    per_key.sort_by(f64::total_cmp);
    let p99 = per_key[((per_key.len() as f64 * 0.99).ceil() as usize).clamp(1, per_key.len()) - 1];
    Ok(HashStressReport {
        load_factor,
        capacity,
        n: target,
        mean_ns: total.as_nanos() as f64 / target as f64,
        p99_ns: p99,
        mean_probe: probes.iter().sum::<usize>() as f64 / probes.len() as f64,
        max_probe: probes.iter().copied().max().unwrap_or(0),
        all_found,
    })
}

fn distinct_keys(n: usize, seed: u64) -> Vec<BlockIndex> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut seen = std::collections::HashSet::with_capacity(n);
    let mut keys = Vec::with_capacity(n);
    const R: i64 = 1 << 20;
    while keys.len() < n {
        let b = BlockIndex::new(rng.random_range(-R..R), rng.random_range(-R..R), rng.random_range(-R..R));
        if seen.insert(b) {
            keys.push(b);
        }
    }
    keys
}

/// CSV with columns `load_factor,n,mean_ns,p99_ns`.
pub fn hash_stress_csv(reports: &[HashStressReport]) -> String {
    let mut s = String::from("load_factor,n,mean_ns,p99_ns\n");
    for r in reports {
        s += &format!("{},{},{:.3},{:.3}\n", r.load_factor, r.n, r.mean_ns, r.p99_ns);
    }
    s
}

/// A frame of `n_points` returns at `range` meters in random directions
/// around the origin.
pub fn sphere_frame(n_points: usize, range: f64, seed: u64) -> PointCloudFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n_points)
        .map(|_| loop {
            let v = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let l = v.norm();
            if l > 1e-3 && l <= 1.0 {
                break Point3::from(v * (range / l));
            }
        })
        .collect();
    PointCloudFrame::new(0.0, Isometry3::identity(), points)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsdfTiming {
    pub threads: usize,
    pub points: usize,
    pub updates: usize,
    pub touched_voxels: usize,
    /// Median over repetitions, each into a fresh grid.
    pub seconds: f64,
}

/// Times `integrate_frame` for every thread count in `threads`.
pub fn tsdf_benchmark(
    frame: &PointCloudFrame,
    grid: GridConfig,
    threads: &[usize],
    repetitions: usize,
) -> Result<Vec<TsdfTiming>, TsdfError> {
    let integrator = TsdfIntegrator::default();
    let mut out = Vec::new();
    for &t in threads {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .expect("thread pool");
        let mut times = Vec::with_capacity(repetitions.max(1));
        let mut last = None;
        for _ in 0..repetitions.max(1) {
            let mut g = TsdfGrid::new(grid)?;
            let start = Instant::now();
            let stats = pool.install(|| integrator.integrate_frame(&mut g, frame))?;
            times.push(start.elapsed().as_secs_f64());
            last = Some(stats);
        }
        times.sort_by(f64::total_cmp);
        let stats = last.expect("at least one repetition");
        out.push(TsdfTiming {
            threads: t,
            points: frame.points.len(),
            updates: stats.updates,
            touched_voxels: stats.touched_voxels,
            seconds: times[times.len() / 2],
        });
    }
    Ok(out)
}

/// CSV with columns `threads,points,updates,touched_voxels,seconds`.
pub fn tsdf_csv(rows: &[TsdfTiming]) -> String {
    let mut s = String::from("threads,points,updates,touched_voxels,seconds\n");
    for r in rows {
        s += &format!("{},{},{},{},{:.6}\n", r.threads, r.points, r.updates, r.touched_voxels, r.seconds);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_stress_run_is_consistent() {
        let r = hash_stress(10_000, 0.5, 1).unwrap();
        assert_eq!(r.capacity, 32768);
        assert_eq!(r.n, 16384);
        assert!(r.all_found);
        assert!(r.max_probe >= 1 && r.mean_probe >= 1.0);
        assert!(hash_stress_csv(&[r]).starts_with("load_factor,n,mean_ns,p99_ns\n0.5,16384,"));
    }

    #[test]
    fn empty_frame_costs_nothing() {
        let frame = PointCloudFrame::new(0.0, Isometry3::identity(), Vec::new());
        let rows = tsdf_benchmark(&frame, GridConfig::default(), &[1], 1).unwrap();
        assert_eq!((rows[0].updates, rows[0].touched_voxels), (0, 0));
    }

    #[test]
    fn sphere_points_sit_at_range() {
        let f = sphere_frame(100, 3.0, 2);
        assert!(f.points.iter().all(|p| (p.coords.norm() - 3.0).abs() < 1e-12));
    }
}
