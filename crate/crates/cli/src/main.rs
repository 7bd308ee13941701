use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use voxmap::bench::{hash_stress, hash_stress_csv, sphere_frame, tsdf_benchmark, tsdf_csv};
use voxmap::dataset::{
    ate_rmse, export_esdf_slice, export_surface_points, read_trajectory, write_points_csv, write_trajectory, Scene,
    SensorModel, SyntheticConfig,
};
use voxmap::grid::GridConfig;
use voxmap::pipeline::{run_dataset, OverflowPolicy, PipelineConfig};
use voxmap::submap::SubmapCollection;
use voxmap::tsdf::WeightingScheme;

#[derive(Parser)]
#[command(name = "voxmap", version, about = "Volumetric submap mapping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Map a dataset directory.
    Run(RunArgs),
    /// Write a synthetic dataset with ground truth.
    Generate(GenerateArgs),
    /// Absolute trajectory error of an estimate against ground truth.
    Evaluate(EvaluateArgs),
    /// Surface points and ESDF slices from a saved map.
    Export(ExportArgs),
    /// Hash-map insert latency at several load factors.
    BenchHash(BenchHashArgs),
    /// TSDF integration time against thread count and frame size.
    BenchTsdf(BenchTsdfArgs),
}

/// Pipeline settings. Every field may come from the config file or a flag;
/// flags win.
#[derive(Args, Deserialize, Default, Debug, Clone)]
#[serde(deny_unknown_fields)]
struct Settings {
    #[arg(long)]
    frame_queue_capacity: Option<usize>,
    #[arg(long)]
    submap_queue_capacity: Option<usize>,
    /// `block` or `drop-oldest`.
    #[arg(long)]
    overflow: Option<String>,
    #[arg(long)]
    submap_block_threshold: Option<usize>,
    #[arg(long)]
    registration_samples: Option<usize>,
    /// `constant` or `inverse-square`.
    #[arg(long)]
    weighting: Option<String>,
    #[arg(long)]
    min_range: Option<f64>,
    #[arg(long)]
    voxel_size: Option<f64>,
    #[arg(long)]
    voxels_per_side: Option<usize>,
    #[arg(long)]
    truncation_distance: Option<f64>,
    #[arg(long)]
    max_esdf_distance: Option<f32>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    gradient_tolerance: Option<f64>,
    #[arg(long)]
    step_tolerance: Option<f64>,
    #[arg(long)]
    odometry_sigma_xyz: Option<f64>,
    #[arg(long)]
    odometry_sigma_yaw: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident, $($f:ident),*) => {
        $( if $src.$f.is_some() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl Settings {
    fn overlay(&mut self, o: &Settings) {
        overlay!(
            self, o, frame_queue_capacity, submap_queue_capacity, overflow, submap_block_threshold,
            registration_samples, weighting, min_range, voxel_size, voxels_per_side, truncation_distance,
            max_esdf_distance, max_iterations, gradient_tolerance, step_tolerance, odometry_sigma_xyz,
            odometry_sigma_yaw, seed
        );
    }

    fn to_config(&self) -> Result<PipelineConfig> {
        let mut c = PipelineConfig::default();
        macro_rules! set {
            ($field:ident => $($dst:tt)+) => {
                if let Some(v) = self.$field.clone() { c.$($dst)+ = v; }
            };
        }
        set!(frame_queue_capacity => frame_queue_capacity);
        set!(submap_queue_capacity => submap_queue_capacity);
        set!(submap_block_threshold => submap_block_threshold);
        set!(registration_samples => registration_samples);
        set!(voxel_size => grid.voxel_size);
        set!(voxels_per_side => grid.voxels_per_side);
        set!(truncation_distance => grid.truncation_distance);
        set!(max_esdf_distance => esdf.max_distance);
        set!(max_iterations => lm.max_iterations);
        set!(gradient_tolerance => lm.gradient_tolerance);
        set!(step_tolerance => lm.step_tolerance);
        set!(odometry_sigma_xyz => odometry_sigma_xyz);
        set!(odometry_sigma_yaw => odometry_sigma_yaw);
        set!(seed => seed);
        if let Some(p) = &self.overflow {
            c.overflow = p.parse::<OverflowPolicy>().map_err(anyhow::Error::msg)?;
        }
        let min_range = self.min_range.unwrap_or(voxmap::tsdf::DEFAULT_MIN_RANGE);
        c.weighting = match self.weighting.as_deref() {
            None if self.min_range.is_some() => WeightingScheme::InverseSquare { min_range },
            None => c.weighting,
            Some("constant") => WeightingScheme::Constant,
            Some("inverse-square") => WeightingScheme::InverseSquare { min_range },
            Some(other) => bail!("unknown weighting '{other}' (constant, inverse-square)"),
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// TOML file with pipeline settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Args)]
struct GenerateArgs {
    /// corridor, room or circle.
    #[arg(long, default_value = "corridor")]
    scene: Scene,
    #[arg(long, default_value_t = 200)]
    frames: usize,
    #[arg(long, default_value_t = 0.01)]
    sigma_xyz: f64,
    #[arg(long, default_value_t = 0.002)]
    sigma_yaw: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 2.0)]
    laps: f64,
    #[arg(long)]
    azimuth_rays: Option<usize>,
    #[arg(long)]
    elevation_rays: Option<usize>,
    #[arg(long)]
    max_range: Option<f64>,
    #[arg(long)]
    no_colors: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    /// Fit translation and yaw before measuring.
    #[arg(long)]
    align: bool,
}

#[derive(Args)]
struct ExportArgs {
    /// Directory written by `run` (its `map` subdirectory or the run root).
    #[arg(long)]
    map: PathBuf,
    /// Write surface points to this CSV.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Surface band half-width; defaults to one voxel.
    #[arg(long)]
    threshold: Option<f64>,
    /// Submap whose ESDF is sliced.
    #[arg(long)]
    slice_submap: Option<u32>,
    /// Slice height in the submap frame.
    #[arg(long, default_value_t = 1.0)]
    z: f64,
    /// Output prefix for `<prefix>.csv` and `<prefix>.pgm`.
    #[arg(long)]
    slice: Option<PathBuf>,
    /// Distance mapped to white in the PGM.
    #[arg(long, default_value_t = 2.0)]
    max_distance: f32,
}

#[derive(Args)]
struct BenchHashArgs {
    #[arg(long, default_value_t = 1_000_000)]
    n: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.5,0.85,0.95")]
    loads: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchTsdfArgs {
    #[arg(long, value_delimiter = ',', default_value = "5000,20000")]
    points: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    threads: Vec<usize>,
    #[arg(long, default_value_t = 10.0)]
    range: f64,
    #[arg(long, default_value_t = 0.05)]
    voxel_size: f64,
    #[arg(long, default_value_t = 5)]
    repetitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut settings = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<Settings>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => Settings::default(),
    };
    settings.overlay(&args.settings);
    let config = settings.to_config()?;
    log::info!("{config:?}");

    let result = run_dataset(&args.dataset, &config)?;
    fs::create_dir_all(&args.out)?;
    result.collection.save(&args.out.join("map"))?;
    write_trajectory(&args.out.join("trajectory.csv"), &result.trajectory)?;
    write_trajectory(&args.out.join("odometry.csv"), &result.odometry)?;
    result.timing.write_csv(BufWriter::new(File::create(args.out.join("timing.csv"))?))?;

    let c = result.counts;
    println!(
        "frames: {} read, {} integrated, {} skipped, {} dropped",
        c.frames_in, c.frames_integrated, c.frames_skipped, c.frames_dropped
    );
    println!("submaps: {}, optimizations: {}", result.collection.len(), result.backend_runs());
    let gt = args.dataset.join("ground_truth.csv");
    if gt.exists() {
        let gt = read_trajectory(&gt)?;
        println!("ATE RMSE odometry: {:.4} m", ate_rmse(&result.odometry, &gt, false)?);
        println!("ATE RMSE optimized: {:.4} m", ate_rmse(&result.trajectory, &gt, false)?);
    }
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let mut cfg = SyntheticConfig::new(args.scene, (args.sigma_xyz, args.sigma_yaw), args.frames, args.seed);
    cfg.laps = args.laps;
    cfg.colors = !args.no_colors;
    let d = SensorModel::default();
    cfg.sensor = SensorModel {
        azimuth_rays: args.azimuth_rays.unwrap_or(d.azimuth_rays),
        elevation_rays: args.elevation_rays.unwrap_or(d.elevation_rays),
        max_range: args.max_range.unwrap_or(d.max_range),
        ..d
    };
    if args.sigma_xyz < 0.0 || args.sigma_yaw < 0.0 {
        bail!("noise sigmas must be non-negative");
    }
    let data = cfg.generate();
    data.write(&args.out)?;
    println!(
        "wrote {} frames and {} loop closures to {}",
        data.frames.len(),
        data.loops.len(),
        args.out.display()
    );
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let est = read_trajectory(&args.estimate)?;
    let gt = read_trajectory(&args.ground_truth)?;
    println!("{:.6}", ate_rmse(&est, &gt, args.align)?);
    Ok(())
}

fn export(args: ExportArgs) -> Result<()> {
    let dir = if args.map.join("manifest.txt").exists() {
        args.map.clone()
    } else {
        args.map.join("map")
    };
    let collection = SubmapCollection::load(&dir).with_context(|| format!("loading map from {}", dir.display()))?;
    if args.points.is_none() && args.slice.is_none() {
        bail!("nothing to export: pass --points and/or --slice");
    }
    if let Some(path) = &args.points {
        let vs = collection.submaps.first().map_or(0.1, |s| s.tsdf.config().voxel_size);
        let pts = export_surface_points(&collection, args.threshold.unwrap_or(vs))?;
        write_points_csv(&pts, BufWriter::new(File::create(path)?))?;
        println!("{} surface points", pts.len());
    }
    if let Some(prefix) = &args.slice {
        let id = args.slice_submap.unwrap_or(0);
        let submap = collection
            .get(id)
            .with_context(|| format!("no submap {id} in the map"))?;
        let slice = export_esdf_slice(submap, args.z);
        slice.write_csv(BufWriter::new(File::create(prefix.with_extension("csv"))?))?;
        slice.write_pgm(BufWriter::new(File::create(prefix.with_extension("pgm"))?), args.max_distance)?;
        println!("slice {}x{}", slice.width, slice.height);
    }
    Ok(())
}

fn bench_hash(args: BenchHashArgs) -> Result<()> {
    let mut reports = Vec::new();
    for &l in &args.loads {
        let r = hash_stress(args.n, l, args.seed)?;
        if !r.all_found {
            bail!("keys went missing at load {l}");
        }
        log::info!("load {l}: mean probe {:.2}, max probe {}", r.mean_probe, r.max_probe);
        reports.push(r);
    }
    emit(&hash_stress_csv(&reports), args.out.as_deref())
}

fn bench_tsdf(args: BenchTsdfArgs) -> Result<()> {
    let grid = GridConfig::new(args.voxel_size, 8, 3.0 * args.voxel_size)?;
    let mut rows = Vec::new();
    for &n in &args.points {
        let frame = sphere_frame(n, args.range, args.seed);
        rows.extend(tsdf_benchmark(&frame, grid, &args.threads, args.repetitions)?);
    }
    emit(&tsdf_csv(&rows), args.out.as_deref())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(a) => run(a),
        Command::Generate(a) => generate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Export(a) => export(a),
        Command::BenchHash(a) => bench_hash(a),
        Command::BenchTsdf(a) => bench_tsdf(a),
    }
}
