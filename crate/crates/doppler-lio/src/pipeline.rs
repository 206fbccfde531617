//! End-to-end orchestration: stream frames and gyro data, preprocess,
//! bias-correct, reject outliers, estimate velocity (filter or batch),
//! integrate poses, and write trajectories and run manifests.
//!
//! Batch and filter modes consume identical per-interval factor bundles, so
//! their equivalence is structural: the batch solve and the marginalizing
//! filter see the same information.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{Matrix3, Matrix6, SMatrix, Vector3};

use crate::bias::{build_calibration_samples, BiasModel, CalibrationSample};
use crate::config::{Mode, PipelineConfig};
use crate::error::{Error, Result};
use crate::estimator::{
    interval_weight, kinematic_information, FactorSystem, FilterState, IntervalAccum,
    IntervalFactor, KnotTrajectory,
};
use crate::eval::StageTimings;
use crate::integrator::{
    clamp_stationary, integrate_interval, integrate_trajectory, write_trajectory, Trajectory,
};
use crate::lie::{BodyVelocity, RigidTransform};
use crate::measurement::{doppler_row, gyro_rows, Extrinsics, GyroSample};
use crate::pointcloud::{downsample, load_frame, LidarFrame};
use crate::ransac;

/// Gyro timestamps outside the knot span by more than this are dropped.
const GYRO_SLACK: f64 = 1e-3;

/// Frame boundary metadata from a sequence's `frames.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBounds {
    pub index: usize,
    pub start: f64,
    pub end: f64,
    pub file: PathBuf,
}

/// A sequence directory: frame metadata plus the gyro log.
#[derive(Debug, Clone)]
pub struct SequenceMeta {
    pub dir: PathBuf,
    pub frames: Vec<FrameBounds>,
    pub gyro_path: PathBuf,
}

/// Reads `frames.csv` (columns `frame_index,start_time_s,end_time_s,file`)
/// from a sequence directory.
pub fn read_sequence_meta(dir: &Path) -> Result<SequenceMeta> {
    let meta_path = dir.join("frames.csv");
    let file = File::open(&meta_path)
        .map_err(|e| Error::Data(format!("sequence {}: {e}", meta_path.display())))?;
    let mut frames = Vec::new();
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line_no == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Data(format!(
                "frames.csv line {}: expected 4 fields",
                line_no + 1
            )));
        }
        let index: usize = fields[0]
            .parse()
            .map_err(|_| Error::Data(format!("frames.csv line {}: bad index", line_no + 1)))?;
        let start: f64 = fields[1]
            .parse()
            .map_err(|_| Error::Data(format!("frames.csv line {}: bad start", line_no + 1)))?;
        let end: f64 = fields[2]
            .parse()
            .map_err(|_| Error::Data(format!("frames.csv line {}: bad end", line_no + 1)))?;
        frames.push(FrameBounds {
            index,
            start,
            end,
            file: dir.join(fields[3]),
        });
    }
    if frames.is_empty() {
        return Err(Error::Data(format!(
            "sequence {} has no frames",
            dir.display()
        )));
    }
    for pair in frames.windows(2) {
        if (pair[1].start - pair[0].end).abs() > GYRO_SLACK {
            return Err(Error::Data(format!(
                "frames {} and {} are not contiguous",
                pair[0].index, pair[1].index
            )));
        }
    }
    Ok(SequenceMeta {
        dir: dir.to_path_buf(),
        frames,
        gyro_path: dir.join("gyro.csv"),
    })
}

impl SequenceMeta {
    /// Loads one frame, normalizing the Doppler sign convention.
    pub fn load_frame(&self, k: usize, doppler_sign: f64) -> Result<LidarFrame> {
        let bounds = &self.frames[k];
        let mut frame = load_frame(&bounds.file, bounds.index, bounds.start, bounds.end)?;
        if doppler_sign != 1.0 {
            for ret in &mut frame.returns {
                ret.doppler *= doppler_sign;
            }
        }
        Ok(frame)
    }

    /// Knot times: the first frame's start followed by every frame's end.
    pub fn knot_times(&self) -> Vec<f64> {
        let mut times = Vec::with_capacity(self.frames.len() + 1);
        times.push(self.frames[0].start);
        times.extend(self.frames.iter().map(|f| f.end));
        times
    }
}

/// Per-frame counters of one pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameStats {
    pub frame_index: usize,
    pub returns_in: usize,
    pub returns_out: usize,
    pub inliers: usize,
    pub bias_uncorrected: usize,
    pub gyro_samples: usize,
    pub ransac_low_confidence: bool,
    /// Set when the interval carried no gyro coverage and was processed
    /// prior-only.
    pub gyro_gap: bool,
}

/// Output of an in-memory pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    /// Estimated velocity knots (before the stationary clamp).
    pub knots: KnotTrajectory,
    /// Integrated world poses (after the stationary clamp).
    pub trajectory: Trajectory,
    pub frame_stats: Vec<FrameStats>,
    pub timings: StageTimings,
    pub warnings: Vec<String>,
    pub dropped_gyro: usize,
}

/// One interval's reduced measurement information plus its counters.
struct IntervalBundle {
    accum: IntervalAccum,
    stats: FrameStats,
}

/// Builds the factor bundle of one frame interval: downsample, RANSAC,
/// bias-correct inlier Doppler returns, and attach the interval's gyro
/// samples. An interval without gyro coverage contributes no measurement
/// factors at all (prior-only), flagged in its stats.
#[allow(clippy::too_many_arguments)]
fn build_interval_bundle(
    cfg: &PipelineConfig,
    bias: &BiasModel,
    lidar: &Extrinsics,
    gyro_ext: &Extrinsics,
    frame: &LidarFrame,
    gyro: &[GyroSample],
    knot_times: &[f64],
    interval: usize,
    timings: &mut FrameClock,
) -> Result<IntervalBundle> {
    let mut stats = FrameStats {
        frame_index: frame.frame_index,
        returns_in: frame.returns.len(),
        returns_out: 0,
        inliers: 0,
        bias_uncorrected: 0,
        gyro_samples: gyro.len(),
        ransac_low_confidence: false,
        gyro_gap: gyro.is_empty(),
    };

    timings.start();
    let thinned = downsample(frame, &cfg.grid);
    stats.returns_out = thinned.returns.len();
    timings.lap_preprocess();

    let mut frame_seed =
        cfg.ransac.seed ^ (frame.frame_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // Keep distinct frames on distinct streams even for seed 0.
    frame_seed = frame_seed.wrapping_add(frame.frame_index as u64);
    let ransac_cfg = ransac::RansacConfig {
        seed: frame_seed,
        ..cfg.ransac.clone()
    };
    let result = ransac::run(&thinned, bias, &cfg.grid, lidar, &ransac_cfg)?;
    stats.inliers = result.inlier_count;
    stats.ransac_low_confidence = result.low_confidence;
    timings.lap_ransac();

    let mut accum = IntervalAccum::new();
    if stats.gyro_gap {
        // Gyro gap: prior-only interval; the Doppler factors are withheld so
        // the unobservable angular subspace is never fed one-sided data.
        timings.lap_solve_partial();
        return Ok(IntervalBundle { accum, stats });
    }

    let (t0, t1) = (knot_times[interval], knot_times[interval + 1]);
    let inv_dt = 1.0 / (t1 - t0);
    let inv_r_dop = 1.0 / cfg.noise.r_dop;
    for (ret, &inlier) in thinned.returns.iter().zip(&result.inliers) {
        if !inlier {
            continue;
        }
        let row = doppler_row(&ret.q, lidar)?;
        let predicted = match cfg.grid.bin_of(ret) {
            Some(bin) => bias.predict(bin, ret.range)?,
            None => Some(0.0),
        };
        let correction = match predicted {
            Some(c) => c,
            None => {
                stats.bias_uncorrected += 1;
                0.0
            }
        };
        let alpha = ((ret.timestamp.clamp(t0, t1) - t0) * inv_dt).clamp(0.0, 1.0);
        accum.add_scalar_row(&row, ret.doppler - correction, inv_r_dop, alpha);
    }

    let rows = gyro_rows(gyro_ext);
    let r_gyro = Matrix3::from_diagonal(&cfg.noise.r_gyro_diag);
    for sample in gyro {
        let tau = sample.timestamp.clamp(t0, t1);
        let (_, alpha) = interval_weight(&knot_times[interval..=interval + 1], tau)?;
        accum.add_factor(&IntervalFactor::from_rows(
            &rows,
            &(sample.rates - cfg.gyro_bias),
            &r_gyro,
            alpha,
        )?);
    }
    timings.lap_solve_partial();
    Ok(IntervalBundle { accum, stats })
}

/// Splits gyro samples by knot interval, dropping samples outside the span
/// by more than the slack and clamping ones within it.
fn split_gyro(knot_times: &[f64], gyro: &[GyroSample]) -> (Vec<Vec<GyroSample>>, usize) {
    let intervals = knot_times.len() - 1;
    let mut split = vec![Vec::new(); intervals];
    let mut dropped = 0usize;
    let (t0, t_end) = (knot_times[0], knot_times[knot_times.len() - 1]);
    for s in gyro {
        if s.timestamp < t0 - GYRO_SLACK || s.timestamp > t_end + GYRO_SLACK {
            dropped += 1;
            continue;
        }
        let t = s.timestamp.clamp(t0, t_end);
        let (k, _) = interval_weight(knot_times, t).expect("clamped into span");
        let mut sample = *s;
        sample.timestamp = t;
        split[k].push(sample);
    }
    (split, dropped)
}

/// Wall-clock accounting per frame.
struct FrameClock {
    mark: Instant,
    preprocess: f64,
    ransac: f64,
    solve: f64,
    integrate: f64,
    per_frame_total: Vec<f64>,
    frame_acc: f64,
}

impl FrameClock {
    fn new() -> Self {
        Self {
            mark: Instant::now(),
            preprocess: 0.0,
            ransac: 0.0,
            solve: 0.0,
            integrate: 0.0,
            per_frame_total: Vec::new(),
            frame_acc: 0.0,
        }
    }

    fn start(&mut self) {
        self.mark = Instant::now();
    }

    fn lap(&mut self) -> f64 {
        let now = Instant::now();
        let ms = now.duration_since(self.mark).as_secs_f64() * 1e3;
        self.mark = now;
        self.frame_acc += ms;
        ms
    }

    fn lap_preprocess(&mut self) {
        let ms = self.lap();
        self.preprocess += ms;
    }

    fn lap_ransac(&mut self) {
        let ms = self.lap();
        self.ransac += ms;
    }

    fn lap_solve_partial(&mut self) {
        let ms = self.lap();
        self.solve += ms;
    }

    fn lap_integrate(&mut self) {
        let ms = self.lap();
        self.integrate += ms;
    }

    fn end_frame(&mut self) {
        self.per_frame_total.push(self.frame_acc);
        self.frame_acc = 0.0;
    }

    fn summarize(mut self) -> StageTimings {
        let frames = self.per_frame_total.len();
        if frames == 0 {
            return StageTimings::default();
        }
        let n = frames as f64;
        self.per_frame_total
            .sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
        let p95 = self.per_frame_total[((0.95 * (frames - 1) as f64).round()) as usize];
        StageTimings {
            preprocess_ms: self.preprocess / n,
            ransac_ms: self.ransac / n,
            solve_ms: self.solve / n,
            integrate_ms: self.integrate / n,
            total_ms: (self.preprocess + self.ransac + self.solve + self.integrate) / n,
            p95_total_ms: p95,
            frames,
        }
    }
}

/// Runs the full pipeline over frames supplied by `next_frame` (called once
/// per frame, in order). Works identically for in-memory and on-disk
/// sources; filter mode holds only one frame at a time.
pub fn run_pipeline<F>(
    cfg: &PipelineConfig,
    bounds: &[FrameBounds],
    mut next_frame: F,
    gyro: &[GyroSample],
) -> Result<PipelineRun>
where
    F: FnMut(usize) -> Result<LidarFrame>,
{
    cfg.validate()?;
    if bounds.is_empty() {
        return Err(Error::Data("sequence has no frames".into()));
    }
    let lidar = cfg.lidar_extrinsics()?;
    let gyro_ext = cfg.gyro_extrinsics()?;
    let bias = match &cfg.bias_model_path {
        Some(path) => BiasModel::load_csv(path, cfg.grid.rows(), cfg.grid.cols())?,
        None => BiasModel::zero(cfg.grid.rows(), cfg.grid.cols()),
    };

    let mut knot_times = Vec::with_capacity(bounds.len() + 1);
    knot_times.push(bounds[0].start);
    knot_times.extend(bounds.iter().map(|b| b.end));
    let (gyro_split, dropped_gyro) = split_gyro(&knot_times, gyro);

    let qc = cfg.noise.qc();
    let qz =
        SMatrix::<f64, 4, 4>::from_diagonal(&nalgebra::SVector::<f64, 4>::from(cfg.noise.qz_diag));
    let kin = kinematic_information(&cfg.noise.h_kin(), &qz)?;

    let mut clock = FrameClock::new();
    let mut frame_stats = Vec::with_capacity(bounds.len());
    let mut warnings = Vec::new();

    let run = match cfg.mode {
        Mode::Filter => run_filter(
            cfg,
            bounds,
            &mut next_frame,
            &gyro_split,
            &knot_times,
            &bias,
            &lidar,
            &gyro_ext,
            &qc,
            &kin,
            &mut clock,
            &mut frame_stats,
            &mut warnings,
        )?,
        Mode::Batch => run_batch(
            cfg,
            bounds,
            &mut next_frame,
            &gyro_split,
            &knot_times,
            &bias,
            &lidar,
            &gyro_ext,
            &qc,
            &kin,
            &mut clock,
            &mut frame_stats,
            &mut warnings,
        )?,
    };
    let (knots, trajectory) = run;

    if dropped_gyro > 0 {
        warnings.push(format!(
            "dropped {dropped_gyro} gyro samples outside the sequence span"
        ));
    }

    Ok(PipelineRun {
        knots,
        trajectory,
        frame_stats,
        timings: clock.summarize(),
        warnings,
        dropped_gyro,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_filter<F>(
    cfg: &PipelineConfig,
    bounds: &[FrameBounds],
    next_frame: &mut F,
    gyro_split: &[Vec<GyroSample>],
    knot_times: &[f64],
    bias: &BiasModel,
    lidar: &Extrinsics,
    gyro_ext: &Extrinsics,
    qc: &Matrix6<f64>,
    kin: &Matrix6<f64>,
    clock: &mut FrameClock,
    frame_stats: &mut Vec<FrameStats>,
    warnings: &mut Vec<String>,
) -> Result<(KnotTrajectory, Trajectory)>
where
    F: FnMut(usize) -> Result<LidarFrame>,
{
    let threshold = cfg.integrator.stationary_threshold;
    let clamp = |w: &BodyVelocity| {
        if w.forward_speed().abs() < threshold {
            BodyVelocity::zero()
        } else {
            *w
        }
    };

    let mut state = FilterState::from_prior(knot_times[0], cfg.noise.initial_prior_info, kin)?;
    let mut knots = vec![state.mean];
    let mut pose = RigidTransform::identity();
    let mut stamps = Vec::with_capacity(bounds.len() + 1);
    let mut poses = Vec::with_capacity(bounds.len() + 1);
    stamps.push(knot_times[0]);
    poses.push(pose);

    for (k, bound) in bounds.iter().enumerate() {
        let frame =
            next_frame(k).map_err(|e| Error::Data(format!("frame {}: {e}", bound.index)))?;
        let bundle = build_interval_bundle(
            cfg,
            bias,
            lidar,
            gyro_ext,
            &frame,
            &gyro_split[k],
            knot_times,
            k,
            clock,
        )?;
        if bundle.stats.gyro_gap {
            warnings.push(format!(
                "frame {}: no gyro coverage, prediction-only step",
                bound.index
            ));
        }
        frame_stats.push(bundle.stats);

        clock.start();
        let (next, retro_old) = state.step_with_retro(knot_times[k + 1], qc, &bundle.accum, kin)?;
        // The just-stepped joint gives knot k its final (one-step-smoothed)
        // value; the new knot's value may still be revised by the next step.
        knots[k] = retro_old;
        knots.push(next.mean);
        state = next;
        clock.lap_solve_partial();

        let dt = knot_times[k + 1] - knot_times[k];
        let rel = integrate_interval(
            &clamp(&knots[k]),
            &clamp(&state.mean),
            dt,
            cfg.integrator.steps,
        );
        pose = pose.compose(&rel);
        if (k + 1) % 1000 == 0 {
            pose = pose.orthonormalized();
        }
        stamps.push(knot_times[k + 1]);
        poses.push(pose);
        clock.lap_integrate();
        clock.end_frame();
    }

    let knots = KnotTrajectory::new(knot_times.to_vec(), knots)?;
    Ok((knots, Trajectory { stamps, poses }))
}

#[allow(clippy::too_many_arguments)]
fn run_batch<F>(
    cfg: &PipelineConfig,
    bounds: &[FrameBounds],
    next_frame: &mut F,
    gyro_split: &[Vec<GyroSample>],
    knot_times: &[f64],
    bias: &BiasModel,
    lidar: &Extrinsics,
    gyro_ext: &Extrinsics,
    qc: &Matrix6<f64>,
    kin: &Matrix6<f64>,
    clock: &mut FrameClock,
    frame_stats: &mut Vec<FrameStats>,
    warnings: &mut Vec<String>,
) -> Result<(KnotTrajectory, Trajectory)>
where
    F: FnMut(usize) -> Result<LidarFrame>,
{
    let mut system = FactorSystem::new(knot_times.to_vec())?;
    system.add_prior(0, &BodyVelocity::zero(), cfg.noise.initial_prior_info);
    for k in 0..knot_times.len() {
        system.add_diag_block(k, kin);
    }
    for (k, bound) in bounds.iter().enumerate() {
        let frame =
            next_frame(k).map_err(|e| Error::Data(format!("frame {}: {e}", bound.index)))?;
        let bundle = build_interval_bundle(
            cfg,
            bias,
            lidar,
            gyro_ext,
            &frame,
            &gyro_split[k],
            knot_times,
            k,
            clock,
        )?;
        if bundle.stats.gyro_gap {
            warnings.push(format!(
                "frame {}: no gyro coverage, prior-only interval",
                bound.index
            ));
        }
        frame_stats.push(bundle.stats);

        clock.start();
        system.add_wnoa_factor(k + 1, knot_times[k + 1] - knot_times[k], qc)?;
        system.add_interval_accum(k, &bundle.accum);
        clock.lap_solve_partial();
        clock.end_frame();
    }

    clock.start();
    let knots = system.solve_batch()?;
    clock.lap_solve_partial();
    let clamped = clamp_stationary(&knots, cfg.integrator.stationary_threshold);
    let trajectory = integrate_trajectory(&clamped, &cfg.integrator)?;
    clock.lap_integrate();
    Ok((knots, trajectory))
}

/// 64-bit FNV-1a checksum of a file's contents.
pub fn file_checksum(path: &Path) -> Result<u64> {
    let mut file =
        File::open(path).map_err(|e| Error::Data(format!("checksum {}: {e}", path.display())))?;
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        for &b in &buf[..n] {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    Ok(hash)
}

/// Output of a full odometry run on a sequence directory.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub run: PipelineRun,
    pub trajectory_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Runs odometry on a sequence directory and writes `trajectory.txt` plus
/// an atomically written `manifest.txt` into `output_dir`.
pub fn run_odometry(
    cfg: &PipelineConfig,
    sequence_dir: &Path,
    output_dir: &Path,
) -> Result<RunOutput> {
    let meta = read_sequence_meta(sequence_dir)?;
    let gyro = crate::measurement::load_gyro_csv(&meta.gyro_path)?;
    let run = run_pipeline(
        cfg,
        &meta.frames,
        |k| meta.load_frame(k, cfg.doppler_sign),
        &gyro,
    )?;

    std::fs::create_dir_all(output_dir)?;
    let trajectory_path = output_dir.join("trajectory.txt");
    write_trajectory(&trajectory_path, &run.trajectory)?;

    let manifest_path = output_dir.join("manifest.txt");
    let mut checksums = vec![
        (
            "frames.csv".to_string(),
            file_checksum(&sequence_dir.join("frames.csv"))?,
        ),
        ("gyro.csv".to_string(), file_checksum(&meta.gyro_path)?),
    ];
    for bound in &meta.frames {
        let name = bound
            .file
            .strip_prefix(sequence_dir)
            .unwrap_or(&bound.file)
            .display()
            .to_string();
        checksums.push((name, file_checksum(&bound.file)?));
    }
    write_manifest(
        &manifest_path,
        cfg,
        sequence_dir,
        &trajectory_path,
        &checksums,
        &run,
    )?;
    Ok(RunOutput {
        run,
        trajectory_path,
        manifest_path,
    })
}

fn write_manifest(
    path: &Path,
    cfg: &PipelineConfig,
    sequence_dir: &Path,
    trajectory_path: &Path,
    checksums: &[(String, u64)],
    run: &PipelineRun,
) -> Result<()> {
    let tmp = path.with_extension("txt.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        writeln!(w, "status: ok")?;
        writeln!(w, "sequence: {}", sequence_dir.display())?;
        writeln!(w, "trajectory: {}", trajectory_path.display())?;
        writeln!(w, "frames: {}", run.frame_stats.len())?;
        writeln!(w, "dropped_gyro: {}", run.dropped_gyro)?;
        writeln!(w)?;
        writeln!(w, "[config]")?;
        for (k, v) in cfg.to_key_values() {
            writeln!(w, "{k}: {v}")?;
        }
        writeln!(w)?;
        writeln!(w, "[inputs]")?;
        for (name, sum) in checksums {
            writeln!(w, "{name}: fnv1a64={sum:016x}")?;
        }
        writeln!(w)?;
        writeln!(w, "[frames]")?;
        writeln!(
            w,
            "frame_index,returns_in,returns_out,inliers,bias_uncorrected,gyro_samples,low_confidence,gyro_gap"
        )?;
        for s in &run.frame_stats {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                s.frame_index,
                s.returns_in,
                s.returns_out,
                s.inliers,
                s.bias_uncorrected,
                s.gyro_samples,
                s.ransac_low_confidence as u8,
                s.gyro_gap as u8
            )?;
        }
        writeln!(w)?;
        writeln!(w, "[timings]")?;
        for (stage, ms) in run.timings.stage_rows() {
            writeln!(w, "{stage}_ms: {ms:.4}")?;
        }
        writeln!(w, "total_ms: {:.4}", run.timings.total_ms)?;
        writeln!(w, "p95_total_ms: {:.4}", run.timings.p95_total_ms)?;
        if !run.warnings.is_empty() {
            writeln!(w)?;
            writeln!(w, "[warnings]")?;
            for warning in &run.warnings {
                writeln!(w, "{warning}")?;
            }
        }
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Output of a calibration run.
#[derive(Debug, Clone)]
pub struct CalibrationOutput {
    pub bias_model: BiasModel,
    pub gyro_bias: Vector3<f64>,
    pub samples: usize,
    pub rms_before: f64,
    pub rms_after: f64,
    pub bias_model_path: PathBuf,
    pub report_path: PathBuf,
    pub gyro_bias_path: PathBuf,
}

/// Calibrates the Doppler bias model and the constant gyro bias from a
/// sequence with groundtruth velocities. Outlier returns are excluded by
/// running RANSAC (with no bias correction) on every frame first.
pub fn calibrate(
    cfg: &PipelineConfig,
    sequence_dir: &Path,
    groundtruth_path: &Path,
    output_dir: &Path,
) -> Result<CalibrationOutput> {
    cfg.validate()?;
    let meta = read_sequence_meta(sequence_dir)?;
    let gyro = crate::measurement::load_gyro_csv(&meta.gyro_path)?;
    let table = crate::sim::VelocityTable::load_csv(groundtruth_path)?;
    let lidar = cfg.lidar_extrinsics()?;
    let gyro_ext = cfg.gyro_extrinsics()?;
    let zero_bias = BiasModel::zero(cfg.grid.rows(), cfg.grid.cols());

    let mut frames = Vec::with_capacity(meta.frames.len());
    let mut masks = Vec::with_capacity(meta.frames.len());
    for k in 0..meta.frames.len() {
        let frame = meta.load_frame(k, cfg.doppler_sign)?;
        let thinned = downsample(&frame, &cfg.grid);
        let ransac_cfg = ransac::RansacConfig {
            seed: cfg.ransac.seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            ..cfg.ransac.clone()
        };
        let result = ransac::run(&thinned, &zero_bias, &cfg.grid, &lidar, &ransac_cfg)?;
        masks.push(result.inliers);
        frames.push(thinned);
    }

    let (samples, _counters) = build_calibration_samples(
        &frames,
        Some(&masks),
        |t| table.velocity_at(t),
        &lidar,
        &cfg.grid,
    )?;
    let model = BiasModel::fit(cfg.grid.rows(), cfg.grid.cols(), &samples, &cfg.fit)?;

    // Constant gyro bias: mean residual against groundtruth angular rates.
    let mut bias_sum = Vector3::zeros();
    let mut bias_n = 0usize;
    for s in &gyro {
        if let Some(w) = table.velocity_at(s.timestamp) {
            bias_sum += s.rates - gyro_ext.r_sv * w.omega;
            bias_n += 1;
        }
    }
    let gyro_bias = if bias_n > 0 {
        bias_sum / bias_n as f64
    } else {
        Vector3::zeros()
    };

    std::fs::create_dir_all(output_dir)?;
    let bias_model_path = output_dir.join("bias_model.csv");
    model.save_csv(&bias_model_path)?;
    let gyro_bias_path = output_dir.join("gyro_bias.txt");
    std::fs::write(
        &gyro_bias_path,
        format!("{} {} {}\n", gyro_bias.x, gyro_bias.y, gyro_bias.z),
    )?;

    let report_path = output_dir.join("calib_report.csv");
    let (rms_before, rms_after) = write_rms_report(&report_path, &samples, &model)?;

    Ok(CalibrationOutput {
        bias_model: model,
        gyro_bias,
        samples: samples.len(),
        rms_before,
        rms_after,
        bias_model_path,
        report_path,
        gyro_bias_path,
    })
}

/// Writes the before/after RMS-vs-range report and returns the overall
/// (before, after) RMS.
fn write_rms_report(
    path: &Path,
    samples: &[CalibrationSample],
    model: &BiasModel,
) -> Result<(f64, f64)> {
    const BUCKET_M: f64 = 10.0;
    let mut buckets: std::collections::BTreeMap<usize, (f64, f64, usize)> =
        std::collections::BTreeMap::new();
    let mut sum_before = 0.0;
    let mut sum_after = 0.0;
    for s in samples {
        let corrected = s.residual - model.predict(s.bin, s.range)?.unwrap_or(0.0);
        let bucket = (s.range / BUCKET_M) as usize;
        let entry = buckets.entry(bucket).or_insert((0.0, 0.0, 0));
        entry.0 += s.residual * s.residual;
        entry.1 += corrected * corrected;
        entry.2 += 1;
        sum_before += s.residual * s.residual;
        sum_after += corrected * corrected;
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "range_bin_center_m,rms_before_mps,rms_after_mps,n")?;
    for (bucket, (before, after, n)) in &buckets {
        writeln!(
            w,
            "{},{},{},{n}",
            (*bucket as f64 + 0.5) * BUCKET_M,
            (before / *n as f64).sqrt(),
            (after / *n as f64).sqrt(),
        )?;
    }
    w.flush()?;
    let n = samples.len().max(1) as f64;
    Ok(((sum_before / n).sqrt(), (sum_after / n).sqrt()))
}

/// Runs the pipeline over in-memory frames (convenience for simulation
/// studies and benchmarks).
pub fn run_pipeline_in_memory(
    cfg: &PipelineConfig,
    frames: &[LidarFrame],
    gyro: &[GyroSample],
) -> Result<PipelineRun> {
    let bounds: Vec<FrameBounds> = frames
        .iter()
        .map(|f| FrameBounds {
            index: f.frame_index,
            start: f.start_time,
            end: f.end_time,
            file: PathBuf::new(),
        })
        .collect();
    run_pipeline(cfg, &bounds, |k| Ok(frames[k].clone()), gyro)
}

/// Times the pipeline stages over the given frames (single-threaded, filter
/// mode) and reports per-stage means plus the p95 total.
pub fn timing_harness(
    cfg: &PipelineConfig,
    frames: &[LidarFrame],
    gyro: &[GyroSample],
) -> Result<StageTimings> {
    let mut cfg = cfg.clone();
    cfg.mode = Mode::Filter;
    let run = run_pipeline_in_memory(&cfg, frames, gyro)?;
    Ok(run.timings)
}
