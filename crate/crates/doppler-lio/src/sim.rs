//! Synthetic sequence generation: closed-form velocity profiles, groundtruth
//! poses by high-resolution integration, and Doppler/gyro measurements with
//! configurable bias, noise, and labeled outliers.
//!
//! Measurement synthesis inverts the estimation models, so a noiseless
//! sequence is reproduced exactly by the pipeline. Generation is fully
//! deterministic for a given seed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::bias::BiasModel;
use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::lie::{exp_twist, BodyVelocity, RigidTransform};
use crate::measurement::{doppler_row, Extrinsics, GyroSample};
use crate::pointcloud::{frame_file_name, write_frame_bin, BinGrid, DopplerReturn, LidarFrame};

/// Substeps per frame used for the groundtruth pose profile.
pub const GROUNDTRUTH_SUBSTEPS: usize = 10_000;

/// Closed-form velocity profile of the simulated vehicle.
#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryKind {
    /// The same twist forever.
    ConstantTwist(BodyVelocity),
    /// Constant forward speed with a sinusoidal yaw rate, tracing a weaving
    /// figure-eight path.
    FigureEight {
        speed: f64,
        yaw_amplitude: f64,
        yaw_period: f64,
    },
    /// Linear interpolation between timestamped waypoints (clamped outside),
    /// typically loaded from a file.
    PiecewiseLinear(Vec<(f64, BodyVelocity)>),
}

impl TrajectoryKind {
    pub fn velocity_at(&self, t: f64) -> BodyVelocity {
        match self {
            TrajectoryKind::ConstantTwist(w) => *w,
            TrajectoryKind::FigureEight {
                speed,
                yaw_amplitude,
                yaw_period,
            } => BodyVelocity::new(
                Vector3::new(*speed, 0.0, 0.0),
                Vector3::new(
                    0.0,
                    0.0,
                    yaw_amplitude * (2.0 * std::f64::consts::PI * t / yaw_period).sin(),
                ),
            ),
            TrajectoryKind::PiecewiseLinear(points) => {
                if points.is_empty() {
                    return BodyVelocity::zero();
                }
                if t <= points[0].0 {
                    return points[0].1;
                }
                if t >= points[points.len() - 1].0 {
                    return points[points.len() - 1].1;
                }
                let i = points.partition_point(|(pt, _)| *pt <= t) - 1;
                let (t0, w0) = &points[i];
                let (t1, w1) = &points[i + 1];
                let alpha = (t - t0) / (t1 - t0);
                BodyVelocity::from_vector(
                    &(w0.to_vector() * (1.0 - alpha) + w1.to_vector() * alpha),
                )
            }
        }
    }
}

/// Simulation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub kind: TrajectoryKind,
    /// Sequence duration (s).
    pub duration: f64,
    /// Lidar frame rate (Hz).
    pub frame_rate: f64,
    /// Gyro sample rate (Hz).
    pub gyro_rate: f64,
    pub returns_per_frame: usize,
    /// Doppler noise standard deviation (m/s).
    pub doppler_noise: f64,
    /// Gyro noise standard deviation (rad/s).
    pub gyro_noise: f64,
    /// Fraction of returns offset to simulate moving objects.
    pub outlier_fraction: f64,
    /// Doppler offset applied to outliers (m/s).
    pub outlier_offset: f64,
    /// Bias injected into the Doppler measurements, if any.
    pub injected_bias: Option<BiasModel>,
    pub gyro_bias: Vector3<f64>,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            kind: TrajectoryKind::FigureEight {
                speed: 10.0,
                yaw_amplitude: 0.25,
                yaw_period: 40.0,
            },
            duration: 20.0,
            frame_rate: 10.0,
            gyro_rate: 100.0,
            returns_per_frame: 2000,
            doppler_noise: 0.0,
            gyro_noise: 0.0,
            outlier_fraction: 0.0,
            outlier_offset: 5.0,
            injected_bias: None,
            gyro_bias: Vector3::zeros(),
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::Config("sim_duration_s must be positive".into()));
        }
        if !(self.frame_rate > 0.0) || !(self.gyro_rate > 0.0) {
            return Err(Error::Config("sim rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return Err(Error::Config(
                "sim_outlier_fraction must lie in [0, 1]".into(),
            ));
        }
        if self.doppler_noise < 0.0 || self.gyro_noise < 0.0 {
            return Err(Error::Config(
                "sim noise sigmas must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn num_frames(&self) -> usize {
        (self.duration * self.frame_rate).round() as usize
    }
}

/// Groundtruth of a simulated sequence: the closed-form velocity profile and
/// a pose profile integrated at high resolution.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    kind: TrajectoryKind,
    start_time: f64,
    frame_period: f64,
    /// World-from-vehicle poses at the frame-boundary knot times.
    knot_poses: Vec<RigidTransform>,
    substeps_per_frame: usize,
}

impl GroundTruth {
    /// Integrates the pose profile over `num_frames` frames.
    pub fn new(
        kind: TrajectoryKind,
        start_time: f64,
        frame_period: f64,
        num_frames: usize,
        substeps_per_frame: usize,
    ) -> Self {
        let mut knot_poses = Vec::with_capacity(num_frames + 1);
        let mut pose = RigidTransform::identity();
        knot_poses.push(pose);
        for k in 0..num_frames {
            let t0 = start_time + k as f64 * frame_period;
            let rel = integrate_profile(&kind, t0, frame_period, substeps_per_frame);
            pose = pose.compose(&rel);
            knot_poses.push(pose);
        }
        Self {
            kind,
            start_time,
            frame_period,
            knot_poses,
            substeps_per_frame,
        }
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.frame_period * (self.knot_poses.len() - 1) as f64
    }

    /// The velocity profile, `None` outside the sequence span.
    pub fn velocity_at(&self, t: f64) -> Option<BodyVelocity> {
        (self.start_time..=self.end_time())
            .contains(&t)
            .then(|| self.kind.velocity_at(t))
    }

    /// Pose at an arbitrary time within the span, integrating the partial
    /// interval from the preceding knot at profile resolution.
    pub fn pose_at(&self, t: f64) -> Result<RigidTransform> {
        if t < self.start_time || t > self.end_time() {
            return Err(Error::OutOfSpan {
                tau: t,
                start: self.start_time,
                end: self.end_time(),
            });
        }
        let k =
            (((t - self.start_time) / self.frame_period) as usize).min(self.knot_poses.len() - 2);
        let t0 = self.start_time + k as f64 * self.frame_period;
        let partial = t - t0;
        if partial <= 0.0 {
            return Ok(self.knot_poses[k]);
        }
        let steps =
            ((partial / self.frame_period) * self.substeps_per_frame as f64).round() as usize;
        let rel = integrate_profile(&self.kind, t0, partial, steps.max(1));
        Ok(self.knot_poses[k].compose(&rel))
    }

    /// Poses at the knot (frame-boundary) times.
    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            stamps: (0..self.knot_poses.len())
                .map(|k| self.start_time + k as f64 * self.frame_period)
                .collect(),
            poses: self.knot_poses.clone(),
        }
    }
}

/// Integrates the profile over `[t0, t0 + dt]` with `steps` substeps,
/// sampling the twist at substep endpoints, ordered as in
/// [`crate::integrator::integrate_interval`].
fn integrate_profile(kind: &TrajectoryKind, t0: f64, dt: f64, steps: usize) -> RigidTransform {
    let sub_dt = dt / steps as f64;
    let mut rel = RigidTransform::identity();
    for s in 1..=steps {
        let w = kind.velocity_at(t0 + sub_dt * s as f64);
        rel = rel.compose(&exp_twist(&w.scaled(sub_dt)));
    }
    rel
}

/// A generated sequence held in memory.
#[derive(Debug, Clone)]
pub struct GeneratedSequence {
    pub frames: Vec<LidarFrame>,
    /// Per frame, per return: `true` where the return was offset as an
    /// outlier (labels by construction, for RANSAC scoring).
    pub outlier_labels: Vec<Vec<bool>>,
    pub gyro: Vec<GyroSample>,
    pub groundtruth: GroundTruth,
}

/// Standard normal deviate by Box-Muller.
fn gauss(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Generates a sequence in memory. Beam directions are sampled over the
/// grid's azimuth span and beam rows, concentrated on every third azimuth
/// column so that downsampling a dense frame keeps a realistic count.
pub fn generate_in_memory(
    cfg: &SimConfig,
    grid: &BinGrid,
    lidar: &Extrinsics,
    gyro_ext: &Extrinsics,
) -> Result<GeneratedSequence> {
    cfg.validate()?;
    grid.validate()?;
    if let Some(bias) = &cfg.injected_bias {
        if bias.shape() != (grid.rows(), grid.cols()) {
            return Err(Error::Config(
                "injected bias model shape does not match the grid".into(),
            ));
        }
    }
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let num_frames = cfg.num_frames();
    let period = 1.0 / cfg.frame_rate;
    let groundtruth = GroundTruth::new(
        cfg.kind.clone(),
        0.0,
        period,
        num_frames,
        GROUNDTRUTH_SUBSTEPS,
    );

    let vertical_fov_deg = 30.0;
    let cols = grid.cols();
    let usable_cols = (cols / 3).max(1);

    let mut frames = Vec::with_capacity(num_frames);
    let mut outlier_labels = Vec::with_capacity(num_frames);
    for frame_index in 0..num_frames {
        let start = frame_index as f64 * period;
        let end = start + period;
        let mut returns = Vec::with_capacity(cfg.returns_per_frame);
        let mut labels = Vec::with_capacity(cfg.returns_per_frame);
        for _ in 0..cfg.returns_per_frame {
            let col = 3 * rng.gen_range(0..usable_cols);
            let az_deg = grid.azimuth_min_deg
                + (col as f64 + rng.gen_range(0.0..1.0)) * grid.azimuth_bin_deg;
            let row = rng.gen_range(0..grid.num_beam_rows);
            let el_deg = -vertical_fov_deg / 2.0
                + (row as f64 + 0.5) / grid.num_beam_rows as f64 * vertical_fov_deg;
            let range = rng.gen_range(5.0..150.0);
            let timestamp = start + rng.gen_range(0.0..1.0) * period;

            let az = az_deg.to_radians();
            let el = el_deg.to_radians();
            let q = Vector3::new(
                range * el.cos() * az.cos(),
                range * el.cos() * az.sin(),
                range * el.sin(),
            );
            let w = cfg.kind.velocity_at(timestamp);
            let row_vec = doppler_row(&q, lidar)?;
            let mut doppler = (row_vec * w.to_vector())[0];
            if let Some(bias) = &cfg.injected_bias {
                let bin = crate::pointcloud::BinIndex { row, col };
                doppler += bias.predict(bin, range)?.unwrap_or(0.0);
            }
            if cfg.doppler_noise > 0.0 {
                doppler += cfg.doppler_noise * gauss(&mut rng);
            }
            let is_outlier =
                cfg.outlier_fraction > 0.0 && rng.gen_range(0.0..1.0) < cfg.outlier_fraction;
            if is_outlier {
                doppler += cfg.outlier_offset;
            }
            returns.push(DopplerReturn::from_raw(q, doppler, timestamp, row as u32)?);
            labels.push(is_outlier);
        }
        frames.push(LidarFrame {
            frame_index,
            start_time: start,
            end_time: end,
            returns,
        });
        outlier_labels.push(labels);
    }

    let mut gyro = Vec::new();
    let gyro_dt = 1.0 / cfg.gyro_rate;
    let end_time = num_frames as f64 * period;
    let mut j = 0usize;
    loop {
        let t = j as f64 * gyro_dt;
        if t > end_time {
            break;
        }
        let w = cfg.kind.velocity_at(t);
        let mut rates = gyro_ext.r_sv * w.omega + cfg.gyro_bias;
        if cfg.gyro_noise > 0.0 {
            rates += Vector3::new(
                cfg.gyro_noise * gauss(&mut rng),
                cfg.gyro_noise * gauss(&mut rng),
                cfg.gyro_noise * gauss(&mut rng),
            );
        }
        gyro.push(GyroSample {
            timestamp: t,
            rates,
        });
        j += 1;
    }

    Ok(GeneratedSequence {
        frames,
        outlier_labels,
        gyro,
        groundtruth,
    })
}

/// Generates a sequence and writes it to `out_dir` in the on-disk layout the
/// pipeline consumes:
///
/// ```text
/// out_dir/
///   frames.csv                frame_index,start_time_s,end_time_s,file
///   frames/frame_%06d.bin     binary Doppler records
///   gyro.csv                  timestamp_s,wx_rad_s,wy_rad_s,wz_rad_s
///   groundtruth_velocity.csv  timestamp_s,vx,vy,vz,wx,wy,wz
///   gt_trajectory.txt         groundtruth poses at knot times
///   outliers.csv              frame_index,record_index,is_outlier
/// ```
pub fn generate(
    cfg: &SimConfig,
    grid: &BinGrid,
    lidar: &Extrinsics,
    gyro_ext: &Extrinsics,
    out_dir: &Path,
) -> Result<GeneratedSequence> {
    let seq = generate_in_memory(cfg, grid, lidar, gyro_ext)?;
    std::fs::create_dir_all(out_dir.join("frames"))?;

    let mut frames_csv = BufWriter::new(File::create(out_dir.join("frames.csv"))?);
    writeln!(frames_csv, "frame_index,start_time_s,end_time_s,file")?;
    for frame in &seq.frames {
        let name = frame_file_name(frame.frame_index);
        writeln!(
            frames_csv,
            "{},{},{},frames/{name}",
            frame.frame_index, frame.start_time, frame.end_time
        )?;
        write_frame_bin(&out_dir.join("frames").join(&name), frame)?;
    }
    frames_csv.flush()?;

    let mut gyro_csv = BufWriter::new(File::create(out_dir.join("gyro.csv"))?);
    writeln!(gyro_csv, "timestamp_s,wx_rad_s,wy_rad_s,wz_rad_s")?;
    for s in &seq.gyro {
        writeln!(
            gyro_csv,
            "{},{},{},{}",
            s.timestamp, s.rates.x, s.rates.y, s.rates.z
        )?;
    }
    gyro_csv.flush()?;

    let mut gt_csv = BufWriter::new(File::create(out_dir.join("groundtruth_velocity.csv"))?);
    writeln!(gt_csv, "timestamp_s,vx,vy,vz,wx,wy,wz")?;
    let gt_dt = 1.0 / cfg.gyro_rate;
    let mut j = 0usize;
    loop {
        let t = j as f64 * gt_dt;
        if t > seq.groundtruth.end_time() {
            break;
        }
        let w = cfg.kind.velocity_at(t);
        writeln!(
            gt_csv,
            "{t},{},{},{},{},{},{}",
            w.nu.x, w.nu.y, w.nu.z, w.omega.x, w.omega.y, w.omega.z
        )?;
        j += 1;
    }
    gt_csv.flush()?;

    crate::integrator::write_trajectory(
        &out_dir.join("gt_trajectory.txt"),
        &seq.groundtruth.trajectory(),
    )?;

    let mut outliers_csv = BufWriter::new(File::create(out_dir.join("outliers.csv"))?);
    writeln!(outliers_csv, "frame_index,record_index,is_outlier")?;
    for (fi, labels) in seq.outlier_labels.iter().enumerate() {
        for (ri, &label) in labels.iter().enumerate() {
            writeln!(outliers_csv, "{fi},{ri},{}", label as u8)?;
        }
    }
    outliers_csv.flush()?;

    Ok(seq)
}

/// A groundtruth velocity table loaded from CSV, queried by linear
/// interpolation; `None` outside its span.
#[derive(Debug, Clone)]
pub struct VelocityTable {
    points: Vec<(f64, BodyVelocity)>,
}

impl VelocityTable {
    pub fn load_csv(path: &Path) -> Result<Self> {
        use std::io::BufRead;
        let file = File::open(path)
            .map_err(|e| Error::Data(format!("groundtruth file {}: {e}", path.display())))?;
        let mut points = Vec::new();
        for (line_no, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line_no == 0 || line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|f| {
                    f.trim().parse().map_err(|_| {
                        Error::Data(format!("groundtruth line {}: bad field '{f}'", line_no + 1))
                    })
                })
                .collect::<Result<_>>()?;
            if vals.len() != 7 {
                return Err(Error::Data(format!(
                    "groundtruth line {}: expected 7 fields",
                    line_no + 1
                )));
            }
            points.push((
                vals[0],
                BodyVelocity::new(
                    Vector3::new(vals[1], vals[2], vals[3]),
                    Vector3::new(vals[4], vals[5], vals[6]),
                ),
            ));
        }
        if points.windows(2).any(|w| !(w[0].0 < w[1].0)) {
            return Err(Error::Data(
                "groundtruth timestamps must be strictly increasing".into(),
            ));
        }
        Ok(Self { points })
    }

    pub fn velocity_at(&self, t: f64) -> Option<BodyVelocity> {
        if self.points.is_empty()
            || t < self.points[0].0
            || t > self.points[self.points.len() - 1].0
        {
            return None;
        }
        let i = (self.points.partition_point(|(pt, _)| *pt <= t) - 1).min(self.points.len() - 2);
        let (t0, w0) = &self.points[i];
        let (t1, w1) = &self.points[i + 1];
        let alpha = (t - t0) / (t1 - t0);
        Some(BodyVelocity::from_vector(
            &(w0.to_vector() * (1.0 - alpha) + w1.to_vector() * alpha),
        ))
    }
}

/// Loads a piecewise-linear velocity profile file: CSV with header
/// `timestamp_s,vx,vy,vz,wx,wy,wz`.
pub fn load_profile_csv(path: &Path) -> Result<TrajectoryKind> {
    let table = VelocityTable::load_csv(path)?;
    if table.points.is_empty() {
        return Err(Error::Data("velocity profile file has no rows".into()));
    }
    Ok(TrajectoryKind::PiecewiseLinear(table.points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::log_se3;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn noiseless_config(kind: TrajectoryKind) -> SimConfig {
        SimConfig {
            kind,
            duration: 2.0,
            returns_per_frame: 100,
            ..SimConfig::default()
        }
    }

    #[test]
    fn constant_twist_noiseless_doppler_matches_projection() {
        let w = BodyVelocity::new(Vector3::new(5.0, 0.0, 0.0), Vector3::zeros());
        let cfg = noiseless_config(TrajectoryKind::ConstantTwist(w));
        let grid = BinGrid::default();
        let ext = Extrinsics::identity();
        let seq = generate_in_memory(&cfg, &grid, &ext, &ext).unwrap();
        for frame in &seq.frames {
            for ret in &frame.returns {
                let qhat = ret.q / ret.range;
                assert_relative_eq!(ret.doppler, qhat.dot(&w.nu), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = SimConfig {
            doppler_noise: 0.05,
            gyro_noise: 0.01,
            outlier_fraction: 0.2,
            seed: 1234,
            ..noiseless_config(TrajectoryKind::FigureEight {
                speed: 8.0,
                yaw_amplitude: 0.3,
                yaw_period: 10.0,
            })
        };
        let grid = BinGrid::default();
        let ext = Extrinsics::identity();
        let a = generate_in_memory(&cfg, &grid, &ext, &ext).unwrap();
        let b = generate_in_memory(&cfg, &grid, &ext, &ext).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.gyro, b.gyro);
        assert_eq!(a.outlier_labels, b.outlier_labels);
    }

    #[test]
    fn seeded_disk_outputs_are_byte_identical() {
        let cfg = SimConfig {
            doppler_noise: 0.02,
            outlier_fraction: 0.1,
            seed: 7,
            duration: 0.5,
            returns_per_frame: 50,
            ..SimConfig::default()
        };
        let grid = BinGrid::default();
        let ext = Extrinsics::identity();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        generate(&cfg, &grid, &ext, &ext, dir_a.path()).unwrap();
        generate(&cfg, &grid, &ext, &ext, dir_b.path()).unwrap();
        for name in [
            "frames.csv",
            "gyro.csv",
            "groundtruth_velocity.csv",
            "gt_trajectory.txt",
            "outliers.csv",
        ] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
        let a = std::fs::read(dir_a.path().join("frames").join(frame_file_name(0))).unwrap();
        let b = std::fs::read(dir_b.path().join("frames").join(frame_file_name(0))).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn outlier_labels_match_fraction() {
        let cfg = SimConfig {
            outlier_fraction: 0.3,
            returns_per_frame: 1000,
            duration: 1.0,
            seed: 99,
            ..SimConfig::default()
        };
        let grid = BinGrid::default();
        let ext = Extrinsics::identity();
        let seq = generate_in_memory(&cfg, &grid, &ext, &ext).unwrap();
        let total: usize = seq.outlier_labels.iter().map(|l| l.len()).sum();
        let outliers: usize = seq
            .outlier_labels
            .iter()
            .map(|l| l.iter().filter(|&&b| b).count())
            .sum();
        let fraction = outliers as f64 / total as f64;
        assert!((fraction - 0.3).abs() < 0.03, "fraction {fraction}");
    }

    #[test]
    fn groundtruth_poses_consistent_with_velocity_profile() {
        // Finite differences of the pose profile reproduce the velocity
        // profile at 100 random times.
        let kind = TrajectoryKind::FigureEight {
            speed: 10.0,
            yaw_amplitude: 0.25,
            yaw_period: 8.0,
        };
        let gt = GroundTruth::new(kind.clone(), 0.0, 0.1, 50, GROUNDTRUTH_SUBSTEPS);
        let mut rng = StdRng::seed_from_u64(101);
        use rand::Rng;
        // Substep-aligned differencing so the first-order quadrature error
        // of the two partial integrations cancels.
        let sub_dt = 0.1 / GROUNDTRUTH_SUBSTEPS as f64;
        let delta = 10.0 * sub_dt;
        for _ in 0..100 {
            let m: usize = rng.gen_range(0..(50 * GROUNDTRUTH_SUBSTEPS - 10));
            let t = m as f64 * sub_dt;
            let a = gt.pose_at(t).unwrap();
            let b = gt.pose_at(t + delta).unwrap();
            let twist = log_se3(&a.inverse().compose(&b)).scaled(1.0 / delta);
            let expected = kind.velocity_at(t + delta / 2.0);
            assert_relative_eq!(
                twist.to_vector(),
                expected.to_vector(),
                epsilon = 1e-6,
                max_relative = 1e-6
            );
        }
    }

    #[test]
    fn gyro_measurements_invert_model() {
        let w = BodyVelocity::new(Vector3::new(3.0, 0.0, 0.0), Vector3::new(0.05, -0.02, 0.3));
        let bias = Vector3::new(0.01, -0.01, 0.002);
        let cfg = SimConfig {
            gyro_bias: bias,
            ..noiseless_config(TrajectoryKind::ConstantTwist(w))
        };
        let grid = BinGrid::default();
        let ext = Extrinsics::identity();
        let seq = generate_in_memory(&cfg, &grid, &ext, &ext).unwrap();
        assert!(!seq.gyro.is_empty());
        for s in &seq.gyro {
            assert_relative_eq!(s.rates, w.omega + bias, epsilon = 1e-12);
        }
    }

    #[test]
    fn velocity_table_interpolates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.csv");
        std::fs::write(
            &path,
            "timestamp_s,vx,vy,vz,wx,wy,wz\n0.0,0,0,0,0,0,0\n1.0,2,0,0,0,0,0\n",
        )
        .unwrap();
        let table = VelocityTable::load_csv(&path).unwrap();
        assert_relative_eq!(table.velocity_at(0.5).unwrap().nu.x, 1.0, epsilon = 1e-15);
        assert!(table.velocity_at(1.5).is_none());
        assert!(table.velocity_at(-0.1).is_none());
    }
}
