//! Pipeline configuration: a flat `key: value` text file with `#` comments.
//!
//! Every key has a default matching the reference pipeline's constants
//! (0.2 degree azimuth bins, 0.2 m/s RANSAC threshold, 20 iterations,
//! 0.03 m/s stationary clamp, 100 integration steps). Unknown keys are
//! rejected. The effective configuration can be re-serialized for the run
//! manifest.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Vector3, Vector6};

use crate::bias::FitConfig;
use crate::error::{Error, Result};
use crate::integrator::IntegratorConfig;
use crate::lie::{rotation_rpy, RigidTransform};
use crate::measurement::{Extrinsics, NoiseConfig};
use crate::pointcloud::BinGrid;
use crate::ransac::RansacConfig;
use crate::sim::{SimConfig, TrajectoryKind};

/// Estimator mode: accumulate everything and solve once, or marginalize
/// frame by frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Filter,
    Batch,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Filter => "filter",
            Mode::Batch => "batch",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "filter" => Ok(Mode::Filter),
            "batch" => Ok(Mode::Batch),
            other => Err(Error::Config(format!(
                "mode must be filter or batch, got '{other}'"
            ))),
        }
    }
}

/// Everything the pipeline needs, assembled from defaults plus a config file.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub grid: BinGrid,
    pub noise: NoiseConfig,
    pub ransac: RansacConfig,
    pub integrator: IntegratorConfig,
    pub fit: FitConfig,
    pub mode: Mode,
    /// Sign normalizing the sensor's Doppler convention at ingestion; the
    /// internal convention is `doppler = row * velocity + bias`.
    pub doppler_sign: f64,
    pub lidar_position: Vector3<f64>,
    pub lidar_rpy_deg: Vector3<f64>,
    pub gyro_position: Vector3<f64>,
    pub gyro_rpy_deg: Vector3<f64>,
    pub gyro_bias: Vector3<f64>,
    /// Bias model CSV produced by calibration, applied when present.
    pub bias_model_path: Option<PathBuf>,
    pub sim: SimConfig,
    /// Uniform per-bin bias injected by the simulator.
    pub sim_bias: (f64, f64),
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            grid: BinGrid::default(),
            noise: NoiseConfig::default(),
            ransac: RansacConfig::default(),
            integrator: IntegratorConfig::default(),
            fit: FitConfig::default(),
            mode: Mode::Filter,
            doppler_sign: 1.0,
            lidar_position: Vector3::new(1.5, 0.0, 1.2),
            lidar_rpy_deg: Vector3::zeros(),
            gyro_position: Vector3::new(1.5, 0.0, 1.2),
            gyro_rpy_deg: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            bias_model_path: None,
            sim: SimConfig::default(),
            sim_bias: (0.0, 0.0),
        }
    }
}

impl PipelineConfig {
    pub fn lidar_extrinsics(&self) -> Result<Extrinsics> {
        extrinsics_from(&self.lidar_position, &self.lidar_rpy_deg)
    }

    pub fn gyro_extrinsics(&self) -> Result<Extrinsics> {
        extrinsics_from(&self.gyro_position, &self.gyro_rpy_deg)
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.noise.validate()?;
        self.ransac.validate()?;
        self.integrator.validate()?;
        self.sim.validate()?;
        if self.doppler_sign != 1.0 && self.doppler_sign != -1.0 {
            return Err(Error::Config("doppler_sign must be 1 or -1".into()));
        }
        if self.fit.min_samples_per_bin < 2 {
            return Err(Error::Config(
                "min_samples_per_bin must be at least 2".into(),
            ));
        }
        if !(self.fit.min_range_spread >= 0.0) {
            return Err(Error::Config(
                "min_range_spread_m must be non-negative".into(),
            ));
        }
        self.lidar_extrinsics()?;
        self.gyro_extrinsics()?;
        Ok(())
    }

    /// The full effective configuration as `key: value` lines, suitable for
    /// the run manifest.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let v3 = |v: &Vector3<f64>| format!("{} {} {}", v.x, v.y, v.z);
        let v6 =
            |v: &Vector6<f64>| format!("{} {} {} {} {} {}", v[0], v[1], v[2], v[3], v[4], v[5]);
        let mut kv = vec![
            ("mode".into(), self.mode.as_str().to_string()),
            (
                "azimuth_bin_deg".into(),
                self.grid.azimuth_bin_deg.to_string(),
            ),
            ("num_beam_rows".into(), self.grid.num_beam_rows.to_string()),
            (
                "azimuth_min_deg".into(),
                self.grid.azimuth_min_deg.to_string(),
            ),
            (
                "azimuth_max_deg".into(),
                self.grid.azimuth_max_deg.to_string(),
            ),
            ("qc_diag".into(), v6(&self.noise.qc_diag)),
            (
                "qz_diag".into(),
                format!(
                    "{} {} {} {}",
                    self.noise.qz_diag[0],
                    self.noise.qz_diag[1],
                    self.noise.qz_diag[2],
                    self.noise.qz_diag[3]
                ),
            ),
            ("r_dop".into(), self.noise.r_dop.to_string()),
            ("r_gyro_diag".into(), v3(&self.noise.r_gyro_diag)),
            (
                "initial_prior_info".into(),
                self.noise.initial_prior_info.to_string(),
            ),
            (
                "ransac_iterations".into(),
                self.ransac.iterations.to_string(),
            ),
            (
                "ransac_threshold_mps".into(),
                self.ransac.inlier_threshold.to_string(),
            ),
            ("ransac_seed".into(), self.ransac.seed.to_string()),
            ("integrator_steps".into(), self.integrator.steps.to_string()),
            (
                "stationary_threshold_mps".into(),
                self.integrator.stationary_threshold.to_string(),
            ),
            ("doppler_sign".into(), self.doppler_sign.to_string()),
            ("lidar_position".into(), v3(&self.lidar_position)),
            ("lidar_rpy_deg".into(), v3(&self.lidar_rpy_deg)),
            ("gyro_position".into(), v3(&self.gyro_position)),
            ("gyro_rpy_deg".into(), v3(&self.gyro_rpy_deg)),
            ("gyro_bias".into(), v3(&self.gyro_bias)),
            (
                "min_samples_per_bin".into(),
                self.fit.min_samples_per_bin.to_string(),
            ),
            (
                "min_range_spread_m".into(),
                self.fit.min_range_spread.to_string(),
            ),
            ("sim_trajectory".into(), sim_trajectory_name(&self.sim.kind)),
            ("sim_duration_s".into(), self.sim.duration.to_string()),
            ("sim_frame_rate_hz".into(), self.sim.frame_rate.to_string()),
            ("sim_gyro_rate_hz".into(), self.sim.gyro_rate.to_string()),
            (
                "sim_returns_per_frame".into(),
                self.sim.returns_per_frame.to_string(),
            ),
            (
                "sim_doppler_noise_mps".into(),
                self.sim.doppler_noise.to_string(),
            ),
            (
                "sim_gyro_noise_rad_s".into(),
                self.sim.gyro_noise.to_string(),
            ),
            (
                "sim_outlier_fraction".into(),
                self.sim.outlier_fraction.to_string(),
            ),
            (
                "sim_outlier_offset_mps".into(),
                self.sim.outlier_offset.to_string(),
            ),
            ("sim_gyro_bias".into(), v3(&self.sim.gyro_bias)),
            ("sim_seed".into(), self.sim.seed.to_string()),
            ("sim_bias_b0".into(), self.sim_bias.0.to_string()),
            ("sim_bias_b1".into(), self.sim_bias.1.to_string()),
        ];
        if let TrajectoryKind::ConstantTwist(w) = &self.sim.kind {
            kv.push(("sim_constant_twist".into(), v6(&w.to_vector())));
        }
        if let TrajectoryKind::FigureEight {
            speed,
            yaw_amplitude,
            yaw_period,
        } = &self.sim.kind
        {
            kv.push((
                "sim_figure_eight".into(),
                format!("{speed} {yaw_amplitude} {yaw_period}"),
            ));
        }
        if let Some(path) = &self.bias_model_path {
            kv.push(("bias_model".into(), path.display().to_string()));
        }
        kv
    }
}

fn sim_trajectory_name(kind: &TrajectoryKind) -> String {
    match kind {
        TrajectoryKind::ConstantTwist(_) => "constant-twist".into(),
        TrajectoryKind::FigureEight { .. } => "figure-eight".into(),
        TrajectoryKind::PiecewiseLinear(_) => "profile-file".into(),
    }
}

fn extrinsics_from(position: &Vector3<f64>, rpy_deg: &Vector3<f64>) -> Result<Extrinsics> {
    let rotation = rotation_rpy(
        rpy_deg.x.to_radians(),
        rpy_deg.y.to_radians(),
        rpy_deg.z.to_radians(),
    );
    Extrinsics::from_sensor_pose(&RigidTransform::new(rotation, *position))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got '{value}'")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected an integer, got '{value}'")))
}

fn parse_u64(key: &str, value: &str) -> Result<u64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected an integer, got '{value}'")))
}

fn parse_vec<const N: usize>(key: &str, value: &str) -> Result<[f64; N]> {
    let vals: Vec<f64> = value
        .split_whitespace()
        .map(|f| parse_f64(key, f))
        .collect::<Result<_>>()?;
    vals.try_into()
        .map_err(|_| Error::Config(format!("{key}: expected {N} numbers, got '{value}'")))
}

fn parse_vec3(key: &str, value: &str) -> Result<Vector3<f64>> {
    let v: [f64; 3] = parse_vec(key, value)?;
    Ok(Vector3::new(v[0], v[1], v[2]))
}

/// Loads, defaults, and validates a pipeline configuration. An empty file
/// (or a missing `path` of `None`) yields pure defaults; unknown keys are
/// rejected with a descriptive error.
pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base)
}

/// Parses configuration text; relative paths resolve against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    // Figure-eight parameters may arrive before or after sim_trajectory.
    let mut figure_eight = (10.0, 0.25, 40.0);
    let mut constant_twist = Vector6::zeros();
    let mut trajectory: Option<String> = None;

    for (line_no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once(':').ok_or_else(|| {
            Error::Config(format!(
                "config line {}: expected 'key: value'",
                line_no + 1
            ))
        })?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "mode" => cfg.mode = Mode::parse(value)?,
            "azimuth_bin_deg" => cfg.grid.azimuth_bin_deg = parse_f64(key, value)?,
            "num_beam_rows" => cfg.grid.num_beam_rows = parse_usize(key, value)?,
            "azimuth_min_deg" => cfg.grid.azimuth_min_deg = parse_f64(key, value)?,
            "azimuth_max_deg" => cfg.grid.azimuth_max_deg = parse_f64(key, value)?,
            "qc_diag" => {
                let v: [f64; 6] = parse_vec(key, value)?;
                cfg.noise.qc_diag = Vector6::from_row_slice(&v);
            }
            "qz_diag" => cfg.noise.qz_diag = parse_vec(key, value)?,
            "r_dop" => cfg.noise.r_dop = parse_f64(key, value)?,
            "r_gyro_diag" => cfg.noise.r_gyro_diag = parse_vec3(key, value)?,
            "initial_prior_info" => cfg.noise.initial_prior_info = parse_f64(key, value)?,
            "ransac_iterations" => cfg.ransac.iterations = parse_usize(key, value)?,
            "ransac_threshold_mps" => cfg.ransac.inlier_threshold = parse_f64(key, value)?,
            "ransac_seed" => cfg.ransac.seed = parse_u64(key, value)?,
            "integrator_steps" => cfg.integrator.steps = parse_usize(key, value)?,
            "stationary_threshold_mps" => {
                cfg.integrator.stationary_threshold = parse_f64(key, value)?
            }
            "doppler_sign" => cfg.doppler_sign = parse_f64(key, value)?,
            "lidar_position" => cfg.lidar_position = parse_vec3(key, value)?,
            "lidar_rpy_deg" => cfg.lidar_rpy_deg = parse_vec3(key, value)?,
            "gyro_position" => cfg.gyro_position = parse_vec3(key, value)?,
            "gyro_rpy_deg" => cfg.gyro_rpy_deg = parse_vec3(key, value)?,
            "gyro_bias" => cfg.gyro_bias = parse_vec3(key, value)?,
            "bias_model" => cfg.bias_model_path = Some(base.join(value)),
            "min_samples_per_bin" => cfg.fit.min_samples_per_bin = parse_usize(key, value)?,
            "min_range_spread_m" => cfg.fit.min_range_spread = parse_f64(key, value)?,
            "sim_trajectory" => trajectory = Some(value.to_string()),
            "sim_constant_twist" => {
                let v: [f64; 6] = parse_vec(key, value)?;
                constant_twist = Vector6::from_row_slice(&v);
            }
            "sim_figure_eight" => {
                let v: [f64; 3] = parse_vec(key, value)?;
                figure_eight = (v[0], v[1], v[2]);
            }
            "sim_duration_s" => cfg.sim.duration = parse_f64(key, value)?,
            "sim_frame_rate_hz" => cfg.sim.frame_rate = parse_f64(key, value)?,
            "sim_gyro_rate_hz" => cfg.sim.gyro_rate = parse_f64(key, value)?,
            "sim_returns_per_frame" => cfg.sim.returns_per_frame = parse_usize(key, value)?,
            "sim_doppler_noise_mps" => cfg.sim.doppler_noise = parse_f64(key, value)?,
            "sim_gyro_noise_rad_s" => cfg.sim.gyro_noise = parse_f64(key, value)?,
            "sim_outlier_fraction" => cfg.sim.outlier_fraction = parse_f64(key, value)?,
            "sim_outlier_offset_mps" => cfg.sim.outlier_offset = parse_f64(key, value)?,
            "sim_gyro_bias" => cfg.sim.gyro_bias = parse_vec3(key, value)?,
            "sim_seed" => cfg.sim.seed = parse_u64(key, value)?,
            "sim_bias_b0" => cfg.sim_bias.0 = parse_f64(key, value)?,
            "sim_bias_b1" => cfg.sim_bias.1 = parse_f64(key, value)?,
            unknown => {
                return Err(Error::Config(format!(
                    "config line {}: unknown key '{unknown}'",
                    line_no + 1
                )))
            }
        }
    }

    match trajectory.as_deref() {
        None | Some("figure-eight") => {
            cfg.sim.kind = TrajectoryKind::FigureEight {
                speed: figure_eight.0,
                yaw_amplitude: figure_eight.1,
                yaw_period: figure_eight.2,
            }
        }
        Some("constant-twist") => {
            cfg.sim.kind = TrajectoryKind::ConstantTwist(crate::lie::BodyVelocity::from_vector(
                &constant_twist,
            ))
        }
        Some(file) => cfg.sim.kind = crate::sim::load_profile_csv(&base.join(file))?,
    }
    if cfg.sim_bias != (0.0, 0.0) {
        cfg.sim.injected_bias = Some(crate::bias::BiasModel::uniform(
            cfg.grid.rows(),
            cfg.grid.cols(),
            cfg.sim_bias.0,
            cfg.sim_bias.1,
        ));
    }

    cfg.validate()?;
    Ok(cfg)
}
