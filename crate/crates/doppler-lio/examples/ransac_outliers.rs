//! Per-frame RANSAC outlier rejection: a third of the returns belong to a
//! "moving object" offset by 5 m/s, and the 2-DOF constant-velocity
//! hypothesis separates them from the stationary world.
//!
//! ```bash
//! cargo run --release --example ransac_outliers
//! ```

use doppler_lio::bias::BiasModel;
use doppler_lio::config::PipelineConfig;
use doppler_lio::ransac::{run, RansacConfig};
use doppler_lio::sim::{generate_in_memory, SimConfig, TrajectoryKind};
use doppler_lio::BodyVelocity;
use nalgebra::Vector3;

fn main() -> doppler_lio::Result<()> {
    let cfg = PipelineConfig::default();
    let truth = BodyVelocity::new(Vector3::new(9.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 0.12));
    let sim = SimConfig {
        kind: TrajectoryKind::ConstantTwist(truth),
        duration: 0.1, // a single frame
        returns_per_frame: 5000,
        doppler_noise: 0.03,
        outlier_fraction: 0.3,
        outlier_offset: 5.0,
        seed: 7,
        ..SimConfig::default()
    };
    let seq = generate_in_memory(
        &sim,
        &cfg.grid,
        &cfg.lidar_extrinsics()?,
        &cfg.gyro_extrinsics()?,
    )?;
    let frame = &seq.frames[0];
    let labels = &seq.outlier_labels[0];

    let bias = BiasModel::zero(cfg.grid.rows(), cfg.grid.cols());
    let ransac_cfg = RansacConfig::default(); // 20 iterations, 0.2 m/s
    let result = run(
        frame,
        &bias,
        &cfg.grid,
        &cfg.lidar_extrinsics()?,
        &ransac_cfg,
    )?;

    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&kept, &is_outlier) in result.inliers.iter().zip(labels) {
        match (kept, is_outlier) {
            (true, false) => tp += 1,
            (true, true) => fp += 1,
            (false, false) => fn_ += 1,
            (false, true) => tn += 1,
        }
    }
    println!(
        "frame with {} returns, {} labeled outliers",
        frame.returns.len(),
        labels.iter().filter(|&&b| b).count()
    );
    println!(
        "2-DOF hypothesis: forward {:.3} m/s (truth {:.3}), yaw {:.4} rad/s (truth {:.4})",
        result.hypothesis.forward, truth.nu.x, result.hypothesis.yaw_rate, truth.omega.z
    );
    println!(
        "kept {} inliers; confusion tp={tp} fp={fp} fn={fn_} tn={tn}",
        result.inlier_count
    );
    println!(
        "precision {:.4}, recall {:.4}",
        tp as f64 / (tp + fp) as f64,
        tp as f64 / (tp + fn_) as f64
    );
    Ok(())
}
