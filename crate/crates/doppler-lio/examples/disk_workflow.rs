//! The on-disk workflow exercised end to end: simulate a sequence into a
//! directory, run odometry on it, inspect the run manifest, and evaluate the
//! written trajectory against the written groundtruth — the same steps the
//! `doppler-lio` binary's `simulate`, `odom`, and `evaluate` subcommands
//! perform.
//!
//! ```bash
//! cargo run --release --example disk_workflow
//! ```

use doppler_lio::config::PipelineConfig;
use doppler_lio::eval::kitti_errors;
use doppler_lio::integrator::read_trajectory;
use doppler_lio::pipeline::run_odometry;
use doppler_lio::sim::{generate, SimConfig, TrajectoryKind};

fn main() -> doppler_lio::Result<()> {
    let work = std::env::temp_dir().join("doppler_lio_disk_workflow");
    let seq_dir = work.join("sequence");
    let out_dir = work.join("run");
    std::fs::create_dir_all(&seq_dir)?;

    let cfg = PipelineConfig::default();
    let sim = SimConfig {
        kind: TrajectoryKind::FigureEight {
            speed: 12.0,
            yaw_amplitude: 0.18,
            yaw_period: 40.0,
        },
        duration: 60.0,
        returns_per_frame: 1500,
        doppler_noise: 0.05,
        gyro_noise: 0.002,
        outlier_fraction: 0.1,
        seed: 99,
        ..SimConfig::default()
    };

    println!("writing sequence to {} ...", seq_dir.display());
    generate(
        &sim,
        &cfg.grid,
        &cfg.lidar_extrinsics()?,
        &cfg.gyro_extrinsics()?,
        &seq_dir,
    )?;
    for entry in std::fs::read_dir(&seq_dir)? {
        let entry = entry?;
        if entry.path().is_file() {
            println!("  {}", entry.file_name().to_string_lossy());
        }
    }

    println!("\nrunning odometry ...");
    let output = run_odometry(&cfg, &seq_dir, &out_dir)?;
    println!(
        "wrote {} and {}",
        output.trajectory_path.display(),
        output.manifest_path.display()
    );

    let manifest = std::fs::read_to_string(&output.manifest_path)?;
    println!("\nmanifest head:");
    for line in manifest.lines().take(6) {
        println!("  {line}");
    }

    let est = read_trajectory(&output.trajectory_path)?;
    let gt = read_trajectory(&seq_dir.join("gt_trajectory.txt"))?;
    let report = kitti_errors(&est, &gt)?;
    println!(
        "\nKITTI errors: {:.3} % translation, {:.4} deg/100m rotation over {} segments",
        report.avg_translation_pct, report.avg_rotation_deg_per_100m, report.total_segments
    );
    Ok(())
}
