//! End-to-end odometry on a simulated figure-eight drive: generate Doppler
//! and gyro measurements, estimate the velocity with the online filter,
//! integrate poses, and score against groundtruth with the KITTI metric.
//!
//! ```bash
//! cargo run --release --example simulate_and_estimate
//! ```

use doppler_lio::config::PipelineConfig;
use doppler_lio::eval::kitti_errors;
use doppler_lio::pipeline::run_pipeline_in_memory;
use doppler_lio::sim::{generate_in_memory, SimConfig, TrajectoryKind};

fn main() -> doppler_lio::Result<()> {
    let cfg = PipelineConfig::default();
    let sim = SimConfig {
        kind: TrajectoryKind::FigureEight {
            speed: 10.0,
            yaw_amplitude: 0.2,
            yaw_period: 50.0,
        },
        duration: 60.0,
        returns_per_frame: 2000,
        doppler_noise: 0.05,
        gyro_noise: 0.002,
        outlier_fraction: 0.15,
        outlier_offset: 5.0,
        seed: 42,
        ..SimConfig::default()
    };

    println!("generating {} frames ...", sim.num_frames());
    let seq = generate_in_memory(
        &sim,
        &cfg.grid,
        &cfg.lidar_extrinsics()?,
        &cfg.gyro_extrinsics()?,
    )?;

    println!("running the filter pipeline ...");
    let run = run_pipeline_in_memory(&cfg, &seq.frames, &seq.gyro)?;
    println!(
        "processed {} frames at {:.3} ms/frame (preprocess {:.3}, ransac {:.3}, solve {:.3}, integrate {:.3})",
        run.frame_stats.len(),
        run.timings.total_ms,
        run.timings.preprocess_ms,
        run.timings.ransac_ms,
        run.timings.solve_ms,
        run.timings.integrate_ms,
    );

    let final_pose = run.trajectory.poses.last().unwrap();
    let gt_pose = *seq.groundtruth.trajectory().poses.last().unwrap();
    println!(
        "final position: estimated [{:.2} {:.2} {:.2}] m, groundtruth [{:.2} {:.2} {:.2}] m",
        final_pose.translation.x,
        final_pose.translation.y,
        final_pose.translation.z,
        gt_pose.translation.x,
        gt_pose.translation.y,
        gt_pose.translation.z,
    );

    let report = kitti_errors(&run.trajectory, &seq.groundtruth.trajectory())?;
    println!("\nlength_m  trans_%   rot_deg/100m  segments");
    for row in &report.per_length {
        println!(
            "{:>8} {:>8.4} {:>13.5} {:>9}",
            row.length, row.translation_pct, row.rotation_deg_per_100m, row.segments
        );
    }
    println!(
        "overall  {:>8.4} {:>13.5} {:>9}",
        report.avg_translation_pct, report.avg_rotation_deg_per_100m, report.total_segments
    );
    Ok(())
}
