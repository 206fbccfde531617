//! Single-threaded per-frame timing of the pipeline stages on dense
//! (100k-return) frames, the workload of a real 10 Hz FMCW lidar.
//!
//! ```bash
//! cargo run --release --example timing_benchmark
//! ```

use doppler_lio::config::PipelineConfig;
use doppler_lio::pipeline::timing_harness;
use doppler_lio::sim::{generate_in_memory, SimConfig, TrajectoryKind};

fn main() -> doppler_lio::Result<()> {
    let cfg = PipelineConfig::default();
    let sim = SimConfig {
        kind: TrajectoryKind::FigureEight {
            speed: 10.0,
            yaw_amplitude: 0.2,
            yaw_period: 20.0,
        },
        duration: 5.0,
        returns_per_frame: 100_000,
        doppler_noise: 0.03,
        outlier_fraction: 0.1,
        seed: 1,
        ..SimConfig::default()
    };

    eprintln!(
        "generating {} frames x {} returns ...",
        sim.num_frames(),
        sim.returns_per_frame
    );
    let seq = generate_in_memory(
        &sim,
        &cfg.grid,
        &cfg.lidar_extrinsics()?,
        &cfg.gyro_extrinsics()?,
    )?;
    let downsampled = doppler_lio::pointcloud::downsample(&seq.frames[0], &cfg.grid);
    eprintln!(
        "downsampling keeps {} of {} returns per frame",
        downsampled.returns.len(),
        seq.frames[0].returns.len()
    );

    let timings = timing_harness(&cfg, &seq.frames, &seq.gyro)?;
    println!("stage        mean_ms");
    for (stage, ms) in timings.stage_rows() {
        println!("{stage:<12} {ms:>8.4}");
    }
    println!("total        {:>8.4}", timings.total_ms);
    println!("p95 total    {:>8.4}", timings.p95_total_ms);
    println!(
        "\n{} frames processed; a 10 Hz sensor allows 100 ms per frame",
        timings.frames
    );
    Ok(())
}
