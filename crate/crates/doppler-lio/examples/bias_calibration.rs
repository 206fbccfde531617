//! Doppler bias calibration: the sensor's radial-velocity measurements carry
//! a range-dependent bias that varies over the azimuth-elevation grid. This
//! example injects a known per-bin linear bias, recovers it by regression
//! against groundtruth velocities, and shows the before/after RMS error.
//!
//! ```bash
//! cargo run --release --example bias_calibration
//! ```

use doppler_lio::bias::{build_calibration_samples, BiasModel, FitConfig};
use doppler_lio::measurement::Extrinsics;
use doppler_lio::pointcloud::{BinGrid, BinIndex};
use doppler_lio::sim::{generate_in_memory, SimConfig, TrajectoryKind};
use doppler_lio::BodyVelocity;
use nalgebra::Vector3;

fn main() -> doppler_lio::Result<()> {
    // A coarse grid keeps the example readable; real calibration uses the
    // full downsampling grid and a long training drive.
    let grid = BinGrid {
        azimuth_bin_deg: 20.0,
        num_beam_rows: 4,
        ..BinGrid::default()
    };
    let mut injected = BiasModel::empty(grid.rows(), grid.cols());
    for row in 0..grid.rows() {
        for col in 0..grid.cols() {
            injected.set_bin(
                BinIndex { row, col },
                0.03 + 0.01 * row as f64,
                0.0004 * (1 + col) as f64,
            )?;
        }
    }

    let ext = Extrinsics::identity();
    let sim = SimConfig {
        kind: TrajectoryKind::ConstantTwist(BodyVelocity::new(
            Vector3::new(8.0, 0.0, 0.0),
            Vector3::new(0.0, 0.0, 0.1),
        )),
        duration: 20.0,
        returns_per_frame: 2000,
        doppler_noise: 0.04,
        injected_bias: Some(injected.clone()),
        seed: 3,
        ..SimConfig::default()
    };
    let seq = generate_in_memory(&sim, &grid, &ext, &ext)?;

    let (samples, counters) = build_calibration_samples(
        &seq.frames,
        None,
        |t| seq.groundtruth.velocity_at(t),
        &ext,
        &grid,
    )?;
    println!(
        "collected {} calibration samples ({} outside groundtruth span)",
        counters.accepted, counters.outside_groundtruth
    );

    let fitted = BiasModel::fit(grid.rows(), grid.cols(), &samples, &FitConfig::default())?;
    println!(
        "calibrated {} of {} bins\n",
        fitted.valid_bins(),
        grid.rows() * grid.cols()
    );

    println!("bin        injected (b0, b1)      recovered (b0, b1)");
    for row in 0..grid.rows() {
        for col in (0..grid.cols()).step_by(3) {
            let bin = BinIndex { row, col };
            if let Some(c) = fitted.coefficients(bin)? {
                let truth = injected.coefficients(bin)?.unwrap();
                println!(
                    "({row}, {col:>2})   ({:+.4}, {:+.6})    ({:+.4}, {:+.6})",
                    truth.b0, truth.b1, c.b0, c.b1
                );
            }
        }
    }

    let mut before = 0.0;
    let mut after = 0.0;
    for s in &samples {
        let corrected = s.residual - fitted.predict(s.bin, s.range)?.unwrap_or(0.0);
        before += s.residual * s.residual;
        after += corrected * corrected;
    }
    let n = samples.len() as f64;
    println!(
        "\nDoppler RMS error: {:.4} m/s before correction, {:.4} m/s after",
        (before / n).sqrt(),
        (after / n).sqrt()
    );
    Ok(())
}
