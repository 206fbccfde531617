//! Velocity observability of multi-sensor rigs: how many degrees of freedom
//! the Doppler measurements constrain for different sensor arrangements,
//! and which directions stay unobservable.
//!
//! ```bash
//! cargo run --release --example observability_report
//! ```

use doppler_lio::lie::RigidTransform;
use doppler_lio::measurement::Extrinsics;
use doppler_lio::observability::{
    build_ctc, build_ctc_with_gyro, isotropic_directions, predicted_nullspace_basis, LidarSpec,
    RigSpec,
};
use nalgebra::{Matrix3, Vector3};

fn lidar_at(position: Vector3<f64>) -> LidarSpec {
    LidarSpec {
        extrinsics: Extrinsics::from_sensor_pose(&RigidTransform::new(
            Matrix3::identity(),
            position,
        ))
        .unwrap(),
        directions: isotropic_directions(100),
    }
}

fn main() -> doppler_lio::Result<()> {
    let cases: Vec<(&str, Vec<Vector3<f64>>, bool)> = vec![
        ("one lidar", vec![Vector3::new(1.5, 0.0, 1.2)], false),
        (
            "two lidars, distinct positions",
            vec![Vector3::new(1.5, 0.8, 1.2), Vector3::new(1.5, -0.8, 1.2)],
            false,
        ),
        (
            "two lidars, same position",
            vec![Vector3::new(1.5, 0.0, 1.2), Vector3::new(1.5, 0.0, 1.2)],
            false,
        ),
        (
            "three lidars forming a triangle",
            vec![
                Vector3::new(2.0, 0.0, 1.0),
                Vector3::new(-0.5, 0.9, 1.0),
                Vector3::new(-0.5, -0.9, 1.2),
            ],
            false,
        ),
        (
            "three collinear lidars",
            vec![
                Vector3::new(1.0, -0.8, 1.0),
                Vector3::new(1.0, 0.0, 1.0),
                Vector3::new(1.0, 1.2, 1.0),
            ],
            false,
        ),
        (
            "one lidar plus gyro",
            vec![Vector3::new(1.5, 0.0, 1.2)],
            true,
        ),
    ];

    for (name, positions, gyro) in cases {
        let rig = RigSpec {
            lidars: positions.iter().map(|p| lidar_at(*p)).collect(),
            gyro: gyro.then(Matrix3::identity),
        };
        let report = if gyro {
            build_ctc_with_gyro(&rig)?
        } else {
            build_ctc(&rig)?
        };
        println!("=== {name} ===");
        print!("{report}");

        // For pure-lidar rigs the unobservable subspace has a closed form;
        // confirm the numeric nullspace agrees with it.
        if !gyro {
            let predicted = predicted_nullspace_basis(&rig)?;
            println!(
                "  analytic nullspace dimension: {} (numeric {})",
                predicted.len(),
                report.nullity
            );
        }
        println!();
    }
    Ok(())
}
