//! Numerical pose integration of the velocity estimate, with the stationary
//! clamp.
//!
//! Each knot interval is integrated as a chain of exponentials of the
//! interpolated twist over `S` substeps, the latest factor leftmost. Knots
//! whose forward speed falls below the stationary threshold are zeroed
//! before interpolation to suppress pose drift at rest.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::estimator::KnotTrajectory;
use crate::lie::{exp_twist, BodyVelocity, RigidTransform};

/// Compositions between rotation re-orthonormalizations.
const REORTHONORMALIZE_EVERY: usize = 1000;

/// Integration parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    /// Substeps per knot interval.
    pub steps: usize,
    /// Forward-speed magnitude below which a knot is clamped to zero (m/s).
    pub stationary_threshold: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            stationary_threshold: 0.03,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::Config("integrator_steps must be at least 1".into()));
        }
        if self.stationary_threshold < 0.0 {
            return Err(Error::Config(
                "stationary_threshold_mps must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// World-from-vehicle poses at strictly increasing timestamps; the first
/// pose is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub stamps: Vec<f64>,
    pub poses: Vec<RigidTransform>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Integrates one knot interval: the ordered product of `exp(dt_s * w(t)^)`
/// over `steps` substeps with the twist linearly interpolated between the
/// boundary velocities and sampled at substep endpoints.
///
/// The chain is ordered for world-from-vehicle poses (each substep composes
/// onto the right); read in the vehicle-from-world convention this is the
/// same chain with the latest factor leftmost.
pub fn integrate_interval(
    w_start: &BodyVelocity,
    w_end: &BodyVelocity,
    dt: f64,
    steps: usize,
) -> RigidTransform {
    debug_assert!(dt > 0.0 && steps >= 1);
    let sub_dt = dt / steps as f64;
    let v0 = w_start.to_vector();
    let v1 = w_end.to_vector();
    let mut rel = RigidTransform::identity();
    for s in 1..=steps {
        let alpha = s as f64 / steps as f64;
        let w = BodyVelocity::from_vector(&(v0 * (1.0 - alpha) + v1 * alpha));
        rel = rel.compose(&exp_twist(&w.scaled(sub_dt)));
    }
    rel
}

/// Zeroes every knot whose forward-speed magnitude is strictly below the
/// threshold; other knots are untouched. Idempotent.
pub fn clamp_stationary(knots: &KnotTrajectory, threshold: f64) -> KnotTrajectory {
    let mut clamped = knots.clone();
    for k in 0..clamped.len() {
        if clamped.knot(k).forward_speed().abs() < threshold {
            clamped.set_knot(k, BodyVelocity::zero());
        }
    }
    clamped
}

/// Composes per-interval relative transforms onto a running world pose,
/// emitting one pose per knot time. Rotations are re-orthonormalized
/// periodically to bound drift over long sequences.
pub fn accumulate(
    start_stamp: f64,
    start_pose: &RigidTransform,
    stamps: &[f64],
    intervals: &[RigidTransform],
) -> Result<Trajectory> {
    if stamps.len() != intervals.len() {
        return Err(Error::Config(format!(
            "{} interval stamps but {} transforms",
            stamps.len(),
            intervals.len()
        )));
    }
    let mut out = Trajectory {
        stamps: Vec::with_capacity(intervals.len() + 1),
        poses: Vec::with_capacity(intervals.len() + 1),
    };
    out.stamps.push(start_stamp);
    out.poses.push(*start_pose);
    let mut pose = *start_pose;
    for (i, (stamp, rel)) in stamps.iter().zip(intervals).enumerate() {
        pose = pose.compose(rel);
        if (i + 1) % REORTHONORMALIZE_EVERY == 0 {
            pose = pose.orthonormalized();
        }
        out.stamps.push(*stamp);
        out.poses.push(pose);
    }
    Ok(out)
}

/// Integrates a clamped knot trajectory into world poses.
pub fn integrate_trajectory(knots: &KnotTrajectory, cfg: &IntegratorConfig) -> Result<Trajectory> {
    cfg.validate()?;
    if knots.is_empty() {
        return Err(Error::Config("cannot integrate an empty trajectory".into()));
    }
    let times = knots.times();
    let mut rels = Vec::with_capacity(times.len().saturating_sub(1));
    for k in 0..times.len() - 1 {
        let dt = times[k + 1] - times[k];
        rels.push(integrate_interval(
            knots.knot(k),
            knots.knot(k + 1),
            dt,
            cfg.steps,
        ));
    }
    accumulate(times[0], &RigidTransform::identity(), &times[1..], &rels)
}

/// Writes a trajectory as one line per pose:
/// `timestamp_s r11 r12 r13 tx r21 r22 r23 ty r31 r32 r33 tz`.
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (stamp, pose) in traj.stamps.iter().zip(&traj.poses) {
        let r = &pose.rotation;
        let t = &pose.translation;
        writeln!(
            w,
            "{} {} {} {} {} {} {} {} {} {} {} {} {}",
            stamp,
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory written by [`write_trajectory`].
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let file =
        File::open(path).map_err(|e| Error::Data(format!("trajectory {}: {e}", path.display())))?;
    let mut traj = Trajectory {
        stamps: Vec::new(),
        poses: Vec::new(),
    };
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|f| {
                f.parse().map_err(|_| {
                    Error::Data(format!("trajectory line {}: bad field '{f}'", line_no + 1))
                })
            })
            .collect::<Result<_>>()?;
        if vals.len() != 13 {
            return Err(Error::Data(format!(
                "trajectory line {}: expected 13 fields, got {}",
                line_no + 1,
                vals.len()
            )));
        }
        let rotation = nalgebra::Matrix3::new(
            vals[1], vals[2], vals[3], vals[5], vals[6], vals[7], vals[9], vals[10], vals[11],
        );
        let translation = nalgebra::Vector3::new(vals[4], vals[8], vals[12]);
        traj.stamps.push(vals[0]);
        traj.poses.push(RigidTransform::new(rotation, translation));
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, Vector3, Vector6};

    fn w6(v: [f64; 6]) -> BodyVelocity {
        BodyVelocity::from_vector(&Vector6::from_row_slice(&v))
    }

    #[test]
    fn zero_twist_integrates_to_identity() {
        let rel = integrate_interval(&BodyVelocity::zero(), &BodyVelocity::zero(), 0.1, 100);
        assert_eq!(rel.rotation, Matrix3::identity());
        assert_eq!(rel.translation, Vector3::zeros());
    }

    #[test]
    fn constant_twist_is_exact_for_any_step_count() {
        let w = w6([2.0, -0.5, 0.25, 0.1, -0.2, 0.3]);
        let reference = exp_twist(&w.scaled(0.1));
        for steps in [1, 10, 100] {
            let rel = integrate_interval(&w, &w, 0.1, steps);
            assert_relative_eq!(rel.rotation, reference.rotation, epsilon = 1e-12);
            assert_relative_eq!(rel.translation, reference.translation, epsilon = 1e-12);
        }
    }

    #[test]
    fn time_varying_twist_converges_with_steps() {
        // Linear ramp between different start and end twists: error against
        // a 10000-step reference must shrink monotonically, at least
        // first-order in 1/S.
        let w0 = w6([5.0, 0.0, 0.0, 0.0, 0.0, 0.1]);
        let w1 = w6([8.0, 0.5, -0.25, 0.05, -0.1, 0.4]);
        let dt = 0.1;
        let reference = integrate_interval(&w0, &w1, dt, 10_000);
        let error_of = |steps: usize| {
            let rel = integrate_interval(&w0, &w1, dt, steps);
            let delta = reference.inverse().compose(&rel);
            crate::lie::log_se3(&delta).to_vector().norm()
        };
        let e1 = error_of(1);
        let e10 = error_of(10);
        let e100 = error_of(100);
        assert!(
            e1 > e10 && e10 > e100,
            "errors not decreasing: {e1} {e10} {e100}"
        );
        // At least first order: tenfold steps should shrink the error by
        // clearly more than a factor of ~5.
        assert!(e10 < e1 / 5.0, "e1={e1}, e10={e10}");
        assert!(e100 < e10 / 5.0, "e10={e10}, e100={e100}");
    }

    #[test]
    fn clamp_zeroes_slow_knots_only() {
        let knots = KnotTrajectory::new(
            vec![0.0, 0.1, 0.2],
            vec![
                w6([0.01, 0.2, 0.0, 0.0, 0.0, 0.5]),
                w6([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
                w6([0.03, 0.0, 0.0, 0.0, 0.0, 0.0]),
            ],
        )
        .unwrap();
        let clamped = clamp_stationary(&knots, 0.03);
        // 0.01 < threshold: zeroed entirely, including its other components.
        assert_eq!(*clamped.knot(0), BodyVelocity::zero());
        // 1.0 >= threshold: unchanged.
        assert_eq!(clamped.knot(1), knots.knot(1));
        // Exactly at the threshold: strict inequality, unchanged.
        assert_eq!(clamped.knot(2), knots.knot(2));
    }

    #[test]
    fn clamp_is_idempotent() {
        let knots = KnotTrajectory::new(
            vec![0.0, 0.1],
            vec![
                w6([0.01, 0.0, 0.0, 0.0, 0.0, 0.1]),
                w6([5.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
            ],
        )
        .unwrap();
        let once = clamp_stationary(&knots, 0.03);
        let twice = clamp_stationary(&once, 0.03);
        assert_eq!(once, twice);
    }

    #[test]
    fn accumulate_no_intervals_is_single_identity_pose() {
        let traj = accumulate(0.0, &RigidTransform::identity(), &[], &[]).unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.poses[0], RigidTransform::identity());
    }

    #[test]
    fn accumulate_two_translations() {
        let step = RigidTransform::new(Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0));
        let traj =
            accumulate(0.0, &RigidTransform::identity(), &[0.1, 0.2], &[step, step]).unwrap();
        assert_eq!(traj.len(), 3);
        assert_relative_eq!(
            traj.poses[2].translation,
            Vector3::new(2.0, 0.0, 0.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn forward_motion_moves_world_pose_forward() {
        // A knot trajectory driving straight at 1 m/s for 2 s ends 2 m ahead.
        let knots = KnotTrajectory::new(
            vec![0.0, 1.0, 2.0],
            vec![w6([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]); 3],
        )
        .unwrap();
        let traj = integrate_trajectory(&knots, &IntegratorConfig::default()).unwrap();
        assert_relative_eq!(
            traj.poses[2].translation,
            Vector3::new(2.0, 0.0, 0.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn integrated_rotations_stay_orthonormal() {
        let w = w6([3.0, 0.0, 0.0, 0.02, 0.01, 0.3]);
        let knots = KnotTrajectory::new((0..2500).map(|i| i as f64 * 0.1).collect(), vec![w; 2500])
            .unwrap();
        let cfg = IntegratorConfig {
            steps: 2,
            ..IntegratorConfig::default()
        };
        let traj = integrate_trajectory(&knots, &cfg).unwrap();
        for pose in &traj.poses {
            assert!(pose.orthonormality_defect() < 1e-9);
        }
    }

    #[test]
    fn trajectory_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        let knots = KnotTrajectory::new(
            vec![0.0, 0.1, 0.2],
            vec![
                w6([5.0, 0.0, 0.0, 0.0, 0.0, 0.3]),
                w6([5.5, 0.0, 0.0, 0.0, 0.0, 0.2]),
                w6([6.0, 0.0, 0.0, 0.0, 0.0, 0.1]),
            ],
        )
        .unwrap();
        let traj = integrate_trajectory(&knots, &IntegratorConfig::default()).unwrap();
        write_trajectory(&path, &traj).unwrap();
        let loaded = read_trajectory(&path).unwrap();
        assert_eq!(loaded.stamps, traj.stamps);
        for (a, b) in loaded.poses.iter().zip(&traj.poses) {
            assert_relative_eq!(a.rotation, b.rotation, epsilon = 1e-15);
            assert_relative_eq!(a.translation, b.translation, epsilon = 1e-15);
        }
    }
}
