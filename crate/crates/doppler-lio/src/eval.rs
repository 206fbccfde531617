//! Relative odometry error in the KITTI style: translational error (%) and
//! rotational error (deg per 100 m), averaged over path segments of 100 m to
//! 800 m starting at every pose.
//!
//! Estimate and groundtruth are associated by nearest timestamp (within half
//! a frame period), segment end points are the first groundtruth pose whose
//! path distance reaches the segment length, and errors are normalized by
//! the nominal segment length.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::integrator::Trajectory;

/// Segment lengths of the metric (m).
pub const SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

/// Errors aggregated for one segment length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthError {
    pub length: f64,
    /// Mean translational error (%).
    pub translation_pct: f64,
    /// Mean rotational error (deg / 100 m).
    pub rotation_deg_per_100m: f64,
    pub segments: usize,
}

/// Mean per-stage wall-clock timings of the pipeline (ms). Stage order is
/// fixed: preprocess, ransac, solve, integrate.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StageTimings {
    pub preprocess_ms: f64,
    pub ransac_ms: f64,
    pub solve_ms: f64,
    pub integrate_ms: f64,
    pub total_ms: f64,
    pub p95_total_ms: f64,
    pub frames: usize,
}

impl StageTimings {
    pub fn stage_rows(&self) -> [(&'static str, f64); 4] {
        [
            ("preprocess", self.preprocess_ms),
            ("ransac", self.ransac_ms),
            ("solve", self.solve_ms),
            ("integrate", self.integrate_ms),
        ]
    }
}

/// Per-length and overall relative odometry errors, plus pipeline timings
/// when the caller measured them.
#[derive(Debug, Clone, PartialEq)]
pub struct OdomErrorReport {
    pub per_length: Vec<LengthError>,
    pub avg_translation_pct: f64,
    pub avg_rotation_deg_per_100m: f64,
    pub total_segments: usize,
    /// Set when the trajectory was too short for any segment length.
    pub too_short: bool,
    pub timings: Option<StageTimings>,
}

impl OdomErrorReport {
    fn empty() -> Self {
        Self {
            per_length: Vec::new(),
            avg_translation_pct: 0.0,
            avg_rotation_deg_per_100m: 0.0,
            total_segments: 0,
            too_short: true,
            timings: None,
        }
    }
}

fn rotation_angle(r: &nalgebra::Matrix3<f64>) -> f64 {
    (((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0)).acos()
}

/// Associates estimate poses to groundtruth poses by nearest timestamp,
/// requiring the match to fall within `max_gap`.
fn associate(est: &Trajectory, gt: &Trajectory, max_gap: f64) -> Vec<(usize, usize)> {
    let mut matches = Vec::new();
    let mut gi = 0usize;
    for (ei, &t) in est.stamps.iter().enumerate() {
        while gi + 1 < gt.stamps.len() && (gt.stamps[gi + 1] - t).abs() <= (gt.stamps[gi] - t).abs()
        {
            gi += 1;
        }
        if (gt.stamps[gi] - t).abs() <= max_gap {
            matches.push((ei, gi));
        }
    }
    matches
}

/// Computes the KITTI-style relative error report of an estimated trajectory
/// against groundtruth. Trajectories shorter than the smallest segment
/// length produce an empty report flagged `too_short`.
pub fn kitti_errors(estimate: &Trajectory, groundtruth: &Trajectory) -> Result<OdomErrorReport> {
    if estimate.len() < 2 || groundtruth.len() < 2 {
        return Ok(OdomErrorReport::empty());
    }
    let frame_period = {
        let mut deltas: Vec<f64> = groundtruth.stamps.windows(2).map(|w| w[1] - w[0]).collect();
        deltas.sort_by(|a, b| a.partial_cmp(b).expect("finite stamps"));
        deltas[deltas.len() / 2]
    };
    let matches = associate(estimate, groundtruth, frame_period / 2.0);
    if matches.len() < 2 {
        return Err(Error::Data(
            "estimate and groundtruth share no associated poses".into(),
        ));
    }

    // Cumulative groundtruth path distance at each matched pose.
    let gt_pose = |m: &(usize, usize)| &groundtruth.poses[m.1];
    let est_pose = |m: &(usize, usize)| &estimate.poses[m.0];
    let mut distance = Vec::with_capacity(matches.len());
    let mut acc = 0.0;
    distance.push(0.0);
    for pair in matches.windows(2) {
        acc += (gt_pose(&pair[1]).translation - gt_pose(&pair[0]).translation).norm();
        distance.push(acc);
    }

    let mut per_length = Vec::new();
    let mut sum_t = 0.0;
    let mut sum_r = 0.0;
    let mut total = 0usize;
    for &length in &SEGMENT_LENGTHS {
        let mut t_sum = 0.0;
        let mut r_sum = 0.0;
        let mut count = 0usize;
        let mut end = 0usize;
        for start in 0..matches.len() {
            if end < start {
                end = start;
            }
            // First pose whose path distance from `start` reaches `length`.
            while end < matches.len() && distance[end] - distance[start] < length {
                end += 1;
            }
            if end >= matches.len() {
                break;
            }
            let gt_rel = gt_pose(&matches[start])
                .inverse()
                .compose(gt_pose(&matches[end]));
            let est_rel = est_pose(&matches[start])
                .inverse()
                .compose(est_pose(&matches[end]));
            let error = gt_rel.inverse().compose(&est_rel);
            t_sum += error.translation.norm() / length * 100.0;
            r_sum += rotation_angle(&error.rotation).to_degrees() / length * 100.0;
            count += 1;
        }
        if count > 0 {
            per_length.push(LengthError {
                length,
                translation_pct: t_sum / count as f64,
                rotation_deg_per_100m: r_sum / count as f64,
                segments: count,
            });
            sum_t += t_sum;
            sum_r += r_sum;
            total += count;
        }
    }

    if total == 0 {
        return Ok(OdomErrorReport::empty());
    }
    Ok(OdomErrorReport {
        per_length,
        avg_translation_pct: sum_t / total as f64,
        avg_rotation_deg_per_100m: sum_r / total as f64,
        total_segments: total,
        too_short: false,
        timings: None,
    })
}

/// Writes the report CSV: one row per length plus a summary row.
pub fn write_report_csv(path: &Path, report: &OdomErrorReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "length_m,trans_pct,rot_deg_per_100m,segments")?;
    for row in &report.per_length {
        writeln!(
            w,
            "{},{},{},{}",
            row.length, row.translation_pct, row.rotation_deg_per_100m, row.segments
        )?;
    }
    writeln!(
        w,
        "overall,{},{},{}",
        report.avg_translation_pct, report.avg_rotation_deg_per_100m, report.total_segments
    )?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::RigidTransform;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix3, Vector3};

    /// Straight-line trajectory along x at 1 m per pose.
    fn straight_line(poses: usize, spacing: f64) -> Trajectory {
        Trajectory {
            stamps: (0..poses).map(|i| i as f64 * 0.1).collect(),
            poses: (0..poses)
                .map(|i| {
                    RigidTransform::new(
                        Matrix3::identity(),
                        Vector3::new(i as f64 * spacing, 0.0, 0.0),
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn identical_trajectories_have_zero_error() {
        let gt = straight_line(1100, 1.0);
        let report = kitti_errors(&gt, &gt).unwrap();
        assert!(!report.too_short);
        assert_eq!(report.avg_translation_pct, 0.0);
        assert_eq!(report.avg_rotation_deg_per_100m, 0.0);
        assert_eq!(report.per_length.len(), SEGMENT_LENGTHS.len());
    }

    #[test]
    fn uniformly_scaled_estimate_gives_one_percent_error() {
        // 1000 m straight path at exact 1 m spacing; positions scaled by
        // 1.01. Every segment of length L ends exactly at distance L, so the
        // translational error is exactly 1% at every length.
        let gt = straight_line(1001, 1.0);
        let mut est = gt.clone();
        for pose in &mut est.poses {
            pose.translation *= 1.01;
        }
        let report = kitti_errors(&est, &gt).unwrap();
        for row in &report.per_length {
            assert_relative_eq!(row.translation_pct, 1.0, epsilon = 1e-9);
            assert_relative_eq!(row.rotation_deg_per_100m, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn yaw_drift_gives_expected_rotational_error() {
        // Estimate yawed by 0.1 degrees per 100 m of straight path: the
        // rotational error is 0.1 deg/100m at every length.
        let gt = straight_line(1001, 1.0);
        let mut est = gt.clone();
        for (i, pose) in est.poses.iter_mut().enumerate() {
            let yaw = (0.1f64).to_radians() * (i as f64 / 100.0);
            pose.rotation = crate::lie::rotation_about(&Vector3::z(), yaw);
        }
        let report = kitti_errors(&est, &gt).unwrap();
        for row in &report.per_length {
            assert_relative_eq!(row.rotation_deg_per_100m, 0.1, epsilon = 1e-9);
        }
    }

    #[test]
    fn short_trajectory_yields_empty_report() {
        let gt = straight_line(50, 1.0); // 49 m
        let report = kitti_errors(&gt, &gt).unwrap();
        assert!(report.too_short);
        assert!(report.per_length.is_empty());
    }

    #[test]
    fn lengths_longer_than_path_are_absent() {
        let gt = straight_line(351, 1.0); // 350 m path
        let report = kitti_errors(&gt, &gt).unwrap();
        let lengths: Vec<f64> = report.per_length.iter().map(|r| r.length).collect();
        assert_eq!(lengths, vec![100.0, 200.0, 300.0]);
    }

    #[test]
    fn association_tolerates_timestamp_jitter() {
        let gt = straight_line(1001, 1.0);
        let mut est = gt.clone();
        for stamp in &mut est.stamps {
            *stamp += 0.01; // well within half the 0.1 s period
        }
        let report = kitti_errors(&est, &gt).unwrap();
        assert!(!report.too_short);
        assert_relative_eq!(report.avg_translation_pct, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn report_csv_has_summary_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let gt = straight_line(1001, 1.0);
        let report = kitti_errors(&gt, &gt).unwrap();
        write_report_csv(&path, &report).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("length_m,"));
        assert!(text.contains("\noverall,"));
    }
}
