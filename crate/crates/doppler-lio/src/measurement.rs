//! Doppler and gyroscope error models and their linear factor contributions.
//!
//! Both models are linear in the body velocity, which is what makes the
//! whole estimation problem a single linear solve. The Doppler row projects
//! the vehicle velocity onto the beam direction through the extrinsic
//! adjoint; the gyro row reads the angular block through the extrinsic
//! rotation.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::{Matrix3, Matrix6, RowVector6, Vector3, Vector6};

use crate::bias::BiasModel;
use crate::error::{Error, Result};
use crate::lie::{adjoint, Adjoint6, BodyVelocity, RigidTransform};
use crate::pointcloud::{BinGrid, DopplerReturn};

/// Sensor mounting geometry, cached in the forms the measurement models use.
///
/// `t_sv` maps vehicle coordinates into sensor coordinates, so its adjoint
/// maps vehicle twists into sensor twists. `position` is the sensor origin
/// expressed in the vehicle frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Extrinsics {
    pub t_sv: RigidTransform,
    pub ad_sv: Adjoint6,
    pub r_sv: Matrix3<f64>,
    pub position: Vector3<f64>,
}

impl Extrinsics {
    /// Builds extrinsics from the mounting pose of the sensor: `pose_vs`
    /// maps sensor coordinates into vehicle coordinates (rotation = sensor
    /// axes in the vehicle frame, translation = sensor position).
    pub fn from_sensor_pose(pose_vs: &RigidTransform) -> Result<Self> {
        if pose_vs.orthonormality_defect() > 1e-9 {
            return Err(Error::Config(
                "extrinsic rotation is not orthonormal".into(),
            ));
        }
        let t_sv = pose_vs.inverse();
        let ad_sv = adjoint(&t_sv)?;
        Ok(Self {
            r_sv: t_sv.rotation,
            position: pose_vs.translation,
            t_sv,
            ad_sv,
        })
    }

    pub fn identity() -> Self {
        Self::from_sensor_pose(&RigidTransform::identity()).expect("identity pose")
    }

    /// Beam direction of a sensor-frame point, rotated into the vehicle frame.
    pub fn beam_direction_vehicle(&self, q: &Vector3<f64>) -> Result<Vector3<f64>> {
        let norm = q.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidPoint);
        }
        Ok(self.r_sv.transpose() * (q / norm))
    }
}

/// One gyroscope sample: angular rates in the sensor frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GyroSample {
    pub timestamp: f64,
    pub rates: Vector3<f64>,
}

/// Noise and prior configuration of the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseConfig {
    /// Doppler measurement variance (m^2/s^2).
    pub r_dop: f64,
    /// Gyroscope covariance diagonal (rad^2/s^2).
    pub r_gyro_diag: Vector3<f64>,
    /// Power-spectral-density diagonal of the velocity random walk.
    pub qc_diag: Vector6<f64>,
    /// Covariance diagonal of the kinematic penalty, one entry per penalized
    /// dimension (lateral, vertical, roll, pitch).
    pub qz_diag: [f64; 4],
    /// Isotropic information anchoring the first knot.
    pub initial_prior_info: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            r_dop: 0.0025,
            r_gyro_diag: Vector3::new(1e-4, 1e-4, 1e-4),
            qc_diag: Vector6::new(1.0, 1.0, 1.0, 0.1, 0.1, 0.1),
            qz_diag: [0.01, 0.01, 0.001, 0.001],
            initial_prior_info: 1e-6,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_dop > 0.0) {
            return Err(Error::Config("r_dop must be positive".into()));
        }
        if self.r_gyro_diag.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("r_gyro_diag entries must be positive".into()));
        }
        if self.qc_diag.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("qc_diag entries must be positive".into()));
        }
        if self.qz_diag.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("qz_diag entries must be positive".into()));
        }
        if !(self.initial_prior_info > 0.0) {
            return Err(Error::Config("initial_prior_info must be positive".into()));
        }
        Ok(())
    }

    pub fn qc(&self) -> Matrix6<f64> {
        Matrix6::from_diagonal(&self.qc_diag)
    }

    /// The constant selector extracting (lateral, vertical, roll, pitch),
    /// i.e. twist components 1..=4 in (nu, omega) order. Forward velocity
    /// and yaw are never penalized.
    pub fn h_kin(&self) -> nalgebra::SMatrix<f64, 4, 6> {
        let mut h = nalgebra::SMatrix::<f64, 4, 6>::zeros();
        for (row, comp) in [1usize, 2, 3, 4].iter().enumerate() {
            h[(row, *comp)] = 1.0;
        }
        h
    }

    pub fn qz_inv(&self) -> nalgebra::SMatrix<f64, 4, 4> {
        nalgebra::SMatrix::<f64, 4, 4>::from_diagonal(&nalgebra::SVector::<f64, 4>::from([
            1.0 / self.qz_diag[0],
            1.0 / self.qz_diag[1],
            1.0 / self.qz_diag[2],
            1.0 / self.qz_diag[3],
        ]))
    }
}

/// The 1x6 Doppler measurement row `(1/|q|) [q^T 0] Ad_sv`, equal to
/// `[qhat_v^T, (p x qhat_v)^T]` with `qhat_v` the beam direction in the
/// vehicle frame and `p` the sensor position (the lever arm through which
/// Doppler senses angular velocity).
pub fn doppler_row(q: &Vector3<f64>, extrinsics: &Extrinsics) -> Result<RowVector6<f64>> {
    let norm = q.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::InvalidPoint);
    }
    let mut selector = RowVector6::zeros();
    selector
        .fixed_view_mut::<1, 3>(0, 0)
        .copy_from(&(q.transpose() / norm));
    Ok(selector * extrinsics.ad_sv.matrix())
}

/// Doppler error `y - row(q) * w - h(bin, range)` for one return.
pub fn doppler_error(
    ret: &DopplerReturn,
    bias: &BiasModel,
    grid: &BinGrid,
    w: &BodyVelocity,
    extrinsics: &Extrinsics,
) -> Result<f64> {
    let row = doppler_row(&ret.q, extrinsics)?;
    let predicted_bias = match grid.bin_of(ret) {
        Some(bin) => bias.predict(bin, ret.range)?.unwrap_or(0.0),
        None => 0.0,
    };
    Ok(ret.doppler - (row * w.to_vector())[0] - predicted_bias)
}

/// Gyroscope error `(y - bias) - R_sv * omega(w)`; only the angular block of
/// the twist enters.
pub fn gyro_error(
    sample: &GyroSample,
    w: &BodyVelocity,
    extrinsics: &Extrinsics,
    gyro_bias: &Vector3<f64>,
) -> Vector3<f64> {
    (sample.rates - gyro_bias) - extrinsics.r_sv * w.omega
}

/// The constant 3x6 gyro measurement rows `[0, R_sv]`.
pub fn gyro_rows(extrinsics: &Extrinsics) -> nalgebra::SMatrix<f64, 3, 6> {
    let mut rows = nalgebra::SMatrix::<f64, 3, 6>::zeros();
    rows.fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&extrinsics.r_sv);
    rows
}

/// Information contributions of a stack of measurement rows with a shared
/// scalar variance: `(A^T A / r, A^T y / r)`.
///
/// The model is linear, so accumulating these blocks and solving once is
/// exact; no iteration or relinearization is involved.
pub fn factor_contribution(
    rows: &[RowVector6<f64>],
    values: &[f64],
    variance: f64,
) -> Result<(Matrix6<f64>, Vector6<f64>)> {
    if rows.len() != values.len() {
        return Err(Error::Config(format!(
            "factor_contribution: {} rows but {} values",
            rows.len(),
            values.len()
        )));
    }
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::Config(
            "factor_contribution: variance must be positive definite".into(),
        ));
    }
    let inv = 1.0 / variance;
    let mut info = Matrix6::zeros();
    let mut vec = Vector6::zeros();
    for (row, y) in rows.iter().zip(values) {
        let col = row.transpose();
        info += col * row * inv;
        vec += col * (y * inv);
    }
    Ok((info, vec))
}

/// Loads a gyro CSV with header `timestamp_s,wx_rad_s,wy_rad_s,wz_rad_s`.
pub fn load_gyro_csv(path: &Path) -> Result<Vec<GyroSample>> {
    let file =
        File::open(path).map_err(|e| Error::Data(format!("gyro file {}: {e}", path.display())))?;
    let mut samples = Vec::new();
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line_no == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Data(format!(
                "gyro file line {}: expected 4 fields, got {}",
                line_no + 1,
                fields.len()
            )));
        }
        let mut vals = [0.0f64; 4];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f.parse().map_err(|_| {
                Error::Data(format!(
                    "gyro file line {}: unparseable field '{f}'",
                    line_no + 1
                ))
            })?;
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "gyro file line {}: non-finite field",
                line_no + 1
            )));
        }
        samples.push(GyroSample {
            timestamp: vals[0],
            rates: Vector3::new(vals[1], vals[2], vals[3]),
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias::BiasModel;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::FRAC_PI_2;

    fn extrinsics_at(position: Vector3<f64>) -> Extrinsics {
        Extrinsics::from_sensor_pose(&RigidTransform::new(Matrix3::identity(), position)).unwrap()
    }

    fn random_extrinsics(rng: &mut StdRng) -> Extrinsics {
        let w = BodyVelocity::new(
            Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ),
            Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ),
        );
        Extrinsics::from_sensor_pose(&crate::lie::exp_twist(&w)).unwrap()
    }

    #[test]
    fn doppler_row_identity_extrinsics_forward_point() {
        let row = doppler_row(&Vector3::new(10.0, 0.0, 0.0), &Extrinsics::identity()).unwrap();
        assert_relative_eq!(
            row,
            RowVector6::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn doppler_row_zero_lever_arm_has_zero_angular_block() {
        let ext = extrinsics_at(Vector3::zeros());
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..20 {
            let q = Vector3::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            );
            if q.norm() < 1e-3 {
                continue;
            }
            let row = doppler_row(&q, &ext).unwrap();
            assert_relative_eq!(row[3], 0.0, epsilon = 1e-15);
            assert_relative_eq!(row[4], 0.0, epsilon = 1e-15);
            assert_relative_eq!(row[5], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn doppler_row_lever_arm_case() {
        // Sensor 1 m forward, beam to the left: angular sensitivity is
        // (p x qhat) = (1,0,0) x (0,1,0) = (0,0,1).
        let ext = extrinsics_at(Vector3::new(1.0, 0.0, 0.0));
        let row = doppler_row(&Vector3::new(0.0, 5.0, 0.0), &ext).unwrap();
        assert_relative_eq!(
            row,
            RowVector6::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0),
            epsilon = 1e-14
        );
    }

    #[test]
    fn doppler_row_adjoint_and_lever_arm_forms_agree() {
        let mut rng = StdRng::seed_from_u64(5);
        for _ in 0..1000 {
            let ext = random_extrinsics(&mut rng);
            let q = Vector3::new(
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
            );
            if q.norm() < 0.1 {
                continue;
            }
            let row = doppler_row(&q, &ext).unwrap();
            // Lever-arm form built independently.
            let qhat_v = ext.beam_direction_vehicle(&q).unwrap();
            let angular = ext.position.cross(&qhat_v);
            let expected = RowVector6::new(
                qhat_v.x, qhat_v.y, qhat_v.z, angular.x, angular.y, angular.z,
            );
            assert_relative_eq!(row, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn doppler_row_is_range_invariant() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..100 {
            let ext = random_extrinsics(&mut rng);
            let q = Vector3::new(1.0, -2.0, 0.5);
            let row1 = doppler_row(&q, &ext).unwrap();
            let row2 = doppler_row(&(q * rng.gen_range(0.1..100.0)), &ext).unwrap();
            assert_relative_eq!(row1, row2, epsilon = 1e-12);
        }
    }

    #[test]
    fn doppler_row_rejects_zero_point() {
        assert!(doppler_row(&Vector3::zeros(), &Extrinsics::identity()).is_err());
    }

    fn plain_return(q: Vector3<f64>, doppler: f64) -> DopplerReturn {
        DopplerReturn::from_raw(q, doppler, 0.05, 0).unwrap()
    }

    #[test]
    fn doppler_error_zero_velocity_returns_raw_measurement() {
        let grid = BinGrid::default();
        let bias = BiasModel::zero(grid.rows(), grid.cols());
        let ret = plain_return(Vector3::new(10.0, 0.0, 0.0), -3.25);
        let e = doppler_error(
            &ret,
            &bias,
            &grid,
            &BodyVelocity::zero(),
            &Extrinsics::identity(),
        )
        .unwrap();
        assert_eq!(e, -3.25);
    }

    #[test]
    fn doppler_error_consistent_measurement_is_zero() {
        // qhat = (0.6, 0.8, 0), nu = (1, 2, 0): y = 0.6 + 1.6 = 2.2.
        let grid = BinGrid::default();
        let bias = BiasModel::zero(grid.rows(), grid.cols());
        let ret = plain_return(Vector3::new(3.0, 4.0, 0.0), 2.2);
        let w = BodyVelocity::new(Vector3::new(1.0, 2.0, 0.0), Vector3::zeros());
        let e = doppler_error(&ret, &bias, &grid, &w, &Extrinsics::identity()).unwrap();
        assert_relative_eq!(e, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn doppler_error_is_affine_in_velocity() {
        let grid = BinGrid::default();
        let bias = BiasModel::zero(grid.rows(), grid.cols());
        let ret = plain_return(Vector3::new(4.0, 8.0, 16.0), 0.5);
        let mut rng = StdRng::seed_from_u64(11);
        let ext = random_extrinsics(&mut rng);
        let w1 = BodyVelocity::new(Vector3::new(1.0, 2.0, 4.0), Vector3::new(0.5, 0.25, 0.125));
        let w2 = BodyVelocity::new(Vector3::new(-2.0, 0.5, 1.0), Vector3::new(0.0, -0.5, 0.25));
        let sum = BodyVelocity::new(w1.nu + w2.nu, w1.omega + w2.omega);
        let e = |w: &BodyVelocity| doppler_error(&ret, &bias, &grid, w, &ext).unwrap();
        let residual = e(&sum) - e(&w1) - e(&w2) + e(&BodyVelocity::zero());
        assert!(residual.abs() < 1e-12, "affine defect {residual}");
    }

    #[test]
    fn gyro_error_zero_velocity_returns_measurement() {
        let sample = GyroSample {
            timestamp: 0.0,
            rates: Vector3::new(0.1, -0.2, 0.3),
        };
        let e = gyro_error(
            &sample,
            &BodyVelocity::zero(),
            &Extrinsics::identity(),
            &Vector3::zeros(),
        );
        assert_eq!(e, sample.rates);
    }

    #[test]
    fn gyro_error_consistent_yaw_rate_is_zero() {
        let sample = GyroSample {
            timestamp: 0.0,
            rates: Vector3::new(0.0, 0.0, 0.5),
        };
        let w = BodyVelocity::new(Vector3::zeros(), Vector3::new(0.0, 0.0, 0.5));
        let e = gyro_error(&sample, &w, &Extrinsics::identity(), &Vector3::zeros());
        assert_relative_eq!(e, Vector3::zeros(), epsilon = 1e-15);
    }

    #[test]
    fn gyro_error_frame_convention() {
        // Sensor mounted with a +90 degree z-rotation. A vehicle roll rate
        // (1, 0, 0) must read (0, -1, 0) on the sensor's axes.
        let pose = RigidTransform::new(
            crate::lie::rotation_about(&Vector3::z(), FRAC_PI_2),
            Vector3::zeros(),
        );
        let ext = Extrinsics::from_sensor_pose(&pose).unwrap();
        let w = BodyVelocity::new(Vector3::zeros(), Vector3::new(1.0, 0.0, 0.0));
        let predicted = ext.r_sv * w.omega;
        assert_relative_eq!(predicted, Vector3::new(0.0, -1.0, 0.0), epsilon = 1e-14);

        let sample = GyroSample {
            timestamp: 0.0,
            rates: Vector3::new(0.0, -1.0, 0.0),
        };
        let e = gyro_error(&sample, &w, &ext, &Vector3::zeros());
        assert_relative_eq!(e, Vector3::zeros(), epsilon = 1e-14);
    }

    #[test]
    fn gyro_error_ignores_translational_block() {
        let mut rng = StdRng::seed_from_u64(13);
        let ext = random_extrinsics(&mut rng);
        let sample = GyroSample {
            timestamp: 0.0,
            rates: Vector3::new(0.2, 0.1, -0.3),
        };
        let omega = Vector3::new(0.4, -0.1, 0.2);
        let bias = Vector3::new(0.01, 0.02, 0.03);
        let e1 = gyro_error(
            &sample,
            &BodyVelocity::new(Vector3::zeros(), omega),
            &ext,
            &bias,
        );
        let e2 = gyro_error(
            &sample,
            &BodyVelocity::new(Vector3::new(100.0, -50.0, 25.0), omega),
            &ext,
            &bias,
        );
        assert_eq!(e1, e2);
    }

    #[test]
    fn factor_contribution_empty_is_zero() {
        let (info, vec) = factor_contribution(&[], &[], 1.0).unwrap();
        assert_eq!(info, Matrix6::zeros());
        assert_eq!(vec, Vector6::zeros());
    }

    #[test]
    fn factor_contribution_single_row_outer_product() {
        let row = RowVector6::new(1.0, 2.0, 0.0, 0.0, 0.0, -1.0);
        let (info, vec) = factor_contribution(&[row], &[3.0], 0.5).unwrap();
        assert_relative_eq!(info, row.transpose() * row * 2.0, epsilon = 1e-15);
        assert_relative_eq!(vec, row.transpose() * 6.0, epsilon = 1e-15);
    }

    #[test]
    fn factor_contribution_is_additive() {
        let mut rng = StdRng::seed_from_u64(17);
        let rows: Vec<RowVector6<f64>> = (0..10)
            .map(|_| RowVector6::from_fn(|_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let values: Vec<f64> = (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (batch_info, batch_vec) = factor_contribution(&rows, &values, 0.3).unwrap();
        let mut sum_info = Matrix6::zeros();
        let mut sum_vec = Vector6::zeros();
        for (row, value) in rows.iter().zip(&values) {
            let (i, v) = factor_contribution(std::slice::from_ref(row), &[*value], 0.3).unwrap();
            sum_info += i;
            sum_vec += v;
        }
        assert_relative_eq!(batch_info, sum_info, epsilon = 1e-12);
        assert_relative_eq!(batch_vec, sum_vec, epsilon = 1e-12);
    }

    #[test]
    fn factor_contribution_rejects_bad_variance() {
        assert!(factor_contribution(&[], &[], 0.0).is_err());
        assert!(factor_contribution(&[], &[], -1.0).is_err());
    }

    #[test]
    fn gyro_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gyro.csv");
        std::fs::write(
            &path,
            "timestamp_s,wx_rad_s,wy_rad_s,wz_rad_s\n0.0,0.1,0.2,0.3\n0.01,0.4,0.5,0.6\n",
        )
        .unwrap();
        let samples = load_gyro_csv(&path).unwrap();
        assert_eq!(samples.len(), 2);
        assert_eq!(samples[1].rates, Vector3::new(0.4, 0.5, 0.6));
    }
}
