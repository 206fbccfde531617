//! Velocity observability analysis for arbitrary multi-sensor rigs.
//!
//! Stacks the per-return measurement rows of each sensor into the 6x6 Gram
//! matrix `C^T C` and reads the observable subspace off its rank. The
//! analytic nullspaces for one, two, and three lidars (no gyro) are provided
//! in closed form so the numeric result can be checked against them, and the
//! summed-Gram nullspace identity for positive semidefinite matrices is
//! exposed as an executable check.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::lie::{rotation_rpy, skew, RigidTransform};
use crate::measurement::Extrinsics;

/// Relative singular-value threshold for numeric rank decisions.
const RANK_EPS: f64 = 1e-8;

/// One lidar of a rig: its mounting extrinsics and the unit beam directions
/// it observes, expressed in the vehicle frame.
#[derive(Debug, Clone)]
pub struct LidarSpec {
    pub extrinsics: Extrinsics,
    pub directions: Vec<Vector3<f64>>,
}

/// A multi-sensor rig: lidars plus an optional gyroscope.
#[derive(Debug, Clone)]
pub struct RigSpec {
    pub lidars: Vec<LidarSpec>,
    /// Extrinsic rotation of the gyroscope, when one is present.
    pub gyro: Option<Matrix3<f64>>,
}

impl RigSpec {
    pub fn validate(&self) -> Result<()> {
        for (j, lidar) in self.lidars.iter().enumerate() {
            if lidar.directions.is_empty() {
                return Err(Error::Config(format!("sensor {j} has no directions")));
            }
            for d in &lidar.directions {
                if (d.norm() - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!(
                        "sensor {j} has a non-unit direction (norm {})",
                        d.norm()
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Rank/nullspace analysis of a rig.
#[derive(Debug, Clone)]
pub struct ObservabilityReport {
    /// The 6x6 information-form Gram matrix `C^T C`.
    pub ctc: Matrix6<f64>,
    pub rank: usize,
    pub nullity: usize,
    /// Orthonormal basis of the nullspace, one column vector per direction.
    pub nullspace: Vec<Vector6<f64>>,
    /// Rank of each sensor's direction Gram matrix `Q_j`; a deficient one
    /// means the directions themselves are degenerate (line or plane), not
    /// the rig geometry.
    pub per_sensor_q_ranks: Vec<usize>,
    pub gyro_included: bool,
}

impl fmt::Display for ObservabilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "observability: rank {} / 6, nullity {}{}",
            self.rank,
            self.nullity,
            if self.gyro_included {
                " (gyro included)"
            } else {
                ""
            }
        )?;
        for (j, r) in self.per_sensor_q_ranks.iter().enumerate() {
            writeln!(f, "  sensor {j}: direction gram rank {r} / 3")?;
        }
        if self.nullity == 0 {
            writeln!(f, "  all 6 velocity degrees of freedom observable")?;
        } else {
            writeln!(f, "  unobservable directions (nu | omega):")?;
            for v in &self.nullspace {
                writeln!(
                    f,
                    "    [{:+.4} {:+.4} {:+.4} | {:+.4} {:+.4} {:+.4}]",
                    v[0], v[1], v[2], v[3], v[4], v[5]
                )?;
            }
        }
        Ok(())
    }
}

/// The measurement row of one beam direction seen by a sensor at `position`:
/// `[qhat^T, (position x qhat)^T]`.
fn direction_row(position: &Vector3<f64>, qhat: &Vector3<f64>) -> Vector6<f64> {
    let angular = position.cross(qhat);
    Vector6::new(qhat.x, qhat.y, qhat.z, angular.x, angular.y, angular.z)
}

/// Per-sensor direction Gram matrix `Q_j = sum qhat qhat^T`.
fn direction_gram(directions: &[Vector3<f64>]) -> Matrix3<f64> {
    let mut q = Matrix3::zeros();
    for d in directions {
        q += d * d.transpose();
    }
    q
}

fn matrix_rank3(m: &Matrix3<f64>) -> usize {
    let svd = m.svd(false, false);
    let max = svd.singular_values.max();
    if max <= 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > RANK_EPS * max)
        .count()
}

/// Orthonormal nullspace basis of a symmetric 6x6 matrix, with rank decided
/// by singular values against `RANK_EPS * sigma_max`.
fn nullspace6(m: &Matrix6<f64>) -> (usize, Vec<Vector6<f64>>) {
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("svd with v_t");
    let max = svd.singular_values.max();
    let mut null = Vec::new();
    let mut rank = 0;
    for i in 0..6 {
        if max > 0.0 && svd.singular_values[i] > RANK_EPS * max {
            rank += 1;
        } else {
            null.push(v_t.row(i).transpose());
        }
    }
    (rank, null)
}

fn report_from_gram(
    ctc: Matrix6<f64>,
    per_sensor_q_ranks: Vec<usize>,
    gyro_included: bool,
) -> ObservabilityReport {
    let (rank, nullspace) = nullspace6(&ctc);
    ObservabilityReport {
        ctc,
        rank,
        nullity: 6 - rank,
        nullspace,
        per_sensor_q_ranks,
        gyro_included,
    }
}

/// Builds `C^T C` for the rig's lidars (no gyro row) and analyzes its rank.
pub fn build_ctc(rig: &RigSpec) -> Result<ObservabilityReport> {
    rig.validate()?;
    if rig.lidars.is_empty() {
        return Err(Error::Config("rig has no lidar sensors".into()));
    }
    let mut ctc = Matrix6::zeros();
    let mut q_ranks = Vec::with_capacity(rig.lidars.len());
    for lidar in &rig.lidars {
        for d in &lidar.directions {
            let c = direction_row(&lidar.extrinsics.position, d);
            ctc += c * c.transpose();
        }
        q_ranks.push(matrix_rank3(&direction_gram(&lidar.directions)));
    }
    Ok(report_from_gram(ctc, q_ranks, false))
}

/// As [`build_ctc`], additionally appending the gyro block row `[0, R_sv]`.
pub fn build_ctc_with_gyro(rig: &RigSpec) -> Result<ObservabilityReport> {
    let r_sv = rig
        .gyro
        .ok_or_else(|| Error::Config("rig has no gyroscope".into()))?;
    let mut report = if rig.lidars.is_empty() {
        rig.validate()?;
        report_from_gram(Matrix6::zeros(), Vec::new(), false)
    } else {
        build_ctc(rig)?
    };
    let mut gyro_gram = Matrix6::zeros();
    gyro_gram
        .fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(r_sv.transpose() * r_sv));
    let ctc = report.ctc + gyro_gram;
    report = report_from_gram(ctc, report.per_sensor_q_ranks, true);
    Ok(report)
}

/// The factored form of one sensor's Gram matrix,
/// `[I, 0; r^T, I] * [Q, 0; 0, 0] * [I, r^; 0, I]` with `r` the lever
/// vector of the measurement rows (the negated sensor position).
pub fn gram_factorization(lidar: &LidarSpec) -> (Matrix6<f64>, Matrix6<f64>, Matrix6<f64>) {
    let lever = skew(&-lidar.extrinsics.position);
    let mut left = Matrix6::identity();
    left.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&lever.transpose());
    let mut middle = Matrix6::zeros();
    middle
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&direction_gram(&lidar.directions));
    let mut right = Matrix6::identity();
    right.fixed_view_mut::<3, 3>(0, 3).copy_from(&lever);
    (left, middle, right)
}

fn check_symmetric_psd(name: &str, m: &Matrix6<f64>) -> Result<()> {
    if (m - m.transpose()).norm() > 1e-9 {
        return Err(Error::Config(format!("{name} is not symmetric")));
    }
    let eigen = m.symmetric_eigen();
    let max = eigen.eigenvalues.max().max(1.0);
    if eigen.eigenvalues.min() < -1e-9 * max {
        return Err(Error::Config(format!(
            "{name} is not positive semidefinite (min eigenvalue {})",
            eigen.eigenvalues.min()
        )));
    }
    Ok(())
}

/// Orthonormal basis of `null(A + B)` for symmetric PSD `A`, `B`. For such
/// matrices this equals `null(A)` intersected with `null(B)`.
pub fn nullspace_intersection(a: &Matrix6<f64>, b: &Matrix6<f64>) -> Result<Vec<Vector6<f64>>> {
    check_symmetric_psd("A", a)?;
    check_symmetric_psd("B", b)?;
    let (_, null) = nullspace6(&(a + b));
    Ok(null)
}

/// The analytic nullspace of `C^T C` for rigs of one, two, or three lidars
/// without a gyro, assuming each sensor's direction Gram is full rank:
///
/// - one sensor at `p`: three dimensions, `(p^ k, k)` for `k` a basis of R^3;
/// - two sensors at distinct positions: one dimension, `(p2^ p1, p1 - p2)`;
///   coincident sensors reduce to the one-sensor case;
/// - three sensors: empty unless the positions are collinear (one dimension)
///   or degenerate into the two- or one-sensor cases.
pub fn predicted_nullspace_basis(rig: &RigSpec) -> Result<Vec<Vector6<f64>>> {
    if rig.gyro.is_some() {
        return Err(Error::Config(
            "analytic nullspace is defined for lidar-only rigs".into(),
        ));
    }
    let positions: Vec<Vector3<f64>> = rig.lidars.iter().map(|l| l.extrinsics.position).collect();
    match positions.len() {
        1 => Ok(one_sensor_basis(&positions[0])),
        2 => Ok(two_sensor_basis(&positions[0], &positions[1])),
        3 => Ok(three_sensor_basis(&positions)),
        n => Err(Error::Config(format!(
            "analytic nullspace supports 1-3 sensors, got {n}"
        ))),
    }
}

fn one_sensor_basis(p: &Vector3<f64>) -> Vec<Vector6<f64>> {
    let p_hat = skew(p);
    (0..3)
        .map(|i| {
            let mut k = Vector3::zeros();
            k[i] = 1.0;
            let nu = p_hat * k;
            Vector6::new(nu.x, nu.y, nu.z, k.x, k.y, k.z)
        })
        .collect()
}

fn two_sensor_basis(p1: &Vector3<f64>, p2: &Vector3<f64>) -> Vec<Vector6<f64>> {
    if (p1 - p2).norm() < 1e-12 {
        return one_sensor_basis(p1);
    }
    let nu = skew(p2) * p1;
    let omega = p1 - p2;
    vec![Vector6::new(nu.x, nu.y, nu.z, omega.x, omega.y, omega.z)]
}

fn three_sensor_basis(positions: &[Vector3<f64>]) -> Vec<Vector6<f64>> {
    let (p1, p2, p3) = (&positions[0], &positions[1], &positions[2]);
    // Collapse coincident sensors onto the smaller cases.
    let distinct: Vec<&Vector3<f64>> = {
        let mut out: Vec<&Vector3<f64>> = vec![p1];
        for p in [p2, p3] {
            if out.iter().all(|q| (*q - p).norm() >= 1e-12) {
                out.push(p);
            }
        }
        out
    };
    match distinct.len() {
        1 => one_sensor_basis(distinct[0]),
        2 => two_sensor_basis(distinct[0], distinct[1]),
        _ => {
            // Collinear iff p1 lies on the affine line through p2 and p3.
            let d12 = distinct[1] - distinct[0];
            let d13 = distinct[2] - distinct[0];
            if d12.cross(&d13).norm() < 1e-12 * d12.norm() * d13.norm() {
                two_sensor_basis(distinct[0], distinct[1])
            } else {
                Vec::new()
            }
        }
    }
}

/// Deterministic unit directions spread over the sphere (Fibonacci lattice),
/// for synthetic rigs.
pub fn isotropic_directions(n: usize) -> Vec<Vector3<f64>> {
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let radius = (1.0 - z * z).sqrt();
            let phi = 2.0 * std::f64::consts::PI * (i as f64 / golden).fract();
            Vector3::new(radius * phi.cos(), radius * phi.sin(), z).normalize()
        })
        .collect()
}

/// Parses a rig description file. Flat key-value lines (`key: value`, `#`
/// comments), one numbered block per sensor:
///
/// ```text
/// sensor.0.position: 1.0 0.0 0.5
/// sensor.0.rpy_deg: 0 0 0
/// sensor.0.directions: isotropic-200
/// sensor.1.position: -1.0 0.0 0.5
/// sensor.1.directions: dirs.csv
/// gyro: true
/// ```
///
/// `directions` is either `isotropic-N` or a path (relative to the rig file)
/// to a CSV of vehicle-frame unit vectors with header `x,y,z`.
pub fn load_rig(path: &Path) -> Result<RigSpec> {
    let file =
        File::open(path).map_err(|e| Error::Data(format!("rig file {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));

    #[derive(Default)]
    struct Partial {
        position: Option<Vector3<f64>>,
        rpy_deg: Option<Vector3<f64>>,
        directions: Option<String>,
    }
    let mut sensors: Vec<Partial> = Vec::new();
    let mut gyro = false;

    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once(':').ok_or_else(|| {
            Error::Config(format!(
                "rig file line {}: expected 'key: value'",
                line_no + 1
            ))
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key == "gyro" {
            gyro = parse_bool(value)
                .ok_or_else(|| Error::Config(format!("rig file: bad gyro value '{value}'")))?;
            continue;
        }
        let parts: Vec<&str> = key.split('.').collect();
        if parts.len() != 3 || parts[0] != "sensor" {
            return Err(Error::Config(format!("rig file: unknown key '{key}'")));
        }
        let idx: usize = parts[1]
            .parse()
            .map_err(|_| Error::Config(format!("rig file: bad sensor index in '{key}'")))?;
        while sensors.len() <= idx {
            sensors.push(Partial::default());
        }
        match parts[2] {
            "position" => sensors[idx].position = Some(parse_vec3(value)?),
            "rpy_deg" => sensors[idx].rpy_deg = Some(parse_vec3(value)?),
            "directions" => sensors[idx].directions = Some(value.to_string()),
            other => {
                return Err(Error::Config(format!(
                    "rig file: unknown sensor field '{other}'"
                )))
            }
        }
    }

    let mut lidars = Vec::with_capacity(sensors.len());
    for (idx, s) in sensors.into_iter().enumerate() {
        let position = s
            .position
            .ok_or_else(|| Error::Config(format!("sensor {idx}: missing position")))?;
        let rpy = s.rpy_deg.unwrap_or_else(Vector3::zeros);
        let rotation = rotation_rpy(rpy.x.to_radians(), rpy.y.to_radians(), rpy.z.to_radians());
        let extrinsics = Extrinsics::from_sensor_pose(&RigidTransform::new(rotation, position))?;
        let spec = s
            .directions
            .ok_or_else(|| Error::Config(format!("sensor {idx}: missing directions")))?;
        let directions = if let Some(n) = spec.strip_prefix("isotropic-") {
            let n: usize = n.parse().map_err(|_| {
                Error::Config(format!("sensor {idx}: bad isotropic count '{spec}'"))
            })?;
            if n == 0 {
                return Err(Error::Config(format!("sensor {idx}: isotropic-0 is empty")));
            }
            isotropic_directions(n)
        } else {
            load_directions_csv(&base.join(&spec))?
        };
        lidars.push(LidarSpec {
            extrinsics,
            directions,
        });
    }
    Ok(RigSpec {
        lidars,
        gyro: gyro.then(Matrix3::identity),
    })
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" | "1" | "yes" => Some(true),
        "false" | "0" | "no" => Some(false),
        _ => None,
    }
}

fn parse_vec3(s: &str) -> Result<Vector3<f64>> {
    let vals: Vec<f64> = s
        .split_whitespace()
        .map(|f| {
            f.parse()
                .map_err(|_| Error::Config(format!("bad number '{f}'")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != 3 {
        return Err(Error::Config(format!("expected 3 numbers, got '{s}'")));
    }
    Ok(Vector3::new(vals[0], vals[1], vals[2]))
}

fn load_directions_csv(path: &Path) -> Result<Vec<Vector3<f64>>> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("directions file {}: {e}", path.display())))?;
    let mut dirs = Vec::new();
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line_no == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Data(format!(
                "directions line {}: expected 3 fields",
                line_no + 1
            )));
        }
        let mut v = [0.0f64; 3];
        for (out, f) in v.iter_mut().zip(&fields) {
            *out = f.parse().map_err(|_| {
                Error::Data(format!("directions line {}: bad field '{f}'", line_no + 1))
            })?;
        }
        dirs.push(Vector3::new(v[0], v[1], v[2]));
    }
    Ok(dirs)
}

/// Writes the machine-readable report CSV: rank, nullity, per-sensor Q
/// ranks, then one row per nullspace basis vector.
pub fn write_report_csv(path: &Path, report: &ObservabilityReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "field,value")?;
    writeln!(w, "rank,{}", report.rank)?;
    writeln!(w, "nullity,{}", report.nullity)?;
    writeln!(w, "gyro_included,{}", report.gyro_included)?;
    for (j, r) in report.per_sensor_q_ranks.iter().enumerate() {
        writeln!(w, "sensor_{j}_q_rank,{r}")?;
    }
    writeln!(
        w,
        "basis_nu_x,basis_nu_y,basis_nu_z,basis_w_x,basis_w_y,basis_w_z"
    )?;
    for v in &report.nullspace {
        writeln!(w, "{},{},{},{},{},{}", v[0], v[1], v[2], v[3], v[4], v[5])?;
    }
    w.flush()?;
    Ok(())
}
