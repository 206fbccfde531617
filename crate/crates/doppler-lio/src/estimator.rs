//! Linear continuous-time MAP estimation of velocity knots.
//!
//! The state is a sequence of body-velocity knots at frame-boundary times.
//! A white-noise-on-acceleration prior links consecutive knots (velocity
//! random walk), a kinematic penalty shrinks the lateral, vertical, roll,
//! and pitch components of each knot, and Doppler/gyro measurements attach
//! at their exact timestamps via linear interpolation between the two
//! enclosing knots. Everything is linear, so the batch problem is one
//! block-tridiagonal solve and the online problem is the same factors with
//! past knots marginalized out (a Kalman filter in information form).

use nalgebra::{Cholesky, DMatrix, Matrix6, SMatrix, SVector, Vector6};

use crate::error::{Error, Result};
use crate::lie::BodyVelocity;

/// Relative threshold under which an eigenvalue counts as zero when
/// diagnosing a singular system.
const RANK_EPS: f64 = 1e-8;

/// Velocity knots at strictly increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct KnotTrajectory {
    times: Vec<f64>,
    knots: Vec<BodyVelocity>,
}

impl KnotTrajectory {
    pub fn new(times: Vec<f64>, knots: Vec<BodyVelocity>) -> Result<Self> {
        if times.len() != knots.len() {
            return Err(Error::Config(format!(
                "{} knot times but {} knots",
                times.len(),
                knots.len()
            )));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config(
                "knot times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, knots })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn knots(&self) -> &[BodyVelocity] {
        &self.knots
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    pub fn knot(&self, k: usize) -> &BodyVelocity {
        &self.knots[k]
    }

    pub fn set_knot(&mut self, k: usize, w: BodyVelocity) {
        self.knots[k] = w;
    }

    /// Linear interpolation of the velocity at `tau`:
    /// `w(tau) = (1 - alpha) w_k + alpha w_{k+1}`.
    pub fn interpolate(&self, tau: f64) -> Result<BodyVelocity> {
        let (k, alpha) = interval_weight(&self.times, tau)?;
        let a = self.knots[k].to_vector();
        let b = self.knots[k + 1].to_vector();
        Ok(BodyVelocity::from_vector(&(a * (1.0 - alpha) + b * alpha)))
    }
}

/// Locates `tau` within the knot grid: returns the interval index `k` and the
/// interpolation weight `alpha` in `[0, 1]`.
pub fn interval_weight(times: &[f64], tau: f64) -> Result<(usize, f64)> {
    let n = times.len();
    if n < 2 || tau < times[0] || tau > times[n - 1] {
        return Err(Error::OutOfSpan {
            tau,
            start: times.first().copied().unwrap_or(f64::NAN),
            end: times.last().copied().unwrap_or(f64::NAN),
        });
    }
    // Last interval owns its right endpoint.
    let k = match times.binary_search_by(|t| t.partial_cmp(&tau).expect("finite times")) {
        Ok(i) => i.min(n - 2),
        Err(i) => i - 1,
    };
    let alpha = (tau - times[k]) / (times[k + 1] - times[k]);
    Ok((k, alpha))
}

/// A measurement factor reduced to its information-form contribution
/// (`A^T R^-1 A`, `A^T R^-1 y`) plus the interpolation weight of its
/// timestamp within the enclosing knot interval.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalFactor {
    pub info: Matrix6<f64>,
    pub vec: Vector6<f64>,
    pub alpha: f64,
}

impl IntervalFactor {
    /// Builds the contribution of measurement rows `A` with values `y` and
    /// covariance `R` at interpolation weight `alpha`.
    pub fn from_rows<const R: usize>(
        rows: &SMatrix<f64, R, 6>,
        values: &SVector<f64, R>,
        covariance: &SMatrix<f64, R, R>,
        alpha: f64,
    ) -> Result<Self> {
        Cholesky::new(*covariance).ok_or_else(|| {
            Error::Config("measurement covariance is not positive definite".into())
        })?;
        let lambda = covariance
            .try_inverse()
            .ok_or_else(|| Error::Config("measurement covariance is singular".into()))?;
        let info = rows.transpose() * lambda * rows;
        let vec = rows.transpose() * (lambda * values);
        Ok(Self { info, vec, alpha })
    }
}

/// One interval's measurement factors reduced onto its knot pair: the 2x2
/// block neighborhood of information (split with weights `(1 - alpha,
/// alpha)` per factor) and the matching information vector halves.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalAccum {
    pub info_00: Matrix6<f64>,
    pub info_01: Matrix6<f64>,
    pub info_11: Matrix6<f64>,
    pub vec_0: Vector6<f64>,
    pub vec_1: Vector6<f64>,
    pub factors: usize,
}

impl IntervalAccum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.factors == 0
    }

    pub fn add_factor(&mut self, f: &IntervalFactor) {
        let w0 = 1.0 - f.alpha;
        let w1 = f.alpha;
        self.info_00 += f.info * (w0 * w0);
        self.info_01 += f.info * (w0 * w1);
        self.info_11 += f.info * (w1 * w1);
        self.vec_0 += f.vec * w0;
        self.vec_1 += f.vec * w1;
        self.factors += 1;
    }

    /// Fast path for scalar measurements: accumulates the row's outer
    /// product directly, no intermediate factor.
    pub fn add_scalar_row(
        &mut self,
        row: &nalgebra::RowVector6<f64>,
        value: f64,
        inv_variance: f64,
        alpha: f64,
    ) {
        let col = row.transpose();
        let g = col * row * inv_variance;
        let v = col * (value * inv_variance);
        let w0 = 1.0 - alpha;
        let w1 = alpha;
        self.info_00 += g * (w0 * w0);
        self.info_01 += g * (w0 * w1);
        self.info_11 += g * (w1 * w1);
        self.vec_0 += v * w0;
        self.vec_1 += v * w1;
        self.factors += 1;
    }

    pub fn from_factors(factors: &[IntervalFactor]) -> Self {
        let mut acc = Self::new();
        for f in factors {
            acc.add_factor(f);
        }
        acc
    }
}

/// Block-tridiagonal normal equations over stacked velocity knots.
#[derive(Debug, Clone)]
pub struct FactorSystem {
    times: Vec<f64>,
    diag: Vec<Matrix6<f64>>,
    off_diag: Vec<Matrix6<f64>>,
    rhs: Vec<Vector6<f64>>,
}

impl FactorSystem {
    /// An empty system over the given knot times (strictly increasing).
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Config(
                "factor system needs at least one knot".into(),
            ));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config(
                "knot times must be strictly increasing".into(),
            ));
        }
        let k = times.len();
        Ok(Self {
            times,
            diag: vec![Matrix6::zeros(); k],
            off_diag: vec![Matrix6::zeros(); k.saturating_sub(1)],
            rhs: vec![Vector6::zeros(); k],
        })
    }

    pub fn num_knots(&self) -> usize {
        self.diag.len()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn diag_block(&self, k: usize) -> &Matrix6<f64> {
        &self.diag[k]
    }

    pub fn off_diag_block(&self, k: usize) -> &Matrix6<f64> {
        &self.off_diag[k]
    }

    pub fn rhs_block(&self, k: usize) -> &Vector6<f64> {
        &self.rhs[k]
    }

    /// Adds raw information onto knot `k`'s diagonal block.
    pub fn add_diag_block(&mut self, k: usize, m: &Matrix6<f64>) {
        self.diag[k] += m;
    }

    /// Adds raw information onto the `(k, k+1)` off-diagonal block.
    pub fn add_off_diag_block(&mut self, k: usize, m: &Matrix6<f64>) {
        self.off_diag[k] += m;
    }

    pub fn add_rhs(&mut self, k: usize, v: &Vector6<f64>) {
        self.rhs[k] += v;
    }

    /// Anchors knot `k` with a Gaussian prior of the given mean and isotropic
    /// information.
    pub fn add_prior(&mut self, k: usize, mean: &BodyVelocity, info: f64) {
        self.diag[k] += Matrix6::identity() * info;
        self.rhs[k] += mean.to_vector() * info;
    }

    /// Adds the random-walk (white-noise-on-acceleration) prior linking
    /// knots `k-1` and `k`, with covariance `dt * Q_c`.
    pub fn add_wnoa_factor(&mut self, k: usize, dt: f64, qc: &Matrix6<f64>) -> Result<()> {
        if k == 0 || k >= self.num_knots() {
            return Err(Error::Config(format!(
                "wnoa factor index {k} outside 1..{}",
                self.num_knots()
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::Config(format!("wnoa dt must be positive, got {dt}")));
        }
        let q_inv = Cholesky::new(qc * dt)
            .ok_or_else(|| Error::Config("Q_c is not positive definite".into()))?
            .inverse();
        self.diag[k - 1] += q_inv;
        self.diag[k] += q_inv;
        self.off_diag[k - 1] -= q_inv;
        Ok(())
    }

    /// Adds the kinematic penalty `H^T Q_z^-1 H` to knot `k`.
    pub fn add_kinematic_factor(
        &mut self,
        k: usize,
        h: &SMatrix<f64, 4, 6>,
        qz: &SMatrix<f64, 4, 4>,
    ) -> Result<()> {
        self.diag[k] += kinematic_information(h, qz)?;
        Ok(())
    }

    /// Splits a measurement factor across the two knots of `interval` with
    /// weights `(1 - alpha, alpha)`; contributions touch only that 2x2 block
    /// neighborhood.
    pub fn add_measurement_factor<const R: usize>(
        &mut self,
        rows: &SMatrix<f64, R, 6>,
        values: &SVector<f64, R>,
        covariance: &SMatrix<f64, R, R>,
        tau: f64,
        interval: usize,
    ) -> Result<()> {
        if interval + 1 >= self.num_knots() {
            return Err(Error::Config(format!(
                "interval {interval} outside knot grid of {} knots",
                self.num_knots()
            )));
        }
        let (t0, t1) = (self.times[interval], self.times[interval + 1]);
        if tau < t0 || tau > t1 {
            return Err(Error::OutOfSpan {
                tau,
                start: t0,
                end: t1,
            });
        }
        let alpha = (tau - t0) / (t1 - t0);
        let factor = IntervalFactor::from_rows(rows, values, covariance, alpha)?;
        self.add_interval_factor(interval, &factor);
        Ok(())
    }

    /// Accumulates a reduced factor onto interval `k`'s block neighborhood.
    pub fn add_interval_factor(&mut self, interval: usize, f: &IntervalFactor) {
        let w0 = 1.0 - f.alpha;
        let w1 = f.alpha;
        self.diag[interval] += f.info * (w0 * w0);
        self.diag[interval + 1] += f.info * (w1 * w1);
        self.off_diag[interval] += f.info * (w0 * w1);
        self.rhs[interval] += f.vec * w0;
        self.rhs[interval + 1] += f.vec * w1;
    }

    /// Accumulates a whole interval's reduced factors at once.
    pub fn add_interval_accum(&mut self, interval: usize, acc: &IntervalAccum) {
        self.diag[interval] += acc.info_00;
        self.diag[interval + 1] += acc.info_11;
        self.off_diag[interval] += acc.info_01;
        self.rhs[interval] += acc.vec_0;
        self.rhs[interval + 1] += acc.vec_1;
    }

    /// The quadratic objective `1/2 x^T H x - b^T x` of a candidate
    /// trajectory (constant terms dropped); lower is better.
    pub fn quadratic_objective(&self, traj: &KnotTrajectory) -> Result<f64> {
        if traj.len() != self.num_knots() {
            return Err(Error::Config("trajectory size mismatch".into()));
        }
        let xs: Vec<Vector6<f64>> = traj.knots().iter().map(|w| w.to_vector()).collect();
        let mut j = 0.0;
        for k in 0..xs.len() {
            j += 0.5 * (xs[k].transpose() * self.diag[k] * xs[k])[0];
            j -= (self.rhs[k].transpose() * xs[k])[0];
            if k + 1 < xs.len() {
                j += (xs[k].transpose() * self.off_diag[k] * xs[k + 1])[0];
            }
        }
        Ok(j)
    }

    /// Solves the normal equations by block-tridiagonal (block-Thomas)
    /// elimination. A singular system yields a rank-deficiency error naming
    /// the dimension of the unconstrained subspace.
    pub fn solve_batch(&self) -> Result<KnotTrajectory> {
        Ok(self.solve_batch_full()?.0)
    }

    /// As [`FactorSystem::solve_batch`], additionally returning the marginal
    /// covariance of the final knot (the inverse of the last eliminated
    /// diagonal block).
    pub fn solve_batch_full(&self) -> Result<(KnotTrajectory, Matrix6<f64>)> {
        let k = self.num_knots();
        let mut elim_diag = Vec::with_capacity(k);
        let mut elim_rhs = Vec::with_capacity(k);
        let mut chols: Vec<Cholesky<f64, nalgebra::Const<6>>> = Vec::with_capacity(k);

        for i in 0..k {
            let (mut d, mut b) = (self.diag[i], self.rhs[i]);
            if i > 0 {
                let u_prev: &Matrix6<f64> = &self.off_diag[i - 1];
                let prev_chol = &chols[i - 1];
                // W = U^T D_prev^-1, applied via the factorization.
                let solved = prev_chol.solve(u_prev); // D_prev^-1 U
                d -= u_prev.transpose() * solved;
                let rhs_solved = prev_chol.solve(&elim_rhs[i - 1]);
                b -= u_prev.transpose() * rhs_solved;
            }
            let chol = match checked_cholesky(&d) {
                Some(c) => c,
                None => return Err(self.rank_deficiency_error()),
            };
            elim_diag.push(d);
            elim_rhs.push(b);
            chols.push(chol);
        }

        let mut xs = vec![Vector6::zeros(); k];
        xs[k - 1] = chols[k - 1].solve(&elim_rhs[k - 1]);
        for i in (0..k - 1).rev() {
            let adj = elim_rhs[i] - self.off_diag[i] * xs[i + 1];
            xs[i] = chols[i].solve(&adj);
        }

        let final_cov = chols[k - 1].inverse();
        let traj = KnotTrajectory::new(
            self.times.clone(),
            xs.iter().map(BodyVelocity::from_vector).collect(),
        )?;
        Ok((traj, final_cov))
    }

    /// Diagnoses a singular system: assembles the dense matrix and counts
    /// near-zero eigenvalues against `RANK_EPS * lambda_max`.
    fn rank_deficiency_error(&self) -> Error {
        let k = self.num_knots();
        let n = 6 * k;
        let mut dense = DMatrix::zeros(n, n);
        for i in 0..k {
            dense
                .view_mut((6 * i, 6 * i), (6, 6))
                .copy_from(&self.diag[i]);
            if i + 1 < k {
                dense
                    .view_mut((6 * i, 6 * (i + 1)), (6, 6))
                    .copy_from(&self.off_diag[i]);
                dense
                    .view_mut((6 * (i + 1), 6 * i), (6, 6))
                    .copy_from(&self.off_diag[i].transpose());
            }
        }
        let eigen = dense.symmetric_eigen();
        let max = eigen.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let tol = if max > 0.0 { RANK_EPS * max } else { RANK_EPS };
        let nullity = eigen.eigenvalues.iter().filter(|&&l| l <= tol).count();
        Error::RankDeficient {
            nullity: nullity.max(1),
        }
    }
}

/// `H^T Q_z^-1 H`, validating that `Q_z` is positive definite.
pub fn kinematic_information(
    h: &SMatrix<f64, 4, 6>,
    qz: &SMatrix<f64, 4, 4>,
) -> Result<Matrix6<f64>> {
    let qz_inv = Cholesky::new(*qz)
        .ok_or_else(|| Error::Config("Q_z is not positive definite".into()))?
        .inverse();
    Ok(h.transpose() * qz_inv * h)
}

/// Cholesky with an explicit guard against zero or non-finite pivots, which
/// nalgebra can let through on exactly singular input.
fn checked_cholesky(m: &Matrix6<f64>) -> Option<Cholesky<f64, nalgebra::Const<6>>> {
    let chol = Cholesky::new(*m)?;
    let l = chol.l();
    for i in 0..6 {
        let pivot = l[(i, i)];
        if !pivot.is_finite() || pivot <= 0.0 {
            return None;
        }
    }
    Some(chol)
}

/// Marginal state of the online filter: the latest knot's mean and
/// covariance after all older knots have been marginalized out.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub time: f64,
    pub mean: BodyVelocity,
    pub covariance: Matrix6<f64>,
}

impl FilterState {
    /// Initial state from an isotropic information prior (the same anchor
    /// the batch problem places on its first knot), plus optional extra
    /// information such as the first knot's kinematic penalty.
    pub fn from_prior(time: f64, prior_info: f64, extra_info: &Matrix6<f64>) -> Result<Self> {
        let info = Matrix6::identity() * prior_info + extra_info;
        let cov = Cholesky::new(info)
            .ok_or_else(|| Error::Numerical("initial information not positive definite".into()))?
            .inverse();
        Ok(Self {
            time,
            mean: BodyVelocity::zero(),
            covariance: cov,
        })
    }

    /// Advances the filter by one knot interval: augments the state with the
    /// next knot through the random-walk prior, accumulates the interval's
    /// measurement factors (weights `(1 - alpha, alpha)` across old and new
    /// knots) and the new knot's prior information, then marginalizes the
    /// old knot by Schur complement.
    pub fn step(
        &self,
        new_time: f64,
        qc: &Matrix6<f64>,
        interval: &IntervalAccum,
        new_knot_info: &Matrix6<f64>,
    ) -> Result<FilterState> {
        Ok(self
            .step_with_retro(new_time, qc, interval, new_knot_info)?
            .0)
    }

    /// As [`FilterState::step`], additionally returning the marginalized
    /// knot's posterior mean from the joint update (its one-step-smoothed
    /// estimate), which pose integration uses as that knot's final value.
    pub fn step_with_retro(
        &self,
        new_time: f64,
        qc: &Matrix6<f64>,
        interval: &IntervalAccum,
        new_knot_info: &Matrix6<f64>,
    ) -> Result<(FilterState, BodyVelocity)> {
        let dt = new_time - self.time;
        if !(dt > 0.0) {
            return Err(Error::Config(format!(
                "filter step dt must be positive, got {dt}"
            )));
        }
        let old_info = Cholesky::new(self.covariance)
            .ok_or_else(|| self.pd_failure("state covariance"))?
            .inverse();
        let q_inv = Cholesky::new(qc * dt)
            .ok_or_else(|| Error::Config("Q_c is not positive definite".into()))?
            .inverse();

        // Joint information over (old knot, new knot).
        let info_oo = old_info + q_inv + interval.info_00;
        let info_on = interval.info_01 - q_inv;
        let info_nn = q_inv + new_knot_info + interval.info_11;
        let b_o = old_info * self.mean.to_vector() + interval.vec_0;
        let b_n = interval.vec_1;

        // Schur complement onto the new knot.
        let chol_oo = Cholesky::new(info_oo).ok_or_else(|| self.pd_failure("joint information"))?;
        let solved_on = chol_oo.solve(&info_on); // info_oo^-1 info_on
        let marg_info = info_nn - info_on.transpose() * solved_on;
        let marg_b = b_n - info_on.transpose() * chol_oo.solve(&b_o);

        let chol_marg =
            Cholesky::new(marg_info).ok_or_else(|| self.pd_failure("marginal information"))?;
        let mean = chol_marg.solve(&marg_b);

        // The old knot's joint posterior mean given the new knot's.
        let retro = chol_oo.solve(&(b_o - info_on * mean));
        Ok((
            FilterState {
                time: new_time,
                mean: BodyVelocity::from_vector(&mean),
                covariance: chol_marg.inverse(),
            },
            BodyVelocity::from_vector(&retro),
        ))
    }

    fn pd_failure(&self, what: &str) -> Error {
        let eig = self.covariance.symmetric_eigen();
        let min = eig.eigenvalues.min();
        let max = eig.eigenvalues.max();
        Error::Numerical(format!(
            "{what} lost positive definiteness at t={} (covariance eigenvalue range [{min:e}, {max:e}])",
            self.time
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{Matrix1, Matrix3, RowVector6, Vector3};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn uniform_times(k: usize, dt: f64) -> Vec<f64> {
        (0..k).map(|i| i as f64 * dt).collect()
    }

    fn w6(a: f64, b: f64, c: f64, d: f64, e: f64, f: f64) -> BodyVelocity {
        BodyVelocity::from_vector(&Vector6::new(a, b, c, d, e, f))
    }

    #[test]
    fn interpolate_at_knot_is_exact() {
        let traj = KnotTrajectory::new(
            vec![0.0, 0.1, 0.2],
            vec![
                w6(1.0, 0.0, 0.0, 0.0, 0.0, 0.0),
                w6(2.0, 0.0, 0.0, 0.0, 0.0, 0.0),
                w6(3.0, 0.0, 0.0, 0.0, 0.0, 0.0),
            ],
        )
        .unwrap();
        assert_eq!(traj.interpolate(0.1).unwrap(), *traj.knot(1));
        assert_eq!(traj.interpolate(0.0).unwrap(), *traj.knot(0));
        assert_eq!(traj.interpolate(0.2).unwrap(), *traj.knot(2));
    }

    #[test]
    fn interpolate_midpoint_is_mean() {
        let traj = KnotTrajectory::new(
            vec![0.0, 0.1],
            vec![
                w6(1.0, 2.0, 3.0, 4.0, 5.0, 6.0),
                w6(3.0, 4.0, 5.0, 6.0, 7.0, 8.0),
            ],
        )
        .unwrap();
        let mid = traj.interpolate(0.05).unwrap();
        assert_relative_eq!(
            mid.to_vector(),
            Vector6::new(2.0, 3.0, 4.0, 5.0, 6.0, 7.0),
            epsilon = 1e-15
        );
    }

    #[test]
    fn interpolate_quarter_point() {
        let traj = KnotTrajectory::new(
            vec![0.0, 1.0],
            vec![BodyVelocity::zero(), w6(4.0, 0.0, 0.0, 0.0, 0.0, 0.0)],
        )
        .unwrap();
        let w = traj.interpolate(0.25).unwrap();
        assert_relative_eq!(w.nu.x, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn interpolate_outside_span_errors() {
        let traj = KnotTrajectory::new(
            vec![0.0, 0.1],
            vec![BodyVelocity::zero(), BodyVelocity::zero()],
        )
        .unwrap();
        assert!(matches!(
            traj.interpolate(-0.01),
            Err(Error::OutOfSpan { .. })
        ));
        assert!(matches!(
            traj.interpolate(0.11),
            Err(Error::OutOfSpan { .. })
        ));
    }

    #[test]
    fn wnoa_with_anchor_gives_constant_solution() {
        let mut system = FactorSystem::new(uniform_times(6, 0.1)).unwrap();
        let anchor = w6(1.0, -2.0, 0.5, 0.1, -0.2, 0.3);
        system.add_prior(0, &anchor, 1.0);
        let qc = Matrix6::identity();
        for k in 1..6 {
            system.add_wnoa_factor(k, 0.1, &qc).unwrap();
        }
        let traj = system.solve_batch().unwrap();
        for knot in traj.knots() {
            assert_relative_eq!(knot.to_vector(), anchor.to_vector(), epsilon = 1e-9);
        }
    }

    #[test]
    fn wnoa_information_scales_inversely_with_dt() {
        let qc = Matrix6::identity() * 2.0;
        let mut sys_a = FactorSystem::new(uniform_times(2, 0.1)).unwrap();
        sys_a.add_wnoa_factor(1, 0.1, &qc).unwrap();
        let mut sys_b = FactorSystem::new(uniform_times(2, 0.2)).unwrap();
        sys_b.add_wnoa_factor(1, 0.2, &qc).unwrap();
        assert_relative_eq!(
            *sys_a.diag_block(0),
            sys_b.diag_block(0) * 2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn wnoa_rejects_nonpositive_dt() {
        let mut system = FactorSystem::new(uniform_times(2, 0.1)).unwrap();
        assert!(system
            .add_wnoa_factor(1, 0.0, &Matrix6::identity())
            .is_err());
        assert!(system
            .add_wnoa_factor(1, -0.1, &Matrix6::identity())
            .is_err());
    }

    #[test]
    fn wnoa_rejects_non_pd_qc() {
        let mut system = FactorSystem::new(uniform_times(2, 0.1)).unwrap();
        let mut qc = Matrix6::identity();
        qc[(0, 0)] = -1.0;
        assert!(system.add_wnoa_factor(1, 0.1, &qc).is_err());
    }

    fn default_h() -> SMatrix<f64, 4, 6> {
        crate::measurement::NoiseConfig::default().h_kin()
    }

    #[test]
    fn kinematic_ridge_shrinks_only_penalized_components() {
        // One knot, isotropic unit prior toward mu plus kinematic penalty
        // with qz = 0.5: penalized components obey x = mu / (1 + 1/qz) = mu/3,
        // unpenalized components stay at mu.
        let mut system = FactorSystem::new(vec![0.0]).unwrap();
        let mu = w6(2.0, 1.0, -1.0, 0.5, -0.5, 0.25);
        system.add_prior(0, &mu, 1.0);
        let qz = SMatrix::<f64, 4, 4>::identity() * 0.5;
        system.add_kinematic_factor(0, &default_h(), &qz).unwrap();
        let traj = system.solve_batch().unwrap();
        let x = traj.knot(0).to_vector();
        assert_relative_eq!(x[0], mu.to_vector()[0], epsilon = 1e-12);
        assert_relative_eq!(x[5], mu.to_vector()[5], epsilon = 1e-12);
        for i in 1..5 {
            assert_relative_eq!(x[i], mu.to_vector()[i] / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn kinematic_zero_h_is_noop() {
        let mut system = FactorSystem::new(vec![0.0]).unwrap();
        system.add_prior(0, &BodyVelocity::zero(), 1.0);
        let before = *system.diag_block(0);
        system
            .add_kinematic_factor(
                0,
                &SMatrix::<f64, 4, 6>::zeros(),
                &SMatrix::<f64, 4, 4>::identity(),
            )
            .unwrap();
        assert_eq!(*system.diag_block(0), before);
    }

    #[test]
    fn kinematic_huge_qz_is_noop_in_the_limit() {
        let mu = w6(2.0, 1.0, -1.0, 0.5, -0.5, 0.25);
        let mut system = FactorSystem::new(vec![0.0]).unwrap();
        system.add_prior(0, &mu, 1.0);
        let qz = SMatrix::<f64, 4, 4>::identity() * 1e12;
        system.add_kinematic_factor(0, &default_h(), &qz).unwrap();
        let traj = system.solve_batch().unwrap();
        assert_relative_eq!(traj.knot(0).to_vector(), mu.to_vector(), epsilon = 1e-9);
    }

    #[test]
    fn measurement_at_knot_time_loads_single_knot() {
        let mut system = FactorSystem::new(uniform_times(2, 0.1)).unwrap();
        let row = SMatrix::<f64, 1, 6>::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        system
            .add_measurement_factor(
                &row,
                &SVector::<f64, 1>::new(3.0),
                &Matrix1::new(1.0),
                0.0,
                0,
            )
            .unwrap();
        assert_eq!(*system.diag_block(1), Matrix6::zeros());
        assert_eq!(*system.off_diag_block(0), Matrix6::zeros());
        assert_eq!(system.rhs_block(0)[0], 3.0);
        assert_eq!(system.diag_block(0)[(0, 0)], 1.0);
    }

    #[test]
    fn two_half_weight_copies_equal_one_factor() {
        let row = SMatrix::<f64, 1, 6>::new(0.5, -1.0, 2.0, 0.0, 0.25, 1.0);
        let y = SVector::<f64, 1>::new(1.5);
        let tau = 0.075;

        let mut single = FactorSystem::new(uniform_times(2, 0.1)).unwrap();
        single
            .add_measurement_factor(&row, &y, &Matrix1::new(0.5), tau, 0)
            .unwrap();

        let mut doubled = FactorSystem::new(uniform_times(2, 0.1)).unwrap();
        for _ in 0..2 {
            doubled
                .add_measurement_factor(&row, &y, &Matrix1::new(1.0), tau, 0)
                .unwrap();
        }
        assert_eq!(*single.diag_block(0), *doubled.diag_block(0));
        assert_eq!(*single.diag_block(1), *doubled.diag_block(1));
        assert_eq!(*single.off_diag_block(0), *doubled.off_diag_block(0));
        assert_eq!(*single.rhs_block(0), *doubled.rhs_block(0));
        assert_eq!(*single.rhs_block(1), *doubled.rhs_block(1));
    }

    #[test]
    fn measurement_outside_interval_errors() {
        let mut system = FactorSystem::new(uniform_times(3, 0.1)).unwrap();
        let row = SMatrix::<f64, 1, 6>::zeros();
        let err = system.add_measurement_factor(
            &row,
            &SVector::<f64, 1>::zeros(),
            &Matrix1::new(1.0),
            0.15,
            0,
        );
        assert!(matches!(err, Err(Error::OutOfSpan { .. })));
    }

    #[test]
    fn diag_blocks_stay_symmetric() {
        let mut rng = StdRng::seed_from_u64(53);
        let mut system = FactorSystem::new(uniform_times(4, 0.1)).unwrap();
        for k in 1..4 {
            system
                .add_wnoa_factor(k, 0.1, &Matrix6::identity())
                .unwrap();
        }
        for _ in 0..200 {
            let row = SMatrix::<f64, 1, 6>::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let tau: f64 = rng.gen_range(0.0..0.3);
            let interval = ((tau / 0.1).floor() as usize).min(2);
            system
                .add_measurement_factor(
                    &row,
                    &SVector::<f64, 1>::new(rng.gen_range(-1.0..1.0)),
                    &Matrix1::new(0.01),
                    tau,
                    interval,
                )
                .unwrap();
        }
        for k in 0..4 {
            let d = system.diag_block(k);
            assert!((d - d.transpose()).norm() < 1e-12);
        }
    }

    /// Builds a well-posed random system with factors on every interval.
    fn random_system(rng: &mut StdRng, knots: usize) -> FactorSystem {
        let mut system = FactorSystem::new(uniform_times(knots, 0.1)).unwrap();
        system.add_prior(0, &BodyVelocity::zero(), 1e-6);
        for k in 1..knots {
            system
                .add_wnoa_factor(k, 0.1, &Matrix6::identity())
                .unwrap();
        }
        for interval in 0..knots - 1 {
            for _ in 0..8 {
                let row = SMatrix::<f64, 1, 6>::from_fn(|_, _| rng.gen_range(-1.0..1.0));
                let tau = 0.1 * interval as f64 + rng.gen_range(0.0..0.1);
                system
                    .add_measurement_factor(
                        &row,
                        &SVector::<f64, 1>::new(rng.gen_range(-3.0..3.0)),
                        &Matrix1::new(0.05),
                        tau,
                        interval,
                    )
                    .unwrap();
            }
        }
        system
    }

    fn dense_solve(system: &FactorSystem) -> Vec<Vector6<f64>> {
        let k = system.num_knots();
        let n = 6 * k;
        let mut dense = DMatrix::zeros(n, n);
        let mut rhs = nalgebra::DVector::zeros(n);
        for i in 0..k {
            dense
                .view_mut((6 * i, 6 * i), (6, 6))
                .copy_from(system.diag_block(i));
            rhs.rows_mut(6 * i, 6).copy_from(system.rhs_block(i));
            if i + 1 < k {
                dense
                    .view_mut((6 * i, 6 * (i + 1)), (6, 6))
                    .copy_from(system.off_diag_block(i));
                dense
                    .view_mut((6 * (i + 1), 6 * i), (6, 6))
                    .copy_from(&system.off_diag_block(i).transpose());
            }
        }
        let x = dense.cholesky().expect("dense PD").solve(&rhs);
        (0..k)
            .map(|i| Vector6::from_iterator(x.rows(6 * i, 6).iter().cloned()))
            .collect()
    }

    #[test]
    fn block_solve_matches_dense_oracle() {
        let mut rng = StdRng::seed_from_u64(59);
        for knots in [2, 5, 10] {
            let system = random_system(&mut rng, knots);
            let traj = system.solve_batch().unwrap();
            let dense = dense_solve(&system);
            for (knot, expected) in traj.knots().iter().zip(&dense) {
                let rel = (knot.to_vector() - expected).norm() / expected.norm().max(1.0);
                assert!(rel < 1e-9, "relative error {rel}");
            }
        }
    }

    #[test]
    fn single_knot_single_factor_closed_form() {
        // One knot, gyro-style factor plus anchor: the solution is the
        // information-weighted mean, checked against a hand-built 6x6 solve.
        let mut system = FactorSystem::new(vec![0.0]).unwrap();
        let prior_info = 0.5;
        let mu = w6(0.1, 0.2, 0.3, 0.0, 0.0, 0.0);
        system.add_prior(0, &mu, prior_info);

        let mut rows = SMatrix::<f64, 3, 6>::zeros();
        rows.fixed_view_mut::<3, 3>(0, 3)
            .copy_from(&Matrix3::identity());
        let y = Vector3::new(0.4, -0.2, 0.1);
        let cov = Matrix3::identity() * 0.01;
        // Single-knot system: a measurement at the only knot has no interval;
        // accumulate its information directly.
        let lambda = cov.try_inverse().unwrap();
        system.add_diag_block(0, &(rows.transpose() * lambda * rows));
        system.add_rhs(0, &(rows.transpose() * (lambda * y)));

        let traj = system.solve_batch().unwrap();

        let info = Matrix6::identity() * prior_info + rows.transpose() * lambda * rows;
        let b = mu.to_vector() * prior_info + rows.transpose() * (lambda * y);
        let expected = info.try_inverse().unwrap() * b;
        assert_relative_eq!(traj.knot(0).to_vector(), expected, epsilon = 1e-12);
    }

    #[test]
    fn doppler_only_zero_lever_arm_is_rank_deficient_by_3() {
        // Doppler rows with no lever arm never touch the angular block, so
        // the angular subspace is unconstrained.
        let mut system = FactorSystem::new(vec![0.0]).unwrap();
        let mut rng = StdRng::seed_from_u64(61);
        for _ in 0..50 {
            let dir = Vector3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            let mut row = RowVector6::zeros();
            row.fixed_view_mut::<1, 3>(0, 0).copy_from(&dir.transpose());
            let lambda = 1.0 / 0.0025;
            system.add_diag_block(0, &(row.transpose() * row * lambda));
        }
        match system.solve_batch() {
            Err(Error::RankDeficient { nullity }) => assert_eq!(nullity, 3),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn noiseless_linear_profile_recovered() {
        // Velocity linear in time matches the interpolation model exactly;
        // with weak priors the batch solve reproduces the knots to 1e-8.
        let knots = 6;
        let dt = 0.1;
        let truth = |t: f64| w6(5.0 + 10.0 * t, 0.0, 0.0, 0.0, 0.0, 0.2 * t + 0.1);
        let mut system = FactorSystem::new(uniform_times(knots, dt)).unwrap();
        system.add_prior(0, &BodyVelocity::zero(), 1e-6);
        let qc = Matrix6::identity() * 1e6;
        for k in 1..knots {
            system.add_wnoa_factor(k, dt, &qc).unwrap();
        }
        let mut rng = StdRng::seed_from_u64(67);
        for interval in 0..knots - 1 {
            // Doppler-like rows with a lever arm plus gyro rows.
            for _ in 0..200 {
                let tau = dt * interval as f64 + rng.gen_range(0.0..dt);
                let row = SMatrix::<f64, 1, 6>::from_fn(|_, _| rng.gen_range(-1.0..1.0));
                let y = (row * truth(tau).to_vector())[0];
                system
                    .add_measurement_factor(
                        &row,
                        &SVector::<f64, 1>::new(y),
                        &Matrix1::new(0.0025),
                        tau,
                        interval,
                    )
                    .unwrap();
            }
            for _ in 0..4 {
                let tau = dt * interval as f64 + rng.gen_range(0.0..dt);
                let mut rows = SMatrix::<f64, 3, 6>::zeros();
                rows.fixed_view_mut::<3, 3>(0, 3)
                    .copy_from(&Matrix3::identity());
                let y = truth(tau).omega;
                system
                    .add_measurement_factor(&rows, &y, &(Matrix3::identity() * 1e-4), tau, interval)
                    .unwrap();
            }
        }
        let traj = system.solve_batch().unwrap();
        for (k, knot) in traj.knots().iter().enumerate() {
            let expected = truth(dt * k as f64);
            assert_relative_eq!(knot.to_vector(), expected.to_vector(), epsilon = 1e-8);
        }
    }

    #[test]
    fn map_solution_beats_alternatives_on_objective() {
        let mut rng = StdRng::seed_from_u64(71);
        let system = random_system(&mut rng, 8);
        let solution = system.solve_batch().unwrap();
        let j_star = system.quadratic_objective(&solution).unwrap();

        let zero = KnotTrajectory::new(
            system.times().to_vec(),
            vec![BodyVelocity::zero(); system.num_knots()],
        )
        .unwrap();
        assert!(j_star <= system.quadratic_objective(&zero).unwrap() + 1e-12);

        let mut perturbed = solution.clone();
        for k in 0..perturbed.len() {
            let mut v = perturbed.knot(k).to_vector();
            v[0] += 0.1;
            perturbed.set_knot(k, BodyVelocity::from_vector(&v));
        }
        assert!(j_star <= system.quadratic_objective(&perturbed).unwrap() + 1e-12);
    }

    #[test]
    fn filter_prediction_only_step() {
        let qc = Matrix6::identity() * 0.5;
        let state = FilterState {
            time: 0.0,
            mean: w6(1.0, 2.0, 3.0, 0.1, 0.2, 0.3),
            covariance: Matrix6::identity() * 0.25,
        };
        let next = state
            .step(0.1, &qc, &IntervalAccum::new(), &Matrix6::zeros())
            .unwrap();
        assert_relative_eq!(
            next.mean.to_vector(),
            state.mean.to_vector(),
            epsilon = 1e-10
        );
        assert_relative_eq!(
            next.covariance,
            state.covariance + qc * 0.1,
            epsilon = 1e-10
        );
    }

    #[test]
    fn filter_kinematic_only_shrinks_penalized_components() {
        // Weakly known state plus a strong kinematic penalty on the new
        // knot: the penalized components obey the closed-form ridge
        // x = s0 / (s0 + 1/qz) * mu with s0 the predicted marginal
        // information; forward and yaw pass through untouched.
        let noise = crate::measurement::NoiseConfig::default();
        let qc = Matrix6::identity() * 1e-3; // nearly rigid random walk
        let prior_cov = 10.0;
        let qz = 0.1;
        let state = FilterState {
            time: 0.0,
            mean: w6(1.0, 1.0, 1.0, 0.1, 0.1, 0.1),
            covariance: Matrix6::identity() * prior_cov,
        };
        let kin = kinematic_information(&noise.h_kin(), &(SMatrix::<f64, 4, 4>::identity() * qz))
            .unwrap();
        let next = state.step(0.1, &qc, &IntervalAccum::new(), &kin).unwrap();

        let s0 = 1.0 / (prior_cov + 0.1 * 1e-3);
        let shrink = s0 / (s0 + 1.0 / qz);
        let mu = state.mean.to_vector();
        assert_relative_eq!(next.mean.nu.x, mu[0], epsilon = 1e-9);
        assert_relative_eq!(next.mean.omega.z, mu[5], epsilon = 1e-9);
        for i in 1..5 {
            assert_relative_eq!(next.mean.to_vector()[i], shrink * mu[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn filter_matches_batch_on_random_factors() {
        let mut rng = StdRng::seed_from_u64(73);
        let knots = 12;
        let dt = 0.1;
        let times = uniform_times(knots, dt);
        let qc = Matrix6::identity();
        let noise = crate::measurement::NoiseConfig::default();
        let kin = kinematic_information(
            &noise.h_kin(),
            &SMatrix::<f64, 4, 4>::from_diagonal(&nalgebra::SVector::<f64, 4>::from(noise.qz_diag)),
        )
        .unwrap();
        let prior_info = 1e-6;

        // Shared factor bundles per interval.
        let mut intervals: Vec<Vec<IntervalFactor>> = Vec::new();
        for _ in 0..knots - 1 {
            let mut fs = Vec::new();
            for _ in 0..15 {
                let row = SMatrix::<f64, 1, 6>::from_fn(|_, _| rng.gen_range(-1.0..1.0));
                let alpha = rng.gen_range(0.0..1.0);
                fs.push(
                    IntervalFactor::from_rows(
                        &row,
                        &SVector::<f64, 1>::new(rng.gen_range(-3.0..3.0)),
                        &Matrix1::new(0.0025),
                        alpha,
                    )
                    .unwrap(),
                );
            }
            let mut rows = SMatrix::<f64, 3, 6>::zeros();
            rows.fixed_view_mut::<3, 3>(0, 3)
                .copy_from(&Matrix3::identity());
            fs.push(
                IntervalFactor::from_rows(
                    &rows,
                    &Vector3::new(rng.gen_range(-0.5..0.5), 0.0, 0.1),
                    &(Matrix3::identity() * 1e-4),
                    rng.gen_range(0.0..1.0),
                )
                .unwrap(),
            );
            intervals.push(fs);
        }

        // Batch assembly.
        let mut system = FactorSystem::new(times.clone()).unwrap();
        system.add_prior(0, &BodyVelocity::zero(), prior_info);
        for k in 0..knots {
            system.add_diag_block(k, &kin);
        }
        for (k, fs) in intervals.iter().enumerate() {
            system.add_wnoa_factor(k + 1, dt, &qc).unwrap();
            for f in fs {
                system.add_interval_factor(k, f);
            }
        }
        let (batch, batch_cov) = system.solve_batch_full().unwrap();

        // Filter pass over the same factors.
        let mut state = FilterState::from_prior(0.0, prior_info, &kin).unwrap();
        for (k, fs) in intervals.iter().enumerate() {
            state = state
                .step(times[k + 1], &qc, &IntervalAccum::from_factors(fs), &kin)
                .unwrap();
        }

        let batch_final = batch.knots().last().unwrap().to_vector();
        assert_relative_eq!(state.mean.to_vector(), batch_final, epsilon = 1e-8);
        assert_relative_eq!(state.covariance, batch_cov, epsilon = 1e-8);
    }

    #[test]
    fn noiseless_identifiable_data_reproduced_exactly() {
        // Constant twist, gyro present, non-collinear Doppler directions:
        // the MAP solution reproduces every measurement to 1e-9.
        let truth = w6(3.0, 0.0, 0.0, 0.0, 0.0, 0.15);
        let knots = 4;
        let dt = 0.1;
        let mut system = FactorSystem::new(uniform_times(knots, dt)).unwrap();
        system.add_prior(0, &BodyVelocity::zero(), 1e-7);
        for k in 1..knots {
            system.add_wnoa_factor(k, dt, &Matrix6::identity()).unwrap();
        }
        let mut rng = StdRng::seed_from_u64(79);
        let mut measurements: Vec<(SMatrix<f64, 1, 6>, f64, f64, usize)> = Vec::new();
        for interval in 0..knots - 1 {
            for _ in 0..100 {
                let tau = dt * interval as f64 + rng.gen_range(0.0..dt);
                let dir = Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-0.3..0.3),
                )
                .normalize();
                let lever = Vector3::new(1.0, 0.0, 0.5);
                let angular = lever.cross(&dir);
                let mut row = SMatrix::<f64, 1, 6>::zeros();
                row.fixed_view_mut::<1, 3>(0, 0).copy_from(&dir.transpose());
                row.fixed_view_mut::<1, 3>(0, 3)
                    .copy_from(&angular.transpose());
                let y = (row * truth.to_vector())[0];
                system
                    .add_measurement_factor(
                        &row,
                        &SVector::<f64, 1>::new(y),
                        &Matrix1::new(0.0025),
                        tau,
                        interval,
                    )
                    .unwrap();
                measurements.push((row, y, tau, interval));
            }
            let tau = dt * interval as f64 + 0.05;
            let mut rows = SMatrix::<f64, 3, 6>::zeros();
            rows.fixed_view_mut::<3, 3>(0, 3)
                .copy_from(&Matrix3::identity());
            system
                .add_measurement_factor(
                    &rows,
                    &truth.omega,
                    &(Matrix3::identity() * 1e-4),
                    tau,
                    interval,
                )
                .unwrap();
        }
        let traj = system.solve_batch().unwrap();
        for (row, y, tau, _) in &measurements {
            let w = traj.interpolate(*tau).unwrap();
            let predicted = (row * w.to_vector())[0];
            assert!((predicted - y).abs() < 1e-9, "residual {}", predicted - y);
        }
    }
}
