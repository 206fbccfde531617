//! Per-frame RANSAC over Doppler returns with a 2-DOF velocity hypothesis.
//!
//! Each hypothesis assumes the vehicle velocity is constant over the frame
//! and restricted to forward speed and yaw rate, `w = [v 0 0 0 0 wz]`, which
//! two Doppler measurements determine. Inliers are classified with a fixed
//! threshold on the Doppler error under the hypothesis. The constant-velocity
//! assumption is local to RANSAC; the estimator downstream does not inherit
//! it.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::bias::BiasModel;
use crate::error::Result;
use crate::measurement::{doppler_row, Extrinsics};
use crate::pointcloud::{BinGrid, DopplerReturn, LidarFrame};

/// Determinant magnitude below which a sampled pair is degenerate.
const DEGENERATE_DET: f64 = 1e-9;

/// RANSAC parameters. The defaults follow the reference pipeline: 20
/// iterations and a 0.2 m/s inlier threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct RansacConfig {
    pub iterations: usize,
    /// Inlier threshold on the absolute Doppler error (m/s).
    pub inlier_threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 20,
            inlier_threshold: 0.2,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(crate::error::Error::Config(
                "ransac_iterations must be at least 1".into(),
            ));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(crate::error::Error::Config(
                "ransac_threshold_mps must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A 2-DOF constant-velocity hypothesis: forward speed and yaw rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hypothesis {
    pub forward: f64,
    pub yaw_rate: f64,
}

/// Result of one frame's RANSAC pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    /// One flag per return of the input frame.
    pub inliers: Vec<bool>,
    pub hypothesis: Hypothesis,
    pub inlier_count: usize,
    /// Set when no valid hypothesis could be formed (fewer than two returns,
    /// or every sampled pair degenerate); the mask is then all-inlier.
    pub low_confidence: bool,
}

/// Per-return quantities RANSAC scores against: the 2-DOF coefficients of the
/// Doppler row and the bias-corrected measurement.
struct ScoredReturn {
    forward_coeff: f64,
    yaw_coeff: f64,
    corrected_doppler: f64,
}

fn score_inputs(
    frame: &LidarFrame,
    bias: &BiasModel,
    grid: &BinGrid,
    extrinsics: &Extrinsics,
) -> Result<Vec<ScoredReturn>> {
    frame
        .returns
        .iter()
        .map(|ret| {
            let row = doppler_row(&ret.q, extrinsics)?;
            let predicted_bias = match grid.bin_of(ret) {
                Some(bin) => bias.predict(bin, ret.range)?.unwrap_or(0.0),
                None => 0.0,
            };
            Ok(ScoredReturn {
                forward_coeff: row[0],
                yaw_coeff: row[5],
                corrected_doppler: ret.doppler - predicted_bias,
            })
        })
        .collect()
}

/// Solves the 2x2 system mapping `(v, wz)` onto two bias-corrected Doppler
/// measurements. Returns `None` when the pair is degenerate.
pub fn solve_2dof(
    a: &DopplerReturn,
    b: &DopplerReturn,
    bias: &BiasModel,
    grid: &BinGrid,
    extrinsics: &Extrinsics,
) -> Result<Option<Hypothesis>> {
    let row_a = doppler_row(&a.q, extrinsics)?;
    let row_b = doppler_row(&b.q, extrinsics)?;
    let bias_a = match grid.bin_of(a) {
        Some(bin) => bias.predict(bin, a.range)?.unwrap_or(0.0),
        None => 0.0,
    };
    let bias_b = match grid.bin_of(b) {
        Some(bin) => bias.predict(bin, b.range)?.unwrap_or(0.0),
        None => 0.0,
    };
    Ok(solve_pair(
        row_a[0],
        row_a[5],
        a.doppler - bias_a,
        row_b[0],
        row_b[5],
        b.doppler - bias_b,
    ))
}

fn solve_pair(a1: f64, a2: f64, ya: f64, b1: f64, b2: f64, yb: f64) -> Option<Hypothesis> {
    let det = a1 * b2 - a2 * b1;
    if det.abs() < DEGENERATE_DET {
        return None;
    }
    Some(Hypothesis {
        forward: (ya * b2 - a2 * yb) / det,
        yaw_rate: (a1 * yb - ya * b1) / det,
    })
}

fn classify(scored: &[ScoredReturn], h: &Hypothesis, threshold: f64) -> (Vec<bool>, usize, f64) {
    let mut mask = Vec::with_capacity(scored.len());
    let mut count = 0;
    let mut abs_error_sum = 0.0;
    for s in scored {
        let err = s.corrected_doppler - (h.forward * s.forward_coeff + h.yaw_rate * s.yaw_coeff);
        let inlier = err.abs() < threshold;
        if inlier {
            count += 1;
            abs_error_sum += err.abs();
        }
        mask.push(inlier);
    }
    (mask, count, abs_error_sum)
}

/// The candidate hypotheses one seeded RANSAC pass samples: pairs drawn
/// without replacement within a hypothesis, with replacement across
/// hypotheses. Degenerate pairs are skipped.
pub fn candidate_hypotheses(
    frame: &LidarFrame,
    bias: &BiasModel,
    grid: &BinGrid,
    extrinsics: &Extrinsics,
    cfg: &RansacConfig,
) -> Result<Vec<Hypothesis>> {
    let scored = score_inputs(frame, bias, grid, extrinsics)?;
    Ok(sample_hypotheses(&scored, cfg))
}

fn sample_hypotheses(scored: &[ScoredReturn], cfg: &RansacConfig) -> Vec<Hypothesis> {
    let n = scored.len();
    if n < 2 {
        return Vec::new();
    }
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let mut hypotheses = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let (a, b) = (&scored[i], &scored[j]);
        if let Some(h) = solve_pair(
            a.forward_coeff,
            a.yaw_coeff,
            a.corrected_doppler,
            b.forward_coeff,
            b.yaw_coeff,
            b.corrected_doppler,
        ) {
            hypotheses.push(h);
        }
    }
    hypotheses
}

/// Runs RANSAC on one frame. Deterministic for a given seed. The best
/// hypothesis maximizes the inlier count, ties broken by the lower sum of
/// absolute inlier errors; the final mask is recomputed against it.
pub fn run(
    frame: &LidarFrame,
    bias: &BiasModel,
    grid: &BinGrid,
    extrinsics: &Extrinsics,
    cfg: &RansacConfig,
) -> Result<RansacResult> {
    cfg.validate()?;
    let scored = score_inputs(frame, bias, grid, extrinsics)?;
    let hypotheses = sample_hypotheses(&scored, cfg);

    let mut best: Option<(Hypothesis, usize, f64)> = None;
    for h in hypotheses {
        let (_, count, abs_sum) = classify(&scored, &h, cfg.inlier_threshold);
        let better = match &best {
            None => true,
            Some((_, best_count, best_sum)) => {
                count > *best_count || (count == *best_count && abs_sum < *best_sum)
            }
        };
        if better {
            best = Some((h, count, abs_sum));
        }
    }

    match best {
        Some((hypothesis, _, _)) => {
            let (inliers, inlier_count, _) = classify(&scored, &hypothesis, cfg.inlier_threshold);
            Ok(RansacResult {
                inliers,
                hypothesis,
                inlier_count,
                low_confidence: false,
            })
        }
        None => Ok(RansacResult {
            inliers: vec![true; frame.returns.len()],
            hypothesis: Hypothesis {
                forward: 0.0,
                yaw_rate: 0.0,
            },
            inlier_count: frame.returns.len(),
            low_confidence: true,
        }),
    }
}
