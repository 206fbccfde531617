//! Per-bin linear regression of the Doppler measurement bias on range.
//!
//! The bias is calibrated per azimuth-elevation bin (the same grid used for
//! downsampling) as `h(range) = b0 + b1 * range` by ordinary least squares
//! against groundtruth-predicted Doppler. Bins with too few samples or too
//! little range spread are flagged invalid and predict no correction.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::lie::BodyVelocity;
use crate::measurement::{doppler_row, Extrinsics};
use crate::pointcloud::{BinGrid, BinIndex, LidarFrame};

/// Linear bias coefficients of one calibrated bin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinCoefficients {
    /// Intercept (m/s).
    pub b0: f64,
    /// Slope per meter of range (dimensionless).
    pub b1: f64,
    /// Number of samples the fit used.
    pub n_samples: usize,
}

/// Per-bin linear bias model over an azimuth-elevation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasModel {
    rows: usize,
    cols: usize,
    bins: Vec<Option<BinCoefficients>>,
}

/// One calibration observation: measured Doppler minus the Doppler predicted
/// from groundtruth velocity, tagged with its bin and range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationSample {
    pub bin: BinIndex,
    pub range: f64,
    pub residual: f64,
}

/// Conditioning rules for the per-bin fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Minimum samples for a bin to be calibrated.
    pub min_samples_per_bin: usize,
    /// Minimum range spread (m) for the slope to be identifiable.
    pub min_range_spread: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            min_samples_per_bin: 50,
            min_range_spread: 5.0,
        }
    }
}

impl BiasModel {
    /// A model with every bin calibrated to zero correction.
    pub fn zero(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bins: vec![
                Some(BinCoefficients {
                    b0: 0.0,
                    b1: 0.0,
                    n_samples: 0,
                });
                rows * cols
            ],
        }
    }

    /// A model with every bin uncalibrated.
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bins: vec![None; rows * cols],
        }
    }

    /// A model applying the same coefficients in every bin.
    pub fn uniform(rows: usize, cols: usize, b0: f64, b1: f64) -> Self {
        Self {
            rows,
            cols,
            bins: vec![
                Some(BinCoefficients {
                    b0,
                    b1,
                    n_samples: 0
                });
                rows * cols
            ],
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn set_bin(&mut self, bin: BinIndex, b0: f64, b1: f64) -> Result<()> {
        let idx = self.index_of(bin)?;
        self.bins[idx] = Some(BinCoefficients {
            b0,
            b1,
            n_samples: 0,
        });
        Ok(())
    }

    pub fn coefficients(&self, bin: BinIndex) -> Result<Option<BinCoefficients>> {
        Ok(self.bins[self.index_of(bin)?])
    }

    fn index_of(&self, bin: BinIndex) -> Result<usize> {
        if bin.row >= self.rows || bin.col >= self.cols {
            return Err(Error::BinOutOfGrid {
                row: bin.row,
                col: bin.col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(bin.row * self.cols + bin.col)
    }

    /// Predicted bias `b0 + b1 * range` for a bin, or `None` when the bin is
    /// uncalibrated (the caller should count the return as bias-uncorrected
    /// and apply no correction).
    pub fn predict(&self, bin: BinIndex, range: f64) -> Result<Option<f64>> {
        let idx = self.index_of(bin)?;
        Ok(self.bins[idx].map(|c| c.b0 + c.b1 * range))
    }

    /// Number of calibrated bins.
    pub fn valid_bins(&self) -> usize {
        self.bins.iter().filter(|b| b.is_some()).count()
    }

    /// Ordinary least squares of residual on `[1, range]` per bin.
    ///
    /// Degenerate bins (too few samples or insufficient range spread) are
    /// flagged invalid, not errors.
    pub fn fit(
        rows: usize,
        cols: usize,
        samples: &[CalibrationSample],
        cfg: &FitConfig,
    ) -> Result<Self> {
        #[derive(Clone)]
        struct Accum {
            n: usize,
            sum_r: f64,
            sum_y: f64,
            sum_rr: f64,
            sum_ry: f64,
            min_r: f64,
            max_r: f64,
        }
        let fresh = Accum {
            n: 0,
            sum_r: 0.0,
            sum_y: 0.0,
            sum_rr: 0.0,
            sum_ry: 0.0,
            min_r: f64::INFINITY,
            max_r: f64::NEG_INFINITY,
        };
        let mut acc = vec![fresh; rows * cols];
        for s in samples {
            if s.bin.row >= rows || s.bin.col >= cols {
                return Err(Error::BinOutOfGrid {
                    row: s.bin.row,
                    col: s.bin.col,
                    rows,
                    cols,
                });
            }
            if !(s.range > 0.0) || !s.residual.is_finite() {
                return Err(Error::Data(format!(
                    "calibration sample with range {} residual {}",
                    s.range, s.residual
                )));
            }
            let a = &mut acc[s.bin.row * cols + s.bin.col];
            a.n += 1;
            a.sum_r += s.range;
            a.sum_y += s.residual;
            a.sum_rr += s.range * s.range;
            a.sum_ry += s.range * s.residual;
            a.min_r = a.min_r.min(s.range);
            a.max_r = a.max_r.max(s.range);
        }
        let bins = acc
            .into_iter()
            .map(|a| {
                if a.n < cfg.min_samples_per_bin || a.max_r - a.min_r < cfg.min_range_spread {
                    return None;
                }
                let n = a.n as f64;
                let mean_r = a.sum_r / n;
                let mean_y = a.sum_y / n;
                let sxx = a.sum_rr - n * mean_r * mean_r;
                let sxy = a.sum_ry - n * mean_r * mean_y;
                if sxx <= 0.0 {
                    return None;
                }
                let b1 = sxy / sxx;
                let b0 = mean_y - b1 * mean_r;
                Some(BinCoefficients {
                    b0,
                    b1,
                    n_samples: a.n,
                })
            })
            .collect();
        Ok(Self { rows, cols, bins })
    }

    /// Persists the model as CSV with columns `row,col,b0,b1,n_samples`
    /// (calibrated bins only).
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "row,col,b0,b1,n_samples")?;
        for row in 0..self.rows {
            for col in 0..self.cols {
                if let Some(c) = self.bins[row * self.cols + col] {
                    writeln!(w, "{row},{col},{},{},{}", c.b0, c.b1, c.n_samples)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a model saved by [`BiasModel::save_csv`]. Bins absent from the
    /// file are uncalibrated.
    pub fn load_csv(path: &Path, rows: usize, cols: usize) -> Result<Self> {
        let file = File::open(path)
            .map_err(|e| Error::Data(format!("bias model {}: {e}", path.display())))?;
        let mut model = Self::empty(rows, cols);
        for (line_no, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line_no == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(Error::Data(format!(
                    "bias model line {}: expected 5 fields",
                    line_no + 1
                )));
            }
            let row: usize = fields[0]
                .parse()
                .map_err(|_| Error::Data(format!("bias model line {}: bad row", line_no + 1)))?;
            let col: usize = fields[1]
                .parse()
                .map_err(|_| Error::Data(format!("bias model line {}: bad col", line_no + 1)))?;
            let b0: f64 = fields[2]
                .parse()
                .map_err(|_| Error::Data(format!("bias model line {}: bad b0", line_no + 1)))?;
            let b1: f64 = fields[3]
                .parse()
                .map_err(|_| Error::Data(format!("bias model line {}: bad b1", line_no + 1)))?;
            let n_samples: usize = fields[4].parse().map_err(|_| {
                Error::Data(format!("bias model line {}: bad n_samples", line_no + 1))
            })?;
            let idx = model.index_of(BinIndex { row, col })?;
            model.bins[idx] = Some(BinCoefficients { b0, b1, n_samples });
        }
        Ok(model)
    }
}

/// Outcome counters of [`build_calibration_samples`].
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct SampleCounters {
    pub accepted: usize,
    /// Returns skipped because groundtruth did not cover their timestamp.
    pub outside_groundtruth: usize,
    /// Returns excluded by the caller-provided outlier mask.
    pub masked_out: usize,
}

/// Builds calibration samples from downsampled frames and a groundtruth
/// velocity query: `residual = y_dop - row(q) * w_gt(t)`.
///
/// `inlier_masks`, when given, must align with each frame's returns; returns
/// flagged as outliers (mask `false`) are excluded. Returns whose timestamp
/// the groundtruth cannot answer are skipped and counted.
pub fn build_calibration_samples<F>(
    frames: &[LidarFrame],
    inlier_masks: Option<&[Vec<bool>]>,
    groundtruth: F,
    extrinsics: &Extrinsics,
    grid: &BinGrid,
) -> Result<(Vec<CalibrationSample>, SampleCounters)>
where
    F: Fn(f64) -> Option<BodyVelocity>,
{
    if let Some(masks) = inlier_masks {
        if masks.len() != frames.len() {
            return Err(Error::Config(format!(
                "{} masks for {} frames",
                masks.len(),
                frames.len()
            )));
        }
    }
    let mut samples = Vec::new();
    let mut counters = SampleCounters::default();
    for (fi, frame) in frames.iter().enumerate() {
        for (ri, ret) in frame.returns.iter().enumerate() {
            if let Some(masks) = inlier_masks {
                if !masks[fi][ri] {
                    counters.masked_out += 1;
                    continue;
                }
            }
            let Some(bin) = grid.bin_of(ret) else {
                continue;
            };
            let Some(w) = groundtruth(ret.timestamp) else {
                counters.outside_groundtruth += 1;
                continue;
            };
            let row = doppler_row(&ret.q, extrinsics)?;
            let predicted = (row * w.to_vector())[0];
            samples.push(CalibrationSample {
                bin,
                range: ret.range,
                residual: ret.doppler - predicted,
            });
            counters.accepted += 1;
        }
    }
    Ok((samples, counters))
}
