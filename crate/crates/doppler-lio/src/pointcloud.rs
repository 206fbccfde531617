//! Lidar frame ingestion, spherical coordinates, and azimuth-elevation
//! downsampling.
//!
//! Downsampling keeps at most one return per azimuth-elevation bin. Elevation
//! binning reuses the sensor's beam rows (the scan pattern already partitions
//! elevation); azimuth is partitioned uniformly, 0.2 degrees by default.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// One FMCW lidar return: sensor-frame coordinates, radial (Doppler)
/// velocity, absolute timestamp, derived spherical coordinates, and the beam
/// row it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct DopplerReturn {
    /// Point coordinates in the sensor frame (m).
    pub q: Vector3<f64>,
    /// Radial velocity (m/s); the sign convention is normalized at ingestion.
    pub doppler: f64,
    /// Absolute timestamp (s), within the enclosing frame's bounds.
    pub timestamp: f64,
    /// Range `|q|` (m).
    pub range: f64,
    /// Azimuth `atan2(y, x)` (rad).
    pub azimuth: f64,
    /// Elevation `atan2(z, sqrt(x^2 + y^2))` (rad).
    pub elevation: f64,
    /// Beam row of the scan pattern, `0..num_beam_rows`.
    pub beam_row: u32,
}

impl DopplerReturn {
    /// Builds a return from raw fields, populating the spherical coordinates.
    pub fn from_raw(q: Vector3<f64>, doppler: f64, timestamp: f64, beam_row: u32) -> Result<Self> {
        let (range, azimuth, elevation) = to_spherical(&q)?;
        Ok(Self {
            q,
            doppler,
            timestamp,
            range,
            azimuth,
            elevation,
            beam_row,
        })
    }
}

/// A timestamped lidar frame with its Doppler returns.
#[derive(Debug, Clone, PartialEq)]
pub struct LidarFrame {
    pub frame_index: usize,
    pub start_time: f64,
    pub end_time: f64,
    pub returns: Vec<DopplerReturn>,
}

/// Index of an azimuth-elevation bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BinIndex {
    pub row: usize,
    pub col: usize,
}

/// Azimuth-elevation grid configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BinGrid {
    /// Azimuth bin width (degrees).
    pub azimuth_bin_deg: f64,
    /// Number of beam rows (elevation bins).
    pub num_beam_rows: usize,
    /// Azimuth span covered by the grid (degrees).
    pub azimuth_min_deg: f64,
    pub azimuth_max_deg: f64,
}

impl Default for BinGrid {
    fn default() -> Self {
        Self {
            azimuth_bin_deg: 0.2,
            num_beam_rows: 80,
            azimuth_min_deg: -60.0,
            azimuth_max_deg: 60.0,
        }
    }
}

impl BinGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.azimuth_bin_deg > 0.0) {
            return Err(Error::Config("azimuth_bin_deg must be positive".into()));
        }
        if self.num_beam_rows == 0 {
            return Err(Error::Config("num_beam_rows must be positive".into()));
        }
        if self.azimuth_max_deg <= self.azimuth_min_deg {
            return Err(Error::Config(
                "azimuth_max_deg must exceed azimuth_min_deg".into(),
            ));
        }
        Ok(())
    }

    /// Number of azimuth columns.
    pub fn cols(&self) -> usize {
        ((self.azimuth_max_deg - self.azimuth_min_deg) / self.azimuth_bin_deg).ceil() as usize
    }

    pub fn rows(&self) -> usize {
        self.num_beam_rows
    }

    /// Bin of a return, or `None` when the azimuth falls outside the grid or
    /// the beam row exceeds the configured row count.
    pub fn bin_of(&self, ret: &DopplerReturn) -> Option<BinIndex> {
        let az_deg = ret.azimuth.to_degrees();
        if az_deg < self.azimuth_min_deg || az_deg >= self.azimuth_max_deg {
            return None;
        }
        let col = ((az_deg - self.azimuth_min_deg) / self.azimuth_bin_deg) as usize;
        let row = ret.beam_row as usize;
        if row >= self.num_beam_rows || col >= self.cols() {
            return None;
        }
        Some(BinIndex { row, col })
    }
}

/// Spherical coordinates of a point: `(range, azimuth, elevation)`.
///
/// Rejects zero-norm points.
pub fn to_spherical(q: &Vector3<f64>) -> Result<(f64, f64, f64)> {
    let range = q.norm();
    if !(range > 0.0) || !range.is_finite() {
        return Err(Error::InvalidPoint);
    }
    let azimuth = q.y.atan2(q.x);
    let elevation = q.z.atan2((q.x * q.x + q.y * q.y).sqrt());
    Ok((range, azimuth, elevation))
}

/// Indices of the returns kept by azimuth-elevation downsampling: for each
/// occupied bin, the earliest-timestamp return (ties broken by input order).
/// Output is sorted by `(timestamp, input index)`.
pub fn downsample_indices(frame: &LidarFrame, grid: &BinGrid) -> Vec<usize> {
    let rows = grid.rows();
    let cols = grid.cols();
    // Flat (row, col) -> (timestamp, index) map of the current best per bin.
    let mut best: Vec<Option<(f64, usize)>> = vec![None; rows * cols];
    for (idx, ret) in frame.returns.iter().enumerate() {
        let Some(bin) = grid.bin_of(ret) else {
            continue;
        };
        let slot = &mut best[bin.row * cols + bin.col];
        match slot {
            Some((t, _)) if *t <= ret.timestamp => {}
            _ => *slot = Some((ret.timestamp, idx)),
        }
    }
    let mut kept: Vec<(f64, usize)> = best.into_iter().flatten().collect();
    kept.sort_by(|a, b| a.partial_cmp(b).expect("finite timestamps"));
    kept.into_iter().map(|(_, idx)| idx).collect()
}

/// Downsamples a frame to at most one return per azimuth-elevation bin.
pub fn downsample(frame: &LidarFrame, grid: &BinGrid) -> LidarFrame {
    let kept = downsample_indices(frame, grid);
    LidarFrame {
        frame_index: frame.frame_index,
        start_time: frame.start_time,
        end_time: frame.end_time,
        returns: kept.into_iter().map(|i| frame.returns[i].clone()).collect(),
    }
}

/// Filename of a frame within a sequence directory: `frame_%06d.bin`.
pub fn frame_file_name(frame_index: usize) -> String {
    format!("frame_{frame_index:06}.bin")
}

const RECORD_FLOATS: usize = 6;

fn parse_record(
    frame_index: usize,
    record_index: usize,
    vals: [f64; RECORD_FLOATS],
    start_time: f64,
    end_time: f64,
) -> Result<DopplerReturn> {
    let [timestamp, x, y, z, doppler, beam_row_f] = vals;
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!(
            "frame {frame_index}: record {record_index}: non-finite field"
        )));
    }
    if beam_row_f < 0.0 || beam_row_f.fract() != 0.0 {
        return Err(Error::Data(format!(
            "frame {frame_index}: record {record_index}: beam_row {beam_row_f} is not a non-negative integer"
        )));
    }
    if timestamp < start_time || timestamp > end_time {
        return Err(Error::Data(format!(
            "frame {frame_index}: record {record_index}: timestamp {timestamp} outside frame bounds [{start_time}, {end_time}]"
        )));
    }
    DopplerReturn::from_raw(Vector3::new(x, y, z), doppler, timestamp, beam_row_f as u32).map_err(
        |_| {
            Error::Data(format!(
                "frame {frame_index}: record {record_index}: zero-norm point"
            ))
        },
    )
}

/// Loads one frame file (binary `.bin` or CSV `.csv`), validating every
/// record against the frame bounds and populating spherical coordinates.
pub fn load_frame(
    path: &Path,
    frame_index: usize,
    start_time: f64,
    end_time: f64,
) -> Result<LidarFrame> {
    if !(start_time < end_time) {
        return Err(Error::Data(format!(
            "frame {frame_index}: start_time {start_time} must precede end_time {end_time}"
        )));
    }
    let is_csv = path.extension().map(|e| e == "csv").unwrap_or(false);
    let returns = if is_csv {
        load_frame_csv(path, frame_index, start_time, end_time)?
    } else {
        load_frame_bin(path, frame_index, start_time, end_time)?
    };
    Ok(LidarFrame {
        frame_index,
        start_time,
        end_time,
        returns,
    })
}

fn load_frame_bin(
    path: &Path,
    frame_index: usize,
    start_time: f64,
    end_time: f64,
) -> Result<Vec<DopplerReturn>> {
    let mut bytes = Vec::new();
    File::open(path)
        .map_err(|e| Error::Data(format!("frame {frame_index}: {}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    let record_bytes = RECORD_FLOATS * 8;
    if bytes.len() % record_bytes != 0 {
        return Err(Error::Data(format!(
            "frame {frame_index}: {} has {} bytes, not a multiple of {record_bytes}",
            path.display(),
            bytes.len()
        )));
    }
    let mut returns = Vec::with_capacity(bytes.len() / record_bytes);
    for (record_index, chunk) in bytes.chunks_exact(record_bytes).enumerate() {
        let mut vals = [0.0; RECORD_FLOATS];
        for (v, b) in vals.iter_mut().zip(chunk.chunks_exact(8)) {
            *v = f64::from_le_bytes(b.try_into().expect("8-byte chunk"));
        }
        returns.push(parse_record(
            frame_index,
            record_index,
            vals,
            start_time,
            end_time,
        )?);
    }
    Ok(returns)
}

fn load_frame_csv(
    path: &Path,
    frame_index: usize,
    start_time: f64,
    end_time: f64,
) -> Result<Vec<DopplerReturn>> {
    let file = File::open(path)
        .map_err(|e| Error::Data(format!("frame {frame_index}: {}: {e}", path.display())))?;
    let mut returns = Vec::new();
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line_no == 0 || line.trim().is_empty() {
            continue; // one-line header
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != RECORD_FLOATS {
            return Err(Error::Data(format!(
                "frame {frame_index}: line {}: expected {RECORD_FLOATS} fields, got {}",
                line_no + 1,
                fields.len()
            )));
        }
        let mut vals = [0.0; RECORD_FLOATS];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f.parse::<f64>().map_err(|_| {
                Error::Data(format!(
                    "frame {frame_index}: line {}: unparseable field '{f}'",
                    line_no + 1
                ))
            })?;
        }
        returns.push(parse_record(
            frame_index,
            line_no,
            vals,
            start_time,
            end_time,
        )?);
    }
    Ok(returns)
}

/// Writes a frame in the binary record format.
pub fn write_frame_bin(path: &Path, frame: &LidarFrame) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for ret in &frame.returns {
        for v in [
            ret.timestamp,
            ret.q.x,
            ret.q.y,
            ret.q.z,
            ret.doppler,
            ret.beam_row as f64,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes a frame in the CSV variant (identical column order, one header line).
pub fn write_frame_csv(path: &Path, frame: &LidarFrame) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "timestamp_s,x,y,z,doppler_mps,beam_row")?;
    for ret in &frame.returns {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            ret.timestamp, ret.q.x, ret.q.y, ret.q.z, ret.doppler, ret.beam_row
        )?;
    }
    w.flush()?;
    Ok(())
}
