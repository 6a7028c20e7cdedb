use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vidpriv_core::Mode;

use crate::{io_err, BenchError};

pub const RECORD_HEADER: [&str; 5] = ["machine", "mode", "video", "rep", "wall_time_s"];

/// One timed repetition of one video in one mode on one machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub machine: String,
    pub mode: Mode,
    pub video: String,
    pub rep: u32,
    pub wall_time_s: f64,
}

impl BenchRecord {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.machine.is_empty() || self.video.is_empty() {
            return Err(BenchError::InvalidRecord("machine and video labels must be non-empty".into()));
        }
        if !(self.wall_time_s.is_finite() && self.wall_time_s > 0.0) {
            return Err(BenchError::InvalidRecord(format!("wall time {} is not positive", self.wall_time_s)));
        }
        Ok(())
    }
}

/// `"10s"`, `"1min"`, `"30min"`: whole minutes are labelled in minutes.
pub fn video_label(duration_s: f64) -> String {
    let whole = duration_s.round();
    if (duration_s - whole).abs() < 1e-9 && whole >= 60.0 && whole % 60.0 == 0.0 {
        format!("{}min", whole / 60.0)
    } else if (duration_s - whole).abs() < 1e-9 {
        format!("{whole}s")
    } else {
        format!("{duration_s}s")
    }
}

/// Inverse of [`video_label`]; also accepts a space before the unit.
pub fn parse_video_duration(label: &str) -> Option<f64> {
    let label = label.trim();
    let (num, scale) = if let Some(n) = label.strip_suffix("min") {
        (n, 60.0)
    } else if let Some(n) = label.strip_suffix('s') {
        (n, 1.0)
    } else {
        return None;
    };
    let v: f64 = num.trim().parse().ok()?;
    (v.is_finite() && v > 0.0).then_some(v * scale)
}

fn writer(file: File, header: bool) -> csv::Writer<File> {
    csv::WriterBuilder::new().has_headers(header).from_writer(file)
}

fn write_rows(w: &mut csv::Writer<File>, path: &Path, records: &[BenchRecord]) -> Result<(), BenchError> {
    let err = |e: csv::Error| BenchError::Parse { path: path.to_path_buf(), reason: e.to_string() };
    for r in records {
        r.validate()?;
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(io_err(path))
}

/// Replace `path` with `records`.
pub fn write_records(path: &Path, records: &[BenchRecord]) -> Result<(), BenchError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = writer(file, false);
    w.write_record(RECORD_HEADER).map_err(|e| BenchError::Parse { path: path.to_path_buf(), reason: e.to_string() })?;
    write_rows(&mut w, path, records)
}

/// Append to `path`, writing the header first when the file is new or empty.
pub fn append_records(path: &Path, records: &[BenchRecord]) -> Result<(), BenchError> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    if fresh {
        writeln!(file, "{}", RECORD_HEADER.join(",")).map_err(io_err(path))?;
    }
    write_rows(&mut writer(file, false), path, records)
}

pub fn read_records(path: &Path) -> Result<Vec<BenchRecord>, BenchError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut r = csv::Reader::from_reader(file);
    let parse = |reason: String| BenchError::Parse { path: path.to_path_buf(), reason };
    let headers = r.headers().map_err(|e| parse(e.to_string()))?;
    if headers.iter().ne(RECORD_HEADER) {
        return Err(parse(format!("unexpected header {headers:?}")));
    }
    let mut out = Vec::new();
    for row in r.deserialize() {
        let rec: BenchRecord = row.map_err(|e: csv::Error| parse(e.to_string()))?;
        rec.validate()?;
        out.push(rec);
    }
    Ok(out)
}
