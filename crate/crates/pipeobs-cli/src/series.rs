//! The time-series CSV format: UTF-8, comma separator, `\n` line endings,
//! mandatory header, fixed column order, floats at full precision.

use pipeobs::solver::Sample;
use pipeobs::{Error, Result};

use crate::canon::format_float;

pub const SERIES_COLUMNS: [&str; 8] =
    ["t", "l2_err_sq", "h_rel", "f_aux", "lyapunov", "delta_m", "max_v", "dt"];

/// Render a run's sample series as CSV text.
pub fn write_series(samples: &[Sample]) -> String {
    let mut out = String::with_capacity(64 * (samples.len() + 1));
    out.push_str(&SERIES_COLUMNS.join(","));
    out.push('\n');
    for s in samples {
        let row = [s.t, s.l2_err_sq, s.h_rel, s.f_aux, s.lyapunov, s.delta_m, s.max_v, s.dt];
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&format_float(v));
            first = false;
        }
        out.push('\n');
    }
    out
}

/// Parse CSV text produced by [`write_series`]; validates the header and
/// the column count of every row.
pub fn read_series(text: &str) -> Result<Vec<Sample>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("series: empty file".into()))?;
    if header != SERIES_COLUMNS.join(",") {
        return Err(Error::Parse(format!("series: unexpected header {header:?}")));
    }
    let mut samples = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != SERIES_COLUMNS.len() {
            return Err(Error::Parse(format!(
                "series row {}: expected {} fields, got {}",
                i + 2,
                SERIES_COLUMNS.len(),
                fields.len()
            )));
        }
        let mut vals = [0.0f64; 8];
        for (j, f) in fields.iter().enumerate() {
            vals[j] = f
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("series row {}, column {}: {e}", i + 2, SERIES_COLUMNS[j])))?;
        }
        samples.push(Sample {
            t: vals[0],
            l2_err_sq: vals[1],
            h_rel: vals[2],
            f_aux: vals[3],
            lyapunov: vals[4],
            delta_m: vals[5],
            max_v: vals[6],
            dt: vals[7],
        });
    }
    Ok(samples)
}
