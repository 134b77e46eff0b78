//! On-disk formats: the PQT1 binary matrix container, spectrogram and
//! experiment CSV files, and the solver report JSON document.
//!
//! Every format round-trips exactly. PQT1 stores raw f64 bits, and the
//! CSV writers print 17 significant digits, which is enough to recover
//! each double bit-for-bit on read.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::analysis::{ExperimentFamily, ExperimentRecord, ExperimentRun};
use crate::operator::Spectrogram;
use crate::solvers::SolveReport;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"PQT1";

const SPECTROGRAM_HEADER: &str = "theta,l,value";
const EXPERIMENT_HEADER: &str = "param_k,param_n,input_norm,output_norm,transformed";

fn parse_error(path: &Path, line: usize, message: String) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        line,
        message,
    }
}

/// Writes a complex square matrix as PQT1: the 4-byte magic, one
/// unsigned 64-bit little-endian order N, then 2 N^2 little-endian
/// 64-bit floats, row-major, interleaved (real, imaginary).
pub fn write_pqt1(path: &Path, matrix: &DMatrix<Complex64>) -> Result<()> {
    let (rows, cols) = matrix.shape();
    if rows != cols {
        return Err(Error::Shape(format!(
            "PQT1 stores square matrices, got {rows} x {cols}"
        )));
    }
    let mut buf = Vec::with_capacity(12 + 16 * rows * rows);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(rows as u64).to_le_bytes());
    for i in 0..rows {
        for j in 0..rows {
            let z = matrix[(i, j)];
            buf.extend_from_slice(&z.re.to_le_bytes());
            buf.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a PQT1 file back bit-exactly. Binary parse errors report
/// line 0: the format has no line structure.
pub fn read_pqt1(path: &Path) -> Result<DMatrix<Complex64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[0..4] != MAGIC {
        return Err(parse_error(path, 0, "missing PQT1 magic header".into()));
    }
    let n = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
    let need = 12u128 + 16u128 * n as u128 * n as u128;
    if bytes.len() as u128 != need {
        return Err(parse_error(
            path,
            0,
            format!("order {n} needs {need} bytes, file holds {}", bytes.len()),
        ));
    }
    let mut matrix = DMatrix::<Complex64>::zeros(n, n);
    let mut off = 12;
    for i in 0..n {
        for j in 0..n {
            let re = f64::from_le_bytes(bytes[off..off + 8].try_into().expect("8 bytes"));
            let im = f64::from_le_bytes(bytes[off + 8..off + 16].try_into().expect("8 bytes"));
            matrix[(i, j)] = Complex64::new(re, im);
            off += 16;
        }
    }
    Ok(matrix)
}

/// Writes a spectrogram as `theta,l,value` rows, angle-major, behind a
/// header line. Angles repeat once per energy bin so each row stands on
/// its own.
pub fn write_spectrogram_csv(path: &Path, y: &Spectrogram) -> Result<()> {
    let mut buf = String::with_capacity(64 * y.m() * y.n() + 16);
    buf.push_str(SPECTROGRAM_HEADER);
    buf.push('\n');
    for (m, &theta) in y.angles().iter().enumerate() {
        for l in 0..y.n() {
            writeln!(buf, "{theta:.16e},{l},{:.16e}", y.value(m, l)).expect("string write");
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads a spectrogram CSV. Blocks are delimited by `l` restarting at
/// zero, not by the angle value, so repeated angles survive the trip.
pub fn read_spectrogram_csv(path: &Path) -> Result<Spectrogram> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, first)) if first.trim() == SPECTROGRAM_HEADER => {}
        _ => {
            return Err(parse_error(
                path,
                1,
                format!("expected header {SPECTROGRAM_HEADER:?}"),
            ))
        }
    }
    let mut angles: Vec<f64> = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut n: Option<usize> = None;
    let mut block_len = 0usize;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_error(
                path,
                lineno,
                format!("expected 3 fields, got {}", fields.len()),
            ));
        }
        let theta: f64 = fields[0]
            .trim()
            .parse()
            .map_err(|_| parse_error(path, lineno, format!("bad angle {:?}", fields[0])))?;
        let l: usize = fields[1]
            .trim()
            .parse()
            .map_err(|_| parse_error(path, lineno, format!("bad energy index {:?}", fields[1])))?;
        let v: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| parse_error(path, lineno, format!("bad value {:?}", fields[2])))?;
        if l == 0 {
            if !angles.is_empty() {
                match n {
                    None => n = Some(block_len),
                    Some(nn) if nn != block_len => {
                        return Err(parse_error(
                            path,
                            lineno,
                            format!("block of {block_len} rows, expected {nn}"),
                        ))
                    }
                    Some(_) => {}
                }
            }
            angles.push(theta);
            block_len = 0;
        } else if angles.last() != Some(&theta) {
            return Err(parse_error(
                path,
                lineno,
                "angle changed inside a block".into(),
            ));
        }
        if l != block_len {
            return Err(parse_error(
                path,
                lineno,
                format!("expected energy index {block_len}, got {l}"),
            ));
        }
        block_len += 1;
        values.push(v);
    }
    if angles.is_empty() {
        return Err(parse_error(path, 1, "no data rows".into()));
    }
    let n = n.unwrap_or(block_len);
    if block_len != n {
        return Err(parse_error(
            path,
            text.lines().count(),
            format!("final block of {block_len} rows, expected {n}"),
        ));
    }
    Spectrogram::new(angles, n, values)
}

/// Writes an experiment run: the run's `#` comment line, the fixed
/// five-column header, then one row per record.
pub fn write_experiment_csv(path: &Path, run: &ExperimentRun) -> Result<()> {
    let mut buf = String::with_capacity(96 * run.records.len() + run.comment.len() + 64);
    buf.push_str(&run.comment);
    buf.push('\n');
    buf.push_str(EXPERIMENT_HEADER);
    buf.push('\n');
    for r in &run.records {
        writeln!(
            buf,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.param_k, r.param_n, r.input_norm, r.output_norm, r.transformed
        )
        .expect("string write");
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Reads an experiment CSV back, recovering the family from the comment
/// line's `family=` key.
pub fn read_experiment_csv(path: &Path) -> Result<ExperimentRun> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let comment = match lines.next() {
        Some((_, first)) if first.starts_with('#') => first.to_string(),
        _ => return Err(parse_error(path, 1, "expected a # comment line".into())),
    };
    let family_tag = comment
        .trim_start_matches('#')
        .split(',')
        .find_map(|kv| kv.trim().strip_prefix("family="))
        .ok_or_else(|| parse_error(path, 1, "comment line has no family= key".into()))?;
    let family = ExperimentFamily::parse(family_tag)?;
    match lines.next() {
        Some((_, second)) if second.trim() == EXPERIMENT_HEADER => {}
        _ => {
            return Err(parse_error(
                path,
                2,
                format!("expected header {EXPERIMENT_HEADER:?}"),
            ))
        }
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(parse_error(
                path,
                lineno,
                format!("expected 5 fields, got {}", fields.len()),
            ));
        }
        let mut parsed = [0.0f64; 5];
        for (slot, field) in parsed.iter_mut().zip(&fields) {
            *slot = field
                .trim()
                .parse()
                .map_err(|_| parse_error(path, lineno, format!("bad number {field:?}")))?;
        }
        records.push(ExperimentRecord {
            param_k: parsed[0],
            param_n: parsed[1],
            input_norm: parsed[2],
            output_norm: parsed[3],
            transformed: parsed[4],
        });
    }
    Ok(ExperimentRun {
        family,
        comment,
        records,
    })
}

/// Solver run summary as written next to a reconstruction: the
/// parameters the caller chose, the iteration count, the stop reason,
/// the residual history, and the relative error when a ground truth was
/// available.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub parameters: serde_json::Map<String, serde_json::Value>,
    pub iterations: usize,
    pub stop_reason: String,
    pub residual_history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_error: Option<f64>,
}

impl ReportDocument {
    pub fn from_report(
        report: &SolveReport,
        parameters: serde_json::Map<String, serde_json::Value>,
        relative_error: Option<f64>,
    ) -> Self {
        ReportDocument {
            parameters,
            iterations: report.iterations,
            stop_reason: report.stop_reason.as_str().to_string(),
            residual_history: report.residual_history.clone(),
            relative_error,
        }
    }
}

pub fn write_report_json(path: &Path, doc: &ReportDocument) -> Result<()> {
    let mut text = serde_json::to_string_pretty(doc)
        .map_err(|e| Error::Parameter(format!("report serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_report_json(path: &Path) -> Result<ReportDocument> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_error(path, e.line(), e.to_string()))
}
