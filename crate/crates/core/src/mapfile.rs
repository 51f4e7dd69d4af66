//! Response-map files: a `# key: value` header block followed by CSV rows
//! `ix,iy,vx,vy,s21_off,s21_on,delta,t,flags`.
//!
//! Floats use Rust's shortest round-trip formatting, so save → load is
//! lossless (NaN included).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scan::{MapMetadata, ResponseMap, ResponseSample, SampleFlags, ScanPlan};
use crate::VoltageCoord;

pub const FORMAT_TAG: &str = "cryoscan-response-map/1";
pub const COLUMNS: [&str; 9] = ["ix", "iy", "vx", "vy", "s21_off", "s21_on", "delta", "t", "flags"];

pub fn to_string(map: &ResponseMap) -> String {
    let m = &map.metadata;
    let mut out = String::new();
    let plan = serde_json::to_string(&map.plan).expect("plans always serialize");
    let _ = writeln!(out, "# format: {FORMAT_TAG}");
    let _ = writeln!(out, "# plan: {plan}");
    let _ = writeln!(out, "# config_hash: {}", m.config_hash);
    let _ = writeln!(out, "# seed: {}", m.seed);
    let _ = writeln!(out, "# session_id: {}", m.session_id);
    let _ = writeln!(out, "# created_s: {}", m.created_s);
    let _ = writeln!(out, "# complete: {}", m.complete);
    let _ = writeln!(out, "# samples: {}", map.samples.len());
    out.push_str(&COLUMNS.join(","));
    out.push('\n');
    for s in &map.samples {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            s.ix, s.iy, s.v.vx, s.v.vy, s.s21_off, s.s21_on, s.delta, s.timestamp, s.flags
        );
    }
    out
}

pub fn save_map(map: &ResponseMap, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_string(map))?;
    Ok(())
}

pub fn load_map(path: impl AsRef<Path>) -> Result<ResponseMap> {
    from_str(&fs::read_to_string(path)?)
}

fn perr(line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        column,
        message: message.into(),
    }
}

fn field<T: FromStr>(raw: &str, line: usize, column: usize, name: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| perr(line, column, format!("`{raw}` is not a valid {name}")))
}

#[derive(Default)]
struct Header {
    format: Option<String>,
    plan: Option<ScanPlan>,
    config_hash: Option<String>,
    seed: Option<u64>,
    session_id: Option<String>,
    created_s: Option<f64>,
    complete: Option<bool>,
    samples: Option<usize>,
}

/// Parses and validates a map. Any defect fails the whole load.
pub fn from_str(text: &str) -> Result<ResponseMap> {
    let mut h = Header::default();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();

    while let Some(&(ln, line)) = lines.peek() {
        let Some(body) = line.strip_prefix('#') else { break };
        lines.next();
        let Some((key, value)) = body.split_once(':') else {
            return Err(perr(ln, 2, "header lines are `# key: value`"));
        };
        let key = key.trim();
        let value = value.trim();
        let col = line.find(value).unwrap_or(0) + 1;
        match key {
            "format" => h.format = Some(value.to_string()),
            "plan" => {
                let p: ScanPlan = serde_json::from_str(value)
                    .map_err(|e| perr(ln, col + e.column().saturating_sub(1), format!("plan: {e}")))?;
                h.plan = Some(p);
            }
            "config_hash" => h.config_hash = Some(value.to_string()),
            "seed" => h.seed = Some(field(value, ln, col, "seed")?),
            "session_id" => h.session_id = Some(value.to_string()),
            "created_s" => h.created_s = Some(field(value, ln, col, "time")?),
            "complete" => h.complete = Some(field(value, ln, col, "boolean")?),
            "samples" => h.samples = Some(field(value, ln, col, "count")?),
            other => return Err(perr(ln, 3, format!("unknown header key `{other}`"))),
        }
    }

    let header_end = lines.peek().map(|&(ln, _)| ln).unwrap_or(text.lines().count() + 1);
    match h.format.as_deref() {
        Some(FORMAT_TAG) => {}
        Some(other) => return Err(perr(1, 1, format!("unsupported format `{other}`"))),
        None => return Err(perr(1, 1, "missing `# format:` header")),
    }
    let missing = |k: &str| perr(header_end, 1, format!("missing header `{k}`"));
    let plan = h.plan.ok_or_else(|| missing("plan"))?;
    let declared = h.samples.ok_or_else(|| missing("samples"))?;
    let metadata = MapMetadata {
        config_hash: h.config_hash.ok_or_else(|| missing("config_hash"))?,
        seed: h.seed.ok_or_else(|| missing("seed"))?,
        session_id: h.session_id.ok_or_else(|| missing("session_id"))?,
        created_s: h.created_s.ok_or_else(|| missing("created_s"))?,
        complete: h.complete.ok_or_else(|| missing("complete"))?,
    };

    match lines.next() {
        Some((ln, l)) if l.trim_end() != COLUMNS.join(",") => {
            return Err(perr(ln, 1, format!("expected column row `{}`", COLUMNS.join(","))))
        }
        Some(_) => {}
        None => return Err(perr(header_end, 1, "file ends before the column row")),
    }

    let mut samples = Vec::with_capacity(declared);
    let mut last_line = header_end;
    for (ln, line) in lines {
        last_line = ln;
        if line.is_empty() {
            continue;
        }
        samples.push(parse_row(line, ln)?);
    }
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(perr(last_line, text.lines().last().map_or(1, |l| l.len() + 1), "truncated final row"));
    }
    if samples.len() != declared {
        return Err(Error::Validation(format!(
            "header declares {declared} samples, file holds {}",
            samples.len()
        )));
    }

    let map = ResponseMap {
        plan,
        samples,
        metadata,
    };
    map.validate()?;
    Ok(map)
}

fn parse_row(line: &str, ln: usize) -> Result<ResponseSample> {
    let mut cols = Vec::with_capacity(COLUMNS.len());
    let mut start = 0;
    for part in line.split(',') {
        cols.push((start + 1, part));
        start += part.len() + 1;
    }
    if cols.len() != COLUMNS.len() {
        let col = if cols.len() < COLUMNS.len() { line.len() + 1 } else { cols[COLUMNS.len()].0 };
        return Err(perr(
            ln,
            col,
            format!("expected {} columns, found {}", COLUMNS.len(), cols.len()),
        ));
    }
    let f = |i: usize| -> Result<f64> { field(cols[i].1, ln, cols[i].0, COLUMNS[i]) };
    let u = |i: usize| -> Result<usize> { field(cols[i].1, ln, cols[i].0, COLUMNS[i]) };
    let flags = SampleFlags::parse(cols[8].1).map_err(|m| perr(ln, cols[8].0, m))?;
    Ok(ResponseSample {
        ix: u(0)?,
        iy: u(1)?,
        v: VoltageCoord { vx: f(2)?, vy: f(3)? },
        s21_off: f(4)?,
        s21_on: f(5)?,
        delta: f(6)?,
        timestamp: f(7)?,
        flags,
    })
}
