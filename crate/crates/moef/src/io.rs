//! File formats: wide-CSV observation streams, JSON-lines diagnostics,
//! hidden-truth CSVs, and the TOML config/scenario file.
//!
//! Observations are one row per tick (`t,y,expert_0,...,expert_{N-1}`),
//! UTF-8 with LF line endings, no missing cells (gaps are absent rows).
//! Floats are written in Rust's shortest round-trip decimal form, so a
//! write/read cycle reproduces every value bit-for-bit. Parse errors carry
//! 1-based line numbers.

use crate::error::{MoefError, Result};
use crate::harness::TickOutput;
use crate::metrics::{label_from_pct, pct_change, MovementLabel};
use crate::simulator::Scenario;
use crate::types::{FusionConfig, ObservationRecord};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Writes the observations file. Column layout is fixed:
/// `t,y,expert_0,...,expert_{N-1}`.
pub fn write_observations(path: &Path, observations: &[ObservationRecord]) -> Result<()> {
    let n = observations.first().map_or(0, |o| o.n_experts());
    let mut w = BufWriter::new(fs::File::create(path)?);
    write!(w, "t,y")?;
    for i in 0..n {
        write!(w, ",expert_{i}")?;
    }
    writeln!(w)?;
    for obs in observations {
        write!(w, "{},{}", obs.t, obs.y)?;
        for p in &obs.predictions {
            write!(w, ",{p}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads and validates an observations file: exact header, constant column
/// count, strictly increasing integer ticks, finite values.
pub fn read_observations(path: &Path) -> Result<Vec<ObservationRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| MoefError::parse(1, "empty file, expected a header row"))?;
    let header = header?;
    let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if cols.len() < 3 || cols[0] != "t" || cols[1] != "y" {
        return Err(MoefError::parse(
            1,
            format!("header must start with 't,y,expert_0,...', got {header:?}"),
        ));
    }
    let n = cols.len() - 2;
    for (i, col) in cols[2..].iter().enumerate() {
        if *col != format!("expert_{i}") {
            return Err(MoefError::parse(
                1,
                format!("expected column 'expert_{i}', got {col:?}"),
            ));
        }
    }

    let mut observations = Vec::new();
    let mut last_t: Option<i64> = None;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != n + 2 {
            return Err(MoefError::parse(
                line_no,
                format!("expected {} columns, got {}", n + 2, fields.len()),
            ));
        }
        let t: i64 = fields[0]
            .parse()
            .map_err(|_| MoefError::parse(line_no, format!("bad tick index {:?}", fields[0])))?;
        if let Some(prev) = last_t {
            if t <= prev {
                return Err(MoefError::parse(
                    line_no,
                    format!("tick {t} is not strictly greater than {prev}"),
                ));
            }
        }
        last_t = Some(t);
        let mut values = Vec::with_capacity(n + 1);
        for f in &fields[1..] {
            let v: f64 = f
                .parse()
                .map_err(|_| MoefError::parse(line_no, format!("bad number {f:?}")))?;
            if !v.is_finite() {
                return Err(MoefError::parse(line_no, format!("non-finite value {f:?}")));
            }
            values.push(v);
        }
        observations.push(ObservationRecord::new(t, values[0], values[1..].to_vec()));
    }
    Ok(observations)
}

/// One diagnostics line: everything a tick produced, with the Q matrix
/// flattened row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub t: i64,
    pub y: f64,
    pub fused: f64,
    pub estimates: Vec<f64>,
    pub pi_bar: Vec<f64>,
    pub scores: Vec<f64>,
    pub q: Vec<f64>,
    pub floor_events: u32,
}

impl DiagnosticsRecord {
    pub fn from_tick(obs: &ObservationRecord, out: &TickOutput) -> Self {
        DiagnosticsRecord {
            t: out.t,
            y: obs.y,
            fused: out.fused,
            estimates: out.per_expert_estimates.clone(),
            pi_bar: out.pi_bar.weights().to_vec(),
            scores: out.scores.clone(),
            q: out.q_next.matrix().as_slice().to_vec(),
            floor_events: out.floor_events,
        }
    }
}

/// Writes diagnostics as one JSON object per line.
pub fn write_diagnostics(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)
            .map_err(|e| MoefError::Numerical(format!("diagnostics serialization failed: {e}")))?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a diagnostics file back, enforcing the weight-sum invariant on
/// every line.
pub fn read_diagnostics(path: &Path) -> Result<Vec<DiagnosticsRecord>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DiagnosticsRecord = serde_json::from_str(&line)
            .map_err(|e| MoefError::parse(idx + 1, format!("bad diagnostics line: {e}")))?;
        let sum: f64 = record.pi_bar.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(MoefError::parse(
                idx + 1,
                format!("pi_bar sums to {sum}, expected 1 within 1e-9"),
            ));
        }
        records.push(record);
    }
    Ok(records)
}

/// Writes the hidden-truth file (`t,active_expert`).
pub fn write_truth(path: &Path, ticks: &[i64], hidden: &[usize]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "t,active_expert")?;
    for (t, h) in ticks.iter().zip(hidden) {
        writeln!(w, "{t},{h}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the hidden-truth file.
pub fn read_truth(path: &Path) -> Result<Vec<(i64, usize)>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| MoefError::parse(1, "empty truth file"))?;
    let header = header?;
    if header.trim_end_matches('\r') != "t,active_expert" {
        return Err(MoefError::parse(
            1,
            format!("expected header 't,active_expert', got {header:?}"),
        ));
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.is_empty() {
            continue;
        }
        let (t, h) = trimmed.split_once(',').ok_or_else(|| {
            MoefError::parse(idx + 1, "expected two comma-separated fields")
        })?;
        let t: i64 = t
            .parse()
            .map_err(|_| MoefError::parse(idx + 1, format!("bad tick {t:?}")))?;
        let h: usize = h
            .parse()
            .map_err(|_| MoefError::parse(idx + 1, format!("bad expert index {h:?}")))?;
        out.push((t, h));
    }
    Ok(out)
}

/// The TOML config file: a `[fusion]` table mirroring [`FusionConfig`] and
/// a `[scenario]` table for the simulator. Unknown keys are rejected.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub fusion: Option<FusionConfig>,
    pub scenario: Option<Scenario>,
}

pub fn read_config_file(path: &Path) -> Result<ConfigFile> {
    let text = fs::read_to_string(path)?;
    let parsed: ConfigFile = toml::from_str(&text).map_err(|e| {
        // toml errors carry a span; surface the line when available.
        let line = text[..e.span().map_or(0, |s| s.start)]
            .bytes()
            .filter(|b| *b == b'\n')
            .count()
            + 1;
        MoefError::parse(line, e.message().to_string())
    })?;
    if let Some(fusion) = &parsed.fusion {
        fusion
            .validate()
            .map_err(|e| MoefError::parse(1, e.to_string()))?;
    }
    if let Some(scenario) = &parsed.scenario {
        scenario
            .validate()
            .map_err(|e| MoefError::parse(1, e.to_string()))?;
    }
    Ok(parsed)
}

pub fn write_config_file(path: &Path, config: &ConfigFile) -> Result<()> {
    let text = toml::to_string_pretty(config)
        .map_err(|e| MoefError::Domain(format!("config serialization failed: {e}")))?;
    fs::write(path, text)?;
    Ok(())
}

/// A label stream for movement evaluation, keyed by tick.
pub type LabeledSeries = Vec<(i64, MovementLabel)>;

/// Reads a movement file: header `t,label` consumes labels directly, while
/// header `t,close` derives labels from consecutive percentage changes
/// (aligned to the later tick).
pub fn read_movement_file(path: &Path) -> Result<LabeledSeries> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| MoefError::parse(1, "empty movement file"))?;
    let header = header?;
    let header = header.trim_end_matches('\r');

    let is_label = match header {
        "t,label" => true,
        "t,close" => false,
        other => {
            return Err(MoefError::parse(
                1,
                format!("expected header 't,label' or 't,close', got {other:?}"),
            ))
        }
    };

    let mut out = Vec::new();
    let mut prev_close: Option<f64> = None;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.is_empty() {
            continue;
        }
        let (t, value) = trimmed
            .split_once(',')
            .ok_or_else(|| MoefError::parse(line_no, "expected two comma-separated fields"))?;
        let t: i64 = t
            .parse()
            .map_err(|_| MoefError::parse(line_no, format!("bad tick {t:?}")))?;
        if is_label {
            let label = MovementLabel::parse(value)
                .map_err(|e| MoefError::parse(line_no, e.to_string()))?;
            out.push((t, label));
        } else {
            let close: f64 = value
                .parse()
                .map_err(|_| MoefError::parse(line_no, format!("bad close {value:?}")))?;
            if let Some(prev) = prev_close {
                let pct = pct_change(close, prev)
                    .map_err(|e| MoefError::parse(line_no, e.to_string()))?;
                out.push((t, label_from_pct(pct)));
            }
            prev_close = Some(close);
        }
    }
    Ok(out)
}

/// Reads a wide numeric file with header `t,y_0,...,y_{C-1}` for the MSE
/// task. Returns ticks and the H x C value matrix.
pub fn read_matrix_file(path: &Path) -> Result<(Vec<i64>, Vec<Vec<f64>>)> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| MoefError::parse(1, "empty matrix file"))?;
    let header = header?;
    let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
    if cols.len() < 2 || cols[0] != "t" {
        return Err(MoefError::parse(
            1,
            format!("header must be 't,y_0,...', got {header:?}"),
        ));
    }
    let channels = cols.len() - 1;
    let mut ticks = Vec::new();
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim_end_matches('\r');
        if trimmed.is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != channels + 1 {
            return Err(MoefError::parse(
                line_no,
                format!("expected {} columns, got {}", channels + 1, fields.len()),
            ));
        }
        ticks.push(
            fields[0]
                .parse()
                .map_err(|_| MoefError::parse(line_no, format!("bad tick {:?}", fields[0])))?,
        );
        let mut row = Vec::with_capacity(channels);
        for f in &fields[1..] {
            row.push(
                f.parse::<f64>()
                    .map_err(|_| MoefError::parse(line_no, format!("bad number {f:?}")))?,
            );
        }
        rows.push(row);
    }
    Ok((ticks, rows))
}
