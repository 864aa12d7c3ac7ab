//! Run trace rows and output files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One row per inner step; round 0, step 0 is the initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: usize,
    pub step: usize,
    pub beta: f64,
    pub lagrangian: f64,
    pub expected_g: f64,
    pub entropy: f64,
    pub best_g: f64,
    pub best_x: Vec<usize>,
    /// Each agent's most probable move.
    pub modal_x: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub best_x: Vec<usize>,
    pub best_g: f64,
    pub final_q: Vec<Vec<f64>>,
    pub seconds: f64,
}

pub const TRACE_FILE: &str = "trace.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const SAMPLES_FILE: &str = "samples.jsonl";

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    for row in rows {
        serde_json::to_writer(&mut out, row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![TraceRow {
            round: 0,
            step: 0,
            beta: 0.1,
            lagrangian: -1.0,
            expected_g: 1.0,
            entropy: 1.1,
            best_g: 0.0,
            best_x: vec![0, 0],
            modal_x: vec![0, 1],
        }];
        let path = dir.path().join(TRACE_FILE);
        write_trace(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(r#"{"round":0,"step":0,"beta":0.1,"lagrangian":-1.0,"expected_g":1.0,"entropy":1.1,"best_g":0.0"#));
        assert_eq!(read_trace(&path).unwrap(), rows);
    }
}
