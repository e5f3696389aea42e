use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};

/// A keyword hit inside one utterance; frames are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub keyword: String,
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

const HEADER: &str = "utt_id,keyword,start_frame,end_frame,score";

/// Writes `utt_id,keyword,start_frame,end_frame,score` rows.
pub fn write_detections<W: Write>(mut out: W, rows: &[(String, Detection)]) -> Result<()> {
    writeln!(out, "{HEADER}")?;
    for (utt, d) in rows {
        writeln!(out, "{utt},{},{},{},{}", d.keyword, d.start, d.end, d.score)?;
    }
    Ok(())
}

pub fn read_detections<R: BufRead>(input: R) -> Result<Vec<(String, Detection)>> {
    let mut rows = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if n == 0 && line.trim() == HEADER || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || KwsError::Format(format!("detections line {}: `{line}`", n + 1));
        if f.len() != 5 {
            return Err(bad());
        }
        let d = Detection {
            keyword: f[1].to_string(),
            start: f[2].parse().map_err(|_| bad())?,
            end: f[3].parse().map_err(|_| bad())?,
            score: f[4].parse().map_err(|_| bad())?,
        };
        rows.push((f[0].to_string(), d));
    }
    Ok(rows)
}
