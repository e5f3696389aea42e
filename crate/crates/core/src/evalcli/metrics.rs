use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};

/// Nominal frame shift used to turn frame counts into audio time.
pub const FRAME_SHIFT_SECS: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub post: String,
    pub eer: f64,
    /// Sweep threshold at which the EER crossing is first reached.
    pub eer_threshold: f64,
    /// False alarms per hour on keyword-free test audio at `eer_threshold`.
    pub faf: f64,
    pub rtf: f64,
    pub positives: usize,
    pub negatives: usize,
    pub roc: Vec<RocPoint>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Report bytes with the wall-clock field cleared.
    pub fn deterministic_json(&self) -> Result<String> {
        Self { rtf: 0.0, ..self.clone() }.to_json()
    }
}

pub fn write_roc_csv<W: Write>(mut out: W, roc: &[RocPoint]) -> Result<()> {
    writeln!(out, "threshold,far,frr")?;
    for p in roc {
        writeln!(out, "{},{},{}", p.threshold, p.far, p.frr)?;
    }
    Ok(())
}

/// Counts of `sorted` below and at or above `threshold`.
fn split_at(sorted: &[f64], threshold: f64) -> (usize, usize) {
    let below = sorted.partition_point(|&s| s < threshold);
    (below, sorted.len() - below)
}

/// Sweeps every distinct score as an "accept iff score >= threshold" point.
///
/// Returns the EER, the first sweep threshold where FAR <= FRR and the ROC.
/// The crossing is interpolated linearly between adjacent sweep points; past
/// the largest score everything is rejected (FAR 0, FRR 1).
pub fn compute_eer(positives: &[f64], negatives: &[f64]) -> Result<(f64, f64, Vec<RocPoint>)> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(KwsError::EmptyScores);
    }
    if positives.iter().chain(negatives).any(|s| s.is_nan()) {
        return Err(KwsError::Format("NaN score".into()));
    }
    let mut pos = positives.to_vec();
    let mut neg = negatives.to_vec();
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut thresholds: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let roc: Vec<RocPoint> = thresholds
        .iter()
        .map(|&t| RocPoint {
            threshold: t,
            far: split_at(&neg, t).1 as f64 / neg.len() as f64,
            frr: split_at(&pos, t).0 as f64 / pos.len() as f64,
        })
        .collect();
    let mut prev = (1.0, 0.0);
    for p in roc.iter().copied().chain(std::iter::once(RocPoint { threshold: f64::INFINITY, far: 0.0, frr: 1.0 })) {
        let d = p.far - p.frr;
        if d <= 0.0 {
            let d0 = prev.0 - prev.1;
            let eer = if d == 0.0 { p.far } else { prev.0 + d0 / (d0 - d) * (p.far - prev.0) };
            return Ok((eer, p.threshold, roc));
        }
        prev = (p.far, p.frr);
    }
    unreachable!("the reject-all point always crosses")
}

pub fn compute_faf(false_alarms: usize, hours: f64) -> Result<f64> {
    if !(hours > 0.0) {
        return Err(KwsError::Config("audio duration must be positive".into()));
    }
    Ok(false_alarms as f64 / hours)
}

pub fn measure_rtf(decode_secs: f64, audio_secs: f64) -> Result<f64> {
    if !(audio_secs > 0.0) {
        return Err(KwsError::Config("audio duration must be positive".into()));
    }
    Ok(decode_secs / audio_secs)
}

pub fn frames_to_secs(frames: usize) -> f64 {
    frames as f64 * FRAME_SHIFT_SECS
}
