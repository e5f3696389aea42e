use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};
use crate::lattice::{ScoreKind, ScoreMatrix};

pub const PRIOR_FLOOR: f64 = 1e-6;

/// Class priors in the linear domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorVector {
    pub probs: Vec<f64>,
}

/// Frame frequencies of the aligned classes, floored and renormalized.
pub fn estimate_priors(alignments: &[Vec<usize>], units: usize) -> Result<PriorVector> {
    let mut counts = vec![0u64; units];
    let mut total = 0u64;
    for &u in alignments.iter().flatten() {
        if u >= units {
            return Err(KwsError::UnitOutOfRange { unit: u, units });
        }
        counts[u] += 1;
        total += 1;
    }
    if total == 0 {
        return Err(KwsError::EmptyAlignment);
    }
    let floored: Vec<f64> = counts.iter().map(|&c| (c as f64 / total as f64).max(PRIOR_FLOOR)).collect();
    let z: f64 = floored.iter().sum();
    Ok(PriorVector { probs: floored.iter().map(|p| p / z).collect() })
}

/// `log y - log P(u)` for every frame.
pub fn pseudo_likelihood(scores: &ScoreMatrix, priors: &PriorVector) -> Result<ScoreMatrix> {
    if priors.probs.len() != scores.units() {
        return Err(KwsError::DimensionMismatch { expected: scores.units(), got: priors.probs.len() });
    }
    let log_p: Vec<f64> = priors.probs.iter().map(|p| p.ln()).collect();
    let mut out = scores.clone().with_kind(ScoreKind::LogPseudoLikelihood);
    for t in 0..out.frames() {
        out.row_mut(t).iter_mut().zip(&log_p).for_each(|(v, lp)| *v -= lp);
    }
    Ok(out)
}
