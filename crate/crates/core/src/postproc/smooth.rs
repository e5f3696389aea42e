use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};
use crate::lattice::{ScoreKind, ScoreMatrix};
use crate::topology::Topology;
use crate::units::{LabelSequence, UnitInventory};

pub const CONFIDENCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SmoothConfig {
    /// Width of the centered mean window.
    pub w_s: usize,
    /// Width of the trailing max window.
    pub w_m: usize,
}

impl Default for SmoothConfig {
    fn default() -> Self {
        Self { w_s: 5, w_m: 10 }
    }
}

/// Centered moving average (truncated at the edges), then trailing moving max.
pub fn smooth_posteriors(posteriors: &ScoreMatrix, cfg: SmoothConfig) -> ScoreMatrix {
    let (frames, units) = (posteriors.frames(), posteriors.units());
    let half = cfg.w_s.max(1) / 2;
    let mut mean = ScoreMatrix::zeros(frames, units, ScoreKind::Occupancy);
    for t in 0..frames {
        let lo = t.saturating_sub(half);
        let hi = (t + half).min(frames.saturating_sub(1));
        let n = (hi - lo + 1) as f64;
        for u in 0..units {
            let s: f64 = (lo..=hi).map(|k| posteriors.get(k, u)).sum();
            mean.set(t, u, s / n);
        }
    }
    let w_m = cfg.w_m.max(1);
    let mut out = ScoreMatrix::zeros(frames, units, ScoreKind::Occupancy);
    for t in 0..frames {
        let lo = (t + 1).saturating_sub(w_m);
        for u in 0..units {
            let m = (lo..=t).map(|k| mean.get(k, u)).fold(f64::NEG_INFINITY, f64::max);
            out.set(t, u, m);
        }
    }
    out
}

/// Per-frame geometric mean of the keyword's unit posteriors.
pub fn keyword_confidence(smoothed: &ScoreMatrix, keyword_units: &[usize]) -> Vec<f64> {
    let n = keyword_units.len().max(1) as f64;
    smoothed
        .rows()
        .map(|row| {
            let s: f64 = keyword_units.iter().map(|&u| row[u].max(CONFIDENCE_FLOOR).ln()).sum();
            (s / n).exp()
        })
        .collect()
}

/// Linear class posteriors folded onto inventory units: each unit collects
/// every class it owns (label states and its own blank); a shared blank
/// stays on the blank unit.
pub fn unit_posteriors(log_posteriors: &ScoreMatrix, topology: &Topology) -> Result<ScoreMatrix> {
    if log_posteriors.units() != topology.num_classes() {
        return Err(KwsError::DimensionMismatch { expected: topology.num_classes(), got: log_posteriors.units() });
    }
    let inv = topology.inventory();
    let owner: Vec<usize> = (0..topology.num_classes())
        .map(|c| topology.class_info(c).unit.or(inv.blank()).expect("shared blank needs a blank unit"))
        .collect();
    let mut out = ScoreMatrix::zeros(log_posteriors.frames(), inv.total_units(), ScoreKind::Occupancy);
    for t in 0..log_posteriors.frames() {
        for (c, &lp) in log_posteriors.row(t).iter().enumerate() {
            out.add(t, owner[c], lp.exp());
        }
    }
    Ok(out)
}

/// Unit owning each aligned class (see [`unit_posteriors`]).
pub fn unit_alignment(alignment: &[usize], topology: &Topology) -> Vec<usize> {
    let blank = topology.inventory().blank();
    alignment.iter().map(|&c| topology.class_info(c).unit.or(blank).unwrap()).collect()
}

/// Keyword thresholds and the shared offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdTable {
    pub per_keyword: BTreeMap<String, f64>,
    /// Shared log-domain offset: accept iff `ln score >= ln T(k) + t0`.
    pub t0: f64,
}

impl ThresholdTable {
    pub fn threshold(&self, keyword: &str) -> Option<f64> {
        self.per_keyword.get(keyword).copied()
    }

    /// `ln score - ln T(k)`, the value compared against `t0`.
    pub fn margin(&self, keyword: &str, log_score: f64) -> Option<f64> {
        self.threshold(keyword).map(|t| log_score - t.ln())
    }

    pub fn accepts(&self, keyword: &str, log_score: f64) -> bool {
        self.margin(keyword, log_score).is_some_and(|m| m >= self.t0)
    }
}

/// Mean aligned posterior of every unit over a development set.
pub fn mean_aligned_posteriors(dev: &[(ScoreMatrix, Vec<usize>)], units: usize) -> Result<Vec<Option<f64>>> {
    if dev.is_empty() {
        return Err(KwsError::EmptyDev);
    }
    let mut sum = vec![0.0; units];
    let mut count = vec![0usize; units];
    for (post, ali) in dev {
        if ali.len() != post.frames() {
            return Err(KwsError::LengthMismatch { expected: post.frames(), got: ali.len() });
        }
        for (t, &u) in ali.iter().enumerate() {
            sum[u] += post.get(t, u);
            count[u] += 1;
        }
    }
    Ok(sum.iter().zip(&count).map(|(s, &c)| (c > 0).then(|| s / c as f64)).collect())
}

/// Per-keyword threshold: geometric mean of its phones' mean aligned posteriors.
///
/// `dev` holds unit-level linear posteriors and unit alignments.
pub fn estimate_thresholds(
    dev: &[(ScoreMatrix, Vec<usize>)],
    keywords: &[(String, LabelSequence)],
    inventory: &UnitInventory,
) -> Result<ThresholdTable> {
    let means = mean_aligned_posteriors(dev, inventory.total_units())?;
    let mut per_keyword = BTreeMap::new();
    for (name, seq) in keywords {
        let mut s = 0.0;
        for &p in seq.units() {
            let m = means[p].ok_or_else(|| KwsError::UncoveredPhone(inventory.name(p).to_string()))?;
            s += m.max(CONFIDENCE_FLOOR).ln();
        }
        per_keyword.insert(name.clone(), (s / seq.len() as f64).exp().min(1.0));
    }
    Ok(ThresholdTable { per_keyword, t0: 0.0 })
}

/// Peak confidence of one keyword and the frame where it occurs.
pub fn smoothed_keyword_score(smoothed: &ScoreMatrix, keyword_units: &[usize]) -> Option<(usize, f64)> {
    keyword_confidence(smoothed, keyword_units)
        .into_iter()
        .enumerate()
        .fold(None, |best, (t, c)| match best {
            Some((_, b)) if b >= c => best,
            _ => Some((t, c)),
        })
}
