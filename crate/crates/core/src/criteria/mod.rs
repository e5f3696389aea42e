//! Training objectives and their gradients with respect to log-posteriors.
//!
//! Every gradient is `dLoss / d log y_t(u)`; the acoustic model applies the
//! softmax Jacobian itself.

mod accuracy;
mod numerator;
mod sequence;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};
use crate::lattice::{forward_backward, Lattice, ScoreKind, ScoreMatrix};
use crate::topology::{compile_sequence_graph, Topology, TopologyKind};
use crate::units::LabelSequence;

pub use accuracy::{apply_nu_weights, nu_weight, state_accuracy, AccuracyLevel, AccuracyMap, NUConfig};
pub use numerator::{build_numerator_graph, label_positions};
pub use sequence::{lf_bmmi, lf_mmi, lf_smbr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CriterionKind {
    #[serde(rename = "ce")]
    Ce,
    #[serde(rename = "ctc")]
    Ctc,
    #[serde(rename = "lf-mmi")]
    LfMmi,
    #[serde(rename = "lf-bmmi")]
    LfBmmi,
    #[serde(rename = "lf-smbr")]
    LfSmbr,
}

impl CriterionKind {
    pub const ALL: [CriterionKind; 5] =
        [CriterionKind::Ce, CriterionKind::Ctc, CriterionKind::LfMmi, CriterionKind::LfBmmi, CriterionKind::LfSmbr];

    pub fn name(self) -> &'static str {
        match self {
            CriterionKind::Ce => "ce",
            CriterionKind::Ctc => "ctc",
            CriterionKind::LfMmi => "lf-mmi",
            CriterionKind::LfBmmi => "lf-bmmi",
            CriterionKind::LfSmbr => "lf-smbr",
        }
    }

    /// Lattice-free criteria that need a denominator graph.
    pub fn is_lattice_free(self) -> bool {
        matches!(self, CriterionKind::LfMmi | CriterionKind::LfBmmi | CriterionKind::LfSmbr)
    }
}

impl fmt::Display for CriterionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CriterionKind {
    type Err = KwsError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.to_ascii_lowercase().replace('_', "-");
        CriterionKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| KwsError::Config(format!("unknown criterion `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CriterionConfig {
    pub kind: CriterionKind,
    /// Acoustic scale applied to log-posteriors inside the sequence criteria.
    pub kappa: f64,
    pub boost: f64,
    /// Weight of the frame-level cross-entropy term.
    pub cew: f64,
    /// Numerator boundary tolerance in (subsampled) frames.
    pub tolerance: usize,
    pub subsample: usize,
    pub accuracy: AccuracyLevel,
}

impl Default for CriterionConfig {
    fn default() -> Self {
        Self {
            kind: CriterionKind::Ce,
            kappa: 1.0,
            boost: 0.1,
            cew: 0.7,
            tolerance: 2,
            subsample: 3,
            accuracy: AccuracyLevel::Phone,
        }
    }
}

impl CriterionConfig {
    pub fn new(kind: CriterionKind) -> Self {
        Self { kind, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(KwsError::Config(format!("kappa must be non-negative, got {}", self.kappa)));
        }
        if !(0.0..=1.0).contains(&self.cew) {
            return Err(KwsError::Config(format!("cew must lie in [0, 1], got {}", self.cew)));
        }
        if !(self.boost >= 0.0 && self.boost.is_finite()) {
            return Err(KwsError::Config(format!("boost must be non-negative, got {}", self.boost)));
        }
        if self.subsample == 0 {
            return Err(KwsError::Config("subsample must be at least 1".into()));
        }
        Ok(())
    }
}

/// Loss value and its gradient with respect to the log-posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: ScoreMatrix,
}

fn check_alignment(log_posteriors: &ScoreMatrix, alignment: &[usize]) -> Result<()> {
    if alignment.len() != log_posteriors.frames() {
        return Err(KwsError::LengthMismatch { expected: log_posteriors.frames(), got: alignment.len() });
    }
    if let Some(&u) = alignment.iter().find(|&&u| u >= log_posteriors.units()) {
        return Err(KwsError::UnitOutOfRange { unit: u, units: log_posteriors.units() });
    }
    Ok(())
}

/// Frame-level cross-entropy against a class alignment.
pub fn ce_loss(log_posteriors: &ScoreMatrix, alignment: &[usize]) -> Result<LossGrad> {
    check_alignment(log_posteriors, alignment)?;
    let mut grad = ScoreMatrix::zeros(log_posteriors.frames(), log_posteriors.units(), ScoreKind::Gradient);
    let mut loss = 0.0;
    for (t, &u) in alignment.iter().enumerate() {
        loss -= log_posteriors.get(t, u);
        grad.set(t, u, -1.0);
    }
    Ok(LossGrad { loss, grad })
}

/// Negative log-probability of `labels` summed over all CTC framings.
pub fn ctc_loss(log_posteriors: &ScoreMatrix, labels: &LabelSequence, topology: &Topology) -> Result<LossGrad> {
    if topology.kind() != TopologyKind::Ctc {
        return Err(KwsError::Config(format!("ctc loss needs the ctc topology, got {}", topology.kind())));
    }
    let graph = compile_sequence_graph(labels, topology)?;
    let frames = log_posteriors.frames();
    let min_frames = Topology::min_frames(&graph).unwrap_or(usize::MAX);
    if frames < min_frames {
        return Err(KwsError::Infeasible { min_frames, frames });
    }
    let fb = forward_backward(&graph, log_posteriors)?;
    let grad = fb.occupancy.map(ScoreKind::Gradient, |g| -g);
    Ok(LossGrad { loss: -fb.log_total, grad })
}

/// `w * ce + (1 - w) * seq`; the endpoints return their input unchanged.
pub fn interpolate(ce: &LossGrad, seq: &LossGrad, cew: f64) -> Result<LossGrad> {
    if !(0.0..=1.0).contains(&cew) {
        return Err(KwsError::Config(format!("cew must lie in [0, 1], got {cew}")));
    }
    if cew == 1.0 {
        return Ok(ce.clone());
    }
    if cew == 0.0 {
        return Ok(seq.clone());
    }
    if ce.grad.frames() != seq.grad.frames() || ce.grad.units() != seq.grad.units() {
        return Err(KwsError::DimensionMismatch { expected: ce.grad.as_slice().len(), got: seq.grad.as_slice().len() });
    }
    let values =
        ce.grad.as_slice().iter().zip(seq.grad.as_slice()).map(|(a, b)| cew * a + (1.0 - cew) * b).collect();
    Ok(LossGrad {
        loss: cew * ce.loss + (1.0 - cew) * seq.loss,
        grad: ScoreMatrix::from_vec(ce.grad.frames(), ce.grad.units(), values, ScoreKind::Gradient)?,
    })
}

/// Per-utterance supervision consumed by [`evaluate`].
#[derive(Debug, Clone, Copy)]
pub struct Targets<'a> {
    /// Class per frame (at the classifier's frame rate).
    pub alignment: &'a [usize],
    pub labels: &'a LabelSequence,
    /// Tolerance-constrained numerator, required by LF-MMI and LF-bMMI.
    pub numerator: Option<&'a Lattice>,
    /// Current-model best path, required when NU weighting is active.
    pub hypothesis: Option<&'a [usize]>,
}

/// Utterance-independent state of a criterion.
#[derive(Debug, Clone)]
pub struct Criterion<'a> {
    pub config: CriterionConfig,
    pub topology: &'a Topology,
    pub denominator: Option<&'a Lattice>,
    pub accuracy: AccuracyMap,
    pub nu: Option<NUConfig>,
}

impl<'a> Criterion<'a> {
    pub fn new(config: CriterionConfig, topology: &'a Topology, denominator: Option<&'a Lattice>) -> Result<Self> {
        config.validate()?;
        if config.kind.is_lattice_free() && denominator.is_none() {
            return Err(KwsError::Config(format!("{} needs a denominator graph", config.kind)));
        }
        let accuracy = AccuracyMap::new(topology, config.accuracy);
        Ok(Self { config, topology, denominator, accuracy, nu: None })
    }

    pub fn with_nu(mut self, nu: NUConfig) -> Self {
        self.nu = Some(nu);
        self
    }

    /// Loss and gradient of one utterance, including NU weighting and CE interpolation.
    pub fn evaluate(&self, log_posteriors: &ScoreMatrix, targets: &Targets<'_>) -> Result<LossGrad> {
        let cfg = &self.config;
        if cfg.kind.is_lattice_free() && cfg.cew == 1.0 {
            return ce_loss(log_posteriors, targets.alignment);
        }
        let seq = match cfg.kind {
            CriterionKind::Ce => return ce_loss(log_posteriors, targets.alignment),
            CriterionKind::Ctc => return ctc_loss(log_posteriors, targets.labels, self.topology),
            CriterionKind::LfMmi | CriterionKind::LfBmmi => {
                let num = targets.numerator.ok_or_else(|| KwsError::Config("numerator graph missing".into()))?;
                let den = self.denominator.unwrap();
                if cfg.kind == CriterionKind::LfMmi {
                    lf_mmi(log_posteriors, num, den, cfg)?
                } else {
                    lf_bmmi(log_posteriors, num, den, targets.alignment, &self.accuracy, cfg)?
                }
            }
            CriterionKind::LfSmbr => {
                lf_smbr(log_posteriors, self.denominator.unwrap(), targets.alignment, &self.accuracy, cfg)?
            }
        };
        let mut seq = seq;
        if let Some(nu) = &self.nu {
            let hyp = targets.hypothesis.ok_or_else(|| KwsError::Config("NU weighting needs hypotheses".into()))?;
            let w = nu_weight(targets.alignment, hyp, nu)?;
            apply_nu_weights(&mut seq.grad, &w)?;
        }
        if cfg.cew == 0.0 {
            return Ok(seq);
        }
        interpolate(&ce_loss(log_posteriors, targets.alignment)?, &seq, cfg.cew)
    }
}

#[cfg(test)]
mod tests;
