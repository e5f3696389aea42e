use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};
use crate::lattice::ScoreMatrix;
use crate::topology::Topology;

/// Granularity at which a frame counts as correct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccuracyLevel {
    /// Same phone (any of its label states); blank classes only match themselves.
    #[default]
    Phone,
    /// Same output class.
    State,
}

/// Precomputed identity key of every output class.
#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyMap {
    keys: Vec<(Option<usize>, bool, usize)>,
}

impl AccuracyMap {
    pub fn new(topology: &Topology, level: AccuracyLevel) -> Self {
        let keys = (0..topology.num_classes())
            .map(|c| {
                let info = topology.class_info(c);
                match level {
                    AccuracyLevel::Phone => (info.unit, info.is_blank, 0),
                    AccuracyLevel::State => (None, false, c),
                }
            })
            .collect();
        Self { keys }
    }

    /// Every class is its own identity.
    pub fn identity(classes: usize) -> Self {
        Self { keys: (0..classes).map(|c| (None, false, c)).collect() }
    }

    pub fn num_classes(&self) -> usize {
        self.keys.len()
    }

    pub fn matches(&self, class: usize, reference: usize) -> bool {
        self.keys[class] == self.keys[reference]
    }

    /// `acc(t, u)` as a frames × classes 0/1 matrix.
    pub fn frame_matrix(&self, reference: &[usize]) -> ScoreMatrix {
        let n = self.keys.len();
        let mut m = ScoreMatrix::zeros(reference.len(), n, crate::lattice::ScoreKind::Feature);
        for (t, &r) in reference.iter().enumerate() {
            for u in 0..n {
                if self.matches(u, r) {
                    m.set(t, u, 1.0);
                }
            }
        }
        m
    }
}

/// Number of frames whose class matches the reference under `acc`.
pub fn state_accuracy(path: &[usize], reference: &[usize], acc: &AccuracyMap) -> Result<usize> {
    if path.len() != reference.len() {
        return Err(KwsError::LengthMismatch { expected: reference.len(), got: path.len() });
    }
    Ok(path.iter().zip(reference).filter(|(&p, &r)| acc.matches(p, r)).count())
}

/// Non-uniform gradient boosting around keyword units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NUConfig {
    /// Boost where the reference is a keyword unit (false rejections).
    pub alpha: f64,
    /// Boost where the hypothesis is a keyword unit (false alarms).
    pub beta: f64,
    pub keyword_units: BTreeSet<usize>,
}

impl NUConfig {
    pub fn new(alpha: f64, beta: f64, keyword_units: impl IntoIterator<Item = usize>) -> Result<Self> {
        if !(alpha >= 1.0 && beta >= 1.0) {
            return Err(KwsError::Config(format!("NU boosts must be >= 1, got alpha={alpha} beta={beta}")));
        }
        Ok(Self { alpha, beta, keyword_units: keyword_units.into_iter().collect() })
    }

    /// Keyword set made of every output class owned by one of `phones`.
    pub fn for_keyword_phones(alpha: f64, beta: f64, phones: &[usize], topology: &Topology) -> Result<Self> {
        let classes = (0..topology.num_classes()).filter(|&c| topology.class_info(c).unit.is_some_and(|u| phones.contains(&u)));
        Self::new(alpha, beta, classes)
    }
}

/// Per-frame gradient weight.
pub fn nu_weight(reference: &[usize], hypothesis: &[usize], nu: &NUConfig) -> Result<Vec<f64>> {
    if reference.len() != hypothesis.len() {
        return Err(KwsError::LengthMismatch { expected: reference.len(), got: hypothesis.len() });
    }
    Ok(reference
        .iter()
        .zip(hypothesis)
        .map(|(r, h)| match (nu.keyword_units.contains(r), nu.keyword_units.contains(h)) {
            (true, true) => nu.alpha.min(nu.beta),
            (true, false) => nu.alpha,
            (false, true) => nu.beta,
            (false, false) => 1.0,
        })
        .collect())
}

/// Multiplies gradient row `t` by `weights[t]`.
pub fn apply_nu_weights(grad: &mut ScoreMatrix, weights: &[f64]) -> Result<()> {
    if weights.len() != grad.frames() {
        return Err(KwsError::LengthMismatch { expected: grad.frames(), got: weights.len() });
    }
    for (t, &w) in weights.iter().enumerate() {
        if w != 1.0 {
            grad.row_mut(t).iter_mut().for_each(|g| *g *= w);
        }
    }
    Ok(())
}
