use std::io;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum KwsError {
    #[error("word `{0}` has no pronunciation in the lexicon")]
    UnknownWord(String),
    #[error("phone `{0}` is not in the unit inventory")]
    UnknownPhone(String),
    #[error("word `{0}` has more than one pronunciation")]
    MultiplePronunciations(String),
    #[error("word `{0}` has an empty pronunciation")]
    EmptyPronunciation(String),
    #[error("label sequence is empty")]
    EmptyLabels,
    #[error("label sequence contains the blank unit")]
    BlankInLabels,
    #[error("inventory lacks the special unit `{0}`")]
    MissingSpecialUnit(&'static str),
    #[error("unit id {0} has no template in the topology")]
    NoTemplate(usize),
    #[error("no accepting path of the requested length")]
    NoPath,
    #[error("path enumeration exceeded the limit of {0} paths")]
    TooManyPaths(usize),
    #[error("lattice has an epsilon arc where an emitting arc is required")]
    EpsilonArc,
    #[error("epsilon cycle in lattice")]
    EpsilonCycle,
    #[error("unit id {unit} out of range for {units} score columns")]
    UnitOutOfRange { unit: usize, units: usize },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("unit `{0}` is not in the language model vocabulary")]
    UnknownUnit(String),
    #[error("unsupported n-gram order {0}")]
    BadOrder(usize),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("sequence of minimal length {min_frames} cannot fit in {frames} frames")]
    Infeasible { min_frames: usize, frames: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no alignments to estimate from")]
    EmptyAlignment,
    #[error("phone `{0}` is never aligned in the development data")]
    UncoveredPhone(String),
    #[error("development set is empty")]
    EmptyDev,
    #[error("score list is empty")]
    EmptyScores,
    #[error("reference alignment is not a framing of the label sequence")]
    AlignmentMismatch,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = KwsError> = std::result::Result<T, E>;
