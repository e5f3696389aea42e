//! Scoring graphs, score matrices and the log-domain inference kernels.

mod graph;
mod inference;
mod score;

pub use graph::{Arc, Lattice, StateId};
pub use inference::{
    enumerate_paths, enumerate_paths_limited, enumerated_log_total, fb_tables, forward_backward, viterbi,
    EnumeratedPath, FbResult, FbTables, ViterbiPath, MAX_ENUMERATED_PATHS,
};
pub use score::{ScoreKind, ScoreMatrix};
