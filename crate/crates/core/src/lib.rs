//! Sequence discriminative training and decoding for keyword spotting.
//!
//! The crate covers hidden-state topologies for HMM and CTC style acoustic
//! models, lattice-free MMI/bMMI/sMBR and CTC criteria with exact gradients,
//! phone n-gram denominator graphs, posterior smoothing, keyword/filler
//! decoding, minimum-edit-distance search over CTC peak lattices, and the
//! detection metrics used to compare them.

pub mod error;
pub mod lattice;
pub mod acoustic;
pub mod criteria;
pub mod evalcli;
pub mod math;
pub mod phonelm;
pub mod postproc;
pub mod topology;
pub mod units;

pub use error::{KwsError, Result};
