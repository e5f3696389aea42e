//! Phone n-gram language model and the lattice-free denominator graph.

mod graph;
mod ngram;

pub use graph::{build_denominator_graph, build_denominator_graph_with_origin, lm_acceptor};
pub use ngram::{score_sequence, train_ngram, NGramModel, NGramOptions, Token, BOS, EOS};
