//! Synthetic corpora, detection metrics and experiment orchestration.

mod metrics;
mod pipeline;
mod synth;

pub use metrics::{
    compute_eer, compute_faf, frames_to_secs, measure_rtf, write_roc_csv, MetricsReport, RocPoint, FRAME_SHIFT_SECS,
};
pub use pipeline::{
    align_split, evaluate, model_priors, model_topology, report_from_results, run_experiment, train_system, with_threads,
    Decoder, ExperimentConfig, PostMode, System, UttResult, SCORE_LIMIT,
};
pub use synth::{gen_corpus, phone_name, Corpus, Split, SynthConfig, SynthUtterance};

#[cfg(test)]
mod tests;
