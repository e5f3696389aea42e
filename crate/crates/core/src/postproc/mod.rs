//! Test-time keyword decisions: posterior smoothing, keyword-filler decoding
//! and edit-distance search over CTC peaks.

mod detection;
mod kwfiller;
mod med;
mod smooth;

pub use detection::{read_detections, write_detections, Detection};
pub use kwfiller::{
    build_kwfiller_graph, filler_units, kwfiller_decode, kwfiller_phone_graph, ArcTag, KwFillerGraph, KwFillerScorer,
};
pub use med::{
    build_ctc_peak_lattice, estimate_confusions, levenshtein, med_best, med_log_threshold, med_search, med_span_score,
    med_spans, ConfusionMatrix, EditOp, MedMatch, PeakColumn, PeakConfig, PeakLattice, CONFUSION_FLOOR,
};
pub use smooth::{
    estimate_thresholds, keyword_confidence, mean_aligned_posteriors, smooth_posteriors, smoothed_keyword_score,
    unit_alignment, unit_posteriors, SmoothConfig, ThresholdTable, CONFIDENCE_FLOOR,
};
