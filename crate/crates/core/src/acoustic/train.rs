use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustic::model::{FrameClassifier, Gradients, ModelConfig};
use crate::acoustic::priors::{estimate_priors, PriorVector};
use crate::criteria::{build_numerator_graph, Criterion, CriterionConfig, CriterionKind, NUConfig, Targets};
use crate::error::{KwsError, Result};
use crate::lattice::{viterbi, Lattice, ScoreKind, ScoreMatrix};
use crate::phonelm::{build_denominator_graph, train_ngram, NGramOptions};
use crate::topology::{compile_sequence_graph, Topology};
use crate::units::LabelSequence;

/// One training utterance with its supervision at the model's output rate.
#[derive(Debug, Clone)]
pub struct TrainUtterance {
    pub id: String,
    pub features: ScoreMatrix,
    pub labels: LabelSequence,
    pub alignment: Vec<usize>,
    pub numerator: Option<Lattice>,
    pub hypothesis: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Mean per-frame loss over the utterances that were used.
    pub loss: f64,
    pub frames: usize,
    pub utterances: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdOptions {
    pub learning_rate: f64,
    /// Utterances per parameter update.
    pub minibatch: usize,
}

/// Errors that make a single utterance unusable rather than the whole run.
fn is_skippable(e: &KwsError) -> bool {
    matches!(e, KwsError::Infeasible { .. } | KwsError::NoPath | KwsError::AlignmentMismatch)
}

/// One pass of minibatch SGD in sorted-id order.
///
/// Per-utterance gradients are computed in parallel and summed in a fixed
/// order, so the result does not depend on the number of threads.
pub fn train_epoch(
    model: &mut FrameClassifier,
    corpus: &[TrainUtterance],
    criterion: &Criterion<'_>,
    opts: &SgdOptions,
) -> Result<EpochStats> {
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.sort_by(|&a, &b| corpus[a].id.cmp(&corpus[b].id));
    let mut stats = EpochStats { loss: 0.0, frames: 0, utterances: 0, skipped: 0 };
    let mut total_loss = 0.0;
    for batch in order.chunks(opts.minibatch.max(1)) {
        let current: &FrameClassifier = model;
        let results: Vec<Result<Option<(f64, usize, Gradients)>>> = batch
            .par_iter()
            .map(|&i| {
                let utt = &corpus[i];
                let (scores, caches) = current.forward_cached(&utt.features)?;
                let targets = Targets {
                    alignment: &utt.alignment,
                    labels: &utt.labels,
                    numerator: utt.numerator.as_ref(),
                    hypothesis: utt.hypothesis.as_deref(),
                };
                match criterion.evaluate(&scores, &targets) {
                    Ok(lg) => {
                        let mut g = Gradients::zeros_like(current);
                        current.backward(&caches, &lg.grad, &mut g)?;
                        Ok(Some((lg.loss, scores.frames(), g)))
                    }
                    Err(e) if is_skippable(&e) => {
                        warn!("skipping utterance {}: {e}", utt.id);
                        Ok(None)
                    }
                    Err(e) => Err(e),
                }
            })
            .collect();
        let mut sum = Gradients::zeros_like(model);
        let mut frames = 0;
        for r in results {
            match r? {
                Some((loss, n, g)) => {
                    sum.add(&g);
                    total_loss += loss;
                    frames += n;
                    stats.utterances += 1;
                }
                None => stats.skipped += 1,
            }
        }
        if frames > 0 {
            model.apply_gradients(&sum, opts.learning_rate, 1.0 / frames as f64);
        }
        stats.frames += frames;
    }
    stats.loss = if stats.frames > 0 { total_loss / stats.frames as f64 } else { 0.0 };
    Ok(stats)
}

/// Uniform segmentation of `frames` frames into the labels, snapped to the
/// nearest framing the topology accepts.
pub fn flat_start_alignment(labels: &LabelSequence, frames: usize, topology: &Topology) -> Result<Vec<usize>> {
    let graph = compile_sequence_graph(labels, topology)?;
    let min_frames = Topology::min_frames(&graph).unwrap_or(usize::MAX);
    if frames < min_frames {
        return Err(KwsError::Infeasible { min_frames, frames });
    }
    let n = labels.len();
    let mut scores = ScoreMatrix::filled(frames, topology.num_classes(), -10.0, ScoreKind::LogPosterior);
    for t in 0..frames {
        let unit = labels.units()[t * n / frames];
        for c in 0..topology.num_classes() {
            let info = topology.class_info(c);
            if info.unit == Some(unit) {
                scores.set(t, c, 0.0);
            } else if info.unit.is_none() {
                // shared blank: allowed anywhere, mildly disfavored
                scores.set(t, c, -1.0);
            }
        }
    }
    Ok(viterbi(&graph, &scores)?.units)
}

/// Forced alignment of `labels` against model scores.
pub fn align(scores: &ScoreMatrix, labels: &LabelSequence, topology: &Topology) -> Result<Vec<usize>> {
    let graph = compile_sequence_graph(labels, topology)?;
    Ok(viterbi(&graph, scores)?.units)
}

/// Raw training example before alignment.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub id: String,
    pub features: ScoreMatrix,
    pub labels: LabelSequence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub learning_rate: f64,
    pub minibatch: usize,
    /// Cross-entropy epochs on the flat-start alignment before realignment.
    pub ce_epochs: usize,
    /// Epochs of the configured criterion after realignment.
    pub epochs: usize,
    pub lm_order: usize,
    pub seed: u64,
    /// NU boosts (alpha, beta); `None` trains without NU weighting.
    pub nu: Option<(f64, f64)>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            learning_rate: 0.1,
            minibatch: 16,
            ce_epochs: 2,
            epochs: 4,
            lm_order: 3,
            seed: 17,
            nu: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: FrameClassifier,
    pub priors: PriorVector,
    pub history: Vec<EpochStats>,
}

fn run_epochs(
    model: &mut FrameClassifier,
    corpus: &[TrainUtterance],
    criterion: &Criterion<'_>,
    cfg: &TrainConfig,
    epochs: usize,
    history: &mut Vec<EpochStats>,
) -> Result<()> {
    let mut lr = cfg.learning_rate;
    let mut best = f64::INFINITY;
    for epoch in 0..epochs {
        let stats = train_epoch(model, corpus, criterion, &SgdOptions { learning_rate: lr, minibatch: cfg.minibatch })?;
        info!(
            "{} epoch {}: loss {:.5} over {} frames ({} skipped)",
            criterion.config.kind,
            epoch + 1,
            stats.loss,
            stats.frames,
            stats.skipped
        );
        if stats.loss >= best {
            lr *= 0.5;
        }
        best = best.min(stats.loss);
        history.push(stats);
    }
    Ok(())
}

fn realign(model: &FrameClassifier, corpus: &mut [TrainUtterance], topology: &Topology) -> Result<()> {
    let aligned: Vec<Result<Vec<usize>>> = corpus
        .par_iter()
        .map(|u| align(&model.forward(&u.features)?, &u.labels, topology))
        .collect();
    for (u, a) in corpus.iter_mut().zip(aligned) {
        match a {
            Ok(a) => u.alignment = a,
            Err(e) if is_skippable(&e) => warn!("keeping previous alignment of {}: {e}", u.id),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

/// Full training recipe: flat start, CE warm-up, Viterbi realignment, then the
/// configured criterion. `keyword_phones` selects the NU keyword classes.
pub fn train_model(
    data: &[TrainItem],
    topology: &Topology,
    criterion: &CriterionConfig,
    cfg: &TrainConfig,
    keyword_phones: &[usize],
) -> Result<TrainedModel> {
    criterion.validate()?;
    let first = data.first().ok_or(KwsError::EmptyCorpus)?;
    let names: Vec<String> = (0..topology.num_classes()).map(|c| topology.class_name(c)).collect();
    let mut model = FrameClassifier::new(first.features.units(), &cfg.model, names, cfg.seed);
    model.subsample = if criterion.kind.is_lattice_free() { criterion.subsample } else { 1 };
    let mut corpus = Vec::with_capacity(data.len());
    for item in data {
        let frames = model.output_frames(item.features.frames());
        match flat_start_alignment(&item.labels, frames, topology) {
            Ok(alignment) => corpus.push(TrainUtterance {
                id: item.id.clone(),
                features: item.features.clone(),
                labels: item.labels.clone(),
                alignment,
                numerator: None,
                hypothesis: None,
            }),
            Err(e) if is_skippable(&e) => warn!("dropping utterance {}: {e}", item.id),
            Err(e) => return Err(e),
        }
    }
    if corpus.is_empty() {
        return Err(KwsError::EmptyCorpus);
    }
    let mut history = Vec::new();
    let ce = Criterion::new(CriterionConfig { kind: CriterionKind::Ce, ..criterion.clone() }, topology, None)?;
    run_epochs(&mut model, &corpus, &ce, cfg, cfg.ce_epochs, &mut history)?;
    realign(&model, &mut corpus, topology)?;
    match criterion.kind {
        CriterionKind::Ce => run_epochs(&mut model, &corpus, &ce, cfg, cfg.epochs, &mut history)?,
        CriterionKind::Ctc => {
            let crit = Criterion::new(criterion.clone(), topology, None)?;
            run_epochs(&mut model, &corpus, &crit, cfg, cfg.epochs, &mut history)?;
        }
        _ => {
            let labels: Vec<LabelSequence> = corpus.iter().map(|u| u.labels.clone()).collect();
            let lm = train_ngram(&labels, topology.inventory(), NGramOptions { order: cfg.lm_order, max_ngrams: None })?;
            let den = build_denominator_graph(&lm, topology)?;
            info!("denominator graph: {} states, {} arcs", den.num_states(), den.arcs().len());
            let numerators: Vec<Result<Lattice>> = corpus
                .par_iter()
                .map(|u| build_numerator_graph(&u.labels, &u.alignment, criterion.tolerance, topology))
                .collect();
            for (u, n) in corpus.iter_mut().zip(numerators) {
                u.numerator = Some(n?);
            }
            let mut crit = Criterion::new(criterion.clone(), topology, Some(&den))?;
            if let Some((alpha, beta)) = cfg.nu {
                crit = crit.with_nu(NUConfig::for_keyword_phones(alpha, beta, keyword_phones, topology)?);
                let hyps: Vec<Result<Vec<usize>>> =
                    corpus.par_iter().map(|u| Ok(viterbi(&den, &model.forward(&u.features)?)?.units)).collect();
                for (u, h) in corpus.iter_mut().zip(hyps) {
                    u.hypothesis = Some(h?);
                }
            }
            run_epochs(&mut model, &corpus, &crit, cfg, cfg.epochs, &mut history)?;
        }
    }
    realign(&model, &mut corpus, topology)?;
    let alignments: Vec<Vec<usize>> = corpus.into_iter().map(|u| u.alignment).collect();
    let priors = estimate_priors(&alignments, topology.num_classes())?;
    model.meta.insert("topology".into(), topology.kind().name().into());
    model.meta.insert("criterion".into(), criterion.kind.name().into());
    model.meta.insert("priors".into(), serde_json::to_value(&priors.probs)?);
    Ok(TrainedModel { model, priors, history })
}
