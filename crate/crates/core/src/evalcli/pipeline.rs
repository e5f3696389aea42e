use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acoustic::{align, pseudo_likelihood, train_model, FrameClassifier, PriorVector, TrainConfig, TrainItem, TrainedModel};
use crate::criteria::{CriterionConfig, CriterionKind};
use crate::error::{KwsError, Result};
use crate::evalcli::metrics::{compute_eer, compute_faf, frames_to_secs, measure_rtf, MetricsReport};
use crate::evalcli::synth::{Corpus, SynthConfig, SynthUtterance};
use crate::lattice::ScoreMatrix;
use crate::postproc::{
    build_ctc_peak_lattice, build_kwfiller_graph, estimate_confusions, estimate_thresholds, kwfiller_decode,
    med_best, med_log_threshold, med_search, smooth_posteriors, smoothed_keyword_score, unit_alignment,
    unit_posteriors, ConfusionMatrix, Detection, KwFillerGraph, KwFillerScorer, PeakConfig, SmoothConfig,
    ThresholdTable, CONFUSION_FLOOR,
};
use crate::topology::{build_topology, Topology, TopologyKind};
use crate::units::{apply_label_map, expand_keyword, keyword_symbol, LabelMode, LabelSequence, Lexicon, Special, UnitInventory};

/// Trial scores are clamped to this magnitude so that "no match" stays finite.
pub const SCORE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PostMode {
    Smooth,
    Kwfiller,
    Med,
}

impl PostMode {
    pub const ALL: [PostMode; 3] = [PostMode::Smooth, PostMode::Kwfiller, PostMode::Med];

    pub fn name(self) -> &'static str {
        match self {
            PostMode::Smooth => "smooth",
            PostMode::Kwfiller => "kwfiller",
            PostMode::Med => "med",
        }
    }
}

impl fmt::Display for PostMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PostMode {
    type Err = KwsError;

    fn from_str(s: &str) -> Result<Self> {
        PostMode::ALL
            .into_iter()
            .find(|m| m.name() == s.to_ascii_lowercase())
            .ok_or_else(|| KwsError::Config(format!("unknown post-processing mode `{s}`")))
    }
}

/// Everything an experiment needs, loadable from one JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub topology: TopologyKind,
    pub criterion: CriterionConfig,
    pub train: TrainConfig,
    /// Windows in input frames; divided by the model's subsampling factor.
    pub smooth: SmoothConfig,
    pub filler_weight: f64,
    pub peak: PeakConfig,
    /// Shared log-domain threshold offset for hard decisions.
    pub t0: f64,
    pub post: PostMode,
    pub threads: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            topology: TopologyKind::HmmPb,
            criterion: CriterionConfig::new(CriterionKind::LfBmmi),
            train: TrainConfig::default(),
            smooth: SmoothConfig { w_s: 3, w_m: 30 },
            filler_weight: -1.0,
            peak: PeakConfig::default(),
            t0: 0.0,
            post: PostMode::Kwfiller,
            threads: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| KwsError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.criterion.validate()?;
        if self.smooth.w_s == 0 || self.smooth.w_m == 0 {
            return Err(KwsError::Config("smoothing windows must be at least 1".into()));
        }
        if self.criterion.kind == CriterionKind::Ctc && self.topology != TopologyKind::Ctc {
            return Err(KwsError::Config("the ctc criterion needs the ctc topology".into()));
        }
        if self.threads == Some(0) {
            return Err(KwsError::Config("threads must be at least 1".into()));
        }
        Ok(())
    }
}

/// Runs `f` on a dedicated pool of `threads` workers (the global pool if `None`).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| KwsError::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Units, lexicon, topology and keyword labels for one corpus and topology.
///
/// CTC systems add blank and wb and map transcripts with wb between words;
/// HMM systems use plain phone strings.
#[derive(Debug, Clone)]
pub struct System {
    pub inventory: UnitInventory,
    pub lexicon: Lexicon,
    pub topology: Topology,
    pub keywords: Vec<(String, LabelSequence)>,
}

impl System {
    pub fn new(corpus: &Corpus, kind: TopologyKind) -> Result<Self> {
        let specials: &[Special] = if kind == TopologyKind::Ctc { &[Special::Blank, Special::WordBoundary] } else { &[] };
        let inventory = UnitInventory::new(&corpus.phones, specials)?;
        let lexicon = corpus.lexicon(&inventory)?;
        let topology = build_topology(kind, &inventory)?;
        let mut sys = Self { inventory, lexicon, topology, keywords: Vec::new() };
        sys.keywords = corpus
            .keywords
            .iter()
            .map(|k| Ok((keyword_symbol(k), sys.labels(k)?)))
            .collect::<Result<_>>()?;
        Ok(sys)
    }

    pub fn labels<S: AsRef<str>>(&self, words: &[S]) -> Result<LabelSequence> {
        if self.topology.kind() == TopologyKind::Ctc {
            apply_label_map(words, LabelMode::SubWord, &[], &self.lexicon, &self.inventory)
        } else {
            expand_keyword(words, &self.lexicon, &self.inventory)
        }
    }

    pub fn keyword_phones(&self) -> Vec<usize> {
        let set: BTreeSet<usize> =
            self.keywords.iter().flat_map(|(_, k)| k.units().iter().copied()).filter(|&u| self.inventory.is_phone(u)).collect();
        set.into_iter().collect()
    }
}

pub fn train_system(corpus: &Corpus, system: &System, cfg: &ExperimentConfig) -> Result<TrainedModel> {
    let items = corpus
        .train
        .iter()
        .map(|u| Ok(TrainItem { id: u.id.clone(), features: u.features.clone(), labels: system.labels(&u.words)? }))
        .collect::<Result<Vec<_>>>()?;
    let trained = train_model(&items, &system.topology, &cfg.criterion, &cfg.train, &system.keyword_phones())?;
    info!("trained {} model with {} parameters", cfg.criterion.kind, trained.model.num_params());
    Ok(trained)
}

/// Priors and topology stored in a model's metadata by [`train_model`].
pub fn model_priors(model: &FrameClassifier) -> Result<PriorVector> {
    let v = model.meta.get("priors").ok_or_else(|| KwsError::Format("model metadata lacks priors".into()))?;
    let probs: Vec<f64> = serde_json::from_value(v.clone())?;
    if probs.len() != model.num_units() {
        return Err(KwsError::DimensionMismatch { expected: model.num_units(), got: probs.len() });
    }
    Ok(PriorVector { probs })
}

pub fn model_topology(model: &FrameClassifier) -> Result<TopologyKind> {
    let v = model.meta.get("topology").ok_or_else(|| KwsError::Format("model metadata lacks the topology".into()))?;
    serde_json::from_value(v.clone()).map_err(|e| KwsError::Format(e.to_string()))
}

/// Viterbi class alignment of every utterance; infeasible ones yield `None`.
pub fn align_split(model: &FrameClassifier, system: &System, utts: &[SynthUtterance]) -> Result<Vec<Option<Vec<usize>>>> {
    utts.par_iter()
        .map(|u| {
            let labels = system.labels(&u.words)?;
            match align(&model.forward(&u.features)?, &labels, &system.topology) {
                Ok(a) => Ok(Some(a)),
                Err(KwsError::NoPath | KwsError::Infeasible { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect()
}

enum Backend {
    Smooth { cfg: SmoothConfig, thresholds: ThresholdTable },
    Kwfiller { graph: KwFillerGraph, scorers: Vec<KwFillerScorer> },
    Med { confusions: ConfusionMatrix, thresholds: ThresholdTable },
}

/// Decoder for one post-processing mode with its dev-estimated parameters.
pub struct Decoder {
    pub mode: PostMode,
    system: System,
    model: FrameClassifier,
    priors: PriorVector,
    backend: Backend,
}

/// Per-utterance output: one trial score per keyword and the hard detections.
#[derive(Debug, Clone, PartialEq)]
pub struct UttResult {
    pub id: String,
    pub frames: usize,
    pub scores: Vec<f64>,
    pub detections: Vec<Detection>,
}

impl Decoder {
    /// Estimates thresholds (smooth), confusions (med) or builds the search
    /// graphs (kwfiller) on the dev split.
    pub fn prepare(
        mode: PostMode,
        system: &System,
        model: &FrameClassifier,
        dev: &[SynthUtterance],
        cfg: &ExperimentConfig,
    ) -> Result<Self> {
        if model.num_units() != system.topology.num_classes() {
            return Err(KwsError::DimensionMismatch { expected: system.topology.num_classes(), got: model.num_units() });
        }
        let priors = model_priors(model)?;
        let backend = match mode {
            PostMode::Smooth => {
                let alignments = align_split(model, system, dev)?;
                let pairs: Vec<(ScoreMatrix, Vec<usize>)> = dev
                    .par_iter()
                    .zip(&alignments)
                    .filter_map(|(u, a)| a.as_ref().map(|a| (u, a)))
                    .map(|(u, a)| Ok((unit_posteriors(&model.forward(&u.features)?, &system.topology)?, unit_alignment(a, &system.topology))))
                    .collect::<Result<_>>()?;
                let mut thresholds = estimate_thresholds(&pairs, &system.keywords, &system.inventory)?;
                thresholds.t0 = cfg.t0;
                let s = model.subsample.max(1);
                let cfg = SmoothConfig { w_s: cfg.smooth.w_s.div_ceil(s), w_m: cfg.smooth.w_m.div_ceil(s) };
                Backend::Smooth { cfg, thresholds }
            }
            PostMode::Kwfiller => Backend::Kwfiller {
                graph: build_kwfiller_graph(&system.keywords, &system.topology, cfg.filler_weight)?,
                scorers: system
                    .keywords
                    .iter()
                    .map(|(_, k)| KwFillerScorer::new(k, &system.topology, cfg.filler_weight))
                    .collect::<Result<_>>()?,
            },
            PostMode::Med => {
                if system.topology.kind() != TopologyKind::Ctc {
                    return Err(KwsError::Config("MED post-processing needs a CTC model".into()));
                }
                let pairs: Vec<(Vec<usize>, Vec<usize>)> = dev
                    .par_iter()
                    .map(|u| {
                        let lat = build_ctc_peak_lattice(&model.forward(&u.features)?, &system.inventory, cfg.peak);
                        Ok((lat.best_sequence(), system.labels(&u.words)?.units().to_vec()))
                    })
                    .collect::<Result<_>>()?;
                let confusions = estimate_confusions(&pairs, &system.inventory, CONFUSION_FLOOR)?;
                let per_keyword =
                    system.keywords.iter().map(|(n, k)| (n.clone(), med_log_threshold(k, &confusions).exp())).collect();
                Backend::Med { confusions, thresholds: ThresholdTable { per_keyword, t0: cfg.t0 } }
            }
        };
        Ok(Self { mode, system: system.clone(), model: model.clone(), priors, backend })
    }

    pub fn system(&self) -> &System {
        &self.system
    }

    pub fn decode(&self, utt: &SynthUtterance, peak: PeakConfig) -> Result<UttResult> {
        let y = self.model.forward(&utt.features)?;
        let kws = &self.system.keywords;
        let (scores, mut detections) = match &self.backend {
            Backend::Smooth { cfg, thresholds } => {
                let smoothed = smooth_posteriors(&unit_posteriors(&y, &self.system.topology)?, *cfg);
                let mut scores = Vec::with_capacity(kws.len());
                let mut dets = Vec::new();
                for (name, k) in kws {
                    let (t, c) = smoothed_keyword_score(&smoothed, k.units()).unwrap_or((0, 0.0));
                    let margin = thresholds.margin(name, c.max(crate::postproc::CONFIDENCE_FLOOR).ln()).unwrap();
                    if margin >= thresholds.t0 {
                        dets.push(Detection { keyword: name.clone(), start: (t + 1).saturating_sub(cfg.w_m), end: t, score: c });
                    }
                    scores.push(margin);
                }
                (scores, dets)
            }
            Backend::Kwfiller { graph, scorers } => {
                let pl = pseudo_likelihood(&y, &self.priors)?;
                let scores = scorers.iter().map(|s| s.margin(&pl)).collect::<Result<Vec<_>>>()?;
                let dets = match kwfiller_decode(graph, &pl) {
                    Ok(d) => d,
                    Err(KwsError::NoPath) => Vec::new(),
                    Err(e) => return Err(e),
                };
                (scores, dets)
            }
            Backend::Med { confusions, thresholds } => {
                let lat = build_ctc_peak_lattice(&y, &self.system.inventory, peak);
                let mut scores = Vec::with_capacity(kws.len());
                let mut dets = Vec::new();
                for (name, k) in kws {
                    scores.push(med_best(&lat, k, confusions).map_or(f64::NEG_INFINITY, |m| {
                        thresholds.margin(name, m.log_score).unwrap()
                    }));
                    dets.extend(med_search(&lat, name, k, confusions, thresholds));
                }
                (scores, dets)
            }
        };
        let s = self.model.subsample.max(1);
        let last = utt.features.frames().saturating_sub(1);
        for d in &mut detections {
            d.start *= s;
            d.end = (d.end * s + s - 1).min(last);
        }
        Ok(UttResult {
            id: utt.id.clone(),
            frames: utt.features.frames(),
            scores: scores.into_iter().map(|v| v.clamp(-SCORE_LIMIT, SCORE_LIMIT)).collect(),
            detections,
        })
    }

    /// Decodes a split in parallel; results keep the input order. Also
    /// returns the wall time spent.
    pub fn decode_split(&self, utts: &[SynthUtterance], peak: PeakConfig) -> Result<(Vec<UttResult>, f64)> {
        let start = Instant::now();
        let out = utts.par_iter().map(|u| self.decode(u, peak)).collect::<Result<Vec<_>>>()?;
        Ok((out, start.elapsed().as_secs_f64()))
    }
}

/// Scores every (test utterance, keyword) trial and summarizes them.
///
/// FAF counts trials above the EER threshold on utterances without any keyword.
pub fn evaluate(
    corpus: &Corpus,
    system: &System,
    model: &FrameClassifier,
    cfg: &ExperimentConfig,
    mode: PostMode,
) -> Result<MetricsReport> {
    let decoder = Decoder::prepare(mode, system, model, &corpus.dev, cfg)?;
    let (results, secs) = decoder.decode_split(&corpus.test, cfg.peak)?;
    report_from_results(corpus, &results, secs, mode)
}

pub fn report_from_results(corpus: &Corpus, results: &[UttResult], decode_secs: f64, mode: PostMode) -> Result<MetricsReport> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    let mut clean = Vec::new();
    let mut frames = 0;
    for (r, u) in results.iter().zip(&corpus.test) {
        let present = corpus.keywords_in(&u.words);
        for (k, &s) in r.scores.iter().enumerate() {
            if present.contains(&k) {
                pos.push(s);
            } else {
                neg.push(s);
            }
        }
        if present.is_empty() {
            clean.push(r);
        }
        frames += r.frames;
    }
    let (eer, eer_threshold, roc) = compute_eer(&pos, &neg)?;
    let clean_frames: usize = clean.iter().map(|r| r.frames).sum();
    if clean_frames == 0 {
        return Err(KwsError::EmptyScores);
    }
    let false_alarms = clean.iter().flat_map(|r| &r.scores).filter(|&&s| s >= eer_threshold).count();
    Ok(MetricsReport {
        post: mode.name().to_string(),
        eer,
        eer_threshold,
        faf: compute_faf(false_alarms, frames_to_secs(clean_frames) / 3600.0)?,
        rtf: measure_rtf(decode_secs, frames_to_secs(frames))?,
        positives: pos.len(),
        negatives: neg.len(),
        roc,
    })
}

/// `gen-data -> train -> eval` in memory for the configured mode.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    with_threads(cfg.threads, || {
        let corpus = crate::evalcli::synth::gen_corpus(&cfg.synth)?;
        let system = System::new(&corpus, cfg.topology)?;
        let trained = train_system(&corpus, &system, cfg)?;
        evaluate(&corpus, &system, &trained.model, cfg, cfg.post)
    })?
}
