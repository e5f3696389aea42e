use crate::error::{KwsError, Result};
use crate::lattice::{viterbi, Lattice, ScoreMatrix};
use crate::math::LOG_ZERO;
use crate::postproc::detection::Detection;
use crate::topology::{ExpandedGraph, Topology};
use crate::units::LabelSequence;

/// Keyword index and label position of a keyword arc; `None` for filler arcs.
pub type ArcTag = Option<(usize, usize)>;

/// Units looped by the filler: every unit the topology can emit except blank.
pub fn filler_units(topology: &Topology) -> Vec<usize> {
    (0..topology.inventory().total_units()).filter(|&u| topology.template(u).is_some()).collect()
}

/// Phone-level search space: a hub state that is both start and final, a
/// filler loop over `fillers` weighted `filler_weight`, and one linear path
/// per keyword leaving and re-entering the hub.
pub fn kwfiller_phone_graph(keywords: &[LabelSequence], fillers: &[usize], filler_weight: f64) -> (Lattice, Vec<ArcTag>) {
    let mut g = Lattice::new();
    let hub = g.start();
    g.set_final(hub, 0.0);
    let mut tags = Vec::new();
    for &u in fillers {
        g.add_arc(hub, hub, Some(u), filler_weight);
        tags.push(None);
    }
    for (k, kw) in keywords.iter().enumerate() {
        let mut prev = hub;
        for (i, &u) in kw.units().iter().enumerate() {
            let next = if i + 1 == kw.len() { hub } else { g.add_state() };
            g.add_arc(prev, next, Some(u), 0.0);
            tags.push(Some((k, i)));
            prev = next;
        }
    }
    (g, tags)
}

#[derive(Debug, Clone)]
pub struct KwFillerGraph {
    pub keywords: Vec<String>,
    pub filler_weight: f64,
    pub graph: ExpandedGraph,
    /// Tag of every phone-level arc.
    pub tags: Vec<ArcTag>,
}

pub fn build_kwfiller_graph(
    keywords: &[(String, LabelSequence)],
    topology: &Topology,
    filler_weight: f64,
) -> Result<KwFillerGraph> {
    if keywords.is_empty() {
        return Err(KwsError::Config("keyword-filler graph needs at least one keyword".into()));
    }
    let seqs: Vec<LabelSequence> = keywords.iter().map(|k| k.1.clone()).collect();
    let (phone, tags) = kwfiller_phone_graph(&seqs, &filler_units(topology), filler_weight);
    Ok(KwFillerGraph {
        keywords: keywords.iter().map(|k| k.0.clone()).collect(),
        filler_weight,
        graph: topology.expand(&phone)?,
        tags,
    })
}

/// Viterbi decode; every maximal run of frames on one keyword path becomes a
/// detection scored by its mean per-frame path log-score.
pub fn kwfiller_decode(graph: &KwFillerGraph, scores: &ScoreMatrix) -> Result<Vec<Detection>> {
    let lat = &graph.graph.lattice;
    let path = viterbi(lat, scores)?;
    let mut out = Vec::new();
    let mut open: Option<(usize, usize, usize, f64)> = None; // keyword, start, last position, score sum
    let mut close = |open: &mut Option<(usize, usize, usize, f64)>, end: usize| {
        if let Some((k, start, _, sum)) = open.take() {
            out.push(Detection {
                keyword: graph.keywords[k].clone(),
                start,
                end,
                score: sum / (end - start + 1) as f64,
            });
        }
    };
    for (t, (&arc, &state)) in path.arcs.iter().zip(&path.states).enumerate() {
        let a = &lat.arcs()[arc];
        let frame_score = a.weight + scores.get(t, a.unit.unwrap());
        let tag = graph.graph.origin[state].and_then(|(phone_arc, _)| graph.tags[phone_arc]);
        let extends = matches!((tag, &open), (Some((k, pos)), Some((ok, _, opos, _))) if *ok == k && *opos <= pos);
        if extends {
            let (_, _, opos, sum) = open.as_mut().unwrap();
            *opos = tag.unwrap().1;
            *sum += frame_score;
            continue;
        }
        close(&mut open, t.saturating_sub(1));
        if let Some((k, pos)) = tag {
            open = Some((k, t, pos, frame_score));
        }
    }
    close(&mut open, scores.frames().saturating_sub(1));
    Ok(out)
}

/// Scores one keyword for EER sweeps.
///
/// The margin is the best path with exactly one keyword occurrence minus the
/// best filler-only path. A keyword-entry log-prior `λ` detects the keyword
/// iff `margin + λ >= 0`, so thresholding the margin is the same as sweeping
/// the keyword/filler transition weight.
#[derive(Debug, Clone)]
pub struct KwFillerScorer {
    one: Lattice,
    none: Lattice,
}

impl KwFillerScorer {
    pub fn new(keyword: &LabelSequence, topology: &Topology, filler_weight: f64) -> Result<Self> {
        let fillers = filler_units(topology);
        let mut one = Lattice::new();
        let h0 = one.start();
        let h1 = one.add_state();
        for &u in &fillers {
            one.add_arc(h0, h0, Some(u), filler_weight);
            one.add_arc(h1, h1, Some(u), filler_weight);
        }
        let mut prev = h0;
        for (i, &u) in keyword.units().iter().enumerate() {
            let next = if i + 1 == keyword.len() { h1 } else { one.add_state() };
            one.add_arc(prev, next, Some(u), 0.0);
            prev = next;
        }
        one.set_final(h1, 0.0);
        let (none, _) = kwfiller_phone_graph(&[], &fillers, filler_weight);
        Ok(Self { one: topology.expand(&one)?.lattice, none: topology.expand(&none)?.lattice })
    }

    pub fn margin(&self, scores: &ScoreMatrix) -> Result<f64> {
        let best = |g: &Lattice| match viterbi(g, scores) {
            Ok(p) => Ok(p.log_score),
            Err(KwsError::NoPath) => Ok(LOG_ZERO),
            Err(e) => Err(e),
        };
        let with = best(&self.one)?;
        let without = best(&self.none)?;
        if with == LOG_ZERO {
            return Ok(LOG_ZERO);
        }
        if without == LOG_ZERO {
            return Ok(f64::INFINITY);
        }
        Ok(with - without)
    }
}
