use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};
use crate::lattice::ScoreMatrix;
use crate::math::LOG_ZERO;
use crate::postproc::detection::Detection;
use crate::postproc::smooth::ThresholdTable;
use crate::units::{LabelSequence, UnitInventory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakConfig {
    /// A frame becomes a column when its best non-blank posterior reaches this.
    pub spike: f64,
    /// Candidates below this posterior are dropped from a column.
    pub h_node: f64,
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self { spike: 0.5, h_node: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeakColumn {
    pub frame: usize,
    /// (unit, posterior), best first.
    pub candidates: Vec<(usize, f64)>,
}

/// Columns of candidate units at the spike frames of a CTC output.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PeakLattice {
    pub columns: Vec<PeakColumn>,
    /// The wb unit, whose columns delimit word spans.
    pub wb: Option<usize>,
}

impl PeakLattice {
    pub fn is_wb_column(&self, c: usize) -> bool {
        self.wb.is_some() && self.columns[c].candidates.first().map(|x| x.0) == self.wb
    }

    /// Best candidate of every column, in order.
    pub fn best_sequence(&self) -> Vec<usize> {
        self.columns.iter().map(|c| c.candidates[0].0).collect()
    }
}

/// Builds the peak lattice from CTC log-posteriors whose columns are inventory ids.
///
/// A wb spike forms a column holding only wb; wb never appears among the
/// candidates of a phone column.
pub fn build_ctc_peak_lattice(log_posteriors: &ScoreMatrix, inventory: &UnitInventory, cfg: PeakConfig) -> PeakLattice {
    let blank = inventory.blank();
    let wb = inventory.wb();
    let mut columns = Vec::new();
    for t in 0..log_posteriors.frames() {
        let row = log_posteriors.row(t);
        let mut cands: Vec<(usize, f64)> =
            (0..row.len()).filter(|&u| Some(u) != blank).map(|u| (u, row[u].exp())).collect();
        cands.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let Some(&(top, p)) = cands.first() else { continue };
        if p < cfg.spike {
            continue;
        }
        let candidates = if Some(top) == wb {
            vec![(top, p)]
        } else {
            cands.into_iter().filter(|&(u, q)| q >= cfg.h_node && Some(u) != wb).collect()
        };
        columns.push(PeakColumn { frame: t, candidates });
    }
    PeakLattice { columns, wb }
}

/// Edit-operation probabilities, indexed by inventory unit id.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub floor: f64,
    /// Unit names; the blank unit is never used.
    pub units: Vec<String>,
    pub blank: Option<usize>,
    pub insertion: Vec<f64>,
    pub deletion: Vec<f64>,
    /// `substitution[reference][hypothesis]`; the diagonal is the match probability.
    pub substitution: Vec<Vec<f64>>,
}

pub const CONFUSION_FLOOR: f64 = 1e-4;

#[derive(Serialize, Deserialize)]
struct ConfusionJson {
    floor: f64,
    insertion: BTreeMap<String, f64>,
    deletion: BTreeMap<String, f64>,
    substitution: BTreeMap<String, BTreeMap<String, f64>>,
}

impl ConfusionMatrix {
    fn symbols(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.units.len()).filter(move |&u| Some(u) != self.blank)
    }

    /// Match probability 1 and every edit `e^-1`, so `-ln` of a path score is
    /// its edit count. Not normalized.
    pub fn unit_cost(inventory: &UnitInventory) -> Self {
        let n = inventory.total_units();
        let e = (-1.0f64).exp();
        let mut substitution = vec![vec![e; n]; n];
        for (p, row) in substitution.iter_mut().enumerate() {
            row[p] = 1.0;
        }
        Self {
            floor: 0.0,
            units: (0..n).map(|u| inventory.name(u).to_string()).collect(),
            blank: inventory.blank(),
            insertion: vec![e; n],
            deletion: vec![e; n],
            substitution,
        }
    }

    pub fn ln_sub(&self, reference: usize, hypothesis: usize) -> f64 {
        self.substitution[reference][hypothesis].ln()
    }

    pub fn ln_ins(&self, hypothesis: usize) -> f64 {
        self.insertion[hypothesis].ln()
    }

    pub fn ln_del(&self, reference: usize) -> f64 {
        self.deletion[reference].ln()
    }

    /// Largest deviation from 1 of `sum(substitution row) + deletion`.
    pub fn row_normalization_error(&self) -> f64 {
        self.symbols()
            .map(|p| {
                let s: f64 = self.symbols().map(|q| self.substitution[p][q]).sum::<f64>() + self.deletion[p];
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        let name = |u: usize| self.units[u].clone();
        let doc = ConfusionJson {
            floor: self.floor,
            insertion: self.symbols().map(|u| (name(u), self.insertion[u])).collect(),
            deletion: self.symbols().map(|u| (name(u), self.deletion[u])).collect(),
            substitution: self
                .symbols()
                .map(|p| (name(p), self.symbols().map(|q| (name(q), self.substitution[p][q])).collect()))
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str, inventory: &UnitInventory) -> Result<Self> {
        let doc: ConfusionJson = serde_json::from_str(text)?;
        let n = inventory.total_units();
        let mut m = Self {
            floor: doc.floor,
            units: (0..n).map(|u| inventory.name(u).to_string()).collect(),
            blank: inventory.blank(),
            insertion: vec![doc.floor; n],
            deletion: vec![doc.floor; n],
            substitution: vec![vec![doc.floor; n]; n],
        };
        let id = |s: &str| inventory.id(s).ok_or_else(|| KwsError::UnknownUnit(s.to_string()));
        for (k, v) in &doc.insertion {
            m.insertion[id(k)?] = *v;
        }
        for (k, v) in &doc.deletion {
            m.deletion[id(k)?] = *v;
        }
        for (p, row) in &doc.substitution {
            let p = id(p)?;
            for (q, v) in row {
                m.substitution[p][id(q)?] = *v;
            }
        }
        Ok(m)
    }
}

/// Edit operations of a unit-cost alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditOp {
    /// (reference, hypothesis); equal units mean a match.
    Sub(usize, usize),
    Ins(usize),
    Del(usize),
}

/// Levenshtein distance and one optimal edit script (ties prefer match or
/// substitution, then deletion, then insertion).
pub fn levenshtein(hypothesis: &[usize], reference: &[usize]) -> (usize, Vec<EditOp>) {
    let (n, m) = (hypothesis.len(), reference.len());
    let mut d = vec![vec![0usize; m + 1]; n + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=m {
        d[0][j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[i - 1][j - 1] + usize::from(hypothesis[i - 1] != reference[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    let mut ops = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        if i > 0 && j > 0 && d[i][j] == d[i - 1][j - 1] + usize::from(hypothesis[i - 1] != reference[j - 1]) {
            ops.push(EditOp::Sub(reference[j - 1], hypothesis[i - 1]));
            i -= 1;
            j -= 1;
        } else if j > 0 && d[i][j] == d[i][j - 1] + 1 {
            ops.push(EditOp::Del(reference[j - 1]));
            j -= 1;
        } else {
            ops.push(EditOp::Ins(hypothesis[i - 1]));
            i -= 1;
        }
    }
    ops.reverse();
    (d[n][m], ops)
}

/// Relative edit frequencies from (hypothesis, reference) unit sequences.
///
/// Reference rows hold substitutions plus deletion; each entry is
/// `floor + (1 - k * floor) * frequency` over its `k` entries, so every entry
/// stays above the floor and rows sum to one. A unit never seen as reference
/// is assumed to be recognized correctly. Insertion of `q` is the fraction of
/// hypothesis occurrences of `q` that were inserted.
pub fn estimate_confusions(
    pairs: &[(Vec<usize>, Vec<usize>)],
    inventory: &UnitInventory,
    floor: f64,
) -> Result<ConfusionMatrix> {
    if pairs.is_empty() {
        return Err(KwsError::EmptyDev);
    }
    let n = inventory.total_units();
    let blank = inventory.blank();
    let symbols: Vec<usize> = (0..n).filter(|&u| Some(u) != blank).collect();
    let mut sub = vec![vec![0.0; n]; n];
    let mut del = vec![0.0; n];
    let mut ins = vec![0.0; n];
    let mut hyp_count = vec![0.0; n];
    for (hyp, reference) in pairs {
        for &u in hyp.iter().chain(reference) {
            if u >= n || Some(u) == blank {
                return Err(KwsError::UnitOutOfRange { unit: u, units: n });
            }
        }
        for &q in hyp {
            hyp_count[q] += 1.0;
        }
        for op in levenshtein(hyp, reference).1 {
            match op {
                EditOp::Sub(p, q) => sub[p][q] += 1.0,
                EditOp::Del(p) => del[p] += 1.0,
                EditOp::Ins(q) => ins[q] += 1.0,
            }
        }
    }
    let k = (symbols.len() + 1) as f64;
    let mass = 1.0 - k * floor;
    if mass <= 0.0 {
        return Err(KwsError::Config(format!("confusion floor {floor} too large for {} units", symbols.len())));
    }
    let mut m = ConfusionMatrix {
        floor,
        units: (0..n).map(|u| inventory.name(u).to_string()).collect(),
        blank,
        insertion: vec![floor; n],
        deletion: vec![floor; n],
        substitution: vec![vec![floor; n]; n],
    };
    for &p in &symbols {
        let mut total: f64 = symbols.iter().map(|&q| sub[p][q]).sum::<f64>() + del[p];
        if total == 0.0 {
            sub[p][p] = 1.0;
            total = 1.0;
        }
        for &q in &symbols {
            m.substitution[p][q] = floor + mass * sub[p][q] / total;
        }
        m.deletion[p] = floor + mass * del[p] / total;
        if hyp_count[p] > 0.0 {
            m.insertion[p] = floor + (1.0 - 2.0 * floor) * ins[p] / hyp_count[p];
        }
    }
    Ok(m)
}

/// `ln T(k)`: the log-probability of recognizing every keyword unit correctly.
pub fn med_log_threshold(keyword: &LabelSequence, confusions: &ConfusionMatrix) -> f64 {
    keyword.units().iter().map(|&p| confusions.ln_sub(p, p)).sum()
}

/// Best edit alignment of the keyword against one span of columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MedMatch {
    pub first_column: usize,
    pub last_column: usize,
    pub log_score: f64,
}

fn column_sub(lattice: &PeakLattice, c: usize, p: usize, conf: &ConfusionMatrix) -> f64 {
    let is_wb_col = lattice.is_wb_column(c);
    let is_wb_ref = lattice.wb == Some(p);
    if is_wb_col != is_wb_ref {
        return LOG_ZERO;
    }
    lattice.columns[c].candidates.iter().map(|&(q, _)| conf.ln_sub(p, q)).fold(LOG_ZERO, f64::max)
}

fn column_ins(lattice: &PeakLattice, c: usize, conf: &ConfusionMatrix) -> f64 {
    lattice.columns[c].candidates.iter().map(|&(q, _)| conf.ln_ins(q)).fold(LOG_ZERO, f64::max)
}

/// Global alignment score of `keyword` against columns `first..=last`.
pub fn med_span_score(lattice: &PeakLattice, first: usize, last: usize, keyword: &[usize], conf: &ConfusionMatrix) -> f64 {
    let m = keyword.len();
    let mut prev: Vec<f64> = Vec::with_capacity(m + 1);
    prev.push(0.0);
    for j in 0..m {
        prev.push(prev[j] + conf.ln_del(keyword[j]));
    }
    for c in first..=last {
        let ins = column_ins(lattice, c, conf);
        let mut cur = vec![prev[0] + ins; m + 1];
        for j in 1..=m {
            let diag = prev[j - 1] + column_sub(lattice, c, keyword[j - 1], conf);
            let up = prev[j] + ins;
            let left = cur[j - 1] + conf.ln_del(keyword[j - 1]);
            cur[j] = diag.max(up).max(left);
        }
        prev = cur;
    }
    prev[m]
}

/// Scores of every candidate span. Spans start at the lattice start or right
/// after a wb column and end at the lattice end or right before one.
pub fn med_spans(lattice: &PeakLattice, keyword: &LabelSequence, conf: &ConfusionMatrix) -> Vec<MedMatch> {
    let n = lattice.columns.len();
    let mut starts = vec![0];
    let mut ends = Vec::new();
    for c in 0..n {
        if lattice.is_wb_column(c) {
            if c > 0 {
                ends.push(c - 1);
            }
            if c + 1 < n {
                starts.push(c + 1);
            }
        }
    }
    if n > 0 {
        ends.push(n - 1);
    }
    let mut out = Vec::new();
    for &s in &starts {
        for &e in ends.iter().filter(|&&e| e >= s) {
            if lattice.is_wb_column(s) || lattice.is_wb_column(e) {
                continue;
            }
            let log_score = med_span_score(lattice, s, e, keyword.units(), conf);
            out.push(MedMatch { first_column: s, last_column: e, log_score });
        }
    }
    out
}

/// The best-scoring span, if the lattice has any.
pub fn med_best(lattice: &PeakLattice, keyword: &LabelSequence, conf: &ConfusionMatrix) -> Option<MedMatch> {
    med_spans(lattice, keyword, conf)
        .into_iter()
        .fold(None, |best: Option<MedMatch>, m| match best {
            Some(b) if b.log_score >= m.log_score => Some(b),
            _ => Some(m),
        })
}

/// Non-overlapping spans accepted by the keyword threshold, best first.
pub fn med_search(
    lattice: &PeakLattice,
    name: &str,
    keyword: &LabelSequence,
    conf: &ConfusionMatrix,
    thresholds: &ThresholdTable,
) -> Vec<Detection> {
    let mut spans: Vec<MedMatch> =
        med_spans(lattice, keyword, conf).into_iter().filter(|m| thresholds.accepts(name, m.log_score)).collect();
    spans.sort_by(|a, b| b.log_score.total_cmp(&a.log_score).then(a.first_column.cmp(&b.first_column)));
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut out = Vec::new();
    for m in spans {
        if taken.iter().any(|&(s, e)| m.first_column <= e && s <= m.last_column) {
            continue;
        }
        taken.push((m.first_column, m.last_column));
        out.push(Detection {
            keyword: name.to_string(),
            start: lattice.columns[m.first_column].frame,
            end: lattice.columns[m.last_column].frame,
            score: m.log_score,
        });
    }
    out.sort_by_key(|d| d.start);
    out
}
