//! Frame-synchronous forward-backward, Viterbi and exhaustive path enumeration.

use crate::error::{KwsError, Result};
use crate::lattice::graph::{Lattice, StateId};
use crate::lattice::score::{ScoreKind, ScoreMatrix};
use crate::math::{log_add, LOG_ZERO};

/// Default cap on the number of paths [`enumerate_paths`] will produce.
pub const MAX_ENUMERATED_PATHS: usize = 1_000_000;

/// Total log score and per-frame unit occupancies.
#[derive(Debug, Clone)]
pub struct FbResult {
    pub log_total: f64,
    /// Linear-domain γ[t][u].
    pub occupancy: ScoreMatrix,
}

/// Forward and backward tables of one lattice/score pair.
#[derive(Debug, Clone)]
pub struct FbTables {
    pub frames: usize,
    pub states: usize,
    /// α[t][s], t in 0..=T: log mass of length-t prefixes ending in s.
    pub alpha: Vec<f64>,
    /// β[t][s]: log mass of length-(T-t) suffixes leaving s, final weight included.
    pub beta: Vec<f64>,
    pub log_total: f64,
}

impl FbTables {
    #[inline]
    pub fn alpha(&self, t: usize, s: StateId) -> f64 {
        self.alpha[t * self.states + s]
    }

    #[inline]
    pub fn beta(&self, t: usize, s: StateId) -> f64 {
        self.beta[t * self.states + s]
    }
}

/// Compressed adjacency: arc ids grouped by destination and by source.
struct Adjacency {
    in_offsets: Vec<usize>,
    in_arcs: Vec<usize>,
    out_offsets: Vec<usize>,
    out_arcs: Vec<usize>,
}

impl Adjacency {
    fn new(lattice: &Lattice) -> Self {
        let n = lattice.num_states();
        let arcs = lattice.arcs();
        let group = |key: &dyn Fn(usize) -> usize| {
            let mut offsets = vec![0usize; n + 1];
            for i in 0..arcs.len() {
                offsets[key(i) + 1] += 1;
            }
            for s in 0..n {
                offsets[s + 1] += offsets[s];
            }
            let mut fill = offsets.clone();
            let mut ids = vec![0usize; arcs.len()];
            // ascending arc id within each group
            for i in 0..arcs.len() {
                let k = key(i);
                ids[fill[k]] = i;
                fill[k] += 1;
            }
            (offsets, ids)
        };
        let (in_offsets, in_arcs) = group(&|i| arcs[i].dst);
        let (out_offsets, out_arcs) = group(&|i| arcs[i].src);
        Self { in_offsets, in_arcs, out_offsets, out_arcs }
    }

    fn incoming(&self, s: StateId) -> &[usize] {
        &self.in_arcs[self.in_offsets[s]..self.in_offsets[s + 1]]
    }

    fn outgoing(&self, s: StateId) -> &[usize] {
        &self.out_arcs[self.out_offsets[s]..self.out_offsets[s + 1]]
    }
}

fn check_inputs(lattice: &Lattice, scores: &ScoreMatrix) -> Result<()> {
    for a in lattice.arcs() {
        match a.unit {
            None => return Err(KwsError::EpsilonArc),
            Some(u) if u >= scores.units() => {
                return Err(KwsError::UnitOutOfRange { unit: u, units: scores.units() })
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Log-sum of `terms` computed with a single max shift.
#[inline]
fn accumulate(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(LOG_ZERO, f64::max);
    if max == LOG_ZERO {
        return LOG_ZERO;
    }
    max + terms.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Computes forward and backward tables for `scores` over the lattice.
pub fn fb_tables(lattice: &Lattice, scores: &ScoreMatrix) -> Result<FbTables> {
    check_inputs(lattice, scores)?;
    let n = lattice.num_states();
    let frames = scores.frames();
    let arcs = lattice.arcs();
    let adj = Adjacency::new(lattice);
    let mut alpha = vec![LOG_ZERO; (frames + 1) * n];
    let mut beta = vec![LOG_ZERO; (frames + 1) * n];
    alpha[lattice.start()] = 0.0;
    let mut terms = Vec::new();
    for t in 0..frames {
        let row = scores.row(t);
        let (prev, next) = alpha.split_at_mut((t + 1) * n);
        let prev = &prev[t * n..];
        for s in 0..n {
            terms.clear();
            for &i in adj.incoming(s) {
                let a = &arcs[i];
                let p = prev[a.src];
                if p > LOG_ZERO {
                    terms.push(p + a.weight + row[a.unit.unwrap()]);
                }
            }
            next[s] = accumulate(&terms);
        }
    }
    for s in 0..n {
        beta[frames * n + s] = lattice.final_weight(s);
    }
    for t in (0..frames).rev() {
        let row = scores.row(t);
        let (cur, next) = beta.split_at_mut((t + 1) * n);
        let cur = &mut cur[t * n..];
        for (s, slot) in cur.iter_mut().enumerate() {
            terms.clear();
            for &i in adj.outgoing(s) {
                let a = &arcs[i];
                let b = next[a.dst];
                if b > LOG_ZERO {
                    terms.push(a.weight + row[a.unit.unwrap()] + b);
                }
            }
            *slot = accumulate(&terms);
        }
    }
    terms.clear();
    for s in 0..n {
        let a = alpha[frames * n + s];
        if a > LOG_ZERO && lattice.is_final(s) {
            terms.push(a + lattice.final_weight(s));
        }
    }
    let log_total = accumulate(&terms);
    Ok(FbTables { frames, states: n, alpha, beta, log_total })
}

/// Log total over all length-T accepting paths and the unit occupancies.
pub fn forward_backward(lattice: &Lattice, scores: &ScoreMatrix) -> Result<FbResult> {
    let tables = fb_tables(lattice, scores)?;
    if tables.log_total == LOG_ZERO {
        return Err(KwsError::NoPath);
    }
    let occupancy = occupancy_from_tables(lattice, scores, &tables);
    Ok(FbResult { log_total: tables.log_total, occupancy })
}

fn occupancy_from_tables(lattice: &Lattice, scores: &ScoreMatrix, tables: &FbTables) -> ScoreMatrix {
    let mut occ = ScoreMatrix::zeros(scores.frames(), scores.units(), ScoreKind::Occupancy);
    for t in 0..scores.frames() {
        let row = scores.row(t);
        for a in lattice.arcs() {
            let u = a.unit.unwrap();
            let lp = tables.alpha(t, a.src) + a.weight + row[u] + tables.beta(t + 1, a.dst) - tables.log_total;
            if lp > LOG_ZERO {
                occ.add(t, u, lp.exp());
            }
        }
    }
    occ
}

/// Best path through a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct ViterbiPath {
    pub arcs: Vec<usize>,
    pub units: Vec<usize>,
    /// States visited after each frame.
    pub states: Vec<StateId>,
    pub log_score: f64,
}

/// Highest-scoring length-T accepting path; ties go to the lowest arc index.
pub fn viterbi(lattice: &Lattice, scores: &ScoreMatrix) -> Result<ViterbiPath> {
    check_inputs(lattice, scores)?;
    let n = lattice.num_states();
    let frames = scores.frames();
    let arcs = lattice.arcs();
    let adj = Adjacency::new(lattice);
    let mut delta = vec![LOG_ZERO; n];
    delta[lattice.start()] = 0.0;
    let mut back = vec![usize::MAX; frames * n];
    let mut next = vec![LOG_ZERO; n];
    for t in 0..frames {
        let row = scores.row(t);
        for s in 0..n {
            let mut best = LOG_ZERO;
            let mut best_arc = usize::MAX;
            for &i in adj.incoming(s) {
                let a = &arcs[i];
                let d = delta[a.src];
                if d == LOG_ZERO {
                    continue;
                }
                let v = d + a.weight + row[a.unit.unwrap()];
                if v > best {
                    best = v;
                    best_arc = i;
                }
            }
            next[s] = best;
            back[t * n + s] = best_arc;
        }
        std::mem::swap(&mut delta, &mut next);
    }
    let mut best = LOG_ZERO;
    let mut best_state = usize::MAX;
    for s in 0..n {
        if delta[s] > LOG_ZERO && lattice.is_final(s) {
            let v = delta[s] + lattice.final_weight(s);
            if v > best {
                best = v;
                best_state = s;
            }
        }
    }
    if best == LOG_ZERO {
        return Err(KwsError::NoPath);
    }
    let mut path_arcs = vec![0; frames];
    let mut states = vec![0; frames];
    let mut s = best_state;
    for t in (0..frames).rev() {
        let i = back[t * n + s];
        path_arcs[t] = i;
        states[t] = s;
        s = arcs[i].src;
    }
    let units = path_arcs.iter().map(|&i| arcs[i].unit.unwrap()).collect();
    Ok(ViterbiPath { arcs: path_arcs, units, states, log_score: best })
}

/// One accepting path and its graph log weight (arc weights plus final weight).
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedPath {
    pub arcs: Vec<usize>,
    pub units: Vec<usize>,
    pub log_weight: f64,
}

impl EnumeratedPath {
    /// Graph weight plus the frame scores along the path.
    pub fn score(&self, scores: &ScoreMatrix) -> f64 {
        self.log_weight + self.units.iter().enumerate().map(|(t, &u)| scores.get(t, u)).sum::<f64>()
    }
}

/// Lists every accepting path of exactly `frames` emitting arcs.
pub fn enumerate_paths(lattice: &Lattice, frames: usize) -> Result<Vec<EnumeratedPath>> {
    enumerate_paths_limited(lattice, frames, MAX_ENUMERATED_PATHS)
}

pub fn enumerate_paths_limited(lattice: &Lattice, frames: usize, limit: usize) -> Result<Vec<EnumeratedPath>> {
    if !lattice.is_epsilon_free() {
        return Err(KwsError::EpsilonArc);
    }
    let n = lattice.num_states();
    let adj = Adjacency::new(lattice);
    // live[k][s]: some accepting path of exactly k more frames leaves s
    let mut live = vec![vec![false; n]; frames + 1];
    for s in lattice.final_states() {
        live[0][s] = true;
    }
    for k in 1..=frames {
        for s in 0..n {
            live[k][s] = adj.outgoing(s).iter().any(|&i| live[k - 1][lattice.arcs()[i].dst]);
        }
    }
    let mut out = Vec::new();
    if !live[frames][lattice.start()] {
        return Ok(out);
    }
    let mut stack: Vec<usize> = Vec::with_capacity(frames);
    dfs(lattice, &adj, &live, lattice.start(), frames, 0.0, &mut stack, &mut out, limit)?;
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    lattice: &Lattice,
    adj: &Adjacency,
    live: &[Vec<bool>],
    state: StateId,
    remaining: usize,
    weight: f64,
    stack: &mut Vec<usize>,
    out: &mut Vec<EnumeratedPath>,
    limit: usize,
) -> Result<()> {
    if remaining == 0 {
        if out.len() >= limit {
            return Err(KwsError::TooManyPaths(limit));
        }
        let arcs = stack.clone();
        let units = arcs.iter().map(|&i| lattice.arcs()[i].unit.unwrap()).collect();
        out.push(EnumeratedPath { arcs, units, log_weight: weight + lattice.final_weight(state) });
        return Ok(());
    }
    for &i in adj.outgoing(state) {
        let a = &lattice.arcs()[i];
        if !live[remaining - 1][a.dst] {
            continue;
        }
        stack.push(i);
        dfs(lattice, adj, live, a.dst, remaining - 1, weight + a.weight, stack, out, limit)?;
        stack.pop();
    }
    Ok(())
}

/// Log-sum of path scores; the brute-force counterpart of [`forward_backward`].
pub fn enumerated_log_total(paths: &[EnumeratedPath], scores: &ScoreMatrix) -> f64 {
    paths.iter().fold(LOG_ZERO, |acc, p| log_add(acc, p.score(scores)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(rows: &[Vec<f64>]) -> ScoreMatrix {
        ScoreMatrix::from_rows(rows, ScoreKind::LogPosterior).unwrap()
    }

    #[test]
    fn single_arc_chain() {
        let mut l = Lattice::new();
        let s = l.add_state();
        l.add_arc(0, s, Some(1), -0.3);
        l.set_final(s, 0.0);
        let x = scores(&[vec![-2.0, -0.7]]);
        let fb = forward_backward(&l, &x).unwrap();
        assert!((fb.log_total - (-1.0)).abs() < 1e-15);
        assert!((fb.occupancy.get(0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(fb.occupancy.get(0, 0), 0.0);
    }

    #[test]
    fn parallel_arcs_split_occupancy() {
        let mut l = Lattice::new();
        let s = l.add_state();
        l.add_arc(0, s, Some(0), 0.0);
        l.add_arc(0, s, Some(1), 0.0);
        l.set_final(s, 0.0);
        let fb = forward_backward(&l, &scores(&[vec![0.0, 0.0]])).unwrap();
        assert!((fb.occupancy.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((fb.occupancy.get(0, 1) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn viterbi_prefers_higher_score_and_breaks_ties_low() {
        let mut l = Lattice::new();
        let s = l.add_state();
        l.add_arc(0, s, Some(0), 0.0);
        l.add_arc(0, s, Some(1), 0.0);
        l.set_final(s, 0.0);
        assert_eq!(viterbi(&l, &scores(&[vec![-1.0, 0.0]])).unwrap().units, vec![1]);
        assert_eq!(viterbi(&l, &scores(&[vec![0.0, 0.0]])).unwrap().units, vec![0]);
    }

    #[test]
    fn infeasible_length_has_no_path() {
        let mut l = Lattice::new();
        let s = l.add_state();
        l.add_arc(0, s, Some(0), 0.0);
        l.set_final(s, 0.0);
        let x = scores(&[vec![0.0], vec![0.0]]);
        assert!(matches!(forward_backward(&l, &x), Err(KwsError::NoPath)));
        assert!(matches!(viterbi(&l, &x), Err(KwsError::NoPath)));
        assert!(enumerate_paths(&l, 2).unwrap().is_empty());
    }

    #[test]
    fn linear_chain_has_one_path() {
        let mut l = Lattice::new();
        let mut prev = 0;
        for u in 0..3 {
            let s = l.add_state();
            l.add_arc(prev, s, Some(u), 0.0);
            prev = s;
        }
        l.set_final(prev, 0.0);
        assert_eq!(enumerate_paths(&l, 3).unwrap().len(), 1);
    }

    #[test]
    fn path_limit_is_enforced() {
        let mut l = Lattice::new();
        l.add_arc(0, 0, Some(0), 0.0);
        l.add_arc(0, 0, Some(1), 0.0);
        l.set_final(0, 0.0);
        assert!(matches!(enumerate_paths_limited(&l, 5, 10), Err(KwsError::TooManyPaths(10))));
    }

    #[test]
    fn epsilon_arcs_are_rejected() {
        let mut l = Lattice::new();
        let s = l.add_state();
        l.add_arc(0, s, None, 0.0);
        l.set_final(s, 0.0);
        assert!(matches!(forward_backward(&l, &scores(&[vec![0.0]])), Err(KwsError::EpsilonArc)));
    }
}
