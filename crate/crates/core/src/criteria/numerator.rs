use std::collections::HashMap;

use crate::error::{KwsError, Result};
use crate::lattice::{viterbi, Lattice, ScoreKind, ScoreMatrix};
use crate::math::LOG_ZERO;
use crate::topology::{compile_sequence_graph_with_origin, ExpandedGraph, Topology};
use crate::units::LabelSequence;

/// Monotone index of a compiled-graph state: label position, then template state.
fn state_index(graph: &ExpandedGraph, s: usize, stride: usize) -> usize {
    let (pos, q) = graph.origin[s].unwrap();
    pos * stride + q
}

fn stride(topology: &Topology) -> usize {
    (0..topology.inventory().total_units()).filter_map(|u| topology.template(u)).map(|t| t.states.len()).max().unwrap_or(1)
}

fn forced_path(graph: &ExpandedGraph, alignment: &[usize], classes: usize) -> Result<Vec<usize>> {
    let mut scores = ScoreMatrix::filled(alignment.len(), classes, LOG_ZERO, ScoreKind::LogPosterior);
    for (t, &c) in alignment.iter().enumerate() {
        if c >= classes {
            return Err(KwsError::UnitOutOfRange { unit: c, units: classes });
        }
        scores.set(t, c, 0.0);
    }
    let path = viterbi(&graph.lattice, &scores).map_err(|e| match e {
        KwsError::NoPath => KwsError::AlignmentMismatch,
        e => e,
    })?;
    Ok(path.states)
}

/// Label position occupied by each frame of a reference class alignment.
pub fn label_positions(labels: &LabelSequence, alignment: &[usize], topology: &Topology) -> Result<Vec<usize>> {
    let graph = compile_sequence_graph_with_origin(labels, topology)?;
    let states = forced_path(&graph, alignment, topology.num_classes())?;
    Ok(states.iter().map(|&s| graph.origin[s].unwrap().0).collect())
}

/// Framings of `labels` over `alignment.len()` frames whose segment boundaries
/// lie within `tolerance` frames of the reference boundaries.
///
/// Segments are the template states of each label, so tolerance 0 keeps only
/// the reference path. The result is unrolled in time and only accepts paths of
/// exactly that length. Frame `t` may sit at positions between the reference
/// positions at `t - tolerance` and `t + tolerance`, which is the same constraint.
pub fn build_numerator_graph(
    labels: &LabelSequence,
    alignment: &[usize],
    tolerance: usize,
    topology: &Topology,
) -> Result<Lattice> {
    let graph = compile_sequence_graph_with_origin(labels, topology)?;
    let frames = alignment.len();
    if frames == 0 {
        return Err(KwsError::AlignmentMismatch);
    }
    let stride = stride(topology);
    let pos: Vec<usize> = forced_path(&graph, alignment, topology.num_classes())?
        .into_iter()
        .map(|s| state_index(&graph, s, stride))
        .collect();
    let g = &graph.lattice;
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); g.num_states()];
    for (i, a) in g.arcs().iter().enumerate() {
        out[a.src].push(i);
    }
    let mut lat = Lattice::new();
    let mut current: Vec<(usize, usize)> = vec![(g.start(), lat.start())];
    for t in 0..frames {
        let lo = t.checked_sub(tolerance).map_or(0, |s| pos[s]);
        let hi = pos.get(t + tolerance).copied().unwrap_or(usize::MAX);
        let mut next: HashMap<usize, usize> = HashMap::new();
        let mut order = Vec::new();
        for &(s, id) in &current {
            for &i in &out[s] {
                let a = &g.arcs()[i];
                let p = state_index(&graph, a.dst, stride);
                if p < lo || p > hi {
                    continue;
                }
                let dst = *next.entry(a.dst).or_insert_with(|| {
                    order.push(a.dst);
                    lat.add_state()
                });
                lat.add_arc(id, dst, a.unit, a.weight);
            }
        }
        current = order.into_iter().map(|s| (s, next[&s])).collect();
    }
    for &(s, id) in &current {
        if g.is_final(s) {
            lat.set_final(id, g.final_weight(s));
        }
    }
    lat.trim();
    Ok(lat)
}
