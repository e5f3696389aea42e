use std::collections::HashMap;

use crate::error::{KwsError, Result};
use crate::lattice::Lattice;
use crate::phonelm::ngram::{NGramModel, Token};
use crate::topology::{ExpandedGraph, Topology};

/// Phone-level acceptor of the LM: one state per model context.
///
/// Arcs carry inventory phone ids and natural-log LM probabilities; each
/// state's final weight is its end-of-sentence probability.
pub fn lm_acceptor(model: &NGramModel, topology: &Topology) -> Result<Lattice> {
    let inventory = topology.inventory();
    let phone_ids: Vec<(Token, usize)> = (0..model.vocab().len() as Token)
        .map(|t| {
            let name = model.token_name(t);
            match inventory.id(name) {
                Some(u) if topology.template(u).is_some() => Ok((t, u)),
                _ => Err(KwsError::UnknownUnit(name.to_string())),
            }
        })
        .collect::<Result<_>>()?;
    let mut g = Lattice::new();
    let start = model.start_context();
    let mut ids: HashMap<Vec<Token>, usize> = HashMap::from([(start.clone(), g.start())]);
    let mut queue = vec![start];
    let mut head = 0;
    while head < queue.len() {
        let h = queue[head].clone();
        head += 1;
        let src = ids[&h];
        g.set_final(src, model.ln_prob(&h, model.eos()));
        for &(t, unit) in &phone_ids {
            let next = model.next_context(&h, t);
            let dst = match ids.get(&next) {
                Some(&d) => d,
                None => {
                    let d = g.add_state();
                    ids.insert(next.clone(), d);
                    queue.push(next);
                    d
                }
            };
            g.add_arc(src, dst, Some(unit), model.ln_prob(&h, t));
        }
    }
    Ok(g)
}

/// Lattice-free denominator graph: the phone LM expanded through `topology`.
pub fn build_denominator_graph(model: &NGramModel, topology: &Topology) -> Result<Lattice> {
    Ok(build_denominator_graph_with_origin(model, topology)?.lattice)
}

pub fn build_denominator_graph_with_origin(model: &NGramModel, topology: &Topology) -> Result<ExpandedGraph> {
    topology.expand(&lm_acceptor(model, topology)?)
}
