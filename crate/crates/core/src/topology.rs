//! Per-unit hidden-state topologies and their expansion into frame-level lattices.
//!
//! A topology is a small template instantiated once per label unit. Phone-level
//! graphs (a linear label sequence, a phone LM, a keyword/filler loop) are
//! expanded through the templates into epsilon-free, frame-synchronous lattices.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};
use crate::lattice::{Lattice, StateId};
use crate::math::LOG_ZERO;
use crate::units::{LabelSequence, UnitInventory, BLANK_SYMBOL};

/// Self-loop probability on every self-looping template state.
pub const SELF_LOOP_PROB: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TopologyKind {
    /// Three emitting left-to-right states per unit.
    #[serde(rename = "hmm5")]
    Hmm5,
    /// Label with self-loop, optional shared blank around labels.
    #[serde(rename = "ctc")]
    Ctc,
    /// Label once, then optional per-unit blank.
    #[serde(rename = "hmm-pb")]
    HmmPb,
    /// Optional per-unit blank, then looping label.
    #[serde(rename = "hmm-bp")]
    HmmBp,
    /// Optional per-unit blank on both sides of a looping label.
    #[serde(rename = "hmm-bpb")]
    HmmBpb,
}

impl TopologyKind {
    pub const ALL: [TopologyKind; 5] =
        [TopologyKind::Hmm5, TopologyKind::Ctc, TopologyKind::HmmPb, TopologyKind::HmmBp, TopologyKind::HmmBpb];

    pub fn name(self) -> &'static str {
        match self {
            TopologyKind::Hmm5 => "hmm5",
            TopologyKind::Ctc => "ctc",
            TopologyKind::HmmPb => "hmm-pb",
            TopologyKind::HmmBp => "hmm-bp",
            TopologyKind::HmmBpb => "hmm-bpb",
        }
    }
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TopologyKind {
    type Err = KwsError;

    fn from_str(s: &str) -> Result<Self> {
        TopologyKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| KwsError::Config(format!("unknown topology `{s}`")))
    }
}

/// Output-class role of a template state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Role {
    /// k-th label state of the unit.
    Label(usize),
    /// The unit's blank (shared across units for CTC).
    Blank,
}

#[derive(Debug, Clone)]
struct ShapeState {
    role: Role,
    self_loop: bool,
}

/// Kind-level template shape; weights are derived from it.
#[derive(Debug, Clone)]
struct Shape {
    states: Vec<ShapeState>,
    entries: Vec<usize>,
    arcs: Vec<(usize, usize)>,
    /// (state, final-only)
    exits: Vec<(usize, bool)>,
    /// Between two identical consecutive units: allowed exit states and entry states.
    repeat: Option<(Vec<usize>, Vec<usize>)>,
    weighted: bool,
}

fn shape(kind: TopologyKind) -> Shape {
    use Role::*;
    let st = |role, self_loop| ShapeState { role, self_loop };
    match kind {
        TopologyKind::Hmm5 => Shape {
            states: vec![st(Label(0), true), st(Label(1), true), st(Label(2), true)],
            entries: vec![0],
            arcs: vec![(0, 1), (1, 2)],
            exits: vec![(2, false)],
            repeat: None,
            weighted: true,
        },
        TopologyKind::Ctc => Shape {
            states: vec![st(Blank, true), st(Label(0), true), st(Blank, true)],
            entries: vec![0, 1],
            arcs: vec![(0, 1), (1, 2)],
            exits: vec![(1, false), (2, true)],
            repeat: Some((vec![1], vec![0])),
            weighted: false,
        },
        TopologyKind::HmmPb => Shape {
            states: vec![st(Label(0), false), st(Blank, true)],
            entries: vec![0],
            arcs: vec![(0, 1)],
            exits: vec![(0, false), (1, false)],
            repeat: None,
            weighted: true,
        },
        TopologyKind::HmmBp => Shape {
            states: vec![st(Blank, true), st(Label(0), true)],
            entries: vec![0, 1],
            arcs: vec![(0, 1)],
            exits: vec![(1, false)],
            repeat: Some((vec![1], vec![0])),
            weighted: true,
        },
        TopologyKind::HmmBpb => Shape {
            states: vec![st(Blank, true), st(Label(0), true), st(Blank, true)],
            entries: vec![0, 1],
            arcs: vec![(0, 1), (1, 2)],
            exits: vec![(1, false), (2, false)],
            repeat: Some((vec![1], vec![0])),
            weighted: true,
        },
    }
}

/// One template state: output class and log transition weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateState {
    pub class: usize,
    /// Log self-loop weight, `-inf` when the state does not loop.
    pub self_loop: f64,
}

/// Template of one label unit with log-domain transition weights.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitTemplate {
    pub states: Vec<TemplateState>,
    pub entries: Vec<(usize, f64)>,
    pub arcs: Vec<(usize, usize, f64)>,
    /// (state, log weight, final-only)
    pub exits: Vec<(usize, f64, bool)>,
}

/// What an output class stands for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassInfo {
    /// Owning inventory unit; `None` for the shared CTC blank.
    pub unit: Option<usize>,
    pub is_blank: bool,
}

#[derive(Debug, Clone)]
pub struct Topology {
    kind: TopologyKind,
    inventory: UnitInventory,
    shape: Shape,
    /// inventory id → template, for every non-blank unit
    templates: Vec<Option<UnitTemplate>>,
    classes: Vec<ClassInfo>,
}

/// Builds the templates of `kind` for every non-blank unit of `inventory`.
pub fn build_topology(kind: TopologyKind, inventory: &UnitInventory) -> Result<Topology> {
    let blank = inventory.blank();
    if kind == TopologyKind::Ctc && blank.is_none() {
        return Err(KwsError::MissingSpecialUnit(BLANK_SYMBOL));
    }
    let shape = shape(kind);
    let label_units: Vec<usize> = (0..inventory.total_units()).filter(|&u| Some(u) != blank).collect();
    let mut classes = Vec::new();
    let mut class_of: HashMap<(usize, Role), usize> = HashMap::new();
    if kind == TopologyKind::Ctc {
        // CTC classes coincide with inventory ids.
        for u in 0..inventory.total_units() {
            classes.push(ClassInfo { unit: (Some(u) != blank).then_some(u), is_blank: Some(u) == blank });
        }
    } else {
        for &u in &label_units {
            for s in &shape.states {
                if let std::collections::hash_map::Entry::Vacant(e) = class_of.entry((u, s.role)) {
                    e.insert(classes.len());
                    classes.push(ClassInfo { unit: Some(u), is_blank: s.role == Role::Blank });
                }
            }
        }
    }
    let mut templates = vec![None; inventory.total_units()];
    for &u in &label_units {
        let class = |role: Role| match kind {
            TopologyKind::Ctc => match role {
                Role::Blank => blank.unwrap(),
                Role::Label(_) => u,
            },
            _ => class_of[&(u, role)],
        };
        templates[u] = Some(instantiate(&shape, class));
    }
    Ok(Topology { kind, inventory: inventory.clone(), shape, templates, classes })
}

fn instantiate(shape: &Shape, class: impl Fn(Role) -> usize) -> UnitTemplate {
    let lw = |p: f64| if shape.weighted { p.ln() } else { 0.0 };
    let states: Vec<TemplateState> = shape
        .states
        .iter()
        .map(|s| TemplateState {
            class: class(s.role),
            self_loop: if s.self_loop { lw(SELF_LOOP_PROB) } else { LOG_ZERO },
        })
        .collect();
    // forward mass split uniformly among internal successors and the exit
    let forward_prob = |q: usize| {
        let n_arcs = shape.arcs.iter().filter(|a| a.0 == q).count();
        let has_exit = shape.exits.iter().any(|e| e.0 == q);
        let dests = n_arcs + usize::from(has_exit);
        let remaining = if shape.states[q].self_loop { 1.0 - SELF_LOOP_PROB } else { 1.0 };
        remaining / dests as f64
    };
    let entries = shape.entries.iter().map(|&q| (q, lw(1.0 / shape.entries.len() as f64))).collect();
    let arcs = shape.arcs.iter().map(|&(a, b)| (a, b, lw(forward_prob(a)))).collect();
    let exits = shape.exits.iter().map(|&(q, fin)| (q, lw(forward_prob(q)), fin)).collect();
    UnitTemplate { states, entries, arcs, exits }
}

/// A lattice expanded from a phone-level graph, with the origin of every state.
#[derive(Debug, Clone)]
pub struct ExpandedGraph {
    pub lattice: Lattice,
    /// For each lattice state: (phone-graph arc, template state); `None` for the start state.
    pub origin: Vec<Option<(usize, usize)>>,
}

impl Topology {
    pub fn kind(&self) -> TopologyKind {
        self.kind
    }

    pub fn inventory(&self) -> &UnitInventory {
        &self.inventory
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_info(&self, class: usize) -> ClassInfo {
        self.classes[class]
    }

    pub fn template(&self, unit: usize) -> Option<&UnitTemplate> {
        self.templates.get(unit).and_then(Option::as_ref)
    }

    /// Human-readable class name, e.g. `a`, `a/2`, `<blank>`, `<blank:a>`.
    pub fn class_name(&self, class: usize) -> String {
        let info = self.classes[class];
        match (info.unit, info.is_blank) {
            (None, _) => BLANK_SYMBOL.to_string(),
            (Some(u), true) => format!("<blank:{}>", self.inventory.name(u)),
            (Some(u), false) => {
                let t = self.template(u).unwrap();
                let labels: Vec<usize> =
                    t.states.iter().map(|s| s.class).filter(|&c| !self.classes[c].is_blank).collect();
                let mut uniq = labels.clone();
                uniq.dedup();
                if uniq.len() > 1 {
                    let k = uniq.iter().position(|&c| c == class).unwrap();
                    format!("{}/{}", self.inventory.name(u), k)
                } else {
                    self.inventory.name(u).to_string()
                }
            }
        }
    }

    /// Whether every template satisfies the outgoing-mass-equals-one rule.
    /// CTC templates are unweighted and report `true` trivially.
    pub fn normalization_error(&self) -> f64 {
        if !self.shape.weighted {
            return 0.0;
        }
        let mut worst: f64 = 0.0;
        for t in self.templates.iter().flatten() {
            let entry: f64 = t.entries.iter().map(|e| e.1.exp()).sum();
            worst = worst.max((entry - 1.0).abs());
            for (q, s) in t.states.iter().enumerate() {
                let mut mass = s.self_loop.exp();
                mass += t.arcs.iter().filter(|a| a.0 == q).map(|a| a.2.exp()).sum::<f64>();
                mass += t.exits.iter().filter(|e| e.0 == q).map(|e| e.1.exp()).sum::<f64>();
                worst = worst.max((mass - 1.0).abs());
            }
        }
        worst
    }

    /// Minimum number of frames a unit occupies when not repeated.
    pub fn min_duration(&self, unit: usize) -> Option<usize> {
        let t = self.template(unit)?;
        // breadth-first over template states from the entries
        let mut dist = vec![usize::MAX; t.states.len()];
        let mut frontier: Vec<usize> = t.entries.iter().map(|e| e.0).collect();
        for &q in &frontier {
            dist[q] = 1;
        }
        while let Some(q) = frontier.pop() {
            for &(a, b, _) in &t.arcs {
                if a == q && dist[q] + 1 < dist[b] {
                    dist[b] = dist[q] + 1;
                    frontier.push(b);
                }
            }
        }
        t.exits.iter().filter(|e| !e.2).map(|e| dist[e.0]).min()
    }

    /// Expands a phone-level acceptor through the templates.
    ///
    /// The phone graph must be epsilon-free and carry inventory unit ids on its
    /// arcs. Arc weights of the phone graph (e.g. LM log-probabilities) are added
    /// on the transition that enters the corresponding unit.
    pub fn expand(&self, phone_graph: &Lattice) -> Result<ExpandedGraph> {
        if !phone_graph.is_epsilon_free() {
            return Err(KwsError::EpsilonArc);
        }
        let parcs = phone_graph.arcs();
        let mut templates = Vec::with_capacity(parcs.len());
        for a in parcs {
            let u = a.unit.unwrap();
            templates.push(self.template(u).ok_or(KwsError::NoTemplate(u))?);
        }
        let mut out_by_state: Vec<Vec<usize>> = vec![Vec::new(); phone_graph.num_states()];
        for (i, a) in parcs.iter().enumerate() {
            out_by_state[a.src].push(i);
        }
        let mut lat = Lattice::new();
        let mut origin = vec![None];
        let mut ids: HashMap<(usize, usize), StateId> = HashMap::new();
        let mut queue: Vec<(usize, usize)> = Vec::new();
        let mut state_of = |lat: &mut Lattice, origin: &mut Vec<Option<(usize, usize)>>, queue: &mut Vec<(usize, usize)>, key: (usize, usize)| {
            *ids.entry(key).or_insert_with(|| {
                let s = lat.add_state();
                origin.push(Some(key));
                queue.push(key);
                s
            })
        };
        for &b in &out_by_state[phone_graph.start()] {
            let t = templates[b];
            for &(q, we) in &t.entries {
                let dst = state_of(&mut lat, &mut origin, &mut queue, (b, q));
                lat.add_arc(0, dst, Some(t.states[q].class), parcs[b].weight + we);
            }
        }
        let mut head = 0;
        while head < queue.len() {
            let (a, q) = queue[head];
            head += 1;
            let src = state_of(&mut lat, &mut origin, &mut queue, (a, q));
            let t = templates[a];
            let st = &t.states[q];
            if st.self_loop > LOG_ZERO {
                lat.add_arc(src, src, Some(st.class), st.self_loop);
            }
            for &(x, y, w) in &t.arcs {
                if x == q {
                    let dst = state_of(&mut lat, &mut origin, &mut queue, (a, y));
                    lat.add_arc(src, dst, Some(t.states[y].class), w);
                }
            }
            let pdst = parcs[a].dst;
            for &(x, wx, final_only) in &t.exits {
                if x != q {
                    continue;
                }
                if phone_graph.is_final(pdst) {
                    let fw = wx + phone_graph.final_weight(pdst);
                    let cur = lat.final_weight(src);
                    lat.set_final(src, crate::math::log_add(cur, fw));
                }
                if final_only {
                    continue;
                }
                for &b in &out_by_state[pdst] {
                    let tb = templates[b];
                    let repeated = parcs[b].unit == parcs[a].unit;
                    let entries: Vec<(usize, f64)> = match (&self.shape.repeat, repeated) {
                        (Some((exit_from, enter_into)), true) => {
                            if !exit_from.contains(&q) {
                                continue;
                            }
                            let allowed: Vec<(usize, f64)> =
                                tb.entries.iter().copied().filter(|e| enter_into.contains(&e.0)).collect();
                            // renormalize the entry distribution over the allowed states
                            let z = crate::math::log_sum_exp(&allowed.iter().map(|e| e.1).collect::<Vec<_>>());
                            allowed.into_iter().map(|(s, w)| (s, w - z)).collect()
                        }
                        _ => tb.entries.clone(),
                    };
                    for (y, we) in entries {
                        let dst = state_of(&mut lat, &mut origin, &mut queue, (b, y));
                        lat.add_arc(src, dst, Some(tb.states[y].class), wx + parcs[b].weight + we);
                    }
                }
            }
        }
        let map = lat.trim();
        let mut new_origin = vec![None; lat.num_states()];
        for (old, m) in map.iter().enumerate() {
            if let Some(n) = m {
                new_origin[*n] = origin[old];
            }
        }
        Ok(ExpandedGraph { lattice: lat, origin: new_origin })
    }

    /// Shortest accepted length in frames, or `None` if nothing is accepted.
    pub fn min_frames(lattice: &Lattice) -> Option<usize> {
        let n = lattice.num_states();
        let mut dist = vec![usize::MAX; n];
        dist[lattice.start()] = 0;
        let mut queue = std::collections::VecDeque::from([lattice.start()]);
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
        for a in lattice.arcs() {
            out[a.src].push(a.dst);
        }
        while let Some(s) = queue.pop_front() {
            for &d in &out[s] {
                if dist[d] == usize::MAX {
                    dist[d] = dist[s] + 1;
                    queue.push_back(d);
                }
            }
        }
        lattice.final_states().map(|s| dist[s]).filter(|&d| d != usize::MAX && d > 0).min()
    }
}

/// Phone-level linear acceptor for a label sequence (arc i carries label i).
pub fn linear_acceptor(labels: &LabelSequence) -> Lattice {
    let mut g = Lattice::new();
    let mut prev = g.start();
    for &u in labels.units() {
        let s = g.add_state();
        g.add_arc(prev, s, Some(u), 0.0);
        prev = s;
    }
    g.set_final(prev, 0.0);
    g
}

/// Frame-level graph whose length-T paths are the framings of `labels`.
pub fn compile_sequence_graph(labels: &LabelSequence, topology: &Topology) -> Result<Lattice> {
    Ok(compile_sequence_graph_with_origin(labels, topology)?.lattice)
}

/// As [`compile_sequence_graph`]; `origin[s].0` is the label position of state `s`.
pub fn compile_sequence_graph_with_origin(labels: &LabelSequence, topology: &Topology) -> Result<ExpandedGraph> {
    if let Some(b) = topology.inventory().blank() {
        if labels.units().contains(&b) {
            return Err(KwsError::BlankInLabels);
        }
    }
    topology.expand(&linear_acceptor(labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::enumerate_paths;
    use crate::units::{LabelKind, Special};

    fn inv(n: usize, specials: &[Special]) -> UnitInventory {
        let phones: Vec<String> = (0..n).map(|i| ((b'a' + i as u8) as char).to_string()).collect();
        UnitInventory::new(&phones, specials).unwrap()
    }

    #[test]
    fn output_class_counts() {
        let with_blank = inv(3, &[Special::Blank]);
        assert_eq!(build_topology(TopologyKind::Ctc, &with_blank).unwrap().num_classes(), 4);
        assert_eq!(build_topology(TopologyKind::HmmPb, &inv(3, &[])).unwrap().num_classes(), 6);
        assert_eq!(build_topology(TopologyKind::HmmBp, &inv(3, &[])).unwrap().num_classes(), 6);
        assert_eq!(build_topology(TopologyKind::HmmBpb, &inv(3, &[])).unwrap().num_classes(), 6);
        assert_eq!(build_topology(TopologyKind::Hmm5, &inv(2, &[])).unwrap().num_classes(), 6);
    }

    #[test]
    fn ctc_requires_blank() {
        assert!(matches!(
            build_topology(TopologyKind::Ctc, &inv(3, &[])),
            Err(KwsError::MissingSpecialUnit(_))
        ));
    }

    #[test]
    fn weighted_templates_are_normalized() {
        for kind in [TopologyKind::Hmm5, TopologyKind::HmmPb, TopologyKind::HmmBp, TopologyKind::HmmBpb] {
            let t = build_topology(kind, &inv(3, &[])).unwrap();
            assert!(t.normalization_error() < 1e-12, "{kind}");
        }
    }

    #[test]
    fn ctc_small_languages() {
        let i = inv(2, &[Special::Blank]);
        let topo = build_topology(TopologyKind::Ctc, &i).unwrap();
        let blank = i.blank().unwrap();
        let l = |u: Vec<usize>| LabelSequence::new(u, LabelKind::SubWord, &i).unwrap();
        let g = compile_sequence_graph(&l(vec![0]), &topo).unwrap();
        let mut strings: Vec<Vec<usize>> = enumerate_paths(&g, 2).unwrap().into_iter().map(|p| p.units).collect();
        strings.sort();
        assert_eq!(strings, vec![vec![0, 0], vec![0, blank], vec![blank, 0]]);
        let g = compile_sequence_graph(&l(vec![0, 1]), &topo).unwrap();
        let strings: Vec<Vec<usize>> = enumerate_paths(&g, 2).unwrap().into_iter().map(|p| p.units).collect();
        assert_eq!(strings, vec![vec![0, 1]]);
        let g = compile_sequence_graph(&l(vec![0, 0]), &topo).unwrap();
        assert!(enumerate_paths(&g, 2).unwrap().is_empty());
        assert_eq!(Topology::min_frames(&g), Some(3));
    }

    #[test]
    fn compiled_graphs_stay_normalized() {
        let i = inv(3, &[]);
        for kind in [TopologyKind::Hmm5, TopologyKind::HmmPb, TopologyKind::HmmBp, TopologyKind::HmmBpb] {
            let topo = build_topology(kind, &i).unwrap();
            for units in [vec![0], vec![0, 1, 2], vec![2, 0, 1, 2]] {
                let labels = LabelSequence::new(units, LabelKind::SubWord, &i).unwrap();
                let g = compile_sequence_graph(&labels, &topo).unwrap();
                for (s, m) in g.outgoing_mass().into_iter().enumerate() {
                    assert!((m.exp() - 1.0).abs() < 1e-12, "{kind} state {s} mass {}", m.exp());
                }
            }
        }
    }

    #[test]
    fn min_durations() {
        let i = inv(2, &[Special::Blank]);
        assert_eq!(build_topology(TopologyKind::Hmm5, &i).unwrap().min_duration(0), Some(3));
        assert_eq!(build_topology(TopologyKind::HmmPb, &i).unwrap().min_duration(0), Some(1));
        assert_eq!(build_topology(TopologyKind::Ctc, &i).unwrap().min_duration(0), Some(1));
    }

    #[test]
    fn class_names() {
        let i = inv(2, &[Special::Blank]);
        let t = build_topology(TopologyKind::HmmPb, &i).unwrap();
        assert_eq!(t.class_name(0), "a");
        assert_eq!(t.class_name(1), "<blank:a>");
        let t = build_topology(TopologyKind::Hmm5, &i).unwrap();
        assert_eq!(t.class_name(4), "b/1");
    }
}
