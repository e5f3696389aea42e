use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{KwsError, Result};
use crate::math::{log_add, LOG_ZERO};

pub type StateId = usize;

/// A weighted transition. `unit == None` marks an epsilon arc that consumes no frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub src: StateId,
    pub dst: StateId,
    pub unit: Option<usize>,
    pub weight: f64,
}

/// Frame-synchronous scoring graph.
///
/// Every emitting arc consumes exactly one frame of scores. Final states carry
/// a log final weight; non-final states hold `-inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    start: StateId,
    finals: Vec<f64>,
    arcs: Vec<Arc>,
}

impl Default for Lattice {
    fn default() -> Self {
        Self::new()
    }
}

impl Lattice {
    /// A lattice with a single (non-final) start state.
    pub fn new() -> Self {
        Self { start: 0, finals: vec![LOG_ZERO], arcs: Vec::new() }
    }

    pub fn add_state(&mut self) -> StateId {
        self.finals.push(LOG_ZERO);
        self.finals.len() - 1
    }

    pub fn add_arc(&mut self, src: StateId, dst: StateId, unit: Option<usize>, weight: f64) {
        debug_assert!(src < self.finals.len() && dst < self.finals.len());
        self.arcs.push(Arc { src, dst, unit, weight });
    }

    pub fn set_final(&mut self, state: StateId, weight: f64) {
        self.finals[state] = weight;
    }

    pub fn set_start(&mut self, state: StateId) {
        self.start = state;
    }

    pub fn start(&self) -> StateId {
        self.start
    }

    pub fn num_states(&self) -> usize {
        self.finals.len()
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn final_weight(&self, state: StateId) -> f64 {
        self.finals[state]
    }

    pub fn is_final(&self, state: StateId) -> bool {
        self.finals[state] > LOG_ZERO
    }

    pub fn final_states(&self) -> impl Iterator<Item = StateId> + '_ {
        (0..self.finals.len()).filter(|&s| self.is_final(s))
    }

    pub fn is_epsilon_free(&self) -> bool {
        self.arcs.iter().all(|a| a.unit.is_some())
    }

    /// Largest unit id on any arc.
    pub fn max_unit(&self) -> Option<usize> {
        self.arcs.iter().filter_map(|a| a.unit).max()
    }

    /// Log-sum of outgoing arc weights plus the final weight, per state.
    pub fn outgoing_mass(&self) -> Vec<f64> {
        let mut mass = self.finals.clone();
        for a in &self.arcs {
            mass[a.src] = log_add(mass[a.src], a.weight);
        }
        mass
    }

    /// Adds `weight` to every path by re-rooting at a fresh start state.
    pub fn add_path_weight(&mut self, weight: f64) {
        let old = self.start;
        let new_start = self.add_state();
        let out: Vec<Arc> = self.arcs.iter().filter(|a| a.src == old).copied().collect();
        for a in out {
            self.add_arc(new_start, a.dst, a.unit, a.weight + weight);
        }
        if self.is_final(old) {
            self.finals[new_start] = self.finals[old] + weight;
        }
        self.start = new_start;
        self.trim();
    }

    /// Checks structural invariants: finite weights, valid state ids.
    pub fn validate(&self) -> Result<()> {
        let n = self.num_states();
        if self.start >= n {
            return Err(KwsError::Format("start state out of range".into()));
        }
        for a in &self.arcs {
            if a.src >= n || a.dst >= n {
                return Err(KwsError::Format(format!("arc {}->{} references a missing state", a.src, a.dst)));
            }
            if !a.weight.is_finite() {
                return Err(KwsError::Format(format!("arc {}->{} has non-finite weight", a.src, a.dst)));
            }
        }
        Ok(())
    }

    /// Removes states that are unreachable from the start or cannot reach a final state.
    /// Returns the old → new state map.
    pub fn trim(&mut self) -> Vec<Option<StateId>> {
        let n = self.num_states();
        let mut fwd_adj = vec![Vec::new(); n];
        let mut bwd_adj = vec![Vec::new(); n];
        for a in &self.arcs {
            fwd_adj[a.src].push(a.dst);
            bwd_adj[a.dst].push(a.src);
        }
        let reach = bfs(self.start, &fwd_adj, n);
        let mut coreach = vec![false; n];
        let mut queue: VecDeque<StateId> = VecDeque::new();
        for s in self.final_states() {
            coreach[s] = true;
            queue.push_back(s);
        }
        while let Some(s) = queue.pop_front() {
            for &p in &bwd_adj[s] {
                if !coreach[p] {
                    coreach[p] = true;
                    queue.push_back(p);
                }
            }
        }
        let mut map = vec![None; n];
        let mut finals = Vec::new();
        for s in 0..n {
            if (reach[s] && coreach[s]) || s == self.start {
                map[s] = Some(finals.len());
                finals.push(self.finals[s]);
            }
        }
        let arcs = self
            .arcs
            .iter()
            .filter(|a| reach[a.src] && coreach[a.src] && reach[a.dst] && coreach[a.dst])
            .map(|a| Arc { src: map[a.src].unwrap(), dst: map[a.dst].unwrap(), ..*a })
            .collect();
        self.start = map[self.start].unwrap();
        self.finals = finals;
        self.arcs = arcs;
        map
    }

    /// Replaces epsilon arcs by their weighted closures. The epsilon subgraph must be acyclic.
    pub fn remove_epsilons(&self) -> Result<Lattice> {
        if self.is_epsilon_free() {
            return Ok(self.clone());
        }
        let n = self.num_states();
        let mut eps_out = vec![Vec::new(); n];
        for a in &self.arcs {
            if a.unit.is_none() {
                eps_out[a.src].push((a.dst, a.weight));
            }
        }
        let order = topo_order(&eps_out)?;
        // closure[s] = (state, log weight) reachable from s by epsilon paths, including s itself.
        let mut closure: Vec<Vec<(StateId, f64)>> = vec![Vec::new(); n];
        for &s in order.iter().rev() {
            let mut acc: Vec<f64> = vec![LOG_ZERO; 0];
            let mut members: Vec<StateId> = Vec::new();
            let add = |state: StateId, w: f64, acc: &mut Vec<f64>, members: &mut Vec<StateId>| {
                if let Some(i) = members.iter().position(|&m| m == state) {
                    acc[i] = log_add(acc[i], w);
                } else {
                    members.push(state);
                    acc.push(w);
                }
            };
            add(s, 0.0, &mut acc, &mut members);
            for &(d, w) in &eps_out[s] {
                for &(c, cw) in &closure[d] {
                    add(c, w + cw, &mut acc, &mut members);
                }
            }
            closure[s] = members.into_iter().zip(acc).collect();
        }
        let mut out_arcs = vec![Vec::new(); n];
        for a in &self.arcs {
            if a.unit.is_some() {
                out_arcs[a.src].push(*a);
            }
        }
        let mut result = Lattice { start: self.start, finals: vec![LOG_ZERO; n], arcs: Vec::new() };
        for s in 0..n {
            for &(c, w) in &closure[s] {
                result.finals[s] = log_add(result.finals[s], w + self.finals[c]);
                for a in &out_arcs[c] {
                    result.arcs.push(Arc { src: s, dst: a.dst, unit: a.unit, weight: a.weight + w });
                }
            }
        }
        result.trim();
        Ok(result)
    }

    /// Debug text form: `src dst unit logw` per arc (`<eps>` for epsilon), then
    /// `state logw` per final state.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# start {}", self.start);
        for a in &self.arcs {
            match a.unit {
                Some(u) => {
                    let _ = writeln!(out, "{} {} {} {}", a.src, a.dst, u, a.weight);
                }
                None => {
                    let _ = writeln!(out, "{} {} <eps> {}", a.src, a.dst, a.weight);
                }
            }
        }
        for s in self.final_states() {
            let _ = writeln!(out, "{} {}", s, self.finals[s]);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Lattice> {
        let bad = |l: &str| KwsError::Format(format!("bad lattice line `{l}`"));
        let mut lat = Lattice { start: 0, finals: Vec::new(), arcs: Vec::new() };
        let ensure = |lat: &mut Lattice, s: usize| {
            if lat.finals.len() <= s {
                lat.finals.resize(s + 1, LOG_ZERO);
            }
        };
        for line in text.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("# start ") {
                let start: usize = rest.trim().parse().map_err(|_| bad(line))?;
                lat.start = start;
                ensure(&mut lat, start);
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            match f.len() {
                2 => {
                    let s: usize = f[0].parse().map_err(|_| bad(line))?;
                    ensure(&mut lat, s);
                    lat.finals[s] = f[1].parse().map_err(|_| bad(line))?;
                }
                4 => {
                    let src: usize = f[0].parse().map_err(|_| bad(line))?;
                    let dst: usize = f[1].parse().map_err(|_| bad(line))?;
                    let unit = if f[2] == "<eps>" { None } else { Some(f[2].parse().map_err(|_| bad(line))?) };
                    let weight: f64 = f[3].parse().map_err(|_| bad(line))?;
                    ensure(&mut lat, src.max(dst));
                    lat.arcs.push(Arc { src, dst, unit, weight });
                }
                _ => return Err(bad(line)),
            }
        }
        ensure(&mut lat, 0);
        lat.validate()?;
        Ok(lat)
    }
}

fn bfs(start: StateId, adj: &[Vec<StateId>], n: usize) -> Vec<bool> {
    let mut seen = vec![false; n];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(s) = queue.pop_front() {
        for &d in &adj[s] {
            if !seen[d] {
                seen[d] = true;
                queue.push_back(d);
            }
        }
    }
    seen
}

fn topo_order(adj: &[Vec<(StateId, f64)>]) -> Result<Vec<StateId>> {
    let n = adj.len();
    let mut indeg = vec![0usize; n];
    for edges in adj {
        for &(d, _) in edges {
            indeg[d] += 1;
        }
    }
    let mut queue: VecDeque<StateId> = (0..n).filter(|&s| indeg[s] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(s) = queue.pop_front() {
        order.push(s);
        for &(d, _) in &adj[s] {
            indeg[d] -= 1;
            if indeg[d] == 0 {
                queue.push_back(d);
            }
        }
    }
    if order.len() != n {
        return Err(KwsError::EpsilonCycle);
    }
    Ok(order)
}
