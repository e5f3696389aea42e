use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use crate::error::{KwsError, Result};
use crate::units::{LabelSequence, UnitInventory};

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
/// Log10 probability written for `<s>`, which is never predicted.
const BOS_LOG10: f64 = -99.0;

pub type Token = u32;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    log10_prob: f64,
    log10_backoff: Option<f64>,
}

/// Backoff phone n-gram model stored in ARPA form.
///
/// Token ids: phones `0..V`, then `<s>` and `</s>`.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    vocab: Vec<String>,
    /// `grams[k]` holds the (k+1)-grams.
    grams: Vec<BTreeMap<Vec<Token>, Entry>>,
    counts: Option<Counts>,
}

#[derive(Debug, Clone, PartialEq, Default)]
struct Counts {
    /// (history, next) → count, for every history length 0..order
    joint: HashMap<(Vec<Token>, Token), u64>,
    /// history → (total count, distinct successors)
    context: HashMap<Vec<Token>, (u64, u64)>,
    /// phone-only unigram counts, excluding sentence markers
    phone_tokens: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NGramOptions {
    pub order: usize,
    /// Keeps only this many highest-order n-grams (largest counts first).
    pub max_ngrams: Option<usize>,
}

impl Default for NGramOptions {
    fn default() -> Self {
        Self { order: 3, max_ngrams: None }
    }
}

/// Trains an interpolated Witten-Bell model over the phones of `inventory`.
pub fn train_ngram(corpus: &[LabelSequence], inventory: &UnitInventory, opts: NGramOptions) -> Result<NGramModel> {
    let order = opts.order;
    if !(1..=3).contains(&order) {
        return Err(KwsError::BadOrder(order));
    }
    if corpus.is_empty() {
        return Err(KwsError::EmptyCorpus);
    }
    let vocab: Vec<String> = inventory.phones().to_vec();
    let v = vocab.len() as Token;
    let (bos, eos) = (v, v + 1);
    let mut counts = Counts { phone_tokens: vec![0; vocab.len()], ..Default::default() };
    for sent in corpus {
        let mut toks = vec![bos];
        for &u in sent.units() {
            if !inventory.is_phone(u) {
                return Err(KwsError::UnknownUnit(inventory.name(u).to_string()));
            }
            counts.phone_tokens[u] += 1;
            toks.push(u as Token);
        }
        toks.push(eos);
        for i in 1..toks.len() {
            let w = toks[i];
            for k in 0..order {
                if k > i {
                    break;
                }
                let hist = toks[i - k..i].to_vec();
                let c = counts.joint.entry((hist, w)).or_insert(0);
                *c += 1;
            }
        }
    }
    for ((h, _), c) in &counts.joint {
        let e = counts.context.entry(h.clone()).or_insert((0, 0));
        e.0 += c;
        e.1 += 1;
    }
    let predictable = vocab.len() as f64 + 1.0;
    let mut model = NGramModel { order, vocab, grams: vec![BTreeMap::new(); order], counts: None };

    // unigrams: all phones and </s>, interpolated with the uniform distribution
    let (n_tok, n_types) = counts.context.get(&Vec::new()).copied().unwrap_or((0, 0));
    let mut uni: HashMap<Token, f64> = HashMap::new();
    for w in (0..v).chain([eos]) {
        let c = counts.joint.get(&(Vec::new(), w)).copied().unwrap_or(0) as f64;
        let p = (c + n_types as f64 / predictable) / (n_tok as f64 + n_types as f64);
        uni.insert(w, p);
        model.grams[0].insert(vec![w], Entry { log10_prob: p.log10(), log10_backoff: None });
    }
    model.grams[0].insert(vec![bos], Entry { log10_prob: BOS_LOG10, log10_backoff: None });

    // higher orders in increasing order so lower-order probabilities exist
    let mut probs: HashMap<(Vec<Token>, Token), f64> = uni.iter().map(|(&w, &p)| ((Vec::new(), w), p)).collect();
    for k in 1..order {
        let mut keys: Vec<&(Vec<Token>, Token)> = counts.joint.keys().filter(|(h, _)| h.len() == k).collect();
        keys.sort();
        for key in keys {
            let (h, w) = key;
            let p = wb_prob(&counts, &probs, h, *w);
            probs.insert((h.clone(), *w), p);
            let mut gram = h.clone();
            gram.push(*w);
            model.grams[k].insert(gram, Entry { log10_prob: p.log10(), log10_backoff: None });
        }
    }
    if let Some(cap) = opts.max_ngrams {
        if order > 1 && model.grams[order - 1].len() > cap {
            let mut ranked: Vec<(u64, Vec<Token>)> = model.grams[order - 1]
                .keys()
                .map(|g| {
                    let (h, w) = g.split_at(g.len() - 1);
                    (counts.joint[&(h.to_vec(), w[0])], g.clone())
                })
                .collect();
            ranked.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
            for (_, g) in ranked.into_iter().skip(cap) {
                model.grams[order - 1].remove(&g);
            }
        }
    }
    // backoff weights for every context that is itself a listed n-gram
    for k in 0..order.saturating_sub(1) {
        let contexts: Vec<Vec<Token>> = model.grams[k].keys().cloned().collect();
        for ctx in contexts {
            let pruned = opts.max_ngrams.is_some() && k + 2 == order;
            let alpha = if !pruned {
                match counts.context.get(&ctx) {
                    Some(&(c, n1)) => n1 as f64 / (c + n1) as f64,
                    None => continue,
                }
            } else {
                let listed: Vec<Token> = model.successors(&ctx);
                if listed.is_empty() && !counts.context.contains_key(&ctx) {
                    continue;
                }
                let num: f64 = 1.0 - listed.iter().map(|&w| model.prob(&ctx, w)).sum::<f64>();
                let den: f64 = 1.0 - listed.iter().map(|&w| model.prob(&ctx[1..], w)).sum::<f64>();
                num / den
            };
            model.grams[k].get_mut(&ctx).unwrap().log10_backoff = Some(alpha.log10());
        }
    }
    model.counts = Some(counts);
    Ok(model)
}

fn wb_prob(counts: &Counts, lower: &HashMap<(Vec<Token>, Token), f64>, h: &[Token], w: Token) -> f64 {
    let shorter = h[1..].to_vec();
    let p_lower = lower
        .get(&(shorter.clone(), w))
        .copied()
        .unwrap_or_else(|| lower_backoff(counts, lower, &shorter, w));
    let c = counts.joint.get(&(h.to_vec(), w)).copied().unwrap_or(0) as f64;
    let (ch, n1) = counts.context[h];
    (c + n1 as f64 * p_lower) / (ch + n1) as f64
}

/// Interpolated probability for an unseen (h, w) pair during training.
fn lower_backoff(counts: &Counts, lower: &HashMap<(Vec<Token>, Token), f64>, h: &[Token], w: Token) -> f64 {
    if let Some(&p) = lower.get(&(h.to_vec(), w)) {
        return p;
    }
    match counts.context.get(h) {
        Some(&(c, n1)) => {
            let p = lower_backoff(counts, lower, &h[1..], w);
            n1 as f64 * p / (c + n1) as f64
        }
        None => lower_backoff(counts, lower, &h[1..], w),
    }
}

impl NGramModel {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn bos(&self) -> Token {
        self.vocab.len() as Token
    }

    pub fn eos(&self) -> Token {
        self.vocab.len() as Token + 1
    }

    pub fn token(&self, name: &str) -> Option<Token> {
        match name {
            BOS => Some(self.bos()),
            EOS => Some(self.eos()),
            _ => self.vocab.iter().position(|p| p == name).map(|i| i as Token),
        }
    }

    pub fn token_name(&self, t: Token) -> &str {
        if t == self.bos() {
            BOS
        } else if t == self.eos() {
            EOS
        } else {
            &self.vocab[t as usize]
        }
    }

    /// Number of n-grams listed at each order.
    pub fn ngram_counts(&self) -> Vec<usize> {
        self.grams.iter().map(BTreeMap::len).collect()
    }

    /// Training count of `next` after `history` (names), if counts are available.
    pub fn count(&self, history: &[&str], next: &str) -> Option<u64> {
        let counts = self.counts.as_ref()?;
        let h = history.iter().map(|n| self.token(n)).collect::<Option<Vec<_>>>()?;
        let w = self.token(next)?;
        Some(counts.joint.get(&(h, w)).copied().unwrap_or(0))
    }

    /// Unsmoothed relative frequency of a phone among all phone tokens.
    pub fn ml_unigram(&self, phone: &str) -> Option<f64> {
        let counts = self.counts.as_ref()?;
        let w = self.token(phone)? as usize;
        let total: u64 = counts.phone_tokens.iter().sum();
        counts.phone_tokens.get(w).map(|&c| c as f64 / total as f64)
    }

    fn entry(&self, gram: &[Token]) -> Option<&Entry> {
        self.grams.get(gram.len().checked_sub(1)?)?.get(gram)
    }

    /// Whether `history` has a backoff entry, i.e. is a state of the model.
    pub fn is_context(&self, history: &[Token]) -> bool {
        history.is_empty() || self.entry(history).is_some_and(|e| e.log10_backoff.is_some())
    }

    fn successors(&self, ctx: &[Token]) -> Vec<Token> {
        let k = ctx.len();
        if k + 1 > self.order {
            return Vec::new();
        }
        self.grams[k].keys().filter(|g| &g[..k] == ctx).map(|g| g[k]).collect()
    }

    /// P(w | history) with backoff; the history is truncated to order − 1.
    pub fn prob(&self, history: &[Token], w: Token) -> f64 {
        10f64.powf(self.log10_prob(history, w))
    }

    pub fn log10_prob(&self, history: &[Token], w: Token) -> f64 {
        let keep = history.len().min(self.order - 1);
        let h = &history[history.len() - keep..];
        let mut gram = h.to_vec();
        gram.push(w);
        if let Some(e) = self.entry(&gram) {
            return e.log10_prob;
        }
        if h.is_empty() {
            return f64::NEG_INFINITY;
        }
        let bo = self.entry(h).and_then(|e| e.log10_backoff).unwrap_or(0.0);
        bo + self.log10_prob(&h[1..], w)
    }

    /// Natural-log P(w | history).
    pub fn ln_prob(&self, history: &[Token], w: Token) -> f64 {
        self.log10_prob(history, w) * std::f64::consts::LN_10
    }

    /// Longest suffix of `history · w` (at most order − 1 tokens) that is a model context.
    pub fn next_context(&self, history: &[Token], w: Token) -> Vec<Token> {
        let mut h: Vec<Token> = history.to_vec();
        h.push(w);
        let keep = h.len().min(self.order - 1);
        let mut h = h[h.len() - keep..].to_vec();
        while !self.is_context(&h) {
            h.remove(0);
        }
        h
    }

    /// Start context: `<s>` when the model conditions on it.
    pub fn start_context(&self) -> Vec<Token> {
        if self.order > 1 && self.is_context(&[self.bos()]) {
            vec![self.bos()]
        } else {
            Vec::new()
        }
    }

    /// Natural-log probability of a phone sentence, end-of-sentence included.
    pub fn score_tokens(&self, phones: &[Token]) -> f64 {
        let mut hist = vec![self.bos()];
        let mut total = 0.0;
        for &w in phones {
            total += self.ln_prob(&hist, w);
            hist.push(w);
        }
        total + self.ln_prob(&hist, self.eos())
    }

    /// Writes the ARPA text form.
    pub fn to_arpa(&self) -> String {
        let mut out = String::from("\n\\data\\\n");
        for (k, g) in self.grams.iter().enumerate() {
            let _ = writeln!(out, "ngram {}={}", k + 1, g.len());
        }
        for (k, g) in self.grams.iter().enumerate() {
            let _ = write!(out, "\n\\{}-grams:\n", k + 1);
            for (gram, e) in g {
                let words: Vec<&str> = gram.iter().map(|&t| self.token_name(t)).collect();
                match e.log10_backoff {
                    Some(bo) => {
                        let _ = writeln!(out, "{}\t{}\t{}", e.log10_prob, words.join(" "), bo);
                    }
                    None => {
                        let _ = writeln!(out, "{}\t{}", e.log10_prob, words.join(" "));
                    }
                }
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    /// Reads the ARPA text form written by [`NGramModel::to_arpa`].
    pub fn from_arpa(text: &str) -> Result<Self> {
        let bad = |m: &str| KwsError::Format(format!("ARPA: {m}"));
        let mut declared: Vec<usize> = Vec::new();
        let mut raw: Vec<Vec<(Vec<String>, Entry)>> = Vec::new();
        let mut section: Option<usize> = None;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line == "\\data\\" {
                continue;
            }
            if line == "\\end\\" {
                break;
            }
            if let Some(rest) = line.strip_prefix("ngram ") {
                let (_, n) = rest.split_once('=').ok_or_else(|| bad(line))?;
                declared.push(n.trim().parse().map_err(|_| bad(line))?);
                continue;
            }
            if let Some(rest) = line.strip_prefix('\\').and_then(|r| r.strip_suffix("-grams:")) {
                let k: usize = rest.parse().map_err(|_| bad(line))?;
                if k == 0 || k > raw.len() + 1 {
                    return Err(bad(line));
                }
                raw.push(Vec::new());
                section = Some(k - 1);
                continue;
            }
            let k = section.ok_or_else(|| bad("entry outside a section"))?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 2 || fields.len() > 3 {
                return Err(bad(line));
            }
            let log10_prob: f64 = fields[0].parse().map_err(|_| bad(line))?;
            let words: Vec<String> = fields[1].split(' ').map(str::to_string).collect();
            if words.len() != k + 1 {
                return Err(bad(line));
            }
            let log10_backoff = match fields.get(2) {
                Some(b) => Some(b.parse().map_err(|_| bad(line))?),
                None => None,
            };
            raw[k].push((words, Entry { log10_prob, log10_backoff }));
        }
        if raw.is_empty() || raw.len() > 3 {
            return Err(bad("missing or unsupported n-gram sections"));
        }
        if declared.len() != raw.len() || declared.iter().zip(&raw).any(|(d, r)| *d != r.len()) {
            return Err(bad("declared counts do not match sections"));
        }
        let vocab: Vec<String> = raw[0]
            .iter()
            .map(|(w, _)| w[0].clone())
            .filter(|w| w != BOS && w != EOS)
            .collect();
        let mut model = NGramModel { order: raw.len(), vocab, grams: vec![BTreeMap::new(); raw.len()], counts: None };
        for (k, entries) in raw.into_iter().enumerate() {
            for (words, e) in entries {
                let gram = words
                    .iter()
                    .map(|w| model.token(w).ok_or_else(|| KwsError::UnknownUnit(w.clone())))
                    .collect::<Result<Vec<_>>>()?;
                model.grams[k].insert(gram, e);
            }
        }
        Ok(model)
    }
}

/// Natural-log probability of `seq` under `model`, end-of-sentence included.
pub fn score_sequence(model: &NGramModel, seq: &LabelSequence, inventory: &UnitInventory) -> Result<f64> {
    let toks = seq
        .units()
        .iter()
        .map(|&u| {
            let name = inventory.name(u);
            match model.token(name) {
                Some(t) if t < model.bos() => Ok(t),
                _ => Err(KwsError::UnknownUnit(name.to_string())),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(model.score_tokens(&toks))
}
