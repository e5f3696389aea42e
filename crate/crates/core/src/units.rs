//! Unit inventories, the pronunciation lexicon and label-sequence mappings.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use crate::error::{KwsError, Result};

pub const BLANK_SYMBOL: &str = "<blank>";
pub const WB_SYMBOL: &str = "<wb>";
pub const FILLER_SYMBOL: &str = "<filler>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Special {
    Blank,
    WordBoundary,
    Filler,
}

impl Special {
    pub fn symbol(self) -> &'static str {
        match self {
            Special::Blank => BLANK_SYMBOL,
            Special::WordBoundary => WB_SYMBOL,
            Special::Filler => FILLER_SYMBOL,
        }
    }
}

/// Ordered base symbols followed by the special units, with dense ids.
///
/// Base symbols are phones for sub-word systems and keyword units for
/// word-level systems. Specials are numbered after the base symbols in the
/// order blank, wb, filler (absent ones are skipped).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UnitInventory {
    phones: Vec<String>,
    specials: Vec<Special>,
    index: HashMap<String, usize>,
}

impl UnitInventory {
    pub fn new<S: AsRef<str>>(phones: &[S], specials: &[Special]) -> Result<Self> {
        let phones: Vec<String> = phones.iter().map(|p| p.as_ref().to_string()).collect();
        let specials: Vec<Special> = specials.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        let mut index = HashMap::new();
        for (i, p) in phones.iter().enumerate() {
            if p.is_empty() || p.starts_with('<') {
                return Err(KwsError::Config(format!("invalid unit symbol `{p}`")));
            }
            if index.insert(p.clone(), i).is_some() {
                return Err(KwsError::Config(format!("duplicate unit symbol `{p}`")));
            }
        }
        for (k, s) in specials.iter().enumerate() {
            index.insert(s.symbol().to_string(), phones.len() + k);
        }
        Ok(Self { phones, specials, index })
    }

    pub fn phones(&self) -> &[String] {
        &self.phones
    }

    pub fn num_phones(&self) -> usize {
        self.phones.len()
    }

    pub fn total_units(&self) -> usize {
        self.phones.len() + self.specials.len()
    }

    pub fn special(&self, which: Special) -> Option<usize> {
        self.specials.iter().position(|&s| s == which).map(|k| self.phones.len() + k)
    }

    pub fn blank(&self) -> Option<usize> {
        self.special(Special::Blank)
    }

    pub fn wb(&self) -> Option<usize> {
        self.special(Special::WordBoundary)
    }

    pub fn filler(&self) -> Option<usize> {
        self.special(Special::Filler)
    }

    pub fn specials(&self) -> &[Special] {
        &self.specials
    }

    pub fn is_phone(&self, id: usize) -> bool {
        id < self.phones.len()
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    pub fn name(&self, id: usize) -> &str {
        if id < self.phones.len() {
            &self.phones[id]
        } else {
            self.specials[id - self.phones.len()].symbol()
        }
    }

    /// Same base symbols with a different special set.
    pub fn with_specials(&self, specials: &[Special]) -> Self {
        Self::new(&self.phones, specials).expect("base symbols already validated")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelKind {
    Word,
    SubWord,
}

/// Non-empty, blank-free sequence of unit ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelSequence {
    units: Vec<usize>,
    kind: LabelKind,
}

impl LabelSequence {
    pub fn new(units: Vec<usize>, kind: LabelKind, inventory: &UnitInventory) -> Result<Self> {
        if units.is_empty() {
            return Err(KwsError::EmptyLabels);
        }
        if let Some(&u) = units.iter().find(|&&u| u >= inventory.total_units()) {
            return Err(KwsError::UnitOutOfRange { unit: u, units: inventory.total_units() });
        }
        if inventory.blank().is_some_and(|b| units.contains(&b)) {
            return Err(KwsError::BlankInLabels);
        }
        Ok(Self { units, kind })
    }

    pub fn units(&self) -> &[usize] {
        &self.units
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn display<'a>(&'a self, inventory: &'a UnitInventory) -> impl fmt::Display + 'a {
        DisplayLabels { labels: self, inventory }
    }
}

struct DisplayLabels<'a> {
    labels: &'a LabelSequence,
    inventory: &'a UnitInventory,
}

impl fmt::Display for DisplayLabels<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.labels.units.iter().map(|&u| self.inventory.name(u)).collect();
        f.write_str(&names.join(" "))
    }
}

/// Single-pronunciation dictionary from words to phone ids.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<usize>>,
}

impl Lexicon {
    pub fn from_entries<W, P>(entries: &[(W, Vec<P>)], inventory: &UnitInventory) -> Result<Self>
    where
        W: AsRef<str>,
        P: AsRef<str>,
    {
        let mut map = BTreeMap::new();
        for (word, pron) in entries {
            let word = word.as_ref();
            if pron.is_empty() {
                return Err(KwsError::EmptyPronunciation(word.to_string()));
            }
            let ids = pron
                .iter()
                .map(|p| match inventory.id(p.as_ref()) {
                    Some(id) if inventory.is_phone(id) => Ok(id),
                    _ => Err(KwsError::UnknownPhone(p.as_ref().to_string())),
                })
                .collect::<Result<Vec<_>>>()?;
            if map.insert(word.to_string(), ids).is_some() {
                return Err(KwsError::MultiplePronunciations(word.to_string()));
            }
        }
        Ok(Self { entries: map })
    }

    /// Parses `word<TAB>phone phone ...` lines.
    pub fn parse(text: &str) -> Result<Vec<(String, Vec<String>)>> {
        let mut out = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (word, pron) = line
                .split_once('\t')
                .ok_or_else(|| KwsError::Format(format!("lexicon line {} lacks a tab", n + 1)))?;
            out.push((word.trim().to_string(), pron.split_whitespace().map(str::to_string).collect()));
        }
        Ok(out)
    }

    pub fn from_text(text: &str, inventory: &UnitInventory) -> Result<Self> {
        Self::from_entries(&Self::parse(text)?, inventory)
    }

    pub fn to_text(&self, inventory: &UnitInventory) -> String {
        let mut out = String::new();
        for (w, pron) in &self.entries {
            let phones: Vec<&str> = pron.iter().map(|&p| inventory.name(p)).collect();
            out.push_str(&format!("{w}\t{}\n", phones.join(" ")));
        }
        out
    }

    pub fn pronunciation(&self, word: &str) -> Option<&[usize]> {
        self.entries.get(word).map(Vec::as_slice)
    }

    pub fn words(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.entries.iter().map(|(w, p)| (w.as_str(), p.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A keyword phrase: one or more words.
pub type Keyword = Vec<String>;

/// Phone concatenation of `words`.
pub fn expand_keyword<S: AsRef<str>>(words: &[S], lexicon: &Lexicon, inventory: &UnitInventory) -> Result<LabelSequence> {
    let mut units = Vec::new();
    for w in words {
        let pron = lexicon.pronunciation(w.as_ref()).ok_or_else(|| KwsError::UnknownWord(w.as_ref().to_string()))?;
        units.extend_from_slice(pron);
    }
    LabelSequence::new(units, LabelKind::SubWord, inventory)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelMode {
    /// Keywords become word units; every maximal run of other words becomes one filler.
    Word,
    /// Phone expansion with wb between adjacent words.
    SubWord,
}

/// Symbol used for a keyword unit in word-level inventories.
pub fn keyword_symbol<S: AsRef<str>>(keyword: &[S]) -> String {
    keyword.iter().map(|w| w.as_ref()).collect::<Vec<_>>().join("_")
}

/// Maps a word transcript to the label sequence a criterion consumes.
///
/// In word mode `inventory` must hold one base unit per keyword (see
/// [`keyword_symbol`]) plus filler; in sub-word mode it must hold wb.
pub fn apply_label_map<S: AsRef<str>>(
    transcript: &[S],
    mode: LabelMode,
    keywords: &[Keyword],
    lexicon: &Lexicon,
    inventory: &UnitInventory,
) -> Result<LabelSequence> {
    let words: Vec<&str> = transcript.iter().map(AsRef::as_ref).collect();
    match mode {
        LabelMode::Word => {
            let filler = inventory.filler().ok_or(KwsError::MissingSpecialUnit(FILLER_SYMBOL))?;
            // longest phrase first so that multi-word keywords win over their prefixes
            let mut phrases: Vec<&Keyword> = keywords.iter().collect();
            phrases.sort_by_key(|k| std::cmp::Reverse(k.len()));
            let mut units = Vec::new();
            let mut i = 0;
            while i < words.len() {
                let hit = phrases
                    .iter()
                    .find(|k| !k.is_empty() && words.len() - i >= k.len() && k.iter().zip(&words[i..]).all(|(a, b)| a == b));
                match hit {
                    Some(k) => {
                        let sym = keyword_symbol(k);
                        let id = inventory.id(&sym).ok_or(KwsError::UnknownWord(sym))?;
                        units.push(id);
                        i += k.len();
                    }
                    None => {
                        if units.last() != Some(&filler) {
                            units.push(filler);
                        }
                        i += 1;
                    }
                }
            }
            LabelSequence::new(units, LabelKind::Word, inventory)
        }
        LabelMode::SubWord => {
            let wb = inventory.wb().ok_or(KwsError::MissingSpecialUnit(WB_SYMBOL))?;
            let mut units = Vec::new();
            for (k, w) in words.iter().enumerate() {
                if k > 0 {
                    units.push(wb);
                }
                let pron = lexicon.pronunciation(w).ok_or_else(|| KwsError::UnknownWord(w.to_string()))?;
                units.extend_from_slice(pron);
            }
            LabelSequence::new(units, LabelKind::SubWord, inventory)
        }
    }
}

/// Parses a keyword list: one phrase per line.
pub fn parse_keywords(text: &str) -> Vec<Keyword> {
    text.lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
        .filter(|k| !k.is_empty())
        .collect()
}

/// Parses `utt_id<TAB>word word ...` lines.
pub fn parse_transcripts(text: &str) -> Result<Vec<(String, Vec<String>)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, words) = line
            .split_once('\t')
            .ok_or_else(|| KwsError::Format(format!("transcript line {} lacks a tab", n + 1)))?;
        out.push((id.trim().to_string(), words.split_whitespace().map(str::to_string).collect()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (UnitInventory, Lexicon) {
        let inv = UnitInventory::new(&["g", "ow", "ah", "p", "k", "ae", "t", "hh", "ay"], &[Special::WordBoundary]).unwrap();
        let lex = Lexicon::from_text("go\tg ow\nup\tah p\ncat\tk ae t\nhi\thh ay\n", &inv).unwrap();
        (inv, lex)
    }

    fn names(seq: &LabelSequence, inv: &UnitInventory) -> Vec<String> {
        seq.units().iter().map(|&u| inv.name(u).to_string()).collect()
    }

    #[test]
    fn special_ids_follow_phones() {
        let inv = UnitInventory::new(&["a", "b"], &[Special::Filler, Special::Blank]).unwrap();
        assert_eq!(inv.blank(), Some(2));
        assert_eq!(inv.filler(), Some(3));
        assert_eq!(inv.wb(), None);
        assert_eq!(inv.total_units(), 4);
        assert_eq!(inv.name(3), FILLER_SYMBOL);
    }

    #[test]
    fn expand_concatenates_pronunciations() {
        let (inv, lex) = setup();
        assert_eq!(names(&expand_keyword(&["go"], &lex, &inv).unwrap(), &inv), ["g", "ow"]);
        assert_eq!(names(&expand_keyword(&["go", "up"], &lex, &inv).unwrap(), &inv), ["g", "ow", "ah", "p"]);
        assert!(matches!(expand_keyword(&["xyz"], &lex, &inv), Err(KwsError::UnknownWord(w)) if w == "xyz"));
    }

    #[test]
    fn lexicon_rejects_bad_entries() {
        let (inv, _) = setup();
        assert!(matches!(Lexicon::from_text("go\tg ow\ngo\tg ah\n", &inv), Err(KwsError::MultiplePronunciations(_))));
        assert!(matches!(Lexicon::from_text("go\t\n", &inv), Err(KwsError::EmptyPronunciation(_))));
        assert!(matches!(Lexicon::from_text("go\tzz\n", &inv), Err(KwsError::UnknownPhone(_))));
    }

    #[test]
    fn word_mode_collapses_non_keyword_runs() {
        let inv = UnitInventory::new(&["go"], &[Special::Filler]).unwrap();
        let (_, lex) = setup();
        let kws = vec![vec!["go".to_string()]];
        let m = apply_label_map(&["hi", "cat", "go"], LabelMode::Word, &kws, &lex, &inv).unwrap();
        assert_eq!(names(&m, &inv), [FILLER_SYMBOL, "go"]);
        let m = apply_label_map(&["cat"], LabelMode::Word, &kws, &lex, &inv).unwrap();
        assert_eq!(names(&m, &inv), [FILLER_SYMBOL]);
        let m = apply_label_map(&["go", "go", "hi"], LabelMode::Word, &kws, &lex, &inv).unwrap();
        assert_eq!(names(&m, &inv), ["go", "go", FILLER_SYMBOL]);
    }

    #[test]
    fn word_mode_is_idempotent() {
        let inv = UnitInventory::new(&["go"], &[Special::Filler]).unwrap();
        let (_, lex) = setup();
        let kws = vec![vec!["go".to_string()]];
        let once = apply_label_map(&["hi", "cat", "go", "up"], LabelMode::Word, &kws, &lex, &inv).unwrap();
        let again = apply_label_map(&names(&once, &inv), LabelMode::Word, &kws, &lex, &inv).unwrap();
        assert_eq!(once, again);
    }

    #[test]
    fn subword_mode_inserts_boundaries_between_words_only() {
        let (inv, lex) = setup();
        let m = apply_label_map(&["go", "up"], LabelMode::SubWord, &[], &lex, &inv).unwrap();
        assert_eq!(names(&m, &inv), ["g", "ow", WB_SYMBOL, "ah", "p"]);
        let m = apply_label_map(&["cat"], LabelMode::SubWord, &[], &lex, &inv).unwrap();
        assert_eq!(names(&m, &inv), ["k", "ae", "t"]);
    }

    #[test]
    fn missing_specials_are_reported() {
        let (inv, lex) = setup();
        assert!(matches!(
            apply_label_map(&["go"], LabelMode::Word, &[], &lex, &inv),
            Err(KwsError::MissingSpecialUnit(_))
        ));
        let no_wb = inv.with_specials(&[]);
        assert!(matches!(
            apply_label_map(&["go"], LabelMode::SubWord, &[], &lex, &no_wb),
            Err(KwsError::MissingSpecialUnit(_))
        ));
    }

    #[test]
    fn label_sequences_reject_blank_and_empty() {
        let inv = UnitInventory::new(&["a"], &[Special::Blank]).unwrap();
        assert!(matches!(LabelSequence::new(vec![], LabelKind::SubWord, &inv), Err(KwsError::EmptyLabels)));
        assert!(matches!(LabelSequence::new(vec![1], LabelKind::SubWord, &inv), Err(KwsError::BlankInLabels)));
    }

    #[test]
    fn file_parsers() {
        let t = parse_transcripts("u1\tgo up\nu2\tcat\n").unwrap();
        assert_eq!(t[0], ("u1".to_string(), vec!["go".to_string(), "up".to_string()]));
        assert_eq!(parse_keywords("go\n\ngo up\n"), vec![vec!["go".to_string()], vec!["go".to_string(), "up".to_string()]]);
        assert!(parse_transcripts("u1 go").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn subword_length_and_resegmentation(words in proptest::collection::vec(0usize..4, 1..6)) {
                let (inv, lex) = setup();
                let vocab = ["go", "up", "cat", "hi"];
                let transcript: Vec<&str> = words.iter().map(|&i| vocab[i]).collect();
                let m = apply_label_map(&transcript, LabelMode::SubWord, &[], &lex, &inv).unwrap();
                let pron_total: usize = transcript.iter().map(|w| lex.pronunciation(w).unwrap().len()).sum();
                prop_assert_eq!(m.len(), pron_total + transcript.len() - 1);
                let wb = inv.wb().unwrap();
                let segments: Vec<&[usize]> = m.units().split(|&u| u == wb).collect();
                prop_assert_eq!(segments.len(), transcript.len());
                for (seg, w) in segments.iter().zip(&transcript) {
                    prop_assert_eq!(*seg, lex.pronunciation(w).unwrap());
                }
            }
        }
    }
}
