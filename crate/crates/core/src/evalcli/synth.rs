use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{KwsError, Result};
use crate::lattice::{ScoreKind, ScoreMatrix};
use crate::units::{parse_keywords, parse_transcripts, Keyword, Lexicon, UnitInventory};

/// Shape of a generated corpus. Every phone owns a fixed Gaussian mean and
/// emits `mean + noise` for a uniform number of frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub phones: usize,
    pub feature_dim: usize,
    pub mean_scale: f64,
    pub noise_sigma: f64,
    pub min_duration: usize,
    pub max_duration: usize,
    pub lexicon_size: usize,
    pub min_word_phones: usize,
    pub max_word_phones: usize,
    pub keywords: usize,
    /// Keyword phrases must span this many phones.
    pub min_keyword_phones: usize,
    pub max_keyword_phones: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Fraction of utterances that contain one keyword occurrence.
    pub positive_fraction: f64,
    pub train_utterances: usize,
    pub dev_utterances: usize,
    pub test_utterances: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            phones: 10,
            feature_dim: 8,
            mean_scale: 1.0,
            noise_sigma: 0.9,
            min_duration: 3,
            max_duration: 8,
            lexicon_size: 40,
            min_word_phones: 3,
            max_word_phones: 6,
            keywords: 5,
            min_keyword_phones: 3,
            max_keyword_phones: 12,
            min_words: 2,
            max_words: 4,
            positive_fraction: 0.4,
            train_utterances: 2000,
            dev_utterances: 200,
            test_utterances: 400,
            seed: 17,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(KwsError::Config(m.to_string()));
        if self.phones == 0 || self.feature_dim == 0 {
            return bad("phones and feature_dim must be positive");
        }
        if self.min_duration == 0 || self.min_duration > self.max_duration {
            return bad("need 1 <= min_duration <= max_duration");
        }
        if self.min_word_phones == 0 || self.min_word_phones > self.max_word_phones {
            return bad("need 1 <= min_word_phones <= max_word_phones");
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad("need 1 <= min_words <= max_words");
        }
        if self.keywords == 0 || self.keywords >= self.lexicon_size {
            return bad("need 1 <= keywords < lexicon_size");
        }
        if self.min_keyword_phones > self.max_keyword_phones {
            return bad("need min_keyword_phones <= max_keyword_phones");
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return bad("positive_fraction must lie in [0, 1]");
        }
        if !(self.noise_sigma >= 0.0 && self.mean_scale >= 0.0) {
            return bad("noise_sigma and mean_scale must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub id: String,
    pub words: Vec<String>,
    pub features: ScoreMatrix,
    /// Generating phone of every frame.
    pub phones: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub phones: Vec<String>,
    pub lexicon: Vec<(String, Vec<String>)>,
    pub keywords: Vec<Keyword>,
    pub train: Vec<SynthUtterance>,
    pub dev: Vec<SynthUtterance>,
    pub test: Vec<SynthUtterance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = KwsError;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| KwsError::Config(format!("unknown split `{s}`")))
    }
}

pub fn phone_name(i: usize) -> String {
    format!("p{i}")
}

pub fn gen_corpus(cfg: &SynthConfig) -> Result<Corpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mean_dist = Normal::new(0.0, cfg.mean_scale).unwrap();
    let means: Vec<Vec<f64>> =
        (0..cfg.phones).map(|_| (0..cfg.feature_dim).map(|_| mean_dist.sample(&mut rng)).collect()).collect();

    let mut prons: Vec<Vec<usize>> = Vec::with_capacity(cfg.lexicon_size);
    while prons.len() < cfg.lexicon_size {
        let len = rng.gen_range(cfg.min_word_phones..=cfg.max_word_phones);
        let p: Vec<usize> = (0..len).map(|_| rng.gen_range(0..cfg.phones)).collect();
        if !prons.contains(&p) {
            prons.push(p);
        }
    }
    let words: Vec<String> = (0..cfg.lexicon_size).map(|i| format!("w{i:03}")).collect();

    let mut eligible: Vec<usize> = (0..cfg.lexicon_size)
        .filter(|&w| (cfg.min_keyword_phones..=cfg.max_keyword_phones).contains(&prons[w].len()))
        .collect();
    if eligible.len() < cfg.keywords {
        return Err(KwsError::Config(format!(
            "only {} words have {}..={} phones, {} keywords requested",
            eligible.len(),
            cfg.min_keyword_phones,
            cfg.max_keyword_phones,
            cfg.keywords
        )));
    }
    eligible.shuffle(&mut rng);
    let mut kw_ids: Vec<usize> = eligible[..cfg.keywords].to_vec();
    kw_ids.sort_unstable();
    let fillers: Vec<usize> = (0..cfg.lexicon_size).filter(|w| !kw_ids.contains(w)).collect();

    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let make_split = |split: Split, count: usize, rng: &mut ChaCha8Rng| -> Vec<SynthUtterance> {
        (0..count)
            .map(|i| {
                let n = rng.gen_range(cfg.min_words..=cfg.max_words);
                let mut ws: Vec<usize> = (0..n).map(|_| fillers[rng.gen_range(0..fillers.len())]).collect();
                if rng.gen_bool(cfg.positive_fraction) {
                    let slot = rng.gen_range(0..n);
                    ws[slot] = kw_ids[rng.gen_range(0..kw_ids.len())];
                }
                let mut values = Vec::new();
                let mut phones = Vec::new();
                for &w in &ws {
                    for &p in &prons[w] {
                        let dur = rng.gen_range(cfg.min_duration..=cfg.max_duration);
                        for _ in 0..dur {
                            for &m in &means[p] {
                                let v = if cfg.noise_sigma > 0.0 { m + noise.sample(rng) } else { m };
                                // stored as f32 on disk, so keep memory and disk identical
                                values.push(v as f32 as f64);
                            }
                            phones.push(p);
                        }
                    }
                }
                SynthUtterance {
                    id: format!("{}{i:05}", split.name()),
                    words: ws.iter().map(|&w| words[w].clone()).collect(),
                    features: ScoreMatrix::from_vec(phones.len(), cfg.feature_dim, values, ScoreKind::Feature).unwrap(),
                    phones,
                }
            })
            .collect()
    };
    let train = make_split(Split::Train, cfg.train_utterances, &mut rng);
    let dev = make_split(Split::Dev, cfg.dev_utterances, &mut rng);
    let test = make_split(Split::Test, cfg.test_utterances, &mut rng);
    let phone_names: Vec<String> = (0..cfg.phones).map(phone_name).collect();
    Ok(Corpus {
        lexicon: words
            .iter()
            .zip(&prons)
            .map(|(w, p)| (w.clone(), p.iter().map(|&i| phone_names[i].clone()).collect()))
            .collect(),
        phones: phone_names,
        keywords: kw_ids.iter().map(|&w| vec![words[w].clone()]).collect(),
        train,
        dev,
        test,
    })
}

impl Corpus {
    pub fn split(&self, split: Split) -> &[SynthUtterance] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// Phone inventory without special units.
    pub fn base_inventory(&self) -> Result<UnitInventory> {
        UnitInventory::new(&self.phones, &[])
    }

    pub fn lexicon(&self, inventory: &UnitInventory) -> Result<Lexicon> {
        Lexicon::from_entries(&self.lexicon, inventory)
    }

    /// Keywords present in an utterance.
    pub fn keywords_in(&self, words: &[String]) -> Vec<usize> {
        self.keywords
            .iter()
            .enumerate()
            .filter(|(_, k)| words.windows(k.len()).any(|w| w == k.as_slice()))
            .map(|(i, _)| i)
            .collect()
    }

    /// Writes `phones.txt`, `lexicon.txt`, `keywords.txt` and, per split,
    /// `<split>.text`, `<split>.ali` and the `<split>.feats` SDKF archive.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("phones.txt"), self.phones.join("\n") + "\n")?;
        let lex: String = self.lexicon.iter().map(|(w, p)| format!("{w}\t{}\n", p.join(" "))).collect();
        fs::write(dir.join("lexicon.txt"), lex)?;
        let kws: String = self.keywords.iter().map(|k| k.join(" ") + "\n").collect();
        fs::write(dir.join("keywords.txt"), kws)?;
        for split in Split::ALL {
            let utts = self.split(split);
            let mut text = String::new();
            let mut ali = String::new();
            let mut feats = Vec::new();
            for u in utts {
                text.push_str(&format!("{}\t{}\n", u.id, u.words.join(" ")));
                let ids: Vec<String> = u.phones.iter().map(usize::to_string).collect();
                ali.push_str(&format!("{}\t{}\n", u.id, ids.join(" ")));
                u.features.write_sdkf(&mut feats)?;
            }
            fs::write(dir.join(format!("{}.text", split.name())), text)?;
            fs::write(dir.join(format!("{}.ali", split.name())), ali)?;
            fs::write(dir.join(format!("{}.feats", split.name())), feats)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| fs::read_to_string(dir.join(name));
        let phones: Vec<String> = read("phones.txt")?.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
        let lexicon = Lexicon::parse(&read("lexicon.txt")?)?;
        let keywords = parse_keywords(&read("keywords.txt")?);
        let mut splits = Vec::new();
        for split in Split::ALL {
            let text = parse_transcripts(&read(&format!("{}.text", split.name()))?)?;
            let ali = parse_transcripts(&read(&format!("{}.ali", split.name()))?)?;
            let feats = ScoreMatrix::read_sdkf_all(&fs::read(dir.join(format!("{}.feats", split.name())))?, ScoreKind::Feature)?;
            if ali.len() != text.len() || feats.len() != text.len() {
                return Err(KwsError::Format(format!("split {} has inconsistent file lengths", split.name())));
            }
            let mut utts = Vec::with_capacity(text.len());
            for (((id, words), (aid, ids)), features) in text.into_iter().zip(ali).zip(feats) {
                if aid != id {
                    return Err(KwsError::Format(format!("alignment id `{aid}` does not match `{id}`")));
                }
                let phones = ids
                    .iter()
                    .map(|s| s.parse::<usize>().map_err(|_| KwsError::Format(format!("bad phone id `{s}`"))))
                    .collect::<Result<Vec<_>>>()?;
                if phones.len() != features.frames() {
                    return Err(KwsError::LengthMismatch { expected: features.frames(), got: phones.len() });
                }
                utts.push(SynthUtterance { id, words, features, phones });
            }
            splits.push(utts);
        }
        let test = splits.pop().unwrap();
        let dev = splits.pop().unwrap();
        let train = splits.pop().unwrap();
        Ok(Self { phones, lexicon, keywords, train, dev, test })
    }
}
