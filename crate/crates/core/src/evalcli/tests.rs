use super::*;
use crate::criteria::CriterionKind;
use crate::topology::TopologyKind;

fn tiny() -> SynthConfig {
    SynthConfig {
        phones: 5,
        feature_dim: 4,
        lexicon_size: 12,
        keywords: 2,
        train_utterances: 60,
        dev_utterances: 20,
        test_utterances: 30,
        ..SynthConfig::default()
    }
}

#[test]
fn noiseless_frames_repeat_their_phone_mean() {
    let c = gen_corpus(&SynthConfig { noise_sigma: 0.0, ..tiny() }).unwrap();
    let mut seen: Vec<Option<Vec<f64>>> = vec![None; 5];
    for u in c.train.iter().chain(&c.test) {
        for (t, &p) in u.phones.iter().enumerate() {
            let row = u.features.row(t).to_vec();
            match &seen[p] {
                Some(r) => assert_eq!(r, &row),
                None => seen[p] = Some(row),
            }
        }
    }
}

#[test]
fn same_seed_same_corpus() {
    let a = gen_corpus(&tiny()).unwrap();
    assert_eq!(a, gen_corpus(&tiny()).unwrap());
    assert_ne!(a, gen_corpus(&SynthConfig { seed: 18, ..tiny() }).unwrap());

    let dir = tempfile::tempdir().unwrap();
    a.save(dir.path()).unwrap();
    let back = Corpus::load(dir.path()).unwrap();
    assert_eq!(a, back);
    let b = tempfile::tempdir().unwrap();
    back.save(b.path()).unwrap();
    for name in ["train.feats", "test.text", "lexicon.txt", "dev.ali"] {
        assert_eq!(std::fs::read(dir.path().join(name)).unwrap(), std::fs::read(b.path().join(name)).unwrap());
    }
}

#[test]
fn keyword_rate_matches_configured_fraction() {
    let cfg = SynthConfig { train_utterances: 3000, dev_utterances: 1, test_utterances: 1, positive_fraction: 0.3, ..SynthConfig::default() };
    let c = gen_corpus(&cfg).unwrap();
    let positives = c.train.iter().filter(|u| !c.keywords_in(&u.words).is_empty()).count();
    let rate = positives as f64 / c.train.len() as f64;
    // three standard deviations of a binomial proportion
    let sd = (0.3f64 * 0.7 / 3000.0).sqrt();
    assert!((rate - 0.3).abs() < 3.0 * sd, "rate {rate}");
}

#[test]
fn default_corpus_shape() {
    let cfg = SynthConfig::default();
    assert!(cfg.train_utterances >= 2000);
    assert_eq!((cfg.phones, cfg.feature_dim, cfg.keywords, cfg.seed), (10, 8, 5, 17));
    let c = gen_corpus(&SynthConfig { train_utterances: 10, ..cfg }).unwrap();
    let inv = c.base_inventory().unwrap();
    let lex = c.lexicon(&inv).unwrap();
    for k in &c.keywords {
        let n: usize = k.iter().map(|w| lex.pronunciation(w).unwrap().len()).sum();
        assert!((3..=12).contains(&n));
    }
    assert_eq!(c.keywords.len(), 5);
}

#[test]
fn invalid_synth_configs() {
    assert!(gen_corpus(&SynthConfig { min_duration: 0, ..tiny() }).is_err());
    assert!(gen_corpus(&SynthConfig { keywords: 12, ..tiny() }).is_err());
    assert!(gen_corpus(&SynthConfig { min_keyword_phones: 20, max_keyword_phones: 30, ..tiny() }).is_err());
}

#[test]
fn config_json_and_modes() {
    let cfg = ExperimentConfig::from_json(r#"{"topology": "ctc", "criterion": {"kind": "ctc"}, "post": "med", "synth": {"seed": 5}}"#)
        .unwrap();
    assert_eq!(cfg.topology, TopologyKind::Ctc);
    assert_eq!(cfg.criterion.kind, CriterionKind::Ctc);
    assert_eq!(cfg.post, PostMode::Med);
    assert_eq!(cfg.synth.seed, 5);
    assert_eq!(cfg.synth.phones, 10);
    let back = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert!(ExperimentConfig::from_json(r#"{"criterion": {"kind": "ctc"}}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"post": "bogus"}"#).is_err());
    assert_eq!("KWFILLER".parse::<PostMode>().unwrap(), PostMode::Kwfiller);
}

fn small_experiment(topology: TopologyKind, kind: CriterionKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { synth: tiny(), topology, ..ExperimentConfig::default() };
    cfg.criterion.kind = kind;
    cfg.train.model.hidden = vec![16];
    cfg.train.ce_epochs = 1;
    cfg.train.epochs = 1;
    cfg
}

#[test]
fn small_pipeline_runs_every_mode() {
    let cfg = small_experiment(TopologyKind::Ctc, CriterionKind::Ctc);
    let corpus = gen_corpus(&cfg.synth).unwrap();
    let system = System::new(&corpus, cfg.topology).unwrap();
    let trained = train_system(&corpus, &system, &cfg).unwrap();
    assert_eq!(model_topology(&trained.model).unwrap(), TopologyKind::Ctc);
    assert_eq!(model_priors(&trained.model).unwrap(), trained.priors);
    for mode in PostMode::ALL {
        let r = evaluate(&corpus, &system, &trained.model, &cfg, mode).unwrap();
        assert!((0.0..=1.0).contains(&r.eer));
        assert!(r.rtf > 0.0 && r.faf >= 0.0);
        assert_eq!(r.positives + r.negatives, corpus.test.len() * corpus.keywords.len());
    }
}

#[test]
fn med_needs_ctc() {
    let cfg = small_experiment(TopologyKind::HmmPb, CriterionKind::Ce);
    let corpus = gen_corpus(&cfg.synth).unwrap();
    let system = System::new(&corpus, cfg.topology).unwrap();
    let trained = train_system(&corpus, &system, &cfg).unwrap();
    assert!(matches!(
        evaluate(&corpus, &system, &trained.model, &cfg, PostMode::Med),
        Err(crate::KwsError::Config(_))
    ));
}

#[test]
fn pipeline_is_thread_count_invariant() {
    let mut cfg = small_experiment(TopologyKind::HmmPb, CriterionKind::LfBmmi);
    cfg.threads = Some(1);
    let a = run_experiment(&cfg).unwrap();
    cfg.threads = Some(3);
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.deterministic_json().unwrap(), b.deterministic_json().unwrap());
}
