use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::lattice::{enumerate_paths, viterbi};
use crate::math::{log_normalize, log_sum_exp, LOG_ZERO};
use crate::phonelm::{build_denominator_graph, train_ngram, NGramOptions};
use crate::topology::{build_topology, compile_sequence_graph_with_origin};
use crate::units::{LabelKind, Special, UnitInventory};

fn inventory(n: usize, specials: &[Special]) -> UnitInventory {
    let phones: Vec<String> = (0..n).map(|i| ((b'a' + i as u8) as char).to_string()).collect();
    UnitInventory::new(&phones, specials).unwrap()
}

fn labels(units: &[usize], inv: &UnitInventory) -> LabelSequence {
    LabelSequence::new(units.to_vec(), LabelKind::SubWord, inv).unwrap()
}

fn random_posteriors(rng: &mut ChaCha8Rng, frames: usize, units: usize) -> ScoreMatrix {
    let rows: Vec<Vec<f64>> = (0..frames)
        .map(|_| {
            let mut r: Vec<f64> = (0..units).map(|_| rng.gen_range(-2.0..2.0)).collect();
            log_normalize(&mut r);
            r
        })
        .collect();
    ScoreMatrix::from_rows(&rows, ScoreKind::LogPosterior).unwrap()
}

fn fd_check(y: &ScoreMatrix, grad: &ScoreMatrix, loss: impl Fn(&ScoreMatrix) -> f64) {
    let h = 1e-4;
    for t in 0..y.frames() {
        for u in 0..y.units() {
            let mut p = y.clone();
            p.add(t, u, h);
            let mut m = y.clone();
            m.add(t, u, -h);
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            let g = grad.get(t, u);
            let rel = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-3);
            assert!(rel < 1e-4, "t={t} u={u}: analytic {g} vs numeric {fd}");
        }
    }
}

fn assert_rows_sum_to_zero(grad: &ScoreMatrix) {
    for row in grad.rows() {
        assert!(row.iter().sum::<f64>().abs() < 1e-9, "{row:?}");
    }
}

/// A random LF instance: PB-style topology, bigram denominator, a reference
/// framing drawn from random scores, and its tolerance-1 numerator.
struct Instance {
    topo: Topology,
    den: Lattice,
    num: Lattice,
    labels: LabelSequence,
    alignment: Vec<usize>,
    y: ScoreMatrix,
}

fn instance(rng: &mut ChaCha8Rng, kind: TopologyKind, phones: usize) -> Instance {
    let inv = inventory(phones, &[]);
    let topo = build_topology(kind, &inv).unwrap();
    let corpus: Vec<LabelSequence> = (0..6)
        .map(|_| {
            let len = rng.gen_range(1..4);
            labels(&(0..len).map(|_| rng.gen_range(0..phones)).collect::<Vec<_>>(), &inv)
        })
        .collect();
    let lm = train_ngram(&corpus, &inv, NGramOptions { order: 2, max_ngrams: None }).unwrap();
    let den = build_denominator_graph(&lm, &topo).unwrap();
    loop {
        let frames = rng.gen_range(3..=6);
        let len = rng.gen_range(1..=2);
        let l = labels(&(0..len).map(|_| rng.gen_range(0..phones)).collect::<Vec<_>>(), &inv);
        let graph = compile_sequence_graph(&l, &topo).unwrap();
        let y = random_posteriors(rng, frames, topo.num_classes());
        let Ok(path) = viterbi(&graph, &y) else { continue };
        let num = build_numerator_graph(&l, &path.units, 1, &topo).unwrap();
        return Instance { topo, den, num, labels: l, alignment: path.units, y };
    }
}

#[test]
fn ce_examples() {
    let y = ScoreMatrix::from_rows(&[vec![0.0, LOG_ZERO]], ScoreKind::LogPosterior).unwrap();
    assert_eq!(ce_loss(&y, &[0]).unwrap().loss, 0.0);
    let half = 0.5f64.ln();
    let y = ScoreMatrix::from_rows(&[vec![half, half], vec![half, half]], ScoreKind::LogPosterior).unwrap();
    let r = ce_loss(&y, &[0, 1]).unwrap();
    assert!((r.loss - 2.0 * 2f64.ln()).abs() < 1e-15);
    assert_eq!(r.grad.row(0), &[-1.0, 0.0]);
    assert!(matches!(ce_loss(&y, &[0]), Err(KwsError::LengthMismatch { .. })));
}

#[test]
fn ce_matches_direct_lookup() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y = random_posteriors(&mut rng, 7, 5);
    let ali: Vec<usize> = (0..7).map(|_| rng.gen_range(0..5)).collect();
    let direct: f64 = ali.iter().enumerate().map(|(t, &u)| -y.row(t)[u]).sum();
    assert!((ce_loss(&y, &ali).unwrap().loss - direct).abs() < 1e-12);
}

#[test]
fn ctc_examples() {
    let inv = inventory(1, &[Special::Blank]);
    let topo = build_topology(TopologyKind::Ctc, &inv).unwrap();
    let a = labels(&[0], &inv);
    let y1 = ScoreMatrix::from_rows(&[vec![0.3f64.ln(), 0.7f64.ln()]], ScoreKind::LogPosterior).unwrap();
    assert!((ctc_loss(&y1, &a, &topo).unwrap().loss + 0.3f64.ln()).abs() < 1e-12);
    // single label, single frame: same as cross-entropy at that frame
    assert!((ctc_loss(&y1, &a, &topo).unwrap().loss - ce_loss(&y1, &[0]).unwrap().loss).abs() < 1e-12);
    // framings of [a] over 2 frames: a a, a _, _ a
    let half = 0.5f64.ln();
    let y2 = ScoreMatrix::from_rows(&[vec![half, half], vec![half, half]], ScoreKind::LogPosterior).unwrap();
    assert!((ctc_loss(&y2, &a, &topo).unwrap().loss + 0.75f64.ln()).abs() < 1e-12);
    assert!(matches!(
        ctc_loss(&y2, &labels(&[0, 0], &inv), &topo),
        Err(KwsError::Infeasible { min_frames: 3, frames: 2 })
    ));
}

#[test]
fn ctc_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inv = inventory(3, &[Special::Blank]);
    let topo = build_topology(TopologyKind::Ctc, &inv).unwrap();
    for _ in 0..20 {
        let frames = rng.gen_range(1..=6);
        let len = rng.gen_range(1..=3);
        let l = labels(&(0..len).map(|_| rng.gen_range(0..3)).collect::<Vec<_>>(), &inv);
        let y = random_posteriors(&mut rng, frames, topo.num_classes());
        let Ok(r) = ctc_loss(&y, &l, &topo) else { continue };
        for row in r.grad.rows() {
            assert!((row.iter().sum::<f64>() + 1.0).abs() < 1e-9);
        }
        fd_check(&y, &r.grad, |p| ctc_loss(p, &l, &topo).unwrap().loss);
    }
}

#[test]
fn numerator_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for kind in [TopologyKind::HmmPb, TopologyKind::HmmBp, TopologyKind::HmmBpb, TopologyKind::Hmm5] {
        let inst = instance(&mut rng, kind, 2);
        let frames = inst.alignment.len();
        let inv = inst.topo.inventory().clone();
        let l = labels(&[0, 1], &inv);
        let graph = compile_sequence_graph(&l, &inst.topo).unwrap();
        let ys = ScoreMatrix::zeros(frames + 2, inst.topo.num_classes(), ScoreKind::LogPosterior);
        let Ok(path) = viterbi(&graph, &ys) else { continue };
        let exact = build_numerator_graph(&l, &path.units, 0, &inst.topo).unwrap();
        let paths = enumerate_paths(&exact, frames + 2).unwrap();
        assert_eq!(paths.len(), 1, "{kind}");
        assert_eq!(paths[0].units, path.units);
        let loose = build_numerator_graph(&l, &path.units, frames + 2, &inst.topo).unwrap();
        let mut a: Vec<_> = enumerate_paths(&loose, frames + 2).unwrap().into_iter().map(|p| (p.units, p.log_weight)).collect();
        let mut b: Vec<_> = enumerate_paths(&graph, frames + 2).unwrap().into_iter().map(|p| (p.units, p.log_weight)).collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.0, y.0);
            assert!((x.1 - y.1).abs() < 1e-12);
        }
    }
}

/// First frame at or beyond each position index; skipped segments get empty spans.
fn boundaries(positions: &[usize], top: usize) -> Vec<usize> {
    (1..=top).map(|k| positions.iter().position(|&p| p >= k).unwrap_or(positions.len())).collect()
}

#[test]
fn numerator_matches_boundary_enumeration() {
    for kind in [TopologyKind::HmmPb, TopologyKind::HmmBp, TopologyKind::HmmBpb, TopologyKind::Hmm5] {
        let inv = inventory(2, &[]);
        let topo = build_topology(kind, &inv).unwrap();
        let l = labels(&[0, 1], &inv);
        let graph = compile_sequence_graph_with_origin(&l, &topo).unwrap();
        let frames = if kind == TopologyKind::Hmm5 { 7 } else { 4 };
        let all = enumerate_paths(&graph.lattice, frames).unwrap();
        let positions = |p: &crate::lattice::EnumeratedPath| -> Vec<usize> {
            p.arcs
                .iter()
                .map(|&a| {
                    let (pos, q) = graph.origin[graph.lattice.arcs()[a].dst].unwrap();
                    pos * 3 + q
                })
                .collect()
        };
        for tol in 0..=3 {
            for reference in &all {
                let rb = boundaries(&positions(reference), 6);
                let expected = all
                    .iter()
                    .filter(|p| {
                        let b = boundaries(&positions(p), 6);
                        b.iter().zip(&rb).all(|(x, y)| x.abs_diff(*y) <= tol)
                    })
                    .count();
                let num = build_numerator_graph(&l, &reference.units, tol, &topo).unwrap();
                assert_eq!(enumerate_paths(&num, frames).unwrap().len(), expected, "{kind} tol {tol}");
            }
        }
    }
}

#[test]
fn numerator_rejects_foreign_alignment() {
    let inv = inventory(2, &[]);
    let topo = build_topology(TopologyKind::HmmPb, &inv).unwrap();
    let l = labels(&[0, 1], &inv);
    let a_label = topo.template(0).unwrap().states[0].class;
    assert!(matches!(
        build_numerator_graph(&l, &[a_label, a_label, a_label], 1, &topo),
        Err(KwsError::AlignmentMismatch)
    ));
}

#[test]
fn mmi_trivial_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inst = instance(&mut rng, TopologyKind::HmmPb, 3);
    let cfg = CriterionConfig::new(CriterionKind::LfMmi);
    let same = lf_mmi(&inst.y, &inst.num, &inst.num, &cfg).unwrap();
    assert!(same.loss.abs() < 1e-12);
    assert!(same.grad.as_slice().iter().all(|g| g.abs() < 1e-12));
    let zero = lf_mmi(&inst.y, &inst.num, &inst.den, &CriterionConfig { kappa: 0.0, ..cfg }).unwrap();
    assert!(zero.grad.as_slice().iter().all(|&g| g == 0.0));
}

#[test]
fn mmi_family_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let kinds = [TopologyKind::HmmPb, TopologyKind::HmmBp, TopologyKind::HmmBpb, TopologyKind::Hmm5];
    for i in 0..24 {
        let kind = kinds[i % kinds.len()];
        let phones = if kind == TopologyKind::Hmm5 { 2 } else { 3 };
        let inst = instance(&mut rng, kind, phones);
        assert!(inst.topo.num_classes() <= 7);
        let acc = AccuracyMap::new(&inst.topo, AccuracyLevel::Phone);
        let cfg = CriterionConfig { kappa: rng.gen_range(0.5..1.5), ..CriterionConfig::new(CriterionKind::LfMmi) };
        let (y, num, den, ali) = (&inst.y, &inst.num, &inst.den, &inst.alignment);
        let r = lf_mmi(y, num, den, &cfg).unwrap();
        assert_rows_sum_to_zero(&r.grad);
        fd_check(y, &r.grad, |p| lf_mmi(p, num, den, &cfg).unwrap().loss);
        let r = lf_bmmi(y, num, den, ali, &acc, &cfg).unwrap();
        assert_rows_sum_to_zero(&r.grad);
        fd_check(y, &r.grad, |p| lf_bmmi(p, num, den, ali, &acc, &cfg).unwrap().loss);
        let r = lf_smbr(y, den, ali, &acc, &cfg).unwrap();
        assert_rows_sum_to_zero(&r.grad);
        fd_check(y, &r.grad, |p| lf_smbr(p, den, ali, &acc, &cfg).unwrap().loss);
    }
}

#[test]
fn bmmi_reduces_to_mmi() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inst = instance(&mut rng, TopologyKind::HmmBpb, 3);
    let acc = AccuracyMap::new(&inst.topo, AccuracyLevel::Phone);
    let cfg = CriterionConfig { boost: 0.0, ..CriterionConfig::new(CriterionKind::LfBmmi) };
    let m = lf_mmi(&inst.y, &inst.num, &inst.den, &cfg).unwrap();
    let b = lf_bmmi(&inst.y, &inst.num, &inst.den, &inst.alignment, &acc, &cfg).unwrap();
    assert!((m.loss - b.loss).abs() < 1e-12);
    for (x, y) in m.grad.as_slice().iter().zip(b.grad.as_slice()) {
        assert!((x - y).abs() < 1e-12);
    }

    // every competitor of a one-phone reference is the same phone
    let inv = inventory(2, &[]);
    let topo = build_topology(TopologyKind::Hmm5, &inv).unwrap();
    let acc = AccuracyMap::new(&topo, AccuracyLevel::Phone);
    let l = labels(&[0], &inv);
    let den = compile_sequence_graph(&l, &topo).unwrap();
    let y = random_posteriors(&mut rng, 5, topo.num_classes());
    let ali = viterbi(&den, &y).unwrap().units;
    let mut num = Lattice::new();
    let mut prev = num.start();
    for &u in &ali {
        let s = num.add_state();
        num.add_arc(prev, s, Some(u), 0.0);
        prev = s;
    }
    num.set_final(prev, 0.0);
    let cfg = CriterionConfig::new(CriterionKind::LfBmmi);
    let m = lf_mmi(&y, &num, &den, &cfg).unwrap();
    let b = lf_bmmi(&y, &num, &den, &ali, &acc, &cfg).unwrap();
    assert!(m.loss.abs() > 1e-3);
    assert!((m.loss - b.loss).abs() < 1e-12);
    assert_eq!(m.grad, b.grad);
}

#[test]
fn boosting_is_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let inst = instance(&mut rng, TopologyKind::HmmPb, 3);
        let acc = AccuracyMap::new(&inst.topo, AccuracyLevel::Phone);
        let objective: Vec<f64> = [0.0, 0.05, 0.1, 0.2]
            .iter()
            .map(|&b| {
                let cfg = CriterionConfig { boost: b, ..CriterionConfig::new(CriterionKind::LfBmmi) };
                -lf_bmmi(&inst.y, &inst.num, &inst.den, &inst.alignment, &acc, &cfg).unwrap().loss
            })
            .collect();
        assert!(objective.windows(2).all(|w| w[1] < w[0]), "{objective:?}");
    }
}

#[test]
fn smbr_matches_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for kind in [TopologyKind::HmmPb, TopologyKind::Hmm5, TopologyKind::HmmBpb] {
        for level in [AccuracyLevel::Phone, AccuracyLevel::State] {
            let inst = instance(&mut rng, kind, 2);
            let acc = AccuracyMap::new(&inst.topo, level);
            let cfg = CriterionConfig { kappa: 0.8, ..CriterionConfig::new(CriterionKind::LfSmbr) };
            let r = lf_smbr(&inst.y, &inst.den, &inst.alignment, &acc, &cfg).unwrap();
            let scaled = inst.y.scaled(cfg.kappa);
            let paths = enumerate_paths(&inst.den, inst.y.frames()).unwrap();
            let logp: Vec<f64> = paths.iter().map(|p| p.score(&scaled)).collect();
            let z = log_sum_exp(&logp);
            let expected: f64 = paths
                .iter()
                .zip(&logp)
                .map(|(p, lp)| (lp - z).exp() * state_accuracy(&p.units, &inst.alignment, &acc).unwrap() as f64)
                .sum();
            assert!((-r.loss - expected).abs() < 1e-9, "{kind}: {} vs {expected}", -r.loss);
        }
    }
}

#[test]
fn smbr_at_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inst = instance(&mut rng, TopologyKind::HmmPb, 3);
    let acc = AccuracyMap::new(&inst.topo, AccuracyLevel::State);
    let mut y = ScoreMatrix::filled(inst.alignment.len(), inst.topo.num_classes(), LOG_ZERO, ScoreKind::LogPosterior);
    for (t, &u) in inst.alignment.iter().enumerate() {
        y.set(t, u, 0.0);
    }
    let r = lf_smbr(&y, &inst.den, &inst.alignment, &acc, &CriterionConfig::new(CriterionKind::LfSmbr)).unwrap();
    assert_eq!(-r.loss, inst.alignment.len() as f64);
    assert!(r.grad.as_slice().iter().all(|g| g.abs() < 1e-12));
}

#[test]
fn smbr_two_equally_accurate_paths() {
    let mut den = Lattice::new();
    let (a, b, c) = (den.add_state(), den.add_state(), den.add_state());
    den.add_arc(0, a, Some(0), 0.0);
    den.add_arc(a, c, Some(1), 0.0);
    den.add_arc(0, b, Some(1), 0.0);
    den.add_arc(b, c, Some(0), 0.0);
    den.set_final(c, 0.0);
    let y = ScoreMatrix::zeros(2, 2, ScoreKind::LogPosterior);
    let r = lf_smbr(&y, &den, &[0, 0], &AccuracyMap::identity(2), &CriterionConfig::default()).unwrap();
    assert!((r.loss + 1.0).abs() < 1e-12);
}

#[test]
fn accuracy_counts() {
    let acc = AccuracyMap::identity(4);
    assert_eq!(state_accuracy(&[1, 2, 3, 0, 1], &[1, 2, 3, 0, 1], &acc).unwrap(), 5);
    assert_eq!(state_accuracy(&[0, 0, 1], &[2, 3, 2], &acc).unwrap(), 0);
    assert_eq!(state_accuracy(&[0, 1, 2, 3], &[0, 1, 0, 1], &acc).unwrap(), 2);
    assert!(matches!(state_accuracy(&[0], &[0, 1], &acc), Err(KwsError::LengthMismatch { .. })));

    // phone level: a/0 and a/2 agree, the per-phone blank only matches itself
    let inv = inventory(2, &[]);
    let hmm = build_topology(TopologyKind::Hmm5, &inv).unwrap();
    let phone = AccuracyMap::new(&hmm, AccuracyLevel::Phone);
    assert!(phone.matches(0, 2) && !phone.matches(0, 3));
    assert!(!AccuracyMap::new(&hmm, AccuracyLevel::State).matches(0, 2));
    let pb = build_topology(TopologyKind::HmmPb, &inv).unwrap();
    let t = pb.template(0).unwrap();
    let (label, blank) = (t.states[0].class, t.states[1].class);
    let phone = AccuracyMap::new(&pb, AccuracyLevel::Phone);
    assert!(!phone.matches(label, blank) && phone.matches(blank, blank));
}

#[test]
fn nu_weight_cases() {
    let nu = NUConfig::new(2.5, 2.5, [1, 2]).unwrap();
    assert_eq!(nu_weight(&[1], &[2], &nu).unwrap(), vec![2.5]);
    assert_eq!(nu_weight(&[0], &[3], &nu).unwrap(), vec![1.0]);
    let nu = NUConfig::new(3.0, 2.0, [1]).unwrap();
    assert_eq!(nu_weight(&[1, 1, 0, 0], &[1, 0, 1, 0], &nu).unwrap(), vec![2.0, 3.0, 2.0, 1.0]);
    assert!(NUConfig::new(0.5, 1.0, [1]).is_err());
    assert!(matches!(nu_weight(&[1], &[], &nu), Err(KwsError::LengthMismatch { .. })));
}

#[test]
fn unit_nu_boost_keeps_mmi_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let inst = instance(&mut rng, TopologyKind::HmmPb, 3);
    let cfg = CriterionConfig { cew: 0.0, ..CriterionConfig::new(CriterionKind::LfMmi) };
    let hyp = viterbi(&inst.den, &inst.y).unwrap().units;
    let targets = Targets {
        alignment: &inst.alignment,
        labels: &labels(&[0], inst.topo.inventory()),
        numerator: Some(&inst.num),
        hypothesis: Some(&hyp),
    };
    let plain = Criterion::new(cfg.clone(), &inst.topo, Some(&inst.den)).unwrap();
    let nu = NUConfig::for_keyword_phones(1.0, 1.0, &[0, 1], &inst.topo).unwrap();
    let boosted = plain.clone().with_nu(nu);
    assert_eq!(plain.evaluate(&inst.y, &targets).unwrap(), boosted.evaluate(&inst.y, &targets).unwrap());
    let strong = plain.clone().with_nu(NUConfig::for_keyword_phones(2.5, 2.5, &[0, 1, 2], &inst.topo).unwrap());
    let g = strong.evaluate(&inst.y, &targets).unwrap().grad;
    let base = plain.evaluate(&inst.y, &targets).unwrap().grad;
    for t in 0..g.frames() {
        for u in 0..g.units() {
            assert!((g.get(t, u) - 2.5 * base.get(t, u)).abs() < 1e-12);
        }
    }
}

#[test]
fn interpolation_endpoints_are_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inst = instance(&mut rng, TopologyKind::HmmPb, 3);
    let l = labels(&[0], inst.topo.inventory());
    let targets = Targets { alignment: &inst.alignment, labels: &l, numerator: Some(&inst.num), hypothesis: None };
    let eval = |cew: f64| {
        let cfg = CriterionConfig { cew, ..CriterionConfig::new(CriterionKind::LfMmi) };
        Criterion::new(cfg, &inst.topo, Some(&inst.den)).unwrap().evaluate(&inst.y, &targets).unwrap()
    };
    let ce = ce_loss(&inst.y, &inst.alignment).unwrap();
    let mmi = lf_mmi(&inst.y, &inst.num, &inst.den, &CriterionConfig::default()).unwrap();
    assert_eq!(eval(1.0), ce);
    assert_eq!(eval(0.0), mmi);
    let mid = eval(0.7);
    assert!((mid.loss - (0.7 * ce.loss + 0.3 * mmi.loss)).abs() < 1e-12);
    assert!(interpolate(&ce, &mmi, 1.5).is_err());
}

#[test]
fn config_parsing_and_validation() {
    assert_eq!("lf-bmmi".parse::<CriterionKind>().unwrap(), CriterionKind::LfBmmi);
    assert_eq!("LF_sMBR".parse::<CriterionKind>().unwrap(), CriterionKind::LfSmbr);
    assert!("mpe".parse::<CriterionKind>().is_err());
    let cfg: CriterionConfig = serde_json::from_str(r#"{"kind":"lf-mmi","cew":0.5}"#).unwrap();
    assert_eq!((cfg.kind, cfg.cew, cfg.kappa, cfg.tolerance, cfg.subsample), (CriterionKind::LfMmi, 0.5, 1.0, 2, 3));
    assert!(CriterionConfig { cew: 1.2, ..cfg.clone() }.validate().is_err());
    assert!(CriterionConfig { kappa: -1.0, ..cfg }.validate().is_err());
}

mod props {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn mmi_rows_sum_to_zero(seed in 0u64..10_000, kappa in 0.1f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = instance(&mut rng, TopologyKind::HmmBp, 3);
            let cfg = CriterionConfig { kappa, ..CriterionConfig::new(CriterionKind::LfMmi) };
            let r = lf_mmi(&inst.y, &inst.num, &inst.den, &cfg).unwrap();
            for row in r.grad.rows() {
                prop_assert!(row.iter().sum::<f64>().abs() < 1e-9);
            }
        }

        #[test]
        fn numerator_total_grows_with_tolerance(seed in 0u64..10_000, tol in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inst = instance(&mut rng, TopologyKind::HmmPb, 3);
            let total = |g: &Lattice| forward_backward(g, &inst.y).unwrap().log_total;
            let tight = build_numerator_graph(&inst.labels, &inst.alignment, tol, &inst.topo).unwrap();
            let wider = build_numerator_graph(&inst.labels, &inst.alignment, tol + 1, &inst.topo).unwrap();
            let full = compile_sequence_graph(&inst.labels, &inst.topo).unwrap();
            prop_assert!(total(&tight) <= total(&wider) + 1e-12);
            prop_assert!(total(&wider) <= total(&full) + 1e-12);
        }
    }
}
