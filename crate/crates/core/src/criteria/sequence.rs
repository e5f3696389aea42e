use crate::criteria::accuracy::AccuracyMap;
use crate::criteria::{check_alignment, CriterionConfig, LossGrad};
use crate::error::{KwsError, Result};
use crate::lattice::{fb_tables, forward_backward, Lattice, ScoreKind, ScoreMatrix};
use crate::math::LOG_ZERO;

fn mmi_core(num: &Lattice, den: &Lattice, num_scores: &ScoreMatrix, den_scores: &ScoreMatrix, kappa: f64) -> Result<LossGrad> {
    let fn_ = forward_backward(num, num_scores)?;
    let fd = forward_backward(den, den_scores)?;
    let values = fd.occupancy.as_slice().iter().zip(fn_.occupancy.as_slice()).map(|(d, n)| kappa * (d - n)).collect();
    Ok(LossGrad {
        loss: -(fn_.log_total - fd.log_total),
        grad: ScoreMatrix::from_vec(num_scores.frames(), num_scores.units(), values, ScoreKind::Gradient)?,
    })
}

/// Lattice-free MMI: `-(log Z_num - log Z_den)` over κ-scaled scores.
pub fn lf_mmi(log_posteriors: &ScoreMatrix, numerator: &Lattice, denominator: &Lattice, cfg: &CriterionConfig) -> Result<LossGrad> {
    let scaled = log_posteriors.scaled(cfg.kappa);
    mmi_core(numerator, denominator, &scaled, &scaled, cfg.kappa)
}

/// Boosted MMI. Denominator frames that disagree with the reference get
/// `+b`, so paths with more errors weigh more; error-free paths are untouched.
pub fn lf_bmmi(
    log_posteriors: &ScoreMatrix,
    numerator: &Lattice,
    denominator: &Lattice,
    reference: &[usize],
    acc: &AccuracyMap,
    cfg: &CriterionConfig,
) -> Result<LossGrad> {
    check_alignment(log_posteriors, reference)?;
    if acc.num_classes() != log_posteriors.units() {
        return Err(KwsError::DimensionMismatch { expected: log_posteriors.units(), got: acc.num_classes() });
    }
    let scaled = log_posteriors.scaled(cfg.kappa);
    let mut boosted = scaled.clone();
    if cfg.boost != 0.0 {
        for (t, &r) in reference.iter().enumerate() {
            for (u, v) in boosted.row_mut(t).iter_mut().enumerate() {
                if !acc.matches(u, r) {
                    *v += cfg.boost;
                }
            }
        }
    }
    mmi_core(numerator, denominator, &scaled, &boosted, cfg.kappa)
}

/// Lattice-free sMBR: loss is minus the expected frame accuracy under the
/// κ-scaled denominator path posterior.
pub fn lf_smbr(
    log_posteriors: &ScoreMatrix,
    denominator: &Lattice,
    reference: &[usize],
    acc: &AccuracyMap,
    cfg: &CriterionConfig,
) -> Result<LossGrad> {
    check_alignment(log_posteriors, reference)?;
    if acc.num_classes() != log_posteriors.units() {
        return Err(KwsError::DimensionMismatch { expected: log_posteriors.units(), got: acc.num_classes() });
    }
    let scores = log_posteriors.scaled(cfg.kappa);
    let tab = fb_tables(denominator, &scores)?;
    if tab.log_total == LOG_ZERO {
        return Err(KwsError::NoPath);
    }
    let frames = scores.frames();
    let n = denominator.num_states();
    let arcs = denominator.arcs();
    let a_of = |t: usize, u: usize| if acc.matches(u, reference[t]) { 1.0 } else { 0.0 };
    // expected accuracy of the prefix ending in each state, and of the suffix leaving it
    let mut fwd = vec![0.0; (frames + 1) * n];
    let mut bwd = vec![0.0; (frames + 1) * n];
    for t in 0..frames {
        let row = scores.row(t);
        for a in arcs {
            let u = a.unit.unwrap();
            let into = tab.alpha(t + 1, a.dst);
            if into == LOG_ZERO {
                continue;
            }
            let w = (tab.alpha(t, a.src) + a.weight + row[u] - into).exp();
            if w > 0.0 {
                fwd[(t + 1) * n + a.dst] += w * (fwd[t * n + a.src] + a_of(t, u));
            }
        }
    }
    for t in (0..frames).rev() {
        let row = scores.row(t);
        for a in arcs {
            let u = a.unit.unwrap();
            let from = tab.beta(t, a.src);
            if from == LOG_ZERO {
                continue;
            }
            let w = (a.weight + row[u] + tab.beta(t + 1, a.dst) - from).exp();
            if w > 0.0 {
                bwd[t * n + a.src] += w * (a_of(t, u) + bwd[(t + 1) * n + a.dst]);
            }
        }
    }
    let mut expected = 0.0;
    for s in denominator.final_states() {
        let p = (tab.alpha(frames, s) + denominator.final_weight(s) - tab.log_total).exp();
        expected += p * fwd[frames * n + s];
    }
    let mut grad = ScoreMatrix::zeros(frames, scores.units(), ScoreKind::Gradient);
    for t in 0..frames {
        let row = scores.row(t);
        for a in arcs {
            let u = a.unit.unwrap();
            let lp = tab.alpha(t, a.src) + a.weight + row[u] + tab.beta(t + 1, a.dst) - tab.log_total;
            if lp == LOG_ZERO {
                continue;
            }
            let c = fwd[t * n + a.src] + a_of(t, u) + bwd[(t + 1) * n + a.dst];
            grad.add(t, u, -cfg.kappa * lp.exp() * (c - expected));
        }
    }
    Ok(LossGrad { loss: -expected, grad })
}
