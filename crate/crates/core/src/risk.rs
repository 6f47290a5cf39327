//! 0-1 and cross-entropy risk, and the split of post-adaptation CE into
//! an incomplete-information term, a transfer term and the entropy of the
//! outcome.
//!
//! Per agent, with `g` the outcome probability at the agent's post point,
//! `f*` the best in-family estimator and `f` the deployed one:
//!
//! ```text
//! CE(g, f) = KL(g || f*) + [g ln(f*/f) + (1-g) ln((1-f*)/(1-f))] + H(g)
//! ```
//!
//! The realized-label CE differs from `CE(g, f)` by zero-mean noise whose
//! standard error is reported alongside the terms.

use alloc::vec;
use alloc::vec::Vec;

use crate::classify::{DecisionRule, EstimatorKind, ProbEstimator};
use crate::error::{Error, Result};
use crate::math::{self, bernoulli_kl, binary_entropy, cross_entropy, MeanEstimate};
use crate::scm::{Conditioning, Features, Population, ScmConfig};
use crate::search;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn fp_rate(&self) -> f64 {
        self.fp as f64 / self.total() as f64
    }

    pub fn positive_rate(&self) -> f64 {
        (self.tp + self.fp) as f64 / self.total() as f64
    }

    pub fn error_rate(&self) -> f64 {
        (self.fp + self.fn_) as f64 / self.total() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CeDecomposition {
    pub incomplete_information: f64,
    pub transfer: f64,
    pub entropy: f64,
    /// Mean realized-label CE of the deployed estimator.
    pub total: f64,
    pub mc_std_error: f64,
}

impl CeDecomposition {
    pub fn sum(&self) -> f64 {
        self.incomplete_information + self.transfer + self.entropy
    }
}

fn non_empty(pop: &Population) -> Result<()> {
    if pop.is_empty() {
        Err(Error::EmptyPopulation)
    } else {
        Ok(())
    }
}

pub fn zero_one_loss(pop: &Population, rule: &DecisionRule) -> Result<f64> {
    Ok(confusion(pop, rule)?.error_rate())
}

pub fn confusion(pop: &Population, rule: &DecisionRule) -> Result<ConfusionCounts> {
    non_empty(pop)?;
    let mut c = ConfusionCounts::default();
    for a in pop.iter() {
        match (rule.decide(&a.x)?, a.y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn ce_loss(pop: &Population, est: &ProbEstimator) -> Result<f64> {
    non_empty(pop)?;
    let terms = pop
        .iter()
        .map(|a| Ok(cross_entropy(f64::from(u8::from(a.y)), est.predict_prob(&a.x)?)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(math::pairwise_sum(&terms) / pop.len() as f64)
}

/// Which distribution a Bayes probability refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Distribution {
    PreAdaptation,
    PostAdaptation,
}

/// Exact `P(Y = 1 | x)` under the pre-adaptation model.
pub fn oracle_bayes_prob(x: &Features, cfg: &ScmConfig, dist: Distribution, conditioning: Conditioning) -> Result<f64> {
    match dist {
        Distribution::PreAdaptation => cfg.bayes_probability(x, conditioning),
        Distribution::PostAdaptation => Err(Error::Unsupported("no closed-form Bayes probability after adaptation")),
    }
}

/// `E[Y | x_c, u]` at every agent's current point.
pub fn outcome_means(pop: &Population, cfg: &ScmConfig) -> Result<Vec<f64>> {
    pop.iter().map(|a| crate::scm::outcome_mean(&a.x.causal, a.u, cfg)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Family {
    Logistic { causal: bool },
    Indicator,
    Bayes(Conditioning),
}

fn family(est: &ProbEstimator) -> Family {
    match &est.kind {
        EstimatorKind::Logistic => Family::Logistic { causal: est.scorer.is_causal() },
        EstimatorKind::Indicator => Family::Indicator,
        EstimatorKind::Bayes { conditioning, .. } => Family::Bayes(*conditioning),
    }
}

/// Whether `f_star` is a valid in-family reference for `f_hat`. A causal
/// logistic `f_hat` lies inside the unmasked family, not the other way.
fn same_family(f_hat: &ProbEstimator, f_star: &ProbEstimator) -> bool {
    match (family(f_hat), family(f_star)) {
        (Family::Logistic { causal: ch }, Family::Logistic { causal: cs }) => ch || !cs,
        (a, b) => a == b,
    }
}

pub fn ce_decomposition(pop_post: &Population, f_hat: &ProbEstimator, f_star: &ProbEstimator, cfg: &ScmConfig) -> Result<CeDecomposition> {
    non_empty(pop_post)?;
    if !same_family(f_hat, f_star) {
        return Err(Error::FamilyMismatch);
    }
    let n = pop_post.len();
    let (mut kl, mut tr, mut ent, mut tot, mut noise) =
        (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let mut gs = Vec::with_capacity(n);
    for a in pop_post.iter() {
        let g = cfg.outcome_mean_unchecked(&a.x.causal, a.u);
        let fh = f_hat.predict_prob(&a.x)?;
        let fs = f_star.predict_prob(&a.x)?;
        let y = f64::from(u8::from(a.y));
        kl.push(bernoulli_kl(g, fs));
        tr.push(transfer_term(g, fs, fh));
        ent.push(binary_entropy(g));
        let ce_y = cross_entropy(y, fh);
        tot.push(ce_y);
        noise.push(ce_y - cross_entropy(g, fh));
        gs.push(g);
    }
    let mean = |v: &[f64]| math::pairwise_sum(v) / n as f64;
    let se = MeanEstimate::of(&noise).std_error;
    let fit_gap = match f_star.kind {
        EstimatorKind::Logistic => {
            let feats: Vec<&Features> = pop_post.iter().map(|a| &a.x).collect();
            search::soft_ce_suboptimality(f_star, &feats, &gs)?
        }
        _ => 0.0,
    };
    Ok(CeDecomposition {
        incomplete_information: mean(&kl),
        transfer: mean(&tr),
        entropy: mean(&ent),
        total: mean(&tot),
        mc_std_error: libm::sqrt(se * se + fit_gap * fit_gap),
    })
}

/// `g ln(f*/f) + (1-g) ln((1-f*)/(1-f))`.
#[inline]
fn transfer_term(g: f64, f_star: f64, f_hat: f64) -> f64 {
    cross_entropy(g, f_hat) - cross_entropy(g, f_star)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmiConditioning {
    Xc,
    XcXs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmiEstimate {
    pub value: f64,
    pub std_error: f64,
    /// Number of cells actually used.
    pub bins: usize,
    /// Set when the requested binning left a cell with fewer than
    /// [`MIN_BIN_COUNT`] samples and was coarsened.
    pub widened: bool,
}

pub const MIN_BIN_COUNT: usize = 30;
const CMI_FOLDS: usize = 20;

/// Contiguous equal-mass groups of `idx` sorted by `key`.
fn equal_mass(idx: &mut [usize], key: impl Fn(usize) -> f64, k: usize) -> Vec<Vec<usize>> {
    idx.sort_by(|&i, &j| key(i).total_cmp(&key(j)).then(i.cmp(&j)));
    let n = idx.len();
    (0..k).map(|b| idx[b * n / k..(b + 1) * n / k].to_vec()).collect()
}

fn cmi_cells(pop: &Population, cfg: &ScmConfig, cond: CmiConditioning, per_axis: usize) -> Vec<Vec<usize>> {
    let s = |i: usize| math::dot(&cfg.w_c, &pop.agents[i].x.causal);
    let mut all: Vec<usize> = (0..pop.len()).collect();
    match cond {
        CmiConditioning::Xc => equal_mass(&mut all, s, per_axis * per_axis),
        CmiConditioning::XcXs => {
            let xs = |i: usize| pop.agents[i].x.spurious[0];
            equal_mass(&mut all, s, per_axis)
                .into_iter()
                .flat_map(|mut cell| equal_mass(&mut cell, xs, per_axis))
                .collect()
        }
    }
}

/// Plug-in `I(Y; U | cell)` using outcome probabilities as soft counts.
fn cell_mi(cell: &[usize], g: &[f64], u: &[u8]) -> f64 {
    let n = cell.len() as f64;
    let (mut n1, mut g1, mut g0, mut gall) = (0.0, 0.0, 0.0, 0.0);
    for &i in cell {
        gall += g[i];
        if u[i] == 1 {
            n1 += 1.0;
            g1 += g[i];
        } else {
            g0 += g[i];
        }
    }
    let n0 = n - n1;
    let mut h_cond = 0.0;
    if n1 > 0.0 {
        h_cond += n1 / n * binary_entropy(g1 / n1);
    }
    if n0 > 0.0 {
        h_cond += n0 / n * binary_entropy(g0 / n0);
    }
    (binary_entropy(gall / n) - h_cond).max(0.0)
}

/// Binned estimate of `I(Y; U | X_c)` or `I(Y; U | X_c, X_s)`.
///
/// `X_c` is binned through the causal score `w_c . x_c`; 64 equal-mass
/// cells for `X_c` and an 8 x 8 grid for `(X_c, X_s)`.
pub fn conditional_mutual_information(pop: &Population, cond: CmiConditioning, cfg: &ScmConfig) -> Result<CmiEstimate> {
    non_empty(pop)?;
    if cond == CmiConditioning::XcXs && cfg.d_s != 1 {
        return Err(Error::Unsupported("joint binning needs a single spurious feature"));
    }
    if pop.len() < MIN_BIN_COUNT {
        return Err(Error::TooFewSamples { need: MIN_BIN_COUNT, got: pop.len() });
    }
    let g = outcome_means(pop, cfg)?;
    let u: Vec<u8> = pop.iter().map(|a| a.u).collect();
    let mut per_axis = 8;
    let mut widened = false;
    let cells = loop {
        let cells = cmi_cells(pop, cfg, cond, per_axis);
        if per_axis == 1 || cells.iter().all(|c| c.len() >= MIN_BIN_COUNT) {
            break cells;
        }
        per_axis /= 2;
        widened = true;
    };
    let n = pop.len() as f64;
    let value: f64 = cells.iter().map(|c| c.len() as f64 / n * cell_mi(c, &g, &u)).sum();
    // fold-wise spread with cells fixed, folds by agent id
    let mut folds = [0.0; CMI_FOLDS];
    let mut fold_n = [0usize; CMI_FOLDS];
    for cell in &cells {
        let mut parts: Vec<Vec<usize>> = vec![Vec::new(); CMI_FOLDS];
        for &i in cell {
            parts[i % CMI_FOLDS].push(i);
        }
        for (f, part) in parts.iter().enumerate() {
            if !part.is_empty() {
                folds[f] += part.len() as f64 * cell_mi(part, &g, &u);
                fold_n[f] += part.len();
            }
        }
    }
    let est: Vec<f64> = folds.iter().zip(&fold_n).filter(|(_, &m)| m > 0).map(|(v, &m)| v / m as f64).collect();
    let std_error = MeanEstimate::of(&est).std_error;
    Ok(CmiEstimate { value, std_error, bins: cells.len(), widened })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferPartition {
    pub adapt_term: f64,
    pub stay_term: f64,
    /// Mass of agents that moved.
    pub p_a: f64,
    /// Mean outcome probability among movers.
    pub g_bar: f64,
    pub total: f64,
}

/// Transfer error split into movers, who sit at estimated probability
/// `tau`, and stayers.
pub fn transfer_error_partition(pop_post: &Population, f_hat: &ProbEstimator, f_star: &ProbEstimator, tau: f64, cfg: &ScmConfig) -> Result<TransferPartition> {
    non_empty(pop_post)?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidConfig("tau must lie in (0, 1)".into()));
    }
    let (mut mov_ll, mut mov_g, mut n_a) = (Vec::new(), Vec::new(), 0usize);
    let mut stay = Vec::new();
    for a in pop_post.iter() {
        let g = cfg.outcome_mean_unchecked(&a.x.causal, a.u);
        let fs = f_star.predict_prob(&a.x)?;
        if a.moved {
            n_a += 1;
            mov_ll.push(-cross_entropy(g, fs));
            mov_g.push(g);
        } else {
            stay.push(transfer_term(g, fs, f_hat.predict_prob(&a.x)?));
        }
    }
    let n = pop_post.len();
    let p_a = n_a as f64 / n as f64;
    let (adapt_term, g_bar) = if n_a == 0 {
        (0.0, 0.0)
    } else {
        let g_bar = math::pairwise_sum(&mov_g) / n_a as f64;
        let ll = math::pairwise_sum(&mov_ll) / n_a as f64;
        (ll + cross_entropy(g_bar, tau), g_bar)
    };
    let stay_term = if stay.is_empty() { 0.0 } else { math::pairwise_sum(&stay) / stay.len() as f64 };
    Ok(TransferPartition { adapt_term, stay_term, p_a, g_bar, total: p_a * adapt_term + (1.0 - p_a) * stay_term })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::LinearScorer;
    use crate::respond::{adapt_population, CostNorm, CostSpec};
    use crate::scm::{sample_population, OutcomeMode};
    use approx::assert_relative_eq;

    #[test]
    fn zero_one_examples() {
        let cfg = ScmConfig::uniform_example();
        let pop = sample_population(&cfg, 100_000, 17).unwrap();
        let l = zero_one_loss(&pop, &DecisionRule::halfspace(1.0, 0.0, 0.0)).unwrap();
        assert!((l - 0.125).abs() <= 0.005, "loss {l}");
        let mut all_pos = pop.clone();
        all_pos.agents.iter_mut().for_each(|a| a.y = true);
        // constant-1 rule: 0 x_c >= -1
        assert_eq!(zero_one_loss(&all_pos, &DecisionRule::halfspace(0.0, 0.0, -1.0)).unwrap(), 0.0);
    }

    #[test]
    fn confusion_sums_to_n() {
        let cfg = ScmConfig::default();
        let pop = sample_population(&cfg, 3_000, 2).unwrap();
        let c = confusion(&pop, &DecisionRule::halfspace(1.0, 0.2, 0.1)).unwrap();
        assert_eq!(c.total(), 3_000);
        let perfect = confusion(&pop, &DecisionRule::halfspace(1.0, 0.0, 0.0)).unwrap();
        let errs = pop.iter().filter(|a| (a.x.causal[0] >= 0.0) != a.y).count();
        assert_eq!(perfect.fp + perfect.fn_, errs);
    }

    #[test]
    fn ce_examples() {
        let cfg = ScmConfig::uniform_example();
        let pop = sample_population(&cfg, 1_000, 1).unwrap();
        let half = ProbEstimator::logistic(LinearScorer::halfspace(0.0, 0.0, 0.0), 1.0).unwrap();
        assert_relative_eq!(ce_loss(&pop, &half).unwrap(), core::f64::consts::LN_2, epsilon = 1e-12);

        let no_u = ScmConfig { w_u: 0.0, ..cfg };
        let pop = sample_population(&no_u, 5_000, 1).unwrap();
        let ind = ProbEstimator::indicator(LinearScorer::halfspace(1.0, 0.0, 0.0));
        assert!(ce_loss(&pop, &ind).unwrap() <= 1e-11);
    }

    #[test]
    fn ce_of_true_probabilities_is_entropy_in_expectation() {
        let cfg = ScmConfig { w_u: 0.0, outcome_mode: OutcomeMode::Stochastic, ..ScmConfig::default() };
        let pop = sample_population(&cfg, 50_000, 3).unwrap();
        let est = ProbEstimator::logistic(LinearScorer::halfspace(1.0, 0.0, 0.0), 1.0).unwrap();
        let d = ce_decomposition(&pop, &est, &est, &cfg).unwrap();
        assert!(d.incomplete_information.abs() < 1e-12);
        assert!(d.transfer.abs() < 1e-12);
        assert!((d.total - d.entropy).abs() <= 3.0 * d.mc_std_error);
    }

    #[test]
    fn deterministic_entropy_is_exactly_zero() {
        let cfg = ScmConfig::default();
        let pop = sample_population(&cfg, 2_000, 3).unwrap();
        let est = ProbEstimator::logistic(LinearScorer::halfspace(2.0, 0.5, 0.1), 1.0).unwrap();
        let d = ce_decomposition(&pop, &est, &est, &cfg).unwrap();
        assert_eq!(d.entropy, 0.0);
    }

    #[test]
    fn family_mismatch_rejected() {
        let cfg = ScmConfig::default();
        let pop = sample_population(&cfg, 200, 3).unwrap();
        let full = ProbEstimator::logistic(LinearScorer::halfspace(1.0, 0.5, 0.0), 1.0).unwrap();
        let causal = ProbEstimator::logistic(LinearScorer::halfspace(1.0, 0.0, 0.0), 1.0).unwrap();
        assert_eq!(ce_decomposition(&pop, &full, &causal, &cfg), Err(Error::FamilyMismatch));
        assert!(ce_decomposition(&pop, &causal, &full, &cfg).is_ok());
        let ind = ProbEstimator::indicator(LinearScorer::halfspace(1.0, 0.0, 0.0));
        assert_eq!(ce_decomposition(&pop, &ind, &causal, &cfg), Err(Error::FamilyMismatch));
    }

    #[test]
    fn causal_bayes_has_zero_transfer() {
        let cfg = ScmConfig { outcome_mode: OutcomeMode::Stochastic, w_u: 1.5, ..ScmConfig::default() };
        let pop = sample_population(&cfg, 100_000, 5).unwrap();
        let bayes = ProbEstimator::bayes(&cfg, Conditioning::Causal);
        let rule = DecisionRule::halfspace(1.0, 0.0, 0.0);
        let post = adapt_population(&pop, &rule, &CostSpec::uniform(CostNorm::L2, 2), 0.7, &cfg).unwrap();
        let d = ce_decomposition(&post, &bayes, &bayes, &cfg).unwrap();
        assert_eq!(d.transfer, 0.0);
        assert!((d.total - d.sum()).abs() <= 3.0 * d.mc_std_error);

        // the incomplete-information term is the conditional MI
        let cmi = conditional_mutual_information(&pop, CmiConditioning::Xc, &cfg).unwrap();
        let d_pre = ce_decomposition(&pop, &bayes, &bayes, &cfg).unwrap();
        let tol = 3.0 * (cmi.std_error.powi(2) + d_pre.mc_std_error.powi(2)).sqrt() + 2e-3;
        assert!((cmi.value - d_pre.incomplete_information).abs() <= tol, "{cmi:?} vs {d_pre:?}");
    }

    #[test]
    fn cmi_examples() {
        let cfg = ScmConfig { outcome_mode: OutcomeMode::Stochastic, w_u: 0.0, ..ScmConfig::default() };
        let pop = sample_population(&cfg, 100_000, 9).unwrap();
        let c = conditional_mutual_information(&pop, CmiConditioning::Xc, &cfg).unwrap();
        assert!(c.value <= 1e-3, "{c:?}");
        assert_eq!(c.bins, 64);
        let cfg = ScmConfig { w_u: 4.0, b: -2.0, sigmoid_temperature: 0.2, ..cfg };
        let pop = sample_population(&cfg, 100_000, 9).unwrap();
        for cond in [CmiConditioning::Xc, CmiConditioning::XcXs] {
            let c = conditional_mutual_information(&pop, cond, &cfg).unwrap();
            assert!(c.value > 0.05 && c.value <= core::f64::consts::LN_2 + 1e-3, "{c:?}");
        }
        let small = sample_population(&cfg, 1_000, 9).unwrap();
        let c = conditional_mutual_information(&small, CmiConditioning::Xc, &cfg).unwrap();
        assert!(c.widened && c.bins < 64);
    }

    #[test]
    fn partition_examples() {
        let cfg = ScmConfig { outcome_mode: OutcomeMode::Stochastic, ..ScmConfig::default() };
        let pop = sample_population(&cfg, 20_000, 4).unwrap();
        let est = ProbEstimator::logistic(LinearScorer::halfspace(1.2, 0.4, 0.3), 1.0).unwrap();
        let star = ProbEstimator::logistic(LinearScorer::halfspace(1.0, 0.2, 0.1), 1.0).unwrap();
        let cost = CostSpec::uniform(CostNorm::L2, 2);
        let tau = 0.9;
        let rule = est.to_rule(tau).unwrap();
        let still = adapt_population(&pop, &rule, &cost, 0.0, &cfg).unwrap();
        let p = transfer_error_partition(&still, &est, &star, tau, &cfg).unwrap();
        assert_eq!(p.p_a, 0.0);
        assert_eq!(p.total, p.stay_term);

        let post = adapt_population(&pop, &rule, &cost, 1.0, &cfg).unwrap();
        // same movers, evaluated at a more extreme tau: -(1 - g_bar) ln(1 - tau) blows up
        let mut last = f64::NEG_INFINITY;
        for t in [0.9, 0.99, 0.999] {
            let p = transfer_error_partition(&post, &est, &star, t, &cfg).unwrap();
            assert!(p.g_bar < 1.0 && p.adapt_term > last, "{p:?}");
            last = p.adapt_term;
        }
        // movers sit on the tau boundary, so the split reproduces the full transfer term
        let p = transfer_error_partition(&post, &est, &star, tau, &cfg).unwrap();
        let d = ce_decomposition(&post, &est, &star, &cfg).unwrap();
        assert_relative_eq!(p.total, d.transfer, epsilon = 1e-6);

        let cheap = CostSpec::new(CostNorm::L2, vec![1.0, 0.001]).unwrap();
        let p_cheap = transfer_error_partition(&adapt_population(&pop, &rule, &cheap, 0.3, &cfg).unwrap(), &est, &star, tau, &cfg).unwrap();
        let p_dear = transfer_error_partition(&adapt_population(&pop, &rule, &cost, 0.3, &cfg).unwrap(), &est, &star, tau, &cfg).unwrap();
        assert!(p_cheap.p_a > p_dear.p_a);
    }
}
