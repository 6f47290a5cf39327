//! Linear decision rules `h(x) = 1{f(x) >= threshold}` and probability
//! estimators built on the same scorer.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{self, clip_prob, logit, sigmoid};
use crate::scm::{Conditioning, Features, ScmConfig};

/// Halfspace score `w . x_c - a . x_s - c0`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScorer {
    pub w: Vec<f64>,
    pub a: Vec<f64>,
    pub c0: f64,
}

impl LinearScorer {
    pub fn new(w: Vec<f64>, a: Vec<f64>, c0: f64) -> Self {
        Self { w, a, c0 }
    }

    /// Scalar halfspace `w x_c - a x_s - c0`.
    pub fn halfspace(w: f64, a: f64, c0: f64) -> Self {
        Self { w: vec![w], a: vec![a], c0 }
    }

    /// The slope form `x_c >= a x_s + b`.
    pub fn slope(a: f64, b: f64) -> Self {
        Self::halfspace(1.0, a, b)
    }

    /// `(a, b)` of the slope form; `None` unless scalar with `w > 0`.
    pub fn to_slope(&self) -> Option<(f64, f64)> {
        match (self.w.as_slice(), self.a.as_slice()) {
            ([w], [a]) if *w > 0.0 => Some((a / w, self.c0 / w)),
            _ => None,
        }
    }

    pub fn d_c(&self) -> usize {
        self.w.len()
    }

    pub fn d_s(&self) -> usize {
        self.a.len()
    }

    pub fn check(&self, x: &Features) -> Result<()> {
        if x.causal.len() != self.w.len() {
            return Err(Error::DimensionMismatch { expected: self.w.len(), got: x.causal.len() });
        }
        if x.spurious.len() != self.a.len() {
            return Err(Error::DimensionMismatch { expected: self.a.len(), got: x.spurious.len() });
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn score_unchecked(&self, x: &Features) -> f64 {
        math::dot(&self.w, &x.causal) - math::dot(&self.a, &x.spurious) - self.c0
    }

    pub fn score(&self, x: &Features) -> Result<f64> {
        self.check(x)?;
        Ok(self.score_unchecked(x))
    }

    /// Combined weight vector `v = (w, -a)` over `(x_c, x_s)`.
    pub fn normal(&self) -> Vec<f64> {
        self.w.iter().copied().chain(self.a.iter().map(|a| -a)).collect()
    }

    pub fn is_causal(&self) -> bool {
        self.a.iter().all(|&a| a == 0.0)
    }

    pub fn mask_causal(&self) -> Self {
        Self { a: vec![0.0; self.a.len()], ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// `score >= theta`.
    Score(f64),
    /// `sigmoid(score / temperature) >= tau`.
    Probability { tau: f64, temperature: f64 },
}

impl Threshold {
    /// The equivalent score threshold, `temperature * logit(tau)` for
    /// probability thresholds.
    pub fn score_equivalent(self) -> f64 {
        match self {
            Threshold::Score(t) => t,
            Threshold::Probability { tau, temperature } => temperature * logit(tau),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRule {
    pub scorer: LinearScorer,
    pub threshold: Threshold,
}

impl DecisionRule {
    pub fn new(scorer: LinearScorer) -> Self {
        Self { scorer, threshold: Threshold::Score(0.0) }
    }

    pub fn with_threshold(scorer: LinearScorer, threshold: Threshold) -> Result<Self> {
        if let Threshold::Probability { tau, temperature } = threshold {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(Error::InvalidConfig("probability threshold must lie in (0, 1)".into()));
            }
            if !(temperature > 0.0) {
                return Err(Error::InvalidConfig("temperature must be positive".into()));
            }
        }
        Ok(Self { scorer, threshold })
    }

    /// `1{x_c >= a x_s + b}`.
    pub fn slope(a: f64, b: f64) -> Self {
        Self::new(LinearScorer::slope(a, b))
    }

    pub fn halfspace(w: f64, a: f64, c0: f64) -> Self {
        Self::new(LinearScorer::halfspace(w, a, c0))
    }

    /// `theta` such that `decide(x) = 1{score(x) >= theta}`.
    #[inline]
    pub fn effective_threshold(&self) -> f64 {
        self.threshold.score_equivalent()
    }

    #[inline]
    pub(crate) fn decide_unchecked(&self, x: &Features) -> bool {
        match self.threshold {
            Threshold::Score(t) => self.scorer.score_unchecked(x) >= t,
            Threshold::Probability { tau, temperature } => {
                sigmoid(self.scorer.score_unchecked(x) / temperature) >= tau
            }
        }
    }

    pub fn decide(&self, x: &Features) -> Result<bool> {
        self.scorer.check(x)?;
        Ok(self.decide_unchecked(x))
    }

    pub fn mask_causal(&self) -> Self {
        Self { scorer: self.scorer.mask_causal(), threshold: self.threshold }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorKind {
    /// `sigmoid(score / temperature)`.
    Logistic,
    /// The exact indicator `1{score >= 0}`; outputs `{0, 1}` before clipping.
    Indicator,
    /// Bayes-optimal probability of a known model; the scorer is unused.
    Bayes { cfg: Box<ScmConfig>, conditioning: Conditioning },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbEstimator {
    pub scorer: LinearScorer,
    pub temperature: f64,
    pub kind: EstimatorKind,
}

impl ProbEstimator {
    pub fn logistic(scorer: LinearScorer, temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        Ok(Self { scorer, temperature, kind: EstimatorKind::Logistic })
    }

    pub fn indicator(scorer: LinearScorer) -> Self {
        Self { scorer, temperature: 1.0, kind: EstimatorKind::Indicator }
    }

    pub fn bayes(cfg: &ScmConfig, conditioning: Conditioning) -> Self {
        let scorer = LinearScorer::new(vec![0.0; cfg.d_c()], vec![0.0; cfg.d_s], 0.0);
        Self { scorer, temperature: 1.0, kind: EstimatorKind::Bayes { cfg: Box::new(cfg.clone()), conditioning } }
    }

    pub fn is_indicator(&self) -> bool {
        self.kind == EstimatorKind::Indicator
    }

    /// Unclipped output.
    pub fn predict_raw(&self, x: &Features) -> Result<f64> {
        self.scorer.check(x)?;
        Ok(match &self.kind {
            EstimatorKind::Logistic => sigmoid(self.scorer.score_unchecked(x) / self.temperature),
            EstimatorKind::Indicator => f64::from(u8::from(self.scorer.score_unchecked(x) >= 0.0)),
            EstimatorKind::Bayes { cfg, conditioning } => cfg.bayes_probability(x, *conditioning)?,
        })
    }

    /// Output clamped to `[EPS_CLIP, 1 - EPS_CLIP]`.
    pub fn predict_prob(&self, x: &Features) -> Result<f64> {
        self.predict_raw(x).map(clip_prob)
    }

    /// Hard rule `1{f(x) >= tau}`. Only defined for scorer-backed kinds.
    pub fn to_rule(&self, tau: f64) -> Result<DecisionRule> {
        match self.kind {
            EstimatorKind::Logistic => DecisionRule::with_threshold(
                self.scorer.clone(),
                Threshold::Probability { tau, temperature: self.temperature },
            ),
            EstimatorKind::Indicator => Ok(DecisionRule::new(self.scorer.clone())),
            EstimatorKind::Bayes { .. } => Err(Error::Unsupported("Bayes estimator has no linear rule")),
        }
    }
}

pub fn decide(rule: &DecisionRule, x: &Features) -> Result<bool> {
    rule.decide(x)
}

pub fn mask_causal(rule: &DecisionRule) -> DecisionRule {
    rule.mask_causal()
}

pub fn predict_prob(est: &ProbEstimator, x: &Features) -> Result<f64> {
    est.predict_prob(x)
}
