//! Ambiguous region of the causal feature space for a linear score with
//! binary latent, and the causal rule that is immune to adaptation.
//!
//! Everything is expressed in score units `s = w_c . x_c`. The boundary of
//! latent state `u` is `s = -b - w_u u`; points between the two boundaries
//! have an outcome that `u` can flip.

use alloc::vec;
use alloc::vec::Vec;

use crate::classify::{DecisionRule, LinearScorer};
use crate::error::{Error, Result};
use crate::math;
use crate::respond::{CostNorm, CostSpec};
use crate::scm::{OutcomeMode, ScmConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct AmbiguityBounds {
    /// `t_low`: below it every latent state gives a negative score.
    pub lower_offset: f64,
    /// `t_upp`: at or above it every latent state gives a non-negative score.
    pub upper_offset: f64,
    /// Unclipped boundary offset `-b - w_u u` for each latent state.
    pub per_u_offsets: Vec<(u8, f64)>,
    w_c: Vec<f64>,
    w_u: f64,
    b: f64,
    d_s: usize,
    window: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxGap {
    pub value: f64,
    pub norm: CostNorm,
}

impl AmbiguityBounds {
    pub fn w_c(&self) -> &[f64] {
        &self.w_c
    }

    /// `true` when the interval `[t_low, t_upp)` is empty.
    pub fn is_degenerate(&self) -> bool {
        self.lower_offset >= self.upper_offset
    }

    fn score(&self, x_c: &[f64], u: u8) -> f64 {
        let gated_out = self.window.is_some_and(|w| !(x_c[0] > -w && x_c[0] < 0.0));
        let u_eff = if gated_out { 0.0 } else { f64::from(u) };
        math::dot(&self.w_c, x_c) + self.w_u * u_eff + self.b
    }
}

pub fn ambiguity_bounds(cfg: &ScmConfig) -> Result<AmbiguityBounds> {
    cfg.validate()?;
    if cfg.outcome_mode != OutcomeMode::Deterministic {
        return Err(Error::Contract("ambiguity bounds need deterministic outcomes"));
    }
    if cfg.w_c.iter().all(|&w| w == 0.0) {
        return Err(Error::DegenerateCausalWeight);
    }
    let per_u_offsets: Vec<(u8, f64)> = (0..=1u8).map(|u| (u, -cfg.b - cfg.w_u * f64::from(u))).collect();
    let o_lo = per_u_offsets.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let o_hi = per_u_offsets.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    // ambiguous set [lo, hi) in score units, clipped to the gate
    let (lo, hi) = match cfg.ambiguity_window {
        None => (o_lo, o_hi),
        Some(w) => {
            let edge = -w * cfg.w_c[0];
            (o_lo.max(edge.min(0.0)), o_hi.min(edge.max(0.0)))
        }
    };
    let nonempty = lo < hi;
    let upper = if nonempty { hi.max(-cfg.b) } else { -cfg.b };
    let lower = if nonempty { lo } else { upper };
    Ok(AmbiguityBounds {
        lower_offset: lower,
        upper_offset: upper,
        per_u_offsets,
        w_c: cfg.w_c.clone(),
        w_u: cfg.w_u,
        b: cfg.b,
        d_s: cfg.d_s,
        window: cfg.ambiguity_window,
    })
}

/// Largest minimal cost from an ambiguous point to the upper boundary.
pub fn max_gap(bounds: &AmbiguityBounds, cost: &CostSpec) -> Result<MaxGap> {
    let mut v = bounds.w_c.clone();
    v.extend(core::iter::repeat(0.0).take(bounds.d_s));
    let (_, unit) = cost.steepest(&v)?.ok_or(Error::DegenerateCausalWeight)?;
    let span = (bounds.upper_offset - bounds.lower_offset).max(0.0);
    Ok(MaxGap { value: span * unit, norm: cost.norm })
}

/// `1{w_c . x_c >= t_upp}`, with zero weight on every spurious feature.
pub fn optimal_causal_classifier(bounds: &AmbiguityBounds) -> DecisionRule {
    DecisionRule::new(LinearScorer::new(bounds.w_c.clone(), vec![0.0; bounds.d_s], bounds.upper_offset))
}

/// Whether the latent state can flip the outcome at `x_c`.
pub fn is_ambiguous(x_c: &[f64], bounds: &AmbiguityBounds) -> Result<bool> {
    if x_c.len() != bounds.w_c.len() {
        return Err(Error::DimensionMismatch { expected: bounds.w_c.len(), got: x_c.len() });
    }
    let pos0 = bounds.score(x_c, 0) >= 0.0;
    let pos1 = bounds.score(x_c, 1) >= 0.0;
    Ok(pos0 != pos1)
}

/// Which of the three regions of the causal space `x_c` lies in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Negative,
    Ambiguous,
    Positive,
}

pub fn region(x_c: &[f64], bounds: &AmbiguityBounds) -> Result<Region> {
    if is_ambiguous(x_c, bounds)? {
        Ok(Region::Ambiguous)
    } else if bounds.score(x_c, 0) >= 0.0 {
        Ok(Region::Positive)
    } else {
        Ok(Region::Negative)
    }
}
