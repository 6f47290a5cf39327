//! Agent best responses to a linear rule under a weighted `L_p` cost.
//!
//! For a linear rule with normal `v = (w, -a)` the cheapest way to reach
//! the threshold moves along a fixed direction `d` with `v . d = 1`, so the
//! target is `x + gap * d` and the cost is `gap * unit_cost` where
//! `unit_cost = 1 / ||v||_*` in the dual of the cost norm.

use alloc::vec::Vec;

use crate::classify::DecisionRule;
use crate::error::{Error, Result};
use crate::scm::{self, Features, Population, ScmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostNorm {
    /// `sum_j mu_j |dx_j|`.
    L1,
    /// `sqrt(sum_j mu_j dx_j^2)`.
    L2,
    /// `max_j mu_j |dx_j|`.
    LInf,
}

/// Weighted cost over the concatenated coordinates `(x_c, x_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    pub norm: CostNorm,
    pub mu: Vec<f64>,
}

impl CostSpec {
    pub fn new(norm: CostNorm, mu: Vec<f64>) -> Result<Self> {
        if mu.is_empty() || mu.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidConfig("cost weights must be positive and finite".into()));
        }
        Ok(Self { norm, mu })
    }

    pub fn uniform(norm: CostNorm, dim: usize) -> Self {
        Self { norm, mu: alloc::vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// `c(x, x')`.
    pub fn cost(&self, x: &Features, x_new: &Features) -> Result<f64> {
        if x.dim() != self.dim() || x_new.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: x.dim().max(x_new.dim()) });
        }
        let terms = x.iter().zip(x_new.iter()).zip(&self.mu).map(|((a, b), m)| (m, b - a));
        Ok(match self.norm {
            CostNorm::L1 => terms.map(|(m, d)| m * libm::fabs(d)).sum(),
            CostNorm::L2 => libm::sqrt(terms.map(|(m, d)| m * d * d).sum()),
            CostNorm::LInf => terms.map(|(m, d)| m * libm::fabs(d)).fold(0.0, f64::max),
        })
    }

    /// Direction `d` with `v . d = 1` minimizing the cost of a unit score
    /// increase, and that minimal cost. `None` when `v = 0`.
    pub fn steepest(&self, v: &[f64]) -> Result<Option<(Vec<f64>, f64)>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: v.len() });
        }
        if v.iter().all(|&x| x == 0.0) {
            return Ok(None);
        }
        let mut d = alloc::vec![0.0; v.len()];
        let unit = match self.norm {
            CostNorm::L2 => {
                let s: f64 = v.iter().zip(&self.mu).map(|(v, m)| v * v / m).sum();
                for ((dj, v), m) in d.iter_mut().zip(v).zip(&self.mu) {
                    *dj = v / m / s;
                }
                1.0 / libm::sqrt(s)
            }
            CostNorm::L1 => {
                // strict comparison keeps the lowest index on ties
                let mut best = 0;
                for j in 1..v.len() {
                    if libm::fabs(v[j]) / self.mu[j] > libm::fabs(v[best]) / self.mu[best] {
                        best = j;
                    }
                }
                d[best] = 1.0 / v[best];
                self.mu[best] / libm::fabs(v[best])
            }
            CostNorm::LInf => {
                let s: f64 = v.iter().zip(&self.mu).map(|(v, m)| libm::fabs(*v) / m).sum();
                for ((dj, v), m) in d.iter_mut().zip(v).zip(&self.mu) {
                    *dj = signum0(*v) / m / s;
                }
                1.0 / s
            }
        };
        Ok(Some((d, unit)))
    }
}

fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Scalar-feature version of the nudged move in [`ResponsePlan`], with the
/// same floating-point operations so both routes agree bit for bit.
#[inline]
pub(crate) fn nudged_target_2d(xc: f64, xs: f64, gap: f64, d: &[f64], theta: f64, accept: impl Fn(f64, f64) -> bool) -> (f64, f64) {
    let mut nudge = 1e-12 * (1.0 + libm::fabs(theta));
    loop {
        let (mut c, mut s) = (xc, xs);
        if d[0] != 0.0 {
            c += (gap + nudge) * d[0];
        }
        if d[1] != 0.0 {
            s += (gap + nudge) * d[1];
        }
        if accept(c, s) || nudge > 1e-10 * (1.0 + libm::fabs(theta) + gap) {
            return (c, s);
        }
        nudge *= 4.0;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestResponse {
    pub x_new: Features,
    pub moved: bool,
    pub cost: f64,
}

/// A rule and cost preprocessed for repeated best responses.
#[derive(Debug, Clone)]
pub struct ResponsePlan {
    rule: DecisionRule,
    theta: f64,
    /// `None` for a zero normal: no finite move changes the decision.
    step: Option<(Vec<f64>, f64)>,
}

impl ResponsePlan {
    pub fn new(rule: &DecisionRule, cost: &CostSpec) -> Result<Self> {
        let v = rule.scorer.normal();
        let step = cost.steepest(&v)?;
        Ok(Self { rule: rule.clone(), theta: rule.effective_threshold(), step })
    }

    pub fn rule(&self) -> &DecisionRule {
        &self.rule
    }

    /// Cost of one unit of score, `None` for a zero normal.
    pub fn unit_cost(&self) -> Option<f64> {
        self.step.as_ref().map(|s| s.1)
    }

    /// Minimal cost to reach `decide = 1` and the canonical target.
    pub fn min_cost(&self, x: &Features) -> Result<(f64, Features)> {
        self.rule.scorer.check(x)?;
        if self.rule.decide_unchecked(x) {
            return Ok((0.0, x.clone()));
        }
        let gap = self.theta - self.rule.scorer.score_unchecked(x);
        let (d, unit) = self.step.as_ref().ok_or(Error::ZeroWeight)?;
        let gap = gap.max(0.0);
        Ok((gap * unit, self.target(x, gap, d)))
    }

    /// `x + gap * d`, nudged past the threshold so that rounding never
    /// leaves a mover rejected.
    fn target(&self, x: &Features, gap: f64, d: &[f64]) -> Features {
        let mut nudge = 1e-12 * (1.0 + libm::fabs(self.theta));
        loop {
            let mut out = x.clone();
            for (j, dj) in d.iter().enumerate() {
                if *dj != 0.0 {
                    *out.get_mut(j) += (gap + nudge) * dj;
                }
            }
            if self.rule.decide_unchecked(&out) || nudge > 1e-10 * (1.0 + libm::fabs(self.theta) + gap) {
                return out;
            }
            nudge *= 4.0;
        }
    }

    pub fn respond(&self, x: &Features, delta: f64) -> Result<BestResponse> {
        self.rule.scorer.check(x)?;
        Ok(self.respond_unchecked(x, delta))
    }

    pub(crate) fn respond_unchecked(&self, x: &Features, delta: f64) -> BestResponse {
        let stay = || BestResponse { x_new: x.clone(), moved: false, cost: 0.0 };
        if self.rule.decide_unchecked(x) {
            return stay();
        }
        let Some((d, unit)) = &self.step else { return stay() };
        let gap = (self.theta - self.rule.scorer.score_unchecked(x)).max(0.0);
        let cost = gap * unit;
        if cost <= delta {
            BestResponse { x_new: self.target(x, gap, d), moved: true, cost }
        } else {
            stay()
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig("budget must be non-negative".into()))
    }
}

/// Minimal cost to reach `decide = 1` and the minimizing boundary point.
pub fn min_cost_to_positive(rule: &DecisionRule, x: &Features, cost: &CostSpec) -> Result<(f64, Features)> {
    ResponsePlan::new(rule, cost)?.min_cost(x)
}

/// Utility-maximizing response with budget `delta`; an agent indifferent
/// between moving and staying moves.
pub fn best_response(x: &Features, rule: &DecisionRule, cost: &CostSpec, delta: f64) -> Result<BestResponse> {
    check_delta(delta)?;
    ResponsePlan::new(rule, cost)?.respond(x, delta)
}

/// One myopic adaptation step. Movers get a counterfactual outcome with
/// their latent held fixed; stayers keep theirs.
pub fn adapt_population(pop: &Population, rule: &DecisionRule, cost: &CostSpec, delta: f64, cfg: &ScmConfig) -> Result<Population> {
    check_delta(delta)?;
    let plan = ResponsePlan::new(rule, cost)?;
    adapt_with_plan(pop, &plan, delta, cfg)
}

pub fn adapt_with_plan(pop: &Population, plan: &ResponsePlan, delta: f64, cfg: &ScmConfig) -> Result<Population> {
    check_delta(delta)?;
    let generation = pop.generation + 1;
    let mut agents = Vec::with_capacity(pop.len());
    for a in pop.iter() {
        plan.rule.scorer.check(&a.x)?;
        let br = plan.respond_unchecked(&a.x, delta);
        let mut next = a.clone();
        next.moved = br.moved;
        next.cost = br.cost;
        if br.moved {
            if br.x_new.causal != a.x.causal {
                let noise = scm::post_noise(cfg, pop.seed, a.id, generation);
                next.y = scm::counterfactual_outcome(a, &br.x_new, cfg, noise)?;
            }
            next.x = br.x_new;
        }
        agents.push(next);
    }
    Ok(Population { agents, seed: pop.seed, generation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{sample_population, Agent};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn l1() -> CostSpec {
        CostSpec::uniform(CostNorm::L1, 2)
    }

    /// Brute force over a 1-D grid with step `h` along coordinate 0.
    fn grid_min_cost_1d(x: f64, h: f64) -> f64 {
        let rule = DecisionRule::halfspace(1.0, 0.0, 0.0);
        let c = l1();
        let base = Features::scalar(x, 0.0);
        let mut best = f64::INFINITY;
        for i in 0..=40_000 {
            let xp = Features::scalar(-2.0 + i as f64 * h, 0.0);
            if rule.decide(&xp).unwrap() {
                best = best.min(c.cost(&base, &xp).unwrap());
            }
        }
        best
    }

    #[test]
    fn min_cost_examples() {
        let rule = DecisionRule::halfspace(1.0, 0.0, 0.0);
        let (c, xs) = min_cost_to_positive(&rule, &Features::scalar(-0.3, 0.0), &l1()).unwrap();
        assert_relative_eq!(c, 0.3, epsilon = 1e-15);
        assert!(xs.causal[0].abs() < 1e-9 && xs.causal[0] >= 0.0);
        assert!((c - grid_min_cost_1d(-0.3, 1e-4)).abs() <= 1e-4);

        let x = Features::scalar(0.4, 1.0);
        assert_eq!(min_cost_to_positive(&rule, &x, &l1()).unwrap(), (0.0, x));

        let cost = CostSpec::new(CostNorm::L2, alloc::vec![1.0, 0.001]).unwrap();
        let (c, xs) = min_cost_to_positive(&rule, &Features::scalar(-1.0, 0.0), &cost).unwrap();
        assert_relative_eq!(c, 1.0, epsilon = 1e-12);
        assert_eq!(xs.spurious[0], 0.0);
    }

    #[test]
    fn zero_weight_is_an_error() {
        let rule = DecisionRule::halfspace(0.0, 0.0, 1.0);
        let r = min_cost_to_positive(&rule, &Features::scalar(0.0, 0.0), &l1());
        assert_eq!(r, Err(Error::ZeroWeight));
        let br = best_response(&Features::scalar(0.0, 0.0), &rule, &l1(), 10.0).unwrap();
        assert!(!br.moved);
    }

    #[test]
    fn best_response_examples() {
        let rule = DecisionRule::halfspace(1.0, 0.0, 0.0);
        let x = Features::scalar(0.2, 0.0);
        assert_eq!(best_response(&x, &rule, &l1(), 1.0).unwrap(), BestResponse { x_new: x, moved: false, cost: 0.0 });
        let br = best_response(&Features::scalar(-0.5, 0.0), &rule, &l1(), 0.5).unwrap();
        assert!(br.moved);
        assert_eq!(br.cost, 0.5);
        assert!(br.x_new.causal[0].abs() < 1e-9);
        let br = best_response(&Features::scalar(-0.51, 0.0), &rule, &l1(), 0.5).unwrap();
        assert!(!br.moved && !rule.decide(&br.x_new).unwrap());
    }

    #[test]
    fn l1_moves_cheapest_coordinate() {
        // |a| > w: moving x_s is cheaper
        let rule = DecisionRule::halfspace(1.0, -2.0, 0.0);
        let (c, xs) = min_cost_to_positive(&rule, &Features::scalar(-1.0, 0.0), &l1()).unwrap();
        assert_relative_eq!(c, 0.5, epsilon = 1e-15);
        assert_eq!(xs.causal[0], -1.0);
        // tie between coordinates resolves to the lowest index
        let rule = DecisionRule::halfspace(1.0, -1.0, 0.0);
        let (_, xs) = min_cost_to_positive(&rule, &Features::scalar(-1.0, 0.0), &l1()).unwrap();
        assert_eq!(xs.spurious[0], 0.0);
    }

    #[test]
    fn linf_moves_all_coordinates_equally_weighted() {
        let rule = DecisionRule::halfspace(1.0, -1.0, 0.0);
        let cost = CostSpec::new(CostNorm::LInf, alloc::vec![1.0, 2.0]).unwrap();
        let x = Features::scalar(-1.5, 0.0);
        let (c, xs) = min_cost_to_positive(&rule, &x, &cost).unwrap();
        // dx_c = t, dx_s = t / 2, t + t / 2 = 1.5
        assert_relative_eq!(c, 1.0, epsilon = 1e-12);
        assert_relative_eq!(xs.causal[0], -0.5, epsilon = 1e-9);
        assert_relative_eq!(xs.spurious[0], 0.5, epsilon = 1e-9);
        assert_relative_eq!(cost.cost(&x, &xs).unwrap(), c, epsilon = 1e-9);
    }

    #[test]
    fn uniform_example_adaptation() {
        let cfg = ScmConfig::uniform_example();
        let pop = sample_population(&cfg, 100_000, 2).unwrap();
        let rule = DecisionRule::halfspace(1.0, 0.0, 0.0);
        let post = adapt_population(&pop, &rule, &l1(), 0.5, &cfg).unwrap();
        assert_eq!(post.generation, 1);
        for (a, b) in pop.iter().zip(post.iter()) {
            let x = a.x.causal[0];
            assert_eq!(b.moved, (-0.5..0.0).contains(&x), "x_c = {x}");
        }
        let rate = post.iter().filter(|a| rule.decide(&a.x).unwrap()).count() as f64 / 1e5;
        assert!((rate - 0.75).abs() <= 0.01, "rate {rate}");
    }

    #[test]
    fn zero_budget_only_bumps_generation() {
        let cfg = ScmConfig::default();
        let pop = sample_population(&cfg, 2_000, 8).unwrap();
        let post = adapt_population(&pop, &DecisionRule::halfspace(1.0, 0.5, 0.2), &l1(), 0.0, &cfg).unwrap();
        assert_eq!(post.generation, 1);
        assert_eq!(post.agents, pop.agents);
    }

    #[test]
    fn causal_rule_never_touches_spurious() {
        let cfg = ScmConfig::default();
        let pop = sample_population(&cfg, 2_000, 8).unwrap();
        let rule = DecisionRule::halfspace(1.0, 0.7, 0.1).mask_causal();
        let cost = CostSpec::uniform(CostNorm::L2, 2);
        for delta in [0.1, 1.0, 5.0] {
            let post = adapt_population(&pop, &rule, &cost, delta, &cfg).unwrap();
            for (a, b) in pop.iter().zip(post.iter()) {
                assert_eq!(a.x.spurious, b.x.spurious);
            }
        }
    }

    #[test]
    fn stayers_keep_outcome_movers_on_boundary() {
        let cfg = ScmConfig { outcome_mode: crate::scm::OutcomeMode::Stochastic, ..ScmConfig::default() };
        let pop = sample_population(&cfg, 5_000, 4).unwrap();
        let rule = DecisionRule::halfspace(1.0, 0.4, 0.3);
        let post = adapt_population(&pop, &rule, &CostSpec::uniform(CostNorm::L2, 2), 0.6, &cfg).unwrap();
        for (a, b) in pop.iter().zip(post.iter()) {
            if b.moved {
                assert!(b.cost <= 0.6);
                assert!((rule.scorer.score(&b.x).unwrap()).abs() <= 1e-9);
                assert!(rule.decide(&b.x).unwrap());
            } else {
                assert_eq!(a.y, b.y);
                assert_eq!(b.cost, 0.0);
            }
        }
    }

    fn arb_norm() -> impl Strategy<Value = CostNorm> {
        prop_oneof![Just(CostNorm::L1), Just(CostNorm::L2), Just(CostNorm::LInf)]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        /// Against a dense brute-force maximizer of `delta h(x') - c(x, x')`
        /// along the boundary-reaching ray family and a local grid.
        #[test]
        fn matches_brute_force(norm in arb_norm(), w in -2.0f64..2.0, a in -2.0f64..2.0, c0 in -1.0f64..1.0,
                               mu0 in 0.5f64..2.0, mu1 in 0.5f64..2.0, xc in -1.0f64..1.0, xs in -1.0f64..1.0,
                               delta in 0.0f64..1.5) {
            prop_assume!(w.abs() + a.abs() > 0.1);
            let rule = DecisionRule::halfspace(w, a, c0);
            let cost = CostSpec::new(norm, alloc::vec![mu0, mu1]).unwrap();
            let x = Features::scalar(xc, xs);
            let br = best_response(&x, &rule, &cost, delta).unwrap();
            let h0 = f64::from(u8::from(rule.decide(&x).unwrap()));
            let closed = delta * f64::from(u8::from(rule.decide(&br.x_new).unwrap())) - br.cost;
            // brute force on a polar grid: the cheapest boundary point in
            // each direction, minimized over 3,600 directions
            let mut oracle = delta * h0;
            let score = rule.scorer.score(&x).unwrap();
            for k in 0..3_600 {
                let th = k as f64 * core::f64::consts::TAU / 3_600.0;
                let (dx, dy) = (th.cos(), th.sin());
                let rate = w * dx - a * dy;
                if rate <= 0.0 || h0 == 1.0 { continue; }
                let r = -score / rate;
                let xp = Features::scalar(xc + r * dx, xs + r * dy);
                let c = cost.cost(&x, &xp).unwrap();
                if c <= delta { oracle = oracle.max(delta - c); }
            }
            prop_assert!(oracle <= closed + 1e-9, "oracle {} closed {}", oracle, closed);
            prop_assert!(closed - oracle <= 1e-2 * (1.0 + delta), "oracle {} closed {}", oracle, closed);
            // individual rationality
            prop_assert!(closed >= delta * h0 - 1e-12);
        }

        #[test]
        fn positive_set_monotone_in_budget(norm in arb_norm(), w in -2.0f64..2.0, a in -2.0f64..2.0, c0 in -1.0f64..1.0,
                                            xc in -2.0f64..2.0, xs in -2.0f64..2.0, d1 in 0.0f64..2.0, extra in 0.0f64..2.0) {
            let rule = DecisionRule::halfspace(w, a, c0);
            let cost = CostSpec::uniform(norm, 2);
            let x = Features::scalar(xc, xs);
            let lo = best_response(&x, &rule, &cost, d1).unwrap();
            let hi = best_response(&x, &rule, &cost, d1 + extra).unwrap();
            let pos = |b: &BestResponse| rule.decide(&b.x_new).unwrap();
            prop_assert!(!pos(&lo) || pos(&hi));
        }

        #[test]
        fn budget_feasible_and_accepted(norm in arb_norm(), w in -2.0f64..2.0, a in -2.0f64..2.0, c0 in -1.0f64..1.0,
                                        xc in -2.0f64..2.0, xs in -2.0f64..2.0, delta in 0.0f64..2.0) {
            let rule = DecisionRule::halfspace(w, a, c0);
            let cost = CostSpec::uniform(norm, 2);
            let agent = Agent::new(0, Features::scalar(xc, xs), 0, false);
            let br = best_response(&agent.x, &rule, &cost, delta).unwrap();
            if br.moved {
                prop_assert!(br.cost <= delta);
                prop_assert!(rule.decide(&br.x_new).unwrap());
                prop_assert!(rule.scorer.score(&br.x_new).unwrap().abs() <= 1e-9);
                prop_assert!((cost.cost(&agent.x, &br.x_new).unwrap() - br.cost).abs() <= 1e-9);
            } else {
                prop_assert_eq!(br.cost, 0.0);
            }
        }
    }
}
