//! Long-term utilities of agents and the institution, the change in those
//! utilities when the institution switches rules, and the ledger of how
//! each agent's outcome status changes between two rules.

use crate::classify::DecisionRule;
use crate::error::{Error, Result};
use crate::respond::{CostSpec, ResponsePlan};
use crate::scm::{self, Agent, Population, ScmConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityParams {
    /// Budget, and the agent's gain from a positive prediction.
    pub delta: f64,
    /// The agent's penalty for a false positive.
    pub delta2: f64,
    /// The institution's penalty for a true negative.
    pub epsilon: f64,
}

impl UtilityParams {
    pub fn new(delta: f64, delta2: f64, epsilon: f64) -> Result<Self> {
        if !(delta > 0.0) || !(delta2 >= 0.0) || !(epsilon >= 0.0) {
            return Err(Error::InvalidConfig("need delta > 0, delta2 >= 0, epsilon >= 0".into()));
        }
        Ok(Self { delta, delta2, epsilon })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Agent,
    Institution,
}

/// Whether agents respond to the rule or are assumed to stay put.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adaptation {
    Static,
    Strategic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Tp,
    Fp,
    Tn,
    Fn,
}

impl Status {
    pub const ALL: [Status; 4] = [Status::Tp, Status::Fp, Status::Tn, Status::Fn];

    pub fn of(h: bool, y: bool) -> Self {
        match (h, y) {
            (true, true) => Status::Tp,
            (true, false) => Status::Fp,
            (false, false) => Status::Tn,
            (false, true) => Status::Fn,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn positive(self) -> bool {
        matches!(self, Status::Tp | Status::Fp)
    }
}

/// What happens to one agent under a rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentOutcome {
    pub h: bool,
    pub y: bool,
    pub cost: f64,
}

impl AgentOutcome {
    pub fn status(&self) -> Status {
        Status::of(self.h, self.y)
    }

    pub fn agent_utility(&self, p: &UtilityParams) -> f64 {
        let h = f64::from(u8::from(self.h));
        let miss = f64::from(u8::from(!self.y));
        p.delta * h - self.cost - p.delta2 * h * miss
    }

    pub fn institution_utility(&self, p: &UtilityParams) -> f64 {
        -f64::from(u8::from(self.h != self.y)) - p.epsilon * f64::from(u8::from(!self.h && !self.y))
    }

    pub fn utility(&self, role: Role, p: &UtilityParams) -> f64 {
        match role {
            Role::Agent => self.agent_utility(p),
            Role::Institution => self.institution_utility(p),
        }
    }
}

/// One agent's response and realized outcome. `seed` is the population
/// seed, used for fresh outcome noise after moving.
pub fn agent_outcome(plan: &ResponsePlan, agent: &Agent, cfg: &ScmConfig, delta: f64, seed: u64, mode: Adaptation) -> Result<AgentOutcome> {
    let rule = plan.rule();
    if mode == Adaptation::Static {
        return Ok(AgentOutcome { h: rule.decide(&agent.x)?, y: agent.y, cost: 0.0 });
    }
    let br = plan.respond(&agent.x, delta)?;
    let mut y = agent.y;
    if br.moved && br.x_new.causal != agent.x.causal {
        let noise = scm::post_noise(cfg, seed, agent.id, 1);
        y = scm::counterfactual_outcome(agent, &br.x_new, cfg, noise)?;
    }
    Ok(AgentOutcome { h: br.moved || rule.decide_unchecked(&br.x_new), y, cost: br.cost })
}

pub fn agent_utility(rule: &DecisionRule, agent: &Agent, cfg: &ScmConfig, cost: &CostSpec, params: &UtilityParams, seed: u64) -> Result<f64> {
    let plan = ResponsePlan::new(rule, cost)?;
    Ok(agent_outcome(&plan, agent, cfg, params.delta, seed, Adaptation::Strategic)?.agent_utility(params))
}

pub fn institution_utility(rule: &DecisionRule, agent: &Agent, cfg: &ScmConfig, cost: &CostSpec, params: &UtilityParams, seed: u64) -> Result<f64> {
    let plan = ResponsePlan::new(rule, cost)?;
    Ok(agent_outcome(&plan, agent, cfg, params.delta, seed, Adaptation::Strategic)?.institution_utility(params))
}

/// Per-agent outcomes of a pre-adaptation population under `rule`.
pub fn outcomes(pop: &Population, rule: &DecisionRule, cfg: &ScmConfig, cost: &CostSpec, delta: f64, mode: Adaptation) -> Result<alloc::vec::Vec<AgentOutcome>> {
    let plan = ResponsePlan::new(rule, cost)?;
    pop.iter().map(|a| agent_outcome(&plan, a, cfg, delta, pop.seed, mode)).collect()
}

/// Mean utility of `role` under `rule`, optionally restricted to agents
/// whose pre-adaptation label equals `given_y`.
pub fn expected_utility(
    pop: &Population,
    rule: &DecisionRule,
    cfg: &ScmConfig,
    cost: &CostSpec,
    params: &UtilityParams,
    role: Role,
    mode: Adaptation,
    given_y: Option<bool>,
) -> Result<f64> {
    let outs = outcomes(pop, rule, cfg, cost, params.delta, mode)?;
    let vals: alloc::vec::Vec<f64> = pop
        .iter()
        .zip(&outs)
        .filter(|(a, _)| given_y.map_or(true, |y| a.y == y))
        .map(|(_, o)| o.utility(role, params))
        .collect();
    if vals.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    Ok(crate::math::pairwise_sum(&vals) / vals.len() as f64)
}

/// `E[r_role | h_new] - E[r_role | h_old]`.
#[allow(clippy::too_many_arguments)]
pub fn h_change(
    pop: &Population,
    h_new: &DecisionRule,
    h_old: &DecisionRule,
    cfg: &ScmConfig,
    cost: &CostSpec,
    params: &UtilityParams,
    role: Role,
    mode: Adaptation,
    given_y: Option<bool>,
) -> Result<f64> {
    let new = expected_utility(pop, h_new, cfg, cost, params, role, mode, given_y)?;
    let old = expected_utility(pop, h_old, cfg, cost, params, role, mode, given_y)?;
    Ok(new - old)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionLedger {
    /// FP or TP kept under both rules.
    pub p_maint: f64,
    /// FP under `h_pre`, TP under `h_post`.
    pub p_impr: f64,
    /// TP under `h_pre`, FN or TN under `h_post`.
    pub p_tp_to_n: f64,
    pub p_fp_to_tn: f64,
    /// `E[c(x, D_post(x)) - c(x, D_pre(x))]`.
    pub c_all: f64,
    /// Mass of each `(status under h_pre, status under h_post)` pair,
    /// indexed by [`Status::index`].
    pub matrix: [[f64; 4]; 4],
}

impl TransitionLedger {
    pub fn mass(&self, from: Status, to: Status) -> f64 {
        self.matrix[from.index()][to.index()]
    }

    /// Mass of agents with status `s` under `h_pre` (row sum).
    pub fn pre_mass(&self, s: Status) -> f64 {
        self.matrix[s.index()].iter().sum()
    }

    /// Mass of agents with status `s` under `h_post` (column sum).
    pub fn post_mass(&self, s: Status) -> f64 {
        self.matrix.iter().map(|r| r[s.index()]).sum()
    }
}

pub fn transition_ledger(pop: &Population, h_pre: &DecisionRule, h_post: &DecisionRule, cfg: &ScmConfig, cost: &CostSpec, params: &UtilityParams) -> Result<TransitionLedger> {
    if pop.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let pre = outcomes(pop, h_pre, cfg, cost, params.delta, Adaptation::Strategic)?;
    let post = outcomes(pop, h_post, cfg, cost, params.delta, Adaptation::Strategic)?;
    let n = pop.len() as f64;
    let mut matrix = [[0.0; 4]; 4];
    let mut dc = alloc::vec::Vec::with_capacity(pop.len());
    for (a, b) in pre.iter().zip(&post) {
        matrix[a.status().index()][b.status().index()] += 1.0 / n;
        dc.push(b.cost - a.cost);
    }
    let m = |f: Status, t: Status| matrix[f.index()][t.index()];
    use Status::*;
    Ok(TransitionLedger {
        p_maint: m(Tp, Tp) + m(Fp, Fp),
        p_impr: m(Fp, Tp),
        p_tp_to_n: m(Tp, Fn) + m(Tp, Tn),
        p_fp_to_tn: m(Fp, Tn),
        c_all: crate::math::pairwise_sum(&dc) / n,
        matrix,
    })
}

/// Smallest false-positive penalty for which switching to `h_post` does
/// not hurt agents (with `epsilon = 0`). `+inf` when no agent improves or
/// is turned away from gaming, since then no penalty helps.
pub fn delta2_lower_bound(ledger: &TransitionLedger, delta: f64) -> f64 {
    let den = ledger.p_impr + ledger.p_fp_to_tn;
    let num = ledger.c_all + delta * (ledger.p_tp_to_n + ledger.p_fp_to_tn);
    if den > 0.0 {
        num / den
    } else if num <= 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub delta_r_p: f64,
    pub delta_r_i: f64,
    pub aligned: bool,
    /// `(y, agent h-change, institution h-change)` restricted to `Y = y`.
    pub conditional: [(bool, f64, f64); 2],
    pub delta2_bound: f64,
    pub ledger: TransitionLedger,
}

/// Compares the rule chosen assuming static agents (`h_pre`) with the one
/// chosen under true adaptation (`h_post`).
pub fn alignment_report(pop: &Population, cfg: &ScmConfig, cost: &CostSpec, params: &UtilityParams, h_pre: &DecisionRule, h_post: &DecisionRule) -> Result<AlignmentReport> {
    let s = Adaptation::Strategic;
    let delta_r_p = h_change(pop, h_post, h_pre, cfg, cost, params, Role::Agent, s, None)?;
    let delta_r_i = h_change(pop, h_post, h_pre, cfg, cost, params, Role::Institution, s, None)?;
    let cond = |y: bool| -> Result<(bool, f64, f64)> {
        let have = pop.iter().any(|a| a.y == y);
        if !have {
            return Ok((y, 0.0, 0.0));
        }
        Ok((
            y,
            h_change(pop, h_post, h_pre, cfg, cost, params, Role::Agent, s, Some(y))?,
            h_change(pop, h_post, h_pre, cfg, cost, params, Role::Institution, s, Some(y))?,
        ))
    };
    let conditional = [cond(false)?, cond(true)?];
    let ledger = transition_ledger(pop, h_pre, h_post, cfg, cost, params)?;
    Ok(AlignmentReport {
        delta_r_p,
        delta_r_i,
        aligned: delta_r_p >= 0.0,
        conditional,
        delta2_bound: delta2_lower_bound(&ledger, params.delta),
        ledger,
    })
}
