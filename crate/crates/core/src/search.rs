//! Grid search over linear rules against pre- or post-adaptation
//! objectives, and logistic cross-entropy fits.
//!
//! Every grid cell is scored on the same pre-adaptation sample, so
//! differences between cells are paired and the landscape is smooth.

use alloc::vec;
use alloc::vec::Vec;

use crate::align::{self, Adaptation, Role, UtilityParams};
use crate::classify::{DecisionRule, LinearScorer, ProbEstimator};
use crate::error::{Error, Result};
use crate::math::{self, sigmoid};
use crate::respond::{self, CostSpec};
use crate::risk;
use crate::scm::{self, Features, Population, ScmConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Axis {
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self> {
        let ax = Self { min, max, step };
        ax.validate()?;
        Ok(ax)
    }

    fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.min.is_finite() || !self.max.is_finite() {
            return Err(Error::InvalidConfig("grid axes need finite bounds and a positive step".into()));
        }
        if self.max < self.min {
            return Err(Error::EmptyGrid);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        libm::floor((self.max - self.min) / self.step + 1e-9) as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `min + i * step`; computed by multiplication so values do not drift.
    pub fn value(&self, i: usize) -> f64 {
        let v = self.min + i as f64 * self.step;
        // snap values within rounding of zero onto zero
        if libm::fabs(v) < 1e-12 * self.step {
            0.0
        } else {
            v
        }
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.value(i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridAxes {
    /// `1{x_c >= a x_s + b}`.
    Slope { a: Axis, b: Axis },
    /// `1{w x_c - a x_s - c0 >= 0}`.
    Halfspace { w: Axis, a: Axis, c0: Axis },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// 0-1 loss after agents best respond (minimized).
    PostAdaptZeroOne,
    /// 0-1 loss on the unchanged population (minimized).
    PreAdaptZeroOne,
    /// Institution utility `r_i` (maximized); `strategic = false` assumes
    /// agents do not move.
    InstitutionUtility { strategic: bool },
}

impl Objective {
    fn maximize(self) -> bool {
        matches!(self, Objective::InstitutionUtility { .. })
    }
}

/// When two cells count as tied before the tie rule applies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TieTolerance {
    /// Only exactly equal objective values.
    Exact,
    /// Exact ties, except that the best cell with zero spurious weight wins
    /// when its paired difference to the best cell is within this many
    /// standard errors.
    PreferCausal(f64),
}

/// Two-stage search: every cell is scored on an evenly strided subsample
/// of `sample` agents, and only cells within `z` paired standard errors of
/// the subsample's best are scored on the full population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Screening {
    pub sample: usize,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub axes: GridAxes,
    pub objective: Objective,
    pub tie: TieTolerance,
    pub screening: Option<Screening>,
}

impl GridSpec {
    pub fn slope(a: Axis, b: Axis, objective: Objective) -> Self {
        Self { axes: GridAxes::Slope { a, b }, objective, tie: TieTolerance::Exact, screening: None }
    }

    /// Square slope grid `[-r, r]^2`.
    pub fn square(r: f64, step: f64, objective: Objective) -> Result<Self> {
        let ax = Axis::new(-r, r, step)?;
        Ok(Self::slope(ax, ax, objective))
    }

    pub fn with_tie(mut self, tie: TieTolerance) -> Self {
        self.tie = tie;
        self
    }

    pub fn with_screening(mut self, screening: Option<Screening>) -> Self {
        self.screening = screening;
        self
    }

    fn axes_list(&self) -> Vec<Axis> {
        match self.axes {
            GridAxes::Slope { a, b } => vec![a, b],
            GridAxes::Halfspace { w, a, c0 } => vec![w, a, c0],
        }
    }

    pub fn len(&self) -> usize {
        self.axes_list().iter().map(Axis::len).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Parameters of cell `k` (last axis fastest).
    pub fn cell(&self, k: usize) -> Vec<f64> {
        let axes = self.axes_list();
        let mut out = vec![0.0; axes.len()];
        let mut rem = k;
        for (j, ax) in axes.iter().enumerate().rev() {
            out[j] = ax.value(rem % ax.len());
            rem /= ax.len();
        }
        out
    }

    pub fn rule(&self, params: &[f64]) -> DecisionRule {
        match self.axes {
            GridAxes::Slope { .. } => DecisionRule::slope(params[0], params[1]),
            GridAxes::Halfspace { .. } => DecisionRule::halfspace(params[0], params[1], params[2]),
        }
    }

    /// `(|a|, |b|)` in slope terms, the keys of the tie rule.
    fn tie_key(&self, params: &[f64]) -> (f64, f64) {
        match self.axes {
            GridAxes::Slope { .. } => (libm::fabs(params[0]), libm::fabs(params[1])),
            GridAxes::Halfspace { .. } => (libm::fabs(params[1]), libm::fabs(params[2])),
        }
    }

    fn validate(&self) -> Result<()> {
        for ax in self.axes_list() {
            ax.validate()?;
        }
        if let TieTolerance::PreferCausal(z) = self.tie {
            if !(z >= 0.0) {
                return Err(Error::InvalidConfig("tie tolerance must be non-negative".into()));
            }
        }
        if let Some(sc) = self.screening {
            if sc.sample < 2 || !(sc.z > 0.0) {
                return Err(Error::InvalidConfig("screening needs sample >= 2 and z > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub params: Vec<f64>,
    /// Objective in natural units (loss or utility).
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best: DecisionRule,
    pub best_params: Vec<f64>,
    pub best_value: f64,
    /// Index of the best cell in `landscape`.
    pub best_index: usize,
    /// Index of the cell with the extreme objective before tie-breaking.
    pub raw_best_index: usize,
    pub landscape: Vec<Cell>,
}

/// Column layout of a scalar population with precomputed post-adaptation
/// noise, for allocation-free evaluation of many rules.
#[derive(Debug, Clone)]
pub struct PreparedPopulation {
    xc: Vec<f64>,
    xs: Vec<f64>,
    u: Vec<u8>,
    y: Vec<bool>,
    noise: Vec<f64>,
    cfg: ScmConfig,
}

impl PreparedPopulation {
    /// Requires one causal and one spurious feature.
    pub fn new(pop: &Population, cfg: &ScmConfig) -> Result<Self> {
        if pop.is_empty() {
            return Err(Error::EmptyPopulation);
        }
        if cfg.d_c() != 1 || cfg.d_s != 1 {
            return Err(Error::Unsupported("prepared populations need scalar features"));
        }
        let generation = pop.generation + 1;
        let mut p = Self {
            xc: Vec::with_capacity(pop.len()),
            xs: Vec::with_capacity(pop.len()),
            u: Vec::with_capacity(pop.len()),
            y: Vec::with_capacity(pop.len()),
            noise: Vec::with_capacity(pop.len()),
            cfg: cfg.clone(),
        };
        for a in pop.iter() {
            if a.x.causal.len() != 1 || a.x.spurious.len() != 1 {
                return Err(Error::DimensionMismatch { expected: 1, got: a.x.causal.len().max(a.x.spurious.len()) });
            }
            p.xc.push(a.x.causal[0]);
            p.xs.push(a.x.spurious[0]);
            p.u.push(a.u);
            p.y.push(a.y);
            p.noise.push(match cfg.outcome_mode {
                scm::OutcomeMode::Deterministic => 0.0,
                scm::OutcomeMode::Stochastic => scm::post_noise(cfg, pop.seed, a.id, generation),
            });
        }
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.xc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xc.is_empty()
    }

    /// Per-agent loss (negated utility for utility objectives) of `rule`,
    /// written into `out` when given; returns the mean.
    pub fn evaluate(&self, rule: &DecisionRule, objective: Objective, cost: &CostSpec, delta: f64, epsilon: f64, mut out: Option<&mut [f64]>) -> Result<f64> {
        let (w, a, c0) = match (rule.scorer.w.as_slice(), rule.scorer.a.as_slice()) {
            ([w], [a]) => (*w, *a, rule.scorer.c0),
            _ => return Err(Error::DimensionMismatch { expected: 1, got: rule.scorer.d_c().max(rule.scorer.d_s()) }),
        };
        let theta = rule.effective_threshold();
        let step = cost.steepest(&[w, -a])?;
        let strategic = matches!(objective, Objective::PostAdaptZeroOne | Objective::InstitutionUtility { strategic: true });
        let utility = matches!(objective, Objective::InstitutionUtility { .. });
        let score = |xc: f64, xs: f64| (w * xc - a * xs) - c0;
        let mut sum = 0.0;
        let mut block = 0.0;
        let mut xc_buf = [0.0];
        for i in 0..self.len() {
            let (xc, xs, y0) = (self.xc[i], self.xs[i], self.y[i]);
            let s = score(xc, xs);
            let (h, y) = if s >= theta {
                (true, y0)
            } else if let (true, Some((d, unit))) = (strategic, step.as_ref()) {
                let gap = (theta - s).max(0.0);
                if gap * unit <= delta {
                    let (nc, ns) = respond::nudged_target_2d(xc, xs, gap, d, theta, |c, s| score(c, s) >= theta);
                    let h = score(nc, ns) >= theta;
                    let y = if nc != xc {
                        xc_buf[0] = nc;
                        self.cfg.realize_unchecked(&xc_buf, self.u[i], self.noise[i])
                    } else {
                        y0
                    };
                    (h, y)
                } else {
                    (false, y0)
                }
            } else {
                (false, y0)
            };
            let loss = if utility {
                f64::from(u8::from(h != y)) + epsilon * f64::from(u8::from(!h && !y))
            } else {
                f64::from(u8::from(h != y))
            };
            if let Some(o) = out.as_deref_mut() {
                o[i] = loss;
            }
            block += loss;
            // blocked accumulation keeps the sum exact for integer losses
            if i % 4096 == 4095 {
                sum += block;
                block = 0.0;
            }
        }
        Ok((sum + block) / self.len() as f64)
    }
}

/// Objective of one rule evaluated through the generic population APIs.
pub fn evaluate_rule(pop: &Population, rule: &DecisionRule, objective: Objective, cfg: &ScmConfig, cost: &CostSpec, delta: f64, params: &UtilityParams) -> Result<f64> {
    match objective {
        Objective::PostAdaptZeroOne => risk::zero_one_loss(&respond::adapt_population(pop, rule, cost, delta, cfg)?, rule),
        Objective::PreAdaptZeroOne => risk::zero_one_loss(pop, rule),
        Objective::InstitutionUtility { strategic } => {
            let mode = if strategic { Adaptation::Strategic } else { Adaptation::Static };
            let p = UtilityParams { delta, ..*params };
            align::expected_utility(pop, rule, cfg, cost, &p, Role::Institution, mode, None)
        }
    }
}

/// Per-agent losses through the generic path, for populations the
/// prepared kernel does not cover.
fn generic_losses(pop: &Population, rule: &DecisionRule, objective: Objective, cfg: &ScmConfig, cost: &CostSpec, delta: f64, epsilon: f64, out: &mut [f64]) -> Result<f64> {
    let mode = match objective {
        Objective::PostAdaptZeroOne | Objective::InstitutionUtility { strategic: true } => Adaptation::Strategic,
        _ => Adaptation::Static,
    };
    let outs = align::outcomes(pop, rule, cfg, cost, delta, mode)?;
    let p = UtilityParams { delta: delta.max(f64::MIN_POSITIVE), delta2: 0.0, epsilon };
    for (o, r) in out.iter_mut().zip(&outs) {
        *o = match objective {
            Objective::InstitutionUtility { .. } => -r.institution_utility(&p),
            _ => f64::from(u8::from(r.h != r.y)),
        };
    }
    Ok(math::pairwise_sum(out) / pop.len() as f64)
}

/// Per-agent losses of grid rules on the concatenation of populations.
struct Evaluator<'a> {
    parts: Vec<(&'a Population, Option<PreparedPopulation>)>,
    objective: Objective,
    cfg: &'a ScmConfig,
    cost: &'a CostSpec,
    delta: f64,
    eps: f64,
    n: usize,
    scratch: Vec<f64>,
}

impl<'a> Evaluator<'a> {
    fn new(pops: &'a [Population], grid: &GridSpec, cfg: &'a ScmConfig, cost: &'a CostSpec, delta: f64, eps: f64) -> Self {
        let parts: Vec<_> = pops.iter().map(|p| (p, PreparedPopulation::new(p, cfg).ok())).collect();
        let n = pops.iter().map(Population::len).sum();
        Self { parts, objective: grid.objective, cfg, cost, delta, eps, n, scratch: Vec::new() }
    }

    fn eval(&mut self, rule: &DecisionRule, mut out: Option<&mut [f64]>) -> Result<f64> {
        let mut total = 0.0;
        let mut offset = 0;
        for (pop, prepared) in &self.parts {
            let len = pop.len();
            let slice = out.as_deref_mut().map(|o| &mut o[offset..offset + len]);
            let mean = match prepared {
                Some(p) => p.evaluate(rule, self.objective, self.cost, self.delta, self.eps, slice)?,
                None => {
                    self.scratch.resize(len, 0.0);
                    let v = generic_losses(pop, rule, self.objective, self.cfg, self.cost, self.delta, self.eps, &mut self.scratch)?;
                    if let Some(o) = slice {
                        o.copy_from_slice(&self.scratch);
                    }
                    v
                }
            };
            total += mean * len as f64;
            offset += len;
        }
        Ok(total / self.n as f64)
    }
}

/// Paired comparison of cells against one reference cell.
struct Paired<'e, 'a> {
    ev: &'e mut Evaluator<'a>,
    reference: Vec<f64>,
    cell: Vec<f64>,
    /// Bound on the paired difference's standard error from the range.
    se_bound: f64,
}

impl<'e, 'a> Paired<'e, 'a> {
    fn new(ev: &'e mut Evaluator<'a>, grid: &GridSpec, reference: usize) -> Result<Self> {
        let n = ev.n;
        let mut r = vec![0.0; n];
        ev.eval(&grid.rule(&grid.cell(reference)), Some(&mut r))?;
        let se_bound = (1.0 + ev.eps) / libm::sqrt((n as f64 - 1.0).max(1.0));
        Ok(Self { ev, reference: r, cell: vec![0.0; n], se_bound })
    }

    /// Whether cell `k`, `diff` worse than the reference, is within `z`
    /// paired standard errors of it.
    fn within(&mut self, grid: &GridSpec, k: usize, diff: f64, z: f64) -> Result<bool> {
        // sd of a bounded difference is at most its range
        if !(diff <= z * self.se_bound) {
            return Ok(false);
        }
        if diff <= 0.0 {
            return Ok(true);
        }
        self.ev.eval(&grid.rule(&grid.cell(k)), Some(&mut self.cell))?;
        let d: Vec<f64> = self.cell.iter().zip(&self.reference).map(|(a, b)| a - b).collect();
        let m = math::MeanEstimate::of(&d);
        Ok(m.mean <= z * m.std_error)
    }
}

fn argmin(cells: impl Iterator<Item = usize>, losses: &[f64]) -> Option<usize> {
    cells.fold(None, |b, k| match b {
        Some(b) if losses[b] <= losses[k] => Some(b),
        _ => Some(k),
    })
}

/// Exhaustive search; see [`TieTolerance`] for how near-ties are resolved
/// and [`Screening`] for the optional two-stage variant. Cells removed by
/// screening have a NaN value in the landscape.
/// Exact ties prefer smaller `|a|`, then smaller `|b|`, then the earlier cell.
pub fn grid_search(pop: &Population, grid: &GridSpec, cfg: &ScmConfig, cost: &CostSpec, delta: f64, params: &UtilityParams) -> Result<GridResult> {
    grid_search_pooled(core::slice::from_ref(pop), grid, cfg, cost, delta, params)
}

/// [`grid_search`] on the pooled agents of several populations, such as
/// independent replicates; the objective is the mean over all agents.
pub fn grid_search_pooled(pops: &[Population], grid: &GridSpec, cfg: &ScmConfig, cost: &CostSpec, delta: f64, params: &UtilityParams) -> Result<GridResult> {
    grid.validate()?;
    if pops.is_empty() || pops.iter().any(Population::is_empty) {
        return Err(Error::EmptyPopulation);
    }
    if !(delta >= 0.0) {
        return Err(Error::InvalidConfig("budget must be non-negative".into()));
    }
    let n_cells = grid.len();
    if n_cells == 0 {
        return Err(Error::EmptyGrid);
    }
    let eps = params.epsilon;
    let all: Vec<usize> = (0..n_cells).collect();
    // internal values are losses; utilities are negated
    let mut losses = vec![f64::INFINITY; n_cells];
    let n: usize = pops.iter().map(Population::len).sum();
    let candidates: Vec<usize> = match grid.screening {
        Some(sc) if n >= 2 * sc.sample => {
            let subs: Vec<Population> = pops
                .iter()
                .map(|p| {
                    let stride = (n / sc.sample).max(1);
                    Population { agents: p.agents.iter().step_by(stride).cloned().collect(), seed: p.seed, generation: p.generation }
                })
                .collect();
            let mut sub_eval = Evaluator::new(&subs, grid, cfg, cost, delta, eps);
            let sub_losses = all.iter().map(|&k| sub_eval.eval(&grid.rule(&grid.cell(k)), None)).collect::<Result<Vec<_>>>()?;
            let sub_best = argmin(all.iter().copied(), &sub_losses).expect("grid is non-empty");
            let mut paired = Paired::new(&mut sub_eval, grid, sub_best)?;
            let mut keep = Vec::new();
            for &k in &all {
                if paired.within(grid, k, sub_losses[k] - sub_losses[sub_best], sc.z)? {
                    keep.push(k);
                }
            }
            keep
        }
        _ => all,
    };
    let mut full = Evaluator::new(pops, grid, cfg, cost, delta, eps);
    for &k in &candidates {
        losses[k] = full.eval(&grid.rule(&grid.cell(k)), None)?;
    }
    let raw_best = argmin(candidates.iter().copied(), &losses).expect("screening keeps the best cell");
    let tie_order = |i: &usize, j: &usize| {
        let (ki, kj) = (grid.tie_key(&grid.cell(*i)), grid.tie_key(&grid.cell(*j)));
        ki.0.total_cmp(&kj.0).then(ki.1.total_cmp(&kj.1)).then(i.cmp(j))
    };
    let exact_best = candidates.iter().copied().filter(|&k| losses[k] == losses[raw_best]).min_by(tie_order).unwrap_or(raw_best);
    let best_index = match grid.tie {
        TieTolerance::Exact => exact_best,
        TieTolerance::PreferCausal(z) => {
            let causal = candidates.iter().copied().filter(|&k| grid.tie_key(&grid.cell(k)).0 == 0.0);
            let l_causal = argmin(causal.clone(), &losses).map(|k| losses[k]);
            let best_causal = l_causal.and_then(|l| causal.filter(|&k| losses[k] == l).min_by(tie_order));
            match best_causal {
                Some(c) if Paired::new(&mut full, grid, raw_best)?.within(grid, c, losses[c] - losses[raw_best], z)? => c,
                _ => exact_best,
            }
        }
    };
    let sign = if grid.objective.maximize() { -1.0 } else { 1.0 };
    let landscape: Vec<Cell> = (0..n_cells)
        .map(|k| Cell { params: grid.cell(k), value: if losses[k].is_finite() { sign * losses[k] } else { f64::NAN } })
        .collect();
    let best_params = grid.cell(best_index);
    Ok(GridResult {
        best: grid.rule(&best_params),
        best_value: landscape[best_index].value,
        best_params,
        best_index,
        raw_best_index: raw_best,
        landscape,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMask {
    Causal,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitMethod {
    GradientDescent,
    Newton,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub max_epochs: u32,
    /// Gradient-norm stopping tolerance.
    pub tolerance: f64,
    pub l2_penalty: f64,
    pub feature_mask: FeatureMask,
    pub method: FitMethod,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            max_epochs: 5_000,
            tolerance: 1e-7,
            l2_penalty: 0.0,
            feature_mask: FeatureMask::All,
            method: FitMethod::GradientDescent,
        }
    }
}

impl FitConfig {
    pub fn causal() -> Self {
        Self { feature_mask: FeatureMask::Causal, ..Self::default() }
    }

    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.tolerance > 0.0) || !(self.l2_penalty >= 0.0) {
            return Err(Error::InvalidConfig("need learning_rate > 0, tolerance > 0, l2_penalty >= 0".into()));
        }
        Ok(())
    }
}

pub const MIN_FIT_SAMPLES: usize = 100;
const DIVERGENCE_WINDOW: u32 = 10;
const MAX_RETRIES: u32 = 5;

/// Row-major design matrix `[x_c, x_s (unless masked), 1]`.
#[derive(Debug, Clone)]
pub struct Design {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    d_c: usize,
    d_s: usize,
    mask: FeatureMask,
}

impl Design {
    pub fn new(features: &[&Features], mask: FeatureMask) -> Result<Self> {
        let first = features.first().ok_or(Error::EmptyPopulation)?;
        let (d_c, d_s) = (first.causal.len(), first.spurious.len());
        let cols = d_c + if mask == FeatureMask::All { d_s } else { 0 } + 1;
        let mut data = Vec::with_capacity(features.len() * cols);
        for x in features {
            if x.causal.len() != d_c || x.spurious.len() != d_s {
                return Err(Error::DimensionMismatch { expected: d_c + d_s, got: x.dim() });
            }
            data.extend_from_slice(&x.causal);
            if mask == FeatureMask::All {
                data.extend_from_slice(&x.spurious);
            }
            data.push(1.0);
        }
        Ok(Self { rows: features.len(), cols, data, d_c, d_s, mask })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Estimator with logit `theta . row`.
    pub fn estimator(&self, theta: &[f64]) -> ProbEstimator {
        let w = theta[..self.d_c].to_vec();
        let a = match self.mask {
            FeatureMask::All => theta[self.d_c..self.d_c + self.d_s].iter().map(|t| -t).collect(),
            FeatureMask::Causal => vec![0.0; self.d_s],
        };
        ProbEstimator { scorer: LinearScorer::new(w, a, -theta[self.cols - 1]), temperature: 1.0, kind: crate::classify::EstimatorKind::Logistic }
    }

    /// Parameters of a logistic estimator in this design's layout.
    pub fn theta_of(&self, est: &ProbEstimator) -> Result<Vec<f64>> {
        let t = est.temperature;
        if est.scorer.d_c() != self.d_c || est.scorer.d_s() != self.d_s {
            return Err(Error::DimensionMismatch { expected: self.d_c + self.d_s, got: est.scorer.d_c() + est.scorer.d_s() });
        }
        if self.mask == FeatureMask::Causal && !est.scorer.is_causal() {
            return Err(Error::FamilyMismatch);
        }
        let mut th: Vec<f64> = est.scorer.w.iter().map(|w| w / t).collect();
        if self.mask == FeatureMask::All {
            th.extend(est.scorer.a.iter().map(|a| -a / t));
        }
        th.push(-est.scorer.c0 / t);
        Ok(th)
    }
}

/// Mean soft-label CE `mean_i CE(target_i, sigmoid(theta . x_i)) +
/// l2/2 |theta_without_bias|^2` and its gradient.
pub fn ce_objective(theta: &[f64], design: &Design, targets: &[f64], l2: f64) -> (f64, Vec<f64>) {
    let k = design.cols;
    let mut grad = vec![0.0; k];
    let mut ce = Vec::with_capacity(design.rows);
    for (i, &t) in targets.iter().enumerate().take(design.rows) {
        let row = design.row(i);
        let z = math::dot(theta, row);
        let p = sigmoid(z);
        ce.push(logistic_ce(t, z));
        let r = p - t;
        for (g, x) in grad.iter_mut().zip(row) {
            *g += r * x;
        }
    }
    let n = design.rows as f64;
    let mut obj = math::pairwise_sum(&ce) / n;
    for g in &mut grad {
        *g /= n;
    }
    for j in 0..k - 1 {
        obj += 0.5 * l2 * theta[j] * theta[j];
        grad[j] += l2 * theta[j];
    }
    (obj, grad)
}

/// `CE(t, sigmoid(z))` computed from the logit without clipping loss.
#[inline]
fn logistic_ce(t: f64, z: f64) -> f64 {
    // -t ln s(z) - (1-t) ln s(-z), with ln s(z) = -softplus(-z)
    t * softplus(-z) + (1.0 - t) * softplus(z)
}

#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    }
}

fn hessian(theta: &[f64], design: &Design, l2: f64) -> Vec<f64> {
    let k = design.cols;
    let mut h = vec![0.0; k * k];
    for i in 0..design.rows {
        let row = design.row(i);
        let p = sigmoid(math::dot(theta, row));
        let wgt = p * (1.0 - p);
        for r in 0..k {
            for c in 0..=r {
                h[r * k + c] += wgt * row[r] * row[c];
            }
        }
    }
    let n = design.rows as f64;
    for r in 0..k {
        for c in 0..=r {
            h[r * k + c] /= n;
            h[c * k + r] = h[r * k + c];
        }
    }
    for j in 0..k - 1 {
        h[j * k + j] += l2;
    }
    h
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

fn gradient_descent(design: &Design, targets: &[f64], fit: &FitConfig) -> Result<Vec<f64>> {
    let mut lr = fit.learning_rate;
    for _ in 0..=MAX_RETRIES {
        let mut theta = vec![0.0; design.cols];
        let (mut prev, mut grad) = ce_objective(&theta, design, targets, fit.l2_penalty);
        let mut rising = 0;
        let mut diverged = false;
        for _ in 0..fit.max_epochs {
            if norm(&grad) < fit.tolerance {
                break;
            }
            for (t, g) in theta.iter_mut().zip(&grad) {
                *t -= lr * g;
            }
            let (obj, g) = ce_objective(&theta, design, targets, fit.l2_penalty);
            rising = if obj > prev { rising + 1 } else { 0 };
            if rising >= DIVERGENCE_WINDOW || !obj.is_finite() {
                diverged = true;
                break;
            }
            prev = obj;
            grad = g;
        }
        if !diverged {
            return Ok(theta);
        }
        lr *= 0.5;
    }
    Err(Error::Diverged { retries: MAX_RETRIES })
}

fn newton(design: &Design, targets: &[f64], fit: &FitConfig) -> Result<Vec<f64>> {
    let mut theta = vec![0.0; design.cols];
    let (mut obj, mut grad) = ce_objective(&theta, design, targets, fit.l2_penalty);
    for _ in 0..fit.max_epochs.min(200) {
        if norm(&grad) < fit.tolerance {
            break;
        }
        let mut h = hessian(&theta, design, fit.l2_penalty);
        let k = design.cols;
        let step = loop {
            if let Some(s) = math::solve_spd(&h, &grad) {
                break s;
            }
            // separable or rank-deficient designs: damp the Hessian
            for j in 0..k {
                h[j * k + j] += 1e-8 + 1e-6 * h[j * k + j];
            }
        };
        let mut t = 1.0;
        let dir_deriv: f64 = step.iter().zip(&grad).map(|(s, g)| s * g).sum();
        let (next, next_obj, next_grad) = loop {
            let cand: Vec<f64> = theta.iter().zip(&step).map(|(a, s)| a - t * s).collect();
            let (o, g) = ce_objective(&cand, design, targets, fit.l2_penalty);
            if o <= obj - 1e-4 * t * dir_deriv || t < 1e-10 {
                break (cand, o, g);
            }
            t *= 0.5;
        };
        if next_obj > obj {
            break;
        }
        let done = obj - next_obj < 1e-15 * (1.0 + obj);
        theta = next;
        obj = next_obj;
        grad = next_grad;
        if done {
            break;
        }
    }
    Ok(theta)
}

/// Fits a logistic estimator to soft targets in `[0, 1]`.
pub fn fit_logistic_soft(features: &[&Features], targets: &[f64], fit: &FitConfig) -> Result<ProbEstimator> {
    fit.validate()?;
    if features.len() < MIN_FIT_SAMPLES {
        return Err(Error::TooFewSamples { need: MIN_FIT_SAMPLES, got: features.len() });
    }
    if targets.len() != features.len() {
        return Err(Error::DimensionMismatch { expected: features.len(), got: targets.len() });
    }
    let design = Design::new(features, fit.feature_mask)?;
    let theta = match fit.method {
        FitMethod::GradientDescent => gradient_descent(&design, targets, fit)?,
        FitMethod::Newton => newton(&design, targets, fit)?,
    };
    Ok(design.estimator(&theta))
}

/// Logistic CE fit to the realized labels of `pop`.
pub fn fit_logistic_ce(pop: &Population, fit: &FitConfig) -> Result<ProbEstimator> {
    let feats: Vec<&Features> = pop.iter().map(|a| &a.x).collect();
    let ys: Vec<f64> = pop.iter().map(|a| f64::from(u8::from(a.y))).collect();
    fit_logistic_soft(&feats, &ys, fit)
}

/// In-family CE minimizer on `pop` against its outcome probabilities
/// `E[Y | x_c, u]` rather than the realized labels.
pub fn fit_optimal_estimator(pop: &Population, cfg: &ScmConfig, mask: FeatureMask) -> Result<ProbEstimator> {
    let feats: Vec<&Features> = pop.iter().map(|a| &a.x).collect();
    let g = risk::outcome_means(pop, cfg)?;
    let fit = FitConfig { feature_mask: mask, method: FitMethod::Newton, tolerance: 1e-10, ..FitConfig::default() };
    fit_logistic_soft(&feats, &g, &fit)
}

/// Newton estimate `lambda^2 / 2` of how far `est` is from the soft-label
/// CE minimum of its family on `(features, targets)`.
pub fn soft_ce_suboptimality(est: &ProbEstimator, features: &[&Features], targets: &[f64]) -> Result<f64> {
    let mask = if est.scorer.is_causal() { FeatureMask::Causal } else { FeatureMask::All };
    let design = Design::new(features, mask)?;
    let theta = design.theta_of(est)?;
    let (_, grad) = ce_objective(&theta, &design, targets, 0.0);
    let mut h = hessian(&theta, &design, 0.0);
    let k = design.cols;
    let step = loop {
        if let Some(s) = math::solve_spd(&h, &grad) {
            break s;
        }
        for j in 0..k {
            h[j * k + j] += 1e-10 + 1e-6 * h[j * k + j];
        }
    };
    let lambda2: f64 = step.iter().zip(&grad).map(|(s, g)| s * g).sum();
    Ok(0.5 * lambda2.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::respond::CostNorm;
    use crate::scm::{sample_population, Conditioning, OutcomeMode};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn l1() -> CostSpec {
        CostSpec::uniform(CostNorm::L1, 2)
    }

    fn params(delta: f64) -> UtilityParams {
        UtilityParams::new(delta, 0.0, 0.0).unwrap()
    }

    #[test]
    fn axis_values() {
        let ax = Axis::new(-0.5, 0.5, 0.01).unwrap();
        assert_eq!(ax.len(), 101);
        assert_eq!(ax.value(50), 0.0);
        assert_relative_eq!(ax.value(100), 0.5, epsilon = 1e-12);
        assert_eq!(Axis::new(0.0, -1.0, 0.1), Err(Error::EmptyGrid));
        assert!(Axis::new(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn prepared_kernel_matches_generic_path() {
        for (cfg, cost) in [
            (ScmConfig::uniform_example(), l1()),
            (ScmConfig { outcome_mode: OutcomeMode::Stochastic, ..ScmConfig::default() }, CostSpec::uniform(CostNorm::L2, 2)),
            (ScmConfig { ambiguity_window: Some(0.5), ..ScmConfig::default() }, CostSpec::new(CostNorm::LInf, vec![1.0, 0.3]).unwrap()),
        ] {
            let pop = sample_population(&cfg, 4_000, 12).unwrap();
            let prep = PreparedPopulation::new(&pop, &cfg).unwrap();
            let grid = GridSpec::square(1.0, 0.25, Objective::PostAdaptZeroOne).unwrap();
            for k in 0..grid.len() {
                let rule = grid.rule(&grid.cell(k));
                for obj in [Objective::PostAdaptZeroOne, Objective::PreAdaptZeroOne, Objective::InstitutionUtility { strategic: true }, Objective::InstitutionUtility { strategic: false }] {
                    let p = UtilityParams::new(0.4, 0.0, 0.3).unwrap();
                    let fast = prep.evaluate(&rule, obj, &cost, 0.4, 0.3, None).unwrap();
                    let slow = evaluate_rule(&pop, &rule, obj, &cfg, &cost, 0.4, &p).unwrap();
                    let slow = if obj.maximize() { -slow } else { slow };
                    assert_relative_eq!(fast, slow, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn uniform_example_searches() {
        let cfg = ScmConfig::uniform_example();
        let pop = sample_population(&cfg, 40_000, 1).unwrap();
        let grid = GridSpec::square(0.5, 0.01, Objective::PostAdaptZeroOne).unwrap();
        let r = grid_search(&pop, &grid, &cfg, &l1(), 0.3, &params(0.3)).unwrap();
        let (a, b) = (r.best_params[0], r.best_params[1]);
        assert!((a + 0.196).abs() <= 0.03 && (b - 0.133).abs() <= 0.03, "best {a}, {b}");

        let pre = GridSpec::square(0.5, 0.01, Objective::PreAdaptZeroOne).unwrap();
        let r = grid_search(&pop, &pre, &cfg, &l1(), 0.0, &params(0.3)).unwrap();
        let (a, b) = (r.best_params[0], r.best_params[1]);
        assert!((a + 0.224).abs() <= 0.02 && (b + 0.138).abs() <= 0.02, "best {a}, {b}");
        // landscape consistency
        let again = evaluate_rule(&pop, &r.best, Objective::PreAdaptZeroOne, &cfg, &l1(), 0.0, &params(0.3)).unwrap();
        assert_eq!(again, r.best_value);
    }

    #[test]
    fn statistical_ties_prefer_the_causal_rule() {
        let cfg = ScmConfig::uniform_example();
        let pop = sample_population(&cfg, 40_000, 1).unwrap();
        let grid = GridSpec::square(0.2, 0.01, Objective::PostAdaptZeroOne).unwrap().with_tie(TieTolerance::PreferCausal(3.0));
        let r = grid_search(&pop, &grid, &cfg, &l1(), 0.4, &params(0.4)).unwrap();
        assert_eq!(r.best_params, vec![0.0, 0.0]);
    }

    #[test]
    fn exact_ties_use_tie_rule() {
        // two agents, every rule with |b| small ties: the tie rule picks (0, smallest |b|)
        let cfg = ScmConfig::uniform_example();
        let pop = sample_population(&cfg, 200, 3).unwrap();
        let grid = GridSpec::slope(Axis::new(-0.02, 0.02, 0.01).unwrap(), Axis::new(-5.0, -4.0, 0.5).unwrap(), Objective::PreAdaptZeroOne);
        let r = grid_search(&pop, &grid, &cfg, &l1(), 0.0, &params(0.1)).unwrap();
        // every cell accepts everyone
        assert!(r.landscape.iter().all(|c| c.value == r.best_value));
        assert_eq!(r.best_params, vec![0.0, -4.0]);
    }

    #[test]
    fn screening_keeps_the_exhaustive_optimum() {
        let cfg = ScmConfig::uniform_example();
        let pop = sample_population(&cfg, 40_000, 8).unwrap();
        for delta in [0.0, 0.2, 0.3, 0.45] {
            let grid = GridSpec::square(0.5, 0.02, Objective::PostAdaptZeroOne).unwrap().with_tie(TieTolerance::PreferCausal(3.0));
            let full = grid_search(&pop, &grid, &cfg, &l1(), delta, &params(0.5)).unwrap();
            let screened = grid.with_screening(Some(Screening { sample: 4_000, z: 5.0 }));
            let r = grid_search(&pop, &screened, &cfg, &l1(), delta, &params(0.5)).unwrap();
            assert_eq!((r.best_index, r.best_value), (full.best_index, full.best_value));
            let kept = r.landscape.iter().filter(|c| !c.value.is_nan()).count();
            assert!(kept < full.landscape.len() / 2, "{kept}");
            for (a, b) in r.landscape.iter().zip(&full.landscape) {
                assert!(a.value.is_nan() || a.value == b.value);
            }
        }
        let bad = GridSpec::square(0.5, 0.1, Objective::PostAdaptZeroOne).unwrap().with_screening(Some(Screening { sample: 1, z: 5.0 }));
        assert!(grid_search(&pop, &bad, &cfg, &l1(), 0.1, &params(0.1)).is_err());
    }

    #[test]
    fn empty_grid_rejected() {
        let cfg = ScmConfig::uniform_example();
        let pop = sample_population(&cfg, 200, 3).unwrap();
        let bad = GridSpec::slope(Axis { min: 0.0, max: -1.0, step: 0.1 }, Axis { min: 0.0, max: 1.0, step: 0.1 }, Objective::PreAdaptZeroOne);
        assert_eq!(grid_search(&pop, &bad, &cfg, &l1(), 0.0, &params(0.1)).err(), Some(Error::EmptyGrid));
    }

    #[test]
    fn utility_search_maximizes() {
        let cfg = ScmConfig::uniform_example();
        let pop = sample_population(&cfg, 5_000, 3).unwrap();
        let grid = GridSpec::square(0.5, 0.05, Objective::InstitutionUtility { strategic: true }).unwrap();
        let r = grid_search(&pop, &grid, &cfg, &l1(), 0.5, &params(0.5)).unwrap();
        assert!(r.landscape.iter().all(|c| c.value <= r.best_value));
        assert!(r.best_value <= 0.0);
    }

    #[test]
    fn separable_fit_has_zero_training_error() {
        let cfg = ScmConfig { w_u: 0.0, ..ScmConfig::default() };
        let mut pop = sample_population(&cfg, 2_000, 4).unwrap();
        pop.agents.retain(|a| a.x.causal[0].abs() > 0.2);
        let est = fit_logistic_ce(&pop, &FitConfig::default()).unwrap();
        let rule = est.to_rule(0.5).unwrap();
        assert_eq!(risk::zero_one_loss(&pop, &rule).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let feats: Vec<Features> = (0..50).map(|_| Features::scalar(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0))).collect();
            let refs: Vec<&Features> = feats.iter().collect();
            let targets: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
            let design = Design::new(&refs, FeatureMask::All).unwrap();
            let theta: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let l2 = rng.random_range(0.0..0.1);
            let (_, grad) = ce_objective(&theta, &design, &targets, l2);
            for j in 0..3 {
                let h = 1e-6;
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += h;
                tm[j] -= h;
                let fd = (ce_objective(&tp, &design, &targets, l2).0 - ce_objective(&tm, &design, &targets, l2).0) / (2.0 * h);
                assert!((fd - grad[j]).abs() <= 1e-5 * grad[j].abs().max(1e-3), "j {j}: fd {fd} vs {}", grad[j]);
            }
        }
    }

    #[test]
    fn causal_fit_is_near_bayes() {
        let cfg = ScmConfig { outcome_mode: OutcomeMode::Stochastic, w_u: 0.0, ..ScmConfig::default() };
        let pop = sample_population(&cfg, 100_000, 4).unwrap();
        let est = fit_logistic_ce(&pop, &FitConfig::causal()).unwrap();
        assert!(est.scorer.is_causal());
        let bayes = ProbEstimator::bayes(&cfg, Conditioning::Causal);
        let diff = risk::ce_loss(&pop, &est).unwrap() - risk::ce_loss(&pop, &bayes).unwrap();
        assert!(diff.abs() <= 1e-3, "CE gap {diff}");
    }

    #[test]
    fn newton_agrees_with_gradient_descent() {
        let cfg = ScmConfig { outcome_mode: OutcomeMode::Stochastic, ..ScmConfig::default() };
        let pop = sample_population(&cfg, 5_000, 4).unwrap();
        let gd = fit_logistic_ce(&pop, &FitConfig { max_epochs: 20_000, learning_rate: 0.5, ..FitConfig::default() }).unwrap();
        let nt = fit_logistic_ce(&pop, &FitConfig { method: FitMethod::Newton, ..FitConfig::default() }).unwrap();
        assert_relative_eq!(risk::ce_loss(&pop, &gd).unwrap(), risk::ce_loss(&pop, &nt).unwrap(), epsilon = 1e-6);
        let feats: Vec<&Features> = pop.iter().map(|a| &a.x).collect();
        let ys: Vec<f64> = pop.iter().map(|a| f64::from(u8::from(a.y))).collect();
        assert!(soft_ce_suboptimality(&nt, &feats, &ys).unwrap() < 1e-12);
    }

    #[test]
    fn divergence_is_reported() {
        // the ridge term alone makes steps overshoot by a factor lr * l2 - 1
        let pop = sample_population(&ScmConfig::default(), 500, 4).unwrap();
        let fit = FitConfig { learning_rate: 1e3, l2_penalty: 1.0, ..FitConfig::default() };
        assert_eq!(fit_logistic_ce(&pop, &fit).err(), Some(Error::Diverged { retries: MAX_RETRIES }));
    }

    #[test]
    fn too_few_samples() {
        let pop = sample_population(&ScmConfig::default(), 99, 4).unwrap();
        assert_eq!(fit_logistic_ce(&pop, &FitConfig::default()).err(), Some(Error::TooFewSamples { need: 100, got: 99 }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn masked_fit_ignores_spurious(seed in 0u64..1_000) {
            let cfg = ScmConfig { outcome_mode: OutcomeMode::Stochastic, ..ScmConfig::default() };
            let pop = sample_population(&cfg, 300, seed).unwrap();
            let est = fit_logistic_ce(&pop, &FitConfig { max_epochs: 200, ..FitConfig::causal() }).unwrap();
            prop_assert!(est.scorer.a.iter().all(|&a| a == 0.0));
        }

        #[test]
        fn grid_is_deterministic(seed in 0u64..1_000) {
            let cfg = ScmConfig::uniform_example();
            let pop = sample_population(&cfg, 500, seed).unwrap();
            let grid = GridSpec::square(0.5, 0.1, Objective::PostAdaptZeroOne).unwrap();
            let a = grid_search(&pop, &grid, &cfg, &l1(), 0.3, &params(0.3)).unwrap();
            let b = grid_search(&pop, &grid, &cfg, &l1(), 0.3, &params(0.3)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
