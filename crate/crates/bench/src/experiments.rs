//! Experiment drivers. Each `run_*` function is a pure function of its
//! configuration and returns the table the CLI writes.
//!
//! Replicate `r` uses the population drawn with seed `seed + r`; held-out
//! evaluation populations use [`test_seed`] of that. Any cell can
//! therefore be recomputed by calling the core modules directly with the
//! same seeds.

use anyhow::{bail, Result};
use causalstrat_core::align::{self, Adaptation, Role, UtilityParams};
use causalstrat_core::classify::{DecisionRule, ProbEstimator};
use causalstrat_core::math::{cross_entropy, MeanEstimate};
use causalstrat_core::respond::{adapt_population, CostSpec};
use causalstrat_core::risk::ce_decomposition;
use causalstrat_core::rng::mix64;
use causalstrat_core::scm::{sample_population, FeatureSampling, Population, ScmConfig};
use causalstrat_core::search::{
    fit_logistic_ce, fit_optimal_estimator, grid_search, grid_search_pooled, Axis, FeatureMask, FitConfig, FitMethod, GridSpec, Objective, PreparedPopulation,
};
use rayon::prelude::*;

use crate::config::ExperimentConfig;
use crate::ingest::{ingest_feature_csv, FeatureTable};
use crate::table::{CsvTable, Provenance};

pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    seed.wrapping_add(r as u64)
}

pub fn test_seed(seed: u64) -> u64 {
    mix64(seed ^ 0x7e57_5eed_0000_0001)
}

/// Source of populations for an experiment: sampled from the model, or
/// built around ingested features.
pub struct PopulationSource {
    scm: ScmConfig,
    n: usize,
    features: Option<FeatureTable>,
}

impl PopulationSource {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let mut scm = cfg.scm_config()?;
        let features = match &cfg.ingest {
            Some(ing) => {
                scm.sampling = FeatureSampling::Ingested;
                Some(ingest_feature_csv(&ing.path, &ing.xc_column, &ing.xs_column, ing.standardize)?)
            }
            None => {
                if scm.sampling == FeatureSampling::Ingested {
                    bail!("scm.sampling = ingested needs an [ingest] section");
                }
                None
            }
        };
        Ok(Self { scm, n: cfg.run.n, features })
    }

    pub fn scm(&self) -> &ScmConfig {
        &self.scm
    }

    pub fn with_scm(&self, scm: ScmConfig) -> Self {
        Self { scm, n: self.n, features: self.features.clone() }
    }

    pub fn draw(&self, seed: u64) -> Result<Population> {
        match &self.features {
            Some(f) => f.population(&self.scm, seed),
            None => Ok(sample_population(&self.scm, self.n, seed)?),
        }
    }
}

fn provenance(cfg: &ExperimentConfig) -> Provenance {
    Provenance::new(cfg.hash(), cfg.run.seed)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean 0-1 loss after agents with budget `delta` respond to `rule`, with
/// its standard error over agents.
pub fn post_adapt_loss(pop: &Population, scm: &ScmConfig, rule: &DecisionRule, cost: &CostSpec, delta: f64) -> Result<MeanEstimate> {
    let mut out = vec![0.0; pop.len()];
    match PreparedPopulation::new(pop, scm) {
        Ok(p) => {
            p.evaluate(rule, Objective::PostAdaptZeroOne, cost, delta, 0.0, Some(&mut out))?;
        }
        Err(_) => {
            let post = adapt_population(pop, rule, cost, delta, scm)?;
            for (o, a) in out.iter_mut().zip(post.iter()) {
                *o = f64::from(u8::from(rule.decide(&a.x)? != a.y));
            }
        }
    }
    Ok(MeanEstimate::of(&out))
}

/// Realized-label CE of `est` on `pop` with its standard error.
pub fn realized_ce(pop: &Population, est: &ProbEstimator) -> Result<MeanEstimate> {
    let v = pop
        .iter()
        .map(|a| Ok(cross_entropy(f64::from(u8::from(a.y)), est.predict_prob(&a.x)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MeanEstimate::of(&v))
}

fn fit(mask: FeatureMask) -> FitConfig {
    FitConfig { feature_mask: mask, method: FitMethod::Newton, ..FitConfig::default() }
}

/// Grid family: `All` searches `(a, b)`; `Causal` pins `a = 0`.
pub fn family_grid(cfg: &ExperimentConfig, mask: FeatureMask, objective: Objective) -> Result<GridSpec> {
    let g = cfg.grid_spec(objective)?;
    Ok(match mask {
        FeatureMask::All => g,
        FeatureMask::Causal => {
            let b = Axis::new(cfg.grid.b_min, cfg.grid.b_max, cfg.grid.step)?;
            GridSpec::slope(Axis::new(0.0, 0.0, 1.0)?, b, objective).with_tie(g.tie).with_screening(g.screening)
        }
    })
}

fn mask_code(m: FeatureMask) -> f64 {
    match m {
        FeatureMask::Causal => 0.0,
        FeatureMask::All => 1.0,
    }
}

/// Best post-adaptation rule per budget, averaged over replicates.
pub fn run_optimal_weights(cfg: &ExperimentConfig) -> Result<CsvTable> {
    cfg.validate()?;
    let src = PopulationSource::new(cfg)?;
    let cost = cfg.cost_spec()?;
    let params = cfg.utility_params()?;
    let grid = cfg.grid_spec(Objective::PostAdaptZeroOne)?;
    let reps = cfg.run.replicates;
    let jobs: Vec<(f64, usize)> = cfg.sweep.deltas.iter().flat_map(|&d| (0..reps).map(move |r| (d, r))).collect();
    let results = jobs
        .par_iter()
        .map(|&(d, r)| {
            let pop = src.draw(replicate_seed(cfg.run.seed, r))?;
            let g = grid_search(&pop, &grid, src.scm(), &cost, d, &params)?;
            Ok((g.best_params[0], g.best_params[1], g.best_value))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = CsvTable::new(["delta", "mean_abs_a", "std_abs_a", "mean_a", "mean_b", "mean_loss"]);
    for (i, &d) in cfg.sweep.deltas.iter().enumerate() {
        let chunk = &results[i * reps..(i + 1) * reps];
        let abs_a: Vec<f64> = chunk.iter().map(|c| c.0.abs()).collect();
        let (m, s) = mean_std(&abs_a);
        let k = reps as f64;
        t.push(vec![
            d,
            m,
            s,
            chunk.iter().map(|c| c.0).sum::<f64>() / k,
            chunk.iter().map(|c| c.1).sum::<f64>() / k,
            chunk.iter().map(|c| c.2).sum::<f64>() / k,
        ]);
    }
    t.provenance = provenance(cfg);
    Ok(t)
}

/// Trains each family at `delta_train` and redeploys it against agents
/// with budget `delta_test` on a held-out population.
pub fn run_robustness_matrix(cfg: &ExperimentConfig) -> Result<CsvTable> {
    cfg.validate()?;
    let src = PopulationSource::new(cfg)?;
    let cost = cfg.cost_spec()?;
    let params = cfg.utility_params()?;
    let reps = cfg.run.replicates;
    let families = [FeatureMask::Causal, FeatureMask::All];
    let jobs: Vec<(FeatureMask, f64, usize)> = families
        .iter()
        .flat_map(|&m| cfg.sweep.delta_train.iter().flat_map(move |&d| (0..reps).map(move |r| (m, d, r))))
        .collect();
    // per job: losses and squared standard errors for every delta_test
    let results = jobs
        .par_iter()
        .map(|&(mask, d_train, r)| {
            let seed = replicate_seed(cfg.run.seed, r);
            let train = src.draw(seed)?;
            let test = src.draw(test_seed(seed))?;
            let grid = family_grid(cfg, mask, Objective::PostAdaptZeroOne)?;
            let best = grid_search(&train, &grid, src.scm(), &cost, d_train, &params)?;
            cfg.sweep
                .delta_test
                .iter()
                .map(|&d_test| {
                    let m = post_adapt_loss(&test, src.scm(), &best.best, &cost, d_test)?;
                    Ok((m.mean, m.std_error))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = CsvTable::new(["family", "delta_train", "delta_test", "loss", "loss_se", "loss_std_replicates"]);
    let k = reps as f64;
    for (ji, chunk) in results.chunks(reps).enumerate() {
        let (mask, d_train, _) = jobs[ji * reps];
        for (ti, &d_test) in cfg.sweep.delta_test.iter().enumerate() {
            let losses: Vec<f64> = chunk.iter().map(|c| c[ti].0).collect();
            let (mean, sd) = mean_std(&losses);
            let se = chunk.iter().map(|c| c[ti].1.powi(2)).sum::<f64>().sqrt() / k;
            t.push(vec![mask_code(mask), d_train, d_test, mean, se, sd]);
        }
    }
    t.provenance = provenance(cfg);
    Ok(t)
}

/// Institution rules chosen assuming static agents (`h_pre`) and under true
/// adaptation (`h_post`) for each `epsilon`.
pub fn alignment_rules(pop: &Population, cfg: &ExperimentConfig, scm: &ScmConfig, cost: &CostSpec, epsilon: f64) -> Result<(DecisionRule, DecisionRule)> {
    let base = cfg.utility_params()?;
    let params = UtilityParams::new(base.delta, base.delta2, epsilon)?;
    let pre = grid_search(pop, &cfg.grid_spec(Objective::InstitutionUtility { strategic: false })?, scm, cost, params.delta, &params)?;
    let post = grid_search(pop, &cfg.grid_spec(Objective::InstitutionUtility { strategic: true })?, scm, cost, params.delta, &params)?;
    Ok((pre.best, post.best))
}

/// `(delta2, epsilon)` grid of agent utility under `h_pre`, under `h_post`
/// and their difference.
pub fn run_alignment_heatmap(cfg: &ExperimentConfig) -> Result<CsvTable> {
    cfg.validate()?;
    let src = PopulationSource::new(cfg)?;
    let cost = cfg.cost_spec()?;
    let pop = src.draw(cfg.run.seed)?;
    let delta = cfg.utility.delta;
    let rules = cfg
        .sweep
        .epsilons
        .par_iter()
        .map(|&eps| alignment_rules(&pop, cfg, src.scm(), &cost, eps))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, f64)> = (0..rules.len()).flat_map(|i| cfg.sweep.delta2s.iter().map(move |&d2| (i, d2))).collect();
    let rows = cells
        .par_iter()
        .map(|&(i, d2)| {
            let eps = cfg.sweep.epsilons[i];
            let (pre, post) = &rules[i];
            let params = UtilityParams::new(delta, d2, eps)?;
            let rp = |h: &DecisionRule| align::expected_utility(&pop, h, src.scm(), &cost, &params, Role::Agent, Adaptation::Strategic, None);
            let ri = |h: &DecisionRule| align::expected_utility(&pop, h, src.scm(), &cost, &params, Role::Institution, Adaptation::Strategic, None);
            let (rp_pre, rp_post) = (rp(pre)?, rp(post)?);
            let report = align::alignment_report(&pop, src.scm(), &cost, &params, pre, post)?;
            let (a_pre, b_pre) = pre.scorer.to_slope().unwrap_or((f64::NAN, f64::NAN));
            let (a_post, b_post) = post.scorer.to_slope().unwrap_or((f64::NAN, f64::NAN));
            Ok(vec![
                d2,
                eps,
                rp_pre,
                rp_post,
                report.delta_r_p,
                ri(post)? - ri(pre)?,
                report.delta2_bound,
                f64::from(u8::from(report.aligned)),
                a_pre,
                b_pre,
                a_post,
                b_post,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = CsvTable::new([
        "delta2", "epsilon", "rp_pre", "rp_post", "delta_rp", "delta_ri", "delta2_bound", "aligned", "a_pre", "b_pre", "a_post", "b_post",
    ]);
    rows.into_iter().for_each(|r| t.push(r));
    t.provenance = provenance(cfg);
    Ok(t)
}

/// Post-adaptation outcome of deploying a pre-adaptation fit of `mask`.
pub struct Deployment {
    pub f_hat: ProbEstimator,
    pub pop_post: Population,
}

pub fn deploy_fit(pop: &Population, scm: &ScmConfig, cost: &CostSpec, delta: f64, mask: FeatureMask) -> Result<Deployment> {
    let f_hat = fit_logistic_ce(pop, &fit(mask))?;
    let rule = f_hat.to_rule(0.5)?;
    let pop_post = adapt_population(pop, &rule, cost, delta, scm)?;
    Ok(Deployment { f_hat, pop_post })
}

/// `(delta, window)` grid of post-adaptation CE of the all-features fit
/// minus that of the causal fit; positive values favour the causal fit.
pub fn run_maxgap_heatmap(cfg: &ExperimentConfig) -> Result<CsvTable> {
    cfg.validate()?;
    let base = PopulationSource::new(cfg)?;
    let cost = cfg.cost_spec()?;
    let cells: Vec<(f64, f64)> = cfg.sweep.windows.iter().flat_map(|&w| cfg.sweep.deltas.iter().map(move |&d| (w, d))).collect();
    let rows = cells
        .par_iter()
        .map(|&(w, d)| {
            let scm = ScmConfig { ambiguity_window: Some(w), ..base.scm().clone() };
            let src = base.with_scm(scm);
            let pop = src.draw(cfg.run.seed)?;
            let spur = deploy_fit(&pop, src.scm(), &cost, d, FeatureMask::All)?;
            let caus = deploy_fit(&pop, src.scm(), &cost, d, FeatureMask::Causal)?;
            let ce_s = realized_ce(&spur.pop_post, &spur.f_hat)?;
            let ce_c = realized_ce(&caus.pop_post, &caus.f_hat)?;
            let se = (ce_s.std_error.powi(2) + ce_c.std_error.powi(2)).sqrt();
            Ok(vec![d, w, ce_s.mean, ce_c.mean, ce_s.mean - ce_c.mean, se])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = CsvTable::new(["delta", "window", "ce_spurious", "ce_causal", "ce_diff", "ce_diff_se"]);
    rows.into_iter().for_each(|r| t.push(r));
    t.provenance = provenance(cfg);
    Ok(t)
}

/// CE decomposition of both families' pre-adaptation fits after agents
/// respond, for each paired `(mu_s, mu_c)` and budget.
pub fn run_cost_sweep_decomposition(cfg: &ExperimentConfig) -> Result<CsvTable> {
    cfg.validate()?;
    let src = PopulationSource::new(cfg)?;
    if src.scm().d_c() != 1 || src.scm().d_s != 1 {
        bail!("cost sweep needs one causal and one spurious feature");
    }
    let norm = crate::config::parse_norm(&cfg.cost.norm)?;
    let pop = src.draw(cfg.run.seed)?;
    let fits = [FeatureMask::Causal, FeatureMask::All]
        .iter()
        .map(|&m| Ok((m, fit_logistic_ce(&pop, &fit(m))?)))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, usize, f64)> = (0..cfg.sweep.mu_s.len())
        .flat_map(|k| (0..fits.len()).flat_map(move |f| cfg.sweep.deltas.iter().map(move |&d| (k, f, d))))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(k, f, d)| {
            let (mu_s, mu_c) = (cfg.sweep.mu_s[k], cfg.sweep.mu_c[k]);
            let cost = CostSpec::new(norm, vec![mu_c, mu_s])?;
            let (mask, f_hat) = &fits[f];
            let rule = f_hat.to_rule(0.5)?;
            let post = adapt_population(&pop, &rule, &cost, d, src.scm())?;
            let f_star = fit_optimal_estimator(&post, src.scm(), *mask)?;
            let dec = ce_decomposition(&post, f_hat, &f_star, src.scm())?;
            let moved = post.iter().filter(|a| a.moved).count() as f64 / post.len() as f64;
            Ok(vec![
                mu_s,
                mu_c,
                d,
                mask_code(*mask),
                dec.incomplete_information,
                dec.transfer,
                dec.entropy,
                dec.total,
                dec.mc_std_error,
                moved,
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = CsvTable::new(["mu_s", "mu_c", "delta", "family", "incomplete", "transfer", "entropy", "total", "mc_std_error", "moved"]);
    rows.into_iter().for_each(|r| t.push(r));
    t.provenance = provenance(cfg);
    Ok(t)
}

/// Closed-form best spurious rule `(a, b)` of the uniform example, defined
/// for `delta <= sqrt(1/6)`.
pub fn analytic_spurious_rule(delta: f64) -> Option<(f64, f64)> {
    let r = 1.0 / 12.0 - 0.5 * delta * delta;
    (r >= 0.0).then(|| (-r.sqrt(), delta - 1.0 / 6.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseTransition {
    /// One row per swept budget.
    pub table: CsvTable,
    /// Analytic spurious and causal rule losses on a fine budget grid.
    pub curve: CsvTable,
    /// First budget where the analytic spurious rule stops beating the
    /// causal rule, linearly interpolated on `curve`.
    pub crossing: Option<f64>,
}

/// Step of the fine budget grid used for the crossing estimate.
pub const CROSSING_STEP: f64 = 0.005;

pub fn run_phase_transition(cfg: &ExperimentConfig) -> Result<PhaseTransition> {
    cfg.validate()?;
    let src = PopulationSource::new(cfg)?;
    let cost = cfg.cost_spec()?;
    let params = cfg.utility_params()?;
    let grid = cfg.grid_spec(Objective::PostAdaptZeroOne)?;
    let reps = cfg.run.replicates;
    let pops = (0..reps).into_par_iter().map(|r| src.draw(replicate_seed(cfg.run.seed, r))).collect::<Result<Vec<_>>>()?;
    let loss = |pop: &Population, rule: &DecisionRule, d: f64| post_adapt_loss(pop, src.scm(), rule, &cost, d).map(|m| m.mean);
    let causal = DecisionRule::slope(0.0, 0.0);
    // replicates are pooled into one landscape so near-ties are judged on all agents
    let rows = cfg
        .sweep
        .deltas
        .par_iter()
        .map(|&d| {
            let g = grid_search_pooled(&pops, &grid, src.scm(), &cost, d, &params)?;
            let mean = |rule: &DecisionRule| -> Result<f64> { Ok(pops.iter().map(|p| loss(p, rule, d)).sum::<Result<f64>>()? / reps as f64) };
            let (a_s, b_s) = analytic_spurious_rule(d).unwrap_or((f64::NAN, f64::NAN));
            let spur = if a_s.is_nan() { f64::NAN } else { mean(&DecisionRule::slope(a_s, b_s))? };
            Ok(vec![d, g.best_params[0], g.best_params[1], a_s, b_s, g.best_value, mean(&causal)?, spur])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut table = CsvTable::new(["delta", "best_a", "best_b", "a_spur", "b_spur", "loss_best", "loss_causal", "loss_spur"]);
    rows.into_iter().for_each(|r| table.push(r));
    let lo = cfg.sweep.deltas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = cfg.sweep.deltas.iter().copied().fold(f64::NEG_INFINITY, f64::max).min((1.0f64 / 6.0).sqrt());
    let fine: Vec<f64> = if hi >= lo {
        Axis::new(lo, hi, CROSSING_STEP)?.values().collect()
    } else {
        Vec::new()
    };
    let curve_rows = fine
        .par_iter()
        .map(|&d| {
            let (a, b) = analytic_spurious_rule(d).expect("fine grid stays in the analytic range");
            let rule = DecisionRule::slope(a, b);
            let mut s = 0.0;
            let mut c = 0.0;
            for p in &pops {
                s += loss(p, &rule, d)?;
                c += loss(p, &causal, d)?;
            }
            Ok(vec![d, s / reps as f64, c / reps as f64])
        })
        .collect::<Result<Vec<_>>>()?;
    let mut curve = CsvTable::new(["delta", "loss_spur", "loss_causal"]);
    curve_rows.into_iter().for_each(|r| curve.push(r));
    let crossing = crossing_point(&curve.rows);
    table.provenance = provenance(cfg);
    curve.provenance = table.provenance.clone();
    Ok(PhaseTransition { table, curve, crossing })
}

/// First sign change of `loss_spur - loss_causal` from negative to
/// non-negative over rows `[delta, loss_spur, loss_causal]`.
pub fn crossing_point(rows: &[Vec<f64>]) -> Option<f64> {
    rows.windows(2).find_map(|w| {
        let (d0, d1) = (w[0][1] - w[0][2], w[1][1] - w[1][2]);
        (d0 < 0.0 && d1 >= 0.0).then(|| w[0][0] + (w[1][0] - w[0][0]) * (-d0) / (d1 - d0))
    })
}
