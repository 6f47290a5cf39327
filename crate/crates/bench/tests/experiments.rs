//! Small-scale runs of every experiment, checked against direct calls into
//! the core crate.

use causalstrat_bench::config::{ExperimentConfig, ExperimentId};
use causalstrat_bench::experiments::*;
use causalstrat_core::align::{self, Adaptation, Role, UtilityParams};
use causalstrat_core::classify::DecisionRule;
use causalstrat_core::respond::{adapt_population, CostSpec};
use causalstrat_core::risk::{ce_decomposition, zero_one_loss};
use causalstrat_core::scm::sample_population;
use causalstrat_core::search::{fit_logistic_ce, fit_optimal_estimator, grid_search, FeatureMask, FitConfig, FitMethod, Objective};

fn small(id: ExperimentId) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(id);
    cfg.run.n = 2_000;
    cfg.run.replicates = 2;
    cfg.grid.a_min = -0.4;
    cfg.grid.a_max = 0.4;
    cfg.grid.b_min = -0.4;
    cfg.grid.b_max = 0.4;
    cfg.grid.step = 0.05;
    cfg
}

#[test]
fn optimal_weights_matches_direct_search() {
    let mut cfg = small(ExperimentId::OptimalWeights);
    cfg.sweep.deltas = vec![0.0, 0.5, 2.0];
    let t = run_optimal_weights(&cfg).unwrap();
    assert_eq!(t.rows.len(), 3);
    let scm = cfg.scm_config().unwrap();
    let grid = cfg.grid_spec(Objective::PostAdaptZeroOne).unwrap();
    let cost = cfg.cost_spec().unwrap();
    let params = cfg.utility_params().unwrap();
    let direct: Vec<f64> = (0..2)
        .map(|r| {
            let pop = sample_population(&scm, cfg.run.n, replicate_seed(cfg.run.seed, r)).unwrap();
            grid_search(&pop, &grid, &scm, &cost, 0.5, &params).unwrap().best_params[0].abs()
        })
        .collect();
    assert_eq!(t.rows[1][1], (direct[0] + direct[1]) / 2.0);
    assert!(t.rows.iter().all(|r| r[2] >= 0.0));
    assert!(t.provenance.config_sha256.len() == 64);
}

#[test]
fn optimal_weights_decay_past_max_gap() {
    let mut cfg = small(ExperimentId::OptimalWeights);
    cfg.run.n = 5_000;
    cfg.sweep.deltas = vec![0.0, 1.5];
    let t = run_optimal_weights(&cfg).unwrap();
    assert!(t.rows[0][1] > cfg.grid.step, "{:?}", t.rows);
    assert!(t.rows[1][1] <= cfg.grid.step, "{:?}", t.rows);
}

#[test]
fn identical_runs_under_different_thread_counts() {
    let mut cfg = small(ExperimentId::OptimalWeights);
    cfg.sweep.deltas = vec![0.25, 0.75];
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| run_optimal_weights(&cfg).unwrap());
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(|| run_optimal_weights(&cfg).unwrap());
    assert_eq!(one, three);
}

#[test]
fn robustness_matrix_cells_match_direct_evaluation() {
    let mut cfg = small(ExperimentId::RobustnessMatrix);
    cfg.sweep.delta_train = vec![0.5, 1.5];
    cfg.sweep.delta_test = vec![0.5, 1.5, 3.0];
    let t = run_robustness_matrix(&cfg).unwrap();
    assert_eq!(t.rows.len(), 2 * 2 * 3);
    // causal family trained past the max-gap stays exact
    for r in t.rows.iter().filter(|r| r[0] == 0.0 && r[1] == 1.5 && r[2] >= r[1]) {
        assert_eq!(r[3], 0.0, "{r:?}");
    }
    let scm = cfg.scm_config().unwrap();
    let cost = cfg.cost_spec().unwrap();
    let params = cfg.utility_params().unwrap();
    let grid = family_grid(&cfg, FeatureMask::All, Objective::PostAdaptZeroOne).unwrap();
    let mut losses = Vec::new();
    for r in 0..2 {
        let seed = replicate_seed(cfg.run.seed, r);
        let train = sample_population(&scm, cfg.run.n, seed).unwrap();
        let test = sample_population(&scm, cfg.run.n, test_seed(seed)).unwrap();
        let best = grid_search(&train, &grid, &scm, &cost, 0.5, &params).unwrap().best;
        losses.push(zero_one_loss(&adapt_population(&test, &best, &cost, 3.0, &scm).unwrap(), &best).unwrap());
    }
    let row = t.rows.iter().find(|r| r[0] == 1.0 && r[1] == 0.5 && r[2] == 3.0).unwrap();
    assert!((row[3] - (losses[0] + losses[1]) / 2.0).abs() < 1e-15);
}

#[test]
fn alignment_heatmap_identity_and_monotone_in_delta2() {
    let mut cfg = small(ExperimentId::AlignmentHeatmap);
    cfg.run.n = 4_000;
    cfg.sweep.delta2s = vec![0.0, 0.5, 1.0];
    cfg.sweep.epsilons = vec![0.0, 0.4];
    let t = run_alignment_heatmap(&cfg).unwrap();
    assert_eq!(t.rows.len(), 6);
    for r in &t.rows {
        assert!((r[3] - r[2] - r[4]).abs() <= 1e-12, "{r:?}");
    }
    let eps0: Vec<f64> = t.rows.iter().filter(|r| r[1] == 0.0).map(|r| r[4]).collect();
    assert!(eps0.windows(2).all(|w| w[1] >= w[0]));
    // a cell recomputed directly
    let scm = cfg.scm_config().unwrap();
    let cost = cfg.cost_spec().unwrap();
    let pop = sample_population(&scm, cfg.run.n, cfg.run.seed).unwrap();
    let (pre, post) = alignment_rules(&pop, &cfg, &scm, &cost, 0.0).unwrap();
    let p = UtilityParams::new(cfg.utility.delta, 0.5, 0.0).unwrap();
    let direct = align::h_change(&pop, &post, &pre, &scm, &cost, &p, Role::Agent, Adaptation::Strategic, None).unwrap();
    assert!((t.rows[1][4] - direct).abs() <= 1e-12);
}

#[test]
fn maxgap_heatmap_shapes() {
    let mut cfg = small(ExperimentId::MaxgapHeatmap);
    cfg.run.n = 20_000;
    cfg.sweep.windows = vec![0.0, 1.0];
    cfg.sweep.deltas = vec![0.0, 1.0, 3.0];
    let t = run_maxgap_heatmap(&cfg).unwrap();
    assert_eq!(t.rows.len(), 6);
    let get = |w: f64, d: f64| t.rows.iter().find(|r| r[1] == w && r[0] == d).unwrap().clone();
    // a closed window makes u irrelevant, so both fits agree
    for d in [0.0, 1.0, 3.0] {
        let r = get(0.0, d);
        assert!(r[4].abs() <= 3.0 * r[5], "{r:?}");
    }
    // a wide window: x_s helps before adaptation, less so after
    let (r0, r3) = (get(1.0, 0.0), get(1.0, 3.0));
    assert!(r0[4] < -3.0 * r0[5], "{r0:?}");
    assert!(r3[4] > r0[4], "{r3:?}");
    let scm = causalstrat_core::scm::ScmConfig { ambiguity_window: Some(1.0), ..cfg.scm_config().unwrap() };
    let pop = sample_population(&scm, cfg.run.n, cfg.run.seed).unwrap();
    let dep = deploy_fit(&pop, &scm, &cfg.cost_spec().unwrap(), 3.0, FeatureMask::All).unwrap();
    assert_eq!(realized_ce(&dep.pop_post, &dep.f_hat).unwrap().mean, r3[2]);
}

#[test]
fn cost_sweep_matches_direct_decomposition() {
    let mut cfg = small(ExperimentId::CostSweep);
    cfg.run.n = 5_000;
    cfg.sweep.deltas = vec![0.0, 1.0];
    let t = run_cost_sweep_decomposition(&cfg).unwrap();
    assert_eq!(t.rows.len(), 2 * 2 * 2);
    let scm = cfg.scm_config().unwrap();
    let pop = sample_population(&scm, cfg.run.n, cfg.run.seed).unwrap();
    let fit = FitConfig { method: FitMethod::Newton, ..FitConfig::default() };
    let f_hat = fit_logistic_ce(&pop, &fit).unwrap();
    let cost = CostSpec::new(causalstrat_core::respond::CostNorm::L2, vec![1.0, 0.001]).unwrap();
    let post = adapt_population(&pop, &f_hat.to_rule(0.5).unwrap(), &cost, 1.0, &scm).unwrap();
    let f_star = fit_optimal_estimator(&post, &scm, FeatureMask::All).unwrap();
    let d = ce_decomposition(&post, &f_hat, &f_star, &scm).unwrap();
    let row = t.rows.iter().find(|r| r[0] == 0.001 && r[2] == 1.0 && r[3] == 1.0).unwrap();
    assert_eq!(&row[4..9], &[d.incomplete_information, d.transfer, d.entropy, d.total, d.mc_std_error]);
    // causal family transfer stays small everywhere; cheap spurious moves hurt the all-features fit
    for r in t.rows.iter().filter(|r| r[3] == 0.0) {
        assert!(r[5] <= 3.0 * r[8] + 1e-3, "{r:?}");
    }
    let spur = t.rows.iter().find(|r| r[0] == 0.001 && r[2] == 1.0 && r[3] == 1.0).unwrap();
    let caus = t.rows.iter().find(|r| r[0] == 0.001 && r[2] == 1.0 && r[3] == 0.0).unwrap();
    assert!(spur[5] > caus[5] + 3.0 * spur[8], "{spur:?} {caus:?}");
}

#[test]
fn phase_transition_small_run() {
    let mut cfg = small(ExperimentId::PhaseTransition);
    cfg.run.n = 20_000;
    cfg.run.replicates = 1;
    cfg.grid.step = 0.02;
    cfg.sweep.deltas = vec![0.25, 0.4];
    let p = run_phase_transition(&cfg).unwrap();
    assert_eq!(p.table.rows.len(), 2);
    assert!(p.table.rows[0][1] < -0.1, "{:?}", p.table.rows);
    assert_eq!(p.curve.rows.first().unwrap()[0], 0.25);
    let c = p.crossing.unwrap();
    assert!((0.3..0.37).contains(&c), "{c}");
    let scm = cfg.scm_config().unwrap();
    let cost = cfg.cost_spec().unwrap();
    let pop = sample_population(&scm, cfg.run.n, cfg.run.seed).unwrap();
    let l = post_adapt_loss(&pop, &scm, &DecisionRule::slope(0.0, 0.0), &cost, 0.4).unwrap().mean;
    assert_eq!(p.table.rows[1][6], l);
}

#[test]
fn crossing_interpolates_first_sign_change() {
    let rows = vec![vec![0.1, 0.0, 1.0], vec![0.2, 1.0, 1.5], vec![0.3, 2.0, 1.0], vec![0.4, 0.0, 1.0]];
    let c = crossing_point(&rows).unwrap();
    assert!((c - (0.2 + 0.1 * 0.5 / 1.5)).abs() < 1e-12);
    assert_eq!(crossing_point(&rows[..2]), None);
}

#[test]
fn analytic_rule_domain() {
    let (a, b) = analytic_spurious_rule(0.3).unwrap();
    assert!((a + (1.0f64 / 12.0 - 0.045).sqrt()).abs() < 1e-15 && (b - (0.3 - 1.0 / 6.0)).abs() < 1e-15);
    assert!(analytic_spurious_rule(0.41).is_none());
}
