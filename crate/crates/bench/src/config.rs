//! Experiment configuration.
//!
//! The file format is TOML restricted to one level of `[section]` headers
//! holding `key = value` pairs (numbers, strings, booleans and flat arrays
//! of numbers). Keys missing from a file fall back to the preset of the
//! experiment being run, so a file only needs the values it changes.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use causalstrat_core::align::UtilityParams;
use causalstrat_core::respond::{CostNorm, CostSpec};
use causalstrat_core::scm::{FeatureSampling, OutcomeMode, PostNoise, ScmConfig};
use causalstrat_core::search::{Axis, GridSpec, Objective, Screening, TieTolerance};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    OptimalWeights,
    RobustnessMatrix,
    AlignmentHeatmap,
    MaxgapHeatmap,
    CostSweep,
    PhaseTransition,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::OptimalWeights,
        ExperimentId::RobustnessMatrix,
        ExperimentId::AlignmentHeatmap,
        ExperimentId::MaxgapHeatmap,
        ExperimentId::CostSweep,
        ExperimentId::PhaseTransition,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::OptimalWeights => "optimal-weights",
            ExperimentId::RobustnessMatrix => "robustness-matrix",
            ExperimentId::AlignmentHeatmap => "alignment-heatmap",
            ExperimentId::MaxgapHeatmap => "maxgap-heatmap",
            ExperimentId::CostSweep => "cost-sweep",
            ExperimentId::PhaseTransition => "phase-transition",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub id: ExperimentId,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScmSection {
    pub p_u: f64,
    pub sigma_c: f64,
    pub w_u_to_s: f64,
    pub sigma_s: f64,
    pub w_c: Vec<f64>,
    pub w_u: f64,
    pub b: f64,
    pub d_s: usize,
    /// `deterministic` or `stochastic`.
    pub outcome: String,
    pub temperature: f64,
    /// Gate half-width on `x_c`; absent means `u` always enters the score.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    /// `gaussian`, `uniform-example` or `ingested`.
    pub sampling: String,
    /// `resample` or `hold`.
    pub post_noise: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    /// `l1`, `l2` or `linf`.
    pub norm: String,
    /// One weight per feature, causal features first.
    pub mu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilitySection {
    pub delta: f64,
    pub delta2: f64,
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub a_min: f64,
    pub a_max: f64,
    pub b_min: f64,
    pub b_max: f64,
    pub step: f64,
    /// Paired standard errors within which the best cell with `a = 0` beats
    /// the minimum; `0` means exact ties only.
    pub tie_z: f64,
    /// Subsample size for two-stage screening; `0` scores every cell on
    /// the full population.
    pub screen_sample: usize,
    pub screen_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub deltas: Vec<f64>,
    pub delta_train: Vec<f64>,
    pub delta_test: Vec<f64>,
    pub delta2s: Vec<f64>,
    pub epsilons: Vec<f64>,
    /// Paired with `mu_c` element-wise.
    pub mu_s: Vec<f64>,
    pub mu_c: Vec<f64>,
    pub windows: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSection {
    pub path: PathBuf,
    pub xc_column: String,
    pub xs_column: String,
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run: RunSection,
    pub scm: ScmSection,
    pub cost: CostSection,
    pub utility: UtilitySection,
    pub grid: GridSection,
    pub sweep: SweepSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ingest: Option<IngestSection>,
}

fn gaussian_scm() -> ScmSection {
    ScmSection {
        p_u: 0.5,
        sigma_c: 1.0,
        w_u_to_s: 1.0,
        sigma_s: 0.5,
        w_c: vec![1.0],
        w_u: 1.0,
        b: 0.0,
        d_s: 1,
        outcome: "deterministic".into(),
        temperature: 1.0,
        window: None,
        sampling: "gaussian".into(),
        post_noise: "resample".into(),
    }
}

fn uniform_scm() -> ScmSection {
    ScmSection { w_u: 0.5, sampling: "uniform-example".into(), ..gaussian_scm() }
}

impl ExperimentConfig {
    /// Defaults for each experiment.
    pub fn preset(id: ExperimentId) -> Self {
        let base = Self {
            run: RunSection { id, n: 20_000, replicates: 3, seed: 1, out: PathBuf::from("out") },
            scm: gaussian_scm(),
            cost: CostSection { norm: "l2".into(), mu: vec![1.0, 1.0] },
            utility: UtilitySection { delta: 0.5, delta2: 0.0, epsilon: 0.0 },
            grid: GridSection { a_min: -1.0, a_max: 1.0, b_min: -1.0, b_max: 1.0, step: 0.02, tie_z: 0.0, screen_sample: 0, screen_z: 5.0 },
            sweep: SweepSection {
                deltas: vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5],
                delta_train: vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.5],
                delta_test: vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0],
                delta2s: (0..=20).map(|i| i as f64 / 20.0).collect(),
                epsilons: vec![0.0, 0.1, 0.2, 0.4, 0.8, 1.6],
                mu_s: vec![0.001, 1.0],
                mu_c: vec![1.0, 0.001],
                windows: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            },
            ingest: None,
        };
        match id {
            // a sharper proxy for u, so the all-features rule leans on x_s
            ExperimentId::OptimalWeights | ExperimentId::RobustnessMatrix => {
                Self { scm: ScmSection { sigma_s: 0.25, ..gaussian_scm() }, ..base }
            }
            ExperimentId::AlignmentHeatmap => Self {
                run: RunSection { n: 20_000, replicates: 1, ..base.run },
                scm: uniform_scm(),
                cost: CostSection { norm: "l1".into(), mu: vec![1.0, 1.0] },
                grid: GridSection { a_min: -0.5, a_max: 0.5, b_min: -0.5, b_max: 0.5, step: 0.02, tie_z: 0.0, screen_sample: 0, screen_z: 5.0 },
                ..base
            },
            ExperimentId::MaxgapHeatmap => Self {
                run: RunSection { n: 50_000, replicates: 1, ..base.run },
                scm: ScmSection { outcome: "stochastic".into(), temperature: 0.25, w_u: 1.0, ..gaussian_scm() },
                sweep: SweepSection { deltas: vec![0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0], ..base.sweep },
                ..base
            },
            ExperimentId::CostSweep => Self {
                run: RunSection { n: 50_000, replicates: 1, ..base.run },
                scm: ScmSection { outcome: "stochastic".into(), temperature: 0.25, ..gaussian_scm() },
                sweep: SweepSection { deltas: vec![0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0], ..base.sweep },
                ..base
            },
            ExperimentId::PhaseTransition => Self {
                run: RunSection { n: 200_000, replicates: 3, ..base.run },
                scm: uniform_scm(),
                cost: CostSection { norm: "l1".into(), mu: vec![1.0, 1.0] },
                grid: GridSection { a_min: -0.5, a_max: 0.5, b_min: -0.5, b_max: 0.5, step: 0.01, tie_z: 3.0, screen_sample: 20_000, screen_z: 5.0 },
                sweep: SweepSection {
                    deltas: vec![0.0, 0.1, 0.2, 0.25, 0.3, 0.33, 0.36, 0.4, 0.45, 0.5],
                    ..base.sweep
                },
                ..base
            },
        }
    }

    /// Parses `text` over the preset of the experiment named in it (or
    /// `default_id` when `[run].id` is absent).
    pub fn from_toml(text: &str, default_id: ExperimentId) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        for (k, v) in &user {
            if !v.is_table() {
                bail!("top-level key `{k}` must be inside a [section]");
            }
        }
        let id = user
            .get("run")
            .and_then(|r| r.get("id"))
            .map(|v| v.clone().try_into::<ExperimentId>())
            .transpose()
            .context("unknown experiment id")?
            .unwrap_or(default_id);
        let mut merged = toml::Table::try_from(Self::preset(id))?;
        for (section, body) in user {
            let body = body.as_table().cloned().unwrap_or_default();
            match merged.get_mut(&section).and_then(|v| v.as_table_mut()) {
                Some(dst) => dst.extend(body),
                None => {
                    merged.insert(section, toml::Value::Table(body));
                }
            }
        }
        let cfg: Self = toml::Value::Table(merged).try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, default_id: ExperimentId) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text, default_id)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.run.n == 0 {
            bail!("run.n must be positive");
        }
        if self.run.replicates == 0 {
            bail!("run.replicates must be at least 1");
        }
        let s = &self.sweep;
        let axes: [(&str, &Vec<f64>); 8] = [
            ("deltas", &s.deltas),
            ("delta_train", &s.delta_train),
            ("delta_test", &s.delta_test),
            ("delta2s", &s.delta2s),
            ("epsilons", &s.epsilons),
            ("mu_s", &s.mu_s),
            ("mu_c", &s.mu_c),
            ("windows", &s.windows),
        ];
        for (name, v) in axes {
            if v.is_empty() {
                bail!("sweep.{name} must not be empty");
            }
        }
        if s.mu_s.len() != s.mu_c.len() {
            bail!("sweep.mu_s and sweep.mu_c must have equal length");
        }
        self.scm_config()?.validate()?;
        self.cost_spec()?;
        self.grid_spec(Objective::PostAdaptZeroOne)?;
        self.utility_params()?;
        Ok(())
    }

    pub fn scm_config(&self) -> Result<ScmConfig> {
        let s = &self.scm;
        let outcome_mode = match s.outcome.as_str() {
            "deterministic" => OutcomeMode::Deterministic,
            "stochastic" => OutcomeMode::Stochastic,
            o => bail!("scm.outcome must be deterministic or stochastic, got `{o}`"),
        };
        let sampling = match s.sampling.as_str() {
            "gaussian" => FeatureSampling::Gaussian,
            "uniform-example" => FeatureSampling::UniformExample,
            "ingested" => FeatureSampling::Ingested,
            o => bail!("scm.sampling must be gaussian, uniform-example or ingested, got `{o}`"),
        };
        let post_noise = match s.post_noise.as_str() {
            "resample" => PostNoise::Resample,
            "hold" => PostNoise::Hold,
            o => bail!("scm.post_noise must be resample or hold, got `{o}`"),
        };
        Ok(ScmConfig {
            p_u: s.p_u,
            sigma_c: s.sigma_c,
            w_u_to_s: s.w_u_to_s,
            sigma_s: s.sigma_s,
            w_c: s.w_c.clone(),
            w_u: s.w_u,
            b: s.b,
            d_s: s.d_s,
            outcome_mode,
            sigmoid_temperature: s.temperature,
            ambiguity_window: s.window,
            sampling,
            post_noise,
        })
    }

    pub fn cost_spec(&self) -> Result<CostSpec> {
        let norm = parse_norm(&self.cost.norm)?;
        let dim = self.scm.w_c.len() + self.scm.d_s;
        if self.cost.mu.len() != dim {
            bail!("cost.mu needs {dim} weights, got {}", self.cost.mu.len());
        }
        Ok(CostSpec::new(norm, self.cost.mu.clone())?)
    }

    pub fn utility_params(&self) -> Result<UtilityParams> {
        let u = &self.utility;
        Ok(UtilityParams::new(u.delta, u.delta2, u.epsilon)?)
    }

    pub fn grid_spec(&self, objective: Objective) -> Result<GridSpec> {
        let g = &self.grid;
        let tie = if g.tie_z > 0.0 { TieTolerance::PreferCausal(g.tie_z) } else { TieTolerance::Exact };
        let screening = (g.screen_sample > 0).then_some(Screening { sample: g.screen_sample, z: g.screen_z });
        Ok(GridSpec::slope(Axis::new(g.a_min, g.a_max, g.step)?, Axis::new(g.b_min, g.b_max, g.step)?, objective)
            .with_tie(tie)
            .with_screening(screening))
    }
}

pub fn parse_norm(s: &str) -> Result<CostNorm> {
    Ok(match s {
        "l1" => CostNorm::L1,
        "l2" => CostNorm::L2,
        "linf" => CostNorm::LInf,
        o => bail!("cost.norm must be l1, l2 or linf, got `{o}`"),
    })
}

/// Annotated default configuration for `id`.
pub fn example_config(id: ExperimentId) -> String {
    let cfg = ExperimentConfig::preset(id);
    let mut out = String::new();
    out.push_str(&format!("# Defaults for `{}`. Every key is optional; omitted keys keep these values.\n", id.name()));
    out.push_str("# [run]      n agents per replicate, replicates, base seed, output directory\n");
    out.push_str("# [scm]      generative model; outcome = deterministic | stochastic,\n");
    out.push_str("#            sampling = gaussian | uniform-example | ingested, post_noise = resample | hold,\n");
    out.push_str("#            window = gate half-width on x_c (omit for an ungated latent)\n");
    out.push_str("# [cost]     norm = l1 | l2 | linf, mu = per-feature weights (causal first)\n");
    out.push_str("# [utility]  delta = budget and gain, delta2 = agent FP penalty, epsilon = institution TN penalty\n");
    out.push_str("# [grid]     slope-form grid x_c >= a x_s + b; tie_z > 0 picks the best a = 0 cell when it is\n");
    out.push_str("#            within tie_z paired standard errors of the minimum; screen_sample > 0 first scores every cell\n");
    out.push_str("#            on that many agents and keeps cells within screen_z paired standard errors\n");
    out.push_str("# [sweep]    axes swept by the experiments\n");
    out.push_str("# [ingest]   optional: path, xc_column, xs_column, standardize (replaces sampled features)\n\n");
    out.push_str(&cfg.to_toml());
    out
}
