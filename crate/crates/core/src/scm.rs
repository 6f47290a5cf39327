//! The generative model: a latent binary confounder `U` drives the spurious
//! features, the outcome depends only on the causal features and `U`.
//!
//! ```text
//! u   ~ Bernoulli(p_u)
//! x_c ~ N(0, sigma_c^2)           (per dimension)
//! x_s = w_{u->s} u + eps_s,  eps_s ~ N(0, sigma_s^2)
//! y_sco = w_c . x_c + w_u u + b
//! y = 1{y_sco >= 0}  or  y ~ Bernoulli(sigmoid(y_sco / tau))
//! ```

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math::{self, sigmoid};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeMode {
    Deterministic,
    Stochastic,
}

/// How observed features are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureSampling {
    /// Gaussian causal features and a Gaussian shift of the spurious ones.
    Gaussian,
    /// The uniform worked example: `x_c ~ U(-1, 1)`, `x_s ~ U(-1 + u, 1 + u)`.
    UniformExample,
    /// Features come from an external table; `u ~ Bernoulli(sigmoid(sum x_s))`.
    Ingested,
}

/// Whether exogenous outcome noise is redrawn after an agent moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostNoise {
    Resample,
    Hold,
}

/// Conditioning set for Bayes-optimal probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Conditioning {
    Causal,
    AllFeatures,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScmConfig {
    pub p_u: f64,
    pub sigma_c: f64,
    pub w_u_to_s: f64,
    pub sigma_s: f64,
    pub w_c: Vec<f64>,
    pub w_u: f64,
    pub b: f64,
    /// Number of spurious features; each gets the same `w_{u->s}` shift.
    pub d_s: usize,
    pub outcome_mode: OutcomeMode,
    pub sigmoid_temperature: f64,
    /// When set, `u` only enters the score for `x_c` in `(-window, 0)`.
    pub ambiguity_window: Option<f64>,
    pub sampling: FeatureSampling,
    pub post_noise: PostNoise,
}

impl Default for ScmConfig {
    fn default() -> Self {
        Self {
            p_u: 0.5,
            sigma_c: 1.0,
            w_u_to_s: 1.0,
            sigma_s: 0.5,
            w_c: alloc::vec![1.0],
            w_u: 1.0,
            b: 0.0,
            d_s: 1,
            outcome_mode: OutcomeMode::Deterministic,
            sigmoid_temperature: 1.0,
            ambiguity_window: None,
            sampling: FeatureSampling::Gaussian,
            post_noise: PostNoise::Resample,
        }
    }
}

impl ScmConfig {
    /// The uniform worked example: `y = 1{x_c + 0.5 u >= 0}`, `p_u = 0.5`.
    pub fn uniform_example() -> Self {
        Self {
            p_u: 0.5,
            w_c: alloc::vec![1.0],
            w_u: 0.5,
            b: 0.0,
            d_s: 1,
            sampling: FeatureSampling::UniformExample,
            outcome_mode: OutcomeMode::Deterministic,
            ..Self::default()
        }
    }

    pub fn d_c(&self) -> usize {
        self.w_c.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(0.0..=1.0).contains(&self.p_u) {
            return bad("p_u must lie in [0, 1]");
        }
        if !(self.sigma_c > 0.0) || !(self.sigma_s > 0.0) {
            return bad("sigma_c and sigma_s must be positive");
        }
        if !(self.sigmoid_temperature > 0.0) {
            return bad("sigmoid_temperature must be positive");
        }
        if self.w_c.is_empty() {
            return bad("at least one causal feature is required");
        }
        if self.d_s == 0 {
            return bad("at least one spurious feature is required");
        }
        if let Some(w) = self.ambiguity_window {
            if !(w >= 0.0) {
                return bad("ambiguity_window must be non-negative");
            }
            if self.d_c() != 1 {
                return Err(Error::GatedNeedsScalar(self.d_c()));
            }
        }
        if self.sampling == FeatureSampling::UniformExample && (self.d_c() != 1 || self.d_s != 1) {
            return bad("the uniform example has exactly one causal and one spurious feature");
        }
        if self.w_c.iter().chain([&self.w_u, &self.b]).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig(format!("non-finite weights in {:?}", self.w_c)));
        }
        Ok(())
    }

    /// `y_sco` without dimension checks. `x_c.len()` must equal `d_c`.
    #[inline]
    pub(crate) fn score_unchecked(&self, x_c: &[f64], u: u8) -> f64 {
        let lin = math::dot(&self.w_c, x_c);
        let u_eff = match self.ambiguity_window {
            Some(w) if !(x_c[0] > -w && x_c[0] < 0.0) => 0.0,
            _ => f64::from(u),
        };
        lin + self.w_u * u_eff + self.b
    }

    /// `E[Y | x_c, u]`: an indicator in deterministic mode.
    #[inline]
    pub(crate) fn outcome_mean_unchecked(&self, x_c: &[f64], u: u8) -> f64 {
        let s = self.score_unchecked(x_c, u);
        match self.outcome_mode {
            OutcomeMode::Deterministic => f64::from(u8::from(s >= 0.0)),
            OutcomeMode::Stochastic => sigmoid(s / self.sigmoid_temperature),
        }
    }

    #[inline]
    pub(crate) fn realize_unchecked(&self, x_c: &[f64], u: u8, noise: f64) -> bool {
        let s = self.score_unchecked(x_c, u);
        match self.outcome_mode {
            OutcomeMode::Deterministic => s >= 0.0,
            OutcomeMode::Stochastic => noise < sigmoid(s / self.sigmoid_temperature),
        }
    }

    fn check_causal(&self, x_c: &[f64]) -> Result<()> {
        if x_c.len() != self.d_c() {
            return Err(Error::DimensionMismatch { expected: self.d_c(), got: x_c.len() });
        }
        if self.ambiguity_window.is_some() && x_c.len() != 1 {
            return Err(Error::GatedNeedsScalar(x_c.len()));
        }
        Ok(())
    }

    /// `P(U = 1 | x_s)` under the pre-adaptation model.
    pub fn latent_posterior(&self, x_s: &[f64]) -> Result<f64> {
        if x_s.len() != self.d_s {
            return Err(Error::DimensionMismatch { expected: self.d_s, got: x_s.len() });
        }
        let p = self.p_u;
        Ok(match self.sampling {
            FeatureSampling::Gaussian => {
                // log N(x; w, s^2) - log N(x; 0, s^2), summed over dimensions
                let w = self.w_u_to_s;
                let var = self.sigma_s * self.sigma_s;
                let llr: f64 = x_s.iter().map(|x| (2.0 * x * w - w * w) / (2.0 * var)).sum();
                if p == 0.0 || p == 1.0 {
                    p
                } else {
                    sigmoid(llr + math::logit(p))
                }
            }
            FeatureSampling::UniformExample => {
                let x = x_s[0];
                let l1 = if (0.0..2.0).contains(&x) { p } else { 0.0 };
                let l0 = if (-1.0..1.0).contains(&x) { 1.0 - p } else { 0.0 };
                if l0 + l1 == 0.0 {
                    p
                } else {
                    l1 / (l0 + l1)
                }
            }
            FeatureSampling::Ingested => sigmoid(x_s.iter().sum()),
        })
    }

    /// Bayes-optimal `P(Y = 1 | x)` under the pre-adaptation distribution.
    /// `X_c` is independent of `(U, X_s)` before adaptation, so conditioning
    /// on `x_c` alone mixes over the prior and on all features over
    /// `P(u | x_s)`.
    pub fn bayes_probability(&self, x: &Features, conditioning: Conditioning) -> Result<f64> {
        self.check_causal(&x.causal)?;
        let p1 = match conditioning {
            Conditioning::Causal => match self.sampling {
                // ingested x_c and x_s are not independent; fall back to the marginal of u
                FeatureSampling::Ingested => return Err(Error::Unsupported("causal Bayes posterior for ingested features")),
                _ => self.p_u,
            },
            Conditioning::AllFeatures => self.latent_posterior(&x.spurious)?,
        };
        let g0 = self.outcome_mean_unchecked(&x.causal, 0);
        let g1 = self.outcome_mean_unchecked(&x.causal, 1);
        Ok(p1 * g1 + (1.0 - p1) * g0)
    }
}

/// Observed features of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    pub causal: Vec<f64>,
    pub spurious: Vec<f64>,
}

impl Features {
    pub fn new(causal: Vec<f64>, spurious: Vec<f64>) -> Self {
        Self { causal, spurious }
    }

    /// One causal and one spurious coordinate.
    pub fn scalar(x_c: f64, x_s: f64) -> Self {
        Self { causal: alloc::vec![x_c], spurious: alloc::vec![x_s] }
    }

    pub fn dim(&self) -> usize {
        self.causal.len() + self.spurious.len()
    }

    /// Coordinate `j` of the concatenation `(x_c, x_s)`.
    #[inline]
    pub fn get(&self, j: usize) -> f64 {
        let dc = self.causal.len();
        if j < dc {
            self.causal[j]
        } else {
            self.spurious[j - dc]
        }
    }

    #[inline]
    pub fn get_mut(&mut self, j: usize) -> &mut f64 {
        let dc = self.causal.len();
        if j < dc {
            &mut self.causal[j]
        } else {
            &mut self.spurious[j - dc]
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.causal.iter().chain(&self.spurious).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: u64,
    pub x: Features,
    pub u: u8,
    pub y: bool,
    /// Set by adaptation: whether the agent moved in the last step.
    pub moved: bool,
    /// Cost paid in the last adaptation step.
    pub cost: f64,
}

impl Agent {
    pub fn new(id: u64, x: Features, u: u8, y: bool) -> Self {
        Self { id, x, u, y, moved: false, cost: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub agents: Vec<Agent>,
    pub seed: u64,
    /// 0 before any adaptation, incremented by each adaptation step.
    pub generation: u32,
}

impl Population {
    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn iter(&self) -> core::slice::Iter<'_, Agent> {
        self.agents.iter()
    }

    pub fn positive_rate(&self) -> f64 {
        self.agents.iter().filter(|a| a.y).count() as f64 / self.len() as f64
    }

    /// Exogenous uniform used for the outcome of `agent` at generation
    /// `generation` (0 = the original draw).
    pub fn outcome_noise(&self, agent_id: u64, generation: u32) -> f64 {
        outcome_noise(self.seed, agent_id, generation)
    }
}

pub(crate) fn outcome_noise(seed: u64, id: u64, generation: u32) -> f64 {
    let purpose = if generation == 0 { Purpose::Outcome } else { Purpose::PostOutcome(generation) };
    rng::stream(seed, id, purpose).random::<f64>()
}

/// Noise used when re-realizing an outcome after step `generation`.
pub(crate) fn post_noise(cfg: &ScmConfig, seed: u64, id: u64, generation: u32) -> f64 {
    match cfg.post_noise {
        PostNoise::Resample => outcome_noise(seed, id, generation),
        PostNoise::Hold => outcome_noise(seed, id, 0),
    }
}

pub fn y_score(x_c: &[f64], u: u8, cfg: &ScmConfig) -> Result<f64> {
    cfg.check_causal(x_c)?;
    Ok(cfg.score_unchecked(x_c, u))
}

/// `sigmoid(y_sco / tau)`; only defined for stochastic outcomes.
pub fn outcome_probability(x_c: &[f64], u: u8, cfg: &ScmConfig) -> Result<f64> {
    if cfg.outcome_mode != OutcomeMode::Stochastic {
        return Err(Error::Contract("outcome_probability requires stochastic outcomes"));
    }
    Ok(sigmoid(y_score(x_c, u, cfg)? / cfg.sigmoid_temperature))
}

/// `E[Y | x_c, u]` in either mode.
pub fn outcome_mean(x_c: &[f64], u: u8, cfg: &ScmConfig) -> Result<f64> {
    cfg.check_causal(x_c)?;
    Ok(cfg.outcome_mean_unchecked(x_c, u))
}

pub fn realize_outcome(x_c: &[f64], u: u8, cfg: &ScmConfig, noise: f64) -> Result<bool> {
    cfg.check_causal(x_c)?;
    Ok(cfg.realize_unchecked(x_c, u, noise))
}

/// Outcome after moving `agent` to `x_new`, holding its latent fixed.
/// Spurious coordinates of `x_new` are ignored.
pub fn counterfactual_outcome(agent: &Agent, x_new: &Features, cfg: &ScmConfig, fresh_noise: f64) -> Result<bool> {
    if x_new.spurious.len() != agent.x.spurious.len() {
        return Err(Error::DimensionMismatch { expected: agent.x.spurious.len(), got: x_new.spurious.len() });
    }
    realize_outcome(&x_new.causal, agent.u, cfg, fresh_noise)
}

fn sample_agent(cfg: &ScmConfig, seed: u64, id: u64) -> Agent {
    let u = u8::from(rng::stream(seed, id, Purpose::Latent).random::<f64>() < cfg.p_u);
    let mut rc = rng::stream(seed, id, Purpose::Causal);
    let mut rs = rng::stream(seed, id, Purpose::Spurious);
    let (causal, spurious): (Vec<f64>, Vec<f64>) = match cfg.sampling {
        FeatureSampling::UniformExample => {
            let xc = -1.0 + 2.0 * rc.random::<f64>();
            let xs = -1.0 + f64::from(u) + 2.0 * rs.random::<f64>();
            (alloc::vec![xc], alloc::vec![xs])
        }
        _ => {
            let xc = (0..cfg.d_c()).map(|_| cfg.sigma_c * rc.sample::<f64, _>(StandardNormal)).collect();
            let xs = (0..cfg.d_s)
                .map(|_| cfg.w_u_to_s * f64::from(u) + cfg.sigma_s * rs.sample::<f64, _>(StandardNormal))
                .collect();
            (xc, xs)
        }
    };
    let y = cfg.realize_unchecked(&causal, u, outcome_noise(seed, id, 0));
    Agent::new(id, Features { causal, spurious }, u, y)
}

/// Draws `n` agents with ids `0..n`. Pure in `(cfg, n, seed)`.
pub fn sample_population(cfg: &ScmConfig, n: usize, seed: u64) -> Result<Population> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::EmptyPopulation);
    }
    if cfg.sampling == FeatureSampling::Ingested {
        return Err(Error::Unsupported("ingested features must be supplied by the caller"));
    }
    let agents = (0..n as u64).map(|id| sample_agent(cfg, seed, id)).collect();
    Ok(Population { agents, seed, generation: 0 })
}

/// Builds a population around externally observed features: the latent is
/// drawn as `u ~ Bernoulli(sigmoid(sum x_s))` and the outcome from `cfg`.
pub fn synthesize_outcomes(features: Vec<Features>, cfg: &ScmConfig, seed: u64) -> Result<Population> {
    cfg.validate()?;
    if features.is_empty() {
        return Err(Error::EmptyPopulation);
    }
    let mut agents = Vec::with_capacity(features.len());
    for (id, x) in features.into_iter().enumerate() {
        let id = id as u64;
        cfg.check_causal(&x.causal)?;
        if x.spurious.len() != cfg.d_s {
            return Err(Error::DimensionMismatch { expected: cfg.d_s, got: x.spurious.len() });
        }
        let p = sigmoid(x.spurious.iter().sum());
        let u = u8::from(rng::stream(seed, id, Purpose::IngestLatent).random::<f64>() < p);
        let y = cfg.realize_unchecked(&x.causal, u, outcome_noise(seed, id, 0));
        agents.push(Agent::new(id, x, u, y));
    }
    Ok(Population { agents, seed, generation: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn cfg(w_c: f64, w_u: f64, b: f64) -> ScmConfig {
        ScmConfig { w_c: alloc::vec![w_c], w_u, b, ..ScmConfig::default() }
    }

    #[test]
    fn y_score_examples() {
        assert_eq!(y_score(&[0.0], 0, &cfg(1.0, 0.5, 0.0)).unwrap(), 0.0);
        assert_relative_eq!(y_score(&[-0.4], 1, &cfg(1.0, 0.5, 0.0)).unwrap(), 0.1, epsilon = 1e-15);
        let gated = ScmConfig { ambiguity_window: Some(0.3), ..cfg(1.0, 1.0, 0.0) };
        assert_eq!(y_score(&[-0.5], 1, &gated).unwrap(), -0.5);
        assert_relative_eq!(y_score(&[-0.1], 1, &gated).unwrap(), 0.9, epsilon = 1e-15);
    }

    #[test]
    fn y_score_errors() {
        let c = cfg(1.0, 0.5, 0.0);
        assert_eq!(y_score(&[0.0, 1.0], 0, &c), Err(Error::DimensionMismatch { expected: 1, got: 2 }));
        let gated = ScmConfig { w_c: alloc::vec![1.0, 1.0], ambiguity_window: Some(0.3), ..c };
        assert_eq!(y_score(&[0.0, 1.0], 0, &gated), Err(Error::GatedNeedsScalar(2)));
        assert_eq!(gated.validate(), Err(Error::GatedNeedsScalar(2)));
    }

    #[test]
    fn outcome_probability_examples() {
        let mut c = cfg(1.0, 0.0, 0.0);
        assert!(matches!(outcome_probability(&[0.0], 0, &c), Err(Error::Contract(_))));
        c.outcome_mode = OutcomeMode::Stochastic;
        assert_eq!(outcome_probability(&[0.0], 0, &c).unwrap(), 0.5);
        assert!(outcome_probability(&[1e6], 0, &c).unwrap() > 1.0 - 1e-12);
        assert_relative_eq!(outcome_probability(&[1.0], 0, &c).unwrap(), 1.0 / (1.0 + (-1.0f64).exp()), epsilon = 1e-15);
        c.sigmoid_temperature = 2.0;
        assert_relative_eq!(outcome_probability(&[1.0], 0, &c).unwrap(), 1.0 / (1.0 + (-0.5f64).exp()), epsilon = 1e-15);
    }

    #[test]
    fn realize_outcome_examples() {
        let det = cfg(1.0, 0.0, 0.0);
        assert!(!realize_outcome(&[-0.01], 0, &det, 0.0).unwrap());
        assert!(realize_outcome(&[0.0], 0, &det, 0.99).unwrap());
        let sto = ScmConfig { outcome_mode: OutcomeMode::Stochastic, ..det };
        // g = sigmoid(1) = 0.7311
        assert!(!realize_outcome(&[1.0], 0, &sto, 0.9).unwrap());
        assert!(realize_outcome(&[1.0], 0, &sto, 0.7).unwrap());
    }

    #[test]
    fn counterfactual_examples() {
        let c = cfg(1.0, 0.5, 0.0);
        let agent = Agent::new(0, Features::scalar(-0.3, 0.2), 1, true);
        let shifted = Features::scalar(-0.3, 5.2);
        assert_eq!(counterfactual_outcome(&agent, &shifted, &c, 0.5).unwrap(), agent.y);

        let low = Agent::new(1, Features::scalar(-0.7, 0.0), 0, false);
        assert!(counterfactual_outcome(&low, &Features::scalar(0.0, 0.0), &c, 0.5).unwrap());

        let amb = Agent::new(2, Features::scalar(-0.4, 1.0), 1, true);
        assert!(counterfactual_outcome(&amb, &Features::scalar(-0.4, 1.0), &c, 0.5).unwrap());
    }

    #[test]
    fn latent_mean_is_within_binomial_band() {
        let pop = sample_population(&ScmConfig::default(), 100_000, 11).unwrap();
        let mean = pop.iter().map(|a| f64::from(a.u)).sum::<f64>() / 1e5;
        assert!((0.494..=0.506).contains(&mean), "mean u = {mean}");
    }

    #[test]
    fn same_seed_same_population() {
        let c = ScmConfig { outcome_mode: OutcomeMode::Stochastic, ..ScmConfig::default() };
        let a = sample_population(&c, 500, 3).unwrap();
        let b = sample_population(&c, 500, 3).unwrap();
        assert_eq!(a, b);
        let d = sample_population(&c, 500, 4).unwrap();
        assert_ne!(a, d);
        // a prefix of a larger sample is the smaller sample
        let big = sample_population(&c, 800, 3).unwrap();
        assert_eq!(&big.agents[..500], &a.agents[..]);
    }

    #[test]
    fn uniform_example_positive_rate() {
        // u = 0: P(x_c >= 0) = 0.5, u = 1: P(x_c >= -0.5) = 0.75
        let pop = sample_population(&ScmConfig::uniform_example(), 100_000, 5).unwrap();
        let rate = pop.positive_rate();
        assert!((rate - 0.625).abs() <= 0.01, "rate = {rate}");
        for a in pop.iter() {
            assert!((-1.0..1.0).contains(&a.x.causal[0]));
            let lo = -1.0 + f64::from(a.u);
            assert!((lo..lo + 2.0).contains(&a.x.spurious[0]));
        }
    }

    #[test]
    fn empty_population_rejected() {
        assert_eq!(sample_population(&ScmConfig::default(), 0, 1), Err(Error::EmptyPopulation));
    }

    #[test]
    fn deterministic_outcomes_match_score_sign() {
        let c = ScmConfig { ambiguity_window: Some(0.4), ..ScmConfig::default() };
        let pop = sample_population(&c, 20_000, 9).unwrap();
        for a in pop.iter() {
            assert_eq!(a.y, y_score(&a.x.causal, a.u, &c).unwrap() >= 0.0);
        }
    }

    #[test]
    fn stochastic_calibration_by_score_bin() {
        let c = ScmConfig { outcome_mode: OutcomeMode::Stochastic, sigmoid_temperature: 0.7, ..ScmConfig::default() };
        let pop = sample_population(&c, 100_000, 21).unwrap();
        let edges = [-3.0, -1.5, -0.75, -0.25, 0.25, 0.75, 1.5, 3.0];
        for w in edges.windows(2) {
            let (mut hits, mut cnt, mut psum) = (0usize, 0usize, 0.0);
            for a in pop.iter() {
                let s = y_score(&a.x.causal, a.u, &c).unwrap();
                if s >= w[0] && s < w[1] {
                    cnt += 1;
                    hits += usize::from(a.y);
                    psum += sigmoid(s / c.sigmoid_temperature);
                }
            }
            let (rate, p) = (hits as f64 / cnt as f64, psum / cnt as f64);
            let band = 3.0 * (p * (1.0 - p) / cnt as f64).sqrt();
            assert!((rate - p).abs() <= band, "bin {w:?}: {rate} vs {p} (n = {cnt})");
        }
    }

    #[test]
    fn latent_posterior_symmetry_and_density_ratio() {
        let c = ScmConfig { w_u_to_s: 2.0, sigma_s: 1.0, ..ScmConfig::default() };
        assert_relative_eq!(c.latent_posterior(&[1.0]).unwrap(), 0.5, epsilon = 1e-15);
        // independent route: ratio of Gaussian densities integrated over a
        // narrow window around x_s = 2 with the trapezoid rule
        let dens = |x: f64, m: f64| (-(x - m) * (x - m) / 2.0).exp();
        let (lo, hi, k) = (1.999, 2.001, 200);
        let h = (hi - lo) / k as f64;
        let (mut m1, mut m0) = (0.0, 0.0);
        for i in 0..=k {
            let x = lo + i as f64 * h;
            let wgt = if i == 0 || i == k { 0.5 } else { 1.0 };
            m1 += wgt * dens(x, 2.0);
            m0 += wgt * dens(x, 0.0);
        }
        let quad = m1 / (m1 + m0);
        let closed = c.latent_posterior(&[2.0]).unwrap();
        assert_relative_eq!(closed, quad, epsilon = 1e-6);
        assert_relative_eq!(closed, sigmoid(2.0), epsilon = 1e-12);
    }

    #[test]
    fn bayes_probability_ignores_latent_when_unweighted() {
        let c = ScmConfig { w_u: 0.0, outcome_mode: OutcomeMode::Stochastic, ..ScmConfig::default() };
        let x = Features::scalar(0.3, 1.4);
        let p = c.bayes_probability(&x, Conditioning::Causal).unwrap();
        assert_relative_eq!(p, outcome_probability(&[0.3], 0, &c).unwrap(), epsilon = 1e-15);
        assert_relative_eq!(p, outcome_probability(&[0.3], 1, &c).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn synthesized_population_uses_given_features() {
        let feats = (0..5).map(|i| Features::scalar(i as f64 - 2.0, 0.1 * i as f64)).collect();
        let pop = synthesize_outcomes(feats, &ScmConfig { sampling: FeatureSampling::Ingested, ..ScmConfig::default() }, 1).unwrap();
        assert_eq!(pop.len(), 5);
        assert_eq!(pop.agents[4].x.causal[0], 2.0);
    }

    proptest! {
        #[test]
        fn spurious_changes_are_inert(xc in -3.0f64..3.0, xs in -3.0f64..3.0, shift in -10.0f64..10.0,
                                      u in 0u8..2, noise in 0.0f64..1.0, stochastic: bool) {
            let mut c = cfg(1.3, 0.8, -0.2);
            if stochastic { c.outcome_mode = OutcomeMode::Stochastic; }
            let y = realize_outcome(&[xc], u, &c, noise).unwrap();
            let agent = Agent::new(0, Features::scalar(xc, xs), u, y);
            let moved = Features::scalar(xc, xs + shift);
            prop_assert_eq!(counterfactual_outcome(&agent, &moved, &c, noise).unwrap(), y);
        }
    }
}
