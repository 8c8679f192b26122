//! Linear-payoff Gaussian contextual bandits: the environment, Bayesian
//! risk-averse posterior sampling (BRPS-CMAB) in its plain, truncated and
//! inflated-variance forms, the Thompson-sampling baseline, and regret
//! accounting under both the conventional and the Bayesian-risk criterion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::mdp::dot;
use crate::posteriors::{GaussianLinearPosterior, SamplingMode};
use crate::risk::{empirical_cvar_in_place, normal, truncated_normal_cvar, RiskConfig};

/// How contexts are drawn each round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextSampler {
    /// `s ~ Uniform[0, 1]^d`.
    UniformCube,
    /// `Uniform[0, 1]^d / √d`, so that `‖s‖₂ ≤ 1`.
    ScaledCube,
}

/// Environment with rewards `R(s, a) = sᵀθ_a + ε`, `ε ~ N(0, noise²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBanditEnv {
    thetas: Vec<Vec<f64>>,
    noise: f64,
    contexts: ContextSampler,
    clip_rewards: bool,
}

impl LinearBanditEnv {
    pub fn new(thetas: Vec<Vec<f64>>, noise: f64, contexts: ContextSampler) -> Result<Self> {
        let d = thetas.first().map_or(0, Vec::len);
        if d == 0 || thetas.iter().any(|t| t.len() != d) {
            return invalid("arm parameters must be nonempty vectors of equal length");
        }
        if thetas.iter().flatten().any(|x| !x.is_finite()) {
            return invalid("arm parameters must be finite");
        }
        if !(noise.is_finite() && noise >= 0.0) {
            return invalid(format!("noise scale {noise} must be nonnegative"));
        }
        Ok(Self {
            thetas,
            noise,
            contexts,
            clip_rewards: false,
        })
    }

    /// `K` arms in three dimensions with `θ_i = (0.5, 0.5 + sin i, 0.5 + cos i)`
    /// for `i = 1..=K`, uniform contexts on the unit cube and unit noise.
    pub fn sinusoidal(num_arms: usize) -> Self {
        let thetas = (1..=num_arms)
            .map(|i| {
                let i = i as f64;
                vec![0.5, 0.5 + i.sin(), 0.5 + i.cos()]
            })
            .collect();
        Self::new(thetas, 1.0, ContextSampler::UniformCube).expect("valid preset")
    }

    /// Clip realised rewards to `[0, 1]` (the bounded-reward regime).
    pub fn with_clipped_rewards(mut self, clip: bool) -> Self {
        self.clip_rewards = clip;
        self
    }

    pub fn with_contexts(mut self, contexts: ContextSampler) -> Self {
        self.contexts = contexts;
        self
    }

    pub fn num_arms(&self) -> usize {
        self.thetas.len()
    }

    pub fn dim(&self) -> usize {
        self.thetas[0].len()
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn theta(&self, arm: usize) -> &[f64] {
        &self.thetas[arm]
    }

    pub fn contexts(&self) -> ContextSampler {
        self.contexts
    }

    pub fn expected_reward(&self, arm: usize, context: &[f64]) -> f64 {
        dot(context, &self.thetas[arm])
    }

    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let scale = match self.contexts {
            ContextSampler::UniformCube => 1.0,
            ContextSampler::ScaledCube => 1.0 / (self.dim() as f64).sqrt(),
        };
        for x in out.iter_mut() {
            *x = rng.random::<f64>() * scale;
        }
    }

    fn realise(&self, mean: f64, eps: f64) -> f64 {
        let r = mean + self.noise * eps;
        if self.clip_rewards {
            r.clamp(0.0, 1.0)
        } else {
            r
        }
    }
}

/// Sampling rule of the learner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Variant {
    /// Gaussian posterior samples.
    Plain,
    /// Posterior samples clipped to `[0, 1]`.
    Truncated,
    /// Sampling scale replaced by [`nu_t`] at round `t`.
    Inflated { delta: f64 },
    /// Sampling scale replaced by a fixed value.
    FixedScale { scale: f64 },
}

impl Variant {
    fn mode(self) -> SamplingMode {
        match self {
            Variant::Truncated => SamplingMode::Truncated,
            _ => SamplingMode::Plain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BanditRunConfig {
    pub risk: RiskConfig,
    pub variant: Variant,
    pub horizon: usize,
    /// Prior and likelihood scale `ν` of the Gaussian posterior.
    pub prior_scale: f64,
    /// Risk level at which the Bayesian-risk regret is accounted. For the
    /// risk-averse learner this is its own level; a risk-neutral baseline is
    /// scored at the level of the learner it is compared with.
    pub br_alpha: f64,
    pub seed: u64,
}

impl BanditRunConfig {
    /// BRPS-CMAB at level `alpha`, scored at the same level.
    pub fn brps(alpha: f64, variant: Variant, horizon: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            risk: RiskConfig::new(alpha)?,
            variant,
            horizon,
            prior_scale: 1.0,
            br_alpha: alpha,
            seed,
        })
    }

    /// Thompson sampling (one plain sample per arm) scored at `br_alpha`.
    pub fn thompson(br_alpha: f64, horizon: usize, seed: u64) -> Result<Self> {
        Ok(Self {
            risk: RiskConfig::new(0.0)?,
            variant: Variant::Plain,
            horizon,
            prior_scale: 1.0,
            br_alpha,
            seed,
        })
    }
}

/// Step-by-step record of a bandit run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegretTrace {
    pub dim: usize,
    /// Contexts, `dim` entries per step.
    pub contexts: Vec<f64>,
    pub arms: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Arm maximising the true expected reward.
    pub best_arms: Vec<usize>,
    /// Arm maximising the posterior CVaR objective.
    pub br_best_arms: Vec<usize>,
    pub regret: Vec<f64>,
    pub cumulative_regret: Vec<f64>,
    pub br_regret: Vec<f64>,
    pub cumulative_br_regret: Vec<f64>,
}

impl RegretTrace {
    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn final_regret(&self) -> f64 {
        self.cumulative_regret.last().copied().unwrap_or(0.0)
    }

    pub fn final_br_regret(&self) -> f64 {
        self.cumulative_br_regret.last().copied().unwrap_or(0.0)
    }
}

/// Inflated sampling scale `(3/4)·√(d·ln(4t/δ))`.
pub fn nu_t(t: usize, d: usize, delta: f64) -> f64 {
    0.75 * (d as f64 * (4.0 * t as f64 / delta).ln()).sqrt()
}

/// Fixed inflated scale `(3/4)·√(6·ln(2T))` used for the experiment baseline.
pub fn nu_fixed(horizon: usize) -> f64 {
    0.75 * (6.0 * (2.0 * horizon as f64).ln()).sqrt()
}

/// Posterior CVaR of the mean payoff `sᵀθ_a` at level `alpha`, for the
/// Gaussian or the clipped-Gaussian posterior.
pub fn br_objective(
    post: &GaussianLinearPosterior,
    arm: usize,
    context: &[f64],
    alpha: f64,
    mode: SamplingMode,
) -> f64 {
    let (mean, sd) = post.payoff_distribution(arm, context, None);
    match mode {
        SamplingMode::Plain => crate::risk::normal_cvar(mean, sd, alpha),
        SamplingMode::Truncated => truncated_normal_cvar(mean, sd, alpha),
    }
}

/// BR-Regret bound for the truncated variant with `α ≥ 1/2`.
pub fn br_regret_bound(nu: f64, alpha: f64, dim: usize, arms: usize, horizon: usize) -> f64 {
    let t = horizon as f64;
    let c = nu * (2.0 * (1.0 - alpha) * (arms as f64 * t * t).ln()).sqrt()
        + nu / (1.0 - alpha)
            * (1.0 / (2.0 * std::f64::consts::PI).sqrt() + normal::density_at_quantile(alpha));
    c * 5.0 * (dim as f64 * arms as f64 * t * t.ln()).sqrt() + 1.0
}

/// High-probability conventional regret bound of the inflated variant.
pub fn conventional_regret_bound(alpha: f64, dim: usize, arms: usize, horizon: usize, delta: f64) -> f64 {
    let (d, k, t) = (dim as f64, arms as f64, horizon as f64);
    let lead = 1.5 * (4.0 * std::f64::consts::PI.sqrt() * std::f64::consts::E).powf((2.0 - alpha) / (1.0 - alpha));
    lead * (d * (4.0 * t / delta).ln() * (2.0 * t * t / (1.0 - alpha)).ln()).sqrt()
        * (15.0 * (d * k * t * t.ln()).sqrt() + 6.0 * (2.0 * (2.0 / delta).ln() * t).sqrt())
}

const ENV_STREAM: u64 = 0;
const AGENT_STREAM: u64 = 1;

/// Runs BRPS-CMAB. Contexts and reward noise come from one random stream and
/// posterior sampling from another, both derived from `config.seed`, so that
/// learners sharing a seed face identical contexts and noise.
pub fn run_brps_cmab(env: &LinearBanditEnv, config: &BanditRunConfig) -> Result<RegretTrace> {
    let d = env.dim();
    let k = env.num_arms();
    if let Variant::Inflated { delta } = config.variant {
        if !(delta > 0.0 && delta < 1.0) {
            return invalid(format!("δ = {delta} outside (0, 1)"));
        }
    }
    if let Variant::FixedScale { scale } = config.variant {
        if !(scale.is_finite() && scale > 0.0) {
            return invalid(format!("sampling scale {scale} must be positive"));
        }
    }
    if !(0.0..1.0).contains(&config.br_alpha) {
        return invalid(format!("risk level {} outside [0, 1)", config.br_alpha));
    }
    let mut env_rng = ChaCha8Rng::seed_from_u64(config.seed);
    env_rng.set_stream(ENV_STREAM);
    let mut agent_rng = ChaCha8Rng::seed_from_u64(config.seed);
    agent_rng.set_stream(AGENT_STREAM);

    let mut post = GaussianLinearPosterior::new(k, d, config.prior_scale)?;
    let mode = config.variant.mode();
    let n = config.risk.sample_size();
    let alpha = config.risk.alpha();
    let br_factor = if config.br_alpha > 0.0 {
        normal::density_at_quantile(config.br_alpha) / (1.0 - config.br_alpha)
    } else {
        0.0
    };
    let br_value = |post: &GaussianLinearPosterior, arm: usize, s: &[f64]| match mode {
        SamplingMode::Plain => {
            let (mean, sd) = post.payoff_distribution(arm, s, None);
            mean - sd * br_factor
        }
        SamplingMode::Truncated => br_objective(post, arm, s, config.br_alpha, mode),
    };

    let t_max = config.horizon;
    let mut trace = RegretTrace {
        dim: d,
        contexts: Vec::with_capacity(t_max * d),
        ..RegretTrace::default()
    };
    let mut s = vec![0.0; d];
    let mut samples = vec![0.0; n];
    let mut br = vec![0.0; k];
    let (mut cum, mut cum_br) = (0.0, 0.0);
    for t in 1..=t_max {
        env.sample_context(&mut env_rng, &mut s);
        let eps: f64 = StandardNormal.sample(&mut env_rng);
        let scale = match config.variant {
            Variant::Inflated { delta } => Some(nu_t(t, d, delta)),
            Variant::FixedScale { scale } => Some(scale),
            _ => None,
        };

        let mut pulled = 0;
        let mut best_estimate = f64::NEG_INFINITY;
        for arm in 0..k {
            post.sample_payoffs(arm, &s, mode, scale, &mut agent_rng, &mut samples)?;
            let estimate = empirical_cvar_in_place(&mut samples, alpha);
            if estimate > best_estimate {
                best_estimate = estimate;
                pulled = arm;
            }
        }

        for (arm, slot) in br.iter_mut().enumerate() {
            *slot = br_value(&post, arm, &s);
        }
        let br_best = argmax(&br);
        let best = argmax(&(0..k).map(|a| env.expected_reward(a, &s)).collect::<Vec<_>>());
        let regret = env.expected_reward(best, &s) - env.expected_reward(pulled, &s);
        let br_regret = br[br_best] - br[pulled];
        cum += regret;
        cum_br += br_regret;

        let reward = env.realise(env.expected_reward(pulled, &s), eps);
        post.update(pulled, &s, reward)?;

        trace.contexts.extend_from_slice(&s);
        trace.arms.push(pulled);
        trace.rewards.push(reward);
        trace.best_arms.push(best);
        trace.br_best_arms.push(br_best);
        trace.regret.push(regret);
        trace.cumulative_regret.push(cum);
        trace.br_regret.push(br_regret);
        trace.cumulative_br_regret.push(cum_br);
    }
    Ok(trace)
}

/// Thompson sampling for the same environment, scored at `br_alpha`.
pub fn run_thompson(
    env: &LinearBanditEnv,
    horizon: usize,
    br_alpha: f64,
    seed: u64,
) -> Result<RegretTrace> {
    run_brps_cmab(env, &BanditRunConfig::thompson(br_alpha, horizon, seed)?)
}

/// Index of the largest entry; ties go to the lowest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::risk::{modified_cvar, normal_cvar};

    #[test]
    fn nu_t_values() {
        assert_eq!(nu_t(1, 1, 4.0), 0.0);
        let want = 0.75 * (3.0 * 800.0f64.ln()).sqrt();
        assert!((nu_t(2, 3, 0.01) - want).abs() < 1e-15);
        assert!((nu_t(2, 3, 0.01) - 3.3586).abs() < 1e-4);
        assert!((nu_fixed(100) - 0.75 * (6.0 * 200.0f64.ln()).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn single_arm_has_no_regret() {
        let env = LinearBanditEnv::new(vec![vec![0.2, 0.4]], 1.0, ContextSampler::UniformCube).unwrap();
        let cfg = BanditRunConfig::brps(0.8, Variant::Plain, 200, 3).unwrap();
        let trace = run_brps_cmab(&env, &cfg).unwrap();
        assert!(trace.arms.iter().all(|&a| a == 0));
        assert_eq!(trace.final_regret(), 0.0);
        assert_eq!(trace.final_br_regret(), 0.0);
        assert_eq!(run_thompson(&env, 50, 0.5, 1).unwrap().final_regret(), 0.0);
    }

    #[test]
    fn neutral_risk_is_thompson_sampling() {
        let env = LinearBanditEnv::sinusoidal(10);
        let brps = run_brps_cmab(&env, &BanditRunConfig::brps(0.0, Variant::Plain, 500, 9).unwrap()).unwrap();
        let ts = run_thompson(&env, 500, 0.0, 9).unwrap();
        assert_eq!(brps, ts);
    }

    #[test]
    fn br_regret_increments_are_nonnegative_and_deterministic() {
        let env = LinearBanditEnv::sinusoidal(10);
        let cfg = BanditRunConfig::brps(0.8, Variant::Plain, 2000, 17).unwrap();
        let a = run_brps_cmab(&env, &cfg).unwrap();
        assert!(a.br_regret.iter().all(|r| *r >= 0.0));
        assert!(a.regret.iter().all(|r| *r >= 0.0));
        assert_eq!(a, run_brps_cmab(&env, &cfg).unwrap());
        assert_eq!(a.contexts.len(), 2000 * 3);
    }

    #[test]
    fn br_objective_cases() {
        let post = GaussianLinearPosterior::new(2, 3, 2.0).unwrap();
        let e1 = [1.0, 0.0, 0.0];
        assert_eq!(br_objective(&post, 0, &e1, 0.0, SamplingMode::Plain), 0.0);
        let half = br_objective(&post, 0, &e1, 0.5, SamplingMode::Plain);
        assert!((half + 0.797_884_560_802_865_4 * 2.0).abs() < 1e-12);
        assert_eq!(half, normal_cvar(0.0, 2.0, 0.5));
    }

    #[test]
    fn equal_variance_arms_rank_by_mean() {
        let mut post = GaussianLinearPosterior::new(2, 1, 1.0).unwrap();
        post.update(0, &[1.0], 0.3).unwrap();
        post.update(1, &[1.0], 0.7).unwrap();
        for alpha in [0.0, 0.5, 0.9] {
            let b0 = br_objective(&post, 0, &[1.0], alpha, SamplingMode::Plain);
            let b1 = br_objective(&post, 1, &[1.0], alpha, SamplingMode::Plain);
            assert!(b1 > b0);
        }
    }

    #[test]
    fn inflated_and_truncated_variants_run() {
        let env = LinearBanditEnv::sinusoidal(4)
            .with_contexts(ContextSampler::ScaledCube)
            .with_clipped_rewards(true);
        for variant in [
            Variant::Truncated,
            Variant::Inflated { delta: 0.1 },
            Variant::FixedScale { scale: nu_fixed(300) },
        ] {
            let cfg = BanditRunConfig::brps(0.6, variant, 300, 2).unwrap();
            let trace = run_brps_cmab(&env, &cfg).unwrap();
            assert_eq!(trace.len(), 300);
            assert!(trace.rewards.iter().all(|r| (0.0..=1.0).contains(r)));
            assert!(trace.contexts.chunks(3).all(|s| dot(s, s) <= 1.0 + 1e-12));
        }
    }

    #[test]
    fn modified_estimator_dominates_posterior_cvar() {
        // For α ≥ 1/2 the order-statistic estimator is biased upwards relative
        // to the CVaR of the (clipped) posterior it samples from.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for alpha in [0.5, 0.7, 0.8] {
            let risk = RiskConfig::new(alpha).unwrap();
            let mut post = GaussianLinearPosterior::new(1, 1, 0.5).unwrap();
            post.update(0, &[1.0], 0.4).unwrap();
            let (mean, sd) = post.payoff_distribution(0, &[1.0], None);
            let target = truncated_normal_cvar(mean, sd, alpha);
            let reps = 200_000;
            let mut buf = vec![0.0; risk.sample_size()];
            let mut sum = 0.0;
            let mut sq = 0.0;
            for _ in 0..reps {
                post.sample_payoffs(0, &[1.0], SamplingMode::Truncated, None, &mut rng, &mut buf)
                    .unwrap();
                let x = modified_cvar(&buf, &risk).unwrap();
                sum += x;
                sq += x * x;
            }
            let m = sum / reps as f64;
            let se = ((sq / reps as f64 - m * m) / reps as f64).sqrt();
            assert!(m >= target - 3.0 * se, "α = {alpha}: {m} < {target}");
        }
    }

    #[test]
    fn posterior_concentrates_on_a_single_arm() {
        let env = LinearBanditEnv::new(vec![vec![0.3, -0.2]], 1.0, ContextSampler::UniformCube).unwrap();
        let mut hits = 0;
        for seed in 0..40 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut post = GaussianLinearPosterior::new(1, 2, 1.0).unwrap();
            for _ in 0..10_000 {
                let eps: f64 = StandardNormal.sample(&mut rng);
                post.update(0, &[1.0, 0.0], env.realise(0.3, eps)).unwrap();
            }
            if (post.theta(0)[0] - 0.3).abs() < 0.05 {
                hits += 1;
            }
        }
        assert!(hits as f64 / 40.0 >= 0.95);
    }
}
