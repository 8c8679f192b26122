//! Bayesian-risk Bellman operators over posterior samples, BRMDP solving,
//! the episodic posterior-sampling learner (BRPS-RL) and online Bayesian
//! risk-averse value iteration with an exploration bonus.

use rand::Rng;

use crate::environments::FrozenLakeLayout;
use crate::error::{invalid, Error, Result};
use crate::mdp::{
    evaluate_policy_exact, greedy_from_q, max_abs_diff, step, value_iteration,
    DeterministicPolicy, TabularMdp, ValueFunction,
};
use crate::posteriors::{DirichletTransitionPosterior, HierarchicalFrozenLakePosterior};
use crate::risk::{empirical_cvar_in_place, RiskConfig};

/// `n` posterior draws of an MDP sharing state/action spaces and discount.
///
/// Each draw carries its own reward table, since some parametrisations (for
/// example Frozen Lake, where the reward is the probability of reaching the
/// goal) make the reward depend on the sampled parameters. Rows are stored
/// sparsely, grouped by `(s, a)` so that one backup touches contiguous memory.
#[derive(Debug, Clone)]
pub struct SampledEnsemble {
    num_states: usize,
    num_actions: usize,
    discount: f64,
    risk: RiskConfig,
    /// Reward of draw `i` at `(s, a)`, stored at `(s·A + a)·n + i`.
    reward: Vec<f64>,
    /// Row `(s·A + a)·n + i` spans `offsets[row]..offsets[row + 1]`.
    offsets: Vec<usize>,
    cols: Vec<u32>,
    probs: Vec<f64>,
}

impl SampledEnsemble {
    /// Builds the ensemble; `mdps.len()` must equal the risk sample size.
    pub fn new(mdps: &[TabularMdp], risk: RiskConfig) -> Result<Self> {
        let first = mdps
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty ensemble".into()))?;
        let n = mdps.len();
        if n != risk.sample_size() {
            return invalid(format!(
                "ensemble has {n} draws but the risk configuration expects {}",
                risk.sample_size()
            ));
        }
        let (ns, na, discount) = (first.num_states(), first.num_actions(), first.discount());
        if let Some(m) = mdps
            .iter()
            .find(|m| m.num_states() != ns || m.num_actions() != na || m.discount() != discount)
        {
            return invalid(format!(
                "ensemble member with shape ({}, {}, γ = {}) differs from ({ns}, {na}, γ = {discount})",
                m.num_states(),
                m.num_actions(),
                m.discount()
            ));
        }
        let rows = ns * na * n;
        let mut reward = Vec::with_capacity(rows);
        let mut offsets = Vec::with_capacity(rows + 1);
        let mut cols = Vec::new();
        let mut probs = Vec::new();
        offsets.push(0);
        for s in 0..ns {
            for a in 0..na {
                for m in mdps {
                    reward.push(m.reward(s, a));
                    for (j, &p) in m.row(s, a).iter().enumerate() {
                        if p != 0.0 {
                            cols.push(j as u32);
                            probs.push(p);
                        }
                    }
                    offsets.push(cols.len());
                }
            }
        }
        Ok(Self {
            num_states: ns,
            num_actions: na,
            discount,
            risk,
            reward,
            offsets,
            cols,
            probs,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn risk(&self) -> RiskConfig {
        self.risk
    }

    pub fn len(&self) -> usize {
        self.risk.sample_size()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Reward-to-go samples `Z_i = r_i(s, a) + γ P_i(s, a)·V` written to `out`.
    pub fn reward_to_go(&self, s: usize, a: usize, v: &[f64], out: &mut [f64]) {
        let n = self.len();
        let base = (s * self.num_actions + a) * n;
        for (i, z) in out.iter_mut().enumerate().take(n) {
            let row = base + i;
            let (lo, hi) = (self.offsets[row], self.offsets[row + 1]);
            let mut ev = 0.0;
            for k in lo..hi {
                ev += self.probs[k] * v[self.cols[k] as usize];
            }
            *z = self.reward[row] + self.discount * ev;
        }
    }

    /// Empirical-CVaR backup of one state-action pair.
    pub fn backup(&self, s: usize, a: usize, v: &[f64], scratch: &mut [f64]) -> f64 {
        let buf = &mut scratch[..self.len()];
        self.reward_to_go(s, a, v, buf);
        empirical_cvar_in_place(buf, self.risk.alpha())
    }

    /// The full `(s, a)` table of backups.
    pub fn q_backup(&self, v: &[f64], q: &mut [f64]) {
        let mut scratch = vec![0.0; self.len()];
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                q[s * self.num_actions + a] = self.backup(s, a, v, &mut scratch);
            }
        }
    }

    fn check_values(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.num_states {
            return invalid(format!(
                "value function has {} entries, expected {}",
                v.len(),
                self.num_states
            ));
        }
        Ok(())
    }

    fn check_policy(&self, policy: &DeterministicPolicy) -> Result<()> {
        if policy.len() != self.num_states || policy.iter().any(|&a| a >= self.num_actions) {
            return invalid("policy does not match the ensemble");
        }
        Ok(())
    }
}

/// A state-action value table laid out as `(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QFunction {
    pub num_actions: usize,
    pub values: Vec<f64>,
}

impl QFunction {
    pub fn constant(num_states: usize, num_actions: usize, value: f64) -> Self {
        Self {
            num_actions,
            values: vec![value; num_states * num_actions],
        }
    }

    pub fn num_states(&self) -> usize {
        self.values.len() / self.num_actions
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn greedy(&self) -> (ValueFunction, DeterministicPolicy) {
        let (v, pi) = greedy_from_q(&self.values, self.num_actions);
        (ValueFunction(v), pi)
    }
}

/// One application of the sample-approximated Bayesian risk Bellman operator.
pub fn approx_bellman(
    ensemble: &SampledEnsemble,
    v: &[f64],
) -> Result<(ValueFunction, DeterministicPolicy)> {
    ensemble.check_values(v)?;
    let mut q = vec![0.0; ensemble.num_states * ensemble.num_actions];
    ensemble.q_backup(v, &mut q);
    let (tv, pi) = greedy_from_q(&q, ensemble.num_actions);
    Ok((ValueFunction(tv), pi))
}

/// Iterates [`approx_bellman`] from `V = 0` until successive values differ by
/// at most `tol` in max-norm. The returned `Q` is the backup of the final `V`.
pub fn solve_brmdp(
    ensemble: &SampledEnsemble,
    tol: f64,
    max_iter: usize,
) -> Result<(QFunction, DeterministicPolicy)> {
    if !(tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    let mut v = vec![0.0; ensemble.num_states];
    let mut q = QFunction::constant(ensemble.num_states, ensemble.num_actions, 0.0);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        ensemble.q_backup(&v, &mut q.values);
        let (tv, _) = greedy_from_q(&q.values, ensemble.num_actions);
        residual = max_abs_diff(&tv, &v);
        v = tv;
        if residual <= tol {
            let (_, pi) = q.greedy();
            return Ok((q, pi));
        }
    }
    Err(Error::NonConvergence {
        what: "BRMDP value iteration",
        iterations: max_iter,
        residual,
    })
}

/// Exactly `iterations` rounds of Q-value iteration started from `init`
/// (zero when `None`).
pub fn q_value_iteration(
    ensemble: &SampledEnsemble,
    iterations: usize,
    init: Option<&[f64]>,
) -> Result<(QFunction, DeterministicPolicy)> {
    let mut v = match init {
        Some(v) => {
            ensemble.check_values(v)?;
            v.to_vec()
        }
        None => vec![0.0; ensemble.num_states],
    };
    let mut q = QFunction::constant(ensemble.num_states, ensemble.num_actions, 0.0);
    for _ in 0..iterations.max(1) {
        ensemble.q_backup(&v, &mut q.values);
        v = greedy_from_q(&q.values, ensemble.num_actions).0;
    }
    let (_, pi) = q.greedy();
    Ok((q, pi))
}

/// `k` applications of the policy-restricted operator, starting from zero.
pub fn iterate_brmdp_policy(
    ensemble: &SampledEnsemble,
    policy: &DeterministicPolicy,
    iterations: usize,
) -> Result<ValueFunction> {
    ensemble.check_policy(policy)?;
    let mut v = vec![0.0; ensemble.num_states];
    let mut next = v.clone();
    let mut scratch = vec![0.0; ensemble.len()];
    for _ in 0..iterations {
        for (s, slot) in next.iter_mut().enumerate() {
            *slot = ensemble.backup(s, policy[s], &v, &mut scratch);
        }
        std::mem::swap(&mut v, &mut next);
    }
    Ok(ValueFunction(v))
}

/// Fixed point of the policy-restricted operator, with successive iterates
/// within `tol`.
pub fn evaluate_brmdp_policy(
    ensemble: &SampledEnsemble,
    policy: &DeterministicPolicy,
    tol: f64,
) -> Result<ValueFunction> {
    ensemble.check_policy(policy)?;
    if !(tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    const CAP: usize = 1_000_000;
    let mut v = vec![0.0; ensemble.num_states];
    let mut next = v.clone();
    let mut scratch = vec![0.0; ensemble.len()];
    let mut residual = f64::INFINITY;
    for _ in 0..CAP {
        for (s, slot) in next.iter_mut().enumerate() {
            *slot = ensemble.backup(s, policy[s], &v, &mut scratch);
        }
        residual = max_abs_diff(&next, &v);
        std::mem::swap(&mut v, &mut next);
        if residual <= tol {
            return Ok(ValueFunction(v));
        }
    }
    Err(Error::NonConvergence {
        what: "BRMDP policy evaluation",
        iterations: CAP,
        residual,
    })
}

/// Posterior family used by BRPS-RL.
#[derive(Debug, Clone, PartialEq)]
pub enum PosteriorModel {
    /// Independent Dirichlet rows; the reward table of the environment is
    /// treated as known.
    Dirichlet,
    /// Dirichlet posteriors on the slip, hole-exit and restart distributions
    /// of a Frozen Lake board.
    FrozenLake(FrozenLakeLayout),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrpsRlConfig {
    pub episodes: usize,
    pub episode_length: usize,
    pub risk: RiskConfig,
    /// Q-value iterations per episode.
    pub vi_iterations: usize,
    pub start_state: usize,
    pub posterior: PosteriorModel,
}

/// Per-stage conventional regret `V*(s) − V^π(s)` of an online MDP learner.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MdpTrace {
    /// State at every decision, in order.
    pub states: Vec<usize>,
    /// Action taken at every decision.
    pub actions: Vec<usize>,
    /// Policy in force at each stage.
    pub policies: Vec<DeterministicPolicy>,
    /// Regret accrued in each stage (an episode for BRPS-RL, a step for
    /// online value iteration).
    pub stage_regret: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl MdpTrace {
    pub fn final_regret(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    fn push_stage(&mut self, regret: f64) {
        let total = self.final_regret() + regret;
        self.stage_regret.push(regret);
        self.cumulative.push(total);
    }
}

const OPTIMAL_VALUE_TOL: f64 = 1e-12;

fn optimal_values(env: &TabularMdp) -> Result<ValueFunction> {
    Ok(value_iteration(env, OPTIMAL_VALUE_TOL, 1_000_000)?.0)
}

/// Bayesian risk-averse posterior sampling for RL. Each episode samples `n`
/// models from the posterior, plans with Q-value iteration on the sampled
/// risk operator, follows the greedy policy for `L` steps along a single
/// continuing trajectory and updates the posterior.
pub fn run_brps_rl<R: Rng + ?Sized>(
    env: &TabularMdp,
    config: &BrpsRlConfig,
    rng: &mut R,
) -> Result<MdpTrace> {
    if config.episode_length == 0 {
        return invalid("episode length must be at least 1");
    }
    if config.start_state >= env.num_states() {
        return invalid("start state out of range");
    }
    let mut posterior = match &config.posterior {
        PosteriorModel::Dirichlet => {
            Posterior::Tabular(DirichletTransitionPosterior::uniform(env.num_states(), env.num_actions()))
        }
        PosteriorModel::FrozenLake(layout) => {
            layout.validate()?;
            if layout.num_states() != env.num_states() || env.num_actions() != 4 {
                return invalid("Frozen Lake layout does not match the environment");
            }
            Posterior::Lake(layout, HierarchicalFrozenLakePosterior::uniform(layout))
        }
    };
    let v_star = optimal_values(env)?;
    let mut trace = MdpTrace::default();
    let mut s = config.start_state;
    for _ in 0..config.episodes {
        let mdps = (0..config.risk.sample_size())
            .map(|_| posterior.sample(env, rng))
            .collect::<Result<Vec<_>>>()?;
        let ensemble = SampledEnsemble::new(&mdps, config.risk)?;
        let (_, policy) = q_value_iteration(&ensemble, config.vi_iterations, None)?;
        let v_pi = evaluate_policy_exact(env, &policy)?;
        let mut regret = 0.0;
        for _ in 0..config.episode_length {
            let a = policy[s];
            regret += v_star[s] - v_pi[s];
            let (next, _) = step(env, s, a, rng)?;
            posterior.observe(s, a, next)?;
            trace.states.push(s);
            trace.actions.push(a);
            s = next;
        }
        trace.policies.push(policy);
        trace.push_stage(regret);
    }
    Ok(trace)
}

enum Posterior<'a> {
    Tabular(DirichletTransitionPosterior),
    Lake(&'a FrozenLakeLayout, HierarchicalFrozenLakePosterior),
}

impl Posterior<'_> {
    fn sample<R: Rng + ?Sized>(&self, env: &TabularMdp, rng: &mut R) -> Result<TabularMdp> {
        match self {
            Posterior::Tabular(post) => post.sample_mdp(env.rewards(), env.discount(), rng),
            Posterior::Lake(layout, post) => post.sample_mdp(layout, rng),
        }
    }

    fn observe(&mut self, s: usize, a: usize, next: usize) -> Result<()> {
        match self {
            Posterior::Tabular(post) => post.update(s, a, next),
            Posterior::Lake(layout, post) => post.update(layout, s, a, next).map(|_| ()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineBrviConfig {
    /// Number of steps `T`; also enters the bonus.
    pub steps: usize,
    pub risk: RiskConfig,
    pub delta: f64,
    pub start_state: usize,
}

/// Exploration bonus
/// `3γ/(1−γ) · √(|S|² / (2(N+1)) · ln(4(n+1)|S|²|A|T/δ))`.
pub fn ucb_bonus(
    discount: f64,
    num_states: usize,
    num_actions: usize,
    sample_size: usize,
    horizon: usize,
    delta: f64,
    visits: f64,
) -> f64 {
    let s2 = (num_states * num_states) as f64;
    let log_term = (4.0 * (sample_size as f64 + 1.0) * s2 * num_actions as f64 * horizon as f64
        / delta)
        .ln();
    3.0 * discount / (1.0 - discount) * (s2 / (2.0 * (visits + 1.0)) * log_term).sqrt()
}

/// High-probability regret bound of online Bayesian risk-averse value
/// iteration after `T` steps.
pub fn online_brvi_regret_bound(
    discount: f64,
    num_states: usize,
    num_actions: usize,
    alpha: f64,
    horizon: usize,
    delta: f64,
) -> f64 {
    let g = discount;
    let s = num_states as f64;
    let t = horizon as f64;
    let scale = (1.0 - g).powi(2);
    let log_term = (4.0 * (3.0 - 2.0 * alpha) * s * s * num_actions as f64 * t
        / ((1.0 - alpha) * delta))
        .ln();
    let visits = (s * (t + 1.0).sqrt()).min((s * (t + 1.0) * (t + 1.0).ln()).sqrt());
    6.0 * g / scale * (s * s / 2.0 * log_term).sqrt() * visits
        + g * (2.0 * s + 2.0) / scale
        + 2.0 * g / scale * (2.0 * t * (2.0 / delta).ln()).sqrt()
}

/// Online Bayesian risk-averse value iteration.
///
/// Each step acts greedily on `Q_t`, then for every `(s, a)` sets
/// `Q_{t+1} = min(Q_t, r + γ Ĉ_α + UCB_t)` where `Ĉ_α` is the empirical CVaR
/// of `P_i·V_t` over `n` kernels drawn from the current Dirichlet posterior.
/// When `r + γ min V_t + UCB_t ≥ Q_t` the minimum is `Q_t` whatever the
/// draws, so sampling is skipped for that pair.
///
/// The stage regret at step `t` is `V*(s_t) − V^{π_t}(s_t)` with `π_t` the
/// greedy policy of `Q_t` held fixed. `observer` sees `Q_t` before each step
/// and `Q_T` at the end.
pub fn run_online_brvi<R, F>(
    env: &TabularMdp,
    config: &OnlineBrviConfig,
    rng: &mut R,
    mut observer: F,
) -> Result<MdpTrace>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &QFunction),
{
    if !(config.delta > 0.0 && config.delta < 1.0) {
        return invalid(format!("δ = {} outside (0, 1)", config.delta));
    }
    let (ns, na) = (env.num_states(), env.num_actions());
    if config.start_state >= ns {
        return invalid("start state out of range");
    }
    let gamma = env.discount();
    let n = config.risk.sample_size();
    let alpha = config.risk.alpha();
    let v_star = optimal_values(env)?;
    let mut posterior = DirichletTransitionPosterior::uniform(ns, na);
    let mut q = QFunction::constant(ns, na, 1.0 / (1.0 - gamma));
    let mut next_q = q.clone();
    let (mut v, mut policy) = q.greedy();
    let mut v_pi = evaluate_policy_exact(env, &policy)?;
    let mut trace = MdpTrace::default();
    let mut samples = vec![0.0; n];
    let mut row = vec![0.0; ns];
    let mut s = config.start_state;
    for t in 0..config.steps {
        observer(t, &q);
        let a = policy[s];
        trace.states.push(s);
        trace.actions.push(a);
        trace.policies.push(policy.clone());
        trace.push_stage(v_star[s] - v_pi[s]);
        let (next, _) = step(env, s, a, rng)?;

        let v_min = v.iter().copied().fold(f64::INFINITY, f64::min);
        for ss in 0..ns {
            for aa in 0..na {
                let idx = ss * na + aa;
                let bonus = ucb_bonus(
                    gamma,
                    ns,
                    na,
                    n,
                    config.steps,
                    config.delta,
                    posterior.observations(ss, aa),
                );
                let r = env.reward(ss, aa);
                if r + gamma * v_min + bonus >= q.values[idx] {
                    next_q.values[idx] = q.values[idx];
                    continue;
                }
                for z in samples.iter_mut() {
                    posterior.sample_row(ss, aa, rng, &mut row);
                    *z = crate::mdp::dot(&row, &v);
                }
                let risk = empirical_cvar_in_place(&mut samples, alpha);
                next_q.values[idx] = q.values[idx].min(r + gamma * risk + bonus);
            }
        }
        posterior.update(s, a, next)?;
        std::mem::swap(&mut q, &mut next_q);
        let (new_v, new_policy) = q.greedy();
        v = new_v;
        if new_policy != policy {
            policy = new_policy;
            v_pi = evaluate_policy_exact(env, &policy)?;
        }
        s = next;
    }
    observer(config.steps, &q);
    Ok(trace)
}
