//! Asymptotic normality of the Bayesian risk value function: the limiting
//! mean and covariance of `√N (V_N − V^π)` and a simulation pipeline that
//! produces empirical draws of the same quantity.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::brmdp::{iterate_brmdp_policy, SampledEnsemble};
use crate::error::{invalid, Error, Result};
use crate::mdp::{dot, evaluate_policy_exact, step, DeterministicPolicy, TabularMdp};
use crate::posteriors::DirichletTransitionPosterior;
use crate::risk::{normal, RiskConfig};

/// Parameters of the normal limit of `√N (V_N − V^π)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitParams {
    pub value: Vec<f64>,
    pub lambda: Vec<f64>,
    pub sigma: Vec<f64>,
    /// `(I − γP^π)⁻¹ γλ`.
    pub mean_full: Vec<f64>,
    /// `(I − γP^π)⁻¹ diag((γσ)²) (I − γP^π)⁻ᵀ`, row-major.
    pub cov_full: Vec<f64>,
}

impl LimitParams {
    pub fn num_states(&self) -> usize {
        self.value.len()
    }

    pub fn sd(&self, s: usize) -> f64 {
        self.cov_full[s * self.num_states() + s].max(0.0).sqrt()
    }
}

/// Computes the limit law for policy `policy` when state `s` accounts for a
/// fraction `nbar[s]` of the data.
///
/// `σ_s² = VᵀMV / n̄_s` with `M = diag(P_s) − P_s P_sᵀ` (the variance of `V`
/// under the row `P_s = P(· | s, π(s))`) and `λ_s = −σ_s φ(Φ⁻¹(α))/(1 − α)`.
pub fn limit_params(
    mdp: &TabularMdp,
    policy: &DeterministicPolicy,
    nbar: &[f64],
    alpha: f64,
) -> Result<LimitParams> {
    let ns = mdp.num_states();
    if nbar.len() != ns {
        return invalid(format!("visit weights have {} entries, expected {ns}", nbar.len()));
    }
    if let Some(w) = nbar.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return invalid(format!("visit weight {w} must be positive"));
    }
    if !(0.0..1.0).contains(&alpha) {
        return invalid(format!("risk level {alpha} outside [0, 1)"));
    }
    let value = evaluate_policy_exact(mdp, policy)?.0;
    let tail = if alpha > 0.0 {
        normal::density_at_quantile(alpha) / (1.0 - alpha)
    } else {
        0.0
    };
    let mut sigma = Vec::with_capacity(ns);
    let mut lambda = Vec::with_capacity(ns);
    for s in 0..ns {
        let row = mdp.row(s, policy[s]);
        let mean = dot(row, &value);
        let var: f64 = row.iter().zip(&value).map(|(p, v)| p * (v - mean).powi(2)).sum();
        let sd = (var / nbar[s]).sqrt();
        sigma.push(sd);
        lambda.push(-sd * tail);
    }
    let gamma = mdp.discount();
    let a = DMatrix::<f64>::identity(ns, ns) - mdp.policy_matrix(policy) * gamma;
    let lu = a.lu();
    let rhs = DVector::from_iterator(ns, lambda.iter().map(|l| gamma * l));
    let mean_full = lu
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidModel("singular policy system".into()))?;
    let inv = lu
        .try_inverse()
        .ok_or_else(|| Error::InvalidModel("singular policy system".into()))?;
    let d = DMatrix::from_diagonal(&DVector::from_iterator(
        ns,
        sigma.iter().map(|s| (gamma * s).powi(2)),
    ));
    let cov = &inv * d * inv.transpose();
    let cov_full = (0..ns * ns)
        .map(|k| {
            let (i, j) = (k / ns, k % ns);
            0.5 * (cov[(i, j)] + cov[(j, i)])
        })
        .collect();
    Ok(LimitParams {
        value,
        lambda,
        sigma,
        mean_full: mean_full.iter().copied().collect(),
        cov_full,
    })
}

/// Settings of the deviation experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviationConfig {
    /// Trajectory length `N`.
    pub data_size: usize,
    pub replications: usize,
    /// Number of posterior kernels per replication.
    pub posterior_samples: usize,
    /// Iterations of the policy-restricted risk operator.
    pub vi_iterations: usize,
    pub alpha: f64,
    pub start_state: usize,
    /// Each visited state must have at least this many observed transitions,
    /// otherwise the trajectory is redrawn.
    pub min_visits: usize,
    /// Replication `r` uses seed `base_seed + r`.
    pub base_seed: u64,
}

/// Draws of `√N (V_N − V^π)`, one row of `num_states` entries per
/// replication.
#[derive(Debug, Clone, PartialEq)]
pub struct Deviations {
    pub num_states: usize,
    pub values: Vec<f64>,
    /// Trajectories discarded for insufficient coverage.
    pub redraws: usize,
}

impl Deviations {
    pub fn replications(&self) -> usize {
        self.values.len() / self.num_states
    }

    pub fn state(&self, s: usize) -> Vec<f64> {
        self.values.chunks(self.num_states).map(|row| row[s]).collect()
    }
}

const MAX_REDRAWS: usize = 1000;

/// Replicates the posterior-concentration experiment: each replication rolls
/// a single trajectory of length `N` under `policy`, forms Dirichlet
/// posteriors on the rows `P(· | s, π(s))`, draws kernels, evaluates `π`
/// under the sampled risk operator and records `√N (V_N − V^π)`.
///
/// Replications run on the current rayon pool and are returned in index
/// order, so results do not depend on the number of threads.
pub fn simulate_deviations(
    mdp: &TabularMdp,
    policy: &DeterministicPolicy,
    config: &DeviationConfig,
) -> Result<Deviations> {
    let ns = mdp.num_states();
    if config.data_size < ns * mdp.num_actions() {
        return invalid("data size must be at least |S|·|A|");
    }
    if config.replications == 0 || config.posterior_samples == 0 {
        return invalid("replications and posterior samples must be positive");
    }
    if config.start_state >= ns {
        return invalid("start state out of range");
    }
    let risk = RiskConfig::with_sample_size(config.alpha, config.posterior_samples)?;
    let v_pi = evaluate_policy_exact(mdp, policy)?;
    let restricted = restrict(mdp, policy)?;
    let reward = restricted.rewards().to_vec();
    let zero_policy = DeterministicPolicy(vec![0; ns]);
    let scale = (config.data_size as f64).sqrt();

    let rows: Vec<Result<(Vec<f64>, usize)>> = (0..config.replications)
        .into_par_iter()
        .map(|rep| {
            let seed = config.base_seed.wrapping_add(rep as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut redraws = 0;
            let post = loop {
                let mut post = DirichletTransitionPosterior::uniform(ns, 1);
                let mut visits = vec![0usize; ns];
                let mut s = config.start_state;
                for _ in 0..config.data_size {
                    let (next, _) = step(&restricted, s, 0, &mut rng)?;
                    post.update(s, 0, next)?;
                    visits[s] += 1;
                    s = next;
                }
                if visits.iter().all(|&v| v >= config.min_visits) {
                    break post;
                }
                redraws += 1;
                if redraws > MAX_REDRAWS {
                    return Err(Error::Replication {
                        seed,
                        source: Box::new(Error::InvalidArgument(
                            "trajectory never covered every state".into(),
                        )),
                    });
                }
            };
            let mdps = (0..config.posterior_samples)
                .map(|_| post.sample_mdp(&reward, mdp.discount(), &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let ensemble = SampledEnsemble::new(&mdps, risk)?;
            let v_n = iterate_brmdp_policy(&ensemble, &zero_policy, config.vi_iterations)?;
            let row = v_n.iter().zip(v_pi.iter()).map(|(a, b)| scale * (a - b)).collect();
            Ok((row, redraws))
        })
        .collect();

    let mut values = Vec::with_capacity(config.replications * ns);
    let mut redraws = 0;
    for (rep, row) in rows.into_iter().enumerate() {
        let (row, r) = row.map_err(|e| match e {
            Error::Replication { .. } => e,
            other => Error::Replication {
                seed: config.base_seed.wrapping_add(rep as u64),
                source: Box::new(other),
            },
        })?;
        values.extend(row);
        redraws += r;
    }
    Ok(Deviations {
        num_states: ns,
        values,
        redraws,
    })
}

/// Single-action MDP whose rows are `P(· | s, π(s))`.
fn restrict(mdp: &TabularMdp, policy: &DeterministicPolicy) -> Result<TabularMdp> {
    let ns = mdp.num_states();
    if policy.len() != ns || policy.iter().any(|&a| a >= mdp.num_actions()) {
        return invalid("policy does not match the MDP");
    }
    let transition = (0..ns).flat_map(|s| mdp.row(s, policy[s]).to_vec()).collect();
    TabularMdp::new(ns, 1, transition, mdp.policy_reward(policy), mdp.discount())
}

/// Fraction of visits to each state along `states`.
pub fn visit_frequencies(states: &[usize], num_states: usize) -> Vec<f64> {
    let mut freq = vec![0.0; num_states];
    for &s in states {
        freq[s] += 1.0;
    }
    let n = states.len().max(1) as f64;
    freq.iter_mut().for_each(|f| *f /= n);
    freq
}

/// Q-Q pairs `(mean + sd·Φ⁻¹((i − ½)/R), i-th smallest deviation)` for one
/// state.
pub fn qq_export(deviations: &Deviations, limit: &LimitParams, state: usize) -> Result<Vec<(f64, f64)>> {
    if state >= deviations.num_states || state >= limit.num_states() {
        return invalid(format!("state {state} out of range"));
    }
    let mut empirical = deviations.state(state);
    let reps = empirical.len();
    if reps < 2 {
        return invalid("a Q-Q plot needs at least two replications");
    }
    empirical.sort_by(f64::total_cmp);
    let (mean, sd) = (limit.mean_full[state], limit.sd(state));
    Ok(empirical
        .into_iter()
        .enumerate()
        .map(|(i, y)| {
            let p = (i as f64 + 0.5) / reps as f64;
            (mean + sd * normal::quantile(p), y)
        })
        .collect())
}

/// One-sample Kolmogorov-Smirnov test against `N(mean, sd²)`. Returns the
/// statistic `D` and its asymptotic p-value.
pub fn ks_normal(sample: &[f64], mean: f64, sd: f64) -> Result<(f64, f64)> {
    if sample.is_empty() {
        return invalid("KS test of an empty sample");
    }
    if !(sd > 0.0) {
        return invalid("KS test needs a positive standard deviation");
    }
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal::cdf((x - mean) / sd);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let root = n.sqrt();
    Ok((d, kolmogorov_survival((root + 0.12 + 0.11 / root) * d)))
}

/// `P(K > x)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = (-2.0 * k * k * x * x).exp();
        sum += if k as u64 % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
