//! Exact finite MDPs: representation, simulation, policy evaluation, value
//! iteration and stationary distributions.

use std::ops::{Deref, DerefMut};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{invalid, Error, Result};

/// Row-sum tolerance for transition probabilities.
pub const ROW_TOL: f64 = 1e-12;

/// Largest state count evaluated by a dense linear solve.
pub const DENSE_SOLVE_LIMIT: usize = 2048;

/// Finite discounted MDP with a deterministic reward table.
///
/// Transitions are stored row-major as `(s, a, s')`, rewards as `(s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    transition: Vec<f64>,
    reward: Vec<f64>,
    discount: f64,
}

impl TabularMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
        discount: f64,
    ) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidModel("empty state or action space".into()));
        }
        if transition.len() != num_states * num_actions * num_states {
            return Err(Error::InvalidModel(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                num_states * num_actions * num_states
            )));
        }
        if reward.len() != num_states * num_actions {
            return Err(Error::InvalidModel(format!(
                "reward table has {} entries, expected {}",
                reward.len(),
                num_states * num_actions
            )));
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(Error::InvalidModel(format!("discount {discount} outside (0, 1)")));
        }
        if let Some(r) = reward.iter().find(|r| !r.is_finite()) {
            return Err(Error::InvalidModel(format!("non-finite reward {r}")));
        }
        for (idx, row) in transition.chunks(num_states).enumerate() {
            check_row(row).map_err(|msg| {
                Error::InvalidModel(format!(
                    "row (s={}, a={}): {msg}",
                    idx / num_actions,
                    idx % num_actions
                ))
            })?;
        }
        Ok(TabularMdp {
            num_states,
            num_actions,
            transition,
            reward,
            discount,
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

    /// Successor distribution of `(s, a)`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.transition[start..start + self.num_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.num_actions + a]
    }

    pub fn transitions(&self) -> &[f64] {
        &self.transition
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// Same dynamics with a different discount.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        TabularMdp::new(
            self.num_states,
            self.num_actions,
            self.transition.clone(),
            self.reward.clone(),
            discount,
        )
    }

    /// Largest reward magnitude divided by `1 − γ`.
    pub fn value_bound(&self) -> f64 {
        let rmax = self.reward.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        rmax / (1.0 - self.discount)
    }

    /// `r(s,a) + γ Σ P(s'|s,a) V(s')` for every pair, laid out as `(s, a)`.
    pub fn q_values(&self, values: &[f64]) -> Vec<f64> {
        let mut q = Vec::with_capacity(self.num_states * self.num_actions);
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                q.push(self.reward(s, a) + self.discount * dot(self.row(s, a), values));
            }
        }
        q
    }

    /// `P^π` as a dense matrix.
    pub fn policy_matrix(&self, policy: &DeterministicPolicy) -> DMatrix<f64> {
        let n = self.num_states;
        DMatrix::from_fn(n, n, |s, t| self.row(s, policy[s])[t])
    }

    pub fn policy_reward(&self, policy: &DeterministicPolicy) -> Vec<f64> {
        (0..self.num_states).map(|s| self.reward(s, policy[s])).collect()
    }

    fn check_policy(&self, policy: &DeterministicPolicy) -> Result<()> {
        if policy.len() != self.num_states {
            return invalid(format!(
                "policy covers {} states, MDP has {}",
                policy.len(),
                self.num_states
            ));
        }
        if let Some(a) = policy.iter().find(|&&a| a >= self.num_actions) {
            return invalid(format!("policy action {a} out of range"));
        }
        Ok(())
    }
}

pub(crate) fn check_row(row: &[f64]) -> std::result::Result<(), String> {
    if let Some(p) = row.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
        return Err(format!("invalid probability {p}"));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOL {
        return Err(format!("sums to {total}"));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Action index per state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DeterministicPolicy(pub Vec<usize>);

impl Deref for DeterministicPolicy {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

/// State values.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueFunction(pub Vec<f64>);

impl Deref for ValueFunction {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ValueFunction {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Greedy action per state from a `(s, a)` table; ties go to the lowest index.
pub fn greedy_from_q(q: &[f64], num_actions: usize) -> (Vec<f64>, DeterministicPolicy) {
    let mut values = Vec::with_capacity(q.len() / num_actions);
    let mut actions = Vec::with_capacity(q.len() / num_actions);
    for row in q.chunks(num_actions) {
        let mut best = 0;
        for (a, v) in row.iter().enumerate().skip(1) {
            if *v > row[best] {
                best = a;
            }
        }
        values.push(row[best]);
        actions.push(best);
    }
    (values, DeterministicPolicy(actions))
}

/// `‖r^π + γP^πV − V‖_∞`.
pub fn policy_bellman_residual(mdp: &TabularMdp, policy: &DeterministicPolicy, v: &[f64]) -> f64 {
    (0..mdp.num_states)
        .map(|s| {
            let a = policy[s];
            (mdp.reward(s, a) + mdp.discount * dot(mdp.row(s, a), v) - v[s]).abs()
        })
        .fold(0.0, f64::max)
}

const EVAL_RESIDUAL: f64 = 1e-10;
const ITERATIVE_EVAL_CAP: usize = 100_000;

/// Solves `(I − γP^π)V = r^π`.
pub fn evaluate_policy_exact(mdp: &TabularMdp, policy: &DeterministicPolicy) -> Result<ValueFunction> {
    mdp.check_policy(policy)?;
    if mdp.num_states <= DENSE_SOLVE_LIMIT {
        let n = mdp.num_states;
        let p = mdp.policy_matrix(policy);
        let a = DMatrix::<f64>::identity(n, n) - p * mdp.discount;
        let r = DVector::from_vec(mdp.policy_reward(policy));
        let lu = a.clone().lu();
        let mut x = lu
            .solve(&r)
            .ok_or_else(|| Error::InvalidModel("singular policy system".into()))?;
        // One round of refinement keeps the residual at round-off level.
        let resid = &r - &a * &x;
        if let Some(dx) = lu.solve(&resid) {
            x += dx;
        }
        let v = x.iter().copied().collect::<Vec<_>>();
        if policy_bellman_residual(mdp, policy, &v) <= EVAL_RESIDUAL * (1.0 + mdp.value_bound()) {
            return Ok(ValueFunction(v));
        }
    }
    iterate_policy(mdp, policy)
}

fn iterate_policy(mdp: &TabularMdp, policy: &DeterministicPolicy) -> Result<ValueFunction> {
    let mut v = vec![0.0; mdp.num_states];
    let mut next = v.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..ITERATIVE_EVAL_CAP {
        for s in 0..mdp.num_states {
            let a = policy[s];
            next[s] = mdp.reward(s, a) + mdp.discount * dot(mdp.row(s, a), &v);
        }
        residual = max_abs_diff(&next, &v);
        std::mem::swap(&mut v, &mut next);
        if residual * mdp.discount / (1.0 - mdp.discount) <= EVAL_RESIDUAL * 1e-2 {
            return Ok(ValueFunction(v));
        }
    }
    Err(Error::NonConvergence {
        what: "policy evaluation",
        iterations: ITERATIVE_EVAL_CAP,
        residual,
    })
}

/// Value iteration until the Bellman residual `‖TV − V‖_∞` is at most `tol`.
/// Returns `V` and the greedy policy with respect to it.
pub fn value_iteration(
    mdp: &TabularMdp,
    tol: f64,
    max_iter: usize,
) -> Result<(ValueFunction, DeterministicPolicy)> {
    if !(tol > 0.0) {
        return invalid("value iteration tolerance must be positive");
    }
    let mut v = vec![0.0; mdp.num_states];
    let mut residual = f64::INFINITY;
    for _ in 0..=max_iter {
        let q = mdp.q_values(&v);
        let (tv, policy) = greedy_from_q(&q, mdp.num_actions);
        residual = max_abs_diff(&tv, &v);
        if residual <= tol {
            return Ok((ValueFunction(v), policy));
        }
        v = tv;
    }
    Err(Error::NonConvergence {
        what: "value iteration",
        iterations: max_iter,
        residual,
    })
}

const STATIONARY_CAP: usize = 1_000_000;
const STATIONARY_TOL: f64 = 1e-14;
const UNIQUENESS_CHECK_LIMIT: usize = 512;

/// Stationary distribution of `P^π`, by power iteration on the lazy chain
/// `½(I + P^π)`.
pub fn stationary_distribution(mdp: &TabularMdp, policy: &DeterministicPolicy) -> Result<Vec<f64>> {
    mdp.check_policy(policy)?;
    let n = mdp.num_states;
    let mut d = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    let mut converged = false;
    let mut change = f64::INFINITY;
    for _ in 0..STATIONARY_CAP {
        next.iter_mut().zip(&d).for_each(|(x, y)| *x = 0.5 * y);
        for s in 0..n {
            let mass = 0.5 * d[s];
            if mass == 0.0 {
                continue;
            }
            for (t, p) in mdp.row(s, policy[s]).iter().enumerate() {
                next[t] += mass * p;
            }
        }
        change = next.iter().zip(&d).map(|(x, y)| (x - y).abs()).sum();
        std::mem::swap(&mut d, &mut next);
        if change <= STATIONARY_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            what: "stationary distribution",
            iterations: STATIONARY_CAP,
            residual: change,
        });
    }
    let total: f64 = d.iter().sum();
    d.iter_mut().for_each(|x| *x /= total);

    if n <= UNIQUENESS_CHECK_LIMIT && n > 1 {
        // A unique stationary law needs rank(I − P^π) = n − 1.
        let m = DMatrix::<f64>::identity(n, n) - mdp.policy_matrix(policy);
        let rank = m.svd(false, false).rank(1e-9);
        if rank < n - 1 {
            return Err(Error::InvalidModel(format!(
                "chain has {} closed classes; stationary distribution is not unique",
                n - rank
            )));
        }
    }
    Ok(d)
}

/// Samples a successor by inverse CDF over a single uniform draw.
pub fn step<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    s: usize,
    a: usize,
    rng: &mut R,
) -> Result<(usize, f64)> {
    if s >= mdp.num_states || a >= mdp.num_actions {
        return invalid(format!("state/action ({s}, {a}) out of range"));
    }
    let u: f64 = rng.random();
    Ok((sample_index(mdp.row(s, a), u), mdp.reward(s, a)))
}

pub(crate) fn sample_index(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in row.iter().enumerate() {
        if *p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::random_mdp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_state(gamma: f64) -> TabularMdp {
        TabularMdp::new(1, 1, vec![1.0], vec![1.0], gamma).unwrap()
    }

    fn swap_chain() -> TabularMdp {
        TabularMdp::new(2, 1, vec![0.0, 1.0, 1.0, 0.0], vec![1.0, 0.0], 0.5).unwrap()
    }

    /// Cramer's rule for the 2×2 system.
    fn solve2(a: [[f64; 2]; 2], b: [f64; 2]) -> [f64; 2] {
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        [
            (b[0] * a[1][1] - a[0][1] * b[1]) / det,
            (a[0][0] * b[1] - b[0] * a[1][0]) / det,
        ]
    }

    #[test]
    fn rejects_bad_models() {
        assert!(TabularMdp::new(1, 1, vec![0.9], vec![0.0], 0.5).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![0.0], 1.0).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![0.0], 0.0).is_err());
        assert!(TabularMdp::new(2, 1, vec![1.0, 0.0], vec![0.0, 0.0], 0.5).is_err());
        assert!(TabularMdp::new(1, 1, vec![1.0], vec![f64::NAN], 0.5).is_err());
    }

    #[test]
    fn absorbing_state_value() {
        let v = evaluate_policy_exact(&single_state(0.8), &DeterministicPolicy(vec![0])).unwrap();
        assert!((v[0] - 5.0).abs() < 1e-12);
        let (v, pi) = value_iteration(&single_state(0.8), 1e-10, 10_000).unwrap();
        assert!((v[0] - 5.0).abs() < 1e-8);
        assert_eq!(pi.0, vec![0]);
    }

    #[test]
    fn two_state_cycle() {
        let v = evaluate_policy_exact(&swap_chain(), &DeterministicPolicy(vec![0, 0])).unwrap();
        let expect = solve2([[1.0, -0.5], [-0.5, 1.0]], [1.0, 0.0]);
        assert!((v[0] - expect[0]).abs() < 1e-12 && (v[1] - expect[1]).abs() < 1e-12);
        assert!((v[0] - 4.0 / 3.0).abs() < 1e-12 && (v[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn dominant_action_chosen() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base = random_mdp(5, 3, 0.9, &mut rng).unwrap();
        let mut reward = base.rewards().to_vec();
        // Same dynamics for every action, action 1 pays strictly more.
        let mut trans = base.transitions().to_vec();
        for s in 0..5 {
            let row0 = base.row(s, 0).to_vec();
            for a in 0..3 {
                let start = (s * 3 + a) * 5;
                trans[start..start + 5].copy_from_slice(&row0);
                reward[s * 3 + a] = if a == 1 { 1.0 } else { 0.5 };
            }
        }
        let mdp = TabularMdp::new(5, 3, trans, reward, 0.9).unwrap();
        let (_, pi) = value_iteration(&mdp, 1e-9, 10_000).unwrap();
        assert!(pi.iter().all(|&a| a == 1));
    }

    #[test]
    fn evaluation_residual_on_random_mdps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..1000 {
            let ns = 1 + i % 12;
            let na = 1 + i % 4;
            let gamma = 0.05 + 0.9 * (i as f64 / 1000.0);
            let mdp = random_mdp(ns, na, gamma, &mut rng).unwrap();
            let policy = DeterministicPolicy((0..ns).map(|s| s % na).collect());
            let v = evaluate_policy_exact(&mdp, &policy).unwrap();
            assert!(policy_bellman_residual(&mdp, &policy, &v) <= 1e-9);
        }
    }

    #[test]
    fn value_iteration_is_self_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let mdp = random_mdp(6, 3, 0.85, &mut rng).unwrap();
            let tol = 1e-9;
            let (v, pi) = value_iteration(&mdp, tol, 100_000).unwrap();
            let exact = evaluate_policy_exact(&mdp, &pi).unwrap();
            // ‖V − V^π‖ ≤ 2γ·tol/(1−γ)² covers both the VI error and greedy loss.
            let slack = 2.0 * tol / (1.0 - 0.85f64).powi(2);
            assert!(max_abs_diff(&v, &exact) <= slack);
        }
    }

    #[test]
    fn value_iteration_reports_nonconvergence() {
        let mdp = single_state(0.99);
        match value_iteration(&mdp, 1e-12, 5) {
            Err(Error::NonConvergence { residual, .. }) => assert!(residual > 0.0),
            other => panic!("expected non-convergence, got {other:?}"),
        }
        assert!(value_iteration(&mdp, 0.0, 5).is_err());
    }

    #[test]
    fn stationary_simple_chains() {
        let d = stationary_distribution(&swap_chain(), &DeterministicPolicy(vec![0, 0])).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-12 && (d[1] - 0.5).abs() < 1e-12);

        let absorbing =
            TabularMdp::new(2, 1, vec![0.3, 0.7, 0.0, 1.0], vec![0.0, 0.0], 0.9).unwrap();
        let d = stationary_distribution(&absorbing, &DeterministicPolicy(vec![0, 0])).unwrap();
        assert!(d[0].abs() < 1e-10 && (d[1] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn stationary_rejects_two_closed_classes() {
        let mdp = TabularMdp::new(2, 1, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 0.9).unwrap();
        assert!(stationary_distribution(&mdp, &DeterministicPolicy(vec![0, 0])).is_err());
    }

    #[test]
    fn stationary_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let mdp = random_mdp(7, 2, 0.9, &mut rng).unwrap();
            let pi = DeterministicPolicy(vec![1; 7]);
            let d = stationary_distribution(&mdp, &pi).unwrap();
            let p = mdp.policy_matrix(&pi);
            let dp = DVector::from_vec(d.clone()).transpose() * p;
            assert!(max_abs_diff(dp.as_slice(), &d) <= 1e-10);
            assert!((d.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
            assert!(d.iter().all(|x| *x >= 0.0));
        }
    }

    #[test]
    fn step_one_hot_and_determinism() {
        let mdp = TabularMdp::new(3, 1, vec![0., 0., 1., 1., 0., 0., 0., 1., 0.], vec![0.2, 0.0, 0.0], 0.9)
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            assert_eq!(step(&mdp, 0, 0, &mut rng).unwrap(), (2, 0.2));
        }
        assert!(step(&mdp, 3, 0, &mut rng).is_err());
        assert!(step(&mdp, 0, 1, &mut rng).is_err());

        let walk = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mdp = random_mdp(5, 2, 0.9, &mut rng).unwrap();
            let mut s = 0;
            (0..200)
                .map(|t| {
                    s = step(&mdp, s, t % 2, &mut rng).unwrap().0;
                    s
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(walk(42), walk(42));
    }

    #[test]
    fn step_uniform_row_frequencies() {
        let mdp = TabularMdp::new(4, 1, vec![0.25; 16], vec![0.0; 4], 0.9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut counts = [0usize; 4];
        let draws = 1_000_000;
        for _ in 0..draws {
            counts[step(&mdp, 0, 0, &mut rng).unwrap().0] += 1;
        }
        // 4.4 binomial standard deviations is ≈ 0.002 at n = 10⁶.
        for c in counts {
            assert!((c as f64 / draws as f64 - 0.25).abs() < 0.002);
        }
    }

    #[test]
    fn step_chi_square_sanity() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mdp = random_mdp(6, 2, 0.9, &mut rng).unwrap();
        let draws = 100_000;
        for s in 0..6 {
            for a in 0..2 {
                let mut counts = [0f64; 6];
                for _ in 0..draws {
                    counts[step(&mdp, s, a, &mut rng).unwrap().0] += 1.0;
                }
                let chi2: f64 = counts
                    .iter()
                    .zip(mdp.row(s, a))
                    .filter(|(_, p)| **p > 1e-6)
                    .map(|(c, p)| {
                        let e = p * draws as f64;
                        (c - e).powi(2) / e
                    })
                    .sum();
                // 5 degrees of freedom; 99.99th percentile ≈ 25.7.
                assert!(chi2 < 25.7, "chi2 {chi2} for ({s},{a})");
            }
        }
    }
}
