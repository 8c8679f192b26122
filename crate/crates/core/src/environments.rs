//! Concrete environments: the slippery 4×4 Frozen Lake variant with
//! sticky holes and random restarts, and random MDPs for oracle tests.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{DeterministicPolicy, TabularMdp};

/// Grid cell as `[row, col]`.
pub type Cell = [usize; 2];

/// Action indices, in the usual gym ordering.
pub const LEFT: usize = 0;
pub const DOWN: usize = 1;
pub const RIGHT: usize = 2;
pub const UP: usize = 3;
pub const NUM_MOVES: usize = 4;

const DELTAS: [(isize, isize); NUM_MOVES] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

/// The two directions perpendicular to `action`, in a fixed order. Slip
/// outcome 1 is the first of these, slip outcome 2 the second.
pub fn perpendicular(action: usize) -> [usize; 2] {
    [(action + 1) % NUM_MOVES, (action + 3) % NUM_MOVES]
}

/// Layout and (true or sampled) parameters of the Frozen Lake game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrozenLakeLayout {
    pub rows: usize,
    pub cols: usize,
    pub start: Cell,
    pub goal: Cell,
    pub holes: Vec<Cell>,
    /// Probabilities of (intended, perpendicular 1, perpendicular 2) moves
    /// outside holes.
    pub slip: [f64; 3],
    /// Probability of leaving a hole in the intended direction.
    pub hole_exit: f64,
    /// Restart distribution over [`FrozenLakeLayout::restart_cells`], in
    /// state-index order.
    pub restart: Vec<f64>,
    pub discount: f64,
}

impl FrozenLakeLayout {
    /// The standard 4×4 board with uniform restarts, slip (0.5, 0.25, 0.25)
    /// and γ = 0.8.
    pub fn standard(hole_exit: f64) -> Self {
        let mut layout = FrozenLakeLayout {
            rows: 4,
            cols: 4,
            start: [0, 0],
            goal: [3, 3],
            holes: vec![[1, 1], [1, 3], [2, 3], [3, 0]],
            slip: [0.5, 0.25, 0.25],
            hole_exit,
            restart: Vec::new(),
            discount: 0.8,
        };
        let k = layout.restart_cells().len();
        layout.restart = vec![1.0 / k as f64; k];
        layout
    }

    pub fn num_states(&self) -> usize {
        self.rows * self.cols
    }

    pub fn state(&self, cell: Cell) -> usize {
        cell[0] * self.cols + cell[1]
    }

    pub fn cell(&self, state: usize) -> Cell {
        [state / self.cols, state % self.cols]
    }

    pub fn is_hole(&self, state: usize) -> bool {
        self.holes.iter().any(|h| self.state(*h) == state)
    }

    pub fn is_goal(&self, state: usize) -> bool {
        self.state(self.goal) == state
    }

    pub fn start_state(&self) -> usize {
        self.state(self.start)
    }

    /// Cells that are neither holes nor the goal, in state-index order.
    pub fn restart_cells(&self) -> Vec<usize> {
        (0..self.num_states())
            .filter(|&s| !self.is_hole(s) && !self.is_goal(s))
            .collect()
    }

    /// Cell reached by moving `direction` from `state`; off-grid moves stay.
    pub fn neighbor(&self, state: usize, direction: usize) -> usize {
        let [r, c] = self.cell(state);
        let (dr, dc) = DELTAS[direction];
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr < 0 || nc < 0 || nr >= self.rows as isize || nc >= self.cols as isize {
            state
        } else {
            nr as usize * self.cols + nc as usize
        }
    }

    /// Same board with substituted (sampled) parameters.
    pub fn with_parameters(&self, slip: [f64; 3], hole_exit: f64, restart: Vec<f64>) -> Self {
        FrozenLakeLayout {
            slip,
            hole_exit,
            restart,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidModel(format!("frozen lake layout: {msg}")));
        if self.rows == 0 || self.cols == 0 {
            return bad("empty grid".into());
        }
        let inside = |c: &Cell| c[0] < self.rows && c[1] < self.cols;
        if !inside(&self.start) || !inside(&self.goal) || !self.holes.iter().all(inside) {
            return bad("cell outside the grid".into());
        }
        let mut seen: Vec<usize> = self.holes.iter().map(|h| self.state(*h)).collect();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.holes.len() {
            return bad("duplicate hole".into());
        }
        let (start, goal) = (self.state(self.start), self.state(self.goal));
        if start == goal || seen.contains(&start) || seen.contains(&goal) {
            return bad("start, goal and holes must be disjoint".into());
        }
        check_distribution("slip", &self.slip)?;
        check_distribution("restart", &self.restart)?;
        let k = self.restart_cells().len();
        if self.restart.len() != k {
            return bad(format!("restart has {} entries, expected {k}", self.restart.len()));
        }
        if !(0.0..=1.0).contains(&self.hole_exit) {
            return bad(format!("hole exit probability {} outside [0, 1]", self.hole_exit));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad(format!("discount {} outside (0, 1)", self.discount));
        }
        Ok(())
    }

    /// Successor distribution of `(s, a)` under this layout's parameters.
    pub fn successor_row(&self, s: usize, a: usize) -> Vec<f64> {
        let n = self.num_states();
        let mut row = vec![0.0; n];
        if self.is_goal(s) {
            for (cell, p) in self.restart_cells().into_iter().zip(&self.restart) {
                row[cell] += p;
            }
        } else if self.is_hole(s) {
            row[self.neighbor(s, a)] += self.hole_exit;
            row[s] += 1.0 - self.hole_exit;
        } else {
            let [p1, p2] = perpendicular(a);
            row[self.neighbor(s, a)] += self.slip[0];
            row[self.neighbor(s, p1)] += self.slip[1];
            row[self.neighbor(s, p2)] += self.slip[2];
        }
        row
    }
}

fn check_distribution(name: &str, p: &[f64]) -> Result<()> {
    crate::mdp::check_row(p)
        .map_err(|msg| Error::InvalidModel(format!("frozen lake {name} distribution {msg}")))
}

/// Compiles the layout into a 16-state, 4-action MDP. The reward of `(s, a)`
/// is the probability that the next state is the goal.
pub fn build_frozen_lake(layout: &FrozenLakeLayout) -> Result<TabularMdp> {
    layout.validate()?;
    compile(layout)
}

/// [`build_frozen_lake`] with sampled slip, hole-exit and restart parameters.
pub fn build_sampled_frozen_lake(
    layout: &FrozenLakeLayout,
    slip: [f64; 3],
    hole_exit: f64,
    restart: Vec<f64>,
) -> Result<TabularMdp> {
    build_frozen_lake(&layout.with_parameters(slip, hole_exit, restart))
}

fn compile(layout: &FrozenLakeLayout) -> Result<TabularMdp> {
    let n = layout.num_states();
    let goal = layout.state(layout.goal);
    let mut transition = Vec::with_capacity(n * NUM_MOVES * n);
    let mut reward = Vec::with_capacity(n * NUM_MOVES);
    for s in 0..n {
        for a in 0..NUM_MOVES {
            let row = layout.successor_row(s, a);
            reward.push(if layout.is_goal(s) { 0.0 } else { row[goal] });
            transition.extend(row);
        }
    }
    TabularMdp::new(n, NUM_MOVES, transition, reward, layout.discount)
}

/// Reference optimal policy of the standard board with hole-exit probability
/// 0.1 (arrows listed row by row; the goal cell's action is arbitrary and set
/// to the lowest index). It is the greedy policy of [`build_frozen_lake`]
/// everywhere except the hole at `[1, 3]`, where the greedy action is down.
pub fn reference_policy() -> DeterministicPolicy {
    DeterministicPolicy(vec![
        DOWN, RIGHT, DOWN, LEFT, //
        DOWN, DOWN, DOWN, LEFT, //
        RIGHT, DOWN, DOWN, DOWN, //
        RIGHT, RIGHT, RIGHT, LEFT,
    ])
}

/// Random MDP with Dirichlet(1, …, 1) rows and uniform `[0, 1]` rewards.
pub fn random_mdp<R: Rng + ?Sized>(
    num_states: usize,
    num_actions: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<TabularMdp> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::InvalidModel("empty state or action space".into()));
    }
    let mut transition = Vec::with_capacity(num_states * num_actions * num_states);
    for _ in 0..num_states * num_actions {
        let row: Vec<f64> = (0..num_states).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = row.iter().sum();
        transition.extend(row.into_iter().map(|x| x / total));
    }
    let reward = (0..num_states * num_actions).map(|_| rng.random::<f64>()).collect();
    TabularMdp::new(num_states, num_actions, transition, reward, gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::value_iteration;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn lake(p_h: f64) -> (FrozenLakeLayout, TabularMdp) {
        let layout = FrozenLakeLayout::standard(p_h);
        let mdp = build_frozen_lake(&layout).unwrap();
        (layout, mdp)
    }

    #[test]
    fn start_cell_moving_right() {
        let (l, mdp) = lake(0.1);
        let row = mdp.row(l.state([0, 0]), RIGHT);
        assert_eq!(row[l.state([0, 1])], 0.5);
        assert_eq!(row[l.state([0, 0])], 0.25);
        assert_eq!(row[l.state([1, 0])], 0.25);
        assert_eq!(row.iter().filter(|p| **p > 0.0).count(), 3);
    }

    #[test]
    fn hole_dynamics() {
        let (l, mdp) = lake(0.1);
        let row = mdp.row(l.state([1, 1]), UP);
        assert!((row[l.state([0, 1])] - 0.1).abs() < 1e-15);
        assert!((row[l.state([1, 1])] - 0.9).abs() < 1e-15);
        assert_eq!(row.iter().filter(|p| **p > 0.0).count(), 2);
        // From hole [2,3] moving down reaches the goal with probability p_h.
        assert!((mdp.reward(l.state([2, 3]), DOWN) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn goal_restarts_uniformly() {
        let (l, mdp) = lake(0.1);
        assert_eq!(l.restart_cells().len(), 11);
        for a in 0..NUM_MOVES {
            let row = mdp.row(l.state(l.goal), a);
            for s in l.restart_cells() {
                assert!((row[s] - 1.0 / 11.0).abs() < 1e-15);
            }
            assert_eq!(mdp.reward(l.state(l.goal), a), 0.0);
        }
    }

    #[test]
    fn rows_are_sums_of_known_masses() {
        // Every entry is a sum of at most three of {p_h, 1 − p_h, 0.5, 0.25, 1/11}.
        let p_h = 0.37;
        let (l, mdp) = lake(p_h);
        let atoms = [p_h, 1.0 - p_h, 0.5, 0.25, 1.0 / 11.0];
        let mut sums = vec![0.0];
        for _ in 0..3 {
            let mut next = sums.clone();
            for s in &sums {
                for a in &atoms {
                    next.push(s + a);
                }
            }
            sums = next;
        }
        for s in 0..16 {
            for a in 0..4 {
                for p in mdp.row(s, a) {
                    assert!(sums.iter().any(|x| (x - p).abs() < 1e-14), "({s},{a}) {p}");
                }
            }
        }
        let _ = l;
    }

    #[test]
    fn sampled_parameters_reproduce_truth() {
        let (l, mdp) = lake(0.2);
        let sampled = build_sampled_frozen_lake(&l, l.slip, 0.2, l.restart.clone()).unwrap();
        assert_eq!(sampled, mdp);
    }

    #[test]
    fn no_slip_is_deterministic_outside_holes() {
        let l = FrozenLakeLayout::standard(0.3);
        let mdp = build_sampled_frozen_lake(&l, [1.0, 0.0, 0.0], 0.3, l.restart.clone()).unwrap();
        for s in 0..16 {
            if l.is_hole(s) || l.is_goal(s) {
                continue;
            }
            for a in 0..4 {
                let row = mdp.row(s, a);
                assert_eq!(row[l.neighbor(s, a)], 1.0);
            }
        }
    }

    #[test]
    fn random_sampled_parameters_are_stochastic() {
        let l = FrozenLakeLayout::standard(0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let mut slip = [0.0; 3];
            slip.iter_mut().for_each(|x| *x = rng.random::<f64>());
            let t: f64 = slip.iter().sum();
            slip.iter_mut().for_each(|x| *x /= t);
            let mut restart: Vec<f64> = (0..11).map(|_| rng.random::<f64>()).collect();
            let t: f64 = restart.iter().sum();
            restart.iter_mut().for_each(|x| *x /= t);
            let mdp = build_sampled_frozen_lake(&l, slip, rng.random(), restart).unwrap();
            for s in 0..16 {
                for a in 0..4 {
                    assert!((mdp.row(s, a).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn invalid_layouts_rejected() {
        let mut l = FrozenLakeLayout::standard(0.1);
        l.holes.push([0, 0]);
        assert!(build_frozen_lake(&l).is_err());
        let mut l = FrozenLakeLayout::standard(0.1);
        l.slip = [0.5, 0.5, 0.5];
        assert!(build_frozen_lake(&l).is_err());
        let mut l = FrozenLakeLayout::standard(0.1);
        l.restart.pop();
        assert!(build_frozen_lake(&l).is_err());
        let mut l = FrozenLakeLayout::standard(0.1);
        l.goal = [4, 4];
        assert!(build_frozen_lake(&l).is_err());
    }

    #[test]
    fn optimal_policy_matches_reference_arrows() {
        let (_, mdp) = lake(0.1);
        let (v, pi) = value_iteration(&mdp, 1e-12, 100_000).unwrap();
        let reference = reference_policy();
        for s in 0..16 {
            if s == 7 {
                continue;
            }
            assert_eq!(pi[s], reference[s], "state {s}");
        }
        // Hole [1, 3]: the tabulated arrow points left, but stepping down into
        // the hole next to the goal is worth more under this model.
        let q = mdp.q_values(&v);
        assert_eq!(pi[7], DOWN);
        assert!(q[7 * 4 + DOWN] - q[7 * 4 + LEFT] > 0.01);
    }

    #[test]
    fn random_mdp_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let one = random_mdp(1, 3, 0.5, &mut rng).unwrap();
        for a in 0..3 {
            assert_eq!(one.row(0, a), &[1.0]);
        }
        let m = random_mdp(5, 2, 0.9, &mut rng).unwrap();
        for s in 0..5 {
            for a in 0..2 {
                assert!((m.row(s, a).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!((0.0..=1.0).contains(&m.reward(s, a)));
            }
        }
    }
}
