//! Conjugate posteriors: Dirichlet rows for tabular transitions, Gaussian
//! linear-payoff arms, and the three-part Frozen Lake posterior.
//!
//! Every posterior can be written to and read back from a small plain-text
//! snapshot. The format is line oriented: a header line naming the kind and
//! its dimensions, followed by one whitespace-separated record per line.
//! Floats are printed in shortest round-trip form.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::environments::{perpendicular, FrozenLakeLayout};
use crate::error::{invalid, Error, Result};
use crate::mdp::TabularMdp;

fn gamma_draw<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape == 1.0 {
        return rand_distr::Exp1.sample(rng);
    }
    Gamma::new(shape, 1.0)
        .expect("Dirichlet counts are positive")
        .sample(rng)
}

/// Draws one Dirichlet vector with parameters `counts` into `out` by
/// normalising independent Gamma(count, 1) variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(counts: &[f64], rng: &mut R, out: &mut [f64]) {
    debug_assert_eq!(counts.len(), out.len());
    let mut total = 0.0;
    for (o, &c) in out.iter_mut().zip(counts) {
        *o = if c > 0.0 { gamma_draw(c, rng) } else { 0.0 };
        total += *o;
    }
    if total > 0.0 {
        for o in out.iter_mut() {
            *o /= total;
        }
    } else {
        // Every draw underflowed; fall back to the largest count.
        let best = counts
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map_or(0, |(i, _)| i);
        out.fill(0.0);
        out[best] = 1.0;
    }
}

/// Independent Dirichlet posteriors over every transition row `P(· | s, a)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletTransitionPosterior {
    num_states: usize,
    num_actions: usize,
    counts: Vec<f64>,
}

impl DirichletTransitionPosterior {
    /// The uninformative all-ones prior.
    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self {
            num_states,
            num_actions,
            counts: vec![1.0; num_states * num_actions * num_states],
        }
    }

    /// Posterior with explicit pseudo-counts laid out as `(s, a, s')`.
    pub fn from_counts(num_states: usize, num_actions: usize, counts: Vec<f64>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return invalid("empty state or action space");
        }
        if counts.len() != num_states * num_actions * num_states {
            return invalid(format!(
                "count tensor has {} entries, expected {}",
                counts.len(),
                num_states * num_actions * num_states
            ));
        }
        if let Some(c) = counts.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
            return invalid(format!("invalid Dirichlet count {c}"));
        }
        for row in counts.chunks(num_states) {
            if row.iter().sum::<f64>() <= 0.0 {
                return invalid("Dirichlet row with zero total count");
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            counts,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn row_counts(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.num_actions + a) * self.num_states;
        &self.counts[start..start + self.num_states]
    }

    /// Records one observed transition.
    pub fn update(&mut self, s: usize, a: usize, next: usize) -> Result<()> {
        if s >= self.num_states || a >= self.num_actions || next >= self.num_states {
            return invalid(format!("transition ({s}, {a}, {next}) out of range"));
        }
        self.counts[(s * self.num_actions + a) * self.num_states + next] += 1.0;
        Ok(())
    }

    /// Number of observations of `(s, a)` beyond a unit prior,
    /// `Σ_{s'} (ψ(s') − 1)`.
    pub fn observations(&self, s: usize, a: usize) -> f64 {
        self.row_counts(s, a).iter().map(|c| c - 1.0).sum()
    }

    pub fn mean_row(&self, s: usize, a: usize) -> Vec<f64> {
        let row = self.row_counts(s, a);
        let total: f64 = row.iter().sum();
        row.iter().map(|c| c / total).collect()
    }

    pub fn sample_row<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R, out: &mut [f64]) {
        sample_dirichlet(self.row_counts(s, a), rng, out);
    }

    /// Draws a full transition tensor, one independent Dirichlet row per
    /// `(s, a)`, laid out as `(s, a, s')`.
    pub fn sample_kernel<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.counts.len()];
        for (row, counts) in out
            .chunks_mut(self.num_states)
            .zip(self.counts.chunks(self.num_states))
        {
            sample_dirichlet(counts, rng, row);
        }
        out
    }

    /// A sampled kernel combined with a known reward table.
    pub fn sample_mdp<R: Rng + ?Sized>(
        &self,
        reward: &[f64],
        discount: f64,
        rng: &mut R,
    ) -> Result<TabularMdp> {
        TabularMdp::new(
            self.num_states,
            self.num_actions,
            self.sample_kernel(rng),
            reward.to_vec(),
            discount,
        )
    }

    pub fn to_snapshot(&self) -> String {
        let mut out = format!("dirichlet {} {}\n", self.num_states, self.num_actions);
        for s in 0..self.num_states {
            for a in 0..self.num_actions {
                out.push_str(&format!("{s} {a}"));
                for c in self.row_counts(s, a) {
                    out.push_str(&format!(" {c}"));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let (line, header) = lines.next_record()?;
        let dims = expect_header(line, &header, "dirichlet", 2)?;
        let (ns, na) = (dims[0], dims[1]);
        let mut counts = vec![0.0; ns * na * ns];
        for s in 0..ns {
            for a in 0..na {
                let (line, rec) = lines.next_record()?;
                if rec.len() != ns + 2 {
                    return Err(snapshot_error(line, format!("expected {} fields", ns + 2)));
                }
                if parse_usize(line, rec[0])? != s || parse_usize(line, rec[1])? != a {
                    return Err(snapshot_error(line, format!("expected row ({s}, {a})")));
                }
                let start = (s * na + a) * ns;
                for (slot, field) in counts[start..start + ns].iter_mut().zip(&rec[2..]) {
                    *slot = parse_f64(line, field)?;
                }
            }
        }
        lines.expect_end()?;
        Self::from_counts(ns, na, counts)
    }
}

/// How payoff samples are post-processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    /// Draws from the Gaussian posterior predictive of the mean payoff.
    Plain,
    /// Each Gaussian draw `Y` is replaced by `min(1, max(Y, 0))`.
    Truncated,
}

#[derive(Debug, Clone, PartialEq)]
struct Arm {
    precision: DMatrix<f64>,
    accumulator: DVector<f64>,
    /// Row-major `V⁻¹`.
    inverse: Vec<f64>,
    theta: Vec<f64>,
    pulls: usize,
}

impl Arm {
    fn prior(dim: usize) -> Self {
        let mut arm = Arm {
            precision: DMatrix::identity(dim, dim),
            accumulator: DVector::zeros(dim),
            inverse: Vec::new(),
            theta: Vec::new(),
            pulls: 0,
        };
        arm.refresh().expect("identity is positive definite");
        arm
    }

    fn refresh(&mut self) -> Result<()> {
        let chol = self
            .precision
            .clone()
            .cholesky()
            .ok_or(Error::NotPositiveDefinite)?;
        let inverse = chol.inverse();
        self.theta = chol.solve(&self.accumulator).iter().copied().collect();
        // nalgebra stores column-major; V⁻¹ is symmetric so either order works,
        // but symmetrise to keep quadratic forms exactly order independent.
        let d = inverse.nrows();
        self.inverse = (0..d * d)
            .map(|k| {
                let (i, j) = (k / d, k % d);
                0.5 * (inverse[(i, j)] + inverse[(j, i)])
            })
            .collect();
        Ok(())
    }
}

/// Gaussian posteriors `N(θ_a, ν² V_a⁻¹)` for the parameters of a linear
/// payoff `r(s, a) = sᵀθ_a` under a `N(0, ν² I)` prior.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLinearPosterior {
    dim: usize,
    noise: f64,
    arms: Vec<Arm>,
}

impl GaussianLinearPosterior {
    pub fn new(num_arms: usize, dim: usize, noise: f64) -> Result<Self> {
        if num_arms == 0 || dim == 0 {
            return invalid("Gaussian posterior needs at least one arm and one dimension");
        }
        if !(noise.is_finite() && noise > 0.0) {
            return invalid(format!("noise scale {noise} must be positive"));
        }
        Ok(Self {
            dim,
            noise,
            arms: vec![Arm::prior(dim); num_arms],
        })
    }

    pub fn num_arms(&self) -> usize {
        self.arms.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise(&self) -> f64 {
        self.noise
    }

    pub fn precision(&self, arm: usize) -> &DMatrix<f64> {
        &self.arms[arm].precision
    }

    pub fn accumulator(&self, arm: usize) -> &DVector<f64> {
        &self.arms[arm].accumulator
    }

    pub fn theta(&self, arm: usize) -> &[f64] {
        &self.arms[arm].theta
    }

    pub fn pulls(&self, arm: usize) -> usize {
        self.arms[arm].pulls
    }

    /// Adds one observation `(s, R)` to `arm`: `V += ssᵀ`, `b += sR`.
    pub fn update(&mut self, arm: usize, context: &[f64], reward: f64) -> Result<()> {
        self.check(arm, context)?;
        if !reward.is_finite() {
            return invalid(format!("non-finite reward {reward}"));
        }
        let d = self.dim;
        let a = &mut self.arms[arm];
        for i in 0..d {
            for j in 0..d {
                a.precision[(i, j)] += context[i] * context[j];
            }
            a.accumulator[i] += context[i] * reward;
        }
        a.pulls += 1;
        a.refresh()
    }

    /// Posterior mean `sᵀθ_a` and the quadratic form `sᵀV_a⁻¹s`.
    pub fn predictive(&self, arm: usize, context: &[f64]) -> (f64, f64) {
        let a = &self.arms[arm];
        let d = self.dim;
        let mean = crate::mdp::dot(context, &a.theta);
        let mut quad = 0.0;
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                row += a.inverse[i * d + j] * context[j];
            }
            quad += context[i] * row;
        }
        (mean, quad.max(0.0))
    }

    /// Mean and standard deviation of `sᵀθ` under the posterior, with the
    /// noise scale optionally replaced by `scale`.
    pub fn payoff_distribution(&self, arm: usize, context: &[f64], scale: Option<f64>) -> (f64, f64) {
        let (mean, quad) = self.predictive(arm, context);
        (mean, scale.unwrap_or(self.noise) * quad.sqrt())
    }

    /// Fills `out` with i.i.d. draws of `sᵀθ` for `arm`.
    pub fn sample_payoffs<R: Rng + ?Sized>(
        &self,
        arm: usize,
        context: &[f64],
        mode: SamplingMode,
        scale: Option<f64>,
        rng: &mut R,
        out: &mut [f64],
    ) -> Result<()> {
        self.check(arm, context)?;
        if out.is_empty() {
            return invalid("at least one payoff sample is required");
        }
        if let Some(s) = scale {
            if !(s.is_finite() && s >= 0.0) {
                return invalid(format!("invalid scale override {s}"));
            }
        }
        let (mean, sd) = self.payoff_distribution(arm, context, scale);
        for o in out.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            let y = mean + sd * z;
            *o = match mode {
                SamplingMode::Plain => y,
                SamplingMode::Truncated => y.clamp(0.0, 1.0),
            };
        }
        Ok(())
    }

    fn check(&self, arm: usize, context: &[f64]) -> Result<()> {
        if arm >= self.arms.len() {
            return invalid(format!("arm {arm} out of range"));
        }
        if context.len() != self.dim {
            return invalid(format!(
                "context has dimension {}, expected {}",
                context.len(),
                self.dim
            ));
        }
        Ok(())
    }

    pub fn to_snapshot(&self) -> String {
        let mut out = format!("gaussian {} {} {}\n", self.arms.len(), self.dim, self.noise);
        for (k, a) in self.arms.iter().enumerate() {
            out.push_str(&format!("arm {k} {}\n", a.pulls));
            for i in 0..self.dim {
                out.push('V');
                for j in 0..self.dim {
                    out.push_str(&format!(" {}", a.precision[(i, j)]));
                }
                out.push('\n');
            }
            out.push('b');
            for v in a.accumulator.iter() {
                out.push_str(&format!(" {v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let (line, header) = lines.next_record()?;
        if header.len() != 4 || header[0] != "gaussian" {
            return Err(snapshot_error(line, "expected `gaussian <arms> <dim> <noise>`"));
        }
        let k = parse_usize(line, header[1])?;
        let d = parse_usize(line, header[2])?;
        let noise = parse_f64(line, header[3])?;
        let mut post = Self::new(k, d, noise).map_err(|e| snapshot_error(line, e.to_string()))?;
        for idx in 0..k {
            let (line, rec) = lines.next_record()?;
            if rec.len() != 3 || rec[0] != "arm" || parse_usize(line, rec[1])? != idx {
                return Err(snapshot_error(line, format!("expected `arm {idx} <pulls>`")));
            }
            let pulls = parse_usize(line, rec[2])?;
            let mut precision = DMatrix::zeros(d, d);
            for i in 0..d {
                let (line, rec) = lines.next_record()?;
                if rec.len() != d + 1 || rec[0] != "V" {
                    return Err(snapshot_error(line, "expected a `V` row"));
                }
                for j in 0..d {
                    precision[(i, j)] = parse_f64(line, rec[j + 1])?;
                }
            }
            let (line, rec) = lines.next_record()?;
            if rec.len() != d + 1 || rec[0] != "b" {
                return Err(snapshot_error(line, "expected a `b` row"));
            }
            let mut accumulator = DVector::zeros(d);
            for i in 0..d {
                accumulator[i] = parse_f64(line, rec[i + 1])?;
            }
            let arm = &mut post.arms[idx];
            arm.precision = precision;
            arm.accumulator = accumulator;
            arm.pulls = pulls;
            arm.refresh().map_err(|e| snapshot_error(line, e.to_string()))?;
        }
        lines.expect_end()?;
        Ok(post)
    }
}

/// Which latent outcome an observed Frozen Lake transition was credited to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attribution {
    /// Slip outcome index: 0 intended, 1 and 2 the perpendicular moves.
    Slip(usize),
    HoleMove,
    HoleStay,
    /// Index into the restart cells.
    Restart(usize),
    /// Several latent outcomes lead to the observed cell; nothing recorded.
    Discarded,
}

/// Dirichlet posteriors over the slip distribution, the hole-exit
/// probability and the restart distribution of a Frozen Lake board.
#[derive(Debug, Clone, PartialEq)]
pub struct HierarchicalFrozenLakePosterior {
    pub slip_counts: [f64; 3],
    /// Counts for (move, stay) out of a hole.
    pub hole_counts: [f64; 2],
    pub restart_counts: Vec<f64>,
}

impl HierarchicalFrozenLakePosterior {
    /// All-ones prior sized for `layout`.
    pub fn uniform(layout: &FrozenLakeLayout) -> Self {
        Self {
            slip_counts: [1.0; 3],
            hole_counts: [1.0; 2],
            restart_counts: vec![1.0; layout.restart_cells().len()],
        }
    }

    /// Credits the transition `(s, a, next)` to the unique latent outcome
    /// that explains it, or discards it when several do.
    pub fn update(
        &mut self,
        layout: &FrozenLakeLayout,
        s: usize,
        a: usize,
        next: usize,
    ) -> Result<Attribution> {
        let n = layout.num_states();
        if s >= n || next >= n || a >= crate::environments::NUM_MOVES {
            return invalid(format!("transition ({s}, {a}, {next}) out of range"));
        }
        let infeasible = Error::InfeasibleTransition {
            from: s,
            action: a,
            to: next,
        };
        let attribution = if layout.is_goal(s) {
            let idx = layout
                .restart_cells()
                .iter()
                .position(|&c| c == next)
                .ok_or(infeasible)?;
            Attribution::Restart(idx)
        } else if layout.is_hole(s) {
            let moved = layout.neighbor(s, a);
            match (next == moved, next == s) {
                (true, true) => Attribution::Discarded,
                (true, false) => Attribution::HoleMove,
                (false, true) => Attribution::HoleStay,
                (false, false) => return Err(infeasible),
            }
        } else {
            let [p1, p2] = perpendicular(a);
            let targets = [layout.neighbor(s, a), layout.neighbor(s, p1), layout.neighbor(s, p2)];
            let mut hits = targets.iter().enumerate().filter(|(_, &t)| t == next);
            match (hits.next(), hits.next()) {
                (None, _) => return Err(infeasible),
                (Some((k, _)), None) => Attribution::Slip(k),
                (Some(_), Some(_)) => Attribution::Discarded,
            }
        };
        match attribution {
            Attribution::Slip(k) => self.slip_counts[k] += 1.0,
            Attribution::HoleMove => self.hole_counts[0] += 1.0,
            Attribution::HoleStay => self.hole_counts[1] += 1.0,
            Attribution::Restart(k) => self.restart_counts[k] += 1.0,
            Attribution::Discarded => {}
        }
        Ok(attribution)
    }

    /// Draws (slip, hole-exit, restart) parameters from the posterior.
    pub fn sample_parameters<R: Rng + ?Sized>(&self, rng: &mut R) -> ([f64; 3], f64, Vec<f64>) {
        let mut slip = [0.0; 3];
        sample_dirichlet(&self.slip_counts, rng, &mut slip);
        let mut hole = [0.0; 2];
        sample_dirichlet(&self.hole_counts, rng, &mut hole);
        let mut restart = vec![0.0; self.restart_counts.len()];
        sample_dirichlet(&self.restart_counts, rng, &mut restart);
        (slip, hole[0], restart)
    }

    /// A Frozen Lake MDP built from one posterior draw.
    pub fn sample_mdp<R: Rng + ?Sized>(
        &self,
        layout: &FrozenLakeLayout,
        rng: &mut R,
    ) -> Result<TabularMdp> {
        let (slip, hole_exit, restart) = self.sample_parameters(rng);
        crate::environments::build_sampled_frozen_lake(layout, slip, hole_exit, restart)
    }

    pub fn to_snapshot(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ");
        format!(
            "frozen-lake {}\nslip {}\nhole {}\nrestart {}\n",
            self.restart_counts.len(),
            join(&self.slip_counts),
            join(&self.hole_counts),
            join(&self.restart_counts)
        )
    }

    pub fn from_snapshot(text: &str) -> Result<Self> {
        let mut lines = Lines::new(text);
        let (line, header) = lines.next_record()?;
        let dims = expect_header(line, &header, "frozen-lake", 1)?;
        let mut read = |tag: &str, len: usize| -> Result<Vec<f64>> {
            let (line, rec) = lines.next_record()?;
            if rec.len() != len + 1 || rec[0] != tag {
                return Err(snapshot_error(line, format!("expected `{tag}` with {len} counts")));
            }
            let values = rec[1..]
                .iter()
                .map(|f| parse_f64(line, f))
                .collect::<Result<Vec<_>>>()?;
            if values.iter().any(|c| !(*c > 0.0)) {
                return Err(snapshot_error(line, "counts must be positive"));
            }
            Ok(values)
        };
        let slip = read("slip", 3)?;
        let hole = read("hole", 2)?;
        let restart = read("restart", dims[0])?;
        lines.expect_end()?;
        Ok(Self {
            slip_counts: [slip[0], slip[1], slip[2]],
            hole_counts: [hole[0], hole[1]],
            restart_counts: restart,
        })
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self {
            inner: text.lines().enumerate(),
        }
    }

    /// Next non-blank, non-comment line as (1-based line number, fields).
    fn next_record(&mut self) -> Result<(usize, Vec<&'a str>)> {
        for (idx, raw) in self.inner.by_ref() {
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            return Ok((idx + 1, trimmed.split_whitespace().collect()));
        }
        Err(snapshot_error(0, "unexpected end of snapshot"))
    }

    fn expect_end(&mut self) -> Result<()> {
        match self.next_record() {
            Ok((line, _)) => Err(snapshot_error(line, "trailing data")),
            Err(_) => Ok(()),
        }
    }
}

fn snapshot_error(line: usize, message: impl Into<String>) -> Error {
    Error::Snapshot {
        line,
        message: message.into(),
    }
}

fn expect_header(line: usize, rec: &[&str], kind: &str, dims: usize) -> Result<Vec<usize>> {
    if rec.len() != dims + 1 || rec[0] != kind {
        return Err(snapshot_error(line, format!("expected `{kind}` header with {dims} sizes")));
    }
    rec[1..].iter().map(|f| parse_usize(line, f)).collect()
}

fn parse_usize(line: usize, field: &str) -> Result<usize> {
    field
        .parse()
        .map_err(|_| snapshot_error(line, format!("`{field}` is not an index")))
}

fn parse_f64(line: usize, field: &str) -> Result<f64> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(snapshot_error(line, format!("`{field}` is not a finite number"))),
    }
}
