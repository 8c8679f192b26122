//! Experiment configuration files.
//!
//! A config is a TOML document. Top-level keys select the experiment and its
//! replication scheme; the `[environment]` table picks a preset and optional
//! overrides; one further table per experiment kind carries algorithm
//! settings. Unknown keys are rejected. [`parse_str`] fills every omitted
//! setting with its default, so a parsed config serialises to a complete,
//! self-describing document. See `docs/config.md` for the full schema.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::{ContextSampler, LinearBanditEnv, Variant};
use crate::environments::{build_frozen_lake, random_mdp, Cell, FrozenLakeLayout};
use crate::error::{Error, Result};
use crate::mdp::TabularMdp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    BanditRegret,
    MdpRegret,
    OnlineBrvi,
    Normality,
    Solve,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::BanditRegret => "bandit-regret",
            ExperimentKind::MdpRegret => "mdp-regret",
            ExperimentKind::OnlineBrvi => "online-brvi",
            ExperimentKind::Normality => "normality",
            ExperimentKind::Solve => "solve",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// 4×4 Frozen Lake board.
    FrozenLake,
    /// Random tabular MDP with Dirichlet(1, …, 1) rows.
    Random,
    /// Ten-arm linear Gaussian bandit with sinusoidal arm parameters.
    Sinusoidal,
    /// As `sinusoidal`, with realised rewards clipped to `[0, 1]`.
    SinusoidalBounded,
}

impl Preset {
    fn name(self) -> &'static str {
        match self {
            Preset::FrozenLake => "frozen-lake",
            Preset::Random => "random",
            Preset::Sinusoidal => "sinusoidal",
            Preset::SinusoidalBounded => "sinusoidal-bounded",
        }
    }

    fn is_bandit(self) -> bool {
        matches!(self, Preset::Sinusoidal | Preset::SinusoidalBounded)
    }
}

/// Environment preset and overrides. Only the overrides that belong to the
/// chosen preset are accepted.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discount: Option<f64>,

    // Frozen Lake.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hole_exit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cols: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Cell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<Cell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holes: Option<Vec<Cell>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slip: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub restart: Option<Vec<f64>>,

    // Random MDP.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub states: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    // Bandits.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arms: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thetas: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contexts: Option<ContextSampler>,
}

/// Regret criterion of a bandit curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Regret,
    BrRegret,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Regret => "regret",
            Metric::BrRegret => "br-regret",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BanditOptions {
    pub variant: Variant,
    /// Prior and likelihood scale of the Gaussian posterior.
    pub prior_scale: f64,
    /// Also run Thompson sampling.
    pub baseline: bool,
    /// Also run both learners with the fixed inflated sampling scales.
    pub scaled_baselines: bool,
    pub metrics: Vec<Metric>,
}

impl Default for BanditOptions {
    fn default() -> Self {
        Self {
            variant: Variant::Plain,
            prior_scale: 1.0,
            baseline: true,
            scaled_baselines: false,
            metrics: vec![Metric::BrRegret, Metric::Regret],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosteriorChoice {
    /// Independent Dirichlet rows.
    Dirichlet,
    /// Dirichlet posteriors on the Frozen Lake slip, hole and restart
    /// parameters.
    FrozenLake,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MdpOptions {
    pub vi_iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_state: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub posterior: Option<PosteriorChoice>,
}

impl Default for MdpOptions {
    fn default() -> Self {
        Self {
            vi_iterations: 100,
            start_state: None,
            posterior: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineOptions {
    pub delta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_state: Option<usize>,
}

impl Default for OnlineOptions {
    fn default() -> Self {
        Self {
            delta: 0.05,
            start_state: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyChoice {
    /// Optimal policy of the true MDP.
    Optimal,
    /// Fixed reference policy of the standard Frozen Lake board.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalityOptions {
    pub data_size: usize,
    pub posterior_samples: usize,
    pub vi_iterations: usize,
    pub min_visits: usize,
    pub policy: PolicyChoice,
    /// State whose deviations go into `qq.csv`.
    pub qq_state: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_state: Option<usize>,
}

impl Default for NormalityOptions {
    fn default() -> Self {
        Self {
            data_size: 100_000,
            posterior_samples: 5000,
            vi_iterations: 100,
            min_visits: 10,
            policy: PolicyChoice::Optimal,
            qq_state: 0,
            start_state: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOptions {
    /// Transitions collected under uniformly random actions before solving.
    pub data_size: usize,
    pub tol: f64,
    pub max_iterations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_state: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            data_size: 10_000,
            tol: 1e-10,
            max_iterations: 100_000,
            start_state: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "one")]
    pub macro_replications: usize,
    #[serde(default)]
    pub risk_levels: Vec<f64>,
    /// Rounds (bandit), episodes (BRPS-RL) or steps (online value iteration).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    /// Steps per episode of BRPS-RL.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub episode_length: Option<usize>,
    /// Keep every k-th point of each curve (the last point is always kept).
    #[serde(default = "one")]
    pub record_every: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub environment: EnvironmentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandit: Option<BanditOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mdp: Option<MdpOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub online: Option<OnlineOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normality: Option<NormalityOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solve: Option<SolveOptions>,
}

fn one() -> usize {
    1
}

/// A built environment.
#[derive(Debug, Clone)]
pub enum Environment {
    FrozenLake(FrozenLakeLayout, TabularMdp),
    Tabular(TabularMdp),
    Bandit(LinearBanditEnv),
}

impl Environment {
    pub fn mdp(&self) -> Option<&TabularMdp> {
        match self {
            Environment::FrozenLake(_, m) | Environment::Tabular(m) => Some(m),
            Environment::Bandit(_) => None,
        }
    }

    /// Default start state: the start cell of a board, otherwise 0.
    pub fn start_state(&self) -> usize {
        match self {
            Environment::FrozenLake(layout, _) => layout.start_state(),
            _ => 0,
        }
    }
}

impl ExperimentConfig {
    /// Default config of `kind`, as produced by parsing `kind = "..."` alone.
    pub fn preset(kind: ExperimentKind) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            kind,
            base_seed: 0,
            macro_replications: 1,
            risk_levels: Vec::new(),
            horizon: None,
            episode_length: None,
            record_every: 1,
            threads: None,
            output: None,
            environment: EnvironmentConfig::default(),
            bandit: None,
            mdp: None,
            online: None,
            normality: None,
            solve: None,
        };
        cfg.fill_and_validate().expect("presets are valid");
        cfg
    }

    /// Serialises to TOML. Parsing the output yields an equal config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable in TOML")
    }

    /// Copy without the fields that do not influence results (thread budget
    /// and output directory), used for hashing.
    pub fn canonical(&self) -> ExperimentConfig {
        ExperimentConfig {
            threads: None,
            output: None,
            ..self.clone()
        }
    }

    /// Builds the configured environment.
    pub fn environment(&self) -> Result<Environment> {
        let e = &self.environment;
        let preset = e.preset.expect("filled by validation");
        match preset {
            Preset::FrozenLake => {
                let mut layout = FrozenLakeLayout::standard(e.hole_exit.unwrap_or(0.1));
                let reshaped = e.rows.is_some() || e.cols.is_some() || e.holes.is_some()
                    || e.goal.is_some() || e.start.is_some();
                layout.rows = e.rows.unwrap_or(layout.rows);
                layout.cols = e.cols.unwrap_or(layout.cols);
                layout.start = e.start.unwrap_or(layout.start);
                layout.goal = e.goal.unwrap_or(layout.goal);
                layout.holes = e.holes.clone().unwrap_or(layout.holes);
                layout.slip = e.slip.unwrap_or(layout.slip);
                layout.discount = e.discount.unwrap_or(layout.discount);
                if let Some(r) = &e.restart {
                    layout.restart = r.clone();
                } else if reshaped {
                    let k = layout.restart_cells().len();
                    layout.restart = vec![1.0 / k.max(1) as f64; k];
                }
                let mdp = build_frozen_lake(&layout)?;
                Ok(Environment::FrozenLake(layout, mdp))
            }
            Preset::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(e.seed.unwrap_or(0));
                let mdp = random_mdp(
                    e.states.unwrap_or(3),
                    e.actions.unwrap_or(2),
                    e.discount.unwrap_or(0.8),
                    &mut rng,
                )?;
                Ok(Environment::Tabular(mdp))
            }
            Preset::Sinusoidal | Preset::SinusoidalBounded => {
                let base = LinearBanditEnv::sinusoidal(e.arms.unwrap_or(10));
                let thetas = match &e.thetas {
                    Some(t) => t.clone(),
                    None => (0..base.num_arms()).map(|a| base.theta(a).to_vec()).collect(),
                };
                let env = LinearBanditEnv::new(
                    thetas,
                    e.noise.unwrap_or(base.noise()),
                    e.contexts.unwrap_or(base.contexts()),
                )?
                .with_clipped_rewards(preset == Preset::SinusoidalBounded);
                Ok(Environment::Bandit(env))
            }
        }
    }

    fn fill_and_validate(&mut self) -> Result<()> {
        use ExperimentKind::*;
        let kind = self.kind;
        let bad = |msg: String| Err(Error::InvalidArgument(msg));

        let default_preset = match kind {
            BanditRegret => Preset::Sinusoidal,
            MdpRegret | OnlineBrvi | Solve => Preset::FrozenLake,
            Normality => Preset::Random,
        };
        let preset = *self.environment.preset.get_or_insert(default_preset);
        if preset.is_bandit() != (kind == BanditRegret) {
            return bad(format!(
                "preset `{}` cannot be used for a {} experiment",
                preset.name(),
                kind.name()
            ));
        }
        self.check_overrides(preset)?;

        if self.risk_levels.is_empty() {
            self.risk_levels = match kind {
                BanditRegret => vec![0.5, 0.8, 0.9],
                MdpRegret => vec![0.0, 0.8, 0.9],
                OnlineBrvi | Normality | Solve => vec![0.8],
            };
        }
        for &a in &self.risk_levels {
            if !(0.0..1.0).contains(&a) {
                return bad(format!("risk level {a} outside [0, 1)"));
            }
        }
        if self.macro_replications == 0 {
            return bad("macro_replications must be at least 1".into());
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be at least 1".into());
        }

        let uses_horizon = matches!(kind, BanditRegret | MdpRegret | OnlineBrvi);
        if uses_horizon {
            let h = *self.horizon.get_or_insert(match kind {
                BanditRegret => 20_000,
                MdpRegret => 100,
                _ => 10_000,
            });
            if h == 0 {
                return bad("horizon must be at least 1".into());
            }
        } else if self.horizon.is_some() {
            return bad(format!("key `horizon` does not apply to {} experiments", kind.name()));
        }
        if kind == MdpRegret {
            if *self.episode_length.get_or_insert(10) == 0 {
                return bad("episode_length must be at least 1".into());
            }
        } else if self.episode_length.is_some() {
            return bad(format!(
                "key `episode_length` does not apply to {} experiments",
                kind.name()
            ));
        }

        let sections = [
            ("bandit", self.bandit.is_some(), BanditRegret),
            ("mdp", self.mdp.is_some(), MdpRegret),
            ("online", self.online.is_some(), OnlineBrvi),
            ("normality", self.normality.is_some(), Normality),
            ("solve", self.solve.is_some(), Solve),
        ];
        for (name, present, owner) in sections {
            if present && owner != kind {
                return bad(format!("table `{name}` does not apply to {} experiments", kind.name()));
            }
        }

        let env = self.environment()?;
        let num_states = env.mdp().map_or(0, TabularMdp::num_states);
        let check_start = |s: usize| {
            if s >= num_states {
                bad(format!("start state {s} out of range"))
            } else {
                Ok(())
            }
        };
        match kind {
            BanditRegret => {
                let b = self.bandit.get_or_insert_with(BanditOptions::default);
                if !(b.prior_scale.is_finite() && b.prior_scale > 0.0) {
                    return bad("prior_scale must be positive".into());
                }
                if b.metrics.is_empty() {
                    return bad("at least one metric is required".into());
                }
            }
            MdpRegret => {
                let m = self.mdp.get_or_insert_with(MdpOptions::default);
                check_start(*m.start_state.get_or_insert(env.start_state()))?;
                let p = *m.posterior.get_or_insert(match preset {
                    Preset::FrozenLake => PosteriorChoice::FrozenLake,
                    _ => PosteriorChoice::Dirichlet,
                });
                if p == PosteriorChoice::FrozenLake && preset != Preset::FrozenLake {
                    return bad("the frozen-lake posterior needs the frozen-lake preset".into());
                }
                if m.vi_iterations == 0 {
                    return bad("vi_iterations must be at least 1".into());
                }
            }
            OnlineBrvi => {
                let o = self.online.get_or_insert_with(OnlineOptions::default);
                check_start(*o.start_state.get_or_insert(env.start_state()))?;
                if !(o.delta > 0.0 && o.delta < 1.0) {
                    return bad(format!("delta = {} outside (0, 1)", o.delta));
                }
            }
            Normality => {
                let n = self.normality.get_or_insert_with(NormalityOptions::default);
                check_start(*n.start_state.get_or_insert(env.start_state()))?;
                if n.qq_state >= num_states {
                    return bad(format!("qq_state {} out of range", n.qq_state));
                }
                if n.posterior_samples == 0 || n.vi_iterations == 0 {
                    return bad("posterior_samples and vi_iterations must be positive".into());
                }
                if n.policy == PolicyChoice::Reference && preset != Preset::FrozenLake {
                    return bad("the reference policy needs the frozen-lake preset".into());
                }
                if self.risk_levels.len() != 1 {
                    return bad("normality experiments take exactly one risk level".into());
                }
            }
            Solve => {
                let s = self.solve.get_or_insert_with(SolveOptions::default);
                check_start(*s.start_state.get_or_insert(env.start_state()))?;
                if !(s.tol > 0.0) {
                    return bad("tol must be positive".into());
                }
            }
        }
        Ok(())
    }

    fn check_overrides(&self, preset: Preset) -> Result<()> {
        let e = &self.environment;
        let frozen = [
            ("hole_exit", e.hole_exit.is_some()),
            ("rows", e.rows.is_some()),
            ("cols", e.cols.is_some()),
            ("start", e.start.is_some()),
            ("goal", e.goal.is_some()),
            ("holes", e.holes.is_some()),
            ("slip", e.slip.is_some()),
            ("restart", e.restart.is_some()),
        ];
        let random = [
            ("states", e.states.is_some()),
            ("actions", e.actions.is_some()),
            ("seed", e.seed.is_some()),
        ];
        let bandit = [
            ("arms", e.arms.is_some()),
            ("thetas", e.thetas.is_some()),
            ("noise", e.noise.is_some()),
            ("contexts", e.contexts.is_some()),
        ];
        let mut foreign: Vec<(&str, bool)> = Vec::new();
        if preset != Preset::FrozenLake {
            foreign.extend(frozen);
        }
        if preset != Preset::Random {
            foreign.extend(random);
        }
        if !preset.is_bandit() {
            foreign.extend(bandit);
        } else {
            foreign.push(("discount", e.discount.is_some()));
            if e.arms.is_some() && e.thetas.is_some() {
                return Err(Error::InvalidArgument(
                    "give either `environment.arms` or `environment.thetas`, not both".into(),
                ));
            }
        }
        match foreign.into_iter().find(|(_, set)| *set) {
            Some((key, _)) => Err(Error::InvalidArgument(format!(
                "key `environment.{key}` does not apply to preset `{}`",
                preset.name()
            ))),
            None => Ok(()),
        }
    }
}

/// Parses and validates a config document, filling defaults.
pub fn parse_str(text: &str) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    cfg.fill_and_validate()?;
    Ok(cfg)
}

/// Reads, parses and validates a config file.
pub fn parse_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let as_config_error = |message: String| Error::Config {
        path: path.to_path_buf(),
        message,
    };
    let text = std::fs::read_to_string(path).map_err(|e| as_config_error(e.to_string()))?;
    parse_str(&text).map_err(|e| match e {
        Error::InvalidArgument(m) | Error::InvalidModel(m) => as_config_error(m),
        other => as_config_error(other.to_string()),
    })
}
