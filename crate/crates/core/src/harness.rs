//! Experiment orchestration: macro-replications over seeds, aggregation into
//! mean curves with confidence bands, and CSV / JSON emission.
//!
//! Replication `r` of an experiment with base seed `b` is driven by
//! `ChaCha8Rng::seed_from_u64(b + r)` (wrapping). All learners inside one
//! replication share that seed, so they face the same environment noise.
//! Replications run on a rayon pool sized by the thread budget and are
//! reduced in index order, so every output byte is independent of the
//! number of threads.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bandit::{nu_fixed, run_brps_cmab, BanditRunConfig, LinearBanditEnv, Variant};
use crate::brmdp::{
    online_brvi_regret_bound, run_brps_rl, run_online_brvi, solve_brmdp, BrpsRlConfig,
    OnlineBrviConfig, PosteriorModel, SampledEnsemble,
};
use crate::config::{
    Environment, ExperimentConfig, ExperimentKind, Metric, PolicyChoice, PosteriorChoice,
};
use crate::environments::reference_policy;
use crate::error::{Error, Result};
use crate::mdp::{
    evaluate_policy_exact, stationary_distribution, step, value_iteration, DeterministicPolicy,
    TabularMdp,
};
use crate::normality::{ks_normal, limit_params, qq_export, simulate_deviations, DeviationConfig};
use crate::posteriors::DirichletTransitionPosterior;
use crate::risk::RiskConfig;
use crate::stats::{CurveSummary, RunningStats};

/// Confidence level of every band.
pub const CI_LEVEL: f64 = 0.95;

/// Mean cumulative regret of one algorithm at one risk level.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub algo: String,
    pub alpha: f64,
    pub metric: Metric,
    /// Human-readable x-axis label.
    pub x_label: String,
    /// 1-based iteration of each point.
    pub iterations: Vec<usize>,
    pub summary: CurveSummary,
    /// Theoretical regret bound at the final iteration, where one applies.
    pub bound: Option<f64>,
}

impl Curve {
    pub fn file_name(&self) -> String {
        format!("trace_{}_{}.csv", self.algo, self.alpha)
    }

    /// Final mean and confidence half-width.
    pub fn last(&self) -> (f64, f64) {
        self.summary.last().unwrap_or((0.0, 0.0))
    }

    /// Mean at the given 1-based iteration, if recorded.
    pub fn mean_at(&self, iteration: usize) -> Option<f64> {
        let i = self.iterations.iter().position(|&t| t == iteration)?;
        Some(self.summary.mean[i])
    }

    fn to_csv(&self) -> String {
        let mut out = String::from("iteration,mean_regret,ci_low,ci_high\n");
        for ((t, m), h) in self.iterations.iter().zip(&self.summary.mean).zip(&self.summary.half_width) {
            writeln!(out, "{t},{m},{},{}", m - h, m + h).unwrap();
        }
        out
    }

    fn label(&self) -> String {
        let name = match self.algo.trim_end_matches("-br") {
            "brps-cmab" => "BRPS-CMAB",
            "ts-cmab" => "TS-CMAB",
            "brps-cmab-nu" => "BRPS-CMAB_ν",
            "ts-cmab-nu" => "TS-CMAB_ν",
            "brps-rl" if self.alpha == 0.0 => "TS-RL",
            "brps-rl" => "BRPS-RL",
            "online-brvi" => "Online BRVI",
            other => other,
        };
        format!("{name} (α = {})", self.alpha)
    }

    fn panel(&self) -> String {
        match self.metric {
            Metric::BrRegret => format!("br-regret-alpha-{}", self.alpha),
            Metric::Regret => "regret".into(),
        }
    }
}

/// Sample summary of `√N (V_N − V^π)` at one state against the limit law.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSummary {
    pub state: usize,
    pub mean: f64,
    pub sd: f64,
    /// 99% confidence half-width of the mean.
    pub mean_ci99: f64,
    pub theory_mean: f64,
    pub theory_sd: f64,
    pub ks_statistic: f64,
    pub ks_p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalitySummary {
    pub states: Vec<StateSummary>,
    pub redraws: usize,
}

/// A CSV file produced by an experiment besides the regret curves.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub kind: ExperimentKind,
    /// SHA-256 of the canonical config, hex encoded.
    pub config_hash: String,
    pub base_seed: u64,
    pub seeds: Vec<u64>,
    pub curves: Vec<Curve>,
    pub tables: Vec<Table>,
    pub normality: Option<NormalitySummary>,
}

impl AggregateResult {
    pub fn curve(&self, algo: &str, alpha: f64) -> Option<&Curve> {
        self.curves.iter().find(|c| c.algo == algo && c.alpha == alpha)
    }
}

/// Seed of replication `rep`.
pub fn replication_seed(base_seed: u64, rep: usize) -> u64 {
    base_seed.wrapping_add(rep as u64)
}

/// SHA-256 of the canonical TOML form of `config`.
pub fn config_hash(config: &ExperimentConfig) -> String {
    hex(&Sha256::digest(config.canonical().to_toml().as_bytes()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(2 * bytes.len()), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

/// Runs `config` on a pool of `config.threads` workers (all cores when
/// unset).
pub fn run_experiment(config: &ExperimentConfig) -> Result<AggregateResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| run_on_current_pool(config))
}

fn run_on_current_pool(config: &ExperimentConfig) -> Result<AggregateResult> {
    let env = config.environment()?;
    let seeds: Vec<u64> = (0..config.macro_replications)
        .map(|r| replication_seed(config.base_seed, r))
        .collect();
    let mut result = AggregateResult {
        kind: config.kind,
        config_hash: config_hash(config),
        base_seed: config.base_seed,
        seeds: seeds.clone(),
        curves: Vec::new(),
        tables: Vec::new(),
        normality: None,
    };
    match (&env, config.kind) {
        (Environment::Bandit(b), ExperimentKind::BanditRegret) => {
            result.curves = bandit_curves(config, b, &seeds)?
        }
        (_, ExperimentKind::MdpRegret) => result.curves = mdp_curves(config, &env, &seeds)?,
        (_, ExperimentKind::OnlineBrvi) => result.curves = online_curves(config, &env, &seeds)?,
        (_, ExperimentKind::Normality) => normality(config, &env, &mut result)?,
        (_, ExperimentKind::Solve) => result.tables = solve(config, &env)?,
        _ => unreachable!("validated config pairs kind and environment"),
    }
    if !result.curves.is_empty() {
        result.tables.push(summary_table(&result.curves));
    }
    Ok(result)
}

/// Runs `body` for every seed in parallel, tags failures with their seed and
/// returns results in seed order.
fn replicate<T, F>(seeds: &[u64], body: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let out: Vec<Result<T>> = seeds.par_iter().map(|&seed| body(seed)).collect();
    out.into_iter()
        .zip(seeds)
        .map(|(r, &seed)| {
            r.map_err(|e| match e {
                Error::Replication { .. } => e,
                other => Error::Replication {
                    seed,
                    source: Box::new(other),
                },
            })
        })
        .collect()
}

/// 1-based iterations kept when recording every `stride`-th point of `len`.
fn kept_iterations(len: usize, stride: usize) -> Vec<usize> {
    (1..=len).filter(|t| t % stride == 0 || *t == len).collect()
}

fn thin(values: &[f64], kept: &[usize]) -> Vec<f64> {
    kept.iter().map(|&t| values[t - 1]).collect()
}

struct CurveSpec {
    algo: String,
    alpha: f64,
    metric: Metric,
    bound: Option<f64>,
}

fn aggregate(specs: Vec<CurveSpec>, per_rep: Vec<Vec<Vec<f64>>>, kept: &[usize], x_label: &str) -> Vec<Curve> {
    specs
        .into_iter()
        .enumerate()
        .map(|(i, spec)| {
            let curves: Vec<Vec<f64>> = per_rep.iter().map(|rep| rep[i].clone()).collect();
            Curve {
                algo: spec.algo,
                alpha: spec.alpha,
                metric: spec.metric,
                x_label: x_label.into(),
                iterations: kept.to_vec(),
                summary: CurveSummary::from_curves(&curves, CI_LEVEL),
                bound: spec.bound,
            }
        })
        .collect()
}

fn bandit_curves(config: &ExperimentConfig, env: &LinearBanditEnv, seeds: &[u64]) -> Result<Vec<Curve>> {
    let opts = config.bandit.as_ref().expect("filled");
    let horizon = config.horizon.expect("filled");
    let kept = kept_iterations(horizon, config.record_every);
    let ts_scale = 0.75 * (6.0 * (horizon as f64).ln()).sqrt();

    // Learners: (name, risk level of the sampler, variant). Every learner is
    // scored for BR-Regret at each configured level.
    let mut learners: Vec<(&str, f64, Variant)> = Vec::new();
    for &alpha in &config.risk_levels {
        learners.push(("brps-cmab", alpha, opts.variant));
        if opts.scaled_baselines {
            learners.push(("brps-cmab-nu", alpha, Variant::FixedScale { scale: nu_fixed(horizon) }));
        }
    }
    if opts.baseline {
        learners.push(("ts-cmab", 0.0, Variant::Plain));
    }
    if opts.scaled_baselines {
        learners.push(("ts-cmab-nu", 0.0, Variant::FixedScale { scale: ts_scale }));
    }
    let is_baseline = |name: &str| name.starts_with("ts-");

    // Runs: (learner index, scoring level). Risk-averse learners are scored at
    // their own level; baselines at every level.
    let mut runs: Vec<(usize, f64)> = Vec::new();
    for (i, (name, alpha, _)) in learners.iter().enumerate() {
        if is_baseline(name) {
            runs.extend(config.risk_levels.iter().map(|&a| (i, a)));
        } else {
            runs.push((i, *alpha));
        }
    }

    // Curves: (run index, metric).
    let mut specs = Vec::new();
    let mut sources = Vec::new();
    for &metric in &opts.metrics {
        for (r, &(i, score_alpha)) in runs.iter().enumerate() {
            let (name, alpha, _) = learners[i];
            match metric {
                Metric::BrRegret => {
                    specs.push(CurveSpec {
                        algo: format!("{name}-br"),
                        alpha: score_alpha,
                        metric,
                        bound: None,
                    });
                    sources.push((r, metric));
                }
                Metric::Regret => {
                    // A baseline's conventional regret does not depend on the
                    // scoring level; emit it once.
                    let first = runs.iter().position(|&(j, _)| j == i) == Some(r);
                    if !is_baseline(name) || first {
                        specs.push(CurveSpec {
                            algo: name.to_string(),
                            alpha,
                            metric,
                            bound: None,
                        });
                        sources.push((r, metric));
                    }
                }
            }
        }
    }

    let per_rep = replicate(seeds, |seed| {
        let traces = runs
            .iter()
            .map(|&(i, score_alpha)| {
                let (_, alpha, variant) = learners[i];
                let cfg = BanditRunConfig {
                    risk: RiskConfig::new(alpha)?,
                    variant,
                    horizon,
                    prior_scale: opts.prior_scale,
                    br_alpha: score_alpha,
                    seed,
                };
                run_brps_cmab(env, &cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(sources
            .iter()
            .map(|&(r, metric)| match metric {
                Metric::BrRegret => thin(&traces[r].cumulative_br_regret, &kept),
                Metric::Regret => thin(&traces[r].cumulative_regret, &kept),
            })
            .collect::<Vec<_>>())
    })?;
    Ok(aggregate(specs, per_rep, &kept, "Round"))
}

fn mdp_curves(config: &ExperimentConfig, env: &Environment, seeds: &[u64]) -> Result<Vec<Curve>> {
    let opts = config.mdp.as_ref().expect("filled");
    let mdp = env.mdp().expect("tabular environment");
    let episodes = config.horizon.expect("filled");
    let kept = kept_iterations(episodes, config.record_every);
    let posterior = match (opts.posterior.expect("filled"), env) {
        (PosteriorChoice::FrozenLake, Environment::FrozenLake(layout, _)) => {
            PosteriorModel::FrozenLake(layout.clone())
        }
        _ => PosteriorModel::Dirichlet,
    };
    let run_configs = config
        .risk_levels
        .iter()
        .map(|&alpha| {
            Ok(BrpsRlConfig {
                episodes,
                episode_length: config.episode_length.expect("filled"),
                risk: RiskConfig::new(alpha)?,
                vi_iterations: opts.vi_iterations,
                start_state: opts.start_state.expect("filled"),
                posterior: posterior.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let per_rep = replicate(seeds, |seed| {
        run_configs
            .iter()
            .map(|cfg| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Ok(thin(&run_brps_rl(mdp, cfg, &mut rng)?.cumulative, &kept))
            })
            .collect()
    })?;
    let specs = config
        .risk_levels
        .iter()
        .map(|&alpha| CurveSpec {
            algo: "brps-rl".into(),
            alpha,
            metric: Metric::Regret,
            bound: None,
        })
        .collect();
    Ok(aggregate(specs, per_rep, &kept, "Episode"))
}

fn online_curves(config: &ExperimentConfig, env: &Environment, seeds: &[u64]) -> Result<Vec<Curve>> {
    let opts = config.online.as_ref().expect("filled");
    let mdp = env.mdp().expect("tabular environment");
    let steps = config.horizon.expect("filled");
    let kept = kept_iterations(steps, config.record_every);
    let run_configs = config
        .risk_levels
        .iter()
        .map(|&alpha| {
            Ok(OnlineBrviConfig {
                steps,
                risk: RiskConfig::new(alpha)?,
                delta: opts.delta,
                start_state: opts.start_state.expect("filled"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let per_rep = replicate(seeds, |seed| {
        run_configs
            .iter()
            .map(|cfg| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let trace = run_online_brvi(mdp, cfg, &mut rng, |_, _| {})?;
                Ok(thin(&trace.cumulative, &kept))
            })
            .collect()
    })?;
    let specs = config
        .risk_levels
        .iter()
        .map(|&alpha| CurveSpec {
            algo: "online-brvi".into(),
            alpha,
            metric: Metric::Regret,
            bound: Some(online_brvi_regret_bound(
                mdp.discount(),
                mdp.num_states(),
                mdp.num_actions(),
                alpha,
                steps,
                opts.delta,
            )),
        })
        .collect();
    Ok(aggregate(specs, per_rep, &kept, "Step"))
}

fn target_policy(choice: PolicyChoice, mdp: &TabularMdp) -> Result<DeterministicPolicy> {
    Ok(match choice {
        PolicyChoice::Optimal => value_iteration(mdp, 1e-12, 1_000_000)?.1,
        PolicyChoice::Reference => reference_policy(),
    })
}

fn normality(config: &ExperimentConfig, env: &Environment, result: &mut AggregateResult) -> Result<()> {
    let opts = config.normality.as_ref().expect("filled");
    let mdp = env.mdp().expect("tabular environment");
    let alpha = config.risk_levels[0];
    let policy = target_policy(opts.policy, mdp)?;
    let nbar = stationary_distribution(mdp, &policy)?;
    let limit = limit_params(mdp, &policy, &nbar, alpha)?;
    let dev = simulate_deviations(
        mdp,
        &policy,
        &DeviationConfig {
            data_size: opts.data_size,
            replications: config.macro_replications,
            posterior_samples: opts.posterior_samples,
            vi_iterations: opts.vi_iterations,
            alpha,
            start_state: opts.start_state.expect("filled"),
            min_visits: opts.min_visits,
            base_seed: config.base_seed,
        },
    )?;

    let ns = mdp.num_states();
    let mut states = Vec::with_capacity(ns);
    for s in 0..ns {
        let sample = dev.state(s);
        let stats: RunningStats = sample.iter().copied().collect();
        let (theory_mean, theory_sd) = (limit.mean_full[s], limit.sd(s));
        let (ks_statistic, ks_p_value) = if theory_sd > 0.0 {
            ks_normal(&sample, theory_mean, theory_sd)?
        } else {
            (f64::NAN, f64::NAN)
        };
        states.push(StateSummary {
            state: s,
            mean: stats.mean(),
            sd: stats.variance().sqrt(),
            mean_ci99: stats.ci_half_width(0.99),
            theory_mean,
            theory_sd,
            ks_statistic,
            ks_p_value,
        });
    }

    let mut deviations = String::from("rep,state,value\n");
    for (rep, row) in dev.values.chunks(ns).enumerate() {
        for (s, v) in row.iter().enumerate() {
            writeln!(deviations, "{rep},{s},{v}").unwrap();
        }
    }
    let mut qq = String::from("theoretical,empirical\n");
    for (t, e) in qq_export(&dev, &limit, opts.qq_state)? {
        writeln!(qq, "{t},{e}").unwrap();
    }
    let mut params = String::from("state,value,stationary,sigma,lambda,mean_full,sd_full\n");
    for s in 0..ns {
        writeln!(
            params,
            "{s},{},{},{},{},{},{}",
            limit.value[s], nbar[s], limit.sigma[s], limit.lambda[s], limit.mean_full[s], limit.sd(s)
        )
        .unwrap();
    }
    let mut summary =
        String::from("state,mean,sd,mean_ci99,theory_mean,theory_sd,ks_statistic,ks_p_value\n");
    for st in &states {
        writeln!(
            summary,
            "{},{},{},{},{},{},{},{}",
            st.state, st.mean, st.sd, st.mean_ci99, st.theory_mean, st.theory_sd, st.ks_statistic, st.ks_p_value
        )
        .unwrap();
    }
    result.tables = vec![
        Table { name: "deviations.csv".into(), contents: deviations },
        Table { name: "qq.csv".into(), contents: qq },
        Table { name: "limit_params.csv".into(), contents: params },
        Table { name: "normality_summary.csv".into(), contents: summary },
    ];
    result.normality = Some(NormalitySummary {
        states,
        redraws: dev.redraws,
    });
    Ok(())
}

fn solve(config: &ExperimentConfig, env: &Environment) -> Result<Vec<Table>> {
    let opts = config.solve.as_ref().expect("filled");
    let mdp = env.mdp().expect("tabular environment");
    let (ns, na) = (mdp.num_states(), mdp.num_actions());
    let (v_star, _) = value_iteration(mdp, 1e-12, 1_000_000)?;

    let mut tables = Vec::new();
    for &alpha in &config.risk_levels {
        let risk = RiskConfig::new(alpha)?;
        // Every risk level sees the same data.
        let mut rng = ChaCha8Rng::seed_from_u64(config.base_seed);
        let mut post = DirichletTransitionPosterior::uniform(ns, na);
        let mut s = opts.start_state.expect("filled");
        for _ in 0..opts.data_size {
            let a = rng.random_range(0..na);
            let (next, _) = step(mdp, s, a, &mut rng)?;
            post.update(s, a, next)?;
            s = next;
        }
        let mdps = (0..risk.sample_size())
            .map(|_| post.sample_mdp(mdp.rewards(), mdp.discount(), &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let ensemble = SampledEnsemble::new(&mdps, risk)?;
        let (q, policy) = solve_brmdp(&ensemble, opts.tol, opts.max_iterations)?;
        let (br_value, _) = q.greedy();
        let true_value = evaluate_policy_exact(mdp, &policy)?;

        let mut qcsv = String::from("state,action,q\n");
        for s in 0..ns {
            for a in 0..na {
                writeln!(qcsv, "{s},{a},{}", q.get(s, a)).unwrap();
            }
        }
        let mut pcsv = String::from("state,action,br_value,true_value,optimal_value\n");
        for s in 0..ns {
            writeln!(pcsv, "{s},{},{},{},{}", policy[s], br_value[s], true_value[s], v_star[s]).unwrap();
        }
        tables.push(Table { name: format!("solve_q_{alpha}.csv"), contents: qcsv });
        tables.push(Table { name: format!("solve_policy_{alpha}.csv"), contents: pcsv });
    }
    Ok(tables)
}

fn summary_table(curves: &[Curve]) -> Table {
    let mut out = String::from("algo,alpha,metric,iterations,final_mean,ci_low,ci_high,bound\n");
    for c in curves {
        let (m, h) = c.last();
        let bound = c.bound.map(|b| b.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{m},{},{},{bound}",
            c.algo,
            c.alpha,
            c.metric.name(),
            c.iterations.last().copied().unwrap_or(0),
            m - h,
            m + h
        )
        .unwrap();
    }
    Table { name: "summary.csv".into(), contents: out }
}

#[derive(Serialize)]
struct Axis<'a> {
    column: &'a str,
    label: &'a str,
}

#[derive(Serialize)]
struct PlotEntry<'a> {
    file: String,
    panel: String,
    label: String,
    algo: &'a str,
    alpha: f64,
    metric: &'a str,
    x: Axis<'a>,
    y: Axis<'a>,
    band: [&'a str; 2],
}

#[derive(Serialize)]
struct PlotManifest<'a> {
    schema: &'a str,
    experiment: &'a str,
    confidence_level: f64,
    curves: Vec<PlotEntry<'a>>,
    tables: Vec<&'a str>,
}

/// Writes one CSV per curve, every auxiliary table and `plots.json`, which
/// lists each curve with its axes, label and confidence band columns.
/// Returns the written file names in order.
pub fn emit_plotdata(result: &AggregateResult, dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut entries = Vec::new();
    for c in &result.curves {
        let file = c.file_name();
        std::fs::write(dir.join(&file), c.to_csv())?;
        let y_label = match c.metric {
            Metric::Regret => "Cumulative regret",
            Metric::BrRegret => "Cumulative BR-Regret",
        };
        entries.push(PlotEntry {
            file: file.clone(),
            panel: c.panel(),
            label: c.label(),
            algo: &c.algo,
            alpha: c.alpha,
            metric: c.metric.name(),
            x: Axis { column: "iteration", label: &c.x_label },
            y: Axis { column: "mean_regret", label: y_label },
            band: ["ci_low", "ci_high"],
        });
        written.push(file);
    }
    for t in &result.tables {
        std::fs::write(dir.join(&t.name), &t.contents)?;
        written.push(t.name.clone());
    }
    let manifest = PlotManifest {
        schema: "brrl-plots/1",
        experiment: result.kind.name(),
        confidence_level: CI_LEVEL,
        curves: entries,
        tables: result.tables.iter().map(|t| t.name.as_str()).collect(),
    };
    std::fs::write(dir.join("plots.json"), to_json(&manifest))?;
    written.push("plots.json".into());
    Ok(written)
}

#[derive(Serialize)]
struct FileDigest {
    name: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    schema: &'a str,
    package: &'a str,
    version: &'a str,
    rng: &'a str,
    experiment: &'a str,
    config_sha256: &'a str,
    base_seed: u64,
    seeds: &'a [u64],
    files: Vec<FileDigest>,
}

/// Writes all outputs of `result` to `dir`, finishing with `manifest.json`
/// (config hash, seeds, package version and a digest of every file).
pub fn write_outputs(result: &AggregateResult, dir: &Path) -> Result<Vec<PathBuf>> {
    let names = emit_plotdata(result, dir)?;
    let files = names
        .iter()
        .map(|name| {
            let bytes = std::fs::read(dir.join(name))?;
            Ok(FileDigest {
                name: name.clone(),
                sha256: hex(&Sha256::digest(&bytes)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        schema: "brrl-manifest/1",
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        rng: "ChaCha8, seed_from_u64(base_seed + replication)",
        experiment: result.kind.name(),
        config_sha256: &result.config_hash,
        base_seed: result.base_seed,
        seeds: &result.seeds,
        files,
    };
    std::fs::write(dir.join("manifest.json"), to_json(&manifest))?;
    Ok(names
        .into_iter()
        .chain(std::iter::once("manifest.json".to_string()))
        .map(|n| dir.join(n))
        .collect())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serialisable");
    s.push('\n');
    s
}
