//! Declarative experiment configs and the end-to-end commands behind the CLI.
//!
//! A config is a TOML document; every key has a default, so an empty file is
//! a valid experiment. Derived settings (bins, thresholds, step budgets) are
//! filled in by [`ExperimentConfig::resolve`] and archived next to the
//! outputs as `config.resolved.toml`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::{adversarial_policy, Planner, PlannerKind, Policy};
use crate::env::{self, collect_trajectories, shortest_path_distances, Behavior, Dataset, GridWorld};
use crate::error::{Error, Result};
use crate::estimation::{
    action_distance_from_state, discounted_occupancy, empirical_hitting_time, successor_distance_exact,
    uniform_policy,
};
use crate::eval::{
    bellman_error, eta_and_reach, evaluate_pairs, planning_invariance_ratio, sample_pairs, scatter_report,
    stratified_success, BellmanPoint, BellmanSample, EvalSettings, HorizonReport, HorizonStats,
    InvarianceResult, PairOutcome, ScatterRow, SuccessCurve, TabularCritic,
};
use crate::quasimetric::{path_relaxation_closure, short_pair_restriction, QuasimetricTable, EPS_TRIANGLE};
use crate::rng;
use crate::table::{format_value, ActionDistanceTable, DistanceTable, TableSidecar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Mean first hitting times from the collected dataset.
    HittingTime,
    /// Exact successor distances from the known dynamics.
    SuccessorExact,
    /// True distances on pairs closer than `radius`, infinite elsewhere.
    ShortPairs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyChoice {
    Greedy,
    Boltzmann,
    Random,
    Adversarial,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerChoice {
    None,
    Optimal,
    Midpoint,
}

/// Extra methods evaluated next to the configured one in reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    /// The configured method with projection switched off.
    Unprojected,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub n_pairs: usize,
    /// Upper bin edges. Default: `diam / 32, ..., diam / 2, diam`, or unit
    /// bins `1..=diam` for the adversarial policy.
    pub bins: Option<Vec<f64>>,
    /// Default: half the diameter.
    pub distant_threshold: Option<f64>,
    /// Default: `4 |S|`.
    pub max_steps: Option<usize>,
    /// First bin of the eta doublings. Default: the first bin edge.
    pub c0: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_pairs: 1000,
            bins: None,
            distant_threshold: None,
            max_steps: None,
            c0: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BellmanConfig {
    pub maze: String,
    pub num_trajectories: usize,
    pub trajectory_length: usize,
    /// Noise levels added to the exact critic, one checkpoint each.
    pub sigmas: Vec<f64>,
    /// Pairs per easy / distant success estimate.
    pub n_pairs: usize,
}

impl Default for BellmanConfig {
    fn default() -> Self {
        BellmanConfig {
            maze: "s_maze".into(),
            num_trajectories: 3000,
            trajectory_length: 10,
            sigmas: vec![0.01, 0.05, 0.1, 0.5],
            n_pairs: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// A bundled maze name (see [`env::mazes::NAMES`]) or a path to a maze file.
    pub maze: String,
    pub seed: u64,
    pub num_trajectories: usize,
    pub trajectory_length: usize,
    pub gamma: f64,
    pub estimator: Estimator,
    /// Radius of the `short_pairs` estimator.
    pub radius: f64,
    /// Apply path-relaxation closure to the estimate.
    pub project: bool,
    pub policy: PolicyChoice,
    pub coeff: f64,
    /// Horizon of the adversarial policy.
    pub horizon: u32,
    /// Planner used for invariance measurements; plans on true distances.
    pub planner: PlannerChoice,
    pub slack: f64,
    pub baselines: Vec<Baseline>,
    pub eval: EvalConfig,
    pub bellman: BellmanConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            maze: "rooms".into(),
            seed: 0,
            num_trajectories: 3000,
            trajectory_length: 50,
            gamma: 0.9,
            estimator: Estimator::HittingTime,
            radius: 2.0,
            project: true,
            policy: PolicyChoice::Boltzmann,
            coeff: 0.1,
            horizon: 5,
            planner: PlannerChoice::Midpoint,
            slack: 1.0,
            baselines: vec![Baseline::Unprojected, Baseline::Random],
            eval: EvalConfig::default(),
            bellman: BellmanConfig::default(),
            output_dir: "out".into(),
        }
    }
}

fn config_err(e: impl ToString) -> Error {
    Error::Config(e.to_string())
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(config_err)
    }

    /// Applies `key=value` overrides; dotted keys reach nested tables, e.g.
    /// `eval.n_pairs=200` or `eval.bins=[1, 2, 4]`.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root: toml::Table = self.to_toml_string()?.parse().map_err(config_err)?;
        for item in overrides {
            let item = item.as_ref();
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
            let path: Vec<&str> = key.trim().split('.').collect();
            let (last, parents) = path.split_last().expect("split yields one item");
            let mut table = &mut root;
            for part in parents {
                table = table
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .ok_or_else(|| Error::Config(format!("{key}: {part} is not a table")))?;
            }
            table.insert(last.to_string(), parse_override_value(raw.trim()));
        }
        let cfg: ExperimentConfig = root.try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.num_trajectories == 0 || self.trajectory_length == 0 {
            return bad("num_trajectories and trajectory_length must be at least 1".into());
        }
        if self.bellman.num_trajectories == 0 || self.bellman.trajectory_length == 0 {
            return bad("bellman trajectory counts must be at least 1".into());
        }
        if !(self.coeff > 0.0) {
            return bad(format!("coeff must be positive, got {}", self.coeff));
        }
        if !(self.radius > 0.0) {
            return bad(format!("radius must be positive, got {}", self.radius));
        }
        if !(self.slack >= 0.0) {
            return bad(format!("slack must be nonnegative, got {}", self.slack));
        }
        if self.eval.n_pairs == 0 || self.bellman.n_pairs == 0 {
            return bad("n_pairs must be at least 1".into());
        }
        if self.eval.max_steps == Some(0) {
            return bad("max_steps must be at least 1".into());
        }
        if let Some(bins) = &self.eval.bins {
            if bins.is_empty() || bins.windows(2).any(|w| !(w[0] < w[1])) || bins.iter().any(|b| !(*b > 0.0)) {
                return bad("eval.bins must be positive and strictly ascending".into());
            }
        }
        if self.bellman.sigmas.iter().any(|s| !(*s >= 0.0)) {
            return bad("bellman.sigmas must be nonnegative".into());
        }
        Ok(())
    }

    /// Fills in every derived default for `world`.
    pub fn resolve(&self, world: &GridWorld, true_distance: &DistanceTable) -> Result<Self> {
        let diam = true_distance
            .max_finite()
            .filter(|&d| d > 0.0)
            .ok_or_else(|| Error::Config("maze has no pair of distinct reachable states".into()))?;
        let mut cfg = self.clone();
        let bins = cfg.eval.bins.get_or_insert_with(|| match self.policy {
            PolicyChoice::Adversarial => (1..=diam as usize).map(|c| c as f64).collect(),
            _ => (0..6).rev().map(|k| diam / f64::powi(2.0, k)).collect(),
        });
        let first = bins[0];
        cfg.eval.c0.get_or_insert(first);
        cfg.eval.distant_threshold.get_or_insert((diam / 2.0).floor().max(1.0));
        cfg.eval.max_steps.get_or_insert(4 * world.num_states());
        Ok(cfg)
    }

    /// The configured method's label in reports.
    pub fn method_name(&self) -> String {
        let policy = match self.policy {
            PolicyChoice::Greedy => "greedy".to_string(),
            PolicyChoice::Boltzmann => format!("boltzmann({})", self.coeff),
            PolicyChoice::Random => return "random".into(),
            PolicyChoice::Adversarial => return format!("adversarial(H={})", self.horizon),
        };
        let estimator = match self.estimator {
            Estimator::HittingTime => "hitting_time",
            Estimator::SuccessorExact => "successor_exact",
            Estimator::ShortPairs => "short_pairs",
        };
        let suffix = if self.project { "+closure" } else { "" };
        format!("{policy}:{estimator}{suffix}")
    }
}

/// Loads a bundled maze by name, otherwise reads `maze` as a file path.
pub fn resolve_maze(maze: &str) -> Result<GridWorld> {
    if let Some(text) = env::mazes::by_name(maze) {
        return env::load_maze(text);
    }
    if !Path::new(maze).is_file() {
        return Err(Error::Config(format!(
            "maze {maze:?} is neither a bundled maze ({}) nor a readable file",
            env::mazes::NAMES.join(", ")
        )));
    }
    env::load_maze_file(maze)
}

/// A distance estimate and the action distances a policy acts on.
#[derive(Clone, Debug)]
pub struct Estimate {
    pub table: DistanceTable,
    pub actions: ActionDistanceTable,
    pub certified: bool,
    pub source: String,
}

/// One evaluated method.
#[derive(Clone, Debug, Serialize)]
pub struct MethodResult {
    pub method: String,
    pub curve: SuccessCurve,
    pub stats: Option<HorizonStats>,
    pub invariance: Option<InvarianceSummary>,
    #[serde(skip)]
    pub outcomes: Vec<PairOutcome>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct InvarianceSummary {
    pub n_pairs: usize,
    pub distant_threshold: f64,
    pub success_direct: f64,
    pub success_planned: f64,
    pub ratio: Option<f64>,
}

impl InvarianceSummary {
    fn new(r: &InvarianceResult, distant_threshold: f64) -> Self {
        InvarianceSummary {
            n_pairs: r.n_pairs,
            distant_threshold,
            success_direct: r.success_direct,
            success_planned: r.success_planned,
            ratio: r.ratio,
        }
    }
}

/// A loaded world plus a resolved config.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub world: GridWorld,
    pub true_distance: Arc<DistanceTable>,
}

impl Experiment {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let world = resolve_maze(&config.maze)?;
        let true_distance = shortest_path_distances(&world);
        let config = config.resolve(&world, &true_distance)?;
        Ok(Experiment {
            config,
            world,
            true_distance: Arc::new(true_distance),
        })
    }

    pub fn settings(&self) -> EvalSettings {
        EvalSettings {
            n_pairs: self.config.eval.n_pairs,
            bins: self.config.eval.bins.clone().expect("resolved"),
            max_steps: self.config.eval.max_steps.expect("resolved"),
            seed: self.config.seed,
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        let c = &self.config;
        collect_trajectories(&self.world, Behavior::Uniform, c.num_trajectories, c.trajectory_length, c.seed)
    }

    /// Raw estimate for `estimator`; `dataset` is only used by hitting times.
    pub fn estimate_raw(&self, dataset: Option<&Dataset>) -> Result<Estimate> {
        let c = &self.config;
        match c.estimator {
            Estimator::HittingTime => {
                let generated;
                let data = match dataset {
                    Some(d) => d,
                    None => {
                        generated = self.generate()?;
                        &generated
                    }
                };
                let table = empirical_hitting_time(self.world.num_states(), &data.trajectories)?;
                self.wrap(table, false, "hitting_time")
            }
            Estimator::SuccessorExact => {
                let (table, actions) = successor_distance_exact(&self.world, c.gamma)?;
                Ok(Estimate {
                    table,
                    actions,
                    certified: false,
                    source: "successor_exact".into(),
                })
            }
            Estimator::ShortPairs => {
                let table = short_pair_restriction(&self.true_distance, c.radius)?;
                self.wrap(table, false, "short_pairs")
            }
        }
    }

    fn wrap(&self, table: DistanceTable, certified: bool, source: &str) -> Result<Estimate> {
        Ok(Estimate {
            actions: action_distance_from_state(&self.world, &table)?,
            table,
            certified,
            source: source.into(),
        })
    }

    /// Path-relaxation closure, audited.
    pub fn project(&self, raw: &Estimate) -> Result<Estimate> {
        let mut q = path_relaxation_closure(&raw.table)?;
        let violations = q.audit(EPS_TRIANGLE);
        if !violations.is_empty() {
            return Err(Error::InvalidArgument(format!("closure left {} violations", violations.len())));
        }
        let source = format!("{}+closure", raw.source);
        // The exact successor distances already form a quasimetric, so their
        // own action table stays valid.
        if self.config.estimator == Estimator::SuccessorExact && q.table() == &raw.table {
            return Ok(Estimate {
                table: q.into_table(),
                actions: raw.actions.clone(),
                certified: true,
                source,
            });
        }
        self.wrap(q.into_table(), true, &source)
    }

    /// The estimate the configured method acts on.
    pub fn estimate(&self, dataset: Option<&Dataset>) -> Result<Estimate> {
        let raw = self.estimate_raw(dataset)?;
        if self.config.project {
            self.project(&raw)
        } else {
            Ok(raw)
        }
    }

    pub fn policy(&self, choice: PolicyChoice, estimate: Option<&Estimate>) -> Result<Policy> {
        let need = || {
            estimate
                .map(|e| Arc::new(e.actions.clone()))
                .ok_or_else(|| Error::InvalidArgument("policy needs a distance estimate".into()))
        };
        Ok(match choice {
            PolicyChoice::Greedy => Policy::greedy(need()?, self.config.seed),
            PolicyChoice::Boltzmann => Policy::Boltzmann {
                distance: need()?,
                coeff: self.config.coeff,
            },
            PolicyChoice::Random => Policy::Random,
            PolicyChoice::Adversarial => adversarial_policy(&self.world, self.config.horizon)?,
        })
    }

    pub fn planner(&self) -> Option<Planner> {
        let kind = match self.config.planner {
            PlannerChoice::None => return None,
            PlannerChoice::Optimal => PlannerKind::OptimalWaypoint,
            PlannerChoice::Midpoint => PlannerKind::Midpoint {
                slack: self.config.slack,
            },
        };
        Some(Planner::new(kind, self.true_distance.clone(), self.config.seed))
    }

    pub fn invariance(&self, policy: &Policy) -> Result<Option<InvarianceResult>> {
        let Some(planner) = self.planner() else {
            return Ok(None);
        };
        let threshold = self.config.eval.distant_threshold.expect("resolved");
        planning_invariance_ratio(
            &self.world,
            policy,
            &planner,
            &self.true_distance,
            threshold,
            self.config.eval.n_pairs,
            self.config.eval.max_steps.expect("resolved"),
            self.config.seed,
        )
        .map(Some)
    }

    /// Success curve, eta / Reach and (if a planner is configured) the
    /// invariance ratio of one policy.
    pub fn evaluate(&self, method: &str, policy: &Policy) -> Result<MethodResult> {
        let (curve, outcomes) = stratified_success(&self.world, policy, &self.true_distance, &self.settings())?;
        let stats = match eta_and_reach(&curve, self.config.eval.c0.expect("resolved")) {
            Ok(s) => Some(s),
            Err(Error::ZeroBaseSuccess(_)) | Err(Error::InvalidArgument(_)) => None,
            Err(e) => return Err(e),
        };
        let threshold = self.config.eval.distant_threshold.expect("resolved");
        let invariance = self
            .invariance(policy)?
            .map(|r| InvarianceSummary::new(&r, threshold));
        Ok(MethodResult {
            method: method.to_string(),
            curve,
            stats,
            invariance,
            outcomes,
        })
    }

    /// The configured method followed by its baselines.
    pub fn report(&self, dataset: Option<&Dataset>) -> Result<Vec<MethodResult>> {
        let c = &self.config;
        let needs_estimate = matches!(c.policy, PolicyChoice::Greedy | PolicyChoice::Boltzmann);
        let raw = if needs_estimate { Some(self.estimate_raw(dataset)?) } else { None };
        let main = match &raw {
            Some(r) if c.project => Some(self.project(r)?),
            other => other.clone(),
        };
        let mut results = vec![self.evaluate(&c.method_name(), &self.policy(c.policy, main.as_ref())?)?];
        for baseline in &c.baselines {
            match baseline {
                Baseline::Unprojected if c.project && raw.is_some() => {
                    let name = ExperimentConfig {
                        project: false,
                        ..c.clone()
                    }
                    .method_name();
                    results.push(self.evaluate(&name, &self.policy(c.policy, raw.as_ref())?)?);
                }
                Baseline::Unprojected => {}
                Baseline::Random if c.policy != PolicyChoice::Random => {
                    results.push(self.evaluate("random", &Policy::Random)?);
                }
                Baseline::Random => {}
            }
        }
        Ok(results)
    }
}

/// Setup of the Bellman-error probe: a world, its transitions and the exact
/// critic of the uniform random policy.
pub struct BellmanProbe {
    pub world: GridWorld,
    pub true_distance: DistanceTable,
    pub gamma: f64,
    pub batch: Vec<BellmanSample>,
    pub exact: TabularCritic,
}

impl BellmanProbe {
    /// One batch row per goal state, each paired with a transition drawn
    /// uniformly from `dataset`.
    pub fn new(world: GridWorld, dataset: &Dataset, gamma: f64, seed: u64) -> Result<Self> {
        let transitions: Vec<(usize, env::Action, usize)> = dataset
            .trajectories
            .iter()
            .flat_map(|t| t.actions.iter().enumerate().map(|(i, &a)| (t.states[i], a, t.states[i + 1])))
            .collect();
        if transitions.is_empty() {
            return Err(Error::Empty);
        }
        let mut rng = rng::stream(seed, 0xbe11);
        let batch = (0..world.num_states())
            .map(|goal| {
                let (state, action, next_state) = transitions[rng.random_range(0..transitions.len())];
                BellmanSample {
                    state,
                    action,
                    next_state,
                    goal,
                }
            })
            .collect();
        let occupancy = discounted_occupancy(&world, gamma, uniform_policy)?;
        let exact = TabularCritic::from_occupancy(&world, &occupancy, uniform_policy)?;
        Ok(BellmanProbe {
            true_distance: shortest_path_distances(&world),
            world,
            gamma,
            batch,
            exact,
        })
    }

    /// Success of the critic's greedy policy on pairs closer than
    /// `threshold` and on pairs at least that far.
    pub fn success(&self, critic: &TabularCritic, threshold: f64, n_pairs: usize, seed: u64) -> Result<(f64, f64)> {
        let policy = Policy::greedy(Arc::new(critic.to_action_costs()), seed);
        let max_steps = 4 * self.world.num_states();
        let rate = |pairs: &[(usize, usize)]| -> Result<f64> {
            let out = evaluate_pairs(&self.world, &policy, pairs, &self.true_distance, max_steps, seed)?;
            Ok(out.iter().filter(|o| o.success).count() as f64 / out.len() as f64)
        };
        let distant = sample_pairs(&self.true_distance, n_pairs, threshold, seed)?;
        let easy: Vec<_> = sample_pairs(&self.true_distance, 4 * n_pairs, 0.0, seed)?
            .into_iter()
            .filter(|&(s, g)| self.true_distance.get(s, g) < threshold)
            .take(n_pairs)
            .collect();
        Ok((rate(&easy)?, rate(&distant)?))
    }

    /// The exact critic followed by one noisy checkpoint per sigma.
    pub fn trace(&self, sigmas: &[f64], n_pairs: usize, seed: u64) -> Result<Vec<BellmanPoint>> {
        let threshold = (self.true_distance.max_finite().unwrap_or(0.0) / 2.0).floor().max(1.0);
        let mut points = Vec::with_capacity(sigmas.len() + 1);
        let mut checkpoints = vec![("exact".to_string(), self.exact.clone())];
        for &sigma in sigmas {
            checkpoints.push((format!("sigma={sigma}"), self.exact.with_noise(sigma, seed)));
        }
        for (checkpoint, critic) in checkpoints {
            let error = bellman_error(&critic, self.gamma, &self.batch)?;
            let (easy_success, distant_success) = self.success(&critic, threshold, n_pairs, seed)?;
            points.push(BellmanPoint {
                checkpoint,
                error,
                easy_success,
                distant_success,
            });
        }
        Ok(points)
    }
}

// ---------------------------------------------------------------------------
// File output

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn opt_value(v: Option<f64>) -> String {
    v.map(format_value).unwrap_or_default()
}

/// Creates the output directory and archives the resolved config in it.
pub fn prepare_output(config: &ExperimentConfig) -> Result<PathBuf> {
    let dir = config.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_text(&dir.join("config.resolved.toml"), &config.to_toml_string()?)?;
    Ok(dir)
}

pub fn write_table(table: &DistanceTable, certified: bool, source: &str, csv_path: &Path) -> Result<()> {
    table.write_csv_file(csv_path)?;
    let sidecar = TableSidecar {
        num_states: table.len(),
        certified,
        source: source.to_string(),
    };
    let json_path = csv_path.with_extension("json");
    write_text(&json_path, &(serde_json::to_string_pretty(&sidecar)? + "\n"))
}

/// Reads a distance CSV; the result is certified only if the audit passes.
pub fn read_quasimetric(csv_path: &Path) -> Result<QuasimetricTable> {
    let table = DistanceTable::read_csv_file(csv_path)?;
    QuasimetricTable::certify(table, EPS_TRIANGLE).map_err(|v| {
        Error::InvalidArgument(format!(
            "{} violates the triangle inequality at {} triples",
            csv_path.display(),
            v.len()
        ))
    })
}

pub fn write_curve(curve: &SuccessCurve, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_upper", "n_pairs", "success_rate"])?;
    for b in &curve.bins {
        w.write_record([format_value(b.upper), b.n_pairs.to_string(), format_value(b.rate)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_outcomes(outcomes: &[PairOutcome], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for o in outcomes {
        w.serialize(o)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row per method and doubling; methods without doublings get one row
/// with an empty `c`.
pub fn write_report(results: &[MethodResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "c", "eta_c", "eta_aggregate", "reach_wc", "invariance_ratio"])?;
    for r in results {
        let agg = r.stats.as_ref().and_then(|s| s.eta_aggregate);
        let reach = r.stats.as_ref().and_then(|s| s.reach_wc);
        let ratio = opt_value(r.invariance.as_ref().and_then(|i| i.ratio));
        let doublings = r.stats.as_ref().map(|s| s.eta_per_doubling.as_slice()).unwrap_or(&[]);
        if doublings.is_empty() {
            w.write_record([r.method.clone(), String::new(), String::new(), opt_value(agg), opt_value(reach), ratio])?;
            continue;
        }
        for &(c, eta) in doublings {
            w.write_record([
                r.method.clone(),
                format_value(c),
                format_value(eta),
                opt_value(agg),
                opt_value(reach),
                ratio.clone(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_scatter(rows: &[ScatterRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "eta_aggregate", "invariance_ratio"])?;
    for r in rows {
        w.write_record([r.method.clone(), opt_value(r.eta_aggregate), opt_value(r.invariance_ratio)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_bellman(points: &[BellmanPoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["checkpoint", "error", "easy_success", "distant_success"])?;
    for p in points {
        w.write_record([
            p.checkpoint.clone(),
            format_value(p.error),
            format_value(p.easy_success),
            format_value(p.distant_success),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn file_stem(method: &str) -> String {
    method
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' })
        .collect()
}

// ---------------------------------------------------------------------------
// Commands

/// Writes `dataset.csv` and `dataset.json`.
pub fn cmd_generate(config: &ExperimentConfig) -> Result<Dataset> {
    let exp = Experiment::new(config)?;
    let dir = prepare_output(&exp.config)?;
    let data = exp.generate()?;
    data.write(dir.join("dataset.csv"), dir.join("dataset.json"))?;
    Ok(data)
}

/// Writes the raw estimate to `distances.csv` (plus sidecar).
pub fn cmd_estimate(config: &ExperimentConfig) -> Result<Estimate> {
    let exp = Experiment::new(config)?;
    let dir = prepare_output(&exp.config)?;
    let est = exp.estimate_raw(None)?;
    write_table(&est.table, est.certified, &est.source, &dir.join("distances.csv"))?;
    Ok(est)
}

/// Closes `input` (or the configured raw estimate) and writes
/// `quasimetric.csv` with a certified sidecar.
pub fn cmd_project(config: &ExperimentConfig, input: Option<&Path>) -> Result<QuasimetricTable> {
    let dir = prepare_output(config)?;
    let (table, source) = match input {
        Some(path) => (DistanceTable::read_csv_file(path)?, path.display().to_string()),
        None => {
            let est = Experiment::new(config)?.estimate_raw(None)?;
            (est.table, est.source)
        }
    };
    let mut q = path_relaxation_closure(&table)?;
    q.audit(EPS_TRIANGLE);
    write_table(q.table(), q.is_certified(), &format!("{source}+closure"), &dir.join("quasimetric.csv"))?;
    Ok(q)
}

/// Evaluates the configured method (or a greedy/Boltzmann policy on a given
/// table) and writes `curve.csv`, `outcomes.csv` and `evaluation.json`.
pub fn cmd_evaluate(config: &ExperimentConfig, table: Option<&Path>) -> Result<MethodResult> {
    let exp = Experiment::new(config)?;
    let dir = prepare_output(&exp.config)?;
    let policy_needs_table = matches!(exp.config.policy, PolicyChoice::Greedy | PolicyChoice::Boltzmann);
    let estimate = match (table, policy_needs_table) {
        (_, false) => None,
        (Some(path), true) => {
            let t = DistanceTable::read_csv_file(path)?;
            if t.len() != exp.world.num_states() {
                return Err(Error::SizeMismatch(t.len(), exp.world.num_states()));
            }
            Some(exp.wrap(t, false, &path.display().to_string())?)
        }
        (None, true) => Some(exp.estimate(None)?),
    };
    let policy = exp.policy(exp.config.policy, estimate.as_ref())?;
    let name = match table {
        Some(path) if policy_needs_table => format!("{}:{}", policy.name(), path.display()),
        _ => exp.config.method_name(),
    };
    let result = exp.evaluate(&name, &policy)?;
    write_curve(&result.curve, &dir.join("curve.csv"))?;
    write_outcomes(&result.outcomes, &dir.join("outcomes.csv"))?;
    write_text(&dir.join("evaluation.json"), &(serde_json::to_string_pretty(&result)? + "\n"))?;
    Ok(result)
}

/// Writes `invariance.json` for the configured method and planner.
pub fn cmd_invariance(config: &ExperimentConfig) -> Result<InvarianceSummary> {
    let exp = Experiment::new(config)?;
    let dir = prepare_output(&exp.config)?;
    if exp.config.planner == PlannerChoice::None {
        return Err(Error::Config("planner = \"none\" leaves nothing to compare".into()));
    }
    let estimate = match exp.config.policy {
        PolicyChoice::Greedy | PolicyChoice::Boltzmann => Some(exp.estimate(None)?),
        _ => None,
    };
    let policy = exp.policy(exp.config.policy, estimate.as_ref())?;
    let result = exp.invariance(&policy)?.expect("planner configured");
    let summary = InvarianceSummary::new(&result, exp.config.eval.distant_threshold.expect("resolved"));
    write_text(&dir.join("invariance.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    Ok(summary)
}

/// Everything a `report` run wrote, as stored in `summary.json`.
#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub num_states: usize,
    pub coverage_fraction: Option<f64>,
    pub methods: Vec<MethodResult>,
    pub scatter: Vec<ScatterRow>,
}

/// The full pipeline: data, estimate, projection, every method's curve,
/// eta / Reach and invariance ratio. Writes the dataset, the tables, one
/// curve per method, `report.csv`, `scatter.csv` and `summary.json`.
pub fn cmd_pipeline(config: &ExperimentConfig) -> Result<Summary> {
    let exp = Experiment::new(config)?;
    let dir = prepare_output(&exp.config)?;
    let dataset = match exp.config.estimator {
        Estimator::HittingTime => {
            let data = exp.generate()?;
            data.write(dir.join("dataset.csv"), dir.join("dataset.json"))?;
            Some(data)
        }
        _ => None,
    };
    if matches!(exp.config.policy, PolicyChoice::Greedy | PolicyChoice::Boltzmann) {
        let raw = exp.estimate_raw(dataset.as_ref())?;
        write_table(&raw.table, raw.certified, &raw.source, &dir.join("distances.csv"))?;
        if exp.config.project {
            let q = exp.project(&raw)?;
            write_table(&q.table, q.certified, &q.source, &dir.join("quasimetric.csv"))?;
        }
    }
    let methods = exp.report(dataset.as_ref())?;
    for m in &methods {
        write_curve(&m.curve, &dir.join(format!("curve_{}.csv", file_stem(&m.method))))?;
    }
    write_report(&methods, &dir.join("report.csv"))?;
    let reports: Vec<(String, HorizonReport)> = methods
        .iter()
        .filter_map(|m| {
            let stats = m.stats.clone()?;
            Some((
                m.method.clone(),
                HorizonReport {
                    stats,
                    invariance_ratio: m.invariance.as_ref().and_then(|i| i.ratio),
                },
            ))
        })
        .collect();
    let scatter = scatter_report(&reports);
    write_scatter(&scatter, &dir.join("scatter.csv"))?;
    let summary = Summary {
        config: exp.config.clone(),
        num_states: exp.world.num_states(),
        coverage_fraction: dataset.as_ref().map(|d| d.meta.coverage_fraction),
        methods,
        scatter,
    };
    write_text(&dir.join("summary.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    Ok(summary)
}

/// Bellman error of the exact critic and its noisy copies; writes `bellman.csv`.
pub fn cmd_bellman(config: &ExperimentConfig) -> Result<Vec<BellmanPoint>> {
    config.validate()?;
    let b = &config.bellman;
    let world = resolve_maze(&b.maze)?;
    let dir = prepare_output(config)?;
    let data = collect_trajectories(&world, Behavior::Uniform, b.num_trajectories, b.trajectory_length, config.seed)?;
    let probe = BellmanProbe::new(world, &data, config.gamma, config.seed)?;
    let points = probe.trace(&b.sigmas, b.n_pairs, config.seed)?;
    write_bellman(&points, &dir.join("bellman.csv"))?;
    Ok(points)
}

/// Rewrites one of the CSV outputs as whitespace-separated columns with a
/// `#` header line, the layout gnuplot reads directly. Empty cells become `NaN`.
pub fn plot_data(csv_path: &Path) -> Result<String> {
    let mut reader = csv::Reader::from_path(csv_path)?;
    let mut out = String::from("#");
    for h in reader.headers()? {
        out.push(' ');
        out.push_str(h);
    }
    out.push('\n');
    for record in reader.records() {
        let record = record?;
        let cells: Vec<String> = record
            .iter()
            .map(|c| {
                if c.is_empty() {
                    "NaN".to_string()
                } else if c.contains(char::is_whitespace) {
                    format!("\"{c}\"")
                } else {
                    c.to_string()
                }
            })
            .collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    Ok(out)
}
