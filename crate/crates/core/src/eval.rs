//! Measurement suite: distance-stratified success, horizon generalization
//! (eta and Reach), planning invariance and Bellman error.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{rollout, Planner, Policy};
use crate::env::{Action, GridWorld, StateId};
use crate::error::{Error, Result};
use crate::estimation::DiscountedOccupancy;
use crate::rng;
use crate::table::{ActionDistanceTable, DistanceTable};

/// Outcome of one evaluated start-goal pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairOutcome {
    pub s: StateId,
    pub g: StateId,
    pub distance: f64,
    pub success: bool,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    /// Upper edge; the bin holds distances in `(previous edge, upper]`.
    pub upper: f64,
    pub n_pairs: usize,
    pub successes: usize,
    pub rate: f64,
}

/// Success rate per distance bin. Empty bins are omitted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SuccessCurve {
    pub bins: Vec<BinStat>,
}

impl SuccessCurve {
    pub fn rate_at(&self, upper: f64) -> Option<f64> {
        self.bins.iter().find(|b| b.upper == upper).map(|b| b.rate)
    }

    pub fn last(&self) -> Option<&BinStat> {
        self.bins.last()
    }
}

fn check_bins(bins: &[f64]) -> Result<()> {
    if bins.is_empty() || bins.windows(2).any(|w| !(w[0] < w[1])) || bins.iter().any(|b| b.is_nan()) {
        return Err(Error::InvalidArgument("bins must be a nonempty strictly ascending list".into()));
    }
    Ok(())
}

/// Index of the bin with upper-edge labeling, or `None` past the last edge.
pub fn bin_index(bins: &[f64], distance: f64) -> Option<usize> {
    bins.iter().position(|&upper| distance <= upper)
}

/// Folds raw per-pair outcomes into a curve.
pub fn fold_curve(outcomes: &[PairOutcome], bins: &[f64]) -> Result<SuccessCurve> {
    check_bins(bins)?;
    let mut counts = vec![(0usize, 0usize); bins.len()];
    for o in outcomes {
        if let Some(i) = bin_index(bins, o.distance) {
            counts[i].0 += 1;
            counts[i].1 += usize::from(o.success);
        }
    }
    Ok(SuccessCurve {
        bins: bins
            .iter()
            .zip(counts)
            .filter(|(_, (n, _))| *n > 0)
            .map(|(&upper, (n_pairs, successes))| BinStat {
                upper,
                n_pairs,
                successes,
                rate: successes as f64 / n_pairs as f64,
            })
            .collect(),
    })
}

/// Samples `n_pairs` pairs with replacement, uniformly among pairs `s != g`
/// whose distance is finite and at least `min_distance`.
pub fn sample_pairs(
    distances: &DistanceTable,
    n_pairs: usize,
    min_distance: f64,
    seed: u64,
) -> Result<Vec<(StateId, StateId)>> {
    let n = distances.len();
    let pool: Vec<(StateId, StateId)> = (0..n)
        .flat_map(|s| (0..n).map(move |g| (s, g)))
        .filter(|&(s, g)| {
            let d = distances.get(s, g);
            s != g && d.is_finite() && d >= min_distance
        })
        .collect();
    if pool.is_empty() {
        return Err(Error::NoDistantPairs(min_distance));
    }
    let mut rng = rng::stream(seed, u64::MAX);
    Ok((0..n_pairs)
        .map(|_| pool[rng.random_range(0..pool.len())])
        .collect())
}

/// Rolls out every pair; pair `i` uses the seed derived from `(seed, i)`.
pub fn evaluate_pairs(
    world: &GridWorld,
    policy: &Policy,
    pairs: &[(StateId, StateId)],
    true_distance: &DistanceTable,
    max_steps: usize,
    seed: u64,
) -> Result<Vec<PairOutcome>> {
    pairs
        .par_iter()
        .enumerate()
        .map(|(i, &(s, g))| {
            let out = rollout(world, policy, s, g, max_steps, rng::derive_seed(seed, i as u64))?;
            Ok(PairOutcome {
                s,
                g,
                distance: true_distance.get(s, g),
                success: out.success,
                steps: out.steps,
            })
        })
        .collect()
}

/// Evaluation protocol shared by the success-curve and invariance measurements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub n_pairs: usize,
    pub bins: Vec<f64>,
    pub max_steps: usize,
    pub seed: u64,
}

impl EvalSettings {
    /// `max_steps = 4 |S|`.
    pub fn new(world: &GridWorld, n_pairs: usize, bins: Vec<f64>, seed: u64) -> Self {
        EvalSettings {
            n_pairs,
            bins,
            max_steps: 4 * world.num_states(),
            seed,
        }
    }
}

/// Samples pairs, rolls the policy out and bins outcomes by true distance.
///
/// Returns the curve together with the raw outcomes it was folded from.
pub fn stratified_success(
    world: &GridWorld,
    policy: &Policy,
    true_distance: &DistanceTable,
    settings: &EvalSettings,
) -> Result<(SuccessCurve, Vec<PairOutcome>)> {
    check_bins(&settings.bins)?;
    if settings.n_pairs == 0 {
        return Err(Error::InvalidArgument("n_pairs must be at least 1".into()));
    }
    let pairs = sample_pairs(true_distance, settings.n_pairs, 0.0, settings.seed)?;
    let outcomes = evaluate_pairs(
        world,
        policy,
        &pairs,
        true_distance,
        settings.max_steps,
        settings.seed,
    )?;
    Ok((fold_curve(&outcomes, &settings.bins)?, outcomes))
}

/// Worst-case Reach for a per-doubling success decay `eta`:
/// `1 + eta / (1 - 2 eta)` below one half, infinite from one half on.
///
/// ```
/// use horizon_core::eval::reach_worst_case;
///
/// assert_eq!(reach_worst_case(0.0), 1.0);
/// assert_eq!(reach_worst_case(0.1), 1.125);
/// assert_eq!(reach_worst_case(0.5), f64::INFINITY);
/// ```
pub fn reach_worst_case(eta: f64) -> f64 {
    if eta >= 0.5 {
        f64::INFINITY
    } else {
        1.0 + eta / (1.0 - 2.0 * eta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonStats {
    /// `(c, Success(2c) / Success(c))` for `c = c0, 2 c0, ...`.
    pub eta_per_doubling: Vec<(f64, f64)>,
    /// Geometric mean of the per-doubling ratios.
    pub eta_aggregate: Option<f64>,
    pub reach_wc: Option<f64>,
}

/// Per-doubling success ratios starting from bin `c0`.
///
/// Doublings stop at the first missing bin or zero-success denominator.
pub fn eta_and_reach(curve: &SuccessCurve, c0: f64) -> Result<HorizonStats> {
    let base = curve
        .rate_at(c0)
        .ok_or_else(|| Error::InvalidArgument(format!("no bin with upper edge {c0}")))?;
    if base <= 0.0 {
        return Err(Error::ZeroBaseSuccess(c0));
    }
    let mut eta_per_doubling = Vec::new();
    let mut c = c0;
    while let (Some(here), Some(there)) = (curve.rate_at(c), curve.rate_at(2.0 * c)) {
        if here == 0.0 {
            break;
        }
        eta_per_doubling.push((c, there / here));
        c *= 2.0;
    }
    let eta_aggregate = (!eta_per_doubling.is_empty()).then(|| {
        let k = eta_per_doubling.len() as f64;
        if eta_per_doubling.iter().any(|&(_, e)| e == 0.0) {
            0.0
        } else {
            (eta_per_doubling.iter().map(|&(_, e)| e.ln()).sum::<f64>() / k).exp()
        }
    });
    Ok(HorizonStats {
        reach_wc: eta_aggregate.map(reach_worst_case),
        eta_per_doubling,
        eta_aggregate,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InvarianceResult {
    pub n_pairs: usize,
    pub success_direct: f64,
    pub success_planned: f64,
    /// `success_planned / success_direct`; `None` for 0/0.
    pub ratio: Option<f64>,
    pub direct: Vec<PairOutcome>,
    pub planned: Vec<PairOutcome>,
}

/// Success with planning divided by success without, on the same seeded
/// pairs at true distance at least `distant_threshold`.
pub fn planning_invariance_ratio(
    world: &GridWorld,
    base: &Policy,
    planner: &Planner,
    true_distance: &DistanceTable,
    distant_threshold: f64,
    n_pairs: usize,
    max_steps: usize,
    seed: u64,
) -> Result<InvarianceResult> {
    if !(distant_threshold > 0.0) {
        return Err(Error::InvalidArgument("distant_threshold must be positive".into()));
    }
    if n_pairs == 0 {
        return Err(Error::InvalidArgument("n_pairs must be at least 1".into()));
    }
    let pairs = sample_pairs(true_distance, n_pairs, distant_threshold, seed)?;
    let composed = base.clone().with_planner(planner.clone());
    let direct = evaluate_pairs(world, base, &pairs, true_distance, max_steps, seed)?;
    let planned = evaluate_pairs(world, &composed, &pairs, true_distance, max_steps, seed)?;
    let rate = |o: &[PairOutcome]| o.iter().filter(|p| p.success).count() as f64 / o.len() as f64;
    let (success_direct, success_planned) = (rate(&direct), rate(&planned));
    let ratio = if success_direct == 0.0 {
        (success_planned > 0.0).then_some(f64::INFINITY)
    } else {
        Some(success_planned / success_direct)
    };
    Ok(InvarianceResult {
        n_pairs,
        success_direct,
        success_planned,
        ratio,
        direct,
        planned,
    })
}

/// Scores used as softmax logits over candidate goals.
pub trait GoalCritic {
    /// Logit of goal `g` after taking `a` in `s`.
    fn action_logit(&self, s: StateId, a: Action, g: StateId) -> f64;
    /// Logit of goal `g` from `s` with the action left to the policy.
    fn state_logit(&self, s: StateId, g: StateId) -> f64;
}

/// Negative distance, ignoring the action.
impl GoalCritic for DistanceTable {
    fn action_logit(&self, s: StateId, _: Action, g: StateId) -> f64 {
        -self.get(s, g)
    }

    fn state_logit(&self, s: StateId, g: StateId) -> f64 {
        -self.get(s, g)
    }
}

impl GoalCritic for ActionDistanceTable {
    fn action_logit(&self, s: StateId, a: Action, g: StateId) -> f64 {
        -self.get(s, a, g)
    }

    fn state_logit(&self, s: StateId, g: StateId) -> f64 {
        -self.min_over_actions(s, g)
    }
}

/// Tabulated logits, e.g. the log of an exact discounted occupancy.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularCritic {
    n: usize,
    action_logits: Vec<f64>,
    state_logits: Vec<f64>,
    policy: Vec<[f64; Action::COUNT]>,
}

impl TabularCritic {
    /// Critic whose goal distribution after `(s, a)` is the discounted
    /// occupancy started from the successor state, and whose state logits
    /// are the policy average of the action ones. This is the fixed point of
    /// the TD target used by [`bellman_error`].
    pub fn from_occupancy(
        world: &GridWorld,
        occupancy: &DiscountedOccupancy,
        policy: impl Fn(StateId) -> [f64; Action::COUNT],
    ) -> Result<Self> {
        let n = world.num_states();
        if occupancy.len() != n {
            return Err(Error::SizeMismatch(occupancy.len(), n));
        }
        let mut action_logits = Vec::with_capacity(n * Action::COUNT * n);
        for s in 0..n {
            for a in Action::ALL {
                let next = world.step(s, a);
                action_logits.extend((0..n).map(|g| occupancy.state(next, g).ln()));
            }
        }
        let policy: Vec<_> = (0..n).map(policy).collect();
        let mut critic = TabularCritic {
            n,
            action_logits,
            state_logits: vec![0.0; n * n],
            policy,
        };
        critic.refresh_state_logits();
        Ok(critic)
    }

    fn refresh_state_logits(&mut self) {
        let n = self.n;
        for s in 0..n {
            for g in 0..n {
                let logits = Action::ALL.map(|a| self.action_logit(s, a, g));
                let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mean: f64 = Action::ALL
                    .iter()
                    .map(|a| self.policy[s][a.index()] * (logits[a.index()] - top).exp())
                    .sum();
                self.state_logits[s * n + g] = top + mean.ln();
            }
        }
    }

    /// Adds `sigma * z` to every action logit, `z` standard normal drawn from
    /// `seed`, and recomputes the state logits. The same seed gives the same
    /// `z` for every `sigma`.
    pub fn with_noise(&self, sigma: f64, seed: u64) -> Self {
        let mut rng = rng::from_seed(seed);
        let mut noisy = self.clone();
        for logit in &mut noisy.action_logits {
            let z: f64 = rng.sample(StandardNormal);
            *logit += sigma * z;
        }
        noisy.refresh_state_logits();
        noisy
    }

    /// Costs `max_a' q(s, a', g) - q(s, a, g)`, so greedy action selection
    /// maximizes the critic.
    pub fn to_action_costs(&self) -> ActionDistanceTable {
        ActionDistanceTable::from_fn(self.n, |s, a, g| {
            let top = Action::ALL
                .iter()
                .map(|&b| self.action_logit(s, b, g))
                .fold(f64::NEG_INFINITY, f64::max);
            top - self.action_logit(s, a, g)
        })
    }
}

impl GoalCritic for TabularCritic {
    fn action_logit(&self, s: StateId, a: Action, g: StateId) -> f64 {
        self.action_logits[(s * Action::COUNT + a.index()) * self.n + g]
    }

    fn state_logit(&self, s: StateId, g: StateId) -> f64 {
        self.state_logits[s * self.n + g]
    }
}

/// One row of a contrastive batch: a transition and a goal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BellmanSample {
    pub state: StateId,
    pub action: Action,
    pub next_state: StateId,
    pub goal: StateId,
}

/// Checks that every recorded successor matches the dynamics.
pub fn check_batch(world: &GridWorld, batch: &[BellmanSample]) -> Result<()> {
    for b in batch {
        world.check_state(b.state)?;
        world.check_state(b.goal)?;
        if world.step(b.state, b.action) != b.next_state {
            return Err(Error::InvalidArgument(format!(
                "sample ({}, {}, {}) is not a transition",
                b.state, b.action, b.next_state
            )));
        }
    }
    Ok(())
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return vec![f64::NEG_INFINITY; logits.len()];
    }
    let log_norm = top + logits.iter().map(|&l| (l - top).exp()).sum::<f64>().ln();
    logits.iter().map(|&l| l - log_norm).collect()
}

/// Mean KL divergence between the TD target over the batch goals and the
/// critic's softmax over the same goals.
///
/// With `L[i][j] = q(s_i, a_i, g_j)` and `L'[i][j] = v(s'_i, g_j)`:
/// `target[i][j] = (1 - gamma) [s'_i = g_j] + gamma softmax(L'[i])[j]` and
/// the error is `mean_i KL(target[i] || softmax(L[i]))`.
pub fn bellman_error(critic: &(impl GoalCritic + Sync), gamma: f64, batch: &[BellmanSample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty);
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidGamma(gamma));
    }
    let total: f64 = batch
        .par_iter()
        .map(|row| {
            let current: Vec<f64> = batch
                .iter()
                .map(|col| critic.action_logit(row.state, row.action, col.goal))
                .collect();
            let next: Vec<f64> = batch
                .iter()
                .map(|col| critic.state_logit(row.next_state, col.goal))
                .collect();
            let log_pred = log_softmax(&current);
            let log_next = log_softmax(&next);
            batch
                .iter()
                .zip(log_pred.iter().zip(&log_next))
                .map(|(col, (&lp, &ln))| {
                    let hit = if row.next_state == col.goal { 1.0 - gamma } else { 0.0 };
                    let target = hit + gamma * ln.exp();
                    if target > 0.0 {
                        target * (target.ln() - lp)
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum();
    Ok((total / batch.len() as f64).max(0.0))
}

/// Combined horizon-generalization and invariance summary for one method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub stats: HorizonStats,
    pub invariance_ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub method: String,
    pub eta_aggregate: Option<f64>,
    pub invariance_ratio: Option<f64>,
}

/// One `(method, eta, invariance)` row per method, for plotting.
pub fn scatter_report(methods: &[(String, HorizonReport)]) -> Vec<ScatterRow> {
    methods
        .iter()
        .map(|(method, report)| ScatterRow {
            method: method.clone(),
            eta_aggregate: report.stats.eta_aggregate,
            invariance_ratio: report.invariance_ratio,
        })
        .collect()
}

/// One line of a Bellman-error trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BellmanPoint {
    pub checkpoint: String,
    pub error: f64,
    pub easy_success: f64,
    pub distant_success: f64,
}
