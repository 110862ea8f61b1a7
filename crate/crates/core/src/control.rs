//! Goal-conditioned policies, waypoint planners and rollouts.

use std::fmt;
use std::sync::Arc;

use rand::Rng;

use crate::env::{shortest_path_distances, Action, GridWorld, StateId};
use crate::error::{Error, Result};
use crate::estimation::action_distance_from_state;
use crate::rng;
use crate::table::{ActionDistanceTable, DistanceTable};

/// Relative tolerance under which two float distances count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[inline]
fn ties(value: f64, best: f64) -> bool {
    value == best || (best.is_finite() && value - best <= TIE_TOLERANCE * best.abs().max(1.0))
}

/// A subset of [`Action::ALL`] stored as a bitmask.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ActionSet(u8);

impl ActionSet {
    pub const EMPTY: ActionSet = ActionSet(0);
    pub const ALL: ActionSet = ActionSet((1 << Action::COUNT) - 1);

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn insert(&mut self, a: Action) {
        self.0 |= 1 << a.index();
    }

    pub fn contains(self, a: Action) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset(self, other: ActionSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Action> {
        Action::ALL.into_iter().filter(move |&a| self.contains(a))
    }

    pub fn complement(self) -> ActionSet {
        ActionSet(!self.0 & Self::ALL.0)
    }
}

impl FromIterator<Action> for ActionSet {
    fn from_iter<I: IntoIterator<Item = Action>>(iter: I) -> Self {
        let mut set = ActionSet::EMPTY;
        iter.into_iter().for_each(|a| set.insert(a));
        set
    }
}

impl fmt::Debug for ActionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// `argmin_a d(s, a, g)`.
pub fn greedy_action_set(d: &ActionDistanceTable, s: StateId, g: StateId) -> Result<ActionSet> {
    if s >= d.len() || g >= d.len() {
        return Err(Error::InvalidState(s.max(g)));
    }
    let costs = d.actions(s, g);
    let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
    if best == f64::INFINITY {
        return Err(Error::UnreachableGoal { state: s, goal: g });
    }
    Ok(Action::ALL
        .into_iter()
        .filter(|a| ties(costs[a.index()], best))
        .collect())
}

/// `pi(a | s, g) ∝ exp(-coeff * d(s, a, g))`; infinite distances get zero mass.
pub fn boltzmann_policy_probs(
    d: &ActionDistanceTable,
    s: StateId,
    g: StateId,
    coeff: f64,
) -> Result<[f64; Action::COUNT]> {
    if !(coeff > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Boltzmann coefficient must be positive, got {coeff}"
        )));
    }
    if s >= d.len() || g >= d.len() {
        return Err(Error::InvalidState(s.max(g)));
    }
    let costs = d.actions(s, g);
    let best = costs.iter().copied().fold(f64::INFINITY, f64::min);
    if best == f64::INFINITY {
        return Err(Error::UnreachableGoal { state: s, goal: g });
    }
    let weights = costs.map(|c| (-coeff * (c - best)).exp());
    let total: f64 = weights.iter().sum();
    Ok(weights.map(|w| w / total))
}

/// Deterministic pick from a nonempty set, keyed by `(seed, s, set)`.
///
/// Two goals whose greedy sets coincide at `s` therefore get the same action.
pub fn tie_break(set: ActionSet, seed: u64, s: StateId) -> Action {
    debug_assert!(!set.is_empty());
    let k = rng::hash_words(&[seed, s as u64, set.bits() as u64]) % set.len() as u64;
    set.iter().nth(k as usize).expect("index below set size")
}

fn sample_from<R: Rng>(probs: &[f64; Action::COUNT], rng: &mut R) -> Action {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for a in Action::ALL {
        acc += probs[a.index()];
        if u < acc {
            return a;
        }
    }
    // Rounding left a sliver of mass at the top: return the last supported action.
    *Action::ALL
        .iter()
        .rev()
        .find(|a| probs[a.index()] > 0.0)
        .expect("distribution has support")
}

fn uniform() -> [f64; Action::COUNT] {
    [1.0 / Action::COUNT as f64; Action::COUNT]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PlannerKind {
    /// Uniform over `argmin_w d(s, w) + d(w, g)`, `w != s`.
    OptimalWaypoint,
    /// Uniform over `w != s` with both legs within `slack` of `d(s, g) / 2`.
    Midpoint { slack: f64 },
    /// Always proposes the goal itself.
    Identity,
}

/// Proposes a waypoint between a state and a goal.
#[derive(Clone, Debug)]
pub struct Planner {
    pub kind: PlannerKind,
    pub distance: Arc<DistanceTable>,
    pub seed: u64,
}

impl Planner {
    pub fn new(kind: PlannerKind, distance: Arc<DistanceTable>, seed: u64) -> Self {
        Planner { kind, distance, seed }
    }

    fn optimal_candidates(&self, s: StateId, g: StateId) -> Vec<StateId> {
        let d = &self.distance;
        let best = (0..d.len())
            .filter(|&w| w != s)
            .map(|w| d.get(s, w) + d.get(w, g))
            .fold(f64::INFINITY, f64::min);
        (0..d.len())
            .filter(|&w| w != s && ties(d.get(s, w) + d.get(w, g), best))
            .collect()
    }

    /// The set the planner samples from.
    pub fn candidates(&self, s: StateId, g: StateId) -> Result<Vec<StateId>> {
        let d = &self.distance;
        if s >= d.len() || g >= d.len() {
            return Err(Error::InvalidState(s.max(g)));
        }
        if s == g || self.kind == PlannerKind::Identity {
            return Ok(vec![g]);
        }
        let total = d.get(s, g);
        if total == f64::INFINITY {
            return Err(Error::UnreachableGoal { state: s, goal: g });
        }
        if let PlannerKind::Midpoint { slack } = self.kind {
            let half = total / 2.0;
            let near: Vec<StateId> = (0..d.len())
                .filter(|&w| {
                    w != s
                        && (d.get(s, w) - half).abs() <= slack
                        && (d.get(w, g) - half).abs() <= slack
                })
                .collect();
            if !near.is_empty() {
                return Ok(near);
            }
        }
        Ok(self.optimal_candidates(s, g))
    }

    /// Draws one waypoint uniformly from [`candidates`](Self::candidates).
    pub fn plan<R: Rng>(&self, s: StateId, g: StateId, rng: &mut R) -> Result<StateId> {
        let candidates = self.candidates(s, g)?;
        Ok(candidates[rng.random_range(0..candidates.len())])
    }
}

/// Free-function form of [`Planner::plan`].
pub fn plan_waypoint<R: Rng>(planner: &Planner, s: StateId, g: StateId, rng: &mut R) -> Result<StateId> {
    planner.plan(s, g, rng)
}

/// Greedy on the true distance up to `horizon`, deliberately wrong one step
/// beyond it.
#[derive(Clone, Debug)]
pub struct AdversarialPolicy {
    pub horizon: u32,
    optimal: Arc<ActionDistanceTable>,
    true_distance: Arc<DistanceTable>,
    tie_break_seed: u64,
}

impl AdversarialPolicy {
    /// True for the pairs where the policy misbehaves.
    pub fn is_designated(&self, s: StateId, g: StateId) -> bool {
        self.true_distance.get(s, g) == f64::from(self.horizon + 1)
    }

    fn choose(&self, s: StateId, g: StateId) -> Result<Action> {
        let optimal = greedy_action_set(&self.optimal, s, g)?;
        if self.is_designated(s, g) {
            let wrong = optimal.complement();
            return wrong.iter().next().ok_or(Error::NoAdversarialPair(self.horizon));
        }
        Ok(tie_break(optimal, self.tie_break_seed, s))
    }
}

/// Builds a policy that is optimal for every pair at most `horizon` steps
/// apart and takes a suboptimal action at every pair exactly `horizon + 1`
/// apart.
pub fn adversarial_policy(world: &GridWorld, horizon: u32) -> Result<Policy> {
    let true_distance = shortest_path_distances(world);
    let optimal = action_distance_from_state(world, &true_distance)?;
    let target = f64::from(horizon + 1);
    let n = world.num_states();
    let witness = (0..n).flat_map(|s| (0..n).map(move |g| (s, g))).find(|&(s, g)| {
        true_distance.get(s, g) == target
            && greedy_action_set(&optimal, s, g).is_ok_and(|set| set != ActionSet::ALL)
    });
    if witness.is_none() {
        return Err(Error::NoAdversarialPair(horizon));
    }
    Ok(Policy::Adversarial(AdversarialPolicy {
        horizon,
        optimal: Arc::new(optimal),
        true_distance: Arc::new(true_distance),
        tie_break_seed: 0,
    }))
}

/// A goal-conditioned policy `pi(a | s, g)`.
///
/// Distance-driven policies fall back to the uniform distribution at pairs
/// where every action has infinite distance.
#[derive(Clone, Debug)]
pub enum Policy {
    /// Deterministic argmin of `d(s, a, g)` with [`tie_break`].
    Greedy {
        distance: Arc<ActionDistanceTable>,
        tie_break_seed: u64,
    },
    Boltzmann {
        distance: Arc<ActionDistanceTable>,
        coeff: f64,
    },
    Random,
    Constant(Action),
    Adversarial(AdversarialPolicy),
    /// Re-plans a waypoint at every step and conditions `base` on it.
    PlanComposed { base: Box<Policy>, planner: Planner },
}

impl Policy {
    pub fn greedy(distance: Arc<ActionDistanceTable>, tie_break_seed: u64) -> Policy {
        Policy::Greedy {
            distance,
            tie_break_seed,
        }
    }

    pub fn with_planner(self, planner: Planner) -> Policy {
        Policy::PlanComposed {
            base: Box::new(self),
            planner,
        }
    }

    /// Short label for reports.
    pub fn name(&self) -> String {
        match self {
            Policy::Greedy { .. } => "greedy".into(),
            Policy::Boltzmann { coeff, .. } => format!("boltzmann({coeff})"),
            Policy::Random => "random".into(),
            Policy::Constant(a) => format!("constant({a})"),
            Policy::Adversarial(p) => format!("adversarial(H={})", p.horizon),
            Policy::PlanComposed { base, .. } => format!("{}+planner", base.name()),
        }
    }

    /// The full action distribution at `(s, g)`.
    pub fn action_probs(&self, s: StateId, g: StateId) -> Result<[f64; Action::COUNT]> {
        match self {
            Policy::Greedy {
                distance,
                tie_break_seed,
            } => match greedy_action_set(distance, s, g) {
                Ok(set) => {
                    let mut probs = [0.0; Action::COUNT];
                    probs[tie_break(set, *tie_break_seed, s).index()] = 1.0;
                    Ok(probs)
                }
                Err(Error::UnreachableGoal { .. }) => Ok(uniform()),
                Err(e) => Err(e),
            },
            Policy::Boltzmann { distance, coeff } => {
                match boltzmann_policy_probs(distance, s, g, *coeff) {
                    Err(Error::UnreachableGoal { .. }) => Ok(uniform()),
                    other => other,
                }
            }
            Policy::Random => Ok(uniform()),
            Policy::Constant(a) => {
                let mut probs = [0.0; Action::COUNT];
                probs[a.index()] = 1.0;
                Ok(probs)
            }
            Policy::Adversarial(p) => match p.choose(s, g) {
                Ok(a) => {
                    let mut probs = [0.0; Action::COUNT];
                    probs[a.index()] = 1.0;
                    Ok(probs)
                }
                Err(Error::UnreachableGoal { .. }) => Ok(uniform()),
                Err(e) => Err(e),
            },
            Policy::PlanComposed { base, planner } => {
                let candidates = match planner.candidates(s, g) {
                    Ok(c) => c,
                    Err(Error::UnreachableGoal { .. }) => vec![g],
                    Err(e) => return Err(e),
                };
                let weight = 1.0 / candidates.len() as f64;
                let mut probs = [0.0; Action::COUNT];
                for w in candidates {
                    for (p, q) in probs.iter_mut().zip(base.action_probs(s, w)?) {
                        *p += weight * q;
                    }
                }
                Ok(probs)
            }
        }
    }

    /// Chooses an action. Action noise comes from `action_rng`, waypoint
    /// sampling from `plan_rng`, so composing a planner never perturbs the
    /// base policy's own random stream.
    pub fn act<R: Rng>(
        &self,
        s: StateId,
        g: StateId,
        action_rng: &mut R,
        plan_rng: &mut R,
    ) -> Result<Action> {
        match self {
            Policy::Greedy { .. } | Policy::Constant(_) | Policy::Adversarial(_) => {
                let probs = self.action_probs(s, g)?;
                Ok(sample_from(&probs, action_rng))
            }
            Policy::Boltzmann { .. } => Ok(sample_from(&self.action_probs(s, g)?, action_rng)),
            Policy::Random => Ok(Action::ALL[action_rng.random_range(0..Action::COUNT)]),
            Policy::PlanComposed { base, planner } => {
                let w = match planner.plan(s, g, plan_rng) {
                    Ok(w) => w,
                    Err(Error::UnreachableGoal { .. }) => g,
                    Err(e) => return Err(e),
                };
                base.act(s, w, action_rng, plan_rng)
            }
        }
    }
}

/// Result of one episode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RolloutOutcome {
    pub success: bool,
    /// Steps taken; equals the first hitting time of the goal on success.
    pub steps: usize,
    /// States visited, starting state included.
    pub visited: Vec<StateId>,
}

/// Runs `policy` from `s` toward `g` for at most `max_steps` steps.
pub fn rollout(
    world: &GridWorld,
    policy: &Policy,
    s: StateId,
    g: StateId,
    max_steps: usize,
    seed: u64,
) -> Result<RolloutOutcome> {
    world.check_state(s)?;
    world.check_state(g)?;
    if max_steps == 0 {
        return Err(Error::InvalidArgument("max_steps must be at least 1".into()));
    }
    let mut action_rng = rng::stream(seed, 0);
    let mut plan_rng = rng::stream(seed, 1);
    let mut visited = vec![s];
    let mut state = s;
    if state == g {
        return Ok(RolloutOutcome {
            success: true,
            steps: 0,
            visited,
        });
    }
    for t in 1..=max_steps {
        let a = policy.act(state, g, &mut action_rng, &mut plan_rng)?;
        state = world.step(state, a);
        visited.push(state);
        if state == g {
            return Ok(RolloutOutcome {
                success: true,
                steps: t,
                visited,
            });
        }
    }
    Ok(RolloutOutcome {
        success: false,
        steps: max_steps,
        visited,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::load_maze;

    fn exact(world: &GridWorld) -> (Arc<DistanceTable>, Arc<ActionDistanceTable>) {
        let d = shortest_path_distances(world);
        let da = action_distance_from_state(world, &d).unwrap();
        (Arc::new(d), Arc::new(da))
    }

    #[test]
    fn greedy_sets() {
        let w = load_maze("...\n...\n...").unwrap();
        let (_, da) = exact(&w);
        let centre = w.state_at(1, 1).unwrap();
        assert_eq!(
            greedy_action_set(&da, centre, centre).unwrap(),
            ActionSet::from_iter([Action::NoOp])
        );
        let east = w.state_at(1, 2).unwrap();
        assert_eq!(
            greedy_action_set(&da, centre, east).unwrap(),
            ActionSet::from_iter([Action::East])
        );
        let corner = w.state_at(0, 0).unwrap();
        let far = w.state_at(2, 2).unwrap();
        assert_eq!(
            greedy_action_set(&da, corner, far).unwrap(),
            ActionSet::from_iter([Action::South, Action::East])
        );
    }

    #[test]
    fn greedy_rejects_unreachable_goal() {
        let w = load_maze(".#.").unwrap();
        let (_, da) = exact(&w);
        assert!(matches!(
            greedy_action_set(&da, 0, 1),
            Err(Error::UnreachableGoal { state: 0, goal: 1 })
        ));
        assert!(boltzmann_policy_probs(&da, 0, 1, 0.1).is_err());
    }

    #[test]
    fn boltzmann_basics() {
        let uniform = ActionDistanceTable::from_fn(2, |_, _, _| 3.0);
        let p = boltzmann_policy_probs(&uniform, 0, 1, 0.1).unwrap();
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-15));

        let peaked = ActionDistanceTable::from_fn(2, |_, a, _| if a == Action::East { 1.0 } else { 2.0 });
        let p = boltzmann_policy_probs(&peaked, 0, 1, 50.0).unwrap();
        assert!(p[Action::East.index()] > 0.99);
        assert!(boltzmann_policy_probs(&peaked, 0, 1, 0.0).is_err());
    }

    #[test]
    fn boltzmann_two_finite_actions_match_softmax() {
        let d = ActionDistanceTable::from_fn(1, |_, a, _| match a {
            Action::North => 1.0,
            Action::South => 2.0,
            _ => f64::INFINITY,
        });
        let p = boltzmann_policy_probs(&d, 0, 0, 0.1).unwrap();
        let (e1, e2) = ((-0.1f64).exp(), (-0.2f64).exp());
        assert!((p[0] - e1 / (e1 + e2)).abs() < 1e-15);
        assert!((p[1] - e2 / (e1 + e2)).abs() < 1e-15);
        assert_eq!(&p[2..], &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn planners_on_a_corridor() {
        let w = load_maze(&".".repeat(11)).unwrap();
        let (d, _) = exact(&w);
        let midpoint = Planner::new(PlannerKind::Midpoint { slack: 1.0 }, d.clone(), 0);
        assert_eq!(midpoint.candidates(0, 10).unwrap(), vec![4, 5, 6]);
        assert_eq!(midpoint.candidates(3, 3).unwrap(), vec![3]);

        let optimal = Planner::new(PlannerKind::OptimalWaypoint, d.clone(), 0);
        assert_eq!(optimal.candidates(0, 3).unwrap(), vec![1, 2, 3]);
        assert_eq!(optimal.candidates(7, 7).unwrap(), vec![7]);

        let identity = Planner::new(PlannerKind::Identity, d, 0);
        assert_eq!(identity.candidates(0, 9).unwrap(), vec![9]);
    }

    #[test]
    fn planner_rejects_unreachable() {
        let w = load_maze(".#.").unwrap();
        let (d, _) = exact(&w);
        let p = Planner::new(PlannerKind::OptimalWaypoint, d, 0);
        assert!(matches!(p.candidates(0, 1), Err(Error::UnreachableGoal { .. })));
    }

    #[test]
    fn midpoint_falls_back_when_empty() {
        let w = load_maze("...").unwrap();
        let (d, _) = exact(&w);
        let p = Planner::new(PlannerKind::Midpoint { slack: 0.1 }, d, 0);
        // d = 2: w = 1 is an exact midpoint.
        assert_eq!(p.candidates(0, 2).unwrap(), vec![1]);
        // d = 1: no w has both legs near 0.5, so the optimal set {1} is used.
        assert_eq!(p.candidates(0, 1).unwrap(), vec![1]);
    }

    #[test]
    fn rollouts() {
        let w = load_maze("....\n.##.\n....").unwrap();
        let (d, da) = exact(&w);
        let greedy = Policy::greedy(da, 3);
        let out = rollout(&w, &greedy, 0, 0, 5, 0).unwrap();
        assert_eq!((out.success, out.steps, out.visited.len()), (true, 0, 1));
        for s in 0..w.num_states() {
            for g in 0..w.num_states() {
                let out = rollout(&w, &greedy, s, g, 100, 9).unwrap();
                assert!(out.success);
                assert_eq!(out.steps as f64, d.get(s, g));
            }
        }
        assert!(rollout(&w, &greedy, 0, 1, 0, 0).is_err());
        assert!(rollout(&w, &greedy, 0, 99, 3, 0).is_err());
    }

    #[test]
    fn policies_are_distributions() {
        let w = load_maze("...\n.#.\n...").unwrap();
        let (d, da) = exact(&w);
        let planner = Planner::new(PlannerKind::Midpoint { slack: 1.0 }, d, 4);
        let policies = [
            Policy::greedy(da.clone(), 1),
            Policy::Boltzmann { distance: da.clone(), coeff: 0.1 },
            Policy::Random,
            Policy::Constant(Action::NoOp),
            adversarial_policy(&w, 1).unwrap(),
            Policy::greedy(da, 1).with_planner(planner),
        ];
        for p in &policies {
            for s in 0..w.num_states() {
                for g in 0..w.num_states() {
                    let probs = p.action_probs(s, g).unwrap();
                    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{}", p.name());
                    assert!(probs.iter().all(|&x| x >= 0.0));
                }
            }
        }
    }

    #[test]
    fn adversarial_needs_a_long_enough_maze() {
        let w = load_maze("...").unwrap();
        assert!(adversarial_policy(&w, 1).is_ok());
        assert!(matches!(adversarial_policy(&w, 2), Err(Error::NoAdversarialPair(2))));
    }
}
