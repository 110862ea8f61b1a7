//! Temporal distances estimated from data, and exact successor distances and
//! occupancies computed from known dynamics.

use nalgebra::DMatrix;

use crate::env::{Action, GridWorld, StateId, Trajectory};
use crate::error::{Error, Result};
use crate::table::{ActionDistanceTable, DistanceTable};

/// Mean first-hit time between every ordered pair of states.
///
/// Every occurrence of `s` at index `i` contributes `j - i`, where `j` is the
/// first later index holding `g`, provided such a `j` exists in the same
/// trajectory. Pairs never observed in that order stay at `+inf`; the
/// diagonal is zero.
pub fn empirical_hitting_time(num_states: usize, trajectories: &[Trajectory]) -> Result<DistanceTable> {
    if trajectories.iter().all(|t| t.states.len() < 2) {
        return Err(Error::Empty);
    }
    let n = num_states;
    let mut sums = vec![0u64; n * n];
    let mut counts = vec![0u32; n * n];
    let mut next_seen = vec![usize::MAX; n];
    let mut distinct: Vec<StateId> = Vec::new();
    for traj in trajectories {
        if let Some(&bad) = traj.states.iter().find(|&&s| s >= n) {
            return Err(Error::InvalidState(bad));
        }
        distinct.clear();
        for (i, &s) in traj.states.iter().enumerate().rev() {
            let row = s * n;
            for &g in &distinct {
                if g != s {
                    sums[row + g] += (next_seen[g] - i) as u64;
                    counts[row + g] += 1;
                }
            }
            if next_seen[s] == usize::MAX {
                distinct.push(s);
            }
            next_seen[s] = i;
        }
        for &g in &distinct {
            next_seen[g] = usize::MAX;
        }
    }
    let values = (0..n * n)
        .map(|idx| {
            if idx / n == idx % n {
                0.0
            } else if counts[idx] == 0 {
                f64::INFINITY
            } else {
                sums[idx] as f64 / counts[idx] as f64
            }
        })
        .collect();
    Ok(DistanceTable::from_raw(n, values))
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidGamma(gamma))
    }
}

/// Exact successor distances for a deterministic world in which every state
/// can stay put.
///
/// Under deterministic dynamics the occupancy of `g` from `s` is the
/// occupancy from `g` discounted by the first hitting time, so the optimal
/// log-ratio is `k * ln(1/gamma)` with `k` the shortest-path step count. The
/// action-conditioned variant charges the forced first step:
/// `(1 + k(step(s, a), g)) * ln(1/gamma)` for `s != g`. At `s == g` the
/// unconstrained minimum over policies can be negative (a policy that walks
/// away from the goal shrinks the numerator), so the table keeps zero there.
pub fn successor_distance_exact(
    world: &GridWorld,
    gamma: f64,
) -> Result<(DistanceTable, ActionDistanceTable)> {
    check_gamma(gamma)?;
    let steps = crate::env::shortest_path_distances(world);
    let unit = -gamma.ln();
    let n = world.num_states();
    let state = DistanceTable::from_raw(n, steps.values().iter().map(|&k| k * unit).collect());
    let action = ActionDistanceTable::from_fn(n, |s, a, g| {
        if s == g {
            0.0
        } else {
            (1.0 + steps.get(world.step(s, a), g)) * unit
        }
    });
    Ok((state, action))
}

/// One-step grounding of a state distance into an action distance:
/// `d(s, a, g) = 1 + d(step(s, a), g)`, except `d(g, NoOp, g) = 0`.
pub fn action_distance_from_state(world: &GridWorld, d: &DistanceTable) -> Result<ActionDistanceTable> {
    if d.len() != world.num_states() {
        return Err(Error::SizeMismatch(d.len(), world.num_states()));
    }
    for s in 0..d.len() {
        if d.get(s, s) != 0.0 {
            return Err(Error::NonzeroDiagonal {
                state: s,
                value: d.get(s, s),
            });
        }
    }
    Ok(ActionDistanceTable::from_fn(d.len(), |s, a, g| {
        if s == g && a == Action::NoOp {
            0.0
        } else {
            1.0 + d.get(world.step(s, a), g)
        }
    }))
}

/// `sum_t gamma^t P(s_t = g | s_0 = s, a_0 = a)` under a fixed goal-free policy.
#[derive(Clone, Debug)]
pub struct DiscountedOccupancy {
    gamma: f64,
    n: usize,
    /// Row-major `(I - gamma P_pi)^-1`: occupancy from a state with the
    /// first action also drawn from the policy.
    state: Vec<f64>,
    /// `n x |A| x n`.
    values: Vec<f64>,
}

impl DiscountedOccupancy {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, s: StateId, a: Action, g: StateId) -> f64 {
        self.values[(s * Action::COUNT + a.index()) * self.n + g]
    }

    #[inline]
    pub fn state(&self, s: StateId, g: StateId) -> f64 {
        self.state[s * self.n + g]
    }
}

/// Exact policy evaluation of the discounted occupancy by solving
/// `(I - gamma P_pi) M = I`.
///
/// `policy(s)` gives the action probabilities at `s`.
pub fn discounted_occupancy(
    world: &GridWorld,
    gamma: f64,
    policy: impl Fn(StateId) -> [f64; Action::COUNT],
) -> Result<DiscountedOccupancy> {
    check_gamma(gamma)?;
    let n = world.num_states();
    let mut system = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        let probs = policy(s);
        let total: f64 = probs.iter().sum();
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "action probabilities at state {s} do not form a distribution"
            )));
        }
        for a in Action::ALL {
            system[(s, world.step(s, a))] -= gamma * probs[a.index()];
        }
    }
    let inverse = system
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::InvalidArgument("occupancy system is singular".into()))?;
    let mut state = vec![0.0; n * n];
    for s in 0..n {
        for g in 0..n {
            state[s * n + g] = inverse[(s, g)].max(0.0);
        }
    }
    let mut values = Vec::with_capacity(n * Action::COUNT * n);
    for s in 0..n {
        for a in Action::ALL {
            let next = world.step(s, a);
            for g in 0..n {
                let here = if s == g { 1.0 } else { 0.0 };
                values.push(here + gamma * state[next * n + g]);
            }
        }
    }
    Ok(DiscountedOccupancy {
        gamma,
        n,
        state,
        values,
    })
}

/// Uniform action probabilities, the data-collection policy.
pub fn uniform_policy(_: StateId) -> [f64; Action::COUNT] {
    [1.0 / Action::COUNT as f64; Action::COUNT]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{load_maze, shortest_path_distances};

    fn traj(states: &[StateId]) -> Trajectory {
        Trajectory {
            states: states.to_vec(),
            actions: vec![Action::NoOp; states.len() - 1],
        }
    }

    #[test]
    fn hitting_time_on_a_line() {
        let d = empirical_hitting_time(3, &[traj(&[0, 1, 2])]).unwrap();
        assert_eq!(d.get(0, 2), 2.0);
        assert_eq!(d.get(0, 1), 1.0);
        assert_eq!(d.get(2, 0), f64::INFINITY);
        assert_eq!(d.get(1, 1), 0.0);
    }

    #[test]
    fn hitting_time_counts_every_occurrence() {
        let d = empirical_hitting_time(2, &[traj(&[0, 1, 0, 1])]).unwrap();
        assert_eq!(d.get(0, 1), 1.0);
        assert_eq!(d.get(1, 0), 1.0);

        // Occurrences of 0 at t = 0, 1 hit 1 at t = 3: mean(3, 2).
        let d = empirical_hitting_time(2, &[traj(&[0, 0, 1])]).unwrap();
        assert_eq!(d.get(0, 1), 1.5);
    }

    #[test]
    fn hitting_time_rejects_empty_data() {
        assert!(matches!(empirical_hitting_time(3, &[]), Err(Error::Empty)));
        assert!(matches!(empirical_hitting_time(3, &[traj(&[1])]), Err(Error::Empty)));
    }

    #[test]
    fn successor_distance_closed_form() {
        let w = load_maze(".....").unwrap();
        let (d, da) = successor_distance_exact(&w, 0.9).unwrap();
        assert_eq!(d.get(0, 0), 0.0);
        assert!((d.get(0, 3) - 3.0 * (1.0f64 / 0.9).ln()).abs() < 1e-12);
        assert!(d.get(0, 2) < d.get(0, 3));
        assert!((da.get(0, Action::East, 3) - 3.0 * (1.0f64 / 0.9).ln()).abs() < 1e-12);
        assert!((da.get(0, Action::West, 3) - 4.0 * (1.0f64 / 0.9).ln()).abs() < 1e-12);
        assert!(successor_distance_exact(&w, 1.0).is_err());
        assert!(successor_distance_exact(&w, 0.0).is_err());
    }

    #[test]
    fn grounding_uses_unit_steps() {
        let w = load_maze("...\n.#.").unwrap();
        let d = shortest_path_distances(&w);
        let da = action_distance_from_state(&w, &d).unwrap();
        let s = w.state_at(0, 0).unwrap();
        let g = w.state_at(0, 1).unwrap();
        assert_eq!(da.get(s, Action::NoOp, s), 0.0);
        assert_eq!(da.get(s, Action::East, g), 1.0);
        assert_eq!(da.get(s, Action::North, s), 1.0);
        assert_eq!(da.get(s, Action::West, g), 2.0);
    }

    #[test]
    fn occupancy_rows_sum_to_horizon() {
        let w = load_maze("..#\n...").unwrap();
        let occ = discounted_occupancy(&w, 0.8, uniform_policy).unwrap();
        let bound = 1.0 / (1.0 - 0.8);
        for s in 0..w.num_states() {
            for a in Action::ALL {
                let total: f64 = (0..w.num_states()).map(|g| occ.get(s, a, g)).sum();
                assert!((total - bound).abs() < 1e-9);
                for g in 0..w.num_states() {
                    assert!(occ.get(s, a, g) >= 0.0 && occ.get(s, a, g) <= bound + 1e-12);
                }
            }
        }
    }
}
