//! Library results checked against independent brute-force oracles.

use std::collections::VecDeque;
use std::sync::Arc;

use horizon_core::control::{greedy_action_set, rollout, ActionSet, Planner, PlannerKind, Policy};
use horizon_core::env::{collect_trajectories, load_maze, mazes, shortest_path_distances, Action, Behavior, GridWorld};
use horizon_core::estimation::{action_distance_from_state, empirical_hitting_time, successor_distance_exact};
use horizon_core::quasimetric::{audit_quasimetric, path_relaxation_closure, EPS_TRIANGLE};
use horizon_core::rng;
use horizon_core::table::DistanceTable;
use rand::Rng;

const INF: f64 = f64::INFINITY;

/// BFS over the raw character grid, independent of the library's state graph.
fn bfs_grid(text: &str, from: (usize, usize)) -> Vec<Vec<Option<u32>>> {
    let grid: Vec<Vec<bool>> = text.lines().map(|l| l.chars().map(|c| c == '.').collect()).collect();
    let (h, w) = (grid.len(), grid[0].len());
    let mut dist = vec![vec![None; w]; h];
    dist[from.0][from.1] = Some(0);
    let mut queue = VecDeque::from([from]);
    while let Some((r, c)) = queue.pop_front() {
        let here = dist[r][c].unwrap();
        let moves = [(-1isize, 0isize), (1, 0), (0, 1), (0, -1)];
        for (dr, dc) in moves {
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                continue;
            }
            let (nr, nc) = (nr as usize, nc as usize);
            if grid[nr][nc] && dist[nr][nc].is_none() {
                dist[nr][nc] = Some(here + 1);
                queue.push_back((nr, nc));
            }
        }
    }
    dist
}

#[test]
fn shortest_paths_match_grid_bfs_on_a_detour() {
    let text = "\
.....
.###.
.#.#.
.#...
.....";
    let world = load_maze(text).unwrap();
    let d = shortest_path_distances(&world);
    for s in 0..world.num_states() {
        let oracle = bfs_grid(text, world.coords(s));
        for g in 0..world.num_states() {
            let (r, c) = world.coords(g);
            assert_eq!(d.get(s, g), oracle[r][c].map_or(INF, f64::from));
        }
    }
    // The centre cell sits inside a U: reaching it from the top costs a detour.
    let top = world.state_at(0, 2).unwrap();
    let centre = world.state_at(2, 2).unwrap();
    assert_eq!(d.get(top, centre), 8.0);
    assert!(d.get(top, centre) > 2.0);
}

#[test]
fn bundled_mazes_match_grid_bfs() {
    for name in mazes::NAMES {
        let text = mazes::by_name(name).unwrap();
        let world = load_maze(text).unwrap();
        let d = shortest_path_distances(&world);
        for s in (0..world.num_states()).step_by(7) {
            let oracle = bfs_grid(text, world.coords(s));
            for g in 0..world.num_states() {
                let (r, c) = world.coords(g);
                assert_eq!(d.get(s, g), oracle[r][c].map_or(INF, f64::from), "{name}");
            }
        }
        assert!(audit_quasimetric(&d, 0.0).is_empty());
    }
}

/// Discounted visit count of `g` along the deterministic path from `s` whose
/// first action is `first` and whose later actions follow `policy`. The path
/// is eventually periodic, so the series is summed in closed form.
fn occupancy(world: &GridWorld, policy: &[Action], first: Option<Action>, s: usize, g: usize, gamma: f64) -> f64 {
    let mut path = vec![s];
    let mut state = match first {
        Some(a) => world.step(s, a),
        None => world.step(s, policy[s]),
    };
    // Positions in `path` after the first entry are determined by `policy`.
    let mut seen = vec![None; world.num_states()];
    loop {
        if let Some(start) = seen[state] {
            let prefix: f64 = path[..start]
                .iter()
                .enumerate()
                .filter(|&(_, &x)| x == g)
                .map(|(t, _)| gamma.powi(t as i32))
                .sum();
            let period = path.len() - start;
            let cycle: f64 = path[start..]
                .iter()
                .enumerate()
                .filter(|&(_, &x)| x == g)
                .map(|(t, _)| gamma.powi((start + t) as i32))
                .sum();
            return prefix + cycle / (1.0 - gamma.powi(period as i32));
        }
        seen[state] = Some(path.len());
        path.push(state);
        state = world.step(state, policy[state]);
    }
}

fn all_policies(n: usize) -> Vec<Vec<Action>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|p: Vec<Action>| {
                Action::ALL.into_iter().map(move |a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    out
}

#[test]
fn successor_distance_matches_policy_enumeration_on_chains() {
    for len in 2..=6 {
        let world = load_maze(&".".repeat(len)).unwrap();
        let policies = all_policies(len);
        for gamma in [0.5, 0.9, 0.99] {
            let (state, action) = successor_distance_exact(&world, gamma).unwrap();
            for s in 0..len {
                for g in 0..len {
                    let brute = policies
                        .iter()
                        .filter_map(|pi| {
                            let den = occupancy(&world, pi, None, s, g, gamma);
                            (den > 0.0).then(|| (occupancy(&world, pi, None, g, g, gamma) / den).ln())
                        })
                        .fold(INF, f64::min);
                    let k = s.abs_diff(g) as f64;
                    assert!((brute - k * (1.0 / gamma).ln()).abs() < 1e-9, "len {len} gamma {gamma}");
                    assert!((state.get(s, g) - brute).abs() < 1e-9);
                    for a in Action::ALL {
                        let brute_a = policies
                            .iter()
                            .filter_map(|pi| {
                                let den = occupancy(&world, pi, Some(a), s, g, gamma);
                                (den > 0.0).then(|| (occupancy(&world, pi, None, g, g, gamma) / den).ln())
                            })
                            .fold(INF, f64::min);
                        if s == g {
                            // The unconstrained minimum dips below zero here; the
                            // table keeps the zero self-distance instead.
                            assert!(brute_a <= 0.0);
                            assert_eq!(action.get(s, a, g), 0.0);
                        } else {
                            assert!(
                                (action.get(s, a, g) - brute_a).abs() < 1e-9,
                                "len {len} gamma {gamma} ({s},{a},{g}): {} vs {brute_a}",
                                action.get(s, a, g)
                            );
                        }
                    }
                }
            }
        }
    }
}

/// Mean first hitting time by a direct double loop over positions.
fn hitting_time_oracle(n: usize, trajectories: &[Vec<usize>]) -> Vec<f64> {
    let mut sum = vec![0u64; n * n];
    let mut count = vec![0u64; n * n];
    for states in trajectories {
        for i in 0..states.len() {
            let s = states[i];
            let mut found = vec![false; n];
            for j in i + 1..states.len() {
                let g = states[j];
                if !found[g] {
                    found[g] = true;
                    sum[s * n + g] += (j - i) as u64;
                    count[s * n + g] += 1;
                }
            }
        }
    }
    (0..n * n)
        .map(|k| {
            if k / n == k % n {
                0.0
            } else if count[k] == 0 {
                INF
            } else {
                sum[k] as f64 / count[k] as f64
            }
        })
        .collect()
}

#[test]
fn hitting_times_match_scan_oracle() {
    let world = load_maze(mazes::ROOMS).unwrap();
    let data = collect_trajectories(&world, Behavior::Uniform, 3000, 50, 11).unwrap();
    let table = empirical_hitting_time(world.num_states(), &data.trajectories).unwrap();
    let states: Vec<Vec<usize>> = data.trajectories.iter().map(|t| t.states.clone()).collect();
    assert_eq!(table.values(), hitting_time_oracle(world.num_states(), &states).as_slice());
}

#[test]
fn hitting_time_examples() {
    let d = empirical_hitting_time(3, &[traj(&[0, 1, 2])]).unwrap();
    assert_eq!((d.get(0, 2), d.get(0, 1), d.get(2, 0)), (2.0, 1.0, INF));
    let d = empirical_hitting_time(2, &[traj(&[0, 1, 0, 1])]).unwrap();
    assert_eq!((d.get(0, 1), d.get(1, 0)), (1.0, 1.0));
}

fn traj(states: &[usize]) -> horizon_core::env::Trajectory {
    horizon_core::env::Trajectory {
        states: states.to_vec(),
        actions: vec![Action::NoOp; states.len() - 1],
    }
}

#[test]
fn raw_hitting_times_violate_the_triangle_inequality() {
    let world = load_maze(mazes::ROOMS).unwrap();
    let data = collect_trajectories(&world, Behavior::Uniform, 3000, 50, 0).unwrap();
    let table = empirical_hitting_time(world.num_states(), &data.trajectories).unwrap();
    let violations = audit_quasimetric(&table, EPS_TRIANGLE);
    let v = violations[0];
    assert!(table.get(v.s, v.g) > table.get(v.s, v.w) + table.get(v.w, v.g));
    assert!(audit_quasimetric(path_relaxation_closure(&table).unwrap().table(), EPS_TRIANGLE).is_empty());
}

/// `D^(2^k)` under min-plus multiplication until paths of every length fit.
fn min_plus_power(d: &DistanceTable) -> Vec<f64> {
    let n = d.len();
    let mut cur = d.values().to_vec();
    let mut reach = 1;
    while reach < n {
        let mut next = vec![INF; n * n];
        for s in 0..n {
            for w in 0..n {
                for g in 0..n {
                    let via = cur[s * n + w] + cur[w * n + g];
                    if via < next[s * n + g] {
                        next[s * n + g] = via;
                    }
                }
            }
        }
        cur = next;
        reach *= 2;
    }
    cur
}

#[test]
fn closure_matches_min_plus_power_on_small_maze_hitting_times() {
    let world = load_maze(
        "\
..........
.####.###.
.#......#.
.#.####.#.
...#..#...
.###..###.
..........",
    )
    .unwrap();
    assert!(world.num_states() <= 100);
    let data = collect_trajectories(&world, Behavior::Uniform, 400, 30, 5).unwrap();
    let table = empirical_hitting_time(world.num_states(), &data.trajectories).unwrap();
    let closed = path_relaxation_closure(&table).unwrap();
    let oracle = min_plus_power(&table);
    for (a, b) in closed.table().values().iter().zip(&oracle) {
        assert!(a == b || (a - b).abs() <= 1e-9 * b.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn closure_matches_min_plus_power_exactly_on_integer_tables() {
    for seed in 0..20u64 {
        let mut r = rng::stream(seed, 7);
        let n = r.random_range(2..=100);
        let d = DistanceTable::from_fn(n, |s, g| {
            if s == g {
                0.0
            } else if r.random_bool(0.3) {
                f64::from(r.random_range(1..50u32))
            } else {
                INF
            }
        })
        .unwrap();
        assert_eq!(path_relaxation_closure(&d).unwrap().table().values(), min_plus_power(&d).as_slice());
    }
}

/// First moves that lie on some shortest path, read off the BFS table.
fn optimal_first_moves(world: &GridWorld, d: &DistanceTable, s: usize, g: usize) -> ActionSet {
    Action::ALL
        .into_iter()
        .filter(|&a| {
            if s == g {
                a == Action::NoOp
            } else {
                d.get(world.step(s, a), g) + 1.0 == d.get(s, g)
            }
        })
        .collect()
}

#[test]
fn greedy_sets_match_bfs_first_moves() {
    let world = load_maze(mazes::ROOMS).unwrap();
    let d = shortest_path_distances(&world);
    let actions = action_distance_from_state(&world, &d).unwrap();
    for s in 0..world.num_states() {
        for g in 0..world.num_states() {
            assert_eq!(greedy_action_set(&actions, s, g).unwrap(), optimal_first_moves(&world, &d, s, g));
        }
    }
    let open = load_maze(&["....."; 5].join("\n")).unwrap();
    let d = shortest_path_distances(&open);
    let actions = action_distance_from_state(&open, &d).unwrap();
    let set = greedy_action_set(&actions, open.state_at(2, 2).unwrap(), open.state_at(0, 4).unwrap()).unwrap();
    assert_eq!(set, [Action::North, Action::East].into_iter().collect());
}

#[test]
fn greedy_rollouts_on_true_distances_take_shortest_paths() {
    let world = load_maze(mazes::ROOMS).unwrap();
    let d = shortest_path_distances(&world);
    let policy = Policy::greedy(Arc::new(action_distance_from_state(&world, &d).unwrap()), 3);
    for s in (0..world.num_states()).step_by(5) {
        for g in (0..world.num_states()).step_by(3) {
            let out = rollout(&world, &policy, s, g, 4 * world.num_states(), 0).unwrap();
            assert!(out.success);
            assert_eq!(out.steps as f64, d.get(s, g));
        }
    }
}

#[test]
fn optimal_waypoints_lie_on_shortest_paths() {
    let world = load_maze(mazes::S_MAZE).unwrap();
    let d = Arc::new(shortest_path_distances(&world));
    let planner = Planner::new(PlannerKind::OptimalWaypoint, d.clone(), 0);
    for s in 0..world.num_states() {
        for g in 0..world.num_states() {
            let got = planner.candidates(s, g).unwrap();
            let scan: Vec<usize> = (0..world.num_states())
                .filter(|&w| if s == g { w == g } else { w != s && d.get(s, w) + d.get(w, g) == d.get(s, g) })
                .collect();
            assert_eq!(got, scan);
        }
    }
}

#[test]
fn midpoints_on_a_corridor() {
    let world = load_maze(&".".repeat(11)).unwrap();
    let d = Arc::new(shortest_path_distances(&world));
    let planner = Planner::new(PlannerKind::Midpoint { slack: 1.0 }, d, 0);
    assert_eq!(planner.candidates(0, 10).unwrap(), vec![4, 5, 6]);
    assert_eq!(planner.candidates(3, 3).unwrap(), vec![3]);
}

/// Checks that for every `(s, g)` and every optimal waypoint `w`, the action
/// the greedy policy picks toward `w` is also optimal toward `g`.
fn assert_waypoint_choices_optimal(
    actions: Arc<horizon_core::table::ActionDistanceTable>,
    planner_table: Arc<DistanceTable>,
    seed: u64,
) -> usize {
    let policy = Policy::greedy(actions.clone(), seed);
    let planner = Planner::new(PlannerKind::OptimalWaypoint, planner_table, seed);
    let n = actions.len();
    let mut checked = 0;
    for s in 0..n {
        for g in 0..n {
            let optimal = greedy_action_set(&actions, s, g).unwrap();
            for w in planner.candidates(s, g).unwrap() {
                let probs = policy.action_probs(s, w).unwrap();
                let chosen = Action::ALL.into_iter().find(|a| probs[a.index()] == 1.0).unwrap();
                assert!(optimal.contains(chosen), "({s},{g}) via {w}");
                checked += 1;
            }
        }
    }
    checked
}

#[test]
fn greedy_choices_survive_optimal_waypoints() {
    for name in mazes::NAMES {
        let world = load_maze(mazes::by_name(name).unwrap()).unwrap();
        let d = shortest_path_distances(&world);
        for c in [2.0, 3.0] {
            let restricted = horizon_core::quasimetric::short_pair_restriction(&d, c).unwrap();
            let mut q = path_relaxation_closure(&restricted).unwrap();
            assert!(q.audit(0.0).is_empty());
            let actions = Arc::new(action_distance_from_state(&world, q.table()).unwrap());
            assert!(assert_waypoint_choices_optimal(actions, Arc::new(q.into_table()), 9) > world.num_states());
        }
        let (state, action) = successor_distance_exact(&world, 0.9).unwrap();
        assert!(assert_waypoint_choices_optimal(Arc::new(action), Arc::new(state), 2) > world.num_states());
    }
}
