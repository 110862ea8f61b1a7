//! Deterministic gridworld: maze parsing, dynamics, exact shortest paths and
//! trajectory collection.

use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::table::DistanceTable;

/// Dense index of a free cell.
pub type StateId = usize;

/// The five actions. The discriminant is the stable integer encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Action {
    North = 0,
    South = 1,
    East = 2,
    West = 3,
    NoOp = 4,
}

impl Action {
    pub const COUNT: usize = 5;
    pub const ALL: [Action; Action::COUNT] = [
        Action::North,
        Action::South,
        Action::East,
        Action::West,
        Action::NoOp,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    /// (row, col) displacement.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::North => (-1, 0),
            Action::South => (1, 0),
            Action::East => (0, 1),
            Action::West => (0, -1),
            Action::NoOp => (0, 0),
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Action::North => "north",
            Action::South => "south",
            Action::East => "east",
            Action::West => "west",
            Action::NoOp => "noop",
        };
        f.write_str(name)
    }
}

/// A rectangular maze with deterministic 5-action dynamics.
///
/// Free cells are numbered in row-major order. Moves into walls or off the
/// grid leave the agent where it is.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridWorld {
    width: usize,
    height: usize,
    cell_state: Vec<Option<StateId>>,
    coords: Vec<(usize, usize)>,
    next: Vec<[StateId; Action::COUNT]>,
}

impl GridWorld {
    fn from_cells(width: usize, height: usize, free: Vec<bool>) -> Result<Self> {
        let mut cell_state = vec![None; width * height];
        let mut coords = Vec::new();
        for (idx, &is_free) in free.iter().enumerate() {
            if is_free {
                cell_state[idx] = Some(coords.len());
                coords.push((idx / width, idx % width));
            }
        }
        if coords.is_empty() {
            return Err(Error::NoFreeCells);
        }
        let next = coords
            .iter()
            .enumerate()
            .map(|(s, &(r, c))| {
                Action::ALL.map(|a| {
                    let (dr, dc) = a.delta();
                    let (nr, nc) = (r as isize + dr, c as isize + dc);
                    if nr < 0 || nc < 0 || nr >= height as isize || nc >= width as isize {
                        return s;
                    }
                    cell_state[nr as usize * width + nc as usize].unwrap_or(s)
                })
            })
            .collect();
        Ok(GridWorld {
            width,
            height,
            cell_state,
            coords,
            next,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_states(&self) -> usize {
        self.coords.len()
    }

    pub fn num_walls(&self) -> usize {
        self.width * self.height - self.coords.len()
    }

    pub fn is_wall(&self, row: usize, col: usize) -> bool {
        row >= self.height || col >= self.width || self.cell_state[row * self.width + col].is_none()
    }

    pub fn state_at(&self, row: usize, col: usize) -> Option<StateId> {
        if row >= self.height || col >= self.width {
            return None;
        }
        self.cell_state[row * self.width + col]
    }

    /// (row, col) of a state. Panics on an invalid id.
    pub fn coords(&self, s: StateId) -> (usize, usize) {
        self.coords[s]
    }

    pub fn check_state(&self, s: StateId) -> Result<()> {
        if s < self.num_states() {
            Ok(())
        } else {
            Err(Error::InvalidState(s))
        }
    }

    /// Deterministic transition. Panics if `s` is not a valid state id.
    #[inline]
    pub fn step(&self, s: StateId, a: Action) -> StateId {
        self.next[s][a.index()]
    }

    /// Successor of every action at `s`, indexed by [`Action::index`].
    #[inline]
    pub fn successors(&self, s: StateId) -> &[StateId; Action::COUNT] {
        &self.next[s]
    }

    /// Inverse of [`load_maze`]: one line per row, `#` for walls.
    pub fn render(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(if self.is_wall(r, c) { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }

    /// Connected components of the (directed, here symmetric) move graph,
    /// as a component label per state.
    pub fn component_labels(&self) -> Vec<usize> {
        let n = self.num_states();
        let mut label = vec![usize::MAX; n];
        let mut next_label = 0;
        let mut queue = VecDeque::new();
        for root in 0..n {
            if label[root] != usize::MAX {
                continue;
            }
            label[root] = next_label;
            queue.push_back(root);
            while let Some(s) = queue.pop_front() {
                for &t in self.successors(s) {
                    if label[t] == usize::MAX {
                        label[t] = next_label;
                        queue.push_back(t);
                    }
                }
            }
            next_label += 1;
        }
        label
    }

    pub fn is_connected(&self) -> bool {
        self.component_labels().iter().all(|&l| l == 0)
    }

    /// BFS distances from `source` to every state (`None` when unreachable).
    pub fn bfs_from(&self, source: StateId) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.num_states()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(s) = queue.pop_front() {
            let ds = dist[s].unwrap();
            for &t in self.successors(s) {
                if dist[t].is_none() {
                    dist[t] = Some(ds + 1);
                    queue.push_back(t);
                }
            }
        }
        dist
    }
}

impl FromStr for GridWorld {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        load_maze(text)
    }
}

/// Parses an ASCII maze of `#` (wall) and `.` (free) characters.
///
/// Trailing whitespace on each line and trailing blank lines are ignored.
///
/// ```
/// use horizon_core::env::{load_maze, Action};
///
/// let world = load_maze(".#\n..").unwrap();
/// assert_eq!(world.num_states(), 3);
/// let top_left = world.state_at(0, 0).unwrap();
/// assert_eq!(world.step(top_left, Action::East), top_left);
/// ```
pub fn load_maze(text: &str) -> Result<GridWorld> {
    let mut lines: Vec<&str> = text.lines().map(str::trim_end).collect();
    while lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    let Some(first) = lines.first() else {
        return Err(Error::NoFreeCells);
    };
    let width = first.chars().count();
    let mut free = Vec::with_capacity(width * lines.len());
    for (row, line) in lines.iter().enumerate() {
        let found = line.chars().count();
        if found != width {
            return Err(Error::RaggedMaze {
                line: row + 1,
                expected: width,
                found,
            });
        }
        for (col, ch) in line.chars().enumerate() {
            match ch {
                '#' => free.push(false),
                '.' => free.push(true),
                _ => return Err(Error::IllegalMazeChar { ch, row, col }),
            }
        }
    }
    GridWorld::from_cells(width, lines.len(), free)
}

pub fn load_maze_file(path: impl AsRef<Path>) -> Result<GridWorld> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_maze(&text)
}

/// Exact step counts between all pairs via one BFS per source.
pub fn shortest_path_distances(world: &GridWorld) -> DistanceTable {
    let n = world.num_states();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|s| {
            world
                .bfs_from(s)
                .into_iter()
                .map(|d| d.map_or(f64::INFINITY, f64::from))
                .collect()
        })
        .collect();
    DistanceTable::from_rows(rows).expect("BFS rows form a valid table")
}

/// One recorded rollout: `states.len() == actions.len() + 1`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<StateId>,
    pub actions: Vec<Action>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// True when every recorded transition agrees with the dynamics.
    pub fn replays(&self, world: &GridWorld) -> bool {
        self.states.len() == self.actions.len() + 1
            && self
                .actions
                .iter()
                .enumerate()
                .all(|(t, &a)| world.step(self.states[t], a) == self.states[t + 1])
    }
}

/// Behaviour used to collect data. Goal-free by construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Behavior {
    /// Uniform over all five actions.
    Uniform,
    Constant(Action),
}

impl Behavior {
    fn sample<R: Rng>(self, rng: &mut R) -> Action {
        match self {
            Behavior::Uniform => Action::ALL[rng.random_range(0..Action::COUNT)],
            Behavior::Constant(a) => a,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub num_trajectories: usize,
    pub trajectory_length: usize,
    pub seed: u64,
    /// Fraction of ordered pairs `s != g` where `g` follows `s` in some trajectory.
    pub coverage_fraction: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub meta: DatasetMeta,
}

/// Rolls out `n` trajectories of `len` steps from uniformly drawn start cells.
///
/// Trajectory `i` uses its own stream derived from `(seed, i)`, so the result
/// does not depend on how the work is scheduled.
pub fn collect_trajectories(
    world: &GridWorld,
    behavior: Behavior,
    n: usize,
    len: usize,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || len == 0 {
        return Err(Error::InvalidArgument(
            "trajectory count and length must be at least 1".into(),
        ));
    }
    let trajectories: Vec<Trajectory> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, i as u64);
            let mut s = rng.random_range(0..world.num_states());
            let mut states = Vec::with_capacity(len + 1);
            let mut actions = Vec::with_capacity(len);
            states.push(s);
            for _ in 0..len {
                let a = behavior.sample(&mut rng);
                s = world.step(s, a);
                actions.push(a);
                states.push(s);
            }
            Trajectory { states, actions }
        })
        .collect();
    let coverage_fraction = coverage_fraction(world.num_states(), &trajectories);
    Ok(Dataset {
        trajectories,
        meta: DatasetMeta {
            num_trajectories: n,
            trajectory_length: len,
            seed,
            coverage_fraction,
        },
    })
}

/// Fraction of the `n(n-1)` ordered pairs `(s, g)` with `g` visited strictly
/// after `s` in at least one trajectory.
pub fn coverage_fraction(num_states: usize, trajectories: &[Trajectory]) -> f64 {
    if num_states < 2 {
        return 0.0;
    }
    let words = num_states.div_ceil(64);
    let mut seen = vec![0u64; num_states * words];
    let mut after = vec![0u64; words];
    for traj in trajectories {
        after.iter_mut().for_each(|w| *w = 0);
        for &s in traj.states.iter().rev() {
            let row = &mut seen[s * words..(s + 1) * words];
            row.iter_mut().zip(&after).for_each(|(r, a)| *r |= a);
            after[s / 64] |= 1 << (s % 64);
        }
    }
    let covered: u64 = (0..num_states)
        .map(|s| {
            let row = &seen[s * words..(s + 1) * words];
            let diag = (row[s / 64] >> (s % 64)) & 1;
            row.iter().map(|w| w.count_ones() as u64).sum::<u64>() - diag
        })
        .sum();
    covered as f64 / (num_states * (num_states - 1)) as f64
}

#[derive(Debug, Serialize, Deserialize)]
struct TransitionRecord {
    traj_id: usize,
    t: usize,
    s: StateId,
    a: u8,
    s_next: StateId,
}

impl Dataset {
    /// Writes `<stem>.csv` (one row per transition) and `<stem>.json` (meta).
    pub fn write(&self, csv_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<()> {
        let csv_path = csv_path.as_ref();
        let mut w = csv::Writer::from_path(csv_path)?;
        for (traj_id, traj) in self.trajectories.iter().enumerate() {
            for (t, &a) in traj.actions.iter().enumerate() {
                w.serialize(TransitionRecord {
                    traj_id,
                    t,
                    s: traj.states[t],
                    a: a as u8,
                    s_next: traj.states[t + 1],
                })?;
            }
        }
        w.flush().map_err(|e| Error::io(csv_path, e))?;
        let meta_path = meta_path.as_ref();
        let json = serde_json::to_string_pretty(&self.meta)?;
        fs::write(meta_path, json + "\n").map_err(|e| Error::io(meta_path, e))
    }

    pub fn read(csv_path: impl AsRef<Path>, meta_path: impl AsRef<Path>) -> Result<Dataset> {
        let meta_path = meta_path.as_ref();
        let meta_text = fs::read_to_string(meta_path).map_err(|e| Error::io(meta_path, e))?;
        let meta: DatasetMeta = serde_json::from_str(&meta_text)?;
        let mut trajectories: Vec<Trajectory> = Vec::new();
        for record in csv::Reader::from_path(csv_path.as_ref())?.deserialize() {
            let r: TransitionRecord = record?;
            let a = Action::from_index(r.a as usize)
                .ok_or_else(|| Error::parse("dataset", format!("bad action code {}", r.a)))?;
            if r.traj_id == trajectories.len() {
                trajectories.push(Trajectory {
                    states: vec![r.s],
                    actions: Vec::new(),
                });
            }
            if r.traj_id + 1 != trajectories.len() {
                return Err(Error::parse("dataset", "trajectory ids out of order"));
            }
            let traj = trajectories.last_mut().expect("pushed above");
            if r.t != traj.actions.len() || *traj.states.last().unwrap() != r.s {
                return Err(Error::parse(
                    "dataset",
                    format!("broken transition chain in trajectory {}", r.traj_id),
                ));
            }
            traj.actions.push(a);
            traj.states.push(r.s_next);
        }
        Ok(Dataset { trajectories, meta })
    }
}

/// Mazes shipped with the crate.
pub mod mazes {
    /// A 20x20 grid of nine rooms joined by one-cell doorways.
    pub const ROOMS: &str = include_str!("../assets/rooms.txt");
    /// A long serpentine corridor.
    pub const S_MAZE: &str = include_str!("../assets/s_maze.txt");

    pub fn by_name(name: &str) -> Option<&'static str> {
        match name {
            "rooms" => Some(ROOMS),
            "s_maze" => Some(S_MAZE),
            _ => None,
        }
    }

    pub const NAMES: [&str; 2] = ["rooms", "s_maze"];
}
