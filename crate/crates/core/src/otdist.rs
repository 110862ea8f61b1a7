//! Asymmetric Wasserstein distance between state distributions with a
//! quasimetric ground cost.
//!
//! The transport problem is solved exactly by successive shortest augmenting
//! paths on the bipartite support graph. Optimality is certified separately:
//! a Bellman-Ford pass over the final residual graph yields dual potentials,
//! and the reported duality gap and dual infeasibility come from those.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::StateId;
use crate::error::{Error, Result};
use crate::quasimetric::QuasimetricTable;

/// Largest support handled on either side.
pub const MAX_SUPPORT: usize = 64;

/// Masses below this are treated as exhausted.
const MASS_EPS: f64 = 1e-15;

/// A finite distribution over state ids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteDistribution {
    support: Vec<StateId>,
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(support: Vec<StateId>, probs: Vec<f64>) -> Result<Self> {
        if support.len() != probs.len() {
            return Err(Error::InvalidDistribution(format!(
                "{} states but {} probabilities",
                support.len(),
                probs.len()
            )));
        }
        if support.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        let mut seen = HashSet::with_capacity(support.len());
        if let Some(dup) = support.iter().find(|s| !seen.insert(**s)) {
            return Err(Error::InvalidDistribution(format!("state {dup} listed twice")));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidDistribution("probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        Ok(DiscreteDistribution { support, probs })
    }

    pub fn dirac(s: StateId) -> Self {
        DiscreteDistribution {
            support: vec![s],
            probs: vec![1.0],
        }
    }

    pub fn uniform(support: Vec<StateId>) -> Result<Self> {
        let p = 1.0 / support.len() as f64;
        let probs = vec![p; support.len()];
        // Summation can land a few ulps from one; the constructor tolerates it.
        DiscreteDistribution::new(support, probs)
    }

    pub fn support(&self) -> &[StateId] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Reads `state_id,prob` rows.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            state_id: StateId,
            prob: f64,
        }
        let mut support = Vec::new();
        let mut probs = Vec::new();
        for row in csv::Reader::from_path(path.as_ref())?.deserialize() {
            let row: Row = row?;
            support.push(row.state_id);
            probs.push(row.prob);
        }
        DiscreteDistribution::new(support, probs)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["state_id", "prob"])?;
        for (s, p) in self.support.iter().zip(&self.probs) {
            w.write_record([s.to_string(), format!("{p:?}")])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// A coupling between the supports of two distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub from: Vec<StateId>,
    pub to: Vec<StateId>,
    /// Row-major `from.len() x to.len()`.
    pub coupling: Vec<f64>,
}

impl TransportPlan {
    pub fn mass(&self, i: usize, j: usize) -> f64 {
        self.coupling[i * self.to.len() + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.coupling.chunks(self.to.len()).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.to.len())
            .map(|j| (0..self.from.len()).map(|i| self.mass(i, j)).sum())
            .collect()
    }

    /// Largest marginal error against `p` (rows) and `q` (columns).
    pub fn marginal_error(&self, p: &DiscreteDistribution, q: &DiscreteDistribution) -> f64 {
        let rows = self.row_sums().into_iter().zip(p.probs()).map(|(a, b)| (a - b).abs());
        let cols = self.col_sums().into_iter().zip(q.probs()).map(|(a, b)| (a - b).abs());
        rows.chain(cols).fold(0.0, f64::max)
    }

    pub fn nonzeros(&self) -> Vec<PlanEntry> {
        let k = self.to.len();
        self.coupling
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .map(|(idx, &mass)| PlanEntry {
                from: self.from[idx / k],
                to: self.to[idx % k],
                mass,
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub from: StateId,
    pub to: StateId,
    pub mass: f64,
}

/// Optimal value, plan and optimality certificate.
#[derive(Clone, Debug)]
pub struct Transport {
    pub value: f64,
    pub plan: TransportPlan,
    /// Primal minus dual objective.
    pub duality_gap: f64,
    /// `max(0, u_i + v_j - c_ij)` over all finite-cost pairs.
    pub dual_violation: f64,
    pub row_potentials: Vec<f64>,
    pub col_potentials: Vec<f64>,
}

#[derive(Serialize)]
struct TransportJson<'a> {
    value: f64,
    duality_gap: f64,
    plan: &'a [PlanEntry],
}

impl Transport {
    pub fn to_json(&self) -> Result<String> {
        let nonzeros = self.plan.nonzeros();
        Ok(serde_json::to_string_pretty(&TransportJson {
            value: self.value,
            duality_gap: self.duality_gap,
            plan: &nonzeros,
        })?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(path, e))
    }
}

struct Problem {
    m: usize,
    k: usize,
    cost: Vec<f64>,
    supply: Vec<f64>,
    demand: Vec<f64>,
}

impl Problem {
    #[inline]
    fn c(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.k + j]
    }
}

/// Shortest distances over the residual graph from all supply nodes that
/// still hold mass. Nodes `0..m` are sources, `m..m+k` sinks. Returns
/// distances and predecessors (`usize::MAX` for roots).
fn residual_dijkstra(
    p: &Problem,
    flow: &[f64],
    potential: &[f64],
    remaining: &[f64],
) -> (Vec<f64>, Vec<usize>) {
    let nodes = p.m + p.k;
    let mut dist = vec![f64::INFINITY; nodes];
    let mut prev = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];
    for i in 0..p.m {
        if remaining[i] > MASS_EPS {
            dist[i] = 0.0;
        }
    }
    loop {
        let mut u = usize::MAX;
        let mut best = f64::INFINITY;
        for v in 0..nodes {
            if !done[v] && dist[v] < best {
                best = dist[v];
                u = v;
            }
        }
        if u == usize::MAX {
            break;
        }
        done[u] = true;
        if u < p.m {
            for j in 0..p.k {
                let c = p.c(u, j);
                if c == f64::INFINITY {
                    continue;
                }
                let v = p.m + j;
                let reduced = (c + potential[u] - potential[v]).max(0.0);
                if dist[u] + reduced < dist[v] {
                    dist[v] = dist[u] + reduced;
                    prev[v] = u;
                }
            }
        } else {
            let j = u - p.m;
            for i in 0..p.m {
                if flow[i * p.k + j] <= MASS_EPS {
                    continue;
                }
                let reduced = (-p.c(i, j) + potential[u] - potential[i]).max(0.0);
                if dist[u] + reduced < dist[i] {
                    dist[i] = dist[u] + reduced;
                    prev[i] = u;
                }
            }
        }
    }
    (dist, prev)
}

fn solve(p: &Problem) -> Result<Vec<f64>> {
    let (m, k) = (p.m, p.k);
    let mut flow = vec![0.0; m * k];
    let mut supply = p.supply.clone();
    let mut demand = p.demand.clone();
    let mut potential = vec![0.0; m + k];
    // Each augmentation exhausts a supply, a demand or a reverse edge.
    for _ in 0..(4 * (m + k) * (m * k + 1)) {
        if supply.iter().all(|&s| s <= MASS_EPS) || demand.iter().all(|&d| d <= MASS_EPS) {
            return Ok(flow);
        }
        let (dist, prev) = residual_dijkstra(p, &flow, &potential, &supply);
        let target = (0..k)
            .filter(|&j| demand[j] > MASS_EPS && dist[m + j].is_finite())
            .min_by(|&a, &b| dist[m + a].total_cmp(&dist[m + b]));
        let Some(target) = target else {
            return Err(Error::InfiniteTransport);
        };
        let cap = dist[m + target];
        for v in 0..m + k {
            potential[v] += dist[v].min(cap);
        }
        let mut path = Vec::new();
        let mut v = m + target;
        while prev[v] != usize::MAX {
            path.push((prev[v], v));
            v = prev[v];
        }
        let root = v;
        let mut delta = supply[root].min(demand[target]);
        for &(a, b) in &path {
            if a >= m {
                delta = delta.min(flow[b * k + (a - m)]);
            }
        }
        for &(a, b) in &path {
            if a < m {
                flow[a * k + (b - m)] += delta;
            } else {
                let cell = &mut flow[b * k + (a - m)];
                *cell -= delta;
                if *cell <= MASS_EPS {
                    *cell = 0.0;
                }
            }
        }
        supply[root] -= delta;
        demand[target] -= delta;
    }
    Err(Error::InvalidArgument("transport solver did not converge".into()))
}

/// Dual potentials from Bellman-Ford over the final residual graph, with a
/// virtual root joined to every node at zero cost.
fn certify(p: &Problem, flow: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (m, k) = (p.m, p.k);
    let mut pi = vec![0.0f64; m + k];
    for _ in 0..=(m + k) {
        let mut changed = false;
        for i in 0..m {
            for j in 0..k {
                let c = p.c(i, j);
                if c == f64::INFINITY {
                    continue;
                }
                if pi[i] + c < pi[m + j] {
                    pi[m + j] = pi[i] + c;
                    changed = true;
                }
                if flow[i * k + j] > 0.0 && pi[m + j] - c < pi[i] {
                    pi[i] = pi[m + j] - c;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let u = pi[..m].iter().map(|&x| -x).collect();
    let v = pi[m..].to_vec();
    (u, v)
}

/// Exact `inf over couplings of sum cost(p, q) * coupling(p, q)`.
///
/// The cost table must be a certified quasimetric.
pub fn dqmd(
    p: &DiscreteDistribution,
    q: &DiscreteDistribution,
    cost: &QuasimetricTable,
) -> Result<Transport> {
    if !cost.is_certified() {
        return Err(Error::UncertifiedCost);
    }
    for dist in [p, q] {
        if dist.len() > MAX_SUPPORT {
            return Err(Error::SupportTooLarge {
                size: dist.len(),
                cap: MAX_SUPPORT,
            });
        }
        if let Some(&bad) = dist.support().iter().find(|&&s| s >= cost.len()) {
            return Err(Error::InvalidState(bad));
        }
    }
    let (m, k) = (p.len(), q.len());
    let mut costs = Vec::with_capacity(m * k);
    for &a in p.support() {
        for &b in q.support() {
            costs.push(cost.get(a, b));
        }
    }
    let problem = Problem {
        m,
        k,
        cost: costs,
        supply: p.probs().to_vec(),
        demand: q.probs().to_vec(),
    };
    let flow = solve(&problem)?;
    let value: f64 = flow
        .iter()
        .zip(&problem.cost)
        .filter(|(&x, _)| x > 0.0)
        .map(|(&x, &c)| x * c)
        .sum();
    let (u, v) = certify(&problem, &flow);
    let dual: f64 = u.iter().zip(p.probs()).map(|(a, b)| a * b).sum::<f64>()
        + v.iter().zip(q.probs()).map(|(a, b)| a * b).sum::<f64>();
    let mut dual_violation = 0.0f64;
    for i in 0..m {
        for j in 0..k {
            let c = problem.c(i, j);
            if c.is_finite() {
                dual_violation = dual_violation.max(u[i] + v[j] - c);
            }
        }
    }
    Ok(Transport {
        value,
        plan: TransportPlan {
            from: p.support().to_vec(),
            to: q.support().to_vec(),
            coupling: flow,
        },
        duality_gap: value - dual,
        dual_violation,
        row_potentials: u,
        col_potentials: v,
    })
}

/// `(d(P, R), d(P, Q) + d(Q, R))`; the quasimetric property says the first
/// never exceeds the second.
pub fn triangle_witness(
    p: &DiscreteDistribution,
    q: &DiscreteDistribution,
    r: &DiscreteDistribution,
    cost: &QuasimetricTable,
) -> Result<(f64, f64)> {
    let direct = dqmd(p, r, cost)?.value;
    let via = dqmd(p, q, cost)?.value + dqmd(q, r, cost)?.value;
    Ok((direct, via))
}
