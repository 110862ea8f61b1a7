//! Projection of distance tables onto quasimetrics by path relaxation, and
//! exhaustive triangle-inequality audits.

use rayon::prelude::*;

use crate::env::StateId;
use crate::error::{Error, Result};
use crate::table::DistanceTable;

/// Default slack for auditing float-valued tables.
pub const EPS_TRIANGLE: f64 = 1e-9;

/// A triple where `d(s, g) > d(s, w) + d(w, g) + eps`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Violation {
    pub s: StateId,
    pub w: StateId,
    pub g: StateId,
}

/// A distance table produced by path relaxation. `certified` flips to true
/// only once [`QuasimetricTable::audit`] finds no violation.
#[derive(Clone, Debug, PartialEq)]
pub struct QuasimetricTable {
    inner: DistanceTable,
    certified: bool,
}

impl QuasimetricTable {
    /// Wraps a table and audits it at `eps`; fails with the violations found.
    pub fn certify(table: DistanceTable, eps: f64) -> Result<Self, Vec<Violation>> {
        let mut q = QuasimetricTable {
            inner: table,
            certified: false,
        };
        let violations = q.audit(eps);
        if violations.is_empty() {
            Ok(q)
        } else {
            Err(violations)
        }
    }

    /// Runs [`audit_quasimetric`] and records the verdict.
    pub fn audit(&mut self, eps: f64) -> Vec<Violation> {
        let violations = audit_quasimetric(&self.inner, eps);
        self.certified = violations.is_empty();
        violations
    }

    pub fn is_certified(&self) -> bool {
        self.certified
    }

    pub fn table(&self) -> &DistanceTable {
        &self.inner
    }

    pub fn into_table(self) -> DistanceTable {
        self.inner
    }

    #[inline]
    pub fn get(&self, s: StateId, g: StateId) -> f64 {
        self.inner.get(s, g)
    }

    pub fn len(&self) -> usize {
        self.inner.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.is_empty()
    }
}

/// Min-plus closure: applies `d(s,g) <- min(d(s,g), d(s,w) + d(w,g))` in
/// Floyd-Warshall order until a full sweep changes nothing.
///
/// In exact arithmetic one sweep reaches the fixed point; with floats a later
/// sweep can still shave an ulp off a sum taken in a different order, so the
/// sweep repeats (in practice once more, as a check). The result is the
/// largest quasimetric lying pointwise below `d`: entries never increase and
/// unreachable pairs stay at `+inf`.
///
/// ```
/// use horizon_core::quasimetric::path_relaxation_closure;
/// use horizon_core::table::DistanceTable;
///
/// let inf = f64::INFINITY;
/// let d = DistanceTable::from_rows(vec![
///     vec![0.0, 5.0, 20.0],
///     vec![inf, 0.0, 3.0],
///     vec![inf, inf, 0.0],
/// ]).unwrap();
/// let q = path_relaxation_closure(&d).unwrap();
/// assert_eq!(q.get(0, 2), 8.0);
/// ```
pub fn path_relaxation_closure(d: &DistanceTable) -> Result<QuasimetricTable> {
    d.validate()?;
    let n = d.len();
    let mut out = d.clone();
    let values = out.values_mut();
    let mut pivot = vec![0.0; n];
    loop {
        let mut changed = false;
        for w in 0..n {
            // Row w and column w are fixed points of step w since d(w, w) = 0.
            pivot.copy_from_slice(&values[w * n..(w + 1) * n]);
            changed |= values
                .par_chunks_mut(n.max(1))
                .map(|row| {
                    let to_w = row[w];
                    if to_w == f64::INFINITY {
                        return false;
                    }
                    let mut any = false;
                    for (cell, &from_w) in row.iter_mut().zip(&pivot) {
                        let via = to_w + from_w;
                        if via < *cell {
                            *cell = via;
                            any = true;
                        }
                    }
                    any
                })
                .reduce(|| false, |a, b| a || b);
        }
        if !changed {
            break;
        }
    }
    Ok(QuasimetricTable {
        inner: out,
        certified: false,
    })
}

/// Every triple violating the triangle inequality by more than `eps`, in
/// lexicographic `(s, w, g)` order.
pub fn audit_quasimetric(d: &DistanceTable, eps: f64) -> Vec<Violation> {
    let n = d.len();
    (0..n)
        .into_par_iter()
        .flat_map_iter(|s| {
            let row_s = d.row(s);
            (0..n).flat_map(move |w| {
                let to_w = row_s[w];
                let row_w = d.row(w);
                (0..n).filter_map(move |g| {
                    (row_s[g] > to_w + row_w[g] + eps).then_some(Violation { s, w, g })
                })
            })
        })
        .collect()
}

/// Number of violating triples, without materializing them.
pub fn count_violations(d: &DistanceTable, eps: f64) -> u64 {
    let n = d.len();
    (0..n)
        .into_par_iter()
        .map(|s| {
            let row_s = d.row(s);
            let mut count = 0u64;
            for w in 0..n {
                let to_w = row_s[w];
                if to_w == f64::INFINITY {
                    continue;
                }
                for (g, &from_w) in d.row(w).iter().enumerate() {
                    if row_s[g] > to_w + from_w + eps {
                        count += 1;
                    }
                }
            }
            count
        })
        .sum()
}

/// Keeps only entries strictly below `c` (the training ball of radius `c`);
/// the rest become `+inf`.
pub fn short_pair_restriction(d: &DistanceTable, c: f64) -> Result<DistanceTable> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {c}")));
    }
    let n = d.len();
    let values = d
        .values()
        .iter()
        .enumerate()
        .map(|(idx, &v)| if idx / n == idx % n { 0.0 } else if v < c { v } else { f64::INFINITY })
        .collect();
    Ok(DistanceTable::from_raw(n, values))
}

#[cfg(test)]
mod tests {
    use super::*;

    const INF: f64 = f64::INFINITY;

    fn three_state() -> DistanceTable {
        DistanceTable::from_rows(vec![
            vec![0.0, 5.0, 20.0],
            vec![INF, 0.0, 3.0],
            vec![INF, INF, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn single_relaxation() {
        let d = three_state();
        let violations = audit_quasimetric(&d, 0.0);
        assert_eq!(violations, vec![Violation { s: 0, w: 1, g: 2 }]);
        assert_eq!(count_violations(&d, 0.0), 1);

        let mut q = path_relaxation_closure(&d).unwrap();
        assert!(!q.is_certified());
        assert_eq!(q.get(0, 2), 8.0);
        assert_eq!(q.get(2, 0), INF);
        assert!(q.audit(0.0).is_empty());
        assert!(q.is_certified());
    }

    #[test]
    fn certify_reports_violations() {
        assert_eq!(QuasimetricTable::certify(three_state(), 0.0).unwrap_err().len(), 1);
        let q = QuasimetricTable::certify(path_relaxation_closure(&three_state()).unwrap().into_table(), 0.0);
        assert!(q.unwrap().is_certified());
    }

    #[test]
    fn missing_link_counts_as_violation() {
        let d = DistanceTable::from_rows(vec![
            vec![0.0, 1.0, INF],
            vec![INF, 0.0, 1.0],
            vec![INF, INF, 0.0],
        ])
        .unwrap();
        assert_eq!(audit_quasimetric(&d, EPS_TRIANGLE).len(), 1);
        assert_eq!(path_relaxation_closure(&d).unwrap().get(0, 2), 2.0);
    }

    #[test]
    fn restriction_edge_cases() {
        let d = three_state();
        assert_eq!(short_pair_restriction(&d, 21.0).unwrap(), d);
        let only_diag = short_pair_restriction(&d, d.min_positive().unwrap()).unwrap();
        assert_eq!(only_diag, DistanceTable::unknown(3));
        assert!(short_pair_restriction(&d, 0.0).is_err());
        assert!(short_pair_restriction(&d, f64::NAN).is_err());
    }
}
