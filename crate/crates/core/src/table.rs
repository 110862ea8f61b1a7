//! Dense distance tables with `+inf` as the "no estimate" sentinel.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Action, StateId};
use crate::error::{Error, Result};

/// An `n x n` table of nonnegative distances with an exactly-zero diagonal.
///
/// Entries may be `f64::INFINITY`; IEEE arithmetic then gives
/// `x + inf = inf` and `min(x, inf) = x` for free.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceTable {
    n: usize,
    values: Vec<f64>,
}

fn check_entry(from: usize, to: usize, value: f64) -> Result<()> {
    if from == to && value != 0.0 {
        return Err(Error::NonzeroDiagonal { state: from, value });
    }
    if value.is_nan() || value < 0.0 {
        return Err(Error::InvalidDistance { from, to, value });
    }
    Ok(())
}

impl DistanceTable {
    /// Zero on the diagonal, `+inf` elsewhere.
    pub fn unknown(n: usize) -> Self {
        let mut values = vec![f64::INFINITY; n * n];
        for s in 0..n {
            values[s * n + s] = 0.0;
        }
        DistanceTable { n, values }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(StateId, StateId) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(n * n);
        for s in 0..n {
            for g in 0..n {
                let v = f(s, g);
                check_entry(s, g, v)?;
                values.push(v);
            }
        }
        Ok(DistanceTable { n, values })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::SizeMismatch(n, bad.len()));
        }
        Self::from_fn(n, |s, g| rows[s][g])
    }

    /// Builds a table without validating entries. Callers guarantee the invariants.
    pub(crate) fn from_raw(n: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n * n);
        DistanceTable { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, s: StateId, g: StateId) -> f64 {
        self.values[s * self.n + g]
    }

    /// Overwrites one entry, enforcing the table invariants.
    pub fn set(&mut self, s: StateId, g: StateId, value: f64) -> Result<()> {
        if s >= self.n || g >= self.n {
            return Err(Error::InvalidState(s.max(g)));
        }
        check_entry(s, g, value)?;
        self.values[s * self.n + g] = value;
        Ok(())
    }

    #[inline]
    pub fn row(&self, s: StateId) -> &[f64] {
        &self.values[s * self.n..(s + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Re-checks the diagonal and sign invariants (tables can be deserialized
    /// from arbitrary files).
    pub fn validate(&self) -> Result<()> {
        for s in 0..self.n {
            for g in 0..self.n {
                check_entry(s, g, self.get(s, g))?;
            }
        }
        Ok(())
    }

    pub fn max_finite(&self) -> Option<f64> {
        self.values
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .max_by(f64::total_cmp)
    }

    /// Smallest strictly positive finite entry.
    pub fn min_positive(&self) -> Option<f64> {
        self.values
            .iter()
            .copied()
            .filter(|&v| v > 0.0 && v.is_finite())
            .min_by(f64::total_cmp)
    }

    pub fn is_integer_valued(&self) -> bool {
        self.values
            .iter()
            .all(|v| !v.is_finite() || v.fract() == 0.0)
    }

    pub fn count_infinite(&self) -> usize {
        self.values.iter().filter(|v| v.is_infinite()).count()
    }

    /// Pointwise `self <= other`.
    pub fn le(&self, other: &DistanceTable) -> bool {
        self.n == other.n && self.values.iter().zip(&other.values).all(|(a, b)| a <= b)
    }

    /// Writes `s,g,value` rows (all `n^2` entries) with `inf` for the sentinel.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["s", "g", "value"])?;
        for s in 0..self.n {
            for g in 0..self.n {
                w.write_record([s.to_string(), g.to_string(), format_value(self.get(s, g))])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Reads the format of [`write_csv`](Self::write_csv). Entries not listed
    /// default to `+inf` off the diagonal.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut entries = Vec::new();
        let mut n = 0;
        for record in csv::Reader::from_reader(reader).records() {
            let record = record?;
            if record.len() != 3 {
                return Err(Error::parse("distance csv", "expected 3 columns"));
            }
            let s: usize = record[0].parse().map_err(|e| Error::parse("distance csv", e))?;
            let g: usize = record[1].parse().map_err(|e| Error::parse("distance csv", e))?;
            let v = parse_value(&record[2])?;
            n = n.max(s + 1).max(g + 1);
            entries.push((s, g, v));
        }
        let mut table = DistanceTable::unknown(n);
        for (s, g, v) in entries {
            table.set(s, g, v)?;
        }
        Ok(table)
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// Shortest round-tripping decimal, or `inf`.
pub fn format_value(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_owned()
    } else {
        format!("{v:?}")
    }
}

pub fn parse_value(text: &str) -> Result<f64> {
    match text.trim() {
        "inf" | "+inf" | "Infinity" => Ok(f64::INFINITY),
        t => t.parse().map_err(|e| Error::parse("distance value", e)),
    }
}

/// `n x |A| x n` table of action-conditioned distances `d(s, a, g)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionDistanceTable {
    n: usize,
    values: Vec<f64>,
}

impl ActionDistanceTable {
    pub fn from_fn(n: usize, mut f: impl FnMut(StateId, Action, StateId) -> f64) -> Self {
        let mut values = Vec::with_capacity(n * Action::COUNT * n);
        for s in 0..n {
            for a in Action::ALL {
                for g in 0..n {
                    values.push(f(s, a, g));
                }
            }
        }
        ActionDistanceTable { n, values }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn num_actions(&self) -> usize {
        Action::COUNT
    }

    #[inline]
    pub fn get(&self, s: StateId, a: Action, g: StateId) -> f64 {
        self.values[(s * Action::COUNT + a.index()) * self.n + g]
    }

    /// `d(s, ., g)` for all actions.
    pub fn actions(&self, s: StateId, g: StateId) -> [f64; Action::COUNT] {
        Action::ALL.map(|a| self.get(s, a, g))
    }

    /// `min_a d(s, a, g)`.
    pub fn min_over_actions(&self, s: StateId, g: StateId) -> f64 {
        Action::ALL
            .iter()
            .map(|&a| self.get(s, a, g))
            .fold(f64::INFINITY, f64::min)
    }

    /// The action-free table `d(s, g) = min_a d(s, a, g)`, with the diagonal
    /// pinned to zero.
    pub fn state_distances(&self) -> DistanceTable {
        let n = self.n;
        let mut values = Vec::with_capacity(n * n);
        for s in 0..n {
            for g in 0..n {
                values.push(if s == g { 0.0 } else { self.min_over_actions(s, g) });
            }
        }
        DistanceTable::from_raw(n, values)
    }
}

/// JSON sidecar written next to a distance CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableSidecar {
    pub num_states: usize,
    pub certified: bool,
    pub source: String,
}
