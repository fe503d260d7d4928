//! Per-round column-stochastic mixing matrices.
//!
//! Column `i` of a [`WeightMatrix`] is the weight vector node `i` assigns
//! to its out-neighbors; entry `(j, i)` is the weight attached to what `i`
//! sends toward `j`. Two rules are provided:
//!
//! * [`uniform_column`] — the classic reciprocal-out-degree rule.
//! * [`moreau_column`] — the adaptive rule: a neighbor's weight grows with
//!   the squared distance between the sender's own parameter and its
//!   buffered copy of that neighbor, through the bounded increasing map
//!   [`c_prime`]. Far-away neighbors are pulled on harder, and the column
//!   stays a convex combination with a positive floor `min(v, v(1-v)/((1+v)K))`.
//!
//! Every assembled matrix is validated: columns sum to one within 1e-12,
//! support matches the round's edges, and all nonzero entries sit above a
//! method-specific analytic floor ([`analytic_delta`]).

use serde::{Deserialize, Serialize};

use crate::topology::EdgeSet;

/// Column sums may deviate from 1 by at most this much.
pub const COLUMN_SUM_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum WeightingError {
    #[error("column {col} sums to {sum}, deviating from 1 by more than {COLUMN_SUM_TOL}")]
    ColumnSum { col: usize, sum: f64 },
    #[error("entry ({row}, {col}) = {value} violates the edge support")]
    Sparsity { row: usize, col: usize, value: f64 },
    #[error("entry ({row}, {col}) = {value} is negative")]
    Negative { row: usize, col: usize, value: f64 },
    #[error("expected {expected} columns of length {expected}, got column {col} of length {len}")]
    Shape { expected: usize, col: usize, len: usize },
}

// ---------------------------------------------------------------------------
// Parameters and method selection
// ---------------------------------------------------------------------------

/// Hyperparameters of the adaptive weighting rule.
///
/// `step_gamma` multiplies the column entries as `2*gamma/K` and divides
/// them again inside [`c_prime`]; it cancels exactly and is kept only so
/// the two formulas read like their definitions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoreauParams {
    pub v: f64,
    pub steepness_k: f64,
    pub step_gamma: f64,
}

impl MoreauParams {
    pub fn new(v: f64, steepness_k: f64, step_gamma: f64) -> Self {
        MoreauParams { v, steepness_k, step_gamma }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.v > 0.0 && self.v < 1.0) {
            return Err(format!("v = {} outside (0, 1)", self.v));
        }
        if !(self.steepness_k > 0.0) {
            return Err(format!("k = {} must be positive", self.steepness_k));
        }
        if !(self.step_gamma > 0.0) {
            return Err(format!("gamma = {} must be positive", self.step_gamma));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WeightingMethod {
    UniformOutDegree,
    Moreau(MoreauParams),
}

/// Worst-case lower bound on nonzero matrix entries for a method, given
/// the largest out-degree the topology can produce. Fixed before a run so
/// the consensus bounds are known up front.
pub fn analytic_delta(method: &WeightingMethod, max_out_degree: usize) -> f64 {
    let k = max_out_degree as f64;
    match method {
        WeightingMethod::UniformOutDegree => 1.0 / k,
        WeightingMethod::Moreau(p) => {
            let neighbor_floor = (1.0 - p.v) * p.v / ((1.0 + p.v) * k);
            p.v.min(neighbor_floor)
        }
    }
}

// ---------------------------------------------------------------------------
// Column rules
// ---------------------------------------------------------------------------

/// Derivative of the distance penalty: strictly increasing in `dist_sq`,
/// with range `[(1-v)v / (2g(1+v)), (1-v) / (2g))`.
pub fn c_prime(dist_sq: f64, p: &MoreauParams) -> f64 {
    debug_assert!(dist_sq >= 0.0);
    (1.0 - p.v) / (2.0 * p.step_gamma * (1.0 + p.v))
        * (1.0 + p.v - (-p.steepness_k * dist_sq).exp())
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Adaptive weight column for node `i`: out-neighbors are weighted by
/// `(2g/K_i) * c_prime(||buff_ii - buff_ij||^2)` and the self-weight takes
/// the remainder. `buffer_row` is node `i`'s buffered copy of every peer.
pub fn moreau_column(
    edges: &EdgeSet,
    i: usize,
    buffer_row: &[Vec<f64>],
    p: &MoreauParams,
) -> Vec<f64> {
    debug_assert!(edges.contains(i, i), "node {i} lacks a self-loop");
    let n = edges.n_nodes();
    let cardinality = edges.out_degree(i) as f64; // self-loop included
    let mut column = vec![0.0; n];
    let mut neighbor_sum = 0.0;
    for j in 0..n {
        if j != i && edges.contains(i, j) {
            let w = 2.0 * p.step_gamma / cardinality
                * c_prime(dist_sq(&buffer_row[i], &buffer_row[j]), p);
            column[j] = w;
            neighbor_sum += w;
        }
    }
    let self_weight = 1.0 - neighbor_sum;
    // Analytically self_weight > v; a violated assertion means the
    // parameters escaped their domain.
    assert!(
        self_weight > 0.0,
        "self-weight {self_weight} not positive (v = {})",
        p.v
    );
    column[i] = self_weight;
    column
}

/// Reciprocal-out-degree column for node `i`.
pub fn uniform_column(edges: &EdgeSet, i: usize) -> Vec<f64> {
    debug_assert!(edges.contains(i, i), "node {i} lacks a self-loop");
    let n = edges.n_nodes();
    let share = 1.0 / edges.out_degree(i) as f64;
    let mut column = vec![0.0; n];
    for j in 0..n {
        if edges.contains(i, j) {
            column[j] = share;
        }
    }
    column
}

/// Weight column for node `i` under the chosen method.
pub fn weight_column(
    edges: &EdgeSet,
    i: usize,
    buffer_row: &[Vec<f64>],
    method: &WeightingMethod,
) -> Vec<f64> {
    match method {
        WeightingMethod::UniformOutDegree => uniform_column(edges, i),
        WeightingMethod::Moreau(p) => moreau_column(edges, i, buffer_row, p),
    }
}

// ---------------------------------------------------------------------------
// WeightMatrix
// ---------------------------------------------------------------------------

/// Dense N x N column-stochastic mixing matrix. Entry `(i, j)` is the
/// weight node `j` assigns to the value it sends toward node `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMatrix {
    n: usize,
    entries: Vec<f64>, // row-major
}

impl WeightMatrix {
    /// Build from raw row-major entries without validation. Intended for
    /// tests and for verification code constructing known matrices.
    pub fn from_rows(n: usize, entries: Vec<f64>) -> Self {
        assert_eq!(entries.len(), n * n);
        WeightMatrix { n, entries }
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn entry_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.entries[i * self.n + j]
    }

    pub fn column_sum(&self, j: usize) -> f64 {
        (0..self.n).map(|i| self.entry(i, j)).sum()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        (0..self.n).map(|j| self.entry(i, j)).sum()
    }

    /// Smallest strictly positive entry.
    pub fn min_nonzero(&self) -> f64 {
        self.entries
            .iter()
            .copied()
            .filter(|&w| w > 0.0)
            .fold(f64::INFINITY, f64::min)
    }

    /// Directed edges implied by the support: `(j, i)` iff entry `(i, j) > 0`.
    pub fn support_edges(&self) -> EdgeSet {
        let mut e = EdgeSet::self_loops(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                if self.entry(i, j) > 0.0 {
                    e.insert(j, i);
                }
            }
        }
        e
    }
}

/// Combine per-node weight columns into a matrix, validating column sums,
/// non-negativity, and support against the round's edges.
pub fn assemble_matrix(
    columns: &[Vec<f64>],
    edges: &EdgeSet,
) -> Result<WeightMatrix, WeightingError> {
    let n = edges.n_nodes();
    if columns.len() != n {
        return Err(WeightingError::Shape { expected: n, col: columns.len(), len: 0 });
    }
    for (j, col) in columns.iter().enumerate() {
        if col.len() != n {
            return Err(WeightingError::Shape { expected: n, col: j, len: col.len() });
        }
    }
    let mut entries = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            entries[i * n + j] = columns[j][i];
        }
    }
    let w = WeightMatrix { n, entries };
    for j in 0..n {
        let sum = w.column_sum(j);
        if (sum - 1.0).abs() > COLUMN_SUM_TOL {
            return Err(WeightingError::ColumnSum { col: j, sum });
        }
        for i in 0..n {
            let value = w.entry(i, j);
            if value < 0.0 {
                return Err(WeightingError::Negative { row: i, col: j, value });
            }
            // Definition-level support: positive iff the edge (j, i) exists.
            if (value > 0.0) != edges.contains(j, i) {
                return Err(WeightingError::Sparsity { row: i, col: j, value });
            }
        }
    }
    Ok(w)
}

/// Compliance check: column stochastic within tolerance, support matching
/// the round's edges exactly, and all nonzero entries at least `delta`.
pub fn check_definition1(w: &WeightMatrix, edges: &EdgeSet, delta: f64) -> bool {
    debug_assert!(delta > 0.0);
    let n = w.n_nodes();
    if n != edges.n_nodes() {
        return false;
    }
    for j in 0..n {
        if (w.column_sum(j) - 1.0).abs() > COLUMN_SUM_TOL {
            return false;
        }
        for i in 0..n {
            let value = w.entry(i, j);
            if (value > 0.0) != edges.contains(j, i) {
                return false;
            }
            if value > 0.0 && value < delta {
                return false;
            }
        }
    }
    true
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
