//! The adaptive-weighting push-sum state machine.
//!
//! Each node carries a parameter `x`, a normalizing scalar `a` (initially
//! 1), the corrected parameter `y = x / a`, and an adjacency buffer with
//! its last-known copy of every peer's parameter. One synchronous round:
//!
//! 1. apply the perturbation: `x_i += eps_i` (the half-step value);
//! 2. each node computes its weight column from its *own* buffer state as
//!    it stood at the end of the previous round;
//! 3. buffers ingest the half-step values received over this round's
//!    in-links; peers silent for a whole connectivity window are reset to
//!    the node's own half-step value;
//! 4. `a` and `x` are mixed through the column-stochastic matrix;
//! 5. `y = x / a`.
//!
//! Column stochasticity conserves the totals: the sum of `x` moves only by
//! the injected perturbations and the sum of `a` stays at N, which is what
//! keeps `y` an unbiased average estimate.
//!
//! One asymmetry inherited from the update rules is worth knowing about:
//! buffers fill from in-links while weights are assigned to out-neighbors,
//! so on a non-symmetric graph a node may weight an out-neighbor it has
//! never heard from; the buffer then still holds the initialization or the
//! reset fallback. Both rules are implemented literally.

use std::collections::VecDeque;

use crate::numeric::{sub, vec_l1, vec_l2};
use crate::topology::{aggregate_window, EdgeSet};
use crate::weighting::{assemble_matrix, weight_column, WeightMatrix, WeightingError, WeightingMethod};

/// The normalizer is declared numerically dead below this magnitude.
pub const NORMALIZER_FLOOR: f64 = 1e-300;

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("normalizer underflow at node {node}: a = {value:e}")]
    NormalizerUnderflow { node: usize, value: f64 },
    #[error(transparent)]
    Weighting(#[from] WeightingError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    L1,
    L2,
}

/// Per-node additive update injected before mixing.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub per_node: Vec<Vec<f64>>,
}

impl Perturbation {
    pub fn zeros(n: usize, d: usize) -> Self {
        Perturbation { per_node: vec![vec![0.0; d]; n] }
    }

    pub fn from_rows(per_node: Vec<Vec<f64>>) -> Self {
        Perturbation { per_node }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeState {
    pub x: Vec<f64>,
    pub a: f64,
    pub y: Vec<f64>,
    /// Last-known parameter of every peer, own entry included.
    pub buffer: Vec<Vec<f64>>,
}

/// The whole network plus the link history needed by the buffer reset rule.
#[derive(Clone, Debug)]
pub struct NetworkState {
    nodes: Vec<NodeState>,
    round: usize,
    period_b: usize,
    link_history: VecDeque<EdgeSet>,
}

impl NetworkState {
    /// Round-0 state: `a = 1`, `y = x`, every buffer slot holds the node's
    /// own initial parameter.
    pub fn new(x0: Vec<Vec<f64>>, period_b: usize) -> Result<Self, ProtocolError> {
        let n = x0.len();
        if n == 0 {
            return Err(ProtocolError::Shape("no nodes".into()));
        }
        let d = x0[0].len();
        if x0.iter().any(|v| v.len() != d) {
            return Err(ProtocolError::Shape("inconsistent parameter dimensions".into()));
        }
        if period_b == 0 {
            return Err(ProtocolError::Shape("period B must be >= 1".into()));
        }
        let nodes = x0
            .into_iter()
            .map(|x| NodeState {
                buffer: vec![x.clone(); n],
                y: x.clone(),
                a: 1.0,
                x,
            })
            .collect();
        Ok(NetworkState { nodes, round: 0, period_b, link_history: VecDeque::new() })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn dim(&self) -> usize {
        self.nodes[0].x.len()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn params(&self) -> Vec<Vec<f64>> {
        self.nodes.iter().map(|s| s.x.clone()).collect()
    }

    pub fn corrected(&self) -> Vec<Vec<f64>> {
        self.nodes.iter().map(|s| s.y.clone()).collect()
    }

    pub fn normalizers(&self) -> Vec<f64> {
        self.nodes.iter().map(|s| s.a).collect()
    }

    /// Network average parameter (exact, global view).
    pub fn mean_param(&self) -> Vec<f64> {
        let rows: Vec<&Vec<f64>> = self.nodes.iter().map(|s| &s.x).collect();
        let mut out = vec![0.0; self.dim()];
        for r in rows {
            for (o, x) in out.iter_mut().zip(r) {
                *o += x;
            }
        }
        let n = self.n_nodes() as f64;
        for o in &mut out {
            *o /= n;
        }
        out
    }

    /// Distance of each corrected parameter from the network average.
    pub fn consensus_distance(&self, norm: Norm) -> Vec<f64> {
        let mean = self.mean_param();
        self.nodes
            .iter()
            .map(|s| {
                let diff = sub(&s.y, &mean);
                match norm {
                    Norm::L1 => vec_l1(&diff),
                    Norm::L2 => vec_l2(&diff),
                }
            })
            .collect()
    }

    /// Advance one synchronous round. Returns the assembled mixing matrix
    /// so callers can log or verify it.
    pub fn advance(
        &mut self,
        eps: &Perturbation,
        edges: &EdgeSet,
        method: &WeightingMethod,
    ) -> Result<WeightMatrix, ProtocolError> {
        let n = self.n_nodes();
        let d = self.dim();
        if eps.per_node.len() != n || eps.per_node.iter().any(|v| v.len() != d) {
            return Err(ProtocolError::Shape(format!(
                "perturbation shape does not match {n} x {d}"
            )));
        }
        if edges.n_nodes() != n {
            return Err(ProtocolError::Shape(format!(
                "edge set on {} nodes, network has {n}",
                edges.n_nodes()
            )));
        }

        // (1) Half-step: local perturbation.
        for (node, e) in self.nodes.iter_mut().zip(&eps.per_node) {
            for (x, de) in node.x.iter_mut().zip(e) {
                *x += de;
            }
        }
        let half_step: Vec<Vec<f64>> = self.nodes.iter().map(|s| s.x.clone()).collect();

        // (2) Weight columns from the pre-update buffer state.
        let columns: Vec<Vec<f64>> = (0..n)
            .map(|i| weight_column(edges, i, &self.nodes[i].buffer, method))
            .collect();
        let w = assemble_matrix(&columns, edges)?;

        // (3) Buffer update from this round's in-links; peers outside the
        // whole recent window reset to the node's own half-step value.
        self.link_history.push_back(edges.clone());
        if self.link_history.len() > self.period_b {
            self.link_history.pop_front();
        }
        let window =
            aggregate_window(self.link_history.make_contiguous()).expect("history shares n");
        for i in 0..n {
            for j in 0..n {
                if edges.contains(j, i) {
                    self.nodes[i].buffer[j] = half_step[j].clone();
                } else if !window.contains(j, i) {
                    self.nodes[i].buffer[j] = half_step[i].clone();
                }
            }
        }

        // (4) Weighted average of received values.
        let prev_a: Vec<f64> = self.nodes.iter().map(|s| s.a).collect();
        for i in 0..n {
            let mut a_new = 0.0;
            let mut x_new = vec![0.0; d];
            for j in 0..n {
                let wij = w.entry(i, j);
                if wij == 0.0 {
                    continue;
                }
                a_new += wij * prev_a[j];
                for (acc, v) in x_new.iter_mut().zip(&half_step[j]) {
                    *acc += wij * v;
                }
            }
            if a_new <= NORMALIZER_FLOOR {
                return Err(ProtocolError::NormalizerUnderflow { node: i, value: a_new });
            }
            // (5) Corrected parameter.
            self.nodes[i].y = x_new.iter().map(|v| v / a_new).collect();
            self.nodes[i].x = x_new;
            self.nodes[i].a = a_new;
        }
        self.round += 1;
        Ok(w)
    }
}

/// One round in matrix form: `X <- W (X + eps)`, `a <- W a`, `y_i = x_i / a_i`.
/// Independent of [`NetworkState::advance`]; serves as its oracle.
#[allow(clippy::type_complexity)]
pub fn matrix_form_round(
    x_mat: &[Vec<f64>],
    a_vec: &[f64],
    eps_mat: &[Vec<f64>],
    w: &WeightMatrix,
) -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>), ProtocolError> {
    let n = w.n_nodes();
    if x_mat.len() != n || a_vec.len() != n || eps_mat.len() != n {
        return Err(ProtocolError::Shape("row count does not match matrix".into()));
    }
    let d = x_mat[0].len();
    if x_mat.iter().chain(eps_mat.iter()).any(|r| r.len() != d) {
        return Err(ProtocolError::Shape("row widths differ".into()));
    }
    let half: Vec<Vec<f64>> = x_mat
        .iter()
        .zip(eps_mat)
        .map(|(x, e)| x.iter().zip(e).map(|(a, b)| a + b).collect())
        .collect();
    let mut x_out = vec![vec![0.0; d]; n];
    let mut a_out = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let wij = w.entry(i, j);
            if wij == 0.0 {
                continue;
            }
            a_out[i] += wij * a_vec[j];
            for (acc, v) in x_out[i].iter_mut().zip(&half[j]) {
                *acc += wij * v;
            }
        }
    }
    let y_out: Vec<Vec<f64>> = x_out
        .iter()
        .zip(&a_out)
        .map(|(x, &a)| x.iter().map(|v| v / a).collect())
        .collect();
    Ok((x_out, a_out, y_out))
}

// ---------------------------------------------------------------------------
// Trajectory recording
// ---------------------------------------------------------------------------

/// State snapshot after one completed round, plus the perturbation that
/// was injected during it.
#[derive(Clone, Debug)]
pub struct TrajectoryRound {
    pub x: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub eps: Vec<Vec<f64>>,
}

/// Full per-round history of a run, consumed by the bound verifiers.
/// `rounds[t - 1]` describes round `t`.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub initial_x: Vec<Vec<f64>>,
    pub rounds: Vec<TrajectoryRound>,
}

impl Trajectory {
    pub fn start(initial_x: Vec<Vec<f64>>) -> Self {
        Trajectory { initial_x, rounds: Vec::new() }
    }

    pub fn record(&mut self, state: &NetworkState, eps: &Perturbation) {
        self.rounds.push(TrajectoryRound {
            x: state.params(),
            a: state.normalizers(),
            y: state.corrected(),
            eps: eps.per_node.clone(),
        });
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
