//! Numerical verification of the consensus guarantees.
//!
//! Three families of checks, all driven by brute-force matrix products
//! computed here with plain triple loops, independent of the protocol's
//! own mixing code:
//!
//! * [`verify_lemma1`] — backward products of a compliant mixing-matrix
//!   sequence collapse toward a rank-one matrix: every entry of
//!   `W(t)...W(s)` stays within `2 * lambda^(t-s)` of a stochastic vector
//!   estimated from the longest available product.
//! * [`verify_lemma2`] — the row sums of `W(t)...W(1) 1` are at least
//!   `delta^(DB)` while `t < DB` and jump to `N * delta^(DB)` once
//!   `t >= DB`; the factor-N improvement is what buys the `1/N` in the
//!   trajectory bound.
//! * [`verify_theorem1`] — along a recorded trajectory, each node's
//!   corrected parameter stays within the geometric envelope
//!   `coef * (lambda^(t-1) ||X0|| + sum_s lambda^(t-s) ||eps(s)||)`,
//!   where the coefficient drops from `C` to `C/N` (L1) or from
//!   `C sqrt(N)` to `C / sqrt(N)` (L2, Frobenius norms) after round `DB`.
//!
//! All margins carry an absolute slack of [`BOUND_SLACK`] to absorb
//! double-precision accumulation.

use serde::{Deserialize, Serialize};

use crate::numeric::{mat_frobenius, mat_l1, mean_row, sub, vec_l1, vec_l2};
use crate::protocol::{Norm, Trajectory};
use crate::topology::{aggregate_window, EdgeSet};
use crate::weighting::{WeightMatrix, COLUMN_SUM_TOL};

/// Absolute slack applied to every bound margin.
pub const BOUND_SLACK: f64 = 1e-9;

/// Tolerance on column sums of accumulated brute-force products.
const PRODUCT_STOCHASTIC_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("input does not meet the preconditions: {0}")]
    NonCompliant(String),
    #[error("bound constants degenerate: {0}")]
    DegenerateBound(String),
    #[error("accumulated product lost column stochasticity (deviation {0:e})")]
    ProductDrift(f64),
    #[error("empty trajectory")]
    EmptyTrajectory,
}

// ---------------------------------------------------------------------------
// Bound constants
// ---------------------------------------------------------------------------

/// Constants of the consensus bounds, fixed before a run from the
/// analytic weight floor and the measured connectivity constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub delta: f64,
    pub diameter_delta: usize,
    pub period_b: usize,
    /// `C = 4 / delta^(DB)`.
    pub lemma_c: f64,
    /// `lambda = (1 - delta^(DB))^(1 / DB)`.
    pub lambda: f64,
    /// The deviation constant of the product-decay guarantee; always 2.
    pub lemma_k: f64,
}

impl BoundParams {
    /// Rounds after which the improved `C / N` regime applies.
    pub fn regime_switch(&self) -> usize {
        self.diameter_delta * self.period_b
    }

    /// `delta^(DB)`, the floor on window-product entries.
    pub fn window_floor(&self) -> f64 {
        self.delta.powi((self.diameter_delta * self.period_b) as i32)
    }
}

pub fn compute_bound_params(
    delta: f64,
    diameter_delta: usize,
    period_b: usize,
) -> Result<BoundParams, AnalysisError> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(AnalysisError::DegenerateBound(format!(
            "delta = {delta} outside (0, 1]"
        )));
    }
    if diameter_delta == 0 || period_b == 0 {
        return Err(AnalysisError::DegenerateBound(
            "diameter and period must be >= 1".into(),
        ));
    }
    let db = (diameter_delta * period_b) as i32;
    let floor = delta.powi(db);
    if floor == 0.0 {
        return Err(AnalysisError::DegenerateBound(format!(
            "delta^(DB) underflows for delta = {delta}, DB = {db}"
        )));
    }
    let lambda = (1.0 - floor).powf(1.0 / db as f64);
    if lambda >= 1.0 {
        return Err(AnalysisError::DegenerateBound(format!(
            "decay rate rounds to 1 for delta = {delta}, DB = {db}"
        )));
    }
    Ok(BoundParams {
        delta,
        diameter_delta,
        period_b,
        lemma_c: 4.0 / floor,
        lambda,
        lemma_k: 2.0,
    })
}

/// The asymptotic bound coefficient with and without the row-sum
/// improvement: `(C, C / N)`. Their ratio is exactly `N`.
pub fn compare_regimes(params: &BoundParams, n_nodes: usize) -> (f64, f64) {
    (params.lemma_c, params.lemma_c / n_nodes as f64)
}

/// Bound constants for a topology/weighting pair: analytic weight floor,
/// measured worst window diameter, configured period.
pub fn bound_params_for_run(
    graph: &crate::topology::GraphSpec,
    method: &crate::weighting::WeightingMethod,
    horizon: usize,
) -> Result<BoundParams, AnalysisError> {
    let report =
        crate::topology::validate_assumption1(graph, horizon.max(4 * graph.period_b));
    let diameter = report.diameter_delta.ok_or_else(|| {
        AnalysisError::NonCompliant(format!(
            "graph sequence not B-strongly connected (window {:?})",
            report.first_violating_window
        ))
    })?;
    let delta = crate::weighting::analytic_delta(method, graph.max_out_degree());
    compute_bound_params(delta, diameter, graph.period_b)
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMargin {
    pub round: usize,
    pub margin: f64,
}

/// Outcome of one verification pass. `worst_margin` is bound minus
/// observed at the most adverse round; the check passes iff it clears
/// `-BOUND_SLACK`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check: String,
    pub passed: bool,
    pub worst_margin: f64,
    pub worst_round: usize,
    pub details: Vec<RoundMargin>,
}

impl VerificationReport {
    pub fn from_margins(check: &str, details: Vec<RoundMargin>) -> Self {
        let (worst_round, worst_margin) = details
            .iter()
            .min_by(|a, b| a.margin.total_cmp(&b.margin))
            .map(|m| (m.round, m.margin))
            .unwrap_or((0, f64::INFINITY));
        VerificationReport {
            check: check.to_string(),
            passed: worst_margin >= -BOUND_SLACK,
            worst_margin,
            worst_round,
            details,
        }
    }

    /// A failed report carrying a diagnostic instead of margins.
    pub fn rejected(check: &str, reason: &str) -> Self {
        VerificationReport {
            check: format!("{check} ({reason})"),
            passed: false,
            worst_margin: f64::NEG_INFINITY,
            worst_round: 0,
            details: Vec::new(),
        }
    }
}

// ---------------------------------------------------------------------------
// Brute-force products
// ---------------------------------------------------------------------------

/// Plain dense product `a * b`; deliberately independent of any protocol
/// mixing code so it can serve as an oracle for it.
fn mat_mul(a: &WeightMatrix, b: &WeightMatrix) -> WeightMatrix {
    let n = a.n_nodes();
    debug_assert_eq!(n, b.n_nodes());
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a.entry(i, k);
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b.entry(k, j);
            }
        }
    }
    WeightMatrix::from_rows(n, out)
}

fn assert_column_stochastic(w: &WeightMatrix) -> Result<(), AnalysisError> {
    for j in 0..w.n_nodes() {
        let dev = (w.column_sum(j) - 1.0).abs();
        if dev > PRODUCT_STOCHASTIC_TOL {
            return Err(AnalysisError::ProductDrift(dev));
        }
    }
    Ok(())
}

/// Check the verifier preconditions: every matrix individually compliant
/// (column stochastic, self-loops, nonzero entries at least `delta`) and
/// the support sequence B-strongly-connected with diameter at most the
/// parameters' value.
fn check_sequence_compliance(
    w_sequence: &[WeightMatrix],
    params: &BoundParams,
) -> Result<(), AnalysisError> {
    if w_sequence.is_empty() {
        return Err(AnalysisError::NonCompliant("empty sequence".into()));
    }
    let n = w_sequence[0].n_nodes();
    for (idx, w) in w_sequence.iter().enumerate() {
        let t = idx + 1;
        if w.n_nodes() != n {
            return Err(AnalysisError::NonCompliant(format!(
                "matrix {t} is {} x {}, expected {n} x {n}",
                w.n_nodes(),
                w.n_nodes()
            )));
        }
        for j in 0..n {
            let dev = (w.column_sum(j) - 1.0).abs();
            if dev > COLUMN_SUM_TOL {
                return Err(AnalysisError::NonCompliant(format!(
                    "matrix {t} column {j} sums off by {dev:e}"
                )));
            }
            if w.entry(j, j) <= 0.0 {
                return Err(AnalysisError::NonCompliant(format!(
                    "matrix {t} lacks a self-loop at {j}"
                )));
            }
            for i in 0..n {
                let v = w.entry(i, j);
                if v < 0.0 || (v > 0.0 && v < params.delta) {
                    return Err(AnalysisError::NonCompliant(format!(
                        "matrix {t} entry ({i}, {j}) = {v} below the floor {}",
                        params.delta
                    )));
                }
            }
        }
    }
    let b = params.period_b;
    if w_sequence.len() < b {
        return Err(AnalysisError::NonCompliant(format!(
            "sequence of {} rounds cannot cover a window of {b}",
            w_sequence.len()
        )));
    }
    let supports: Vec<EdgeSet> = w_sequence.iter().map(|w| w.support_edges()).collect();
    for start in 0..=supports.len() - b {
        let agg = aggregate_window(&supports[start..start + b])
            .expect("supports share node count");
        match agg.diameter() {
            None => {
                return Err(AnalysisError::NonCompliant(format!(
                    "window starting at round {} is not strongly connected",
                    start + 1
                )))
            }
            Some(d) if d > params.diameter_delta => {
                return Err(AnalysisError::NonCompliant(format!(
                    "window starting at round {} has diameter {d} > {}",
                    start + 1,
                    params.diameter_delta
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Product-decay check: for each `t`, form all backward products
/// `P(t, s) = W(t) ... W(s)` by brute force, estimate the limit vector
/// from the rows of the longest product, and require every entry of every
/// product to stay within `2 * lambda^(t-s)` of it.
pub fn verify_lemma1(
    w_sequence: &[WeightMatrix],
    params: &BoundParams,
) -> Result<VerificationReport, AnalysisError> {
    check_sequence_compliance(w_sequence, params)?;
    let n = w_sequence[0].n_nodes();
    let horizon = w_sequence.len();
    let margins = crate::exec::try_map_range(horizon, |idx| {
        let t = idx + 1;
        // products[s - 1] = P(t, s)
        let mut products: Vec<WeightMatrix> = Vec::with_capacity(t);
        let mut acc = w_sequence[t - 1].clone();
        products.push(acc.clone());
        for s in (1..t).rev() {
            acc = mat_mul(&acc, &w_sequence[s - 1]);
            products.push(acc.clone());
        }
        products.reverse();
        for p in &products {
            assert_column_stochastic(p)?;
        }
        // Estimated limit vector: row means of the longest product.
        let longest = &products[0];
        let phi: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| longest.entry(i, j)).sum::<f64>() / n as f64)
            .collect();
        let phi_sum: f64 = phi.iter().sum();
        if phi.iter().any(|&p| p < -BOUND_SLACK) || (phi_sum - 1.0).abs() > BOUND_SLACK {
            return Err(AnalysisError::NonCompliant(format!(
                "estimated limit vector at round {t} is not stochastic (sum {phi_sum})"
            )));
        }
        let mut margin = f64::INFINITY;
        for (s_idx, p) in products.iter().enumerate() {
            let s = s_idx + 1;
            let envelope = params.lemma_k * params.lambda.powi((t - s) as i32);
            for i in 0..n {
                for j in 0..n {
                    margin = margin.min(envelope - (p.entry(i, j) - phi[i]).abs());
                }
            }
        }
        Ok(RoundMargin { round: t, margin })
    })?;
    Ok(VerificationReport::from_margins("lemma1", margins))
}

/// Row-sum regime check: `min_i [W(t)...W(1) 1]_i` must clear
/// `delta^(DB)` before round `DB` and `N * delta^(DB)` from then on.
pub fn verify_lemma2(
    w_sequence: &[WeightMatrix],
    params: &BoundParams,
) -> Result<VerificationReport, AnalysisError> {
    check_sequence_compliance(w_sequence, params)?;
    let n = w_sequence[0].n_nodes();
    let switch = params.regime_switch();
    let floor = params.window_floor();
    let mut margins = Vec::with_capacity(w_sequence.len());
    let mut acc = w_sequence[0].clone();
    for t in 1..=w_sequence.len() {
        if t > 1 {
            acc = mat_mul(&w_sequence[t - 1], &acc);
        }
        assert_column_stochastic(&acc)?;
        let min_row_sum = (0..n)
            .map(|i| acc.row_sum(i))
            .fold(f64::INFINITY, f64::min);
        let threshold = if t < switch { floor } else { n as f64 * floor };
        margins.push(RoundMargin { round: t, margin: min_row_sum - threshold });
    }
    Ok(VerificationReport::from_margins("lemma2", margins))
}

/// Trajectory-bound check in the requested norm. `trajectory.rounds[t-1]`
/// must hold the state after round `t` and the perturbation injected
/// during it.
pub fn verify_theorem1(
    trajectory: &Trajectory,
    params: &BoundParams,
    norm: Norm,
) -> Result<VerificationReport, AnalysisError> {
    if trajectory.rounds.is_empty() {
        return Err(AnalysisError::EmptyTrajectory);
    }
    let n = trajectory.initial_x.len() as f64;
    let switch = params.regime_switch();
    let (mat_norm, vec_norm): (fn(&[Vec<f64>]) -> f64, fn(&[f64]) -> f64) = match norm {
        Norm::L1 => (mat_l1, vec_l1),
        Norm::L2 => (mat_frobenius, vec_l2),
    };
    let (early_coef, late_coef) = match norm {
        Norm::L1 => (params.lemma_c, params.lemma_c / n),
        Norm::L2 => (params.lemma_c * n.sqrt(), params.lemma_c / n.sqrt()),
    };
    let norm0 = mat_norm(&trajectory.initial_x);
    let mut lam_pow = 1.0; // lambda^(t-1)
    let mut eps_tail = 0.0; // sum_s lambda^(t-s) ||eps(s)||
    let mut margins = Vec::with_capacity(trajectory.rounds.len());
    for (idx, round) in trajectory.rounds.iter().enumerate() {
        let t = idx + 1;
        if t > 1 {
            lam_pow *= params.lambda;
            eps_tail *= params.lambda;
        }
        eps_tail += mat_norm(&round.eps);
        let coef = if t < switch { early_coef } else { late_coef };
        let bound = coef * (lam_pow * norm0 + eps_tail);
        let mean = mean_row(&round.x);
        let observed = round
            .y
            .iter()
            .map(|y| vec_norm(&sub(y, &mean)))
            .fold(0.0, f64::max);
        margins.push(RoundMargin { round: t, margin: bound - observed });
    }
    let name = match norm {
        Norm::L1 => "theorem1_l1",
        Norm::L2 => "theorem1_l2",
    };
    Ok(VerificationReport::from_margins(name, margins))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
