//! Optimizers driving the protocol, and the experiment loop.
//!
//! `SGAP` injects `-gamma * g` as the round perturbation; `MSGAP` first
//! folds the gradient into a momentum buffer. `SGP` and `MSGP` are the
//! same perturbations run over uniform out-degree weighting — the code
//! path is shared and only the weight columns differ, so the baselines are
//! exact specializations. `SADDOPT` is the gradient-tracking baseline: it
//! additionally mixes a running estimate of the global gradient, which
//! doubles the communicated payload per edge.
//!
//! Gradients are always evaluated at the corrected parameter from the end
//! of the previous round, and sampling is keyed by `(seed, round, node)`,
//! so a `(config, seed)` pair fully determines the run.
//!
//! Per-round communication is charged per directed edge (self-loops
//! included): `d + 1` scalars for a parameter plus normalizer, one more
//! for the transmitted weight under adaptive weighting, and `2d + 1` for
//! gradient tracking.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analysis::{compute_bound_params, AnalysisError, BoundParams};
use crate::numeric::{mat_l1, mean_row, sub, vec_l2};
use crate::problems::Problem;
use crate::protocol::{
    matrix_form_round, NetworkState, Norm, Perturbation, ProtocolError, Trajectory,
};
use crate::rng::{keyed_rng, stream};
use crate::topology::{generate_edges, validate_assumption1, EdgeSet, GraphSpec, TopologyError};
use crate::weighting::{
    analytic_delta, assemble_matrix, uniform_column, WeightMatrix, WeightingMethod,
};

use rand::Rng;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("invalid experiment: {0}")]
    Invalid(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("non-finite {metric} at round {round}")]
    NonFinite { metric: String, round: usize },
}

// ---------------------------------------------------------------------------
// Optimizer specification and state
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgap,
    Msgap,
    Sgp,
    Msgp,
    Saddopt,
}

impl OptimizerKind {
    /// The push-sum baselines are defined over uniform weighting; the
    /// adaptive algorithms use whatever the experiment configures.
    pub fn forces_uniform_weighting(self) -> bool {
        matches!(self, OptimizerKind::Sgp | OptimizerKind::Msgp | OptimizerKind::Saddopt)
    }

    fn uses_momentum(self) -> bool {
        matches!(self, OptimizerKind::Msgap | OptimizerKind::Msgp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub gamma: f64,
    #[serde(default)]
    pub beta: f64,
}

impl OptimizerSpec {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0) {
            return Err(format!("learning rate gamma = {} must be > 0", self.gamma));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(format!("momentum rate beta = {} outside [0, 1)", self.beta));
        }
        Ok(())
    }
}

/// Mutable optimizer buffers. Momentum starts at zero; the tracking
/// fields are used by the gradient-tracking baseline only.
#[derive(Clone, Debug, Default)]
pub struct OptimizerState {
    pub momentum: Vec<Vec<f64>>,
    pub tracker: Vec<Vec<f64>>,
    pub prev_grad: Vec<Vec<f64>>,
}

impl OptimizerState {
    pub fn zeros(n: usize, d: usize) -> Self {
        OptimizerState {
            momentum: vec![vec![0.0; d]; n],
            tracker: Vec::new(),
            prev_grad: Vec::new(),
        }
    }
}

/// `eps_i = -gamma * g_i`.
pub fn sgap_perturbation(grads: &[Vec<f64>], gamma: f64) -> Perturbation {
    Perturbation::from_rows(
        grads
            .iter()
            .map(|g| g.iter().map(|v| -gamma * v).collect())
            .collect(),
    )
}

/// `m_i <- beta * m_i + g_i; eps_i = -gamma * m_i`. With `beta = 0` the
/// output matches [`sgap_perturbation`] bit for bit.
pub fn msgap_perturbation(
    state: &mut OptimizerState,
    grads: &[Vec<f64>],
    gamma: f64,
    beta: f64,
) -> Perturbation {
    for (m, g) in state.momentum.iter_mut().zip(grads) {
        for (mv, gv) in m.iter_mut().zip(g) {
            *mv = beta * *mv + gv;
        }
    }
    Perturbation::from_rows(
        state
            .momentum
            .iter()
            .map(|m| m.iter().map(|v| -gamma * v).collect())
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// Gradient-tracking baseline
// ---------------------------------------------------------------------------

/// The x/a/y triple of the gradient-tracking baseline, which does not use
/// adjacency buffers.
#[derive(Clone, Debug)]
pub struct SaddoptNetwork {
    pub x: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    pub y: Vec<Vec<f64>>,
}

impl SaddoptNetwork {
    pub fn new(x0: Vec<Vec<f64>>) -> Self {
        let n = x0.len();
        SaddoptNetwork { y: x0.clone(), a: vec![1.0; n], x: x0 }
    }

    pub fn mean_param(&self) -> Vec<f64> {
        mean_row(&self.x)
    }
}

/// One round of push-sum gradient tracking with uniform weights:
/// `x <- W x - gamma z`, `a <- W a`, `y = x / a`,
/// `z <- W z + g(y_new) - g(y_old)`.
pub fn saddopt_round(
    opt: &mut OptimizerState,
    net: &mut SaddoptNetwork,
    problem: &Problem,
    edges: &EdgeSet,
    gamma: f64,
    seed: u64,
    t: u64,
) -> Result<WeightMatrix, RunError> {
    let n = net.x.len();
    if opt.tracker.is_empty() {
        // First round: the tracker starts at the stochastic gradient of
        // the initial corrected parameter.
        opt.tracker = (0..n)
            .map(|i| problem.stochastic_grad(i, &net.y[i], seed, 0))
            .collect();
        opt.prev_grad = opt.tracker.clone();
    }
    let columns: Vec<Vec<f64>> = (0..n).map(|i| uniform_column(edges, i)).collect();
    let w = assemble_matrix(&columns, edges).map_err(ProtocolError::Weighting)?;
    let zero = vec![vec![0.0; net.x[0].len()]; n];
    let (x_mixed, a_new, _) = matrix_form_round(&net.x, &net.a, &zero, &w)?;
    let (z_mixed, _, _) = matrix_form_round(&opt.tracker, &net.a, &zero, &w)?;
    for (i, &a) in a_new.iter().enumerate() {
        if a <= crate::protocol::NORMALIZER_FLOOR {
            return Err(ProtocolError::NormalizerUnderflow { node: i, value: a }.into());
        }
    }
    let x_new: Vec<Vec<f64>> = x_mixed
        .iter()
        .zip(&opt.tracker)
        .map(|(xm, z)| xm.iter().zip(z).map(|(x, z)| x - gamma * z).collect())
        .collect();
    let y_new: Vec<Vec<f64>> = x_new
        .iter()
        .zip(&a_new)
        .map(|(x, &a)| x.iter().map(|v| v / a).collect())
        .collect();
    let grads_new: Vec<Vec<f64>> = (0..n)
        .map(|i| problem.stochastic_grad(i, &y_new[i], seed, t))
        .collect();
    opt.tracker = z_mixed
        .iter()
        .zip(&grads_new)
        .zip(&opt.prev_grad)
        .map(|((zm, gn), go)| {
            zm.iter()
                .zip(gn.iter().zip(go))
                .map(|(z, (g_new, g_old))| z + g_new - g_old)
                .collect()
        })
        .collect();
    opt.prev_grad = grads_new;
    net.x = x_new;
    net.a = a_new;
    net.y = y_new;
    Ok(w)
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Exact CSV schema of the per-round metrics file.
pub const METRICS_CSV_HEADER: &str =
    "t,loss,grad_norm_sq,cons_l1_max,cons_l1_mean,cons_l2_mean,bound_l1,scalars_sent,lemma5_resid,lemma10_resid";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub t: usize,
    pub loss: f64,
    pub grad_norm_sq: f64,
    pub cons_l1_max: f64,
    pub cons_l1_mean: f64,
    pub cons_l2_mean: f64,
    pub bound_l1: f64,
    pub scalars_sent: u64,
    pub lemma5_resid: f64,
    pub lemma10_resid: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn final_row(&self) -> &MetricsRow {
        self.rows.last().expect("at least the initial record")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        for row in &self.rows {
            writer.serialize(row)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Mean of the per-round mean L1 consensus distance.
    pub fn mean_consensus(&self) -> f64 {
        self.rows.iter().map(|r| r.cons_l1_mean).sum::<f64>() / self.rows.len() as f64
    }

    pub fn total_scalars_sent(&self) -> u64 {
        self.rows.iter().map(|r| r.scalars_sent).sum()
    }
}

/// Full artifact set of one traced run: metrics plus everything the
/// verifiers need (trajectory, weight sequence, averaged series).
#[derive(Clone, Debug)]
pub struct RunTrace {
    pub metrics: MetricsLog,
    pub trajectory: Trajectory,
    pub weights: Vec<WeightMatrix>,
    /// Network-average parameter per recorded round, index 0 = round 0.
    pub avg_params: Vec<Vec<f64>>,
    /// Network-average stochastic gradient per executed round.
    pub avg_grads: Vec<Vec<f64>>,
    /// Bound constants of the run (absent for the tracking baseline).
    pub bound: Option<BoundParams>,
    /// Smallest nonzero weight entry observed across all rounds.
    pub min_weight_entry: f64,
    /// The method's analytic weight floor.
    pub analytic_delta: f64,
    pub gamma: f64,
    pub beta: f64,
}

// ---------------------------------------------------------------------------
// Experiment loop
// ---------------------------------------------------------------------------

fn check_finite(value: f64, metric: &str, round: usize) -> Result<f64, RunError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(RunError::NonFinite { metric: metric.to_string(), round })
    }
}

fn scalars_per_edge(kind: OptimizerKind, weighting: &WeightingMethod, d: usize) -> u64 {
    let d = d as u64;
    match kind {
        OptimizerKind::Saddopt => 2 * d + 1,
        _ => match weighting {
            // Parameter vector plus normalizer, plus the pushed weight
            // scalar under adaptive weighting.
            WeightingMethod::UniformOutDegree => d + 1,
            WeightingMethod::Moreau(_) => d + 2,
        },
    }
}

/// Initial node parameters: uniform in [-1, 1]^d, keyed per node.
pub fn initial_params(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            let mut rng = keyed_rng(&[seed, stream::INIT_PARAMS, i as u64]);
            (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
        })
        .collect()
}

/// Run `horizon_t - 1` rounds and record per-round metrics; row 0 is the
/// initial state. Deterministic given `(problem, specs, seed)`.
pub fn run_experiment(
    problem: &Problem,
    graph: &GraphSpec,
    optimizer: &OptimizerSpec,
    weighting: &WeightingMethod,
    horizon_t: usize,
    seed: u64,
) -> Result<MetricsLog, RunError> {
    run_experiment_traced(problem, graph, optimizer, weighting, horizon_t, seed)
        .map(|trace| trace.metrics)
}

/// As [`run_experiment`], additionally returning the trajectory, the
/// weight-matrix sequence, and the averaged series the identity checks
/// consume.
pub fn run_experiment_traced(
    problem: &Problem,
    graph: &GraphSpec,
    optimizer: &OptimizerSpec,
    weighting: &WeightingMethod,
    horizon_t: usize,
    seed: u64,
) -> Result<RunTrace, RunError> {
    graph.validate().map_err(|e| RunError::Invalid(e.to_string()))?;
    optimizer.validate().map_err(RunError::Invalid)?;
    if horizon_t == 0 {
        return Err(RunError::Invalid("horizon T must be >= 1".into()));
    }
    let n = problem.n_nodes();
    let d = problem.dim();
    if graph.n_nodes != n {
        return Err(RunError::Invalid(format!(
            "graph has {} nodes but the problem has {n}",
            graph.n_nodes
        )));
    }
    let kind = optimizer.kind;
    let method = if kind.forces_uniform_weighting() {
        WeightingMethod::UniformOutDegree
    } else {
        *weighting
    };
    let delta = analytic_delta(&method, graph.max_out_degree());

    // Connectivity constants, measured over the run horizon (or one
    // generator period for very short runs).
    let bound = if horizon_t >= 2 {
        let check_horizon = (horizon_t - 1).max(4 * graph.period_b);
        let report = validate_assumption1(graph, check_horizon);
        let diameter = report.diameter_delta.ok_or_else(|| {
            RunError::Invalid(format!(
                "graph sequence violates B-strong connectivity at window {:?}",
                report.first_violating_window
            ))
        })?;
        if kind == OptimizerKind::Saddopt {
            // The trajectory bound applies to the perturbation-driven
            // protocol only; connectivity is still enforced.
            None
        } else {
            Some(compute_bound_params(delta, diameter, graph.period_b)?)
        }
    } else {
        None
    };

    let x0 = initial_params(n, d, seed);
    let norm0_l1 = mat_l1(&x0);
    let per_edge = scalars_per_edge(kind, &method, d);

    let mut trajectory = Trajectory::start(x0.clone());
    let mut weights: Vec<WeightMatrix> = Vec::with_capacity(horizon_t.saturating_sub(1));
    let mut avg_params: Vec<Vec<f64>> = Vec::with_capacity(horizon_t);
    let mut avg_grads: Vec<Vec<f64>> = Vec::with_capacity(horizon_t.saturating_sub(1));
    let mut opt_state = OptimizerState::zeros(n, d);
    let mut metrics = MetricsLog::default();
    let mut min_weight_entry = f64::INFINITY;

    // Protocol state for the perturbation-driven algorithms, matrix state
    // for the tracking baseline.
    let mut net: Option<NetworkState> = None;
    let mut tracking_net: Option<SaddoptNetwork> = None;
    if kind == OptimizerKind::Saddopt {
        tracking_net = Some(SaddoptNetwork::new(x0.clone()));
    } else {
        net = Some(NetworkState::new(x0.clone(), graph.period_b)?);
    }

    let mean0 = mean_row(&x0);
    avg_params.push(mean0.clone());
    let initial_row = MetricsRow {
        t: 0,
        loss: check_finite(problem.global_loss(&mean0), "loss", 0)?,
        grad_norm_sq: check_finite(
            vec_l2(&problem.global_grad(&mean0)).powi(2),
            "grad_norm_sq",
            0,
        )?,
        cons_l1_max: 0.0,
        cons_l1_mean: 0.0,
        cons_l2_mean: 0.0,
        bound_l1: bound.map_or(0.0, |b| b.lemma_c * norm0_l1),
        scalars_sent: 0,
        lemma5_resid: 0.0,
        lemma10_resid: 0.0,
    };
    // Row 0 consensus comes from the actual spread of the initial state.
    let (c1max, c1mean, c2mean) = match (&net, &tracking_net) {
        (Some(net), _) => consensus_stats_net(net),
        (_, Some(tn)) => consensus_stats_rows(&tn.y, &tn.x),
        _ => unreachable!(),
    };
    metrics.rows.push(MetricsRow {
        cons_l1_max: c1max,
        cons_l1_mean: c1mean,
        cons_l2_mean: c2mean,
        ..initial_row
    });

    let mut lam_pow = 1.0; // lambda^(t-1)
    let mut eps_tail = 0.0; // sum_s lambda^(t-s) ||eps(s)||_1
    let mut prev_zbar: Option<Vec<f64>> = None;

    for t in 1..horizon_t {
        let edges = generate_edges(graph, t);
        let w;
        let gbar;
        let mbar_after; // node-average momentum after this round's update
        let eps_l1;
        match kind {
            OptimizerKind::Saddopt => {
                let tn = tracking_net.as_mut().unwrap();
                w = saddopt_round(
                    &mut opt_state,
                    tn,
                    problem,
                    &edges,
                    optimizer.gamma,
                    seed,
                    t as u64,
                )?;
                gbar = mean_row(&opt_state.prev_grad);
                mbar_after = vec![0.0; d];
                eps_l1 = 0.0;
                trajectory.rounds.push(crate::protocol::TrajectoryRound {
                    x: tn.x.clone(),
                    a: tn.a.clone(),
                    y: tn.y.clone(),
                    eps: opt_state
                        .tracker
                        .iter()
                        .map(|z| z.iter().map(|v| -optimizer.gamma * v).collect())
                        .collect(),
                });
            }
            _ => {
                let state = net.as_mut().unwrap();
                let y = state.corrected();
                let grads: Vec<Vec<f64>> = (0..n)
                    .map(|i| problem.stochastic_grad(i, &y[i], seed, t as u64))
                    .collect();
                gbar = mean_row(&grads);
                let eps = if kind.uses_momentum() {
                    msgap_perturbation(&mut opt_state, &grads, optimizer.gamma, optimizer.beta)
                } else {
                    sgap_perturbation(&grads, optimizer.gamma)
                };
                mbar_after = if kind.uses_momentum() {
                    mean_row(&opt_state.momentum)
                } else {
                    gbar.clone()
                };
                eps_l1 = mat_l1(&eps.per_node);
                w = state.advance(&eps, &edges, &method)?;
                trajectory.record(state, &eps);
            }
        }
        min_weight_entry = min_weight_entry.min(w.min_nonzero());
        if w.min_nonzero() + 1e-15 < delta {
            return Err(RunError::Invalid(format!(
                "round {t}: weight entry {} fell below the analytic floor {delta}",
                w.min_nonzero()
            )));
        }

        // Metrics for this round.
        let last = trajectory.rounds.last().unwrap();
        let mean = mean_row(&last.x);
        let dists_l1: Vec<f64> =
            last.y.iter().map(|y| crate::numeric::vec_l1(&sub(y, &mean))).collect();
        let dists_l2: Vec<f64> = last.y.iter().map(|y| vec_l2(&sub(y, &mean))).collect();
        let bound_l1 = match (&bound, kind) {
            (Some(b), k) if k != OptimizerKind::Saddopt => {
                if t > 1 {
                    lam_pow *= b.lambda;
                    eps_tail *= b.lambda;
                }
                eps_tail += eps_l1;
                let coef = if t < b.regime_switch() {
                    b.lemma_c
                } else {
                    b.lemma_c / n as f64
                };
                coef * (lam_pow * norm0_l1 + eps_tail)
            }
            _ => 0.0,
        };

        // Exact step identities of the averaged iterates.
        let beta = optimizer.beta;
        let (lemma5_resid, lemma10_resid) = if kind == OptimizerKind::Saddopt {
            (0.0, 0.0)
        } else {
            let prev_mean = avg_params.last().unwrap();
            let zbar: Vec<f64> = if kind.uses_momentum() {
                mean.iter()
                    .zip(prev_mean)
                    .map(|(x, px)| (x - beta * px) / (1.0 - beta))
                    .collect()
            } else {
                mean.clone()
            };
            let z_prev = prev_zbar.take().unwrap_or_else(|| avg_params[0].clone());
            let gamma_eff = optimizer.gamma / (1.0 - if kind.uses_momentum() { beta } else { 0.0 });
            let r5 = vec_l2(
                &zbar
                    .iter()
                    .zip(&z_prev)
                    .zip(&gbar)
                    .map(|((z, zp), g)| z - zp + gamma_eff * g)
                    .collect::<Vec<_>>(),
            );
            let r10 = vec_l2(
                &mean
                    .iter()
                    .zip(prev_mean)
                    .zip(&mbar_after)
                    .map(|((x, px), m)| x - px + optimizer.gamma * m)
                    .collect::<Vec<_>>(),
            );
            prev_zbar = Some(zbar);
            (r5, r10)
        };

        let row = MetricsRow {
            t,
            loss: check_finite(problem.global_loss(&mean), "loss", t)?,
            grad_norm_sq: check_finite(
                vec_l2(&problem.global_grad(&mean)).powi(2),
                "grad_norm_sq",
                t,
            )?,
            cons_l1_max: check_finite(
                dists_l1.iter().copied().fold(0.0, f64::max),
                "cons_l1_max",
                t,
            )?,
            cons_l1_mean: dists_l1.iter().sum::<f64>() / n as f64,
            cons_l2_mean: dists_l2.iter().sum::<f64>() / n as f64,
            bound_l1: check_finite(bound_l1, "bound_l1", t)?,
            scalars_sent: edges.edge_count() as u64 * per_edge,
            lemma5_resid,
            lemma10_resid,
        };
        metrics.rows.push(row);
        avg_params.push(mean);
        avg_grads.push(gbar);
        weights.push(w);
    }

    Ok(RunTrace {
        metrics,
        trajectory,
        weights,
        avg_params,
        avg_grads,
        bound,
        min_weight_entry,
        analytic_delta: delta,
        gamma: optimizer.gamma,
        beta: optimizer.beta,
    })
}

/// Tolerance on the exact per-round step identities.
pub const IDENTITY_TOL: f64 = 1e-10;

/// Check the exact averaged-iterate identities of a recorded run: the
/// momentum-average and parameter-average recursions, conservation of the
/// parameter total and of the normalizer total, and the summed
/// momentum-deviation inequality. Not applicable to the tracking baseline,
/// whose updates do not conserve the parameter total.
pub fn verify_identities(trace: &RunTrace) -> crate::analysis::VerificationReport {
    use crate::analysis::{RoundMargin, VerificationReport};
    let n = trace.trajectory.initial_x.len() as f64;
    let d = trace.trajectory.initial_x[0].len();
    let mut details = Vec::with_capacity(trace.metrics.rows.len());
    // Running column totals of X0 + injected perturbations.
    let mut expected_total: Vec<f64> = (0..d)
        .map(|k| trace.trajectory.initial_x.iter().map(|r| r[k]).sum())
        .collect();
    for (idx, round) in trace.trajectory.rounds.iter().enumerate() {
        let t = idx + 1;
        let row = &trace.metrics.rows[t];
        for (acc, k) in expected_total.iter_mut().zip(0..d) {
            *acc += round.eps.iter().map(|r| r[k]).sum::<f64>();
        }
        let mass_dev = (0..d)
            .map(|k| {
                let total: f64 = round.x.iter().map(|r| r[k]).sum();
                (total - expected_total[k]).abs()
            })
            .fold(0.0, f64::max);
        let norm_dev = (round.a.iter().sum::<f64>() - n).abs();
        let worst = row
            .lemma5_resid
            .max(row.lemma10_resid)
            .max(mass_dev)
            .max(norm_dev);
        details.push(RoundMargin { round: t, margin: IDENTITY_TOL - worst });
    }
    // Summed momentum-deviation inequality over the whole run.
    if !trace.avg_grads.is_empty() {
        let beta = trace.beta;
        let mut lhs = 0.0;
        let mut rhs = 0.0;
        let mut prev = trace.avg_params[0].clone();
        for (t, gbar) in trace.avg_grads.iter().enumerate() {
            let mean = &trace.avg_params[t + 1];
            let zbar: Vec<f64> = if beta > 0.0 {
                mean.iter()
                    .zip(&prev)
                    .map(|(x, px)| (x - beta * px) / (1.0 - beta))
                    .collect()
            } else {
                mean.clone()
            };
            lhs += crate::numeric::vec_l2_sq(
                &zbar.iter().zip(mean).map(|(z, x)| z - x).collect::<Vec<_>>(),
            );
            rhs += crate::numeric::vec_l2_sq(gbar);
            prev = mean.clone();
        }
        let rhs = trace.gamma * trace.gamma * beta * beta / (1.0 - beta).powi(4) * rhs;
        details.push(RoundMargin { round: trace.trajectory.rounds.len() + 1, margin: rhs - lhs });
    }
    VerificationReport::from_margins("identities", details)
}

fn consensus_stats_net(net: &NetworkState) -> (f64, f64, f64) {
    let l1 = net.consensus_distance(Norm::L1);
    let l2 = net.consensus_distance(Norm::L2);
    let n = l1.len() as f64;
    (
        l1.iter().copied().fold(0.0, f64::max),
        l1.iter().sum::<f64>() / n,
        l2.iter().sum::<f64>() / n,
    )
}

fn consensus_stats_rows(y: &[Vec<f64>], x: &[Vec<f64>]) -> (f64, f64, f64) {
    let mean = mean_row(x);
    let l1: Vec<f64> = y.iter().map(|r| crate::numeric::vec_l1(&sub(r, &mean))).collect();
    let l2: Vec<f64> = y.iter().map(|r| vec_l2(&sub(r, &mean))).collect();
    let n = l1.len() as f64;
    (
        l1.iter().copied().fold(0.0, f64::max),
        l1.iter().sum::<f64>() / n,
        l2.iter().sum::<f64>() / n,
    )
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{make_quadratic, ProblemKind, ProblemSpec, QuadraticProblem};
    use crate::topology::TopologyKind;
    use crate::weighting::MoreauParams;
    use approx::assert_abs_diff_eq;

    fn moreau() -> WeightingMethod {
        WeightingMethod::Moreau(MoreauParams::new(0.1, 0.01, 1.0))
    }

    fn quad_problem(n: usize, d: usize, sigma: f64, seed: u64) -> Problem {
        Problem::Quadratic(make_quadratic(&ProblemSpec {
            kind: ProblemKind::Quadratic,
            dim_d: d,
            n_nodes: n,
            heterogeneity: 1.0,
            noise_sigma: sigma,
            seed,
        }))
    }

    #[test]
    fn sgap_perturbation_is_scaled_negative_gradient() {
        let grads = vec![vec![0.0, 2.0], vec![-1.0, 4.0]];
        let eps = sgap_perturbation(&grads, 0.1);
        assert_eq!(eps.per_node[0], vec![0.0, -0.2]);
        assert_eq!(eps.per_node[1], vec![0.1, -0.4]);
        let zero = sgap_perturbation(&[vec![0.0; 3]], 0.5);
        assert_eq!(zero.per_node[0], vec![0.0; 3]);
    }

    #[test]
    fn msgap_perturbation_accumulates_momentum() {
        let mut state = OptimizerState::zeros(1, 1);
        let eps = msgap_perturbation(&mut state, &[vec![1.0]], 1.0, 0.9);
        assert_eq!(state.momentum[0], vec![1.0]);
        assert_eq!(eps.per_node[0], vec![-1.0]);

        let mut state = OptimizerState::zeros(1, 1);
        msgap_perturbation(&mut state, &[vec![1.0]], 1.0, 0.5);
        let eps = msgap_perturbation(&mut state, &[vec![1.0]], 1.0, 0.5);
        assert_eq!(eps.per_node[0], vec![-1.5]);
    }

    #[test]
    fn msgap_with_zero_beta_matches_sgap_bitwise() {
        let grads = vec![vec![0.3, -1.7], vec![2.5, 0.0]];
        let mut state = OptimizerState::zeros(2, 2);
        let a = msgap_perturbation(&mut state, &grads, 0.07, 0.0);
        let b = sgap_perturbation(&grads, 0.07);
        assert_eq!(a, b);
    }

    #[test]
    fn run_t1_emits_single_initial_record() {
        let problem = quad_problem(3, 2, 0.0, 5);
        let graph = GraphSpec::new(TopologyKind::Full, 3, 1, 5);
        let opt = OptimizerSpec { kind: OptimizerKind::Sgap, gamma: 0.1, beta: 0.0 };
        let log = run_experiment(&problem, &graph, &opt, &moreau(), 1, 5).unwrap();
        assert_eq!(log.rows.len(), 1);
        assert_eq!(log.rows[0].t, 0);
        assert_eq!(log.rows[0].scalars_sent, 0);
    }

    #[test]
    fn sgap_converges_on_symmetric_pair() {
        let problem = Problem::Quadratic(QuadraticProblem::symmetric_pair(0.0));
        let graph = GraphSpec::new(TopologyKind::Full, 2, 1, 1);
        let opt = OptimizerSpec { kind: OptimizerKind::Sgap, gamma: 0.1, beta: 0.0 };
        let log = run_experiment(
            &problem,
            &graph,
            &opt,
            &WeightingMethod::UniformOutDegree,
            500,
            1,
        )
        .unwrap();
        assert!(log.final_row().grad_norm_sq <= 1e-8, "{}", log.final_row().grad_norm_sq);
    }

    #[test]
    fn msgap_beta_zero_is_bit_identical_to_sgap() {
        let problem = quad_problem(4, 3, 0.2, 9);
        let graph = GraphSpec::new(TopologyKind::Divide, 4, 1, 9);
        let sgap = OptimizerSpec { kind: OptimizerKind::Sgap, gamma: 0.05, beta: 0.0 };
        let msgap = OptimizerSpec { kind: OptimizerKind::Msgap, gamma: 0.05, beta: 0.0 };
        let a = run_experiment(&problem, &graph, &sgap, &moreau(), 60, 9).unwrap();
        let b = run_experiment(&problem, &graph, &msgap, &moreau(), 60, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv_string(), b.to_csv_string());
    }

    #[test]
    fn sgp_equals_sgap_with_uniform_weighting() {
        let problem = quad_problem(5, 2, 0.1, 12);
        let graph = GraphSpec::new(TopologyKind::Exp, 5, 3, 12);
        let sgap = OptimizerSpec { kind: OptimizerKind::Sgap, gamma: 0.08, beta: 0.0 };
        let sgp = OptimizerSpec { kind: OptimizerKind::Sgp, gamma: 0.08, beta: 0.0 };
        // SGP forces uniform weighting even when the adaptive method is
        // configured; SGAP over uniform weighting is the same trajectory.
        let a = run_experiment(&problem, &graph, &sgap, &WeightingMethod::UniformOutDegree, 50, 12)
            .unwrap();
        let b = run_experiment(&problem, &graph, &sgp, &moreau(), 50, 12).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn runs_are_deterministic() {
        let problem = quad_problem(4, 2, 0.3, 21);
        let graph = GraphSpec::new(TopologyKind::Random, 4, 4, 21);
        let opt = OptimizerSpec { kind: OptimizerKind::Msgap, gamma: 0.05, beta: 0.8 };
        let a = run_experiment(&problem, &graph, &opt, &moreau(), 40, 21).unwrap();
        let b = run_experiment(&problem, &graph, &opt, &moreau(), 40, 21).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
    }

    #[test]
    fn step_identities_hold_for_msgap() {
        let problem = quad_problem(5, 3, 0.5, 33);
        let graph = GraphSpec::new(TopologyKind::Divide, 5, 1, 33);
        let opt = OptimizerSpec { kind: OptimizerKind::Msgap, gamma: 0.04, beta: 0.8 };
        let trace =
            run_experiment_traced(&problem, &graph, &opt, &moreau(), 120, 33).unwrap();
        for row in &trace.metrics.rows[1..] {
            assert!(row.lemma5_resid <= 1e-10, "round {}: {}", row.t, row.lemma5_resid);
            assert!(row.lemma10_resid <= 1e-10, "round {}: {}", row.t, row.lemma10_resid);
        }
        // Momentum-average telescoping inequality over the whole run.
        let gamma = trace.gamma;
        let beta = trace.beta;
        let mut lhs = 0.0;
        let mut rhs_sum = 0.0;
        let mut prev = trace.avg_params[0].clone();
        for (t, gbar) in trace.avg_grads.iter().enumerate() {
            let mean = &trace.avg_params[t + 1];
            let zbar: Vec<f64> = mean
                .iter()
                .zip(&prev)
                .map(|(x, px)| (x - beta * px) / (1.0 - beta))
                .collect();
            let dev: Vec<f64> = zbar.iter().zip(mean).map(|(z, x)| z - x).collect();
            lhs += crate::numeric::vec_l2_sq(&dev);
            rhs_sum += crate::numeric::vec_l2_sq(gbar);
            prev = mean.clone();
        }
        let rhs = gamma * gamma * beta * beta / (1.0 - beta).powi(4) * rhs_sum;
        assert!(rhs - lhs >= -1e-10, "lhs {lhs} rhs {rhs}");
    }

    #[test]
    fn saddopt_zero_gradients_is_pure_averaging() {
        // All-identical quadratic centers at the initial mean make the
        // gradients vanish at the common point only; use explicit zero
        // curvature instead.
        let zero_mat = vec![vec![vec![0.0]]; 3];
        let problem = Problem::Quadratic(QuadraticProblem::from_components(
            zero_mat,
            vec![vec![0.0]; 3],
            1.0,
            0.0,
        ));
        let graph = GraphSpec::new(TopologyKind::Full, 3, 1, 2);
        let mut opt = OptimizerState::zeros(3, 1);
        let mut net = SaddoptNetwork::new(vec![vec![0.0], vec![3.0], vec![6.0]]);
        let edges = generate_edges(&graph, 1);
        saddopt_round(&mut opt, &mut net, &problem, &edges, 0.5, 2, 1).unwrap();
        for row in &net.x {
            assert_abs_diff_eq!(row[0], 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn saddopt_single_node_is_gradient_descent() {
        let problem = Problem::Quadratic(QuadraticProblem::from_components(
            vec![vec![vec![1.0]]],
            vec![vec![2.0]],
            1.0,
            0.0,
        ));
        let mut opt = OptimizerState::zeros(1, 1);
        let mut net = SaddoptNetwork::new(vec![vec![0.0]]);
        let edges = EdgeSet::self_loops(1);
        let gamma = 0.25;
        let mut expected = 0.0;
        for t in 1..=20 {
            saddopt_round(&mut opt, &mut net, &problem, &edges, gamma, 0, t).unwrap();
            expected -= gamma * (expected - 2.0);
            assert_abs_diff_eq!(net.x[0][0], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn payload_accounting_per_round() {
        let d = 10;
        let n = 6;
        let problem = quad_problem(n, d, 0.0, 4);
        let graph = GraphSpec::new(TopologyKind::Full, n, 1, 4);
        let runs = [
            (OptimizerKind::Saddopt, WeightingMethod::UniformOutDegree, 36 * 21),
            (OptimizerKind::Sgp, WeightingMethod::UniformOutDegree, 36 * 11),
            (OptimizerKind::Sgap, moreau(), 36 * 12),
        ];
        for (kind, method, expected) in runs {
            let opt = OptimizerSpec { kind, gamma: 0.1, beta: 0.0 };
            let log = run_experiment(&problem, &graph, &opt, &method, 3, 4).unwrap();
            assert_eq!(log.rows[1].scalars_sent, expected, "{kind:?}");
            assert_eq!(log.rows[2].scalars_sent, expected, "{kind:?}");
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let problem = quad_problem(3, 2, 0.0, 8);
        let graph = GraphSpec::new(TopologyKind::Full, 4, 1, 8); // wrong N
        let opt = OptimizerSpec { kind: OptimizerKind::Sgap, gamma: 0.1, beta: 0.0 };
        assert!(matches!(
            run_experiment(&problem, &graph, &opt, &moreau(), 10, 8),
            Err(RunError::Invalid(_))
        ));
        let graph = GraphSpec::new(TopologyKind::Full, 3, 1, 8);
        let bad = OptimizerSpec { kind: OptimizerKind::Msgap, gamma: 0.1, beta: 1.0 };
        let err = run_experiment(&problem, &graph, &bad, &moreau(), 10, 8).unwrap_err();
        assert!(err.to_string().contains("beta"));
    }

    #[test]
    fn csv_header_is_stable() {
        let problem = quad_problem(3, 2, 0.0, 5);
        let graph = GraphSpec::new(TopologyKind::Full, 3, 1, 5);
        let opt = OptimizerSpec { kind: OptimizerKind::Sgap, gamma: 0.1, beta: 0.0 };
        let log = run_experiment(&problem, &graph, &opt, &moreau(), 3, 5).unwrap();
        let csv = log.to_csv_string();
        assert_eq!(csv.lines().next().unwrap(), METRICS_CSV_HEADER);
        assert_eq!(csv.lines().count(), 4); // header + T rows
    }
}
