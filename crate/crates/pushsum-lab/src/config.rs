//! Experiment and sweep configuration: JSON schema, validation, and
//! expansion into runnable pieces.
//!
//! One `ExperimentConfig` fully determines a run. The top-level `seed`
//! feeds every random stream (topology, data, initialization, sampling);
//! the seeds embedded in the sub-specs are overwritten at assembly time so
//! a `(config, seed)` pair is reproducible byte for byte.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::algorithms::{MetricsRow, OptimizerKind, OptimizerSpec, RunTrace};
use crate::problems::{Problem, ProblemSpec};
use crate::topology::{GraphSpec, TopologyKind};
use crate::weighting::{MoreauParams, WeightingMethod};

/// Hard cap on the number of runs a sweep may expand to.
pub const MAX_SWEEP_RUNS: usize = 10_000;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

// ---------------------------------------------------------------------------
// Weighting configuration
// ---------------------------------------------------------------------------

fn default_v() -> f64 {
    0.1
}

fn default_k() -> f64 {
    0.01
}

/// Weighting method as configured. The adaptive method takes its step
/// size from the optimizer at assembly time (it cancels in the weights
/// anyway).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum WeightingConfig {
    Uniform,
    Moreau {
        #[serde(default = "default_v")]
        v: f64,
        #[serde(default = "default_k")]
        k: f64,
    },
}

impl WeightingConfig {
    pub fn to_method(self, gamma: f64) -> WeightingMethod {
        match self {
            WeightingConfig::Uniform => WeightingMethod::UniformOutDegree,
            WeightingConfig::Moreau { v, k } => {
                WeightingMethod::Moreau(MoreauParams::new(v, k, gamma))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Experiment configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub topology: GraphSpec,
    pub problem: ProblemSpec,
    pub optimizer: OptimizerSpec,
    pub weighting: WeightingConfig,
    pub horizon_t: usize,
    pub seed: u64,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
    #[serde(default)]
    pub dump_state: bool,
    #[serde(default)]
    pub dump_data: bool,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: ExperimentConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.topology.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.problem.validate().map_err(ConfigError::Invalid)?;
        self.optimizer.validate().map_err(ConfigError::Invalid)?;
        if let WeightingConfig::Moreau { v, k } = self.weighting {
            MoreauParams::new(v, k, 1.0)
                .validate()
                .map_err(ConfigError::Invalid)?;
        }
        if self.topology.n_nodes != self.problem.n_nodes {
            return Err(ConfigError::Invalid(format!(
                "topology has {} nodes but the problem has {}",
                self.topology.n_nodes, self.problem.n_nodes
            )));
        }
        if self.horizon_t < 2 {
            return Err(ConfigError::Invalid(format!(
                "horizon_t = {} must be >= 2",
                self.horizon_t
            )));
        }
        Ok(())
    }

    /// Runtime pieces with the run seed propagated into every sub-spec.
    pub fn assemble(&self) -> (Problem, GraphSpec, OptimizerSpec, WeightingMethod) {
        let mut graph = self.topology.clone();
        graph.seed = self.seed;
        let mut pspec = self.problem.clone();
        pspec.seed = self.seed;
        let problem = Problem::from_spec(&pspec);
        let method = self.weighting.to_method(self.optimizer.gamma);
        (problem, graph, self.optimizer, method)
    }

    /// Apply the `PUSHSUM_LAB_SEED` override when present.
    pub fn with_env_seed(mut self) -> Result<Self, ConfigError> {
        if let Ok(raw) = std::env::var("PUSHSUM_LAB_SEED") {
            let seed: u64 = raw.parse().map_err(|_| {
                ConfigError::Invalid(format!(
                    "PUSHSUM_LAB_SEED = {raw:?} is not a 64-bit unsigned integer"
                ))
            })?;
            self.seed = seed;
        }
        Ok(self)
    }
}

// ---------------------------------------------------------------------------
// Sweep configuration
// ---------------------------------------------------------------------------

/// Named override lists; an empty axis keeps the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepAxes {
    #[serde(default)]
    pub n_nodes: Vec<usize>,
    #[serde(default)]
    pub topology: Vec<TopologyKind>,
    #[serde(default)]
    pub optimizer: Vec<OptimizerKind>,
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub heterogeneity: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    #[serde(default)]
    pub axes: SweepAxes,
    pub seeds: Vec<u64>,
}

/// One point of the expanded sweep grid.
#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub config: ExperimentConfig,
    pub n_nodes: usize,
    pub topology: TopologyKind,
    pub optimizer: OptimizerKind,
    pub gamma: f64,
    pub heterogeneity: f64,
    pub seed: u64,
}

impl SweepConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: SweepConfig = serde_json::from_str(text)?;
        config.base.validate()?;
        if config.seeds.is_empty() {
            return Err(ConfigError::Invalid("sweep needs at least one seed".into()));
        }
        Ok(config)
    }

    /// Cartesian product of all axes and seeds, in a fixed order.
    pub fn expand(&self) -> Result<Vec<SweepPoint>, ConfigError> {
        fn axis<T: Copy>(values: &[T], base: T) -> Vec<T> {
            if values.is_empty() {
                vec![base]
            } else {
                values.to_vec()
            }
        }
        let n_axis = axis(&self.axes.n_nodes, self.base.topology.n_nodes);
        let topo_axis = axis(&self.axes.topology, self.base.topology.kind);
        let opt_axis = axis(&self.axes.optimizer, self.base.optimizer.kind);
        let gamma_axis = axis(&self.axes.gamma, self.base.optimizer.gamma);
        let het_axis = axis(&self.axes.heterogeneity, self.base.problem.heterogeneity);
        let total = n_axis.len()
            * topo_axis.len()
            * opt_axis.len()
            * gamma_axis.len()
            * het_axis.len()
            * self.seeds.len();
        if total > MAX_SWEEP_RUNS {
            return Err(ConfigError::Invalid(format!(
                "sweep expands to {total} runs, above the {MAX_SWEEP_RUNS} cap"
            )));
        }
        let mut points = Vec::with_capacity(total);
        for &n in &n_axis {
            for &kind in &topo_axis {
                for &opt in &opt_axis {
                    for &gamma in &gamma_axis {
                        for &het in &het_axis {
                            for &seed in &self.seeds {
                                let mut config = self.base.clone();
                                config.topology.n_nodes = n;
                                config.topology.kind = kind;
                                // An explicit split only survives when the
                                // node count stays compatible with it.
                                if n != self.base.topology.n_nodes {
                                    config.topology.cluster_split = None;
                                }
                                config.problem.n_nodes = n;
                                config.optimizer.kind = opt;
                                config.optimizer.gamma = gamma;
                                config.problem.heterogeneity = het;
                                config.seed = seed;
                                config.validate()?;
                                points.push(SweepPoint {
                                    config,
                                    n_nodes: n,
                                    topology: kind,
                                    optimizer: opt,
                                    gamma,
                                    heterogeneity: het,
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
        Ok(points)
    }
}

/// One row of the sweep aggregate CSV.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub n_nodes: usize,
    pub topology: String,
    pub optimizer: String,
    pub gamma: f64,
    pub heterogeneity: f64,
    pub seed: u64,
    pub status: String,
    pub final_loss: f64,
    pub final_grad_norm_sq: f64,
    pub mean_consensus: f64,
    pub total_scalars_sent: u64,
}

// ---------------------------------------------------------------------------
// Run summary
// ---------------------------------------------------------------------------

/// Contents of `summary.json`: final metrics plus a config echo.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub final_metrics: MetricsRow,
    pub min_weight_entry: f64,
    pub analytic_delta: f64,
}

impl RunSummary {
    pub fn from_trace(config: &ExperimentConfig, trace: &RunTrace) -> Self {
        RunSummary {
            config: config.clone(),
            seed: config.seed,
            final_metrics: *trace.metrics.final_row(),
            min_weight_entry: trace.min_weight_entry,
            analytic_delta: trace.analytic_delta,
        }
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::ProblemKind;

    pub fn minimal_config_json() -> String {
        r#"{
            "topology": {"kind": "full", "n_nodes": 3, "period_b": 1, "seed": 0},
            "problem": {"kind": "quadratic", "dim_d": 2, "n_nodes": 3,
                        "heterogeneity": 1.0, "noise_sigma": 0.0, "seed": 0},
            "optimizer": {"kind": "sgap", "gamma": 0.1},
            "weighting": {"method": "moreau"},
            "horizon_t": 5,
            "seed": 7
        }"#
        .to_string()
    }

    #[test]
    fn parse_minimal_config() {
        let config = ExperimentConfig::parse(&minimal_config_json()).unwrap();
        assert_eq!(config.optimizer.kind, OptimizerKind::Sgap);
        assert_eq!(config.optimizer.beta, 0.0);
        assert_eq!(
            config.weighting,
            WeightingConfig::Moreau { v: 0.1, k: 0.01 }
        );
        let (problem, graph, _, _) = config.assemble();
        assert_eq!(problem.n_nodes(), 3);
        assert_eq!(graph.seed, 7);
    }

    #[test]
    fn config_round_trips_through_json() {
        let config = ExperimentConfig::parse(&minimal_config_json()).unwrap();
        let text = serde_json::to_string_pretty(&config).unwrap();
        let reparsed = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(config, reparsed);
    }

    #[test]
    fn validation_catches_cross_field_and_momentum_errors() {
        let mut config = ExperimentConfig::parse(&minimal_config_json()).unwrap();
        config.problem.n_nodes = 4;
        assert!(matches!(config.validate(), Err(ConfigError::Invalid(_))));

        let mut config = ExperimentConfig::parse(&minimal_config_json()).unwrap();
        config.optimizer.beta = 1.0;
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("beta"), "{err}");

        let mut config = ExperimentConfig::parse(&minimal_config_json()).unwrap();
        config.horizon_t = 1;
        assert!(config.validate().is_err());
    }

    #[test]
    fn sweep_expansion_counts_and_guard() {
        let base = ExperimentConfig::parse(&minimal_config_json()).unwrap();
        let sweep = SweepConfig {
            base: base.clone(),
            axes: SweepAxes {
                topology: vec![TopologyKind::Full, TopologyKind::Divide],
                optimizer: vec![OptimizerKind::Sgap, OptimizerKind::Sgp],
                ..SweepAxes::default()
            },
            seeds: vec![1, 2],
        };
        let points = sweep.expand().unwrap();
        assert_eq!(points.len(), 8);

        let empty = SweepConfig { base: base.clone(), axes: SweepAxes::default(), seeds: vec![9] };
        assert_eq!(empty.expand().unwrap().len(), 1);

        let huge = SweepConfig {
            base,
            axes: SweepAxes {
                gamma: (0..101).map(|i| 0.001 * (i + 1) as f64).collect(),
                heterogeneity: (0..101).map(|i| 0.01 * i as f64).collect(),
                ..SweepAxes::default()
            },
            seeds: vec![1],
        };
        assert!(huge.expand().is_err());
    }

    #[test]
    fn sweep_n_nodes_axis_updates_both_specs() {
        let base = ExperimentConfig::parse(&minimal_config_json()).unwrap();
        let sweep = SweepConfig {
            base,
            axes: SweepAxes { n_nodes: vec![4, 8], ..SweepAxes::default() },
            seeds: vec![3],
        };
        for point in sweep.expand().unwrap() {
            assert_eq!(point.config.topology.n_nodes, point.config.problem.n_nodes);
            assert_eq!(point.config.seed, 3);
            assert_eq!(point.config.problem.kind, ProblemKind::Quadratic);
        }
    }
}
