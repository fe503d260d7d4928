//! Reproduce the statistical-diversity comparison: median final global
//! loss of the adaptive-weighting algorithms versus their uniform
//! push-sum counterparts on the four benchmark topologies with a fully
//! split two-cluster logistic problem.
//!
//!     cargo run --release --example diversity_table -- --horizon 1000

use clap::Parser;

use pushsum_lab::algorithms::{run_experiment, OptimizerKind, OptimizerSpec};
use pushsum_lab::config::WeightingConfig;
use pushsum_lab::exec;
use pushsum_lab::problems::{Problem, ProblemKind, ProblemSpec};
use pushsum_lab::topology::{GraphSpec, TopologyKind};

#[derive(Parser)]
struct Args {
    /// Learning rate of the plain-SGD family (SGAP, SGP).
    #[arg(long, default_value_t = 0.2)]
    gamma_sgd: f64,
    /// Learning rate of the momentum family (MSGAP, MSGP).
    #[arg(long, default_value_t = 0.04)]
    gamma_momentum: f64,
    /// Momentum rate.
    #[arg(long, default_value_t = 0.8)]
    beta: f64,
    #[arg(long, default_value_t = 1000)]
    horizon: usize,
    #[arg(long, value_delimiter = ',', default_values_t = vec![101u64, 202, 303, 404, 505])]
    seeds: Vec<u64>,
}

fn topology(kind: TopologyKind, n: usize) -> GraphSpec {
    let period = match kind {
        TopologyKind::Exp => 3, // one full offset cycle for n = 6
        TopologyKind::Random => 8,
        _ => 1,
    };
    GraphSpec::new(kind, n, period, 0)
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values[values.len() / 2]
}

fn main() {
    let args = Args::parse();
    let n = 6;
    let kinds = [
        TopologyKind::Full,
        TopologyKind::Divide,
        TopologyKind::Exp,
        TopologyKind::Random,
    ];
    let algs = [
        (OptimizerKind::Sgap, args.gamma_sgd, 0.0),
        (OptimizerKind::Sgp, args.gamma_sgd, 0.0),
        (OptimizerKind::Msgap, args.gamma_momentum, args.beta),
        (OptimizerKind::Msgp, args.gamma_momentum, args.beta),
    ];
    let mut grid = Vec::new();
    for kind in kinds {
        for (alg, gamma, beta) in algs {
            for &seed in &args.seeds {
                grid.push((kind, alg, gamma, beta, seed));
            }
        }
    }
    let losses = exec::map_items(&grid, |&(kind, alg, gamma, beta, seed)| {
        let problem = Problem::from_spec(&ProblemSpec {
            kind: ProblemKind::Logistic,
            dim_d: 5,
            n_nodes: n,
            heterogeneity: 1.0,
            noise_sigma: 0.0,
            seed,
        });
        let graph = topology(kind, n);
        let optimizer = OptimizerSpec { kind: alg, gamma, beta };
        let method = WeightingConfig::Moreau { v: 0.1, k: 0.01 }.to_method(gamma);
        run_experiment(&problem, &graph, &optimizer, &method, args.horizon, seed)
            .expect("run")
            .final_row()
            .loss
    });

    println!(
        "{:<8} {:>10} {:>10} {:>10} {:>10}",
        "topology", "sgap", "sgp", "msgap", "msgp"
    );
    for (ki, kind) in kinds.iter().enumerate() {
        let mut meds = Vec::new();
        for ai in 0..algs.len() {
            let vals: Vec<f64> = (0..args.seeds.len())
                .map(|si| losses[(ki * algs.len() + ai) * args.seeds.len() + si])
                .collect();
            meds.push(median(vals));
        }
        println!(
            "{:<8} {:>10.5} {:>10.5} {:>10.5} {:>10.5}   sgap<=sgp: {}  msgap<=msgp: {}",
            format!("{kind:?}"),
            meds[0],
            meds[1],
            meds[2],
            meds[3],
            meds[0] <= meds[1],
            meds[2] <= meds[3],
        );
    }
}
