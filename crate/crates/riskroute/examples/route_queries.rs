//! Runs the reduced pipeline end to end, then routes individual queries
//! at a chosen operating point, showing the two-stage decision: a cheap
//! state-free acceptance test, then a utility argmax only on deferral.

use riskroute::calibration::ThresholdTable;
use riskroute::config::RunConfig;
use riskroute::dataset::{load_tabular, Split};
use riskroute::pipeline::{pipeline_states, run_pipeline, PipelinePaths};
use riskroute::router::{route_one, OperatingPoint};

fn reduced_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.dataset.n_queries = 6_000;
    cfg.dataset.embedding_dim = 16;
    cfg.teacher.hidden = 64;
    cfg.teacher.epochs = 10;
    cfg.gate.hidden = 64;
    cfg.gate.epochs = 15;
    cfg.calibration.n_lambda = 8;
    cfg
}

fn main() {
    let cfg = reduced_config();
    let paths = PipelinePaths::new("target/example-runs/route_queries");
    run_pipeline(&cfg, &paths).expect("pipeline runs");

    let ds = load_tabular(&paths.dataset()).expect("dataset loads");
    let (teacher, _) = riskroute::artifact::load_teacher(&paths.teacher()).expect("teacher");
    let (gate, _) = riskroute::artifact::load_gate(&paths.gate()).expect("gate");
    let table = ThresholdTable::load(&paths.thresholds()).expect("thresholds");
    let deployment = cfg.deployment().expect("profile");
    let states = pipeline_states(&cfg, ds.queries.len());

    let op = OperatingPoint {
        lambda: table.lambda_grid[4],
        alpha: 0.01,
    };
    println!(
        "operating point: lambda {:.3}, alpha {}, threshold {:.4}\n",
        op.lambda,
        op.alpha,
        table.lookup(op.lambda, op.alpha).expect("in table")
    );

    let defer = cfg.sweep.defer.clone();
    for &i in ds.split_indices(Split::Test).iter().take(8) {
        let outcome = route_one(
            &ds.queries[i],
            &states[i],
            op,
            &gate,
            &table,
            &teacher,
            &deployment,
            &defer,
        )
        .expect("routes");
        println!(
            "query {i:>4}: {} -> {:<10} correct {} cost {:.4}",
            if outcome.accepted_locally { "accept" } else { "defer " },
            outcome.model_id,
            outcome.correctness,
            outcome.cost,
        );
    }
}
