//! Sweeps operating points over the calibrated (lambda, alpha) grid and
//! prints the resulting accuracy-cost Pareto envelope next to the static
//! single-model policies it dominates.

use riskroute::config::RunConfig;
use riskroute::pipeline::{run_pipeline, PipelinePaths, RunSummary};
use riskroute::router::{SweepRow, SWEEP_COLUMNS};

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

fn parse_rows(text: &str) -> Vec<SweepRow> {
    text.lines()
        .skip(1)
        .map(|line| {
            let v: Vec<f64> = line.split(", ").map(|t| t.parse().unwrap()).collect();
            SweepRow {
                lambda: v[0],
                alpha: v[1],
                accuracy: v[2],
                mean_cost: v[3],
                fa_risk: v[4],
                local_rate: v[5],
                false_defer: v[6],
                false_accept: v[7],
            }
        })
        .collect()
}

fn main() {
    let cfg = reduced_config();
    let paths = PipelinePaths::new("target/example-runs/pareto_sweep");
    run_pipeline(&cfg, &paths).expect("pipeline runs");

    let envelope = parse_rows(&std::fs::read_to_string(paths.envelope()).expect("envelope"));
    let summary: RunSummary =
        serde_json::from_str(&std::fs::read_to_string(paths.summary()).expect("summary"))
            .expect("parses");

    println!("static policies:");
    for p in &summary.static_points {
        println!(
            "  always-{:<10} accuracy {:.4} mean cost {:.4}",
            p.model_id, p.accuracy, p.mean_cost
        );
    }
    println!("\nPareto envelope ({}):", SWEEP_COLUMNS);
    for r in &envelope {
        println!(
            "  lambda {:>7.3} alpha {:>6} accuracy {:.4} cost {:.4} accept rate {:.3} fa risk {:.4}",
            r.lambda, r.alpha, r.accuracy, r.mean_cost, r.local_rate, r.fa_risk
        );
    }
    let fi_best = summary
        .full_info
        .iter()
        .map(|p| p.accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    println!("\nfull-information reference peaks at accuracy {fi_best:.4};");
    println!("the deployable envelope above uses only (embedding, lambda) before deferral.");
}
