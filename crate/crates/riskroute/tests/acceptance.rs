//! End-to-end acceptance gate. Runs the full pipeline on the bundled desk
//! configuration in a fresh directory, then every verification criterion,
//! printing one line per criterion (visible with `--nocapture` or on
//! failure).

use std::path::Path;

use riskroute::config::RunConfig;
use riskroute::pipeline::PipelinePaths;
use riskroute::verify::run_all;

#[test]
fn acceptance_criteria_all_pass() {
    let config_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.toml");
    let cfg = RunConfig::load(&config_path).expect("bundled config loads");
    let dir = tempfile::tempdir().expect("tempdir");
    let paths = PipelinePaths::new(dir.path());

    let results = run_all(&cfg, &paths).expect("verification harness runs");
    assert_eq!(results.len(), 9);
    let mut failed = Vec::new();
    for r in &results {
        println!("{}", r.line());
        if !r.pass {
            failed.push(r.id);
        }
    }
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
