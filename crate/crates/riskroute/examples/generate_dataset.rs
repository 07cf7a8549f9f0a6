//! Generates a synthetic routing dataset and prints the statistics that
//! make it suitable for router training: per-model accuracy ordered by
//! size, a substantial answerable subset, and fixed split fractions.

use riskroute::config::RunConfig;
use riskroute::dataset::{generate_synthetic, save_tabular, load_tabular, Split};
use riskroute::rng::{stream, StreamRole};

fn main() {
    let cfg = RunConfig::default();
    let deployment = cfg.deployment().expect("default profile is valid");
    let mut gen_cfg = cfg.dataset.clone();
    gen_cfg.n_queries = 5_000;

    let mut rng = stream(cfg.seed, StreamRole::DatasetGen);
    let (ds, _) =
        generate_synthetic(&gen_cfg, &deployment.pool.model_ids(), &mut rng).expect("generates");

    println!("{} queries, embedding dim {}", ds.queries.len(), ds.embedding_dim);
    for (m, id) in ds.model_ids.iter().enumerate() {
        let acc: f64 = ds
            .queries
            .iter()
            .map(|q| f64::from(q.correctness[m]))
            .sum::<f64>()
            / ds.queries.len() as f64;
        println!("  {id:>10}: marginal accuracy {acc:.4}");
    }
    let answerable = ds
        .queries
        .iter()
        .filter(|q| q.correctness.contains(&1))
        .count();
    println!(
        "answerable fraction {:.3} ({} of {})",
        answerable as f64 / ds.queries.len() as f64,
        answerable,
        ds.queries.len()
    );
    for split in [Split::Train, Split::Cal, Split::Test] {
        println!("  {split:?}: {} queries", ds.split_indices(split).len());
    }

    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("dataset.csv");
    save_tabular(&ds, &path).expect("saves");
    let back = load_tabular(&path).expect("loads");
    assert_eq!(ds, back);
    println!(
        "tabular round trip is exact ({} bytes)",
        std::fs::metadata(&path).unwrap().len()
    );
}
