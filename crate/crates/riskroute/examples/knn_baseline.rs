//! Compares the deployable gate against a nearest-neighbor router on the
//! same budget question: accuracy, cost, and on-device serving FLOPs.

use riskroute::config::RunConfig;
use riskroute::dataset::{attach_states, generate_synthetic, Split};
use riskroute::rng::{stream, StreamRole};
use riskroute::router::{knn_probabilities, router_complexity, RouterArtifact};
use riskroute::teacher::{full_info_select, teacher_forward, train_teacher, TeacherConfig};

fn main() {
    let cfg = RunConfig::default();
    let deployment = cfg.deployment().expect("default profile is valid");
    let mut gen_cfg = cfg.dataset.clone();
    gen_cfg.n_queries = 6_000;
    gen_cfg.embedding_dim = 16;

    let mut rng = stream(cfg.seed, StreamRole::DatasetGen);
    let (ds, _) =
        generate_synthetic(&gen_cfg, &deployment.pool.model_ids(), &mut rng).expect("generates");
    let teacher = train_teacher(
        &ds,
        &TeacherConfig {
            hidden: 64,
            epochs: 10,
            ..TeacherConfig::default()
        },
        cfg.seed,
    )
    .expect("trains");

    let states = attach_states(ds.queries.len(), &cfg.cost.comm, cfg.seed);
    let lambda = 1.0;
    let k = cfg.sweep.knn_k;
    let (mut n, mut acc_t, mut cost_t, mut acc_k, mut cost_k) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &i in &ds.split_indices(Split::Test) {
        let q = &ds.queries[i];
        if !q.correctness.contains(&1) {
            continue;
        }
        n += 1.0;
        let costs = deployment.costs(&q.workload(), &states[i]);
        let (_, p_teacher) = teacher_forward(&teacher, &q.embedding).expect("forward");
        let pick = full_info_select(&p_teacher, &costs, lambda);
        acc_t += f64::from(q.correctness[pick]);
        cost_t += costs[pick];
        let p_knn = knn_probabilities(q, &ds, k).expect("knn");
        let pick = full_info_select(&p_knn, &costs, lambda);
        acc_k += f64::from(q.correctness[pick]);
        cost_k += costs[pick];
    }
    println!("utility routing at lambda = {lambda} on {n} answerable test queries:");
    println!("  teacher heads: accuracy {:.4} mean cost {:.4}", acc_t / n, cost_t / n);
    println!("  {k}-nn vote:    accuracy {:.4} mean cost {:.4}", acc_k / n, cost_k / n);

    let n_train = ds.split_indices(Split::Train).len();
    let gate = RouterArtifact::Gate { emb_dim: 384, hidden: 256 };
    let knn = RouterArtifact::Knn { n_train, emb_dim: 384 };
    let (gp, gf) = router_complexity(&gate);
    let (kp, kf) = router_complexity(&knn);
    println!("\nserving complexity at a 384-dim embedding:");
    println!("  gate:  {gp} trained parameters, {gf} FLOPs per query");
    println!("  {k}-nn: {kp} trained parameters, {kf} FLOPs per query (cosine scan)");
    println!("the gate is {:.0}x cheaper per routed query", kf as f64 / gf as f64);
}
