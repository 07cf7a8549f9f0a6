//! Trains the per-model correctness heads on a reduced dataset and shows
//! what they buy: a probability-ranking policy that tracks the strongest
//! static model's accuracy at roughly half the cost.

use riskroute::config::RunConfig;
use riskroute::dataset::{attach_states, generate_synthetic, Split};
use riskroute::rng::{stream, StreamRole};
use riskroute::teacher::{full_info_select, teacher_forward, train_teacher, TeacherConfig};

fn main() {
    let cfg = RunConfig::default();
    let deployment = cfg.deployment().expect("default profile is valid");
    let mut gen_cfg = cfg.dataset.clone();
    gen_cfg.n_queries = 8_000;
    gen_cfg.embedding_dim = 16;

    let mut rng = stream(cfg.seed, StreamRole::DatasetGen);
    let (ds, _) =
        generate_synthetic(&gen_cfg, &deployment.pool.model_ids(), &mut rng).expect("generates");

    let tcfg = TeacherConfig {
        hidden: 64,
        epochs: 10,
        ..TeacherConfig::default()
    };
    let teacher = train_teacher(&ds, &tcfg, cfg.seed).expect("trains");

    let states = attach_states(ds.queries.len(), &cfg.cost.comm, cfg.seed);
    let test_idx = ds.split_indices(Split::Test);
    let ref_idx = deployment.ref_index();
    let mut n = 0.0;
    let (mut acc_rank, mut cost_rank, mut acc_ref) = (0.0, 0.0, 0.0);
    for &i in &test_idx {
        let q = &ds.queries[i];
        if !q.correctness.contains(&1) {
            continue;
        }
        n += 1.0;
        let (_, p) = teacher_forward(&teacher, &q.embedding).expect("forward");
        let costs = deployment.costs(&q.workload(), &states[i]);
        // A tiny cost weight turns pure ranking into "best model, cheapest
        // among near-ties".
        let pick = full_info_select(&p, &costs, 0.1);
        acc_rank += f64::from(q.correctness[pick]);
        cost_rank += costs[pick];
        acc_ref += f64::from(q.correctness[ref_idx]);
    }
    println!("answerable test queries: {n}");
    println!(
        "teacher ranking policy: accuracy {:.4} at mean cost {:.4}",
        acc_rank / n,
        cost_rank / n
    );
    println!(
        "always-{}: accuracy {:.4} at mean cost 1.0",
        deployment.pool.model_ids()[ref_idx],
        acc_ref / n
    );
}
