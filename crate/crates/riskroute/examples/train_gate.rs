//! Distills the teacher's keep-local decision into the deployable gate
//! and inspects the result: sign agreement on held-out queries and score
//! curves that rise with the cost weight.

use riskroute::config::RunConfig;
use riskroute::dataset::{attach_states, generate_synthetic, Split};
use riskroute::gate::{gate_forward, train_gate, GateConfig};
use riskroute::rng::{stream, StreamRole};
use riskroute::teacher::{teacher_forward, teacher_margin, train_teacher, TeacherConfig};

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
    let teacher = train_teacher(&ds, &tcfg, cfg.seed).expect("teacher trains");
    let gcfg = GateConfig {
        hidden: 64,
        epochs: 15,
        ..GateConfig::default()
    };
    let (gate, report) = train_gate(&ds, &teacher, &deployment, &gcfg, cfg.seed).expect("trains");
    println!(
        "gate trained for {} epochs, kept epoch {} (selection loss {:.4})",
        gcfg.epochs, report.selected_epoch, report.epoch_selection_loss[report.selected_epoch]
    );

    // Sign agreement with the teacher's decision at unit cost weight; the
    // gate sees only (embedding, lambda), never the channel state.
    let states = attach_states(ds.queries.len(), &cfg.cost.comm, cfg.seed);
    let local_idx = deployment.local_index();
    let test_idx = ds.split_indices(Split::Test);
    let mut agree = 0usize;
    for &i in &test_idx {
        let q = &ds.queries[i];
        let (_, p) = teacher_forward(&teacher, &q.embedding).expect("forward");
        let costs = deployment.costs(&q.workload(), &states[i]);
        let (_, z) = teacher_margin(&p, &costs, 1.0, local_idx).expect("margin");
        let (_, s) = gate_forward(&gate, &q.embedding, 1.0).expect("gate");
        agree += usize::from((s >= 0.5) == (z == 1));
    }
    println!(
        "sign agreement with the teacher at lambda = 1: {:.4} on {} held-out queries",
        agree as f64 / test_idx.len() as f64,
        test_idx.len()
    );

    println!("acceptance score rises with the cost weight (three queries):");
    for &i in test_idx.iter().take(3) {
        print!("  query {i}:");
        for lambda in [0.1, 0.5, 1.0, 5.0, 20.0] {
            let (_, s) = gate_forward(&gate, &ds.queries[i].embedding, lambda).expect("gate");
            print!("  s({lambda}) = {s:.3}");
        }
        println!();
    }
}
