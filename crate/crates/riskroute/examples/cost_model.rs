//! Anatomy of the deployment cost model: raw latency/energy aggregation,
//! normalization against the strongest edge model, and the Shannon link
//! rates that drive the communication terms.

use riskroute::config::RunConfig;
use riskroute::cost::{link_rate, Direction, QueryWorkload};
use riskroute::rng::{stream, StreamRole};

fn main() {
    let cfg = RunConfig::default();
    let deployment = cfg.deployment().expect("default profile is valid");
    let ids = deployment.pool.model_ids();

    let workload = QueryWorkload {
        l_in: 200,
        l_out: vec![150; ids.len()],
    };

    let mut rng = stream(cfg.seed, StreamRole::Reference);
    println!("per-model normalized cost (three random channel states):");
    for draw in 0..3 {
        let state = deployment.sample_state(&mut rng);
        let costs = deployment.costs(&workload, &state);
        print!("  state {draw} (d_ue {:6.1} m):", state.d_ue);
        for (id, c) in ids.iter().zip(&costs) {
            print!("  {id} {c:.6}");
        }
        println!();
    }
    println!("the reference model always costs exactly 1 by construction\n");

    // The rate the cost model uses, next to the textbook form computed
    // through a different code path.
    let state = deployment.sample_state(&mut rng);
    for dir in [Direction::Uplink, Direction::Downlink] {
        let rate = link_rate(&deployment.comm, &state, dir);
        let (p, bw, fade) = match dir {
            Direction::Uplink => (deployment.comm.p_u_ul, deployment.comm.bw_ul, state.fade_ul),
            Direction::Downlink => {
                (deployment.comm.p_bs_dl, deployment.comm.bw_dl, state.fade_dl)
            }
        };
        let gain = deployment.comm.k0 * fade * state.d_ue.powf(-deployment.comm.alpha_pl);
        let snr = p * gain / (bw * deployment.comm.n0);
        let oracle = bw * (1.0 + snr).log2();
        println!(
            "{dir:?}: rate {:.3e} bit/s, independent oracle {:.3e} bit/s, rel diff {:.2e}",
            rate,
            oracle,
            (rate - oracle).abs() / oracle
        );
    }
}
