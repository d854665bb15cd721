//! Weibull data with a covariate jump: censoring calibration, one dataset, and
//! the large-sample coefficients used as the truth in studies.

use rmst_td::sim::*;

fn main() {
    let cfg = SimConfig::default();
    for target in [0.15, 0.30, 0.45] {
        let rate = calibrate_censoring(&SimConfig { target_censoring: target, ..cfg.clone() }).unwrap();
        let d = gen_dataset_with(cfg.n, rate, &cfg, &mut replicate_rng(cfg.seed, 0));
        println!("target {target:.2}: rate {rate:.4}, n = {} censored {:.3}", d.n_subjects(), censored_fraction(&d));
    }

    let d = gen_dataset(&cfg).unwrap();
    for s in d.subjects().iter().take(3) {
        for r in s.records() {
            println!("{} ({:.3}, {:.3}] status {} x {} z {}", r.id, r.start, r.stop, r.status as u8, r.fixed[0], r.td[0]);
        }
    }

    let truth = true_coefficients(&cfg, 50_000).unwrap();
    println!("large-sample coefficients (n = 5e4): {truth:.4?}");
}
