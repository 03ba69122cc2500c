use thzalloc::problem::{build, ProblemConfig};
use thzalloc::scenario::{default_params, Scenario};
use thzalloc::solver::{run_sca, SolverConfig};
use thzalloc::absorption::{RegionKind, RegionModel, SpectrumLayout};
use std::time::Instant;

fn main() {
    let p = RegionModel { kind: RegionKind::Pacsr, f_ref_hz: 0.36e12, b_tot_hz: 30e9,
        sigma1: -43.893, sigma2: 1.2e-10, sigma3: 0.01, fit_rmse: 0.0 };
    let n = RegionModel { kind: RegionKind::Nacsr, f_ref_hz: 0.36e12, b_tot_hz: 25e9,
        sigma1: 74.907, sigma2: -2.1e-10, sigma3: 0.008, fit_rmse: 0.0 };
    let layout = SpectrumLayout { regions: vec![p, n], windows: vec![vec![0], vec![1]] };
    for n_users in [4usize, 6, 8] {
        let ls: Vec<f64> = (0..n_users).map(|i| 1.0 + 12.0 * i as f64 / n_users as f64).collect();
        let sc = Scenario::with_user_distances(20.0, 20.0, 2.0, &ls, default_params(n_users));
        let inst = build(sc, &layout, &ProblemConfig::auto_omega()).unwrap();
        let t = Instant::now();
        let rep = run_sca(&inst, &SolverConfig::default());
        println!("n={n_users}: status {:?} outer {} sum_rate {:?} Gbps wall {:.0} ms inner_iters {:?}",
            rep.status, rep.outer_iters, rep.sum_rate_bps().map(|r| r/1e9), t.elapsed().as_millis(), rep.inner_iters_trace);
    }
}
