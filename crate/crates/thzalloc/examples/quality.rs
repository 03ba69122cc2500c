use thzalloc::absorption::{SyntheticProfile, fit_layout, DEFAULT_PEAK_PROMINENCE};
use thzalloc::baselines::{asb_full, esb_allocate, fixed_edge_asb, brute_force};
use thzalloc::problem::ProblemConfig;
use thzalloc::scenario::{default_params, generate, Scenario};
use thzalloc::solver::SolverConfig;

fn main() {
    // oracle comparison: 2 users, 1 region
    let samples = SyntheticProfile::two_window().sample(601, 0.0, 0);
    let full = fit_layout(&samples, DEFAULT_PEAK_PROMINENCE).unwrap();
    eprintln!("fitted {} regions; b_tots {:?}", full.regions.len(),
        full.regions.iter().map(|r| r.b_tot_hz/1e9).collect::<Vec<_>>());
    let one = thzalloc::SpectrumLayout { regions: vec![full.regions[0].clone()], windows: vec![vec![0]] };
    let pcfg = ProblemConfig::auto_omega();
    let scfg = SolverConfig::default();
    let mut wins = 0;
    for seed in 1..=10u64 {
        let sc = generate(20.0, 20.0, 2.0, 2, default_params(2), seed);
        let bf = brute_force(sc.clone(), &one, 50).unwrap();
        let asb = asb_full(sc, &one, &pcfg, &scfg).unwrap();
        let (b, a) = (bf.sum_rate_bps.unwrap_or(0.0), asb.sum_rate_bps.unwrap_or(0.0));
        let ratio = a / b;
        if ratio >= 0.99 { wins += 1; }
        eprintln!("seed {seed}: bf {:.3} asb {:.3} ratio {:.4}", b/1e9, a/1e9, ratio);
    }
    eprintln!("oracle wins: {wins}/10");

    // scheme ordering at desk scale: 8 users, 2 regions
    let two = thzalloc::SpectrumLayout { regions: full.regions[0..2].to_vec(), windows: vec![vec![0,1]] };
    for seed in 1..=5u64 {
        let sc: Scenario = generate(20.0, 20.0, 2.0, 8, default_params(8), seed);
        let esb = esb_allocate(sc.clone(), &two, &pcfg, &scfg).unwrap();
        let fe = fixed_edge_asb(sc.clone(), &two, &pcfg, &scfg).unwrap();
        let asb = asb_full(sc, &two, &pcfg, &scfg).unwrap();
        eprintln!("seed {seed}: esb {:?} fe {:?} asb {:?} | gain {:?}%",
            esb.sum_rate_bps.map(|r| (r/1e9*100.0).round()/100.0),
            fe.sum_rate_bps.map(|r| (r/1e9*100.0).round()/100.0),
            asb.sum_rate_bps.map(|r| (r/1e9*100.0).round()/100.0),
            esb.sum_rate_bps.zip(asb.sum_rate_bps).map(|(e, a)| ((a/e - 1.0)*1000.0).round()/10.0));
    }
}
