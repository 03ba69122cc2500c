use thzalloc::absorption::{SyntheticProfile, fit_layout, DEFAULT_PEAK_PROMINENCE};
use thzalloc::baselines::{fixed_edge_asb, edge_cutoffs, EDGE_CUTOFF_THRESHOLD};
use thzalloc::problem::ProblemConfig;
use thzalloc::scenario::{default_params, generate};
use thzalloc::solver::SolverConfig;

fn main() {
    let samples = SyntheticProfile::two_window().sample(601, 0.0, 0);
    let full = fit_layout(&samples, DEFAULT_PEAK_PROMINENCE).unwrap();
    let two = thzalloc::SpectrumLayout { regions: full.regions[0..2].to_vec(), windows: vec![vec![0,1]] };
    let cuts = edge_cutoffs(&two, EDGE_CUTOFF_THRESHOLD).unwrap();
    eprintln!("b_tot {:?} cutoffs {:?} GHz", two.regions.iter().map(|r| r.b_tot_hz/1e9).collect::<Vec<_>>(), cuts.iter().map(|c| c/1e9).collect::<Vec<_>>());
    let sc = generate(20.0, 20.0, 2.0, 8, default_params(8), 1);
    let fe = fixed_edge_asb(sc, &two, &ProblemConfig::auto_omega(), &SolverConfig::default()).unwrap();
    eprintln!("feasible {} notes {:#?}", fe.feasible, fe.notes);
    if let Some(rep) = &fe.report {
        eprintln!("status {:?} outer {} warnings {:?}", rep.status, rep.outer_iters, rep.warnings);
    }
}
