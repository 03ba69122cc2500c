//! Multi-band terahertz spectrum allocation with adaptive sub-band bandwidth.
//!
//! The crate fits per-region exponential absorption models from sampled
//! absorption-coefficient data, assembles the penalized convexified sum-rate
//! maximization problem over multiple transmission windows, and solves it
//! with a successive-convex-approximation loop around a log-barrier inner
//! solver. Equal-sub-band and fixed-edge-spectrum baselines plus a sweep
//! harness reproduce the reference evaluation shapes.

pub mod absorption;
pub mod assign;
pub mod baselines;
pub mod channel;
pub mod harness;
pub mod problem;
pub mod quad;
pub mod scenario;
pub mod solver;

pub use absorption::{AbsorptionSamples, RegionKind, RegionModel, SpectrumLayout};
pub use problem::{Allocation, PrimalPoint, ProblemConfig, ProblemInstance};
pub use scenario::{Scenario, ScenarioConfig};
pub use solver::{SolveReport, SolveStatus, SolverConfig};

#[cfg(test)]
pub(crate) mod testkit {
    use crate::absorption::{RegionKind, RegionModel, SpectrumLayout};
    use crate::problem::{build, ProblemConfig, ProblemInstance};
    use crate::scenario::{default_params, Scenario};

    /// Two fitted-like regions (one PACSR, one NACSR) sharing a valley.
    pub fn two_region_layout() -> SpectrumLayout {
        let p = RegionModel {
            kind: RegionKind::Pacsr,
            f_ref_hz: 0.36e12,
            b_tot_hz: 30e9,
            sigma1: -43.893,
            sigma2: 1.2e-10,
            sigma3: 0.01,
            fit_rmse: 0.0,
        };
        let n = RegionModel {
            kind: RegionKind::Nacsr,
            f_ref_hz: 0.36e12,
            b_tot_hz: 25e9,
            sigma1: 74.907,
            sigma2: -2.1e-10,
            sigma3: 0.008,
            fit_rmse: 0.0,
        };
        SpectrumLayout { regions: vec![p, n], windows: vec![vec![0], vec![1]] }
    }

    pub fn one_region_layout() -> SpectrumLayout {
        let mut l = two_region_layout();
        l.regions.truncate(1);
        l.windows = vec![vec![0]];
        SpectrumLayout { regions: l.regions, windows: l.windows }
    }

    pub fn spread_scenario(n: usize) -> Scenario {
        let ls: Vec<f64> = (0..n)
            .map(|i| 1.0 + 12.0 * i as f64 / n.max(2) as f64)
            .collect();
        Scenario::with_user_distances(20.0, 20.0, 2.0, &ls, default_params(n))
    }

    pub fn desk_instance(n: usize) -> ProblemInstance {
        build(spread_scenario(n), &two_region_layout(), &ProblemConfig::auto_omega()).unwrap()
    }

    pub fn micro_instance(n: usize) -> ProblemInstance {
        build(spread_scenario(n), &one_region_layout(), &ProblemConfig::auto_omega()).unwrap()
    }
}

