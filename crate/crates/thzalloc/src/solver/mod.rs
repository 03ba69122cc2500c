//! Successive-convex-approximation driver, binary rounding with assignment
//! repair, and allocation verification.
//!
//! The outer loop follows the penalty scheme: solve the convexified
//! subproblem around the anchor, move the anchor to the solution, and stop
//! once the binary gap `sum x (1 - x)` drops below the tolerance. Iterates
//! warm-start each other, which also guarantees a non-increasing objective
//! trace.

mod inner;

use std::time::Instant;

use thiserror::Error;

use crate::assign::max_weight_assignment;
use crate::channel;
use crate::problem::{Allocation, PrimalPoint, ProblemInstance};

pub(crate) use inner::{InnerFailure, InnerModel, InnerOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Binary-gap termination tolerance of the outer loop.
    pub epsilon: f64,
    pub max_outer: usize,
    pub inner_kkt_tol: f64,
    /// Newton-step budget per subproblem solve.
    pub inner_max_iter: usize,
    pub rounding_threshold: f64,
    pub seed: u64,
    /// Re-optimize powers and widths with the assignment pinned before
    /// decoding the final allocation.
    pub polish: bool,
    /// Overrides the flat 0.5 initial anchor.
    pub initial_anchor: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_outer: 200,
            inner_kkt_tol: 1e-6,
            inner_max_iter: 600,
            rounding_threshold: 0.5,
            seed: 0,
            polish: true,
            initial_anchor: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("subproblem infeasible (scaled violation {violation:.3e})")]
    Infeasible { violation: f64 },
    #[error("inner solver stalled at KKT residual {kkt_residual:.3e}")]
    Stalled { kkt_residual: f64 },
}

/// Solution of one convexified subproblem.
#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub point: PrimalPoint,
    pub psi: f64,
    pub inner_steps: usize,
    pub kkt_residual: f64,
}

#[derive(Debug, Error)]
pub enum RestoreError {
    #[error("restored allocation misses the rate threshold; per-user rates attached")]
    RateShortfall { rates_bps: Vec<f64> },
    #[error("region {region}: assigned widths and guards exceed the region bandwidth")]
    BudgetOverflow { region: usize },
    #[error("no assignment satisfies the slot constraints")]
    NoAssignment,
}

/// One itemized constraint check.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CheckItem {
    pub name: String,
    pub pass: bool,
    pub residual: f64,
}

/// Itemized feasibility report of an allocation.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct FeasibilityReport {
    pub items: Vec<CheckItem>,
    pub per_user_rates_bps: Vec<f64>,
    pub sum_rate_bps: f64,
}

impl FeasibilityReport {
    pub fn all_pass(&self) -> bool {
        self.items.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&CheckItem> {
        self.items.iter().filter(|c| !c.pass).collect()
    }
}

/// Outcome of a full outer-loop run.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub psi_trace: Vec<f64>,
    pub fp_trace: Vec<f64>,
    pub inner_iters_trace: Vec<usize>,
    pub wall_ms_trace: Vec<f64>,
    pub outer_iters: usize,
    pub allocation: Option<Allocation>,
    pub feasibility: Option<FeasibilityReport>,
    pub wall_ms: f64,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

impl SolveReport {
    pub fn sum_rate_bps(&self) -> Option<f64> {
        self.allocation.as_ref().map(|a| a.sum_rate_bps())
    }
}

/// Proportional apportionment by largest remainder; ties go to the larger
/// weight.
pub(crate) fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 || total == 0 {
        let mut out = vec![0; weights.len()];
        if !out.is_empty() {
            out[0] = total;
        }
        return out;
    }
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / wsum).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa)
            .unwrap()
            .then(weights[b].partial_cmp(&weights[a]).unwrap())
    });
    for k in 0..total.saturating_sub(assigned) {
        counts[order[k % order.len()]] += 1;
    }
    counts
}

/// Clamp into the strict interior of a box; pinned slots (empty boxes)
/// collapse to their value.
fn clamp_interior(v: f64, lo: f64, hi: f64) -> f64 {
    let lo_s = lo * (1.0 + 1e-12) + f64::MIN_POSITIVE;
    let hi_s = hi * (1.0 - 1e-12);
    if lo_s >= hi_s {
        lo
    } else {
        v.clamp(lo_s, hi_s)
    }
}

/// Rate matrix `R[i][m]` (bit/s) at a relaxed point's powers and layout.
fn rate_matrix(inst: &ProblemInstance, power: &[f64], z: &[f64]) -> Vec<Vec<f64>> {
    let map = *inst.map();
    let mut mat = vec![vec![0.0; map.n_slots_total()]; map.n_users];
    for r in 0..map.n_regions {
        let (b_delta, widths, guards) = inst.decode_region(z, r);
        for s in 1..=map.slots {
            let f = match channel::center_frequency(&inst.regions[r], b_delta, &widths, &guards, s) {
                Ok(f) => f,
                Err(_) => continue,
            };
            for (i, row) in mat.iter_mut().enumerate() {
                let link = inst.scenario.link_with_power(i, power[i]);
                row[map.slot(r, s)] =
                    channel::rate_approx(&link, &inst.regions[r], f, widths[s - 1]).unwrap_or(0.0);
            }
        }
    }
    mat
}

/// Nominal equal-width start layout: per-region band counts proportional to
/// region bandwidth, widths filling most of the budget.
fn nominal_layout(inst: &ProblemInstance) -> (Vec<usize>, Vec<f64>) {
    let map = *inst.map();
    let weights: Vec<f64> = inst.regions.iter().map(|r| r.b_tot_hz).collect();
    let counts = apportion(map.n_users, &weights);
    let b_g = inst.scenario.params.b_g_hz;
    let widths: Vec<f64> = counts
        .iter()
        .zip(&inst.regions)
        .zip(inst.b_delta_fixed_hz.as_ref().map(|v| v.as_slice()).unwrap_or(&[]).iter().map(Some).chain(std::iter::repeat(None)))
        .map(|((&n, region), fixed)| {
            if n == 0 {
                return 0.0;
            }
            let reserved = fixed.copied().unwrap_or(0.04 * region.b_tot_hz);
            let usable = 0.92 * (region.b_tot_hz - reserved) - n as f64 * b_g;
            (usable / n as f64)
                .min(0.9 * inst.scenario.params.b_max_hz)
                .max(4.0 * inst.min_band_hz)
        })
        .collect();
    (counts, widths)
}

/// Builds a strictly feasible starting point: a soft assignment concentrated
/// on a good matching, nominal widths on assigned slots, conservative powers.
pub(crate) fn construct_start(inst: &ProblemInstance) -> PrimalPoint {
    let map = *inst.map();
    let cols = map.n_slots_total();
    let (counts, widths) = nominal_layout(inst);
    let p_nom = (0.9 * inst.scenario.params.p_tot_w / map.n_users as f64)
        .min(0.9 * inst.scenario.params.p_max_w);

    // matching on the provisional-layout rate matrix
    let mut weights = vec![vec![f64::NEG_INFINITY; cols]; map.n_users];
    for r in 0..map.n_regions {
        if counts[r] == 0 {
            continue;
        }
        let w = widths[r];
        let ws = vec![w; counts[r]];
        let gs = vec![inst.scenario.params.b_g_hz; counts[r]];
        let b_delta = inst
            .b_delta_fixed_hz
            .as_ref()
            .map(|v| v[r])
            .unwrap_or(0.04 * inst.regions[r].b_tot_hz);
        for s in 1..=counts[r] {
            if let Ok(f) = channel::center_frequency(&inst.regions[r], b_delta, &ws, &gs, s) {
                for (i, row) in weights.iter_mut().enumerate() {
                    let link = inst.scenario.link_with_power(i, p_nom);
                    row[map.slot(r, s)] =
                        channel::rate_approx(&link, &inst.regions[r], f, w).unwrap_or(0.0);
                }
            }
        }
    }
    let matching = max_weight_assignment(&weights)
        .map(|(cols_of_user, _)| cols_of_user)
        .unwrap_or_else(|| (0..map.n_users).map(|i| i % cols).collect());

    let beta = 0.85;
    let mut assign = vec![0.0; map.n_assign()];
    for i in 0..map.n_users {
        let spread = (1.0 - beta) / (cols.saturating_sub(1).max(1)) as f64;
        for m in 0..cols {
            assign[i * cols + m] = if m == matching[i] { beta } else { spread };
        }
        if cols == 1 {
            assign[i * cols] = 1.0;
        }
    }

    let power = vec![p_nom; map.n_users];
    let mut z = vec![0.0; map.n_z()];
    let zb = inst.z_bounds(&assign);
    for r in 0..map.n_regions {
        let su = &inst.subst[r];
        let b_delta = inst
            .b_delta_fixed_hz
            .as_ref()
            .map(|v| v[r])
            .unwrap_or(0.04 * inst.regions[r].b_tot_hz);
        let zi = map.z_width(r, 0);
        z[zi] = clamp_interior(su.width.z_from_bandwidth(b_delta), zb[zi].min, zb[zi].max);
        // guards follow the coupling equality; fractional column mass costs
        // close to a full guard width, so budget them from the decoded values
        let mut guard_sum = 0.0;
        for s in 1..=map.slots {
            let zi = map.z_guard(r, s);
            z[zi] = zb[zi].min;
            guard_sum += su.guard.bandwidth_from_z_unchecked(z[zi]).max(0.0);
        }
        let pad = (map.slots - counts[r]) as f64 * 2.0 * inst.min_band_hz;
        let fit = if counts[r] > 0 {
            (0.95 * (inst.regions[r].b_tot_hz - b_delta) - guard_sum - pad) / counts[r] as f64
        } else {
            0.0
        };
        let w_r = fit
            .min(0.9 * inst.scenario.params.b_max_hz)
            .max(4.0 * inst.min_band_hz);
        for s in 1..=map.slots {
            let zi = map.z_width(r, s);
            let target = if s <= counts[r] { w_r } else { 2.0 * inst.min_band_hz };
            z[zi] = clamp_interior(su.width.z_from_bandwidth(target), zb[zi].min, zb[zi].max);
        }
    }
    PrimalPoint { assign, power, z }
}

/// Solves the convexified subproblem around `anchor`. `warm` supplies the
/// previous iterate; the returned objective never exceeds the warm point's.
pub fn solve_subproblem(
    inst: &ProblemInstance,
    anchor: &[f64],
    warm: Option<&PrimalPoint>,
    cfg: &SolverConfig,
) -> Result<SubproblemSolution, SolverError> {
    solve_pinned(inst, anchor, warm, &[], cfg)
}

/// Subproblem solve with extra pinned variables (fixed assignments, fixed
/// widths); the machinery behind the baselines and the polish step.
pub(crate) fn solve_pinned(
    inst: &ProblemInstance,
    anchor: &[f64],
    warm: Option<&PrimalPoint>,
    pins: &[(usize, f64)],
    cfg: &SolverConfig,
) -> Result<SubproblemSolution, SolverError> {
    let mut model = InnerModel::new(inst, anchor, pins);
    let mut start: Option<(PrimalPoint, bool)> = None;
    if let Some(w) = warm {
        let packed = model.project_equalities(&model.pack(w));
        if model.min_slack(&packed) > 0.0 {
            start = Some((model.unpack(&packed), true));
        }
    }
    if start.is_none() {
        let cold = construct_start(inst);
        let packed = model.project_equalities(&model.pack(&cold));
        if model.min_slack(&packed) > 0.0 {
            start = Some((model.unpack(&packed), false));
        } else {
            let opts = InnerOptions::from_tol(cfg.inner_kkt_tol, cfg.inner_max_iter, false);
            match model.phase1(&cold, &opts) {
                Ok(pt) => start = Some((pt, false)),
                Err(InnerFailure::Infeasible { violation }) => {
                    return Err(SolverError::Infeasible { violation })
                }
                Err(InnerFailure::Stalled { .. }) => {
                    return Err(SolverError::Infeasible { violation: f64::NAN })
                }
            }
        }
    }
    let (start_point, is_warm) = start.expect("start constructed");
    let opts = InnerOptions::from_tol(cfg.inner_kkt_tol, cfg.inner_max_iter, is_warm);
    let outcome = match model.solve(&start_point, &opts) {
        Ok(o) => o,
        Err(InnerFailure::Stalled { best }) => *best,
        Err(InnerFailure::Infeasible { violation }) => {
            return Err(SolverError::Infeasible { violation })
        }
    };
    // descent safeguard against inner inexactness
    let mut best = outcome;
    if let Some(w) = warm {
        let warm_psi = inst.objective_psi(&w.assign, &w.power, &w.z, anchor).0;
        if warm_psi < best.objective {
            best = inner::InnerOutcome {
                point: w.clone(),
                objective: warm_psi,
                newton_steps: best.newton_steps,
                kkt_residual: best.kkt_residual,
            };
        }
    }
    Ok(SubproblemSolution {
        psi: best.objective,
        inner_steps: best.newton_steps,
        kkt_residual: best.kkt_residual,
        point: best.point,
    })
}

/// Thresholds a relaxed assignment; on any row/column violation, repairs by
/// maximum-weight matching on the relaxed rate matrix.
fn binary_assignment(
    inst: &ProblemInstance,
    point: &PrimalPoint,
    threshold: f64,
) -> Result<Vec<Option<(usize, usize)>>, RestoreError> {
    let map = *inst.map();
    let cols = map.n_slots_total();
    let mut assigned: Vec<Option<(usize, usize)>> = vec![None; map.n_users];
    let mut col_used = vec![false; cols];
    let mut ok = true;
    for i in 0..map.n_users {
        let row = &point.assign[i * cols..(i + 1) * cols];
        let above: Vec<usize> = (0..cols).filter(|&m| row[m] >= threshold).collect();
        if above.len() != 1 {
            ok = false;
            break;
        }
        let m = above[0];
        if col_used[m] {
            ok = false;
            break;
        }
        col_used[m] = true;
        assigned[i] = Some(map.slot_to_region(m));
    }
    if ok {
        return Ok(assigned);
    }
    let weights = rate_matrix(inst, &point.power, &point.z);
    let (cols_of_user, _) = max_weight_assignment(&weights).ok_or(RestoreError::NoAssignment)?;
    Ok(cols_of_user
        .into_iter()
        .map(|m| Some(map.slot_to_region(m)))
        .collect())
}

/// Decodes a binary assignment plus relaxed `(P, Z)` into an allocation:
/// unassigned slots zeroed, one guard width per live sub-band, the unused
/// edge absorbing all remaining spectrum so the region budget holds with
/// equality, powers rescaled into the budget.
fn decode(
    inst: &ProblemInstance,
    assigned: &[Option<(usize, usize)>],
    power: &[f64],
    z: &[f64],
) -> Result<Allocation, RestoreError> {
    let map = *inst.map();
    let b_g = inst.scenario.params.b_g_hz;
    let mut widths = vec![vec![0.0; map.slots]; map.n_regions];
    for a in assigned.iter().flatten() {
        let (r, s) = *a;
        let su = &inst.subst[r];
        let b = su.width.bandwidth_from_z_unchecked(z[map.z_width(r, s)]);
        widths[r][s - 1] = b.max(inst.min_band_hz);
    }
    let mut guards = vec![vec![0.0; map.slots]; map.n_regions];
    let mut unused = vec![0.0; map.n_regions];
    for r in 0..map.n_regions {
        for s in 1..=map.slots {
            guards[r][s - 1] = if widths[r][s - 1] > 0.0 { b_g } else { 0.0 };
        }
        let g_sum: f64 = guards[r].iter().sum();
        let b_sum: f64 = widths[r].iter().sum();
        let b_tot = inst.regions[r].b_tot_hz;
        if b_sum + g_sum > b_tot {
            let avail = b_tot - g_sum;
            if avail <= 0.0 {
                return Err(RestoreError::BudgetOverflow { region: r });
            }
            let scale = avail / b_sum;
            for w in widths[r].iter_mut() {
                *w *= scale;
                if *w > 0.0 && *w < 0.99 * inst.min_band_hz {
                    return Err(RestoreError::BudgetOverflow { region: r });
                }
            }
        }
        unused[r] = b_tot - widths[r].iter().sum::<f64>() - g_sum;
    }
    let mut powers: Vec<f64> = power
        .iter()
        .map(|&p| p.clamp(0.0, inst.scenario.params.p_max_w))
        .collect();
    let p_sum: f64 = powers.iter().sum();
    if p_sum > inst.scenario.params.p_tot_w {
        let scale = inst.scenario.params.p_tot_w / p_sum * (1.0 - 1e-12);
        for p in powers.iter_mut() {
            *p *= scale;
        }
    }
    let mut centers = vec![vec![0.0; map.slots]; map.n_regions];
    for r in 0..map.n_regions {
        for s in 1..=map.slots {
            centers[r][s - 1] = channel::center_frequency(
                &inst.regions[r],
                unused[r],
                &widths[r],
                &guards[r],
                s,
            )
            .map_err(|_| RestoreError::BudgetOverflow { region: r })?;
        }
    }
    let mut alloc = Allocation {
        assigned: assigned.to_vec(),
        widths_hz: widths,
        guards_hz: guards,
        unused_edge_hz: unused,
        centers_hz: centers,
        powers_w: powers,
        rates_bps: vec![0.0; map.n_users],
    };
    for i in 0..map.n_users {
        alloc.rates_bps[i] =
            channel::user_rate(&alloc, &inst.scenario, &inst.regions, i).unwrap_or(0.0);
    }
    Ok(alloc)
}

/// Rounds a relaxed point to a binary allocation: threshold, matching repair
/// on violations, width/guard re-decoding with the guard rule re-imposed,
/// and a final feasibility pass on the rate thresholds.
pub fn round_and_restore(
    inst: &ProblemInstance,
    point: &PrimalPoint,
    cfg: &SolverConfig,
) -> Result<Allocation, RestoreError> {
    let assigned = binary_assignment(inst, point, cfg.rounding_threshold)?;
    let alloc = decode(inst, &assigned, &point.power, &point.z)?;
    let thr = inst.r_thr_bps();
    if alloc
        .rates_bps
        .iter()
        .any(|&rate| rate < thr * (1.0 - 1e-6))
    {
        return Err(RestoreError::RateShortfall { rates_bps: alloc.rates_bps });
    }
    Ok(alloc)
}

/// Re-optimizes `(P, Z)` with the binary assignment pinned. Returns `None`
/// when the pinned problem has no strictly feasible point.
fn polish_point(
    inst: &ProblemInstance,
    assigned: &[Option<(usize, usize)>],
    point: &PrimalPoint,
    cfg: &SolverConfig,
) -> Option<PrimalPoint> {
    let map = *inst.map();
    let cols = map.n_slots_total();
    let mut pins = Vec::with_capacity(map.n_assign());
    let mut anchor = vec![0.0; map.n_assign()];
    for i in 0..map.n_users {
        let m_assigned = assigned[i].map(|(r, s)| map.slot(r, s));
        for m in 0..cols {
            let v = if Some(m) == m_assigned { 1.0 } else { 0.0 };
            pins.push((i * cols + m, v));
            anchor[i * cols + m] = v;
        }
    }
    let warm = PrimalPoint {
        assign: anchor.clone(),
        power: point.power.clone(),
        z: point.z.clone(),
    };
    match solve_pinned(inst, &anchor, Some(&warm), &pins, cfg) {
        Ok(sol) => Some(sol.point),
        Err(_) => None,
    }
}

/// Runs the outer penalty loop: anchor at 0.5, subproblem solve, anchor
/// update, terminate once the binary gap falls below `epsilon`; then rounds,
/// optionally polishes, and verifies the final allocation.
pub fn run_sca(inst: &ProblemInstance, cfg: &SolverConfig) -> SolveReport {
    let t0 = Instant::now();
    let map = *inst.map();
    let mut report = SolveReport {
        status: SolveStatus::MaxIter,
        psi_trace: vec![],
        fp_trace: vec![],
        inner_iters_trace: vec![],
        wall_ms_trace: vec![],
        outer_iters: 0,
        allocation: None,
        feasibility: None,
        wall_ms: 0.0,
        warnings: vec![],
        notes: vec![],
    };
    let mut anchor = cfg
        .initial_anchor
        .clone()
        .unwrap_or_else(|| vec![0.5; map.n_assign()]);
    if anchor.len() != map.n_assign() {
        report.warnings.push("initial anchor has wrong length; using 0.5".into());
        anchor = vec![0.5; map.n_assign()];
    }
    let mut warm: Option<PrimalPoint> = None;
    let mut last: Option<PrimalPoint> = None;

    for _ in 0..cfg.max_outer {
        let it0 = Instant::now();
        let sol = match solve_subproblem(inst, &anchor, warm.as_ref(), cfg) {
            Ok(sol) => sol,
            Err(SolverError::Infeasible { violation }) => {
                report.status = SolveStatus::Infeasible;
                report
                    .notes
                    .push(format!("subproblem infeasible (scaled violation {violation:.3e})"));
                break;
            }
            Err(SolverError::Stalled { kkt_residual }) => {
                report
                    .warnings
                    .push(format!("inner solver stalled (kkt residual {kkt_residual:.3e})"));
                break;
            }
        };
        if sol.kkt_residual > 10.0 * cfg.inner_kkt_tol {
            report.warnings.push(format!(
                "outer {}: inner kkt residual {:.3e} above tolerance",
                report.outer_iters, sol.kkt_residual
            ));
        }
        let fp = ProblemInstance::binary_gap(&sol.point.assign);
        let psi_true = -inst.weighted_sum_rate(&sol.point.assign, &sol.point.power, &sol.point.z)
            / inst.rate_scale
            + inst.penalty_weight * fp;
        if let Some(&prev) = report.psi_trace.last() {
            if psi_true > prev + 10.0 * cfg.inner_kkt_tol {
                report.warnings.push(format!(
                    "outer {}: objective increased from {prev:.6e} to {psi_true:.6e}",
                    report.outer_iters
                ));
            }
        }
        report.psi_trace.push(psi_true);
        report.fp_trace.push(fp);
        report.inner_iters_trace.push(sol.inner_steps);
        report.wall_ms_trace.push(it0.elapsed().as_secs_f64() * 1e3);
        report.outer_iters += 1;
        last = Some(sol.point.clone());
        if fp < cfg.epsilon {
            report.status = SolveStatus::Converged;
            break;
        }
        anchor = sol.point.assign.clone();
        warm = Some(sol.point);
    }

    if report.status != SolveStatus::Infeasible {
        if let Some(point) = &last {
            let extraction = if cfg.polish {
                match binary_assignment(inst, point, cfg.rounding_threshold) {
                    Ok(assigned) => match polish_point(inst, &assigned, point, cfg) {
                        Some(p) => {
                            report.notes.push("final allocation polished with pinned assignment".into());
                            p
                        }
                        None => point.clone(),
                    },
                    Err(_) => point.clone(),
                }
            } else {
                point.clone()
            };
            match round_and_restore(inst, &extraction, cfg) {
                Ok(alloc) => {
                    let feas = verify(inst, &alloc);
                    report.allocation = Some(alloc);
                    report.feasibility = Some(feas);
                }
                Err(RestoreError::RateShortfall { rates_bps }) => {
                    report.status = SolveStatus::Infeasible;
                    report.notes.push(format!(
                        "rounded allocation misses the rate threshold; per-user rates {rates_bps:?}"
                    ));
                }
                Err(e) => {
                    report.status = SolveStatus::Infeasible;
                    report.notes.push(format!("restore failed: {e}"));
                }
            }
        }
    }
    report.notes.push(format!(
        "extraction: threshold {} with matching repair{}",
        cfg.rounding_threshold,
        if cfg.polish { " and pinned polish" } else { "" }
    ));
    report.wall_ms = t0.elapsed().as_secs_f64() * 1e3;
    report
}

/// Itemized constraint verification of a decoded allocation.
pub fn verify(inst: &ProblemInstance, alloc: &Allocation) -> FeasibilityReport {
    let p = &inst.scenario.params;
    let mut items = Vec::new();

    let mut band_caps_worst = 0.0f64;
    let mut guard_rule_worst = 0.0f64;
    for (r, region) in inst.regions.iter().enumerate() {
        let total: f64 = alloc.unused_edge_hz[r]
            + alloc.widths_hz[r].iter().sum::<f64>()
            + alloc.guards_hz[r].iter().sum::<f64>();
        let residual = total - region.b_tot_hz;
        items.push(CheckItem {
            name: format!("region_budget[r{r}]"),
            pass: residual.abs() <= (1e-9 * region.b_tot_hz).min(0.1),
            residual,
        });
        items.push(CheckItem {
            name: format!("edge_bounds[r{r}]"),
            pass: alloc.unused_edge_hz[r] >= -1e-9 * region.b_tot_hz
                && alloc.unused_edge_hz[r] <= region.b_tot_hz * (1.0 + 1e-9),
            residual: alloc.unused_edge_hz[r],
        });
        for &w in &alloc.widths_hz[r] {
            let excess = (w - p.b_max_hz * (1.0 + 1e-9)).max(-w);
            if excess > band_caps_worst {
                band_caps_worst = excess;
            }
        }
        for (&w, &g) in alloc.widths_hz[r].iter().zip(&alloc.guards_hz[r]) {
            let want = if w > 0.0 { p.b_g_hz } else { 0.0 };
            let dev = (g - want).abs();
            if dev > guard_rule_worst {
                guard_rule_worst = dev;
            }
        }
    }
    items.push(CheckItem {
        name: "band_caps".into(),
        pass: band_caps_worst <= 0.0,
        residual: band_caps_worst,
    });
    items.push(CheckItem {
        name: "guard_rule".into(),
        pass: guard_rule_worst <= 1e-6 * p.b_g_hz.max(1.0),
        residual: guard_rule_worst,
    });

    // assignment structure
    let mut col_seen = std::collections::HashSet::new();
    let mut rows_ok = true;
    let mut cols_ok = true;
    for a in &alloc.assigned {
        match a {
            Some(slot) => {
                if !col_seen.insert(*slot) {
                    cols_ok = false;
                }
            }
            None => rows_ok = false,
        }
    }
    items.push(CheckItem {
        name: "assign_rows".into(),
        pass: rows_ok,
        residual: if rows_ok { 0.0 } else { 1.0 },
    });
    items.push(CheckItem {
        name: "assign_cols".into(),
        pass: cols_ok,
        residual: if cols_ok { 0.0 } else { 1.0 },
    });

    let p_sum: f64 = alloc.powers_w.iter().sum();
    items.push(CheckItem {
        name: "power_budget".into(),
        pass: p_sum <= p.p_tot_w * (1.0 + 1e-9),
        residual: p_sum - p.p_tot_w,
    });
    let caps_ok = alloc
        .powers_w
        .iter()
        .all(|&pw| pw >= -1e-18 && pw <= p.p_max_w * (1.0 + 1e-9));
    items.push(CheckItem {
        name: "power_caps".into(),
        pass: caps_ok,
        residual: 0.0,
    });

    let mut rates = Vec::with_capacity(alloc.assigned.len());
    let mut rate_ok = true;
    let mut worst = f64::INFINITY;
    for i in 0..alloc.assigned.len() {
        let rate = channel::user_rate(alloc, &inst.scenario, &inst.regions, i).unwrap_or(0.0);
        if rate < p.r_thr_bps * (1.0 - 1e-6) {
            rate_ok = false;
        }
        worst = worst.min(rate - p.r_thr_bps);
        rates.push(rate);
    }
    items.push(CheckItem {
        name: "rate_threshold".into(),
        pass: rate_ok,
        residual: worst,
    });

    let sum_rate = rates.iter().sum();
    FeasibilityReport {
        items,
        per_user_rates_bps: rates,
        sum_rate_bps: sum_rate,
    }
}




#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{build, ProblemConfig};
    use crate::scenario::{default_params, Scenario};
    use crate::testkit::{desk_instance, micro_instance, spread_scenario, one_region_layout};

    #[test]
    fn apportion_largest_remainder() {
        assert_eq!(apportion(30, &[30e9, 25e9]), vec![16, 14]);
        assert_eq!(apportion(5, &[1.0]), vec![5]);
        assert_eq!(apportion(3, &[1.0, 1.0, 1.0]), vec![1, 1, 1]);
        let c = apportion(7, &[10.0, 1.0]);
        assert_eq!(c.iter().sum::<usize>(), 7);
    }

    #[test]
    fn single_user_generous_budget_saturates_bounds() {
        let inst = micro_instance(1);
        let cfg = SolverConfig::default();
        let report = run_sca(&inst, &cfg);
        assert_eq!(report.status, SolveStatus::Converged);
        assert_eq!(report.outer_iters, 1, "single slot is binary in one shot");
        let alloc = report.allocation.expect("allocation");
        let (r, s) = alloc.assigned[0].unwrap();
        let width = alloc.widths_hz[r][s - 1];
        let p = inst.scenario.params;
        assert!(width >= 0.98 * p.b_max_hz, "width {width} vs cap {}", p.b_max_hz);
        assert!(alloc.powers_w[0] >= 0.98 * p.p_max_w.min(p.p_tot_w));
        assert!(report.feasibility.unwrap().all_pass());
    }

    #[test]
    fn unreachable_rate_threshold_is_infeasible() {
        let mut sc = spread_scenario(2);
        sc.params.r_thr_bps = 1e13;
        let inst = build(sc, &one_region_layout(), &ProblemConfig::auto_omega()).unwrap();
        let report = run_sca(&inst, &SolverConfig::default());
        assert_eq!(report.status, SolveStatus::Infeasible);
        assert!(report.allocation.is_none());
    }

    #[test]
    fn zero_outer_budget_reports_maxiter() {
        let inst = micro_instance(2);
        let cfg = SolverConfig { max_outer: 0, ..Default::default() };
        let report = run_sca(&inst, &cfg);
        assert_eq!(report.status, SolveStatus::MaxIter);
        assert_eq!(report.outer_iters, 0);
        assert!(report.psi_trace.is_empty());
    }

    #[test]
    fn desk_run_descends_and_terminates() {
        let inst = desk_instance(4);
        let cfg = SolverConfig::default();
        let report = run_sca(&inst, &cfg);
        assert_eq!(report.status, SolveStatus::Converged, "warnings: {:?}", report.warnings);
        for w in report.psi_trace.windows(2) {
            assert!(w[1] <= w[0] + 10.0 * cfg.inner_kkt_tol, "trace {:?}", report.psi_trace);
        }
        assert!(*report.fp_trace.last().unwrap() < 1e-6);
        let feas = report.feasibility.unwrap();
        assert!(feas.all_pass(), "failures: {:?}", feas.failures());
    }

    #[test]
    fn converged_run_is_anchor_idempotent() {
        let inst = desk_instance(3);
        let cfg = SolverConfig::default();
        let first = run_sca(&inst, &cfg);
        assert_eq!(first.status, SolveStatus::Converged);
        let a1 = first.allocation.unwrap();
        let anchor: Vec<f64> = {
            let map = *inst.map();
            let mut x = vec![0.0; map.n_assign()];
            for (i, slot) in a1.assigned.iter().enumerate() {
                let (r, s) = slot.unwrap();
                x[map.assign(i, r, s)] = 1.0;
            }
            x
        };
        let again = run_sca(&inst, &SolverConfig { initial_anchor: Some(anchor), ..cfg });
        assert_eq!(again.status, SolveStatus::Converged);
        let a2 = again.allocation.unwrap();
        assert_eq!(a1.assigned, a2.assigned, "assignment is a penalty fixed point");
        let r1 = a1.sum_rate_bps();
        let r2 = a2.sum_rate_bps();
        assert!((r1 - r2).abs() <= 5e-3 * r1.max(r2), "{r1} vs {r2}");
    }

    #[test]
    fn round_and_restore_is_identity_on_binary_points() {
        let inst = desk_instance(3);
        let report = run_sca(&inst, &SolverConfig::default());
        let alloc = report.allocation.unwrap();
        // rebuild the relaxed point from the allocation and round again
        let map = *inst.map();
        let mut assign = vec![0.0; map.n_assign()];
        for (i, slot) in alloc.assigned.iter().enumerate() {
            let (r, s) = slot.unwrap();
            assign[map.assign(i, r, s)] = 1.0;
        }
        let mut z = vec![0.0; map.n_z()];
        for r in 0..map.n_regions {
            let su = &inst.subst[r];
            z[map.z_width(r, 0)] = su.width.z_from_bandwidth(alloc.unused_edge_hz[r]);
            for s in 1..=map.slots {
                let w = alloc.widths_hz[r][s - 1].max(inst.min_band_hz);
                z[map.z_width(r, s)] = su.width.z_from_bandwidth(w);
                let t: f64 = if alloc.widths_hz[r][s - 1] > 0.0 { 1.0 } else { 0.0 };
                let gain = (inst.scenario.params.b_g_hz / su.guard.log_scale_hz).exp() - 1.0;
                z[map.z_guard(r, s)] = su.guard.z_ref() * (1.0 + t * gain);
            }
        }
        let point = PrimalPoint { assign, power: alloc.powers_w.clone(), z };
        let again = round_and_restore(&inst, &point, &SolverConfig::default()).unwrap();
        assert_eq!(again.assigned, alloc.assigned);
        for r in 0..map.n_regions {
            for s in 0..map.slots {
                let a = alloc.widths_hz[r][s];
                let b = again.widths_hz[r][s];
                assert!((a - b).abs() <= 1e-6 * a.max(1.0), "width drift {a} vs {b}");
            }
        }
    }

    #[test]
    fn conflicting_half_assignments_repaired_optimally() {
        let inst = micro_instance(2);
        let map = *inst.map();
        let cols = map.n_slots_total();
        // both users sit at 0.5 on slot 1; distinct second-best implied by rates
        let mut assign = vec![0.0; map.n_assign()];
        assign[map.assign(0, 0, 1)] = 0.5;
        assign[map.assign(0, 0, 2)] = 0.5;
        assign[map.assign(1, 0, 1)] = 0.5;
        assign[map.assign(1, 0, 2)] = 0.5;
        let su = &inst.subst[0];
        let mut z = vec![0.0; map.n_z()];
        z[map.z_width(0, 0)] = su.width.z_from_bandwidth(1e9);
        for s in 1..=map.slots {
            z[map.z_width(0, s)] = su.width.z_from_bandwidth(3e9);
            let gain = (inst.scenario.params.b_g_hz / su.guard.log_scale_hz).exp() - 1.0;
            z[map.z_guard(0, s)] = su.guard.z_ref() * (1.0 + 1.0 * gain);
        }
        let power = vec![inst.scenario.params.p_max_w * 0.8; 2];
        let point = PrimalPoint { assign, power: power.clone(), z: z.clone() };
        let alloc = round_and_restore(&inst, &point, &SolverConfig::default()).unwrap();
        // oracle: enumerate both pairings on the same relaxed rate matrix
        let weights = rate_matrix(&inst, &power, &z);
        let (best, _) = crate::assign::enumerate_max_weight(&weights).unwrap();
        let got: Vec<usize> = alloc
            .assigned
            .iter()
            .map(|a| {
                let (r, s) = a.unwrap();
                map.slot(r, s)
            })
            .collect();
        assert_eq!(got, best);
        let seen: std::collections::HashSet<_> = got.iter().collect();
        assert_eq!(seen.len(), 2, "distinct sub-bands");
    }

    #[test]
    fn verify_flags_single_hertz_budget_violation() {
        let inst = micro_instance(2);
        let report = run_sca(&inst, &SolverConfig::default());
        let mut alloc = report.allocation.unwrap();
        let feas = verify(&inst, &alloc);
        assert!(feas.all_pass(), "failures: {:?}", feas.failures());
        alloc.unused_edge_hz[0] += 1.0;
        let feas = verify(&inst, &alloc);
        let item = feas.items.iter().find(|c| c.name == "region_budget[r0]").unwrap();
        assert!(!item.pass);
        assert!((item.residual - 1.0).abs() < 1e-6);
        let others_ok = feas
            .items
            .iter()
            .filter(|c| c.name != "region_budget[r0]" && c.name != "edge_bounds[r0]")
            .all(|c| c.pass);
        assert!(others_ok);
    }

    #[test]
    fn solve_times_grow_with_instance_size() {
        // complexity sanity: per-outer-iteration time grows with users
        let mut per_iter = Vec::new();
        for n in [2usize, 6] {
            let inst = desk_instance(n);
            let report = run_sca(&inst, &SolverConfig::default());
            let iters = report.outer_iters.max(1) as f64;
            per_iter.push(report.wall_ms / iters);
        }
        assert!(
            per_iter[1] > per_iter[0],
            "expected growth, got {per_iter:?}"
        );
    }

    #[test]
    fn default_config_matches_reference_algorithm_settings() {
        let cfg = SolverConfig::default();
        assert_eq!(cfg.epsilon, 1e-6);
        assert_eq!(cfg.max_outer, 200);
        assert_eq!(cfg.rounding_threshold, 0.5);
        let p = default_params(4);
        let sc = Scenario::with_user_distances(20.0, 20.0, 2.0, &[2.0, 3.0, 4.0, 5.0], p);
        let inst = build(sc, &crate::testkit::two_region_layout(), &ProblemConfig::auto_omega()).unwrap();
        assert_eq!(inst.penalty_weight, 200.0);
    }
}
