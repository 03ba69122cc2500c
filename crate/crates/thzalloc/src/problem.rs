//! Assembly of the penalized convexified allocation problem.
//!
//! Per-slot bandwidths, guard widths, and the unused edge bandwidth are
//! substituted as `B = offset + log_scale * ln(z_gain * Z)`, which makes the
//! per-slot rate concave in `Z` provided `1 / log_scale` exceeds a
//! region-dependent curvature bound. The module exposes the objective, the
//! constraint residuals, and their analytic first derivatives; the inner
//! solver additionally consumes second-derivative bundles.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::absorption::{RegionModel, SpectrumLayout};
use crate::channel::{self, ChannelError, SPEED_OF_LIGHT};
use crate::scenario::{Scenario, ScenarioError};

/// Reference substitution constants and penalty configuration.
pub const XI_DEFAULT_HZ: f64 = 5.011872336272722e9; // 10^9.7
pub const OMEGA_DEFAULT_HZ: f64 = 5.011872336272725e10; // 10^10.7
pub const VARSIGMA_DEFAULT: f64 = 1e-3;
pub const PENALTY_WEIGHT_DEFAULT: f64 = 200.0;
/// Bandwidth floor keeping log terms finite (Hz); negligible next to
/// GHz-scale bands.
pub const MIN_BAND_DEFAULT_HZ: f64 = 1e3;
/// Objective rates are expressed in units of this many bit/s so the penalty
/// weight and tolerance operate at their intended magnitudes.
pub const RATE_SCALE_DEFAULT: f64 = 1e9;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("layout has no regions")]
    EmptyLayout,
    #[error(
        "region {region}: log-scale {omega:.3e} violates the concavity condition \
         (needs 1/omega > {bound:.3e}, i.e. omega < {max_omega:.3e})"
    )]
    ConvexityCondition {
        region: usize,
        omega: f64,
        bound: f64,
        max_omega: f64,
    },
    #[error("region {region}: log-scale {omega:.3e} too small for a representable substitution")]
    SubstitutionUnderflow { region: usize, omega: f64 },
    #[error("z = {0} outside the positive domain of the substitution")]
    ZDomain(f64),
    #[error("fixed unused-edge list has {got} entries for {want} regions")]
    BadFixedEdge { got: usize, want: usize },
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

/// Constants of one substitution `B = offset + log_scale * ln(z_gain * Z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubstConsts {
    pub offset_hz: f64,
    pub log_scale_hz: f64,
    pub z_gain: f64,
}

impl SubstConsts {
    /// The Z value mapping to zero bandwidth.
    pub fn z_ref(&self) -> f64 {
        (-self.offset_hz / self.log_scale_hz).exp() / self.z_gain
    }

    pub fn bandwidth_from_z(&self, z: f64) -> Result<f64, ProblemError> {
        if !(z > 0.0) {
            return Err(ProblemError::ZDomain(z));
        }
        Ok(self.bandwidth_from_z_unchecked(z))
    }

    pub(crate) fn bandwidth_from_z_unchecked(&self, z: f64) -> f64 {
        self.offset_hz + self.log_scale_hz * (self.z_gain * z).ln()
    }

    pub fn z_from_bandwidth(&self, b_hz: f64) -> f64 {
        ((b_hz - self.offset_hz) / self.log_scale_hz).exp() / self.z_gain
    }
}

/// Substitution constants of one region (widths and the unused edge share
/// one triple, guards another) plus the concavity curvature bound.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RegionSubst {
    pub width: SubstConsts,
    pub guard: SubstConsts,
    /// Curvature bound the inverse log-scale must exceed.
    pub curvature_bound: f64,
}

/// How the per-region log-scale is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OmegaMode {
    /// Use this value everywhere and fail the build when it violates the
    /// concavity condition.
    Fixed(f64),
    /// Pick `margin / bound` per region (capped), which always satisfies the
    /// condition with room to spare.
    Auto { margin: f64, cap: f64 },
}

#[derive(Debug, Clone)]
pub struct ProblemConfig {
    pub xi_hz: f64,
    pub omega: OmegaMode,
    pub varsigma: f64,
    pub penalty_weight: f64,
    pub min_band_hz: f64,
    /// The distance bound in the curvature formula is `dist_margin * d_max`.
    pub dist_margin: f64,
    pub rate_scale: f64,
    /// Pins the unused edge bandwidth per region (fixed-edge scheme).
    pub b_delta_fixed_hz: Option<Vec<f64>>,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        Self {
            xi_hz: XI_DEFAULT_HZ,
            omega: OmegaMode::Fixed(OMEGA_DEFAULT_HZ),
            varsigma: VARSIGMA_DEFAULT,
            penalty_weight: PENALTY_WEIGHT_DEFAULT,
            min_band_hz: MIN_BAND_DEFAULT_HZ,
            dist_margin: 1.1,
            rate_scale: RATE_SCALE_DEFAULT,
            b_delta_fixed_hz: None,
        }
    }
}

impl ProblemConfig {
    /// Default configuration with the log-scale chosen per region to satisfy
    /// the concavity condition.
    pub fn auto_omega() -> Self {
        Self {
            omega: OmegaMode::Auto { margin: 0.5, cap: OMEGA_DEFAULT_HZ },
            ..Default::default()
        }
    }
}

/// Index layout of the flat variable vector `[assign | power | z]`.
///
/// Assignment variables are ordered user-major over `n_regions * slots`
/// columns. The z block holds, per region, the width slots (`0` is the
/// unused edge, then `1..=slots`) followed by the guard slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarMap {
    pub n_users: usize,
    pub n_regions: usize,
    /// Sub-band slots per region (equal to `n_users`).
    pub slots: usize,
}

impl VarMap {
    pub fn n_assign(&self) -> usize {
        self.n_users * self.n_regions * self.slots
    }
    pub fn n_power(&self) -> usize {
        self.n_users
    }
    pub fn n_z(&self) -> usize {
        self.n_regions * (2 * self.slots + 1)
    }
    pub fn n_total(&self) -> usize {
        self.n_assign() + self.n_power() + self.n_z()
    }
    pub fn n_slots_total(&self) -> usize {
        self.n_regions * self.slots
    }
    /// Column index of slot `s` (1-based) in region `r`.
    pub fn slot(&self, r: usize, s: usize) -> usize {
        r * self.slots + (s - 1)
    }
    pub fn slot_to_region(&self, m: usize) -> (usize, usize) {
        (m / self.slots, m % self.slots + 1)
    }
    pub fn assign(&self, i: usize, r: usize, s: usize) -> usize {
        i * self.n_slots_total() + self.slot(r, s)
    }
    pub fn power(&self, i: usize) -> usize {
        self.n_assign() + i
    }
    /// Width-substitution variable `j` of region `r`; `j = 0` is the unused
    /// edge slot, `1..=slots` the sub-bands. Index into the z block.
    pub fn z_width(&self, r: usize, j: usize) -> usize {
        r * (2 * self.slots + 1) + j
    }
    /// Guard-substitution variable of slot `s` (1-based) in region `r`.
    pub fn z_guard(&self, r: usize, s: usize) -> usize {
        r * (2 * self.slots + 1) + self.slots + 1 + (s - 1)
    }
    /// Global index of a z-block entry.
    pub fn z_global(&self, z_local: usize) -> usize {
        self.n_assign() + self.n_power() + z_local
    }
}

/// A primal point of the problem: relaxed assignment, powers (W), and
/// substitution variables.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalPoint {
    pub assign: Vec<f64>,
    pub power: Vec<f64>,
    pub z: Vec<f64>,
}

/// The penalized convexified problem instance. Immutable after build; all
/// evaluators are pure.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub scenario: Scenario,
    pub regions: Vec<RegionModel>,
    pub windows: Vec<Vec<usize>>,
    pub subst: Vec<RegionSubst>,
    /// Distance bound used by the curvature check.
    pub dist_bound_m: f64,
    pub min_band_hz: f64,
    pub rate_scale: f64,
    pub penalty_weight: f64,
    pub b_delta_fixed_hz: Option<Vec<f64>>,
    map: VarMap,
}

/// Curvature bound of a region: `|sigma2| (D k(f_ref) e^{D sigma3} - 1)`.
pub fn curvature_bound(region: &RegionModel, dist_bound_m: f64) -> f64 {
    let k_ref = region.kappa_unchecked(region.f_ref_hz);
    region.sigma2.abs() * (dist_bound_m * k_ref * (dist_bound_m * region.sigma3).exp() - 1.0)
}

/// Builds the problem instance, validating the concavity condition region by
/// region.
pub fn build(
    scenario: Scenario,
    layout: &SpectrumLayout,
    config: &ProblemConfig,
) -> Result<ProblemInstance, ProblemError> {
    scenario.validate()?;
    if layout.regions.is_empty() {
        return Err(ProblemError::EmptyLayout);
    }
    if let Some(fixed) = &config.b_delta_fixed_hz {
        if fixed.len() != layout.regions.len() {
            return Err(ProblemError::BadFixedEdge {
                got: fixed.len(),
                want: layout.regions.len(),
            });
        }
    }
    let dist_bound_m = config.dist_margin * scenario.d_max_m();
    let mut subst = Vec::with_capacity(layout.regions.len());
    for (r, region) in layout.regions.iter().enumerate() {
        let bound = curvature_bound(region, dist_bound_m);
        let omega = match config.omega {
            OmegaMode::Fixed(omega) => {
                if bound > 0.0 && 1.0 / omega <= bound {
                    return Err(ProblemError::ConvexityCondition {
                        region: r,
                        omega,
                        bound,
                        max_omega: 1.0 / bound,
                    });
                }
                omega
            }
            OmegaMode::Auto { margin, cap } => {
                if bound > 0.0 {
                    (margin / bound).min(cap)
                } else {
                    cap
                }
            }
        };
        // keep exp arguments of the substitution representable
        let reach = config.xi_hz.abs().max(region.b_tot_hz) / omega;
        if reach > 600.0 {
            return Err(ProblemError::SubstitutionUnderflow { region: r, omega });
        }
        let consts = SubstConsts {
            offset_hz: config.xi_hz,
            log_scale_hz: omega,
            z_gain: config.varsigma,
        };
        subst.push(RegionSubst {
            width: consts,
            guard: consts,
            curvature_bound: bound,
        });
    }
    let map = VarMap {
        n_users: scenario.n_users(),
        n_regions: layout.regions.len(),
        slots: scenario.n_users(),
    };
    Ok(ProblemInstance {
        scenario,
        regions: layout.regions.clone(),
        windows: layout.windows.clone(),
        subst,
        dist_bound_m,
        min_band_hz: config.min_band_hz,
        rate_scale: config.rate_scale,
        penalty_weight: config.penalty_weight,
        b_delta_fixed_hz: config.b_delta_fixed_hz.clone(),
        map,
    })
}

/// One slot's Z box; guard slots carry equal bounds realizing the
/// assignment-coupled guard rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZBounds {
    pub min: f64,
    pub max: f64,
}

impl ProblemInstance {
    pub fn map(&self) -> &VarMap {
        &self.map
    }

    pub fn n_users(&self) -> usize {
        self.map.n_users
    }

    pub fn n_regions(&self) -> usize {
        self.map.n_regions
    }

    pub fn r_thr_bps(&self) -> f64 {
        self.scenario.params.r_thr_bps
    }

    /// Sum over guard slots of `sum_i x[i, m]` for slot column `m`.
    fn column_sum(&self, assign: &[f64], m: usize) -> f64 {
        let cols = self.map.n_slots_total();
        (0..self.map.n_users).map(|i| assign[i * cols + m]).sum()
    }

    /// Z bounds per z-block entry given the relaxed assignment. Width slots
    /// have constant boxes (`min_band..b_max`, and `0..b_tot` for the unused
    /// edge slot); guard slots have both bounds equal and affine in the
    /// assignment column sum.
    pub fn z_bounds(&self, assign: &[f64]) -> Vec<ZBounds> {
        let mut out = vec![ZBounds { min: 0.0, max: 0.0 }; self.map.n_z()];
        let b_max = self.scenario.params.b_max_hz;
        let b_g = self.scenario.params.b_g_hz;
        for r in 0..self.map.n_regions {
            let su = &self.subst[r];
            let edge = match &self.b_delta_fixed_hz {
                Some(fixed) => {
                    let z = su.width.z_from_bandwidth(fixed[r]);
                    ZBounds { min: z, max: z }
                }
                None => ZBounds {
                    min: su.width.z_ref(),
                    max: su.width.z_from_bandwidth(self.regions[r].b_tot_hz),
                },
            };
            out[self.map.z_width(r, 0)] = edge;
            let w_min = su.width.z_from_bandwidth(self.min_band_hz);
            let w_max = su.width.z_from_bandwidth(b_max);
            for j in 1..=self.map.slots {
                out[self.map.z_width(r, j)] = ZBounds { min: w_min, max: w_max };
            }
            let gref = su.guard.z_ref();
            let gain = (b_g / su.guard.log_scale_hz).exp() - 1.0;
            for s in 1..=self.map.slots {
                let t = self.column_sum(assign, self.map.slot(r, s));
                let z = gref * (1.0 + t * gain);
                out[self.map.z_guard(r, s)] = ZBounds { min: z, max: z };
            }
        }
        out
    }

    /// Bandwidth-budget residual of region `r` in Hz, evaluated in the log
    /// domain: decoded widths plus guards plus the unused edge, minus the
    /// region bandwidth. Non-positive iff the budget holds.
    pub fn product_constraint(&self, z: &[f64], r: usize) -> f64 {
        let su = &self.subst[r];
        let mut total = 0.0;
        for j in 0..=self.map.slots {
            total += su.width.bandwidth_from_z_unchecked(z[self.map.z_width(r, j)]);
        }
        for s in 1..=self.map.slots {
            total += su.guard.bandwidth_from_z_unchecked(z[self.map.z_guard(r, s)]);
        }
        total - self.regions[r].b_tot_hz
    }

    /// Decoded layout of region `r`: (unused edge, widths, guards).
    pub fn decode_region(&self, z: &[f64], r: usize) -> (f64, Vec<f64>, Vec<f64>) {
        let su = &self.subst[r];
        let b_delta = su.width.bandwidth_from_z_unchecked(z[self.map.z_width(r, 0)]);
        let widths = (1..=self.map.slots)
            .map(|j| su.width.bandwidth_from_z_unchecked(z[self.map.z_width(r, j)]))
            .collect();
        let guards = (1..=self.map.slots)
            .map(|s| su.guard.bandwidth_from_z_unchecked(z[self.map.z_guard(r, s)]))
            .collect();
        (b_delta, widths, guards)
    }

    /// Center frequency of slot `(r, s)` under the substituted layout.
    pub fn center_in_z(&self, r: usize, s: usize, z: &[f64]) -> Result<f64, ProblemError> {
        let (b_delta, widths, guards) = self.decode_region(z, r);
        Ok(channel::center_frequency(&self.regions[r], b_delta, &widths, &guards, s)?)
    }

    /// Rate of user `i` on slot `(r, s)` at power `p_i` under the substituted
    /// layout (bit/s): the closed-form rate composed with the substitution.
    pub fn rate_in_z(&self, i: usize, r: usize, s: usize, p_i: f64, z: &[f64]) -> Result<f64, ProblemError> {
        let (b_delta, widths, guards) = self.decode_region(z, r);
        let f = channel::center_frequency(&self.regions[r], b_delta, &widths, &guards, s)?;
        let link = self.scenario.link_with_power(i, p_i);
        Ok(channel::rate_approx(&link, &self.regions[r], f, widths[s - 1])?)
    }

    fn rate_value_unchecked(&self, i: usize, r: usize, s: usize, p_i: f64, z: &[f64]) -> f64 {
        let (b_delta, widths, guards) = self.decode_region(z, r);
        let f = channel::center_frequency_unchecked(&self.regions[r], b_delta, &widths, &guards, s);
        let link = self.scenario.link_with_power(i, p_i);
        channel::rate_approx_unchecked(&link, &self.regions[r], f, widths[s - 1])
    }

    /// Linearized binary penalty `sum(anchor^2 + x (1 - 2 anchor))`: the
    /// convex overestimate of `sum x (1 - x)` anchored at the previous
    /// iterate; equals the true gap when `x == anchor`.
    pub fn penalty_term(&self, assign: &[f64], anchor: &[f64]) -> f64 {
        assign
            .iter()
            .zip(anchor)
            .map(|(&x, &a)| a * a + x * (1.0 - 2.0 * a))
            .sum()
    }

    /// The binary infeasibility measure `sum x (1 - x)`.
    pub fn binary_gap(assign: &[f64]) -> f64 {
        assign.iter().map(|&x| x * (1.0 - x)).sum()
    }

    /// Penalized objective: minus the (scaled) weighted sum rate plus the
    /// penalty term. Also returns the penalty term itself for the
    /// termination test.
    pub fn objective_psi(
        &self,
        assign: &[f64],
        power: &[f64],
        z: &[f64],
        anchor: &[f64],
    ) -> (f64, f64) {
        let mut rate_sum = 0.0;
        let cols = self.map.n_slots_total();
        for i in 0..self.map.n_users {
            for m in 0..cols {
                let x = assign[i * cols + m];
                if x != 0.0 {
                    let (r, s) = self.map.slot_to_region(m);
                    rate_sum += x * self.rate_value_unchecked(i, r, s, power[i], z);
                }
            }
        }
        let fp = self.penalty_term(assign, anchor);
        (-rate_sum / self.rate_scale + self.penalty_weight * fp, fp)
    }

    /// Weighted sum rate `sum_i sum_m x[i,m] R[i,m]` in bit/s.
    pub fn weighted_sum_rate(&self, assign: &[f64], power: &[f64], z: &[f64]) -> f64 {
        let cols = self.map.n_slots_total();
        let mut acc = 0.0;
        for i in 0..self.map.n_users {
            for m in 0..cols {
                let x = assign[i * cols + m];
                if x != 0.0 {
                    let (r, s) = self.map.slot_to_region(m);
                    acc += x * self.rate_value_unchecked(i, r, s, power[i], z);
                }
            }
        }
        acc
    }

    /// Relaxed rate of user `i`: `sum_m x[i,m] R[i,m]` in bit/s.
    pub fn user_rate_relaxed(&self, i: usize, assign: &[f64], power: &[f64], z: &[f64]) -> f64 {
        let cols = self.map.n_slots_total();
        let mut acc = 0.0;
        for m in 0..cols {
            let x = assign[i * cols + m];
            if x != 0.0 {
                let (r, s) = self.map.slot_to_region(m);
                acc += x * self.rate_value_unchecked(i, r, s, power[i], z);
            }
        }
        acc
    }

    /// First- and second-order data of every `(user, slot)` rate term at a
    /// point, for gradient assembly and the inner solver's Hessian.
    pub(crate) fn rate_bundles(&self, power: &[f64], z: &[f64]) -> Vec<RateBundle> {
        let cols = self.map.n_slots_total();
        let mut bundles = Vec::with_capacity(self.map.n_users * cols);
        for r in 0..self.map.n_regions {
            let (b_delta, widths, guards) = self.decode_region(z, r);
            for s in 1..=self.map.slots {
                let f = channel::center_frequency_unchecked(
                    &self.regions[r],
                    b_delta,
                    &widths,
                    &guards,
                    s,
                );
                for i in 0..self.map.n_users {
                    bundles.push(rate_bundle(
                        &self.scenario.link_with_power(i, power[i]),
                        &self.regions[r],
                        f,
                        widths[s - 1],
                    ));
                }
            }
        }
        // reorder to user-major (i * cols + m)
        let mut out = vec![RateBundle::default(); bundles.len()];
        let mut idx = 0;
        for r in 0..self.map.n_regions {
            for s in 1..=self.map.slots {
                let m = self.map.slot(r, s);
                for i in 0..self.map.n_users {
                    out[i * cols + m] = bundles[idx];
                    idx += 1;
                }
            }
        }
        out
    }

    /// Chain-rule factors of slot `(r, s)`'s rate term with respect to the
    /// z variables it touches: `(z_local, dB/dz, df/dz, d2B/dz2, d2f/dz2)`.
    pub(crate) fn z_chain(&self, r: usize, s: usize, z: &[f64]) -> Vec<ZChain> {
        let su = &self.subst[r];
        let eta = self.regions[r].eta();
        let mut chain = Vec::with_capacity(s + 2);
        // unused edge and earlier widths shift the center by their full width
        for j in 0..s {
            let zi = self.map.z_width(r, j);
            let w = su.width.log_scale_hz / z[zi];
            chain.push(ZChain {
                z_local: zi,
                db_dz: 0.0,
                df_dz: -eta * w,
                d2b_dz2: 0.0,
                d2f_dz2: eta * w / z[zi],
            });
        }
        // own width: half-width shift plus the bandwidth argument itself
        {
            let zi = self.map.z_width(r, s);
            let w = su.width.log_scale_hz / z[zi];
            chain.push(ZChain {
                z_local: zi,
                db_dz: w,
                df_dz: -eta * 0.5 * w,
                d2b_dz2: -w / z[zi],
                d2f_dz2: eta * 0.5 * w / z[zi],
            });
        }
        // earlier guards shift the center by their full width
        for k in 1..s {
            let zi = self.map.z_guard(r, k);
            let w = su.guard.log_scale_hz / z[zi];
            chain.push(ZChain {
                z_local: zi,
                db_dz: 0.0,
                df_dz: -eta * w,
                d2b_dz2: 0.0,
                d2f_dz2: eta * w / z[zi],
            });
        }
        chain
    }

    /// Analytic gradients of the penalized objective and of the coupling
    /// constraints (power budget, per-user rate thresholds, per-region
    /// bandwidth budgets) with respect to the flat `[assign | power | z]`
    /// vector.
    pub fn gradients(&self, point: &PrimalPoint, anchor: &[f64]) -> Gradients {
        let map = &self.map;
        let n = map.n_total();
        let cols = map.n_slots_total();
        let bundles = self.rate_bundles(&point.power, &point.z);

        let mut psi = vec![0.0; n];
        let mut rate_thr = vec![vec![0.0; n]; map.n_users];
        let scale = self.rate_scale;

        for i in 0..map.n_users {
            let gi = &mut rate_thr[i];
            for m in 0..cols {
                let x = point.assign[i * cols + m];
                let b = &bundles[i * cols + m];
                let (r, s) = map.slot_to_region(m);
                // d/dx
                gi[map.assign(i, r, s)] = -b.value / scale;
                // d/dP_i
                gi[map.power(i)] += -x * b.d_p / scale;
                // d/dz
                for c in self.z_chain(r, s, &point.z) {
                    let d = b.d_b * c.db_dz + b.d_f * c.df_dz;
                    gi[map.z_global(c.z_local)] += -x * d / scale;
                }
            }
            for (j, v) in gi.iter().enumerate() {
                psi[j] += *v;
            }
        }
        // penalty term gradient
        for (idx, (&_x, &a)) in point.assign.iter().zip(anchor).enumerate() {
            psi[idx] += self.penalty_weight * (1.0 - 2.0 * a);
        }

        let mut power_budget = vec![0.0; n];
        for i in 0..map.n_users {
            power_budget[map.power(i)] = 1.0;
        }

        let mut region_budget = vec![vec![0.0; n]; map.n_regions];
        for r in 0..map.n_regions {
            let su = &self.subst[r];
            let g = &mut region_budget[r];
            for j in 0..=map.slots {
                let zi = map.z_width(r, j);
                g[map.z_global(zi)] = su.width.log_scale_hz / point.z[zi];
            }
            for s in 1..=map.slots {
                let zi = map.z_guard(r, s);
                g[map.z_global(zi)] = su.guard.log_scale_hz / point.z[zi];
            }
        }

        let on_boundary = self.point_on_boundary(point);
        Gradients {
            psi,
            power_budget,
            rate_thr,
            region_budget,
            on_boundary,
        }
    }

    fn point_on_boundary(&self, point: &PrimalPoint) -> bool {
        let p = &self.scenario.params;
        let zb = self.z_bounds(&point.assign);
        point.assign.iter().any(|&x| x <= 0.0 || x >= 1.0)
            || point.power.iter().any(|&pw| pw <= 0.0 || pw >= p.p_max_w)
            || point
                .z
                .iter()
                .zip(&zb)
                .any(|(&z, b)| b.max > b.min && (z <= b.min || z >= b.max))
    }

    /// Human-readable dump: variables with bounds plus constraint residuals
    /// at a point.
    pub fn dump(&self, point: &PrimalPoint, anchor: &[f64]) -> String {
        use std::fmt::Write;
        let map = &self.map;
        let mut out = String::new();
        let (psi, fp) = self.objective_psi(&point.assign, &point.power, &point.z, anchor);
        writeln!(out, "problem: users={} regions={} slots={}", map.n_users, map.n_regions, map.slots).unwrap();
        writeln!(out, "objective: psi={psi:.9e} penalty_term={fp:.9e}").unwrap();
        for i in 0..map.n_users {
            for m in 0..map.n_slots_total() {
                let (r, s) = map.slot_to_region(m);
                writeln!(
                    out,
                    "x[u{i},r{r},s{s}] = {:.6} in [0, 1]",
                    point.assign[i * map.n_slots_total() + m]
                )
                .unwrap();
            }
        }
        for i in 0..map.n_users {
            writeln!(
                out,
                "p[u{i}] = {:.6e} in [0, {:.6e}]",
                point.power[i], self.scenario.params.p_max_w
            )
            .unwrap();
        }
        let zb = self.z_bounds(&point.assign);
        for r in 0..map.n_regions {
            for j in 0..=map.slots {
                let zi = map.z_width(r, j);
                let name = if j == 0 { "edge".into() } else { format!("width{j}") };
                writeln!(out, "z[r{r},{name}] = {:.6e} in [{:.6e}, {:.6e}]", point.z[zi], zb[zi].min, zb[zi].max).unwrap();
            }
            for s in 1..=map.slots {
                let zi = map.z_guard(r, s);
                writeln!(out, "z[r{r},guard{s}] = {:.6e} in [{:.6e}, {:.6e}]", point.z[zi], zb[zi].min, zb[zi].max).unwrap();
            }
        }
        let sum_p: f64 = point.power.iter().sum();
        writeln!(out, "power_budget residual = {:.6e} W", sum_p - self.scenario.params.p_tot_w).unwrap();
        for i in 0..map.n_users {
            let rate = self.user_rate_relaxed(i, &point.assign, &point.power, &point.z);
            writeln!(out, "rate_thr[u{i}] residual = {:.6e} bit/s", self.r_thr_bps() - rate).unwrap();
        }
        for r in 0..map.n_regions {
            writeln!(out, "bandwidth_budget[r{r}] residual = {:.6e} Hz", self.product_constraint(&point.z, r)).unwrap();
        }
        for i in 0..map.n_users {
            let row: f64 = (0..map.n_slots_total())
                .map(|m| point.assign[i * map.n_slots_total() + m])
                .sum();
            writeln!(out, "row_sum[u{i}] = {row:.9}").unwrap();
        }
        out
    }
}

/// Chain factors of one z variable inside a rate term.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ZChain {
    pub z_local: usize,
    pub db_dz: f64,
    pub df_dz: f64,
    pub d2b_dz2: f64,
    pub d2f_dz2: f64,
}

/// Value and partial derivatives of one rate term with respect to its three
/// smooth arguments: power `P`, bandwidth `B`, and center frequency `F`.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct RateBundle {
    pub value: f64,
    pub d_p: f64,
    pub d_b: f64,
    pub d_f: f64,
    pub d_pp: f64,
    pub d_pb: f64,
    pub d_pf: f64,
    pub d_bb: f64,
    pub d_bf: f64,
    pub d_ff: f64,
}

/// Analytic derivatives of `R = B log2(1 + P A(F) / B)` where
/// `A(F) = rho exp(-k(F) d) / (F d)^2`.
pub(crate) fn rate_bundle(
    link: &crate::channel::LinkParams,
    region: &RegionModel,
    f_hz: f64,
    b_hz: f64,
) -> RateBundle {
    const LN2: f64 = std::f64::consts::LN_2;
    let d = link.dist_m;
    let rho = link.rho();
    let e = (region.sigma1 + region.sigma2 * f_hz).exp();
    let kappa = e + region.sigma3;
    let a = rho * (-kappa * d).exp() / (f_hz * f_hz * d * d);
    let q = -region.sigma2 * e * d - 2.0 / f_hz;
    let qp = -region.sigma2 * region.sigma2 * e * d + 2.0 / (f_hz * f_hz);
    let ap = a * q;
    let app = a * (q * q + qp);

    let p = link.power_w;
    let b = b_hz;
    let theta = p * a;
    let u = theta / b;
    let w = 1.0 / (1.0 + u);
    let l = u.ln_1p();

    RateBundle {
        value: b * l / LN2,
        d_p: a * w / LN2,
        d_b: (l - u * w) / LN2,
        d_f: p * ap * w / LN2,
        d_pp: -a * a * w * w / (b * LN2),
        d_pb: a * u * w * w / (b * LN2),
        d_pf: ap * w * w / LN2,
        d_bb: -u * u * w * w / (b * LN2),
        d_bf: p * ap * u * w * w / (b * LN2),
        d_ff: p * (app * w - p * ap * ap * w * w / b) / LN2,
    }
}

/// Gradient report of the objective and coupling constraints, flat over
/// `[assign | power | z]`. Box constraints have unit gradients and are not
/// materialized.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub psi: Vec<f64>,
    /// Gradient of `sum_i P_i - P_tot`.
    pub power_budget: Vec<f64>,
    /// Per user: gradient of `R_thr - sum_m x R` (in scaled rate units).
    pub rate_thr: Vec<Vec<f64>>,
    /// Per region: gradient of the bandwidth-budget residual (Hz).
    pub region_budget: Vec<Vec<f64>>,
    /// Set when the point touches a variable bound (finite-difference checks
    /// there need one-sided stencils).
    pub on_boundary: bool,
}

/// A decoded allocation: binary assignment, per-slot bandwidths and guard
/// widths, the unused edge bandwidth per region, derived center frequencies,
/// per-user powers and rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// Per user: the assigned `(region, slot)` with a 1-based slot index.
    pub assigned: Vec<Option<(usize, usize)>>,
    pub widths_hz: Vec<Vec<f64>>,
    pub guards_hz: Vec<Vec<f64>>,
    pub unused_edge_hz: Vec<f64>,
    pub centers_hz: Vec<Vec<f64>>,
    pub powers_w: Vec<f64>,
    pub rates_bps: Vec<f64>,
}

impl Allocation {
    pub fn sum_rate_bps(&self) -> f64 {
        self.rates_bps.iter().sum()
    }

    pub fn slot_count(&self) -> usize {
        self.widths_hz.iter().map(Vec::len).sum()
    }

    /// Binary assignment matrix, user-major over the flattened slots.
    pub fn x_matrix(&self) -> Vec<Vec<u8>> {
        let offsets: Vec<usize> = self
            .widths_hz
            .iter()
            .scan(0usize, |acc, w| {
                let o = *acc;
                *acc += w.len();
                Some(o)
            })
            .collect();
        let total = self.slot_count();
        self.assigned
            .iter()
            .map(|a| {
                let mut row = vec![0u8; total];
                if let Some((r, s)) = a {
                    row[offsets[*r] + s - 1] = 1;
                }
                row
            })
            .collect()
    }
}

pub use crate::channel::SubbandGeometry;

/// Reference attenuation constant, kept for unit sanity in tests.
pub(crate) const _C: f64 = SPEED_OF_LIGHT;
