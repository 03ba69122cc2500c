//! Sub-band geometry and achievable-rate computation.
//!
//! Rates follow the capacity-integral form: spreading loss `(4 pi f d)^2`,
//! molecular absorption `exp(-k(f) d)`, and bandwidth-proportional noise.
//! `rate_integral` integrates the capacity density numerically and serves as
//! the oracle for the closed-form `rate_approx`, which evaluates the density
//! at the sub-band center.

use thiserror::Error;

use crate::absorption::{AbsorptionError, RegionModel};
use crate::problem::Allocation;
use crate::quad::{adaptive_simpson, QuadError};
use crate::scenario::Scenario;

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Relative tolerance of the rate quadrature.
pub const RATE_QUAD_REL_TOL: f64 = 1e-8;
pub const RATE_QUAD_MAX_DEPTH: usize = 40;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("sub-band index {s} out of range 1..={len}")]
    BadSlotIndex { s: usize, len: usize },
    #[error("bandwidth and guard lists disagree: {widths} vs {guards}")]
    MismatchedLists { widths: usize, guards: usize },
    #[error("negative layout entry: {0}")]
    NegativeEntry(f64),
    #[error("layout overflows region: center {f_hz:.6e} Hz outside [{lo_hz:.6e}, {hi_hz:.6e}]")]
    LayoutOverflow { f_hz: f64, lo_hz: f64, hi_hz: f64 },
    #[error(transparent)]
    Domain(#[from] AbsorptionError),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error("user {user} has no assigned sub-band")]
    NoAssignment { user: usize },
    #[error("user {user} rate requires positive bandwidth, found {b_hz}")]
    EmptySubband { user: usize, b_hz: f64 },
}

/// Link-level parameters of one AP-user pair.
#[derive(Debug, Clone, Copy)]
pub struct LinkParams {
    pub power_w: f64,
    pub dist_m: f64,
    pub gain_ap: f64,
    pub gain_user: f64,
    pub noise_density: f64,
}

impl LinkParams {
    /// Aggregate link constant `(g_A g_U / N0) (c / 4 pi)^2`.
    pub fn rho(&self) -> f64 {
        let c4pi = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI);
        self.gain_ap * self.gain_user / self.noise_density * c4pi * c4pi
    }
}

/// Geometry of one sub-band inside a region.
#[derive(Debug, Clone, Copy)]
pub struct SubbandGeometry {
    pub region: usize,
    /// 1-based slot index within the region.
    pub slot: usize,
    pub bandwidth_hz: f64,
    pub center_hz: f64,
}

/// Center frequency of the `s`th sub-band (1-based) given the unused edge
/// bandwidth, the per-slot bandwidths, and the guard widths of the region:
/// `f_s = f_ref - eta (B_delta + sum_{k<s} B_k + B_s / 2 + sum_{k<s} G_k)`.
pub fn center_frequency(
    region: &RegionModel,
    b_delta_hz: f64,
    widths_hz: &[f64],
    guards_hz: &[f64],
    s: usize,
) -> Result<f64, ChannelError> {
    if widths_hz.len() != guards_hz.len() {
        return Err(ChannelError::MismatchedLists {
            widths: widths_hz.len(),
            guards: guards_hz.len(),
        });
    }
    if s == 0 || s > widths_hz.len() {
        return Err(ChannelError::BadSlotIndex { s, len: widths_hz.len() });
    }
    for &v in widths_hz.iter().chain(guards_hz.iter()).chain([&b_delta_hz]) {
        if v < 0.0 {
            return Err(ChannelError::NegativeEntry(v));
        }
    }
    let f = center_frequency_unchecked(region, b_delta_hz, widths_hz, guards_hz, s);
    if !region.contains(f) {
        let (lo_hz, hi_hz) = region.domain();
        return Err(ChannelError::LayoutOverflow { f_hz: f, lo_hz, hi_hz });
    }
    Ok(f)
}

/// The bare affine combination; solver-internal iterates may carry
/// float-noise-negative entries that the public entry point rejects.
pub(crate) fn center_frequency_unchecked(
    region: &RegionModel,
    b_delta_hz: f64,
    widths_hz: &[f64],
    guards_hz: &[f64],
    s: usize,
) -> f64 {
    debug_assert!(s >= 1 && s <= widths_hz.len());
    let mut offset = b_delta_hz + 0.5 * widths_hz[s - 1];
    for k in 0..s - 1 {
        offset += widths_hz[k] + guards_hz[k];
    }
    region.f_ref_hz - region.eta() * offset
}

/// Noise power over bandwidth `b_hz` at density `n0` (W/Hz).
pub fn noise_power(b_hz: f64, n0: f64) -> f64 {
    n0 * b_hz
}

/// SNR of the capacity density at frequency `f_hz` for a sub-band of
/// bandwidth `b_hz`.
pub(crate) fn snr_at(link: &LinkParams, region: &RegionModel, f_hz: f64, b_hz: f64) -> f64 {
    link.power_w * unit_power_snr(link, region, f_hz) / b_hz
}

/// Link coefficient `rho exp(-k(f) d) / (f d)^2`; the SNR equals
/// `P * coeff / B`.
pub(crate) fn unit_power_snr(link: &LinkParams, region: &RegionModel, f_hz: f64) -> f64 {
    let kappa = region.kappa_unchecked(f_hz);
    let fd = f_hz * link.dist_m;
    link.rho() * (-kappa * link.dist_m).exp() / (fd * fd)
}

/// Achievable rate as the integral of the capacity density over the sub-band
/// (bit/s). Adaptive quadrature to `RATE_QUAD_REL_TOL`; the oracle against
/// which `rate_approx` is validated.
pub fn rate_integral(
    link: &LinkParams,
    region: &RegionModel,
    f_center_hz: f64,
    b_hz: f64,
) -> Result<f64, ChannelError> {
    if !(b_hz > 0.0) {
        return Err(ChannelError::EmptySubband { user: usize::MAX, b_hz });
    }
    let lo = f_center_hz - 0.5 * b_hz;
    let hi = f_center_hz + 0.5 * b_hz;
    let (dlo, dhi) = region.domain();
    let tol = 1e-9 * region.b_tot_hz.max(1.0);
    if lo < dlo - tol || hi > dhi + tol {
        return Err(AbsorptionError::OutOfDomain { f_hz: f_center_hz, lo_hz: dlo, hi_hz: dhi }.into());
    }
    if link.power_w == 0.0 {
        return Ok(0.0);
    }
    let density = |f: f64| (1.0 + snr_at(link, region, f, b_hz)).log2();
    Ok(adaptive_simpson(density, lo, hi, RATE_QUAD_REL_TOL, RATE_QUAD_MAX_DEPTH)?)
}

/// Closed-form rate: bandwidth times the capacity density at the sub-band
/// center (bit/s). Continuous extension gives 0 at zero bandwidth.
pub fn rate_approx(
    link: &LinkParams,
    region: &RegionModel,
    f_center_hz: f64,
    b_hz: f64,
) -> Result<f64, ChannelError> {
    if b_hz == 0.0 {
        return Ok(0.0);
    }
    if b_hz < 0.0 {
        return Err(ChannelError::NegativeEntry(b_hz));
    }
    region.kappa_at(f_center_hz)?;
    Ok(rate_approx_unchecked(link, region, f_center_hz, b_hz))
}

pub(crate) fn rate_approx_unchecked(
    link: &LinkParams,
    region: &RegionModel,
    f_center_hz: f64,
    b_hz: f64,
) -> f64 {
    if b_hz <= 0.0 {
        return 0.0;
    }
    b_hz * (1.0 + snr_at(link, region, f_center_hz, b_hz)).log2()
}

/// Rate of user `i` under a binary allocation: the closed-form rate on the
/// user's (unique) assigned sub-band.
pub fn user_rate(
    allocation: &Allocation,
    scenario: &Scenario,
    regions: &[RegionModel],
    i: usize,
) -> Result<f64, ChannelError> {
    let (r, s) = allocation
        .assigned
        .get(i)
        .copied()
        .flatten()
        .ok_or(ChannelError::NoAssignment { user: i })?;
    let b = allocation.widths_hz[r][s - 1];
    if !(b > 0.0) {
        return Err(ChannelError::EmptySubband { user: i, b_hz: b });
    }
    let f = allocation.centers_hz[r][s - 1];
    let link = scenario.link_with_power(i, allocation.powers_w[i]);
    rate_approx(&link, &regions[r], f, b)
}
