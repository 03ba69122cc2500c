//! Molecular absorption data handling: sample ingestion, segmentation of the
//! spectrum into transmission windows and slope regions, and per-region
//! exponential model fitting.
//!
//! A slope region is either a PACSR (absorption coefficient rises with
//! frequency) or an NACSR (it falls). Within each region the coefficient is
//! modeled as `k(f) = exp(sigma1 + sigma2 * f) + sigma3`, fitted by damped
//! Gauss-Newton after a log-linear warm start.

use std::fmt;
use std::io::Read;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors produced while loading, segmenting, or fitting absorption data.
#[derive(Debug, Error)]
pub enum AbsorptionError {
    #[error("absorption csv: {0}")]
    Io(String),
    #[error("absorption csv line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("absorption csv line {line}: kappa {kappa} is negative")]
    NegativeKappa { line: usize, kappa: f64 },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("region fit did not converge (best rmse {best_rmse:.3e})")]
    FitDiverged { best_rmse: f64 },
    #[error("fitted sigma2 = {sigma2:.3e} violates the sign convention for {kind}")]
    SignConstraint { kind: RegionKind, sigma2: f64 },
    #[error("frequency {f_hz:.6e} Hz outside region domain [{lo_hz:.6e}, {hi_hz:.6e}]")]
    OutOfDomain { f_hz: f64, lo_hz: f64, hi_hz: f64 },
    #[error("threshold {threshold} is at or below the region-wide minimum {min_kappa:.3e}; region unusable")]
    RegionUnusable { threshold: f64, min_kappa: f64 },
}

/// Ordered, validated `(frequency, kappa)` samples of the molecular
/// absorption coefficient. Frequencies strictly increase, kappa >= 0.
#[derive(Debug, Clone, PartialEq)]
pub struct AbsorptionSamples {
    points: Vec<(f64, f64)>,
}

impl AbsorptionSamples {
    /// Builds samples from raw `(frequency_hz, kappa_per_m)` pairs: sorts by
    /// frequency, averages duplicate frequencies, rejects negative kappa.
    pub fn from_points(mut raw: Vec<(f64, f64)>) -> Result<Self, AbsorptionError> {
        if raw.is_empty() {
            return Err(AbsorptionError::InsufficientData("no samples".into()));
        }
        for (idx, (f, k)) in raw.iter().enumerate() {
            if !f.is_finite() || !k.is_finite() {
                return Err(AbsorptionError::Parse {
                    line: idx + 2,
                    msg: "non-finite value".into(),
                });
            }
            if *k < 0.0 {
                return Err(AbsorptionError::NegativeKappa {
                    line: idx + 2,
                    kappa: *k,
                });
            }
        }
        raw.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut points: Vec<(f64, f64)> = Vec::with_capacity(raw.len());
        for (f, k) in raw {
            match points.last_mut() {
                Some((pf, pk)) if *pf == f => *pk = 0.5 * (*pk + k),
                _ => points.push((f, k)),
            }
        }
        Ok(Self { points })
    }

    /// Parses the `frequency_hz,kappa_per_m` CSV format.
    pub fn from_csv(reader: impl Read) -> Result<Self, AbsorptionError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        {
            let hdr = rdr
                .headers()
                .map_err(|e| AbsorptionError::Parse { line: 1, msg: e.to_string() })?;
            let cols: Vec<&str> = hdr.iter().collect();
            if cols != ["frequency_hz", "kappa_per_m"] {
                return Err(AbsorptionError::Parse {
                    line: 1,
                    msg: format!("expected header `frequency_hz,kappa_per_m`, got `{}`", cols.join(",")),
                });
            }
        }
        let mut raw = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| AbsorptionError::Parse { line, msg: e.to_string() })?;
            if rec.len() != 2 {
                return Err(AbsorptionError::Parse {
                    line,
                    msg: format!("expected 2 fields, got {}", rec.len()),
                });
            }
            let f: f64 = rec[0]
                .parse()
                .map_err(|e| AbsorptionError::Parse { line, msg: format!("frequency: {e}") })?;
            let k: f64 = rec[1]
                .parse()
                .map_err(|e| AbsorptionError::Parse { line, msg: format!("kappa: {e}") })?;
            if k < 0.0 {
                return Err(AbsorptionError::NegativeKappa { line, kappa: k });
            }
            raw.push((f, k));
        }
        if raw.is_empty() {
            return Err(AbsorptionError::Parse { line: 2, msg: "no data rows".into() });
        }
        Self::from_points(raw)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, AbsorptionError> {
        let file = std::fs::File::open(path.as_ref())
            .map_err(|e| AbsorptionError::Io(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_csv(file)
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn freq_range(&self) -> (f64, f64) {
        (self.points[0].0, self.points[self.points.len() - 1].0)
    }

    fn slice_within(&self, lo: f64, hi: f64) -> Vec<(f64, f64)> {
        self.points
            .iter()
            .copied()
            .filter(|(f, _)| *f >= lo && *f <= hi)
            .collect()
    }

    /// Serializes back to the canonical CSV format.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("frequency_hz,kappa_per_m\n");
        for (f, k) in &self.points {
            s.push_str(&format!("{f:e},{k:e}\n"));
        }
        s
    }
}

/// Slope classification of a region within a transmission window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegionKind {
    /// Positive absorption coefficient slope region.
    Pacsr,
    /// Negative absorption coefficient slope region.
    Nacsr,
}

impl RegionKind {
    /// Layout direction sign: +1 for PACSR, -1 for NACSR. Sub-bands are laid
    /// out from the reference edge toward lower (PACSR) or higher (NACSR)
    /// frequencies.
    pub fn eta(self) -> f64 {
        match self {
            RegionKind::Pacsr => 1.0,
            RegionKind::Nacsr => -1.0,
        }
    }
}

impl fmt::Display for RegionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RegionKind::Pacsr => write!(f, "PACSR"),
            RegionKind::Nacsr => write!(f, "NACSR"),
        }
    }
}

/// Frequency bounds of one segmented region, before fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionBounds {
    pub lo_hz: f64,
    pub hi_hz: f64,
    pub kind: RegionKind,
}

/// Fitted exponential absorption model for one region:
/// `k(f) = exp(sigma1 + sigma2 f) + sigma3`.
///
/// `f_ref_hz` is the high-absorption reference edge the sub-band layout
/// starts from: the high-frequency bound for a PACSR, the low-frequency bound
/// for an NACSR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionModel {
    pub kind: RegionKind,
    pub f_ref_hz: f64,
    pub b_tot_hz: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub fit_rmse: f64,
}

impl RegionModel {
    /// Layout direction sign (+1 PACSR, -1 NACSR).
    pub fn eta(&self) -> f64 {
        self.kind.eta()
    }

    /// Frequency domain `[lo, hi]` covered by the model.
    pub fn domain(&self) -> (f64, f64) {
        let other = self.f_ref_hz - self.eta() * self.b_tot_hz;
        (self.f_ref_hz.min(other), self.f_ref_hz.max(other))
    }

    pub fn contains(&self, f_hz: f64) -> bool {
        let (lo, hi) = self.domain();
        // small tolerance for round-trip float noise in layout arithmetic
        let tol = 1e-9 * self.b_tot_hz.max(1.0);
        f_hz >= lo - tol && f_hz <= hi + tol
    }

    /// Evaluates the fitted absorption coefficient at `f_hz` (1/m).
    pub fn kappa_at(&self, f_hz: f64) -> Result<f64, AbsorptionError> {
        if !self.contains(f_hz) {
            let (lo, hi) = self.domain();
            return Err(AbsorptionError::OutOfDomain { f_hz, lo_hz: lo, hi_hz: hi });
        }
        Ok(self.kappa_unchecked(f_hz))
    }

    /// Model evaluation without the domain check (solver-internal hot path;
    /// layout constraints keep frequencies in-domain).
    pub fn kappa_unchecked(&self, f_hz: f64) -> f64 {
        (self.sigma1 + self.sigma2 * f_hz).exp() + self.sigma3
    }

    /// Bandwidth of the contiguous band adjoining the reference edge where
    /// the fitted coefficient exceeds `threshold` (1/m). Zero when even the
    /// reference edge is at or below the threshold.
    pub fn cutoff_bandwidth(&self, threshold: f64) -> Result<f64, AbsorptionError> {
        let (lo, hi) = self.domain();
        let far = if self.kind == RegionKind::Pacsr { lo } else { hi };
        let min_kappa = self.kappa_unchecked(far);
        if threshold <= min_kappa {
            return Err(AbsorptionError::RegionUnusable { threshold, min_kappa });
        }
        if self.kappa_unchecked(self.f_ref_hz) <= threshold {
            return Ok(0.0);
        }
        // invert exp(s1 + s2 f) + s3 = threshold
        let excess = threshold - self.sigma3;
        let f_star = if excess > 0.0 {
            (excess.ln() - self.sigma1) / self.sigma2
        } else {
            // model never comes down to the threshold; whole region exceeds it,
            // but that case was caught by the min_kappa check above
            far
        };
        let width = (self.f_ref_hz - f_star) * self.eta();
        Ok(width.clamp(0.0, self.b_tot_hz))
    }
}

/// Ordered fitted regions plus their grouping into transmission windows.
/// Each window is one PACSR followed by one NACSR, except at the spectrum
/// boundaries where a lone region forms its own window.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumLayout {
    pub regions: Vec<RegionModel>,
    pub windows: Vec<Vec<usize>>,
}

impl SpectrumLayout {
    pub fn total_bandwidth_hz(&self) -> f64 {
        self.regions.iter().map(|r| r.b_tot_hz).sum()
    }
}

/// Default extremum prominence for segmentation (1/m).
pub const DEFAULT_PEAK_PROMINENCE: f64 = 0.05;

/// Splits the sampled spectrum into alternating slope regions. Boundaries sit
/// at interior extrema of kappa that clear the `peak_prominence` filter; a
/// profile with no detectable extremum becomes a single region classified by
/// comparing the endpoint values.
pub fn segment_regions(
    samples: &AbsorptionSamples,
    peak_prominence: f64,
) -> Result<Vec<RegionBounds>, AbsorptionError> {
    if samples.len() < 3 {
        return Err(AbsorptionError::InsufficientData(format!(
            "segmentation needs at least 3 samples, got {}",
            samples.len()
        )));
    }
    if !(peak_prominence > 0.0) {
        return Err(AbsorptionError::InsufficientData(
            "peak_prominence must be positive".into(),
        ));
    }
    let pts = samples.points();

    // Zigzag scan: commit an extremum once kappa has retreated from the
    // running candidate by at least the prominence.
    #[derive(PartialEq)]
    enum Dir {
        Unknown,
        Up,
        Down,
    }
    let mut dir = Dir::Unknown;
    let mut cand = 0usize;
    let mut run_min = 0usize;
    let mut run_max = 0usize;
    let mut boundaries: Vec<usize> = Vec::new();
    for j in 1..pts.len() {
        let k = pts[j].1;
        match dir {
            Dir::Unknown => {
                if k < pts[run_min].1 {
                    run_min = j;
                }
                if k > pts[run_max].1 {
                    run_max = j;
                }
                if pts[run_max].1 - pts[run_min].1 >= peak_prominence {
                    if run_max > run_min {
                        dir = Dir::Up;
                        cand = run_max;
                    } else {
                        dir = Dir::Down;
                        cand = run_min;
                    }
                }
            }
            Dir::Up => {
                if k > pts[cand].1 {
                    cand = j;
                } else if pts[cand].1 - k >= peak_prominence {
                    boundaries.push(cand);
                    dir = Dir::Down;
                    cand = j;
                }
            }
            Dir::Down => {
                if k < pts[cand].1 {
                    cand = j;
                } else if k - pts[cand].1 >= peak_prominence {
                    boundaries.push(cand);
                    dir = Dir::Up;
                    cand = j;
                }
            }
        }
    }

    let mut cuts = vec![0usize];
    cuts.extend(boundaries.iter().copied().filter(|&b| b != 0 && b + 1 != pts.len()));
    cuts.push(pts.len() - 1);
    cuts.dedup();

    let mut regions = Vec::new();
    for w in cuts.windows(2) {
        let (i0, i1) = (w[0], w[1]);
        let kind = if pts[i1].1 >= pts[i0].1 {
            RegionKind::Pacsr
        } else {
            RegionKind::Nacsr
        };
        regions.push(RegionBounds {
            lo_hz: pts[i0].0,
            hi_hz: pts[i1].0,
            kind,
        });
    }
    debug_assert!(segmentation_covers_range(samples, &regions));
    Ok(regions)
}

/// Segmentation completeness: regions tile the sampled range without overlap.
fn segmentation_covers_range(samples: &AbsorptionSamples, regions: &[RegionBounds]) -> bool {
    let (lo, hi) = samples.freq_range();
    if regions.is_empty() {
        return false;
    }
    if regions[0].lo_hz != lo || regions[regions.len() - 1].hi_hz != hi {
        return false;
    }
    regions.windows(2).all(|w| w[0].hi_hz == w[1].lo_hz)
}

/// Fits the per-region exponential model by nonlinear least squares.
///
/// Warm start: `sigma3` from the region's minimum kappa, then a log-linear
/// regression of `ln(kappa - sigma3)` on frequency; refinement by damped
/// Gauss-Newton on all three parameters.
pub fn fit_region(
    samples: &AbsorptionSamples,
    bounds: (f64, f64),
    kind: RegionKind,
) -> Result<RegionModel, AbsorptionError> {
    let pts = samples.slice_within(bounds.0, bounds.1);
    if pts.len() < 3 {
        return Err(AbsorptionError::InsufficientData(format!(
            "region [{:.4e}, {:.4e}] has {} samples, need 3",
            bounds.0,
            bounds.1,
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let f_mid = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let k_min = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let k_max = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if k_max - k_min <= 0.0 {
        // constant data carries no exponential trend
        return Err(AbsorptionError::FitDiverged { best_rmse: 0.0 });
    }
    let spread = (k_max - k_min).max(1e-30);

    // sigma3 warm start slightly below the minimum so every log argument is positive
    let mut sigma3 = k_min - 1e-3 * spread;
    let (mut sigma1, mut sigma2) = log_linear_start(&pts, sigma3, f_mid);

    // damped Gauss-Newton on r_i = exp(s1 + s2 f_i) + s3 - k_i
    let cost = |s1: f64, s2: f64, s3: f64| -> f64 {
        pts.iter()
            .map(|&(f, k)| {
                let arg = (s1 + s2 * f).min(300.0);
                let r = arg.exp() + s3 - k;
                r * r
            })
            .sum::<f64>()
    };
    let mut lambda = 1e-6;
    let mut c = cost(sigma1, sigma2, sigma3);
    let f_scale = (bounds.1 - bounds.0).max(1.0);
    for _ in 0..200 {
        // normal equations with the sigma2 column scaled by f_scale
        let mut jtj = [[0.0f64; 3]; 3];
        let mut jtr = [0.0f64; 3];
        for &(f, k) in &pts {
            let arg = (sigma1 + sigma2 * f).min(300.0);
            let e = arg.exp();
            let r = e + sigma3 - k;
            let j = [e, e * f / f_scale, 1.0];
            for a in 0..3 {
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
                jtr[a] += j[a] * r;
            }
        }
        let mut step = [0.0f64; 3];
        let mut solved = false;
        for _ in 0..40 {
            let mut m = jtj;
            for (a, row) in m.iter_mut().enumerate() {
                row[a] += lambda * jtj[a][a].max(1e-30);
            }
            if let Some(s) = solve3(&m, &jtr) {
                let (t1, t2, t3) = (sigma1 - s[0], sigma2 - s[1] / f_scale, sigma3 - s[2]);
                let ct = cost(t1, t2, t3);
                if ct.is_finite() && ct <= c {
                    step = [t1, t2, t3];
                    c = ct;
                    lambda = (lambda * 0.3).max(1e-12);
                    solved = true;
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
        if !solved {
            break;
        }
        let moved = (step[0] - sigma1).abs() / sigma1.abs().max(1.0)
            + (step[1] - sigma2).abs() / sigma2.abs().max(1e-30)
            + (step[2] - sigma3).abs() / sigma3.abs().max(1e-30);
        sigma1 = step[0];
        sigma2 = step[1];
        sigma3 = step[2];
        if moved < 1e-14 {
            break;
        }
    }

    let rmse = (c / n).sqrt();
    if !c.is_finite() || rmse > 10.0 * spread {
        return Err(AbsorptionError::FitDiverged { best_rmse: rmse });
    }
    let sign_ok = match kind {
        RegionKind::Pacsr => sigma2 > 0.0,
        RegionKind::Nacsr => sigma2 < 0.0,
    };
    if !sign_ok {
        return Err(AbsorptionError::SignConstraint { kind, sigma2 });
    }
    let f_ref_hz = match kind {
        RegionKind::Pacsr => bounds.1,
        RegionKind::Nacsr => bounds.0,
    };
    Ok(RegionModel {
        kind,
        f_ref_hz,
        b_tot_hz: bounds.1 - bounds.0,
        sigma1,
        sigma2,
        sigma3,
        fit_rmse: rmse,
    })
}

/// Centered regression of `ln(kappa - sigma3)` on frequency.
fn log_linear_start(pts: &[(f64, f64)], sigma3: f64, f_mid: f64) -> (f64, f64) {
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut n = 0.0;
    for &(f, k) in pts {
        let y = (k - sigma3).max(1e-300).ln();
        let x = f - f_mid;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        n += 1.0;
    }
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return (sy / n, 0.0);
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    (intercept - slope * f_mid, slope)
}

fn solve3(m: &[[f64; 3]; 3], b: &[f64; 3]) -> Option<[f64; 3]> {
    let mut a = *m;
    let mut x = *b;
    for col in 0..3 {
        let mut piv = col;
        for r in col + 1..3 {
            if a[r][col].abs() > a[piv][col].abs() {
                piv = r;
            }
        }
        if a[piv][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, piv);
        x.swap(col, piv);
        let d = a[col][col];
        for r in 0..3 {
            if r != col {
                let fac = a[r][col] / d;
                for cc in col..3 {
                    a[r][cc] -= fac * a[col][cc];
                }
                x[r] -= fac * x[col];
            }
        }
    }
    Some([x[0] / a[0][0], x[1] / a[1][1], x[2] / a[2][2]])
}

/// Segments and fits the full sampled range, grouping regions into windows.
pub fn fit_layout(
    samples: &AbsorptionSamples,
    peak_prominence: f64,
) -> Result<SpectrumLayout, AbsorptionError> {
    let bounds = segment_regions(samples, peak_prominence)?;
    let mut regions = Vec::with_capacity(bounds.len());
    for b in &bounds {
        regions.push(fit_region(samples, (b.lo_hz, b.hi_hz), b.kind)?);
    }
    Ok(SpectrumLayout {
        windows: group_windows(&regions),
        regions,
    })
}

/// Pairs each PACSR with the NACSR that follows it; unpaired regions at the
/// spectrum boundaries form single-region windows.
pub fn group_windows(regions: &[RegionModel]) -> Vec<Vec<usize>> {
    let mut windows = Vec::new();
    let mut i = 0;
    while i < regions.len() {
        if regions[i].kind == RegionKind::Pacsr
            && i + 1 < regions.len()
            && regions[i + 1].kind == RegionKind::Nacsr
        {
            windows.push(vec![i, i + 1]);
            i += 2;
        } else {
            windows.push(vec![i]);
            i += 1;
        }
    }
    windows
}

/// One absorption peak of the synthetic profile generator.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SyntheticPeak {
    pub center_hz: f64,
    pub amplitude: f64,
    pub half_width_hz: f64,
}

/// Synthetic absorption profile: Lorentzian-style peaks on a flat floor.
/// Stands in for externally computed absorption data so experiments are
/// reproducible without external datasets; outputs are labeled synthetic.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticProfile {
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    pub floor: f64,
    pub peaks: Vec<SyntheticPeak>,
}

impl SyntheticProfile {
    /// Double-window profile spanning 0.325-0.448 THz with two interior
    /// absorption peaks, segmenting into PACSR/NACSR/PACSR/NACSR.
    pub fn two_window() -> Self {
        Self {
            f_lo_hz: 0.325e12,
            f_hi_hz: 0.448e12,
            floor: 5e-3,
            peaks: vec![
                SyntheticPeak {
                    center_hz: 0.366e12,
                    amplitude: 0.55,
                    half_width_hz: 7.0e9,
                },
                SyntheticPeak {
                    center_hz: 0.415e12,
                    amplitude: 0.75,
                    half_width_hz: 8.0e9,
                },
            ],
        }
    }

    pub fn kappa(&self, f_hz: f64) -> f64 {
        let mut k = self.floor;
        for p in &self.peaks {
            let x = (f_hz - p.center_hz) / p.half_width_hz;
            k += p.amplitude / (1.0 + x * x);
        }
        k
    }

    /// Samples the profile on a uniform grid; `noise_rel` adds seeded
    /// multiplicative noise (0 keeps it deterministic and exact).
    pub fn sample(&self, n_points: usize, noise_rel: f64, seed: u64) -> AbsorptionSamples {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let n = n_points.max(2);
        let pts = (0..n)
            .map(|i| {
                let f = self.f_lo_hz
                    + (self.f_hi_hz - self.f_lo_hz) * (i as f64) / ((n - 1) as f64);
                let mut k = self.kappa(f);
                if noise_rel > 0.0 {
                    k *= 1.0 + noise_rel * (rng.gen::<f64>() * 2.0 - 1.0);
                    k = k.max(0.0);
                }
                (f, k)
            })
            .collect();
        AbsorptionSamples::from_points(pts).expect("synthetic grid is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn exact_samples(model: &RegionModel, n: usize) -> AbsorptionSamples {
        let (lo, hi) = model.domain();
        let pts = (0..n)
            .map(|i| {
                let f = lo + (hi - lo) * (i as f64) / ((n - 1) as f64);
                (f, model.kappa_unchecked(f))
            })
            .collect();
        AbsorptionSamples::from_points(pts).unwrap()
    }

    fn pacsr_model(sigma1: f64, sigma2: f64, sigma3: f64) -> RegionModel {
        RegionModel {
            kind: RegionKind::Pacsr,
            f_ref_hz: 0.36e12,
            b_tot_hz: 30e9,
            sigma1,
            sigma2,
            sigma3,
            fit_rmse: 0.0,
        }
    }

    #[test]
    fn load_two_rows_then_segmentation_fails() {
        let csv = "frequency_hz,kappa_per_m\n3.25e11,0.05\n3.30e11,0.02\n";
        let s = AbsorptionSamples::from_csv(csv.as_bytes()).unwrap();
        assert_eq!(s.len(), 2);
        assert!(matches!(
            segment_regions(&s, 0.01),
            Err(AbsorptionError::InsufficientData(_))
        ));
    }

    #[test]
    fn load_sorts_unsorted_rows() {
        let csv = "frequency_hz,kappa_per_m\n3.30e11,0.02\n3.25e11,0.05\n3.28e11,0.03\n";
        let s = AbsorptionSamples::from_csv(csv.as_bytes()).unwrap();
        let f: Vec<f64> = s.points().iter().map(|p| p.0).collect();
        assert_eq!(f, vec![3.25e11, 3.28e11, 3.30e11]);
    }

    #[test]
    fn load_rejects_negative_kappa() {
        let csv = "frequency_hz,kappa_per_m\n3.25e11,0.05\n3.30e11,-0.1\n";
        let err = AbsorptionSamples::from_csv(csv.as_bytes()).unwrap_err();
        assert!(matches!(err, AbsorptionError::NegativeKappa { line: 3, .. }));
    }

    #[test]
    fn load_reports_malformed_line() {
        let csv = "frequency_hz,kappa_per_m\n3.25e11,0.05\nnot_a_number,0.1\n";
        let err = AbsorptionSamples::from_csv(csv.as_bytes()).unwrap_err();
        assert!(matches!(err, AbsorptionError::Parse { line: 3, .. }));
    }

    #[test]
    fn load_collapses_duplicate_frequencies() {
        let s = AbsorptionSamples::from_points(vec![(1e11, 0.2), (1e11, 0.4), (2e11, 0.1)]).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s.points()[0].1 - 0.3).abs() < 1e-15);
    }

    #[test]
    fn segment_valley_gives_nacsr_then_pacsr() {
        let pts: Vec<(f64, f64)> = (0..101)
            .map(|i| {
                let f = 1e11 + 1e9 * i as f64;
                let x = (i as f64 - 50.0) / 50.0;
                (f, 0.1 + 0.5 * x * x)
            })
            .collect();
        let s = AbsorptionSamples::from_points(pts).unwrap();
        let regs = segment_regions(&s, 0.05).unwrap();
        assert_eq!(regs.len(), 2);
        assert_eq!(regs[0].kind, RegionKind::Nacsr);
        assert_eq!(regs[1].kind, RegionKind::Pacsr);
        assert!((regs[0].hi_hz - 1.5e11).abs() <= 1e9);
        assert_eq!(regs[0].lo_hz, 1e11);
        assert_eq!(regs[1].hi_hz, 2e11);
    }

    #[test]
    fn segment_two_window_profile_matches_expected_structure() {
        let s = SyntheticProfile::two_window().sample(601, 0.0, 0);
        let regs = segment_regions(&s, DEFAULT_PEAK_PROMINENCE).unwrap();
        assert_eq!(regs.len(), 4, "expected 4 regions, got {regs:?}");
        let kinds: Vec<RegionKind> = regs.iter().map(|r| r.kind).collect();
        assert_eq!(
            kinds,
            vec![
                RegionKind::Pacsr,
                RegionKind::Nacsr,
                RegionKind::Pacsr,
                RegionKind::Nacsr
            ]
        );
        let layout = fit_layout(&s, DEFAULT_PEAK_PROMINENCE).unwrap();
        assert_eq!(layout.windows, vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn segment_monotone_profile_single_pacsr() {
        // oracle: direct monotonicity scan classifies the whole range as rising
        let pts: Vec<(f64, f64)> = (0..200)
            .map(|i| (1e11 + 1e9 * i as f64, 0.01 + 1e-3 * i as f64))
            .collect();
        let rising = pts.windows(2).all(|w| w[1].1 >= w[0].1);
        assert!(rising);
        let s = AbsorptionSamples::from_points(pts).unwrap();
        let regs = segment_regions(&s, 0.05).unwrap();
        assert_eq!(regs.len(), 1);
        assert_eq!(regs[0].kind, RegionKind::Pacsr);
    }

    #[test]
    fn segmentation_tiles_input_range() {
        let s = SyntheticProfile::two_window().sample(400, 0.05, 7);
        let regs = segment_regions(&s, DEFAULT_PEAK_PROMINENCE).unwrap();
        let (lo, hi) = s.freq_range();
        assert_eq!(regs[0].lo_hz, lo);
        assert_eq!(regs[regs.len() - 1].hi_hz, hi);
        for w in regs.windows(2) {
            assert_eq!(w[0].hi_hz, w[1].lo_hz);
        }
    }

    #[test]
    fn fit_recovers_exact_parameters() {
        let truth = pacsr_model(-30.0, 1.2e-10, 0.01);
        let s = exact_samples(&truth, 60);
        let fit = fit_region(&s, truth.domain(), RegionKind::Pacsr).unwrap();
        assert!((fit.sigma1 - truth.sigma1).abs() / truth.sigma1.abs() < 1e-6);
        assert!((fit.sigma2 - truth.sigma2).abs() / truth.sigma2.abs() < 1e-6);
        assert!((fit.sigma3 - truth.sigma3).abs() / truth.sigma3.abs() < 1e-6);
        assert!(fit.fit_rmse <= 1e-9);
    }

    #[test]
    fn fit_recovery_sweep_respecting_sign_conventions() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for trial in 0..100 {
            let kind = if trial % 2 == 0 { RegionKind::Pacsr } else { RegionKind::Nacsr };
            let b_tot = 15e9 + rng.gen::<f64>() * 30e9;
            let f_ref = 0.3e12 + rng.gen::<f64>() * 0.1e12;
            let span = rng.gen::<f64>() * 4.0 + 2.0; // ln(kappa ratio) across region
            let sigma2 = kind.eta() * span / b_tot;
            let peak = 0.2 + rng.gen::<f64>() * 2.0;
            let sigma1 = peak.ln() - sigma2 * f_ref;
            let sigma3 = 1e-3 + rng.gen::<f64>() * 0.05;
            let truth = RegionModel {
                kind,
                f_ref_hz: f_ref,
                b_tot_hz: b_tot,
                sigma1,
                sigma2,
                sigma3,
                fit_rmse: 0.0,
            };
            let s = exact_samples(&truth, 50);
            let fit = fit_region(&s, truth.domain(), kind)
                .unwrap_or_else(|e| panic!("trial {trial}: {e}"));
            for (got, want) in [
                (fit.sigma1, truth.sigma1),
                (fit.sigma2, truth.sigma2),
                (fit.sigma3, truth.sigma3),
            ] {
                assert!(
                    (got - want).abs() / want.abs() < 1e-6,
                    "trial {trial}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn fit_constant_samples_errors() {
        let pts: Vec<(f64, f64)> = (0..30).map(|i| (1e11 + 1e9 * i as f64, 0.3)).collect();
        let s = AbsorptionSamples::from_points(pts).unwrap();
        let res = fit_region(&s, (1e11, 1.29e11), RegionKind::Pacsr);
        assert!(matches!(
            res,
            Err(AbsorptionError::SignConstraint { .. }) | Err(AbsorptionError::FitDiverged { .. })
        ));
    }

    #[test]
    fn fit_two_window_first_region_is_positive_slope() {
        let s = SyntheticProfile::two_window().sample(601, 0.0, 0);
        let layout = fit_layout(&s, DEFAULT_PEAK_PROMINENCE).unwrap();
        assert!(layout.regions[0].sigma2 > 0.0);
    }

    #[test]
    fn kappa_closed_form() {
        let m = RegionModel {
            kind: RegionKind::Pacsr,
            f_ref_hz: 1.0,
            b_tot_hz: 1.0,
            sigma1: 0.0,
            sigma2: 0.0,
            sigma3: 1.0,
            fit_rmse: 0.0,
        };
        assert!((m.kappa_at(0.5).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn kappa_fit_round_trip_at_sample_points() {
        let truth = pacsr_model(-28.0, 1.0e-10, 0.02);
        let s = exact_samples(&truth, 40);
        let fit = fit_region(&s, truth.domain(), RegionKind::Pacsr).unwrap();
        for &(f, k) in s.points() {
            let got = fit.kappa_at(f).unwrap();
            assert!((got - k).abs() / k < 1e-6);
        }
    }

    #[test]
    fn kappa_outside_domain_errors() {
        let m = pacsr_model(-43.893, 1.2e-10, 0.01);
        let (lo, _) = m.domain();
        assert!(m.kappa_at(lo - 1e9).is_err());
    }

    #[test]
    fn pacsr_maximum_at_reference_edge() {
        let m = pacsr_model(-43.893, 1.2e-10, 0.01);
        let (lo, hi) = m.domain();
        let k_ref = m.kappa_at(m.f_ref_hz).unwrap();
        for i in 0..=100 {
            let f = lo + (hi - lo) * i as f64 / 100.0;
            assert!(m.kappa_at(f).unwrap() <= k_ref + 1e-18);
        }
    }

    #[test]
    fn monotone_over_region_both_kinds() {
        let s = SyntheticProfile::two_window().sample(601, 0.0, 0);
        let layout = fit_layout(&s, DEFAULT_PEAK_PROMINENCE).unwrap();
        for m in &layout.regions {
            let (lo, hi) = m.domain();
            let mut prev = m.kappa_at(lo).unwrap();
            for i in 1..=100 {
                let f = lo + (hi - lo) * i as f64 / 100.0;
                let k = m.kappa_at(f).unwrap();
                match m.kind {
                    RegionKind::Pacsr => assert!(k >= prev),
                    RegionKind::Nacsr => assert!(k <= prev),
                }
                prev = k;
            }
        }
    }

    #[test]
    fn cutoff_zero_when_edge_below_threshold() {
        // kappa at f_ref = exp(sigma1 + sigma2 f_ref) + sigma3 = 0.25
        let f_ref = 0.36e12;
        let sigma2 = 1.0e-10;
        let sigma1 = (0.25f64 - 0.01).ln() - sigma2 * f_ref;
        let m = pacsr_model(sigma1, sigma2, 0.01);
        assert_eq!(m.cutoff_bandwidth(0.3).unwrap(), 0.0);
    }

    #[test]
    fn cutoff_matches_analytic_inversion_and_bisection() {
        let m = pacsr_model(-43.893, 1.2e-10, 0.01);
        let thr = 0.3;
        let got = m.cutoff_bandwidth(thr).unwrap();
        let expect = m.f_ref_hz - ((thr - m.sigma3).ln() - m.sigma1) / m.sigma2;
        assert!((got - expect).abs() / expect.abs() < 1e-12);
        // bisection oracle on kappa(f) = thr
        let (mut lo, mut hi) = m.domain();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if m.kappa_unchecked(mid) > thr {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let oracle = m.f_ref_hz - 0.5 * (lo + hi);
        assert!((got - oracle).abs() < 1.0, "{got} vs {oracle}");
    }

    #[test]
    fn cutoff_boundary_threshold_gives_zero() {
        let m = pacsr_model(-43.893, 1.2e-10, 0.01);
        let k_ref = m.kappa_unchecked(m.f_ref_hz);
        assert_eq!(m.cutoff_bandwidth(k_ref).unwrap(), 0.0);
    }

    #[test]
    fn cutoff_below_region_minimum_errors() {
        let m = pacsr_model(-43.893, 1.2e-10, 0.01);
        assert!(matches!(
            m.cutoff_bandwidth(0.005),
            Err(AbsorptionError::RegionUnusable { .. })
        ));
    }

    #[test]
    fn cutoff_weakly_decreases_with_threshold() {
        let m = pacsr_model(-43.893, 1.2e-10, 0.01);
        let mut prev = f64::INFINITY;
        for i in 1..=40 {
            let thr = 0.05 + 0.02 * i as f64;
            let b = match m.cutoff_bandwidth(thr) {
                Ok(b) => b,
                Err(_) => continue,
            };
            assert!(b <= prev + 1e-9);
            prev = b;
        }
    }

    #[test]
    fn synthetic_sampling_is_deterministic() {
        let p = SyntheticProfile::two_window();
        assert_eq!(p.sample(300, 0.02, 9).points(), p.sample(300, 0.02, 9).points());
    }
}
