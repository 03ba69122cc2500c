//! Log-barrier inner solver for the convexified subproblem.
//!
//! Works on the flat `[assign | power | z]` vector. Linear equalities
//! (assignment row sums, guard coupling, pinned variables) are kept exact
//! through Newton-KKT steps; inequalities enter a log barrier whose parameter
//! shrinks by x10 per stage. Substitution variables span many decades inside
//! their boxes, so the Newton system is equilibrated with the current iterate
//! (multiplicative steps for z) rather than any fixed scaling. A phase-1
//! variant minimizes the worst rate-threshold violation and doubles as the
//! infeasibility certificate.

use nalgebra::{DMatrix, DVector};

use crate::problem::{PrimalPoint, ProblemInstance, VarMap};

/// Slack below which a constraint counts as violated, in scaled units.
pub(crate) const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub(crate) struct InnerOptions {
    pub kkt_tol: f64,
    pub max_newton_steps: usize,
    pub mu_initial: f64,
    pub mu_final: f64,
}

impl InnerOptions {
    pub fn from_tol(kkt_tol: f64, max_newton_steps: usize, warm: bool) -> Self {
        Self {
            kkt_tol,
            max_newton_steps,
            mu_initial: if warm { 1e-3 } else { 1.0 },
            mu_final: (kkt_tol * 1e-2).min(1e-8),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct InnerOutcome {
    pub point: PrimalPoint,
    pub objective: f64,
    pub newton_steps: usize,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone)]
pub(crate) enum InnerFailure {
    /// Phase-1 finished with a positive violation floor.
    Infeasible { violation: f64 },
    /// No strictly feasible start or the iteration budget ran out.
    Stalled { best: Box<InnerOutcome> },
}

/// One inequality of the subproblem, over global variable indices.
#[derive(Debug, Clone)]
enum Ineq {
    BoxLo { var: usize, lo: f64 },
    BoxHi { var: usize, hi: f64 },
    /// `sum(vars) <= limit`, slack scaled by `scale`.
    LinSum { vars: Vec<usize>, limit: f64, scale: f64 },
    RateThr { user: usize },
    Budget { region: usize },
}

pub(crate) struct InnerModel<'a> {
    inst: &'a ProblemInstance,
    anchor: Vec<f64>,
    pins: Vec<Option<f64>>,
    free: Vec<usize>,
    free_of: Vec<Option<usize>>,
    /// Equality rows as sparse coefficient lists over free indices.
    eq_rows: Vec<(Vec<(usize, f64)>, f64)>,
    eq_a: DMatrix<f64>,
    eq_b: DVector<f64>,
    ineqs: Vec<Ineq>,
    /// Scratch full-length variable vector.
    v: Vec<f64>,
}

impl<'a> InnerModel<'a> {
    pub fn new(inst: &'a ProblemInstance, anchor: &[f64], extra_pins: &[(usize, f64)]) -> Self {
        let map = *inst.map();
        let n = map.n_total();
        let mut pins: Vec<Option<f64>> = vec![None; n];
        if let Some(fixed) = &inst.b_delta_fixed_hz {
            for (r, b) in fixed.iter().enumerate() {
                pins[map.z_global(map.z_width(r, 0))] =
                    Some(inst.subst[r].width.z_from_bandwidth(*b));
            }
        }
        for &(var, val) in extra_pins {
            pins[var] = Some(val);
        }
        // a single-slot instance leaves the row-sum equality no interior;
        // the assignment is forced
        if map.n_slots_total() == 1 && map.n_users == 1 {
            pins[map.assign(0, 0, 1)] = Some(1.0);
        }
        // guard variables whose whole assignment column is pinned are
        // determined; pin them too
        let b_g = inst.scenario.params.b_g_hz;
        for r in 0..map.n_regions {
            for s in 1..=map.slots {
                let zg = map.z_global(map.z_guard(r, s));
                if pins[zg].is_some() {
                    continue;
                }
                let col: Vec<usize> = (0..map.n_users).map(|i| map.assign(i, r, s)).collect();
                if col.iter().all(|&c| pins[c].is_some()) {
                    let t: f64 = col.iter().map(|&c| pins[c].unwrap()).sum();
                    let su = &inst.subst[r].guard;
                    let gain = (b_g / su.log_scale_hz).exp() - 1.0;
                    pins[zg] = Some(su.z_ref() * (1.0 + t * gain));
                }
            }
        }

        let free: Vec<usize> = (0..n).filter(|&j| pins[j].is_none()).collect();
        let mut free_of = vec![None; n];
        for (k, &j) in free.iter().enumerate() {
            free_of[j] = Some(k);
        }

        // equality rows: assignment row sums and guard coupling
        let mut eq_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        for i in 0..map.n_users {
            let mut coeffs = Vec::new();
            let mut rhs = 1.0;
            for m in 0..map.n_slots_total() {
                let (r, s) = map.slot_to_region(m);
                let idx = map.assign(i, r, s);
                match pins[idx] {
                    Some(v) => rhs -= v,
                    None => coeffs.push((idx, 1.0)),
                }
            }
            if !coeffs.is_empty() {
                eq_rows.push((coeffs, rhs));
            } else {
                debug_assert!(rhs.abs() < 1e-9, "pinned row must sum to one");
            }
        }
        for r in 0..map.n_regions {
            let su = &inst.subst[r].guard;
            let gref = su.z_ref();
            let gain = (b_g / su.log_scale_hz).exp() - 1.0;
            for s in 1..=map.slots {
                let zg = map.z_global(map.z_guard(r, s));
                if pins[zg].is_some() {
                    continue;
                }
                let mut coeffs = vec![(zg, 1.0)];
                let mut rhs = gref;
                for i in 0..map.n_users {
                    let xi = map.assign(i, r, s);
                    match pins[xi] {
                        Some(v) => rhs += gref * gain * v,
                        None => coeffs.push((xi, -gref * gain)),
                    }
                }
                eq_rows.push((coeffs, rhs));
            }
        }
        // with a single region the row sums force every column sum to one,
        // leaving the <= form no interior; encode all but the last column as
        // equalities instead (the last is implied)
        let colsum_forced = map.n_regions == 1 && map.n_users > 1;
        if colsum_forced {
            for m in 0..map.n_slots_total() - 1 {
                let (r, s) = map.slot_to_region(m);
                let mut coeffs = Vec::new();
                let mut rhs = 1.0;
                for i in 0..map.n_users {
                    let xi = map.assign(i, r, s);
                    match pins[xi] {
                        Some(v) => rhs -= v,
                        None => coeffs.push((xi, 1.0)),
                    }
                }
                if !coeffs.is_empty() {
                    eq_rows.push((coeffs, rhs));
                }
            }
        }
        let mut eq_a = DMatrix::zeros(eq_rows.len(), free.len());
        let mut eq_b = DVector::zeros(eq_rows.len());
        for (ri, (coeffs, rhs)) in eq_rows.iter().enumerate() {
            for &(var, c) in coeffs {
                eq_a[(ri, free_of[var].expect("equality rows touch free vars only"))] = c;
            }
            eq_b[ri] = *rhs;
        }

        // inequalities over free variables
        let zero_assign = vec![0.0; map.n_assign()];
        let zb = inst.z_bounds(&zero_assign);
        let mut ineqs = Vec::new();
        for idx in 0..map.n_assign() {
            if pins[idx].is_none() {
                ineqs.push(Ineq::BoxLo { var: idx, lo: 0.0 });
                ineqs.push(Ineq::BoxHi { var: idx, hi: 1.0 });
            }
        }
        let p_max = inst.scenario.params.p_max_w;
        for i in 0..map.n_users {
            let idx = map.power(i);
            if pins[idx].is_none() {
                ineqs.push(Ineq::BoxLo { var: idx, lo: 0.0 });
                ineqs.push(Ineq::BoxHi { var: idx, hi: p_max });
            }
        }
        for r in 0..map.n_regions {
            for j in 0..=map.slots {
                let zi = map.z_width(r, j);
                let idx = map.z_global(zi);
                if pins[idx].is_none() {
                    ineqs.push(Ineq::BoxLo { var: idx, lo: zb[zi].min });
                    // the edge slot's upper bound is strictly implied by the
                    // budget constraint plus the width floors; its box would
                    // span dozens of decades, so it stays out of the barrier
                    if j > 0 {
                        ineqs.push(Ineq::BoxHi { var: idx, hi: zb[zi].max });
                    }
                }
            }
        }
        {
            let vars: Vec<usize> = (0..map.n_users)
                .map(|i| map.power(i))
                .filter(|&idx| pins[idx].is_none())
                .collect();
            let pinned_sum: f64 = (0..map.n_users)
                .map(|i| map.power(i))
                .filter_map(|idx| pins[idx])
                .sum();
            if !vars.is_empty() {
                ineqs.push(Ineq::LinSum {
                    vars,
                    limit: inst.scenario.params.p_tot_w - pinned_sum,
                    scale: inst.scenario.params.p_tot_w,
                });
            }
        }
        if !colsum_forced {
            for m in 0..map.n_slots_total() {
                let (r, s) = map.slot_to_region(m);
                let vars: Vec<usize> = (0..map.n_users)
                    .map(|i| map.assign(i, r, s))
                    .filter(|&idx| pins[idx].is_none())
                    .collect();
                if vars.is_empty() {
                    continue;
                }
                let pinned_sum: f64 = (0..map.n_users)
                    .map(|i| map.assign(i, r, s))
                    .filter_map(|idx| pins[idx])
                    .sum();
                ineqs.push(Ineq::LinSum { vars, limit: 1.0 - pinned_sum, scale: 1.0 });
            }
        }
        for i in 0..map.n_users {
            ineqs.push(Ineq::RateThr { user: i });
        }
        for r in 0..map.n_regions {
            // a region whose z variables are all pinned has a constant
            // budget residual: validate once instead of barriering slack 0
            let lo = map.z_global(map.z_width(r, 0));
            let hi = map.z_global(map.z_guard(r, map.slots));
            let all_pinned = (lo..=hi).all(|j| pins[j].is_some());
            if all_pinned {
                let z: Vec<f64> = (map.n_assign() + map.n_power()..n)
                    .map(|j| pins[j].unwrap_or(1.0))
                    .collect();
                let residual = inst.product_constraint(&z, r);
                debug_assert!(
                    residual <= 1e-6 * inst.regions[r].b_tot_hz,
                    "pinned region {r} violates its budget by {residual} Hz"
                );
                if residual <= 1e-6 * inst.regions[r].b_tot_hz {
                    continue;
                }
            }
            ineqs.push(Ineq::Budget { region: r });
        }

        Self {
            inst,
            anchor: anchor.to_vec(),
            pins,
            free,
            free_of,
            eq_rows,
            eq_a,
            eq_b,
            ineqs,
            v: vec![0.0; n],
        }
    }

    fn map(&self) -> VarMap {
        *self.inst.map()
    }

    /// Free coordinates of a primal point.
    pub fn pack(&self, point: &PrimalPoint) -> DVector<f64> {
        let map = self.map();
        let mut w = DVector::zeros(self.free.len());
        for (k, &j) in self.free.iter().enumerate() {
            w[k] = if j < map.n_assign() {
                point.assign[j]
            } else if j < map.n_assign() + map.n_power() {
                point.power[j - map.n_assign()]
            } else {
                point.z[j - map.n_assign() - map.n_power()]
            };
        }
        w
    }

    /// Full primal point from free coordinates, pins filled in.
    pub fn unpack(&mut self, w: &DVector<f64>) -> PrimalPoint {
        let map = self.map();
        for j in 0..self.v.len() {
            self.v[j] = match self.pins[j] {
                Some(val) => val,
                None => w[self.free_of[j].unwrap()],
            };
        }
        PrimalPoint {
            assign: self.v[..map.n_assign()].to_vec(),
            power: self.v[map.n_assign()..map.n_assign() + map.n_power()].to_vec(),
            z: self.v[map.n_assign() + map.n_power()..].to_vec(),
        }
    }

    /// Projects free coordinates onto the equality manifold. The rows mix
    /// units, so this is only meant for points already near the manifold.
    pub fn project_equalities(&self, w: &DVector<f64>) -> DVector<f64> {
        if self.eq_a.nrows() == 0 {
            return w.clone();
        }
        let a = &self.eq_a;
        let res = a * w - &self.eq_b;
        let aat = a * a.transpose();
        match aat.lu().solve(&res) {
            Some(y) => w - a.transpose() * y,
            None => w.clone(),
        }
    }

    fn raw_of(&mut self, w: &DVector<f64>) -> (PrimalPoint, Vec<f64>) {
        let point = self.unpack(w);
        let raw = self.v.clone();
        (point, raw)
    }

    /// Scaled slack of one inequality (positive = strictly satisfied).
    fn slack(&self, ineq: &Ineq, point: &PrimalPoint, raw: &[f64]) -> f64 {
        match ineq {
            Ineq::BoxLo { var, lo } => raw[*var] - lo,
            Ineq::BoxHi { var, hi } => hi - raw[*var],
            Ineq::LinSum { vars, limit, scale } => {
                (limit - vars.iter().map(|&j| raw[j]).sum::<f64>()) / scale
            }
            Ineq::RateThr { user } => {
                let rate = self
                    .inst
                    .user_rate_relaxed(*user, &point.assign, &point.power, &point.z);
                (rate - self.inst.r_thr_bps()) / self.inst.rate_scale
            }
            Ineq::Budget { region } => {
                -self.inst.product_constraint(&point.z, *region)
                    / self.inst.regions[*region].b_tot_hz
            }
        }
    }

    /// Box slacks in relative units (fraction of the variable's magnitude)
    /// so that the barrier treats wide z boxes sensibly.
    fn barrier_slacks(&mut self, w: &DVector<f64>) -> Vec<f64> {
        let (point, raw) = self.raw_of(w);
        self.ineqs.iter().map(|iq| self.slack(iq, &point, &raw)).collect()
    }

    pub fn min_slack(&mut self, w: &DVector<f64>) -> f64 {
        let slacks = self.barrier_slacks(w);
        let (point, raw) = self.raw_of(w);
        let mut min = f64::INFINITY;
        for (iq, s) in self.ineqs.iter().zip(&slacks) {
            // normalize box slacks by the variable scale for the verdict
            let norm = match iq {
                Ineq::BoxLo { var, .. } | Ineq::BoxHi { var, .. } => {
                    let denom = raw[*var].abs().max(self.typical(*var));
                    s / denom
                }
                _ => *s,
            };
            min = min.min(norm);
        }
        let _ = point;
        min
    }

    /// A magnitude floor per variable used for slack normalization.
    fn typical(&self, var: usize) -> f64 {
        let map = self.map();
        if var < map.n_assign() {
            1.0
        } else if var < map.n_assign() + map.n_power() {
            self.inst.scenario.params.p_max_w
        } else {
            let zi = var - map.n_assign() - map.n_power();
            // z_ref of the owning region's width constants
            for r in 0..map.n_regions {
                let lo = map.z_width(r, 0);
                let hi = map.z_guard(r, map.slots);
                if zi >= lo && zi <= hi {
                    return self.inst.subst[r].width.z_ref();
                }
            }
            1.0
        }
    }

    pub fn objective(&mut self, w: &DVector<f64>) -> f64 {
        let point = self.unpack(w);
        self.inst
            .objective_psi(&point.assign, &point.power, &point.z, &self.anchor)
            .0
    }

    /// Barrier merit; infinite outside the strict interior.
    fn merit(&mut self, w: &DVector<f64>, mu: f64) -> f64 {
        let obj = self.objective(w);
        let mut barrier = 0.0;
        for s in self.barrier_slacks(w) {
            if s <= 0.0 {
                return f64::INFINITY;
            }
            barrier -= s.ln();
        }
        obj + mu * barrier
    }

    /// Gradient and Hessian over free coordinates of
    /// `weight * objective + mu * barrier`, with the rate-threshold slacks
    /// shifted by `t_shift` (phase-1 uses weight 0 and a positive shift).
    fn grad_hess(
        &mut self,
        w: &DVector<f64>,
        mu: f64,
        weight: f64,
        t_shift: f64,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let map = self.map();
        let nf = self.free.len();
        let (point, raw) = self.raw_of(w);
        let mut g_full = vec![0.0f64; map.n_total()];
        let mut h = DMatrix::<f64>::zeros(nf, nf);

        let bundles = self.inst.rate_bundles(&point.power, &point.z);
        let cols = map.n_slots_total();
        let inv_rs = 1.0 / self.inst.rate_scale;

        struct VarTouch {
            var: usize,
            dp: f64,
            db: f64,
            df: f64,
            d2b: f64,
            d2f: f64,
        }

        for i in 0..map.n_users {
            let rate_i = self
                .inst
                .user_rate_relaxed(i, &point.assign, &point.power, &point.z);
            let s_i = (rate_i - self.inst.r_thr_bps()) * inv_rs + t_shift;
            // objective part: weight * (-x R / rs); barrier part shares the
            // same structure through grad/hess of R_i
            let lin_coeff = -weight * inv_rs - mu / s_i * inv_rs;
            let mut grad_ri = vec![0.0f64; map.n_total()];
            for m in 0..cols {
                let (r, s) = map.slot_to_region(m);
                let x_idx = map.assign(i, r, s);
                let x = point.assign[x_idx];
                let b = &bundles[i * cols + m];
                let chain = self.inst.z_chain(r, s, &point.z);
                let mut touches: Vec<VarTouch> = Vec::with_capacity(chain.len() + 1);
                touches.push(VarTouch { var: map.power(i), dp: 1.0, db: 0.0, df: 0.0, d2b: 0.0, d2f: 0.0 });
                for c in &chain {
                    touches.push(VarTouch {
                        var: map.z_global(c.z_local),
                        dp: 0.0,
                        db: c.db_dz,
                        df: c.df_dz,
                        d2b: c.d2b_dz2,
                        d2f: c.d2f_dz2,
                    });
                }
                let dr: Vec<f64> = touches
                    .iter()
                    .map(|t| b.d_p * t.dp + b.d_b * t.db + b.d_f * t.df)
                    .collect();
                grad_ri[x_idx] += b.value;
                g_full[x_idx] += lin_coeff * b.value;
                for (t, drt) in touches.iter().zip(&dr) {
                    g_full[t.var] += lin_coeff * x * drt;
                    grad_ri[t.var] += x * drt;
                }
                for (a_i, ta) in touches.iter().enumerate() {
                    let ka = match self.free_of[ta.var] {
                        Some(k) => k,
                        None => continue,
                    };
                    for tb in touches.iter().skip(a_i) {
                        let kb = match self.free_of[tb.var] {
                            Some(k) => k,
                            None => continue,
                        };
                        let mut h2 = ta.dp * (b.d_pp * tb.dp + b.d_pb * tb.db + b.d_pf * tb.df)
                            + ta.db * (b.d_pb * tb.dp + b.d_bb * tb.db + b.d_bf * tb.df)
                            + ta.df * (b.d_pf * tb.dp + b.d_bf * tb.db + b.d_ff * tb.df);
                        if ta.var == tb.var {
                            h2 += b.d_b * ta.d2b + b.d_f * ta.d2f;
                        }
                        let val = lin_coeff * x * h2;
                        h[(ka, kb)] += val;
                        if ka != kb {
                            h[(kb, ka)] += val;
                        }
                    }
                    if let Some(kx) = self.free_of[x_idx] {
                        let val = lin_coeff * dr[a_i];
                        h[(ka, kx)] += val;
                        h[(kx, ka)] += val;
                    }
                }
            }
            // rank-one part of the rate barrier
            let c = mu / (s_i * s_i) * inv_rs * inv_rs;
            let touched: Vec<(usize, f64)> = grad_ri
                .iter()
                .enumerate()
                .filter(|(j, v)| v.abs() > 0.0 && self.free_of[*j].is_some())
                .map(|(j, v)| (self.free_of[j].unwrap(), *v))
                .collect();
            for &(ka, va) in &touched {
                for &(kb, vb) in &touched {
                    h[(ka, kb)] += c * va * vb;
                }
            }
        }

        // penalty gradient (linear in x)
        if weight != 0.0 {
            for i in 0..map.n_assign() {
                g_full[i] += weight * self.inst.penalty_weight * (1.0 - 2.0 * self.anchor[i]);
            }
        }

        // remaining barriers
        for iq in &self.ineqs {
            match iq {
                Ineq::BoxLo { var, lo } => {
                    if let Some(k) = self.free_of[*var] {
                        let s = raw[*var] - lo;
                        g_full[*var] += -mu / s;
                        h[(k, k)] += mu / (s * s);
                    }
                }
                Ineq::BoxHi { var, hi } => {
                    if let Some(k) = self.free_of[*var] {
                        let s = hi - raw[*var];
                        g_full[*var] += mu / s;
                        h[(k, k)] += mu / (s * s);
                    }
                }
                Ineq::LinSum { vars, limit, .. } => {
                    let s = limit - vars.iter().map(|&j| raw[j]).sum::<f64>();
                    for &ja in vars {
                        g_full[ja] += mu / s;
                        let ka = self.free_of[ja].unwrap();
                        for &jb in vars {
                            h[(ka, self.free_of[jb].unwrap())] += mu / (s * s);
                        }
                    }
                }
                Ineq::RateThr { .. } => {}
                Ineq::Budget { region } => {
                    let r = *region;
                    let b_tot = self.inst.regions[r].b_tot_hz;
                    let s = -self.inst.product_constraint(&point.z, r) / b_tot;
                    let su = &self.inst.subst[r];
                    let mut touched: Vec<(usize, f64, f64)> = Vec::new();
                    for j in 0..=map.slots {
                        let zi = map.z_width(r, j);
                        let z = point.z[zi];
                        touched.push((
                            map.z_global(zi),
                            su.width.log_scale_hz / z / b_tot,
                            -su.width.log_scale_hz / (z * z) / b_tot,
                        ));
                    }
                    for sl in 1..=map.slots {
                        let zi = map.z_guard(r, sl);
                        let z = point.z[zi];
                        touched.push((
                            map.z_global(zi),
                            su.guard.log_scale_hz / z / b_tot,
                            -su.guard.log_scale_hz / (z * z) / b_tot,
                        ));
                    }
                    for &(var, dg, d2g) in &touched {
                        g_full[var] += mu / s * dg;
                        if let Some(k) = self.free_of[var] {
                            h[(k, k)] += mu / s * d2g;
                        }
                    }
                    for &(va, dga, _) in &touched {
                        let ka = match self.free_of[va] {
                            Some(k) => k,
                            None => continue,
                        };
                        for &(vb, dgb, _) in &touched {
                            if let Some(kb) = self.free_of[vb] {
                                h[(ka, kb)] += mu / (s * s) * dga * dgb;
                            }
                        }
                    }
                }
            }
        }

        let mut g = DVector::zeros(nf);
        for (k, &j) in self.free.iter().enumerate() {
            g[k] = g_full[j];
        }
        (g, h)
    }

    /// Largest step keeping the linear inequalities strictly feasible.
    fn max_linear_step(&mut self, w: &DVector<f64>, dw: &DVector<f64>) -> f64 {
        let (_, raw) = self.raw_of(w);
        let mut vel = vec![0.0f64; raw.len()];
        for (k, &j) in self.free.iter().enumerate() {
            vel[j] = dw[k];
        }
        let mut alpha = f64::INFINITY;
        for iq in &self.ineqs {
            let (s, ds) = match iq {
                Ineq::BoxLo { var, lo } => (raw[*var] - lo, vel[*var]),
                Ineq::BoxHi { var, hi } => (hi - raw[*var], -vel[*var]),
                Ineq::LinSum { vars, limit, .. } => (
                    limit - vars.iter().map(|&j| raw[j]).sum::<f64>(),
                    -vars.iter().map(|&j| vel[j]).sum::<f64>(),
                ),
                _ => continue,
            };
            if ds < 0.0 {
                alpha = alpha.min(s / (-ds));
            }
        }
        alpha
    }

    /// Dynamic equilibration: assignment entries 1, powers by the cap, z by
    /// the current iterate magnitude.
    fn dynamic_scale(&self, w: &DVector<f64>) -> DVector<f64> {
        let map = self.map();
        let mut s = DVector::from_element(self.free.len(), 1.0);
        for (k, &j) in self.free.iter().enumerate() {
            s[k] = if j < map.n_assign() {
                1.0
            } else if j < map.n_assign() + map.n_power() {
                self.inst.scenario.params.p_max_w
            } else {
                w[k].abs().max(1e-300)
            };
        }
        s
    }

    /// Newton-KKT descent on `weight * objective + mu * barrier`.
    #[allow(clippy::too_many_arguments)]
    fn newton_stage(
        &mut self,
        w: &mut DVector<f64>,
        mu: f64,
        weight: f64,
        t_shift: f64,
        budget: &mut usize,
        dec_tol: f64,
    ) -> f64 {
        let nf = self.free.len();
        let ne = self.eq_a.nrows();
        let mut last_dec = f64::INFINITY;
        while *budget > 0 {
            *budget -= 1;
            let (g, h) = self.grad_hess(w, mu, weight, t_shift);
            let sc = self.dynamic_scale(w);
            // scaled system: H~ = S H S, g~ = S g, A~ = A S
            let mut hs = DMatrix::zeros(nf, nf);
            for i in 0..nf {
                for j in 0..nf {
                    hs[(i, j)] = h[(i, j)] * sc[i] * sc[j];
                }
            }
            let gs = DVector::from_fn(nf, |i, _| g[i] * sc[i]);
            let mut a_s = DMatrix::zeros(ne, nf);
            for r in 0..ne {
                for c in 0..nf {
                    a_s[(r, c)] = self.eq_a[(r, c)] * sc[c];
                }
            }
            // equilibrate equality rows
            for r in 0..ne {
                let norm = a_s.row(r).amax().max(1e-300);
                for c in 0..nf {
                    a_s[(r, c)] /= norm;
                }
            }
            let base = hs.diagonal().amax().max(1e-12);
            let mut tau = 0.0f64;
            let mut dws: Option<DVector<f64>> = None;
            for _ in 0..26 {
                let dim = nf + ne;
                let mut kkt = DMatrix::zeros(dim, dim);
                for i in 0..nf {
                    for j in 0..nf {
                        kkt[(i, j)] = hs[(i, j)];
                    }
                    kkt[(i, i)] += tau;
                }
                for r in 0..ne {
                    for c in 0..nf {
                        kkt[(nf + r, c)] = a_s[(r, c)];
                        kkt[(c, nf + r)] = a_s[(r, c)];
                    }
                }
                let mut rhs = DVector::zeros(dim);
                for i in 0..nf {
                    rhs[i] = -gs[i];
                }
                if let Some(sol) = kkt.lu().solve(&rhs) {
                    let cand = sol.rows(0, nf).into_owned();
                    if gs.dot(&cand) < 0.0 && cand.iter().all(|x| x.is_finite()) {
                        dws = Some(cand);
                        break;
                    }
                }
                tau = if tau == 0.0 { 1e-8 * base } else { tau * 10.0 };
            }
            let dws = match dws {
                Some(d) => d,
                None => break,
            };
            let decrement = -gs.dot(&dws);
            last_dec = decrement;
            if decrement * 0.5 <= dec_tol {
                break;
            }
            // back to unscaled coordinates
            let dw = DVector::from_fn(nf, |i, _| dws[i] * sc[i]);
            let alpha_lin = self.max_linear_step(w, &dw);
            let mut alpha = (0.99 * alpha_lin).min(1.0);
            let m0 = self.merit_weighted(w, mu, weight, t_shift);
            let slope = g.dot(&dw);
            let mut accepted = false;
            for _ in 0..60 {
                let wt = &*w + &dw * alpha;
                let mt = self.merit_weighted(&wt, mu, weight, t_shift);
                if mt.is_finite() && mt <= m0 + 1e-4 * alpha * slope {
                    *w = wt;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        last_dec
    }

    fn merit_weighted(&mut self, w: &DVector<f64>, mu: f64, weight: f64, t_shift: f64) -> f64 {
        let obj = if weight != 0.0 { weight * self.objective(w) } else { 0.0 };
        let (point, raw) = self.raw_of(w);
        let mut barrier = 0.0;
        for iq in &self.ineqs {
            let mut s = self.slack(iq, &point, &raw);
            if matches!(iq, Ineq::RateThr { .. }) {
                s += t_shift;
            }
            if s <= 0.0 {
                return f64::INFINITY;
            }
            barrier -= s.ln();
        }
        obj + mu * barrier
    }

    /// Full barrier solve from a strictly feasible start.
    pub fn solve(&mut self, start: &PrimalPoint, opts: &InnerOptions) -> Result<InnerOutcome, InnerFailure> {
        let mut w = self.project_equalities(&self.pack(start));
        if self.min_slack(&w) <= 0.0 {
            return Err(InnerFailure::Stalled {
                best: Box::new(InnerOutcome {
                    point: start.clone(),
                    objective: f64::INFINITY,
                    newton_steps: 0,
                    kkt_residual: f64::INFINITY,
                }),
            });
        }
        let mut budget = opts.max_newton_steps;
        let mut mu = opts.mu_initial;
        let mut last_dec;
        loop {
            let dec_tol = (1e-2 * mu).max(1e-14);
            last_dec = self.newton_stage(&mut w, mu, 1.0, 0.0, &mut budget, dec_tol);
            if mu <= opts.mu_final || budget == 0 {
                break;
            }
            mu = (mu * 0.1).max(opts.mu_final);
        }
        let point = self.unpack(&w);
        let objective = self.objective(&w);
        let kkt_residual = last_dec.abs().sqrt().max(mu);
        let outcome = InnerOutcome {
            point,
            objective,
            newton_steps: opts.max_newton_steps - budget,
            kkt_residual,
        };
        if kkt_residual > opts.kkt_tol.max(1e-5) && budget == 0 {
            return Err(InnerFailure::Stalled { best: Box::new(outcome) });
        }
        Ok(outcome)
    }

    /// Phase-1: drive the worst rate-threshold violation negative while all
    /// other constraints stay strictly feasible.
    pub fn phase1(&mut self, start: &PrimalPoint, opts: &InnerOptions) -> Result<PrimalPoint, InnerFailure> {
        let mut w = self.project_equalities(&self.pack(start));
        let base_ok = {
            let (point, raw) = self.raw_of(&w);
            self.ineqs
                .iter()
                .filter(|iq| !matches!(iq, Ineq::RateThr { .. }))
                .all(|iq| self.slack(iq, &point, &raw) > 0.0)
        };
        if !base_ok {
            let (point, raw) = self.raw_of(&w);
            let worst = self
                .ineqs
                .iter()
                .filter(|iq| !matches!(iq, Ineq::RateThr { .. }))
                .map(|iq| self.slack(iq, &point, &raw))
                .fold(f64::INFINITY, f64::min);
            return Err(InnerFailure::Infeasible { violation: -worst });
        }
        let rate_min = |model: &mut Self, w: &DVector<f64>| -> f64 {
            let (point, raw) = model.raw_of(w);
            model
                .ineqs
                .iter()
                .filter(|iq| matches!(iq, Ineq::RateThr { .. }))
                .map(|iq| model.slack(iq, &point, &raw))
                .fold(f64::INFINITY, f64::min)
        };
        let mut smin = rate_min(self, &w);
        if smin > FEAS_TOL {
            return Ok(self.unpack(&w));
        }
        let mut budget = opts.max_newton_steps;
        let mut mu = 1e-1;
        while budget > 0 && mu > 1e-10 {
            // shift keeps every rate slack strictly positive at the current w
            let t_shift = (-smin).max(0.0) * 1.2 + mu;
            let dec_tol = (1e-2 * mu).max(1e-14);
            self.newton_stage(&mut w, mu, 0.0, t_shift, &mut budget, dec_tol);
            smin = rate_min(self, &w);
            if smin > FEAS_TOL {
                return Ok(self.unpack(&w));
            }
            mu *= 0.2;
        }
        Err(InnerFailure::Infeasible { violation: (-smin).max(0.0) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::desk_instance;

    #[test]
    fn barrier_gradient_and_hessian_match_finite_differences() {
        let inst = desk_instance(3);
        let anchor = vec![0.4; inst.map().n_assign()];
        let mut model = InnerModel::new(&inst, &anchor, &[]);
        let start = crate::solver::construct_start(&inst);
        let w0 = model.project_equalities(&model.pack(&start));
        assert!(model.min_slack(&w0) > 0.0, "start must be strictly feasible");
        let mu = 1e-2;
        let (g, h) = model.grad_hess(&w0, mu, 1.0, 0.0);
        let n = g.len();
        let steps: Vec<f64> = (0..n).map(|k| 1e-7 * w0[k].abs().max(1e-7)).collect();
        for k in (0..n).step_by(3) {
            // barrier curvature makes single-step differences noisy; take the
            // best agreement over a small step sweep
            let best = [1.0, 0.1, 0.01]
                .iter()
                .map(|hs| {
                    let hk = steps[k] * hs;
                    let mut up = w0.clone();
                    let mut dn = w0.clone();
                    up[k] += hk;
                    dn[k] -= hk;
                    let fd = (model.merit(&up, mu) - model.merit(&dn, mu)) / (2.0 * hk);
                    let denom = g[k].abs().max(fd.abs()).max(1e-4);
                    (fd - g[k]).abs() / denom
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best < 2e-3, "grad[{k}]: relative error {best}");
        }
        for k in (0..n).step_by(5) {
            let mut up = w0.clone();
            let mut dn = w0.clone();
            up[k] += steps[k];
            dn[k] -= steps[k];
            let gu = model.grad_hess(&up, mu, 1.0, 0.0).0;
            let gd = model.grad_hess(&dn, mu, 1.0, 0.0).0;
            for j in (0..n).step_by(7) {
                let fd = (gu[j] - gd[j]) / (2.0 * steps[k]);
                let an = h[(j, k)];
                let denom = an.abs().max(fd.abs()).max(1e-2 / (steps[k] * steps[k]).max(1e-20)).max(1e2);
                assert!(
                    (fd - an).abs() / denom < 5e-3,
                    "hess[{j},{k}]: fd {fd} analytic {an}"
                );
            }
        }
        for i in 0..n {
            for j in 0..n {
                assert!((h[(i, j)] - h[(j, i)]).abs() <= 1e-8 * h[(i, j)].abs().max(1.0));
            }
        }
    }
}
