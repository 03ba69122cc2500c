//! Indoor multiuser deployment: an AP at the ceiling center serving users
//! distributed uniformly on the floor. All dB-valued inputs are converted to
//! linear units here; everything downstream is linear-only.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::LinkParams;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario invalid: {0}")]
    Invalid(String),
    #[error("scenario config: {0}")]
    Config(String),
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// System parameters shared by every link, already in linear units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub gain_ap: f64,
    pub gain_user: f64,
    /// Noise power density (W/Hz).
    pub noise_density: f64,
    pub p_tot_w: f64,
    pub p_max_w: f64,
    pub r_thr_bps: f64,
    pub b_g_hz: f64,
    pub b_max_hz: f64,
}

/// Reference parameter set: guard band 1 GHz, max sub-band 4.5 GHz, total
/// power -12.5 dBm with the per-user cap `4 P_tot / (3 |I|)`, 2 Gbps rate
/// threshold, 35/20 dBi gains, -174 dBm/Hz noise density.
pub fn default_params(n_users: usize) -> ScenarioParams {
    let p_tot_w = dbm_to_watts(-12.5);
    ScenarioParams {
        gain_ap: db_to_linear(35.0),
        gain_user: db_to_linear(20.0),
        noise_density: dbm_to_watts(-174.0),
        p_tot_w,
        // the 4/(3 |I|) rule exceeds the budget below two users; cap there
        p_max_w: (4.0 * p_tot_w / (3.0 * n_users as f64)).min(p_tot_w),
        r_thr_bps: 2e9,
        b_g_hz: 1e9,
        b_max_hz: 4.5e9,
    }
}

/// One user's planar and 3D distances to the AP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub l_m: f64,
    pub d_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub room_x_m: f64,
    pub room_y_m: f64,
    pub h_eps_m: f64,
    pub users: Vec<User>,
    pub params: ScenarioParams,
    pub seed: u64,
}

/// Draws `n_users` positions uniformly over the floor; the AP sits at the
/// room center at height offset `h_eps_m`. Deterministic per seed (ChaCha12).
pub fn generate(
    room_x_m: f64,
    room_y_m: f64,
    h_eps_m: f64,
    n_users: usize,
    params: ScenarioParams,
    seed: u64,
) -> Scenario {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let users = (0..n_users)
        .map(|_| {
            let x = (rng.gen::<f64>() - 0.5) * room_x_m;
            let y = (rng.gen::<f64>() - 0.5) * room_y_m;
            let l = (x * x + y * y).sqrt();
            User { l_m: l, d_m: (h_eps_m * h_eps_m + l * l).sqrt() }
        })
        .collect();
    Scenario {
        room_x_m,
        room_y_m,
        h_eps_m,
        users,
        params,
        seed,
    }
}

impl Scenario {
    /// Builds a scenario from explicit planar distances (test hook for
    /// deterministic placements).
    pub fn with_user_distances(
        room_x_m: f64,
        room_y_m: f64,
        h_eps_m: f64,
        ls_m: &[f64],
        params: ScenarioParams,
    ) -> Self {
        let users = ls_m
            .iter()
            .map(|&l| User { l_m: l, d_m: (h_eps_m * h_eps_m + l * l).sqrt() })
            .collect();
        Scenario {
            room_x_m,
            room_y_m,
            h_eps_m,
            users,
            params,
            seed: 0,
        }
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    /// Maximum 3D link distance over all users.
    pub fn d_max_m(&self) -> f64 {
        self.users.iter().map(|u| u.d_m).fold(0.0, f64::max)
    }

    /// Link parameters for user `i` at transmit power `power_w`.
    pub fn link_with_power(&self, i: usize, power_w: f64) -> LinkParams {
        LinkParams {
            power_w,
            dist_m: self.users[i].d_m,
            gain_ap: self.params.gain_ap,
            gain_user: self.params.gain_user,
            noise_density: self.params.noise_density,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.users.is_empty() {
            return Err(ScenarioError::Invalid("no users".into()));
        }
        if !(self.room_x_m > 0.0 && self.room_y_m > 0.0 && self.h_eps_m > 0.0) {
            return Err(ScenarioError::Invalid("non-positive geometry".into()));
        }
        let p = &self.params;
        if !(p.p_max_w > 0.0 && p.p_max_w <= p.p_tot_w) {
            return Err(ScenarioError::Invalid(format!(
                "need 0 < p_max ({:.3e}) <= p_tot ({:.3e})",
                p.p_max_w, p.p_tot_w
            )));
        }
        if p.r_thr_bps < 0.0 || p.b_g_hz < 0.0 || !(p.b_max_hz > 0.0) {
            return Err(ScenarioError::Invalid("bad rate/bandwidth parameters".into()));
        }
        if !(p.gain_ap > 0.0 && p.gain_user > 0.0 && p.noise_density > 0.0) {
            return Err(ScenarioError::Invalid("gains and noise density must be positive".into()));
        }
        let half_diag = 0.5 * (self.room_x_m * self.room_x_m + self.room_y_m * self.room_y_m).sqrt();
        for (i, u) in self.users.iter().enumerate() {
            let d_expect = (self.h_eps_m * self.h_eps_m + u.l_m * u.l_m).sqrt();
            if (u.d_m - d_expect).abs() > 1e-9 * d_expect {
                return Err(ScenarioError::Invalid(format!("user {i}: d != sqrt(h^2 + l^2)")));
            }
            if u.l_m > half_diag * (1.0 + 1e-12) {
                return Err(ScenarioError::Invalid(format!("user {i}: l outside room")));
            }
        }
        Ok(())
    }
}

/// On-disk scenario description. Field names carry units; dB quantities are
/// converted when building the `Scenario`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub room_x_m: f64,
    pub room_y_m: f64,
    pub h_eps_m: f64,
    pub n_users: usize,
    pub seed: u64,
    pub p_tot_dbm: f64,
    /// Per-user power cap; defaults to `4 P_tot / (3 n_users)` when absent.
    #[serde(default)]
    pub p_max_dbm: Option<f64>,
    pub r_thr_bps: f64,
    pub b_g_hz: f64,
    pub b_max_hz: f64,
    pub g_a_dbi: f64,
    pub g_u_dbi: f64,
    pub n0_dbm_per_hz: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            room_x_m: 20.0,
            room_y_m: 20.0,
            h_eps_m: 2.0,
            n_users: 30,
            seed: 1,
            p_tot_dbm: -12.5,
            p_max_dbm: None,
            r_thr_bps: 2e9,
            b_g_hz: 1e9,
            b_max_hz: 4.5e9,
            g_a_dbi: 35.0,
            g_u_dbi: 20.0,
            n0_dbm_per_hz: -174.0,
        }
    }
}

impl ScenarioConfig {
    pub fn params(&self) -> ScenarioParams {
        let p_tot_w = dbm_to_watts(self.p_tot_dbm);
        ScenarioParams {
            gain_ap: db_to_linear(self.g_a_dbi),
            gain_user: db_to_linear(self.g_u_dbi),
            noise_density: dbm_to_watts(self.n0_dbm_per_hz),
            p_tot_w,
            p_max_w: self
                .p_max_dbm
                .map(dbm_to_watts)
                .unwrap_or((4.0 * p_tot_w / (3.0 * self.n_users as f64)).min(p_tot_w)),
            r_thr_bps: self.r_thr_bps,
            b_g_hz: self.b_g_hz,
            b_max_hz: self.b_max_hz,
        }
    }

    pub fn build(&self) -> Result<Scenario, ScenarioError> {
        let sc = generate(
            self.room_x_m,
            self.room_y_m,
            self.h_eps_m,
            self.n_users,
            self.params(),
            self.seed,
        );
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ScenarioError> {
        toml::from_str(s).map_err(|e| ScenarioError::Config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centered_user_degenerates_to_height() {
        let sc = Scenario::with_user_distances(20.0, 20.0, 2.0, &[0.0], default_params(1));
        assert_eq!(sc.users[0].d_m, 2.0);
        assert_eq!(sc.d_max_m(), 2.0);
    }

    #[test]
    fn default_params_match_reference_values() {
        let p = default_params(30);
        assert!((p.p_tot_w - 5.623e-5).abs() / 5.623e-5 < 1e-3);
        assert!((p.p_max_w - 4.0 * p.p_tot_w / 90.0).abs() < 1e-20);
        assert!((p.gain_ap - 3162.3).abs() / 3162.3 < 1e-3);
        assert!((p.gain_user - 100.0).abs() < 1e-9);
        assert!((p.noise_density - 3.981e-21).abs() / 3.981e-21 < 1e-3);
        assert_eq!(p.r_thr_bps, 2e9);
        assert_eq!(p.b_g_hz, 1e9);
        assert_eq!(p.b_max_hz, 4.5e9);
    }

    #[test]
    fn default_config_builds_paper_scale_scenario() {
        let sc = ScenarioConfig::default().build().unwrap();
        assert_eq!(sc.room_x_m, 20.0);
        assert_eq!(sc.room_y_m, 20.0);
        assert_eq!(sc.h_eps_m, 2.0);
        assert_eq!(sc.n_users(), 30);
    }

    #[test]
    fn same_seed_same_users() {
        let p = default_params(12);
        let a = generate(20.0, 20.0, 2.0, 12, p, 77);
        let b = generate(20.0, 20.0, 2.0, 12, p, 77);
        assert_eq!(a, b);
        assert_eq!(
            toml::to_string(&a).unwrap(),
            toml::to_string(&b).unwrap()
        );
        let c = generate(20.0, 20.0, 2.0, 12, p, 78);
        assert_ne!(a.users, c.users);
    }

    #[test]
    fn d_max_matches_scan_and_arithmetic() {
        let sc = Scenario::with_user_distances(20.0, 20.0, 2.0, &[3.0, 4.0], default_params(2));
        assert!((sc.d_max_m() - 20f64.sqrt()).abs() < 1e-12);
        let scan = sc.users.iter().map(|u| u.d_m).fold(f64::NEG_INFINITY, f64::max);
        let sc2 = generate(20.0, 20.0, 2.0, 40, default_params(40), 5);
        let scan2 = sc2.users.iter().map(|u| u.d_m).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(sc.d_max_m(), scan);
        assert_eq!(sc2.d_max_m(), scan2);
    }

    #[test]
    fn generated_distances_respect_geometry() {
        let sc = generate(20.0, 20.0, 2.0, 1000, default_params(1000), 3);
        sc.validate().unwrap();
        for u in &sc.users {
            assert!(u.d_m >= sc.h_eps_m);
        }
    }

    #[test]
    fn mean_planar_distance_matches_uniform_square() {
        // closed form for a square of side a: a (sqrt(2) + asinh(1)) / 6
        let n = 100_000;
        let sc = generate(20.0, 20.0, 2.0, n, default_params(n), 11);
        let mean: f64 = sc.users.iter().map(|u| u.l_m).sum::<f64>() / n as f64;
        let analytic = 20.0 * (2f64.sqrt() + 1f64.asinh()) / 6.0;
        assert!((mean - analytic).abs() / analytic < 0.02, "{mean} vs {analytic}");
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = ScenarioConfig { n_users: 8, seed: 4, ..Default::default() };
        let s = cfg.to_toml_string();
        let back = ScenarioConfig::from_toml_str(&s).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn config_rejects_unknown_fields() {
        let s = "room_x_m = 20.0\nbogus = 1\n";
        assert!(ScenarioConfig::from_toml_str(s).is_err());
    }

    #[test]
    fn db_conversions() {
        assert!((dbm_to_watts(-12.5) - 5.623e-5).abs() / 5.623e-5 < 1e-3);
        assert!((db_to_linear(35.0) - 3162.28).abs() / 3162.28 < 1e-4);
        assert!((watts_to_dbm(dbm_to_watts(-30.0)) + 30.0).abs() < 1e-12);
    }

    #[test]
    fn validate_rejects_power_cap_above_budget() {
        let mut p = default_params(2);
        p.p_max_w = p.p_tot_w * 2.0;
        let sc = Scenario::with_user_distances(20.0, 20.0, 2.0, &[1.0, 2.0], p);
        assert!(sc.validate().is_err());
    }
}
