//! System configuration, node placement and channel gains.
//!
//! All MAC durations are whole microseconds. Powers are stored in watts;
//! scenario files may give them in dBm with a `_dbm` suffix instead.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Side of the square deployment area in metres.
pub const AREA_SIDE_M: f64 = 500.0;

/// Closest a UE may be to its base station, in metres.
pub const MIN_DISTANCE_M: f64 = 1.0;

/// LAA contention-window policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CwMode {
    /// Fixed window `W_L` for every (re)transmission.
    #[serde(rename = "FCW", alias = "fcw")]
    Fcw,
    /// Window doubles on each collision, reset after any collision-free attempt.
    #[serde(rename = "VCW", alias = "vcw")]
    Vcw,
}

impl CwMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CwMode::Fcw => "FCW",
            CwMode::Vcw => "VCW",
        }
    }
}

impl std::fmt::Display for CwMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for CwMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FCW" => Ok(CwMode::Fcw),
            "VCW" => Ok(CwMode::Vcw),
            _ => Err(Error::InvalidParam {
                name: "mode",
                reason: format!("expected FCW or VCW, got `{s}`"),
            }),
        }
    }
}

/// Numbers of hidden LAA base stations and hidden WiFi nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HiddenNodes {
    pub h_laa: u32,
    pub h_wifi: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    pub n_laa: u32,
    pub m_wifi: u32,
    pub k_users: u32,
    pub bandwidth_hz: f64,
    pub w_laa: u32,
    pub w_wifi: u32,
    pub k_retry_laa: u32,
    pub k_retry_wifi: u32,
    pub mode: CwMode,
    pub sigma_idle_us: u32,
    pub t_f_us: u32,
    pub t_c_us: u32,
    pub t_sw_us: u32,
    pub t_cw_us: u32,
    pub t_wl_us: u32,
    pub cca_us: u32,
    pub difs_us: u32,
    /// Add CCA to LAA busy slots and DIFS to WiFi busy slots.
    pub fold_sensing: bool,
    pub p_tot_w: f64,
    pub noise_psd_dbm_hz: f64,
    pub carrier_ghz: f64,
    /// Packet error rate of collision-free LAA transmissions.
    pub per: f64,
    /// Per-user override of `per`, indexed by user.
    pub per_user: Option<Vec<f64>>,
    pub p_static_w: f64,
    pub p_idle_w: f64,
    pub xi: f64,
    pub hidden: Option<HiddenNodes>,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            n_laa: 5,
            m_wifi: 5,
            k_users: 1,
            bandwidth_hz: 5e6,
            w_laa: 16,
            w_wifi: 32,
            k_retry_laa: 6,
            k_retry_wifi: 6,
            mode: CwMode::Fcw,
            sigma_idle_us: 10,
            t_f_us: 1000,
            t_c_us: 1000,
            t_sw_us: 1000,
            t_cw_us: 1000,
            t_wl_us: 1000,
            cca_us: 34,
            difs_us: 50,
            fold_sensing: false,
            p_tot_w: dbm_to_watts(23.0),
            noise_psd_dbm_hz: -174.0,
            carrier_ghz: 5.0,
            per: 0.01,
            per_user: None,
            p_static_w: 0.1,
            p_idle_w: 0.1,
            xi: 0.1,
            hidden: None,
        }
    }
}

/// Busy and idle slot durations in microseconds as seen by the MAC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotDurations {
    pub idle: f64,
    pub wifi_collision: f64,
    pub laa_collision: f64,
    pub wifi_success: f64,
    pub laa_success: f64,
    pub cross_collision: f64,
}

fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParam {
        name,
        reason: reason.into(),
    }
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_laa < 1 {
            return Err(invalid("n_laa", "need at least one LAA base station"));
        }
        if self.k_users < 1 {
            return Err(invalid("k_users", "need at least one user"));
        }
        if !(self.bandwidth_hz > 0.0) {
            return Err(invalid("bandwidth_hz", "must be positive"));
        }
        if self.w_laa < 2 {
            return Err(invalid("w_laa", "window must be at least 2"));
        }
        if self.w_wifi < 2 {
            return Err(invalid("w_wifi", "window must be at least 2"));
        }
        if self.k_retry_laa < 1 {
            return Err(invalid("k_retry_laa", "must be at least 1"));
        }
        if self.k_retry_wifi < 1 {
            return Err(invalid("k_retry_wifi", "must be at least 1"));
        }
        if self.k_retry_laa > 30 || self.k_retry_wifi > 30 {
            return Err(invalid("k_retry", "at most 30 retransmissions supported"));
        }
        let durations = [
            ("sigma_idle_us", self.sigma_idle_us),
            ("t_f_us", self.t_f_us),
            ("t_c_us", self.t_c_us),
            ("t_sw_us", self.t_sw_us),
            ("t_cw_us", self.t_cw_us),
            ("t_wl_us", self.t_wl_us),
            ("cca_us", self.cca_us),
            ("difs_us", self.difs_us),
        ];
        for (name, d) in durations {
            if d == 0 {
                return Err(invalid(name, "duration must be positive"));
            }
        }
        if !(0.0..1.0).contains(&self.per) {
            return Err(invalid("per", format!("{} not in [0, 1)", self.per)));
        }
        if let Some(per_user) = &self.per_user {
            if per_user.len() != self.k_users as usize {
                return Err(invalid("per_user", "length must equal k_users"));
            }
            if per_user.iter().any(|e| !(0.0..1.0).contains(e)) {
                return Err(invalid("per_user", "entries must lie in [0, 1)"));
            }
        }
        if !(self.p_tot_w > 0.0) {
            return Err(invalid("p_tot_w", "must be positive"));
        }
        if !(self.xi > 0.0 && self.xi <= 1.0) {
            return Err(invalid("xi", "amplifier efficiency must lie in (0, 1]"));
        }
        if self.p_static_w < 0.0 || self.p_idle_w < 0.0 {
            return Err(invalid("p_static_w", "powers must be non-negative"));
        }
        if !(self.carrier_ghz > 0.0) {
            return Err(invalid("carrier_ghz", "must be positive"));
        }
        Ok(())
    }

    /// Loads a scenario document. Power fields may be given as `<name>_dbm`
    /// in place of `<name>_w`.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let mut value: serde_json::Value = serde_json::from_str(text)?;
        if let Some(map) = value.as_object_mut() {
            let dbm_keys: Vec<String> = map
                .keys()
                .filter(|k| k.ends_with("_dbm"))
                .cloned()
                .collect();
            for key in dbm_keys {
                let dbm = map[&key]
                    .as_f64()
                    .ok_or_else(|| invalid("_dbm", format!("`{key}` must be a number")))?;
                let stem = key.trim_end_matches("_dbm");
                map.remove(&key);
                map.insert(format!("{stem}_w"), dbm_to_watts(dbm).into());
            }
        }
        let params: SystemParams = serde_json::from_value(value)?;
        params.validate()?;
        Ok(params)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Bandwidth of one user's subband, `B/K`.
    pub fn subband_hz(&self) -> f64 {
        self.bandwidth_hz / f64::from(self.k_users)
    }

    /// Noise power in one subband, PSD times `B/K`.
    pub fn noise_w(&self) -> f64 {
        dbm_to_watts(self.noise_psd_dbm_hz) * self.subband_hz()
    }

    pub fn per_of(&self, user: usize) -> f64 {
        self.per_user
            .as_ref()
            .and_then(|v| v.get(user).copied())
            .unwrap_or(self.per)
    }

    /// Contention window of LAA backoff stage `stage`.
    pub fn laa_window(&self, stage: u32) -> u32 {
        match self.mode {
            CwMode::Fcw => self.w_laa,
            CwMode::Vcw => self.w_laa << stage.min(self.k_retry_laa - 1),
        }
    }

    /// Contention window of WiFi backoff stage `stage`.
    pub fn wifi_window(&self, stage: u32) -> u32 {
        self.w_wifi << stage.min(self.k_retry_wifi - 1)
    }

    pub fn slot_durations(&self) -> SlotDurations {
        let (laa, wifi) = if self.fold_sensing {
            (self.cca_us, self.difs_us)
        } else {
            (0, 0)
        };
        let us = |d: u32| f64::from(d);
        SlotDurations {
            idle: us(self.sigma_idle_us),
            wifi_collision: us(self.t_cw_us + wifi),
            laa_collision: us(self.t_c_us + laa),
            wifi_success: us(self.t_sw_us + wifi),
            laa_success: us(self.t_f_us + laa),
            cross_collision: us(self.t_wl_us + laa.max(wifi)),
        }
    }

    /// Tagged BS transmission duration `T_f` in microseconds.
    pub fn t_f(&self) -> f64 {
        self.slot_durations().laa_success
    }

    /// Tagged BS collided transmission duration `T_c` in microseconds.
    pub fn t_c(&self) -> f64 {
        self.slot_durations().laa_collision
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Urban-micro NLOS log-distance path loss in dB.
pub fn path_loss_db(distance_m: f64, carrier_ghz: f64) -> f64 {
    let d = distance_m.max(MIN_DISTANCE_M);
    22.7 + 36.7 * d.log10() + 26.0 * carrier_ghz.log10()
}

/// Linear power gain of the path-loss surrogate.
pub fn path_gain(distance_m: f64, carrier_ghz: f64) -> f64 {
    10f64.powf(-path_loss_db(distance_m, carrier_ghz) / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Node placement and per-user channel gains.
///
/// Users are stored BS-major: user `k` of base station `n` sits at index
/// `n * K + k`. Base station 0 is the tagged station used by the analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet {
    pub gains: Vec<f64>,
    pub noise_w: f64,
    pub k_users: usize,
    pub base_stations: Vec<Position>,
    pub users: Vec<Position>,
    pub wifi_nodes: Vec<Position>,
}

impl ChannelSet {
    /// Gains of the users served by base station `bs`.
    pub fn gains_of(&self, bs: usize) -> &[f64] {
        &self.gains[bs * self.k_users..(bs + 1) * self.k_users]
    }

    /// Gains of the tagged base station's users.
    pub fn tagged_gains(&self) -> &[f64] {
        self.gains_of(0)
    }

    /// A channel set with explicit gains for the tagged station only.
    pub fn from_gains(gains: Vec<f64>, noise_w: f64) -> Result<Self> {
        if gains.is_empty() || gains.iter().any(|g| !(*g > 0.0)) {
            return Err(invalid("gains", "must be non-empty and positive"));
        }
        if !(noise_w > 0.0) {
            return Err(invalid("noise_w", "must be positive"));
        }
        Ok(Self {
            k_users: gains.len(),
            users: Vec::new(),
            base_stations: Vec::new(),
            wifi_nodes: Vec::new(),
            gains,
            noise_w,
        })
    }
}

/// Places nodes uniformly at random and derives channel gains.
///
/// Deterministic for a fixed `(params, seed)`.
pub fn generate_scenario(params: &SystemParams, seed: u64) -> Result<ChannelSet> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.n_laa as usize;
    let k = params.k_users as usize;
    let mut uniform_in = |cx: f64, cy: f64, side: f64| Position {
        x: cx + side * (rng.gen::<f64>() - 0.5),
        y: cy + side * (rng.gen::<f64>() - 0.5),
    };
    let half = AREA_SIDE_M / 2.0;
    let base_stations: Vec<Position> = (0..n).map(|_| uniform_in(half, half, AREA_SIDE_M)).collect();
    let wifi_nodes: Vec<Position> = (0..params.m_wifi)
        .map(|_| uniform_in(half, half, AREA_SIDE_M))
        .collect();
    let ue_side = AREA_SIDE_M / (n as f64).sqrt();
    let mut users = Vec::with_capacity(n * k);
    let mut gains = Vec::with_capacity(n * k);
    for bs in &base_stations {
        for _ in 0..k {
            let ue = uniform_in(bs.x, bs.y, ue_side);
            gains.push(path_gain(bs.distance(&ue), params.carrier_ghz));
            users.push(ue);
        }
    }
    Ok(ChannelSet {
        gains,
        noise_w: params.noise_w(),
        k_users: k,
        base_stations,
        users,
        wifi_nodes,
    })
}

/// Instantaneous rate `(B/K) log2(1 + G p / sigma^2)` in bit/s.
pub fn rate_of_power(p_w: f64, gain: f64, params: &SystemParams) -> Result<f64> {
    rate_with_noise(p_w, gain, params.noise_w(), params.subband_hz())
}

pub(crate) fn rate_with_noise(p_w: f64, gain: f64, noise_w: f64, subband_hz: f64) -> Result<f64> {
    if !(p_w >= 0.0) {
        return Err(Error::Domain(format!("negative transmit power {p_w}")));
    }
    Ok(subband_hz * (gain * p_w / noise_w).ln_1p() / std::f64::consts::LN_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let p = SystemParams::default();
        p.validate().unwrap();
        assert_eq!((p.w_laa, p.w_wifi, p.k_retry_laa, p.k_retry_wifi), (16, 32, 6, 6));
        assert_eq!((p.sigma_idle_us, p.t_f_us, p.t_c_us), (10, 1000, 1000));
        assert_eq!((p.cca_us, p.difs_us), (34, 50));
        assert!((watts_to_dbm(p.p_tot_w) - 23.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_params() {
        let bad = [
            SystemParams { w_laa: 1, ..Default::default() },
            SystemParams { k_retry_wifi: 0, ..Default::default() },
            SystemParams { per: 1.0, ..Default::default() },
            SystemParams { xi: 0.0, ..Default::default() },
            SystemParams { p_tot_w: 0.0, ..Default::default() },
            SystemParams { t_f_us: 0, ..Default::default() },
            SystemParams { n_laa: 0, ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
    }

    #[test]
    fn single_bs_ue_square_is_whole_area() {
        let params = SystemParams { n_laa: 1, k_users: 200, ..Default::default() };
        let ch = generate_scenario(&params, 7).unwrap();
        let bs = ch.base_stations[0];
        for ue in &ch.users {
            assert!((ue.x - bs.x).abs() <= 250.0 && (ue.y - bs.y).abs() <= 250.0);
        }
        let spread = ch.users.iter().map(|u| (u.x - bs.x).abs()).fold(0.0, f64::max);
        assert!(spread > 200.0);
    }

    #[test]
    fn scenario_is_deterministic() {
        let params = SystemParams { k_users: 20, ..Default::default() };
        let a = generate_scenario(&params, 42).unwrap();
        let b = generate_scenario(&params, 42).unwrap();
        assert_eq!(a, b);
        let c = generate_scenario(&params, 43).unwrap();
        assert_ne!(a.gains, c.gains);
        assert_eq!(a.gains.len(), 100);
        assert!(a.gains.iter().all(|g| *g > 0.0));
    }

    #[test]
    fn path_gain_regression_at_100m() {
        // 22.7 + 36.7*2 + 26*log10(5) = 114.2732201 dB
        let g = path_gain(100.0, 5.0);
        assert!((g - 3.738_333_036_595_8e-12).abs() / g < 1e-10, "{g:e}");
        assert_eq!(path_gain(0.0, 5.0), path_gain(1.0, 5.0));
    }

    #[test]
    fn rate_examples() {
        let params = SystemParams { bandwidth_hz: 1e6, k_users: 1, ..Default::default() };
        let noise = params.noise_w();
        assert_eq!(rate_of_power(0.0, 1.0, &params).unwrap(), 0.0);
        let r1 = rate_of_power(noise, 1.0, &params).unwrap();
        assert!((r1 - 1e6).abs() < 1e-6);
        let r3 = rate_of_power(3.0 * noise, 1.0, &params).unwrap();
        assert!((r3 - 2e6).abs() < 1e-6);
        assert!(rate_of_power(-1.0, 1.0, &params).is_err());
    }

    #[test]
    fn json_with_dbm_fields() {
        let p = SystemParams::from_json_str(
            r#"{"n_laa": 2, "mode": "VCW", "p_tot_dbm": 30.0, "p_static_dbm": 20.0}"#,
        )
        .unwrap();
        assert_eq!(p.n_laa, 2);
        assert_eq!(p.mode, CwMode::Vcw);
        assert!((p.p_tot_w - 1.0).abs() < 1e-12);
        assert!((p.p_static_w - 0.1).abs() < 1e-12);
        assert!(SystemParams::from_json_str(r#"{"bogus": 1}"#).is_err());
        assert!(SystemParams::from_json_str(r#"{"w_laa": 1}"#).is_err());
    }

    #[test]
    fn vcw_windows_double_and_cap() {
        let p = SystemParams { mode: CwMode::Vcw, ..Default::default() };
        assert_eq!(p.laa_window(0), 16);
        assert_eq!(p.laa_window(2), 64);
        assert_eq!(p.laa_window(9), 16 << 5);
        assert_eq!(p.wifi_window(5), 32 << 5);
        let f = SystemParams::default();
        assert_eq!(f.laa_window(4), 16);
    }

    proptest::proptest! {
        #[test]
        fn rate_is_increasing_and_concave(a in 0.0f64..1.0, b in 0.0f64..1.0, g in 1e-14f64..1e-8) {
            let params = SystemParams::default();
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            proptest::prop_assume!(hi - lo > 1e-6);
            let r = |p: f64| rate_of_power(p, g, &params).unwrap();
            proptest::prop_assert!(r(hi) > r(lo));
            let mid = r(0.5 * (lo + hi));
            proptest::prop_assert!(mid >= 0.5 * (r(lo) + r(hi)) - 1e-9 * mid.abs());
        }
    }
}
