//! Saturation fixed point of the LAA/WiFi contention and the resulting
//! distribution of virtual-slot durations seen by a tagged base station.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{CwMode, SystemParams};

pub const FIXED_POINT_TOL: f64 = 1e-12;
pub const HIDDEN_FIXED_POINT_TOL: f64 = 1e-10;
const DAMPING: f64 = 0.5;
const MAX_PICARD: usize = 20_000;

/// Per-slot transmission and collision probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContentionPoint {
    pub v_laa: f64,
    pub v_wifi: f64,
    pub p_laa: f64,
    pub p_wifi: f64,
    pub residual: f64,
}

/// Mean number of virtual slots per attempt of LAA stage `j`, counting the
/// transmission slot.
pub fn mean_backoff_laa(j: u32, params: &SystemParams) -> Result<f64> {
    if j >= params.k_retry_laa {
        return Err(Error::Domain(format!(
            "retry index {j} outside 0..{}",
            params.k_retry_laa
        )));
    }
    Ok((f64::from(params.laa_window(j)) + 1.0) / 2.0)
}

/// WiFi counterpart of [`mean_backoff_laa`], doubling capped at `K_W - 1`.
pub fn mean_backoff_wifi(j: u32, params: &SystemParams) -> f64 {
    (f64::from(params.wifi_window(j)) + 1.0) / 2.0
}

fn stage_ratio(p: f64, stages: u32, mean: impl Fn(u32) -> f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    let mut pj = 1.0;
    for j in 0..stages {
        num += pj;
        den += pj * mean(j);
        pj *= p;
    }
    num / den
}

/// LAA per-slot transmission probability given its collision probability.
pub fn laa_tx_prob(p_laa: f64, params: &SystemParams) -> f64 {
    match params.mode {
        CwMode::Fcw => 2.0 / (f64::from(params.w_laa) + 1.0),
        CwMode::Vcw => stage_ratio(p_laa, params.k_retry_laa, |j| {
            (f64::from(params.laa_window(j)) + 1.0) / 2.0
        }),
    }
}

/// WiFi per-slot transmission probability given its collision probability.
pub fn wifi_tx_prob(p_wifi: f64, params: &SystemParams) -> f64 {
    stage_ratio(p_wifi, params.k_retry_wifi, |j| mean_backoff_wifi(j, params))
}

/// Collision probabilities `(p_L, p_W)` for given transmission
/// probabilities and hidden-node survival factor.
pub fn collision_probs(v_laa: f64, v_wifi: f64, params: &SystemParams, hidden_factor: f64) -> (f64, f64) {
    let n = params.n_laa as i32;
    let m = params.m_wifi as i32;
    let q_l = 1.0 - v_laa;
    let q_w = 1.0 - v_wifi;
    let p_laa = 1.0 - q_w.powi(m) * q_l.powi(n - 1) * hidden_factor;
    let p_wifi = 1.0 - q_w.powi((m - 1).max(0)) * q_l.powi(n) * hidden_factor;
    (p_laa.max(0.0), p_wifi.max(0.0))
}

/// `[(1-v_L)^{h_L} (1-v_W)^{h_W}]^{2 T_s / mean_slot}` with `T_s = T_f`.
pub fn hidden_factor(v_laa: f64, v_wifi: f64, params: &SystemParams, mean_slot_us: f64) -> f64 {
    match params.hidden {
        None => 1.0,
        Some(h) if h.h_laa == 0 && h.h_wifi == 0 => 1.0,
        Some(h) => {
            let base = (1.0 - v_laa).powi(h.h_laa as i32) * (1.0 - v_wifi).powi(h.h_wifi as i32);
            base.powf(2.0 * params.t_f() / mean_slot_us)
        }
    }
}

impl ContentionPoint {
    fn from_tx(v_laa: f64, v_wifi: f64, params: &SystemParams, hidden: f64) -> Self {
        let (p_laa, p_wifi) = collision_probs(v_laa, v_wifi, params, hidden);
        let mut cp = Self {
            v_laa,
            v_wifi,
            p_laa,
            p_wifi,
            residual: 0.0,
        };
        cp.residual = cp.defect(params, hidden);
        cp
    }

    /// Largest violation of the four defining equations.
    pub fn defect(&self, params: &SystemParams, hidden: f64) -> f64 {
        let (p_l, p_w) = collision_probs(self.v_laa, self.v_wifi, params, hidden);
        let mut d = (self.v_laa - laa_tx_prob(self.p_laa, params)).abs();
        d = d.max((self.v_wifi - wifi_tx_prob(self.p_wifi, params)).abs());
        d = d.max((self.p_laa - p_l).abs());
        if params.m_wifi > 0 {
            d = d.max((self.p_wifi - p_w).abs());
        }
        d
    }

    /// Defect without hidden nodes.
    pub fn residual_of(&self, params: &SystemParams) -> f64 {
        self.defect(params, 1.0)
    }
}

/// Damped Picard iteration on `(v_L, v_W)`; `hidden` maps the current
/// transmission probabilities to the hidden-node factor.
fn picard(
    params: &SystemParams,
    tol: f64,
    hidden: impl Fn(f64, f64) -> f64,
) -> std::result::Result<ContentionPoint, [f64; 5]> {
    let mut v_l = 2.0 / (f64::from(params.w_laa) + 1.0);
    let mut v_w = 2.0 / (f64::from(params.w_wifi) + 1.0);
    let mut last = [0.0; 5];
    for _ in 0..MAX_PICARD {
        let h = hidden(v_l, v_w);
        let (p_l, p_w) = collision_probs(v_l, v_w, params, h);
        let g_l = laa_tx_prob(p_l, params);
        let g_w = wifi_tx_prob(p_w, params);
        let step = (g_l - v_l).abs().max((g_w - v_w).abs());
        last = [v_l, v_w, p_l, p_w, step];
        if step <= 0.1 * tol {
            let h = hidden(g_l, g_w);
            let cp = ContentionPoint::from_tx(g_l, g_w, params, h);
            if cp.residual <= tol {
                return Ok(cp);
            }
        }
        v_l = DAMPING * v_l + (1.0 - DAMPING) * g_l;
        v_w = DAMPING * v_w + (1.0 - DAMPING) * g_w;
    }
    Err(last)
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    // f(lo) <= 0 <= f(hi)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) <= 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// WiFi transmission probability consistent with a given `v_L`.
fn wifi_given_laa(v_l: f64, params: &SystemParams, hidden: f64) -> f64 {
    bisect(0.0, 1.0, |v_w| {
        let (_, p_w) = collision_probs(v_l, v_w, params, hidden);
        v_w - wifi_tx_prob(p_w, params)
    })
}

/// Scalar fallback: bisection on the reduced map in `v_L`.
fn reduced_bisection(params: &SystemParams) -> ContentionPoint {
    let v_l = bisect(0.0, 1.0, |v_l| {
        let v_w = wifi_given_laa(v_l, params, 1.0);
        let (p_l, _) = collision_probs(v_l, v_w, params, 1.0);
        v_l - laa_tx_prob(p_l, params)
    });
    let v_w = wifi_given_laa(v_l, params, 1.0);
    ContentionPoint::from_tx(v_l, v_w, params, 1.0)
}

/// Solves the saturation fixed point without hidden nodes.
pub fn solve_fixed_point(params: &SystemParams) -> Result<ContentionPoint> {
    params.validate()?;
    match picard(params, FIXED_POINT_TOL, |_, _| 1.0) {
        Ok(cp) => Ok(cp),
        Err(last) => {
            let cp = reduced_bisection(params);
            if cp.residual <= FIXED_POINT_TOL {
                Ok(cp)
            } else {
                Err(Error::NoConvergence {
                    iterations: MAX_PICARD,
                    residual: cp.residual.min(last[4]),
                    last: [last[0], last[1], last[2], last[3]],
                })
            }
        }
    }
}

fn mean_slot_of(v_l: f64, v_w: f64, params: &SystemParams) -> f64 {
    SlotDistribution::from_tx(v_l, v_w, params).mean()
}

/// Solves the fixed point including the hidden-node survival factor, which
/// couples the collision probabilities to the mean slot duration.
pub fn solve_fixed_point_hidden(params: &SystemParams) -> Result<ContentionPoint> {
    params.validate()?;
    if params.hidden.is_none() {
        return Err(Error::InvalidParam {
            name: "hidden",
            reason: "hidden-node counts are required".into(),
        });
    }
    if matches!(params.hidden, Some(h) if h.h_laa == 0 && h.h_wifi == 0) {
        return solve_fixed_point(params);
    }
    let factor = |v_l: f64, v_w: f64| hidden_factor(v_l, v_w, params, mean_slot_of(v_l, v_w, params));
    match picard(params, HIDDEN_FIXED_POINT_TOL, factor) {
        Ok(mut cp) => {
            cp.residual = cp.defect(params, factor(cp.v_laa, cp.v_wifi));
            Ok(cp)
        }
        Err(last) => Err(Error::NoConvergence {
            iterations: MAX_PICARD,
            residual: last[4],
            last: [last[0], last[1], last[2], last[3]],
        }),
    }
}

/// Dispatches to the hidden-node solver when hidden counts are configured.
pub fn solve(params: &SystemParams) -> Result<ContentionPoint> {
    if params.hidden.is_some() {
        solve_fixed_point_hidden(params)
    } else {
        solve_fixed_point(params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SlotKind {
    Idle,
    WifiCollision,
    /// Collision among other LAA stations only.
    LaaCollision,
    WifiSuccess,
    /// Collision-free transmission of another LAA station.
    LaaSuccess,
    /// Collision involving both WiFi and LAA transmitters.
    CrossCollision,
}

impl SlotKind {
    pub const ALL: [SlotKind; 6] = [
        SlotKind::Idle,
        SlotKind::WifiCollision,
        SlotKind::LaaCollision,
        SlotKind::WifiSuccess,
        SlotKind::LaaSuccess,
        SlotKind::CrossCollision,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SlotKind::Idle => "idle",
            SlotKind::WifiCollision => "wifi_collision",
            SlotKind::LaaCollision => "laa_collision",
            SlotKind::WifiSuccess => "wifi_success",
            SlotKind::LaaSuccess => "laa_success",
            SlotKind::CrossCollision => "cross_collision",
        }
    }

    /// Kind of a slot with the given numbers of LAA and WiFi transmitters.
    pub fn classify(laa: usize, wifi: usize) -> SlotKind {
        match (laa, wifi) {
            (0, 0) => SlotKind::Idle,
            (0, 1) => SlotKind::WifiSuccess,
            (0, _) => SlotKind::WifiCollision,
            (1, 0) => SlotKind::LaaSuccess,
            (_, 0) => SlotKind::LaaCollision,
            _ => SlotKind::CrossCollision,
        }
    }

    pub fn duration_us(self, params: &SystemParams) -> f64 {
        let d = params.slot_durations();
        match self {
            SlotKind::Idle => d.idle,
            SlotKind::WifiCollision => d.wifi_collision,
            SlotKind::LaaCollision => d.laa_collision,
            SlotKind::WifiSuccess => d.wifi_success,
            SlotKind::LaaSuccess => d.laa_success,
            SlotKind::CrossCollision => d.cross_collision,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlotAtom {
    pub kind: SlotKind,
    pub duration_us: f64,
    pub prob: f64,
}

/// Distribution of the virtual-slot duration seen while the tagged station
/// backs off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotDistribution {
    atoms: [SlotAtom; 6],
}

impl SlotDistribution {
    pub fn from_atoms(atoms: [SlotAtom; 6]) -> Result<Self> {
        let mut sum = 0.0;
        for a in &atoms {
            if !(-1e-12..=1.0 + 1e-12).contains(&a.prob) {
                return Err(Error::Domain(format!(
                    "slot probability {} of {} outside [0, 1]",
                    a.prob,
                    a.kind.as_str()
                )));
            }
            if !(a.duration_us > 0.0) {
                return Err(Error::Domain(format!("non-positive duration for {}", a.kind.as_str())));
            }
            sum += a.prob;
        }
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Domain(format!("slot probabilities sum to {sum}")));
        }
        let mut atoms = atoms;
        for a in &mut atoms {
            a.prob = a.prob.clamp(0.0, 1.0);
        }
        Ok(Self { atoms })
    }

    fn from_tx(v_l: f64, v_w: f64, params: &SystemParams) -> Self {
        let others = params.n_laa as i32 - 1;
        let m = params.m_wifi as i32;
        let q_l = 1.0 - v_l;
        let q_w = 1.0 - v_w;
        let none_l = q_l.powi(others);
        let none_w = q_w.powi(m);
        let one_l = if others > 0 {
            f64::from(others) * v_l * q_l.powi(others - 1)
        } else {
            0.0
        };
        let one_w = if m > 0 { f64::from(m) * v_w * q_w.powi(m - 1) } else { 0.0 };
        let idle = none_l * none_w;
        let wifi_collision = (1.0 - none_w - one_w) * none_l;
        let laa_collision = none_w * (1.0 - none_l - one_l);
        let wifi_success = none_l * one_w;
        let laa_success = none_w * one_l;
        let cross = 1.0 - idle - wifi_collision - laa_collision - wifi_success - laa_success;
        let probs = [idle, wifi_collision, laa_collision, wifi_success, laa_success, cross];
        let atoms = SlotKind::ALL.map(|kind| SlotAtom {
            kind,
            duration_us: kind.duration_us(params),
            prob: probs[kind.index()],
        });
        Self { atoms }
    }

    pub fn atoms(&self) -> &[SlotAtom; 6] {
        &self.atoms
    }

    pub fn prob(&self, kind: SlotKind) -> f64 {
        self.atoms[kind.index()].prob
    }

    /// Mean slot duration in microseconds.
    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.prob * a.duration_us).sum()
    }
}

/// Slot-duration distribution for a solved contention point.
pub fn slot_distribution(cp: &ContentionPoint, params: &SystemParams) -> Result<SlotDistribution> {
    let sd = SlotDistribution::from_tx(cp.v_laa, cp.v_wifi, params);
    SlotDistribution::from_atoms(sd.atoms)
}

/// Mean slot duration in microseconds.
pub fn slot_mean(sd: &SlotDistribution) -> f64 {
    sd.mean()
}
