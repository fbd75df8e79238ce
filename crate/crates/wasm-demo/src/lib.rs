//! Browser bindings. Each export takes plain numbers and returns a JSON
//! string, so the page needs no generated type definitions.

use laa_ec::contention::{self, slot_distribution};
use laa_ec::optimizer::{DualUpdate, PowerModel, Problem};
use laa_ec::scenario::{generate_scenario, rate_of_power};
use laa_ec::{CwMode, LinkModel, SystemParams};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn params(n_laa: u32, m_wifi: u32, per: f64) -> SystemParams {
    SystemParams {
        n_laa,
        m_wifi,
        per,
        ..Default::default()
    }
}

fn to_js(r: laa_ec::Result<Value>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e.to_string()))
}

/// Effective capacity of both window modes on a log-spaced grid of QoS
/// exponents.
pub fn ec_curve_value(n_laa: u32, m_wifi: u32, per: f64, rate_bps: f64, points: usize) -> laa_ec::Result<Value> {
    let points = points.clamp(2, 200);
    let thetas: Vec<f64> = (0..points)
        .map(|i| 10f64.powf(-7.0 + 5.0 * i as f64 / (points - 1) as f64))
        .collect();
    let mut curves = serde_json::Map::new();
    let mut mean = serde_json::Map::new();
    for mode in [CwMode::Fcw, CwMode::Vcw] {
        let p = SystemParams { mode, ..params(n_laa, m_wifi, per) };
        let cp = contention::solve(&p)?;
        let model = LinkModel::new(&p, &cp, per)?;
        let ec = thetas
            .iter()
            .map(|&t| Ok(model.ec_two_state(t, rate_bps)?.ec))
            .collect::<laa_ec::Result<Vec<f64>>>()?;
        curves.insert(mode.to_string(), json!(ec));
        mean.insert(mode.to_string(), json!(model.mean_service_rate(rate_bps)));
    }
    Ok(json!({
        "theta": thetas,
        "mean_service": mean,
        "ec": curves,
    }))
}

/// Contention fixed point and slot-duration distribution.
pub fn contention_value(n_laa: u32, m_wifi: u32, vcw: bool) -> laa_ec::Result<Value> {
    let mode = if vcw { CwMode::Vcw } else { CwMode::Fcw };
    let p = SystemParams { mode, ..params(n_laa, m_wifi, 0.0) };
    let cp = contention::solve(&p)?;
    let sd = slot_distribution(&cp, &p)?;
    Ok(json!({
        "mode": mode.to_string(),
        "point": cp,
        "slots": sd.atoms(),
        "mean_slot_us": sd.mean(),
    }))
}

/// Proposed allocation against water-filling and channel inversion on a
/// seeded K-user scenario (N=1, M=4, 20 MHz, VCW).
pub fn allocation_value(k_users: u32, theta: f64, seed: u64) -> laa_ec::Result<Value> {
    let p = SystemParams {
        n_laa: 1,
        m_wifi: 4,
        k_users: k_users.clamp(1, 64),
        bandwidth_hz: 20e6,
        mode: CwMode::Vcw,
        ..Default::default()
    };
    let cp = contention::solve(&p)?;
    let channels = generate_scenario(&p, seed)?;
    let problem = Problem::new(&channels, theta, &p, &cp)?;
    let energy = PowerModel::new(&p, &cp)?;
    let opt = problem.maximize_ec(DualUpdate::Bisection)?;
    let eee = problem.maximize_eee(&energy, DualUpdate::Bisection)?;
    let wf = problem.water_filling()?;
    let ci = problem.channel_inversion()?;
    let row = |a: &laa_ec::PowerAllocation| {
        json!({
            "sum_ec": a.total_capacity(),
            "total_power_w": a.total_power(),
            "eee": problem.eee(a, &energy),
            "powers": a.powers,
        })
    };
    let share_rates: Vec<f64> = channels
        .tagged_gains()
        .iter()
        .map(|&g| rate_of_power(p.p_tot_w / f64::from(p.k_users), g, &p))
        .collect::<laa_ec::Result<_>>()?;
    Ok(json!({
        "theta": theta,
        "seed": seed,
        "equal_share_rates": share_rates,
        "proposed": row(&opt),
        "proposed_eee": row(&eee),
        "water_filling": row(&wf),
        "channel_inversion": row(&ci),
    }))
}

#[wasm_bindgen]
pub fn ec_curve(n_laa: u32, m_wifi: u32, per: f64, rate_bps: f64, points: usize) -> Result<String, JsError> {
    to_js(ec_curve_value(n_laa, m_wifi, per, rate_bps, points))
}

#[wasm_bindgen]
pub fn contention_point(n_laa: u32, m_wifi: u32, vcw: bool) -> Result<String, JsError> {
    to_js(contention_value(n_laa, m_wifi, vcw))
}

#[wasm_bindgen]
pub fn allocation(k_users: u32, theta: f64, seed: u64) -> Result<String, JsError> {
    to_js(allocation_value(k_users, theta, seed))
}
