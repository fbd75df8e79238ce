//! Power allocation across the users of the tagged base station.
//!
//! Effective capacity is concave in rate, so the power needed to reach a
//! capacity, `P_k(C_k)`, is convex. Sum-capacity maximization is solved in
//! the capacity variables by Lagrange dual decomposition: for a fixed
//! multiplier every user solves `mu dP/dC = 1` independently by bisection.
//! Energy efficiency adds a Dinkelbach loop on top.

use serde::{Deserialize, Serialize};

use crate::capacity::{LinkModel, US};
use crate::contention::{slot_distribution, ContentionPoint};
use crate::error::{Error, Result};
use crate::genfun::{big_f, GenFun};
use crate::scenario::{rate_with_noise, ChannelSet, CwMode, SystemParams};

pub const POWER_TOL: f64 = 1e-6;
pub const GAP_TOL: f64 = 1e-6;
pub const KKT_TOL: f64 = 1e-6;
pub const DINKELBACH_TOL: f64 = 1e-8;
const MAX_OUTER: usize = 10_000;
const MAX_DINKELBACH: usize = 100;

/// How the power multiplier is updated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DualUpdate {
    /// Bisection on `ln mu`; total power is monotone in the multiplier.
    Bisection,
    /// Projected subgradient steps on `ln mu` with size `step0 / sqrt(t)`
    /// applied to the relative constraint violation.
    Subgradient { step0: f64, max_iter: usize },
}

impl Default for DualUpdate {
    fn default() -> Self {
        DualUpdate::Bisection
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub powers: Vec<f64>,
    pub capacities: Vec<f64>,
    pub rates: Vec<f64>,
    pub mu: f64,
    pub omega: Option<f64>,
    /// Sum capacity, or effective energy efficiency for the EEE problem.
    pub objective: f64,
    pub duality_gap: f64,
    /// Largest `|lambda dP/dC - 1|` over users strictly inside `C > 0`.
    pub kkt_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Dinkelbach parameter after each outer iteration.
    pub omega_history: Vec<f64>,
}

impl PowerAllocation {
    pub fn total_power(&self) -> f64 {
        self.powers.iter().sum()
    }

    pub fn total_capacity(&self) -> f64 {
        self.capacities.iter().sum()
    }
}

/// Fixed-`theta` capacity/power trade-off of one user.
#[derive(Debug, Clone)]
pub struct UserLink {
    pub model: LinkModel,
    pub gain: f64,
    pub noise_w: f64,
    pub theta: f64,
    subband_hz: f64,
}

impl UserLink {
    pub fn new(model: LinkModel, gain: f64, noise_w: f64, theta: f64) -> Result<Self> {
        if !(theta > 0.0) {
            return Err(Error::Domain(format!("QoS exponent must be positive, got {theta}")));
        }
        if !(gain > 0.0) {
            return Err(Error::Domain(format!("channel gain must be positive, got {gain}")));
        }
        let subband_hz = model.params.subband_hz();
        Ok(Self {
            model,
            gain,
            noise_w,
            theta,
            subband_hz,
        })
    }

    fn scale(&self) -> f64 {
        self.theta * US
    }

    /// Supremum of reachable capacities (the OFF transform diverges there).
    pub fn c_sup(&self) -> f64 {
        self.model.pgfs.x_max() / self.scale()
    }

    /// Transmit power reaching capacity `c`, with `dP/dC`.
    pub fn power(&self, c: f64) -> Result<(f64, f64)> {
        power_of_capacity_with(c, self.theta, self.gain, self.noise_w, self.subband_hz, &self.model)
    }

    /// Like [`UserLink::power`] but saturating to infinity off the domain.
    fn power_or_inf(&self, c: f64) -> (f64, f64) {
        match self.power(c) {
            Ok((p, d)) if p.is_finite() && d.is_finite() => (p, d),
            _ => (f64::INFINITY, f64::INFINITY),
        }
    }

    pub fn rate(&self, p: f64) -> Result<f64> {
        rate_with_noise(p, self.gain, self.noise_w, self.subband_hz)
    }

    pub fn capacity(&self, p: f64) -> Result<f64> {
        Ok(self.model.ec_two_state(self.theta, self.rate(p)?)?.ec)
    }

    /// Solves `weight dP/dC = 1` for `C >= 0`.
    fn best_response(&self, weight: f64) -> f64 {
        let target = 1.0 / weight;
        let (_, d0) = self.power_or_inf(0.0);
        if d0 >= target {
            return 0.0;
        }
        let sup = self.c_sup();
        let mut hi = if sup.is_finite() {
            sup
        } else {
            let mut hi = self.model.mean_service_rate(self.rate(1.0).unwrap_or(1e6)).max(1.0);
            while self.power_or_inf(hi).1 < target {
                hi *= 2.0;
            }
            hi
        };
        let mut lo = 0.0;
        for _ in 0..300 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || hi - lo <= 1e-15 * hi {
                break;
            }
            if self.power_or_inf(mid).1 < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // z = e^x quantizes C near the pole; take the closer neighbour
        let (d_lo, d_hi) = (self.power_or_inf(lo).1, self.power_or_inf(hi).1);
        if d_hi.is_finite() && (d_hi - target).abs() < (target - d_lo).abs() {
            hi
        } else {
            lo
        }
    }
}

pub(crate) fn power_of_capacity_with(
    c: f64,
    theta: f64,
    gain: f64,
    noise_w: f64,
    subband_hz: f64,
    model: &LinkModel,
) -> Result<(f64, f64)> {
    if !(c >= 0.0) {
        return Err(Error::Domain(format!("capacity must be non-negative, got {c}")));
    }
    let params = &model.params;
    let scale = theta * US;
    let f = big_f(c * scale, &model.pgfs.t3, params)?;
    let t_f = params.t_f();
    let k = std::f64::consts::LN_2 / (subband_hz * scale * t_f);
    let g = f.v * k;
    let a = noise_w / gain;
    let p = a * g.exp_m1();
    let dp = a * g.exp() * f.d * scale * k;
    Ok((p, dp))
}

/// `P(C) = (sigma^2/G)(exp(F(C theta) K ln2 / (B theta T_f)) - 1)` and its
/// derivative.
pub fn power_of_capacity(
    c: f64,
    theta: f64,
    gain: f64,
    params: &SystemParams,
    t3: &GenFun,
) -> Result<(f64, f64)> {
    if !(theta > 0.0) {
        return Err(Error::Domain(format!("QoS exponent must be positive, got {theta}")));
    }
    let scale = theta * US;
    let f = big_f(c.max(0.0) * scale, t3, params)?;
    if !(c >= 0.0) {
        return Err(Error::Domain(format!("capacity must be non-negative, got {c}")));
    }
    let k = std::f64::consts::LN_2 / (params.subband_hz() * scale * params.t_f());
    let a = params.noise_w() / gain;
    let g = f.v * k;
    Ok((a * g.exp_m1(), a * g.exp() * f.d * scale * k))
}

/// The users of the tagged station at a common QoS exponent.
#[derive(Debug, Clone)]
pub struct Problem {
    pub users: Vec<UserLink>,
    pub p_tot: f64,
    pub theta: f64,
}

impl Problem {
    pub fn new(channels: &ChannelSet, theta: f64, params: &SystemParams, cp: &ContentionPoint) -> Result<Self> {
        let gains = channels.tagged_gains();
        let mut users = Vec::with_capacity(gains.len());
        let mut cache: Vec<(f64, LinkModel)> = Vec::new();
        for (k, &g) in gains.iter().enumerate() {
            let per = params.per_of(k);
            let model = match cache.iter().find(|(e, _)| *e == per) {
                Some((_, m)) => m.clone(),
                None => {
                    let m = LinkModel::new(params, cp, per)?;
                    cache.push((per, m.clone()));
                    m
                }
            };
            users.push(UserLink::new(model, g, channels.noise_w, theta)?);
        }
        Ok(Self {
            users,
            p_tot: params.p_tot_w,
            theta,
        })
    }

    /// Capacities for given powers, through the two-state solver.
    pub fn evaluate(&self, powers: &[f64]) -> Result<PowerAllocation> {
        let mut capacities = Vec::with_capacity(powers.len());
        let mut rates = Vec::with_capacity(powers.len());
        for (u, &p) in self.users.iter().zip(powers) {
            let r = u.rate(p)?;
            rates.push(r);
            capacities.push(u.model.ec_two_state(self.theta, r)?.ec);
        }
        let objective = capacities.iter().sum();
        Ok(PowerAllocation {
            powers: powers.to_vec(),
            capacities,
            rates,
            mu: 0.0,
            omega: None,
            objective,
            duality_gap: 0.0,
            kkt_residual: 0.0,
            iterations: 0,
            converged: true,
            omega_history: Vec::new(),
        })
    }

    fn responses(&self, weight: f64) -> (Vec<f64>, f64) {
        let caps: Vec<f64> = self.users.iter().map(|u| u.best_response(weight)).collect();
        let total = self
            .users
            .iter()
            .zip(&caps)
            .map(|(u, &c)| u.power_or_inf(c).0)
            .sum();
        (caps, total)
    }

    /// Multiplier `mu >= 0` such that responses at weight `mu + extra`
    /// spend the whole budget, or zero if the budget is slack at `mu = 0`.
    fn solve_multiplier(&self, extra: f64, update: DualUpdate) -> (f64, Vec<f64>, usize, bool) {
        if extra > 0.0 {
            let (caps, total) = self.responses(extra);
            if total <= self.p_tot {
                return (0.0, caps, 1, true);
            }
        }
        match update {
            DualUpdate::Bisection => self.bisect_multiplier(extra),
            DualUpdate::Subgradient { step0, max_iter } => self.subgradient_multiplier(extra, step0, max_iter),
        }
    }

    fn bisect_multiplier(&self, extra: f64) -> (f64, Vec<f64>, usize, bool) {
        let spend = |ln_mu: f64| self.responses(ln_mu.exp() + extra);
        // Bracket in ln(mu): total power falls as mu grows.
        let mut hi = 0.0f64;
        let mut it = 0;
        while spend(hi).1 > self.p_tot {
            hi += 4.0;
            it += 1;
        }
        let mut lo = hi - 4.0;
        while spend(lo).1 <= self.p_tot {
            lo -= 4.0;
            it += 1;
            if lo < -700.0 {
                break;
            }
        }
        let mut converged = false;
        for _ in 0..MAX_OUTER {
            it += 1;
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                converged = true;
                break;
            }
            let (_, total) = spend(mid);
            if total > self.p_tot {
                lo = mid;
            } else {
                hi = mid;
                if self.p_tot - total <= 1e-3 * POWER_TOL * self.p_tot {
                    converged = true;
                    break;
                }
            }
        }
        let (caps, _) = spend(hi);
        (hi.exp(), caps, it, converged)
    }

    fn subgradient_multiplier(&self, extra: f64, step0: f64, max_iter: usize) -> (f64, Vec<f64>, usize, bool) {
        // start where the strongest user becomes active
        let mut ln_mu = self
            .users
            .iter()
            .map(|u| -u.power_or_inf(0.0).1.ln())
            .fold(f64::NEG_INFINITY, f64::max)
            + 1.0;
        let mut best: Option<(f64, Vec<f64>, f64)> = None;
        for t in 1..=max_iter {
            let (caps, total) = self.responses(ln_mu.exp() + extra);
            let violation = (total - self.p_tot) / self.p_tot;
            if total <= self.p_tot {
                let sum: f64 = caps.iter().sum();
                if best.as_ref().map_or(true, |b| sum > b.2) {
                    best = Some((ln_mu.exp(), caps.clone(), sum));
                }
                if -violation <= POWER_TOL {
                    return (ln_mu.exp(), caps, t, true);
                }
            }
            ln_mu += step0 / (t as f64).sqrt() * violation.clamp(-1.0, 1.0);
        }
        match best {
            Some((mu, caps, _)) => (mu, caps, max_iter, false),
            None => {
                let (caps, _) = self.responses(ln_mu.exp() + extra);
                (ln_mu.exp(), caps, max_iter, false)
            }
        }
    }

    fn finish(&self, caps: Vec<f64>, weight: f64, mu: f64) -> Result<PowerAllocation> {
        let mut powers = Vec::with_capacity(caps.len());
        let mut rates = Vec::with_capacity(caps.len());
        let mut kkt: f64 = 0.0;
        for (u, &c) in self.users.iter().zip(&caps) {
            let (p, dp) = u.power(c)?;
            powers.push(p);
            rates.push(u.rate(p)?);
            if c > 0.0 {
                kkt = kkt.max((weight * dp - 1.0).abs());
            }
        }
        let objective: f64 = caps.iter().sum();
        let total: f64 = powers.iter().sum();
        let gap = if objective > 0.0 {
            mu * (self.p_tot - total).abs() / objective
        } else {
            0.0
        };
        Ok(PowerAllocation {
            powers,
            capacities: caps,
            rates,
            mu,
            omega: None,
            objective,
            duality_gap: gap,
            kkt_residual: kkt,
            iterations: 0,
            converged: true,
            omega_history: Vec::new(),
        })
    }

    /// Maximizes the sum of effective capacities under the power budget.
    pub fn maximize_ec(&self, update: DualUpdate) -> Result<PowerAllocation> {
        let (mu, caps, iterations, converged) = self.solve_multiplier(0.0, update);
        let mut alloc = self.finish(caps, mu, mu)?;
        alloc.iterations = iterations;
        alloc.converged = converged && alloc.duality_gap <= GAP_TOL;
        Ok(alloc)
    }

    pub fn water_filling(&self) -> Result<PowerAllocation> {
        let floors: Vec<f64> = self.users.iter().map(|u| u.noise_w / u.gain).collect();
        self.evaluate(&water_fill(&floors, self.p_tot))
    }

    pub fn channel_inversion(&self) -> Result<PowerAllocation> {
        let gains: Vec<f64> = self.users.iter().map(|u| u.gain).collect();
        self.evaluate(&invert(&gains, self.p_tot))
    }

    /// Maximizes sum capacity over average consumed power by Dinkelbach's
    /// method; each parametric subproblem is solved by dual decomposition.
    pub fn maximize_eee(&self, energy: &PowerModel, update: DualUpdate) -> Result<PowerAllocation> {
        let xi_eff = energy.xi_eff;
        let mut omega = 0.0;
        let mut history = Vec::new();
        let mut iterations = 0;
        let mut last: Option<PowerAllocation> = None;
        let mut converged = false;
        for _ in 0..MAX_DINKELBACH {
            let extra = omega / xi_eff;
            let (mu, caps, it, _) = self.solve_multiplier(extra, update);
            iterations += it;
            let mut alloc = self.finish(caps, mu + extra, mu)?;
            let sum_c = alloc.total_capacity();
            let avg_p = energy.average_power(alloc.total_power());
            let h = -sum_c + omega * avg_p;
            let next = sum_c / avg_p;
            let done = h.abs() <= DINKELBACH_TOL * sum_c.max(f64::MIN_POSITIVE);
            if !done && next < omega {
                return Err(Error::Domain(format!(
                    "Dinkelbach iterate decreased from {omega} to {next}"
                )));
            }
            alloc.omega = Some(next);
            alloc.objective = next;
            history.push(next);
            omega = next;
            last = Some(alloc);
            if done {
                converged = true;
                break;
            }
        }
        let mut alloc = last.expect("at least one Dinkelbach iteration");
        alloc.converged = converged;
        alloc.iterations = iterations;
        alloc.omega_history = history;
        Ok(alloc)
    }

    /// `H(omega)` of the parametric subproblem, evaluated at its optimum.
    pub fn dinkelbach_h(&self, omega: f64, energy: &PowerModel) -> Result<f64> {
        let extra = omega / energy.xi_eff;
        let (mu, caps, _, _) = self.solve_multiplier(extra, DualUpdate::Bisection);
        let alloc = self.finish(caps, mu + extra, mu)?;
        Ok(-alloc.total_capacity() + omega * energy.average_power(alloc.total_power()))
    }

    /// Effective energy efficiency of an allocation.
    pub fn eee(&self, alloc: &PowerAllocation, energy: &PowerModel) -> f64 {
        alloc.total_capacity() / energy.average_power(alloc.total_power())
    }
}

/// Classical water-filling `P_k = (nu - floor_k)^+` with `sum P_k = budget`.
pub fn water_fill(floors: &[f64], budget: f64) -> Vec<f64> {
    let mut sorted: Vec<f64> = floors.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut level = sorted[0] + budget;
    let mut acc = 0.0;
    for (i, &f) in sorted.iter().enumerate() {
        acc += f;
        let candidate = (budget + acc) / (i + 1) as f64;
        if i + 1 < sorted.len() && candidate > sorted[i + 1] {
            continue;
        }
        level = candidate;
        break;
    }
    floors.iter().map(|f| (level - f).max(0.0)).collect()
}

/// Power inversely proportional to channel gain.
pub fn invert(gains: &[f64], budget: f64) -> Vec<f64> {
    let s: f64 = gains.iter().map(|g| 1.0 / g).sum();
    gains.iter().map(|g| budget / g / s).collect()
}

pub fn maximize_ec(
    channels: &ChannelSet,
    theta: f64,
    params: &SystemParams,
    cp: &ContentionPoint,
) -> Result<PowerAllocation> {
    Problem::new(channels, theta, params, cp)?.maximize_ec(DualUpdate::Bisection)
}

pub fn water_filling(channels: &ChannelSet, theta: f64, params: &SystemParams, cp: &ContentionPoint) -> Result<PowerAllocation> {
    Problem::new(channels, theta, params, cp)?.water_filling()
}

pub fn channel_inversion(
    channels: &ChannelSet,
    theta: f64,
    params: &SystemParams,
    cp: &ContentionPoint,
) -> Result<PowerAllocation> {
    Problem::new(channels, theta, params, cp)?.channel_inversion()
}

pub fn maximize_eee(
    channels: &ChannelSet,
    theta: f64,
    params: &SystemParams,
    cp: &ContentionPoint,
) -> Result<PowerAllocation> {
    let energy = PowerModel::new(params, cp)?;
    Problem::new(channels, theta, params, cp)?.maximize_eee(&energy, DualUpdate::Bisection)
}

/// Average-power model of the tagged station, affine in the total
/// transmit power: `P_avg = P'_static + sum P_k / xi'`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerModel {
    pub pi1: f64,
    pub pi2: f64,
    /// Mean number of collisions between consecutive successes.
    pub i_bar: f64,
    /// Mean number of slots between consecutive successes.
    pub big_i_bar: f64,
    pub mean_slot_us: f64,
    pub p_static_eff: f64,
    pub xi_eff: f64,
}

/// `p / (1-p)^2`.
pub fn mean_collisions(p: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Divergent(p));
    }
    Ok(p / ((1.0 - p) * (1.0 - p)))
}

/// Mean slots per success: attempt `i` happens with probability `p^i`
/// and uses the window of stage `i mod K_L`. Reduces to
/// `(W_L+1) / (2(1-p))` for a fixed window.
pub fn mean_slots_between_successes(p: f64, params: &SystemParams) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Divergent(p));
    }
    match params.mode {
        CwMode::Fcw => Ok((f64::from(params.w_laa) + 1.0) / (2.0 * (1.0 - p))),
        CwMode::Vcw => {
            let k = params.k_retry_laa;
            let mut sum = 0.0;
            let mut pj = 1.0;
            for j in 0..k {
                sum += pj * (f64::from(params.laa_window(j)) + 1.0) / 2.0;
                pj *= p;
            }
            Ok(sum / (1.0 - pj))
        }
    }
}

impl PowerModel {
    pub fn new(params: &SystemParams, cp: &ContentionPoint) -> Result<Self> {
        let p = cp.p_laa;
        let i_bar = mean_collisions(p)?;
        let big_i_bar = mean_slots_between_successes(p, params)?;
        let mean_slot_us = slot_distribution(cp, params)?.mean();
        let (pi1, pi2) = (0.5, 0.5);
        let t_c = params.t_c();
        let t_f = params.t_f();
        let den = pi1 * (big_i_bar * mean_slot_us + i_bar * t_c) + pi2 * t_f;
        let p_static_eff = params.p_static_w + pi1 * params.p_idle_w * big_i_bar * mean_slot_us / den;
        let xi_eff = params.xi * den / (pi1 * i_bar * t_c + pi2 * t_f);
        Ok(Self {
            pi1,
            pi2,
            i_bar,
            big_i_bar,
            mean_slot_us,
            p_static_eff,
            xi_eff,
        })
    }

    pub fn average_power(&self, total_tx_w: f64) -> f64 {
        self.p_static_eff + total_tx_w / self.xi_eff
    }
}

/// Average consumed power of an allocation and the model behind it.
pub fn average_power(alloc: &PowerAllocation, params: &SystemParams, cp: &ContentionPoint) -> Result<(f64, PowerModel)> {
    let model = PowerModel::new(params, cp)?;
    Ok((model.average_power(alloc.total_power()), model))
}
