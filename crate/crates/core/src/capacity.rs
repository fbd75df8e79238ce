//! Effective-capacity solvers.
//!
//! Times inside the transforms are microseconds, so a QoS exponent `theta`
//! (1/bit) and a rate `C` (bit/s) enter as `x = theta * C * 1e-6`.

use serde::{Deserialize, Serialize};

use crate::contention::ContentionPoint;
use crate::error::{Error, Result};
use crate::genfun::{big_f, IntervalPgfs};
use crate::scenario::SystemParams;

/// Seconds per microsecond.
pub const US: f64 = 1e-6;

/// Relative stopping tolerance of the two-state bisection on `F`.
pub const F_TOL: f64 = 1e-10;
pub const SPECTRAL_TOL: f64 = 1e-6;
const MAX_BISECT: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    FourState,
    TwoState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcSolution {
    pub theta: f64,
    pub rate: f64,
    pub ec: f64,
    pub method: Method,
    /// Final bisection interval in bit/s.
    pub bracket: (f64, f64),
    pub spectral_defect: Option<f64>,
    /// The target exceeded the range of `F` reachable before the OFF
    /// transform diverges; `ec` is clamped to that supremum.
    pub domain_limited: bool,
    pub iterations: usize,
}

/// Analytical model of one user of the tagged base station.
#[derive(Debug, Clone)]
pub struct LinkModel {
    pub params: SystemParams,
    pub cp: ContentionPoint,
    pub per: f64,
    pub pgfs: IntervalPgfs,
}

fn check_theta(theta: f64) -> Result<()> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::Domain(format!("QoS exponent must be positive, got {theta}")));
    }
    Ok(())
}

fn check_rate(rate: f64) -> Result<()> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::Domain(format!("rate must be non-negative, got {rate}")));
    }
    Ok(())
}

impl LinkModel {
    pub fn new(params: &SystemParams, cp: &ContentionPoint, per: f64) -> Result<Self> {
        Ok(Self {
            params: params.clone(),
            cp: *cp,
            per,
            pgfs: IntervalPgfs::new(params, cp, per)?,
        })
    }

    /// Model for user `user`, taking its error rate from `params`.
    pub fn for_user(params: &SystemParams, cp: &ContentionPoint, user: usize) -> Result<Self> {
        Self::new(params, cp, params.per_of(user))
    }

    fn t_f(&self) -> f64 {
        self.params.t_f()
    }

    fn drop_prob(&self) -> f64 {
        self.cp.p_laa.powi(self.params.k_retry_laa as i32)
    }

    /// `F(x)`, or `+inf` past the divergence point.
    pub fn f_value(&self, x: f64) -> f64 {
        match big_f(x, &self.pgfs.t3, &self.params) {
            Ok(d) if d.v.is_finite() => d.v,
            _ => f64::INFINITY,
        }
    }

    /// Mean OFF interval between successes, microseconds.
    pub fn mean_off_us(&self) -> f64 {
        self.pgfs.t3.mean().expect("t3 is finite at one")
    }

    /// Long-run delivered rate `R T_f / (T_f + E[t3])`.
    pub fn mean_service_rate(&self, rate: f64) -> f64 {
        rate * self.t_f() / (self.t_f() + self.mean_off_us())
    }

    /// Two-state route: `C = F^{-1}(R theta T_f) / theta`.
    pub fn ec_two_state(&self, theta: f64, rate: f64) -> Result<EcSolution> {
        check_theta(theta)?;
        check_rate(rate)?;
        let scale = theta * US;
        let y = rate * scale;
        let target = y * self.t_f();
        let mut sol = EcSolution {
            theta,
            rate,
            ec: 0.0,
            method: Method::TwoState,
            bracket: (0.0, 0.0),
            spectral_defect: None,
            domain_limited: false,
            iterations: 0,
        };
        if rate == 0.0 {
            return Ok(sol);
        }
        let x_max = self.pgfs.x_max();
        let mut hi = y.min(x_max);
        if hi == x_max && self.f_value(hi) < target {
            sol.domain_limited = true;
            sol.ec = hi / scale;
            sol.bracket = (sol.ec, sol.ec);
            return Ok(sol);
        }
        let mut lo = 0.0;
        let tol = F_TOL * target;
        for it in 1..=MAX_BISECT {
            sol.iterations = it;
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let f = self.f_value(mid);
            if f <= target {
                lo = mid;
            } else {
                hi = mid;
            }
            if (f - target).abs() <= tol {
                lo = mid;
                hi = mid;
                break;
            }
        }
        sol.ec = 0.5 * (lo + hi) / scale;
        sol.bracket = (lo / scale, hi / scale);
        Ok(sol)
    }

    /// Left side of the four-state condition minus one, at `x = theta C`.
    pub fn four_state_residual(&self, x: f64, y: f64) -> f64 {
        let z = x.exp();
        let t_f = self.t_f();
        let drop = self.drop_prob();
        let dual = crate::genfun::Dual::var(z);
        let t1 = self.pgfs.t1.eval_dual(dual).v;
        let on = ((x - y) * t_f).exp() * (1.0 - self.per) + (x * t_f).exp() * self.per;
        let mut lhs = (1.0 - drop) * t1 * on;
        if drop > 0.0 {
            lhs += drop * self.pgfs.t2.eval_dual(dual).v;
        }
        if lhs.is_nan() {
            f64::INFINITY
        } else {
            lhs - 1.0
        }
    }

    /// Four-state route: bisection on `C` in `[0, R]` of the implicit
    /// condition, which is increasing in `C`.
    pub fn ec_four_state(&self, theta: f64, rate: f64) -> Result<EcSolution> {
        check_theta(theta)?;
        check_rate(rate)?;
        let scale = theta * US;
        let y = rate * scale;
        let mut sol = EcSolution {
            theta,
            rate,
            ec: 0.0,
            method: Method::FourState,
            bracket: (0.0, 0.0),
            spectral_defect: None,
            domain_limited: false,
            iterations: 0,
        };
        if rate == 0.0 {
            return Ok(sol);
        }
        let (mut lo, mut hi) = (0.0, y);
        for it in 1..=MAX_BISECT {
            sol.iterations = it;
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi || hi - lo <= 1e-15 * hi {
                break;
            }
            if self.four_state_residual(mid, y) <= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        sol.ec = 0.5 * (lo + hi) / scale;
        sol.bracket = (lo / scale, hi / scale);
        Ok(sol)
    }

    /// The 4x4 matrix `H(-theta, -theta C)` with states ordered
    /// OFF2, OFF3, OFF1, ON.
    pub fn transition_mgf_matrix(&self, theta: f64, rate: f64, ec: f64) -> [[f64; 4]; 4] {
        let x = theta * ec * US;
        let y = theta * rate * US;
        let t_f = self.t_f();
        let drop = self.drop_prob();
        let z = crate::genfun::Dual::var(x.exp());
        let m1 = self.pgfs.t1.eval_dual(z).v;
        let m2 = if drop > 0.0 { self.pgfs.t2.eval_dual(z).v } else { 0.0 };
        let off1 = (x * t_f).exp();
        let on = ((x - y) * t_f).exp();
        let back = [(1.0 - drop) * m1, drop * m2, 0.0, 0.0];
        [
            [0.0, 0.0, self.per * off1, (1.0 - self.per) * on],
            back,
            back,
            back,
        ]
    }

    /// `|rho(H) - 1|` at a solution.
    pub fn spectral_check(&self, sol: &EcSolution) -> Result<f64> {
        let h = self.transition_mgf_matrix(sol.theta, sol.rate, sol.ec);
        Ok((spectral_radius(&h)? - 1.0).abs())
    }

    /// Four-state solution with its spectral defect attached.
    pub fn ec_verified(&self, theta: f64, rate: f64) -> Result<EcSolution> {
        let mut sol = self.ec_four_state(theta, rate)?;
        sol.spectral_defect = Some(self.spectral_check(&sol)?);
        Ok(sol)
    }
}

/// Perron root of a non-negative matrix by power iteration on `H + I`,
/// which is primitive whenever `H` is irreducible.
pub fn spectral_radius<const N: usize>(h: &[[f64; N]; N]) -> Result<f64> {
    const CAP: usize = 10_000;
    let mut v = [1.0; N];
    let mut lambda = 0.0;
    for _ in 0..CAP {
        let mut w = [0.0; N];
        for (i, row) in h.iter().enumerate() {
            w[i] = v[i] + row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        }
        let norm = w.iter().cloned().fold(0.0, f64::max);
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::PowerIteration(CAP));
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
        if (norm - lambda).abs() <= 1e-15 * norm {
            return Ok(norm - 1.0);
        }
        lambda = norm;
    }
    Err(Error::PowerIteration(CAP))
}

pub fn ec_two_state(theta: f64, rate: f64, params: &SystemParams, cp: &ContentionPoint) -> Result<EcSolution> {
    LinkModel::new(params, cp, params.per)?.ec_two_state(theta, rate)
}

pub fn ec_four_state(theta: f64, rate: f64, params: &SystemParams, cp: &ContentionPoint) -> Result<EcSolution> {
    LinkModel::new(params, cp, params.per)?.ec_four_state(theta, rate)
}

pub fn spectral_check(sol: &EcSolution, params: &SystemParams, cp: &ContentionPoint) -> Result<f64> {
    LinkModel::new(params, cp, params.per)?.spectral_check(sol)
}

pub fn mean_service_rate(params: &SystemParams, cp: &ContentionPoint, rate: f64) -> Result<f64> {
    Ok(LinkModel::new(params, cp, params.per)?.mean_service_rate(rate))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayTheta {
    pub theta: f64,
    /// `false` when the tail target is met without any QoS constraint
    /// (`p_th >= eta`), in which case `theta = 0`.
    pub feasible: bool,
    /// Non-empty buffer probability used in the mapping.
    pub eta: f64,
}

/// QoS exponent meeting `Pr{delay > d_max} = p_th` under the approximation
/// `p_th = eta exp(-theta C(theta) d_max)`.
pub fn theta_of_delay(
    d_max: f64,
    p_th: f64,
    arrival: f64,
    model: &LinkModel,
    rate: f64,
) -> Result<DelayTheta> {
    if !(d_max > 0.0) {
        return Err(Error::Domain(format!("delay bound must be positive, got {d_max}")));
    }
    if !(p_th > 0.0 && p_th < 1.0) {
        return Err(Error::Domain(format!("threshold probability {p_th} not in (0, 1)")));
    }
    let eta = arrival / model.mean_service_rate(rate);
    if p_th >= eta {
        return Ok(DelayTheta { theta: 0.0, feasible: false, eta });
    }
    let target = (eta / p_th).ln();
    if d_max.is_infinite() {
        return Ok(DelayTheta { theta: 0.0, feasible: true, eta });
    }
    let exponent = |theta: f64| -> Result<f64> {
        let sol = model.ec_two_state(theta, rate)?;
        Ok(theta * sol.ec * d_max)
    };
    let (mut lo, mut hi) = (-40.0f64, 1.0f64);
    while exponent(10f64.powf(hi))? < target {
        hi += 1.0;
        if hi > 10.0 {
            return Err(Error::Domain(format!(
                "delay target unreachable: exponent saturates below {target}"
            )));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if hi - lo < 1e-13 {
            break;
        }
        if exponent(10f64.powf(mid))? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(DelayTheta {
        theta: 10f64.powf(0.5 * (lo + hi)),
        feasible: true,
        eta,
    })
}
