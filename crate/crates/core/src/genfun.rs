//! Generalized probability generating functions.
//!
//! Exponents are real-valued durations in microseconds, so a transform is
//! stored as an evaluable closure rather than a coefficient array. Each
//! evaluation carries a value and derivative pair through the composition,
//! giving exact first derivatives without differencing.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use crate::contention::{ContentionPoint, SlotDistribution};
use crate::error::{Error, Result};
use crate::scenario::SystemParams;

/// A value together with its derivative with respect to one variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: f64,
}

impl Dual {
    pub const fn new(v: f64, d: f64) -> Self {
        Self { v, d }
    }

    /// The independent variable at `x`.
    pub const fn var(x: f64) -> Self {
        Self { v: x, d: 1.0 }
    }

    pub const fn constant(c: f64) -> Self {
        Self { v: c, d: 0.0 }
    }

    /// `self^a` for a real exponent.
    pub fn powf(self, a: f64) -> Self {
        if a == 0.0 {
            return Self::constant(1.0);
        }
        let v = self.v.powf(a);
        let d = if self.v == 0.0 {
            if a == 1.0 {
                self.d
            } else {
                0.0
            }
        } else {
            a * v / self.v * self.d
        };
        Self { v, d }
    }

    pub fn powi(self, n: i32) -> Self {
        self.powf(f64::from(n))
    }

    pub fn exp(self) -> Self {
        let v = self.v.exp();
        Self { v, d: v * self.d }
    }

    pub fn ln(self) -> Self {
        Self {
            v: self.v.ln(),
            d: self.d / self.v,
        }
    }

    fn saturate(self) -> Self {
        if self.v == f64::INFINITY {
            Self::new(f64::INFINITY, f64::INFINITY)
        } else {
            self
        }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.v + o.v, self.d + o.d)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.v - o.v, self.d - o.d)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.v * o.v, self.d * o.v + self.v * o.d)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let v = self.v / o.v;
        Dual::new(v, (self.d - v * o.d) / o.v)
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.v, -self.d)
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    fn add(self, c: f64) -> Dual {
        Dual::new(self.v + c, self.d)
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    fn sub(self, c: f64) -> Dual {
        Dual::new(self.v - c, self.d)
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    fn mul(self, c: f64) -> Dual {
        Dual::new(self.v * c, self.d * c)
    }
}

impl Mul<Dual> for f64 {
    type Output = Dual;
    fn mul(self, x: Dual) -> Dual {
        x * self
    }
}

impl Sub<Dual> for f64 {
    type Output = Dual;
    fn sub(self, x: Dual) -> Dual {
        Dual::new(self - x.v, -x.d)
    }
}

type EvalFn = dyn Fn(Dual) -> Dual + Send + Sync;

/// An evaluable generating function `z -> E[z^X]` with its derivative.
///
/// Defined for real `z > 0` below `domain_sup`; evaluations at or beyond
/// the supremum are rejected.
#[derive(Clone)]
pub struct GenFun {
    tag: String,
    f: Arc<EvalFn>,
    domain_sup: f64,
    denominator: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl fmt::Debug for GenFun {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GenFun")
            .field("tag", &self.tag)
            .field("domain_sup", &self.domain_sup)
            .finish()
    }
}

impl GenFun {
    pub fn new(tag: impl Into<String>, f: impl Fn(Dual) -> Dual + Send + Sync + 'static) -> Self {
        Self {
            tag: tag.into(),
            f: Arc::new(f),
            domain_sup: f64::INFINITY,
            denominator: None,
        }
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// Supremum of the arguments where the transform converges.
    pub fn domain_sup(&self) -> f64 {
        self.domain_sup
    }

    /// Evaluates along a dual argument, without domain checks.
    pub fn eval_dual(&self, z: Dual) -> Dual {
        (self.f)(z).saturate()
    }

    /// Value and derivative at `z`.
    pub fn eval(&self, z: f64) -> Result<Dual> {
        if !(z > 0.0) {
            return Err(Error::Domain(format!("{} evaluated at z = {z}", self.tag)));
        }
        if z >= self.domain_sup {
            let denominator = self.denominator.as_ref().map_or(f64::NAN, |den| den(z));
            return Err(Error::OutOfDomain { z, denominator });
        }
        Ok(self.eval_dual(Dual::var(z)))
    }

    pub fn value(&self, z: f64) -> Result<f64> {
        self.eval(z).map(|d| d.v)
    }

    pub fn derivative(&self, z: f64) -> Result<f64> {
        self.eval(z).map(|d| d.d)
    }

    /// Mean of the underlying variable, the derivative at one.
    pub fn mean(&self) -> Result<f64> {
        self.derivative(1.0)
    }

    /// `self(inner(z))`.
    pub fn compose(&self, inner: &GenFun) -> GenFun {
        let outer = self.f.clone();
        let inner_f = inner.f.clone();
        GenFun {
            tag: format!("{}∘{}", self.tag, inner.tag),
            f: Arc::new(move |z| outer(inner_f(z).saturate())),
            domain_sup: inner.domain_sup,
            denominator: None,
        }
    }
}

// Below this value of |y - 1| * W the uniform-window transform uses its
// Taylor series about one instead of the closed form.
const SERIES_RADIUS: f64 = 1e-2;
const SERIES_TERMS: usize = 9;

/// Transform of a backoff uniform on `{0, .., window-1}` slots.
pub fn uniform_window(window: u32) -> GenFun {
    let w = f64::from(window);
    // (1/W) sum_k (1+h)^k = sum_m C(W, m+1)/W h^m
    let mut coeffs = [0.0; SERIES_TERMS];
    let mut c = 1.0;
    for (m, slot) in coeffs.iter_mut().enumerate() {
        *slot = c;
        let m = m as f64;
        c *= (w - m - 1.0) / (m + 2.0);
    }
    GenFun::new(format!("eta[W={window}]"), move |y: Dual| {
        if y.v == f64::INFINITY {
            return Dual::new(f64::INFINITY, f64::INFINITY);
        }
        let h = y - 1.0;
        if (h.v * w).abs() < SERIES_RADIUS {
            let mut acc = Dual::constant(coeffs[SERIES_TERMS - 1]);
            for &a in coeffs[..SERIES_TERMS - 1].iter().rev() {
                acc = acc * h + a;
            }
            acc
        } else {
            let out = (y.powf(w) - 1.0) / (h * w);
            if out.v.is_finite() {
                out
            } else {
                Dual::new(f64::INFINITY, f64::INFINITY)
            }
        }
    })
}

/// Backoff transform of LAA retransmission stage `j`.
pub fn eta_hat(j: u32, params: &SystemParams) -> Result<GenFun> {
    if j >= params.k_retry_laa {
        return Err(Error::Domain(format!(
            "retry index {j} outside 0..{}",
            params.k_retry_laa
        )));
    }
    let mut g = uniform_window(params.laa_window(j));
    g.tag = format!("eta_{j}");
    Ok(g)
}

/// `sum_i p_i z^{d_i}` over the slot-duration atoms.
pub fn slot_pgf(sd: &SlotDistribution) -> GenFun {
    let atoms: Vec<(f64, f64)> = sd
        .atoms()
        .iter()
        .filter(|a| a.prob > 0.0)
        .map(|a| (a.duration_us, a.prob))
        .collect();
    GenFun::new("tau", move |z: Dual| {
        atoms
            .iter()
            .fold(Dual::constant(0.0), |acc, &(d, p)| acc + z.powf(d) * p)
    })
}

fn backoff_chain(params: &SystemParams) -> Result<Vec<Arc<EvalFn>>> {
    (0..params.k_retry_laa)
        .map(|j| Ok(eta_hat(j, params)?.f))
        .collect()
}

/// Backoff-and-collision interval of a packet that is eventually sent
/// collision-free, conditioned on that event.
pub fn t1_hat(params: &SystemParams, cp: &ContentionPoint, slot: &GenFun) -> Result<GenFun> {
    let p = cp.p_laa;
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Domain(format!("collision probability {p} not in [0, 1)")));
    }
    let k = params.k_retry_laa as i32;
    let t_c = params.t_c();
    let stage_fs = backoff_chain(params)?;
    let norm = 1.0 - p.powi(k);
    let weights: Vec<f64> = (0..k).map(|i| (1.0 - p) * p.powi(i) / norm).collect();
    let slot_f = slot.f.clone();
    Ok(GenFun::new("t1", move |z: Dual| {
        let tau = slot_f(z).saturate();
        let mut prod = Dual::constant(1.0);
        let mut acc = Dual::constant(0.0);
        for (i, w) in weights.iter().enumerate() {
            prod = prod * stage_fs[i](tau).saturate();
            if *w == 0.0 {
                break;
            }
            acc = acc + z.powf(i as f64 * t_c) * prod * *w;
        }
        acc
    }))
}

/// Backoff-and-collision interval of a packet dropped after `K_L` collisions.
pub fn t2_hat(params: &SystemParams, slot: &GenFun) -> Result<GenFun> {
    let k = params.k_retry_laa;
    let t_c = params.t_c();
    let stage_fs = backoff_chain(params)?;
    let slot_f = slot.f.clone();
    Ok(GenFun::new("t2", move |z: Dual| {
        let tau = slot_f(z).saturate();
        stage_fs
            .iter()
            .fold(z.powf(f64::from(k) * t_c), |acc, s| acc * s(tau).saturate())
    }))
}

/// Total OFF interval between two consecutive successful deliveries.
///
/// The construction locates the divergence point of the underlying
/// geometric series; evaluations at or past it fail with
/// [`Error::OutOfDomain`].
pub fn t3_hat(params: &SystemParams, cp: &ContentionPoint, slot: &GenFun, per: f64) -> Result<GenFun> {
    if !(0.0..1.0).contains(&per) {
        return Err(Error::Domain(format!("packet error rate {per} not in [0, 1)")));
    }
    let t1 = t1_hat(params, cp, slot)?;
    let t2 = t2_hat(params, slot)?;
    let drop = cp.p_laa.powi(params.k_retry_laa as i32);
    let t_f = params.t_f();
    let f1 = t1.f.clone();
    let f2 = t2.f.clone();
    let den = move |z: Dual| -> Dual {
        let mut den = Dual::constant(1.0);
        if drop > 0.0 {
            den = den - f2(z).saturate() * drop;
        }
        if per > 0.0 {
            den = den - f1(z).saturate() * z.powf(t_f) * (per * (1.0 - drop));
        }
        den
    };
    let den = Arc::new(den);
    let sup = divergence_point(&*den);
    let f1 = t1.f.clone();
    let den_eval = den.clone();
    let mut g = GenFun::new("t3", move |z: Dual| {
        let num = f1(z).saturate() * ((1.0 - per) * (1.0 - drop));
        let d = den_eval(z);
        if !(d.v > 0.0) {
            return Dual::new(f64::INFINITY, f64::INFINITY);
        }
        num / d
    });
    g.domain_sup = sup;
    g.denominator = Some(Arc::new(move |z| den(Dual::constant(z)).v));
    Ok(g)
}

/// Largest `z` where the decreasing denominator is still positive,
/// located by bisection on `ln z`.
fn divergence_point(den: &(dyn Fn(Dual) -> Dual + Send + Sync)) -> f64 {
    let positive = |x: f64| den(Dual::constant(x.exp())).v > 0.0;
    let mut hi = 1e-9;
    loop {
        if !positive(hi) {
            break;
        }
        hi *= 2.0;
        if hi > 1e6 {
            return f64::INFINITY;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if positive(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi.exp()
}

/// `F(x) = ln t3(e^x) + x T_f` and its derivative.
pub fn big_f(x: f64, t3: &GenFun, params: &SystemParams) -> Result<Dual> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("F evaluated at negative x = {x}")));
    }
    let z = x.exp();
    let t = t3.eval(z)?;
    if !t.v.is_finite() {
        return Err(Error::OutOfDomain {
            z,
            denominator: f64::NAN,
        });
    }
    let t_f = params.t_f();
    Ok(Dual::new(t.v.ln() + x * t_f, t.d * z / t.v + t_f))
}

/// Transform bundle of the tagged station for one user's error rate.
#[derive(Debug, Clone)]
pub struct IntervalPgfs {
    pub slot: GenFun,
    pub t1: GenFun,
    pub t2: GenFun,
    pub t3: GenFun,
}

impl IntervalPgfs {
    pub fn new(params: &SystemParams, cp: &ContentionPoint, per: f64) -> Result<Self> {
        let sd = crate::contention::slot_distribution(cp, params)?;
        let slot = slot_pgf(&sd);
        Ok(Self {
            t1: t1_hat(params, cp, &slot)?,
            t2: t2_hat(params, &slot)?,
            t3: t3_hat(params, cp, &slot, per)?,
            slot,
        })
    }

    /// `ln` of the t3 divergence point; `F` is finite on `[0, x_max)`.
    pub fn x_max(&self) -> f64 {
        self.t3.domain_sup().ln()
    }
}
