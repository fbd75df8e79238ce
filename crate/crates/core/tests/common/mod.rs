#![allow(dead_code)]

use laa_ec::contention::slot_distribution;
use laa_ec::scenario::generate_scenario;
use laa_ec::{ChannelSet, ContentionPoint, CwMode, SlotKind, SystemParams};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// (mode, N, M, v_L, v_W, p_L, p_W) from a nested-bisection solver of the
/// fixed-point equations, written independently in Python.
pub const FIXED_POINT_ORACLE: [(CwMode, u32, u32, f64, f64, f64, f64); 18] = [
    (CwMode::Fcw, 1, 1, 0.11764705882352941, 0.0527469153755052, 0.05274691537550524, 0.11764705882352944),
    (CwMode::Fcw, 1, 5, 0.11764705882352941, 0.04107510329848938, 0.18918276409156054, 0.2539280444993157),
    (CwMode::Fcw, 1, 10, 0.11764705882352941, 0.03256390324395701, 0.28183724779571084, 0.34499754683989703),
    (CwMode::Fcw, 5, 1, 0.11764705882352941, 0.02265866473983693, 0.407599225373909, 0.465175014103533),
    (CwMode::Fcw, 5, 5, 0.11764705882352941, 0.019889157801966935, 0.45179206411749706, 0.5064712440917232),
    (CwMode::Fcw, 5, 10, 0.11764705882352941, 0.017656087977641594, 0.4927700014075769, 0.5444000053000022),
    (CwMode::Fcw, 10, 1, 0.11764705882352941, 0.010790800083783384, 0.6793219855792143, 0.7139622344608438),
    (CwMode::Fcw, 10, 5, 0.11764705882352941, 0.010464562471362748, 0.6924343724666859, 0.7257486434881188),
    (CwMode::Fcw, 10, 10, 0.11764705882352941, 0.010116505855908675, 0.7071657533698597, 0.738976192329873),
    (CwMode::Vcw, 1, 1, 0.11140290094570025, 0.05321630112830445, 0.053216301128304444, 0.11140290094570027),
    (CwMode::Vcw, 1, 5, 0.09055678391324234, 0.042712127928081385, 0.19608009064786036, 0.23625951067887585),
    (CwMode::Vcw, 1, 10, 0.07288383583551528, 0.034496345404929254, 0.29605420348025424, 0.3240424067345301),
    (CwMode::Vcw, 5, 1, 0.07393620196840799, 0.03497451317255566, 0.29025488627826657, 0.31890995147878565),
    (CwMode::Vcw, 5, 5, 0.06429539359271423, 0.03061657471626548, 0.3438048458411451, 0.3666027162896218),
    (CwMode::Vcw, 5, 10, 0.05572286105981668, 0.026750883678582037, 0.3937690808144575, 0.41181554824392097),
    (CwMode::Vcw, 10, 1, 0.05361328211671821, 0.025795792054724383, 0.40670904151990994, 0.42364990998135865),
    (CwMode::Vcw, 10, 5, 0.049048846077404305, 0.023719700552223555, 0.43597738695575217, 0.450610695497747),
    (CwMode::Vcw, 10, 10, 0.0445574666839208, 0.021660332834046534, 0.4669870477644934, 0.4794617222774945),
];

pub fn params(mode: CwMode, n: u32, m: u32) -> SystemParams {
    SystemParams {
        mode,
        n_laa: n,
        m_wifi: m,
        ..Default::default()
    }
}

/// Draws OFF intervals of the tagged station directly from the slot model:
/// uniform backoff counts over i.i.d. slot durations, collisions with
/// probability `p_L`, channel losses with probability `per`.
pub struct OffSampler {
    slots: Vec<(f64, f64)>,
    windows: Vec<u32>,
    p: f64,
    per: f64,
    t_c: f64,
    t_f: f64,
    rng: ChaCha8Rng,
}

impl OffSampler {
    pub fn new(params: &SystemParams, cp: &ContentionPoint, per: f64, seed: u64) -> Self {
        let sd = slot_distribution(cp, params).unwrap();
        let mut acc = 0.0;
        let slots = SlotKind::ALL
            .iter()
            .map(|&k| {
                acc += sd.prob(k);
                (k.duration_us(params), acc)
            })
            .collect();
        let windows = (0..params.k_retry_laa)
            .map(|j| match params.mode {
                CwMode::Fcw => params.w_laa,
                CwMode::Vcw => params.w_laa << j,
            })
            .collect();
        Self {
            slots,
            windows,
            p: cp.p_laa,
            per,
            t_c: f64::from(params.t_c_us),
            t_f: f64::from(params.t_f_us),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn slot(&mut self) -> f64 {
        let u: f64 = self.rng.gen();
        self.slots.iter().find(|s| u < s.1).unwrap_or(self.slots.last().unwrap()).0
    }

    /// One packet: time until its collision-free transmission starts, or
    /// until it is dropped. Returns `(time, delivered)`.
    pub fn packet(&mut self) -> (f64, bool) {
        let mut t = 0.0;
        for j in 0..self.windows.len() {
            let b = self.rng.gen_range(0..self.windows[j]);
            for _ in 0..b {
                t += self.slot();
            }
            if self.rng.gen::<f64>() < self.p {
                t += self.t_c;
            } else {
                return (t, true);
            }
        }
        (t, false)
    }

    /// Time between the end of one delivery and the start of the next.
    pub fn off(&mut self) -> f64 {
        let mut t = 0.0;
        loop {
            let (dt, ok) = self.packet();
            t += dt;
            if !ok {
                continue;
            }
            if self.rng.gen::<f64>() < self.per {
                t += self.t_f;
                continue;
            }
            return t;
        }
    }
}

/// Mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Renewal Monte Carlo of one LAA station: each attempt collides with
/// probability `p`; a collision-free attempt is lost with probability `per`
/// but still ends the cycle. Returns per-cycle (collisions, slots) samples.
pub fn renewal_cycles(p: f64, per: f64, params: &SystemParams, cycles: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coll = Vec::with_capacity(cycles);
    let mut slots = Vec::with_capacity(cycles);
    let mut stage = 0u32;
    for _ in 0..cycles {
        let mut c = 0u64;
        let mut s = 0u64;
        loop {
            s += u64::from(rng.gen_range(0..params.laa_window(stage))) + 1;
            if rng.gen::<f64>() < p {
                c += 1;
                stage += 1;
                if stage >= params.k_retry_laa {
                    stage = 0;
                }
            } else {
                let _lost = rng.gen::<f64>() < per;
                stage = 0;
                break;
            }
        }
        coll.push(c as f64);
        slots.push(s as f64);
    }
    (coll, slots)
}

/// K=20 users around one station, M=4 WiFi nodes, 20 MHz, VCW.
pub fn allocation_params() -> SystemParams {
    SystemParams {
        n_laa: 1,
        m_wifi: 4,
        k_users: 20,
        bandwidth_hz: 20e6,
        mode: CwMode::Vcw,
        ..Default::default()
    }
}

pub const ALLOCATION_SEED: u64 = 2018;

pub fn allocation_channels() -> ChannelSet {
    generate_scenario(&allocation_params(), ALLOCATION_SEED).unwrap()
}
