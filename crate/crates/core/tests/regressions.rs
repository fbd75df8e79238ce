mod common;

use common::*;
use laa_ec::capacity::theta_of_delay;
use laa_ec::optimizer::{DualUpdate, PowerModel, Problem};
use laa_ec::simulator::{estimate_ec_pooled, run};
use laa_ec::{contention, CwMode, LinkModel, SimConfig, SystemParams};

const RATE: f64 = 1e7;

fn close(got: f64, want: f64, rel: f64) -> bool {
    (got - want).abs() <= rel * want.abs()
}

/// Lone station, no losses: the root of
/// `eta_0(z^sigma) exp((x - theta R) T_f) = 1`, from a 50-digit bisection.
#[test]
fn lone_station_root_matches_scalar_oracle() {
    let oracle = [(1e-6, 9302240.055909086), (1e-4, 9293790.1420511227), (1e-2, 8890712.7770044505)];
    for mode in [CwMode::Fcw, CwMode::Vcw] {
        let p = SystemParams { mode, n_laa: 1, m_wifi: 0, per: 0.0, ..Default::default() };
        let m = LinkModel::new(&p, &contention::solve(&p).unwrap(), 0.0).unwrap();
        for (theta, want) in oracle {
            let four = m.ec_verified(theta, RATE).unwrap();
            assert!(close(four.ec, want, 1e-10), "{mode} {theta}: {}", four.ec);
            assert!(four.spectral_defect.unwrap() <= 1e-6);
        }
    }
}

#[test]
fn defaults_pinned_by_four_state_solver() {
    let p = SystemParams::default();
    let m = LinkModel::new(&p, &contention::solve(&p).unwrap(), p.per).unwrap();
    let two = m.ec_two_state(1e-5, RATE).unwrap().ec;
    let four = m.ec_four_state(1e-5, RATE).unwrap().ec;
    assert!(close(two, four, 1e-8));
    assert!(close(two, 1187145.7626995093, 1e-8));
}

/// Illinois regula falsi on `ln theta`, independent of the library's
/// bracketing bisection.
fn illinois(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let (mut fa, mut fb) = (f(a), f(b));
    assert!(fa * fb < 0.0);
    let mut side = 0;
    for _ in 0..200 {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = f(c);
        if fc.abs() < 1e-14 || (b - a).abs() < 1e-14 {
            return c;
        }
        if fc * fb < 0.0 {
            a = b;
            fa = fb;
            side = 0;
        } else {
            if side == 1 {
                fa *= 0.5;
            }
            side = 1;
        }
        b = c;
        fb = fc;
    }
    b
}

#[test]
fn delay_mapping_matches_root_find_oracle() {
    let p = SystemParams::default();
    let m = LinkModel::new(&p, &contention::solve(&p).unwrap(), p.per).unwrap();
    let arrival = 0.5 * m.mean_service_rate(RATE);
    let (d_max, p_th) = (0.05, 0.1);
    let got = theta_of_delay(d_max, p_th, arrival, &m, RATE).unwrap();
    assert!(got.feasible);
    let target = (0.5f64 / p_th).ln();
    let g = |lt: f64| {
        let theta = lt.exp();
        theta * m.ec_two_state(theta, RATE).unwrap().ec * d_max - target
    };
    let oracle = illinois(g, (1e-7f64).ln(), (1e-3f64).ln()).exp();
    assert!(close(got.theta, oracle, 1e-9), "{} vs {oracle}", got.theta);
    assert!(close(got.theta, 2.8779349675463806e-5, 1e-9));
}

#[test]
fn allocation_regression() {
    let p = allocation_params();
    let cp = contention::solve(&p).unwrap();
    let problem = Problem::new(&allocation_channels(), 1e-3, &p, &cp).unwrap();
    let opt = problem.maximize_ec(DualUpdate::Bisection).unwrap();
    assert!(close(opt.objective, 1343626.327488335, 1e-6));
    assert!(close(problem.water_filling().unwrap().objective, 841095.2737969708, 1e-9));
    assert!(close(problem.channel_inversion().unwrap().objective, 1268753.585784175, 1e-9));
    let energy = PowerModel::new(&p, &cp).unwrap();
    let eee = problem.maximize_eee(&energy, DualUpdate::Bisection).unwrap();
    assert!(close(eee.objective, 2858868.9121340667, 1e-6));
    assert!(close(eee.total_power(), 0.030186665200464376, 1e-4));
}

#[test]
fn short_simulation_tracks_analysis() {
    for mode in [CwMode::Fcw, CwMode::Vcw] {
        let p = SystemParams { mode, ..Default::default() };
        let m = LinkModel::new(&p, &contention::solve(&p).unwrap(), p.per).unwrap();
        let traces: Vec<_> = (0..4).map(|s| run(&p, &SimConfig::new(RATE, 60.0, s)).unwrap()).collect();
        for theta in [1e-6, 1e-5] {
            let est = estimate_ec_pooled(&traces, theta).unwrap();
            let want = m.ec_two_state(theta, RATE).unwrap().ec;
            assert!(close(est.ec, want, 0.1), "{mode} {theta}: {} vs {want}", est.ec);
        }
    }
}
