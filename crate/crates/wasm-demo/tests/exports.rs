use laa_ec_demo::{allocation_value, contention_value, ec_curve_value};

#[test]
fn curve_is_non_increasing_and_below_mean() {
    let v = ec_curve_value(5, 5, 0.01, 1e7, 40).unwrap();
    assert_eq!(v["theta"].as_array().unwrap().len(), 40);
    for mode in ["FCW", "VCW"] {
        let ec: Vec<f64> = v["ec"][mode].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
        let mean = v["mean_service"][mode].as_f64().unwrap();
        assert!(ec[0] <= mean && ec[0] > 0.99 * mean);
        assert!(ec.windows(2).all(|w| w[1] <= w[0]));
    }
}

#[test]
fn slot_pmf_sums_to_one() {
    for vcw in [false, true] {
        let v = contention_value(3, 7, vcw).unwrap();
        let total: f64 = v["slots"].as_array().unwrap().iter().map(|a| a["prob"].as_f64().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(v["point"]["residual"].as_f64().unwrap() <= 1e-12);
    }
}

#[test]
fn allocation_ranks_proposed_first() {
    let v = allocation_value(20, 1e-3, 2018).unwrap();
    let ec = |k: &str| v[k]["sum_ec"].as_f64().unwrap();
    assert!(ec("proposed") >= ec("water_filling") && ec("proposed") >= ec("channel_inversion"));
    let eee = |k: &str| v[k]["eee"].as_f64().unwrap();
    assert!(eee("proposed_eee") >= eee("water_filling") && eee("proposed_eee") >= eee("channel_inversion"));
}

#[test]
fn bad_input_is_an_error() {
    assert!(contention_value(0, 1, false).is_err());
    assert!(ec_curve_value(1, 1, 1.5, 1e7, 10).is_err());
}
