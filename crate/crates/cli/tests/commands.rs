use std::path::Path;
use std::process::Command as Process;

use laa_ec_cli::{cmd_analyze, cmd_optimize_ec, cmd_optimize_eee, cmd_validate, ExperimentSpec, Table};

fn spec(json: &str) -> ExperimentSpec {
    ExperimentSpec::from_json_str(json).unwrap()
}

fn shipped(name: &str) -> ExperimentSpec {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("specs").join(name);
    ExperimentSpec::load(&path).unwrap()
}

fn col<'a>(t: &'a Table, row: &'a [String], name: &str) -> &'a str {
    &row[t.column(name).unwrap()]
}

#[test]
fn lone_station_solvers_agree() {
    let s = spec(
        r#"{"command":"analyze","params":{"n_laa":1,"m_wifi":0,"per":0},
            "grid":{"theta":[1e-6,1e-4,1e-2],"mode":["fcw","vcw"]},"rate_bps":1e7}"#,
    );
    let t = cmd_analyze(&s).unwrap().table;
    assert_eq!(t.rows.len(), 6);
    for r in &t.rows {
        assert_eq!(col(&t, r, "error"), "");
        let rel: f64 = col(&t, r, "rel_diff").parse().unwrap();
        assert!(rel <= 1e-8, "{r:?}");
    }
}

#[test]
fn theta_sweep_columns_are_non_increasing() {
    let t = cmd_analyze(&shipped("theta_sweep.json")).unwrap().table;
    for mode in ["FCW", "VCW"] {
        for c in ["c_four_state", "c_two_state"] {
            let i = t.column(c).unwrap();
            let xs: Vec<f64> = t
                .rows
                .iter()
                .filter(|r| col(&t, r, "mode") == mode)
                .map(|r| r[i].parse().unwrap())
                .collect();
            assert_eq!(xs.len(), 11);
            assert!(xs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "{mode} {c}: {xs:?}");
        }
    }
}

/// FCW minus VCW at theta = 1e-6 over N (rows) by M (columns), 1..=10.
const SIGN_SURFACE: [&str; 10] = [
    "++++++++++",
    "++++++++++",
    "++++++++++",
    "++++++++++",
    "-+++++++++",
    "--++++++++",
    "---+++++++",
    "-----+++++",
    "-------+++",
    "----------",
];

#[test]
fn joint_surface_sign_pattern() {
    let t = cmd_analyze(&shipped("mode_surface.json")).unwrap().table;
    let c = t.floats("c_two_state");
    let (fcw, vcw) = c.split_at(100);
    for n in 0..10 {
        let got: String = (0..10)
            .map(|m| if fcw[n * 10 + m] > vcw[n * 10 + m] { '+' } else { '-' })
            .collect();
        assert_eq!(got, SIGN_SURFACE[n], "N={}", n + 1);
    }
}

#[test]
fn rows_carry_parameters_and_seed() {
    let t = cmd_optimize_ec(&shipped("allocation_ec.json")).unwrap().table;
    for name in ["n_laa", "m_wifi", "mode", "per", "k_users", "bandwidth_hz", "p_tot_w", "seed", "theta"] {
        let i = t.column(name).unwrap();
        assert!(t.rows.iter().all(|r| !r[i].is_empty()), "{name}");
    }
    assert!(t.rows.iter().all(|r| col(&t, r, "seed") == "2018"));
}

#[test]
fn proposed_allocation_dominates_baselines() {
    for (file, metric) in [("allocation_ec.json", "sum_ec"), ("allocation_eee.json", "eee")] {
        let s = shipped(file);
        let t = if file == "allocation_ec.json" { cmd_optimize_ec(&s) } else { cmd_optimize_eee(&s) }
            .unwrap()
            .table;
        let v = t.floats(metric);
        assert_eq!(v.len(), 3 * s.grid.theta.len());
        for (i, chunk) in v.chunks(3).enumerate() {
            assert_eq!(col(&t, &t.rows[3 * i], "method"), "proposed");
            assert_eq!(col(&t, &t.rows[3 * i], "converged"), "true");
            assert!(chunk[0] >= chunk[1] && chunk[0] >= chunk[2], "{file} row {i}: {chunk:?}");
        }
    }
}

#[test]
fn validate_on_defaults_passes() {
    let s = spec(
        r#"{"command":"validate","grid":{"theta":[1e-6,1e-5],"mode":["fcw","vcw"]},
            "replications":10,"duration_s":100,"tolerance":0.1}"#,
    );
    let r = cmd_validate(&s).unwrap();
    assert_eq!(r.table.rows.len(), 4);
    assert_eq!(r.passed, Some(true), "{:?}", r.table.rows);
}

#[test]
fn invalid_specs_are_rejected() {
    for bad in [
        r#"{"command":"analyze","grid":{}}"#,
        r#"{"command":"analyze","grid":{"theta":[1e-5]},"replications":0}"#,
        r#"{"command":"sweep","grid":{"theta":[1e-5]}}"#,
        r#"{"command":"analyze","grid":{"theta":[-1]}}"#,
        r#"{"command":"plot","grid":{"theta":[1e-5]}}"#,
        r#"{"command":"analyze","grid":{"theta":[1e-5],"bogus":[1]}}"#,
    ] {
        assert!(ExperimentSpec::from_json_str(bad).is_err(), "{bad}");
    }
    let s = spec(r#"{"command":"analyze","params":{"n_laa":0},"grid":{"theta":[1e-5]}}"#);
    assert!(s.points().is_err());
}

fn laa_ec(spec: &Path, out: &Path, extra: &[&str]) -> (i32, Vec<u8>) {
    let status = Process::new(env!("CARGO_BIN_EXE_laa-ec"))
        .arg("--spec")
        .arg(spec)
        .arg("--out")
        .arg(out)
        .args(extra)
        .status()
        .unwrap();
    let csv = std::fs::read_dir(out)
        .ok()
        .and_then(|mut d| d.find(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "csv")))
        .map(|e| std::fs::read(e.unwrap().path()).unwrap())
        .unwrap_or_default();
    (status.code().unwrap(), csv)
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.json");
    std::fs::write(
        &path,
        r#"{"command":"simulate","grid":{"theta":[1e-6,1e-5],"mode":["fcw","vcw"]},
            "replications":2,"duration_s":50,"rate_bps":1e7,"seed":5}"#,
    )
    .unwrap();
    let (a, first) = laa_ec(&path, &dir.path().join("a"), &["--workers", "1"]);
    let (b, second) = laa_ec(&path, &dir.path().join("b"), &["--workers", "4"]);
    assert_eq!((a, b), (0, 0));
    assert!(!first.is_empty());
    assert_eq!(first, second);
    let (c, third) = laa_ec(&path, &dir.path().join("c"), &["--seed", "6"]);
    assert_eq!(c, 0);
    assert_ne!(first, third);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"command":"analyze","grid":{"theta":[]}}"#).unwrap();
    assert_eq!(laa_ec(&bad, &dir.path().join("x"), &[]).0, 3);
    assert_eq!(laa_ec(&dir.path().join("missing.json"), &dir.path().join("y"), &[]).0, 3);

    let val = dir.path().join("val.json");
    std::fs::write(
        &val,
        r#"{"command":"validate","grid":{"theta":[1e-6]},"duration_s":50,"rate_bps":1e7}"#,
    )
    .unwrap();
    assert_eq!(laa_ec(&val, &dir.path().join("z"), &[]).0, 0);
    let (code, csv) = laa_ec(&val, &dir.path().join("w"), &["--tolerance", "1e-12"]);
    assert_eq!(code, 2);
    assert!(String::from_utf8(csv).unwrap().contains(",false"));
}
