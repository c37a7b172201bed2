use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qkdsim::config::{parse_config, SystemConfig, DEFAULT_CONFIG};

fn qkdsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qkdsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn distance_sweep_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let o = qkdsim(&["sweep-distance", "--out", path(p)]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert!(text.starts_with(
        "length_km,raw_hz,qber,e_opt,e_afterpulse,e_dark,e_interclock,secure_hz,compensated\n"
    ));
    assert_eq!(text.lines().count(), 6);
}

#[test]
fn monte_carlo_sweep_is_seeded() {
    let args = [
        "--engine",
        "mc",
        "--pulses",
        "200000",
        "sweep-distance",
        "--lengths",
        "5.6,65.5",
    ];
    let run = |seed: &str| {
        let mut v = vec!["--seed", seed];
        v.extend(args);
        let o = qkdsim(&v);
        assert!(o.status.success(), "{}", stderr(&o));
        o.stdout
    };
    assert_eq!(run("7"), run("7"));
    assert_ne!(run("7"), run("8"));
}

#[test]
fn compensated_lengths_take_a_suffix() {
    let o = qkdsim(&["sweep-distance", "--lengths", "65.5,75.8c"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout.clone()).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert!(rows[0].ends_with(",false"));
    assert!(rows[1].ends_with(",true"));

    let bad = qkdsim(&["sweep-distance", "--lengths", "5.6,abc"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn invalid_config_exits_with_code_2_and_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(
        &cfg,
        DEFAULT_CONFIG.replace("source.mu = 0.2", "source.mu = -1.0"),
    )
    .unwrap();
    let o = qkdsim(&["--config", path(&cfg), "sweep-distance"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("source.mu"), "{}", stderr(&o));

    fs::write(&cfg, format!("{DEFAULT_CONFIG}\nsource.colour = 3\n")).unwrap();
    let o = qkdsim(&["--config", path(&cfg), "sweep-distance"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));
}

#[test]
fn io_failures_exit_with_code_4() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.cfg");
    let o = qkdsim(&["--config", path(&missing), "sweep-distance"]);
    assert_eq!(o.status.code(), Some(4));

    let unwritable = dir.path().join("no/such/dir/out.csv");
    let o = qkdsim(&["sweep-distance", "--out", path(&unwritable)]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn bias_sweep_reports_the_optimum() {
    let o = qkdsim(&["sweep-bias"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout.clone()).unwrap();
    assert!(text.starts_with("eta_bob,"));
    assert_eq!(text.lines().count(), 22);
    assert!(
        stderr(&o).contains("optimum eta_bob=6e-2"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn simulate_writes_events_and_sifted_key() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("events.csv");
    let key = dir.path().join("key.csv");
    let o = qkdsim(&[
        "--pulses",
        "200000",
        "simulate",
        "--format",
        "csv",
        "--out",
        path(&events),
        "--key",
        path(&key),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout.clone()).unwrap();
    let tags: usize = stdout
        .lines()
        .find_map(|l| l.split_whitespace().find_map(|f| f.strip_prefix("tags=")))
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(
        fs::read_to_string(&events).unwrap().lines().count(),
        tags + 1
    );
    let key = fs::read_to_string(&key).unwrap();
    assert!(key.contains("# n_sifted="));
    assert!(key.contains("# qber="));
}

#[test]
fn histogram_summary_goes_to_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("hist.csv");
    let o = qkdsim(&["--pulses", "1000000", "histogram", "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let err = stderr(&o);
    for key in ["n_tags=", "fwhm_ps=", "zero_span_ps=", "peak_spacing_ps="] {
        assert!(err.contains(key), "{err}");
    }
    assert!(fs::read_to_string(&out).unwrap().lines().count() > 900);
}

#[test]
fn calibrate_writes_a_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fit.cfg");
    let o = qkdsim(&["calibrate", "--out", path(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let fitted = parse_config(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(fitted.source, SystemConfig::default().source);
    assert!(stderr(&o).contains("cost="));
}
