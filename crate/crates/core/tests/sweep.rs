use qkdsim::config::SystemConfig;
use qkdsim::montecarlo::SimOptions;
use qkdsim::sweep::{
    default_eta_grid, default_lengths, run_bias_sweep, run_distance_sweep, Engine, SweepPoint,
};

#[test]
fn raw_rate_falls_strictly_with_length() {
    let cfg = SystemConfig::default();
    let t = run_distance_sweep(
        &cfg,
        &default_lengths(),
        Engine::Analytic,
        &SimOptions::default(),
    )
    .unwrap();
    for w in t.rows.windows(2) {
        assert!(w[1].rate.raw_rate_hz < w[0].rate.raw_rate_hz);
    }
    let dense: Vec<SweepPoint> = (0..=40)
        .map(|i| SweepPoint {
            length_km: 2.5 * i as f64,
            compensated: false,
        })
        .collect();
    let t = run_distance_sweep(&cfg, &dense, Engine::Analytic, &SimOptions::default()).unwrap();
    for w in t.rows.windows(2) {
        assert!(
            w[1].rate.raw_rate_hz < w[0].rate.raw_rate_hz,
            "at {} km",
            w[1].rate.length_km
        );
    }
}

#[test]
fn compensator_helps_where_it_is_deployed() {
    let cfg = SystemConfig::default();
    let consts = cfg.protocol_constants();
    for p in default_lengths().iter().filter(|p| p.compensated) {
        let rate = |comp: bool| {
            let ev = cfg
                .link_at(p.length_km, comp, cfg.receiver.eta_bob)
                .evaluate();
            qkdsim::keyrate::secure_rate(ev.raw_rate_hz, ev.qber(), &consts)
        };
        assert!(rate(true) > rate(false), "{} km", p.length_km);
    }
}

#[test]
fn bias_sweep_table_is_deterministic_and_ordered() {
    let cfg = SystemConfig::default();
    let point = SweepPoint {
        length_km: 5.6,
        compensated: false,
    };
    let grid = default_eta_grid();
    let a = run_bias_sweep(&cfg, point, &grid, Engine::Analytic, &SimOptions::default()).unwrap();
    let b = run_bias_sweep(&cfg, point, &grid, Engine::Analytic, &SimOptions::default()).unwrap();
    assert_eq!(a.to_csv_string(), b.to_csv_string());
    for w in a.rows.windows(2) {
        assert!(w[1].rate.eta_bob > w[0].rate.eta_bob);
        assert!(w[1].rate.raw_rate_hz > w[0].rate.raw_rate_hz);
    }
    let mut reversed = grid.clone();
    reversed.reverse();
    assert!(run_bias_sweep(
        &cfg,
        point,
        &reversed,
        Engine::Analytic,
        &SimOptions::default()
    )
    .is_err());
}
