use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use robustfolio::analytic_oracles::{merton_strategy, partial_info_strategy};
use robustfolio::pde_engine::solve_f;
use robustfolio::strategy::robust_feedback;
use robustfolio::{DriftMode, MarketParams, Prior, ValueSource};
use robustfolio_cli::commands::{
    import_surface, run_simulate, AdmissibilityRow, surface_from_rows, surface_rows, sweep, RegionRow, SimulationRow, StrategySurfaceRow,
    SurfaceMeta, SweepParam,
};
use robustfolio_cli::output::read_rows;
use robustfolio_cli::prices::{estimate_params, PriceSeries};
use robustfolio_cli::{OutputFormat, RunConfig};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robustfolio")).args(args).output().unwrap()
}

fn config_in(dir: &Path) -> RunConfig {
    RunConfig {
        output_dir: dir.to_path_buf(),
        ..Default::default()
    }
}

fn gbm_csv(mu: f64, sigma: f64, n: usize, seed: u64) -> String {
    let dt = 1.0 / 252.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut day = chrono::NaiveDate::from_ymd_opt(1700, 1, 1).unwrap();
    let mut log_p = 100f64.ln();
    let mut out = String::from("date,close\n");
    for _ in 0..n {
        out.push_str(&format!("{day},{}\n", log_p.exp()));
        let z: f64 = StandardNormal.sample(&mut rng);
        log_p += (mu - 0.5 * sigma * sigma) * dt + sigma * dt.sqrt() * z;
        day = day.succ_opt().unwrap();
    }
    out
}

#[test]
fn calibration_recovers_gbm_parameters() {
    let n = 100_000;
    let series = PriceSeries::from_reader(gbm_csv(0.10, 0.20, n, 42).as_bytes(), 1.0 / 252.0).unwrap();
    let est = estimate_params(&series).unwrap();
    let window = (n - 1) as f64 / 252.0;
    assert!((est.sigma / 0.20 - 1.0).abs() < 0.005, "{est:?}");
    assert!((est.y0 - 0.10).abs() < 3.0 * est.sigma / window.sqrt(), "{est:?}");
    assert!((est.sigma0_sq - est.sigma * est.sigma / window).abs() < 1e-15);

    let again = estimate_params(&PriceSeries::from_reader(gbm_csv(0.10, 0.20, n, 42).as_bytes(), 1.0 / 252.0).unwrap());
    assert_eq!(again.unwrap(), est);
}

#[test]
fn calibration_rejects_bad_series() {
    let dup = "date,close\n2020-01-02,5\n2020-01-02,6\n";
    assert!(PriceSeries::from_reader(dup.as_bytes(), 1.0 / 252.0).is_err());

    let mut day = chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    let mut constant = String::from("date,close\n");
    for _ in 0..40 {
        constant.push_str(&format!("{day},5\n"));
        day = day.succ_opt().unwrap();
    }
    let s = PriceSeries::from_reader(constant.as_bytes(), 1.0 / 252.0).unwrap();
    assert!(estimate_params(&s).is_err());

    let short = gbm_csv(0.1, 0.2, 29, 1);
    let s = PriceSeries::from_reader(short.as_bytes(), 1.0 / 252.0).unwrap();
    assert!(estimate_params(&s).unwrap_err().to_string().contains("at least 30"));

    let mut bad = gbm_csv(0.1, 0.2, 40, 1).lines().map(String::from).collect::<Vec<_>>();
    bad[6] = format!("{},-3", bad[6].split(',').next().unwrap());
    let err = PriceSeries::from_reader(bad.join("\n").as_bytes(), 1.0 / 252.0).unwrap_err();
    assert!(err.to_string().contains("line 7"), "{err}");

    let header = "day,price\n2020-01-01,1\n";
    assert!(PriceSeries::from_reader(header.as_bytes(), 1.0 / 252.0).is_err());
}

#[test]
fn estimate_subcommand_writes_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let prices = dir.path().join("p.csv");
    fs::write(&prices, gbm_csv(0.1, 0.2, 2000, 3)).unwrap();
    let out_dir = dir.path().join("out");
    let o = cli(&["--output-dir", out_dir.to_str().unwrap(), "estimate", "--prices", prices.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out_dir.join("estimate.csv")).unwrap();
    assert!(text.starts_with("n_prices,delta_years,sigma,y0,sigma0_sq\n2000,"));
}

#[test]
fn invalid_configs_fail_with_one_named_line() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (r#"{"market": {"r": 0.018, "sigma": -0.2, "T": 0.5, "k": 1, "a": 1.96}}"#, "market"),
        (r#"{"prior": {"y0": 0.174, "sigma0_sq": -1}}"#, "prior"),
        (r#"{"grid": {"y_min": -1, "y_max": 1, "n_y": 5, "n_t": 10, "theta": 0.5}}"#, "grid"),
        (r#"{"grid": {"y_min": -0.1, "y_max": 0.1, "n_y": 51, "n_t": 10, "theta": 0.5}}"#, "grid"),
        (r#"{"grid": {"y_min": -1, "y_max": 1, "n_y": 51, "n_t": 10, "theta": 2}}"#, "grid"),
        (r#"{"quadrature": {"n_time_nodes": 10}}"#, "quadrature"),
        (r#"{"scenario": {"n_paths": 0, "n_steps": 10, "seed": 1, "drift_mode": {"kind": "prior-draw"}, "initial_wealth": 1}}"#, "scenario"),
        (r#"{"unknown_section": 1}"#, "unknown"),
        (r#"{"market": "#, "config"),
    ];
    for (k, (json, needle)) in cases.iter().enumerate() {
        let path = dir.path().join(format!("c{k}.json"));
        fs::write(&path, json).unwrap();
        let out_dir = dir.path().join(format!("o{k}"));
        let o = cli(&["--config", path.to_str().unwrap(), "--output-dir", out_dir.to_str().unwrap(), "solve"]);
        let err = String::from_utf8_lossy(&o.stderr);
        assert_eq!(o.status.code(), Some(1), "case {k}: {err}");
        assert_eq!(err.trim_end().lines().count(), 1, "case {k}: {err}");
        assert!(err.contains(needle), "case {k}: {err}");
        assert!(!out_dir.join("surface.csv").exists());
    }
    // a file where the output directory should be
    let blocker = dir.path().join("blocker");
    fs::write(&blocker, "").unwrap();
    let o = cli(&["--output-dir", blocker.to_str().unwrap(), "check"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("output_dir"));
}

#[test]
fn flags_override_config_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    fs::write(&path, r#"{"market": {"r": 0.018, "sigma": 0.213, "T": 0.5, "k": 1, "a": 1.96}, "output_format": "json"}"#).unwrap();
    let out_dir = dir.path().join("o");
    let o = cli(&[
        "--config",
        path.to_str().unwrap(),
        "--output-dir",
        out_dir.to_str().unwrap(),
        "--a",
        "0",
        "strategy-at",
        "--t",
        "0",
        "--y",
        "0.5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(out_dir.join("strategy.json")).unwrap()).unwrap();
    let (pi, naive) = (rows[0]["pi"].as_f64().unwrap(), rows[0]["partial_info"].as_f64().unwrap());
    assert!((pi - naive).abs() < 1e-10);
}

#[test]
fn check_exit_status_reflects_witness() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(cli(&["--output-dir", d, "check"]).status.code(), Some(0));
    assert_eq!(cli(&["--output-dir", d, "--sigma0-sq", "0", "check"]).status.code(), Some(0));
    let o = cli(&["--output-dir", d, "--horizon", "50", "check"]);
    assert_eq!(o.status.code(), Some(3));
    let rows: Vec<AdmissibilityRow> = read_rows(&dir.path().join("admissibility.csv")).unwrap();
    assert!(!rows[0].valid);
}

#[test]
fn solve_exports_surface_and_regions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        grid: Some(robustfolio::GridSpec::new(-1.0, 1.0, 201, 101, 0.5).unwrap()),
        ..config_in(dir.path())
    };
    robustfolio_cli::commands::run_solve(&cfg).unwrap();
    let text = fs::read_to_string(dir.path().join("surface.csv")).unwrap();
    assert!(text.starts_with("t,y,f,f_y,pi,regime\n"));
    assert!(!text.contains('\r'));
    let rows: Vec<StrategySurfaceRow> = read_rows(&dir.path().join("surface.csv")).unwrap();
    assert_eq!(rows.len(), 201 * 101);
    for r in rows.iter().filter(|r| r.t == 0.5) {
        assert_eq!((r.f, r.f_y), (0.0, 0.0));
    }
    let regions: Vec<RegionRow> = read_rows(&dir.path().join("regions.csv")).unwrap();
    assert_eq!(regions.len(), 100);
    let first = &regions[0];
    assert!((first.band_lower + 0.168766).abs() < 1e-6 && (first.band_upper - 0.204766).abs() < 1e-6);
    assert!(first.sell_upper.unwrap() < first.band_lower && first.buy_lower.unwrap() > first.band_upper);
    let switch = first.small_trade_switch.unwrap();
    assert!(first.band_lower < switch && switch < first.band_upper);
}

#[test]
fn exported_surfaces_reimport_exactly() {
    for format in [OutputFormat::Csv, OutputFormat::Json] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            grid: Some(robustfolio::GridSpec::new(-1.0, 1.0, 61, 21, 0.5).unwrap()),
            output_format: format,
            ..config_in(dir.path())
        };
        for backend in [robustfolio_cli::commands::Backend::Fd, robustfolio_cli::commands::Backend::Quadrature] {
            let out = robustfolio_cli::commands::run_export_surface(&cfg, backend).unwrap();
            let back = import_surface(&out.files[0]).unwrap();
            let (m, p) = (cfg.market, cfg.prior);
            let direct = match backend {
                robustfolio_cli::commands::Backend::Fd => solve_f(&m, &p, &cfg.grid()).unwrap(),
                robustfolio_cli::commands::Backend::Quadrature => {
                    robustfolio::pde_engine::tabulate_quadrature(&m, &p, &cfg.grid(), &cfg.quadrature).unwrap()
                }
            };
            assert_eq!(back, direct);
        }
    }
}

#[test]
fn surface_rows_round_trip_in_memory() {
    let (m, p) = (MarketParams::reference(), Prior::reference());
    let s = solve_f(&m, &p, &robustfolio::GridSpec::new(-1.0, 1.0, 41, 11, 0.5).unwrap()).unwrap();
    let meta = SurfaceMeta {
        grid: s.grid,
        provenance: s.provenance,
        warnings: s.warnings.clone(),
    };
    let mut rows = surface_rows(&s);
    assert_eq!(surface_from_rows(&rows, &meta).unwrap(), s);
    rows.swap(3, 4);
    assert!(surface_from_rows(&rows, &meta).is_err());
}

#[test]
fn sweep_degenerate_rows_match_known_strategies() {
    let cfg = RunConfig::default();
    let ys = [-0.2, 0.018, 0.174, 0.5];
    let rows = sweep(&cfg, SweepParam::A, &[0.0, 1.96], 0.1, &ys);
    for r in rows.iter().filter(|r| r.value == 0.0) {
        assert!((r.pi.unwrap() - r.partial_info.unwrap()).abs() < 1e-10, "{r:?}");
    }
    let rows = sweep(&cfg, SweepParam::Sigma0Sq, &[0.0, -1.0], 0.1, &[cfg.prior.y0]);
    assert!((rows[0].pi.unwrap() - rows[0].merton.unwrap()).abs() < 1e-12);
    assert!(rows[1].error.as_deref().unwrap().contains("sigma0"));
    let rows = sweep(&cfg, SweepParam::Sigma, &[0.0, 0.3], 0.0, &[0.5]);
    assert!(rows[0].error.is_some() && rows[1].error.is_none());
}

/// Rebuilds one simulated path by hand: same generator, same draw order,
/// closed-form belief and Euler steps on discounted wealth.
#[test]
fn single_path_matches_hand_trace() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config_in(dir.path());
    cfg.scenario.n_paths = 1;
    cfg.scenario.n_steps = 10;
    cfg.scenario.seed = 7;
    cfg.scenario.keep_paths = true;
    cfg.grid = Some(robustfolio::GridSpec::new(-1.0, 1.0, 201, 101, 0.5).unwrap());
    run_simulate(&cfg, false).unwrap();

    let (m, p) = (cfg.market, cfg.prior);
    let surface = solve_f(&m, &p, &cfg.grid()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    rng.set_stream(0);
    let z0: f64 = StandardNormal.sample(&mut rng);
    let mu = p.y0 + p.sigma0_sq.sqrt() * z0;
    let n = 10;
    let dt = m.horizon / n as f64;
    let dw: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            dt.sqrt() * z
        })
        .collect();
    let s2 = m.sigma * m.sigma;
    let mut w = 0.0;
    let mut belief = vec![p.y0];
    for (k, step) in dw.iter().enumerate() {
        w += step;
        let t = m.horizon * (k + 1) as f64 / n as f64;
        let gamma = 1.0 / (1.0 / p.sigma0_sq + t / s2);
        belief.push(gamma * (mu * t / s2 + w / m.sigma + p.y0 / p.sigma0_sq));
    }
    let position = |label: &str, t: f64, y: f64| match label {
        "robust" => robust_feedback(&m, &p, t, y, surface.lookup(t, y).unwrap().1).unwrap().pi,
        "partial-info" => partial_info_strategy(&m, &p, t, y).unwrap(),
        _ => merton_strategy(&m, &p, t).unwrap(),
    };
    let summary: Vec<SimulationRow> = read_rows(&dir.path().join("simulation.csv")).unwrap();
    let text = fs::read_to_string(dir.path().join("terminal_wealth.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "path,robust,partial-info,merton");
    let recorded: Vec<f64> = lines[1].split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    for (col, row) in summary.iter().enumerate() {
        let mut disc = cfg.scenario.initial_wealth;
        for k in 0..n {
            let t = m.horizon * k as f64 / n as f64;
            let pi = position(&row.strategy, t, belief[k]);
            disc += (-m.r * t).exp() * pi * ((mu - m.r) * dt + m.sigma * dw[k]);
        }
        let x = (m.r * m.horizon).exp() * disc;
        assert!((x - row.mean_wealth).abs() < 1e-12, "{}: {x} vs {}", row.strategy, row.mean_wealth);
        assert_eq!(row.mean_wealth, recorded[col]);
        assert_eq!((row.min_wealth, row.max_wealth), (row.mean_wealth, row.mean_wealth));
        let u = -(-m.risk_aversion * x).exp() / m.risk_aversion;
        assert!((row.mean_utility - u).abs() < 1e-12);
        assert_eq!(row.wealth_variance, 0.0);
    }
}

#[test]
fn known_prior_simulation_rows_coincide() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config_in(dir.path());
    cfg.prior.sigma0_sq = 0.0;
    cfg.scenario.n_paths = 500;
    cfg.scenario.n_steps = 50;
    run_simulate(&cfg, false).unwrap();
    let rows: Vec<SimulationRow> = read_rows(&dir.path().join("simulation.csv")).unwrap();
    let strip = |r: &SimulationRow| SimulationRow {
        strategy: String::new(),
        ..r.clone()
    };
    assert_eq!(strip(&rows[0]), strip(&rows[2]));
}

#[test]
fn fixed_drift_flag_needs_mu() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = cli(&["--output-dir", d, "--paths", "10", "simulate", "--drift", "fixed"]);
    assert_eq!(o.status.code(), Some(1));
    let o = cli(&["--output-dir", d, "--paths", "10", "--steps", "20", "simulate", "--drift", "fixed", "--mu", "0.018"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = RunConfig::default();
    assert_eq!(cfg.scenario.drift_mode, DriftMode::PriorDraw);
}

#[test]
fn unknown_flags_are_parse_errors() {
    assert_eq!(cli(&["--bogus", "solve"]).status.code(), Some(1));
    assert_eq!(cli(&["--help"]).status.code(), Some(0));
}
