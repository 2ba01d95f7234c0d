//! One function per subcommand. Each validates the whole configuration
//! before computing anything and returns the paths it wrote.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use robustfolio::analytic_oracles::{merton_strategy, partial_info_strategy};
use robustfolio::market_model::{confidence_set, gamma_at, BeliefState};
use robustfolio::pde_engine::{solve_f, tabulate_quadrature};
use robustfolio::simulator::{paired_utility_gap, Diagnostics, simulate, simulate_with_refinement, utility_report};
use robustfolio::strategy::{
    check_admissibility, classify_regions, evaluate_admissibility, robust_at, robust_feedback, value_function,
};
use robustfolio::{
    AdmissibilityWitness, DriftMode, GridSpec, MarketParams, Prior, Provenance, QuadratureOracle,
    SolutionSurface, StrategyKind, TradeRegion, ValueSource,
};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::{read_rows, write_json, Writer};
use crate::prices::{estimate_params, Estimate, PriceSeries};

/// What a subcommand produced: files plus a short summary for stdout.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

fn writer(cfg: &RunConfig) -> Writer {
    Writer::new(&cfg.output_dir, cfg.output_format)
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).unwrap_or_default()
}

pub fn run_estimate(cfg: &RunConfig, prices: &Path, delta_years: f64) -> CliResult<(Estimate, Outcome)> {
    cfg.validate()?;
    let series = PriceSeries::from_path(prices, delta_years)?;
    let est = estimate_params(&series)?;
    let file = writer(cfg).rows("estimate", &[est])?;
    Ok((
        est,
        Outcome {
            files: vec![file],
            summary: to_json(&est),
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub t: f64,
    pub y: f64,
    pub f: f64,
    pub f_y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySurfaceRow {
    pub t: f64,
    pub y: f64,
    pub f: f64,
    pub f_y: f64,
    pub pi: f64,
    pub regime: String,
}

/// Sign-change locations of the robust position on one time row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionRow {
    pub t: f64,
    pub band_lower: f64,
    pub band_upper: f64,
    /// Upper end of the sell region.
    pub sell_upper: Option<f64>,
    /// Where the small-trade position turns from long to short.
    pub small_trade_switch: Option<f64>,
    /// Lower end of the buy region.
    pub buy_lower: Option<f64>,
    pub error: Option<String>,
}

pub fn region_row(params: &MarketParams, prior: &Prior, t: f64, source: &dyn ValueSource, range: (f64, f64)) -> RegionRow {
    let gamma = gamma_at(params, prior, t).unwrap_or(0.0);
    let band = confidence_set(params, &BeliefState { t, y: params.r, gamma });
    let mut row = RegionRow {
        t,
        band_lower: band.mu_min,
        band_upper: band.mu_max,
        sell_upper: None,
        small_trade_switch: None,
        buy_lower: None,
        error: None,
    };
    match classify_regions(params, prior, t, source, range) {
        Ok(regions) => {
            for reg in regions {
                match reg.label {
                    TradeRegion::Sell => row.sell_upper = Some(reg.upper),
                    TradeRegion::SmallTrade => row.small_trade_switch = reg.interior_crossings.first().copied(),
                    TradeRegion::Buy => row.buy_lower = Some(reg.lower),
                }
            }
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

fn log_warnings(out: &mut Outcome, warnings: &[String]) {
    for w in warnings {
        out.summary.push_str(&format!("warning: {w}\n"));
    }
}

pub fn run_solve(cfg: &RunConfig) -> CliResult<Outcome> {
    cfg.validate()?;
    let (m, p) = (cfg.market, cfg.prior);
    let grid = cfg.grid();
    let surface = solve_f(&m, &p, &grid).map_err(|e| CliError::from_core("solve", e))?;
    let mut rows = Vec::with_capacity(surface.times.len() * surface.states.len());
    for (i, &t) in surface.times.iter().enumerate() {
        for (j, &y) in surface.states.iter().enumerate() {
            let fy = surface.f_y[i][j];
            let d = robust_feedback(&m, &p, t, y, fy).map_err(|e| CliError::from_core("solve strategy", e))?;
            rows.push(StrategySurfaceRow {
                t,
                y,
                f: surface.f[i][j],
                f_y: fy,
                pi: d.pi,
                regime: d.regime.as_str().to_string(),
            });
        }
    }
    let range = (grid.y_min, grid.y_max);
    let regions: Vec<RegionRow> = surface.times[..surface.times.len() - 1]
        .par_iter()
        .map(|&t| region_row(&m, &p, t, &surface, range))
        .collect();
    let w = writer(cfg);
    let mut out = Outcome {
        files: vec![w.rows("surface", &rows)?, w.rows("regions", &regions)?],
        ..Default::default()
    };
    let first = &regions[0];
    out.summary = format!(
        "solved {} x {} grid on [{}, {}]; regions at t = 0: sell below {:?}, buy above {:?}\n",
        grid.n_y, grid.n_t, grid.y_min, grid.y_max, first.sell_upper, first.buy_lower
    );
    log_warnings(&mut out, &surface.warnings);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Finite-difference surface.
    Fd,
    /// Exact expectation by quadrature.
    Quadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyRow {
    pub t: f64,
    pub y: f64,
    pub backend: Backend,
    pub f: f64,
    pub f_y: f64,
    pub pi: f64,
    pub myopic: f64,
    pub hedging: f64,
    pub regime: String,
    pub mu_worst: f64,
    pub band_lower: f64,
    pub band_upper: f64,
    pub partial_info: f64,
    pub merton: f64,
    /// Candidate value at the configured initial wealth.
    pub value: Option<f64>,
}

pub fn run_strategy_at(cfg: &RunConfig, t: f64, y: f64, backend: Backend) -> CliResult<Outcome> {
    cfg.validate()?;
    let (m, p) = (cfg.market, cfg.prior);
    if !(0.0..=m.horizon).contains(&t) || !y.is_finite() {
        return Err(CliError::config(format!("need 0 <= t <= T and finite y, got t = {t}, y = {y}")));
    }
    let (f, fy) = match backend {
        Backend::Quadrature => QuadratureOracle::new(m, p, cfg.quadrature).value(t, y),
        Backend::Fd => {
            let s = solve_f(&m, &p, &cfg.grid_covering(&[y])).map_err(|e| CliError::from_core("solve", e))?;
            s.lookup(t, y)
        }
    }
    .map_err(|e| CliError::from_core("value lookup", e))?;
    let stage = |e| CliError::from_core("strategy", e);
    let d = robust_feedback(&m, &p, t, y, fy).map_err(stage)?;
    let gamma = gamma_at(&m, &p, t).map_err(stage)?;
    let band = confidence_set(&m, &BeliefState { t, y, gamma });
    let row = StrategyRow {
        t,
        y,
        backend,
        f,
        f_y: fy,
        pi: d.pi,
        myopic: d.myopic,
        hedging: d.hedging,
        regime: d.regime.as_str().to_string(),
        mu_worst: d.mu_worst,
        band_lower: band.mu_min,
        band_upper: band.mu_max,
        partial_info: partial_info_strategy(&m, &p, t, y).map_err(stage)?,
        merton: merton_strategy(&m, &p, t).map_err(stage)?,
        value: value_function(&m, t, cfg.scenario.initial_wealth, f).ok(),
    };
    Ok(Outcome {
        files: vec![writer(cfg).rows("strategy", std::slice::from_ref(&row))?],
        summary: to_json(&row),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum SweepParam {
    #[serde(rename = "a")]
    A,
    #[serde(rename = "sigma0_sq")]
    #[value(name = "sigma0_sq", alias = "sigma0-sq")]
    Sigma0Sq,
    #[serde(rename = "sigma")]
    Sigma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub parameter: SweepParam,
    pub value: f64,
    pub t: f64,
    pub y: f64,
    pub pi: Option<f64>,
    pub myopic: Option<f64>,
    pub hedging: Option<f64>,
    pub regime: Option<String>,
    pub partial_info: Option<f64>,
    pub merton: Option<f64>,
    pub error: Option<String>,
}

fn sweep_rows(cfg: &RunConfig, param: SweepParam, value: f64, t: f64, ys: &[f64]) -> Vec<SweepRow> {
    let (mut m, mut p) = (cfg.market, cfg.prior);
    match param {
        SweepParam::A => m.confidence = value,
        SweepParam::Sigma0Sq => p.sigma0_sq = value,
        SweepParam::Sigma => m.sigma = value,
    }
    let blank = |y: f64, error: String| SweepRow {
        parameter: param,
        value,
        t,
        y,
        pi: None,
        myopic: None,
        hedging: None,
        regime: None,
        partial_info: None,
        merton: None,
        error: Some(error),
    };
    if let Err(e) = m.validate().and_then(|_| p.validate()) {
        return ys.iter().map(|&y| blank(y, e.to_string())).collect();
    }
    let oracle = QuadratureOracle::new(m, p, cfg.quadrature);
    ys.iter()
        .map(|&y| {
            let eval = || -> robustfolio::Result<SweepRow> {
                let d = robust_at(&m, &p, &oracle, t, y)?;
                Ok(SweepRow {
                    parameter: param,
                    value,
                    t,
                    y,
                    pi: Some(d.pi),
                    myopic: Some(d.myopic),
                    hedging: Some(d.hedging),
                    regime: Some(d.regime.as_str().to_string()),
                    partial_info: Some(partial_info_strategy(&m, &p, t, y)?),
                    merton: Some(merton_strategy(&m, &p, t)?),
                    error: None,
                })
            };
            eval().unwrap_or_else(|e| blank(y, e.to_string()))
        })
        .collect()
}

/// Robust position at each `y` for every parameter value; a bad value
/// yields rows carrying the error instead of aborting the sweep.
pub fn sweep(cfg: &RunConfig, param: SweepParam, values: &[f64], t: f64, ys: &[f64]) -> Vec<SweepRow> {
    values
        .par_iter()
        .map(|&v| sweep_rows(cfg, param, v, t, ys))
        .collect::<Vec<_>>()
        .concat()
}

pub fn run_sweep(cfg: &RunConfig, param: SweepParam, values: &[f64], t: f64, ys: &[f64]) -> CliResult<Outcome> {
    cfg.validate()?;
    if values.is_empty() || ys.is_empty() {
        return Err(CliError::config("sweep needs at least one value and one y"));
    }
    if let Some(bad) = values.iter().chain(ys).find(|v| !v.is_finite()) {
        return Err(CliError::config(format!("sweep values must be finite, got {bad}")));
    }
    if !(0.0..cfg.market.horizon).contains(&t) {
        return Err(CliError::config(format!("sweep time must lie in [0, T), got {t}")));
    }
    let rows = sweep(cfg, param, values, t, ys);
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    let file = writer(cfg).rows("sweep", &rows)?;
    Ok(Outcome {
        files: vec![file],
        summary: format!("{} rows, {failed} with errors\n", rows.len()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRow {
    pub strategy: String,
    pub mean_wealth: f64,
    pub wealth_variance: f64,
    pub wealth_std_error: f64,
    pub mean_utility: f64,
    pub utility_std_error: f64,
    pub certainty_equivalent: f64,
    pub ce_std_error: f64,
    pub min_wealth: f64,
    pub max_wealth: f64,
    pub flagged_paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedGap {
    pub a: String,
    pub b: String,
    pub mean_utility_gap: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SimulationDiagnostics {
    #[serde(flatten)]
    diagnostics: Diagnostics,
    paired_gaps: Vec<PairedGap>,
    surface_warnings: Vec<String>,
}

pub const SIMULATED_STRATEGIES: [StrategyKind; 3] = [StrategyKind::Robust, StrategyKind::PartialInfo, StrategyKind::Merton];

pub fn run_simulate(cfg: &RunConfig, refine: bool) -> CliResult<Outcome> {
    cfg.validate()?;
    let (m, p) = (cfg.market, cfg.prior);
    let surface = solve_f(&m, &p, &cfg.grid()).map_err(|e| CliError::from_core("solve", e))?;
    let sc = cfg.scenario;
    let res = if refine {
        simulate_with_refinement(&m, &p, &SIMULATED_STRATEGIES, &surface, &sc)
    } else {
        simulate(&m, &p, &SIMULATED_STRATEGIES, &surface, &sc)
    }
    .map_err(|e| CliError::from_core("simulate", e))?;

    let rows: Vec<SimulationRow> = res
        .strategies
        .iter()
        .map(|s| SimulationRow {
            strategy: s.label.clone(),
            mean_wealth: s.mean_wealth,
            wealth_variance: s.wealth_variance,
            wealth_std_error: s.wealth_std_error,
            mean_utility: s.mean_utility,
            utility_std_error: s.utility_std_error,
            certainty_equivalent: s.certainty_equivalent,
            ce_std_error: s.ce_std_error,
            min_wealth: s.min_wealth,
            max_wealth: s.max_wealth,
            flagged_paths: s.flagged_paths,
        })
        .collect();
    let mut paired_gaps = Vec::new();
    if sc.keep_paths {
        let robust = &res.strategies[0];
        for other in &res.strategies[1..] {
            if let Ok((gap, se)) = paired_utility_gap(&m, robust, other) {
                paired_gaps.push(PairedGap {
                    a: robust.label.clone(),
                    b: other.label.clone(),
                    mean_utility_gap: gap,
                    std_error: se,
                });
            }
        }
    }
    let w = writer(cfg);
    let report = utility_report(&res);
    let mut files = vec![
        w.rows("simulation", &rows)?,
        w.text("report.txt", &report)?,
        w.json(
            "diagnostics.json",
            &SimulationDiagnostics {
                diagnostics: res.diagnostics.clone(),
                paired_gaps,
                surface_warnings: surface.warnings.clone(),
            },
        )?,
    ];
    if sc.keep_paths {
        let path = cfg.output_dir.join("terminal_wealth.csv");
        write_terminal_wealth(&path, &res.strategies)?;
        files.push(path);
    }
    Ok(Outcome { files, summary: report })
}

fn write_terminal_wealth(path: &Path, stats: &[robustfolio::StrategyStats]) -> CliResult<()> {
    let err = |e: csv::Error| CliError::io(&format!("write {}", path.display()), e);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(err)?;
    let mut header = vec!["path".to_string()];
    header.extend(stats.iter().map(|s| s.label.clone()));
    w.write_record(&header).map_err(err)?;
    let n = stats[0].terminal_wealth.as_ref().map_or(0, |v| v.len());
    for i in 0..n {
        let mut rec = vec![i.to_string()];
        for s in stats {
            rec.push(s.terminal_wealth.as_ref().map_or(String::new(), |v| v[i].to_string()));
        }
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(&format!("write {}", path.display()), e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityRow {
    pub kind: String,
    pub delta1: f64,
    pub delta7: f64,
    pub delta8: f64,
    pub epsilon3: f64,
    pub lhs1: f64,
    pub lhs2: f64,
    pub lhs2_alt: f64,
    pub valid: bool,
    pub evaluations: usize,
}

fn admissibility_row(kind: &str, w: &AdmissibilityWitness, evaluations: usize) -> AdmissibilityRow {
    AdmissibilityRow {
        kind: kind.to_string(),
        delta1: w.delta1,
        delta7: w.delta7,
        delta8: w.delta8,
        epsilon3: w.epsilon3,
        lhs1: w.lhs1,
        lhs2: w.lhs2,
        lhs2_alt: w.lhs2_alt,
        valid: w.is_valid(),
        evaluations,
    }
}

/// Runs the search (and the fixed point if given). Files are written before
/// a missing witness is reported as an error.
pub fn run_check(cfg: &RunConfig, budget: usize, fixed: Option<(f64, f64, f64)>) -> CliResult<Outcome> {
    cfg.validate()?;
    let (m, p) = (cfg.market, cfg.prior);
    let search = check_admissibility(&m, &p, budget).map_err(|e| CliError::from_core("admissibility search", e))?;
    let mut rows = vec![admissibility_row("search", &search.best, search.evaluations)];
    if let Some((d1, d7, e3)) = fixed {
        let w = evaluate_admissibility(&m, &p, d1, d7, e3).map_err(|e| CliError::from_core("admissibility", e))?;
        rows.push(admissibility_row("fixed", &w, 1));
    }
    let file = writer(cfg).rows("admissibility", &rows)?;
    let summary = to_json(&rows);
    if !search.found {
        return Err(CliError::NotAdmissible(format!(
            "no admissibility witness within {} evaluations (best max(lhs1, lhs2) = {}); see {}",
            search.evaluations,
            search.best.lhs1.max(search.best.lhs2),
            file.display()
        )));
    }
    Ok(Outcome {
        files: vec![file],
        summary,
    })
}

/// Grid and provenance stored next to an exported surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMeta {
    pub grid: GridSpec,
    pub provenance: Provenance,
    pub warnings: Vec<String>,
}

pub fn surface_rows(s: &SolutionSurface) -> Vec<SurfaceRow> {
    let mut rows = Vec::with_capacity(s.times.len() * s.states.len());
    for (i, &t) in s.times.iter().enumerate() {
        for (j, &y) in s.states.iter().enumerate() {
            rows.push(SurfaceRow {
                t,
                y,
                f: s.f[i][j],
                f_y: s.f_y[i][j],
            });
        }
    }
    rows
}

/// Rebuilds a surface from rows ordered time-major, as [`surface_rows`] writes them.
pub fn surface_from_rows(rows: &[SurfaceRow], meta: &SurfaceMeta) -> CliResult<SolutionSurface> {
    let (n_t, n_y) = (meta.grid.n_t, meta.grid.n_y);
    if rows.len() != n_t * n_y {
        return Err(CliError::config(format!(
            "surface has {} rows, grid needs {n_t} x {n_y}",
            rows.len()
        )));
    }
    let times: Vec<f64> = rows.iter().step_by(n_y).map(|r| r.t).collect();
    let states: Vec<f64> = rows[..n_y].iter().map(|r| r.y).collect();
    let mut f = Vec::with_capacity(n_t);
    let mut f_y = Vec::with_capacity(n_t);
    for (i, chunk) in rows.chunks(n_y).enumerate() {
        if chunk.iter().zip(&states).any(|(r, &y)| r.t != times[i] || r.y != y) {
            return Err(CliError::config(format!("surface row block {i} is not on the grid")));
        }
        f.push(chunk.iter().map(|r| r.f).collect());
        f_y.push(chunk.iter().map(|r| r.f_y).collect());
    }
    Ok(SolutionSurface {
        grid: meta.grid,
        times,
        states,
        f,
        f_y,
        provenance: meta.provenance,
        warnings: meta.warnings.clone(),
    })
}

fn meta_path(surface: &Path) -> PathBuf {
    surface.with_extension("meta.json")
}

/// Re-imports a surface written by [`run_export_surface`].
pub fn import_surface(path: &Path) -> CliResult<SolutionSurface> {
    let meta_file = meta_path(path);
    let text = std::fs::read_to_string(&meta_file).map_err(|e| CliError::io(&format!("read {}", meta_file.display()), e))?;
    let meta: SurfaceMeta = serde_json::from_str(&text).map_err(|e| CliError::io(&format!("read {}", meta_file.display()), e))?;
    let rows: Vec<SurfaceRow> = read_rows(path)?;
    surface_from_rows(&rows, &meta)
}

pub fn run_export_surface(cfg: &RunConfig, backend: Backend) -> CliResult<Outcome> {
    cfg.validate()?;
    let (m, p) = (cfg.market, cfg.prior);
    let grid = cfg.grid();
    let surface = match backend {
        Backend::Fd => solve_f(&m, &p, &grid),
        Backend::Quadrature => tabulate_quadrature(&m, &p, &grid, &cfg.quadrature),
    }
    .map_err(|e| CliError::from_core("export surface", e))?;
    let stem = match backend {
        Backend::Fd => "surface_fd",
        Backend::Quadrature => "surface_quadrature",
    };
    let file = writer(cfg).rows(stem, &surface_rows(&surface))?;
    let meta = SurfaceMeta {
        grid,
        provenance: surface.provenance,
        warnings: surface.warnings.clone(),
    };
    let meta_file = meta_path(&file);
    write_json(&meta_file, &meta)?;
    let back = import_surface(&file)?;
    if back != surface {
        return Err(CliError::Numerical(format!(
            "export surface: {} does not re-import to the same values",
            file.display()
        )));
    }
    let mut out = Outcome {
        files: vec![file, meta_file],
        summary: format!("exported {} x {} surface ({backend:?})\n", grid.n_y, grid.n_t),
    };
    log_warnings(&mut out, &surface.warnings);
    Ok(out)
}

/// Translates the `--drift` flag into a drift mode.
pub fn drift_mode(kind: &str, mu: Option<f64>) -> CliResult<DriftMode> {
    match kind {
        "prior-draw" => Ok(DriftMode::PriorDraw),
        "worst-case" => Ok(DriftMode::WorstCase),
        "fixed" => mu
            .map(|mu| DriftMode::Fixed { mu })
            .ok_or_else(|| CliError::config("--drift fixed needs --mu")),
        other => Err(CliError::config(format!(
            "unknown drift `{other}`, expected prior-draw, worst-case or fixed"
        ))),
    }
}
