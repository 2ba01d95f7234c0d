//! Monte Carlo wealth simulation for the robust, Bayesian and Merton strategies.
//!
//! Each path owns one ChaCha stream (see [`crate::numeric::path_rng`]). The
//! draw order within a path is fixed: under [`DriftMode::PriorDraw`] one
//! standard normal for the drift comes first, then `n_steps` standard normals
//! for the Brownian increments. Paths run in parallel and are aggregated in
//! index order, so results do not depend on the number of threads.
//!
//! Under a prior draw or a fixed drift the posterior mean is computed from its
//! closed form in the Brownian path, which is exact; only wealth is stepped.
//! Wealth is advanced in discounted units, so a zero position keeps
//! `X(T) = x0 e^{rT}` exactly. Under [`DriftMode::WorstCase`] every strategy
//! faces its own adversary: the drift at each step is the minimiser against that
//! strategy's position, and the belief follows its Euler-stepped dynamics
//! under that drift.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic_oracles::{merton_strategy, partial_info_strategy};
use crate::error::{Error, Result};
use crate::market_model::{gamma_unchecked, y_marginal_law, MarketParams, Prior};
use crate::numeric::{compensated_sum, mean_and_variance, path_rng};
use crate::pde_engine::ValueSource;
use crate::strategy::{adversarial_drift, robust_feedback};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DriftMode {
    /// The true drift is drawn from the prior once per path.
    PriorDraw,
    Fixed { mu: f64 },
    /// The drift is chosen adversarially at every step.
    WorstCase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StrategyKind {
    Robust,
    PartialInfo,
    Merton,
    Constant { pi: f64 },
}

impl StrategyKind {
    pub fn label(&self) -> String {
        match self {
            StrategyKind::Robust => "robust".into(),
            StrategyKind::PartialInfo => "partial-info".into(),
            StrategyKind::Merton => "merton".into(),
            StrategyKind::Constant { pi } => format!("constant({pi})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub drift_mode: DriftMode,
    pub initial_wealth: f64,
    /// Keep every path's terminal wealth in the result.
    #[serde(default)]
    pub keep_paths: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_paths: 10_000,
            n_steps: 500,
            seed: 20240601,
            drift_mode: DriftMode::PriorDraw,
            initial_wealth: 1.0,
            keep_paths: false,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::invalid("scenario n_paths must be >= 1"));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("scenario n_steps must be >= 1"));
        }
        if !self.initial_wealth.is_finite() {
            return Err(Error::invalid("scenario initial_wealth must be finite"));
        }
        if let DriftMode::Fixed { mu } = self.drift_mode {
            if !mu.is_finite() {
                return Err(Error::invalid("scenario fixed drift must be finite"));
            }
        }
        Ok(())
    }
}

/// Terminal statistics of one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyStats {
    pub strategy: StrategyKind,
    pub label: String,
    pub mean_wealth: f64,
    pub wealth_variance: f64,
    pub wealth_std_error: f64,
    pub mean_utility: f64,
    pub utility_std_error: f64,
    /// Wealth whose utility equals the mean utility.
    pub certainty_equivalent: f64,
    pub ce_std_error: f64,
    pub min_wealth: f64,
    pub max_wealth: f64,
    /// Paths dropped because wealth went non-finite or the belief left the surface.
    pub flagged_paths: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terminal_wealth: Option<Vec<f64>>,
}

/// Sample moments of the terminal belief against its exact law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefMoments {
    pub sample_mean: f64,
    pub sample_variance: f64,
    pub exact_mean: f64,
    pub exact_variance: f64,
    /// Standard-error multiples of the mean and variance discrepancies.
    pub mean_z: f64,
    pub variance_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRow {
    pub label: String,
    pub coarse_utility: f64,
    pub fine_utility: f64,
    pub combined_std_error: f64,
    pub within_three_se: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    pub belief_moments: Option<BeliefMoments>,
    pub step_refinement: Option<Vec<RefinementRow>>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub config: ScenarioConfig,
    pub strategies: Vec<StrategyStats>,
    pub diagnostics: Diagnostics,
}

/// One path's drift, Brownian path, log-price and closed-form belief.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub mu: f64,
    pub times: Vec<f64>,
    pub brownian: Vec<f64>,
    /// Log-price with `Z(0) = 0`.
    pub log_price: Vec<f64>,
    pub belief: Vec<f64>,
}

fn draw_mu<R: rand::Rng>(mode: DriftMode, prior: &Prior, rng: &mut R) -> f64 {
    match mode {
        DriftMode::PriorDraw => {
            let z: f64 = StandardNormal.sample(rng);
            prior.y0 + prior.sigma0_sq.sqrt() * z
        }
        DriftMode::Fixed { mu } => mu,
        DriftMode::WorstCase => prior.y0,
    }
}

/// Closed-form posterior mean given the Brownian path value `w` at time `t`.
#[inline]
fn exact_belief(params: &MarketParams, prior: &Prior, mu: f64, t: f64, w: f64) -> f64 {
    if prior.is_degenerate() {
        return prior.y0;
    }
    let g = gamma_unchecked(params, prior, t);
    g * (mu * t / params.sigma_sq() + w / params.sigma + prior.y0 / prior.sigma0_sq)
}

/// Regenerates path `index` of a scenario: the same draws [`simulate`] uses.
pub fn sample_path(params: &MarketParams, prior: &Prior, cfg: &ScenarioConfig, index: u64) -> Result<PathRecord> {
    params.validate()?;
    prior.validate()?;
    cfg.validate()?;
    let dt = params.horizon / cfg.n_steps as f64;
    let sqrt_dt = dt.sqrt();
    let mut rng = path_rng(cfg.seed, index);
    let mu = draw_mu(cfg.drift_mode, prior, &mut rng);
    let mut times = Vec::with_capacity(cfg.n_steps + 1);
    let mut brownian = Vec::with_capacity(cfg.n_steps + 1);
    let mut w = 0.0;
    for n in 0..=cfg.n_steps {
        if n > 0 {
            let z: f64 = StandardNormal.sample(&mut rng);
            w += sqrt_dt * z;
        }
        times.push(step_time(params, cfg, n));
        brownian.push(w);
    }
    let s2 = params.sigma_sq();
    let log_price = times
        .iter()
        .zip(&brownian)
        .map(|(&t, &w)| (mu - 0.5 * s2) * t + params.sigma * w)
        .collect();
    let belief = times
        .iter()
        .zip(&brownian)
        .map(|(&t, &w)| exact_belief(params, prior, mu, t, w))
        .collect();
    Ok(PathRecord {
        mu,
        times,
        brownian,
        log_price,
        belief,
    })
}

#[inline]
fn step_time(params: &MarketParams, cfg: &ScenarioConfig, n: usize) -> f64 {
    if n == cfg.n_steps {
        params.horizon
    } else {
        params.horizon * n as f64 / cfg.n_steps as f64
    }
}

struct PathOutcome {
    /// Terminal wealth per strategy, `None` when the path is flagged.
    wealth: Vec<Option<f64>>,
    terminal_belief: f64,
}

fn position(
    kind: StrategyKind,
    params: &MarketParams,
    prior: &Prior,
    source: &dyn ValueSource,
    t: f64,
    y: f64,
) -> Result<(f64, f64)> {
    Ok(match kind {
        StrategyKind::Robust => {
            let (_, fy) = source.lookup(t, y)?;
            (robust_feedback(params, prior, t, y, fy)?.pi, fy)
        }
        StrategyKind::PartialInfo => (partial_info_strategy(params, prior, t, y)?, f64::NAN),
        StrategyKind::Merton => (merton_strategy(params, prior, t)?, f64::NAN),
        StrategyKind::Constant { pi } => (pi, f64::NAN),
    })
}

fn run_path(
    params: &MarketParams,
    prior: &Prior,
    strategies: &[StrategyKind],
    source: &dyn ValueSource,
    cfg: &ScenarioConfig,
    index: u64,
) -> PathOutcome {
    let n_steps = cfg.n_steps;
    let dt = params.horizon / n_steps as f64;
    let sqrt_dt = dt.sqrt();
    let r = params.r;
    let sigma = params.sigma;
    let mut rng = path_rng(cfg.seed, index);
    let mu = draw_mu(cfg.drift_mode, prior, &mut rng);
    let dw: Vec<f64> = (0..n_steps)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sqrt_dt * z
        })
        .collect();
    let growth = (r * params.horizon).exp();
    let x0 = cfg.initial_wealth;

    match cfg.drift_mode {
        DriftMode::PriorDraw | DriftMode::Fixed { .. } => {
            let mut belief = Vec::with_capacity(n_steps + 1);
            let mut w = 0.0;
            for n in 0..=n_steps {
                if n > 0 {
                    w += dw[n - 1];
                }
                belief.push(exact_belief(params, prior, mu, step_time(params, cfg, n), w));
            }
            let wealth = strategies
                .iter()
                .map(|&kind| {
                    let mut disc = x0;
                    for n in 0..n_steps {
                        let t = step_time(params, cfg, n);
                        let (pi, _) = position(kind, params, prior, source, t, belief[n]).ok()?;
                        disc += (-r * t).exp() * pi * ((mu - r) * dt + sigma * dw[n]);
                    }
                    let x = growth * disc;
                    x.is_finite().then_some(x)
                })
                .collect();
            PathOutcome {
                wealth,
                terminal_belief: belief[n_steps],
            }
        }
        DriftMode::WorstCase => {
            let s2 = params.sigma_sq();
            let mut terminal_belief = prior.y0;
            let wealth = strategies
                .iter()
                .enumerate()
                .map(|(si, &kind)| {
                    let mut y = prior.y0;
                    let mut disc = x0;
                    let mut ok = true;
                    for n in 0..n_steps {
                        let t = step_time(params, cfg, n);
                        let (pi, fy) = match position(kind, params, prior, source, t, y) {
                            Ok(v) => v,
                            Err(_) => {
                                ok = false;
                                break;
                            }
                        };
                        let fy = if fy.is_nan() {
                            match source.lookup(t, y) {
                                Ok((_, v)) => v,
                                Err(_) => {
                                    ok = false;
                                    break;
                                }
                            }
                        } else {
                            fy
                        };
                        let m = adversarial_drift(params, prior, t, y, fy, pi);
                        disc += (-r * t).exp() * pi * ((m - r) * dt + sigma * dw[n]);
                        let g = gamma_unchecked(params, prior, t);
                        y += g / s2 * ((m - y) * dt + sigma * dw[n]);
                    }
                    if si == 0 {
                        terminal_belief = y;
                    }
                    let x = growth * disc;
                    (ok && x.is_finite()).then_some(x)
                })
                .collect();
            PathOutcome {
                wealth,
                terminal_belief,
            }
        }
    }
}

fn check_coverage(params: &MarketParams, prior: &Prior, source: &dyn ValueSource, strategies: &[StrategyKind], mode: DriftMode) -> Result<()> {
    let needs_surface = strategies.contains(&StrategyKind::Robust) || mode == DriftMode::WorstCase;
    if !needs_surface {
        return Ok(());
    }
    if let Some((lo, hi)) = source.y_range() {
        let w = 8.0 * prior.sigma0_sq.sqrt();
        let (need_lo, need_hi) = (prior.y0 - w, prior.y0 + w);
        if lo > need_lo || hi < need_hi {
            return Err(Error::invalid(format!(
                "surface covers y in [{lo}, {hi}] but the simulation needs [{need_lo}, {need_hi}]"
            )));
        }
    }
    let _ = params;
    Ok(())
}

fn stats_for(kind: StrategyKind, params: &MarketParams, wealth: Vec<f64>, flagged: usize, keep: bool) -> StrategyStats {
    let k = params.risk_aversion;
    let utility: Vec<f64> = wealth.iter().map(|x| -(-k * x).exp() / k).collect();
    let n = wealth.len();
    let (mean_wealth, wealth_variance) = mean_and_variance(&wealth);
    let (mean_utility, utility_variance) = mean_and_variance(&utility);
    let wealth_std_error = (wealth_variance / n as f64).sqrt();
    let utility_std_error = (utility_variance / n as f64).sqrt();
    let certainty_equivalent = -(-k * mean_utility).ln() / k;
    let ce_std_error = utility_std_error / (k * mean_utility.abs());
    let min_wealth = wealth.iter().copied().fold(f64::INFINITY, f64::min);
    let max_wealth = wealth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    StrategyStats {
        strategy: kind,
        label: kind.label(),
        mean_wealth,
        wealth_variance,
        wealth_std_error,
        mean_utility,
        utility_std_error,
        certainty_equivalent,
        ce_std_error,
        min_wealth,
        max_wealth,
        flagged_paths: flagged,
        terminal_wealth: keep.then_some(wealth),
    }
}

fn belief_moments(params: &MarketParams, prior: &Prior, mode: DriftMode, terminal: &[f64]) -> Option<BeliefMoments> {
    let horizon = params.horizon;
    let (exact_mean, exact_variance) = match mode {
        DriftMode::PriorDraw => y_marginal_law(params, prior, horizon).ok()?,
        DriftMode::Fixed { mu } => {
            if prior.is_degenerate() {
                (prior.y0, 0.0)
            } else {
                let g = gamma_unchecked(params, prior, horizon);
                let s2 = params.sigma_sq();
                (g * (mu * horizon / s2 + prior.y0 / prior.sigma0_sq), g * g * horizon / s2)
            }
        }
        DriftMode::WorstCase => return None,
    };
    let n = terminal.len() as f64;
    let (sample_mean, sample_variance) = mean_and_variance(terminal);
    let z = |gap: f64, se: f64| if se > 0.0 { gap / se } else if gap == 0.0 { 0.0 } else { f64::INFINITY };
    // For Gaussian data Var[s^2] = 2 sigma^4 / (n - 1).
    let var_se = exact_variance * (2.0 / (n - 1.0)).sqrt();
    Some(BeliefMoments {
        sample_mean,
        sample_variance,
        exact_mean,
        exact_variance,
        mean_z: z(sample_mean - exact_mean, (exact_variance / n).sqrt()),
        variance_z: z(sample_variance - exact_variance, var_se),
    })
}

/// Flagged-path incidence above which a warning is attached.
pub const FLAG_WARN_FRACTION: f64 = 1e-3;

/// Runs the scenario for every strategy over shared Brownian increments.
pub fn simulate(
    params: &MarketParams,
    prior: &Prior,
    strategies: &[StrategyKind],
    source: &dyn ValueSource,
    cfg: &ScenarioConfig,
) -> Result<SimulationResult> {
    params.validate()?;
    prior.validate()?;
    cfg.validate()?;
    if strategies.is_empty() {
        return Err(Error::invalid("at least one strategy is required"));
    }
    check_coverage(params, prior, source, strategies, cfg.drift_mode)?;

    let outcomes: Vec<PathOutcome> = (0..cfg.n_paths as u64)
        .into_par_iter()
        .map(|i| run_path(params, prior, strategies, source, cfg, i))
        .collect();

    let mut diagnostics = Diagnostics::default();
    let mut stats = Vec::with_capacity(strategies.len());
    for (si, &kind) in strategies.iter().enumerate() {
        let wealth: Vec<f64> = outcomes.iter().filter_map(|o| o.wealth[si]).collect();
        let flagged = cfg.n_paths - wealth.len();
        if flagged as f64 > FLAG_WARN_FRACTION * cfg.n_paths as f64 {
            diagnostics.warnings.push(format!(
                "{}: {flagged} of {} paths flagged (non-finite wealth or belief off the surface)",
                kind.label(),
                cfg.n_paths
            ));
        }
        if wealth.is_empty() {
            return Err(Error::numerical(format!("{}: every path was flagged", kind.label()), None));
        }
        stats.push(stats_for(kind, params, wealth, flagged, cfg.keep_paths));
    }
    if cfg.n_paths > 1 {
        let terminal: Vec<f64> = outcomes.iter().map(|o| o.terminal_belief).collect();
        diagnostics.belief_moments = belief_moments(params, prior, cfg.drift_mode, &terminal);
    }
    Ok(SimulationResult {
        config: *cfg,
        strategies: stats,
        diagnostics,
    })
}

/// [`simulate`] plus a rerun at twice the step count; the mean utilities of
/// both runs are compared in the diagnostics.
pub fn simulate_with_refinement(
    params: &MarketParams,
    prior: &Prior,
    strategies: &[StrategyKind],
    source: &dyn ValueSource,
    cfg: &ScenarioConfig,
) -> Result<SimulationResult> {
    let mut coarse = simulate(params, prior, strategies, source, cfg)?;
    let fine_cfg = ScenarioConfig {
        n_steps: cfg.n_steps * 2,
        keep_paths: false,
        ..*cfg
    };
    let fine = simulate(params, prior, strategies, source, &fine_cfg)?;
    let rows = coarse
        .strategies
        .iter()
        .zip(&fine.strategies)
        .map(|(c, f)| {
            let se = c.utility_std_error.hypot(f.utility_std_error);
            RefinementRow {
                label: c.label.clone(),
                coarse_utility: c.mean_utility,
                fine_utility: f.mean_utility,
                combined_std_error: se,
                within_three_se: (c.mean_utility - f.mean_utility).abs() <= 3.0 * se,
            }
        })
        .collect();
    coarse.diagnostics.step_refinement = Some(rows);
    Ok(coarse)
}

/// Plain-text table, one row per strategy in input order.
pub fn utility_report(result: &SimulationResult) -> String {
    let mut out = format!(
        "{:<16} {:>14} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12} {:>8}\n",
        "strategy", "mean_utility", "utility_se", "ce", "mean_wealth", "wealth_var", "min_wealth", "max_wealth", "flagged"
    );
    for s in &result.strategies {
        out.push_str(&format!(
            "{:<16} {:>14.8} {:>12.3e} {:>12.8} {:>12.8} {:>12.6e} {:>12.8} {:>12.8} {:>8}\n",
            s.label,
            s.mean_utility,
            s.utility_std_error,
            s.certainty_equivalent,
            s.mean_wealth,
            s.wealth_variance,
            s.min_wealth,
            s.max_wealth,
            s.flagged_paths
        ));
    }
    if let Some(b) = &result.diagnostics.belief_moments {
        out.push_str(&format!(
            "terminal belief: mean {:.6} (exact {:.6}, z {:.2}), variance {:.6e} (exact {:.6e}, z {:.2})\n",
            b.sample_mean, b.exact_mean, b.mean_z, b.sample_variance, b.exact_variance, b.variance_z
        ));
    }
    for w in &result.diagnostics.warnings {
        out.push_str(&format!("warning: {w}\n"));
    }
    out
}

/// Mean and standard error of the per-path utility difference `a - b`.
/// Both strategies must come from the same run with `keep_paths` set.
pub fn paired_utility_gap(params: &MarketParams, a: &StrategyStats, b: &StrategyStats) -> Result<(f64, f64)> {
    let (wa, wb) = match (&a.terminal_wealth, &b.terminal_wealth) {
        (Some(x), Some(y)) if x.len() == y.len() && a.flagged_paths == 0 && b.flagged_paths == 0 => (x, y),
        _ => {
            return Err(Error::invalid(
                "paired comparison needs unflagged per-path wealth for both strategies",
            ))
        }
    };
    let k = params.risk_aversion;
    let u = |x: f64| -(-k * x).exp() / k;
    let gaps: Vec<f64> = wa.iter().zip(wb).map(|(&x, &y)| u(x) - u(y)).collect();
    let (mean, var) = mean_and_variance(&gaps);
    Ok((mean, (var / gaps.len() as f64).sqrt()))
}

/// Sum of utilities, exposed for reproducibility checks.
pub fn total_utility(params: &MarketParams, wealth: &[f64]) -> f64 {
    let k = params.risk_aversion;
    compensated_sum(wealth.iter().map(|x| -(-k * x).exp() / k))
}
