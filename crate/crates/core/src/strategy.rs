//! The robust feedback strategy, its worst-case drift, the trading-region map
//! and the integrability conditions that make the strategy admissible.
//!
//! At `(t, y)` the position in the risky asset is
//!
//! ```text
//! pi = e^{-r(T-t)} / (k sigma^2) * ( d(y) + f_y(t, y) gamma(t) )
//! ```
//!
//! where the myopic part `d(y)` is the signed distance from `r` to the
//! confidence set `[y - a sqrt(gamma), y + a sqrt(gamma)]` and vanishes when
//! `r` lies inside it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_model::{gamma_unchecked, MarketParams, Prior};
use crate::pde_engine::ValueSource;

/// Position of `r` relative to the confidence set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    /// `r` lies below the set: every plausible drift beats the bond.
    BelowSet,
    InSet,
    AboveSet,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::BelowSet => "below-set",
            Regime::InSet => "in-set",
            Regime::AboveSet => "above-set",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyDecision {
    pub pi: f64,
    pub regime: Regime,
    /// Worst-case drift. For [`Regime::InSet`] every drift in the set is a
    /// minimiser and this carries the representative value `y`.
    pub mu_worst: f64,
    pub any_in_set: bool,
    pub myopic: f64,
    pub hedging: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TradeRegion {
    Sell,
    SmallTrade,
    Buy,
}

impl TradeRegion {
    pub fn as_str(&self) -> &'static str {
        match self {
            TradeRegion::Sell => "sell",
            TradeRegion::SmallTrade => "small-trade",
            TradeRegion::Buy => "buy",
        }
    }
}

/// One trading region at a fixed time, `(lower, upper)` in `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionLabel {
    pub label: TradeRegion,
    pub lower: f64,
    pub upper: f64,
    /// Sign changes of `pi` strictly inside the region (the small-trade band
    /// turns from long to short at `y = r`).
    pub interior_crossings: Vec<f64>,
}

/// Constants for the two integrability inequalities and their left sides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityWitness {
    pub delta1: f64,
    pub delta7: f64,
    pub delta8: f64,
    pub epsilon3: f64,
    pub lhs1: f64,
    pub lhs2: f64,
    /// Cruder cubic-in-`T` bound that can replace `lhs2`.
    pub lhs2_alt: f64,
}

impl AdmissibilityWitness {
    pub fn is_valid(&self) -> bool {
        self.lhs1 < 1.0 && self.lhs2 < 1.0
    }

    fn score(&self) -> f64 {
        self.lhs1.max(self.lhs2)
    }
}

/// Best witness found by [`check_admissibility`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilitySearch {
    pub best: AdmissibilityWitness,
    pub found: bool,
    pub evaluations: usize,
}

pub const DEFAULT_ADMISSIBILITY_BUDGET: usize = 100_000;

/// Classifies `r` against the confidence set and returns the minimising drift.
/// Ties at an endpoint count as inside.
pub fn worst_case_mu(params: &MarketParams, prior: &Prior, t: f64, y: f64) -> Result<(Regime, f64)> {
    params.check_time(t)?;
    Ok(classify(params, half_width(params, prior, t), y))
}

#[inline]
fn half_width(params: &MarketParams, prior: &Prior, t: f64) -> f64 {
    params.confidence * gamma_unchecked(params, prior, t).sqrt()
}

#[inline]
fn classify(params: &MarketParams, half: f64, y: f64) -> (Regime, f64) {
    let (lo, hi) = (y - half, y + half);
    if params.r < lo {
        (Regime::BelowSet, lo)
    } else if params.r > hi {
        (Regime::AboveSet, hi)
    } else {
        (Regime::InSet, y)
    }
}

/// Robust position at `(t, y)` given `f_y(t, y)`.
pub fn robust_feedback(params: &MarketParams, prior: &Prior, t: f64, y: f64, f_y: f64) -> Result<StrategyDecision> {
    params.check_time(t)?;
    let gamma = gamma_unchecked(params, prior, t);
    let half = params.confidence * gamma.sqrt();
    let scale = params.demand_scale(t);
    let (regime, mu_worst) = classify(params, half, y);
    let myopic = match regime {
        Regime::InSet => 0.0,
        _ => scale * (mu_worst - params.r),
    };
    let hedging = scale * f_y * gamma;
    Ok(StrategyDecision {
        pi: myopic + hedging,
        regime,
        mu_worst,
        any_in_set: regime == Regime::InSet,
        myopic,
        hedging,
    })
}

/// [`robust_feedback`] with `f_y` taken from `source`.
pub fn robust_at(params: &MarketParams, prior: &Prior, source: &dyn ValueSource, t: f64, y: f64) -> Result<StrategyDecision> {
    let (_, fy) = source.lookup(t, y)?;
    robust_feedback(params, prior, t, y, fy)
}

/// The drift an adversary picks against an arbitrary position `pi`.
///
/// The hedging position `e^{-r(T-t)} f_y gamma / (k sigma^2)` is the
/// indifference point: larger positions face the lower end of the set,
/// smaller ones the upper end, and exactly at it the posterior mean `y` is
/// used.
pub fn adversarial_drift(params: &MarketParams, prior: &Prior, t: f64, y: f64, f_y: f64, pi: f64) -> f64 {
    let gamma = gamma_unchecked(params, prior, t);
    let half = params.confidence * gamma.sqrt();
    let neutral = params.demand_scale(t) * f_y * gamma;
    if pi > neutral {
        y - half
    } else if pi < neutral {
        y + half
    } else {
        y
    }
}

/// Finds the sign changes of `y -> pi(t, y)` on `[y_min, y_max]` and labels
/// the sell, small-trade and buy regions.
pub fn classify_regions(
    params: &MarketParams,
    prior: &Prior,
    t: f64,
    source: &dyn ValueSource,
    y_range: (f64, f64),
) -> Result<Vec<RegionLabel>> {
    params.check_time(t)?;
    if t >= params.horizon {
        return Err(Error::domain("regions are only defined for t < T"));
    }
    let (y_min, y_max) = match source.y_range() {
        Some((lo, hi)) => (y_range.0.max(lo), y_range.1.min(hi)),
        None => y_range,
    };
    let pi = |y: f64| robust_at(params, prior, source, t, y).map(|d| d.pi);
    let half = half_width(params, prior, t);
    let (band_lo, band_hi) = (params.r - half, params.r + half);
    if !(y_min < band_lo && band_hi < y_max) {
        return Err(Error::domain(format!(
            "y range [{y_min}, {y_max}] does not enclose the band [{band_lo}, {band_hi}]; use a wider grid"
        )));
    }

    if half == 0.0 {
        let r = params.r;
        return Ok(vec![
            RegionLabel {
                label: TradeRegion::Sell,
                lower: f64::NEG_INFINITY,
                upper: r,
                interior_crossings: vec![],
            },
            RegionLabel {
                label: TradeRegion::Buy,
                lower: r,
                upper: f64::INFINITY,
                interior_crossings: vec![],
            },
        ]);
    }

    let y_low = bisect_root(&pi, y_min, band_lo, "below the band")?;
    let y_mid = bisect_root(&pi, band_lo, band_hi, "inside the band")?;
    let y_high = bisect_root(&pi, band_hi, y_max, "above the band")?;
    Ok(vec![
        RegionLabel {
            label: TradeRegion::Sell,
            lower: f64::NEG_INFINITY,
            upper: y_low,
            interior_crossings: vec![],
        },
        RegionLabel {
            label: TradeRegion::SmallTrade,
            lower: y_low,
            upper: y_high,
            interior_crossings: vec![y_mid],
        },
        RegionLabel {
            label: TradeRegion::Buy,
            lower: y_high,
            upper: f64::INFINITY,
            interior_crossings: vec![],
        },
    ])
}

pub const ROOT_TOL: f64 = 1e-10;

fn bisect_root<F: Fn(f64) -> Result<f64>>(h: &F, mut lo: f64, mut hi: f64, what: &str) -> Result<f64> {
    let mut h_lo = h(lo)?;
    let h_hi = h(hi)?;
    if h_lo == 0.0 {
        return Ok(lo);
    }
    if h_hi == 0.0 {
        return Ok(hi);
    }
    if h_lo.signum() == h_hi.signum() {
        return Err(Error::domain(format!(
            "no sign change of pi {what} within [{lo}, {hi}]; use a wider grid"
        )));
    }
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        let h_mid = h(mid)?;
        if h_mid == 0.0 {
            return Ok(mid);
        }
        if h_mid.signum() == h_lo.signum() {
            lo = mid;
            h_lo = h_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Candidate value `-(1/k) exp(-k e^{r(T-t)} x + f)`.
pub fn value_function(params: &MarketParams, t: f64, x: f64, f_value: f64) -> Result<f64> {
    params.check_time(t)?;
    let k = params.risk_aversion;
    let exponent = -k * (params.r * (params.horizon - t)).exp() * x + f_value;
    let v = -exponent.exp() / k;
    if !v.is_finite() {
        return Err(Error::numerical(
            format!("value function overflows: exponent {exponent} at t = {t}, x = {x}"),
            Some(f64::NEG_INFINITY),
        ));
    }
    if v == 0.0 {
        return Err(Error::numerical(
            format!("value function underflows to zero: exponent {exponent} at t = {t}, x = {x}"),
            Some(0.0),
        ));
    }
    Ok(v)
}

/// Left sides of both inequalities at fixed `(delta1, delta7, epsilon3)`;
/// `delta8` is the Holder conjugate of `delta7`.
pub fn evaluate_admissibility(
    params: &MarketParams,
    prior: &Prior,
    delta1: f64,
    delta7: f64,
    epsilon3: f64,
) -> Result<AdmissibilityWitness> {
    if !(delta1 > 1.0) || !(delta7 > 1.0) || !(epsilon3 > 0.0) || !delta1.is_finite() || !delta7.is_finite() || !epsilon3.is_finite() {
        return Err(Error::invalid(format!(
            "need delta1 > 1, delta7 > 1, epsilon3 > 0, got ({delta1}, {delta7}, {epsilon3})"
        )));
    }
    let delta8 = delta7 / (delta7 - 1.0);
    let c = 2.0 * (2.0 * delta1 * delta1 * delta7 - delta1) * delta8;
    let horizon = params.horizon;
    let s2 = params.sigma_sq();
    let v0 = prior.sigma0_sq;
    if prior.is_degenerate() {
        // the bracket below is exactly zero but cancels to rounding noise
        return Ok(AdmissibilityWitness {
            delta1,
            delta7,
            delta8,
            epsilon3,
            lhs1: 0.0,
            lhs2: 0.0,
            lhs2_alt: 0.0,
        });
    }
    let lhs1 = c * (1.0 + 1.0 / epsilon3) * horizon * horizon * v0 * v0 / (s2 * s2);
    let grown = v0 * horizon + s2;
    let bracket = v0 * horizon - 2.0 * s2 * (grown / s2).ln() - s2 * s2 / grown + s2;
    let lhs2 = c / s2 * (1.0 + epsilon3) * bracket;
    let lhs2_alt = c * (1.0 + epsilon3) * v0.powi(3) * horizon.powi(3) / (3.0 * s2.powi(3));
    Ok(AdmissibilityWitness {
        delta1,
        delta7,
        delta8,
        epsilon3,
        lhs1,
        lhs2,
        lhs2_alt,
    })
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![(lo * hi).sqrt()];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Grid search for constants satisfying both inequalities.
///
/// `delta1 - 1` and `delta7 - 1` are log-spaced over `[1e-4, 3]` and
/// `[1e-4, 9]`, `epsilon3` over `[1e-2, 1e2]`, with equal counts per axis
/// so that at most `budget` points are evaluated. The witness minimising
/// `max(lhs1, lhs2)` is returned whether or not it is valid.
pub fn check_admissibility(params: &MarketParams, prior: &Prior, budget: usize) -> Result<AdmissibilitySearch> {
    params.validate()?;
    prior.validate()?;
    if budget == 0 {
        return Err(Error::invalid("admissibility search budget must be >= 1"));
    }
    let mut per_axis = (budget as f64).cbrt().floor() as usize;
    while (per_axis + 1).pow(3) <= budget {
        per_axis += 1;
    }
    while per_axis > 1 && per_axis.pow(3) > budget {
        per_axis -= 1;
    }
    let per_axis = per_axis.max(1);
    let d1 = log_grid(1e-4, 3.0, per_axis);
    let d7 = log_grid(1e-4, 9.0, per_axis);
    let e3 = log_grid(1e-2, 1e2, per_axis);
    let mut best: Option<AdmissibilityWitness> = None;
    let mut evaluations = 0;
    for &a in &d1 {
        for &b in &d7 {
            for &e in &e3 {
                let w = evaluate_admissibility(params, prior, 1.0 + a, 1.0 + b, e)?;
                evaluations += 1;
                if best.map_or(true, |cur| w.score() < cur.score()) {
                    best = Some(w);
                }
            }
        }
    }
    let best = best.expect("grid is non-empty");
    Ok(AdmissibilitySearch {
        best,
        found: best.is_valid(),
        evaluations,
    })
}
