//! Market and preference constants, the Gaussian prior on the unknown drift,
//! and the closed-form Bayesian filter it induces.
//!
//! With a prior `mu ~ N(y0, sigma0^2)` and prices following geometric Brownian
//! motion with known volatility, the posterior of the drift given the price
//! history up to `t` is Gaussian with deterministic variance
//! `gamma(t) = (1/sigma0^2 + t/sigma^2)^-1` and a mean `Y(t)` that depends on
//! the path only through the log-price increment `Z(t) - Z(0)`.
//!
//! The prior variance `sigma0^2 = 0` is a genuine case (no drift uncertainty)
//! and is handled by explicit branches: `gamma = 0` and `Y = y0` throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed market and preference constants. Units are years.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Risk-free rate per year.
    pub r: f64,
    /// Volatility per square-root year.
    pub sigma: f64,
    /// Investment horizon in years.
    #[serde(rename = "T")]
    pub horizon: f64,
    /// CARA absolute risk aversion.
    #[serde(rename = "k")]
    pub risk_aversion: f64,
    /// Confidence-set multiplier (1.96 gives a 95% set).
    #[serde(rename = "a")]
    pub confidence: f64,
}

impl MarketParams {
    pub fn new(r: f64, sigma: f64, horizon: f64, risk_aversion: f64, confidence: f64) -> Result<Self> {
        let p = Self {
            r,
            sigma,
            horizon,
            risk_aversion,
            confidence,
        };
        p.validate()?;
        Ok(p)
    }

    /// Parameters fitted to five years of S&P 500 daily closes, half-year horizon.
    pub fn reference() -> Self {
        Self {
            r: 0.018,
            sigma: 0.213,
            horizon: 0.5,
            risk_aversion: 1.0,
            confidence: 1.96,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.r, self.sigma, self.horizon, self.risk_aversion, self.confidence]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("market parameters must be finite"));
        }
        if self.sigma <= 0.0 {
            return Err(Error::invalid(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if self.horizon <= 0.0 {
            return Err(Error::invalid(format!("T must be > 0, got {}", self.horizon)));
        }
        if self.risk_aversion <= 0.0 {
            return Err(Error::invalid(format!("k must be > 0, got {}", self.risk_aversion)));
        }
        if self.confidence < 0.0 {
            return Err(Error::invalid(format!("a must be >= 0, got {}", self.confidence)));
        }
        Ok(())
    }

    #[inline]
    pub fn sigma_sq(&self) -> f64 {
        self.sigma * self.sigma
    }

    /// `e^{-r(T-t)} / (k sigma^2)`, the common scale of every demand term.
    #[inline]
    pub fn demand_scale(&self, t: f64) -> f64 {
        (-self.r * (self.horizon - t)).exp() / (self.risk_aversion * self.sigma_sq())
    }

    pub(crate) fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::domain(format!(
                "time {t} outside [0, {}]",
                self.horizon
            )));
        }
        Ok(())
    }
}

/// Gaussian prior `N(y0, sigma0_sq)` on the drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub y0: f64,
    pub sigma0_sq: f64,
}

impl Prior {
    pub fn new(y0: f64, sigma0_sq: f64) -> Result<Self> {
        let p = Self { y0, sigma0_sq };
        p.validate()?;
        Ok(p)
    }

    pub fn reference() -> Self {
        Self {
            y0: 0.174,
            sigma0_sq: 0.00908,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.y0.is_finite() || !self.sigma0_sq.is_finite() {
            return Err(Error::invalid("prior parameters must be finite"));
        }
        if self.sigma0_sq < 0.0 {
            return Err(Error::invalid(format!(
                "sigma0_sq must be >= 0, got {}",
                self.sigma0_sq
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn is_degenerate(&self) -> bool {
        self.sigma0_sq == 0.0
    }
}

/// Posterior of the drift at time `t`: mean `y`, variance `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub t: f64,
    pub y: f64,
    pub gamma: f64,
}

/// The confidence set `[y - a sqrt(gamma), y + a sqrt(gamma)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub mu_min: f64,
    pub mu_max: f64,
}

impl ConfidenceInterval {
    pub fn contains(&self, mu: f64) -> bool {
        self.mu_min <= mu && mu <= self.mu_max
    }

    pub fn width(&self) -> f64 {
        self.mu_max - self.mu_min
    }
}

/// Posterior variance without the domain check. Callers guarantee `t >= 0`.
#[inline]
pub(crate) fn gamma_unchecked(params: &MarketParams, prior: &Prior, t: f64) -> f64 {
    if prior.is_degenerate() {
        0.0
    } else {
        1.0 / (1.0 / prior.sigma0_sq + t / params.sigma_sq())
    }
}

/// Posterior variance `gamma(t)` of the drift.
pub fn gamma_at(params: &MarketParams, prior: &Prior, t: f64) -> Result<f64> {
    params.check_time(t)?;
    Ok(gamma_unchecked(params, prior, t))
}

/// Posterior belief after observing the log-price move from `z_0` to `z_t`.
pub fn posterior_from_logprice(
    params: &MarketParams,
    prior: &Prior,
    t: f64,
    z_t: f64,
    z_0: f64,
) -> Result<BeliefState> {
    params.check_time(t)?;
    if prior.is_degenerate() {
        return Ok(BeliefState {
            t,
            y: prior.y0,
            gamma: 0.0,
        });
    }
    let s2 = params.sigma_sq();
    let gamma = gamma_unchecked(params, prior, t);
    let y = gamma * ((z_t - z_0 + 0.5 * t * s2) / s2 + prior.y0 / prior.sigma0_sq);
    Ok(BeliefState { t, y, gamma })
}

pub fn confidence_set(params: &MarketParams, belief: &BeliefState) -> ConfidenceInterval {
    let half = params.confidence * belief.gamma.max(0.0).sqrt();
    ConfidenceInterval {
        mu_min: belief.y - half,
        mu_max: belief.y + half,
    }
}

/// Unconditional law of `Y(t)`: `N(y0, sigma0^4 t / (sigma0^2 t + sigma^2))`.
pub fn y_marginal_law(params: &MarketParams, prior: &Prior, t: f64) -> Result<(f64, f64)> {
    params.check_time(t)?;
    let s0 = prior.sigma0_sq;
    let var = s0 * s0 * t / (s0 * t + params.sigma_sq());
    Ok((prior.y0, var))
}
