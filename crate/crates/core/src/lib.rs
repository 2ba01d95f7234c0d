//! Robust CARA portfolio selection when the asset drift is unknown and learned
//! by Bayesian filtering, with ambiguity expressed as a confidence interval
//! around the posterior mean.
//!
//! The value function reduces to `-(1/k) exp(-k e^{r(T-t)} x + f(t, y))`
//! where `f` solves a linear parabolic PDE in the posterior mean `y`. This
//! crate computes `f` by finite differences ([`pde_engine`]) and by an
//! independent Feynman-Kac quadrature ([`analytic_oracles`]), turns it into
//! the robust feedback strategy ([`strategy`]), and simulates the resulting
//! wealth ([`simulator`]).

mod error;
pub mod analytic_oracles;
pub mod market_model;
pub mod numeric;
pub mod pde_engine;
pub mod simulator;
pub mod strategy;

pub use analytic_oracles::{A0Coefficients, McEstimate, QuadratureConfig, QuadratureOracle, QuadratureRule};
pub use error::{Error, Result};
pub use market_model::{BeliefState, ConfidenceInterval, MarketParams, Prior};
pub use pde_engine::{GridSpec, Provenance, SolutionSurface, ValueSource};
pub use simulator::{DriftMode, ScenarioConfig, SimulationResult, StrategyKind, StrategyStats};
pub use strategy::{AdmissibilityWitness, Regime, RegionLabel, StrategyDecision, TradeRegion};
