//! Finite-difference solution of the backward PDE for `f(t, y)`:
//!
//! ```text
//! f_t + gamma^2/(2 sigma^2) f_yy + gamma (r - y)/sigma^2 f_y = g(t, y),   f(T, y) = 0
//! ```
//!
//! on a rectangular `(t, y)` grid. Time is marched backward with a theta
//! scheme (Crank-Nicolson by default), space uses central differences, and
//! each step is one tridiagonal solve. Dirichlet data at `y_min` and `y_max`
//! come from the quadrature oracle, so no artificial boundary condition
//! pollutes the interior.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic_oracles::{degenerate_f, f_quadrature, fy_quadrature, QuadratureConfig, QuadratureOracle};
use crate::error::{Error, Result};
use crate::market_model::{gamma_unchecked, MarketParams, Prior};
use crate::numeric::solve_tridiagonal;

/// Rectangular grid and time-stepping weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub y_min: f64,
    pub y_max: f64,
    pub n_y: usize,
    pub n_t: usize,
    /// 0.5 is Crank-Nicolson, 1.0 implicit Euler.
    pub theta: f64,
}

impl GridSpec {
    pub fn new(y_min: f64, y_max: f64, n_y: usize, n_t: usize, theta: f64) -> Result<Self> {
        let g = Self {
            y_min,
            y_max,
            n_y,
            n_t,
            theta,
        };
        g.validate()?;
        Ok(g)
    }

    /// Default domain: `r +- w` and `y0 +- w` with `w = max(8, 6 + a + 1)` prior
    /// standard deviations, widened to contain `extra` points; 401 x 401 nodes.
    pub fn default_for(params: &MarketParams, prior: &Prior, extra: &[f64]) -> Self {
        let sd = prior.sigma0_sq.sqrt();
        let (mut lo, mut hi) = if prior.is_degenerate() {
            (params.r.min(prior.y0) - 1.0, params.r.max(prior.y0) + 1.0)
        } else {
            let w = (8.0f64).max(7.0 + params.confidence) * sd;
            (params.r.min(prior.y0) - w, params.r.max(prior.y0) + w)
        };
        for &y in extra.iter().filter(|y| y.is_finite()) {
            let pad = 0.05 * (hi - lo);
            if y <= lo {
                lo = y - pad;
            }
            if y >= hi {
                hi = y + pad;
            }
        }
        Self {
            y_min: lo,
            y_max: hi,
            n_y: 401,
            n_t: 401,
            theta: 0.5,
        }
    }

    /// Structural checks that need no model parameters.
    pub fn validate(&self) -> Result<()> {
        if !self.y_min.is_finite() || !self.y_max.is_finite() || self.y_min >= self.y_max {
            return Err(Error::invalid(format!(
                "grid needs finite y_min < y_max, got [{}, {}]",
                self.y_min, self.y_max
            )));
        }
        if self.n_y < 11 {
            return Err(Error::invalid(format!("grid n_y must be >= 11, got {}", self.n_y)));
        }
        if self.n_t < 2 {
            return Err(Error::invalid(format!("grid n_t must be >= 2, got {}", self.n_t)));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::invalid(format!("grid theta must lie in [0, 1], got {}", self.theta)));
        }
        Ok(())
    }

    /// The band `r +- (6 + a) sigma0` that carries the dynamics.
    pub fn required_span(params: &MarketParams, prior: &Prior) -> (f64, f64) {
        let w = (6.0 + params.confidence) * prior.sigma0_sq.sqrt();
        (params.r - w, params.r + w)
    }

    /// Full validation against the model the grid will be used for.
    pub fn validate_for(&self, params: &MarketParams, prior: &Prior) -> Result<()> {
        self.validate()?;
        let (lo, hi) = Self::required_span(params, prior);
        if self.y_min > lo || self.y_max < hi {
            return Err(Error::invalid(format!(
                "grid [{}, {}] must contain [{lo}, {hi}]",
                self.y_min, self.y_max
            )));
        }
        Ok(())
    }

    pub fn dy(&self) -> f64 {
        (self.y_max - self.y_min) / (self.n_y - 1) as f64
    }

    pub fn states(&self) -> Vec<f64> {
        let h = self.dy();
        (0..self.n_y)
            .map(|j| if j == self.n_y - 1 { self.y_max } else { self.y_min + j as f64 * h })
            .collect()
    }

    pub fn times(&self, horizon: f64) -> Vec<f64> {
        let dt = horizon / (self.n_t - 1) as f64;
        (0..self.n_t)
            .map(|n| if n == self.n_t - 1 { horizon } else { n as f64 * dt })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    FiniteDifference,
    Quadrature,
}

/// `f` and `f_y` tabulated on a grid; rows are indexed by time, columns by `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSurface {
    pub grid: GridSpec,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub f: Vec<Vec<f64>>,
    pub f_y: Vec<Vec<f64>>,
    pub provenance: Provenance,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Anything that can supply `(f, f_y)` at a point.
pub trait ValueSource: Sync {
    fn lookup(&self, t: f64, y: f64) -> Result<(f64, f64)>;

    /// Inclusive `y` range over which `lookup` is defined, if bounded.
    fn y_range(&self) -> Option<(f64, f64)> {
        None
    }
}

impl ValueSource for SolutionSurface {
    fn lookup(&self, t: f64, y: f64) -> Result<(f64, f64)> {
        surface_lookup(self, t, y)
    }

    fn y_range(&self) -> Option<(f64, f64)> {
        Some((self.grid.y_min, self.grid.y_max))
    }
}

impl ValueSource for QuadratureOracle {
    fn lookup(&self, t: f64, y: f64) -> Result<(f64, f64)> {
        self.value(t, y)
    }
}

/// The source term: squared distance from `r` to the confidence set, over `2 sigma^2`.
pub fn source_g_tilde(params: &MarketParams, prior: &Prior, t: f64, y: f64) -> Result<f64> {
    params.check_time(t)?;
    Ok(source_unchecked(params, prior, t, y))
}

#[inline]
fn source_unchecked(params: &MarketParams, prior: &Prior, t: f64, y: f64) -> f64 {
    let half = params.confidence * gamma_unchecked(params, prior, t).sqrt();
    let above = (y - params.r - half).max(0.0);
    let below = (params.r - y - half).max(0.0);
    (above * above + below * below) / (2.0 * params.sigma_sq())
}

/// Derivative of a row by finite differences: fourth order in the interior,
/// second order next to and at the boundary.
///
/// Deep inside the dead band `f` decays faster than the grid can resolve and
/// the wide stencil is dominated by its outermost node, which can flip the
/// sign. Wherever the fourth-order correction is not small against the
/// central difference itself, the central difference is kept; it has the
/// sign of the local slope for monotone data.
fn differentiate_row(values: &[f64], h: f64) -> Vec<f64> {
    let n = values.len();
    let mut d = vec![0.0; n];
    d[0] = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h);
    d[n - 1] = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h);
    d[1] = (values[2] - values[0]) / (2.0 * h);
    d[n - 2] = (values[n - 1] - values[n - 3]) / (2.0 * h);
    for j in 2..n - 2 {
        let central = (values[j + 1] - values[j - 1]) / (2.0 * h);
        let wide = (values[j - 2] - 8.0 * values[j - 1] + 8.0 * values[j + 1] - values[j + 2]) / (12.0 * h);
        d[j] = if (wide - central).abs() <= UNRESOLVED_RATIO * central.abs() {
            wide
        } else {
            central
        };
    }
    d
}

/// Largest relative fourth-order correction accepted by [`differentiate_row`].
const UNRESOLVED_RATIO: f64 = 0.5;

fn degenerate_surface(params: &MarketParams, grid: &GridSpec, provenance: Provenance) -> SolutionSurface {
    let times = grid.times(params.horizon);
    let states = grid.states();
    let (f, f_y) = times
        .iter()
        .map(|&t| states.iter().map(|&y| degenerate_f(params, t, y)).unzip())
        .unzip();
    SolutionSurface {
        grid: *grid,
        times,
        states,
        f,
        f_y,
        provenance,
        warnings: Vec::new(),
    }
}

/// Solves for `f` on `grid` by backward theta-scheme time marching.
///
/// With a degenerate prior the belief never moves and `f` is the exact
/// quadratic `-(T - t)(r - y)^2 / (2 sigma^2)`; that surface is returned
/// without marching.
pub fn solve_f(params: &MarketParams, prior: &Prior, grid: &GridSpec) -> Result<SolutionSurface> {
    params.validate()?;
    prior.validate()?;
    grid.validate_for(params, prior)?;
    if prior.is_degenerate() {
        return Ok(degenerate_surface(params, grid, Provenance::FiniteDifference));
    }

    let times = grid.times(params.horizon);
    let states = grid.states();
    let n_y = grid.n_y;
    let n_t = grid.n_t;
    let h = grid.dy();
    let theta = grid.theta;
    let s2 = params.sigma_sq();
    let qcfg = QuadratureConfig::default();

    let boundary: Vec<(f64, f64)> = times
        .par_iter()
        .map(|&t| {
            Ok((
                f_quadrature(params, prior, t, grid.y_min, &qcfg)?,
                f_quadrature(params, prior, t, grid.y_max, &qcfg)?,
            ))
        })
        .collect::<Result<_>>()?;

    // L f_j = lo_j f_{j-1} + di_j f_j + up_j f_{j+1} at time t.
    let coefficients = |t: f64, lo: &mut [f64], di: &mut [f64], up: &mut [f64]| {
        let g = gamma_unchecked(params, prior, t);
        let diff = g * g / (2.0 * s2) / (h * h);
        for j in 0..n_y {
            let adv = g * (params.r - states[j]) / s2 / (2.0 * h);
            lo[j] = diff - adv;
            di[j] = -2.0 * diff;
            up[j] = diff + adv;
        }
    };

    let mut warnings = Vec::new();
    let mut peclet_max = 0.0f64;
    for &t in &times {
        let g = gamma_unchecked(params, prior, t);
        let edge = (params.r - grid.y_min).abs().max((grid.y_max - params.r).abs());
        // |adv| h / (2 diff) with adv = g |r - y| / sigma^2, diff = g^2 / (2 sigma^2)
        peclet_max = peclet_max.max(edge * h / g);
    }
    if peclet_max > 1.0 {
        warnings.push(format!(
            "cell Peclet number reaches {peclet_max:.3} > 1; central advection may oscillate, refine n_y"
        ));
    }

    let mut f = vec![vec![0.0; n_y]; n_t];
    let (mut lo_next, mut di_next, mut up_next) = (vec![0.0; n_y], vec![0.0; n_y], vec![0.0; n_y]);
    let (mut lo_now, mut di_now, mut up_now) = (vec![0.0; n_y], vec![0.0; n_y], vec![0.0; n_y]);
    coefficients(times[n_t - 1], &mut lo_next, &mut di_next, &mut up_next);

    let m = n_y - 2;
    let mut sub = vec![0.0; m];
    let mut main = vec![0.0; m];
    let mut sup = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    let mut scratch = Vec::with_capacity(m);

    for n in (0..n_t - 1).rev() {
        let dt = times[n + 1] - times[n];
        let t = times[n];
        coefficients(t, &mut lo_now, &mut di_now, &mut up_now);
        let next = &f[n + 1];
        let (b_lo, b_hi) = boundary[n];
        for i in 0..m {
            let j = i + 1;
            let explicit = lo_next[j] * next[j - 1] + di_next[j] * next[j] + up_next[j] * next[j + 1];
            let src = theta * source_unchecked(params, prior, t, states[j])
                + (1.0 - theta) * source_unchecked(params, prior, times[n + 1], states[j]);
            rhs[i] = next[j] + (1.0 - theta) * dt * explicit - dt * src;
            sub[i] = -theta * dt * lo_now[j];
            main[i] = 1.0 - theta * dt * di_now[j];
            sup[i] = -theta * dt * up_now[j];
        }
        rhs[0] -= sub[0] * b_lo;
        rhs[m - 1] -= sup[m - 1] * b_hi;
        if !solve_tridiagonal(&sub, &main, &sup, &mut rhs, &mut scratch) {
            return Err(Error::numerical(format!("singular step matrix at time step {n} (t = {t})"), None));
        }
        let row = &mut f[n];
        row[0] = b_lo;
        row[n_y - 1] = b_hi;
        row[1..n_y - 1].copy_from_slice(&rhs);
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical(
                format!("non-finite value at time step {n} (t = {t}), y = {}", states[j]),
                None,
            ));
        }
        std::mem::swap(&mut lo_next, &mut lo_now);
        std::mem::swap(&mut di_next, &mut di_now);
        std::mem::swap(&mut up_next, &mut up_now);
    }

    let mut f_y: Vec<Vec<f64>> = f.iter().map(|row| differentiate_row(row, h)).collect();
    // terminal condition holds exactly, derivative included
    f_y[n_t - 1].iter_mut().for_each(|v| *v = 0.0);

    Ok(SolutionSurface {
        grid: *grid,
        times,
        states,
        f,
        f_y,
        provenance: Provenance::FiniteDifference,
        warnings,
    })
}

/// Tabulates the quadrature oracle on `grid`, for use wherever an FD surface
/// would be (export, cross-checks).
pub fn tabulate_quadrature(
    params: &MarketParams,
    prior: &Prior,
    grid: &GridSpec,
    cfg: &QuadratureConfig,
) -> Result<SolutionSurface> {
    params.validate()?;
    prior.validate()?;
    grid.validate_for(params, prior)?;
    cfg.validate()?;
    if prior.is_degenerate() {
        return Ok(degenerate_surface(params, grid, Provenance::Quadrature));
    }
    let times = grid.times(params.horizon);
    let states = grid.states();
    let rows: Vec<(Vec<f64>, Vec<f64>)> = times
        .par_iter()
        .map(|&t| {
            let mut f = Vec::with_capacity(states.len());
            let mut fy = Vec::with_capacity(states.len());
            for &y in &states {
                f.push(f_quadrature(params, prior, t, y, cfg)?);
                fy.push(fy_quadrature(params, prior, t, y, cfg)?);
            }
            Ok((f, fy))
        })
        .collect::<Result<_>>()?;
    let (f, f_y) = rows.into_iter().unzip();
    Ok(SolutionSurface {
        grid: *grid,
        times,
        states,
        f,
        f_y,
        provenance: Provenance::Quadrature,
        warnings: Vec::new(),
    })
}

/// Index `i` of the cell `[nodes[i], nodes[i+1]]` holding `x` and the weight of `nodes[i+1]`.
fn locate(nodes: &[f64], x: f64) -> (usize, f64) {
    let last = nodes.len() - 1;
    let i = nodes.partition_point(|&v| v <= x).saturating_sub(1).min(last - 1);
    if x == nodes[i] {
        return (i, 0.0);
    }
    if x == nodes[i + 1] {
        return (i, 1.0);
    }
    (i, (x - nodes[i]) / (nodes[i + 1] - nodes[i]))
}

/// Bilinear interpolation of `(f, f_y)`; exact at nodes, no extrapolation.
pub fn surface_lookup(surface: &SolutionSurface, t: f64, y: f64) -> Result<(f64, f64)> {
    let (t0, t1) = (surface.times[0], *surface.times.last().unwrap());
    let (y0, y1) = (surface.states[0], *surface.states.last().unwrap());
    if !(t0..=t1).contains(&t) || !(y0..=y1).contains(&y) {
        return Err(Error::domain(format!(
            "({t}, {y}) lies outside the surface [{t0}, {t1}] x [{y0}, {y1}]"
        )));
    }
    let (i, wt) = locate(&surface.times, t);
    let (j, wy) = locate(&surface.states, y);
    let blend = |m: &Vec<Vec<f64>>| {
        let at = |a: usize, b: usize| m[a][b];
        let pick = |a: usize| match wy {
            w if w == 0.0 => at(a, j),
            w if w == 1.0 => at(a, j + 1),
            w => (1.0 - w) * at(a, j) + w * at(a, j + 1),
        };
        match wt {
            w if w == 0.0 => pick(i),
            w if w == 1.0 => pick(i + 1),
            w => (1.0 - w) * pick(i) + w * pick(i + 1),
        }
    };
    Ok((blend(&surface.f), blend(&surface.f_y)))
}
