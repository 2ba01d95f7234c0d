//! Semi-analytic evaluation of `f(t, y)` and `f_y(t, y)`.
//!
//! `f` has the Feynman-Kac representation
//! `f(t, y) = -E[ int_t^T g(s, Y^{t,y}(s)) ds ]`, where the belief diffusion
//! started at `(t, y)` is exactly Gaussian at every later time:
//!
//! ```text
//! Y^{t,y}(s) ~ N( gamma(s) y / gamma(t) + gamma(s) r (s - t) / sigma^2,
//!                 gamma(s)^2 (s - t) / sigma^2 )
//! ```
//!
//! and the source `g` is piecewise quadratic with a dead band of half-width
//! `a sqrt(gamma(s))` around `r`. The inner expectation is therefore a sum of
//! two Gaussian partial moments and only the outer time integral needs
//! quadrature. The outer integral is taken in `u = sqrt(s - t)`, which removes
//! the square-root behaviour of the integrand at `s = t`.
//!
//! Independent of that route, [`f_mc`] estimates the same expectation by
//! simulating the belief diffusion, and [`closed_form_a0`] gives the exact
//! quadratic solution when the confidence set has zero width.

use rayon::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_model::{gamma_unchecked, MarketParams, Prior};
use crate::numeric::{mean_and_variance, path_rng, psi1, psi2};

/// Time steps per Monte Carlo path in [`f_mc`].
pub const MC_STEPS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureRule {
    CompositeSimpson,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureConfig {
    pub n_time_nodes: usize,
    pub rule: QuadratureRule,
    pub abs_tol: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            n_time_nodes: 201,
            rule: QuadratureRule::CompositeSimpson,
            abs_tol: 1e-12,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rule == QuadratureRule::CompositeSimpson
            && (self.n_time_nodes < 3 || self.n_time_nodes % 2 == 0)
        {
            return Err(Error::invalid(format!(
                "n_time_nodes must be odd and >= 3 for Simpson, got {}",
                self.n_time_nodes
            )));
        }
        if !(self.abs_tol > 0.0) {
            return Err(Error::invalid(format!("abs_tol must be > 0, got {}", self.abs_tol)));
        }
        Ok(())
    }
}

/// Coefficients of `f(t, y) = f1 y^2 + f2 y + f3` when `a = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct A0Coefficients {
    pub f1: f64,
    pub f2: f64,
    pub f3: f64,
}

impl A0Coefficients {
    pub fn value(&self, y: f64) -> f64 {
        (self.f1 * y + self.f2) * y + self.f3
    }

    pub fn slope(&self, y: f64) -> f64 {
        2.0 * self.f1 * y + self.f2
    }
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

fn check_variance(v: f64) -> Result<()> {
    if v < 0.0 || v.is_nan() {
        return Err(Error::domain(format!("variance must be >= 0, got {v}")));
    }
    Ok(())
}

/// `E[(X - b)^2 1{X >= b}]` for `X ~ N(m, v)`.
pub fn gaussian_upper_quadratic_moment(m: f64, v: f64, b: f64) -> Result<f64> {
    check_variance(v)?;
    Ok(upper_quadratic(m, v, b))
}

/// `E[(X - b) 1{X >= b}]` for `X ~ N(m, v)`.
pub fn gaussian_upper_linear_moment(m: f64, v: f64, b: f64) -> Result<f64> {
    check_variance(v)?;
    Ok(upper_linear(m, v, b))
}

#[inline]
fn upper_quadratic(m: f64, v: f64, b: f64) -> f64 {
    if v == 0.0 {
        return if m >= b { (m - b) * (m - b) } else { 0.0 };
    }
    v * psi2((m - b) / v.sqrt())
}

#[inline]
fn upper_linear(m: f64, v: f64, b: f64) -> f64 {
    if v == 0.0 {
        return if m >= b { m - b } else { 0.0 };
    }
    let sd = v.sqrt();
    sd * psi1((m - b) / sd)
}

/// Mean, variance and dead-band edges of `Y^{t,y}(s)`.
#[derive(Debug, Clone, Copy)]
struct BridgeLaw {
    mean: f64,
    var: f64,
    band_lo: f64,
    band_hi: f64,
    gamma_ratio: f64,
}

fn bridge_law(params: &MarketParams, prior: &Prior, s: f64, t: f64, y: f64) -> BridgeLaw {
    let s2 = params.sigma_sq();
    let half = |g: f64| params.confidence * g.sqrt();
    if prior.is_degenerate() {
        return BridgeLaw {
            mean: y,
            var: 0.0,
            band_lo: params.r,
            band_hi: params.r,
            gamma_ratio: 1.0,
        };
    }
    let gs = gamma_unchecked(params, prior, s);
    let gt = gamma_unchecked(params, prior, t);
    BridgeLaw {
        mean: gs * y / gt + gs * params.r * (s - t) / s2,
        var: gs * gs * (s - t) / s2,
        band_lo: params.r - half(gs),
        band_hi: params.r + half(gs),
        gamma_ratio: gs / gt,
    }
}

fn check_window(params: &MarketParams, s: f64, t: f64) -> Result<()> {
    params.check_time(t)?;
    params.check_time(s)?;
    if s < t {
        return Err(Error::domain(format!("source time {s} precedes start time {t}")));
    }
    Ok(())
}

#[inline]
fn source_mean(law: &BridgeLaw, s2: f64) -> f64 {
    let upper = upper_quadratic(law.mean, law.var, law.band_hi);
    // lower branch by reflection X -> -X
    let lower = upper_quadratic(-law.mean, law.var, -law.band_lo);
    (upper + lower) / (2.0 * s2)
}

#[inline]
fn source_slope_mean(law: &BridgeLaw, s2: f64) -> f64 {
    let upper = upper_linear(law.mean, law.var, law.band_hi);
    let lower = upper_linear(-law.mean, law.var, -law.band_lo);
    (upper - lower) / s2
}

/// `E[g(s, Y^{t,y}(s))]`, the expected source along the belief diffusion.
pub fn expected_source(params: &MarketParams, prior: &Prior, s: f64, t: f64, y: f64) -> Result<f64> {
    check_window(params, s, t)?;
    Ok(source_mean(&bridge_law(params, prior, s, t, y), params.sigma_sq()))
}

/// `E[g_y(s, Y^{t,y}(s))] * gamma(s) / gamma(t)`, the integrand of `-f_y`.
pub fn expected_source_slope(params: &MarketParams, prior: &Prior, s: f64, t: f64, y: f64) -> Result<f64> {
    check_window(params, s, t)?;
    let law = bridge_law(params, prior, s, t, y);
    Ok(source_slope_mean(&law, params.sigma_sq()) * law.gamma_ratio)
}

/// Integrates `h(s)` over `[t, T]` in the variable `u = sqrt(s - t)`.
fn integrate_time<F: Fn(f64) -> f64>(t: f64, horizon: f64, cfg: &QuadratureConfig, h: F) -> Result<f64> {
    let span = horizon - t;
    if span <= 0.0 {
        return Ok(0.0);
    }
    let u_max = span.sqrt();
    let g = |u: f64| 2.0 * u * h(t + u * u);
    match cfg.rule {
        QuadratureRule::CompositeSimpson => Ok(simpson(&g, 0.0, u_max, cfg.n_time_nodes)),
        QuadratureRule::Adaptive => adaptive_simpson(&g, 0.0, u_max, cfg.abs_tol),
    }
}

fn simpson<F: Fn(f64) -> f64>(g: &F, lo: f64, hi: f64, nodes: usize) -> f64 {
    let intervals = nodes - 1;
    let h = (hi - lo) / intervals as f64;
    let mut acc = g(lo) + g(hi);
    for i in 1..intervals {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * g(lo + i as f64 * h);
    }
    acc * h / 3.0
}

const ADAPTIVE_MAX_DEPTH: u32 = 40;

fn adaptive_simpson<F: Fn(f64) -> f64>(g: &F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    fn step<F: Fn(f64) -> f64>(
        g: &F,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
        converged: &mut bool,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = g(lm);
        let frm = g(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        if depth == 0 {
            *converged = false;
            return left + right + delta / 15.0;
        }
        step(g, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, converged)
            + step(g, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, converged)
    }

    let fa = g(lo);
    let fb = g(hi);
    let fm = g(0.5 * (lo + hi));
    let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
    let mut converged = true;
    let est = step(g, lo, hi, fa, fm, fb, whole, tol, ADAPTIVE_MAX_DEPTH, &mut converged);
    if converged && est.is_finite() {
        Ok(est)
    } else {
        Err(Error::numerical(
            format!("adaptive quadrature did not reach abs_tol {tol}"),
            Some(est),
        ))
    }
}

/// `f(t, y)` for a certain drift (`sigma0^2 = 0`): the source is the full
/// quadratic `(r - y)^2 / (2 sigma^2)` and `Y` never moves.
pub fn degenerate_f(params: &MarketParams, t: f64, y: f64) -> (f64, f64) {
    let tau = params.horizon - t;
    let s2 = params.sigma_sq();
    let gap = params.r - y;
    (-tau * gap * gap / (2.0 * s2), tau * gap / s2)
}

/// `f(t, y)` by quadrature of the Feynman-Kac representation.
pub fn f_quadrature(params: &MarketParams, prior: &Prior, t: f64, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
    params.check_time(t)?;
    cfg.validate()?;
    if prior.is_degenerate() {
        return Ok(degenerate_f(params, t, y).0);
    }
    let s2 = params.sigma_sq();
    let integral = integrate_time(t, params.horizon, cfg, |s| {
        source_mean(&bridge_law(params, prior, s, t, y), s2)
    })?;
    Ok(-integral)
}

/// `f_y(t, y)` by quadrature of the differentiated representation.
pub fn fy_quadrature(params: &MarketParams, prior: &Prior, t: f64, y: f64, cfg: &QuadratureConfig) -> Result<f64> {
    params.check_time(t)?;
    cfg.validate()?;
    if prior.is_degenerate() {
        return Err(Error::domain(
            "gamma(t) = 0: f_y has no learning contribution under a degenerate prior",
        ));
    }
    let s2 = params.sigma_sq();
    let integral = integrate_time(t, params.horizon, cfg, |s| {
        let law = bridge_law(params, prior, s, t, y);
        source_slope_mean(&law, s2) * law.gamma_ratio
    })?;
    Ok(-integral)
}

/// Monte Carlo estimate of `f(t, y)` with [`MC_STEPS`] steps per path.
///
/// Path `i` draws its Brownian increments from stream `i` of a ChaCha
/// generator keyed by `seed`, so results are bit-identical for a fixed seed
/// whatever the number of worker threads.
pub fn f_mc(params: &MarketParams, prior: &Prior, t: f64, y: f64, n_paths: usize, seed: u64) -> Result<McEstimate> {
    f_mc_with_steps(params, prior, t, y, n_paths, MC_STEPS, seed)
}

pub fn f_mc_with_steps(
    params: &MarketParams,
    prior: &Prior,
    t: f64,
    y: f64,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<McEstimate> {
    params.check_time(t)?;
    if n_paths < 100 {
        return Err(Error::invalid(format!("f_mc needs at least 100 paths, got {n_paths}")));
    }
    if n_steps == 0 {
        return Err(Error::invalid("f_mc needs at least one time step"));
    }
    let span = params.horizon - t;
    if span <= 0.0 {
        return Ok(McEstimate { estimate: 0.0, std_error: 0.0 });
    }
    let dt = span / n_steps as f64;
    let sqrt_dt = dt.sqrt();
    let s2 = params.sigma_sq();

    // Y(s_j) = offset_j + scale_j * W_j with W_j = W(s_j) - W(t).
    struct Node {
        offset: f64,
        scale: f64,
        lo: f64,
        hi: f64,
        weight: f64,
    }
    let nodes: Vec<Node> = (0..=n_steps)
        .map(|j| {
            let s = t + j as f64 * dt;
            let law = bridge_law(params, prior, s, t, y);
            let scale = if prior.is_degenerate() {
                0.0
            } else {
                gamma_unchecked(params, prior, s) / params.sigma
            };
            let weight = if j == 0 || j == n_steps { 0.5 } else { 1.0 };
            Node {
                offset: law.mean,
                scale,
                lo: law.band_lo,
                hi: law.band_hi,
                weight,
            }
        })
        .collect();

    let source = |node: &Node, w: f64| {
        let yy = node.offset + node.scale * w;
        let above = (yy - node.hi).max(0.0);
        let below = (node.lo - yy).max(0.0);
        (above * above + below * below) / (2.0 * s2)
    };

    let values: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let mut w = 0.0;
            let mut acc = nodes[0].weight * source(&nodes[0], 0.0);
            for node in &nodes[1..] {
                let z: f64 = StandardNormal.sample(&mut rng);
                w += sqrt_dt * z;
                acc += node.weight * source(node, w);
            }
            -acc * dt
        })
        .collect();

    let (mean, var) = mean_and_variance(&values);
    Ok(McEstimate {
        estimate: mean,
        std_error: (var / n_paths as f64).sqrt(),
    })
}

/// Exact `f1, f2, f3` at time `t` for a zero-width confidence set.
pub fn closed_form_a0(params: &MarketParams, prior: &Prior, t: f64) -> Result<A0Coefficients> {
    params.check_time(t)?;
    if prior.is_degenerate() {
        return Err(Error::domain(
            "closed_form_a0 needs sigma0_sq > 0; use the Merton strategy for a certain drift",
        ));
    }
    let g_t = gamma_unchecked(params, prior, t);
    let g_end = gamma_unchecked(params, prior, params.horizon);
    let tau = params.horizon - t;
    let r = params.r;
    let s2 = params.sigma_sq();
    let f1 = (g_end - g_t) / (2.0 * g_t * g_t);
    let f2 = -2.0 * r * f1;
    let f3 = r * r / (s2 * s2) * g_end * tau * tau / 2.0 - (r * r - g_end) * tau / (2.0 * s2)
        - 0.5 * (g_t / g_end).ln();
    Ok(A0Coefficients { f1, f2, f3 })
}

/// Classical Merton position `(y0 - r) / (k e^{r(T-t)} sigma^2)` for a known drift `y0`.
pub fn merton_strategy(params: &MarketParams, prior: &Prior, t: f64) -> Result<f64> {
    params.check_time(t)?;
    Ok(params.demand_scale(t) * (prior.y0 - params.r))
}

/// Bayesian (ambiguity-neutral) position `gamma(T)/gamma(t) (y - r) / (k e^{r(T-t)} sigma^2)`.
pub fn partial_info_strategy(params: &MarketParams, prior: &Prior, t: f64, y: f64) -> Result<f64> {
    params.check_time(t)?;
    let ratio = if prior.is_degenerate() {
        1.0
    } else {
        gamma_unchecked(params, prior, params.horizon) / gamma_unchecked(params, prior, t)
    };
    Ok(ratio * params.demand_scale(t) * (y - params.r))
}

/// Pointwise `(f, f_y)` straight from quadrature, usable wherever a
/// solution surface is expected.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureOracle {
    pub params: MarketParams,
    pub prior: Prior,
    pub cfg: QuadratureConfig,
}

impl QuadratureOracle {
    pub fn new(params: MarketParams, prior: Prior, cfg: QuadratureConfig) -> Self {
        Self { params, prior, cfg }
    }

    pub fn value(&self, t: f64, y: f64) -> Result<(f64, f64)> {
        if self.prior.is_degenerate() {
            self.params.check_time(t)?;
            return Ok(degenerate_f(&self.params, t, y));
        }
        let f = f_quadrature(&self.params, &self.prior, t, y, &self.cfg)?;
        let fy = fy_quadrature(&self.params, &self.prior, t, y, &self.cfg)?;
        Ok((f, fy))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{normal_cdf, normal_pdf};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reference() -> (MarketParams, Prior) {
        (MarketParams::reference(), Prior::reference())
    }

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    /// Plain Monte Carlo of `E[h(X)]`, `X ~ N(m, v)`, returning (mean, std error).
    fn mc_moment(m: f64, v: f64, n: usize, h: impl Fn(f64) -> f64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sd = v.sqrt();
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                h(m + sd * z)
            })
            .collect();
        let (mean, var) = mean_and_variance(&samples);
        (mean, (var / n as f64).sqrt())
    }

    #[test]
    fn quadratic_moment_examples() {
        assert!((gaussian_upper_quadratic_moment(0.3, 1.0, 0.3).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(gaussian_upper_quadratic_moment(0.0, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(gaussian_upper_quadratic_moment(3.0, 0.0, 1.0).unwrap(), 4.0);
        let v = gaussian_upper_quadratic_moment(1.0, 1.0, 0.0).unwrap();
        assert!((v - 1.92466).abs() < 1e-4);
        let (mc, se) = mc_moment(1.0, 1.0, 10_000_000, |x| if x >= 0.0 { x * x } else { 0.0 });
        assert!((v - mc).abs() < 4.0 * se, "closed {v} mc {mc} se {se}");
    }

    #[test]
    fn linear_moment_examples() {
        let v = gaussian_upper_linear_moment(0.7, 1.0, 0.7).unwrap();
        assert!((v - 0.398942).abs() < 1e-6);
        assert_eq!(gaussian_upper_linear_moment(2.0, 0.0, 1.0).unwrap(), 1.0);
        let v = gaussian_upper_linear_moment(0.0, 4.0, 1.0).unwrap();
        let expected = 2.0 * normal_pdf(0.5) - normal_cdf(-0.5);
        assert!((v - expected).abs() < 1e-14);
        let (mc, se) = mc_moment(0.0, 4.0, 10_000_000, |x| (x - 1.0).max(0.0));
        assert!((v - mc).abs() < 4.0 * se);
    }

    #[test]
    fn moments_reject_negative_variance() {
        assert!(matches!(gaussian_upper_quadratic_moment(0.0, -1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(gaussian_upper_linear_moment(0.0, -1e-9, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn expected_source_trivial_cases() {
        let (m, p) = reference();
        assert_eq!(expected_source(&m, &p, 0.2, 0.2, m.r).unwrap(), 0.0);
        let zero_band = MarketParams { confidence: 0.0, ..m };
        let y = 0.31;
        let v = expected_source(&zero_band, &p, 0.2, 0.2, y).unwrap();
        assert!((v - (m.r - y).powi(2) / (2.0 * m.sigma_sq())).abs() < 1e-15);
        assert!(matches!(expected_source(&m, &p, 0.1, 0.2, y), Err(Error::Domain(_))));
    }

    /// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
    fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
        }
        out
    }

    #[test]
    fn expected_source_matches_brute_force_integration() {
        // Integrate g against the normal density, split at the band edges so
        // every panel is smooth, with 64-point Gauss-Legendre per panel.
        let (m, p) = reference();
        let (t, y, s) = (0.0, 0.174, 0.25);
        let gs = gamma_unchecked(&m, &p, s);
        let gt = gamma_unchecked(&m, &p, t);
        let mean = gs * y / gt + gs * m.r * (s - t) / m.sigma_sq();
        let sd = (gs * gs * (s - t) / m.sigma_sq()).sqrt();
        let lo = m.r - m.confidence * gs.sqrt();
        let hi = m.r + m.confidence * gs.sqrt();
        let g = |x: f64| {
            let a = (x - hi).max(0.0);
            let b = (lo - x).max(0.0);
            (a * a + b * b) / (2.0 * m.sigma_sq())
        };
        let density = |x: f64| normal_pdf((x - mean) / sd) / sd;
        let rule = gauss_legendre(64);
        let mut cuts = vec![mean - 14.0 * sd, lo, hi, mean + 14.0 * sd];
        cuts.retain(|c| *c >= mean - 14.0 * sd && *c <= mean + 14.0 * sd);
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut brute = 0.0;
        for w in cuts.windows(2) {
            let (a, b) = (w[0], w[1]);
            // sub-panels keep the polynomial degree the rule sees small
            let panels = 16;
            let h = (b - a) / panels as f64;
            for k in 0..panels {
                let (pa, pb) = (a + k as f64 * h, a + (k + 1) as f64 * h);
                let half = 0.5 * (pb - pa);
                let mid = 0.5 * (pa + pb);
                for &(x, wt) in &rule {
                    let xx = mid + half * x;
                    brute += half * wt * g(xx) * density(xx);
                }
            }
        }
        let closed = expected_source(&m, &p, s, t, y).unwrap();
        assert!((closed - brute).abs() < 1e-8, "closed {closed} brute {brute}");
        assert!(((closed - brute) / closed).abs() < 1e-9);
    }

    #[test]
    fn f_vanishes_at_horizon() {
        let (m, p) = reference();
        assert_eq!(f_quadrature(&m, &p, m.horizon, 0.3, &cfg()).unwrap(), 0.0);
        assert_eq!(fy_quadrature(&m, &p, m.horizon, 0.3, &cfg()).unwrap(), 0.0);
        let mc = f_mc(&m, &p, m.horizon, 0.3, 100, 1).unwrap();
        assert_eq!((mc.estimate, mc.std_error), (0.0, 0.0));
    }

    #[test]
    fn zero_band_quadrature_matches_closed_form() {
        let (m, p) = reference();
        let m0 = MarketParams { confidence: 0.0, ..m };
        for &t in &[0.0, 0.1, 0.3, 0.45] {
            let c = closed_form_a0(&m0, &p, t).unwrap();
            for &y in &[-0.5, 0.0, 0.174, 0.6] {
                let q = f_quadrature(&m0, &p, t, y, &cfg()).unwrap();
                assert!((q - c.value(y)).abs() < 1e-8, "t={t} y={y}");
                let qy = fy_quadrature(&m0, &p, t, y, &cfg()).unwrap();
                assert!((qy - c.slope(y)).abs() < 1e-8, "t={t} y={y}");
            }
        }
    }

    #[test]
    fn fy_vanishes_at_risk_free_rate() {
        let (m, p) = reference();
        for &t in &[0.0, 0.2, 0.49] {
            let v = fy_quadrature(&m, &p, t, m.r, &cfg()).unwrap();
            assert!(v.abs() < 1e-12, "t={t} fy={v}");
        }
    }

    #[test]
    fn fy_matches_finite_difference_of_f() {
        let (m, p) = reference();
        let h = 1e-4;
        let (t, y) = (0.0, 0.3);
        let fy = fy_quadrature(&m, &p, t, y, &cfg()).unwrap();
        let fd = (f_quadrature(&m, &p, t, y + h, &cfg()).unwrap()
            - f_quadrature(&m, &p, t, y - h, &cfg()).unwrap())
            / (2.0 * h);
        assert!(fy < 0.0);
        assert!((fy - fd).abs() < 1e-5, "fy {fy} fd {fd}");
    }

    #[test]
    fn fy_rejects_degenerate_prior() {
        let (m, _) = reference();
        let flat = Prior::new(0.1, 0.0).unwrap();
        assert!(matches!(fy_quadrature(&m, &flat, 0.0, 0.1, &cfg()), Err(Error::Domain(_))));
    }

    #[test]
    fn adaptive_rule_agrees_with_simpson() {
        let (m, p) = reference();
        let adaptive = QuadratureConfig {
            rule: QuadratureRule::Adaptive,
            abs_tol: 1e-13,
            ..cfg()
        };
        for &y in &[-0.3, 0.174, 0.6] {
            let a = f_quadrature(&m, &p, 0.0, y, &adaptive).unwrap();
            let s = f_quadrature(&m, &p, 0.0, y, &cfg()).unwrap();
            assert!((a - s).abs() < 1e-10, "y={y}: {a} vs {s}");
        }
    }

    #[test]
    fn adaptive_rule_reports_failure_with_estimate() {
        let g = |u: f64| if u > 0.5 { 1.0 } else { 0.0 };
        match adaptive_simpson(&g, 0.0, 1.0, 1e-300) {
            Err(Error::Numerical { last_estimate: Some(e), .. }) => assert!((e - 0.5).abs() < 1e-6),
            other => panic!("expected numerical failure, got {other:?}"),
        }
    }

    #[test]
    fn quadrature_config_validation() {
        let bad = QuadratureConfig { n_time_nodes: 200, ..cfg() };
        assert!(bad.validate().is_err());
        let bad = QuadratureConfig { abs_tol: 0.0, ..cfg() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn closed_form_examples() {
        let (m, p) = reference();
        let c = closed_form_a0(&m, &p, m.horizon).unwrap();
        assert_eq!((c.f1, c.f2), (0.0, 0.0));
        assert!(c.f3.abs() < 1e-15);
        let c = closed_form_a0(&m, &p, 0.0).unwrap();
        assert!((c.f1 + 5.0093).abs() < 1e-3);
        assert!((c.f2 - 0.18034).abs() < 1e-4);
        assert!(c.f1 <= 0.0);
        let flat = Prior::new(0.1, 0.0).unwrap();
        assert!(closed_form_a0(&m, &flat, 0.0).is_err());
    }

    #[test]
    fn closed_form_satisfies_ode_system() {
        let (m, p) = reference();
        let (r, s2) = (m.r, m.sigma_sq());
        let h = 1e-5;
        for &t in &[0.05, 0.2, 0.35, 0.45] {
            let g = gamma_unchecked(&m, &p, t);
            let c = closed_form_a0(&m, &p, t).unwrap();
            let up = closed_form_a0(&m, &p, t + h).unwrap();
            let dn = closed_form_a0(&m, &p, t - h).unwrap();
            let d1 = (up.f1 - dn.f1) / (2.0 * h);
            let d2 = (up.f2 - dn.f2) / (2.0 * h);
            let d3 = (up.f3 - dn.f3) / (2.0 * h);
            let res1 = d1 - (2.0 * g / s2 * c.f1 + 1.0 / (2.0 * s2));
            let res2 = d2 - (g / s2 * c.f2 - (r + 2.0 * r * c.f1 * g) / s2);
            let res3 = d3 - (r * r / (2.0 * s2) - (r * c.f2 * g + c.f1 * g * g) / s2);
            assert!(res1.abs() < 1e-6 && res2.abs() < 1e-6 && res3.abs() < 1e-6, "t={t}");
            assert!((c.f2 + 2.0 * r * c.f1).abs() < 1e-15);
        }
    }

    #[test]
    fn merton_and_partial_info_examples() {
        let (m, p) = reference();
        assert!((merton_strategy(&m, &p, m.horizon).unwrap() - 3.43847).abs() < 1e-4);
        assert!((merton_strategy(&m, &p, 0.0).unwrap() - 3.40766).abs() < 1e-4);
        let at_r = Prior { y0: m.r, ..p };
        assert_eq!(merton_strategy(&m, &at_r, 0.0).unwrap(), 0.0);

        assert!((partial_info_strategy(&m, &p, 0.0, 0.174).unwrap() - 3.0977).abs() < 1e-3);
        assert_eq!(partial_info_strategy(&m, &p, 0.1, m.r).unwrap(), 0.0);
        let y = 0.25;
        let at_end = partial_info_strategy(&m, &p, m.horizon, y).unwrap();
        let merton = merton_strategy(&m, &Prior { y0: y, ..p }, m.horizon).unwrap();
        assert!((at_end - merton).abs() < 1e-15);
    }

    #[test]
    fn mc_is_deterministic_and_rejects_few_paths() {
        let (m, p) = reference();
        let a = f_mc(&m, &p, 0.1, 0.4, 500, 42).unwrap();
        let b = f_mc(&m, &p, 0.1, 0.4, 500, 42).unwrap();
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
        assert!(f_mc(&m, &p, 0.1, 0.4, 99, 42).is_err());
    }

    #[test]
    fn mc_does_not_depend_on_thread_count() {
        let (m, p) = reference();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| f_mc(&m, &p, 0.0, 0.5, 2_000, 9).unwrap())
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one.estimate.to_bits(), four.estimate.to_bits());
    }

    #[test]
    fn mc_matches_closed_form_without_ambiguity() {
        let (m, p) = reference();
        let m0 = MarketParams { confidence: 0.0, ..m };
        let exact = closed_form_a0(&m0, &p, 0.0).unwrap().value(0.174);
        let mc = f_mc(&m0, &p, 0.0, 0.174, 100_000, 2024).unwrap();
        assert!((mc.estimate - exact).abs() < 3.0 * mc.std_error, "{mc:?} vs {exact}");
    }

    #[test]
    fn degenerate_prior_has_closed_form() {
        let (m, _) = reference();
        let flat = Prior::new(0.2, 0.0).unwrap();
        let q = f_quadrature(&m, &flat, 0.1, 0.2, &cfg()).unwrap();
        let expected = -0.4 * (m.r - 0.2f64).powi(2) / (2.0 * m.sigma_sq());
        assert!((q - expected).abs() < 1e-15);
        let mc = f_mc(&m, &flat, 0.1, 0.2, 100, 3).unwrap();
        assert!((mc.estimate - expected).abs() < 1e-12);
        assert!(mc.std_error.abs() < 1e-12);
    }
}
