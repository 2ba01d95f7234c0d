//! Small numerical kernels shared by the oracles, the PDE solver and the simulator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use libm::erfc;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

// Below this the direct partial-moment formulas lose digits to cancellation.
const TAIL_SWITCH: f64 = -5.0;
const CF_DEPTH: usize = 120;

/// Returns `(c1, c2, R)` from the Mills-ratio continued fraction at `x > 0`:
/// `c_k = k / (x + c_{k+1})`, `R(x) = 1 / (x + c1) = Phi(-x) / phi(x)`.
fn mills_terms(x: f64) -> (f64, f64, f64) {
    let mut c = 0.0;
    let mut c2 = 0.0;
    for k in (1..=CF_DEPTH).rev() {
        c = k as f64 / (x + c);
        if k == 2 {
            c2 = c;
        }
    }
    (c, c2, 1.0 / (x + c))
}

/// `E[(Z + d)^+]` for standard normal `Z`, i.e. `d Phi(d) + phi(d)`.
pub fn psi1(d: f64) -> f64 {
    if d < TAIL_SWITCH {
        let x = -d;
        let (c1, _, r) = mills_terms(x);
        normal_pdf(x) * c1 * r
    } else {
        d * normal_cdf(d) + normal_pdf(d)
    }
}

/// `E[((Z + d)^+)^2]` for standard normal `Z`, i.e. `(1 + d^2) Phi(d) + d phi(d)`.
pub fn psi2(d: f64) -> f64 {
    if d < TAIL_SWITCH {
        let x = -d;
        let (c1, c2, r) = mills_terms(x);
        normal_pdf(x) * c2 * c1 * r
    } else {
        (1.0 + d * d) * normal_cdf(d) + d * normal_pdf(d)
    }
}

/// Neumaier-compensated sum; order-stable for a fixed input order.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Sample mean and unbiased sample variance (two-pass, compensated).
pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(values.iter().copied()) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, ss / (n - 1) as f64)
}

/// Generator for Monte Carlo path `index`: one ChaCha stream per path, so the
/// draws of a path do not depend on how paths are scheduled across threads.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Solves a tridiagonal system in place (Thomas algorithm).
///
/// `lower[i]` multiplies `x[i-1]` in row `i` (`lower[0]` unused), `upper[i]`
/// multiplies `x[i+1]` (`upper[n-1]` unused). `rhs` is overwritten with the
/// solution. Returns `false` on a zero pivot.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64], scratch: &mut Vec<f64>) -> bool {
    let n = diag.len();
    scratch.clear();
    scratch.resize(n, 0.0);
    let mut pivot = diag[0];
    if pivot == 0.0 {
        return false;
    }
    rhs[0] /= pivot;
    for i in 1..n {
        scratch[i] = upper[i - 1] / pivot;
        pivot = diag[i] - lower[i] * scratch[i];
        if pivot == 0.0 {
            return false;
        }
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i + 1] * rhs[i + 1];
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        let tail = normal_cdf(-10.0);
        assert!(((tail - 7.619_853_024_160_527e-24) / tail).abs() < 1e-12);
    }

    #[test]
    fn tail_forms_are_continuous_at_switch() {
        let below = TAIL_SWITCH - 1e-12;
        let above = TAIL_SWITCH + 1e-12;
        assert!(((psi1(below) - psi1(above)) / psi1(above)).abs() < 1e-10);
        assert!(((psi2(below) - psi2(above)) / psi2(above)).abs() < 1e-10);
    }

    #[test]
    fn tail_forms_match_asymptotics() {
        // psi1(-x) ~ phi(x)/x^2 (1 - 3/x^2 + 15/x^4); psi2(-x) ~ 2 phi(x)/x^3 (1 - 6/x^2 + 45/x^4)
        let x = 30.0f64;
        let a1 = normal_pdf(x) / (x * x) * (1.0 - 3.0 / (x * x) + 15.0 / x.powi(4));
        let a2 = 2.0 * normal_pdf(x) / x.powi(3) * (1.0 - 6.0 / (x * x) + 45.0 / x.powi(4));
        assert!(((psi1(-x) - a1) / a1).abs() < 1e-6);
        assert!(((psi2(-x) - a2) / a2).abs() < 1e-6);
        assert!(psi1(-x) > 0.0 && psi2(-x) > 0.0);
    }

    #[test]
    fn thomas_solves_small_system() {
        let lower = [0.0, -1.0, -1.0, -1.0];
        let diag = [2.0, 2.0, 2.0, 2.0];
        let upper = [-1.0, -1.0, -1.0, 0.0];
        let x = [1.0, -2.0, 0.5, 3.0];
        let mut rhs: Vec<f64> = (0..4)
            .map(|i| {
                let mut v = diag[i] * x[i];
                if i > 0 {
                    v += lower[i] * x[i - 1];
                }
                if i < 3 {
                    v += upper[i] * x[i + 1];
                }
                v
            })
            .collect();
        let mut scratch = Vec::new();
        assert!(solve_tridiagonal(&lower, &diag, &upper, &mut rhs, &mut scratch));
        for (a, b) in rhs.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }

    #[test]
    fn path_streams_differ_and_repeat() {
        use rand::RngCore;
        let a = path_rng(7, 0).next_u64();
        let b = path_rng(7, 1).next_u64();
        assert_ne!(a, b);
        assert_eq!(a, path_rng(7, 0).next_u64());
    }
}
