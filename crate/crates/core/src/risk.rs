//! CVaR in the forms used throughout the crate.
//!
//! CVaR here is the *left*-tail measure: `CVaR_α(X)` is the mean of the worst
//! `1 − α` fraction of outcomes, so `α = 0` is the plain expectation and larger
//! `α` is more risk averse.

use crate::error::{invalid, Result};

/// Tolerance used to decide whether `1/(1-α)` is an integer.
pub const INTEGRALITY_TOL: f64 = 1e-9;

/// Standard normal helpers.
pub mod normal {
    use statrs::function::erf::{erfc, erfc_inv};

    const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

    pub fn pdf(x: f64) -> f64 {
        FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
    }

    pub fn cdf(x: f64) -> f64 {
        0.5 * erfc(-x / std::f64::consts::SQRT_2)
    }

    /// Inverse CDF. Returns `-inf` at 0 and `+inf` at 1.
    pub fn quantile(p: f64) -> f64 {
        if p <= 0.0 {
            f64::NEG_INFINITY
        } else if p >= 1.0 {
            f64::INFINITY
        } else {
            -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
        }
    }

    /// `φ(Φ⁻¹(α))`, the density at the α-quantile; zero at α = 0.
    pub fn density_at_quantile(alpha: f64) -> f64 {
        if alpha <= 0.0 || alpha >= 1.0 {
            0.0
        } else {
            pdf(quantile(alpha))
        }
    }
}

/// Risk level and the posterior sample size used by the sampling-based
/// estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskConfig {
    alpha: f64,
    n: usize,
}

impl RiskConfig {
    /// Risk level `alpha` with the derived sample size `n = ⌈1/(1-α)⌉`.
    pub fn new(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(RiskConfig {
            alpha,
            n: derived_sample_size(alpha),
        })
    }

    pub fn with_sample_size(alpha: f64, n: usize) -> Result<Self> {
        check_alpha(alpha)?;
        if n == 0 {
            return invalid("sample size must be positive");
        }
        Ok(RiskConfig { alpha, n })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sample_size(&self) -> usize {
        self.n
    }

    /// Whether `1/(1-α)` is an integer (within [`INTEGRALITY_TOL`]).
    pub fn has_integral_inverse(&self) -> bool {
        integral_inverse(self.alpha).is_some()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..1.0).contains(&alpha) {
        return invalid(format!("risk level {alpha} outside [0, 1)"));
    }
    Ok(())
}

fn integral_inverse(alpha: f64) -> Option<usize> {
    let inv = 1.0 / (1.0 - alpha);
    let rounded = inv.round();
    ((inv - rounded).abs() <= INTEGRALITY_TOL).then_some(rounded as usize)
}

/// `⌈1/(1-α)⌉`, with near-integers snapped so that e.g. α = 0.8 gives 5.
pub fn derived_sample_size(alpha: f64) -> usize {
    match integral_inverse(alpha) {
        Some(n) => n.max(1),
        None => (1.0 / (1.0 - alpha)).ceil() as usize,
    }
}

/// CVaR of the empirical distribution of `samples` at level `alpha`.
///
/// This is the maximum over `x` of `x − Σ(x − Zᵢ)⁺ / (n(1−α))`, evaluated in
/// closed form from the order statistics.
pub fn empirical_cvar(samples: &[f64], alpha: f64) -> Result<f64> {
    if samples.is_empty() {
        return invalid("empirical CVaR of an empty sample");
    }
    check_alpha(alpha)?;
    let mut buf = samples.to_vec();
    Ok(empirical_cvar_in_place(&mut buf, alpha))
}

/// Same as [`empirical_cvar`] but reorders `buf` instead of allocating.
/// `buf` must be nonempty and `alpha` in `[0, 1)`.
pub fn empirical_cvar_in_place(buf: &mut [f64], alpha: f64) -> f64 {
    let n = buf.len();
    debug_assert!(n > 0);
    if n == 1 {
        return buf[0];
    }
    // Evaluated as x − Σ(x − Zᵢ)⁺/m at the maximiser x = Z₍ₖ₊₁₎, so that
    // constant samples come back unchanged.
    let m = n as f64 * (1.0 - alpha);
    let k = m.floor() as usize;
    if k >= n {
        let x = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        return x - buf.iter().map(|z| x - z).sum::<f64>() / m;
    }
    let (lower, pivot, _) = buf.select_nth_unstable_by(k, f64::total_cmp);
    let x = *pivot;
    x - lower.iter().map(|z| x - z).sum::<f64>() / m
}

/// Order-statistic CVaR estimator: the smallest sample when `1/(1-α)` is an
/// integer, otherwise the second smallest.
pub fn modified_cvar(samples: &[f64], risk: &RiskConfig) -> Result<f64> {
    if samples.len() != risk.n {
        return invalid(format!(
            "modified CVaR expects {} samples, got {}",
            risk.n,
            samples.len()
        ));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    if risk.has_integral_inverse() {
        Ok(sorted[0])
    } else if sorted.len() >= 2 {
        Ok(sorted[1])
    } else {
        invalid("second order statistic needs at least two samples")
    }
}

/// Left-tail CVaR of `N(mu, sigma²)`: `mu − sigma·φ(Φ⁻¹(α))/(1−α)`.
pub fn normal_cvar(mu: f64, sigma: f64, alpha: f64) -> f64 {
    if sigma == 0.0 || alpha <= 0.0 {
        return mu;
    }
    mu - sigma * normal::density_at_quantile(alpha) / (1.0 - alpha)
}

/// Left-tail CVaR of `min{1, max{Y, 0}}` with `Y ~ N(mu, sigma²)`.
///
/// Integrates the three-piece quantile function of the clipped variable over
/// the tail `(0, 1−α]`. The middle piece is integrated in normal-score space,
/// where the integrand `(mu + sigma·y)·φ(y)` is smooth.
pub fn truncated_normal_cvar(mu: f64, sigma: f64, alpha: f64) -> f64 {
    if sigma <= 0.0 {
        return mu.clamp(0.0, 1.0);
    }
    let tail = 1.0 - alpha;
    let y_tail = normal::quantile(tail).min(SCORE_LIMIT);
    let y_zero = (-mu / sigma).max(-SCORE_LIMIT);
    let y_one = (1.0 - mu) / sigma;

    let mid_hi = y_tail.min(y_one);
    let middle = if mid_hi > y_zero {
        integrate(|y| (mu + sigma * y) * normal::pdf(y), y_zero, mid_hi)
    } else {
        0.0
    };
    // Quantiles above the clip at 1 contribute 1 per unit of β.
    let upper = if y_tail > y_one {
        normal::cdf(y_tail.min(SCORE_LIMIT)) - normal::cdf(y_one.max(y_zero))
    } else {
        0.0
    };
    (middle + upper.max(0.0)) / tail
}

const SCORE_LIMIT: f64 = 40.0;
const QUAD_TOL: f64 = 1e-13;

/// Adaptive Simpson over unit-width panels.
fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let panels = ((b - a).ceil() as usize).max(1);
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let lo = a + i as f64 * h;
            let hi = if i + 1 == panels { b } else { lo + h };
            let (flo, fhi, fmid) = (f(lo), f(hi), f(0.5 * (lo + hi)));
            let whole = (hi - lo) / 6.0 * (flo + 4.0 * fmid + fhi);
            simpson(&f, lo, hi, flo, fmid, fhi, whole, QUAD_TOL / panels as f64, 48)
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
fn simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}
