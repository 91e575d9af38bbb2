//! Deterministic reference for the single-basket logit-normal posterior.

use crate::error::{Error, Result};
use crate::model::{expit, logit};

use super::sampler::softplus;

const HALF_WIDTH_SDS: f64 = 12.0;
const MIN_PANELS: usize = 2_048;
const MAX_PANELS: usize = 1 << 22;
const TOLERANCE: f64 = 1e-7;

/// Composite Simpson rule for `exp(f(x) - shift)` on `[a, b]`.
fn simpson(f: &impl Fn(f64) -> f64, shift: f64, a: f64, b: f64, panels: usize) -> f64 {
    if b <= a {
        return 0.0;
    }
    let panels = panels + panels % 2;
    let h = (b - a) / panels as f64;
    let g = |x: f64| (f(x) - shift).exp();
    let mut acc = g(a) + g(b);
    for i in 1..panels {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * g(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// `P(theta > logit(q0) | y, n)` under `y ~ Binomial(n, expit(theta))` and
/// `theta ~ N(prior_mean, prior_var)`, by composite Simpson quadrature over
/// `prior_mean +/- 12 sd`, doubling the panel count from 2048 until
/// successive estimates agree to 1e-7.
pub fn oracle_independent(y: u32, n: u32, prior_mean: f64, prior_var: f64, q0: f64) -> Result<f64> {
    if y > n {
        return Err(Error::domain(format!("y = {y} exceeds n = {n}")));
    }
    if !(prior_var > 0.0 && prior_var.is_finite()) || !prior_mean.is_finite() {
        return Err(Error::domain("prior mean must be finite and variance positive"));
    }
    if !(q0 > 0.0 && q0 < 1.0) {
        return Err(Error::domain(format!("q0 must lie in (0, 1), got {q0}")));
    }
    let (yf, nf) = (y as f64, n as f64);
    let log_post = |t: f64| {
        let d = t - prior_mean;
        yf * t - nf * softplus(t) - d * d / (2.0 * prior_var)
    };

    let sd = prior_var.sqrt();
    let lo = prior_mean - HALF_WIDTH_SDS * sd;
    let hi = prior_mean + HALF_WIDTH_SDS * sd;
    let cut = logit(q0).clamp(lo, hi);

    // The log posterior is strictly concave; Newton from the prior mean finds
    // the mode, which is used to keep the exponentials in range.
    let mut mode = prior_mean;
    for _ in 0..100 {
        let p = expit(mode);
        let grad = yf - nf * p - (mode - prior_mean) / prior_var;
        let hess = -nf * p * (1.0 - p) - 1.0 / prior_var;
        let step = grad / hess;
        mode -= step;
        if step.abs() < 1e-12 {
            break;
        }
    }
    let shift = log_post(mode.clamp(lo, hi));

    let estimate = |panels: usize| {
        // split the panels between the two pieces by length, at least 2 each
        let frac = (cut - lo) / (hi - lo);
        let left_panels = ((panels as f64 * frac).round() as usize).max(2);
        let right_panels = panels.saturating_sub(left_panels).max(2);
        let below = simpson(&log_post, shift, lo, cut, left_panels);
        let above = simpson(&log_post, shift, cut, hi, right_panels);
        above / (below + above)
    };

    let mut panels = MIN_PANELS;
    let mut prev = estimate(panels);
    while panels < MAX_PANELS {
        panels *= 2;
        let next = estimate(panels);
        if !next.is_finite() {
            return Err(Error::Quadrature(format!("non-finite estimate at {panels} panels")));
        }
        if (next - prev).abs() < TOLERANCE {
            return Ok(next.clamp(0.0, 1.0));
        }
        prev = next;
    }
    Err(Error::Quadrature(format!(
        "no agreement to {TOLERANCE} within {MAX_PANELS} panels (y = {y}, n = {n})"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOGIT_02: f64 = -1.386_294_361_119_890_6;

    #[test]
    fn no_data_is_half() {
        let p = oracle_independent(0, 0, LOGIT_02, 100.0, 0.2).unwrap();
        assert!((p - 0.5).abs() < 1e-6, "{p}");
    }

    #[test]
    fn overwhelming_evidence_approaches_one() {
        let p = oracle_independent(500, 500, LOGIT_02, 100.0, 0.2).unwrap();
        assert!(p > 1.0 - 1e-9);
        let p = oracle_independent(0, 500, LOGIT_02, 100.0, 0.2).unwrap();
        assert!(p < 1e-9);
    }

    #[test]
    fn regression_value_four_of_twenty_four() {
        let p = oracle_independent(4, 24, LOGIT_02, 100.0, 0.2).unwrap();
        assert!((p - REGRESSION_4_OF_24).abs() < 1e-6, "{p:.10}");
    }

    // Frozen; cross-checked against scipy.integrate.quad at rtol 1e-13.
    const REGRESSION_4_OF_24: f64 = 0.296_944_354_870;

    #[test]
    fn monotone_in_responses() {
        for n in [14u32, 24] {
            let mut prev = -1.0;
            for y in 0..=n {
                let p = oracle_independent(y, n, LOGIT_02, 100.0, 0.2).unwrap();
                assert!(p > prev);
                prev = p;
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(oracle_independent(5, 4, 0.0, 1.0, 0.2).is_err());
        assert!(oracle_independent(1, 4, 0.0, 0.0, 0.2).is_err());
        assert!(oracle_independent(1, 4, 0.0, 1.0, 1.0).is_err());
    }
}
