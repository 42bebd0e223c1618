//! Small numeric helpers shared across modules: log-binomials, binomial
//! laws, log-sum-exp, confidence intervals and slope regression.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_FACT_TABLE: usize = 1 << 16;

fn ln_factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = Vec::with_capacity(LN_FACT_TABLE + 1);
        table.push(0.0);
        // Kahan-compensated running sum of ln j.
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for j in 1..=LN_FACT_TABLE {
            let y = (j as f64).ln() - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
            table.push(sum);
        }
        table
    })
}

/// ln(n!)
pub fn ln_factorial(n: u64) -> f64 {
    if (n as usize) <= LN_FACT_TABLE {
        ln_factorial_table()[n as usize]
    } else {
        statrs::function::gamma::ln_gamma(n as f64 + 1.0)
    }
}

/// ln C(n, k); `-inf` when k > n.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    let k = k.min(n - k);
    if k == 0 {
        return 0.0;
    }
    if k <= 32 {
        // Direct product is more accurate than factorial differences here.
        let mut acc = 0.0;
        for j in 1..=k {
            acc += ((n - k + j) as f64 / j as f64).ln();
        }
        return acc;
    }
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// x·ln(y) with the convention 0·ln 0 = 0.
#[inline]
pub fn xlny(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// ln P{Binomial(n, prob) = i}
pub fn ln_binomial_pmf(n: u64, i: u64, prob: f64) -> f64 {
    if i > n {
        return f64::NEG_INFINITY;
    }
    ln_choose(n, i) + xlny(i as f64, prob) + xlny((n - i) as f64, 1.0 - prob)
}

/// Full probability vector of Binomial(n, prob), indices 0..=n.
pub fn binomial_pmf(n: usize, prob: f64) -> Vec<f64> {
    if prob <= 0.0 {
        let mut v = vec![0.0; n + 1];
        v[0] = 1.0;
        return v;
    }
    if prob >= 1.0 {
        let mut v = vec![0.0; n + 1];
        v[n] = 1.0;
        return v;
    }
    (0..=n)
        .map(|i| ln_binomial_pmf(n as u64, i as u64, prob).exp())
        .collect()
}

/// Numerically stable ln Σ exp(terms).
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let s: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
    max + s.ln()
}

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for `hits` successes out of `trials`.
pub fn wilson_interval(hits: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let phat = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (phat + z2 / (2.0 * n)) / denom;
    let half = z * (phat * (1.0 - phat) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    (
        (centre - half).max(0.0).min(phat),
        (centre + half).min(1.0).max(phat),
    )
}

/// Ordinary least-squares slope of y on x.
pub fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (xi, yi) in x.iter().zip(y) {
        sxy += (xi - mx) * (yi - my);
        sxx += (xi - mx) * (xi - mx);
    }
    sxy / sxx
}

/// Geometric grid of scales from `hi` down to `lo` with `per_decade` points
/// per factor of ten (both ends included).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometricGrid {
    pub hi: f64,
    pub lo: f64,
    pub per_decade: usize,
}

impl GeometricGrid {
    pub fn new(hi: f64, lo: f64, per_decade: usize) -> Self {
        Self { hi, lo, per_decade }
    }

    pub fn decades(&self) -> f64 {
        (self.hi / self.lo).log10()
    }

    /// Decreasing list of scales.
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.lo > 0.0 && self.hi > self.lo && self.lo.is_finite() && self.hi.is_finite())
            || self.per_decade == 0
        {
            return Err(Error::DegenerateGrid(format!("{self:?}")));
        }
        let steps = (self.decades() * self.per_decade as f64).round().max(1.0) as usize;
        let ratio = (self.lo / self.hi).ln() / steps as f64;
        Ok((0..=steps)
            .map(|i| (self.hi.ln() + ratio * i as f64).exp())
            .collect())
    }
}

/// Width of the sliding regression window, in decades of scale. Narrower
/// windows resolve the log-periodic staircase of self-similar sets rather
/// than their growth exponent.
pub const WINDOW_DECADES: f64 = 2.0;

/// Lower/upper growth exponents of `values` as a function of `1/scales`:
/// min and max least-squares slopes of ln(value) against ln(1/scale) over
/// every sliding window spanning [`WINDOW_DECADES`] of scale.
pub fn sliding_decade_slopes(scales: &[f64], values: &[f64]) -> Result<(f64, f64)> {
    if scales.len() != values.len() || scales.len() < 3 {
        return Err(Error::DegenerateGrid("need at least 3 grid points".into()));
    }
    let span = (scales[0] / scales[scales.len() - 1]).abs().log10();
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(span >= 3.0 - 1e-9) {
        return Err(Error::DegenerateGrid(format!(
            "grid spans {span:.3} decades, need at least 3"
        )));
    }
    if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Numeric("profile values must be positive and finite".into()));
    }
    let x: Vec<f64> = scales.iter().map(|s| -s.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let width = WINDOW_DECADES * std::f64::consts::LN_10;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for start in 0..x.len() {
        let end = match (start..x.len()).find(|&j| x[j] - x[start] >= width - 1e-9) {
            Some(j) => j,
            None => break,
        };
        if end - start < 2 {
            // A window needs at least three points for a meaningful fit.
            continue;
        }
        let slope = ls_slope(&x[start..=end], &y[start..=end]);
        lo = lo.min(slope);
        hi = hi.max(slope);
    }
    if !lo.is_finite() {
        return Err(Error::DegenerateGrid(
            "grid too coarse for the regression window".into(),
        ));
    }
    Ok((lo, hi))
}
