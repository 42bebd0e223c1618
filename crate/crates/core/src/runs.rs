//! Runs of ones with at most ℓ defects, static and dynamical, and the
//! series diagnostics that decide how long such runs get.
//!
//! Bit positions are 1-based here to match the run index n; slices are
//! addressed with `n − 1`.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, Error, Result};
use crate::process::simulate_with;
use crate::rng::trial_rng;
use crate::special::ls_slope;
use crate::timeset::TimeSet;

/// Event budget for [`dynamical_run_sup`], in expected clock ticks.
pub const DYNAMIC_BUDGET: u64 = 100_000_000;
/// Smallest sequence length accepted by [`erdos_renyi_check`].
pub const MIN_ER_LENGTH: u64 = 10_000;
/// Smallest n_max accepted by [`series_diagnostic`].
pub const MIN_SERIES_N: u64 = 1_000;

/// Z_n^(ℓ): the longest window starting at n with at most ℓ zeros, or 0
/// when that window is shorter than ℓ + 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStat {
    pub n: usize,
    pub ell: usize,
    pub value: usize,
    /// The window ran into the end of the array, so `value` is a lower bound.
    pub truncated: bool,
}

/// Scan from 0-based `start`: returns (value, position of the terminating
/// zero or `bits.len()`, truncated).
fn scan(bits: &[u8], start: usize, ell: usize) -> (usize, usize, bool) {
    let mut zeros = 0;
    for (i, &b) in bits.iter().enumerate().skip(start) {
        if b == 0 {
            zeros += 1;
            if zeros > ell {
                let len = i - start;
                return (if len > ell { len } else { 0 }, i, false);
            }
        }
    }
    let len = bits.len() - start;
    (if len > ell { len } else { 0 }, bits.len(), true)
}

pub fn run_stat(bits: &[u8], n: usize, ell: usize) -> Result<RunStat> {
    if n == 0 || n > bits.len() {
        return Err(Error::domain(format!("n = {n} outside 1..={}", bits.len())));
    }
    let (value, _, truncated) = scan(bits, n - 1, ell);
    Ok(RunStat { n, ell, value, truncated })
}

/// Z_n^(ℓ) for every n = 1..=count in one pass.
pub fn all_run_stats(bits: &[u8], ell: usize, count: usize) -> Result<Vec<RunStat>> {
    if count > bits.len() {
        return Err(Error::domain(format!("count {count} exceeds {} bits", bits.len())));
    }
    let zeros: Vec<usize> = (0..bits.len()).filter(|&i| bits[i] == 0).collect();
    let mut first = 0;
    Ok((0..count)
        .map(|start| {
            while first < zeros.len() && zeros[first] < start {
                first += 1;
            }
            let (end, truncated) = match zeros.get(first + ell) {
                Some(&z) => (z, false),
                None => (bits.len(), true),
            };
            let len = end - start;
            RunStat { n: start + 1, ell, value: if len > ell { len } else { 0 }, truncated }
        })
        .collect())
}

/// l_p(x) = log_{1/p}(max(x, 100)).
pub fn l_p(p: f64, x: f64) -> f64 {
    x.max(100.0).ln() / (1.0 / p).ln()
}

/// a_n(θ) = l_p n + θ·l_p l_p n, rounded, at least 1.
pub fn threshold(theta: f64, p: f64, n: u64) -> u64 {
    let v = l_p(p, n as f64) + theta * l_p(p, l_p(p, n as f64));
    (v.round() as u64).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSequence {
    pub theta: f64,
    pub p: f64,
    /// a_1, a_2, …
    pub entries: Vec<u64>,
}

impl ThresholdSequence {
    pub fn new(theta: f64, p: f64, n_max: u64) -> Result<Self> {
        check_probability(p)?;
        if !theta.is_finite() {
            return Err(Error::domain("theta must be finite"));
        }
        Ok(ThresholdSequence { theta, p, entries: (1..=n_max).map(|n| threshold(theta, p, n)).collect() })
    }

    pub fn get(&self, n: u64) -> Option<u64> {
        self.entries.get((n as usize).checked_sub(1)?).copied()
    }
}

fn log_inv_p(p: f64, x: f64) -> f64 {
    x.ln() / (1.0 / p).ln()
}

/// Bits generated for runs started at 1..=n: n plus 4·log_{1/p} n headroom.
pub fn bits_needed(n: u64, p: f64) -> u64 {
    n + (4.0 * log_inv_p(p, n as f64)).ceil() as u64
}

fn iid_bits<R: Rng>(len: u64, p: f64, rng: &mut R) -> Vec<u8> {
    (0..len).map(|_| rng.random_bool(p) as u8).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErdosRenyi {
    pub n: u64,
    pub p: f64,
    pub ell: usize,
    pub seed: u64,
    pub max_run: usize,
    pub ratio: f64,
    pub truncated: bool,
}

/// max_{m ≤ n} Z_m^(ℓ) / log_{1/p} n on one i.i.d. sequence.
pub fn erdos_renyi_check(n: u64, p: f64, ell: usize, seed: u64) -> Result<ErdosRenyi> {
    check_probability(p)?;
    if n < MIN_ER_LENGTH {
        return Err(Error::domain(format!("n must be >= {MIN_ER_LENGTH}")));
    }
    let bits = iid_bits(bits_needed(n, p), p, &mut trial_rng(seed, 0));
    let stats = all_run_stats(&bits, ell, n as usize)?;
    let best = stats.iter().max_by_key(|s| s.value).expect("n >= 1");
    Ok(ErdosRenyi {
        n,
        p,
        ell,
        seed,
        max_run: best.value,
        ratio: best.value as f64 / log_inv_p(p, n as f64),
        truncated: stats.iter().any(|s| s.truncated && s.value == best.value),
    })
}

/// Erdős–Rényi ratios for seeds `seed_base + i`, i < count, in parallel.
pub fn erdos_renyi_batch(n: u64, p: f64, ell: usize, seed_base: u64, count: u64) -> Result<Vec<ErdosRenyi>> {
    (0..count)
        .into_par_iter()
        .map(|i| erdos_renyi_check(n, p, ell, seed_base.wrapping_add(i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicalRun {
    pub n: u64,
    pub p: f64,
    pub ell: usize,
    pub horizon: f64,
    pub seed: u64,
    pub n_bits: u64,
    /// Z_n^(ℓ)(0)
    pub initial: usize,
    /// sup over t ∈ [0, horizon] of Z_n^(ℓ)(t)
    pub sup: usize,
    pub events: u64,
    pub recomputations: u64,
    pub truncated: bool,
}

/// sup_t Z_n^(ℓ)(t) over [0, horizon], evaluated exactly at every flip that
/// can change it: only flips inside the current window or at its
/// terminating zero matter.
pub fn dynamical_run_sup(n: u64, p: f64, ell: usize, horizon: f64, seed: u64) -> Result<DynamicalRun> {
    check_probability(p)?;
    if n == 0 {
        return Err(Error::domain("n must be >= 1"));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::domain(format!("horizon must be finite and >= 0, got {horizon}")));
    }
    let n_bits = bits_needed(n, p).max(n);
    let needed = (n_bits as f64 * horizon).ceil() as u64;
    if needed > DYNAMIC_BUDGET || n_bits > u32::MAX as u64 {
        return Err(Error::Budget { needed, limit: DYNAMIC_BUDGET });
    }
    let traj = simulate_with(n_bits, p, horizon, seed, &mut trial_rng(seed, 0));
    let start = n as usize - 1;
    let mut bits = traj.initial_bits.clone();
    let (initial, mut end, mut truncated) = scan(&bits, start, ell);
    let mut sup = initial;
    let mut recomputations = 0;
    for e in &traj.events {
        let i = e.index as usize;
        let old = std::mem::replace(&mut bits[i], e.value);
        if old == e.value || i < start || i > end {
            continue;
        }
        let (value, new_end, tr) = scan(&bits, start, ell);
        recomputations += 1;
        end = new_end;
        truncated |= tr;
        sup = sup.max(value);
    }
    Ok(DynamicalRun {
        n,
        p,
        ell,
        horizon,
        seed,
        n_bits,
        initial,
        sup,
        events: traj.events.len() as u64,
        recomputations,
        truncated,
    })
}

/// (n, Z_n^(ℓ), a_n) rows for plotting.
pub fn write_run_series_csv<W: Write>(stats: &[RunStat], thresholds: &ThresholdSequence, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(["n", "z", "threshold", "truncated"]).map_err(io)?;
    for s in stats {
        let a = thresholds.get(s.n as u64).map(|a| a.to_string()).unwrap_or_default();
        w.write_record([s.n.to_string(), s.value.to_string(), a, s.truncated.to_string()]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Partial sums of Σ K_F(1/a_n) a_n^ℓ p^{a_n} and of ∫ K_F(1/s) s^{ℓ−θ} ds,
/// each with the growth exponent of its increment per unit of log scale.
///
/// A nonnegative exponent means the tail does not shrink, so the series
/// diverges. Because l_p l_p n is frozen at l_p 100 for all n below
/// (1/p)^100, the series exponent barely depends on θ at any reachable n;
/// the integral is the informative half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesDiagnostic {
    pub theta: f64,
    pub p: f64,
    pub ell: u64,
    pub n_max: u64,
    /// (n, Σ_{m ≤ n}) at powers of two and at n_max.
    pub series_partial: Vec<(u64, f64)>,
    pub series_exponent: f64,
    /// (s, ∫_1^s) on a log grid up to n_max.
    pub integral_partial: Vec<(f64, f64)>,
    pub integral_exponent: f64,
    pub converges: bool,
}

/// Log-scale points per decade for the integral.
const INTEGRAL_PER_DECADE: usize = 200;
/// The exponents are fitted over the top two decades below n_max.
const FIT_DECADES: f64 = 2.0;

pub fn series_diagnostic(f: &TimeSet, theta: f64, p: f64, ell: u64, n_max: u64) -> Result<SeriesDiagnostic> {
    check_probability(p)?;
    if n_max < MIN_SERIES_N {
        return Err(Error::domain(format!("n_max must be >= {MIN_SERIES_N}")));
    }
    let thresholds = ThresholdSequence::new(theta, p, n_max)?;
    let mut cap_cache = std::collections::HashMap::new();
    let mut term = |a: u64| -> Result<f64> {
        let cap = match cap_cache.get(&a) {
            Some(&c) => c,
            None => {
                let c = f.capacity(1.0 / a as f64)? as f64;
                cap_cache.insert(a, c);
                c
            }
        };
        Ok(cap * (a as f64).powi(ell as i32) * p.powi(a as i32))
    };

    let mut series_partial = Vec::new();
    let mut sum = 0.0;
    let mut next_mark = 1;
    for (i, &a) in thresholds.entries.iter().enumerate() {
        let n = i as u64 + 1;
        sum += term(a)?;
        if n == next_mark || n == n_max {
            series_partial.push((n, sum));
            next_mark *= 2;
        }
    }
    let series_exponent = increment_exponent(&series_partial.iter().map(|&(n, v)| (n as f64, v)).collect::<Vec<_>>(), n_max as f64);

    // ∫_1^S K_F(1/s) s^{ℓ−θ} ds by the trapezoid rule in u = ln s.
    let s_max = n_max as f64;
    let steps = (s_max.log10() * INTEGRAL_PER_DECADE as f64).ceil() as usize;
    let du = s_max.ln() / steps as f64;
    let integrand = |s: f64| -> Result<f64> { Ok(f.capacity(1.0 / s)? as f64 * s.powf(ell as f64 - theta) * s) };
    let mut integral_partial = vec![(1.0, 0.0)];
    let mut acc = 0.0;
    let mut prev = integrand(1.0)?;
    for i in 1..=steps {
        let s = (i as f64 * du).exp();
        let cur = integrand(s)?;
        acc += 0.5 * (prev + cur) * du;
        prev = cur;
        integral_partial.push((s, acc));
    }
    let integral_exponent = increment_exponent(&integral_partial, s_max);
    Ok(SeriesDiagnostic {
        theta,
        p,
        ell,
        n_max,
        series_partial,
        series_exponent,
        integral_partial,
        integral_exponent,
        converges: integral_exponent < 0.0,
    })
}

/// Slope of ln(increment per unit ln x) against ln x over the top
/// `FIT_DECADES` below `top`, from a cumulative table.
fn increment_exponent(partial: &[(f64, f64)], top: f64) -> f64 {
    let lo = top / 10f64.powf(FIT_DECADES);
    let (xs, ys): (Vec<f64>, Vec<f64>) = partial
        .windows(2)
        .filter(|w| w[0].0 >= lo && w[1].1 > w[0].1)
        .map(|w| {
            let (x0, x1) = (w[0].0.ln(), w[1].0.ln());
            (0.5 * (x0 + x1), ((w[1].1 - w[0].1) / (x1 - x0)).ln())
        })
        .unzip();
    if xs.len() < 2 {
        return f64::NAN;
    }
    ls_slope(&xs, &ys)
}

/// θ at which the integral exponent changes sign, interpolated on `thetas`
/// (increasing). `None` if there is no sign change on the grid.
pub fn series_crossover(f: &TimeSet, p: f64, ell: u64, n_max: u64, thetas: &[f64]) -> Result<Option<f64>> {
    let exps = thetas
        .iter()
        .map(|&t| Ok(series_diagnostic(f, t, p, ell, n_max)?.integral_exponent))
        .collect::<Result<Vec<f64>>>()?;
    Ok(crossover(thetas, &exps))
}

/// First θ where `exps` goes from ≥ 0 to < 0, linearly interpolated.
pub fn crossover(thetas: &[f64], exps: &[f64]) -> Option<f64> {
    (1..thetas.len().min(exps.len())).find_map(|i| {
        let (e0, e1) = (exps[i - 1], exps[i]);
        (e0 >= 0.0 && e1 < 0.0).then(|| thetas[i - 1] + (thetas[i] - thetas[i - 1]) * e0 / (e0 - e1))
    })
}
