//! Hitting-probability estimators: streaming Monte Carlo, the exact taboo
//! DP over finite time sets, grid bracketing for continua, and the scaling
//! harnesses built on top of them.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{min_energy, profile_grid_size, Kernel};
use crate::error::{check_probability, Error, Result};
use crate::process::{conditional_return_prob, stationary_law, sum_kernel_matrix};
use crate::rng::{derive_seed, trial_rng};
use crate::special::{ls_slope, wilson_interval, Z95};
use crate::timeset::TimeSet;

/// Most observation times accepted by [`exact_hit_prob_finite`].
pub const MAX_DP_TIMES: usize = 64;
/// Largest k accepted by the DP.
pub const MAX_DP_K: u64 = 200;
/// Largest grid the bracketing routine will run the DP on.
pub const MAX_BRACKET_TIMES: usize = 1 << 16;
/// Default coarse and fine bracketing grids.
pub const BRACKET_COARSE: usize = 64;
pub const BRACKET_FINE: usize = 1024;
/// Hit count below which a scaling report carries a warning.
pub const MIN_HITS: u64 = 50;

/// Monte Carlo estimate of P{∃ t ∈ F: S_k(t) = k − ℓ}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HitProbEstimate {
    pub k: u64,
    pub ell: u64,
    pub p: f64,
    pub f: TimeSet,
    pub trials: u64,
    pub hits: u64,
    pub p_hat: f64,
    pub ci95: (f64, f64),
    pub seed: u64,
}

impl HitProbEstimate {
    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci95.1 - self.ci95.0)
    }
}

fn check_k_ell(k: u64, ell: u64) -> Result<()> {
    if k == 0 || k > u32::MAX as u64 {
        return Err(Error::domain(format!("k = {k} out of range")));
    }
    if ell > k {
        return Err(Error::domain(format!("ell = {ell} exceeds k = {k}")));
    }
    Ok(())
}

/// Fraction of trials whose trajectory over [0, sup F] has S_k = k − ℓ at
/// some time of F. Trial i uses stream i of `seed`, so the estimate does
/// not depend on the thread count.
pub fn mc_hit_prob(k: u64, ell: u64, p: f64, f: &TimeSet, trials: u64, seed: u64) -> Result<HitProbEstimate> {
    check_k_ell(k, ell)?;
    check_probability(p)?;
    if trials == 0 {
        return Err(Error::domain("trials must be >= 1"));
    }
    let horizon = f.sup().ok_or(Error::EmptySet)?;
    let level = k - ell;
    let hits = (0..trials)
        .into_par_iter()
        .filter(|&i| trial_hits(k, p, level, f, horizon, &mut trial_rng(seed, i)))
        .count() as u64;
    Ok(HitProbEstimate {
        k,
        ell,
        p,
        f: f.clone(),
        trials,
        hits,
        p_hat: hits as f64 / trials as f64,
        ci95: wilson_interval(hits, trials, Z95),
        seed,
    })
}

/// One trial, simulated on the fly and stopped at the first hit. Draws
/// from `rng` in the same order as the trajectory simulator, so the answer
/// equals `hits_level` on the trajectory built from the same stream.
pub(crate) fn trial_hits<R: Rng>(k: u64, p: f64, level: u64, f: &TimeSet, horizon: f64, rng: &mut R) -> bool {
    let mut bits: Vec<u8> = (0..k).map(|_| rng.random_bool(p) as u8).collect();
    let mut sum: u64 = bits.iter().map(|&b| b as u64).sum();
    if horizon == 0.0 {
        return sum == level && f.contains(0.0);
    }
    let gaps = Exp::new(k as f64).expect("positive rate");
    let mut start = 0.0;
    let mut t = 0.0;
    loop {
        t += gaps.sample(rng);
        if t > horizon {
            return sum == level && f.intersects(start, horizon);
        }
        let index = rng.random_range(0..k as u32) as usize;
        let value = rng.random_bool(p) as u8;
        let old = std::mem::replace(&mut bits[index], value);
        if old == value {
            continue;
        }
        if sum == level && f.intersects_half_open(start, t) {
            return true;
        }
        start = t;
        sum = sum + value as u64 - old as u64;
    }
}

fn check_times(times: &[f64], max: usize) -> Result<()> {
    if times.is_empty() || times.len() > max {
        return Err(Error::domain(format!("need 1..={max} times, got {}", times.len())));
    }
    if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
        return Err(Error::domain("times must be finite and >= 0"));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::domain("times must be sorted"));
    }
    Ok(())
}

/// Exact P{∃ j: S_k(t_j) = level} in stationarity.
pub fn exact_hit_prob_finite(k: u64, level: u64, p: f64, times: &[f64]) -> Result<f64> {
    check_times(times, MAX_DP_TIMES)?;
    taboo_hit_prob(k, level, p, times)
}

/// Taboo DP: carry the law of S_k restricted to paths that have avoided
/// `level` so far, collecting the mass that lands on it at each time.
fn taboo_hit_prob(k: u64, level: u64, p: f64, times: &[f64]) -> Result<f64> {
    if k == 0 || k > MAX_DP_K {
        return Err(Error::domain(format!("k must lie in 1..={MAX_DP_K}, got {k}")));
    }
    if level > k {
        return Err(Error::domain(format!("level {level} exceeds k = {k}")));
    }
    let lv = level as usize;
    let n = k as usize + 1;
    let mut v = stationary_law(k, p)?;
    let mut hit = v[lv];
    v[lv] = 0.0;
    let mut kernels: HashMap<u64, Vec<Vec<f64>>> = HashMap::new();
    let mut next = vec![0.0; n];
    for w in times.windows(2) {
        let gap = w[1] - w[0];
        let km = match kernels.entry(gap.to_bits()) {
            std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::hash_map::Entry::Vacant(e) => e.insert(sum_kernel_matrix(k, gap, p)?),
        };
        next.iter_mut().for_each(|x| *x = 0.0);
        for (a, &va) in v.iter().enumerate() {
            if va == 0.0 {
                continue;
            }
            for (nx, &kij) in next.iter_mut().zip(&km[a]) {
                *nx += va * kij;
            }
        }
        std::mem::swap(&mut v, &mut next);
        hit += v[lv];
        v[lv] = 0.0;
    }
    Ok(hit.clamp(0.0, 1.0))
}

/// Hitting probability over a continuum bracketed by DP values on nested
/// grids. `lower` is the fine-grid value, a true lower bound since the grid
/// lies in F. `upper` extrapolates one refinement step further.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridBracket {
    pub coarse_n: usize,
    pub fine_n: usize,
    pub coarse: f64,
    pub fine: f64,
    pub lower: f64,
    pub upper: f64,
}

impl GridBracket {
    pub fn gap(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }
}

pub fn bracket_hit_prob(k: u64, level: u64, p: f64, f: &TimeSet, coarse_n: usize, fine_n: usize) -> Result<GridBracket> {
    if !(2 <= coarse_n && coarse_n <= fine_n && fine_n <= MAX_BRACKET_TIMES) {
        return Err(Error::domain(format!("bracket grids {coarse_n}, {fine_n} invalid")));
    }
    let coarse_t = f.grid_points(coarse_n)?;
    let fine_t = f.grid_points(fine_n)?;
    let coarse = taboo_hit_prob(k, level, p, &coarse_t)?;
    let fine = taboo_hit_prob(k, level, p, &fine_t)?;
    Ok(GridBracket {
        coarse_n: coarse_t.len(),
        fine_n: fine_t.len(),
        coarse,
        fine,
        lower: fine,
        upper: (fine + (fine - coarse).max(0.0)).min(1.0),
    })
}

/// MC estimates against a theoretical profile over a k grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub label: String,
    pub trials: u64,
    pub seed: u64,
    pub k_values: Vec<u64>,
    pub hits: Vec<u64>,
    pub estimates: Vec<f64>,
    pub ci95: Vec<(f64, f64)>,
    pub theory_values: Vec<f64>,
    pub ratios: Vec<f64>,
    /// (min, max) ratio over entries with at least one hit.
    pub band: (f64, f64),
    /// Same, using the CI endpoints instead of the point estimates.
    pub ci_band: (f64, f64),
    /// Least-squares slope of ln p̂ against ln k over nonzero estimates.
    pub slope: f64,
    pub warnings: Vec<String>,
}

impl ScalingReport {
    fn assemble(label: &str, trials: u64, seed: u64, est: Vec<HitProbEstimate>, theory: Vec<f64>) -> Self {
        let k_values: Vec<u64> = est.iter().map(|e| e.k).collect();
        let ratios: Vec<f64> = est.iter().zip(&theory).map(|(e, t)| e.p_hat / t).collect();
        let live: Vec<usize> = (0..est.len()).filter(|&i| est[i].hits > 0).collect();
        let fold = |vals: &mut dyn Iterator<Item = f64>| {
            vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let band = fold(&mut live.iter().map(|&i| ratios[i]));
        let ci_lo = fold(&mut live.iter().map(|&i| est[i].ci95.0 / theory[i])).0;
        let ci_hi = fold(&mut live.iter().map(|&i| est[i].ci95.1 / theory[i])).1;
        let (lx, ly): (Vec<f64>, Vec<f64>) = live
            .iter()
            .map(|&i| ((k_values[i] as f64).ln(), est[i].p_hat.ln()))
            .unzip();
        let slope = if lx.len() >= 2 { ls_slope(&lx, &ly) } else { f64::NAN };
        let warnings = est
            .iter()
            .filter(|e| e.hits < MIN_HITS)
            .map(|e| format!("k = {}: only {} hits (< {MIN_HITS})", e.k, e.hits))
            .collect();
        ScalingReport {
            label: label.to_string(),
            trials,
            seed,
            k_values,
            hits: est.iter().map(|e| e.hits).collect(),
            estimates: est.iter().map(|e| e.p_hat).collect(),
            ci95: est.iter().map(|e| e.ci95).collect(),
            theory_values: theory,
            ratios,
            band,
            ci_band: (ci_lo, ci_hi),
            slope,
            warnings,
        }
    }

    /// max/min of the point-estimate band.
    pub fn spread(&self) -> f64 {
        self.band.1 / self.band.0
    }

    /// max/min of the CI band, a conservative spread.
    pub fn ci_spread(&self) -> f64 {
        self.ci_band.1 / self.ci_band.0
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(["k", "hits", "trials", "p_hat", "ci_lo", "ci_hi", "theory", "ratio"]).map_err(io)?;
        for i in 0..self.k_values.len() {
            w.write_record([
                self.k_values[i].to_string(),
                self.hits[i].to_string(),
                self.trials.to_string(),
                fmt17(self.estimates[i]),
                fmt17(self.ci95[i].0),
                fmt17(self.ci95[i].1),
                fmt17(self.theory_values[i]),
                fmt17(self.ratios[i]),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Float with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn sweep(
    f: &TimeSet,
    p: f64,
    k_grid: &[u64],
    ell_of: impl Fn(u64) -> u64 + Sync,
    trials: u64,
    seed: u64,
) -> Result<Vec<HitProbEstimate>> {
    k_grid
        .iter()
        .map(|&k| mc_hit_prob(k, ell_of(k), p, f, trials, derive_seed(seed, k)))
        .collect()
}

/// p̂ against K_F(1/k)·k^ℓ·p^k.
pub fn verify_thm1(f: &TimeSet, p: f64, ell: u64, k_grid: &[u64], trials: u64, seed: u64) -> Result<ScalingReport> {
    let est = sweep(f, p, k_grid, |_| ell, trials, seed)?;
    let theory = k_grid
        .iter()
        .map(|&k| {
            let cap = f.capacity(1.0 / k as f64)? as f64;
            Ok(cap * (k as f64).powi(ell as i32) * p.powi(k as i32))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ScalingReport::assemble("thm1", trials, seed, est, theory))
}

/// p̂ at ℓ = k/2, p = 1/2 against [√k · min-energy of min(1/√(k|x|), 1)]⁻¹.
pub fn verify_thm3(f: &TimeSet, k_grid: &[u64], trials: u64, seed: u64) -> Result<ScalingReport> {
    if let Some(k) = k_grid.iter().find(|&&k| k % 2 == 1) {
        return Err(Error::domain(format!("k must be even, got {k}")));
    }
    let est = sweep(f, 0.5, k_grid, |k| k / 2, trials, seed)?;
    let theory = k_grid
        .iter()
        .map(|&k| {
            let kf = k as f64;
            let grid_n = profile_grid_size(f, 1.0 / kf);
            let em = min_energy(f, &Kernel::sqrt_clamp(kf)?, 1.0, grid_n)?;
            Ok(1.0 / (kf.sqrt() * em.value))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ScalingReport::assemble("thm3", trials, seed, est, theory))
}

/// One entry of the return-probability comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReturnRow {
    pub k: u64,
    pub t: f64,
    pub prob: f64,
    pub bound: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnReport {
    pub rows: Vec<ReturnRow>,
    /// (k, min ratio, max ratio) per k.
    pub per_k: Vec<(u64, f64, f64)>,
    pub band: (f64, f64),
}

/// P(S_k(t) = k/2 | S_k(0) = k/2) at p = 1/2 divided by min(1/√(kt), 1).
pub fn return_ratio(k: u64, t: f64) -> Result<ReturnRow> {
    if k == 0 || k % 2 == 1 {
        return Err(Error::domain(format!("k must be even and positive, got {k}")));
    }
    let prob = conditional_return_prob(k, k / 2, t, 0.5)?;
    let bound = if t == 0.0 { 1.0 } else { (1.0 / (k as f64 * t).sqrt()).min(1.0) };
    let ratio = if t == 0.0 { 1.0 } else { prob / bound };
    Ok(ReturnRow { k, t, prob, bound, ratio })
}

/// Ratios over t on an `n_t`-point log grid of [1/k, 1] for every k.
pub fn verify_return_asymptotics(k_grid: &[u64], n_t: usize) -> Result<ReturnReport> {
    if n_t < 2 {
        return Err(Error::domain("need at least 2 times per k"));
    }
    let mut rows = Vec::new();
    let mut per_k = Vec::new();
    for &k in k_grid {
        let lo = (1.0 / k as f64).ln();
        let krows = (0..n_t)
            .map(|i| return_ratio(k, (lo * (1.0 - i as f64 / (n_t - 1) as f64)).exp()))
            .collect::<Result<Vec<_>>>()?;
        let (mn, mx) = krows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.ratio), b.max(r.ratio)));
        per_k.push((k, mn, mx));
        rows.extend(krows);
    }
    let band = per_k
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.1), b.max(r.2)));
    Ok(ReturnReport { rows, per_k, band })
}

/// One entry of the correlation-length comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub ell: u64,
    pub k: u64,
    pub bracket: GridBracket,
    /// k^ℓ p^k
    pub scale: f64,
    pub ratio_lo: f64,
    pub ratio_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub p: f64,
    pub rows: Vec<CorrelationRow>,
    /// (ℓ, min ratio_lo, max ratio_hi) per ℓ.
    pub per_ell: Vec<(u64, f64, f64)>,
}

impl CorrelationReport {
    /// Largest max/min ratio spread over the ℓ values.
    pub fn worst_spread(&self) -> f64 {
        self.per_ell.iter().map(|r| r.2 / r.1).fold(0.0, f64::max)
    }
}

/// P{∃ t ∈ [0, 1/k]: S_k(t) = k − ℓ} / (k^ℓ p^k), bracketed on grids.
pub fn correlation_length_check(p: f64, ells: &[u64], k_grid: &[u64]) -> Result<CorrelationReport> {
    check_probability(p)?;
    let mut rows = Vec::new();
    let mut per_ell = Vec::new();
    for &ell in ells {
        let mut band = (f64::INFINITY, f64::NEG_INFINITY);
        for &k in k_grid.iter().filter(|&&k| k >= ell.max(1)) {
            let f = TimeSet::interval(0.0, 1.0 / k as f64)?;
            let bracket = bracket_hit_prob(k, k - ell, p, &f, BRACKET_COARSE, BRACKET_FINE)?;
            let scale = (k as f64).powi(ell as i32) * p.powi(k as i32);
            let (ratio_lo, ratio_hi) = (bracket.lower / scale, bracket.upper / scale);
            band = (band.0.min(ratio_lo), band.1.max(ratio_hi));
            rows.push(CorrelationRow { ell, k, bracket, scale, ratio_lo, ratio_hi });
        }
        per_ell.push((ell, band.0, band.1));
    }
    Ok(CorrelationReport { p, rows, per_ell })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{hits_level, transition_matrix};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    /// Enumerate all joint paths of the k two-state bit chains observed at
    /// `times`; independent of the sum-chain kernel.
    fn brute_force(k: usize, level: usize, p: f64, times: &[f64]) -> f64 {
        let m = times.len();
        let steps: Vec<[[f64; 2]; 2]> = times.windows(2).map(|w| transition_matrix(p, w[1] - w[0]).unwrap()).collect();
        let mut total = 0.0;
        // Bit b's path is encoded in bits [b·m, (b+1)·m) of `code`.
        for code in 0u64..(1u64 << (k * m)) {
            let path = |b: usize, j: usize| ((code >> (b * m + j)) & 1) as usize;
            let mut prob = 1.0;
            for b in 0..k {
                prob *= if path(b, 0) == 1 { p } else { 1.0 - p };
                for j in 1..m {
                    prob *= steps[j - 1][path(b, j - 1)][path(b, j)];
                }
            }
            if (0..m).any(|j| (0..k).map(|b| path(b, j)).sum::<usize>() == level) {
                total += prob;
            }
        }
        total
    }

    #[test]
    fn single_time_matches_binomial() {
        let v = exact_hit_prob_finite(4, 2, 0.5, &[0.0]).unwrap();
        assert!((v - 0.375).abs() < 1e-15);
        // Enumerate the 16 states directly.
        let count = (0u32..16).filter(|s| s.count_ones() == 2).count();
        assert_eq!(count as f64 / 16.0, 0.375);
    }

    #[test]
    fn one_bit_two_times() {
        let v = exact_hit_prob_finite(1, 1, 0.5, &[0.0, std::f64::consts::LN_2]).unwrap();
        assert!((v - 0.625).abs() < 1e-15);
    }

    #[test]
    fn dp_matches_path_enumeration() {
        let times = [0.0, 0.4, 1.1];
        let v = exact_hit_prob_finite(3, 2, 0.5, &times).unwrap();
        assert!((v - brute_force(3, 2, 0.5, &times)).abs() < 1e-12);
        for (k, level, p) in [(2, 0, 0.3), (4, 3, 0.8), (2, 2, 0.7)] {
            let times = [0.1, 0.25, 0.3];
            let v = exact_hit_prob_finite(k, level, p, &times).unwrap();
            assert!((v - brute_force(k as usize, level as usize, p, &times)).abs() < 1e-12);
        }
    }

    #[test]
    fn dp_rejects_bad_input() {
        assert!(exact_hit_prob_finite(3, 1, 0.5, &[]).is_err());
        assert!(exact_hit_prob_finite(3, 4, 0.5, &[0.0]).is_err());
        assert!(exact_hit_prob_finite(201, 1, 0.5, &[0.0]).is_err());
        assert!(exact_hit_prob_finite(3, 1, 0.5, &[0.5, 0.1]).is_err());
        assert!(exact_hit_prob_finite(3, 1, 0.5, &vec![0.0; 65]).is_err());
    }

    #[test]
    fn streaming_trial_equals_trajectory_check() {
        let f = TimeSet::points(&[0.1, 0.35, 0.9]).unwrap();
        for i in 0..300 {
            let streamed = trial_hits(6, 0.6, 4, &f, 0.9, &mut trial_rng(11, i));
            let traj = crate::process::simulate_with(6, 0.6, 0.9, 11, &mut trial_rng(11, i));
            assert_eq!(streamed, hits_level(&traj, 4, &f).unwrap(), "trial {i}");
        }
    }

    #[test]
    fn mc_at_time_zero() {
        let f = TimeSet::points(&[0.0]).unwrap();
        let est = mc_hit_prob(10, 2, 0.5, &f, 100_000, 5).unwrap();
        let exact = exact_hit_prob_finite(10, 8, 0.5, &[0.0]).unwrap();
        let sigma = (exact * (1.0 - exact) / 1e5).sqrt();
        assert!((est.p_hat - exact).abs() < 3.0 * sigma);
        assert!(est.ci95.0 <= est.p_hat && est.p_hat <= est.ci95.1);
    }

    #[test]
    fn mc_on_finite_set_matches_dp() {
        let times = [0.0, 0.3, 0.9];
        let f = TimeSet::points(&times).unwrap();
        let est = mc_hit_prob(8, 1, 0.6, &f, 100_000, 9).unwrap();
        let exact = exact_hit_prob_finite(8, 7, 0.6, &times).unwrap();
        let sigma = (exact * (1.0 - exact) / 1e5).sqrt();
        assert!((est.p_hat - exact).abs() < 3.0 * sigma, "{} vs {exact}", est.p_hat);
    }

    #[test]
    fn mc_on_interval_is_bracketed() {
        let f = TimeSet::interval(0.0, 1.0).unwrap();
        let est = mc_hit_prob(4, 0, 0.5, &f, 100_000, 3).unwrap();
        let br = bracket_hit_prob(4, 4, 0.5, &f, BRACKET_COARSE, BRACKET_FINE).unwrap();
        let sigma = (est.p_hat * (1.0 - est.p_hat) / 1e5).sqrt();
        assert!(est.p_hat >= br.lower - 3.0 * sigma && est.p_hat <= br.upper + 3.0 * sigma);
        assert!(br.coarse <= br.fine);
    }

    #[test]
    fn estimate_is_thread_count_independent() {
        let f = TimeSet::interval(0.0, 1.0).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| mc_hit_prob(12, 1, 0.8, &f, 20_000, 42).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn thm1_ratio_for_single_point() {
        let f = TimeSet::points(&[0.0]).unwrap();
        let rep = verify_thm1(&f, 0.9, 1, &[10, 20], 50_000, 1).unwrap();
        for (i, &k) in rep.k_values.iter().enumerate() {
            // C(k,1)(q/p)/k = q/p
            let analytic = 0.1 / 0.9;
            assert!((rep.ratios[i] - analytic).abs() < 4.0 * (rep.ci95[i].1 - rep.ci95[i].0) / rep.theory_values[i], "k={k}");
        }
    }

    #[test]
    fn return_ratio_at_zero_and_small_k() {
        assert_eq!(return_ratio(8, 0.0).unwrap().ratio, 1.0);
        // k = 2: both bits keep their values, or both flip.
        let t: f64 = 0.7;
        let (stay, flip) = (0.5 + 0.5 * (-t).exp(), 0.5 - 0.5 * (-t).exp());
        let row = return_ratio(2, t).unwrap();
        assert!((row.prob - (stay * stay + flip * flip)).abs() < 1e-14);
    }

    #[test]
    fn correlation_report_orders_bracket() {
        let rep = correlation_length_check(0.9, &[0, 1], &[10, 20]).unwrap();
        assert_eq!(rep.rows.len(), 4);
        for r in &rep.rows {
            assert!(r.ratio_lo <= r.ratio_hi && r.bracket.coarse <= r.bracket.fine + 1e-15);
        }
    }

    proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]

        #[test]
        fn adding_a_time_never_lowers_the_probability(
            k in 1u64..12,
            level_frac in 0.0f64..1.0,
            p in 0.1f64..0.9,
            raw in proptest::collection::vec(0.0f64..2.0, 1..8),
            extra in 0.0f64..2.0,
        ) {
            let level = (level_frac * k as f64).round() as u64;
            let mut times = raw.clone();
            times.sort_by(f64::total_cmp);
            let base = exact_hit_prob_finite(k, level, p, &times).unwrap();
            times.push(extra);
            times.sort_by(f64::total_cmp);
            let more = exact_hit_prob_finite(k, level, p, &times).unwrap();
            prop_assert!(more >= base - 1e-13);
            prop_assert!((0.0..=1.0).contains(&more));
        }

        #[test]
        fn repeated_times_change_nothing(k in 1u64..10, p in 0.1f64..0.9, t in 0.0f64..1.0) {
            let a = exact_hit_prob_finite(k, k / 2, p, &[0.0, t]).unwrap();
            let b = exact_hit_prob_finite(k, k / 2, p, &[0.0, t, t]).unwrap();
            prop_assert!((a - b).abs() < 1e-14);
            prop_assert_eq!(exact_hit_prob_finite(k, k / 2, p, &[t]).unwrap(), exact_hit_prob_finite(k, k / 2, p, &[0.0]).unwrap());
        }
    }
}
