//! Parity blocks of a dynamical bit sequence at p = 1/2.
//!
//! Block k collects the bits with indices in [m(k), m(k+1)) and B_k(t) is
//! their XOR. Each tick of a member bit resamples it, which changes the
//! parity with probability 1/2, so B_k is a two-state chain flipping at
//! rate b_k/2 with b_k the block size, started from Bernoulli(1/2). Blocks
//! are half-open so that distinct blocks share no bits and evolve
//! independently.
//!
//! Also provides the Riesz-product kernel, the Laplace transform of the
//! Stieltjes measure dg with log₂ g = m⁻¹, and the energies built on them.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::DiscreteMeasure;
use crate::error::{Error, Result};
use crate::quad;
use crate::rng::{derive_seed, trial_rng};
use crate::special::{wilson_interval, Z95};

/// Relative tolerance of the Laplace-transform quadrature.
pub const LAPLACE_REL_TOL: f64 = 1e-10;
const LAPLACE_MAX_EVALS: usize = 200_000;
/// Factors with e^{-m(k)λ} below this are dropped from infinite products.
const PRODUCT_CUTOFF: f64 = 1e-17;
const MAX_PRODUCT_TERMS: u64 = 100_000;
/// Diagonal Riesz products are truncated once they exceed this value.
pub const DIAGONAL_CAP: f64 = 1e12;
/// Bits per trial allowed in parity simulations.
pub const MAX_BLOCK_BITS: u64 = 10_000_000;
const FLAG_GRID: u64 = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum SchemeSpec {
    /// m_q(x) = 2^{x/q}; block boundaries use ⌊2^{k/q}⌋.
    Mq { q: f64 },
    /// values[i] = m(i), linearly interpolated and extended geometrically
    /// with the last ratio.
    Table { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemeSpec", into = "SchemeSpec")]
pub struct BlockScheme {
    spec: SchemeSpec,
}

impl TryFrom<SchemeSpec> for BlockScheme {
    type Error = Error;

    fn try_from(spec: SchemeSpec) -> Result<Self> {
        match &spec {
            SchemeSpec::Mq { q } => {
                if !(*q > 0.0 && q.is_finite()) {
                    return Err(Error::domain(format!("q must be > 0, got {q}")));
                }
            }
            SchemeSpec::Table { values } => {
                if values.len() < 3 {
                    return Err(Error::domain("table needs at least 3 values"));
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0 && v.fract() == 0.0)) {
                    return Err(Error::domain("table values must be nonnegative integers"));
                }
                if values.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::domain("table values must be strictly increasing"));
                }
                if values[values.len() - 2] == 0.0 {
                    return Err(Error::domain("table needs two positive trailing values"));
                }
            }
        }
        Ok(BlockScheme { spec })
    }
}

impl From<BlockScheme> for SchemeSpec {
    fn from(s: BlockScheme) -> Self {
        s.spec
    }
}

/// Growth diagnostics of a scheme on the integer grid 1..=40.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchemeFlags {
    /// 2^{-k} m(k) strictly increasing.
    pub doubling_monotone: bool,
    /// inf m(k+1)/m(k).
    pub min_ratio: f64,
}

impl BlockScheme {
    pub fn mq(q: f64) -> Result<Self> {
        Self::try_from(SchemeSpec::Mq { q })
    }

    pub fn table(values: Vec<f64>) -> Result<Self> {
        Self::try_from(SchemeSpec::Table { values })
    }

    pub fn spec(&self) -> &SchemeSpec {
        &self.spec
    }

    /// Continuous m(x) for x ≥ 0 (any real x for m_q).
    pub fn m(&self, x: f64) -> f64 {
        match &self.spec {
            SchemeSpec::Mq { q } => (x / q).exp2(),
            SchemeSpec::Table { values } => {
                let last = values.len() - 1;
                if x >= last as f64 {
                    let ratio = values[last] / values[last - 1];
                    values[last] * ratio.powf(x - last as f64)
                } else {
                    let x = x.max(0.0);
                    let i = x.floor() as usize;
                    values[i] + (x - i as f64) * (values[i + 1] - values[i])
                }
            }
        }
    }

    /// Integer block boundary m(k).
    pub fn m_int(&self, k: u64) -> f64 {
        match &self.spec {
            SchemeSpec::Mq { q } => (k as f64 / q).exp2().floor(),
            SchemeSpec::Table { values } if (k as usize) < values.len() => values[k as usize],
            SchemeSpec::Table { .. } => self.m(k as f64).floor(),
        }
    }

    /// m⁻¹(t) for t in the range of m.
    pub fn m_inv(&self, t: f64) -> f64 {
        match &self.spec {
            SchemeSpec::Mq { q } => q * t.log2(),
            SchemeSpec::Table { values } => {
                let last = values.len() - 1;
                if t >= values[last] {
                    let ratio = values[last] / values[last - 1];
                    last as f64 + (t / values[last]).ln() / ratio.ln()
                } else if t <= values[0] {
                    0.0
                } else {
                    let i = values.partition_point(|&v| v <= t) - 1;
                    i as f64 + (t - values[i]) / (values[i + 1] - values[i])
                }
            }
        }
    }

    /// g(t) = 2^{m⁻¹(t)}.
    pub fn g(&self, t: f64) -> f64 {
        self.m_inv(t).exp2()
    }

    pub fn flags(&self) -> SchemeFlags {
        let mut doubling_monotone = true;
        let mut min_ratio = f64::INFINITY;
        for k in 1..FLAG_GRID {
            let (a, b) = (self.m_int(k), self.m_int(k + 1));
            if b * 0.5 <= a {
                doubling_monotone = false;
            }
            min_ratio = min_ratio.min(b / a);
        }
        SchemeFlags { doubling_monotone, min_ratio }
    }

    /// Number of bits in block k: m(k+1) − m(k).
    pub fn block_size(&self, k: u64) -> u64 {
        (self.m_int(k + 1) - self.m_int(k)) as u64
    }

    /// (𝓛g)(λ) = ∫ e^{-λ m(x)} ln2 · 2^x dx, over x ≥ 0 for tables and all
    /// real x for m_q.
    pub fn laplace_g(&self, lambda: f64) -> Result<f64> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::domain(format!("lambda must be > 0, got {lambda}")));
        }
        let start = match &self.spec {
            // Below the peak the integrand is at most ln2·2^x, so cutting 60
            // units below it loses a relative 2^-60.
            SchemeSpec::Mq { q } => q * (q / lambda).log2() - 60.0,
            SchemeSpec::Table { .. } => 0.0,
        };
        self.laplace_from(lambda, start)
    }

    fn laplace_from(&self, lambda: f64, start: f64) -> Result<f64> {
        let log_h = |x: f64| x * std::f64::consts::LN_2 - lambda * self.m(x);
        let mut breaks = vec![start];
        let mut x = start.floor() + 1.0;
        let mut peak = log_h(start);
        // Walk integer knots until the integrand has fallen e^-60 below its
        // peak and is decreasing.
        loop {
            let v = log_h(x);
            peak = peak.max(v);
            breaks.push(x);
            if v < peak - 60.0 && log_h(x + 1.0) < v {
                break;
            }
            if breaks.len() > 100_000 {
                return Err(Error::Numeric("Laplace integrand does not decay".into()));
            }
            x += 1.0;
        }
        let scale = peak;
        let v = quad::integrate(
            |x| (log_h(x) - scale).exp(),
            &breaks,
            LAPLACE_REL_TOL,
            0.0,
            LAPLACE_MAX_EVALS,
        )?;
        Ok(std::f64::consts::LN_2 * v * scale.exp())
    }

    /// C defined by ∫_{m(2)}^∞ e^{-Ds} dg(s) = 4/C.
    pub fn sandwich_constant(&self, d: f64) -> Result<f64> {
        if !(d > 0.0 && d.is_finite()) {
            return Err(Error::domain(format!("D must be > 0, got {d}")));
        }
        Ok(4.0 / self.laplace_from(d, 2.0)?)
    }

    /// ∏_{k=1}^{n} (1 + e^{-m(k)|λ|}); `None` means n = ∞.
    pub fn riesz_product(&self, n: Option<u64>, lambda: f64) -> f64 {
        let l = lambda.abs();
        if l == 0.0 {
            return n.map_or(f64::INFINITY, |n| (n as f64).exp2());
        }
        self.log_product(n, l, |e| e.ln_1p()).exp()
    }

    /// f_n(λ) = ∏_{k=1}^{n} (1 − e^{-m(k)|λ|}); `None` means n = ∞.
    pub fn f_n(&self, n: Option<u64>, lambda: f64) -> f64 {
        let l = lambda.abs();
        if l == 0.0 {
            return 0.0;
        }
        self.log_product(n, l, |e| (-e).ln_1p()).exp()
    }

    fn log_product(&self, n: Option<u64>, l: f64, term: impl Fn(f64) -> f64) -> f64 {
        let limit = n.unwrap_or(MAX_PRODUCT_TERMS);
        let mut acc = 0.0;
        for k in 1..=limit {
            let e = (-self.m_int(k) * l).exp();
            if n.is_none() && e < PRODUCT_CUTOFF {
                break;
            }
            acc += term(e);
        }
        acc
    }

    /// Smallest n with 2^n > [`DIAGONAL_CAP`]: the truncation used for
    /// coincident atoms.
    pub fn diagonal_truncation() -> u64 {
        DIAGONAL_CAP.log2().floor() as u64 + 1
    }
}

/// Quadratic forms of the Riesz-product kernel (I) and the Laplace kernel
/// (J) against a discrete measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RieszEnergies {
    /// Σ_{i≠j} w_i w_j ∏(1 + e^{-m(k)|x_i−x_j|})
    pub i_offdiag: f64,
    /// Σ_{i≠j} w_i w_j (𝓛g)(|x_i−x_j|)
    pub j_offdiag: f64,
    /// Σ_{i≠j} w_i w_j, the weight of the constant term 1 off the diagonal.
    pub pair_mass: f64,
    /// Σ_i w_i² times the product truncated at [`BlockScheme::diagonal_truncation`].
    pub i_diagonal: f64,
    pub diagonal_truncation: u64,
    /// Two distinct atoms share a location, so both energies diverge.
    pub coincident_atoms: bool,
}

impl RieszEnergies {
    pub fn i_total(&self) -> f64 {
        self.i_offdiag + self.i_diagonal
    }
}

pub fn energy_i_j(scheme: &BlockScheme, mu: &DiscreteMeasure) -> Result<RieszEnergies> {
    let (x, w) = (mu.atoms(), mu.weights());
    let n = x.len();
    let rows: Vec<(f64, f64, f64, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let (mut ii, mut jj, mut pm, mut coinc) = (0.0, 0.0, 0.0, false);
            for j in (0..n).filter(|&j| j != i) {
                let d = (x[i] - x[j]).abs();
                let ww = w[i] * w[j];
                pm += ww;
                if d == 0.0 {
                    coinc = true;
                    continue;
                }
                ii += ww * scheme.riesz_product(None, d);
                jj += ww * scheme.laplace_g(d)?;
            }
            Ok((ii, jj, pm, coinc))
        })
        .collect::<Result<_>>()?;
    let trunc = BlockScheme::diagonal_truncation();
    let diag_sq: f64 = w.iter().map(|v| v * v).sum();
    let mut out = RieszEnergies {
        i_offdiag: 0.0,
        j_offdiag: 0.0,
        pair_mass: 0.0,
        i_diagonal: diag_sq * scheme.riesz_product(Some(trunc), 0.0),
        diagonal_truncation: trunc,
        coincident_atoms: false,
    };
    for (ii, jj, pm, c) in rows {
        out.i_offdiag += ii;
        out.j_offdiag += jj;
        out.pair_mass += pm;
        out.coincident_atoms |= c;
    }
    if out.coincident_atoms {
        out.i_offdiag = f64::INFINITY;
        out.j_offdiag = f64::INFINITY;
    }
    Ok(out)
}

/// One λ of the kernel sandwich (1 + 𝓛g)/(4 + 4C) ≤ I-kernel ≤ 1 + 𝓛g.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelPoint {
    pub lambda: f64,
    pub riesz: f64,
    pub one_plus_lg: f64,
    pub lower: f64,
}

impl KernelPoint {
    pub fn holds(&self) -> bool {
        self.riesz <= self.one_plus_lg * (1.0 + 1e-8) && self.riesz >= self.lower * (1.0 - 1e-8)
    }
}

/// Evaluate the sandwich on `lambdas` ⊂ (0, d].
pub fn kernel_curve(scheme: &BlockScheme, lambdas: &[f64], d: f64) -> Result<Vec<KernelPoint>> {
    let c = scheme.sandwich_constant(d)?;
    lambdas
        .par_iter()
        .map(|&lambda| {
            let one_plus_lg = 1.0 + scheme.laplace_g(lambda)?;
            Ok(KernelPoint {
                lambda,
                riesz: scheme.riesz_product(None, lambda),
                one_plus_lg,
                lower: one_plus_lg / (4.0 + 4.0 * c),
            })
        })
        .collect()
}

pub fn write_kernel_csv<W: Write>(points: &[KernelPoint], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(e.to_string());
    wtr.write_record(["lambda", "riesz", "one_plus_lg", "lower"]).map_err(io)?;
    for p in points {
        wtr.write_record([p.lambda, p.riesz, p.one_plus_lg, p.lower].map(|v| format!("{v:.16e}")))
            .map_err(io)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Parity path of one block on [0, horizon]: initial value and flip times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityPath {
    pub size: u64,
    pub initial: u8,
    pub flips: Vec<f64>,
}

impl ParityPath {
    /// B(t), right-continuous.
    pub fn value_at(&self, t: f64) -> u8 {
        let n = self.flips.partition_point(|&f| f <= t);
        self.initial ^ (n % 2) as u8
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityTrajectory {
    pub n_blocks: u64,
    pub horizon: f64,
    /// blocks[k-1] is block k.
    pub blocks: Vec<ParityPath>,
}

fn check_budget(scheme: &BlockScheme, n_blocks: u64) -> Result<()> {
    if n_blocks == 0 {
        return Err(Error::domain("n_blocks must be >= 1"));
    }
    let needed = scheme.m_int(n_blocks + 1) - scheme.m_int(1);
    if needed > MAX_BLOCK_BITS as f64 {
        return Err(Error::Budget { needed: needed.min(u64::MAX as f64) as u64, limit: MAX_BLOCK_BITS });
    }
    Ok(())
}

fn block_rng(seed: u64, block: u64, trial: u64) -> rand_chacha::ChaCha8Rng {
    trial_rng(derive_seed(seed, block), trial)
}

/// Full parity paths of blocks 1..=n_blocks over [0, horizon].
pub fn simulate_parity(scheme: &BlockScheme, n_blocks: u64, horizon: f64, seed: u64) -> Result<ParityTrajectory> {
    check_budget(scheme, n_blocks)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::domain(format!("horizon must be > 0, got {horizon}")));
    }
    let blocks = (1..=n_blocks)
        .map(|k| {
            let size = scheme.block_size(k);
            let mut rng = block_rng(seed, k, 0);
            let initial = rng.random_bool(0.5) as u8;
            let mut flips = Vec::new();
            if size > 0 {
                let gap = Exp::new(size as f64 / 2.0).expect("positive rate");
                let mut t = gap.sample(&mut rng);
                while t <= horizon {
                    flips.push(t);
                    t += gap.sample(&mut rng);
                }
            }
            ParityPath { size, initial, flips }
        })
        .collect();
    Ok(ParityTrajectory { n_blocks, horizon, blocks })
}

/// Estimates of P{∃ t ∈ [0,1]: B_k(t) = 0 for all k ≤ n}, n = 1..=n_blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmEstimate {
    pub n_blocks: u64,
    pub trials: u64,
    pub seed: u64,
    /// survivors[n-1]: trials whose common zero set is nonempty after n blocks.
    pub survivors: Vec<u64>,
    pub estimates: Vec<f64>,
    pub ci95: Vec<(f64, f64)>,
}

/// Monte Carlo for the common zero set of the first `n_blocks` parities on
/// [0,1]. Blocks are added one at a time and each is simulated only on the
/// current common zero set (the gaps are bridged with the exact two-state
/// transition law), so the estimates are pathwise monotone in n.
pub fn simulate_t_m(scheme: &BlockScheme, n_blocks: u64, trials: u64, seed: u64) -> Result<TmEstimate> {
    check_budget(scheme, n_blocks)?;
    if trials == 0 {
        return Err(Error::domain("trials must be >= 1"));
    }
    let sizes: Vec<u64> = (1..=n_blocks).map(|k| scheme.block_size(k)).collect();
    let survived: Vec<u64> = (0..trials)
        .into_par_iter()
        .map(|trial| blocks_survived(&sizes, seed, trial))
        .collect();
    let survivors: Vec<u64> = (1..=n_blocks)
        .map(|n| survived.iter().filter(|&&s| s >= n).count() as u64)
        .collect();
    let estimates = survivors.iter().map(|&s| s as f64 / trials as f64).collect();
    let ci95 = survivors.iter().map(|&s| wilson_interval(s, trials, Z95)).collect();
    Ok(TmEstimate { n_blocks, trials, seed, survivors, estimates, ci95 })
}

/// Number of leading blocks whose zero sets still intersect.
fn blocks_survived(sizes: &[u64], seed: u64, trial: u64) -> u64 {
    let mut zero: Vec<(f64, f64)> = vec![(0.0, 1.0)];
    for (i, &size) in sizes.iter().enumerate() {
        let k = i as u64 + 1;
        let mut rng = block_rng(seed, k, trial);
        zero = restrict_to_zeros(&zero, size, &mut rng);
        if zero.is_empty() {
            return i as u64;
        }
    }
    sizes.len() as u64
}

/// Intersect `set` (sorted disjoint [a, b) pieces) with the zero set of a
/// fresh parity path of a block of `size` bits.
fn restrict_to_zeros<R: Rng>(set: &[(f64, f64)], size: u64, rng: &mut R) -> Vec<(f64, f64)> {
    let mut state = rng.random_bool(0.5) as u8;
    if size == 0 {
        return if state == 0 { set.to_vec() } else { Vec::new() };
    }
    let b = size as f64;
    let gap = Exp::new(b / 2.0).expect("positive rate");
    let mut out = Vec::new();
    let mut now = 0.0;
    for &(a, end) in set {
        // Bridge [now, a): odd number of flips with prob (1 − e^{-b·Δ})/2.
        let odd = 0.5 * -(-(b * (a - now))).exp_m1();
        if rng.random_bool(odd.clamp(0.0, 1.0)) {
            state ^= 1;
        }
        let mut t = a;
        loop {
            let next = t + gap.sample(rng);
            let stop = next.min(end);
            if state == 0 && stop > t {
                out.push((t, stop));
            }
            if next >= end {
                break;
            }
            state ^= 1;
            t = next;
        }
        now = end;
    }
    out
}
