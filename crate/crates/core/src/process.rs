//! Dynamical bit sequences: closed-form one-bit and sum transition laws, and
//! exact event-driven simulation of trajectories.
//!
//! Each of the k bits carries a rate-one Poisson clock and is replaced by a
//! fresh Bernoulli(p) value when its clock rings. Simulation merges the k
//! clocks into one rate-k stream and assigns each tick to a uniformly chosen
//! bit, which has the same law and touches memory only once per event.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{check_probability, check_time, Error, Result};
use crate::rng::trial_rng;
use crate::special::{ln_choose, log_sum_exp, xlny};
use crate::timeset::TimeSet;

/// Largest bit count accepted by the closed-form operations.
pub const MAX_CLOSED_FORM_K: u64 = 1_000_000;

/// One-bit transition data at time t: θ_t = P(0 → 1), κ_t = P(1 → 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionParams {
    pub p: f64,
    pub t: f64,
    pub theta: f64,
    pub kappa: f64,
    /// 1 − κ_t, kept separately because it is tiny for small t.
    pub one_minus_kappa: f64,
}

pub fn transition_params(p: f64, t: f64) -> Result<TransitionParams> {
    check_probability(p)?;
    check_time(t)?;
    let q = 1.0 - p;
    let decay = (-t).exp();
    let jumped = -(-t).exp_m1();
    Ok(TransitionParams {
        p,
        t,
        theta: p * jumped,
        kappa: p + q * decay,
        one_minus_kappa: q * jumped,
    })
}

/// The 2×2 transition matrix [[1−θ, θ], [1−κ, κ]].
pub fn transition_matrix(p: f64, t: f64) -> Result<[[f64; 2]; 2]> {
    let tp = transition_params(p, t)?;
    Ok([
        [1.0 - tp.theta, tp.theta],
        [tp.one_minus_kappa, tp.kappa],
    ])
}

fn check_k(k: u64) -> Result<()> {
    if k == 0 {
        return Err(Error::domain("k must be >= 1"));
    }
    if k > MAX_CLOSED_FORM_K {
        return Err(Error::Size(format!("k = {k} exceeds {MAX_CLOSED_FORM_K}")));
    }
    Ok(())
}

/// P(S_k(t) = k−ℓ | S_k(0) = k−ℓ), summed in log space.
pub fn conditional_return_prob(k: u64, ell: u64, t: f64, p: f64) -> Result<f64> {
    check_k(k)?;
    if ell > k {
        return Err(Error::domain(format!("ell = {ell} exceeds k = {k}")));
    }
    let tp = transition_params(p, t)?;
    let ones = k - ell;
    let ln_theta = tp.theta.ln();
    let ln_not_theta = (1.0 - tp.theta).ln();
    let ln_kappa = tp.kappa.ln();
    let ln_not_kappa = tp.one_minus_kappa.ln();
    // i zeros become ones and, to keep the sum fixed, i ones become zeros.
    let terms: Vec<f64> = (0..=ell.min(ones))
        .map(|i| {
            let fi = i as f64;
            ln_choose(ell, i)
                + xlny_ln(fi, ln_theta)
                + xlny_ln((ell - i) as f64, ln_not_theta)
                + ln_choose(ones, i)
                + xlny_ln((ones - i) as f64, ln_kappa)
                + xlny_ln(fi, ln_not_kappa)
        })
        .collect();
    Ok(log_sum_exp(&terms).exp().clamp(0.0, 1.0))
}

/// x·ln y given ln y, with 0·(−∞) = 0.
#[inline]
fn xlny_ln(x: f64, ln_y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * ln_y
    }
}

/// Law of S_k(t) given S_k(0) = a.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SumDistribution {
    pub k: u64,
    pub probs: Vec<f64>,
}

impl SumDistribution {
    pub fn prob(&self, s: usize) -> f64 {
        self.probs.get(s).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}

fn binomial_law(n: u64, ln_prob: f64, ln_not: f64) -> Vec<f64> {
    (0..=n)
        .map(|i| (ln_choose(n, i) + xlny_ln(i as f64, ln_prob) + xlny_ln((n - i) as f64, ln_not)).exp())
        .collect()
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Law of Binomial(a, κ_t) + Binomial(k−a, θ_t): the ones that survive plus
/// the zeros that turned into ones.
pub fn sum_transition_kernel(k: u64, a: u64, t: f64, p: f64) -> Result<SumDistribution> {
    check_k(k)?;
    if a > k {
        return Err(Error::domain(format!("a = {a} exceeds k = {k}")));
    }
    let tp = transition_params(p, t)?;
    Ok(kernel_row(k, a, &tp))
}

fn kernel_row(k: u64, a: u64, tp: &TransitionParams) -> SumDistribution {
    let stay = binomial_law(a, tp.kappa.ln(), tp.one_minus_kappa.ln());
    let arrive = binomial_law(k - a, tp.theta.ln(), (1.0 - tp.theta).ln());
    SumDistribution { k, probs: convolve(&stay, &arrive) }
}

/// Full (k+1)×(k+1) transition matrix of the sum chain over time t,
/// row a = law of S_k(t) given S_k(0) = a.
pub fn sum_kernel_matrix(k: u64, t: f64, p: f64) -> Result<Vec<Vec<f64>>> {
    check_k(k)?;
    let tp = transition_params(p, t)?;
    Ok((0..=k).map(|a| kernel_row(k, a, &tp).probs).collect())
}

/// Stationary law Binomial(k, p) of S_k.
pub fn stationary_law(k: u64, p: f64) -> Result<Vec<f64>> {
    check_k(k)?;
    check_probability(p)?;
    Ok((0..=k)
        .map(|i| (ln_choose(k, i) + xlny(i as f64, p) + xlny((k - i) as f64, 1.0 - p)).exp())
        .collect())
}

/// One resampling: at `time`, bit `index` (0-based) takes value `value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub index: u32,
    pub value: u8,
}

/// A dynamical bit sequence on [0, horizon], stored as its event list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub k: u64,
    pub p: f64,
    pub horizon: f64,
    pub initial_bits: Vec<u8>,
    pub events: Vec<Event>,
    pub seed: u64,
}

/// Maximal interval on which S_k is constant: [start, end), or [start, end]
/// for the last epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epoch {
    pub start: f64,
    pub end: f64,
    pub sum: u64,
}

fn check_sim(k: u64, p: f64, horizon: f64) -> Result<()> {
    if k == 0 || k > u32::MAX as u64 {
        return Err(Error::domain(format!("k = {k} out of range")));
    }
    check_probability(p)?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::domain(format!("horizon must be > 0, got {horizon}")));
    }
    Ok(())
}

/// Simulate with i.i.d. Bernoulli(p) initial bits; deterministic in `seed`.
pub fn simulate_trajectory(k: u64, p: f64, horizon: f64, seed: u64) -> Result<Trajectory> {
    check_sim(k, p, horizon)?;
    let mut rng = trial_rng(seed, 0);
    Ok(simulate_with(k, p, horizon, seed, &mut rng))
}

pub(crate) fn simulate_with<R: Rng>(k: u64, p: f64, horizon: f64, seed: u64, rng: &mut R) -> Trajectory {
    let initial_bits: Vec<u8> = (0..k).map(|_| rng.random_bool(p) as u8).collect();
    evolve(initial_bits, p, horizon, seed, rng)
}

/// Simulate from a given initial configuration.
pub fn simulate_from<R: Rng>(initial_bits: Vec<u8>, p: f64, horizon: f64, rng: &mut R) -> Result<Trajectory> {
    check_sim(initial_bits.len() as u64, p, horizon)?;
    if initial_bits.iter().any(|&b| b > 1) {
        return Err(Error::domain("bits must be 0 or 1"));
    }
    Ok(evolve(initial_bits, p, horizon, 0, rng))
}

fn evolve<R: Rng>(initial_bits: Vec<u8>, p: f64, horizon: f64, seed: u64, rng: &mut R) -> Trajectory {
    let k = initial_bits.len() as u64;
    let gaps = Exp::new(k as f64).expect("positive rate");
    let mut events = Vec::with_capacity((k as f64 * horizon * 1.2) as usize + 8);
    let mut t = 0.0;
    loop {
        t += gaps.sample(rng);
        if t > horizon {
            break;
        }
        let index = rng.random_range(0..k as u32);
        let value = rng.random_bool(p) as u8;
        events.push(Event { time: t, index, value });
    }
    Trajectory { k, p, horizon, initial_bits, events, seed }
}

impl Trajectory {
    pub fn initial_sum(&self) -> u64 {
        self.initial_bits.iter().map(|&b| b as u64).sum()
    }

    /// Bits after replaying every event.
    pub fn final_bits(&self) -> Vec<u8> {
        let mut bits = self.initial_bits.clone();
        for e in &self.events {
            bits[e.index as usize] = e.value;
        }
        bits
    }

    /// Maximal constancy epochs of S_k covering [0, horizon].
    pub fn epochs(&self) -> Vec<Epoch> {
        let mut bits = self.initial_bits.clone();
        let mut sum = self.initial_sum();
        let mut out = Vec::new();
        let mut start = 0.0;
        for e in &self.events {
            let old = std::mem::replace(&mut bits[e.index as usize], e.value);
            if old == e.value {
                continue;
            }
            out.push(Epoch { start, end: e.time, sum });
            start = e.time;
            sum = if e.value == 1 { sum + 1 } else { sum - 1 };
        }
        out.push(Epoch { start, end: self.horizon, sum });
        out
    }

    /// S_k(t), right-continuous.
    pub fn sum_at(&self, t: f64) -> u64 {
        let mut bits = self.initial_bits.clone();
        let mut sum = self.initial_sum();
        for e in self.events.iter().take_while(|e| e.time <= t) {
            let old = std::mem::replace(&mut bits[e.index as usize], e.value);
            sum = sum + e.value as u64 - old as u64;
        }
        sum
    }
}

/// Exact test of ∃ t ∈ F with S_k(t) = level, on the piecewise-constant path.
pub fn hits_level(traj: &Trajectory, level: u64, f: &TimeSet) -> Result<bool> {
    match f.sup() {
        None => return Ok(false),
        Some(s) if s > traj.horizon => {
            return Err(Error::domain(format!(
                "time set reaches {s}, beyond the horizon {}",
                traj.horizon
            )))
        }
        _ => {}
    }
    Ok(epochs_hit(&traj.epochs(), level, f))
}

pub(crate) fn epochs_hit(epochs: &[Epoch], level: u64, f: &TimeSet) -> bool {
    let last = epochs.len() - 1;
    epochs.iter().enumerate().any(|(i, ep)| {
        ep.sum == level
            && if i == last {
                f.intersects(ep.start, ep.end)
            } else {
                f.intersects_half_open(ep.start, ep.end)
            }
    })
}
