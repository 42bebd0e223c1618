//! Kernels, discrete measures, minimal energies and weighted packings.
//!
//! Measures live on finite candidate grids placed on a time set. Minimal
//! energies are found with pairwise Frank–Wolfe over the simplex, and
//! weighted ψ_s-packings with a dense simplex solve. The two routes are
//! dual to each other: a packing `w` normalised to a probability measure
//! has energy at most `1/Σw`, and an optimal measure rescaled by its
//! potential on its own support is a packing.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lp;
use crate::parity::BlockScheme;
use crate::special::{sliding_decade_slopes, GeometricGrid};
use crate::timeset::TimeSet;

/// Largest candidate grid for dense kernel matrices and LP solves.
pub const MAX_GRID: usize = 2000;
/// Frank–Wolfe stops once energy − min potential falls below this.
pub const FW_GAP_TOL: f64 = 1e-6;
const FW_MAX_ITER: usize = 2_000_000;
/// Row-sum slack allowed in packing constraints.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Kernel {
    /// ψ_s(x) = min(1, |x|^-s)
    PsiS { s: f64 },
    /// min(1/√(k|x|), 1)
    SqrtClamp { k: f64 },
    /// λ ↦ (𝓛g)(|λ|) for the scheme's g; unbounded at 0.
    LaplaceStieltjes { scheme: BlockScheme },
}

impl Kernel {
    pub fn psi(s: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::domain(format!("s must be > 0, got {s}")));
        }
        Ok(Kernel::PsiS { s })
    }

    pub fn sqrt_clamp(k: f64) -> Result<Self> {
        if !(k >= 1.0 && k.is_finite()) {
            return Err(Error::domain(format!("k must be >= 1, got {k}")));
        }
        Ok(Kernel::SqrtClamp { k })
    }

    /// Whether values lie in [0, 1] with value 1 at the origin.
    pub fn is_clamped(&self) -> bool {
        !matches!(self, Kernel::LaplaceStieltjes { .. })
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        let ax = x.abs();
        Ok(match self {
            Kernel::PsiS { s } => psi(*s, ax),
            Kernel::SqrtClamp { k } => {
                let v = k * ax;
                if v <= 1.0 {
                    1.0
                } else {
                    v.sqrt().recip()
                }
            }
            Kernel::LaplaceStieltjes { scheme } => {
                if ax == 0.0 {
                    f64::INFINITY
                } else {
                    scheme.laplace_g(ax)?
                }
            }
        })
    }
}

#[inline]
fn psi(s: f64, ax: f64) -> f64 {
    if ax <= 1.0 {
        1.0
    } else {
        ax.powf(-s)
    }
}

/// Probability measure with finitely many atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Atoms must be sorted; weights nonnegative with unit total.
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::domain("atoms and weights must be nonempty and of equal length"));
        }
        if atoms.iter().any(|a| !a.is_finite()) || atoms.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::domain("atoms must be finite and sorted"));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::domain("weights must be finite and >= 0"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::domain(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { atoms, weights })
    }

    pub fn uniform(atoms: Vec<f64>) -> Result<Self> {
        let n = atoms.len();
        Self::new(atoms, vec![1.0 / n as f64; n])
    }

    pub fn point_mass(a: f64) -> Self {
        Self { atoms: vec![a], weights: vec![1.0] }
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn supported_on(&self, f: &TimeSet) -> bool {
        self.atoms.iter().all(|&a| f.contains(a))
    }
}

/// Σ_i Σ_j w_i w_j kernel((x_i − x_j)/r).
pub fn energy(mu: &DiscreteMeasure, kernel: &Kernel, r: f64) -> Result<f64> {
    check_scale(r)?;
    let (x, w) = (&mu.atoms, &mu.weights);
    let rows: Vec<f64> = (0..x.len())
        .into_par_iter()
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..x.len() {
                acc += w[j] * kernel.eval((x[i] - x[j]) / r)?;
            }
            Ok(w[i] * acc)
        })
        .collect::<Result<_>>()?;
    Ok(rows.iter().sum())
}

fn check_scale(r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!("scale r must be > 0, got {r}")))
    }
}

/// Dense symmetric kernel matrix, row-major.
pub(crate) fn kernel_matrix(x: &[f64], kernel: &Kernel, r: f64) -> Result<Vec<f64>> {
    let n = x.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| x.iter().map(|&xj| kernel.eval((x[i] - xj) / r)).collect())
        .collect::<Result<_>>()?;
    Ok(rows.concat())
}

fn candidate_atoms(f: &TimeSet, grid_n: usize) -> Result<Vec<f64>> {
    if grid_n > MAX_GRID {
        return Err(Error::Size(format!("grid_n = {grid_n} exceeds {MAX_GRID}")));
    }
    f.grid_points(grid_n)
}

/// Outcome of a Frank–Wolfe energy minimisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyMinimum {
    pub measure: DiscreteMeasure,
    pub value: f64,
    /// Energy minus the smallest potential over the grid.
    pub gap: f64,
    pub min_potential: f64,
    pub iterations: usize,
}

/// Approximately minimise μ ↦ ∬ kernel((u−v)/r) μ(du) μ(dv) over
/// probability measures on a grid of up to `grid_n` atoms in F.
pub fn min_energy(f: &TimeSet, kernel: &Kernel, r: f64, grid_n: usize) -> Result<EnergyMinimum> {
    check_scale(r)?;
    if !kernel.is_clamped() {
        return Err(Error::domain("min_energy needs a kernel that is finite at the origin"));
    }
    let x = candidate_atoms(f, grid_n)?;
    let a = kernel_matrix(&x, kernel, r)?;
    let (weights, iterations) = frank_wolfe(&a, x.len())?;
    finish_minimum(x, &a, weights, iterations)
}

/// Same as [`min_energy`] on explicit atoms with a precomputed matrix.
pub(crate) fn min_energy_on(x: Vec<f64>, a: &[f64]) -> Result<EnergyMinimum> {
    let (weights, iterations) = frank_wolfe(a, x.len())?;
    finish_minimum(x, a, weights, iterations)
}

fn finish_minimum(x: Vec<f64>, a: &[f64], w: Vec<f64>, iterations: usize) -> Result<EnergyMinimum> {
    let n = x.len();
    let pot = mat_vec(a, &w, n);
    let value: f64 = w.iter().zip(&pot).map(|(wi, pi)| wi * pi).sum();
    let min_potential = pot.iter().copied().fold(f64::INFINITY, f64::min);
    let total: f64 = w.iter().sum();
    let measure = DiscreteMeasure::new(x, w.iter().map(|v| v / total).collect())?;
    Ok(EnergyMinimum { measure, value, gap: value - min_potential, min_potential, iterations })
}

fn mat_vec(a: &[f64], w: &[f64], n: usize) -> Vec<f64> {
    (0..n)
        .into_par_iter()
        .map(|i| a[i * n..(i + 1) * n].iter().zip(w).map(|(aij, wj)| aij * wj).sum())
        .collect()
}

/// Pairwise Frank–Wolfe with exact line search for wᵀAw on the simplex.
fn frank_wolfe(a: &[f64], n: usize) -> Result<(Vec<f64>, usize)> {
    let mut w = vec![1.0 / n as f64; n];
    let mut pot = mat_vec(a, &w, n);
    for it in 0..FW_MAX_ITER {
        if it % 4096 == 4095 {
            // Refresh potentials to stop rounding drift.
            pot = mat_vec(a, &w, n);
        }
        let (mut s, mut away) = (0, usize::MAX);
        for i in 0..n {
            if pot[i] < pot[s] {
                s = i;
            }
            if w[i] > 0.0 && (away == usize::MAX || pot[i] > pot[away]) {
                away = i;
            }
        }
        let value: f64 = w.iter().zip(&pot).map(|(wi, pi)| wi * pi).sum();
        if value - pot[s] < FW_GAP_TOL {
            return Ok((w, it));
        }
        if away == s {
            return Ok((w, it));
        }
        let slope = pot[away] - pot[s];
        let curv = a[s * n + s] + a[away * n + away] - 2.0 * a[s * n + away];
        let mut step = if curv > 0.0 { slope / curv } else { f64::INFINITY };
        if step >= w[away] {
            step = w[away];
        }
        if step <= 0.0 {
            return Ok((w, it));
        }
        w[s] += step;
        w[away] -= step;
        if w[away] < 1e-300 {
            w[away] = 0.0;
        }
        let (rs, ra) = (&a[s * n..(s + 1) * n], &a[away * n..(away + 1) * n]);
        for i in 0..n {
            pot[i] += step * (rs[i] - ra[i]);
        }
    }
    Err(Error::Numeric(format!("Frank-Wolfe did not converge in {FW_MAX_ITER} iterations")))
}

/// A size-r weighted ψ_s-packing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackingSolution {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    /// Σ weights
    pub value: f64,
    pub r: f64,
    pub s: f64,
    /// Minimal grid energy found along the way.
    pub min_energy: f64,
    /// Frank–Wolfe duality gap of that energy at termination.
    pub energy_gap: f64,
}

impl PackingSolution {
    /// Largest row sum Σ_j w_j ψ_s((x_i − x_j)/r) over the packing points.
    pub fn max_row_sum(&self) -> f64 {
        max_row_sum(&self.points, &self.weights, self.s, self.r)
    }
}

fn max_row_sum(x: &[f64], w: &[f64], s: f64, r: f64) -> f64 {
    (0..x.len())
        .map(|i| x.iter().zip(w).map(|(&xj, wj)| wj * psi(s, ((x[i] - xj) / r).abs())).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Packing LP with a row at every point of `x`: maximise Σw subject to
/// Σ_j w_j ψ_s((x_i − x_j)/r) ≤ 1 for all i, w ≥ 0.
pub fn packing_lp(x: &[f64], s: f64, r: f64) -> Result<(Vec<f64>, f64)> {
    let n = x.len();
    if n > MAX_GRID {
        return Err(Error::Size(format!("{n} points exceed {MAX_GRID}")));
    }
    let a = kernel_matrix(x, &Kernel::psi(s)?, r)?;
    let all: Vec<usize> = (0..n).collect();
    packing_lp_indexed(&a, n, &all)
}

/// Packing LP restricted to the points `idx` of the n×n matrix `a`, with
/// a row at each of those points. Returns weights indexed like `a` (zero
/// off `idx`) and their sum.
fn packing_lp_indexed(a: &[f64], n: usize, idx: &[usize]) -> Result<(Vec<f64>, f64)> {
    let sub: Vec<f64> = idx
        .iter()
        .flat_map(|&i| idx.iter().map(move |&j| a[i * n + j]))
        .collect();
    // A tiny deterministic perturbation of the right-hand side breaks the
    // degeneracy of b = 1; the rescale below restores feasibility.
    let b: Vec<f64> = idx
        .iter()
        .map(|&i| 1.0 + 1e-9 * (i as f64 * 0.618_033_988_749_895).fract())
        .collect();
    let sol = lp::maximize(&sub, &b, &vec![1.0; idx.len()], 100 * idx.len() + 1000)?;
    let mut w = vec![0.0; n];
    for (&j, &xj) in idx.iter().zip(&sol.x) {
        w[j] = xj;
    }
    Ok(rescaled(a, n, idx, w))
}

/// Scale `w` so every row in `rows` has load at most 1.
fn rescaled(a: &[f64], n: usize, rows: &[usize], mut w: Vec<f64>) -> (Vec<f64>, f64) {
    let support: Vec<usize> = (0..n).filter(|&j| w[j] > 0.0).collect();
    let worst = rows
        .par_iter()
        .map(|&i| support.iter().map(|&j| a[i * n + j] * w[j]).sum::<f64>())
        .reduce(|| 0.0, f64::max);
    if worst > 1.0 {
        w.iter_mut().for_each(|v| *v /= worst);
    }
    let value = w.iter().sum();
    (w, value)
}

/// Weighted ψ_s-packing of F at scale r on a grid of up to `grid_n` atoms.
///
/// Constraints apply at the packing's own points. The search starts from
/// the support of the minimal-energy measure, solves the packing LP there,
/// and drops zero-weight points (releasing their rows) until the support is
/// stable.
pub fn weighted_packing(f: &TimeSet, s: f64, r: f64, grid_n: usize) -> Result<PackingSolution> {
    check_scale(r)?;
    let kernel = Kernel::psi(s)?;
    let x = candidate_atoms(f, grid_n)?;
    let n = x.len();
    let a = kernel_matrix(&x, &kernel, r)?;
    let em = min_energy_on(x.clone(), &a)?;
    let fw_support: Vec<usize> = (0..n).filter(|&i| em.measure.weights()[i] > 0.0).collect();

    let mut support = fw_support;
    let mut best: Option<(Vec<f64>, f64)> = None;
    loop {
        let (w, value) = packing_lp_indexed(&a, n, &support)?;
        let next: Vec<usize> = support.iter().copied().filter(|&i| w[i] > 0.0).collect();
        let improved = best.as_ref().is_none_or(|b| value > b.1);
        if improved {
            best = Some((w, value));
        }
        if next.len() == support.len() || !improved {
            break;
        }
        support = next;
    }
    let (w, _) = best.expect("at least one LP solve");
    let (points, weights): (Vec<f64>, Vec<f64>) =
        (0..n).filter(|&i| w[i] > 0.0).map(|i| (x[i], w[i])).unzip();
    let value = weights.iter().sum();
    Ok(PackingSolution { points, weights, value, r, s, min_energy: em.value, energy_gap: em.gap })
}

/// One row of a box-dimension profile table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub r: f64,
    pub grid_n: usize,
    pub packing: f64,
    pub min_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionProfile {
    pub s: f64,
    pub rows: Vec<ProfileRow>,
    /// Lower profile estimate (min sliding slope of log N_r vs log 1/r).
    pub gamma: f64,
    /// Upper profile estimate.
    pub delta: f64,
    /// Same slopes computed from 1/min_energy.
    pub energy_gamma: f64,
    pub energy_delta: f64,
}

/// Candidate grid size used at scale r: proportional to diam(F)/r, capped.
pub fn profile_grid_size(f: &TimeSet, r: f64) -> usize {
    let diam = f.diameter().max(r);
    ((4.0 * diam / r).ceil() as usize + 1).clamp(16, MAX_GRID)
}

/// s-dimensional box-dimension profile estimates from weighted packings.
pub fn box_dim_profile(f: &TimeSet, s: f64, r_grid: &GeometricGrid) -> Result<DimensionProfile> {
    let rs = r_grid.values()?;
    let rows = rs
        .iter()
        .map(|&r| {
            let grid_n = profile_grid_size(f, r);
            let sol = weighted_packing(f, s, r, grid_n)?;
            Ok(ProfileRow { r, grid_n, packing: sol.value, min_energy: sol.min_energy })
        })
        .collect::<Result<Vec<_>>>()?;
    let packing: Vec<f64> = rows.iter().map(|row| row.packing).collect();
    let inv_energy: Vec<f64> = rows.iter().map(|row| 1.0 / row.min_energy).collect();
    let (gamma, delta) = sliding_decade_slopes(&rs, &packing)?;
    let (energy_gamma, energy_delta) = sliding_decade_slopes(&rs, &inv_energy)?;
    Ok(DimensionProfile { s, rows, gamma, delta, energy_gamma, energy_delta })
}

/// Write `r,grid_n,packing,min_energy` rows as CSV.
pub fn write_profile_csv<W: Write>(rows: &[ProfileRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["r", "grid_n", "packing", "min_energy"])
        .map_err(|e| Error::Io(e.to_string()))?;
    for row in rows {
        wtr.write_record([
            format!("{:.16e}", row.r),
            row.grid_n.to_string(),
            format!("{:.16e}", row.packing),
            format!("{:.16e}", row.min_energy),
        ])
        .map_err(|e| Error::Io(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}
