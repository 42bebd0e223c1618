//! Compact time sets on the half-line with exact interval queries,
//! Kolmogorov ε-capacities and Minkowski-dimension estimates.
//!
//! Every variant is materialized as a sorted list of pairwise-disjoint closed
//! intervals (isolated points are degenerate intervals), and all queries run
//! against that list. Cantor sets are realized at a fixed finite depth, which
//! is part of the set's identity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{sliding_decade_slopes, GeometricGrid};

/// Relative slack on the ε-separation test, absorbing rounding in
/// products such as `k * (1/k)`.
const SEPARATION_SLACK: f64 = 1e-12;
/// Relative slack used when snapping `x·k` to an integer grid line.
const GRID_SNAP: f64 = 1e-9;
const MAX_CANTOR_DEPTH: u32 = 24;

/// JSON description of a time set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum TimeSetSpec {
    Intervals { intervals: Vec<[f64; 2]> },
    Cantor { left: f64, length: f64, ratio: f64, depth: u32 },
    Points { points: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TimeSetSpec", into = "TimeSetSpec")]
pub struct TimeSet {
    spec: TimeSetSpec,
    components: Vec<(f64, f64)>,
}

impl TryFrom<TimeSetSpec> for TimeSet {
    type Error = Error;

    fn try_from(spec: TimeSetSpec) -> Result<Self> {
        let components = match &spec {
            TimeSetSpec::Intervals { intervals } => {
                let mut comps: Vec<(f64, f64)> = intervals.iter().map(|iv| (iv[0], iv[1])).collect();
                for &(a, b) in &comps {
                    if !(a.is_finite() && b.is_finite() && a >= 0.0 && a <= b) {
                        return Err(Error::domain(format!("invalid interval [{a}, {b}]")));
                    }
                }
                comps.sort_by(|x, y| x.0.total_cmp(&y.0));
                if comps.windows(2).any(|w| w[0].1 >= w[1].0) {
                    return Err(Error::domain("intervals must be pairwise disjoint"));
                }
                comps
            }
            TimeSetSpec::Cantor { left, length, ratio, depth } => {
                if !(left.is_finite() && *left >= 0.0) {
                    return Err(Error::domain(format!("cantor left endpoint {left} invalid")));
                }
                if !(length.is_finite() && *length > 0.0) {
                    return Err(Error::domain(format!("cantor length {length} must be > 0")));
                }
                if !(*ratio > 0.0 && *ratio < 0.5) {
                    return Err(Error::domain(format!("cantor ratio {ratio} must lie in (0, 1/2)")));
                }
                if *depth > MAX_CANTOR_DEPTH {
                    return Err(Error::Size(format!("cantor depth {depth} > {MAX_CANTOR_DEPTH}")));
                }
                cantor_level(*left, *length, *ratio, *depth)
            }
            TimeSetSpec::Points { points } => {
                let mut pts = points.clone();
                if pts.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                    return Err(Error::domain("points must be finite and >= 0"));
                }
                pts.sort_by(f64::total_cmp);
                pts.dedup();
                pts.into_iter().map(|x| (x, x)).collect()
            }
        };
        Ok(TimeSet { spec, components })
    }
}

impl From<TimeSet> for TimeSetSpec {
    fn from(ts: TimeSet) -> Self {
        ts.spec
    }
}

/// The 2^level closed intervals of the level-`level` Cantor construction.
fn cantor_level(left: f64, length: f64, ratio: f64, level: u32) -> Vec<(f64, f64)> {
    let mut starts = vec![left];
    let mut len = length;
    for _ in 0..level {
        let child = len * ratio;
        let shift = len - child;
        starts = starts.iter().flat_map(|&a| [a, a + shift]).collect();
        len = child;
    }
    starts.into_iter().map(|a| (a, a + len)).collect()
}

impl TimeSet {
    pub fn from_spec(spec: TimeSetSpec) -> Result<Self> {
        Self::try_from(spec)
    }

    pub fn interval(a: f64, b: f64) -> Result<Self> {
        Self::intervals(&[[a, b]])
    }

    pub fn intervals(intervals: &[[f64; 2]]) -> Result<Self> {
        Self::try_from(TimeSetSpec::Intervals { intervals: intervals.to_vec() })
    }

    pub fn cantor(left: f64, length: f64, ratio: f64, depth: u32) -> Result<Self> {
        Self::try_from(TimeSetSpec::Cantor { left, length, ratio, depth })
    }

    pub fn points(points: &[f64]) -> Result<Self> {
        Self::try_from(TimeSetSpec::Points { points: points.to_vec() })
    }

    pub fn spec(&self) -> &TimeSetSpec {
        &self.spec
    }

    /// Sorted disjoint closed intervals making up the set.
    pub fn components(&self) -> &[(f64, f64)] {
        &self.components
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn inf(&self) -> Option<f64> {
        self.components.first().map(|c| c.0)
    }

    pub fn sup(&self) -> Option<f64> {
        self.components.last().map(|c| c.1)
    }

    /// Largest distance between two points of the set.
    pub fn diameter(&self) -> f64 {
        match (self.inf(), self.sup()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.intersects(x, x)
    }

    /// Exact test of F ∩ [a, b] ≠ ∅.
    pub fn intersects(&self, a: f64, b: f64) -> bool {
        if a > b {
            return false;
        }
        let i = self.components.partition_point(|c| c.1 < a);
        i < self.components.len() && self.components[i].0 <= b
    }

    /// Exact test of F ∩ [a, b) ≠ ∅.
    pub fn intersects_half_open(&self, a: f64, b: f64) -> bool {
        if a >= b {
            return false;
        }
        let i = self.components.partition_point(|c| c.1 < a);
        i < self.components.len() && self.components[i].0 < b
    }

    /// Kolmogorov ε-capacity: the largest number of points of F with
    /// pairwise distances at least ε. Greedy left-to-right selection is
    /// optimal on the line.
    pub fn capacity(&self, eps: f64) -> Result<u64> {
        if self.is_empty() {
            return Err(Error::EmptySet);
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::domain(format!("eps must be positive, got {eps}")));
        }
        let step = eps * (1.0 - SEPARATION_SLACK);
        let comps = &self.components;
        let mut ci = 0;
        let mut last = comps[0].0;
        let mut count: u64 = 1;
        loop {
            let hi = comps[ci].1;
            let fits = ((hi - last) / step).floor();
            if fits >= 1.0 {
                count += fits as u64;
                last += fits * step;
            }
            let target = last + step;
            ci += comps[ci..].partition_point(|c| c.1 < target);
            if ci == comps.len() {
                return Ok(count);
            }
            last = target.max(comps[ci].0);
            count += 1;
        }
    }

    /// Number of grid cells [i/k, (i+1)/k] of [0, max(1, sup F)] that meet F.
    pub fn covering_count(&self, k: u64) -> Result<u64> {
        if k == 0 {
            return Err(Error::domain("k must be >= 1"));
        }
        if self.is_empty() {
            return Ok(0);
        }
        let kf = k as f64;
        let snap = |x: f64| -> (i64, bool) {
            let v = x * kf;
            let r = v.round();
            if (v - r).abs() <= GRID_SNAP * v.abs().max(1.0) {
                (r as i64, true)
            } else {
                (v.floor() as i64, false)
            }
        };
        let (sup_cell, sup_on_line) = snap(self.sup().unwrap().max(1.0));
        let n_cells = if sup_on_line { sup_cell } else { sup_cell + 1 };
        let last_cell = n_cells - 1;
        let mut count: i64 = 0;
        let mut covered_to: i64 = -1;
        for &(lo, hi) in &self.components {
            let (l, l_line) = snap(lo);
            let (h, _) = snap(hi);
            let first = if l_line { l - 1 } else { l }.max(0).max(covered_to + 1);
            let last = h.min(last_cell);
            if last >= first {
                count += last - first + 1;
                covered_to = last;
            }
        }
        Ok(count as u64)
    }

    /// Capacities over a geometric ε grid together with lower/upper
    /// Minkowski-dimension estimates.
    pub fn minkowski_dims(&self, grid: &GeometricGrid) -> Result<CapacityProfile> {
        let epsilons = grid.values()?;
        let capacities = epsilons
            .iter()
            .map(|&e| self.capacity(e))
            .collect::<Result<Vec<_>>>()?;
        let vals: Vec<f64> = capacities.iter().map(|&c| c as f64).collect();
        let (alpha, beta) = sliding_decade_slopes(&epsilons, &vals)?;
        let doubling = epsilons
            .iter()
            .zip(&capacities)
            .map(|(&e, &c)| Ok(c as f64 / self.capacity(2.0 * e)? as f64))
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(1.0, f64::max);
        Ok(CapacityProfile { epsilons, capacities, alpha, beta, doubling })
    }

    /// Up to `n` candidate atoms lying in F, used to discretize measures.
    ///
    /// Interval unions get equally spaced points per component (proportional
    /// to length), Cantor sets get interval endpoints (plus midpoints at full
    /// depth) from the finest level that fits, finite sets get their points.
    pub fn grid_points(&self, n: usize) -> Result<Vec<f64>> {
        if self.is_empty() {
            return Err(Error::EmptySet);
        }
        if n < 2 {
            return Err(Error::domain("grid needs at least 2 candidate atoms"));
        }
        let pts = match &self.spec {
            TimeSetSpec::Cantor { depth, .. } => {
                let full = 3usize << depth;
                if n >= full {
                    self.components
                        .iter()
                        .flat_map(|&(a, b)| [a, 0.5 * (a + b), b])
                        .collect()
                } else {
                    // Endpoints of the coarser level, read off the depth-d
                    // intervals so they lie exactly in the set.
                    let level = ((n / 2).max(1).ilog2()).min(*depth);
                    let block = 1usize << (depth - level);
                    self.components
                        .chunks(block)
                        .flat_map(|c| [c[0].0, c[c.len() - 1].1])
                        .collect()
                }
            }
            TimeSetSpec::Points { .. } => {
                let all: Vec<f64> = self.components.iter().map(|c| c.0).collect();
                if all.len() <= n {
                    all
                } else {
                    (0..n).map(|i| all[i * (all.len() - 1) / (n - 1)]).collect()
                }
            }
            TimeSetSpec::Intervals { .. } => self.interval_grid(n),
        };
        let mut pts = pts;
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        Ok(pts)
    }

    fn interval_grid(&self, n: usize) -> Vec<f64> {
        let total: f64 = self.components.iter().map(|c| c.1 - c.0).sum();
        let singles = self.components.iter().filter(|c| c.1 == c.0).count();
        let budget = n.saturating_sub(singles).max(2);
        let mut pts = Vec::with_capacity(n);
        for &(a, b) in &self.components {
            if b == a {
                pts.push(a);
                continue;
            }
            let share = ((b - a) / total * budget as f64).round() as usize;
            let m = share.max(2);
            pts.extend((0..m).map(|i| a + (b - a) * i as f64 / (m - 1) as f64));
        }
        pts
    }
}

/// Capacity profile K_F(ε) over a decreasing ε grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacityProfile {
    pub epsilons: Vec<f64>,
    pub capacities: Vec<u64>,
    /// Lower Minkowski-dimension estimate.
    pub alpha: f64,
    /// Upper Minkowski-dimension estimate.
    pub beta: f64,
    /// Largest observed K_F(ε) / K_F(2ε) over the grid.
    pub doubling: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exhaustive maximum ε-separated subset of a finite candidate list.
    fn brute_capacity(cands: &[f64], eps: f64) -> u64 {
        assert!(cands.len() <= 20);
        let step = eps * (1.0 - SEPARATION_SLACK);
        let n = cands.len();
        let mut best = 0;
        for mask in 1u32..(1 << n) {
            let chosen: Vec<f64> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| cands[i]).collect();
            if chosen.windows(2).all(|w| w[1] - w[0] >= step) {
                best = best.max(chosen.len() as u64);
            }
        }
        best
    }

    #[test]
    fn intersects_examples() {
        let unit = TimeSet::interval(0.0, 1.0).unwrap();
        assert!(unit.intersects(0.5, 0.5));
        let c1 = TimeSet::cantor(0.0, 1.0, 1.0 / 3.0, 1).unwrap();
        assert!(!c1.intersects(0.4, 0.6));
        assert!(c1.intersects(0.3, 0.34));
        let p = TimeSet::points(&[0.25]).unwrap();
        assert!(p.intersects(0.2, 0.3));
        assert!(!p.intersects_half_open(0.2, 0.25));
        assert!(p.intersects_half_open(0.25, 0.3));
    }

    #[test]
    fn capacity_examples() {
        let origin = TimeSet::points(&[0.0]).unwrap();
        for eps in [1e-6, 0.1, 10.0] {
            assert_eq!(origin.capacity(eps).unwrap(), 1);
        }
        let unit = TimeSet::interval(0.0, 1.0).unwrap();
        assert_eq!(unit.capacity(0.5).unwrap(), 3);
        for k in 1..200u64 {
            assert_eq!(unit.capacity(1.0 / k as f64).unwrap(), k + 1);
        }
        assert!(matches!(TimeSet::points(&[]).unwrap().capacity(0.1), Err(Error::EmptySet)));
    }

    /// Longest ε-separated chain among sorted candidates, by dynamic
    /// programming over all predecessors.
    fn chain_capacity(cands: &[f64], eps: f64) -> u64 {
        let step = eps * (1.0 - SEPARATION_SLACK);
        let mut best = vec![1u64; cands.len()];
        for i in 0..cands.len() {
            for j in 0..i {
                if cands[i] - cands[j] >= step {
                    best[i] = best[i].max(best[j] + 1);
                }
            }
        }
        best.into_iter().max().unwrap_or(0)
    }

    #[test]
    fn cantor_capacity_matches_exhaustive_search() {
        // For ε = 3^-n with n ≤ d an optimal packing sits on level-d
        // endpoints, so searching over them is exact.
        for d in 1..=6u32 {
            let c = TimeSet::cantor(0.0, 1.0, 1.0 / 3.0, d).unwrap();
            let cands: Vec<f64> = c.components().iter().flat_map(|&(a, b)| [a, b]).collect();
            for n in 1..=d as i32 {
                let eps = 3f64.powi(-n);
                let greedy = c.capacity(eps).unwrap();
                assert_eq!(greedy, chain_capacity(&cands, eps), "d={d} n={n}");
                if cands.len() <= 16 {
                    assert_eq!(greedy, brute_capacity(&cands, eps), "d={d} n={n}");
                }
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn greedy_is_optimal_on_finite_sets(
            pts in proptest::collection::vec(0.0f64..1.0, 1..=15),
            eps in 0.01f64..0.5,
        ) {
            let f = TimeSet::points(&pts).unwrap();
            let cands: Vec<f64> = f.components().iter().map(|c| c.0).collect();
            proptest::prop_assert_eq!(f.capacity(eps).unwrap(), brute_capacity(&cands, eps));
        }
    }

    #[test]
    fn covering_examples() {
        let unit = TimeSet::interval(0.0, 1.0).unwrap();
        assert_eq!(unit.covering_count(4).unwrap(), 4);
        assert_eq!(TimeSet::points(&[0.5]).unwrap().covering_count(4).unwrap(), 2);
        assert_eq!(TimeSet::points(&[0.0]).unwrap().covering_count(4).unwrap(), 1);
        // Direct enumeration in integer units of 1/27: level-3 intervals
        // start at ternary numbers with digits in {0, 2} and the closed
        // interval [j, j+1] touches cells j-1 through j+1.
        let c3 = TimeSet::cantor(0.0, 1.0, 1.0 / 3.0, 3).unwrap();
        let k = 27u64;
        let mut cells = std::collections::BTreeSet::new();
        for digits in 0..8u64 {
            let j = (0..3).map(|b| 2 * ((digits >> b) & 1) * 3u64.pow(b as u32)).sum::<u64>();
            for c in j.saturating_sub(1)..=j + 1 {
                if c < k {
                    cells.insert(c);
                }
            }
        }
        let brute = cells.len() as u64;
        assert_eq!(brute, 18);
        assert_eq!(c3.covering_count(k).unwrap(), brute);
    }

    #[test]
    fn cantor_materialization() {
        let c = TimeSet::cantor(0.0, 1.0, 0.3, 5).unwrap();
        assert_eq!(c.components().len(), 32);
        for &(a, b) in c.components() {
            assert!((b - a - 0.3f64.powi(5)).abs() < 1e-15);
        }
        assert!(TimeSet::cantor(0.0, 1.0, 0.5, 3).is_err());
    }

    #[test]
    fn spec_json_schema() {
        let ts: TimeSet =
            serde_json::from_str(r#"{"type":"cantor","left":0,"length":1,"ratio":0.3333333333,"depth":10}"#)
                .unwrap();
        assert_eq!(ts.components().len(), 1024);
        let ts: TimeSet =
            serde_json::from_str(r#"{"type":"intervals","intervals":[[0,0.1],[0.5,0.6]]}"#).unwrap();
        assert_eq!(ts.components().len(), 2);
        let ts: TimeSet = serde_json::from_str(r#"{"type":"points","points":[0,0.25,1]}"#).unwrap();
        assert_eq!(ts.components().len(), 3);
        assert!(serde_json::from_str::<TimeSet>(r#"{"type":"points","points":[0],"x":1}"#).is_err());
        assert!(serde_json::from_str::<TimeSet>(r#"{"type":"intervals","intervals":[[0,0.5],[0.4,1]]}"#).is_err());
        let back = serde_json::to_string(&ts).unwrap();
        assert_eq!(back, r#"{"type":"points","points":[0.0,0.25,1.0]}"#);
    }

    #[test]
    fn minkowski_examples() {
        let fine = GeometricGrid::new(1e-3, 1e-6, 10);
        let unit = TimeSet::interval(0.0, 1.0).unwrap().minkowski_dims(&fine).unwrap();
        assert!((unit.alpha - 1.0).abs() < 0.02 && (unit.beta - 1.0).abs() < 0.02, "{unit:?}");
        let pts = TimeSet::points(&[0.0, 0.1, 0.7]).unwrap().minkowski_dims(&fine).unwrap();
        assert!(pts.alpha.abs() < 0.02 && pts.beta.abs() < 0.02, "{pts:?}");
        // Stay above the depth-12 interval length 3^-12 ≈ 1.9e-6.
        let grid = GeometricGrid::new(1e-1, 1e-4, 10);
        let cantor = TimeSet::cantor(0.0, 1.0, 1.0 / 3.0, 12).unwrap().minkowski_dims(&grid).unwrap();
        let d = 2f64.ln() / 3f64.ln();
        assert!((cantor.alpha - d).abs() < 0.05 && (cantor.beta - d).abs() < 0.05, "{cantor:?}");
    }

    #[test]
    fn degenerate_grid_rejected() {
        let unit = TimeSet::interval(0.0, 1.0).unwrap();
        assert!(matches!(
            unit.minkowski_dims(&GeometricGrid::new(1.0, 0.1, 10)),
            Err(Error::DegenerateGrid(_))
        ));
    }

    #[test]
    fn grid_points_lie_in_set() {
        let sets = [
            TimeSet::intervals(&[[0.0, 0.1], [0.5, 0.6], [0.9, 0.9]]).unwrap(),
            TimeSet::cantor(0.0, 1.0, 1.0 / 3.0, 6).unwrap(),
            TimeSet::points(&[0.1, 0.2, 0.3]).unwrap(),
        ];
        for s in &sets {
            for n in [2, 17, 100, 1000] {
                let g = s.grid_points(n).unwrap();
                assert!(!g.is_empty());
                assert!(g.iter().all(|&x| s.contains(x)), "{s:?} n={n}");
            }
        }
    }
}
