//! Command-line frontend: JSON experiment configs in, deterministic CSV or
//! JSON artifacts out.
//!
//! Every command produces a table of rows and a summary block computed from
//! those rows alone, so a reader can re-derive the summary from the file.
//! Outputs carry the effective seed and a SHA-256 hash of the canonical
//! config.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::energy::{box_dim_profile, DiscreteMeasure};
use crate::error::{Error, Result};
use crate::estimators::{
    bracket_hit_prob, correlation_length_check, exact_hit_prob_finite, fmt17, mc_hit_prob,
    verify_return_asymptotics, verify_thm1, verify_thm3, ScalingReport, BRACKET_COARSE, BRACKET_FINE,
    MAX_DP_K, MAX_DP_TIMES, MIN_HITS,
};
use crate::parity::{energy_i_j, kernel_curve, simulate_t_m, BlockScheme, SchemeSpec};
use crate::process::simulate_trajectory;
use crate::runs::{crossover, dynamical_run_sup, erdos_renyi_batch, series_diagnostic};
use crate::special::{ls_slope, sliding_decade_slopes, GeometricGrid};
use crate::timeset::{TimeSet, TimeSetSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Subcommand)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Simulate one trajectory of k resampled bits
    Simulate,
    /// Kolmogorov capacity of a time set over a scale grid
    Capacity,
    /// Packing and energy box-dimension profile of a time set
    Dimprofile,
    /// Monte Carlo hitting probability with an exact or bracketed oracle
    Hitprob,
    /// Scaling-law checks (thm1, thm3, return, correlation)
    Verify,
    /// Run-length statistics (erdos_renyi, dynamical, series)
    Runs,
    /// Parity-block process (kernel, sandwich, tm)
    Parity,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Capacity => "capacity",
            Command::Dimprofile => "dimprofile",
            Command::Hitprob => "hitprob",
            Command::Verify => "verify",
            Command::Runs => "runs",
            Command::Parity => "parity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Thm1,
    Thm3,
    Return,
    Correlation,
    ErdosRenyi,
    Dynamical,
    Series,
    Kernel,
    Sandwich,
    Tm,
}

/// Geometric scale grid from `hi` down to `lo`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub hi: f64,
    pub lo: f64,
    pub per_decade: usize,
}

/// One experiment. Which fields are required depends on `command` and
/// `mode`; unknown fields are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<Command>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub set: Option<TimeSetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_grid: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ells: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// ψ_s exponent for `dimprofile`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    /// ε grid for `capacity`, r grid for `dimprofile`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    /// Times per k for `verify return`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_t: Option<usize>,
    /// Run start index (`runs dynamical`) or sequence length (`runs erdos_renyi`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thetas: Option<Vec<f64>>,
    /// Number of seeds for `runs erdos_renyi`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u64>,
    /// Acceptance band for `runs erdos_renyi` ratios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    /// Diameter bound D in the sandwich constant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
    /// Atoms of the uniform measure for `parity sandwich`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub atoms: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_blocks: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<Format>,
}

fn missing(field: &str, what: &str) -> Error {
    Error::Config(format!("`{field}` is required for {what}"))
}

macro_rules! need {
    ($cfg:expr, $field:ident, $what:expr) => {
        $cfg.$field.clone().ok_or_else(|| missing(stringify!($field), $what))?
    };
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// The config with presentation fields dropped; the hash is taken over
    /// its JSON serialisation.
    pub fn canonical(&self) -> Self {
        ExperimentConfig { output: None, format: None, ..self.clone() }
    }

    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.canonical()).expect("config serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    fn is_stochastic(&self) -> bool {
        match self.command {
            Some(Command::Simulate | Command::Hitprob) => true,
            Some(Command::Verify) => matches!(self.mode, Some(Mode::Thm1 | Mode::Thm3)),
            Some(Command::Runs) => matches!(self.mode, Some(Mode::ErdosRenyi | Mode::Dynamical)),
            Some(Command::Parity) => self.mode == Some(Mode::Tm),
            _ => false,
        }
    }

    fn time_set(&self, what: &str) -> Result<TimeSet> {
        TimeSet::from_spec(need!(self, set, what))
    }

    fn scheme(&self, what: &str) -> Result<BlockScheme> {
        BlockScheme::try_from(need!(self, scheme, what))
    }

    fn seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| missing("seed", "stochastic commands"))
    }
}

/// A table cell. Non-finite floats are written as strings.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Result<f64> {
        match self {
            Cell::Float(x) => Ok(*x),
            Cell::Int(i) => Ok(*i as f64),
            Cell::Text(t) => t.parse().map_err(|_| Error::Config(format!("`{t}` is not a number"))),
            Cell::Bool(_) => Err(Error::Config("expected a number, found a bool".into())),
        }
    }

    pub fn as_bool(&self) -> Result<bool> {
        match self {
            Cell::Bool(b) => Ok(*b),
            other => Err(Error::Config(format!("expected a bool, found {other:?}"))),
        }
    }

    fn csv_text(&self) -> String {
        match self {
            Cell::Bool(b) => b.to_string(),
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) if x.is_finite() => fmt17(*x),
            Cell::Float(x) => x.to_string(),
            Cell::Text(t) => t.clone(),
        }
    }

    fn parse_csv(s: &str) -> Cell {
        match s {
            "true" => Cell::Bool(true),
            "false" => Cell::Bool(false),
            _ => s
                .parse::<i64>()
                .map(Cell::Int)
                .or_else(|_| {
                    if s.contains('e') && !s.contains("inf") {
                        s.parse::<f64>().map(Cell::Float).map_err(|_| ())
                    } else {
                        Err(())
                    }
                })
                .unwrap_or_else(|_| Cell::Text(s.to_string())),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Float(x)
    }
}
impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x as i64)
    }
}
impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::Int(x as i64)
    }
}
impl From<i64> for Cell {
    fn from(x: i64) -> Self {
        Cell::Int(x)
    }
}
impl From<bool> for Cell {
    fn from(x: bool) -> Self {
        Cell::Bool(x)
    }
}
impl From<&str> for Cell {
    fn from(x: &str) -> Self {
        Cell::Text(x.to_string())
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cell::Bool(b) => s.serialize_bool(*b),
            Cell::Int(i) => s.serialize_i64(*i),
            Cell::Float(x) if x.is_finite() => s.serialize_f64(*x),
            Cell::Float(x) => s.serialize_str(&x.to_string()),
            Cell::Text(t) => s.serialize_str(t),
        }
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        match v {
            Value::Bool(b) => Ok(Cell::Bool(b)),
            Value::Number(n) => Ok(n.as_i64().map(Cell::Int).unwrap_or_else(|| Cell::Float(n.as_f64().unwrap_or(f64::NAN)))),
            Value::String(s) => Ok(Cell::Text(s)),
            other => Err(serde::de::Error::custom(format!("unsupported cell {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Table { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Config(format!("table has no column `{name}`")))
    }

    pub fn col_f64(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.index(name)?;
        self.rows.iter().map(|r| r[i].as_f64()).collect()
    }

    pub fn col_bool(&self, name: &str) -> Result<Vec<bool>> {
        let i = self.index(name)?;
        self.rows.iter().map(|r| r[i].as_bool()).collect()
    }
}

/// Finite floats as JSON numbers, others as strings.
fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        json!(x.to_string())
    }
}

fn fold_min_max(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)))
}

/// The summary block of a command's output, computed from its table.
pub fn derive_summary(command: Command, mode: Option<Mode>, t: &Table) -> Result<Map<String, Value>> {
    let mut m = Map::new();
    match (command, mode) {
        (Command::Simulate, _) => {
            let sums = t.col_f64("sum")?;
            let (lo, hi) = fold_min_max(sums.iter().copied());
            m.insert("events".into(), json!(t.rows.len().saturating_sub(1)));
            m.insert("initial_sum".into(), num(sums[0]));
            m.insert("final_sum".into(), num(sums[sums.len() - 1]));
            m.insert("min_sum".into(), num(lo));
            m.insert("max_sum".into(), num(hi));
        }
        (Command::Capacity, _) => {
            let eps = t.col_f64("eps")?;
            let cap = t.col_f64("capacity")?;
            let (alpha, beta) = sliding_decade_slopes(&eps, &cap)?;
            let (lo, hi) = fold_min_max(cap.iter().copied());
            m.insert("alpha".into(), num(alpha));
            m.insert("beta".into(), num(beta));
            m.insert("min_capacity".into(), num(lo));
            m.insert("max_capacity".into(), num(hi));
        }
        (Command::Dimprofile, _) => {
            let r = t.col_f64("r")?;
            let packing = t.col_f64("packing")?;
            let inv_energy: Vec<f64> = t.col_f64("min_energy")?.iter().map(|e| 1.0 / e).collect();
            let (gamma, delta) = sliding_decade_slopes(&r, &packing)?;
            let (eg, ed) = sliding_decade_slopes(&r, &inv_energy)?;
            m.insert("gamma".into(), num(gamma));
            m.insert("delta".into(), num(delta));
            m.insert("energy_gamma".into(), num(eg));
            m.insert("energy_delta".into(), num(ed));
        }
        (Command::Hitprob, _) => {
            let p_hat = t.col_f64("p_hat")?[0];
            let hw = 0.5 * (t.col_f64("ci_hi")?[0] - t.col_f64("ci_lo")?[0]);
            let (lo, hi) = (t.col_f64("oracle_lo")?[0], t.col_f64("oracle_hi")?[0]);
            m.insert("p_hat".into(), num(p_hat));
            m.insert("half_width".into(), num(hw));
            if lo.is_finite() {
                let dist = (lo - p_hat).max(p_hat - hi).max(0.0);
                m.insert("oracle_distance".into(), num(dist));
                m.insert("agrees".into(), json!(dist <= 4.0 * hw));
            }
        }
        (Command::Verify, Some(Mode::Thm1 | Mode::Thm3)) => {
            let k = t.col_f64("k")?;
            let hits = t.col_f64("hits")?;
            let p_hat = t.col_f64("p_hat")?;
            let ratio = t.col_f64("ratio")?;
            let theory = t.col_f64("theory")?;
            let (ci_lo, ci_hi) = (t.col_f64("ci_lo")?, t.col_f64("ci_hi")?);
            let live: Vec<usize> = (0..k.len()).filter(|&i| hits[i] > 0.0).collect();
            let (lo, hi) = fold_min_max(live.iter().map(|&i| ratio[i]));
            let ci_band = (
                fold_min_max(live.iter().map(|&i| ci_lo[i] / theory[i])).0,
                fold_min_max(live.iter().map(|&i| ci_hi[i] / theory[i])).1,
            );
            let (lx, ly): (Vec<f64>, Vec<f64>) = live.iter().map(|&i| (k[i].ln(), p_hat[i].ln())).unzip();
            let slope = if lx.len() >= 2 { ls_slope(&lx, &ly) } else { f64::NAN };
            m.insert("band_lo".into(), num(lo));
            m.insert("band_hi".into(), num(hi));
            m.insert("spread".into(), num(hi / lo));
            m.insert("ci_spread".into(), num(ci_band.1 / ci_band.0));
            m.insert("slope".into(), num(slope));
            m.insert("low_hit_rows".into(), json!(hits.iter().filter(|&&h| h < MIN_HITS as f64).count()));
        }
        (Command::Verify, Some(Mode::Return)) => {
            let (lo, hi) = fold_min_max(t.col_f64("ratio")?.into_iter());
            m.insert("band_lo".into(), num(lo));
            m.insert("band_hi".into(), num(hi));
        }
        (Command::Verify, Some(Mode::Correlation)) => {
            let ell = t.col_f64("ell")?;
            let (rlo, rhi) = (t.col_f64("ratio_lo")?, t.col_f64("ratio_hi")?);
            let mut ells: Vec<f64> = ell.clone();
            ells.dedup();
            let mut worst: f64 = 0.0;
            for e in ells {
                let idx: Vec<usize> = (0..ell.len()).filter(|&i| ell[i] == e).collect();
                let spread = fold_min_max(idx.iter().map(|&i| rhi[i])).1 / fold_min_max(idx.iter().map(|&i| rlo[i])).0;
                m.insert(format!("spread_ell_{e}"), num(spread));
                worst = worst.max(spread);
            }
            m.insert("worst_spread".into(), num(worst));
        }
        (Command::Runs, Some(Mode::ErdosRenyi)) => {
            let ratio = t.col_f64("ratio")?;
            let inside = t.col_bool("in_band")?;
            let (lo, hi) = fold_min_max(ratio.iter().copied());
            let count = inside.iter().filter(|&&b| b).count();
            m.insert("min_ratio".into(), num(lo));
            m.insert("max_ratio".into(), num(hi));
            m.insert("in_band".into(), json!(count));
            m.insert("fraction_in_band".into(), num(count as f64 / ratio.len() as f64));
            m.insert("truncated".into(), json!(t.col_bool("truncated")?.iter().any(|&b| b)));
        }
        (Command::Runs, Some(Mode::Dynamical)) => {
            m.insert("initial".into(), num(t.col_f64("initial")?[0]));
            m.insert("sup".into(), num(t.col_f64("sup")?[0]));
        }
        (Command::Runs, Some(Mode::Series)) => {
            let thetas = t.col_f64("theta")?;
            let exps = t.col_f64("integral_exponent")?;
            m.insert("crossover".into(), crossover(&thetas, &exps).map(num).unwrap_or(Value::Null));
        }
        (Command::Parity, Some(Mode::Kernel)) => {
            let holds = t.col_bool("holds")?;
            m.insert("points".into(), json!(holds.len()));
            m.insert("all_hold".into(), json!(holds.iter().all(|&b| b)));
        }
        (Command::Parity, Some(Mode::Sandwich)) => {
            let i = t.col_f64("i_offdiag")?[0];
            let upper = t.col_f64("pair_mass")?[0] + t.col_f64("j_offdiag")?[0];
            let c = t.col_f64("c")?[0];
            m.insert("upper_holds".into(), json!(i <= upper * (1.0 + 1e-8)));
            m.insert("lower_holds".into(), json!(i >= upper / (4.0 * (1.0 + c)) * (1.0 - 1e-8)));
        }
        (Command::Parity, Some(Mode::Tm)) => {
            let est = t.col_f64("estimate")?;
            m.insert("final_estimate".into(), num(est[est.len() - 1]));
            m.insert("monotone".into(), json!(est.windows(2).all(|w| w[1] <= w[0])));
        }
        (c, mode) => return Err(Error::Config(format!("`{}` does not support mode {mode:?}", c.name()))),
    }
    Ok(m)
}

fn scaling_table(rep: &ScalingReport) -> Table {
    let mut t = Table::new(&["k", "hits", "trials", "p_hat", "ci_lo", "ci_hi", "theory", "ratio"]);
    for i in 0..rep.k_values.len() {
        t.push(vec![
            rep.k_values[i].into(),
            rep.hits[i].into(),
            rep.trials.into(),
            rep.estimates[i].into(),
            rep.ci95[i].0.into(),
            rep.ci95[i].1.into(),
            rep.theory_values[i].into(),
            rep.ratios[i].into(),
        ]);
    }
    t
}

fn grid_values(g: &GridSpec) -> Result<Vec<f64>> {
    GeometricGrid::new(g.hi, g.lo, g.per_decade).values()
}

/// Run the experiment and return its table.
pub fn execute(cfg: &ExperimentConfig) -> Result<Table> {
    let command = cfg.command.ok_or_else(|| missing("command", "every config"))?;
    let what = command.name();
    match (command, cfg.mode) {
        (Command::Simulate, _) => {
            let traj = simulate_trajectory(need!(cfg, k, what), need!(cfg, p, what), need!(cfg, horizon, what), cfg.seed()?)?;
            let mut t = Table::new(&["time", "bit", "value", "sum"]);
            let mut bits = traj.initial_bits.clone();
            let mut sum = traj.initial_sum() as i64;
            t.push(vec![0.0.into(), (-1i64).into(), (-1i64).into(), sum.into()]);
            for e in &traj.events {
                let old = std::mem::replace(&mut bits[e.index as usize], e.value);
                sum += e.value as i64 - old as i64;
                t.push(vec![e.time.into(), (e.index as i64).into(), (e.value as i64).into(), sum.into()]);
            }
            Ok(t)
        }
        (Command::Capacity, _) => {
            let f = cfg.time_set(what)?;
            let mut t = Table::new(&["eps", "capacity"]);
            for eps in grid_values(&need!(cfg, grid, what))? {
                t.push(vec![eps.into(), f.capacity(eps)?.into()]);
            }
            Ok(t)
        }
        (Command::Dimprofile, _) => {
            let f = cfg.time_set(what)?;
            let g = need!(cfg, grid, what);
            let prof = box_dim_profile(&f, cfg.s.unwrap_or(0.5), &GeometricGrid::new(g.hi, g.lo, g.per_decade))?;
            let mut t = Table::new(&["r", "grid_n", "packing", "min_energy"]);
            for row in &prof.rows {
                t.push(vec![row.r.into(), row.grid_n.into(), row.packing.into(), row.min_energy.into()]);
            }
            Ok(t)
        }
        (Command::Hitprob, _) => {
            let f = cfg.time_set(what)?;
            let (k, ell, p) = (need!(cfg, k, what), need!(cfg, ell, what), need!(cfg, p, what));
            let est = mc_hit_prob(k, ell, p, &f, need!(cfg, trials, what), cfg.seed()?)?;
            let finite = matches!(f.spec(), TimeSetSpec::Points { points } if points.len() <= MAX_DP_TIMES);
            let (kind, lo, hi) = if k > MAX_DP_K {
                ("none", f64::NAN, f64::NAN)
            } else if finite {
                let times: Vec<f64> = f.components().iter().map(|c| c.0).collect();
                let v = exact_hit_prob_finite(k, k - ell, p, &times)?;
                ("exact", v, v)
            } else {
                let b = bracket_hit_prob(k, k - ell, p, &f, BRACKET_COARSE, BRACKET_FINE)?;
                ("bracket", b.lower, b.upper)
            };
            let mut t = Table::new(&[
                "k", "ell", "p", "trials", "hits", "p_hat", "ci_lo", "ci_hi", "oracle", "oracle_lo", "oracle_hi",
            ]);
            t.push(vec![
                k.into(),
                ell.into(),
                p.into(),
                est.trials.into(),
                est.hits.into(),
                est.p_hat.into(),
                est.ci95.0.into(),
                est.ci95.1.into(),
                kind.into(),
                lo.into(),
                hi.into(),
            ]);
            Ok(t)
        }
        (Command::Verify, Some(Mode::Thm1)) => {
            let f = cfg.time_set(what)?;
            let rep = verify_thm1(
                &f,
                need!(cfg, p, what),
                need!(cfg, ell, what),
                &need!(cfg, k_grid, what),
                need!(cfg, trials, what),
                cfg.seed()?,
            )?;
            Ok(scaling_table(&rep))
        }
        (Command::Verify, Some(Mode::Thm3)) => {
            let f = cfg.time_set(what)?;
            let rep = verify_thm3(&f, &need!(cfg, k_grid, what), need!(cfg, trials, what), cfg.seed()?)?;
            Ok(scaling_table(&rep))
        }
        (Command::Verify, Some(Mode::Return)) => {
            let rep = verify_return_asymptotics(&need!(cfg, k_grid, what), cfg.n_t.unwrap_or(20))?;
            let mut t = Table::new(&["k", "t", "prob", "bound", "ratio"]);
            for r in &rep.rows {
                t.push(vec![r.k.into(), r.t.into(), r.prob.into(), r.bound.into(), r.ratio.into()]);
            }
            Ok(t)
        }
        (Command::Verify, Some(Mode::Correlation)) => {
            let rep = correlation_length_check(need!(cfg, p, what), &need!(cfg, ells, what), &need!(cfg, k_grid, what))?;
            let mut t = Table::new(&["ell", "k", "coarse", "lower", "upper", "scale", "ratio_lo", "ratio_hi"]);
            for r in &rep.rows {
                t.push(vec![
                    r.ell.into(),
                    r.k.into(),
                    r.bracket.coarse.into(),
                    r.bracket.lower.into(),
                    r.bracket.upper.into(),
                    r.scale.into(),
                    r.ratio_lo.into(),
                    r.ratio_hi.into(),
                ]);
            }
            Ok(t)
        }
        (Command::Runs, Some(Mode::ErdosRenyi)) => {
            let [lo, hi] = cfg.band.unwrap_or([0.8, 1.6]);
            let batch = erdos_renyi_batch(
                need!(cfg, n, what),
                need!(cfg, p, what),
                need!(cfg, ell, what) as usize,
                cfg.seed()?,
                cfg.count.unwrap_or(100),
            )?;
            let mut t = Table::new(&["seed", "max_run", "ratio", "in_band", "truncated"]);
            for e in &batch {
                t.push(vec![
                    Cell::Text(e.seed.to_string()),
                    e.max_run.into(),
                    e.ratio.into(),
                    (lo <= e.ratio && e.ratio <= hi).into(),
                    e.truncated.into(),
                ]);
            }
            Ok(t)
        }
        (Command::Runs, Some(Mode::Dynamical)) => {
            let d = dynamical_run_sup(
                need!(cfg, n, what),
                need!(cfg, p, what),
                need!(cfg, ell, what) as usize,
                need!(cfg, horizon, what),
                cfg.seed()?,
            )?;
            let mut t = Table::new(&["n", "n_bits", "initial", "sup", "events", "recomputations", "truncated"]);
            t.push(vec![
                d.n.into(),
                d.n_bits.into(),
                d.initial.into(),
                d.sup.into(),
                d.events.into(),
                d.recomputations.into(),
                d.truncated.into(),
            ]);
            Ok(t)
        }
        (Command::Runs, Some(Mode::Series)) => {
            let f = cfg.time_set(what)?;
            let (p, ell, n_max) = (need!(cfg, p, what), need!(cfg, ell, what), need!(cfg, n_max, what));
            let mut t = Table::new(&["theta", "series_sum", "series_exponent", "integral", "integral_exponent", "converges"]);
            for theta in need!(cfg, thetas, what) {
                let d = series_diagnostic(&f, theta, p, ell, n_max)?;
                t.push(vec![
                    theta.into(),
                    d.series_partial.last().map_or(0.0, |x| x.1).into(),
                    d.series_exponent.into(),
                    d.integral_partial.last().map_or(0.0, |x| x.1).into(),
                    d.integral_exponent.into(),
                    d.converges.into(),
                ]);
            }
            Ok(t)
        }
        (Command::Parity, Some(Mode::Kernel)) => {
            let scheme = cfg.scheme(what)?;
            let pts = kernel_curve(&scheme, &need!(cfg, lambdas, what), cfg.d.unwrap_or(1.0))?;
            let mut t = Table::new(&["lambda", "riesz", "one_plus_lg", "lower", "holds"]);
            for pt in &pts {
                t.push(vec![pt.lambda.into(), pt.riesz.into(), pt.one_plus_lg.into(), pt.lower.into(), pt.holds().into()]);
            }
            Ok(t)
        }
        (Command::Parity, Some(Mode::Sandwich)) => {
            let scheme = cfg.scheme(what)?;
            let f = cfg.time_set(what)?;
            let mu = DiscreteMeasure::uniform(f.grid_points(cfg.atoms.unwrap_or(256))?)?;
            let e = energy_i_j(&scheme, &mu)?;
            let c = scheme.sandwich_constant(cfg.d.unwrap_or(f.diameter().max(f64::MIN_POSITIVE)))?;
            let mut t = Table::new(&["atoms", "i_offdiag", "j_offdiag", "pair_mass", "c", "coincident_atoms"]);
            t.push(vec![mu.len().into(), e.i_offdiag.into(), e.j_offdiag.into(), e.pair_mass.into(), c.into(), e.coincident_atoms.into()]);
            Ok(t)
        }
        (Command::Parity, Some(Mode::Tm)) => {
            let scheme = cfg.scheme(what)?;
            let est = simulate_t_m(&scheme, need!(cfg, n_blocks, what), need!(cfg, trials, what), cfg.seed()?)?;
            let mut t = Table::new(&["n_blocks", "survivors", "estimate", "ci_lo", "ci_hi"]);
            for i in 0..est.estimates.len() {
                t.push(vec![
                    (i as u64 + 1).into(),
                    est.survivors[i].into(),
                    est.estimates[i].into(),
                    est.ci95[i].0.into(),
                    est.ci95[i].1.into(),
                ]);
            }
            Ok(t)
        }
        (c, mode) => Err(Error::Config(format!("`{}` does not support mode {mode:?}", c.name()))),
    }
}

/// A finished run: the artifact contents in structured form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Output {
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub config_hash: String,
    #[serde(default)]
    pub seed: Option<u64>,
    pub config: ExperimentConfig,
    pub summary: Map<String, Value>,
    pub table: Table,
}

impl Output {
    pub fn render(&self, format: Format) -> Result<String> {
        match format {
            Format::Json => {
                let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))?;
                s.push('\n');
                Ok(s)
            }
            Format::Csv => {
                let mut out = Vec::new();
                let header = |out: &mut Vec<u8>, k: &str, v: &str| writeln!(out, "# {k}: {v}");
                header(&mut out, "command", self.command.name())?;
                if let Some(m) = self.mode {
                    header(&mut out, "mode", &serde_json::to_string(&m).unwrap_or_default())?;
                }
                header(&mut out, "config_hash", &self.config_hash)?;
                header(&mut out, "seed", &self.seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into()))?;
                header(&mut out, "config", &serde_json::to_string(&self.config).unwrap_or_default())?;
                for (k, v) in &self.summary {
                    header(&mut out, &format!("summary.{k}"), &v.to_string())?;
                }
                {
                    let mut w = csv::Writer::from_writer(&mut out);
                    let io = |e: csv::Error| Error::Io(e.to_string());
                    w.write_record(&self.table.columns).map_err(io)?;
                    for row in &self.table.rows {
                        w.write_record(row.iter().map(Cell::csv_text)).map_err(io)?;
                    }
                    w.flush()?;
                }
                String::from_utf8(out).map_err(|e| Error::Io(e.to_string()))
            }
        }
    }

    /// Parse an artifact written by [`Output::render`].
    pub fn parse(text: &str, format: Format) -> Result<Self> {
        let bad = |what: &str| Error::Config(format!("malformed output: {what}"));
        match format {
            Format::Json => serde_json::from_str(text).map_err(|e| bad(&e.to_string())),
            Format::Csv => {
                let mut header = Map::new();
                let mut summary = Map::new();
                let mut body = String::new();
                for line in text.lines() {
                    if let Some(rest) = line.strip_prefix("# ") {
                        let (k, v) = rest.split_once(": ").ok_or_else(|| bad(line))?;
                        match k.strip_prefix("summary.") {
                            Some(key) => {
                                summary.insert(key.to_string(), serde_json::from_str(v).map_err(|_| bad(line))?);
                            }
                            None => {
                                header.insert(k.to_string(), Value::String(v.to_string()));
                            }
                        }
                    } else {
                        body.push_str(line);
                        body.push('\n');
                    }
                }
                let get = |k: &str| header.get(k).and_then(Value::as_str).ok_or_else(|| bad(k));
                let command: Command = serde_json::from_value(json!(get("command")?)).map_err(|_| bad("command"))?;
                let mode = match header.get("mode").and_then(Value::as_str) {
                    Some(m) => Some(serde_json::from_str(m).map_err(|_| bad("mode"))?),
                    None => None,
                };
                let seed = match get("seed")? {
                    "none" => None,
                    s => Some(s.parse().map_err(|_| bad("seed"))?),
                };
                let mut rdr = csv::Reader::from_reader(body.as_bytes());
                let columns = rdr.headers().map_err(|e| bad(&e.to_string()))?.iter().map(String::from).collect();
                let rows = rdr
                    .records()
                    .map(|r| r.map(|rec| rec.iter().map(Cell::parse_csv).collect()))
                    .collect::<std::result::Result<Vec<Vec<Cell>>, _>>()
                    .map_err(|e| bad(&e.to_string()))?;
                Ok(Output {
                    command,
                    mode,
                    config_hash: get("config_hash")?.to_string(),
                    seed,
                    config: ExperimentConfig::from_json(get("config")?)?,
                    summary,
                    table: Table { columns, rows },
                })
            }
        }
    }
}

/// Validate `cfg` against the subcommand, apply the seed override and run.
pub fn run_config(command: Command, mut cfg: ExperimentConfig, seed: Option<u64>) -> Result<Output> {
    match cfg.command {
        Some(c) if c != command => {
            return Err(Error::Config(format!(
                "config is for `{}` but `{}` was requested",
                c.name(),
                command.name()
            )))
        }
        _ => cfg.command = Some(command),
    }
    if seed.is_some() {
        cfg.seed = seed;
    }
    if cfg.is_stochastic() && cfg.seed.is_none() {
        return Err(missing("seed", "stochastic commands"));
    }
    let table = execute(&cfg)?;
    let summary = derive_summary(command, cfg.mode, &table)?;
    let canonical = cfg.canonical();
    Ok(Output {
        command,
        mode: cfg.mode,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        config: canonical,
        summary,
        table,
    })
}

#[derive(Debug, Parser)]
#[command(name = "dynbits", version, about = "Dynamical bit sequence experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output file (default: the config's `output`, else stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Domain(_) | Error::EmptySet | Error::DegenerateGrid(_) => 2,
        Error::Numeric(_) | Error::Quadrature { .. } | Error::Io(_) => 3,
        Error::Budget { .. } | Error::Size(_) => 4,
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Domain(_) => "domain",
        Error::EmptySet => "empty_set",
        Error::DegenerateGrid(_) => "degenerate_grid",
        Error::Numeric(_) => "numeric",
        Error::Quadrature { .. } => "quadrature",
        Error::Io(_) => "io",
        Error::Budget { .. } => "budget",
        Error::Size(_) => "size",
    }
}

fn run_cli(cli: Cli) -> Result<()> {
    let path = cli.config.ok_or_else(|| Error::Config("--config is required".into()))?;
    let text = fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let cfg = ExperimentConfig::from_json(&text)?;
    let out_path = cli.out.or_else(|| cfg.output.clone().map(PathBuf::from));
    // Without an explicit format, a `.csv` destination selects CSV.
    let by_extension = out_path
        .as_deref()
        .and_then(|p| p.extension())
        .filter(|e| e.eq_ignore_ascii_case("csv"))
        .map(|_| Format::Csv);
    let format = cli.format.or(cfg.format).or(by_extension).unwrap_or(Format::Json);
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| Error::Config(e.to_string()))?;
    let output = pool.install(|| run_config(cli.command, cfg, cli.seed))?;
    let rendered = output.render(format)?;
    match out_path {
        Some(p) => fs::write(&p, rendered)?,
        None => std::io::stdout().write_all(rendered.as_bytes())?,
    }
    Ok(())
}

/// Entry point; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = exit_code(&e);
            let report = json!({ "error": { "kind": error_kind(&e), "message": e.to_string() }, "exit_code": code });
            eprintln!("{report}");
            code
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(text).unwrap()
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"command":"capacity","colour":1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"set":{"type":"points","points":[0],"x":1}}"#).is_err());
    }

    #[test]
    fn stochastic_commands_need_a_seed() {
        let c = cfg(r#"{"set":{"type":"points","points":[0]},"k":4,"ell":1,"p":0.5,"trials":10}"#);
        assert!(matches!(run_config(Command::Hitprob, c.clone(), None), Err(Error::Config(_))));
        assert!(run_config(Command::Hitprob, c, Some(3)).is_ok());
    }

    #[test]
    fn command_mismatch_is_a_config_error() {
        let c = cfg(r#"{"command":"capacity"}"#);
        assert!(matches!(run_config(Command::Hitprob, c, Some(1)), Err(Error::Config(_))));
    }

    #[test]
    fn point_capacity_is_one() {
        let c = cfg(r#"{"set":{"type":"points","points":[0]},"grid":{"hi":0.1,"lo":1e-5,"per_decade":3}}"#);
        let out = run_config(Command::Capacity, c, None).unwrap();
        assert!(out.table.col_f64("capacity").unwrap().iter().all(|&k| k == 1.0));
    }

    #[test]
    fn csv_and_json_round_trip() {
        let c = cfg(r#"{"set":{"type":"points","points":[0,0.3,0.9]},"k":8,"ell":1,"p":0.6,"trials":2000}"#);
        let out = run_config(Command::Hitprob, c, Some(5)).unwrap();
        for format in [Format::Csv, Format::Json] {
            let back = Output::parse(&out.render(format).unwrap(), format).unwrap();
            assert_eq!(back.table, out.table, "{format:?}");
            assert_eq!(back.summary, out.summary);
            assert_eq!(back.config_hash, out.config_hash);
            assert_eq!(derive_summary(back.command, back.mode, &back.table).unwrap(), back.summary);
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Numeric("x".into())), 3);
        assert_eq!(exit_code(&Error::Budget { needed: 2, limit: 1 }), 4);
    }
}
