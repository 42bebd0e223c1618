//! Python bindings for `dynbits`.

use dynbits::{energy, estimators, parity, process, runs, Error};
use pyo3::exceptions::{PyMemoryError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Domain(_) | Error::EmptySet | Error::DegenerateGrid(_) | Error::Config(_) => PyValueError::new_err(e.to_string()),
        Error::Budget { .. } | Error::Size(_) => PyMemoryError::new_err(e.to_string()),
        Error::Numeric(_) | Error::Quadrature { .. } | Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
    }
}

trait IntoPyResult<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPyResult<T> for dynbits::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// A compact subset of the real line built from intervals or points.
#[pyclass(frozen, module = "dynbits_py")]
struct TimeSet(dynbits::TimeSet);

#[pymethods]
impl TimeSet {
    #[staticmethod]
    fn interval(a: f64, b: f64) -> PyResult<Self> {
        dynbits::TimeSet::interval(a, b).py().map(Self)
    }

    #[staticmethod]
    fn intervals(intervals: Vec<[f64; 2]>) -> PyResult<Self> {
        dynbits::TimeSet::intervals(&intervals).py().map(Self)
    }

    #[staticmethod]
    fn points(points: Vec<f64>) -> PyResult<Self> {
        dynbits::TimeSet::points(&points).py().map(Self)
    }

    #[staticmethod]
    #[pyo3(signature = (depth, ratio = 1.0 / 3.0, left = 0.0, length = 1.0))]
    fn cantor(depth: u32, ratio: f64, left: f64, length: f64) -> PyResult<Self> {
        dynbits::TimeSet::cantor(left, length, ratio, depth).py().map(Self)
    }

    fn components(&self) -> Vec<(f64, f64)> {
        self.0.components().to_vec()
    }

    fn diameter(&self) -> f64 {
        self.0.diameter()
    }

    fn contains(&self, x: f64) -> bool {
        self.0.contains(x)
    }

    /// Maximal number of points of the set pairwise at least `eps` apart.
    fn capacity(&self, eps: f64) -> PyResult<u64> {
        self.0.capacity(eps).py()
    }

    fn __repr__(&self) -> String {
        format!("TimeSet({} components, diameter {})", self.0.components().len(), self.0.diameter())
    }
}

/// Block-size scheme for the parity process.
#[pyclass(frozen, module = "dynbits_py")]
struct BlockScheme(dynbits::BlockScheme);

#[pymethods]
impl BlockScheme {
    #[staticmethod]
    fn mq(q: f64) -> PyResult<Self> {
        dynbits::BlockScheme::mq(q).py().map(Self)
    }

    /// Tabulated scheme with `values[k] = m(k)`.
    #[staticmethod]
    fn table(values: Vec<f64>) -> PyResult<Self> {
        dynbits::BlockScheme::table(values).py().map(Self)
    }

    fn m(&self, x: f64) -> f64 {
        self.0.m(x)
    }

    fn block_size(&self, k: u64) -> u64 {
        self.0.block_size(k)
    }

    fn laplace_g(&self, lam: f64) -> PyResult<f64> {
        self.0.laplace_g(lam).py()
    }

    fn sandwich_constant(&self, d: f64) -> PyResult<f64> {
        self.0.sandwich_constant(d).py()
    }
}

/// A simulated path of k resampled bits.
#[pyclass(frozen, module = "dynbits_py")]
struct Trajectory(dynbits::Trajectory);

#[pymethods]
impl Trajectory {
    #[getter]
    fn k(&self) -> u64 {
        self.0.k
    }

    #[getter]
    fn horizon(&self) -> f64 {
        self.0.horizon
    }

    #[getter]
    fn initial_bits(&self) -> Vec<u8> {
        self.0.initial_bits.clone()
    }

    /// `(time, index, value)` for every resampling event.
    #[getter]
    fn events(&self) -> Vec<(f64, u32, u8)> {
        self.0.events.iter().map(|e| (e.time, e.index, e.value)).collect()
    }

    fn final_bits(&self) -> Vec<u8> {
        self.0.final_bits()
    }

    fn hits_level(&self, level: u64, f: &TimeSet) -> PyResult<bool> {
        process::hits_level(&self.0, level, &f.0).py()
    }

    fn __len__(&self) -> usize {
        self.0.events.len()
    }
}

/// Monte Carlo estimate of the probability of hitting level k - ell on F.
#[pyclass(frozen, get_all, module = "dynbits_py")]
struct HitProbEstimate {
    trials: u64,
    hits: u64,
    p_hat: f64,
    ci95: (f64, f64),
    seed: u64,
}

#[pyfunction]
fn conditional_return_prob(k: u64, ell: u64, t: f64, p: f64) -> PyResult<f64> {
    process::conditional_return_prob(k, ell, t, p).py()
}

/// Law of the bit sum at time t started from sum `a`.
#[pyfunction]
fn sum_transition_kernel(k: u64, a: u64, t: f64, p: f64) -> PyResult<Vec<f64>> {
    process::sum_transition_kernel(k, a, t, p).py().map(|d| (0..=k as usize).map(|j| d.prob(j)).collect())
}

#[pyfunction]
fn simulate_trajectory(py: Python<'_>, k: u64, p: f64, horizon: f64, seed: u64) -> PyResult<Trajectory> {
    py.detach(|| process::simulate_trajectory(k, p, horizon, seed)).py().map(Trajectory)
}

#[pyfunction]
fn exact_hit_prob_finite(k: u64, level: u64, p: f64, times: Vec<f64>) -> PyResult<f64> {
    estimators::exact_hit_prob_finite(k, level, p, &times).py()
}

#[pyfunction]
fn mc_hit_prob(py: Python<'_>, k: u64, ell: u64, p: f64, f: &TimeSet, trials: u64, seed: u64) -> PyResult<HitProbEstimate> {
    let est = py.detach(|| estimators::mc_hit_prob(k, ell, p, &f.0, trials, seed)).py()?;
    Ok(HitProbEstimate { trials: est.trials, hits: est.hits, p_hat: est.p_hat, ci95: est.ci95, seed: est.seed })
}

/// Lower and upper bracket for the hitting probability of a level on F.
#[pyfunction]
#[pyo3(signature = (k, level, p, f, coarse_n = estimators::BRACKET_COARSE, fine_n = estimators::BRACKET_FINE))]
fn bracket_hit_prob(py: Python<'_>, k: u64, level: u64, p: f64, f: &TimeSet, coarse_n: usize, fine_n: usize) -> PyResult<(f64, f64)> {
    let b = py.detach(|| estimators::bracket_hit_prob(k, level, p, &f.0, coarse_n, fine_n)).py()?;
    Ok((b.lower, b.upper))
}

/// Minimal psi_s energy on F at scale r: `(value, duality_gap)`.
#[pyfunction]
#[pyo3(signature = (f, s, r, grid_n = None))]
fn min_energy(py: Python<'_>, f: &TimeSet, s: f64, r: f64, grid_n: Option<usize>) -> PyResult<(f64, f64)> {
    let kernel = energy::Kernel::psi(s).py()?;
    let n = grid_n.unwrap_or_else(|| energy::profile_grid_size(&f.0, r));
    let m = py.detach(|| energy::min_energy(&f.0, &kernel, r, n)).py()?;
    Ok((m.value, m.gap))
}

/// Weighted packing of F at scale r: `(points, weights, value)`.
#[pyfunction]
#[pyo3(signature = (f, s, r, grid_n = None))]
fn weighted_packing(py: Python<'_>, f: &TimeSet, s: f64, r: f64, grid_n: Option<usize>) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let n = grid_n.unwrap_or_else(|| energy::profile_grid_size(&f.0, r));
    let sol = py.detach(|| energy::weighted_packing(&f.0, s, r, n)).py()?;
    Ok((sol.points, sol.weights, sol.value))
}

/// Longest window starting at 1-based position n with at most `ell` zeros.
#[pyfunction]
fn run_stat(bits: Vec<u8>, n: usize, ell: usize) -> PyResult<u64> {
    runs::run_stat(&bits, n, ell).py().map(|r| r.value as u64)
}

/// `(max_run, ratio)` for a fresh i.i.d. sequence of length n.
#[pyfunction]
fn erdos_renyi_check(py: Python<'_>, n: u64, p: f64, ell: usize, seed: u64) -> PyResult<(u64, f64)> {
    let e = py.detach(|| runs::erdos_renyi_check(n, p, ell, seed)).py()?;
    Ok((e.max_run as u64, e.ratio))
}

/// `(initial, sup)` of the run statistic over the time horizon.
#[pyfunction]
fn dynamical_run_sup(py: Python<'_>, n: u64, p: f64, ell: usize, horizon: f64, seed: u64) -> PyResult<(u64, u64)> {
    let d = py.detach(|| runs::dynamical_run_sup(n, p, ell, horizon, seed)).py()?;
    Ok((d.initial as u64, d.sup as u64))
}

#[pyfunction]
fn series_crossover(py: Python<'_>, f: &TimeSet, p: f64, ell: u64, n_max: u64, thetas: Vec<f64>) -> PyResult<Option<f64>> {
    py.detach(|| runs::series_crossover(&f.0, p, ell, n_max, &thetas)).py()
}

/// Survival estimates after 1..=n_blocks blocks.
#[pyfunction]
fn simulate_t_m(py: Python<'_>, scheme: &BlockScheme, n_blocks: u64, trials: u64, seed: u64) -> PyResult<Vec<f64>> {
    py.detach(|| parity::simulate_t_m(&scheme.0, n_blocks, trials, seed)).py().map(|e| e.estimates)
}

/// Run a CLI command on a JSON config and return the JSON artifact.
#[pyfunction]
#[pyo3(signature = (command, config_json, seed = None))]
fn run_config(py: Python<'_>, command: &str, config_json: &str, seed: Option<u64>) -> PyResult<String> {
    let command = serde_command(command)?;
    let cfg = dynbits::cli::ExperimentConfig::from_json(config_json).py()?;
    let out = py.detach(|| dynbits::cli::run_config(command, cfg, seed)).py()?;
    out.render(dynbits::cli::Format::Json).py()
}

fn serde_command(name: &str) -> PyResult<dynbits::cli::Command> {
    use dynbits::cli::Command::*;
    [Simulate, Capacity, Dimprofile, Hitprob, Verify, Runs, Parity]
        .into_iter()
        .find(|c| c.name() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown command `{name}`")))
}

#[pymodule]
fn dynbits_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<TimeSet>()?;
    m.add_class::<BlockScheme>()?;
    m.add_class::<Trajectory>()?;
    m.add_class::<HitProbEstimate>()?;
    m.add_function(wrap_pyfunction!(conditional_return_prob, m)?)?;
    m.add_function(wrap_pyfunction!(sum_transition_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_trajectory, m)?)?;
    m.add_function(wrap_pyfunction!(exact_hit_prob_finite, m)?)?;
    m.add_function(wrap_pyfunction!(mc_hit_prob, m)?)?;
    m.add_function(wrap_pyfunction!(bracket_hit_prob, m)?)?;
    m.add_function(wrap_pyfunction!(min_energy, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_packing, m)?)?;
    m.add_function(wrap_pyfunction!(run_stat, m)?)?;
    m.add_function(wrap_pyfunction!(erdos_renyi_check, m)?)?;
    m.add_function(wrap_pyfunction!(dynamical_run_sup, m)?)?;
    m.add_function(wrap_pyfunction!(series_crossover, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_t_m, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    Ok(())
}
