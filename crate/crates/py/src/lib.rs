//! Python bindings for the driftscan core.
//!
//! Structured results (test outcomes, detection results, confidence
//! sequences) come back as plain dicts and lists with the same field names
//! as the CLI's JSON outputs, so notebooks and the command line read the
//! same schema.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use driftscan::detect::{Correction, DetectionConfig, TestChoice};
use driftscan::hypotests::{self, ContingencyTable};
use driftscan::series::{new_metric_series, MetricKind};
use driftscan::stabilization::{self, SequenceCorrection};
use driftscan::{detect, seed};

fn pyerr(e: driftscan::Error) -> PyErr {
    match e {
        driftscan::Error::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let json = serde_json::to_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json_to_py(py, &json)
}

fn json_to_py(py: Python<'_>, v: &serde_json::Value) -> PyResult<PyObject> {
    Ok(match v {
        serde_json::Value::Null => py.None(),
        serde_json::Value::Bool(b) => b.into_py(py),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py(py)
            } else if let Some(u) = n.as_u64() {
                u.into_py(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py(py)
            }
        }
        serde_json::Value::String(s) => s.into_py(py),
        serde_json::Value::Array(items) => {
            let list = PyList::empty_bound(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_py(py)
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new_bound(py);
            for (key, val) in map {
                dict.set_item(key, json_to_py(py, val)?)?;
            }
            dict.into_py(py)
        }
    })
}

fn parse_kind(kind: &str) -> PyResult<MetricKind> {
    match kind {
        "binary" => Ok(MetricKind::Binary),
        "continuous" => Ok(MetricKind::Continuous),
        other => Err(PyValueError::new_err(format!(
            "kind must be \"binary\" or \"continuous\", got {other:?}"
        ))),
    }
}

/// Smallest sample size at which binomial sampling noise at rate `p_hat`
/// drops below the latent across-player sd.
#[pyfunction]
fn stabilization_point(p_hat: f64, sigma_latent: f64) -> PyResult<u64> {
    stabilization::stabilization_point(p_hat, sigma_latent).map_err(pyerr)
}

/// Latent (true-talent) sd from observed and sampling sds.
#[pyfunction]
fn latent_sd(sigma_obs: f64, sigma_samp: f64) -> PyResult<f64> {
    stabilization::latent_sd(sigma_obs, sigma_samp).map_err(pyerr)
}

/// Variance decomposition over `(successes, trials)` pairs, one per player.
#[pyfunction]
fn cohort_stabilization(
    py: Python<'_>,
    per_player: Vec<(u64, u64)>,
    metric: &str,
) -> PyResult<PyObject> {
    let report = stabilization::cohort_stabilization(&per_player, metric).map_err(pyerr)?;
    to_py(py, &report)
}

/// Two-sided Hoeffding interval for a mean of `t` observations in `bounds`,
/// returned as `(lower, upper)` clipped to the bounds.
#[pyfunction]
#[pyo3(signature = (mean, t, alpha=0.05, bounds=(0.0, 1.0)))]
fn hoeffding_interval(mean: f64, t: u64, alpha: f64, bounds: (f64, f64)) -> PyResult<(f64, f64)> {
    let ci = stabilization::hoeffding_interval(mean, t, alpha, bounds).map_err(pyerr)?;
    Ok((ci.lower, ci.upper))
}

/// Anytime confidence sequence over the running mean of `values`. With
/// `union_bound` the alpha is spent across steps so the whole sequence holds
/// jointly.
#[pyfunction]
#[pyo3(signature = (values, alpha=0.05, bounds=(0.0, 1.0), union_bound=false))]
fn confidence_sequence(
    py: Python<'_>,
    values: Vec<f64>,
    alpha: f64,
    bounds: (f64, f64),
    union_bound: bool,
) -> PyResult<PyObject> {
    let series = new_metric_series(values, MetricKind::Continuous, "py", "metric").map_err(pyerr)?;
    let correction = if union_bound {
        SequenceCorrection::UnionBound
    } else {
        SequenceCorrection::Pointwise
    };
    let seq =
        stabilization::confidence_sequence_with(&series, alpha, bounds, correction).map_err(pyerr)?;
    to_py(py, &seq)
}

/// Fisher's exact test on the 2x2 table `[[a, b], [c, d]]` (rows
/// before/after, columns success/failure), two-sided point-probability rule.
#[pyfunction]
fn fisher_exact(py: Python<'_>, a: u64, b: u64, c: u64, d: u64) -> PyResult<PyObject> {
    let outcome = hypotests::fisher_exact(&ContingencyTable { a, b, c, d }).map_err(pyerr)?;
    to_py(py, &outcome)
}

/// Permutation test for a location shift of at least `delta` between `x`
/// (pre) and `y` (post), one-sided in the observed direction. Exact
/// enumeration on small inputs, seeded Monte Carlo otherwise.
#[pyfunction]
#[pyo3(signature = (x, y, delta=0.0, n_perm=10_000, seed=0))]
fn perm_test_shift(
    py: Python<'_>,
    x: Vec<f64>,
    y: Vec<f64>,
    delta: f64,
    n_perm: u64,
    seed: u64,
) -> PyResult<PyObject> {
    let outcome = hypotests::perm_test_shift(&x, &y, delta, n_perm, seed).map_err(pyerr)?;
    to_py(py, &outcome)
}

/// Bernoulli likelihood-ratio gain at every admissible split of a 0/1
/// series; `lambda[i]` is the gain for the split after position
/// `min_side + i` (1-based).
#[pyfunction]
#[pyo3(signature = (values, min_side=1))]
fn bernoulli_profile(values: Vec<f64>, min_side: usize) -> PyResult<Vec<f64>> {
    let series = new_metric_series(values, MetricKind::Binary, "py", "metric").map_err(pyerr)?;
    let profile = driftscan::loglik::bernoulli_lambda_profile(&series, min_side).map_err(pyerr)?;
    Ok(profile.lambda)
}

/// Gaussian likelihood-ratio gain at every admissible split; requires
/// `min_side >= 2` so each side has a variance estimate.
#[pyfunction]
#[pyo3(signature = (values, min_side=2))]
fn gaussian_profile(values: Vec<f64>, min_side: usize) -> PyResult<Vec<f64>> {
    let series = new_metric_series(values, MetricKind::Continuous, "py", "metric").map_err(pyerr)?;
    let profile = driftscan::loglik::gaussian_lambda_profile(&series, min_side).map_err(pyerr)?;
    Ok(profile.lambda)
}

/// Binary-segmentation changepoint detection on a raw series. Returns a dict
/// with `changepoints`, `audit`, `config` (the same schema as the CLI's
/// detections.json) plus a `flagged` flag.
#[pyfunction]
#[pyo3(signature = (values, kind="binary", alpha=0.05, delta=0.0, test="auto",
                    min_segment=50, min_side=1, n_perm=10_000, seed=0,
                    use_split=true, bonferroni=false))]
#[allow(clippy::too_many_arguments)]
fn detect_changepoints(
    py: Python<'_>,
    values: Vec<f64>,
    kind: &str,
    alpha: f64,
    delta: f64,
    test: &str,
    min_segment: usize,
    min_side: usize,
    n_perm: u64,
    seed: u64,
    use_split: bool,
    bonferroni: bool,
) -> PyResult<PyObject> {
    let kind = parse_kind(kind)?;
    let test = match test {
        "auto" => TestChoice::Auto,
        "fisher" => TestChoice::FisherExact,
        "perm" => TestChoice::PermutationShift,
        other => {
            return Err(PyValueError::new_err(format!(
                "test must be \"auto\", \"fisher\" or \"perm\", got {other:?}"
            )))
        }
    };
    let cfg = DetectionConfig {
        alpha,
        delta,
        test,
        min_segment,
        min_side,
        n_perm,
        seed,
        use_split,
        correction: if bonferroni {
            Correction::Bonferroni
        } else {
            Correction::None
        },
    };
    let series = new_metric_series(values, kind, "py", "metric").map_err(pyerr)?;
    let result = detect::detect_multiple(&series, &cfg).map_err(pyerr)?;
    let mut json =
        serde_json::to_value(&result).map_err(|e| PyValueError::new_err(e.to_string()))?;
    json["flagged"] = serde_json::Value::Bool(result.flagged());
    json_to_py(py, &json)
}

/// Folds `parts` into `base` to derive an independent seed stream.
#[pyfunction]
fn mix_seed(base: u64, parts: Vec<u64>) -> u64 {
    seed::mix(base, &parts)
}

/// Seed stream keyed by a string, as used for per-entity cohort seeds.
#[pyfunction]
fn mix_seed_str(base: u64, key: &str) -> u64 {
    seed::mix_str(base, key)
}

#[pymodule]
fn driftscan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(stabilization_point, m)?)?;
    m.add_function(wrap_pyfunction!(latent_sd, m)?)?;
    m.add_function(wrap_pyfunction!(cohort_stabilization, m)?)?;
    m.add_function(wrap_pyfunction!(hoeffding_interval, m)?)?;
    m.add_function(wrap_pyfunction!(confidence_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(fisher_exact, m)?)?;
    m.add_function(wrap_pyfunction!(perm_test_shift, m)?)?;
    m.add_function(wrap_pyfunction!(bernoulli_profile, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_profile, m)?)?;
    m.add_function(wrap_pyfunction!(detect_changepoints, m)?)?;
    m.add_function(wrap_pyfunction!(mix_seed, m)?)?;
    m.add_function(wrap_pyfunction!(mix_seed_str, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
