//! Python bindings. Arrays cross the boundary as flat row-major lists.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ssm_influence::control::{controllability_matrix, default_rank_tolerance, numerical_rank, observability_matrix};
use ssm_influence::experiments::{self, ExperimentConfig, ExperimentKind};
use ssm_influence::influence::{self, AdjacencyConvention};
use ssm_influence::io::{self, builtin_prompt_suite, ModelBundle, PromptManifest, ReportFormat};
use ssm_influence::model::{lm_forward, ForwardOptions, ModelConfig};
use ssm_influence::sampling::{self, SamplerConfig};
use ssm_influence::ssm::{self, DenseLtiSystem, DiagonalLtvSequence, InputScaling};
use ssm_influence::Error;

fn err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        _ if e.is_numeric() => PyArithmeticError::new_err(msg),
        Error::Io { .. } | Error::Load { .. } => PyOSError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn scaling(s: &str) -> PyResult<InputScaling> {
    match s {
        "raw" => Ok(InputScaling::Raw),
        "delta" => Ok(InputScaling::DeltaScaled),
        _ => Err(PyValueError::new_err(format!("b_mode must be 'raw' or 'delta', got {s:?}"))),
    }
}

fn convention(s: &str) -> PyResult<AdjacencyConvention> {
    match s {
        "paper" => Ok(AdjacencyConvention::Paper),
        "standard" => Ok(AdjacencyConvention::Standard),
        _ => Err(PyValueError::new_err(format!("convention must be 'paper' or 'standard', got {s:?}"))),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(DMatrix::from_row_iterator(n, m, rows.into_iter().flatten()))
}

/// Zero-order-hold discretization: `exp(delta[k,d] * a[d,n])`, shape `L × Dm × N`.
#[pyfunction]
fn discretize_zoh(a_cont: Vec<f64>, delta: Vec<f64>, channels: usize, state_dim: usize) -> PyResult<Vec<f64>> {
    ssm::discretize_zoh(&a_cont, &delta, channels, state_dim).map_err(err)
}

/// Per-token influence scores of a diagonal sequence.
///
/// `a_bar`, `b`, `c` are `L × Dm × N`; `delta` (`L × Dm`) is only needed for
/// `b_mode="delta"`. `method` is `"fast"` or `"direct"`.
#[pyfunction]
#[pyo3(signature = (length, channels, state_dim, a_bar, b, c, delta=None, b_mode="raw", convention="paper", method="fast"))]
#[allow(clippy::too_many_arguments)]
fn influence_scores(
    py: Python<'_>,
    length: usize,
    channels: usize,
    state_dim: usize,
    a_bar: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    delta: Option<Vec<f64>>,
    b_mode: &str,
    convention: &str,
    method: &str,
) -> PyResult<Vec<f64>> {
    let scaling = scaling(b_mode)?;
    let conv = self::convention(convention)?;
    let delta = delta.unwrap_or_else(|| vec![1.0; length * channels]);
    let seq = DiagonalLtvSequence::new(length, channels, state_dim, a_bar, b, c, delta, vec![0.0; channels])
        .map_err(err)?;
    let f = match method {
        "fast" => influence::influence_fast,
        "direct" => influence::influence_direct_sum,
        _ => return Err(PyValueError::new_err(format!("method must be 'fast' or 'direct', got {method:?}"))),
    };
    py.detach(|| f(&seq, scaling, conv)).map_err(err)
}

#[pyfunction]
fn spearman_rho(xs: Vec<f64>, ys: Vec<f64>) -> PyResult<f64> {
    experiments::spearman_rho(&xs, &ys).map_err(err)
}

/// `{"mean", "std", "cv"}` with population std; `cv` is None for a zero mean.
#[pyfunction]
fn basic_stats<'py>(py: Python<'py>, values: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let s = experiments::basic_stats(&values).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("mean", s.mean)?;
    d.set_item("std", s.std)?;
    d.set_item("cv", s.cv)?;
    Ok(d)
}

/// Rank of `[B, AB, …, A^{N-1}B]`.
#[pyfunction]
fn controllability_rank(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<usize> {
    let (a, b) = (matrix(a)?, matrix(b)?);
    let n = a.nrows();
    let sys = DenseLtiSystem::without_feedthrough(a, b, DMatrix::zeros(1, n)).map_err(err)?;
    let k = controllability_matrix(&sys);
    numerical_rank(&k, default_rank_tolerance(&k)).map_err(err)
}

/// Rank of `[C; CA; …; CA^{N-1}]`.
#[pyfunction]
fn observability_rank(a: Vec<Vec<f64>>, c: Vec<Vec<f64>>) -> PyResult<usize> {
    let (a, c) = (matrix(a)?, matrix(c)?);
    let n = a.nrows();
    let sys = DenseLtiSystem::without_feedthrough(a, DMatrix::zeros(n, 1), c).map_err(err)?;
    let o = observability_matrix(&sys);
    numerical_rank(&o, default_rank_tolerance(&o)).map_err(err)
}

/// A loaded or synthetic language model.
#[pyclass(frozen)]
struct Model {
    bundle: ModelBundle,
}

#[pymethods]
impl Model {
    /// Seeded random model with a byte-level vocabulary.
    #[staticmethod]
    #[pyo3(signature = (d_model=64, n_layers=4, d_state=16, vocab_size=256, seed=0))]
    fn synth(d_model: usize, n_layers: usize, d_state: usize, vocab_size: usize, seed: u64) -> PyResult<Self> {
        let mut cfg = ModelConfig::new(d_model, n_layers, vocab_size);
        cfg.d_state = d_state;
        let bundle = io::synth_model(&cfg, seed).map_err(err)?;
        Ok(Self { bundle })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let bundle = io::load_checkpoint(&path).map_err(err)?;
        bundle.validate().map_err(err)?;
        Ok(Self { bundle })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_checkpoint(&self.bundle, &path).map_err(err)
    }

    #[getter]
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = &self.bundle.config;
        let d = PyDict::new(py);
        d.set_item("d_model", c.d_model)?;
        d.set_item("n_layers", c.n_layers)?;
        d.set_item("d_inner", c.d_inner)?;
        d.set_item("d_state", c.d_state)?;
        d.set_item("d_conv", c.d_conv)?;
        d.set_item("dt_rank", c.dt_rank)?;
        d.set_item("vocab_size", c.vocab_size)?;
        Ok(d)
    }

    fn decode(&self, ids: Vec<u32>) -> PyResult<String> {
        self.bundle.vocab.decode(&ids).map_err(err)
    }

    /// Logits for every position, one list of `vocab_size` per token.
    #[pyo3(signature = (ids, f64=false))]
    fn logits(&self, py: Python<'_>, ids: Vec<u32>, f64: bool) -> PyResult<Vec<Vec<f32>>> {
        let opts = ForwardOptions { accumulate_f64: f64 };
        let flat = py.detach(|| lm_forward(&ids, &self.bundle, opts, None)).map_err(err)?;
        Ok(flat.chunks(self.bundle.config.vocab_size).map(<[f32]>::to_vec).collect())
    }

    /// Scores every token; returns `{"holistic", "per_layer", "token_ids", "generated_from"}`.
    #[pyo3(signature = (ids, generated_from=None, b_mode="raw", convention="paper", f64=false))]
    fn analyze<'py>(
        &self,
        py: Python<'py>,
        ids: Vec<u32>,
        generated_from: Option<usize>,
        b_mode: &str,
        convention: &str,
        f64: bool,
    ) -> PyResult<Bound<'py, PyDict>> {
        let (scaling, conv) = (scaling(b_mode)?, self::convention(convention)?);
        let from = generated_from.unwrap_or(ids.len());
        let opts = ForwardOptions { accumulate_f64: f64 };
        let p = py
            .detach(|| experiments::analyze(&self.bundle, &ids, from, scaling, conv, opts))
            .map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("holistic", p.holistic)?;
        d.set_item("per_layer", p.per_layer)?;
        d.set_item("token_ids", p.token_ids)?;
        d.set_item("generated_from", p.generated_from)?;
        Ok(d)
    }

    /// Prompt plus sampled continuation.
    #[pyo3(signature = (ids, max_new_tokens=30, temperature=0.7, top_p=0.9, repetition_penalty=1.2, seed=0, greedy=false))]
    #[allow(clippy::too_many_arguments)]
    fn generate(
        &self,
        py: Python<'_>,
        ids: Vec<u32>,
        max_new_tokens: usize,
        temperature: f64,
        top_p: f64,
        repetition_penalty: f64,
        seed: u64,
        greedy: bool,
    ) -> PyResult<Vec<u32>> {
        let cfg = SamplerConfig {
            temperature,
            top_p,
            repetition_penalty,
            max_new_tokens,
            seed,
            greedy,
        };
        let g = py
            .detach(|| sampling::generate(&self.bundle, &ids, &cfg, ForwardOptions::default()))
            .map_err(err)?;
        Ok(g.tokens)
    }

    /// Runs one experiment and writes `<out>/<name>.csv` (or `.json`).
    ///
    /// Without `manifest` the built-in byte-level prompts are used.
    #[pyo3(signature = (name, out, manifest=None, runs=10, seed=0, jobs=None, format="csv"))]
    #[allow(clippy::too_many_arguments)]
    fn experiment(
        &self,
        py: Python<'_>,
        name: &str,
        out: PathBuf,
        manifest: Option<PathBuf>,
        runs: usize,
        seed: u64,
        jobs: Option<usize>,
        format: &str,
    ) -> PyResult<PathBuf> {
        let kind: ExperimentKind = name.parse().map_err(err)?;
        let format = match format {
            "csv" => ReportFormat::Csv,
            "json" => ReportFormat::Json,
            _ => return Err(PyValueError::new_err(format!("format must be 'csv' or 'json', got {format:?}"))),
        };
        let manifest = match manifest {
            Some(p) => PromptManifest::load(p).map_err(err)?,
            None => builtin_prompt_suite()
                .into_iter()
                .find(|m| m.experiment == kind.as_str())
                .ok_or_else(|| PyValueError::new_err(format!("no built-in prompts for {kind}")))?,
        };
        let mut cfg = ExperimentConfig::new(kind);
        cfg.runs = runs;
        cfg.base_seed = seed;
        cfg.jobs = jobs;
        let path = out.join(format!("{kind}.{}", format.extension()));
        py.detach(|| -> ssm_influence::Result<()> {
            let report = experiments::run_experiment(&self.bundle, &manifest, &cfg)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Input(format!("{}: {e}", out.display())))?;
            io::write_report(&report, &path, format)
        })
        .map_err(err)?;
        Ok(path)
    }
}

#[pymodule]
fn _native(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(discretize_zoh, m)?)?;
    m.add_function(wrap_pyfunction!(influence_scores, m)?)?;
    m.add_function(wrap_pyfunction!(spearman_rho, m)?)?;
    m.add_function(wrap_pyfunction!(basic_stats, m)?)?;
    m.add_function(wrap_pyfunction!(controllability_rank, m)?)?;
    m.add_function(wrap_pyfunction!(observability_rank, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
