//! Python module `dba`: attention layers, checks and the toy trainer.
//!
//! Matrices cross the boundary as lists of rows (`list[list[float]]`).

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use dba_core::attention::{attention_layer, AttentionConfig, LayerParams, Mechanism};
use dba_core::autodiff::Tape;
use dba_core::trainer::{self, gen_task, ModelConfig, TaskKind, TaskSpec, TrainConfig};
use dba_core::{bench, oracles, DbaError, Rng, Tensor};

fn py_err(e: DbaError) -> PyErr {
    match e {
        DbaError::Parameter(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn to_tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(py_err)
}

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn parse<T: std::str::FromStr<Err = DbaError>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

/// Shape of one attention layer.
#[pyclass(name = "AttentionConfig", frozen)]
struct PyConfig {
    inner: AttentionConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (n, d, d_p, d_in, heads = 1, mechanism = "dba"))]
    fn new(n: usize, d: usize, d_p: usize, d_in: usize, heads: usize, mechanism: &str) -> PyResult<Self> {
        let inner = AttentionConfig::new(n, d, d_p, d_in, heads, parse(mechanism)?).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n
    }

    #[getter]
    fn d(&self) -> usize {
        self.inner.d
    }

    #[getter]
    fn mechanism(&self) -> String {
        self.inner.mechanism.to_string()
    }

    /// Analytic forward-pass FLOPs.
    fn flops(&self) -> u64 {
        bench::count_flops(&self.inner)
    }

    /// Analytic peak bytes of live forward-pass tensors.
    fn peak_bytes(&self) -> u64 {
        bench::peak_bytes(&self.inner)
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "AttentionConfig(n={}, d={}, d_p={}, d_in={}, heads={}, mechanism='{}')",
            c.n, c.d, c.d_p, c.d_in, c.heads, c.mechanism
        )
    }
}

/// A randomly initialized self-attention layer.
#[pyclass(name = "AttentionLayer", frozen)]
struct PyLayer {
    cfg: AttentionConfig,
    params: LayerParams,
}

#[pymethods]
impl PyLayer {
    #[new]
    #[pyo3(signature = (config, seed = 0))]
    fn new(config: &PyConfig, seed: u64) -> PyResult<Self> {
        let params = LayerParams::init(&config.inner, &mut Rng::new(seed)).map_err(py_err)?;
        Ok(Self { cfg: config.inner, params })
    }

    /// `x` is n × d; DBA layers with sequence compression accept any n.
    fn forward(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = to_tensor(x)?;
        let cfg = if self.cfg.mechanism.supports_variable_length() {
            self.cfg.with_n(x.rows())
        } else {
            self.cfg
        };
        let mut tape = Tape::new();
        let xi = tape.leaf(x);
        let nodes = self.params.register(&mut tape, false);
        let out = attention_layer(&mut tape, xi, &nodes, &cfg).map_err(py_err)?;
        Ok(to_rows(tape.value(out)))
    }

    fn parameter_count(&self) -> usize {
        self.params.parameter_count()
    }
}

/// `softmax(QKᵀ/√d)·V`.
#[pyfunction]
fn vanilla_attention(q: Vec<Vec<f64>>, k: Vec<Vec<f64>>, v: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    let out = dba_core::attention::vanilla_attention(&to_tensor(q)?, &to_tensor(k)?, &to_tensor(v)?).map_err(py_err)?;
    Ok(to_rows(&out))
}

#[pyfunction]
fn jl_minimum_dim(d_p: usize, epsilon: f64) -> PyResult<usize> {
    oracles::jl_minimum_dim(d_p, epsilon).map_err(py_err)
}

#[pyfunction]
fn jl_bound(d_p: usize, d_in: usize, epsilon: f64) -> f64 {
    oracles::jl_bound(d_p, d_in, epsilon)
}

#[pyfunction]
#[pyo3(signature = (d, d_p, d_in, epsilon, trials = 2000, seed = 0))]
fn jl_monte_carlo<'py>(
    py: Python<'py>,
    d: usize,
    d_p: usize,
    d_in: usize,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let r = oracles::jl_monte_carlo(d, d_p, d_in, epsilon, trials, seed).map_err(py_err)?;
    let out = PyDict::new(py);
    out.set_item("trials", r.trials)?;
    out.set_item("failures", r.failures)?;
    out.set_item("rate", r.rate())?;
    out.set_item("bound", r.bound)?;
    out.set_item("pass", r.pass())?;
    Ok(out)
}

/// Per-tensor max relative discrepancy between autodiff and finite
/// differences for one DBA self-attention layer.
#[pyfunction]
#[pyo3(signature = (n = 6, d = 8, d_p = 3, d_in = 4, heads = 2, seed = 0))]
fn gradcheck(n: usize, d: usize, d_p: usize, d_in: usize, heads: usize, seed: u64) -> PyResult<Vec<(String, f64)>> {
    let cfg = AttentionConfig::new(n, d, d_p, d_in, heads, Mechanism::DBA).map_err(py_err)?;
    Ok(oracles::gradcheck_layer(&cfg, seed).map_err(py_err)?.tensors)
}

#[pyfunction]
#[pyo3(signature = (n = 16, seed = 0))]
fn reduction_identity_gap(n: usize, seed: u64) -> PyResult<f64> {
    oracles::reduction_identity_gap(n, seed).map_err(py_err)
}

/// A classifier trained on one of the synthetic tasks.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    model: trainer::Model,
}

fn resolve(task: &str, mechanism: &str, seed: u64) -> PyResult<(ModelConfig, TaskSpec)> {
    let kind: TaskKind = parse(task)?;
    let spec = TaskSpec::default_for(kind, seed);
    let cfg = ModelConfig::for_task(kind, parse(mechanism)?);
    cfg.validate(&spec).map_err(py_err)?;
    Ok((cfg, spec))
}

#[pymethods]
impl PyModel {
    /// Trains from scratch; returns `(model, report)` where `report` holds
    /// losses and accuracies.
    #[staticmethod]
    #[pyo3(signature = (task = "majority", mechanism = "dba", epochs = 30, seed = 0))]
    fn train<'py>(
        py: Python<'py>,
        task: &str,
        mechanism: &str,
        epochs: usize,
        seed: u64,
    ) -> PyResult<(Self, Bound<'py, PyDict>)> {
        let (cfg, spec) = resolve(task, mechanism, seed)?;
        let (model, rep) = py
            .detach(|| trainer::train(cfg, &spec, &TrainConfig::new(epochs, seed)))
            .map_err(py_err)?;
        let out = PyDict::new(py);
        out.set_item("final_train_loss", rep.final_train_loss)?;
        out.set_item("train_acc", rep.train_acc)?;
        out.set_item("val_acc", rep.val_acc)?;
        out.set_item("seconds", rep.seconds)?;
        out.set_item("parameter_count", rep.parameter_count)?;
        let losses: Vec<f64> = rep.log.iter().map(|e| e.train_loss).collect();
        out.set_item("losses", losses)?;
        Ok((Self { model }, out))
    }

    /// Loads a checkpoint written by `save` (or by `dba train`).
    #[staticmethod]
    #[pyo3(signature = (path, task = "majority", mechanism = "dba", seed = 0))]
    fn load(path: PathBuf, task: &str, mechanism: &str, seed: u64) -> PyResult<Self> {
        let (cfg, spec) = resolve(task, mechanism, seed)?;
        Ok(Self {
            model: trainer::load_model(cfg, spec, &path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        trainer::save_model(&self.model, &path).map_err(py_err)
    }

    #[pyo3(signature = (split = "val"))]
    fn accuracy(&self, split: &str) -> PyResult<f64> {
        let data = gen_task(&self.model.task).map_err(py_err)?;
        let samples = match split {
            "val" => &data.val,
            "train" => &data.train,
            other => return Err(PyValueError::new_err(format!("split must be 'val' or 'train', got {other:?}"))),
        };
        trainer::eval(&self.model, samples).map_err(py_err)
    }

    /// Predicted class per token sequence.
    fn predict(&self, sequences: Vec<Vec<usize>>) -> PyResult<Vec<usize>> {
        let vocab_in = self.model.task.vocab_in();
        let samples = sequences
            .into_iter()
            .map(|tokens| {
                if let Some(&t) = tokens.iter().find(|&&t| t >= vocab_in) {
                    return Err(PyValueError::new_err(format!("token {t} outside vocabulary of {vocab_in}")));
                }
                Ok(trainer::Sample {
                    tokens,
                    keys: None,
                    label: 0,
                })
            })
            .collect::<PyResult<Vec<_>>>()?;
        self.model.predict(&samples).map_err(py_err)
    }

    fn parameter_count(&self) -> usize {
        self.model.parameter_count()
    }

    /// `{"w_r": [per-head d_p×n], "w_c": [...], "w_r_prime": ..., "w_c_prime": ...}`
    /// for the first layer on input `x`.
    fn projections<'py>(&self, py: Python<'py>, x: Vec<Vec<f64>>) -> PyResult<Bound<'py, PyDict>> {
        let p = trainer::dump_projections(&self.model, &to_tensor(x)?).map_err(py_err)?;
        let out = PyDict::new(py);
        out.set_item("w_r", p.w_r.iter().map(to_rows).collect::<Vec<_>>())?;
        out.set_item("w_c", p.w_c.iter().map(to_rows).collect::<Vec<_>>())?;
        out.set_item("w_r_prime", to_rows(&p.w_r_prime))?;
        out.set_item("w_c_prime", to_rows(&p.w_c_prime))?;
        Ok(out)
    }
}

#[pymodule]
fn dba(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyLayer>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(vanilla_attention, m)?)?;
    m.add_function(wrap_pyfunction!(jl_minimum_dim, m)?)?;
    m.add_function(wrap_pyfunction!(jl_bound, m)?)?;
    m.add_function(wrap_pyfunction!(jl_monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(reduction_identity_gap, m)?)?;
    Ok(())
}
