//! Python bindings: model construction, forward evaluation, checkpointing,
//! dataset generation and the headline verification/analysis entry points.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use hkt_core::data::{generate_listops, save_dataset_with_meta, ListOpsSpec};
use hkt_core::gradcore::Tape;
use hkt_core::model::{checkpoint, ForwardOpts, Model, ModelConfig};
use hkt_core::verify;
use hkt_core::HktError;

fn err(e: HktError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "ModelConfig")]
#[derive(Clone)]
struct PyModelConfig {
    inner: ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (d_model=64, n_heads=4, n_levels=3, stride=2, n_layers=2,
                        conv_kernel=3, dropout=0.0, vocab_size=17, n_classes=10,
                        causal=true, max_seq_len=128))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        d_model: usize,
        n_heads: usize,
        n_levels: usize,
        stride: usize,
        n_layers: usize,
        conv_kernel: usize,
        dropout: f64,
        vocab_size: usize,
        n_classes: usize,
        causal: bool,
        max_seq_len: usize,
    ) -> PyResult<Self> {
        let inner = ModelConfig {
            d_model,
            n_heads,
            n_levels,
            stride,
            n_layers,
            conv_kernel,
            dropout,
            vocab_size,
            n_classes,
            causal,
            max_seq_len,
        };
        inner.validate().map_err(err)?;
        Ok(PyModelConfig { inner })
    }

    fn level_len(&self, t: usize, level: usize) -> usize {
        self.inner.t_l(t, level)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

#[pyclass(name = "Model")]
struct PyModel {
    inner: Model,
}

#[pymethods]
impl PyModel {
    #[new]
    fn new(config: PyModelConfig, seed: u64) -> PyResult<Self> {
        Ok(PyModel {
            inner: Model::init(config.inner, seed).map_err(err)?,
        })
    }

    /// Classification logits for one token sequence.
    fn logits(&self, tokens: Vec<usize>) -> PyResult<Vec<f64>> {
        let tape = Tape::new();
        let bound = self.inner.bind(&tape);
        let (logits, _) = bound
            .logits_from_tokens(&tokens, &ForwardOpts::default(), None)
            .map_err(err)?;
        Ok(logits.value().data().to_vec())
    }

    fn predict(&self, tokens: Vec<usize>) -> PyResult<usize> {
        let row = self.logits(tokens)?;
        Ok(row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0))
    }

    fn n_parameters(&self) -> usize {
        self.inner.params.n_scalars()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.inner, &path).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: checkpoint::load(&path).map_err(err)?,
        })
    }

    /// Gradient-leakage certificate; refuses non-causal configurations.
    fn max_leakage(&self, t: usize, trials: usize, seed: u64) -> PyResult<f64> {
        Ok(verify::measure_leakage(&self.inner, t, trials, seed)
            .map_err(err)?
            .max_leakage)
    }
}

/// Writes train/val/test splits (plus sidecar metadata) to a directory.
#[pyfunction]
#[pyo3(signature = (out_dir, seed=42, n_train=2000, n_val=500, n_test=500,
                    seq_len=128, max_depth=3, max_arity=5))]
#[allow(clippy::too_many_arguments)]
fn generate_dataset(
    out_dir: PathBuf,
    seed: u64,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    seq_len: usize,
    max_depth: usize,
    max_arity: usize,
) -> PyResult<()> {
    let spec = ListOpsSpec {
        max_depth,
        max_arity,
        seq_len,
        n_train,
        n_val,
        n_test,
        seed,
    };
    let splits = generate_listops(&spec).map_err(err)?;
    std::fs::create_dir_all(&out_dir)?;
    for (ds, name) in [
        (&splits.train, "train"),
        (&splits.val, "val"),
        (&splits.test, "test"),
    ] {
        save_dataset_with_meta(ds, &spec, name, &out_dir.join(format!("{name}.tsv")))
            .map_err(err)?;
    }
    Ok(())
}

/// (total score entries, measured overhead ratio, closed-form ratio).
#[pyfunction]
fn score_op_overhead(config: PyModelConfig, t: usize) -> PyResult<(u64, f64, f64)> {
    let count = verify::count_ops(&config.inner, t).map_err(err)?;
    Ok((count.total_entries, count.ratio_measured, count.ratio_theory))
}

/// (delta_hat, fit residual, optional warning) from accuracies by level count.
#[pyfunction]
fn decay_calibration(accuracy_by_l: Vec<f64>) -> PyResult<(f64, f64, Option<String>)> {
    let fit = hkt_core::analysis::decay_calibration(&accuracy_by_l).map_err(err)?;
    Ok((fit.delta_hat, fit.residual, fit.warning))
}

#[pymodule]
fn hkt_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(score_op_overhead, m)?)?;
    m.add_function(wrap_pyfunction!(decay_calibration, m)?)?;
    Ok(())
}
