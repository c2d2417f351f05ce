//! Python bindings for the packed-register training engine.
//!
//! Exposes the slot engine (registers, rotation, add/mul with level
//! accounting), the matrix packings with their matvec/transpose operations,
//! the closed-form cost predictor and an end-to-end iris training entry
//! point. See `python/smoke_test.py` at the repository root for usage.

use std::path::Path;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use packtrain_core::cost::{self, PackedOp};
use packtrain_core::iris;
use packtrain_core::nn::{self, Hyperparams, TrainOptions};
use packtrain_core::opcount;
use packtrain_core::packing::{self, Layout, PadPolicy, UnitVectorSet};
use packtrain_core::plain::PlainNetwork;
use packtrain_core::{EngineContext, Error, SlotRegister};

fn to_py_err(err: Error) -> PyErr {
    match err {
        Error::Config(_) | Error::Shape(_) | Error::Dimension { .. } | Error::Data(_) => {
            PyValueError::new_err(err.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn parse_layout(name: &str) -> PyResult<Layout> {
    match name {
        "row" => Ok(Layout::Row),
        "diag" | "diagonal" => Ok(Layout::Diagonal),
        "diag-stepped" | "stepped" => Ok(Layout::DiagonalStepped),
        other => Err(PyValueError::new_err(format!(
            "unknown packing '{other}' (expected row, diag or diag-stepped)"
        ))),
    }
}

/// A cyclic register of real slots, tagged plain or cipher.
#[pyclass(name = "Register", skip_from_py_object)]
#[derive(Clone)]
struct PyRegister {
    inner: SlotRegister,
}

#[pymethods]
impl PyRegister {
    /// Slot values as a list.
    fn slots(&self) -> Vec<f64> {
        self.inner.slots().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        if self.inner.is_cipher() {
            "cipher"
        } else {
            "plain"
        }
    }

    #[getter]
    fn level(&self) -> u32 {
        self.inner.level()
    }

    fn __repr__(&self) -> String {
        format!(
            "Register(kind={}, level={}, slots={:?})",
            self.kind(),
            self.inner.level(),
            self.inner.slots()
        )
    }
}

/// A matrix packed into registers.
#[pyclass(name = "PackedMatrix", skip_from_py_object)]
#[derive(Clone)]
struct PyPackedMatrix {
    inner: packing::PackedMatrix,
}

#[pymethods]
impl PyPackedMatrix {
    /// Dense values, first axis along the parts.
    fn unpack(&self) -> Vec<Vec<f64>> {
        self.inner.unpack()
    }

    #[getter]
    fn layout(&self) -> &'static str {
        self.inner.layout.name()
    }

    /// Slot contents of every part.
    fn parts(&self) -> Vec<Vec<f64>> {
        self.inner
            .parts()
            .iter()
            .map(|p| p.slots().to_vec())
            .collect()
    }

    #[getter]
    fn register_length(&self) -> usize {
        self.inner.register_length()
    }
}

/// Slot-arithmetic context with level accounting and operation counters.
#[pyclass(name = "Engine")]
struct PyEngine {
    ctx: EngineContext,
}

#[pymethods]
impl PyEngine {
    #[new]
    #[pyo3(signature = (level_budget=9, noise_std=0.0, seed=0))]
    fn new(level_budget: u32, noise_std: f64, seed: u64) -> Self {
        Self {
            ctx: EngineContext::new(level_budget, noise_std, seed),
        }
    }

    /// Encode values into a plaintext register of the given length.
    #[staticmethod]
    #[pyo3(signature = (values, length=None))]
    fn encode(values: Vec<f64>, length: Option<usize>) -> PyResult<PyRegister> {
        let len = length.unwrap_or(values.len());
        Ok(PyRegister {
            inner: SlotRegister::encode(&values, len).map_err(to_py_err)?,
        })
    }

    fn encrypt(&self, p: &PyRegister) -> PyResult<PyRegister> {
        Ok(PyRegister {
            inner: self.ctx.encrypt(&p.inner).map_err(to_py_err)?,
        })
    }

    fn decrypt(&self, c: &PyRegister) -> PyResult<PyRegister> {
        Ok(PyRegister {
            inner: self.ctx.decrypt(&c.inner).map_err(to_py_err)?,
        })
    }

    /// Cyclic rotation: positive k to the right, negative to the left.
    fn rotate(&self, a: &PyRegister, k: i64) -> PyRegister {
        PyRegister {
            inner: self.ctx.rotate(&a.inner, k),
        }
    }

    fn add(&self, a: &PyRegister, b: &PyRegister) -> PyResult<PyRegister> {
        Ok(PyRegister {
            inner: self.ctx.add(&a.inner, &b.inner).map_err(to_py_err)?,
        })
    }

    fn mul(&self, a: &PyRegister, b: &PyRegister) -> PyResult<PyRegister> {
        Ok(PyRegister {
            inner: self.ctx.mul(&a.inner, &b.inner).map_err(to_py_err)?,
        })
    }

    /// Pack along generalized diagonals (first axis must dominate).
    #[pyo3(signature = (matrix, stepped=false))]
    fn pack_diag(&self, matrix: Vec<Vec<f64>>, stepped: bool) -> PyResult<PyPackedMatrix> {
        Ok(PyPackedMatrix {
            inner: packing::pack_diag(&matrix, stepped, &self.ctx).map_err(to_py_err)?,
        })
    }

    /// Pack one register per row.
    fn pack_row(&self, matrix: Vec<Vec<f64>>) -> PyResult<PyPackedMatrix> {
        Ok(PyPackedMatrix {
            inner: packing::pack_row(&matrix, &self.ctx).map_err(to_py_err)?,
        })
    }

    /// Packed matrix-vector product in the pack's layout.
    fn matvec(&self, w: &PyPackedMatrix, x: &PyRegister) -> PyResult<PyRegister> {
        let result = match w.inner.layout {
            Layout::Row => {
                let units = UnitVectorSet::new(w.inner.register_length());
                packing::matvec_row(&w.inner, &x.inner, &units, &self.ctx)
            }
            _ => packing::matvec_diag(&w.inner, &x.inner, &self.ctx),
        };
        Ok(PyRegister {
            inner: result.map_err(to_py_err)?,
        })
    }

    /// Packed transpose (rotation-only for diagonal layouts).
    fn transpose(&self, w: &PyPackedMatrix) -> PyResult<PyPackedMatrix> {
        let result = match w.inner.layout {
            Layout::Row => {
                let units = UnitVectorSet::new(w.inner.register_length());
                packing::transpose_row(&w.inner, &units, &self.ctx)
            }
            Layout::Diagonal => packing::transpose_diag(&w.inner, &self.ctx),
            Layout::DiagonalStepped => packing::transpose_diag_stepped(&w.inner, &self.ctx),
        };
        Ok(PyPackedMatrix {
            inner: result.map_err(to_py_err)?,
        })
    }

    /// Operation counters as a dict.
    fn counters<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let snap = self.ctx.counters();
        let d = PyDict::new(py);
        d.set_item("ct_mults", snap.ct_mults)?;
        d.set_item("pt_mults", snap.pt_mults)?;
        d.set_item("mults", snap.mults())?;
        d.set_item("rotations", snap.rotations)?;
        d.set_item("additions", snap.additions)?;
        d.set_item("min_level", self.ctx.min_level_seen())?;
        Ok(d)
    }

    #[getter]
    fn level_budget(&self) -> u32 {
        self.ctx.level_budget()
    }
}

/// Closed-form cost prediction; returns (mults, rotations, depth).
#[pyfunction]
fn predict_cost(layout: &str, op: &str, n: usize, m: usize) -> PyResult<(u64, u64, u32)> {
    let layout = parse_layout(layout)?;
    let op = match op {
        "matvec" => PackedOp::Matvec,
        "transpose" => PackedOp::Transpose,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown op '{other}' (expected matvec or transpose)"
            )))
        }
    };
    let est = cost::predict_cost(layout, op, n, m).map_err(to_py_err)?;
    Ok((est.mults, est.rotations, est.depth))
}

/// Measure one instrumented training iteration; returns phase totals.
#[pyfunction]
#[pyo3(signature = (dims, packing="diag", seed=1))]
fn measure_iteration<'py>(
    py: Python<'py>,
    dims: Vec<usize>,
    packing: &str,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let layout = parse_layout(packing)?;
    let ctx = EngineContext::exact(24);
    let report = opcount::measure_iteration(&dims, layout, seed, &ctx).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("core_mults", report.core_total.mults)?;
    d.set_item("core_rotations", report.core_total.rotations)?;
    d.set_item("core_total", report.core_total.total())?;
    d.set_item("full_total", report.full_total.total())?;
    d.set_item("transition_mults", report.transition_total().mults)?;
    d.set_item("transition_rotations", report.transition_total().rotations)?;
    Ok(d)
}

/// Train on an iris CSV; returns per-epoch metrics and final figures.
#[pyfunction]
#[pyo3(signature = (
    data,
    packing="diag",
    epochs=400,
    batch_size=20,
    lr=0.1,
    levels=None,
    noise_std=0.0,
    init_std=0.1,
    seed=1,
    threads=1,
    compare_plain=false,
))]
#[allow(clippy::too_many_arguments)]
fn train_iris<'py>(
    py: Python<'py>,
    data: &str,
    packing: &str,
    epochs: usize,
    batch_size: usize,
    lr: f64,
    levels: Option<u32>,
    noise_std: f64,
    init_std: f64,
    seed: u64,
    threads: usize,
    compare_plain: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let layout = parse_layout(packing)?;
    let levels = levels.unwrap_or(if layout == Layout::Row { 12 } else { 9 });
    let ctx = EngineContext::new(levels, noise_std, seed);
    let dataset = iris::load_iris(Path::new(data), seed).map_err(to_py_err)?;
    let split = dataset.split();
    let hyper = Hyperparams {
        learning_rate: lr,
        batch_size,
        epochs,
    };
    let inits = nn::gaussian_init(&[4, 10, 3], init_std, seed).map_err(to_py_err)?;
    let mut net = nn::build_network(&inits, layout, hyper, seed, PadPolicy::PadToMultiple, &ctx)
        .map_err(to_py_err)?;
    let opts = TrainOptions {
        threads,
        ..TrainOptions::default()
    };
    let metrics = nn::train(&mut net, &split, &opts, &ctx).map_err(to_py_err)?;

    let d = PyDict::new(py);
    d.set_item(
        "train_loss",
        metrics
            .epochs
            .iter()
            .map(|r| r.train_loss)
            .collect::<Vec<_>>(),
    )?;
    d.set_item(
        "test_loss",
        metrics
            .epochs
            .iter()
            .map(|r| r.test_loss)
            .collect::<Vec<_>>(),
    )?;
    d.set_item(
        "train_acc",
        metrics
            .epochs
            .iter()
            .map(|r| r.train_acc)
            .collect::<Vec<_>>(),
    )?;
    d.set_item(
        "test_acc",
        metrics
            .epochs
            .iter()
            .map(|r| r.test_acc)
            .collect::<Vec<_>>(),
    )?;
    d.set_item("final_test_acc", metrics.final_test_accuracy())?;
    d.set_item("mults", metrics.totals.mults())?;
    d.set_item("rotations", metrics.totals.rotations)?;
    d.set_item("min_level", metrics.min_level)?;
    if compare_plain {
        let mut plain = PlainNetwork::new(
            nn::gaussian_init(&[4, 10, 3], init_std, seed).map_err(to_py_err)?,
            hyper,
            seed,
        );
        let plain_metrics = plain.train(&split, epochs, 0).map_err(to_py_err)?;
        let max_div = metrics
            .epochs
            .iter()
            .zip(&plain_metrics.epochs)
            .map(|(a, b)| (a.train_loss - b.train_loss).abs())
            .fold(0.0f64, f64::max);
        d.set_item("plain_final_test_acc", plain_metrics.final_test_accuracy())?;
        d.set_item("max_loss_divergence", max_div)?;
    }
    Ok(d)
}

#[pymodule]
fn packtrain(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEngine>()?;
    m.add_class::<PyRegister>()?;
    m.add_class::<PyPackedMatrix>()?;
    m.add_function(wrap_pyfunction!(predict_cost, m)?)?;
    m.add_function(wrap_pyfunction!(measure_iteration, m)?)?;
    m.add_function(wrap_pyfunction!(train_iris, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
