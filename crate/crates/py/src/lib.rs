//! Python bindings for the fogcnn core crate.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use fogcnn::data::{stratified_split, SampleRecord, SplitRatios, COVID, NORMAL};
use fogcnn::fogsim::{self, PlacementPolicy, SimConfig, TopologyConfig};
use fogcnn::metrics::{self, ConfusionCounts};
use fogcnn::nn::{self, checkpoint, ModelConfig, Variant};
use fogcnn::{Error, Tensor};

fn to_py(err: Error) -> PyErr {
    match err {
        Error::Io { .. } => PyOSError::new_err(err.to_string()),
        Error::Checkpoint(_) | Error::Format { .. } | Error::Unreadable(_) => {
            PyRuntimeError::new_err(err.to_string())
        }
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn parse_variant(name: &str) -> PyResult<Variant> {
    name.parse().map_err(to_py)
}

/// `(name, type, output_shape, params)`
type SummaryRow = (String, String, Vec<usize>, usize);

/// One row per layer of a reference variant.
#[pyfunction]
fn model_summary(variant: &str) -> PyResult<Vec<SummaryRow>> {
    let rows = ModelConfig::for_variant(parse_variant(variant)?)
        .summary()
        .map_err(to_py)?;
    Ok(rows
        .into_iter()
        .map(|r| (r.name, r.kind.to_string(), r.output_shape, r.params))
        .collect())
}

#[pyfunction]
fn parameter_count(variant: &str) -> PyResult<usize> {
    ModelConfig::for_variant(parse_variant(variant)?)
        .parameter_count()
        .map_err(to_py)
}

#[pyfunction]
fn binary_cross_entropy(probabilities: Vec<f64>, labels: Vec<u8>) -> PyResult<f64> {
    nn::binary_cross_entropy(&probabilities, &labels).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (tp, tn, fp, fn_))]
fn compute_metrics(tp: u64, tn: u64, fp: u64, fn_: u64) -> PyResult<BTreeMap<String, f64>> {
    let r = metrics::compute_metrics(&ConfusionCounts::new(tp, tn, fp, fn_)).map_err(to_py)?;
    Ok(BTreeMap::from([
        ("precision".to_string(), r.precision),
        ("recall".to_string(), r.recall),
        ("specificity".to_string(), r.specificity),
        ("sensitivity".to_string(), r.sensitivity),
        ("accuracy".to_string(), r.accuracy),
        ("f1".to_string(), r.f1),
    ]))
}

/// Per-class `(train, val, test)` sizes of the stratified split.
#[pyfunction]
fn split_counts(
    covid: usize,
    normal: usize,
    seed: u64,
) -> PyResult<BTreeMap<String, (usize, usize, usize)>> {
    let mut records: Vec<SampleRecord> = (0..covid)
        .map(|i| SampleRecord::new(format!("covid/{i:06}.png"), COVID))
        .collect();
    records.extend((0..normal).map(|i| SampleRecord::new(format!("normal/{i:06}.png"), NORMAL)));
    let m = stratified_split(records, SplitRatios::default(), seed).map_err(to_py)?;
    Ok(m.class_counts()
        .into_iter()
        .map(|(label, c)| {
            (
                fogcnn::data::class_name(label).to_string(),
                (c.train, c.val, c.test),
            )
        })
        .collect())
}

#[pyfunction]
fn transfer_time(payload_bytes: u64, delay_s: f64, bandwidth_bps: f64) -> f64 {
    let link = fogsim::Link {
        from: 0,
        to: 0,
        propagation_delay: delay_s,
        bandwidth: bandwidth_bps,
    };
    fogsim::transfer_time(payload_bytes, &link)
}

/// Runs one policy (`"fog"` or `"cloud"`) or `"both"`; returns the summary
/// as a JSON string.
#[pyfunction]
#[pyo3(signature = (topology_json, workload_csv, policy = "both", seed = 0))]
fn simulate(topology_json: &str, workload_csv: &str, policy: &str, seed: u64) -> PyResult<String> {
    let topology =
        fogsim::build_topology(&TopologyConfig::from_json(topology_json).map_err(to_py)?)
            .map_err(to_py)?;
    let workload = fogsim::read_workload(workload_csv.as_bytes(), "workload").map_err(to_py)?;
    let config = SimConfig::default();
    let single = |p| {
        fogsim::run_simulation(&topology, p, &workload, seed, config)
            .map(|r| r.summary_json())
            .map_err(to_py)
    };
    match policy {
        "fog" => single(PlacementPolicy::FogInference),
        "cloud" => single(PlacementPolicy::CloudInference),
        "both" => fogsim::compare_policies(&topology, &workload, seed, config)
            .map(|c| c.summary_json())
            .map_err(to_py),
        other => Err(PyValueError::new_err(format!("unknown policy {other:?}"))),
    }
}

/// A CNN classifier. Images are passed as flat row-major `H*W*3` lists.
#[pyclass(name = "Model")]
struct PyModel {
    inner: nn::Model<f32>,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (variant = "three_block", input_size = 200, base_channels = 64, dense_units = 512, seed = 0))]
    fn new(
        variant: &str,
        input_size: usize,
        base_channels: usize,
        dense_units: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let config = ModelConfig::for_variant(parse_variant(variant)?)
            .with_input_size(input_size)
            .with_base_channels(base_channels)
            .with_dense_units(dense_units);
        let inner = nn::Model::build(
            &config,
            fogcnn::rng::derive_seed(seed, "init"),
            fogcnn::rng::derive_seed(seed, "dropout"),
        )
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: checkpoint::load(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        checkpoint::save(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    #[getter]
    fn input_shape(&self) -> (usize, usize, usize) {
        let [h, w, c] = self.inner.config().input_shape();
        (h, w, c)
    }

    fn parameter_names(&self) -> Vec<String> {
        self.inner
            .parameters()
            .into_iter()
            .map(|(n, _)| n)
            .collect()
    }

    /// Class-1 probability per image.
    fn predict(&self, images: Vec<Vec<f32>>) -> PyResult<Vec<f32>> {
        let [h, w, c] = self.inner.config().input_shape();
        let tensors = images
            .into_iter()
            .map(|v| Tensor::from_vec(&[h, w, c], v))
            .collect::<Result<Vec<_>, _>>()
            .map_err(to_py)?;
        self.inner.predict(&tensors).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        let [h, w, c] = self.inner.config().input_shape();
        format!(
            "Model(input=({h}, {w}, {c}), conv={:?}, params={})",
            self.inner.config().conv_channels,
            self.inner.parameter_count()
        )
    }
}

#[pymodule]
fn fogcnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(model_summary, m)?)?;
    m.add_function(wrap_pyfunction!(parameter_count, m)?)?;
    m.add_function(wrap_pyfunction!(binary_cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(split_counts, m)?)?;
    m.add_function(wrap_pyfunction!(transfer_time, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_class::<PyModel>()?;
    Ok(())
}
