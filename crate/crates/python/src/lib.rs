use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use tmascore::synthgen::{self, SynthSpec};
use tmascore::transfer::{self, AuxSet, SplitOptions, TransferConfig};
use tmascore::{forest, Direction, FeatureOptions, LabeledInstance, Mtry, QuantizedImage, Score, VoteTally};

fn py_err(e: tmascore::Error) -> PyErr {
    if e.is_io() {
        PyIOError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn instances(features: Vec<Vec<f64>>, labels: Vec<i64>) -> PyResult<Vec<LabeledInstance>> {
    if features.len() != labels.len() {
        return Err(PyValueError::new_err(format!(
            "{} feature rows but {} labels",
            features.len(),
            labels.len()
        )));
    }
    features
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (f, l))| Ok(LabeledInstance::new(format!("#{i}"), f, Score::new(l).map_err(py_err)?, "py")))
        .collect()
}

fn feature_options(levels: usize, direction: &str, distance: usize, normalize: bool) -> PyResult<FeatureOptions> {
    let direction: Direction = direction.parse().map_err(py_err)?;
    Ok(FeatureOptions {
        levels,
        direction,
        distance,
        normalize,
        ..FeatureOptions::default()
    })
}

/// A trained random forest over four score classes.
#[pyclass(name = "Forest", module = "tmascore_py", frozen)]
struct PyForest {
    inner: tmascore::Forest,
}

#[pymethods]
impl PyForest {
    #[staticmethod]
    #[pyo3(signature = (features, labels, trees = 100, mtry = "sqrt", seed = 0, min_node_size = 1, bootstrap = true))]
    fn train(
        features: Vec<Vec<f64>>,
        labels: Vec<i64>,
        trees: usize,
        mtry: &str,
        seed: u64,
        min_node_size: usize,
        bootstrap: bool,
    ) -> PyResult<Self> {
        let data = instances(features, labels)?;
        let params = tmascore::ForestParams {
            trees,
            mtry: mtry.parse::<Mtry>().map_err(py_err)?,
            seed,
            min_node_size,
            bootstrap,
        };
        Ok(PyForest {
            inner: forest::train_forest(&data, &params).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyForest {
            inner: tmascore::Forest::from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[getter]
    fn n_trees(&self) -> usize {
        self.inner.n_trees()
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.inner.dimension()
    }

    /// Per-class vote counts for one feature vector.
    fn predict_votes(&self, x: Vec<f64>) -> PyResult<[u32; 4]> {
        Ok(self.inner.predict_votes(&x).map_err(py_err)?.votes)
    }

    fn predict(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<u8>> {
        features
            .iter()
            .map(|x| Ok(self.inner.predict_label(x).map_err(py_err)?.get()))
            .collect()
    }

    /// Indices of the rows that pass the transfer gate at `beta`.
    fn transferable(&self, features: Vec<Vec<f64>>, labels: Vec<i64>, beta: f64) -> PyResult<Vec<usize>> {
        let aux = instances(features, labels)?;
        let set = transfer::tma_transfer(&self.inner, &aux, self.inner.n_trees(), beta).map_err(py_err)?;
        Ok(set
            .instances
            .iter()
            .map(|x| x.id[1..].parse().expect("ids are row indices"))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!("Forest(trees={}, dimension={})", self.inner.n_trees(), self.inner.dimension())
    }
}

/// Vote-margin confidence of a four-class tally.
#[pyfunction]
fn confidence(votes: [u32; 4], trees: usize) -> PyResult<f64> {
    tmascore::confidence(&VoteTally::from_counts(votes), trees).map_err(py_err)
}

/// Co-occurrence counts of a quantized image given as rows of levels.
#[pyfunction]
#[pyo3(signature = (rows, levels, direction = "45", distance = 1))]
fn spatial_histogram(rows: Vec<Vec<u16>>, levels: usize, direction: &str, distance: usize) -> PyResult<Vec<Vec<u64>>> {
    let height = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(PyValueError::new_err("rows differ in length"));
    }
    let img = QuantizedImage::from_levels(width, height, levels, rows.concat()).map_err(py_err)?;
    let direction: Direction = direction.parse().map_err(py_err)?;
    let h = tmascore::spatial_histogram(&img, direction, distance).map_err(py_err)?;
    Ok(h.counts().chunks(levels).map(<[u64]>::to_vec).collect())
}

/// Feature vector of an image file.
#[pyfunction]
#[pyo3(signature = (path, levels = 51, direction = "45", distance = 1, normalize = true))]
fn extract_features(path: PathBuf, levels: usize, direction: &str, distance: usize, normalize: bool) -> PyResult<Vec<f64>> {
    let opts = feature_options(levels, direction, distance, normalize)?;
    let img = tmascore::load_grayscale(&path).map_err(py_err)?;
    Ok(opts.extract(&img).map_err(py_err)?.into_inner())
}

/// Class separation ratio of labeled feature vectors.
#[pyfunction]
fn separation_ratio(features: Vec<Vec<f64>>, labels: Vec<i64>) -> PyResult<f64> {
    let data = instances(features, labels)?;
    Ok(tmascore::separation_ratio(&data).map_err(py_err)?.rho)
}

type Point = (f64, f64);

/// Scores on the first two principal directions and their explained
/// variance fractions.
#[pyfunction]
fn pca_project(features: Vec<Vec<f64>>) -> PyResult<(Vec<Point>, Point)> {
    let n = features.len();
    let data = instances(features, vec![0; n])?;
    let p = tmascore::pca_project(&data).map_err(py_err)?;
    let scores = p.points.iter().map(|q| (q.pc1, q.pc2)).collect();
    Ok((scores, (p.explained_variance[0], p.explained_variance[1])))
}

/// Writes a synthetic corpus and returns the manifest path of each source.
#[pyfunction]
#[pyo3(signature = (out_dir, spec_json = None, seed = None))]
fn generate_synthetic(out_dir: PathBuf, spec_json: Option<&str>, seed: Option<u64>) -> PyResult<BTreeMap<String, PathBuf>> {
    let mut spec = match spec_json {
        Some(text) => SynthSpec::from_json(text).map_err(py_err)?,
        None => SynthSpec::benchmark(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    Ok(synthgen::generate(&spec, &out_dir).map_err(py_err)?.into_iter().collect())
}

/// Runs the transfer experiment on image manifests and returns the report
/// as JSON.
#[pyfunction]
#[pyo3(signature = (train_manifest, aux_manifests, runs = 1, beta = 0.10, trees = 100, seed = 0, pooled_baseline = false))]
fn transfer_score(
    train_manifest: PathBuf,
    aux_manifests: BTreeMap<String, PathBuf>,
    runs: usize,
    beta: f64,
    trees: usize,
    seed: u64,
    pooled_baseline: bool,
) -> PyResult<String> {
    let opts = FeatureOptions::default();
    let load = |p: &PathBuf| -> PyResult<Vec<LabeledInstance>> {
        let m = tmascore::load_manifest(p).map_err(py_err)?;
        Ok(tmascore::dataset::extract_manifest(&m, &opts).map_err(py_err)?.instances)
    };
    let primary = load(&train_manifest)?;
    let aux = aux_manifests
        .iter()
        .map(|(name, p)| Ok(AuxSet::new(name, load(p)?)))
        .collect::<PyResult<Vec<_>>>()?;
    let config = TransferConfig {
        beta,
        forest: tmascore::ForestParams {
            trees,
            seed,
            ..tmascore::ForestParams::default()
        },
        pooled_baseline,
        ..TransferConfig::default()
    };
    let report = transfer::run_experiment(&primary, &aux, &config, &SplitOptions::default(), runs).map_err(py_err)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn tmascore_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyForest>()?;
    m.add_function(wrap_pyfunction!(confidence, m)?)?;
    m.add_function(wrap_pyfunction!(spatial_histogram, m)?)?;
    m.add_function(wrap_pyfunction!(extract_features, m)?)?;
    m.add_function(wrap_pyfunction!(separation_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(pca_project, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(transfer_score, m)?)?;
    Ok(())
}
