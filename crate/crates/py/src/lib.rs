//! Python bindings for the infopattern core.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use infopattern::clustering::{self, KMeansParams};
use infopattern::corpus::{self, Corpus, StanceLabel, ThemeTimeline};
use infopattern::embedding;
use infopattern::pipeline::{Pipeline, PipelineConfig};
use infopattern::propagation::{self, ClaimNode, GraphOptions, NormalizationMode};
use infopattern::stance_lm::{self, BaseTrainConfig, EpsilonMap, SwitchTrainConfig};
use infopattern::synthetic;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "Corpus", module = "infopattern_py", frozen)]
struct PyCorpus {
    inner: Corpus,
}

#[pymethods]
impl PyCorpus {
    /// Reads a JSON-lines corpus file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        match corpus::load_messages(&path) {
            Ok(inner) => Ok(PyCorpus { inner }),
            Err(corpus::CorpusError::Io(e)) => Err(PyIOError::new_err(format!("{}: {e}", path.display()))),
            Err(e) => Err(value_err(e)),
        }
    }

    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        let inner = corpus::read_messages(text.as_bytes()).map_err(value_err)?;
        Ok(PyCorpus { inner })
    }

    /// Seeded synthetic corpus of `n` messages over `themes` themes and `topics` latent claims.
    #[staticmethod]
    #[pyo3(signature = (n, themes=2, topics=3, seed=0))]
    fn synthetic(n: usize, themes: usize, topics: usize, seed: u64) -> Self {
        PyCorpus {
            inner: synthetic::themed_corpus(n, themes, topics, seed),
        }
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn ids(&self) -> Vec<String> {
        self.inner.ids().map(str::to_string).collect()
    }

    fn message<'py>(&self, py: Python<'py>, id: &str) -> PyResult<Option<Bound<'py, PyDict>>> {
        let Some(m) = self.inner.get(id) else {
            return Ok(None);
        };
        let d = PyDict::new(py);
        d.set_item("id", &m.id)?;
        d.set_item("text", &m.text)?;
        let timestamp = serde_json::to_value(m).map_err(value_err)?["timestamp"]
            .as_str()
            .unwrap_or_default()
            .to_string();
        d.set_item("timestamp", timestamp)?;
        d.set_item("theme", &m.theme)?;
        d.set_item("stance", m.stance.map(|s| s.as_str()))?;
        Ok(Some(d))
    }

    /// Theme name to message ids in temporal order.
    fn timelines(&self) -> BTreeMap<String, Vec<String>> {
        corpus::build_theme_timelines(&self.inner)
            .into_iter()
            .map(|(k, t)| (k, t.ordered_ids))
            .collect()
    }

    fn write_jsonl(&self, path: PathBuf) -> PyResult<()> {
        let mut file = std::fs::File::create(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        self.inner
            .write_jsonl(&mut file)
            .map_err(|e| PyIOError::new_err(e.to_string()))
    }
}

/// Deterministic hashed bag-of-words embedding, unit L2 norm.
#[pyfunction]
#[pyo3(signature = (text, dim=64))]
fn hash_embed(text: &str, dim: usize) -> PyResult<Vec<f64>> {
    embedding::hash_embed(text, dim).map(|v| v.as_slice().to_vec()).map_err(value_err)
}

#[pyclass(name = "ClusterAssignment", module = "infopattern_py", frozen, get_all)]
struct PyClusterAssignment {
    k: usize,
    seed: u64,
    labels: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    inertia: f64,
    inertia_history: Vec<f64>,
    iterations: usize,
}

impl From<clustering::ClusterAssignment> for PyClusterAssignment {
    fn from(a: clustering::ClusterAssignment) -> Self {
        PyClusterAssignment {
            k: a.k,
            seed: a.seed,
            labels: a.labels,
            centroids: a.centroids,
            inertia: a.inertia,
            inertia_history: a.inertia_history,
            iterations: a.iterations,
        }
    }
}

#[pymethods]
impl PyClusterAssignment {
    fn __repr__(&self) -> String {
        format!("ClusterAssignment(k={}, inertia={:.6})", self.k, self.inertia)
    }
}

#[pyfunction]
#[pyo3(signature = (points, k, seed=0, max_iter=100, tol=1e-6))]
fn kmeans(points: Vec<Vec<f64>>, k: usize, seed: u64, max_iter: usize, tol: f64) -> PyResult<PyClusterAssignment> {
    clustering::kmeans(&points, k, seed, KMeansParams { max_iter, tol })
        .map(Into::into)
        .map_err(value_err)
}

/// Mean silhouette; returns `(score, degenerate)`.
#[pyfunction]
fn silhouette(points: Vec<Vec<f64>>, labels: Vec<usize>, k: usize) -> PyResult<(f64, bool)> {
    clustering::silhouette(&points, &labels, k)
        .map(|s| (s.score, s.degenerate))
        .map_err(value_err)
}

/// Returns `(chosen_k, {k: silhouette}, assignment)`.
#[pyfunction]
#[pyo3(signature = (points, k_min=2, k_max=None, seed=0))]
fn select_k(
    points: Vec<Vec<f64>>,
    k_min: usize,
    k_max: Option<usize>,
    seed: u64,
) -> PyResult<(usize, BTreeMap<usize, f64>, PyClusterAssignment)> {
    let k_max = k_max.unwrap_or_else(|| clustering::default_k_max(points.len()));
    let (report, best) =
        clustering::select_k(&points, k_min, k_max, seed, KMeansParams::default()).map_err(value_err)?;
    Ok((report.chosen_k, report.evaluated, best.into()))
}

/// Pattern graph JSON from theme timelines and message → claim labels.
#[pyfunction]
#[pyo3(signature = (timelines, labels, n_claims, threshold=0.01, mode="global", self_loops=false, summaries=None))]
fn pattern_graph(
    timelines: BTreeMap<String, Vec<String>>,
    labels: BTreeMap<String, usize>,
    n_claims: usize,
    threshold: f64,
    mode: &str,
    self_loops: bool,
    summaries: Option<Vec<String>>,
) -> PyResult<String> {
    let mode: NormalizationMode = mode.parse().map_err(value_err)?;
    let timelines: BTreeMap<String, ThemeTimeline> = timelines
        .into_iter()
        .map(|(theme, ordered_ids)| (theme.clone(), ThemeTimeline { theme, ordered_ids }))
        .collect();
    let counts = propagation::count_transitions(&timelines, &labels, n_claims).map_err(value_err)?;
    let probs = propagation::normalize_transitions(&counts, mode);
    let mut sizes = vec![0usize; n_claims];
    for &l in labels.values() {
        if l < n_claims {
            sizes[l] += 1;
        }
    }
    let nodes: Vec<ClaimNode> = (0..n_claims)
        .map(|id| ClaimNode {
            id,
            summary: summaries
                .as_ref()
                .and_then(|s| s.get(id).cloned())
                .unwrap_or_else(|| format!("claim {id}")),
            size: sizes[id],
            fallback: false,
            mean_stance: None,
        })
        .collect();
    let graph = propagation::build_pattern_graph(
        &counts,
        &probs,
        &nodes,
        threshold,
        GraphOptions {
            include_self_loops: self_loops,
        },
    )
    .map_err(value_err)?;
    Ok(String::from_utf8(propagation::export_graph(&graph, propagation::GraphFormat::Json)).expect("utf-8 JSON"))
}

/// Runs the offline pipeline; `config_json` may override any config key.
/// Returns `[(stage, "ran" | "skipped"), ...]`.
#[pyfunction]
#[pyo3(signature = (input, out_dir, config_json=None))]
fn run_pipeline(input: PathBuf, out_dir: PathBuf, config_json: Option<&str>) -> PyResult<Vec<(String, String)>> {
    let mut config: PipelineConfig = match config_json {
        Some(j) => serde_json::from_str(j).map_err(value_err)?,
        None => PipelineConfig::default(),
    };
    config.input = input;
    config.out_dir = out_dir;
    let report = Pipeline::new(config).run().map_err(value_err)?;
    Ok(report
        .stages
        .into_iter()
        .map(|s| (s.stage.name().to_string(), s.status.as_str().to_string()))
        .collect())
}

#[pyclass(name = "SwitchedLM", module = "infopattern_py", frozen)]
struct PySwitchedLM {
    inner: stance_lm::SwitchedLM,
}

fn parse_label(s: &str) -> PyResult<StanceLabel> {
    s.parse().map_err(value_err)
}

#[pymethods]
impl PySwitchedLM {
    /// Trains a base LM on `base_texts` (or the labeled texts) and then the
    /// switch on `(text, stance)` pairs.
    #[staticmethod]
    #[pyo3(signature = (labeled, base_texts=None, dim=32, window=3, epochs=20, lr=0.1, switch_epochs=200, switch_lr=0.1, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        labeled: Vec<(String, String)>,
        base_texts: Option<Vec<String>>,
        dim: usize,
        window: usize,
        epochs: usize,
        lr: f64,
        switch_epochs: usize,
        switch_lr: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let labeled: Vec<(String, StanceLabel)> = labeled
            .into_iter()
            .map(|(t, l)| Ok((t, parse_label(&l)?)))
            .collect::<PyResult<_>>()?;
        let texts = base_texts.unwrap_or_else(|| labeled.iter().map(|(t, _)| t.clone()).collect());
        let base_cfg = BaseTrainConfig {
            dim,
            window,
            epochs,
            lr,
            seed,
            ..Default::default()
        };
        let (base, _) = stance_lm::train_base_lm(&texts, base_cfg).map_err(value_err)?;
        let switch_cfg = SwitchTrainConfig {
            epochs: switch_epochs,
            lr: switch_lr,
            seed,
        };
        let (inner, _) = stance_lm::train_switch(base, &labeled, EpsilonMap::default(), switch_cfg).map_err(value_err)?;
        Ok(PySwitchedLM { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        stance_lm::SwitchedLM::load(&path)
            .map(|inner| PySwitchedLM { inner })
            .map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))
    }

    #[staticmethod]
    fn from_json(json: &str) -> PyResult<Self> {
        stance_lm::SwitchedLM::from_json(json)
            .map(|inner| PySwitchedLM { inner })
            .map_err(value_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn vocab(&self) -> Vec<String> {
        self.inner.base().vocab().tokens().to_vec()
    }

    fn epsilon(&self, label: &str) -> PyResult<f64> {
        Ok(self.inner.epsilon_map().get(parse_label(label)?))
    }

    fn log_likelihood(&self, text: &str, epsilon: f64) -> PyResult<f64> {
        self.inner.log_likelihood(text, epsilon).map_err(value_err)
    }

    /// Returns `(label, {label: average log-likelihood})`.
    fn stance_score(&self, text: &str) -> PyResult<(String, HashMap<String, f64>)> {
        let s = self.inner.stance_score(text).map_err(value_err)?;
        Ok((
            s.label.as_str().to_string(),
            s.scores.into_iter().map(|(l, v)| (l.as_str().to_string(), v)).collect(),
        ))
    }

    #[pyo3(signature = (prompt, epsilon, length=40, seed=0, temperature=1.0))]
    fn generate(&self, prompt: &str, epsilon: f64, length: usize, seed: u64, temperature: f64) -> PyResult<String> {
        if !(temperature.is_finite() && temperature >= 0.0) {
            return Err(PyValueError::new_err("temperature must be finite and nonnegative"));
        }
        Ok(self.inner.generate(prompt, epsilon, length, seed, temperature))
    }
}

/// Two-dialect stance corpus: `per_side` Left then `per_side` Right sentences.
#[pyfunction]
#[pyo3(signature = (per_side, seed=0))]
fn two_dialect_corpus(per_side: usize, seed: u64) -> Vec<(String, String)> {
    synthetic::two_dialect_corpus(per_side, seed)
        .into_iter()
        .map(|(t, l)| (t, l.as_str().to_string()))
        .collect()
}

#[pymodule]
fn infopattern_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyClusterAssignment>()?;
    m.add_class::<PySwitchedLM>()?;
    m.add_function(wrap_pyfunction!(hash_embed, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(silhouette, m)?)?;
    m.add_function(wrap_pyfunction!(select_k, m)?)?;
    m.add_function(wrap_pyfunction!(pattern_graph, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(two_dialect_corpus, m)?)?;
    Ok(())
}
