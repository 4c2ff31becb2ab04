//! Resumable end-to-end pipeline: ingest → cluster → summarize → graph.
//!
//! Every stage writes human-readable JSON into the output directory and
//! records the SHA-256 of its inputs, its parameters and its outputs in
//! `manifest.json`. A stage is skipped when its record matches the current
//! inputs and parameters and its outputs are still on disk unchanged.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::claims::{self, ClaimCluster, ClaimsError, OfflineSummarizer, RemoteSummarizer, Summarizer};
use crate::clustering::{self, ClusterAssignment, ClusteringError, KMeansParams, KSelectionReport};
use crate::corpus::{self, Corpus, CorpusError, Message, ThemeTimeline};
use crate::embedding::{self, EmbeddingError, EmbeddingProvider, EmbeddingVector, HashEmbedder, RemoteEmbedder};
use crate::propagation::{
    self, ClaimNode, GraphFormat, GraphOptions, NormalizationMode, PatternGraph, ProbabilityMatrix, PropagationError,
    TransitionMatrix,
};
use crate::remote::{HttpTransport, Transport};

pub const CORPUS_FILE: &str = "corpus.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.json";
pub const CLUSTERS_FILE: &str = "clusters.json";
pub const CLAIMS_FILE: &str = "claims.json";
pub const GRAPH_FILE: &str = "graph.json";
pub const GRAPH_DOT_FILE: &str = "graph.dot";
pub const BUNDLE_FILE: &str = "bundle.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Cluster,
    Summarize,
    Graph,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Ingest, Stage::Cluster, Stage::Summarize, Stage::Graph];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Cluster => "cluster",
            Stage::Summarize => "summarize",
            Stage::Graph => "graph",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("missing upstream artifact {0}; run the earlier stages first")]
    MissingArtifact(PathBuf),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Clustering(#[from] ClusteringError),
    #[error(transparent)]
    Claims(#[from] ClaimsError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
}

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct PipelineError {
    pub stage: Stage,
    #[source]
    pub source: StageError,
}

impl PipelineError {
    /// 1 usage, 2 data/validation, 3 remote-service failure.
    pub fn exit_code(&self) -> i32 {
        match &self.source {
            StageError::Config(_) => 1,
            StageError::Embedding(EmbeddingError::Transport(_))
            | StageError::Embedding(EmbeddingError::BadResponse(_))
            | StageError::Embedding(EmbeddingError::CountMismatch { .. }) => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SummarizerKind {
    #[default]
    Offline,
    Remote,
}

/// Effective pipeline parameters. Deserializes from a config file with every
/// key optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: PathBuf,
    pub out_dir: PathBuf,
    pub embedder: EmbedderKind,
    pub dim: usize,
    pub embed_url: Option<String>,
    pub batch_size: usize,
    pub k_min: usize,
    /// Defaults to `min(20, n - 1)`.
    pub k_max: Option<usize>,
    pub seed: u64,
    pub per_theme: bool,
    pub max_iter: usize,
    pub tol: f64,
    pub representatives: usize,
    pub summarizer: SummarizerKind,
    pub summarize_url: Option<String>,
    pub threshold: f64,
    pub mode: NormalizationMode,
    pub self_loops: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            input: PathBuf::from("messages.jsonl"),
            out_dir: PathBuf::from("out"),
            embedder: EmbedderKind::Hash,
            dim: embedding::DEFAULT_DIMENSION,
            embed_url: None,
            batch_size: embedding::DEFAULT_BATCH_SIZE,
            k_min: 2,
            k_max: None,
            seed: 42,
            per_theme: false,
            max_iter: clustering::DEFAULT_MAX_ITER,
            tol: clustering::DEFAULT_TOL,
            representatives: claims::DEFAULT_REPRESENTATIVES,
            summarizer: SummarizerKind::Offline,
            summarize_url: None,
            threshold: propagation::DEFAULT_THRESHOLD,
            mode: NormalizationMode::Global,
            self_loops: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, StageError> {
        let path = path.as_ref();
        let raw = fs::read_to_string(path).map_err(|source| StageError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&raw).map_err(|source| StageError::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), StageError> {
        let fail = |m: &str| Err(StageError::Config(m.to_string()));
        if self.dim < 2 {
            return fail("dim must be at least 2");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if self.k_min < 2 {
            return fail("k_min must be at least 2");
        }
        if matches!(self.k_max, Some(k) if k < self.k_min) {
            return fail("k_max must be at least k_min");
        }
        if self.max_iter == 0 || !(self.tol >= 0.0) {
            return fail("max_iter must be positive and tol nonnegative");
        }
        if self.representatives == 0 {
            return fail("representatives must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return fail("threshold must lie in [0, 1]");
        }
        if self.embedder == EmbedderKind::Remote && self.embed_url.is_none() {
            return fail("embedder \"remote\" requires embed_url");
        }
        if self.summarizer == SummarizerKind::Remote && self.summarize_url.is_none() {
            return fail("summarizer \"remote\" requires summarize_url");
        }
        Ok(())
    }

    fn path(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }
}

/// Output of the ingest stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestArtifact {
    pub messages: Vec<Message>,
    pub timelines: BTreeMap<String, ThemeTimeline>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    /// `"global"` or the theme name in per-theme mode.
    pub scope: String,
    pub report: KSelectionReport,
}

/// `clusters.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClustersArtifact {
    pub k: usize,
    pub seed: u64,
    pub labels: BTreeMap<String, usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    /// Absent when fewer than two clusters could be formed.
    pub silhouette: Option<f64>,
    pub embedder: String,
    pub dim: usize,
    #[serde(default)]
    pub selections: Vec<SelectionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeRecord {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub id: usize,
    pub summary: String,
    pub fallback: bool,
    pub size: usize,
    pub member_ids: Vec<String>,
    pub representatives: Vec<RepresentativeRecord>,
    pub centroid: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_stance: Option<f64>,
}

impl From<&ClaimRecord> for ClaimNode {
    fn from(c: &ClaimRecord) -> Self {
        ClaimNode {
            id: c.id,
            summary: c.summary.clone(),
            size: c.size,
            fallback: c.fallback,
            mean_stance: c.mean_stance,
        }
    }
}

/// `claims.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimsArtifact {
    pub prompt: String,
    pub claims: Vec<ClaimRecord>,
}

/// Everything the service needs to answer graph and claim queries at any threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphBundle {
    pub claims: Vec<ClaimRecord>,
    pub transitions: TransitionMatrix,
    pub probabilities: ProbabilityMatrix,
}

impl GraphBundle {
    pub fn claim_nodes(&self) -> Vec<ClaimNode> {
        self.claims.iter().map(ClaimNode::from).collect()
    }

    pub fn graph(&self, threshold: f64, options: GraphOptions) -> Result<PatternGraph, PropagationError> {
        propagation::build_pattern_graph(&self.transitions, &self.probabilities, &self.claim_nodes(), threshold, options)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, StageError> {
        read_json(path.as_ref())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs: BTreeMap<String, String>,
    pub params: Value,
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: Value,
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Skipped,
}

impl StageStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            StageStatus::Ran => "ran",
            StageStatus::Skipped => "skipped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageReport {
    pub stage: Stage,
    pub status: StageStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PipelineReport {
    pub stages: Vec<StageReport>,
}

impl PipelineReport {
    pub fn all_skipped(&self) -> bool {
        self.stages.iter().all(|s| s.status == StageStatus::Skipped)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn hash_file(path: &Path) -> Result<String, StageError> {
    let bytes = fs::read(path).map_err(|source| StageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(sha256_hex(&bytes))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, StageError> {
    if !path.exists() {
        return Err(StageError::MissingArtifact(path.to_path_buf()));
    }
    let raw = fs::read(path).map_err(|source| StageError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_slice(&raw).map_err(|source| StageError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), StageError> {
    fs::write(path, bytes).map_err(|source| StageError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), StageError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

pub struct Pipeline {
    config: PipelineConfig,
    transport: Arc<dyn Transport>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Pipeline {
            config,
            transport: Arc::new(HttpTransport),
        }
    }

    /// Replaces the HTTP transport used by remote providers.
    pub fn with_transport(mut self, transport: Arc<dyn Transport>) -> Self {
        self.transport = transport;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn manifest_path(&self) -> PathBuf {
        self.config.path(MANIFEST_FILE)
    }

    fn load_manifest(&self) -> Manifest {
        // An unreadable manifest only costs a full rerun.
        fs::read(self.manifest_path())
            .ok()
            .and_then(|b| serde_json::from_slice(&b).ok())
            .unwrap_or_default()
    }

    fn save_manifest(&self, manifest: &Manifest) -> Result<(), StageError> {
        write_json(&self.manifest_path(), manifest)
    }

    fn stage_inputs(&self, stage: Stage) -> Vec<PathBuf> {
        let c = &self.config;
        match stage {
            Stage::Ingest => vec![c.input.clone()],
            Stage::Cluster => vec![c.path(CORPUS_FILE)],
            Stage::Summarize => vec![c.path(CORPUS_FILE), c.path(EMBEDDINGS_FILE), c.path(CLUSTERS_FILE)],
            Stage::Graph => vec![c.path(CORPUS_FILE), c.path(CLAIMS_FILE)],
        }
    }

    fn stage_outputs(stage: Stage) -> &'static [&'static str] {
        match stage {
            Stage::Ingest => &[CORPUS_FILE],
            Stage::Cluster => &[EMBEDDINGS_FILE, CLUSTERS_FILE],
            Stage::Summarize => &[CLAIMS_FILE],
            Stage::Graph => &[GRAPH_FILE, GRAPH_DOT_FILE, BUNDLE_FILE],
        }
    }

    fn stage_params(&self, stage: Stage) -> Value {
        let c = &self.config;
        match stage {
            Stage::Ingest => serde_json::json!({}),
            Stage::Cluster => serde_json::json!({
                "embedder": c.embedder,
                "dim": c.dim,
                "embed_url": c.embed_url,
                "k_min": c.k_min,
                "k_max": c.k_max,
                "seed": c.seed,
                "per_theme": c.per_theme,
                "max_iter": c.max_iter,
                "tol": c.tol,
            }),
            Stage::Summarize => serde_json::json!({
                "representatives": c.representatives,
                "summarizer": c.summarizer,
                "summarize_url": c.summarize_url,
            }),
            Stage::Graph => serde_json::json!({
                "threshold": c.threshold,
                "mode": c.mode,
                "self_loops": c.self_loops,
            }),
        }
    }

    fn input_hashes(&self, stage: Stage) -> Result<BTreeMap<String, String>, StageError> {
        self.stage_inputs(stage)
            .into_iter()
            .map(|p| {
                if !p.exists() {
                    return Err(if stage == Stage::Ingest {
                        StageError::Io {
                            path: p.clone(),
                            source: io::Error::new(io::ErrorKind::NotFound, "input corpus not found"),
                        }
                    } else {
                        StageError::MissingArtifact(p.clone())
                    });
                }
                let key = p
                    .file_name()
                    .map(|f| f.to_string_lossy().into_owned())
                    .unwrap_or_else(|| p.display().to_string());
                Ok((key, hash_file(&p)?))
            })
            .collect()
    }

    fn is_fresh(&self, record: &StageRecord, inputs: &BTreeMap<String, String>, params: &Value, stage: Stage) -> bool {
        if &record.inputs != inputs || &record.params != params {
            return false;
        }
        Self::stage_outputs(stage).iter().all(|f| {
            let p = self.config.path(f);
            record.outputs.get(*f).is_some_and(|h| hash_file(&p).ok().as_deref() == Some(h.as_str()))
        })
    }

    /// Runs a single stage, skipping it when the manifest shows it is up to date.
    pub fn run_stage(&self, stage: Stage) -> Result<StageStatus, PipelineError> {
        let wrap = |source| PipelineError { stage, source };
        self.config.validate().map_err(wrap)?;
        fs::create_dir_all(&self.config.out_dir)
            .map_err(|source| StageError::Io {
                path: self.config.out_dir.clone(),
                source,
            })
            .map_err(wrap)?;
        let inputs = self.input_hashes(stage).map_err(wrap)?;
        let params = self.stage_params(stage);
        let mut manifest = self.load_manifest();
        if let Some(record) = manifest.stages.get(stage.name()) {
            if self.is_fresh(record, &inputs, &params, stage) {
                log::info!("{stage}: up to date, skipping");
                return Ok(StageStatus::Skipped);
            }
        }
        log::info!("{stage}: running");
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Cluster => self.cluster(),
            Stage::Summarize => self.summarize(),
            Stage::Graph => self.graph(),
        }
        .map_err(wrap)?;
        let outputs = Self::stage_outputs(stage)
            .iter()
            .map(|f| Ok((f.to_string(), hash_file(&self.config.path(f))?)))
            .collect::<Result<_, StageError>>()
            .map_err(wrap)?;
        manifest.config = serde_json::to_value(&self.config).expect("config serializes");
        manifest.stages.insert(
            stage.name().to_string(),
            StageRecord {
                inputs,
                params,
                outputs,
            },
        );
        self.save_manifest(&manifest).map_err(wrap)?;
        Ok(StageStatus::Ran)
    }

    /// Runs every stage in order.
    pub fn run(&self) -> Result<PipelineReport, PipelineError> {
        let mut report = PipelineReport::default();
        for stage in Stage::ALL {
            let status = self.run_stage(stage)?;
            report.stages.push(StageReport { stage, status });
        }
        Ok(report)
    }

    fn load_corpus_artifact(&self) -> Result<(Corpus, IngestArtifact), StageError> {
        let artifact: IngestArtifact = read_json(&self.config.path(CORPUS_FILE))?;
        let corpus = Corpus::from_messages(artifact.messages.clone())?;
        Ok((corpus, artifact))
    }

    fn ingest(&self) -> Result<(), StageError> {
        let corpus = corpus::load_messages(&self.config.input)?;
        let timelines = corpus::build_theme_timelines(&corpus);
        log::info!("ingest: {} messages in {} themes", corpus.len(), timelines.len());
        write_json(
            &self.config.path(CORPUS_FILE),
            &IngestArtifact {
                messages: corpus.messages().to_vec(),
                timelines,
            },
        )
    }

    fn embedder(&self) -> Box<dyn EmbeddingProvider> {
        let c = &self.config;
        match c.embedder {
            EmbedderKind::Hash => Box::new(HashEmbedder::new(c.dim).expect("validated")),
            EmbedderKind::Remote => {
                let mut e = RemoteEmbedder::new(
                    c.embed_url.clone().expect("validated"),
                    c.dim,
                    self.transport.clone(),
                );
                e.batch_size = c.batch_size;
                Box::new(e)
            }
        }
    }

    fn summarizer(&self) -> Box<dyn Summarizer> {
        match self.config.summarizer {
            SummarizerKind::Offline => Box::new(OfflineSummarizer),
            SummarizerKind::Remote => Box::new(RemoteSummarizer::new(
                self.config.summarize_url.clone().expect("validated"),
                self.transport.clone(),
            )),
        }
    }

    fn cluster(&self) -> Result<(), StageError> {
        let (corpus, artifact) = self.load_corpus_artifact()?;
        let embedder = self.embedder();
        let embeddings = embedding::embed_corpus(&corpus, embedder.as_ref())?;
        let params = KMeansParams {
            max_iter: self.config.max_iter,
            tol: self.config.tol,
        };
        let groups: Vec<(String, Vec<String>)> = if self.config.per_theme {
            artifact
                .timelines
                .values()
                .map(|t| {
                    let mut ids = t.ordered_ids.clone();
                    ids.sort();
                    (t.theme.clone(), ids)
                })
                .collect()
        } else {
            vec![("global".to_string(), corpus.ids().map(str::to_string).collect())]
        };

        let mut labels = BTreeMap::new();
        let mut centroids = Vec::new();
        let mut inertia = 0.0;
        let mut selections = Vec::new();
        let mut weighted_silhouette = 0.0;
        let mut silhouette_weight = 0usize;
        for (scope, ids) in groups {
            let points: Vec<&[f64]> = ids.iter().map(|id| embeddings[id].as_slice()).collect();
            let offset = centroids.len();
            let (assignment, score) = self.cluster_group(&points, params, &scope, &mut selections)?;
            for (id, l) in ids.iter().zip(&assignment.labels) {
                labels.insert(id.clone(), offset + l);
            }
            if let Some(s) = score {
                weighted_silhouette += s * ids.len() as f64;
                silhouette_weight += ids.len();
            }
            inertia += assignment.inertia;
            centroids.extend(assignment.centroids);
        }
        let silhouette = (silhouette_weight > 0).then(|| weighted_silhouette / silhouette_weight as f64);
        let clusters = ClustersArtifact {
            k: centroids.len(),
            seed: self.config.seed,
            labels,
            centroids,
            inertia,
            silhouette,
            embedder: embedder.name().to_string(),
            dim: embedder.dimension(),
            selections,
        };
        write_json(&self.config.path(EMBEDDINGS_FILE), &embeddings)?;
        write_json(&self.config.path(CLUSTERS_FILE), &clusters)
    }

    /// Clusters one group of points. Groups too small for a silhouette sweep
    /// (fewer than three points) become a single cluster.
    fn cluster_group(
        &self,
        points: &[&[f64]],
        params: KMeansParams,
        scope: &str,
        selections: &mut Vec<SelectionRecord>,
    ) -> Result<(ClusterAssignment, Option<f64>), StageError> {
        let n = points.len();
        if n == 0 {
            return Ok((
                ClusterAssignment {
                    k: 0,
                    seed: self.config.seed,
                    labels: Vec::new(),
                    centroids: Vec::new(),
                    inertia: 0.0,
                    inertia_history: Vec::new(),
                    iterations: 0,
                },
                None,
            ));
        }
        if n < 3 {
            return Ok((clustering::kmeans(points, 1, self.config.seed, params)?, None));
        }
        let k_max = self.config.k_max.unwrap_or_else(|| clustering::default_k_max(n));
        // Per-theme groups can be smaller than a global k_max.
        let k_max = if self.config.per_theme { k_max.min(n - 1) } else { k_max };
        let k_min = if self.config.per_theme { self.config.k_min.min(k_max) } else { self.config.k_min };
        let (report, best) = clustering::select_k(points, k_min, k_max, self.config.seed, params)?;
        let score = report.evaluated[&report.chosen_k];
        selections.push(SelectionRecord {
            scope: scope.to_string(),
            report,
        });
        Ok((best, Some(score)))
    }

    fn summarize(&self) -> Result<(), StageError> {
        let (corpus, _) = self.load_corpus_artifact()?;
        let embeddings: BTreeMap<String, EmbeddingVector> = read_json(&self.config.path(EMBEDDINGS_FILE))?;
        let clusters: ClustersArtifact = read_json(&self.config.path(CLUSTERS_FILE))?;
        let mut members: Vec<Vec<String>> = vec![Vec::new(); clusters.k];
        for (id, &l) in &clusters.labels {
            members
                .get_mut(l)
                .ok_or_else(|| StageError::Config(format!("label {l} of {id} exceeds k = {}", clusters.k)))?
                .push(id.clone());
        }
        let mut claim_clusters: Vec<ClaimCluster> = members
            .into_iter()
            .zip(&clusters.centroids)
            .enumerate()
            .map(|(cluster_id, (member_ids, centroid))| ClaimCluster {
                cluster_id,
                member_ids,
                centroid: centroid.clone(),
                representatives: Vec::new(),
                summary: String::new(),
                fallback: false,
            })
            .collect();
        let summarizer = self.summarizer();
        claims::summarize_clusters(
            &mut claim_clusters,
            &corpus,
            &embeddings,
            self.config.representatives,
            summarizer.as_ref(),
        )?;
        let records = claim_clusters
            .iter()
            .map(|c| ClaimRecord {
                id: c.cluster_id,
                summary: c.summary.clone(),
                fallback: c.fallback,
                size: c.size(),
                member_ids: c.member_ids.clone(),
                representatives: c
                    .representatives
                    .iter()
                    .map(|id| RepresentativeRecord {
                        id: id.clone(),
                        text: corpus.get(id).map(|m| m.text.clone()).unwrap_or_default(),
                    })
                    .collect(),
                centroid: c.centroid.clone(),
                mean_stance: claims::mean_stance(&c.member_ids, &corpus),
            })
            .collect();
        write_json(
            &self.config.path(CLAIMS_FILE),
            &ClaimsArtifact {
                prompt: claims::SUMMARY_PROMPT.to_string(),
                claims: records,
            },
        )
    }

    fn graph(&self) -> Result<(), StageError> {
        let (_, artifact) = self.load_corpus_artifact()?;
        let claims: ClaimsArtifact = read_json(&self.config.path(CLAIMS_FILE))?;
        let mut labels = BTreeMap::new();
        for c in &claims.claims {
            for id in &c.member_ids {
                labels.insert(id.clone(), c.id);
            }
        }
        let transitions = propagation::count_transitions(&artifact.timelines, &labels, claims.claims.len())?;
        let probabilities = propagation::normalize_transitions(&transitions, self.config.mode);
        let bundle = GraphBundle {
            claims: claims.claims,
            transitions,
            probabilities,
        };
        let graph = bundle.graph(
            self.config.threshold,
            GraphOptions {
                include_self_loops: self.config.self_loops,
            },
        )?;
        let mut json = propagation::export_graph(&graph, GraphFormat::Json);
        json.push(b'\n');
        write_bytes(&self.config.path(GRAPH_FILE), &json)?;
        write_bytes(&self.config.path(GRAPH_DOT_FILE), &propagation::export_graph(&graph, GraphFormat::Dot))?;
        write_json(&self.config.path(BUNDLE_FILE), &bundle)
    }
}
