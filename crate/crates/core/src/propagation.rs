//! Claim-to-claim transition counting, normalization and pattern graphs.
//!
//! A transition is a pair of consecutive messages within one theme's
//! timeline. Pairs never span themes. Self-transitions are counted in the
//! matrix but hidden from the graph unless requested.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::claims::ClaimCluster;
use crate::corpus::ThemeTimeline;

pub const DEFAULT_THRESHOLD: f64 = 0.01;
const DOT_LABEL_MAX: usize = 60;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PropagationError {
    #[error("message {0} has no cluster label")]
    Unlabeled(String),
    #[error("label {label} of message {id} is out of range for {n} claims")]
    LabelOutOfRange { id: String, label: usize, n: usize },
    #[error("dimension mismatch: matrix has {matrix} claims, {claims} claims given")]
    DimensionMismatch { matrix: usize, claims: usize },
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("unknown graph format \"{0}\" (expected json or dot)")]
    UnknownFormat(String),
    #[error("unknown normalization mode \"{0}\" (expected global or row)")]
    UnknownMode(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub n: usize,
    pub counts: Vec<Vec<u64>>,
    pub total: u64,
}

impl TransitionMatrix {
    pub fn zeros(n: usize) -> Self {
        TransitionMatrix {
            n,
            counts: vec![vec![0; n]; n],
            total: 0,
        }
    }

    fn merge(mut self, other: TransitionMatrix) -> Self {
        for (row, orow) in self.counts.iter_mut().zip(other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
        self.total += other.total;
        self
    }
}

/// Counts consecutive-pair transitions in every timeline, in parallel per theme.
pub fn count_transitions(
    timelines: &BTreeMap<String, ThemeTimeline>,
    labels: &BTreeMap<String, usize>,
    n: usize,
) -> Result<TransitionMatrix, PropagationError> {
    let label_of = |id: &str| -> Result<usize, PropagationError> {
        let &l = labels.get(id).ok_or_else(|| PropagationError::Unlabeled(id.to_string()))?;
        if l >= n {
            return Err(PropagationError::LabelOutOfRange {
                id: id.to_string(),
                label: l,
                n,
            });
        }
        Ok(l)
    };
    timelines
        .par_iter()
        .map(|(_, tl)| {
            let mut local = TransitionMatrix::zeros(n);
            let seq = tl
                .ordered_ids
                .iter()
                .map(|id| label_of(id))
                .collect::<Result<Vec<_>, _>>()?;
            for w in seq.windows(2) {
                local.counts[w[0]][w[1]] += 1;
                local.total += 1;
            }
            Ok(local)
        })
        .try_reduce(|| TransitionMatrix::zeros(n), |a, b| Ok(a.merge(b)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    /// Divide every count by the total number of transitions.
    #[default]
    Global,
    /// Divide each row by its row sum.
    Row,
}

impl NormalizationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NormalizationMode::Global => "global",
            NormalizationMode::Row => "row",
        }
    }
}

impl FromStr for NormalizationMode {
    type Err = PropagationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "global" => Ok(NormalizationMode::Global),
            "row" => Ok(NormalizationMode::Row),
            _ => Err(PropagationError::UnknownMode(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityMatrix {
    pub n: usize,
    pub probs: Vec<Vec<f64>>,
    pub mode: NormalizationMode,
    /// Set when there were no transitions to normalize.
    pub degenerate: bool,
}

pub fn normalize_transitions(t: &TransitionMatrix, mode: NormalizationMode) -> ProbabilityMatrix {
    let probs = match mode {
        NormalizationMode::Global => {
            let total = t.total as f64;
            t.counts
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|&c| if t.total == 0 { 0.0 } else { c as f64 / total })
                        .collect()
                })
                .collect()
        }
        NormalizationMode::Row => t
            .counts
            .iter()
            .map(|row| {
                let sum: u64 = row.iter().sum();
                row.iter()
                    .map(|&c| if sum == 0 { 0.0 } else { c as f64 / sum as f64 })
                    .collect()
            })
            .collect(),
    };
    ProbabilityMatrix {
        n: t.n,
        probs,
        mode,
        degenerate: t.total == 0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub threshold: f64,
    pub mode: NormalizationMode,
    pub n_claims: usize,
    pub total_transitions: u64,
    #[serde(default)]
    pub self_loops: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphNode {
    pub id: usize,
    pub summary: String,
    pub size: usize,
    pub fallback: bool,
    /// Mean member stance in [-1, 1] when any member is labeled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_stance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub src: usize,
    pub dst: usize,
    pub prob: f64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternGraph {
    pub meta: GraphMeta,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

/// What the graph needs to know about each claim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimNode {
    pub id: usize,
    pub summary: String,
    pub size: usize,
    pub fallback: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_stance: Option<f64>,
}

impl From<&ClaimCluster> for ClaimNode {
    fn from(c: &ClaimCluster) -> Self {
        ClaimNode {
            id: c.cluster_id,
            summary: c.summary.clone(),
            size: c.size(),
            fallback: c.fallback,
            mean_stance: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GraphOptions {
    pub include_self_loops: bool,
}

/// Keeps every claim as a node and every pair with `prob >= threshold` and
/// `count >= 1` as an edge.
pub fn build_pattern_graph(
    counts: &TransitionMatrix,
    probs: &ProbabilityMatrix,
    claims: &[ClaimNode],
    threshold: f64,
    options: GraphOptions,
) -> Result<PatternGraph, PropagationError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(PropagationError::InvalidThreshold(threshold));
    }
    if counts.n != claims.len() || probs.n != claims.len() {
        return Err(PropagationError::DimensionMismatch {
            matrix: counts.n.max(probs.n),
            claims: claims.len(),
        });
    }
    let mut edges = Vec::new();
    for i in 0..counts.n {
        for j in 0..counts.n {
            if i == j && !options.include_self_loops {
                continue;
            }
            let count = counts.counts[i][j];
            let prob = probs.probs[i][j];
            if count >= 1 && prob >= threshold {
                edges.push(GraphEdge {
                    src: claims[i].id,
                    dst: claims[j].id,
                    prob,
                    count,
                });
            }
        }
    }
    Ok(PatternGraph {
        meta: GraphMeta {
            threshold,
            mode: probs.mode,
            n_claims: claims.len(),
            total_transitions: counts.total,
            self_loops: options.include_self_loops,
        },
        nodes: claims
            .iter()
            .map(|c| GraphNode {
                id: c.id,
                summary: c.summary.clone(),
                size: c.size,
                fallback: c.fallback,
                mean_stance: c.mean_stance,
            })
            .collect(),
        edges,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphFormat {
    Json,
    Dot,
}

impl FromStr for GraphFormat {
    type Err = PropagationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(GraphFormat::Json),
            "dot" | "gv" => Ok(GraphFormat::Dot),
            _ => Err(PropagationError::UnknownFormat(s.to_string())),
        }
    }
}

fn dot_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' | '\r' => out.push(' '),
            c => out.push(c),
        }
    }
    out
}

/// Shortens to at most 60 characters, ending in "..." when cut.
pub fn truncate_label(s: &str) -> String {
    if s.chars().count() <= DOT_LABEL_MAX {
        s.to_string()
    } else {
        let mut t: String = s.chars().take(DOT_LABEL_MAX - 3).collect();
        t.push_str("...");
        t
    }
}

pub fn export_graph(graph: &PatternGraph, format: GraphFormat) -> Vec<u8> {
    match format {
        GraphFormat::Json => serde_json::to_vec_pretty(graph).expect("graph serializes"),
        GraphFormat::Dot => {
            let mut out = String::from("digraph pattern {\n  rankdir=LR;\n");
            for n in &graph.nodes {
                let _ = writeln!(
                    out,
                    "  {} [label=\"{}\", size={}];",
                    n.id,
                    dot_escape(&truncate_label(&n.summary)),
                    n.size
                );
            }
            for e in &graph.edges {
                let _ = writeln!(out, "  {} -> {} [label=\"{:.3}\", count={}];", e.src, e.dst, e.prob, e.count);
            }
            out.push_str("}\n");
            out.into_bytes()
        }
    }
}

/// Parses a format name and exports.
pub fn export_graph_as(graph: &PatternGraph, format: &str) -> Result<Vec<u8>, PropagationError> {
    Ok(export_graph(graph, format.parse()?))
}
