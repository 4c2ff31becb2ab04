//! Claim clusters: representative selection and claim summarization.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::clustering::{euclidean, ClusterAssignment};
use crate::corpus::{Corpus, Message};
use crate::embedding::EmbeddingVector;
use crate::remote::{endpoint, post_with_retry, RetryPolicy, Transport, TransportError};

/// First line of every summarization request.
pub const SUMMARY_PROMPT: &str = "Summarize the central idea of the following list of tweets";
pub const FALLBACK_PREFIX: &str = "[rep] ";
pub const DEFAULT_REPRESENTATIVES: usize = 10;
pub const DEFAULT_SUMMARY_MAX_TOKENS: u32 = 120;

#[derive(Debug, thiserror::Error)]
pub enum ClaimsError {
    #[error("no representatives to summarize")]
    NoRepresentatives,
    #[error("message {0} has no embedding")]
    MissingEmbedding(String),
    #[error("message {0} is not in the corpus")]
    MissingMessage(String),
    #[error("assignment covers {labels} points but {ids} ids were given")]
    IdCount { labels: usize, ids: usize },
}

#[derive(Debug, thiserror::Error)]
pub enum SummarizerError {
    #[error("summarizer is offline")]
    Offline,
    #[error("summarizer returned an empty response")]
    Empty,
    #[error("malformed summarizer response: {0}")]
    BadResponse(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClaimCluster {
    pub cluster_id: usize,
    /// Sorted ascending.
    pub member_ids: Vec<String>,
    pub centroid: Vec<f64>,
    /// Nearest-centroid first.
    pub representatives: Vec<String>,
    pub summary: String,
    /// True when `summary` came from the offline fallback.
    pub fallback: bool,
}

impl ClaimCluster {
    pub fn size(&self) -> usize {
        self.member_ids.len()
    }
}

/// Groups ids by cluster label. `ids[i]` is the id of the i-th clustered point.
pub fn clusters_from_assignment(
    ids: &[String],
    assignment: &ClusterAssignment,
) -> Result<Vec<ClaimCluster>, ClaimsError> {
    if ids.len() != assignment.labels.len() {
        return Err(ClaimsError::IdCount {
            labels: assignment.labels.len(),
            ids: ids.len(),
        });
    }
    let mut members: Vec<Vec<String>> = vec![Vec::new(); assignment.k];
    for (id, &l) in ids.iter().zip(&assignment.labels) {
        members[l].push(id.clone());
    }
    Ok(members
        .into_iter()
        .zip(&assignment.centroids)
        .enumerate()
        .map(|(cluster_id, (mut member_ids, centroid))| {
            member_ids.sort();
            ClaimCluster {
                cluster_id,
                member_ids,
                centroid: centroid.clone(),
                representatives: Vec::new(),
                summary: String::new(),
                fallback: false,
            }
        })
        .collect())
}

/// The `min(m, |members|)` members closest to the centroid, ascending distance, ties by id.
pub fn select_representatives(
    member_ids: &[String],
    centroid: &[f64],
    embeddings: &BTreeMap<String, EmbeddingVector>,
    m: usize,
) -> Result<Vec<String>, ClaimsError> {
    let mut scored = member_ids
        .iter()
        .map(|id| {
            let v = embeddings
                .get(id)
                .ok_or_else(|| ClaimsError::MissingEmbedding(id.clone()))?;
            Ok((euclidean(v.as_slice(), centroid), id))
        })
        .collect::<Result<Vec<_>, ClaimsError>>()?;
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    Ok(scored.into_iter().take(m.max(1)).map(|(_, id)| id.clone()).collect())
}

pub trait Summarizer: Send + Sync {
    fn summarize(&self, prompt: &str) -> Result<String, SummarizerError>;

    fn max_in_flight(&self) -> usize {
        1
    }
}

/// Never contacts a service; every claim uses the fallback.
#[derive(Debug, Default, Clone, Copy)]
pub struct OfflineSummarizer;

impl Summarizer for OfflineSummarizer {
    fn summarize(&self, _prompt: &str) -> Result<String, SummarizerError> {
        Err(SummarizerError::Offline)
    }
}

/// Client for `POST {base_url}/summarize`.
pub struct RemoteSummarizer {
    base_url: String,
    transport: Arc<dyn Transport>,
    pub max_tokens: u32,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
}

impl RemoteSummarizer {
    pub fn new(base_url: impl Into<String>, transport: Arc<dyn Transport>) -> Self {
        RemoteSummarizer {
            base_url: base_url.into(),
            transport,
            max_tokens: DEFAULT_SUMMARY_MAX_TOKENS,
            timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
            max_in_flight: 4,
        }
    }
}

impl Summarizer for RemoteSummarizer {
    fn summarize(&self, prompt: &str) -> Result<String, SummarizerError> {
        let body = serde_json::json!({ "prompt": prompt, "max_tokens": self.max_tokens });
        let url = endpoint(&self.base_url, "summarize");
        let raw = post_with_retry(self.transport.as_ref(), &url, &body, self.timeout, self.retry)?;
        raw.get("text")
            .and_then(|t| t.as_str())
            .map(str::to_string)
            .ok_or_else(|| SummarizerError::BadResponse(raw.to_string()))
    }

    fn max_in_flight(&self) -> usize {
        self.max_in_flight.max(1)
    }
}

/// Prompt line followed by one `- text` line per representative.
pub fn build_prompt(representatives: &[&Message]) -> String {
    let mut prompt = String::from(SUMMARY_PROMPT);
    for m in representatives {
        prompt.push_str("\n- ");
        // Keep one representative per line.
        prompt.push_str(&m.text.replace(['\n', '\r'], " "));
    }
    prompt
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClaimSummary {
    pub text: String,
    pub fallback: bool,
}

/// Summarizes a claim, falling back to the nearest-centroid message text when
/// the summarizer is offline, fails, or returns nothing.
pub fn summarize_claim(
    representatives: &[&Message],
    summarizer: &dyn Summarizer,
) -> Result<ClaimSummary, ClaimsError> {
    let first = representatives.first().ok_or(ClaimsError::NoRepresentatives)?;
    let prompt = build_prompt(representatives);
    let outcome = summarizer.summarize(&prompt).and_then(|s| {
        let s = s.trim();
        if s.is_empty() {
            Err(SummarizerError::Empty)
        } else {
            Ok(s.to_string())
        }
    });
    Ok(match outcome {
        Ok(text) => ClaimSummary { text, fallback: false },
        Err(e) => {
            if !matches!(e, SummarizerError::Offline) {
                log::warn!("summarizer failed, using representative text: {e}");
            }
            ClaimSummary {
                text: format!("{FALLBACK_PREFIX}{}", first.text.trim()),
                fallback: true,
            }
        }
    })
}

/// Fills representatives and summaries for every cluster, running up to
/// `summarizer.max_in_flight()` requests at once.
pub fn summarize_clusters(
    clusters: &mut [ClaimCluster],
    corpus: &Corpus,
    embeddings: &BTreeMap<String, EmbeddingVector>,
    m: usize,
    summarizer: &dyn Summarizer,
) -> Result<(), ClaimsError> {
    for c in clusters.iter_mut() {
        c.representatives = select_representatives(&c.member_ids, &c.centroid, embeddings, m)?;
    }
    let reps: Vec<Vec<&Message>> = clusters
        .iter()
        .map(|c| {
            c.representatives
                .iter()
                .map(|id| corpus.get(id).ok_or_else(|| ClaimsError::MissingMessage(id.clone())))
                .collect()
        })
        .collect::<Result<_, _>>()?;

    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<ClaimSummary, ClaimsError>>>> =
        Mutex::new((0..clusters.len()).map(|_| None).collect());
    let workers = summarizer.max_in_flight().clamp(1, clusters.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= reps.len() {
                    break;
                }
                let out = summarize_claim(&reps[i], summarizer);
                results.lock().unwrap()[i] = Some(out);
            });
        }
    });
    for (c, r) in clusters.iter_mut().zip(results.into_inner().unwrap()) {
        let s = r.expect("every cluster was summarized")?;
        c.summary = s.text;
        c.fallback = s.fallback;
    }
    Ok(())
}

/// Mean stance of the members that carry a label, on the [-1, 1] axis.
pub fn mean_stance(member_ids: &[String], corpus: &Corpus) -> Option<f64> {
    let values: Vec<f64> = member_ids
        .iter()
        .filter_map(|id| corpus.get(id)?.stance)
        .map(|s| crate::stance_lm::default_epsilon(s))
        .collect();
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{TimeZone, Utc};
    use serde_json::Value;

    fn message(id: &str, text: &str) -> Message {
        Message {
            id: id.into(),
            text: text.into(),
            timestamp: Utc.timestamp_opt(0, 0).unwrap(),
            theme: "t".into(),
            stance: None,
        }
    }

    fn vec1(x: f64) -> EmbeddingVector {
        // Unit vectors on a circle; distance to centroid [1, 0] grows with angle.
        EmbeddingVector::normalized(vec![x.cos(), x.sin()]).unwrap()
    }

    #[test]
    fn single_member_cluster() {
        let emb: BTreeMap<String, EmbeddingVector> = [("a".to_string(), vec1(0.3))].into_iter().collect();
        let reps = select_representatives(&["a".into()], &[1.0, 0.0], &emb, 10).unwrap();
        assert_eq!(reps, ["a"]);
    }

    #[test]
    fn nearest_three_match_full_sort() {
        let angles = [0.9, 0.1, 1.4, 0.5, 2.0, 0.05, 1.1, 0.7, 2.5, 0.3];
        let ids: Vec<String> = (0..10).map(|i| format!("m{i}")).collect();
        let emb: BTreeMap<String, EmbeddingVector> =
            ids.iter().zip(angles).map(|(id, a)| (id.clone(), vec1(a))).collect();
        let centroid = [1.0, 0.0];
        // Oracle: sort all distances, independent of select_representatives.
        let mut all: Vec<(f64, &String)> = ids
            .iter()
            .map(|id| {
                let v = emb[id].as_slice();
                (((v[0] - 1.0).powi(2) + v[1].powi(2)).sqrt(), id)
            })
            .collect();
        all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let expected: Vec<String> = all[..3].iter().map(|(_, id)| (*id).clone()).collect();
        assert_eq!(expected, ["m5", "m1", "m9"]);
        assert_eq!(select_representatives(&ids, &centroid, &emb, 3).unwrap(), expected);
    }

    #[test]
    fn equidistant_members_order_by_id() {
        let emb: BTreeMap<String, EmbeddingVector> =
            [("zeta".to_string(), vec1(0.4)), ("alpha".to_string(), vec1(-0.4))].into_iter().collect();
        let reps = select_representatives(&["zeta".into(), "alpha".into()], &[1.0, 0.0], &emb, 2).unwrap();
        assert_eq!(reps, ["alpha", "zeta"]);
    }

    #[test]
    fn offline_fallback() {
        let m = message("a", "vaccines are safe");
        let s = summarize_claim(&[&m], &OfflineSummarizer).unwrap();
        assert_eq!(s.text, "[rep] vaccines are safe");
        assert!(s.fallback);
        assert!(matches!(summarize_claim(&[], &OfflineSummarizer), Err(ClaimsError::NoRepresentatives)));
    }

    struct Echo {
        reply: String,
        prompts: Mutex<Vec<Value>>,
    }

    impl Transport for Echo {
        fn post_json(&self, _: &str, body: &Value, _: Duration) -> Result<Value, TransportError> {
            self.prompts.lock().unwrap().push(body.clone());
            Ok(serde_json::json!({ "text": self.reply }))
        }
    }

    #[test]
    fn remote_pass_through_and_prompt_format() {
        let transport = Arc::new(Echo {
            reply: "  X \n".into(),
            prompts: Mutex::new(Vec::new()),
        });
        let summarizer = RemoteSummarizer::new("http://sum", transport.clone());
        let a = message("a", "first tweet");
        let b = message("b", "second\ntweet");
        let s = summarize_claim(&[&a, &b], &summarizer).unwrap();
        assert_eq!(s, ClaimSummary { text: "X".into(), fallback: false });
        let sent = transport.prompts.lock().unwrap()[0].clone();
        assert_eq!(sent["max_tokens"], 120);
        let prompt = sent["prompt"].as_str().unwrap();
        assert_eq!(prompt, "Summarize the central idea of the following list of tweets\n- first tweet\n- second tweet");
        assert_eq!(prompt.lines().next().unwrap(), SUMMARY_PROMPT);
    }

    #[test]
    fn remote_failure_falls_back() {
        let transport = Arc::new(crate::remote::DenyTransport::default());
        let summarizer = RemoteSummarizer::new("http://sum", transport);
        let m = message("a", "text");
        let s = summarize_claim(&[&m], &summarizer).unwrap();
        assert!(s.fallback);
        assert_eq!(s.text, "[rep] text");

        let empty = Arc::new(Echo {
            reply: "   ".into(),
            prompts: Mutex::new(Vec::new()),
        });
        let s = summarize_claim(&[&m], &RemoteSummarizer::new("http://sum", empty)).unwrap();
        assert!(s.fallback);
    }
}
