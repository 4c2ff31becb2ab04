use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use infopattern::corpus::{build_theme_timelines, Corpus, Message};
use infopattern::propagation::{
    build_pattern_graph, count_transitions, normalize_transitions, ClaimNode, GraphOptions, NormalizationMode,
};
use infopattern::synthetic::themed_corpus;

fn random_labels(corpus: &Corpus, n: usize, seed: u64) -> BTreeMap<String, usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corpus.ids().map(|id| (id.to_string(), rng.random_range(0..n))).collect()
}

/// Quadratic recount: for each message, find its immediate successor in the
/// same theme by scanning every other message.
fn oracle_counts(messages: &[Message], labels: &BTreeMap<String, usize>, n: usize) -> Vec<Vec<u64>> {
    let key = |m: &Message| (m.timestamp, m.id.clone());
    let mut counts = vec![vec![0u64; n]; n];
    for a in messages {
        let next = messages
            .iter()
            .filter(|b| b.theme == a.theme && key(b) > key(a))
            .min_by_key(|b| key(b));
        if let Some(b) = next {
            counts[labels[&a.id]][labels[&b.id]] += 1;
        }
    }
    counts
}

fn nodes(n: usize) -> Vec<ClaimNode> {
    (0..n)
        .map(|id| ClaimNode {
            id,
            summary: format!("claim {id}"),
            size: 1,
            fallback: false,
            mean_stance: None,
        })
        .collect()
}

/// Jitters timestamps so id order is not time order and some collide.
fn scrambled(corpus: &Corpus, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let messages = corpus
        .messages()
        .iter()
        .map(|m| {
            let mut m = m.clone();
            m.timestamp = m.timestamp - chrono::Duration::minutes(rng.random_range(0..40));
            m
        })
        .collect();
    Corpus::from_messages(messages).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn counts_match_quadratic_recount(seed in any::<u64>(), n in 1usize..6, themes in 1usize..4) {
        let corpus = scrambled(&themed_corpus(50, themes, 3, seed), seed ^ 1);
        let labels = random_labels(&corpus, n, seed ^ 2);
        let timelines = build_theme_timelines(&corpus);
        let t = count_transitions(&timelines, &labels, n).unwrap();
        let expected = oracle_counts(corpus.messages(), &labels, n);
        prop_assert_eq!(&t.counts, &expected);
        prop_assert_eq!(t.total, (50 - timelines.len()) as u64);
    }

    #[test]
    fn normalization_and_nesting(seed in any::<u64>(), n in 2usize..6) {
        let corpus = themed_corpus(50, 2, 3, seed);
        let labels = random_labels(&corpus, n, seed);
        let t = count_transitions(&build_theme_timelines(&corpus), &labels, n).unwrap();
        let global = normalize_transitions(&t, NormalizationMode::Global);
        let sum: f64 = global.probs.iter().flatten().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        let row = normalize_transitions(&t, NormalizationMode::Row);
        for (i, r) in row.probs.iter().enumerate() {
            let s: f64 = r.iter().sum();
            if t.counts[i].iter().any(|&c| c > 0) {
                prop_assert!((s - 1.0).abs() <= 1e-12);
            } else {
                prop_assert_eq!(s, 0.0);
            }
        }
        let opts = GraphOptions { include_self_loops: true };
        let mut previous: Option<BTreeSet<(usize, usize)>> = None;
        for step in 0..=10 {
            let threshold = step as f64 * 0.03;
            let g = build_pattern_graph(&t, &global, &nodes(n), threshold, opts).unwrap();
            let edges: BTreeSet<_> = g.edges.iter().map(|e| (e.src, e.dst)).collect();
            let oracle: BTreeSet<_> = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|&(i, j)| t.counts[i][j] >= 1 && global.probs[i][j] >= threshold)
                .collect();
            prop_assert_eq!(&edges, &oracle);
            if let Some(prev) = &previous {
                prop_assert!(edges.is_subset(prev));
            }
            previous = Some(edges);
        }
    }
}

#[test]
fn self_loops_excluded_by_default() {
    let corpus = themed_corpus(50, 1, 2, 9);
    let labels = random_labels(&corpus, 2, 9);
    let t = count_transitions(&build_theme_timelines(&corpus), &labels, 2).unwrap();
    let p = normalize_transitions(&t, NormalizationMode::Global);
    let g = build_pattern_graph(&t, &p, &nodes(2), 0.0, GraphOptions::default()).unwrap();
    assert!(g.edges.iter().all(|e| e.src != e.dst));
    assert!(!g.meta.self_loops);
    assert!(t.counts[0][0] + t.counts[1][1] > 0, "fixture should contain self-transitions");
}
